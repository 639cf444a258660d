//! Browser bindings for the demo page. Every export takes and returns plain
//! strings or numbers; structured results are JSON text.

use num_bigint::BigUint;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use trackdiff::entropy::{scan_fields, Thresholds};
use trackdiff::rules::{field_outcomes, match_request, parse_list, Decision};
use trackdiff::similarity::{text_similarity, word_tokens};
use trackdiff::trace::{Direction, RequestRecord};

fn request(url: &str, cookie: &str) -> RequestRecord {
    let mut headers = vec![("accept".to_string(), "*/*".to_string())];
    if !cookie.trim().is_empty() {
        headers.push(("cookie".to_string(), cookie.trim().to_string()));
    }
    RequestRecord {
        id: "demo".into(),
        direction: Direction::Outgoing,
        initiator: String::new(),
        method: "GET".into(),
        url: url.trim().into(),
        headers,
        body: String::new(),
        response_status: None,
        response_body: None,
        response_size: None,
        response_content_type: None,
        timestamp: 0.0,
        partiness: None,
    }
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::Block => "block",
        Decision::Exempt => "exempt",
        Decision::StripField => "strip_field",
        Decision::NoMatch => "no_match",
    }
}

fn threshold(text: &str, default: BigUint) -> Result<BigUint, String> {
    let t = text.trim();
    if t.is_empty() {
        Ok(default)
    } else {
        t.parse().map_err(|_| format!("`{t}` is not a non-negative integer"))
    }
}

/// Decide a request against a filter list.
///
/// Returns `{decision, rule, stripped, rules, skipped}`; `stripped` lists
/// every field a `removeparam`/`cookie` rule would remove.
#[wasm_bindgen(js_name = matchRequest)]
pub fn match_request_json(list: &str, url: &str, page_url: &str, cookie: &str) -> String {
    let parsed = parse_list(list);
    let req = request(url, cookie);
    let outcome = match_request(&parsed.rules, &req, page_url);
    let stripped: Vec<Value> = field_outcomes(&parsed.rules, &req, page_url)
        .into_iter()
        .filter_map(|o| {
            let f = o.field?;
            Some(json!({
                "kind": f.kind.to_string(),
                "name": f.name,
                "rule": o.rule.map(|r| r.to_string()),
            }))
        })
        .collect();
    let skipped: Vec<Value> = parsed
        .skipped
        .iter()
        .map(|(line, e)| json!({ "line": line, "error": e.to_string() }))
        .collect();
    json!({
        "decision": decision_name(outcome.decision),
        "rule": outcome.rule.map(|r| r.to_string()),
        "stripped": stripped,
        "rules": parsed.rules.len(),
        "skipped": skipped,
    })
    .to_string()
}

/// Query parameters and cookies of one request with their value capacities.
///
/// Thresholds are decimal integers; empty strings take the defaults
/// (10^9 per field, 10^12 per server). Returns `{fields}` or `{error}`.
#[wasm_bindgen(js_name = scanUrl)]
pub fn scan_url_json(url: &str, cookie: &str, per_field: &str, per_server: &str) -> String {
    let defaults = Thresholds::default();
    let t = match (threshold(per_field, defaults.per_field), threshold(per_server, defaults.per_server)) {
        (Ok(per_field), Ok(per_server)) => Thresholds { per_field, per_server },
        (Err(e), _) | (_, Err(e)) => return json!({ "error": e }).to_string(),
    };
    let req = request(url, cookie);
    if req.host().is_none() {
        return json!({ "error": format!("`{}` is not an absolute URL", url.trim()) }).to_string();
    }
    let fields: Vec<Value> = scan_fields(&[&req], &t)
        .into_iter()
        .map(|s| {
            json!({
                "kind": s.field.kind.to_string(),
                "name": s.field.name,
                "value": s.field.value,
                "charset": s.field_entropy.charset_class.name(),
                "combinations": s.field_entropy.combinations.to_string(),
                "bits": s.field_entropy.bits(),
                "server_combinations": s.server_entropy.combinations.to_string(),
                "selected_by": s.selected_by.to_string(),
            })
        })
        .collect();
    json!({ "fields": fields }).to_string()
}

/// Cosine similarity of word-token counts.
#[wasm_bindgen(js_name = textSimilarity)]
pub fn text_similarity_value(a: &str, b: &str) -> f64 {
    text_similarity(a, b)
}

/// Token counts behind `textSimilarity`, as a JSON object.
#[wasm_bindgen(js_name = wordTokens)]
pub fn word_tokens_json(text: &str) -> String {
    json!(word_tokens(text)).to_string()
}
