use serde_json::Value;

use trackdiff_web::{match_request_json, scan_url_json, text_similarity_value, word_tokens_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

const LIST: &str = "! demo list
||tracker.example^$third-party
@@||tracker.example/consent.js$domain=shop.com
$removeparam=gclid
||shop.com^$cookie=_ga
example.com##.ad-banner
";

#[test]
fn block_exempt_and_strip() {
    let r = parse(match_request_json(LIST, "https://tracker.example/p.gif", "https://www.shop.com/", ""));
    assert_eq!(r["decision"], "block");
    assert_eq!(r["rule"], "||tracker.example^$third-party");
    assert_eq!(r["rules"], 4);
    assert_eq!(r["skipped"].as_array().unwrap().len(), 2);

    let r = parse(match_request_json(LIST, "https://tracker.example/consent.js", "https://www.shop.com/", ""));
    assert_eq!(r["decision"], "exempt");

    let r = parse(match_request_json(LIST, "https://tracker.example/p.gif", "https://tracker.example/", ""));
    assert_eq!(r["decision"], "no_match");

    let r = parse(match_request_json(
        LIST,
        "https://www.shop.com/item?id=4&gclid=abc123",
        "https://www.shop.com/",
        "_ga=GA1.2.3; lang=en",
    ));
    assert_eq!(r["decision"], "strip_field");
    let names: Vec<&str> = r["stripped"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gclid", "_ga"]);
}

#[test]
fn scan_reports_exact_capacities() {
    let r = parse(scan_url_json(
        "https://www.temu.com/landing.html?v=1.106.0&id=aZ3bY9&_x_ns_msclkid=eeec99c83e911b00583ffc4bc3e34060",
        "",
        "",
        "",
    ));
    let fields = r["fields"].as_array().unwrap();
    let get = |n: &str| fields.iter().find(|f| f["name"] == n).unwrap();
    assert_eq!(get("v")["combinations"], "100000");
    assert_eq!(get("id")["combinations"], "56800235584");
    assert_eq!(get("_x_ns_msclkid")["combinations"], "340282366920938463463374607431768211456");
    assert_eq!(get("_x_ns_msclkid")["bits"], 128);

    let strict = parse(scan_url_json(
        "https://a.example/?id=aZ3bY9",
        "",
        "100000000000",
        &"9".repeat(40),
    ));
    assert_eq!(strict["fields"][0]["selected_by"], "-");

    assert!(parse(scan_url_json("not a url", "", "", ""))["error"].is_string());
    assert!(parse(scan_url_json("https://a.example/?x=1", "", "-5", ""))["error"].is_string());
}

#[test]
fn cookie_fields_are_scanned() {
    let r = parse(scan_url_json("https://a.example/", "uid=0123456789abcdef0123", "", ""));
    let f = &r["fields"][0];
    assert_eq!(f["kind"], "cookie");
    assert_eq!(f["name"], "uid");
    assert_ne!(f["selected_by"], "-");
}

#[test]
fn similarity_and_tokens() {
    assert_eq!(text_similarity_value("Add to Cart", "add TO cart"), 1.0);
    assert_eq!(text_similarity_value("", ""), 1.0);
    assert_eq!(text_similarity_value("alpha", ""), 0.0);
    let s = text_similarity_value("a a b", "a b b");
    assert!((s - 0.8).abs() < 1e-12);
    let t = parse(word_tokens_json("Buy now, buy-later!"));
    assert_eq!(t["buy"], 2);
    assert_eq!(t["later"], 1);
}
