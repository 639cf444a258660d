//! Token-count cosine similarity and the entity matchers built on it.

use std::collections::{BTreeMap, BTreeSet};

use crate::trace::{DomElement, EventListenerRecord, RequestRecord, ScriptRecord};

pub type TokenCounts = BTreeMap<String, u64>;

/// Lowercased alphanumeric runs.
pub fn word_tokens(text: &str) -> TokenCounts {
    let mut out = TokenCounts::new();
    for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        *out.entry(tok.to_lowercase()).or_insert(0) += 1;
    }
    out
}

/// Identifier/number runs (`[A-Za-z0-9_$]+`) plus every other
/// non-whitespace character as its own token. Case-sensitive.
pub fn code_tokens(text: &str) -> TokenCounts {
    let mut out = TokenCounts::new();
    let mut ident = String::new();
    let is_ident = |c: char| c.is_alphanumeric() || c == '_' || c == '$';
    for c in text.chars() {
        if is_ident(c) {
            ident.push(c);
            continue;
        }
        if !ident.is_empty() {
            *out.entry(std::mem::take(&mut ident)).or_insert(0) += 1;
        }
        if !c.is_whitespace() {
            *out.entry(c.to_string()).or_insert(0) += 1;
        }
    }
    if !ident.is_empty() {
        *out.entry(ident).or_insert(0) += 1;
    }
    out
}

/// Cosine of two count vectors. Two empty vectors are identical (1.0); an
/// empty and a non-empty vector are orthogonal (0.0).
pub fn cosine_counts(a: &TokenCounts, b: &TokenCounts) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: u128 = small
        .iter()
        .filter_map(|(t, x)| large.get(t).map(|y| u128::from(*x) * u128::from(*y)))
        .sum();
    let norm = |v: &TokenCounts| v.values().map(|x| u128::from(*x) * u128::from(*x)).sum::<u128>();
    let denom = ((norm(a) * norm(b)) as f64).sqrt();
    (dot as f64 / denom).clamp(0.0, 1.0)
}

pub fn text_similarity(a: &str, b: &str) -> f64 {
    cosine_counts(&word_tokens(a), &word_tokens(b))
}

pub fn script_similarity(a: &ScriptRecord, b: &ScriptRecord) -> f64 {
    cosine_counts(&code_tokens(&a.text), &code_tokens(&b.text))
}

/// Thresholds for entity matching. All are overridable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// URL, header and body similarity must each exceed this.
    pub request_similarity: f64,
    pub class_jaccard: f64,
    pub bounds_iou: f64,
    /// Script pairs at or above this similarity count as the same script.
    pub script_similarity: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            request_similarity: 0.95,
            class_jaccard: 0.8,
            bounds_iou: 0.5,
            script_similarity: 0.95,
        }
    }
}

pub fn serialize_headers(headers: &[(String, String)]) -> String {
    headers
        .iter()
        .map(|(n, v)| format!("{n}: {v}\n"))
        .collect()
}

/// Pre-tokenized request used by the matchers.
#[derive(Debug, Clone)]
pub struct RequestTokens {
    pub url: TokenCounts,
    pub headers: TokenCounts,
    pub body: TokenCounts,
}

impl RequestTokens {
    pub fn new(r: &RequestRecord) -> Self {
        Self {
            url: word_tokens(&r.url),
            headers: word_tokens(&serialize_headers(&r.headers)),
            body: word_tokens(&r.body),
        }
    }
}

/// The three similarities `requests_match` thresholds, in order url, headers, body.
pub fn request_similarities(a: &RequestRecord, b: &RequestRecord) -> [f64; 3] {
    let (ta, tb) = (RequestTokens::new(a), RequestTokens::new(b));
    [
        cosine_counts(&ta.url, &tb.url),
        cosine_counts(&ta.headers, &tb.headers),
        cosine_counts(&ta.body, &tb.body),
    ]
}

fn tokens_match(
    cfg: &MatchConfig,
    a: &RequestRecord,
    ta: &RequestTokens,
    b: &RequestRecord,
    tb: &RequestTokens,
) -> bool {
    a.initiator == b.initiator
        && a.method.eq_ignore_ascii_case(&b.method)
        && cosine_counts(&ta.url, &tb.url) > cfg.request_similarity
        && cosine_counts(&ta.headers, &tb.headers) > cfg.request_similarity
        && cosine_counts(&ta.body, &tb.body) > cfg.request_similarity
}

/// Same initiator and method, and URL, headers and body each more than 95%
/// similar.
pub fn requests_match(a: &RequestRecord, b: &RequestRecord) -> bool {
    requests_match_with(&MatchConfig::default(), a, b)
}

pub fn requests_match_with(cfg: &MatchConfig, a: &RequestRecord, b: &RequestRecord) -> bool {
    tokens_match(cfg, a, &RequestTokens::new(a), b, &RequestTokens::new(b))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    /// `(index in A, index in B)`
    pub pairs: Vec<(usize, usize)>,
    pub a_only: Vec<usize>,
    pub b_only: Vec<usize>,
}

fn by_time(reqs: &[RequestRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..reqs.len()).collect();
    idx.sort_by(|&i, &j| reqs[i].timestamp.total_cmp(&reqs[j].timestamp).then(i.cmp(&j)));
    idx
}

/// Greedy one-to-one matching. A-requests are visited in timestamp order and
/// each takes the earliest unmatched B-request that matches it.
pub fn align_requests(a: &[RequestRecord], b: &[RequestRecord]) -> Alignment {
    align_requests_with(&MatchConfig::default(), a, b)
}

pub fn align_requests_with(cfg: &MatchConfig, a: &[RequestRecord], b: &[RequestRecord]) -> Alignment {
    let ta: Vec<RequestTokens> = a.iter().map(RequestTokens::new).collect();
    let tb: Vec<RequestTokens> = b.iter().map(RequestTokens::new).collect();
    let order_b = by_time(b);
    let mut taken = vec![false; b.len()];
    let mut out = Alignment::default();
    for i in by_time(a) {
        let hit = order_b
            .iter()
            .copied()
            .find(|&j| !taken[j] && tokens_match(cfg, &a[i], &ta[i], &b[j], &tb[j]));
        match hit {
            Some(j) => {
                taken[j] = true;
                out.pairs.push((i, j));
            }
            None => out.a_only.push(i),
        }
    }
    out.b_only = order_b.into_iter().filter(|&j| !taken[j]).collect();
    out
}

/// Jaccard index of two class lists taken as sets; two empty sets score 1.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: BTreeSet<&String> = a.iter().collect();
    let sb: BTreeSet<&String> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Structural (tag, bounds overlap) and stylistic (class overlap) match.
/// Content hashes are session-specific and ignored.
pub fn elements_match(a: &DomElement, b: &DomElement) -> bool {
    elements_match_with(&MatchConfig::default(), a, b)
}

pub fn elements_match_with(cfg: &MatchConfig, a: &DomElement, b: &DomElement) -> bool {
    a.tag == b.tag
        && jaccard(&a.css_classes, &b.css_classes) >= cfg.class_jaccard
        && a.bounds.iou(&b.bounds) >= cfg.bounds_iou
}

/// Same event type, matching target element and byte-identical handler.
pub fn listeners_equal(a: &EventListenerRecord, b: &EventListenerRecord) -> bool {
    listeners_equal_with(&MatchConfig::default(), a, b)
}

pub fn listeners_equal_with(cfg: &MatchConfig, a: &EventListenerRecord, b: &EventListenerRecord) -> bool {
    a.event_type == b.event_type
        && a.handler_text == b.handler_text
        && elements_match_with(cfg, &a.target, &b.target)
}

/// Greedy one-to-one pairing of two lists in list order under `eq`.
/// Returns the unmatched indices of each side.
pub fn greedy_unmatched<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> (Vec<usize>, Vec<usize>) {
    let mut taken = vec![false; b.len()];
    let mut a_only = Vec::new();
    for (i, x) in a.iter().enumerate() {
        match (0..b.len()).find(|&j| !taken[j] && eq(x, &b[j])) {
            Some(j) => taken[j] = true,
            None => a_only.push(i),
        }
    }
    let b_only = (0..b.len()).filter(|&j| !taken[j]).collect();
    (a_only, b_only)
}
