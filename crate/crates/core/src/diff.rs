//! Differentials between a vanilla trace and a blocked trace, and the
//! majority vote over the k² pairings of two run sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::appearance::{
    embedding_similarity, load_image, mask_from_images, DynamismMask, GridEmbedder, ScreenshotEmbedder,
    UnreadableImage, DEFAULT_PIXEL_TOLERANCE,
};
use crate::entropy::{self, Thresholds};
use crate::lexicon::Lexicons;
use crate::rules::AddressPattern;
use crate::similarity::{
    align_requests_with, cosine_counts, greedy_unmatched, listeners_equal_with, elements_match_with,
    script_similarity, text_similarity, MatchConfig, TokenCounts,
};
use crate::trace::{
    validate_pairing, DomElement, PairingMismatch, RequestRecord, TargetKind, TargetRef, Tag, Trace,
};

pub const DEFAULT_K: usize = 3;

/// Storage values shorter than this are too common to count as data flow.
pub const MIN_STORAGE_VALUE_LEN: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("pairing mismatch: {}", join_mismatches(.0))]
    PairingMismatch(Vec<PairingMismatch>),
    #[error(transparent)]
    UnreadableImage(#[from] UnreadableImage),
    #[error("expected {expected} pairwise diffs for k={k}, got {got}")]
    WrongPairCount { k: usize, expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("target pattern `{0}` does not parse")]
    BadTarget(String),
}

fn join_mismatches(m: &[PairingMismatch]) -> String {
    m.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// The ten trace components a diff covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Requests,
    Dom,
    Events,
    Listeners,
    Scripts,
    Appearance,
    Storage,
    Console,
    AdCount,
    Graph,
}

impl Component {
    pub const ALL: [Component; 10] = [
        Component::Requests,
        Component::Dom,
        Component::Events,
        Component::Listeners,
        Component::Scripts,
        Component::Appearance,
        Component::Storage,
        Component::Console,
        Component::AdCount,
        Component::Graph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Requests => "requests",
            Component::Dom => "dom",
            Component::Events => "events",
            Component::Listeners => "listeners",
            Component::Scripts => "scripts",
            Component::Appearance => "appearance",
            Component::Storage => "storage",
            Component::Console => "console",
            Component::AdCount => "ad_count",
            Component::Graph => "graph",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unit of a scalar; decides vote rounding and the "no change" value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Similarity,
    Count,
    Millis,
    Bytes,
    Pixels,
    Ratio,
}

impl ScalarKind {
    pub fn tolerance(self) -> f64 {
        match self {
            ScalarKind::Similarity | ScalarKind::Ratio => 0.01,
            ScalarKind::Count | ScalarKind::Bytes | ScalarKind::Pixels => 1.0,
            ScalarKind::Millis => 50.0,
        }
    }

    /// Value meaning "no difference".
    pub fn neutral(self) -> f64 {
        match self {
            ScalarKind::Similarity => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub value: f64,
    pub kind: ScalarKind,
}

impl Scalar {
    pub fn is_neutral(&self) -> bool {
        self.value == self.kind.neutral()
    }
}

/// Scalar keys per component.
pub mod key {
    // requests: target-level deltas (vanilla minus blocked counterpart)
    pub const TARGET_PARAMS: &str = "target_params_delta";
    pub const TARGET_URL_LEN: &str = "target_url_len_delta";
    pub const TARGET_RESP_SIZE: &str = "target_resp_size_delta";
    pub const TARGET_FP_MENTIONS: &str = "target_fp_mentions_delta";
    pub const TARGET_EVAL: &str = "target_eval_delta";
    pub const TARGET_STORAGE_VALUES: &str = "target_storage_values_delta";
    pub const TARGET_IDENTIFIER_FIELDS: &str = "target_identifier_fields_delta";
    pub const TARGET_API_STATIC: &str = "target_api_static_delta";
    // requests: page-level
    pub const LOST: &str = "lost";
    pub const TP_LOST: &str = "tp_lost";
    pub const FP_LOST: &str = "fp_lost";
    pub const GAINED: &str = "gained";
    pub const SENSITIVE_TP_DELTA: &str = "sensitive_tp_delta";
    pub const STORAGE_FLOW_DELTA: &str = "storage_flow_delta";
    // requests: the directly blocked set
    pub const BLOCKED_COUNT: &str = "blocked_count";
    pub const BLOCKED_RATIO: &str = "blocked_ratio";
    pub const BLOCKED_URL_LEN: &str = "blocked_url_len";
    pub const BLOCKED_PARAMS: &str = "blocked_params";
    pub const BLOCKED_AD_DIMENSIONS: &str = "blocked_ad_dimensions";
    pub const BLOCKED_SEMICOLONS: &str = "blocked_semicolons";
    pub const BLOCKED_SCREEN: &str = "blocked_screen";
    pub const BLOCKED_FP_MENTIONS: &str = "blocked_fp_mentions";
    pub const BLOCKED_FP: &str = "blocked_fp";
    pub const BLOCKED_TP: &str = "blocked_tp";
    pub const BLOCKED_AD_KEYWORDS: &str = "blocked_ad_keywords";
    pub const BLOCKED_STORAGE_VALUES: &str = "blocked_storage_values";
    pub const BLOCKED_API_STATIC: &str = "blocked_api_static";
    pub const BLOCKED_EVAL: &str = "blocked_eval";
    pub const BLOCKED_RESP_TOTAL: &str = "blocked_resp_total";
    pub const BLOCKED_RESP_AVG: &str = "blocked_resp_avg";
    pub const BLOCKED_SENSITIVE_FP: &str = "blocked_sensitive_fp";
    pub const BLOCKED_SENSITIVE_TP: &str = "blocked_sensitive_tp";
    // dom
    pub const UNMATCHED_TOTAL: &str = "unmatched_total";
    pub const ADS_IFRAMES_DELTA: &str = "ads_iframes_delta";
    pub const PIXELS_DELTA: &str = "pixels_delta";
    // events
    pub const LOAD_TIME_DELTA_MS: &str = "load_time_delta_ms";
    pub const BEFOREUNLOAD_DELTA: &str = "beforeunload_delta";
    pub const DOWNLOADS_DELTA: &str = "downloads_delta";
    pub const EVENTS_DELTA: &str = "events_delta";
    // listeners
    pub const LISTENERS_UNMATCHED: &str = "unmatched";
    pub const LISTENERS_SPECIFIC: &str = "specific";
    pub const LISTENERS_GENERIC: &str = "generic";
    pub const LISTENERS_SENSITIVE: &str = "sensitive";
    pub const LISTENERS_CRITICAL: &str = "critical";
    pub const LISTENERS_FUNCTIONAL: &str = "functional";
    // scripts
    pub const SCRIPTS_UNMATCHED: &str = "unmatched";
    pub const SCRIPT_TEXT_SIM: &str = "text_sim";
    // appearance
    pub const SCREENSHOT_SIM: &str = "screenshot_sim";
    pub const VIPS_SIM: &str = "vips_sim";
    pub const CORMER_SIM: &str = "cormer_sim";
    pub const MAIN_SIM: &str = "main_sim";
    pub const SECTION_SIM: &str = "section_sim";
    pub const TEXT_SIM: &str = "text_sim";
    pub const MAIN_TEXT_SIM: &str = "main_text_sim";
    pub const STYLE_SIM: &str = "style_sim";
    pub const STRUCTURE_SIM: &str = "structure_sim";
    pub const FONTS_DELTA: &str = "fonts_delta";
    pub const COLORS_DELTA: &str = "colors_delta";
    pub const HEIGHT_DELTA: &str = "height_delta";
    pub const CSS_FILES_DELTA: &str = "css_files_delta";
    // storage
    pub const LOCAL_DELTA: &str = "local_delta";
    pub const SESSION_DELTA: &str = "session_delta";
    pub const COOKIES_DELTA: &str = "cookies_delta";
    // console
    pub const LOGS_DELTA: &str = "logs_delta";
    // ad count
    pub const AD_COUNT_DELTA: &str = "ad_count_delta";
    // graph
    pub const FINGERPRINT_CALLS_DELTA: &str = "fingerprint_calls_delta";
    pub const TARGET_ANCESTOR_EVAL: &str = "target_ancestor_eval_delta";
    pub const TARGET_DEGREE: &str = "target_degree_delta";
    pub const TARGET_ANCESTOR_COUNT: &str = "target_ancestor_count_delta";
    pub const TARGET_FINGERPRINT: &str = "target_fingerprint_delta";

    /// `{tag}_unmatched`
    pub fn unmatched_tag(tag: &str) -> String {
        format!("{tag}_unmatched")
    }

    /// `{tag}_{class}_delta` with class one of small, large, sensitive.
    pub fn size_class(tag: &str, class: &str) -> String {
        format!("{tag}_{class}_delta")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiff {
    pub scalars: BTreeMap<String, Scalar>,
    pub items: BTreeSet<String>,
}

impl ComponentDiff {
    fn set(&mut self, key: impl Into<String>, kind: ScalarKind, value: f64) {
        self.scalars.insert(key.into(), Scalar { value, kind });
    }

    fn count(&mut self, key: impl Into<String>, value: usize) {
        self.set(key, ScalarKind::Count, value as f64);
    }

    fn count_delta(&mut self, key: impl Into<String>, a: usize, b: usize) {
        self.count(key, a.abs_diff(b));
    }

    pub fn is_neutral(&self) -> bool {
        self.items.is_empty() && self.scalars.values().all(Scalar::is_neutral)
    }
}

/// Difference between one vanilla run and one blocked run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDiff {
    pub target: TargetRef,
    /// Vanilla requests the target names.
    pub target_in_vanilla: usize,
    pub components: BTreeMap<Component, ComponentDiff>,
}

impl RawDiff {
    pub fn is_neutral(&self) -> bool {
        self.components.values().all(ComponentDiff::is_neutral)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusComponent {
    pub scalars: BTreeMap<String, Scalar>,
    /// Retained items with the number of pairs they occurred in.
    pub items: BTreeMap<String, usize>,
}

/// Majority-voted differential over k² pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusDiff {
    pub target: TargetRef,
    pub k: usize,
    pub target_in_vanilla: usize,
    pub components: BTreeMap<Component, ConsensusComponent>,
    /// Distinct items seen across all pairs, and how many survived the vote.
    pub items_seen: usize,
    pub items_kept: usize,
}

impl ConsensusDiff {
    pub fn component(&self, c: Component) -> Option<&ConsensusComponent> {
        self.components.get(&c)
    }

    /// Runs disagreed so much that most observed differences were voted out.
    pub fn low_confidence(&self) -> bool {
        self.items_seen >= 4 && self.items_kept * 4 < self.items_seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffConfig {
    pub matching: MatchConfig,
    pub pixel_tolerance: u8,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            matching: MatchConfig::default(),
            pixel_tolerance: DEFAULT_PIXEL_TOLERANCE,
        }
    }
}

/// Everything `diff_pair` needs besides the two traces.
pub struct DiffContext {
    pub config: DiffConfig,
    pub lexicons: Lexicons,
    pub thresholds: Thresholds,
    pub embedder: Box<dyn ScreenshotEmbedder>,
}

impl Default for DiffContext {
    fn default() -> Self {
        Self {
            config: DiffConfig::default(),
            lexicons: Lexicons::default(),
            thresholds: Thresholds::default(),
            embedder: Box::new(GridEmbedder),
        }
    }
}

impl fmt::Debug for DiffContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffContext")
            .field("config", &self.config)
            .field("thresholds", &self.thresholds)
            .finish_non_exhaustive()
    }
}

/// Compiled target: the address pattern plus the field it names.
pub struct TargetMatcher<'a> {
    target: &'a TargetRef,
    pattern: AddressPattern,
}

impl<'a> TargetMatcher<'a> {
    pub fn new(target: &'a TargetRef) -> Result<Self, DiffError> {
        let pattern =
            AddressPattern::parse(&target.url_pattern).map_err(|_| DiffError::BadTarget(target.url_pattern.clone()))?;
        Ok(Self { target, pattern })
    }

    pub fn matches_url(&self, url: &str) -> bool {
        self.pattern.matches(url)
    }

    /// The request is the target, or carries the target field.
    pub fn matches(&self, r: &RequestRecord) -> bool {
        if !r.is_outgoing() || !self.pattern.matches(&r.url) {
            return false;
        }
        match (self.target.kind, &self.target.field) {
            (TargetKind::Field, Some(f)) => r.fields().iter().any(|x| x.kind == f.kind && x.name == f.name),
            _ => true,
        }
    }

    /// Blocked by the capture tool: status 403 on a request-level target.
    pub fn terminated(&self, r: &RequestRecord) -> bool {
        self.target.kind == TargetKind::Request && r.response_status == Some(403) && self.pattern.matches(&r.url)
    }
}

/// Number of vanilla requests the target names.
pub fn target_occurrences(trace: &Trace, target: &TargetRef) -> Result<usize, DiffError> {
    let m = TargetMatcher::new(target)?;
    Ok(trace.requests.iter().filter(|r| m.matches(r)).count())
}

pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Suffix `#n` so repeated keys stay distinct items.
fn numbered(prefix: &str, keys: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    keys.into_iter()
        .map(|k| {
            let n = seen.entry(k.clone()).or_insert(0);
            *n += 1;
            format!("{prefix}:{k}#{n}")
        })
        .collect()
}

fn count_substr(hay: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    hay.matches(needle).count()
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// Occurrences of `word` not embedded in a longer identifier.
pub fn count_word(hay: &str, word: &str) -> usize {
    let bytes = hay.as_bytes();
    hay.match_indices(word)
        .filter(|(i, _)| {
            let before = *i == 0 || !is_word_byte(bytes[i - 1]);
            let end = i + word.len();
            let after = end >= bytes.len() || !is_word_byte(bytes[end]);
            before && after
        })
        .count()
}

/// True if the text contains a `WxH` token such as `300x250`.
pub fn has_dimension(text: &str) -> bool {
    let b = text.as_bytes();
    let digits_before = |end: usize| b[..end].iter().rev().take_while(|c| c.is_ascii_digit()).count();
    let digits_after = |start: usize| b[start..].iter().take_while(|c| c.is_ascii_digit()).count();
    for (i, &c) in b.iter().enumerate() {
        if c != b'x' && c != b'X' {
            continue;
        }
        let l = digits_before(i);
        let r = digits_after(i + 1);
        if (2..=4).contains(&l) && (2..=4).contains(&r) {
            let before_ok = i - l == 0 || !b[i - l - 1].is_ascii_alphanumeric();
            let end = i + 1 + r;
            let after_ok = end >= b.len() || !b[end].is_ascii_alphanumeric();
            if before_ok && after_ok {
                return true;
            }
        }
    }
    false
}

fn response_len(r: &RequestRecord) -> u64 {
    r.response_size
        .or_else(|| r.response_body.as_ref().map(|b| b.len() as u64))
        .unwrap_or(0)
}

/// Per-trace helpers for request statistics.
struct RequestStats<'a> {
    storage_values: Vec<&'a str>,
    site: String,
    lex: &'a Lexicons,
    thresholds: &'a Thresholds,
}

impl<'a> RequestStats<'a> {
    fn new(trace: &'a Trace, ctx: &'a DiffContext) -> Self {
        let mut storage_values: Vec<&str> = trace
            .storage
            .values()
            .filter(|v| v.chars().count() >= MIN_STORAGE_VALUE_LEN)
            .collect();
        storage_values.sort_unstable();
        storage_values.dedup();
        Self {
            storage_values,
            site: trace.page_site(),
            lex: &ctx.lexicons,
            thresholds: &ctx.thresholds,
        }
    }

    /// URL, decoded query values, header values and body.
    fn outbound_text(r: &RequestRecord) -> String {
        let mut s = r.url.clone();
        for f in r.query_fields() {
            s.push('\n');
            s.push_str(&f.value);
        }
        for (_, v) in &r.headers {
            s.push('\n');
            s.push_str(v);
        }
        s.push('\n');
        s.push_str(&r.body);
        s
    }

    fn storage_values_in(&self, r: &RequestRecord) -> usize {
        let text = Self::outbound_text(r);
        self.storage_values.iter().filter(|v| text.contains(*v)).count()
    }

    fn identifier_fields(&self, r: &RequestRecord) -> usize {
        r.fields()
            .iter()
            .filter(|f| entropy::is_identifier_like(&f.value, self.thresholds))
            .count()
    }

    fn is_sensitive(&self, r: &RequestRecord) -> bool {
        self.storage_values_in(r) > 0 || self.identifier_fields(r) > 0
    }

    fn fp_mentions(&self, r: &RequestRecord) -> usize {
        let text = format!("{}\n{}", r.url, r.body).to_lowercase();
        count_substr(&text, &self.site)
    }

    fn eval_count(r: &RequestRecord) -> usize {
        r.response_body.as_deref().map_or(0, |b| count_word(b, "eval"))
    }

    fn api_static(&self, r: &RequestRecord) -> usize {
        let Some(body) = r.response_body.as_deref() else {
            return 0;
        };
        self.lex.fingerprint_apis.iter().map(|api| count_word(body, api)).sum()
    }

    fn ad_keywords(&self, r: &RequestRecord) -> usize {
        crate::similarity::word_tokens(&r.url)
            .iter()
            .filter(|(t, _)| self.lex.ad_keywords.contains(*t))
            .map(|(_, n)| *n as usize)
            .sum()
    }

    /// Per-request tracking-relevant quantities, summed over `reqs`.
    fn target_profile(&self, reqs: &[&RequestRecord]) -> [f64; 8] {
        let mut out = [0.0; 8];
        for r in reqs {
            out[0] += r.query_fields().len() as f64;
            out[1] += r.url.len() as f64;
            out[2] += response_len(r) as f64;
            out[3] += self.fp_mentions(r) as f64;
            out[4] += Self::eval_count(r) as f64;
            out[5] += self.storage_values_in(r) as f64;
            out[6] += self.identifier_fields(r) as f64;
            out[7] += self.api_static(r) as f64;
        }
        out
    }
}

/// Which requests were lost, gained and paired, with the blocked target
/// resolved on the vanilla side.
struct RequestAlignment<'v, 'b> {
    vanilla_outgoing: Vec<&'v RequestRecord>,
    blocked_effective: Vec<&'b RequestRecord>,
    lost: Vec<&'v RequestRecord>,
    gained: Vec<&'b RequestRecord>,
    target_v: Vec<&'v RequestRecord>,
    target_b: Vec<&'b RequestRecord>,
    direct_blocked: Vec<&'v RequestRecord>,
}

fn align<'v, 'b>(
    vanilla: &'v Trace,
    blocked: &'b Trace,
    m: &TargetMatcher<'_>,
    cfg: &MatchConfig,
) -> RequestAlignment<'v, 'b> {
    let vanilla_outgoing: Vec<&RequestRecord> = vanilla.requests.iter().filter(|r| r.is_outgoing()).collect();
    let blocked_effective: Vec<&RequestRecord> = blocked
        .requests
        .iter()
        .filter(|r| r.is_outgoing() && !m.terminated(r))
        .collect();

    let is_target_v: Vec<bool> = vanilla_outgoing.iter().map(|r| m.matches(r)).collect();
    let mut v_pool: Vec<usize> = (0..vanilla_outgoing.len()).collect();
    let mut b_pool: Vec<usize> = (0..blocked_effective.len()).collect();
    // vanilla index -> blocked index
    let mut counterpart: BTreeMap<usize, usize> = BTreeMap::new();

    if m.target.kind == TargetKind::Field {
        // The stripped request differs from its vanilla twin by design; pair
        // on method and query-less URL before fuzzy alignment.
        let mut taken = vec![false; blocked_effective.len()];
        for i in (0..vanilla_outgoing.len()).filter(|&i| is_target_v[i]) {
            let v = vanilla_outgoing[i];
            let hit = (0..blocked_effective.len()).find(|&j| {
                let b = blocked_effective[j];
                !taken[j] && b.method.eq_ignore_ascii_case(&v.method) && b.url_key() == v.url_key() && m.matches_url(&b.url)
            });
            if let Some(j) = hit {
                taken[j] = true;
                counterpart.insert(i, j);
            }
        }
        v_pool.retain(|i| !counterpart.contains_key(i));
        b_pool.retain(|j| !taken[*j]);
    }

    let a: Vec<RequestRecord> = v_pool.iter().map(|&i| vanilla_outgoing[i].clone()).collect();
    let b: Vec<RequestRecord> = b_pool.iter().map(|&j| blocked_effective[j].clone()).collect();
    let al = align_requests_with(cfg, &a, &b);
    for (x, y) in &al.pairs {
        counterpart.insert(v_pool[*x], b_pool[*y]);
    }
    let mut lost_idx: Vec<usize> = al.a_only.iter().map(|&x| v_pool[x]).collect();
    lost_idx.sort_unstable();
    let mut gained_idx: Vec<usize> = al.b_only.iter().map(|&y| b_pool[y]).collect();
    gained_idx.sort_unstable();

    let target_idx: Vec<usize> = (0..vanilla_outgoing.len()).filter(|&i| is_target_v[i]).collect();
    RequestAlignment {
        lost: lost_idx.iter().map(|&i| vanilla_outgoing[i]).collect(),
        gained: gained_idx.iter().map(|&j| blocked_effective[j]).collect(),
        target_v: target_idx.iter().map(|&i| vanilla_outgoing[i]).collect(),
        target_b: target_idx
            .iter()
            .filter_map(|i| counterpart.get(i).map(|&j| blocked_effective[j]))
            .collect(),
        direct_blocked: lost_idx
            .iter()
            .filter(|&&i| is_target_v[i])
            .map(|&i| vanilla_outgoing[i])
            .collect(),
        vanilla_outgoing,
        blocked_effective,
    }
}

fn request_key(r: &RequestRecord) -> String {
    format!("{} {}", r.method.to_ascii_uppercase(), r.url_key())
}

fn requests_component(
    al: &RequestAlignment<'_, '_>,
    vs: &RequestStats<'_>,
    bs: &RequestStats<'_>,
) -> ComponentDiff {
    let mut c = ComponentDiff::default();

    let pv = vs.target_profile(&al.target_v);
    let pb = bs.target_profile(&al.target_b);
    let keys = [
        (key::TARGET_PARAMS, ScalarKind::Count),
        (key::TARGET_URL_LEN, ScalarKind::Count),
        (key::TARGET_RESP_SIZE, ScalarKind::Bytes),
        (key::TARGET_FP_MENTIONS, ScalarKind::Count),
        (key::TARGET_EVAL, ScalarKind::Count),
        (key::TARGET_STORAGE_VALUES, ScalarKind::Count),
        (key::TARGET_IDENTIFIER_FIELDS, ScalarKind::Count),
        (key::TARGET_API_STATIC, ScalarKind::Count),
    ];
    for (i, (k, kind)) in keys.into_iter().enumerate() {
        c.set(k, kind, (pv[i] - pb[i]).abs());
    }

    c.count(key::LOST, al.lost.len());
    c.count(key::TP_LOST, al.lost.iter().filter(|r| r.is_third_party()).count());
    c.count(key::FP_LOST, al.lost.iter().filter(|r| !r.is_third_party()).count());
    c.count(key::GAINED, al.gained.len());
    let sensitive_tp = |reqs: &[&RequestRecord], s: &RequestStats<'_>| {
        reqs.iter().filter(|r| r.is_third_party() && s.is_sensitive(r)).count()
    };
    c.count_delta(
        key::SENSITIVE_TP_DELTA,
        sensitive_tp(&al.vanilla_outgoing, vs),
        sensitive_tp(&al.blocked_effective, bs),
    );
    let flows = |reqs: &[&RequestRecord], s: &RequestStats<'_>| reqs.iter().map(|r| s.storage_values_in(r)).sum::<usize>();
    c.count_delta(
        key::STORAGE_FLOW_DELTA,
        flows(&al.vanilla_outgoing, vs),
        flows(&al.blocked_effective, bs),
    );

    let d = &al.direct_blocked;
    let n = d.len();
    c.count(key::BLOCKED_COUNT, n);
    let ratio = if al.vanilla_outgoing.is_empty() {
        0.0
    } else {
        n as f64 / al.vanilla_outgoing.len() as f64
    };
    c.set(key::BLOCKED_RATIO, ScalarKind::Ratio, ratio);
    c.count(key::BLOCKED_URL_LEN, d.iter().map(|r| r.url.len()).sum());
    c.count(key::BLOCKED_PARAMS, d.iter().map(|r| r.query_fields().len()).sum());
    c.count(key::BLOCKED_AD_DIMENSIONS, d.iter().filter(|r| has_dimension(&r.url)).count());
    c.count(
        key::BLOCKED_SEMICOLONS,
        d.iter().map(|r| count_substr(&r.url, ";") + count_substr(&r.body, ";")).sum(),
    );
    c.count(
        key::BLOCKED_SCREEN,
        d.iter()
            .map(|r| count_substr(&format!("{}\n{}", r.url, r.body).to_lowercase(), "screen"))
            .sum(),
    );
    c.count(key::BLOCKED_FP_MENTIONS, d.iter().map(|r| vs.fp_mentions(r)).sum());
    c.count(key::BLOCKED_FP, d.iter().filter(|r| !r.is_third_party()).count());
    c.count(key::BLOCKED_TP, d.iter().filter(|r| r.is_third_party()).count());
    c.count(key::BLOCKED_AD_KEYWORDS, d.iter().map(|r| vs.ad_keywords(r)).sum());
    c.count(key::BLOCKED_STORAGE_VALUES, d.iter().map(|r| vs.storage_values_in(r)).sum());
    c.count(key::BLOCKED_API_STATIC, d.iter().map(|r| vs.api_static(r)).sum());
    c.count(key::BLOCKED_EVAL, d.iter().map(|r| RequestStats::eval_count(r)).sum());
    let total: u64 = d.iter().map(|r| response_len(r)).sum();
    c.set(key::BLOCKED_RESP_TOTAL, ScalarKind::Bytes, total as f64);
    c.set(
        key::BLOCKED_RESP_AVG,
        ScalarKind::Bytes,
        if n == 0 { 0.0 } else { total as f64 / n as f64 },
    );
    c.count(
        key::BLOCKED_SENSITIVE_FP,
        d.iter().filter(|r| !r.is_third_party() && vs.is_sensitive(r)).count(),
    );
    c.count(
        key::BLOCKED_SENSITIVE_TP,
        d.iter().filter(|r| r.is_third_party() && vs.is_sensitive(r)).count(),
    );

    c.items.extend(numbered("lost", al.lost.iter().map(|r| request_key(r))));
    c.items.extend(numbered("gained", al.gained.iter().map(|r| request_key(r))));
    c
}

fn element_key(e: &DomElement) -> String {
    let mut classes = e.css_classes.clone();
    classes.sort();
    format!("{}.{}", e.tag, classes.join("."))
}

/// Media tags carrying the small/large/sensitive size classes.
pub const SIZED_TAGS: [Tag; 3] = [Tag::Video, Tag::Image, Tag::Iframe];

fn size_class(e: &DomElement, lex: &Lexicons) -> &'static str {
    if e.bounds.area() < 10.0 {
        "small"
    } else if lex.is_ad_size(e.bounds.width, e.bounds.height) {
        "sensitive"
    } else {
        "large"
    }
}

fn dom_component(v: &Trace, b: &Trace, ctx: &DiffContext) -> ComponentDiff {
    let cfg = &ctx.config.matching;
    let (v_only, b_only) = greedy_unmatched(&v.dom, &b.dom, |x, y| elements_match_with(cfg, x, y));
    let mut c = ComponentDiff::default();
    let unmatched: Vec<&DomElement> = v_only
        .iter()
        .map(|&i| &v.dom[i])
        .chain(b_only.iter().map(|&j| &b.dom[j]))
        .collect();
    c.count(key::UNMATCHED_TOTAL, unmatched.len());
    for tag in Tag::TRACKED {
        c.count(key::unmatched_tag(tag.as_str()), unmatched.iter().filter(|e| e.tag == tag).count());
    }
    for tag in SIZED_TAGS {
        for class in ["small", "large", "sensitive"] {
            let n = |t: &Trace| {
                t.dom
                    .iter()
                    .filter(|e| e.tag == tag && size_class(e, &ctx.lexicons) == class)
                    .count()
            };
            c.count_delta(key::size_class(tag.as_str(), class), n(v), n(b));
        }
    }
    let ads = |t: &Trace| {
        t.dom
            .iter()
            .filter(|e| e.tag == Tag::Iframe && e.inner_text.trim().is_empty())
            .count()
    };
    c.count_delta(key::ADS_IFRAMES_DELTA, ads(v), ads(b));
    let pixels = |t: &Trace| {
        t.dom
            .iter()
            .filter(|e| e.tag == Tag::Image && e.bounds.width <= 1.0 && e.bounds.height <= 1.0)
            .count()
    };
    c.count_delta(key::PIXELS_DELTA, pixels(v), pixels(b));
    c.items.extend(numbered("lost", v_only.iter().map(|&i| element_key(&v.dom[i]))));
    c.items.extend(numbered("gained", b_only.iter().map(|&j| element_key(&b.dom[j]))));
    c
}

fn multiset(names: impl Iterator<Item = String>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for n in names {
        *m.entry(n).or_insert(0) += 1;
    }
    m
}

/// `(only in a, only in b)` with multiplicity.
fn multiset_diff(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> (Vec<String>, Vec<String>) {
    let mut only_a = Vec::new();
    let mut only_b = Vec::new();
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let (x, y) = (a.get(k).copied().unwrap_or(0), b.get(k).copied().unwrap_or(0));
        only_a.extend(std::iter::repeat_n(k.clone(), x.saturating_sub(y)));
        only_b.extend(std::iter::repeat_n(k.clone(), y.saturating_sub(x)));
    }
    (only_a, only_b)
}

fn events_component(v: &Trace, b: &Trace) -> ComponentDiff {
    let mut c = ComponentDiff::default();
    c.set(
        key::LOAD_TIME_DELTA_MS,
        ScalarKind::Millis,
        (v.meta.load_time_ms - b.meta.load_time_ms).abs(),
    );
    let count = |t: &Trace, pred: &dyn Fn(&str) -> bool| t.events.iter().filter(|e| pred(&e.name)).count();
    let unload = |n: &str| {
        let n = n.to_ascii_lowercase().replace('_', "");
        n == "beforeunload" || n == "window.beforeunload"
    };
    let download = |n: &str| n.eq_ignore_ascii_case("downloadWillBegin");
    c.count_delta(key::BEFOREUNLOAD_DELTA, count(v, &unload), count(b, &unload));
    c.count_delta(key::DOWNLOADS_DELTA, count(v, &download), count(b, &download));
    let (only_v, only_b) = multiset_diff(
        &multiset(v.events.iter().map(|e| e.name.clone())),
        &multiset(b.events.iter().map(|e| e.name.clone())),
    );
    c.count(key::EVENTS_DELTA, only_v.len() + only_b.len());
    c.items.extend(numbered("lost", only_v));
    c.items.extend(numbered("gained", only_b));
    c
}

fn listeners_component(v: &Trace, b: &Trace, ctx: &DiffContext) -> ComponentDiff {
    let cfg = &ctx.config.matching;
    let lex = &ctx.lexicons;
    let (v_only, b_only) = greedy_unmatched(&v.listeners, &b.listeners, |x, y| listeners_equal_with(cfg, x, y));
    let unmatched: Vec<_> = v_only
        .iter()
        .map(|&i| &v.listeners[i])
        .chain(b_only.iter().map(|&j| &b.listeners[j]))
        .collect();
    let mut c = ComponentDiff::default();
    c.count(key::LISTENERS_UNMATCHED, unmatched.len());
    c.count(key::LISTENERS_SPECIFIC, unmatched.iter().filter(|l| lex.is_specific(&l.target)).count());
    c.count(key::LISTENERS_GENERIC, unmatched.iter().filter(|l| lex.is_generic(&l.target)).count());
    c.count(key::LISTENERS_SENSITIVE, unmatched.iter().filter(|l| lex.is_sensitive(&l.target)).count());
    c.count(key::LISTENERS_CRITICAL, unmatched.iter().filter(|l| lex.is_critical(&l.target)).count());
    c.count(
        key::LISTENERS_FUNCTIONAL,
        unmatched.iter().filter(|l| lex.is_functional_event(&l.event_type)).count(),
    );
    let lkey = |l: &crate::trace::EventListenerRecord| format!("{}@{}", l.event_type, element_key(&l.target));
    c.items.extend(numbered("lost", v_only.iter().map(|&i| lkey(&v.listeners[i]))));
    c.items.extend(numbered("gained", b_only.iter().map(|&j| lkey(&b.listeners[j]))));
    c
}

fn scripts_component(v: &Trace, b: &Trace, ctx: &DiffContext) -> ComponentDiff {
    let threshold = ctx.config.matching.script_similarity;
    let (v_only, b_only) = greedy_unmatched(&v.scripts, &b.scripts, |x, y| script_similarity(x, y) >= threshold);
    let mut c = ComponentDiff::default();
    c.count(key::SCRIPTS_UNMATCHED, v_only.len() + b_only.len());
    let all = |t: &Trace| t.scripts.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n");
    let sim = cosine_counts(
        &crate::similarity::code_tokens(&all(v)),
        &crate::similarity::code_tokens(&all(b)),
    );
    c.set(key::SCRIPT_TEXT_SIM, ScalarKind::Similarity, sim);
    let skey = |s: &crate::trace::ScriptRecord| match &s.source_url {
        Some(u) => crate::trace::url_without_query(u),
        None => format!("inline:{:016x}", fnv1a(&s.text)),
    };
    c.items.extend(numbered("lost", v_only.iter().map(|&i| skey(&v.scripts[i]))));
    c.items.extend(numbered("gained", b_only.iter().map(|&j| skey(&b.scripts[j]))));
    c
}

fn counts_of<'a>(items: impl Iterator<Item = &'a String>) -> TokenCounts {
    let mut m = TokenCounts::new();
    for i in items {
        *m.entry(i.clone()).or_insert(0) += 1;
    }
    m
}

/// Tag unigrams and bigrams, so order matters as well as frequency.
fn tag_ngrams(seq: &[String]) -> TokenCounts {
    let mut m = counts_of(seq.iter());
    for w in seq.windows(2) {
        *m.entry(format!("{}>{}", w[0], w[1])).or_insert(0) += 1;
    }
    m
}

fn shot_mask(t: &Trace, tolerance: u8) -> Result<Option<DynamismMask>, DiffError> {
    let (Some(a), Some(b)) = (&t.appearance.screenshot_path, &t.appearance.second_screenshot_path) else {
        return Ok(None);
    };
    let a = load_image(&t.resolve(a))?.to_rgba8();
    let b = load_image(&t.resolve(b))?.to_rgba8();
    Ok(Some(mask_from_images(&a, &b, tolerance)))
}

fn image_similarity(
    v: &Trace,
    vp: Option<&String>,
    b: &Trace,
    bp: Option<&String>,
    mask: &DynamismMask,
    ctx: &DiffContext,
) -> Result<f64, DiffError> {
    match (vp, bp) {
        (None, None) => Ok(1.0),
        (Some(x), Some(y)) => {
            let ex = ctx.embedder.embed(&load_image(&v.resolve(x))?, mask);
            let ey = ctx.embedder.embed(&load_image(&b.resolve(y))?, mask);
            Ok(embedding_similarity(&ex, &ey))
        }
        _ => Ok(0.0),
    }
}

fn set_delta(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.symmetric_difference(b).count()
}

fn appearance_component(v: &Trace, b: &Trace, ctx: &DiffContext) -> Result<ComponentDiff, DiffError> {
    let (va, ba) = (&v.appearance, &b.appearance);
    let tol = ctx.config.pixel_tolerance;
    let mask = match (shot_mask(v, tol)?, shot_mask(b, tol)?) {
        (Some(x), Some(y)) => x.union(&y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => DynamismMask::default(),
    };
    let none = DynamismMask::default();
    let mut c = ComponentDiff::default();
    let sim = ScalarKind::Similarity;
    c.set(
        key::SCREENSHOT_SIM,
        sim,
        image_similarity(v, va.screenshot_path.as_ref(), b, ba.screenshot_path.as_ref(), &mask, ctx)?,
    );
    let regions = [
        (key::VIPS_SIM, va.regions.vips.as_ref(), ba.regions.vips.as_ref()),
        (key::CORMER_SIM, va.regions.cormer.as_ref(), ba.regions.cormer.as_ref()),
        (key::MAIN_SIM, va.regions.main.as_ref(), ba.regions.main.as_ref()),
        (key::SECTION_SIM, va.regions.section.as_ref(), ba.regions.section.as_ref()),
    ];
    for (k, x, y) in regions {
        c.set(k, sim, image_similarity(v, x, b, y, &none, ctx)?);
    }
    c.set(key::TEXT_SIM, sim, text_similarity(&va.inner_text, &ba.inner_text));
    c.set(key::MAIN_TEXT_SIM, sim, text_similarity(&va.main_text, &ba.main_text));
    c.set(
        key::STYLE_SIM,
        sim,
        cosine_counts(&counts_of(va.css_classes.iter()), &counts_of(ba.css_classes.iter())),
    );
    c.set(
        key::STRUCTURE_SIM,
        sim,
        cosine_counts(&tag_ngrams(&va.tag_sequence), &tag_ngrams(&ba.tag_sequence)),
    );
    c.count(key::FONTS_DELTA, set_delta(&va.fonts, &ba.fonts));
    c.count(key::COLORS_DELTA, set_delta(&va.colors, &ba.colors));
    c.set(
        key::HEIGHT_DELTA,
        ScalarKind::Pixels,
        (va.document_height - ba.document_height).abs(),
    );
    c.count_delta(key::CSS_FILES_DELTA, va.stylesheets.len(), ba.stylesheets.len());
    Ok(c)
}

fn storage_component(v: &Trace, b: &Trace) -> ComponentDiff {
    let mut c = ComponentDiff::default();
    let keys = |m: &BTreeMap<String, String>| m.keys().cloned().collect::<BTreeSet<_>>();
    let cookie_keys = |t: &Trace| {
        t.storage
            .cookies
            .iter()
            .map(|ck| format!("{}@{}", ck.name, ck.domain.trim_start_matches('.')))
            .collect::<BTreeSet<_>>()
    };
    let groups = [
        (key::LOCAL_DELTA, "local", keys(&v.storage.local), keys(&b.storage.local)),
        (key::SESSION_DELTA, "session", keys(&v.storage.session), keys(&b.storage.session)),
        (key::COOKIES_DELTA, "cookie", cookie_keys(v), cookie_keys(b)),
    ];
    for (k, prefix, kv, kb) in groups {
        c.count(k, set_delta(&kv, &kb));
        c.items.extend(kv.difference(&kb).map(|x| format!("lost:{prefix}:{x}")));
        c.items.extend(kb.difference(&kv).map(|x| format!("gained:{prefix}:{x}")));
    }
    c
}

/// Digit runs collapse to `0` so counters and timestamps in messages do not
/// register as new log lines.
fn normalize_message(level: &str, msg: &str) -> String {
    let mut out = format!("{}:", level.to_ascii_lowercase());
    let mut in_digits = false;
    for ch in msg.chars() {
        if ch.is_ascii_digit() {
            if !in_digits {
                out.push('0');
            }
            in_digits = true;
        } else {
            in_digits = false;
            out.push(ch);
        }
    }
    out
}

fn console_component(v: &Trace, b: &Trace) -> ComponentDiff {
    let ms = |t: &Trace| multiset(t.console.iter().map(|e| normalize_message(&e.level, &e.message)));
    let (only_v, only_b) = multiset_diff(&ms(v), &ms(b));
    let mut c = ComponentDiff::default();
    c.count(key::LOGS_DELTA, only_v.len() + only_b.len());
    c.items.extend(numbered("lost", only_v));
    c.items.extend(numbered("gained", only_b));
    c
}

fn graph_component(v: &Trace, b: &Trace, al: &RequestAlignment<'_, '_>) -> ComponentDiff {
    let mut c = ComponentDiff::default();
    let total = |t: &Trace| t.graph.values().map(|g| g.fingerprint_api_calls).sum::<u64>();
    c.set(
        key::FINGERPRINT_CALLS_DELTA,
        ScalarKind::Count,
        total(v).abs_diff(total(b)) as f64,
    );
    let sum = |t: &Trace, reqs: &[&RequestRecord], f: fn(&crate::trace::GraphMetrics) -> u64| {
        reqs.iter().filter_map(|r| t.graph.get(&r.id)).map(f).sum::<u64>()
    };
    let metrics: [(&str, fn(&crate::trace::GraphMetrics) -> u64); 4] = [
        (key::TARGET_ANCESTOR_EVAL, |g| g.ancestor_eval_count),
        (key::TARGET_DEGREE, |g| g.degree),
        (key::TARGET_ANCESTOR_COUNT, |g| g.ancestor_count),
        (key::TARGET_FINGERPRINT, |g| g.fingerprint_api_calls),
    ];
    for (k, f) in metrics {
        let d = sum(v, &al.target_v, f).abs_diff(sum(b, &al.target_b, f));
        c.set(k, ScalarKind::Count, d as f64);
    }
    c
}

/// Diff one vanilla run against one blocked run. The blocked target comes
/// from `blocked.meta.blocked_target`.
pub fn diff_pair(vanilla: &Trace, blocked: &Trace, ctx: &DiffContext) -> Result<RawDiff, DiffError> {
    let mismatches = validate_pairing(vanilla, blocked);
    if !mismatches.is_empty() {
        return Err(DiffError::PairingMismatch(mismatches));
    }
    let target = blocked
        .meta
        .blocked_target
        .clone()
        .expect("validate_pairing guarantees a blocked target");
    let m = TargetMatcher::new(&target)?;
    let al = align(vanilla, blocked, &m, &ctx.config.matching);
    let vs = RequestStats::new(vanilla, ctx);
    let bs = RequestStats::new(blocked, ctx);

    let mut components = BTreeMap::new();
    components.insert(Component::Requests, requests_component(&al, &vs, &bs));
    components.insert(Component::Dom, dom_component(vanilla, blocked, ctx));
    components.insert(Component::Events, events_component(vanilla, blocked));
    components.insert(Component::Listeners, listeners_component(vanilla, blocked, ctx));
    components.insert(Component::Scripts, scripts_component(vanilla, blocked, ctx));
    components.insert(Component::Appearance, appearance_component(vanilla, blocked, ctx)?);
    components.insert(Component::Storage, storage_component(vanilla, blocked));
    components.insert(Component::Console, console_component(vanilla, blocked));
    let mut ads = ComponentDiff::default();
    ads.set(
        key::AD_COUNT_DELTA,
        ScalarKind::Count,
        vanilla.ad_count.abs_diff(blocked.ad_count) as f64,
    );
    components.insert(Component::AdCount, ads);
    components.insert(Component::Graph, graph_component(vanilla, blocked, &al));

    Ok(RawDiff {
        target_in_vanilla: al.target_v.len(),
        target,
        components,
    })
}

/// Diff every vanilla run against every blocked run, row-major over
/// vanilla runs.
pub fn diff_grid(vanilla: &[Trace], blocked: &[Trace], ctx: &DiffContext) -> Result<Vec<RawDiff>, DiffError> {
    let mut out = Vec::with_capacity(vanilla.len() * blocked.len());
    for v in vanilla {
        for b in blocked {
            out.push(diff_pair(v, b, ctx)?);
        }
    }
    Ok(out)
}

/// Mode after rounding to the kind's tolerance. Ties go to the bin nearest
/// the neutral value; within the winning bin the member nearest neutral is
/// reported, so a unanimous vote returns the input unchanged.
pub fn vote(values: &[f64], kind: ScalarKind) -> f64 {
    let tol = kind.tolerance();
    let neutral = kind.neutral();
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &v in values {
        bins.entry((v / tol).round() as i64).or_default().push(v);
    }
    let best = bins
        .iter()
        .max_by(|(ka, va), (kb, vb)| {
            va.len()
                .cmp(&vb.len())
                .then_with(|| {
                    let da = (**ka as f64 * tol - neutral).abs();
                    let db = (**kb as f64 * tol - neutral).abs();
                    db.total_cmp(&da)
                })
                .then_with(|| kb.cmp(ka))
        })
        .map(|(_, members)| members);
    match best {
        Some(members) => members
            .iter()
            .copied()
            .min_by(|a, b| (a - neutral).abs().total_cmp(&(b - neutral).abs()).then(a.total_cmp(b)))
            .unwrap_or(neutral),
        None => neutral,
    }
}

/// Majority vote over exactly k² pairwise diffs.
pub fn consensus(diffs: &[RawDiff], k: usize) -> Result<ConsensusDiff, DiffError> {
    if k == 0 {
        return Err(DiffError::InvalidK);
    }
    let expected = k * k;
    if diffs.len() != expected {
        return Err(DiffError::WrongPairCount {
            k,
            expected,
            got: diffs.len(),
        });
    }
    let present: BTreeSet<Component> = Component::ALL
        .into_iter()
        .filter(|c| diffs.iter().all(|d| d.components.contains_key(c)))
        .collect();

    let mut components = BTreeMap::new();
    let mut items_seen = 0;
    let mut items_kept = 0;
    for comp in present {
        let parts: Vec<&ComponentDiff> = diffs.iter().map(|d| &d.components[&comp]).collect();
        let mut kinds: BTreeMap<&String, ScalarKind> = BTreeMap::new();
        for p in &parts {
            for (k, s) in &p.scalars {
                kinds.entry(k).or_insert(s.kind);
            }
        }
        let mut out = ConsensusComponent::default();
        for (name, kind) in kinds {
            let values: Vec<f64> = parts
                .iter()
                .map(|p| p.scalars.get(name).map_or(kind.neutral(), |s| s.value))
                .collect();
            out.scalars.insert(
                name.clone(),
                Scalar {
                    value: vote(&values, kind),
                    kind,
                },
            );
        }
        let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
        for p in &parts {
            for item in &p.items {
                *counts.entry(item).or_insert(0) += 1;
            }
        }
        items_seen += counts.len();
        for (item, n) in counts {
            if 2 * n > expected {
                out.items.insert(item.clone(), n);
                items_kept += 1;
            }
        }
        components.insert(comp, out);
    }

    let target_votes: Vec<f64> = diffs.iter().map(|d| d.target_in_vanilla as f64).collect();
    Ok(ConsensusDiff {
        target: diffs[0].target.clone(),
        k,
        target_in_vanilla: vote(&target_votes, ScalarKind::Count) as usize,
        components,
        items_seen,
        items_kept,
    })
}
