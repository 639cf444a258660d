//! Fixed-order feature vectors over a consensus diff.
//!
//! Two registries exist. The breakage registry has 63 entries in four
//! groups; the tracking registry describes the blocked target and the
//! page-level side effects of removing it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::{key, Component, ConsensusDiff, SIZED_TAGS};
use crate::trace::{Tag, TargetRef};

pub const BREAKAGE_REGISTRY_ID: &str = "breakage/1";
pub const TRACKING_REGISTRY_ID: &str = "tracking/1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("diff has no {0} component")]
    IncompleteDiff(Component),
    #[error("target {0} is not present in the vanilla trace")]
    UnknownTarget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Appearance,
    Input,
    Request,
    StorageTemporal,
    Tracking,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Appearance => "appearance",
            Group::Input => "input",
            Group::Request => "request",
            Group::StorageTemporal => "storage_temporal",
            Group::Tracking => "tracking",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryKind {
    Breakage,
    Tracking,
}

impl RegistryKind {
    pub fn id(self) -> &'static str {
        match self {
            RegistryKind::Breakage => BREAKAGE_REGISTRY_ID,
            RegistryKind::Tracking => TRACKING_REGISTRY_ID,
        }
    }
}

/// How a scalar becomes a feature value.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// The scalar as is.
    Value(Component, String),
    /// `1 − similarity`.
    Dissimilarity(Component, String),
    /// Scalar times a constant (unit conversion).
    Scaled(Component, String, f64),
    /// Mean dissimilarity of several similarity scalars.
    JointDissimilarity(Component, Vec<String>),
}

impl Extractor {
    fn component(&self) -> Component {
        match self {
            Extractor::Value(c, _)
            | Extractor::Dissimilarity(c, _)
            | Extractor::Scaled(c, _, _)
            | Extractor::JointDissimilarity(c, _) => *c,
        }
    }

    /// Stable text id, exported with the registry.
    pub fn id(&self) -> String {
        match self {
            Extractor::Value(c, k) => format!("{c}.{k}"),
            Extractor::Dissimilarity(c, k) => format!("1-{c}.{k}"),
            Extractor::Scaled(c, k, f) => format!("{c}.{k}*{f}"),
            Extractor::JointDissimilarity(c, ks) => {
                format!("mean(1-{c}.{{{}}})", ks.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDef {
    pub name: String,
    pub group: Group,
    pub extractor: Extractor,
    /// Alternative names that resolve to this feature.
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    pub kind: RegistryKind,
    pub features: Vec<FeatureDef>,
}

impl FeatureRegistry {
    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Index by name or alias.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features
            .iter()
            .position(|f| f.name == name || f.aliases.iter().any(|a| a == name))
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.features.iter().filter(|f| f.group == group).count()
    }

    /// `name,group,index,extractor` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "group", "index", "extractor"]).expect("in-memory write");
        for (i, f) in self.features.iter().enumerate() {
            w.write_record([f.name.as_str(), f.group.as_str(), &i.to_string(), &f.extractor.id()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn def(name: &str, group: Group, extractor: Extractor) -> FeatureDef {
    FeatureDef {
        name: name.to_string(),
        group,
        extractor,
        aliases: Vec::new(),
    }
}

fn with_alias(mut f: FeatureDef, alias: &str) -> FeatureDef {
    f.aliases.push(alias.to_string());
    f
}

fn val(c: Component, k: &str) -> Extractor {
    Extractor::Value(c, k.to_string())
}

fn dis(c: Component, k: &str) -> Extractor {
    Extractor::Dissimilarity(c, k.to_string())
}

fn breakage_features() -> Vec<FeatureDef> {
    use Component as C;
    use Group::*;
    let mut f = vec![
        def("VIPS screenshot", Appearance, dis(C::Appearance, key::VIPS_SIM)),
        def("Cormer screenshot", Appearance, dis(C::Appearance, key::CORMER_SIM)),
        def("Main screenshot", Appearance, dis(C::Appearance, key::MAIN_SIM)),
        def("Section screenshot", Appearance, dis(C::Appearance, key::SECTION_SIM)),
        with_alias(
            def("Feature vectors", Appearance, dis(C::Appearance, key::SCREENSHOT_SIM)),
            "Δ full-paged screenshot as a feature vector",
        ),
        def("Text", Appearance, dis(C::Appearance, key::TEXT_SIM)),
        def("Readability text", Appearance, dis(C::Appearance, key::MAIN_TEXT_SIM)),
        with_alias(
            def("Document style", Appearance, dis(C::Appearance, key::STYLE_SIM)),
            "Δ CSS classes",
        ),
        with_alias(
            def("Structure similarity", Appearance, dis(C::Appearance, key::STRUCTURE_SIM)),
            "Δ HTML tag sequences",
        ),
        with_alias(
            def(
                "HTML",
                Appearance,
                Extractor::JointDissimilarity(
                    C::Appearance,
                    vec![key::STYLE_SIM.to_string(), key::STRUCTURE_SIM.to_string()],
                ),
            ),
            "Δ DOM tree",
        ),
        def("Fonts", Appearance, val(C::Appearance, key::FONTS_DELTA)),
        def("Color", Appearance, val(C::Appearance, key::COLORS_DELTA)),
        with_alias(
            def("Height", Appearance, val(C::Appearance, key::HEIGHT_DELTA)),
            "Δ document height",
        ),
    ];
    let tag_rows = [
        ("Canvas", Tag::Canvas),
        ("Audio", Tag::Audio),
        ("Button", Tag::Button),
        ("Input", Tag::Input),
        ("Links", Tag::A),
        ("Dom scripts", Tag::Script),
        ("Span", Tag::Span),
    ];
    for (name, tag) in tag_rows {
        f.push(def(name, Appearance, val(C::Dom, &key::unmatched_tag(tag.as_str()))));
    }
    f.push(def("Unloaded diff", Appearance, val(C::Events, key::BEFOREUNLOAD_DELTA)));
    f.push(def("CSS files", Appearance, val(C::Appearance, key::CSS_FILES_DELTA)));
    let sized_names = [
        ("Videos small", "Videos large", "Video sensitive size"),
        ("Images small", "Images large", "Images sensitive size"),
        ("Iframes small", "Iframes large", "Iframes sensitive size"),
    ];
    for (tag, (small, large, sensitive)) in SIZED_TAGS.iter().zip(sized_names) {
        f.push(def(small, Appearance, val(C::Dom, &key::size_class(tag.as_str(), "small"))));
        f.push(def(large, Appearance, val(C::Dom, &key::size_class(tag.as_str(), "large"))));
        f.push(def(
            sensitive,
            Appearance,
            val(C::Dom, &key::size_class(tag.as_str(), "sensitive")),
        ));
    }
    f.push(def("Ads iframes", Appearance, val(C::Dom, key::ADS_IFRAMES_DELTA)));
    f.push(def("Ad highlighter", Appearance, val(C::AdCount, key::AD_COUNT_DELTA)));

    f.extend([
        def("Specific listeners", Input, val(C::Listeners, key::LISTENERS_SPECIFIC)),
        def("Generic listeners", Input, val(C::Listeners, key::LISTENERS_GENERIC)),
        def("Sensitive listeners", Input, val(C::Listeners, key::LISTENERS_SENSITIVE)),
        with_alias(
            def("Critical listeners", Input, val(C::Listeners, key::LISTENERS_CRITICAL)),
            "Δ listeners on interactable elements",
        ),
        def(
            "Functionality related listeners",
            Input,
            val(C::Listeners, key::LISTENERS_FUNCTIONAL),
        ),
        with_alias(
            def("Listeners", Input, val(C::Listeners, key::LISTENERS_UNMATCHED)),
            "Δ event listeners",
        ),
    ]);

    let request_rows = [
        ("# requests blocked", key::BLOCKED_COUNT),
        ("% requests blocked", key::BLOCKED_RATIO),
        ("URL length", key::BLOCKED_URL_LEN),
        ("Total parameters", key::BLOCKED_PARAMS),
        ("Ad dimensions", key::BLOCKED_AD_DIMENSIONS),
        ("# semicolon", key::BLOCKED_SEMICOLONS),
        ("# screen", key::BLOCKED_SCREEN),
        ("# FP in blocked requests", key::BLOCKED_FP_MENTIONS),
        ("# FP req blocked", key::BLOCKED_FP),
        ("# TP req blocked", key::BLOCKED_TP),
        ("# ad keywords", key::BLOCKED_AD_KEYWORDS),
        ("# storage values out", key::BLOCKED_STORAGE_VALUES),
        ("API static", key::BLOCKED_API_STATIC),
        ("Eval keyword", key::BLOCKED_EVAL),
        ("Total response size", key::BLOCKED_RESP_TOTAL),
        ("Avg response size", key::BLOCKED_RESP_AVG),
        ("Sensitive FP", key::BLOCKED_SENSITIVE_FP),
        ("Sensitive TP", key::BLOCKED_SENSITIVE_TP),
    ];
    for (name, k) in request_rows {
        f.push(def(name, Request, val(C::Requests, k)));
    }

    f.extend([
        def("Storage", StorageTemporal, val(C::Storage, key::LOCAL_DELTA)),
        def("Session storage", StorageTemporal, val(C::Storage, key::SESSION_DELTA)),
        with_alias(
            def("Cookies", StorageTemporal, val(C::Storage, key::COOKIES_DELTA)),
            "Δ cookies values",
        ),
        with_alias(
            def(
                "Load time",
                StorageTemporal,
                Extractor::Scaled(C::Events, key::LOAD_TIME_DELTA_MS.to_string(), 0.001),
            ),
            "Δ page load time",
        ),
        with_alias(
            def("Logs", StorageTemporal, val(C::Console, key::LOGS_DELTA)),
            "Δ console logs",
        ),
        def("Downloads", StorageTemporal, val(C::Events, key::DOWNLOADS_DELTA)),
    ]);
    f
}

fn tracking_features() -> Vec<FeatureDef> {
    use Component as C;
    let t = Group::Tracking;
    let rows = [
        // the ten headline features
        ("Δ parameters of the blocked request", C::Requests, key::TARGET_PARAMS),
        ("Δ URL length of the blocked request", C::Requests, key::TARGET_URL_LEN),
        ("Δ response size of the blocked request", C::Requests, key::TARGET_RESP_SIZE),
        (
            "Δ times first party appear in the blocked request",
            C::Requests,
            key::TARGET_FP_MENTIONS,
        ),
        (
            "Δ 'eval' appear in the response of the blocked request",
            C::Requests,
            key::TARGET_EVAL,
        ),
        (
            "Δ high entropy fingerprinting function executed",
            C::Graph,
            key::FINGERPRINT_CALLS_DELTA,
        ),
        ("Δ third party requests blocked", C::Requests, key::TP_LOST),
        ("Δ requests blocked", C::Requests, key::LOST),
        (
            "Δ third party requests with sensitive information",
            C::Requests,
            key::SENSITIVE_TP_DELTA,
        ),
        (
            "Δ 'eval' in the ancestors nodes of the blocked request",
            C::Graph,
            key::TARGET_ANCESTOR_EVAL,
        ),
        // data flow
        ("Δ first party requests blocked", C::Requests, key::FP_LOST),
        (
            "Δ storage values sent by the blocked request",
            C::Requests,
            key::TARGET_STORAGE_VALUES,
        ),
        (
            "Δ identifier-like fields in the blocked request",
            C::Requests,
            key::TARGET_IDENTIFIER_FIELDS,
        ),
        ("Δ storage values flowing to requests", C::Requests, key::STORAGE_FLOW_DELTA),
        ("Δ requests gained", C::Requests, key::GAINED),
        ("Δ cookie store entries", C::Storage, key::COOKIES_DELTA),
        // DOM state
        ("Δ listeners (DOM state)", C::Listeners, key::LISTENERS_UNMATCHED),
        ("Δ DOM elements (DOM state)", C::Dom, key::UNMATCHED_TOTAL),
        ("Δ tracking pixels", C::Dom, key::PIXELS_DELTA),
        // JavaScript control flow
        ("Δ parsed scripts", C::Scripts, key::SCRIPTS_UNMATCHED),
        ("Δ graph degree of the blocked request", C::Graph, key::TARGET_DEGREE),
        ("Δ ancestor count of the blocked request", C::Graph, key::TARGET_ANCESTOR_COUNT),
        (
            "Δ fingerprinting calls attributed to the blocked request",
            C::Graph,
            key::TARGET_FINGERPRINT,
        ),
        (
            "Δ fingerprinting APIs in the response of the blocked request",
            C::Requests,
            key::TARGET_API_STATIC,
        ),
    ];
    rows.into_iter().map(|(n, c, k)| def(n, t, val(c, k))).collect()
}

pub fn registry(kind: RegistryKind) -> FeatureRegistry {
    FeatureRegistry {
        kind,
        features: match kind {
            RegistryKind::Breakage => breakage_features(),
            RegistryKind::Tracking => tracking_features(),
        },
    }
}

/// Find a feature by name or alias across both registries.
pub fn resolve_name(name: &str) -> Vec<(RegistryKind, usize)> {
    [RegistryKind::Breakage, RegistryKind::Tracking]
        .into_iter()
        .filter_map(|k| registry(k).index_of(name).map(|i| (k, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub registry_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn scalar(diff: &ConsensusDiff, c: Component, k: &str) -> Result<f64, FeatureError> {
    let comp = diff.component(c).ok_or(FeatureError::IncompleteDiff(c))?;
    Ok(comp.scalars.get(k).map_or(0.0, |s| s.value))
}

fn sim(diff: &ConsensusDiff, c: Component, k: &str) -> Result<f64, FeatureError> {
    let comp = diff.component(c).ok_or(FeatureError::IncompleteDiff(c))?;
    Ok(comp.scalars.get(k).map_or(1.0, |s| s.value))
}

fn extract(diff: &ConsensusDiff, e: &Extractor) -> Result<f64, FeatureError> {
    let v = match e {
        Extractor::Value(c, k) => scalar(diff, *c, k)?,
        Extractor::Dissimilarity(c, k) => 1.0 - sim(diff, *c, k)?,
        Extractor::Scaled(c, k, f) => scalar(diff, *c, k)? * f,
        Extractor::JointDissimilarity(c, ks) => {
            let mut total = 0.0;
            for k in ks {
                total += 1.0 - sim(diff, *c, k)?;
            }
            total / ks.len().max(1) as f64
        }
    };
    Ok(if v.is_finite() { v } else { 0.0 })
}

pub fn vectorize(diff: &ConsensusDiff, reg: &FeatureRegistry) -> Result<FeatureVector, FeatureError> {
    for f in &reg.features {
        let c = f.extractor.component();
        if diff.component(c).is_none() {
            return Err(FeatureError::IncompleteDiff(c));
        }
    }
    let values = reg
        .features
        .iter()
        .map(|f| extract(diff, &f.extractor))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector {
        registry_id: reg.id().to_string(),
        values,
    })
}

pub fn breakage_vector(diff: &ConsensusDiff) -> Result<FeatureVector, FeatureError> {
    vectorize(diff, &registry(RegistryKind::Breakage))
}

/// Tracking features for `target`, which must be the diff's target and
/// present in the vanilla runs.
pub fn tracking_vector(diff: &ConsensusDiff, target: &TargetRef) -> Result<FeatureVector, FeatureError> {
    if !diff.target.same_target(target) || diff.target_in_vanilla == 0 {
        return Err(FeatureError::UnknownTarget(target.to_string()));
    }
    vectorize(diff, &registry(RegistryKind::Tracking))
}
