//! On-disk trace format.
//!
//! A trace is one JSON document per rendering run. Screenshots live next to
//! it as PNG files and are referenced by relative path. The schema is
//! documented in `docs/trace-schema.md` at the repository root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::psl;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed trace at `{field}`: {reason}")]
    MalformedTrace { field: String, reason: String },
    #[error("graph entry `{0}` does not reference any request")]
    DanglingReference(String),
}

impl TraceError {
    fn malformed(field: impl Into<String>, reason: impl Into<String>) -> Self {
        TraceError::MalformedTrace {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// One rendering run of one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub schema_version: u32,
    pub meta: CaptureMeta,
    #[serde(default)]
    pub requests: Vec<RequestRecord>,
    #[serde(default)]
    pub dom: Vec<DomElement>,
    #[serde(default)]
    pub events: Vec<PageEvent>,
    #[serde(default)]
    pub listeners: Vec<EventListenerRecord>,
    #[serde(default)]
    pub scripts: Vec<ScriptRecord>,
    #[serde(default)]
    pub appearance: Appearance,
    #[serde(default)]
    pub storage: StorageSnapshot,
    #[serde(default)]
    pub console: Vec<ConsoleEntry>,
    #[serde(default)]
    pub ad_count: u64,
    #[serde(default)]
    pub graph: BTreeMap<String, GraphMetrics>,
    /// Directory the trace was loaded from; screenshot paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub page_url: String,
    pub run_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked_target: Option<TargetRef>,
    pub user_agent: String,
    pub viewport: Viewport,
    pub cache_mode: CacheMode,
    pub load_time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl fmt::Display for Viewport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partiness {
    First,
    Third,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: String,
    pub direction: Direction,
    /// URL of the initiating document or an opaque script id.
    pub initiator: String,
    pub method: String,
    pub url: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default)]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_content_type: Option<String>,
    pub timestamp: f64,
    /// Filled in at load time when absent; checked against the page URL when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partiness: Option<Partiness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    QueryParam,
    Cookie,
    /// Reserved; header fields are not analyzed.
    Header,
    /// Reserved; body sub-fields are not analyzed.
    Body,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::QueryParam => "query_param",
            FieldKind::Cookie => "cookie",
            FieldKind::Header => "header",
            FieldKind::Body => "body",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestField {
    pub kind: FieldKind,
    pub name: String,
    #[serde(default)]
    pub value: String,
}

impl RequestField {
    pub fn query(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            kind: FieldKind::QueryParam,
            name: name.into(),
            value: value.into(),
        }
    }

    pub fn cookie(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            kind: FieldKind::Cookie,
            name: name.into(),
            value: value.into(),
        }
    }
}

impl RequestRecord {
    pub fn host(&self) -> Option<String> {
        psl::host_of(&self.url)
    }

    pub fn is_outgoing(&self) -> bool {
        self.direction == Direction::Outgoing
    }

    pub fn is_third_party(&self) -> bool {
        self.partiness == Some(Partiness::Third)
    }

    /// Case-insensitive header lookup; first occurrence wins.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Query-string parameters in URL order. Parameters with empty names are skipped.
    pub fn query_fields(&self) -> Vec<RequestField> {
        match url::Url::parse(&self.url) {
            Ok(u) => u
                .query_pairs()
                .filter(|(k, _)| !k.is_empty())
                .map(|(k, v)| RequestField::query(k, v))
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Cookies carried in the `Cookie` request header.
    pub fn cookie_fields(&self) -> Vec<RequestField> {
        self.headers
            .iter()
            .filter(|(n, _)| n.eq_ignore_ascii_case("cookie"))
            .flat_map(|(_, v)| v.split(';'))
            .filter_map(|pair| {
                let pair = pair.trim();
                let (name, value) = pair.split_once('=').unwrap_or((pair, ""));
                (!name.is_empty()).then(|| RequestField::cookie(name.trim(), value.trim()))
            })
            .collect()
    }

    /// All analyzable fields: query parameters then cookies.
    pub fn fields(&self) -> Vec<RequestField> {
        let mut out = self.query_fields();
        out.extend(self.cookie_fields());
        out
    }

    /// `scheme://host/path` without query or fragment; the stable identity
    /// used when voting over requests across runs.
    pub fn url_key(&self) -> String {
        url_without_query(&self.url)
    }

    pub fn is_script(&self) -> bool {
        if let Some(ct) = &self.response_content_type {
            let ct = ct.to_ascii_lowercase();
            if ct.contains("javascript") || ct.contains("ecmascript") {
                return true;
            }
        }
        match url::Url::parse(&self.url) {
            Ok(u) => {
                let path = u.path().to_ascii_lowercase();
                path.ends_with(".js") || path.ends_with(".mjs")
            }
            Err(_) => false,
        }
    }

    pub fn has_query_params(&self) -> bool {
        !self.query_fields().is_empty()
    }
}

pub fn url_without_query(url: &str) -> String {
    match url::Url::parse(url) {
        Ok(mut u) => {
            u.set_query(None);
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => url.split(['?', '#']).next().unwrap_or(url).to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Canvas,
    Audio,
    Button,
    Input,
    Span,
    Video,
    Image,
    Script,
    A,
    Iframe,
    Main,
    Section,
    /// Any tag outside the tracked set; kept so traces from richer capture
    /// tools still load.
    Other(String),
}

impl Tag {
    pub fn as_str(&self) -> &str {
        match self {
            Tag::Canvas => "canvas",
            Tag::Audio => "audio",
            Tag::Button => "button",
            Tag::Input => "input",
            Tag::Span => "span",
            Tag::Video => "video",
            Tag::Image => "image",
            Tag::Script => "script",
            Tag::A => "a",
            Tag::Iframe => "iframe",
            Tag::Main => "main",
            Tag::Section => "section",
            Tag::Other(s) => s,
        }
    }

    pub const TRACKED: [Tag; 12] = [
        Tag::Canvas,
        Tag::Audio,
        Tag::Button,
        Tag::Input,
        Tag::Span,
        Tag::Video,
        Tag::Image,
        Tag::Script,
        Tag::A,
        Tag::Iframe,
        Tag::Main,
        Tag::Section,
    ];
}

impl From<String> for Tag {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "canvas" => Tag::Canvas,
            "audio" => Tag::Audio,
            "button" => Tag::Button,
            "input" => Tag::Input,
            "span" => Tag::Span,
            "video" => Tag::Video,
            "image" | "img" => Tag::Image,
            "script" => Tag::Script,
            "a" => Tag::A,
            "iframe" => Tag::Iframe,
            "main" => Tag::Main,
            "section" => Tag::Section,
            other => Tag::Other(other.to_string()),
        }
    }
}

impl From<&str> for Tag {
    fn from(s: &str) -> Self {
        Tag::from(s.to_string())
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> Self {
        t.as_str().to_string()
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(Tag::from)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned rectangle in CSS pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let h = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union. Two degenerate rectangles score 1 when they
    /// coincide and 0 otherwise.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            if self == other {
                1.0
            } else {
                0.0
            }
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomElement {
    pub tag: Tag,
    pub bounds: Rect,
    #[serde(default)]
    pub content_hash: String,
    #[serde(default)]
    pub css_classes: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub inner_text: String,
}

impl DomElement {
    pub fn new(tag: impl Into<Tag>, bounds: Rect) -> Self {
        Self {
            tag: tag.into(),
            bounds,
            content_hash: String::new(),
            css_classes: Vec::new(),
            attributes: BTreeMap::new(),
            inner_text: String::new(),
        }
    }

    pub fn with_classes(mut self, classes: &[&str]) -> Self {
        self.css_classes = classes.iter().map(|c| c.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEvent {
    pub name: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventListenerRecord {
    pub event_type: String,
    #[serde(default)]
    pub passive: bool,
    #[serde(default)]
    pub once: bool,
    pub target: DomElement,
    pub handler_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SourcePosition {
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub text: String,
    #[serde(default)]
    pub position: SourcePosition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

/// Pre-cropped screenshot regions produced by the capture tool's page
/// segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RegionShots {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vips: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cormer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Appearance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot_path: Option<String>,
    /// Delayed second shot; its difference with the first forms the dynamism mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_screenshot_path: Option<String>,
    #[serde(default)]
    pub fonts: BTreeSet<String>,
    #[serde(default)]
    pub colors: BTreeSet<String>,
    #[serde(default)]
    pub inner_text: String,
    #[serde(default)]
    pub main_text: String,
    /// Multiset: one entry per class occurrence.
    #[serde(default)]
    pub css_classes: Vec<String>,
    #[serde(default)]
    pub tag_sequence: Vec<String>,
    #[serde(default)]
    pub document_height: f64,
    #[serde(default)]
    pub stylesheets: Vec<String>,
    #[serde(default)]
    pub regions: RegionShots,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cookie {
    pub name: String,
    pub value: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StorageSnapshot {
    #[serde(default)]
    pub cookies: Vec<Cookie>,
    #[serde(default)]
    pub local: BTreeMap<String, String>,
    #[serde(default)]
    pub session: BTreeMap<String, String>,
}

impl StorageSnapshot {
    /// Every stored value across cookies, local and session storage.
    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.cookies
            .iter()
            .map(|c| c.value.as_str())
            .chain(self.local.values().map(String::as_str))
            .chain(self.session.values().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleEntry {
    pub level: String,
    pub timestamp: f64,
    #[serde(default)]
    pub source: String,
    pub message: String,
}

/// Per-request metrics derived from the page's provenance graph by the
/// capture tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct GraphMetrics {
    pub ancestor_eval_count: u64,
    pub degree: u64,
    pub ancestor_count: u64,
    pub fingerprint_api_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Request,
    Field,
}

/// What a blocked run intervened on: a whole request, or one field of it.
///
/// `url_pattern` uses filter-list address syntax (`||`, `|`, `*`, `^`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetRef {
    pub kind: TargetKind,
    pub url_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<RequestField>,
}

impl TargetRef {
    pub fn request(url_pattern: impl Into<String>) -> Self {
        Self {
            kind: TargetKind::Request,
            url_pattern: url_pattern.into(),
            field: None,
        }
    }

    pub fn field(url_pattern: impl Into<String>, field: RequestField) -> Self {
        Self {
            kind: TargetKind::Field,
            url_pattern: url_pattern.into(),
            field: Some(field),
        }
    }

    /// Same request pattern and same field kind and name; field values are
    /// session data and are ignored.
    pub fn same_target(&self, other: &TargetRef) -> bool {
        self.kind == other.kind
            && self.url_pattern == other.url_pattern
            && match (&self.field, &other.field) {
                (Some(a), Some(b)) => a.kind == b.kind && a.name == b.name,
                (None, None) => true,
                _ => false,
            }
    }
}

impl fmt::Display for TargetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, &self.field) {
            (TargetKind::Field, Some(field)) => {
                write!(f, "field:{}#{}:{}", self.url_pattern, field.kind, field.name)
            }
            _ => write!(f, "request:{}", self.url_pattern),
        }
    }
}

impl FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query_param" => Ok(FieldKind::QueryParam),
            "cookie" => Ok(FieldKind::Cookie),
            "header" => Ok(FieldKind::Header),
            "body" => Ok(FieldKind::Body),
            other => Err(format!("unknown field kind `{other}`")),
        }
    }
}

/// Parses the `Display` form. The field value is not part of it and comes
/// back empty.
impl FromStr for TargetRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(pattern) = s.strip_prefix("request:") {
            return Ok(TargetRef::request(pattern));
        }
        let rest = s
            .strip_prefix("field:")
            .ok_or_else(|| format!("`{s}` is neither request: nor field:"))?;
        let (pattern, field) = rest
            .rsplit_once('#')
            .ok_or_else(|| format!("`{s}` lacks #kind:name"))?;
        let (kind, name) = field
            .split_once(':')
            .ok_or_else(|| format!("`{s}` lacks kind:name"))?;
        if name.is_empty() {
            return Err(format!("`{s}` has an empty field name"));
        }
        Ok(TargetRef::field(
            pattern,
            RequestField {
                kind: kind.parse()?,
                name: name.to_string(),
                value: String::new(),
            },
        ))
    }
}

/// Selection of candidate requests worth analyzing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateFilter {
    pub scripts: bool,
    pub parameterized: bool,
    pub outgoing_only: bool,
}

impl Default for CandidateFilter {
    fn default() -> Self {
        Self {
            scripts: true,
            parameterized: true,
            outgoing_only: true,
        }
    }
}

impl Trace {
    /// An empty vanilla trace for `page_url`.
    pub fn empty(page_url: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            meta: CaptureMeta {
                page_url: page_url.into(),
                run_index: 0,
                blocked_target: None,
                user_agent: String::new(),
                viewport: Viewport {
                    width: 1280,
                    height: 800,
                },
                cache_mode: CacheMode::Record,
                load_time_ms: 0.0,
            },
            requests: Vec::new(),
            dom: Vec::new(),
            events: Vec::new(),
            listeners: Vec::new(),
            scripts: Vec::new(),
            appearance: Appearance::default(),
            storage: StorageSnapshot::default(),
            console: Vec::new(),
            ad_count: 0,
            graph: BTreeMap::new(),
            base_dir: None,
        }
    }

    pub fn page_host(&self) -> String {
        psl::host_of(&self.meta.page_url).unwrap_or_default()
    }

    pub fn page_site(&self) -> String {
        psl::registrable_domain(&self.page_host())
    }

    pub fn is_vanilla(&self) -> bool {
        self.meta.blocked_target.is_none()
    }

    /// Resolve a trace-relative file path.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn request(&self, id: &str) -> Option<&RequestRecord> {
        self.requests.iter().find(|r| r.id == id)
    }

    /// Check every invariant, computing request partiness where absent.
    pub fn validate(&mut self) -> Result<(), TraceError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(TraceError::malformed(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let page_host = psl::host_of(&self.meta.page_url)
            .ok_or_else(|| TraceError::malformed("meta.page_url", "not an absolute URL with a host"))?;
        if self.meta.viewport.width == 0 || self.meta.viewport.height == 0 {
            return Err(TraceError::malformed("meta.viewport", "components must be positive"));
        }
        if !(self.meta.load_time_ms.is_finite() && self.meta.load_time_ms >= 0.0) {
            return Err(TraceError::malformed("meta.load_time_ms", "must be finite and >= 0"));
        }
        if let Some(target) = &self.meta.blocked_target {
            if target.kind == TargetKind::Field
                && target.field.as_ref().is_none_or(|f| f.name.is_empty())
            {
                return Err(TraceError::malformed(
                    "meta.blocked_target.field",
                    "field targets need a named field",
                ));
            }
        }
        check_monotone("requests", self.requests.iter().map(|r| r.timestamp))?;
        check_monotone("events", self.events.iter().map(|e| e.timestamp))?;
        check_monotone("console", self.console.iter().map(|c| c.timestamp))?;

        let page_site = psl::registrable_domain(&page_host);
        for (i, req) in self.requests.iter_mut().enumerate() {
            let host = psl::host_of(&req.url).ok_or_else(|| {
                TraceError::malformed(format!("requests[{i}].url"), "not an absolute URL with a host")
            })?;
            let computed = if psl::registrable_domain(&host) == page_site {
                Partiness::First
            } else {
                Partiness::Third
            };
            match req.partiness {
                None => req.partiness = Some(computed),
                Some(p) if p != computed => {
                    return Err(TraceError::malformed(
                        format!("requests[{i}].partiness"),
                        format!("declared {p:?} but host {host} is {computed:?} for page {page_host}"),
                    ))
                }
                Some(_) => {}
            }
        }
        for key in self.graph.keys() {
            if !self.requests.iter().any(|r| &r.id == key) {
                return Err(TraceError::DanglingReference(key.clone()));
            }
        }
        Ok(())
    }
}

fn check_monotone(list: &str, ts: impl Iterator<Item = f64>) -> Result<(), TraceError> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in ts.enumerate() {
        if !t.is_finite() {
            return Err(TraceError::malformed(format!("{list}[{i}].timestamp"), "not finite"));
        }
        if t < prev {
            return Err(TraceError::malformed(
                format!("{list}[{i}].timestamp"),
                format!("{t} precedes previous {prev}"),
            ));
        }
        prev = t;
    }
    Ok(())
}

/// Parse and validate a trace from JSON text.
pub fn parse_trace(json: &str) -> Result<Trace, TraceError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let mut trace: Trace = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        TraceError::MalformedTrace {
            field,
            reason: e.into_inner().to_string(),
        }
    })?;
    trace.validate()?;
    Ok(trace)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut trace = parse_trace(&text)?;
    trace.base_dir = path.parent().map(Path::to_path_buf);
    Ok(trace)
}

pub fn to_json(trace: &Trace) -> String {
    let mut s = serde_json::to_string_pretty(trace).expect("trace serializes");
    s.push('\n');
    s
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| TraceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, to_json(trace)).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A field of the capture environment that differs between two paired runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingMismatch {
    pub field: &'static str,
    pub vanilla: String,
    pub blocked: String,
}

impl fmt::Display for PairingMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: vanilla={} blocked={}", self.field, self.vanilla, self.blocked)
    }
}

/// Environment checks for a vanilla/blocked pair. An empty list means the
/// pair is attributable.
pub fn validate_pairing(vanilla: &Trace, blocked: &Trace) -> Vec<PairingMismatch> {
    let mut out = Vec::new();
    let (v, b) = (&vanilla.meta, &blocked.meta);
    if v.page_url != b.page_url {
        out.push(PairingMismatch {
            field: "page_url",
            vanilla: v.page_url.clone(),
            blocked: b.page_url.clone(),
        });
    }
    if v.user_agent != b.user_agent {
        out.push(PairingMismatch {
            field: "user_agent",
            vanilla: v.user_agent.clone(),
            blocked: b.user_agent.clone(),
        });
    }
    if v.viewport != b.viewport {
        out.push(PairingMismatch {
            field: "viewport",
            vanilla: v.viewport.to_string(),
            blocked: b.viewport.to_string(),
        });
    }
    if b.blocked_target.is_none() {
        out.push(PairingMismatch {
            field: "blocked_target",
            vanilla: "-".into(),
            blocked: "absent".into(),
        });
    }
    out
}

/// Requests fetching JavaScript or carrying query parameters, in trace order.
pub fn enumerate_requests<'t>(trace: &'t Trace, filter: &CandidateFilter) -> Vec<&'t RequestRecord> {
    trace
        .requests
        .iter()
        .filter(|r| !filter.outgoing_only || r.is_outgoing())
        .filter(|r| (filter.scripts && r.is_script()) || (filter.parameterized && r.has_query_params()))
        .collect()
}
