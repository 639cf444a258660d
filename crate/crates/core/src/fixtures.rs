//! Synthetic capture jobs.
//!
//! Pages are built from modules: a root request plus the requests, DOM
//! content, listeners, storage and logs that exist only when the root loads.
//! A simulated capture renders a page into a trace and a pair of PNG
//! screenshots, with an optional intervention (block a request, strip a
//! field). Everything is a pure function of the page spec and a seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::fnv1a;
use crate::entropy::Thresholds;
use crate::pipeline::{
    enumerate_candidates, CandidateMode, Job, JobInfo, PipelineError, TargetEntry, TargetsFile, JOB_FILE,
    TARGETS_SCHEMA_VERSION,
};
use crate::rules::{flip_exception, parse_rule, AddressPattern};
use crate::trace::{
    save_trace, CacheMode, ConsoleEntry, Cookie, Direction, DomElement, EventListenerRecord, FieldKind,
    GraphMetrics, PageEvent, Rect, RequestRecord, ScriptRecord, SourcePosition, TargetKind, TargetRef, Trace,
    Viewport,
};

pub const USER_AGENT: &str =
    "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/118.0.0.0 Safari/537.36";
pub const VIEWPORT: Viewport = Viewport {
    width: 1280,
    height: 800,
};
/// Screenshot pixels per CSS pixel, inverted.
const SHOT_SCALE: u32 = 8;
const BASE_LOAD_MS: f64 = 800.0;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LIST_FILE: &str = "filters.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Fixed(String),
    /// Value of a page storage entry with this key.
    Stored(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ParamValue,
    /// Stripping it makes the server reject the request.
    pub functional: bool,
}

impl Param {
    pub fn fixed(name: &str, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: ParamValue::Fixed(value.into()),
            functional: false,
        }
    }

    pub fn stored(name: &str, key: &str) -> Self {
        Self {
            name: name.into(),
            value: ParamValue::Stored(key.into()),
            functional: false,
        }
    }

    pub fn functional(mut self) -> Self {
        self.functional = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReqSpec {
    pub method: String,
    /// URL without query.
    pub base: String,
    pub params: Vec<Param>,
    /// Cookies sent in the `Cookie` header; values come from storage.
    pub cookies: Vec<Param>,
    pub content_type: String,
    pub response: String,
    pub graph: Option<GraphMetrics>,
}

impl ReqSpec {
    pub fn get(base: impl Into<String>, content_type: &str, response: impl Into<String>) -> Self {
        Self {
            method: "GET".into(),
            base: base.into(),
            params: Vec::new(),
            cookies: Vec::new(),
            content_type: content_type.into(),
            response: response.into(),
            graph: None,
        }
    }

    pub fn script(base: impl Into<String>, body: impl Into<String>) -> Self {
        Self::get(base, "application/javascript", body)
    }

    pub fn with_params(mut self, params: Vec<Param>) -> Self {
        self.params = params;
        self
    }

    pub fn with_cookies(mut self, cookies: Vec<Param>) -> Self {
        self.cookies = cookies;
        self
    }

    pub fn with_graph(mut self, g: GraphMetrics) -> Self {
        self.graph = Some(g);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreKind {
    Cookie,
    Local,
    Session,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub kind: StoreKind,
    pub key: String,
    pub value: String,
}

/// A root request and everything that depends on it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Module {
    pub name: String,
    /// `requests[0]` is the root; the others are sent by it.
    pub requests: Vec<ReqSpec>,
    pub elements: Vec<DomElement>,
    /// `(event type, index into elements)`
    pub listeners: Vec<(String, usize)>,
    pub script: Option<String>,
    pub stores: Vec<Store>,
    pub text: String,
    pub main_text: bool,
    pub fonts: Vec<String>,
    pub colors: Vec<String>,
    pub stylesheet: Option<String>,
    pub load_ms: f64,
    pub logs: Vec<String>,
    /// Logged by the page when the module fails to load.
    pub missing_error: Option<String>,
    pub ads: u64,
    /// Present only in these run indices.
    pub only_in_runs: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageSpec {
    pub name: String,
    pub page_url: String,
    pub rank: Option<u64>,
    /// `modules[0]` is the document.
    pub modules: Vec<Module>,
    /// Rotating banner, redrawn between the two screenshots.
    pub carousel: Option<Rect>,
    /// Request patterns whose fields become targets.
    pub field_requests: Vec<String>,
    /// Exception rules with blocked runs captured for their flipped form.
    pub source_rules: Vec<String>,
    /// Skip request-level targets matched by these patterns.
    pub skip_requests: Vec<String>,
}

impl PageSpec {
    fn stored_value(&self, key: &str) -> Option<&str> {
        self.modules
            .iter()
            .flat_map(|m| &m.stores)
            .find(|s| s.key == key)
            .map(|s| s.value.as_str())
    }
}

/// What a blocked run does differently.
#[derive(Debug, Clone)]
pub struct Intervention {
    pub target: TargetRef,
    pattern: AddressPattern,
}

impl Intervention {
    pub fn new(target: TargetRef) -> Result<Self, PipelineError> {
        let pattern = AddressPattern::parse(&target.url_pattern).map_err(|e| PipelineError::BadFile {
            path: PathBuf::from(&target.url_pattern),
            reason: e.to_string(),
        })?;
        Ok(Self { target, pattern })
    }

    fn blocks(&self, url: &str) -> bool {
        self.target.kind == TargetKind::Request && self.pattern.matches(url)
    }

    fn strips(&self, url: &str, kind: FieldKind, name: &str) -> bool {
        self.target.kind == TargetKind::Field
            && self.pattern.matches(url)
            && self.target.field.as_ref().is_some_and(|f| f.kind == kind && f.name == name)
    }
}

fn element(tag: &str, x: f64, y: f64, w: f64, h: f64, classes: &[&str], text: &str) -> DomElement {
    let mut e = DomElement::new(tag, Rect::new(x, y, w, h)).with_classes(classes);
    e.inner_text = text.to_string();
    e.content_hash = format!("{:016x}", fnv1a(&format!("{tag}|{}|{text}|{x}|{y}", classes.join("."))));
    e
}

fn query_string(pairs: &[(String, String)]) -> String {
    url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .finish()
}

struct RunState<'p> {
    page: &'p PageSpec,
    trace: Trace,
    ts: f64,
    next_id: usize,
    rng: ChaCha8Rng,
}

impl RunState<'_> {
    fn tick(&mut self) -> f64 {
        self.ts += 5.0 + self.rng.gen_range(0..4) as f64;
        self.ts
    }

    fn headers(&self, url: &str, content_type: &str, cookie: Option<String>) -> Vec<(String, String)> {
        let site = if crate::psl::same_site(
            &crate::psl::host_of(url).unwrap_or_default(),
            &crate::psl::host_of(&self.page.page_url).unwrap_or_default(),
        ) {
            "same-origin"
        } else {
            "cross-site"
        };
        let accept = if content_type.contains("javascript") {
            "*/*"
        } else if content_type.contains("html") {
            "text/html,application/xhtml+xml,application/xml;q=0.9,*/*;q=0.8"
        } else {
            "application/json, text/plain, */*"
        };
        let mut h = vec![
            ("accept".to_string(), accept.to_string()),
            ("accept-language".to_string(), "en-US,en;q=0.9".to_string()),
            ("user-agent".to_string(), USER_AGENT.to_string()),
            ("referer".to_string(), self.page.page_url.clone()),
            ("sec-fetch-site".to_string(), site.to_string()),
        ];
        if let Some(c) = cookie {
            h.push(("cookie".to_string(), c));
        }
        h
    }

    /// Emit one request; returns its id and whether a functional field was stripped.
    fn emit(&mut self, spec: &ReqSpec, initiator: &str, iv: Option<&Intervention>) -> (Option<String>, bool) {
        let value = |p: &Param| match &p.value {
            ParamValue::Fixed(v) => v.clone(),
            ParamValue::Stored(k) => self.page.stored_value(k).unwrap_or_default().to_string(),
        };
        let full_url = {
            let pairs: Vec<(String, String)> = spec.params.iter().map(|p| (p.name.clone(), value(p))).collect();
            if pairs.is_empty() {
                spec.base.clone()
            } else {
                format!("{}?{}", spec.base, query_string(&pairs))
            }
        };
        let mut broken = false;
        let mut params = Vec::new();
        for p in &spec.params {
            if iv.is_some_and(|iv| iv.strips(&full_url, FieldKind::QueryParam, &p.name)) {
                broken |= p.functional;
            } else {
                params.push((p.name.clone(), value(p)));
            }
        }
        let mut cookies = Vec::new();
        for c in &spec.cookies {
            if iv.is_some_and(|iv| iv.strips(&full_url, FieldKind::Cookie, &c.name)) {
                broken |= c.functional;
            } else {
                cookies.push(format!("{}={}", c.name, value(c)));
            }
        }
        let url = if params.is_empty() {
            spec.base.clone()
        } else {
            format!("{}?{}", spec.base, query_string(&params))
        };
        let id = format!("r{}", self.next_id);
        self.next_id += 1;
        let blocked = iv.is_some_and(|iv| iv.blocks(&url));
        let cookie_header = (!cookies.is_empty()).then(|| cookies.join("; "));
        let headers = self.headers(&url, &spec.content_type, cookie_header);
        let timestamp = self.tick();
        let (status, body) = if blocked {
            (403, None)
        } else if broken {
            (400, Some(r#"{"error":"bad request"}"#.to_string()))
        } else {
            (200, Some(spec.response.clone()))
        };
        self.trace.requests.push(RequestRecord {
            id: id.clone(),
            direction: Direction::Outgoing,
            initiator: initiator.to_string(),
            method: spec.method.clone(),
            url,
            headers,
            body: String::new(),
            response_status: Some(status),
            response_size: body.as_ref().map(|b| b.len() as u64),
            response_body: body,
            response_content_type: (!blocked).then(|| spec.content_type.clone()),
            timestamp,
            partiness: None,
        });
        if blocked {
            return (None, false);
        }
        if let Some(g) = spec.graph {
            self.trace.graph.insert(id.clone(), g);
        }
        (Some(id), broken)
    }
}

struct Rendered {
    trace: Trace,
    shots: [RgbaImage; 2],
}

fn shade(e: &DomElement) -> u8 {
    (30 + fnv1a(&e.content_hash) % 170) as u8
}

fn draw(img: &mut RgbaImage, r: &Rect, v: u8) {
    let s = SHOT_SCALE as f64;
    let x0 = (r.x / s).floor().max(0.0) as u32;
    let y0 = (r.y / s).floor().max(0.0) as u32;
    let x1 = (((r.x + r.width) / s).ceil() as u32).min(img.width());
    let y1 = (((r.y + r.height) / s).ceil() as u32).min(img.height());
    if r.width < s || r.height < s {
        return;
    }
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, Rgba([v, v, v, 255]));
        }
    }
}

/// Render one run. `run` selects probabilistic modules and seeds the
/// run-level noise.
fn render(page: &PageSpec, run: u32, iv: Option<&Intervention>, seed: u64) -> Rendered {
    let side = iv.map_or_else(|| "vanilla".to_string(), |iv| iv.target.to_string());
    let rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("{}|{side}|{run}", page.name)));
    let mut trace = Trace::empty(page.page_url.clone());
    trace.meta.run_index = run;
    trace.meta.user_agent = USER_AGENT.to_string();
    trace.meta.viewport = VIEWPORT;
    trace.meta.cache_mode = CacheMode::Record;
    trace.meta.blocked_target = iv.map(|iv| iv.target.clone());
    let mut st = RunState {
        page,
        trace,
        ts: 0.0,
        next_id: 1,
        rng,
    };
    let mut load_ms = BASE_LOAD_MS;
    let mut errors = Vec::new();
    let mut texts = Vec::new();
    let mut main = Vec::new();

    for (mi, m) in page.modules.iter().enumerate() {
        if m.only_in_runs.as_ref().is_some_and(|r| !r.contains(&run)) {
            continue;
        }
        let initiator = if mi == 0 {
            page.page_url.clone()
        } else {
            page.modules[0].requests.first().map_or_else(|| page.page_url.clone(), |r| r.base.clone())
        };
        let (root_id, broken) = match m.requests.first() {
            Some(root) => st.emit(root, &initiator, iv),
            None => (Some(String::new()), false),
        };
        if root_id.is_none() {
            errors.extend(m.missing_error.clone());
            continue;
        }
        if let Some(root) = m.requests.first() {
            for child in &m.requests[1..] {
                st.emit(child, &root.base, iv);
            }
        }
        load_ms += m.load_ms;
        for s in &m.stores {
            let noise: u32 = st.rng.gen();
            let t = &mut st.trace;
            match s.kind {
                StoreKind::Cookie => t.storage.cookies.push(Cookie {
                    name: s.key.clone(),
                    value: s.value.clone(),
                    domain: format!(".{}", t.page_site()),
                }),
                StoreKind::Local => {
                    t.storage.local.insert(s.key.clone(), s.value.clone());
                }
                StoreKind::Session => {
                    t.storage.session.insert(s.key.clone(), format!("{}{noise:08x}", s.value));
                }
            }
        }
        let t = &mut st.trace;
        if let (Some(text), Some(root)) = (&m.script, m.requests.first()) {
            t.scripts.push(ScriptRecord {
                text: text.clone(),
                position: SourcePosition::default(),
                source_url: Some(root.base.clone()),
            });
        } else if let Some(text) = &m.script {
            t.scripts.push(ScriptRecord {
                text: text.clone(),
                position: SourcePosition { line: 1, column: 0 },
                source_url: None,
            });
        }
        for l in &m.logs {
            let n = st.rng.gen_range(1..500);
            let ts = st.tick();
            st.trace.console.push(ConsoleEntry {
                level: "info".into(),
                timestamp: ts,
                source: "javascript".into(),
                message: format!("{l} ({n} ms)"),
            });
        }
        if let Some(css) = &m.stylesheet {
            st.trace.appearance.stylesheets.push(css.clone());
        }
        if broken {
            errors.push(format!("{}: request rejected by server", m.name));
            continue;
        }
        let t = &mut st.trace;
        t.dom.extend(m.elements.iter().cloned());
        for (event, i) in &m.listeners {
            t.listeners.push(EventListenerRecord {
                event_type: event.clone(),
                passive: false,
                once: false,
                target: m.elements[*i].clone(),
                handler_text: format!("function(e){{{}.on{event}(e)}}", m.name.replace(['-', ' '], "_")),
            });
        }
        if !m.text.is_empty() {
            texts.push(m.text.clone());
            if m.main_text {
                main.push(m.text.clone());
            }
        }
        t.appearance.fonts.extend(m.fonts.iter().cloned());
        t.appearance.colors.extend(m.colors.iter().cloned());
        t.ad_count += m.ads;
    }

    for e in errors {
        let ts = st.tick();
        st.trace.console.push(ConsoleEntry {
            level: "error".into(),
            timestamp: ts,
            source: "javascript".into(),
            message: e,
        });
    }
    let dcl = st.tick();
    let load = st.tick();
    let mut rng = st.rng;
    let mut trace = st.trace;
    trace.events = vec![
        PageEvent {
            name: "DOMContentLoaded".into(),
            timestamp: dcl,
        },
        PageEvent {
            name: "load".into(),
            timestamp: load,
        },
    ];
    trace.meta.load_time_ms = load_ms;
    let a = &mut trace.appearance;
    a.inner_text = texts.join("\n");
    a.main_text = main.join("\n");
    a.css_classes = trace.dom.iter().flat_map(|e| e.css_classes.iter().cloned()).collect();
    a.tag_sequence = trace.dom.iter().map(|e| e.tag.to_string()).collect();
    a.document_height = trace
        .dom
        .iter()
        .map(|e| e.bounds.y + e.bounds.height)
        .fold(f64::from(VIEWPORT.height), f64::max);
    a.screenshot_path = Some("shot1.png".into());
    a.second_screenshot_path = Some("shot2.png".into());

    let (w, h) = (VIEWPORT.width / SHOT_SCALE, VIEWPORT.height / SHOT_SCALE);
    let mut base = RgbaImage::from_pixel(w, h, Rgba([255, 255, 255, 255]));
    for e in &trace.dom {
        draw(&mut base, &e.bounds, shade(e));
    }
    let mut shots = [base.clone(), base];
    if let Some(c) = &page.carousel {
        draw(&mut shots[0], c, rng.gen_range(0..100));
        draw(&mut shots[1], c, rng.gen_range(150..250));
    }
    Rendered { trace, shots }
}

fn write_run(dir: &Path, r: &Rendered) -> Result<(), PipelineError> {
    save_trace(&r.trace, dir.join("trace.json"))?;
    for (i, shot) in r.shots.iter().enumerate() {
        let p = dir.join(format!("shot{}.png", i + 1));
        shot.save(&p).map_err(|e| PipelineError::BadFile {
            path: p.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Render `k` runs under `dir/run_<i>`.
pub fn capture_runs(
    page: &PageSpec,
    dir: &Path,
    k: usize,
    iv: Option<&Intervention>,
    seed: u64,
) -> Result<Vec<Trace>, PipelineError> {
    let mut out = Vec::new();
    for run in 0..k as u32 {
        let r = render(page, run, iv, seed);
        write_run(&dir.join(format!("run_{run}")), &r)?;
        out.push(r.trace);
    }
    Ok(out)
}

/// Write a complete job: vanilla runs, enumerated targets, source-rule
/// targets and blocked runs for each.
pub fn write_job(root: &Path, page: &PageSpec, k: usize, seed: u64) -> Result<Job, PipelineError> {
    let dir = root.join(&page.name);
    let vanilla = capture_runs(page, &dir.join("vanilla"), k, None, seed)?;
    let thresholds = Thresholds::default();
    let mut targets = enumerate_candidates(&vanilla, CandidateMode::Request, &thresholds, None);
    let skip: Vec<AddressPattern> = page
        .skip_requests
        .iter()
        .filter_map(|p| AddressPattern::parse(p).ok())
        .collect();
    targets.targets.retain(|e| {
        !vanilla[0]
            .requests
            .iter()
            .filter(|r| crate::diff::TargetMatcher::new(&e.target).is_ok_and(|m| m.matches(r)))
            .any(|r| skip.iter().any(|p| p.matches(&r.url)))
    });
    if !page.field_requests.is_empty() {
        let restrict: Vec<TargetRef> = page.field_requests.iter().map(TargetRef::request).collect();
        targets.merge(enumerate_candidates(
            &vanilla,
            CandidateMode::Field,
            &thresholds,
            Some(&restrict),
        ));
    }
    for (i, raw) in page.source_rules.iter().enumerate() {
        let rule = parse_rule(raw).map_err(|e| PipelineError::BadFile {
            path: PathBuf::from(raw),
            reason: e.to_string(),
        })?;
        let flipped = flip_exception(&rule).map_err(|e| PipelineError::BadFile {
            path: PathBuf::from(raw),
            reason: e.to_string(),
        })?;
        targets.targets.push(TargetEntry {
            id: format!("rule-{i:03}"),
            target: TargetRef::request(flipped.pattern.to_string()),
            source_rule: Some(flipped.to_string()),
        });
    }
    for entry in &targets.targets {
        let iv = Intervention::new(entry.target.clone())?;
        capture_runs(page, &dir.join("blocked").join(&entry.id), k, Some(&iv), seed)?;
    }
    let job = Job {
        dir: dir.clone(),
        targets,
        info: JobInfo { rank: page.rank },
    };
    job.save_targets()?;
    let info_path = dir.join(JOB_FILE);
    fs::write(&info_path, serde_json::to_string_pretty(&job.info).expect("job info") + "\n").map_err(|e| {
        PipelineError::Io {
            path: info_path,
            source: e,
        }
    })?;
    Ok(job)
}

fn hex(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap()).collect()
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut s = String::from(char::from_digit(rng.gen_range(1..10), 10).unwrap());
    s.extend((1..n).map(|_| char::from_digit(rng.gen_range(0..10), 10).unwrap()));
    s
}

const WORDS: &[&str] = &[
    "fresh", "daily", "guide", "review", "summer", "classic", "deluxe", "travel", "kitchen", "garden", "city",
    "music", "sport", "weekend", "market", "local", "online", "special", "vintage", "modern", "quick", "easy",
    "family", "outdoor", "season", "premium", "budget", "best", "new", "top",
];

fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Page shell: header, nav buttons, article text, footer.
pub fn document(page_url: &str, title: &str, body: &str) -> Module {
    let mut elements = vec![
        element("div", 0.0, 0.0, 1280.0, 64.0, &["site-header"], title),
        element("button", 900.0, 16.0, 96.0, 32.0, &["nav-btn"], "Menu"),
        element("a", 1010.0, 16.0, 96.0, 32.0, &["nav-link"], "Account"),
        element("main", 80.0, 340.0, 760.0, 400.0, &["content"], ""),
        element("span", 80.0, 760.0, 600.0, 24.0, &["footer-note"], "All rights reserved"),
    ];
    elements[3].inner_text = body.to_string();
    Module {
        name: "document".into(),
        requests: vec![ReqSpec::get(page_url, "text/html", format!("<html><body>{title}</body></html>"))],
        elements,
        listeners: vec![("click".into(), 1), ("click".into(), 2)],
        script: Some("document.querySelector('.nav-btn').addEventListener('click', toggleMenu);".into()),
        text: format!("{title}\n{body}"),
        main_text: true,
        fonts: vec!["Helvetica".into()],
        colors: vec!["#222222".into(), "#ffffff".into()],
        stylesheet: Some("/static/site.css".into()),
        logs: vec!["page ready".into()],
        ..Module::default()
    }
}

/// Third-party analytics: a script that reads a stored id and beacons it.
pub fn analytics(vendor: &str, script_path: &str, cookie: &str, uid: &str, fingerprint_calls: u64) -> Module {
    let body = "(function(){var c=document.createElement('canvas');var d=c.toDataURL();\
                var n=navigator.userAgent+screen.width+navigator.hardwareConcurrency;\
                eval('window.__t='+JSON.stringify(n));})();";
    Module {
        name: format!("analytics {vendor}"),
        requests: vec![
            ReqSpec::script(format!("https://{vendor}/{script_path}"), body).with_graph(GraphMetrics {
                ancestor_eval_count: 0,
                degree: 3,
                ancestor_count: 1,
                fingerprint_api_calls: fingerprint_calls,
            }),
            ReqSpec::get(format!("https://{vendor}/collect"), "image/gif", "GIF89a")
                .with_params(vec![
                    Param::stored("uid", cookie),
                    Param::fixed("ev", "pageview"),
                    Param::fixed("sr", "1280x800"),
                ])
                .with_graph(GraphMetrics {
                    ancestor_eval_count: 1,
                    degree: 1,
                    ancestor_count: 2,
                    fingerprint_api_calls: 0,
                }),
        ],
        script: Some(body.into()),
        stores: vec![Store {
            kind: StoreKind::Cookie,
            key: cookie.into(),
            value: uid.into(),
        }],
        ..Module::default()
    }
}

/// Content block rendered by a script: a section of cards with buttons.
fn cards(name: &str, y: f64, n: usize, label: &str, rng: &mut ChaCha8Rng) -> (Vec<DomElement>, Vec<(String, usize)>, String) {
    let mut elements = vec![element("section", 860.0, y, 380.0, 60.0 + 90.0 * n as f64, &[name, "widget"], label)];
    let mut listeners = Vec::new();
    let mut text = vec![label.to_string()];
    for i in 0..n {
        let t = phrase(rng, 3);
        let cy = y + 50.0 + 90.0 * i as f64;
        elements.push(element("div", 870.0, cy, 360.0, 80.0, &[&format!("{name}-card"), "card"], &t));
        elements.push(element("button", 1120.0, cy + 24.0, 96.0, 32.0, &["card-btn"], "View"));
        listeners.push(("click".to_string(), elements.len() - 1));
        text.push(t);
    }
    (elements, listeners, text.join("\n"))
}

/// Script from a tracking vendor that also renders page content.
pub fn widget(vendor: &str, script_path: &str, beacon_path: &str, cookie: &str, vid: &str, items: usize, fingerprint_calls: u64, rng: &mut ChaCha8Rng) -> Module {
    let body = format!("var Recs={{render:function(el){{/* {} */}}}};Recs.render(document.body);", phrase(rng, 4));
    let (elements, listeners, text) = cards("recs", 80.0, items, "Recommended for you", rng);
    Module {
        name: format!("widget {vendor}"),
        requests: vec![
            ReqSpec::script(format!("https://{vendor}/{script_path}"), body.clone()).with_graph(GraphMetrics {
                ancestor_eval_count: 0,
                degree: 4,
                ancestor_count: 1,
                fingerprint_api_calls: fingerprint_calls,
            }),
            ReqSpec::get(format!("https://{vendor}/{beacon_path}"), "application/json", r#"{"ok":true}"#)
                .with_params(vec![Param::stored("vid", cookie), Param::fixed("pg", "home")]),
        ],
        elements,
        listeners,
        script: Some(body),
        stores: vec![Store {
            kind: StoreKind::Cookie,
            key: cookie.into(),
            value: vid.into(),
        }],
        text,
        fonts: vec!["Roboto".into()],
        colors: vec!["#ff6600".into()],
        load_ms: 180.0,
        missing_error: Some("Uncaught ReferenceError: Recs is not defined".into()),
        ..Module::default()
    }
}

/// Functional script with no tracking behavior.
pub fn library(url: &str, name: &str, items: usize, rng: &mut ChaCha8Rng) -> Module {
    let body = format!("(function(){{window.{name}={{init:function(){{/* {} */}}}};}})();", phrase(rng, 5));
    let (elements, listeners, text) = cards(name, 80.0, items, &format!("{name} menu"), rng);
    Module {
        name: name.into(),
        requests: vec![ReqSpec::script(url, body.clone()).with_graph(GraphMetrics {
            ancestor_eval_count: 0,
            degree: 2,
            ancestor_count: 1,
            fingerprint_api_calls: 0,
        })],
        elements,
        listeners,
        script: Some(body),
        text,
        main_text: true,
        fonts: vec!["Georgia".into()],
        colors: vec!["#0055aa".into()],
        load_ms: 120.0,
        missing_error: Some(format!("Uncaught TypeError: {name}.init is not a function")),
        ..Module::default()
    }
}

/// First-party XHR loading the page's main content. Functional params must
/// be present for the server to answer; tracking params ride along and are
/// persisted in local storage by the page.
pub fn content_xhr(base: &str, functional: &[(&str, &str)], tracking: &[(&str, &str)], title: &str) -> Module {
    let mut params: Vec<Param> = functional.iter().map(|(n, v)| Param::fixed(n, *v).functional()).collect();
    params.extend(tracking.iter().map(|(n, _)| Param::stored(n, n)));
    let response = format!(
        r#"{{"title":"{title}","price":"19.99","images":["a.jpg","b.jpg","c.jpg"],"description":"{}"}}"#,
        "x".repeat(400)
    );
    let elements = vec![
        element("div", 80.0, 340.0, 760.0, 240.0, &["product", "hero"], title),
        element("img", 100.0, 360.0, 200.0, 200.0, &["product-image"], ""),
        element("button", 600.0, 520.0, 180.0, 40.0, &["add-to-cart"], "Add to cart"),
        element("input", 480.0, 520.0, 100.0, 40.0, &["qty"], ""),
    ];
    Module {
        name: "product".into(),
        requests: vec![ReqSpec::get(base, "application/json", response).with_params(params)],
        elements,
        listeners: vec![("click".into(), 2), ("change".into(), 3)],
        stores: tracking
            .iter()
            .map(|(n, v)| Store {
                kind: StoreKind::Local,
                key: n.to_string(),
                value: v.to_string(),
            })
            .collect(),
        text: format!("{title}\nAdd to cart"),
        main_text: true,
        load_ms: 90.0,
        missing_error: Some("product data unavailable".into()),
        ..Module::default()
    }
}

/// First-party logging endpoint sending a stored session id.
pub fn first_party_log(site_url: &str, cookie: &str, sid: &str) -> Module {
    Module {
        name: "log".into(),
        requests: vec![ReqSpec::get(format!("{site_url}api/log"), "text/plain", "ok")
            .with_params(vec![Param::stored("sid", cookie), Param::fixed("ev", "view")])],
        stores: vec![Store {
            kind: StoreKind::Cookie,
            key: cookie.into(),
            value: sid.into(),
        }],
        ..Module::default()
    }
}

/// Survey dialog that shows up only in some runs.
pub fn survey(vendor: &str, runs: Vec<u32>) -> Module {
    let body = "Survey.show({delay:2000});";
    Module {
        name: "survey".into(),
        requests: vec![ReqSpec::script(format!("https://{vendor}/s.js"), body)],
        elements: vec![
            element("div", 400.0, 200.0, 480.0, 300.0, &["survey-dialog", "modal"], "Tell us about your visit"),
            element("button", 760.0, 440.0, 96.0, 32.0, &["survey-close"], "Close"),
        ],
        listeners: vec![("click".into(), 1)],
        script: Some(body.into()),
        text: "Tell us about your visit".into(),
        load_ms: 60.0,
        only_in_runs: Some(runs),
        ..Module::default()
    }
}

fn carousel() -> Option<Rect> {
    Some(Rect::new(0.0, 80.0, 840.0, 240.0))
}

fn page(name: &str, url: &str, rank: Option<u64>, modules: Vec<Module>) -> PageSpec {
    PageSpec {
        name: name.into(),
        page_url: url.into(),
        rank,
        modules,
        carousel: carousel(),
        field_requests: Vec::new(),
        source_rules: Vec::new(),
        skip_requests: Vec::new(),
    }
}

pub const FENDER_EXCEPTION: &str = "@@||cdn.cquotient.com^*/gretel.min.js$script,domain=fender.com";
pub const TEMU_LANDING: &str = "https://www.temu.com/subject/n9/googleshopping-landingpage-a-psurl.html";
pub const MSCLKID: &str = "eeec99c83e911b00583ffc4bc3e34060";

/// Expected outcome for one target of a canonical job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    /// `TargetRef` display form.
    pub target: String,
    pub decision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobExpectation {
    pub job: String,
    pub expect: Vec<Expectation>,
    /// URL patterns that must not appear among the targets.
    #[serde(default)]
    pub absent: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionExpectation {
    pub rule: String,
    /// `emitted` or the discard reason.
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub k: usize,
    pub jobs: Vec<JobExpectation>,
    /// Exception rules exercised against the suite.
    pub lists: Vec<String>,
    pub reconstruction: Vec<ReconstructionExpectation>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::BadFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

fn expect(target: TargetRef, decision: &str, rule: Option<&str>) -> Expectation {
    Expectation {
        target: target.to_string(),
        decision: decision.into(),
        rule: rule.map(str::to_string),
    }
}

/// The canonical pages and what detection should say about them.
pub fn canonical_pages() -> (Vec<PageSpec>, Manifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pages = Vec::new();
    let mut jobs = Vec::new();

    pages.push(page(
        "pure_tracker",
        "https://www.dailyrecipes.com/",
        Some(120),
        vec![
            document("https://www.dailyrecipes.com/", "Daily Recipes", "Slow cooked beans with garlic and thyme"),
            analytics("analytics.trackco.net", "t.js", "_tc_uid", "5f2b9c1e7a4d4e0fb1c2d3e4f5a6b7c8", 9),
        ],
    ));
    jobs.push(JobExpectation {
        job: "pure_tracker".into(),
        expect: vec![
            expect(
                TargetRef::request("|https://analytics.trackco.net/t.js"),
                "tracker",
                Some("||analytics.trackco.net/t.js"),
            ),
            expect(
                TargetRef::request("|https://analytics.trackco.net/collect"),
                "tracker",
                Some("||analytics.trackco.net/collect"),
            ),
        ],
        absent: Vec::new(),
    });

    pages.push(page(
        "functional_script",
        "https://www.outdoorgear.com/",
        Some(340),
        vec![
            document("https://www.outdoorgear.com/", "Outdoor Gear", "Tents, packs and boots for every trail"),
            widget(
                "widgets.recsvendor.net",
                "v2/recs.js",
                "v2/event",
                "_rv_vid",
                "a81f3c2d9e0b4c7d8e9f0a1b2c3d4e5f",
                3,
                2,
                &mut rng,
            ),
        ],
    ));
    jobs.push(JobExpectation {
        job: "functional_script".into(),
        expect: vec![
            expect(TargetRef::request("|https://widgets.recsvendor.net/v2/recs.js"), "mixed_candidate", None),
            expect(
                TargetRef::request("|https://widgets.recsvendor.net/v2/event"),
                "tracker",
                Some("||widgets.recsvendor.net/v2/event"),
            ),
        ],
        absent: Vec::new(),
    });

    let mut temu = page(
        "mixed_request",
        "https://www.temu.com/",
        Some(90),
        vec![
            document("https://www.temu.com/", "Temu", "Shop like a billionaire"),
            content_xhr(
                TEMU_LANDING,
                &[("goods_id", "601099526089385"), ("sku_id", "17592258865022")],
                &[("_x_ns_msclkid", MSCLKID)],
                "Wireless earbuds with charging case",
            ),
        ],
    );
    temu.field_requests = vec![format!("|{TEMU_LANDING}")];
    pages.push(temu);
    let field = |name: &str, value: &str| TargetRef::field(format!("|{TEMU_LANDING}"), crate::trace::RequestField::query(name, value));
    jobs.push(JobExpectation {
        job: "mixed_request".into(),
        expect: vec![
            expect(TargetRef::request(format!("|{TEMU_LANDING}")), "non_tracker", None),
            expect(field("goods_id", ""), "non_tracker", None),
            expect(field("sku_id", ""), "non_tracker", None),
            expect(
                field("_x_ns_msclkid", ""),
                "tracking_field",
                Some("||temu.com^$removeparam=_x_ns_msclkid"),
            ),
        ],
        absent: Vec::new(),
    });

    let mut fender = page(
        "exception_breakage",
        "https://www.fender.com/",
        Some(2100),
        vec![
            document("https://www.fender.com/", "Fender", "Electric guitars, basses and amplifiers"),
            widget(
                "cdn.cquotient.com",
                "js/v3/gretel.min.js",
                "v3/activities/view",
                "cqcid",
                "bcZp7kQx2sL9mN4vR8tW1yA3",
                4,
                0,
                &mut rng,
            ),
        ],
    );
    fender.source_rules = vec![FENDER_EXCEPTION.into()];
    pages.push(fender);
    jobs.push(JobExpectation {
        job: "exception_breakage".into(),
        expect: vec![
            expect(TargetRef::request("|https://cdn.cquotient.com/js/v3/gretel.min.js"), "mixed_candidate", None),
            expect(
                TargetRef::request("|https://cdn.cquotient.com/v3/activities/view"),
                "tracker",
                Some("||cdn.cquotient.com/v3/activities/view"),
            ),
        ],
        absent: Vec::new(),
    });

    pages.push(page(
        "probabilistic_noise",
        "https://www.citynews.com/",
        Some(800),
        vec![
            document("https://www.citynews.com/", "City News", "Council approves new bike lanes downtown"),
            analytics("stats.metricly.io", "m.js", "_mt_id", "0c1d2e3f4a5b6c7d8e9f0a1b2c3d4e5f", 5),
            survey("survey.pollster.io", vec![0]),
        ],
    ));
    jobs.push(JobExpectation {
        job: "probabilistic_noise".into(),
        expect: vec![
            expect(TargetRef::request("|https://stats.metricly.io/m.js"), "tracker", Some("||stats.metricly.io/m.js")),
            expect(
                TargetRef::request("|https://stats.metricly.io/collect"),
                "tracker",
                Some("||stats.metricly.io/collect"),
            ),
        ],
        absent: vec!["|https://survey.pollster.io/s.js".into()],
    });

    pages.push(page(
        "first_party_library",
        "https://www.localbakery.com/",
        Some(4000),
        vec![
            document("https://www.localbakery.com/", "Local Bakery", "Sourdough baked every morning"),
            library("https://www.localbakery.com/static/menu.js", "Menu", 3, &mut rng),
        ],
    ));
    jobs.push(JobExpectation {
        job: "first_party_library".into(),
        expect: vec![expect(
            TargetRef::request("|https://www.localbakery.com/static/menu.js"),
            "non_tracker",
            None,
        )],
        absent: Vec::new(),
    });

    let mut empty = page("empty_page", "https://www.blankpage.com/", Some(10), vec![Module {
        name: "document".into(),
        requests: vec![ReqSpec::get("https://www.blankpage.com/", "text/html", "<html></html>")],
        ..Module::default()
    }]);
    empty.carousel = None;
    pages.push(empty);
    jobs.push(JobExpectation {
        job: "empty_page".into(),
        expect: Vec::new(),
        absent: Vec::new(),
    });

    let lists = vec![
        "||cdn.cquotient.com^$third-party".to_string(),
        FENDER_EXCEPTION.to_string(),
        "@@||cdn.cquotient.com^*/einstein.min.js$script,domain=fender.com".to_string(),
        "@@||static.sharedcdn.net/widgets.js".to_string(),
        "@@||cdn.shopkit.io/cart.js$domain=nosuchjob.com".to_string(),
    ];
    let reconstruction = vec![
        ReconstructionExpectation {
            rule: FENDER_EXCEPTION.into(),
            outcome: "emitted".into(),
            blocked_count: Some(1),
        },
        ReconstructionExpectation {
            rule: lists[2].clone(),
            outcome: "blocks no resources".into(),
            blocked_count: None,
        },
        ReconstructionExpectation {
            rule: lists[3].clone(),
            outcome: "ambiguous target".into(),
            blocked_count: None,
        },
        ReconstructionExpectation {
            rule: lists[4].clone(),
            outcome: "no job for domain nosuchjob.com".into(),
            blocked_count: None,
        },
    ];
    (
        pages,
        Manifest {
            schema_version: TARGETS_SCHEMA_VERSION,
            k: crate::diff::DEFAULT_K,
            jobs,
            lists,
            reconstruction,
        },
    )
}

/// Write the canonical suite and its manifest under `root`.
pub fn write_suite(root: &Path, seed: u64) -> Result<Manifest, PipelineError> {
    let (pages, manifest) = canonical_pages();
    for p in &pages {
        write_job(root, p, manifest.k, seed)?;
    }
    write_text(&root.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest).expect("manifest") + "\n"))?;
    write_text(&root.join(LIST_FILE), &(manifest.lists.join("\n") + "\n"))?;
    Ok(manifest)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| PipelineError::Io {
            path: d.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Popular pages with analytics trackers.
    pub tracker_sites: usize,
    /// Popular pages whose broken widget is fixed by an exception rule.
    pub exception_sites: usize,
    /// Unpopular pages where a widget stays blocked.
    pub mixed_sites: usize,
    /// Pages with first-party functional scripts and logging.
    pub library_sites: usize,
    /// Pages with a content request mixing functional and tracking params.
    pub field_sites: usize,
    pub popularity_cutoff: u64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            tracker_sites: 6,
            exception_sites: 5,
            mixed_sites: 4,
            library_sites: 5,
            field_sites: 5,
            popularity_cutoff: 5_000,
            seed: 1,
        }
    }
}

const TLDS: &[&str] = &["com", "net", "org", "io", "co.uk", "de"];
const CLICK_IDS: &[&str] = &["gclid", "fbclid", "msclkid", "yclid", "_x_ns_msclkid", "mc_eid", "ttclid", "dclid"];
const FUNCTIONAL_PARAMS: &[&str] = &["goods_id", "product_id", "item", "sku", "variant", "article_id"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub jobs: usize,
    pub lists: PathBuf,
}

/// Randomized training jobs plus the filter list that labels them.
pub fn write_corpus(root: &Path, cfg: &CorpusConfig, k: usize) -> Result<CorpusSummary, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lists: Vec<String> = CLICK_IDS.iter().map(|c| format!("$removeparam={c}")).collect();
    lists.push("/api/log?".into());
    let mut pages = Vec::new();
    let mut n = 0usize;
    let mut site = |rng: &mut ChaCha8Rng, prefix: &str| {
        n += 1;
        let tld = TLDS[rng.gen_range(0..TLDS.len())];
        format!("https://www.{prefix}{n}{}.{tld}/", WORDS[rng.gen_range(0..WORDS.len())])
    };
    let vendor = |rng: &mut ChaCha8Rng, kind: &str| {
        let w = WORDS[rng.gen_range(0..WORDS.len())];
        format!("{kind}.{w}{}.net", rng.gen_range(10..99))
    };
    let popular = |rng: &mut ChaCha8Rng| Some(rng.gen_range(1..cfg.popularity_cutoff));
    let unpopular = |rng: &mut ChaCha8Rng| Some(rng.gen_range(cfg.popularity_cutoff + 1..cfg.popularity_cutoff * 20));

    for i in 0..cfg.tracker_sites {
        let url = site(&mut rng, "news");
        let v = vendor(&mut rng, "metrics");
        lists.push(format!("||{v}^$third-party"));
        let title = phrase(&mut rng, 2);
        let body = phrase(&mut rng, 8);
        let uid = hex(&mut rng, 32);
        let fp = rng.gen_range(1..12);
        let mut modules = vec![
            document(&url, &title, &body),
            analytics(&v, if i % 2 == 0 { "js/tag.js" } else { "a.js" }, "_uid", &uid, fp),
        ];
        if i % 2 == 1 {
            let lib_host = vendor(&mut rng, "static");
            modules.push(library(&format!("https://{lib_host}/lib/slider.min.js"), "Slider", rng.gen_range(1..4), &mut rng));
        }
        pages.push(page(&format!("trackers-{i:02}"), &url, popular(&mut rng), modules));
    }

    for i in 0..cfg.exception_sites {
        let url = site(&mut rng, "shop");
        let v = vendor(&mut rng, "cdn");
        let host = crate::psl::host_of(&url).unwrap_or_default();
        let domain = crate::psl::registrable_domain(&host);
        lists.push(format!("||{v}^$third-party"));
        let exception = format!("@@||{v}^*/widget.js$script,domain={domain}");
        lists.push(exception.clone());
        let title = phrase(&mut rng, 2);
        let body = phrase(&mut rng, 8);
        let vid = hex(&mut rng, 24);
        let fp = rng.gen_range(0..6);
        let items = rng.gen_range(2..5);
        let mut p = page(
            &format!("exception-{i:02}"),
            &url,
            popular(&mut rng),
            vec![
                document(&url, &title, &body),
                widget(&v, "w/widget.js", "w/ping", "_wv", &vid, items, fp, &mut rng),
            ],
        );
        p.source_rules = vec![exception];
        p.skip_requests = vec![format!("||{v}^")];
        pages.push(p);
    }

    for i in 0..cfg.mixed_sites {
        let url = site(&mut rng, "blog");
        let v = vendor(&mut rng, "recs");
        lists.push(format!("||{v}^$third-party"));
        let title = phrase(&mut rng, 2);
        let body = phrase(&mut rng, 8);
        let vid = hex(&mut rng, 32);
        let fp = rng.gen_range(0..6);
        let items = rng.gen_range(2..5);
        pages.push(page(
            &format!("mixed-{i:02}"),
            &url,
            unpopular(&mut rng),
            vec![
                document(&url, &title, &body),
                widget(&v, "embed/recs.js", "embed/event", "_rv", &vid, items, fp, &mut rng),
            ],
        ));
    }

    for i in 0..cfg.library_sites {
        let url = site(&mut rng, "cafe");
        let title = phrase(&mut rng, 2);
        let body = phrase(&mut rng, 8);
        let sid = hex(&mut rng, 32);
        let items = rng.gen_range(1..4);
        let mut modules = vec![
            document(&url, &title, &body),
            library(&format!("{url}static/app.js"), "App", items, &mut rng),
            first_party_log(&url, "_sid", &sid),
        ];
        if i % 2 == 0 {
            let lib_host = vendor(&mut rng, "cdnjs");
            modules.push(library(&format!("https://{lib_host}/libs/tabs.js"), "Tabs", 2, &mut rng));
        }
        pages.push(page(&format!("library-{i:02}"), &url, popular(&mut rng), modules));
    }

    for i in 0..cfg.field_sites {
        let url = site(&mut rng, "store");
        let title = phrase(&mut rng, 2);
        let body = phrase(&mut rng, 8);
        let base = format!("{url}api/product");
        let f1 = FUNCTIONAL_PARAMS[i % FUNCTIONAL_PARAMS.len()];
        let f2 = FUNCTIONAL_PARAMS[(i + 2) % FUNCTIONAL_PARAMS.len()];
        let t1 = CLICK_IDS[i % CLICK_IDS.len()];
        let (v1, v2) = (digits(&mut rng, 15), digits(&mut rng, 12));
        let c1 = hex(&mut rng, 32);
        let mut p = page(
            &format!("fields-{i:02}"),
            &url,
            popular(&mut rng),
            vec![
                document(&url, &title, &body),
                content_xhr(&base, &[(f1, &v1), (f2, &v2)], &[(t1, &c1)], &phrase(&mut rng, 4)),
            ],
        );
        p.field_requests = vec![format!("|{base}")];
        pages.push(p);
    }

    for p in &pages {
        write_job(root, p, k, cfg.seed)?;
    }
    let list_path = root.join(LIST_FILE);
    write_text(&list_path, &(lists.join("\n") + "\n"))?;
    Ok(CorpusSummary {
        jobs: pages.len(),
        lists: list_path,
    })
}

/// `job name -> targets`, for inspecting a written suite.
pub fn suite_targets(root: &Path) -> Result<BTreeMap<String, TargetsFile>, PipelineError> {
    Ok(crate::pipeline::list_jobs(root)?
        .into_iter()
        .map(|j| (j.name(), j.targets))
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub verdicts: BTreeMap<String, Vec<crate::pipeline::Verdict>>,
    pub mismatches: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Run detection over every job in the manifest and compare.
pub fn check_suite(
    root: &Path,
    manifest: &Manifest,
    detector: &crate::pipeline::Detector,
) -> Result<SuiteReport, PipelineError> {
    let mut report = SuiteReport::default();
    for je in &manifest.jobs {
        let job = Job::open(root.join(&je.job))?;
        let mut verdicts = detector.detect_job(&job, TargetKind::Request)?;
        if job.targets.targets.iter().any(|e| e.target.kind == TargetKind::Field) {
            verdicts.extend(detector.detect_job(&job, TargetKind::Field)?);
        }
        for pat in &je.absent {
            if job.targets.targets.iter().any(|e| &e.target.url_pattern == pat) {
                report.mismatches.push(format!("{}: {pat} should not be a target", je.job));
            }
        }
        for v in &verdicts {
            let t = v.target.to_string();
            let Some(e) = je.expect.iter().find(|e| e.target == t) else {
                report.mismatches.push(format!("{}: unexpected target {t} ({})", je.job, v.decision));
                continue;
            };
            if e.decision != v.decision.as_str() {
                report.mismatches.push(format!(
                    "{}: {t}: expected {}, got {} (tracker {:.3}, breakage {:.3})",
                    je.job, e.decision, v.decision, v.tracker_prob, v.breakage_prob
                ));
            }
            let rule = v.emitted_rule.as_ref().map(|r| r.to_string());
            if e.rule != rule {
                report
                    .mismatches
                    .push(format!("{}: {t}: expected rule {:?}, got {rule:?}", je.job, e.rule));
            }
        }
        for e in &je.expect {
            if !verdicts.iter().any(|v| v.target.to_string() == e.target) {
                report.mismatches.push(format!("{}: no verdict for {}", je.job, e.target));
            }
        }
        report.verdicts.insert(je.job.clone(), verdicts);
    }
    Ok(report)
}

/// Reconstruct the manifest's exception rules against the suite and compare.
pub fn check_reconstruction(
    root: &Path,
    manifest: &Manifest,
    ctx: &crate::diff::DiffContext,
) -> Result<(crate::pipeline::Reconstruction, Vec<String>), PipelineError> {
    let lists = crate::rules::RuleSet::parse(&manifest.lists.join("\n"));
    let rec = crate::pipeline::reconstruct_breakage_samples(&lists, root, manifest.k, ctx)?;
    let mut mismatches = Vec::new();
    for e in &manifest.reconstruction {
        let Ok(rule) = parse_rule(&e.rule) else {
            mismatches.push(format!("{}: does not parse", e.rule));
            continue;
        };
        let sample = rec.samples.iter().find(|s| s.exception == rule);
        let discard = rec.discarded.iter().find(|d| d.exception == rule);
        match (e.outcome.as_str(), sample, discard) {
            ("emitted", Some(s), _) => {
                if e.blocked_count.is_some_and(|n| n != s.blocked_count) {
                    mismatches.push(format!("{}: blocked {} (expected {:?})", e.rule, s.blocked_count, e.blocked_count));
                }
            }
            (reason, None, Some(d)) if d.reason.to_string() == reason => {}
            (want, _, _) => mismatches.push(format!(
                "{}: expected {want}, got {}",
                e.rule,
                sample.map_or_else(
                    || discard.map_or("nothing".to_string(), |d| d.reason.to_string()),
                    |_| "emitted".to_string()
                )
            )),
        }
    }
    Ok((rec, mismatches))
}
