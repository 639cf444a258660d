#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use trackdiff::trace::*;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn read_data(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap()
}

pub const HOSTS: &[&str] = &[
    "www.shop.com",
    "cdn.shop.com",
    "analytics.trackco.net",
    "static.sharedcdn.net",
    "ads.bidhub.io",
    "api.payments.co.uk",
    "img.payments.co.uk",
    "widgets.recsvendor.net",
];

pub const WORDS: &[&str] = &[
    "cart", "item", "view", "load", "user", "page", "event", "pixel", "sync", "beacon", "menu",
    "price", "search", "login", "promo", "feed",
];

pub fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).unwrap()
}

pub fn word(rng: &mut ChaCha8Rng) -> String {
    pick(rng, WORDS).to_string()
}

pub fn alnum(rng: &mut ChaCha8Rng, len: usize) -> String {
    const CS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    (0..len).map(|_| CS[rng.gen_range(0..CS.len())] as char).collect()
}

pub fn random_url(rng: &mut ChaCha8Rng) -> String {
    let host = pick(rng, HOSTS);
    let depth = rng.gen_range(1..4);
    let path: Vec<String> = (0..depth).map(|_| word(rng)).collect();
    let ext = pick(rng, &["", ".js", ".gif", ".json"]).to_string();
    let mut url = format!("https://{host}/{}{ext}", path.join("/"));
    let n = rng.gen_range(0..4);
    for i in 0..n {
        url.push(if i == 0 { '?' } else { '&' });
        let v = if rng.gen_bool(0.3) { alnum(rng, 16) } else { word(rng) };
        url.push_str(&format!("{}={v}", word(rng)));
    }
    url
}

pub fn request(id: &str, initiator: &str, url: &str, ts: f64) -> RequestRecord {
    RequestRecord {
        id: id.into(),
        direction: Direction::Outgoing,
        initiator: initiator.into(),
        method: "GET".into(),
        url: url.into(),
        headers: vec![("accept".into(), "*/*".into())],
        body: String::new(),
        response_status: Some(200),
        response_body: None,
        response_size: None,
        response_content_type: None,
        timestamp: ts,
        partiness: None,
    }
}

fn element(rng: &mut ChaCha8Rng) -> DomElement {
    let tag = pick(rng, &["div", "button", "a", "img", "iframe", "span", "input", "canvas", "main"]);
    let mut el = DomElement::new(
        *tag,
        Rect::new(
            rng.gen_range(0..1200) as f64,
            rng.gen_range(0..3000) as f64,
            rng.gen_range(1..600) as f64,
            rng.gen_range(1..400) as f64,
        ),
    )
    .with_classes(&[pick(rng, WORDS)]);
    el.content_hash = format!("{:08x}", rng.gen::<u32>());
    if rng.gen_bool(0.3) {
        el.attributes.insert("id".into(), word(rng));
    }
    el
}

/// A vanilla trace with every component populated but no screenshots.
pub fn random_trace(rng: &mut ChaCha8Rng) -> Trace {
    let page = "https://www.shop.com/";
    let mut t = Trace::empty(page);
    t.meta.user_agent = "fixture".into();
    t.meta.load_time_ms = rng.gen_range(500..5000) as f64;
    let mut ts = 0.0;
    let n = rng.gen_range(1..12);
    for i in 0..n {
        ts += rng.gen_range(0..50) as f64;
        let url = if i == 0 { page.to_string() } else { random_url(rng) };
        let mut r = request(&format!("r{i}"), page, &url, ts);
        if rng.gen_bool(0.3) {
            r.method = "POST".into();
            r.body = format!("{{\"{}\":\"{}\"}}", word(rng), alnum(rng, 12));
        }
        if rng.gen_bool(0.4) {
            r.headers.push(("cookie".into(), format!("uid={}; lang=en", alnum(rng, 20))));
        }
        if rng.gen_bool(0.5) {
            r.response_body = Some(format!("function {}(){{return eval('x')}}", word(rng)));
        }
        r.response_size = Some(rng.gen_range(0..50_000));
        t.graph.insert(
            r.id.clone(),
            GraphMetrics {
                ancestor_eval_count: rng.gen_range(0..3),
                degree: rng.gen_range(0..5),
                ancestor_count: rng.gen_range(0..5),
                fingerprint_api_calls: rng.gen_range(0..3),
            },
        );
        t.requests.push(r);
    }
    for _ in 0..rng.gen_range(0..20) {
        t.dom.push(element(rng));
    }
    let mut ets = 0.0;
    for name in ["DOMContentLoaded", "load"] {
        ets += rng.gen_range(1..400) as f64;
        t.events.push(PageEvent {
            name: name.into(),
            timestamp: ets,
        });
    }
    for _ in 0..rng.gen_range(0..6) {
        t.listeners.push(EventListenerRecord {
            event_type: pick(rng, &["click", "scroll", "mousemove", "submit"]).to_string(),
            passive: rng.gen_bool(0.5),
            once: false,
            target: element(rng),
            handler_text: format!("{}()", word(rng)),
        });
    }
    for _ in 0..rng.gen_range(0..4) {
        t.scripts.push(ScriptRecord {
            text: format!("var {} = {};", word(rng), rng.gen::<u16>()),
            position: SourcePosition::default(),
            source_url: None,
        });
    }
    t.appearance.inner_text = (0..rng.gen_range(0..30)).map(|_| word(rng)).collect::<Vec<_>>().join(" ");
    t.appearance.main_text = t.appearance.inner_text.clone();
    t.appearance.css_classes = (0..rng.gen_range(0..10)).map(|_| word(rng)).collect();
    t.appearance.tag_sequence = t.dom.iter().map(|e| e.tag.to_string()).collect();
    t.appearance.document_height = rng.gen_range(800..5000) as f64;
    t.appearance.fonts.insert("Inter".into());
    t.storage.local = BTreeMap::from([("k".to_string(), alnum(rng, 24))]);
    t.storage.cookies.push(Cookie {
        name: "sid".into(),
        value: alnum(rng, 16),
        domain: "shop.com".into(),
    });
    t.console.push(ConsoleEntry {
        level: "info".into(),
        timestamp: 1.0,
        source: String::new(),
        message: format!("ready {}", word(rng)),
    });
    t.ad_count = rng.gen_range(0..4);
    t.validate().unwrap();
    t
}

/// `trace` relabelled as a blocked run of `target` with nothing removed.
pub fn as_blocked(trace: &Trace, target: TargetRef) -> Trace {
    let mut b = trace.clone();
    b.meta.blocked_target = Some(target);
    b
}

pub struct SuiteEnv {
    pub dir: tempfile::TempDir,
    pub suite: PathBuf,
    pub corpus: PathBuf,
    pub manifest: trackdiff::fixtures::Manifest,
    pub sets: trackdiff::pipeline::TrainingSets,
    pub models: trackdiff::pipeline::Models,
}

/// Training corpus, fixture suite and models trained on the corpus.
pub fn build_suite(seed: u64) -> SuiteEnv {
    use trackdiff::fixtures::{write_corpus, write_suite, CorpusConfig};
    use trackdiff::pipeline::{build_training_sets, load_lists, train_models, TrainingConfig};

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let suite = dir.path().join("suite");
    let summary = write_corpus(&corpus, &CorpusConfig::default(), 3).unwrap();
    let manifest = write_suite(&suite, seed).unwrap();
    let lists = load_lists(&[summary.lists]).unwrap();
    let ctx = trackdiff::diff::DiffContext::default();
    let sets = build_training_sets(&corpus, &lists, &TrainingConfig::default(), &ctx).unwrap();
    let models = train_models(&sets, &trackdiff::classifier::TrainParams::default()).unwrap();
    SuiteEnv {
        dir,
        suite,
        corpus,
        manifest,
        sets,
        models,
    }
}
