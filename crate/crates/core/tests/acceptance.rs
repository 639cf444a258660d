//! One PASS/FAIL line per acceptance criterion. The test fails if any
//! criterion fails, after every line has been printed.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackdiff::classifier::{self, Dataset, TrainParams};
use trackdiff::diff::{self, Component, ComponentDiff, DiffContext, RawDiff};
use trackdiff::entropy::{self, Thresholds};
use trackdiff::features::{self, RegistryKind};
use trackdiff::fixtures;
use trackdiff::pipeline::{self, DetectConfig, Detector};
use trackdiff::rules::{self, Decision, RuleSet};
use trackdiff::similarity;
use trackdiff::trace::{self, RequestRecord, TargetRef};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("rule engine round-trip", c1_rule_round_trip),
        ("exception flipping", c2_flipping),
        ("fuzzy request matching", c3_fuzzy_matching),
        ("consensus voting", c4_consensus),
        ("feature extraction", c5_features),
        ("entropy", c6_entropy),
        ("classifier", c7_classifier),
        ("end-to-end suite", c8_end_to_end),
        ("reconstruction accounting", c9_reconstruction),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                println!("criterion {n} FAIL  {name}: {why} [{secs:.2}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn c1_rule_round_trip() -> Outcome {
    let text = read_data("filters_corpus.txt");
    let t0 = Instant::now();
    let parsed = rules::parse_list(&text);
    let mut fixed = 0;
    for rule in &parsed.rules.rules {
        let emitted = rule.to_string();
        let reparsed = rules::parse_rule(&emitted).map_err(|e| format!("`{emitted}` does not reparse: {e}"))?;
        ensure!(reparsed == *rule, "`{}` changed meaning after emit as `{emitted}`", rule.raw);
        ensure!(reparsed.to_string() == emitted, "`{emitted}` is not a fixed point");
        fixed += 1;
    }
    let elapsed = t0.elapsed();
    for (line, e) in &parsed.skipped {
        ensure!(
            matches!(e, rules::RuleError::UnsupportedRule(_)),
            "line {line} rejected: {e}"
        );
    }
    let all = &parsed.rules.rules;
    ensure!(all.len() >= 200, "only {} network rules in the corpus", all.len());
    let kinds = [
        ("block", all.iter().any(|r| !r.exception && !r.is_field_rule())),
        ("exception", all.iter().any(|r| r.exception)),
        ("domain", all.iter().any(|r| r.options.domains().next().is_some())),
        ("removeparam", all.iter().any(|r| r.options.removeparam().is_some())),
        ("cookie", all.iter().any(|r| r.options.cookie().is_some())),
        ("opaque", all.iter().any(|r| !r.options.opaque().is_empty())),
    ];
    for (kind, present) in kinds {
        ensure!(present, "corpus has no {kind} rule");
    }
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{fixed}/{} rules at a fixed point in {elapsed:?}", all.len()))
}

const SITES: &[&str] = &["www.shop.com", "news.payments.co.uk", "fender.com", "blog.example.org"];

fn exception_case(rng: &mut ChaCha8Rng) -> String {
    let host = pick(rng, HOSTS).to_string();
    let reg = trackdiff::psl::registrable_domain(&host);
    let w = word(rng);
    let pattern = match rng.gen_range(0..6) {
        0 => format!("||{reg}^"),
        1 => format!("||{host}/{w}"),
        2 => format!("|https://{host}/{w}/"),
        3 => format!("/{w}/*"),
        4 => format!("||{reg}/*/{w}^"),
        _ => format!("{w}.js|"),
    };
    let mut opts: Vec<String> = Vec::new();
    if rng.gen_bool(0.4) {
        opts.push(pick(rng, &["script", "image", "xmlhttprequest", "important"]).to_string());
    }
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(1..3);
        let chosen: Vec<&str> = SITES.choose_multiple(rng, n).copied().collect();
        let mut d = Vec::new();
        for s in chosen {
            let reg = trackdiff::psl::registrable_domain(s);
            d.push(if rng.gen_bool(0.2) { format!("~{reg}") } else { reg });
        }
        opts.push(format!("domain={}", d.join("|")));
    }
    if rng.gen_bool(0.3) {
        opts.push(pick(rng, &["third-party", "~third-party"]).to_string());
    }
    if opts.is_empty() {
        format!("@@{pattern}")
    } else {
        format!("@@{pattern}${}", opts.join(","))
    }
}

fn c2_flipping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let catch_all = rules::parse_rule("*").map_err(|e| e.to_string())?;
    let mut total_exempt = 0;
    let mut vacuous = 0;
    for case in 0..50 {
        let raw = exception_case(&mut rng);
        let exception = rules::parse_rule(&raw).map_err(|e| format!("{raw}: {e}"))?;
        let flipped = rules::flip_exception(&exception).map_err(|e| e.to_string())?;
        ensure!(!flipped.exception && flipped.pattern == exception.pattern, "case {case}: bad flip of {raw}");
        let original = RuleSet::new(vec![catch_all.clone(), exception.clone()]);
        let flipped_set = RuleSet::new(vec![flipped.clone()]);
        let mut exempt = 0;
        for i in 0..200 {
            let page = format!("https://{}/", pick(&mut rng, SITES));
            let url = if i % 4 == 0 {
                let w = word(&mut rng);
                let host = pick(&mut rng, HOSTS);
                format!("https://{host}/{}/{w}.js", word(&mut rng))
            } else {
                random_url(&mut rng)
            };
            let req = request("r", &page, &url, 0.0);
            let a = rules::match_request(&original, &req, &page).decision;
            let b = rules::match_request(&flipped_set, &req, &page).decision;
            ensure!(
                (a == Decision::Exempt) == (b == Decision::Block),
                "case {case}: {raw} on {url} from {page}: original {a:?}, flipped {b:?}"
            );
            if a == Decision::Exempt {
                exempt += 1;
            }
        }
        total_exempt += exempt;
        if exempt == 0 {
            vacuous += 1;
        }
    }
    ensure!(vacuous < 25, "{vacuous}/50 cases exempted nothing");
    Ok(format!(
        "50 cases x 200 requests, 0 counterexamples, {total_exempt} exempted requests ({vacuous} cases with none)"
    ))
}

/// Token counts as a dense vector over the union vocabulary.
fn oracle_tokens(text: &str) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            *out.entry(cur.to_lowercase()).or_insert(0) += 1;
            cur.clear();
        }
    }
    if !cur.is_empty() {
        *out.entry(cur.to_lowercase()).or_insert(0) += 1;
    }
    out
}

/// Cosine and whether it exceeds 0.95, the latter decided in integers.
fn oracle_cosine(a: &str, b: &str) -> (f64, bool) {
    let ta = oracle_tokens(a);
    let tb = oracle_tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return (1.0, true);
    }
    if ta.is_empty() || tb.is_empty() {
        return (0.0, false);
    }
    let vocab: BTreeSet<&String> = ta.keys().chain(tb.keys()).collect();
    let va: Vec<u128> = vocab.iter().map(|t| *ta.get(*t).unwrap_or(&0) as u128).collect();
    let vb: Vec<u128> = vocab.iter().map(|t| *tb.get(*t).unwrap_or(&0) as u128).collect();
    let dot: u128 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na: u128 = va.iter().map(|x| x * x).sum();
    let nb: u128 = vb.iter().map(|x| x * x).sum();
    let value = dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt());
    // cos > 19/20  <=>  400 dot^2 > 361 na nb
    let above = 400 * dot * dot > 361 * na * nb;
    (value, above)
}

fn token_text(rng: &mut ChaCha8Rng, counts: &[(String, u32)], sep: &[&str]) -> String {
    let mut toks: Vec<&str> = Vec::new();
    for (t, n) in counts {
        for _ in 0..*n {
            toks.push(t);
        }
    }
    toks.shuffle(rng);
    let mut s = String::new();
    for t in toks {
        if !s.is_empty() {
            s.push_str(pick(rng, sep));
        }
        s.push_str(t);
    }
    s
}

fn vocab(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, u32)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let t = if rng.gen_bool(0.5) {
            word(rng)
        } else {
            let len = rng.gen_range(1..6);
            alnum(rng, len)
        };
        if seen.insert(t.to_lowercase()) {
            out.push((t, rng.gen_range(1..5)));
        }
    }
    out
}

/// Two token texts whose cosine sits within 0.95 +/- 0.01.
fn straddling_texts(rng: &mut ChaCha8Rng, sep: &[&str]) -> (String, String) {
    loop {
        let n = rng.gen_range(8..30);
        let base = vocab(rng, n);
        let mut other = base.clone();
        let i = rng.gen_range(0..other.len());
        match rng.gen_range(0..3) {
            0 => other[i].1 += rng.gen_range(1..3),
            1 => {
                let n = rng.gen_range(0..99);
                other[i].0 = format!("{}x{}", other[i].0, n);
            }
            _ => {
                let n = rng.gen_range(1..3);
                other.push((alnum(rng, 7), n));
            }
        }
        let a = token_text(rng, &base, sep);
        let b = token_text(rng, &other, sep);
        let (v, _) = oracle_cosine(&a, &b);
        if (v - 0.95).abs() <= 0.01 {
            return (a, b);
        }
    }
}

fn random_pair(rng: &mut ChaCha8Rng, straddle: bool) -> (RequestRecord, RequestRecord) {
    let page = "https://www.shop.com/";
    let url_sep = ["/", ".", "?", "&", "=", "-"];
    let hdr_sep = [" ", ";", ", "];
    let mut a = request("a", page, "https://x.invalid/", 0.0);
    let mut b = request("b", page, "https://x.invalid/", 0.0);
    let which = rng.gen_range(0..3);
    for field in 0..3 {
        let near = straddle && field == which;
        let similar = near || rng.gen_bool(0.7);
        let sep: &[&str] = if field == 1 { &hdr_sep } else { &url_sep };
        let (ta, tb) = if near {
            straddling_texts(rng, sep)
        } else if similar {
            let n = rng.gen_range(0..25);
            let v = vocab(rng, n);
            let t = token_text(rng, &v, sep);
            let mut u = v.clone();
            if !u.is_empty() && rng.gen_bool(0.5) {
                u[0].1 += 1;
            }
            (t, token_text(rng, &u, sep))
        } else {
            let (nx, ny) = (rng.gen_range(1..10), rng.gen_range(1..10));
            let x = vocab(rng, nx);
            let y = vocab(rng, ny);
            (token_text(rng, &x, sep), token_text(rng, &y, sep))
        };
        match field {
            0 => {
                a.url = format!("https://{ta}");
                b.url = format!("https://{tb}");
            }
            1 => {
                a.headers = vec![("x-h".into(), ta)];
                b.headers = vec![("x-h".into(), tb)];
            }
            _ => {
                a.body = ta;
                b.body = tb;
            }
        }
    }
    if rng.gen_bool(0.05) {
        b.method = if rng.gen_bool(0.5) { "get".into() } else { "POST".into() };
    }
    if rng.gen_bool(0.05) {
        b.initiator = "https://other.example/".into();
    }
    (a, b)
}

fn c3_fuzzy_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut straddling = 0;
    let mut matched = 0;
    let mut max_err: f64 = 0.0;
    for i in 0..1000 {
        let straddle = i % 10 < 3;
        let (a, b) = random_pair(&mut rng, straddle);
        let got = similarity::request_similarities(&a, &b);
        let texts = [
            (a.url.clone(), b.url.clone()),
            (similarity::serialize_headers(&a.headers), similarity::serialize_headers(&b.headers)),
            (a.body.clone(), b.body.clone()),
        ];
        let mut all_above = true;
        for (k, (x, y)) in texts.iter().enumerate() {
            let (v, above) = oracle_cosine(x, y);
            let err = (v - got[k]).abs();
            max_err = max_err.max(err);
            ensure!(err <= 1e-9, "pair {i} field {k}: similarity {} vs oracle {v}", got[k]);
            if (v - 0.95).abs() <= 0.01 {
                straddling += 1;
            }
            all_above &= above;
        }
        let expected = a.initiator == b.initiator && a.method.eq_ignore_ascii_case(&b.method) && all_above;
        let actual = similarity::requests_match(&a, &b);
        ensure!(actual == expected, "pair {i}: requests_match {actual}, oracle {expected}");
        if actual {
            matched += 1;
        }
    }
    ensure!(straddling >= 300, "only {straddling} similarities within 0.95 +/- 0.01");
    Ok(format!(
        "1000 pairs agree ({matched} matches, {straddling} field similarities within 0.95 +/- 0.01, max error {max_err:.1e})"
    ))
}

fn c4_consensus() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = TargetRef::request("||t.example/x.js");
    let mut checked = 0;
    for grid in 0..500 {
        let k = rng.gen_range(1..=3usize);
        let pairs = k * k;
        let half = pairs / 2;
        let mut diffs: Vec<RawDiff> = (0..pairs)
            .map(|_| RawDiff {
                target: target.clone(),
                target_in_vanilla: 1,
                components: Component::ALL.iter().map(|c| (*c, ComponentDiff::default())).collect(),
            })
            .collect();
        // genuine items in every pair, spurious ones in a chosen number of pairs
        let mut expected_kept: BTreeMap<(Component, String), bool> = BTreeMap::new();
        for g in 0..rng.gen_range(0..4) {
            let c = *pick(&mut rng, &Component::ALL);
            let item = format!("lost:genuine{g}#1");
            for d in &mut diffs {
                d.components.get_mut(&c).unwrap().items.insert(item.clone());
            }
            expected_kept.insert((c, item), true);
        }
        for s in 0..rng.gen_range(1..6) {
            let c = *pick(&mut rng, &Component::ALL);
            let item = format!("gained:spurious{s}#1");
            let below = rng.gen_bool(0.5);
            let count = if below { rng.gen_range(1..=half.max(1)).min(half) } else { half + 1 };
            let mut idx: Vec<usize> = (0..pairs).collect();
            idx.shuffle(&mut rng);
            for &p in &idx[..count] {
                diffs[p].components.get_mut(&c).unwrap().items.insert(item.clone());
            }
            expected_kept.insert((c, item), count > half);
        }
        let cons = diff::consensus(&diffs, k).map_err(|e| e.to_string())?;
        for ((c, item), keep) in &expected_kept {
            let kept = cons.component(*c).is_some_and(|cc| cc.items.contains_key(item));
            ensure!(kept == *keep, "grid {grid} (k={k}): {c} item {item} kept={kept}, expected {keep}");
            checked += 1;
        }
    }
    Ok(format!("500 grids, {checked} item votes as expected"))
}

fn self_diff_target(rng: &mut ChaCha8Rng, t: &trace::Trace) -> TargetRef {
    let outgoing: Vec<&RequestRecord> = t.requests.iter().filter(|r| r.is_outgoing()).collect();
    let r = *pick(rng, &outgoing);
    let fields = r.fields();
    if !fields.is_empty() && rng.gen_bool(0.5) {
        TargetRef::field(pipeline::request_pattern(r), pick(rng, &fields).clone())
    } else {
        TargetRef::request(pipeline::request_pattern(r))
    }
}

fn c5_features() -> Outcome {
    let ctx = DiffContext::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let t = random_trace(&mut rng);
        let target = self_diff_target(&mut rng, &t);
        let blocked = as_blocked(&t, target.clone());
        let raw = diff::diff_pair(&t, &blocked, &ctx).map_err(|e| e.to_string())?;
        let cons = diff::consensus(&[raw], 1).map_err(|e| e.to_string())?;
        let b = features::breakage_vector(&cons).map_err(|e| e.to_string())?;
        let tr = features::tracking_vector(&cons, &target).map_err(|e| e.to_string())?;
        ensure!(b.len() == 63, "breakage vector has {} entries", b.len());
        ensure!(b.is_zero(), "trace {i}: non-zero breakage vector {:?}", nonzero(&b.values, RegistryKind::Breakage));
        ensure!(tr.is_zero(), "trace {i}: non-zero tracking vector {:?}", nonzero(&tr.values, RegistryKind::Tracking));
    }

    let dir = common::data_path("listeners_removed");
    let v = trace::load_trace(dir.join("vanilla.json")).map_err(|e| e.to_string())?;
    let b = trace::load_trace(dir.join("blocked.json")).map_err(|e| e.to_string())?;
    let raw = diff::diff_pair(&v, &b, &ctx).map_err(|e| e.to_string())?;
    let cons = diff::consensus(&[raw], 1).map_err(|e| e.to_string())?;
    let got = features::breakage_vector(&cons).map_err(|e| e.to_string())?;
    let expected = listeners_removed_expected();
    let reg = features::registry(RegistryKind::Breakage);
    for (j, name) in reg.names().iter().enumerate() {
        let want = expected.get(name).copied().unwrap_or(0.0);
        ensure!(got.values[j] == want, "fixture `{name}`: got {}, expected {want}", got.values[j]);
    }
    Ok("100 self-diffs give zero vectors; listener fixture matches all 63 entries".into())
}

fn nonzero(values: &[f64], kind: RegistryKind) -> Vec<(String, f64)> {
    let reg = features::registry(kind);
    reg.names()
        .into_iter()
        .zip(values)
        .filter(|(_, v)| **v != 0.0)
        .map(|(n, v)| (n.to_string(), *v))
        .collect()
}

/// Every non-zero entry of the breakage vector for the listener fixture.
fn listeners_removed_expected() -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("Critical listeners", 2.0),
        ("Functionality related listeners", 2.0),
        ("Listeners", 2.0),
        ("Load time", 1.5),
        ("# requests blocked", 1.0),
        ("% requests blocked", 0.5),
        ("URL length", 30.0),
        ("# TP req blocked", 1.0),
        ("Total response size", 2048.0),
        ("Avg response size", 2048.0),
    ])
}

fn c6_entropy() -> Outcome {
    let t = Thresholds::default();
    let id = entropy::value_entropy("aZ3bY9");
    ensure!(id.combinations == BigUint::from(56_800_235_584u64), "62^6 computed as {}", id.combinations);
    ensure!(entropy::is_identifier_like("aZ3bY9", &t), "62^6 not selected");
    let ver = entropy::value_entropy("1.106.0");
    ensure!(ver.combinations == BigUint::from(100_000u32), "1.106.0 computed as {}", ver.combinations);
    ensure!(!entropy::is_identifier_like("1.106.0", &t), "1.106.0 selected");
    let hex = entropy::value_entropy("eeec99c83e911b00583ffc4bc3e34060");
    let want = BigUint::parse_bytes(b"340282366920938463463374607431768211456", 10).unwrap();
    ensure!(hex.combinations == want, "16^32 computed as {}", hex.combinations);
    ensure!(hex.combinations == BigUint::from(16u32).pow(32), "16^32 mismatch");

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    const CS: &[u8] = b"0123456789abcdefABCDEFxyzXYZ+/=-_.:~!";
    for i in 0..1000 {
        let len = rng.gen_range(0..40);
        let s: String = (0..len).map(|_| CS[rng.gen_range(0..CS.len())] as char).collect();
        let whole = entropy::value_entropy(&s).combinations;
        let mut prev = BigUint::from(1u32);
        for end in 0..=s.len() {
            let c = entropy::value_entropy(&s[..end]).combinations;
            ensure!(c >= prev, "string {i} `{s}`: prefix of length {end} has lower capacity");
            prev = c;
        }
        ensure!(prev == whole, "string {i}: prefix walk ended off the whole value");
    }
    Ok("62^6 selected, 1.106.0 = 10^5 rejected, 16^32 exact, 1000 strings monotone".into())
}

fn separable(rng: &mut ChaCha8Rng, n: usize, n_features: usize) -> Dataset {
    let names = (0..n_features).map(|j| format!("f{j}")).collect();
    let mut ds = Dataset::new("synthetic/1", names);
    for i in 0..n {
        let label = i % 2 == 0;
        let mut row: Vec<f64> = (0..n_features).map(|_| rng.gen_range(0.0..1.0)).collect();
        row[0] = if label { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.0..0.4) };
        ds.push_row(row, label).unwrap();
    }
    ds
}

fn c7_classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = separable(&mut rng, 120, 6);
    let params = TrainParams {
        trees: 30,
        seed: 11,
        subsample: 0.8,
        ..TrainParams::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m1 = classifier::train(&data, &params).map_err(|e| e.to_string())?;
    let m2 = classifier::train(&data, &params).map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    classifier::save_model(&m1, &p1).map_err(|e| e.to_string())?;
    classifier::save_model(&m2, &p2).map_err(|e| e.to_string())?;
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure!(b1 == b2, "retrained model files differ");

    let cv = classifier::cross_validate(&data, 5, &params, 3).map_err(|e| e.to_string())?;
    ensure!(cv.f1_mean == 1.0 && cv.f1_std == 0.0, "5-fold F1 {} +/- {}", cv.f1_mean, cv.f1_std);

    let imp = classifier::permutation_importance(&m1, &data, 5, 9).map_err(|e| e.to_string())?;
    let unused: Vec<usize> = (0..data.n_features()).filter(|&j| !m1.uses_feature(j)).collect();
    ensure!(!unused.is_empty(), "model uses every feature");
    for &j in &unused {
        ensure!(imp.mean[j] == 0.0 && imp.std[j] == 0.0, "unused feature {j} has importance {}", imp.mean[j]);
        // shuffling an unused column must leave every prediction untouched
        let mut col: Vec<f64> = data.rows.iter().map(|r| r[j]).collect();
        col.shuffle(&mut rng);
        for (row, v) in data.rows.iter().zip(&col) {
            let mut shuffled = row.clone();
            shuffled[j] = *v;
            ensure!(m1.predict_row(row) == m1.predict_row(&shuffled), "feature {j} affects predictions");
        }
    }
    ensure!(imp.mean[0] > 0.0, "the separating feature has importance {}", imp.mean[0]);

    let loaded = classifier::load_model(&p1).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let x: Vec<f64> = (0..data.n_features()).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let (a, b) = (m1.predict_row(&x), loaded.predict_row(&x));
        ensure!(a.to_bits() == b.to_bits(), "round-trip prediction {a} vs {b}");
    }
    Ok(format!(
        "bit-identical retrain, 5-fold F1 1.0 +/- 0, {} unused features at 0 importance, 100 round-trip predictions equal",
        unused.len()
    ))
}

fn c8_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let env = build_suite(3);
    let names: Vec<&str> = env.manifest.jobs.iter().map(|j| j.job.as_str()).collect();
    for required in [
        "pure_tracker",
        "functional_script",
        "mixed_request",
        "exception_breakage",
        "probabilistic_noise",
        "empty_page",
    ] {
        ensure!(names.contains(&required), "suite lacks job {required}");
    }
    let full = Detector::new(env.models.clone(), DetectConfig::default());
    let report = fixtures::check_suite(&env.suite, &env.manifest, &full).map_err(|e| e.to_string())?;
    ensure!(report.passed(), "mismatches: {}", report.mismatches.join("; "));

    let tracking_only = Detector::new(
        env.models.clone(),
        DetectConfig {
            use_breakage_detector: false,
            ..DetectConfig::default()
        },
    );
    let ablated = fixtures::check_suite(&env.suite, &env.manifest, &tracking_only).map_err(|e| e.to_string())?;
    let rules_of = |r: &fixtures::SuiteReport| -> BTreeSet<String> {
        r.verdicts.values().flat_map(|v| pipeline::emitted_rules(v)).collect()
    };
    let (with_both, with_tracking) = (rules_of(&report), rules_of(&ablated));
    let extra: Vec<&String> = with_both.difference(&with_tracking).collect();
    ensure!(extra.is_empty(), "rules only emitted with both detectors: {extra:?}");
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "suite took {elapsed:?}");
    let verdicts: usize = report.verdicts.values().map(Vec::len).sum();
    Ok(format!(
        "{} jobs, {verdicts} verdicts match the manifest; {} rules with both detectors within {} tracking-only rules; {elapsed:.1?}",
        names.len(),
        with_both.len(),
        with_tracking.len()
    ))
}

fn c9_reconstruction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifest = fixtures::write_suite(dir.path(), 3).map_err(|e| e.to_string())?;
    // exceptions for resources no page loads
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..20 {
        let site = pick(&mut rng, &["fender.com", "temu.com", "dailyrecipes.com"]);
        manifest
            .lists
            .push(format!("@@||nothing{i}.{}.invalid/{}.js$script,domain={site}", word(&mut rng), word(&mut rng)));
    }
    let ctx = DiffContext::default();
    let (rec, mismatches) = fixtures::check_reconstruction(dir.path(), &manifest, &ctx).map_err(|e| e.to_string())?;
    ensure!(mismatches.is_empty(), "mismatches: {}", mismatches.join("; "));

    let inputs: Vec<rules::FilterRule> = RuleSet::parse(&manifest.lists.join("\n")).exceptions().cloned().collect();
    let emitted: Vec<&rules::FilterRule> = rec.samples.iter().map(|s| &s.exception).collect();
    let discarded: Vec<&rules::FilterRule> = rec.discarded.iter().map(|d| &d.exception).collect();
    ensure!(
        emitted.len() + discarded.len() == inputs.len(),
        "{} inputs, {} emitted, {} discarded",
        inputs.len(),
        emitted.len(),
        discarded.len()
    );
    for rule in &inputs {
        let e = emitted.iter().filter(|r| **r == rule).count();
        let d = discarded.iter().filter(|r| **r == rule).count();
        ensure!(e + d == 1, "{rule} accounted for {} times", e + d);
    }

    let jobs = pipeline::list_jobs(dir.path()).map_err(|e| e.to_string())?;
    let mut zero_hit = 0;
    for rule in &inputs {
        let flipped = rules::flip_exception(rule).map_err(|e| e.to_string())?;
        let mut hits = 0;
        for job in &jobs {
            for run in job.vanilla_runs().map_err(|e| e.to_string())? {
                if rule.options.included_domains().iter().any(|d| trackdiff::psl::host_within(&run.page_host(), d)) {
                    hits += pipeline::rule_hits(&flipped, &run);
                }
            }
        }
        if hits == 0 {
            zero_hit += 1;
            ensure!(discarded.contains(&rule), "{rule} matches no vanilla resource but was emitted");
        }
    }
    ensure!(zero_hit >= 20, "only {zero_hit} zero-hit rules exercised");
    let reasons: BTreeSet<String> = rec.discarded.iter().map(|d| d.reason.to_string()).collect();
    Ok(format!(
        "{} exceptions: {} emitted, {} discarded ({} match nothing); reasons: {}",
        inputs.len(),
        emitted.len(),
        discarded.len(),
        zero_hit,
        reasons.into_iter().collect::<Vec<_>>().join(", ")
    ))
}
