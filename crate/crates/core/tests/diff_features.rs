mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackdiff::diff::{self, key, Component, DiffContext};
use trackdiff::features::{self, RegistryKind};
use trackdiff::fixtures;
use trackdiff::pipeline::{self, CandidateMode};
use trackdiff::trace::TargetRef;

fn feature(values: &[f64], name: &str) -> f64 {
    let reg = features::registry(RegistryKind::Breakage);
    values[reg.index_of(name).unwrap()]
}

#[test]
fn rendered_pages_diff_to_zero_against_themselves() {
    let ctx = DiffContext::default();
    let dir = tempfile::tempdir().unwrap();
    let (pages, _) = fixtures::canonical_pages();
    for page in &pages {
        let run_dir = dir.path().join(&page.name);
        fixtures::capture_runs(page, &run_dir, 1, None, 5).unwrap();
        let runs = pipeline::load_runs(&run_dir).unwrap();
        let v = &runs[0];
        assert!(v.appearance.screenshot_path.is_some(), "{}", page.name);
        let cands = pipeline::enumerate_candidates(&runs, CandidateMode::Request, &Default::default(), None);
        let target = cands
            .targets
            .first()
            .map(|e| e.target.clone())
            .unwrap_or_else(|| TargetRef::request("||nothing.invalid^"));
        let b = common::as_blocked(v, target.clone());
        let cons = diff::consensus(&[diff::diff_pair(v, &b, &ctx).unwrap()], 1).unwrap();
        let bv = features::breakage_vector(&cons).unwrap();
        assert!(bv.is_zero(), "{}: {:?}", page.name, bv.values);
        if cons.target_in_vanilla > 0 {
            assert!(features::tracking_vector(&cons, &target).unwrap().is_zero(), "{}", page.name);
        }
    }
}

#[test]
fn unanimous_consensus_keeps_every_scalar() {
    let ctx = DiffContext::default();
    let dir = common::data_path("listeners_removed");
    let v = trackdiff::trace::load_trace(dir.join("vanilla.json")).unwrap();
    let b = trackdiff::trace::load_trace(dir.join("blocked.json")).unwrap();
    let raw = diff::diff_pair(&v, &b, &ctx).unwrap();
    let grid = vec![raw.clone(); 9];
    let cons = diff::consensus(&grid, 3).unwrap();
    for (c, comp) in &raw.components {
        let voted = cons.component(*c).unwrap();
        for (k, s) in &comp.scalars {
            assert_eq!(voted.scalars[k].value, s.value, "{c}.{k}");
        }
        assert_eq!(voted.items.len(), comp.items.len(), "{c}");
    }
    assert_eq!(cons.items_seen, cons.items_kept);
    assert!(!cons.low_confidence());
}

#[test]
fn three_way_vote_discards_a_single_noisy_run() {
    let ctx = DiffContext::default();
    let dir = common::data_path("listeners_removed");
    let v = trackdiff::trace::load_trace(dir.join("vanilla.json")).unwrap();
    let b = trackdiff::trace::load_trace(dir.join("blocked.json")).unwrap();
    let mut noisy = b.clone();
    noisy.meta.load_time_ms += 4000.0;
    noisy.console.push(trackdiff::trace::ConsoleEntry {
        level: "error".into(),
        timestamp: 1.0,
        source: String::new(),
        message: "flaky widget".into(),
    });
    let blocked = [b.clone(), b, noisy];
    let vanilla = [v.clone(), v.clone(), v];
    let cons = diff::consensus(&diff::diff_grid(&vanilla, &blocked, &ctx).unwrap(), 3).unwrap();
    let bv = features::breakage_vector(&cons).unwrap();
    assert_eq!(feature(&bv.values, "Load time"), 1.5);
    assert_eq!(feature(&bv.values, "Logs"), 0.0);
    assert!(cons.component(Component::Console).unwrap().items.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn removed_listeners_are_counted(seed in any::<u64>()) {
        let ctx = DiffContext::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = common::random_trace(&mut rng);
        let target = TargetRef::request("||nothing.invalid^");
        let mut b = common::as_blocked(&v, target);
        let n = rng.gen_range(0..=b.listeners.len());
        b.listeners.truncate(b.listeners.len() - n);
        let raw = diff::diff_pair(&v, &b, &ctx).unwrap();
        let got = raw.components[&Component::Listeners].scalars[key::LISTENERS_UNMATCHED].value;
        prop_assert_eq!(got, n as f64);
    }

    #[test]
    fn load_time_feature_is_seconds(seed in any::<u64>(), delta in 0u32..20_000) {
        let ctx = DiffContext::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = common::random_trace(&mut rng);
        let mut b = common::as_blocked(&v, TargetRef::request("||nothing.invalid^"));
        b.meta.load_time_ms += f64::from(delta);
        let cons = diff::consensus(&[diff::diff_pair(&v, &b, &ctx).unwrap()], 1).unwrap();
        let bv = features::breakage_vector(&cons).unwrap();
        prop_assert!((feature(&bv.values, "Load time") - f64::from(delta) / 1000.0).abs() < 1e-9);
        let others = bv.values.iter().filter(|x| **x != 0.0).count();
        prop_assert!(others <= 1);
    }
}
