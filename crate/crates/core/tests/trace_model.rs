mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trackdiff::psl;
use trackdiff::trace::*;

struct OracleRow {
    page: String,
    url: String,
    site: String,
    partiness: Partiness,
}

fn oracle() -> Vec<OracleRow> {
    common::read_data("psl_oracle.tsv")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            OracleRow {
                page: c[0].into(),
                url: c[1].into(),
                site: c[2].into(),
                partiness: match c[3] {
                    "first" => Partiness::First,
                    "third" => Partiness::Third,
                    other => panic!("bad partiness {other}"),
                },
            }
        })
        .collect()
}

#[test]
fn registrable_domains_match_oracle() {
    for row in oracle() {
        let host = psl::host_of(&row.url).unwrap();
        assert_eq!(psl::registrable_domain(&host), row.site, "{}", row.url);
    }
}

#[test]
fn partiness_matches_oracle() {
    let rows = oracle();
    assert!(rows.len() >= 30);
    for row in rows {
        let mut t = Trace::empty(row.page.as_str());
        t.requests.push(common::request("r1", &row.page, &row.url, 0.0));
        t.validate().unwrap();
        assert_eq!(t.requests[0].partiness, Some(row.partiness), "{} from {}", row.url, row.page);

        let mut wrong = t.clone();
        wrong.requests[0].partiness = Some(match row.partiness {
            Partiness::First => Partiness::Third,
            Partiness::Third => Partiness::First,
        });
        let err = parse_trace(&to_json(&wrong)).unwrap_err();
        assert!(matches!(err, TraceError::MalformedTrace { ref field, .. } if field == "requests[0].partiness"));
    }
}

#[test]
fn out_of_order_timestamps_are_rejected() {
    let mut t = Trace::empty("https://www.fender.com/");
    t.requests.push(common::request("r1", "https://www.fender.com/", "https://www.fender.com/a", 5.0));
    t.requests.push(common::request("r2", "https://www.fender.com/", "https://www.fender.com/b", 4.0));
    let err = parse_trace(&to_json(&t)).unwrap_err();
    assert!(err.to_string().contains("requests[1].timestamp"), "{err}");
}

#[test]
fn target_refs_round_trip_through_text() {
    let targets = [
        TargetRef::request("||analytics.trackco.net/t.js"),
        TargetRef::field(
            "|https://www.temu.com/subject/n9/landing.html",
            RequestField::query("_x_ns_msclkid", "eeec99c83e911b00583ffc4bc3e34060"),
        ),
        TargetRef::field("||shop.com^", RequestField::cookie("uid", "x")),
    ];
    for t in targets {
        let back: TargetRef = t.to_string().parse().unwrap();
        assert!(back.same_target(&t), "{t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = common::random_trace(&mut rng);
        let back = parse_trace(&to_json(&t)).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(to_json(&back), to_json(&t));
    }

    #[test]
    fn save_and_load(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = common::random_trace(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        save_trace(&t, &path).unwrap();
        let mut back = load_trace(&path).unwrap();
        prop_assert_eq!(back.base_dir.as_deref(), Some(dir.path()));
        back.base_dir = None;
        prop_assert_eq!(back, t);
    }
}
