mod common;

use proptest::prelude::*;

use trackdiff::rules::*;
use trackdiff::trace::RequestField;

fn host() -> impl Strategy<Value = String> {
    prop::sample::select(common::HOSTS.to_vec()).prop_map(String::from)
}

fn rule_text() -> impl Strategy<Value = String> {
    let anchor = prop::sample::select(vec!["", "|", "||"]);
    let path = prop::collection::vec(prop::sample::select(common::WORDS.to_vec()), 0..3);
    let sep = prop::sample::select(vec!["", "^", "*", "|"]);
    let opts = prop::collection::vec(
        prop::sample::select(vec![
            "script",
            "image",
            "third-party",
            "~third-party",
            "domain=fender.com|~shop.fender.com",
            "removeparam=utm_source",
            "important",
            "match-case",
            "redirect=noop.js",
        ]),
        0..3,
    );
    (any::<bool>(), anchor, host(), path, sep, opts).prop_map(|(exc, a, h, p, s, o)| {
        let mut r = String::new();
        if exc {
            r.push_str("@@");
        }
        r.push_str(a);
        r.push_str(&h);
        for seg in p {
            r.push('/');
            r.push_str(seg);
        }
        r.push_str(s);
        let mut o: Vec<&str> = o;
        o.dedup();
        if !o.is_empty() {
            r.push('$');
            r.push_str(&o.join(","));
        }
        r
    })
}

proptest! {
    #[test]
    fn emit_is_a_fixed_point(text in rule_text()) {
        let rule = parse_rule(&text).unwrap();
        let emitted = rule.to_string();
        let again = parse_rule(&emitted).unwrap();
        prop_assert_eq!(&again, &rule);
        prop_assert_eq!(again.to_string(), emitted);
    }

    #[test]
    fn generated_block_rule_blocks_its_request(url in "https://[a-z]{1,8}\\.(com|net|co\\.uk)(/[a-z0-9]{1,6}){0,3}(\\?[a-z]=[0-9]{1,4})?") {
        let req = common::request("r", "https://page.example/", &url, 0.0);
        let rule = generate_rule(&RuleSpec::block(&req)).unwrap();
        let set = RuleSet::new(vec![rule.clone()]);
        prop_assert_eq!(match_request(&set, &req, "https://page.example/").decision, Decision::Block, "{}", rule);
    }

    #[test]
    fn generated_removeparam_strips_only_its_field(name in "[a-z_]{1,10}", other in "[a-z]{1,10}") {
        prop_assume!(name != other);
        let url = format!("https://www.temu.com/p.html?{name}=1&{other}=2");
        let req = common::request("r", "https://www.temu.com/", &url, 0.0);
        let field = RequestField::query(name.as_str(), "1");
        let rule = generate_rule(&RuleSpec::for_field(&req, &field)).unwrap();
        let out = field_outcomes(&RuleSet::new(vec![rule]), &req, "https://www.temu.com/");
        prop_assert_eq!(out.len(), 1);
        prop_assert_eq!(out[0].field.as_ref().map(|f| f.name.clone()), Some(name));
    }
}

#[test]
fn corpus_loads_without_malformed_lines() {
    let parsed = parse_list(&common::read_data("filters_corpus.txt"));
    assert!(parsed.rules.len() >= 200);
    assert!(parsed
        .skipped
        .iter()
        .all(|(_, e)| matches!(e, RuleError::UnsupportedRule(_))));
    assert_eq!(parsed.skipped.len(), 4);
}

#[test]
fn flipping_twice_is_rejected() {
    let exc = parse_rule("@@||cdn.cquotient.com^*/gretel.min.js$script,domain=fender.com").unwrap();
    let flipped = flip_exception(&exc).unwrap();
    assert_eq!(flipped.to_string(), "||cdn.cquotient.com^*/gretel.min.js$script,domain=fender.com");
    assert!(matches!(flip_exception(&flipped), Err(RuleError::NotAnException(_))));
}

#[test]
fn exception_overrides_block_only_on_listed_domain() {
    let set = RuleSet::parse(
        "||cdn.cquotient.com^\n@@||cdn.cquotient.com^*/gretel.min.js$script,domain=fender.com\n",
    );
    let url = "https://cdn.cquotient.com/js/v3/gretel.min.js";
    let req = common::request("r", "https://www.fender.com/", url, 0.0);
    assert_eq!(match_request(&set, &req, "https://www.fender.com/").decision, Decision::Exempt);
    assert_eq!(match_request(&set, &req, "https://www.gibson.com/").decision, Decision::Block);
}
