mod common;

use num_bigint::BigUint;
use proptest::prelude::*;

use trackdiff::entropy::*;
use trackdiff::similarity::*;
use trackdiff::trace::RequestField;

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded(a in "[a-zA-Z0-9 ./?=&-]{0,60}", b in "[a-zA-Z0-9 ./?=&-]{0,60}") {
        let ab = text_similarity(&a, &b);
        let ba = text_similarity(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn text_is_identical_to_itself(a in "[a-z0-9 ]{0,60}") {
        prop_assert!((text_similarity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn token_order_does_not_matter(words in prop::collection::vec("[a-z]{1,6}", 1..12)) {
        let mut rev = words.clone();
        rev.reverse();
        prop_assert!((text_similarity(&words.join(" "), &rev.join("/")) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn request_matching_is_symmetric(p in "[a-z]{1,8}(/[a-z]{1,8}){0,4}", q in "[a-z]{1,8}(/[a-z]{1,8}){0,4}") {
        let a = common::request("a", "https://s.com/", &format!("https://x.com/{p}"), 0.0);
        let b = common::request("b", "https://s.com/", &format!("https://x.com/{q}"), 0.0);
        prop_assert_eq!(requests_match(&a, &b), requests_match(&b, &a));
        prop_assert!(requests_match(&a, &a));
    }

    #[test]
    fn capacity_is_product_of_segments(parts in prop::collection::vec("[0-9]{1,4}|[a-f0-9]{1,6}|[a-zA-Z]{1,5}", 1..5)) {
        let value = parts.join(".");
        let expected = parts.iter().fold(BigUint::from(1u32), |acc, p| {
            let (_, size) = charset_class(p);
            acc * BigUint::from(size).pow(p.len() as u32)
        });
        prop_assert_eq!(value_entropy(&value).combinations, expected);
    }

    #[test]
    fn server_capacity_is_at_least_each_field(values in prop::collection::vec("[a-z0-9]{0,12}", 1..6)) {
        let fields: Vec<RequestField> = values.iter().enumerate().map(|(i, v)| RequestField::query(format!("p{i}"), v.as_str())).collect();
        let total = server_entropy(&fields).combinations;
        for f in &fields {
            prop_assert!(field_entropy(f).combinations <= total);
        }
    }
}

#[test]
fn charset_classes() {
    assert_eq!(charset_class("123").0, CharsetClass::Decimal);
    assert_eq!(charset_class("deadbeef").0, CharsetClass::LowerHex);
    assert_eq!(charset_class("DEADBEEF").0, CharsetClass::UpperHex);
    assert_eq!(charset_class("hello").0, CharsetClass::LowerAlpha);
    assert_eq!(charset_class("Hello").0, CharsetClass::Alpha);
    assert_eq!(charset_class("Hello1").0, CharsetClass::Alphanumeric);
    assert_eq!(charset_class("a+b/c=").0, CharsetClass::Base64);
    assert_eq!(charset_class("a b!").0, CharsetClass::Printable);
}

#[test]
fn scan_selects_click_id_but_not_product_ids() {
    let url = format!(
        "{}?goods_id=601099512345&sku_id=17592186044&_x_ns_msclkid={}",
        trackdiff::fixtures::TEMU_LANDING,
        trackdiff::fixtures::MSCLKID
    );
    let r = common::request("r", "https://www.temu.com/", &url, 0.0);
    let t = Thresholds {
        per_field: BigUint::from(10u32).pow(12),
        per_server: BigUint::from(10u32).pow(100),
    };
    let picked = select_fields(&[&r], &t);
    let names: Vec<&str> = picked.iter().map(|(_, f)| f.name.as_str()).collect();
    assert_eq!(names, vec!["_x_ns_msclkid"]);
}

#[test]
fn server_threshold_selects_every_field_of_a_busy_server() {
    let r1 = common::request("a", "https://s.com/", "https://t.io/a?x=1234&y=5678", 0.0);
    let r2 = common::request("b", "https://s.com/", "https://t.io/b?z=9012", 1.0);
    let scans = scan_fields(&[&r1, &r2], &Thresholds::new(u128::MAX, 1_000_000_000));
    assert_eq!(scans.len(), 3);
    assert!(scans.iter().all(|s| s.selected_by == SelectedBy::Server));
    assert_eq!(scans[0].server_entropy.combinations, BigUint::from(10u32).pow(12));
}
