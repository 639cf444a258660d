//! Identifier-like field selection.
//!
//! A field's capacity is the number of distinct values it could hold given
//! its character classes and length. Values are segmented on `.`, `-`, `_`
//! and `:` so version strings and dates stay small while opaque tokens stay
//! large. Capacities are exact big integers: a 32-digit hex id is 16^32.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use num_traits::One;

use crate::psl;
use crate::trace::{RequestField, RequestRecord};

const SEPARATORS: [char; 4] = ['.', '-', '_', ':'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CharsetClass {
    Decimal,
    LowerHex,
    UpperHex,
    LowerAlpha,
    Alpha,
    Alphanumeric,
    Base64,
    Printable,
}

impl CharsetClass {
    pub const ALL: [CharsetClass; 8] = [
        CharsetClass::Decimal,
        CharsetClass::LowerHex,
        CharsetClass::UpperHex,
        CharsetClass::LowerAlpha,
        CharsetClass::Alpha,
        CharsetClass::Alphanumeric,
        CharsetClass::Base64,
        CharsetClass::Printable,
    ];

    pub fn size(self) -> u32 {
        match self {
            CharsetClass::Decimal => 10,
            CharsetClass::LowerHex | CharsetClass::UpperHex => 16,
            CharsetClass::LowerAlpha => 26,
            CharsetClass::Alpha => 52,
            CharsetClass::Alphanumeric => 62,
            CharsetClass::Base64 => 64,
            CharsetClass::Printable => 95,
        }
    }

    fn contains(self, c: char) -> bool {
        match self {
            CharsetClass::Decimal => c.is_ascii_digit(),
            CharsetClass::LowerHex => c.is_ascii_digit() || ('a'..='f').contains(&c),
            CharsetClass::UpperHex => c.is_ascii_digit() || ('A'..='F').contains(&c),
            CharsetClass::LowerAlpha => c.is_ascii_lowercase(),
            CharsetClass::Alpha => c.is_ascii_alphabetic(),
            CharsetClass::Alphanumeric => c.is_ascii_alphanumeric(),
            CharsetClass::Base64 => c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '=' | '-' | '_'),
            // Non-ASCII characters fall into the widest class.
            CharsetClass::Printable => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CharsetClass::Decimal => "decimal",
            CharsetClass::LowerHex => "lower-hex",
            CharsetClass::UpperHex => "upper-hex",
            CharsetClass::LowerAlpha => "lower-alpha",
            CharsetClass::Alpha => "alpha",
            CharsetClass::Alphanumeric => "alphanumeric",
            CharsetClass::Base64 => "base64",
            CharsetClass::Printable => "printable",
        }
    }
}

impl fmt::Display for CharsetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn is_separator(c: char) -> bool {
    SEPARATORS.contains(&c)
}

/// Smallest class containing every non-separator character of `value`.
pub fn charset_class(value: &str) -> (CharsetClass, u32) {
    let class = CharsetClass::ALL
        .into_iter()
        .find(|class| value.chars().filter(|c| !is_separator(*c)).all(|c| class.contains(c)))
        .unwrap_or(CharsetClass::Printable);
    (class, class.size())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntropyEstimate {
    pub combinations: BigUint,
    /// Class of the whole value (separators excluded).
    pub charset_class: CharsetClass,
    /// Non-separator characters counted.
    pub length_basis: u32,
}

impl EntropyEstimate {
    fn one() -> Self {
        Self {
            combinations: BigUint::one(),
            charset_class: CharsetClass::Decimal,
            length_basis: 0,
        }
    }

    pub fn bits(&self) -> u64 {
        self.combinations.bits().saturating_sub(1)
    }
}

pub fn value_entropy(value: &str) -> EntropyEstimate {
    let mut combinations = BigUint::one();
    let mut length = 0u32;
    for segment in value.split(is_separator).filter(|s| !s.is_empty()) {
        let (_, size) = charset_class(segment);
        let len = segment.chars().count() as u32;
        combinations *= BigUint::from(size).pow(len);
        length += len;
    }
    EntropyEstimate {
        combinations,
        charset_class: charset_class(value).0,
        length_basis: length,
    }
}

pub fn field_entropy(field: &RequestField) -> EntropyEstimate {
    value_entropy(&field.value)
}

/// Joint capacity of all distinct `(name, value)` fields sent to one server.
pub fn server_entropy<'a>(fields: impl IntoIterator<Item = &'a RequestField>) -> EntropyEstimate {
    let unique: BTreeSet<(&str, &str)> = fields
        .into_iter()
        .map(|f| (f.name.as_str(), f.value.as_str()))
        .collect();
    let mut est = EntropyEstimate::one();
    for (_, value) in unique {
        let e = value_entropy(value);
        est.combinations *= e.combinations;
        est.length_basis += e.length_basis;
        est.charset_class = est.charset_class.max(e.charset_class);
    }
    est
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thresholds {
    pub per_field: BigUint,
    pub per_server: BigUint,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            per_field: BigUint::from(1_000_000_000u64),
            per_server: BigUint::from(1_000_000_000_000u64),
        }
    }
}

impl Thresholds {
    pub fn new(per_field: u128, per_server: u128) -> Self {
        Self {
            per_field: BigUint::from(per_field),
            per_server: BigUint::from(per_server),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectedBy {
    Field,
    Server,
    Both,
    None,
}

impl fmt::Display for SelectedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectedBy::Field => "field",
            SelectedBy::Server => "server",
            SelectedBy::Both => "both",
            SelectedBy::None => "-",
        })
    }
}

/// Per-field verdict with the numbers behind it.
#[derive(Debug, Clone)]
pub struct FieldScan<'r> {
    pub request: &'r RequestRecord,
    pub field: RequestField,
    pub field_entropy: EntropyEstimate,
    pub server_entropy: EntropyEstimate,
    pub selected_by: SelectedBy,
}

/// Score every query parameter and cookie of the outgoing requests.
pub fn scan_fields<'r>(requests: &[&'r RequestRecord], t: &Thresholds) -> Vec<FieldScan<'r>> {
    let mut by_server: BTreeMap<String, Vec<RequestField>> = BTreeMap::new();
    let mut per_request = Vec::new();
    for &req in requests {
        let server = req.host().map(|h| psl::registrable_domain(&h)).unwrap_or_default();
        let fields = req.fields();
        by_server.entry(server.clone()).or_default().extend(fields.iter().cloned());
        per_request.push((req, server, fields));
    }
    let server_est: BTreeMap<&String, EntropyEstimate> = by_server
        .iter()
        .map(|(s, fields)| (s, server_entropy(fields)))
        .collect();

    let mut out = Vec::new();
    for (req, server, fields) in &per_request {
        let server_e = &server_est[server];
        for field in fields {
            let fe = field_entropy(field);
            let by_field = fe.combinations > t.per_field;
            let by_server = server_e.combinations > t.per_server;
            let selected_by = match (by_field, by_server) {
                (true, true) => SelectedBy::Both,
                (true, false) => SelectedBy::Field,
                (false, true) => SelectedBy::Server,
                (false, false) => SelectedBy::None,
            };
            out.push(FieldScan {
                request: req,
                field: field.clone(),
                field_entropy: fe,
                server_entropy: server_e.clone(),
                selected_by,
            });
        }
    }
    out
}

/// Fields that look like identifiers by either estimate, in trace order.
pub fn select_fields<'r>(requests: &[&'r RequestRecord], t: &Thresholds) -> Vec<(&'r RequestRecord, RequestField)> {
    scan_fields(requests, t)
        .into_iter()
        .filter(|s| s.selected_by != SelectedBy::None)
        .map(|s| (s.request, s.field))
        .collect()
}

/// True when a single value clears the per-field threshold.
pub fn is_identifier_like(value: &str, t: &Thresholds) -> bool {
    value_entropy(value).combinations > t.per_field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Direction;

    fn request(url: &str) -> RequestRecord {
        RequestRecord {
            id: url.into(),
            direction: Direction::Outgoing,
            initiator: "doc".into(),
            method: "GET".into(),
            url: url.into(),
            headers: vec![],
            body: String::new(),
            response_status: None,
            response_body: None,
            response_size: None,
            response_content_type: None,
            timestamp: 0.0,
            partiness: None,
        }
    }

    #[test]
    fn classes() {
        assert_eq!(charset_class("12345"), (CharsetClass::Decimal, 10));
        assert_eq!(
            charset_class("eeec99c83e911b00583ffc4bc3e34060"),
            (CharsetClass::LowerHex, 16)
        );
        assert_eq!(charset_class("DEADBEEF"), (CharsetClass::UpperHex, 16));
        assert_eq!(charset_class("hello"), (CharsetClass::LowerAlpha, 26));
        assert_eq!(charset_class("Hello"), (CharsetClass::Alpha, 52));
        assert_eq!(charset_class("aX13nL"), (CharsetClass::Alphanumeric, 62));
        assert_eq!(charset_class("a+b/c="), (CharsetClass::Base64, 64));
        assert_eq!(charset_class("a b!"), (CharsetClass::Printable, 95));
        assert_eq!(charset_class("1.106.0"), (CharsetClass::Decimal, 10));
    }

    #[test]
    fn field_capacities() {
        let e = field_entropy(&RequestField::query("uid", "aX13nL"));
        assert_eq!(e.combinations, BigUint::from(56_800_235_584u64));
        assert_eq!(e.length_basis, 6);

        let e = field_entropy(&RequestField::query("_x_ns_msclkid", "eeec99c83e911b00583ffc4bc3e34060"));
        assert_eq!(e.combinations, BigUint::from(16u32).pow(32));
        assert_eq!(e.combinations.to_string(), "340282366920938463463374607431768211456");

        let e = field_entropy(&RequestField::query("Q_CLIENTVERSION", "1.106.0"));
        assert_eq!(e.combinations, BigUint::from(100_000u32));

        let e = field_entropy(&RequestField::query("empty", ""));
        assert_eq!(e.combinations, BigUint::one());
    }

    #[test]
    fn per_segment_classes() {
        // 2024 (10^4) * 01 (10^2) * xyz (26^3)
        let e = value_entropy("2024-01-xyz");
        assert_eq!(e.combinations, BigUint::from(10u32).pow(6) * BigUint::from(26u32).pow(3));
    }

    #[test]
    fn server_capacity() {
        let a = RequestField::query("a", "1.106.0");
        let b = RequestField::query("b", "2.301.9");
        assert_eq!(server_entropy([&a]).combinations, field_entropy(&a).combinations);
        assert_eq!(server_entropy([&a, &b]).combinations, BigUint::from(10u64.pow(10)));
        assert_eq!(server_entropy([&a, &a]).combinations, BigUint::from(100_000u32));
        assert_eq!(server_entropy(std::iter::empty()).combinations, BigUint::one());
    }

    #[test]
    fn selection() {
        let t = Thresholds::default();
        let r1 = request("https://a.com/p?uid=aX13nL");
        let sel = select_fields(&[&r1], &t);
        assert_eq!(sel.len(), 1);
        assert_eq!(sel[0].1.name, "uid");

        let r2 = request("https://b.com/p?a=1.106.0&b=2.106.0&c=3.106.0&d=4.106.0&e=5.106.0");
        let scans = scan_fields(&[&r2], &t);
        assert!(scans.iter().all(|s| s.selected_by == SelectedBy::Server));
        assert_eq!(scans[0].server_entropy.combinations, BigUint::from(10u32).pow(25));

        let r3 = request("https://c.com/p?v=2");
        assert!(select_fields(&[&r3], &t).is_empty());
    }
}
