//! Network filter rules in the ABP/uBO dialect.
//!
//! Supported: address patterns (`||`, `|`, `*`, `^`, trailing `|`), exception
//! rules (`@@`), and the `domain`, `third-party`, `removeparam` and `cookie`
//! options. Every other `$` option is kept verbatim so whole lists load and
//! re-emit without loss. Regex patterns (`/.../`) are parsed but never match.

use std::fmt;

use thiserror::Error;

use crate::psl;
use crate::trace::{FieldKind, RequestField, RequestRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("unsupported rule: {0}")]
    UnsupportedRule(String),
    #[error("malformed rule `{line}`: {reason}")]
    MalformedRule { line: String, reason: String },
    #[error("not an exception rule: {0}")]
    NotAnException(String),
    #[error("rule kind requires a request field")]
    MissingField,
    #[error("field `{name}` of kind {kind} cannot be used with a {rule} rule")]
    FieldKindMismatch {
        name: String,
        kind: FieldKind,
        rule: &'static str,
    },
}

fn malformed(line: &str, reason: impl Into<String>) -> RuleError {
    RuleError::MalformedRule {
        line: line.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Anchor {
    None,
    /// `|` at the start of the pattern.
    Start,
    /// `||` host anchor.
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Literal(Vec<u8>),
    Wildcard,
    Separator,
}

/// The URL-matching part of a rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressPattern {
    pub anchor: Anchor,
    pub body: String,
    pub end_anchor: bool,
    pub regex: bool,
}

impl AddressPattern {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        if text.chars().any(char::is_whitespace) {
            return Err(malformed(text, "pattern contains whitespace"));
        }
        if text.len() >= 2 && text.starts_with('/') && text.ends_with('/') {
            return Ok(Self {
                anchor: Anchor::None,
                body: text.to_string(),
                end_anchor: false,
                regex: true,
            });
        }
        let (anchor, rest) = if let Some(r) = text.strip_prefix("||") {
            (Anchor::Host, r)
        } else if let Some(r) = text.strip_prefix('|') {
            (Anchor::Start, r)
        } else {
            (Anchor::None, text)
        };
        let (body, end_anchor) = match rest.strip_suffix('|') {
            Some(b) => (b, true),
            None => (rest, false),
        };
        if body.contains('|') {
            return Err(malformed(text, "`|` is only valid as an anchor"));
        }
        if anchor == Anchor::Host && body.is_empty() {
            return Err(malformed(text, "host anchor without a host"));
        }
        Ok(Self {
            anchor,
            body: body.to_string(),
            end_anchor,
            regex: false,
        })
    }

    fn tokens(&self) -> Vec<Token> {
        let mut out: Vec<Token> = Vec::new();
        let mut lit = Vec::new();
        for b in self.body.bytes() {
            match b {
                b'*' | b'^' => {
                    if !lit.is_empty() {
                        out.push(Token::Literal(std::mem::take(&mut lit)));
                    }
                    let tok = if b == b'*' { Token::Wildcard } else { Token::Separator };
                    if !(tok == Token::Wildcard && out.last() == Some(&Token::Wildcard)) {
                        out.push(tok);
                    }
                }
                _ => lit.push(b.to_ascii_lowercase()),
            }
        }
        if !lit.is_empty() {
            out.push(Token::Literal(lit));
        }
        out
    }

    /// Case-insensitive match against an absolute URL.
    pub fn matches(&self, url: &str) -> bool {
        if self.regex {
            return false;
        }
        let url = url.to_ascii_lowercase();
        let bytes = url.as_bytes();
        let tokens = self.tokens();
        let starts: Vec<usize> = match self.anchor {
            Anchor::Start => vec![0],
            Anchor::None => (0..=bytes.len()).collect(),
            Anchor::Host => host_label_starts(&url),
        };
        starts
            .into_iter()
            .any(|s| match_tokens(&tokens, bytes, s, self.end_anchor))
    }

    /// Matches every URL.
    pub fn is_universal(&self) -> bool {
        !self.regex
            && self.anchor == Anchor::None
            && !self.end_anchor
            && self.body.bytes().all(|b| b == b'*')
    }
}

impl fmt::Display for AddressPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.regex {
            return f.write_str(&self.body);
        }
        match self.anchor {
            Anchor::None => {}
            Anchor::Start => f.write_str("|")?,
            Anchor::Host => f.write_str("||")?,
        }
        f.write_str(&self.body)?;
        if self.end_anchor {
            f.write_str("|")?;
        }
        Ok(())
    }
}

/// Byte offsets at which a `||` pattern may begin: the host start and every
/// position just after a dot inside the host.
fn host_label_starts(url: &str) -> Vec<usize> {
    let Some(scheme_end) = url.find("://") else {
        return Vec::new();
    };
    let host_start = scheme_end + 3;
    let rest = &url[host_start..];
    let authority_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let authority = &rest[..authority_end];
    let (host_offset, host) = match authority.rfind('@') {
        Some(i) => (i + 1, &authority[i + 1..]),
        None => (0, authority),
    };
    let host_len = host.find(':').unwrap_or(host.len());
    let base = host_start + host_offset;
    let mut out = vec![base];
    for (i, b) in host[..host_len].bytes().enumerate() {
        if b == b'.' && i + 1 < host_len {
            out.push(base + i + 1);
        }
    }
    out
}

fn is_separator(b: u8) -> bool {
    !(b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'%'))
}

fn match_tokens(tokens: &[Token], url: &[u8], pos: usize, end_anchor: bool) -> bool {
    let Some((first, rest)) = tokens.split_first() else {
        return !end_anchor || pos == url.len();
    };
    match first {
        Token::Literal(lit) => {
            url[pos..].starts_with(lit) && match_tokens(rest, url, pos + lit.len(), end_anchor)
        }
        Token::Separator => {
            if pos == url.len() {
                match_tokens(rest, url, pos, end_anchor)
            } else {
                is_separator(url[pos]) && match_tokens(rest, url, pos + 1, end_anchor)
            }
        }
        Token::Wildcard => {
            if rest.is_empty() && !end_anchor {
                return true;
            }
            (pos..=url.len()).any(|p| match_tokens(rest, url, p, end_anchor))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DomainList {
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl DomainList {
    fn parse(value: &str, line: &str) -> Result<Self, RuleError> {
        let mut list = DomainList::default();
        for d in value.split('|') {
            let d = d.trim().to_ascii_lowercase();
            if let Some(neg) = d.strip_prefix('~') {
                if neg.is_empty() {
                    return Err(malformed(line, "empty excluded domain"));
                }
                list.exclude.push(neg.to_string());
            } else if d.is_empty() {
                return Err(malformed(line, "empty domain in domain= option"));
            } else {
                list.include.push(d);
            }
        }
        Ok(list)
    }

    /// Whether a rule restricted by this list applies on a page with `page_host`.
    pub fn permits(&self, page_host: &str) -> bool {
        let included = self.include.is_empty()
            || self.include.iter().any(|d| psl::host_within(page_host, d));
        included && !self.exclude.iter().any(|d| psl::host_within(page_host, d))
    }
}

impl fmt::Display for DomainList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .include
            .iter()
            .cloned()
            .chain(self.exclude.iter().map(|d| format!("~{d}")))
            .collect();
        f.write_str(&parts.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleOption {
    Domain(DomainList),
    /// Parameter name; empty removes every parameter.
    RemoveParam(String),
    /// Cookie name; empty strips every cookie.
    Cookie(String),
    /// `true` for third-party only, `false` for first-party only.
    ThirdParty(bool),
    /// Recognized but unmodeled option, kept verbatim.
    Opaque(String),
}

impl fmt::Display for RuleOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleOption::Domain(d) => write!(f, "domain={d}"),
            RuleOption::RemoveParam(p) if p.is_empty() => f.write_str("removeparam"),
            RuleOption::RemoveParam(p) => write!(f, "removeparam={p}"),
            RuleOption::Cookie(c) if c.is_empty() => f.write_str("cookie"),
            RuleOption::Cookie(c) => write!(f, "cookie={c}"),
            RuleOption::ThirdParty(true) => f.write_str("third-party"),
            RuleOption::ThirdParty(false) => f.write_str("~third-party"),
            RuleOption::Opaque(s) => f.write_str(s),
        }
    }
}

/// Options that modify responses or headers instead of blocking.
const MODIFIER_OPTIONS: &[&str] = &[
    "replace",
    "jsonprune",
    "hls",
    "removeheader",
    "csp",
    "permissions",
    "redirect-rule",
    "urltransform",
    "header",
];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleOptions {
    pub items: Vec<RuleOption>,
}

impl RuleOptions {
    fn parse(text: &str, line: &str) -> Result<Self, RuleError> {
        let mut items = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(malformed(line, "empty option"));
            }
            let (name, value) = match part.split_once('=') {
                Some((n, v)) => (n.to_ascii_lowercase(), Some(v)),
                None => (part.to_ascii_lowercase(), None),
            };
            let opt = match (name.as_str(), value) {
                ("domain" | "from", Some(v)) => RuleOption::Domain(DomainList::parse(v, line)?),
                ("removeparam" | "queryprune", v) => RuleOption::RemoveParam(v.unwrap_or("").to_string()),
                ("cookie", v) => RuleOption::Cookie(v.unwrap_or("").to_string()),
                ("third-party" | "3p" | "~first-party" | "~1p", None) => RuleOption::ThirdParty(true),
                ("~third-party" | "~3p" | "first-party" | "1p", None) => RuleOption::ThirdParty(false),
                _ => RuleOption::Opaque(part.to_string()),
            };
            items.push(opt);
        }
        let opts = RuleOptions { items };
        if opts.removeparam().is_some() && opts.cookie().is_some() {
            return Err(malformed(line, "removeparam and cookie in one rule"));
        }
        Ok(opts)
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn domains(&self) -> impl Iterator<Item = &DomainList> {
        self.items.iter().filter_map(|o| match o {
            RuleOption::Domain(d) => Some(d),
            _ => None,
        })
    }

    /// Included domains across all `domain=` options, in order.
    pub fn included_domains(&self) -> Vec<&str> {
        self.domains()
            .flat_map(|d| d.include.iter().map(String::as_str))
            .collect()
    }

    pub fn removeparam(&self) -> Option<&str> {
        self.items.iter().find_map(|o| match o {
            RuleOption::RemoveParam(p) => Some(p.as_str()),
            _ => None,
        })
    }

    pub fn cookie(&self) -> Option<&str> {
        self.items.iter().find_map(|o| match o {
            RuleOption::Cookie(c) => Some(c.as_str()),
            _ => None,
        })
    }

    pub fn third_party(&self) -> Option<bool> {
        self.items.iter().find_map(|o| match o {
            RuleOption::ThirdParty(t) => Some(*t),
            _ => None,
        })
    }

    pub fn opaque(&self) -> Vec<&str> {
        self.items
            .iter()
            .filter_map(|o| match o {
                RuleOption::Opaque(s) => Some(s.as_str()),
                _ => None,
            })
            .collect()
    }

    fn is_modifier(&self) -> bool {
        self.opaque().iter().any(|o| {
            let name = o.split('=').next().unwrap_or(o).trim_start_matches('~').to_ascii_lowercase();
            MODIFIER_OPTIONS.contains(&name.as_str())
        })
    }
}

impl fmt::Display for RuleOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.items.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// One parsed network rule. Equality compares the parsed structure, not the
/// raw text.
#[derive(Debug, Clone, Eq)]
pub struct FilterRule {
    pub raw: String,
    pub exception: bool,
    pub pattern: AddressPattern,
    pub options: RuleOptions,
}

impl PartialEq for FilterRule {
    fn eq(&self, other: &Self) -> bool {
        self.exception == other.exception
            && self.pattern == other.pattern
            && self.options == other.options
    }
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exception {
            f.write_str("@@")?;
        }
        write!(f, "{}", self.pattern)?;
        if !self.options.is_empty() {
            write!(f, "${}", self.options)?;
        }
        Ok(())
    }
}

fn looks_like_options(s: &str) -> bool {
    !s.is_empty()
        && s.split(',').all(|part| {
            let name = part.split('=').next().unwrap_or("");
            let name = name.strip_prefix('~').unwrap_or(name);
            !name.is_empty()
                && name
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        })
}

fn is_cosmetic(line: &str) -> bool {
    ["##", "#@#", "#?#", "#$#", "#%#", "#@?#", "#@$#"]
        .iter()
        .any(|m| line.contains(m))
}

pub fn parse_rule(line: &str) -> Result<FilterRule, RuleError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(malformed(line, "empty line"));
    }
    if line.starts_with('!') || (line.starts_with('[') && line.ends_with(']')) {
        return Err(RuleError::UnsupportedRule(line.to_string()));
    }
    if is_cosmetic(line) || line.contains("$$") || line.contains("$@$") {
        return Err(RuleError::UnsupportedRule(line.to_string()));
    }
    let (exception, rest) = match line.strip_prefix("@@") {
        Some(r) => (true, r),
        None => (false, line),
    };
    let mut split = None;
    for (i, _) in rest.match_indices('$').collect::<Vec<_>>().into_iter().rev() {
        if looks_like_options(&rest[i + 1..]) {
            split = Some(i);
            break;
        }
    }
    let (pattern_text, options) = match split {
        Some(i) => (&rest[..i], RuleOptions::parse(&rest[i + 1..], line)?),
        None => (rest, RuleOptions::default()),
    };
    if pattern_text.is_empty() && options.is_empty() {
        return Err(malformed(line, "rule has neither pattern nor options"));
    }
    let pattern = AddressPattern::parse(pattern_text).map_err(|e| match e {
        RuleError::MalformedRule { reason, .. } => malformed(line, reason),
        other => other,
    })?;
    Ok(FilterRule {
        raw: line.to_string(),
        exception,
        pattern,
        options,
    })
}

/// A lenient list parse: comment, cosmetic and malformed lines are reported,
/// not fatal.
#[derive(Debug, Clone, Default)]
pub struct ParsedList {
    pub rules: RuleSet,
    pub skipped: Vec<(usize, RuleError)>,
}

pub fn parse_list(text: &str) -> ParsedList {
    let mut out = ParsedList::default();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_rule(trimmed) {
            Ok(rule) => out.rules.rules.push(rule),
            Err(e) => out.skipped.push((i + 1, e)),
        }
    }
    out
}

/// Ordered rule collection. Order decides ties within a precedence class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<FilterRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<FilterRule>) -> Self {
        Self { rules }
    }

    pub fn parse(text: &str) -> Self {
        parse_list(text).rules
    }

    pub fn extend(&mut self, other: RuleSet) {
        self.rules.extend(other.rules);
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn exceptions(&self) -> impl Iterator<Item = &FilterRule> {
        self.rules.iter().filter(|r| r.exception)
    }
}

impl FilterRule {
    pub fn is_field_rule(&self) -> bool {
        self.options.removeparam().is_some() || self.options.cookie().is_some()
    }

    /// Rules that block or exempt whole requests.
    pub fn is_network_rule(&self) -> bool {
        !self.is_field_rule() && !self.options.is_modifier()
    }

    /// Pattern, domain and party conditions, ignoring what the rule does.
    pub fn applies(&self, url: &str, page_host: &str) -> bool {
        if !self.options.domains().all(|d| d.permits(page_host)) {
            return false;
        }
        if let Some(third) = self.options.third_party() {
            let req_host = psl::host_of(url).unwrap_or_default();
            let is_third = !psl::same_site(&req_host, page_host);
            if is_third != third {
                return false;
            }
        }
        self.pattern.matches(url)
    }

    /// True if this field rule removes `field`.
    pub fn strips(&self, field: &RequestField) -> bool {
        let name = match field.kind {
            FieldKind::QueryParam => self.options.removeparam(),
            FieldKind::Cookie => self.options.cookie(),
            _ => None,
        };
        match name {
            None => false,
            Some("") => true,
            Some(n) if n.starts_with('/') || n.starts_with('~') => false,
            Some(n) => n == field.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Block,
    Exempt,
    StripField,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub decision: Decision,
    pub rule: Option<FilterRule>,
    pub field: Option<RequestField>,
}

impl MatchOutcome {
    fn no_match() -> Self {
        Self {
            decision: Decision::NoMatch,
            rule: None,
            field: None,
        }
    }
}

/// Request-level decision. A matching exception overrides any block; when
/// no block rule applies the first field action (if any) is reported.
pub fn match_request(rules: &RuleSet, request: &RequestRecord, page_url: &str) -> MatchOutcome {
    let page_host = psl::host_of(page_url).unwrap_or_default();
    match_url(rules, &request.url, &page_host).unwrap_or_else(|| {
        field_outcomes(rules, request, page_url)
            .into_iter()
            .next()
            .unwrap_or_else(MatchOutcome::no_match)
    })
}

/// Block/exempt decision for a bare URL; `None` when no block rule applies.
pub fn match_url(rules: &RuleSet, url: &str, page_host: &str) -> Option<MatchOutcome> {
    let mut block = None;
    let mut exception = None;
    for rule in rules.rules.iter().filter(|r| r.is_network_rule()) {
        if (rule.exception && exception.is_some()) || (!rule.exception && block.is_some()) {
            continue;
        }
        if rule.applies(url, page_host) {
            if rule.exception {
                exception = Some(rule);
            } else {
                block = Some(rule);
            }
        }
    }
    block.map(|b| match exception {
        Some(e) => MatchOutcome {
            decision: Decision::Exempt,
            rule: Some(e.clone()),
            field: None,
        },
        None => MatchOutcome {
            decision: Decision::Block,
            rule: Some(b.clone()),
            field: None,
        },
    })
}

/// One strip action per request field named by an applicable
/// `removeparam`/`cookie` rule and not exempted by a field exception.
pub fn field_outcomes(rules: &RuleSet, request: &RequestRecord, page_url: &str) -> Vec<MatchOutcome> {
    let page_host = psl::host_of(page_url).unwrap_or_default();
    let applicable: Vec<&FilterRule> = rules
        .rules
        .iter()
        .filter(|r| r.is_field_rule() && r.applies(&request.url, &page_host))
        .collect();
    let mut out = Vec::new();
    for field in request.fields() {
        if applicable.iter().any(|r| r.exception && r.strips(&field)) {
            continue;
        }
        if let Some(rule) = applicable.iter().find(|r| !r.exception && r.strips(&field)) {
            out.push(MatchOutcome {
                decision: Decision::StripField,
                rule: Some((*rule).clone()),
                field: Some(field),
            });
        }
    }
    out
}

/// Turn an exception rule into the block rule it was carved out of.
pub fn flip_exception(rule: &FilterRule) -> Result<FilterRule, RuleError> {
    if !rule.exception {
        return Err(RuleError::NotAnException(rule.raw.clone()));
    }
    let raw = rule.raw.trim();
    Ok(FilterRule {
        raw: raw.strip_prefix("@@").unwrap_or(raw).to_string(),
        exception: false,
        pattern: rule.pattern.clone(),
        options: rule.options.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Block,
    RemoveParam,
    Cookie,
}

/// How wide generated field rules are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RuleScope {
    #[default]
    RegistrableDomain,
    Host,
}

#[derive(Debug, Clone, Copy)]
pub struct RuleSpec<'a> {
    pub kind: RuleKind,
    pub request: &'a RequestRecord,
    pub field: Option<&'a RequestField>,
    pub scope: RuleScope,
}

impl<'a> RuleSpec<'a> {
    pub fn block(request: &'a RequestRecord) -> Self {
        Self {
            kind: RuleKind::Block,
            request,
            field: None,
            scope: RuleScope::default(),
        }
    }

    pub fn for_field(request: &'a RequestRecord, field: &'a RequestField) -> Self {
        let kind = match field.kind {
            FieldKind::Cookie => RuleKind::Cookie,
            _ => RuleKind::RemoveParam,
        };
        Self {
            kind,
            request,
            field: Some(field),
            scope: RuleScope::default(),
        }
    }
}

/// Emit a uBO rule for `spec` and return it parsed.
pub fn generate_rule(spec: &RuleSpec<'_>) -> Result<FilterRule, RuleError> {
    let url = url::Url::parse(&spec.request.url)
        .map_err(|e| malformed(&spec.request.url, format!("request URL: {e}")))?;
    let host = url
        .host_str()
        .ok_or_else(|| malformed(&spec.request.url, "request URL has no host"))?
        .to_ascii_lowercase();
    let text = match spec.kind {
        RuleKind::Block => {
            if spec.field.is_some() {
                return Err(malformed(&spec.request.url, "block rules take no field"));
            }
            let path: String = url
                .path()
                .chars()
                .map(|c| if matches!(c, '*' | '^' | '|' | '$') { '*' } else { c })
                .collect();
            if path.is_empty() || path == "/" {
                format!("||{host}^")
            } else {
                format!("||{host}{path}")
            }
        }
        RuleKind::RemoveParam | RuleKind::Cookie => {
            let field = spec.field.ok_or(RuleError::MissingField)?;
            let (option, expected) = if spec.kind == RuleKind::RemoveParam {
                ("removeparam", FieldKind::QueryParam)
            } else {
                ("cookie", FieldKind::Cookie)
            };
            if field.kind != expected {
                return Err(RuleError::FieldKindMismatch {
                    name: field.name.clone(),
                    kind: field.kind,
                    rule: option,
                });
            }
            if field.name.is_empty() || field.name.contains([',', '$', '=', '|', '/', '~']) {
                return Err(malformed(&field.name, "field name not expressible in rule syntax"));
            }
            let anchor = match spec.scope {
                RuleScope::RegistrableDomain => psl::registrable_domain(&host),
                RuleScope::Host => host,
            };
            format!("||{anchor}^${option}={}", field.name)
        }
    };
    parse_rule(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Direction;

    fn request(url: &str) -> RequestRecord {
        RequestRecord {
            id: "r".into(),
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

    const FENDER_EXCEPTION: &str = "@@||cdn.cquotient.com/gretel.min.js$domain=fender.com";

    #[test]
    fn parse_exception_with_domain() {
        let r = parse_rule(FENDER_EXCEPTION).unwrap();
        assert!(r.exception);
        assert_eq!(r.pattern.anchor, Anchor::Host);
        assert_eq!(r.options.included_domains(), vec!["fender.com"]);
        assert_eq!(r.to_string(), FENDER_EXCEPTION);
    }

    #[test]
    fn parse_host_anchored_block() {
        let r = parse_rule("||ssp.seznam.cz^").unwrap();
        assert!(!r.exception);
        assert_eq!(r.pattern.anchor, Anchor::Host);
        assert_eq!(r.pattern.body, "ssp.seznam.cz^");
        assert!(r.options.is_empty());
    }

    #[test]
    fn cosmetic_and_comments_unsupported() {
        assert!(matches!(parse_rule("##.ad-banner"), Err(RuleError::UnsupportedRule(_))));
        assert!(matches!(parse_rule("example.com#@#.ad"), Err(RuleError::UnsupportedRule(_))));
        assert!(matches!(parse_rule("! comment"), Err(RuleError::UnsupportedRule(_))));
        assert!(matches!(parse_rule("[Adblock Plus 2.0]"), Err(RuleError::UnsupportedRule(_))));
        assert!(matches!(parse_rule("example.com$$script[tag-content=\"ad\"]"), Err(RuleError::UnsupportedRule(_))));
    }

    #[test]
    fn malformed_patterns() {
        assert!(matches!(parse_rule("||"), Err(RuleError::MalformedRule { .. })));
        assert!(matches!(parse_rule("a|b.com"), Err(RuleError::MalformedRule { .. })));
        assert!(matches!(parse_rule("||a.com^$domain="), Err(RuleError::MalformedRule { .. })));
        assert!(matches!(
            parse_rule("||a.com^$removeparam=x,cookie=y"),
            Err(RuleError::MalformedRule { .. })
        ));
    }

    #[test]
    fn opaque_options_preserved() {
        let line = "||example.com/ads.js$script,redirect=noopjs,domain=a.com|~b.a.com";
        let r = parse_rule(line).unwrap();
        assert_eq!(r.options.opaque(), vec!["script", "redirect=noopjs"]);
        assert_eq!(r.to_string(), line);
    }

    #[test]
    fn regex_rules_never_match() {
        let r = parse_rule("/banner\\d+/$third-party").unwrap();
        assert!(r.pattern.regex);
        assert!(!r.pattern.matches("https://x.com/banner12"));
        assert_eq!(r.to_string(), "/banner\\d+/$third-party");
    }

    #[test]
    fn dollar_inside_regex_option_value() {
        let r = parse_rule("||a.com^$removeparam=/^utm_.*$/").unwrap();
        assert_eq!(r.options.removeparam(), Some("/^utm_.*$/"));
    }

    #[test]
    fn pattern_semantics() {
        let p = AddressPattern::parse("||cdn.cquotient.com^").unwrap();
        assert!(p.matches("https://cdn.cquotient.com/gretel.min.js"));
        assert!(p.matches("https://x.cdn.cquotient.com/"));
        assert!(!p.matches("https://notcdn.cquotient.com/"));
        assert!(!p.matches("https://cdn.cquotient.com.evil.org/"));

        let p = AddressPattern::parse("|https://a.com/x|").unwrap();
        assert!(p.matches("https://a.com/x"));
        assert!(!p.matches("https://a.com/xy"));

        let p = AddressPattern::parse("/ads/*.gif").unwrap();
        assert!(p.matches("https://a.com/ads/b/c.gif"));
        assert!(!p.matches("https://a.com/ad/c.gif"));

        let p = AddressPattern::parse("a.com^").unwrap();
        assert!(p.matches("https://a.com"));
        assert!(p.matches("https://a.com:8080/"));
        assert!(!p.matches("https://a.com.br/"));

        assert!(AddressPattern::parse("").unwrap().matches("https://anything/"));
        assert!(AddressPattern::parse("*").unwrap().is_universal());
    }

    #[test]
    fn exception_dominates_block() {
        let rules = RuleSet::parse(&format!("||cdn.cquotient.com^\n{FENDER_EXCEPTION}"));
        let req = request("https://cdn.cquotient.com/gretel.min.js");
        let out = match_request(&rules, &req, "https://www.fender.com/");
        assert_eq!(out.decision, Decision::Exempt);
        assert_eq!(out.rule.unwrap().raw, FENDER_EXCEPTION);

        // exception is scoped to fender.com
        let out = match_request(&rules, &req, "https://www.gibson.com/");
        assert_eq!(out.decision, Decision::Block);
    }

    #[test]
    fn flipped_rule_blocks() {
        let flipped = flip_exception(&parse_rule(FENDER_EXCEPTION).unwrap()).unwrap();
        assert_eq!(flipped.raw, "||cdn.cquotient.com/gretel.min.js$domain=fender.com");
        let rules = RuleSet::new(vec![flipped.clone()]);
        let req = request("https://cdn.cquotient.com/gretel.min.js");
        assert_eq!(match_request(&rules, &req, "https://fender.com/").decision, Decision::Block);
        assert!(matches!(flip_exception(&flipped), Err(RuleError::NotAnException(_))));
    }

    #[test]
    fn no_match() {
        let rules = RuleSet::parse("||tracker.net^");
        let out = match_request(&rules, &request("https://a.com/x.js"), "https://a.com/");
        assert_eq!(out.decision, Decision::NoMatch);
        assert!(out.rule.is_none());
    }

    #[test]
    fn third_party_option() {
        let rules = RuleSet::parse("||cdn.a.com^$third-party");
        let req = request("https://cdn.a.com/x.js");
        assert_eq!(match_request(&rules, &req, "https://www.a.com/").decision, Decision::NoMatch);
        assert_eq!(match_request(&rules, &req, "https://b.com/").decision, Decision::Block);
    }

    #[test]
    fn field_rules_strip_named_fields() {
        let rules = RuleSet::parse(
            "||temu.com^$removeparam=_x_ns_msclkid\n||temu.com^$cookie=uid\n@@||temu.com^$cookie=uid,domain=keep.com",
        );
        let mut req = request(
            "https://www.temu.com/subject/n9/googleshopping-landingpage-a-psurl.html?goods_id=601099526089385&sku_id=17592258865022&_x_ns_msclkid=eeec99c83e911b00583ffc4bc3e34060",
        );
        req.headers.push(("Cookie".into(), "uid=abc123; lang=en".into()));
        let out = field_outcomes(&rules, &req, "https://www.temu.com/");
        let names: Vec<_> = out.iter().map(|o| o.field.as_ref().unwrap().name.as_str()).collect();
        assert_eq!(names, vec!["_x_ns_msclkid", "uid"]);
        assert_eq!(match_request(&rules, &req, "https://www.temu.com/").decision, Decision::StripField);

        let out = field_outcomes(&rules, &req, "https://keep.com/");
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn modifier_rules_do_not_block() {
        let rules = RuleSet::parse("||a.com/api$replace=/x/y/");
        let out = match_request(&rules, &request("https://a.com/api"), "https://a.com/");
        assert_eq!(out.decision, Decision::NoMatch);
    }

    #[test]
    fn generate_field_rules() {
        let req = request(
            "https://www.temu.com/subject/n9/googleshopping-landingpage-a-psurl.html?_x_ns_msclkid=eeec99c83e911b00583ffc4bc3e34060",
        );
        let field = RequestField::query("_x_ns_msclkid", "eeec99c83e911b00583ffc4bc3e34060");
        let rule = generate_rule(&RuleSpec::for_field(&req, &field)).unwrap();
        assert_eq!(rule.to_string(), "||temu.com^$removeparam=_x_ns_msclkid");
        assert_eq!(parse_rule(&rule.to_string()).unwrap(), rule);

        let req = request("https://a.example.com/p");
        let field = RequestField::cookie("uid", "x");
        let rule = generate_rule(&RuleSpec::for_field(&req, &field)).unwrap();
        assert_eq!(rule.raw, "||example.com^$cookie=uid");

        let narrow = RuleSpec {
            scope: RuleScope::Host,
            ..RuleSpec::for_field(&req, &field)
        };
        assert_eq!(generate_rule(&narrow).unwrap().raw, "||a.example.com^$cookie=uid");
    }

    #[test]
    fn generate_block_rule() {
        let req = request("https://cdn.cquotient.com/gretel.min.js?v=3");
        assert_eq!(
            generate_rule(&RuleSpec::block(&req)).unwrap().raw,
            "||cdn.cquotient.com/gretel.min.js"
        );
        let req = request("https://ssp.seznam.cz/");
        assert_eq!(generate_rule(&RuleSpec::block(&req)).unwrap().raw, "||ssp.seznam.cz^");
    }

    #[test]
    fn generate_requires_field() {
        let req = request("https://a.com/");
        let spec = RuleSpec {
            kind: RuleKind::RemoveParam,
            request: &req,
            field: None,
            scope: RuleScope::default(),
        };
        assert_eq!(generate_rule(&spec), Err(RuleError::MissingField));
        let cookie = RequestField::cookie("uid", "1");
        let spec = RuleSpec {
            kind: RuleKind::RemoveParam,
            field: Some(&cookie),
            ..spec
        };
        assert!(matches!(generate_rule(&spec), Err(RuleError::FieldKindMismatch { .. })));
    }
}
