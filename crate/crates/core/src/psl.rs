//! Registrable-domain lookup against a bundled public-suffix snapshot.
//!
//! The snapshot is a frozen subset of the public suffix list. Hosts under a
//! TLD that is not listed fall back to the implicit `*` rule (the last label is
//! the suffix).

use std::net::IpAddr;

/// Suffixes with more than one label, plus common private suffixes.
const MULTI_LABEL_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "ltd.uk", "plc.uk", "net.uk",
    "com.au", "net.au", "org.au", "edu.au", "gov.au",
    "co.jp", "ne.jp", "or.jp", "ac.jp", "go.jp",
    "com.br", "net.br", "org.br", "gov.br",
    "com.cn", "net.cn", "org.cn", "gov.cn",
    "co.in", "net.in", "org.in", "gov.in",
    "co.kr", "or.kr", "ne.kr",
    "co.nz", "org.nz", "net.nz",
    "co.za", "org.za",
    "com.mx", "org.mx",
    "com.ar", "com.tr", "com.tw", "com.hk", "com.sg", "com.my", "com.ph",
    "co.id", "co.il", "co.th",
    "github.io", "gitlab.io", "blogspot.com", "herokuapp.com", "appspot.com",
    "cloudfront.net", "azurewebsites.net", "netlify.app", "vercel.app",
    "pages.dev", "workers.dev", "s3.amazonaws.com",
];

/// Single-label suffixes known to the snapshot. Unknown TLDs are still
/// handled by the implicit rule; this list exists for documentation and
/// the `is_public_suffix` query.
const TLDS: &[&str] = &[
    "com", "org", "net", "edu", "gov", "mil", "int", "io", "co", "ai", "app",
    "dev", "info", "biz", "me", "tv", "cc", "xyz", "online", "site", "shop",
    "uk", "de", "fr", "it", "es", "nl", "be", "ch", "at", "se", "no", "dk",
    "fi", "pl", "cz", "sk", "hu", "ro", "ru", "ua", "jp", "cn", "kr", "in",
    "au", "nz", "br", "ar", "mx", "ca", "us", "za", "tr", "tw", "hk", "sg",
    "my", "ph", "id", "il", "th", "ie", "pt", "gr", "example", "test",
    "localhost",
];

/// True if `host` is itself a public suffix in the snapshot.
pub fn is_public_suffix(host: &str) -> bool {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    MULTI_LABEL_SUFFIXES.contains(&host.as_str()) || TLDS.contains(&host.as_str())
}

fn suffix_label_count(labels: &[&str]) -> usize {
    // Longest matching multi-label suffix wins.
    let mut best = 1;
    for n in 2..=labels.len() {
        let candidate = labels[labels.len() - n..].join(".");
        if MULTI_LABEL_SUFFIXES.contains(&candidate.as_str()) {
            best = n;
        }
    }
    best
}

/// Registrable domain (eTLD+1) of `host`.
///
/// IP literals and bare suffixes are returned unchanged (lowercased).
pub fn registrable_domain(host: &str) -> String {
    let host = host
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim_end_matches('.')
        .to_ascii_lowercase();
    if host.parse::<IpAddr>().is_ok() {
        return host;
    }
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    if labels.is_empty() {
        return host;
    }
    let suffix = suffix_label_count(&labels);
    if labels.len() <= suffix {
        return labels.join(".");
    }
    labels[labels.len() - suffix - 1..].join(".")
}

/// Host component of a URL string, lowercased. `None` if the URL has no host.
pub fn host_of(url: &str) -> Option<String> {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(|h| h.to_ascii_lowercase()))
}

/// True when both hosts share a registrable domain.
pub fn same_site(a: &str, b: &str) -> bool {
    registrable_domain(a) == registrable_domain(b)
}

/// True when `host` equals `domain` or is a subdomain of it.
pub fn host_within(host: &str, domain: &str) -> bool {
    let host = host.to_ascii_lowercase();
    let domain = domain.to_ascii_lowercase();
    host == domain || host.ends_with(&format!(".{domain}"))
}
