//! Word lists used by the feature extractors.
//!
//! Defaults are bundled from `data/`; every list can be replaced by loading a
//! file in the same format (one entry per line, `#` comments).

use std::collections::BTreeSet;

use crate::trace::{DomElement, Tag};

const AD_KEYWORDS: &str = include_str!("../data/ad_keywords.txt");
const AD_SIZES: &str = include_str!("../data/ad_sizes.txt");
const FINGERPRINT_APIS: &str = include_str!("../data/fingerprint_apis.txt");
const LISTENER_LEXICON: &str = include_str!("../data/listener_lexicon.txt");
const FUNCTIONAL_COOKIES: &str = include_str!("../data/functional_cookies.txt");

/// Non-empty, non-comment lines.
pub fn entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn parse_size(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X'])?;
    Some((w.trim().parse().ok()?, h.trim().parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub ad_keywords: BTreeSet<String>,
    pub ad_sizes: BTreeSet<(u32, u32)>,
    pub fingerprint_apis: Vec<String>,
    pub critical_tags: BTreeSet<String>,
    pub sensitive_tags: BTreeSet<String>,
    pub generic_tags: BTreeSet<String>,
    pub functional_events: BTreeSet<String>,
    pub functional_cookies: BTreeSet<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let mut lex = Self {
            ad_keywords: entries(AD_KEYWORDS).map(str::to_lowercase).collect(),
            ad_sizes: entries(AD_SIZES).filter_map(parse_size).collect(),
            fingerprint_apis: entries(FINGERPRINT_APIS).map(String::from).collect(),
            critical_tags: BTreeSet::new(),
            sensitive_tags: BTreeSet::new(),
            generic_tags: BTreeSet::new(),
            functional_events: BTreeSet::new(),
            functional_cookies: entries(FUNCTIONAL_COOKIES).map(str::to_lowercase).collect(),
        };
        lex.load_listener_lexicon(LISTENER_LEXICON);
        lex
    }
}

impl Lexicons {
    /// Replace the listener classes from `section: value` lines.
    pub fn load_listener_lexicon(&mut self, text: &str) {
        self.critical_tags.clear();
        self.sensitive_tags.clear();
        self.generic_tags.clear();
        self.functional_events.clear();
        for line in entries(text) {
            let Some((section, value)) = line.split_once(':') else {
                continue;
            };
            let value = value.trim().to_ascii_lowercase();
            match section.trim() {
                "critical" => self.critical_tags.insert(value),
                "sensitive" => self.sensitive_tags.insert(value),
                "generic" => self.generic_tags.insert(value),
                "functional" => self.functional_events.insert(value),
                _ => false,
            };
        }
    }

    pub fn set_ad_keywords(&mut self, text: &str) {
        self.ad_keywords = entries(text).map(str::to_lowercase).collect();
    }

    pub fn set_ad_sizes(&mut self, text: &str) {
        self.ad_sizes = entries(text).filter_map(parse_size).collect();
    }

    pub fn set_fingerprint_apis(&mut self, text: &str) {
        self.fingerprint_apis = entries(text).map(String::from).collect();
    }

    pub fn set_functional_cookies(&mut self, text: &str) {
        self.functional_cookies = entries(text).map(str::to_lowercase).collect();
    }

    fn tag_key(tag: &Tag) -> &str {
        match tag {
            Tag::Other(_) => "other",
            t => t.as_str(),
        }
    }

    pub fn is_critical(&self, el: &DomElement) -> bool {
        self.critical_tags.contains(Self::tag_key(&el.tag))
    }

    pub fn is_sensitive(&self, el: &DomElement) -> bool {
        self.sensitive_tags.contains(Self::tag_key(&el.tag))
    }

    pub fn is_generic(&self, el: &DomElement) -> bool {
        self.generic_tags.contains(Self::tag_key(&el.tag))
    }

    /// An element addressable on its own: it carries an `id`.
    pub fn is_specific(&self, el: &DomElement) -> bool {
        el.attributes.get("id").is_some_and(|v| !v.is_empty())
    }

    pub fn is_functional_event(&self, event_type: &str) -> bool {
        let t = event_type.to_ascii_lowercase();
        self.functional_events.contains(&t)
    }

    pub fn is_ad_size(&self, width: f64, height: f64) -> bool {
        if width < 0.0 || height < 0.0 {
            return false;
        }
        self.ad_sizes.contains(&(width.round() as u32, height.round() as u32))
    }

    pub fn is_functional_cookie(&self, name: &str) -> bool {
        self.functional_cookies.contains(&name.to_lowercase())
    }
}
