//! Resource reference extraction from argument strings.
//!
//! Four reference kinds are recognized with fixed, normative patterns:
//!
//! * `Path`: `(/[A-Za-z0-9._-]+){1,}` — canonical form is verbatim.
//! * `Url`: `https?://[^\s"'<>]+` — scheme and authority lowercased, the
//!   remainder verbatim.
//! * `Ipv4`: dotted quad with every octet in 0–255.
//! * `Host`: `[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+` with an alphabetic final
//!   label — lowercased.
//!
//! URLs are matched first: a path or hostname inside a URL span is reported
//! once, as the URL. IPv4 literals are reported wherever they appear, so
//! `http://10.0.0.5/drop` yields both the Url and the Ipv4.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Path,
    Url,
    Host,
    Ipv4,
}

/// One canonicalized resource reference. Ordering is (kind, name), which
/// fixes the edge-emission order for shared-resource links.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resource {
    pub kind: ResourceKind,
    pub name: String,
}

impl Resource {
    pub fn new(kind: ResourceKind, name: impl Into<String>) -> Self {
        Resource { kind, name: name.into() }
    }
}

fn path_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(/[A-Za-z0-9._-]+)+").expect("path pattern"))
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"https?://[^\s"'<>]+"#).expect("url pattern"))
}

fn host_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+").expect("host pattern"))
}

fn overlaps(spans: &[(usize, usize)], start: usize, end: usize) -> bool {
    spans.iter().any(|&(s, e)| start < e && s < end)
}

/// Lowercase scheme and authority of a URL match, keep the rest verbatim.
fn canonical_url(raw: &str) -> String {
    let after_scheme = raw.find("://").map(|i| i + 3).unwrap_or(raw.len());
    let authority_end = raw[after_scheme..]
        .find(['/', '?', '#'])
        .map(|i| after_scheme + i)
        .unwrap_or(raw.len());
    let mut out = raw[..authority_end].to_ascii_lowercase();
    out.push_str(&raw[authority_end..]);
    out
}

/// Scan maximal digit/dot runs for valid dotted quads. Leading and trailing
/// dots (sentence punctuation) are trimmed before the octet check.
fn extract_ipv4(text: &str, out: &mut BTreeSet<Resource>) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if !(bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        let run = text[start..i].trim_matches('.');
        let parts: Vec<&str> = run.split('.').collect();
        if parts.len() == 4
            && parts
                .iter()
                .all(|p| !p.is_empty() && p.len() <= 3 && p.parse::<u16>().map_or(false, |v| v <= 255))
        {
            out.insert(Resource::new(ResourceKind::Ipv4, run));
        }
    }
}

/// Extract the deduplicated, canonicalized resource set from one argument
/// string. Deterministic: the returned set iterates in (kind, name) order.
pub fn extract_resources(arguments: &str) -> BTreeSet<Resource> {
    let mut out = BTreeSet::new();

    let url_spans: Vec<(usize, usize)> = url_re()
        .find_iter(arguments)
        .map(|m| {
            out.insert(Resource::new(ResourceKind::Url, canonical_url(m.as_str())));
            (m.start(), m.end())
        })
        .collect();

    let path_spans: Vec<(usize, usize)> = path_re()
        .find_iter(arguments)
        .filter(|m| !overlaps(&url_spans, m.start(), m.end()))
        .map(|m| {
            out.insert(Resource::new(ResourceKind::Path, m.as_str()));
            (m.start(), m.end())
        })
        .collect();

    for m in host_re().find_iter(arguments) {
        if overlaps(&url_spans, m.start(), m.end()) || overlaps(&path_spans, m.start(), m.end()) {
            continue;
        }
        let final_label = m.as_str().rsplit('.').next().unwrap_or("");
        if !final_label.is_empty() && final_label.bytes().all(|b| b.is_ascii_alphabetic()) {
            out.insert(Resource::new(ResourceKind::Host, m.as_str().to_ascii_lowercase()));
        }
    }

    extract_ipv4(arguments, &mut out);
    out
}
