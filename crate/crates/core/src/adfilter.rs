//! Two-level ad-link identification.
//!
//! Level 1 flags links that redirect outside the hosting site: the link's
//! registrable domain (one label plus the longest matching entry of a
//! bundled public-suffix table) differs from the page host's. Level 2
//! matches the link URL against a parsed subset of ad-blocker filter rules,
//! augmented by manual keyword substrings. A link is classified as an ad
//! only when both levels fire.
//!
//! Supported rule kinds: plain substring, `||` anchored-domain, `|` start
//! and end anchors, `^` separator class, `*` wildcard, and `@@` exception
//! prefixes. Comments, element-hiding rules, option-suffixed rules
//! (`$third-party` …), and regex rules are skipped with diagnostics rather
//! than partially applied.

use std::collections::HashSet;

use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum AdfilterError {
    #[error("malformed URL {0:?}: {1}")]
    MalformedUrl(String, url::ParseError),
    #[error("URL {0:?} has no host")]
    MissingHost(String),
}

// ---------------------------------------------------------------- suffixes

/// Registrable-domain lookup over a plain-text suffix table.
#[derive(Debug, Clone)]
pub struct PublicSuffixTable {
    suffixes: HashSet<String>,
}

impl PublicSuffixTable {
    /// The table compiled into the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/public_suffix.txt"))
    }

    /// One suffix per line; `#` lines are comments.
    pub fn parse(text: &str) -> Self {
        let suffixes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_ascii_lowercase)
            .collect();
        Self { suffixes }
    }

    /// The public suffix plus one label, e.g. `a.b.example.co.uk` →
    /// `example.co.uk`. Hosts that are IP addresses, single labels, or
    /// nothing beyond a listed suffix are returned whole.
    pub fn registrable_domain(&self, host: &str) -> String {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        if host.parse::<std::net::IpAddr>().is_ok() {
            return host;
        }
        let labels: Vec<&str> = host.split('.').collect();
        // longest listed suffix strictly shorter than the host itself
        for take in (1..labels.len()).rev() {
            let suffix = labels[labels.len() - take..].join(".");
            if self.suffixes.contains(&suffix) {
                return labels[labels.len() - take - 1..].join(".");
            }
        }
        if labels.len() >= 2 {
            // unknown TLD: fall back to the last two labels
            return labels[labels.len() - 2..].join(".");
        }
        host
    }
}

// ------------------------------------------------------------------- rules

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Substring,
    AnchoredDomain,
    StartAnchor,
    EndAnchor,
    SeparatorWildcard,
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Lit(String),
    /// `*` — any run of characters, including none.
    Wild,
    /// `^` — one separator character or end-of-string.
    Sep,
}

/// Whether a character belongs to the `^` separator class: anything that is
/// not alphanumeric and not one of `_ - . %`.
pub fn is_separator(c: char) -> bool {
    !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '%'))
}

/// One parsed URL-blocking rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterRule {
    pub raw: String,
    pub kind: RuleKind,
    pub is_exception: bool,
    toks: Vec<Tok>,
    domain_anchor: bool,
    start_anchor: bool,
    end_anchor: bool,
}

impl FilterRule {
    fn parse(raw: &str) -> Self {
        let mut body = raw;
        let is_exception = body.starts_with("@@");
        if is_exception {
            body = &body[2..];
        }
        let domain_anchor = body.starts_with("||");
        if domain_anchor {
            body = &body[2..];
        }
        let start_anchor = !domain_anchor && body.starts_with('|');
        if start_anchor {
            body = &body[1..];
        }
        let end_anchor = body.ends_with('|');
        if end_anchor {
            body = &body[..body.len() - 1];
        }
        let mut toks = Vec::new();
        let mut lit = String::new();
        for c in body.chars() {
            match c {
                '*' | '^' => {
                    if !lit.is_empty() {
                        toks.push(Tok::Lit(std::mem::take(&mut lit)));
                    }
                    toks.push(if c == '*' { Tok::Wild } else { Tok::Sep });
                }
                _ => lit.push(c),
            }
        }
        if !lit.is_empty() {
            toks.push(Tok::Lit(lit));
        }
        let kind = if domain_anchor {
            RuleKind::AnchoredDomain
        } else if start_anchor {
            RuleKind::StartAnchor
        } else if end_anchor {
            RuleKind::EndAnchor
        } else if toks.contains(&Tok::Sep) {
            RuleKind::SeparatorWildcard
        } else if toks.contains(&Tok::Wild) {
            RuleKind::Wildcard
        } else {
            RuleKind::Substring
        };
        FilterRule {
            raw: raw.to_string(),
            kind,
            is_exception,
            toks,
            domain_anchor,
            start_anchor,
            end_anchor,
        }
    }

    /// The original rule text; re-parsing it yields an identical rule.
    pub fn render(&self) -> &str {
        &self.raw
    }

    /// Whether the rule matches the URL.
    pub fn matches(&self, url: &NormalizedUrl) -> bool {
        let starts: Vec<usize> = if self.start_anchor {
            vec![0]
        } else if self.domain_anchor {
            url.domain_anchor_starts()
        } else {
            (0..=url.text.len()).collect()
        };
        starts
            .into_iter()
            .any(|p| self.match_from(url, p, &self.toks))
    }

    fn match_from(&self, url: &NormalizedUrl, pos: usize, toks: &[Tok]) -> bool {
        let text = url.text.as_bytes();
        match toks.first() {
            None => !self.end_anchor || pos == text.len(),
            Some(Tok::Lit(lit)) => {
                let bytes = lit.as_bytes();
                if pos + bytes.len() > text.len() {
                    return false;
                }
                for (off, &b) in bytes.iter().enumerate() {
                    let t = text[pos + off];
                    // host portion compares case-insensitively, path exactly
                    let eq = if pos + off < url.host_end {
                        t.eq_ignore_ascii_case(&b)
                    } else {
                        t == b
                    };
                    if !eq {
                        return false;
                    }
                }
                self.match_from(url, pos + bytes.len(), &toks[1..])
            }
            Some(Tok::Sep) => {
                if pos == text.len() {
                    // `^` also matches end-of-string, consuming nothing
                    return self.match_from(url, pos, &toks[1..]);
                }
                let c = url.text[pos..].chars().next().unwrap();
                is_separator(c) && self.match_from(url, pos + c.len_utf8(), &toks[1..])
            }
            Some(Tok::Wild) => (pos..=text.len())
                .any(|p| self.match_from(url, p, &toks[1..])),
        }
    }
}

/// Skipped-line tallies from [`parse_rules`]; parsing is total and never
/// aborts on an unsupported line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseDiagnostics {
    pub parsed: usize,
    pub comments: usize,
    pub element_hiding: usize,
    pub option_suffixed: usize,
    pub regex: usize,
    pub empty: usize,
}

/// Interior of a `/…/` line that makes it a regex rule rather than a plain
/// path pattern like `/pagead/`.
fn looks_like_regex(line: &str) -> bool {
    line.len() > 2
        && line.starts_with('/')
        && line.ends_with('/')
        && line[1..line.len() - 1]
            .chars()
            .any(|c| matches!(c, '\\' | '(' | ')' | '[' | ']' | '{' | '}' | '+' | '?'))
}

/// Parses a rule-list document into the supported subset.
pub fn parse_rules(text: &str) -> (Vec<FilterRule>, ParseDiagnostics) {
    let mut rules = Vec::new();
    let mut diag = ParseDiagnostics::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            diag.empty += 1;
        } else if line.starts_with('!') {
            diag.comments += 1;
        } else if ["##", "#@#", "#?#", "#$#"].iter().any(|s| line.contains(s)) {
            diag.element_hiding += 1;
        } else if looks_like_regex(line) {
            diag.regex += 1;
        } else if line.contains('$') {
            diag.option_suffixed += 1;
        } else {
            rules.push(FilterRule::parse(line));
            diag.parsed += 1;
        }
    }
    (rules, diag)
}

// ------------------------------------------------------------ classification

/// URL prepared for rule matching: scheme and host lowercased (the `url`
/// parser already normalizes them), path left as written, and the host span
/// recorded so matching can be case-insensitive there only.
#[derive(Debug, Clone)]
pub struct NormalizedUrl {
    text: String,
    host_start: usize,
    host_end: usize,
    host: String,
}

impl NormalizedUrl {
    pub fn parse(raw: &str) -> Result<Self, AdfilterError> {
        let url =
            Url::parse(raw).map_err(|e| AdfilterError::MalformedUrl(raw.to_string(), e))?;
        let host = url
            .host_str()
            .ok_or_else(|| AdfilterError::MissingHost(raw.to_string()))?
            .to_string();
        let text = url.to_string();
        let host_start = text
            .find(&host)
            .expect("serialized URL contains its host");
        Ok(Self { host_end: host_start + host.len(), text, host_start, host })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Positions where a `||` anchored-domain rule may begin: the host
    /// start and after each dot inside the host.
    fn domain_anchor_starts(&self) -> Vec<usize> {
        let mut starts = vec![self.host_start];
        for (i, b) in self.text[self.host_start..self.host_end].bytes().enumerate() {
            if b == b'.' {
                starts.push(self.host_start + i + 1);
            }
        }
        starts
    }
}

/// What level 2 matched, if anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Level2Match {
    Rule(String),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub is_ad: bool,
    /// Link leaves the hosting site (registrable domains differ).
    pub level1: bool,
    /// Matched rule or keyword; only consulted when `level1` holds.
    pub level2: Option<Level2Match>,
}

/// Rule-set verdict alone: any non-exception rule matches and no exception
/// rule does, or any keyword is a substring (keywords bypass exceptions).
fn level2_match(
    url: &NormalizedUrl,
    rules: &[FilterRule],
    keywords: &[String],
) -> Option<Level2Match> {
    if let Some(k) = keywords.iter().find(|k| url.as_str().contains(k.as_str())) {
        return Some(Level2Match::Keyword(k.clone()));
    }
    let blocked = rules
        .iter()
        .find(|r| !r.is_exception && r.matches(url))?;
    if rules.iter().any(|r| r.is_exception && r.matches(url)) {
        return None;
    }
    Some(Level2Match::Rule(blocked.raw.clone()))
}

/// Classifies a link found on `page_host` with an explicit suffix table.
pub fn classify_url_with(
    table: &PublicSuffixTable,
    page_host: &str,
    link_url: &str,
    rules: &[FilterRule],
    keywords: &[String],
) -> Result<Verdict, AdfilterError> {
    let url = NormalizedUrl::parse(link_url)?;
    let level1 =
        table.registrable_domain(url.host()) != table.registrable_domain(page_host);
    let level2 = if level1 {
        level2_match(&url, rules, keywords)
    } else {
        None
    };
    Ok(Verdict { is_ad: level1 && level2.is_some(), level1, level2 })
}

/// [`classify_url_with`] using the bundled public-suffix table.
pub fn classify_url(
    page_host: &str,
    link_url: &str,
    rules: &[FilterRule],
    keywords: &[String],
) -> Result<Verdict, AdfilterError> {
    classify_url_with(&PublicSuffixTable::bundled(), page_host, link_url, rules, keywords)
}
