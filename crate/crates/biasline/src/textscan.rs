//! Sentence segmentation and simultaneous whole-word matching of term lists
//! over raw text.
//!
//! Matching rules (the contract every caller and test relies on):
//! - case-insensitive for ASCII; term lists are lowercased on construction
//! - a hit needs word boundaries on both sides: the adjacent character is not
//!   a Unicode letter, or the text/window edge
//! - multi-word terms match across exactly one whitespace character (space,
//!   tab, or newline) per internal space
//! - overlapping candidates are resolved left to right, longest match first
//!   at a shared start, after boundary filtering (so a boundary-rejected long
//!   match never shadows a valid shorter one)

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::normalize_term;

/// Byte range of one sentence; `end` exclusive. Always lies on char
/// boundaries and starts/ends on non-whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

/// One term occurrence; byte offsets into the scanned text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermHit {
    pub term_id: u32,
    pub start: usize,
    pub end: usize,
}

const ABBREVIATIONS: [&str; 9] =
    ["dr.", "e.g.", "etc.", "i.e.", "mr.", "mrs.", "ms.", "prof.", "u.s."];

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}' | '\u{00ab}' | '\u{2039}')
}

/// Rule-based splitter: break after `.`, `?`, `!` when followed by whitespace
/// and then an uppercase letter or opening quote (or nothing at all); a small
/// abbreviation list suppresses `.` splits; a blank line always splits; text
/// without a terminator is one sentence. Spans are trimmed to non-whitespace.
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut sent_start: Option<usize> = None;
    let mut last_non_ws_end = 0usize;

    let mut i = 0;
    while i < n {
        let (byte, c) = chars[i];
        if !c.is_whitespace() {
            if sent_start.is_none() {
                sent_start = Some(byte);
            }
            last_non_ws_end = byte + c.len_utf8();
            if matches!(c, '.' | '?' | '!') && splits_here(&chars, i) {
                spans.push(SentenceSpan { start: sent_start.take().unwrap(), end: byte + 1 });
            }
        } else if c == '\n' {
            // a blank line (possibly with spaces/tabs/CR between the
            // newlines) ends the current sentence even without a terminator
            let mut j = i + 1;
            while j < n && matches!(chars[j].1, ' ' | '\t' | '\r') {
                j += 1;
            }
            if j < n && chars[j].1 == '\n' {
                if let Some(start) = sent_start.take() {
                    spans.push(SentenceSpan { start, end: last_non_ws_end });
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if let Some(start) = sent_start {
        spans.push(SentenceSpan { start, end: last_non_ws_end });
    }
    spans
}

fn splits_here(chars: &[(usize, char)], i: usize) -> bool {
    let n = chars.len();
    let terminator = chars[i].1;
    if i + 1 < n && !chars[i + 1].1.is_whitespace() {
        return false; // "3.14", "e.g.x", "What?!" on the first mark
    }
    let mut j = i + 1;
    while j < n && chars[j].1.is_whitespace() {
        j += 1;
    }
    if let Some(&(_, next)) = chars.get(j) {
        if !next.is_uppercase() && !is_opening_quote(next) {
            return false;
        }
    }
    terminator != '.' || !ends_with_abbreviation(chars, i)
}

fn ends_with_abbreviation(chars: &[(usize, char)], i: usize) -> bool {
    let mut k = i;
    while k > 0 && !chars[k - 1].1.is_whitespace() {
        k -= 1;
    }
    // strip leading punctuation so "(e.g." still matches
    while k < i && !chars[k].1.is_alphabetic() {
        k += 1;
    }
    let token: String = chars[k..=i].iter().map(|&(_, c)| c.to_ascii_lowercase()).collect();
    ABBREVIATIONS.contains(&token.as_str())
}

/// Text bytes are mapped through this before hitting the automaton: ASCII
/// letters fold to lowercase, every ASCII whitespace byte becomes a plain
/// space. Patterns are stored in the same normalized space.
#[inline]
fn byte_class(b: u8) -> u8 {
    match b {
        b'A'..=b'Z' => b + 32,
        b'\t' | b'\n' | b'\x0b' | b'\x0c' | b'\r' => b' ',
        _ => b,
    }
}

/// Multi-pattern matcher: Aho–Corasick automaton with a dense transition
/// table over class-mapped bytes. Immutable and `Sync` after construction.
pub struct TermMatcher {
    terms: Vec<String>,
    /// flat `states × 256` transition table
    delta: Vec<u32>,
    /// per state: every pattern ending there, as (term_id, pattern byte len)
    outputs: Vec<Vec<(u32, u32)>>,
}

impl TermMatcher {
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Result<TermMatcher> {
        Self::build(terms, false)
    }

    /// Additionally match a naive `term + "s"` plural for every term,
    /// reported under the same term id.
    pub fn with_plural_variants<S: AsRef<str>>(terms: &[S]) -> Result<TermMatcher> {
        Self::build(terms, true)
    }

    fn build<S: AsRef<str>>(terms: &[S], plurals: bool) -> Result<TermMatcher> {
        let mut normalized = Vec::with_capacity(terms.len());
        for term in terms {
            let n = normalize_term(term.as_ref());
            if n.is_empty() {
                return Err(Error::Config(format!(
                    "matcher term {:?} is empty after normalization",
                    term.as_ref()
                )));
            }
            if normalized.contains(&n) {
                return Err(Error::Config(format!("duplicate matcher term {n:?}")));
            }
            normalized.push(n);
        }

        let mut patterns: Vec<(Vec<u8>, u32)> = Vec::new();
        for (id, term) in normalized.iter().enumerate() {
            patterns.push((term.bytes().collect(), id as u32));
            if plurals {
                let mut plural = term.clone();
                plural.push('s');
                if !normalized.contains(&plural) {
                    patterns.push((plural.into_bytes(), id as u32));
                }
            }
        }

        // trie with deterministic child order
        let mut children: Vec<std::collections::BTreeMap<u8, u32>> = vec![Default::default()];
        let mut outputs: Vec<Vec<(u32, u32)>> = vec![Vec::new()];
        for (bytes, id) in &patterns {
            let mut state = 0u32;
            for &b in bytes {
                let next = children[state as usize].get(&b).copied();
                state = match next {
                    Some(s) => s,
                    None => {
                        children.push(Default::default());
                        outputs.push(Vec::new());
                        let s = (children.len() - 1) as u32;
                        children[state as usize].insert(b, s);
                        s
                    }
                };
            }
            outputs[state as usize].push((*id, bytes.len() as u32));
        }

        // breadth-first fail links; outputs are flattened as we go (a state
        // inherits everything its fail target reports)
        let n_states = children.len();
        let mut fail = vec![0u32; n_states];
        let mut delta = vec![0u32; n_states * 256];
        let mut queue = std::collections::VecDeque::new();
        for (&b, &s) in &children[0] {
            delta[b as usize] = s;
            queue.push_back(s);
        }
        while let Some(state) = queue.pop_front() {
            let f = fail[state as usize];
            let inherited = outputs[f as usize].clone();
            outputs[state as usize].extend(inherited);
            let row = state as usize * 256;
            let fail_row = f as usize * 256;
            for b in 0..256usize {
                delta[row + b] = delta[fail_row + b];
            }
            for (&b, &child) in &children[state as usize] {
                delta[row + b as usize] = child;
                fail[child as usize] = delta[fail_row + b as usize];
                queue.push_back(child);
            }
        }

        Ok(TermMatcher { terms: normalized, delta, outputs })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        let n = normalize_term(term);
        self.terms.iter().position(|t| *t == n).map(|i| i as u32)
    }

    /// All boundary-valid, non-overlapping hits over the whole text.
    pub fn find(&self, text: &str) -> Vec<TermHit> {
        self.scan(text, 0)
    }

    /// Restrict matching to `window`; the window edges count as text edges
    /// for word boundaries. `window` must lie on char boundaries (sentence
    /// spans always do).
    pub fn find_in(&self, text: &str, window: SentenceSpan) -> Vec<TermHit> {
        assert!(
            window.start <= window.end && window.end <= text.len(),
            "window {}..{} out of bounds for text of length {}",
            window.start,
            window.end,
            text.len()
        );
        self.scan(&text[window.start..window.end], window.start)
    }

    fn scan(&self, slice: &str, offset: usize) -> Vec<TermHit> {
        let bytes = slice.as_bytes();
        let mut candidates = Vec::new();
        let mut state = 0u32;
        for (i, &b) in bytes.iter().enumerate() {
            state = self.delta[state as usize * 256 + byte_class(b) as usize];
            let outs = &self.outputs[state as usize];
            if !outs.is_empty() {
                let end = i + 1;
                for &(term_id, len) in outs {
                    let start = end - len as usize;
                    if boundary_ok(slice, start, end) {
                        candidates.push(TermHit { term_id, start, end });
                    }
                }
            }
        }
        let mut hits = select_leftmost_longest(candidates);
        if offset != 0 {
            for hit in &mut hits {
                hit.start += offset;
                hit.end += offset;
            }
        }
        hits
    }
}

fn boundary_ok(slice: &str, start: usize, end: usize) -> bool {
    if !slice.is_char_boundary(start) || !slice.is_char_boundary(end) {
        return false;
    }
    let before_ok =
        start == 0 || !slice[..start].chars().next_back().is_some_and(char::is_alphabetic);
    let after_ok = end == slice.len() || !slice[end..].chars().next().is_some_and(char::is_alphabetic);
    before_ok && after_ok
}

/// Greedy left-to-right selection: earliest start wins, longest match wins at
/// a shared start, lowest term id breaks exact ties.
fn select_leftmost_longest(mut candidates: Vec<TermHit>) -> Vec<TermHit> {
    candidates.sort_unstable_by(|a, b| {
        a.start.cmp(&b.start).then(b.end.cmp(&a.end)).then(a.term_id.cmp(&b.term_id))
    });
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for hit in candidates {
        if hit.start >= cursor {
            cursor = hit.end;
            out.push(hit);
        }
    }
    out
}
