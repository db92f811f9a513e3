//! Shared helpers for integration tests: a from-scratch reference
//! implementation of the matching/counting contract (used as an oracle
//! against the optimized pipeline), a minimal stub HTTP server for the
//! generation harness, and independent numeric oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use biasline::classify::{UnitCounts, UnitMode};
use biasline::corpus::sample_key;
use biasline::textscan::segment_sentences;

// ---------------------------------------------------------------------------
// naive matcher: per-term, per-position scanning with the same contract as
// the automaton (ASCII case fold, ASCII whitespace folds to one space,
// whole-word boundaries, leftmost-longest selection)

fn fold(b: u8) -> u8 {
    match b {
        b'A'..=b'Z' => b + 32,
        b'\t' | b'\n' | b'\x0b' | b'\x0c' | b'\r' => b' ',
        _ => b,
    }
}

fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
        return false;
    }
    let before = start == 0 || !text[..start].chars().next_back().is_some_and(char::is_alphabetic);
    let after = end == text.len() || !text[end..].chars().next().is_some_and(char::is_alphabetic);
    before && after
}

/// Every boundary-valid occurrence of every term, before overlap resolution.
fn naive_candidates(terms: &[String], text: &str) -> Vec<(u32, usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for (id, term) in terms.iter().enumerate() {
        let pat = term.as_bytes();
        if pat.is_empty() || pat.len() > bytes.len() {
            continue;
        }
        for start in 0..=(bytes.len() - pat.len()) {
            let matches = pat
                .iter()
                .zip(&bytes[start..start + pat.len()])
                .all(|(&p, &b)| p == fold(b));
            if matches && boundary_ok(text, start, start + pat.len()) {
                out.push((id as u32, start, start + pat.len()));
            }
        }
    }
    out
}

/// Greedy leftmost-longest selection (earliest start, then longest, then
/// lowest id), identical to the production selection rule.
pub fn naive_hits(terms: &[String], text: &str) -> Vec<(u32, usize, usize)> {
    let mut candidates = naive_candidates(terms, text);
    candidates.sort_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    let mut cursor = 0usize;
    let mut out = Vec::new();
    for hit in candidates {
        if hit.1 >= cursor {
            cursor = hit.2;
            out.push(hit);
        }
    }
    out
}

/// Contribution of one document to each occupation present in it, by the
/// exclusive-gender rule, computed with the naive matcher. `female` and
/// `male` are the gendered token lists; they are matched as one combined
/// list so overlap resolution works across both sets.
pub fn naive_doc_counts(
    occupations: &[String],
    female: &[String],
    male: &[String],
    mode: UnitMode,
    text: &str,
) -> BTreeMap<u32, UnitCounts> {
    let mut gender_terms: Vec<String> = female.to_vec();
    gender_terms.extend(male.iter().cloned());
    let n_female = female.len() as u32;

    let mut acc: BTreeMap<u32, UnitCounts> = BTreeMap::new();
    let units: Vec<(usize, usize)> = match mode {
        UnitMode::Document => vec![(0, text.len())],
        UnitMode::Sentence => {
            segment_sentences(text).into_iter().map(|s| (s.start, s.end)).collect()
        }
    };
    for (start, end) in units {
        let unit = &text[start..end];
        let mut ids: Vec<u32> = naive_hits(occupations, unit).into_iter().map(|h| h.0).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            continue;
        }
        let mut f = 0u32;
        let mut m = 0u32;
        for (id, _, _) in naive_hits(&gender_terms, unit) {
            if id < n_female {
                f += 1;
            } else {
                m += 1;
            }
        }
        for id in ids {
            acc.entry(id).or_default().absorb_unit(f, m);
        }
    }
    acc
}

/// Whole-pipeline reference: k-min sampling by full sort, then naive
/// counting of the admitted documents. Only occupations with at least one
/// sampled document appear in the result.
pub fn naive_scan(
    docs: &[(String, String)],
    occupations: &[String],
    female: &[String],
    male: &[String],
    mode: UnitMode,
    cap: usize,
    seed: u64,
) -> BTreeMap<String, UnitCounts> {
    // per-document naive counts, reused across occupations
    let per_doc: Vec<BTreeMap<u32, UnitCounts>> = docs
        .iter()
        .map(|(_, text)| naive_doc_counts(occupations, female, male, mode, text))
        .collect();

    let mut table = BTreeMap::new();
    for (occ_id, name) in occupations.iter().enumerate() {
        let mut keyed: Vec<([u8; 32], &UnitCounts)> = Vec::new();
        for (doc, counts) in docs.iter().zip(&per_doc) {
            if let Some(c) = counts.get(&(occ_id as u32)) {
                keyed.push((sample_key(seed, name, &doc.0), c));
            }
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let mut acc = UnitCounts::default();
        for (_, c) in keyed.into_iter().take(cap) {
            acc.merge(c);
        }
        if acc.units_scanned > 0 {
            table.insert(name.clone(), acc);
        }
    }
    table
}

// ---------------------------------------------------------------------------
// stub HTTP server: accepts sequentially, parses one POST per connection,
// and answers from an injected behavior function

pub type StubBehavior = dyn Fn(u64, serde_json::Value) -> (u16, String) + Send + Sync;

pub struct StubServer {
    pub url: String,
    addr: std::net::SocketAddr,
    hits: Arc<AtomicU64>,
    auth: Arc<std::sync::Mutex<Vec<Option<String>>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    /// `behavior(request_index, request_body_json)` → (status, response body).
    pub fn start<F>(behavior: F) -> StubServer
    where
        F: Fn(u64, serde_json::Value) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().expect("stub server address");
        let hits = Arc::new(AtomicU64::new(0));
        let auth = Arc::new(std::sync::Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let behavior: Arc<StubBehavior> = Arc::new(behavior);

        let thread_hits = hits.clone();
        let thread_auth = auth.clone();
        let thread_shutdown = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let idx = thread_hits.fetch_add(1, Ordering::SeqCst);
                let _ = handle_connection(stream, idx, &*behavior, &thread_auth);
            }
        });

        StubServer {
            url: format!("http://{addr}/v1/completions"),
            addr,
            hits,
            auth,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    /// `authorization` header of every request, in arrival order.
    pub fn auth_headers(&self) -> Vec<Option<String>> {
        self.auth.lock().expect("auth header log").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    idx: u64,
    behavior: &StubBehavior,
    auth: &std::sync::Mutex<Vec<Option<String>>>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
        if buf.len() > 1 << 20 {
            return Ok(());
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let header_value = |name: &str| {
        headers.lines().find_map(|line| {
            let (key, value) = line.split_once(':')?;
            key.trim().eq_ignore_ascii_case(name).then(|| value.trim().to_string())
        })
    };
    let content_length: usize =
        header_value("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    auth.lock().expect("auth header log").push(header_value("authorization"));
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body: serde_json::Value =
        serde_json::from_slice(&buf[header_end..header_end + content_length])
            .unwrap_or(serde_json::Value::Null);

    let (status, response_body) = behavior(idx, body);
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()?;
    Ok(())
}

/// Standard completion-style success body.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({ "choices": [ { "text": text } ] }).to_string()
}

/// Standard chat-style success body.
pub fn chat_body(text: &str) -> String {
    serde_json::json!({ "choices": [ { "message": { "content": text } } ] }).to_string()
}

/// Answer in whichever response shape the request's prompt style expects.
pub fn styled_body(request: &serde_json::Value, text: &str) -> String {
    if request.get("messages").is_some() {
        chat_body(text)
    } else {
        completion_body(text)
    }
}

// ---------------------------------------------------------------------------
// numeric oracles

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, eps / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, eps / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, eps, 50)
}

/// Regularized incomplete beta by quadrature: I_x(a, b) as a ratio of two
/// integrals of the substituted integrand 2·u^(2a−1)·(1−u²)^(b−1) (the
/// substitution t = u² removes the t→0 singularity for a ≥ 1/2). Requires
/// a ≥ 1/2 and b ≥ 1.
pub fn betai_by_quadrature(a: f64, b: f64, x: f64) -> f64 {
    assert!(a >= 0.5 && b >= 1.0, "oracle is valid for a >= 1/2, b >= 1");
    assert!((0.0..=1.0).contains(&x));
    let g = move |u: f64| 2.0 * u.powf(2.0 * a - 1.0) * (1.0 - u * u).powf(b - 1.0);
    let eps = 1e-12;
    let numerator = adaptive_simpson(&g, 0.0, x.sqrt(), eps);
    let total = adaptive_simpson(&g, 0.0, 1.0, eps);
    (numerator / total).clamp(0.0, 1.0)
}

/// Survival function of the F distribution by quadrature (1 − CDF), via the
/// incomplete-beta identity CDF(f) = I_{d1 f/(d1 f + d2)}(d1/2, d2/2).
pub fn f_sf_by_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let x = d1 * f / (d1 * f + d2);
    1.0 - betai_by_quadrature(d1 / 2.0, d2 / 2.0, x)
}

/// Closed-form Pearson correlation over integer series, with all sums done
/// exactly in i128: r = (nΣxy − ΣxΣy) / √(nΣx² − (Σx)²) √(nΣy² − (Σy)²).
/// Returns None when either series has zero variance.
pub fn pearson_exact(xs: &[i64], ys: &[i64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as i128;
    let sx: i128 = xs.iter().map(|&v| i128::from(v)).sum();
    let sy: i128 = ys.iter().map(|&v| i128::from(v)).sum();
    let sxy: i128 = xs.iter().zip(ys).map(|(&a, &b)| i128::from(a) * i128::from(b)).sum();
    let sxx: i128 = xs.iter().map(|&v| i128::from(v) * i128::from(v)).sum();
    let syy: i128 = ys.iter().map(|&v| i128::from(v) * i128::from(v)).sum();
    let num = n * sxy - sx * sy;
    let dx = n * sxx - sx * sx;
    let dy = n * syy - sy * sy;
    if dx == 0 || dy == 0 {
        return None;
    }
    Some(num as f64 / ((dx as f64).sqrt() * (dy as f64).sqrt()))
}

/// Solve A·x = b by Gauss–Jordan elimination with partial pivoting.
/// Returns None when the system is singular to working precision.
pub fn gauss_jordan_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let scale = a[col][col];
        for value in a[col].iter_mut() {
            *value /= scale;
        }
        b[col] /= scale;
        for row in 0..n {
            if row != col {
                let factor = a[row][col];
                if factor != 0.0 {
                    for k in 0..n {
                        a[row][k] -= factor * a[col][k];
                    }
                    b[row] -= factor * b[col];
                }
            }
        }
    }
    Some(b)
}

// ---------------------------------------------------------------------------
// corpus helpers

/// Write `docs` as JSONL (`{"id": ..., "text": ...}` per line).
pub fn write_jsonl(path: &std::path::Path, docs: &[(String, String)]) {
    let mut out = String::new();
    for (id, text) in docs {
        out.push_str(&serde_json::json!({ "id": id, "text": text }).to_string());
        out.push('\n');
    }
    std::fs::write(path, out).expect("write corpus");
}

// ---------------------------------------------------------------------------
// fuzz data generation (seeded, deterministic)

use rand::prelude::*;

const SYLLABLES: [&str; 14] =
    ["ba", "ne", "ro", "li", "tan", "ker", "mo", "su", "vi", "dra", "pel", "ku", "zef", "gor"];

fn fuzz_word(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

/// `n` unique lowercase terms; roughly a quarter are two-word phrases and a
/// few deliberately extend an earlier term (shared-prefix stress case).
pub fn fuzz_terms(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut terms: Vec<String> = Vec::new();
    while terms.len() < n {
        let candidate = if !terms.is_empty() && rng.random_bool(0.15) {
            // extend an existing term by one more word
            let base = terms[rng.random_range(0..terms.len())].clone();
            format!("{base} {}", fuzz_word(rng))
        } else if rng.random_bool(0.25) {
            format!("{} {}", fuzz_word(rng), fuzz_word(rng))
        } else {
            fuzz_word(rng)
        };
        if seen.insert(candidate.clone()) {
            terms.push(candidate);
        }
    }
    terms
}

/// Two disjoint gendered token lists, also disjoint from `avoid`.
pub fn fuzz_gender_terms(
    rng: &mut impl Rng,
    per_side: usize,
    avoid: &[String],
) -> (Vec<String>, Vec<String>) {
    let mut seen: std::collections::BTreeSet<String> = avoid.iter().cloned().collect();
    let mut tokens = Vec::new();
    while tokens.len() < per_side * 2 {
        let candidate = fuzz_word(rng);
        if seen.insert(candidate.clone()) {
            tokens.push(candidate);
        }
    }
    let male = tokens.split_off(per_side);
    (tokens, male)
}

/// One fuzz document mixing filler, occupation terms, gendered tokens,
/// random casing, punctuation, decimals, abbreviations, and glued-substring
/// boundary traps.
pub fn fuzz_doc(rng: &mut impl Rng, occupations: &[String], gender: &[String]) -> String {
    let n_words = rng.random_range(8..45);
    let mut text = String::new();
    for _ in 0..n_words {
        let roll: f64 = rng.random();
        let mut word = if roll < 0.18 && !occupations.is_empty() {
            occupations[rng.random_range(0..occupations.len())].clone()
        } else if roll < 0.32 && !gender.is_empty() {
            gender[rng.random_range(0..gender.len())].clone()
        } else if roll < 0.36 {
            // substring trap: a term glued to letters must not match
            let pool = if occupations.is_empty() { gender } else { occupations };
            if pool.is_empty() {
                fuzz_word(rng)
            } else {
                format!("x{}", pool[rng.random_range(0..pool.len())].replace(' ', ""))
            }
        } else if roll < 0.40 {
            ["3.14", "Dr.", "e.g.", "U.S."][rng.random_range(0..4)].to_string()
        } else {
            fuzz_word(rng)
        };
        // random casing
        match rng.random_range(0..10) {
            0 => word = word.to_uppercase(),
            1 => {
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    word = first.to_uppercase().collect::<String>() + chars.as_str();
                }
            }
            _ => {}
        }
        if !text.is_empty() {
            match rng.random_range(0..20) {
                0 => text.push_str(". "),
                1 => text.push_str("? "),
                2 => text.push_str("! "),
                3 => text.push_str(", "),
                4 => text.push_str("\n\n"),
                5 => text.push('\n'),
                6 => text.push('\t'),
                _ => text.push(' '),
            }
        }
        text.push_str(&word);
    }
    match rng.random_range(0..4) {
        0 => text.push('.'),
        1 => text.push('!'),
        _ => {}
    }
    text
}

/// A full fuzz corpus: `(doc_id, text)` pairs.
pub fn fuzz_corpus(
    rng: &mut impl Rng,
    n_docs: usize,
    occupations: &[String],
    gender: &[String],
) -> Vec<(String, String)> {
    (0..n_docs)
        .map(|i| (format!("doc-{i:05}"), fuzz_doc(rng, occupations, gender)))
        .collect()
}
