//! Stream documents from disk (JSONL or a directory of `.txt` files) and
//! apply the per-occupation sampling cap deterministically.
//!
//! Sampling is k-min-hash admission: for each occupation, keep the `cap`
//! documents whose keyed hash of (seed, occupation, doc id) is smallest. The
//! selection depends only on those inputs — never on stream order or thread
//! count — and shards merge commutatively.

use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textscan::TermMatcher;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// File → JSONL; directory → JSONL if it contains any top-level
    /// `*.jsonl`, otherwise a text directory.
    Auto,
    Jsonl,
    TextDir,
}

impl std::fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusFormat::Auto => "auto",
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::TextDir => "textdir",
        })
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(CorpusFormat::Auto),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "textdir" => Ok(CorpusFormat::TextDir),
            other => Err(Error::Config(format!(
                "unknown corpus format {other:?} (expected \"auto\", \"jsonl\", or \"textdir\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub documents: u64,
    pub malformed: u64,
}

enum StreamInner {
    Jsonl {
        pending: VecDeque<PathBuf>,
        current: Option<JsonlFile>,
    },
    TextDir {
        pending: VecDeque<(PathBuf, String)>,
    },
}

struct JsonlFile {
    stem: String,
    reader: BufReader<File>,
    line_no: u64,
    buf: String,
}

pub struct DocumentStream {
    inner: StreamInner,
    stats: StreamStats,
}

/// Strict shape for the common case (`id` + `text` only); parsing falls back
/// to a generic JSON object when extra fields are present.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainLine {
    id: Option<String>,
    text: String,
}

pub fn open_corpus(path: &Path, format: CorpusFormat) -> Result<DocumentStream> {
    let meta = std::fs::metadata(path)
        .map_err(|_| Error::Config(format!("corpus path {} does not exist", path.display())))?;
    let resolved = match format {
        CorpusFormat::Jsonl => CorpusFormat::Jsonl,
        CorpusFormat::TextDir => CorpusFormat::TextDir,
        CorpusFormat::Auto => {
            if meta.is_file() {
                CorpusFormat::Jsonl
            } else if list_jsonl_files(path)?.is_empty() {
                CorpusFormat::TextDir
            } else {
                CorpusFormat::Jsonl
            }
        }
    };
    let inner = match resolved {
        CorpusFormat::Jsonl => {
            let files = if meta.is_file() {
                vec![path.to_path_buf()]
            } else {
                list_jsonl_files(path)?
            };
            StreamInner::Jsonl { pending: files.into(), current: None }
        }
        CorpusFormat::TextDir => {
            if !meta.is_dir() {
                return Err(Error::Config(format!(
                    "textdir corpus {} is not a directory",
                    path.display()
                )));
            }
            let mut files = Vec::new();
            collect_txt_files(path, path, &mut files)?;
            files.sort_by(|a, b| a.1.cmp(&b.1));
            StreamInner::TextDir { pending: files.into() }
        }
        CorpusFormat::Auto => unreachable!(),
    };
    Ok(DocumentStream { inner, stats: StreamStats::default() })
}

fn list_jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn collect_txt_files(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, String)>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_txt_files(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt") {
            let rel = path
                .strip_prefix(root)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push((path, rel));
        }
    }
    Ok(())
}

impl DocumentStream {
    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn next_document(&mut self) -> Result<Option<Document>> {
        loop {
            match &mut self.inner {
                StreamInner::Jsonl { pending, current } => {
                    if current.is_none() {
                        let Some(path) = pending.pop_front() else { return Ok(None) };
                        let stem = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        let file = File::open(&path).map_err(Error::io(&path))?;
                        *current = Some(JsonlFile {
                            stem,
                            reader: BufReader::with_capacity(1 << 16, file),
                            line_no: 0,
                            buf: String::new(),
                        });
                    }
                    let jf = current.as_mut().expect("just filled");
                    jf.buf.clear();
                    let read = jf.reader.read_line(&mut jf.buf).map_err(|e| Error::Io {
                        path: PathBuf::from(&jf.stem),
                        source: e,
                    })?;
                    if read == 0 {
                        *current = None;
                        continue;
                    }
                    jf.line_no += 1;
                    let line = jf.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() {
                        continue;
                    }
                    match parse_jsonl_line(line, &jf.stem, jf.line_no) {
                        Some(doc) => {
                            self.stats.documents += 1;
                            return Ok(Some(doc));
                        }
                        None => {
                            self.stats.malformed += 1;
                            continue;
                        }
                    }
                }
                StreamInner::TextDir { pending } => {
                    let Some((path, rel)) = pending.pop_front() else { return Ok(None) };
                    let mut text = String::new();
                    let file = File::open(&path).map_err(Error::io(&path))?;
                    match BufReader::new(file).read_to_string(&mut text) {
                        Ok(_) => {
                            self.stats.documents += 1;
                            return Ok(Some(Document { id: rel, text, meta: BTreeMap::new() }));
                        }
                        Err(e) if e.kind() == ErrorKind::InvalidData => {
                            self.stats.malformed += 1;
                            continue;
                        }
                        Err(e) => return Err(Error::Io { path, source: e }),
                    }
                }
            }
        }
    }
}

fn parse_jsonl_line(line: &str, stem: &str, line_no: u64) -> Option<Document> {
    // fast path: exactly {id?, text}
    if let Ok(plain) = serde_json::from_str::<PlainLine>(line) {
        return Some(Document {
            id: plain.id.unwrap_or_else(|| format!("{stem}#{line_no}")),
            text: plain.text,
            meta: BTreeMap::new(),
        });
    }
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let text = obj.get("text")?.as_str()?.to_string();
    let id = match obj.get("id") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => format!("{stem}#{line_no}"),
    };
    let mut meta = BTreeMap::new();
    for (key, val) in obj {
        if key == "id" || key == "text" {
            continue;
        }
        let as_string = match val {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        meta.insert(key.clone(), as_string);
    }
    Some(Document { id, text, meta })
}

impl Iterator for DocumentStream {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_document().transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub cap: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(cap: usize, seed: u64) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Config("sample cap must be at least 1".into()));
        }
        Ok(SampleSpec { cap, seed })
    }
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { cap: 100_000, seed: 42 }
    }
}

/// Admission key: SHA-256 over (seed, occupation, doc id). The full 32 bytes
/// give a collision-free total order, so no separate tie-break is needed.
pub fn sample_key(seed: u64, occupation: &str, doc_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(occupation.as_bytes());
    h.update([0x1f]);
    h.update(doc_id.as_bytes());
    h.finalize().into()
}

struct KMinEntry<T> {
    key: [u8; 32],
    value: T,
}

impl<T> PartialEq for KMinEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<T> Eq for KMinEntry<T> {}
impl<T> PartialOrd for KMinEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for KMinEntry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Bounded "keep the k smallest keys" sampler backed by a max-heap. Order of
/// `offer` calls never affects the final set; `merge` is commutative and
/// associative.
pub struct KMinSampler<T> {
    cap: usize,
    heap: BinaryHeap<KMinEntry<T>>,
}

impl<T> KMinSampler<T> {
    pub fn new(cap: usize) -> Self {
        KMinSampler { cap, heap: BinaryHeap::new() }
    }

    pub fn offer(&mut self, key: [u8; 32], value: T) {
        if self.heap.len() < self.cap {
            self.heap.push(KMinEntry { key, value });
        } else if self.heap.peek().is_some_and(|top| key < top.key) {
            self.heap.pop();
            self.heap.push(KMinEntry { key, value });
        }
    }

    pub fn merge(&mut self, other: KMinSampler<T>) {
        for entry in other.heap {
            self.offer(entry.key, entry.value);
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Retained entries, ascending by key (deterministic).
    pub fn into_sorted(self) -> Vec<([u8; 32], T)> {
        let mut entries: Vec<_> = self.heap.into_iter().map(|e| (e.key, e.value)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
    }
}

pub struct OccupationSamples {
    /// occupation → retained documents, in admission-key order
    pub samples: BTreeMap<String, Vec<Document>>,
    pub stats: StreamStats,
}

/// Retain a deterministic uniform sample of min(cap, hits) documents per
/// occupation. A document containing several occupations is sampled
/// independently for each.
pub fn sample_per_occupation(
    stream: &mut DocumentStream,
    matcher: &TermMatcher,
    spec: &SampleSpec,
) -> Result<OccupationSamples> {
    let terms = matcher.terms();
    let mut samplers: Vec<KMinSampler<Arc<Document>>> =
        (0..terms.len()).map(|_| KMinSampler::new(spec.cap)).collect();
    while let Some(doc) = stream.next_document()? {
        let doc = Arc::new(doc);
        for term_id in distinct_term_ids(matcher, &doc.text) {
            let key = sample_key(spec.seed, &terms[term_id as usize], &doc.id);
            samplers[term_id as usize].offer(key, Arc::clone(&doc));
        }
    }
    let mut samples = BTreeMap::new();
    for (term_id, sampler) in samplers.into_iter().enumerate() {
        let docs: Vec<Document> = sampler
            .into_sorted()
            .into_iter()
            .map(|(_, doc)| Arc::try_unwrap(doc).unwrap_or_else(|arc| (*arc).clone()))
            .collect();
        samples.insert(terms[term_id].clone(), docs);
    }
    Ok(OccupationSamples { samples, stats: stream.stats() })
}

/// Term ids present in `text`, deduplicated, ascending.
pub fn distinct_term_ids(matcher: &TermMatcher, text: &str) -> Vec<u32> {
    let mut ids: Vec<u32> = matcher.find(text).into_iter().map(|h| h.term_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}
