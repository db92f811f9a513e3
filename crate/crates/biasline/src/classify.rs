//! Exclusive-gender classification of text units and per-occupation count
//! tables.
//!
//! A unit (sentence or whole document) containing an occupation term is
//! labeled by the gendered tokens it contains: `Female` iff at least one
//! female token and no male token appears, `Male` symmetrically. Units with
//! both (`Mixed`) or neither (`None`) are scanned but contribute nothing to
//! the gendered tallies. Both token-level and unit-level counts are kept so
//! downstream proportions can be weighted either way.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_key, Document, DocumentStream, KMinSampler, SampleSpec, StreamStats};
use crate::error::{Error, Result};
use crate::lexicon::LexiconBundle;
use crate::textscan::{segment_sentences, TermHit, TermMatcher};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenderLabel {
    Female,
    Male,
    Mixed,
    None,
}

pub fn label_for(female_hits: u32, male_hits: u32) -> GenderLabel {
    match (female_hits > 0, male_hits > 0) {
        (true, false) => GenderLabel::Female,
        (false, true) => GenderLabel::Male,
        (true, true) => GenderLabel::Mixed,
        (false, false) => GenderLabel::None,
    }
}

/// Matcher over the union of both gendered token sets; term ids below
/// `n_female` are female tokens.
pub struct GenderLexicon {
    matcher: TermMatcher,
    n_female: u32,
}

impl GenderLexicon {
    pub fn from_bundle(bundle: &LexiconBundle) -> Result<Self> {
        let mut terms: Vec<&str> = bundle.female_tokens().iter().map(String::as_str).collect();
        terms.extend(bundle.male_tokens().iter().map(String::as_str));
        Ok(GenderLexicon {
            matcher: TermMatcher::new(&terms)?,
            n_female: bundle.female_tokens().len() as u32,
        })
    }

    pub fn find(&self, text: &str) -> Vec<TermHit> {
        self.matcher.find(text)
    }

    pub fn is_female_id(&self, term_id: u32) -> bool {
        term_id < self.n_female
    }

    /// (female hits, male hits) over the whole text.
    pub fn tally(&self, text: &str) -> (u32, u32) {
        self.tally_hits(self.find(text).iter())
    }

    fn tally_hits<'a>(&self, hits: impl Iterator<Item = &'a TermHit>) -> (u32, u32) {
        let mut female = 0;
        let mut male = 0;
        for hit in hits {
            if self.is_female_id(hit.term_id) {
                female += 1;
            } else {
                male += 1;
            }
        }
        (female, male)
    }
}

/// Label a single text unit by the exclusive-gender rule.
pub fn classify_unit(text: &str, gender: &GenderLexicon) -> GenderLabel {
    let (female, male) = gender.tally(text);
    label_for(female, male)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    /// Unit = each sentence containing the occupation term.
    Sentence,
    /// Unit = the whole text.
    Document,
}

impl fmt::Display for UnitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitMode::Sentence => "sentence",
            UnitMode::Document => "document",
        })
    }
}

impl FromStr for UnitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(UnitMode::Sentence),
            "document" => Ok(UnitMode::Document),
            other => Err(Error::Config(format!(
                "unknown unit mode {other:?} (expected \"sentence\" or \"document\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    pub female_tokens: u64,
    pub male_tokens: u64,
    pub female_units: u64,
    pub male_units: u64,
    pub units_scanned: u64,
}

impl UnitCounts {
    /// Apply the exclusive-gender rule for one unit with the given gendered
    /// token hit counts.
    pub fn absorb_unit(&mut self, female_hits: u32, male_hits: u32) {
        self.units_scanned += 1;
        match label_for(female_hits, male_hits) {
            GenderLabel::Female => {
                self.female_tokens += u64::from(female_hits);
                self.female_units += 1;
            }
            GenderLabel::Male => {
                self.male_tokens += u64::from(male_hits);
                self.male_units += 1;
            }
            GenderLabel::Mixed | GenderLabel::None => {}
        }
    }

    pub fn merge(&mut self, other: &UnitCounts) {
        self.female_tokens += other.female_tokens;
        self.male_tokens += other.male_tokens;
        self.female_units += other.female_units;
        self.male_units += other.male_units;
        self.units_scanned += other.units_scanned;
    }

    pub fn counted_units(&self) -> u64 {
        self.female_units + self.male_units
    }

    pub fn discarded_units(&self) -> u64 {
        self.units_scanned - self.counted_units()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsMeta {
    pub mode: UnitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    pub lexicon_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<u64>,
}

impl CountsMeta {
    pub fn new(mode: UnitMode, lexicon_digest: impl Into<String>) -> Self {
        CountsMeta {
            mode,
            seed: None,
            cap: None,
            lexicon_digest: lexicon_digest.into(),
            source: None,
            command: None,
            documents: None,
            malformed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub meta: CountsMeta,
    pub occupations: BTreeMap<String, UnitCounts>,
}

impl CountsTable {
    /// Table with a zero row for every occupation in the bundle.
    pub fn zeroed(meta: CountsMeta, bundle: &LexiconBundle) -> Self {
        let occupations = bundle
            .occupations()
            .iter()
            .map(|o| (o.clone(), UnitCounts::default()))
            .collect();
        CountsTable { meta, occupations }
    }

    /// Field-wise sum; refuses to merge tables built with different lexicons
    /// or unit modes.
    pub fn merge(&mut self, other: &CountsTable) -> Result<()> {
        if self.meta.lexicon_digest != other.meta.lexicon_digest {
            return Err(Error::DigestMismatch {
                expected: self.meta.lexicon_digest.clone(),
                found: other.meta.lexicon_digest.clone(),
            });
        }
        if self.meta.mode != other.meta.mode {
            return Err(Error::Config(format!(
                "cannot merge {}-mode counts into {}-mode counts",
                other.meta.mode, self.meta.mode
            )));
        }
        for (name, counts) in &other.occupations {
            self.occupations.entry(name.clone()).or_default().merge(counts);
        }
        Ok(())
    }

    pub fn totals(&self) -> UnitCounts {
        let mut total = UnitCounts::default();
        for counts in self.occupations.values() {
            total.merge(counts);
        }
        total
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Report(format!("serializing counts table: {e}")))?;
        json.push('\n');
        std::fs::write(path, json).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: format!("invalid counts table: {e}"),
        })
    }
}

/// Shared scanning state: the occupation matcher, the gender matcher, and the
/// unit mode.
pub struct DocCounter<'a> {
    occupations: &'a TermMatcher,
    gender: &'a GenderLexicon,
    mode: UnitMode,
}

impl<'a> DocCounter<'a> {
    pub fn new(occupations: &'a TermMatcher, gender: &'a GenderLexicon, mode: UnitMode) -> Self {
        DocCounter { occupations, gender, mode }
    }

    /// Contribution of `text` to every occupation that occurs in it,
    /// ascending by term id. Occupations not present contribute nothing.
    pub fn count_all(&self, text: &str) -> Vec<(u32, UnitCounts)> {
        let occ_hits = self.occupations.find(text);
        if occ_hits.is_empty() {
            return Vec::new();
        }
        let gender_hits = self.gender.find(text);
        let mut acc: BTreeMap<u32, UnitCounts> = BTreeMap::new();
        match self.mode {
            UnitMode::Document => {
                let (female, male) = self.gender.tally_hits(gender_hits.iter());
                let mut ids: Vec<u32> = occ_hits.iter().map(|h| h.term_id).collect();
                ids.sort_unstable();
                ids.dedup();
                for id in ids {
                    acc.entry(id).or_default().absorb_unit(female, male);
                }
            }
            UnitMode::Sentence => {
                // Hits never straddle sentence boundaries (multi-word terms
                // contain no terminator and cross at most one whitespace
                // char), so bucketing whole-text hits into spans is exact.
                let spans = segment_sentences(text);
                let mut oi = 0;
                let mut gi = 0;
                for span in spans {
                    let mut ids: Vec<u32> = Vec::new();
                    while oi < occ_hits.len() && occ_hits[oi].start < span.end {
                        if occ_hits[oi].start >= span.start {
                            ids.push(occ_hits[oi].term_id);
                        }
                        oi += 1;
                    }
                    let mut female = 0;
                    let mut male = 0;
                    while gi < gender_hits.len() && gender_hits[gi].start < span.end {
                        if gender_hits[gi].start >= span.start {
                            if self.gender.is_female_id(gender_hits[gi].term_id) {
                                female += 1;
                            } else {
                                male += 1;
                            }
                        }
                        gi += 1;
                    }
                    ids.sort_unstable();
                    ids.dedup();
                    for id in ids {
                        acc.entry(id).or_default().absorb_unit(female, male);
                    }
                }
            }
        }
        acc.into_iter().collect()
    }

    /// Contribution of `text` attributed to one specific occupation term.
    pub fn count_for(&self, text: &str, term_id: u32) -> UnitCounts {
        self.count_all(text)
            .into_iter()
            .find(|(id, _)| *id == term_id)
            .map(|(_, counts)| counts)
            .unwrap_or_default()
    }
}

/// Count pre-sampled documents: each occupation's list is tallied against
/// that occupation only.
pub fn count_sampled_docs(
    samples: &BTreeMap<String, Vec<Document>>,
    occupations: &TermMatcher,
    gender: &GenderLexicon,
    mode: UnitMode,
    meta: CountsMeta,
    bundle: &LexiconBundle,
) -> Result<CountsTable> {
    let counter = DocCounter::new(occupations, gender, mode);
    let rows: Vec<(String, UnitCounts)> = samples
        .par_iter()
        .map(|(name, docs)| {
            let term_id = occupations.term_id(name).ok_or_else(|| {
                Error::Config(format!("sampled occupation {name:?} is not in the lexicon"))
            })?;
            let mut acc = UnitCounts::default();
            for doc in docs {
                acc.merge(&counter.count_for(&doc.text, term_id));
            }
            Ok((name.clone(), acc))
        })
        .collect::<Result<_>>()?;
    let mut table = CountsTable::zeroed(meta, bundle);
    for (name, counts) in rows {
        table.occupations.entry(name).or_default().merge(&counts);
    }
    Ok(table)
}

/// Outcome of a fused stream → sample → count pass.
pub struct ScanOutcome {
    pub table: CountsTable,
    pub stats: StreamStats,
    /// occupation → number of documents retained by the sampling cap
    pub sampled_docs: BTreeMap<String, u64>,
}

/// Single-pass scan: stream documents, admit per-occupation via k-min-hash,
/// and keep only the count contributions of admitted documents. Memory is
/// O(cap × occupations), not O(corpus). Produces exactly the same table as
/// `sample_per_occupation` followed by `count_sampled_docs`.
pub fn scan_corpus(
    stream: &mut DocumentStream,
    occupations: &TermMatcher,
    gender: &GenderLexicon,
    mode: UnitMode,
    sample: &SampleSpec,
    meta: CountsMeta,
    bundle: &LexiconBundle,
) -> Result<ScanOutcome> {
    const BATCH: usize = 1024;
    let counter = DocCounter::new(occupations, gender, mode);
    let terms = occupations.terms();
    let mut samplers: Vec<KMinSampler<UnitCounts>> =
        (0..terms.len()).map(|_| KMinSampler::new(sample.cap)).collect();

    let mut batch: Vec<Document> = Vec::with_capacity(BATCH);
    loop {
        batch.clear();
        while batch.len() < BATCH {
            match stream.next_document()? {
                Some(doc) => batch.push(doc),
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        // Per-document work (matching, hashing, counting) in parallel; the
        // cheap heap offers stay sequential, so admission is identical for
        // any thread count.
        let contributions: Vec<Vec<([u8; 32], u32, UnitCounts)>> = batch
            .par_iter()
            .map(|doc| {
                counter
                    .count_all(&doc.text)
                    .into_iter()
                    .map(|(term_id, counts)| {
                        let key = sample_key(sample.seed, &terms[term_id as usize], &doc.id);
                        (key, term_id, counts)
                    })
                    .collect()
            })
            .collect();
        for doc_contrib in contributions {
            for (key, term_id, counts) in doc_contrib {
                samplers[term_id as usize].offer(key, counts);
            }
        }
    }

    let mut table = CountsTable::zeroed(meta, bundle);
    let mut sampled_docs = BTreeMap::new();
    for (term_id, sampler) in samplers.into_iter().enumerate() {
        let name = &terms[term_id];
        let mut acc = UnitCounts::default();
        let mut kept = 0u64;
        for (_, counts) in sampler.into_sorted() {
            acc.merge(&counts);
            kept += 1;
        }
        if kept > 0 {
            sampled_docs.insert(name.clone(), kept);
        }
        // plural variants alias extra matcher terms to bundle occupations;
        // zeroed() already created the row for every bundle occupation
        table.occupations.entry(name.clone()).or_default().merge(&acc);
    }
    let mut table = table;
    table.meta.documents = Some(stream.stats().documents);
    table.meta.malformed = Some(stream.stats().malformed);
    Ok(ScanOutcome { table, stats: stream.stats(), sampled_docs })
}

/// One model response tagged with the run coordinates it was generated under.
#[derive(Debug, Clone, Copy)]
pub struct TaggedUnit<'a> {
    pub occupation: &'a str,
    pub prompt_id: &'a str,
    pub prompt_type: &'a str,
    pub setup: &'a str,
    pub text: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub prompt_id: String,
    pub prompt_type: String,
    pub setup: String,
    pub occupations: BTreeMap<String, UnitCounts>,
}

/// Per-(prompt, setup) count tables for generated text, plus their combined
/// total. Cells are kept sorted by (prompt_id, setup).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedCounts {
    pub meta: CountsMeta,
    pub cells: Vec<PartitionCell>,
}

impl PartitionedCounts {
    pub fn cell(&self, prompt_id: &str, setup: &str) -> Option<&PartitionCell> {
        self.cells.iter().find(|c| c.prompt_id == prompt_id && c.setup == setup)
    }

    /// Sum across all cells into a single table (row for every occupation
    /// that appears in any cell).
    pub fn combined(&self) -> CountsTable {
        let mut occupations: BTreeMap<String, UnitCounts> = BTreeMap::new();
        for cell in &self.cells {
            for (name, counts) in &cell.occupations {
                occupations.entry(name.clone()).or_default().merge(counts);
            }
        }
        CountsTable { meta: self.meta.clone(), occupations }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Report(format!("serializing partitioned counts: {e}")))?;
        json.push('\n');
        std::fs::write(path, json).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: format!("invalid partitioned counts: {e}"),
        })
    }
}

pub struct GenerationCounts {
    pub partitioned: PartitionedCounts,
    /// units whose occupation tag is not in the bundle (skipped, reported)
    pub skipped_unknown_occupation: u64,
}

/// Count generated responses. Each unit is classified in document mode over
/// its full text and attributed to its tagged occupation — the prompt named
/// the occupation, so no term match in the response is required.
pub fn count_generations<'a>(
    units: impl IntoIterator<Item = TaggedUnit<'a>>,
    gender: &GenderLexicon,
    bundle: &LexiconBundle,
    meta: CountsMeta,
) -> Result<GenerationCounts> {
    let known: std::collections::BTreeSet<&str> =
        bundle.occupations().iter().map(String::as_str).collect();
    let mut cells: BTreeMap<(String, String), PartitionCell> = BTreeMap::new();
    let mut skipped = 0u64;
    for unit in units {
        if !known.contains(unit.occupation) {
            skipped += 1;
            continue;
        }
        let key = (unit.prompt_id.to_string(), unit.setup.to_string());
        let cell = cells.entry(key).or_insert_with(|| PartitionCell {
            prompt_id: unit.prompt_id.to_string(),
            prompt_type: unit.prompt_type.to_string(),
            setup: unit.setup.to_string(),
            occupations: BTreeMap::new(),
        });
        if cell.prompt_type != unit.prompt_type {
            return Err(Error::Config(format!(
                "prompt {:?} appears with conflicting prompt types {:?} and {:?}",
                unit.prompt_id, cell.prompt_type, unit.prompt_type
            )));
        }
        let (female, male) = gender.tally(unit.text);
        cell.occupations
            .entry(unit.occupation.to_string())
            .or_default()
            .absorb_unit(female, male);
    }
    let partitioned = PartitionedCounts { meta, cells: cells.into_values().collect() };
    Ok(GenerationCounts { partitioned, skipped_unknown_occupation: skipped })
}
