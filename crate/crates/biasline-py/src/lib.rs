//! Python bindings for the biasline toolkit: lexicon loading, term matching,
//! sentence/document scanning, and the bias metrics. The module mirrors the
//! Rust API closely; metric results come back as plain dicts so they drop
//! straight into pandas or json.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use biasline::classify::{
    classify_unit, scan_corpus, CountsMeta, CountsTable, DocCounter, GenderLabel, GenderLexicon,
    UnitCounts, UnitMode,
};
use biasline::corpus::{open_corpus, CorpusFormat, SampleSpec};
use biasline::genharness::{PromptStyle, PromptTemplate, PromptType};
use biasline::lexicon::{load_lexicon_dir, LexiconBundle};
use biasline::metrics;
use biasline::textscan::TermMatcher;

fn py_err(e: biasline::Error) -> PyErr {
    match &e {
        biasline::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<UnitMode> {
    match mode {
        "sentence" => Ok(UnitMode::Sentence),
        "document" => Ok(UnitMode::Document),
        other => Err(PyValueError::new_err(format!(
            "unknown unit mode {other:?}; expected \"sentence\" or \"document\""
        ))),
    }
}

fn mode_name(mode: UnitMode) -> &'static str {
    match mode {
        UnitMode::Sentence => "sentence",
        UnitMode::Document => "document",
    }
}

fn parse_weighting(weighting: &str) -> PyResult<metrics::Weighting> {
    match weighting {
        "unit" => Ok(metrics::Weighting::Unit),
        "token" => Ok(metrics::Weighting::Token),
        other => Err(PyValueError::new_err(format!(
            "unknown weighting {other:?}; expected \"unit\" or \"token\""
        ))),
    }
}

fn label_name(label: GenderLabel) -> &'static str {
    match label {
        GenderLabel::Female => "female",
        GenderLabel::Male => "male",
        GenderLabel::Mixed => "mixed",
        GenderLabel::None => "none",
    }
}

fn counts_dict(counts: &UnitCounts) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("units_scanned", counts.units_scanned),
        ("female_units", counts.female_units),
        ("male_units", counts.male_units),
        ("female_tokens", counts.female_tokens),
        ("male_tokens", counts.male_tokens),
    ])
}

fn distribution(pair: (f64, f64)) -> PyResult<metrics::GenderDistribution> {
    metrics::GenderDistribution::new(pair.0, pair.1).map_err(py_err)
}

/// Gendered token sets, occupation list, sector map, and optional reference
/// shares; the digest ties derived artifacts back to the exact lexicon.
#[pyclass(frozen)]
struct Lexicon {
    bundle: LexiconBundle,
}

#[pymethods]
impl Lexicon {
    #[new]
    #[pyo3(signature = (female_tokens, male_tokens, occupations, sectors=None, reference=None))]
    fn new(
        female_tokens: Vec<String>,
        male_tokens: Vec<String>,
        occupations: Vec<String>,
        sectors: Option<BTreeMap<String, String>>,
        reference: Option<BTreeMap<String, f64>>,
    ) -> PyResult<Self> {
        LexiconBundle::new(
            female_tokens,
            male_tokens,
            occupations,
            sectors.unwrap_or_default(),
            reference.unwrap_or_default(),
        )
        .map(|bundle| Lexicon { bundle })
        .map_err(py_err)
    }

    /// Load a lexicon directory (female.txt, male.txt, occupations.txt,
    /// sectors.csv, optional reference.csv).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_lexicon_dir(Path::new(path)).map(|bundle| Lexicon { bundle }).map_err(py_err)
    }

    #[getter]
    fn female_tokens(&self) -> Vec<String> {
        self.bundle.female_tokens().to_vec()
    }

    #[getter]
    fn male_tokens(&self) -> Vec<String> {
        self.bundle.male_tokens().to_vec()
    }

    #[getter]
    fn occupations(&self) -> Vec<String> {
        self.bundle.occupations().to_vec()
    }

    #[getter]
    fn sectors(&self) -> BTreeMap<String, String> {
        self.bundle.sectors().clone()
    }

    #[getter]
    fn reference(&self) -> BTreeMap<String, f64> {
        self.bundle.reference().clone()
    }

    fn digest(&self) -> String {
        self.bundle.digest()
    }

    fn __repr__(&self) -> String {
        format!(
            "Lexicon({} occupations, {} female + {} male tokens)",
            self.bundle.occupations().len(),
            self.bundle.female_tokens().len(),
            self.bundle.male_tokens().len(),
        )
    }
}

/// Case-insensitive whole-word multi-term matcher with leftmost-longest
/// selection, optionally folding trailing-s plurals into their base term.
#[pyclass(frozen)]
struct Matcher {
    inner: TermMatcher,
}

#[pymethods]
impl Matcher {
    #[new]
    #[pyo3(signature = (terms, plural_variants=false))]
    fn new(terms: Vec<String>, plural_variants: bool) -> PyResult<Self> {
        let inner = if plural_variants {
            TermMatcher::with_plural_variants(&terms)
        } else {
            TermMatcher::new(&terms)
        }
        .map_err(py_err)?;
        Ok(Matcher { inner })
    }

    #[getter]
    fn terms(&self) -> Vec<String> {
        self.inner.terms().to_vec()
    }

    /// All non-overlapping hits as (term, byte_start, byte_end) tuples.
    fn find(&self, text: &str) -> Vec<(String, usize, usize)> {
        self.inner
            .find(text)
            .into_iter()
            .map(|h| (self.inner.terms()[h.term_id as usize].clone(), h.start, h.end))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Matcher({} terms)", self.inner.terms().len())
    }
}

/// Output of a corpus scan: per-occupation unit counts plus stream totals.
#[pyclass(frozen)]
struct ScanResult {
    table: CountsTable,
}

#[pymethods]
impl ScanResult {
    #[getter]
    fn documents(&self) -> Option<u64> {
        self.table.meta.documents
    }

    #[getter]
    fn malformed(&self) -> Option<u64> {
        self.table.meta.malformed
    }

    #[getter]
    fn mode(&self) -> &'static str {
        mode_name(self.table.meta.mode)
    }

    #[getter]
    fn lexicon_digest(&self) -> String {
        self.table.meta.lexicon_digest.clone()
    }

    /// occupation -> {units_scanned, female_units, male_units,
    /// female_tokens, male_tokens}
    fn counts(&self) -> BTreeMap<String, BTreeMap<&'static str, u64>> {
        self.table.occupations.iter().map(|(name, c)| (name.clone(), counts_dict(c))).collect()
    }

    fn totals(&self) -> BTreeMap<&'static str, u64> {
        counts_dict(&self.table.totals())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.table.save(Path::new(path)).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CountsTable::load(Path::new(path)).map(|table| ScanResult { table }).map_err(py_err)
    }

    /// Stereotype skew of this table: per-occupation total variation distance
    /// from the reference (uniform unless an occupation -> female-share dict
    /// is given), averaged overall and per sector.
    #[pyo3(signature = (lexicon, reference=None, weighting="unit"))]
    fn stereotype_skew<'py>(
        &self,
        py: Python<'py>,
        lexicon: &Lexicon,
        reference: Option<BTreeMap<String, f64>>,
        weighting: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        if self.table.meta.lexicon_digest != lexicon.bundle.digest() {
            return Err(PyValueError::new_err(format!(
                "lexicon digest mismatch: counts built with {}, given lexicon is {}",
                self.table.meta.lexicon_digest,
                lexicon.bundle.digest()
            )));
        }
        let reference = match reference {
            None => metrics::Reference::Uniform,
            Some(map) => metrics::Reference::PerOccupation(map),
        };
        let result = metrics::sta(&self.table, &reference, &lexicon.bundle, parse_weighting(weighting)?)
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("overall", result.overall)?;
        out.set_item("per_occupation", result.per_occupation)?;
        out.set_item("per_sector", result.per_sector)?;
        out.set_item(
            "excluded",
            result.excluded.into_iter().map(|e| (e.occupation, e.reason)).collect::<Vec<_>>(),
        )?;
        out.set_item("weighting", weighting)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("ScanResult({} occupations, mode={})", self.table.occupations.len(), self.mode())
    }
}

/// Scanner bound to one lexicon and unit mode: classify ad-hoc text or stream
/// a whole corpus file with per-occupation reservoir sampling.
#[pyclass(frozen)]
struct Scanner {
    bundle: LexiconBundle,
    occupations: TermMatcher,
    gender: GenderLexicon,
    mode: UnitMode,
}

#[pymethods]
impl Scanner {
    #[new]
    #[pyo3(signature = (lexicon, mode="sentence", plural_variants=false))]
    fn new(lexicon: &Lexicon, mode: &str, plural_variants: bool) -> PyResult<Self> {
        let bundle = lexicon.bundle.clone();
        let occupations = if plural_variants {
            TermMatcher::with_plural_variants(bundle.occupations())
        } else {
            TermMatcher::new(bundle.occupations())
        }
        .map_err(py_err)?;
        let gender = GenderLexicon::from_bundle(&bundle).map_err(py_err)?;
        Ok(Scanner { bundle, occupations, gender, mode: parse_mode(mode)? })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        mode_name(self.mode)
    }

    /// Count one text: occupation -> unit counts for every occupation
    /// mentioned in it, under the exclusive-gender rule.
    fn scan_text(&self, text: &str) -> BTreeMap<String, BTreeMap<&'static str, u64>> {
        let counter = DocCounter::new(&self.occupations, &self.gender, self.mode);
        counter
            .count_all(text)
            .into_iter()
            .map(|(term_id, counts)| {
                (self.occupations.terms()[term_id as usize].clone(), counts_dict(&counts))
            })
            .collect()
    }

    /// Exclusive gender label of one unit of text:
    /// "female", "male", "mixed", or "none".
    fn classify(&self, text: &str) -> &'static str {
        label_name(classify_unit(text, &self.gender))
    }

    /// (female_hits, male_hits) over the gendered token sets.
    fn tally(&self, text: &str) -> (u32, u32) {
        self.gender.tally(text)
    }

    /// Stream a JSONL corpus file or a directory of .txt files, sampling at
    /// most `cap` documents per occupation (seeded, order-independent).
    #[pyo3(signature = (path, cap=100_000, seed=42))]
    fn scan_corpus(&self, path: &str, cap: usize, seed: u64) -> PyResult<ScanResult> {
        let mut stream = open_corpus(Path::new(path), CorpusFormat::Auto).map_err(py_err)?;
        let sample = SampleSpec::new(cap, seed).map_err(py_err)?;
        let meta = CountsMeta::new(self.mode, self.bundle.digest());
        let outcome =
            scan_corpus(&mut stream, &self.occupations, &self.gender, self.mode, &sample, meta, &self.bundle)
                .map_err(py_err)?;
        Ok(ScanResult { table: outcome.table })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scanner({} occupations, mode={})",
            self.bundle.occupations().len(),
            mode_name(self.mode)
        )
    }
}

/// Byte spans of the sentences in `text` as (start, end) tuples.
#[pyfunction]
fn segment_sentences(text: &str) -> Vec<(usize, usize)> {
    biasline::textscan::segment_sentences(text).into_iter().map(|s| (s.start, s.end)).collect()
}

/// Total variation distance between two (p_male, p_female) distributions.
#[pyfunction]
fn tvd(p: (f64, f64), q: (f64, f64)) -> PyResult<f64> {
    Ok(metrics::tvd(&distribution(p)?, &distribution(q)?))
}

/// Pearson correlation coefficient of two equal-length series.
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&xs, &ys).map_err(py_err)
}

/// Per-occupation difference between generated and training female shares,
/// with the mean over shared occupations (also in percentage points).
#[pyfunction]
fn amplification<'py>(
    py: Python<'py>,
    generated: BTreeMap<String, f64>,
    training: BTreeMap<String, f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let result = metrics::amplification(&generated, &training).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("per_occupation", result.per_occupation)?;
    out.set_item("mean", result.mean)?;
    out.set_item("mean_pp", result.mean_pp)?;
    out.set_item(
        "excluded",
        result.excluded.into_iter().map(|e| (e.occupation, e.reason)).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Two-factor dummy-coded least squares of female proportion on decoding
/// setup and prompt type. Observations are (setup, prompt_type,
/// proportion_female) tuples; returns coefficients, R^2, and partial F-test
/// p-values per factor plus "overall".
#[pyfunction]
fn regress_gender_proportion<'py>(
    py: Python<'py>,
    observations: Vec<(String, String, f64)>,
) -> PyResult<Bound<'py, PyDict>> {
    let observations: Vec<metrics::Observation> = observations
        .into_iter()
        .map(|(setup, prompt_type, proportion_female)| metrics::Observation {
            setup,
            prompt_type,
            proportion_female,
        })
        .collect();
    let result = metrics::regress_gender_proportion(&observations).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("coefficients", result.coefficients)?;
    out.set_item("r_squared", result.r_squared)?;
    out.set_item("p_values", result.p_values)?;
    out.set_item("n_observations", result.n_observations)?;
    Ok(out)
}

/// Substitute an occupation into a prompt template, resolving the optional
/// `a/n` article by the occupation's leading sound.
#[pyfunction]
fn render_prompt(template: &str, occupation: &str) -> PyResult<String> {
    let template = PromptTemplate {
        id: "adhoc".into(),
        prompt_type: PromptType::Neutral,
        style: PromptStyle::Statement,
        template: template.into(),
    };
    biasline::genharness::render_prompt(&template, occupation).map_err(py_err)
}

#[pymodule]
fn biasline_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Lexicon>()?;
    m.add_class::<Matcher>()?;
    m.add_class::<Scanner>()?;
    m.add_class::<ScanResult>()?;
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(tvd, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(amplification, m)?)?;
    m.add_function(wrap_pyfunction!(regress_gender_proportion, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
