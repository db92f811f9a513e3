//! Gendered token sets, the occupation list, sector mapping, and optional
//! real-world reference shares. Everything downstream is parameterized by a
//! [`LexiconBundle`]; its digest ties derived artifacts back to the exact
//! lexicon they were produced with.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconBundle {
    female_tokens: Vec<String>,
    male_tokens: Vec<String>,
    /// Order preserved from the occupations file.
    occupations: Vec<String>,
    /// occupation → sector name; keys are always occupations.
    sectors: BTreeMap<String, String>,
    /// occupation → real-world fraction female, in [0,1].
    reference: BTreeMap<String, f64>,
}

impl LexiconBundle {
    pub fn new(
        female_tokens: Vec<String>,
        male_tokens: Vec<String>,
        occupations: Vec<String>,
        sectors: BTreeMap<String, String>,
        reference: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let bundle = LexiconBundle { female_tokens, male_tokens, occupations, sectors, reference };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        if self.female_tokens.is_empty() {
            return Err(Error::Lexicon("female token set is empty".into()));
        }
        if self.male_tokens.is_empty() {
            return Err(Error::Lexicon("male token set is empty".into()));
        }
        if self.occupations.is_empty() {
            return Err(Error::Lexicon("occupation list is empty".into()));
        }
        let female: BTreeSet<&str> = self.female_tokens.iter().map(String::as_str).collect();
        for token in &self.male_tokens {
            if female.contains(token.as_str()) {
                return Err(Error::Lexicon(format!(
                    "token {token:?} appears in both gender sets"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for occ in &self.occupations {
            if !seen.insert(occ.as_str()) {
                return Err(Error::Lexicon(format!("duplicate occupation {occ:?}")));
            }
        }
        for key in self.sectors.keys() {
            if !seen.contains(key.as_str()) {
                return Err(Error::Lexicon(format!(
                    "sector entry {key:?} is not in the occupation list"
                )));
            }
        }
        for (key, value) in &self.reference {
            if !(0.0..=1.0).contains(value) {
                return Err(Error::Lexicon(format!(
                    "reference value for {key:?} is {value}, outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn female_tokens(&self) -> &[String] {
        &self.female_tokens
    }

    pub fn male_tokens(&self) -> &[String] {
        &self.male_tokens
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn sector_of(&self, occupation: &str) -> Option<&str> {
        self.sectors.get(occupation).map(String::as_str)
    }

    pub fn sectors(&self) -> &BTreeMap<String, String> {
        &self.sectors
    }

    pub fn sector_names(&self) -> BTreeSet<&str> {
        self.sectors.values().map(String::as_str).collect()
    }

    pub fn reference(&self) -> &BTreeMap<String, f64> {
        &self.reference
    }

    /// Occupations without a sector assignment, in bundle order. Reported by
    /// callers, never rejected.
    pub fn unmapped_occupations(&self) -> Vec<&str> {
        self.occupations
            .iter()
            .filter(|o| !self.sectors.contains_key(o.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// True if `word` is one of the gendered tokens or occupation terms.
    pub fn is_lexicon_term(&self, word: &str) -> bool {
        self.female_tokens.iter().any(|t| t == word)
            || self.male_tokens.iter().any(|t| t == word)
            || self.occupations.iter().any(|t| t == word)
    }

    /// SHA-256 over a canonical serialization of every field; hex-encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut section = |tag: &str, lines: &mut dyn Iterator<Item = String>| {
            h.update(tag.as_bytes());
            h.update([0u8]);
            for line in lines {
                h.update(line.as_bytes());
                h.update([b'\n']);
            }
        };
        section("female", &mut self.female_tokens.iter().cloned());
        section("male", &mut self.male_tokens.iter().cloned());
        section("occupations", &mut self.occupations.iter().cloned());
        section("sectors", &mut self.sectors.iter().map(|(k, v)| format!("{k}\t{v}")));
        section("reference", &mut self.reference.iter().map(|(k, v)| format!("{k}\t{v}")));
        let mut hex = String::with_capacity(64);
        for byte in h.finalize() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Normalize a term: lowercase, collapse internal whitespace runs to single
/// spaces, trim ends.
pub(crate) fn normalize_term(raw: &str) -> String {
    raw.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One term per line; blank lines and `#` comments ignored; duplicates are an
/// error naming the term and line.
fn read_term_file(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut terms = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let term = normalize_term(line);
        if term.is_empty() {
            continue;
        }
        if !seen.insert(term.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx as u64 + 1,
                msg: format!("duplicate term {term:?}"),
            });
        }
        terms.push(term);
    }
    Ok(terms)
}

/// Two-column CSV with header `term,value`.
fn read_csv_pairs(path: &Path) -> Result<Vec<(String, String, u64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if headers.len() < 2 || &headers[0] != "term" || &headers[1] != "value" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header \"term,value\", found {headers:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected two columns".into(),
            });
        }
        rows.push((normalize_term(&record[0]), record[1].trim().to_string(), line));
    }
    Ok(rows)
}

/// Load and validate a bundle from its component files.
///
/// `gender_dir` must contain `female.txt` and `male.txt`. Sector and
/// reference files are two-column CSVs (`term,value`). Every term is
/// lowercased; occupation order is preserved from the file.
pub fn load_lexicon_bundle(
    gender_dir: &Path,
    occupations_file: &Path,
    sectors_file: &Path,
    reference_file: Option<&Path>,
) -> Result<LexiconBundle> {
    let female_tokens = read_term_file(&gender_dir.join("female.txt"))?;
    let male_tokens = read_term_file(&gender_dir.join("male.txt"))?;
    let occupations = read_term_file(occupations_file)?;

    let mut sectors = BTreeMap::new();
    for (term, value, line) in read_csv_pairs(sectors_file)? {
        if sectors.insert(term.clone(), value).is_some() {
            return Err(Error::Parse {
                path: sectors_file.to_path_buf(),
                line,
                msg: format!("duplicate sector entry for {term:?}"),
            });
        }
    }

    let mut reference = BTreeMap::new();
    if let Some(path) = reference_file {
        for (term, value, line) in read_csv_pairs(path)? {
            let parsed: f64 = value.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("reference value for {term:?} is not a number: {value:?}"),
            })?;
            if !(0.0..=1.0).contains(&parsed) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("reference value for {term:?} is {parsed}, outside [0,1]"),
                });
            }
            reference.insert(term, parsed);
        }
    }

    LexiconBundle::new(female_tokens, male_tokens, occupations, sectors, reference)
}

/// Directory convention used by the CLI: `female.txt`, `male.txt`,
/// `occupations.txt`, `sectors.csv`, and optionally `reference.csv`.
pub fn load_lexicon_dir(dir: &Path) -> Result<LexiconBundle> {
    let reference = dir.join("reference.csv");
    load_lexicon_bundle(
        dir,
        &dir.join("occupations.txt"),
        &dir.join("sectors.csv"),
        reference.exists().then_some(reference.as_path()),
    )
}
