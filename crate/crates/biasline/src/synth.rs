//! Synthetic corpora with known per-occupation gender proportions. Every
//! generated document is a single sentence containing its occupation term and
//! exactly one gendered token, drawn female with the planted probability, so
//! the pipeline's measured proportions can be checked against recorded ground
//! truth exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexicon::LexiconBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantEntry {
    pub occupation: String,
    pub p_female: f64,
    pub docs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub seed: u64,
    #[serde(default = "default_filler")]
    pub filler: Vec<String>,
    pub plants: Vec<PlantEntry>,
}

pub fn default_filler() -> Vec<String> {
    ["review", "finish", "prepare", "inspect", "organize", "ledger", "schedule", "archive",
        "garden", "manual"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Read a plant spec from TOML or JSON, chosen by file extension.
pub fn load_plant_spec(path: &Path) -> Result<PlantSpec> {
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("invalid plant spec: {e}"),
        }),
        Some("json") => serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: format!("invalid plant spec: {e}"),
        }),
        _ => Err(Error::Config(format!(
            "plant spec {} must have a .toml or .json extension",
            path.display()
        ))),
    }
}

impl PlantSpec {
    pub fn validate(&self, bundle: &LexiconBundle) -> Result<()> {
        if self.plants.is_empty() {
            return Err(Error::Config("plant spec contains no plants".into()));
        }
        if self.filler.len() < 2 {
            return Err(Error::Config("filler vocabulary needs at least 2 words".into()));
        }
        for word in &self.filler {
            let normalized = word.trim().to_lowercase();
            if normalized.is_empty() {
                return Err(Error::Config("filler vocabulary contains an empty word".into()));
            }
            if bundle.is_lexicon_term(&normalized) {
                return Err(Error::Config(format!(
                    "filler word {word:?} collides with a lexicon term"
                )));
            }
        }
        let known: BTreeSet<&str> = bundle.occupations().iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for plant in &self.plants {
            if !known.contains(plant.occupation.as_str()) {
                return Err(Error::Config(format!(
                    "planted occupation {:?} is not in the lexicon",
                    plant.occupation
                )));
            }
            if !seen.insert(plant.occupation.as_str()) {
                return Err(Error::Config(format!(
                    "occupation {:?} is planted twice",
                    plant.occupation
                )));
            }
            if !plant.p_female.is_finite() || !(0.0..=1.0).contains(&plant.p_female) {
                return Err(Error::Config(format!(
                    "p_female for {:?} is {}, outside [0,1]",
                    plant.occupation, plant.p_female
                )));
            }
            if plant.docs == 0 {
                return Err(Error::Config(format!(
                    "docs for {:?} must be at least 1",
                    plant.occupation
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantOutcome {
    pub occupation: String,
    pub p_planted: f64,
    /// share of documents that actually drew the female token
    pub p_realized: f64,
    pub docs: u64,
}

/// RNG keyed by (run seed, occupation): plants are independent of their order
/// in the spec and of each other.
fn plant_rng(seed: u64, occupation: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(occupation.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Preferred pronoun-like tokens when present, else the first listed token.
fn gender_words(bundle: &LexiconBundle) -> (String, String, String, String) {
    let pick = |tokens: &[String], preferred: &str| {
        tokens
            .iter()
            .find(|t| t.as_str() == preferred)
            .unwrap_or(&tokens[0])
            .clone()
    };
    let female = pick(bundle.female_tokens(), "she");
    let male = pick(bundle.male_tokens(), "he");
    let female_obj = pick(bundle.female_tokens(), "her");
    let male_obj = pick(bundle.male_tokens(), "him");
    (female, male, female_obj, male_obj)
}

/// Write the corpus JSONL and the realized ground-truth CSV. With `poison`,
/// every sentence also carries one opposite-gender token, so downstream
/// exclusive-gender counting must discard every unit.
pub fn make_synthetic_corpus(
    spec: &PlantSpec,
    bundle: &LexiconBundle,
    poison: bool,
    corpus_out: &Path,
    truth_out: &Path,
) -> Result<Vec<PlantOutcome>> {
    spec.validate(bundle)?;
    let (female, male, female_obj, male_obj) = gender_words(bundle);
    let mut corpus = std::io::BufWriter::new(
        std::fs::File::create(corpus_out).map_err(Error::io(corpus_out))?,
    );
    let mut outcomes = Vec::with_capacity(spec.plants.len());
    let mut line = String::new();
    for plant in &spec.plants {
        let mut rng = plant_rng(spec.seed, &plant.occupation);
        let slug = plant.occupation.replace(' ', "-");
        let mut female_docs = 0u64;
        for i in 0..plant.docs {
            let is_female = rng.random_bool(plant.p_female);
            let verb = &spec.filler[rng.random_range(0..spec.filler.len())];
            let noun = &spec.filler[rng.random_range(0..spec.filler.len())];
            if is_female {
                female_docs += 1;
            }
            let pronoun = if is_female { &female } else { &male };
            line.clear();
            write!(
                line,
                "The {} said {} would {} the {}",
                plant.occupation, pronoun, verb, noun
            )
            .expect("writing to String cannot fail");
            if poison {
                let opposite = if is_female { &male_obj } else { &female_obj };
                write!(line, " with {opposite}").expect("writing to String cannot fail");
            }
            line.push('.');
            let record = serde_json::json!({ "id": format!("{slug}-{i:06}"), "text": line });
            serde_json::to_writer(&mut corpus, &record)
                .map_err(|e| Error::Config(format!("encoding synthetic document: {e}")))?;
            corpus.write_all(b"\n").map_err(Error::io(corpus_out))?;
        }
        outcomes.push(PlantOutcome {
            occupation: plant.occupation.clone(),
            p_planted: plant.p_female,
            p_realized: female_docs as f64 / plant.docs as f64,
            docs: plant.docs,
        });
    }
    corpus.flush().map_err(Error::io(corpus_out))?;

    let mut truth = String::from("occupation,p_planted,p_realized,docs\n");
    for outcome in &outcomes {
        let name = if outcome.occupation.contains(',') {
            format!("\"{}\"", outcome.occupation)
        } else {
            outcome.occupation.clone()
        };
        writeln!(
            truth,
            "{},{},{},{}",
            name, outcome.p_planted, outcome.p_realized, outcome.docs
        )
        .expect("writing to String cannot fail");
    }
    std::fs::write(truth_out, truth).map_err(Error::io(truth_out))?;
    Ok(outcomes)
}

/// Parse a ground-truth CSV back into outcomes.
pub fn load_ground_truth(path: &Path) -> Result<Vec<PlantOutcome>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("reading ground truth {}: {e}", path.display())))?;
    let mut outcomes = Vec::new();
    for (i, row) in reader.deserialize::<(String, f64, f64, u64)>().enumerate() {
        let (occupation, p_planted, p_realized, docs) = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            msg: format!("invalid ground-truth row: {e}"),
        })?;
        outcomes.push(PlantOutcome { occupation, p_planted, p_realized, docs });
    }
    Ok(outcomes)
}
