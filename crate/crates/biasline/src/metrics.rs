//! The quantitative layer: binary gender distributions, total variation
//! distance (TVD), stereotype association scores, amplification deltas,
//! Pearson correlation, and categorical regression (in [`regression`]).

pub mod beta;
pub mod regression;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::{CountsTable, UnitCounts};
use crate::error::{Error, Result};
use crate::lexicon::LexiconBundle;

pub use regression::{regress_gender_proportion, Observation, RegressionResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderDistribution {
    pub p_male: f64,
    pub p_female: f64,
}

impl GenderDistribution {
    pub fn new(p_male: f64, p_female: f64) -> Result<Self> {
        for (name, v) in [("p_male", p_male), ("p_female", p_female)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Metric(format!("{name} = {v} is outside [0,1]")));
            }
        }
        if (p_male + p_female - 1.0).abs() > 1e-12 {
            return Err(Error::Metric(format!(
                "distribution ({p_male}, {p_female}) does not sum to 1"
            )));
        }
        Ok(GenderDistribution { p_male, p_female })
    }

    pub fn uniform() -> Self {
        GenderDistribution { p_male: 0.5, p_female: 0.5 }
    }

    pub fn from_female_share(p_female: f64) -> Result<Self> {
        Self::new(1.0 - p_female, p_female)
    }
}

/// Total variation distance between two binary distributions:
/// 0.5·(|Δp_male| + |Δp_female|), which equals |Δp_female| when both sum to 1.
pub fn tvd(p: &GenderDistribution, q: &GenderDistribution) -> f64 {
    0.5 * ((p.p_male - q.p_male).abs() + (p.p_female - q.p_female).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Proportions from gendered-token totals.
    Token,
    /// Proportions from exclusively-gendered unit totals.
    Unit,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Token => "token",
            Weighting::Unit => "unit",
        })
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Weighting::Token),
            "unit" => Ok(Weighting::Unit),
            other => Err(Error::Config(format!(
                "unknown weighting {other:?} (expected \"token\" or \"unit\")"
            ))),
        }
    }
}

/// Reference distribution the observed skew is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Uniform,
    /// occupation → real-world fraction female (e.g. labor statistics)
    PerOccupation(BTreeMap<String, f64>),
}

impl Reference {
    fn for_occupation(&self, occupation: &str) -> Result<Option<GenderDistribution>> {
        match self {
            Reference::Uniform => Ok(Some(GenderDistribution::uniform())),
            Reference::PerOccupation(map) => match map.get(occupation) {
                Some(&share) => GenderDistribution::from_female_share(share).map(Some),
                None => Ok(None),
            },
        }
    }
}

/// Normalize one occupation's counts into a gender distribution under the
/// chosen weighting. `None` when there is nothing to normalize — the caller
/// must exclude and report the occupation rather than divide by zero.
pub fn observed_distribution(counts: &UnitCounts, weighting: Weighting) -> Option<GenderDistribution> {
    let (female, male) = match weighting {
        Weighting::Token => (counts.female_tokens, counts.male_tokens),
        Weighting::Unit => (counts.female_units, counts.male_units),
    };
    let total = female + male;
    if total == 0 {
        return None;
    }
    // p_male is defined as the complement so the pair sums to 1 exactly and
    // a reference built from the same female share compares at distance 0
    let p_female = female as f64 / total as f64;
    Some(GenderDistribution { p_male: 1.0 - p_female, p_female })
}

/// Why an occupation was left out of an aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub occupation: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaResult {
    pub weighting: Weighting,
    /// occupation → TVD(observed, reference), included occupations only
    pub per_occupation: BTreeMap<String, f64>,
    /// sector → mean of member-occupation TVDs
    pub per_sector: BTreeMap<String, f64>,
    /// mean TVD over all included occupations
    pub overall: f64,
    pub excluded: Vec<Exclusion>,
}

/// Stereotype skew of a counts table against a reference: per-occupation TVD,
/// per-sector means, and the overall mean.
pub fn sta(
    table: &CountsTable,
    reference: &Reference,
    bundle: &LexiconBundle,
    weighting: Weighting,
) -> Result<StaResult> {
    let mut per_occupation = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut sector_acc: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    // iterate in bundle order so float accumulation order is canonical
    for occupation in bundle.occupations() {
        let Some(counts) = table.occupations.get(occupation) else {
            excluded.push(Exclusion {
                occupation: occupation.clone(),
                reason: "not present in counts table".into(),
            });
            continue;
        };
        let Some(observed) = observed_distribution(counts, weighting) else {
            excluded.push(Exclusion {
                occupation: occupation.clone(),
                reason: format!("no {weighting}-weighted gendered counts"),
            });
            continue;
        };
        let Some(reference_dist) = reference.for_occupation(occupation)? else {
            excluded.push(Exclusion {
                occupation: occupation.clone(),
                reason: "missing from reference".into(),
            });
            continue;
        };
        let distance = tvd(&observed, &reference_dist);
        sum += distance;
        if let Some(sector) = bundle.sector_of(occupation) {
            let acc = sector_acc.entry(sector).or_insert((0.0, 0));
            acc.0 += distance;
            acc.1 += 1;
        }
        per_occupation.insert(occupation.clone(), distance);
    }
    if per_occupation.is_empty() {
        return Err(Error::Metric("no occupations with counts".into()));
    }
    let overall = sum / per_occupation.len() as f64;
    let per_sector = sector_acc
        .into_iter()
        .map(|(sector, (total, n))| (sector.to_string(), total / n as f64))
        .collect();
    Ok(StaResult { weighting, per_occupation, per_sector, overall, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationResult {
    /// occupation → generated share − training share (fraction of 1)
    pub per_occupation: BTreeMap<String, f64>,
    /// mean difference over shared occupations
    pub mean: f64,
    /// the same mean in percentage points
    pub mean_pp: f64,
    /// occupations present on only one side
    pub excluded: Vec<Exclusion>,
}

/// Per-occupation difference between generated and training female shares.
/// Positive values mean the generated text amplifies the training skew
/// toward women; negative values de-amplify.
pub fn amplification(
    generated: &BTreeMap<String, f64>,
    training: &BTreeMap<String, f64>,
) -> Result<AmplificationResult> {
    for (name, series) in [("generated", generated), ("training", training)] {
        for (occupation, &share) in series {
            if !share.is_finite() || !(0.0..=1.0).contains(&share) {
                return Err(Error::Metric(format!(
                    "{name} share for {occupation:?} is {share}, outside [0,1]"
                )));
            }
        }
    }
    let mut per_occupation = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    for (occupation, &generated_share) in generated {
        match training.get(occupation) {
            Some(&training_share) => {
                let diff = generated_share - training_share;
                sum += diff;
                per_occupation.insert(occupation.clone(), diff);
            }
            None => excluded.push(Exclusion {
                occupation: occupation.clone(),
                reason: "missing from training series".into(),
            }),
        }
    }
    for occupation in training.keys() {
        if !generated.contains_key(occupation) {
            excluded.push(Exclusion {
                occupation: occupation.clone(),
                reason: "missing from generated series".into(),
            });
        }
    }
    excluded.sort_by(|a, b| a.occupation.cmp(&b.occupation));
    if per_occupation.is_empty() {
        return Err(Error::Metric("no occupations shared between the two series".into()));
    }
    let mean = sum / per_occupation.len() as f64;
    Ok(AmplificationResult { per_occupation, mean, mean_pp: 100.0 * mean, excluded })
}

/// Pearson product-moment correlation, two-pass form.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Metric(format!(
            "correlation needs equal-length series, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Metric("correlation needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::Metric("undefined correlation: a series has zero variance".into()));
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}
