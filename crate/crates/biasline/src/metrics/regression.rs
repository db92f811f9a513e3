//! Ordinary least squares over two categorical factors (decoding setup and
//! prompt type) with dummy coding, solved by Householder QR. Significance is
//! reported as partial F-tests per factor plus an overall F-test, with
//! p-values from the F survival function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::beta::f_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub setup: String,
    pub prompt_type: String,
    pub proportion_female: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// "intercept", "setup=<level>", "prompt_type=<level>" → estimate. The
    /// lexicographically first level of each factor is the dummy-coding
    /// reference and carries no coefficient.
    pub coefficients: BTreeMap<String, f64>,
    pub r_squared: f64,
    /// "setup", "prompt_type" → partial F-test p-value; "overall" → p-value
    /// of the all-coefficients-zero F-test. Single-level factors are omitted.
    pub p_values: BTreeMap<String, f64>,
    pub n_observations: usize,
}

/// Near-zero threshold for sums of squares, scaled by problem magnitude.
fn tiny(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

/// Solve min ‖Xβ − y‖² by Householder QR. `x` is row-major n×p. Returns
/// (β, SSR). Fails with the offending column's label when X is
/// rank-deficient.
fn qr_least_squares(
    x: &[f64],
    n: usize,
    p: usize,
    y: &[f64],
    labels: &[String],
) -> Result<(Vec<f64>, f64)> {
    debug_assert_eq!(x.len(), n * p);
    debug_assert_eq!(y.len(), n);
    let mut a = x.to_vec();
    let mut rhs = y.to_vec();
    let at = |a: &[f64], i: usize, j: usize| a[i * p + j];

    // column scale for the rank tolerance
    let mut max_norm = 0.0f64;
    for j in 0..p {
        let norm: f64 = (0..n).map(|i| at(&a, i, j).powi(2)).sum::<f64>().sqrt();
        max_norm = max_norm.max(norm);
    }
    let rank_tol = 1e-10 * max_norm.max(1.0) * (n as f64).sqrt();

    for k in 0..p {
        // norm of column k at and below the diagonal
        let sigma: f64 = (k..n).map(|i| at(&a, i, k).powi(2)).sum::<f64>().sqrt();
        if sigma < rank_tol {
            return Err(Error::Metric(format!(
                "regression design is rank-deficient at column {:?} (collinear factor levels)",
                labels[k]
            )));
        }
        let alpha = if at(&a, k, k) >= 0.0 { -sigma } else { sigma };
        // Householder vector v = x_k − alpha·e_k, stored in place
        a[k * p + k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| at(&a, i, k).powi(2)).sum();
        if vnorm2 > 0.0 {
            for j in (k + 1)..p {
                let dot: f64 = (k..n).map(|i| at(&a, i, k) * at(&a, i, j)).sum();
                let factor = 2.0 * dot / vnorm2;
                for i in k..n {
                    a[i * p + j] -= factor * at(&a, i, k);
                }
            }
            let dot: f64 = (k..n).map(|i| at(&a, i, k) * rhs[i]).sum();
            let factor = 2.0 * dot / vnorm2;
            for i in k..n {
                rhs[i] -= factor * at(&a, i, k);
            }
        }
        // store R's diagonal where the reflector pivot was
        a[k * p + k] = alpha;
    }

    // back-substitution on the p×p upper triangle
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut v = rhs[k];
        for j in (k + 1)..p {
            v -= at(&a, k, j) * beta[j];
        }
        beta[k] = v / at(&a, k, k);
    }
    let ssr: f64 = rhs[p..].iter().map(|r| r * r).sum();
    Ok((beta, ssr))
}

struct Design {
    /// column labels, intercept first
    labels: Vec<String>,
    /// per factor: (factor name, non-reference levels)
    factors: Vec<(String, Vec<String>)>,
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
}

fn build_design(observations: &[Observation]) -> Result<Design> {
    for (i, obs) in observations.iter().enumerate() {
        if !obs.proportion_female.is_finite() || !(0.0..=1.0).contains(&obs.proportion_female) {
            return Err(Error::Metric(format!(
                "observation {i} has proportion {} outside [0,1]",
                obs.proportion_female
            )));
        }
    }
    // canonical observation order makes the result independent of input order
    let mut obs: Vec<&Observation> = observations.iter().collect();
    obs.sort_by(|a, b| {
        (&a.setup, &a.prompt_type)
            .cmp(&(&b.setup, &b.prompt_type))
            .then(a.proportion_female.total_cmp(&b.proportion_female))
    });

    let mut setup_levels: Vec<String> = obs.iter().map(|o| o.setup.clone()).collect();
    setup_levels.sort();
    setup_levels.dedup();
    let mut prompt_levels: Vec<String> = obs.iter().map(|o| o.prompt_type.clone()).collect();
    prompt_levels.sort();
    prompt_levels.dedup();
    if setup_levels.len() < 2 && prompt_levels.len() < 2 {
        return Err(Error::Metric(
            "regression needs at least one factor with two or more levels".into(),
        ));
    }

    let mut labels = vec!["intercept".to_string()];
    let mut factors = Vec::new();
    for (name, levels) in [("setup", &setup_levels), ("prompt_type", &prompt_levels)] {
        let dummies: Vec<String> = levels.iter().skip(1).cloned().collect();
        for level in &dummies {
            labels.push(format!("{name}={level}"));
        }
        factors.push((name.to_string(), dummies));
    }

    let n = obs.len();
    let p = labels.len();
    if n <= p {
        return Err(Error::Metric(format!(
            "insufficient observations: {n} rows for {p} coefficients"
        )));
    }
    let mut x = vec![0.0; n * p];
    let mut y = vec![0.0; n];
    for (i, o) in obs.iter().enumerate() {
        x[i * p] = 1.0;
        let mut col = 1;
        for (factor, dummies) in &factors {
            let value = if factor == "setup" { &o.setup } else { &o.prompt_type };
            for level in dummies {
                if value == level {
                    x[i * p + col] = 1.0;
                }
                col += 1;
            }
        }
        y[i] = o.proportion_female;
    }
    Ok(Design { labels, factors, x, y, n, p })
}

/// Columns of the design with the given factor's dummies removed (row-major).
fn drop_factor(design: &Design, factor: &str) -> (Vec<f64>, Vec<String>, usize) {
    let keep: Vec<usize> = design
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| *l == "intercept" || !l.starts_with(&format!("{factor}=")))
        .map(|(j, _)| j)
        .collect();
    let p2 = keep.len();
    let mut x2 = vec![0.0; design.n * p2];
    for i in 0..design.n {
        for (jj, &j) in keep.iter().enumerate() {
            x2[i * p2 + jj] = design.x[i * design.p + j];
        }
    }
    let labels = keep.iter().map(|&j| design.labels[j].clone()).collect();
    (x2, labels, p2)
}

/// F-test of the full model against a restriction that removes `q` columns,
/// given both residual sums of squares.
fn partial_f_p_value(ssr_restricted: f64, ssr_full: f64, q: f64, df_resid: f64) -> Result<f64> {
    let scale = ssr_restricted.max(ssr_full);
    let numerator = (ssr_restricted - ssr_full).max(0.0) / q;
    let denominator = ssr_full / df_resid;
    if numerator <= tiny(scale) / q {
        // restriction costs nothing — no evidence against it
        return Ok(1.0);
    }
    if denominator <= tiny(scale) / df_resid {
        // perfect fit broken by the restriction
        return Ok(0.0);
    }
    f_sf(numerator / denominator, q, df_resid)
}

/// Fit proportion_female ~ setup + prompt_type by OLS with dummy coding.
pub fn regress_gender_proportion(observations: &[Observation]) -> Result<RegressionResult> {
    let design = build_design(observations)?;
    let (beta, ssr_full) = qr_least_squares(
        &design.x,
        design.n,
        design.p,
        &design.y,
        &design.labels,
    )?;

    let mean = design.y.iter().sum::<f64>() / design.n as f64;
    let sst: f64 = design.y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if sst <= tiny(sst) {
        0.0 // constant response: no variance to explain
    } else {
        (1.0 - ssr_full / sst).clamp(0.0, 1.0)
    };

    let df_resid = (design.n - design.p) as f64;
    let mut p_values = BTreeMap::new();
    for (factor, dummies) in &design.factors {
        if dummies.is_empty() {
            continue;
        }
        let (x2, labels2, p2) = drop_factor(&design, factor);
        let (_, ssr_restricted) =
            qr_least_squares(&x2, design.n, p2, &design.y, &labels2)?;
        let p = partial_f_p_value(ssr_restricted, ssr_full, dummies.len() as f64, df_resid)?;
        p_values.insert(factor.clone(), p);
    }
    // overall test: all non-intercept coefficients jointly zero
    let q_all = (design.p - 1) as f64;
    p_values.insert(
        "overall".to_string(),
        partial_f_p_value(sst, ssr_full, q_all, df_resid)?,
    );

    let coefficients =
        design.labels.iter().cloned().zip(beta.iter().copied()).collect();
    Ok(RegressionResult { coefficients, r_squared, p_values, n_observations: design.n })
}
