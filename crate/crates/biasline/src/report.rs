//! Assemble counts into an analysis report and render it as a deterministic
//! output bundle: `report.json`, per-table CSVs, two SVG figures, and a
//! `manifest.json` listing every emitted file with its SHA-256 digest.
//!
//! Determinism contract: the same report produces byte-identical files, and
//! `report.json` → [`load_report_json`] → [`emit_outputs`] is idempotent.
//! Displayed floats are rounded to 6 significant digits; full precision is
//! kept under the JSON `raw` key, which is what loading reads back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{CountsMeta, CountsTable, PartitionedCounts, UnitCounts};
use crate::error::{Error, Result};
use crate::lexicon::LexiconBundle;
use crate::metrics::{
    amplification, observed_distribution, pearson, regress_gender_proportion, sta, Exclusion,
    Observation, Reference, RegressionResult, Weighting,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub lexicon_digest: String,
    pub weighting: Weighting,
    /// human-readable reference description ("uniform" or the reference file)
    pub reference: String,
    pub data: CountsMeta,
    pub generated: CountsMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// mean TVD of corpus counts against the reference
    pub sta_data: f64,
    /// mean TVD of generated counts against the reference
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sta_generated: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sta_generated_note: Option<String>,
    /// mean (generated − data) female share over shared occupations
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_mean_pp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_note: Option<String>,
    pub shared_occupations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRow {
    pub occupation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_female_data: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_female_generated: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tvd_data: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tvd_generated: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorRow {
    pub sector: String,
    /// occupations mapped to this sector in the bundle
    pub occupations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tvd_data: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tvd_generated: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_amplification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub prompt_id: String,
    pub prompt_type: String,
    pub setup: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub n_occupations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportExclusions {
    pub data_side: Vec<Exclusion>,
    pub generated_side: Vec<Exclusion>,
    pub amplification: Vec<Exclusion>,
    pub unmapped_occupations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub meta: ReportMeta,
    pub summary: ReportSummary,
    /// bundle order
    pub occupations: Vec<OccupationRow>,
    /// alphabetical
    pub sectors: Vec<SectorRow>,
    /// sorted by (prompt_id, setup)
    pub correlation: Vec<CorrelationCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression_note: Option<String>,
    pub exclusions: ReportExclusions,
}

fn proportions(
    occupations: &BTreeMap<String, UnitCounts>,
    weighting: Weighting,
) -> BTreeMap<String, f64> {
    occupations
        .iter()
        .filter_map(|(name, counts)| {
            observed_distribution(counts, weighting).map(|d| (name.clone(), d.p_female))
        })
        .collect()
}

pub fn describe_reference(reference: &Reference) -> String {
    match reference {
        Reference::Uniform => "uniform".to_string(),
        Reference::PerOccupation(map) => {
            format!("per-occupation ({} entries)", map.len())
        }
    }
}

/// Compute every metric and assemble the report. The two count inputs must
/// have been produced with the same lexicon as `bundle`.
pub fn build_report(
    data: &CountsTable,
    gens: &PartitionedCounts,
    bundle: &LexiconBundle,
    reference: &Reference,
    weighting: Weighting,
    command: Option<String>,
) -> Result<AnalysisReport> {
    let bundle_digest = bundle.digest();
    for (what, digest) in
        [("corpus counts", &data.meta.lexicon_digest), ("generation counts", &gens.meta.lexicon_digest)]
    {
        if *digest != bundle_digest {
            return Err(Error::DigestMismatch {
                expected: bundle_digest,
                found: format!("{digest} ({what})"),
            });
        }
    }

    let sta_data = sta(data, reference, bundle, weighting)?;
    let combined = gens.combined();
    let (sta_generated, sta_generated_note) =
        match sta(&combined, reference, bundle, weighting) {
            Ok(result) => (Some(result), None),
            Err(e) => (None, Some(e.to_string())),
        };

    let data_shares = proportions(&data.occupations, weighting);
    let generated_shares = proportions(&combined.occupations, weighting);
    let (amp, amplification_note) = match amplification(&generated_shares, &data_shares) {
        Ok(result) => (Some(result), None),
        Err(e) => (None, Some(e.to_string())),
    };

    // per-occupation rows, bundle order
    let mut occupations = Vec::with_capacity(bundle.occupations().len());
    for name in bundle.occupations() {
        occupations.push(OccupationRow {
            occupation: name.clone(),
            sector: bundle.sector_of(name).map(String::from),
            p_female_data: data_shares.get(name).copied(),
            p_female_generated: generated_shares.get(name).copied(),
            tvd_data: sta_data.per_occupation.get(name).copied(),
            tvd_generated: sta_generated
                .as_ref()
                .and_then(|s| s.per_occupation.get(name).copied()),
            amplification: amp.as_ref().and_then(|a| a.per_occupation.get(name).copied()),
        });
    }

    // per-sector rows, alphabetical; amplification means accumulate in
    // bundle order like the sector TVD means do
    let mut sector_sizes: BTreeMap<&str, u64> = BTreeMap::new();
    let mut sector_amp: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for name in bundle.occupations() {
        if let Some(sector) = bundle.sector_of(name) {
            *sector_sizes.entry(sector).or_insert(0) += 1;
            if let Some(diff) = amp.as_ref().and_then(|a| a.per_occupation.get(name)) {
                let acc = sector_amp.entry(sector).or_insert((0.0, 0));
                acc.0 += diff;
                acc.1 += 1;
            }
        }
    }
    let sectors = sector_sizes
        .iter()
        .map(|(&sector, &size)| SectorRow {
            sector: sector.to_string(),
            occupations: size,
            mean_tvd_data: sta_data.per_sector.get(sector).copied(),
            mean_tvd_generated: sta_generated
                .as_ref()
                .and_then(|s| s.per_sector.get(sector).copied()),
            mean_amplification: sector_amp
                .get(sector)
                .map(|&(total, n)| total / n as f64),
        })
        .collect();

    // correlation grid and regression observations, cell by cell
    let bundle_names: std::collections::BTreeSet<&str> =
        bundle.occupations().iter().map(String::as_str).collect();
    let mut correlation = Vec::with_capacity(gens.cells.len());
    let mut observations = Vec::new();
    for cell in &gens.cells {
        let cell_shares = proportions(&cell.occupations, weighting);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (name, &generated_share) in &cell_shares {
            if let Some(&data_share) = data_shares.get(name) {
                xs.push(data_share);
                ys.push(generated_share);
            }
        }
        let (r, note) = if xs.len() < 2 {
            (None, Some("fewer than 2 occupations shared with the corpus".to_string()))
        } else {
            match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        correlation.push(CorrelationCell {
            prompt_id: cell.prompt_id.clone(),
            prompt_type: cell.prompt_type.clone(),
            setup: cell.setup.clone(),
            r,
            n_occupations: xs.len() as u64,
            note,
        });
        // one regression observation per occupation with counted units in
        // this (prompt, setup) cell, always unit-weighted
        for (name, counts) in &cell.occupations {
            if !bundle_names.contains(name.as_str()) {
                continue;
            }
            if let Some(d) = observed_distribution(counts, Weighting::Unit) {
                observations.push(Observation {
                    setup: cell.setup.clone(),
                    prompt_type: cell.prompt_type.clone(),
                    proportion_female: d.p_female,
                });
            }
        }
    }
    let (regression, regression_note) = match regress_gender_proportion(&observations) {
        Ok(result) => (Some(result), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let summary = ReportSummary {
        sta_data: sta_data.overall,
        sta_generated: sta_generated.as_ref().map(|s| s.overall),
        sta_generated_note,
        amplification_mean: amp.as_ref().map(|a| a.mean),
        amplification_mean_pp: amp.as_ref().map(|a| a.mean_pp),
        amplification_note,
        shared_occupations: amp.as_ref().map(|a| a.per_occupation.len() as u64).unwrap_or(0),
    };
    let exclusions = ReportExclusions {
        data_side: sta_data.excluded,
        generated_side: sta_generated.map(|s| s.excluded).unwrap_or_default(),
        amplification: amp.map(|a| a.excluded).unwrap_or_default(),
        unmapped_occupations: bundle
            .unmapped_occupations()
            .into_iter()
            .map(String::from)
            .collect(),
    };
    Ok(AnalysisReport {
        meta: ReportMeta {
            lexicon_digest: bundle_digest,
            weighting,
            reference: describe_reference(reference),
            data: data.meta.clone(),
            generated: gens.meta.clone(),
            command,
        },
        summary,
        occupations,
        sectors,
        correlation,
        regression,
        regression_note,
        exclusions,
    })
}

/// Round to 6 significant digits (display convention for emitted files).
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor();
    let factor = 10f64.powf(5.0 - magnitude);
    (x * factor).round() / factor
}

/// Recursively round every fractional number in a JSON value to 6 significant
/// digits; integers pass through untouched.
fn round_json(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("checked is_f64");
                serde_json::Number::from_f64(round6(x)).map(Value::Number).unwrap_or(Value::Null)
            } else {
                Value::Number(n)
            }
        }
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect())
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub json: bool,
    pub csv: bool,
    pub svg: bool,
}

impl Formats {
    pub fn all() -> Self {
        Formats { json: true, csv: true, svg: true }
    }

    /// Parse a comma-separated subset of "json,csv,svg".
    pub fn parse(spec: &str) -> Result<Self> {
        let mut formats = Formats { json: false, csv: false, svg: false };
        for part in spec.split(',') {
            match part.trim() {
                "json" => formats.json = true,
                "csv" => formats.csv = true,
                "svg" => formats.svg = true,
                "" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown output format {other:?} (expected json, csv, svg)"
                    )))
                }
            }
        }
        if !(formats.json || formats.csv || formats.svg) {
            return Err(Error::Config("no output formats selected".into()));
        }
        Ok(formats)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(out, "{b:02x}").expect("writing to String cannot fail");
    }
    out
}

fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Serialize the report for `report.json`: all fields with floats rounded to
/// 6 significant digits for display, plus the full-precision original under
/// `raw`.
pub fn report_json_bytes(report: &AnalysisReport) -> Result<Vec<u8>> {
    let full = serde_json::to_value(report)
        .map_err(|e| Error::Report(format!("serializing report: {e}")))?;
    let rounded = round_json(full.clone());
    let mut top = match rounded {
        serde_json::Value::Object(map) => map,
        _ => return Err(Error::Report("report did not serialize to an object".into())),
    };
    top.insert("raw".to_string(), full);
    let mut out = serde_json::to_string_pretty(&serde_json::Value::Object(top))
        .map_err(|e| Error::Report(format!("serializing report: {e}")))?;
    out.push('\n');
    Ok(out.into_bytes())
}

/// Read a `report.json` back into the full-precision report it was emitted
/// from (via the `raw` mirror).
pub fn load_report_json(path: &Path) -> Result<AnalysisReport> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: format!("invalid report JSON: {e}"),
    })?;
    let raw = value.get("raw").cloned().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "report JSON has no raw section".to_string(),
    })?;
    serde_json::from_value(raw).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("invalid report structure: {e}"),
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| round6(v).to_string()).unwrap_or_default()
}

fn occupations_csv(report: &AnalysisReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "occupation",
        "sector",
        "p_female_data",
        "p_female_generated",
        "tvd_data",
        "tvd_generated",
        "amplification",
    ])
    .and_then(|_| {
        for row in &report.occupations {
            w.write_record([
                row.occupation.clone(),
                row.sector.clone().unwrap_or_default(),
                fmt_opt(row.p_female_data),
                fmt_opt(row.p_female_generated),
                fmt_opt(row.tvd_data),
                fmt_opt(row.tvd_generated),
                fmt_opt(row.amplification),
            ])?;
        }
        Ok(())
    })
    .map_err(|e| Error::Report(format!("writing occupations table: {e}")))?;
    w.into_inner().map_err(|e| Error::Report(format!("writing occupations table: {e}")))
}

fn sectors_csv(report: &AnalysisReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sector",
        "occupations",
        "mean_tvd_data",
        "mean_tvd_generated",
        "mean_amplification",
        "mean_amplification_pp",
    ])
    .and_then(|_| {
        for row in &report.sectors {
            w.write_record([
                row.sector.clone(),
                row.occupations.to_string(),
                fmt_opt(row.mean_tvd_data),
                fmt_opt(row.mean_tvd_generated),
                fmt_opt(row.mean_amplification),
                fmt_opt(row.mean_amplification.map(|x| 100.0 * x)),
            ])?;
        }
        Ok(())
    })
    .map_err(|e| Error::Report(format!("writing sectors table: {e}")))?;
    w.into_inner().map_err(|e| Error::Report(format!("writing sectors table: {e}")))
}

fn correlation_csv(report: &AnalysisReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["prompt_id", "prompt_type", "setup", "pearson_r", "n_occupations", "note"])
        .and_then(|_| {
            for cell in &report.correlation {
                w.write_record([
                    cell.prompt_id.clone(),
                    cell.prompt_type.clone(),
                    cell.setup.clone(),
                    fmt_opt(cell.r),
                    cell.n_occupations.to_string(),
                    cell.note.clone().unwrap_or_default(),
                ])?;
            }
            Ok(())
        })
        .map_err(|e| Error::Report(format!("writing correlation table: {e}")))?;
    w.into_inner().map_err(|e| Error::Report(format!("writing correlation table: {e}")))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 640.0;
const MARGIN: f64 = 70.0;

fn scatter_xy(p_data: f64, p_generated: f64) -> (f64, f64) {
    let x = MARGIN + p_data * (SVG_W - 2.0 * MARGIN);
    let y = SVG_H - MARGIN - p_generated * (SVG_H - 2.0 * MARGIN);
    (x, y)
}

/// Scatter of generated vs corpus female share: one `<circle>` per occupation
/// with both values, the y=x diagonal, and shaded half-planes (above the
/// diagonal = amplified toward women).
fn amplification_svg(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let (x0, y0) = scatter_xy(0.0, 0.0);
    let (x1, y1) = scatter_xy(1.0, 1.0);
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    let _ = writeln!(s, "  <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"#ffffff\"/>");
    // half-planes: above diagonal = amplification, below = de-amplification
    let _ = writeln!(
        s,
        "  <polygon points=\"{x0:.2},{y0:.2} {x1:.2},{y1:.2} {x0:.2},{y1:.2}\" fill=\"#fbe9e7\"/>"
    );
    let _ = writeln!(
        s,
        "  <polygon points=\"{x0:.2},{y0:.2} {x1:.2},{y1:.2} {x1:.2},{y0:.2}\" fill=\"#e8f0fe\"/>"
    );
    let _ = writeln!(
        s,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"#666666\" stroke-dasharray=\"5 4\"/>"
    );
    // axes with ticks every 0.25
    let _ = writeln!(
        s,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"#222222\"/>"
    );
    let _ = writeln!(
        s,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"#222222\"/>"
    );
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let (tx, ty) = scatter_xy(v, v);
        let _ = writeln!(
            s,
            "  <line x1=\"{tx:.2}\" y1=\"{y0:.2}\" x2=\"{tx:.2}\" y2=\"{:.2}\" stroke=\"#222222\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            "  <text x=\"{tx:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{v:.2}</text>",
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            "  <line x1=\"{:.2}\" y1=\"{ty:.2}\" x2=\"{x0:.2}\" y2=\"{ty:.2}\" stroke=\"#222222\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{v:.2}</text>",
            x0 - 8.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        s,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">female share in corpus</text>",
        (x0 + x1) / 2.0,
        SVG_H - 20.0
    );
    let _ = writeln!(
        s,
        "  <text x=\"20\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">female share generated</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        s,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#8d4a43\">amplified toward women</text>",
        x0 + 10.0,
        y1 + 16.0
    );
    let _ = writeln!(
        s,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#44608d\" text-anchor=\"end\">de-amplified</text>",
        x1,
        y0 - 8.0
    );
    for row in &report.occupations {
        if let (Some(px), Some(py)) = (row.p_female_data, row.p_female_generated) {
            let (cx, cy) = scatter_xy(px, py);
            let _ = writeln!(
                s,
                "  <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3.5\" fill=\"#7a2048\" fill-opacity=\"0.75\"><title>{}</title></circle>",
                xml_escape(&row.occupation)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const DIVERGING_BLUE: (f64, f64, f64) = (33.0, 102.0, 172.0);
const DIVERGING_WHITE: (f64, f64, f64) = (247.0, 247.0, 247.0);
const DIVERGING_RED: (f64, f64, f64) = (178.0, 24.0, 43.0);

/// Diverging blue–white–red color for a correlation in [−1, 1]; the inputs
/// are clamped, so ±1 map exactly onto the extreme stops.
fn diverging_color(r: f64) -> String {
    let r = r.clamp(-1.0, 1.0);
    let (to, t) = if r < 0.0 { (DIVERGING_BLUE, -r) } else { (DIVERGING_RED, r) };
    let from = DIVERGING_WHITE;
    let channel = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        channel(from.0, to.0),
        channel(from.1, to.1),
        channel(from.2, to.2)
    )
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of Pearson r over prompt (rows) × setup (columns); missing cells
/// are gray.
fn correlation_svg(report: &AnalysisReport) -> String {
    let mut prompts: Vec<&str> = report.correlation.iter().map(|c| c.prompt_id.as_str()).collect();
    prompts.sort_unstable();
    prompts.dedup();
    let mut setups: Vec<&str> = report.correlation.iter().map(|c| c.setup.as_str()).collect();
    setups.sort_unstable();
    setups.dedup();

    let cell = 46.0;
    let left = 130.0;
    let top = 80.0;
    let legend_h = 60.0;
    let width = left + cell * setups.len().max(1) as f64 + 30.0;
    let height = top + cell * prompts.len().max(1) as f64 + legend_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(s, "  <rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>");
    for (j, setup) in setups.iter().enumerate() {
        let x = left + (j as f64 + 0.5) * cell;
        let _ = writeln!(
            s,
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            top - 12.0,
            xml_escape(setup)
        );
    }
    for (i, prompt) in prompts.iter().enumerate() {
        let y = top + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            s,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            left - 8.0,
            y + 4.0,
            xml_escape(prompt)
        );
    }
    for (i, prompt) in prompts.iter().enumerate() {
        for (j, setup) in setups.iter().enumerate() {
            let found = report
                .correlation
                .iter()
                .find(|c| c.prompt_id == *prompt && c.setup == *setup);
            let (fill, label) = match found.and_then(|c| c.r) {
                Some(r) => (diverging_color(r), format!("{:.2}", r)),
                None => ("#bdbdbd".to_string(), String::new()),
            };
            let x = left + j as f64 * cell;
            let y = top + i as f64 * cell;
            let _ = writeln!(
                s,
                "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{fill}\" stroke=\"#ffffff\"/>"
            );
            if !label.is_empty() {
                let _ = writeln!(
                    s,
                    "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{label}</text>",
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.5
                );
            }
        }
    }
    // legend: the three stops of the diverging scale
    let ly = top + cell * prompts.len().max(1) as f64 + 24.0;
    for (k, (value, tag)) in [(-1.0, "-1"), (0.0, "0"), (1.0, "+1")].iter().enumerate() {
        let x = left + k as f64 * 70.0;
        let _ = writeln!(
            s,
            "  <rect x=\"{x:.2}\" y=\"{ly:.2}\" width=\"16\" height=\"16\" fill=\"{}\" stroke=\"#888888\"/>",
            diverging_color(*value)
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{tag}</text>",
            x + 22.0,
            ly + 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write the selected formats plus `manifest.json` into `dir`, returning the
/// manifest. Identical reports yield byte-identical trees.
pub fn emit_outputs(report: &AnalysisReport, dir: &Path, formats: Formats) -> Result<Manifest> {
    if report.occupations.is_empty() {
        return Err(Error::Report("cannot emit an empty report (no occupation rows)".into()));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if formats.json {
        files.push(("report.json".to_string(), report_json_bytes(report)?));
    }
    if formats.csv {
        files.push(("tables/occupations.csv".to_string(), occupations_csv(report)?));
        files.push(("tables/sectors.csv".to_string(), sectors_csv(report)?));
        files.push(("tables/correlation.csv".to_string(), correlation_csv(report)?));
    }
    if formats.svg {
        files.push(("figures/amplification.svg".to_string(), amplification_svg(report).into_bytes()));
        files.push(("figures/correlation.svg".to_string(), correlation_svg(report).into_bytes()));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut manifest = Manifest { files: Vec::with_capacity(files.len()) };
    for (rel, bytes) in &files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        std::fs::write(&path, bytes).map_err(Error::io(&path))?;
        manifest.files.push(ManifestEntry {
            path: rel.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let mut manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Report(format!("serializing manifest: {e}")))?;
    manifest_json.push('\n');
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest_json).map_err(Error::io(&manifest_path))?;
    Ok(manifest)
}

/// Re-hash every file listed in `dir/manifest.json`, failing on the first
/// mismatch or missing file.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let manifest_path = dir.join("manifest.json");
    let raw = std::fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: e.line() as u64,
        msg: format!("invalid manifest: {e}"),
    })?;
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 || bytes.len() as u64 != entry.bytes {
            return Err(Error::Report(format!(
                "manifest digest mismatch for {}: expected {} ({} bytes), found {} ({} bytes)",
                entry.path,
                entry.sha256,
                entry.bytes,
                digest,
                bytes.len()
            )));
        }
    }
    Ok(manifest)
}
