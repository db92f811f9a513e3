//! Acceptance gate: one test per release criterion, each against an
//! independent oracle or an exact analytic expectation. Every test prints a
//! single `[PASS]` line with the measured numbers when it succeeds.
//!
//! The expensive tests share one large planted corpus (220 occupations x
//! 10,000 documents) built once per process, and serialize themselves with a
//! mutex so that throughput timings are not polluted by concurrent work.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use biasline::classify::{
    scan_corpus, CountsMeta, CountsTable, GenderLexicon, ScanOutcome, UnitMode,
};
use biasline::corpus::{open_corpus, CorpusFormat, SampleSpec};
use biasline::genharness::{
    read_generation_records, run_generation, DecodingSetup, PromptStyle, PromptTemplate,
    PromptType, RunPlan,
};
use biasline::lexicon::{load_lexicon_dir, LexiconBundle};
use biasline::metrics::regression::{regress_gender_proportion, Observation};
use biasline::metrics::{amplification, pearson, sta, tvd, GenderDistribution, Reference, Weighting};
use biasline::synth::{default_filler, load_ground_truth, make_synthetic_corpus, PlantEntry, PlantSpec};
use biasline::textscan::TermMatcher;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

const BIN: &str = env!("CARGO_BIN_EXE_biasline");
const DOCS_PER_OCCUPATION: u64 = 10_000;

// ---------------------------------------------------------------------------
// shared infrastructure

/// Serializes the CPU-heavy tests so wall-clock gates see an idle machine.
fn heavy() -> MutexGuard<'static, ()> {
    static HEAVY: Mutex<()> = Mutex::new(());
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn fixture_lexicon() -> LexiconBundle {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/lexicon");
    load_lexicon_dir(&dir).expect("shipped lexicon fixture")
}

struct BigSynth {
    _tmp: tempfile::TempDir,
    corpus: PathBuf,
    corpus_bytes: u64,
    outcomes: Vec<biasline::synth::PlantOutcome>,
    bundle: LexiconBundle,
}

/// One planted corpus shared by the recovery, soundness, and throughput
/// tests: every shipped occupation gets 10,000 single-sentence documents
/// whose gendered pronoun is drawn with an occupation-specific probability
/// taken from an evenly spaced, seed-shuffled grid over [0.02, 0.98].
fn big_synth() -> &'static BigSynth {
    static BIG: OnceLock<BigSynth> = OnceLock::new();
    BIG.get_or_init(|| {
        let bundle = fixture_lexicon();
        let occupations = bundle.occupations().to_vec();
        let n = occupations.len();
        assert_eq!(n, 220, "shipped lexicon should carry 220 occupations");

        let mut grid: Vec<f64> =
            (0..n).map(|i| 0.02 + 0.96 * i as f64 / (n - 1) as f64).collect();
        grid.shuffle(&mut ChaCha20Rng::seed_from_u64(0xACCE_5517));

        let plants = occupations
            .iter()
            .zip(&grid)
            .map(|(occupation, &p_female)| PlantEntry {
                occupation: occupation.clone(),
                p_female,
                docs: DOCS_PER_OCCUPATION,
            })
            .collect();
        let spec = PlantSpec { seed: 1177, filler: default_filler(), plants };

        let tmp = tempfile::tempdir().expect("tempdir");
        let corpus = tmp.path().join("planted.jsonl");
        let truth = tmp.path().join("truth.csv");
        let outcomes = make_synthetic_corpus(&spec, &bundle, false, &corpus, &truth)
            .expect("synthesize planted corpus");

        // the truth CSV must round-trip the realized shares bit-for-bit
        let loaded = load_ground_truth(&truth).expect("read ground truth");
        assert_eq!(loaded.len(), outcomes.len());
        for (a, b) in outcomes.iter().zip(&loaded) {
            assert_eq!(a.occupation, b.occupation);
            assert_eq!(a.p_planted, b.p_planted);
            assert_eq!(a.p_realized, b.p_realized);
            assert_eq!(a.docs, b.docs);
        }

        let corpus_bytes = std::fs::metadata(&corpus).expect("corpus metadata").len();
        BigSynth { _tmp: tmp, corpus, corpus_bytes, outcomes, bundle }
    })
}

fn scan_file(
    bundle: &LexiconBundle,
    corpus: &Path,
    mode: UnitMode,
    cap: usize,
    seed: u64,
) -> ScanOutcome {
    let matcher = TermMatcher::new(bundle.occupations()).expect("build matcher");
    let gender = GenderLexicon::from_bundle(bundle).expect("build gender lexicon");
    let mut stream = open_corpus(corpus, CorpusFormat::Auto).expect("open corpus");
    scan_corpus(
        &mut stream,
        &matcher,
        &gender,
        mode,
        &SampleSpec::new(cap, seed).expect("sample spec"),
        CountsMeta::new(mode, bundle.digest()),
        bundle,
    )
    .expect("scan corpus")
}

// ---------------------------------------------------------------------------
// 1. distribution spot check

#[test]
fn distribution_spot_check_is_exact() {
    let started = Instant::now();

    let skewed = GenderDistribution::new(0.152, 0.848).expect("valid distribution");
    let divergence = tvd(&skewed, &GenderDistribution::uniform());
    assert_eq!(divergence, 0.348, "spot-check divergence must be exact in f64");

    // one-occupation table realizing the same observed distribution
    let bundle = LexiconBundle::new(
        vec!["she".into()],
        vec!["he".into()],
        vec!["archivist".into()],
        BTreeMap::new(),
        BTreeMap::new(),
    )
    .expect("tiny bundle");
    let mut table =
        CountsTable::zeroed(CountsMeta::new(UnitMode::Sentence, bundle.digest()), &bundle);
    let row = table.occupations.get_mut("archivist").expect("row");
    row.units_scanned = 1000;
    row.female_units = 848;
    row.male_units = 152;
    row.female_tokens = 848;
    row.male_tokens = 152;

    let skew = sta(&table, &Reference::Uniform, &bundle, Weighting::Unit).expect("skew");
    assert!(
        (skew.overall - 0.348).abs() <= 1e-12,
        "one-occupation skew {} differs from 0.348 by more than 1e-12",
        skew.overall
    );
    assert!(skew.excluded.is_empty());

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 0.1, "spot check took {elapsed:?}, expected milliseconds");
    println!(
        "[PASS] distribution spot check: tvd((0.152, 0.848), uniform) = 0.348 exactly, \
         one-occupation skew within 1e-12, in {}us",
        elapsed.as_micros()
    );
}

// ---------------------------------------------------------------------------
// 2. planted-bias recovery at scale

#[test]
fn planted_bias_is_recovered_exactly_at_scale() {
    let _guard = heavy();
    let started = Instant::now();

    let fx = big_synth();
    let outcome = scan_file(&fx.bundle, &fx.corpus, UnitMode::Sentence, 100_000, 42);

    assert_eq!(outcome.stats.documents, 220 * DOCS_PER_OCCUPATION);
    assert_eq!(outcome.stats.malformed, 0);

    for plant in &fx.outcomes {
        let row = outcome
            .table
            .occupations
            .get(&plant.occupation)
            .unwrap_or_else(|| panic!("no row for {:?}", plant.occupation));
        assert_eq!(row.units_scanned, plant.docs, "{:?}", plant.occupation);
        assert_eq!(row.counted_units(), plant.docs, "{:?}", plant.occupation);
        assert_eq!(row.female_tokens, row.female_units, "{:?}", plant.occupation);
        assert_eq!(row.male_tokens, row.male_units, "{:?}", plant.occupation);
        let measured = row.female_units as f64 / row.counted_units() as f64;
        assert_eq!(
            measured, plant.p_realized,
            "{:?}: measured proportion must equal realized ground truth exactly",
            plant.occupation
        );
        assert_eq!(
            outcome.sampled_docs.get(&plant.occupation).copied(),
            Some(plant.docs),
            "{:?}: sampling cap must not bind",
            plant.occupation
        );
    }

    let skew =
        sta(&outcome.table, &Reference::Uniform, &fx.bundle, Weighting::Unit).expect("skew");
    assert!(skew.excluded.is_empty());
    assert_eq!(skew.per_occupation.len(), fx.outcomes.len());
    let analytic = fx.outcomes.iter().map(|o| (o.p_realized - 0.5).abs()).sum::<f64>()
        / fx.outcomes.len() as f64;
    assert!(
        (skew.overall - analytic).abs() <= 1e-12,
        "overall skew {} vs analytic mean {} differs by {:e}",
        skew.overall,
        analytic,
        (skew.overall - analytic).abs()
    );

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "recovery run took {secs:.1}s, budget is 60s");
    println!(
        "[PASS] planted bias recovered exactly for 220 occupations x {DOCS_PER_OCCUPATION} \
         documents; overall skew {:.6} matches the analytic mean within 1e-12; {secs:.1}s < 60s",
        skew.overall
    );
}

// ---------------------------------------------------------------------------
// 3. optimized scan vs naive reference, 100-seed sweep

#[test]
fn optimized_scan_matches_naive_reference_across_seed_sweep() {
    let _guard = heavy();
    let tmp = tempfile::tempdir().expect("tempdir");
    let corpus = tmp.path().join("fuzz.jsonl");

    for sweep_seed in 0..100u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(sweep_seed);
        let occupations = common::fuzz_terms(&mut rng, 30);
        let (female, male) = common::fuzz_gender_terms(&mut rng, 4, &occupations);
        let all_gender: Vec<String> = female.iter().chain(&male).cloned().collect();
        let docs = common::fuzz_corpus(&mut rng, 1000, &occupations, &all_gender);
        common::write_jsonl(&corpus, &docs);

        let bundle = LexiconBundle::new(
            female.clone(),
            male.clone(),
            occupations.clone(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .expect("fuzz bundle");
        let mode =
            if sweep_seed % 2 == 0 { UnitMode::Sentence } else { UnitMode::Document };
        let cap = [40usize, 150, 2000][(sweep_seed % 3) as usize];
        let scan_seed = 1000 + sweep_seed;

        let outcome = scan_file(&bundle, &corpus, mode, cap, scan_seed);
        let naive =
            common::naive_scan(&docs, &occupations, &female, &male, mode, cap, scan_seed);

        for name in bundle.occupations() {
            let optimized = outcome.table.occupations.get(name).copied().unwrap_or_default();
            let reference = naive.get(name).copied().unwrap_or_default();
            assert_eq!(
                optimized, reference,
                "seed {sweep_seed}, mode {mode:?}, cap {cap}, occupation {name:?}"
            );
        }
        for name in naive.keys() {
            assert!(
                outcome.table.occupations.contains_key(name),
                "seed {sweep_seed}: naive-only occupation {name:?}"
            );
        }
    }

    println!(
        "[PASS] optimized scan identical to the naive quadratic reference on all 100 seeded \
         fuzz corpora (1000 documents, 30-term lexicons, alternating unit modes and caps)"
    );
}

// ---------------------------------------------------------------------------
// 4. exclusivity soundness under poisoning

#[test]
fn poisoned_corpus_yields_zero_gendered_counts() {
    let _guard = heavy();
    let bundle = fixture_lexicon();
    const POISON_DOCS: u64 = 300;

    let mut rng = ChaCha20Rng::seed_from_u64(0x9015_0ED);
    let plants = bundle
        .occupations()
        .iter()
        .map(|occupation| PlantEntry {
            occupation: occupation.clone(),
            p_female: rng.random_range(0.05..0.95),
            docs: POISON_DOCS,
        })
        .collect();
    let spec = PlantSpec { seed: 4242, filler: default_filler(), plants };

    let tmp = tempfile::tempdir().expect("tempdir");
    let corpus = tmp.path().join("poisoned.jsonl");
    let truth = tmp.path().join("truth.csv");
    let outcomes =
        make_synthetic_corpus(&spec, &bundle, true, &corpus, &truth).expect("poisoned corpus");

    let outcome = scan_file(&bundle, &corpus, UnitMode::Sentence, 100_000, 42);
    assert_eq!(outcome.stats.documents, 220 * POISON_DOCS);

    let mut scanned_total = 0u64;
    for plant in &outcomes {
        let row = outcome
            .table
            .occupations
            .get(&plant.occupation)
            .unwrap_or_else(|| panic!("no row for {:?}", plant.occupation));
        assert_eq!(row.units_scanned, POISON_DOCS, "{:?}", plant.occupation);
        assert_eq!(row.female_units, 0, "{:?}", plant.occupation);
        assert_eq!(row.male_units, 0, "{:?}", plant.occupation);
        assert_eq!(row.female_tokens, 0, "{:?}", plant.occupation);
        assert_eq!(row.male_tokens, 0, "{:?}", plant.occupation);
        assert_eq!(row.discarded_units(), POISON_DOCS, "{:?}", plant.occupation);
        scanned_total += row.units_scanned;
    }

    println!(
        "[PASS] injecting one opposite-gender token per unit drives every gendered count to \
         zero: {scanned_total} units scanned across 220 occupations, all discarded as mixed"
    );
}

// ---------------------------------------------------------------------------
// 5. amplification identity and antisymmetry

#[test]
fn amplification_identity_and_antisymmetry_hold() {
    let bundle = fixture_lexicon();
    let mut rng = ChaCha20Rng::seed_from_u64(0xA3B1);
    let series_a: BTreeMap<String, f64> =
        bundle.occupations().iter().map(|o| (o.clone(), rng.random_range(0.0..=1.0))).collect();
    let series_b: BTreeMap<String, f64> =
        bundle.occupations().iter().map(|o| (o.clone(), rng.random_range(0.0..=1.0))).collect();

    let self_amp = amplification(&series_a, &series_a).expect("self amplification");
    assert_eq!(self_amp.per_occupation.len(), 220);
    for (occupation, &delta) in &self_amp.per_occupation {
        assert_eq!(delta, 0.0, "self-amplification for {occupation:?}");
    }
    assert_eq!(self_amp.mean, 0.0);
    assert_eq!(self_amp.mean_pp, 0.0);
    assert!(self_amp.excluded.is_empty());

    let forward = amplification(&series_a, &series_b).expect("forward");
    let backward = amplification(&series_b, &series_a).expect("backward");
    assert_eq!(forward.per_occupation.len(), 220);
    for (occupation, &delta) in &forward.per_occupation {
        let reverse = backward.per_occupation[occupation];
        assert!(
            (delta + reverse).abs() <= 1e-12,
            "antisymmetry violated for {occupation:?}: {delta} vs {reverse}"
        );
        assert_eq!(delta, -reverse, "exact negation for {occupation:?}");
    }
    assert_eq!(forward.mean, -backward.mean);
    assert_eq!(forward.mean_pp, -backward.mean_pp);

    println!(
        "[PASS] amplification(A, A) = 0 for all 220 occupations; amplification(A, B) = \
         -amplification(B, A) element-wise within 1e-12 (exact negation observed)"
    );
}

// ---------------------------------------------------------------------------
// 6. statistics vs independent oracles

/// Dummy-coded design row for the 3x3 factorial below; levels sorted, first
/// level of each factor is the reference.
fn design_row(setup: &str, prompt_type: &str) -> Vec<f64> {
    vec![
        1.0,
        f64::from(setup == "temp07"),
        f64::from(setup == "topk40"),
        f64::from(prompt_type == "neutral"),
        f64::from(prompt_type == "positive"),
    ]
}

const DESIGN_LABELS: [&str; 5] =
    ["intercept", "setup=temp07", "setup=topk40", "prompt_type=neutral", "prompt_type=positive"];

/// Least squares by explicit normal equations: returns (beta, residual SS).
fn normal_equations_fit(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0f64; p]; p];
    let mut xty = vec![0.0f64; p];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * yi;
        }
    }
    let beta = common::gauss_jordan_solve(xtx, xty).expect("full-rank design");
    let ssr = rows
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let fitted: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            (yi - fitted).powi(2)
        })
        .sum();
    (beta, ssr)
}

#[test]
fn statistics_match_independent_oracles() {
    // -- Pearson correlation vs the exact integer closed form --------------
    let mut max_pearson_err = 0.0f64;
    for series_idx in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + series_idx);
        let n = 12 + 3 * series_idx as usize;
        let mut xs: Vec<i64> = (0..n).map(|_| rng.random_range(-10_000..10_000)).collect();
        let mut ys: Vec<i64> = (0..n).map(|_| rng.random_range(-10_000..10_000)).collect();
        if xs.iter().all(|&v| v == xs[0]) {
            xs[0] += 1;
        }
        if ys.iter().all(|&v| v == ys[0]) {
            ys[0] += 1;
        }
        let xf: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = ys.iter().map(|&v| v as f64).collect();

        let r = pearson(&xf, &yf).expect("pearson");
        let oracle = common::pearson_exact(&xs, &ys).expect("oracle variance");
        assert!((-1.0..=1.0).contains(&r));
        let err = (r - oracle).abs();
        assert!(err <= 1e-12, "series {series_idx}: |{r} - {oracle}| = {err:e} > 1e-12");
        max_pearson_err = max_pearson_err.max(err);
    }

    // -- factorial regression vs explicit normal equations -----------------
    let setups = ["baseline", "temp07", "topk40"];
    let prompt_types = ["negative", "neutral", "positive"];
    let mut rng = ChaCha20Rng::seed_from_u64(0xFAC70);
    let mut observations = Vec::new();
    for _rep in 0..3 {
        for prompt_type in prompt_types {
            for setup in setups {
                observations.push(Observation {
                    setup: setup.into(),
                    prompt_type: prompt_type.into(),
                    proportion_female: rng.random_range(0.05..0.95),
                });
            }
        }
    }
    let result = regress_gender_proportion(&observations).expect("regression");
    assert_eq!(result.n_observations, 27);

    let rows: Vec<Vec<f64>> =
        observations.iter().map(|o| design_row(&o.setup, &o.prompt_type)).collect();
    let y: Vec<f64> = observations.iter().map(|o| o.proportion_female).collect();
    let (beta, ssr_full) = normal_equations_fit(&rows, &y);

    let oracle_coefficients: BTreeMap<String, f64> =
        DESIGN_LABELS.iter().map(|&l| l.to_string()).zip(beta.iter().copied()).collect();
    assert_eq!(
        result.coefficients.keys().collect::<Vec<_>>(),
        oracle_coefficients.keys().collect::<Vec<_>>(),
        "coefficient labels"
    );
    let mut max_coef_err = 0.0f64;
    for (label, oracle_value) in &oracle_coefficients {
        let err = (result.coefficients[label] - oracle_value).abs();
        assert!(err <= 1e-9, "{label}: |{} - {oracle_value}| > 1e-9", result.coefficients[label]);
        max_coef_err = max_coef_err.max(err);
    }

    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let oracle_r_squared = 1.0 - ssr_full / sst;
    assert!((result.r_squared - oracle_r_squared).abs() <= 1e-9);

    // partial F-tests via numerically integrated F survival function
    let df_residual = (27 - 5) as f64;
    let keep = |indices: &[usize]| -> Vec<Vec<f64>> {
        rows.iter().map(|row| indices.iter().map(|&i| row[i]).collect()).collect()
    };
    let cases: [(&str, Vec<usize>); 3] = [
        ("setup", vec![0, 3, 4]),
        ("prompt_type", vec![0, 1, 2]),
        ("overall", vec![0]),
    ];
    assert_eq!(
        result.p_values.keys().map(String::as_str).collect::<HashSet<_>>(),
        HashSet::from(["setup", "prompt_type", "overall"])
    );
    for (factor, restricted_columns) in cases {
        let dropped = (rows[0].len() - restricted_columns.len()) as f64;
        let (_, ssr_restricted) = normal_equations_fit(&keep(&restricted_columns), &y);
        let f_stat = ((ssr_restricted - ssr_full) / dropped) / (ssr_full / df_residual);
        let oracle_p = common::f_sf_by_quadrature(f_stat, dropped, df_residual);
        let err = (result.p_values[factor] - oracle_p).abs();
        assert!(
            err <= 1e-6,
            "{factor}: p {} vs quadrature oracle {oracle_p} differ by {err:e}",
            result.p_values[factor]
        );
    }

    // -- noiseless planted effect ------------------------------------------
    let mut planted = Vec::new();
    for _rep in 0..3 {
        for setup in ["baseline", "topk40"] {
            planted.push(Observation {
                setup: setup.into(),
                prompt_type: "neutral".into(),
                proportion_female: if setup == "topk40" { 0.6 } else { 0.5 },
            });
        }
    }
    let planted_fit = regress_gender_proportion(&planted).expect("planted regression");
    let effect = planted_fit.coefficients["setup=topk40"];
    assert!((effect - 0.1).abs() <= 1e-9, "planted effect {effect} should be 0.1");
    assert!((planted_fit.r_squared - 1.0).abs() <= 1e-9);
    assert!(
        !planted_fit.coefficients.keys().any(|k| k.starts_with("prompt_type=")),
        "single-level factor must be omitted"
    );

    println!(
        "[PASS] correlation within 1e-12 of the exact-integer oracle on 20 series (max err \
         {max_pearson_err:.1e}); regression coefficients and R^2 match normal equations within \
         1e-9 (max err {max_coef_err:.1e}); F p-values match quadrature within 1e-6; noiseless \
         planted effect 0.1 and R^2 = 1 recovered"
    );
}

// ---------------------------------------------------------------------------
// 7. generation matrix cardinality and free resume

#[test]
fn generation_matrix_is_complete_and_resume_is_free() {
    let server = common::StubServer::start(|hit, request| {
        let text = match hit % 3 {
            0 => "She was confident and capable.",
            1 => "He finished the task early.",
            _ => "They deferred the question politely.",
        };
        (200, common::styled_body(&request, text))
    });

    let templates = vec![
        PromptTemplate {
            id: "n-01".into(),
            prompt_type: PromptType::Neutral,
            style: PromptStyle::Statement,
            template: "The [OCCUPATION] said".into(),
        },
        PromptTemplate {
            id: "p-01".into(),
            prompt_type: PromptType::Positive,
            style: PromptStyle::Question,
            template: "Why is a/n [OCCUPATION] admired?".into(),
        },
    ];
    let plan = RunPlan {
        endpoint: server.url.clone(),
        token: None,
        model: "stub-model".into(),
        templates,
        occupations: vec!["nurse".into(), "engineer".into()],
        setups: DecodingSetup::ALL.to_vec(),
        n_samples: 50,
        max_tokens: 64,
        concurrency: 8,
        attempts: 3,
        backoff_ms: 1,
        resume: false,
    };

    let tmp = tempfile::tempdir().expect("tempdir");
    let out = tmp.path().join("gens.jsonl");

    let first = run_generation(&plan, &out).expect("first run");
    assert_eq!(first.requested, 800, "2 occupations x 2 templates x 4 setups x 50 samples");
    assert_eq!(first.completed, 800);
    assert_eq!(first.failed, 0);
    assert_eq!(first.skipped_existing, 0);
    assert_eq!(server.hits(), 800, "one request per matrix cell");

    let (records, malformed) = read_generation_records(&out).expect("read records");
    assert_eq!(malformed, 0);
    assert_eq!(records.len(), 800);
    let keys: HashSet<_> = records
        .iter()
        .map(|r| {
            (r.occupation.clone(), r.prompt_id.clone(), r.setup.clone(), r.sample_idx, r.model.clone())
        })
        .collect();
    assert_eq!(keys.len(), 800, "every record key must be unique");

    let bytes_before = std::fs::read(&out).expect("read output");
    let resumed = run_generation(&RunPlan { resume: true, ..plan }, &out).expect("resume run");
    assert_eq!(resumed.requested, 800);
    assert_eq!(resumed.skipped_existing, 800);
    assert_eq!(resumed.completed, 0);
    assert_eq!(resumed.failed, 0);
    assert_eq!(server.hits(), 800, "resume over a complete output must issue zero requests");
    assert_eq!(std::fs::read(&out).expect("reread output"), bytes_before);

    println!(
        "[PASS] generation matrix landed exactly 800 unique-keyed records from 800 requests; \
         resume over the complete output issued 0 new requests"
    );
}

// ---------------------------------------------------------------------------
// 8. byte-identical end-to-end runs across thread counts

fn run_cli(dir: &Path, args: &[&str]) {
    let output = Command::new(BIN)
        .current_dir(dir)
        .env_remove("BIASLINE_ENDPOINT")
        .env_remove("BIASLINE_TOKEN")
        .args(args)
        .output()
        .expect("spawn CLI");
    assert!(
        output.status.code() == Some(0),
        "command {:?} in {:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        dir,
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

fn walk_relative(root: &Path) -> Vec<PathBuf> {
    fn recurse(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).expect("read dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                recurse(root, &path, acc);
            } else {
                acc.push(path.strip_prefix(root).expect("relative path").to_path_buf());
            }
        }
    }
    let mut acc = Vec::new();
    recurse(root, root, &mut acc);
    acc.sort();
    acc
}

fn write_scratch_lexicon(dir: &Path) {
    std::fs::create_dir_all(dir).expect("lexicon dir");
    std::fs::write(dir.join("female.txt"), "she\nher\n").expect("female.txt");
    std::fs::write(dir.join("male.txt"), "he\nhim\n").expect("male.txt");
    std::fs::write(dir.join("occupations.txt"), "engineer\nnurse\nteacher\n")
        .expect("occupations.txt");
    std::fs::write(
        dir.join("sectors.csv"),
        "term,value\nengineer,technical\nnurse,care\nteacher,education\n",
    )
    .expect("sectors.csv");
}

#[test]
fn end_to_end_runs_are_byte_identical_across_thread_counts() {
    let _guard = heavy();
    let tmp_a = tempfile::tempdir().expect("tempdir a");
    let tmp_b = tempfile::tempdir().expect("tempdir b");
    let (a, b) = (tmp_a.path(), tmp_b.path());

    // identical inputs under identical relative paths in both working dirs
    write_scratch_lexicon(&a.join("lex"));
    write_scratch_lexicon(&b.join("lex"));

    let bundle = load_lexicon_dir(&a.join("lex")).expect("scratch bundle");
    let spec = PlantSpec {
        seed: 9,
        filler: default_filler(),
        plants: vec![
            PlantEntry { occupation: "engineer".into(), p_female: 0.23, docs: 4000 },
            PlantEntry { occupation: "nurse".into(), p_female: 0.81, docs: 4000 },
            PlantEntry { occupation: "teacher".into(), p_female: 0.55, docs: 4000 },
        ],
    };
    make_synthetic_corpus(&spec, &bundle, false, &a.join("corpus.jsonl"), &a.join("truth.csv"))
        .expect("synthesize corpus");
    std::fs::copy(a.join("corpus.jsonl"), b.join("corpus.jsonl")).expect("copy corpus");

    let mut gens = String::new();
    for occupation in ["engineer", "nurse", "teacher"] {
        for setup in ["baseline", "topk40"] {
            for sample_idx in 0..8u32 {
                let text = match sample_idx % 3 {
                    0 => "She led the discussion.",
                    1 => "He checked the results.",
                    _ => "They presented the findings.",
                };
                let record = serde_json::json!({
                    "occupation": occupation,
                    "prompt_id": "n-01",
                    "prompt_type": "neutral",
                    "setup": setup,
                    "sample_idx": sample_idx,
                    "model": "stub-model",
                    "text": text,
                });
                gens.push_str(&record.to_string());
                gens.push('\n');
            }
        }
    }
    std::fs::write(a.join("gens.jsonl"), &gens).expect("gens a");
    std::fs::write(b.join("gens.jsonl"), &gens).expect("gens b");

    // same pipeline, different scan thread counts
    let scan_args = |threads: &'static str| {
        vec![
            "scan", "--lexicon", "lex", "--corpus", "corpus.jsonl", "--out", "counts.json",
            "--seed", "13", "--cap", "2000", "--threads", threads,
        ]
    };
    run_cli(a, &scan_args("1"));
    run_cli(b, &scan_args("4"));
    let classify_args =
        ["classify", "--lexicon", "lex", "--gens", "gens.jsonl", "--out", "gcounts.json"];
    run_cli(a, &classify_args);
    run_cli(b, &classify_args);
    let analyze_args = [
        "analyze", "--lexicon", "lex", "--counts", "counts.json", "--gen-counts", "gcounts.json",
        "--out", "report",
    ];
    run_cli(a, &analyze_args);
    run_cli(b, &analyze_args);
    let rerender_args = ["report", "--from", "report/report.json", "--out", "report2"];
    run_cli(a, &rerender_args);
    run_cli(b, &rerender_args);

    for name in ["counts.json", "gcounts.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).expect("read a"),
            std::fs::read(b.join(name)).expect("read b"),
            "{name} differs between thread counts"
        );
    }

    let mut files_compared = 0usize;
    for report_dir in ["report", "report2"] {
        let rel_a = walk_relative(&a.join(report_dir));
        let rel_b = walk_relative(&b.join(report_dir));
        assert_eq!(rel_a, rel_b, "{report_dir}: file sets differ");
        assert!(
            rel_a.iter().any(|p| p == Path::new("manifest.json")),
            "{report_dir}: missing manifest"
        );
        for rel in &rel_a {
            let bytes_a = std::fs::read(a.join(report_dir).join(rel)).expect("read a");
            let bytes_b = std::fs::read(b.join(report_dir).join(rel)).expect("read b");
            assert_eq!(bytes_a, bytes_b, "{report_dir}/{} differs", rel.display());
            files_compared += 1;
        }
        biasline::report::verify_manifest(&a.join(report_dir)).expect("manifest a");
        biasline::report::verify_manifest(&b.join(report_dir)).expect("manifest b");
    }

    println!(
        "[PASS] two end-to-end runs (scan -> classify -> analyze -> report) with 1 and 4 scan \
         threads produced byte-identical outputs: {files_compared} report files compared, \
         manifest digests verified on both"
    );
}

// ---------------------------------------------------------------------------
// 9. scan throughput floor

#[test]
fn single_thread_scan_meets_throughput_floor() {
    let _guard = heavy();
    let fx = big_synth();

    let timed_scan = |threads: usize| -> (f64, CountsTable) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        let started = Instant::now();
        let outcome =
            pool.install(|| scan_file(&fx.bundle, &fx.corpus, UnitMode::Sentence, 100_000, 42));
        (started.elapsed().as_secs_f64(), outcome.table)
    };

    let megabytes = fx.corpus_bytes as f64 / 1e6;
    let (secs_single, table_single) = timed_scan(1);
    let throughput_single = megabytes / secs_single;
    assert!(
        throughput_single >= 20.0,
        "single-thread scan ran at {throughput_single:.1} MB/s, below the 20 MB/s floor \
         ({megabytes:.0} MB in {secs_single:.2}s)"
    );

    let (secs_quad, table_quad) = timed_scan(4);
    let throughput_quad = megabytes / secs_quad;
    assert_eq!(
        table_single.occupations, table_quad.occupations,
        "thread count must not change the counts"
    );

    let speedup = secs_single / secs_quad;
    println!(
        "[PASS] single-thread scan {throughput_single:.0} MB/s over {megabytes:.0} MB \
         (floor 20 MB/s); 4 threads {throughput_quad:.0} MB/s, speedup {speedup:.2}x on \
         {} available core(s) (soft target 2.5x, reported not gated)",
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    );
}
