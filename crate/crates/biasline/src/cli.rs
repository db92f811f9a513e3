//! Command-line interface. Six subcommands cover the pipeline:
//! `synth` → `scan` → `generate` → `classify` → `analyze` → `report`.
//!
//! Exit codes: 0 success (including empty-input warnings), 1 runtime I/O
//! failure (partially written outputs are removed), 2 configuration or
//! validation error, 3 endpoint auth failure. Every counts/report output
//! embeds the command line that produced it (minus `--threads`, which never
//! affects results), and every run prints its seeds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::classify::{
    count_generations, scan_corpus, CountsMeta, CountsTable, GenderLexicon, PartitionedCounts,
    TaggedUnit, UnitMode,
};
use crate::corpus::{open_corpus, CorpusFormat, SampleSpec};
use crate::error::{Error, Result};
use crate::genharness::{load_prompts, read_generation_records, DecodingSetup, RunPlan};
use crate::lexicon::{load_lexicon_dir, LexiconBundle};
use crate::metrics::{Reference, Weighting};
use crate::report::{build_report, emit_outputs, load_report_json, Formats};
use crate::synth::{load_plant_spec, make_synthetic_corpus};
use crate::textscan::TermMatcher;

#[derive(Parser)]
#[command(
    name = "biasline",
    version,
    about = "Measure gender-occupation bias in text corpora and model generations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a corpus and write per-occupation gender counts
    Scan(ScanArgs),
    /// Query a text-generation endpoint over occupations x prompts x setups
    Generate(GenerateArgs),
    /// Classify generated responses into per-(prompt, setup) counts
    Classify(ClassifyArgs),
    /// Compute metrics from counts and write a report bundle
    Analyze(AnalyzeArgs),
    /// Re-render tables and figures from an existing report.json
    Report(ReportArgs),
    /// Build a synthetic corpus with known planted gender shares
    Synth(SynthArgs),
}

#[derive(Args)]
struct LexiconArg {
    /// Lexicon directory: female.txt, male.txt, occupations.txt, sectors.csv,
    /// and optionally reference.csv
    #[arg(long, value_name = "DIR")]
    lexicon: PathBuf,
}

impl LexiconArg {
    fn load(&self) -> Result<LexiconBundle> {
        if !self.lexicon.is_dir() {
            return Err(Error::Config(format!(
                "lexicon directory {} does not exist",
                self.lexicon.display()
            )));
        }
        load_lexicon_dir(&self.lexicon)
    }
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    lexicon: LexiconArg,
    /// Corpus path: a JSONL file, a directory of JSONL shards, or a
    /// directory tree of .txt files
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    /// Where to write the counts table (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Counting unit: each occupation mention's sentence, or the whole document
    #[arg(long, value_name = "UNIT", default_value_t = UnitMode::Sentence)]
    mode: UnitMode,
    /// Corpus layout; auto sniffs JSONL vs text directory
    #[arg(long, value_name = "KIND", default_value_t = CorpusFormat::Auto)]
    format: CorpusFormat,
    /// Per-occupation document sampling cap
    #[arg(long, value_name = "N", default_value_t = 100_000)]
    cap: usize,
    /// Sampling seed
    #[arg(long, value_name = "N", default_value_t = 42)]
    seed: u64,
    /// Also match naive "+s" plurals of occupation terms
    #[arg(long)]
    plural_variants: bool,
    /// Worker threads (default: all cores); never recorded in outputs
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    lexicon: LexiconArg,
    /// Prompt templates (JSONL)
    #[arg(long, value_name = "FILE")]
    prompts: PathBuf,
    /// Output JSONL of generation records; kept on failure as the resume point
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// OpenAI-compatible endpoint URL; falls back to $BIASLINE_ENDPOINT.
    /// The bearer token is read from $BIASLINE_TOKEN.
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Model name sent with every request
    #[arg(long, value_name = "NAME")]
    model: String,
    /// Comma-separated decoding setups (baseline, topk40, topp09, temp07)
    #[arg(long, value_name = "LIST", default_value = "baseline")]
    setups: String,
    /// Samples per (occupation, prompt, setup) cell
    #[arg(long, value_name = "N", default_value_t = 50)]
    samples: u32,
    #[arg(long, value_name = "N", default_value_t = 256)]
    max_tokens: u32,
    /// Concurrent requests in flight
    #[arg(long, value_name = "N", default_value_t = 8)]
    concurrency: usize,
    /// Attempts per request, counting the first
    #[arg(long, value_name = "N", default_value_t = 3)]
    attempts: u32,
    /// Initial retry backoff, doubled per attempt
    #[arg(long, value_name = "MS", default_value_t = 500)]
    backoff_ms: u64,
    /// Skip (occupation, prompt, setup, sample, model) keys already in the output
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    lexicon: LexiconArg,
    /// Generation records (JSONL) from `biasline generate`
    #[arg(long, value_name = "FILE")]
    gens: PathBuf,
    /// Where to write the partitioned counts (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    lexicon: LexiconArg,
    /// Corpus counts from `biasline scan`
    #[arg(long, value_name = "FILE")]
    counts: PathBuf,
    /// Generation counts from `biasline classify`
    #[arg(long, value_name = "FILE")]
    gen_counts: PathBuf,
    /// Report directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// "uniform", "lexicon" (the bundle's reference.csv), or a term,value CSV
    #[arg(long, value_name = "REF", default_value = "uniform")]
    reference: String,
    /// Weight occupations by gendered tokens or by exclusively-gendered units
    #[arg(long, value_name = "KIND", default_value_t = Weighting::Unit)]
    weighting: Weighting,
    /// Comma-separated subset of json,csv,svg
    #[arg(long, value_name = "LIST", default_value = "json,csv,svg")]
    formats: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Existing report.json (the raw section is authoritative)
    #[arg(long, value_name = "FILE")]
    from: PathBuf,
    /// Report directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated subset of json,csv,svg
    #[arg(long, value_name = "LIST", default_value = "json,csv,svg")]
    formats: String,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    lexicon: LexiconArg,
    /// Plant specification (.toml or .json)
    #[arg(long, value_name = "FILE")]
    plants: PathBuf,
    /// Where to write the synthetic corpus (JSONL)
    #[arg(long, value_name = "FILE")]
    corpus_out: PathBuf,
    /// Where to write the ground-truth table (CSV)
    #[arg(long, value_name = "FILE")]
    truth_out: PathBuf,
    /// Append an opposite-gender token to every sentence (negative control:
    /// every unit becomes mixed and no gendered unit should be counted)
    #[arg(long)]
    poison: bool,
}

/// Deletes freshly created outputs unless disarmed, so failed runs do not
/// leave partial files behind. Pre-existing paths are left untouched.
struct OutputGuard {
    path: PathBuf,
    preexisting: bool,
    armed: bool,
}

impl OutputGuard {
    fn new(path: &Path) -> Self {
        OutputGuard { path: path.to_path_buf(), preexisting: path.exists(), armed: true }
    }

    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed && !self.preexisting && self.path.exists() {
            let result = if self.path.is_dir() {
                std::fs::remove_dir_all(&self.path)
            } else {
                std::fs::remove_file(&self.path)
            };
            if result.is_err() {
                eprintln!("warning: could not remove partial output {}", self.path.display());
            }
        }
    }
}

/// Quote an argument for the reproduction command embedded in output
/// metadata.
fn shell_word(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./=:,".contains(c)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "'\\''"))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scan(args) => cmd_scan(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_scan(args: ScanArgs) -> Result<()> {
    let bundle = args.lexicon.load()?;
    let sample = SampleSpec::new(args.cap, args.seed)?;
    let matcher = if args.plural_variants {
        TermMatcher::with_plural_variants(bundle.occupations())?
    } else {
        TermMatcher::new(bundle.occupations())?
    };
    let gender = GenderLexicon::from_bundle(&bundle)?;

    let command = format!(
        "biasline scan --corpus {} --lexicon {} --mode {} --format {} --cap {} --seed {}{} --out {}",
        shell_word(&args.corpus.display().to_string()),
        shell_word(&args.lexicon.lexicon.display().to_string()),
        args.mode,
        args.format,
        args.cap,
        args.seed,
        if args.plural_variants { " --plural-variants" } else { "" },
        shell_word(&args.out.display().to_string()),
    );
    let mut meta = CountsMeta::new(args.mode, bundle.digest());
    meta.seed = Some(args.seed);
    meta.cap = Some(args.cap as u64);
    meta.source = Some(args.corpus.display().to_string());
    meta.command = Some(command);

    let mut stream = open_corpus(&args.corpus, args.format)?;
    let scan = || scan_corpus(&mut stream, &matcher, &gender, args.mode, &sample, meta, &bundle);
    let outcome = match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("building thread pool: {e}")))?;
            pool.install(scan)?
        }
        None => scan()?,
    };

    let mut guard = OutputGuard::new(&args.out);
    outcome.table.save(&args.out)?;
    guard.disarm();

    if outcome.stats.documents == 0 {
        eprintln!("warning: corpus {} contained no documents", args.corpus.display());
    }
    let totals = outcome.table.totals();
    println!("seed: {}  cap: {}  mode: {}", args.seed, args.cap, args.mode);
    println!(
        "documents: {} read, {} malformed skipped",
        outcome.stats.documents, outcome.stats.malformed
    );
    println!(
        "occupations: {} of {} with sampled documents",
        outcome.sampled_docs.len(),
        bundle.occupations().len()
    );
    println!(
        "units: {} scanned, {} exclusively gendered ({} female, {} male), {} discarded",
        totals.units_scanned,
        totals.counted_units(),
        totals.female_units,
        totals.male_units,
        totals.discarded_units()
    );
    println!("counts written to {}", args.out.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let bundle = args.lexicon.load()?;
    require_file(&args.prompts, "prompt file")?;
    let templates = load_prompts(&args.prompts)?;
    let endpoint = match args.endpoint {
        Some(url) => url,
        None => std::env::var("BIASLINE_ENDPOINT").map_err(|_| {
            Error::Config("no endpoint: pass --endpoint or set BIASLINE_ENDPOINT".into())
        })?,
    };
    let token = std::env::var("BIASLINE_TOKEN").ok();
    let mut setups = Vec::new();
    for part in args.setups.split(',') {
        let part = part.trim();
        if !part.is_empty() {
            setups.push(part.parse::<DecodingSetup>()?);
        }
    }

    let plan = RunPlan {
        endpoint,
        token,
        model: args.model,
        templates,
        occupations: bundle.occupations().to_vec(),
        setups,
        n_samples: args.samples,
        max_tokens: args.max_tokens,
        concurrency: args.concurrency,
        attempts: args.attempts,
        backoff_ms: args.backoff_ms,
        resume: args.resume,
    };
    // no output guard: the records file is append-only and doubles as the
    // resume point, so partial progress must survive failures
    let summary = crate::genharness::run_generation(&plan, &args.out)?;
    println!(
        "requests: {} requested, {} completed, {} already present, {} failed",
        summary.requested, summary.completed, summary.skipped_existing, summary.failed
    );
    if summary.failed > 0 {
        eprintln!("warning: {} requests failed; re-run with --resume to retry", summary.failed);
    }
    println!("records written to {}", args.out.display());
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> Result<()> {
    let bundle = args.lexicon.load()?;
    require_file(&args.gens, "generation file")?;
    let gender = GenderLexicon::from_bundle(&bundle)?;
    let (records, malformed) = read_generation_records(&args.gens)?;

    let command = format!(
        "biasline classify --gens {} --lexicon {} --out {}",
        shell_word(&args.gens.display().to_string()),
        shell_word(&args.lexicon.lexicon.display().to_string()),
        shell_word(&args.out.display().to_string()),
    );
    let mut meta = CountsMeta::new(UnitMode::Document, bundle.digest());
    meta.source = Some(args.gens.display().to_string());
    meta.command = Some(command);
    meta.documents = Some(records.len() as u64);
    meta.malformed = Some(malformed);

    let units = records.iter().map(|r| TaggedUnit {
        occupation: &r.occupation,
        prompt_id: &r.prompt_id,
        prompt_type: r.prompt_type.name(),
        setup: &r.setup,
        text: &r.text,
    });
    let counts = count_generations(units, &gender, &bundle, meta)?;

    let mut guard = OutputGuard::new(&args.out);
    counts.partitioned.save(&args.out)?;
    guard.disarm();

    if records.is_empty() {
        eprintln!("warning: {} contained no generation records", args.gens.display());
    }
    let totals = counts.partitioned.combined().totals();
    println!("records: {} read, {malformed} malformed skipped", records.len());
    if counts.skipped_unknown_occupation > 0 {
        eprintln!(
            "warning: {} records tagged with occupations outside the lexicon were skipped",
            counts.skipped_unknown_occupation
        );
    }
    println!(
        "cells: {} (prompt, setup) partitions; units: {} scanned, {} exclusively gendered",
        counts.partitioned.cells.len(),
        totals.units_scanned,
        totals.counted_units()
    );
    println!("counts written to {}", args.out.display());
    Ok(())
}

fn resolve_reference(spec: &str, bundle: &LexiconBundle) -> Result<Reference> {
    match spec {
        "uniform" => Ok(Reference::Uniform),
        "lexicon" => {
            if bundle.reference().is_empty() {
                return Err(Error::Config(
                    "--reference lexicon requested but the bundle has no reference.csv".into(),
                ));
            }
            Ok(Reference::PerOccupation(bundle.reference().clone()))
        }
        path => {
            let path = Path::new(path);
            require_file(path, "reference file")?;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_path(path)
                .map_err(|e| Error::Config(format!("reading reference {}: {e}", path.display())))?;
            let mut map = std::collections::BTreeMap::new();
            for (i, row) in reader.deserialize::<(String, f64)>().enumerate() {
                let line = i as u64 + 2;
                let (term, share) = row.map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("invalid reference row: {e}"),
                })?;
                if !(0.0..=1.0).contains(&share) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("reference value for {term:?} is {share}, outside [0,1]"),
                    });
                }
                map.insert(term.to_lowercase(), share);
            }
            if map.is_empty() {
                return Err(Error::Config(format!(
                    "reference file {} has no entries",
                    path.display()
                )));
            }
            Ok(Reference::PerOccupation(map))
        }
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let bundle = args.lexicon.load()?;
    require_file(&args.counts, "counts file")?;
    require_file(&args.gen_counts, "generation counts file")?;
    let data = CountsTable::load(&args.counts)?;
    let gens = PartitionedCounts::load(&args.gen_counts)?;
    let reference = resolve_reference(&args.reference, &bundle)?;
    let formats = Formats::parse(&args.formats)?;

    let command = format!(
        "biasline analyze --counts {} --gen-counts {} --lexicon {} --reference {} --weighting {} --formats {} --out {}",
        shell_word(&args.counts.display().to_string()),
        shell_word(&args.gen_counts.display().to_string()),
        shell_word(&args.lexicon.lexicon.display().to_string()),
        shell_word(&args.reference),
        args.weighting,
        shell_word(&args.formats),
        shell_word(&args.out.display().to_string()),
    );
    let report = build_report(&data, &gens, &bundle, &reference, args.weighting, Some(command))?;

    let mut guard = OutputGuard::new(&args.out);
    let manifest = emit_outputs(&report, &args.out, formats)?;
    guard.disarm();

    print_report_summary(&report);
    println!(
        "wrote {} files plus manifest.json to {}",
        manifest.files.len(),
        args.out.display()
    );
    Ok(())
}

fn print_report_summary(report: &crate::report::AnalysisReport) {
    if let Some(seed) = report.meta.data.seed {
        println!("corpus scan seed: {seed}");
    }
    println!(
        "stereotype skew (mean TVD vs {}, {}-weighted): corpus {:.6}{}",
        report.meta.reference,
        report.meta.weighting,
        report.summary.sta_data,
        match report.summary.sta_generated {
            Some(v) => format!(", generated {v:.6}"),
            None => String::new(),
        }
    );
    match (report.summary.amplification_mean, report.summary.amplification_mean_pp) {
        (Some(mean), Some(pp)) => println!(
            "amplification: mean {mean:+.6} ({pp:+.3} pp) over {} occupations",
            report.summary.shared_occupations
        ),
        _ => {
            if let Some(note) = &report.summary.amplification_note {
                println!("amplification: not available ({note})");
            }
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    require_file(&args.from, "report file")?;
    let report = load_report_json(&args.from)?;
    let formats = Formats::parse(&args.formats)?;
    let mut guard = OutputGuard::new(&args.out);
    let manifest = emit_outputs(&report, &args.out, formats)?;
    guard.disarm();
    print_report_summary(&report);
    println!(
        "wrote {} files plus manifest.json to {}",
        manifest.files.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let bundle = args.lexicon.load()?;
    require_file(&args.plants, "plant spec")?;
    let spec = load_plant_spec(&args.plants)?;

    let mut corpus_guard = OutputGuard::new(&args.corpus_out);
    let mut truth_guard = OutputGuard::new(&args.truth_out);
    let outcomes = make_synthetic_corpus(&spec, &bundle, args.poison, &args.corpus_out, &args.truth_out)?;
    corpus_guard.disarm();
    truth_guard.disarm();

    let total_docs: u64 = outcomes.iter().map(|o| o.docs).sum();
    println!(
        "seed: {}  plants: {}  documents: {}{}",
        spec.seed,
        outcomes.len(),
        total_docs,
        if args.poison { "  (poisoned)" } else { "" }
    );
    for outcome in &outcomes {
        println!(
            "  {}: planted {:.4}, realized {:.6} over {} docs",
            outcome.occupation, outcome.p_planted, outcome.p_realized, outcome.docs
        );
    }
    println!(
        "corpus written to {}, ground truth to {}",
        args.corpus_out.display(),
        args.truth_out.display()
    );
    Ok(())
}
