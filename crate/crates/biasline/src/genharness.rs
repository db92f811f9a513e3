//! Drive an OpenAI-compatible text-generation endpoint over the occupation ×
//! prompt × decoding-setup × sample matrix, persisting tagged responses as
//! JSONL for downstream classification.
//!
//! Statement-style templates are sent as raw continuation prompts
//! (`"prompt"`), question-style ones as a single user message
//! (`"messages"`). Requests run on a bounded worker pool; the output sink is
//! a single writer, so records land whole. Transient failures retry with
//! exponential backoff; auth failures abort the run.

use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptType {
    Neutral,
    Positive,
    Negative,
}

impl PromptType {
    pub fn name(self) -> &'static str {
        match self {
            PromptType::Neutral => "neutral",
            PromptType::Positive => "positive",
            PromptType::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Completion prompt: the model continues the text.
    Statement,
    /// Chat prompt: the model answers a user message.
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub prompt_type: PromptType,
    pub style: PromptStyle,
    /// Contains exactly one `[OCCUPATION]` placeholder, optionally preceded
    /// by the literal `a/n `.
    pub template: String,
}

const PLACEHOLDER: &str = "[OCCUPATION]";

/// Load prompt templates from JSONL; ids must be unique and every template
/// must contain the placeholder exactly once.
pub fn load_prompts(path: &Path) -> Result<Vec<PromptTemplate>> {
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut templates = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let template: PromptTemplate =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("invalid prompt template: {e}"),
            })?;
        if template.template.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!(
                    "template {:?} must contain exactly one {PLACEHOLDER} placeholder",
                    template.id
                ),
            });
        }
        if !seen.insert(template.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("duplicate prompt id {:?}", template.id),
            });
        }
        templates.push(template);
    }
    if templates.is_empty() {
        return Err(Error::Config(format!("no prompt templates in {}", path.display())));
    }
    Ok(templates)
}

/// Substitute the occupation into a template. The literal `a/n` resolves to
/// "an" before a vowel-initial occupation and "a" otherwise; the occupation's
/// own casing is preserved.
pub fn render_prompt(template: &PromptTemplate, occupation: &str) -> Result<String> {
    if occupation.is_empty() {
        return Err(Error::Config("cannot render a prompt for an empty occupation".into()));
    }
    if template.template.matches(PLACEHOLDER).count() != 1 {
        return Err(Error::Config(format!(
            "template {:?} must contain exactly one {PLACEHOLDER} placeholder",
            template.id
        )));
    }
    let article = if occupation.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    let with_article = format!("a/n {PLACEHOLDER}");
    let rendered = if template.template.contains(&with_article) {
        template
            .template
            .replace(&with_article, &format!("{article} {occupation}"))
    } else {
        template.template.replace(PLACEHOLDER, occupation)
    };
    Ok(rendered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingSetup {
    Baseline,
    Topk40,
    Topp09,
    Temp07,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// `None` = unlimited (the parameter is omitted from the request)
    pub top_k: Option<u32>,
}

impl DecodingSetup {
    pub const ALL: [DecodingSetup; 4] =
        [DecodingSetup::Baseline, DecodingSetup::Topk40, DecodingSetup::Topp09, DecodingSetup::Temp07];

    pub fn name(self) -> &'static str {
        match self {
            DecodingSetup::Baseline => "baseline",
            DecodingSetup::Topk40 => "topk40",
            DecodingSetup::Topp09 => "topp09",
            DecodingSetup::Temp07 => "temp07",
        }
    }

    pub fn params(self) -> SamplingParams {
        match self {
            DecodingSetup::Baseline => {
                SamplingParams { temperature: 1.0, top_p: 1.0, top_k: None }
            }
            DecodingSetup::Topk40 => {
                SamplingParams { temperature: 1.0, top_p: 1.0, top_k: Some(40) }
            }
            DecodingSetup::Topp09 => {
                SamplingParams { temperature: 1.0, top_p: 0.9, top_k: None }
            }
            DecodingSetup::Temp07 => {
                SamplingParams { temperature: 0.7, top_p: 1.0, top_k: None }
            }
        }
    }
}

impl std::fmt::Display for DecodingSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DecodingSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(DecodingSetup::Baseline),
            "topk40" => Ok(DecodingSetup::Topk40),
            "topp09" => Ok(DecodingSetup::Topp09),
            "temp07" => Ok(DecodingSetup::Temp07),
            other => Err(Error::Config(format!(
                "unknown decoding setup {other:?} (expected baseline, topk40, topp09, or temp07)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub occupation: String,
    pub prompt_id: String,
    pub prompt_type: PromptType,
    pub setup: String,
    pub sample_idx: u32,
    pub model: String,
    pub text: String,
}

impl GenerationRecord {
    fn key(&self) -> (String, String, String, u32, String) {
        (
            self.occupation.clone(),
            self.prompt_id.clone(),
            self.setup.clone(),
            self.sample_idx,
            self.model.clone(),
        )
    }
}

/// Read a generation JSONL file; malformed lines are counted, not fatal.
pub fn read_generation_records(path: &Path) -> Result<(Vec<GenerationRecord>, u64)> {
    let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut records = Vec::new();
    let mut malformed = 0;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GenerationRecord>(line) {
            Ok(record) => records.push(record),
            Err(_) => malformed += 1,
        }
    }
    Ok((records, malformed))
}

pub struct RunPlan {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub templates: Vec<PromptTemplate>,
    pub occupations: Vec<String>,
    pub setups: Vec<DecodingSetup>,
    pub n_samples: u32,
    pub max_tokens: u32,
    pub concurrency: usize,
    /// total attempts per request, counting the first
    pub attempts: u32,
    /// initial retry backoff, doubled per attempt
    pub backoff_ms: u64,
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    /// full matrix size
    pub requested: u64,
    /// records newly written by this run
    pub completed: u64,
    /// records already present in the output (resume)
    pub skipped_existing: u64,
    /// requests abandoned after exhausting retries
    pub failed: u64,
}

struct Job<'a> {
    occupation: &'a str,
    template: &'a PromptTemplate,
    setup: DecodingSetup,
    sample_idx: u32,
}

enum WorkerMsg {
    Done(GenerationRecord),
    Failed,
    Fatal(Error),
}

/// Outcome of a single HTTP attempt.
enum Attempt {
    Success(String),
    Transient(String),
    Fatal(Error),
}

pub fn run_generation(plan: &RunPlan, out: &Path) -> Result<RunSummary> {
    validate_plan(plan)?;
    let existing: HashSet<(String, String, String, u32, String)> = if plan.resume
        && out.exists()
    {
        let (records, _) = read_generation_records(out)?;
        records.iter().map(GenerationRecord::key).collect()
    } else {
        HashSet::new()
    };

    let mut jobs: VecDeque<Job> = VecDeque::new();
    let mut requested = 0u64;
    let mut skipped_existing = 0u64;
    for occupation in &plan.occupations {
        for template in &plan.templates {
            for &setup in &plan.setups {
                for sample_idx in 0..plan.n_samples {
                    requested += 1;
                    let key = (
                        occupation.clone(),
                        template.id.clone(),
                        setup.name().to_string(),
                        sample_idx,
                        plan.model.clone(),
                    );
                    if existing.contains(&key) {
                        skipped_existing += 1;
                        continue;
                    }
                    jobs.push_back(Job { occupation, template, setup, sample_idx });
                }
            }
        }
    }

    let mut file = if plan.resume && out.exists() {
        std::fs::OpenOptions::new().append(true).open(out).map_err(Error::io(out))?
    } else {
        std::fs::File::create(out).map_err(Error::io(out))?
    };
    if jobs.is_empty() {
        return Ok(RunSummary { requested, completed: 0, skipped_existing, failed: 0 });
    }

    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(120)))
        .build();
    let agent: ureq::Agent = config.into();

    let workers = plan.concurrency.min(jobs.len()).max(1);
    let queue = Mutex::new(jobs);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<WorkerMsg>();

    let mut completed = 0u64;
    let mut failed = 0u64;
    let mut fatal: Option<Error> = None;

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let agent = &agent;
            let queue = &queue;
            let stop = &stop;
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let job = match queue.lock() {
                    Ok(mut q) => q.pop_front(),
                    Err(_) => break,
                };
                let Some(job) = job else { break };
                match execute_job(agent, plan, &job) {
                    Ok(text) => {
                        let record = GenerationRecord {
                            occupation: job.occupation.to_string(),
                            prompt_id: job.template.id.clone(),
                            prompt_type: job.template.prompt_type,
                            setup: job.setup.name().to_string(),
                            sample_idx: job.sample_idx,
                            model: plan.model.clone(),
                            text,
                        };
                        if tx.send(WorkerMsg::Done(record)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let is_fatal = matches!(e, Error::AuthFailed { .. });
                        let msg =
                            if is_fatal { WorkerMsg::Fatal(e) } else { WorkerMsg::Failed };
                        if tx.send(msg).is_err() || is_fatal {
                            break;
                        }
                    }
                }
            });
        }
        drop(tx);

        for msg in rx {
            match msg {
                WorkerMsg::Done(record) => {
                    let line = serde_json::to_string(&record)
                        .map_err(|e| Error::Generation(format!("encoding record: {e}")))?;
                    writeln!(file, "{line}").map_err(Error::io(out))?;
                    completed += 1;
                }
                WorkerMsg::Failed => failed += 1,
                WorkerMsg::Fatal(e) => {
                    stop.store(true, Ordering::Relaxed);
                    if fatal.is_none() {
                        fatal = Some(e);
                    }
                }
            }
        }
        Ok(())
    })?;
    file.flush().map_err(Error::io(out))?;

    if let Some(e) = fatal {
        return Err(e);
    }
    Ok(RunSummary { requested, completed, skipped_existing, failed })
}

fn validate_plan(plan: &RunPlan) -> Result<()> {
    if plan.endpoint.is_empty() {
        return Err(Error::Config("generation endpoint is not set".into()));
    }
    for (name, empty) in [
        ("templates", plan.templates.is_empty()),
        ("occupations", plan.occupations.is_empty()),
        ("setups", plan.setups.is_empty()),
    ] {
        if empty {
            return Err(Error::Config(format!("generation plan has no {name}")));
        }
    }
    if plan.n_samples == 0 {
        return Err(Error::Config("samples per configuration must be at least 1".into()));
    }
    if plan.attempts == 0 {
        return Err(Error::Config("attempts must be at least 1".into()));
    }
    Ok(())
}

fn execute_job(agent: &ureq::Agent, plan: &RunPlan, job: &Job) -> Result<String> {
    let prompt = render_prompt(job.template, job.occupation)?;
    let body = request_body(plan, job, &prompt);
    let mut last_failure = String::new();
    for attempt in 0..plan.attempts {
        if attempt > 0 {
            let delay = plan.backoff_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(delay));
        }
        match send_once(agent, plan, &body, job.template.style) {
            Attempt::Success(text) => return Ok(text),
            Attempt::Transient(reason) => last_failure = reason,
            Attempt::Fatal(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "request for ({}, {}, {}, {}) failed after {} attempts: {last_failure}",
        job.occupation,
        job.template.id,
        job.setup.name(),
        job.sample_idx,
        plan.attempts
    )))
}

fn request_body(plan: &RunPlan, job: &Job, prompt: &str) -> serde_json::Value {
    let params = job.setup.params();
    let mut body = match job.template.style {
        PromptStyle::Statement => serde_json::json!({
            "model": plan.model,
            "prompt": prompt,
            "max_tokens": plan.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
        }),
        PromptStyle::Question => serde_json::json!({
            "model": plan.model,
            "messages": [{ "role": "user", "content": prompt }],
            "max_tokens": plan.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
        }),
    };
    if let Some(k) = params.top_k {
        body["top_k"] = k.into();
    }
    body
}

fn send_once(
    agent: &ureq::Agent,
    plan: &RunPlan,
    body: &serde_json::Value,
    style: PromptStyle,
) -> Attempt {
    let mut request = agent.post(&plan.endpoint);
    if let Some(token) = &plan.token {
        request = request.header("authorization", &format!("Bearer {token}"));
    }
    let response = match request.send_json(body) {
        Ok(response) => response,
        Err(e) => return Attempt::Transient(format!("transport error: {e}")),
    };
    let status = response.status().as_u16();
    match status {
        200..=299 => {}
        401 | 403 => return Attempt::Fatal(Error::AuthFailed { status }),
        _ => return Attempt::Transient(format!("HTTP status {status}")),
    }
    let mut response = response;
    let value: serde_json::Value = match response.body_mut().read_json() {
        Ok(v) => v,
        Err(e) => return Attempt::Transient(format!("unreadable response body: {e}")),
    };
    match extract_text(&value, style) {
        Some(text) => Attempt::Success(text),
        None => Attempt::Transient("response has no generated text".into()),
    }
}

fn extract_text(value: &serde_json::Value, style: PromptStyle) -> Option<String> {
    let choice = value.get("choices")?.get(0)?;
    let text = match style {
        PromptStyle::Statement => choice.get("text")?,
        PromptStyle::Question => choice.get("message")?.get("content")?,
    };
    text.as_str().map(String::from)
}
