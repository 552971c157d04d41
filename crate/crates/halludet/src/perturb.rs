//! Dataset construction: route samples to the verification or
//! hallucination prompt, validate replies, re-ask on bad ones and write
//! the resulting records.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use halludet_core::perturb::{assign_branch, finetune_target, validate, BranchPolicy, TrainingConfig, Violation};
use halludet_core::prompts::{
    parse_reply, render_finetune_input, render_hallucination, render_verification, PromptError,
    KEY_HALLUCINATED_ANSWER, KEY_REASONING,
};
use halludet_core::{Branch, DatasetStats, PerturbedRecord, QASample, ReplySchema, Tokenizer};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{ChatRequest, Gateway, GatewayError};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const QUARANTINE_FILE: &str = "quarantine.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TRAINING_CONFIG_FILE: &str = "training_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Why one generation attempt was not accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptFailure {
    Prompt { message: String },
    Unparseable { message: String },
    Invalid { violations: Vec<Violation> },
    Transport { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("sample {sample_id} rejected after {} attempts", attempts.len())]
pub struct RecordRejected {
    pub sample_id: String,
    pub branch: Branch,
    pub attempts: Vec<AttemptFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Rejected(RecordRejected),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Request for `attempt` (0-based) on `sample` in `branch`. The attempt
/// index keeps re-asks distinct in replay files.
pub fn generation_request(
    sample: &QASample,
    branch: Branch,
    settings: &GenerationSettings,
    attempt: u32,
) -> Result<ChatRequest, PromptError> {
    let prompt = match branch {
        Branch::Verified => render_verification(sample, &sample.answer)?,
        Branch::Perturbed => render_hallucination(sample)?,
    };
    Ok(ChatRequest::from_prompt(&settings.model, &prompt, settings.temperature, settings.max_output_tokens)
        .with_variant(attempt))
}

/// Parses a generator reply into a record and validates it.
pub fn interpret_reply(sample: &QASample, branch: Branch, reply: &str) -> Result<PerturbedRecord, AttemptFailure> {
    let schema = match branch {
        Branch::Verified => ReplySchema::Verification,
        Branch::Perturbed => ReplySchema::Hallucination,
    };
    let parsed = parse_reply(reply, schema).map_err(|e| AttemptFailure::Unparseable { message: e.to_string() })?;
    let field = |k: &str| parsed.get(k).unwrap_or_default().trim().to_string();
    let answer = match branch {
        Branch::Verified => sample.answer.clone(),
        Branch::Perturbed => field(KEY_HALLUCINATED_ANSWER),
    };
    let record = PerturbedRecord {
        sample_id: sample.id.clone(),
        question: sample.question.clone(),
        context: sample.evidence_text(),
        answer,
        reasoning: field(KEY_REASONING),
        is_hallucinated: parsed.is_hallucinated(),
        gold_answer: sample.answer.clone(),
        branch,
    };
    let violations = validate(&record);
    if violations.is_empty() {
        Ok(record)
    } else {
        Err(AttemptFailure::Invalid { violations })
    }
}

/// Generates one record, re-asking up to `budget` times while replies fail
/// to parse or validate. Transport failures end the attempt immediately.
pub fn perturb_one(
    sample: &QASample,
    branch: Branch,
    gateway: &Gateway,
    settings: &GenerationSettings,
    budget: u32,
) -> Result<PerturbedRecord, PerturbError> {
    if budget == 0 {
        return Err(PerturbError::ZeroBudget);
    }
    let mut attempts = Vec::new();
    for attempt in 0..budget {
        let request = generation_request(sample, branch, settings, attempt)?;
        let response = gateway.complete(&request)?;
        match interpret_reply(sample, branch, &response.content) {
            Ok(record) => return Ok(record),
            Err(f) => attempts.push(f),
        }
    }
    Err(PerturbError::Rejected(RecordRejected { sample_id: sample.id.clone(), branch, attempts }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub seed: u64,
    pub policy: BranchPolicy,
    pub budget: u32,
    pub max_in_flight: usize,
    pub reject_fraction_limit: f64,
    pub generation: GenerationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub reason: String,
}

/// Contents of `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub input: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub quarantined: usize,
    pub skipped: usize,
    pub seed: u64,
    pub p_halu: f64,
    pub tokenizer: String,
    /// Token counts come from a stand-in tokenizer unless a BPE vocabulary
    /// was supplied.
    pub token_counts_approximate: bool,
    pub dataset: Option<DatasetStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub records: Vec<PerturbedRecord>,
    /// Verified-branch records whose verifier judged the gold answer wrong.
    pub quarantined: Vec<PerturbedRecord>,
    pub rejects: Vec<RecordRejected>,
    pub skipped: Vec<SkippedSample>,
    pub stats: RunStats,
    /// Set when the run as a whole counts as failed.
    pub failure: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("no input samples")]
    EmptyInput,
    #[error("budget must be at least 1")]
    ZeroBudget,
}

/// Assigns branches sequentially from a generator seeded with
/// `config.seed`, then fans generation out through the gateway in rounds
/// until every sample is accepted or out of budget.
pub fn build_dataset<T: Tokenizer + ?Sized>(
    samples: &[QASample],
    gateway: &Gateway,
    config: &BuildConfig,
    tokenizer: &T,
) -> Result<BuildOutcome, BuildError> {
    if samples.is_empty() {
        return Err(BuildError::EmptyInput);
    }
    if config.budget == 0 {
        return Err(BuildError::ZeroBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for sample in samples {
        match assign_branch(sample, &mut rng, &config.policy) {
            Ok(branch) => jobs.push((sample, branch)),
            Err(reason) => skipped.push(SkippedSample { sample_id: sample.id.clone(), reason: reason.to_string() }),
        }
    }

    let mut failures: Vec<Vec<AttemptFailure>> = vec![Vec::new(); jobs.len()];
    let mut done: Vec<Option<PerturbedRecord>> = vec![None; jobs.len()];
    let mut pending: Vec<usize> = (0..jobs.len()).collect();
    for round in 0..config.budget {
        if pending.is_empty() {
            break;
        }
        let mut asked = Vec::with_capacity(pending.len());
        let mut requests = Vec::with_capacity(pending.len());
        for &j in &pending {
            let (sample, branch) = jobs[j];
            match generation_request(sample, branch, &config.generation, round) {
                Ok(r) => {
                    asked.push(j);
                    requests.push(r);
                }
                Err(e) => failures[j].push(AttemptFailure::Prompt { message: e.to_string() }),
            }
        }
        let responses = gateway.complete_many(&requests, config.max_in_flight);
        let mut next = Vec::new();
        for (j, response) in asked.into_iter().zip(responses) {
            let (sample, branch) = jobs[j];
            match response {
                Ok(resp) => match interpret_reply(sample, branch, &resp.content) {
                    Ok(record) => done[j] = Some(record),
                    Err(f) => {
                        failures[j].push(f);
                        next.push(j);
                    }
                },
                Err(e) => failures[j].push(AttemptFailure::Transport { message: e.to_string() }),
            }
        }
        pending = next;
    }

    let mut records = Vec::new();
    let mut quarantined = Vec::new();
    let mut rejects = Vec::new();
    for (j, (sample, branch)) in jobs.iter().enumerate() {
        match done[j].take() {
            Some(r) if r.branch == Branch::Verified && r.is_hallucinated => quarantined.push(r),
            Some(r) => records.push(r),
            None => rejects.push(RecordRejected {
                sample_id: sample.id.clone(),
                branch: *branch,
                attempts: std::mem::take(&mut failures[j]),
            }),
        }
    }

    let eligible = jobs.len();
    let failure = if records.is_empty() {
        Some("no records accepted".to_string())
    } else if eligible > 0 && rejects.len() as f64 / eligible as f64 > config.reject_fraction_limit {
        Some(format!(
            "rejected {} of {} eligible samples, above the limit of {}",
            rejects.len(),
            eligible,
            config.reject_fraction_limit
        ))
    } else {
        None
    };
    let stats = RunStats {
        input: samples.len(),
        accepted: records.len(),
        rejected: rejects.len(),
        quarantined: quarantined.len(),
        skipped: skipped.len(),
        seed: config.seed,
        p_halu: config.policy.p_halu,
        tokenizer: tokenizer.name().to_string(),
        token_counts_approximate: tokenizer.name() != "bpe",
        dataset: DatasetStats::from_records(&records, tokenizer),
    };
    Ok(BuildOutcome { records, quarantined, rejects, skipped, stats, failure })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
}

/// Writes the dataset, stats, rejects and quarantine files into `dir` and
/// returns their paths.
pub fn write_outputs(outcome: &BuildOutcome, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> =
        [DATASET_FILE, STATS_FILE, REJECTS_FILE, QUARANTINE_FILE].iter().map(|f| dir.join(f)).collect();
    write_jsonl(&paths[0], &outcome.records)?;
    write_json(&paths[1], &outcome.stats)?;
    write_jsonl(&paths[2], &outcome.rejects)?;
    write_jsonl(&paths[3], &outcome.quarantined)?;
    Ok(paths)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> io::Result<Vec<PerturbedRecord>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// Alpaca-style `instruction` / `input` / `output` objects.
    InstructionPairs,
    /// ShareGPT-style `conversations` lists.
    ConversationPairs,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown export format {0:?}; expected instruction_pairs or conversation_pairs")]
pub struct UnknownFormat(pub String);

impl FromStr for ExportFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "instruction_pairs" => Ok(Self::InstructionPairs),
            "conversation_pairs" => Ok(Self::ConversationPairs),
            _ => Err(UnknownFormat(s.to_string())),
        }
    }
}

/// One supervised example per record.
pub fn export_finetune(records: &[PerturbedRecord], format: ExportFormat) -> Vec<Value> {
    records
        .iter()
        .map(|r| {
            let input = render_finetune_input(&r.question, &r.context, &r.answer);
            let target = finetune_target(r);
            match format {
                ExportFormat::InstructionPairs => json!({ "instruction": input, "input": "", "output": target }),
                ExportFormat::ConversationPairs => json!({
                    "conversations": [
                        { "from": "human", "value": input },
                        { "from": "gpt", "value": target },
                    ]
                }),
            }
        })
        .collect()
}

/// Writes `train.jsonl` and `training_config.json` into `dir`.
pub fn write_export(records: &[PerturbedRecord], format: ExportFormat, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let train = dir.join(TRAIN_FILE);
    let config = dir.join(TRAINING_CONFIG_FILE);
    write_jsonl(&train, &export_finetune(records, format))?;
    write_json(&config, &TrainingConfig::default())?;
    Ok(vec![train, config])
}

#[cfg(test)]
mod tests {
    use super::*;
    use halludet_core::corpus::DecompositionStep;
    use halludet_core::Paragraph;

    fn sample() -> QASample {
        QASample {
            id: "s1".into(),
            question: "Who?".into(),
            paragraphs: vec![Paragraph { idx: 0, title: "T".into(), text: "Body.".into(), is_supporting: true }],
            answer: "Gold".into(),
            decomposition: vec![
                DecompositionStep { question: "a".into(), answer: "b".into() },
                DecompositionStep { question: "c".into(), answer: "Gold".into() },
            ],
            answerable: true,
        }
    }

    #[test]
    fn perturbed_reply_equal_to_gold_is_invalid() {
        let reply = "answer: Gold\nhallucinated_answer: gold.\nreasoning: r\nis_hallucinated: true";
        let err = interpret_reply(&sample(), Branch::Perturbed, reply).unwrap_err();
        assert_eq!(err, AttemptFailure::Invalid { violations: vec![Violation::PerturbedEqualsGold] });
    }

    #[test]
    fn verified_reply_keeps_gold_answer() {
        let reply = "answer: Gold\nreasoning: cited\nis_hallucinated: false";
        let r = interpret_reply(&sample(), Branch::Verified, reply).unwrap();
        assert_eq!(r.answer, "Gold");
        assert!(!r.is_hallucinated);
        assert_eq!(r.context, "T\nBody.");
    }

    #[test]
    fn unknown_export_format() {
        assert!("alpaca".parse::<ExportFormat>().is_err());
        assert_eq!("instruction-pairs".parse::<ExportFormat>().unwrap(), ExportFormat::InstructionPairs);
    }

    #[test]
    fn attempt_failure_serializes_violation_names() {
        let f = AttemptFailure::Invalid { violations: vec![Violation::EmptyReasoning] };
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"{"kind":"invalid","violations":["empty reasoning"]}"#);
    }
}
