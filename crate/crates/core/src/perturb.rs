//! Training records produced by the perturbation pipeline, their label
//! invariants, branch assignment and dataset statistics.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::QASample;
use crate::normalize::same_answer;
use crate::prompts::{KEY_ANSWER, KEY_IS_HALLUCINATED, KEY_REASONING};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Gold answer checked by the verification prompt.
    Verified,
    /// Gold answer replaced by an unsupported one.
    Perturbed,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Verified => "verified",
            Branch::Perturbed => "perturbed",
        })
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub sample_id: String,
    pub question: String,
    pub context: String,
    /// The answer shown to the detector: gold for verified records, the
    /// perturbed answer otherwise.
    pub answer: String,
    pub reasoning: String,
    pub is_hallucinated: bool,
    pub gold_answer: String,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum Violation {
    PerturbedEqualsGold,
    PerturbedNotFlagged,
    EmptyReasoning,
    EmptyAnswer,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::PerturbedEqualsGold => "perturbed equals gold",
            Violation::PerturbedNotFlagged => "perturbed record not labeled hallucinated",
            Violation::EmptyReasoning => "empty reasoning",
            Violation::EmptyAnswer => "empty answer",
        }
    }
}

impl From<Violation> for &'static str {
    fn from(v: Violation) -> Self {
        v.as_str()
    }
}

impl TryFrom<String> for Violation {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        [
            Violation::PerturbedEqualsGold,
            Violation::PerturbedNotFlagged,
            Violation::EmptyReasoning,
            Violation::EmptyAnswer,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or(s)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Invariants the record breaks; empty means the record is sound.
pub fn validate(record: &PerturbedRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.answer.trim().is_empty() {
        out.push(Violation::EmptyAnswer);
    }
    if record.branch == Branch::Perturbed {
        if same_answer(&record.answer, &record.gold_answer) {
            out.push(Violation::PerturbedEqualsGold);
        }
        if !record.is_hallucinated {
            out.push(Violation::PerturbedNotFlagged);
        }
    }
    if record.reasoning.trim().is_empty() {
        out.push(Violation::EmptyReasoning);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SkipReason {
    #[error("sample is unanswerable")]
    Unanswerable,
    #[error("sample has no gold answer")]
    NoAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPolicy {
    pub p_halu: f64,
    pub include_unanswerable: bool,
}

impl Default for BranchPolicy {
    fn default() -> Self {
        Self { p_halu: 0.5, include_unanswerable: false }
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_draw<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli(`p_halu`) branch choice. Skipped samples consume no draw, so
/// the stream stays aligned with the accepted input order.
pub fn assign_branch<R: RngCore + ?Sized>(
    sample: &QASample,
    rng: &mut R,
    policy: &BranchPolicy,
) -> Result<Branch, SkipReason> {
    if !sample.answerable && !policy.include_unanswerable {
        return Err(SkipReason::Unanswerable);
    }
    if sample.answer.trim().is_empty() {
        return Err(SkipReason::NoAnswer);
    }
    Ok(if unit_draw(rng) < policy.p_halu {
        Branch::Perturbed
    } else {
        Branch::Verified
    })
}

/// Summary of an emitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub hallucinated: usize,
    pub hallucinated_fraction: f64,
    pub non_hallucinated_fraction: f64,
    pub avg_context_tokens: f64,
    pub avg_reasoning_tokens: f64,
}

impl DatasetStats {
    /// `None` for an empty record set.
    pub fn from_records<T: Tokenizer + ?Sized>(records: &[PerturbedRecord], tokenizer: &T) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let n = records.len();
        let hallucinated = records.iter().filter(|r| r.is_hallucinated).count();
        let ctx: usize = records.iter().map(|r| tokenizer.count(&r.context)).sum();
        let reasoning: usize = records.iter().map(|r| tokenizer.count(&r.reasoning)).sum();
        Some(Self {
            total: n,
            hallucinated,
            hallucinated_fraction: hallucinated as f64 / n as f64,
            non_hallucinated_fraction: (n - hallucinated) as f64 / n as f64,
            avg_context_tokens: ctx as f64 / n as f64,
            avg_reasoning_tokens: reasoning as f64 / n as f64,
        })
    }
}

/// Target text of a fine-tuning example, in the verification reply layout.
pub fn finetune_target(record: &PerturbedRecord) -> String {
    let mut out = String::new();
    for (key, value) in [
        (KEY_ANSWER, record.answer.as_str()),
        (KEY_REASONING, record.reasoning.as_str()),
        (KEY_IS_HALLUCINATED, if record.is_hallucinated { "true" } else { "false" }),
    ] {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(key);
        out.push_str(": ");
        out.push_str(value);
    }
    out
}

/// Fine-tuning hyperparameters emitted next to an exported training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub warmup_steps: u32,
    pub weight_decay: f64,
    pub per_device_train_batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub ddp_timeout: u32,
    pub learning_rate: f64,
    pub lr_scheduler_type: String,
    pub num_train_epochs: u32,
    pub bf16: bool,
    pub gpus: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 100,
            weight_decay: 0.1,
            per_device_train_batch_size: 4,
            gradient_accumulation_steps: 4,
            ddp_timeout: 9000,
            learning_rate: 5e-6,
            lr_scheduler_type: "cosine".into(),
            num_train_epochs: 3,
            bf16: true,
            gpus: "8 A100s".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DecompositionStep;
    use alloc::string::ToString;
    use alloc::vec;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(branch: Branch, answer: &str) -> PerturbedRecord {
        PerturbedRecord {
            sample_id: "s".into(),
            question: "Who did the band of the song Creeping Death collaborate with?".into(),
            context: "ctx".into(),
            answer: answer.into(),
            reasoning: "swapped orchestras".into(),
            is_hallucinated: branch == Branch::Perturbed,
            gold_answer: "San Francisco Symphony".into(),
            branch,
        }
    }

    fn sample(answerable: bool) -> QASample {
        QASample {
            id: "s".into(),
            question: "q".into(),
            paragraphs: vec![],
            answer: "a".into(),
            decomposition: vec![
                DecompositionStep { question: "a".into(), answer: "b".into() },
                DecompositionStep { question: "c".into(), answer: "a".into() },
            ],
            answerable,
        }
    }

    #[test]
    fn conformant_records() {
        assert!(validate(&record(Branch::Perturbed, "Berlin Philharmonic")).is_empty());
        assert!(validate(&record(Branch::Verified, "San Francisco Symphony")).is_empty());
    }

    #[test]
    fn perturbed_equal_after_normalization() {
        let mut r = record(Branch::Perturbed, "  berlin  philharmonic ");
        r.gold_answer = "Berlin Philharmonic".into();
        assert_eq!(validate(&r), vec![Violation::PerturbedEqualsGold]);
        assert_eq!(Violation::PerturbedEqualsGold.to_string(), "perturbed equals gold");
    }

    #[test]
    fn empty_reasoning() {
        let mut r = record(Branch::Verified, "San Francisco Symphony");
        r.reasoning = "  ".into();
        assert_eq!(validate(&r), vec![Violation::EmptyReasoning]);
    }

    #[test]
    fn perturbed_must_be_flagged() {
        let mut r = record(Branch::Perturbed, "Berlin Philharmonic");
        r.is_hallucinated = false;
        assert_eq!(validate(&r), vec![Violation::PerturbedNotFlagged]);
    }

    #[test]
    fn violation_serde_is_string() {
        let json = serde_json::to_string(&vec![Violation::EmptyReasoning]).unwrap();
        assert_eq!(json, r#"["empty reasoning"]"#);
        let back: Vec<Violation> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Violation::EmptyReasoning]);
    }

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample(true);
        let never = BranchPolicy { p_halu: 0.0, include_unanswerable: false };
        let always = BranchPolicy { p_halu: 1.0, include_unanswerable: false };
        for _ in 0..1000 {
            assert_eq!(assign_branch(&s, &mut rng, &never), Ok(Branch::Verified));
            assert_eq!(assign_branch(&s, &mut rng, &always), Ok(Branch::Perturbed));
        }
    }

    #[test]
    fn unanswerable_skipped_without_draw() {
        let policy = BranchPolicy::default();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(assign_branch(&sample(false), &mut a, &policy), Err(SkipReason::Unanswerable));
        assert_eq!(a.next_u64(), b.next_u64());
        let incl = BranchPolicy { include_unanswerable: true, ..policy };
        assert!(assign_branch(&sample(false), &mut a, &incl).is_ok());
    }

    #[test]
    fn target_layout() {
        let t = finetune_target(&record(Branch::Verified, "San Francisco Symphony"));
        assert_eq!(t, "answer: San Francisco Symphony\nreasoning: swapped orchestras\nis_hallucinated: false");
    }

    #[test]
    fn stats_fractions() {
        let recs = [
            record(Branch::Perturbed, "x"),
            record(Branch::Verified, "y"),
            record(Branch::Verified, "z"),
            record(Branch::Verified, "w"),
        ];
        let s = DatasetStats::from_records(&recs, &crate::tokenize::WhitespacePunctTokenizer).unwrap();
        assert_eq!(s.total, 4);
        assert_eq!(s.hallucinated_fraction, 0.25);
        assert_eq!(s.non_hallucinated_fraction, 0.75);
        assert_eq!(s.avg_context_tokens, 1.0);
        assert_eq!(s.avg_reasoning_tokens, 2.0);
        assert!(DatasetStats::from_records(&[], &crate::tokenize::WhitespacePunctTokenizer).is_none());
    }

    #[test]
    fn training_config_values() {
        let c = TrainingConfig::default();
        assert_eq!(c.learning_rate, 5e-6);
        assert_eq!(c.num_train_epochs, 3);
        assert_eq!(c.warmup_steps, 100);
        assert_eq!(c.weight_decay, 0.1);
        assert_eq!(c.per_device_train_batch_size, 4);
        assert_eq!(c.gradient_accumulation_steps, 4);
        assert_eq!(c.lr_scheduler_type, "cosine");
    }
}
