#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use halludet::corpus::load_musique;
use halludet::gateway::{ChatRequest, Gateway, ManualClock, ReplayEntry, Scripted, ScriptedBackend};
use halludet::perturb::{generation_request, GenerationSettings};
use halludet_core::corpus::DecompositionStep;
use halludet_core::{Branch, GoldSpan, Paragraph, QASample, RagTruthCase, TaskType};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn worked_samples() -> Vec<QASample> {
    load_musique(&fixture("worked_samples.jsonl")).unwrap().items
}

pub fn worked_sample(id_suffix: &str) -> QASample {
    worked_samples().into_iter().find(|s| s.id.ends_with(id_suffix)).unwrap()
}

pub fn settings() -> GenerationSettings {
    GenerationSettings { model: "generator".into(), temperature: 0.7, max_output_tokens: 256 }
}

pub fn detector_settings() -> GenerationSettings {
    GenerationSettings { model: "detector".into(), temperature: 0.0, max_output_tokens: 256 }
}

pub fn fixer_settings() -> GenerationSettings {
    GenerationSettings { model: "fixer".into(), temperature: 0.0, max_output_tokens: 256 }
}

/// A gateway that never sleeps for real.
pub fn gateway(backend: Arc<ScriptedBackend>) -> Gateway {
    Gateway::new(backend).with_clock(Arc::new(ManualClock::new()))
}

const WORDS: [&str; 12] = [
    "river", "castle", "born", "mayor", "city", "album", "band", "island", "navigator", "council", "river", "song",
];

/// Deterministic synthetic multi-hop corpus. Every 10th sample is
/// unanswerable.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<QASample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let paragraphs = (0..2 + (rng.next_u32() % 3))
                .map(|p| {
                    let len = 3 + (rng.next_u32() % 40) as usize;
                    let text: Vec<&str> = (0..len).map(|_| WORDS[(rng.next_u32() % 12) as usize]).collect();
                    Paragraph { idx: p, title: format!("Title {i}-{p}"), text: format!("{}.", text.join(" ")), is_supporting: p < 2 }
                })
                .collect();
            let hops = 2 + (rng.next_u32() % 3) as usize;
            QASample {
                id: format!("s{i:05}"),
                question: format!("Question number {i}?"),
                paragraphs,
                answer: format!("Answer {i}"),
                decomposition: (0..hops)
                    .map(|h| DecompositionStep { question: format!("sub {h}"), answer: format!("part {h}") })
                    .collect(),
                answerable: i % 10 != 9,
            }
        })
        .collect()
}

fn line_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

/// Scripted generator: a well-formed reply for either prompt, derived from
/// the request alone. Questions containing `[bad]` get a perturbed answer
/// equal to the gold one; `[doubt]` makes the verifier reject the gold
/// answer.
pub fn generator_reply(request: &ChatRequest) -> String {
    let prompt = request.prompt_text();
    let question = line_after(&prompt, "Question: ").unwrap_or_default();
    if let Some(gold) = line_after(&prompt, "Gold Answer: ") {
        let perturbed = if question.contains("[bad]") { gold.to_string() } else { format!("Not {gold}") };
        format!(
            "answer: {gold}\nhallucinated_answer: {perturbed}\nreasoning: Replaced {gold} with {perturbed}.\nis_hallucinated: true"
        )
    } else {
        let answer = line_after(&prompt, "Answer: ").unwrap_or_default();
        let doubt = question.contains("[doubt]");
        format!(
            "answer: {answer}\nreasoning: The evidence {} {answer}.\nis_hallucinated: {doubt}",
            if doubt { "contradicts" } else { "supports" }
        )
    }
}

pub fn generator_backend() -> ScriptedBackend {
    ScriptedBackend::new(|req, _| Scripted::ok(generator_reply(req)))
}

/// Replay entries covering both branches and every attempt for `samples`.
pub fn replay_entries(samples: &[QASample], settings: &GenerationSettings, budget: u32) -> Vec<ReplayEntry> {
    let mut out = Vec::new();
    for s in samples {
        for branch in [Branch::Verified, Branch::Perturbed] {
            for attempt in 0..budget {
                let Ok(req) = generation_request(s, branch, settings, attempt) else { continue };
                out.push(ReplayEntry {
                    key: req.fingerprint(),
                    model: req.model.clone(),
                    content: generator_reply(&req),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                });
            }
        }
    }
    out
}

pub fn write_replay(path: &Path, entries: &[ReplayEntry]) {
    let body: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

/// `n` benchmark cases over all three task types. Every third case is
/// annotated with one hallucinated span.
pub fn synthetic_cases(n: usize) -> Vec<RagTruthCase> {
    (0..n)
        .map(|i| {
            let task_type = [TaskType::QA, TaskType::Summary, TaskType::Data2Txt][i % 3];
            let response = format!("Response for case-{i:04} mentions the harbor and {} ships.", i * 3);
            let gold_spans = if i % 3 == 0 {
                let start = response.find("harbor").unwrap();
                vec![GoldSpan { start, end: start + "harbor".len(), label: "Evident Conflict".into() }]
            } else {
                Vec::new()
            };
            RagTruthCase {
                case_id: format!("case-{i:04}"),
                task_type,
                context: format!("Source document {i} about a harbor."),
                question: if task_type == TaskType::QA { format!("What about case {i}?") } else { String::new() },
                response,
                gold_spans,
                model_name: "m".into(),
                split: Some("test".into()),
            }
        })
        .collect()
}

/// Case id mentioned in a detection prompt.
pub fn case_id_in(request: &ChatRequest) -> Option<String> {
    let text = request.prompt_text();
    let at = text.find("case-")?;
    Some(text[at..at + 9].to_string())
}

/// Detector that returns exactly the gold spans of each case.
pub fn oracle_detector(cases: &[RagTruthCase]) -> ScriptedBackend {
    let gold: HashMap<String, Vec<String>> =
        cases.iter().map(|c| (c.case_id.clone(), c.gold_spans.iter().map(|s| c.span_text(s)).collect())).collect();
    ScriptedBackend::new(move |req, _| {
        let spans = case_id_in(req).and_then(|id| gold.get(&id).cloned()).unwrap_or_default();
        Scripted::ok(serde_json::json!({ "hallucination_list": spans }).to_string())
    })
}
