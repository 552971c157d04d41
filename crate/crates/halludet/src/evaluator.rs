//! Runs a detector over benchmark cases and scores its response-level
//! verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use halludet_core::metrics::classify;
use halludet_core::prompts::{render_detection, render_json_fix, PromptError};
use halludet_core::repair::{accept_llm_fix, repair_with_config, RepairConfig, RepairNote};
use halludet_core::{ConfusionCounts, Metrics, RagTruthCase, RepairMethod, RepairOutcome, TaskType};
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::perturb::GenerationSettings;

/// How a case without a usable verdict is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Counted as a negative prediction.
    #[default]
    NotFlagged,
    /// Left out of the confusion counts.
    Excluded,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub detector: GenerationSettings,
    pub fixer: GenerationSettings,
    pub allow_llm_fix: bool,
    /// `None` keeps every task type.
    pub task_types: Option<BTreeSet<TaskType>>,
    pub failure_policy: FailurePolicy,
    pub max_in_flight: usize,
    pub span_overlap: bool,
    pub repair: RepairConfig,
}

impl EvalOptions {
    pub fn new(detector: GenerationSettings, fixer: GenerationSettings) -> Self {
        Self {
            detector,
            fixer,
            allow_llm_fix: true,
            task_types: None,
            failure_policy: FailurePolicy::NotFlagged,
            max_in_flight: 4,
            span_overlap: false,
            repair: RepairConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub case_id: String,
    pub task_type: TaskType,
    /// `None` when no verdict was obtained.
    pub predicted: Option<bool>,
    pub actual: bool,
    /// Outcome of deterministic repair, or `llm` when the fix prompt
    /// recovered the verdict. `None` if the detector call itself failed.
    pub method: Option<RepairMethod>,
    pub spans: Vec<String>,
    pub escalated: bool,
    pub failed: bool,
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<RepairNote>,
    /// Share of predicted spans overlapping a gold span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// Deterministic repair outcomes, keyed by method name.
    pub repair_method_histogram: BTreeMap<String, usize>,
    pub escalations: usize,
    pub llm_recovered: usize,
    pub failed: usize,
    pub excluded: usize,
    pub failure_policy: FailurePolicy,
    pub per_case: Vec<CaseTrace>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no cases left after task-type filtering")]
    NoCases,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmFixError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("fix reply is still not valid JSON")]
    UnrepairableOutput { reply: String },
}

pub fn fix_request(raw: &str, settings: &GenerationSettings) -> Result<ChatRequest, PromptError> {
    let prompt = render_json_fix(raw)?;
    Ok(ChatRequest::from_prompt(&settings.model, &prompt, settings.temperature, settings.max_output_tokens))
}

/// One round of the JSON-fix prompt over `raw`, strict-parsing the reply.
pub fn repair_with_llm(raw: &str, gateway: &Gateway, settings: &GenerationSettings) -> Result<RepairOutcome, LlmFixError> {
    let reply = gateway.complete(&fix_request(raw, settings)?)?;
    match accept_llm_fix(&reply.content) {
        Some(v) => Ok(RepairOutcome { verdict: Some(v), method: RepairMethod::Llm, trace: Vec::new() }),
        None => Err(LlmFixError::UnrepairableOutput { reply: reply.content }),
    }
}

pub fn detection_request(case: &RagTruthCase, settings: &GenerationSettings) -> Result<ChatRequest, PromptError> {
    let prompt = render_detection(&case.context, &case.question, &case.response)?;
    Ok(ChatRequest::from_prompt(&settings.model, &prompt, settings.temperature, settings.max_output_tokens))
}

fn failed_trace(case: &RagTruthCase, method: Option<RepairMethod>, error: String) -> CaseTrace {
    CaseTrace {
        case_id: case.case_id.clone(),
        task_type: case.task_type,
        predicted: None,
        actual: case.is_hallucinated(),
        method,
        spans: Vec::new(),
        escalated: false,
        failed: true,
        excluded: false,
        error: Some(error),
        trace: Vec::new(),
        span_overlap: None,
    }
}

/// Detects, repairs, optionally escalates, and scores every case kept by
/// the task-type filter. Results follow case order.
pub fn evaluate(cases: &[RagTruthCase], gateway: &Gateway, options: &EvalOptions) -> Result<EvalReport, EvalError> {
    let kept: Vec<&RagTruthCase> = cases
        .iter()
        .filter(|c| options.task_types.as_ref().is_none_or(|set| set.contains(&c.task_type)))
        .collect();
    if kept.is_empty() {
        return Err(EvalError::NoCases);
    }

    let mut traces: Vec<Option<CaseTrace>> = vec![None; kept.len()];
    let mut asked = Vec::new();
    let mut requests = Vec::new();
    for (i, case) in kept.iter().enumerate() {
        match detection_request(case, &options.detector) {
            Ok(r) => {
                asked.push(i);
                requests.push(r);
            }
            Err(e) => traces[i] = Some(failed_trace(case, None, e.to_string())),
        }
    }
    let responses = gateway.complete_many(&requests, options.max_in_flight);

    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut outcomes: Vec<Option<(RepairOutcome, String)>> = vec![None; kept.len()];
    for (i, response) in asked.into_iter().zip(responses) {
        match response {
            Ok(resp) => {
                let outcome = repair_with_config(&resp.content, &options.repair);
                *histogram.entry(outcome.method.as_str().to_string()).or_default() += 1;
                outcomes[i] = Some((outcome, resp.content));
            }
            Err(e) => traces[i] = Some(failed_trace(kept[i], None, e.to_string())),
        }
    }

    let needs_llm: Vec<usize> = (0..kept.len())
        .filter(|&i| matches!(&outcomes[i], Some((o, _)) if o.method == RepairMethod::NeedsLlm))
        .collect();
    let mut escalation_replies: BTreeMap<usize, Result<String, String>> = BTreeMap::new();
    if options.allow_llm_fix && !needs_llm.is_empty() {
        let mut idx = Vec::new();
        let mut fix_requests = Vec::new();
        for &i in &needs_llm {
            let raw = &outcomes[i].as_ref().expect("outcome present").1;
            match fix_request(raw, &options.fixer) {
                Ok(r) => {
                    idx.push(i);
                    fix_requests.push(r);
                }
                Err(e) => {
                    escalation_replies.insert(i, Err(e.to_string()));
                }
            }
        }
        for (i, r) in idx.into_iter().zip(gateway.complete_many(&fix_requests, options.max_in_flight)) {
            escalation_replies.insert(i, r.map(|r| r.content).map_err(|e| e.to_string()));
        }
    }

    let mut llm_recovered = 0;
    for (i, case) in kept.iter().enumerate() {
        if traces[i].is_some() {
            continue;
        }
        let (outcome, _) = outcomes[i].take().expect("outcome present");
        let escalated = escalation_replies.contains_key(&i);
        let mut method = outcome.method;
        let mut verdict = outcome.verdict;
        let mut error = None;
        if let Some(reply) = escalation_replies.remove(&i) {
            match reply {
                Ok(text) => match accept_llm_fix(&text) {
                    Some(v) => {
                        verdict = Some(v);
                        method = RepairMethod::Llm;
                        llm_recovered += 1;
                    }
                    None => error = Some("fix reply is still not valid JSON".to_string()),
                },
                Err(e) => error = Some(e),
            }
        } else if verdict.is_none() {
            error = Some("output needs LLM repair".to_string());
        }
        let trace = match verdict {
            Some(v) => {
                let predicted = classify(&v);
                let spans = v.into_spans();
                CaseTrace {
                    case_id: case.case_id.clone(),
                    task_type: case.task_type,
                    predicted: Some(predicted),
                    actual: case.is_hallucinated(),
                    method: Some(method),
                    span_overlap: options.span_overlap.then(|| span_overlap(case, &spans)).flatten(),
                    spans,
                    escalated,
                    failed: false,
                    excluded: false,
                    error: None,
                    trace: outcome.trace,
                }
            }
            None => {
                let mut t = failed_trace(case, Some(method), error.unwrap_or_default());
                t.escalated = escalated;
                t.trace = outcome.trace;
                t
            }
        };
        traces[i] = Some(trace);
    }

    let mut counts = ConfusionCounts::default();
    let mut failed = 0;
    let mut excluded = 0;
    let mut per_case: Vec<CaseTrace> = traces.into_iter().map(|t| t.expect("every case traced")).collect();
    for t in &mut per_case {
        let predicted = match t.predicted {
            Some(p) => p,
            None => {
                failed += 1;
                match options.failure_policy {
                    FailurePolicy::NotFlagged => false,
                    FailurePolicy::Excluded => {
                        t.excluded = true;
                        excluded += 1;
                        continue;
                    }
                }
            }
        };
        counts.record(predicted, t.actual);
    }
    let escalations = per_case.iter().filter(|t| t.escalated).count();
    Ok(EvalReport {
        cases: per_case.len(),
        counts,
        metrics: counts.metrics(),
        repair_method_histogram: histogram,
        escalations,
        llm_recovered,
        failed,
        excluded,
        failure_policy: options.failure_policy,
        per_case,
    })
}

/// Share of predicted spans that overlap a gold span, locating each
/// predicted span by its first occurrence in the response. `None` when
/// nothing was predicted.
pub fn span_overlap(case: &RagTruthCase, predicted: &[String]) -> Option<f64> {
    if predicted.is_empty() {
        return None;
    }
    let hits = predicted
        .iter()
        .filter(|span| {
            let Some(byte) = case.response.find(span.as_str()) else {
                return false;
            };
            let start = case.response[..byte].chars().count();
            let end = start + span.chars().count();
            case.gold_spans.iter().any(|g| g.start < end && start < g.end)
        })
        .count();
    Some(hits as f64 / predicted.len() as f64)
}

/// Per-case rows as CSV.
pub fn write_csv<W: io::Write>(report: &EvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "task_type", "predicted", "actual", "method", "failed", "excluded", "spans"])?;
    for t in &report.per_case {
        let predicted = t.predicted.map(|p| p.to_string()).unwrap_or_default();
        let method = t.method.map(|m| m.as_str()).unwrap_or("");
        w.write_record([
            t.case_id.as_str(),
            t.task_type.as_str(),
            &predicted,
            &t.actual.to_string(),
            method,
            &t.failed.to_string(),
            &t.excluded.to_string(),
            &t.spans.join(" | "),
        ])?;
    }
    w.flush()?;
    Ok(())
}
