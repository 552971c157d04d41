use std::collections::BTreeMap;

use halludet_core::corpus::{distribution, DecompositionStep};
use halludet_core::metrics::confusion;
use halludet_core::normalize::normalize;
use halludet_core::prompts::{format_reply, parse_reply};
use halludet_core::repair::repair;
use halludet_core::{
    ConfusionCounts, DetectorVerdict, Paragraph, QASample, RepairMethod, ReplySchema, Tokenizer,
    WhitespacePunctTokenizer,
};
use proptest::prelude::*;

fn plain_span() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ]{0,20}[A-Za-z0-9]"
}

/// Detector-like output: JSON fragments, list markers, prose and noise.
fn messy_output() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("{".to_string()),
            Just("}".to_string()),
            Just("[".to_string()),
            Just("]".to_string()),
            Just(",".to_string()),
            Just(":".to_string()),
            Just("\"".to_string()),
            Just("'".to_string()),
            Just("\n".to_string()),
            Just("hallucination_list".to_string()),
            Just("Hallucinations:".to_string()),
            Just("1.".to_string()),
            Just("2)".to_string()),
            Just("• ".to_string()),
            Just("- ".to_string()),
            Just("span".to_string()),
            "[a-zA-Z]{1,8}",
            " {1,3}",
        ],
        0..24,
    )
    .prop_map(|parts| parts.concat())
}

proptest! {
    #[test]
    fn repair_is_idempotent_on_its_own_output(text in messy_output()) {
        let first = repair(&text);
        if let Some(v) = &first.verdict {
            let again = repair(&v.to_json());
            prop_assert_eq!(again.method, RepairMethod::Strict);
            prop_assert_eq!(again.verdict.as_ref(), Some(v));
        } else {
            prop_assert_eq!(first.method, RepairMethod::NeedsLlm);
        }
    }

    #[test]
    fn repair_never_invents_words(text in messy_output()) {
        if let Some(v) = repair(&text).verdict {
            for span in v.spans() {
                for word in span.split_whitespace() {
                    prop_assert!(text.contains(word), "{word:?} not in {text:?}");
                }
            }
        }
    }

    #[test]
    fn comma_deletion_keeps_span_order(spans in prop::collection::vec(plain_span(), 1..6)) {
        let v = DetectorVerdict::new(spans.clone()).unwrap();
        let damaged = v.to_json().replace("\",\"", "\" \"");
        let out = repair(&damaged);
        prop_assert_eq!(out.verdict.unwrap().into_spans(), spans);
    }

    #[test]
    fn truncation_keeps_span_order(spans in prop::collection::vec(plain_span(), 1..6)) {
        let v = DetectorVerdict::new(spans.clone()).unwrap();
        let json = v.to_json();
        let damaged = json.trim_end_matches('}').trim_end_matches(']');
        prop_assert_eq!(repair(damaged).verdict.unwrap().into_spans(), spans);
    }

    #[test]
    fn reply_format_round_trips(
        answer in plain_span(),
        wrong in plain_span(),
        reasoning in plain_span(),
        flag in any::<bool>(),
        hallucination in any::<bool>(),
    ) {
        let schema = if hallucination { ReplySchema::Hallucination } else { ReplySchema::Verification };
        let mut fields = BTreeMap::new();
        fields.insert("answer".to_string(), answer);
        fields.insert("reasoning".to_string(), reasoning);
        fields.insert("is_hallucinated".to_string(), flag.to_string());
        if hallucination {
            fields.insert("hallucinated_answer".to_string(), wrong);
        }
        let parsed = parse_reply(&format_reply(schema, &fields), schema).unwrap();
        prop_assert_eq!(&parsed.fields, &fields);
        prop_assert_eq!(parsed.is_hallucinated(), flag);
    }

    #[test]
    fn normalize_is_idempotent(text in "\\PC{0,40}") {
        let once = normalize(&text);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn distribution_mean_is_arithmetic_mean(lens in prop::collection::vec(0usize..60, 1..30), width in 1usize..50) {
        let samples: Vec<QASample> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| QASample {
                id: format!("s{i}"),
                question: "q".into(),
                paragraphs: vec![Paragraph { idx: 0, title: String::new(), text: vec!["w"; n].join(" "), is_supporting: true }],
                answer: "a".into(),
                decomposition: vec![
                    DecompositionStep { question: "x".into(), answer: "y".into() },
                    DecompositionStep { question: "z".into(), answer: "a".into() },
                ],
                answerable: true,
            })
            .collect();
        let d = distribution(&samples, &WhitespacePunctTokenizer, width).unwrap();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        prop_assert!((d.mean.unwrap() - mean).abs() < 1e-9);
        prop_assert_eq!(d.histogram.iter().map(|b| b.count).sum::<usize>(), lens.len());
        prop_assert_eq!(WhitespacePunctTokenizer.count(""), 0);
    }

    #[test]
    fn confusion_ignores_order(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60),
        seed in any::<u64>(),
    ) {
        let (p, a): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let (sp, sa): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
        prop_assert_eq!(confusion(&p, &a).unwrap(), confusion(&sp, &sa).unwrap());
    }

    #[test]
    fn true_positive_never_lowers_recall(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
        let c = ConfusionCounts { tp, fp, tn, fn_ };
        let more = ConfusionCounts { tp: tp + 1, ..c };
        let (before, after) = (c.metrics(), more.metrics());
        prop_assert!(after.recall.unwrap() >= before.recall.unwrap_or(0.0));
        let noisier = ConfusionCounts { fp: fp + 1, ..c };
        prop_assert!(noisier.metrics().precision.unwrap() <= c.metrics().precision.unwrap_or(1.0));
    }
}
