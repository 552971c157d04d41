mod common;

use std::collections::HashMap;

use common::{fixture, worked_sample, synthetic_corpus};
use halludet::corpus::{load_musique, load_ragtruth, parse_musique, write_musique, write_ragtruth};
use halludet_core::corpus::{context_tokens, distribution, DecompositionStep};
use halludet_core::{Paragraph, QASample, WhitespacePunctTokenizer};
use proptest::prelude::*;

#[test]
fn keles_sample_has_two_hop_decomposition() {
    let s = worked_sample("keles");
    let steps: Vec<(&str, &str)> = s.decomposition.iter().map(|d| (d.question.as_str(), d.answer.as_str())).collect();
    assert_eq!(
        steps,
        vec![
            ("What is the place of birth of İsmail Keleş?", "Ankara"),
            ("Who was in charge of Ankara?", "Melih Gökçek"),
        ]
    );
    assert_eq!(s.answer, "Melih Gökçek");
    assert_eq!(s.paragraphs.len(), 2);
}

#[test]
fn truncated_line_is_skipped_with_diagnostic() {
    let loaded = load_musique(&fixture("one_truncated.jsonl")).unwrap();
    assert_eq!(loaded.items.len(), 1);
    assert_eq!(loaded.diagnostics.len(), 1);
    assert_eq!(loaded.diagnostics[0].line, 2);
    assert!(loaded.diagnostics[0].message.starts_with("malformed record"));
}

#[test]
fn invalid_and_duplicate_samples_are_skipped() {
    let good = r#"{"id":"a","question":"q","paragraphs":[{"idx":0,"title":"t","paragraph_text":"x"}],"question_decomposition":[{"question":"1","answer":"2"},{"question":"3","answer":"4"}],"answer":"4"}"#;
    let one_hop = good.replace(r#",{"question":"3","answer":"4"}"#, "").replace("\"a\"", "\"b\"");
    let body = format!("{good}\n{good}\n{one_hop}\n");
    let loaded = parse_musique(body.as_bytes(), std::path::Path::new("mem")).unwrap();
    assert_eq!(loaded.items.len(), 1);
    assert_eq!(loaded.diagnostics.len(), 2);
    assert_eq!(loaded.diagnostics[0].message, "duplicate id");
    assert!(loaded.diagnostics[1].message.contains("need at least 2"));
    assert!(loaded.items[0].answerable, "answerable defaults to true");
}

#[test]
fn ragtruth_fixture_joins_three_sources_by_two_responses() {
    let loaded = load_ragtruth(&fixture("ragtruth_source.jsonl"), &fixture("ragtruth_response.jsonl")).unwrap();
    assert!(loaded.diagnostics.is_empty(), "{:?}", loaded.diagnostics);
    assert_eq!(loaded.items.len(), 6);

    // Independent join over the raw files.
    let sources: HashMap<String, serde_json::Value> = std::fs::read_to_string(fixture("ragtruth_source.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["source_id"].as_str().unwrap().to_string(), v)
        })
        .collect();
    let responses: Vec<serde_json::Value> = std::fs::read_to_string(fixture("ragtruth_response.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let joined: Vec<_> = responses.iter().filter(|r| sources.contains_key(r["source_id"].as_str().unwrap())).collect();
    assert_eq!(joined.len(), loaded.items.len());
    for (case, raw) in loaded.items.iter().zip(joined) {
        assert_eq!(case.case_id, raw["id"].as_str().unwrap());
        let labels = raw["labels"].as_array().unwrap();
        assert_eq!(case.is_hallucinated(), !labels.is_empty());
        for (span, label) in case.gold_spans.iter().zip(labels) {
            assert_eq!(case.span_text(span), label["text"].as_str().unwrap());
        }
    }
    let qa = &loaded.items[0];
    assert_eq!(qa.question, "how long is a marathon");
    assert!(!qa.is_hallucinated());
    assert_eq!(loaded.items[4].context, r#"{"city":"Austin","name":"Blue Cafe","stars":4.5}"#);
    assert_eq!(loaded.items[0].split.as_deref(), Some("test"));
}

#[test]
fn context_tokens_examples() {
    let tok = WhitespacePunctTokenizer;
    let mut s = worked_sample("keles");
    s.paragraphs.clear();
    assert_eq!(context_tokens(&s, &tok), 0);
    s.paragraphs.push(Paragraph { idx: 0, title: String::new(), text: "a b c".into(), is_supporting: true });
    assert_eq!(context_tokens(&s, &tok), 3);
}

/// Tokenizer recount written without the library splitter.
fn recount(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

fn sample_recount(s: &QASample) -> usize {
    s.paragraphs.iter().map(|p| recount(&p.title) + recount(&p.text)).sum()
}

#[test]
fn corpus_mean_matches_recount() {
    let corpus = synthetic_corpus(100, 11);
    let tok = WhitespacePunctTokenizer;
    let lib: Vec<usize> = corpus.iter().map(|s| context_tokens(s, &tok)).collect();
    let oracle: Vec<usize> = corpus.iter().map(sample_recount).collect();
    assert_eq!(lib, oracle);
    let dist = distribution(&corpus, &tok, 10).unwrap();
    let mean = oracle.iter().sum::<usize>() as f64 / oracle.len() as f64;
    assert!((dist.mean.unwrap() - mean).abs() < 1e-12);
    assert_eq!(dist.max, oracle.iter().copied().max());
}

#[test]
fn hundred_sample_histogram_matches_brute_force() {
    let corpus = synthetic_corpus(100, 5);
    let width = 7;
    let dist = distribution(&corpus, &WhitespacePunctTokenizer, width).unwrap();
    let mut brute: HashMap<usize, usize> = HashMap::new();
    for s in &corpus {
        *brute.entry(sample_recount(s) / width * width).or_default() += 1;
    }
    let nonzero: HashMap<usize, usize> =
        dist.histogram.iter().filter(|b| b.count > 0).map(|b| (b.lower, b.count)).collect();
    assert_eq!(nonzero, brute);
    assert!(dist.histogram.iter().all(|b| b.upper - b.lower == width));
    assert_eq!(dist.histogram.iter().map(|b| b.count).sum::<usize>(), 100);
}

fn arb_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.!?'\"{}\\[\\]éİş\\n-]{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn arb_sample() -> impl Strategy<Value = QASample> {
    (
        "[a-z0-9_]{1,12}",
        arb_text(),
        prop::collection::vec((arb_text(), arb_text(), any::<bool>()), 0..5),
        arb_text(),
        prop::collection::vec((arb_text(), arb_text()), 2..5),
        any::<bool>(),
    )
        .prop_map(|(id, question, paras, answer, steps, answerable)| QASample {
            id,
            question,
            paragraphs: paras
                .into_iter()
                .enumerate()
                .map(|(i, (title, text, sup))| Paragraph { idx: i as u32, title, text, is_supporting: sup })
                .collect(),
            answer,
            decomposition: steps.into_iter().map(|(question, answer)| DecompositionStep { question, answer }).collect(),
            answerable,
        })
}

proptest! {
    #[test]
    fn musique_round_trip(samples in prop::collection::vec(arb_sample(), 0..8)) {
        let mut seen = std::collections::HashSet::new();
        let samples: Vec<QASample> = samples.into_iter().filter(|s| seen.insert(s.id.clone())).collect();
        let mut buf = Vec::new();
        write_musique(&mut buf, &samples).unwrap();
        let loaded = parse_musique(buf.as_slice(), std::path::Path::new("mem")).unwrap();
        prop_assert!(loaded.diagnostics.is_empty());
        prop_assert_eq!(&loaded.items, &samples);
        let mut again = Vec::new();
        write_musique(&mut again, &loaded.items).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn adding_a_paragraph_never_lowers_context_tokens(s in arb_sample(), text in arb_text()) {
        let tok = WhitespacePunctTokenizer;
        let before = context_tokens(&s, &tok);
        let mut more = s.clone();
        more.paragraphs.push(Paragraph { idx: 999, title: String::new(), text, is_supporting: false });
        prop_assert!(context_tokens(&more, &tok) >= before);
    }

    #[test]
    fn ragtruth_round_trip(n in 0usize..30) {
        let cases = common::synthetic_cases(n);
        let dir = tempfile::tempdir().unwrap();
        let (src, resp) = (dir.path().join("s.jsonl"), dir.path().join("r.jsonl"));
        write_ragtruth(std::fs::File::create(&src).unwrap(), std::fs::File::create(&resp).unwrap(), &cases).unwrap();
        let loaded = load_ragtruth(&src, &resp).unwrap();
        prop_assert!(loaded.diagnostics.is_empty());
        prop_assert_eq!(loaded.items, cases);
    }
}
