use std::fs::File;
use std::io::{BufWriter, Write};

use genlink::decoder::{train_ngram, BeamConfig, Linker, NgramScorer, OracleScorer};
use genlink::eval::{evaluate, render_table, EvalOptions, Subpopulation};
use genlink::jsonl;
use genlink::kb::{
    build_name_index, deduplicate, load_kb, merge_synonyms, write_kb, KbConfig, KnowledgeBase,
};
use genlink::synth::{self, MorphologyConfig};
use genlink::tokenize::{Tokenizer, TokenizerKind, Vocab};
use genlink::trainprep::{decode_request, prepare_pairs, synonym_samples, ElSample, PrepConfig};
use genlink::trie::TokenTrie;
use genlink::Error;

#[test]
fn kb_file_round_trip_normalizes_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("kb.jsonl");
    std::fs::write(
        &raw,
        concat!(
            "{\"cui\":\"C2\",\"names\":[\"Reiter's Syndrome\",\"Reactive-Arthritis\"]}\n",
            "\n",
            "{\"cui\":\"C1\",\"names\":[\"Lithium\"],\"definition\":\"An  ALKALI metal.\"}\n",
            "{\"cui\":\"C3\",\"names\":[\"(-)\"]}\n",
        ),
    )
    .unwrap();
    let (concepts, summary) = load_kb(&raw, &KbConfig::default()).unwrap();
    assert_eq!(summary.records, 3);
    assert_eq!(summary.skipped_records, 1);
    let extra = [genlink::kb::Concept::new("C1", &["li"])];
    let (merged, _) = merge_synonyms(&concepts, &extra);
    let (deduped, _) = deduplicate(&merged);
    let index = build_name_index(&deduped, &KbConfig::default()).unwrap();
    assert_eq!(index.concept_of("reiters syndrome"), Some("C2"));
    assert_eq!(index.concept_of("reactivearthritis"), Some("C2"));
    assert_eq!(index.concept_of("li"), Some("C1"));
    assert_eq!(deduped[0].definition.as_deref(), Some("an alkali metal."));

    let out = dir.path().join("norm.jsonl");
    write_kb(BufWriter::new(File::create(&out).unwrap()), &deduped).unwrap();
    let (again, _) = load_kb(&out, &KbConfig::default()).unwrap();
    assert_eq!(again, deduped);
}

#[test]
fn malformed_kb_line_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("kb.jsonl");
    std::fs::write(&raw, "{\"cui\":\"C1\",\"names\":[\"a\"]}\n{oops}\n").unwrap();
    match load_kb(&raw, &KbConfig::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn binary_caches_round_trip_and_decode_identically() {
    let data = synth::morphology_dataset(&MorphologyConfig {
        concepts: 60,
        seed: 2,
        ..Default::default()
    });
    let kb = KnowledgeBase::new(data.kb.clone());
    let index = build_name_index(&data.kb, &KbConfig::default()).unwrap();
    let tok = Tokenizer::new(TokenizerKind::Whitespace);
    let trie = TokenTrie::build(&index, tok);

    let mut buf = Vec::new();
    trie.write_binary(&mut buf).unwrap();
    let vocab = Vocab::from_json(&trie.vocab().to_json()).unwrap();
    let loaded = TokenTrie::read_binary(buf.as_slice(), vocab).unwrap();
    assert_eq!(loaded.names(), trie.names());
    assert_eq!(loaded.node_count(), trie.node_count());
    assert_eq!(loaded.max_name_tokens(), trie.max_name_tokens());
    assert!(TokenTrie::read_binary(&buf[..buf.len() - 3], trie.vocab().clone()).is_err());

    let prep = PrepConfig::default();
    let mut train = data.train.clone();
    train.extend(synonym_samples(&data.kb));
    let (pairs, _) = prepare_pairs(&train, &kb, &prep).unwrap();
    let model = train_ngram(&pairs, tok, 4, 0.01).unwrap();
    let mut bin = Vec::new();
    model.write_binary(&mut bin).unwrap();
    let reloaded = NgramScorer::read_binary(bin.as_slice()).unwrap();
    assert_eq!(reloaded, model);

    let requests: Vec<_> = data.test.iter().map(|s| decode_request(s, &prep)).collect();
    let linker = Linker::new(&trie, &index, BeamConfig::default());
    let a = linker.link_all(&requests, &model).unwrap();
    let b = Linker::new(&loaded, &index, BeamConfig::default())
        .link_all(&requests, &reloaded)
        .unwrap();
    assert_eq!(a, b);
    for p in &a {
        assert!(p.names.iter().all(|n| index.contains(n)));
        assert!(p.cuis.len() <= p.names.len());
    }
}

#[test]
fn oracle_pipeline_through_files_reaches_full_recall() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth::morphology_dataset(&MorphologyConfig {
        concepts: 80,
        seed: 9,
        ..Default::default()
    });
    let kb = KnowledgeBase::new(data.kb.clone());
    let index = build_name_index(&data.kb, &KbConfig::default()).unwrap();
    let prep = PrepConfig::default();
    let (pairs, summary) = prepare_pairs(&data.test, &kb, &prep).unwrap();
    assert!(summary.rejected.is_empty());

    let pairs_path = dir.path().join("pairs.jsonl");
    let mut f = BufWriter::new(File::create(&pairs_path).unwrap());
    jsonl::write_to(&mut f, &pairs).unwrap();
    f.flush().unwrap();
    drop(f);
    let pairs_back: Vec<genlink::trainprep::TrainPair> = jsonl::read(&pairs_path).unwrap();
    assert_eq!(pairs_back, pairs);

    let tok = Tokenizer::new(TokenizerKind::Character);
    let trie = TokenTrie::build(&index, tok);
    let oracle = OracleScorer::from_pairs(&pairs_back, &tok);
    let requests: Vec<_> = data.test.iter().map(|s| decode_request(s, &prep)).collect();
    let preds = Linker::new(&trie, &index, BeamConfig::default())
        .link_all(&requests, &oracle)
        .unwrap();

    let opts = EvalOptions {
        subpop: Some((&data.train, &index)),
        ..Default::default()
    };
    let report = evaluate(&preds, &data.test, &opts).unwrap();
    assert_eq!(report.recall_at[&1], 1.0);
    assert_eq!(report.sample_size, data.test.len());
    let single = report.subpopulations[&Subpopulation::SingleWord].sample_size;
    let multi = report.subpopulations[&Subpopulation::MultiWord].sample_size;
    assert_eq!(single + multi, data.test.len());
    assert!(render_table(&report).contains("Overall"));
}

#[test]
fn samples_with_unknown_concepts_are_rejected() {
    let kb = KnowledgeBase::new(vec![genlink::kb::Concept::new("C1", &["a"])]);
    let samples = vec![
        ElSample {
            id: "1".into(),
            mention: "a".into(),
            left_context: String::new(),
            right_context: String::new(),
            gold_cuis: vec!["C1".into()],
        },
        ElSample {
            id: "2".into(),
            mention: "b".into(),
            left_context: String::new(),
            right_context: String::new(),
            gold_cuis: vec!["C9".into()],
        },
    ];
    let (pairs, summary) = prepare_pairs(&samples, &kb, &PrepConfig::default()).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(summary.rejected.len(), 1);
    assert_eq!(summary.rejected[0].id, "2");
}
