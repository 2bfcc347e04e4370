use std::path::PathBuf;
use std::process::Command;

use genlink::decoder::{
    BeamConfig, DecodeRequest, ExternScorer, Linker, Scorer, TableScorer, UniformScorer,
};
use genlink::kb::NameIndex;
use genlink::synth;
use genlink::tokenize::{Tokenizer, TokenizerKind};
use genlink::trie::TokenTrie;
use genlink::Error;

fn stub() -> Option<String> {
    let ok = Command::new("python3")
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false);
    if !ok {
        eprintln!("python3 not available, skipping");
        return None;
    }
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "tests",
        "fixtures",
        "score_stub.py",
    ]
    .iter()
    .collect();
    Some(format!("python3 {}", path.display()))
}

fn requests(n: usize) -> Vec<DecodeRequest> {
    (0..n)
        .map(|i| DecodeRequest {
            id: i.to_string(),
            source: format!("patient with START m{i} END today"),
            prompt: format!("m{i} is"),
        })
        .collect()
}

fn setup(kind: TokenizerKind) -> (TokenTrie, NameIndex) {
    let kb = synth::random_kb(40, 1..=4, 1..=3, 3);
    let index = NameIndex::build(&kb, true).unwrap();
    (TokenTrie::build(&index, Tokenizer::new(kind)), index)
}

fn compare(kind: TokenizerKind, args: &str, reference: &dyn Scorer) {
    let Some(cmd) = stub() else { return };
    let (trie, index) = setup(kind);
    let linker = Linker::new(&trie, &index, BeamConfig::default());
    let reqs = requests(8);
    let bridge = ExternScorer::spawn(&format!("{cmd} {args}"), *trie.tokenizer()).unwrap();
    let via_bridge = linker.link_all(&reqs, &bridge).unwrap();
    let direct = linker.link_all(&reqs, reference).unwrap();
    assert_eq!(via_bridge, direct);
    assert!(bridge.requests_sent() > 0);
}

#[test]
fn echo_server_behaves_like_uniform_scorer() {
    compare(TokenizerKind::Whitespace, "", &UniformScorer);
    compare(TokenizerKind::Character, "", &UniformScorer);
}

#[test]
fn table_server_behaves_like_table_scorer() {
    let (trie, _) = setup(TokenizerKind::Character);
    let entries: Vec<(String, f64)> = trie
        .vocab()
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), -(((i * 7919) % 13) as f64) / 3.0))
        .collect();
    let json = serde_json::to_string(
        &entries
            .iter()
            .cloned()
            .collect::<std::collections::BTreeMap<_, _>>(),
    )
    .unwrap();
    let refs: Vec<(&str, f64)> = entries.iter().map(|(t, s)| (t.as_str(), *s)).collect();
    let table = TableScorer::new(&refs, -2.5);
    compare(TokenizerKind::Character, &format!("'{json}' -2.5"), &table);
}

#[test]
fn server_errors_surface_with_step() {
    let Some(cmd) = stub() else { return };
    let (trie, index) = setup(TokenizerKind::Whitespace);
    let linker = Linker::new(&trie, &index, BeamConfig::default());
    let bridge = ExternScorer::spawn(&cmd, *trie.tokenizer()).unwrap();
    let req = DecodeRequest {
        id: "x".into(),
        source: "<fail> START m END".into(),
        prompt: String::new(),
    };
    match linker.link(&req, &bridge) {
        Err(Error::Scorer { step, message }) => {
            assert_eq!(step, 0);
            assert!(message.contains("refused"), "{message}");
        }
        other => panic!("expected a scorer error, got {other:?}"),
    }
}

#[test]
fn missing_server_is_an_error() {
    let (trie, index) = setup(TokenizerKind::Whitespace);
    let linker = Linker::new(&trie, &index, BeamConfig::default());
    let bridge = ExternScorer::spawn("exit 0", *trie.tokenizer()).unwrap();
    assert!(matches!(
        linker.link(&requests(1)[0], &bridge),
        Err(Error::Scorer { .. })
    ));
}
