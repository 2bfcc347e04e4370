//! `genlink` command-line pipeline: KB normalization, pretraining corpus,
//! fine-tuning pairs, caches, constrained decoding and evaluation.

mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use genlink::corpus::{write_corpus, CorpusConfig};
use genlink::decoder::{
    train_ngram, BeamConfig, DecodeRequest, ExternScorer, Linker, NgramScorer, OracleScorer,
    Prediction, RandomScorer, Scorer, UniformScorer,
};
use genlink::eval::{evaluate, mean_std, render_table, EvalOptions, EvalReport};
use genlink::kb::{
    deduplicate, load_kb, merge_synonyms, Concept, KbConfig, KnowledgeBase, NameIndex,
};
use genlink::textsim::{fit_tfidf, SelectionPolicy};
use genlink::tokenize::{Tokenizer, TokenizerKind, Vocab};
use genlink::trainprep::{
    decode_request, prepare_pairs, ElSample, IdfScope, PrepConfig, TrainPair,
};
use genlink::trie::TokenTrie;

use output::{write_atomic, write_json, write_jsonl, write_meta};

#[derive(Debug, Parser)]
#[command(
    name = "genlink",
    version,
    about = "Generative entity linking over a knowledge-base name set"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Knowledge-base operations.
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Generate the KB-guided pretraining corpus.
    Corpus(CorpusArgs),
    /// Turn linking samples into fine-tuning pairs.
    Prep(PrepArgs),
    /// Prefix-tree cache operations.
    Trie {
        #[command(subcommand)]
        action: TrieAction,
    },
    /// Reference n-gram scorer.
    Ngram {
        #[command(subcommand)]
        action: NgramAction,
    },
    /// Constrained decoding into ranked concept predictions.
    Decode(DecodeArgs),
    /// Recall@k and sub-population report.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
enum KbAction {
    /// Normalize, merge extra synonyms and deduplicate.
    Build(KbBuildArgs),
}

#[derive(Debug, Subcommand)]
enum TrieAction {
    /// Build the binary trie cache and its vocabulary.
    Build(TrieBuildArgs),
}

#[derive(Debug, Subcommand)]
enum NgramAction {
    /// Train on prepared pairs.
    Train(NgramTrainArgs),
}

#[derive(Debug, Args, Serialize)]
struct KbBuildArgs {
    /// Concepts as JSONL: {"cui", "names", "definition"?}.
    #[arg(long)]
    input: PathBuf,
    /// Extra synonyms, merged into concepts with the same cui.
    #[arg(long)]
    extra: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep names shared between concepts (multi-label KBs).
    #[arg(long)]
    no_dedup: bool,
    #[arg(long)]
    keep_case: bool,
    #[arg(long)]
    keep_symbols: bool,
}

#[derive(Debug, Args, Serialize)]
struct CorpusArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Output JSONL, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    /// Print how often each template was used.
    #[arg(long)]
    histogram: bool,
}

#[derive(Debug, Args, Serialize)]
struct PrepArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Linking samples as JSONL: {"id", "mention", "left_context", "right_context", "gold_cuis"}.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target selection: tfidf, shortest or random.
    #[arg(long, default_value = "tfidf")]
    policy: String,
    /// Seed for the random policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the decoder prompt empty.
    #[arg(long)]
    no_prompt: bool,
    /// Fit idf over the whole name set instead of per concept.
    #[arg(long)]
    global_idf: bool,
    /// Write rejected sample ids and reasons here.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrieBuildArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Token unit: character or whitespace.
    #[arg(long, default_value = "whitespace")]
    tokenizer: String,
    /// Binary cache; the vocabulary goes to `<out>.vocab.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Debug, Args, Serialize)]
struct NgramTrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "whitespace")]
    tokenizer: String,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 0.1)]
    k: f64,
}

#[derive(Debug, Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Linking samples; sources and prompts are built from them.
    #[arg(long, conflicts_with = "pairs", required_unless_present = "pairs")]
    samples: Option<PathBuf>,
    /// Prepared pairs (or any JSONL with "id", "source", "prompt").
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// oracle:PAIRS | ngram:MODEL | extern:COMMAND | uniform | random:SEED
    #[arg(long)]
    scorer: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Token unit; defaults to the n-gram model's, else whitespace.
    #[arg(long)]
    tokenizer: Option<String>,
    /// Prebuilt trie cache from `trie build`.
    #[arg(long)]
    trie: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    length_penalty: f64,
    /// Keep shared names and map them to every owning concept.
    #[arg(long)]
    multi_label: bool,
    /// With --samples: decode without the "<mention> is" prompt.
    #[arg(long)]
    no_prompt: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// One or more prediction files; several give mean and deviation.
    #[arg(long, num_args = 1.., required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    /// Training samples, needed for --subpop.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Knowledge base, needed for --subpop.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Break recall down by sub-population.
    #[arg(long)]
    subpop: bool,
    #[arg(long)]
    multi_label: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GENLINK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("GENLINK_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

/// 1 for bad flag values, 2 for bad input data, 3 for failures inside the
/// toolkit or a scorer.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<genlink::Error>() {
            return if err.is_data_error() { 2 } else { 3 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn parse_tokenizer(raw: &str) -> Result<Tokenizer> {
    let kind: TokenizerKind = raw
        .parse()
        .map_err(|_| usage(format!("unknown tokenizer {raw:?}")))?;
    Ok(Tokenizer::new(kind))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Kb {
            action: KbAction::Build(a),
        } => kb_build(&a),
        Command::Corpus(a) => corpus(&a),
        Command::Prep(a) => prep(&a),
        Command::Trie {
            action: TrieAction::Build(a),
        } => trie_build(&a),
        Command::Ngram {
            action: NgramAction::Train(a),
        } => ngram_train(&a),
        Command::Decode(a) => decode(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn kb_config(no_dedup: bool) -> KbConfig {
    KbConfig {
        dedup_enabled: !no_dedup,
        ..KbConfig::default()
    }
}

/// Load a KB and make it usable for an index: deduplicated unless the
/// caller wants shared names kept.
fn load_concepts(path: &Path, multi_label: bool) -> Result<(Vec<Concept>, NameIndex)> {
    let config = kb_config(multi_label);
    let (concepts, _) =
        load_kb(path, &config).with_context(|| format!("loading KB {}", path.display()))?;
    let concepts = if multi_label {
        concepts
    } else {
        let (deduped, report) = deduplicate(&concepts);
        if report.shared_names > 0 {
            log::warn!(
                "{}: {} shared names resolved; run `kb build` to fix the file",
                path.display(),
                report.shared_names
            );
        }
        deduped
    };
    let index = NameIndex::build(&concepts, config.dedup_enabled)?;
    Ok((concepts, index))
}

fn kb_build(a: &KbBuildArgs) -> Result<()> {
    let config = KbConfig {
        dedup_enabled: !a.no_dedup,
        lowercase: !a.keep_case,
        strip_symbols: !a.keep_symbols,
    };
    let (base, loaded) =
        load_kb(&a.input, &config).with_context(|| format!("loading {}", a.input.display()))?;
    let (merged, merge) = match &a.extra {
        Some(extra) => {
            let (extra, _) =
                load_kb(extra, &config).with_context(|| format!("loading {}", extra.display()))?;
            let (merged, summary) = merge_synonyms(&base, &extra);
            (merged, Some(summary))
        }
        None => (base, None),
    };
    let (concepts, dedup) = if config.dedup_enabled {
        let (c, r) = deduplicate(&merged);
        (c, Some(r))
    } else {
        let mut c = merged;
        c.sort_by(|x, y| x.cui.cmp(&y.cui));
        (c, None)
    };
    let index = NameIndex::build(&concepts, config.dedup_enabled)?;
    write_jsonl(&a.out, &concepts)?;
    write_meta(&a.out, "kb build", None, a)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        load: &'a genlink::kb::LoadSummary,
        merge: Option<genlink::kb::MergeSummary>,
        dedup: Option<genlink::kb::DedupReport>,
        concepts: usize,
        names: usize,
        multi_label_names: bool,
    }
    let summary = Summary {
        load: &loaded,
        merge,
        dedup,
        concepts: concepts.len(),
        names: index.len(),
        multi_label_names: index.is_multi_label(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn corpus(a: &CorpusArgs) -> Result<()> {
    let (concepts, _) = load_kb(&a.kb, &KbConfig::default())
        .with_context(|| format!("loading {}", a.kb.display()))?;
    let config = CorpusConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..Default::default()
    };
    let summary = write_atomic(&a.out, |w| Ok(write_corpus(w, &concepts, &config)?))?;
    write_meta(&a.out, "corpus", Some(a.seed), a)?;
    eprintln!(
        "{} samples from {} concepts",
        summary.samples,
        concepts.len()
    );
    if a.histogram {
        for (id, n) in summary.template_histogram.iter().enumerate() {
            eprintln!("template {id:>2}: {n}");
        }
    }
    Ok(())
}

fn prep(a: &PrepArgs) -> Result<()> {
    let policy = SelectionPolicy::parse(&a.policy, a.seed).map_err(|e| usage(e.to_string()))?;
    let (concepts, index) = load_concepts(&a.kb, false)?;
    let samples: Vec<ElSample> = genlink::jsonl::read(&a.samples)?;
    let idf_scope = if a.global_idf {
        let names: Vec<&str> = index.names().collect();
        IdfScope::Global(fit_tfidf(&names)?)
    } else {
        IdfScope::PerConcept
    };
    let config = PrepConfig {
        policy,
        prompt_enabled: !a.no_prompt,
        idf_scope,
        ..Default::default()
    };
    let kb = KnowledgeBase::new(concepts);
    let (pairs, summary) = prepare_pairs(&samples, &kb, &config)?;
    write_jsonl(&a.out, &pairs)?;
    write_meta(&a.out, "prep", Some(a.seed), a)?;
    if let Some(path) = &a.rejects {
        write_jsonl(path, &summary.rejected)?;
    }
    eprintln!(
        "{} samples: {} kept, {} rejected, {} pairs",
        summary.samples,
        summary.kept,
        summary.rejected.len(),
        summary.pairs
    );
    Ok(())
}

fn vocab_path(trie: &Path) -> PathBuf {
    let mut name = trie.as_os_str().to_owned();
    name.push(".vocab.json");
    PathBuf::from(name)
}

fn trie_build(a: &TrieBuildArgs) -> Result<()> {
    let tokenizer = parse_tokenizer(&a.tokenizer)?;
    let (_, index) = load_concepts(&a.kb, a.no_dedup)?;
    let trie = TokenTrie::build(&index, tokenizer);
    write_atomic(&a.out, |w| Ok(trie.write_binary(w)?))?;
    write_json(&vocab_path(&a.out), &trie.vocab().to_json())?;
    write_meta(&a.out, "trie build", None, a)?;
    eprintln!(
        "{} names, {} nodes, {} tokens, longest name {} tokens",
        trie.name_count(),
        trie.node_count(),
        trie.vocab().len(),
        trie.max_name_tokens()
    );
    Ok(())
}

fn load_trie(path: &Path) -> Result<TokenTrie> {
    let vocab_file = vocab_path(path);
    let raw = std::fs::read_to_string(&vocab_file)
        .with_context(|| format!("reading {}", vocab_file.display()))?;
    let vocab = Vocab::from_json(&serde_json::from_str(&raw)?)?;
    let reader = output::create_reader(path)?;
    TokenTrie::read_binary(reader, vocab).with_context(|| format!("loading {}", path.display()))
}

fn ngram_train(a: &NgramTrainArgs) -> Result<()> {
    let tokenizer = parse_tokenizer(&a.tokenizer)?;
    let pairs: Vec<TrainPair> = genlink::jsonl::read(&a.pairs)?;
    let model = train_ngram(&pairs, tokenizer, a.order, a.k).map_err(|e| match e {
        genlink::Error::InvalidInput(m) if pairs.is_empty() => {
            anyhow::Error::from(genlink::Error::InvalidInput(m))
        }
        genlink::Error::InvalidInput(m) => usage(m),
        other => other.into(),
    })?;
    write_atomic(&a.out, |w| Ok(model.write_binary(w)?))?;
    write_meta(&a.out, "ngram train", None, a)?;
    eprintln!(
        "order {} over {} pairs, {} outcomes",
        model.order(),
        pairs.len(),
        model.outcome_count()
    );
    Ok(())
}

enum ScorerSpec {
    Oracle(PathBuf),
    Ngram(PathBuf),
    Extern(String),
    Uniform,
    Random(u64),
}

fn parse_scorer(raw: &str) -> Result<ScorerSpec> {
    let (kind, arg) = raw.split_once(':').unwrap_or((raw, ""));
    Ok(match (kind, arg) {
        ("oracle", p) if !p.is_empty() => ScorerSpec::Oracle(p.into()),
        ("ngram", p) if !p.is_empty() => ScorerSpec::Ngram(p.into()),
        ("extern", c) if !c.is_empty() => ScorerSpec::Extern(c.to_owned()),
        ("uniform", "") => ScorerSpec::Uniform,
        ("random", s) => ScorerSpec::Random(if s.is_empty() {
            0
        } else {
            s.parse().map_err(|_| usage(format!("bad random scorer seed {s:?}")))?
        }),
        _ => {
            return Err(usage(format!(
                "unknown scorer {raw:?}; expected oracle:PAIRS, ngram:MODEL, extern:COMMAND, uniform or random:SEED"
            )))
        }
    })
}

fn decode(a: &DecodeArgs) -> Result<()> {
    if a.beam == 0 {
        return Err(usage("--beam must be at least 1"));
    }
    let spec = parse_scorer(&a.scorer)?;
    let requested = a.tokenizer.as_deref().map(parse_tokenizer).transpose()?;
    let ngram = match &spec {
        ScorerSpec::Ngram(path) => Some(
            NgramScorer::read_binary(output::create_reader(path)?)
                .with_context(|| format!("loading {}", path.display()))?,
        ),
        _ => None,
    };
    let tokenizer = match (&ngram, requested) {
        (Some(m), Some(t)) if *m.tokenizer() != t => {
            return Err(usage(format!(
                "--tokenizer {} does not match the n-gram model's {}",
                t.kind,
                m.tokenizer().kind
            )))
        }
        (Some(m), _) => *m.tokenizer(),
        (None, Some(t)) => t,
        (None, None) => Tokenizer::new(TokenizerKind::Whitespace),
    };

    let (_, index) = load_concepts(&a.kb, a.multi_label)?;
    let trie = match &a.trie {
        Some(path) => {
            let trie = load_trie(path)?;
            if *trie.tokenizer() != tokenizer {
                return Err(usage(format!(
                    "trie cache uses {} tokens but decoding uses {}",
                    trie.tokenizer().kind,
                    tokenizer.kind
                )));
            }
            if trie.name_count() != index.len() {
                bail!(genlink::Error::Integrity(format!(
                    "trie cache holds {} names but the KB has {}",
                    trie.name_count(),
                    index.len()
                )));
            }
            trie
        }
        None => TokenTrie::build(&index, tokenizer),
    };

    let requests: Vec<DecodeRequest> = match (&a.samples, &a.pairs) {
        (Some(path), _) => {
            let samples: Vec<ElSample> = genlink::jsonl::read(path)?;
            let config = PrepConfig {
                prompt_enabled: !a.no_prompt,
                ..Default::default()
            };
            samples.iter().map(|s| decode_request(s, &config)).collect()
        }
        (None, Some(path)) => genlink::jsonl::read(path)?,
        (None, None) => unreachable!("clap requires one input"),
    };

    let scorer: Box<dyn Scorer> = match spec {
        ScorerSpec::Oracle(path) => {
            let pairs: Vec<TrainPair> = genlink::jsonl::read(&path)?;
            Box::new(OracleScorer::from_pairs(&pairs, &tokenizer))
        }
        ScorerSpec::Ngram(_) => Box::new(ngram.expect("loaded above")),
        ScorerSpec::Extern(command) => Box::new(ExternScorer::spawn(&command, tokenizer)?),
        ScorerSpec::Uniform => Box::new(UniformScorer),
        ScorerSpec::Random(seed) => Box::new(RandomScorer { seed }),
    };
    let config = BeamConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        length_penalty: a.length_penalty,
    };
    let predictions = Linker::new(&trie, &index, config).link_all(&requests, scorer.as_ref())?;
    write_jsonl(&a.out, &predictions)?;
    write_meta(&a.out, "decode", None, a)?;
    eprintln!("{} queries decoded", predictions.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Spread {
    mean: f64,
    std: f64,
}

#[derive(Debug, Serialize)]
struct MultiRunReport {
    runs: Vec<EvalReport>,
    recall_at: BTreeMap<usize, Spread>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let gold: Vec<ElSample> = genlink::jsonl::read(&a.gold)?;
    let subpop_inputs = if a.subpop {
        let (Some(train), Some(kb)) = (&a.train, &a.kb) else {
            return Err(usage("--subpop needs --train and --kb"));
        };
        let train: Vec<ElSample> = genlink::jsonl::read(train)?;
        let (_, index) = load_concepts(kb, a.multi_label)?;
        Some((train, index))
    } else {
        None
    };
    let opts = EvalOptions {
        multi_label: a.multi_label,
        subpop: subpop_inputs.as_ref().map(|(t, i)| (t.as_slice(), i)),
        ..Default::default()
    };
    let mut runs = Vec::with_capacity(a.predictions.len());
    for path in &a.predictions {
        let preds: Vec<Prediction> = genlink::jsonl::read(path)?;
        let report = evaluate(&preds, &gold, &opts)
            .with_context(|| format!("evaluating {}", path.display()))?;
        runs.push(report);
    }
    if runs.len() == 1 {
        print!("{}", render_table(&runs[0]));
        if runs[0].rejected > 0 {
            println!(
                "{} samples without exactly one gold concept were not scored",
                runs[0].rejected
            );
        }
        if let Some(out) = &a.out {
            write_json(out, &runs[0])?;
        }
        return Ok(());
    }
    let mut recall_at = BTreeMap::new();
    for k in &opts.ks {
        let values: Vec<f64> = runs.iter().map(|r| r.recall_at[k]).collect();
        let (mean, std) = mean_std(&values);
        recall_at.insert(*k, Spread { mean, std });
    }
    for (i, (run, path)) in runs.iter().zip(&a.predictions).enumerate() {
        println!("run {} ({})", i + 1, path.display());
        print!("{}", render_table(run));
    }
    for (k, s) in &recall_at {
        println!("R@{k}: {:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std);
    }
    if let Some(out) = &a.out {
        write_json(out, &MultiRunReport { runs, recall_at })?;
    }
    Ok(())
}
