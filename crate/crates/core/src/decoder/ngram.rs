//! Add-k smoothed n-gram scorer trained on `mention SEP target END_OF_NAME`
//! sequences. A desk-scale stand-in for a trained seq2seq model.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use super::{end_of_name_str, ScoreError, ScoreQuery, Scorer};
use crate::corpus::Markers;
use crate::tokenize::{Tokenizer, TokenizerKind};
use crate::trainprep::TrainPair;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GNGM";
const VERSION: u32 = 1;

const UNK: u32 = 0;
const BOS: u32 = 1;
const SEP: u32 = 2;
const EON: u32 = 3;
const RESERVED: [&str; 4] = ["<unk>", "<bos>", "<sep>", "<eon>"];

#[derive(Debug, Clone, PartialEq)]
pub struct NgramScorer {
    order: usize,
    k: f64,
    tokenizer: Tokenizer,
    markers: Markers,
    /// id -> token; the first four ids are reserved.
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    ngrams: HashMap<Vec<u32>, u32>,
    histories: HashMap<Vec<u32>, u32>,
}

/// Count n-grams over every pair. The mention is read back from the
/// marked span of the pair's source.
pub fn train_ngram(
    pairs: &[TrainPair],
    tokenizer: Tokenizer,
    order: usize,
    k: f64,
) -> Result<NgramScorer> {
    if order < 1 {
        return Err(Error::InvalidInput(
            "n-gram order must be at least 1".into(),
        ));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "smoothing constant must be positive, got {k}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let markers = Markers::default();
    let mut sequences: Vec<(Vec<&str>, Vec<&str>)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        let mention = markers.extract(&p.source).ok_or_else(|| {
            Error::InvalidInput(format!("pair {}: source has no marked mention", p.id))
        })?;
        sequences.push((tokenizer.tokenize(mention), tokenizer.tokenize(&p.target)));
    }
    let mut content: Vec<&str> = sequences
        .iter()
        .flat_map(|(m, t)| m.iter().chain(t.iter()).copied())
        .collect();
    content.sort_unstable();
    content.dedup();
    let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    vocab.extend(content.into_iter().map(str::to_owned));
    let index = content_index(&vocab);

    let mut ngrams: HashMap<Vec<u32>, u32> = HashMap::new();
    for (mention, target) in &sequences {
        let mut seq = vec![BOS; order - 1];
        seq.extend(mention.iter().map(|t| index[*t]));
        seq.push(SEP);
        seq.extend(target.iter().map(|t| index[*t]));
        seq.push(EON);
        for w in seq.windows(order) {
            *ngrams.entry(w.to_vec()).or_default() += 1;
        }
    }
    Ok(NgramScorer::assemble(
        order, k, tokenizer, markers, vocab, index, ngrams,
    ))
}

fn content_index(vocab: &[String]) -> HashMap<String, u32> {
    vocab
        .iter()
        .enumerate()
        .skip(RESERVED.len())
        .map(|(i, t)| (t.clone(), i as u32))
        .collect()
}

impl NgramScorer {
    fn assemble(
        order: usize,
        k: f64,
        tokenizer: Tokenizer,
        markers: Markers,
        vocab: Vec<String>,
        index: HashMap<String, u32>,
        ngrams: HashMap<Vec<u32>, u32>,
    ) -> Self {
        let mut histories: HashMap<Vec<u32>, u32> = HashMap::new();
        for (gram, &c) in &ngrams {
            *histories.entry(gram[..order - 1].to_vec()).or_default() += c;
        }
        Self {
            order,
            k,
            tokenizer,
            markers,
            vocab,
            index,
            ngrams,
            histories,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Number of predictable outcomes: every id except the start padding.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() - 1
    }

    fn id_of(&self, token: &str) -> u32 {
        if token == end_of_name_str() {
            EON
        } else {
            self.index.get(token).copied().unwrap_or(UNK)
        }
    }

    /// `P(next | history)` where `history` holds the previous `order - 1`
    /// ids.
    fn prob(&self, history: &[u32], next: u32) -> f64 {
        let mut key = Vec::with_capacity(self.order);
        key.extend_from_slice(history);
        key.push(next);
        let c = self.ngrams.get(&key).copied().unwrap_or(0) as f64;
        let h = self.histories.get(history).copied().unwrap_or(0) as f64;
        (c + self.k) / (h + self.k * self.outcome_count() as f64)
    }

    /// Conditional distribution over every outcome id after `history`
    /// (token strings, padded on the left with start markers).
    pub fn distribution(&self, history: &[&str]) -> Vec<f64> {
        let h = self.history_ids(history.iter().map(|t| self.id_of(t)));
        (0..self.vocab.len() as u32)
            .filter(|&id| id != BOS)
            .map(|id| self.prob(&h, id))
            .collect()
    }

    fn history_ids(&self, seq: impl Iterator<Item = u32>) -> Vec<u32> {
        let n = self.order - 1;
        let mut h: Vec<u32> = vec![BOS; n];
        for id in seq {
            if n > 0 {
                h.remove(0);
                h.push(id);
            }
        }
        h
    }

    /// Log-probability of each candidate after `mention SEP prefix`.
    pub fn score_tokens(&self, mention: &[&str], prefix: &[&str], allowed: &[&str]) -> Vec<f64> {
        let seq = mention
            .iter()
            .map(|t| self.id_of(t))
            .chain(std::iter::once(SEP))
            .chain(prefix.iter().map(|t| self.id_of(t)));
        let h = self.history_ids(seq);
        allowed
            .iter()
            .map(|t| self.prob(&h, self.id_of(t)).ln())
            .collect()
    }

    /// `GNGM`, version, tokenizer kind, order, k, vocabulary (count then
    /// length-prefixed UTF-8 tokens), then the n-gram table (count then
    /// `order` ids and a count per entry, sorted). Little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.tokenizer.kind.code()])?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
        for t in &self.vocab {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        let sorted: BTreeMap<&Vec<u32>, u32> = self.ngrams.iter().map(|(g, &c)| (g, c)).collect();
        w.write_all(&(sorted.len() as u64).to_le_bytes())?;
        for (gram, c) in sorted {
            for id in gram {
                w.write_all(&id.to_le_bytes())?;
            }
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("n-gram model: {m}"));
        let io = |e: std::io::Error| Error::Format(format!("n-gram model: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        if read_u32(&mut r).map_err(io)? != VERSION {
            return Err(bad("unsupported version".into()));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind).map_err(io)?;
        let kind = TokenizerKind::from_code(kind[0])
            .ok_or_else(|| bad("unknown tokenizer kind".into()))?;
        let order = read_u32(&mut r).map_err(io)? as usize;
        let mut kb = [0u8; 8];
        r.read_exact(&mut kb).map_err(io)?;
        let k = f64::from_le_bytes(kb);
        if order < 1 || k.is_nan() || k <= 0.0 {
            return Err(bad(format!("bad order {order} or smoothing {k}")));
        }
        let n_vocab = read_u32(&mut r).map_err(io)? as usize;
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let len = read_u32(&mut r).map_err(io)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(io)?;
            vocab.push(String::from_utf8(buf).map_err(|e| bad(e.to_string()))?);
        }
        if vocab.len() < RESERVED.len() || vocab.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(bad("reserved tokens missing".into()));
        }
        let n_grams = read_u64(&mut r).map_err(io)?;
        let mut ngrams = HashMap::new();
        for _ in 0..n_grams {
            let mut gram = Vec::with_capacity(order);
            for _ in 0..order {
                let id = read_u32(&mut r).map_err(io)?;
                if id as usize >= vocab.len() {
                    return Err(bad(format!("token id {id} out of range")));
                }
                gram.push(id);
            }
            let c = read_u32(&mut r).map_err(io)?;
            ngrams.insert(gram, c);
        }
        let index = content_index(&vocab);
        Ok(Self::assemble(
            order,
            k,
            Tokenizer::new(kind),
            Markers::default(),
            vocab,
            index,
            ngrams,
        ))
    }
}

impl Scorer for NgramScorer {
    fn score_next(
        &self,
        query: &ScoreQuery<'_>,
        allowed: &[&str],
    ) -> std::result::Result<Vec<f64>, ScoreError> {
        let source = self.tokenizer.detokenize(query.source);
        let mention = self
            .markers
            .extract(&source)
            .ok_or_else(|| ScoreError("source has no marked mention".into()))?;
        let mention = self.tokenizer.tokenize(mention);
        Ok(self.score_tokens(&mention, query.prefix, allowed))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
