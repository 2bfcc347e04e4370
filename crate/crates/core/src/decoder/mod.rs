//! Trie-constrained beam search and the scorer contract.
//!
//! The decoder never sees a model. At each step it asks a [`Scorer`] for one
//! log-score per token the trie allows after the current hypothesis, keeps
//! the best `beam_size` unfinished extensions, and sets aside hypotheses that
//! take the end-of-name edge. Finished token paths are detokenized and
//! mapped to concepts through the [`NameIndex`].

mod bridge;
mod ngram;
mod scorers;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bridge::{ExternScorer, ScoreRequest, ScoreResponse};
pub use ngram::{train_ngram, NgramScorer};
pub use scorers::{OracleScorer, RandomScorer, TableScorer, UniformScorer};

use crate::kb::NameIndex;
use crate::tokenize::{Special, TokenId, END_OF_NAME};
use crate::trie::{TokenTrie, TrieCursor};
use crate::{Error, Result};

/// What a scorer gets to condition on.
#[derive(Debug, Clone, Copy)]
pub struct ScoreQuery<'a> {
    /// Encoder-side tokens (context with the marked mention).
    pub source: &'a [String],
    /// Forced decoder prompt tokens; not part of the name.
    pub prompt: &'a [String],
    /// Name tokens decoded so far.
    pub prefix: &'a [&'a str],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ScoreError(pub String);

/// Next-token scoring for constrained decoding.
///
/// Implementations return one finite log-score per entry of `allowed`, in the
/// same order, and must give identical answers for identical arguments.
/// `allowed` may contain [`Special::EndOfName`]'s string. Calls can arrive
/// from several threads at once.
pub trait Scorer: Send + Sync {
    fn score_next(
        &self,
        query: &ScoreQuery<'_>,
        allowed: &[&str],
    ) -> std::result::Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_next(
        &self,
        query: &ScoreQuery<'_>,
        allowed: &[&str],
    ) -> std::result::Result<Vec<f64>, ScoreError> {
        (**self).score_next(query, allowed)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_next(
        &self,
        query: &ScoreQuery<'_>,
        allowed: &[&str],
    ) -> std::result::Result<Vec<f64>, ScoreError> {
        (**self).score_next(query, allowed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Step limit; `None` means the longest name plus its sentinel.
    pub max_len: Option<usize>,
    /// Finished hypotheses are ranked by `log_score / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len: None,
            length_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Token ids after the prompt; ends with the sentinel when finished.
    pub tokens: Vec<TokenId>,
    pub log_score: f64,
    pub cursor: TrieCursor,
    pub finished: bool,
}

impl Hypothesis {
    fn ranking_score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.log_score
        } else {
            self.log_score / (self.tokens.len().max(1) as f64).powf(length_penalty)
        }
    }

    /// Name tokens without the sentinel.
    pub fn name_tokens(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&END_OF_NAME) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn by_rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

struct Candidate {
    parent: usize,
    token: TokenId,
    cursor: TrieCursor,
    score: f64,
}

/// Beam search over the trie. Returns up to `beam_size` finished
/// hypotheses, best first; equal scores are ordered by token ids, which
/// follow lexicographic token order with the sentinel first.
///
/// Finished hypotheses leave the beam. The search ends when the frontier is
/// empty, after `max_len` steps, or once `beam_size` hypotheses have finished
/// and no active one scores at least as well as the worst of them. The last
/// rule only applies while every score seen is non-positive and no length
/// penalty is set; otherwise the search runs until the frontier empties.
pub fn constrained_beam_search(
    source: &[String],
    prompt: &[String],
    trie: &TokenTrie,
    scorer: &dyn Scorer,
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    if config.beam_size == 0 {
        return Err(Error::InvalidInput("beam size must be at least 1".into()));
    }
    if trie.children(TrieCursor::ROOT.node).is_empty() {
        return Err(Error::InvalidInput("trie has no names".into()));
    }
    let k = config.beam_size;
    let max_len = config.max_len.unwrap_or(trie.max_name_tokens() + 1);
    let vocab = trie.vocab();

    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        log_score: 0.0,
        cursor: TrieCursor::ROOT,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    // With unnormalized scores that never exceed zero, a hypothesis can only
    // lose score as it grows, which makes stopping early safe.
    let mut bounded = config.length_penalty == 0.0;

    for step in 0..max_len {
        let mut candidates: Vec<Candidate> = Vec::new();
        for (h_idx, hyp) in active.iter().enumerate() {
            let edges = trie.children(hyp.cursor.node);
            if edges.is_empty() {
                continue;
            }
            let prefix: Vec<&str> = hyp.tokens.iter().map(|&t| vocab.token(t)).collect();
            let allowed: Vec<&str> = edges.iter().map(|e| vocab.token(e.token)).collect();
            let query = ScoreQuery {
                source,
                prompt,
                prefix: &prefix,
            };
            let scores = scorer
                .score_next(&query, &allowed)
                .map_err(|e| Error::Scorer { step, message: e.0 })?;
            if scores.len() != allowed.len() {
                return Err(Error::Scorer {
                    step,
                    message: format!(
                        "{} scores for {} allowed tokens",
                        scores.len(),
                        allowed.len()
                    ),
                });
            }
            for (edge, s) in edges.iter().zip(scores) {
                bounded &= s <= 0.0;
                if !s.is_finite() {
                    return Err(Error::Scorer {
                        step,
                        message: format!(
                            "non-finite score {s} for token {:?}",
                            vocab.token(edge.token)
                        ),
                    });
                }
                candidates.push(Candidate {
                    parent: h_idx,
                    token: edge.token,
                    cursor: TrieCursor {
                        node: edge.child,
                        depth: hyp.cursor.depth + 1,
                    },
                    score: hyp.log_score + s,
                });
            }
        }
        if candidates.is_empty() {
            break;
        }

        let extended = |c: &Candidate| {
            let mut t = Vec::with_capacity(active[c.parent].tokens.len() + 1);
            t.extend_from_slice(&active[c.parent].tokens);
            t.push(c.token);
            t
        };
        let mut ranked: Vec<(Candidate, Vec<TokenId>)> = candidates
            .into_iter()
            .map(|c| {
                let t = extended(&c);
                (c, t)
            })
            .collect();
        ranked.sort_by(|(a, at), (b, bt)| by_rank(a.score, at, b.score, bt));

        let mut next = Vec::with_capacity(k);
        for (c, tokens) in ranked {
            if next.len() == k {
                break;
            }
            let done = c.token == END_OF_NAME;
            let hyp = Hypothesis {
                tokens,
                log_score: c.score,
                cursor: c.cursor,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
        if active.is_empty()
            || (bounded && finished.len() >= k && !can_overtake(&active, &mut finished, k))
        {
            break;
        }
    }

    let lp = config.length_penalty;
    finished.sort_by(|a, b| {
        by_rank(
            a.ranking_score(lp),
            &a.tokens,
            b.ranking_score(lp),
            &b.tokens,
        )
    });
    finished.truncate(k);
    Ok(finished)
}

/// Whether some active hypothesis could still enter the top `k` finished.
fn can_overtake(active: &[Hypothesis], finished: &mut [Hypothesis], k: usize) -> bool {
    finished.sort_by(|a, b| by_rank(a.log_score, &a.tokens, b.log_score, &b.tokens));
    let cutoff = finished[k - 1].log_score;
    active.iter().any(|h| h.log_score >= cutoff)
}

/// Ranked decoder output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(default)]
    pub id: String,
    pub names: Vec<String>,
    pub cuis: Vec<String>,
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Detokenize hypotheses and map names to concepts. `cuis` keeps each
    /// concept once, at the rank of its best name.
    pub fn from_hypotheses(
        id: impl Into<String>,
        hyps: &[Hypothesis],
        trie: &TokenTrie,
        index: &NameIndex,
    ) -> Result<Self> {
        let mut names = Vec::with_capacity(hyps.len());
        let mut scores = Vec::with_capacity(hyps.len());
        let mut cuis: Vec<String> = Vec::new();
        for h in hyps {
            let name = trie.vocab().decode(trie.tokenizer(), h.name_tokens());
            let owners = index.concepts_of(&name);
            if owners.is_empty() {
                return Err(Error::Integrity(format!(
                    "decoded name {name:?} is not in the name index"
                )));
            }
            for cui in owners {
                if !cuis.contains(cui) {
                    cuis.push(cui.clone());
                }
            }
            names.push(name);
            scores.push(h.log_score);
        }
        Ok(Self {
            id: id.into(),
            names,
            cuis,
            scores,
        })
    }
}

/// One decoding request: encoder text and decoder prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub prompt: String,
}

/// Trie, name index and beam settings bundled for repeated decoding.
#[derive(Debug, Clone, Copy)]
pub struct Linker<'a> {
    pub trie: &'a TokenTrie,
    pub index: &'a NameIndex,
    pub config: BeamConfig,
}

impl<'a> Linker<'a> {
    pub fn new(trie: &'a TokenTrie, index: &'a NameIndex, config: BeamConfig) -> Self {
        Self {
            trie,
            index,
            config,
        }
    }

    pub fn link(&self, request: &DecodeRequest, scorer: &dyn Scorer) -> Result<Prediction> {
        let tok = self.trie.tokenizer();
        let source = tok.tokenize_owned(&request.source);
        let prompt = tok.tokenize_owned(&request.prompt);
        let hyps = constrained_beam_search(&source, &prompt, self.trie, scorer, &self.config)?;
        Prediction::from_hypotheses(request.id.clone(), &hyps, self.trie, self.index)
    }

    /// Decode every request in parallel; output order matches input order.
    pub fn link_all(
        &self,
        requests: &[DecodeRequest],
        scorer: &dyn Scorer,
    ) -> Result<Vec<Prediction>> {
        requests.par_iter().map(|r| self.link(r, scorer)).collect()
    }
}

/// The sentinel's string form as seen by scorers.
pub fn end_of_name_str() -> &'static str {
    Special::EndOfName.as_str()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Concept;
    use crate::tokenize::{Tokenizer, TokenizerKind};

    fn setup(concepts: &[Concept]) -> (TokenTrie, NameIndex) {
        let index = NameIndex::build(concepts, true).unwrap();
        let trie = TokenTrie::build(&index, Tokenizer::new(TokenizerKind::Character));
        (trie, index)
    }

    fn decode(trie: &TokenTrie, index: &NameIndex, scorer: &dyn Scorer, k: usize) -> Prediction {
        let linker = Linker::new(
            trie,
            index,
            BeamConfig {
                beam_size: k,
                ..Default::default()
            },
        );
        let req = DecodeRequest {
            id: "q".into(),
            source: "START x END".into(),
            prompt: "x is".into(),
        };
        linker.link(&req, scorer).unwrap()
    }

    #[test]
    fn early_finishers_do_not_cut_off_a_better_path() {
        let names = ["x", "y", "z", "x p", "y p", "t u v w"];
        let trie = TokenTrie::from_names(names, Tokenizer::new(TokenizerKind::Whitespace));
        let source = vec!["s".to_string()];
        let mut lookup = std::collections::HashMap::new();
        lookup.insert(
            source.clone(),
            ["t", "u", "v", "w"].map(String::from).to_vec(),
        );
        let config = BeamConfig {
            beam_size: 2,
            ..Default::default()
        };
        let hyps =
            constrained_beam_search(&source, &[], &trie, &OracleScorer::new(lookup), &config)
                .unwrap();
        assert_eq!(
            trie.vocab().decode(trie.tokenizer(), hyps[0].name_tokens()),
            "t u v w"
        );
        assert_eq!(hyps[0].log_score, 0.0);
    }

    #[test]
    fn favored_path_ranks_first() {
        let (trie, index) = setup(&[Concept::new("C1", &["ab"]), Concept::new("C2", &["cd"])]);
        let scorer = TableScorer::new(&[("c", -0.1), ("a", -2.0)], -1.0);
        let p = decode(&trie, &index, &scorer, 2);
        assert_eq!(p.names, ["cd", "ab"]);
        assert_eq!(p.cuis, ["C2", "C1"]);
    }

    #[test]
    fn uniform_ties_resolved_lexicographically() {
        let (trie, index) = setup(&[
            Concept::new("C1", &["aa"]),
            Concept::new("C2", &["ab"]),
            Concept::new("C3", &["b"]),
        ]);
        let p = decode(&trie, &index, &UniformScorer, 3);
        assert_eq!(p.names, ["aa", "ab", "b"]);
        assert_eq!(p.scores, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn synonyms_collapse_to_one_concept() {
        let (trie, index) = setup(&[
            Concept::new("C1", &["ab", "ac"]),
            Concept::new("C2", &["b"]),
        ]);
        let scorer = TableScorer::new(&[("a", -0.1), ("b", -5.0)], -0.2);
        let p = decode(&trie, &index, &scorer, 3);
        assert_eq!(p.names.len(), 3);
        assert_eq!(p.cuis, ["C1", "C2"]);
    }

    #[test]
    fn multi_label_names_map_to_every_owner() {
        let concepts = [Concept::new("C1", &["x"]), Concept::new("C2", &["x", "y"])];
        let index = NameIndex::build(&concepts, false).unwrap();
        let trie = TokenTrie::build(&index, Tokenizer::new(TokenizerKind::Character));
        let p = decode(&trie, &index, &UniformScorer, 2);
        assert_eq!(p.names, ["x", "y"]);
        assert_eq!(p.cuis, ["C1", "C2"]);
    }

    #[test]
    fn bad_scorer_output_reports_step() {
        struct Short;
        impl Scorer for Short {
            fn score_next(
                &self,
                q: &ScoreQuery<'_>,
                _: &[&str],
            ) -> std::result::Result<Vec<f64>, ScoreError> {
                if q.prefix.is_empty() {
                    Ok(vec![0.0])
                } else {
                    Ok(vec![])
                }
            }
        }
        let (trie, _) = setup(&[Concept::new("C1", &["ab"])]);
        let err =
            constrained_beam_search(&[], &[], &trie, &Short, &BeamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Scorer { step: 1, .. }), "{err}");

        struct Nan;
        impl Scorer for Nan {
            fn score_next(
                &self,
                _: &ScoreQuery<'_>,
                a: &[&str],
            ) -> std::result::Result<Vec<f64>, ScoreError> {
                Ok(vec![f64::NAN; a.len()])
            }
        }
        let err =
            constrained_beam_search(&[], &[], &trie, &Nan, &BeamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Scorer { step: 0, .. }));
    }

    #[test]
    fn empty_trie_and_zero_beam_rejected() {
        let trie = TokenTrie::from_names(std::iter::empty(), Tokenizer::default());
        assert!(
            constrained_beam_search(&[], &[], &trie, &UniformScorer, &BeamConfig::default())
                .is_err()
        );
        let (trie, _) = setup(&[Concept::new("C1", &["ab"])]);
        let cfg = BeamConfig {
            beam_size: 0,
            ..Default::default()
        };
        assert!(constrained_beam_search(&[], &[], &trie, &UniformScorer, &cfg).is_err());
    }

    #[test]
    fn max_len_cuts_search() {
        let (trie, _) = setup(&[Concept::new("C1", &["abc"])]);
        let cfg = BeamConfig {
            max_len: Some(2),
            ..Default::default()
        };
        assert!(
            constrained_beam_search(&[], &[], &trie, &UniformScorer, &cfg)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn length_penalty_prefers_longer_names() {
        let (trie, _) = setup(&[Concept::new("C1", &["a"]), Concept::new("C2", &["bbbb"])]);
        // a: -2 + -1 = -3 over 2 tokens; bbbb: -0.5*4 + -1 = -3 over 5 tokens
        let scorer = TableScorer::new(&[("a", -2.0), ("b", -0.5)], -1.0);
        let raw =
            constrained_beam_search(&[], &[], &trie, &scorer, &BeamConfig::default()).unwrap();
        assert_eq!(raw[0].log_score, raw[1].log_score);
        let cfg = BeamConfig {
            length_penalty: 1.0,
            ..Default::default()
        };
        let pen = constrained_beam_search(&[], &[], &trie, &scorer, &cfg).unwrap();
        assert_eq!(pen[0].name_tokens().len(), 4);
    }
}
