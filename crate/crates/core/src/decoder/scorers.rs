use std::collections::HashMap;

use super::{end_of_name_str, ScoreError, ScoreQuery, Scorer};
use crate::tokenize::Tokenizer;
use crate::trainprep::TrainPair;

/// Every allowed token scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn score_next(&self, _: &ScoreQuery<'_>, allowed: &[&str]) -> Result<Vec<f64>, ScoreError> {
        Ok(vec![0.0; allowed.len()])
    }
}

/// Fixed score per token string, with a default for everything else.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    table: HashMap<String, f64>,
    default: f64,
}

impl TableScorer {
    pub fn new(entries: &[(&str, f64)], default: f64) -> Self {
        Self {
            table: entries.iter().map(|&(t, s)| (t.to_owned(), s)).collect(),
            default,
        }
    }
}

impl Scorer for TableScorer {
    fn score_next(&self, _: &ScoreQuery<'_>, allowed: &[&str]) -> Result<Vec<f64>, ScoreError> {
        Ok(allowed
            .iter()
            .map(|t| self.table.get(*t).copied().unwrap_or(self.default))
            .collect())
    }
}

/// Pseudo-random scores in `(-10, 0]`, a pure function of the seed, the
/// query and the token.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

fn mix(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // separator so ["ab"] and ["a", "b"] differ
    h ^= 0xff;
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Scorer for RandomScorer {
    fn score_next(&self, query: &ScoreQuery<'_>, allowed: &[&str]) -> Result<Vec<f64>, ScoreError> {
        let mut h = splitmix(self.seed) ^ 0xcbf2_9ce4_8422_2325;
        for t in query.source.iter().chain(query.prompt) {
            h = mix(h, t.as_bytes());
        }
        h = mix(h, b"|");
        for t in query.prefix {
            h = mix(h, t.as_bytes());
        }
        Ok(allowed
            .iter()
            .map(|t| {
                let r = splitmix(mix(h, t.as_bytes()));
                -10.0 * (r >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// Memorizing test double: knows the target tokens for each source and
/// scores 0 for the target's next token (the sentinel once the target is
/// spelled out) and -1e9 for everything else.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    lookup: HashMap<Vec<String>, Vec<String>>,
}

const OFF_TARGET: f64 = -1e9;

impl OracleScorer {
    pub fn new(lookup: HashMap<Vec<String>, Vec<String>>) -> Self {
        Self { lookup }
    }

    /// Lookup from prepared pairs; the first pair for a source wins.
    pub fn from_pairs(pairs: &[TrainPair], tokenizer: &Tokenizer) -> Self {
        let mut lookup = HashMap::new();
        for p in pairs {
            lookup
                .entry(tokenizer.tokenize_owned(&p.source))
                .or_insert_with(|| tokenizer.tokenize_owned(&p.target));
        }
        Self { lookup }
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }
}

impl Scorer for OracleScorer {
    fn score_next(&self, query: &ScoreQuery<'_>, allowed: &[&str]) -> Result<Vec<f64>, ScoreError> {
        let target = self.lookup.get(query.source).ok_or_else(|| {
            ScoreError(format!(
                "oracle has no entry for source {:?}",
                query.source.concat()
            ))
        })?;
        let on_path = query.prefix.len() <= target.len()
            && query
                .prefix
                .iter()
                .zip(target)
                .all(|(a, b)| *a == b.as_str());
        let expected = match on_path {
            true if query.prefix.len() == target.len() => Some(end_of_name_str()),
            true => Some(target[query.prefix.len()].as_str()),
            false => None,
        };
        Ok(allowed
            .iter()
            .map(|t| {
                if Some(*t) == expected {
                    0.0
                } else {
                    OFF_TARGET
                }
            })
            .collect())
    }
}
