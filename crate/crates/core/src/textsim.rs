//! Character 3-gram TF-IDF vectors, cosine similarity, and the target-name
//! selection policies used to build fine-tuning pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scores within this distance of the best are treated as ties.
pub const TIE_EPSILON: f64 = 1e-12;

/// Character 3-grams of the lowercased text; texts shorter than three
/// characters yield themselves as one gram, and the empty text yields none.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    match chars.len() {
        0 => Vec::new(),
        1 | 2 => vec![lower],
        _ => chars.windows(3).map(|w| w.iter().collect()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
    document_count: usize,
}

/// Fit over `names`. Grams get dense indices in sorted order, and
/// `idf(g) = ln((1 + N) / (1 + df(g))) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(names: &[S]) -> Result<TfidfModel> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for name in names {
        let name = name.as_ref();
        if name.is_empty() {
            log::warn!("empty string skipped while fitting tf-idf");
            continue;
        }
        n += 1;
        let unique: BTreeSet<String> = char_trigrams(name).into_iter().collect();
        for g in unique {
            *df.entry(g).or_default() += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "tf-idf needs at least one non-empty name".into(),
        ));
    }
    let mut vocabulary = HashMap::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (i, (gram, count)) in df.into_iter().enumerate() {
        idf.push(((1 + n) as f64 / (1 + count) as f64).ln() + 1.0);
        vocabulary.insert(gram, i);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        document_count: n,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn document_count(&self) -> usize {
        self.document_count
    }

    pub fn gram_index(&self, gram: &str) -> Option<usize> {
        self.vocabulary.get(gram).copied()
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    /// L2-normalized tf·idf vector. Grams outside the vocabulary are ignored.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for g in char_trigrams(text) {
            if let Some(&i) = self.vocabulary.get(&g) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> =
            tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector {
            dim: self.dim(),
            entries,
        }
    }
}

/// Sparse vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&(_, w)| w == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, wa) = self.entries[i];
            let (b, wb) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Cosine similarity clamped to `[0, 1]`; zero if either side is zero.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((a.dot(b) / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SelectionPolicy {
    Tfidf,
    Shortest,
    Random { seed: u64 },
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::Tfidf => f.write_str("tfidf"),
            SelectionPolicy::Shortest => f.write_str("shortest"),
            SelectionPolicy::Random { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl SelectionPolicy {
    /// Parse `tfidf`, `shortest` or `random`; `seed` applies to `random` only.
    pub fn parse(kind: &str, seed: u64) -> Result<Self> {
        match kind {
            "tfidf" => Ok(SelectionPolicy::Tfidf),
            "shortest" => Ok(SelectionPolicy::Shortest),
            "random" | "sample" => Ok(SelectionPolicy::Random { seed }),
            other => Err(Error::InvalidInput(format!(
                "unknown selection policy {other:?}"
            ))),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("random", seed)) => {
                let seed = seed
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad random seed {seed:?}")))?;
                Ok(SelectionPolicy::Random { seed })
            }
            _ => Self::parse(s, 0),
        }
    }
}

/// Pick the fine-tuning target for `mention` among one concept's names.
///
/// * `Tfidf`: a model is fitted over the distinct candidates plus the
///   mention, and the candidate with the highest cosine to the mention wins.
/// * `Shortest`: fewest characters.
/// * `Random`: a uniform draw keyed by the seed and the candidate set, so a
///   concept gets the same sampled name every time.
///
/// Ties go to the lexicographically smallest name, and the result never
/// depends on the order of `candidates`.
pub fn select_target<'a, S: AsRef<str>>(
    mention: &str,
    candidates: &'a [S],
    policy: &SelectionPolicy,
) -> Result<&'a str> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "no candidate names to select from".into(),
        ));
    }
    let distinct: BTreeSet<&'a str> = candidates.iter().map(AsRef::as_ref).collect();
    match policy {
        SelectionPolicy::Tfidf => {
            let mut corpus: Vec<&str> = distinct.iter().copied().collect();
            corpus.push(mention);
            let model = fit_tfidf(&corpus)?;
            select_with_model(&model, mention, distinct)
        }
        SelectionPolicy::Shortest => Ok(distinct
            .into_iter()
            .min_by(|a, b| a.chars().count().cmp(&b.chars().count()).then(a.cmp(b)))
            .expect("non-empty")),
        SelectionPolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ candidate_set_key(&distinct));
            let pick = rng.random_range(0..distinct.len());
            Ok(distinct.into_iter().nth(pick).expect("index in range"))
        }
    }
}

/// Tf-idf argmax using a caller-supplied model (e.g. one fitted over the
/// whole name set instead of a single concept).
pub fn select_with_model<'a>(
    model: &TfidfModel,
    mention: &str,
    candidates: impl IntoIterator<Item = &'a str>,
) -> Result<&'a str> {
    let m = model.vectorize(mention);
    let mut scored: Vec<(&'a str, f64)> = Vec::new();
    for c in candidates {
        scored.push((c, cosine(&m, &model.vectorize(c))?));
    }
    let best = scored
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    scored
        .into_iter()
        .filter(|&(_, s)| s >= best - TIE_EPSILON)
        .map(|(c, _)| c)
        .min()
        .ok_or_else(|| Error::InvalidInput("no candidate names to select from".into()))
}

fn candidate_set_key(names: &BTreeSet<&str>) -> u64 {
    // FNV-1a over the sorted names, NUL-separated.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for name in names {
        for b in name.bytes().chain(std::iter::once(0)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
