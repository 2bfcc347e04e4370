//! Seeded synthetic knowledge bases and linking datasets for tests,
//! benchmarks and smoke runs.

use std::collections::HashSet;
use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kb::Concept;
use crate::trainprep::ElSample;

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "ch",
    "cl", "dr", "gl", "ph", "pr", "st", "th", "tr",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ae", "io", "ou", "y"];
const CODAS: &[&str] = &["", "", "", "n", "s", "l", "x", "r", "m", "t"];

pub fn cui(i: usize) -> String {
    format!("C{i:07}")
}

/// A lowercase pronounceable word of `syllables` syllables.
pub fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables.max(1) {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(NUCLEI.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

/// `count` distinct pseudo-words of 2 to 4 syllables.
pub fn word_pool(count: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=4);
        let w = pseudo_word(rng, syllables);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn phrase(pool: &[String], words: usize, rng: &mut impl Rng) -> String {
    (0..words)
        .map(|_| pool.choose(rng).unwrap().as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Concepts whose names are globally unique phrases over a shared word pool.
pub fn random_kb(
    concepts: usize,
    names_per_concept: RangeInclusive<usize>,
    words_per_name: RangeInclusive<usize>,
    seed: u64,
) -> Vec<Concept> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = word_pool((concepts * 4).clamp(64, 50_000), &mut rng);
    let mut used = HashSet::new();
    (0..concepts)
        .map(|i| {
            let n = rng.random_range(names_per_concept.clone());
            let mut names = Vec::with_capacity(n);
            while names.len() < n {
                let w = rng.random_range(words_per_name.clone());
                let name = phrase(&pool, w, &mut rng);
                if used.insert(name.clone()) {
                    names.push(name);
                }
            }
            Concept {
                cui: cui(i),
                names,
                definition: None,
            }
        })
        .collect()
}

/// A KB cycling through concepts with a definition, with several names and
/// with a single name.
pub fn mixed_case_kb(concepts: usize, seed: u64) -> Vec<Concept> {
    let mut kb = random_kb(concepts, 1..=5, 1..=3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let pool = word_pool(200, &mut rng);
    for (i, c) in kb.iter_mut().enumerate() {
        match i % 3 {
            0 => {
                let words = rng.random_range(4..=10);
                c.definition = Some(phrase(&pool, words, &mut rng));
            }
            1 if c.names.len() < 2 => {
                let extra = format!("{} {}", c.names[0], pool.choose(&mut rng).unwrap());
                c.names.push(extra);
            }
            1 => {}
            _ => c.names.truncate(1),
        }
    }
    kb
}

/// A KB where names are drawn from a small pool so many are shared between
/// concepts. Names may repeat within a concept before normalization.
pub fn conflict_kb(concepts: usize, name_pool: usize, max_names: usize, seed: u64) -> Vec<Concept> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..name_pool.max(1)).map(|i| format!("name {i}")).collect();
    let mut cuis: Vec<usize> = (0..concepts * 3).collect();
    cuis.shuffle(&mut rng);
    cuis.truncate(concepts);
    cuis.into_iter()
        .map(|id| {
            let n = rng.random_range(1..=max_names.max(1));
            let mut names: Vec<String> = (0..n)
                .map(|_| pool.choose(&mut rng).unwrap().clone())
                .collect();
            names.sort();
            names.dedup();
            Concept {
                cui: cui(id),
                names,
                definition: None,
            }
        })
        .collect()
}

/// `count` distinct names of one to four words.
pub fn random_names(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = word_pool((count / 8).clamp(100, 60_000), &mut rng);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let words = rng.random_range(1..=4);
        let name = phrase(&pool, words, &mut rng);
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    None,
    WordDrop,
    Typo,
    Reorder,
}

impl Perturbation {
    pub const ALL: [Perturbation; 4] = [
        Perturbation::None,
        Perturbation::WordDrop,
        Perturbation::Typo,
        Perturbation::Reorder,
    ];
}

/// Apply `kind` to `name`. Word-level edits on a one-word name fall back to
/// a typo.
pub fn perturb(name: &str, kind: Perturbation, rng: &mut impl Rng) -> String {
    let mut words: Vec<String> = name.split_whitespace().map(str::to_owned).collect();
    match kind {
        Perturbation::None => return words.join(" "),
        Perturbation::WordDrop if words.len() > 1 => {
            let i = rng.random_range(0..words.len());
            words.remove(i);
        }
        Perturbation::Reorder if words.len() > 1 => {
            let original = words.clone();
            while words == original {
                words.shuffle(rng);
            }
        }
        _ => {
            let i = rng.random_range(0..words.len());
            let mut chars: Vec<char> = words[i].chars().collect();
            let j = rng.random_range(0..chars.len());
            let old = chars[j];
            let mut new = old;
            while new == old {
                new = char::from(b'a' + rng.random_range(0..26u8));
            }
            chars[j] = new;
            words[i] = chars.into_iter().collect();
        }
    }
    words.join(" ")
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kb: Vec<Concept>,
    pub train: Vec<ElSample>,
    pub test: Vec<ElSample>,
}

#[derive(Debug, Clone)]
pub struct MorphologyConfig {
    pub concepts: usize,
    pub train_per_concept: usize,
    pub test_per_concept: usize,
    /// Probability that a test mention repeats a training mention.
    pub seen_rate: f64,
    pub seed: u64,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            concepts: 500,
            train_per_concept: 4,
            test_per_concept: 2,
            seen_rate: 0.5,
            seed: 0,
        }
    }
}

/// Each concept owns a handful of root words; its synonyms are orderings of
/// subsets of them, and mentions are perturbed synonyms.
pub fn morphology_dataset(config: &MorphologyConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool = word_pool(config.concepts * 4, &mut rng);
    let context = word_pool(50, &mut rng);
    let mut kb = Vec::with_capacity(config.concepts);
    for (i, roots) in pool.chunks(4).enumerate() {
        let n = rng.random_range(3..=6);
        let mut names: Vec<String> = Vec::with_capacity(n);
        while names.len() < n {
            let len = rng.random_range(1..=3);
            let name = roots
                .choose_multiple(&mut rng, len)
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(" ");
            if !names.contains(&name) {
                names.push(name);
            }
        }
        kb.push(Concept {
            cui: cui(i),
            names,
            definition: None,
        });
    }

    let sample = |id: String, mention: String, cui: &str, rng: &mut ChaCha8Rng| ElSample {
        id,
        mention,
        left_context: phrase(&context, 3, rng),
        right_context: phrase(&context, 2, rng),
        gold_cuis: vec![cui.to_owned()],
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in &kb {
        let mut mentions = Vec::with_capacity(config.train_per_concept);
        for _ in 0..config.train_per_concept {
            let base = c.names.choose(&mut rng).unwrap();
            let kind = *Perturbation::ALL.choose(&mut rng).unwrap();
            let m = perturb(base, kind, &mut rng);
            train.push(sample(
                format!("train-{}", train.len()),
                m.clone(),
                &c.cui,
                &mut rng,
            ));
            mentions.push(m);
        }
        for _ in 0..config.test_per_concept {
            let m = if !mentions.is_empty() && rng.random_bool(config.seen_rate) {
                mentions.choose(&mut rng).unwrap().clone()
            } else {
                let base = c.names.choose(&mut rng).unwrap();
                let kind = *Perturbation::ALL[1..].choose(&mut rng).unwrap();
                perturb(base, kind, &mut rng)
            };
            test.push(sample(format!("test-{}", test.len()), m, &c.cui, &mut rng));
        }
    }
    Dataset { kb, train, test }
}
