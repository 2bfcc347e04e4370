//! Recall@k and sub-population breakdowns.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoder::Prediction;
use crate::kb::{normalize_name, KbConfig, NameIndex};
use crate::trainprep::ElSample;
use crate::{Error, Result};

pub const TOP_N_DEFAULT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subpopulation {
    SingleWord,
    MultiWord,
    UnseenMention,
    UnseenConcept,
    NotDirectMatch,
    Top100,
}

impl Subpopulation {
    pub const ALL: [Subpopulation; 6] = [
        Subpopulation::SingleWord,
        Subpopulation::MultiWord,
        Subpopulation::UnseenMention,
        Subpopulation::UnseenConcept,
        Subpopulation::NotDirectMatch,
        Subpopulation::Top100,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subpopulation::SingleWord => "Single Word Mentions",
            Subpopulation::MultiWord => "Multi-Word Mentions",
            Subpopulation::UnseenMention => "Unseen Mentions",
            Subpopulation::UnseenConcept => "Unseen Concepts",
            Subpopulation::NotDirectMatch => "Not Direct Match",
            Subpopulation::Top100 => "Top 100",
        }
    }
}

/// Whether predicted concepts rank within the first `k`.
///
/// Single-label: the sample must have exactly one gold concept and it must
/// appear among the first `k` predicted concepts. Multi-label: any of the
/// first `k` predicted concepts is in the gold set.
pub fn is_hit(pred: &Prediction, gold: &ElSample, k: usize, multi_label: bool) -> bool {
    let top = &pred.cuis[..pred.cuis.len().min(k)];
    if multi_label {
        top.iter().any(|c| gold.gold_cuis.contains(c))
    } else {
        gold.gold_cuis.len() == 1 && top.contains(&gold.gold_cuis[0])
    }
}

/// Samples with more than one gold concept cannot be scored single-label.
pub fn is_evaluable(gold: &ElSample, multi_label: bool) -> bool {
    if multi_label {
        !gold.gold_cuis.is_empty()
    } else {
        gold.gold_cuis.len() == 1
    }
}

/// Join predictions to gold samples by id. Every gold id needs a prediction;
/// extra predictions are ignored.
pub fn join<'a>(
    preds: &'a [Prediction],
    gold: &'a [ElSample],
) -> Result<Vec<(&'a ElSample, &'a Prediction)>> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(gold.len());
    for g in gold {
        match by_id.get(g.id.as_str()) {
            Some(p) => out.push((g, *p)),
            None => missing.push(g.id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(20).copied().collect();
        return Err(Error::InvalidInput(format!(
            "{} gold samples have no prediction: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() {
                ", ..."
            } else {
                ""
            }
        )));
    }
    Ok(out)
}

/// Fraction of evaluable samples hit within the first `k` concepts.
pub fn recall_at_k(
    preds: &[Prediction],
    gold: &[ElSample],
    k: usize,
    multi_label: bool,
) -> Result<f64> {
    let joined = join(preds, gold)?;
    let scored: Vec<bool> = joined
        .iter()
        .filter(|(g, _)| is_evaluable(g, multi_label))
        .map(|(g, p)| is_hit(p, g, k, multi_label))
        .collect();
    Ok(fraction(&scored))
}

fn fraction(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        0.0
    } else {
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    }
}

/// Sub-population labels per test sample, in input order.
///
/// Words are whitespace tokens of the normalized mention. A mention is
/// unseen when its normalized string never occurs among training mentions;
/// a concept is unseen when none of the sample's gold concepts occurs in
/// training. A mention is a direct match when it is a name of one of its gold
/// concepts. Top-N ranks training concepts by sample count, ties by cui.
pub fn subpopulations(
    samples: &[ElSample],
    train: &[ElSample],
    index: &NameIndex,
    top_n: usize,
) -> Vec<Vec<Subpopulation>> {
    let norm = |s: &str| normalize_name(s, &KbConfig::default());
    let seen_mentions: HashSet<String> = train.iter().map(|s| norm(&s.mention)).collect();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in train {
        let unique: HashSet<&str> = s.gold_cuis.iter().map(String::as_str).collect();
        for c in unique {
            *freq.entry(c).or_default() += 1;
        }
    }
    let top = top_concepts(&freq, top_n);

    samples
        .iter()
        .map(|s| {
            let mention = norm(&s.mention);
            let mut labels = Vec::new();
            labels.push(if mention.split_whitespace().count() <= 1 {
                Subpopulation::SingleWord
            } else {
                Subpopulation::MultiWord
            });
            if !seen_mentions.contains(&mention) {
                labels.push(Subpopulation::UnseenMention);
            }
            if !s.gold_cuis.iter().any(|c| freq.contains_key(c.as_str())) {
                labels.push(Subpopulation::UnseenConcept);
            }
            let owners = index.concepts_of(&mention);
            if !s.gold_cuis.iter().any(|c| owners.contains(c)) {
                labels.push(Subpopulation::NotDirectMatch);
            }
            if s.gold_cuis.iter().any(|c| top.contains(c.as_str())) {
                labels.push(Subpopulation::Top100);
            }
            labels
        })
        .collect()
}

/// The `n` most frequent concepts; ties broken by smaller cui.
pub fn top_concepts<'a>(freq: &HashMap<&'a str, usize>, n: usize) -> HashSet<&'a str> {
    let mut ranked: Vec<(&str, usize)> = freq.iter().map(|(&c, &f)| (c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(c, _)| c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationScore {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub sample_size: usize,
    pub subpopulations: BTreeMap<Subpopulation, PopulationScore>,
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub ks: Vec<usize>,
    pub multi_label: bool,
    /// Training samples and name index, needed for the sub-population split.
    pub subpop: Option<(&'a [ElSample], &'a NameIndex)>,
    pub top_n: usize,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            ks: vec![1, 5],
            multi_label: false,
            subpop: None,
            top_n: TOP_N_DEFAULT,
        }
    }
}

pub fn evaluate(
    preds: &[Prediction],
    gold: &[ElSample],
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let joined = join(preds, gold)?;
    let evaluable: Vec<(&ElSample, &Prediction)> = joined
        .iter()
        .copied()
        .filter(|(g, _)| is_evaluable(g, opts.multi_label))
        .collect();
    let rejected = joined.len() - evaluable.len();
    let hits_at = |k: usize, rows: &[(&ElSample, &Prediction)]| -> Vec<bool> {
        rows.iter()
            .map(|(g, p)| is_hit(p, g, k, opts.multi_label))
            .collect()
    };
    let recall_at = opts
        .ks
        .iter()
        .map(|&k| (k, fraction(&hits_at(k, &evaluable))))
        .collect();

    let mut by_population = BTreeMap::new();
    if let Some((train, index)) = opts.subpop {
        let samples: Vec<ElSample> = evaluable.iter().map(|(g, _)| (*g).clone()).collect();
        let labels = subpopulations(&samples, train, index, opts.top_n);
        for pop in Subpopulation::ALL {
            let rows: Vec<(&ElSample, &Prediction)> = evaluable
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.contains(&pop))
                .map(|(r, _)| *r)
                .collect();
            by_population.insert(
                pop,
                PopulationScore {
                    recall_at_1: fraction(&hits_at(1, &rows)),
                    recall_at_5: fraction(&hits_at(5, &rows)),
                    sample_size: rows.len(),
                },
            );
        }
    }
    Ok(EvalReport {
        recall_at,
        sample_size: evaluable.len(),
        subpopulations: by_population,
        rejected,
    })
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plain-text table: one row for the overall set and one per sub-population.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let r1 = report.recall_at.get(&1).copied().unwrap_or(f64::NAN);
    let r5 = report.recall_at.get(&5).copied().unwrap_or(f64::NAN);
    let _ = writeln!(
        out,
        "{:<22} {:>8} {:>8} {:>8}",
        "Subset", "R@1", "R@5", "Size"
    );
    let _ = writeln!(
        out,
        "{:<22} {:>8.1} {:>8.1} {:>8}",
        "Overall",
        100.0 * r1,
        100.0 * r5,
        report.sample_size
    );
    for (pop, score) in &report.subpopulations {
        let _ = writeln!(
            out,
            "{:<22} {:>8.1} {:>8.1} {:>8}",
            pop.label(),
            100.0 * score.recall_at_1,
            100.0 * score.recall_at_5,
            score.sample_size
        );
    }
    out
}
