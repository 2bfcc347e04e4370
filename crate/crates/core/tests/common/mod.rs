//! Independent reference implementations used as test oracles. They favour
//! plainness over speed and share no code with the library beyond its types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use genlink::decoder::{ScoreQuery, Scorer};
use genlink::kb::Concept;

/// Dedup by applying the pairwise rule literally: for each shared name in
/// lexicographic order, repeatedly compare the first two owners by cui and
/// remove the name from one of them.
pub fn reference_dedup(concepts: &[Concept]) -> Vec<Concept> {
    let mut by_cui: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in concepts {
        let names = by_cui.entry(c.cui.clone()).or_default();
        for n in &c.names {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    let all_names: BTreeSet<String> = by_cui.values().flatten().cloned().collect();
    for name in &all_names {
        loop {
            let owners: Vec<String> = by_cui
                .iter()
                .filter(|(_, ns)| ns.contains(name))
                .map(|(c, _)| c.clone())
                .collect();
            if owners.len() < 2 {
                break;
            }
            let (a, b) = (&owners[0], &owners[1]);
            let (na, nb) = (by_cui[a].len(), by_cui[b].len());
            let mut loser = if na > nb {
                a
            } else if nb > na {
                b
            } else {
                b.max(a)
            };
            let other = if loser == a { b } else { a };
            if by_cui[loser].len() == 1 {
                if by_cui[other].len() > 1 {
                    loser = other;
                } else {
                    loser = a.max(b);
                }
            }
            let loser = loser.clone();
            by_cui.get_mut(&loser).unwrap().retain(|n| n != name);
        }
    }
    by_cui
        .into_iter()
        .filter(|(_, ns)| !ns.is_empty())
        .map(|(cui, names)| Concept {
            cui,
            names,
            definition: None,
        })
        .collect()
}

fn grams(s: &str) -> Vec<String> {
    let c: Vec<char> = s.to_lowercase().chars().collect();
    if c.is_empty() {
        return vec![];
    }
    if c.len() < 3 {
        return vec![c.iter().collect()];
    }
    (0..c.len() - 2)
        .map(|i| c[i..i + 3].iter().collect())
        .collect()
}

fn tfidf_vec(s: &str, idf: &HashMap<String, f64>) -> HashMap<String, f64> {
    let mut v: HashMap<String, f64> = HashMap::new();
    for g in grams(s) {
        if let Some(w) = idf.get(&g) {
            *v.entry(g).or_insert(0.0) += w;
        }
    }
    let norm: f64 = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Cosine of the mention against each distinct candidate, with idf fitted
/// over the candidates plus the mention.
pub fn reference_cosines(mention: &str, candidates: &[String]) -> Vec<(String, f64)> {
    let docs: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    let mut corpus: Vec<&str> = docs.iter().copied().collect();
    corpus.push(mention);
    let n = corpus.len() as f64;
    let mut df: HashMap<String, f64> = HashMap::new();
    for d in &corpus {
        let uniq: BTreeSet<String> = grams(d).into_iter().collect();
        for g in uniq {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let idf: HashMap<String, f64> = df
        .into_iter()
        .map(|(g, d)| (g, ((1.0 + n) / (1.0 + d)).ln() + 1.0))
        .collect();
    let m = tfidf_vec(mention, &idf);
    docs.iter()
        .map(|d| {
            let v = tfidf_vec(d, &idf);
            let dot: f64 = m.iter().map(|(g, x)| x * v.get(g).unwrap_or(&0.0)).sum();
            (d.to_string(), dot)
        })
        .collect()
}

/// Every candidate whose cosine is within `tol` of the best.
pub fn reference_argmax_set(mention: &str, candidates: &[String], tol: f64) -> BTreeSet<String> {
    let scored = reference_cosines(mention, candidates);
    let best = scored
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    scored
        .into_iter()
        .filter(|(_, s)| *s >= best - tol)
        .map(|(n, _)| n)
        .collect()
}

/// Allowed continuations of `prefix` found by scanning every tokenized name.
pub fn linear_allowed_next(
    names: &[Vec<String>],
    prefix: &[String],
    end: &str,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for n in names {
        if n.len() >= prefix.len() && n[..prefix.len()] == *prefix {
            out.insert(
                n.get(prefix.len())
                    .cloned()
                    .unwrap_or_else(|| end.to_string()),
            );
        }
    }
    out
}

/// Distinct non-empty prefixes of every `tokens + [end]` path.
pub fn reference_node_count(names: &[Vec<String>], end: &str) -> usize {
    let mut prefixes: BTreeSet<Vec<String>> = BTreeSet::new();
    for n in names {
        let mut path = n.clone();
        path.push(end.to_string());
        for i in 1..=path.len() {
            prefixes.insert(path[..i].to_vec());
        }
    }
    prefixes.len()
}

/// Total score of every name path under `scorer`, best first.
pub fn exhaustive_scores(
    names: &[Vec<String>],
    source: &[String],
    prompt: &[String],
    scorer: &dyn Scorer,
    end: &str,
    allowed_at: impl Fn(&[String]) -> Vec<String>,
) -> Vec<(Vec<String>, f64)> {
    let mut out = Vec::new();
    for n in names {
        let mut total = 0.0;
        let mut path: Vec<String> = Vec::new();
        for tok in n.iter().map(String::as_str).chain(std::iter::once(end)) {
            let allowed = allowed_at(&path);
            let refs: Vec<&str> = allowed.iter().map(String::as_str).collect();
            let prefix: Vec<&str> = path.iter().map(String::as_str).collect();
            let q = ScoreQuery {
                source,
                prompt,
                prefix: &prefix,
            };
            let scores = scorer.score_next(&q, &refs).unwrap();
            let i = refs.iter().position(|t| *t == tok).unwrap();
            total += scores[i];
            path.push(tok.to_string());
        }
        out.push((n.clone(), total));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    out
}

/// Check the structural invariants of a pretraining sample against the
/// concept it came from.
pub fn check_pretrain_sample(
    s: &genlink::corpus::PretrainSample,
    concept: &Concept,
    markers: &genlink::corpus::Markers,
) -> Result<(), String> {
    if markers.counts(&s.source) != (1, 1) {
        return Err(format!("marker counts in {:?}", s.source));
    }
    let start = s.source.find(&markers.start).unwrap();
    let end = s.source.rfind(&markers.end).unwrap();
    if start > end {
        return Err("end marker before start marker".into());
    }
    let s_a = markers.extract(&s.source).ok_or("no marked span")?;
    if !concept.names.iter().any(|n| n == s_a) {
        return Err(format!(
            "marked span {s_a:?} is not a name of {}",
            concept.cui
        ));
    }
    let s_b = s
        .target
        .strip_prefix(&format!("{s_a} is "))
        .ok_or_else(|| format!("target {:?} does not start with the marked name", s.target))?;
    if !concept.names.iter().any(|n| n == s_b) {
        return Err(format!(
            "target name {s_b:?} is not a name of {}",
            concept.cui
        ));
    }
    if let Some(def) = &concept.definition {
        if !s.source.contains(def.as_str()) {
            return Err("definition missing from source".into());
        }
    }
    if s.cui != concept.cui {
        return Err("cui mismatch".into());
    }
    Ok(())
}
