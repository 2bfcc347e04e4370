//! Knowledge-base ingestion: name normalization, synonym merging, removal of
//! names shared between concepts, and the name index (the global name set
//! plus the name-to-concept map).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Characters removed by symbol stripping.
pub const STRIPPED_SYMBOLS: &[char] = &['-', ',', '.', ';', ':', '\'', '"', '(', ')', '[', ']'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: String,
    pub names: Vec<String>,
    #[serde(default)]
    pub definition: Option<String>,
}

impl Concept {
    pub fn new(cui: impl Into<String>, names: &[&str]) -> Self {
        Self {
            cui: cui.into(),
            names: names.iter().map(|s| s.to_string()).collect(),
            definition: None,
        }
    }

    pub fn with_definition(mut self, definition: impl Into<String>) -> Self {
        self.definition = Some(definition.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbConfig {
    pub dedup_enabled: bool,
    pub lowercase: bool,
    pub strip_symbols: bool,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            dedup_enabled: true,
            lowercase: true,
            strip_symbols: true,
        }
    }
}

/// Lowercase, drop [`STRIPPED_SYMBOLS`], then collapse whitespace runs and
/// trim. Whitespace is always collapsed so names are stable token sequences.
pub fn normalize_name(raw: &str, config: &KbConfig) -> String {
    let cased = if config.lowercase {
        raw.to_lowercase()
    } else {
        raw.to_owned()
    };
    let stripped: String = if config.strip_symbols {
        cased
            .chars()
            .filter(|c| !STRIPPED_SYMBOLS.contains(c))
            .collect()
    } else {
        cased
    };
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalize every name, dropping empties and per-concept duplicates while
/// keeping first-occurrence order. Returns `None` if no name survives.
pub fn normalize_concept(concept: Concept, config: &KbConfig) -> Option<Concept> {
    let mut seen = HashSet::new();
    let mut names = Vec::with_capacity(concept.names.len());
    for raw in &concept.names {
        let name = normalize_name(raw, config);
        if name.is_empty() {
            log::warn!(
                "{}: name {raw:?} is empty after normalization, skipped",
                concept.cui
            );
            continue;
        }
        if seen.insert(name.clone()) {
            names.push(name);
        }
    }
    if names.is_empty() {
        log::warn!("{}: no usable names, record skipped", concept.cui);
        return None;
    }
    let definition = concept
        .definition
        .map(|d| {
            let d = d.split_whitespace().collect::<Vec<_>>().join(" ");
            if config.lowercase {
                d.to_lowercase()
            } else {
                d
            }
        })
        .filter(|d| !d.is_empty());
    Some(Concept {
        cui: concept.cui,
        names,
        definition,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub records: usize,
    pub skipped_records: usize,
    pub merged_duplicate_cuis: usize,
}

/// Load and normalize a JSONL knowledge base. Records repeating an earlier
/// cui are folded into it.
pub fn load_kb(path: &Path, config: &KbConfig) -> Result<(Vec<Concept>, LoadSummary)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut summary = LoadSummary::default();
    let mut concepts: Vec<Concept> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Concept = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        summary.records += 1;
        let Some(concept) = normalize_concept(raw, config) else {
            summary.skipped_records += 1;
            continue;
        };
        match position.get(&concept.cui) {
            Some(&at) => {
                summary.merged_duplicate_cuis += 1;
                let existing = &mut concepts[at];
                union_names(&mut existing.names, &concept.names);
                if existing.definition.is_none() {
                    existing.definition = concept.definition;
                }
            }
            None => {
                position.insert(concept.cui.clone(), concepts.len());
                concepts.push(concept);
            }
        }
    }
    Ok((concepts, summary))
}

pub fn write_kb(mut writer: impl Write, concepts: &[Concept]) -> std::io::Result<()> {
    crate::jsonl::write_to(&mut writer, concepts)
}

fn union_names(into: &mut Vec<String>, extra: &[String]) {
    let mut have: HashSet<String> = into.iter().cloned().collect();
    for name in extra {
        if have.insert(name.clone()) {
            into.push(name.clone());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeSummary {
    pub merged_concepts: usize,
    pub added_names: usize,
    pub dropped_extra_records: usize,
}

/// Add names from `extra` to the `base` concept with the same cui. Extra
/// records whose cui is not in `base` are dropped and counted.
pub fn merge_synonyms(base: &[Concept], extra: &[Concept]) -> (Vec<Concept>, MergeSummary) {
    let mut out = base.to_vec();
    let position: HashMap<&str, usize> = base
        .iter()
        .enumerate()
        .map(|(i, c)| (c.cui.as_str(), i))
        .collect();
    let mut summary = MergeSummary::default();
    let mut touched = HashSet::new();
    for record in extra {
        match position.get(record.cui.as_str()) {
            Some(&at) => {
                let before = out[at].names.len();
                union_names(&mut out[at].names, &record.names);
                let added = out[at].names.len() - before;
                if added > 0 {
                    touched.insert(at);
                }
                summary.added_names += added;
            }
            None => summary.dropped_extra_records += 1,
        }
    }
    summary.merged_concepts = touched.len();
    (out, summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DedupReport {
    pub shared_names: usize,
    pub removals: usize,
    /// Concepts left without names because every name they had was kept by a
    /// concept with a smaller cui.
    pub dropped_concepts: Vec<String>,
}

/// Make every name belong to exactly one concept.
///
/// Shared names are handled in lexicographic order. For each, while more
/// than one concept owns it, the name is removed from the owner that
/// currently has the most names (ties: larger cui), skipping owners for which
/// the removal would leave zero names. When every owner is down to that one
/// name, the smallest cui keeps it and the rest lose it and are dropped.
/// Name counts are live, so earlier removals affect later choices.
///
/// The output is sorted by cui. Concepts sharing a cui are merged first.
pub fn deduplicate(concepts: &[Concept]) -> (Vec<Concept>, DedupReport) {
    let mut merged: BTreeMap<&str, Concept> = BTreeMap::new();
    for c in concepts {
        match merged.get_mut(c.cui.as_str()) {
            Some(existing) => {
                union_names(&mut existing.names, &c.names);
                if existing.definition.is_none() {
                    existing.definition = c.definition.clone();
                }
            }
            None => {
                merged.insert(&c.cui, c.clone());
            }
        }
    }
    let mut work: Vec<Concept> = merged.into_values().collect();

    // name -> owner indices (ascending index == ascending cui)
    let mut owners: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in work.iter().enumerate() {
        for name in &c.names {
            owners.entry(name.as_str()).or_default().push(i);
        }
    }
    let mut counts: Vec<usize> = work.iter().map(|c| c.names.len()).collect();
    let mut removed: HashSet<(usize, String)> = HashSet::new();
    let mut report = DedupReport::default();

    for (name, mut holders) in owners.into_iter().filter(|(_, o)| o.len() > 1) {
        report.shared_names += 1;
        while holders.len() > 1 {
            let victim = holders
                .iter()
                .copied()
                .filter(|&i| counts[i] >= 2)
                .max_by_key(|&i| (counts[i], i));
            match victim {
                Some(v) => {
                    holders.retain(|&i| i != v);
                    counts[v] -= 1;
                    removed.insert((v, name.to_owned()));
                    report.removals += 1;
                }
                None => {
                    // every holder would be emptied; the smallest cui keeps it
                    for &v in &holders[1..] {
                        counts[v] -= 1;
                        removed.insert((v, name.to_owned()));
                        report.removals += 1;
                    }
                    holders.truncate(1);
                }
            }
        }
    }

    let mut out = Vec::with_capacity(work.len());
    for (i, mut c) in work.drain(..).enumerate() {
        c.names.retain(|n| !removed.contains(&(i, n.clone())));
        if c.names.is_empty() {
            log::warn!("{}: every name is owned by another concept, dropped", c.cui);
            report.dropped_concepts.push(c.cui);
        } else {
            out.push(c);
        }
    }
    (out, report)
}

/// The global name set and the name-to-concept map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameIndex {
    names: BTreeSet<String>,
    to_concept: HashMap<String, Vec<String>>,
    multi_label: bool,
}

impl NameIndex {
    /// With `dedup_enabled`, a name owned by two concepts is an integrity
    /// error. Without it, such names map to every owner in cui order.
    pub fn build(concepts: &[Concept], dedup_enabled: bool) -> Result<Self> {
        let mut to_concept: HashMap<String, Vec<String>> = HashMap::new();
        for c in concepts {
            for name in &c.names {
                let owners = to_concept.entry(name.clone()).or_default();
                if !owners.contains(&c.cui) {
                    owners.push(c.cui.clone());
                }
            }
        }
        for (name, owners) in to_concept.iter_mut() {
            if owners.len() > 1 {
                if dedup_enabled {
                    owners.sort();
                    return Err(Error::Integrity(format!(
                        "name {name:?} is owned by {}",
                        owners.join(", ")
                    )));
                }
                owners.sort();
            }
        }
        Ok(Self {
            names: to_concept.keys().cloned().collect(),
            to_concept,
            multi_label: !dedup_enabled,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.to_concept.contains_key(name)
    }

    /// Sorted iteration over the name set.
    pub fn names(&self) -> impl Iterator<Item = &str> + Clone {
        self.names.iter().map(String::as_str)
    }

    /// Every concept owning `name`, in cui order. Empty if unknown.
    pub fn concepts_of(&self, name: &str) -> &[String] {
        self.to_concept.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The single owner of `name`. Always the first owner in multi-label
    /// mode.
    pub fn concept_of(&self, name: &str) -> Option<&str> {
        self.concepts_of(name).first().map(String::as_str)
    }

    pub fn is_multi_label(&self) -> bool {
        self.multi_label
    }
}

pub fn build_name_index(concepts: &[Concept], config: &KbConfig) -> Result<NameIndex> {
    NameIndex::build(concepts, config.dedup_enabled)
}

/// Concepts with cui lookup.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    concepts: Vec<Concept>,
    by_cui: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(concepts: Vec<Concept>) -> Self {
        let by_cui = concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.cui.clone(), i))
            .collect();
        Self { concepts, by_cui }
    }

    pub fn get(&self, cui: &str) -> Option<&Concept> {
        self.by_cui.get(cui).map(|&i| &self.concepts[i])
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: &Concept) -> Vec<&str> {
        c.names.iter().map(String::as_str).collect()
    }

    #[test]
    fn normalizes_reiter_example() {
        let c = normalize_concept(
            Concept::new("C1", &["Reiter Syndrome", "ReA"]),
            &KbConfig::default(),
        )
        .unwrap();
        assert_eq!(names(&c), ["reiter syndrome", "rea"]);
    }

    #[test]
    fn collapses_duplicates() {
        let c = normalize_concept(Concept::new("C1", &["x", "x"]), &KbConfig::default()).unwrap();
        assert_eq!(names(&c), ["x"]);
    }

    #[test]
    fn strips_symbols() {
        let cfg = KbConfig::default();
        assert_eq!(normalize_name("A-B, C", &cfg), "ab c");
        assert_eq!(
            normalize_name("  (Type 2)  diabetes; mellitus ", &cfg),
            "type 2 diabetes mellitus"
        );
        let keep = KbConfig {
            strip_symbols: false,
            ..cfg
        };
        assert_eq!(normalize_name("A-B, C", &keep), "a-b, c");
    }

    #[test]
    fn empty_names_skip_record() {
        assert!(
            normalize_concept(Concept::new("C1", &["--", " "]), &KbConfig::default()).is_none()
        );
    }

    #[test]
    fn load_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        std::fs::write(
            &path,
            "{\"cui\":\"C1\",\"names\":[\"a\"],\"definition\":null}\n\n{\"cui\":\n",
        )
        .unwrap();
        match load_kb(&path, &KbConfig::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_skips_and_merges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"cui\":\"C1\",\"names\":[\"Reiter Syndrome\",\"ReA\"],\"definition\":\"An  Arthritis\"}\n",
                "{\"cui\":\"C2\",\"names\":[\"--\"]}\n",
                "{\"cui\":\"C1\",\"names\":[\"rea\",\"Reactive arthritis\"],\"definition\":null}\n",
            ),
        )
        .unwrap();
        let (kb, summary) = load_kb(&path, &KbConfig::default()).unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(
            names(&kb[0]),
            ["reiter syndrome", "rea", "reactive arthritis"]
        );
        assert_eq!(kb[0].definition.as_deref(), Some("an arthritis"));
        assert_eq!(summary.skipped_records, 1);
        assert_eq!(summary.merged_duplicate_cuis, 1);
    }

    #[test]
    fn merge_examples() {
        let (m, _) = merge_synonyms(&[Concept::new("C1", &["a"])], &[Concept::new("C1", &["b"])]);
        assert_eq!(names(&m[0]), ["a", "b"]);

        let (m, s) = merge_synonyms(&[Concept::new("C1", &["a"])], &[Concept::new("C2", &["b"])]);
        assert_eq!(m, vec![Concept::new("C1", &["a"])]);
        assert_eq!(s.dropped_extra_records, 1);

        let (m, _) = merge_synonyms(
            &[Concept::new("C1", &["a", "b"])],
            &[Concept::new("C1", &["b", "c"])],
        );
        assert_eq!(names(&m[0]), ["a", "b", "c"]);
    }

    #[test]
    fn merge_is_idempotent() {
        let base = [Concept::new("C1", &["a"]), Concept::new("C2", &["z"])];
        let extra = [Concept::new("C1", &["b", "a"]), Concept::new("C3", &["q"])];
        let (once, _) = merge_synonyms(&base, &extra);
        let (twice, _) = merge_synonyms(&once, &extra);
        assert_eq!(once, twice);
    }

    #[test]
    fn dedup_removes_from_larger_concept() {
        let (out, report) = deduplicate(&[
            Concept::new("C1", &["x", "a", "b", "c"]),
            Concept::new("C2", &["x", "d"]),
        ]);
        assert_eq!(names(&out[0]), ["a", "b", "c"]);
        assert_eq!(names(&out[1]), ["x", "d"]);
        assert_eq!(report.removals, 1);
    }

    #[test]
    fn dedup_equal_counts_remove_from_larger_cui() {
        let (out, _) = deduplicate(&[
            Concept::new("C2", &["x", "b"]),
            Concept::new("C1", &["x", "a"]),
        ]);
        assert_eq!(names(&out[0]), ["x", "a"]);
        assert_eq!(names(&out[1]), ["b"]);
    }

    #[test]
    fn dedup_degenerate_tie_drops_concept() {
        let (out, report) = deduplicate(&[Concept::new("C1", &["x"]), Concept::new("C2", &["x"])]);
        assert_eq!(out, vec![Concept::new("C1", &["x"])]);
        assert_eq!(report.dropped_concepts, ["C2"]);
    }

    #[test]
    fn dedup_never_empties_the_smaller_owner() {
        let (out, _) = deduplicate(&[
            Concept::new("C1", &["x", "a", "b"]),
            Concept::new("C2", &["x"]),
        ]);
        assert_eq!(names(&out[0]), ["a", "b"]);
        assert_eq!(names(&out[1]), ["x"]);
    }

    #[test]
    fn dedup_three_way() {
        let (out, _) = deduplicate(&[
            Concept::new("C1", &["x", "a"]),
            Concept::new("C2", &["x", "b", "c"]),
            Concept::new("C3", &["x"]),
        ]);
        // C2 (3 names) loses x, then C1 (2 names) loses x; C3 keeps it.
        assert_eq!(names(&out[0]), ["a"]);
        assert_eq!(names(&out[1]), ["b", "c"]);
        assert_eq!(names(&out[2]), ["x"]);
    }

    #[test]
    fn dedup_counts_are_live() {
        // "p" is processed first and shrinks C1, which changes the outcome for "q".
        let (out, _) = deduplicate(&[
            Concept::new("C1", &["p", "q", "a"]),
            Concept::new("C2", &["p", "q", "b"]),
        ]);
        // p: tie 3/3 -> removed from C2 (2 left). q: C1 has 3, C2 has 2 -> removed from C1.
        assert_eq!(names(&out[0]), ["p", "a"]);
        assert_eq!(names(&out[1]), ["q", "b"]);
    }

    #[test]
    fn index_examples() {
        let idx = NameIndex::build(
            &[Concept::new("C1", &["a", "b"]), Concept::new("C2", &["c"])],
            true,
        )
        .unwrap();
        assert_eq!(idx.names().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(idx.concept_of("a"), Some("C1"));
        assert_eq!(idx.concept_of("c"), Some("C2"));
        assert_eq!(idx.concept_of("zz"), None);

        let shared = [Concept::new("C2", &["x"]), Concept::new("C1", &["x"])];
        assert!(matches!(
            NameIndex::build(&shared, true),
            Err(Error::Integrity(_))
        ));
        let multi = NameIndex::build(&shared, false).unwrap();
        assert_eq!(multi.concepts_of("x"), ["C1", "C2"]);
        assert!(multi.is_multi_label());

        assert!(NameIndex::build(&[], true).unwrap().is_empty());
    }
}
