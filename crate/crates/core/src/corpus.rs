//! Template-based pretraining samples built from KB synonyms and definitions.
//!
//! Each sample wraps one synonym in mention markers inside a clause made of
//! a template phrase and some context (the definition, the other synonyms,
//! or a synonym itself), and asks the decoder for `"<synonym> is <synonym>"`.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kb::Concept;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptCase {
    WithDefinition,
    MultiSynonym,
    SingleSynonym,
}

/// Where the marked synonym sits relative to the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `<mention> <phrase> <context>`
    MentionFirst,
    /// `<context> <phrase> <mention>`
    ContextFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: u32,
    pub case: ConceptCase,
    pub layout: Layout,
    pub phrase: &'static str,
}

use ConceptCase::*;
use Layout::*;

#[rustfmt::skip]
pub const TEMPLATES: [Template; 13] = [
    Template { id: 0, case: WithDefinition, layout: MentionFirst, phrase: "is defined as" },
    Template { id: 1, case: WithDefinition, layout: MentionFirst, phrase: "is described as" },
    Template { id: 2, case: WithDefinition, layout: ContextFirst, phrase: "are the definitions of" },
    Template { id: 3, case: WithDefinition, layout: ContextFirst, phrase: "describe" },
    Template { id: 4, case: WithDefinition, layout: ContextFirst, phrase: "define" },
    Template { id: 5, case: MultiSynonym, layout: ContextFirst, phrase: "are the synonyms of" },
    Template { id: 6, case: MultiSynonym, layout: ContextFirst, phrase: "indicate the same concept as" },
    Template { id: 7, case: MultiSynonym, layout: MentionFirst, phrase: "has synonyms such as" },
    Template { id: 8, case: MultiSynonym, layout: MentionFirst, phrase: "refers to the same concepts as" },
    Template { id: 9, case: SingleSynonym, layout: ContextFirst, phrase: "is" },
    Template { id: 10, case: SingleSynonym, layout: ContextFirst, phrase: "is the same as" },
    Template { id: 11, case: SingleSynonym, layout: MentionFirst, phrase: "is" },
    Template { id: 12, case: SingleSynonym, layout: MentionFirst, phrase: "is the same as" },
];

pub fn templates_for(case: ConceptCase) -> impl Iterator<Item = &'static Template> {
    TEMPLATES.iter().filter(move |t| t.case == case)
}

/// Mention marker words written into encoder-side text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub start: String,
    pub end: String,
}

impl Default for Markers {
    fn default() -> Self {
        Self {
            start: "START".into(),
            end: "END".into(),
        }
    }
}

impl Markers {
    pub fn wrap(&self, mention: &str) -> String {
        format!("{} {} {}", self.start, mention, self.end)
    }

    /// Text between the first start marker and the following end marker,
    /// when both appear as whole whitespace-separated words.
    pub fn extract<'a>(&self, text: &'a str) -> Option<&'a str> {
        let open = format!("{} ", self.start);
        let close = format!(" {}", self.end);
        let begin = if text.starts_with(&open) {
            open.len()
        } else {
            text.find(&format!(" {open}"))? + open.len() + 1
        };
        let rest = &text[begin..];
        let mut from = 0;
        while let Some(at) = rest[from..].find(&close) {
            let end = from + at;
            let after = end + close.len();
            if after == rest.len() || rest[after..].starts_with(' ') {
                return Some(&rest[..end]);
            }
            from = end + 1;
        }
        None
    }

    /// Whole-word occurrences of the start and end markers.
    pub fn counts(&self, text: &str) -> (usize, usize) {
        text.split(' ').fold((0, 0), |(s, e), w| {
            (
                s + usize::from(w == self.start),
                e + usize::from(w == self.end),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSample {
    pub source: String,
    pub target: String,
    pub cui: String,
    pub template_id: u32,
}

pub fn classify_concept(concept: &Concept) -> ConceptCase {
    if concept.definition.is_some() {
        WithDefinition
    } else if concept.names.len() >= 3 {
        MultiSynonym
    } else {
        SingleSynonym
    }
}

fn render(template: &Template, markers: &Markers, mention: &str, context: &str) -> String {
    let marked = markers.wrap(mention);
    match template.layout {
        MentionFirst => format!("{marked} {} {context}", template.phrase),
        ContextFirst => format!("{context} {} {marked}", template.phrase),
    }
}

/// Build one sample with `names[anchor]` as the marked synonym.
///
/// The decoding target is another synonym drawn uniformly when the concept
/// has more than one name. The context is the definition, the remaining
/// synonyms joined by `", "`, the target synonym (two names) or the anchor
/// itself (one name).
pub fn generate_sample_at(
    concept: &Concept,
    anchor: usize,
    markers: &Markers,
    rng: &mut impl Rng,
) -> PretrainSample {
    let names = &concept.names;
    let case = classify_concept(concept);
    let s_a = names[anchor].as_str();
    let target_idx = if names.len() >= 2 {
        let pick = rng.random_range(0..names.len() - 1);
        if pick >= anchor {
            pick + 1
        } else {
            pick
        }
    } else {
        anchor
    };
    let s_b = names[target_idx].as_str();
    let context = match case {
        WithDefinition => concept
            .definition
            .clone()
            .expect("classified by definition"),
        MultiSynonym => names
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != anchor && i != target_idx)
            .map(|(_, n)| n.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        SingleSynonym => s_b.to_owned(),
    };
    let candidates: Vec<&Template> = templates_for(case).collect();
    let template = *candidates.choose(rng).expect("every case has templates");
    PretrainSample {
        source: render(template, markers, s_a, &context),
        target: format!("{s_a} is {s_b}"),
        cui: concept.cui.clone(),
        template_id: template.id,
    }
}

/// One sample with a uniformly drawn marked synonym.
pub fn generate_sample(concept: &Concept, markers: &Markers, rng: &mut impl Rng) -> PretrainSample {
    let anchor = rng.random_range(0..concept.names.len());
    generate_sample_at(concept, anchor, markers, rng)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusConfig {
    pub epochs: u32,
    pub seed: u64,
    pub markers: Markers,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            seed: 0,
            markers: Markers::default(),
        }
    }
}

/// Every sample for one concept in one epoch. The RNG depends only on the
/// seed, the concept's position and the epoch, so concepts can be processed
/// in any order or in parallel.
pub fn concept_samples(
    concept: &Concept,
    ordinal: usize,
    epoch: u32,
    config: &CorpusConfig,
) -> Vec<PretrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ordinal as u64);
    rng.set_stream(u64::from(epoch));
    (0..concept.names.len())
        .map(|anchor| generate_sample_at(concept, anchor, &config.markers, &mut rng))
        .collect()
}

/// Lazy serial stream: for each epoch, each concept, each synonym as the
/// marked mention.
pub fn generate_corpus<'a>(
    concepts: &'a [Concept],
    config: &'a CorpusConfig,
) -> impl Iterator<Item = PretrainSample> + 'a {
    (0..config.epochs).flat_map(move |epoch| {
        concepts
            .iter()
            .enumerate()
            .flat_map(move |(i, c)| concept_samples(c, i, epoch, config))
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub samples: usize,
    pub template_histogram: Vec<usize>,
}

const CHUNK: usize = 512;

/// Generate in parallel chunks and stream JSONL to `writer` in the same order
/// as [`generate_corpus`]. At most one chunk of samples is held in memory.
pub fn write_corpus(
    mut writer: impl Write,
    concepts: &[Concept],
    config: &CorpusConfig,
) -> std::io::Result<CorpusSummary> {
    let mut summary = CorpusSummary {
        samples: 0,
        template_histogram: vec![0; TEMPLATES.len()],
    };
    for epoch in 0..config.epochs {
        for (chunk_no, chunk) in concepts.chunks(CHUNK).enumerate() {
            let base = chunk_no * CHUNK;
            let batch: Vec<Vec<PretrainSample>> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, c)| concept_samples(c, base + i, epoch, config))
                .collect();
            for sample in batch.iter().flatten() {
                summary.samples += 1;
                summary.template_histogram[sample.template_id as usize] += 1;
                serde_json::to_writer(&mut writer, sample)?;
                writer.write_all(b"\n")?;
            }
        }
    }
    Ok(summary)
}
