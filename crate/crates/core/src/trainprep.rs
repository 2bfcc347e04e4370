//! Fine-tuning pairs: mention-in-context on the encoder side, the decoder
//! prompt `"<mention> is"` and one selected synonym as the decoding target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Markers;
use crate::decoder::DecodeRequest;
use crate::kb::{Concept, KnowledgeBase};
use crate::textsim::{self, SelectionPolicy, TfidfModel};
use crate::Result;

/// One linking instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElSample {
    pub id: String,
    pub mention: String,
    #[serde(default)]
    pub left_context: String,
    #[serde(default)]
    pub right_context: String,
    pub gold_cuis: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub id: String,
    pub source: String,
    pub prompt: String,
    pub target: String,
    pub cui: String,
}

/// Document-frequency corpus for the tf-idf policy.
#[derive(Debug, Clone, Default)]
pub enum IdfScope {
    /// Fit on the gold concept's names plus the mention.
    #[default]
    PerConcept,
    /// One model fitted on a larger corpus (typically the whole name set).
    Global(TfidfModel),
}

#[derive(Debug, Clone)]
pub struct PrepConfig {
    pub policy: SelectionPolicy,
    pub prompt_enabled: bool,
    pub idf_scope: IdfScope,
    pub markers: Markers,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            policy: SelectionPolicy::Tfidf,
            prompt_enabled: true,
            idf_scope: IdfScope::PerConcept,
            markers: Markers::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepSummary {
    pub samples: usize,
    pub kept: usize,
    pub pairs: usize,
    pub rejected: Vec<Rejection>,
}

/// Lowercase and collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `"<left> START <mention> END <right>"`, lowercased, empty contexts omitted.
pub fn encoder_source(sample: &ElSample, markers: &Markers) -> String {
    let parts = [
        normalize_text(&sample.left_context),
        markers.wrap(&normalize_text(&sample.mention)),
        normalize_text(&sample.right_context),
    ];
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .cloned()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `"<mention> is"`, or empty when prompting is disabled.
pub fn decoder_prompt(mention: &str, prompt_enabled: bool) -> String {
    if prompt_enabled {
        format!("{} is", normalize_text(mention))
    } else {
        String::new()
    }
}

/// Decoder input for a sample at inference time.
pub fn decode_request(sample: &ElSample, config: &PrepConfig) -> DecodeRequest {
    DecodeRequest {
        id: sample.id.clone(),
        source: encoder_source(sample, &config.markers),
        prompt: decoder_prompt(&sample.mention, config.prompt_enabled),
    }
}

/// Context-free samples, one per KB name, labelled with the owning concept.
/// Useful as extra training data so every name is seen as a mention.
pub fn synonym_samples(concepts: &[Concept]) -> Vec<ElSample> {
    concepts
        .iter()
        .flat_map(|c| {
            c.names.iter().enumerate().map(move |(i, name)| ElSample {
                id: format!("kb:{}:{i}", c.cui),
                mention: name.clone(),
                left_context: String::new(),
                right_context: String::new(),
                gold_cuis: vec![c.cui.clone()],
            })
        })
        .collect()
}

fn check(sample: &ElSample, kb: &KnowledgeBase) -> Option<String> {
    if normalize_text(&sample.mention).is_empty() {
        return Some("empty mention".into());
    }
    if sample.gold_cuis.is_empty() {
        return Some("no gold concept".into());
    }
    let missing: Vec<&str> = sample
        .gold_cuis
        .iter()
        .filter(|c| kb.get(c).is_none())
        .map(String::as_str)
        .collect();
    (!missing.is_empty()).then(|| format!("gold concept not in KB: {}", missing.join(", ")))
}

fn select(mention: &str, names: &[String], config: &PrepConfig) -> Result<String> {
    match (&config.policy, &config.idf_scope) {
        (SelectionPolicy::Tfidf, IdfScope::Global(model)) => {
            textsim::select_with_model(model, mention, names.iter().map(String::as_str))
                .map(str::to_owned)
        }
        (policy, _) => textsim::select_target(mention, names, policy).map(str::to_owned),
    }
}

/// One pair per (kept sample, gold cui), in input order. Samples with an
/// empty mention, no gold concept, or a gold concept missing from `kb` are
/// rejected and listed in the summary.
pub fn prepare_pairs(
    samples: &[ElSample],
    kb: &KnowledgeBase,
    config: &PrepConfig,
) -> Result<(Vec<TrainPair>, PrepSummary)> {
    let per_sample: Vec<Result<std::result::Result<Vec<TrainPair>, Rejection>>> = samples
        .par_iter()
        .map(|sample| {
            if let Some(reason) = check(sample, kb) {
                return Ok(Err(Rejection {
                    id: sample.id.clone(),
                    reason,
                }));
            }
            let mention = normalize_text(&sample.mention);
            let source = encoder_source(sample, &config.markers);
            let prompt = decoder_prompt(&mention, config.prompt_enabled);
            let mut pairs = Vec::with_capacity(sample.gold_cuis.len());
            for cui in &sample.gold_cuis {
                let concept = kb.get(cui).expect("checked above");
                pairs.push(TrainPair {
                    id: sample.id.clone(),
                    source: source.clone(),
                    prompt: prompt.clone(),
                    target: select(&mention, &concept.names, config)?,
                    cui: cui.clone(),
                });
            }
            Ok(Ok(pairs))
        })
        .collect();

    let mut summary = PrepSummary {
        samples: samples.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for result in per_sample {
        match result? {
            Ok(pairs) => {
                summary.kept += 1;
                summary.pairs += pairs.len();
                out.extend(pairs);
            }
            Err(rejection) => {
                log::warn!("sample {} rejected: {}", rejection.id, rejection.reason);
                summary.rejected.push(rejection);
            }
        }
    }
    Ok((out, summary))
}
