//! Generative biomedical entity linking.
//!
//! The pipeline runs in stages that each read and write plain JSONL:
//!
//! 1. [`kb`] normalizes a knowledge base, merges extra synonyms and removes
//!    names shared between concepts, producing the global name set and the
//!    name-to-concept map.
//! 2. [`corpus`] turns concepts into template-based pretraining samples.
//! 3. [`trainprep`] builds fine-tuning pairs, picking the decoding target for
//!    each mention with [`textsim`].
//! 4. [`decoder`] runs beam search constrained by a [`trie`] over every
//!    synonym name, scoring tokens through a pluggable [`decoder::Scorer`].
//! 5. [`eval`] reports Recall@k overall and on mention sub-populations.
//!
//! The neural model is replaced by the [`decoder::Scorer`] contract. Reference
//! scorers (uniform, seeded random, memorizing oracle, n-gram, external
//! subprocess) live in [`decoder`].

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod kb;
pub mod synth;
pub mod textsim;
pub mod tokenize;
pub mod trainprep;
pub mod trie;

pub use error::{Error, Result};
