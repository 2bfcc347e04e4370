//! Character and whitespace tokenizers, plus the id vocabulary shared by the
//! trie and the decoder.
//!
//! Special tokens are kept out of the content space in two ways: they own the
//! reserved ids `0..SPECIAL_COUNT`, and their display strings contain a space
//! and more than one character, so neither tokenizer can ever emit one as a
//! content token.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    Bos,
    Eos,
    Start,
    End,
    EndOfName,
}

pub const SPECIAL_COUNT: usize = 5;

impl Special {
    pub const ALL: [Special; SPECIAL_COUNT] = [
        Special::Bos,
        Special::Eos,
        Special::Start,
        Special::End,
        Special::EndOfName,
    ];

    pub fn id(self) -> TokenId {
        self as TokenId
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Special::Bos => "<begin sequence>",
            Special::Eos => "<end sequence>",
            Special::Start => "<mention start>",
            Special::End => "<mention end>",
            Special::EndOfName => "<end of name>",
        }
    }

    pub fn from_str_exact(s: &str) -> Option<Special> {
        Special::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

/// Id of the end-of-name sentinel in every [`Vocab`].
pub const END_OF_NAME: TokenId = Special::EndOfName as TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Character,
    Whitespace,
}

impl TokenizerKind {
    pub fn code(self) -> u8 {
        match self {
            TokenizerKind::Character => 0,
            TokenizerKind::Whitespace => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TokenizerKind::Character),
            1 => Some(TokenizerKind::Whitespace),
            _ => None,
        }
    }
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerKind::Character => "character",
            TokenizerKind::Whitespace => "whitespace",
        })
    }
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "character" | "char" => Ok(TokenizerKind::Character),
            "whitespace" | "word" => Ok(TokenizerKind::Whitespace),
            other => Err(Error::InvalidInput(format!(
                "unknown tokenizer kind {other:?}"
            ))),
        }
    }
}

/// Stateless text splitter.
///
/// Character mode is lossless on every string. Whitespace mode is lossless on
/// whitespace-normalized strings (single spaces, no leading or trailing
/// space), which is the form every KB name takes after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tokenizer {
    pub kind: TokenizerKind,
}

impl Tokenizer {
    pub fn new(kind: TokenizerKind) -> Self {
        Self { kind }
    }

    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match self.kind {
            TokenizerKind::Character => text
                .char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect(),
            TokenizerKind::Whitespace => text.split_whitespace().collect(),
        }
    }

    pub fn tokenize_owned(&self, text: &str) -> Vec<String> {
        self.tokenize(text).into_iter().map(str::to_owned).collect()
    }

    /// Inverse of [`Tokenizer::tokenize`]. Special-token strings are dropped.
    pub fn detokenize<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        let content = tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| Special::from_str_exact(t).is_none());
        match self.kind {
            TokenizerKind::Character => content.collect(),
            TokenizerKind::Whitespace => content.collect::<Vec<_>>().join(" "),
        }
    }
}

/// Token string <-> id table. Specials take ids `0..SPECIAL_COUNT`; content
/// tokens follow in sorted order, so ids are stable for a given token set.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = tokens.into_iter().map(|t| t.as_ref().to_owned()).collect();
        let mut all: Vec<String> = Special::ALL.iter().map(|s| s.as_str().to_owned()).collect();
        all.extend(unique);
        Self::from_id_order(all).expect("specials and sorted content are distinct")
    }

    /// Vocabulary over every token of every text in `texts`.
    pub fn build<I, S>(tokenizer: &Tokenizer, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for text in texts {
            for tok in tokenizer.tokenize(text.as_ref()) {
                if !set.contains(tok) {
                    set.insert(tok.to_owned());
                }
            }
        }
        Self::from_tokens(set)
    }

    /// Rebuild from a full id-ordered token list (specials first).
    pub fn from_id_order(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_COUNT
            || Special::ALL
                .iter()
                .zip(&tokens)
                .any(|(sp, t)| sp.as_str() != t)
        {
            return Err(Error::Format(
                "vocabulary must start with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate().skip(SPECIAL_COUNT) {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIAL_COUNT
    }

    /// Content-token lookup; special strings are never resolved here.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_COUNT
    }

    /// `None` if any token is outside the vocabulary.
    pub fn encode(&self, tokenizer: &Tokenizer, text: &str) -> Option<Vec<TokenId>> {
        tokenizer
            .tokenize(text)
            .into_iter()
            .map(|t| self.id(t))
            .collect()
    }

    /// Detokenize ids, dropping specials.
    pub fn decode(&self, tokenizer: &Tokenizer, ids: &[TokenId]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| !Self::is_special(id))
            .map(|&id| self.token(id))
            .collect();
        tokenizer.detokenize(&toks)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token -> id map, for the JSON vocabulary dump.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(id, t)| (t.clone(), serde_json::Value::from(id)))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let map = value
            .as_object()
            .ok_or_else(|| Error::Format("vocabulary JSON must be an object".into()))?;
        let mut slots: Vec<Option<String>> = vec![None; map.len()];
        for (tok, id) in map {
            let id = id
                .as_u64()
                .filter(|&id| (id as usize) < slots.len())
                .ok_or_else(|| Error::Format(format!("bad id for token {tok:?}")))?;
            if slots[id as usize].replace(tok.clone()).is_some() {
                return Err(Error::Format(format!("id {id} assigned twice")));
            }
        }
        let tokens = slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format("vocabulary ids are not dense".into()))?;
        Self::from_id_order(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn character_split() {
        let t = Tokenizer::new(TokenizerKind::Character);
        assert_eq!(t.tokenize("abc"), vec!["a", "b", "c"]);
        assert_eq!(t.tokenize("né"), vec!["n", "é"]);
        assert_eq!(t.detokenize(&["a", "b", "c"]), "abc");
    }

    #[test]
    fn whitespace_split() {
        let t = Tokenizer::new(TokenizerKind::Whitespace);
        assert_eq!(
            t.tokenize("reactive arthritis"),
            vec!["reactive", "arthritis"]
        );
        assert_eq!(
            t.detokenize(&["reactive", "arthritis"]),
            "reactive arthritis"
        );
        assert_eq!(t.tokenize("  a \t b  "), vec!["a", "b"]);
    }

    #[test]
    fn empty_round_trip() {
        for kind in [TokenizerKind::Character, TokenizerKind::Whitespace] {
            let t = Tokenizer::new(kind);
            assert!(t.tokenize("").is_empty());
            assert_eq!(t.detokenize::<&str>(&[]), "");
        }
    }

    #[test]
    fn specials_are_stripped() {
        let t = Tokenizer::new(TokenizerKind::Whitespace);
        assert_eq!(
            t.detokenize(&["a", Special::EndOfName.as_str(), "b"]),
            "a b"
        );
    }

    #[test]
    fn specials_cannot_be_content() {
        for sp in Special::ALL {
            for kind in [TokenizerKind::Character, TokenizerKind::Whitespace] {
                let toks = Tokenizer::new(kind).tokenize(sp.as_str());
                assert!(toks.iter().all(|t| *t != sp.as_str()));
            }
        }
    }

    #[test]
    fn vocab_ids_sorted_and_stable() {
        let t = Tokenizer::new(TokenizerKind::Character);
        let a = Vocab::build(&t, ["cab", "ba"]);
        let b = Vocab::build(&t, ["ba", "cab"]);
        assert_eq!(a, b);
        assert_eq!(a.id("a"), Some(5));
        assert_eq!(a.id("b"), Some(6));
        assert_eq!(a.id("c"), Some(7));
        assert_eq!(a.encode(&t, "abc"), Some(vec![5, 6, 7]));
        assert_eq!(a.encode(&t, "abz"), None);
        assert_eq!(a.decode(&t, &[5, END_OF_NAME, 6]), "ab");
    }

    #[test]
    fn vocab_json_round_trip() {
        let t = Tokenizer::new(TokenizerKind::Whitespace);
        let v = Vocab::build(&t, ["reactive arthritis", "rea"]);
        assert_eq!(Vocab::from_json(&v.to_json()).unwrap(), v);
    }

    #[test]
    fn vocab_rejects_sparse_json() {
        let v = serde_json::json!({"x": 7});
        assert!(Vocab::from_json(&v).is_err());
    }
}
