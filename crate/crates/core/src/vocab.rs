//! Closed word-level vocabulary for the toy policy.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token id. Ids are dense in `0..vocab.len()`.
pub type TokenId = usize;

/// Whitespace word-level vocabulary. Ids 0..4 are PAD, UNK, BOS, EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;
    fn try_from(f: VocabFile) -> Result<Self> {
        let words = f.tokens.into_iter().skip(4).collect::<Vec<_>>();
        Vocabulary::from_words(words)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    pub const BOS: TokenId = 2;
    pub const EOS: TokenId = 3;
    pub const NUM_SPECIAL: usize = 4;

    /// Builds a vocabulary from an ordered list of distinct words.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary word {w:?} is empty or contains whitespace"
                )));
            }
            if index.contains_key(&w) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w:?}")));
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Ok(Self { tokens, index })
    }

    /// Most frequent words of `texts`, ties broken lexicographically, capped so
    /// that the vocabulary (specials included) has at most `max_size` entries.
    pub fn from_corpus<'a, I>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size <= Self::NUM_SPECIAL {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size {max_size} leaves no room for words"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| ![PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN].contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - Self::NUM_SPECIAL);
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Ordinary (non-special) word ids.
    pub fn word_ids(&self) -> std::ops::Range<TokenId> {
        Self::NUM_SPECIAL..self.tokens.len()
    }

    /// Splits on whitespace; unknown words map to UNK.
    pub fn encode(&self, text: &str, append_eos: bool) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = text
            .split_whitespace()
            .map(|w| self.id(w).unwrap_or(Self::UNK))
            .collect();
        if append_eos {
            ids.push(Self::EOS);
        }
        ids
    }

    /// Joins token strings with single spaces. Every id decodes to its own
    /// token string, so `encode(decode(ids)) == ids` for in-range ids.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            words.push(self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.len(),
            })?);
        }
        Ok(words.join(" "))
    }

    /// Decodes a response, dropping a trailing EOS and any PAD/BOS tokens.
    pub fn decode_response(&self, ids: &[TokenId]) -> Result<String> {
        let body: Vec<TokenId> = ids
            .iter()
            .copied()
            .take_while(|&id| id != Self::EOS)
            .filter(|&id| id != Self::PAD && id != Self::BOS)
            .collect();
        self.decode(&body)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> Vocabulary {
        Vocabulary::from_words(["x", "y", "z", "a"]).unwrap()
    }

    #[test]
    fn specials_are_dense_and_distinct() {
        let v = abc();
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("<eos>"), Some(Vocabulary::EOS));
        assert_eq!(v.id("a"), Some(7));
        let specials = [Vocabulary::PAD, Vocabulary::UNK, Vocabulary::BOS, Vocabulary::EOS];
        for (i, s) in specials.iter().enumerate() {
            assert!(*s < v.len());
            assert!(!specials[i + 1..].contains(s));
        }
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_words(["p", "q", "r", "a"]).unwrap();
        assert_eq!(v.id("a"), Some(7));
        assert!(v.encode("", false).is_empty());
        assert_eq!(v.encode("a a", false), vec![7, 7]);
        assert_eq!(v.encode("a  zzz\n", true), vec![7, Vocabulary::UNK, Vocabulary::EOS]);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        assert!(matches!(
            abc().decode(&[99]),
            Err(Error::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn corpus_ranking_and_cap() {
        let v = Vocabulary::from_corpus(["b a b", "c b a", "d"], 6).unwrap();
        assert_eq!(v.token(4), Some("b"));
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn duplicate_words_rejected() {
        assert!(Vocabulary::from_words(["a", "a"]).is_err());
        assert!(Vocabulary::from_words(["a b"]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = abc();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_round_trip(ids in proptest::collection::vec(0usize..8, 0..40)) {
            let v = abc();
            let text = v.decode(&ids).unwrap();
            prop_assert_eq!(v.encode(&text, false), ids);
        }
    }
}
