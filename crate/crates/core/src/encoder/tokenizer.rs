use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const BOS: usize = 0;
pub const PAD: usize = 1;
pub const UNK: usize = 2;
const RESERVED: [&str; 3] = ["<bos>", "<pad>", "<unk>"];

/// Which side of a pair a tokenizer handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Molecule,
    Text,
}

fn molecule_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[[^\]]*\]|Br|Cl|%\d{2}|[A-Za-z]|\d|[=#\-+\\/:~@?>*$.()]|\S").expect("valid molecule regex")
    })
}

fn word_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("valid word regex"))
}

/// Splits a string into tokens without mapping them to ids.
///
/// Molecules keep bracket atoms and two-letter halogens whole. Text is
/// lowercased and split into letter/digit words; punctuation is dropped.
pub fn split(modality: Modality, s: &str) -> Vec<String> {
    match modality {
        Modality::Molecule => molecule_pattern()
            .find_iter(s)
            .map(|m| m.as_str().to_string())
            .collect(),
        Modality::Text => word_pattern()
            .find_iter(&s.to_lowercase())
            .map(|m| m.as_str().to_string())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    modality: Modality,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    /// Builds a vocabulary from `texts`, most frequent tokens first and ties
    /// in lexicographic order. `max_size` counts the reserved tokens.
    pub fn build<'s>(modality: Modality, texts: impl IntoIterator<Item = &'s str>, max_size: Option<usize>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in split(modality, t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let limit = max_size.unwrap_or(usize::MAX);
        tokens.extend(
            ranked
                .into_iter()
                .map(|(t, _)| t)
                .filter(|t| !RESERVED.contains(&t.as_str())),
        );
        tokens.truncate(limit.max(RESERVED.len()));
        Tokenizer::from_tokens(modality, tokens)
    }

    /// Rebuilds a tokenizer from its token list; index 0..3 must be the reserved tokens.
    pub fn from_tokens(modality: Modality, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Tokenizer {
            modality,
            tokens,
            index,
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// `BOS` followed by the token ids, truncated to `max_len` ids in total.
    pub fn encode(&self, s: &str, max_len: usize) -> Vec<usize> {
        std::iter::once(BOS)
            .chain(split(self.modality, s).iter().map(|t| self.id(t)))
            .take(max_len)
            .collect()
    }

    /// Token strings for `ids`, skipping `BOS` and `PAD`.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.tokens.get(i).map_or(RESERVED[UNK], String::as_str))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn molecule_tokens() {
        assert_eq!(
            split(Modality::Molecule, "Clc1cc[nH+]c(Br)c1[1*]%12"),
            ["Cl", "c", "1", "c", "c", "[nH+]", "c", "(", "Br", ")", "c", "1", "[1*]", "%12"]
        );
    }

    #[test]
    fn text_tokens() {
        assert_eq!(
            split(Modality::Text, "An Amino-acid, found."),
            ["an", "amino", "acid", "found"]
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        let tok = Tokenizer::build(Modality::Molecule, ["CCO", "c1ccccc1Cl"], None);
        let ids = tok.encode("CCOCl", 256);
        assert_eq!(ids[0], BOS);
        assert_eq!(tok.decode(&ids).concat(), "CCOCl");
        assert_eq!(tok.encode("CCN", 256)[3], UNK);
        assert_eq!(tok.encode("CCCCCC", 3).len(), 3);
    }

    #[test]
    fn vocabulary_order_is_by_frequency_then_name() {
        let tok = Tokenizer::build(Modality::Text, ["b a", "a c", "a b"], None);
        assert_eq!(tok.tokens(), ["<bos>", "<pad>", "<unk>", "a", "b", "c"]);
        let small = Tokenizer::build(Modality::Text, ["b a", "a c", "a b"], Some(4));
        assert_eq!(small.vocab_size(), 4);
    }
}
