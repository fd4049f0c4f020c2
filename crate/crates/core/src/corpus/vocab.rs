use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const MASK: &str = "<mask>";

/// Token to id bijection. Ids 0, 1, 2 are `<unk>`, `<pad>`, `<mask>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK_ID: usize = 0;
    pub const PAD_ID: usize = 1;
    pub const MASK_ID: usize = 2;
    const RESERVED: [&'static str; 3] = [UNK, PAD, MASK];

    /// Keeps tokens seen at least `min_freq` times, ordered by descending
    /// frequency and then lexicographically.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !Self::RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(
            Self::RESERVED
                .iter()
                .copied()
                .chain(kept.into_iter().map(|(t, _)| t))
                .map(String::from)
                .collect(),
        )
    }

    /// Full id-ordered token list, reserved block first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[..3] != Self::RESERVED {
            return Err(Error::InvalidInput(format!("vocabulary must start with {UNK}, {PAD}, {MASK}")));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry {t}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, `<unk>` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// One non-reserved token per line; line `k` holds id `k + 3`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens[3..].join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        for (k, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: k + 1,
                    msg: "expected exactly one token".into(),
                });
            }
            tokens.push(t.to_string());
        }
        Self::from_tokens(tokens)
    }
}
