//! Corpus ingestion, vocabulary and gold-structure readers.

mod bracketed;
mod conll;
mod toy;
mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub use bracketed::{parse_bracketed, read_bracketed, write_bracketed};
pub use conll::{parse_conll, read_conll, write_conll};
pub use toy::{toy_grammar_generate, ToyGrammar};
pub use vocab::{Vocab, MASK, PAD, UNK};

use crate::error::{Error, Result};
use crate::structures::DependencyGraph;

/// Multi-word constituent with inclusive bounds and its label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// A sentence with whatever gold annotation its source provides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldSentence {
    pub tokens: Vec<String>,
    /// POS tags when the source has them.
    pub tags: Option<Vec<String>>,
    pub punct: Vec<bool>,
    pub spans: Option<Vec<LabeledSpan>>,
    /// 0-based parent per token, `None` for the root.
    pub heads: Option<Vec<Option<usize>>>,
}

impl GoldSentence {
    pub fn new(tokens: Vec<String>, punctuation: &Punctuation) -> Self {
        let punct = tokens.iter().map(|t| punctuation.is_punct(t, None)).collect();
        GoldSentence {
            tokens,
            punct,
            ..GoldSentence::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unlabeled multi-word spans.
    pub fn span_set(&self) -> BTreeSet<(usize, usize)> {
        self.spans.iter().flatten().map(|s| (s.start, s.end)).collect()
    }

    pub fn dependencies(&self) -> Option<Result<DependencyGraph>> {
        self.heads.as_ref().map(|h| DependencyGraph::from_parents(h.clone()))
    }
}

/// Rule deciding which tokens are punctuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Punctuation {
    /// Tags that always mark punctuation.
    pub tags: BTreeSet<String>,
    /// Extra forms treated as punctuation.
    pub forms: BTreeSet<String>,
    /// Whether a form made only of non-alphanumeric characters counts.
    pub symbols: bool,
}

impl Default for Punctuation {
    fn default() -> Self {
        Punctuation {
            tags: ["``", "''", ",", ".", ":", "-LRB-", "-RRB-", "PUNCT"]
                .into_iter()
                .map(String::from)
                .collect(),
            forms: BTreeSet::new(),
            symbols: true,
        }
    }
}

impl Punctuation {
    /// Matches nothing.
    pub fn none() -> Self {
        Punctuation {
            tags: BTreeSet::new(),
            forms: BTreeSet::new(),
            symbols: false,
        }
    }

    pub fn is_punct(&self, form: &str, tag: Option<&str>) -> bool {
        if tag.is_some_and(|t| self.tags.contains(t)) || self.forms.contains(form) {
            return true;
        }
        self.symbols && !form.is_empty() && !form.chars().any(char::is_alphanumeric)
    }
}

/// Reads a raw corpus: one sentence per line, whitespace-separated tokens.
/// Blank lines are skipped and counted.
pub fn read_raw(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (sentences, blank) = parse_raw(&text, lowercase);
    log::info!("{}: {} sentences, {} blank lines skipped", path.display(), sentences.len(), blank);
    Ok(sentences)
}

/// Splits raw text into sentences; returns them with the number of blank lines.
pub fn parse_raw(text: &str, lowercase: bool) -> (Vec<Vec<String>>, usize) {
    let mut blank = 0;
    let mut out = Vec::new();
    for line in text.lines() {
        let tokens: Vec<String> = line
            .split_whitespace()
            .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
            .collect();
        if tokens.is_empty() {
            blank += 1;
        } else {
            out.push(tokens);
        }
    }
    (out, blank)
}
