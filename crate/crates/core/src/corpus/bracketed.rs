use std::fs;
use std::path::Path;

use super::{GoldSentence, LabeledSpan, Punctuation};
use crate::error::{Error, Result};

enum Node {
    Word(String),
    Phrase(String, Vec<Node>),
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    text: &'a str,
}

impl<'a> Reader<'a> {
    fn skip_space(&mut self) {
        while self.chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
    }

    fn atom(&mut self) -> &'a str {
        let start = self.chars.peek().map_or(self.text.len(), |&(i, _)| i);
        while self.chars.next_if(|(_, c)| !c.is_whitespace() && *c != '(' && *c != ')').is_some() {}
        let end = self.chars.peek().map_or(self.text.len(), |&(i, _)| i);
        &self.text[start..end]
    }

    fn node(&mut self) -> std::result::Result<Node, String> {
        self.skip_space();
        match self.chars.peek() {
            None => Err("unexpected end of line".into()),
            Some((_, ')')) => Err("unbalanced ')'".into()),
            Some((_, '(')) => {
                self.chars.next();
                self.skip_space();
                let label = self.atom().to_string();
                let mut children = Vec::new();
                loop {
                    self.skip_space();
                    match self.chars.peek() {
                        None => return Err("unbalanced '(': missing ')'".into()),
                        Some((_, ')')) => {
                            self.chars.next();
                            break;
                        }
                        _ => children.push(self.node()?),
                    }
                }
                if children.is_empty() {
                    return Err(format!("empty constituent ({label})"));
                }
                Ok(Node::Phrase(label, children))
            }
            Some(_) => Ok(Node::Word(self.atom().to_string())),
        }
    }
}

/// `NP-SBJ-1` and `NP=2` become `NP`.
fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    label.split(['-', '=']).next().unwrap_or(label)
}

struct Collector<'p> {
    punctuation: &'p Punctuation,
    tokens: Vec<String>,
    tags: Vec<String>,
    spans: Vec<LabeledSpan>,
}

impl Collector<'_> {
    /// Returns the stripped-token range covered by `node`, if any.
    fn visit(&mut self, node: &Node) -> Option<(usize, usize)> {
        match node {
            Node::Word(w) => self.word(w, None),
            Node::Phrase(tag, children) if children.len() == 1 && matches!(children[0], Node::Word(_)) => {
                let Node::Word(w) = &children[0] else { unreachable!() };
                if tag == "-NONE-" {
                    return None;
                }
                self.word(w, Some(tag))
            }
            Node::Phrase(label, children) => {
                let mut range: Option<(usize, usize)> = None;
                for c in children {
                    if let Some((l, r)) = self.visit(c) {
                        range = Some(range.map_or((l, r), |(a, _)| (a, r)));
                    }
                }
                if let Some((l, r)) = range {
                    if r > l && !label.is_empty() {
                        self.spans.push(LabeledSpan {
                            start: l,
                            end: r,
                            label: base_label(label).to_string(),
                        });
                    }
                }
                range
            }
        }
    }

    fn word(&mut self, w: &str, tag: Option<&str>) -> Option<(usize, usize)> {
        if self.punctuation.is_punct(w, tag) {
            return None;
        }
        self.tokens.push(w.to_string());
        self.tags.push(tag.unwrap_or("_").to_string());
        Some((self.tokens.len() - 1, self.tokens.len() - 1))
    }
}

/// Parses one tree per non-blank line. Punctuation and `-NONE-` leaves are
/// removed before spans are extracted; kept spans have at least two words.
/// Unlabeled root brackets (`( (S ...) )`) contribute no span of their own.
pub fn parse_bracketed(text: &str, source: &str, punctuation: &Punctuation) -> Result<Vec<GoldSentence>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: k + 1,
            msg,
        };
        let mut reader = Reader {
            chars: line.char_indices().peekable(),
            text: line,
        };
        let tree = reader.node().map_err(err)?;
        reader.skip_space();
        if reader.chars.peek().is_some() {
            return Err(err("trailing characters after the tree (unbalanced ')'?)".into()));
        }
        let mut c = Collector {
            punctuation,
            tokens: Vec::new(),
            tags: Vec::new(),
            spans: Vec::new(),
        };
        c.visit(&tree);
        c.spans.sort();
        c.spans.dedup();
        let has_tags = c.tags.iter().any(|t| t != "_");
        out.push(GoldSentence {
            punct: vec![false; c.tokens.len()],
            tokens: c.tokens,
            tags: has_tags.then_some(c.tags),
            spans: Some(c.spans),
            heads: None,
        });
    }
    Ok(out)
}

pub fn read_bracketed(path: impl AsRef<Path>, punctuation: &Punctuation) -> Result<Vec<GoldSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bracketed(&text, &path.display().to_string(), punctuation)
}

/// Writes one tree per line from labeled spans. Words are wrapped in their
/// tags when present, and the tree sits inside an unlabeled root bracket.
/// Spans must nest; crossing spans are rejected.
pub fn write_bracketed(sentences: &[GoldSentence]) -> Result<String> {
    let mut out = String::new();
    for (index, sent) in sentences.iter().enumerate() {
        let mut spans: Vec<&LabeledSpan> = sent.spans.iter().flatten().collect();
        spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        let mut stack: Vec<usize> = Vec::new();
        let mut next = 0;
        out.push('(');
        let word = |out: &mut String, i: usize| match sent.tags.as_ref() {
            Some(tags) => out.push_str(&format!(" ({} {})", tags[i], sent.tokens[i])),
            None => out.push_str(&format!(" {}", sent.tokens[i])),
        };
        for s in spans {
            if s.start > s.end || s.end >= sent.len() {
                return Err(Error::Alignment {
                    index,
                    msg: format!("span ({}, {}) outside a sentence of {} tokens", s.start, s.end, sent.len()),
                });
            }
            while let Some(&end) = stack.last() {
                if s.start > end {
                    while next <= end {
                        word(&mut out, next);
                        next += 1;
                    }
                    out.push(')');
                    stack.pop();
                } else {
                    break;
                }
            }
            if stack.last().is_some_and(|&end| s.end > end) {
                return Err(Error::Alignment {
                    index,
                    msg: format!("span ({}, {}) crosses another span", s.start, s.end),
                });
            }
            while next < s.start {
                word(&mut out, next);
                next += 1;
            }
            out.push_str(&format!(" ({}", s.label));
            stack.push(s.end);
        }
        while let Some(end) = stack.pop() {
            while next <= end {
                word(&mut out, next);
                next += 1;
            }
            out.push(')');
        }
        while next < sent.len() {
            word(&mut out, next);
            next += 1;
        }
        out.push_str(")\n");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Vec<GoldSentence> {
        parse_bracketed(text, "fixture", &Punctuation::default()).unwrap()
    }

    #[test]
    fn fig_one_example() {
        let s = &parse("(S (NP I) (VP like (NP cats)))")[0];
        assert_eq!(s.tokens, ["I", "like", "cats"]);
        assert_eq!(s.span_set(), [(0, 2), (1, 2)].into_iter().collect());
        let labels: Vec<&str> = s.spans.as_ref().unwrap().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["S", "VP"]);
    }

    #[test]
    fn single_token_tree_has_no_spans() {
        let s = &parse("(NP cats)")[0];
        assert_eq!(s.tokens, ["cats"]);
        assert!(s.span_set().is_empty());
    }

    #[test]
    fn punctuation_is_removed_before_spans() {
        let s = &parse("(S (S (NP I) (VP left)) (, ,) (S (NP you) (VP stayed)))")[0];
        assert_eq!(s.tokens, ["I", "left", "you", "stayed"]);
        assert_eq!(s.span_set(), [(0, 1), (0, 3), (2, 3)].into_iter().collect());
    }

    #[test]
    fn ptb_conventions() {
        let s = &parse("( (S (NP-SBJ (-NONE- *T*) (DT the) (NN dog)) (VP (VBD barked)) (. .)) )")[0];
        assert_eq!(s.tokens, ["the", "dog", "barked"]);
        assert_eq!(s.tags.as_deref().unwrap(), ["DT", "NN", "VBD"]);
        let spans = s.spans.as_ref().unwrap();
        assert!(spans.contains(&LabeledSpan {
            start: 0,
            end: 1,
            label: "NP".into()
        }));
        assert_eq!(s.span_set(), [(0, 1), (0, 2)].into_iter().collect());
    }

    #[test]
    fn unbalanced_brackets_report_the_line() {
        for bad in ["(S (NP I) (VP like)\n", "(S (NP I)))\n", "\n(S (NP I) (VP like cats)\n"] {
            match parse_bracketed(bad, "f.txt", &Punctuation::default()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, bad.lines().position(|l| !l.is_empty()).unwrap() + 1),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn writer_round_trips() {
        let text = "(S (NP (DT the) (NN dog)) (VP (VBD saw) (NP (DT a) (NN cat))))\n(S (NP a b) (VP c))\n";
        let a = parse(text);
        let b = parse(&write_bracketed(&a).unwrap());
        assert_eq!(a, b);
        let toy = crate::corpus::toy_grammar_generate(3, 20);
        let back = parse(&write_bracketed(&toy).unwrap());
        for (t, b) in toy.iter().zip(&back) {
            assert_eq!(t.tokens, b.tokens);
            assert_eq!(t.span_set(), b.span_set());
        }
    }

    #[test]
    fn writer_rejects_crossing_spans() {
        let mut s = parse("(S (A a b) c)").remove(0);
        s.spans.as_mut().unwrap().push(LabeledSpan {
            start: 1,
            end: 2,
            label: "B".into(),
        });
        assert!(write_bracketed(&[s]).is_err());
    }
}
