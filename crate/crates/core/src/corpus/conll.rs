use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GoldSentence, Punctuation};
use crate::error::{Error, Result};
use crate::structures::DependencyGraph;

/// Reads CoNLL-X style rows: column 1 index, 2 form, 4 coarse tag, 7 head
/// (0 for the root). Multi-word ranges (`1-2`) and empty nodes (`1.1`) are
/// skipped; comment lines start with `#`.
pub fn parse_conll(text: &str, source: &str, punctuation: &Punctuation) -> Result<Vec<GoldSentence>> {
    let mut out = Vec::new();
    // (line number, form, tag, head)
    let mut rows: Vec<(usize, String, String, usize)> = Vec::new();
    let mut first_line = 0;
    let flush = |rows: &mut Vec<(usize, String, String, usize)>, out: &mut Vec<GoldSentence>, line: usize| -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let n = rows.len();
        let heads: Vec<Option<usize>> = rows.iter().map(|r| r.3.checked_sub(1)).collect();
        if let Some(bad) = rows.iter().find(|r| r.3 > n) {
            return Err(Error::Parse {
                path: source.to_string(),
                line: bad.0,
                msg: format!("head {} outside a sentence of {n} tokens", bad.3),
            });
        }
        DependencyGraph::from_parents(heads.clone()).map_err(|e| Error::Parse {
            path: source.to_string(),
            line,
            msg: format!("invalid dependency tree: {e}"),
        })?;
        let tags: Vec<String> = rows.iter().map(|r| r.2.clone()).collect();
        let punct = rows.iter().map(|r| punctuation.is_punct(&r.1, Some(&r.2))).collect();
        out.push(GoldSentence {
            tokens: rows.iter().map(|r| r.1.clone()).collect(),
            tags: tags.iter().any(|t| t != "_").then_some(tags),
            punct,
            spans: None,
            heads: Some(heads),
        });
        rows.clear();
        Ok(())
    };
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            flush(&mut rows, &mut out, first_line)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        let cols: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if cols.len() < 7 {
            return Err(err(format!("expected at least 7 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let idx: usize = cols[0].parse().map_err(|_| err(format!("bad token index {:?}", cols[0])))?;
        if idx != rows.len() + 1 {
            return Err(err(format!("token index {idx} out of sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| err(format!("bad head {:?}", cols[6])))?;
        if rows.is_empty() {
            first_line = line_no;
        }
        rows.push((line_no, cols[1].to_string(), cols[3].to_string(), head));
    }
    flush(&mut rows, &mut out, first_line)?;
    Ok(out)
}

pub fn read_conll(path: impl AsRef<Path>, punctuation: &Punctuation) -> Result<Vec<GoldSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, &path.display().to_string(), punctuation)
}

/// Writes 10-column rows; sentences without heads are rejected.
pub fn write_conll(sentences: &[GoldSentence]) -> Result<String> {
    let mut out = String::new();
    for (s, sent) in sentences.iter().enumerate() {
        let heads = sent.heads.as_ref().ok_or_else(|| Error::Alignment {
            index: s,
            msg: "no dependency heads to write".into(),
        })?;
        if heads.len() != sent.tokens.len() {
            return Err(Error::Alignment {
                index: s,
                msg: format!("{} heads for {} tokens", heads.len(), sent.tokens.len()),
            });
        }
        for (i, (form, head)) in sent.tokens.iter().zip(heads).enumerate() {
            let tag = sent.tags.as_ref().map_or("_", |t| t[i].as_str());
            let (h, rel) = match head {
                Some(p) => (p + 1, "dep"),
                None => (0, "root"),
            };
            writeln!(out, "{}\t{form}\t_\t{tag}\t{tag}\t_\t{h}\t{rel}\t_\t_", i + 1).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "1\tI\t_\tPRON\tPRP\t_\t2\tnsubj\t_\t_\n2\tlike\t_\tVERB\tVBP\t_\t0\troot\t_\t_\n3\tcats\t_\tNOUN\tNNS\t_\t2\tobj\t_\t_\n\n1\tHi\t_\tINTJ\tUH\t_\t0\troot\t_\t_\n2\t!\t_\tPUNCT\t.\t_\t1\tpunct\t_\t_\n";

    #[test]
    fn heads_map_to_zero_based_parents() {
        let s = parse_conll(FIXTURE, "f", &Punctuation::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].heads.as_deref().unwrap(), [Some(1), None, Some(1)]);
        let g = s[0].dependencies().unwrap().unwrap();
        assert_eq!(g.root(), 1);
        assert_eq!(s[1].punct, [false, true]);
    }

    #[test]
    fn empty_input_has_no_sentences() {
        assert!(parse_conll("", "f", &Punctuation::default()).unwrap().is_empty());
        assert!(parse_conll("\n\n# comment\n", "f", &Punctuation::default()).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let a = parse_conll(FIXTURE, "f", &Punctuation::default()).unwrap();
        let text = write_conll(&a).unwrap();
        let b = parse_conll(&text, "f", &Punctuation::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_rows_report_the_line() {
        let cases = [
            ("1\tI\t_\tPRON\n", 1),
            ("1\tI\t_\tX\t_\t_\t0\n3\tb\t_\tX\t_\t_\t1\n", 2),
            ("1\tI\t_\tX\t_\t_\tzero\n", 1),
            ("1\ta\t_\tX\t_\t_\t0\n2\tb\t_\tX\t_\t_\t7\n", 2),
        ];
        for (text, line) in cases {
            match parse_conll(text, "f", &Punctuation::default()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{other:?}"),
            }
        }
        // two roots
        assert!(parse_conll("1\ta\t_\tX\t_\t_\t0\n2\tb\t_\tX\t_\t_\t0\n", "f", &Punctuation::default()).is_err());
    }
}
