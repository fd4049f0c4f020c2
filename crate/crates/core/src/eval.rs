//! Unsupervised parsing metrics and trivial baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldSentence, Vocab};
use crate::depdist::decode_parents;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::structures::{
    argmax_leftmost, distance_to_tree, joint_parse, tree_spans, ConstituencyTree, SyntacticDistances, SyntacticHeights,
};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn check_len(index: usize, predicted: usize, gold: usize) -> Result<()> {
    if predicted != gold {
        return Err(Error::Alignment {
            index,
            msg: format!("prediction covers {predicted} tokens, gold has {gold}"),
        });
    }
    Ok(())
}

/// Multi-word spans of each tree, checked against the gold lengths.
fn predicted_spans(predicted: &[ConstituencyTree], gold: &[GoldSentence]) -> Result<Vec<BTreeSet<(usize, usize)>>> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold sentences",
            predicted.len(),
            gold.len()
        )));
    }
    predicted
        .iter()
        .zip(gold)
        .enumerate()
        .map(|(index, (tree, g))| {
            check_len(index, tree.len(), g.len())?;
            Ok(tree_spans(tree))
        })
        .collect()
}

fn check_spans(predicted: &[BTreeSet<(usize, usize)>], gold: &[GoldSentence]) -> Result<()> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold sentences",
            predicted.len(),
            gold.len()
        )));
    }
    for (index, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if let Some(&(l, r)) = p.iter().find(|&&(l, r)| l > r || r >= g.len()) {
            return Err(Error::Alignment {
                index,
                msg: format!("span ({l}, {r}) outside a sentence of {} tokens", g.len()),
            });
        }
    }
    Ok(())
}

/// Micro-averaged span precision, recall and F1 in percent. Spans of one
/// word are ignored on both sides; the whole-sentence span counts.
pub fn unlabeled_f1(predicted: &[ConstituencyTree], gold: &[GoldSentence]) -> Result<F1> {
    span_f1(&predicted_spans(predicted, gold)?, gold)
}

/// [`unlabeled_f1`] over arbitrary (possibly non-binary) span sets.
pub fn span_f1(predicted: &[BTreeSet<(usize, usize)>], gold: &[GoldSentence]) -> Result<F1> {
    check_spans(predicted, gold)?;
    let (mut hit, mut n_pred, mut n_gold) = (0, 0, 0);
    for (p, g) in predicted.iter().zip(gold) {
        let p: BTreeSet<(usize, usize)> = p.iter().copied().filter(|(l, r)| r > l).collect();
        let gs: BTreeSet<(usize, usize)> = g.span_set().into_iter().filter(|(l, r)| r > l).collect();
        hit += p.intersection(&gs).count();
        n_pred += p.len();
        n_gold += gs.len();
    }
    let (precision, recall) = (percent(hit, n_pred), percent(hit, n_gold));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1 { precision, recall, f1 })
}

/// Percentage of gold spans labeled `label` whose boundaries the prediction
/// contains; `None` when the label never occurs.
pub fn label_recall(predicted: &[ConstituencyTree], gold: &[GoldSentence], label: &str) -> Result<Option<f64>> {
    span_label_recall(&predicted_spans(predicted, gold)?, gold, label)
}

pub fn span_label_recall(predicted: &[BTreeSet<(usize, usize)>], gold: &[GoldSentence], label: &str) -> Result<Option<f64>> {
    check_spans(predicted, gold)?;
    let (mut hit, mut total) = (0, 0);
    for (p, g) in predicted.iter().zip(gold) {
        for s in g.spans.iter().flatten().filter(|s| s.label == label && s.end > s.start) {
            total += 1;
            hit += usize::from(p.contains(&(s.start, s.end)));
        }
    }
    Ok((total > 0).then(|| percent(hit, total)))
}

/// Every label present in the gold spans.
pub fn gold_labels(gold: &[GoldSentence]) -> BTreeSet<String> {
    gold.iter()
        .flat_map(|g| g.spans.iter().flatten().map(|s| s.label.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub uas: f64,
    pub uuas: f64,
    /// Gold arcs between non-punctuation tokens; the denominator of both scores.
    pub edges: usize,
}

/// Both scores are fractions of the gold arcs between non-punctuation
/// tokens. UAS counts an arc when the predicted arc has the same direction,
/// UUAS when the predicted edge set contains it in either direction. Roots
/// contribute no arc, so UUAS is never below UAS.
pub fn attachment_scores(predicted: &[Vec<Option<usize>>], gold: &[Vec<Option<usize>>], punct: &[Vec<bool>]) -> Result<Attachment> {
    if predicted.len() != gold.len() || gold.len() != punct.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions, {} gold sentences, {} punctuation masks",
            predicted.len(),
            gold.len(),
            punct.len()
        )));
    }
    let (mut directed, mut undirected, mut edges) = (0, 0, 0);
    for (index, ((p, g), m)) in predicted.iter().zip(gold).zip(punct).enumerate() {
        check_len(index, p.len(), g.len())?;
        check_len(index, m.len(), g.len())?;
        let arcs = |parents: &[Option<usize>]| -> Vec<(usize, usize)> {
            parents
                .iter()
                .enumerate()
                .filter_map(|(i, q)| q.map(|q| (i, q)))
                .filter(|&(a, b)| !m[a] && !m[b])
                .collect()
        };
        let (pa, ga) = (arcs(p), arcs(g));
        let pe: BTreeSet<(usize, usize)> = pa.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        directed += ga.iter().filter(|arc| pa.contains(arc)).count();
        undirected += ga.iter().filter(|&&(a, b)| pe.contains(&(a.min(b), a.max(b)))).count();
        edges += ga.len();
    }
    Ok(Attachment {
        uas: percent(directed, edges),
        uuas: percent(undirected, edges),
        edges,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Left,
    Right,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Baseline::Random),
            "left" => Ok(Baseline::Left),
            "right" => Ok(Baseline::Right),
            other => Err(Error::Config(format!("baseline must be random, left or right, got {other}"))),
        }
    }
}

fn random_values(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| k as f64).collect();
    v.shuffle(rng);
    v
}

/// Baseline trees for sentences of the given lengths. The random baseline
/// splits at a uniformly random order of split points, drawn from `seed`.
pub fn baseline_trees(lengths: &[usize], kind: Baseline, seed: u64) -> Result<Vec<ConstituencyTree>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&n| match kind {
            Baseline::Left => ConstituencyTree::left_branching(n),
            Baseline::Right => ConstituencyTree::right_branching(n),
            Baseline::Random => {
                let tau = SyntacticDistances(random_values(n.saturating_sub(1), &mut rng));
                distance_to_tree(&vec![(); n], &tau)
            }
        })
        .collect()
}

/// Random projective dependency trees: joint parses of random distance and
/// height orders.
pub fn random_parent_baseline(lengths: &[usize], seed: u64) -> Result<Vec<Vec<Option<usize>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&n| {
            let tau = SyntacticDistances(random_values(n.saturating_sub(1), &mut rng));
            let delta = SyntacticHeights(random_values(n, &mut rng));
            Ok(joint_parse(&vec![(); n], &tau, &delta)?.dependencies.parents().to_vec())
        })
        .collect()
}

/// Model readout of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tree: ConstituencyTree,
    /// Decoded parents; the tallest token is the root.
    pub parents: Vec<Option<usize>>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Parents from the argmax of each row of the parent distribution, with the
/// token of greatest height (leftmost on ties) taken as the root.
pub fn rooted_parents(decoded: &[Option<usize>], delta: &[f64]) -> Vec<Option<usize>> {
    let mut parents = decoded.to_vec();
    if !delta.is_empty() {
        parents[argmax_leftmost(delta)] = None;
    }
    parents
}

/// Trees from the distances and dependencies from the parent distribution.
pub fn predict<F: Real>(model: &Model<F>, sentences: &[Vec<usize>], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(batch_size.max(1)) {
        for s in model.structures(chunk)? {
            let n = s.delta.len();
            let tree = distance_to_tree(&vec![(); n], &SyntacticDistances(s.tau.clone()))?;
            let parents = rooted_parents(&decode_parents(&s.parents), &s.delta);
            out.push(Prediction {
                tree,
                parents,
                tau: s.tau,
                delta: s.delta,
            });
        }
    }
    Ok(out)
}

/// Corpus-level parsing report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseEvalReport {
    pub uf1: f64,
    pub precision: f64,
    pub recall: f64,
    pub label_recall: BTreeMap<String, f64>,
    pub uas: Option<f64>,
    pub uuas: Option<f64>,
    pub sentences: usize,
    pub tokens: usize,
}

/// Scores trees against gold spans and, when both sides have them, parents
/// against gold heads.
pub fn evaluate_parses(
    trees: &[ConstituencyTree],
    parents: Option<&[Vec<Option<usize>>]>,
    gold: &[GoldSentence],
) -> Result<ParseEvalReport> {
    evaluate_span_sets(&predicted_spans(trees, gold)?, parents, gold)
}

/// [`evaluate_parses`] over span sets.
pub fn evaluate_span_sets(
    spans: &[BTreeSet<(usize, usize)>],
    parents: Option<&[Vec<Option<usize>>]>,
    gold: &[GoldSentence],
) -> Result<ParseEvalReport> {
    let mut report = ParseEvalReport {
        sentences: gold.len(),
        tokens: gold.iter().map(|g| g.punct.iter().filter(|&&p| !p).count()).sum(),
        ..ParseEvalReport::default()
    };
    if gold.iter().all(|g| g.spans.is_some()) {
        let f = span_f1(spans, gold)?;
        report.uf1 = f.f1;
        report.precision = f.precision;
        report.recall = f.recall;
        for label in gold_labels(gold) {
            if let Some(r) = span_label_recall(spans, gold, &label)? {
                report.label_recall.insert(label, r);
            }
        }
    }
    if let Some(parents) = parents {
        let heads: Option<Vec<Vec<Option<usize>>>> = gold.iter().map(|g| g.heads.clone()).collect();
        if let Some(heads) = heads {
            let masks: Vec<Vec<bool>> = gold.iter().map(|g| g.punct.clone()).collect();
            let a = attachment_scores(parents, &heads, &masks)?;
            report.uas = Some(a.uas);
            report.uuas = Some(a.uuas);
        }
    }
    Ok(report)
}

/// Checks that predictions and gold cover the same tokens, mapping OOV gold
/// words through the vocabulary so `<unk>` matches.
pub fn check_alignment(vocab: &Vocab, inputs: &[Vec<usize>], gold: &[GoldSentence]) -> Result<()> {
    if inputs.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} input sentences, {} gold sentences",
            inputs.len(),
            gold.len()
        )));
    }
    for (index, (ids, g)) in inputs.iter().zip(gold).enumerate() {
        if *ids != vocab.encode(&g.tokens) {
            return Err(Error::Alignment {
                index,
                msg: "tokens differ from the gold sentence".into(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

/// Per-metric mean and standard deviation over several runs.
pub fn aggregate(reports: &[ParseEvalReport]) -> BTreeMap<String, MeanStd> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in flatten(r) {
            columns.entry(k).or_default().push(v);
        }
    }
    columns.into_iter().map(|(k, v)| (k, mean_std(&v))).collect()
}

fn flatten(r: &ParseEvalReport) -> Vec<(String, f64)> {
    let mut out = vec![
        ("uf1".to_string(), r.uf1),
        ("precision".to_string(), r.precision),
        ("recall".to_string(), r.recall),
    ];
    out.extend(r.uas.map(|v| ("uas".to_string(), v)));
    out.extend(r.uuas.map(|v| ("uuas".to_string(), v)));
    out.extend(r.label_recall.iter().map(|(k, v)| (format!("recall.{k}"), *v)));
    out
}

/// Aligned two-column table of `metric  mean (std)`.
pub fn render_table(rows: &BTreeMap<String, MeanStd>) -> String {
    let width = rows.keys().map(String::len).max().unwrap_or(6).max(6);
    let mut out = format!("{:width$}  {:>8}  {:>6}\n", "metric", "mean", "std");
    for (k, m) in rows {
        writeln!(out, "{k:width$}  {:>8.2}  {:>6.2}", m.mean, m.std).expect("string write");
    }
    out
}
