//! Syntactic distances and heights, and the discrete trees they encode.
//!
//! Distances `tau[k]` score the split point between tokens `k` and `k + 1`;
//! the sentence is split recursively at the largest distance. Heights
//! `delta[i]` score tokens; within every constituent the token of maximal
//! height heads it. Ties resolve to the leftmost split point and, between
//! two sibling heads, to the left one.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One real per split point between consecutive tokens (`n - 1` values).
/// Both sentence boundaries carry an implicit distance of `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntacticDistances(pub Vec<f64>);

/// One real per token (`n` values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntacticHeights(pub Vec<f64>);

impl SyntacticDistances {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of tokens these distances describe.
    pub fn tokens(&self) -> usize {
        self.0.len() + 1
    }
}

impl SyntacticHeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Unlabeled binary tree whose leaves are token indices in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstituencyTree {
    Leaf(usize),
    Node(Box<ConstituencyTree>, Box<ConstituencyTree>),
}

impl ConstituencyTree {
    pub fn node(left: ConstituencyTree, right: ConstituencyTree) -> Self {
        ConstituencyTree::Node(Box::new(left), Box::new(right))
    }

    /// Leftmost and rightmost leaf index.
    pub fn bounds(&self) -> (usize, usize) {
        match self {
            ConstituencyTree::Leaf(i) => (*i, *i),
            ConstituencyTree::Node(l, r) => (l.bounds().0, r.bounds().1),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            ConstituencyTree::Leaf(i) => out.push(*i),
            ConstituencyTree::Node(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn len(&self) -> usize {
        let (lo, hi) = self.bounds();
        hi - lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when the in-order leaves are exactly `0..n`.
    pub fn is_well_formed(&self) -> bool {
        self.leaves().iter().enumerate().all(|(k, &i)| k == i)
    }

    /// Inclusive `(start, end)` of every internal node.
    pub fn spans(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        self.collect_spans(&mut out);
        out
    }

    fn collect_spans(&self, out: &mut BTreeSet<(usize, usize)>) {
        if let ConstituencyTree::Node(l, r) = self {
            out.insert(self.bounds());
            l.collect_spans(out);
            r.collect_spans(out);
        }
    }

    pub fn right_branching(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("tree over zero tokens".into()));
        }
        let mut tree = ConstituencyTree::Leaf(n - 1);
        for i in (0..n - 1).rev() {
            tree = ConstituencyTree::node(ConstituencyTree::Leaf(i), tree);
        }
        Ok(tree)
    }

    pub fn left_branching(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("tree over zero tokens".into()));
        }
        let mut tree = ConstituencyTree::Leaf(0);
        for i in 1..n {
            tree = ConstituencyTree::node(tree, ConstituencyTree::Leaf(i));
        }
        Ok(tree)
    }

    /// Bracketed rendering with the given leaf labels, e.g. `(I (like cats))`.
    pub fn render<S: AsRef<str>>(&self, words: &[S]) -> String {
        match self {
            ConstituencyTree::Leaf(i) => words.get(*i).map(|w| w.as_ref().to_string()).unwrap_or_else(|| i.to_string()),
            ConstituencyTree::Node(l, r) => format!("({} {})", l.render(words), r.render(words)),
        }
    }
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render::<&str>(&[]))
    }
}

/// Single-rooted projective dependency tree: one parent per non-root token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    parents: Vec<Option<usize>>,
    root: usize,
}

impl DependencyGraph {
    /// Validates that exactly one token lacks a parent and that no cycle exists.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::InvalidInput("dependency graph over zero tokens".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        let [root] = roots[..] else {
            return Err(Error::InvalidInput(format!("expected exactly one root, found {}", roots.len())));
        };
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == i {
                    return Err(Error::InvalidInput(format!("token {i} has invalid parent {p}")));
                }
            }
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::InvalidInput(format!("cycle through token {start}")));
                }
            }
        }
        Ok(DependencyGraph { parents, root })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// `(dependent, parent)` pairs in dependent order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.parents.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect()
    }
}

/// Recursive split at the leftmost largest distance.
pub fn distance_to_tree<W>(words: &[W], tau: &SyntacticDistances) -> Result<ConstituencyTree> {
    check_lengths(words.len(), tau.0.len(), None)?;
    Ok(split(&tau.0, 0, words.len() - 1))
}

fn split(tau: &[f64], lo: usize, hi: usize) -> ConstituencyTree {
    if lo == hi {
        return ConstituencyTree::Leaf(lo);
    }
    let k = argmax_leftmost(&tau[lo..hi]) + lo;
    ConstituencyTree::node(split(tau, lo, k), split(tau, k + 1, hi))
}

/// Index of the first maximum; 0 for an empty slice.
pub fn argmax_leftmost(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

fn check_lengths(n: usize, n_tau: usize, n_delta: Option<usize>) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("empty word sequence".into()));
    }
    if n_tau + 1 != n {
        return Err(Error::InvalidInput(format!("{n} tokens need {} distances, got {n_tau}", n - 1)));
    }
    if let Some(m) = n_delta {
        if m != n {
            return Err(Error::InvalidInput(format!("{n} tokens need {n} heights, got {m}")));
        }
    }
    Ok(())
}

/// Heads every constituent with its tallest child head; the other child's
/// head becomes its dependent.
pub fn tree_to_dependencies(tree: &ConstituencyTree, delta: &SyntacticHeights) -> Result<DependencyGraph> {
    if !tree.is_well_formed() || tree.len() != delta.0.len() {
        return Err(Error::InvalidInput(format!(
            "tree over {} leaves does not match {} heights",
            tree.len(),
            delta.0.len()
        )));
    }
    let mut parents = vec![None; delta.0.len()];
    attach(tree, &delta.0, &mut parents);
    DependencyGraph::from_parents(parents)
}

fn attach(tree: &ConstituencyTree, delta: &[f64], parents: &mut [Option<usize>]) -> usize {
    match tree {
        ConstituencyTree::Leaf(i) => *i,
        ConstituencyTree::Node(l, r) => {
            let pl = attach(l, delta, parents);
            let pr = attach(r, delta, parents);
            if delta[pl] >= delta[pr] {
                parents[pr] = Some(pl);
                pl
            } else {
                parents[pl] = Some(pr);
                pr
            }
        }
    }
}

/// Output of [`joint_parse`].
#[derive(Clone, Debug, PartialEq)]
pub struct JointParse {
    pub tree: ConstituencyTree,
    pub dependencies: DependencyGraph,
    /// Height of the root token.
    pub root_height: f64,
}

/// Builds the constituency tree and the dependency graph in one recursion.
pub fn joint_parse<W>(words: &[W], tau: &SyntacticDistances, delta: &SyntacticHeights) -> Result<JointParse> {
    check_lengths(words.len(), tau.0.len(), Some(delta.0.len()))?;
    let mut parents = vec![None; words.len()];
    let (tree, _, root_height) = build(&tau.0, &delta.0, 0, words.len() - 1, &mut parents);
    Ok(JointParse {
        tree,
        dependencies: DependencyGraph::from_parents(parents)?,
        root_height,
    })
}

fn build(tau: &[f64], delta: &[f64], lo: usize, hi: usize, parents: &mut [Option<usize>]) -> (ConstituencyTree, usize, f64) {
    if lo == hi {
        return (ConstituencyTree::Leaf(lo), lo, delta[lo]);
    }
    let k = argmax_leftmost(&tau[lo..hi]) + lo;
    let (tl, pl, hl) = build(tau, delta, lo, k, parents);
    let (tr, pr, hr) = build(tau, delta, k + 1, hi, parents);
    let tree = ConstituencyTree::node(tl, tr);
    if hl >= hr {
        parents[pr] = Some(pl);
        (tree, pl, hl)
    } else {
        parents[pl] = Some(pr);
        (tree, pr, hr)
    }
}

/// Inclusive spans of every internal node of `tree`.
pub fn tree_spans(tree: &ConstituencyTree) -> BTreeSet<(usize, usize)> {
    tree.spans()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> SyntacticDistances {
        SyntacticDistances(v.to_vec())
    }

    fn heights(v: &[f64]) -> SyntacticHeights {
        SyntacticHeights(v.to_vec())
    }

    #[test]
    fn single_token_is_a_leaf() {
        let t = distance_to_tree(&["a"], &dist(&[])).unwrap();
        assert_eq!(t, ConstituencyTree::Leaf(0));
        let d = tree_to_dependencies(&t, &heights(&[0.3])).unwrap();
        assert!(d.arcs().is_empty());
        assert_eq!(d.root(), 0);
    }

    #[test]
    fn splits_at_largest_distance() {
        let t = distance_to_tree(&["a", "b", "c"], &dist(&[2.0, 1.0])).unwrap();
        assert_eq!(t.render(&["a", "b", "c"]), "(a (b c))");
    }

    #[test]
    fn fig1_like_heads_the_sentence() {
        let words = ["I", "like", "cats"];
        let t = distance_to_tree(&words, &dist(&[2.0, 1.0])).unwrap();
        assert_eq!(t.render(&words), "(I (like cats))");
        let d = tree_to_dependencies(&t, &heights(&[0.5, 2.0, 1.0])).unwrap();
        assert_eq!(d.root(), 1);
        assert_eq!(d.arcs(), vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn empty_input_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(distance_to_tree(&empty, &dist(&[])).is_err());
        assert!(joint_parse(&empty, &dist(&[]), &heights(&[])).is_err());
        assert!(distance_to_tree(&["a", "b"], &dist(&[])).is_err());
    }

    #[test]
    fn dependencies_of_hand_traced_tree() {
        let t = distance_to_tree(&[0, 1, 2], &dist(&[2.0, 1.0])).unwrap();
        let d = tree_to_dependencies(&t, &heights(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(d.arcs(), vec![(0, 1), (2, 1)]);
        assert_eq!(d.root(), 1);
    }

    #[test]
    fn ties_prefer_leftmost_split_and_left_head() {
        let t = distance_to_tree(&[0, 1, 2], &dist(&[1.0, 1.0])).unwrap();
        assert_eq!(t.to_string(), "(0 (1 2))");
        let d = tree_to_dependencies(&t, &heights(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(d.root(), 0);
        assert_eq!(d.arcs(), vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn figure_three_heights_attach_x4_to_x6() {
        // 1-based tokens x1..x8; tau3 = 4 and the sentence end bound C(x4) = [4, 8].
        let tau = dist(&[1.0, 5.0, 4.0, 2.0, 3.0, 1.5, 2.5]);
        let delta = heights(&[1.0, 5.5, 2.0, 3.5, 1.0, 4.5, 0.5, 3.0]);
        let jp = joint_parse(&[(); 8], &tau, &delta).unwrap();
        assert_eq!(jp.dependencies.parent(3), Some(5));
    }

    #[test]
    fn spans_of_small_trees() {
        let t = distance_to_tree(&[0, 1, 2], &dist(&[2.0, 1.0])).unwrap();
        assert_eq!(tree_spans(&t), [(0, 2), (1, 2)].into_iter().collect());
        assert!(tree_spans(&ConstituencyTree::Leaf(0)).is_empty());
        let n = 6;
        let chain = ConstituencyTree::right_branching(n).unwrap();
        let expected: BTreeSet<_> = (0..n - 1).map(|i| (i, n - 1)).collect();
        assert_eq!(chain.spans(), expected);
    }

    #[test]
    fn branching_baselines_render() {
        let w = ["a", "b", "c"];
        assert_eq!(ConstituencyTree::right_branching(3).unwrap().render(&w), "(a (b c))");
        assert_eq!(ConstituencyTree::left_branching(3).unwrap().render(&w), "((a b) c)");
    }

    #[test]
    fn graph_validation() {
        assert!(DependencyGraph::from_parents(vec![Some(1), None, Some(1)]).is_ok());
        assert!(DependencyGraph::from_parents(vec![None, None]).is_err());
        assert!(DependencyGraph::from_parents(vec![Some(1), Some(0), None]).is_err());
        assert!(DependencyGraph::from_parents(vec![Some(0)]).is_err());
    }

    fn distinct(len: usize) -> impl Strategy<Value = Vec<f64>> {
        Just((0..len).map(|k| k as f64).collect::<Vec<_>>()).prop_shuffle()
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| (distinct(n - 1), distinct(n)))
    }

    proptest! {
        #[test]
        fn strictly_monotone_maps_preserve_the_tree(tau in prop::collection::vec(-5.0f64..5.0, 0..15)) {
            let words = vec![(); tau.len() + 1];
            let a = distance_to_tree(&words, &dist(&tau)).unwrap();
            let mapped: Vec<f64> = tau.iter().map(|x| (x * 0.7).exp() * 3.0 - 1.0).collect();
            let b = distance_to_tree(&words, &dist(&mapped)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn dependencies_form_a_tree_rooted_at_the_tallest((tau, delta) in instance()) {
            let n = delta.len();
            let jp = joint_parse(&vec![(); n], &dist(&tau), &heights(&delta)).unwrap();
            prop_assert_eq!(jp.dependencies.arcs().len(), n - 1);
            let max = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(delta[jp.dependencies.root()], max);
            prop_assert_eq!(jp.root_height, max);
            let tree = distance_to_tree(&vec![(); n], &dist(&tau)).unwrap();
            prop_assert!(tree.is_well_formed());
            prop_assert_eq!(&jp.tree, &tree);
            prop_assert_eq!(jp.dependencies, tree_to_dependencies(&tree, &heights(&delta)).unwrap());
        }

        #[test]
        fn decreasing_heights_attach_rightward_tokens_leftward(tau in distinct(7)) {
            let delta: Vec<f64> = (0..8).map(|k| 10.0 - k as f64).collect();
            let tree = distance_to_tree(&[(); 8], &dist(&tau)).unwrap();
            let d = tree_to_dependencies(&tree, &heights(&delta)).unwrap();
            prop_assert_eq!(d.root(), 0);
            for (dep, parent) in d.arcs() {
                prop_assert!(parent < dep);
            }
        }
    }
}
