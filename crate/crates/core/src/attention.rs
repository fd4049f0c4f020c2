//! Dependency-constrained self-attention.
//!
//! Each head mixes the parent and dependent directions of the parent
//! distribution, `p_ij = p_parent P[i][j] + p_dep P[j][i]`, and gates it with
//! an unnormalized sigmoid score, `out_i = sum_j p_ij sigmoid(q_i . k_j / sqrt(d_k)) v_j`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::depdist::DependencyDistribution;
use crate::error::{Error, Result};
use crate::params::{glorot, Bindings, ParamId, ParamStore};
use crate::tensor::{Backward, Real, Segments, Tape, Tensor, Var};

/// Which relation directions the heads may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationSet {
    /// Every head attends to parents only.
    Parent,
    /// Every head attends to dependents only.
    Dependent,
    /// Each head learns its own mix.
    #[default]
    Both,
}

impl FromStr for RelationSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parent" => Ok(RelationSet::Parent),
            "dep" => Ok(RelationSet::Dependent),
            "parent+dep" | "dep+parent" => Ok(RelationSet::Both),
            other => Err(Error::Config(format!("relations must be parent, dep or parent+dep, got {other}"))),
        }
    }
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationSet::Parent => "parent",
            RelationSet::Dependent => "dep",
            RelationSet::Both => "parent+dep",
        })
    }
}

/// Per-head logits of the parent and dependent relations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadRelationWeights {
    pub w_parent: f64,
    pub w_dep: f64,
}

/// Two-way softmax `(p_parent, p_dep)`.
pub fn relation_mix(w: HeadRelationWeights) -> (f64, f64) {
    let d = w.w_parent - w.w_dep;
    let p = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    (p, 1.0 - p)
}

/// `p_ij = p_parent P[i][j] + p_dep P[j][i]`, row-major `n x n`.
pub fn propagation_prob(p: &DependencyDistribution, mix: (f64, f64)) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = mix.0 * p.get(i, j) + mix.1 * p.get(j, i);
        }
    }
    out
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn sigmoid<F: Real>(x: F) -> F {
    crate::tensor::sigmoid(x)
}

/// `sigmoid(Q K^T / sqrt(d_k))` for `n x d_k` queries and keys.
pub fn attention_gate(q: &Tensor<f64>, k: &Tensor<f64>) -> Result<Tensor<f64>> {
    if q.shape().len() != 2 || q.shape() != k.shape() {
        return Err(Error::shape("attention_gate", q.shape(), k.shape()));
    }
    let (n, dk) = (q.rows(), q.cols());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(sigmoid(dot(q.row(i), k.row(j)) * scale));
        }
    }
    Tensor::new(&[n, n], out)
}

/// `out_i = sum_j p_ij q_ij v_j` for a single head; no normalization.
pub fn constrained_attention(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    p: &DependencyDistribution,
    mix: (f64, f64),
) -> Result<Tensor<f64>> {
    let gate = attention_gate(q, k)?;
    let n = q.rows();
    if v.shape().len() != 2 || v.rows() != n || p.len() != n {
        return Err(Error::shape("constrained_attention", q.shape(), v.shape()));
    }
    let prop = propagation_prob(p, mix);
    let d = v.cols();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            let w = prop[i * n + j] * gate.data()[i * n + j];
            for (o, &x) in out[i * d..(i + 1) * d].iter_mut().zip(v.row(j)) {
                *o += w * x;
            }
        }
    }
    Tensor::new(&[n, d], out)
}

/// Geometry shared by the fused attention operations.
#[derive(Clone)]
struct Heads {
    segments: Segments,
    heads: usize,
    dk: usize,
}

impl Heads {
    fn width(&self) -> usize {
        self.heads * self.dk
    }

    fn cols(&self, h: usize) -> std::ops::Range<usize> {
        h * self.dk..(h + 1) * self.dk
    }

    fn check<F: Real>(&self, op: &'static str, q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>) -> Result<()> {
        let want = [self.segments.total(), self.width()];
        for t in [q, k, v] {
            if t.shape() != want {
                return Err(Error::shape(op, t.shape(), &want));
            }
        }
        Ok(())
    }
}

struct DependencyAttentionOp {
    geo: Heads,
}

/// Multi-head dependency-constrained attention over a packed batch.
///
/// `q`, `k`, `v` are `[N, heads * d_k]`; `parents` holds each sentence's
/// `n x n` parent matrix in the [`Segments::squares`] layout; `mix` is
/// `[heads, 2]` with rows `(p_parent, p_dep)`.
pub fn dependency_attention<F: Real>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    parents: Var,
    mix: Var,
    segments: &Segments,
    heads: usize,
) -> Result<Var> {
    let width = tape.value(q).cols();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::InvalidInput(format!("{width} columns do not split into {heads} heads")));
    }
    let geo = Heads {
        segments: segments.clone(),
        heads,
        dk: width / heads,
    };
    let (qv, kv, vv, pv, mv) = (tape.value(q), tape.value(k), tape.value(v), tape.value(parents), tape.value(mix));
    geo.check("dependency_attention", qv, kv, vv)?;
    if pv.len() != segments.squares().total() {
        return Err(Error::shape("dependency_attention", pv.shape(), &[segments.squares().total()]));
    }
    if mv.shape() != [heads, 2] {
        return Err(Error::shape("dependency_attention", mv.shape(), &[heads, 2]));
    }
    let mut out = Tensor::zeros(qv.shape());
    let squares = segments.squares();
    let scale = F::c(1.0 / (geo.dk as f64).sqrt());
    let d = geo.width();
    for s in 0..segments.count() {
        let (start, n) = (segments.start(s), segments.len_of(s));
        let pm = &pv.data()[squares.range(s)];
        for h in 0..heads {
            let (pp, pd) = (mv.data()[2 * h], mv.data()[2 * h + 1]);
            let cols = geo.cols(h);
            for i in 0..n {
                let qi = &qv.row(start + i)[cols.clone()];
                let mut acc = vec![F::zero(); geo.dk];
                for j in (0..n).filter(|&j| j != i) {
                    let p = pp * pm[i * n + j] + pd * pm[j * n + i];
                    if p == F::zero() {
                        continue;
                    }
                    let w = p * sigmoid(dot(qi, &kv.row(start + j)[cols.clone()]) * scale);
                    for (a, &x) in acc.iter_mut().zip(&vv.row(start + j)[cols.clone()]) {
                        *a += w * x;
                    }
                }
                out.data_mut()[(start + i) * d + cols.start..(start + i) * d + cols.end].copy_from_slice(&acc);
            }
        }
    }
    Ok(tape.record(out, &[q, k, v, parents, mix], DependencyAttentionOp { geo }))
}

impl<F: Real> Backward<F> for DependencyAttentionOp {
    fn name(&self) -> &'static str {
        "dependency_attention"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, grad: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (qv, kv, vv, pv, mv) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let geo = &self.geo;
        let d = geo.width();
        let squares = geo.segments.squares();
        let scale = F::c(1.0 / (geo.dk as f64).sqrt());
        let mut gq = Tensor::zeros(qv.shape());
        let mut gk = Tensor::zeros(kv.shape());
        let mut gv = Tensor::zeros(vv.shape());
        let mut gp = Tensor::zeros(pv.shape());
        let mut gm = Tensor::zeros(mv.shape());
        for s in 0..geo.segments.count() {
            let (start, n) = (geo.segments.start(s), geo.segments.len_of(s));
            let base = squares.start(s);
            let pm = &pv.data()[squares.range(s)];
            for h in 0..geo.heads {
                let (pp, pd) = (mv.data()[2 * h], mv.data()[2 * h + 1]);
                let cols = geo.cols(h);
                let (mut g_pp, mut g_pd) = (F::zero(), F::zero());
                for i in 0..n {
                    let qi = &qv.row(start + i)[cols.clone()];
                    let go = &grad.row(start + i)[cols.clone()];
                    for j in (0..n).filter(|&j| j != i) {
                        let (pij, pji) = (pm[i * n + j], pm[j * n + i]);
                        let p = pp * pij + pd * pji;
                        let kj = &kv.row(start + j)[cols.clone()];
                        let vj = &vv.row(start + j)[cols.clone()];
                        let gate = sigmoid(dot(qi, kj) * scale);
                        let gov = dot(go, vj);
                        let w = p * gate;
                        let row_v = (start + j) * d;
                        for (c, &g) in cols.clone().zip(go) {
                            gv.data_mut()[row_v + c] += w * g;
                        }
                        let g_p = gate * gov;
                        gp.data_mut()[base + i * n + j] += pp * g_p;
                        gp.data_mut()[base + j * n + i] += pd * g_p;
                        g_pp += g_p * pij;
                        g_pd += g_p * pji;
                        let g_s = p * gov * gate * (F::one() - gate) * scale;
                        if g_s == F::zero() {
                            continue;
                        }
                        let (row_q, row_k) = ((start + i) * d, (start + j) * d);
                        for (t, c) in cols.clone().enumerate() {
                            gq.data_mut()[row_q + c] += g_s * kj[t];
                            gk.data_mut()[row_k + c] += g_s * qi[t];
                        }
                    }
                }
                gm.data_mut()[2 * h] += g_pp;
                gm.data_mut()[2 * h + 1] += g_pd;
            }
        }
        vec![Some(gq), Some(gk), Some(gv), Some(gp), Some(gm)]
    }
}

struct SoftmaxAttentionOp {
    geo: Heads,
}

/// Row-softmax attention weights of head `h` for one sentence.
fn softmax_weights<F: Real>(geo: &Heads, q: &Tensor<F>, k: &Tensor<F>, start: usize, n: usize, h: usize) -> Vec<F> {
    let cols = geo.cols(h);
    let scale = F::c(1.0 / (geo.dk as f64).sqrt());
    let mut a = vec![F::zero(); n * n];
    for i in 0..n {
        let qi = &q.row(start + i)[cols.clone()];
        let row = &mut a[i * n..(i + 1) * n];
        for (j, x) in row.iter_mut().enumerate() {
            *x = dot(qi, &k.row(start + j)[cols.clone()]) * scale;
        }
        crate::tensor::softmax_in_place(row);
    }
    a
}

/// Standard scaled dot-product attention restricted to each sentence, used
/// by the baseline encoder. Shapes as in [`dependency_attention`].
pub fn softmax_attention<F: Real>(tape: &mut Tape<F>, q: Var, k: Var, v: Var, segments: &Segments, heads: usize) -> Result<Var> {
    let width = tape.value(q).cols();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::InvalidInput(format!("{width} columns do not split into {heads} heads")));
    }
    let geo = Heads {
        segments: segments.clone(),
        heads,
        dk: width / heads,
    };
    let (qv, kv, vv) = (tape.value(q), tape.value(k), tape.value(v));
    geo.check("softmax_attention", qv, kv, vv)?;
    let d = geo.width();
    let mut out = Tensor::zeros(qv.shape());
    for s in 0..segments.count() {
        let (start, n) = (segments.start(s), segments.len_of(s));
        for h in 0..heads {
            let a = softmax_weights(&geo, qv, kv, start, n, h);
            let cols = geo.cols(h);
            for i in 0..n {
                for j in 0..n {
                    let w = a[i * n + j];
                    let vj = &vv.row(start + j)[cols.clone()];
                    let row = (start + i) * d;
                    for (c, &x) in cols.clone().zip(vj) {
                        out.data_mut()[row + c] += w * x;
                    }
                }
            }
        }
    }
    Ok(tape.record(out, &[q, k, v], SoftmaxAttentionOp { geo }))
}

impl<F: Real> Backward<F> for SoftmaxAttentionOp {
    fn name(&self) -> &'static str {
        "softmax_attention"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, grad: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (qv, kv, vv) = (inputs[0], inputs[1], inputs[2]);
        let geo = &self.geo;
        let d = geo.width();
        let scale = F::c(1.0 / (geo.dk as f64).sqrt());
        let mut gq = Tensor::zeros(qv.shape());
        let mut gk = Tensor::zeros(kv.shape());
        let mut gv = Tensor::zeros(vv.shape());
        for s in 0..geo.segments.count() {
            let (start, n) = (geo.segments.start(s), geo.segments.len_of(s));
            for h in 0..geo.heads {
                let a = softmax_weights(geo, qv, kv, start, n, h);
                let cols = geo.cols(h);
                for i in 0..n {
                    let go = &grad.row(start + i)[cols.clone()];
                    let ga: Vec<F> = (0..n).map(|j| dot(go, &vv.row(start + j)[cols.clone()])).collect();
                    let inner: F = (0..n).map(|j| a[i * n + j] * ga[j]).sum();
                    let qi: Vec<F> = qv.row(start + i)[cols.clone()].to_vec();
                    for j in 0..n {
                        let w = a[i * n + j];
                        let (row_i, row_j) = ((start + i) * d, (start + j) * d);
                        for (c, &g) in cols.clone().zip(go) {
                            gv.data_mut()[row_j + c] += w * g;
                        }
                        let gs = w * (ga[j] - inner) * scale;
                        for (t, c) in cols.clone().enumerate() {
                            gq.data_mut()[row_i + c] += gs * kv.data()[row_j + c];
                            gk.data_mut()[row_j + c] += gs * qi[t];
                        }
                    }
                }
            }
        }
        vec![Some(gq), Some(gk), Some(gv)]
    }
}

/// Attention flavour of an encoder layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    /// Dependency-constrained heads.
    #[default]
    Dependency,
    /// Standard softmax heads (baseline).
    Softmax,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependency" | "structformer" => Ok(AttentionKind::Dependency),
            "softmax" | "baseline" => Ok(AttentionKind::Softmax),
            other => Err(Error::Config(format!("attention must be dependency or softmax, got {other}"))),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Dependency => "dependency",
            AttentionKind::Softmax => "softmax",
        })
    }
}

/// Projection parameters of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub kind: AttentionKind,
    pub relations: RelationSet,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    /// `[heads, 2]` relation logits, dependency kind only.
    relation_logits: Option<ParamId>,
}

impl MultiHeadAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        kind: AttentionKind,
        relations: RelationSet,
        rng: &mut impl Rng,
    ) -> Self {
        let mut proj = |name: &str, rng: &mut _| {
            let w = store.add(format!("{prefix}.{name}.weight"), glorot(d_model, d_model, rng));
            let b = store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[d_model]));
            (w, b)
        };
        let (wq, bq) = proj("query", rng);
        let (wk, bk) = proj("key", rng);
        let (wv, bv) = proj("value", rng);
        let (wo, bo) = proj("output", rng);
        let relation_logits =
            (kind == AttentionKind::Dependency).then(|| store.add(format!("{prefix}.relation"), Tensor::zeros(&[heads, 2])));
        MultiHeadAttention {
            heads,
            kind,
            relations,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            relation_logits,
        }
    }

    pub fn from_store<F: Real>(
        store: &ParamStore<F>,
        prefix: &str,
        heads: usize,
        kind: AttentionKind,
        relations: RelationSet,
    ) -> Result<Self> {
        let get = |name: String| {
            store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(MultiHeadAttention {
            heads,
            kind,
            relations,
            wq: get(format!("{prefix}.query.weight"))?,
            bq: get(format!("{prefix}.query.bias"))?,
            wk: get(format!("{prefix}.key.weight"))?,
            bk: get(format!("{prefix}.key.bias"))?,
            wv: get(format!("{prefix}.value.weight"))?,
            bv: get(format!("{prefix}.value.bias"))?,
            wo: get(format!("{prefix}.output.weight"))?,
            bo: get(format!("{prefix}.output.bias"))?,
            relation_logits: match kind {
                AttentionKind::Dependency => Some(get(format!("{prefix}.relation"))?),
                AttentionKind::Softmax => None,
            },
        })
    }

    /// Per-head `(p_parent, p_dep)` as a `[heads, 2]` tape value.
    pub fn mix<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings) -> Option<Var> {
        let logits = self.relation_logits?;
        let fixed = |pp: f64| Tensor::from_f64(&[self.heads, 2], &[pp, 1.0 - pp].repeat(self.heads)).expect("shape");
        Some(match self.relations {
            RelationSet::Both => tape.softmax(params[logits]),
            RelationSet::Parent => tape.leaf(fixed(1.0)),
            RelationSet::Dependent => tape.leaf(fixed(0.0)),
        })
    }

    /// Current relation weights of every head.
    pub fn relation_weights<F: Real>(&self, store: &ParamStore<F>) -> Vec<HeadRelationWeights> {
        let Some(id) = self.relation_logits else { return Vec::new() };
        store
            .get(id)
            .to_f64()
            .chunks(2)
            .map(|w| HeadRelationWeights {
                w_parent: w[0],
                w_dep: w[1],
            })
            .collect()
    }

    /// Mix actually applied by each head, honouring the relation subset.
    pub fn effective_mix<F: Real>(&self, store: &ParamStore<F>) -> Vec<(f64, f64)> {
        self.relation_weights(store)
            .into_iter()
            .map(|w| match self.relations {
                RelationSet::Both => relation_mix(w),
                RelationSet::Parent => (1.0, 0.0),
                RelationSet::Dependent => (0.0, 1.0),
            })
            .collect()
    }

    /// Projects `x`, attends, and applies the output projection and dropout.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        x: Var,
        parents: Option<Var>,
        segments: &Segments,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let project = |tape: &mut Tape<F>, w: ParamId, b: ParamId| -> Result<Var> {
            let y = tape.matmul(x, params[w])?;
            tape.add_row(y, params[b])
        };
        let q = project(tape, self.wq, self.bq)?;
        let k = project(tape, self.wk, self.bk)?;
        let v = project(tape, self.wv, self.bv)?;
        let attended = match self.kind {
            AttentionKind::Dependency => {
                let parents = parents.ok_or_else(|| Error::InvalidInput("dependency attention needs parent distributions".into()))?;
                let mix = self.mix(tape, params).expect("dependency heads own relation weights");
                dependency_attention(tape, q, k, v, parents, mix, segments, self.heads)?
            }
            AttentionKind::Softmax => softmax_attention(tape, q, k, v, segments, self.heads)?,
        };
        let o = tape.matmul(attended, params[self.wo])?;
        let o = tape.add_row(o, params[self.bo])?;
        tape.dropout(o, dropout, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depdist::parent_dist;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_parents(segments: &Segments, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let mut out = Vec::new();
        for n in segments.lengths() {
            let tau: Vec<f64> = (0..n.saturating_sub(1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            out.extend_from_slice(parent_dist(&tau, &delta, 0.7, 0.9).unwrap().as_slice());
        }
        Tensor::vector(out)
    }

    /// Plain loop over heads built from the single-head reference functions.
    fn reference(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, p: &DependencyDistribution, mix: &[(f64, f64)]) -> Vec<f64> {
        let heads = mix.len();
        let (n, d) = (q.rows(), q.cols());
        let dk = d / heads;
        let mut out = vec![0.0; n * d];
        for (h, &m) in mix.iter().enumerate() {
            let slice = |t: &Tensor<f64>| {
                let data: Vec<f64> = (0..n).flat_map(|i| t.row(i)[h * dk..(h + 1) * dk].to_vec()).collect();
                Tensor::new(&[n, dk], data).unwrap()
            };
            let o = constrained_attention(&slice(q), &slice(k), &slice(v), p, m).unwrap();
            for i in 0..n {
                out[i * d + h * dk..i * d + (h + 1) * dk].copy_from_slice(o.row(i));
            }
        }
        out
    }

    #[test]
    fn relation_mix_examples() {
        assert_eq!(relation_mix(HeadRelationWeights { w_parent: 0.3, w_dep: 0.3 }), (0.5, 0.5));
        let (p, d) = relation_mix(HeadRelationWeights {
            w_parent: 10.0,
            w_dep: 0.0,
        });
        assert!((p - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.99995).abs() < 1e-5);
        assert!((p + d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn propagation_mixes_a_matrix_with_its_transpose() {
        let p = parent_dist(&[0.3, -0.2], &[0.1, 0.5, -0.4], 1.0, 1.0).unwrap();
        let n = 3;
        assert_eq!(propagation_prob(&p, (1.0, 0.0)), p.as_slice());
        let dep = propagation_prob(&p, (0.0, 1.0));
        let avg = propagation_prob(&p, (0.5, 0.5));
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dep[i * n + j], p.get(j, i));
                assert_eq!(avg[i * n + j], avg[j * n + i]);
            }
        }
    }

    #[test]
    fn gates_are_half_for_zero_queries_and_bounded_otherwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random(&[4, 3], &mut rng);
        let g = attention_gate(&Tensor::zeros(&[4, 3]), &k).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.5));
        let g = attention_gate(&random(&[4, 3], &mut rng), &k).unwrap();
        assert!(g.data().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn single_open_edge_copies_the_value() {
        let n = 3;
        let mut probs = vec![0.0; n * n];
        probs[2 * n] = 1.0;
        let p = DependencyDistribution::from_rows(n, probs, 1.0, 1.0).unwrap();
        // huge aligned query/key saturate the gate to 1
        let q = Tensor::new(&[3, 1], vec![100.0, 100.0, 100.0]).unwrap();
        let v = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = constrained_attention(&q, &q, &v, &p, (1.0, 0.0)).unwrap();
        assert_eq!(out.row(2), &[1.0, 2.0]);
        assert_eq!(out.row(0), &[0.0, 0.0]);
        let zero = DependencyDistribution::from_rows(n, vec![0.0; n * n], 1.0, 1.0).unwrap();
        let out = constrained_attention(&q, &q, &v, &zero, (0.5, 0.5)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fused_operation_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let segments = Segments::from_lengths(&[4, 1, 3]);
        let heads = 2;
        let (q, k, v) = (random(&[8, 4], &mut rng), random(&[8, 4], &mut rng), random(&[8, 4], &mut rng));
        let parents = random_parents(&segments, &mut rng);
        let mix = [(0.3, 0.7), (0.9, 0.1)];
        let mut tape = Tape::inference();
        let vars: Vec<Var> = [&q, &k, &v, &parents].iter().map(|t| tape.leaf((*t).clone())).collect();
        let m = tape.leaf(Tensor::from_f64(&[2, 2], &[0.3, 0.7, 0.9, 0.1]).unwrap());
        let out = dependency_attention(&mut tape, vars[0], vars[1], vars[2], vars[3], m, &segments, heads).unwrap();
        let out = tape.value(out);
        let squares = segments.squares();
        for s in 0..segments.count() {
            let range = segments.range(s);
            let n = range.len();
            let rows = |t: &Tensor<f64>| Tensor::new(&[n, 4], t.data()[range.start * 4..range.end * 4].to_vec()).unwrap();
            let p = DependencyDistribution::from_rows(n, parents.data()[squares.range(s)].to_vec(), 1.0, 1.0).unwrap();
            let expected = reference(&rows(&q), &rows(&k), &rows(&v), &p, &mix);
            for (a, b) in out.data()[range.start * 4..range.end * 4].iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn blocked_tokens_do_not_influence_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 5;
            let mut probs: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..0.3)).collect();
            for i in 0..n {
                probs[i * n + i] = 0.0;
            }
            // block j = 3 for row i = 1 in both directions
            probs[n + 3] = 0.0;
            probs[3 * n + 1] = 0.0;
            let p = DependencyDistribution::from_rows(n, probs, 1.0, 1.0).unwrap();
            let (q, k) = (random(&[n, 2], &mut rng), random(&[n, 2], &mut rng));
            let v = random(&[n, 2], &mut rng);
            let mut moved = v.clone();
            moved.data_mut()[6] += 5.0;
            moved.data_mut()[7] -= 3.0;
            let a = constrained_attention(&q, &k, &v, &p, (0.4, 0.6)).unwrap();
            let b = constrained_attention(&q, &k, &moved, &p, (0.4, 0.6)).unwrap();
            assert_eq!(a.row(1), b.row(1));
            assert_ne!(a.row(0), b.row(0));
        }
    }

    #[test]
    fn dependency_attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let segments = Segments::from_lengths(&[3, 1, 4]);
        for _ in 0..10 {
            let inputs = vec![
                random(&[8, 4], &mut rng),
                random(&[8, 4], &mut rng),
                random(&[8, 4], &mut rng),
                random_parents(&segments, &mut rng),
                Tensor::from_f64(&[2, 2], &[0.2, 0.8, 0.6, 0.4]).unwrap(),
            ];
            let w = random(&[8, 4], &mut rng);
            let report = gradcheck::check(&inputs, 1e-6, |tape, v| {
                let o = dependency_attention(tape, v[0], v[1], v[2], v[3], v[4], &segments, 2)?;
                let w = tape.leaf(w.clone());
                let y = tape.mul(o, w)?;
                Ok(tape.sum(y))
            })
            .unwrap();
            assert!(report.max_error() < 1e-7, "{:?}", report.errors());
        }
    }

    #[test]
    fn softmax_attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let segments = Segments::from_lengths(&[3, 1, 4]);
        for _ in 0..10 {
            let inputs = vec![random(&[8, 6], &mut rng), random(&[8, 6], &mut rng), random(&[8, 6], &mut rng)];
            let w = random(&[8, 6], &mut rng);
            let report = gradcheck::check(&inputs, 1e-6, |tape, v| {
                let o = softmax_attention(tape, v[0], v[1], v[2], &segments, 3)?;
                let w = tape.leaf(w.clone());
                let y = tape.mul(o, w)?;
                Ok(tape.sum(y))
            })
            .unwrap();
            assert!(report.max_error() < 1e-7, "{:?}", report.errors());
        }
    }

    #[test]
    fn softmax_attention_rows_are_convex_combinations() {
        let segments = Segments::from_lengths(&[3]);
        let mut tape = Tape::<f64>::inference();
        let q = tape.leaf(Tensor::zeros(&[3, 2]));
        let v = tape.leaf(Tensor::from_f64(&[3, 2], &[0.0, 3.0, 3.0, 0.0, 6.0, 3.0]).unwrap());
        let o = softmax_attention(&mut tape, q, q, v, &segments, 1).unwrap();
        for r in 0..3 {
            assert!((tape.value(o).row(r)[0] - 3.0).abs() < 1e-12);
            assert!((tape.value(o).row(r)[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ablations_fix_the_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (relations, expected) in [
            (RelationSet::Parent, (1.0, 0.0)),
            (RelationSet::Dependent, (0.0, 1.0)),
            (RelationSet::Both, (0.5, 0.5)),
        ] {
            let mut store = ParamStore::<f64>::new();
            let mha = MultiHeadAttention::new(&mut store, "a", 8, 8, AttentionKind::Dependency, relations, &mut rng);
            assert_eq!(mha.effective_mix(&store), vec![expected; 8]);
            let mut tape = Tape::new();
            let params = store.bind(&mut tape);
            let m = mha.mix(&mut tape, &params).unwrap();
            assert_eq!(tape.value(m).to_f64(), [expected.0, expected.1].repeat(8));
        }
        assert!(RelationSet::from_str("both").is_err());
        assert_eq!(RelationSet::from_str("parent+dep").unwrap(), RelationSet::Both);
    }

    #[test]
    fn single_identity_head_reduces_to_constrained_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4;
        let mut store = ParamStore::<f64>::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 3, 1, AttentionKind::Dependency, RelationSet::Both, &mut rng);
        let eye = Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        for name in ["query", "key", "value", "output"] {
            store.set(&format!("a.{name}.weight"), eye.clone()).unwrap();
        }
        let x = random(&[n, 3], &mut rng);
        let p = parent_dist(&[0.2, -0.5, 0.9], &[0.1, 0.4, -0.3, 0.8], 1.0, 1.0).unwrap();
        let mut tape = Tape::inference();
        let params = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let pv = tape.leaf(Tensor::vector(p.as_slice().to_vec()));
        let out = mha
            .forward(&mut tape, &params, xv, Some(pv), &Segments::single(n), 0.0, &mut rng)
            .unwrap();
        let expected = constrained_attention(&x, &x, &x, &p, (0.5, 0.5)).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
