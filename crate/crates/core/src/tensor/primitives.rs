//! Built-in differentiable primitives.

use rand::Rng;

use super::{Backward, Real, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn require_2d<F: Real>(op: &'static str, a: &Tensor<F>) -> Result<(usize, usize)> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(op, other, &[0, 0])),
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) without overflow
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct MatMul {
    ta: bool,
    tb: bool,
}

impl<F: Real> Backward<F> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let mm = |x: &Tensor<F>, y: &Tensor<F>, tx, ty| x.matmul(y, tx, ty).expect("matmul backward shapes");
        let (ga, gb) = match (self.ta, self.tb) {
            (false, false) => (needs[0].then(|| mm(g, b, false, true)), needs[1].then(|| mm(a, g, true, false))),
            (true, false) => (needs[0].then(|| mm(b, g, false, true)), needs[1].then(|| mm(a, g, false, false))),
            (false, true) => (needs[0].then(|| mm(g, b, false, false)), needs[1].then(|| mm(g, a, true, false))),
            (true, true) => (needs[0].then(|| mm(b, g, true, true)), needs[1].then(|| mm(g, a, true, true))),
        };
        vec![ga, gb]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<F: Real> Backward<F> for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let zip = |x: &Tensor<F>, f: &dyn Fn(F, F) -> F| {
            Tensor::new(g.shape(), g.data().iter().zip(x.data()).map(|(&gi, &xi)| f(gi, xi)).collect()).expect("shape")
        };
        match self {
            Binary::Add => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
            Binary::Sub => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|x| -x))],
            Binary::Mul => vec![
                needs[0].then(|| zip(b, &|gi, bi| gi * bi)),
                needs[1].then(|| zip(a, &|gi, ai| gi * ai)),
            ],
            Binary::Div => {
                let ga = needs[0].then(|| zip(b, &|gi, bi| gi / bi));
                let gb = needs[1].then(|| {
                    let data = g
                        .data()
                        .iter()
                        .zip(a.data().iter().zip(b.data()))
                        .map(|(&gi, (&ai, &bi))| -gi * ai / (bi * bi))
                        .collect();
                    Tensor::new(g.shape(), data).expect("shape")
                });
                vec![ga, gb]
            }
        }
    }
}

struct RowBroadcast {
    mul: bool,
}

impl<F: Real> Backward<F> for RowBroadcast {
    fn name(&self) -> &'static str {
        if self.mul {
            "mul_row"
        } else {
            "add_row"
        }
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (a, r) = (inputs[0], inputs[1]);
        let d = r.len();
        let ga = needs[0].then(|| {
            if self.mul {
                let data = g
                    .data()
                    .chunks(d)
                    .flat_map(|row| row.iter().zip(r.data()).map(|(&gi, &ri)| gi * ri))
                    .collect();
                Tensor::new(a.shape(), data).expect("shape")
            } else {
                g.clone()
            }
        });
        let gr = needs[1].then(|| {
            let mut acc = vec![F::zero(); d];
            if self.mul {
                for (grow, arow) in g.data().chunks(d).zip(a.data().chunks(d)) {
                    for ((s, &gi), &ai) in acc.iter_mut().zip(grow).zip(arow) {
                        *s += gi * ai;
                    }
                }
            } else {
                for grow in g.data().chunks(d) {
                    for (s, &gi) in acc.iter_mut().zip(grow) {
                        *s += gi;
                    }
                }
            }
            Tensor::new(r.shape(), acc).expect("shape")
        });
        vec![ga, gr]
    }
}

struct Scale<F>(F);

impl<F: Real> Backward<F> for Scale<F> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![Some(g.map(|x| x * self.0))]
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
}

impl<F: Real> Backward<F> for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
        }
    }

    fn backward(&self, inputs: &[&Tensor<F>], out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let x = inputs[0];
        let data: Vec<F> = match self {
            Unary::Tanh => g.data().iter().zip(out.data()).map(|(&gi, &y)| gi * (F::one() - y * y)).collect(),
            Unary::Sigmoid => g.data().iter().zip(out.data()).map(|(&gi, &y)| gi * y * (F::one() - y)).collect(),
            Unary::Relu => g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gi, &xi)| if xi > F::zero() { gi } else { F::zero() })
                .collect(),
            Unary::Softplus => g.data().iter().zip(x.data()).map(|(&gi, &xi)| gi * sigmoid(xi)).collect(),
        };
        vec![Some(Tensor::new(x.shape(), data).expect("shape"))]
    }
}

struct SoftmaxRows;

impl<F: Real> Backward<F> for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let c = out.cols();
        let mut data = Vec::with_capacity(out.len());
        for (y, gy) in out.data().chunks(c).zip(g.data().chunks(c)) {
            let dot: F = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
            data.extend(y.iter().zip(gy).map(|(&yi, &gi)| yi * (gi - dot)));
        }
        vec![Some(Tensor::new(out.shape(), data).expect("shape"))]
    }
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return;
    }
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

struct LayerNorm<F> {
    normalized: Vec<F>,
    rstd: Vec<F>,
}

impl<F: Real> Backward<F> for LayerNorm<F> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let d = gamma.len();
        let df = F::c(d as f64);
        let mut gx = Vec::with_capacity(x.len());
        let mut ggamma = vec![F::zero(); d];
        let mut gbeta = vec![F::zero(); d];
        for (r, (grow, xhat)) in g.data().chunks(d).zip(self.normalized.chunks(d)).enumerate() {
            let mut mean_g = F::zero();
            let mut mean_gx = F::zero();
            for k in 0..d {
                let gh = grow[k] * gamma.data()[k];
                mean_g += gh;
                mean_gx += gh * xhat[k];
                ggamma[k] += grow[k] * xhat[k];
                gbeta[k] += grow[k];
            }
            mean_g /= df;
            mean_gx /= df;
            let rstd = self.rstd[r];
            for k in 0..d {
                let gh = grow[k] * gamma.data()[k];
                gx.push(rstd * (gh - mean_g - xhat[k] * mean_gx));
            }
        }
        vec![
            needs[0].then(|| Tensor::new(x.shape(), gx).expect("shape")),
            needs[1].then(|| Tensor::vector(ggamma)),
            needs[2].then(|| Tensor::vector(gbeta)),
        ]
    }
}

struct Mask<F>(Vec<F>);

impl<F: Real> Backward<F> for Mask<F> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _inputs: &[&Tensor<F>], out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let data = g.data().iter().zip(&self.0).map(|(&gi, &m)| gi * m).collect();
        vec![Some(Tensor::new(out.shape(), data).expect("shape"))]
    }
}

struct GatherRows {
    ids: Vec<usize>,
}

impl<F: Real> Backward<F> for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let table = inputs[0];
        let d = table.cols();
        let mut acc = Tensor::zeros(table.shape());
        for (row, &id) in g.data().chunks(d).zip(&self.ids) {
            for (a, &gi) in acc.data_mut()[id * d..(id + 1) * d].iter_mut().zip(row) {
                *a += gi;
            }
        }
        vec![Some(acc)]
    }
}

struct Unfold {
    segments: Segments,
    half: usize,
}

impl<F: Real> Backward<F> for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let x = inputs[0];
        let d = x.cols();
        let width = 2 * self.half + 1;
        let mut gx = Tensor::zeros(x.shape());
        for s in 0..self.segments.count() {
            let range = self.segments.range(s);
            for i in range.clone() {
                for t in 0..width {
                    let Some(src) = (i + t).checked_sub(self.half) else { continue };
                    if src < range.start || src >= range.end {
                        continue;
                    }
                    let grow = &g.data()[i * width * d + t * d..i * width * d + (t + 1) * d];
                    for (a, &gi) in gx.data_mut()[src * d..(src + 1) * d].iter_mut().zip(grow) {
                        *a += gi;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct RunningMax {
    argmax: Vec<usize>,
}

impl<F: Real> Backward<F> for RunningMax {
    fn name(&self) -> &'static str {
        "running_max"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        for (&src, &gi) in self.argmax.iter().zip(g.data()) {
            gx.data_mut()[src] += gi;
        }
        vec![Some(gx)]
    }
}

struct CrossEntropy<F> {
    probs: Vec<F>,
    targets: Vec<(usize, usize)>,
}

impl<F: Real> Backward<F> for CrossEntropy<F> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let logits = inputs[0];
        let v = logits.cols();
        let scale = g.item() / F::c(self.targets.len() as f64);
        let mut gl = Tensor::zeros(logits.shape());
        for (k, &(row, class)) in self.targets.iter().enumerate() {
            let p = &self.probs[k * v..(k + 1) * v];
            let dst = &mut gl.data_mut()[row * v..(row + 1) * v];
            for (d, &pi) in dst.iter_mut().zip(p) {
                *d += pi * scale;
            }
            dst[class] -= scale;
        }
        vec![Some(gl)]
    }
}

struct Reduce {
    mean: bool,
}

impl<F: Real> Backward<F> for Reduce {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let x = inputs[0];
        let mut v = g.item();
        if self.mean {
            v /= F::c(x.len() as f64);
        }
        vec![Some(Tensor::full(x.shape(), v))]
    }
}

struct Reshape;

impl<F: Real> Backward<F> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, g: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        vec![Some(g.clone().reshape(inputs[0].shape()).expect("reshape"))]
    }
}

impl<F: Real> Tape<F> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b), ta, tb)?;
        Ok(self.record(out, &[a, b], MatMul { ta, tb }))
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary, f: impl Fn(F, F) -> F) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(<Binary as Backward<F>>::name(&op), x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, |p, q| p * q)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div, |p, q| p / q)
    }

    fn row_broadcast(&mut self, a: Var, r: Var, mul: bool) -> Result<Var> {
        let (x, row) = (self.value(a), self.value(r));
        let d = row.len();
        if row.shape().len() != 1 || x.shape().len() != 2 || x.cols() != d {
            return Err(Error::shape(if mul { "mul_row" } else { "add_row" }, x.shape(), row.shape()));
        }
        let data = x
            .data()
            .chunks(d)
            .flat_map(|xr| xr.iter().zip(row.data()).map(move |(&p, &q)| if mul { p * q } else { p + q }))
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a, r], RowBroadcast { mul }))
    }

    /// `a[i, :] + r` for every row `i`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, false)
    }

    /// `a[i, :] * r` for every row `i`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, true)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.record(out, &[a], Scale(s))
    }

    fn unary(&mut self, a: Var, op: Unary, f: impl Fn(F) -> F) -> Var {
        let out = self.value(a).map(f);
        self.record(out, &[a], op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu, |x| x.max(F::zero()))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus, softplus)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut data = x.data().to_vec();
        if c > 0 {
            for row in data.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        let out = Tensor::new(x.shape(), data).expect("shape");
        self.record(out, &[a], SoftmaxRows)
    }

    /// Per-row normalization to zero mean and unit variance, then `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = gv.len();
        if xv.cols() != d || bv.len() != d || xv.shape().len() != 2 {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let eps = F::c(eps);
        let df = F::c(d as f64);
        let mut normalized = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let r = F::one() / (var + eps).sqrt();
            rstd.push(r);
            for k in 0..d {
                let n = (row[k] - mean) * r;
                normalized.push(n);
                data.push(n * gv.data()[k] + bv.data()[k]);
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.record(out, &[x, gamma, beta], LayerNorm { normalized, rstd }))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = F::c(1.0 / (1.0 - rate));
        let x = self.value(a);
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a], Mask(mask)))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = require_2d("gather_rows", t)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::InvalidInput(format!("gather_rows: index {id} out of range for {rows} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.record(out, &[table], GatherRows { ids: ids.to_vec() }))
    }

    /// Sliding windows of width `2 * half + 1` within each segment, zero padded.
    /// Output row `i` is the concatenation of rows `i - half ..= i + half`.
    pub fn unfold(&mut self, x: Var, segments: &Segments, half: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = require_2d("unfold", xv)?;
        if n != segments.total() {
            return Err(Error::shape("unfold", xv.shape(), &[segments.total(), d]));
        }
        let width = 2 * half + 1;
        let mut data = vec![F::zero(); n * width * d];
        for s in 0..segments.count() {
            let range = segments.range(s);
            for i in range.clone() {
                for t in 0..width {
                    let Some(src) = (i + t).checked_sub(half) else { continue };
                    if src < range.start || src >= range.end {
                        continue;
                    }
                    data[i * width * d + t * d..i * width * d + (t + 1) * d].copy_from_slice(xv.row(src));
                }
            }
        }
        let out = Tensor::new(&[n, width * d], data)?;
        Ok(self.record(
            out,
            &[x],
            Unfold {
                segments: segments.clone(),
                half,
            },
        ))
    }

    /// 1-D convolution along the packed sequence axis with zero padding at
    /// sentence boundaries. `weight` is `[(2 * half + 1) * d_in, d_out]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, segments: &Segments, half: usize) -> Result<Var> {
        let cols = self.unfold(x, segments, half)?;
        let y = self.matmul(cols, weight)?;
        self.add_row(y, bias)
    }

    /// Running maximum over the previous `window` entries (inclusive) of a
    /// vector, restarted at every segment. With `reverse`, the window looks
    /// forward instead. Gradient routes to the leftmost maximizer.
    pub fn running_max(&mut self, x: Var, segments: &Segments, window: usize, reverse: bool) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != segments.total() || window == 0 {
            return Err(Error::shape("running_max", xv.shape(), &[segments.total()]));
        }
        let vals = xv.data();
        let mut out = Vec::with_capacity(vals.len());
        let mut argmax = Vec::with_capacity(vals.len());
        for s in 0..segments.count() {
            let range = segments.range(s);
            for k in range.clone() {
                let (lo, hi) = if reverse {
                    (k, (k + window).min(range.end))
                } else {
                    ((k + 1).saturating_sub(window).max(range.start), k + 1)
                };
                let mut best = lo;
                for j in lo + 1..hi {
                    if vals[j] > vals[best] {
                        best = j;
                    }
                }
                out.push(vals[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        Ok(self.record(out, &[x], RunningMax { argmax }))
    }

    /// Mean negative log-likelihood of `targets` given as `(row, class)` pairs.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, v) = require_2d("cross_entropy", lv)?;
        if targets.is_empty() {
            return Err(Error::InvalidInput("cross_entropy: no targets".into()));
        }
        let mut probs = Vec::with_capacity(targets.len() * v);
        let mut total = F::zero();
        for &(row, class) in targets {
            if row >= rows || class >= v {
                return Err(Error::InvalidInput(format!("cross_entropy: target ({row}, {class}) out of range")));
            }
            let mut p = lv.row(row).to_vec();
            softmax_in_place(&mut p);
            total -= p[class].max(F::min_positive_value()).ln();
            probs.extend_from_slice(&p);
        }
        let out = Tensor::scalar(total / F::c(targets.len() as f64));
        Ok(self.record(
            out,
            &[logits],
            CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, &[a], Reduce { mean: false })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / F::c(x.len().max(1) as f64));
        self.record(out, &[a], Reduce { mean: true })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(out, &[a], Reshape))
    }
}
