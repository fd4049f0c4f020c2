//! Differentiable parent distribution `p_D(j | i)` from distances and heights.
//!
//! For token `i` the smallest constituent it does not head is `[l, r]`, where
//! `l` and `r` are the first split points on either side whose distance
//! exceeds the token's height. Treating the height as a random variable with
//! a logistic CDF turns both boundaries into distributions; the constituent
//! head is a softmax over heights inside the span; and the parent
//! distribution marginalizes over spans.
//!
//! All indices are 0-based. `tau[k]` separates tokens `k` and `k + 1`, and
//! the boundaries before token 0 and after token `n - 1` are `+inf`.
//!
//! # Cost
//!
//! The direct marginalization over `O(n^2)` spans for each of `n^2` pairs is
//! `O(n^4)`. [`parent_dist`] and the tape operation use the factorization
//! `p_Pr(j | [l, r]) = e_j / Z_lr`: for a fixed dependent `i` the span sum
//! becomes a prefix sum over `l` (parents left of `i`) or a suffix sum over
//! `r` (parents right of `i`), giving `O(n^3)` time and `O(n^2)` memory per
//! sentence for both the forward and the backward pass.
//!
//! The kernel runs in 64-bit regardless of the tape precision and evaluates
//! the span softmax through log-sum-exp tables and running maxima, so it
//! neither overflows nor loses the dominant terms at small temperatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Segments, Tape, Tensor, Var};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-stochastic (up to the self-head mass) matrix `P[i][j] = p_D(j | i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyDistribution {
    n: usize,
    probs: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
}

impl DependencyDistribution {
    pub fn from_rows(n: usize, probs: Vec<f64>, mu1: f64, mu2: f64) -> Result<Self> {
        if probs.len() != n * n {
            return Err(Error::shape("dependency distribution", &[n, n], &[probs.len()]));
        }
        Ok(DependencyDistribution { n, probs, mu1, mu2 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n..(i + 1) * self.n]
    }

    /// Row-major values.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy (nats) of each row after renormalization.
    pub fn row_entropies(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let total: f64 = row.iter().sum();
                if total <= 0.0 {
                    return 0.0;
                }
                let h: f64 = row
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| {
                        let q = p / total;
                        -q * q.ln()
                    })
                    .sum();
                h.max(0.0)
            })
            .collect()
    }
}

/// `p(height_i > tau_k) = sigmoid((delta_i - tau_k) / mu1)`.
pub fn cdf_height_gt(delta_i: f64, tau_k: f64, mu1: f64) -> f64 {
    if tau_k == f64::INFINITY {
        return 0.0;
    }
    sigmoid((delta_i - tau_k) / mu1)
}

/// Probability that token `l` lies inside the constituent of token `i`
/// looking left; `l = i` is certain, `l < 0` impossible.
fn inside_left(i: usize, l: isize, tau: &[f64], delta_i: f64, mu1: f64) -> f64 {
    if l < 0 {
        return 0.0;
    }
    let l = l as usize;
    if l == i {
        return 1.0;
    }
    let m = tau[l..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    cdf_height_gt(delta_i, m, mu1)
}

fn inside_right(i: usize, r: usize, tau: &[f64], delta_i: f64, mu1: f64) -> f64 {
    let n = tau.len() + 1;
    if r >= n {
        return 0.0;
    }
    if r == i {
        return 1.0;
    }
    let m = tau[i..r].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    cdf_height_gt(delta_i, m, mu1)
}

/// `p(l | i)` for `l = 0..=i`.
pub fn left_boundary_dist(i: usize, tau: &[f64], delta_i: f64, mu1: f64) -> Vec<f64> {
    (0..=i)
        .map(|l| inside_left(i, l as isize, tau, delta_i, mu1) - inside_left(i, l as isize - 1, tau, delta_i, mu1))
        .collect()
}

/// `p(r | i)` for `r = i..n`; entry `k` is `r = i + k`.
pub fn right_boundary_dist(i: usize, tau: &[f64], delta_i: f64, mu1: f64) -> Vec<f64> {
    let n = tau.len() + 1;
    (i..n)
        .map(|r| inside_right(i, r, tau, delta_i, mu1) - inside_right(i, r + 1, tau, delta_i, mu1))
        .collect()
}

/// `p_C([l, r] | i)` as a row-major `n x n` matrix indexed `[l][r]`.
pub fn constituent_dist(i: usize, tau: &[f64], delta: &[f64], mu1: f64) -> Vec<f64> {
    let n = delta.len();
    let left = left_boundary_dist(i, tau, delta[i], mu1);
    let right = right_boundary_dist(i, tau, delta[i], mu1);
    let mut out = vec![0.0; n * n];
    for (l, &pl) in left.iter().enumerate() {
        for (k, &pr) in right.iter().enumerate() {
            out[l * n + i + k] = pl * pr;
        }
    }
    out
}

/// `p_Pr(j | [l, r])`: softmax of `delta / mu2` inside the span, zero outside.
pub fn span_parent_dist(l: usize, r: usize, delta: &[f64], mu2: f64) -> Vec<f64> {
    let mut out = vec![0.0; delta.len()];
    if l > r || r >= delta.len() {
        return out;
    }
    let max = delta[l..=r].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for j in l..=r {
        out[j] = ((delta[j] - max) / mu2).exp();
        total += out[j];
    }
    for p in &mut out[l..=r] {
        *p /= total;
    }
    out
}

/// `p_D(j | i)` for every pair, diagonal zero.
pub fn parent_dist(tau: &[f64], delta: &[f64], mu1: f64, mu2: f64) -> Result<DependencyDistribution> {
    check(tau, delta, mu1, mu2)?;
    let kernel = Kernel::new(tau, delta, mu1, mu2);
    let mut probs = vec![0.0; delta.len() * delta.len()];
    kernel.forward(&mut probs);
    DependencyDistribution::from_rows(delta.len(), probs, mu1, mu2)
}

fn check(tau: &[f64], delta: &[f64], mu1: f64, mu2: f64) -> Result<()> {
    if delta.is_empty() || tau.len() + 1 != delta.len() {
        return Err(Error::InvalidInput(format!(
            "{} heights need {} distances, got {}",
            delta.len(),
            delta.len().saturating_sub(1),
            tau.len()
        )));
    }
    if !(mu1 > 0.0 && mu2 > 0.0) {
        return Err(Error::InvalidInput(format!("temperatures must be positive, got {mu1}, {mu2}")));
    }
    if !tau.iter().chain(delta).chain([&mu1, &mu2]).all(|x| x.is_finite()) {
        return Err(Error::Numerical("non-finite distance, height or temperature".into()));
    }
    Ok(())
}

/// Hard decoding: `argmax_{j != i} p_D(j | i)` with ties to the leftmost `j`.
/// A one-token sentence has no candidate parent.
pub fn decode_parents(p: &DependencyDistribution) -> Vec<Option<usize>> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let mut best: Option<usize> = None;
            for j in (0..n).filter(|&j| j != i) {
                if best.is_none_or(|b| p.get(i, j) > p.get(i, b)) {
                    best = Some(j);
                }
            }
            best
        })
        .collect()
}

/// `log(exp(x) + exp(y))`.
#[inline]
fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Per-sentence intermediates shared by the forward and backward passes.
///
/// Softmax terms are only ever formed as ratios `exp(a_j - log Z_lr)` or as
/// sums rescaled by a running maximum of `a`, so every intermediate lies in
/// `[0, n]` whatever the temperature.
struct Kernel<'a> {
    n: usize,
    tau: &'a [f64],
    delta: &'a [f64],
    mu1: f64,
    mu2: f64,
    /// `[i][l]`: probability that `l` is inside the constituent of `i` (left side).
    in_left: Vec<f64>,
    /// `[i][l]`: index of the distance realizing the running max for `l < i`.
    left_arg: Vec<usize>,
    /// `[i][r]`, mirror image for the right side.
    in_right: Vec<f64>,
    right_arg: Vec<usize>,
    /// `(delta_k - max delta) / mu2`
    logits: Vec<f64>,
    /// `[l][r]`: log-sum-exp of `logits` over the span.
    log_mass: Vec<f64>,
}

/// Row-level scratch space for dependent `i`.
struct Row {
    pl: Vec<f64>,
    pr: Vec<f64>,
    /// `left_max[l] = max(logits[l..=i])` for `l <= i`.
    left_max: Vec<f64>,
    /// `right_max[r] = max(logits[i..=r])` for `r >= i`.
    right_max: Vec<f64>,
}

impl Row {
    fn new(n: usize) -> Self {
        Row {
            pl: vec![0.0; n],
            pr: vec![0.0; n],
            left_max: vec![0.0; n],
            right_max: vec![0.0; n],
        }
    }
}

impl<'a> Kernel<'a> {
    fn new(tau: &'a [f64], delta: &'a [f64], mu1: f64, mu2: f64) -> Self {
        let n = delta.len();
        let mut in_left = vec![0.0; n * n];
        let mut left_arg = vec![0; n * n];
        let mut in_right = vec![0.0; n * n];
        let mut right_arg = vec![0; n * n];
        for i in 0..n {
            in_left[i * n + i] = 1.0;
            let mut m = f64::NEG_INFINITY;
            let mut arg = 0;
            for l in (0..i).rev() {
                // moving left, an equal value is the new leftmost maximizer
                if tau[l] >= m {
                    m = tau[l];
                    arg = l;
                }
                in_left[i * n + l] = sigmoid((delta[i] - m) / mu1);
                left_arg[i * n + l] = arg;
            }
            in_right[i * n + i] = 1.0;
            let mut m = f64::NEG_INFINITY;
            let mut arg = 0;
            for r in i + 1..n {
                if tau[r - 1] > m {
                    m = tau[r - 1];
                    arg = r - 1;
                }
                in_right[i * n + r] = sigmoid((delta[i] - m) / mu1);
                right_arg[i * n + r] = arg;
            }
        }
        let top = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let logits: Vec<f64> = delta.iter().map(|&d| (d - top) / mu2).collect();
        let mut log_mass = vec![0.0; n * n];
        for l in 0..n {
            let mut acc = f64::NEG_INFINITY;
            for r in l..n {
                acc = log_add_exp(acc, logits[r]);
                log_mass[l * n + r] = acc;
            }
        }
        Kernel {
            n,
            tau,
            delta,
            mu1,
            mu2,
            in_left,
            left_arg,
            in_right,
            right_arg,
            logits,
            log_mass,
        }
    }

    fn p_left(&self, i: usize, l: usize) -> f64 {
        let n = self.n;
        let prev = if l == 0 { 0.0 } else { self.in_left[i * n + l - 1] };
        self.in_left[i * n + l] - prev
    }

    fn p_right(&self, i: usize, r: usize) -> f64 {
        let n = self.n;
        let next = if r + 1 == n { 0.0 } else { self.in_right[i * n + r + 1] };
        self.in_right[i * n + r] - next
    }

    /// Boundary distributions and running logit maxima around `i`.
    fn prepare(&self, i: usize, row: &mut Row) {
        let n = self.n;
        for l in 0..=i {
            row.pl[l] = self.p_left(i, l);
        }
        for r in i..n {
            row.pr[r] = self.p_right(i, r);
        }
        row.left_max[i] = self.logits[i];
        for l in (0..i).rev() {
            row.left_max[l] = row.left_max[l + 1].max(self.logits[l]);
        }
        row.right_max[i] = self.logits[i];
        for r in i + 1..n {
            row.right_max[r] = row.right_max[r - 1].max(self.logits[r]);
        }
    }

    /// `exp(m - log Z_lr)`, at most 1 whenever `m` is a logit inside `[l, r]`.
    #[inline]
    fn ratio(&self, m: f64, l: usize, r: usize) -> f64 {
        (m - self.log_mass[l * self.n + r]).exp()
    }

    /// Writes row `i` of the parent matrix.
    ///
    /// For `j < i`, `p(j|i) = sum_{l <= j} exp(a_j - A_l) B_l` with
    /// `A_l = max a[l..=i]` and `B_l = sum_{r >= i} p(l|i) p(r|i) exp(A_l - log Z_lr)`;
    /// the prefix over `l` is accumulated with rescaling by `A`. Parents right
    /// of `i` are the mirror image.
    fn forward_row(&self, i: usize, row: &Row, out: &mut [f64]) {
        let n = self.n;
        let mut acc = 0.0;
        for j in 0..i {
            let a = row.left_max[j];
            let mut b = 0.0;
            for r in i..n {
                b += row.pr[r] * self.ratio(a, j, r);
            }
            if j > 0 {
                acc *= (a - row.left_max[j - 1]).exp();
            }
            acc += row.pl[j] * b;
            out[j] = (self.logits[j] - a).exp() * acc;
        }
        out[i] = 0.0;
        let mut acc = 0.0;
        for j in (i + 1..n).rev() {
            let a = row.right_max[j];
            let mut c = 0.0;
            for l in 0..=i {
                c += row.pl[l] * self.ratio(a, l, j);
            }
            if j + 1 < n {
                acc *= (a - row.right_max[j + 1]).exp();
            }
            acc += row.pr[j] * c;
            out[j] = (self.logits[j] - a).exp() * acc;
        }
    }

    fn forward(&self, out: &mut [f64]) {
        let n = self.n;
        let mut row = Row::new(n);
        for i in 0..n {
            self.prepare(i, &mut row);
            self.forward_row(i, &row, &mut out[i * n..(i + 1) * n]);
        }
    }

    /// Returns gradients with respect to `(tau, delta, mu1, mu2)` given the
    /// forward output `out` and its upstream gradient.
    fn backward(&self, out: &[f64], grad: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let n = self.n;
        let mut g_tau = vec![0.0; n.saturating_sub(1)];
        let mut g_delta = vec![0.0; n];
        let mut g_mu1 = 0.0;
        let mut g_logits = vec![0.0; n];
        // sum over dependents of p(l|i) p(r|i) R_lr, where
        // R_lr = sum_{j in [l, r]} G_ij exp(a_j - log Z_lr)
        let mut span_grad = vec![0.0; n * n];

        let mut row = Row::new(n);
        // from_left[l] = sum_{j=l}^{i-1} G_ij exp(a_j - left_max[l]); from_right mirrors it
        let mut from_left = vec![0.0; n];
        let mut from_right = vec![0.0; n];
        let mut g_pl = vec![0.0; n];
        let mut g_pr = vec![0.0; n];

        for i in 0..n {
            let g_row = &grad[i * n..(i + 1) * n];
            if g_row.iter().enumerate().all(|(j, &g)| g == 0.0 || j == i) {
                continue;
            }
            self.prepare(i, &mut row);
            for j in (0..n).filter(|&j| j != i) {
                // the explicit exp(a_j) factor of p(j|i)
                g_logits[j] += g_row[j] * out[i * n + j];
            }

            from_left[i] = 0.0;
            for l in (0..i).rev() {
                let rescale = (row.left_max[l + 1] - row.left_max[l]).exp();
                from_left[l] = from_left[l + 1] * rescale + g_row[l] * (self.logits[l] - row.left_max[l]).exp();
            }
            from_right[i] = 0.0;
            for r in i + 1..n {
                let rescale = (row.right_max[r - 1] - row.right_max[r]).exp();
                from_right[r] = from_right[r - 1] * rescale + g_row[r] * (self.logits[r] - row.right_max[r]).exp();
            }

            g_pl[..=i].iter_mut().for_each(|g| *g = 0.0);
            g_pr[i..].iter_mut().for_each(|g| *g = 0.0);
            for l in 0..=i {
                for r in i..n {
                    let mut ratio_grad = 0.0;
                    if l < i {
                        ratio_grad += from_left[l] * self.ratio(row.left_max[l], l, r);
                    }
                    if r > i {
                        ratio_grad += from_right[r] * self.ratio(row.right_max[r], l, r);
                    }
                    if ratio_grad == 0.0 {
                        continue;
                    }
                    g_pl[l] += ratio_grad * row.pr[r];
                    g_pr[r] += ratio_grad * row.pl[l];
                    span_grad[l * n + r] += ratio_grad * row.pl[l] * row.pr[r];
                }
            }

            // p(l|i) = in(l) - in(l-1); in(i) and the sentinels are constant
            for l in 0..i {
                let g_in = g_pl[l] - g_pl[l + 1];
                self.sigmoid_grad(
                    i,
                    self.in_left[i * n + l],
                    self.left_arg[i * n + l],
                    g_in,
                    &mut g_tau,
                    &mut g_delta,
                    &mut g_mu1,
                );
            }
            for r in i + 1..n {
                let g_in = g_pr[r] - g_pr[r - 1];
                self.sigmoid_grad(
                    i,
                    self.in_right[i * n + r],
                    self.right_arg[i * n + r],
                    g_in,
                    &mut g_tau,
                    &mut g_delta,
                    &mut g_mu1,
                );
            }
        }

        // d exp(a_j - log Z_lr) / d a_k = -exp(a_j - log Z_lr) exp(a_k - log Z_lr) for k in [l, r]
        for l in 0..n {
            for r in l..n {
                let h = span_grad[l * n + r];
                if h == 0.0 {
                    continue;
                }
                for k in l..=r {
                    g_logits[k] -= h * self.ratio(self.logits[k], l, r);
                }
            }
        }

        let mut g_mu2 = 0.0;
        for k in 0..n {
            g_delta[k] += g_logits[k] / self.mu2;
            g_mu2 -= g_logits[k] * self.logits[k] / self.mu2;
        }
        (g_tau, g_delta, g_mu1, g_mu2)
    }

    #[allow(clippy::too_many_arguments)]
    fn sigmoid_grad(&self, i: usize, s: f64, arg: usize, g_in: f64, g_tau: &mut [f64], g_delta: &mut [f64], g_mu1: &mut f64) {
        if g_in == 0.0 {
            return;
        }
        let x = (self.delta[i] - self.tau[arg]) / self.mu1;
        let gx = g_in * s * (1.0 - s);
        g_delta[i] += gx / self.mu1;
        g_tau[arg] -= gx / self.mu1;
        *g_mu1 -= gx * x / self.mu1;
    }
}

/// Tape operation producing one `n x n` parent matrix per sentence, packed
/// in the ragged layout of [`Segments::squares`].
pub struct ParentDistributionOp {
    segments: Segments,
}

impl<F: Real> Backward<F> for ParentDistributionOp {
    fn name(&self) -> &'static str {
        "parent_distribution"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, grad: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let tau = inputs[0].to_f64();
        let delta = inputs[1].to_f64();
        let mu1 = inputs[2].item().to_f64().unwrap_or(f64::NAN);
        let mu2 = inputs[3].item().to_f64().unwrap_or(f64::NAN);
        let g = grad.to_f64();
        let gaps = self.segments.gaps();
        let squares = self.segments.squares();
        let mut g_tau = vec![0.0; tau.len()];
        let mut g_delta = vec![0.0; delta.len()];
        let mut g_mu1 = 0.0;
        let mut g_mu2 = 0.0;
        for s in 0..self.segments.count() {
            let kernel = Kernel::new(&tau[gaps.range(s)], &delta[self.segments.range(s)], mu1, mu2);
            let mut out = vec![0.0; squares.len_of(s)];
            kernel.forward(&mut out);
            let (gt, gd, gm1, gm2) = kernel.backward(&out, &g[squares.range(s)]);
            g_tau[gaps.range(s)].copy_from_slice(&gt);
            g_delta[self.segments.range(s)].copy_from_slice(&gd);
            g_mu1 += gm1;
            g_mu2 += gm2;
        }
        let cast = |v: Vec<f64>, like: &Tensor<F>| Tensor::new(like.shape(), v.into_iter().map(F::c).collect()).expect("shape");
        vec![
            Some(cast(g_tau, inputs[0])),
            Some(cast(g_delta, inputs[1])),
            Some(cast(vec![g_mu1], inputs[2])),
            Some(cast(vec![g_mu2], inputs[3])),
        ]
    }
}

/// Records the parent distributions of a packed batch.
///
/// `tau` holds `n_s - 1` distances per sentence, `delta` `n_s` heights, and
/// `mu1`, `mu2` are positive single-element temperatures.
pub fn parent_distribution<F: Real>(tape: &mut Tape<F>, tau: Var, delta: Var, mu1: Var, mu2: Var, segments: &Segments) -> Result<Var> {
    let gaps = segments.gaps();
    let squares = segments.squares();
    if tape.value(delta).len() != segments.total() || tape.value(tau).len() != gaps.total() {
        return Err(Error::shape(
            "parent_distribution",
            tape.value(tau).shape(),
            tape.value(delta).shape(),
        ));
    }
    if tape.value(mu1).len() != 1 || tape.value(mu2).len() != 1 {
        return Err(Error::shape(
            "parent_distribution",
            tape.value(mu1).shape(),
            tape.value(mu2).shape(),
        ));
    }
    let tau_v = tape.value(tau).to_f64();
    let delta_v = tape.value(delta).to_f64();
    let m1 = tape.value(mu1).item().to_f64().unwrap_or(f64::NAN);
    let m2 = tape.value(mu2).item().to_f64().unwrap_or(f64::NAN);
    let mut out = vec![0.0; squares.total()];
    for s in 0..segments.count() {
        let (t, d) = (&tau_v[gaps.range(s)], &delta_v[segments.range(s)]);
        check(t, d, m1, m2)?;
        Kernel::new(t, d, m1, m2).forward(&mut out[squares.range(s)]);
    }
    let value = Tensor::new(&[squares.total()], out.into_iter().map(F::c).collect())?;
    Ok(tape.record(
        value,
        &[tau, delta, mu1, mu2],
        ParentDistributionOp {
            segments: segments.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{joint_parse, SyntacticDistances, SyntacticHeights};
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Boundary probabilities with every running max materialized on its own.
    fn brute_left(i: usize, tau: &[f64], delta_i: f64, mu1: f64) -> Vec<f64> {
        let padded: Vec<f64> = std::iter::once(f64::INFINITY).chain(tau.iter().copied()).collect();
        // padded[k] is the boundary before token k
        let inside = |l: isize| -> f64 {
            if l == i as isize {
                return 1.0;
            }
            let window: Vec<f64> = (((l + 1) as usize)..=i).map(|k| padded[k]).collect();
            let m = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m.is_infinite() {
                0.0
            } else {
                1.0 / (1.0 + (-(delta_i - m) / mu1).exp())
            }
        };
        (0..=i as isize).map(|l| inside(l) - inside(l - 1)).collect()
    }

    fn brute_parent(tau: &[f64], delta: &[f64], mu1: f64, mu2: f64) -> Vec<f64> {
        let n = delta.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let pc = constituent_dist(i, tau, delta, mu1);
            for l in 0..n {
                for r in l..n {
                    let w = pc[l * n + r];
                    if w == 0.0 {
                        continue;
                    }
                    let pp = span_parent_dist(l, r, delta, mu2);
                    for j in 0..n {
                        if j != i {
                            out[i * n + j] += w * pp[j];
                        }
                    }
                }
            }
        }
        out
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let tau = (0..n - 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let delta = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (tau, delta)
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf_height_gt(1.3, 1.3, 0.7), 0.5);
        assert_eq!(cdf_height_gt(1.3, f64::INFINITY, 0.7), 0.0);
        let v = cdf_height_gt(3.5, 4.0, 0.1);
        assert!((v - 1.0 / (1.0 + 5f64.exp())).abs() < 1e-15);
        assert!((v - 0.0067).abs() < 1e-4);
    }

    #[test]
    fn boundaries_at_sentence_edges_are_certain() {
        let tau = [0.3, -1.0, 2.0];
        assert_eq!(left_boundary_dist(0, &tau, 0.1, 1.0), vec![1.0]);
        let right = right_boundary_dist(3, &tau, 0.1, 1.0);
        assert_eq!(right, vec![1.0]);
    }

    #[test]
    fn boundaries_match_brute_force_and_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..9);
            let (tau, delta) = random_instance(&mut rng, n);
            let mu1 = rng.gen_range(0.1..2.0);
            for i in 0..n {
                let left = left_boundary_dist(i, &tau, delta[i], mu1);
                let oracle = brute_left(i, &tau, delta[i], mu1);
                for (a, b) in left.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((left.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                // mirror: reverse the sentence
                let rtau: Vec<f64> = tau.iter().rev().copied().collect();
                let mirrored = brute_left(n - 1 - i, &rtau, delta[i], mu1);
                let right = right_boundary_dist(i, &tau, delta[i], mu1);
                for (a, b) in right.iter().zip(mirrored.iter().rev()) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((right.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constituent_mass_is_one_and_contains_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.gen_range(1..10);
            let (tau, delta) = random_instance(&mut rng, n);
            for i in 0..n {
                let pc = constituent_dist(i, &tau, &delta, 0.5);
                assert!((pc.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for l in 0..n {
                    for r in 0..n {
                        if !(l <= i && i <= r) {
                            assert_eq!(pc[l * n + r], 0.0);
                        }
                    }
                }
            }
        }
    }

    // tau/delta of the eight-token example, 0-based (x4 -> index 3).
    const FIG3_TAU: [f64; 7] = [1.0, 5.0, 4.0, 2.0, 3.0, 1.5, 2.5];
    const FIG3_DELTA: [f64; 8] = [1.0, 5.5, 2.0, 3.5, 1.0, 4.5, 0.5, 3.0];

    #[test]
    fn sharp_boundaries_find_the_smallest_legal_constituent() {
        let spread = 5.5 - 0.5;
        let pc = constituent_dist(3, &FIG3_TAU, &FIG3_DELTA, 1e-3 * spread);
        assert!(pc[3 * 8 + 7] >= 0.99);
    }

    #[test]
    fn span_parent_examples() {
        let p = span_parent_dist(3, 7, &FIG3_DELTA, 0.05);
        assert!(p[5] >= 0.99);
        assert_eq!(p[0], 0.0);
        let uniform = span_parent_dist(1, 3, &[9.0, 2.0, 2.0, 2.0], 0.3);
        for &q in &uniform[1..] {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(span_parent_dist(2, 2, &FIG3_DELTA, 0.01)[2], 1.0);
    }

    #[test]
    fn kernel_matches_direct_marginalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..9);
            let (tau, delta) = random_instance(&mut rng, n);
            let (mu1, mu2) = (rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
            let fast = parent_dist(&tau, &delta, mu1, mu2).unwrap();
            let slow = brute_parent(&tau, &delta, mu1, mu2);
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn row_mass_misses_exactly_the_self_head_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.gen_range(1..9);
            let (tau, delta) = random_instance(&mut rng, n);
            let p = parent_dist(&tau, &delta, 0.7, 0.9).unwrap();
            for i in 0..n {
                let pc = constituent_dist(i, &tau, &delta, 0.7);
                let mut self_head = 0.0;
                for l in 0..n {
                    for r in l..n {
                        self_head += pc[l * n + r] * span_parent_dist(l, r, &delta, 0.9)[i];
                    }
                }
                let row: f64 = p.row(i).iter().sum();
                assert!((row - (1.0 - self_head)).abs() < 1e-8);
                assert_eq!(p.get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn single_token_matrix_is_zero() {
        let p = parent_dist(&[], &[0.4], 1.0, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.0]);
        assert_eq!(decode_parents(&p), vec![None]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(parent_dist(&[1.0], &[0.0], 1.0, 1.0).is_err());
        assert!(parent_dist(&[1.0], &[0.0, 1.0], 0.0, 1.0).is_err());
        assert!(parent_dist(&[], &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn decoding_rules() {
        let one_hot = DependencyDistribution::from_rows(3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(decode_parents(&one_hot), vec![Some(1), Some(0), Some(1)]);
        let uniform = DependencyDistribution::from_rows(3, vec![0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(decode_parents(&uniform), vec![Some(1), Some(0), Some(0)]);
    }

    /// Parent under hard boundaries: the first split on each side whose
    /// distance exceeds the token's height closes its constituent, whose
    /// tallest token is the parent. `None` when the token heads it.
    fn discrete_parent(i: usize, tau: &[f64], delta: &[f64]) -> Option<usize> {
        let n = delta.len();
        let l = (0..i).rev().find(|&k| tau[k] > delta[i]).map_or(0, |k| k + 1);
        let r = (i..n - 1).find(|&k| tau[k] > delta[i]).unwrap_or(n - 1);
        let j = (l..=r).fold(l, |b, k| if delta[k] > delta[b] { k } else { b });
        (j != i).then_some(j)
    }

    fn shuffled_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut values: Vec<f64> = (0..2 * n - 1).map(|k| k as f64).collect();
        for k in (1..values.len()).rev() {
            values.swap(k, rng.gen_range(0..=k));
        }
        let delta = values.split_off(n - 1);
        (values, delta)
    }

    #[test]
    fn sharp_decoding_recovers_hard_constituent_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=12);
            let (tau, delta) = shuffled_instance(&mut rng, n);
            let decoded = decode_parents(&parent_dist(&tau, &delta, 0.05, 0.05).unwrap());
            for i in 0..n {
                if let Some(j) = discrete_parent(i, &tau, &delta) {
                    assert_eq!(decoded[i], Some(j), "token {i} of {tau:?} / {delta:?}");
                }
            }
        }
    }

    #[test]
    fn sharp_decoding_matches_joint_parse_when_heights_interleave() {
        // Heights built from a tree so that every token lies between the
        // distance where it loses its head position and the boundaries of
        // that node; then the hard constituent is exactly that node.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.gen_range(2..=12);
            let (tau, _) = shuffled_instance(&mut rng, n);
            let tau: Vec<f64> = tau.iter().map(|t| 10.0 * t).collect();
            let mut delta = vec![0.0; n];
            fn assign(l: usize, r: usize, tau: &[f64], delta: &mut [f64], ceiling: f64, rng: &mut ChaCha8Rng) -> usize {
                if l == r {
                    return l;
                }
                let k = (l..r).fold(l, |b, k| if tau[k] > tau[b] { k } else { b });
                let a = assign(l, k, tau, delta, tau[k], rng);
                let b = assign(k + 1, r, tau, delta, tau[k], rng);
                let (win, lose) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                delta[lose] = tau[k] + rng.gen_range(0.1..0.4) * (ceiling.min(tau[k] + 10.0) - tau[k]);
                delta[win] = delta[lose] + 1.0;
                win
            }
            let root = assign(0, n - 1, &tau, &mut delta, f64::INFINITY, &mut rng);
            delta[root] = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            let decoded = decode_parents(&parent_dist(&tau, &delta, 0.05, 0.05).unwrap());
            let jp = joint_parse(&vec![(); n], &SyntacticDistances(tau.clone()), &SyntacticHeights(delta.clone())).unwrap();
            for i in 0..n {
                if let Some(parent) = jp.dependencies.parent(i) {
                    assert_eq!(discrete_parent(i, &tau, &delta), Some(parent));
                    assert_eq!(decoded[i], Some(parent), "{i} {tau:?} {delta:?}");
                }
            }
        }
    }

    #[test]
    fn gradient_is_exact_at_low_temperature_and_wide_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let segments = Segments::from_lengths(&[6, 4]);
        let squares = segments.squares().total();
        let weights: Vec<f64> = (0..squares).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // (max - min) / mu2 is far beyond the exp range of f64
        let tau = Tensor::vector((0..segments.gaps().total()).map(|_| rng.gen_range(-30.0..30.0)).collect());
        let delta = Tensor::vector((0..segments.total()).map(|_| rng.gen_range(-30.0..30.0)).collect());
        let report = gradcheck::check(&[tau, delta, Tensor::scalar(2.0), Tensor::scalar(0.02)], 1e-7, |tape, v| {
            let p = parent_distribution(tape, v[0], v[1], v[2], v[3], &segments)?;
            let w = tape.leaf(Tensor::vector(weights.clone()));
            let y = tape.mul(p, w)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.max_error() < 1e-5, "{:?}", report.errors());
        let out = {
            let mut tape = Tape::<f64>::inference();
            let t = tape.leaf(Tensor::vector(vec![-30.0, 25.0, 0.0, 10.0, -5.0]));
            let d = tape.leaf(Tensor::vector(vec![-40.0, 40.0, 0.0, 12.0, -3.0, 1.0]));
            let m1 = tape.leaf(Tensor::scalar(0.01));
            let m2 = tape.leaf(Tensor::scalar(0.001));
            let p = parent_distribution(&mut tape, t, d, m1, m2, &Segments::single(6)).unwrap();
            tape.value(p).to_f64()
        };
        assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tape_op_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lengths = [3usize, 1, 5];
        let segments = Segments::from_lengths(&lengths);
        let squares = segments.squares().total();
        let weights: Vec<f64> = (0..squares).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = Tensor::vector((0..segments.gaps().total()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let delta = Tensor::vector((0..segments.total()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mu1 = Tensor::scalar(0.8);
        let mu2 = Tensor::scalar(1.3);
        let report = gradcheck::check(&[tau, delta, mu1, mu2], 1e-5, |tape, v| {
            let p = parent_distribution(tape, v[0], v[1], v[2], v[3], &segments)?;
            let w = tape.leaf(Tensor::vector(weights.clone()));
            let y = tape.mul(p, w)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.max_error() < 1e-5, "{:?}", report.errors());
    }
}
