//! Convolutional parsing network and distance calibration.
//!
//! The network reads word embeddings only. A stack of zero-padded
//! convolutions with `tanh` produces contextual features `s_i`; a pairwise
//! head maps `(s_i, s_{i+1})` to the distance of each split point and a
//! per-token head maps `s_i` to a height.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot, Bindings, ParamId, ParamStore};
use crate::structures::{SyntacticDistances, SyntacticHeights};
use crate::tensor::{Backward, Real, Segments, Tape, Tensor, Var};

/// Which sequence absorbs the calibration offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationTarget {
    /// Lower every distance (default).
    #[default]
    Distances,
    /// Lower every height.
    Heights,
}

impl FromStr for CalibrationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" | "distances" => Ok(CalibrationTarget::Distances),
            "delta" | "heights" => Ok(CalibrationTarget::Heights),
            other => Err(Error::Config(format!("calibration target must be tau or delta, got {other}"))),
        }
    }
}

impl fmt::Display for CalibrationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationTarget::Distances => "tau",
            CalibrationTarget::Heights => "delta",
        })
    }
}

/// The most isolated span of a sentence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Isolation {
    /// `max(0, max over spans of eps)`.
    pub offset: f64,
    /// Inclusive span attaining the offset, if positive.
    pub span: Option<(usize, usize)>,
    /// Index into `tau` of the lower boundary of that span.
    boundary: usize,
    /// Index of the tallest token inside that span.
    tallest: usize,
}

/// Margin by which the lower boundary of `[l, r]` exceeds the tallest token
/// inside it, or `None` for the whole sentence.
fn span_margin(tau: &[f64], l: usize, r: usize, inner_max: f64) -> Option<(f64, usize)> {
    let n = tau.len() + 1;
    match (l > 0, r + 1 < n) {
        (false, false) => None,
        (true, false) => Some((tau[l - 1] - inner_max, l - 1)),
        (false, true) => Some((tau[r] - inner_max, r)),
        (true, true) if tau[l - 1] <= tau[r] => Some((tau[l - 1] - inner_max, l - 1)),
        (true, true) => Some((tau[r] - inner_max, r)),
    }
}

/// Scans every span except the whole sentence for the largest isolation
/// margin `min(tau_{l-1}, tau_r) - max(delta_l..=delta_r)`, clipped at 0.
/// Single-token spans are included.
pub fn isolation(tau: &[f64], delta: &[f64]) -> Result<Isolation> {
    check_lengths(tau, delta)?;
    let n = delta.len();
    let mut best = Isolation {
        offset: 0.0,
        span: None,
        boundary: 0,
        tallest: 0,
    };
    for l in 0..n {
        let mut tallest = l;
        for r in l..n {
            if delta[r] > delta[tallest] {
                tallest = r;
            }
            let Some((margin, boundary)) = span_margin(tau, l, r, delta[tallest]) else {
                continue;
            };
            if margin > best.offset {
                best = Isolation {
                    offset: margin,
                    span: Some((l, r)),
                    boundary,
                    tallest,
                };
            }
        }
    }
    Ok(best)
}

/// Spans whose boundary distances both exceed every height inside by more
/// than `tol`.
pub fn isolated_spans(tau: &[f64], delta: &[f64], tol: f64) -> Result<Vec<(usize, usize)>> {
    check_lengths(tau, delta)?;
    let n = delta.len();
    let mut out = Vec::new();
    for l in 0..n {
        let mut inner = f64::NEG_INFINITY;
        for r in l..n {
            inner = inner.max(delta[r]);
            if matches!(span_margin(tau, l, r, inner), Some((m, _)) if m > tol) {
                out.push((l, r));
            }
        }
    }
    Ok(out)
}

fn check_lengths(tau: &[f64], delta: &[f64]) -> Result<()> {
    if delta.is_empty() || tau.len() + 1 != delta.len() {
        return Err(Error::InvalidInput(format!(
            "expected n - 1 distances for n heights, got {} and {}",
            tau.len(),
            delta.len()
        )));
    }
    Ok(())
}

/// Lowers all distances by the largest isolation margin. The rank order of
/// `tau` is unchanged.
pub fn calibrate(tau: &SyntacticDistances, delta: &SyntacticHeights) -> Result<SyntacticDistances> {
    let iso = isolation(&tau.0, &delta.0)?;
    Ok(SyntacticDistances(tau.0.iter().map(|t| t - iso.offset).collect()))
}

/// Variant that lowers all heights by the largest isolation margin instead.
pub fn calibrate_heights(tau: &SyntacticDistances, delta: &SyntacticHeights) -> Result<SyntacticHeights> {
    let iso = isolation(&tau.0, &delta.0)?;
    Ok(SyntacticHeights(delta.0.iter().map(|d| d - iso.offset).collect()))
}

struct CalibrateOp {
    segments: Segments,
    target: CalibrationTarget,
    isolations: Vec<Isolation>,
}

impl<F: Real> Backward<F> for CalibrateOp {
    fn name(&self) -> &'static str {
        "calibrate"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _out: &Tensor<F>, grad: &Tensor<F>, _needs: &[bool]) -> Vec<Option<Tensor<F>>> {
        let gaps = self.segments.gaps();
        let (mut g_tau, mut g_delta) = match self.target {
            CalibrationTarget::Distances => (grad.clone(), Tensor::zeros(inputs[1].shape())),
            CalibrationTarget::Heights => (Tensor::zeros(inputs[0].shape()), grad.clone()),
        };
        let shifted = match self.target {
            CalibrationTarget::Distances => &gaps,
            CalibrationTarget::Heights => &self.segments,
        };
        for (s, iso) in self.isolations.iter().enumerate() {
            if iso.span.is_none() {
                continue;
            }
            let g_offset = -grad.data()[shifted.range(s)].iter().copied().sum::<F>();
            g_tau.data_mut()[gaps.start(s) + iso.boundary] += g_offset;
            g_delta.data_mut()[self.segments.start(s) + iso.tallest] -= g_offset;
        }
        vec![Some(g_tau), Some(g_delta)]
    }
}

/// Calibrates a packed batch on the tape and returns the shifted sequence
/// selected by `target`. The gradient of the offset follows the span,
/// boundary and tallest token that attain it.
pub fn calibrate_var<F: Real>(tape: &mut Tape<F>, tau: Var, delta: Var, segments: &Segments, target: CalibrationTarget) -> Result<Var> {
    let gaps = segments.gaps();
    let (tv, dv) = (tape.value(tau).to_f64(), tape.value(delta).to_f64());
    if tv.len() != gaps.total() || dv.len() != segments.total() {
        return Err(Error::shape("calibrate", tape.value(tau).shape(), tape.value(delta).shape()));
    }
    let mut isolations = Vec::with_capacity(segments.count());
    let mut out = match target {
        CalibrationTarget::Distances => tv.clone(),
        CalibrationTarget::Heights => dv.clone(),
    };
    for s in 0..segments.count() {
        if segments.len_of(s) == 0 {
            isolations.push(isolation_none());
            continue;
        }
        let iso = isolation(&tv[gaps.range(s)], &dv[segments.range(s)])?;
        let range = match target {
            CalibrationTarget::Distances => gaps.range(s),
            CalibrationTarget::Heights => segments.range(s),
        };
        for v in &mut out[range] {
            *v -= iso.offset;
        }
        isolations.push(iso);
    }
    let like = match target {
        CalibrationTarget::Distances => tape.value(tau).shape().to_vec(),
        CalibrationTarget::Heights => tape.value(delta).shape().to_vec(),
    };
    let value = Tensor::new(&like, out.into_iter().map(F::c).collect())?;
    Ok(tape.record(
        value,
        &[tau, delta],
        CalibrateOp {
            segments: segments.clone(),
            target,
            isolations,
        },
    ))
}

fn isolation_none() -> Isolation {
    Isolation {
        offset: 0.0,
        span: None,
        boundary: 0,
        tallest: 0,
    }
}

/// Parameter handles of the parsing network.
#[derive(Clone, Debug)]
pub struct ParserNetwork {
    pub half_width: usize,
    conv: Vec<(ParamId, ParamId)>,
    dist_left: ParamId,
    dist_right: ParamId,
    dist_out: ParamId,
    height_hidden: ParamId,
    height_hidden_bias: ParamId,
    height_out: ParamId,
    height_out_bias: ParamId,
}

/// Distances and heights of a packed batch.
#[derive(Clone, Copy, Debug)]
pub struct ParserOutput {
    /// `[sum(n_s - 1)]`
    pub tau: Var,
    /// `[sum(n_s)]`
    pub delta: Var,
}

impl ParserNetwork {
    /// Registers `layers` convolutions of width `2 * half_width + 1` over
    /// `d`-dimensional features, plus both heads, under the `parser.` prefix.
    pub fn new<F: Real>(store: &mut ParamStore<F>, d: usize, layers: usize, half_width: usize, rng: &mut impl Rng) -> Self {
        let width = 2 * half_width + 1;
        let conv = (0..layers)
            .map(|l| {
                let w = store.add(format!("parser.conv{l}.weight"), glorot(width * d, d, rng));
                let b = store.add(format!("parser.conv{l}.bias"), Tensor::zeros(&[d]));
                (w, b)
            })
            .collect();
        ParserNetwork {
            half_width,
            conv,
            dist_left: store.add("parser.distance.w2_left", glorot(d, d, rng)),
            dist_right: store.add("parser.distance.w2_right", glorot(d, d, rng)),
            dist_out: store.add("parser.distance.w1", glorot(d, 1, rng)),
            height_hidden: store.add("parser.height.w2", glorot(d, d, rng)),
            height_hidden_bias: store.add("parser.height.b2", Tensor::zeros(&[d])),
            height_out: store.add("parser.height.w1", glorot(d, 1, rng)),
            height_out_bias: store.add("parser.height.b1", Tensor::zeros(&[1])),
        }
    }

    /// Re-attaches to parameters already present in `store`.
    pub fn from_store<F: Real>(store: &ParamStore<F>, layers: usize, half_width: usize) -> Result<Self> {
        let get = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let conv = (0..layers)
            .map(|l| Ok((get(&format!("parser.conv{l}.weight"))?, get(&format!("parser.conv{l}.bias"))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParserNetwork {
            half_width,
            conv,
            dist_left: get("parser.distance.w2_left")?,
            dist_right: get("parser.distance.w2_right")?,
            dist_out: get("parser.distance.w1")?,
            height_hidden: get("parser.height.w2")?,
            height_hidden_bias: get("parser.height.b2")?,
            height_out: get("parser.height.w1")?,
            height_out_bias: get("parser.height.b1")?,
        })
    }

    pub fn layers(&self) -> usize {
        self.conv.len()
    }

    /// `s_l = tanh(conv(s_{l-1}))` for every layer, with dropout after each.
    pub fn conv_stack<F: Real>(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        x: Var,
        segments: &Segments,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let mut s = x;
        for &(w, b) in &self.conv {
            let c = tape.conv1d(s, params[w], params[b], segments, self.half_width)?;
            let a = tape.tanh(c);
            s = tape.dropout(a, dropout, rng)?;
        }
        Ok(s)
    }

    /// `tau_i = w1 . tanh(W2 [s_i; s_{i+1}])` for every adjacent pair.
    pub fn predict_distances<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, s: Var, segments: &Segments) -> Result<Var> {
        let mut left = Vec::with_capacity(segments.gaps().total());
        for k in 0..segments.count() {
            let range = segments.range(k);
            left.extend(range.start..range.end.saturating_sub(1));
        }
        let right: Vec<usize> = left.iter().map(|i| i + 1).collect();
        let a = tape.matmul(s, params[self.dist_left])?;
        let b = tape.matmul(s, params[self.dist_right])?;
        let a = tape.gather_rows(a, &left)?;
        let b = tape.gather_rows(b, &right)?;
        let h = tape.add(a, b)?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, params[self.dist_out])?;
        tape.reshape(out, &[left.len()])
    }

    /// `delta_i = w1 . tanh(W2 s_i + b2) + b1` for every token.
    pub fn predict_heights<F: Real>(&self, tape: &mut Tape<F>, params: &Bindings, s: Var) -> Result<Var> {
        let n = tape.value(s).rows();
        let h = tape.matmul(s, params[self.height_hidden])?;
        let h = tape.add_row(h, params[self.height_hidden_bias])?;
        let h = tape.tanh(h);
        let out = tape.matmul(h, params[self.height_out])?;
        let out = tape.add_row(out, params[self.height_out_bias])?;
        tape.reshape(out, &[n])
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        embeddings: Var,
        segments: &Segments,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<ParserOutput> {
        let s = self.conv_stack(tape, params, embeddings, segments, dropout, rng)?;
        let tau = self.predict_distances(tape, params, s, segments)?;
        let delta = self.predict_heights(tape, params, s)?;
        Ok(ParserOutput { tau, delta })
    }

    /// Distances and heights for one sentence of `n x d` embeddings, without dropout.
    pub fn parse<F: Real>(&self, store: &ParamStore<F>, embeddings: &Tensor<F>) -> Result<(SyntacticDistances, SyntacticHeights)> {
        let mut tape = Tape::inference();
        let params = store.bind(&mut tape);
        let x = tape.leaf(embeddings.clone());
        let segments = Segments::single(embeddings.rows());
        let out = self.forward(&mut tape, &params, x, &segments, 0.0, &mut rand::thread_rng())?;
        Ok((
            SyntacticDistances(tape.value(out.tau).to_f64()),
            SyntacticHeights(tape.value(out.delta).to_f64()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::distance_to_tree;
    use crate::tensor::gradcheck;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn network(d: usize, layers: usize, seed: u64) -> (ParamStore<f64>, ParserNetwork) {
        let mut store = ParamStore::new();
        let net = ParserNetwork::new(&mut store, d, layers, 1, &mut ChaCha8Rng::seed_from_u64(seed));
        (store, net)
    }

    fn zero_all(store: &mut ParamStore<f64>) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = store.get_mut(id);
            *t = Tensor::zeros(t.shape());
        }
    }

    fn embeddings(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Brute force over every proper span, written independently of `isolation`.
    fn brute_offset(tau: &[f64], delta: &[f64]) -> f64 {
        let n = delta.len();
        let bound = |k: isize| {
            if k < 0 || k as usize >= n - 1 {
                f64::INFINITY
            } else {
                tau[k as usize]
            }
        };
        let mut best = 0.0f64;
        for l in 0..n {
            for r in l..n {
                if l == 0 && r == n - 1 {
                    continue;
                }
                let inner = delta[l..=r].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let eps = (bound(l as isize - 1) - inner).min(bound(r as isize) - inner).max(0.0);
                best = best.max(eps);
            }
        }
        best
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let (mut store, net) = network(4, 2, 1);
        zero_all(&mut store);
        let x = embeddings(5, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let (tau, delta) = net.parse(&store, &x).unwrap();
        assert_eq!(tau.0, vec![0.0; 4]);
        assert_eq!(delta.0, vec![0.0; 5]);

        let mut tape = Tape::inference();
        let params = store.bind(&mut tape);
        let xv = tape.leaf(x);
        let s = net
            .conv_stack(&mut tape, &params, xv, &Segments::single(5), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_sees_only_the_centre_tap() {
        let (mut store, net) = network(2, 1, 3);
        zero_all(&mut store);
        let w = store.find("parser.conv0.weight").unwrap();
        // rows 0..2 left tap, 2..4 centre, 4..6 right tap
        let mut data = vec![0.0; 12];
        for (k, v) in data.iter_mut().enumerate() {
            *v = if (4..8).contains(&k) { 0.5 } else { 7.0 };
        }
        *store.get_mut(w) = Tensor::new(&[6, 2], data).unwrap();
        let mut tape = Tape::inference();
        let params = store.bind(&mut tape);
        let x = tape.leaf(Tensor::new(&[1, 2], vec![1.0, -0.4]).unwrap());
        let s = net
            .conv_stack(&mut tape, &params, x, &Segments::single(1), 0.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let expected = (0.5f64 * 1.0 + 0.5 * -0.4).tanh();
        for &v in tape.value(s).data() {
            assert!((v - expected).abs() < 1e-15);
        }
        let tau = net.predict_distances(&mut tape, &params, s, &Segments::single(1)).unwrap();
        assert!(tape.value(tau).is_empty());
    }

    #[test]
    fn identical_positions_give_equal_outputs() {
        let (store, net) = network(3, 2, 4);
        let mut tape = Tape::inference();
        let params = store.bind(&mut tape);
        let s = tape.leaf(Tensor::new(&[6, 3], [0.3, -0.2, 0.9].repeat(6)).unwrap());
        let segments = Segments::single(6);
        let tau = net.predict_distances(&mut tape, &params, s, &segments).unwrap();
        let delta = net.predict_heights(&mut tape, &params, s).unwrap();
        let t = tape.value(tau).data();
        assert!(t.iter().all(|&v| v == t[0]));
        let d = tape.value(delta).data();
        assert!(d.iter().all(|&v| v == d[0]));
    }

    #[test]
    fn heights_are_permutation_equivariant() {
        let (store, net) = network(3, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = embeddings(5, 3, &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = Vec::new();
        for &p in &perm {
            permuted.extend_from_slice(x.row(p));
        }
        let heights = |t: Tensor<f64>| {
            let mut tape = Tape::inference();
            let params = store.bind(&mut tape);
            let s = tape.leaf(t);
            let d = net.predict_heights(&mut tape, &params, s).unwrap();
            tape.value(d).to_f64()
        };
        let base = heights(x.clone());
        let moved = heights(Tensor::new(&[5, 3], permuted).unwrap());
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(moved[k], base[p]);
        }
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (store, net) = network(3, 2, 10);
        let segments = Segments::from_lengths(&[4, 1, 3]);
        let x = embeddings(8, 3, &mut rng);
        let wt: Vec<f64> = (0..segments.gaps().total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wd: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut inputs = vec![x];
        inputs.extend(store.iter().map(|(_, t)| t.clone()));
        let report = gradcheck::check(&inputs, 1e-5, |tape, v| {
            let params = Bindings::from_vars(v[1..].to_vec());
            let out = net.forward(tape, &params, v[0], &segments, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
            let a = tape.leaf(Tensor::vector(wt.clone()));
            let b = tape.leaf(Tensor::vector(wd.clone()));
            let t = tape.mul(out.tau, a)?;
            let d = tape.mul(out.delta, b)?;
            let (t, d) = (tape.sum(t), tape.sum(d));
            tape.add(t, d)
        })
        .unwrap();
        assert!(report.max_error() < 1e-6, "{:?}", report.errors());
    }

    #[test]
    fn calibration_hand_example() {
        let tau = [5.0, 5.0];
        let delta = [1.0, 2.0, 1.0];
        // [0,0]: min(inf, 5) - 1 = 4; [0,1]: 5 - 2 = 3; [1,1]: 3; [1,2]: 3; [2,2]: 4
        let iso = isolation(&tau, &delta).unwrap();
        assert_eq!(iso.offset, 4.0);
        assert_eq!(iso.span, Some((0, 0)));
        assert_eq!(iso.offset, brute_offset(&tau, &delta));
        let out = calibrate(&SyntacticDistances(tau.to_vec()), &SyntacticHeights(delta.to_vec())).unwrap();
        assert_eq!(out.0, vec![1.0, 1.0]);
        assert!(isolated_spans(&out.0, &delta, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn calibration_without_isolation_is_identity() {
        let tau = SyntacticDistances(vec![0.0, -1.0, 0.5]);
        let delta = SyntacticHeights(vec![2.0, 2.0, 2.0, 2.0]);
        assert_eq!(calibrate(&tau, &delta).unwrap(), tau);
        assert_eq!(calibrate_heights(&tau, &delta).unwrap(), delta);
        let single = calibrate(&SyntacticDistances(vec![]), &SyntacticHeights(vec![3.0])).unwrap();
        assert!(single.0.is_empty());
    }

    #[test]
    fn calibration_rejects_bad_lengths() {
        assert!(isolation(&[1.0], &[1.0]).is_err());
        assert!(isolation(&[], &[]).is_err());
    }

    #[test]
    fn calibration_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let segments = Segments::from_lengths(&[5, 2, 1, 4]);
        for target in [CalibrationTarget::Distances, CalibrationTarget::Heights] {
            for _ in 0..20 {
                let tau = Tensor::vector((0..segments.gaps().total()).map(|_| rng.gen_range(-2.0..2.0)).collect());
                let delta = Tensor::vector((0..segments.total()).map(|_| rng.gen_range(-2.0..2.0)).collect());
                let len = match target {
                    CalibrationTarget::Distances => segments.gaps().total(),
                    CalibrationTarget::Heights => segments.total(),
                };
                let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let report = gradcheck::check(&[tau, delta], 1e-6, |tape, v| {
                    let c = calibrate_var(tape, v[0], v[1], &segments, target)?;
                    let w = tape.leaf(Tensor::vector(w.clone()));
                    let y = tape.mul(c, w)?;
                    Ok(tape.sum(y))
                })
                .unwrap();
                assert!(report.max_error() < 1e-6, "{target}: {:?}", report.errors());
            }
        }
    }

    #[test]
    fn tape_calibration_matches_plain_function() {
        let segments = Segments::from_lengths(&[3, 4]);
        let tau = vec![5.0, 5.0, 0.1, 2.0, -1.0];
        let delta = vec![1.0, 2.0, 1.0, 0.0, 0.5, 0.2, 0.3];
        let mut tape = Tape::<f64>::inference();
        let t = tape.leaf(Tensor::vector(tau.clone()));
        let d = tape.leaf(Tensor::vector(delta.clone()));
        let c = calibrate_var(&mut tape, t, d, &segments, CalibrationTarget::Distances).unwrap();
        let first = calibrate(&SyntacticDistances(tau[..2].to_vec()), &SyntacticHeights(delta[..3].to_vec())).unwrap();
        let second = calibrate(&SyntacticDistances(tau[2..].to_vec()), &SyntacticHeights(delta[3..].to_vec())).unwrap();
        assert_eq!(tape.value(c).to_f64(), [first.0, second.0].concat());
    }

    proptest! {
        #[test]
        fn calibration_removes_isolation_and_keeps_the_tree(
            (tau, delta) in (1usize..=10).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n - 1),
                prop::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let iso = isolation(&tau, &delta).unwrap();
            prop_assert!((iso.offset - brute_offset(&tau, &delta)).abs() < 1e-12);
            let t = SyntacticDistances(tau.clone());
            let out = calibrate(&t, &SyntacticHeights(delta.clone())).unwrap();
            prop_assert!(isolated_spans(&out.0, &delta, 1e-12).unwrap().is_empty());
            let words = vec![(); delta.len()];
            prop_assert_eq!(distance_to_tree(&words, &out).unwrap(), distance_to_tree(&words, &t).unwrap());
        }
    }
}
