//! Masked language model training and evaluation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::optim::{clip_global_norm, Adam, Schedule};
use crate::tensor::{Real, Tape, Tensor};

/// Replaces each token by `<mask>` with probability `rate`; returns the
/// corrupted sequence and the replaced positions.
pub fn mlm_corrupt(ids: &[usize], rate: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut out = ids.to_vec();
    let mut targets = Vec::new();
    for (i, t) in out.iter_mut().enumerate() {
        if rng.gen::<f64>() < rate {
            *t = Vocab::MASK_ID;
            targets.push(i);
        }
    }
    (out, targets)
}

/// Corrupts a whole batch; targets are `(packed row, original id)`.
fn corrupt_batch(sentences: &[&[usize]], rate: f64, rng: &mut impl Rng) -> (Batch, Vec<(usize, usize)>) {
    let mut corrupted = Vec::with_capacity(sentences.len());
    let mut targets = Vec::new();
    let mut offset = 0;
    for s in sentences {
        let (c, t) = mlm_corrupt(s, rate, rng);
        targets.extend(t.into_iter().map(|i| (offset + i, s[i])));
        offset += s.len();
        corrupted.push(c);
    }
    (Batch::new(&corrupted), targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Sentences per batch.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub clip: f64,
    pub log_every: u64,
    /// Seed of data order, masking and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 16,
            lr: 1e-3,
            warmup: 1000,
            clip: 1.0,
            log_every: 100,
            seed: 0,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub ppl: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    pub wall_time: f64,
}

/// Minimizes masked cross-entropy with Adam. Metrics are written every
/// `log_every` steps as JSON lines. A non-finite loss aborts the run.
pub fn train<F: Real>(
    model: &mut Model<F>,
    data: &[Vec<usize>],
    config: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = Schedule {
        peak: config.lr,
        warmup: config.warmup,
    };
    let mut adam = Adam::new(&model.store);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let start = Instant::now();
    let mut losses = Vec::with_capacity(config.steps as usize);
    let rate = model.config.mask_rate;
    for step in 1..=config.steps {
        let (batch, targets) = loop {
            if cursor + config.batch_size > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let take = config.batch_size.min(order.len());
            let picked: Vec<&[usize]> = order[cursor..cursor + take].iter().map(|&i| data[i].as_slice()).collect();
            cursor += take;
            let (batch, targets) = corrupt_batch(&picked, rate, &mut rng);
            if !targets.is_empty() {
                break (batch, targets);
            }
        };
        let mut tape = Tape::new();
        let params = model.store.bind(&mut tape);
        let loss = model.mlm_loss(&mut tape, &params, &batch, &targets, true, &mut rng)?;
        let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {value} at step {step} (learning rate {:.3e})",
                schedule.at(step)
            )));
        }
        let mut grads = tape.backward(loss)?;
        let mut flat: Vec<Tensor<F>> = model
            .store
            .ids()
            .map(|id| grads.take(params[id]).unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape())))
            .collect();
        drop(tape);
        let norm = clip_global_norm(&mut flat, config.clip);
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm became {norm} at step {step}")));
        }
        let lr = schedule.at(step);
        adam.step(&mut model.store, &flat, lr);
        losses.push(value);
        if let Some(out) = metrics.as_deref_mut() {
            if config.log_every > 0 && (step % config.log_every == 0 || step == config.steps) {
                let line = StepMetrics {
                    step,
                    loss: value,
                    ppl: value.exp(),
                    lr,
                    wall_time: start.elapsed().as_secs_f64(),
                };
                writeln!(out, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io("metrics log", e))?;
            }
        }
    }
    Ok(TrainSummary {
        steps: config.steps,
        losses,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// `exp` of the mean cross-entropy over masked positions, with masks drawn
/// from `seed` so repeated evaluations agree.
pub fn evaluate_ppl<F: Real>(model: &Model<F>, data: &[Vec<usize>], seed: u64, batch_size: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches: Vec<(Batch, Vec<(usize, usize)>)> = data
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            corrupt_batch(&refs, model.config.mask_rate, &mut rng)
        })
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let parts: Vec<(f64, usize)> = batches
        .par_iter()
        .map(|(batch, targets)| {
            let mut tape = Tape::inference();
            let params = model.store.bind(&mut tape);
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let loss = model.mlm_loss(&mut tape, &params, batch, targets, false, &mut rng)?;
            let mean = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            Ok((mean * targets.len() as f64, targets.len()))
        })
        .collect::<Result<_>>()?;
    let (total, count) = parts.iter().fold((0.0, 0), |(a, b), &(x, n)| (a + x, b + n));
    if count == 0 {
        return Err(Error::InvalidInput("no positions were masked for evaluation".into()));
    }
    let ppl = (total / count as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::Numerical(format!("evaluation perplexity is {ppl}")));
    }
    Ok(ppl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::model::ModelConfig;
    use crate::tensor::DType;

    fn config(attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            layers: 1,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            dropout: 0.0,
            parser_layers: 1,
            max_len: 12,
            attention,
            precision: DType::F64,
            ..ModelConfig::default()
        }
    }

    fn corpus(n: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(3..10);
                (0..len).map(|_| rng.gen_range(3..20)).collect()
            })
            .collect()
    }

    #[test]
    fn mask_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = vec![5usize; 100_000];
        for rate in [0.15, 0.3] {
            let (c, t) = mlm_corrupt(&ids, rate, &mut rng);
            let frac = t.len() as f64 / ids.len() as f64;
            assert!((frac - rate).abs() < 0.01);
            assert!(t.iter().all(|&i| c[i] == Vocab::MASK_ID));
            assert_eq!(c.iter().filter(|&&x| x == Vocab::MASK_ID).count(), t.len());
        }
        let (c, t) = mlm_corrupt(&ids[..1000], 1e-12, &mut rng);
        assert!(t.is_empty() && c == ids[..1000]);
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let model = Model::<f64>::new(config(AttentionKind::Dependency)).unwrap();
        let ppl = evaluate_ppl(&model, &corpus(40, 2), 0, 8).unwrap();
        assert!(ppl > 10.0 && ppl < 40.0, "{ppl}");
        assert_eq!(ppl, evaluate_ppl(&model, &corpus(40, 2), 0, 8).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_logs_json_lines() {
        let data = corpus(30, 3);
        let cfg = TrainConfig {
            steps: 10,
            batch_size: 4,
            warmup: 5,
            log_every: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::<f64>::new(config(AttentionKind::Dependency)).unwrap();
            let mut log = Vec::new();
            let summary = train(&mut model, &data, &cfg, Some(&mut log)).unwrap();
            (summary, log, model)
        };
        let (a, log, ma) = run();
        let (b, _, mb) = run();
        assert_eq!(a.losses, b.losses);
        assert_eq!(
            ma.store.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
            mb.store.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>()
        );
        let lines: Vec<StepMetrics> = String::from_utf8(log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.iter().map(|m| m.step).collect::<Vec<_>>(), [5, 10]);
        assert!((lines[1].ppl - lines[1].loss.exp()).abs() < 1e-9);
    }

    #[test]
    fn divergence_aborts_with_a_numerical_error() {
        let mut model = Model::<f64>::new(config(AttentionKind::Softmax)).unwrap();
        let id = model.store.find("layer0.ff_in.weight").unwrap();
        model.store.get_mut(id).data_mut()[0] = f64::NAN;
        let err = train(
            &mut model,
            &corpus(10, 4),
            &TrainConfig {
                steps: 3,
                ..TrainConfig::default()
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn loss_falls_on_a_repetitive_corpus() {
        let data: Vec<Vec<usize>> = (0..20).map(|k| vec![3 + k % 4, 8, 9, 10, 11 + k % 3]).collect();
        let mut model = Model::<f64>::new(config(AttentionKind::Dependency)).unwrap();
        let cfg = TrainConfig {
            steps: 150,
            batch_size: 8,
            warmup: 20,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let before = evaluate_ppl(&model, &data, 1, 8).unwrap();
        train(&mut model, &data, &cfg, None).unwrap();
        let after = evaluate_ppl(&model, &data, 1, 8).unwrap();
        assert!(after < before / 2.0, "{before} -> {after}");
    }
}
