//! Pre-LN transformer encoder with dependency-constrained attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, MultiHeadAttention, RelationSet};
use crate::depdist::{parent_distribution, DependencyDistribution};
use crate::error::{Error, Result};
use crate::params::{glorot, normal, Bindings, ParamId, ParamStore};
use crate::parser_net::{calibrate_var, CalibrationTarget, ParserNetwork};
use crate::tensor::{DType, Real, Segments, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Hyperparameters of the encoder and its parser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub parser_layers: usize,
    /// Convolution width `2W + 1`.
    pub kernel_width: usize,
    pub mask_rate: f64,
    pub relations: RelationSet,
    pub calibrate: bool,
    pub calibration_target: CalibrationTarget,
    pub max_len: usize,
    pub precision: DType,
    pub seed: u64,
    pub attention: AttentionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 10_001,
            layers: 8,
            d_model: 512,
            heads: 8,
            d_ff: 2048,
            dropout: 0.1,
            parser_layers: 3,
            kernel_width: 3,
            mask_rate: 0.3,
            relations: RelationSet::Both,
            calibrate: true,
            calibration_target: CalibrationTarget::Distances,
            max_len: 128,
            precision: DType::F32,
            seed: 0,
            attention: AttentionKind::Dependency,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("parser_layers", self.parser_layers),
            ("kernel_width", self.kernel_width),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel_width must be odd, got {}", self.kernel_width)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!("mask_rate must lie in (0, 1), got {}", self.mask_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn uses_parser(&self) -> bool {
        self.attention == AttentionKind::Dependency
    }
}

/// Token ids of several sentences packed back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub segments: Segments,
}

impl Batch {
    pub fn new<S: AsRef<[usize]>>(sentences: &[S]) -> Self {
        let lengths: Vec<usize> = sentences.iter().map(|s| s.as_ref().len()).collect();
        Batch {
            ids: sentences.iter().flat_map(|s| s.as_ref().iter().copied()).collect(),
            segments: Segments::from_lengths(&lengths),
        }
    }

    /// Position of every packed token inside its sentence.
    pub fn positions(&self) -> Vec<usize> {
        self.segments.lengths().flat_map(|n| 0..n).collect()
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    attention: MultiHeadAttention,
    ln2: (ParamId, ParamId),
    ff_in: (ParamId, ParamId),
    ff_out: (ParamId, ParamId),
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[N, d_model]` after the final layer norm.
    pub hidden: Var,
    /// Raw distances, `[sum(n - 1)]`.
    pub tau: Option<Var>,
    pub delta: Option<Var>,
    /// Parent distributions in the ragged square layout.
    pub parents: Option<Var>,
}

/// Parser readout of one sentence.
#[derive(Clone, Debug)]
pub struct SentenceStructure {
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    pub parents: DependencyDistribution,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    embedding: ParamId,
    position: ParamId,
    output_bias: ParamId,
    final_ln: (ParamId, ParamId),
    blocks: Vec<Block>,
    parser: Option<ParserNetwork>,
    /// Pre-softplus temperatures.
    mu: Option<(ParamId, ParamId)>,
}

fn layer_norm_params<F: Real>(store: &mut ParamStore<F>, prefix: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{prefix}.gamma"), Tensor::full(&[d], F::one())),
        store.add(format!("{prefix}.beta"), Tensor::zeros(&[d])),
    )
}

fn linear<F: Real>(store: &mut ParamStore<F>, prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> (ParamId, ParamId) {
    (
        store.add(format!("{prefix}.weight"), glorot(d_in, d_out, rng)),
        store.add(format!("{prefix}.bias"), Tensor::zeros(&[d_out])),
    )
}

fn lookup<F: Real>(store: &ParamStore<F>, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

impl<F: Real> Model<F> {
    /// Freshly initialized model; parameters are drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", normal(&[config.vocab_size, d], 1.0 / (d as f64).sqrt(), &mut rng));
        let position = store.add("position", normal(&[config.max_len, d], 0.02, &mut rng));
        let output_bias = store.add("output.bias", Tensor::zeros(&[config.vocab_size]));
        let (parser, mu) = if config.uses_parser() {
            let parser = ParserNetwork::new(&mut store, d, config.parser_layers, config.kernel_width / 2, &mut rng);
            // softplus(ln(e - 1)) = 1
            let init = Tensor::from_f64(&[1], &[(std::f64::consts::E - 1.0).ln()])?;
            let mu = (store.add("parser.mu1", init.clone()), store.add("parser.mu2", init));
            (Some(parser), Some(mu))
        } else {
            (None, None)
        };
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("layer{l}");
                Block {
                    ln1: layer_norm_params(&mut store, &format!("{p}.ln1"), d),
                    attention: MultiHeadAttention::new(
                        &mut store,
                        &format!("{p}.attention"),
                        d,
                        config.heads,
                        config.attention,
                        config.relations,
                        &mut rng,
                    ),
                    ln2: layer_norm_params(&mut store, &format!("{p}.ln2"), d),
                    ff_in: linear(&mut store, &format!("{p}.ff_in"), d, config.d_ff, &mut rng),
                    ff_out: linear(&mut store, &format!("{p}.ff_out"), config.d_ff, d, &mut rng),
                }
            })
            .collect();
        let final_ln = layer_norm_params(&mut store, "final_ln", d);
        Ok(Model {
            config,
            store,
            embedding,
            position,
            output_bias,
            final_ln,
            blocks,
            parser,
            mu,
        })
    }

    /// Re-attaches a model to loaded parameters, checking every shape.
    pub fn from_store(config: ModelConfig, store: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let reference = Model::<F>::new(ModelConfig { seed: 0, ..config.clone() })?;
        if reference.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                reference.store.len(),
                store.len()
            )));
        }
        for (name, t) in reference.store.iter() {
            let id = lookup(&store, name)?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    store.get(id).shape(),
                    t.shape()
                )));
            }
        }
        let ln = |prefix: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                lookup(&store, &format!("{prefix}.gamma"))?,
                lookup(&store, &format!("{prefix}.beta"))?,
            ))
        };
        let lin = |prefix: &str| -> Result<(ParamId, ParamId)> {
            Ok((
                lookup(&store, &format!("{prefix}.weight"))?,
                lookup(&store, &format!("{prefix}.bias"))?,
            ))
        };
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("layer{l}");
                Ok(Block {
                    ln1: ln(&format!("{p}.ln1"))?,
                    attention: MultiHeadAttention::from_store(
                        &store,
                        &format!("{p}.attention"),
                        config.heads,
                        config.attention,
                        config.relations,
                    )?,
                    ln2: ln(&format!("{p}.ln2"))?,
                    ff_in: lin(&format!("{p}.ff_in"))?,
                    ff_out: lin(&format!("{p}.ff_out"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (parser, mu) = if config.uses_parser() {
            (
                Some(ParserNetwork::from_store(&store, config.parser_layers, config.kernel_width / 2)?),
                Some((lookup(&store, "parser.mu1")?, lookup(&store, "parser.mu2")?)),
            )
        } else {
            (None, None)
        };
        Ok(Model {
            embedding: lookup(&store, "embedding")?,
            position: lookup(&store, "position")?,
            output_bias: lookup(&store, "output.bias")?,
            final_ln: ln("final_ln")?,
            blocks,
            parser,
            mu,
            config,
            store,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Scalars owned by the parser network, its temperatures and the relation weights.
    pub fn structure_parameter_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(n, _)| n.starts_with("parser.") || n.ends_with(".relation"))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    /// Current `(mu1, mu2)`.
    pub fn temperatures(&self) -> Option<(f64, f64)> {
        let (a, b) = self.mu?;
        let sp = |id| {
            let x = self.store.get(id).item().to_f64().unwrap_or(f64::NAN);
            crate::tensor::softplus(x)
        };
        Some((sp(a), sp(b)))
    }

    /// Per layer, per head `(p_parent, p_dep)`; empty for the baseline.
    pub fn relation_mixes(&self) -> Vec<Vec<(f64, f64)>> {
        self.blocks.iter().map(|b| b.attention.effective_mix(&self.store)).collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        for (s, n) in batch.segments.lengths().enumerate() {
            if n == 0 {
                return Err(Error::InvalidInput(format!("sentence {s} is empty")));
            }
            if n > self.config.max_len {
                return Err(Error::InvalidInput(format!(
                    "sentence {s} has {n} tokens, the configured maximum is {}",
                    self.config.max_len
                )));
            }
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Distances, heights and parent distributions from word embeddings.
    pub fn parse_batch(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        words: Var,
        segments: &Segments,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Option<(Var, Var, Var)>> {
        let (Some(parser), Some((mu1, mu2))) = (&self.parser, self.mu) else {
            return Ok(None);
        };
        let out = parser.forward(tape, params, words, segments, dropout, rng)?;
        let (mut tau, mut delta) = (out.tau, out.delta);
        if self.config.calibrate {
            let shifted = calibrate_var(tape, tau, delta, segments, self.config.calibration_target)?;
            match self.config.calibration_target {
                CalibrationTarget::Distances => tau = shifted,
                CalibrationTarget::Heights => delta = shifted,
            }
        }
        let m1 = tape.softplus(params[mu1]);
        let m2 = tape.softplus(params[mu2]);
        let p = parent_distribution(tape, tau, delta, m1, m2, segments)?;
        Ok(Some((out.tau, out.delta, p)))
    }

    /// Transformer stack over `x`; `parents` is required by dependency heads.
    pub fn encode(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        x: Var,
        parents: Option<Var>,
        segments: &Segments,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let mut x = x;
        for b in &self.blocks {
            let h = tape.layer_norm(x, params[b.ln1.0], params[b.ln1.1], LN_EPS)?;
            let a = b.attention.forward(tape, params, h, parents, segments, dropout, rng)?;
            x = tape.add(x, a)?;
            let h = tape.layer_norm(x, params[b.ln2.0], params[b.ln2.1], LN_EPS)?;
            let f = tape.matmul(h, params[b.ff_in.0])?;
            let f = tape.add_row(f, params[b.ff_in.1])?;
            let f = tape.relu(f);
            let f = tape.matmul(f, params[b.ff_out.0])?;
            let f = tape.add_row(f, params[b.ff_out.1])?;
            let f = tape.dropout(f, dropout, rng)?;
            x = tape.add(x, f)?;
        }
        tape.layer_norm(x, params[self.final_ln.0], params[self.final_ln.1], LN_EPS)
    }

    /// Full forward pass. Dropout is active only when `train` is set.
    pub fn forward(&self, tape: &mut Tape<F>, params: &Bindings, batch: &Batch, train: bool, rng: &mut impl Rng) -> Result<Encoded> {
        self.check_batch(batch)?;
        let dropout = if train { self.config.dropout } else { 0.0 };
        let words = tape.gather_rows(params[self.embedding], &batch.ids)?;
        let structure = self.parse_batch(tape, params, words, &batch.segments, dropout, rng)?;
        let pos = tape.gather_rows(params[self.position], &batch.positions())?;
        let x = tape.add(words, pos)?;
        let x = tape.dropout(x, dropout, rng)?;
        let parents = structure.map(|s| s.2);
        let hidden = self.encode(tape, params, x, parents, &batch.segments, dropout, rng)?;
        Ok(Encoded {
            hidden,
            tau: structure.map(|s| s.0),
            delta: structure.map(|s| s.1),
            parents,
        })
    }

    /// Vocabulary logits of the selected packed rows, through the tied embedding.
    pub fn logits(&self, tape: &mut Tape<F>, params: &Bindings, hidden: Var, rows: &[usize]) -> Result<Var> {
        let h = tape.gather_rows(hidden, rows)?;
        let l = tape.matmul_t(h, params[self.embedding], false, true)?;
        tape.add_row(l, params[self.output_bias])
    }

    /// Mean cross-entropy over `(packed row, target id)` pairs.
    pub fn mlm_loss(
        &self,
        tape: &mut Tape<F>,
        params: &Bindings,
        batch: &Batch,
        targets: &[(usize, usize)],
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::InvalidInput("no masked positions".into()));
        }
        let enc = self.forward(tape, params, batch, train, rng)?;
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let logits = self.logits(tape, params, enc.hidden, &rows)?;
        let pairs: Vec<(usize, usize)> = targets.iter().enumerate().map(|(k, t)| (k, t.1)).collect();
        tape.cross_entropy(logits, &pairs)
    }

    /// Raw distances, heights and parent distribution of every sentence,
    /// computed without dropout.
    pub fn structures(&self, sentences: &[Vec<usize>]) -> Result<Vec<SentenceStructure>> {
        let batch = Batch::new(sentences);
        self.check_batch(&batch)?;
        let mut tape = Tape::inference();
        let params = self.store.bind(&mut tape);
        let words = tape.gather_rows(params[self.embedding], &batch.ids)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let Some((tau, delta, p)) = self.parse_batch(&mut tape, &params, words, &batch.segments, 0.0, &mut rng)? else {
            return Err(Error::InvalidInput("the baseline encoder has no parser".into()));
        };
        let (mu1, mu2) = self.temperatures().unwrap_or((1.0, 1.0));
        let (tau, delta, p) = (tape.value(tau).to_f64(), tape.value(delta).to_f64(), tape.value(p).to_f64());
        let (gaps, squares) = (batch.segments.gaps(), batch.segments.squares());
        (0..batch.segments.count())
            .map(|s| {
                let n = batch.segments.len_of(s);
                Ok(SentenceStructure {
                    tau: tau[gaps.range(s)].to_vec(),
                    delta: delta[batch.segments.range(s)].to_vec(),
                    parents: DependencyDistribution::from_rows(n, p[squares.range(s)].to_vec(), mu1, mu2)?,
                })
            })
            .collect()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            embedding: self.embedding,
            position: self.position,
            output_bias: self.output_bias,
            final_ln: self.final_ln,
            blocks: self.blocks.clone(),
            parser: self.parser.clone(),
            mu: self.mu,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depdist::decode_parents;
    use crate::structures::{joint_parse, SyntacticDistances, SyntacticHeights};
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            layers: 2,
            d_model: 8,
            heads: 2,
            d_ff: 12,
            dropout: 0.0,
            parser_layers: 2,
            max_len: 10,
            attention,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        for bad in [
            ModelConfig {
                heads: 3,
                ..ModelConfig::default()
            },
            ModelConfig {
                kernel_width: 4,
                ..ModelConfig::default()
            },
            ModelConfig {
                mask_rate: 1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                layers: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn logits_have_one_row_per_position() {
        let model = Model::<f64>::new(tiny(AttentionKind::Dependency)).unwrap();
        let batch = Batch::new(&[vec![1, 2, 3], vec![4, 5]]);
        let mut tape = Tape::inference();
        let params = model.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = model.forward(&mut tape, &params, &batch, false, &mut rng).unwrap();
        let rows: Vec<usize> = (0..5).collect();
        let logits = model.logits(&mut tape, &params, enc.hidden, &rows).unwrap();
        assert_eq!(tape.value(logits).shape(), &[5, 11]);
        assert_eq!(tape.value(enc.parents.unwrap()).len(), 9 + 4);
        let long = Batch::new(&[vec![1; 11]]);
        assert!(model.forward(&mut tape, &params, &long, false, &mut rng).is_err());
    }

    #[test]
    fn baseline_differs_only_by_structure_parameters() {
        let ours = Model::<f64>::new(tiny(AttentionKind::Dependency)).unwrap();
        let base = Model::<f64>::new(tiny(AttentionKind::Softmax)).unwrap();
        assert_eq!(base.structure_parameter_count(), 0);
        assert_eq!(ours.parameter_count() - ours.structure_parameter_count(), base.parameter_count());
    }

    #[test]
    fn dependents_see_only_their_parent() {
        let config = ModelConfig {
            layers: 1,
            relations: RelationSet::Parent,
            ..tiny(AttentionKind::Dependency)
        };
        let mut model = Model::<f64>::new(config).unwrap();
        // zero projections with a shared bias keep every gate at sigmoid(8 * 8 / 2) ~ 1
        for name in ["query", "key"] {
            model
                .store
                .set(&format!("layer0.attention.{name}.weight"), Tensor::zeros(&[8, 8]))
                .unwrap();
            model
                .store
                .set(&format!("layer0.attention.{name}.bias"), Tensor::full(&[8], 8.0))
                .unwrap();
        }
        let tau = SyntacticDistances(vec![3.0, 1.0, 4.0, 2.0]);
        let delta = SyntacticHeights(vec![0.5, 2.0, 1.0, 3.0, 0.2]);
        let gold = joint_parse(&["w"; 5], &tau, &delta).unwrap().dependencies;
        let n = 5;
        let mut probs = vec![0.0; n * n];
        for (i, p) in gold.parents().iter().enumerate() {
            if let Some(j) = p {
                probs[i * n + j] = 1.0;
            }
        }
        let ids = [1usize, 2, 3, 4, 5];
        let batch = Batch::new(&[ids.to_vec()]);
        let hidden = |store: &ParamStore<f64>| {
            let mut tape = Tape::inference();
            let params = store.bind(&mut tape);
            let words = tape.gather_rows(params[model.embedding], &batch.ids).unwrap();
            let pos = tape.gather_rows(params[model.position], &batch.positions()).unwrap();
            let x = tape.add(words, pos).unwrap();
            let p = tape.leaf(Tensor::vector(probs.clone()));
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let h = model
                .encode(&mut tape, &params, x, Some(p), &batch.segments, 0.0, &mut rng)
                .unwrap();
            tape.value(h).clone()
        };
        let base = hidden(&model.store);
        for j in 0..n {
            let mut store = model.store.clone();
            let e = store.get_mut(model.embedding);
            let d = e.cols();
            for v in &mut e.data_mut()[ids[j] * d..(ids[j] + 1) * d] {
                *v += 0.5;
            }
            let moved = hidden(&store);
            for (i, parent) in gold.parents().iter().enumerate() {
                let changed = base.row(i) != moved.row(i);
                assert_eq!(changed, i == j || *parent == Some(j), "token {i}, perturbed {j}");
            }
        }
    }

    #[test]
    fn mlm_gradient_reaches_parser_heads_and_relation_weights() {
        let model = Model::<f64>::new(tiny(AttentionKind::Dependency)).unwrap();
        let batch = Batch::new(&[vec![1, 2, 3, 4, 5, 6], vec![7, 8, 9]]);
        let mut tape = Tape::new();
        let params = model.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = model
            .mlm_loss(&mut tape, &params, &batch, &[(1, 2), (4, 5), (7, 8)], false, &mut rng)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for name in [
            "parser.distance.w1",
            "parser.distance.w2_left",
            "parser.height.w1",
            "parser.height.w2",
            "parser.mu1",
            "parser.mu2",
            "layer0.attention.relation",
        ] {
            let id = model.store.find(name).unwrap();
            let g = grads.get(params[id]).unwrap();
            assert!(g.norm() > 0.0, "{name}");
        }
    }

    #[test]
    fn full_encoder_gradients_match_finite_differences() {
        for attention in [AttentionKind::Dependency, AttentionKind::Softmax] {
            let mut config = tiny(attention);
            config.calibrate = false;
            let model = Model::<f64>::new(config).unwrap();
            let batch = Batch::new(&[vec![1, 2, 3, 4], vec![5, 6, 7]]);
            let inputs: Vec<Tensor<f64>> = model.store.iter().map(|(_, t)| t.clone()).collect();
            let report = gradcheck::check(&inputs, 1e-6, |tape, vars| {
                let params = Bindings::from_vars(vars.to_vec());
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                model.mlm_loss(tape, &params, &batch, &[(0, 3), (2, 9), (5, 1)], false, &mut rng)
            })
            .unwrap();
            let names: Vec<&str> = model.store.iter().map(|(n, _)| n).collect();
            assert!(
                report.max_error() < 1e-5,
                "{attention}: {:?}",
                names.iter().zip(report.errors()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn structures_match_the_reference_distribution() {
        let model = Model::<f64>::new(tiny(AttentionKind::Dependency)).unwrap();
        let out = model.structures(&[vec![1, 2, 3, 4], vec![5]]).unwrap();
        assert_eq!(out[0].tau.len(), 3);
        assert_eq!(out[1].parents.len(), 1);
        let (mu1, mu2) = model.temperatures().unwrap();
        assert!((mu1 - 1.0).abs() < 1e-12 && (mu2 - 1.0).abs() < 1e-12);
        let reference =
            crate::parser_net::calibrate(&SyntacticDistances(out[0].tau.clone()), &SyntacticHeights(out[0].delta.clone())).unwrap();
        let expected = crate::depdist::parent_dist(&reference.0, &out[0].delta, mu1, mu2).unwrap();
        for (a, b) in expected.as_slice().iter().zip(out[0].parents.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(decode_parents(&out[0].parents).len(), 4);
    }
}
