//! Synthetic co-occurrence task and a small SGD training harness.
//!
//! Every sample is a set of tokens. A few tokens carry a latent group
//! vector (plus noise), the rest are pure noise. In the default pair mode a
//! sample contains two groups and its class is the perfect matching of the
//! group graph that the pair belongs to. Each matching covers every group
//! exactly once, so all classes have the same expected token mean: the
//! label is only visible in which groups appear *together*.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::{self, BlockOutput};
use crate::ses::{self, SeSConfig, SeSState};
use crate::softhg::{BlockConfig, Dense, SoftHGParams};
use crate::tensor::{softmax_in_place, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Tokens per sample.
    pub tokens: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub tokens_per_group: usize,
    /// Groups present in each sample: 1 (class = group) or 2 (class = matching).
    pub groups_per_sample: usize,
    /// Std of the noise added to group tokens.
    pub group_noise: f64,
    /// Std of the pure-noise tokens.
    pub token_noise: f64,
    /// Per-coordinate std of the latent group vectors.
    pub group_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 2400,
            tokens: 12,
            dim: 16,
            n_classes: 3,
            tokens_per_group: 3,
            groups_per_sample: 2,
            group_noise: 0.3,
            token_noise: 1.0,
            group_scale: 1.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.dim == 0 || self.tokens_per_group == 0 {
            return Err(Error::config("dim and tokens_per_group must be positive"));
        }
        if self.tokens < 3 * self.tokens_per_group {
            return Err(Error::config(format!(
                "tokens ({}) must be at least 3 x tokens_per_group ({})",
                self.tokens, self.tokens_per_group
            )));
        }
        if !matches!(self.groups_per_sample, 1 | 2) {
            return Err(Error::config("groups_per_sample must be 1 or 2"));
        }
        if self.group_noise < 0.0 || self.token_noise < 0.0 || self.group_scale <= 0.0 {
            return Err(Error::config(
                "noise levels must be non-negative and group_scale positive",
            ));
        }
        Ok(())
    }

    /// Number of latent groups the generator draws.
    pub fn n_groups(&self) -> usize {
        match self.groups_per_sample {
            1 => self.n_classes,
            _ => {
                let g = self.n_classes + 1;
                g + g % 2
            }
        }
    }
}

/// Round-robin 1-factorization of the complete graph on `g` (even) vertices:
/// `g - 1` perfect matchings, each a list of `g / 2` pairs.
pub fn round_robin_matchings(g: usize) -> Vec<Vec<(usize, usize)>> {
    assert!(g >= 2 && g.is_multiple_of(2));
    let rounds = g - 1;
    (0..rounds)
        .map(|r| {
            let mut pairs = vec![(r, g - 1)];
            for i in 1..g / 2 {
                let a = (r + i) % rounds;
                let b = (r + rounds - i) % rounds;
                pairs.push((a.min(b), a.max(b)));
            }
            pairs
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Matrix,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub config: DatasetConfig,
    /// Latent group vectors, one row each.
    pub groups: Matrix,
}

impl GroupDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `n_test` samples.
    pub fn split(mut self, n_test: usize) -> (GroupDataset, GroupDataset) {
        let n_test = n_test.min(self.samples.len());
        let test = self.samples.split_off(self.samples.len() - n_test);
        let test_set = GroupDataset {
            samples: test,
            n_classes: self.n_classes,
            config: self.config.clone(),
            groups: self.groups.clone(),
        };
        (self, test_set)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Labels cycle through the classes so every class is equally frequent;
/// token positions are shuffled within each sample.
pub fn gen_group_dataset(cfg: &DatasetConfig) -> Result<GroupDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let n_groups = cfg.n_groups();
    let groups = Matrix::from_fn(n_groups, d, |_, _| cfg.group_scale * normal(&mut rng));
    let matchings = round_robin_matchings(n_groups.max(2) + n_groups % 2);

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut order: Vec<usize> = (0..cfg.tokens).collect();
    for s in 0..cfg.n_samples {
        let label = s % cfg.n_classes;
        let present: Vec<usize> = match cfg.groups_per_sample {
            1 => vec![label],
            _ => {
                let m = &matchings[label];
                let (a, b) = m[rng.gen_range(0..m.len())];
                vec![a, b]
            }
        };
        order.shuffle(&mut rng);
        let mut tokens = Matrix::zeros(cfg.tokens, d);
        for (slot, &pos) in order.iter().enumerate() {
            let group = present.get(slot / cfg.tokens_per_group).copied();
            let row = tokens.row_mut(pos);
            match group {
                Some(g) => {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = groups[(g, j)] + cfg.group_noise * normal(&mut rng);
                    }
                }
                None => {
                    for v in row.iter_mut() {
                        *v = cfg.token_noise * normal(&mut rng);
                    }
                }
            }
        }
        samples.push(Sample { tokens, label });
    }
    Ok(GroupDataset {
        samples,
        n_classes: cfg.n_classes,
        config: cfg.clone(),
        groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Mean over tokens, then the linear head.
    PoolBaseline,
    Softhgnn,
    SofthgnnSes,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pool_baseline" | "pool" => Ok(ModelKind::PoolBaseline),
            "softhgnn" => Ok(ModelKind::Softhgnn),
            "softhgnn_ses" | "ses" => Ok(ModelKind::SofthgnnSes),
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected pool_baseline, softhgnn or softhgnn_ses)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Block hyperparameters; `dim` is overridden by the dataset width and
    /// `hyperedges` by the selection split for the sparse model.
    pub block: BlockConfig,
    pub ses: SeSConfig,
    /// Weight of the load-balancing statistic in the reported loss.
    pub lb_weight: f64,
    pub dataset: DatasetConfig,
    /// Samples held out for evaluation, taken from the end of the dataset.
    pub n_test: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Softhgnn,
            epochs: 10,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            block: BlockConfig::with_dim(16),
            ses: SeSConfig::default(),
            lb_weight: 1.0,
            dataset: DatasetConfig::default(),
            n_test: 600,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "learning rate must be >= 0 and momentum in [0, 1)",
            ));
        }
        if self.n_test >= self.dataset.n_samples {
            return Err(Error::config("n_test must leave training samples"));
        }
        self.dataset.validate()?;
        if self.model == ModelKind::SofthgnnSes {
            self.ses.validate()?;
        }
        Ok(())
    }

    fn block_config(&self) -> BlockConfig {
        let mut b = self.block.clone();
        b.dim = self.dataset.dim;
        if b.residual {
            b.out_dim = b.dim;
        }
        if self.model == ModelKind::SofthgnnSes {
            b.hyperedges = self.ses.total();
        }
        b
    }
}

/// Optional block followed by token mean-pooling and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub block: Option<SoftHGParams>,
    pub ses: Option<SeSConfig>,
    pub head: Dense,
}

struct SampleForward {
    block: Option<BlockOutput>,
    pooled: Matrix,
    logits: Vec<f64>,
}

impl Model {
    pub fn init(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (block, width) = match cfg.model {
            ModelKind::PoolBaseline => (None, cfg.dataset.dim),
            _ => {
                let bc = cfg.block_config();
                let width = bc.out_dim;
                (Some(SoftHGParams::init(bc, rng)?), width)
            }
        };
        let ses = (cfg.model == ModelKind::SofthgnnSes).then_some(cfg.ses);
        Ok(Self {
            kind: cfg.model,
            block,
            ses,
            head: Dense::init(width, cfg.dataset.n_classes, rng),
        })
    }

    fn forward(&self, tokens: &Matrix) -> Result<SampleForward> {
        let block = match (&self.block, &self.ses) {
            (None, _) => None,
            (Some(p), None) => Some(message::softhgnn_forward(tokens, p)?),
            (Some(p), Some(c)) => Some(message::softhgnn_forward_ses(tokens, p, c)?),
        };
        let feats = block.as_ref().map_or(tokens, |b| &b.x_out);
        let n = feats.rows() as f64;
        let pooled = Matrix::row_vector(feats.col_sums().into_iter().map(|v| v / n).collect());
        let logits = self.head.forward(&pooled)?.into_data();
        Ok(SampleForward {
            block,
            pooled,
            logits,
        })
    }

    pub fn logits(&self, tokens: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(tokens)?.logits)
    }

    pub fn predict(&self, tokens: &Matrix) -> Result<usize> {
        Ok(argmax(&self.logits(tokens)?))
    }

    /// Every learnable tensor, head last.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = self
            .block
            .iter()
            .flat_map(|b| b.tensors())
            .map(|(n, m)| (n.to_string(), m))
            .collect();
        v.push(("head_w".into(), &self.head.w));
        v.push(("head_b".into(), &self.head.b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self
            .block
            .iter_mut()
            .flat_map(|b| b.tensors_mut())
            .map(|(_, m)| m)
            .collect();
        v.push(&mut self.head.w);
        v.push(&mut self.head.b);
        v
    }

    fn zeros_like(&self) -> Vec<Matrix> {
        self.tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    /// Accumulates the cross-entropy gradient of one sample into `grads`
    /// (same order as `tensors`) and returns the loss.
    fn accumulate(&self, fwd: &SampleForward, label: usize, grads: &mut [Matrix]) -> Result<f64> {
        let loss = cross_entropy(&fwd.logits, label);
        let mut probs = fwd.logits.clone();
        softmax_in_place(&mut probs);
        probs[label] -= 1.0;
        let d_logits = Matrix::row_vector(probs);

        let last = grads.len();
        grads[last - 2].add_assign(&fwd.pooled.matmul_tn(&d_logits)?)?;
        grads[last - 1].add_assign(&d_logits)?;

        if let (Some(params), Some(out)) = (&self.block, &fwd.block) {
            let d_pooled = d_logits.matmul_nt(&self.head.w)?;
            let n = out.x_out.rows();
            let inv = 1.0 / n as f64;
            let d_out = Matrix::from_fn(n, d_pooled.cols(), |_, j| d_pooled[(0, j)] * inv);
            let bg = message::softhgnn_backward(params, out, &d_out)?;
            for (acc, (_, g)) in grads.iter_mut().zip(bg.params.tensors()) {
                acc.add_assign(g)?;
            }
        }
        Ok(loss)
    }

    /// Block and head tensors as one flat map; head entries are `head_w`
    /// and `head_b`.
    pub fn to_tensor_map(&self) -> crate::softhg::TensorMap {
        let mut map = self
            .block
            .as_ref()
            .map(|b| b.to_tensor_map())
            .unwrap_or_default();
        map.insert("head_w".into(), (&self.head.w).into());
        map.insert("head_b".into(), (&self.head.b).into());
        map
    }

    /// Overwrites parameters from a map produced by [`Model::to_tensor_map`].
    pub fn load_tensor_map(&mut self, map: &crate::softhg::TensorMap) -> Result<()> {
        if let Some(block) = &mut self.block {
            *block = SoftHGParams::from_tensor_map(block.config.clone(), map)?;
        }
        for (name, slot) in [("head_w", &mut self.head.w), ("head_b", &mut self.head.b)] {
            let m = map
                .get(name)
                .ok_or_else(|| Error::config(format!("parameter file is missing `{name}`")))?
                .to_matrix()?;
            if m.shape() != slot.shape() {
                return Err(Error::shape(
                    "load parameters",
                    "file",
                    m.shape(),
                    name,
                    slot.shape(),
                ));
            }
            *slot = m;
        }
        Ok(())
    }
}

/// `logsumexp(logits) - logits[label]`; non-finite logits give a
/// non-finite loss.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Index of the largest value; lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy_from_logits(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(l, &y)| argmax(l) == y)
        .count();
    hits as f64 / labels.len() as f64
}

pub fn evaluate(model: &Model, data: &GroupDataset) -> Result<f64> {
    Ok(evaluate_full(model, data)?.1)
}

/// Mean cross-entropy and accuracy.
fn evaluate_full(model: &Model, data: &GroupDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    for s in &data.samples {
        let z = model.logits(&s.tokens)?;
        if argmax(&z) == s.label {
            hits += 1;
        }
        loss += cross_entropy(&z, s.label);
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, hits as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of the per-step training objective (cross-entropy plus the
    /// weighted load-balancing statistic) over the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Mean load-balancing statistic over the epoch's steps; 0 without SeS.
    pub l_lb: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model,
    pub ses_state: Option<SeSState>,
}

impl TrainOutcome {
    pub fn final_test_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.test_accuracy)
    }
}

/// Generates the configured dataset, trains, and evaluates after each epoch.
pub fn run(cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_from(cfg, None)
}

/// As [`run`], optionally replacing the random initialization with saved
/// parameters.
pub fn run_from(
    cfg: &TrainConfig,
    init: Option<&crate::softhg::TensorMap>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = gen_group_dataset(&cfg.dataset)?;
    let (train, test) = data.split(cfg.n_test);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg, &mut rng)?;
    if let Some(map) = init {
        model.load_tensor_map(map)?;
    }
    train_loop(cfg, model, &train, &test, &mut rng)
}

/// Mini-batch SGD (with optional momentum) on mean cross-entropy.
pub fn train_loop(
    cfg: &TrainConfig,
    mut model: Model,
    train: &GroupDataset,
    test: &GroupDataset,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut ses_state = model.ses.as_ref().map(SeSState::new);
    let mut velocity = model.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_lb = 0.0;
        let mut hits = 0usize;
        let mut steps = 0usize;

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zeros_like();
            let mut ce = 0.0;
            let mut lb = 0.0;
            for &idx in batch {
                let s = &train.samples[idx];
                let fwd = model.forward(&s.tokens)?;
                if argmax(&fwd.logits) == s.label {
                    hits += 1;
                }
                ce += model.accumulate(&fwd, s.label, &mut grads)?;
                if let (Some(state), Some(sc), Some(out)) = (&mut ses_state, &model.ses, &fwd.block)
                {
                    let sel = out.selection.as_deref().unwrap_or(&[]);
                    lb = ses::record_and_balance(state, sel, sc);
                }
            }
            let b = batch.len() as f64;
            let loss = ce / b + cfg.lb_weight * lb;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, step {step}: loss {loss}"
                )));
            }
            for ((param, g), v) in model
                .tensors_mut()
                .into_iter()
                .zip(&grads)
                .zip(&mut velocity)
            {
                for ((p, &gi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vi = cfg.momentum * *vi + gi / b;
                    *p -= cfg.learning_rate * *vi;
                }
            }
            if model.tensors().iter().any(|(_, m)| !m.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, step {step}: non-finite parameters"
                )));
            }
            epoch_loss += loss;
            epoch_lb += lb;
            steps += 1;
        }

        let (test_loss, test_accuracy) = evaluate_full(&model, test)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / steps as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            test_loss,
            test_accuracy,
            l_lb: epoch_lb / steps as f64,
        });
    }

    Ok(TrainOutcome {
        metrics,
        model,
        ses_state,
    })
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,l_lb";

/// Two rows per epoch (`train`, `test`); the test rows repeat the epoch's
/// training `l_lb`.
pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(
            w,
            "{},train,{:.10},{:.6},{:.10}",
            m.epoch, m.train_loss, m.train_accuracy, m.l_lb
        )?;
        writeln!(
            w,
            "{},test,{:.10},{:.6},{:.10}",
            m.epoch, m.test_loss, m.test_accuracy, m.l_lb
        )?;
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_cfg(model: ModelKind) -> TrainConfig {
        TrainConfig {
            model,
            epochs: 2,
            dataset: DatasetConfig {
                n_samples: 120,
                ..DatasetConfig::default()
            },
            n_test: 40,
            ses: SeSConfig {
                m_fixed: 2,
                m_dyn: 4,
                k: 2,
                window: 16,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn matchings_partition_all_pairs() {
        for g in [2, 4, 6, 8] {
            let ms = round_robin_matchings(g);
            assert_eq!(ms.len(), g - 1);
            let mut seen = BTreeSet::new();
            for m in &ms {
                let mut covered: Vec<usize> = m.iter().flat_map(|&(a, b)| [a, b]).collect();
                covered.sort();
                assert_eq!(covered, (0..g).collect::<Vec<_>>());
                for &p in m {
                    assert!(seen.insert(p), "pair {p:?} repeated");
                }
            }
            assert_eq!(seen.len(), g * (g - 1) / 2);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let cfg = DatasetConfig {
            n_samples: 90,
            ..DatasetConfig::default()
        };
        let a = gen_group_dataset(&cfg).unwrap();
        let b = gen_group_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        for c in 0..cfg.n_classes {
            assert_eq!(a.samples.iter().filter(|s| s.label == c).count(), 30);
        }
        let other = gen_group_dataset(&DatasetConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.samples[0].tokens, other.samples[0].tokens);
    }

    #[test]
    fn dataset_rejects_too_few_tokens() {
        let cfg = DatasetConfig {
            tokens: 8,
            tokens_per_group: 3,
            ..DatasetConfig::default()
        };
        assert!(matches!(gen_group_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn even_class_count_uses_extra_group() {
        let cfg = DatasetConfig {
            n_classes: 4,
            ..DatasetConfig::default()
        };
        assert_eq!(cfg.n_groups(), 6);
        assert_eq!(gen_group_dataset(&cfg).unwrap().groups.rows(), 6);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn oracle_logits_score_perfectly() {
        let labels = vec![0, 2, 1, 1];
        let logits: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..3).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(accuracy_from_logits(&logits, &labels), 1.0);
    }

    #[test]
    fn constant_classifier_scores_class_frequency() {
        let labels = vec![0, 1, 0, 2, 0];
        let logits = vec![vec![1.0, 0.0, 0.0]; labels.len()];
        assert_eq!(accuracy_from_logits(&logits, &labels), 0.6);
    }

    #[test]
    fn evaluate_ignores_sample_order() {
        let cfg = small_cfg(ModelKind::Softhgnn);
        let data = gen_group_dataset(&cfg.dataset).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::init(&cfg, &mut rng).unwrap();
        let acc = evaluate(&model, &data).unwrap();
        let mut shuffled = data.clone();
        shuffled.samples.reverse();
        assert_eq!(acc, evaluate(&model, &shuffled).unwrap());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg(ModelKind::Softhgnn)
        };
        let data = gen_group_dataset(&cfg.dataset).unwrap();
        let (train, test) = data.split(cfg.n_test);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(&cfg, &mut rng).unwrap();
        let initial = model.clone();
        let out = train_loop(&cfg, model, &train, &test, &mut rng).unwrap();
        assert_eq!(out.model, initial);
    }

    #[test]
    fn runs_are_reproducible() {
        for kind in [
            ModelKind::PoolBaseline,
            ModelKind::Softhgnn,
            ModelKind::SofthgnnSes,
        ] {
            let cfg = small_cfg(kind);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn ses_run_keeps_window_statistics() {
        let cfg = small_cfg(ModelKind::SofthgnnSes);
        let out = run(&cfg).unwrap();
        let state = out.ses_state.unwrap();
        assert!(state.window_full());
        let total: f64 = state.probabilities().iter().sum();
        assert!((total - cfg.ses.k as f64).abs() < 1e-12);
        assert!(out.metrics.iter().all(|m| m.l_lb >= 0.0));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            ..small_cfg(ModelKind::Softhgnn)
        };
        let err = run(&cfg).unwrap_err();
        assert!(err.to_string().contains("diverged at epoch"), "{err}");
    }

    #[test]
    fn metrics_csv_layout() {
        let m = EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            train_accuracy: 0.25,
            test_loss: 0.75,
            test_accuracy: 0.5,
            l_lb: 0.0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert!(lines[1].starts_with("1,train,"));
        assert!(lines[2].starts_with("1,test,"));
    }

    #[test]
    fn tensor_map_round_trip_for_model() {
        let cfg = small_cfg(ModelKind::Softhgnn);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::init(&cfg, &mut rng).unwrap();
        let map = model.to_tensor_map();
        let mut other = Model::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        other.load_tensor_map(&map).unwrap();
        assert_eq!(other, model);
    }
}
