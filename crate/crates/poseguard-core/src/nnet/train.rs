//! Deterministic mini-batch gradient descent over vector datasets, with an
//! optional curriculum that mixes samples from multiple sources with
//! per-stage weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce_loss, cross_entropy_loss, Network, NetworkGrad, NnetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTag {
    BinaryCrossEntropy,
    CrossEntropy,
    Chamfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossTag,
    /// 0.0 disables momentum.
    pub momentum: f64,
    /// Per-epoch learning-rate decay: the effective rate at epoch e is
    /// learning_rate / (1 + lr_decay · e). 0.0 keeps it constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            loss: LossTag::BinaryCrossEntropy,
            momentum: 0.0,
            lr_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnetError> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(NnetError::InvalidInput("learning_rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(NnetError::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnetError::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay >= 0.0) || !self.lr_decay.is_finite() {
            return Err(NnetError::InvalidInput("lr_decay must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// One curriculum stage: from `epoch_start` on, sample sources with the
/// given weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingStage {
    pub epoch_start: usize,
    pub dataset_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSchedule {
    pub stages: Vec<MixingStage>,
}

impl MixingSchedule {
    pub fn validate(&self) -> Result<(), NnetError> {
        if self.stages.is_empty() {
            return Err(NnetError::InvalidInput("mixing schedule has no stages".into()));
        }
        if self.stages[0].epoch_start != 0 {
            return Err(NnetError::InvalidInput("first mixing stage must start at epoch 0".into()));
        }
        for w in self.stages.windows(2) {
            if w[1].epoch_start <= w[0].epoch_start {
                return Err(NnetError::InvalidInput(
                    "mixing stages must have strictly increasing epoch_start".into(),
                ));
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.dataset_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(NnetError::InvalidInput(format!(
                    "stage {i} has a negative or non-finite weight"
                )));
            }
            if s.dataset_weights.iter().sum::<f64>() <= 0.0 {
                return Err(NnetError::InvalidInput(format!("stage {i} weights sum to zero")));
            }
        }
        Ok(())
    }

    pub fn stage_for_epoch(&self, epoch: usize) -> &MixingStage {
        self.stages
            .iter()
            .rev()
            .find(|s| s.epoch_start <= epoch)
            .expect("validated schedule covers epoch 0")
    }
}

/// Supervised vector dataset. `sources[i]` tags sample `i` with the dataset
/// source it came from (all zeros when there is only one source).
#[derive(Debug, Clone, Default)]
pub struct VectorDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub sources: Vec<usize>,
}

impl VectorDataset {
    pub fn from_pairs(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Self {
        let n = inputs.len();
        Self { inputs, targets, sources: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, net: &Network) -> Result<(), NnetError> {
        if self.is_empty() {
            return Err(NnetError::InvalidDataset("dataset is empty".into()));
        }
        if self.targets.len() != self.len() || self.sources.len() != self.len() {
            return Err(NnetError::InvalidDataset("inputs/targets/sources length mismatch".into()));
        }
        for (i, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != net.input_dim() || y.len() != net.output_dim() {
                return Err(NnetError::DimensionMismatch(format!(
                    "sample {i}: input {} target {} vs network {}→{}",
                    x.len(),
                    y.len(),
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }

    fn source_count(&self) -> usize {
        self.sources.iter().copied().max().unwrap_or(0) + 1
    }
}

/// Per-epoch loss curve plus instrumented per-source sampling counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub source_sample_counts: Vec<Vec<usize>>,
}

/// Deterministic mini-batch gradient descent. Without a schedule, each
/// epoch is a seeded shuffle of the full dataset; with one, each epoch
/// draws `len` samples source-first (categorical by stage weights, then
/// uniform with replacement inside the source).
pub fn train(
    net: &mut Network,
    data: &VectorDataset,
    config: &TrainConfig,
    schedule: Option<&MixingSchedule>,
) -> Result<TrainReport, NnetError> {
    config.validate()?;
    data.validate(net)?;
    if let Some(s) = schedule {
        s.validate()?;
        let n_sources = data.source_count();
        for (i, stage) in s.stages.iter().enumerate() {
            if stage.dataset_weights.len() != n_sources {
                return Err(NnetError::InvalidInput(format!(
                    "stage {i} has {} weights but dataset has {} sources",
                    stage.dataset_weights.len(),
                    n_sources
                )));
            }
            for (src, w) in stage.dataset_weights.iter().enumerate() {
                if *w > 0.0 && !data.sources.contains(&src) {
                    return Err(NnetError::InvalidDataset(format!(
                        "stage {i} weights source {src} which has no samples"
                    )));
                }
            }
        }
    }
    if matches!(config.loss, LossTag::Chamfer) {
        return Err(NnetError::InvalidInput(
            "chamfer loss applies to cloud reconstruction, not vector datasets".into(),
        ));
    }

    let n_sources = data.source_count();
    let mut by_source: Vec<Vec<usize>> = vec![Vec::new(); n_sources];
    for (i, &s) in data.sources.iter().enumerate() {
        by_source[s].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = NetworkGrad::zeros_like(net);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut source_sample_counts = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        let mut counts = vec![0usize; n_sources];
        let order: Vec<usize> = match schedule {
            None => {
                let mut idx: Vec<usize> = (0..data.len()).collect();
                idx.shuffle(&mut rng);
                for &i in &idx {
                    counts[data.sources[i]] += 1;
                }
                idx
            }
            Some(s) => {
                let stage = s.stage_for_epoch(epoch);
                let total: f64 = stage.dataset_weights.iter().sum();
                (0..data.len())
                    .map(|_| {
                        let mut u = rng.gen_range(0.0..total);
                        let mut src = 0;
                        for (k, w) in stage.dataset_weights.iter().enumerate() {
                            if u < *w {
                                src = k;
                                break;
                            }
                            u -= w;
                        }
                        counts[src] += 1;
                        let pool = &by_source[src];
                        pool[rng.gen_range(0..pool.len())]
                    })
                    .collect()
            }
        };

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = NetworkGrad::zeros_like(net);
            let mut batch_loss = 0.0;
            for &i in batch {
                let trace = net.forward_trace(&data.inputs[i])?;
                let (loss, dloss) = match config.loss {
                    LossTag::BinaryCrossEntropy => bce_loss(trace.output(), &data.targets[i]),
                    LossTag::CrossEntropy => cross_entropy_loss(trace.output(), &data.targets[i]),
                    LossTag::Chamfer => unreachable!("rejected above"),
                };
                batch_loss += loss;
                let sample_grad = net.backward_from_trace(&trace, &dloss)?;
                grad.add_assign(&sample_grad);
            }
            grad.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            if config.momentum > 0.0 {
                velocity.scale(config.momentum);
                velocity.add_assign(&grad);
                net.apply_gradient(&velocity, lr);
            } else {
                net.apply_gradient(&grad, lr);
            }
        }
        let mean_loss = epoch_loss / data.len() as f64;
        if !mean_loss.is_finite() || !net.all_weights_finite() {
            return Err(NnetError::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean_loss);
        source_sample_counts.push(counts);
    }
    Ok(TrainReport { epoch_losses, source_sample_counts })
}
