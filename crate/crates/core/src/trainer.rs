//! Training loops: the edge-vs-noise patch experiment and image
//! classification.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::datasets::{stream_batches, Augmentation, LabeledImageSet};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{ForwardOptions, LossKind, Model, ModelSpec, Table1Row};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::real::Real;
use crate::rng::{derive_seed, stream};
use crate::stimulus::{make_batch, EdgeStyle, StimulusBatch};
use crate::tensor::Tensor;

/// Updates per loss window in [`RepetitionResult::loss_windows`].
pub const LOSS_WINDOW: usize = 100;

/// Adam step size of the patch experiment. At 1e-3 a single edge unit
/// needs several hundred updates before its bias and scale move far enough.
pub const TABLE1_LR: f64 = 3e-2;

/// Offset mixed into a repetition seed for its held-out evaluation set.
const EVAL_STREAM: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table1Config {
    pub row: Table1Row,
    pub style: EdgeStyle,
    pub angle: f64,
    pub updates: usize,
    pub edges_per_update: usize,
    pub noise_per_update: usize,
    pub checkpoints: Vec<usize>,
    pub eval_edges: usize,
    pub eval_noise: usize,
    pub optimizer: OptimizerConfig,
    pub repetitions: usize,
    pub base_seed: u64,
}

impl Table1Config {
    /// 1000 updates on 16 edges + 16 noise patches of size 5, checkpoints
    /// at 100/500/1000, 25 repetitions, Adam with step 3e-2.
    pub fn new(row: Table1Row) -> Self {
        Table1Config {
            row,
            style: EdgeStyle::new(5, 0.4),
            angle: 45.0,
            updates: 1000,
            edges_per_update: 16,
            noise_per_update: 16,
            checkpoints: vec![100, 500, 1000],
            eval_edges: 1024,
            eval_noise: 1024,
            optimizer: OptimizerConfig::adam(TABLE1_LR),
            repetitions: 25,
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.updates == 0 || self.repetitions == 0 {
            return Err(Error::invalid("Table1Config", "updates and repetitions must be positive"));
        }
        if self.checkpoints.is_empty() || self.checkpoints.iter().any(|&c| c == 0 || c > self.updates) {
            return Err(Error::invalid("Table1Config", "checkpoints must lie in [1, updates]"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("Table1Config", "checkpoints must be strictly increasing"));
        }
        if self.edges_per_update + self.noise_per_update == 0 || self.eval_edges + self.eval_noise == 0 {
            return Err(Error::invalid("Table1Config", "batches must not be empty"));
        }
        if let Table1Row::Layered(0) | Table1Row::Edge(0) = self.row {
            return Err(Error::invalid("Table1Config", "layer width must be positive"));
        }
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::table1(self.row, self.style.patch)
    }

    pub fn repetition_seed(&self, rep: usize) -> u64 {
        derive_seed(self.base_seed, rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub seed: u64,
    /// Held-out accuracy at each checkpoint; NaN after divergence.
    pub accuracies: Vec<f64>,
    /// Mean training loss of each full window of [`LOSS_WINDOW`] updates.
    pub loss_windows: Vec<f64>,
    /// Update (1-based) at which the loss became non-finite.
    pub diverged_at: Option<usize>,
}

/// Accuracy of thresholding logits at zero against boolean labels.
pub fn binary_accuracy<T: Real>(logits: &Tensor<T>, labels: &[bool]) -> f64 {
    let hits = logits
        .data()
        .iter()
        .zip(labels)
        .filter(|(&z, &l)| (z > T::zero()) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn batch_inputs<T: Real>(batch: &StimulusBatch) -> (Tensor<T>, Vec<T>) {
    let targets = batch.labels.iter().map(|&l| if l { T::one() } else { T::zero() }).collect();
    (batch.pixels.cast(), targets)
}

/// Target of one optimisation step.
pub enum Targets<'a, T> {
    Binary(&'a [T]),
    Classes(&'a [usize]),
}

/// One optimiser update on a batch; returns the training loss and the
/// logits it was computed from.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    optimizer: &mut Optimizer<T>,
    inputs: Tensor<T>,
    targets: Targets<'_, T>,
) -> Result<(f64, Tensor<T>)> {
    let mut g = Graph::new();
    let x = g.constant(inputs);
    let f = model.forward(&mut g, x, ForwardOptions::train())?;
    let loss = match (model.spec().loss, targets) {
        (LossKind::Binary, Targets::Binary(t)) => g.bce_with_logits(f.output, t)?,
        (LossKind::Categorical, Targets::Classes(c)) => g.cross_entropy(f.output, c)?,
        _ => return Err(Error::invalid("train_step", "targets do not match the model's loss")),
    };
    let value = g.value(loss)?.item()?.f64();
    let grads = g.backward(loss)?;
    let gs: Vec<Tensor<T>> = f
        .params
        .iter()
        .map(|&p| Ok(grads.get_or_zeros(p, g.value(p)?.shape())))
        .collect::<Result<_>>()?;
    optimizer.step(model.parameters_mut(), &gs)?;
    model.apply_batch_stats(&f.batch_stats);
    let logits = g.value(f.output)?.clone();
    Ok((value, logits))
}

/// One repetition of the edge-vs-noise experiment: a fresh batch for each
/// update, held-out accuracy at the checkpoints.
pub fn run_table1_repetition(config: &Table1Config, rep: usize) -> Result<RepetitionResult> {
    train_table1_model(config, rep).map(|(_, r)| r)
}

/// [`run_table1_repetition`] that also returns the final model.
pub fn train_table1_model(config: &Table1Config, rep: usize) -> Result<(Model<f32>, RepetitionResult)> {
    config.validate()?;
    let seed = config.repetition_seed(rep);
    let mut rng = stream(seed);
    let mut eval_rng = stream(seed ^ EVAL_STREAM);
    let angles = [config.angle];
    let eval = make_batch(config.eval_edges, config.eval_noise, &angles, &config.style, &mut eval_rng)?;
    let (eval_x, _) = batch_inputs::<f32>(&eval);
    let mut model = Model::<f32>::build(&config.spec(), &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer);

    let mut accuracies = Vec::with_capacity(config.checkpoints.len());
    let mut loss_windows = Vec::new();
    let mut window_sum = 0.0;
    let mut diverged_at = None;
    let mut next_checkpoint = config.checkpoints.iter().peekable();
    for update in 1..=config.updates {
        let batch = make_batch(config.edges_per_update, config.noise_per_update, &angles, &config.style, &mut rng)?;
        let (x, t) = batch_inputs::<f32>(&batch);
        match train_step(&mut model, &mut optimizer, x, Targets::Binary(&t)) {
            Ok((loss, _)) if loss.is_finite() => window_sum += loss,
            Ok(_) => {
                diverged_at = Some(update);
                break;
            }
            Err(e) if e.is_numerical() => {
                diverged_at = Some(update);
                break;
            }
            Err(e) => return Err(e),
        }
        if update % LOSS_WINDOW == 0 {
            loss_windows.push(window_sum / LOSS_WINDOW as f64);
            window_sum = 0.0;
        }
        if next_checkpoint.peek() == Some(&&update) {
            next_checkpoint.next();
            accuracies.push(match model.logits(&eval_x) {
                Ok(z) => binary_accuracy(&z, &eval.labels),
                Err(e) if e.is_numerical() => f64::NAN,
                Err(e) => return Err(e),
            });
        }
    }
    accuracies.resize(config.checkpoints.len(), f64::NAN);
    let result = RepetitionResult {
        seed,
        accuracies,
        loss_windows,
        diverged_at,
    };
    Ok((model, result))
}

/// Mean and sample standard deviation of the finite values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Float::sqrt(var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub label: String,
    pub checkpoints: Vec<usize>,
    pub repetitions: Vec<RepetitionResult>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TrialReport {
    /// Aggregates repetitions in the order given.
    pub fn from_repetitions(config: &Table1Config, repetitions: Vec<RepetitionResult>) -> Self {
        let (mean, std) = (0..config.checkpoints.len())
            .map(|c| {
                let column: Vec<f64> = repetitions.iter().map(|r| r.accuracies[c]).collect();
                mean_std(&column)
            })
            .unzip();
        TrialReport {
            label: config.row.label(),
            checkpoints: config.checkpoints.clone(),
            repetitions,
            mean,
            std,
        }
    }

    pub fn mean_at(&self, checkpoint: usize) -> Option<f64> {
        let i = self.checkpoints.iter().position(|&c| c == checkpoint)?;
        Some(self.mean[i])
    }

    pub fn diverged(&self) -> usize {
        self.repetitions.iter().filter(|r| r.diverged_at.is_some()).count()
    }

    /// Repetitions whose last loss window is below their first.
    pub fn loss_decreased(&self) -> usize {
        self.repetitions
            .iter()
            .filter(|r| match (r.loss_windows.first(), r.loss_windows.last()) {
                (Some(a), Some(b)) => r.loss_windows.len() > 1 && b < a,
                _ => false,
            })
            .count()
    }
}

/// All repetitions of one row, sequentially.
pub fn run_table1(config: &Table1Config) -> Result<TrialReport> {
    let reps = (0..config.repetitions)
        .map(|r| run_table1_repetition(config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialReport::from_repetitions(config, reps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augmentation: Augmentation,
    pub seed: u64,
    /// Batch size used for evaluation passes.
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

fn default_eval_batch() -> usize {
    256
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(1e-3),
            augmentation: Augmentation::None,
            seed: 0,
            eval_batch: default_eval_batch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    /// Parameters of the epoch with the best validation accuracy.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn argmax_accuracy(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == l
        })
        .count()
}

/// Eval-mode classification accuracy on a whole set.
pub fn evaluate(model: &Model<f32>, set: &LabeledImageSet, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("evaluate", "empty set"));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut hits = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let part = set.select(chunk, set.split)?;
        hits += argmax_accuracy(&model.logits(&part.images)?, &part.labels);
    }
    Ok(hits as f64 / set.len() as f64)
}

/// Mini-batch training with best-on-validation checkpointing.
pub fn train_classifier(
    mut model: Model<f32>,
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::invalid("train_classifier", "epochs and batch size must be positive"));
    }
    if model.spec().loss != LossKind::Categorical {
        return Err(Error::invalid("train_classifier", "model must have a categorical head"));
    }
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    for epoch in 1..=config.epochs {
        let seed = derive_seed(config.seed, epoch as u64);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0, 0);
        for batch in stream_batches(train, config.batch_size, seed, config.augmentation)? {
            let (x, labels) = batch?;
            let (loss, logits) = train_step(&mut model, &mut optimizer, x, Targets::Classes(&labels))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "train_classifier" });
            }
            loss_sum += loss * labels.len() as f64;
            hits += argmax_accuracy(&logits, &labels);
            seen += labels.len();
        }
        let val_accuracy = evaluate(&model, val, config.eval_batch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: hits as f64 / seen as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainedClassifier {
        model,
        best_epoch,
        history,
    })
}
