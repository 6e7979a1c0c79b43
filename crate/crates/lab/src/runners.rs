//! Parallel drivers. Work is split into tasks with their own seeds and
//! collected in task order, so results do not depend on the thread count.

use edgelab_core::probe::{assemble_layer, probe_cells, ProbeConfig, ProbeReport};
use edgelab_core::rng::{derive_seed, stream};
use edgelab_core::stimulus::{noise_delta_summary, DeltaSummary};
use edgelab_core::trainer::{run_table1_repetition, Table1Config, TrialReport};
use edgelab_core::Model;
use rayon::prelude::*;

use crate::error::{LabError, Result};

/// Noise patches per Monte Carlo task.
pub const STATS_CHUNK: usize = 20_000;

/// All repetitions of one row, in parallel.
pub fn table1(config: &Table1Config) -> Result<TrialReport> {
    config.validate()?;
    let reps = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_table1_repetition(config, r))
        .collect::<edgelab_core::Result<Vec<_>>>()?;
    Ok(TrialReport::from_repetitions(config, reps))
}

/// Δ distribution over `samples` noise patches, pooled over fixed chunks.
pub fn noise_stats(samples: usize, patch: usize, epsilon: f64, seed: u64) -> Result<DeltaSummary> {
    if samples < 2 {
        return Err(LabError::config("need at least two samples"));
    }
    let chunks = (samples / STATS_CHUNK).max(1);
    let sizes: Vec<usize> = (0..chunks).map(|i| samples / chunks + usize::from(i < samples % chunks)).collect();
    let parts = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n)| noise_delta_summary(n, patch, epsilon, &mut stream(derive_seed(seed, i as u64))))
        .collect::<edgelab_core::Result<Vec<_>>>()?;
    let (mut count, mut sum, mut sum_sq, mut inside) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in &parts {
        let n = (p.samples * 3) as f64;
        count += n;
        sum += p.mean * n;
        sum_sq += p.std * p.std * (n - 1.0) + n * p.mean * p.mean;
        inside += p.inside * n;
    }
    let mean = sum / count;
    let var = (sum_sq - count * mean * mean) / (count - 1.0);
    Ok(DeltaSummary {
        samples,
        mean,
        std: var.max(0.0).sqrt(),
        inside: inside / count,
        epsilon,
    })
}

/// Probes every (layer, angle) cell in parallel.
pub fn probe(model: &Model<f32>, config: &ProbeConfig, negate: bool) -> Result<ProbeReport> {
    config.validate()?;
    if let Some(&bad) = config.layers.iter().find(|&&l| l >= model.num_layers()) {
        return Err(LabError::config(format!("layer {bad} out of range (model has {})", model.num_layers())));
    }
    let tasks: Vec<(usize, usize)> = config
        .layers
        .iter()
        .flat_map(|&l| (0..config.angles.len()).map(move |a| (l, a)))
        .collect();
    let cells = tasks
        .par_iter()
        .map(|&(l, a)| probe_cells(model, l, config, a, negate))
        .collect::<edgelab_core::Result<Vec<_>>>()?;
    let mut cells = cells.into_iter();
    let layers = config
        .layers
        .iter()
        .map(|&l| {
            let per_angle: Vec<_> = cells.by_ref().take(config.angles.len()).collect();
            assemble_layer(model, l, config, per_angle)
        })
        .collect();
    Ok(ProbeReport {
        samples: config.samples,
        seed: config.seed,
        layers,
    })
}
