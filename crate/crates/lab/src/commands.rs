//! Subcommand bodies. Each takes validated settings and the run directory
//! and returns what it wrote, so tests can drive them without a process.

use std::fs;
use std::path::{Path, PathBuf};

use edgelab_core::datasets::LabeledImageSet;
use edgelab_core::model::FirstLayer;
use edgelab_core::probe::{activation_maximization, default_probe_layer, ActMaxConfig, ProbeConfig, ProbeReport, StimulusSize};
use edgelab_core::rng::{derive_seed, stream};
use edgelab_core::robustness::{evaluate_robustness, RobustnessReport};
use edgelab_core::stimulus::{make_batch, DeltaSummary};
use edgelab_core::trainer::{train_classifier, train_table1_model, ClassifierConfig, Table1Config, TrialReport};
use edgelab_core::transforms::{color_shift, negative, ShiftBound};
use edgelab_core::{EdgeStyle, Model, ModelSpec, OptimizerConfig, Tensor};
use serde::Serialize;

use crate::checkpoint::{load_model, save_model};
use crate::cifar::{load_cifar10, resolve_dir, CifarSplits};
use crate::config::*;
use crate::error::{IoContext, LabError, Result};
use crate::etc::{save_etc, EtcTensor};
use crate::imageio::{load_image, patch_grid, save_image, tuning_heatmap, weight_grid};
use crate::reports;
use crate::runners;

/// Name of the checkpoint stem written by training subcommands.
pub const MODEL_STEM: &str = "model";

pub fn table1_config(s: &Table1Settings, row: edgelab_core::Table1Row) -> Table1Config {
    let mut c = Table1Config::new(row);
    c.style = EdgeStyle::new(s.patch, s.epsilon);
    c.angle = s.angle;
    c.updates = s.updates;
    c.edges_per_update = s.batch;
    c.noise_per_update = s.batch;
    c.checkpoints = s.checkpoints.clone();
    c.eval_edges = s.eval;
    c.eval_noise = s.eval;
    c.optimizer = OptimizerConfig::adam(s.lr);
    c.repetitions = s.repetitions;
    c.base_seed = s.seed;
    c
}

/// Every row's repetitions; writes `table1.csv` and `table1_repetitions.csv`.
pub fn table1(s: &Table1Settings, dir: &Path) -> Result<Vec<TrialReport>> {
    let reports = s
        .parsed_rows()?
        .into_iter()
        .map(|row| runners::table1(&table1_config(s, row)))
        .collect::<Result<Vec<_>>>()?;
    reports::write_table1(&dir.join("table1.csv"), &reports)?;
    reports::write_table1_repetitions(&dir.join("table1_repetitions.csv"), &reports)?;
    Ok(reports)
}

/// σ of Δ for two means of `m` uniforms each: `sqrt(2 · (1/12) / m)`.
pub fn analytic_sigma(patch: usize) -> f64 {
    let side = (patch * patch - patch) / 2;
    (2.0 / (12.0 * side as f64)).sqrt()
}

/// Mass of a centred normal with deviation `sigma` inside `(-eps, eps)`.
pub fn normal_inside(sigma: f64, eps: f64) -> f64 {
    libm::erf(eps / (sigma * std::f64::consts::SQRT_2))
}

pub fn stats(s: &StatsSettings, dir: &Path) -> Result<DeltaSummary> {
    let summary = runners::noise_stats(s.samples, s.patch, s.epsilon, s.seed)?;
    let sigma = analytic_sigma(s.patch);
    reports::write_stats(&dir.join("stats.csv"), &summary, s.patch, sigma, normal_inside(sigma, s.epsilon))?;
    Ok(summary)
}

pub fn load_data(d: &DataSettings, seed: u64) -> Result<CifarSplits> {
    let dir = resolve_dir(d.dir.as_deref())?;
    load_cifar10(&dir, d.subset, d.val_fraction, seed)
}

pub fn classifier_config(epochs: usize, batch: usize, lr: f64, augmentation: edgelab_core::datasets::Augmentation, seed: u64) -> ClassifierConfig {
    ClassifierConfig {
        epochs,
        batch_size: batch,
        optimizer: OptimizerConfig::adam(lr),
        augmentation,
        seed,
        ..ClassifierConfig::default()
    }
}

/// Trains the small CIFAR network with the given first layer and keeps the
/// best validation epoch; writes the checkpoint and `history.csv`.
pub fn train_cifar(first: FirstLayer, data: &CifarSplits, config: &ClassifierConfig, dir: &Path) -> Result<Model<f32>> {
    let spec = ModelSpec::cifar(first, edgelab_core::datasets::CIFAR_CLASSES);
    let model = Model::build(&spec, &mut stream(config.seed))?;
    let trained = train_classifier(model, &data.train, &data.val, config)?;
    reports::write_history(&dir.join("history.csv"), &trained.history)?;
    save_model(&trained.model, &dir.join(MODEL_STEM))?;
    Ok(trained.model)
}

pub fn train(s: &TrainSettings, dir: &Path) -> Result<PathBuf> {
    let lr = s.lr.expect("validated settings carry a step size");
    match s.task {
        Task::Cifar => {
            let data = load_data(&s.data, s.seed)?;
            train_cifar(s.first, &data, &classifier_config(s.epochs, s.batch, lr, s.augmentation, s.seed), dir)?;
        }
        Task::Patches => {
            let row = parse_row(&s.row)?;
            let mut config = Table1Config::new(row);
            config.optimizer = OptimizerConfig::adam(lr);
            config.base_seed = s.seed;
            config.repetitions = 1;
            config.validate()?;
            let (model, rep) = train_table1_model(&config, 0)?;
            if rep.diverged_at.is_some() {
                return Err(LabError::Numerical(format!("training diverged at update {}", rep.diverged_at.unwrap_or(0))));
            }
            let rows: Vec<_> = config
                .checkpoints
                .iter()
                .zip(&rep.accuracies)
                .map(|(c, a)| vec![row_name(row), c.to_string(), reports::num(*a)])
                .collect();
            reports::write_csv(&dir.join("accuracy.csv"), &["model", "updates", "accuracy"], &rows)?;
            save_model(&model, &dir.join(MODEL_STEM))?;
        }
    }
    Ok(dir.join(MODEL_STEM))
}

pub fn probe_config(s: &ProbeSettings, model: &Model<f32>) -> Result<ProbeConfig> {
    let layers = if s.layers.is_empty() {
        vec![default_probe_layer(model.spec(), s.readout)
            .ok_or_else(|| LabError::config("model has no edge layer or second convolution; pass --layers"))?]
    } else {
        s.layers.clone()
    };
    Ok(ProbeConfig {
        layers,
        angles: s.angles.clone(),
        samples: s.samples,
        epsilon: s.epsilon,
        rule: s.rule,
        stimulus: s.stimulus.map_or(StimulusSize::ReceptiveField, StimulusSize::Fixed),
        seed: s.seed,
    })
}

/// Writes `probe.csv`, `probe_summary.csv` and a tuning heatmap per layer.
pub fn probe(s: &ProbeSettings, dir: &Path) -> Result<ProbeReport> {
    let model = load_model(&s.model)?;
    let config = probe_config(s, &model)?;
    let report = runners::probe(&model, &config, s.negate)?;
    reports::write_probe_cells(&dir.join("probe.csv"), &report)?;
    reports::write_probe_summary(&dir.join("probe_summary.csv"), &report)?;
    for l in &report.layers {
        tuning_heatmap(l, 16).save(&dir.join(format!("tuning_layer{}.png", l.layer)))?;
    }
    Ok(report)
}

fn png_files(input: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .at(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(LabError::data(format!("{}: no PNG images", input.display())));
    }
    Ok(files)
}

/// Transforms every PNG of the input folder into `images/` and writes
/// `manifest.csv`. Image `i` (in file-name order) uses seed
/// `derive_seed(seed, i)`.
pub fn transform(s: &TransformSettings, dir: &Path) -> Result<usize> {
    let files = png_files(&s.input)?;
    let out = dir.join("images");
    fs::create_dir_all(&out).at(&out)?;
    if out.canonicalize().ok() == s.input.canonicalize().ok() {
        return Err(LabError::config("output folder must differ from the input folder"));
    }
    let bound = s.bound.map_or(ShiftBound::NoClip, ShiftBound::Fixed);
    let mut manifest = Vec::with_capacity(files.len());
    let mut rows = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
        let image = load_image(path)?;
        let result = match s.kind {
            TransformKind::Negative => {
                rows.push(vec![name.clone()]);
                negative(&image)?
            }
            TransformKind::ColorShift => {
                let o = color_shift(&image, derive_seed(s.seed, i as u64), bound)?;
                manifest.push((name.clone(), o.params, o.clipped));
                o.image
            }
        };
        save_image(&out.join(&name), &result, 1)?;
    }
    let path = dir.join("manifest.csv");
    match s.kind {
        TransformKind::Negative => reports::write_csv(&path, &["file"], &rows)?,
        TransformKind::ColorShift => reports::write_shift_manifest(&path, &manifest)?,
    }
    Ok(files.len())
}

fn first_images(set: &LabeledImageSet, n: usize) -> Result<Tensor<f32>> {
    let idx: Vec<usize> = (0..n.min(set.len())).collect();
    Ok(set.select(&idx, set.split)?.images)
}

/// Regular/negative/colour accuracies of one model plus its edge-neuron
/// statistics and the first layer's activation change under negation.
pub fn robustness_row(model: &Model<f32>, test: &LabeledImageSet, s: &RobustnessSettings) -> Result<RobustnessReport> {
    let bound = s.bound.map_or(ShiftBound::NoClip, ShiftBound::Fixed);
    let mut row = evaluate_robustness(model, test, derive_seed(s.seed, 1), bound, 256)?;
    if let Some(layer) = default_probe_layer(model.spec(), edgelab_core::probe::Readout::Post) {
        let mut config = ProbeConfig::new(vec![layer]);
        config.samples = s.probe_samples;
        config.seed = s.seed;
        let report = runners::probe(model, &config, false)?;
        row.edge_accuracy = Some(report.layers[0].edge_accuracy());
        row.edge_variation = report.layers[0].edge_variation();
    }
    let images = first_images(test, s.activation_images)?;
    row.activation_delta_negative = Some(edgelab_core::probe::delta_negative(model, 0, &images)?);
    Ok(row)
}

/// Trains (or loads) the model and writes `robustness.csv`.
pub fn robustness(s: &RobustnessSettings, dir: &Path) -> Result<RobustnessReport> {
    let data = load_data(&s.data, s.seed)?;
    let model = match s.model.as_str() {
        "edge" | "regular" => {
            let first = if s.model == "edge" { FirstLayer::Edge } else { FirstLayer::Regular };
            let config = classifier_config(s.epochs, s.batch, s.lr, s.augmentation, s.seed);
            train_cifar(first, &data, &config, dir)?
        }
        path => load_model(Path::new(path))?,
    };
    let row = robustness_row(&model, &data.test, s)?;
    reports::write_robustness(&dir.join("robustness.csv"), std::slice::from_ref(&row))?;
    Ok(row)
}

pub fn render_weights(s: &RenderSettings, dir: &Path) -> Result<PathBuf> {
    let model = load_model(&s.model)?;
    if s.layer >= model.num_layers() {
        return Err(LabError::config(format!("layer {} out of range", s.layer)));
    }
    let path = dir.join(format!("weights_layer{}.png", s.layer));
    weight_grid(&model, s.layer, s.scale)?.save(&path)?;
    Ok(path)
}

/// One image per unit plus `actmax.csv` with every unit's activation trace.
pub fn actmax(s: &ActMaxSettings, dir: &Path) -> Result<Vec<f64>> {
    let model = load_model(&s.model)?;
    let layer = match s.layer {
        Some(l) => l,
        None => default_probe_layer(model.spec(), edgelab_core::probe::Readout::Post)
            .ok_or_else(|| LabError::config("model has no default layer; pass --layer"))?,
    };
    if layer >= model.num_layers() {
        return Err(LabError::config(format!("layer {layer} out of range")));
    }
    let probe_input = Tensor::zeros(&[1, s.size, s.size, 3]);
    let out = model.activations(&probe_input, Some(layer))?;
    let available = *out.shape().last().unwrap_or(&0);
    let units: Vec<usize> = if s.units.is_empty() { (0..available.min(8)).collect() } else { s.units.clone() };
    if let Some(&bad) = units.iter().find(|&&u| u >= available) {
        return Err(LabError::config(format!("unit {bad} out of range (layer has {available})")));
    }
    let mut rows = Vec::new();
    let mut finals = Vec::with_capacity(units.len());
    for &u in &units {
        let config = ActMaxConfig {
            steps: s.steps,
            step_size: s.step_size,
            size: s.size,
            init_amplitude: s.init_amplitude,
            seed: derive_seed(s.seed, u as u64),
        };
        let result = activation_maximization(&model, layer, u, &config)?;
        save_image(&dir.join(format!("actmax_layer{layer}_unit{u}.png")), &result.image, 4)?;
        for (step, a) in result.trace.iter().enumerate() {
            rows.push(vec![layer.to_string(), u.to_string(), step.to_string(), reports::num(*a)]);
        }
        finals.push(*result.trace.last().unwrap_or(&f64::NAN));
    }
    reports::write_csv(&dir.join("actmax.csv"), &["layer", "unit", "step", "activation"], &rows)?;
    Ok(finals)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StimuliMeta {
    angles: Vec<f64>,
    epsilon: f64,
    seed: u64,
    patch: usize,
    edges: usize,
    noise: usize,
}

/// Writes `stimuli.etc` (pixels and labels), `stimuli.toml` metadata,
/// `stimuli.csv` (per-patch colours) and a PNG grid.
pub fn stimuli(s: &StimuliSettings, dir: &Path) -> Result<usize> {
    let style = EdgeStyle {
        patch: s.patch,
        epsilon: s.epsilon,
        rule: s.rule,
    };
    let batch = make_batch(s.edges, s.noise, &s.angles, &style, &mut stream(s.seed))?;
    let labels = Tensor::new(&[batch.len()], batch.targets())?;
    save_etc(
        &dir.join("stimuli.etc"),
        &[
            ("pixels".to_string(), EtcTensor::F32(batch.pixels.clone())),
            ("labels".to_string(), EtcTensor::F32(labels)),
        ],
    )?;
    let meta = StimuliMeta {
        angles: s.angles.clone(),
        epsilon: s.epsilon,
        seed: s.seed,
        patch: s.patch,
        edges: s.edges,
        noise: s.noise,
    };
    let meta_path = dir.join("stimuli.toml");
    let text = toml::to_string(&meta).map_err(|e| LabError::data(format!("stimuli metadata: {e}")))?;
    fs::write(&meta_path, text).at(&meta_path)?;
    let rgb = |c: [f32; 3]| c.iter().map(|v| reports::num(*v as f64)).collect::<Vec<_>>().join(" ");
    let rows: Vec<_> = batch
        .meta
        .iter()
        .enumerate()
        .map(|(i, m)| match m {
            Some(m) => vec![i.to_string(), "edge".into(), reports::num(m.angle), rgb(m.color_left), rgb(m.color_right)],
            None => vec![i.to_string(), "noise".into(), String::new(), String::new(), String::new()],
        })
        .collect();
    reports::write_csv(&dir.join("stimuli.csv"), &["index", "label", "angle", "color_left", "color_right"], &rows)?;
    patch_grid(&batch.pixels, 16, s.scale)?.save(&dir.join("stimuli.png"))?;
    Ok(batch.len())
}
