//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use edgelab_core::datasets::Augmentation;
use edgelab_core::model::FirstLayer;
use edgelab_core::probe::Readout;
use edgelab_core::ColorRule;

use crate::commands;
use crate::config::*;
use crate::error::{IoContext, LabError, Result};
use crate::reports::num;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EDGELAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "edgelab", version, about = "Edge-detection units in convolutional networks: experiments and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file; the table named after the subcommand is used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; artifacts go to <out>/<subcommand>.
    #[arg(long, env = OUT_ENV, default_value = "out", global = true)]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edge-vs-noise accuracy of the small architectures over repetitions.
    Table1(Table1Args),
    /// Monte Carlo distribution of the half-patch mean difference on noise.
    Stats(StatsArgs),
    /// Train a CIFAR-10 classifier or a single patch model.
    Train(TrainArgs),
    /// Edge-vs-noise accuracy and colour stability of a model's neurons.
    Probe(ProbeArgs),
    /// Negate or colour shift a folder of PNG images.
    Transform(TransformArgs),
    /// Accuracy on regular, negative and colour-shifted test images.
    Robustness(RobustnessArgs),
    /// Render first-layer kernels as a PNG grid.
    RenderWeights(RenderArgs),
    /// Images that maximize chosen neurons.
    Actmax(ActMaxArgs),
    /// Export a stimulus batch as ETC, CSV and a PNG grid.
    Stimuli(StimuliArgs),
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[command(flatten)]
    pub common: Common,
    /// Rows: standard, layered:<h>, edge:<k>
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub angle: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CIFAR-10 binary directory (default: $CIFAR10_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// cifar-subset (20% of the training pool) or cifar (all of it).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub subset: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// regular or edge
    #[arg(long, value_parser = parse_first)]
    pub first: Option<FirstLayer>,
    /// Patch-task architecture: standard, layered:<h>, edge:<k>
    #[arg(long)]
    pub row: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// none or color-shift
    #[arg(long, value_parser = parse_augmentation)]
    pub augmentation: Option<Augmentation>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint path without extension.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    /// Edges per angle (the same number of noise patches is added).
    #[arg(long, short = 'n')]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// at-least-two or all-three
    #[arg(long, value_parser = parse_rule)]
    pub rule: Option<ColorRule>,
    /// pre or post (nonlinearity) for the default layer
    #[arg(long, value_parser = parse_readout)]
    pub readout: Option<Readout>,
    /// Stimulus side instead of the receptive field.
    #[arg(long)]
    pub stimulus: Option<usize>,
    #[arg(long)]
    pub negate: bool,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// negative or color-shift
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<TransformKind>,
    /// Fixed saturation bound instead of the no-clipping bound.
    #[arg(long)]
    pub bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: Common,
    /// edge, regular or a checkpoint path
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_augmentation)]
    pub augmentation: Option<Augmentation>,
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long)]
    pub probe_samples: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ActMaxArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StimuliArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    #[arg(long)]
    pub edges: Option<usize>,
    #[arg(long)]
    pub noise: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = parse_rule)]
    pub rule: Option<ColorRule>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "cifar" => Ok(Task::Cifar),
        "patches" => Ok(Task::Patches),
        _ => Err("expected cifar or patches".into()),
    }
}

fn parse_first(s: &str) -> std::result::Result<FirstLayer, String> {
    match s {
        "regular" => Ok(FirstLayer::Regular),
        "edge" => Ok(FirstLayer::Edge),
        _ => Err("expected regular or edge".into()),
    }
}

fn parse_augmentation(s: &str) -> std::result::Result<Augmentation, String> {
    match s {
        "none" => Ok(Augmentation::None),
        "color-shift" | "color_shift" => Ok(Augmentation::ColorShift),
        _ => Err("expected none or color-shift".into()),
    }
}

fn parse_rule(s: &str) -> std::result::Result<ColorRule, String> {
    match s {
        "at-least-two" | "at_least_two" => Ok(ColorRule::AtLeastTwo),
        "all-three" | "all_three" => Ok(ColorRule::AllThree),
        _ => Err("expected at-least-two or all-three".into()),
    }
}

fn parse_readout(s: &str) -> std::result::Result<Readout, String> {
    match s {
        "pre" => Ok(Readout::Pre),
        "post" => Ok(Readout::Post),
        _ => Err("expected pre or post".into()),
    }
}

fn parse_kind(s: &str) -> std::result::Result<TransformKind, String> {
    match s {
        "negative" => Ok(TransformKind::Negative),
        "color-shift" | "color_shift" => Ok(TransformKind::ColorShift),
        _ => Err("expected negative or color-shift".into()),
    }
}

macro_rules! set {
    ($s:expr, $($field:ident = $value:expr),+ $(,)?) => {
        $(if let Some(v) = $value {
            $s.$field = v;
        })+
    };
}

fn apply_data(d: &mut DataSettings, a: &DataArgs) -> Result<()> {
    if let Some(name) = &a.dataset {
        d.subset = match name.as_str() {
            "cifar-subset" => 0.2,
            "cifar" => 1.0,
            _ => return Err(LabError::config(format!("unknown dataset {name:?}; use cifar-subset or cifar"))),
        };
    }
    set!(d, subset = a.subset, val_fraction = a.val_fraction);
    if a.data.is_some() {
        d.dir = a.data.clone();
    }
    Ok(())
}

/// Loads, overrides and validates settings, then creates the run
/// directory and writes the snapshot.
fn prepare<S: Settings>(common: &Common, apply: impl FnOnce(&mut S) -> Result<()>) -> Result<(S, PathBuf)> {
    let mut settings: S = load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        *settings.seed_mut() = seed;
    }
    apply(&mut settings)?;
    settings.validate()?;
    let dir = run_dir(&common.out, S::SECTION);
    std::fs::create_dir_all(&dir).at(&dir)?;
    write_snapshot(&dir, &settings)?;
    Ok((settings, dir))
}

pub fn run_dir(out: &Path, section: &str) -> PathBuf {
    out.join(section)
}

/// Printable outcome of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub lines: Vec<String>,
    pub dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<Summary> {
    let mut lines = Vec::new();
    let dir = match cli.command {
        Command::Table1(a) => {
            let (s, dir) = prepare::<Table1Settings>(&a.common, |s| {
                set!(s, rows = a.rows, repetitions = a.reps, updates = a.updates, checkpoints = a.checkpoints);
                set!(s, batch = a.batch, eval = a.eval, epsilon = a.epsilon, angle = a.angle, lr = a.lr);
                Ok(())
            })?;
            let reports = commands::table1(&s, &dir)?;
            let (header, rows) = crate::reports::table1_rows(&reports);
            lines.push(header.join("\t"));
            for r in rows {
                lines.push(r.join("\t"));
            }
            dir
        }
        Command::Stats(a) => {
            let (s, dir) = prepare::<StatsSettings>(&a.common, |s| {
                set!(s, samples = a.samples, patch = a.patch, epsilon = a.epsilon);
                Ok(())
            })?;
            let d = commands::stats(&s, &dir)?;
            let sigma = commands::analytic_sigma(s.patch);
            lines.push(format!("samples            {}", d.samples));
            lines.push(format!("sigma (estimate)   {}", num(d.std)));
            lines.push(format!("sigma (analytic)   {}", num(sigma)));
            lines.push(format!("P(|D| < {}) (estimate)  {}", s.epsilon, num(d.inside)));
            lines.push(format!("P(|D| < {}) (normal)    {}", s.epsilon, num(commands::normal_inside(sigma, s.epsilon))));
            dir
        }
        Command::Train(a) => {
            let (s, dir) = prepare::<TrainSettings>(&a.common, |s| {
                set!(s, task = a.task, first = a.first, row = a.row, epochs = a.epochs, batch = a.batch);
                set!(s, augmentation = a.augmentation);
                if a.lr.is_some() {
                    s.lr = a.lr;
                }
                apply_data(&mut s.data, &a.data)
            })?;
            let stem = commands::train(&s, &dir)?;
            lines.push(format!("checkpoint {}", stem.display()));
            dir
        }
        Command::Probe(a) => {
            let (s, dir) = prepare::<ProbeSettings>(&a.common, |s| {
                set!(s, model = a.model, layers = a.layers, angles = a.angles, samples = a.samples);
                set!(s, epsilon = a.epsilon, rule = a.rule, readout = a.readout);
                if a.stimulus.is_some() {
                    s.stimulus = a.stimulus;
                }
                s.negate |= a.negate;
                Ok(())
            })?;
            let report = commands::probe(&s, &dir)?;
            for l in &report.layers {
                let var = l.edge_variation().map_or("-".to_string(), num);
                lines.push(format!("layer {}: edge accuracy {} edge variation {}", l.layer, num(l.edge_accuracy()), var));
            }
            dir
        }
        Command::Transform(a) => {
            let (s, dir) = prepare::<TransformSettings>(&a.common, |s| {
                set!(s, input = a.input, kind = a.kind);
                if a.bound.is_some() {
                    s.bound = a.bound;
                }
                Ok(())
            })?;
            let n = commands::transform(&s, &dir)?;
            lines.push(format!("transformed {n} images"));
            dir
        }
        Command::Robustness(a) => {
            let (s, dir) = prepare::<RobustnessSettings>(&a.common, |s| {
                set!(s, model = a.model, epochs = a.epochs, batch = a.batch, lr = a.lr);
                set!(s, augmentation = a.augmentation, probe_samples = a.probe_samples);
                if a.bound.is_some() {
                    s.bound = a.bound;
                }
                apply_data(&mut s.data, &a.data)
            })?;
            let r = commands::robustness(&s, &dir)?;
            lines.push(format!("model {}", r.model));
            lines.push(format!("regular  {}", num(r.regular)));
            lines.push(format!("negative {} ({}%)", num(r.negative), num(r.delta_negative_pct)));
            lines.push(format!("color    {} ({}%)", num(r.color), num(r.delta_color_pct)));
            dir
        }
        Command::RenderWeights(a) => {
            let (s, dir) = prepare::<RenderSettings>(&a.common, |s| {
                set!(s, model = a.model, layer = a.layer, scale = a.scale);
                Ok(())
            })?;
            let path = commands::render_weights(&s, &dir)?;
            lines.push(format!("wrote {}", path.display()));
            dir
        }
        Command::Actmax(a) => {
            let (s, dir) = prepare::<ActMaxSettings>(&a.common, |s| {
                set!(s, model = a.model, units = a.units, steps = a.steps, step_size = a.step_size, size = a.size);
                if a.layer.is_some() {
                    s.layer = a.layer;
                }
                Ok(())
            })?;
            let finals = commands::actmax(&s, &dir)?;
            for (i, v) in finals.iter().enumerate() {
                lines.push(format!("unit {i}: final activation {}", num(*v)));
            }
            dir
        }
        Command::Stimuli(a) => {
            let (s, dir) = prepare::<StimuliSettings>(&a.common, |s| {
                set!(s, angles = a.angles, edges = a.edges, noise = a.noise, patch = a.patch);
                set!(s, epsilon = a.epsilon, rule = a.rule);
                Ok(())
            })?;
            let n = commands::stimuli(&s, &dir)?;
            lines.push(format!("wrote {n} patches"));
            dir
        }
    };
    Ok(Summary { lines, dir })
}
