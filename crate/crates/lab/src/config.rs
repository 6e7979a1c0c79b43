//! Per-subcommand settings. A config file is TOML with one table per
//! subcommand (`[table1]`, `[probe]`, ...); flags override file values and
//! the effective settings are written next to the outputs as `config.toml`,
//! itself a valid config file.

use std::fs;
use std::path::{Path, PathBuf};

use edgelab_core::datasets::Augmentation;
use edgelab_core::model::FirstLayer;
use edgelab_core::probe::{Readout, DEFAULT_ANGLES};
use edgelab_core::trainer::TABLE1_LR;
use edgelab_core::{ColorRule, Table1Row};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LabError, Result};

pub const SNAPSHOT: &str = "config.toml";

/// Settings of one subcommand.
pub trait Settings: Serialize + DeserializeOwned + Default {
    const SECTION: &'static str;

    fn seed_mut(&mut self) -> &mut u64;

    /// Checks every field and fills task-dependent defaults.
    fn validate(&mut self) -> Result<()>;
}

/// The subcommand's table of `path`, or defaults when no file is given.
pub fn load<S: Settings>(path: Option<&Path>) -> Result<S> {
    let Some(path) = path else {
        return Ok(S::default());
    };
    let text = fs::read_to_string(path).map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
    match table.remove(S::SECTION) {
        None => Ok(S::default()),
        Some(section) => section
            .try_into()
            .map_err(|e| LabError::config(format!("{} [{}]: {e}", path.display(), S::SECTION))),
    }
}

pub fn snapshot<S: Settings>(settings: &S) -> Result<String> {
    let value = toml::Value::try_from(settings).map_err(|e| LabError::config(format!("snapshot: {e}")))?;
    let mut table = toml::Table::new();
    table.insert(S::SECTION.to_string(), value);
    toml::to_string(&table).map_err(|e| LabError::config(format!("snapshot: {e}")))
}

pub fn write_snapshot<S: Settings>(dir: &Path, settings: &S) -> Result<PathBuf> {
    let path = dir.join(SNAPSHOT);
    fs::write(&path, snapshot(settings)?).at(&path)?;
    Ok(path)
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LabError::config(msg))
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    check(eps > 0.0 && eps < 1.0, "epsilon must lie in (0, 1)")
}

fn check_angles(angles: &[f64]) -> Result<()> {
    check(
        !angles.is_empty() && angles.iter().all(|a| (0.0..180.0).contains(a)),
        "angles must be non-empty and lie in [0, 180)",
    )
}

/// Parses `standard`, `layered:<h>` or `edge:<k>`.
pub fn parse_row(s: &str) -> Result<Table1Row> {
    let bad = || LabError::config(format!("unknown row {s:?}; use standard, layered:<h> or edge:<k>"));
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a.parse::<usize>().map_err(|_| bad())?)),
        None => (s, None),
    };
    let row = match (kind, arg) {
        ("standard", None) => Table1Row::Standard,
        ("layered", Some(h)) if h > 0 => Table1Row::Layered(h),
        ("edge", Some(k)) if k > 0 => Table1Row::Edge(k),
        ("edge", None) => Table1Row::Edge(5),
        _ => return Err(bad()),
    };
    Ok(row)
}

pub fn row_name(row: Table1Row) -> String {
    match row {
        Table1Row::Standard => "standard".to_string(),
        Table1Row::Layered(h) => format!("layered:{h}"),
        Table1Row::Edge(k) => format!("edge:{k}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Settings {
    pub rows: Vec<String>,
    pub repetitions: usize,
    pub updates: usize,
    pub checkpoints: Vec<usize>,
    /// Edges per update; the same number of noise patches is added.
    pub batch: usize,
    /// Held-out edges per evaluation; the same number of noise patches is added.
    pub eval: usize,
    pub patch: usize,
    pub epsilon: f64,
    pub angle: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Table1Settings {
    fn default() -> Self {
        Table1Settings {
            rows: Table1Row::DEFAULT_ROWS.iter().map(|&r| row_name(r)).collect(),
            repetitions: 25,
            updates: 1000,
            checkpoints: vec![100, 500, 1000],
            batch: 16,
            eval: 1024,
            patch: 5,
            epsilon: 0.4,
            angle: 45.0,
            lr: TABLE1_LR,
            seed: 0,
        }
    }
}

impl Table1Settings {
    pub fn parsed_rows(&self) -> Result<Vec<Table1Row>> {
        self.rows.iter().map(|r| parse_row(r)).collect()
    }
}

impl Settings for Table1Settings {
    const SECTION: &'static str = "table1";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check(!self.rows.is_empty(), "no rows selected")?;
        self.parsed_rows()?;
        check(self.repetitions > 0 && self.updates > 0, "repetitions and updates must be positive")?;
        check(self.batch > 0 && self.eval > 0, "batch and eval sizes must be positive")?;
        check(self.patch >= 3, "patch must be at least 3")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check_epsilon(self.epsilon)?;
        check_angles(&[self.angle])?;
        check(
            !self.checkpoints.is_empty()
                && self.checkpoints.windows(2).all(|w| w[0] < w[1])
                && self.checkpoints.iter().all(|&c| c >= 1 && c <= self.updates),
            "checkpoints must be increasing and lie in [1, updates]",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub samples: usize,
    pub patch: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings {
            samples: 1_000_000,
            patch: 5,
            epsilon: 0.4,
            seed: 0,
        }
    }
}

impl Settings for StatsSettings {
    const SECTION: &'static str = "stats";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check(self.samples >= 2, "need at least two samples")?;
        check(self.patch >= 3, "patch must be at least 3")?;
        check_epsilon(self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cifar,
    Patches,
}

/// CIFAR data selection shared by `train` and `robustness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    /// Directory with the binary batches; `$CIFAR10_DIR` when unset.
    pub dir: Option<PathBuf>,
    /// Class-balanced fraction of the 50,000 training records.
    pub subset: f64,
    pub val_fraction: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            dir: None,
            subset: 0.2,
            val_fraction: 0.1,
        }
    }
}

impl DataSettings {
    fn validate(&self) -> Result<()> {
        check(self.subset > 0.0 && self.subset <= 1.0, "subset must lie in (0, 1]")?;
        check((0.0..1.0).contains(&self.val_fraction), "val_fraction must lie in [0, 1)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub task: Task,
    /// First layer of the CIFAR model.
    pub first: FirstLayer,
    /// Architecture for the patch task.
    pub row: String,
    pub epochs: usize,
    pub batch: usize,
    /// Adam step; 1e-3 for CIFAR and the edge-vs-noise step for patches when unset.
    pub lr: Option<f64>,
    pub augmentation: Augmentation,
    pub data: DataSettings,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            task: Task::Cifar,
            first: FirstLayer::Edge,
            row: "edge:5".to_string(),
            epochs: 10,
            batch: 64,
            lr: None,
            augmentation: Augmentation::None,
            data: DataSettings::default(),
            seed: 0,
        }
    }
}

impl Settings for TrainSettings {
    const SECTION: &'static str = "train";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        parse_row(&self.row)?;
        check(self.epochs > 0 && self.batch > 0, "epochs and batch must be positive")?;
        let lr = *self.lr.get_or_insert(match self.task {
            Task::Cifar => 1e-3,
            Task::Patches => TABLE1_LR,
        });
        check(lr > 0.0 && lr.is_finite(), "lr must be positive")?;
        self.data.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    /// Checkpoint path without extension.
    pub model: PathBuf,
    /// Probed layers; the model's default probing layer when empty.
    pub layers: Vec<usize>,
    pub angles: Vec<f64>,
    /// Edges per angle; the same number of noise patches is added.
    pub samples: usize,
    pub epsilon: f64,
    pub rule: ColorRule,
    pub readout: Readout,
    /// Stimulus side; the layer's receptive field when unset.
    pub stimulus: Option<usize>,
    /// Probe with negated stimuli.
    pub negate: bool,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            model: PathBuf::new(),
            layers: Vec::new(),
            angles: DEFAULT_ANGLES.to_vec(),
            samples: 10_000,
            epsilon: 0.4,
            rule: ColorRule::AtLeastTwo,
            readout: Readout::Post,
            stimulus: None,
            negate: false,
            seed: 0,
        }
    }
}

fn check_model(path: &Path) -> Result<()> {
    check(!path.as_os_str().is_empty(), "a model checkpoint is required (--model)")
}

impl Settings for ProbeSettings {
    const SECTION: &'static str = "probe";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check_model(&self.model)?;
        check_angles(&self.angles)?;
        check(self.samples >= 2, "need at least two samples per angle")?;
        check(self.stimulus != Some(0), "stimulus size must be positive")?;
        check_epsilon(self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Negative,
    ColorShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSettings {
    /// Folder of PNG images; read, never modified.
    pub input: PathBuf,
    pub kind: TransformKind,
    /// Fixed saturation bound; the no-clipping bound when unset.
    pub bound: Option<f64>,
    pub seed: u64,
}

impl Default for TransformSettings {
    fn default() -> Self {
        TransformSettings {
            input: PathBuf::new(),
            kind: TransformKind::ColorShift,
            bound: None,
            seed: 0,
        }
    }
}

impl Settings for TransformSettings {
    const SECTION: &'static str = "transform";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check(!self.input.as_os_str().is_empty(), "an input folder is required (--input)")?;
        check(
            self.bound.is_none_or(|b| b >= 0.0 && b <= 1.0),
            "bound must lie in [0, 1]",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSettings {
    /// `edge` or `regular` to train that model, otherwise a checkpoint path.
    pub model: String,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub augmentation: Augmentation,
    pub data: DataSettings,
    /// Fixed saturation bound of the colour-shifted test set; no-clipping when unset.
    pub bound: Option<f64>,
    /// Edges per angle when probing the model's edge neurons.
    pub probe_samples: usize,
    /// Test images used for the activation change under negation.
    pub activation_images: usize,
    pub seed: u64,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        RobustnessSettings {
            model: "edge".to_string(),
            epochs: 10,
            batch: 64,
            lr: 1e-3,
            augmentation: Augmentation::None,
            data: DataSettings::default(),
            bound: None,
            probe_samples: 1000,
            activation_images: 1000,
            seed: 0,
        }
    }
}

impl Settings for RobustnessSettings {
    const SECTION: &'static str = "robustness";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check(!self.model.is_empty(), "model must be edge, regular or a checkpoint path")?;
        check(self.epochs > 0 && self.batch > 0, "epochs and batch must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check(self.probe_samples >= 2, "probe_samples must be at least 2")?;
        check(self.activation_images > 0, "activation_images must be positive")?;
        check(self.bound.is_none_or(|b| b >= 0.0 && b <= 1.0), "bound must lie in [0, 1]")?;
        self.data.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub model: PathBuf,
    pub layer: usize,
    /// Pixels per kernel coefficient.
    pub scale: usize,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            model: PathBuf::new(),
            layer: 0,
            scale: 8,
            seed: 0,
        }
    }
}

impl Settings for RenderSettings {
    const SECTION: &'static str = "render-weights";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check_model(&self.model)?;
        check(self.scale > 0, "scale must be positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActMaxSettings {
    pub model: PathBuf,
    /// The model's default probing layer when unset.
    pub layer: Option<usize>,
    /// Units to maximize; the first eight when empty.
    pub units: Vec<usize>,
    pub steps: usize,
    pub step_size: f64,
    pub size: usize,
    pub init_amplitude: f64,
    pub seed: u64,
}

impl Default for ActMaxSettings {
    fn default() -> Self {
        ActMaxSettings {
            model: PathBuf::new(),
            layer: None,
            units: Vec::new(),
            steps: 200,
            step_size: 0.1,
            size: 64,
            init_amplitude: 0.05,
            seed: 0,
        }
    }
}

impl Settings for ActMaxSettings {
    const SECTION: &'static str = "actmax";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check_model(&self.model)?;
        check(self.size > 0, "size must be positive")?;
        check(self.step_size > 0.0 && self.step_size.is_finite(), "step_size must be positive")?;
        check((0.0..=0.5).contains(&self.init_amplitude), "init_amplitude must lie in [0, 0.5]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimuliSettings {
    pub angles: Vec<f64>,
    pub edges: usize,
    pub noise: usize,
    pub patch: usize,
    pub epsilon: f64,
    pub rule: ColorRule,
    /// Pixels per patch pixel in the PNG grid.
    pub scale: usize,
    pub seed: u64,
}

impl Default for StimuliSettings {
    fn default() -> Self {
        StimuliSettings {
            angles: vec![0.0, 45.0, 90.0, 135.0],
            edges: 32,
            noise: 32,
            patch: 5,
            epsilon: 0.4,
            rule: ColorRule::AtLeastTwo,
            scale: 8,
            seed: 0,
        }
    }
}

impl Settings for StimuliSettings {
    const SECTION: &'static str = "stimuli";

    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }

    fn validate(&mut self) -> Result<()> {
        check_angles(&self.angles)?;
        check(self.edges + self.noise > 0, "nothing to generate")?;
        check(self.patch >= 3, "patch must be at least 3")?;
        check(self.scale > 0, "scale must be positive")?;
        check_epsilon(self.epsilon)
    }
}
