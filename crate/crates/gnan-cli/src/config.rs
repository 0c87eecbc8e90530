//! Settings resolution: TOML file first, command-line flags on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gnan::dataset::DatasetFormat;
use gnan::error::{GnanError, Result};
use gnan::model::Task;
use gnan::synth::SynthConfig;
use gnan::train::{CvConfig, TrainConfig};
use gnan::Precision;

/// On-disk settings. Every section is optional; flags override fields here.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<String>,
    pub classes: Option<usize>,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub synth: SynthConfig,
    pub explain: ExplainSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub val_fraction: f64,
    /// Reduced budget for inner-loop candidate fits; full epochs otherwise.
    pub inner_epochs: Option<usize>,
    pub stratified: bool,
    /// Sweep the full hyperparameter grid; a single candidate otherwise.
    pub grid: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        let cv = CvConfig::default();
        CvSection {
            folds: cv.folds,
            seeds: cv.seeds,
            val_fraction: cv.val_fraction,
            inner_epochs: cv.inner_epochs,
            stratified: cv.stratified,
            grid: true,
        }
    }
}

impl CvSection {
    pub fn to_cv_config(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            seeds: self.seeds.clone(),
            val_fraction: self.val_fraction,
            inner_epochs: self.inner_epochs,
            stratified: self.stratified,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Curve grid resolution per feature.
    pub points: usize,
    /// Per-feature `[min, max]` grid overrides; training ranges otherwise.
    pub ranges: Option<Vec<(f64, f64)>>,
    /// Largest finite hop distance on distance curves and heatmaps.
    pub max_distance: u32,
    /// Training budget per bootstrap resample; the full budget otherwise.
    pub band_epochs: Option<usize>,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub svg_width: u32,
    pub svg_height: u32,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            points: 100,
            ranges: None,
            max_distance: 10,
            band_epochs: None,
            lower_percentile: 2.5,
            upper_percentile: 97.5,
            svg_width: 640,
            svg_height: 480,
        }
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| GnanError::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| GnanError::Config(format!("{}: {e}", path.display())))
}

/// Flags shared by every command, still unresolved.
#[derive(Debug, Default, Clone)]
pub struct CommonFlags {
    pub data: Option<PathBuf>,
    pub format: Option<String>,
    pub config: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub precision: Option<String>,
    pub task: Option<String>,
    pub classes: Option<usize>,
    pub epochs: Option<usize>,
    pub verbose: bool,
}

/// Fully resolved run settings: file config with flag overrides applied.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub data: Option<PathBuf>,
    pub format: DatasetFormat,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: usize,
    pub verbose: bool,
    pub task: Option<Task>,
    pub classes: Option<usize>,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub synth: SynthConfig,
    pub explain: ExplainSection,
}

impl Manifest {
    pub fn resolve(flags: &CommonFlags) -> Result<Manifest> {
        let file = load_file_config(flags.config.as_deref())?;

        let mut train = file.train;
        if let Some(seed) = flags.seed {
            train.seed = seed;
        }
        if let Some(precision) = &flags.precision {
            train.precision = precision.parse::<Precision>()?;
        }
        if let Some(epochs) = flags.epochs {
            train.epochs = epochs;
        }

        let mut cv = file.cv;
        if let Some(seed) = flags.seed {
            cv.seeds = vec![seed];
        }

        let task = match flags.task.as_deref().or(file.task.as_deref()) {
            Some(name) => Some(name.parse::<Task>()?),
            None => None,
        };
        let classes = flags.classes.or(file.classes);

        let mut synth = file.synth;
        if let Some(seed) = flags.seed {
            synth.seed = seed;
        }
        if let Some(task) = task {
            synth.task = task;
        }

        let format = match flags.format.as_deref() {
            Some(name) => name.parse::<DatasetFormat>()?,
            None => DatasetFormat::EdgeJson,
        };

        let threads = flags.threads.unwrap_or(1);
        if threads == 0 {
            return Err(GnanError::Config("--threads must be at least 1".into()));
        }

        let out = flags
            .out
            .clone()
            .ok_or_else(|| GnanError::Config("--out is required".into()))?;

        Ok(Manifest {
            data: flags.data.clone(),
            format,
            model: flags.model.clone(),
            out,
            threads,
            verbose: flags.verbose,
            task,
            classes,
            train,
            cv,
            synth,
            explain: file.explain,
        })
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| GnanError::Config("--data is required for this command".into()))
    }

    pub fn model_path(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| GnanError::Config("--model is required for this command".into()))
    }

    pub fn task(&self) -> Result<Task> {
        self.task.ok_or_else(|| {
            GnanError::Config("no task given; pass --task or set `task` in the config file".into())
        })
    }
}
