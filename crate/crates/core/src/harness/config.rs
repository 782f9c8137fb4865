//! TOML experiment configuration.
//!
//! ```toml
//! [experiment]
//! name = "mnist-mp"
//! output = "runs/mnist-mp"      # relative to the config file
//! seeds = [1, 2, 3]             # default 1..=30
//! methods = ["MP", "RP"]
//! ratios = [2, 20, 50]
//! decay = 0.0                   # ε used by UP scoring (default: train weight decay)
//! models = "runs/shared-models" # trained-model cache (default: <output>/models)
//!
//! [dataset]
//! kind = "idx"
//! name = "mnist"
//! dir = "../data/mnist"         # holds the four canonical file names
//! force_balance = true
//! validation_fraction = 0.1
//!
//! [model]
//! input = [784]
//! classes = 10
//! layers = [
//!   { type = "dense", in = 784, out = 100 },
//!   { type = "relu" },
//!   { type = "dense", in = 100, out = 10 },
//! ]
//!
//! [train]
//! epochs = 15
//! batch_size = 64
//! schedule = [[0, 0.1]]
//!
//! [finetune]
//! epochs = 5
//! batch_size = 64
//! schedule = [[0, 0.05]]
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, synth_balanced, Dataset, IdxOptions, SynthSpec};
use crate::error::{bail, Error, Result};
use crate::nn::{ArchitectureSpec, LayerSpec, Schedule, TrainConfig};
use crate::pruning::MethodTag;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSource,
    pub model: ArchitectureSpec,
    pub train: TrainSection,
    pub finetune: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub output: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodTag>,
    pub ratios: Vec<f64>,
    /// Label for the `arch` column; derived from the layers when absent.
    #[serde(default)]
    pub arch: Option<String>,
    /// ε for UP scoring; defaults to the training weight decay.
    #[serde(default)]
    pub decay: Option<f64>,
    /// Trained-model cache, shareable between experiments with the same
    /// dataset, model and train sections. Defaults to `<output>/models`.
    #[serde(default)]
    pub models: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    (1..=30).collect()
}

fn default_true() -> bool {
    true
}

fn default_validation() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        name: String,
        /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
        dir: PathBuf,
        #[serde(default = "default_true")]
        force_balance: bool,
        #[serde(default = "default_validation")]
        validation_fraction: f64,
        /// Keep only this many training samples (before the validation carve).
        #[serde(default)]
        train_limit: Option<usize>,
    },
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// Training hyperparameters; the seed comes from the experiment's seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule.clone(),
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.experiment.output);
        if let Some(m) = &mut self.experiment.models {
            fix(m);
        }
        if let DatasetSource::Idx { dir, .. } = &mut self.dataset {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.trim().is_empty() {
            bail!(Config, "experiment name is empty");
        }
        if e.seeds.is_empty() || e.methods.is_empty() || e.ratios.is_empty() {
            bail!(Config, "seeds, methods and ratios must all be nonempty");
        }
        let mut seeds = e.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != e.seeds.len() {
            bail!(Config, "seed list has duplicates");
        }
        let mut methods = e.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        if methods.len() != e.methods.len() {
            bail!(Config, "method list has duplicates");
        }
        if let Some(&bad) = e.ratios.iter().find(|&&t| !(t > 1.0 && t.is_finite())) {
            bail!(Config, "pruning ratio {bad} must be finite and greater than 1");
        }
        if e.ratios.windows(2).any(|w| w[1] <= w[0]) {
            bail!(Config, "pruning ratios must be strictly increasing");
        }
        if let Some(d) = e.decay {
            if !(d >= 0.0 && d.is_finite()) {
                bail!(Config, "decay must be finite and nonnegative");
            }
        }
        self.model.shapes()?;
        self.train.with_seed(0).validate()?;
        self.finetune.with_seed(0).validate()?;
        match &self.dataset {
            DatasetSource::Idx {
                validation_fraction, ..
            } => {
                if !(*validation_fraction > 0.0 && *validation_fraction < 1.0) {
                    bail!(Config, "validation fraction must lie in (0, 1)");
                }
            }
            DatasetSource::Synthetic { classes, .. } => {
                if *classes != self.model.classes {
                    bail!(Config, "dataset has {classes} classes but the model predicts {}", self.model.classes);
                }
            }
        }
        Ok(())
    }

    pub fn arch_label(&self) -> String {
        self.experiment.arch.clone().unwrap_or_else(|| describe_arch(&self.model))
    }

    pub fn dataset_label(&self) -> String {
        match &self.dataset {
            DatasetSource::Idx { name, .. } => name.clone(),
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                seed,
            } => format!("synth-c{classes}-n{per_class}-d{dim}-s{separation}-r{seed}"),
        }
    }

    pub fn models_dir(&self) -> PathBuf {
        self.experiment.models.clone().unwrap_or_else(|| self.experiment.output.join("models"))
    }

    /// ε used for UP scoring.
    pub fn up_decay(&self) -> f64 {
        self.experiment.decay.unwrap_or(self.train.weight_decay)
    }
}

/// Compact text form such as `dense784x100-relu-dense100x10`.
pub fn describe_arch(arch: &ArchitectureSpec) -> String {
    arch.layers
        .iter()
        .map(|l| match *l {
            LayerSpec::Dense { inputs, outputs } => format!("dense{inputs}x{outputs}"),
            LayerSpec::Conv { channels, kernel } => format!("conv{channels}k{kernel}"),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::Flatten => "flatten".to_string(),
        })
        .collect::<Vec<_>>()
        .join("-")
}

fn idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    bail!(Input, "neither {} nor its .gz form exists", plain.display())
}

impl DatasetSource {
    /// Loads the dataset without a validation split for IDX sources; see
    /// [`DatasetSource::for_seed`].
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Idx {
                name,
                dir,
                force_balance,
                train_limit,
                ..
            } => {
                let mut ds = load_idx(&IdxOptions {
                    name: name.clone(),
                    train_images: idx_file(dir, "train-images-idx3-ubyte")?,
                    train_labels: idx_file(dir, "train-labels-idx1-ubyte")?,
                    test_images: idx_file(dir, "t10k-images-idx3-ubyte")?,
                    test_labels: idx_file(dir, "t10k-labels-idx1-ubyte")?,
                    force_balance: *force_balance,
                })?;
                if let Some(n) = train_limit {
                    ds.limit_train(*n);
                }
                Ok(ds)
            }
            DatasetSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                seed,
            } => synth_balanced(&SynthSpec {
                classes: *classes,
                per_class: *per_class,
                dim: *dim,
                separation: *separation,
                seed: *seed,
            }),
        }
    }

    /// The split used for one seed: IDX data gets a fresh validation carve,
    /// synthetic data keeps its built-in splits.
    pub fn for_seed(&self, loaded: &Dataset, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Idx {
                validation_fraction, ..
            } => loaded.carve_validation(*validation_fraction, seed),
            DatasetSource::Synthetic { .. } => Ok(loaded.clone()),
        }
    }
}
