//! The JSON run configuration shared by the CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::checkpoint::ModelKind;
use crate::dataset::digest;
use crate::error::{Error, Result};
use crate::hyperband::{SearchSpace, TrialConfig};
use crate::loss::{CompositeLossParams, RegressionLoss};
use crate::model::ExtractorConfig;
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::pairs::{DEFAULT_BAND, DEFAULT_PAIR_BUDGET};
use crate::preprocess::{InputTransformKind, OutputMethod};
use crate::simulator::GeneratorConfig;
use crate::train::{SplitSpec, TrainConfig};

pub const DEFAULT_VAL_PAIR_BUDGET: usize = 200_000;
pub const DEFAULT_HYPERBAND_MAX_EPOCHS: usize = 27;
pub const DEFAULT_HYPERBAND_ETA: usize = 3;

/// Number of conv layers in the layer-search preset.
pub const LAYER_SEARCH_DEPTH: usize = 7;

const LAYERS_PRESET: &str = include_str!("../presets/layers.json");
const TRAINING_PRESET: &str = include_str!("../presets/training.json");
const SIAMESE_PRESET: &str = include_str!("../presets/siamese.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitecturePreset {
    Fig2,
}

/// Either a named preset or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Architecture {
    Preset(ArchitecturePreset),
    Custom(ExtractorConfig),
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Preset(ArchitecturePreset::Fig2)
    }
}

impl Architecture {
    pub fn resolve(&self) -> ExtractorConfig {
        match self {
            Architecture::Preset(ArchitecturePreset::Fig2) => ExtractorConfig::fig2(),
            Architecture::Custom(c) => c.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiameseSettings {
    pub alpha: f64,
    pub margin: f64,
    pub delta: f64,
    /// Pair RMSE evaluations on the training split.
    pub pair_budget: usize,
    /// Relative half-width of the imposter band.
    pub band: f64,
    /// Pair RMSE evaluations on the validation split.
    pub val_pair_budget: usize,
    /// Regression checkpoint whose extractor weights initialise both arms.
    pub warm_start: Option<PathBuf>,
}

impl Default for SiameseSettings {
    fn default() -> Self {
        let p = CompositeLossParams::default();
        SiameseSettings {
            alpha: p.alpha,
            margin: p.margin,
            delta: p.delta,
            pair_budget: DEFAULT_PAIR_BUDGET,
            band: DEFAULT_BAND,
            val_pair_budget: DEFAULT_VAL_PAIR_BUDGET,
            warm_start: None,
        }
    }
}

impl SiameseSettings {
    pub fn loss(&self) -> CompositeLossParams {
        CompositeLossParams {
            alpha: self.alpha,
            margin: self.margin,
            delta: self.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperbandSettings {
    pub max_epochs: usize,
    pub eta: usize,
    /// Preset name (`layers`, `training`, `siamese`) or path to a space file.
    pub space: Option<String>,
}

impl Default for HyperbandSettings {
    fn default() -> Self {
        HyperbandSettings {
            max_epochs: DEFAULT_HYPERBAND_MAX_EPOCHS,
            eta: DEFAULT_HYPERBAND_ETA,
            space: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LossSpec {
    Name(String),
    Full(RegressionLoss),
}

fn de_loss<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<RegressionLoss, D::Error> {
    match LossSpec::deserialize(d)? {
        LossSpec::Name(s) => s.parse().map_err(serde::de::Error::custom),
        LossSpec::Full(l) => Ok(l),
    }
}

fn default_input() -> InputTransformKind {
    InputTransformKind::Zscale1d
}

fn default_output() -> OutputMethod {
    OutputMethod::M4
}

fn default_model() -> ModelKind {
    ModelKind::Regression
}

fn default_loss() -> RegressionLoss {
    RegressionLoss::Mse
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset file, relative paths resolve against the config's directory.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_input")]
    pub input_transform: InputTransformKind,
    #[serde(default = "default_output")]
    pub output_method: OutputMethod,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub dropout: f64,
    /// Defaults to AdamW for regression and RMSprop for the Siamese model.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default = "default_loss", deserialize_with = "de_loss")]
    pub loss: RegressionLoss,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub siamese: SiameseSettings,
    #[serde(default)]
    pub hyperband: HyperbandSettings,
    #[serde(default)]
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; a relative dataset path is
    /// resolved against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(ds) = &cfg.dataset {
            if ds.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.dataset = Some(base.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.architecture.resolve().validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        self.optimizer().validate()?;
        self.loss.validate()?;
        self.training.validate()?;
        self.siamese.loss().validate()?;
        if !(self.siamese.band > 0.0 && self.siamese.band < 1.0) {
            return Err(Error::Config(format!(
                "band must lie in (0, 1), got {}",
                self.siamese.band
            )));
        }
        if self.model == ModelKind::Siamese {
            if self.training.batch_size % 2 != 0 {
                return Err(Error::Config("Siamese batch size must be even".into()));
            }
            if self.output_method != OutputMethod::M4 {
                return Err(Error::Config(
                    "the Siamese model regresses relative coordinates and needs output_method M4".into(),
                ));
            }
        }
        if self.hyperband.max_epochs == 0 || self.hyperband.eta < 2 {
            return Err(Error::Config("hyperband needs max_epochs ≥ 1 and eta ≥ 2".into()));
        }
        self.generator.validate()
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or_else(|| match self.model {
            ModelKind::Regression => OptimizerConfig::default(),
            ModelKind::Siamese => OptimizerConfig::siamese_default(),
        })
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("config has no dataset path".into()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        digest(self)
    }

    /// A copy with one tuning trial's values substituted.
    pub fn apply_trial(&self, trial: &TrialConfig) -> Result<RunConfig> {
        let mut cfg = self.clone();
        let mut opt = cfg.optimizer();
        let mut arch: Option<ExtractorConfig> = None;
        for (key, value) in trial {
            let bad = || Error::Config(format!("trial value {value} does not fit key {key:?}"));
            let num = || value.as_f64().ok_or_else(bad);
            let int = || value.as_u64().map(|v| v as usize).ok_or_else(bad);
            let text = || value.as_str().ok_or_else(bad);
            match key.as_str() {
                "dropout" => cfg.dropout = num()?,
                "optimizer" => opt.kind = text()?.parse::<OptimizerKind>()?,
                "learning_rate" => opt.learning_rate = num()?,
                "weight_decay" => opt.weight_decay = num()?,
                "momentum" => opt.momentum = num()?,
                "rho" => opt.rho = num()?,
                "loss" => cfg.loss = text()?.parse()?,
                "alpha" => cfg.siamese.alpha = num()?,
                "delta" => cfg.siamese.delta = num()?,
                "margin" => cfg.siamese.margin = num()?,
                "kernel" => arch.get_or_insert_with(|| layer_template(&cfg)).kernel = int()?,
                k => {
                    let (field, idx) = k
                        .rsplit_once('_')
                        .and_then(|(f, i)| i.parse::<usize>().ok().map(|i| (f, i)))
                        .ok_or_else(|| Error::Config(format!("unknown trial key {k:?}")))?;
                    let a = arch.get_or_insert_with(|| layer_template(&cfg));
                    if idx >= a.channels.len() {
                        return Err(Error::Config(format!("trial key {k:?} exceeds the layer count")));
                    }
                    match field {
                        "channels" => a.channels[idx] = int()?,
                        "pool" => {
                            value.as_bool().ok_or_else(bad)?;
                        }
                        "pool_size" => {
                            int()?;
                        }
                        _ => return Err(Error::Config(format!("unknown trial key {k:?}"))),
                    }
                }
            }
        }
        // pool flags and sizes arrive as separate keys
        if let Some(a) = &mut arch {
            for i in 0..a.pools.len() {
                let flag = trial.get(&format!("pool_{i}")).and_then(Value::as_bool);
                let size = trial.get(&format!("pool_size_{i}")).and_then(Value::as_u64);
                a.pools[i] = match (flag, size) {
                    (Some(false), _) => None,
                    (Some(true), None) => a.pools[i].or(Some(2)),
                    (_, Some(s)) => Some(s as usize),
                    (None, None) => a.pools[i],
                };
            }
            cfg.architecture = Architecture::Custom(a.clone());
        }
        cfg.optimizer = Some(opt);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Starting point for layer trials: the configured network, widened to the
/// layer-search depth when it is shallower.
fn layer_template(cfg: &RunConfig) -> ExtractorConfig {
    let mut a = cfg.architecture.resolve();
    while a.channels.len() < LAYER_SEARCH_DEPTH {
        a.channels.push(*a.channels.last().expect("validated non-empty"));
        a.pools.push(None);
    }
    a
}

/// A search space by preset name or file path.
pub fn load_space(name_or_path: &str) -> Result<SearchSpace> {
    match name_or_path {
        "layers" => SearchSpace::from_json(LAYERS_PRESET),
        "training" => SearchSpace::from_json(TRAINING_PRESET),
        "siamese" => SearchSpace::from_json(SIAMESE_PRESET),
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SearchSpace::from_json(&text)
        }
    }
}
