//! End-to-end commands shared by the CLI and the tests: generate, train,
//! evaluate, mine pairs and tune.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{AnyModel, Checkpoint, ModelKind};
use crate::config::RunConfig;
use crate::dataset::{Dataset, DatasetSidecar};
use crate::error::{Error, Result};
use crate::hyperband::{Hyperband, HyperbandReport, SearchSpace, TrialOutcome, TrialRunner, TrialSpec};
use crate::metrics::{summarize, BoxStats, ShapeErrorReport};
use crate::model::{RegressionModel, SiameseModel};
use crate::pairs::{compute_thresholds, label_pairs, pairwise_rmse, LabeledPair, PairThresholds};
use crate::simulator::{generate_samples, GeneratorConfig};
use crate::train::{
    evaluate_split, label_counts, remap_pairs, split, RegressionSession, SiameseSession, Splits, TrainData,
    TrainHistory,
};

/// Offsets that give every random consumer of a run its own seed.
const INIT_SEED: u64 = 1;
const TRAIN_SEED: u64 = 2;
const PAIR_SEED: u64 = 3;
const VAL_PAIR_SEED: u64 = 4;

/// Generates `n` samples and writes the dataset and its sidecar.
pub fn generate(n: usize, seed: u64, generator: &GeneratorConfig, out: &Path) -> Result<(Dataset, DatasetSidecar)> {
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let ds = Dataset::from_samples(&generate_samples(n, seed, generator)?)?;
    let sidecar = DatasetSidecar::new(n, seed, generator)?;
    ds.write(out)?;
    sidecar.write(&DatasetSidecar::path_for(out))?;
    Ok((ds, sidecar))
}

pub fn prepare(cfg: &RunConfig, ds: &Dataset) -> Result<TrainData> {
    let splits = split(ds.len(), &cfg.split, cfg.seed)?;
    TrainData::prepare(ds, splits, cfg.input_transform, cfg.output_method)
}

/// Labelled pairs in dataset indices, with thresholds from the training split.
#[derive(Clone, Debug)]
pub struct PairSets {
    pub thresholds: PairThresholds,
    pub train: Vec<LabeledPair>,
    pub val: Vec<LabeledPair>,
}

pub fn mine_pairs(cfg: &RunConfig, data: &TrainData) -> Result<PairSets> {
    let s = &cfg.siamese;
    let chains = |idx: &[usize]| idx.iter().map(|&i| data.chains[i].clone()).collect::<Vec<_>>();
    let train_stream = pairwise_rmse(&chains(&data.splits.train), s.pair_budget, cfg.seed + PAIR_SEED)?;
    let rmse: Vec<f64> = train_stream.iter().map(|p| p.rmse).collect();
    let thresholds = compute_thresholds(&rmse, s.band)?;
    let train = remap_pairs(&label_pairs(&train_stream, &thresholds), &data.splits.train);
    let val_stream = pairwise_rmse(&chains(&data.splits.val), s.val_pair_budget, cfg.seed + VAL_PAIR_SEED)?;
    let mut val = remap_pairs(&label_pairs(&val_stream, &thresholds), &data.splits.val);
    let (vg, vi) = label_counts(&val);
    if vg == 0 || vi == 0 {
        log::warn!("validation pairs lack a label class ({vg} genuine, {vi} imposter); pair scores are not tracked");
        val.clear();
    }
    let (g, i) = label_counts(&train);
    log::info!("pairs: {g} genuine / {i} imposter for training, thresholds {thresholds:?}");
    if g == 0 || i == 0 {
        return Err(Error::Domain("pair mining produced only one label class".into()));
    }
    Ok(PairSets { thresholds, train, val })
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub data: TrainData,
    pub pairs: Option<PairSets>,
}

/// Reads the configured dataset and trains on it.
pub fn train(cfg: &RunConfig) -> Result<TrainRun> {
    let ds = Dataset::read(cfg.dataset_path()?)?;
    train_on(cfg, &ds)
}

pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    let data = prepare(cfg, ds)?;
    let extractor = cfg.architecture.resolve();
    let dim = cfg.output_method.output_dim(ds.chain(0).len());
    let (model, history, pairs) = match cfg.model {
        ModelKind::Regression => {
            let model = RegressionModel::build(&extractor, dim, cfg.dropout, cfg.seed + INIT_SEED)?;
            let mut s = RegressionSession::new(model, cfg.optimizer(), cfg.seed + TRAIN_SEED)?;
            s.fit(&data, &cfg.loss, &cfg.training)?;
            (AnyModel::Regression(s.model), s.history, None)
        }
        ModelKind::Siamese => {
            let pairs = mine_pairs(cfg, &data)?;
            let mut model = SiameseModel::build(&extractor, dim, cfg.seed + INIT_SEED)?;
            if let Some(p) = &cfg.siamese.warm_start {
                let source = Checkpoint::read(p)?;
                model.load_extractor(&source.model)?;
            }
            let mut s = SiameseSession::new(model, cfg.optimizer(), cfg.seed + TRAIN_SEED)?;
            s.fit(&data, &pairs.train, &pairs.val, &cfg.siamese.loss(), &cfg.training)?;
            (AnyModel::Siamese(s.model), s.history, Some(pairs))
        }
    };
    let checkpoint = Checkpoint {
        model,
        pipeline: data.pipeline.clone(),
        split: cfg.split,
        split_seed: cfg.seed,
        n_samples: ds.len(),
        config_digest: cfg.digest()?,
    };
    Ok(TrainRun {
        checkpoint,
        history,
        data,
        pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for SplitChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => SplitChoice::Train,
            "val" => SplitChoice::Val,
            "test" => SplitChoice::Test,
            "all" => SplitChoice::All,
            _ => return Err(Error::Config(format!("unknown split {s:?} (train, val, test or all)"))),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub indices: Vec<usize>,
    pub samples: Vec<ShapeErrorReport>,
    pub tip_error: BoxStats,
    pub rmse: BoxStats,
}

impl EvalReport {
    pub fn new(indices: Vec<usize>, samples: Vec<ShapeErrorReport>) -> Result<Self> {
        let tips: Vec<f64> = samples.iter().map(|r| r.tip_error).collect();
        let rmse: Vec<f64> = samples.iter().map(|r| r.rmse).collect();
        Ok(EvalReport {
            tip_error: summarize(&tips)?,
            rmse: summarize(&rmse)?,
            indices,
            samples,
        })
    }

    /// One row per sample, then median rows for both metrics.
    pub fn to_csv(&self) -> String {
        let n_markers = self.samples.first().map_or(0, |r| r.per_marker.len());
        let mut out = String::from("sample,tip_error_mm,rmse_mm");
        for m in 0..n_markers {
            out.push_str(&format!(",marker_{m}_mm"));
        }
        out.push('\n');
        for (i, r) in self.indices.iter().zip(&self.samples) {
            out.push_str(&format!("{i},{},{}", r.tip_error, r.rmse));
            for d in &r.per_marker {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("median,{},{}\n", self.tip_error.median, self.rmse.median));
        out
    }
}

/// Scores a checkpoint on one split of `ds`, rebuilding the split the model
/// was trained with.
pub fn evaluate(ck: &mut Checkpoint, ds: &Dataset, which: SplitChoice) -> Result<EvalReport> {
    let splits = if which == SplitChoice::All {
        let all: Vec<usize> = (0..ds.len()).collect();
        Splits {
            train: all.clone(),
            val: all.clone(),
            test: all,
        }
    } else {
        if ds.len() != ck.n_samples {
            return Err(Error::Config(format!(
                "checkpoint was trained on {} samples, dataset has {}; use --split all",
                ck.n_samples,
                ds.len()
            )));
        }
        split(ds.len(), &ck.split, ck.split_seed)?
    };
    let idx = match which {
        SplitChoice::Train => splits.train.clone(),
        SplitChoice::Val => splits.val.clone(),
        SplitChoice::Test | SplitChoice::All => splits.test.clone(),
    };
    let data = TrainData::with_pipeline(ds, splits, ck.pipeline.clone())?;
    let samples = evaluate_split(&mut ck.model, &data, &idx)?;
    EvalReport::new(idx, samples)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairsReport {
    pub n_samples: usize,
    pub pairs_evaluated: usize,
    pub thresholds: PairThresholds,
    pub genuine: usize,
    pub imposter: usize,
    pub rmse: BoxStats,
}

pub fn pairs_report(ds: &Dataset, budget: usize, seed: u64, band: f64) -> Result<PairsReport> {
    let stream = pairwise_rmse(&ds.chains(), budget, seed)?;
    let rmse: Vec<f64> = stream.iter().map(|p| p.rmse).collect();
    let thresholds = compute_thresholds(&rmse, band)?;
    let (genuine, imposter) = label_counts(&label_pairs(&stream, &thresholds));
    Ok(PairsReport {
        n_samples: ds.len(),
        pairs_evaluated: stream.len(),
        thresholds,
        genuine,
        imposter,
        rmse: summarize(&rmse)?,
    })
}

enum TrialSession {
    Regression(RegressionSession),
    Siamese(SiameseSession),
}

/// Trains tuning trials, keeping each trial's session so later rounds
/// continue where the previous one stopped.
struct TuneRunner<'a> {
    base: &'a RunConfig,
    data: &'a TrainData,
    pairs: Option<&'a PairSets>,
    sessions: HashMap<usize, (RunConfig, TrialSession)>,
}

impl TuneRunner<'_> {
    fn session(&mut self, trial: &TrialSpec) -> Result<&mut (RunConfig, TrialSession)> {
        if !self.sessions.contains_key(&trial.id) {
            let cfg = self.base.apply_trial(&trial.config)?;
            let extractor = cfg.architecture.resolve();
            let dim = self.data.pipeline.output.output_dim();
            let session = match cfg.model {
                ModelKind::Regression => {
                    let m = RegressionModel::build(&extractor, dim, cfg.dropout, trial.seed)?;
                    TrialSession::Regression(RegressionSession::new(m, cfg.optimizer(), trial.seed)?)
                }
                ModelKind::Siamese => {
                    let m = SiameseModel::build(&extractor, dim, trial.seed)?;
                    TrialSession::Siamese(SiameseSession::new(m, cfg.optimizer(), trial.seed)?)
                }
            };
            self.sessions.insert(trial.id, (cfg, session));
        }
        Ok(self.sessions.get_mut(&trial.id).expect("inserted above"))
    }
}

impl TrialRunner for TuneRunner<'_> {
    fn run(&mut self, trial: &TrialSpec, epochs: usize) -> Result<TrialOutcome> {
        let data = self.data;
        let pairs = self.pairs;
        let (cfg, session) = self.session(trial)?;
        let mut trained = 0;
        let best = match session {
            TrialSession::Regression(s) => {
                while s.epochs_done() < epochs {
                    s.run_epoch(data, &cfg.loss, cfg.training.batch_size)?;
                    trained += 1;
                }
                s.history.best_val_rmse
            }
            TrialSession::Siamese(s) => {
                let p = pairs.ok_or_else(|| Error::Config("Siamese tuning needs mined pairs".into()))?;
                while s.epochs_done() < epochs {
                    s.run_epoch(data, &p.train, &p.val, &cfg.siamese.loss(), &cfg.training)?;
                    trained += 1;
                }
                s.history.best_val_rmse
            }
        };
        Ok(TrialOutcome {
            objective: best,
            epochs_trained: trained,
        })
    }

    fn release(&mut self, trial: &TrialSpec) {
        self.sessions.remove(&trial.id);
    }
}

/// Runs Hyperband over `space` with validation shape RMSE as the objective.
pub fn tune(cfg: &RunConfig, ds: &Dataset, space: SearchSpace, ledger: Option<PathBuf>) -> Result<HyperbandReport> {
    cfg.validate()?;
    let data = prepare(cfg, ds)?;
    let pairs = match cfg.model {
        ModelKind::Siamese => Some(mine_pairs(cfg, &data)?),
        ModelKind::Regression => None,
    };
    let mut runner = TuneRunner {
        base: cfg,
        data: &data,
        pairs: pairs.as_ref(),
        sessions: HashMap::new(),
    };
    let hb = Hyperband {
        space,
        max_epochs: cfg.hyperband.max_epochs,
        eta: cfg.hyperband.eta,
        seed: cfg.seed,
        ledger,
    };
    hb.run(&mut runner)
}
