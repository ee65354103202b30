//! Data splits, the preprocessing pipeline and the training loops for the
//! regression and Siamese networks.
//!
//! Training is deterministic given the seed: each epoch draws its shuffle and
//! dropout seeds from its own ChaCha stream, so a run resumed after `k`
//! epochs continues exactly like an uninterrupted one.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Tensor};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{MarkerChain, Point3};
use crate::loss::{record_composite, CompositeLossParams, RegressionLoss};
use crate::metrics::{evaluate, shape_rmse, ShapeErrorReport};
use crate::model::{RegressionModel, ShapeRegressor, SiameseModel, PREDICT_BATCH};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::pairs::{build_pair_epoch, LabeledPair, GENUINE, IMPOSTER};
use crate::preprocess::{InputTransform, InputTransformKind, OutputMethod, OutputTransform};
use crate::simulator::{INPUT_LEN, N_SPECTRA, N_WAVELENGTHS};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_PATIENCE: usize = 20;
pub const MIN_SPLIT_SAMPLES: usize = 10;

/// How samples are divided into train/validation/test sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    /// Shuffled partition; the test set takes the remainder.
    Fractions { train: f64, val: f64 },
    /// Every sample in every set (overfitting checks on tiny datasets).
    All(AllMarker),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllMarker {
    All,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions { train: 0.8, val: 0.1 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if let SplitSpec::Fractions { train, val } = *self {
            if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
                return Err(Error::Config(format!(
                    "invalid split fractions train={train} val={val}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    match *spec {
        SplitSpec::All(_) => {
            if n == 0 {
                return Err(Error::Domain("cannot split an empty dataset".into()));
            }
            let all: Vec<usize> = (0..n).collect();
            Ok(Splits {
                train: all.clone(),
                val: all.clone(),
                test: all,
            })
        }
        SplitSpec::Fractions { train, val } => {
            if n < MIN_SPLIT_SAMPLES {
                return Err(Error::Domain(format!(
                    "{n} samples, at least {MIN_SPLIT_SAMPLES} needed for a train/val/test split"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = (train * n as f64).floor() as usize;
            let n_val = (val * n as f64).floor() as usize;
            let test = idx.split_off(n_train + n_val);
            let val = idx.split_off(n_train);
            Ok(Splits { train: idx, val, test })
        }
    }
}

/// Fitted input and output transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub input: InputTransform,
    pub output: OutputTransform,
}

impl Pipeline {
    /// Fits both transforms on the `train` samples only.
    pub fn fit(ds: &Dataset, train: &[usize], input: InputTransformKind, output: OutputMethod) -> Result<Self> {
        let rows: Vec<f64> = train
            .iter()
            .flat_map(|&i| ds.intensities(i).iter().map(|&v| v as f64))
            .collect();
        let chains: Vec<MarkerChain> = train.iter().map(|&i| ds.chain(i)).collect();
        Ok(Pipeline {
            input: InputTransform::fit(input, &rows, INPUT_LEN)?,
            output: OutputTransform::fit(output, &chains)?,
        })
    }

    /// Leaves the first marker out of errors when it is supplied as ground truth.
    pub fn exclude_first(&self) -> bool {
        self.output.method() == OutputMethod::M4
    }

    /// Network inputs `[n, 3, 125]` from raw intensities (`n × 375`).
    pub fn encode_raw(&self, intensities: &[f32]) -> Result<Tensor<f32>> {
        if intensities.len() % INPUT_LEN != 0 {
            return Err(Error::shape("encode inputs", &[intensities.len()], &[INPUT_LEN]));
        }
        let rows: Vec<f64> = intensities.iter().map(|&v| v as f64).collect();
        let z = self.input.apply(&rows)?;
        Tensor::new(
            vec![intensities.len() / INPUT_LEN, N_SPECTRA, N_WAVELENGTHS],
            z.into_iter().map(|v| v as f32).collect(),
        )
    }

    pub fn encode_inputs(&self, ds: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
        let raw: Vec<f32> = idx.iter().flat_map(|&i| ds.intensities(i).iter().copied()).collect();
        self.encode_raw(&raw)
    }

    pub fn encode_targets(&self, ds: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
        let d = self.output.output_dim();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend(self.output.apply(&ds.chain(i))?.into_iter().map(|v| v as f32));
        }
        Tensor::new(vec![idx.len(), d], out)
    }

    /// Absolute chains from network outputs; `anchors` (true first markers)
    /// are needed for relative coordinates.
    pub fn decode(&self, outputs: &Tensor<f32>, anchors: Option<&[Point3]>) -> Result<Vec<MarkerChain>> {
        let d = self.output.output_dim();
        if outputs.ndim() != 2 || outputs.dim(1) != d {
            return Err(Error::shape("decode", outputs.shape(), &[0, d]));
        }
        let n = outputs.dim(0);
        if let Some(a) = anchors {
            if a.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "{} anchors for {n} predictions",
                    a.len()
                )));
            }
        }
        outputs
            .data()
            .chunks(d)
            .enumerate()
            .map(|(i, row)| {
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                self.output
                    .invert(&row, anchors.map(|a| &a[i]), crate::geometry::MARKER_SPACING_MM)
            })
            .collect()
    }
}

/// Encoded dataset plus splits and the fitted pipeline.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub pipeline: Pipeline,
    pub splits: Splits,
    /// Encoded inputs of every sample, `[n, 3, 125]`.
    pub x: Tensor<f32>,
    /// Encoded targets of every sample, `[n, output_dim]`.
    pub y: Tensor<f32>,
    /// Ground-truth chains of every sample.
    pub chains: Vec<MarkerChain>,
}

impl TrainData {
    pub fn prepare(ds: &Dataset, splits: Splits, input: InputTransformKind, output: OutputMethod) -> Result<Self> {
        let pipeline = Pipeline::fit(ds, &splits.train, input, output)?;
        Self::with_pipeline(ds, splits, pipeline)
    }

    pub fn with_pipeline(ds: &Dataset, splits: Splits, pipeline: Pipeline) -> Result<Self> {
        let all: Vec<usize> = (0..ds.len()).collect();
        Ok(TrainData {
            x: pipeline.encode_inputs(ds, &all)?,
            y: pipeline.encode_targets(ds, &all)?,
            chains: ds.chains(),
            splits,
            pipeline,
        })
    }

    pub fn anchors(&self, idx: &[usize]) -> Vec<Point3> {
        idx.iter().map(|&i| self.chains[i].positions[0]).collect()
    }
}

/// Rows `idx` of a tensor whose first axis indexes samples.
pub fn gather(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let n = t.dim(0);
    let row = t.numel() / n.max(1);
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        if i >= n {
            return Err(Error::Domain(format!("sample index {i} out of range ({n} samples)")));
        }
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

/// Absolute-coordinate predictions for samples `idx`.
pub fn predict_chains<M: ShapeRegressor<f32>>(
    model: &mut M,
    data: &TrainData,
    idx: &[usize],
) -> Result<Vec<MarkerChain>> {
    let out = model.predict(&gather(&data.x, idx)?)?;
    let anchors = data.anchors(idx);
    data.pipeline.decode(&out, Some(&anchors))
}

/// Single-sample inference from raw intensities.
pub fn predict_shape<M: ShapeRegressor<f32>>(
    model: &mut M,
    pipeline: &Pipeline,
    intensities: &[f32],
    anchor: Option<&Point3>,
) -> Result<MarkerChain> {
    if intensities.len() != INPUT_LEN {
        return Err(Error::shape("predict_shape", &[intensities.len()], &[INPUT_LEN]));
    }
    let out = model.predict(&pipeline.encode_raw(intensities)?)?;
    let anchors = anchor.map(|a| vec![*a]);
    Ok(pipeline.decode(&out, anchors.as_deref())?.remove(0))
}

/// Mean per-sample shape RMSE (mm) over `idx`.
pub fn validation_rmse<M: ShapeRegressor<f32>>(model: &mut M, data: &TrainData, idx: &[usize]) -> Result<f64> {
    let pred = predict_chains(model, data, idx)?;
    let ex = data.pipeline.exclude_first();
    let mut total = 0.0;
    for (p, &i) in pred.iter().zip(idx) {
        total += shape_rmse(&data.chains[i], p, ex)?;
    }
    Ok(total / idx.len().max(1) as f64)
}

pub fn evaluate_split<M: ShapeRegressor<f32>>(
    model: &mut M,
    data: &TrainData,
    idx: &[usize],
) -> Result<Vec<ShapeErrorReport>> {
    let pred = predict_chains(model, data, idx)?;
    let ex = data.pipeline.exclude_first();
    pred.iter()
        .zip(idx)
        .map(|(p, &i)| evaluate(&data.chains[i], p, ex))
        .collect()
}

/// Marker-wise mean of the chains at `idx`.
pub fn mean_chain(chains: &[MarkerChain], idx: &[usize]) -> Result<MarkerChain> {
    let first = idx
        .first()
        .map(|&i| &chains[i])
        .ok_or_else(|| Error::Domain("mean of zero chains".into()))?;
    let mut pos = vec![Point3::zeros(); first.len()];
    for &i in idx {
        for (m, p) in pos.iter_mut().zip(&chains[i].positions) {
            *m += p;
        }
    }
    pos.iter_mut().for_each(|m| *m /= idx.len() as f64);
    MarkerChain::new(pos, first.spacing)
}

/// Errors of always predicting the mean training chain.
pub fn mean_predictor_reports(data: &TrainData, test: &[usize]) -> Result<Vec<ShapeErrorReport>> {
    let mean = mean_chain(&data.chains, &data.splits.train)?;
    let ex = data.pipeline.exclude_first();
    test.iter().map(|&i| evaluate(&data.chains[i], &mean, ex)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None` trains
    /// for exactly `max_epochs`.
    pub patience: Option<usize>,
    /// Upper bound on pairs per Siamese epoch.
    pub max_pairs_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: DEFAULT_BATCH_SIZE,
            patience: Some(DEFAULT_PATIENCE),
            max_pairs_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    /// Mean Siamese score of genuine / imposter validation pairs.
    pub genuine_score: Option<f64>,
    pub imposter_score: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_rmse_mm,genuine_score,imposter_score,wall_time_s\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.9e},{:.9e},{},{},{:.3}",
                r.epoch,
                r.train_loss,
                r.val_rmse,
                opt(r.genuine_score),
                opt(r.imposter_score),
                r.wall_time_s
            );
        }
        s
    }

    /// History without wall-clock times, for reproducibility comparisons.
    pub fn deterministic_part(&self) -> Vec<(usize, u64, u64, Option<u64>, Option<u64>)> {
        self.epochs
            .iter()
            .map(|r| {
                (
                    r.epoch,
                    r.train_loss.to_bits(),
                    r.val_rmse.to_bits(),
                    r.genuine_score.map(f64::to_bits),
                    r.imposter_score.map(f64::to_bits),
                )
            })
            .collect()
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn check_loss(value: f64, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            epoch,
            batch,
            msg: format!("loss is {value}"),
        })
    }
}

fn step_error(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFiniteGradient(name) => Error::Training {
            epoch,
            batch,
            msg: format!("non-finite gradient in {name}"),
        },
        other => other,
    }
}

/// Resumable training state shared by both model kinds.
#[derive(Clone, Debug)]
pub struct Session<M> {
    pub model: M,
    pub optimizer: Optimizer,
    pub history: TrainHistory,
    pub seed: u64,
    best_weights: Option<Vec<Tensor<f32>>>,
    since_best: usize,
}

impl<M: ShapeRegressor<f32>> Session<M> {
    pub fn new(model: M, optimizer: OptimizerConfig, seed: u64) -> Result<Self> {
        Ok(Session {
            model,
            optimizer: Optimizer::new(optimizer)?,
            history: TrainHistory {
                best_val_rmse: f64::INFINITY,
                ..Default::default()
            },
            seed,
            best_weights: None,
            since_best: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    fn record(&mut self, rec: EpochRecord) {
        log::info!(
            "epoch {:>3}  loss {:.6}  val_rmse {:.4} mm{}",
            rec.epoch,
            rec.train_loss,
            rec.val_rmse,
            match (rec.genuine_score, rec.imposter_score) {
                (Some(g), Some(i)) => format!("  score genuine {g:.4} imposter {i:.4}"),
                _ => String::new(),
            }
        );
        if rec.val_rmse < self.history.best_val_rmse {
            self.history.best_val_rmse = rec.val_rmse;
            self.history.best_epoch = rec.epoch;
            self.best_weights = Some(self.model.params().snapshot());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.history.epochs.push(rec);
    }

    fn should_stop(&self, patience: Option<usize>) -> bool {
        patience.is_some_and(|p| self.since_best > p)
    }

    /// Loads the weights of the best validation epoch.
    pub fn restore_best(&mut self) {
        if let Some(w) = &self.best_weights {
            self.model.params_mut().restore(w);
        }
    }
}

pub type RegressionSession = Session<RegressionModel<f32>>;
pub type SiameseSession = Session<SiameseModel<f32>>;

impl RegressionSession {
    pub fn run_epoch(&mut self, data: &TrainData, loss: &RegressionLoss, batch_size: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let mut rng = epoch_rng(self.seed, epoch);
        let mut idx = data.splits.train.clone();
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in idx.chunks(batch_size).enumerate() {
            let mut b = chunk.to_vec();
            if b.len() == 1 {
                // batch statistics need two rows
                b.push(b[0]);
            }
            let x = gather(&data.x, &b)?;
            let y = gather(&data.y, &b)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let out = self.model.regress(&mut tape, xv, Mode::Train, rng.gen())?;
            let (l, _) = loss.record(&mut tape, out, &y)?;
            let lv = tape.value(l).data()[0] as f64;
            check_loss(lv, epoch, bi)?;
            let store = self.model.params_mut();
            store.zero_grad();
            tape.backward(l, store)?;
            self.optimizer.step(store).map_err(|e| step_error(e, epoch, bi))?;
            total += lv * chunk.len() as f64;
        }
        let val_rmse = validation_rmse(&mut self.model, data, &data.splits.val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / idx.len() as f64,
            val_rmse,
            genuine_score: None,
            imposter_score: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.record(rec.clone());
        Ok(rec)
    }

    /// Trains up to `cfg.max_epochs` total epochs with early stopping, then
    /// restores the best weights.
    pub fn fit(&mut self, data: &TrainData, loss: &RegressionLoss, cfg: &TrainConfig) -> Result<&TrainHistory> {
        cfg.validate()?;
        loss.validate()?;
        check_targets(&self.model, data)?;
        while self.epochs_done() < cfg.max_epochs {
            self.run_epoch(data, loss, cfg.batch_size)?;
            if self.should_stop(cfg.patience) {
                self.history.stopped_early = true;
                break;
            }
        }
        self.restore_best();
        Ok(&self.history)
    }
}

fn check_targets<M: ShapeRegressor<f32>>(model: &M, data: &TrainData) -> Result<()> {
    if model.output_dim() != data.pipeline.output.output_dim() {
        return Err(Error::Config(format!(
            "model outputs {} values, the {} targets have {}",
            model.output_dim(),
            data.pipeline.output.method(),
            data.pipeline.output.output_dim()
        )));
    }
    Ok(())
}

pub fn train_regression(
    model: RegressionModel<f32>,
    data: &TrainData,
    optimizer: OptimizerConfig,
    loss: &RegressionLoss,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RegressionModel<f32>, TrainHistory)> {
    let mut s = Session::new(model, optimizer, seed)?;
    s.fit(data, loss, cfg)?;
    Ok((s.model, s.history))
}

/// Mean Siamese score of genuine and imposter pairs, evaluation mode.
pub fn pair_scores(model: &mut SiameseModel<f32>, data: &TrainData, pairs: &[LabeledPair]) -> Result<(f64, f64)> {
    let uniq: Vec<usize> = pairs
        .iter()
        .flat_map(|p| [p.a, p.b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut slot = vec![usize::MAX; data.chains.len()];
    for (k, &i) in uniq.iter().enumerate() {
        slot[i] = k;
    }
    let mut feats: Vec<f32> = Vec::new();
    let mut dim = 0;
    for chunk in uniq.chunks(PREDICT_BATCH) {
        let mut tape = Tape::new();
        let x = tape.constant(gather(&data.x, chunk)?);
        let f = model.features(&mut tape, x, Mode::Eval)?;
        dim = tape.value(f).dim(1);
        feats.extend_from_slice(tape.value(f).data());
    }
    let feats = Tensor::new(vec![uniq.len(), dim], feats)?;
    let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
    for chunk in pairs.chunks(1024) {
        let a: Vec<usize> = chunk.iter().map(|p| slot[p.a]).collect();
        let b: Vec<usize> = chunk.iter().map(|p| slot[p.b]).collect();
        let mut tape = Tape::new();
        let fa = tape.constant(gather(&feats, &a)?);
        let fb = tape.constant(gather(&feats, &b)?);
        let s = model.distance(&mut tape, fa, fb, Mode::Eval)?;
        for (p, v) in chunk.iter().zip(tape.value(s).data()) {
            let c = usize::from(p.label == IMPOSTER);
            sums[c] += *v as f64;
            counts[c] += 1;
        }
    }
    if counts.contains(&0) {
        return Err(Error::Domain("validation pairs need both labels".into()));
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}

impl SiameseSession {
    pub fn run_epoch(
        &mut self,
        data: &TrainData,
        pairs: &[LabeledPair],
        val_pairs: &[LabeledPair],
        params: &CompositeLossParams,
        cfg: &TrainConfig,
    ) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let mut rng = epoch_rng(self.seed, epoch);
        let batches = build_pair_epoch(pairs, cfg.batch_size, cfg.max_pairs_per_epoch, rng.gen())?;
        let mut total = 0.0;
        let mut count = 0;
        for (bi, batch) in batches.iter().enumerate() {
            let a: Vec<usize> = batch.iter().map(|p| p.a).collect();
            let b: Vec<usize> = batch.iter().map(|p| p.b).collect();
            let labels: Vec<f64> = batch.iter().map(|p| f64::from(p.label)).collect();
            let (ta, tb) = (gather(&data.y, &a)?, gather(&data.y, &b)?);
            let mut tape = Tape::new();
            let xa = tape.constant(gather(&data.x, &a)?);
            let xb = tape.constant(gather(&data.x, &b)?);
            let o = self.model.forward(&mut tape, xa, xb, Mode::Train)?;
            let l = record_composite(&mut tape, &labels, o.y_pred, o.y_a, &ta, o.y_b, &tb, params)?;
            let lv = tape.value(l).data()[0] as f64;
            check_loss(lv, epoch, bi)?;
            let store = self.model.params_mut();
            store.zero_grad();
            tape.backward(l, store)?;
            self.optimizer.step(store).map_err(|e| step_error(e, epoch, bi))?;
            total += lv * batch.len() as f64;
            count += batch.len();
        }
        let val_rmse = validation_rmse(&mut self.model, data, &data.splits.val)?;
        let (genuine, imposter) = if val_pairs.is_empty() {
            (None, None)
        } else {
            let (g, i) = pair_scores(&mut self.model, data, val_pairs)?;
            (Some(g), Some(i))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_rmse,
            genuine_score: genuine,
            imposter_score: imposter,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.record(rec.clone());
        Ok(rec)
    }

    pub fn fit(
        &mut self,
        data: &TrainData,
        pairs: &[LabeledPair],
        val_pairs: &[LabeledPair],
        params: &CompositeLossParams,
        cfg: &TrainConfig,
    ) -> Result<&TrainHistory> {
        cfg.validate()?;
        params.validate()?;
        check_targets(&self.model, data)?;
        if cfg.batch_size % 2 != 0 {
            return Err(Error::Config("Siamese batch size must be even".into()));
        }
        while self.epochs_done() < cfg.max_epochs {
            self.run_epoch(data, pairs, val_pairs, params, cfg)?;
            if self.should_stop(cfg.patience) {
                self.history.stopped_early = true;
                break;
            }
        }
        self.restore_best();
        Ok(&self.history)
    }
}

/// Keeps only pairs whose members both lie in `allowed`.
pub fn pairs_within(pairs: &[LabeledPair], allowed: &[usize]) -> Vec<LabeledPair> {
    let set: BTreeSet<usize> = allowed.iter().copied().collect();
    pairs
        .iter()
        .copied()
        .filter(|p| set.contains(&p.a) && set.contains(&p.b))
        .collect()
}

/// Maps pairs from positions in `idx` back to dataset indices.
pub fn remap_pairs(pairs: &[LabeledPair], idx: &[usize]) -> Vec<LabeledPair> {
    pairs
        .iter()
        .map(|p| LabeledPair {
            a: idx[p.a],
            b: idx[p.b],
            label: p.label,
        })
        .collect()
}

/// Counts of genuine and imposter pairs.
pub fn label_counts(pairs: &[LabeledPair]) -> (usize, usize) {
    let g = pairs.iter().filter(|p| p.label == GENUINE).count();
    (g, pairs.len() - g)
}
