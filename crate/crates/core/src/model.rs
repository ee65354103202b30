//! The regression CNN and its Siamese variant.
//!
//! Both share the same feature extractor layout: seven `conv1d → sigmoid →
//! batchnorm` blocks with optional max pooling, followed by flatten. Models
//! own their [`ParamStore`]; parameter names are stable so weights can be
//! copied between models and written to checkpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::N_MARKERS;
use crate::simulator::{N_SPECTRA, N_WAVELENGTHS};

/// Width of the hidden layer of the Siamese regression branch.
pub const SIAMESE_HIDDEN: usize = 1344;
/// Rows per forward pass during inference.
pub const PREDICT_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Max-pool size after each conv block, `None` for no pooling.
    pub pools: Vec<Option<usize>>,
}

impl ExtractorConfig {
    /// The selected seven-layer network.
    pub fn fig2() -> Self {
        ExtractorConfig {
            channels: vec![176, 120, 48, 96, 48, 232, 224],
            kernel: 10,
            pools: vec![None, Some(2), Some(2), None, Some(2), None, Some(3)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(
                "extractor needs at least one layer with nonzero channels".into(),
            ));
        }
        if self.pools.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "{} pool entries for {} conv layers",
                self.pools.len(),
                self.channels.len()
            )));
        }
        if self.kernel == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        if self.pools.iter().flatten().any(|&p| p < 2) {
            return Err(Error::Config("pool sizes must be at least 2".into()));
        }
        Ok(())
    }

    /// Sequence length after the last block.
    pub fn output_len(&self) -> usize {
        self.pools
            .iter()
            .fold(N_WAVELENGTHS, |len, p| p.map_or(len, |p| len.div_ceil(p)))
    }

    /// Length of the flattened feature vector.
    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * self.output_len()
    }
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit))
}

fn add<T: Real>(store: &mut ParamStore<T>, name: String, value: Tensor<f64>, trainable: bool) -> ParamId {
    store.add(name, value.cast(), trainable)
}

#[derive(Clone, Debug)]
struct ConvBlock {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pool: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    fn build<T: Real>(store: &mut ParamStore<T>, prefix: &str, ch: usize) -> Self {
        BatchNorm {
            gamma: add(store, format!("{prefix}.gamma"), Tensor::full(&[ch], 1.0), true),
            beta: add(store, format!("{prefix}.beta"), Tensor::zeros(&[ch]), true),
            running_mean: add(store, format!("{prefix}.running_mean"), Tensor::zeros(&[ch]), false),
            running_var: add(store, format!("{prefix}.running_var"), Tensor::full(&[ch], 1.0), false),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let (rm, rv) = store.pair_mut(self.running_mean, self.running_var);
        tape.batchnorm1d(x, g, b, rm, rv, mode)
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        n_in: usize,
        n_out: usize,
    ) -> Self {
        Dense {
            w: add(
                store,
                format!("{prefix}.weight"),
                xavier(rng, &[n_out, n_in], n_in, n_out),
                true,
            ),
            b: add(store, format!("{prefix}.bias"), Tensor::zeros(&[n_out]), true),
        }
    }

    /// A 1→1 layer with weight 1 and bias 0.
    fn identity<T: Real>(store: &mut ParamStore<T>, prefix: &str) -> Self {
        Dense {
            w: add(store, format!("{prefix}.weight"), Tensor::full(&[1, 1], 1.0), true),
            b: add(store, format!("{prefix}.bias"), Tensor::zeros(&[1]), true),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.dense(x, w, b)
    }
}

/// Convolutional feature extractor, output `[batch, feature_dim]`.
#[derive(Clone, Debug)]
pub struct Extractor {
    cfg: ExtractorConfig,
    blocks: Vec<ConvBlock>,
}

impl Extractor {
    fn build<T: Real>(cfg: &ExtractorConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut c_in = N_SPECTRA;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        for (i, (&c_out, &pool)) in cfg.channels.iter().zip(&cfg.pools).enumerate() {
            let p = format!("extractor.conv{}", i + 1);
            let w = add(
                store,
                format!("{p}.weight"),
                xavier(rng, &[c_out, c_in, k], c_in * k, c_out * k),
                true,
            );
            let b = add(store, format!("{p}.bias"), Tensor::zeros(&[c_out]), true);
            let bn = BatchNorm::build(store, &format!("extractor.bn{}", i + 1), c_out);
            blocks.push(ConvBlock {
                w,
                b,
                gamma: bn.gamma,
                beta: bn.beta,
                running_mean: bn.running_mean,
                running_var: bn.running_var,
                pool,
            });
            c_in = c_out;
        }
        Ok(Extractor {
            cfg: cfg.clone(),
            blocks,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let xs = tape.value(x).shape().to_vec();
        if xs.len() != 3 || xs[1] != N_SPECTRA || xs[2] != N_WAVELENGTHS {
            return Err(Error::shape("extractor input", &xs, &[0, N_SPECTRA, N_WAVELENGTHS]));
        }
        let mut h = x;
        for blk in &self.blocks {
            let w = tape.param(store, blk.w);
            let b = tape.param(store, blk.b);
            h = tape.conv1d(h, w, b)?;
            h = tape.sigmoid(h);
            let bn = BatchNorm {
                gamma: blk.gamma,
                beta: blk.beta,
                running_mean: blk.running_mean,
                running_var: blk.running_var,
            };
            h = bn.forward(tape, store, h, mode)?;
            if let Some(p) = blk.pool {
                h = tape.maxpool1d(h, p)?;
            }
        }
        tape.flatten(h)
    }
}

/// Checks the network target width: 63 for absolute, 60 for relative coordinates.
pub fn check_output_dim(output_dim: usize) -> Result<()> {
    if output_dim == N_MARKERS * 3 || output_dim == (N_MARKERS - 1) * 3 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "output dimension must be {} or {}, got {output_dim}",
            N_MARKERS * 3,
            (N_MARKERS - 1) * 3
        )))
    }
}

/// Anything that maps preprocessed spectra `[batch, 3, 125]` to network outputs.
pub trait ShapeRegressor<T: Real> {
    fn output_dim(&self) -> usize;

    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Single-arm regression output `[batch, output_dim]`.
    fn regress(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode, dropout_seed: u64) -> Result<Var>;

    /// Evaluation-mode outputs for a whole input tensor, in chunks.
    fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 3 {
            return Err(Error::shape("predict", xs, &[0, N_SPECTRA, N_WAVELENGTHS]));
        }
        let (n, row) = (xs[0], xs[1] * xs[2]);
        let d = self.output_dim();
        let mut out = Vec::with_capacity(n * d);
        for start in (0..n).step_by(PREDICT_BATCH) {
            let end = (start + PREDICT_BATCH).min(n);
            let chunk = Tensor::new(
                vec![end - start, xs[1], xs[2]],
                x.data()[start * row..end * row].to_vec(),
            )?;
            let mut tape = Tape::new();
            let xv = tape.constant(chunk);
            let y = self.regress(&mut tape, xv, Mode::Eval, 0)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Tensor::new(vec![n, d], out)
    }
}

#[derive(Clone, Debug)]
pub struct RegressionModel<T: Real = f32> {
    store: ParamStore<T>,
    extractor: Extractor,
    head: Dense,
    dropout_rate: f64,
    output_dim: usize,
}

impl<T: Real> RegressionModel<T> {
    pub fn build(cfg: &ExtractorConfig, output_dim: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        check_output_dim(output_dim)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let extractor = Extractor::build(cfg, &mut store, &mut rng)?;
        let head = Dense::build(&mut store, &mut rng, "head", cfg.feature_dim(), output_dim);
        Ok(RegressionModel {
            store,
            extractor,
            head,
            dropout_rate,
            output_dim,
        })
    }

    pub fn extractor_config(&self) -> &ExtractorConfig {
        self.extractor.config()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }
}

impl<T: Real> ShapeRegressor<T> for RegressionModel<T> {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn regress(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode, dropout_seed: u64) -> Result<Var> {
        let f = self.extractor.forward(tape, &mut self.store, x, mode)?;
        let f = tape.dropout(f, self.dropout_rate, mode, dropout_seed)?;
        self.head.forward(tape, &self.store, f)
    }
}

/// Outputs of one Siamese forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SiameseOutput {
    /// Regression output of arm A, `[batch, output_dim]`.
    pub y_a: Var,
    pub y_b: Var,
    /// Dissimilarity score in (0, 1), `[batch, 1]`.
    pub y_pred: Var,
}

#[derive(Clone, Debug)]
pub struct SiameseModel<T: Real = f32> {
    store: ParamStore<T>,
    extractor: Extractor,
    dist_bn: BatchNorm,
    dist_dense: Dense,
    hidden: Dense,
    out: Dense,
    output_dim: usize,
}

impl<T: Real> SiameseModel<T> {
    pub fn build(cfg: &ExtractorConfig, output_dim: usize, seed: u64) -> Result<Self> {
        check_output_dim(output_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let extractor = Extractor::build(cfg, &mut store, &mut rng)?;
        let dist_bn = BatchNorm::build(&mut store, "distance.bn", 1);
        // start with the score increasing in feature distance; a random
        // sign on this single weight takes many epochs to undo at lr 1e-4
        let dist_dense = Dense::identity(&mut store, "distance.dense");
        let hidden = Dense::build(&mut store, &mut rng, "branch.hidden", cfg.feature_dim(), SIAMESE_HIDDEN);
        let out = Dense::build(&mut store, &mut rng, "branch.out", SIAMESE_HIDDEN, output_dim);
        Ok(SiameseModel {
            store,
            extractor,
            dist_bn,
            dist_dense,
            hidden,
            out,
            output_dim,
        })
    }

    pub fn extractor_config(&self) -> &ExtractorConfig {
        self.extractor.config()
    }

    /// Flattened extractor features, `[batch, feature_dim]`.
    pub fn features(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.extractor.forward(tape, &mut self.store, x, mode)
    }

    fn branch(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, &self.store, f)?;
        let h = tape.sigmoid(h);
        self.out.forward(tape, &self.store, h)
    }

    /// Distance head on two feature batches.
    pub fn distance(&mut self, tape: &mut Tape<T>, fa: Var, fb: Var, mode: Mode) -> Result<Var> {
        let d = tape.euclid_dist(fa, fb)?;
        let d = self.dist_bn.forward(tape, &mut self.store, d, mode)?;
        let d = self.dist_dense.forward(tape, &self.store, d)?;
        Ok(tape.sigmoid(d))
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, xa: Var, xb: Var, mode: Mode) -> Result<SiameseOutput> {
        let (sa, sb) = (tape.value(xa).shape(), tape.value(xb).shape());
        if sa != sb {
            return Err(Error::shape("siamese inputs", sa, sb));
        }
        let fa = self.features(tape, xa, mode)?;
        let fb = self.features(tape, xb, mode)?;
        let y_pred = self.distance(tape, fa, fb, mode)?;
        let y_a = self.branch(tape, fa)?;
        let y_b = self.branch(tape, fb)?;
        Ok(SiameseOutput { y_a, y_b, y_pred })
    }

    /// Copies every extractor tensor (weights and running statistics) from
    /// a model with the same extractor layout.
    pub fn load_extractor<M: ShapeRegressor<T>>(&mut self, source: &M) -> Result<()> {
        copy_by_prefix(source.params(), &mut self.store, "extractor.")
    }
}

impl<T: Real> ShapeRegressor<T> for SiameseModel<T> {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn regress(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode, _dropout_seed: u64) -> Result<Var> {
        let f = self.features(tape, x, mode)?;
        self.branch(tape, f)
    }
}

fn copy_by_prefix<T: Real>(src: &ParamStore<T>, dst: &mut ParamStore<T>, prefix: &str) -> Result<()> {
    let mut copied = 0;
    for (_, p) in dst.iter_mut().filter(|(_, p)| p.name.starts_with(prefix)) {
        let (_, s) = src
            .iter()
            .find(|(_, s)| s.name == p.name)
            .ok_or_else(|| Error::Config(format!("source model has no parameter {}", p.name)))?;
        if s.value.shape() != p.value.shape() {
            return Err(Error::shape("copy parameter", s.value.shape(), p.value.shape()));
        }
        p.value = s.value.clone();
        copied += 1;
    }
    log::debug!("copied {copied} tensors with prefix {prefix}");
    Ok(())
}
