//! Acceptance criteria 1–11. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use edgefbg::autodiff::{Mode, Tape};
use edgefbg::checkpoint::ModelKind;
use edgefbg::config::{RunConfig, SiameseSettings};
use edgefbg::dataset::Dataset;
use edgefbg::geometry::{
    from_relative, integrate_shape, to_relative, MarkerChain, Point3, Segment, ShapeParams, MARKER_SPACING_MM,
    N_MARKERS,
};
use edgefbg::hyperband::{plan_brackets, Hyperband, SearchSpace, TrialOutcome, TrialRunner, TrialSpec};
use edgefbg::loss::{contrastive, huber_mod};
use edgefbg::model::{ExtractorConfig, RegressionModel, ShapeRegressor};
use edgefbg::optim::OptimizerConfig;
use edgefbg::pairs::{compute_thresholds, label_pairs, pairwise_rmse, GENUINE, IMPOSTER};
use edgefbg::preprocess::{InputTransform, InputTransformKind, OutputMethod, OutputTransform};
use edgefbg::run::{self, TrainRun};
use edgefbg::simulator::{GeneratorConfig, ShapeSampler, INPUT_LEN};
use edgefbg::stats::median;
use edgefbg::train::{evaluate_split, mean_predictor_reports, TrainConfig};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn line(text: &str) {
    // written to the process stdout directly so the lines survive output capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn run_criterion(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => line(&format!("criterion {id:>2} PASS  {name} ({secs:.1} s): {detail}")),
        Err(detail) => line(&format!("criterion {id:>2} FAIL  {name} ({secs:.1} s): {detail}")),
    }
    outcome.is_ok()
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// 1
fn gradients() -> Outcome {
    let suite = common::gradient_suite().map_err(e)?;
    let worst = suite
        .iter()
        .cloned()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    for (op, err) in &suite {
        ensure!(*err < 1e-6, "{op}: relative error {err:e}");
    }
    Ok(format!(
        "{} ops × {} instances, worst {:.2e} ({})",
        suite.len(),
        common::INSTANCES,
        worst.1,
        worst.0
    ))
}

// 2
fn whitening() -> Outcome {
    let (n, d) = (2000, INPUT_LEN);
    let mut r = common::rng(2);
    // correlated data: a random mixing of independent sources plus an offset
    let mix: Vec<f64> = (0..d * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let offset: Vec<f64> = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
    let mut rows = vec![0.0; n * d];
    for i in 0..n {
        let z: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        for j in 0..d {
            rows[i * d + j] = offset[j] + (0..d).map(|k| mix[j * d + k] * z[k]).sum::<f64>();
        }
    }
    let t = InputTransform::fit(InputTransformKind::Whiten, &rows, d).map_err(e)?;
    let w = t.apply(&rows).map_err(e)?;
    let mut mean = vec![0.0; d];
    for row in w.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut cov_err: f64 = 0.0;
    for a in 0..d {
        for b in a..d {
            let c = w
                .chunks(d)
                .map(|row| (row[a] - mean[a]) * (row[b] - mean[b]))
                .sum::<f64>()
                / n as f64;
            let target = if a == b { 1.0 } else { 0.0 };
            cov_err = cov_err.max((c - target).abs());
        }
    }
    let mean_err = mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(cov_err < 1e-6, "covariance deviates from identity by {cov_err:e}");
    ensure!(mean_err < 1e-8, "mean deviates from zero by {mean_err:e}");
    Ok(format!("max |cov − I| = {cov_err:.2e}, max |mean| = {mean_err:.2e}"))
}

fn random_chains(n: usize, seed: u64) -> Result<Vec<MarkerChain>, String> {
    let mut r = common::rng(seed);
    let sampler = ShapeSampler::default();
    (0..n)
        .map(|_| {
            let c = integrate_shape(&sampler.sample(&mut r), N_MARKERS, MARKER_SPACING_MM).map_err(e)?;
            let shift = Point3::new(
                r.gen_range(-20.0..20.0),
                r.gen_range(-20.0..20.0),
                r.gen_range(-20.0..20.0),
            );
            Ok(c.translated(&shift))
        })
        .collect()
}

fn rel_err(orig: &[f64], back: &[f64]) -> f64 {
    let scale = orig.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    orig.iter().zip(back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

// 3
fn round_trips() -> Outcome {
    let n = 1000;
    let mut r = common::rng(3);
    let d = INPUT_LEN;
    let rows: Vec<f64> = (0..n * d)
        .map(|i| r.gen_range(0.0..1.0) + (i % d) as f64 * 0.01)
        .collect();
    let mut report = Vec::new();
    for kind in [InputTransformKind::Zscale1d, InputTransformKind::Whiten] {
        let t = InputTransform::fit(kind, &rows, d).map_err(e)?;
        let back = t.invert(&t.apply(&rows).map_err(e)?).map_err(e)?;
        let worst = rows
            .chunks(d)
            .zip(back.chunks(d))
            .fold(0.0f64, |m, (a, b)| m.max(rel_err(a, b)));
        ensure!(worst < 1e-9, "{kind:?}: relative error {worst:e}");
        report.push(format!("{kind:?} {worst:.1e}"));
    }
    let chains = random_chains(n, 33)?;
    for method in OutputMethod::ALL {
        let t = OutputTransform::fit(method, &chains).map_err(e)?;
        let mut worst: f64 = 0.0;
        for c in &chains {
            let z = t.apply(c).map_err(e)?;
            let back = t.invert(&z, Some(&c.positions[0]), MARKER_SPACING_MM).map_err(e)?;
            worst = worst.max(rel_err(&c.to_flat(), &back.to_flat()));
        }
        ensure!(worst < 1e-9, "{method}: relative error {worst:e}");
        report.push(format!("{method} {worst:.1e}"));
    }
    Ok(format!("{n} samples each: {}", report.join(", ")))
}

// 4
fn geometry() -> Outcome {
    let mut worst_circle: f64 = 0.0;
    for (i, &kappa) in [0.002, 0.0075, 0.0133, 0.02].iter().enumerate() {
        let theta = i as f64 * 1.3;
        let params = ShapeParams::new(vec![Segment {
            arc_length: 300.0,
            curvature: kappa,
            bend_direction: theta,
        }])
        .map_err(e)?;
        let chain = integrate_shape(&params, N_MARKERS, MARKER_SPACING_MM).map_err(e)?;
        // analytic circle: radius 1/κ, centred along the bend direction
        let radius = 1.0 / kappa;
        let center = Point3::new(theta.cos(), theta.sin(), 0.0) * radius;
        for (k, p) in chain.positions.iter().enumerate() {
            let phi = kappa * k as f64 * MARKER_SPACING_MM;
            let expected = center - Point3::new(theta.cos(), theta.sin(), 0.0) * radius * phi.cos()
                + Point3::z() * radius * phi.sin();
            worst_circle = worst_circle.max((p - expected).norm());
        }
    }
    ensure!(
        worst_circle < 1e-9,
        "constant-curvature markers off the circle by {worst_circle:e} mm"
    );

    let straight =
        integrate_shape(&ShapeParams::straight(300.0).map_err(e)?, N_MARKERS, MARKER_SPACING_MM).map_err(e)?;
    for (k, p) in straight.positions.iter().enumerate() {
        ensure!(
            *p == Point3::new(0.0, 0.0, MARKER_SPACING_MM * k as f64),
            "straight marker {k} at {p:?}"
        );
    }
    let zero_curvature = ShapeParams::new(
        (0..5)
            .map(|i| Segment {
                arc_length: 60.0,
                curvature: 0.0,
                bend_direction: i as f64,
            })
            .collect(),
    )
    .map_err(e)?;
    let chain = integrate_shape(&zero_curvature, N_MARKERS, MARKER_SPACING_MM).map_err(e)?;
    ensure!(
        chain.positions.iter().all(|p| p.x == 0.0 && p.y == 0.0),
        "zero curvature left the fiber axis"
    );

    let mut exact = 0;
    let mut worst_trip: f64 = 0.0;
    for c in random_chains(200, 44)? {
        let rel = to_relative(&c);
        let back = from_relative(&rel, &c.positions[0], c.spacing);
        let abs_gap = back
            .positions
            .iter()
            .zip(&c.positions)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        let rel_gap = to_relative(&back)
            .to_flat()
            .iter()
            .zip(rel.to_flat())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        ensure!(
            abs_gap < 1e-12,
            "absolute positions drifted by {abs_gap:e} mm on a round trip"
        );
        ensure!(
            rel_gap < 1e-12,
            "relative coordinates drifted by {rel_gap:e} mm on a round trip"
        );
        worst_trip = worst_trip.max(abs_gap).max(rel_gap);
        exact += 1;
    }
    Ok(format!(
        "circle error {worst_circle:.1e} mm, zero curvature exactly colinear, {exact} relative/absolute round trips within {worst_trip:.1e} mm"
    ))
}

// 5
fn loss_algebra() -> Outcome {
    let mut worst: f64 = 0.0;
    for delta in [0.1f64, 0.5, 1.0, 2.2, 5.0] {
        for sign in [-1.0f64, 1.0] {
            let a = sign * delta;
            let inside = 0.5 * a * a / delta;
            let outside = 0.5 * delta + (a.abs() - delta);
            let at = huber_mod(a, delta).map_err(e)?;
            worst = worst.max((inside - outside).abs()).max((at - inside).abs());
            let eps = 1e-13;
            let below = huber_mod(sign * (delta - eps), delta).map_err(e)?;
            let above = huber_mod(sign * (delta + eps), delta).map_err(e)?;
            worst = worst.max((below - at).abs()).max((above - at).abs());
        }
    }
    ensure!(worst < 1e-12, "huber_mod jumps by {worst:e} at |a| = δ");
    for margin in [0.5, 0.7, 1.0] {
        ensure!(
            contrastive(0.0, 0.0, margin) == 0.0,
            "genuine loss at y_pred = 0 is not 0"
        );
        for y in [margin, margin + 0.1, 1.0_f64.max(margin)] {
            ensure!(
                contrastive(1.0, y, margin) == 0.0,
                "imposter loss at y_pred = {y} ≥ M is not 0"
            );
        }
        ensure!(
            contrastive(1.0, 0.0, margin) == margin * margin,
            "imposter loss at 0 is not M²"
        );
    }
    Ok(format!(
        "huber_mod continuity gap {worst:.1e}; contrastive boundary cases exact"
    ))
}

fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

// 6
fn pair_mining() -> Outcome {
    let n = 500;
    let samples = edgefbg::simulator::generate_samples(n, 6, &GeneratorConfig::default()).map_err(e)?;
    let ds = Dataset::from_samples(&samples).map_err(e)?;
    let chains = ds.chains();
    let total = n * (n - 1) / 2;
    let stream = pairwise_rmse(&chains, total, 1).map_err(e)?;
    ensure!(
        stream.len() == total,
        "{} pairs enumerated, expected {total}",
        stream.len()
    );
    let rmse: Vec<f64> = stream.iter().map(|p| p.rmse).collect();
    let thresholds = compute_thresholds(&rmse, 0.01).map_err(e)?;
    let emitted: BTreeMap<(usize, usize), u8> = label_pairs(&stream, &thresholds)
        .into_iter()
        .map(|p| ((p.a, p.b), p.label))
        .collect();

    // brute force from raw coordinates
    let mut brute_rmse = BTreeMap::new();
    for a in 0..n {
        for b in a + 1..n {
            let (ca, cb) = (ds.coords(a), ds.coords(b));
            let sq: f64 = (0..N_MARKERS)
                .map(|m| {
                    (0..3)
                        .map(|k| (ca[3 * m + k] as f64 - cb[3 * m + k] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            brute_rmse.insert((a, b), (sq / N_MARKERS as f64).sqrt());
        }
    }
    let all: Vec<f64> = brute_rmse.values().copied().collect();
    let (t_low, t_high) = (percentile_oracle(&all, 1.0), percentile_oracle(&all, 25.0));
    let mut mismatches = 0;
    let (mut genuine, mut imposter) = (0, 0);
    for (&(a, b), &r) in &brute_rmse {
        let expected = if r < t_low {
            Some(GENUINE)
        } else if (r - t_high).abs() <= 0.01 * t_high {
            Some(IMPOSTER)
        } else {
            None
        };
        match expected {
            Some(GENUINE) => genuine += 1,
            Some(_) => imposter += 1,
            None => {}
        }
        if emitted.get(&(a, b)).copied() != expected {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} labels differ from the brute-force rule");
    ensure!(
        emitted.len() == genuine + imposter,
        "emitted {} pairs, oracle {}",
        emitted.len(),
        genuine + imposter
    );
    Ok(format!(
        "{total} pairs, t_low {t_low:.3} mm, t_high {t_high:.3} mm, {genuine} genuine / {imposter} imposter, 0 mismatches"
    ))
}

struct Planted {
    target: BTreeMap<String, Value>,
}

impl TrialRunner for Planted {
    fn run(&mut self, trial: &TrialSpec, epochs: usize) -> edgefbg::Result<TrialOutcome> {
        let distance: f64 = self
            .target
            .iter()
            .map(|(k, v)| (trial.config[k].as_f64().unwrap() - v.as_f64().unwrap()).abs())
            .sum();
        Ok(TrialOutcome {
            objective: distance + 1.0 / epochs as f64,
            epochs_trained: epochs,
        })
    }
}

/// Counts epochs the tuner asks for, bracket by bracket.
struct Counter {
    trained: BTreeMap<usize, usize>,
    per_bracket: BTreeMap<usize, usize>,
}

impl TrialRunner for Counter {
    fn run(&mut self, trial: &TrialSpec, epochs: usize) -> edgefbg::Result<TrialOutcome> {
        let done = self.trained.entry(trial.id).or_insert(0);
        let new = epochs - *done;
        *done = epochs;
        *self.per_bracket.entry(trial.bracket).or_insert(0) += new;
        Ok(TrialOutcome {
            objective: trial.config["x"].as_f64().unwrap() + 1.0 / epochs as f64,
            epochs_trained: new,
        })
    }
}

// 7
fn hyperband() -> Outcome {
    let mut summary = Vec::new();
    for (r, eta) in [(9usize, 3usize), (27, 3), (81, 3), (16, 2)] {
        let plan = plan_brackets(r, eta).map_err(e)?;
        let s_max = ((r as f64).ln() / (eta as f64).ln() + 1e-9).floor() as usize;
        ensure!(plan.s_max == s_max, "R={r} η={eta}: s_max {} vs {s_max}", plan.s_max);
        ensure!(
            plan.brackets.len() == s_max + 1,
            "R={r} η={eta}: {} brackets",
            plan.brackets.len()
        );
        let mut total_budget = 0;
        for (bracket, s) in plan.brackets.iter().zip((0..=s_max).rev()) {
            let eta_f = eta as f64;
            let n0 = ((s_max + 1) as f64 * eta_f.powi(s as i32) / (s + 1) as f64 - 1e-9).ceil() as usize;
            let mut budget = 0;
            let mut prev = 0;
            ensure!(
                bracket.rounds.len() == s + 1,
                "R={r} η={eta} s={s}: {} rounds",
                bracket.rounds.len()
            );
            for (i, round) in bracket.rounds.iter().enumerate() {
                let n_i = (n0 as f64 / eta_f.powi(i as i32) + 1e-9).floor() as usize;
                let r_i = ((r as f64 * eta_f.powi(i as i32 - s as i32)) + 1e-9).floor().max(1.0) as usize;
                ensure!(
                    round.n == n_i && round.epochs == r_i,
                    "R={r} η={eta} s={s} round {i}: ({}, {}) vs ({n_i}, {r_i})",
                    round.n,
                    round.epochs
                );
                budget += n_i * (r_i - prev);
                prev = r_i;
            }
            ensure!(
                bracket.epoch_budget() == budget,
                "R={r} η={eta} s={s}: budget {} vs {budget}",
                bracket.epoch_budget()
            );
            total_budget += budget;
        }
        // the tuner spends exactly the planned budget
        let space = SearchSpace::from_json(r#"{"x": {"min": 0, "max": 50, "step": 1}}"#).map_err(e)?;
        let mut counter = Counter {
            trained: BTreeMap::new(),
            per_bracket: BTreeMap::new(),
        };
        let report = Hyperband {
            space,
            max_epochs: r,
            eta,
            seed: 1,
            ledger: None,
        }
        .run(&mut counter)
        .map_err(e)?;
        let spent: usize = counter.per_bracket.values().sum();
        ensure!(
            spent == total_budget,
            "R={r} η={eta}: tuner trained {spent} epochs, plan {total_budget}"
        );
        ensure!(
            report.bracket_epochs.iter().sum::<usize>() == total_budget,
            "R={r} η={eta}: report budget mismatch"
        );
        summary.push(format!("({r},{eta}) {total_budget} epochs"));
    }

    let space =
        SearchSpace::from_json(r#"{"a": {"choice": [0, 1, 2]}, "b": {"min": 0, "max": 2, "step": 1}}"#).map_err(e)?;
    let target: BTreeMap<String, Value> = [("a".to_string(), Value::from(2)), ("b".to_string(), Value::from(1))].into();
    let mut planted = Planted { target: target.clone() };
    let report = Hyperband {
        space,
        max_epochs: 27,
        eta: 3,
        seed: 7,
        ledger: None,
    }
    .run(&mut planted)
    .map_err(e)?;
    let best = &report.ranking[0];
    ensure!(
        best.config == target,
        "best config {:?}, planted {target:?}",
        best.config
    );
    ensure!(
        best.epochs_used == 27,
        "best config trained {} epochs",
        best.epochs_used
    );
    Ok(format!("{}; planted optimum ranked first", summary.join(", ")))
}

// 8
fn architecture() -> Outcome {
    let cfg = ExtractorConfig::fig2();
    ensure!(
        cfg.channels == [176, 120, 48, 96, 48, 232, 224],
        "channels {:?}",
        cfg.channels
    );
    ensure!(cfg.kernel == 10, "kernel {}", cfg.kernel);
    ensure!(
        cfg.pools == [None, Some(2), Some(2), None, Some(2), None, Some(3)],
        "pools {:?}",
        cfg.pools
    );
    ensure!(cfg.feature_dim() == 1344, "feature length {}", cfg.feature_dim());
    let mut model = RegressionModel::<f32>::build(&cfg, 63, 0.0, 0).map_err(e)?;
    let mut tape = Tape::new();
    let x = tape.constant(edgefbg::autodiff::Tensor::zeros(&[2, 3, 125]));
    let y = model.regress(&mut tape, x, Mode::Eval, 0).map_err(e)?;
    ensure!(
        tape.value(y).shape() == [2, 63],
        "output shape {:?}",
        tape.value(y).shape()
    );
    let trainable = model.params().trainable_count();
    ensure!(trainable == 1_084_847, "trainable parameters {trainable}");
    Ok(format!("feature length 1344, {trainable} trainable parameters"))
}

const DESK_SAMPLES: usize = 5000;
const DESK_DATA_SEED: u64 = 2024;
const DESK_RUN_SEED: u64 = 7;
const REGRESSION_EPOCHS: usize = 8;
const SIAMESE_EPOCHS: usize = 8;
const PAIRS_PER_EPOCH: usize = 2048;

struct DeskRun {
    dataset: Vec<u8>,
    regression: TrainRun,
    regression_ckpt: Vec<u8>,
    siamese: TrainRun,
    siamese_ckpt: Vec<u8>,
}

fn desk_configs(dir: &Path) -> (RunConfig, RunConfig) {
    let dataset = dir.join("desk.bin");
    let regression = RunConfig {
        dataset: Some(dataset.clone()),
        seed: DESK_RUN_SEED,
        input_transform: InputTransformKind::Zscale1d,
        output_method: OutputMethod::M4,
        model: ModelKind::Regression,
        optimizer: Some(OptimizerConfig::default()),
        training: TrainConfig {
            max_epochs: REGRESSION_EPOCHS,
            batch_size: 64,
            patience: Some(3),
            max_pairs_per_epoch: None,
        },
        ..Default::default()
    };
    let siamese = RunConfig {
        model: ModelKind::Siamese,
        optimizer: Some(OptimizerConfig::siamese_default()),
        siamese: SiameseSettings {
            pair_budget: 200_000,
            val_pair_budget: 200_000,
            warm_start: Some(dir.join("regression.ckpt")),
            ..Default::default()
        },
        training: TrainConfig {
            max_epochs: SIAMESE_EPOCHS,
            batch_size: 64,
            patience: Some(3),
            max_pairs_per_epoch: Some(PAIRS_PER_EPOCH),
        },
        ..regression.clone()
    };
    (regression, siamese)
}

fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let (reg_cfg, sia_cfg) = desk_configs(dir);
    let data_path = reg_cfg.dataset.clone().unwrap();
    run::generate(DESK_SAMPLES, DESK_DATA_SEED, &GeneratorConfig::default(), &data_path).map_err(e)?;
    let regression = run::train(&reg_cfg).map_err(e)?;
    let reg_path = dir.join("regression.ckpt");
    regression.checkpoint.write(&reg_path).map_err(e)?;
    let siamese = run::train(&sia_cfg).map_err(e)?;
    let sia_path = dir.join("siamese.ckpt");
    siamese.checkpoint.write(&sia_path).map_err(e)?;
    let read = |p: &PathBuf| fs::read(p).map_err(e);
    Ok(DeskRun {
        dataset: read(&data_path)?,
        regression_ckpt: read(&reg_path)?,
        siamese_ckpt: read(&sia_path)?,
        regression,
        siamese,
    })
}

fn median_tip(run: &mut TrainRun) -> Result<f64, String> {
    let test = run.data.splits.test.clone();
    let reports = evaluate_split(&mut run.checkpoint.model, &run.data, &test).map_err(e)?;
    median(&reports.iter().map(|r| r.tip_error).collect::<Vec<_>>()).map_err(e)
}

// 9
fn desk_regression(run: &mut DeskRun) -> Outcome {
    let tip = median_tip(&mut run.regression)?;
    let data = &run.regression.data;
    let baseline = mean_predictor_reports(data, &data.splits.test).map_err(e)?;
    let base_tip = median(&baseline.iter().map(|r| r.tip_error).collect::<Vec<_>>()).map_err(e)?;
    let h = &run.regression.history;
    ensure!(h.epochs.len() <= 100, "{} epochs", h.epochs.len());
    ensure!(
        tip <= 0.5 * base_tip,
        "median test tip error {tip:.2} mm vs mean-predictor {base_tip:.2} mm"
    );
    Ok(format!(
        "median test tip {tip:.2} mm vs mean predictor {base_tip:.2} mm (ratio {:.3}), {} epochs, best {}",
        tip / base_tip,
        h.epochs.len(),
        h.best_epoch
    ))
}

// 10
fn desk_siamese(run: &mut DeskRun) -> Outcome {
    let reg_tip = median_tip(&mut run.regression)?;
    let tip = median_tip(&mut run.siamese)?;
    let pairs = run.siamese.pairs.as_ref().ok_or("no pairs recorded")?;
    let last = run.siamese.history.epochs.last().ok_or("no epochs")?;
    let (g, i) = (
        last.genuine_score.ok_or("no genuine score")?,
        last.imposter_score.ok_or("no imposter score")?,
    );
    ensure!(g < i, "final-epoch validation scores: genuine {g:.4} ≥ imposter {i:.4}");
    ensure!(
        tip <= 1.1 * reg_tip,
        "single-arm median test tip {tip:.2} mm > 1.1 × regression {reg_tip:.2} mm"
    );
    Ok(format!(
        "{} train pairs; final scores genuine {g:.3} < imposter {i:.3}; single-arm tip {tip:.2} mm vs regression {reg_tip:.2} mm (ratio {:.3})",
        pairs.train.len(),
        tip / reg_tip
    ))
}

// 11
fn determinism(first: &DeskRun, dir: &Path) -> Outcome {
    // same config and paths, so every output file is regenerated in place
    let second = desk_run(dir)?;
    ensure!(first.dataset == second.dataset, "dataset bytes differ");
    ensure!(
        first.regression.history.deterministic_part() == second.regression.history.deterministic_part(),
        "regression histories differ"
    );
    ensure!(
        first.siamese.history.deterministic_part() == second.siamese.history.deterministic_part(),
        "Siamese histories differ"
    );
    ensure!(
        first.regression_ckpt == second.regression_ckpt,
        "regression checkpoints differ"
    );
    ensure!(first.siamese_ckpt == second.siamese_ckpt, "Siamese checkpoints differ");
    Ok(format!(
        "dataset {} B, checkpoints {} B and {} B identical; {} + {} history rows identical",
        first.dataset.len(),
        first.regression_ckpt.len(),
        first.siamese_ckpt.len(),
        first.regression.history.epochs.len(),
        first.siamese.history.epochs.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let mut passed = vec![
        run_criterion(1, "gradient suite", gradients),
        run_criterion(2, "whitening", whitening),
        run_criterion(3, "transform round trips", round_trips),
        run_criterion(4, "geometry oracle", geometry),
        run_criterion(5, "loss algebra", loss_algebra),
        run_criterion(6, "pair mining oracle", pair_mining),
        run_criterion(7, "hyperband schedule", hyperband),
        run_criterion(8, "architecture", architecture),
    ];

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    match desk_run(dir.path()) {
        Ok(mut run) => {
            line(&format!(
                "desk-scale training finished in {:.0} s",
                start.elapsed().as_secs_f64()
            ));
            passed.push(run_criterion(9, "desk-scale regression", || desk_regression(&mut run)));
            passed.push(run_criterion(10, "desk-scale Siamese", || desk_siamese(&mut run)));
            passed.push(run_criterion(11, "determinism", || determinism(&run, dir.path())));
        }
        Err(err) => {
            for (id, name) in [
                (9, "desk-scale regression"),
                (10, "desk-scale Siamese"),
                (11, "determinism"),
            ] {
                passed.push(run_criterion(id, name, || Err(format!("training failed: {err}"))));
            }
        }
    }
    let failed: Vec<usize> = passed
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    line(&format!(
        "acceptance: {} of {} criteria passed",
        passed.len() - failed.len(),
        passed.len()
    ));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
