//! Shared helpers for the integration tests: a central finite-difference
//! gradient oracle and small fixtures.

#![allow(dead_code)]

use edgefbg::autodiff::{ParamStore, Tape, Tensor, Var};
use edgefbg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Scalar objective `Σ_i r_i · out_i` with fixed random weights `r`, so every
/// output element gets its own sensitivity.
fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(tape.sum(out));
    }
    let n = tape.value(out).numel();
    let flat = tape.reshape(out, &[1, n])?;
    let w = tape.constant(weights.clone());
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.dense(flat, w, b)?;
    Ok(tape.sum(y))
}

fn objective<F>(f: &F, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let root = project(&mut tape, out, weights)?;
    Ok((tape, vars, root))
}

/// Worst relative error `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)`
/// over all inputs, using central differences of step [`FD_STEP`].
pub fn gradient_error<F>(f: F, inputs: &[Tensor<f64>], seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let width = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).numel()
    };
    let weights = random(&mut rng(seed), &[1, width], -1.0, 1.0);
    let (tape, vars, root) = objective(&f, inputs, &weights)?;
    let mut store = ParamStore::new();
    let grads = tape.backward(root, &mut store)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for i in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[i] += delta;
                let (tape, _, root) = objective(&f, &shifted, &weights)?;
                Ok(tape.value(root).data()[0])
            };
            numeric[i] = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let err = if scale == 0.0 { diff } else { diff / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

pub const INSTANCES: usize = 20;

/// Every differentiable op checked on [`INSTANCES`] random small instances;
/// returns `(op, worst relative error)`.
pub fn gradient_suite() -> Result<Vec<(&'static str, f64)>> {
    use edgefbg::autodiff::Mode;
    use edgefbg::loss::{record_composite, CompositeLossParams, RegressionLoss};

    let mut out = Vec::new();
    let mut worst = |name: &'static str, errs: Vec<f64>| out.push((name, errs.into_iter().fold(0.0, f64::max)));
    let errs =
        |f: &mut dyn FnMut(u64) -> Result<f64>| -> Result<Vec<f64>> { (0..INSTANCES as u64).map(|s| f(s)).collect() };

    worst(
        "conv1d",
        errs(&mut |s| {
            let mut r = rng(s);
            let (b, cin, cout, len, k) = (
                r.gen_range(1..3),
                r.gen_range(1..4),
                r.gen_range(1..4),
                r.gen_range(4..9),
                r.gen_range(1..5),
            );
            let inputs = [
                random(&mut r, &[b, cin, len], -1.0, 1.0),
                random(&mut r, &[cout, cin, k], -1.0, 1.0),
                random(&mut r, &[cout], -1.0, 1.0),
            ];
            gradient_error(|t, v| t.conv1d(v[0], v[1], v[2]), &inputs, s)
        })?,
    );
    worst(
        "batchnorm1d",
        errs(&mut |s| {
            let mut r = rng(100 + s);
            let (b, c, len) = (r.gen_range(2..5), r.gen_range(1..4), r.gen_range(1..5));
            let inputs = [
                random(&mut r, &[b, c, len], -2.0, 2.0),
                random(&mut r, &[c], 0.5, 1.5),
                random(&mut r, &[c], -1.0, 1.0),
            ];
            gradient_error(
                |t, v| {
                    let (mut rm, mut rv) = (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0));
                    t.batchnorm1d(v[0], v[1], v[2], &mut rm, &mut rv, Mode::Train)
                },
                &inputs,
                s,
            )
        })?,
    );
    worst(
        "sigmoid",
        errs(&mut |s| {
            let mut r = rng(200 + s);
            let shape = [r.gen_range(1..4), r.gen_range(1..6)];
            let inputs = [random(&mut r, &shape, -4.0, 4.0)];
            gradient_error(|t, v| Ok(t.sigmoid(v[0])), &inputs, s)
        })?,
    );
    worst(
        "dense",
        errs(&mut |s| {
            let mut r = rng(300 + s);
            let (b, n, m) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..5));
            let inputs = [
                random(&mut r, &[b, n], -1.0, 1.0),
                random(&mut r, &[m, n], -1.0, 1.0),
                random(&mut r, &[m], -1.0, 1.0),
            ];
            gradient_error(|t, v| t.dense(v[0], v[1], v[2]), &inputs, s)
        })?,
    );
    worst(
        "maxpool1d",
        errs(&mut |s| {
            let mut r = rng(400 + s);
            let (b, c, len, p) = (
                r.gen_range(1..3),
                r.gen_range(1..3),
                r.gen_range(2..10),
                r.gen_range(2..4),
            );
            // distinct values spaced well beyond the step keep the argmax stable
            let mut vals: Vec<f64> = (0..b * c * len).map(|i| i as f64 * 0.01).collect();
            for i in (1..vals.len()).rev() {
                vals.swap(i, r.gen_range(0..=i));
            }
            let inputs = [Tensor::new(vec![b, c, len], vals)?];
            gradient_error(|t, v| t.maxpool1d(v[0], p), &inputs, s)
        })?,
    );
    worst(
        "euclid_dist",
        errs(&mut |s| {
            let mut r = rng(500 + s);
            let (b, d) = (r.gen_range(1..4), r.gen_range(1..6));
            let inputs = [random(&mut r, &[b, d], -1.0, 1.0), random(&mut r, &[b, d], -1.0, 1.0)];
            gradient_error(|t, v| t.euclid_dist(v[0], v[1]), &inputs, s)
        })?,
    );
    worst(
        "huber_mod",
        errs(&mut |s| {
            let mut r = rng(600 + s);
            let (b, d) = (r.gen_range(1..4), r.gen_range(1..6));
            let delta = r.gen_range(0.2..2.0);
            let target = random(&mut r, &[b, d], -3.0, 3.0);
            // keep residuals clear of the |a| = δ kink
            let pred = Tensor::from_fn(&[b, d], |i| {
                let mag = if r.gen_bool(0.5) {
                    r.gen_range(0.05..0.9)
                } else {
                    r.gen_range(1.1..2.5)
                } * delta;
                target.data()[i] + if r.gen_bool(0.5) { mag } else { -mag }
            });
            let loss = RegressionLoss::HuberMod { delta };
            gradient_error(|t, v| Ok(loss.record(t, v[0], &target)?.0), &[pred], s)
        })?,
    );
    worst(
        "contrastive",
        errs(&mut |s| {
            let mut r = rng(700 + s);
            let b = r.gen_range(1..6);
            let margin = r.gen_range(0.5..1.0);
            let labels: Vec<f64> = (0..b).map(|_| f64::from(r.gen_range(0..2u8))).collect();
            // keep scores clear of the hinge at the margin
            let pred = Tensor::from_fn(&[b, 1], |_| {
                if r.gen_bool(0.5) {
                    r.gen_range(0.01..0.9) * margin
                } else {
                    r.gen_range(1.05..1.5) * margin
                }
            });
            let zeros = Tensor::zeros(&[b, 1]);
            let params = CompositeLossParams {
                alpha: 1.0,
                margin,
                delta: 1.0,
            };
            gradient_error(
                |t, v| {
                    let ya = t.constant(zeros.clone());
                    let yb = t.constant(zeros.clone());
                    record_composite(t, &labels, v[0], ya, &zeros, yb, &zeros, &params)
                },
                &[pred],
                s,
            )
        })?,
    );
    worst(
        "composite_loss",
        errs(&mut |s| {
            let mut r = rng(800 + s);
            let (b, d) = (r.gen_range(1..5), r.gen_range(1..5));
            let params = CompositeLossParams {
                alpha: r.gen_range(0.1..0.9),
                margin: r.gen_range(0.5..1.0),
                delta: r.gen_range(0.5..3.0),
            };
            let labels: Vec<f64> = (0..b).map(|_| f64::from(r.gen_range(0..2u8))).collect();
            let away = |r: &mut ChaCha8Rng, m: f64| {
                if r.gen_bool(0.5) {
                    r.gen_range(0.01..0.9) * m
                } else {
                    r.gen_range(1.05..1.5) * m
                }
            };
            let pred = Tensor::from_fn(&[b, 1], |_| away(&mut r, params.margin));
            let (ta, tb) = (random(&mut r, &[b, d], -2.0, 2.0), random(&mut r, &[b, d], -2.0, 2.0));
            let shift = |r: &mut ChaCha8Rng, t: &Tensor<f64>| {
                Tensor::from_fn(t.shape(), |i| {
                    let a = away(r, params.delta);
                    t.data()[i] + if r.gen_bool(0.5) { a } else { -a }
                })
            };
            let (ya, yb) = (shift(&mut r, &ta), shift(&mut r, &tb));
            gradient_error(
                |t, v| record_composite(t, &labels, v[0], v[1], &ta, v[2], &tb, &params),
                &[pred, ya, yb],
                s,
            )
        })?,
    );
    Ok(out)
}
