//! Regression losses, the contrastive term and the composite Siamese loss.
//!
//! Every loss is reduced per sample first (over the coordinate axis) and then
//! averaged over the batch. The tape versions record one `row_map` node per
//! loss with the analytic per-element derivatives.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const MSLE_EPS: f64 = 1e-7;
pub const COSINE_EPS: f64 = 1e-12;
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Modified Huber: `a²/(2δ)` inside the knee, `δ/2 + |a| − δ` outside.
pub fn huber_mod(a: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(huber_mod_unchecked(a, delta))
}

/// Derivative of [`huber_mod`] with respect to `a`.
pub fn huber_mod_grad(a: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(huber_mod_grad_unchecked(a, delta))
}

fn huber_mod_unchecked(a: f64, delta: f64) -> f64 {
    if a.abs() <= delta {
        0.5 * a * a / delta
    } else {
        0.5 * delta + (a.abs() - delta)
    }
}

fn huber_mod_grad_unchecked(a: f64, delta: f64) -> f64 {
    if a.abs() <= delta {
        a / delta
    } else {
        a.signum()
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Huber threshold must be positive, got {delta}")))
    }
}

/// `(1 − y)·p² + y·max(0, M − p)²`; label 0 marks a genuine pair.
pub fn contrastive(y_true: f64, y_pred: f64, margin: f64) -> f64 {
    let hinge = (margin - y_pred).max(0.0);
    (1.0 - y_true) * y_pred * y_pred + y_true * hinge * hinge
}

pub fn contrastive_grad(y_true: f64, y_pred: f64, margin: f64) -> f64 {
    let hinge = (margin - y_pred).max(0.0);
    2.0 * (1.0 - y_true) * y_pred - 2.0 * y_true * hinge
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeLossParams {
    pub alpha: f64,
    pub margin: f64,
    pub delta: f64,
}

impl Default for CompositeLossParams {
    fn default() -> Self {
        CompositeLossParams {
            alpha: 0.7,
            margin: 0.5,
            delta: 2.2,
        }
    }
}

impl CompositeLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        check_delta(self.delta).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Standard regression losses of the tuning space, plus the modified Huber.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionLoss {
    Mae,
    Mse,
    Msle,
    Huber {
        #[serde(default = "default_huber_delta")]
        delta: f64,
    },
    Mape,
    CosineSimilarity,
    HuberMod {
        delta: f64,
    },
}

fn default_huber_delta() -> f64 {
    DEFAULT_HUBER_DELTA
}

impl FromStr for RegressionLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "mae" | "mean_absolute_error" => Self::Mae,
            "mse" | "mean_squared_error" => Self::Mse,
            "msle" | "mean_squared_logarithmic_error" => Self::Msle,
            "huber" | "huber_loss" => Self::Huber {
                delta: DEFAULT_HUBER_DELTA,
            },
            "mape" | "mean_absolute_percentage_error" => Self::Mape,
            "cosine" | "cosine_similarity" => Self::CosineSimilarity,
            _ => return Err(Error::Config(format!("unknown loss {s:?}"))),
        })
    }
}

/// Value and per-element gradient of one sample's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Elements left out of the reduction (MAPE with zero target).
    pub excluded: usize,
}

impl RegressionLoss {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Huber { delta } | Self::HuberMod { delta } => check_delta(*delta),
            _ => Ok(()),
        }
    }

    /// Loss of a single sample, reduced over its coordinates.
    pub fn row(&self, pred: &[f64], target: &[f64]) -> Result<RowLoss> {
        if pred.len() != target.len() || pred.is_empty() {
            return Err(Error::shape("loss", &[pred.len()], &[target.len()]));
        }
        self.validate()?;
        let n = pred.len() as f64;
        let mut grad = vec![0.0; pred.len()];
        let mut value = 0.0;
        let mut excluded = 0;
        match *self {
            Self::Mae => {
                for (i, (p, y)) in pred.iter().zip(target).enumerate() {
                    value += (p - y).abs();
                    grad[i] = (p - y).signum() / n;
                }
                value /= n;
            }
            Self::Mse => {
                for (i, (p, y)) in pred.iter().zip(target).enumerate() {
                    value += (p - y) * (p - y);
                    grad[i] = 2.0 * (p - y) / n;
                }
                value /= n;
            }
            Self::Msle => {
                for (i, (p, y)) in pred.iter().zip(target).enumerate() {
                    let d = p.max(MSLE_EPS).ln_1p() - y.max(MSLE_EPS).ln_1p();
                    value += d * d;
                    if *p > MSLE_EPS {
                        grad[i] = 2.0 * d / (1.0 + p) / n;
                    }
                }
                value /= n;
            }
            Self::Huber { delta } => {
                for (i, (p, y)) in pred.iter().zip(target).enumerate() {
                    let a = p - y;
                    if a.abs() <= delta {
                        value += 0.5 * a * a;
                        grad[i] = a / n;
                    } else {
                        value += delta * (a.abs() - 0.5 * delta);
                        grad[i] = delta * a.signum() / n;
                    }
                }
                value /= n;
            }
            Self::HuberMod { delta } => {
                for (i, (p, y)) in pred.iter().zip(target).enumerate() {
                    value += huber_mod_unchecked(p - y, delta);
                    grad[i] = huber_mod_grad_unchecked(p - y, delta) / n;
                }
                value /= n;
            }
            Self::Mape => {
                let kept: Vec<usize> = (0..pred.len()).filter(|&i| target[i] != 0.0).collect();
                excluded = pred.len() - kept.len();
                let m = kept.len() as f64;
                for &i in &kept {
                    let a = pred[i] - target[i];
                    value += 100.0 * a.abs() / target[i].abs();
                    grad[i] = 100.0 * a.signum() / target[i].abs() / m;
                }
                if !kept.is_empty() {
                    value /= m;
                }
            }
            Self::CosineSimilarity => {
                let py: f64 = pred.iter().zip(target).map(|(p, y)| p * y).sum();
                let pp: f64 = pred.iter().map(|p| p * p).sum();
                let yy: f64 = target.iter().map(|y| y * y).sum();
                let np = pp.max(COSINE_EPS).sqrt();
                let ny = yy.max(COSINE_EPS).sqrt();
                value = -py / (np * ny);
                for i in 0..pred.len() {
                    let mut g = target[i] / (np * ny);
                    if pp > COSINE_EPS {
                        g -= py / (ny * np * np * np) * pred[i];
                    }
                    grad[i] = -g;
                }
            }
        }
        Ok(RowLoss { value, grad, excluded })
    }

    /// Batch-mean loss of `pred` ([B, D]) against constant `target`. Returns
    /// the scalar node and the number of excluded elements.
    pub fn record<T: Real>(&self, tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<(Var, usize)> {
        let pv = tape.value(pred);
        if pv.shape() != target.shape() || pv.ndim() != 2 {
            return Err(Error::shape("loss", pv.shape(), target.shape()));
        }
        let (b, d) = (pv.dim(0), pv.dim(1));
        let mut values = Vec::with_capacity(b);
        let mut jac = Vec::with_capacity(b * d);
        let mut excluded = 0;
        for (p, y) in pv.data().chunks(d).zip(target.data().chunks(d)) {
            let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
            let y: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
            let r = self.row(&p, &y)?;
            values.push(T::lit(r.value));
            jac.extend(r.grad.into_iter().map(T::lit));
            excluded += r.excluded;
        }
        if excluded > 0 {
            log::warn!("mape: {excluded} zero-target elements excluded");
        }
        let rows = tape.row_map(pred, vec![b], values, jac)?;
        Ok((tape.mean(rows), excluded))
    }
}

/// Plain evaluation of the composite loss. `y_a`/`y_b` are predictions,
/// `t_a`/`t_b` their targets, all row-major with `dim` values per sample.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    y_true: &[f64],
    y_pred: &[f64],
    t_a: &[f64],
    y_a: &[f64],
    t_b: &[f64],
    y_b: &[f64],
    dim: usize,
    params: &CompositeLossParams,
) -> Result<f64> {
    let b = y_true.len();
    if y_pred.len() != b || dim == 0 {
        return Err(Error::shape("composite_loss", &[b], &[y_pred.len()]));
    }
    for (p, t) in [(y_a, t_a), (y_b, t_b)] {
        if p.len() != t.len() || p.len() != b * dim {
            return Err(Error::shape("composite_loss", &[p.len()], &[t.len()]));
        }
    }
    params.validate()?;
    let h = RegressionLoss::HuberMod { delta: params.delta };
    let mut total = 0.0;
    for i in 0..b {
        let r = i * dim..(i + 1) * dim;
        let c = contrastive(y_true[i], y_pred[i], params.margin);
        let ha = h.row(&y_a[r.clone()], &t_a[r.clone()])?.value;
        let hb = h.row(&y_b[r.clone()], &t_b[r])?.value;
        total += params.alpha * c + (1.0 - params.alpha) * (ha + hb);
    }
    Ok(total / b as f64)
}

/// Tape version of [`composite_loss`]. `y_pred` is [B, 1], `y_a`/`y_b` are
/// [B, D] and `labels` holds one 0/1 label per pair.
#[allow(clippy::too_many_arguments)]
pub fn record_composite<T: Real>(
    tape: &mut Tape<T>,
    labels: &[f64],
    y_pred: Var,
    y_a: Var,
    t_a: &Tensor<T>,
    y_b: Var,
    t_b: &Tensor<T>,
    params: &CompositeLossParams,
) -> Result<Var> {
    params.validate()?;
    let pv = tape.value(y_pred);
    let b = labels.len();
    if pv.numel() != b || pv.shape()[0] != b {
        return Err(Error::shape("composite_loss", pv.shape(), &[b, 1]));
    }
    let mut values = Vec::with_capacity(b);
    let mut jac = Vec::with_capacity(b);
    for (p, &y) in pv.data().iter().zip(labels) {
        let p = p.as_f64();
        values.push(T::lit(contrastive(y, p, params.margin)));
        jac.push(T::lit(contrastive_grad(y, p, params.margin)));
    }
    let c = tape.row_map(y_pred, vec![b], values, jac)?;
    let c = tape.scale(c, T::lit(params.alpha));
    let h = RegressionLoss::HuberMod { delta: params.delta };
    let ha = row_losses(tape, &h, y_a, t_a)?;
    let hb = row_losses(tape, &h, y_b, t_b)?;
    let hs = tape.add(ha, hb)?;
    let hs = tape.scale(hs, T::lit(1.0 - params.alpha));
    let total = tape.add(c, hs)?;
    Ok(tape.mean(total))
}

fn row_losses<T: Real>(tape: &mut Tape<T>, loss: &RegressionLoss, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let pv = tape.value(pred);
    if pv.shape() != target.shape() || pv.ndim() != 2 {
        return Err(Error::shape("loss", pv.shape(), target.shape()));
    }
    let (b, d) = (pv.dim(0), pv.dim(1));
    let mut values = Vec::with_capacity(b);
    let mut jac = Vec::with_capacity(b * d);
    for (p, y) in pv.data().chunks(d).zip(target.data().chunks(d)) {
        let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
        let r = loss.row(&p, &y)?;
        values.push(T::lit(r.value));
        jac.extend(r.grad.into_iter().map(T::lit));
    }
    tape.row_map(pred, vec![b], values, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn huber_mod_values() {
        assert_eq!(huber_mod(0.0, 2.2).unwrap(), 0.0);
        assert_abs_diff_eq!(huber_mod(3.0, 2.2).unwrap(), 1.9, epsilon = 1e-12);
        assert_abs_diff_eq!(huber_mod(-3.0, 2.2).unwrap(), 1.9, epsilon = 1e-12);
        assert!(matches!(huber_mod(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn huber_mod_knee_is_smooth() {
        let d = 2.2;
        let inside = 0.5 * d * d / d;
        let outside = 0.5 * d + (d - d);
        assert_abs_diff_eq!(huber_mod(d, d).unwrap(), inside, epsilon = 1e-15);
        assert_abs_diff_eq!(inside, outside, epsilon = 1e-15);
        let h = 1e-7;
        let left = (huber_mod(d, d).unwrap() - huber_mod(d - h, d).unwrap()) / h;
        let right = (huber_mod(d + h, d).unwrap() - huber_mod(d, d).unwrap()) / h;
        assert_abs_diff_eq!(left, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(right, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn contrastive_values() {
        assert_eq!(contrastive(0.0, 0.0, 0.5), 0.0);
        assert_eq!(contrastive(1.0, 0.6, 0.5), 0.0);
        assert_abs_diff_eq!(contrastive(1.0, 0.2, 0.5), 0.09, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_gradient_signs() {
        for p in [0.01, 0.3, 0.9] {
            assert!(contrastive_grad(0.0, p, 0.5) >= 0.0);
        }
        for p in [0.01, 0.3, 0.49] {
            assert!(contrastive_grad(1.0, p, 0.5) < 0.0);
        }
    }

    #[test]
    fn composite_boundaries() {
        let labels = [0.0, 1.0];
        let pred = [0.3, 0.2];
        let ta = [0.0, 1.0, 2.0, 3.0];
        let ya = [0.5, 1.0, 5.0, 3.0];
        let tb = [1.0, 1.0, 1.0, 1.0];
        let yb = [1.0, -3.0, 1.0, 1.0];
        let pure_c = (contrastive(0.0, 0.3, 0.5) + contrastive(1.0, 0.2, 0.5)) / 2.0;
        let p1 = CompositeLossParams {
            alpha: 1.0,
            ..Default::default()
        };
        assert_abs_diff_eq!(
            composite_loss(&labels, &pred, &ta, &ya, &tb, &yb, 2, &p1).unwrap(),
            pure_c,
            epsilon = 1e-12
        );
        let p0 = CompositeLossParams {
            alpha: 0.0,
            ..Default::default()
        };
        let h = |a: f64| huber_mod(a, 2.2).unwrap();
        let expect = ((h(0.5) + h(0.0)) / 2.0 + 0.0 + (h(3.0) + h(0.0)) / 2.0 + (h(0.0) + h(4.0)) / 2.0) / 2.0;
        assert_abs_diff_eq!(
            composite_loss(&labels, &pred, &ta, &ya, &tb, &yb, 2, &p0).unwrap(),
            expect,
            epsilon = 1e-12
        );
        let perfect = composite_loss(
            &[0.0],
            &[0.0],
            &ta[..2],
            &ta[..2],
            &tb[..2],
            &tb[..2],
            2,
            &Default::default(),
        );
        assert_eq!(perfect.unwrap(), 0.0);
    }

    #[test]
    fn standard_loss_values() {
        let r = |l: RegressionLoss, p: &[f64], y: &[f64]| l.row(p, y).unwrap();
        assert_eq!(r(RegressionLoss::Mse, &[1.0, 2.0], &[1.0, 2.0]).value, 0.0);
        assert_eq!(r(RegressionLoss::Mae, &[0.0], &[2.0]).value, 2.0);
        assert_abs_diff_eq!(
            r(RegressionLoss::CosineSimilarity, &[1.0, 2.0], &[1.0, 2.0]).value,
            -1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            r(RegressionLoss::Huber { delta: 1.0 }, &[0.0, 0.0], &[0.5, 3.0]).value,
            (0.125 + 2.5) / 2.0,
            epsilon = 1e-12
        );
        let mape = r(RegressionLoss::Mape, &[1.0, 5.0], &[2.0, 0.0]);
        assert_eq!((mape.value, mape.excluded), (50.0, 1));
        let msle = r(RegressionLoss::Msle, &[0.0], &[(1.0f64).exp() - 1.0]);
        assert_abs_diff_eq!(msle.value, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn row_gradients_match_finite_differences() {
        let p = [0.3, -1.7, 2.5, 0.9];
        let y = [0.1, 0.4, -2.0, 1.3];
        let losses = [
            RegressionLoss::Mae,
            RegressionLoss::Mse,
            RegressionLoss::Msle,
            RegressionLoss::Huber { delta: 1.0 },
            RegressionLoss::HuberMod { delta: 2.2 },
            RegressionLoss::Mape,
            RegressionLoss::CosineSimilarity,
        ];
        let h = 1e-6;
        for l in losses {
            let g = l.row(&p, &y).unwrap().grad;
            for i in 0..p.len() {
                let mut hi = p;
                let mut lo = p;
                hi[i] += h;
                lo[i] -= h;
                let fd = (l.row(&hi, &y).unwrap().value - l.row(&lo, &y).unwrap().value) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5, "{l:?}[{i}]: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn parse_loss_names() {
        assert_eq!(
            "mean squared error".parse::<RegressionLoss>().unwrap(),
            RegressionLoss::Mse
        );
        assert_eq!(
            "cosine_similarity".parse::<RegressionLoss>().unwrap(),
            RegressionLoss::CosineSimilarity
        );
        assert!("hinge".parse::<RegressionLoss>().is_err());
        let l: RegressionLoss = serde_json::from_str(r#"{"name":"huber"}"#).unwrap();
        assert_eq!(l, RegressionLoss::Huber { delta: 1.0 });
    }
}
