use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::matmul;
use crate::error::{Error, Result};

use super::check_finite;

/// Relative eigenvalue floor: eigenvalues below `WHITEN_EIG_FLOOR · λ_max`
/// are raised to it.
pub const WHITEN_EIG_FLOOR: f64 = 1e-10;

/// Standard scaling of the input seen as one flat vector of values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScale1dParams {
    pub mu: f64,
    pub sigma: f64,
}

impl ZScale1dParams {
    /// Fits on `rows` (row-major, `dim` values per sample). All values are
    /// pooled, so a single nonconstant sample is enough.
    pub fn fit(rows: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 || rows.len() < 2 {
            return Err(Error::Domain("z-scaling needs at least 2 values".into()));
        }
        check_finite(rows, "input")?;
        let n = rows.len() as f64;
        let mu = rows.iter().sum::<f64>() / n;
        let var = rows.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let sigma = var.sqrt();
        if !(sigma > 0.0) || sigma < mu.abs() * 1e-12 {
            return Err(Error::DegenerateScale("constant input data".into()));
        }
        Ok(ZScale1dParams { mu, sigma })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sigma + self.mu
    }
}

/// `Z = U D^{-1/2} Uᵀ (X − μ)` with the eigendecomposition `U D Uᵀ` of the
/// training covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "WhitenStored", into = "WhitenStored")]
pub struct WhitenParams {
    dim: usize,
    mu: Vec<f64>,
    /// Column `j` of the row-major `dim×dim` matrix is eigenvector `j`.
    eigvecs: Vec<f64>,
    /// Clamped eigenvalues, ascending.
    eigvals: Vec<f64>,
    whiten: Vec<f64>,
    unwhiten: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WhitenStored {
    dim: usize,
    mu: Vec<f64>,
    eigvecs: Vec<f64>,
    eigvals: Vec<f64>,
}

impl From<WhitenStored> for WhitenParams {
    fn from(s: WhitenStored) -> Self {
        WhitenParams::assemble(s.dim, s.mu, s.eigvecs, s.eigvals)
    }
}

impl From<WhitenParams> for WhitenStored {
    fn from(p: WhitenParams) -> Self {
        WhitenStored {
            dim: p.dim,
            mu: p.mu,
            eigvecs: p.eigvecs,
            eigvals: p.eigvals,
        }
    }
}

impl WhitenParams {
    fn assemble(dim: usize, mu: Vec<f64>, eigvecs: Vec<f64>, eigvals: Vec<f64>) -> Self {
        let build = |f: &dyn Fn(f64) -> f64| {
            let mut scaled = eigvecs.clone();
            for i in 0..dim {
                for j in 0..dim {
                    scaled[i * dim + j] *= f(eigvals[j]);
                }
            }
            // (U·f(D))·Uᵀ
            let mut m = vec![0.0; dim * dim];
            matmul(dim, dim, dim, &scaled, false, &eigvecs, true, &mut m, false);
            m
        };
        let whiten = build(&|d| 1.0 / d.sqrt());
        let unwhiten = build(&|d| d.sqrt());
        WhitenParams {
            dim,
            mu,
            eigvecs,
            eigvals,
            whiten,
            unwhiten,
        }
    }

    pub fn fit(rows: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 || rows.len() / dim < 2 {
            return Err(Error::Domain("whitening needs at least 2 samples".into()));
        }
        check_finite(rows, "input")?;
        let n = rows.len() / dim;
        if n <= dim {
            log::warn!(
                "whitening {dim}-dim data from {n} samples: covariance is rank deficient, small eigenvalues will be clamped"
            );
        }
        let mut mu = vec![0.0; dim];
        for r in rows.chunks(dim) {
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let centered: Vec<f64> = rows
            .chunks(dim)
            .flat_map(|r| r.iter().zip(&mu).map(|(v, m)| v - m))
            .collect();
        let mut cov = vec![0.0; dim * dim];
        matmul(dim, n, dim, &centered, true, &centered, false, &mut cov, false);
        cov.iter_mut().for_each(|c| *c /= n as f64);
        // exact symmetry before the eigensolver
        for i in 0..dim {
            for j in 0..i {
                let s = 0.5 * (cov[i * dim + j] + cov[j * dim + i]);
                cov[i * dim + j] = s;
                cov[j * dim + i] = s;
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &cov));
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let max = eig.eigenvalues.max();
        if !(max > 0.0) {
            return Err(Error::DegenerateScale("input covariance is zero".into()));
        }
        let floor = WHITEN_EIG_FLOOR * max;
        let mut clamped = 0;
        let eigvals: Vec<f64> = order
            .iter()
            .map(|&j| {
                let d = eig.eigenvalues[j];
                if d < floor {
                    clamped += 1;
                    floor
                } else {
                    d
                }
            })
            .collect();
        if clamped > 0 {
            log::warn!("whitening: clamped {clamped} of {dim} eigenvalues to {floor:e}");
        }
        let mut eigvecs = vec![0.0; dim * dim];
        for i in 0..dim {
            for (jj, &j) in order.iter().enumerate() {
                eigvecs[i * dim + jj] = eig.eigenvectors[(i, j)];
            }
        }
        Ok(Self::assemble(dim, mu, eigvecs, eigvals))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    /// Row-major eigenvector matrix (eigenvectors in columns).
    pub fn eigenvectors(&self) -> &[f64] {
        &self.eigvecs
    }

    /// Whitens every `dim`-long row of `rows`.
    pub fn apply(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        let n = rows.len() / self.dim;
        let centered: Vec<f64> = rows
            .chunks(self.dim)
            .flat_map(|r| r.iter().zip(&self.mu).map(|(v, m)| v - m))
            .collect();
        let mut out = vec![0.0; rows.len()];
        // rows · Wᵀ, W symmetric
        matmul(
            n,
            self.dim,
            self.dim,
            &centered,
            false,
            &self.whiten,
            true,
            &mut out,
            false,
        );
        Ok(out)
    }

    pub fn invert(&self, rows: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        let n = rows.len() / self.dim;
        let mut out = vec![0.0; rows.len()];
        matmul(
            n,
            self.dim,
            self.dim,
            rows,
            false,
            &self.unwhiten,
            true,
            &mut out,
            false,
        );
        for r in out.chunks_mut(self.dim) {
            for (v, m) in r.iter_mut().zip(&self.mu) {
                *v += m;
            }
        }
        Ok(out)
    }

    fn check_rows(&self, rows: &[f64]) -> Result<()> {
        if rows.len() % self.dim != 0 {
            return Err(Error::shape("whiten", &[rows.len()], &[self.dim]));
        }
        check_finite(rows, "input")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputTransformKind {
    Zscale1d,
    Whiten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputTransform {
    Zscale1d(ZScale1dParams),
    Whiten(WhitenParams),
}

impl InputTransform {
    pub fn fit(kind: InputTransformKind, rows: &[f64], dim: usize) -> Result<Self> {
        Ok(match kind {
            InputTransformKind::Zscale1d => InputTransform::Zscale1d(ZScale1dParams::fit(rows, dim)?),
            InputTransformKind::Whiten => InputTransform::Whiten(WhitenParams::fit(rows, dim)?),
        })
    }

    pub fn kind(&self) -> InputTransformKind {
        match self {
            InputTransform::Zscale1d(_) => InputTransformKind::Zscale1d,
            InputTransform::Whiten(_) => InputTransformKind::Whiten,
        }
    }

    pub fn apply(&self, rows: &[f64]) -> Result<Vec<f64>> {
        match self {
            InputTransform::Zscale1d(p) => {
                check_finite(rows, "input")?;
                Ok(rows.iter().map(|&v| p.apply(v)).collect())
            }
            InputTransform::Whiten(p) => p.apply(rows),
        }
    }

    pub fn invert(&self, rows: &[f64]) -> Result<Vec<f64>> {
        match self {
            InputTransform::Zscale1d(p) => Ok(rows.iter().map(|&v| p.invert(v)).collect()),
            InputTransform::Whiten(p) => p.invert(rows),
        }
    }
}
