use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_relative, to_relative, MarkerChain, Point3, RelativeChain};

use super::check_finite;

/// Relative eigenvalue floor for the per-marker 3×3 whiteners.
pub const M3_EIG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputMethod {
    /// Per-marker centering, one global radius.
    M1,
    /// Per-marker centering and radius.
    M2,
    /// Per-marker centering and 3-D whitening.
    M3,
    /// Consecutive marker differences.
    M4,
}

impl OutputMethod {
    pub const ALL: [OutputMethod; 4] = [Self::M1, Self::M2, Self::M3, Self::M4];

    /// Length of the network target for a chain of `n_markers`.
    pub fn output_dim(self, n_markers: usize) -> usize {
        match self {
            OutputMethod::M4 => (n_markers - 1) * 3,
            _ => n_markers * 3,
        }
    }
}

impl std::fmt::Display for OutputMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for OutputMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            "M4" => Ok(Self::M4),
            _ => Err(Error::Config(format!("unknown output method {s:?}"))),
        }
    }
}

/// Fitted output rescaling. Marker clouds are the positions of one marker
/// across all training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum OutputTransform {
    M1 {
        mean: Vec<[f64; 3]>,
        radius: f64,
    },
    M2 {
        mean: Vec<[f64; 3]>,
        radii: Vec<f64>,
    },
    M3 {
        mean: Vec<[f64; 3]>,
        /// Row-major `C^{-1/2}` per marker.
        whiten: Vec<[f64; 9]>,
        /// Row-major `C^{1/2}` per marker.
        unwhiten: Vec<[f64; 9]>,
    },
    M4 {
        n_markers: usize,
    },
}

fn cloud_means(chains: &[MarkerChain], n: usize) -> Vec<Point3> {
    let mut mean = vec![Point3::zeros(); n];
    for c in chains {
        for (m, p) in mean.iter_mut().zip(&c.positions) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= chains.len() as f64);
    mean
}

fn mean_radii(chains: &[MarkerChain], mean: &[Point3]) -> Vec<f64> {
    let mut r = vec![0.0; mean.len()];
    for c in chains {
        for ((acc, p), m) in r.iter_mut().zip(&c.positions).zip(mean) {
            *acc += (p - m).norm();
        }
    }
    r.iter_mut().for_each(|v| *v /= chains.len() as f64);
    r
}

fn to_arr(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn mat_to_arr(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = m[(i, j)];
        }
    }
    out
}

fn arr_mul(m: &[f64; 9], v: &Point3) -> Point3 {
    Point3::new(
        m[0] * v.x + m[1] * v.y + m[2] * v.z,
        m[3] * v.x + m[4] * v.y + m[5] * v.z,
        m[6] * v.x + m[7] * v.y + m[8] * v.z,
    )
}

/// `C^{-1/2}` and `C^{1/2}` of a 3×3 covariance; a zero covariance gives the
/// identity pair.
fn sqrt_pair(cov: Matrix3<f64>, marker: usize) -> ([f64; 9], [f64; 9]) {
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        log::warn!("marker {marker}: constant cloud, left unscaled");
        let id = mat_to_arr(&Matrix3::identity());
        return (id, id);
    }
    let floor = M3_EIG_FLOOR * max;
    let d = eig.eigenvalues.map(|v| {
        if v < floor {
            log::warn!("marker {marker}: singular cloud covariance, eigenvalue {v:e} clamped to {floor:e}");
            floor
        } else {
            v
        }
    });
    let u = eig.eigenvectors;
    let inv = u * Matrix3::from_diagonal(&d.map(|v| 1.0 / v.sqrt())) * u.transpose();
    let fwd = u * Matrix3::from_diagonal(&d.map(f64::sqrt)) * u.transpose();
    (mat_to_arr(&inv), mat_to_arr(&fwd))
}

impl OutputTransform {
    /// Fits `method` on the training chains.
    pub fn fit(method: OutputMethod, chains: &[MarkerChain]) -> Result<Self> {
        let first = chains
            .first()
            .ok_or_else(|| Error::Domain("cannot fit output transform on zero samples".into()))?;
        let n = first.len();
        for c in chains {
            if c.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "chains with {} and {} markers",
                    n,
                    c.len()
                )));
            }
            check_finite(&c.to_flat(), "target")?;
        }
        if method == OutputMethod::M4 {
            return Ok(OutputTransform::M4 { n_markers: n });
        }
        let mean = cloud_means(chains, n);
        let mean_arr = mean.iter().map(to_arr).collect();
        match method {
            OutputMethod::M1 => {
                let radius = mean_radii(chains, &mean).iter().sum::<f64>() / n as f64;
                if !(radius > 0.0) {
                    return Err(Error::DegenerateScale("global mean radius is zero".into()));
                }
                Ok(OutputTransform::M1 { mean: mean_arr, radius })
            }
            OutputMethod::M2 => {
                let mut radii = mean_radii(chains, &mean);
                if radii.iter().all(|&r| !(r > 0.0)) {
                    return Err(Error::DegenerateScale("every marker cloud has zero radius".into()));
                }
                for (k, r) in radii.iter_mut().enumerate() {
                    if !(*r > 0.0) {
                        log::warn!("marker {k}: constant cloud, left unscaled");
                        *r = 1.0;
                    }
                }
                Ok(OutputTransform::M2 { mean: mean_arr, radii })
            }
            OutputMethod::M3 => {
                let mut whiten = Vec::with_capacity(n);
                let mut unwhiten = Vec::with_capacity(n);
                let mut all_zero = true;
                for k in 0..n {
                    let mut cov = Matrix3::zeros();
                    for c in chains {
                        let d = c.positions[k] - mean[k];
                        cov += d * d.transpose();
                    }
                    cov /= chains.len() as f64;
                    all_zero &= cov.iter().all(|v| *v == 0.0);
                    let (w, u) = sqrt_pair(cov, k);
                    whiten.push(w);
                    unwhiten.push(u);
                }
                if all_zero {
                    return Err(Error::DegenerateScale("every marker cloud is constant".into()));
                }
                Ok(OutputTransform::M3 {
                    mean: mean_arr,
                    whiten,
                    unwhiten,
                })
            }
            OutputMethod::M4 => unreachable!(),
        }
    }

    pub fn method(&self) -> OutputMethod {
        match self {
            OutputTransform::M1 { .. } => OutputMethod::M1,
            OutputTransform::M2 { .. } => OutputMethod::M2,
            OutputTransform::M3 { .. } => OutputMethod::M3,
            OutputTransform::M4 { .. } => OutputMethod::M4,
        }
    }

    pub fn n_markers(&self) -> usize {
        match self {
            OutputTransform::M1 { mean, .. } | OutputTransform::M2 { mean, .. } | OutputTransform::M3 { mean, .. } => {
                mean.len()
            }
            OutputTransform::M4 { n_markers } => *n_markers,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.method().output_dim(self.n_markers())
    }

    /// Flat network target for `chain`.
    pub fn apply(&self, chain: &MarkerChain) -> Result<Vec<f64>> {
        if chain.len() != self.n_markers() {
            return Err(Error::LengthMismatch(format!(
                "transform fitted for {} markers, chain has {}",
                self.n_markers(),
                chain.len()
            )));
        }
        let centered = |mean: &[[f64; 3]], k: usize| chain.positions[k] - Point3::from(mean[k]);
        let pts: Vec<Point3> = match self {
            OutputTransform::M1 { mean, radius } => (0..mean.len()).map(|k| centered(mean, k) / *radius).collect(),
            OutputTransform::M2 { mean, radii } => (0..mean.len()).map(|k| centered(mean, k) / radii[k]).collect(),
            OutputTransform::M3 { mean, whiten, .. } => (0..mean.len())
                .map(|k| arr_mul(&whiten[k], &centered(mean, k)))
                .collect(),
            OutputTransform::M4 { .. } => return Ok(to_relative(chain).to_flat()),
        };
        Ok(pts.iter().flat_map(to_arr).collect())
    }

    /// Maps a flat network output back to absolute positions. `anchor` (the
    /// first marker) is required for M4 and ignored otherwise.
    pub fn invert(&self, flat: &[f64], anchor: Option<&Point3>, spacing: f64) -> Result<MarkerChain> {
        if flat.len() != self.output_dim() {
            return Err(Error::LengthMismatch(format!(
                "expected {} outputs, got {}",
                self.output_dim(),
                flat.len()
            )));
        }
        let pts = flat.chunks(3).map(|c| Point3::new(c[0], c[1], c[2]));
        let positions: Vec<Point3> = match self {
            OutputTransform::M1 { mean, radius } => {
                pts.zip(mean).map(|(p, m)| p * *radius + Point3::from(*m)).collect()
            }
            OutputTransform::M2 { mean, radii } => pts
                .zip(mean.iter().zip(radii))
                .map(|(p, (m, r))| p * *r + Point3::from(*m))
                .collect(),
            OutputTransform::M3 { mean, unwhiten, .. } => pts
                .zip(mean.iter().zip(unwhiten))
                .map(|(p, (m, u))| arr_mul(u, &p) + Point3::from(*m))
                .collect(),
            OutputTransform::M4 { .. } => {
                let anchor = anchor
                    .ok_or_else(|| Error::Domain("relative-coordinate inversion needs the first marker".into()))?;
                let rel = RelativeChain::from_flat(flat)?;
                return Ok(from_relative(&rel, anchor, spacing));
            }
        };
        MarkerChain::new(positions, spacing)
    }
}
