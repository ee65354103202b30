//! Phenomenological edge-FBG spectrum simulator.
//!
//! Each sensing plane carries three co-located edge gratings. Bending with
//! curvature κ towards direction θ raises the reflected amplitude of the
//! grating whose edge faces the bend and lowers the opposite one:
//! `A = A₀·max(0.05, 1 + g·κ·cos(θ − φ))`. The summed Gaussian peaks are
//! multiplied by a wavelength-dependent attenuation envelope and a slow
//! polarization ripple whose phase follows the mean curvature, which
//! entangles the per-plane intensity ratios the way the real sensor does.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    integrate_shape_bounded, MarkerChain, Segment, ShapeParams, MARKER_SPACING_MM, N_MARKERS, SENSOR_LENGTH_MM,
};

pub const N_SPECTRA: usize = 3;
pub const N_WAVELENGTHS: usize = 125;
pub const N_PLANES: usize = 5;
pub const EDGES_PER_PLANE: usize = 3;
pub const WAVELENGTH_START_NM: f64 = 812.0;
pub const WAVELENGTH_END_NM: f64 = 871.0;
/// Flattened network input length, 3 × 125.
pub const INPUT_LEN: usize = N_SPECTRA * N_WAVELENGTHS;

/// Amplitudes never drop below this fraction of `A₀`.
pub const AMPLITUDE_FLOOR: f64 = 0.05;
const RIPPLE_PERIOD_NM: f64 = 20.0;
/// Ripple phase per unit mean curvature (rad·mm).
const RIPPLE_PHASE_GAIN: f64 = 300.0;

/// The 125-point linear wavelength grid in nm.
pub fn wavelength_grid() -> Vec<f64> {
    let step = (WAVELENGTH_END_NM - WAVELENGTH_START_NM) / (N_WAVELENGTHS - 1) as f64;
    (0..N_WAVELENGTHS)
        .map(|i| WAVELENGTH_START_NM + step * i as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorLayout {
    /// Arc length (mm) of each sensing plane.
    pub plane_positions: Vec<f64>,
    /// Bragg wavelengths (nm), plane-major: `3·plane + edge`.
    pub bragg_centers: Vec<f64>,
    /// Angular position (rad) of the left, top and right edge gratings of each plane.
    pub edge_angles: Vec<[f64; EDGES_PER_PLANE]>,
    /// Gaussian σ of each reflection peak (nm).
    pub peak_width: f64,
    /// Straight-fiber peak amplitude `A₀` (a.u.).
    pub peak_amplitude: f64,
    /// Curvature-to-amplitude coupling gain `g` (mm).
    pub coupling_gain: f64,
}

impl Default for SensorLayout {
    fn default() -> Self {
        let plane_len = SENSOR_LENGTH_MM / N_PLANES as f64;
        let n = N_PLANES * EDGES_PER_PLANE;
        let (lo, hi) = (815.0, 868.0);
        SensorLayout {
            plane_positions: (0..N_PLANES).map(|p| plane_len * (p as f64 + 0.5)).collect(),
            bragg_centers: (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
            edge_angles: vec![[PI, FRAC_PI_2, 0.0]; N_PLANES],
            peak_width: 0.8,
            peak_amplitude: 1.0,
            coupling_gain: 30.0,
        }
    }
}

impl SensorLayout {
    pub fn validate(&self) -> Result<()> {
        if self.plane_positions.len() != N_PLANES || self.edge_angles.len() != N_PLANES {
            return Err(Error::Config(format!(
                "layout needs {N_PLANES} planes, got {} positions / {} angle sets",
                self.plane_positions.len(),
                self.edge_angles.len()
            )));
        }
        if self.bragg_centers.len() != N_PLANES * EDGES_PER_PLANE {
            return Err(Error::Config(format!(
                "layout needs {} Bragg centers, got {}",
                N_PLANES * EDGES_PER_PLANE,
                self.bragg_centers.len()
            )));
        }
        if !(self.peak_width > 0.0 && self.peak_amplitude > 0.0 && self.coupling_gain >= 0.0) {
            return Err(Error::Config("peak width/amplitude must be positive, gain ≥ 0".into()));
        }
        for &c in &self.bragg_centers {
            if !(WAVELENGTH_START_NM..=WAVELENGTH_END_NM).contains(&c) {
                return Err(Error::Config(format!("Bragg center {c} nm outside the grid")));
            }
        }
        for w in self.bragg_centers.windows(2) {
            if w[1] - w[0] < 3.0 * self.peak_width {
                return Err(Error::Config(format!(
                    "Bragg centers {} and {} closer than 3 peak widths",
                    w[0], w[1]
                )));
            }
        }
        for &s in &self.plane_positions {
            if !(0.0..=SENSOR_LENGTH_MM).contains(&s) {
                return Err(Error::Config(format!("plane position {s} mm outside the fiber")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// σ of the additive Gaussian intensity noise (a.u.).
    pub additive_sigma: f64,
    /// Relative curvature perturbation between the three consecutive spectra;
    /// bend directions move by `π` times this σ.
    pub temporal_jitter_sigma: f64,
    /// Relative amplitude of the polarization ripple.
    pub polarization_ripple_amp: f64,
    /// Attenuation per (1/mm of mean curvature · nm above 812 nm).
    pub attenuation_coeff: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            additive_sigma: 0.005,
            temporal_jitter_sigma: 0.01,
            polarization_ripple_amp: 0.05,
            attenuation_coeff: 0.2,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            additive_sigma: 0.0,
            temporal_jitter_sigma: 0.0,
            polarization_ripple_amp: 0.0,
            attenuation_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.additive_sigma,
            self.temporal_jitter_sigma,
            self.polarization_ripple_amp,
            self.attenuation_coeff,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise parameters must be finite and ≥ 0".into()));
        }
        if self.polarization_ripple_amp > 1.0 {
            return Err(Error::Config("polarization ripple amplitude must be ≤ 1".into()));
        }
        Ok(())
    }
}

/// Random shape generator: per segment, curvature uniform in
/// `[min_curvature, max_curvature]` and direction uniform in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSampler {
    pub n_segments: usize,
    pub min_curvature: f64,
    pub max_curvature: f64,
}

impl Default for ShapeSampler {
    fn default() -> Self {
        ShapeSampler {
            n_segments: N_PLANES,
            min_curvature: 0.0,
            max_curvature: crate::geometry::DEFAULT_MAX_CURVATURE,
        }
    }
}

impl ShapeSampler {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::Config("sampler needs at least one segment".into()));
        }
        if !(self.min_curvature >= 0.0 && self.max_curvature >= self.min_curvature) {
            return Err(Error::Config(format!(
                "curvature range [{}, {}] invalid",
                self.min_curvature, self.max_curvature
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ShapeParams {
        let len = SENSOR_LENGTH_MM / self.n_segments as f64;
        let segments = (0..self.n_segments)
            .map(|_| {
                let u: f64 = rng.gen();
                let curvature = self.min_curvature + u * (self.max_curvature - self.min_curvature);
                let bend_direction = rng.gen_range(0.0..TAU);
                Segment {
                    arc_length: len,
                    curvature,
                    bend_direction,
                }
            })
            .collect();
        ShapeParams::new(segments).expect("sampler produces valid segments")
    }
}

/// Everything that determines a generated dataset besides `n` and the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub sampler: ShapeSampler,
    pub layout: SensorLayout,
    pub noise: NoiseModel,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.layout.validate()?;
        self.noise.validate()
    }
}

/// Three consecutive spectra (plane-major, 3 × 125) plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSample {
    pub intensities: Vec<f32>,
    pub shape_ref: MarkerChain,
}

/// Peak amplitude of every grating, `3·plane + edge` order.
pub fn peak_amplitudes(shape: &ShapeParams, layout: &SensorLayout) -> Vec<f64> {
    let a0 = layout.peak_amplitude;
    let mut out = Vec::with_capacity(N_PLANES * EDGES_PER_PLANE);
    for (p, &s) in layout.plane_positions.iter().enumerate() {
        let seg = shape.segment_at(s);
        for &phi in &layout.edge_angles[p] {
            let rel = 1.0 + layout.coupling_gain * seg.curvature * (seg.bend_direction - phi).cos();
            out.push(a0 * rel.max(AMPLITUDE_FLOOR));
        }
    }
    out
}

fn mean_plane_curvature(shape: &ShapeParams, layout: &SensorLayout) -> f64 {
    layout
        .plane_positions
        .iter()
        .map(|&s| shape.segment_at(s).curvature)
        .sum::<f64>()
        / layout.plane_positions.len() as f64
}

/// Noise-free spectrum on the wavelength grid for one shape (attenuation and
/// ripple included, no jitter, no additive noise).
pub fn clean_spectrum(shape: &ShapeParams, layout: &SensorLayout, noise: &NoiseModel) -> Vec<f64> {
    let amps = peak_amplitudes(shape, layout);
    let kbar = mean_plane_curvature(shape, layout);
    let two_var = 2.0 * layout.peak_width * layout.peak_width;
    wavelength_grid()
        .into_iter()
        .map(|lambda| {
            let offset = lambda - WAVELENGTH_START_NM;
            let peaks: f64 = amps
                .iter()
                .zip(&layout.bragg_centers)
                .map(|(a, c)| a * (-(lambda - c).powi(2) / two_var).exp())
                .sum();
            let envelope = (-noise.attenuation_coeff * kbar * offset).exp();
            let ripple = 1.0
                + noise.polarization_ripple_amp * (TAU * offset / RIPPLE_PERIOD_NM + RIPPLE_PHASE_GAIN * kbar).sin();
            peaks * envelope * ripple
        })
        .collect()
}

fn jitter(shape: &ShapeParams, sigma: f64, rng: &mut impl Rng) -> ShapeParams {
    if sigma == 0.0 {
        return shape.clone();
    }
    let segments = shape
        .segments()
        .iter()
        .map(|s| {
            let zk: f64 = rng.sample(StandardNormal);
            let zt: f64 = rng.sample(StandardNormal);
            Segment {
                arc_length: s.arc_length,
                curvature: s.curvature * (1.0 + sigma * zk).max(0.0),
                bend_direction: (s.bend_direction + PI * sigma * zt).rem_euclid(TAU),
            }
        })
        .map(|mut s| {
            // rem_euclid can round up to exactly 2π
            if s.bend_direction >= TAU {
                s.bend_direction = 0.0;
            }
            s
        })
        .collect();
    ShapeParams::new(segments).expect("jittered shape stays valid")
}

fn simulate_with_rng(
    shape: &ShapeParams,
    layout: &SensorLayout,
    noise: &NoiseModel,
    max_curvature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SpectrumSample> {
    let shape_ref = integrate_shape_bounded(shape, N_MARKERS, MARKER_SPACING_MM, max_curvature)?;
    let mut intensities = Vec::with_capacity(INPUT_LEN);
    for _ in 0..N_SPECTRA {
        let perturbed = jitter(shape, noise.temporal_jitter_sigma, rng);
        for v in clean_spectrum(&perturbed, layout, noise) {
            let n: f64 = if noise.additive_sigma > 0.0 {
                noise.additive_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            intensities.push((v + n).max(0.0) as f32);
        }
    }
    Ok(SpectrumSample { intensities, shape_ref })
}

/// Simulates the three consecutive spectra for `shape`. Deterministic in
/// `seed`.
pub fn simulate_spectrum(
    shape: &ShapeParams,
    layout: &SensorLayout,
    noise: &NoiseModel,
    seed: u64,
) -> Result<SpectrumSample> {
    layout.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(shape, layout, noise, f64::INFINITY, &mut rng)
}

/// Per-sample RNG: one ChaCha stream per index, so any subset of indices can
/// be regenerated independently and parallel generation matches serial.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates sample `index` of the dataset defined by `(seed, config)`.
pub fn generate_sample(seed: u64, index: u64, config: &GeneratorConfig) -> Result<SpectrumSample> {
    let mut rng = sample_rng(seed, index);
    let shape = config.sampler.sample(&mut rng);
    simulate_with_rng(
        &shape,
        &config.layout,
        &config.noise,
        config.sampler.max_curvature,
        &mut rng,
    )
}

/// Generates `n` samples in index order.
pub fn generate_samples(n: usize, seed: u64, config: &GeneratorConfig) -> Result<Vec<SpectrumSample>> {
    if n == 0 {
        return Err(Error::Config("dataset needs at least one sample".into()));
    }
    config.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_sample(seed, i, config))
        .collect()
}
