//! Piecewise-constant-curvature fiber shapes and the marker chains sampled
//! along them.
//!
//! A shape is integrated segment by segment in closed form: each segment is a
//! circular arc in the plane picked out by its bend direction, measured in a
//! parallel-transported (twist-free) frame. The fiber starts at the origin
//! with its tangent along +z.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENSOR_LENGTH_MM: f64 = 300.0;
pub const N_MARKERS: usize = 21;
/// 300 mm over 20 gaps.
pub const MARKER_SPACING_MM: f64 = 15.0;
/// 50 mm minimum bend radius.
pub const DEFAULT_MAX_CURVATURE: f64 = 0.02;

const LENGTH_TOL: f64 = 1e-9;

pub type Point3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// mm, > 0
    pub arc_length: f64,
    /// 1/mm, ≥ 0
    pub curvature: f64,
    /// radians in [0, 2π), measured in the transported frame
    pub bend_direction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    segments: Vec<Segment>,
}

impl ShapeParams {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Domain("shape needs at least one segment".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.arc_length.is_finite() && s.arc_length > 0.0) {
                return Err(Error::Domain(format!(
                    "segment {i}: arc length {} must be positive",
                    s.arc_length
                )));
            }
            if !(s.curvature.is_finite() && s.curvature >= 0.0) {
                return Err(Error::Domain(format!(
                    "segment {i}: curvature {} must be non-negative",
                    s.curvature
                )));
            }
            if !(0.0..TAU).contains(&s.bend_direction) {
                return Err(Error::Domain(format!(
                    "segment {i}: bend direction {} outside [0, 2π)",
                    s.bend_direction
                )));
            }
        }
        Ok(ShapeParams { segments })
    }

    /// A single straight segment.
    pub fn straight(length: f64) -> Result<Self> {
        Self::new(vec![Segment {
            arc_length: length,
            curvature: 0.0,
            bend_direction: 0.0,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.arc_length).sum()
    }

    pub fn max_curvature(&self) -> f64 {
        self.segments.iter().map(|s| s.curvature).fold(0.0, f64::max)
    }

    /// Segment containing arc length `s`; boundaries belong to the earlier
    /// segment, positions past the end to the last one.
    pub fn segment_at(&self, s: f64) -> &Segment {
        let mut end = 0.0;
        for seg in &self.segments {
            end += seg.arc_length;
            if s <= end {
                return seg;
            }
        }
        self.segments.last().expect("non-empty")
    }
}

/// Ordered 3-D marker positions (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerChain {
    pub positions: Vec<Point3>,
    pub spacing: f64,
}

impl MarkerChain {
    pub fn new(positions: Vec<Point3>, spacing: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Domain("marker chain needs at least 2 markers".into()));
        }
        Ok(MarkerChain { positions, spacing })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn tip(&self) -> &Point3 {
        self.positions.last().expect("non-empty chain")
    }

    /// Flat `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[f64], spacing: f64) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::LengthMismatch(format!(
                "flat chain length {} not divisible by 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect(), spacing)
    }

    pub fn translated(&self, offset: &Point3) -> Self {
        MarkerChain {
            positions: self.positions.iter().map(|p| p + offset).collect(),
            spacing: self.spacing,
        }
    }
}

/// Differences between consecutive markers.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeChain {
    pub deltas: Vec<Point3>,
}

impl RelativeChain {
    pub fn to_flat(&self) -> Vec<f64> {
        self.deltas.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 || flat.is_empty() {
            return Err(Error::LengthMismatch(format!(
                "flat relative chain length {}",
                flat.len()
            )));
        }
        Ok(RelativeChain {
            deltas: flat.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect(),
        })
    }
}

/// Displacement and frame rotation after travelling `s` along an arc of
/// curvature `kappa` bending towards `theta`, both in the local frame whose
/// third axis is the tangent.
fn arc_step(kappa: f64, theta: f64, s: f64) -> (Point3, Matrix3<f64>) {
    let phi = kappa * s;
    let normal = Point3::new(theta.cos(), theta.sin(), 0.0);
    let tangent = Point3::z();
    // sin(φ)/κ and (1 − cos φ)/κ, via series near φ = 0
    let (along, across) = if phi.abs() < 1e-6 {
        let p2 = phi * phi;
        (
            s * (1.0 - p2 / 6.0 + p2 * p2 / 120.0),
            s * (phi / 2.0 - phi * p2 / 24.0 + phi * p2 * p2 / 720.0),
        )
    } else {
        (phi.sin() / kappa, (1.0 - phi.cos()) / kappa)
    };
    let delta = tangent * along + normal * across;
    let axis = Unit::new_unchecked(Point3::new(-theta.sin(), theta.cos(), 0.0));
    let rot = Rotation3::from_axis_angle(&axis, phi).into_inner();
    (delta, rot)
}

/// Integrates `params` with the default curvature bound.
pub fn integrate_shape(params: &ShapeParams, n_markers: usize, spacing: f64) -> Result<MarkerChain> {
    integrate_shape_bounded(params, n_markers, spacing, DEFAULT_MAX_CURVATURE)
}

/// Places marker `k` at arc length `k·spacing` along the integrated curve.
pub fn integrate_shape_bounded(
    params: &ShapeParams,
    n_markers: usize,
    spacing: f64,
    max_curvature: f64,
) -> Result<MarkerChain> {
    if n_markers < 2 {
        return Err(Error::Domain(format!("n_markers = {n_markers} < 2")));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Domain(format!("marker spacing {spacing} must be positive")));
    }
    let needed = spacing * (n_markers - 1) as f64;
    let total = params.total_length();
    if needed > total + LENGTH_TOL {
        return Err(Error::LengthMismatch(format!(
            "markers need {needed} mm of fiber, shape has {total} mm"
        )));
    }
    if params.max_curvature() > max_curvature {
        return Err(Error::Domain(format!(
            "curvature {} exceeds bound {max_curvature}",
            params.max_curvature()
        )));
    }

    let mut positions = Vec::with_capacity(n_markers);
    let mut frame = Matrix3::identity();
    let mut origin = Point3::zeros();
    let mut seg_start = 0.0;
    let mut k = 0;
    let n_seg = params.segments.len();
    for (i, seg) in params.segments.iter().enumerate() {
        let seg_end = seg_start + seg.arc_length;
        let last = i + 1 == n_seg;
        while k < n_markers {
            let s = k as f64 * spacing;
            if s > seg_end + LENGTH_TOL && !last {
                break;
            }
            let ds = (s - seg_start).min(seg.arc_length);
            let (dp, _) = arc_step(seg.curvature, seg.bend_direction, ds);
            positions.push(origin + frame * dp);
            k += 1;
        }
        let (dp, rot) = arc_step(seg.curvature, seg.bend_direction, seg.arc_length);
        origin += frame * dp;
        frame *= rot;
        seg_start = seg_end;
    }
    MarkerChain::new(positions, spacing)
}

pub fn to_relative(chain: &MarkerChain) -> RelativeChain {
    RelativeChain {
        deltas: chain.positions.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

pub fn from_relative(rel: &RelativeChain, anchor: &Point3, spacing: f64) -> MarkerChain {
    let mut positions = Vec::with_capacity(rel.deltas.len() + 1);
    let mut p = *anchor;
    positions.push(p);
    for d in &rel.deltas {
        p += d;
        positions.push(p);
    }
    MarkerChain { positions, spacing }
}
