//! Domains, surrogate distance functions and uniform samplers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative slack used when deciding whether a point lies in the closure.
const CLOSURE_TOL: f64 = 1e-12;

/// Bounded open domains supported by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// Open ball of radius `radius` centred at the origin of R^dim.
    Ball { dim: usize, radius: f64 },
    /// Open interval (a, b).
    Interval { a: f64, b: f64 },
    /// Open unit disk minus the segment {0} x [0, 1].
    UnitDiskSlit,
}

/// A set of points stored contiguously, `dim` coordinates per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

impl Domain {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Domain::Ball { dim, radius } if dim == 0 || !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "ball needs dim >= 1 and radius > 0 (dim {dim}, radius {radius})"
                )))
            }
            Domain::Interval { a, b } if !(a < b && a.is_finite() && b.is_finite()) => Err(
                Error::InvalidArgument(format!("interval needs a < b (a {a}, b {b})")),
            ),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Domain::Ball { dim, .. } => dim,
            Domain::Interval { .. } => 1,
            Domain::UnitDiskSlit => 2,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match *self {
            Domain::Ball { radius, .. } => norm(x) < radius,
            Domain::Interval { a, b } => a < x[0] && x[0] < b,
            Domain::UnitDiskSlit => norm(x) < 1.0 && !on_slit(x),
        }
    }

    /// Membership in the closure, up to a relative round-off slack.
    pub fn in_closure(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match *self {
            Domain::Ball { radius, .. } => norm(x) <= radius * (1.0 + CLOSURE_TOL),
            Domain::Interval { a, b } => {
                let slack = CLOSURE_TOL * (b - a);
                a - slack <= x[0] && x[0] <= b + slack
            }
            Domain::UnitDiskSlit => norm(x) <= 1.0 + CLOSURE_TOL,
        }
    }

    /// Surrogate distance to the boundary and its gradient.
    ///
    /// All three surrogates coincide with the exact distance. At kinks
    /// (ball centre, equidistant sets) the gradient of one active branch is
    /// returned; at the ball centre the gradient is zero.
    pub fn surrogate_dist_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        if !self.in_closure(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(match *self {
            Domain::Ball { radius, .. } => sphere_branch(x, radius),
            Domain::Interval { a, b } => {
                let (left, right) = (x[0] - a, b - x[0]);
                if left <= right {
                    (left.max(0.0), vec![1.0])
                } else {
                    (right.max(0.0), vec![-1.0])
                }
            }
            Domain::UnitDiskSlit => {
                let (ds, gs) = sphere_branch(x, 1.0);
                let (dl, gl) = slit_branch(x);
                if ds <= dl {
                    (ds, gs)
                } else {
                    (dl, gl)
                }
            }
        })
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        match *self {
            Domain::Ball { dim, radius } => unit_ball_volume(dim) * radius.powi(dim as i32),
            Domain::Interval { a, b } => b - a,
            Domain::UnitDiskSlit => std::f64::consts::PI,
        }
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Domain::Ball { dim, radius } => (vec![-radius; dim], vec![radius; dim]),
            Domain::Interval { a, b } => (vec![a], vec![b]),
            Domain::UnitDiskSlit => (vec![-1.0; 2], vec![1.0; 2]),
        }
    }

    /// `n` i.i.d. uniform points. Every returned point satisfies `contains`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> PointCloud {
        let d = self.dim();
        let mut coords = Vec::with_capacity(n * d);
        let mut x = vec![0.0; d];
        for _ in 0..n {
            loop {
                self.draw(rng, &mut x);
                if self.contains(&x) {
                    break;
                }
            }
            coords.extend_from_slice(&x);
        }
        PointCloud { dim: d, coords }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        match *self {
            Domain::Ball { dim, radius } => {
                let mut nrm = 0.0;
                while nrm == 0.0 {
                    for xi in x.iter_mut() {
                        *xi = rng.sample(StandardNormal);
                    }
                    nrm = norm(x);
                }
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / dim as f64);
                for xi in x.iter_mut() {
                    *xi *= r / nrm;
                }
            }
            Domain::Interval { a, b } => {
                let u: f64 = rng.random();
                x[0] = a + (b - a) * u;
            }
            Domain::UnitDiskSlit => {
                x[0] = rng.random_range(-1.0..1.0);
                x[1] = rng.random_range(-1.0..1.0);
            }
        }
    }
}

fn on_slit(x: &[f64]) -> bool {
    x[0] == 0.0 && (0.0..=1.0).contains(&x[1])
}

fn sphere_branch(x: &[f64], radius: f64) -> (f64, Vec<f64>) {
    let r = norm(x);
    let grad = if r > 0.0 {
        x.iter().map(|xi| -xi / r).collect()
    } else {
        vec![0.0; x.len()]
    };
    ((radius - r).max(0.0), grad)
}

/// Distance to the segment {0} x [0, 1] and its gradient.
fn slit_branch(x: &[f64]) -> (f64, Vec<f64>) {
    let t = x[1].clamp(0.0, 1.0);
    let diff = [x[0], x[1] - t];
    let dist = norm(&diff);
    if dist > 0.0 {
        (dist, vec![diff[0] / dist, diff[1] / dist])
    } else {
        (0.0, vec![0.0, 0.0])
    }
}

/// Volume of the unit ball in R^d, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half + 1.0)
}

/// Surface area of the unit sphere S^(d-1) in R^d, `2 pi^(d/2) / Gamma(d/2)`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
