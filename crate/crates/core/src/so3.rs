//! Rotation algebra, equivolumetric SO(3) grids and grid-normalized densities.
//!
//! Grids follow the Hopf-fibration construction: an equal-area HEALPix
//! partition of the sphere crossed with a uniform partition of the circle
//! fiber. The base layer has 12 × 6 = 72 cells and every refinement level
//! multiplies the count by 8, so each cell has Haar volume π²/M.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rotation = Rotation3<f64>;
pub type RigidTransform = Isometry3<f64>;

/// Cells in the level-0 grid.
pub const BASE_CELLS: usize = 72;
/// Largest refinement level accepted by [`So3Grid::new`] (2.4M cells).
pub const MAX_LEVEL: u32 = 5;

/// Rotation about the z axis.
pub fn rot_z(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Exponential map from an axis-angle 3-vector.
pub fn exp_map(v: &Vector3<f64>) -> Rotation {
    Rotation::new(*v)
}

/// Geodesic distance on SO(3), in radians within `[0, π]`.
///
/// Equal to `acos(0.5 (trace(a bᵀ) − 1))`; evaluated through `atan2` of the
/// skew and symmetric parts so that tiny angles keep full precision.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.matrix() * b.matrix().transpose();
    let cos = 0.5 * (m.trace() - 1.0);
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * skew.norm();
    sin.atan2(cos).clamp(0.0, PI)
}

/// Projects an arbitrary 3×3 matrix onto SO(3) (orthogonal polar factor with
/// determinant correction). Fails when the matrix has rank below 2.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    let svd = m.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let scale = sv[0].max(f64::MIN_POSITIVE);
    if sv[1] <= 1e-10 * scale || sv[0] <= 1e-300 {
        return Err(Error::Degenerate(format!(
            "mean rotation matrix has rank < 2 (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    // The smallest singular value's column takes the sign correction.
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let mut diag = Matrix3::identity();
    diag[(imin, imin)] = d;
    Ok(Rotation::from_matrix_unchecked(u * diag * v_t))
}

/// Chordal L2 mean: `argmin_R Σ ‖R − Rᵢ‖²_F`.
pub fn chordal_mean(rotations: &[Rotation]) -> Result<Rotation> {
    if rotations.is_empty() {
        return Err(Error::InvalidInput("chordal mean of an empty set".into()));
    }
    let sum = rotations.iter().fold(Matrix3::zeros(), |acc, r| acc + r.matrix());
    project_to_so3(&(sum / rotations.len() as f64))
}

/// Root-mean-square geodesic angle to the chordal mean, in degrees.
pub fn rotation_std(rotations: &[Rotation]) -> Result<f64> {
    let mean = chordal_mean(rotations)?;
    let ms = rotations
        .iter()
        .map(|r| geodesic_angle(r, &mean).powi(2))
        .sum::<f64>()
        / rotations.len() as f64;
    Ok(ms.sqrt().to_degrees())
}

/// Centers of the HEALPix ring-scheme pixels for a given `nside`, as
/// (polar angle θ, azimuth φ).
fn healpix_centers(nside: usize) -> Vec<(f64, f64)> {
    let npix = 12 * nside * nside;
    let ncap = 2 * nside * (nside - 1);
    let ns = nside as f64;
    (0..npix)
        .map(|p| {
            let (z, phi) = if p < ncap {
                let i = ((1.0 + (1.0 + 2.0 * p as f64).sqrt()) / 2.0).floor() as usize;
                let j = p + 1 - 2 * i * (i - 1);
                let fi = i as f64;
                (1.0 - fi * fi / (3.0 * ns * ns), (j as f64 - 0.5) * PI / (2.0 * fi))
            } else if p < npix - ncap {
                let pp = p - ncap;
                let i = pp / (4 * nside) + nside;
                let j = pp % (4 * nside) + 1;
                let s = ((i + 1 - nside) % 2) as f64;
                (
                    4.0 / 3.0 - 2.0 * i as f64 / (3.0 * ns),
                    (j as f64 - 0.5 * s) * PI / (2.0 * ns),
                )
            } else {
                let pp = npix - p;
                let i = ((1.0 + (2.0 * pp as f64 - 1.0).sqrt()) / 2.0).floor() as usize;
                let j = 4 * i + 1 - (pp - 2 * i * (i - 1));
                let fi = i as f64;
                (-1.0 + fi * fi / (3.0 * ns * ns), (j as f64 - 0.5) * PI / (2.0 * fi))
            };
            (z.clamp(-1.0, 1.0).acos(), phi)
        })
        .collect()
}

/// Hopf coordinates to a unit quaternion (w, x, y, z).
fn hopf_quaternion(theta: f64, phi: f64, psi: f64) -> UnitQuaternion<f64> {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    UnitQuaternion::new_normalize(Quaternion::new(
        c * (psi / 2.0).cos(),
        c * (psi / 2.0).sin(),
        s * (phi + psi / 2.0).cos(),
        s * (phi + psi / 2.0).sin(),
    ))
}

/// An equivolumetric partition of SO(3), represented by its cell centers.
#[derive(Debug, Clone)]
pub struct So3Grid {
    level: u32,
    quaternions: Vec<UnitQuaternion<f64>>,
    rotations: Vec<Rotation>,
}

impl So3Grid {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Capacity(format!(
                "grid level {level} exceeds maximum {MAX_LEVEL} ({} cells)",
                Self::cell_count(MAX_LEVEL)
            )));
        }
        let nside = 1usize << level;
        let npsi = 6 * nside;
        let sphere = healpix_centers(nside);
        let mut quaternions = Vec::with_capacity(sphere.len() * npsi);
        for &(theta, phi) in &sphere {
            for k in 0..npsi {
                let psi = (k as f64 + 0.5) * 2.0 * PI / npsi as f64;
                quaternions.push(hopf_quaternion(theta, phi, psi));
            }
        }
        let rotations = quaternions.iter().map(|q| q.to_rotation_matrix()).collect();
        Ok(Self { level, quaternions, rotations })
    }

    pub fn cell_count(level: u32) -> usize {
        BASE_CELLS * 8usize.pow(level)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Haar volume of one cell, `π²/M`.
    pub fn cell_volume(&self) -> f64 {
        PI * PI / self.len() as f64
    }

    pub fn rotations(&self) -> &[Rotation] {
        &self.rotations
    }

    pub fn quaternions(&self) -> &[UnitQuaternion<f64>] {
        &self.quaternions
    }

    /// Index of the cell center closest to `r` in geodesic distance.
    pub fn nearest(&self, r: &Rotation) -> usize {
        // Geodesic angle is monotone in |⟨q, qᵢ⟩|.
        let q = UnitQuaternion::from_rotation_matrix(r);
        let mut best = (0, f64::NEG_INFINITY);
        for (i, qi) in self.quaternions.iter().enumerate() {
            let d = q.coords.dot(&qi.coords).abs();
            if d > best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// CSV export: a `M=<count> V=<volume>` header, then one `w,x,y,z` row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = format!("M={} V={:.17e}\n", self.len(), self.cell_volume());
        for q in &self.quaternions {
            let _ = writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e}", q.w, q.i, q.j, q.k);
        }
        out
    }
}

/// A probability density over SO(3) that is constant on the cells of a grid.
#[derive(Debug, Clone)]
pub struct So3GridDensity {
    grid: So3Grid,
    log_scores: Vec<f64>,
    probabilities: Vec<f64>,
}

impl So3GridDensity {
    /// Normalizes unnormalized log-scores into per-volume density values:
    /// `pᵢ = softmax(scores)ᵢ / V`.
    pub fn normalize(grid: So3Grid, log_scores: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(grid.len(), log_scores.len())?;
        if let Some(i) = log_scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("log score {i} is not finite")));
        }
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let v = grid.cell_volume();
        let probabilities = exps.iter().map(|e| e / total / v).collect();
        Ok(Self { grid, log_scores, probabilities })
    }

    pub fn uniform(grid: So3Grid) -> Self {
        let n = grid.len();
        Self::normalize(grid, vec![0.0; n]).expect("finite scores")
    }

    pub fn grid(&self) -> &So3Grid {
        &self.grid
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    /// Density values (per unit Haar volume).
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Probability mass of each cell, `pᵢ V`.
    pub fn masses(&self) -> Vec<f64> {
        let v = self.grid.cell_volume();
        self.probabilities.iter().map(|p| p * v).collect()
    }

    pub fn density_at(&self, r: &Rotation) -> f64 {
        self.probabilities[self.grid.nearest(r)]
    }

    /// Negative log density of the cell nearest to `r`.
    pub fn nll(&self, r: &Rotation) -> f64 {
        -self.density_at(r).ln()
    }

    /// I.i.d. draws from the categorical distribution over cells, returning
    /// cell centers.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<Rotation> {
        self.sample_indices(seed, n)
            .into_iter()
            .map(|i| self.grid.rotations[i])
            .collect()
    }

    pub fn sample_indices(&self, seed: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = WeightedIndex::new(&self.probabilities).expect("normalized density has positive mass");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }
}
