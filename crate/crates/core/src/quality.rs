//! Wrench-space grasp quality: the epsilon metric Q1, quasi-static gravity
//! resistance, and penetration depths.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose, PosedHand};
use crate::lp::{self, LpStatus};
use crate::scene::{contacts_from_posed, ContactSet, Scene};

pub const GRAVITY: f64 = 9.81;
const DIRECTION_SEED: u64 = 0x0051_d1ec;
const REFINE_STARTS: usize = 8;
const REFINE_ITERS: usize = 12;

/// Linearized Coulomb friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionModel {
    pub mu: f64,
    pub cone_edges: usize,
}

impl Default for FrictionModel {
    fn default() -> Self {
        Self { mu: 0.5, cone_edges: 8 }
    }
}

impl FrictionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || self.cone_edges < 3 {
            return Err(Error::InvalidInput(format!(
                "friction needs mu > 0 and at least 3 cone edges, got mu = {}, m = {}",
                self.mu, self.cone_edges
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub contact_tolerance: f64,
    /// Table penetration above which Q1 is forced to zero.
    pub invalid_table_pen: f64,
    /// Object penetration above which Q1 is forced to zero.
    pub invalid_obj_pen: f64,
    pub q1_directions: usize,
    /// Torque scale; `None` uses one over the object's bounding radius.
    pub torque_scale: Option<f64>,
    /// Object penetration tolerated by validation.
    pub max_valid_penetration: f64,
    /// Object mass used for gravity resistance, in kilograms.
    pub mass: f64,
    pub friction: FrictionModel,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            contact_tolerance: 0.01,
            invalid_table_pen: 0.01,
            invalid_obj_pen: 0.005,
            q1_directions: 4096,
            torque_scale: None,
            max_valid_penetration: 0.001,
            mass: 0.1,
            friction: FrictionModel::default(),
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        self.friction.validate()?;
        let pos = [
            self.contact_tolerance,
            self.invalid_table_pen,
            self.invalid_obj_pen,
            self.max_valid_penetration,
            self.mass,
            self.torque_scale.unwrap_or(1.0),
        ];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.q1_directions == 0 {
            return Err(Error::InvalidInput("quality thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn torque_scale_for(&self, scene: &Scene) -> f64 {
        self.torque_scale.unwrap_or_else(|| 1.0 / scene.bounding_sphere().1.max(1e-9))
    }
}

/// Contact wrenches `(f, ρ (x − c) × f)` of unit friction-cone edges.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchSet {
    pub wrenches: Vec<Vector6<f64>>,
}

impl WrenchSet {
    pub fn len(&self) -> usize {
        self.wrenches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrenches.is_empty()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(6, self.len(), |r, c| self.wrenches[c][r])
    }

    /// Support function `h(d) = max_w d·w`.
    pub fn support(&self, d: &Vector6<f64>) -> f64 {
        self.wrenches.iter().map(|w| w.dot(d)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Cone phase reference: the horizontal tangent `ẑ × n`, which turns with
/// the system under rotations about z. Vertical normals fall back to x.
fn cone_reference(n: &Vector3<f64>) -> Vector3<f64> {
    let h = Vector3::z().cross(n);
    if h.norm() > 1e-9 {
        h.normalize()
    } else {
        n.cross(&Vector3::x()).normalize()
    }
}

/// Unit edge forces of the linearized cone around the inward normal of
/// every contact, with torques about `center` scaled by `rho`.
pub fn build_wrenches(
    contacts: &ContactSet,
    friction: &FrictionModel,
    center: &Vector3<f64>,
    rho: f64,
) -> WrenchSet {
    let m = friction.cone_edges;
    let mut wrenches = Vec::with_capacity(contacts.len() * m);
    for (x, n) in contacts.points.iter().zip(&contacts.normals) {
        let inward = -n;
        let u = cone_reference(&inward);
        let v = inward.cross(&u);
        let arm = x - center;
        for k in 0..m {
            let a = 2.0 * PI * k as f64 / m as f64;
            let f = (inward + friction.mu * (a.cos() * u + a.sin() * v)).normalize();
            let tau = rho * arm.cross(&f);
            wrenches.push(Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z));
        }
    }
    WrenchSet { wrenches }
}

/// Deterministic unit directions in R⁶.
pub fn sphere_directions(n: usize, seed: u64) -> Vec<Vector6<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let d = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let norm: f64 = d.norm();
            if norm > 1e-12 {
                break d / norm;
            }
        })
        .collect()
}

fn default_directions() -> &'static [Vector6<f64>] {
    static DIRS: OnceLock<Vec<Vector6<f64>>> = OnceLock::new();
    DIRS.get_or_init(|| sphere_directions(4096, DIRECTION_SEED))
}

/// Whether the wrench hull has full rank and contains the origin.
fn origin_in_hull(ws: &WrenchSet) -> Result<bool> {
    let w = ws.matrix();
    let sv = w.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max <= 0.0 || sv.iter().filter(|s| **s > 1e-9 * max).count() < 6 {
        return Ok(false);
    }
    let mut a = w.insert_row(6, 1.0);
    a.row_mut(6).fill(1.0);
    let mut b = DVector::zeros(7);
    b[6] = 1.0;
    lp::feasible(&a, &b)
}

/// Facet normal hit by the ray from the origin along `d`, from the dual of
/// `max t s.t. Σλᵢwᵢ = t d, Σλᵢ = 1, λ ≥ 0`.
fn facet_normal_along(ws: &WrenchSet, d: &Vector6<f64>) -> Result<Option<Vector6<f64>>> {
    let n = ws.len();
    let mut a = DMatrix::zeros(7, n + 1);
    for (j, w) in ws.wrenches.iter().enumerate() {
        for r in 0..6 {
            a[(r, j)] = w[r];
        }
        a[(6, j)] = 1.0;
    }
    for r in 0..6 {
        a[(r, n)] = -d[r];
    }
    let mut b = DVector::zeros(7);
    b[6] = 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let sol = lp::solve(&a, &b, &c)?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    let y = Vector6::from_iterator(sol.duals.iter().take(6).copied());
    let norm = y.norm();
    Ok((norm > 1e-12 && y.iter().all(|v| v.is_finite())).then(|| y / norm))
}

/// Inscribed-ball radius of the wrench hull at the origin, approximated by
/// the minimum of the support function over the given directions, then
/// tightened by walking from the best directions to the facets they hit.
/// Returns 0 when the origin is not strictly inside the hull.
pub fn q1_of_wrenches(ws: &WrenchSet, directions: &[Vector6<f64>]) -> Result<f64> {
    if ws.is_empty() || !origin_in_hull(ws)? {
        return Ok(0.0);
    }
    let mut scored: Vec<(f64, usize)> = directions.iter().enumerate().map(|(i, d)| (ws.support(d), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = scored.first().map_or(f64::INFINITY, |s| s.0);
    for &(h0, i) in scored.iter().take(REFINE_STARTS) {
        let mut d = directions[i];
        let mut h = h0;
        for _ in 0..REFINE_ITERS {
            let Some(nd) = facet_normal_along(ws, &d)? else { break };
            let nh = ws.support(&nd);
            if nh >= h - 1e-12 {
                break;
            }
            d = nd;
            h = nh;
        }
        best = best.min(h);
    }
    Ok(best.max(0.0))
}

/// Maximal depth of object points inside the hand.
pub fn penetration_depth(scene: &Scene, model: &HandModel, pose: &HandPose) -> Result<f64> {
    Ok(penetration_depth_posed(scene, &model.pose(pose)?))
}

pub fn penetration_depth_posed(scene: &Scene, posed: &PosedHand) -> f64 {
    scene
        .points()
        .iter()
        .filter_map(|p| posed.sdf_below(p, 0.0))
        .map(|s| -s.distance)
        .fold(0.0, f64::max)
}

/// Depth of the hand below the table plane.
pub fn table_penetration(model: &HandModel, pose: &HandPose) -> Result<f64> {
    Ok((-model.pose(pose)?.min_z()).max(0.0))
}

pub fn q1(scene: &Scene, model: &HandModel, pose: &HandPose, config: &QualityConfig) -> Result<f64> {
    config.validate()?;
    let posed = model.pose(pose)?;
    q1_posed(scene, &posed, config)
}

fn q1_posed(scene: &Scene, posed: &PosedHand, config: &QualityConfig) -> Result<f64> {
    if penetration_depth_posed(scene, posed) > config.invalid_obj_pen || -posed.min_z() > config.invalid_table_pen {
        return Ok(0.0);
    }
    let contacts = contacts_from_posed(scene, posed, config.contact_tolerance);
    let ws = build_wrenches(&contacts, &config.friction, &scene.centroid(), config.torque_scale_for(scene));
    let owned;
    let dirs = if config.q1_directions == 4096 {
        default_directions()
    } else {
        owned = sphere_directions(config.q1_directions, DIRECTION_SEED);
        &owned
    };
    q1_of_wrenches(&ws, dirs)
}

/// Whether the wrenches can balance gravity along each of the six
/// axis-aligned directions with non-negative edge forces.
pub fn resists_gravity(ws: &WrenchSet, mass: f64) -> Result<[bool; 6]> {
    let mut out = [false; 6];
    if ws.is_empty() {
        return Ok(out);
    }
    let a = ws.matrix();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut g = Vector3::zeros();
        g[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
        // The contacts must supply the opposite of the gravity force.
        let need = -mass * GRAVITY * g;
        let b = DVector::from_vec(vec![need.x, need.y, need.z, 0.0, 0.0, 0.0]);
        *slot = lp::feasible(&a, &b)?;
    }
    Ok(out)
}

pub fn gravity_resistance(
    scene: &Scene,
    model: &HandModel,
    pose: &HandPose,
    config: &QualityConfig,
) -> Result<bool> {
    config.validate()?;
    let posed = model.pose(pose)?;
    let contacts = contacts_from_posed(scene, &posed, config.contact_tolerance);
    let ws = build_wrenches(&contacts, &config.friction, &scene.centroid(), config.torque_scale_for(scene));
    Ok(resists_gravity(&ws, config.mass)?.iter().all(|v| *v))
}

/// Per-grasp quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub q1: f64,
    pub penetration: f64,
    pub table_penetration: f64,
    pub stable: bool,
    pub mu: f64,
    pub m: usize,
    pub rho: f64,
}

pub fn evaluate(scene: &Scene, model: &HandModel, pose: &HandPose, config: &QualityConfig) -> Result<MetricReport> {
    config.validate()?;
    let posed = model.pose(pose)?;
    let rho = config.torque_scale_for(scene);
    let contacts = contacts_from_posed(scene, &posed, config.contact_tolerance);
    let ws = build_wrenches(&contacts, &config.friction, &scene.centroid(), rho);
    Ok(MetricReport {
        q1: q1_posed(scene, &posed, config)?,
        penetration: penetration_depth_posed(scene, &posed),
        table_penetration: (-posed.min_z()).max(0.0),
        stable: resists_gravity(&ws, config.mass)?.iter().all(|v| *v),
        mu: config.friction.mu,
        m: config.friction.cone_edges,
        rho,
    })
}
