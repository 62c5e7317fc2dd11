//! Grasp energies with analytic gradients.
//!
//! Every pose-dependent term returns its value and its gradient in the
//! tangent layout `[ω (3), v (3), q (K)]` used by [`HandPose::retract`].

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hand::primitive::pair_distance;
use crate::hand::{HandModel, HandPose, PosedHand};
use crate::scene::{heat_of_distance, sigmoid, ContactMap, ContactSet, Scene, DEFAULT_BETA};

/// Clearance below which two non-adjacent hand primitives are penalized.
pub const SELF_PENETRATION_THRESHOLD: f64 = 0.002;
/// Length scale of the smoothed object normal field used by `E_fc`.
pub const NORMAL_SMOOTHING: f64 = 0.01;

/// Weights of the grasp synthesis energy; `E_fc` has unit weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisWeights {
    pub w_dis: f64,
    pub w_pen: f64,
    pub w_tpen: f64,
    pub w_joints: f64,
    pub w_spen: f64,
}

impl Default for SynthesisWeights {
    fn default() -> Self {
        Self { w_dis: 100.0, w_pen: 100000.0, w_tpen: 50.0, w_joints: 1.0, w_spen: 10.0 }
    }
}

impl SynthesisWeights {
    pub fn zero() -> Self {
        Self { w_dis: 0.0, w_pen: 0.0, w_tpen: 0.0, w_joints: 0.0, w_spen: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative(&[self.w_dis, self.w_pen, self.w_tpen, self.w_joints, self.w_spen], "synthesis weight")
    }
}

/// Weights of the contact-map refinement energy and its step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtaWeights {
    pub cmap: f64,
    pub pen: f64,
    pub tpen: f64,
    pub spen: f64,
    pub step_size: f64,
}

impl Default for TtaWeights {
    fn default() -> Self {
        Self { cmap: 0.07, pen: 10000.0, tpen: 1000.0, spen: 10.0, step_size: 0.001 }
    }
}

impl TtaWeights {
    /// Weights of the auxiliary loss used alongside the likelihood during
    /// end-to-end training.
    pub fn joint_loss_defaults() -> Self {
        Self { cmap: 0.02, pen: 500.0, tpen: 50.0, spen: 10.0, step_size: 0.001 }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative(&[self.cmap, self.pen, self.tpen, self.spen, self.step_size], "refinement weight")
    }
}

fn non_negative(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        Some(v) => Err(Error::InvalidInput(format!("{what} must be finite and non-negative, got {v}"))),
        None => Ok(()),
    }
}

/// An energy value and its tangent gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl Term {
    fn zero(dim: usize) -> Self {
        Self { value: 0.0, gradient: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Weighted sum of named terms with its total gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub terms: Vec<WeightedTerm>,
    pub gradient: Vec<f64>,
}

impl EnergyReport {
    fn combine(dim: usize, parts: Vec<(&str, f64, Term)>) -> Self {
        let mut total = 0.0;
        let mut gradient = vec![0.0; dim];
        let mut terms = Vec::with_capacity(parts.len());
        for (name, weight, t) in parts {
            total += weight * t.value;
            for (g, d) in gradient.iter_mut().zip(&t.gradient) {
                *g += weight * d;
            }
            terms.push(WeightedTerm { name: name.to_string(), weight, value: t.value });
        }
        Self { total, terms, gradient }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Force-closure residual `‖Gc‖²` for contacts with outward object normals:
/// `c` stacks the inward normals and torques are taken about `center`.
/// Returns the value and `∂E/∂xᵢ` for every contact position.
pub fn e_fc(contacts: &ContactSet, center: &Vector3<f64>) -> Result<(f64, Vec<Vector3<f64>>)> {
    if contacts.len() < 2 {
        return Err(Error::UndefinedEnergy(format!(
            "force closure needs at least 2 contacts, got {}",
            contacts.len()
        )));
    }
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for (x, n) in contacts.points.iter().zip(&contacts.normals) {
        let c = -n;
        force += c;
        torque += (x - center).cross(&c);
    }
    let grads = contacts.normals.iter().map(|n| 2.0 * (-n).cross(&torque)).collect();
    Ok((force.norm_squared() + torque.norm_squared(), grads))
}

/// Force closure of the fingertip pads. Each pad is paired with the
/// object normal field smoothed over [`NORMAL_SMOOTHING`], so the residual
/// varies smoothly as pads slide over the cloud.
pub fn e_fc_posed(scene: &Scene, posed: &PosedHand) -> Result<Term> {
    let defs = posed.model.fingertip_defs();
    if defs.len() < 2 {
        return Err(Error::UndefinedEnergy(format!(
            "force closure needs at least 2 contacts, got {}",
            defs.len()
        )));
    }
    let center = scene.centroid();
    let xs: Vec<Vector3<f64>> = defs.iter().map(|d| posed.kin.point(d)).collect();
    let fields: Vec<_> = xs.iter().map(|x| scene.smooth_normal(x, NORMAL_SMOOTHING)).collect();
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for (x, (n, _)) in xs.iter().zip(&fields) {
        force -= n;
        torque -= (x - center).cross(n);
    }
    let mut gradient = vec![0.0; 6 + posed.model.dof()];
    for ((d, x), (n, jac)) in defs.iter().zip(&xs).zip(&fields) {
        let c = -n;
        // Direct dependence through the lever arm, then through c(x) = -n(x).
        let along_c = 2.0 * force + 2.0 * torque.cross(&(x - center));
        let g = 2.0 * c.cross(&torque) - jac.transpose() * along_c;
        posed.kin.add_point_gradient(posed.model, d.link, x, &g, &mut gradient);
    }
    Ok(Term { value: force.norm_squared() + torque.norm_squared(), gradient })
}

/// Sum of fingertip-pad distances to their nearest object points.
pub fn e_dis_posed(scene: &Scene, posed: &PosedHand) -> Term {
    let mut t = Term::zero(6 + posed.model.dof());
    for d in posed.model.fingertip_defs() {
        let x = posed.kin.point(d);
        let (j, dist) = scene.nearest_point(&x);
        t.value += dist;
        if dist > 0.0 {
            let g = (x - scene.points()[j]) / dist;
            posed.kin.add_point_gradient(posed.model, d.link, &x, &g, &mut t.gradient);
        }
    }
    t
}

/// Sum of squared hand SDF over object points inside the hand.
pub fn e_pen_posed(scene: &Scene, posed: &PosedHand) -> Term {
    e_pen_points(scene.points(), posed)
}

pub(crate) fn e_pen_points(points: &[Vector3<f64>], posed: &PosedHand) -> Term {
    let mut t = Term::zero(6 + posed.model.dof());
    for p in points {
        if let Some(s) = posed.sdf_below(p, 0.0) {
            t.value += s.distance * s.distance;
            // The point is fixed; the primitive moves, so d sdf = -∇sdf · u(p).
            let g = -2.0 * s.distance * s.gradient;
            posed.kin.add_point_gradient(posed.model, s.primitive.link, p, &g, &mut t.gradient);
        }
    }
    t
}

/// L1 penetration of keypoints and fingertip pads below the table.
pub fn e_tpen_posed(posed: &PosedHand) -> Term {
    let mut t = Term::zero(6 + posed.model.dof());
    let model = posed.model;
    for d in model.keypoint_defs().iter().chain(model.fingertip_defs()) {
        let x = posed.kin.point(d);
        if x.z < 0.0 {
            t.value -= x.z;
            posed.kin.add_point_gradient(model, d.link, &x, &Vector3::new(0.0, 0.0, -1.0), &mut t.gradient);
        }
    }
    t
}

/// Hinge penalty on joint-limit violations.
pub fn e_joints(model: &HandModel, q: &[f64]) -> Result<Term> {
    check_dim(model.dof(), q.len())?;
    let mut t = Term::zero(6 + model.dof());
    for (j, joint) in model.joints().iter().enumerate() {
        if q[j] > joint.upper {
            t.value += q[j] - joint.upper;
            t.gradient[6 + j] = 1.0;
        } else if q[j] < joint.lower {
            t.value += joint.lower - q[j];
            t.gradient[6 + j] = -1.0;
        }
    }
    Ok(t)
}

/// Squared clearance deficit over non-adjacent primitive pairs.
pub fn e_spen_posed(posed: &PosedHand, threshold: f64) -> Term {
    let mut t = Term::zero(6 + posed.model.dof());
    let index = |id| posed.prims.iter().position(|p| p.id == id).expect("primitive is posed");
    for &(ia, ib) in posed.model.collision_pairs() {
        let (a, b) = (&posed.prims[index(ia)], &posed.prims[index(ib)]);
        if (a.center - b.center).norm() - a.radius - b.radius >= threshold {
            continue;
        }
        let pc = pair_distance(&a.shape, &a.world, &b.shape, &b.world);
        let deficit = threshold - pc.distance;
        if deficit <= 0.0 {
            continue;
        }
        t.value += deficit * deficit;
        // distance = sdf_M(y) - r with y riding on the other primitive O:
        // d distance = ∇sdf_M(y) · (u_O(y) - u_M(y)).
        let (measuring, other) = if pc.measured_by_a { (a, b) } else { (b, a) };
        let g = -2.0 * deficit * pc.gradient;
        posed.kin.add_point_gradient(posed.model, other.id.link, &pc.point, &g, &mut t.gradient);
        posed.kin.add_point_gradient(posed.model, measuring.id.link, &pc.point, &-g, &mut t.gradient);
    }
    t
}

/// Mean squared difference between two contact maps and its gradient with
/// respect to the current heat values.
pub fn e_cmap(current: &ContactMap, target: &ContactMap) -> Result<(f64, Vec<f64>)> {
    check_dim(target.len(), current.len())?;
    if current.is_empty() {
        return Err(Error::InvalidInput("contact maps are empty".into()));
    }
    let n = current.len() as f64;
    let diff: Vec<f64> = current.heat.iter().zip(&target.heat).map(|(c, t)| c - t).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff.iter().map(|d| 2.0 * d / n).collect()))
}

/// Contact heat of the object points against the hand's surface samples.
pub fn contact_map_posed(object: &[Vector3<f64>], posed: &PosedHand, beta: f64) -> Result<ContactMap> {
    crate::scene::contact_heat(object, &posed.surface_points(), beta)
}

/// Contact-map loss with the gradient carried through the nearest-sample
/// distances and the sigmoid.
pub fn e_cmap_posed(object: &[Vector3<f64>], posed: &PosedHand, target: &ContactMap, beta: f64) -> Result<Term> {
    check_dim(target.len(), object.len())?;
    let hand = posed.surface_points();
    let nearest = crate::scene::nearest_hand_points(object, &hand);
    let heat: Vec<f64> = nearest.iter().map(|(_, d)| heat_of_distance(*d, beta)).collect();
    let (value, de_dc) = e_cmap(&ContactMap { heat }, target)?;
    let mut t = Term { value, gradient: vec![0.0; 6 + posed.model.dof()] };
    let samples = posed.model.surface_sample_defs();
    for ((p, (j, d)), g) in object.iter().zip(&nearest).zip(&de_dc) {
        if *d <= 0.0 {
            continue;
        }
        let s = sigmoid(beta * d);
        let dc_dd = -2.0 * beta * s * (1.0 - s);
        let x = hand[*j];
        let de_dx = (g * dc_dd / d) * (x - p);
        posed.kin.add_point_gradient(posed.model, samples[*j].link, &x, &de_dx, &mut t.gradient);
    }
    Ok(t)
}

pub fn e_fc_pose(scene: &Scene, model: &HandModel, pose: &HandPose) -> Result<Term> {
    e_fc_posed(scene, &model.pose(pose)?)
}

pub fn e_dis(scene: &Scene, model: &HandModel, pose: &HandPose) -> Result<Term> {
    Ok(e_dis_posed(scene, &model.pose(pose)?))
}

pub fn e_pen(scene: &Scene, model: &HandModel, pose: &HandPose) -> Result<Term> {
    Ok(e_pen_posed(scene, &model.pose(pose)?))
}

pub fn e_tpen(model: &HandModel, pose: &HandPose) -> Result<Term> {
    Ok(e_tpen_posed(&model.pose(pose)?))
}

pub fn e_spen(model: &HandModel, pose: &HandPose) -> Result<Term> {
    Ok(e_spen_posed(&model.pose(pose)?, SELF_PENETRATION_THRESHOLD))
}

pub fn e_cmap_pose(scene: &Scene, model: &HandModel, pose: &HandPose, target: &ContactMap) -> Result<Term> {
    e_cmap_posed(scene.points(), &model.pose(pose)?, target, DEFAULT_BETA)
}

/// `E_fc + w_dis E_dis + w_pen E_pen + w_tpen E_tpen + w_joints E_joints + w_spen E_spen`.
pub fn synthesis_energy(
    scene: &Scene,
    model: &HandModel,
    pose: &HandPose,
    weights: &SynthesisWeights,
) -> Result<EnergyReport> {
    weights.validate()?;
    let posed = model.pose(pose)?;
    let dim = pose.tangent_dim();
    Ok(EnergyReport::combine(
        dim,
        vec![
            ("fc", 1.0, e_fc_posed(scene, &posed)?),
            ("dis", weights.w_dis, e_dis_posed(scene, &posed)),
            ("pen", weights.w_pen, e_pen_posed(scene, &posed)),
            ("tpen", weights.w_tpen, e_tpen_posed(&posed)),
            ("joints", weights.w_joints, e_joints(model, &pose.q)?),
            ("spen", weights.w_spen, e_spen_posed(&posed, SELF_PENETRATION_THRESHOLD)),
        ],
    ))
}

/// `λ_cmap E_cmap + λ_pen E_pen + λ_tpen E_tpen + λ_spen E_spen` against a
/// fixed target contact map over the scene points.
pub fn tta_energy(
    scene: &Scene,
    model: &HandModel,
    pose: &HandPose,
    target: &ContactMap,
    weights: &TtaWeights,
) -> Result<EnergyReport> {
    weights.validate()?;
    let posed = model.pose(pose)?;
    Ok(EnergyReport::combine(
        pose.tangent_dim(),
        vec![
            ("cmap", weights.cmap, e_cmap_posed(scene.points(), &posed, target, DEFAULT_BETA)?),
            ("pen", weights.pen, e_pen_posed(scene, &posed)),
            ("tpen", weights.tpen, e_tpen_posed(&posed)),
            ("spen", weights.spen, e_spen_posed(&posed, SELF_PENETRATION_THRESHOLD)),
        ],
    ))
}

/// The same four terms with the end-to-end training defaults.
pub fn joint_additional_loss(
    scene: &Scene,
    model: &HandModel,
    pose: &HandPose,
    target: &ContactMap,
    weights: Option<&TtaWeights>,
) -> Result<EnergyReport> {
    let w = weights.copied().unwrap_or_else(TtaWeights::joint_loss_defaults);
    tta_energy(scene, model, pose, target, &w)
}
