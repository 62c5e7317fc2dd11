//! Grasp initialization, energy-descent synthesis, contact-map refinement
//! and validation.

use nalgebra::{Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::energy::{synthesis_energy, tta_energy, EnergyReport, SynthesisWeights, TtaWeights};
use crate::error::{check_dim, Error, Result};
use crate::hand::{HandModel, HandPose};
use crate::quality::{self, QualityConfig};
use crate::scene::{ContactMap, Scene};
use crate::so3::RigidTransform;

/// Metropolis-adjusted Langevin perturbation of the descent steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    /// Noise standard deviation relative to the per-block step size.
    pub noise_scale: f64,
    pub initial_temperature: f64,
    /// Temperature multiplier applied every `anneal_period` steps.
    pub anneal_rate: f64,
    pub anneal_period: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self { noise_scale: 0.1, initial_temperature: 18.0, anneal_rate: 0.95, anneal_period: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub steps: usize,
    /// Rotation step per unit gradient (radians).
    pub rotation_step: f64,
    /// Translation step per unit gradient (meters).
    pub translation_step: f64,
    /// Joint step per unit gradient (radians).
    pub joint_step: f64,
    pub line_search: bool,
    /// Enabled when present.
    pub langevin: Option<LangevinConfig>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            rotation_step: 0.05,
            translation_step: 0.005,
            joint_step: 0.02,
            line_search: true,
            langevin: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidInput("optimizer needs at least one step".into()));
        }
        for (name, v) in [
            ("rotation_step", self.rotation_step),
            ("translation_step", self.translation_step),
            ("joint_step", self.joint_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Adam-driven refinement against a fixed target contact map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { steps: 300, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Energy after every step, starting with the initial pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspTrajectory {
    pub energies: Vec<f64>,
    pub final_pose: HandPose,
}

impl GraspTrajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,energy\n");
        for (i, e) in self.energies.iter().enumerate() {
            s.push_str(&format!("{i},{e:?}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub pose: HandPose,
    pub trajectory: GraspTrajectory,
    pub report: EnergyReport,
}

/// Rotation taking the hand's palm normal onto `facing`, then rolled about
/// `facing` by `roll`.
pub fn palm_facing(model: &HandModel, facing: &Vector3<f64>, roll: f64) -> Rotation3<f64> {
    let n = model.palm_normal().into_inner();
    let f = facing.normalize();
    let align = Rotation3::rotation_between(&n, &f).unwrap_or_else(|| {
        let perp = if n.x.abs() < 0.9 { n.cross(&Vector3::x()) } else { n.cross(&Vector3::y()) };
        Rotation3::from_axis_angle(&Unit::new_normalize(perp), std::f64::consts::PI)
    });
    Rotation3::from_axis_angle(&Unit::new_normalize(f), roll) * align
}

/// Random start above the object: root on an upper hemisphere of radius
/// 0.2–0.35 m around the bounding-sphere center, above the object top,
/// palm facing the center, random roll, joints near mid-range.
pub fn init_grasp(scene: &Scene, model: &HandModel, seed: u64) -> HandPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (center, _) = scene.bounding_sphere();
    let top = scene.top_z();
    let root = loop {
        let radius = rng.gen_range(0.2..0.35);
        let u = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let mut u: Vector3<f64> = u.normalize();
        u.z = u.z.abs();
        let p = center + radius * u;
        if p.z > top {
            break p;
        }
    };
    let roll = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let rot = palm_facing(model, &(center - root), roll);
    let q = model
        .joints()
        .iter()
        .map(|j| {
            let mid = 0.5 * (j.lower + j.upper);
            let spread = 0.1 * (j.upper - j.lower);
            (mid + rng.gen_range(-spread..=spread)).clamp(j.lower, j.upper)
        })
        .collect();
    HandPose::new(
        RigidTransform::from_parts(Translation3::from(root), UnitQuaternion::from_rotation_matrix(&rot)),
        q,
    )
}

fn scaled_step(grad: &[f64], config: &OptimizerConfig, alpha: f64) -> Vec<f64> {
    grad.iter()
        .enumerate()
        .map(|(i, g)| {
            let s = match i {
                0..=2 => config.rotation_step,
                3..=5 => config.translation_step,
                _ => config.joint_step,
            };
            -alpha * s * g
        })
        .collect()
}

fn finite_or_diverged(step: usize, report: &EnergyReport) -> Result<()> {
    if report.total.is_finite() && report.gradient.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step, energy: report.total })
    }
}

/// Energy descent from a random initialization drawn with `config.seed`.
pub fn synthesize(
    scene: &Scene,
    model: &HandModel,
    weights: &SynthesisWeights,
    config: &OptimizerConfig,
) -> Result<SynthesisResult> {
    let init = init_grasp(scene, model, config.seed);
    synthesize_from(scene, model, init, weights, config)
}

/// Energy descent from a given pose. Without Langevin noise and with line
/// search the energy never increases; a step is accepted only when it does
/// not raise the energy, and the step multiplier doubles after acceptance
/// and halves after rejection.
pub fn synthesize_from(
    scene: &Scene,
    model: &HandModel,
    init: HandPose,
    weights: &SynthesisWeights,
    config: &OptimizerConfig,
) -> Result<SynthesisResult> {
    config.validate()?;
    check_dim(model.dof(), init.q.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6c61_6e67);
    let mut pose = init;
    let mut report = synthesis_energy(scene, model, &pose, weights)?;
    finite_or_diverged(0, &report)?;
    let mut energies = Vec::with_capacity(config.steps + 1);
    energies.push(report.total);
    let mut alpha = 1.0f64;
    for step in 1..=config.steps {
        let mut delta = scaled_step(&report.gradient, config, alpha);
        if let Some(lc) = &config.langevin {
            for (i, d) in delta.iter_mut().enumerate() {
                let s = match i {
                    0..=2 => config.rotation_step,
                    3..=5 => config.translation_step,
                    _ => config.joint_step,
                };
                let xi: f64 = StandardNormal.sample(&mut rng);
                *d += lc.noise_scale * s * xi;
            }
            let temperature =
                lc.initial_temperature * lc.anneal_rate.powi((step / lc.anneal_period.max(1)) as i32);
            let cand = pose.retract(&delta);
            let cand_report = synthesis_energy(scene, model, &cand, weights)?;
            finite_or_diverged(step, &cand_report)?;
            let de = cand_report.total - report.total;
            let accept = de <= 0.0 || rng.gen::<f64>() < (-de / temperature.max(1e-300)).exp();
            if accept {
                pose = cand;
                report = cand_report;
            }
        } else if config.line_search {
            let mut accepted = false;
            for _ in 0..30 {
                let cand = pose.retract(&delta);
                let cand_report = synthesis_energy(scene, model, &cand, weights)?;
                if cand_report.total.is_finite() && cand_report.total <= report.total {
                    finite_or_diverged(step, &cand_report)?;
                    pose = cand;
                    report = cand_report;
                    alpha = (alpha * 2.0).min(1e6);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
                delta.iter_mut().for_each(|d| *d *= 0.5);
            }
            if !accepted {
                // No step size lowers the energy: a numerical stationary
                // point. The remaining steps keep the pose.
                energies.resize(config.steps + 1, report.total);
                break;
            }
        } else {
            pose = pose.retract(&delta);
            report = synthesis_energy(scene, model, &pose, weights)?;
            finite_or_diverged(step, &report)?;
        }
        energies.push(report.total);
    }
    Ok(SynthesisResult {
        trajectory: GraspTrajectory { energies, final_pose: pose.clone() },
        pose,
        report,
    })
}

/// Refines a grasp toward a fixed target contact map with Adam steps of
/// size `weights.step_size` on the tangent coordinates.
pub fn tta_refine(
    scene: &Scene,
    model: &HandModel,
    pose: &HandPose,
    target: &ContactMap,
    weights: &TtaWeights,
    config: &RefineConfig,
) -> Result<(HandPose, GraspTrajectory)> {
    weights.validate()?;
    check_dim(scene.len(), target.len())?;
    if config.steps == 0 {
        return Err(Error::InvalidInput("refinement needs at least one step".into()));
    }
    let dim = pose.tangent_dim();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut cur = pose.clone();
    let mut report = tta_energy(scene, model, &cur, target, weights)?;
    finite_or_diverged(0, &report)?;
    let mut energies = vec![report.total];
    for step in 1..=config.steps {
        let t = step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let delta: Vec<f64> = (0..dim)
            .map(|i| {
                let g = report.gradient[i];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                -weights.step_size * (m[i] / c1) / ((v[i] / c2).sqrt() + config.epsilon)
            })
            .collect();
        cur = cur.retract(&delta);
        report = tta_energy(scene, model, &cur, target, weights)?;
        finite_or_diverged(step, &report)?;
        energies.push(report.total);
    }
    Ok((cur.clone(), GraspTrajectory { energies, final_pose: cur }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub penetration: f64,
    pub penetration_ok: bool,
    pub stable: bool,
    pub passed: bool,
}

/// Dataset filter: object penetration within tolerance and gravity
/// resistance along all six axis directions.
pub fn validate(scene: &Scene, model: &HandModel, pose: &HandPose, config: &QualityConfig) -> Result<ValidationResult> {
    config.validate()?;
    let penetration = quality::penetration_depth(scene, model, pose)?;
    let penetration_ok = penetration <= config.max_valid_penetration;
    let stable = quality::gravity_resistance(scene, model, pose, config)?;
    Ok(ValidationResult { penetration, penetration_ok, stable, passed: penetration_ok && stable })
}
