#![allow(dead_code)]

pub mod fixtures;
pub mod oracles;
pub mod stats;

use dexgrasp::energy::Term;
use dexgrasp::hand::primitive::Shape;
use dexgrasp::hand::{HandModel, HandPose};
use dexgrasp::scene::Scene;
use dexgrasp::so3::RigidTransform;
use dexgrasp::synthesis::palm_facing;
use nalgebra::{Translation3, UnitQuaternion, Vector3};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    UnitQuaternion::new_normalize(q)
}

/// Joint angles drawn uniformly over the limits widened by `margin`.
pub fn random_q<R: Rng>(model: &HandModel, rng: &mut R, margin: f64) -> Vec<f64> {
    model.joints().iter().map(|j| rng.gen_range(j.lower - margin..=j.upper + margin)).collect()
}

/// Palm-surface point of the bundled hand in the root frame.
pub fn palm_point(model: &HandModel) -> Vector3<f64> {
    let root = model.root_link();
    let prim = &model.links()[root].primitives[0];
    let n = model.palm_normal().into_inner();
    let reach = match prim.shape {
        Shape::Box { half_extents } => half_extents.component_mul(&n.abs()).sum(),
        Shape::Capsule { radius, .. } => radius,
    };
    prim.frame.translation.vector + reach * n
}

/// Hand whose palm faces the object from a random upper direction, palm
/// surface `offset` meters outside the bounding sphere.
pub fn pose_near<R: Rng>(model: &HandModel, scene: &Scene, rng: &mut R, offset: f64, q: Vec<f64>) -> HandPose {
    let (center, radius) = scene.bounding_sphere();
    let mut u = unit(rng);
    u.z = u.z.abs() + 0.2;
    let u = u.normalize();
    let rot = palm_facing(model, &-u, rng.gen_range(-3.14..3.14));
    let palm = center + (radius + offset) * u;
    let root = palm - rot * palm_point(model);
    HandPose::new(
        RigidTransform::from_parts(Translation3::from(root), UnitQuaternion::from_rotation_matrix(&rot)),
        q,
    )
}

pub enum FdOutcome {
    /// Relative error between analytic and central-difference gradients.
    Checked(f64),
    /// Central differences at `h` and `h/10` disagree: a kink lies inside
    /// the stencil.
    Kink,
}

fn shifted(f: &dyn Fn(&HandPose) -> Term, pose: &HandPose, i: usize, h: f64) -> f64 {
    let mut d = vec![0.0; pose.tangent_dim()];
    d[i] = h;
    f(&pose.retract(&d)).value
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares the analytic tangent gradient with central differences.
///
/// A sample is kink-adjacent when the two-sided differences betray a
/// non-smooth point inside the stencil: either the forward/backward
/// disagreement fails to shrink linearly with the step (off by more than
/// 10× the tolerance), or the central differences at `h` and `h/10`, which
/// agree to O(h²) for a smooth function, differ by more than a tenth of the
/// tolerance. A wrong analytic gradient is still caught, since both
/// references then agree with each other but not with it.
pub fn fd_check(f: &dyn Fn(&HandPose) -> Term, pose: &HandPose) -> FdOutcome {
    let analytic = f(pose).gradient;
    let f0 = f(pose).value;
    let dim = pose.tangent_dim();
    let h = FD_STEP;
    let (mut coarse, mut fine, mut bend) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for i in 0..dim {
        let (up, down) = (shifted(f, pose, i, h), shifted(f, pose, i, -h));
        let (up10, down10) = (shifted(f, pose, i, h / 10.0), shifted(f, pose, i, -h / 10.0));
        coarse[i] = (up - down) / (2.0 * h);
        fine[i] = (up10 - down10) / (2.0 * h / 10.0);
        let d_coarse = (up - 2.0 * f0 + down) / h;
        let d_fine = (up10 - 2.0 * f0 + down10) / (h / 10.0);
        bend[i] = d_coarse - 10.0 * d_fine;
    }
    let scale = norm(&coarse).max(norm(&fine)).max(1e-8);
    let spread: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a - b).collect();
    if norm(&spread) > 0.1 * GRAD_TOL * scale || norm(&bend) > 10.0 * GRAD_TOL * scale {
        return FdOutcome::Kink;
    }
    let err: Vec<f64> = analytic.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    FdOutcome::Checked(norm(&err) / norm(&analytic).max(scale))
}

/// Runs [`fd_check`] on configurations from `make` until `needed` active
/// smooth samples pass. Returns (checked, kink-adjacent, worst error), or
/// the first failure.
pub fn try_gradient_suite<R: Rng>(
    name: &str,
    needed: usize,
    rng: &mut R,
    make: &mut dyn FnMut(&mut R) -> HandPose,
    f: &dyn Fn(&HandPose) -> Term,
) -> Result<(usize, usize, f64), String> {
    let (mut checked, mut kinks, mut worst) = (0, 0, 0.0f64);
    let mut attempts = 0;
    while checked < needed {
        attempts += 1;
        if attempts >= 50 * needed {
            return Err(format!("{name}: could not find {needed} active configurations"));
        }
        let pose = make(rng);
        let t = f(&pose);
        if t.value <= 0.0 {
            continue;
        }
        match fd_check(f, &pose) {
            FdOutcome::Kink => kinks += 1,
            FdOutcome::Checked(e) => {
                if !(e < GRAD_TOL) {
                    return Err(format!("{name}: relative gradient error {e:e} at {pose:?}"));
                }
                worst = worst.max(e);
                checked += 1;
            }
        }
    }
    if kinks > 4 * checked {
        return Err(format!("{name}: {kinks} kink-adjacent samples vs {checked} smooth ones"));
    }
    Ok((checked, kinks, worst))
}

/// [`try_gradient_suite`] that panics on failure.
pub fn gradient_suite<R: Rng>(
    name: &str,
    needed: usize,
    rng: &mut R,
    make: &mut dyn FnMut(&mut R) -> HandPose,
    f: &dyn Fn(&HandPose) -> Term,
) -> (usize, usize, f64) {
    try_gradient_suite(name, needed, rng, make, f).unwrap_or_else(|e| panic!("{e}"))
}

/// Gaussian perturbation of a grasp: `sigma_t` meters on each translation
/// axis and `sigma_q` radians on each joint.
pub fn perturb<R: Rng>(pose: &HandPose, rng: &mut R, sigma_t: f64, sigma_q: f64) -> HandPose {
    use rand_distr::StandardNormal;
    let dt = Vector3::<f64>::from_fn(|_, _| sigma_t * rng.sample::<f64, _>(StandardNormal));
    let q = pose.q.iter().map(|v| v + sigma_q * rng.sample::<f64, _>(StandardNormal)).collect();
    HandPose::new(Translation3::from(dt) * pose.root, q)
}
