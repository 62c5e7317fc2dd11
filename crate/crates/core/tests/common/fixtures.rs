//! Named test fixtures shared by the suites and the acceptance run.

use dexgrasp::hand::{HandModel, HandPose};
use dexgrasp::policy::RolloutState;
use dexgrasp::quality::{build_wrenches, FrictionModel, WrenchSet, GRAVITY};
use dexgrasp::scene::ContactSet;
use dexgrasp::so3::RigidTransform;
use nalgebra::{DMatrix, DVector, Point3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracles::{cube_contacts, sphere_contacts};
use super::random_rotation;

pub const SPHERE_R: f64 = 0.04;
pub const CUBE_H: f64 = 0.04;

pub fn wrenches(c: &ContactSet, rho: f64) -> WrenchSet {
    build_wrenches(c, &FrictionModel { mu: 0.5, cone_edges: 8 }, &Vector3::zeros(), rho)
}

/// Named synthetic grasps with their torque scale: pinches use two pad
/// contacts per side so the set is not degenerate about the pinch axis.
pub fn synthetic_grasps() -> Vec<(&'static str, WrenchSet)> {
    let s = 1.0 / SPHERE_R;
    let c = 1.0 / (CUBE_H * 3f64.sqrt());
    let third = 2.0 * std::f64::consts::PI / 3.0;
    let tri: Vec<Vector3<f64>> = (0..3).map(|k| Vector3::new((k as f64 * third).cos(), (k as f64 * third).sin(), -0.2)).collect();
    vec![
        (
            "sphere antipodal",
            wrenches(
                &sphere_contacts(SPHERE_R, &[
                    Vector3::new(1.0, 0.0, 0.25),
                    Vector3::new(1.0, 0.0, -0.25),
                    Vector3::new(-1.0, 0.0, 0.25),
                    Vector3::new(-1.0, 0.0, -0.25),
                ]),
                s,
            ),
        ),
        ("sphere three-finger", wrenches(&sphere_contacts(SPHERE_R, &tri), s)),
        (
            "box antipodal",
            wrenches(
                &cube_contacts(CUBE_H, &[
                    (0, 1.0, [0.0, 0.015]),
                    (0, 1.0, [0.0, -0.015]),
                    (0, -1.0, [0.0, 0.015]),
                    (0, -1.0, [0.0, -0.015]),
                ]),
                c,
            ),
        ),
        (
            "box three-finger",
            wrenches(
                &cube_contacts(CUBE_H, &[(0, 1.0, [0.02, 0.01]), (0, 1.0, [-0.02, 0.01]), (0, -1.0, [0.0, -0.01])]),
                c,
            ),
        ),
    ]
}

pub fn gravity_rhs(k: usize, mass: f64) -> DVector<f64> {
    let mut b = DVector::zeros(6);
    b[k / 2] = -mass * GRAVITY * if k % 2 == 0 { 1.0 } else { -1.0 };
    b
}

pub fn wrench_matrix(ws: &WrenchSet) -> DMatrix<f64> {
    DMatrix::from_fn(6, ws.len(), |r, c| ws.wrenches[c][r])
}

pub fn random_vec3(rng: &mut ChaCha8Rng, spread: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), rng.gen_range(-spread..spread))
}

/// States spread between far from and exactly at the goal, so that every
/// flag condition and the move bonus are exercised.
pub fn random_rollout_state(model: &HandModel, rng: &mut ChaCha8Rng) -> RolloutState {
    let start = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.05);
    let lifted = rng.gen_range(0.0..1.0);
    let object_pos = start + Vector3::new(0.0, 0.0, 0.3 * lifted) + random_vec3(rng, 0.03 * (1.0 - lifted) + 0.005);
    let object = RigidTransform::from_parts(Translation3::from(object_pos), random_rotation(rng));
    let goal_q = super::random_q(model, rng, 0.0);
    let goal = HandPose::new(
        RigidTransform::from_parts(Translation3::from(random_vec3(rng, 0.12)), random_rotation(rng)),
        goal_q.clone(),
    );
    let near = rng.gen_range(0.0..1.0) < 0.5;
    let spread = if near { 0.005 } else { 0.2 };
    let offset = RigidTransform::from_parts(
        Translation3::from(random_vec3(rng, spread)),
        UnitQuaternion::from_scaled_axis(random_vec3(rng, spread)),
    );
    let q = goal_q.iter().map(|v| v + rng.gen_range(-spread..spread)).collect();
    let hand = HandPose::new(offset * object * goal.root, q);
    RolloutState::from_model(model, hand, object, &start, goal, rng.gen_range(-1.0..1.0)).unwrap()
}

pub fn yaw_world(state: &RolloutState, yaw: f64) -> RolloutState {
    let y = RigidTransform::from_parts(Translation3::identity(), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw));
    let point = |p: &Vector3<f64>| (y * Point3::from(*p)).coords;
    RolloutState {
        hand: HandPose::new(y * state.hand.root, state.hand.q.clone()),
        fingertips: state.fingertips.iter().map(point).collect(),
        keypoints: state.keypoints.iter().map(point).collect(),
        object: y * state.object,
        target: point(&state.target),
        ..state.clone()
    }
}

