//! Yaw canonicalization of rollout states and the goal-conditioned grasp
//! reward, for use by an external rollout engine.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose, KEYPOINT_COUNT};
use crate::metrics::LIFT_HEIGHT;
use crate::so3::{geodesic_angle, rot_z, RigidTransform};

/// Static frame at `(0, 0, h0)` rotated by `yaw` about z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFrame {
    pub origin: Vector3<f64>,
    pub yaw: f64,
}

impl CanonicalFrame {
    pub fn new(h0: f64, yaw: f64) -> Self {
        Self { origin: Vector3::new(0.0, 0.0, h0), yaw }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Frame in which the initial hand rotation has Euler angles
    /// `(π/2, 0, 0)`; exact when the hand starts as a pure yaw of that
    /// rotation, as the rollout setup places it.
    pub fn from_initial_hand(root: &RigidTransform) -> Self {
        let base = Rotation3::from_euler_angles(FRAC_PI_2, 0.0, 0.0);
        let m = root.rotation.to_rotation_matrix() * base.inverse();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        Self::new(root.translation.vector.z, yaw)
    }

    /// World to frame.
    pub fn transform(&self) -> RigidTransform {
        let rot = UnitQuaternion::from_rotation_matrix(&rot_z(-self.yaw));
        RigidTransform::from_parts(Translation3::from(-(rot * self.origin)), rot)
    }
}

/// Oracle state of one rollout step. Positions and poses are in the world
/// frame except the goal, which is the hand pose relative to the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutState {
    pub hand: HandPose,
    pub fingertips: Vec<Vector3<f64>>,
    pub keypoints: Vec<Vector3<f64>>,
    pub object: RigidTransform,
    pub target: Vector3<f64>,
    pub goal: HandPose,
    /// Goal keypoints in the object frame.
    pub goal_keypoints: Vec<Vector3<f64>>,
    /// Normalized root-lift action in `[-1, 1]`.
    pub a_z: f64,
}

impl RolloutState {
    /// Fills keypoints and fingertips by forward kinematics. The lift target
    /// is [`LIFT_HEIGHT`] above `initial_object`.
    pub fn from_model(
        model: &HandModel,
        hand: HandPose,
        object: RigidTransform,
        initial_object: &Vector3<f64>,
        goal: HandPose,
        a_z: f64,
    ) -> Result<Self> {
        let posed = model.pose(&hand)?;
        let goal_keypoints = model.keypoints(&goal)?;
        Ok(Self {
            fingertips: posed.fingertips(),
            keypoints: posed.keypoints(),
            hand,
            object,
            target: initial_object + Vector3::new(0.0, 0.0, LIFT_HEIGHT),
            goal,
            goal_keypoints,
            a_z,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.hand.q.len() != self.goal.q.len() {
            return Err(Error::DimensionMismatch { expected: self.goal.q.len(), got: self.hand.q.len() });
        }
        if self.keypoints.len() != self.goal_keypoints.len() {
            return Err(Error::DimensionMismatch { expected: self.goal_keypoints.len(), got: self.keypoints.len() });
        }
        let finite = self.hand.is_finite()
            && self.goal.is_finite()
            && self.a_z.is_finite()
            && self.target.iter().all(|v| v.is_finite())
            && self.object.translation.vector.iter().all(|v| v.is_finite())
            && self.object.rotation.coords.iter().all(|v| v.is_finite())
            && self.fingertips.iter().chain(&self.keypoints).chain(&self.goal_keypoints).all(|p| p.iter().all(|v| v.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidInput("rollout state is not finite".into()))
        }
    }

    /// Hand root pose in the object frame.
    pub fn hand_in_object(&self) -> RigidTransform {
        self.object.inverse() * self.hand.root
    }
}

/// Expresses every world-frame quantity of `state` in `frame`. The goal is
/// object-relative and is left unchanged.
pub fn canonicalize_state(state: &RolloutState, frame: &CanonicalFrame) -> RolloutState {
    let t = frame.transform();
    let point = |p: &Vector3<f64>| (t * nalgebra::Point3::from(*p)).coords;
    RolloutState {
        hand: HandPose::new(t * state.hand.root, state.hand.q.clone()),
        fingertips: state.fingertips.iter().map(point).collect(),
        keypoints: state.keypoints.iter().map(point).collect(),
        object: t * state.object,
        target: point(&state.target),
        goal: state.goal.clone(),
        goal_keypoints: state.goal_keypoints.clone(),
        a_z: state.a_z,
    }
}

/// Reward weights and flag thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_gq: f64,
    pub w_gt: f64,
    pub w_gr: f64,
    pub w_r: f64,
    pub w_l: f64,
    pub w_m: f64,
    pub w_b: f64,
    /// Threshold on the weighted keypoint distance to the goal.
    pub lambda_f1: f64,
    /// Threshold on the summed fingertip-to-object distance (m).
    pub lambda_f2: f64,
    /// Threshold on the object-to-target distance (m).
    pub lambda_0: f64,
    /// Per-keypoint weights of the goal flag.
    pub keypoint_weights: Vec<f64>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_gq: 0.1,
            w_gt: 0.6,
            w_gr: 0.1,
            w_r: 0.5,
            w_l: 0.1,
            w_m: 2.0,
            w_b: 10.0,
            lambda_f1: 0.05,
            lambda_f2: 0.25,
            lambda_0: 0.02,
            keypoint_weights: vec![1.0 / KEYPOINT_COUNT as f64; KEYPOINT_COUNT],
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.w_gq,
            self.w_gt,
            self.w_gr,
            self.w_r,
            self.w_l,
            self.w_m,
            self.w_b,
            self.lambda_f1,
            self.lambda_f2,
            self.lambda_0,
        ];
        if scalars.iter().chain(&self.keypoint_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("reward weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-term rewards of one step; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub goal: f64,
    pub reach: f64,
    pub lift: f64,
    #[serde(rename = "move")]
    pub move_: f64,
    /// Number of satisfied lift conditions, 0 to 3.
    pub flag: u8,
    /// Geodesic angle between the object-relative hand rotation and the goal.
    pub rotation_error: f64,
    pub total: f64,
}

/// Goal-conditioned reward `r_goal + r_reach + r_lift + r_move`.
pub fn reward(state: &RolloutState, weights: &RewardWeights) -> Result<RewardComponents> {
    weights.validate()?;
    state.validate()?;
    if weights.keypoint_weights.len() != state.keypoints.len() {
        return Err(Error::DimensionMismatch { expected: state.keypoints.len(), got: weights.keypoint_weights.len() });
    }
    let rel = state.hand_in_object();
    let joint_error: f64 = state.hand.q.iter().zip(&state.goal.q).map(|(a, b)| (a - b).abs()).sum();
    let translation_error = (rel.translation.vector - state.goal.root.translation.vector).norm();
    let rotation_error = geodesic_angle(&rel.rotation.to_rotation_matrix(), &state.goal.root.rotation.to_rotation_matrix());
    let goal = -weights.w_gq * joint_error - weights.w_gt * translation_error - weights.w_gr * rotation_error;

    let x_obj = state.object.translation.vector;
    let finger_distance: f64 = state.fingertips.iter().map(|f| (f - x_obj).norm()).sum();
    let reach = -weights.w_r * finger_distance;

    let to_object = state.object.inverse();
    let keypoint_distance: f64 = state
        .keypoints
        .iter()
        .zip(&state.goal_keypoints)
        .zip(&weights.keypoint_weights)
        .map(|((x, g), w)| w * ((to_object * nalgebra::Point3::from(*x)).coords - g).norm())
        .sum();
    let d_obj = (x_obj - state.target).norm();
    let flag = u8::from(keypoint_distance < weights.lambda_f1)
        + u8::from(finger_distance < weights.lambda_f2)
        + u8::from(d_obj > weights.lambda_0);
    let lift = if flag == 3 { weights.w_l * (1.0 + state.a_z) } else { 0.0 };

    let mut move_ = -weights.w_m * d_obj;
    if d_obj < weights.lambda_0 {
        move_ += 1.0 / (1.0 + weights.w_b * d_obj);
    }
    Ok(RewardComponents { goal, reach, lift, move_, flag, rotation_error, total: goal + reach + lift + move_ })
}
