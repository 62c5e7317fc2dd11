//! Diversity and execution metrics over sets of grasp poses.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose};
use crate::so3::{geodesic_angle, rotation_std};

/// Height above its start that a lifted object must reach.
pub const LIFT_HEIGHT: f64 = 0.3;
/// Allowed distance from the lift target at the final step.
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Two roots count as sharing a rotation below this geodesic angle (rad).
pub const SAME_ROTATION_TOL: f64 = 1e-9;

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Standard deviations of translation (cm) and joint angles (degrees) over
/// poses sharing one root rotation. Each is the RMS over dimensions of the
/// per-dimension population standard deviation.
pub fn conditional_std(poses: &[HandPose]) -> Result<(f64, f64)> {
    if poses.len() < 2 {
        return Err(Error::InvalidInput("conditional std needs at least two poses".into()));
    }
    let r0 = poses[0].root.rotation.to_rotation_matrix();
    if poses.iter().any(|p| geodesic_angle(&p.root.rotation.to_rotation_matrix(), &r0) > SAME_ROTATION_TOL) {
        return Err(Error::InvalidInput("conditional std over poses with different rotations".into()));
    }
    let k = poses[0].q.len();
    if poses.iter().any(|p| p.q.len() != k) {
        return Err(Error::InvalidInput("poses have different joint counts".into()));
    }
    let t: Vec<f64> = (0..3)
        .map(|d| population_std(poses.iter().map(move |p| p.root.translation.vector[d])))
        .collect();
    let q: Vec<f64> = (0..k).map(|j| population_std(poses.iter().map(move |p| p.q[j]))).collect();
    let q_deg = if k == 0 { 0.0 } else { rms(&q).to_degrees() };
    Ok((100.0 * rms(&t), q_deg))
}

/// Mean over keypoints of each keypoint's positional standard deviation
/// `sqrt(mean ‖x − x̄‖²)`, in cm.
pub fn keypoint_std(model: &HandModel, poses: &[HandPose]) -> Result<f64> {
    if poses.len() < 2 {
        return Err(Error::InvalidInput("keypoint std needs at least two poses".into()));
    }
    let kps = poses.iter().map(|p| model.keypoints(p)).collect::<Result<Vec<_>>>()?;
    let n = kps.len() as f64;
    let j = kps[0].len();
    let total: f64 = (0..j)
        .map(|k| {
            let mean = kps.iter().map(|s| s[k]).sum::<Vector3<f64>>() / n;
            (kps.iter().map(|s| (s[k] - mean).norm_squared()).sum::<f64>() / n).sqrt()
        })
        .sum();
    Ok(100.0 * total / j as f64)
}

/// Mean keypoint position error between two poses, in cm.
pub fn mpe(model: &HandModel, pose: &HandPose, goal: &HandPose) -> Result<f64> {
    let a = model.keypoints(pose)?;
    let b = model.keypoints(goal)?;
    Ok(100.0 * a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64)
}

/// Whether the object ended within [`SUCCESS_RADIUS`] of the point
/// [`LIFT_HEIGHT`] above where it started.
pub fn success(object_pos: &Vector3<f64>, initial_pos: &Vector3<f64>) -> bool {
    (object_pos - (initial_pos + Vector3::new(0.0, 0.0, LIFT_HEIGHT))).norm() < SUCCESS_RADIUS
}

/// Mean, min and max of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Diversity and quality summary of a grasp set. Every deviation is 0 for a
/// single pose; conditional deviations are `None` when a larger set has no
/// rotation shared by two or more poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub sigma_r_deg: f64,
    pub sigma_t_given_r_cm: Option<f64>,
    pub sigma_theta_given_r_deg: Option<f64>,
    pub sigma_keypoints_cm: f64,
    pub q1: Option<Summary>,
    /// Object penetration depth in cm.
    pub penetration_cm: Option<Summary>,
}

/// Groups pose indices by shared root rotation, in first-seen order.
pub fn rotation_groups(poses: &[HandPose]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in poses.iter().enumerate() {
        let r = p.root.rotation.to_rotation_matrix();
        let hit = groups.iter_mut().find(|g| {
            geodesic_angle(&poses[g[0]].root.rotation.to_rotation_matrix(), &r) <= SAME_ROTATION_TOL
        });
        match hit {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

impl MetricReport {
    /// Builds the report. Conditional deviations average over every rotation
    /// group with two or more poses. `q1` and `penetration` (meters) may be
    /// empty.
    pub fn compute(model: &HandModel, poses: &[HandPose], q1: &[f64], penetration: &[f64]) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidInput("metric report over an empty pose set".into()));
        }
        let (sigma_r_deg, sigma_keypoints_cm) = if poses.len() < 2 {
            (0.0, 0.0)
        } else {
            let rotations: Vec<_> = poses.iter().map(|p| p.root.rotation.to_rotation_matrix()).collect();
            (rotation_std(&rotations)?, keypoint_std(model, poses)?)
        };
        let conditional = rotation_groups(poses)
            .into_iter()
            .filter(|g| g.len() >= 2)
            .map(|g| conditional_std(&g.iter().map(|&i| poses[i].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let single = poses.len() < 2;
        let mean = |f: fn(&(f64, f64)) -> f64| {
            if single {
                Some(0.0)
            } else {
                (!conditional.is_empty()).then(|| conditional.iter().map(f).sum::<f64>() / conditional.len() as f64)
            }
        };
        let pen_cm: Vec<f64> = penetration.iter().map(|p| 100.0 * p).collect();
        Ok(Self {
            count: poses.len(),
            sigma_r_deg,
            sigma_t_given_r_cm: mean(|c| c.0),
            sigma_theta_given_r_deg: mean(|c| c.1),
            sigma_keypoints_cm,
            q1: Summary::of(q1),
            penetration_cm: Summary::of(&pen_cm),
        })
    }

    pub const CSV_HEADER: &'static str =
        "count,q1_mean,penetration_mean_cm,sigma_r_deg,sigma_t_given_r_cm,sigma_theta_given_r_deg,sigma_keypoints_cm";

    /// One CSV row in [`Self::CSV_HEADER`] order; not-applicable cells are `NA`.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{}",
            self.count,
            opt(self.q1.map(|s| s.mean)),
            opt(self.penetration_cm.map(|s| s.mean)),
            self.sigma_r_deg,
            opt(self.sigma_t_given_r_cm),
            opt(self.sigma_theta_given_r_deg),
            self.sigma_keypoints_cm
        )
    }
}
