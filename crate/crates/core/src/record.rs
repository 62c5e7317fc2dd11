//! Grasp dataset records stored as JSON lines.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::HandPose;
use crate::so3::RigidTransform;

/// Object rescaling factors used when building the dataset.
pub const SCALES: [f64; 5] = [0.06, 0.08, 0.10, 0.12, 0.15];
/// Major/minor schema version written into every record.
pub const SCHEMA_VERSION: &str = "1.0";

/// Rigid transform as a `(w, x, y, z)` quaternion plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        let v = t.translation.vector;
        Self { rotation_wxyz: [q.w, q.i, q.j, q.k], translation: [v.x, v.y, v.z] }
    }
}

impl TransformRecord {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        if !self.rotation_wxyz.iter().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("transform has non-finite entries".into()));
        }
        let [w, x, y, z] = self.rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("rotation quaternion has norm {n}")));
        }
        // Already-unit quaternions are kept bit-exact.
        let rot = if (n - 1.0).abs() <= 1e-15 { UnitQuaternion::new_unchecked(q) } else { UnitQuaternion::new_normalize(q) };
        let [tx, ty, tz] = self.translation;
        Ok(RigidTransform::from_parts(Translation3::new(tx, ty, tz), rot))
    }
}

/// Hand pose as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPoseRecord {
    pub root: TransformRecord,
    pub q: Vec<f64>,
}

impl From<&HandPose> for HandPoseRecord {
    fn from(p: &HandPose) -> Self {
        Self { root: TransformRecord::from(&p.root), q: p.q.clone() }
    }
}

impl HandPoseRecord {
    pub fn to_pose(&self) -> Result<HandPose> {
        if !self.q.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("joint angles are not finite".into()));
        }
        Ok(HandPose::new(self.root.to_transform()?, self.q.clone()))
    }
}

/// Evaluation results attached to a record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraspMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_penetration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_penetration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity_resistant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub schema: String,
    pub object_id: String,
    pub scale: f64,
    pub object_pose: TransformRecord,
    pub hand_pose: HandPoseRecord,
    #[serde(default)]
    pub metrics: GraspMetrics,
    pub provenance: Provenance,
}

impl GraspRecord {
    pub fn new(
        object_id: impl Into<String>,
        scale: f64,
        object_pose: &RigidTransform,
        hand_pose: &HandPose,
        provenance: Provenance,
    ) -> Self {
        Self {
            schema: SCHEMA_VERSION.to_string(),
            object_id: object_id.into(),
            scale,
            object_pose: object_pose.into(),
            hand_pose: hand_pose.into(),
            metrics: GraspMetrics::default(),
            provenance,
        }
    }

    fn check(&self, strict: bool) -> std::result::Result<(), String> {
        check_schema(&self.schema)?;
        if strict && !SCALES.iter().any(|s| (s - self.scale).abs() < 1e-12) {
            return Err(format!("scale {} is not one of {:?}", self.scale, SCALES));
        }
        self.object_pose.to_transform().map_err(|e| e.to_string())?;
        self.hand_pose.to_pose().map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Accepts any record schema whose major is not newer than this build's.
pub fn check_schema(found: &str) -> std::result::Result<(), String> {
    check_version(found, SCHEMA_VERSION).map_err(|e| e.to_string())
}

/// Rejects `found` when its major version is newer than `supported`'s or
/// unparseable.
pub fn check_version(found: &str, supported: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match (major(found), major(supported)) {
        (Some(f), Some(s)) if f <= s => Ok(()),
        _ => Err(Error::SchemaVersion { found: found.to_string(), supported: supported.to_string() }),
    }
}

/// Reads a JSON-lines record file. Blank lines are skipped. With `strict`,
/// scales outside [`SCALES`] are rejected.
pub fn read_records(path: &Path, strict: bool) -> Result<Vec<GraspRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraspRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        rec.check(strict).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[GraspRecord]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
