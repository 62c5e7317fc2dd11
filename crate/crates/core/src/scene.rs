//! Table-top scenes, point-cloud canonicalization, contact heat maps and
//! contact extraction.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose, PosedHand};
use crate::record::TransformRecord;
use crate::so3::{RigidTransform, Rotation};

/// Default sigmoid sharpness for contact heat.
pub const DEFAULT_BETA: f64 = 60.0;
/// Default contact distance for contact extraction.
pub const DEFAULT_CONTACT_TOLERANCE: f64 = 0.01;
const NORMAL_NEIGHBORS: usize = 16;

/// An object point cloud resting on the table plane `z = 0`; `z ≥ 0` is free
/// space. Points and normals are stored in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    object_pose: RigidTransform,
}

impl Scene {
    pub fn new(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>, object_pose: RigidTransform) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("scene has no object points".into()));
        }
        if points.len() != normals.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: normals.len() });
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput(format!("object point {i} is not finite")));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidInput(format!("object normal {i} is not unit length")));
        }
        Ok(Self { points, normals, object_pose })
    }

    /// Builds a scene from points only, estimating normals by a local plane
    /// fit over 16 neighbors, oriented away from the cloud centroid.
    pub fn with_estimated_normals(points: Vec<Vector3<f64>>, object_pose: RigidTransform) -> Result<Self> {
        let normals = estimate_normals(&points);
        Self::new(points, normals, object_pose)
    }

    /// Sphere of `radius` resting on the table, `n` Fibonacci-lattice points.
    pub fn sphere(radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0) || n == 0 {
            return Err(Error::InvalidInput("sphere needs positive radius and points".into()));
        }
        let golden = PI * (3.0 - 5f64.sqrt());
        let normals: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * i as f64;
                Vector3::new(r * a.cos(), r * a.sin(), z)
            })
            .collect();
        let center = Vector3::new(0.0, 0.0, radius);
        let points = normals.iter().map(|d| center + radius * d).collect();
        Self::new(points, normals, RigidTransform::translation(0.0, 0.0, radius))
    }

    /// Axis-aligned box resting on the table with roughly `n` points spread
    /// over its faces in proportion to their area.
    pub fn cuboid(half_extents: Vector3<f64>, n: usize) -> Result<Self> {
        if half_extents.iter().any(|h| !(*h > 0.0)) || n == 0 {
            return Err(Error::InvalidInput("box needs positive half extents and points".into()));
        }
        let h = half_extents;
        let area = 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
        let spacing = (area / n as f64).sqrt();
        let center = Vector3::new(0.0, 0.0, h.z);
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let nu = ((2.0 * h[u] / spacing).round() as usize).max(1);
            let nv = ((2.0 * h[v] / spacing).round() as usize).max(1);
            for sign in [1.0, -1.0] {
                for i in 0..nu {
                    for j in 0..nv {
                        let mut p = Vector3::zeros();
                        p[axis] = sign * h[axis];
                        p[u] = -h[u] + (i as f64 + 0.5) * 2.0 * h[u] / nu as f64;
                        p[v] = -h[v] + (j as f64 + 0.5) * 2.0 * h[v] / nv as f64;
                        let mut nrm = Vector3::zeros();
                        nrm[axis] = sign;
                        points.push(center + p);
                        normals.push(nrm);
                    }
                }
            }
        }
        Self::new(points, normals, RigidTransform::translation(0.0, 0.0, h.z))
    }

    /// Places an object-frame cloud on the table: rotates it by `rotation`
    /// and lifts it so its lowest point touches `z = 0`.
    pub fn rest_on_table(
        points: &[Vector3<f64>],
        normals: &[Vector3<f64>],
        rotation: &Rotation,
    ) -> Result<Self> {
        let rotated: Vec<Vector3<f64>> = points.iter().map(|p| rotation * p).collect();
        let lift = -rotated.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let pose = RigidTransform::from_parts(
            Translation3::new(0.0, 0.0, lift),
            UnitQuaternion::from_rotation_matrix(rotation),
        );
        Self::new(
            rotated.into_iter().map(|p| p + Vector3::new(0.0, 0.0, lift)).collect(),
            normals.iter().map(|n| rotation * n).collect(),
            pose,
        )
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn object_pose(&self) -> &RigidTransform {
        &self.object_pose
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Center and radius of a ball around the axis-aligned bounding box.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        let (lo, hi) = self.aabb();
        let c = 0.5 * (lo + hi);
        let r = self.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
        (c, r)
    }

    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let lo = self.points.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = self.points.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        (lo, hi)
    }

    pub fn top_z(&self) -> f64 {
        self.aabb().1.z
    }

    /// Applies a rigid transform to the whole scene (points, normals, pose).
    pub fn transformed(&self, t: &RigidTransform) -> Scene {
        Scene {
            points: self.points.iter().map(|p| t.transform_point(&Point3::from(*p)).coords).collect(),
            normals: self.normals.iter().map(|n| t.rotation * n).collect(),
            object_pose: t * self.object_pose,
        }
    }

    /// Index and distance of the object point nearest to `x`.
    pub fn nearest_point(&self, x: &Vector3<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - x).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Gaussian-weighted average of the object normals around `x`,
    /// normalized, with its Jacobian `∂n/∂x`. Weights are taken relative to
    /// the nearest point, so the field is defined at any distance; points
    /// whose relative weight is below `e^-18` are ignored.
    pub fn smooth_normal(&self, x: &Vector3<f64>, sigma: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let inv = 1.0 / (2.0 * sigma * sigma);
        let d2: Vec<f64> = self.points.iter().map(|p| (x - p).norm_squared()).collect();
        let d2min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let mut u = Vector3::zeros();
        let mut du = Matrix3::zeros();
        for ((p, n), d) in self.points.iter().zip(&self.normals).zip(&d2) {
            let e = (d - d2min) * inv;
            if e > 18.0 {
                continue;
            }
            let w = (-e).exp();
            u += w * n;
            // ∂w/∂x = -2 inv w (x - p); the shift by d2min cancels on normalization.
            du -= (2.0 * inv * w) * n * (x - p).transpose();
        }
        let norm = u.norm();
        if norm < 1e-300 {
            let (j, _) = self.nearest_point(x);
            return (self.normals[j], Matrix3::zeros());
        }
        let n = u / norm;
        let jac = (Matrix3::identity() - n * n.transpose()) * du / norm;
        (n, jac)
    }

    /// Writes `<path>` as ASCII PLY (points and normals) and `<path>.json`
    /// with the object pose and optional id/scale.
    pub fn write_ply(&self, path: &Path, meta: &SceneMeta) -> Result<()> {
        write_ply(path, &self.points, Some(&self.normals))?;
        let side = SceneSidecar { object_pose: TransformRecord::from(&self.object_pose), meta: meta.clone() };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    /// Reads a PLY cloud and its sidecar (identity pose when absent).
    /// Normals are estimated when the PLY has none.
    pub fn read_ply(path: &Path) -> Result<(Scene, SceneMeta)> {
        let (points, normals) = read_ply(path)?;
        let side = sidecar_path(path);
        let (pose, meta) = if side.exists() {
            let s: SceneSidecar = serde_json::from_str(&std::fs::read_to_string(side)?)?;
            (s.object_pose.to_transform()?, s.meta)
        } else {
            (RigidTransform::identity(), SceneMeta::default())
        };
        let scene = match normals {
            Some(n) => Scene::new(points, n, pose)?,
            None => Scene::with_estimated_normals(points, pose)?,
        };
        Ok((scene, meta))
    }
}

/// Object bookkeeping stored next to a scene cloud.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default)]
    pub object_id: String,
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneSidecar {
    object_pose: TransformRecord,
    #[serde(flatten)]
    meta: SceneMeta,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn estimate_normals(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len().max(1) as f64;
    points
        .iter()
        .map(|p| {
            let mut d: Vec<(f64, usize)> =
                points.iter().enumerate().map(|(j, q)| ((q - p).norm_squared(), j)).collect();
            let k = NORMAL_NEIGHBORS.min(d.len());
            d.select_nth_unstable_by(k - 1, |a, b| a.0.partial_cmp(&b.0).unwrap());
            let nb: Vec<Vector3<f64>> = d[..k].iter().map(|(_, j)| points[*j]).collect();
            let mean = nb.iter().sum::<Vector3<f64>>() / k as f64;
            let cov = nb.iter().fold(Matrix3::zeros(), |acc, q| acc + (q - mean) * (q - mean).transpose());
            let eig = SymmetricEigen::new(cov);
            let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let n = if n.norm() > 0.0 { n.normalize() } else { Vector3::z() };
            if n.dot(&(p - centroid)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect()
}

/// Expresses a cloud in the frame rotated by `r`: every point becomes `R⁻¹p`.
pub fn canonicalize(points: &[Vector3<f64>], r: &Rotation) -> Vec<Vector3<f64>> {
    let inv = r.inverse();
    points.iter().map(|p| inv * p).collect()
}

/// Per-object-point contact heat in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactMap {
    pub heat: Vec<f64>,
}

impl ContactMap {
    pub fn new(heat: Vec<f64>) -> Result<Self> {
        if let Some(i) = heat.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput(format!("contact heat {i} = {} outside [0, 1]", heat[i])));
        }
        Ok(Self { heat })
    }

    pub fn len(&self) -> usize {
        self.heat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heat.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Heat for a distance: `2 − 2·sigmoid(βD)`, evaluated as `2·sigmoid(−βD)`
/// so that the tail does not cancel to zero.
pub fn heat_of_distance(distance: f64, beta: f64) -> f64 {
    (2.0 * sigmoid(-beta * distance)).clamp(0.0, 1.0)
}

/// For each object point, the nearest hand point and its distance.
pub fn nearest_hand_points(object: &[Vector3<f64>], hand: &[Vector3<f64>]) -> Vec<(usize, f64)> {
    object
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, h) in hand.iter().enumerate() {
                let d = (p - h).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

pub fn contact_heat(object: &[Vector3<f64>], hand: &[Vector3<f64>], beta: f64) -> Result<ContactMap> {
    if object.is_empty() || hand.is_empty() {
        return Err(Error::InvalidInput("contact heat needs non-empty object and hand clouds".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let heat = nearest_hand_points(object, hand)
        .into_iter()
        .map(|(_, d)| heat_of_distance(d, beta))
        .collect();
    ContactMap::new(heat)
}

/// Object-surface contacts with outward object normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Hand link touching each contact, when known.
    pub links: Vec<Option<usize>>,
}

impl ContactSet {
    pub fn new(points: Vec<Vector3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: normals.len() });
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidInput(format!("contact normal {i} is not unit length")));
        }
        let links = vec![None; points.len()];
        Ok(Self { points, normals, links })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vector3<f64>, normal: Vector3<f64>, link: Option<usize>) {
        self.points.push(point);
        self.normals.push(normal);
        self.links.push(link);
    }
}

/// An object point within the contact tolerance of the hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactCandidate {
    pub index: usize,
    pub link: usize,
    pub distance: f64,
}

/// All object points with `|hand_sdf| ≤ tolerance`, before deduplication.
pub fn contact_candidates(scene: &Scene, posed: &PosedHand, tolerance: f64) -> Vec<ContactCandidate> {
    scene
        .points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let s = posed.sdf_below(p, tolerance + 1e-12)?;
            (s.distance.abs() <= tolerance).then_some(ContactCandidate {
                index,
                link: s.primitive.link,
                distance: s.distance,
            })
        })
        .collect()
}

/// Contacts for wrench analysis: object points within `tolerance` of the
/// hand surface, keeping the closest one per hand link.
pub fn extract_contacts(scene: &Scene, model: &HandModel, pose: &HandPose, tolerance: f64) -> Result<ContactSet> {
    let posed = model.pose(pose)?;
    Ok(contacts_from_posed(scene, &posed, tolerance))
}

pub fn contacts_from_posed(scene: &Scene, posed: &PosedHand, tolerance: f64) -> ContactSet {
    let mut best: Vec<Option<ContactCandidate>> = vec![None; posed.model.links().len()];
    for c in contact_candidates(scene, posed, tolerance) {
        let slot = &mut best[c.link];
        if slot.map_or(true, |b| c.distance.abs() < b.distance.abs()) {
            *slot = Some(c);
        }
    }
    let mut set = ContactSet::default();
    for c in best.into_iter().flatten() {
        set.push(scene.points[c.index], scene.normals[c.index], Some(c.link));
    }
    set
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>], normals: Option<&[Vector3<f64>]>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(f, "property double x\nproperty double y\nproperty double z")?;
    if normals.is_some() {
        writeln!(f, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    writeln!(f, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        write!(f, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        if let Some(n) = normals {
            write!(f, " {:?} {:?} {:?}", n[i].x, n[i].y, n[i].z)?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads an ASCII PLY vertex list; normals are returned when `nx ny nz`
/// properties are present.
#[allow(clippy::type_complexity)]
pub fn read_ply(path: &Path) -> Result<(Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let perr = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut saw_magic = false;
    for (i, line) in lines.by_ref() {
        let line = line?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] => saw_magic = true,
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(perr(i, "only ASCII PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| perr(i, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(perr(i, &format!("unexpected header line `{line}`"))),
        }
    }
    if !saw_magic {
        return Err(perr(0, "missing `ply` magic"));
    }
    let count = count.ok_or_else(|| perr(0, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(perr(0, "vertex element lacks x/y/z")),
    };
    let nidx = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if nidx.is_some() { count } else { 0 });
    for _ in 0..count {
        let (i, line) = lines.next().ok_or_else(|| perr(0, "truncated vertex list"))?;
        let line = line?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(i, "bad number in vertex"))?;
        if vals.len() < props.len() {
            return Err(perr(i, "too few vertex properties"));
        }
        points.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
        if let Some((a, b, c)) = nidx {
            normals.push(Vector3::new(vals[a], vals[b], vals[c]));
        }
    }
    Ok((points, nidx.map(|_| normals)))
}
