//! Articulated hand: kinematic tree, forward kinematics, keypoints, surface
//! sampling and the analytic signed distance to the hand's collision
//! primitives.

mod descriptor;
pub mod primitive;

use std::collections::HashSet;

use nalgebra::{Point3, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use descriptor::{parse_descriptor, write_descriptor};
pub use primitive::{Primitive, SdfSample, Shape};

use crate::error::{check_dim, Error, Result};
use crate::so3::RigidTransform;

/// Number of keypoints every hand model defines.
pub const KEYPOINT_COUNT: usize = 15;

/// The bundled 22-DoF five-finger hand descriptor.
pub const BUNDLED_DESCRIPTOR: &str = include_str!("../../assets/shadowlite.handdesc");

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Joint frame relative to the parent link frame at `q = 0`.
    pub origin: RigidTransform,
    pub axis: Unit<Vector3<f64>>,
    pub lower: f64,
    pub upper: f64,
}

/// A point rigidly attached to a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoint {
    pub link: usize,
    pub offset: Vector3<f64>,
}

/// Raw description before validation; what the descriptor parser produces.
#[derive(Debug, Clone)]
pub struct HandSpec {
    pub name: String,
    pub palm_normal: Vector3<f64>,
    pub surface_samples: usize,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub keypoints: Vec<LinkPoint>,
    pub fingertips: Vec<LinkPoint>,
}

/// Grasp pose `(R, t, q)`: hand root transform and joint angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub root: RigidTransform,
    pub q: Vec<f64>,
}

impl HandPose {
    pub fn new(root: RigidTransform, q: Vec<f64>) -> Self {
        Self { root, q }
    }

    /// Tangent dimension `6 + K`.
    pub fn tangent_dim(&self) -> usize {
        6 + self.q.len()
    }

    /// Moves along a tangent vector `[ω, v, δq]`: the rotation is
    /// left-multiplied by `exp(ω)`.
    pub fn retract(&self, delta: &[f64]) -> HandPose {
        debug_assert_eq!(delta.len(), self.tangent_dim());
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        // Composed on quaternions and renormalized so rounding in the norm
        // cannot compound across many small steps.
        let rotation = nalgebra::UnitQuaternion::from_scaled_axis(w) * self.root.rotation;
        let mut root = self.root;
        root.rotation = nalgebra::UnitQuaternion::new_normalize(rotation.into_inner());
        root.translation.vector += v;
        let q = self.q.iter().zip(&delta[6..]).map(|(a, b)| a + b).collect();
        HandPose { root, q }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
            && self.root.translation.vector.iter().all(|v| v.is_finite())
            && self.root.rotation.coords.iter().all(|v| v.is_finite())
    }
}

/// Collision primitive addressed by link and index within the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimitiveId {
    pub link: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct HandModel {
    name: String,
    palm_normal: Unit<Vector3<f64>>,
    links: Vec<Link>,
    joints: Vec<Joint>,
    keypoints: Vec<LinkPoint>,
    fingertips: Vec<LinkPoint>,
    surface_sample_count: usize,
    root: usize,
    parent_joint: Vec<Option<usize>>,
    joint_order: Vec<usize>,
    chains: Vec<Vec<usize>>,
    surface_samples: Vec<LinkPoint>,
    collision_pairs: Vec<(PrimitiveId, PrimitiveId)>,
}

impl PartialEq for HandModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.palm_normal == other.palm_normal
            && self.links == other.links
            && self.joints == other.joints
            && self.keypoints == other.keypoints
            && self.fingertips == other.fingertips
            && self.surface_sample_count == other.surface_sample_count
    }
}

impl HandModel {
    /// The bundled simplified five-finger hand (K = 22).
    pub fn bundled() -> Self {
        parse_descriptor(BUNDLED_DESCRIPTOR).expect("bundled descriptor is valid")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        parse_descriptor(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, write_descriptor(self))?;
        Ok(())
    }

    pub fn from_spec(spec: HandSpec) -> Result<Self> {
        let HandSpec { name, palm_normal, surface_samples, links, joints, keypoints, fingertips } = spec;
        let nlinks = links.len();
        if nlinks == 0 {
            return Err(Error::Descriptor("no links".into()));
        }
        let mut names = HashSet::new();
        for l in &links {
            if !names.insert(l.name.as_str()) {
                return Err(Error::Descriptor(format!("link {}: duplicate name", l.name)));
            }
            for p in &l.primitives {
                let ok = match p.shape {
                    Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
                    Shape::Capsule { radius, half_length } => radius > 0.0 && half_length > 0.0,
                };
                if !ok {
                    return Err(Error::Descriptor(format!(
                        "link {}: primitive dimensions must be positive",
                        l.name
                    )));
                }
            }
        }
        let mut parent_joint = vec![None; nlinks];
        let mut jnames = HashSet::new();
        for (j, joint) in joints.iter().enumerate() {
            if !jnames.insert(joint.name.as_str()) {
                return Err(Error::Descriptor(format!("joint {}: duplicate name", joint.name)));
            }
            if !(joint.lower <= joint.upper) {
                return Err(Error::Descriptor(format!(
                    "joint {}: upper limit {} is below lower limit {}",
                    joint.name, joint.upper, joint.lower
                )));
            }
            if joint.parent == joint.child {
                return Err(Error::Descriptor(format!("joint {}: parent equals child", joint.name)));
            }
            if let Some(prev) = parent_joint[joint.child] {
                let prev: &Joint = &joints[prev];
                return Err(Error::Descriptor(format!(
                    "joint {}: link {} already has parent joint {}",
                    joint.name, links[joint.child].name, prev.name
                )));
            }
            parent_joint[joint.child] = Some(j);
        }
        let roots: Vec<usize> = (0..nlinks).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            let names: Vec<&str> = roots.iter().map(|&l| links[l].name.as_str()).collect();
            return Err(Error::Descriptor(format!(
                "kinematic graph must have exactly one root link, found {:?}",
                names
            )));
        }
        let root = roots[0];
        // Walk from the root; anything unreached sits on a cycle.
        let mut chains: Vec<Option<Vec<usize>>> = vec![None; nlinks];
        chains[root] = Some(Vec::new());
        let mut joint_order = Vec::with_capacity(joints.len());
        let mut frontier = vec![root];
        while let Some(l) = frontier.pop() {
            for (j, joint) in joints.iter().enumerate() {
                if joint.parent == l {
                    let mut chain = chains[l].clone().unwrap();
                    chain.push(j);
                    chains[joint.child] = Some(chain);
                    joint_order.push(j);
                    frontier.push(joint.child);
                }
            }
        }
        if let Some(l) = chains.iter().position(|c| c.is_none()) {
            return Err(Error::Descriptor(format!(
                "link {} is not reachable from root {} (cyclic kinematic graph)",
                links[l].name, links[root].name
            )));
        }
        let chains: Vec<Vec<usize>> = chains.into_iter().map(Option::unwrap).collect();
        if keypoints.len() != KEYPOINT_COUNT {
            return Err(Error::Descriptor(format!(
                "expected {KEYPOINT_COUNT} keypoints, found {}",
                keypoints.len()
            )));
        }
        if palm_normal.norm() < 1e-12 {
            return Err(Error::Descriptor("palm normal must be non-zero".into()));
        }
        if surface_samples == 0 {
            return Err(Error::Descriptor("surface sample count must be positive".into()));
        }
        let mut model = HandModel {
            name,
            palm_normal: Unit::new_normalize(palm_normal),
            links,
            joints,
            keypoints,
            fingertips,
            surface_sample_count: surface_samples,
            root,
            parent_joint,
            joint_order,
            chains,
            surface_samples: Vec::new(),
            collision_pairs: Vec::new(),
        };
        model.collision_pairs = model.compute_collision_pairs();
        model.surface_samples = model.compute_surface_samples();
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Degrees of freedom `K`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn root_link(&self) -> usize {
        self.root
    }

    pub fn keypoint_defs(&self) -> &[LinkPoint] {
        &self.keypoints
    }

    pub fn fingertip_defs(&self) -> &[LinkPoint] {
        &self.fingertips
    }

    /// Palm approach direction in the root frame.
    pub fn palm_normal(&self) -> Unit<Vector3<f64>> {
        self.palm_normal
    }

    pub fn surface_sample_count(&self) -> usize {
        self.surface_sample_count
    }

    /// Fixed link-local surface samples used for contact maps.
    pub fn surface_sample_defs(&self) -> &[LinkPoint] {
        &self.surface_samples
    }

    /// Primitive pairs checked for self-penetration.
    pub fn collision_pairs(&self) -> &[(PrimitiveId, PrimitiveId)] {
        &self.collision_pairs
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Joints on the path from the root to `link`, root first.
    pub fn chain(&self, link: usize) -> &[usize] {
        &self.chains[link]
    }

    pub fn parent_link(&self, link: usize) -> Option<usize> {
        self.parent_joint[link].map(|j| self.joints[j].parent)
    }

    pub fn mid_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| 0.5 * (j.lower + j.upper)).collect()
    }

    pub fn primitive(&self, id: PrimitiveId) -> &Primitive {
        &self.links[id.link].primitives[id.index]
    }

    pub fn primitive_ids(&self) -> impl Iterator<Item = PrimitiveId> + '_ {
        self.links.iter().enumerate().flat_map(|(link, l)| {
            (0..l.primitives.len()).map(move |index| PrimitiveId { link, index })
        })
    }

    /// Nearest ancestor carrying geometry; primitive-free links are skipped.
    fn geometric_parent(&self, link: usize) -> Option<usize> {
        let mut cur = self.parent_link(link)?;
        loop {
            if !self.links[cur].primitives.is_empty() {
                return Some(cur);
            }
            cur = self.parent_link(cur)?;
        }
    }

    fn compute_collision_pairs(&self) -> Vec<(PrimitiveId, PrimitiveId)> {
        let geo: Vec<usize> = (0..self.links.len())
            .filter(|&l| !self.links[l].primitives.is_empty())
            .collect();
        let mut pairs = Vec::new();
        for (i, &a) in geo.iter().enumerate() {
            for &b in &geo[i + 1..] {
                if self.geometric_parent(a) == Some(b) || self.geometric_parent(b) == Some(a) {
                    continue;
                }
                for ia in 0..self.links[a].primitives.len() {
                    for ib in 0..self.links[b].primitives.len() {
                        pairs.push((PrimitiveId { link: a, index: ia }, PrimitiveId { link: b, index: ib }));
                    }
                }
            }
        }
        pairs
    }

    fn compute_surface_samples(&self) -> Vec<LinkPoint> {
        let rest = HandPose::new(RigidTransform::identity(), vec![0.0; self.dof()]);
        let posed = self.pose(&rest).expect("rest pose has matching dimension");
        posed
            .sample_surface_local(self.surface_sample_count, 0x5eed_5a3f)
            .into_iter()
            .map(|(link, world)| {
                let local = posed.kin.link_poses[link].inverse_transform_point(&Point3::from(world));
                LinkPoint { link, offset: local.coords }
            })
            .collect()
    }

    pub fn forward_kinematics(&self, pose: &HandPose) -> Result<Kinematics> {
        check_dim(self.dof(), pose.q.len())?;
        let n = self.links.len();
        let mut link_poses = vec![RigidTransform::identity(); n];
        link_poses[self.root] = pose.root;
        let mut joint_axes = vec![Vector3::zeros(); self.joints.len()];
        let mut joint_origins = vec![Vector3::zeros(); self.joints.len()];
        for &j in &self.joint_order {
            let joint = &self.joints[j];
            let frame = link_poses[joint.parent] * joint.origin;
            joint_axes[j] = frame.rotation * joint.axis.into_inner();
            joint_origins[j] = frame.translation.vector;
            let spin = nalgebra::UnitQuaternion::from_axis_angle(&joint.axis, pose.q[j]);
            link_poses[joint.child] = frame * spin;
        }
        Ok(Kinematics {
            link_poses,
            joint_axes,
            joint_origins,
            root_translation: pose.root.translation.vector,
        })
    }

    /// Forward kinematics plus world placement of every primitive.
    pub fn pose(&self, pose: &HandPose) -> Result<PosedHand<'_>> {
        let kin = self.forward_kinematics(pose)?;
        let prims = self
            .primitive_ids()
            .map(|id| {
                let p = self.primitive(id);
                let world = kin.link_poses[id.link] * p.frame;
                PosedPrimitive {
                    id,
                    world,
                    shape: p.shape,
                    center: world.translation.vector,
                    radius: p.shape.bounding_radius(),
                }
            })
            .collect();
        Ok(PosedHand { model: self, kin, prims })
    }

    pub fn keypoints(&self, pose: &HandPose) -> Result<Vec<Vector3<f64>>> {
        Ok(self.pose(pose)?.keypoints())
    }

    /// Signed distance from each query point to the hand (negative inside).
    pub fn hand_sdf(&self, pose: &HandPose, points: &[Vector3<f64>]) -> Result<Vec<f64>> {
        let posed = self.pose(pose)?;
        Ok(points.iter().map(|p| posed.sdf(p).distance).collect())
    }

    /// `n` points on the hand surface, area-weighted across primitives;
    /// points hidden inside another primitive are resampled.
    pub fn sample_surface(&self, pose: &HandPose, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        let posed = self.pose(pose)?;
        Ok(posed.sample_surface_local(n, seed).into_iter().map(|(_, p)| p).collect())
    }
}

/// World transforms of the links plus the joint axes needed for gradients.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub link_poses: Vec<RigidTransform>,
    joint_axes: Vec<Vector3<f64>>,
    joint_origins: Vec<Vector3<f64>>,
    root_translation: Vector3<f64>,
}

impl Kinematics {
    /// Accumulates `∂E/∂θ` for a point `x` rigidly attached to `link`, given
    /// `∂E/∂x`. Tangent layout: `[rotation (3), translation (3), q (K)]`,
    /// rotation perturbed by left multiplication.
    pub fn add_point_gradient(
        &self,
        model: &HandModel,
        link: usize,
        x: &Vector3<f64>,
        de_dx: &Vector3<f64>,
        grad: &mut [f64],
    ) {
        let r = x - self.root_translation;
        let w = r.cross(de_dx);
        grad[0] += w.x;
        grad[1] += w.y;
        grad[2] += w.z;
        grad[3] += de_dx.x;
        grad[4] += de_dx.y;
        grad[5] += de_dx.z;
        for &j in model.chain(link) {
            grad[6 + j] += self.joint_axes[j].dot(&(x - self.joint_origins[j]).cross(de_dx));
        }
    }

    pub fn point(&self, p: &LinkPoint) -> Vector3<f64> {
        self.link_poses[p.link].transform_point(&Point3::from(p.offset)).coords
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PosedPrimitive {
    pub id: PrimitiveId,
    pub world: RigidTransform,
    pub shape: Shape,
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Result of a hand SDF query.
#[derive(Debug, Clone, Copy)]
pub struct HandSdf {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    pub primitive: PrimitiveId,
}

/// A hand model evaluated at one pose.
#[derive(Debug, Clone)]
pub struct PosedHand<'a> {
    pub model: &'a HandModel,
    pub kin: Kinematics,
    pub prims: Vec<PosedPrimitive>,
}

impl PosedHand<'_> {
    pub fn keypoints(&self) -> Vec<Vector3<f64>> {
        self.model.keypoints.iter().map(|k| self.kin.point(k)).collect()
    }

    pub fn fingertips(&self) -> Vec<Vector3<f64>> {
        self.model.fingertips.iter().map(|k| self.kin.point(k)).collect()
    }

    pub fn surface_points(&self) -> Vec<Vector3<f64>> {
        self.model.surface_samples.iter().map(|k| self.kin.point(k)).collect()
    }

    pub fn primitive_sdf(&self, prim: &PosedPrimitive, p: &Vector3<f64>) -> SdfSample {
        let local = prim.world.inverse_transform_point(&Point3::from(*p)).coords;
        let s = prim.shape.sdf_local(&local);
        SdfSample { distance: s.distance, gradient: prim.world.rotation * s.gradient }
    }

    /// Minimum signed distance over all primitives.
    pub fn sdf(&self, p: &Vector3<f64>) -> HandSdf {
        self.sdf_below(p, f64::INFINITY).expect("hand has primitives")
    }

    /// Like [`sdf`](Self::sdf) but only reports distances below `cutoff`;
    /// primitives whose bounding ball is farther than the cutoff are skipped.
    pub fn sdf_below(&self, p: &Vector3<f64>, cutoff: f64) -> Option<HandSdf> {
        let mut best: Option<HandSdf> = None;
        let mut bound = cutoff;
        for prim in &self.prims {
            if (p - prim.center).norm() - prim.radius >= bound {
                continue;
            }
            let s = self.primitive_sdf(prim, p);
            if s.distance < bound {
                bound = s.distance;
                best = Some(HandSdf { distance: s.distance, gradient: s.gradient, primitive: prim.id });
            }
        }
        best
    }

    /// Minimum signed distance over the primitives of one link.
    pub fn link_sdf(&self, link: usize, p: &Vector3<f64>) -> Option<f64> {
        self.prims
            .iter()
            .filter(|pr| pr.id.link == link)
            .map(|pr| self.primitive_sdf(pr, p).distance)
            .reduce(f64::min)
    }

    /// Lowest z reached by any primitive.
    pub fn min_z(&self) -> f64 {
        self.prims
            .iter()
            .map(|pr| match pr.shape {
                Shape::Box { half_extents: h } => {
                    let m = pr.world.rotation.to_rotation_matrix();
                    let row = m.matrix().row(2);
                    pr.center.z - (row[0].abs() * h.x + row[1].abs() * h.y + row[2].abs() * h.z)
                }
                Shape::Capsule { radius, half_length } => {
                    let axis = pr.world.rotation * Vector3::z();
                    pr.center.z - (axis.z * half_length).abs() - radius
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Surface samples tagged with their link; see [`HandModel::sample_surface`].
    pub(crate) fn sample_surface_local(&self, n: usize, seed: u64) -> Vec<(usize, Vector3<f64>)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.prims.iter().map(|p| p.shape.area()).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut u = rng.gen::<f64>() * total;
            let mut k = areas.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    k = i;
                    break;
                }
                u -= a;
            }
            let prim = &self.prims[k];
            let local = prim.shape.sample_surface(&mut rng);
            let world = prim.world.transform_point(&Point3::from(local)).coords;
            let hidden = self.prims.iter().enumerate().any(|(i, other)| {
                i != k
                    && (world - other.center).norm() < other.radius
                    && self.primitive_sdf(other, &world).distance < -1e-9
            });
            if !hidden {
                out.push((prim.id.link, world));
            }
        }
        out
    }
}
