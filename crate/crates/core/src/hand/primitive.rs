//! Analytic box and capsule geometry: signed distances, gradients, surface
//! sampling, and convex pair distances.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::so3::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned box in the primitive frame.
    Box { half_extents: Vector3<f64> },
    /// Segment along the primitive frame's z axis from `-half_length` to
    /// `+half_length`, swept by a ball of `radius`.
    Capsule { radius: f64, half_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub frame: RigidTransform,
    pub shape: Shape,
}

/// Signed distance and its spatial gradient (unit length except on the
/// measure-zero medial set, where an arbitrary active branch is taken).
#[derive(Debug, Clone, Copy)]
pub struct SdfSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
}

impl Shape {
    pub fn sdf_local(&self, p: &Vector3<f64>) -> SdfSample {
        match *self {
            Shape::Box { half_extents } => box_sdf(p, &half_extents),
            Shape::Capsule { radius, half_length } => capsule_sdf(p, radius, half_length),
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Box { half_extents: h } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
            Shape::Capsule { radius, half_length } => {
                4.0 * PI * radius * radius + 4.0 * PI * radius * half_length
            }
        }
    }

    /// Radius of a ball about the frame origin enclosing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Capsule { radius, half_length } => radius + half_length,
        }
    }

    /// Uniform sample on the primitive surface, in the primitive frame.
    pub fn sample_surface<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            Shape::Box { half_extents: h } => {
                let faces = [h.y * h.z, h.x * h.z, h.x * h.y];
                let total = faces.iter().sum::<f64>();
                let mut u = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (i, a) in faces.iter().enumerate() {
                    if u < *a {
                        axis = i;
                        break;
                    }
                    u -= a;
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.gen_range(-h.x..=h.x),
                    rng.gen_range(-h.y..=h.y),
                    rng.gen_range(-h.z..=h.z),
                );
                p[axis] = sign * h[axis];
                p
            }
            Shape::Capsule { radius, half_length } => {
                let side = 4.0 * PI * radius * half_length;
                let caps = 4.0 * PI * radius * radius;
                if rng.gen::<f64>() * (side + caps) < side {
                    let a = rng.gen::<f64>() * 2.0 * PI;
                    let z = rng.gen_range(-half_length..=half_length);
                    Vector3::new(radius * a.cos(), radius * a.sin(), z)
                } else {
                    let d = unit_vector(rng);
                    let c = if d.z >= 0.0 { half_length } else { -half_length };
                    Vector3::new(0.0, 0.0, c) + radius * d
                }
            }
        }
    }
}

impl Primitive {
    /// Signed distance of a world point, with a world-frame gradient.
    /// `pose` is the world transform of the owning link.
    pub fn sdf_world(&self, pose: &RigidTransform, p: &Vector3<f64>) -> SdfSample {
        let world = pose * self.frame;
        let local = world.inverse_transform_point(&Point3::from(*p)).coords;
        let s = self.shape.sdf_local(&local);
        SdfSample {
            distance: s.distance,
            gradient: world.rotation * s.gradient,
        }
    }

    /// World placement of the primitive given its link pose.
    pub fn world(&self, pose: &RigidTransform) -> RigidTransform {
        pose * self.frame
    }
}

pub(crate) fn unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let a = rng.gen::<f64>() * 2.0 * PI;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * a.cos(), r * a.sin(), z)
}

pub fn box_sdf(p: &Vector3<f64>, h: &Vector3<f64>) -> SdfSample {
    let q = p.abs() - h;
    let outside = q.map(|v| v.max(0.0));
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let g = Vector3::new(
            p.x.signum() * outside.x,
            p.y.signum() * outside.y,
            p.z.signum() * outside.z,
        ) / out_norm;
        SdfSample { distance: out_norm, gradient: g }
    } else {
        let axis = q.imax();
        let mut g = Vector3::zeros();
        g[axis] = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
        SdfSample { distance: q[axis], gradient: g }
    }
}

pub fn capsule_sdf(p: &Vector3<f64>, radius: f64, half_length: f64) -> SdfSample {
    let zc = p.z.clamp(-half_length, half_length);
    let d = Vector3::new(p.x, p.y, p.z - zc);
    let n = d.norm();
    let gradient = if n > 0.0 { d / n } else { Vector3::x() };
    SdfSample { distance: n - radius, gradient }
}

/// A segment in world space with an optional sweep radius.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Segment {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.a + (self.b - self.a) * t
    }
}

/// Segments whose sweep covers a world primitive: the capsule core, or the
/// twelve box edges with zero radius.
pub fn medial_segments(shape: &Shape, world: &RigidTransform) -> Vec<Segment> {
    match *shape {
        Shape::Capsule { radius, half_length } => vec![Segment {
            a: world.transform_point(&Point3::new(0.0, 0.0, -half_length)).coords,
            b: world.transform_point(&Point3::new(0.0, 0.0, half_length)).coords,
            radius,
        }],
        Shape::Box { half_extents: h } => {
            let corner = |i: usize| {
                let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
                world
                    .transform_point(&Point3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z))
                    .coords
            };
            let mut out = Vec::with_capacity(12);
            for i in 0..8usize {
                for bit in [1usize, 2, 4] {
                    if i & bit == 0 {
                        out.push(Segment { a: corner(i), b: corner(i | bit), radius: 0.0 });
                    }
                }
            }
            out
        }
    }
}

/// Minimizes the (convex) signed distance of `shape` along a segment by
/// golden-section search. Returns the parameter and the sample there.
pub fn min_sdf_on_segment(
    shape: &Shape,
    world: &RigidTransform,
    seg: &Segment,
) -> (f64, SdfSample) {
    let eval = |t: f64| {
        let p = seg.at(t);
        let local = world.inverse_transform_point(&Point3::from(p)).coords;
        shape.sdf_local(&local)
    };
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1).distance;
    let mut f2 = eval(x2).distance;
    while hi - lo > 1e-12 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1).distance;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2).distance;
        }
    }
    let mut best = (0.5 * (lo + hi), eval(0.5 * (lo + hi)));
    for t in [0.0, 1.0] {
        let s = eval(t);
        if s.distance < best.1.distance {
            best = (t, s);
        }
    }
    let mut local_grad = best.1.gradient;
    if let (Shape::Box { half_extents }, true) = (shape, best.0 > 0.0 && best.0 < 1.0 && best.1.distance < 0.0) {
        let local = world.inverse_transform_point(&Point3::from(seg.at(best.0))).coords;
        let dir = world.inverse_transform_vector(&(seg.b - seg.a));
        if let Some(g) = interior_tie_gradient(&local, half_extents, &dir, best.1.distance) {
            local_grad = g;
        }
    }
    (
        best.0,
        SdfSample { distance: best.1.distance, gradient: world.rotation * local_grad },
    )
}

fn any_unit_normal(v: &Vector3<f64>) -> Vector3<f64> {
    let a = if v.x.abs() < 0.9 * v.norm() { Vector3::x() } else { Vector3::y() };
    v.cross(&a).try_normalize(0.0).unwrap_or_else(Vector3::z)
}

/// Parameters `(s, t)` in `[0, 1]²` of the closest points of two segments.
pub fn closest_segment_params(p: &Segment, q: &Segment) -> (f64, f64) {
    let d1 = p.b - p.a;
    let d2 = q.b - q.a;
    let r = p.a - q.a;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Inside a box the SDF is the largest of six face distances. When the
/// minimum along a segment sits where two of them cross, the minimal value
/// moves with the crossing, and its gradient is the convex combination of
/// the two face normals that keeps the slopes along the segment balanced.
fn interior_tie_gradient(
    p: &Vector3<f64>,
    h: &Vector3<f64>,
    dir: &Vector3<f64>,
    value: f64,
) -> Option<Vector3<f64>> {
    let tol = 1e-10 * (1.0 + h.amax());
    let mut active = Vec::with_capacity(2);
    for k in 0..3 {
        for sign in [1.0, -1.0] {
            if (sign * p[k] - h[k] - value).abs() <= tol {
                let mut g = Vector3::zeros();
                g[k] = sign;
                active.push(g);
            }
        }
    }
    if active.len() != 2 {
        return None;
    }
    let (ga, gb) = (active[0], active[1]);
    let (da, db) = (ga.dot(dir), gb.dot(dir));
    if da * db >= 0.0 {
        return None;
    }
    let lambda = db / (db - da);
    Some(lambda * ga + (1.0 - lambda) * gb)
}

/// Witness of the closest approach between two primitives.
#[derive(Debug, Clone, Copy)]
pub struct PairContact {
    /// Separation (negative when overlapping; for two boxes it is a
    /// penetration measure rather than the exact depth).
    pub distance: f64,
    /// Point on the medial segment of the non-measuring primitive.
    pub point: Vector3<f64>,
    /// World gradient of the measuring primitive's SDF at `point`.
    pub gradient: Vector3<f64>,
    /// `true` when A's SDF is measured along B's segments, `false` for the
    /// reverse.
    pub measured_by_a: bool,
}

/// Distance between two convex primitives in world placement, computed as
/// the minimum of one primitive's SDF over the other's medial segments.
pub fn pair_distance(
    a: &Shape,
    a_world: &RigidTransform,
    b: &Shape,
    b_world: &RigidTransform,
) -> PairContact {
    let mut best: Option<PairContact> = None;
    let mut consider = |measure: &Shape, mw: &RigidTransform, other: &Shape, ow: &RigidTransform, by_a: bool| {
        for seg in medial_segments(other, ow) {
            let (t, s) = min_sdf_on_segment(measure, mw, &seg);
            let d = s.distance - seg.radius;
            if best.map_or(true, |b| d < b.distance) {
                best = Some(PairContact {
                    distance: d,
                    point: seg.at(t),
                    gradient: s.gradient,
                    measured_by_a: by_a,
                });
            }
        }
    };
    match (a, b) {
        (Shape::Capsule { radius: ra, .. }, Shape::Capsule { radius: rb, .. }) => {
            let sa = medial_segments(a, a_world)[0];
            let sb = medial_segments(b, b_world)[0];
            let (s, t) = closest_segment_params(&sa, &sb);
            let (pa, pb) = (sa.at(s), sb.at(t));
            let d = pb - pa;
            let n = d.norm();
            let gradient = if n > 0.0 { d / n } else { any_unit_normal(&(sa.b - sa.a)) };
            return PairContact { distance: n - ra - rb, point: pb, gradient, measured_by_a: true };
        }
        (_, Shape::Capsule { .. }) => consider(a, a_world, b, b_world, true),
        (Shape::Capsule { .. }, Shape::Box { .. }) => consider(b, b_world, a, a_world, false),
        (Shape::Box { .. }, Shape::Box { .. }) => {
            consider(a, a_world, b, b_world, true);
            consider(b, b_world, a, a_world, false);
        }
    }
    best.expect("primitives always have at least one medial segment")
}
