//! Independent reference implementations used to check the library.

use std::f64::consts::PI;

use dexgrasp::hand::primitive::Shape;
use dexgrasp::hand::{HandModel, HandPose};
use dexgrasp::quality::WrenchSet;
use dexgrasp::scene::ContactSet;
use nalgebra::{DMatrix, DVector, Point3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Posed primitive as seen by the oracle: world placement and shape.
struct OraclePrimitive {
    world: dexgrasp::so3::RigidTransform,
    shape: Shape,
    samples: Vec<Vector3<f64>>,
}

fn area(shape: &Shape) -> f64 {
    match *shape {
        Shape::Box { half_extents: h } => 8.0 * (h.x * h.y + h.y * h.z + h.z * h.x),
        Shape::Capsule { radius: r, half_length: l } => 4.0 * PI * r * r + 2.0 * PI * r * (2.0 * l),
    }
}

fn sample_local(shape: &Shape, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    match *shape {
        Shape::Box { half_extents: h } => {
            // Face pair chosen by area, then a uniform point on one face.
            let w = [h.y * h.z, h.z * h.x, h.x * h.y];
            let pick = rng.gen::<f64>() * (w[0] + w[1] + w[2]);
            let axis = if pick < w[0] { 0 } else if pick < w[0] + w[1] { 1 } else { 2 };
            let mut p = Vector3::from_fn(|i, _| rng.gen_range(-h[i]..=h[i]));
            p[axis] = if rng.gen::<f64>() < 0.5 { -h[axis] } else { h[axis] };
            p
        }
        Shape::Capsule { radius: r, half_length: l } => {
            let side = 4.0 * PI * r * l;
            let sphere = 4.0 * PI * r * r;
            if rng.gen::<f64>() * (side + sphere) < side {
                let a = rng.gen_range(0.0..2.0 * PI);
                Vector3::new(r * a.cos(), r * a.sin(), rng.gen_range(-l..=l))
            } else {
                let g = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal)).normalize();
                let cap = if g.z >= 0.0 { l } else { -l };
                Vector3::new(0.0, 0.0, cap) + r * g
            }
        }
    }
}

fn contains_local(shape: &Shape, p: &Vector3<f64>) -> bool {
    match *shape {
        Shape::Box { half_extents: h } => (0..3).all(|i| p[i].abs() <= h[i]),
        Shape::Capsule { radius: r, half_length: l } => {
            let c = Vector3::new(0.0, 0.0, p.z.clamp(-l, l));
            (p - c).norm() <= r
        }
    }
}

/// Dense-sampling signed-distance oracle for one posed hand. Every
/// primitive surface is sampled by area; a query outside every primitive
/// takes its nearest sample, one inside takes the negated largest depth
/// among the primitives that contain it.
pub struct SdfOracle {
    prims: Vec<OraclePrimitive>,
}

impl SdfOracle {
    pub fn new(model: &HandModel, pose: &HandPose, samples: usize, seed: u64) -> Self {
        let posed = model.pose(pose).unwrap();
        let total: f64 = posed.prims.iter().map(|p| area(&p.shape)).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = posed
            .prims
            .iter()
            .map(|p| {
                let n = ((samples as f64) * area(&p.shape) / total).ceil() as usize;
                let samples = (0..n)
                    .map(|_| p.world.transform_point(&Point3::from(sample_local(&p.shape, &mut rng))).coords)
                    .collect();
                OraclePrimitive { world: p.world, shape: p.shape, samples }
            })
            .collect();
        Self { prims }
    }

    pub fn sample_count(&self) -> usize {
        self.prims.iter().map(|p| p.samples.len()).sum()
    }

    /// A random point on the sampled surface.
    pub fn surface_point(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let mut k = rng.gen_range(0..self.sample_count());
        for p in &self.prims {
            if k < p.samples.len() {
                return p.samples[k];
            }
            k -= p.samples.len();
        }
        unreachable!()
    }

    fn nearest(samples: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
        samples.iter().map(|s| (s - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
    }

    pub fn distance(&self, q: &Vector3<f64>) -> f64 {
        let mut depth: Option<f64> = None;
        for p in &self.prims {
            let local = p.world.inverse_transform_point(&Point3::from(*q)).coords;
            if contains_local(&p.shape, &local) {
                let d = Self::nearest(&p.samples, q);
                depth = Some(depth.map_or(d, |x: f64| x.max(d)));
            }
        }
        match depth {
            Some(d) => -d,
            None => self.prims.iter().map(|p| Self::nearest(&p.samples, q)).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Minimum support value over `n` Gaussian-normalized directions, drawn
/// from a generator independent of the library's direction sampler.
pub fn dense_q1(ws: &WrenchSet, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n {
        let d = Vector6::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
        let d = d / d.norm();
        let h = ws.wrenches.iter().map(|w| w.dot(&d)).fold(f64::NEG_INFINITY, f64::max);
        best = best.min(h);
    }
    best.max(0.0)
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    sv.iter().filter(|s| **s > 1e-10 * max.max(1e-300)).count()
}

/// Feasibility of `{x ≥ 0 : Ax = b}` by enumerating every basis. A
/// feasible system has a basic feasible solution whose support extends to
/// `rank(A)` independent columns, so checking all such column subsets is
/// exhaustive.
pub fn vertex_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    if b.norm() < 1e-14 {
        return true;
    }
    let n = a.ncols();
    let r = rank(a);
    if r == 0 {
        return false;
    }
    let mut subset: Vec<usize> = (0..r).collect();
    loop {
        let cols = a.select_columns(subset.iter());
        if rank(&cols) == r {
            let svd = cols.clone().svd(true, true);
            let x = svd.solve(b, 1e-12).unwrap();
            let residual = (&cols * &x - b).norm();
            if residual <= 1e-9 * (1.0 + b.norm()) && x.iter().all(|v| *v >= -1e-9) {
                return true;
            }
        }
        // Next r-combination of 0..n in lexicographic order.
        let mut i = r;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if subset[i] < n - r + i {
                subset[i] += 1;
                for j in i + 1..r {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Contacts on a sphere of `radius` about the origin with outward normals.
pub fn sphere_contacts(radius: f64, dirs: &[Vector3<f64>]) -> ContactSet {
    let normals: Vec<_> = dirs.iter().map(|d| d.normalize()).collect();
    ContactSet::new(normals.iter().map(|n| radius * n).collect(), normals).unwrap()
}

/// Contacts on the faces of an axis-aligned cube of half edge `h`: each
/// entry is a face normal axis index with sign, and an in-face offset.
pub fn cube_contacts(h: f64, faces: &[(usize, f64, [f64; 2])]) -> ContactSet {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for &(axis, sign, uv) in faces {
        let mut n = Vector3::zeros();
        n[axis] = sign;
        let mut p = h * n;
        p[(axis + 1) % 3] = uv[0];
        p[(axis + 2) % 3] = uv[1];
        points.push(p);
        normals.push(n);
    }
    ContactSet::new(points, normals).unwrap()
}

/// Exact inscribed-ball radius at the origin of the convex hull of `ws`,
/// by enumerating every hyperplane through six of the points and keeping
/// the supporting ones. Returns 0 when the origin is not strictly inside.
pub fn exact_q1(ws: &WrenchSet) -> f64 {
    let w = &ws.wrenches;
    let n = w.len();
    if n < 7 {
        return 0.0;
    }
    let tol = 1e-10;
    let mut best = f64::INFINITY;
    let mut s: Vec<usize> = (0..6).collect();
    loop {
        let m = nalgebra::Matrix6::from_fn(|r, c| w[s[r]][c]);
        // Plane n·x = 1 through the six points; singular systems are planes
        // through the origin or affinely dependent points.
        let plane = m.lu().solve(&Vector6::repeat(1.0)).filter(|p| p.iter().all(|v| v.is_finite()));
        match plane {
            Some(p) if p.norm() > 1e-12 => {
                let below = w.iter().all(|x| p.dot(x) <= 1.0 + tol);
                let above = w.iter().all(|x| p.dot(x) >= 1.0 - tol);
                if above && !below {
                    return 0.0;
                }
                if below && above {
                    return 0.0;
                }
                if below {
                    best = best.min(1.0 / p.norm());
                }
            }
            _ => {
                let d = nalgebra::Matrix6::from_fn(|r, c| if r < 5 { w[s[r + 1]][c] - w[s[0]][c] } else { 0.0 });
                let svd = d.svd(false, true);
                let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
                sv.sort_by(|a, b| a.0.total_cmp(&b.0));
                if sv[1].0 > 1e-9 {
                    let normal = svd.v_t.unwrap().row(sv[0].1).transpose();
                    let c = normal.dot(&w[s[0]]);
                    if c.abs() < tol {
                        let below = w.iter().all(|x| normal.dot(x) <= tol);
                        let above = w.iter().all(|x| normal.dot(x) >= -tol);
                        if below || above {
                            return 0.0;
                        }
                    }
                }
            }
        }
        let mut i = 6;
        loop {
            if i == 0 {
                return if best.is_finite() { best } else { 0.0 };
            }
            i -= 1;
            if s[i] < n - 6 + i {
                s[i] += 1;
                for j in i + 1..6 {
                    s[j] = s[j - 1] + 1;
                }
                break;
            }
        }
    }
}
