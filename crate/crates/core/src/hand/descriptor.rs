//! `handdesc v1` text format.
//!
//! ```text
//! handdesc v1
//! name <hand name>
//! palm_normal <x> <y> <z>
//! surface_samples <count>
//! link <name>
//!   box     xyz <x y z> (rpy <r p y> | quat <w x y z>) half <hx hy hz>
//!   capsule xyz <x y z> (rpy <r p y> | quat <w x y z>) radius <r> half_length <l>
//! joint <name> parent <link> child <link> xyz <x y z> (rpy ..|quat ..) axis <x y z> limits <lo> <hi>
//! keypoint <link> <x y z>
//! fingertip <link> <x y z>
//! ```
//!
//! Primitive lines attach to the most recent `link`. Lengths are meters,
//! angles radians, `rpy` is fixed-axis roll/pitch/yaw. `#` starts a comment.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Quaternion, Translation3, Unit, UnitQuaternion, Vector3};

use super::{HandModel, HandSpec, Joint, Link, LinkPoint, Primitive, Shape};
use crate::error::{Error, Result};
use crate::so3::RigidTransform;

const HEADER: &str = "handdesc v1";

struct Tokens<'a> {
    line: usize,
    items: Vec<&'a str>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.items.get(self.pos).copied().ok_or_else(|| self.err("unexpected end of line"))?;
        self.pos += 1;
        Ok(t)
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }

    fn float(&mut self) -> Result<f64> {
        let t = self.next()?;
        let v: f64 = t.parse().map_err(|_| self.err(format!("expected a number, found `{t}`")))?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite number `{t}`")));
        }
        Ok(v)
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.float()?, self.float()?, self.float()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| self.err(format!("expected a count, found `{t}`")))
    }

    /// Parses `key value...` pairs until the line ends.
    fn keyed(&mut self, arity: &[(&str, usize)]) -> Result<HashMap<&'a str, Vec<&'a str>>> {
        let mut out = HashMap::new();
        while !self.done() {
            let key = self.next()?;
            let n = arity
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, n)| *n)
                .ok_or_else(|| self.err(format!("unknown field `{key}`")))?;
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(self.next()?);
            }
            if out.insert(key, vals).is_some() {
                return Err(self.err(format!("duplicate field `{key}`")));
            }
        }
        Ok(out)
    }
}

fn nums(t: &Tokens, fields: &HashMap<&str, Vec<&str>>, key: &str) -> Result<Vec<f64>> {
    let vals = fields.get(key).ok_or_else(|| t.err(format!("missing field `{key}`")))?;
    vals.iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| t.err(format!("field `{key}`: expected a number, found `{s}`")))
        })
        .collect()
}

fn frame(t: &Tokens, fields: &HashMap<&str, Vec<&str>>) -> Result<RigidTransform> {
    let xyz = nums(t, fields, "xyz")?;
    let rotation = match (fields.contains_key("rpy"), fields.contains_key("quat")) {
        (true, false) => {
            let r = nums(t, fields, "rpy")?;
            UnitQuaternion::from_euler_angles(r[0], r[1], r[2])
        }
        (false, true) => {
            let q = nums(t, fields, "quat")?;
            let q = Quaternion::new(q[0], q[1], q[2], q[3]);
            let n = q.norm();
            if n < 1e-12 {
                return Err(t.err("zero quaternion"));
            }
            if (n - 1.0).abs() <= 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::new_normalize(q)
            }
        }
        (false, false) => UnitQuaternion::identity(),
        (true, true) => return Err(t.err("give either `rpy` or `quat`, not both")),
    };
    Ok(RigidTransform::from_parts(Translation3::new(xyz[0], xyz[1], xyz[2]), rotation))
}

const FRAME_FIELDS: [(&str, usize); 3] = [("xyz", 3), ("rpy", 3), ("quat", 4)];

pub fn parse_descriptor(text: &str) -> Result<HandModel> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, h)) if h.split_whitespace().collect::<Vec<_>>() == ["handdesc", "v1"] => {}
        Some((line, h)) => {
            return Err(Error::Parse { line, msg: format!("expected header `{HEADER}`, found `{h}`") })
        }
        None => return Err(Error::Parse { line: 1, msg: "empty descriptor".into() }),
    }

    let mut name = None;
    let mut palm_normal = None;
    let mut surface_samples = 2048;
    let mut links: Vec<Link> = Vec::new();
    // Joints and points reference links by name; resolve after all links are known.
    let mut pending_joints = Vec::new();
    let mut pending_points = Vec::new();

    for (line, content) in lines {
        let mut t = Tokens { line, items: content.split_whitespace().collect(), pos: 0 };
        match t.next()? {
            "name" => name = Some(t.next()?.to_string()),
            "palm_normal" => palm_normal = Some(t.vec3()?),
            "surface_samples" => surface_samples = t.usize()?,
            "link" => links.push(Link { name: t.next()?.to_string(), primitives: Vec::new() }),
            kind @ ("box" | "capsule") => {
                let mut arity = FRAME_FIELDS.to_vec();
                if kind == "box" {
                    arity.push(("half", 3));
                } else {
                    arity.extend([("radius", 1), ("half_length", 1)]);
                }
                let fields = t.keyed(&arity)?;
                let frame = frame(&t, &fields)?;
                let shape = if kind == "box" {
                    let h = nums(&t, &fields, "half")?;
                    Shape::Box { half_extents: Vector3::new(h[0], h[1], h[2]) }
                } else {
                    Shape::Capsule {
                        radius: nums(&t, &fields, "radius")?[0],
                        half_length: nums(&t, &fields, "half_length")?[0],
                    }
                };
                links
                    .last_mut()
                    .ok_or_else(|| t.err("primitive before any `link`"))?
                    .primitives
                    .push(Primitive { frame, shape });
            }
            "joint" => {
                let jname = t.next()?.to_string();
                let mut arity = FRAME_FIELDS.to_vec();
                arity.extend([("parent", 1), ("child", 1), ("axis", 3), ("limits", 2)]);
                let fields = t.keyed(&arity)?;
                let origin = frame(&t, &fields)?;
                let axis = nums(&t, &fields, "axis")?;
                let axis = Vector3::new(axis[0], axis[1], axis[2]);
                let n = axis.norm();
                if n < 1e-12 {
                    return Err(t.err(format!("joint {jname}: zero axis")));
                }
                let axis = if (n - 1.0).abs() <= 1e-12 {
                    Unit::new_unchecked(axis)
                } else {
                    Unit::new_normalize(axis)
                };
                let limits = nums(&t, &fields, "limits")?;
                let parent = fields.get("parent").ok_or_else(|| t.err("missing field `parent`"))?[0];
                let child = fields.get("child").ok_or_else(|| t.err("missing field `child`"))?[0];
                pending_joints.push((line, jname, parent.to_string(), child.to_string(), origin, axis, limits));
            }
            kind @ ("keypoint" | "fingertip") => {
                let link = t.next()?.to_string();
                let offset = t.vec3()?;
                pending_points.push((line, kind == "keypoint", link, offset));
                if !t.done() {
                    return Err(t.err("trailing tokens"));
                }
            }
            other => return Err(t.err(format!("unknown directive `{other}`"))),
        }
    }

    let index: HashMap<&str, usize> = links.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
    let lookup = |line: usize, name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parse { line, msg: format!("unknown link `{name}`") })
    };
    let mut joints = Vec::with_capacity(pending_joints.len());
    for (line, jname, parent, child, origin, axis, limits) in pending_joints {
        joints.push(Joint {
            name: jname,
            parent: lookup(line, &parent)?,
            child: lookup(line, &child)?,
            origin,
            axis,
            lower: limits[0],
            upper: limits[1],
        });
    }
    let mut keypoints = Vec::new();
    let mut fingertips = Vec::new();
    for (line, is_key, link, offset) in pending_points {
        let p = LinkPoint { link: lookup(line, &link)?, offset };
        if is_key {
            keypoints.push(p);
        } else {
            fingertips.push(p);
        }
    }

    HandModel::from_spec(HandSpec {
        name: name.ok_or_else(|| Error::Descriptor("missing `name`".into()))?,
        palm_normal: palm_normal.ok_or_else(|| Error::Descriptor("missing `palm_normal`".into()))?,
        surface_samples,
        links,
        joints,
        keypoints,
        fingertips,
    })
}

fn fmt_frame(f: &RigidTransform) -> String {
    let t = f.translation.vector;
    let q = f.rotation.quaternion();
    format!("xyz {:?} {:?} {:?} quat {:?} {:?} {:?} {:?}", t.x, t.y, t.z, q.w, q.i, q.j, q.k)
}

/// Serializes a model; parsing the output reproduces an identical model.
pub fn write_descriptor(model: &HandModel) -> String {
    let mut out = String::new();
    let n = model.palm_normal();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "name {}", model.name());
    let _ = writeln!(out, "palm_normal {:?} {:?} {:?}", n.x, n.y, n.z);
    let _ = writeln!(out, "surface_samples {}", model.surface_sample_count());
    for link in model.links() {
        let _ = writeln!(out, "link {}", link.name);
        for p in &link.primitives {
            match p.shape {
                Shape::Box { half_extents: h } => {
                    let _ = writeln!(out, "  box {} half {:?} {:?} {:?}", fmt_frame(&p.frame), h.x, h.y, h.z);
                }
                Shape::Capsule { radius, half_length } => {
                    let _ = writeln!(
                        out,
                        "  capsule {} radius {:?} half_length {:?}",
                        fmt_frame(&p.frame),
                        radius,
                        half_length
                    );
                }
            }
        }
    }
    let links = model.links();
    for j in model.joints() {
        let a = j.axis;
        let _ = writeln!(
            out,
            "joint {} parent {} child {} {} axis {:?} {:?} {:?} limits {:?} {:?}",
            j.name,
            links[j.parent].name,
            links[j.child].name,
            fmt_frame(&j.origin),
            a.x,
            a.y,
            a.z,
            j.lower,
            j.upper
        );
    }
    for (kind, pts) in [("keypoint", model.keypoint_defs()), ("fingertip", model.fingertip_defs())] {
        for p in pts {
            let _ = writeln!(
                out,
                "{kind} {} {:?} {:?} {:?}",
                links[p.link].name, p.offset.x, p.offset.y, p.offset.z
            );
        }
    }
    out
}
