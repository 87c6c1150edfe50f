//! Capsule geometry: sphere-swept segments for robot links and the human
//! body, and signed minimum distance between them via GJK on the segment
//! cores with the radii subtracted.

use std::path::Path;

use nalgebra::{DVector, Vector3};

use crate::dynamics::{FkPass, KinematicChain};
use crate::{Result, SapError};

/// Number of joints in the skeleton frames we consume.
pub const SKELETON_JOINTS: usize = 32;
/// Number of capsules in the human body model.
pub const HUMAN_CAPSULES: usize = 15;

/// Sphere-swept segment. `p0 == p1` degenerates to a sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub p0: Vector3<f64>,
    pub p1: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(p0: Vector3<f64>, p1: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(SapError::Argument(format!(
                "capsule radius must be positive, got {radius}"
            )));
        }
        if p0.iter().chain(p1.iter()).any(|v| !v.is_finite()) {
            return Err(SapError::Argument("non-finite capsule endpoint".into()));
        }
        Ok(Self { p0, p1, radius })
    }

    fn midpoint(&self) -> Vector3<f64> {
        0.5 * (self.p0 + self.p1)
    }

    fn half_length(&self) -> f64 {
        0.5 * (self.p1 - self.p0).norm()
    }
}

pub type CapsuleSet = Vec<Capsule>;

/// Signed distance between two sphere-swept shapes with witness points.
#[derive(Debug, Clone)]
pub struct DistanceResult {
    /// Boundary-to-boundary distance; negative is penetration depth of the
    /// swept volumes.
    pub lambda: f64,
    /// Witness point on the human capsule boundary.
    pub p_support: Vector3<f64>,
    /// Witness point on the robot shape boundary.
    pub x_witness: Vector3<f64>,
    /// Minimizing (robot link index, human capsule index), where applicable.
    pub pair: (usize, usize),
}

/// One capsule per skeleton bone: name, endpoint joint indices, radius.
#[derive(Debug, Clone)]
pub struct BoneMap {
    pub entries: Vec<(String, usize, usize, f64)>,
}

impl BoneMap {
    /// Canonical 15-bone map used when no config file is given.
    pub fn canonical() -> Self {
        let e = |name: &str, a: usize, b: usize, r: f64| (name.to_string(), a, b, r);
        Self {
            entries: vec![
                e("head_neck", 4, 3, 0.10),
                e("spine", 3, 0, 0.12),
                e("shoulders", 5, 9, 0.10),
                e("l_upper_arm", 5, 6, 0.06),
                e("l_forearm", 6, 7, 0.05),
                e("l_hand", 7, 8, 0.05),
                e("r_upper_arm", 9, 10, 0.06),
                e("r_forearm", 10, 11, 0.05),
                e("r_hand", 11, 12, 0.05),
                e("l_thigh", 13, 14, 0.09),
                e("l_shin", 14, 15, 0.07),
                e("l_foot", 15, 16, 0.05),
                e("r_thigh", 17, 18, 0.09),
                e("r_shin", 18, 19, 0.07),
                e("r_foot", 19, 20, 0.05),
            ],
        }
    }

    /// Parses a bone-map file: one line per capsule,
    /// `name joint_a_index joint_b_index radius_m`, `#` comments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let name = path.display().to_string();
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(SapError::Parse {
                    path: name.clone(),
                    line: lineno + 1,
                    msg: format!("expected `name a b radius`, got {} fields", toks.len()),
                });
            }
            let parse_idx = |tok: &str| {
                tok.parse::<usize>().map_err(|_| SapError::Parse {
                    path: name.clone(),
                    line: lineno + 1,
                    msg: format!("invalid joint index `{tok}`"),
                })
            };
            let a = parse_idx(toks[1])?;
            let b = parse_idx(toks[2])?;
            let radius = toks[3].parse::<f64>().map_err(|_| SapError::Parse {
                path: name.clone(),
                line: lineno + 1,
                msg: format!("invalid radius `{}`", toks[3]),
            })?;
            if a >= SKELETON_JOINTS || b >= SKELETON_JOINTS {
                return Err(SapError::Parse {
                    path: name.clone(),
                    line: lineno + 1,
                    msg: format!("joint index out of range 0..{SKELETON_JOINTS}"),
                });
            }
            entries.push((toks[0].to_string(), a, b, radius));
        }
        if entries.len() != HUMAN_CAPSULES {
            return Err(SapError::Argument(format!(
                "bone map must define exactly {HUMAN_CAPSULES} capsules, got {}",
                entries.len()
            )));
        }
        Ok(Self { entries })
    }
}

/// Capsule model of the human body built from one skeleton frame.
#[derive(Debug, Clone)]
pub struct HumanModel {
    pub capsules: Vec<Capsule>,
}

/// Builds the 15-capsule human model from a 32-joint skeleton frame.
pub fn skeleton_to_capsules(frame: &[Vector3<f64>], bone_map: &BoneMap) -> Result<HumanModel> {
    if frame.len() != SKELETON_JOINTS {
        return Err(SapError::Argument(format!(
            "expected {SKELETON_JOINTS} joints, got {}",
            frame.len()
        )));
    }
    let capsules = bone_map
        .entries
        .iter()
        .map(|(_, a, b, r)| Capsule::new(frame[*a], frame[*b], *r))
        .collect::<Result<Vec<_>>>()?;
    Ok(HumanModel { capsules })
}

/// Capsules spanning consecutive joint-frame origins of the arm.
pub fn robot_link_capsules(
    chain: &KinematicChain,
    q: &DVector<f64>,
    link_radii: &[f64],
) -> Result<CapsuleSet> {
    let n = chain.n();
    if q.len() != n {
        return Err(SapError::Argument(format!(
            "expected {n} joint values, got {}",
            q.len()
        )));
    }
    if link_radii.len() != n {
        return Err(SapError::Argument(format!(
            "expected {n} link radii, got {}",
            link_radii.len()
        )));
    }
    let pass = FkPass::positions(chain, q);
    capsules_from_origins(&pass.origin, link_radii)
}

/// Capsules from precomputed frame origins (base + n link frames).
pub fn capsules_from_origins(origins: &[Vector3<f64>], link_radii: &[f64]) -> Result<CapsuleSet> {
    (0..link_radii.len())
        .map(|k| Capsule::new(origins[k], origins[k + 1], link_radii[k]))
        .collect()
}

// ---------------------------------------------------------------------------
// GJK on a pair of segments.

const GJK_MAX_ITERS: usize = 64;
const GJK_EPS: f64 = 1e-14;

#[derive(Clone, Copy)]
struct SupportVertex {
    w: Vector3<f64>, // point of A - B
    a: Vector3<f64>, // contributing point on A
    b: Vector3<f64>, // contributing point on B
}

fn segment_support(p0: &Vector3<f64>, p1: &Vector3<f64>, dir: &Vector3<f64>) -> Vector3<f64> {
    if (p1 - p0).dot(dir) > 0.0 {
        *p1
    } else {
        *p0
    }
}

/// Closest point to the origin on the current simplex, reducing the simplex
/// to the supporting feature. Returns the point and the barycentric weights
/// of the kept vertices; the weights recover witness points on both cores.
/// Handles 1-3 vertices (the Minkowski difference of two segments is at most
/// a planar parallelogram).
fn simplex_closest(simplex: &mut Vec<SupportVertex>, bary: &mut Vec<f64>) -> Vector3<f64> {
    bary.clear();
    match simplex.len() {
        1 => {
            bary.push(1.0);
            simplex[0].w
        }
        2 => {
            let (p, q) = (simplex[0], simplex[1]);
            let ab = q.w - p.w;
            let denom = ab.norm_squared();
            let t = if denom > 0.0 {
                (-p.w.dot(&ab) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            if t <= 0.0 {
                simplex.truncate(1);
                bary.push(1.0);
                p.w
            } else if t >= 1.0 {
                simplex.swap(0, 1);
                simplex.truncate(1);
                bary.push(1.0);
                q.w
            } else {
                bary.push(1.0 - t);
                bary.push(t);
                p.w + t * ab
            }
        }
        3 => closest_on_triangle(simplex, bary),
        _ => unreachable!("simplex never exceeds 3 vertices"),
    }
}

fn closest_on_triangle(simplex: &mut Vec<SupportVertex>, bary: &mut Vec<f64>) -> Vector3<f64> {
    // Ericson-style closest point on triangle ABC to the origin.
    let (a, b, c) = (simplex[0], simplex[1], simplex[2]);
    let ab = b.w - a.w;
    let ac = c.w - a.w;
    let ap = -a.w;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        simplex.truncate(1);
        bary.push(1.0);
        return a.w;
    }
    let bp = -b.w;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        simplex[0] = b;
        simplex.truncate(1);
        bary.push(1.0);
        return b.w;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        simplex.truncate(2);
        bary.push(1.0 - t);
        bary.push(t);
        return a.w + t * ab;
    }
    let cp = -c.w;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        simplex[0] = c;
        simplex.truncate(1);
        bary.push(1.0);
        return c.w;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        simplex[1] = c;
        simplex.truncate(2);
        bary.push(1.0 - t);
        bary.push(t);
        return a.w + t * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        simplex[0] = b;
        simplex[1] = c;
        simplex.truncate(2);
        bary.push(1.0 - t);
        bary.push(t);
        return b.w + t * (c.w - b.w);
    }
    // Interior: origin projects inside the triangle.
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    bary.push(1.0 - v - w);
    bary.push(v);
    bary.push(w);
    a.w + ab * v + ac * w
}

/// Signed distance between two capsules: GJK on the segment cores, radii
/// subtracted. Negative lambda is the penetration depth of the swept
/// volumes; the cores themselves essentially never intersect.
pub fn capsule_distance(a: &Capsule, b: &Capsule) -> DistanceResult {
    // Initial search direction: between midpoints, falling back to x.
    let mut dir = a.midpoint() - b.midpoint();
    if dir.norm_squared() < GJK_EPS {
        dir = Vector3::x();
    }
    let mut simplex: Vec<SupportVertex> = Vec::with_capacity(3);
    let mut bary: Vec<f64> = Vec::with_capacity(3);
    let sa0 = segment_support(&a.p0, &a.p1, &-dir);
    let sb0 = segment_support(&b.p0, &b.p1, &dir);
    simplex.push(SupportVertex {
        w: sa0 - sb0,
        a: sa0,
        b: sb0,
    });
    bary.push(1.0);
    let mut v = simplex[0].w;
    let mut touching = false;

    for _ in 0..GJK_MAX_ITERS {
        let vn = v.norm_squared();
        if vn < GJK_EPS {
            touching = true;
            break;
        }
        let d = -v;
        let sa = segment_support(&a.p0, &a.p1, &d);
        let sb = segment_support(&b.p0, &b.p1, &(-d));
        let w = sa - sb;
        // Termination: support point no closer in the search direction.
        if vn - v.dot(&w) <= 1e-14 * vn {
            break;
        }
        // A repeated support vertex cannot improve the simplex.
        if simplex.iter().any(|s| (s.w - w).norm_squared() < GJK_EPS) {
            break;
        }
        if simplex.len() == 3 {
            // The difference of two segments is planar, so a full triangle
            // already spans it; evict the least-contributing vertex.
            let drop = bary
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            simplex.remove(drop);
        }
        simplex.push(SupportVertex { w, a: sa, b: sb });
        v = simplex_closest(&mut simplex, &mut bary);
    }

    // Witness points on the cores from the barycentric weights; by
    // construction pa - pb == v, so the gap is exactly ||v||.
    let mut pa = Vector3::zeros();
    let mut pb = Vector3::zeros();
    for (s, &l) in simplex.iter().zip(bary.iter()) {
        pa += l * s.a;
        pb += l * s.b;
    }
    let core_dist = if touching { 0.0 } else { (pa - pb).norm() };
    let lambda = core_dist - a.radius - b.radius;
    let n = if core_dist > 0.0 {
        (pa - pb) / core_dist
    } else {
        Vector3::z()
    };
    DistanceResult {
        lambda,
        x_witness: pa - a.radius * n,
        p_support: pb + b.radius * n,
        pair: (0, 0),
    }
}

/// Minimum signed distance over all (robot link, human capsule) pairs.
/// Ties go to the lowest (link index, capsule index).
pub fn min_distance(robot_caps: &[Capsule], human: &HumanModel) -> Result<DistanceResult> {
    if robot_caps.is_empty() || human.capsules.is_empty() {
        return Err(SapError::Argument(
            "min_distance requires at least one capsule on each side".into(),
        ));
    }
    let mut best: Option<DistanceResult> = None;
    for (i, rc) in robot_caps.iter().enumerate() {
        for (j, hc) in human.capsules.iter().enumerate() {
            if let Some(ref b) = best {
                // Cheap lower bound: midpoint distance minus half-lengths
                // and radii can never underestimate the true lambda.
                let lb = (rc.midpoint() - hc.midpoint()).norm()
                    - rc.half_length()
                    - hc.half_length()
                    - rc.radius
                    - hc.radius;
                if lb >= b.lambda {
                    continue;
                }
            }
            let mut r = capsule_distance(rc, hc);
            r.pair = (i, j);
            let better = match best {
                None => true,
                Some(ref b) => r.lambda < b.lambda - 1e-15,
            };
            if better {
                best = Some(r);
            }
        }
    }
    Ok(best.unwrap())
}

/// Cheap lower bound on the minimum signed distance: midpoint separation
/// minus half-lengths and radii, minimized over all pairs. Never exceeds
/// the exact minimum, so a bound above a threshold proves clearance
/// without running GJK.
pub fn min_distance_lower_bound(robot_caps: &[Capsule], human: &HumanModel) -> f64 {
    let mut lb = f64::INFINITY;
    for rc in robot_caps {
        for hc in &human.capsules {
            let b = (rc.midpoint() - hc.midpoint()).norm()
                - rc.half_length()
                - hc.half_length()
                - rc.radius
                - hc.radius;
            lb = lb.min(b);
        }
    }
    lb
}

/// Minimum distance from one robot link capsule to the whole human model.
pub fn link_min_distance(link_capsule: &Capsule, human: &HumanModel) -> DistanceResult {
    let mut best: Option<DistanceResult> = None;
    for (j, hc) in human.capsules.iter().enumerate() {
        if let Some(ref b) = best {
            let lb = (link_capsule.midpoint() - hc.midpoint()).norm()
                - link_capsule.half_length()
                - hc.half_length()
                - link_capsule.radius
                - hc.radius;
            if lb >= b.lambda {
                continue;
            }
        }
        let mut r = capsule_distance(link_capsule, hc);
        r.pair = (0, j);
        if best.as_ref().map_or(true, |b| r.lambda < b.lambda - 1e-15) {
            best = Some(r);
        }
    }
    best.unwrap()
}
