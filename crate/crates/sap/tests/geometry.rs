use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sap::geometry::{
    capsule_distance, min_distance, robot_link_capsules, skeleton_to_capsules, BoneMap, Capsule,
    HumanModel, HUMAN_CAPSULES, SKELETON_JOINTS,
};

fn data(file: &str) -> String {
    format!("{}/../../data/{}", env!("CARGO_MANIFEST_DIR"), file)
}

/// Independent closed-form closest distance between two segments
/// (Ericson, Real-Time Collision Detection, 5.1.9). Used only as an oracle.
fn segment_segment_distance(
    p1: Vector3<f64>,
    q1: Vector3<f64>,
    p2: Vector3<f64>,
    q2: Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-14;
    let (s, t);
    if a <= eps && e <= eps {
        return (p1 - p2).norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

fn oracle_lambda(a: &Capsule, b: &Capsule) -> f64 {
    segment_segment_distance(a.p0, a.p1, b.p0, b.p1) - a.radius - b.radius
}

fn random_capsule(rng: &mut impl Rng, span: f64) -> Capsule {
    let p0 = Vector3::new(
        rng.gen_range(-span..span),
        rng.gen_range(-span..span),
        rng.gen_range(-span..span),
    );
    let d = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    Capsule::new(p0, p0 + d, rng.gen_range(0.02..0.3)).unwrap()
}

#[test]
fn analytic_parallel_segments() {
    // Two parallel unit segments 1 apart, radii 0.1 and 0.2.
    let a = Capsule::new(Vector3::zeros(), Vector3::x(), 0.1).unwrap();
    let b = Capsule::new(Vector3::y(), Vector3::new(1.0, 1.0, 0.0), 0.2).unwrap();
    let r = capsule_distance(&a, &b);
    assert!((r.lambda - 0.7).abs() < 1e-12, "lambda {}", r.lambda);
}

#[test]
fn analytic_sphere_sphere() {
    let a = Capsule::new(Vector3::zeros(), Vector3::zeros(), 0.25).unwrap();
    let b = Capsule::new(Vector3::new(2.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0), 0.5).unwrap();
    let r = capsule_distance(&a, &b);
    assert!((r.lambda - 1.25).abs() < 1e-12);
    assert!((r.x_witness - Vector3::new(0.25, 0.0, 0.0)).norm() < 1e-12);
    assert!((r.p_support - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
}

#[test]
fn analytic_penetration() {
    // Crossing perpendicular segments, core distance 0.1, radii sum 0.3.
    let a = Capsule::new(Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), 0.1).unwrap();
    let b = Capsule::new(Vector3::new(0.0, -1.0, 0.1), Vector3::new(0.0, 1.0, 0.1), 0.2).unwrap();
    let r = capsule_distance(&a, &b);
    assert!((r.lambda + 0.2).abs() < 1e-10, "lambda {}", r.lambda);
}

#[test]
fn matches_closed_form_oracle_bulk() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let a = random_capsule(&mut rng, 1.0);
        let b = random_capsule(&mut rng, 1.0);
        let r = capsule_distance(&a, &b);
        let err = (r.lambda - oracle_lambda(&a, &b)).abs();
        worst = worst.max(err);
    }
    assert!(worst < 1e-9, "worst oracle deviation {worst}");
}

#[test]
fn symmetry_and_rigid_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let a = random_capsule(&mut rng, 1.0);
        let b = random_capsule(&mut rng, 1.0);
        let fwd = capsule_distance(&a, &b);
        let rev = capsule_distance(&b, &a);
        assert!((fwd.lambda - rev.lambda).abs() < 1e-9);

        let rot = UnitQuaternion::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let tr = Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        let map = |p: &Vector3<f64>| rot * p + tr;
        let a2 = Capsule::new(map(&a.p0), map(&a.p1), a.radius).unwrap();
        let b2 = Capsule::new(map(&b.p0), map(&b.p1), b.radius).unwrap();
        let moved = capsule_distance(&a2, &b2);
        assert!(
            (fwd.lambda - moved.lambda).abs() < 1e-9,
            "rigid motion changed lambda by {}",
            (fwd.lambda - moved.lambda).abs()
        );
    }
}

#[test]
fn witness_points_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5000 {
        let a = random_capsule(&mut rng, 1.0);
        let b = random_capsule(&mut rng, 1.0);
        let r = capsule_distance(&a, &b);
        if r.lambda <= 1e-6 {
            continue;
        }
        // Witness gap equals lambda.
        let gap = (r.x_witness - r.p_support).norm();
        assert!((gap - r.lambda).abs() < 1e-9, "gap {gap} lambda {}", r.lambda);
        // Witnesses sit on the capsule boundaries.
        let da = segment_segment_distance(a.p0, a.p1, r.x_witness, r.x_witness);
        let db = segment_segment_distance(b.p0, b.p1, r.p_support, r.p_support);
        assert!((da - a.radius).abs() < 1e-9, "witness off boundary: {da}");
        assert!((db - b.radius).abs() < 1e-9, "support off boundary: {db}");
    }
}

#[test]
fn min_distance_tie_breaks_to_lowest_indices() {
    // Two identical robot capsules, two identical human capsules: every pair
    // is equidistant, so the reported pair must be (0, 0).
    let rc = Capsule::new(Vector3::zeros(), Vector3::x(), 0.05).unwrap();
    let hc = Capsule::new(Vector3::new(0.0, 1.0, 0.0), Vector3::new(1.0, 1.0, 0.0), 0.05).unwrap();
    let robot = vec![rc.clone(), rc];
    let human = HumanModel {
        capsules: vec![hc.clone(), hc],
    };
    let r = min_distance(&robot, &human).unwrap();
    assert_eq!(r.pair, (0, 0));
    assert!((r.lambda - 0.9).abs() < 1e-12);
}

#[test]
fn min_distance_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for _ in 0..200 {
        let robot: Vec<Capsule> = (0..7).map(|_| random_capsule(&mut rng, 1.5)).collect();
        let human = HumanModel {
            capsules: (0..HUMAN_CAPSULES)
                .map(|_| random_capsule(&mut rng, 1.5))
                .collect(),
        };
        let fast = min_distance(&robot, &human).unwrap();
        let brute = robot
            .iter()
            .flat_map(|rc| human.capsules.iter().map(move |hc| oracle_lambda(rc, hc)))
            .fold(f64::INFINITY, f64::min);
        assert!(
            (fast.lambda - brute).abs() < 1e-9,
            "pruned {} vs brute {brute}",
            fast.lambda
        );
    }
}

#[test]
fn bone_map_file_matches_canonical() {
    let from_file = BoneMap::from_file(data("bone_map.txt")).unwrap();
    let canonical = BoneMap::canonical();
    assert_eq!(from_file.entries.len(), HUMAN_CAPSULES);
    for (a, b) in from_file.entries.iter().zip(canonical.entries.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn bone_map_rejects_bad_files() {
    use std::io::Write;
    let dir = std::env::temp_dir();
    let p1 = dir.join("sap_bad_bone_count.txt");
    std::fs::File::create(&p1)
        .unwrap()
        .write_all(b"head 4 3 0.1\n")
        .unwrap();
    assert!(BoneMap::from_file(&p1).is_err());
    let p2 = dir.join("sap_bad_bone_index.txt");
    std::fs::File::create(&p2)
        .unwrap()
        .write_all(b"head 4 99 0.1\n")
        .unwrap();
    assert!(BoneMap::from_file(&p2).is_err());
}

#[test]
fn skeleton_to_capsules_builds_bone_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let frame: Vec<Vector3<f64>> = (0..SKELETON_JOINTS)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0),
            )
        })
        .collect();
    let bm = BoneMap::canonical();
    let model = skeleton_to_capsules(&frame, &bm).unwrap();
    assert_eq!(model.capsules.len(), HUMAN_CAPSULES);
    for (cap, (_, a, b, r)) in model.capsules.iter().zip(bm.entries.iter()) {
        assert_eq!(cap.p0, frame[*a]);
        assert_eq!(cap.p1, frame[*b]);
        assert_eq!(cap.radius, *r);
    }
    assert!(skeleton_to_capsules(&frame[..10], &bm).is_err());
}

#[test]
fn robot_capsules_span_link_frames() {
    let chain =
        sap::dynamics::KinematicChain::from_file(data("robots/reference_arm.txt")).unwrap();
    let q = DVector::from_vec(vec![0.2, -0.5, 0.3, 1.1, -0.2, 0.6, 0.1]);
    let radii = [0.09, 0.09, 0.07, 0.07, 0.06, 0.06, 0.05];
    let caps = robot_link_capsules(&chain, &q, &radii).unwrap();
    assert_eq!(caps.len(), 7);
    // Consecutive capsules share endpoints.
    for w in caps.windows(2) {
        assert_eq!(w[0].p1, w[1].p0);
    }
    // First capsule starts at the base origin.
    assert_eq!(caps[0].p0, Vector3::zeros());
}

#[test]
fn capsule_rejects_bad_inputs() {
    assert!(Capsule::new(Vector3::zeros(), Vector3::x(), 0.0).is_err());
    assert!(Capsule::new(Vector3::zeros(), Vector3::x(), -0.1).is_err());
    assert!(Capsule::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::x(), 0.1).is_err());
}
