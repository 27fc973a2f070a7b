use std::f64::consts::PI;

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflexgrasp::stability::{
    cfgd_direction, evaluate, grad_phi, pgd_direction, Angle, Contact, ContactPair,
};
use reflexgrasp::surface::Surface;

fn surfaces() -> Vec<Surface> {
    let pose = Isometry3::from_parts(
        Translation3::new(-0.4, 0.25, 0.1),
        UnitQuaternion::from_euler_angles(-0.2, 0.9, 0.4),
    );
    vec![
        Surface::ellipsoid(1.3, 0.6, 0.9).unwrap().with_pose(pose),
        Surface::superquadric([1.0, 1.4, 0.8], 0.4, 1.1).unwrap().with_pose(pose),
        Surface::superquadric([0.7, 1.2, 1.5], 1.6, 1.8).unwrap(),
        Surface::superquadric([1.5, 0.6, 1.1], 0.3, 1.8).unwrap().with_pose(pose),
        Surface::superquadric([0.5, 1.9, 0.8], 1.8, 0.3).unwrap().with_pose(pose),
        Surface::torus(1.6, 0.45).unwrap().with_pose(pose),
        Surface::cuboid(0.6, 0.9, 0.4).unwrap().with_pose(pose),
        Surface::cylinder(0.5, 1.1).unwrap().with_pose(pose),
    ]
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn projection_is_on_boundary_and_nearest() {
    for s in surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<Vector3<f64>> = (0..10_000)
            .map(|_| s.sample_surface_with(&mut rng).unwrap().position)
            .collect();
        let center = s.pose().translation.vector;
        let reach = 2.0 * s.bounding_radius();
        let mut tested = 0;
        while tested < 1000 {
            let p = center + unit(&mut rng) * rng.random_range(0.0..reach);
            if s.implicit_value(&p) <= 0.0 {
                continue;
            }
            let proj = s.project(&p).unwrap().position;
            assert!(
                s.implicit_value(&proj).abs() <= s.boundary_tol(),
                "{:?}: residual {}",
                s.shape(),
                s.implicit_value(&proj)
            );
            let d = (p - proj).norm();
            let best = samples.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= best + 1e-3, "{:?}: projection {d} vs sample {best} at {p:?}", s.shape());
            tested += 1;
        }
    }
}

fn random_pair(rng: &mut ChaCha8Rng) -> ContactPair {
    loop {
        let c1 = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let c2 = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if (c2 - c1).norm() < 0.1 {
            continue;
        }
        let cp = ContactPair::new(c1, c2, unit(rng), unit(rng)).unwrap();
        let e = evaluate(&cp).unwrap();
        let ok = |a: f64| a > 0.1 && a < PI - 0.1;
        if ok(e.phi1) && ok(e.phi2) {
            return cp;
        }
    }
}

fn central_difference(cp: &ContactPair, angle: Angle, wrt: Contact, h: f64) -> Vector3<f64> {
    let value = |cp: &ContactPair| {
        let e = evaluate(cp).unwrap();
        match angle {
            Angle::Phi1 => e.phi1,
            Angle::Phi2 => e.phi2,
        }
    };
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = h;
        let shifted = |sign: f64| {
            let (mut c1, mut c2) = (*cp.c1(), *cp.c2());
            match wrt {
                Contact::C1 => c1 += e * sign,
                Contact::C2 => c2 += e * sign,
            }
            ContactPair::new(c1, c2, *cp.n1(), *cp.n2()).unwrap()
        };
        g[k] = (value(&shifted(1.0)) - value(&shifted(-1.0))) / (2.0 * h);
    }
    g
}

#[test]
fn grad_phi_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let cp = random_pair(&mut rng);
        for angle in [Angle::Phi1, Angle::Phi2] {
            for wrt in [Contact::C1, Contact::C2] {
                let g = grad_phi(&cp, angle, wrt).unwrap();
                let fd = central_difference(&cp, angle, wrt, 1e-6);
                let rel = (g - fd).norm() / g.norm();
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn directions_are_tangent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let cp = random_pair(&mut rng);
        for (d1, d2) in [pgd_direction(&cp).unwrap(), cfgd_direction(&cp).unwrap()] {
            assert!(d1.dot(cp.n1()).abs() < 1e-10);
            assert!(d2.dot(cp.n2()).abs() < 1e-10);
        }
    }
}

fn arb_vec(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn arb_unit() -> impl Strategy<Value = Vector3<f64>> {
    arb_vec(1.0).prop_filter("nonzero", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

proptest! {
    #[test]
    fn evaluate_translation_invariant(
        c1 in arb_vec(1.0), c2 in arb_vec(1.0), n1 in arb_unit(), n2 in arb_unit(), t in arb_vec(5.0)
    ) {
        prop_assume!((c2 - c1).norm() > 1e-3);
        let a = evaluate(&ContactPair::new(c1, c2, n1, n2).unwrap()).unwrap();
        let b = evaluate(&ContactPair::new(c1 + t, c2 + t, n1, n2).unwrap()).unwrap();
        prop_assert!((a.phi1 - b.phi1).abs() < 1e-9);
        prop_assert!((a.phi2 - b.phi2).abs() < 1e-9);
    }

    #[test]
    fn evaluate_rotation_invariant(
        c1 in arb_vec(1.0), c2 in arb_vec(1.0), n1 in arb_unit(), n2 in arb_unit(),
        axis in arb_unit(), angle in -PI..PI
    ) {
        prop_assume!((c2 - c1).norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let a = evaluate(&ContactPair::new(c1, c2, n1, n2).unwrap()).unwrap();
        let b = evaluate(&ContactPair::new(r * c1, r * c2, r * n1, r * n2).unwrap()).unwrap();
        prop_assert!((a.phi1 - b.phi1).abs() < 1e-10);
        prop_assert!((a.phi2 - b.phi2).abs() < 1e-10);
        prop_assert_eq!(a.f, a.phi1 + a.phi2);
    }
}
