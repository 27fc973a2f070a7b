use nalgebra::{DVector, Matrix3, Matrix4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflexgrasp::kinematics::{JointType, RobotModel};

fn random_q(m: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        m.dof(),
        m.joints().iter().map(|j| rng.random_range(j.q_min..j.q_max)),
    )
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0))).normalize()
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// exp of a 4x4 matrix by Taylor series with scaling and squaring.
fn expm(a: &Matrix4<f64>) -> Matrix4<f64> {
    let mut squarings = 0;
    let mut scaled = *a;
    while scaled.abs().max() > 0.05 {
        scaled /= 2.0;
        squarings += 1;
    }
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..30 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

fn homogeneous(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Fingertip positions from the product of exponentials of the joint screws
/// taken in the zero configuration.
fn poe_tip_positions(m: &RobotModel, q: &DVector<f64>) -> Vec<Vector3<f64>> {
    // Zero-configuration frames from the joint origins alone.
    let mut zero: Vec<Matrix4<f64>> = Vec::new();
    for j in m.joints() {
        let o = j.origin.to_homogeneous();
        let parent = j.parent.map_or_else(Matrix4::identity, |p| zero[p]);
        zero.push(parent * o);
    }
    m.fingertips()
        .iter()
        .map(|tip| {
            let mut t: Matrix4<f64> = Matrix4::identity();
            for &j in m.chain(tip.link) {
                let joint = &m.joints()[j];
                let rot = zero[j].fixed_view::<3, 3>(0, 0).into_owned();
                let p = zero[j].fixed_view::<3, 1>(0, 3).into_owned();
                let axis = rot * joint.axis.into_inner();
                let mut screw = Matrix4::zeros();
                match joint.kind {
                    JointType::Revolute => {
                        screw.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&axis));
                        screw.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-axis.cross(&p)));
                    }
                    JointType::Prismatic => {
                        screw.fixed_view_mut::<3, 1>(0, 3).copy_from(&axis);
                    }
                }
                t *= expm(&(screw * q[j]));
            }
            let home = zero[tip.link] * homogeneous(&Matrix3::identity(), &tip.offset);
            let world = t * home;
            world.fixed_view::<3, 1>(0, 3).into_owned()
        })
        .collect()
}

#[test]
fn forward_kinematics_matches_product_of_exponentials() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let q = random_q(&m, &mut rng);
        let s = m.forward_kinematics(&q);
        for (tip, oracle) in s.tips.iter().zip(poe_tip_positions(&m, &q)) {
            assert!((tip.position - oracle).norm() < 1e-9, "{}", (tip.position - oracle).norm());
        }
    }
}

#[test]
fn rotations_stay_orthonormal() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s = m.forward_kinematics(&random_q(&m, &mut rng));
        for t in &s.tips {
            let r = t.rotation.matrix();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }
}

/// Rotation vector of a rotation by a tiny angle, from its skew part; exact
/// to third order in the angle (an acos-based log loses digits here).
fn log_small(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) / 2.0
}

#[test]
fn jacobians_match_finite_differences() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&m, &mut rng);
        let qd = random_unit(m.dof(), &mut rng);
        let s = m.forward_kinematics(&q);
        let plus = m.forward_kinematics(&(&q + &qd * h));
        let minus = m.forward_kinematics(&(&q - &qd * h));
        for k in 0..s.tips.len() {
            let v_fd = (plus.tips[k].position - minus.tips[k].position) / (2.0 * h);
            let v = &s.tips[k].jx * &qd;
            worst = worst.max((v - v_fd).norm() / v.norm());
            let delta: Rotation3<f64> = plus.tips[k].rotation * minus.tips[k].rotation.transpose();
            let w_fd = log_small(&delta) / (2.0 * h);
            let w = &s.tips[k].jr * &qd;
            worst = worst.max((w - w_fd).norm() / w.norm());
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn collision_gradient_matches_finite_differences() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&m, &mut rng);
        let qd = random_unit(m.dof(), &mut rng);
        let c = m.collision_values(&q);
        let fd = (m.collision_values(&(&q + &qd * h)).gamma - m.collision_values(&(&q - &qd * h)).gamma)
            / (2.0 * h);
        let analytic = &c.jacobian * &qd;
        worst = worst.max((&analytic - &fd).norm() / analytic.norm());
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn collision_values_are_continuous_along_paths() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // No point of the model is farther than this from any joint axis.
    let reach = 2.0;
    for _ in 0..20 {
        let (a, b) = (random_q(&m, &mut rng), random_q(&m, &mut rng));
        let steps = ((&b - &a).amax() / 1e-3).ceil() as usize;
        let dq = (&b - &a) / steps as f64;
        let bound = 2.0 * reach * dq.lp_norm(1);
        let mut prev = m.collision_values(&a).gamma;
        for i in 1..=steps {
            let next = m.collision_values(&(&a + &dq * i as f64)).gamma;
            let jump = (&next - &prev).amax();
            assert!(jump <= 10.0 * bound, "jump {jump} vs bound {bound}");
            prev = next;
        }
    }
}
