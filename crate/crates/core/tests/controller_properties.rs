use nalgebra::{DVector, Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflexgrasp::controller::{
    adjustment_velocities, control_tick, rotate_to_cone, step_mode, tip_frames, ContactState,
    ControllerParams, ControllerState, Mode, TipFrame,
};
use reflexgrasp::kinematics::RobotModel;
use reflexgrasp::qp::{QpSolver, QpStatus};
use reflexgrasp::stability::{angle_between, Method};

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() < 1.0 {
            return v.normalize();
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(unit(rng) * rng.random_range(0.0..3.0))
}

/// Contacts across the y axis with both normals tilted toward +x by `half`,
/// so each angle equals `half`.
fn pair_with_mean_angle(half: f64) -> [ContactState; 2] {
    let (s, c) = half.sin_cos();
    [
        ContactState::touching(Vector3::new(0.0, 0.05, 0.0), Vector3::new(s, -c, 0.0)),
        ContactState::touching(Vector3::new(0.0, -0.05, 0.0), Vector3::new(s, c, 0.0)),
    ]
}

/// Transition table written out case by case. `below` means all tips touch
/// with `f` under the threshold; `held` that this has lasted long enough.
fn expected_mode(mode: Mode, all: bool, below: bool, held: bool) -> Mode {
    match (mode, all, below, held) {
        (Mode::Stable, ..) => Mode::Stable,
        (_, true, true, true) => Mode::Stable,
        (Mode::Closing, false, ..) => Mode::Closing,
        (Mode::Closing, true, false, _) => Mode::Adjusting,
        // A grasp not yet confirmed stable is not deemed unstable either.
        (Mode::Closing, true, true, false) => Mode::Closing,
        (Mode::Adjusting, false, ..) => Mode::Closing,
        (Mode::Adjusting, true, ..) => Mode::Adjusting,
    }
}

proptest! {
    #[test]
    fn transitions_follow_the_table(
        mode_idx in 0usize..3,
        pattern in 0usize..4,
        half_deg in 0.5f64..60.0,
        count in 0usize..8,
    ) {
        let p = ControllerParams::default();
        let mode = Mode::ALL[mode_idx];
        let mut s = ControllerState::new(2);
        s.mode = mode;
        s.stable_count = count;
        let pair = pair_with_mean_angle(half_deg.to_radians());
        let sensor: Vec<ContactState> = (0..2)
            .map(|i| if pattern >> i & 1 == 1 { pair[i] } else { ContactState::none() })
            .collect();
        let all = pattern == 3;
        let f = 2.0 * half_deg.to_radians();
        let below = all && f < p.stable_threshold;
        let held = count + 1 >= p.hold_samples;
        let next = step_mode(&s, &sensor, &p);
        prop_assert_eq!(next.mode, expected_mode(mode, all, below, held));
        if all {
            prop_assert!((next.stability.unwrap().f - f).abs() < 1e-9);
        }
        prop_assert_eq!(next.transitions, usize::from(next.mode != mode));
        // Latches only exist while closing, and only on touching tips.
        for (latch, reading) in next.latched_normals.iter().zip(&sensor) {
            if next.mode != Mode::Closing {
                prop_assert!(latch.is_none());
            } else if reading.in_contact {
                prop_assert!(latch.is_some());
            }
        }
    }

    #[test]
    fn latches_hold_for_the_whole_closing_phase(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ControllerParams::default();
        let mut s = ControllerState::new(2);
        for _ in 0..40 {
            let sensor: Vec<ContactState> = (0..2)
                .map(|_| {
                    if rng.random_bool(0.4) {
                        ContactState::touching(unit(&mut rng) * 0.05, unit(&mut rng))
                    } else {
                        ContactState::none()
                    }
                })
                .collect();
            let next = step_mode(&s, &sensor, &p);
            if s.mode == Mode::Closing && next.mode == Mode::Closing {
                for (before, after) in s.latched_normals.iter().zip(&next.latched_normals) {
                    if before.is_some() {
                        prop_assert_eq!(before, after);
                    }
                }
            }
            s = next;
        }
    }
}

#[test]
fn adjusting_commands_stay_tangential() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for method in [Method::Pgd, Method::Cfgd] {
        for bleed in [0.0, 0.002] {
            let p = ControllerParams {
                method,
                normal_bleed: bleed,
                ..Default::default()
            };
            for _ in 0..500 {
                let mut s = ControllerState::new(2);
                s.mode = Mode::Adjusting;
                let c1 = unit(&mut rng) * 0.05;
                let c2 = unit(&mut rng) * 0.05;
                if (c1 - c2).norm() < 1e-3 {
                    continue;
                }
                s.last_sensor = vec![
                    ContactState::touching(c1, unit(&mut rng)),
                    ContactState::touching(c2, unit(&mut rng)),
                ];
                let frames: Vec<TipFrame> = s
                    .last_sensor
                    .iter()
                    .map(|c| TipFrame {
                        position: c.point - c.normal * 0.012,
                        rotation: random_rotation(&mut rng),
                        reference_direction: Unit::new_normalize(unit(&mut rng)),
                    })
                    .collect();
                let (cmds, angles) = adjustment_velocities(&s, &frames, &p).unwrap();
                for ((cmd, c), theta) in cmds.iter().zip(&s.last_sensor).zip(&angles) {
                    assert!((cmd.linear.dot(&c.normal) + bleed).abs() < 1e-9);
                    assert_eq!(cmd.alpha, if *theta > p.cone_half_angle { 1.0 } else { 0.0 });
                }
            }
        }
    }
}

fn cone_angle(r: &Matrix3<f64>, reference: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    angle_between(&(r * reference), v).unwrap()
}

/// The rotation command equals, up to a positive factor, the skew part of
/// the entrywise gradient of the cone angle times the transposed rotation.
#[test]
fn cone_rotation_matches_matrix_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = ControllerParams::default();
    let h = 1e-7;
    for _ in 0..200 {
        let rot = random_rotation(&mut rng);
        let reference = Unit::new_normalize(unit(&mut rng));
        let x = Vector3::zeros();
        let c = unit(&mut rng) * 0.012;
        let (theta, w) = rotate_to_cone(&x, &rot, &reference, &c, &p).unwrap();
        if !(0.05..=3.0).contains(&theta) {
            continue;
        }
        let r = *rot.matrix();
        let v = c.normalize();
        let mut grad = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let (mut plus, mut minus) = (r, r);
                plus[(i, j)] += h;
                minus[(i, j)] -= h;
                grad[(i, j)] = (cone_angle(&plus, &reference, &v) - cone_angle(&minus, &reference, &v)) / (2.0 * h);
            }
        }
        let g = grad * r.transpose();
        let skew = (g - g.transpose()) / 2.0;
        let vec = Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]);
        let eq_form = -vec * p.rotation_speed;
        let cos = eq_form.dot(&w) / (eq_form.norm() * w.norm());
        assert!(cos > 1.0 - 1e-6, "cos {cos}");
    }
}

/// Rolling the fingertip along the command lowers the angle at rate W.
#[test]
fn cone_rotation_rollout_decreases_angle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = ControllerParams {
        rotation_speed: 1.5,
        ..Default::default()
    };
    let dt = 1e-4;
    for _ in 0..500 {
        let rot = random_rotation(&mut rng);
        let reference = Unit::new_normalize(unit(&mut rng));
        let x = Vector3::new(0.1, 0.2, 0.3);
        let c = x + unit(&mut rng) * 0.012;
        let (theta, w) = rotate_to_cone(&x, &rot, &reference, &c, &p).unwrap();
        if theta < 1e-3 {
            continue;
        }
        let moved = Rotation3::from_scaled_axis(w * dt) * rot;
        let (after, _) = rotate_to_cone(&x, &moved, &reference, &c, &p).unwrap();
        assert!(after < theta);
        let rate = (after - theta) / dt;
        assert!((rate + p.rotation_speed).abs() < 1e-3, "rate {rate}");
    }
}

fn free_sensor() -> Vec<ContactState> {
    vec![ContactState::none(); 2]
}

#[test]
fn free_closing_moves_tips_toward_centroid() {
    let m = RobotModel::builtin();
    let p = ControllerParams::default();
    let kin = m.forward_kinematics(m.home());
    let col = m.collision_values(m.home());
    let out = control_tick(
        &ControllerState::new(2),
        &free_sensor(),
        &kin,
        &col,
        &m,
        &p,
        &QpSolver::default(),
        None,
    )
    .unwrap();
    assert_eq!(out.state.mode, Mode::Closing);
    let centroid = (kin.tips[0].position + kin.tips[1].position) / 2.0;
    for tip in &kin.tips {
        let realized = &tip.jx * &out.joint_velocity;
        let wanted = centroid - tip.position;
        assert!(angle_between(&realized, &wanted).unwrap() < 5f64.to_radians());
    }
}

#[test]
fn stable_state_commands_zero() {
    let m = RobotModel::builtin();
    let p = ControllerParams::default();
    let kin = m.forward_kinematics(m.home());
    let col = m.collision_values(m.home());
    let mut s = ControllerState::new(2);
    s.mode = Mode::Stable;
    let out = control_tick(&s, &free_sensor(), &kin, &col, &m, &p, &QpSolver::default(), None).unwrap();
    assert_eq!(out.state.mode, Mode::Stable);
    assert_eq!(out.joint_velocity, DVector::zeros(m.dof()));
    assert!(out.solution.is_none());
}

#[test]
fn single_contact_latches_and_keeps_closing() {
    let m = RobotModel::builtin();
    let p = ControllerParams::default();
    let kin = m.forward_kinematics(m.home());
    let col = m.collision_values(m.home());
    let frames = tip_frames(&kin, &m);
    let n = (frames[1].position - frames[0].position).normalize();
    let sensor = vec![ContactState::touching(frames[0].position + n * 0.012, n), ContactState::none()];
    let out = control_tick(&ControllerState::new(2), &sensor, &kin, &col, &m, &p, &QpSolver::default(), None)
        .unwrap();
    assert_eq!(out.state.mode, Mode::Closing);
    assert_eq!(out.state.latched_normals[0], Some(n));
    assert!((out.commands[0].linear - n * p.closing_speed).norm() < 1e-15);
}

/// With the collision margin clamped, every tick inside the joint limits
/// has a solvable QP.
#[test]
fn ticks_inside_limits_always_solve() {
    let m = RobotModel::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let solver = QpSolver::default();
    for k in 0..200 {
        let q = m.home() + DVector::from_fn(m.dof(), |_, _| rng.random_range(-0.3..0.3));
        let q = m.clamp_to_limits(&q);
        let kin = m.forward_kinematics(&q);
        let col = m.collision_values(&q);
        let frames = tip_frames(&kin, &m);
        let mut s = ControllerState::new(2);
        s.mode = if k % 2 == 0 { Mode::Closing } else { Mode::Adjusting };
        let sensor: Vec<ContactState> = frames
            .iter()
            .map(|f| {
                let n = unit(&mut rng);
                ContactState::touching(f.position + n * 0.012, n)
            })
            .collect();
        let p = ControllerParams {
            stable_threshold: 1e-6,
            ..Default::default()
        };
        let out = control_tick(&s, &sensor, &kin, &col, &m, &p, &solver, None).unwrap();
        assert_eq!(out.solution.unwrap().status, QpStatus::Solved, "config {k}");
    }
}
