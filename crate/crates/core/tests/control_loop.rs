use metaadapt::control::{adapt_step, AdaptScope, AdaptiveController, ControllerState, Gains, OracleFeedforward};
use metaadapt::nnet::Mlp;
use metaadapt::plant::{
    DisturbanceField, Feature, FeatureMap, Figure8, Plant, QuadrotorPointMass, Reference, SimConfig, SimState, Simulation,
    TeacherField,
};
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

fn eye(k: f64) -> DMatrix<f64> {
    DMatrix::identity(3, 3) * k
}

#[test]
fn oracle_error_follows_first_order_decay() {
    // With d cancelled exactly, M ṡ + K s = 0, so s(t) = s0 e^{−(K/m) t}.
    let quad = QuadrotorPointMass::default();
    let field = DisturbanceField::Constant(dvector![1.5, -0.7, 0.4]);
    let reference = Reference::Hold { q: vec![0.0, 0.0, 1.0] };
    let cfg = SimConfig {
        dt: 1e-3,
        duration: 0.6,
        ..Default::default()
    };
    let sim = Simulation::new(&quad, &field, &reference, cfg);
    let init = SimState {
        q: dvector![0.1, -0.05, 1.0],
        ..sim.initial_state()
    };
    let mut ctrl = OracleFeedforward {
        lambda_mat: eye(4.0),
        k: eye(8.0),
    };
    let log = sim.run_from(&mut ctrl, init).unwrap();
    let s0 = log.rows[0].s.clone();
    for row in log.rows.iter().step_by(50) {
        let expect = &s0 * (-8.0 * row.t).exp();
        for i in 0..2 {
            assert!(
                (row.s[i] - expect[i]).abs() <= 0.02 * expect[i].abs() + 1e-12,
                "t = {}: {} vs {}",
                row.t,
                row.s[i],
                expect[i]
            );
        }
    }
}

#[test]
fn oracle_error_is_zero_order_hold_only() {
    // The remaining error comes from holding u over a step, so it shrinks with dt.
    let quad = QuadrotorPointMass::default();
    let field = DisturbanceField::Sinusoid {
        amplitude: dvector![2.0, 1.0, 0.5],
        freq_hz: 0.3,
        phase: 0.2,
    };
    let reference = Reference::Figure8(Figure8::default());
    let worst = |dt: f64| {
        let cfg = SimConfig {
            dt,
            duration: 12.0,
            ..Default::default()
        };
        let mut ctrl = OracleFeedforward {
            lambda_mat: eye(4.0),
            k: eye(8.0),
        };
        let log = Simulation::new(&quad, &field, &reference, cfg).run(&mut ctrl).unwrap();
        log.rows.iter().map(|r| (&r.q - &r.q_ref).norm()).fold(0.0, f64::max)
    };
    let coarse = worst(0.02);
    let fine = worst(0.002);
    assert!(coarse < 5e-3, "{coarse}");
    assert!(fine < 0.2 * coarse, "{fine} vs {coarse}");
}

fn teacher_setup(scope: AdaptScope) -> (Mlp, metaadapt::plant::TrajectoryLog) {
    let features = FeatureMap(vec![Feature::Velocity, Feature::TrackingError]);
    let mut teacher = Mlp::he_uniform(&[6, 8, 3], 4).unwrap();
    teacher.project_spectral(2.0).unwrap();
    let mut theta = teacher.flatten().into_inner();
    let p = theta.len();
    theta[p - 1] += 0.6;
    theta[p - 3] -= 0.4;
    let student = teacher.with_params(&theta).unwrap();
    let field = DisturbanceField::Teacher(TeacherField::fixed(teacher, features.clone(), 10.0));
    let gains = Gains::isotropic(3, 4.0, 8.0, 1.0, 1.0, 0.0, 2.0).unwrap();
    let state = ControllerState::new(student.clone(), gains, 3).unwrap();
    let mut ctrl = AdaptiveController::new("ac", state, features, scope, 50.0).with_monitoring(true);
    let cfg = SimConfig {
        duration: 10.0,
        record_params: true,
        ..Default::default()
    };
    let log = Simulation::new(&QuadrotorPointMass::default(), &field, &Reference::Figure8(Figure8::default()), cfg)
        .run(&mut ctrl)
        .unwrap();
    (student, log)
}

#[test]
fn adaptation_removes_a_realisable_offset() {
    let (_, log) = teacher_setup(AdaptScope::Full);
    let err = |r: &metaadapt::plant::LogRow| (r.f_pred.as_ref().unwrap() - &r.d_true).norm();
    let first = err(&log.rows[0]);
    let last = err(log.rows.last().unwrap());
    assert!(last < 0.1 * first, "prediction error {first} -> {last}");
    assert!(log.rows.iter().all(|r| r.max_layer_norm.unwrap() <= 2.0 + 1e-9));
}

#[test]
fn last_layer_scope_keeps_hidden_layers() {
    let (student, log) = teacher_setup(AdaptScope::LastLayer);
    let keep = student.last_layer_range();
    let theta0 = log.rows[0].params.clone().unwrap();
    let end = log.rows.last().unwrap().params.clone().unwrap();
    for i in 0..keep.start {
        assert_eq!(theta0[i], end[i]);
    }
    assert!((end.rows(keep.start, keep.len()) - theta0.rows(keep.start, keep.len())).norm() > 1e-3);
}

#[test]
fn frozen_scope_never_moves() {
    let (_, log) = teacher_setup(AdaptScope::Frozen);
    let first = log.rows[0].params.clone().unwrap();
    assert!(log.rows.iter().all(|r| r.params.as_ref() == Some(&first)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adapt_step_stays_in_the_spectral_ball(
        seed in 0u64..1000,
        s in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
        gamma in 0.01f64..50.0,
        nu in 0.3f64..3.0,
    ) {
        let net = Mlp::he_uniform(&[9, 12, 12, 3], seed).unwrap();
        let gains = Gains::isotropic(3, 4.0, 8.0, 1.0, gamma, 0.1, nu).unwrap();
        let mut state = ControllerState::new(net, gains, 3).unwrap();
        let x = DVector::from_fn(9, |i, _| (seed as f64 + i as f64).sin() * 3.0);
        for _ in 0..5 {
            state = adapt_step(&state, &DVector::from_vec(s.clone()), &x, &DVector::from_vec(y.clone()), 0.02, AdaptScope::Full).unwrap();
            for n in state.net.layer_spectral_norms() {
                prop_assert!(n <= nu + 1e-9);
            }
        }
    }
}

#[test]
fn hover_with_oracle_is_gravity_plus_wind_cancellation() {
    let quad = QuadrotorPointMass::default();
    let d = dvector![0.3, 0.0, -0.2];
    let field = DisturbanceField::Constant(d.clone());
    let reference = Reference::Hold { q: vec![0.0, 0.0, 1.0] };
    let mut ctrl = OracleFeedforward {
        lambda_mat: eye(4.0),
        k: eye(8.0),
    };
    let log = Simulation::new(&quad, &field, &reference, SimConfig { duration: 1.0, ..Default::default() })
        .run(&mut ctrl)
        .unwrap();
    let g = quad.gravity(&dvector![0.0, 0.0, 1.0]);
    for row in &log.rows {
        assert!((&row.u - (&g - &d)).amax() < 1e-12);
    }
}
