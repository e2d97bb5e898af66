use metaadapt::analysis::{
    disturbance_bound_d, error_ball_bound, exp_rate_fit, lyapunov_v, rho, stability_report, tracking_rmse,
};
use metaadapt::control::{AdaptScope, AdaptiveController, ControllerState, Gains};
use metaadapt::nnet::Mlp;
use metaadapt::plant::{
    DisturbanceField, Feature, FeatureMap, Figure8, Plant, QuadrotorPointMass, Reference, SimConfig, Simulation,
    TeacherField, TrajectoryLog,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn features() -> FeatureMap {
    FeatureMap(vec![Feature::Velocity, Feature::TrackingError])
}

fn teacher_net() -> Mlp {
    let mut net = Mlp::he_uniform(&[6, 10, 3], 21).unwrap();
    net.project_spectral(2.0).unwrap();
    net
}

fn fly(student: Mlp, anchor: Option<DVector<f64>>, scope: AdaptScope, gains: &Gains) -> (TrajectoryLog, DisturbanceField, DVector<f64>) {
    let field = DisturbanceField::Teacher(TeacherField::fixed(teacher_net(), features(), 100.0));
    let mut state = ControllerState::new(student, gains.clone(), 3).unwrap();
    if let Some(a) = anchor {
        state.theta0 = metaadapt::nnet::ParamVector::new(a).unwrap();
    }
    let theta0 = state.theta0.as_vector().clone();
    let mut ctrl = AdaptiveController::new("ac", state, features(), scope, 100.0);
    let cfg = SimConfig {
        duration: 6.0,
        record_params: true,
        ..Default::default()
    };
    let log = Simulation::new(&QuadrotorPointMass::default(), &field, &Reference::Figure8(Figure8::default()), cfg)
        .run(&mut ctrl)
        .unwrap();
    (log, field, theta0)
}

#[test]
fn bound_reduces_to_anchor_term_for_an_exact_student() {
    // θ = θ* for all time and y = d: r = μ = ε = 0, so D = 2λ‖θ* − θ0‖.
    let teacher = teacher_net();
    let theta_star = teacher.flatten().into_inner();
    let theta0 = theta_star.map(|v| v * 0.9 + 0.01);
    let gains = Gains::isotropic(3, 4.0, 8.0, 0.5, 0.2, 0.05, 2.0).unwrap();
    let (log, field, _) = fly(teacher.clone(), Some(theta0.clone()), AdaptScope::Frozen, &gains);
    let b = disturbance_bound_d(&log, &teacher, &field, &gains.gamma_mat, gains.lambda, &theta0).unwrap();
    let expect = 2.0 * gains.lambda * (&theta_star - &theta0).norm();
    assert!((b.d - expect).abs() <= 1e-9 * expect, "{} vs {expect}", b.d);
    assert!(b.r_max < 1e-12 && b.mu_max < 1e-12 && b.eps_max < 1e-12);
}

#[test]
fn logged_v_matches_the_lyapunov_function() {
    let mut student = teacher_net().flatten().into_inner();
    let p = student.len();
    student[p - 2] += 0.7;
    let student = teacher_net().with_params(&student).unwrap();
    let gains = Gains::isotropic(3, 4.0, 8.0, 1.0, 1.0, 0.01, 2.0).unwrap();
    let (log, field, theta0) = fly(student.clone(), None, AdaptScope::Full, &gains);
    let quad = QuadrotorPointMass::default();
    let theta_star = field.theta_star(0.0).unwrap();
    for row in &log.rows {
        let tilde = row.params.as_ref().unwrap() - &theta_star;
        let v = lyapunov_v(&row.s, &tilde, &quad.mass_matrix(&row.q), gains.gamma);
        assert!((v - row.v.unwrap()).abs() <= 1e-12 * (1.0 + v));
    }
    let report = stability_report(&log, &quad, &student, &field, &gains, &theta0).unwrap();
    assert!(report.vdot_fraction >= 0.95, "{}", report.vdot_fraction);
    assert!(report.v.last().unwrap() < &report.v[0]);
    assert!(report.final_z_norm <= report.radius);
}

#[test]
fn rmse_skips_the_transient() {
    let gains = Gains::isotropic(3, 4.0, 8.0, 1.0, 1.0, 0.01, 2.0).unwrap();
    let (log, _, _) = fly(teacher_net(), None, AdaptScope::Full, &gains);
    let manual = {
        let e: Vec<f64> = log.rows.iter().filter(|r| r.t >= 1.0).map(|r| (&r.q - &r.q_ref).norm_squared()).collect();
        (e.iter().sum::<f64>() / e.len() as f64).sqrt()
    };
    assert!((tracking_rmse(&log, 1.0) - manual).abs() < 1e-15);
}

proptest! {
    #[test]
    fn rho_is_the_slower_of_the_two_rates(k in 0.1f64..20.0, m in 0.1f64..5.0, lambda in 0.001f64..1.0, gamma in 0.01f64..10.0) {
        let r = rho(&(DMatrix::identity(3, 3) * k), m, lambda, gamma).unwrap();
        prop_assert!((r - 2.0 * (k / m).min(lambda * gamma)).abs() <= 1e-12 * r);
    }

    #[test]
    fn radius_scales_linearly_with_d(d in 0.0f64..10.0, r in 0.01f64..5.0, m in 0.1f64..5.0, gamma in 0.01f64..10.0) {
        let one = error_ball_bound(1.0, r, m, gamma).unwrap();
        prop_assert!((error_ball_bound(d, r, m, gamma).unwrap() - d * one).abs() <= 1e-12 * (1.0 + d * one));
        prop_assert!((one - 1.0 / (r * m.min(1.0 / gamma))).abs() <= 1e-12 * one);
    }

    #[test]
    fn fit_recovers_rate_and_floor(rate in 0.1f64..5.0, amp in 0.1f64..10.0, floor in 0.0f64..2.0) {
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.02).collect();
        let v: Vec<f64> = t.iter().map(|ti| amp * (-rate * ti).exp() + floor + 1e-9).collect();
        let fit = exp_rate_fit(&t, &v).unwrap();
        prop_assert!((fit.rate - rate).abs() <= 0.05 * rate, "{} vs {}", fit.rate, rate);
    }
}
