//! Lyapunov diagnostics, stability-bound evaluation and tracking metrics.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::Gains;
use crate::error::{Error, Result};
use crate::nnet::Mlp;
use crate::plant::{DisturbanceField, Plant, TrajectoryLog};

/// `V = sᵀMs + ‖θ̃‖²/γ`.
pub fn lyapunov_v(s: &DVector<f64>, theta_tilde: &DVector<f64>, m: &DMatrix<f64>, gamma: f64) -> f64 {
    s.dot(&(m * s)) + theta_tilde.norm_squared() / gamma
}

fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

/// `ρ = 2·min(λ_min(K)/λ_max(M), λγ)`.
pub fn rho(k: &DMatrix<f64>, m_max: f64, lambda: f64, gamma: f64) -> Result<f64> {
    let (k_min, _) = sym_eig_range(k);
    let r = 2.0 * (k_min / m_max).min(lambda * gamma);
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("convergence rate ρ = {r} is not positive")));
    }
    Ok(r)
}

/// `λ_min(diag(M, γ⁻¹I)) = min(λ_min(M), 1/γ)`.
pub fn lambda_min_script_m(m_min: f64, gamma: f64) -> f64 {
    m_min.min(1.0 / gamma)
}

/// Radius `D / (ρ λ_min(𝓜))` of the ball `[s; θ̃]` converges to.
pub fn error_ball_bound(d: f64, rho: f64, m_min: f64, gamma: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Config(format!("ρ must be positive, got {rho}")));
    }
    Ok(d / (rho * lambda_min_script_m(m_min, gamma)))
}

/// RMS of `‖q − q_d‖` over rows with `t ≥ skip_s`.
pub fn tracking_rmse(log: &TrajectoryLog, skip_s: f64) -> f64 {
    let errs: Vec<f64> = log
        .rows
        .iter()
        .filter(|r| r.t >= skip_s - 1e-12)
        .map(|r| (&r.q - &r.q_ref).norm_squared())
        .collect();
    if errs.is_empty() {
        return 0.0;
    }
    (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// Decay rate; non-positive when the series does not decay.
    pub rate: f64,
    pub floor: f64,
}

/// Least-squares `a e^{−kt} + b` for fixed `k`; returns `(a, b, sse)` with `b ≥ 0`.
fn fit_fixed_rate(t: &[f64], v: &[f64], k: f64) -> (f64, f64, f64) {
    let t0 = t[0];
    let e: Vec<f64> = t.iter().map(|ti| (-k * (ti - t0)).exp()).collect();
    let n = t.len() as f64;
    let (se, see, sv, sev) = e.iter().zip(v).fold((0.0, 0.0, 0.0, 0.0), |acc, (ei, vi)| {
        (acc.0 + ei, acc.1 + ei * ei, acc.2 + vi, acc.3 + ei * vi)
    });
    let det = see * n - se * se;
    let (mut a, mut b) = if det.abs() > 1e-300 {
        ((sev * n - se * sv) / det, (see * sv - se * sev) / det)
    } else {
        (sev / see, 0.0)
    };
    if b < 0.0 {
        b = 0.0;
        a = sev / see;
    }
    let sse = e.iter().zip(v).map(|(ei, vi)| (a * ei + b - vi).powi(2)).sum();
    (a, b, sse)
}

fn log_linear_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let cov: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let var: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    cov / var
}

/// Fit `V(t) ≈ a e^{−rate·t} + floor`.
///
/// The floor comes from a variable-projection search over the rate; the
/// rate is then refined by a straight-line fit of `log(V − floor)` over the
/// samples that are still well above the floor.
pub fn exp_rate_fit(t: &[f64], v: &[f64]) -> Result<ExpFit> {
    if t.len() != v.len() || t.len() < 3 {
        return Err(Error::Usage("exponential fit needs at least 3 matched samples".into()));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Usage("exponential fit needs a positive series".into()));
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return Err(Error::Usage("time axis must increase".into()));
    }
    let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let overall = -log_linear_slope(t, &logs);
    if overall <= 0.0 {
        return Ok(ExpFit { rate: overall, floor: 0.0 });
    }

    // Coarse log-spaced scan, then golden-section refinement.
    let (k_lo, k_hi) = (1e-3 / span, 1e4 / span);
    let grid = 400;
    let sse = |k: f64| fit_fixed_rate(t, v, k).2;
    let ks: Vec<f64> = (0..=grid)
        .map(|i| k_lo * (k_hi / k_lo).powf(i as f64 / grid as f64))
        .collect();
    let best = (0..ks.len()).min_by(|&a, &b| sse(ks[a]).total_cmp(&sse(ks[b]))).unwrap();
    let (mut a, mut b) = (ks[best.saturating_sub(1)].ln(), ks[(best + 1).min(grid)].ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sse(c.exp()) < sse(d.exp()) {
            b = d;
        } else {
            a = c;
        }
    }
    let k = (0.5 * (a + b)).exp();
    let (amp, floor, _) = fit_fixed_rate(t, v, k);
    if amp <= 0.0 {
        return Ok(ExpFit { rate: overall, floor: 0.0 });
    }

    let excess: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let peak = excess.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = (0..v.len()).take_while(|&i| excess[i] > 0.05 * peak || i == 0).collect();
    let rate = if keep.len() >= 3 {
        let tt: Vec<f64> = keep.iter().map(|&i| t[i]).collect();
        let ly: Vec<f64> = keep.iter().map(|&i| excess[i].max(f64::MIN_POSITIVE).ln()).collect();
        -log_linear_slope(&tt, &ly)
    } else {
        k
    };
    Ok(ExpFit { rate, floor })
}

/// Fraction of interior samples where the centred-difference `V̇` satisfies
/// `V̇ ≤ −2ρV + 2√(V/λ_min(𝓜))·D + slack`, with `slack = 10·dt·max|V̇|`.
pub fn vdot_inequality_fraction(t: &[f64], v: &[f64], rho: f64, d: f64, lambda_min_m: f64) -> f64 {
    if v.len() < 3 {
        return 1.0;
    }
    let vdot: Vec<f64> = (1..v.len() - 1).map(|i| (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1])).collect();
    let dt = t[1] - t[0];
    let slack = 10.0 * dt * vdot.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let ok = vdot
        .iter()
        .enumerate()
        .filter(|(j, vd)| {
            let vi = v[j + 1];
            **vd <= -2.0 * rho * vi + 2.0 * (vi / lambda_min_m).sqrt() * d + slack
        })
        .count();
    ok as f64 / vdot.len() as f64
}

/// Bound on the closed-loop disturbance term, with the per-part maxima it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceBound {
    /// `D = max_t 2‖[r − μ; JᵀΓ(r + ε + μ) + λ(θ* − θ0)]‖`.
    pub d: f64,
    /// Largest Taylor remainder `‖r‖`.
    pub r_max: f64,
    /// Largest teacher mismatch `‖μ‖`.
    pub mu_max: f64,
    pub eps_max: f64,
}

/// Per-row ingredients shared by the bound and the report.
struct RowTerms {
    s: DVector<f64>,
    theta_tilde: DVector<f64>,
    bound_term: f64,
    r: f64,
    mu: f64,
    eps: f64,
}

fn row_terms(
    log: &TrajectoryLog,
    student: &Mlp,
    field: &DisturbanceField,
    gamma_mat: &DMatrix<f64>,
    lambda: f64,
    theta0: &DVector<f64>,
) -> Result<Vec<RowTerms>> {
    if field.teacher().is_none() {
        return Err(Error::Usage("the disturbance bound needs a teacher field".into()));
    }
    let mut work = student.clone();
    let mut star = student.clone();
    let mut out = Vec::with_capacity(log.len());
    for row in &log.rows {
        let (Some(theta), Some(x)) = (&row.params, &row.features) else {
            return Err(Error::Usage("log rows need recorded parameters and features".into()));
        };
        let theta_star = field.theta_star(row.t).expect("teacher field");
        if theta_star.len() != theta.len() {
            return Err(Error::Usage("student and teacher architectures differ".into()));
        }
        work.set_params(theta)?;
        star.set_params(&theta_star)?;
        let (f, jac) = work.forward_with_jacobian(x)?;
        let f_star = star.forward(x)?;
        let theta_tilde = theta - &theta_star;
        let r = &f - &f_star - &jac * &theta_tilde;
        let mu = &row.d_true - &f_star;
        let eps = &row.y - &row.d_true;
        let top = &r - &mu;
        let bottom = jac.tr_mul(&(gamma_mat * (&r + &eps + &mu))) + (&theta_star - theta0) * lambda;
        let bound_term = 2.0 * (top.norm_squared() + bottom.norm_squared()).sqrt();
        out.push(RowTerms {
            s: row.s.clone(),
            theta_tilde,
            bound_term,
            r: r.norm(),
            mu: mu.norm(),
            eps: eps.norm(),
        });
    }
    Ok(out)
}

/// Evaluate `D` along a teacher-mode run. The log must carry parameters
/// and network inputs for every row.
pub fn disturbance_bound_d(
    log: &TrajectoryLog,
    student: &Mlp,
    field: &DisturbanceField,
    gamma_mat: &DMatrix<f64>,
    lambda: f64,
    theta0: &DVector<f64>,
) -> Result<DisturbanceBound> {
    let terms = row_terms(log, student, field, gamma_mat, lambda, theta0)?;
    Ok(summarise_bound(&terms))
}

fn summarise_bound(terms: &[RowTerms]) -> DisturbanceBound {
    let max = |f: &dyn Fn(&RowTerms) -> f64| terms.iter().map(f).fold(0.0, f64::max);
    DisturbanceBound {
        d: max(&|r| r.bound_term),
        r_max: max(&|r| r.r),
        mu_max: max(&|r| r.mu),
        eps_max: max(&|r| r.eps),
    }
}

/// Summary of the network Jacobian norm along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub max: f64,
    pub median: f64,
}

impl JacobianStats {
    pub fn from_log(log: &TrajectoryLog) -> Option<Self> {
        let mut v: Vec<f64> = log.rows.iter().filter_map(|r| r.jac_norm).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
        Some(Self {
            max: *v.last().unwrap(),
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    /// `‖[s; θ̃]‖` per step.
    pub z_norm: Vec<f64>,
    pub fit: ExpFit,
    pub rho: f64,
    pub d: f64,
    pub lambda_min_m: f64,
    pub radius: f64,
    /// First time after which `‖[s; θ̃]‖` stays inside the ball.
    pub time_to_ball: Option<f64>,
    pub final_s_norm: f64,
    pub final_theta_tilde_norm: f64,
    pub final_z_norm: f64,
    pub r_max: f64,
    pub mu_max: f64,
    pub eps_max: f64,
    pub vdot_fraction: f64,
    pub jacobian: Option<JacobianStats>,
}

/// Full teacher-mode diagnostic for one adaptive run.
pub fn stability_report(
    log: &TrajectoryLog,
    plant: &dyn Plant,
    student: &Mlp,
    field: &DisturbanceField,
    gains: &Gains,
    theta0: &DVector<f64>,
) -> Result<StabilityReport> {
    let terms = row_terms(log, student, field, &gains.gamma_mat, gains.lambda, theta0)?;
    let bound = summarise_bound(&terms);
    let (mut m_min, mut m_max) = (f64::INFINITY, 0.0f64);
    let mut v = Vec::with_capacity(terms.len());
    let mut z_norm = Vec::with_capacity(terms.len());
    for (row, term) in log.rows.iter().zip(&terms) {
        let m = plant.mass_matrix(&row.q);
        let (lo, hi) = sym_eig_range(&m);
        m_min = m_min.min(lo);
        m_max = m_max.max(hi);
        v.push(lyapunov_v(&term.s, &term.theta_tilde, &m, gains.gamma));
        z_norm.push((term.s.norm_squared() + term.theta_tilde.norm_squared()).sqrt());
    }
    let rho = rho(&gains.k, m_max, gains.lambda, gains.gamma)?;
    let lambda_min_m = lambda_min_script_m(m_min, gains.gamma);
    let radius = error_ball_bound(bound.d, rho, m_min, gains.gamma)?;
    let t = log.times();
    let fit = exp_rate_fit(&t, &v.iter().map(|x| x.max(f64::MIN_POSITIVE)).collect::<Vec<_>>())?;
    let time_to_ball = match z_norm.iter().rposition(|z| *z > radius) {
        None => t.first().copied(),
        Some(i) if i + 1 < t.len() => Some(t[i + 1]),
        Some(_) => None,
    };
    let last = terms.last().ok_or_else(|| Error::Usage("empty log".into()))?;
    Ok(StabilityReport {
        vdot_fraction: vdot_inequality_fraction(&t, &v, rho, bound.d, lambda_min_m),
        t,
        final_s_norm: last.s.norm(),
        final_theta_tilde_norm: last.theta_tilde.norm(),
        final_z_norm: *z_norm.last().unwrap(),
        v,
        z_norm,
        fit,
        rho,
        d: bound.d,
        lambda_min_m,
        radius,
        time_to_ball,
        r_max: bound.r_max,
        mu_max: bound.mu_max,
        eps_max: bound.eps_max,
        jacobian: JacobianStats::from_log(log),
    })
}

impl StabilityReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Long-format per-step series: `t,series,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "series", "value"])?;
        for (i, t) in self.t.iter().enumerate() {
            w.write_record([t.to_string(), "v".into(), self.v[i].to_string()])?;
            w.write_record([t.to_string(), "z_norm".into(), self.z_norm[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}
