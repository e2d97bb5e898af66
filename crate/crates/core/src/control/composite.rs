use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AdaptiveDiagnostics, ControlOutput, Controller, Observation};
use crate::error::{Error, Result};
use crate::nnet::{Mlp, ParamVector};
use crate::plant::{FeatureMap, Plant};

/// Controller and adaptation gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    /// Λ in `s = q̃̇ + Λq̃`.
    pub lambda_mat: DMatrix<f64>,
    /// Feedback gain K.
    pub k: DMatrix<f64>,
    /// Prediction-error weight Γ (n_out × n_out).
    pub gamma_mat: DMatrix<f64>,
    /// Adaptation rate γ.
    pub gamma: f64,
    /// Pull towards the anchor θ0.
    pub lambda: f64,
    /// Per-layer spectral norm bound ν.
    pub nu: f64,
}

fn is_pd(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && m.clone().cholesky().is_some()
}

impl Gains {
    pub fn new(
        lambda_mat: DMatrix<f64>,
        k: DMatrix<f64>,
        gamma_mat: DMatrix<f64>,
        gamma: f64,
        lambda: f64,
        nu: f64,
    ) -> Result<Self> {
        for (name, m) in [("Λ", &lambda_mat), ("K", &k), ("Γ", &gamma_mat)] {
            if !is_pd(m) {
                return Err(Error::Config(format!("{name} must be symmetric positive definite")));
            }
        }
        if lambda_mat.nrows() != k.nrows() {
            return Err(Error::Config("Λ and K dimensions differ".into()));
        }
        if !(gamma >= 0.0 && lambda >= 0.0 && nu > 0.0) {
            return Err(Error::Config("γ, λ must be non-negative and ν positive".into()));
        }
        Ok(Self {
            lambda_mat,
            k,
            gamma_mat,
            gamma,
            lambda,
            nu,
        })
    }

    /// Scalar-diagonal gains for an `n`-dimensional plant.
    pub fn isotropic(n: usize, lambda_gain: f64, k_gain: f64, gamma_gain: f64, gamma: f64, lambda: f64, nu: f64) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(n, n);
        Self::new(&eye * lambda_gain, &eye * k_gain, &eye * gamma_gain, gamma, lambda, nu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeError {
    pub s: DVector<f64>,
    pub q_tilde: DVector<f64>,
    pub qd_tilde: DVector<f64>,
    /// Reference velocity `q̇_r = q̇_d − Λq̃`.
    pub qd_r: DVector<f64>,
    /// Reference acceleration `q̈_r = q̈_d − Λq̃̇`.
    pub qdd_r: DVector<f64>,
}

pub fn composite_error(
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_d: &DVector<f64>,
    qd_d: &DVector<f64>,
    qdd_d: &DVector<f64>,
    lambda_mat: &DMatrix<f64>,
) -> CompositeError {
    let q_tilde = q - q_d;
    let qd_tilde = qd - qd_d;
    let s = &qd_tilde + lambda_mat * &q_tilde;
    let qd_r = qd_d - lambda_mat * &q_tilde;
    let qdd_r = qdd_d - lambda_mat * &qd_tilde;
    CompositeError {
        s,
        q_tilde,
        qd_tilde,
        qd_r,
        qdd_r,
    }
}

/// `u = M(q)q̈_r + C(q, q̇)q̇_r + g(q) − Ks − f`.
pub fn control_law(
    plant: &dyn Plant,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    err: &CompositeError,
    k: &DMatrix<f64>,
    f: &DVector<f64>,
) -> DVector<f64> {
    plant.mass_matrix(q) * &err.qdd_r + plant.coriolis(q, qd) * &err.qd_r + plant.gravity(q) - k * &err.s - f
}

/// Which parameters the adaptation law may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptScope {
    /// Every network parameter.
    Full,
    /// Output layer only.
    LastLayer,
    /// No online adaptation.
    Frozen,
}

/// Live network (its parameters are θ), anchor θ0, gains and last control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub net: Mlp,
    pub theta0: ParamVector,
    pub gains: Gains,
    pub u_prev: DVector<f64>,
}

impl ControllerState {
    /// θ0 is projected onto the spectral-norm ball before it is stored.
    pub fn new(mut net: Mlp, gains: Gains, n: usize) -> Result<Self> {
        net.project_spectral(gains.nu)?;
        let theta0 = ParamVector::new(net.flatten().into_inner())?;
        Ok(Self {
            net,
            theta0,
            gains,
            u_prev: DVector::zeros(n),
        })
    }

    pub fn theta(&self) -> ParamVector {
        self.net.flatten()
    }
}

/// One explicit-Euler step of
/// `θ̇ = −γ Jᵀ[s + Γ(f − y)] − λ(θ − θ0)` followed by spectral projection.
///
/// `f` and `J` are evaluated at the current θ and `features`; `y` is the
/// measured disturbance. With [`AdaptScope::LastLayer`] the update is zeroed
/// outside the output layer.
pub fn adapt_step(
    state: &ControllerState,
    s: &DVector<f64>,
    features: &DVector<f64>,
    y: &DVector<f64>,
    dt: f64,
    scope: AdaptScope,
) -> Result<ControllerState> {
    let (f, jac) = state.net.forward_with_jacobian(features)?;
    adapt_with_jacobian(state, s, &f, &jac, y, dt, scope)
}

pub(crate) fn adapt_with_jacobian(
    state: &ControllerState,
    s: &DVector<f64>,
    f: &DVector<f64>,
    jac: &DMatrix<f64>,
    y: &DVector<f64>,
    dt: f64,
    scope: AdaptScope,
) -> Result<ControllerState> {
    if scope == AdaptScope::Frozen {
        return Ok(state.clone());
    }
    let g = &state.gains;
    let theta = state.net.flatten().into_inner();
    let drive = s + &g.gamma_mat * (f - y);
    let mut theta_dot = -(jac.tr_mul(&drive) * g.gamma) - (&theta - state.theta0.as_vector()) * g.lambda;
    if scope == AdaptScope::LastLayer {
        let keep = state.net.last_layer_range();
        for (i, v) in theta_dot.iter_mut().enumerate() {
            if !keep.contains(&i) {
                *v = 0.0;
            }
        }
    }
    if !theta_dot.iter().all(|v| v.is_finite()) {
        return Err(Error::AdaptationFault("non-finite parameter derivative".into()));
    }
    let mut next = state.clone();
    next.net.set_params(&(theta + theta_dot * dt))?;
    next.net.project_spectral(g.nu)?;
    Ok(next)
}

/// Composite-velocity tracking controller with a learned disturbance model.
pub struct AdaptiveController {
    name: String,
    pub state: ControllerState,
    pub features: FeatureMap,
    pub scope: AdaptScope,
    /// Box bound on each network output component used for compensation.
    pub output_bound: f64,
    /// Recompute every layer's spectral norm after each update.
    pub monitor_projection: bool,
    cache: Option<(DVector<f64>, DMatrix<f64>)>,
    jac_norm: f64,
    max_layer_norm: Option<f64>,
}

impl AdaptiveController {
    pub fn new(name: impl Into<String>, state: ControllerState, features: FeatureMap, scope: AdaptScope, output_bound: f64) -> Self {
        Self {
            name: name.into(),
            state,
            features,
            scope,
            output_bound,
            monitor_projection: false,
            cache: None,
            jac_norm: 0.0,
            max_layer_norm: None,
        }
    }

    pub fn with_monitoring(mut self, on: bool) -> Self {
        self.monitor_projection = on;
        self
    }
}

/// Spectral norm of a short-and-wide Jacobian via the eigenvalues of `J Jᵀ`.
pub(crate) fn jacobian_norm(jac: &DMatrix<f64>) -> f64 {
    let gram = jac * jac.transpose();
    gram.symmetric_eigenvalues().max().max(0.0).sqrt()
}

impl Controller for AdaptiveController {
    fn name(&self) -> &str {
        &self.name
    }

    fn control(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let r = obs.reference;
        let err = composite_error(obs.q, obs.qd, &r.q, &r.qd, &r.qdd, &self.state.gains.lambda_mat);
        let x = self.features.eval(obs.plant, obs.q, obs.qd, &r.q, obs.u_prev);
        let (f, jac) = self.state.net.forward_with_jacobian(&x)?;
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::ControllerFault(format!("network output is not finite at t = {:.3}", obs.t)));
        }
        let f_comp = f.map(|v| v.clamp(-self.output_bound, self.output_bound));
        let u = control_law(obs.plant, obs.q, obs.qd, &err, &self.state.gains.k, &f_comp);
        self.jac_norm = jacobian_norm(&jac);
        self.cache = Some((f, jac));
        self.state.u_prev = u.clone();
        Ok(ControlOutput {
            u,
            s: err.s,
            f_pred: Some(f_comp),
            features: Some(x),
        })
    }

    fn update(&mut self, obs: &Observation, out: &ControlOutput) -> Result<()> {
        let Some((f, jac)) = self.cache.take() else {
            return Ok(());
        };
        self.state = adapt_with_jacobian(&self.state, &out.s, &f, &jac, obs.y, obs.dt, self.scope)?;
        if self.monitor_projection {
            self.max_layer_norm = self.state.net.layer_spectral_norms().into_iter().reduce(f64::max);
        }
        Ok(())
    }

    fn adaptive(&self) -> Option<AdaptiveDiagnostics<'_>> {
        Some(AdaptiveDiagnostics {
            theta: self.state.net.flatten().into_inner(),
            theta0: self.state.theta0.as_vector(),
            gamma: self.state.gains.gamma,
            jac_norm: self.jac_norm,
            max_layer_norm: self.max_layer_norm,
        })
    }
}
