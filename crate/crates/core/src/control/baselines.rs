use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{composite_error, ControlOutput, Controller, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    /// Clamp on each component of the error integral.
    pub i_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 32.0,
            kd: 12.0,
            ki: 0.0,
            i_limit: 2.0,
        }
    }
}

/// `u = M q̈_d + C q̇_d + g − Kp q̃ − Kd q̃̇ − Ki ∫q̃`, scalar gains scaled by
/// the mass matrix diagonal mean so the same numbers suit any plant mass.
pub struct Pid {
    name: String,
    pub gains: PidGains,
    integral: Option<DVector<f64>>,
}

impl Pid {
    pub fn new(name: impl Into<String>, gains: PidGains) -> Result<Self> {
        if !(gains.kp >= 0.0 && gains.kd >= 0.0 && gains.ki >= 0.0 && gains.i_limit >= 0.0) {
            return Err(Error::Config("PID gains must be non-negative".into()));
        }
        Ok(Self {
            name: name.into(),
            gains,
            integral: None,
        })
    }

    pub fn integral(&self) -> Option<&DVector<f64>> {
        self.integral.as_ref()
    }
}

/// The nominal PD tracker used for data collection.
pub fn pid_controller(gains: PidGains) -> Result<Pid> {
    Pid::new("pid", gains)
}

impl Controller for Pid {
    fn name(&self) -> &str {
        &self.name
    }

    fn control(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let r = obs.reference;
        let n = obs.q.len();
        let q_tilde = obs.q - &r.q;
        let qd_tilde = obs.qd - &r.qd;
        let m = obs.plant.mass_matrix(obs.q);
        let scale = m.diagonal().mean();
        let integral = self.integral.get_or_insert_with(|| DVector::zeros(n));
        let g = &self.gains;
        let u = &m * &r.qdd + obs.plant.coriolis(obs.q, obs.qd) * &r.qd + obs.plant.gravity(obs.q)
            - (&q_tilde * g.kp + &qd_tilde * g.kd + &*integral * g.ki) * scale;
        // s is reported with Λ = Kp/Kd so logs stay comparable.
        let lam = if g.kd > 0.0 { g.kp / g.kd } else { 0.0 };
        let s = &qd_tilde + &q_tilde * lam;
        Ok(ControlOutput {
            u,
            s,
            f_pred: None,
            features: None,
        })
    }

    fn update(&mut self, obs: &Observation, _out: &ControlOutput) -> Result<()> {
        if let Some(i) = self.integral.as_mut() {
            let lim = self.gains.i_limit;
            *i += (obs.q - &obs.reference.q) * obs.dt;
            i.apply(|v| *v = v.clamp(-lim, lim));
        }
        Ok(())
    }
}

/// First-order discrete low-pass `x ← x + α(u − x)`, `α = 1 − exp(−2π f_c dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPass1 {
    pub alpha: f64,
    pub state: Option<DVector<f64>>,
}

impl LowPass1 {
    pub fn new(cutoff_hz: f64, dt: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && dt > 0.0) {
            return Err(Error::Config("low-pass cutoff and dt must be positive".into()));
        }
        Ok(Self {
            alpha: 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz * dt).exp(),
            state: None,
        })
    }

    pub fn filter(&mut self, u: &DVector<f64>) -> &DVector<f64> {
        let alpha = self.alpha;
        match &mut self.state {
            Some(x) => *x += (u - &*x) * alpha,
            None => self.state = Some(u.clone()),
        }
        self.state.as_ref().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndiConfig {
    pub cutoff_hz: f64,
    pub lambda_gain: f64,
    pub k_gain: f64,
}

impl Default for IndiConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 5.0,
            lambda_gain: 4.0,
            k_gain: 8.0,
        }
    }
}

/// Incremental nonlinear dynamic inversion: the disturbance is estimated from
/// the measured acceleration and the last applied input, low-pass filtered,
/// and cancelled inside the composite PD law.
pub struct Indi {
    pub config: IndiConfig,
    filter: Option<LowPass1>,
    estimate: Option<DVector<f64>>,
}

impl Indi {
    pub fn new(config: IndiConfig) -> Result<Self> {
        if !(config.cutoff_hz > 0.0 && config.lambda_gain > 0.0 && config.k_gain > 0.0) {
            return Err(Error::Config("INDI cutoff and gains must be positive".into()));
        }
        Ok(Self {
            config,
            filter: None,
            estimate: None,
        })
    }

    pub fn estimate(&self) -> Option<&DVector<f64>> {
        self.estimate.as_ref()
    }

    fn observe(&mut self, obs: &Observation) -> Result<DVector<f64>> {
        let filter = match &mut self.filter {
            Some(f) => f,
            None => self.filter.insert(LowPass1::new(self.config.cutoff_hz, obs.dt)?),
        };
        let raw = obs.plant.mass_matrix(obs.q) * obs.accel_meas + obs.plant.coriolis(obs.q, obs.qd) * obs.qd
            + obs.plant.gravity(obs.q)
            - obs.u_prev;
        Ok(filter.filter(&raw).clone())
    }
}

impl Controller for Indi {
    fn name(&self) -> &str {
        "indi"
    }

    fn control(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let d_hat = self.observe(obs)?;
        let n = obs.q.len();
        let r = obs.reference;
        let eye = DMatrix::<f64>::identity(n, n);
        let m = obs.plant.mass_matrix(obs.q);
        let k = &eye * (self.config.k_gain * m.diagonal().mean());
        let err = composite_error(obs.q, obs.qd, &r.q, &r.qd, &r.qdd, &(&eye * self.config.lambda_gain));
        let u = super::control_law(obs.plant, obs.q, obs.qd, &err, &k, &d_hat);
        self.estimate = Some(d_hat.clone());
        Ok(ControlOutput {
            u,
            s: err.s,
            f_pred: Some(d_hat),
            features: None,
        })
    }
}

/// Composite PD law fed the true disturbance. Not realisable; a lower bound
/// on achievable tracking error.
pub struct OracleFeedforward {
    pub lambda_mat: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl Controller for OracleFeedforward {
    fn name(&self) -> &str {
        "oracle-feedforward"
    }

    fn control(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let r = obs.reference;
        let err = composite_error(obs.q, obs.qd, &r.q, &r.qd, &r.qdd, &self.lambda_mat);
        let u = super::control_law(obs.plant, obs.q, obs.qd, &err, &self.k, obs.d_true);
        Ok(ControlOutput {
            u,
            s: err.s,
            f_pred: Some(obs.d_true.clone()),
            features: None,
        })
    }
}
