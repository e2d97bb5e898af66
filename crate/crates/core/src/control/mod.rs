//! Tracking controllers.
//!
//! All controllers share the [`Controller`] interface used by the simulator.
//! The learned controllers are built on the composite velocity error
//! `s = q̃̇ + Λq̃` and the compensated PD law in [`composite`].

mod baselines;
mod composite;

pub use baselines::{pid_controller, Indi, IndiConfig, LowPass1, OracleFeedforward, Pid, PidGains};
pub use composite::{
    adapt_step, composite_error, control_law, AdaptScope, AdaptiveController, CompositeError, ControllerState, Gains,
};

use nalgebra::DVector;

use crate::error::Result;
use crate::plant::{Plant, RefPoint};

/// What a controller sees at one control tick.
pub struct Observation<'a> {
    pub t: f64,
    pub dt: f64,
    pub plant: &'a dyn Plant,
    pub q: &'a DVector<f64>,
    pub qd: &'a DVector<f64>,
    pub reference: &'a RefPoint,
    pub u_prev: &'a DVector<f64>,
    /// Measured disturbance `y = d + ε`.
    pub y: &'a DVector<f64>,
    /// Ground-truth disturbance; only the oracle baseline may read it.
    pub d_true: &'a DVector<f64>,
    /// Noisy acceleration measurement.
    pub accel_meas: &'a DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    pub s: DVector<f64>,
    /// Disturbance estimate used for compensation, if any.
    pub f_pred: Option<DVector<f64>>,
    /// Network input at this tick, if the controller uses a network.
    pub features: Option<DVector<f64>>,
}

/// Snapshot of a learning controller's parameters for logging.
pub struct AdaptiveDiagnostics<'a> {
    pub theta: DVector<f64>,
    pub theta0: &'a DVector<f64>,
    pub gamma: f64,
    /// Spectral norm of the output-parameter Jacobian at the last tick.
    pub jac_norm: f64,
    pub max_layer_norm: Option<f64>,
}

pub trait Controller {
    fn name(&self) -> &str;

    fn control(&mut self, obs: &Observation) -> Result<ControlOutput>;

    /// Called once per tick after [`Controller::control`].
    fn update(&mut self, _obs: &Observation, _out: &ControlOutput) -> Result<()> {
        Ok(())
    }

    fn adaptive(&self) -> Option<AdaptiveDiagnostics<'_>> {
        None
    }
}
