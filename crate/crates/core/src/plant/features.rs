use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Plant;

/// One block of the network input, each `n` entries long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Configuration `q`.
    Position,
    /// Velocity `q̇`.
    Velocity,
    /// Position relative to the reference, `q − q_d`.
    TrackingError,
    /// Previous control input minus gravity compensation, `u_prev − g(q)`.
    PrevControl,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Position => "position",
            Feature::Velocity => "velocity",
            Feature::TrackingError => "tracking_error",
            Feature::PrevControl => "prev_control",
        }
    }
}

/// Ordered selection of feature blocks that forms the network input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMap(pub Vec<Feature>);

impl FeatureMap {
    /// `[q̇, q − q_d, u_prev − g]`.
    pub fn quadrotor_default() -> Self {
        Self(vec![Feature::Velocity, Feature::TrackingError, Feature::PrevControl])
    }

    /// `[q, q̇]`.
    pub fn manipulator_default() -> Self {
        Self(vec![Feature::Position, Feature::Velocity])
    }

    pub fn input_dim(&self, n: usize) -> usize {
        self.0.len() * n
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn eval(
        &self,
        plant: &dyn Plant,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        q_ref: &DVector<f64>,
        u_prev: &DVector<f64>,
    ) -> DVector<f64> {
        let n = q.len();
        let mut x = DVector::zeros(self.input_dim(n));
        for (k, feat) in self.0.iter().enumerate() {
            let block = match feat {
                Feature::Position => q.clone(),
                Feature::Velocity => qd.clone(),
                Feature::TrackingError => q - q_ref,
                Feature::PrevControl => u_prev - plant.gravity(q),
            };
            x.rows_mut(k * n, n).copy_from(&block);
        }
        x
    }
}
