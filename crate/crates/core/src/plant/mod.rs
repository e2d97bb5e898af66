//! Euler-Lagrange plants `M(q)q̈ + C(q, q̇)q̇ + g(q) = u + d`, disturbance
//! fields, reference trajectories and the fixed-step closed-loop simulator.

mod disturbance;
mod features;
mod reference;
mod sim;

pub use disturbance::{DisturbanceContext, DisturbanceField, Fan, SpatialWind, SpatialWindParams, TeacherField};
pub use features::{Feature, FeatureMap};
pub use reference::{Figure8, RandomSmooth, RefPoint, Reference};
pub use sim::{rk4_step, step, LogRow, SimConfig, SimState, Simulation, TrajectoryLog};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Plant: Send + Sync {
    /// Configuration dimension `n`.
    fn dim(&self) -> usize;
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64>;
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64>;

    /// `q̈ = M(q)⁻¹ (u + d − C q̇ − g)`.
    fn dynamics_accel(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.dim();
        for v in [q, qd, u, d] {
            if v.len() != n {
                return Err(Error::Shape { expected: n, got: v.len() });
            }
        }
        let rhs = u + d - self.coriolis(q, qd) * qd - self.gravity(q);
        let m = self.mass_matrix(q);
        m.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))
    }

    /// Kinetic energy `½ q̇ᵀ M(q) q̇`.
    fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * qd.dot(&(self.mass_matrix(q) * qd))
    }
}

/// Translational quadrotor model: `M = mI`, `C = 0`, `g(q) = −m·g_vec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorPointMass {
    pub mass: f64,
    pub gravity: [f64; 3],
}

impl Default for QuadrotorPointMass {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl Plant for QuadrotorPointMass {
    fn dim(&self) -> usize {
        3
    }

    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3) * self.mass
    }

    fn coriolis(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }

    fn gravity(&self, _q: &DVector<f64>) -> DVector<f64> {
        let g = Vector3::from(self.gravity) * -self.mass;
        DVector::from_column_slice(g.as_slice())
    }
}

/// Planar two-link arm with point-mass-plus-inertia links, joint angles
/// measured from the horizontal, gravity along −y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkManipulator {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    /// Distance from joint 1 to the centre of mass of link 1.
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for TwoLinkManipulator {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 0.8,
            l1: 1.0,
            lc1: 0.5,
            lc2: 0.4,
            i1: 0.08,
            i2: 0.05,
            g: 9.81,
        }
    }
}

impl Plant for TwoLinkManipulator {
    fn dim(&self) -> usize {
        2
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let c2 = q[1].cos();
        let m22 = self.m2 * self.lc2 * self.lc2 + self.i2;
        let m12 = m22 + self.m2 * self.l1 * self.lc2 * c2;
        let m11 = self.m1 * self.lc1 * self.lc1
            + self.m2 * (self.l1 * self.l1 + self.lc2 * self.lc2 + 2.0 * self.l1 * self.lc2 * c2)
            + self.i1
            + self.i2;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }

    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let h = -self.m2 * self.l1 * self.lc2 * q[1].sin();
        DMatrix::from_row_slice(2, 2, &[h * qd[1], h * (qd[0] + qd[1]), -h * qd[0], 0.0])
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let g2 = self.m2 * self.lc2 * self.g * c12;
        DVector::from_vec(vec![(self.m1 * self.lc1 + self.m2 * self.l1) * self.g * c1 + g2, g2])
    }
}

/// Plant selection as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantModel {
    Quadrotor(QuadrotorPointMass),
    TwoLink(TwoLinkManipulator),
}

impl Default for PlantModel {
    fn default() -> Self {
        PlantModel::Quadrotor(QuadrotorPointMass::default())
    }
}

impl PlantModel {
    fn inner(&self) -> &dyn Plant {
        match self {
            PlantModel::Quadrotor(p) => p,
            PlantModel::TwoLink(p) => p,
        }
    }
}

impl Plant for PlantModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.inner().mass_matrix(q)
    }

    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        self.inner().coriolis(q, qd)
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        self.inner().gravity(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hover_equilibrium() {
        let quad = QuadrotorPointMass { mass: 0.042, ..Default::default() };
        let q = dvector![0.3, -0.2, 1.0];
        let zero = DVector::zeros(3);
        let u = quad.gravity(&q);
        assert_eq!(quad.dynamics_accel(&q, &zero, &u, &zero).unwrap(), zero);
    }

    #[test]
    fn unit_mass_acceleration() {
        let quad = QuadrotorPointMass::default();
        let q = DVector::zeros(3);
        let u = quad.gravity(&q) + dvector![1.0, 0.0, 0.0];
        let a = quad.dynamics_accel(&q, &q, &u, &DVector::zeros(3)).unwrap();
        assert!((a - dvector![1.0, 0.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let quad = QuadrotorPointMass::default();
        let z3 = DVector::zeros(3);
        assert!(quad.dynamics_accel(&z3, &z3, &DVector::zeros(2), &z3).is_err());
    }

    #[test]
    fn two_link_mass_matrix_is_spd() {
        let arm = TwoLinkManipulator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = dvector![rng.random_range(-3.2..3.2), rng.random_range(-3.2..3.2)];
            let m = arm.mass_matrix(&q);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.min() > 1e-3);
        }
    }

    #[test]
    fn two_link_skew_symmetry() {
        let arm = TwoLinkManipulator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..100 {
            let q = dvector![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let qd = dvector![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mdot = (arm.mass_matrix(&(&q + &qd * h)) - arm.mass_matrix(&(&q - &qd * h))) / (2.0 * h);
            let n = mdot - 2.0 * arm.coriolis(&q, &qd);
            let v = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert!(v.dot(&(&n * &v)).abs() < 1e-8);
        }
    }
}
