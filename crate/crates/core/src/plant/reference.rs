use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RefPoint {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

/// Horizontal figure-8 (Gerono lemniscate in x/y) at constant height.
///
/// `q_d(t) = c + [L/2 · sin ωt, W/2 · sin 2ωt, 0]` with `ω = 2π / period`.
/// At `t = 0` the vehicle is at the crossing point `c`, moving along +x and +y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure8 {
    pub length: f64,
    pub width: f64,
    pub period: f64,
    pub center: [f64; 3],
}

impl Default for Figure8 {
    fn default() -> Self {
        Self {
            length: 1.2,
            width: 1.0,
            period: 6.0,
            center: [0.0, 0.0, 1.0],
        }
    }
}

impl Figure8 {
    pub fn new(length: f64, width: f64, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Config(format!("figure-8 period must be positive, got {period}")));
        }
        Ok(Self {
            length,
            width,
            period,
            ..Default::default()
        })
    }

    pub fn eval(&self, t: f64) -> RefPoint {
        let w = 2.0 * PI / self.period;
        let (a, b) = (0.5 * self.length, 0.5 * self.width);
        let (s1, c1) = (w * t).sin_cos();
        let (s2, c2) = (2.0 * w * t).sin_cos();
        let [cx, cy, cz] = self.center;
        RefPoint {
            q: DVector::from_vec(vec![cx + a * s1, cy + b * s2, cz]),
            qd: DVector::from_vec(vec![a * w * c1, 2.0 * b * w * c2, 0.0]),
            qdd: DVector::from_vec(vec![-a * w * w * s1, -4.0 * b * w * w * s2, 0.0]),
        }
    }
}

/// Per-axis sum of sinusoids: `q_d,i(t) = c_i + Σ_k a_ik sin(ω_ik t + φ_ik)`.
///
/// Amplitudes on each axis sum to at most that axis' box half-width, so
/// `|q_d,i − c_i| ≤ box_i` holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSmooth {
    pub center: Vec<f64>,
    /// Per axis, list of `(amplitude, angular frequency, phase)`.
    pub components: Vec<Vec<(f64, f64, f64)>>,
    pub duration: f64,
}

impl RandomSmooth {
    /// Draw a trajectory with `n_components` sinusoids per axis, frequencies
    /// uniform in `[f_min, f_max]` Hz.
    pub fn generate(
        seed: u64,
        duration: f64,
        center: &[f64],
        half_box: &[f64],
        n_components: usize,
        (f_min, f_max): (f64, f64),
    ) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::Config(format!("duration must be positive, got {duration}")));
        }
        if center.len() != half_box.len() || n_components == 0 || !(f_max >= f_min && f_min > 0.0) {
            return Err(Error::Config("invalid random trajectory parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = half_box
            .iter()
            .map(|&bound| {
                let raw: Vec<f64> = (0..n_components).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter()
                    .map(|&r| {
                        let amp = bound * r / total;
                        let omega = 2.0 * PI * rng.random_range(f_min..=f_max);
                        let phase = rng.random_range(0.0..2.0 * PI);
                        (amp, omega, phase)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            center: center.to_vec(),
            components,
            duration,
        })
    }

    pub fn eval(&self, t: f64) -> RefPoint {
        let n = self.center.len();
        let mut q = DVector::from_column_slice(&self.center);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for (i, comps) in self.components.iter().enumerate() {
            for &(a, w, p) in comps {
                let (s, c) = (w * t + p).sin_cos();
                q[i] += a * s;
                qd[i] += a * w * c;
                qdd[i] -= a * w * w * s;
            }
        }
        RefPoint { q, qd, qdd }
    }
}

/// Reference trajectory selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Figure8(Figure8),
    RandomSmooth(RandomSmooth),
    /// Constant set-point.
    Hold { q: Vec<f64> },
}

impl Reference {
    pub fn eval(&self, t: f64) -> RefPoint {
        match self {
            Reference::Figure8(f) => f.eval(t),
            Reference::RandomSmooth(r) => r.eval(t),
            Reference::Hold { q } => {
                let n = q.len();
                RefPoint {
                    q: DVector::from_column_slice(q),
                    qd: DVector::zeros(n),
                    qdd: DVector::zeros(n),
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Reference::Figure8(_) => 3,
            Reference::RandomSmooth(r) => r.center.len(),
            Reference::Hold { q } => q.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure8_starts_at_center() {
        let f = Figure8::default();
        let p = f.eval(0.0);
        assert_eq!(p.q.as_slice(), &[0.0, 0.0, 1.0]);
        let w = 2.0 * PI / 6.0;
        assert!((p.qd[0] - 0.6 * w).abs() < 1e-15);
        assert!((p.qd[1] - w).abs() < 1e-15);
        assert_eq!(p.qdd.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn figure8_is_periodic_and_sized() {
        let f = Figure8::default();
        let mut xmax: f64 = 0.0;
        let mut ymax: f64 = 0.0;
        for k in 0..600 {
            let t = 0.01 * k as f64;
            let a = f.eval(t);
            let b = f.eval(t + f.period);
            assert!((&a.q - &b.q).amax() < 1e-12);
            xmax = xmax.max(a.q[0].abs());
            ymax = ymax.max(a.q[1].abs());
        }
        assert!((2.0 * xmax - 1.2).abs() < 1e-3);
        assert!((2.0 * ymax - 1.0).abs() < 1e-3);
    }

    #[test]
    fn figure8_derivatives_match_finite_differences() {
        let f = Figure8::default();
        let h = 1e-4;
        for k in 0..50 {
            let t = 0.13 * k as f64;
            let p = f.eval(t);
            let fd_v = (f.eval(t + h).q - f.eval(t - h).q) / (2.0 * h);
            let fd_a = (f.eval(t + h).qd - f.eval(t - h).qd) / (2.0 * h);
            assert!((fd_v - p.qd).amax() < 1e-6);
            assert!((fd_a - p.qdd).amax() < 1e-6);
        }
    }

    #[test]
    fn figure8_rejects_bad_period() {
        assert!(Figure8::new(1.2, 1.0, 0.0).is_err());
    }

    fn random() -> RandomSmooth {
        RandomSmooth::generate(42, 60.0, &[0.0, 0.0, 1.0], &[0.8, 0.8, 0.3], 3, (0.05, 0.3)).unwrap()
    }

    #[test]
    fn random_is_deterministic() {
        assert_eq!(random(), random());
        let other = RandomSmooth::generate(43, 60.0, &[0.0, 0.0, 1.0], &[0.8, 0.8, 0.3], 3, (0.05, 0.3)).unwrap();
        assert_ne!(random(), other);
    }

    #[test]
    fn random_respects_box() {
        let r = random();
        for k in 0..6000 {
            let p = r.eval(0.01 * k as f64);
            for (i, bound) in [0.8, 0.8, 0.3].iter().enumerate() {
                assert!((p.q[i] - r.center[i]).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn random_acceleration_matches_second_difference() {
        let r = random();
        let h = 1e-3;
        for k in 0..40 {
            let t = 1.37 * k as f64;
            let fd = (r.eval(t + h).q - 2.0 * r.eval(t).q + r.eval(t - h).q) / (h * h);
            assert!((fd - r.eval(t).qdd).amax() < 1e-5);
        }
    }
}
