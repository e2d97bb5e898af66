use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, Figure8, Plant};
use crate::error::{Error, Result};
use crate::nnet::Mlp;

/// Everything a disturbance field may depend on at one instant.
#[derive(Debug, Clone, Copy)]
pub struct DisturbanceContext<'a> {
    pub t: f64,
    pub q: &'a DVector<f64>,
    pub qd: &'a DVector<f64>,
    pub q_ref: &'a DVector<f64>,
    pub u_prev: &'a DVector<f64>,
}

/// A fan modelled as a gaussian jet along `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fan {
    pub position: [f64; 3],
    pub direction: [f64; 3],
    /// Standard deviation of the jet cross-section (m).
    pub width: f64,
    /// Axial e-folding distance (m).
    pub reach: f64,
    /// Phase of the blade-rate modulation (rad).
    pub phase: f64,
}

impl Fan {
    fn profile(&self, p: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let dir = Vector3::from(self.direction).normalize();
        let rel = p - Vector3::from(self.position);
        let axial = rel.dot(&dir);
        let radial2 = (rel - dir * axial).norm_squared();
        let along = if axial >= 0.0 {
            (-axial / self.reach).exp()
        } else {
            (-0.5 * (axial / 0.1).powi(2)).exp()
        };
        (dir, along * (-0.5 * radial2 / (self.width * self.width)).exp())
    }
}

/// Parameters of the two-fan wind model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialWindParams {
    pub fans: Vec<Fan>,
    /// Jet force at the fan core (N). Zero disables the field.
    pub gust_amplitude: f64,
    pub modulation_hz: f64,
    pub modulation_depth: f64,
    /// RMS of the band-limited gust noise, relative to the mean jet.
    pub noise_level: f64,
    pub noise_band_hz: (f64, f64),
    pub noise_components: usize,
    /// Norm bound applied to the disturbance (N).
    pub d_max: f64,
}

impl Default for SpatialWindParams {
    fn default() -> Self {
        Self {
            fans: vec![
                Fan {
                    position: [-2.0, -0.25, 1.0],
                    direction: [1.0, 0.0, 0.0],
                    width: 0.35,
                    reach: 3.0,
                    phase: 0.0,
                },
                Fan {
                    position: [0.3, 2.0, 1.0],
                    direction: [0.0, -1.0, 0.0],
                    width: 0.35,
                    reach: 3.0,
                    phase: 1.3,
                },
            ],
            gust_amplitude: 1.0,
            modulation_hz: 2.0,
            modulation_depth: 0.3,
            noise_level: 0.2,
            noise_band_hz: (0.3, 3.0),
            noise_components: 8,
            d_max: 4.0,
        }
    }
}

/// Sum-of-gaussian-jets wind field with sinusoidal blade-rate modulation and
/// seeded band-limited noise. Defined for three-dimensional plants only.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWind {
    pub params: SpatialWindParams,
    /// Per fan: `(amplitude, angular frequency, phase)` of each noise sinusoid.
    noise: Vec<Vec<(f64, f64, f64)>>,
}

impl SpatialWind {
    pub fn new(params: SpatialWindParams, seed: u64) -> Result<Self> {
        let (lo, hi) = params.noise_band_hz;
        if params.d_max <= 0.0 || params.fans.iter().any(|f| f.width <= 0.0 || f.reach <= 0.0) || lo <= 0.0 || hi < lo {
            return Err(Error::Config("invalid wind parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = params.noise_components.max(1);
        // Equal-amplitude sinusoids whose total RMS is `noise_level`.
        let amp = params.noise_level * (2.0 / k as f64).sqrt();
        let noise = params
            .fans
            .iter()
            .map(|_| {
                (0..k)
                    .map(|_| (amp, 2.0 * PI * rng.random_range(lo..=hi), rng.random_range(0.0..2.0 * PI)))
                    .collect()
            })
            .collect();
        Ok(Self { params, noise })
    }

    fn modulation(&self, fan: usize, t: f64) -> f64 {
        let p = &self.params;
        let blade = p.modulation_depth * (2.0 * PI * p.modulation_hz * t + p.fans[fan].phase).sin();
        let gust: f64 = self.noise[fan].iter().map(|&(a, w, ph)| a * (w * t + ph).sin()).sum();
        (1.0 + blade + gust).max(0.0)
    }

    /// Wind force without the norm bound, per unit gust amplitude.
    fn unit_force(&self, q: &DVector<f64>, t: f64) -> Vector3<f64> {
        let p = Vector3::new(q[0], q[1], q[2]);
        let mut f = Vector3::zeros();
        for (i, fan) in self.params.fans.iter().enumerate() {
            let (dir, shape) = fan.profile(&p);
            f += dir * (shape * self.modulation(i, t));
        }
        f
    }

    pub fn force(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        let f = self.unit_force(q, t) * self.params.gust_amplitude;
        let norm = f.norm();
        let f = if norm > self.params.d_max { f * (self.params.d_max / norm) } else { f };
        DVector::from_column_slice(f.as_slice())
    }

    /// Mean of `‖d‖ / mass` along the figure-8 for the current gust amplitude,
    /// by midpoint quadrature over `periods` laps.
    pub fn mean_intensity(&self, reference: &Figure8, mass: f64, periods: usize) -> f64 {
        let n = 400 * periods.max(1);
        let horizon = reference.period * periods.max(1) as f64;
        let h = horizon / n as f64;
        let total: f64 = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                self.force(&reference.eval(t).q, t).norm()
            })
            .sum();
        total / n as f64 / mass
    }

    /// Scale the gust amplitude so that [`SpatialWind::mean_intensity`] equals
    /// `target` (m/s²). Returns the new amplitude.
    pub fn calibrate(&mut self, reference: &Figure8, mass: f64, target: f64) -> Result<f64> {
        let saved = self.params.d_max;
        self.params.d_max = f64::INFINITY;
        self.params.gust_amplitude = 1.0;
        let unit = self.mean_intensity(reference, mass, 10);
        self.params.d_max = saved;
        if !(unit > 0.0) {
            return Err(Error::Config("wind field does not reach the reference path".into()));
        }
        self.params.gust_amplitude = target / unit;
        Ok(self.params.gust_amplitude)
    }
}

/// Disturbance produced by a frozen network whose parameters drift smoothly
/// between a few condition vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherField {
    pub net: Mlp,
    pub features: FeatureMap,
    /// Teacher parameter vectors; one vector gives a fixed condition.
    pub conditions: Vec<DVector<f64>>,
    /// Time to blend from one condition to the next (s).
    pub switch_period: f64,
    pub d_max: f64,
}

impl TeacherField {
    pub fn fixed(net: Mlp, features: FeatureMap, d_max: f64) -> Self {
        let theta = net.flatten().into_inner();
        Self {
            net,
            features,
            conditions: vec![theta],
            switch_period: 1.0,
            d_max,
        }
    }

    /// `θ*(t)`: cubic smoothstep blend between consecutive conditions, cycling.
    pub fn theta_star(&self, t: f64) -> DVector<f64> {
        let n = self.conditions.len();
        if n == 1 {
            return self.conditions[0].clone();
        }
        let phase = (t.max(0.0) / self.switch_period).max(0.0);
        let k = phase.floor() as usize;
        let tau = phase - phase.floor();
        let w = tau * tau * (3.0 - 2.0 * tau);
        let a = &self.conditions[k % n];
        let b = &self.conditions[(k + 1) % n];
        a * (1.0 - w) + b * w
    }

    pub fn eval(&self, plant: &dyn Plant, ctx: &DisturbanceContext) -> Result<DVector<f64>> {
        let x = self.features.eval(plant, ctx.q, ctx.qd, ctx.q_ref, ctx.u_prev);
        let out = if self.conditions.len() == 1 {
            self.net.forward(&x)?
        } else {
            self.net.with_params(&self.theta_star(ctx.t))?.forward(&x)?
        };
        let norm = out.norm();
        Ok(if norm > self.d_max { out * (self.d_max / norm) } else { out })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceField {
    Zero,
    Constant(DVector<f64>),
    /// `amplitude · sin(2π f t + phase)`.
    Sinusoid {
        amplitude: DVector<f64>,
        freq_hz: f64,
        phase: f64,
    },
    SpatialWind(SpatialWind),
    Teacher(TeacherField),
}

impl DisturbanceField {
    pub fn sample(&self, plant: &dyn Plant, ctx: &DisturbanceContext) -> Result<DVector<f64>> {
        match self {
            DisturbanceField::Zero => Ok(DVector::zeros(ctx.q.len())),
            DisturbanceField::Constant(d) => Ok(d.clone()),
            DisturbanceField::Sinusoid { amplitude, freq_hz, phase } => {
                Ok(amplitude * (2.0 * PI * freq_hz * ctx.t + phase).sin())
            }
            DisturbanceField::SpatialWind(w) => {
                if ctx.q.len() != 3 {
                    return Err(Error::Config("spatial wind requires a three-dimensional plant".into()));
                }
                Ok(w.force(ctx.q, ctx.t))
            }
            DisturbanceField::Teacher(teacher) => teacher.eval(plant, ctx),
        }
    }

    /// Parameters of the disturbance-generating network, when there is one.
    pub fn theta_star(&self, t: f64) -> Option<DVector<f64>> {
        match self {
            DisturbanceField::Teacher(teacher) => Some(teacher.theta_star(t)),
            _ => None,
        }
    }

    pub fn teacher(&self) -> Option<&TeacherField> {
        match self {
            DisturbanceField::Teacher(teacher) => Some(teacher),
            _ => None,
        }
    }

    /// Norm bound on the samples, if the field declares one.
    pub fn d_max(&self) -> Option<f64> {
        match self {
            DisturbanceField::Zero => Some(0.0),
            DisturbanceField::Constant(d) => Some(d.norm()),
            DisturbanceField::Sinusoid { amplitude, .. } => Some(amplitude.norm()),
            DisturbanceField::SpatialWind(w) => Some(w.params.d_max),
            DisturbanceField::Teacher(teacher) => Some(teacher.d_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::QuadrotorPointMass;
    use nalgebra::dvector;

    fn ctx<'a>(q: &'a DVector<f64>, zero: &'a DVector<f64>, t: f64) -> DisturbanceContext<'a> {
        DisturbanceContext {
            t,
            q,
            qd: zero,
            q_ref: zero,
            u_prev: zero,
        }
    }

    #[test]
    fn zero_gust_gives_zero_wind() {
        let params = SpatialWindParams {
            gust_amplitude: 0.0,
            ..Default::default()
        };
        let wind = DisturbanceField::SpatialWind(SpatialWind::new(params, 1).unwrap());
        let quad = QuadrotorPointMass::default();
        let zero = DVector::zeros(3);
        for k in 0..50 {
            let q = dvector![0.1 * k as f64 - 2.0, 0.3, 1.0];
            assert_eq!(wind.sample(&quad, &ctx(&q, &zero, 0.1 * k as f64)).unwrap(), zero);
        }
    }

    #[test]
    fn zero_teacher_gives_zero() {
        let net = Mlp::zeros(&[6, 8, 3]).unwrap();
        let field = DisturbanceField::Teacher(TeacherField::fixed(net, FeatureMap::manipulator_default(), 5.0));
        let quad = QuadrotorPointMass::default();
        let q = dvector![0.3, 0.1, 1.0];
        let zero = DVector::zeros(3);
        assert_eq!(field.sample(&quad, &ctx(&q, &zero, 1.0)).unwrap(), zero);
    }

    #[test]
    fn calibration_hits_target_intensity() {
        let mut wind = SpatialWind::new(SpatialWindParams::default(), 3).unwrap();
        let fig = Figure8::default();
        wind.calibrate(&fig, 1.0, 1.0).unwrap();
        let mean = wind.mean_intensity(&fig, 1.0, 10);
        assert!((mean - 1.0).abs() < 0.01, "mean intensity {mean}");
    }

    #[test]
    fn wind_respects_bound_and_is_continuous() {
        let params = SpatialWindParams {
            gust_amplitude: 50.0,
            d_max: 3.0,
            ..Default::default()
        };
        let wind = SpatialWind::new(params, 9).unwrap();
        let q = dvector![-0.5, -0.25, 1.0];
        let mut prev = wind.force(&q, 0.0);
        for k in 1..2000 {
            let t = 1e-3 * k as f64;
            let d = wind.force(&q, t);
            assert!(d.norm() <= 3.0 + 1e-12);
            assert!((&d - &prev).norm() < 0.1);
            prev = d;
        }
    }

    #[test]
    fn theta_star_blends_smoothly() {
        let net = Mlp::zeros(&[1, 1]).unwrap();
        let teacher = TeacherField {
            net,
            features: FeatureMap(vec![]),
            conditions: vec![dvector![0.0, 0.0], dvector![1.0, 2.0]],
            switch_period: 2.0,
            d_max: 1.0,
        };
        assert_eq!(teacher.theta_star(0.0), dvector![0.0, 0.0]);
        assert!((teacher.theta_star(1.0) - dvector![0.5, 1.0]).amax() < 1e-15);
        assert!((teacher.theta_star(2.0 - 1e-9) - dvector![1.0, 2.0]).amax() < 1e-6);
        assert_eq!(teacher.theta_star(2.0), dvector![1.0, 2.0]);
    }
}
