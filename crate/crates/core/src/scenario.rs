//! Scenario files: one TOML document with every setting the pipeline needs.
//! Missing keys take the defaults below.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{Gains, IndiConfig, PidGains};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::nnet::Mlp;
use crate::plant::{
    DisturbanceField, FeatureMap, Figure8, Plant, PlantModel, Reference, SimConfig, SpatialWind, SpatialWindParams,
    TeacherField,
};

/// Every run-level random stream is drawn from the root seed through this
/// mix, so streams for different purposes never share state.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindKind {
    Zero,
    Constant,
    Sinusoid,
    SpatialWind,
    /// Perturbed copies of the evaluated network generate the disturbance.
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Number of parameter vectors the teacher drifts between.
    pub conditions: usize,
    /// Size of each condition's offset from the network, relative to `‖θ0‖`.
    pub spread: f64,
    pub switch_period: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            conditions: 1,
            spread: 0.02,
            switch_period: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindConfig {
    pub kind: WindKind,
    /// Target mean `‖d‖/m` along the evaluation figure-8 (m/s²); spatial wind only.
    pub intensity: Option<f64>,
    pub constant: Vec<f64>,
    pub sinusoid_amplitude: Vec<f64>,
    pub sinusoid_hz: f64,
    pub spatial: SpatialWindParams,
    pub teacher: TeacherConfig,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            kind: WindKind::SpatialWind,
            intensity: Some(1.0),
            constant: vec![],
            sinusoid_amplitude: vec![],
            sinusoid_hz: 1.0,
            spatial: SpatialWindParams::default(),
            teacher: TeacherConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    /// Box bound on the network output used for compensation.
    pub output_bound: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50, 50],
            output_bound: 10.0,
        }
    }
}

/// Scalar gains; `Λ`, `K` and `Γ` are these multiples of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    pub lambda: f64,
    /// Feedback gain per unit of `λ_max(M)` at the start of the reference.
    pub k: f64,
    pub gamma_mat: f64,
    pub gamma: f64,
    /// Pull of θ towards θ0.
    pub anchor: f64,
    pub nu: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            lambda: 4.0,
            k: 8.0,
            gamma_mat: 0.5,
            gamma: 0.1,
            anchor: 0.01,
            nu: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub dt: f64,
    pub substeps: usize,
    /// Disturbance measurement noise; `None` means 5% of the field's bound.
    pub noise_sigma: Option<f64>,
    pub accel_noise_sigma: f64,
    pub u_limit: Option<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 0.02,
            substeps: 1,
            noise_sigma: None,
            accel_noise_sigma: 0.0,
            u_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub trajectories: usize,
    pub duration: f64,
    /// Centre of the random references; the evaluation reference start by default.
    pub center: Option<Vec<f64>>,
    pub half_box: Vec<f64>,
    pub components: usize,
    pub band_hz: (f64, f64),
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            trajectories: 3,
            duration: 60.0,
            center: None,
            half_box: vec![0.8, 0.8, 0.3],
            components: 3,
            band_hz: (0.05, 0.4),
        }
    }
}

pub const ALL_CONTROLLERS: [&str; 6] = ["ssml-ac", "ssml-ac-ll", "vanilla-nn", "indi", "pid", "oracle-feedforward"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub duration: f64,
    pub repeats: usize,
    pub skip_transient: f64,
    pub controllers: Vec<String>,
    /// Let the vanilla network adapt online like `ssml-ac` instead of staying frozen.
    pub vanilla_adapts: bool,
    /// Recompute every layer's spectral norm after each adaptation step.
    pub monitor_projection: bool,
    pub reference: Reference,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            repeats: 3,
            skip_transient: 2.0,
            controllers: ALL_CONTROLLERS.iter().map(|s| s.to_string()).collect(),
            vanilla_adapts: false,
            monitor_projection: true,
            reference: Reference::Figure8(Figure8::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub cutoff_hz: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { cutoff_hz: 20.0 }
    }
}

/// File locations relative to the output root unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub vanilla_checkpoint: PathBuf,
    pub eval: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoint: "model/ssml.json".into(),
            vanilla_checkpoint: "model/vanilla.json".into(),
            eval: "eval".into(),
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, root: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }
}

fn default_pid() -> PidGains {
    PidGains {
        ki: 16.0,
        ..PidGains::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub plant: PlantModel,
    pub wind: WindConfig,
    /// Network input blocks; the plant's default when absent.
    pub features: Option<FeatureMap>,
    pub network: NetworkConfig,
    pub gains: GainsConfig,
    pub sim: SimSettings,
    pub collect: CollectConfig,
    pub evaluate: EvaluateConfig,
    pub pid: PidGains,
    pub indi: IndiConfig,
    pub meta: MetaConfig,
    pub signal: SignalConfig,
    pub paths: PathsConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            plant: PlantModel::default(),
            wind: WindConfig::default(),
            features: None,
            network: NetworkConfig::default(),
            gains: GainsConfig::default(),
            sim: SimSettings::default(),
            collect: CollectConfig::default(),
            evaluate: EvaluateConfig::default(),
            pid: default_pid(),
            indi: IndiConfig::default(),
            meta: MetaConfig::default(),
            signal: SignalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.dim();
        if !(self.sim.dt > 0.0) || self.sim.substeps == 0 {
            return Err(Error::Config("sim.dt and sim.substeps must be positive".into()));
        }
        if self.evaluate.reference.dim() != n {
            return Err(Error::Config("evaluation reference does not match the plant dimension".into()));
        }
        if self.collect.half_box.len() != n {
            return Err(Error::Config("collect.half_box must have one entry per plant axis".into()));
        }
        if self.wind.kind == WindKind::SpatialWind && n != 3 {
            return Err(Error::Config("spatial wind needs the quadrotor plant".into()));
        }
        for c in &self.evaluate.controllers {
            if !ALL_CONTROLLERS.contains(&c.as_str()) {
                return Err(Error::Config(format!("unknown controller `{c}`")));
            }
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.meta.validate()?;
        self.gains(&self.plant.gravity(&DVector::zeros(n)))?;
        Ok(())
    }

    pub fn features(&self) -> FeatureMap {
        self.features.clone().unwrap_or_else(|| match self.plant {
            PlantModel::Quadrotor(_) => FeatureMap::quadrotor_default(),
            PlantModel::TwoLink(_) => FeatureMap::manipulator_default(),
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let n = self.plant.dim();
        let mut sizes = vec![self.features().input_dim(n)];
        sizes.extend(&self.network.hidden);
        sizes.push(n);
        sizes
    }

    fn start_configuration(&self) -> DVector<f64> {
        self.evaluate.reference.eval(0.0).q
    }

    /// Controller gains; `K` is scaled by the largest mass-matrix eigenvalue
    /// at the start of the evaluation reference.
    pub fn gains(&self, _hint: &DVector<f64>) -> Result<Gains> {
        let g = &self.gains;
        let n = self.plant.dim();
        let q0 = self.start_configuration();
        let m_max = self.plant.mass_matrix(&q0).symmetric_eigen().eigenvalues.max();
        let eye = DMatrix::<f64>::identity(n, n);
        Gains::new(&eye * g.lambda, &eye * (g.k * m_max), &eye * g.gamma_mat, g.gamma, g.anchor, g.nu)
    }

    pub fn indi_config(&self) -> IndiConfig {
        IndiConfig {
            lambda_gain: self.gains.lambda,
            k_gain: self.gains.k,
            ..self.indi.clone()
        }
    }

    fn calibration_path(&self) -> Option<Figure8> {
        match &self.evaluate.reference {
            Reference::Figure8(f) => Some(f.clone()),
            _ => None,
        }
    }

    fn plant_mass(&self) -> f64 {
        match &self.plant {
            PlantModel::Quadrotor(q) => q.mass,
            PlantModel::TwoLink(_) => 1.0,
        }
    }

    /// Build the disturbance field for one run. The teacher kind's conditions
    /// are perturbed copies of `network`; without one, a freshly initialised
    /// network projected onto the spectral ball stands in.
    pub fn build_field(&self, seed: u64, network: Option<&Mlp>) -> Result<DisturbanceField> {
        let n = self.plant.dim();
        let w = &self.wind;
        let vec_of = |v: &[f64], what: &str| -> Result<DVector<f64>> {
            if v.len() != n {
                return Err(Error::Config(format!("wind.{what} must have {n} entries")));
            }
            Ok(DVector::from_column_slice(v))
        };
        match w.kind {
            WindKind::Zero => Ok(DisturbanceField::Zero),
            WindKind::Constant => Ok(DisturbanceField::Constant(vec_of(&w.constant, "constant")?)),
            WindKind::Sinusoid => Ok(DisturbanceField::Sinusoid {
                amplitude: vec_of(&w.sinusoid_amplitude, "sinusoid_amplitude")?,
                freq_hz: w.sinusoid_hz,
                phase: 0.0,
            }),
            WindKind::SpatialWind => {
                let mut wind = SpatialWind::new(w.spatial.clone(), seed)?;
                if let Some(target) = w.intensity {
                    let path = self
                        .calibration_path()
                        .ok_or_else(|| Error::Config("wind calibration needs a figure-8 reference".into()))?;
                    wind.calibrate(&path, self.plant_mass(), target)?;
                }
                Ok(DisturbanceField::SpatialWind(wind))
            }
            WindKind::Teacher => {
                let fresh;
                let net = match network {
                    Some(net) => net,
                    None => {
                        let mut init = Mlp::he_uniform(&self.layer_sizes(), derive_seed(self.seed, "teacher-init", 0))?;
                        init.project_spectral(self.gains.nu)?;
                        fresh = init;
                        &fresh
                    }
                };
                let t = &w.teacher;
                if t.conditions == 0 || !(t.switch_period > 0.0) {
                    return Err(Error::Config("teacher needs at least one condition and a positive period".into()));
                }
                let theta = net.flatten().into_inner();
                let scale = t.spread * theta.norm() / (theta.len() as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let conditions = (0..t.conditions)
                    .map(|_| &theta + DVector::from_fn(theta.len(), |_, _| scale * rng.random_range(-1.0..1.0)))
                    .collect();
                Ok(DisturbanceField::Teacher(TeacherField {
                    net: net.clone(),
                    features: self.features(),
                    conditions,
                    switch_period: t.switch_period,
                    d_max: w.spatial.d_max,
                }))
            }
        }
    }

    pub fn sim_config(&self, duration: f64, seed: u64, field: &DisturbanceField) -> SimConfig {
        let d_max = field.d_max().unwrap_or(0.0);
        SimConfig {
            dt: self.sim.dt,
            duration,
            substeps: self.sim.substeps,
            noise_sigma: self.sim.noise_sigma.unwrap_or(0.05 * d_max),
            accel_noise_sigma: self.sim.accel_noise_sigma,
            u_limit: self.sim.u_limit,
            record_params: false,
            seed,
        }
    }

    pub fn collect_center(&self) -> Vec<f64> {
        self.collect
            .center
            .clone()
            .unwrap_or_else(|| self.start_configuration().iter().copied().collect())
    }
}
