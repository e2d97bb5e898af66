//! Fixed-step closed-loop simulation.
//!
//! The controller runs once per control period `dt` and its output is held
//! constant over the period (zero-order hold). The plant state is advanced
//! with classical RK4, optionally split into `substeps` per period, while the
//! disturbance field is evaluated continuously at every RK4 stage.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DisturbanceContext, DisturbanceField, Plant, Reference};
use crate::control::{ControlOutput, Controller, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control period (s).
    pub dt: f64,
    pub duration: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    /// Standard deviation of the disturbance measurement noise ε.
    pub noise_sigma: f64,
    /// Standard deviation of the accelerometer noise seen by INDI.
    pub accel_noise_sigma: f64,
    /// Symmetric box clamp on each control component.
    pub u_limit: Option<f64>,
    /// Keep a copy of the network parameters in every log row.
    pub record_params: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            duration: 20.0,
            substeps: 1,
            noise_sigma: 0.0,
            accel_noise_sigma: 0.0,
            u_limit: None,
            record_params: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Number of control ticks, including the one at `t = 0` and the one at `t = duration`.
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub u_prev: DVector<f64>,
}

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub q_ref: DVector<f64>,
    pub qd_ref: DVector<f64>,
    pub u: DVector<f64>,
    pub d_true: DVector<f64>,
    /// Measured disturbance `d + ε`.
    pub y: DVector<f64>,
    pub f_pred: Option<DVector<f64>>,
    pub s: DVector<f64>,
    pub theta_dev_anchor: Option<f64>,
    pub theta_dev_star: Option<f64>,
    pub v: Option<f64>,
    pub jac_norm: Option<f64>,
    /// Largest layer spectral norm right after this tick's adaptation.
    pub max_layer_norm: Option<f64>,
    pub features: Option<DVector<f64>>,
    pub params: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub controller: String,
    pub dt: f64,
    pub rows: Vec<LogRow>,
}

/// Classical fourth-order Runge-Kutta step for `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64, n: usize) -> DVector<f64> {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        DVector::from_fn(n, |_, _| normal.sample(rng))
    } else {
        DVector::zeros(n)
    }
}

/// Advance the closed loop by one control period.
#[allow(clippy::too_many_arguments)]
pub fn step(
    plant: &dyn Plant,
    field: &DisturbanceField,
    reference: &Reference,
    controller: &mut dyn Controller,
    state: &SimState,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SimState, LogRow)> {
    let n = plant.dim();
    let dt = cfg.dt;
    let t = state.t;
    let r = reference.eval(t);
    let d_true = field.sample(
        plant,
        &DisturbanceContext {
            t,
            q: &state.q,
            qd: &state.qd,
            q_ref: &r.q,
            u_prev: &state.u_prev,
        },
    )?;
    let y = &d_true + noise(rng, cfg.noise_sigma, n);
    let accel_meas =
        plant.dynamics_accel(&state.q, &state.qd, &state.u_prev, &d_true)? + noise(rng, cfg.accel_noise_sigma, n);

    let obs = Observation {
        t,
        dt,
        plant,
        q: &state.q,
        qd: &state.qd,
        reference: &r,
        u_prev: &state.u_prev,
        y: &y,
        d_true: &d_true,
        accel_meas: &accel_meas,
    };
    let out: ControlOutput = controller.control(&obs)?;
    if !out.u.iter().all(|v| v.is_finite()) {
        return Err(Error::ControllerFault(format!("non-finite control at t = {t:.3}")));
    }
    let u = match cfg.u_limit {
        Some(lim) => out.u.map(|v| v.clamp(-lim, lim)),
        None => out.u.clone(),
    };

    let diag = controller.adaptive();
    let theta_star = field.theta_star(t);
    let (theta_dev_anchor, theta_dev_star, v, jac_norm, params) = match &diag {
        Some(a) => {
            let dev_star = theta_star.as_ref().map(|ts| (&a.theta - ts).norm());
            let v = theta_star.as_ref().map(|ts| {
                let m = plant.mass_matrix(&state.q);
                out.s.dot(&(m * &out.s)) + (&a.theta - ts).norm_squared() / a.gamma
            });
            (
                Some((&a.theta - a.theta0).norm()),
                dev_star,
                v,
                Some(a.jac_norm),
                cfg.record_params.then(|| a.theta.clone()),
            )
        }
        None => (None, None, None, None, None),
    };

    controller.update(&obs, &out)?;
    let max_layer_norm = controller.adaptive().and_then(|a| a.max_layer_norm);

    let row = LogRow {
        t,
        q: state.q.clone(),
        qd: state.qd.clone(),
        q_ref: r.q.clone(),
        qd_ref: r.qd.clone(),
        u: u.clone(),
        d_true,
        y,
        f_pred: out.f_pred.clone(),
        s: out.s.clone(),
        theta_dev_anchor,
        theta_dev_star,
        v,
        jac_norm,
        max_layer_norm,
        features: out.features.clone(),
        params,
    };

    let substeps = cfg.substeps.max(1);
    let h = dt / substeps as f64;
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(&state.q);
    x.rows_mut(n, n).copy_from(&state.qd);
    let rhs = |tau: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let q = x.rows(0, n).into_owned();
        let qd = x.rows(n, n).into_owned();
        let q_ref = reference.eval(tau).q;
        let d = field.sample(
            plant,
            &DisturbanceContext {
                t: tau,
                q: &q,
                qd: &qd,
                q_ref: &q_ref,
                u_prev: &u,
            },
        )?;
        let qdd = plant.dynamics_accel(&q, &qd, &u, &d)?;
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&qd);
        dx.rows_mut(n, n).copy_from(&qdd);
        Ok(dx)
    };
    for k in 0..substeps {
        x = rk4_step(rhs, t + k as f64 * h, &x, h)?;
    }
    let next_step = state.step + 1;
    if !x.iter().all(|v| v.is_finite()) || x.amax() > 1e6 {
        return Err(Error::Divergence {
            step: next_step,
            time: next_step as f64 * dt,
        });
    }
    let next = SimState {
        step: next_step,
        t: next_step as f64 * dt,
        q: x.rows(0, n).into_owned(),
        qd: x.rows(n, n).into_owned(),
        u_prev: u,
    };
    Ok((next, row))
}

pub struct Simulation<'a> {
    pub plant: &'a dyn Plant,
    pub field: &'a DisturbanceField,
    pub reference: &'a Reference,
    pub config: SimConfig,
}

impl<'a> Simulation<'a> {
    pub fn new(plant: &'a dyn Plant, field: &'a DisturbanceField, reference: &'a Reference, config: SimConfig) -> Self {
        Self {
            plant,
            field,
            reference,
            config,
        }
    }

    /// Start on the reference with gravity-compensating previous input.
    pub fn initial_state(&self) -> SimState {
        let r = self.reference.eval(0.0);
        let u_prev = self.plant.gravity(&r.q);
        SimState {
            step: 0,
            t: 0.0,
            q: r.q,
            qd: r.qd,
            u_prev,
        }
    }

    pub fn run(&self, controller: &mut dyn Controller) -> Result<TrajectoryLog> {
        self.run_from(controller, self.initial_state())
    }

    pub fn run_from(&self, controller: &mut dyn Controller, init: SimState) -> Result<TrajectoryLog> {
        if !(self.config.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.config.dt)));
        }
        if self.reference.dim() != self.plant.dim() {
            return Err(Error::Config("reference and plant dimensions differ".into()));
        }
        for sigma in [self.config.noise_sigma, self.config.accel_noise_sigma] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!("noise sigma must be finite and non-negative, got {sigma}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let ticks = self.config.ticks();
        let mut rows = Vec::with_capacity(ticks);
        let mut state = init;
        for k in 0..ticks {
            let (next, row) = step(
                self.plant,
                self.field,
                self.reference,
                controller,
                &state,
                &self.config,
                &mut rng,
            )?;
            rows.push(row);
            if k + 1 < ticks {
                state = next;
            }
        }
        Ok(TrajectoryLog {
            controller: controller.name().to_string(),
            dt: self.config.dt,
            rows,
        })
    }
}

const VECTOR_GROUPS: [&str; 9] = ["q", "dq", "qref", "dqref", "u", "d", "y", "f", "s"];
const SCALAR_COLUMNS: [&str; 5] = ["theta_dev_anchor", "theta_dev_star", "v", "jac_norm", "max_layer_norm"];

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.q.len())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// CSV header: `t`, then `q0..`, `dq0..`, `qref0..`, `dqref0..`, `u0..`,
    /// `d0..`, `y0..`, `f0..`, `s0..` (n columns each), then the scalar
    /// diagnostics. Absent values are written as empty fields.
    pub fn header(n: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for g in VECTOR_GROUPS {
            h.extend((0..n).map(|i| format!("{g}{i}")));
        }
        h.extend(SCALAR_COLUMNS.iter().map(|s| s.to_string()));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.dim();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(n))?;
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            for v in [&r.q, &r.qd, &r.q_ref, &r.qd_ref, &r.u, &r.d_true, &r.y] {
                rec.extend(v.iter().map(|x| x.to_string()));
            }
            match &r.f_pred {
                Some(f) => rec.extend(f.iter().map(|x| x.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), n)),
            }
            rec.extend(r.s.iter().map(|x| x.to_string()));
            for v in [r.theta_dev_anchor, r.theta_dev_star, r.v, r.jac_norm, r.max_layer_norm] {
                rec.push(fmt_opt(v));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a log written by [`TrajectoryLog::write_csv`]. Only `t`, `q`,
    /// `dq`, `qref` and `u` are required; other columns are optional.
    pub fn read_csv<R: Read>(reader: R, controller: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let index = |name: &str| headers.iter().position(|h| h == name);
        let n = (0..).take_while(|i| index(&format!("q{i}")).is_some()).count();
        if n == 0 || index("t").is_none() {
            return Err(Error::Data("log is missing t/q columns".into()));
        }
        let group = |g: &str| -> Option<Vec<usize>> { (0..n).map(|i| index(&format!("{g}{i}"))).collect() };
        let required = |g: &str| group(g).ok_or_else(|| Error::Data(format!("log is missing {g} columns")));
        let (tq, iq, idq, iref, iu) = (index("t").unwrap(), required("q")?, required("dq")?, required("qref")?, required("u")?);
        let (idqref, id, iy, iff, is) = (group("dqref"), group("d"), group("y"), group("f"), group("s"));
        let scalar_idx: Vec<Option<usize>> = SCALAR_COLUMNS.iter().map(|c| index(c)).collect();

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Data("short record".into()))?
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("bad number: {e}")))
            };
            let vec_of = |idx: &[usize]| -> Result<DVector<f64>> {
                Ok(DVector::from_vec(idx.iter().map(|&i| num(i)).collect::<Result<Vec<_>>>()?))
            };
            let opt_vec = |idx: &Option<Vec<usize>>| -> Result<Option<DVector<f64>>> {
                match idx {
                    Some(ix) if ix.iter().all(|&i| rec.get(i).is_some_and(|s| !s.is_empty())) => Ok(Some(vec_of(ix)?)),
                    _ => Ok(None),
                }
            };
            let opt_scalar = |i: Option<usize>| -> Result<Option<f64>> {
                match i.and_then(|i| rec.get(i)) {
                    Some(s) if !s.is_empty() => Ok(Some(s.parse().map_err(|e| Error::Data(format!("bad number: {e}")))?)),
                    _ => Ok(None),
                }
            };
            let zeros = DVector::zeros(n);
            rows.push(LogRow {
                t: num(tq)?,
                q: vec_of(&iq)?,
                qd: vec_of(&idq)?,
                q_ref: vec_of(&iref)?,
                qd_ref: opt_vec(&idqref)?.unwrap_or_else(|| zeros.clone()),
                u: vec_of(&iu)?,
                d_true: opt_vec(&id)?.unwrap_or_else(|| zeros.clone()),
                y: opt_vec(&iy)?.unwrap_or_else(|| zeros.clone()),
                f_pred: opt_vec(&iff)?,
                s: opt_vec(&is)?.unwrap_or_else(|| zeros.clone()),
                theta_dev_anchor: opt_scalar(scalar_idx[0])?,
                theta_dev_star: opt_scalar(scalar_idx[1])?,
                v: opt_scalar(scalar_idx[2])?,
                jac_norm: opt_scalar(scalar_idx[3])?,
                max_layer_norm: opt_scalar(scalar_idx[4])?,
                features: None,
                params: None,
            });
        }
        let dt = if rows.len() > 1 { rows[1].t - rows[0].t } else { 0.0 };
        Ok(Self {
            controller: controller.to_string(),
            dt,
            rows,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
        Self::read_csv(std::fs::File::open(path)?, name)
    }
}
