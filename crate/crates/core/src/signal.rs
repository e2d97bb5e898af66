//! Offline measurement pipeline: zero-phase Butterworth smoothing, five-point
//! differentiation and recovery of disturbance labels `y` from logged
//! trajectories.

use nalgebra::{Complex, DVector};

use crate::error::{Error, Result};
use crate::plant::{FeatureMap, Plant, TrajectoryLog};

/// One second-order section, `a0 = 1`, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// State that makes a constant input `x` pass through unchanged.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let z2 = (self.b[2] - self.a[1]) * x;
        [(self.b[1] - self.a[0]) * x + z2, z2]
    }

    fn run(&self, series: &mut [f64]) {
        let Some(&first) = series.first() else { return };
        let [mut z1, mut z2] = self.steady_state(first);
        for v in series.iter_mut() {
            let x = *v;
            let y = self.b[0] * x + z1;
            z1 = self.b[1] * x - self.a[0] * y + z2;
            z2 = self.b[2] * x - self.a[1] * y;
            *v = y;
        }
    }

    fn response(&self, z: Complex<f64>) -> Complex<f64> {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }
}

/// Fourth-order Butterworth low-pass as two cascaded biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth4 {
    pub sections: [Biquad; 2],
    pub sample_hz: f64,
}

const ORDER: usize = 4;

impl Butterworth4 {
    /// Bilinear-transform design with the cutoff pre-warped so the digital
    /// response is exactly −3 dB at `cutoff_hz`.
    pub fn design(cutoff_hz: f64, sample_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && sample_hz > 0.0 && cutoff_hz < 0.5 * sample_hz) {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
                0.5 * sample_hz
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let section = |m: usize| {
            // Analog pole pair at angle (2m + 1)π/8 from the imaginary axis.
            let q = 1.0 / (2.0 * ((2 * m + 1) as f64 * std::f64::consts::PI / (2 * ORDER) as f64).cos());
            let norm = 1.0 / (1.0 + k / q + k * k);
            let b0 = k * k * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        };
        Ok(Self {
            sections: [section(0), section(1)],
            sample_hz,
        })
    }

    /// Complex single-pass frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex<f64> {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.sample_hz;
        let z = Complex::new(w.cos(), w.sin());
        self.sections.iter().map(|s| s.response(z)).product()
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    /// Causal single pass with steady-state initial conditions.
    pub fn filter(&self, series: &[f64]) -> Vec<f64> {
        let mut out = series.to_vec();
        for s in &self.sections {
            s.run(&mut out);
        }
        out
    }

    /// Zero-phase forward-backward filtering with odd reflection padding of
    /// three filter orders at each end.
    ///
    /// The line through the end samples is removed first and added back
    /// afterwards. A zero-phase filter with unit DC gain passes a line
    /// unchanged, and without it a ramp (such as an integrated input) leaves
    /// a start-up transient at both ends.
    pub fn filtfilt(&self, series: &[f64]) -> Vec<f64> {
        let n = series.len();
        if n < 2 {
            return series.to_vec();
        }
        let (first, last) = (series[0], series[n - 1]);
        let slope = (last - first) / (n - 1) as f64;
        let line = |i: usize| first + slope * i as f64;
        let resid: Vec<f64> = series.iter().enumerate().map(|(i, v)| v - line(i)).collect();
        let pad = (3 * ORDER).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| -resid[i]));
        ext.extend_from_slice(&resid);
        ext.extend((1..=pad).map(|i| -resid[n - 1 - i]));
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].iter().enumerate().map(|(i, v)| v + line(i)).collect()
    }
}

/// Convenience wrapper: design and apply a zero-phase 4th-order low-pass.
pub fn butterworth4_lowpass(series: &[f64], cutoff_hz: f64, sample_hz: f64) -> Result<Vec<f64>> {
    Ok(Butterworth4::design(cutoff_hz, sample_hz)?.filtfilt(series))
}

/// Fourth-order accurate derivative: the central five-point stencil inside,
/// one-sided five-point stencils on the two samples at each end.
pub fn five_point_derivative(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 5 {
        return Err(Error::Usage(format!("five-point derivative needs at least 5 samples, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Usage("dt must be positive".into()));
    }
    let f = series;
    let h12 = 12.0 * dt;
    let mut d = vec![0.0; n];
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / h12;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / h12;
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / h12;
    }
    let e = n - 1;
    d[e - 1] = (3.0 * f[e] + 10.0 * f[e - 1] - 18.0 * f[e - 2] + 6.0 * f[e - 3] - f[e - 4]) / h12;
    d[e] = (25.0 * f[e] - 48.0 * f[e - 1] + 36.0 * f[e - 2] - 16.0 * f[e - 3] + 3.0 * f[e - 4]) / h12;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub cutoff_hz: f64,
    pub features: FeatureMap,
}

/// Labelled samples recovered from one log.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Samples that rely on a one-sided stencil.
    pub edge: Vec<bool>,
}

impl Extracted {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Interior `(x, y)` pairs in time order.
    pub fn interior_pairs(&self) -> Vec<(DVector<f64>, DVector<f64>)> {
        (0..self.len())
            .filter(|&i| !self.edge[i])
            .map(|i| (self.x[i].clone(), self.y[i].clone()))
            .collect()
    }
}

fn channel(rows: usize, n: usize, get: impl Fn(usize) -> DVector<f64>) -> Vec<Vec<f64>> {
    let cols: Vec<DVector<f64>> = (0..rows).map(get).collect();
    (0..n).map(|j| cols.iter().map(|c| c[j]).collect()).collect()
}

/// Recover `y = M(q)q̈ + C(q, q̇)q̇ + g(q) − u` from a log of `(q, q̇, u)`.
///
/// `q̇` is low-passed and differentiated. The logged input is held over each
/// period, so it is integrated under that hold and passed through the same
/// filter and stencil; both sides of the balance then see one kernel.
pub fn extract_disturbance(plant: &dyn Plant, log: &TrajectoryLog, cfg: &ExtractConfig) -> Result<Extracted> {
    let rows = &log.rows;
    let len = rows.len();
    let n = plant.dim();
    if len < 5 {
        return Err(Error::Data(format!("log has {len} rows, need at least 5")));
    }
    if rows[0].q.len() != n {
        return Err(Error::Shape { expected: n, got: rows[0].q.len() });
    }
    let dt = rows[1].t - rows[0].t;
    if !(dt > 0.0) || rows.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Data("log timestamps are not uniformly spaced".into()));
    }
    let filt = Butterworth4::design(cfg.cutoff_hz, 1.0 / dt)?;

    let qd = channel(len, n, |k| rows[k].qd.clone());
    let mut acc = vec![vec![0.0; len]; n];
    let mut u_eff = vec![vec![0.0; len]; n];
    for j in 0..n {
        acc[j] = five_point_derivative(&filt.filtfilt(&qd[j]), dt)?;
        let mut integral = vec![0.0; len];
        for k in 1..len {
            integral[k] = integral[k - 1] + rows[k - 1].u[j] * dt;
        }
        u_eff[j] = five_point_derivative(&filt.filtfilt(&integral), dt)?;
    }

    let mut out = Extracted {
        t: Vec::with_capacity(len),
        x: Vec::with_capacity(len),
        y: Vec::with_capacity(len),
        edge: Vec::with_capacity(len),
    };
    for (k, r) in rows.iter().enumerate() {
        let a = DVector::from_fn(n, |j, _| acc[j][k]);
        let u = DVector::from_fn(n, |j, _| u_eff[j][k]);
        let y = plant.mass_matrix(&r.q) * a + plant.coriolis(&r.q, &r.qd) * &r.qd + plant.gravity(&r.q) - u;
        let u_prev = if k == 0 { plant.gravity(&r.q) } else { rows[k - 1].u.clone() };
        out.t.push(r.t);
        out.x.push(cfg.features.eval(plant, &r.q, &r.qd, &r.q_ref, &u_prev));
        out.y.push(y);
        out.edge.push(k < 2 || k + 2 >= len);
    }
    Ok(out)
}
