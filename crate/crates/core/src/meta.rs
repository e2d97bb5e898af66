//! Self-supervised task construction and bi-level meta-training.
//!
//! A task is a pair of consecutive windows cut from one trajectory: the
//! adaptation set `B^a` and the training set `B^t` right after it. Training
//! looks for an initialization `θ0` whose one-step adaptation on `B^a`
//! predicts `B^t` well, regularised by the unadapted loss and `‖θ0‖²`.

pub mod toy;

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::Mlp;

pub type Sample = (DVector<f64>, DVector<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTask {
    pub adapt: Vec<Sample>,
    pub train: Vec<Sample>,
    /// Index of the trajectory the windows were cut from.
    pub source: usize,
    /// Index of the first adaptation sample within that trajectory.
    pub start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    FirstOrder,
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub h_a: usize,
    pub h_t: usize,
    /// Window stride; `None` means `h_a + h_t`.
    pub stride: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_dir: f64,
    pub lambda_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub inner_steps: usize,
    pub mode: GradientMode,
    /// Project `θ0` onto the spectral ball after every epoch.
    pub project_nu: Option<f64>,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            h_a: 25,
            h_t: 25,
            stride: None,
            alpha: 0.002,
            beta: 0.0001,
            lambda_dir: 0.5,
            lambda_norm: 0.05,
            epochs: 50,
            batch_size: 16,
            inner_steps: 1,
            mode: GradientMode::FirstOrder,
            project_nu: None,
            seed: 0,
        }
    }
}

impl MetaConfig {
    /// Plain empirical-risk training on the training windows.
    pub fn vanilla(mut self) -> Self {
        self.alpha = 0.0;
        self.lambda_dir = 0.0;
        self.lambda_norm = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_a == 0 || self.h_t == 0 || self.batch_size == 0 || self.inner_steps == 0 {
            return Err(Error::Config("window lengths, batch size and inner steps must be positive".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Config("stride must be positive".into()));
        }
        let rates = [self.alpha, self.beta, self.lambda_dir, self.lambda_norm];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("learning rates and weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Cut every trajectory into consecutive `(B^a, B^t)` windows.
///
/// Returns the tasks and the number of trajectories skipped for being
/// shorter than `h_a + h_t`.
pub fn build_dataset(trajectories: &[Vec<Sample>], h_a: usize, h_t: usize, stride: usize) -> Result<(Vec<MetaTask>, usize)> {
    if h_a == 0 || h_t == 0 || stride == 0 {
        return Err(Error::Usage("window lengths and stride must be positive".into()));
    }
    let span = h_a + h_t;
    let mut tasks = Vec::new();
    let mut skipped = 0;
    for (source, traj) in trajectories.iter().enumerate() {
        if traj.len() < span {
            skipped += 1;
            continue;
        }
        for start in (0..=traj.len() - span).step_by(stride) {
            tasks.push(MetaTask {
                adapt: traj[start..start + h_a].to_vec(),
                train: traj[start + h_a..start + span].to_vec(),
                source,
                start,
            });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} trajectories shorter than {span} samples were skipped");
    }
    Ok((tasks, skipped))
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Inner gradient steps from `θ0` on the adaptation set; returns `Δθ`.
pub fn inner_adapt(net: &Mlp, adapt: &[Sample], alpha: f64, steps: usize) -> Result<DVector<f64>> {
    inner_path(net, adapt, alpha, steps).map(|(delta, _)| delta)
}

/// `Δθ` together with the parameters at which each inner gradient was taken.
fn inner_path(net: &Mlp, adapt: &[Sample], alpha: f64, steps: usize) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    if steps == 0 {
        return Err(Error::Usage("inner steps must be at least 1".into()));
    }
    let theta0 = net.flatten().into_inner();
    let mut delta = DVector::zeros(theta0.len());
    let mut visited = Vec::with_capacity(steps);
    let mut work = net.clone();
    for _ in 0..steps {
        let theta = &theta0 + &delta;
        work.set_params(&theta)?;
        let (_, g) = work.loss_and_grad(adapt)?;
        check_finite(&g, "inner gradient")?;
        delta -= g * alpha;
        visited.push(theta);
    }
    Ok((delta, visited))
}

/// Per-task terms of the meta-objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    /// `L(θ0 + Δθ, B^t)`.
    pub adapted: f64,
    /// `L(θ0, B^t)`.
    pub direct: f64,
}

pub fn task_loss(net: &Mlp, task: &MetaTask, cfg: &MetaConfig) -> Result<TaskLoss> {
    let delta = inner_adapt(net, &task.adapt, cfg.alpha, cfg.inner_steps)?;
    let adapted = net.with_params(&(net.flatten().into_inner() + delta))?.loss(&task.train)?;
    Ok(TaskLoss {
        adapted,
        direct: net.loss(&task.train)?,
    })
}

/// `Σ_k [L(θ0 + Δθ_k, B^t_k) + λ_dir L(θ0, B^t_k)] + λ_norm ‖θ0‖²`.
pub fn meta_loss(net: &Mlp, tasks: &[MetaTask], cfg: &MetaConfig) -> Result<f64> {
    let mut total = 0.0;
    for task in tasks {
        let l = task_loss(net, task, cfg)?;
        total += l.adapted + cfg.lambda_dir * l.direct;
    }
    Ok(total + cfg.lambda_norm * net.flatten().norm_squared())
}

/// Hessian-vector product of `L(·, batch)` at `theta` by central differences
/// of the analytic gradient along the normalised direction.
pub fn hessian_vector_product(net: &Mlp, theta: &DVector<f64>, batch: &[Sample], v: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let dir = v / norm;
    let (_, gp) = net.with_params(&(theta + &dir * h))?.loss_and_grad(batch)?;
    let (_, gm) = net.with_params(&(theta - &dir * h))?.loss_and_grad(batch)?;
    Ok((gp - gm) * (norm / (2.0 * h)))
}

pub const HVP_STEP: f64 = 1e-5;

/// Loss and gradient of one task's contribution (without the norm penalty).
fn task_gradient(net: &Mlp, task: &MetaTask, cfg: &MetaConfig) -> Result<(TaskLoss, DVector<f64>)> {
    let theta0 = net.flatten().into_inner();
    let (delta, visited) = inner_path(net, &task.adapt, cfg.alpha, cfg.inner_steps)?;
    let (adapted, mut g_adapted) = net.with_params(&(&theta0 + delta))?.loss_and_grad(&task.train)?;
    if cfg.mode == GradientMode::SecondOrder && cfg.alpha > 0.0 {
        // Chain rule through θ_{i+1} = θ_i − α∇L(θ_i, B^a), applied in reverse.
        for theta in visited.iter().rev() {
            let hv = hessian_vector_product(net, theta, &task.adapt, &g_adapted, HVP_STEP)?;
            g_adapted -= hv * cfg.alpha;
        }
    }
    let (direct, g_direct) = net.loss_and_grad(&task.train)?;
    Ok((TaskLoss { adapted, direct }, g_adapted + g_direct * cfg.lambda_dir))
}

/// Meta-objective and its gradient with respect to `θ0` over `tasks`.
///
/// Per-task work runs in parallel; the reduction is done in task order so the
/// result does not depend on thread scheduling.
pub fn meta_gradient(net: &Mlp, tasks: &[MetaTask], cfg: &MetaConfig) -> Result<(f64, DVector<f64>)> {
    let parts: Vec<(TaskLoss, DVector<f64>)> =
        tasks.par_iter().map(|task| task_gradient(net, task, cfg)).collect::<Result<_>>()?;
    let theta0 = net.flatten().into_inner();
    let mut loss = cfg.lambda_norm * theta0.norm_squared();
    let mut grad = theta0 * (2.0 * cfg.lambda_norm);
    for (l, g) in parts {
        loss += l.adapted + cfg.lambda_dir * l.direct;
        grad += g;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Meta-objective per task over the whole dataset.
    pub meta_loss: f64,
    /// Mean `L(θ0 + Δθ, B^t)`.
    pub post_adapt_loss: f64,
    /// Mean `L(θ0, B^t)`.
    pub direct_loss: f64,
}

/// Dataset-wide means of the two task losses.
pub fn evaluate(net: &Mlp, tasks: &[MetaTask], cfg: &MetaConfig) -> Result<TaskLoss> {
    if tasks.is_empty() {
        return Err(Error::Usage("no tasks to evaluate".into()));
    }
    let parts: Vec<TaskLoss> = tasks.par_iter().map(|t| task_loss(net, t, cfg)).collect::<Result<_>>()?;
    let n = tasks.len() as f64;
    Ok(TaskLoss {
        adapted: parts.iter().map(|l| l.adapted).sum::<f64>() / n,
        direct: parts.iter().map(|l| l.direct).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub history: Vec<HistoryRow>,
}

/// Minibatch SGD on the meta-objective.
pub fn train_ssml(tasks: &[MetaTask], cfg: &MetaConfig, init: Mlp) -> Result<TrainOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Usage("meta-training needs at least one task".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = init;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let last_good = net.clone();
        let fail = |reason: String, last_good: &Mlp| Error::Training {
            epoch,
            reason,
            last_good: Some(Box::new(last_good.clone())),
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<MetaTask> = chunk.iter().map(|&i| tasks[i].clone()).collect();
            let (loss, grad) = meta_gradient(&net, &batch, cfg).map_err(|e| fail(e.to_string(), &last_good))?;
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(fail("meta-loss became non-finite".into(), &last_good));
            }
            let theta = net.flatten().into_inner() - grad * cfg.beta;
            if !theta.iter().all(|v| v.is_finite()) {
                return Err(fail("parameters became non-finite".into(), &last_good));
            }
            net.set_params(&theta)?;
        }
        if let Some(nu) = cfg.project_nu {
            net.project_spectral(nu)?;
        }
        let eval = evaluate(&net, tasks, cfg).map_err(|e| fail(e.to_string(), &last_good))?;
        let norm_term = cfg.lambda_norm * net.flatten().norm_squared() / tasks.len() as f64;
        let row = HistoryRow {
            epoch,
            meta_loss: eval.adapted + cfg.lambda_dir * eval.direct + norm_term,
            post_adapt_loss: eval.adapted,
            direct_loss: eval.direct,
        };
        if !row.meta_loss.is_finite() {
            return Err(fail("meta-loss became non-finite".into(), &last_good));
        }
        log::info!(
            "epoch {epoch}: meta {:.6} post-adapt {:.6} direct {:.6}",
            row.meta_loss,
            row.post_adapt_loss,
            row.direct_loss
        );
        history.push(row);
    }
    Ok(TrainOutcome { net, history })
}

/// Write the training history with header `epoch,meta_loss,post_adapt_loss,direct_loss`.
pub fn write_history<W: Write>(history: &[HistoryRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["epoch", "meta_loss", "post_adapt_loss", "direct_loss"])?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_history(history: &[HistoryRow], path: &Path) -> Result<()> {
    write_history(history, std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Layer;
    use nalgebra::{dvector, DMatrix};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weight: DMatrix::from_element(1, 1, w),
            bias: DVector::zeros(1),
        }])
        .unwrap()
    }

    fn series(len: usize, offset: f64) -> Vec<Sample> {
        (0..len).map(|i| (dvector![i as f64 + offset], dvector![offset])).collect()
    }

    #[test]
    fn exact_span_gives_one_task() {
        let (tasks, skipped) = build_dataset(&[series(50, 0.0)], 25, 25, 1).unwrap();
        assert_eq!((tasks.len(), skipped), (1, 0));
    }

    #[test]
    fn window_arithmetic() {
        let (tasks, _) = build_dataset(&[series(100, 0.0)], 25, 25, 25).unwrap();
        let starts: Vec<usize> = tasks.iter().map(|t| t.start).collect();
        assert_eq!(starts, vec![0, 25, 50]);
        let t = &tasks[1];
        assert_eq!(t.adapt[0].0[0], 25.0);
        assert_eq!(t.train[0].0[0], 50.0);
        assert_eq!(t.train.last().unwrap().0[0], 74.0);
    }

    #[test]
    fn windows_stay_inside_trajectories() {
        let trajs = vec![series(120, 0.0), series(30, 1000.0), series(75, 5000.0)];
        let (tasks, skipped) = build_dataset(&trajs, 10, 15, 7).unwrap();
        assert_eq!(skipped, 0);
        for t in &tasks {
            let base = [0.0, 1000.0, 5000.0][t.source];
            for (x, y) in t.adapt.iter().chain(&t.train) {
                assert_eq!(y[0], base);
                assert!(x[0] >= base && x[0] < base + trajs[t.source].len() as f64);
            }
        }
        assert_eq!(tasks.iter().filter(|t| t.source == 1).count(), 1);
    }

    #[test]
    fn short_trajectories_are_skipped() {
        let (tasks, skipped) = build_dataset(&[series(10, 0.0), series(60, 0.0)], 25, 25, 50).unwrap();
        assert_eq!((tasks.len(), skipped), (1, 1));
    }

    #[test]
    fn hand_inner_step() {
        let delta = inner_adapt(&scalar_net(0.0), &[(dvector![1.0], dvector![1.0])], 0.1, 1).unwrap();
        assert!((delta[0] - 0.2).abs() < 1e-15);
        // Bias gradient is the same as the weight gradient at x = 1.
        assert!((delta[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_inner_steps_unrolled() {
        // L(w, b) = (w + b − 1)², gradient 2(w + b − 1)(1, 1).
        let alpha = 0.1;
        let mut p = [0.0f64, 0.0];
        for _ in 0..2 {
            let g = 2.0 * (p[0] + p[1] - 1.0);
            p = [p[0] - alpha * g, p[1] - alpha * g];
        }
        let delta = inner_adapt(&scalar_net(0.0), &[(dvector![1.0], dvector![1.0])], alpha, 2).unwrap();
        assert!((delta[0] - p[0]).abs() < 1e-15 && (delta[1] - p[1]).abs() < 1e-15);
    }

    #[test]
    fn perfect_adapt_set_gives_zero_step() {
        let net = Mlp::he_uniform(&[2, 5, 1], 3).unwrap();
        let x = dvector![0.3, -0.7];
        let adapt = vec![(x.clone(), net.forward(&x).unwrap())];
        assert_eq!(inner_adapt(&net, &adapt, 0.5, 3).unwrap(), DVector::zeros(net.param_count()));
    }

    fn random_tasks(n_in: usize, n_out: usize, count: usize, seed: u64) -> Vec<MetaTask> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |k: usize| -> Vec<Sample> {
            (0..k)
                .map(|_| {
                    (
                        DVector::from_fn(n_in, |_, _| rng.random_range(-1.0..1.0)),
                        DVector::from_fn(n_out, |_, _| rng.random_range(-1.0..1.0)),
                    )
                })
                .collect()
        };
        (0..count)
            .map(|i| MetaTask {
                adapt: sample(4),
                train: sample(3),
                source: i,
                start: 0,
            })
            .collect()
    }

    #[test]
    fn degenerate_config_is_plain_loss() {
        let net = Mlp::he_uniform(&[3, 6, 2], 1).unwrap();
        let tasks = random_tasks(3, 2, 5, 2);
        let cfg = MetaConfig {
            alpha: 0.0,
            lambda_dir: 0.0,
            lambda_norm: 0.0,
            ..Default::default()
        };
        let direct: f64 = tasks.iter().map(|t| net.loss(&t.train).unwrap()).sum();
        assert!((meta_loss(&net, &tasks, &cfg).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn zero_net_zero_targets() {
        let net = Mlp::zeros(&[2, 4, 1]).unwrap();
        let mut tasks = random_tasks(2, 1, 3, 5);
        for t in &mut tasks {
            for s in t.adapt.iter_mut().chain(t.train.iter_mut()) {
                s.1.fill(0.0);
            }
        }
        assert_eq!(meta_loss(&net, &tasks, &MetaConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn meta_loss_is_sum_of_task_terms() {
        let net = Mlp::he_uniform(&[3, 8, 2], 4).unwrap();
        let tasks = random_tasks(3, 2, 6, 9);
        let cfg = MetaConfig {
            alpha: 0.05,
            ..Default::default()
        };
        let theta0 = net.flatten().into_inner();
        let mut expected = cfg.lambda_norm * theta0.iter().map(|v| v * v).sum::<f64>();
        for t in &tasks {
            // Independent single-step adaptation from the analytic gradient.
            let (_, g) = net.loss_and_grad(&t.adapt).unwrap();
            let adapted = net.with_params(&(&theta0 - g * cfg.alpha)).unwrap();
            expected += adapted.loss(&t.train).unwrap() + cfg.lambda_dir * net.loss(&t.train).unwrap();
        }
        let got = meta_loss(&net, &tasks, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0));
    }

    fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(theta.len(), |i, _| {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).amax() / b.amax().max(1e-12)
    }

    #[test]
    fn first_order_gradient_matches_stopped_objective() {
        let net = Mlp::he_uniform(&[2, 4, 1], 7).unwrap();
        let tasks = random_tasks(2, 1, 4, 11);
        let cfg = MetaConfig {
            alpha: 0.05,
            ..Default::default()
        };
        let deltas: Vec<DVector<f64>> =
            tasks.iter().map(|t| inner_adapt(&net, &t.adapt, cfg.alpha, 1).unwrap()).collect();
        let stopped = |theta: &DVector<f64>| -> f64 {
            let n = net.with_params(theta).unwrap();
            let mut total = cfg.lambda_norm * theta.norm_squared();
            for (t, d) in tasks.iter().zip(&deltas) {
                total += net.with_params(&(theta + d)).unwrap().loss(&t.train).unwrap()
                    + cfg.lambda_dir * n.loss(&t.train).unwrap();
            }
            total
        };
        let (_, g) = meta_gradient(&net, &tasks, &cfg).unwrap();
        let fd = fd_gradient(stopped, &net.flatten().into_inner(), 1e-6);
        assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
    }

    #[test]
    fn second_order_gradient_matches_full_objective() {
        let net = Mlp::he_uniform(&[1, 3, 1], 21).unwrap();
        assert_eq!(net.param_count(), 10);
        let tasks = random_tasks(1, 1, 3, 17);
        let cfg = MetaConfig {
            alpha: 0.1,
            inner_steps: 2,
            mode: GradientMode::SecondOrder,
            ..Default::default()
        };
        let full = |theta: &DVector<f64>| meta_loss(&net.with_params(theta).unwrap(), &tasks, &cfg).unwrap();
        let (_, g) = meta_gradient(&net, &tasks, &cfg).unwrap();
        let fd = fd_gradient(full, &net.flatten().into_inner(), 1e-6);
        assert!(rel_err(&g, &fd) < 1e-3, "{}", rel_err(&g, &fd));
        let first = MetaConfig {
            mode: GradientMode::FirstOrder,
            ..cfg.clone()
        };
        let (_, g1) = meta_gradient(&net, &tasks, &first).unwrap();
        assert!(rel_err(&g1, &fd) > rel_err(&g, &fd));
    }

    #[test]
    fn vanilla_matches_plain_sgd() {
        let init = Mlp::he_uniform(&[2, 5, 1], 2).unwrap();
        let tasks = random_tasks(2, 1, 6, 3);
        let cfg = MetaConfig {
            epochs: 3,
            batch_size: 2,
            beta: 0.01,
            ..Default::default()
        }
        .vanilla();
        let out = train_ssml(&tasks, &cfg, init.clone()).unwrap();
        // Replay with the same shuffles using only the training windows.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        let mut net = init;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(2) {
                let mut g = DVector::zeros(net.param_count());
                for &i in chunk {
                    g += net.loss_and_grad(&tasks[i].train).unwrap().1;
                }
                let theta = net.flatten().into_inner() - g * cfg.beta;
                net.set_params(&theta).unwrap();
            }
        }
        assert_eq!(out.net, net);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_epoch() {
        let tasks = random_tasks(2, 1, 10, 8);
        let cfg = MetaConfig {
            epochs: 4,
            batch_size: 3,
            beta: 0.01,
            alpha: 0.05,
            ..Default::default()
        };
        let init = Mlp::he_uniform(&[2, 6, 1], 9).unwrap();
        let a = train_ssml(&tasks, &cfg, init.clone()).unwrap();
        let b = train_ssml(&tasks, &cfg, init.clone()).unwrap();
        assert_eq!(a.net.flatten().as_vector(), b.net.flatten().as_vector());
        assert_eq!(a.history.len(), 4);
        let zero = train_ssml(&tasks, &MetaConfig { epochs: 0, ..cfg }, init.clone()).unwrap();
        assert_eq!(zero.net, init);
        assert!(zero.history.is_empty());
    }

    #[test]
    fn divergence_returns_last_good() {
        let tasks = random_tasks(2, 1, 4, 1);
        let cfg = MetaConfig {
            epochs: 50,
            beta: 1e6,
            ..Default::default()
        };
        match train_ssml(&tasks, &cfg, Mlp::he_uniform(&[2, 4, 1], 1).unwrap()) {
            Err(Error::Training { last_good, .. }) => assert!(last_good.is_some()),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_layout() {
        let rows = vec![HistoryRow {
            epoch: 1,
            meta_loss: 2.0,
            post_adapt_loss: 1.0,
            direct_loss: 1.5,
        }];
        let mut buf = Vec::new();
        write_history(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,meta_loss,post_adapt_loss,direct_loss\n1,2.0,1.0,1.5\n");
    }
}
