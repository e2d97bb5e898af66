//! The collect → train → evaluate → report workflow on top of a [`Scenario`].
//!
//! Everything is written under one output root:
//!
//! ```text
//! <root>/data/traj_00.csv ...           collected trajectories
//! <root>/model/ssml.json                meta-trained checkpoint
//! <root>/model/ssml_history.csv
//! <root>/model/vanilla.json             vanilla checkpoint (train --vanilla)
//! <root>/eval/metrics.json, metrics.csv
//! <root>/eval/<controller>/run_<r>/log.csv (+ stability.json/csv in teacher mode)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{stability_report, tracking_rmse, JacobianStats};
use crate::control::{AdaptScope, AdaptiveController, Controller, ControllerState, Indi, OracleFeedforward, Pid, PidGains};
use crate::error::{Error, Result};
use crate::meta::{build_dataset, save_history, train_ssml, GradientMode, HistoryRow, MetaConfig};
use crate::nnet::{Checkpoint, Mlp};
use crate::plant::{Plant, RandomSmooth, Reference, Simulation, TrajectoryLog};
use crate::scenario::{derive_seed, Scenario, WindKind};
use crate::signal::{extract_disturbance, ExtractConfig};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Fly the nominal PD controller along random smooth references and save one
/// CSV per trajectory. Returns the written paths.
pub fn collect(sc: &Scenario, root: &Path) -> Result<Vec<PathBuf>> {
    let dir = sc.paths.resolve(root, &sc.paths.data);
    ensure_dir(&dir)?;
    let c = &sc.collect;
    let center = sc.collect_center();
    let pd = PidGains { ki: 0.0, ..sc.pid.clone() };
    let mut out = Vec::with_capacity(c.trajectories);
    for i in 0..c.trajectories as u64 {
        let reference = Reference::RandomSmooth(RandomSmooth::generate(
            derive_seed(sc.seed, "collect-ref", i),
            c.duration,
            &center,
            &c.half_box,
            c.components,
            c.band_hz,
        )?);
        let field = sc.build_field(derive_seed(sc.seed, "collect-wind", i), None)?;
        let cfg = sc.sim_config(c.duration, derive_seed(sc.seed, "collect-noise", i), &field);
        let mut ctrl = Pid::new("pd", pd.clone())?;
        let log = Simulation::new(&sc.plant, &field, &reference, cfg).run(&mut ctrl)?;
        let path = dir.join(format!("traj_{i:02}.csv"));
        log.save_csv(&path)?;
        log::info!("collected {} ({} rows)", path.display(), log.len());
        out.push(path);
    }
    Ok(out)
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no trajectory CSVs in {}", dir.display())));
    }
    Ok(files)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    pub vanilla: bool,
    pub epochs: Option<usize>,
    pub second_order: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history_path: PathBuf,
    pub tasks: usize,
    pub skipped: usize,
    pub history: Vec<HistoryRow>,
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    checkpoint.with_file_name(format!("{stem}_history.csv"))
}

pub fn meta_config(sc: &Scenario, opts: &TrainOptions) -> MetaConfig {
    let mut cfg = MetaConfig {
        seed: derive_seed(sc.seed, "meta", 0),
        ..sc.meta.clone()
    };
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if opts.second_order {
        cfg.mode = GradientMode::SecondOrder;
    }
    if opts.vanilla {
        cfg = cfg.vanilla();
    }
    cfg
}

/// Extract `(x, y)` pairs from the collected logs, cut them into tasks and
/// meta-train (or plain-train) a network. On a non-finite loss the last good
/// parameters are saved next to the checkpoint as `<name>.last_good.json`
/// before the error is returned.
pub fn train(sc: &Scenario, root: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    let features = sc.features();
    let extract = ExtractConfig {
        cutoff_hz: sc.signal.cutoff_hz,
        features: features.clone(),
    };
    let mut trajectories = Vec::new();
    for path in trajectory_files(&sc.paths.resolve(root, &sc.paths.data))? {
        let log = TrajectoryLog::load_csv(&path)?;
        if log.dim() != sc.plant.dim() {
            return Err(Error::Incompatible(format!("{} does not match the plant dimension", path.display())));
        }
        trajectories.push(extract_disturbance(&sc.plant, &log, &extract)?.interior_pairs());
    }
    let cfg = meta_config(sc, opts);
    let stride = cfg.stride.unwrap_or(cfg.h_a + cfg.h_t);
    let (tasks, skipped) = build_dataset(&trajectories, cfg.h_a, cfg.h_t, stride)?;
    if skipped > 0 {
        log::warn!("{skipped} trajectories were too short for one task");
    }
    let init = Mlp::he_uniform(&sc.layer_sizes(), derive_seed(sc.seed, "init", 0))?;
    let rel = if opts.vanilla { &sc.paths.vanilla_checkpoint } else { &sc.paths.checkpoint };
    let checkpoint = sc.paths.resolve(root, rel);
    if let Some(parent) = checkpoint.parent() {
        ensure_dir(parent)?;
    }
    let to_ck = |net: &Mlp| Checkpoint::from_net(net, sc.gains.nu, sc.seed).with_features(features.names());
    let outcome = match train_ssml(&tasks, &cfg, init) {
        Ok(o) => o,
        Err(Error::Training { epoch, reason, last_good }) => {
            if let Some(net) = &last_good {
                to_ck(net).save(&checkpoint.with_extension("last_good.json"))?;
            }
            return Err(Error::Training { epoch, reason, last_good });
        }
        Err(e) => return Err(e),
    };
    to_ck(&outcome.net).save(&checkpoint)?;
    let history_path = history_path(&checkpoint);
    save_history(&outcome.history, &history_path)?;
    Ok(TrainSummary {
        checkpoint,
        history_path,
        tasks: tasks.len(),
        skipped,
        history: outcome.history,
    })
}

/// Load a checkpoint and check it fits the scenario's feature map and plant.
pub fn load_compatible(sc: &Scenario, path: &Path) -> Result<Mlp> {
    let ck = Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    let net = ck.to_net()?;
    let sizes = sc.layer_sizes();
    if net.n_in() != sizes[0] || net.n_out() != sc.plant.dim() {
        return Err(Error::Incompatible(format!(
            "{} maps {} inputs to {} outputs; the scenario needs {} to {}",
            path.display(),
            net.n_in(),
            net.n_out(),
            sizes[0],
            sc.plant.dim()
        )));
    }
    if let Some(names) = &ck.features {
        if *names != sc.features().names() {
            return Err(Error::Incompatible(format!(
                "{} was trained on features {:?}, the scenario uses {:?}",
                path.display(),
                names,
                sc.features().names()
            )));
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    pub controllers: Option<Vec<String>>,
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub repeat: usize,
    pub seed: u64,
    pub rmse: f64,
    pub max_layer_norm: Option<f64>,
    pub jacobian: Option<JacobianStats>,
    /// Relative to the evaluation directory.
    pub log: PathBuf,
    pub stability: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerMetrics {
    pub name: String,
    pub rmse_mean: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub rmse_std: f64,
    pub runs: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub duration: f64,
    pub skip_transient: f64,
    pub controllers: Vec<ControllerMetrics>,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<&ControllerMetrics> {
        self.controllers.iter().find(|c| c.name == name)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// One row per run: `controller,repeat,seed,rmse,max_layer_norm,jac_max,jac_median`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["controller", "repeat", "seed", "rmse", "max_layer_norm", "jac_max", "jac_median"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.controllers {
            for r in &c.runs {
                w.write_record([
                    c.name.clone(),
                    r.repeat.to_string(),
                    r.seed.to_string(),
                    r.rmse.to_string(),
                    opt(r.max_layer_norm),
                    opt(r.jacobian.map(|j| j.max)),
                    opt(r.jacobian.map(|j| j.median)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Nets {
    ssml: Option<Mlp>,
    vanilla: Option<Mlp>,
}

fn need<'a>(net: &'a Option<Mlp>, what: &str) -> Result<&'a Mlp> {
    net.as_ref().ok_or_else(|| Error::Usage(format!("no {what} checkpoint loaded")))
}

/// The controller plus, for adaptive ones, the network it starts from.
fn build_controller(name: &str, sc: &Scenario, nets: &Nets) -> Result<(Box<dyn Controller>, Option<ControllerState>)> {
    let n = sc.plant.dim();
    let gains = sc.gains(&sc.plant.gravity(&nalgebra::DVector::zeros(n)))?;
    let adaptive = |net: &Mlp, scope: AdaptScope| -> Result<(Box<dyn Controller>, Option<ControllerState>)> {
        let state = ControllerState::new(net.clone(), gains.clone(), n)?;
        let ctrl = AdaptiveController::new(name, state.clone(), sc.features(), scope, sc.network.output_bound)
            .with_monitoring(sc.evaluate.monitor_projection);
        Ok((Box::new(ctrl), Some(state)))
    };
    match name {
        "ssml-ac" => adaptive(need(&nets.ssml, "ssml")?, AdaptScope::Full),
        "ssml-ac-ll" => adaptive(need(&nets.ssml, "ssml")?, AdaptScope::LastLayer),
        "vanilla-nn" => {
            let scope = if sc.evaluate.vanilla_adapts { AdaptScope::Full } else { AdaptScope::Frozen };
            adaptive(need(&nets.vanilla, "vanilla")?, scope)
        }
        "indi" => Ok((Box::new(Indi::new(sc.indi_config())?), None)),
        "pid" => Ok((Box::new(Pid::new("pid", sc.pid.clone())?), None)),
        "oracle-feedforward" => Ok((
            Box::new(OracleFeedforward {
                lambda_mat: gains.lambda_mat.clone(),
                k: gains.k.clone(),
            }),
            None,
        )),
        other => Err(Error::Config(format!("unknown controller `{other}`"))),
    }
}

fn run_one(sc: &Scenario, nets: &Nets, name: &str, repeat: usize, dir: &Path) -> Result<RunMetrics> {
    let r = repeat as u64;
    // Every controller in a repeat sees the same wind and noise.
    let field = sc.build_field(derive_seed(sc.seed, "eval-wind", r), nets.ssml.as_ref().or(nets.vanilla.as_ref()))?;
    let seed = derive_seed(sc.seed, "eval-noise", r);
    let (mut ctrl, state) = build_controller(name, sc, nets)?;
    let teacher = sc.wind.kind == WindKind::Teacher && state.is_some();
    let mut cfg = sc.sim_config(sc.evaluate.duration, seed, &field);
    cfg.record_params = teacher;
    let log = Simulation::new(&sc.plant, &field, &sc.evaluate.reference, cfg).run(ctrl.as_mut())?;
    let rel = PathBuf::from(name).join(format!("run_{repeat:02}"));
    let run_dir = dir.join(&rel);
    ensure_dir(&run_dir)?;
    log.save_csv(&run_dir.join("log.csv"))?;
    let mut stability = None;
    if let (true, Some(state)) = (teacher, &state) {
        let report = stability_report(&log, &sc.plant, &state.net, &field, &state.gains, &state.theta0)?;
        report.save_json(&run_dir.join("stability.json"))?;
        report.save_csv(&run_dir.join("stability.csv"))?;
        stability = Some(rel.join("stability.json"));
    }
    Ok(RunMetrics {
        repeat,
        seed,
        rmse: tracking_rmse(&log, sc.evaluate.skip_transient),
        max_layer_norm: log.rows.iter().filter_map(|row| row.max_layer_norm).reduce(f64::max),
        jacobian: JacobianStats::from_log(&log),
        log: rel.join("log.csv"),
        stability,
    })
}

/// Fly every requested controller on the evaluation reference, `repeats`
/// times with different wind and noise seeds, and write the metrics files.
pub fn evaluate(sc: &Scenario, root: &Path, opts: &EvalOptions) -> Result<Metrics> {
    let controllers = opts.controllers.clone().unwrap_or_else(|| sc.evaluate.controllers.clone());
    let repeats = opts.repeats.unwrap_or(sc.evaluate.repeats);
    if controllers.is_empty() || repeats == 0 {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut checked = sc.clone();
    checked.evaluate.controllers = controllers.clone();
    checked.validate()?;
    let wants = |names: &[&str]| controllers.iter().any(|c| names.contains(&c.as_str()));
    let nets = Nets {
        ssml: match wants(&["ssml-ac", "ssml-ac-ll"]) || sc.wind.kind == WindKind::Teacher {
            true => Some(load_compatible(sc, &sc.paths.resolve(root, &sc.paths.checkpoint))?),
            false => None,
        },
        vanilla: match wants(&["vanilla-nn"]) {
            true => Some(load_compatible(sc, &sc.paths.resolve(root, &sc.paths.vanilla_checkpoint))?),
            false => None,
        },
    };
    let dir = sc.paths.resolve(root, &sc.paths.eval);
    ensure_dir(&dir)?;
    let jobs: Vec<(usize, usize)> = (0..controllers.len()).flat_map(|c| (0..repeats).map(move |r| (c, r))).collect();
    let runs: Vec<Result<RunMetrics>> = jobs
        .par_iter()
        .map(|&(c, r)| run_one(sc, &nets, &controllers[c], r, &dir))
        .collect();
    let mut per: Vec<Vec<RunMetrics>> = vec![Vec::new(); controllers.len()];
    for ((c, _), run) in jobs.iter().zip(runs) {
        per[*c].push(run?);
    }
    let metrics = Metrics {
        seed: sc.seed,
        duration: sc.evaluate.duration,
        skip_transient: sc.evaluate.skip_transient,
        controllers: controllers
            .iter()
            .zip(per)
            .map(|(name, runs)| {
                let rmse: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
                let (rmse_mean, rmse_std) = mean_std(&rmse);
                ControllerMetrics {
                    name: name.clone(),
                    rmse_mean,
                    rmse_std,
                    runs,
                }
            })
            .collect(),
    };
    metrics.save_json(&dir.join("metrics.json"))?;
    metrics.save_csv(&dir.join("metrics.csv"))?;
    Ok(metrics)
}

/// Plain-text table of an evaluation, best RMSE first.
pub fn report_table(metrics: &Metrics) -> String {
    let mut rows: Vec<&ControllerMetrics> = metrics.controllers.iter().collect();
    rows.sort_by(|a, b| a.rmse_mean.total_cmp(&b.rmse_mean));
    let mut out = format!(
        "seed {}  duration {} s  transient {} s\n{:<20} {:>12} {:>12} {:>5}\n",
        metrics.seed, metrics.duration, metrics.skip_transient, "controller", "rmse [m]", "std", "runs"
    );
    for c in rows {
        out.push_str(&format!("{:<20} {:>12.5} {:>12.5} {:>5}\n", c.name, c.rmse_mean, c.rmse_std, c.runs.len()));
    }
    out
}

/// Read `metrics.json` from the evaluation directory, write `report.txt`
/// next to it and return the table.
pub fn report(sc: &Scenario, root: &Path) -> Result<String> {
    let dir = sc.paths.resolve(root, &sc.paths.eval);
    let metrics = Metrics::load_json(&dir.join("metrics.json"))?;
    let table = report_table(&metrics);
    fs::write(dir.join("report.txt"), &table)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn history_sits_next_to_checkpoint() {
        assert_eq!(history_path(Path::new("a/model/ssml.json")), PathBuf::from("a/model/ssml_history.csv"));
    }

    #[test]
    fn table_is_sorted() {
        let c = |name: &str, rmse_mean: f64| ControllerMetrics {
            name: name.into(),
            rmse_mean,
            rmse_std: 0.0,
            runs: vec![],
        };
        let m = Metrics {
            seed: 1,
            duration: 10.0,
            skip_transient: 2.0,
            controllers: vec![c("pid", 0.2), c("ssml-ac", 0.05)],
        };
        let t = report_table(&m);
        assert!(t.find("ssml-ac").unwrap() < t.find("pid").unwrap());
    }
}
