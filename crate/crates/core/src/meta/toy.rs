//! Phase-shifted sinusoid regression, the standard sanity problem for
//! few-shot adaptation. Each task is `y = A sin(x + φ)` with its own `A`, `φ`.

use nalgebra::dvector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, train_ssml, GradientMode, MetaConfig, MetaTask, Sample};
use crate::error::Result;
use crate::nnet::Mlp;

#[derive(Debug, Clone, PartialEq)]
pub struct SineFamily {
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SineFamily {
    fn default() -> Self {
        Self {
            amplitude: (0.5, 2.0),
            phase: (0.0, 2.0 * std::f64::consts::PI),
            x_range: (-1.5, 1.5),
        }
    }
}

impl SineFamily {
    /// Independent tasks, each with its own amplitude and phase and freshly
    /// drawn inputs for both windows.
    pub fn sample_tasks(&self, count: usize, k_adapt: usize, k_train: usize, seed: u64) -> Vec<MetaTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let a = rng.random_range(self.amplitude.0..=self.amplitude.1);
                let phi = rng.random_range(self.phase.0..=self.phase.1);
                let mut draw = |k: usize| -> Vec<Sample> {
                    (0..k)
                        .map(|_| {
                            let x = rng.random_range(self.x_range.0..=self.x_range.1);
                            (dvector![x], dvector![a * (x + phi).sin()])
                        })
                        .collect()
                };
                let adapt = draw(k_adapt);
                let train = draw(k_train);
                MetaTask {
                    adapt,
                    train,
                    source: i,
                    start: 0,
                }
            })
            .collect()
    }
}

/// Settings for the toy comparison; separate from the flight defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySetup {
    pub family: SineFamily,
    pub hidden: Vec<usize>,
    pub k_shot: usize,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub meta: MetaConfig,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            family: SineFamily::default(),
            hidden: vec![40, 40],
            k_shot: 10,
            train_tasks: 1000,
            test_tasks: 500,
            meta: MetaConfig {
                alpha: 0.002,
                beta: 0.0002,
                lambda_dir: 0.0,
                lambda_norm: 0.0,
                epochs: 60,
                batch_size: 10,
                inner_steps: 1,
                mode: GradientMode::FirstOrder,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyComparison {
    /// Mean held-out loss per task after one inner step, meta-trained `θ0`.
    pub ssml_post: f64,
    /// Same for the vanilla-trained `θ0`, adapted with the same inner step.
    pub vanilla_post: f64,
    pub ssml_direct: f64,
    pub vanilla_direct: f64,
}

/// Train both arms from the same initialization and evaluate them on held-out tasks.
pub fn compare(setup: &ToySetup, seed: u64) -> Result<ToyComparison> {
    let train = setup.family.sample_tasks(setup.train_tasks, setup.k_shot, setup.k_shot, seed);
    let test = setup.family.sample_tasks(setup.test_tasks, setup.k_shot, setup.k_shot, seed.wrapping_add(1));
    let mut sizes = vec![1];
    sizes.extend(&setup.hidden);
    sizes.push(1);
    let init = Mlp::he_uniform(&sizes, seed)?;
    let meta_cfg = MetaConfig { seed, ..setup.meta.clone() };
    let vanilla_cfg = meta_cfg.clone().vanilla();
    let ssml = train_ssml(&train, &meta_cfg, init.clone())?.net;
    let vanilla = train_ssml(&train, &vanilla_cfg, init)?.net;
    // Both arms are scored with the same one-step adaptation.
    let s = evaluate(&ssml, &test, &meta_cfg)?;
    let v = evaluate(&vanilla, &test, &meta_cfg)?;
    Ok(ToyComparison {
        ssml_post: s.adapted,
        vanilla_post: v.adapted,
        ssml_direct: s.direct,
        vanilla_direct: v.direct,
    })
}
