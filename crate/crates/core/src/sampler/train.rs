//! Toy training loop for [`TinyDenoiser`] with Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tiny::{TinyDenoiser, TinySample};
use crate::error::{Error, Result};
use crate::hadtp::enhance_condition;
use crate::hazesynth::HazeScene;
use crate::image::{FieldImage, PixelImage};
use crate::pist::{forward_sample, intermediate_state, NoiseSchedule, PistParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            seed: 0,
            batch: 8,
            patch: 32,
            lr: 2e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::param("batch must be >= 1"));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return Err(Error::param(format!(
                "training patch {} must be a positive multiple of 4",
                self.patch
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::param(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Adam with the usual `(0.9, 0.999, 1e-8)` constants.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Draws one training pair: scene, patch origin, step and noise in that order.
pub fn draw_sample(
    scenes: &[(HazeScene, PixelImage)],
    schedule: &NoiseSchedule,
    pist: &PistParams,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(TinySample, FieldImage)> {
    let (scene, hazy) = &scenes[rng.random_range(0..scenes.len())];
    let (h, w) = (hazy.height(), hazy.width());
    if patch > h || patch > w {
        return Err(Error::param(format!("training patch {patch} exceeds scene {h}x{w}")));
    }
    let row = rng.random_range(0..=h - patch);
    let col = rng.random_range(0..=w - patch);
    let t = rng.random_range(1..=schedule.steps());
    let eps = FieldImage::from_fn(patch, patch, 3, |_, _, _| StandardNormal.sample(rng));
    let clear = scene.clear.crop(row, col, patch, patch)?;
    let hz = hazy.crop(row, col, patch, patch)?;
    let tmap = scene.tmap.crop(row, col, patch, patch)?;
    let u = intermediate_state(clear.as_field(), &hz, &tmap, t, pist)?;
    let j = forward_sample(&u, t, schedule, &eps)?;
    let cond = enhance_condition(&j, &hz, &tmap)?.into_field();
    Ok((
        TinySample {
            noisy: j,
            condition: cond,
            hazy: hz.into_field(),
            tmap: tmap.as_field().clone(),
            gamma: schedule.gamma(t),
            step: t,
        },
        eps,
    ))
}

/// Trains on the mean L1 noise loss; returns the model and the per-step
/// batch-mean loss trace.
pub fn train_toy(
    dataset: &[HazeScene],
    mut model: TinyDenoiser,
    schedule: &NoiseSchedule,
    pist: &PistParams,
    config: &TrainConfig,
) -> Result<(TinyDenoiser, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::param("training dataset is empty"));
    }
    config.validate()?;
    if model.config().pist != *pist {
        return Err(Error::param("model was built for different PIST parameters"));
    }
    if schedule.steps() != pist.steps {
        return Err(Error::shape("schedule length", pist.steps, schedule.steps()));
    }
    if dataset.iter().any(|s| s.clear.channels() != 3) {
        return Err(Error::param("toy training needs RGB scenes"));
    }
    let scenes: Vec<(HazeScene, PixelImage)> =
        dataset.iter().map(|s| (s.clone(), s.hazy())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.num_params(), config.lr);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        adam.set_lr(cosine_lr(config.lr, step, config.steps));
        let batch = (0..config.batch)
            .map(|_| draw_sample(&scenes, schedule, pist, config.patch, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let results = batch
            .par_iter()
            .map(|(s, eps)| model.loss_and_grad(s, eps))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = vec![0.0; model.num_params()];
        let mut loss = 0.0;
        for (l, g) in results {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let n = config.batch as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        adam.step(model.params_mut(), &grad);
        losses.push(loss / n);
    }
    Ok((model, losses))
}

/// Cosine decay from `base` to `base / 10` over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let phase = step as f64 / total.max(1) as f64 * std::f64::consts::PI;
    base * (0.1 + 0.45 * (1.0 + phase.cos()))
}

/// `step,loss` rows with the loss printed in round-trip precision.
pub fn loss_trace_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l:?}\n", i + 1));
    }
    out
}

/// Mean of the first and last `window` entries.
pub fn running_mean_ratio(losses: &[f64], window: usize) -> Option<(f64, f64)> {
    if window == 0 || losses.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..window]), mean(&losses[losses.len() - window..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazesynth::make_toy_dataset;
    use crate::sampler::tiny::TinyConfig;

    fn setup() -> (Vec<HazeScene>, NoiseSchedule, PistParams, TinyDenoiser) {
        let scenes = make_toy_dataset(2, 16, 3).unwrap();
        let pist = PistParams::default();
        let model = TinyDenoiser::new(TinyConfig::default(), 1).unwrap();
        (scenes, NoiseSchedule::default(), pist, model)
    }

    #[test]
    fn zero_steps_keeps_parameters() {
        let (scenes, sched, pist, model) = setup();
        let cfg = TrainConfig { steps: 0, patch: 8, ..Default::default() };
        let (trained, losses) = train_toy(&scenes, model.clone(), &sched, &pist, &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(losses.is_empty());
    }

    #[test]
    fn seeded_runs_repeat() {
        let (scenes, sched, pist, model) = setup();
        let cfg = TrainConfig { steps: 5, patch: 8, seed: 9, ..Default::default() };
        let a = train_toy(&scenes, model.clone(), &sched, &pist, &cfg).unwrap();
        let b = train_toy(&scenes, model.clone(), &sched, &pist, &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert_ne!(a.0, model);
        let other = TrainConfig { seed: 10, ..cfg };
        assert_ne!(train_toy(&scenes, model, &sched, &pist, &other).unwrap().1, a.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (scenes, sched, pist, model) = setup();
        let cfg = TrainConfig { steps: 1, patch: 8, ..Default::default() };
        assert!(train_toy(&[], model.clone(), &sched, &pist, &cfg).is_err());
        let big = TrainConfig { patch: 32, ..cfg };
        assert!(train_toy(&scenes, model.clone(), &sched, &pist, &big).is_err());
        let other = PistParams { a: 0.01, ..pist };
        assert!(train_toy(&scenes, model, &sched, &other, &cfg).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn trace_format() {
        assert_eq!(loss_trace_csv(&[0.5, 0.25]), "step,loss\n1,0.5\n2,0.25\n");
        assert_eq!(running_mean_ratio(&[4.0, 2.0, 1.0], 1), Some((4.0, 1.0)));
        assert_eq!(running_mean_ratio(&[1.0], 2), None);
    }
}
