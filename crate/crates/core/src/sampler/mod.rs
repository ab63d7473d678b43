//! Patch-wise reverse diffusion with per-patch timestep retargeting.
//!
//! Each step plans nothing new: the patch grid and weights are fixed up front.
//! Per patch the predictor picks an offset, the enhanced condition is built
//! and the denoiser runs (in parallel, collected in grid order). When every
//! offset is zero the noise estimates are blended and one full-image update is
//! applied; otherwise each patch is updated on its own schedule and the
//! updated states are blended with the same weights.

pub mod denoiser;
pub mod gradcheck;
pub mod model_io;
pub mod tiny;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadtp::{enhance_condition, HadtpParams, TimestepPredictor};
use crate::image::{FieldImage, PixelImage};
use crate::patches::{aggregate_fields, make_uniform_weights, plan_patches, PatchGrid};
use crate::pist::{
    forward_with_gamma, reverse_update, NoiseSchedule, PistParams, DEFAULT_BETA_END,
    DEFAULT_BETA_START,
};
use crate::transmission::TransmissionMap;

pub use denoiser::{
    Denoiser, DenoiserInput, ExternalDenoiser, ExternalRequest, ExternalResponse, OracleDenoiser,
    ZeroDenoiser,
};
pub use tiny::{TinyConfig, TinyDenoiser, TinySample};
pub use train::{train_toy, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub patch: usize,
    pub stride: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Number of reverse steps; `None` runs all `T`.
    pub sampling_steps: Option<usize>,
    pub pist: PistParams,
    pub hadtp: HadtpParams,
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            patch: 64,
            stride: 16,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            sampling_steps: None,
            pist: PistParams::default(),
            hadtp: HadtpParams::default(),
            deterministic: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride >= self.patch {
            return Err(Error::param(format!(
                "need 1 <= stride < patch, got patch {}, stride {}",
                self.patch, self.stride
            )));
        }
        if self.sampling_steps == Some(0) {
            return Err(Error::param("sampling steps must be >= 1"));
        }
        self.pist.validate()?;
        self.hadtp.validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.pist.steps, self.beta_start, self.beta_end)
    }
}

/// Evenly spaced descending steps from `total` to 1.
pub fn timestep_sequence(total: usize, sampling: usize) -> Result<Vec<usize>> {
    if total == 0 || sampling == 0 {
        return Err(Error::param("step counts must be >= 1"));
    }
    let s = sampling.min(total);
    if s == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as f64;
    Ok((0..s)
        .map(|k| total - (span * k as f64 / (s - 1) as f64).round() as usize)
        .collect())
}

fn gamma_at(schedule: &NoiseSchedule, t: usize) -> f64 {
    if t == 0 {
        1.0
    } else {
        schedule.gamma(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergePath {
    /// Noise estimates blended, one full-image update.
    Noise,
    /// Per-patch updates, states blended.
    State,
}

impl MergePath {
    pub fn as_str(self) -> &'static str {
        match self {
            MergePath::Noise => "noise",
            MergePath::State => "state",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub dt: i64,
    pub t_hat: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub t_prev: usize,
    pub path: MergePath,
    pub patches: Vec<PatchRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerTrace {
    pub grid: PatchGrid,
    pub tau_means: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl SamplerTrace {
    /// One row per patch per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t,t_prev,path,patch,row,col,tau_mean,dt,t_hat\n");
        for (k, step) in self.steps.iter().enumerate() {
            for (i, rec) in step.patches.iter().enumerate() {
                let (r, c) = self.grid.origins[i];
                out.push_str(&format!(
                    "{k},{},{},{},{i},{r},{c},{:?},{},{}\n",
                    step.t,
                    step.t_prev,
                    step.path.as_str(),
                    self.tau_means[i],
                    rec.dt,
                    rec.t_hat
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DehazeOutput {
    pub image: PixelImage,
    pub trace: SamplerTrace,
}

fn standard_normal(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> FieldImage {
    FieldImage::from_fn(h, w, c, |_, _, _| StandardNormal.sample(rng))
}

/// Runs the sampler with the configured haze-aware predictor.
pub fn dehaze(
    hazy: &PixelImage,
    tmap: &TransmissionMap,
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
) -> Result<DehazeOutput> {
    dehaze_with(hazy, tmap, denoiser, &config.hadtp, config)
}

/// Runs the sampler with an explicit timestep predictor.
///
/// Starts from `J_T = sqrt(gamma_T) I + sqrt(1 - gamma_T) eps` and returns
/// `J_0` clamped to `[0, 1]`.
pub fn dehaze_with(
    hazy: &PixelImage,
    tmap: &TransmissionMap,
    denoiser: &dyn Denoiser,
    predictor: &dyn TimestepPredictor,
    config: &SamplerConfig,
) -> Result<DehazeOutput> {
    config.validate()?;
    tmap.ensure_matches(hazy.shape(), "transmission map")?;
    let schedule = config.schedule()?;
    let total = schedule.steps();
    let (h, w, ch) = (hazy.height(), hazy.width(), hazy.channels());
    let grid = plan_patches(h, w, config.patch, config.stride)?;
    let weights = make_uniform_weights(&grid);
    let p = grid.patch;
    let crops = grid
        .origins
        .iter()
        .map(|&(r, c)| Ok((hazy.crop(r, c, p, p)?, tmap.crop(r, c, p, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let tau_means: Vec<f64> = crops.iter().map(|(_, t)| t.mean()).collect();
    let global_mean = tmap.mean();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = standard_normal(h, w, ch, &mut rng);
    let mut state = forward_with_gamma(hazy.as_field(), schedule.gamma(total), &init)?;

    let sequence = timestep_sequence(total, config.sampling_steps.unwrap_or(total))?;
    let mut records = Vec::with_capacity(sequence.len());
    for (k, &t) in sequence.iter().enumerate() {
        let t_prev = sequence.get(k + 1).copied().unwrap_or(0);
        let mut patches = Vec::with_capacity(grid.len());
        for (_, tm) in &crops {
            let dt = predictor.offset(tm, global_mean, t, total);
            let shifted = t as i64 + dt;
            if shifted < 1 || shifted > total as i64 {
                return Err(Error::param(format!(
                    "predictor moved step {t} by {dt}, outside 1..={total}"
                )));
            }
            patches.push(PatchRecord {
                dt,
                t_hat: shifted as usize,
            });
        }
        let injected = (!config.deterministic).then(|| standard_normal(h, w, ch, &mut rng));

        let jobs: Vec<(usize, &PatchRecord)> = patches.iter().enumerate().collect();
        let evaluated = jobs
            .par_iter()
            .map(|&(i, rec)| -> Result<(FieldImage, FieldImage)> {
                let (r, c) = grid.origins[i];
                let (hz, tm) = &crops[i];
                let noisy = state.crop(r, c, p, p)?;
                let cond = enhance_condition(&noisy, hz, tm)?;
                let eps = denoiser.predict_noise(&DenoiserInput {
                    noisy: &noisy,
                    condition: cond.as_field(),
                    hazy: hz,
                    tmap: tm,
                    gamma: schedule.gamma(rec.t_hat),
                    step: rec.t_hat,
                    origin: (r, c),
                })?;
                if eps.shape() != noisy.shape() {
                    return Err(Error::shape("denoiser output", noisy.shape(), eps.shape()));
                }
                if eps.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Denoiser("denoiser produced a non-finite value".into()));
                }
                Ok((noisy, eps))
            })
            .collect::<Result<Vec<_>>>()?;

        let path = if patches.iter().all(|r| r.dt == 0) {
            MergePath::Noise
        } else {
            MergePath::State
        };
        state = match path {
            MergePath::Noise => {
                let eps: Vec<&FieldImage> = evaluated.iter().map(|(_, e)| e).collect();
                let eps_bar = aggregate_fields(&eps, &grid, &weights)?;
                let gamma = schedule.gamma(t);
                let alpha = gamma / gamma_at(&schedule, t_prev);
                reverse_update(&state, &eps_bar, alpha, gamma, injected.as_ref())?
            }
            MergePath::State => {
                let updated = evaluated
                    .iter()
                    .zip(&patches)
                    .zip(&grid.origins)
                    .map(|(((noisy, eps), rec), &(r, c))| {
                        let hat_prev = if t_prev == 0 {
                            0
                        } else {
                            (rec.t_hat as i64 - (t - t_prev) as i64).clamp(1, rec.t_hat as i64)
                                as usize
                        };
                        let gamma = schedule.gamma(rec.t_hat);
                        let alpha = gamma / gamma_at(&schedule, hat_prev);
                        let z = injected.as_ref().map(|z| z.crop(r, c, p, p)).transpose()?;
                        reverse_update(noisy, eps, alpha, gamma, z.as_ref())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&FieldImage> = updated.iter().collect();
                aggregate_fields(&refs, &grid, &weights)?
            }
        };
        records.push(StepRecord {
            t,
            t_prev,
            path,
            patches,
        });
    }
    Ok(DehazeOutput {
        image: state.to_pixel_clamped(),
        trace: SamplerTrace {
            grid,
            tau_means,
            steps: records,
        },
    })
}
