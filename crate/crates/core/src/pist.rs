//! Physics-guided intermediate targets and the diffusion schedule.
//!
//! The diffusion target at step `t` is not the clear image but
//! `U_t = W J_0 + (1 - W) I`, where the weight
//! `W(t, tau) = cos(t / T * pi / 2) * exp(-a t tau)` slides from the clear
//! image (`t = 0`) to the hazy image (`t = T`) and moves faster where the
//! transmission `tau` is high. The forward process corrupts `U_t` with the
//! usual variance-preserving noise, and the reverse update is the standard
//! ancestral step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage};
use crate::transmission::TransmissionMap;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Per-step retention `alpha_t` and cumulative `gamma_t`, with `gamma_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    gammas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    let f = i as f64 / (steps - 1) as f64;
                    beta_start * (1.0 - f) + beta_end * f
                }
            })
            .collect::<Vec<_>>();
        Self::from_betas(&betas)
    }

    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut gammas = Vec::with_capacity(alphas.len() + 1);
        gammas.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            gammas.push(acc);
        }
        Ok(NoiseSchedule {
            betas: betas.to_vec(),
            alphas,
            gammas,
        })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    /// `alpha_t` for `1 <= t <= T`.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "step {t} outside 1..={}", self.steps());
        self.alphas[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "step {t} outside 1..={}", self.steps());
        self.betas[t - 1]
    }

    /// `gamma_t` for `0 <= t <= T`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PistParams {
    /// Transition-rate hyperparameter of the exponential factor.
    pub a: f64,
    /// Total diffusion steps `T`.
    pub steps: usize,
}

impl Default for PistParams {
    fn default() -> Self {
        PistParams {
            a: 0.002,
            steps: DEFAULT_STEPS,
        }
    }
}

impl PistParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::param(format!("pist a must be >= 0, got {}", self.a)));
        }
        if self.steps == 0 {
            return Err(Error::param("pist steps must be >= 1"));
        }
        Ok(())
    }
}

/// `W(t, tau) = cos(t / T * pi / 2) * exp(-a * t * tau)`.
pub fn pist_weight(t: usize, tau: f64, params: &PistParams) -> f64 {
    if t >= params.steps {
        // cos(pi/2) is not exactly zero in floating point.
        return 0.0;
    }
    let phase = t as f64 / params.steps as f64 * std::f64::consts::FRAC_PI_2;
    phase.cos() * (-params.a * t as f64 * tau).exp()
}

/// `U_t = W J_0 + (1 - W) I` with a per-pixel weight from the transmission map.
pub fn intermediate_state(
    clear: &FieldImage,
    hazy: &PixelImage,
    tmap: &TransmissionMap,
    t: usize,
    params: &PistParams,
) -> Result<FieldImage> {
    clear.ensure_same_shape(hazy.as_field(), "hazy image")?;
    tmap.ensure_matches(clear.shape(), "transmission map")?;
    if t > params.steps {
        return Err(Error::param(format!("step {t} beyond T = {}", params.steps)));
    }
    let c = clear.channels();
    let mut out = FieldImage::zeros_like(clear);
    let (cd, hd) = (clear.data(), hazy.data());
    for (p, &tau) in tmap.values().iter().enumerate() {
        let w = pist_weight(t, tau, params);
        for k in p * c..(p + 1) * c {
            out.data_mut()[k] = if w == 1.0 {
                cd[k]
            } else if w == 0.0 {
                hd[k]
            } else {
                w * cd[k] + (1.0 - w) * hd[k]
            };
        }
    }
    Ok(out)
}

/// `J_t = sqrt(gamma) U + sqrt(1 - gamma) noise` at an explicit noise level.
pub fn forward_with_gamma(u: &FieldImage, gamma: f64, noise: &FieldImage) -> Result<FieldImage> {
    u.ensure_same_shape(noise, "noise field")?;
    let (s, n) = (gamma.sqrt(), (1.0 - gamma).sqrt());
    let data = u
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&u, &e)| s * u + n * e)
        .collect();
    Ok(FieldImage::from_parts(u.shape(), data))
}

pub fn forward_sample(
    u: &FieldImage,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &FieldImage,
) -> Result<FieldImage> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::param(format!(
            "forward step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    forward_with_gamma(u, schedule.gamma(t), noise)
}

/// Ancestral update with explicit coefficients:
/// `(J - (1 - alpha) / sqrt(1 - gamma) * eps) / sqrt(alpha) + sqrt(1 - alpha) * z`.
///
/// `injected = None` is the deterministic mode (`z = 0`).
pub fn reverse_update(
    j_t: &FieldImage,
    eps_hat: &FieldImage,
    alpha: f64,
    gamma: f64,
    injected: Option<&FieldImage>,
) -> Result<FieldImage> {
    j_t.ensure_same_shape(eps_hat, "noise estimate")?;
    if let Some(z) = injected {
        j_t.ensure_same_shape(z, "injected noise")?;
    }
    if !(alpha > 0.0 && alpha <= 1.0) || !(0.0..1.0).contains(&gamma) {
        return Err(Error::param(format!(
            "reverse coefficients alpha={alpha}, gamma={gamma} out of range"
        )));
    }
    let coef = (1.0 - alpha) / (1.0 - gamma).sqrt();
    let sqrt_alpha = alpha.sqrt();
    let sigma = (1.0 - alpha).sqrt();
    let mut out: Vec<f64> = j_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&j, &e)| (j - coef * e) / sqrt_alpha)
        .collect();
    if let Some(z) = injected {
        out.iter_mut().zip(z.data()).for_each(|(o, &z)| *o += sigma * z);
    }
    Ok(FieldImage::from_parts(j_t.shape(), out))
}

/// One reverse step from `t` to `t - 1` using the schedule's coefficients.
pub fn reverse_step(
    j_t: &FieldImage,
    eps_hat: &FieldImage,
    t: usize,
    schedule: &NoiseSchedule,
    injected: Option<&FieldImage>,
) -> Result<FieldImage> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::param(format!(
            "reverse step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    reverse_update(j_t, eps_hat, schedule.alpha(t), schedule.gamma(t), injected)
}

/// Mean absolute error between predicted and true noise.
pub fn pist_loss(eps_hat: &FieldImage, eps_true: &FieldImage) -> Result<f64> {
    eps_hat.ensure_same_shape(eps_true, "true noise")?;
    let sum: f64 = eps_hat
        .data()
        .iter()
        .zip(eps_true.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / eps_hat.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_cases() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha(1), 0.5);
        assert_eq!(s.gamma(1), 0.5);
        assert_eq!(s.gamma(0), 1.0);

        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let expect = [0.9, 0.9 * 0.8, 0.9 * 0.8 * 0.7, 0.9 * 0.8 * 0.7 * 0.6];
        for (t, g) in expect.iter().enumerate() {
            assert!((s.gamma(t + 1) - g).abs() < 1e-15);
        }

        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!(s.gamma(1000) < s.gamma(1));
        for t in 1..=1000 {
            assert!(s.gamma(t) < s.gamma(t - 1));
            assert!((s.gamma(t) - s.gamma(t - 1) * s.alpha(t)).abs() < 1e-12);
            assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
        }

        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(4, 0.1, 1.0).is_err());
    }

    #[test]
    fn weight_cases() {
        let p = PistParams::default();
        assert_eq!(pist_weight(0, 0.3, &p), 1.0);
        assert_eq!(pist_weight(1000, 0.3, &p), 0.0);
        let flat = PistParams { a: 0.0, steps: 1000 };
        assert!((pist_weight(500, 0.0, &flat) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((pist_weight(500, 0.5, &p) - 0.428_881_942_7).abs() < 1e-9);
        for t in 0..=1000 {
            assert_eq!(pist_weight(t, 0.1, &flat), pist_weight(t, 0.9, &flat));
        }
    }

    #[test]
    fn intermediate_state_endpoints() {
        let p = PistParams { a: 0.002, steps: 10 };
        let clear = FieldImage::filled(2, 2, 3, 0.2);
        let hazy = PixelImage::filled(2, 2, 3, 0.8).unwrap();
        let tmap = TransmissionMap::uniform(2, 2, 0.4).unwrap();
        assert_eq!(intermediate_state(&clear, &hazy, &tmap, 0, &p).unwrap(), clear);
        assert_eq!(
            intermediate_state(&clear, &hazy, &tmap, 10, &p).unwrap(),
            hazy.as_field().clone()
        );
        let mid = intermediate_state(&clear, &hazy, &tmap, 5, &p).unwrap();
        let w = pist_weight(5, 0.4, &p);
        assert!(mid.data().iter().all(|&u| (u - (w * 0.2 + (1.0 - w) * 0.8)).abs() < 1e-15));
        let bad = TransmissionMap::uniform(3, 2, 0.4).unwrap();
        assert!(intermediate_state(&clear, &hazy, &bad, 1, &p).is_err());
    }

    #[test]
    fn forward_cases() {
        let u = FieldImage::filled(2, 2, 1, 0.5);
        let s = NoiseSchedule::from_betas(&[0.36]).unwrap();
        let out = forward_sample(&u, 1, &s, &FieldImage::filled(2, 2, 1, 1.0)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let out = forward_sample(&u, 1, &s, &FieldImage::zeros(2, 2, 1)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));

        let tiny = NoiseSchedule::from_betas(&[1e-10]).unwrap();
        let noise = FieldImage::filled(2, 2, 1, -2.0);
        let out = forward_sample(&u, 1, &tiny, &noise).unwrap();
        let bound = (1.0 - tiny.gamma(1)).sqrt() * 2.0 + 1e-9;
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() <= bound));

        assert!(forward_sample(&u, 0, &s, &noise).is_err());
        assert!(forward_sample(&u, 1, &s, &FieldImage::zeros(1, 2, 1)).is_err());
    }

    #[test]
    fn reverse_scalar_example() {
        let j = FieldImage::filled(1, 1, 1, 1.0);
        let e = FieldImage::filled(1, 1, 1, 0.5);
        let out = reverse_update(&j, &e, 0.96, 0.5, None).unwrap();
        assert!((out.data()[0] - 0.991_753_212_7).abs() < 1e-9);
        let ident = reverse_update(&j, &FieldImage::zeros(1, 1, 1), 1.0 - 1e-12, 0.5, None).unwrap();
        assert!((ident.data()[0] - 1.0).abs() < 1e-9);
        let s = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        assert!(reverse_step(&j, &e, 0, &s, None).is_err());
    }

    #[test]
    fn reverse_inverts_algebraically() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = NoiseSchedule::default();
        for _ in 0..50 {
            let t = rng.random_range(1..=1000);
            let j = FieldImage::from_fn(3, 3, 3, |_, _, _| rng.random_range(-2.0..2.0));
            let e = FieldImage::from_fn(3, 3, 3, |_, _, _| rng.random_range(-2.0..2.0));
            let prev = reverse_step(&j, &e, t, &s, None).unwrap();
            let (a, g) = (s.alpha(t), s.gamma(t));
            for k in 0..j.data().len() {
                let back = prev.data()[k] * a.sqrt() + (1.0 - a) / (1.0 - g).sqrt() * e.data()[k];
                assert!((back - j.data()[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn loss_cases() {
        let a = FieldImage::filled(2, 3, 3, 0.25);
        assert_eq!(pist_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.5);
        assert!((pist_loss(&b, &a).unwrap() - 0.5).abs() < 1e-15);
        assert!(pist_loss(&a, &FieldImage::zeros(2, 3, 1)).is_err());
    }
}
