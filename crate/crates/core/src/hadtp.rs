//! Haze-aware per-patch timestep retargeting.
//!
//! The reference predictor shifts a patch's timestep by how much denser its
//! haze is than the image average, and builds the enhanced condition as a
//! transmission-weighted blend: clear regions draw on the current diffusion
//! state, dense regions on the hazy input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage};
use crate::pist::NoiseSchedule;
use crate::transmission::TransmissionMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HadtpParams {
    /// Offset gain.
    pub kappa: f64,
    pub enabled: bool,
}

impl Default for HadtpParams {
    fn default() -> Self {
        HadtpParams {
            kappa: 0.25,
            enabled: true,
        }
    }
}

impl HadtpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::param(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Conditioning input built from the diffusion state and the hazy patch.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedCondition(pub FieldImage);

impl EnhancedCondition {
    pub fn as_field(&self) -> &FieldImage {
        &self.0
    }

    pub fn into_field(self) -> FieldImage {
        self.0
    }
}

/// `C = tau * J_t + (1 - tau) * I` per pixel.
pub fn enhance_condition(
    j_t: &FieldImage,
    hazy: &PixelImage,
    tmap: &TransmissionMap,
) -> Result<EnhancedCondition> {
    j_t.ensure_same_shape(hazy.as_field(), "hazy patch")?;
    tmap.ensure_matches(j_t.shape(), "transmission patch")?;
    let c = j_t.channels();
    let (jd, hd) = (j_t.data(), hazy.data());
    let mut data = Vec::with_capacity(jd.len());
    for (p, &tau) in tmap.values().iter().enumerate() {
        for k in p * c..(p + 1) * c {
            data.push(if tau == 1.0 {
                jd[k]
            } else if tau == 0.0 {
                hd[k]
            } else {
                tau * jd[k] + (1.0 - tau) * hd[k]
            });
        }
    }
    Ok(EnhancedCondition(FieldImage::from_parts(j_t.shape(), data)))
}

/// Signed timestep offset for one patch.
///
/// `round(kappa * t * (global_mean - patch_mean))`, clamped so that the
/// shifted step stays in `[1, T]` whenever `t >= 1`.
pub fn predict_offset(
    tmap_patch: &TransmissionMap,
    global_mean: f64,
    t: usize,
    total_steps: usize,
    params: &HadtpParams,
) -> i64 {
    if !params.enabled || t == 0 {
        return 0;
    }
    let deficit = global_mean - tmap_patch.mean();
    let raw = (params.kappa * t as f64 * deficit).round() as i64;
    let t = t as i64;
    raw.clamp(1 - t, total_steps as i64 - t)
}

/// `gamma` at the shifted step `t + dt`.
pub fn effective_gamma(t: usize, dt: i64, schedule: &NoiseSchedule) -> f64 {
    let shifted = t as i64 + dt;
    assert!(
        shifted >= 1 && shifted <= schedule.steps() as i64,
        "shifted step {shifted} outside 1..={}",
        schedule.steps()
    );
    schedule.gamma(shifted as usize)
}

/// Replaceable per-patch timestep predictor.
pub trait TimestepPredictor: Sync {
    fn offset(&self, tmap_patch: &TransmissionMap, global_mean: f64, t: usize, total_steps: usize)
        -> i64;
}

impl TimestepPredictor for HadtpParams {
    fn offset(
        &self,
        tmap_patch: &TransmissionMap,
        global_mean: f64,
        t: usize,
        total_steps: usize,
    ) -> i64 {
        predict_offset(tmap_patch, global_mean, t, total_steps, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_cases() {
        let j = FieldImage::filled(2, 2, 3, 0.2);
        let hazy = PixelImage::filled(2, 2, 3, 0.6).unwrap();
        let one = TransmissionMap::uniform(2, 2, 1.0).unwrap();
        let zero = TransmissionMap::uniform(2, 2, 0.0).unwrap();
        let half = TransmissionMap::uniform(2, 2, 0.5).unwrap();
        assert_eq!(enhance_condition(&j, &hazy, &one).unwrap().0, j);
        assert_eq!(enhance_condition(&j, &hazy, &zero).unwrap().0, hazy.as_field().clone());
        let c = enhance_condition(&j, &hazy, &half).unwrap();
        assert!(c.0.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let bad = TransmissionMap::uniform(3, 2, 0.5).unwrap();
        assert!(enhance_condition(&j, &hazy, &bad).is_err());
    }

    #[test]
    fn offset_cases() {
        let p = HadtpParams::default();
        let patch = TransmissionMap::uniform(4, 4, 0.2).unwrap();
        assert_eq!(predict_offset(&patch, 0.6, 500, 1000, &p), 50);
        assert_eq!(predict_offset(&patch, 0.2, 500, 1000, &p), 0);
        let off = HadtpParams { enabled: false, ..p };
        assert_eq!(predict_offset(&patch, 0.9, 500, 1000, &off), 0);
        // Clearer than average: step moves down.
        let clear = TransmissionMap::uniform(4, 4, 0.9).unwrap();
        assert!(predict_offset(&clear, 0.5, 500, 1000, &p) < 0);
    }

    #[test]
    fn offsets_stay_in_range() {
        let t_max = 64;
        let p = HadtpParams { kappa: 5.0, enabled: true };
        for mean in [0.0, 0.1, 0.5, 0.95, 1.0] {
            let patch = TransmissionMap::uniform(2, 2, mean).unwrap();
            for global in [0.0, 0.3, 0.7, 1.0] {
                for t in 1..=t_max {
                    let dt = predict_offset(&patch, global, t, t_max, &p);
                    let shifted = t as i64 + dt;
                    assert!((1..=t_max as i64).contains(&shifted));
                }
            }
        }
    }

    #[test]
    fn gamma_lookup() {
        let s = NoiseSchedule::default();
        assert_eq!(effective_gamma(300, 0, &s), s.gamma(300));
        assert!(effective_gamma(300, 1, &s) < effective_gamma(300, 0, &s));
        let recomputed: f64 = (1..=320).map(|t| s.alpha(t)).product();
        assert!((effective_gamma(300, 20, &s) - recomputed).abs() < 1e-12);
    }
}
