//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use hazediff_core::hadtp::HadtpParams;
use hazediff_core::pist::{PistParams, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use hazediff_core::sampler::{SamplerConfig, TinyConfig, TrainConfig};
use hazediff_core::transmission::DcpParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PistSection {
    pub a: f64,
}

impl Default for PistSection {
    fn default() -> Self {
        PistSection {
            a: PistParams::default().a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub patch: usize,
    pub stride: usize,
    /// Reverse steps actually taken; absent means all of them.
    pub sampling_steps: Option<usize>,
    pub deterministic: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSection {
            patch: d.patch,
            stride: d.stride,
            sampling_steps: None,
            deterministic: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub scenes: usize,
    pub size: usize,
    pub steps: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub base: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            scenes: 16,
            size: 64,
            steps: t.steps,
            batch: t.batch,
            patch: t.patch,
            lr: t.lr,
            base: TinyConfig::default().base,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dcp: DcpParams,
    pub schedule: ScheduleSection,
    pub pist: PistSection,
    pub hadtp: HadtpParams,
    pub sampler: SamplerSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn pist(&self) -> PistParams {
        PistParams {
            a: self.pist.a,
            steps: self.schedule.steps,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            patch: self.sampler.patch,
            stride: self.sampler.stride,
            beta_start: self.schedule.beta_start,
            beta_end: self.schedule.beta_end,
            sampling_steps: self.sampler.sampling_steps,
            pist: self.pist(),
            hadtp: self.hadtp,
            deterministic: self.sampler.deterministic,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            seed: self.seed,
            batch: self.train.batch,
            patch: self.train.patch,
            lr: self.train.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dcp.validate()?;
        self.sampler().validate()?;
        self.sampler().schedule()?;
        self.train().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let d = RunConfig::default().sampler();
        assert_eq!((d.patch, d.stride, d.pist.steps), (64, 16, 1000));
    }

    #[test]
    fn sections_override_and_unknown_keys_fail() {
        let cfg = RunConfig::parse(
            "seed = 4\n[sampler]\npatch = 32\nstride = 8\n[hadtp]\nkappa = 0.5\n[dcp]\nomega = 0.9\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.sampler().patch, 32);
        assert_eq!(cfg.hadtp.kappa, 0.5);
        assert_eq!(cfg.dcp.omega, 0.9);
        assert!(RunConfig::parse("[sampler]\npatchsize = 3\n").is_err());
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn validation_catches_ranges() {
        let mut cfg = RunConfig::default();
        cfg.sampler.stride = 64;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.dcp.omega = 1.5;
        assert!(cfg.validate().is_err());
    }
}
