//! Physics-guided patch diffusion dehazing.
//!
//! The crate covers the full pipeline: dark-channel transmission estimation
//! with sky preservation ([`transmission`]), atmospheric haze synthesis
//! ([`hazesynth`]), the transmission-aware diffusion schedule ([`pist`]),
//! overlapping patch blending ([`patches`]), per-patch timestep retargeting
//! ([`hadtp`]), the reverse-diffusion sampler with pluggable denoisers
//! ([`sampler`]) and quality metrics ([`metrics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filters;
pub mod hadtp;
pub mod hazesynth;
pub mod image;
pub mod io;
pub mod metrics;
pub mod patches;
pub mod pist;
pub mod sampler;
pub mod transmission;

pub use error::{Error, Result};
pub use hadtp::{EnhancedCondition, HadtpParams};
pub use hazesynth::HazeScene;
pub use image::{FieldImage, PixelImage, Shape};
pub use metrics::{Psnr, QualityReport};
pub use patches::{PatchGrid, PatchWeights};
pub use pist::{NoiseSchedule, PistParams};
pub use sampler::{
    Denoiser, DenoiserInput, OracleDenoiser, SamplerConfig, TinyConfig, TinyDenoiser, TrainConfig,
};
pub use transmission::{DcpParams, SkyMask, TransmissionMap};
