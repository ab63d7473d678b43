//! Noise-predictor contract and the non-learned backends.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage};
use crate::pist::{pist_weight, PistParams};
use crate::transmission::TransmissionMap;

/// Everything a denoiser sees for one patch at one step.
///
/// `noisy`, `condition` and `hazy` form the conditioning stack; `gamma` is
/// the continuous noise level at the patch's (possibly shifted) step `step`.
/// `tmap` and `origin` locate the patch and carry its haze prior.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserInput<'a> {
    pub noisy: &'a FieldImage,
    pub condition: &'a FieldImage,
    pub hazy: &'a PixelImage,
    pub tmap: &'a TransmissionMap,
    pub gamma: f64,
    pub step: usize,
    pub origin: (usize, usize),
}

/// Maps a noisy patch plus its conditioning to a noise estimate of the same shape.
///
/// Implementations must be free of observable side effects: the sampler may
/// call them concurrently and in any order within a step.
pub trait Denoiser: Sync {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<FieldImage>;
}

/// Returns the exact noise implied by the ground-truth scene.
///
/// Inverts the forward corruption: `eps = (J - sqrt(gamma) U) / sqrt(1 - gamma)`,
/// with `U` the intermediate target built from the stored clear image.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    clear: FieldImage,
    tmap: TransmissionMap,
    pist: PistParams,
}

impl OracleDenoiser {
    pub fn new(clear: &PixelImage, tmap: &TransmissionMap, pist: PistParams) -> Result<Self> {
        tmap.ensure_matches(clear.shape(), "oracle transmission map")?;
        pist.validate()?;
        Ok(OracleDenoiser {
            clear: clear.as_field().clone(),
            tmap: tmap.clone(),
            pist,
        })
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<FieldImage> {
        let shape = input.noisy.shape();
        let (r, c) = input.origin;
        let clear = self.clear.crop(r, c, shape.height, shape.width)?;
        let tmap = self.tmap.crop(r, c, shape.height, shape.width)?;
        clear.ensure_same_shape(input.noisy, "oracle patch")?;
        let (s, n) = (input.gamma.sqrt(), (1.0 - input.gamma).sqrt());
        if n == 0.0 {
            return Err(Error::Denoiser("oracle called at zero noise level".into()));
        }
        let ch = shape.channels;
        let hazy = input.hazy.data();
        let mut out = FieldImage::zeros_like(input.noisy);
        let noisy = input.noisy.data();
        let data = out.data_mut();
        for (p, &tau) in tmap.values().iter().enumerate() {
            let w = pist_weight(input.step, tau, &self.pist);
            for k in p * ch..(p + 1) * ch {
                let u = w * clear.data()[k] + (1.0 - w) * hazy[k];
                data[k] = (noisy[k] - s * u) / n;
            }
        }
        Ok(out)
    }
}

/// Predicts zero noise everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<FieldImage> {
        Ok(FieldImage::zeros_like(input.noisy))
    }
}

/// One request line of the external-process protocol.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub gamma: f64,
    pub step: usize,
    pub origin: (usize, usize),
    pub noisy: Vec<f64>,
    pub condition: Vec<f64>,
    pub hazy: Vec<f64>,
    pub tmap: Vec<f64>,
}

/// One response line: the noise estimate in the request's layout.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub eps: Vec<f64>,
}

impl ExternalRequest {
    pub fn from_input(input: &DenoiserInput<'_>) -> Self {
        let shape = input.noisy.shape();
        ExternalRequest {
            height: shape.height,
            width: shape.width,
            channels: shape.channels,
            gamma: input.gamma,
            step: input.step,
            origin: input.origin,
            noisy: input.noisy.data().to_vec(),
            condition: input.condition.data().to_vec(),
            hazy: input.hazy.data().to_vec(),
            tmap: input.tmap.values().to_vec(),
        }
    }
}

struct ExternalIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Denoiser served by a child process speaking JSON lines on stdin/stdout.
///
/// Each request is one [`ExternalRequest`] line; the process answers with one
/// [`ExternalResponse`] line. Calls are serialised through a mutex.
pub struct ExternalDenoiser {
    io: Mutex<ExternalIo>,
}

impl ExternalDenoiser {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Denoiser(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalDenoiser {
            io: Mutex::new(ExternalIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<FieldImage> {
        let request = ExternalRequest::from_input(input);
        let mut line = serde_json::to_string(&request)
            .map_err(|e| Error::Denoiser(format!("encode request: {e}")))?;
        line.push('\n');
        let mut io = self.io.lock().map_err(|_| Error::Denoiser("poisoned".into()))?;
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.flush())
            .map_err(|e| Error::Denoiser(format!("write request: {e}")))?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Denoiser(format!("read response: {e}")))?;
        if n == 0 {
            return Err(Error::Denoiser("external denoiser closed its output".into()));
        }
        let response: ExternalResponse = serde_json::from_str(&reply)
            .map_err(|e| Error::Denoiser(format!("decode response: {e}")))?;
        let shape = input.noisy.shape();
        FieldImage::new(shape.height, shape.width, shape.channels, response.eps)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
