//! PSNR and SSIM on `[0, 1]` images.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::filters::grayscale;
use crate::image::PixelImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR in dB; identical images report [`Psnr::Infinite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn from_db(v: f64) -> Self {
        if v.is_infinite() {
            Psnr::Infinite
        } else {
            Psnr::Finite(v)
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad psnr {t:?}"))),
        }
    }
}

fn same_shape(a: &PixelImage, b: &PixelImage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape("compared image", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &PixelImage, b: &PixelImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `-10 log10(MSE)` with peak value 1, over all channels.
pub fn psnr(a: &PixelImage, b: &PixelImage) -> Result<Psnr> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(-10.0 * m.log10())
    })
}

fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-mode separable filtering: output is `(h - n + 1) x (w - n + 1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on luma, Gaussian window 11x11 with sigma 1.5, valid positions only.
pub fn ssim(a: &PixelImage, b: &PixelImage) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::param(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (ga, gb) = (grayscale(a), grayscale(b));
    let (x, y) = (ga.data(), gb.data());
    let taps = ssim_taps();
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<_>>();
    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &taps);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &taps);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &taps);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: Psnr,
    pub ssim: f64,
}

pub fn evaluate(reference: &PixelImage, test: &PixelImage) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(reference, test)?,
        ssim: ssim(reference, test)?,
    })
}
