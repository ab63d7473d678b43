//! Window filters used by the transmission estimator and the metrics.
//!
//! Every window operation replicates edge pixels outside the image, so a
//! window always contains the same number of samples.

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage, Shape};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Largest Sobel magnitude reachable on a `[0, 1]` image.
pub const SOBEL_MAX: f64 = 4.0 * std::f64::consts::SQRT_2;

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn require_single_channel(shape: Shape, op: &'static str) -> Result<()> {
    if shape.channels != 1 {
        return Err(Error::shape(op, "1 channel", format!("{} channels", shape.channels)));
    }
    Ok(())
}

/// Weighted luma conversion; single-channel input is returned unchanged.
pub fn grayscale(img: &PixelImage) -> PixelImage {
    if img.channels() == 1 {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| {
            let v = LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2];
            v.clamp(0.0, 1.0)
        })
        .collect();
    PixelImage::from_field_unchecked(FieldImage::from_parts(
        Shape::new(img.height(), img.width(), 1),
        data,
    ))
}

/// Minimum over a `window x window` neighbourhood centred on each pixel.
pub fn min_filter(img: &PixelImage, window: usize) -> Result<PixelImage> {
    require_single_channel(img.shape(), "min_filter input")?;
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::param(format!(
            "min filter window must be odd and positive, got {window}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let half = (window / 2) as isize;
    let src = img.data();

    // The square min is separable: rows first, then columns.
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut m = f64::INFINITY;
            for dx in -half..=half {
                m = m.min(line[clamp_index(x as isize + dx, w)]);
            }
            rows[y * w + x] = m;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for dy in -half..=half {
                m = m.min(rows[clamp_index(y as isize + dy, h) * w + x]);
            }
            out[y * w + x] = m;
        }
    }
    Ok(PixelImage::from_field_unchecked(FieldImage::from_parts(
        img.shape(),
        out,
    )))
}

/// Gradient magnitude `sqrt(gx^2 + gy^2)` from the 3x3 Sobel pair.
pub fn sobel_magnitude(img: &PixelImage) -> Result<FieldImage> {
    require_single_channel(img.shape(), "sobel input")?;
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let at = |y: isize, x: isize| src[clamp_index(y, h) * w + clamp_index(x, w)];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(FieldImage::from_parts(img.shape(), out))
}

/// Normalised 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Runs a symmetric 1-D kernel along rows then columns of each channel.
fn separable_filter(img: &FieldImage, taps: &[f64]) -> FieldImage {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let radius = (taps.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, tap) in taps.iter().enumerate() {
                    let sx = clamp_index(x as isize + k as isize - radius, w);
                    acc += tap * src[(y * w + sx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, tap) in taps.iter().enumerate() {
                    let sy = clamp_index(y as isize + k as isize - radius, h);
                    acc += tap * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    FieldImage::from_parts(img.shape(), out)
}

/// Separable Gaussian smoothing, applied per channel.
pub fn gaussian_blur(img: &FieldImage, sigma: f64) -> Result<FieldImage> {
    let taps = gaussian_kernel(sigma)?;
    Ok(separable_filter(img, &taps))
}

/// Mean over `(2 radius + 1)^2` windows, per channel.
pub fn box_mean(img: &FieldImage, radius: usize) -> FieldImage {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = radius as isize;
    let span = (2 * radius + 1) as f64;
    let src = img.data();

    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for ch in 0..c {
            let px = |x: isize| src[(y * w + clamp_index(x, w)) * c + ch];
            let mut acc: f64 = (-r..=r).map(px).sum();
            for x in 0..w {
                tmp[(y * w + x) * c + ch] = acc;
                let xi = x as isize;
                acc += px(xi + r + 1) - px(xi - r);
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for x in 0..w {
        for ch in 0..c {
            let px = |y: isize| tmp[(clamp_index(y, h) * w + x) * c + ch];
            let mut acc: f64 = (-r..=r).map(px).sum();
            for y in 0..h {
                out[(y * w + x) * c + ch] = acc / (span * span);
                let yi = y as isize;
                acc += px(yi + r + 1) - px(yi - r);
            }
        }
    }
    FieldImage::from_parts(img.shape(), out)
}

/// Edge-preserving guided filter of `p` steered by `guide`.
///
/// Each window fits `p ~ a * guide + b` by least squares with ridge `reg`;
/// the output averages the per-window coefficients.
pub fn guided_filter(
    p: &FieldImage,
    guide: &PixelImage,
    radius: usize,
    reg: f64,
) -> Result<FieldImage> {
    require_single_channel(p.shape(), "guided filter input")?;
    require_single_channel(guide.shape(), "guided filter guide")?;
    p.ensure_same_shape(guide.as_field(), "guided filter guide")?;
    if radius == 0 {
        return Err(Error::param("guided filter radius must be >= 1"));
    }
    if !(reg > 0.0) {
        return Err(Error::param(format!(
            "guided filter regulariser must be > 0, got {reg}"
        )));
    }
    let g = guide.as_field();
    let shape = p.shape();
    let gg = FieldImage::from_parts(shape, g.data().iter().map(|v| v * v).collect());
    let gp = FieldImage::from_parts(
        shape,
        g.data().iter().zip(p.data()).map(|(a, b)| a * b).collect(),
    );
    let mean_g = box_mean(g, radius);
    let mean_p = box_mean(p, radius);
    let mean_gg = box_mean(&gg, radius);
    let mean_gp = box_mean(&gp, radius);

    let n = shape.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let (mg, mp) = (mean_g.data()[i], mean_p.data()[i]);
        let var = mean_gg.data()[i] - mg * mg;
        let cov = mean_gp.data()[i] - mg * mp;
        a[i] = cov / (var + reg);
        b[i] = mp - a[i] * mg;
    }
    let mean_a = box_mean(&FieldImage::from_parts(shape, a), radius);
    let mean_b = box_mean(&FieldImage::from_parts(shape, b), radius);
    let out = (0..n)
        .map(|i| mean_a.data()[i] * g.data()[i] + mean_b.data()[i])
        .collect();
    Ok(FieldImage::from_parts(shape, out))
}
