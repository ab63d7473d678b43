//! Central finite-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tiny::{TinyDenoiser, TinySample};
use crate::error::{Error, Result};
use crate::image::FieldImage;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// A scalar objective over a flat parameter vector.
pub trait Differentiable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn loss(&self) -> Result<f64>;
    fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)>;
}

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient with `(L(p + h) - L(p - h)) / 2h` at `indices`.
pub fn gradient_check_at<M: Differentiable>(
    model: &mut M,
    indices: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::param("finite-difference step must be > 0"));
    }
    let (_, grad) = model.loss_and_grad()?;
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= grad.len() {
            return Err(Error::param(format!("parameter index {i} out of range")));
        }
        let orig = model.params()[i];
        model.params_mut()[i] = orig + step;
        let up = model.loss()?;
        model.params_mut()[i] = orig - step;
        let down = model.loss()?;
        model.params_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    let analytic: Vec<f64> = indices.iter().map(|&i| grad[i]).collect();
    let max_relative_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        indices: indices.to_vec(),
        analytic,
        numeric,
        max_relative_error,
    })
}

/// A tiny denoiser bound to a fixed probe batch.
pub struct TinyProbe<'a> {
    pub model: &'a mut TinyDenoiser,
    pub batch: &'a [(TinySample, FieldImage)],
}

impl Differentiable for TinyProbe<'_> {
    fn params(&self) -> &[f64] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.model.params_mut()
    }

    fn loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (s, eps) in self.batch {
            total += self.model.loss(s, eps)?;
        }
        Ok(total / self.batch.len() as f64)
    }

    fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grad = vec![0.0; self.model.num_params()];
        for (s, eps) in self.batch {
            let (l, g) = self.model.loss_and_grad(s, eps)?;
            total += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let n = self.batch.len() as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        Ok((total / n, grad))
    }
}

/// Checks `count` parameters: one from every tensor, the rest drawn at random.
pub fn gradient_check(
    model: &mut TinyDenoiser,
    batch: &[(TinySample, FieldImage)],
    count: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::param("gradient check needs a nonempty probe batch"));
    }
    let mut indices: Vec<usize> = model.specs().iter().map(|s| s.offset).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = count.saturating_sub(indices.len());
    indices.extend(sample(&mut rng, model.num_params(), extra.min(model.num_params())).iter());
    let mut probe = TinyProbe { model, batch };
    gradient_check_at(&mut probe, &indices, DEFAULT_FD_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        w: [f64; 1],
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl Differentiable for Linear {
        fn params(&self) -> &[f64] {
            &self.w
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.w
        }
        fn loss(&self) -> Result<f64> {
            Ok(self.xs.iter().zip(&self.ys).map(|(x, y)| self.w[0] * x - y).sum::<f64>())
        }
        fn loss_and_grad(&self) -> Result<(f64, Vec<f64>)> {
            Ok((self.loss()?, vec![self.xs.iter().sum()]))
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let mut m = Linear {
            w: [0.7],
            xs: vec![1.0, -2.0, 3.5],
            ys: vec![0.1, 0.2, 0.3],
        };
        let r = gradient_check_at(&mut m, &[0], DEFAULT_FD_STEP).unwrap();
        assert!(r.max_relative_error < 1e-6);
        assert_eq!(m.w[0], 0.7);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.999) - 1e-3).abs() < 1e-12);
    }
}
