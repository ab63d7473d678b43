//! Small three-level convolutional noise predictor with hand-written gradients.
//!
//! Layout is channel-major (`C x H x W`). The network maps the stacked input
//! `[J_t, C, I, tau]` plus a noise-level embedding to a residual `R`, and the
//! noise estimate follows from the clear-image guess `U = I + W(t, tau) R`:
//! `eps = (J_t - sqrt(gamma) U) / sqrt(1 - gamma)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserInput};
use crate::error::{Error, Result};
use crate::image::FieldImage;
use crate::pist::{pist_weight, PistParams};

pub const INPUT_CHANNELS: usize = 10;
pub const EMBED_DIM: usize = 6;
pub const MAX_PARAMETERS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyConfig {
    /// Channel width of the first level; deeper levels use twice this.
    pub base: usize,
    pub pist: PistParams,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            base: 16,
            pist: PistParams::default(),
        }
    }
}

/// Name, shape and flat offset of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

#[derive(Clone, Copy, Debug)]
struct Embed {
    w: usize,
    b: usize,
    cout: usize,
}

#[derive(Clone, Copy, Debug)]
struct Arch {
    enc1: Conv,
    enc1_emb: Embed,
    enc1b: Conv,
    enc2: Conv,
    enc2_emb: Embed,
    mid1: Conv,
    mid1_emb: Embed,
    mid2: Conv,
    dec2: Conv,
    dec1: Conv,
    head: Conv,
}

fn build_arch(base: usize) -> (Arch, Vec<TensorSpec>) {
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let spec = TensorSpec {
            name,
            shape,
            offset,
        };
        offset += spec.len();
        let at = spec.offset;
        specs.push(spec);
        at
    };
    let mut conv = |name: &str, cin: usize, cout: usize, k: usize| Conv {
        w: push(format!("{name}.weight"), vec![cout, cin, k, k]),
        b: push(format!("{name}.bias"), vec![cout]),
        cin,
        cout,
        k,
    };
    let (c1, c2) = (base, 2 * base);
    let enc1 = conv("enc1", INPUT_CHANNELS, c1, 3);
    let enc1b = conv("enc1b", c1, c1, 3);
    let enc2 = conv("enc2", c1, c2, 3);
    let mid1 = conv("mid1", c2, c2, 3);
    let mid2 = conv("mid2", c2, c2, 3);
    let dec2 = conv("dec2", c2, c1, 3);
    let dec1 = conv("dec1", c1, c1, 3);
    let head = conv("head", c1, 3, 1);
    let mut embed = |name: &str, cout: usize| Embed {
        w: push(format!("{name}.weight"), vec![cout, EMBED_DIM]),
        b: push(format!("{name}.bias"), vec![cout]),
        cout,
    };
    let arch = Arch {
        enc1,
        enc1_emb: embed("enc1.embed", c1),
        enc1b,
        enc2,
        enc2_emb: embed("enc2.embed", c2),
        mid1,
        mid1_emb: embed("mid1.embed", c2),
        mid2,
        dec2,
        dec1,
        head,
    };
    (arch, specs)
}

/// Noise-level features: `sqrt(g)`, `sqrt(1-g)`, and sin/cos of the half
/// log-SNR at two frequencies.
pub fn noise_embedding(gamma: f64) -> [f64; EMBED_DIM] {
    let lambda = 0.5 * (gamma / (1.0 - gamma)).ln();
    [
        gamma.sqrt(),
        (1.0 - gamma).sqrt(),
        (0.5 * lambda).sin(),
        (0.5 * lambda).cos(),
        (0.25 * lambda).sin(),
        (0.25 * lambda).cos(),
    ]
}

/// Channel-major activation buffer.
#[derive(Clone, Debug)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(t: &Tensor) -> Tensor {
    Tensor {
        data: t.data.iter().map(|&a| a * sigmoid(a)).collect(),
        ..*t
    }
}

/// `grad_out * silu'(pre)`.
fn silu_backward(pre: &Tensor, grad: &[f64]) -> Tensor {
    let data = pre
        .data
        .iter()
        .zip(grad)
        .map(|(&a, &g)| {
            let s = sigmoid(a);
            g * s * (1.0 + a * (1.0 - s))
        })
        .collect();
    Tensor { data, ..*pre }
}

fn avg_pool(t: &Tensor) -> Tensor {
    let (h, w) = (t.h / 2, t.w / 2);
    let mut out = Tensor::zeros(t.c, h, w);
    for c in 0..t.c {
        for y in 0..h {
            for x in 0..w {
                let base = c * t.plane() + 2 * y * t.w + 2 * x;
                out.data[(c * h + y) * w + x] = 0.25
                    * (t.data[base] + t.data[base + 1] + t.data[base + t.w] + t.data[base + t.w + 1]);
            }
        }
    }
    out
}

fn avg_pool_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        for y in 0..h {
            for x in 0..w {
                out.data[(c * h + y) * w + x] =
                    0.25 * grad.data[(c * grad.h + y / 2) * grad.w + x / 2];
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling added onto `skip`.
fn upsample_add(t: &Tensor, skip: &Tensor) -> Tensor {
    let mut out = skip.clone();
    for c in 0..skip.c {
        for y in 0..skip.h {
            for x in 0..skip.w {
                out.data[(c * skip.h + y) * skip.w + x] += t.data[(c * t.h + y / 2) * t.w + x / 2];
            }
        }
    }
    out
}

fn upsample_backward(grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(grad.c, grad.h / 2, grad.w / 2);
    for c in 0..grad.c {
        for y in 0..grad.h {
            for x in 0..grad.w {
                out.data[(c * out.h + y / 2) * out.w + x / 2] += grad.data[(c * grad.h + y) * grad.w + x];
            }
        }
    }
    out
}

/// Row-span of valid positions for a kernel offset `d` in a length-`n` axis.
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

fn conv_forward(params: &[f64], conv: Conv, input: &Tensor) -> Tensor {
    let (h, w, k) = (input.h, input.w, conv.k);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let weight = &params[conv.w..conv.w + conv.cout * conv.cin * k * k];
    let mut out = Tensor::zeros(conv.cout, h, w);
    for o in 0..conv.cout {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(params[conv.b + o]);
        for i in 0..conv.cin {
            let src = &input.data[i * plane..(i + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((o * conv.cin + i) * k + ky) * k + kx];
                    let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                    let (y0, y1) = span(h, dy);
                    let (x0, x1) = span(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `grads`; returns the input gradient.
fn conv_backward(
    params: &[f64],
    grads: &mut [f64],
    conv: Conv,
    input: &Tensor,
    grad_out: &Tensor,
) -> Tensor {
    let (h, w, k) = (input.h, input.w, conv.k);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut grad_in = Tensor::zeros(conv.cin, h, w);
    for o in 0..conv.cout {
        let go = &grad_out.data[o * plane..(o + 1) * plane];
        grads[conv.b + o] += go.iter().sum::<f64>();
        for i in 0..conv.cin {
            let src = &input.data[i * plane..(i + 1) * plane];
            let gi = &mut grad_in.data[i * plane..(i + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = conv.w + ((o * conv.cin + i) * k + ky) * k + kx;
                    let wv = params[widx];
                    let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                    let (y0, y1) = span(h, dy);
                    let (x0, x1) = span(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        let s = sy * w + sx0..sy * w + sx0 + (x1 - x0);
                        for (gv, sv) in g.iter().zip(&src[s.clone()]) {
                            acc += gv * sv;
                        }
                        for (gv, dv) in g.iter().zip(&mut gi[s]) {
                            *dv += wv * gv;
                        }
                    }
                    grads[widx] += acc;
                }
            }
        }
    }
    grad_in
}

fn embed_forward(params: &[f64], emb: Embed, phi: &[f64; EMBED_DIM]) -> Vec<f64> {
    (0..emb.cout)
        .map(|o| {
            params[emb.b + o]
                + (0..EMBED_DIM)
                    .map(|k| params[emb.w + o * EMBED_DIM + k] * phi[k])
                    .sum::<f64>()
        })
        .collect()
}

fn add_channel_bias(t: &mut Tensor, bias: &[f64]) {
    let plane = t.plane();
    for (c, &b) in bias.iter().enumerate() {
        t.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn embed_backward(grads: &mut [f64], emb: Embed, phi: &[f64; EMBED_DIM], grad_pre: &Tensor) {
    let plane = grad_pre.plane();
    for o in 0..emb.cout {
        let g: f64 = grad_pre.data[o * plane..(o + 1) * plane].iter().sum();
        grads[emb.b + o] += g;
        for k in 0..EMBED_DIM {
            grads[emb.w + o * EMBED_DIM + k] += g * phi[k];
        }
    }
}

struct Cache {
    phi: [f64; EMBED_DIM],
    x: Tensor,
    a1: Tensor,
    h1: Tensor,
    a1b: Tensor,
    s1: Tensor,
    p1: Tensor,
    a2: Tensor,
    s2: Tensor,
    p2: Tensor,
    a3: Tensor,
    h3: Tensor,
    a4: Tensor,
    u2: Tensor,
    a5: Tensor,
    u1: Tensor,
    a6: Tensor,
    h6: Tensor,
}

/// One training or inference example in image layout (`H x W x 3`).
#[derive(Clone, Debug)]
pub struct TinySample {
    pub noisy: FieldImage,
    pub condition: FieldImage,
    pub hazy: FieldImage,
    /// Per-pixel transmission, `H x W x 1`.
    pub tmap: FieldImage,
    pub gamma: f64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyDenoiser {
    config: TinyConfig,
    specs: Vec<TensorSpec>,
    params: Vec<f64>,
}

impl TinyDenoiser {
    /// He-initialised convolutions, small embeddings, zero output head.
    pub fn new(config: TinyConfig, seed: u64) -> Result<Self> {
        config.pist.validate()?;
        if config.base == 0 {
            return Err(Error::param("tiny denoiser base width must be >= 1"));
        }
        let (arch, specs) = build_arch(config.base);
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        if total > MAX_PARAMETERS {
            return Err(Error::param(format!(
                "tiny denoiser with base {} has {total} parameters (max {MAX_PARAMETERS})",
                config.base
            )));
        }
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut params = vec![0.0; total];
        for conv in [
            arch.enc1, arch.enc1b, arch.enc2, arch.mid1, arch.mid2, arch.dec2, arch.dec1,
        ] {
            let fan_in = (conv.cin * conv.k * conv.k) as f64;
            let std = (2.0 / fan_in).sqrt();
            for v in &mut params[conv.w..conv.w + conv.cout * conv.cin * conv.k * conv.k] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        }
        for emb in [arch.enc1_emb, arch.enc2_emb, arch.mid1_emb] {
            for v in &mut params[emb.w..emb.w + emb.cout * EMBED_DIM] {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        Ok(TinyDenoiser {
            config,
            specs,
            params,
        })
    }

    pub(crate) fn from_parts(config: TinyConfig, params: Vec<f64>) -> Result<Self> {
        let (_, specs) = build_arch(config.base);
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        if params.len() != total {
            return Err(Error::shape("tiny denoiser parameters", total, params.len()));
        }
        Ok(TinyDenoiser {
            config,
            specs,
            params,
        })
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn arch(&self) -> Arch {
        build_arch(self.config.base).0
    }

    fn check(&self, s: &TinySample) -> Result<usize> {
        let p = s.noisy.height();
        let expected = crate::image::Shape::new(p, p, 3);
        if s.noisy.shape() != expected || p == 0 || !p.is_multiple_of(4) {
            return Err(Error::Denoiser(format!(
                "tiny denoiser needs square RGB patches with side divisible by 4, got {}",
                s.noisy.shape()
            )));
        }
        s.noisy.ensure_same_shape(&s.condition, "condition patch")?;
        s.noisy.ensure_same_shape(&s.hazy, "hazy patch")?;
        if s.tmap.shape() != crate::image::Shape::new(p, p, 1) {
            return Err(Error::shape("transmission patch", crate::image::Shape::new(p, p, 1), s.tmap.shape()));
        }
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return Err(Error::param(format!("noise level {} outside (0, 1)", s.gamma)));
        }
        Ok(p)
    }

    fn input_tensor(s: &TinySample, p: usize) -> Tensor {
        let mut x = Tensor::zeros(INPUT_CHANNELS, p, p);
        let plane = p * p;
        for q in 0..plane {
            for c in 0..3 {
                x.data[c * plane + q] = s.noisy.data()[q * 3 + c];
                x.data[(3 + c) * plane + q] = s.condition.data()[q * 3 + c] - 0.5;
                x.data[(6 + c) * plane + q] = s.hazy.data()[q * 3 + c] - 0.5;
            }
            x.data[9 * plane + q] = s.tmap.data()[q] - 0.5;
        }
        x
    }

    fn forward(&self, s: &TinySample, p: usize) -> (Tensor, Cache) {
        let a = self.arch();
        let w = &self.params;
        let phi = noise_embedding(s.gamma);
        let x = Self::input_tensor(s, p);
        let mut a1 = conv_forward(w, a.enc1, &x);
        add_channel_bias(&mut a1, &embed_forward(w, a.enc1_emb, &phi));
        let h1 = silu(&a1);
        let a1b = conv_forward(w, a.enc1b, &h1);
        let s1 = silu(&a1b);
        let p1 = avg_pool(&s1);
        let mut a2 = conv_forward(w, a.enc2, &p1);
        add_channel_bias(&mut a2, &embed_forward(w, a.enc2_emb, &phi));
        let s2 = silu(&a2);
        let p2 = avg_pool(&s2);
        let mut a3 = conv_forward(w, a.mid1, &p2);
        add_channel_bias(&mut a3, &embed_forward(w, a.mid1_emb, &phi));
        let h3 = silu(&a3);
        let a4 = conv_forward(w, a.mid2, &h3);
        let h4 = silu(&a4);
        let u2 = upsample_add(&h4, &s2);
        let a5 = conv_forward(w, a.dec2, &u2);
        let h5 = silu(&a5);
        let u1 = upsample_add(&h5, &s1);
        let a6 = conv_forward(w, a.dec1, &u1);
        let h6 = silu(&a6);
        let r = conv_forward(w, a.head, &h6);
        let cache = Cache {
            phi,
            x,
            a1,
            h1,
            a1b,
            s1,
            p1,
            a2,
            s2,
            p2,
            a3,
            h3,
            a4,
            u2,
            a5,
            u1,
            a6,
            h6,
        };
        (r, cache)
    }

    fn backward(&self, cache: &Cache, grad_r: &Tensor) -> Vec<f64> {
        let a = self.arch();
        let w = &self.params;
        let mut g = vec![0.0; w.len()];
        let c = cache;
        let dh6 = conv_backward(w, &mut g, a.head, &c.h6, grad_r);
        let da6 = silu_backward(&c.a6, &dh6.data);
        let du1 = conv_backward(w, &mut g, a.dec1, &c.u1, &da6);
        let mut ds1 = du1.clone();
        let dh5 = upsample_backward(&du1);
        let da5 = silu_backward(&c.a5, &dh5.data);
        let du2 = conv_backward(w, &mut g, a.dec2, &c.u2, &da5);
        let mut ds2 = du2.clone();
        let dh4 = upsample_backward(&du2);
        let da4 = silu_backward(&c.a4, &dh4.data);
        let dh3 = conv_backward(w, &mut g, a.mid2, &c.h3, &da4);
        let da3 = silu_backward(&c.a3, &dh3.data);
        embed_backward(&mut g, a.mid1_emb, &c.phi, &da3);
        let dp2 = conv_backward(w, &mut g, a.mid1, &c.p2, &da3);
        let back2 = avg_pool_backward(&dp2, c.s2.h, c.s2.w);
        ds2.data.iter_mut().zip(&back2.data).for_each(|(d, b)| *d += b);
        let da2 = silu_backward(&c.a2, &ds2.data);
        embed_backward(&mut g, a.enc2_emb, &c.phi, &da2);
        let dp1 = conv_backward(w, &mut g, a.enc2, &c.p1, &da2);
        let back1 = avg_pool_backward(&dp1, c.s1.h, c.s1.w);
        ds1.data.iter_mut().zip(&back1.data).for_each(|(d, b)| *d += b);
        let da1b = silu_backward(&c.a1b, &ds1.data);
        let dh1 = conv_backward(w, &mut g, a.enc1b, &c.h1, &da1b);
        let da1 = silu_backward(&c.a1, &dh1.data);
        embed_backward(&mut g, a.enc1_emb, &c.phi, &da1);
        conv_backward(w, &mut g, a.enc1, &c.x, &da1);
        g
    }

    /// Noise estimate in image layout, plus the residual `R` for backprop.
    fn eps_from_residual(&self, s: &TinySample, r: &Tensor) -> FieldImage {
        let plane = r.plane();
        let (sg, ng) = (s.gamma.sqrt(), (1.0 - s.gamma).sqrt());
        let mut data = vec![0.0; plane * 3];
        for q in 0..plane {
            let wt = pist_weight(s.step, s.tmap.data()[q], &self.config.pist);
            for c in 0..3 {
                let u = s.hazy.data()[q * 3 + c] + wt * r.data[c * plane + q];
                data[q * 3 + c] = (s.noisy.data()[q * 3 + c] - sg * u) / ng;
            }
        }
        FieldImage::from_parts(s.noisy.shape(), data)
    }

    pub fn predict(&self, s: &TinySample) -> Result<FieldImage> {
        let p = self.check(s)?;
        let (r, _) = self.forward(s, p);
        Ok(self.eps_from_residual(s, &r))
    }

    /// Mean absolute noise error and its gradient w.r.t. every parameter.
    pub fn loss_and_grad(&self, s: &TinySample, eps: &FieldImage) -> Result<(f64, Vec<f64>)> {
        let p = self.check(s)?;
        s.noisy.ensure_same_shape(eps, "target noise")?;
        let (r, cache) = self.forward(s, p);
        let est = self.eps_from_residual(s, &r);
        let n = est.data().len() as f64;
        let plane = p * p;
        let scale = -s.gamma.sqrt() / (1.0 - s.gamma).sqrt() / n;
        let mut grad_r = Tensor::zeros(3, p, p);
        let mut loss = 0.0;
        for q in 0..plane {
            let wt = pist_weight(s.step, s.tmap.data()[q], &self.config.pist);
            for c in 0..3 {
                let k = q * 3 + c;
                let diff = est.data()[k] - eps.data()[k];
                loss += diff.abs();
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad_r.data[c * plane + q] = sign * scale * wt;
            }
        }
        Ok((loss / n, self.backward(&cache, &grad_r)))
    }

    pub fn loss(&self, s: &TinySample, eps: &FieldImage) -> Result<f64> {
        crate::pist::pist_loss(&self.predict(s)?, eps)
    }
}

impl Denoiser for TinyDenoiser {
    fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<FieldImage> {
        let sample = TinySample {
            noisy: input.noisy.clone(),
            condition: input.condition.clone(),
            hazy: input.hazy.as_field().clone(),
            tmap: input.tmap.as_field().clone(),
            gamma: input.gamma,
            step: input.step,
        };
        self.predict(&sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample(p: usize, seed: u64) -> (TinySample, FieldImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = |c| FieldImage::from_fn(p, p, c, |_, _, _| rng.random::<f64>());
        let s = TinySample {
            noisy: field(3),
            condition: field(3),
            hazy: field(3),
            tmap: field(1),
            gamma: 0.6,
            step: 200,
        };
        (s, field(3))
    }

    #[test]
    fn parameter_budget() {
        let m = TinyDenoiser::new(TinyConfig::default(), 0).unwrap();
        assert!(m.num_params() <= MAX_PARAMETERS);
        assert!(m.num_params() > 20_000);
        let mut offset = 0;
        for s in m.specs() {
            assert_eq!(s.offset, offset);
            offset += s.len();
        }
        assert_eq!(offset, m.num_params());
        assert!(TinyDenoiser::new(TinyConfig { base: 64, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn zero_head_predicts_from_hazy_baseline() {
        let m = TinyDenoiser::new(TinyConfig::default(), 3).unwrap();
        let (s, _) = sample(8, 1);
        let eps = m.predict(&s).unwrap();
        let (sg, ng) = (0.6f64.sqrt(), 0.4f64.sqrt());
        for (k, v) in eps.data().iter().enumerate() {
            let want = (s.noisy.data()[k] - sg * s.hazy.data()[k]) / ng;
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_checked() {
        let mut m = TinyDenoiser::new(TinyConfig::default(), 3).unwrap();
        m.params_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 1e-3 * (i % 7) as f64);
        let (s, _) = sample(12, 2);
        assert_eq!(m.predict(&s).unwrap(), m.predict(&s).unwrap());
        let (bad, _) = sample(10, 2);
        assert!(m.predict(&bad).is_err());
    }

    #[test]
    fn loss_matches_predict() {
        let mut m = TinyDenoiser::new(TinyConfig::default(), 5).unwrap();
        m.params_mut().iter_mut().for_each(|v| *v *= 1.1);
        let (s, eps) = sample(8, 4);
        let (l, g) = m.loss_and_grad(&s, &eps).unwrap();
        assert!((l - m.loss(&s, &eps).unwrap()).abs() < 1e-12);
        assert_eq!(g.len(), m.num_params());
    }
}
