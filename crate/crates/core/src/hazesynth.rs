//! Atmospheric-scattering haze synthesis and seeded toy scenes.
//!
//! Toy scenes are drawn from a ChaCha8 stream seeded with the caller's seed.
//! Clear images keep one colour channel near zero everywhere so the dark
//! channel of the clear scene stays small; transmission maps are smooth
//! fields in `[0.1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{FieldImage, PixelImage};
use crate::transmission::TransmissionMap;

/// Lowest transmission produced by the toy generators.
pub const TOY_MIN_TRANSMISSION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct HazeScene {
    pub clear: PixelImage,
    pub tmap: TransmissionMap,
    pub airlight: f64,
}

impl HazeScene {
    pub fn new(clear: PixelImage, tmap: TransmissionMap, airlight: f64) -> Result<Self> {
        if clear.channels() != 3 {
            return Err(Error::shape("scene clear image", "3 channels", clear.channels()));
        }
        tmap.ensure_matches(clear.shape(), "scene transmission map")?;
        if !(airlight > 0.0 && airlight <= 1.0) {
            return Err(Error::param(format!("airlight {airlight} outside (0, 1]")));
        }
        Ok(HazeScene {
            clear,
            tmap,
            airlight,
        })
    }

    pub fn hazy(&self) -> PixelImage {
        apply_asm(self)
    }
}

/// `I = J t + A (1 - t)` per pixel and channel, clamped to `[0, 1]`.
pub fn apply_asm(scene: &HazeScene) -> PixelImage {
    let a = scene.airlight;
    let clear = &scene.clear;
    let field = FieldImage::from_fn(clear.height(), clear.width(), 3, |y, x, c| {
        let t = scene.tmap.get(y, x);
        (clear.get(y, x, c) * t + a * (1.0 - t)).clamp(0.0, 1.0)
    });
    PixelImage::from_field_unchecked(field)
}

/// Recovers the clear radiance from a hazy image given exact `t` and `A`.
pub fn invert_asm(hazy: &PixelImage, tmap: &TransmissionMap, airlight: f64) -> Result<FieldImage> {
    tmap.ensure_matches(hazy.shape(), "transmission map")?;
    Ok(FieldImage::from_fn(
        hazy.height(),
        hazy.width(),
        hazy.channels(),
        |y, x, c| {
            let t = tmap.get(y, x);
            (hazy.get(y, x, c) - airlight * (1.0 - t)) / t
        },
    ))
}

fn smoothstep(edge0: f64, edge1: f64, v: f64) -> f64 {
    let s = ((v - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Random colour whose `dark` channel sits in `[0, 0.06]`.
fn scene_colour(rng: &mut ChaCha8Rng, dark: usize) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (i, v) in c.iter_mut().enumerate() {
        *v = if i == dark {
            rng.random_range(0.0..0.06)
        } else {
            rng.random_range(0.15..0.95)
        };
    }
    c
}

fn clear_image(rng: &mut ChaCha8Rng, size: usize, with_shapes: bool) -> PixelImage {
    let dark = rng.random_range(0..3);
    let c0 = scene_colour(rng, dark);
    let c1 = scene_colour(rng, dark);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let n = size as f64;

    let mut shapes = Vec::new();
    if with_shapes {
        for _ in 0..rng.random_range(1..=3) {
            let cy = rng.random_range(0.15..0.85) * n;
            let cx = rng.random_range(0.15..0.85) * n;
            let r = rng.random_range(0.08..0.22) * n;
            let round = rng.random_bool(0.5);
            shapes.push((cy, cx, r, round, scene_colour(rng, dark)));
        }
    }

    PixelImage::from_fn(size, size, 3, |y, x, c| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let u = ((fx / n - 0.5) * dx + (fy / n - 0.5) * dy + 0.75) / 1.5;
        let mut v = c0[c] + (c1[c] - c0[c]) * u.clamp(0.0, 1.0);
        for &(cy, cx, r, round, col) in &shapes {
            let inside = if round {
                (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r
            } else {
                (fy - cy).abs() <= r && (fx - cx).abs() <= r
            };
            if inside {
                v = col[c];
            }
        }
        v.clamp(0.0, 1.0)
    })
    .expect("generated colours are in range")
}

/// Smooth transmission field with one of three layouts: depth ramp,
/// half-dense split, or a dense blob.
fn transmission_field(rng: &mut ChaCha8Rng, size: usize, layout: usize) -> TransmissionMap {
    let n = size as f64;
    let lo = rng.random_range(TOY_MIN_TRANSMISSION..0.35);
    let hi = rng.random_range(0.7..1.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let (by, bx) = (rng.random_range(0.25..0.75) * n, rng.random_range(0.25..0.75) * n);
    let br = rng.random_range(0.25..0.5) * n;
    let field = FieldImage::from_fn(size, size, 1, |y, x, _| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let proj = (fx / n - 0.5) * dx + (fy / n - 0.5) * dy;
        let density = match layout {
            0 => (proj + 0.75) / 1.5,
            1 => smoothstep(-0.12, 0.12, proj),
            _ => {
                let d = ((fy - by).powi(2) + (fx - bx).powi(2)).sqrt() / br;
                1.0 - smoothstep(0.3, 1.0, d)
            }
        };
        (hi - (hi - lo) * density.clamp(0.0, 1.0)).clamp(TOY_MIN_TRANSMISSION, 1.0)
    });
    TransmissionMap::from_field(field, TOY_MIN_TRANSMISSION).expect("values kept in range")
}

fn toy_scene(rng: &mut ChaCha8Rng, size: usize, layout: usize, with_shapes: bool) -> HazeScene {
    let clear = clear_image(rng, size, with_shapes);
    let tmap = transmission_field(rng, size, layout);
    let airlight = rng.random_range(0.7..=0.95);
    HazeScene {
        clear,
        tmap,
        airlight,
    }
}

/// Deterministic toy dataset; layouts cycle ramp, half-dense, blob.
pub fn make_toy_dataset(count: usize, size: usize, seed: u64) -> Result<Vec<HazeScene>> {
    if size < 16 {
        return Err(Error::param(format!("toy scenes need size >= 16, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| toy_scene(&mut rng, size, i % 3, true))
        .collect())
}

/// Shape-free scenes (colour gradient only) for transmission checks.
pub fn make_smooth_scenes(count: usize, size: usize, seed: u64) -> Result<Vec<HazeScene>> {
    if size < 16 {
        return Err(Error::param(format!("smooth scenes need size >= 16, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| toy_scene(&mut rng, size, i % 3, false))
        .collect())
}
