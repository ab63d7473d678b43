//! Overlapping patch layout and partition-of-unity blending.
//!
//! Patch origins sit at multiples of the stride along each axis; when the last
//! one stops short of the border an extra patch is placed flush against it.
//! Patches are enumerated row-major, and every reduction over patches runs in
//! that order so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FieldImage, Shape};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    /// `(row, col)` top-left corners in enumeration order.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|o| o + patch <= len)
        .collect();
    if let Some(&last) = out.last() {
        if last + patch < len {
            out.push(len - patch);
        }
    }
    out
}

pub fn plan_patches(height: usize, width: usize, patch: usize, stride: usize) -> Result<PatchGrid> {
    if patch == 0 || stride == 0 || stride >= patch {
        return Err(Error::param(format!(
            "need 1 <= stride < patch, got patch {patch}, stride {stride}"
        )));
    }
    if patch > height.min(width) {
        return Err(Error::param(format!(
            "patch {patch} larger than image {height}x{width}"
        )));
    }
    let rows = axis_origins(height, patch, stride);
    let cols = axis_origins(width, patch, stride);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        height,
        width,
        patch,
        stride,
        origins,
    })
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn contains(&self, index: usize, row: usize, col: usize) -> bool {
        let (r, c) = self.origins[index];
        row >= r && row < r + self.patch && col >= c && col < c + self.patch
    }

    /// Number of patches covering each pixel, row-major.
    pub fn cover_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.height * self.width];
        for &(r, c) in &self.origins {
            for y in r..r + self.patch {
                for x in c..c + self.patch {
                    counts[y * self.width + x] += 1;
                }
            }
        }
        counts
    }
}

/// Per-patch `patch x patch` weight maps; at every pixel the weights of the
/// covering patches sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchWeights {
    pub patch: usize,
    pub maps: Vec<Vec<f64>>,
}

impl PatchWeights {
    /// Normalises non-negative raw weights into a partition of unity.
    pub fn from_raw(grid: &PatchGrid, raw: Vec<Vec<f64>>) -> Result<Self> {
        let area = grid.patch * grid.patch;
        if raw.len() != grid.len() {
            return Err(Error::shape("weight maps", grid.len(), raw.len()));
        }
        if let Some(m) = raw.iter().find(|m| m.len() != area) {
            return Err(Error::shape("weight map size", area, m.len()));
        }
        if raw.iter().flatten().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("patch weights must be finite and >= 0"));
        }
        let mut totals = vec![0.0; grid.height * grid.width];
        for (map, &(r, c)) in raw.iter().zip(&grid.origins) {
            for (k, w) in map.iter().enumerate() {
                totals[(r + k / grid.patch) * grid.width + c + k % grid.patch] += w;
            }
        }
        if let Some(i) = totals.iter().position(|&t| t <= 0.0) {
            return Err(Error::param(format!(
                "pixel ({}, {}) has zero total weight",
                i / grid.width,
                i % grid.width
            )));
        }
        let maps = raw
            .into_iter()
            .zip(&grid.origins)
            .map(|(map, &(r, c))| {
                map.iter()
                    .enumerate()
                    .map(|(k, w)| w / totals[(r + k / grid.patch) * grid.width + c + k % grid.patch])
                    .collect()
            })
            .collect();
        Ok(PatchWeights {
            patch: grid.patch,
            maps,
        })
    }

    /// Checks that these weights were built for `grid`.
    pub fn ensure_fits(&self, grid: &PatchGrid) -> Result<()> {
        if self.patch != grid.patch || self.maps.len() != grid.len() {
            return Err(Error::shape(
                "patch weights",
                format!("{} maps of {}x{}", grid.len(), grid.patch, grid.patch),
                format!("{} maps of {}x{}", self.maps.len(), self.patch, self.patch),
            ));
        }
        Ok(())
    }

    /// Per-pixel sum of covering weights (all ones for a valid table).
    pub fn pixel_sums(&self, grid: &PatchGrid) -> Vec<f64> {
        let mut sums = vec![0.0; grid.height * grid.width];
        for (map, &(r, c)) in self.maps.iter().zip(&grid.origins) {
            for (k, w) in map.iter().enumerate() {
                sums[(r + k / grid.patch) * grid.width + c + k % grid.patch] += w;
            }
        }
        sums
    }
}

/// Every covering patch gets `1 / n` at a pixel covered `n` times.
pub fn make_uniform_weights(grid: &PatchGrid) -> PatchWeights {
    let counts = grid.cover_counts();
    let maps = grid
        .origins
        .iter()
        .map(|&(r, c)| {
            (0..grid.patch * grid.patch)
                .map(|k| 1.0 / counts[(r + k / grid.patch) * grid.width + c + k % grid.patch] as f64)
                .collect()
        })
        .collect();
    PatchWeights {
        patch: grid.patch,
        maps,
    }
}

/// Weighted superposition of per-patch fields into a full-size field.
///
/// `estimates` must list one `patch x patch` field per grid patch, in grid
/// order, tagged with its origin.
pub fn aggregate_noise(
    estimates: &[((usize, usize), FieldImage)],
    grid: &PatchGrid,
    weights: &PatchWeights,
) -> Result<FieldImage> {
    if estimates.len() != grid.len() {
        return Err(Error::shape("patch estimates", grid.len(), estimates.len()));
    }
    for (i, ((origin, _), expected)) in estimates.iter().zip(&grid.origins).enumerate() {
        if origin != expected {
            return Err(Error::shape(
                "patch estimate origin",
                format!("{expected:?} at index {i}"),
                format!("{origin:?}"),
            ));
        }
    }
    let fields: Vec<&FieldImage> = estimates.iter().map(|(_, f)| f).collect();
    aggregate_fields(&fields, grid, weights)
}

pub(crate) fn aggregate_fields(
    fields: &[&FieldImage],
    grid: &PatchGrid,
    weights: &PatchWeights,
) -> Result<FieldImage> {
    weights.ensure_fits(grid)?;
    if fields.len() != grid.len() {
        return Err(Error::shape("patch estimates", grid.len(), fields.len()));
    }
    let channels = fields.first().map(|f| f.channels()).unwrap_or(1);
    let expected = Shape::new(grid.patch, grid.patch, channels);
    let mut out = FieldImage::zeros(grid.height, grid.width, channels);
    let p = grid.patch;
    for ((field, map), &(r, c)) in fields.iter().zip(&weights.maps).zip(&grid.origins) {
        if field.shape() != expected {
            return Err(Error::shape("patch estimate", expected, field.shape()));
        }
        let src = field.data();
        let dst = out.data_mut();
        for y in 0..p {
            for x in 0..p {
                let w = map[y * p + x];
                let d = ((r + y) * grid.width + c + x) * channels;
                let s = (y * p + x) * channels;
                for ch in 0..channels {
                    dst[d + ch] += w * src[s + ch];
                }
            }
        }
    }
    Ok(out)
}
