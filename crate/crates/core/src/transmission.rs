//! Dark-channel transmission estimation with sky preservation.
//!
//! The estimator runs, in order: dark channel, raw transmission
//! `1 - omega * dark / A`, Rec.601 grayscale, smoothed Sobel gradient, binary
//! sky mask, Gaussian feathering of the mask, guided-filter refinement of the
//! raw map, sky blend, and finally the lower bound `T0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, SOBEL_MAX};
use crate::image::{FieldImage, PixelImage, Shape};

/// Per-pixel transmission with every value in `[floor, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    field: FieldImage,
    floor: f64,
}

impl TransmissionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, floor: f64) -> Result<Self> {
        Self::from_field(FieldImage::new(height, width, 1, values)?, floor)
    }

    pub fn from_field(field: FieldImage, floor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::param(format!("transmission floor {floor} outside [0, 1)")));
        }
        if field.channels() != 1 {
            return Err(Error::shape(
                "transmission map",
                "1 channel",
                format!("{} channels", field.channels()),
            ));
        }
        if let Some(v) = field.data().iter().find(|v| !(floor..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!(
                "transmission value {v} outside [{floor}, 1]"
            )));
        }
        Ok(TransmissionMap { field, floor })
    }

    /// Reads a map stored as a grayscale image; the floor is the smallest value present.
    pub fn from_image(img: &PixelImage) -> Result<Self> {
        let gray = filters::grayscale(img).into_field();
        let floor = gray.min_value().min(0.999);
        Self::from_field(gray, floor)
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_field(FieldImage::filled(height, width, 1, value), 0.0)
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn values(&self) -> &[f64] {
        self.field.data()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.field.get(row, col, 0)
    }

    pub fn mean(&self) -> f64 {
        self.field.mean()
    }

    pub fn as_field(&self) -> &FieldImage {
        &self.field
    }

    pub fn to_image(&self) -> PixelImage {
        PixelImage::from_field_unchecked(self.field.clone())
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        Ok(TransmissionMap {
            field: self.field.crop(row, col, height, width)?,
            floor: self.floor,
        })
    }

    pub fn ensure_matches(&self, shape: Shape, what: &'static str) -> Result<()> {
        if self.height() != shape.height || self.width() != shape.width {
            return Err(Error::shape(
                what,
                format!("{}x{}", shape.height, shape.width),
                format!("{}x{}", self.height(), self.width()),
            ));
        }
        Ok(())
    }
}

/// Sky mask on the 0..=255 scale; binary before feathering.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyMask {
    field: FieldImage,
}

impl SkyMask {
    pub const ON: f64 = 255.0;

    pub fn as_field(&self) -> &FieldImage {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.data()
    }

    pub fn is_binary(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0 || v == Self::ON)
    }

    pub fn coverage(&self) -> f64 {
        self.values().iter().map(|v| v / Self::ON).sum::<f64>() / self.values().len() as f64
    }

    /// Feathered copy; values become continuous in `[0, 255]`.
    pub fn feather(&self, sigma: f64) -> Result<SkyMask> {
        let blurred = filters::gaussian_blur(&self.field, sigma)?;
        Ok(SkyMask {
            field: blurred.map(|v| v.clamp(0.0, Self::ON)),
        })
    }

    /// Grayscale rendering (255 maps to white).
    pub fn to_image(&self) -> PixelImage {
        PixelImage::from_field_unchecked(self.field.map(|v| v / Self::ON))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcpParams {
    /// Haze retention factor applied to the dark channel.
    pub omega: f64,
    /// Dark-channel window (odd).
    pub window: usize,
    pub guided_radius: usize,
    pub guided_reg: f64,
    /// Lower bound applied last.
    pub t0: f64,
    /// Threshold on the normalised, smoothed gradient.
    pub tau_g: f64,
    /// Grayscale brightness threshold.
    pub tau_b: f64,
    pub feather_sigma: f64,
    /// Smoothing applied to the gradient map before thresholding.
    pub grad_sigma: f64,
}

impl Default for DcpParams {
    fn default() -> Self {
        DcpParams {
            omega: 0.95,
            window: 15,
            guided_radius: 60,
            guided_reg: 1e-3,
            t0: 0.1,
            tau_g: 0.05,
            tau_b: 0.7,
            feather_sigma: 5.0,
            grad_sigma: 1.0,
        }
    }
}

impl DcpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::param(format!("omega {} outside (0, 1]", self.omega)));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::param(format!("window {} must be odd", self.window)));
        }
        if self.guided_radius == 0 {
            return Err(Error::param("guided radius must be >= 1"));
        }
        if !(self.guided_reg > 0.0) {
            return Err(Error::param("guided regulariser must be > 0"));
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::param(format!("t0 {} outside (0, 1)", self.t0)));
        }
        if !self.tau_g.is_finite() || !self.tau_b.is_finite() {
            return Err(Error::param("thresholds must be finite"));
        }
        if !(self.feather_sigma > 0.0) || !(self.grad_sigma > 0.0) {
            return Err(Error::param("smoothing sigmas must be > 0"));
        }
        Ok(())
    }
}

fn require_rgb(img: &PixelImage, what: &'static str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::shape(what, "3 channels", format!("{} channels", img.channels())));
    }
    Ok(())
}

/// Channel minimum followed by a square min filter.
pub fn dark_channel(img: &PixelImage, window: usize) -> Result<PixelImage> {
    require_rgb(img, "dark channel input")?;
    let mins = img
        .data()
        .chunks_exact(3)
        .map(|px| px[0].min(px[1]).min(px[2]))
        .collect();
    let per_pixel = PixelImage::from_field_unchecked(FieldImage::from_parts(
        Shape::new(img.height(), img.width(), 1),
        mins,
    ));
    filters::min_filter(&per_pixel, window)
}

/// Scalar airlight: mean luma of the brightest 0.1% dark-channel pixels.
pub fn estimate_airlight(img: &PixelImage, dark: &PixelImage) -> Result<f64> {
    require_rgb(img, "airlight input")?;
    if dark.height() != img.height() || dark.width() != img.width() || dark.channels() != 1 {
        return Err(Error::shape("dark channel", img.shape(), dark.shape()));
    }
    let n = dark.data().len();
    let count = (n / 1000).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dark.data()[b].total_cmp(&dark.data()[a]).then(a.cmp(&b)));
    let gray = filters::grayscale(img);
    let mean = order[..count].iter().map(|&i| gray.data()[i]).sum::<f64>() / count as f64;
    Ok(mean.clamp(0.05, 1.0))
}

/// Binary mask: 255 where the gradient is below `tau_g` and luma above `tau_b`.
pub fn make_sky_mask(
    gray: &PixelImage,
    grad: &FieldImage,
    tau_g: f64,
    tau_b: f64,
) -> Result<SkyMask> {
    gray.as_field().ensure_same_shape(grad, "gradient map")?;
    let data = gray
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&b, &g)| if g < tau_g && b > tau_b { SkyMask::ON } else { 0.0 })
        .collect();
    Ok(SkyMask {
        field: FieldImage::from_parts(gray.shape(), data),
    })
}

/// `T = s * raw + (1 - s) * refined` with `s = sky / 255`.
pub fn blend_sky(raw: &FieldImage, refined: &FieldImage, sky: &SkyMask) -> Result<FieldImage> {
    raw.ensure_same_shape(refined, "refined transmission")?;
    raw.ensure_same_shape(sky.as_field(), "sky mask")?;
    let data = raw
        .data()
        .iter()
        .zip(refined.data())
        .zip(sky.values())
        .map(|((&r, &f), &s)| {
            let s = s / SkyMask::ON;
            s * r + (1.0 - s) * f
        })
        .collect();
    Ok(FieldImage::from_parts(raw.shape(), data))
}

/// Final map plus the intermediates of every stage.
#[derive(Clone, Debug)]
pub struct TransmissionEstimate {
    pub map: TransmissionMap,
    pub airlight: f64,
    pub dark: PixelImage,
    pub raw: FieldImage,
    pub gray: PixelImage,
    /// Smoothed gradient, normalised by the Sobel maximum.
    pub gradient: FieldImage,
    pub sky: SkyMask,
    pub sky_smooth: SkyMask,
    pub refined: FieldImage,
}

pub fn estimate_transmission(img: &PixelImage, params: &DcpParams) -> Result<TransmissionEstimate> {
    params.validate()?;
    require_rgb(img, "transmission input")?;
    let dark = dark_channel(img, params.window)?;
    let airlight = estimate_airlight(img, &dark)?;
    estimate_transmission_with_airlight(img, airlight, params)
}

/// Same pipeline with an externally supplied airlight.
pub fn estimate_transmission_with_airlight(
    img: &PixelImage,
    airlight: f64,
    params: &DcpParams,
) -> Result<TransmissionEstimate> {
    params.validate()?;
    require_rgb(img, "transmission input")?;
    if !(airlight > 0.0 && airlight <= 1.0) {
        return Err(Error::param(format!("airlight {airlight} outside (0, 1]")));
    }
    let dark = dark_channel(img, params.window)?;
    let raw = dark.as_field().map(|d| 1.0 - params.omega * d / airlight);

    let gray = filters::grayscale(img);
    let sobel = filters::sobel_magnitude(&gray)?.map(|g| g / SOBEL_MAX);
    let gradient = filters::gaussian_blur(&sobel, params.grad_sigma)?;

    let sky = make_sky_mask(&gray, &gradient, params.tau_g, params.tau_b)?;
    let sky_smooth = sky.feather(params.feather_sigma)?;
    let refined = filters::guided_filter(&raw, &gray, params.guided_radius, params.guided_reg)?;
    let blended = blend_sky(&raw, &refined, &sky_smooth)?;
    let floored = blended.map(|t| t.clamp(params.t0, 1.0));
    let map = TransmissionMap::from_field(floored, params.t0)?;

    Ok(TransmissionEstimate {
        map,
        airlight,
        dark,
        raw,
        gray,
        gradient,
        sky,
        sky_smooth,
        refined,
    })
}
