//! Synthetic fundus rasters with known ground truth, and the forward camera
//! model matching [`super::pixel_to_polar`].

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FundusImageMeta;
use crate::error::{Error, Result};
use crate::geometry::{EyeModel, SphericalPoint};

#[derive(Debug, Clone, Copy)]
pub struct DiscStyle {
    pub foreground: f64,
    pub background: f64,
    /// Relative brightness drop from the disc centre to its rim.
    pub vignette: f64,
}

impl Default for DiscStyle {
    fn default() -> Self {
        Self {
            foreground: 200.0,
            background: 8.0,
            vignette: 0.25,
        }
    }
}

fn shade(style: &DiscStyle, coverage: f64, rho: f64) -> Luma<u8> {
    let fg = style.foreground * (1.0 - style.vignette * rho.min(1.0).powi(2));
    let v = style.background + (fg - style.background) * coverage.clamp(0.0, 1.0);
    Luma([v.round().clamp(0.0, 255.0) as u8])
}

/// Bright disc with an anti-aliased rim. `center` is in raster coordinates
/// with pixel centres at integers.
pub fn render_disc(width: u32, height: u32, center: [f64; 2], diameter: f64, style: &DiscStyle) -> GrayImage {
    let radius = diameter / 2.0;
    GrayImage::from_fn(width, height, |x, y| {
        let d = (x as f64 - center[0]).hypot(y as f64 - center[1]);
        shade(style, radius - d + 0.5, d / radius)
    })
}

/// Axis-aligned ellipse with semi-axes `[a, b]` along columns and rows.
pub fn render_ellipse(width: u32, height: u32, center: [f64; 2], semi_axes: [f64; 2], style: &DiscStyle) -> GrayImage {
    let mean = 0.5 * (semi_axes[0] + semi_axes[1]);
    GrayImage::from_fn(width, height, |x, y| {
        let dx = (x as f64 - center[0]) / semi_axes[0];
        let dy = (y as f64 - center[1]) / semi_axes[1];
        let rho = dx.hypot(dy);
        shade(style, (1.0 - rho) * mean + 0.5, rho)
    })
}

/// Replaces `fraction` of the pixels with uniform random values.
pub fn add_speckle(img: &mut GrayImage, fraction: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in img.pixels_mut() {
        if rng.gen_bool(fraction) {
            p[0] = rng.gen();
        }
    }
}

/// Raster position at which a retinal point appears on a calibrated image.
pub fn project_to_raster(p: &SphericalPoint, meta: &FundusImageMeta, eye: &EyeModel) -> Result<[f64; 2]> {
    if p.polar_deg < 90.0 {
        return Err(Error::InvalidInput(format!(
            "polar {} is on the anterior hemisphere and not imaged",
            p.polar_deg
        )));
    }
    let off = (180.0 - p.polar_deg).to_radians();
    let (sa, ca) = p.azimuth_deg.to_radians().sin_cos();
    let l_mm = eye.radius_mm * off.sin();
    let x = l_mm * sa / meta.mm_per_px;
    let y = l_mm * ca / meta.mm_per_px;
    Ok([meta.detected_center_px[0] + x, meta.detected_center_px[1] - y])
}
