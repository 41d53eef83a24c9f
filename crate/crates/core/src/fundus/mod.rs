//! Fundus image ingestion: boundary detection, pixel → retinal position, and
//! the visual/optical axis compensation.
//!
//! The fundus image is treated as an orthographic projection of the retinal
//! cap onto the XY plane, viewed from the cornea: image +x is world +X and
//! image +y (up) is world +Y.

mod boundary;
pub mod synth;

pub use boundary::{detect_fundus_boundary, BoundaryOptions};

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_x, EyeModel, RetinalTarget, SphericalPoint, TargetSource};

pub const DEFAULT_KAPPA_DEG: f64 = 5.0;
pub const DEFAULT_NODAL_OFFSET_MM: f64 = 16.4;

/// Calibration of a fundus image: where the imaged disc is and how many mm a
/// pixel spans on the projection plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FundusImageMeta {
    pub width_px: u32,
    pub height_px: u32,
    pub view_angle_deg: f64,
    /// Raster coordinates (column, row) of the disc centre.
    pub detected_center_px: [f64; 2],
    pub detected_diameter_px: f64,
    pub mm_per_px: f64,
}

impl FundusImageMeta {
    pub fn new(
        width_px: u32,
        height_px: u32,
        view_angle_deg: f64,
        detected_center_px: [f64; 2],
        detected_diameter_px: f64,
        eye: &EyeModel,
    ) -> Result<Self> {
        if !(detected_diameter_px.is_finite() && detected_diameter_px > 0.0) {
            return Err(Error::InvalidInput("detected diameter must be positive".into()));
        }
        if !(view_angle_deg > 0.0 && view_angle_deg < 180.0) {
            return Err(Error::InvalidInput(format!(
                "view angle {view_angle_deg} outside (0, 180)"
            )));
        }
        let mm_per_px = field_of_view_diameter_mm(view_angle_deg, eye.radius_mm) / detected_diameter_px;
        Ok(Self {
            width_px,
            height_px,
            view_angle_deg,
            detected_center_px,
            detected_diameter_px,
            mm_per_px,
        })
    }

    pub fn fov_diameter_mm(&self, eye: &EyeModel) -> f64 {
        field_of_view_diameter_mm(self.view_angle_deg, eye.radius_mm)
    }
}

/// Diameter of the imaged retinal cap projected on the image plane.
pub fn field_of_view_diameter_mm(view_angle_deg: f64, radius_mm: f64) -> f64 {
    2.0 * radius_mm * (view_angle_deg / 2.0).to_radians().sin()
}

/// A click expressed relative to the detected disc centre, image +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelTarget {
    pub x_px: f64,
    pub y_px: f64,
}

impl PixelTarget {
    pub fn new(x_px: f64, y_px: f64) -> Self {
        Self { x_px, y_px }
    }

    /// From raster coordinates (column right, row down).
    pub fn from_raster(col: f64, row: f64, meta: &FundusImageMeta) -> Self {
        Self {
            x_px: col - meta.detected_center_px[0],
            y_px: meta.detected_center_px[1] - row,
        }
    }

    pub fn l_pixel(&self) -> f64 {
        self.x_px.hypot(self.y_px)
    }
}

/// Converts a click into a retinal position. The returned polar angle is
/// measured from the corneal pole, so the image centre maps to 180°.
pub fn pixel_to_polar(t: &PixelTarget, meta: &FundusImageMeta, eye: &EyeModel) -> Result<SphericalPoint> {
    let ratio = t.l_pixel() * meta.mm_per_px / eye.radius_mm;
    if !ratio.is_finite() || ratio > 1.0 {
        return Err(Error::OutOfField { ratio });
    }
    let offset_from_pole = ratio.asin().to_degrees();
    let azimuth = if t.x_px == 0.0 && t.y_px == 0.0 {
        0.0
    } else {
        t.x_px.atan2(t.y_px).to_degrees()
    };
    SphericalPoint::new(180.0 - offset_from_pole, azimuth)
}

/// Angle between the visual and optical axes and where the fovea ends up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCompensation {
    pub kappa_deg: f64,
    pub nodal_offset_mm: f64,
    pub kappa2_deg: f64,
}

impl AxisCompensation {
    pub fn new(kappa_deg: f64, nodal_offset_mm: f64, eye: &EyeModel) -> Result<Self> {
        let kappa2_deg = solve_kappa2(kappa_deg, nodal_offset_mm, eye)?;
        Ok(Self {
            kappa_deg,
            nodal_offset_mm,
            kappa2_deg,
        })
    }

    pub fn standard(eye: &EyeModel) -> Result<Self> {
        Self::new(DEFAULT_KAPPA_DEG, DEFAULT_NODAL_OFFSET_MM, eye)
    }
}

/// Fovea offset from the posterior pole.
///
/// Works in the plane containing the optical axis, with `x` along the axis
/// (posterior pole at `x = +r`) and the origin at the eye centre. The visual
/// axis passes through the nodal point `l_nodal` in front of the posterior
/// pole at angle κ; its intersection with the eye circle nearest the posterior
/// pole is the fovea.
pub fn solve_kappa2(kappa_deg: f64, nodal_offset_mm: f64, eye: &EyeModel) -> Result<f64> {
    let r = eye.radius_mm;
    let t = kappa_deg.to_radians().tan();
    let c = nodal_offset_mm - r;
    if !t.is_finite() {
        return Err(Error::NoSolution(format!("kappa {kappa_deg}° has no finite slope")));
    }
    // (1 + t²)x² + 2t²c·x + t²c² − r² = 0
    let a = 1.0 + t * t;
    let b = 2.0 * t * t * c;
    let cc = t * t * c * c - r * r;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return Err(Error::NoSolution(format!(
            "line through nodal point at {nodal_offset_mm} mm misses the eye"
        )));
    }
    let x = (-b + disc.sqrt()) / (2.0 * a);
    let y = t * (x + c);
    Ok((y / r).clamp(-1.0, 1.0).asin().to_degrees())
}

/// Rotates a reconstructed target about X by κ₂ so the image centre lands on
/// the fovea rather than the posterior pole.
pub fn compensate_visual_axis(p: &SphericalPoint, c: &AxisCompensation, eye: &EyeModel) -> Result<SphericalPoint> {
    let rel = p.unit_vector() * eye.radius_mm;
    let rotated = eye.center + rot_x(c.kappa2_deg) * rel;
    eye.cartesian_to_spherical(&rotated)
}

/// JSON sidecar accompanying a fundus image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FundusSidecar {
    pub view_angle_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_center_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_diameter_px: Option<f64>,
}

pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::ImageUnreadable(format!("{}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

/// Builds the image calibration, detecting the disc unless both manual
/// overrides are supplied. A partial override replaces only its own field.
pub fn calibrate(image: Option<&GrayImage>, sidecar: &FundusSidecar, eye: &EyeModel) -> Result<FundusImageMeta> {
    let (w, h) = image.map(|i| i.dimensions()).unwrap_or((0, 0));
    let (center, diameter) = match (sidecar.manual_center_px, sidecar.manual_diameter_px) {
        (Some(c), Some(d)) => (c, d),
        (mc, md) => {
            let img = image.ok_or_else(|| {
                Error::ImageUnreadable("no image given and no manual calibration in sidecar".into())
            })?;
            let found = detect_fundus_boundary(img, &BoundaryOptions::default())?;
            (
                mc.unwrap_or(found.center_px),
                md.unwrap_or(found.diameter_px),
            )
        }
    };
    FundusImageMeta::new(w, h, sidecar.view_angle_deg, center, diameter, eye)
}

/// Click in raster coordinates → retinal target, optionally compensated.
pub fn reconstruct_target(
    col: f64,
    row: f64,
    meta: &FundusImageMeta,
    eye: &EyeModel,
    compensation: Option<&AxisCompensation>,
) -> Result<RetinalTarget> {
    let pixel = PixelTarget::from_raster(col, row, meta);
    // Half a pixel of slack for clicks on the rim itself.
    let rim = meta.detected_diameter_px / 2.0;
    if pixel.l_pixel() > rim + 0.5 {
        return Err(Error::OutOfField { ratio: pixel.l_pixel() / rim });
    }
    let mut p = pixel_to_polar(&pixel, meta, eye)?;
    if let Some(c) = compensation {
        p = compensate_visual_axis(&p, c, eye)?;
    }
    Ok(RetinalTarget {
        polar_deg: p.polar_deg,
        azimuth_deg: p.azimuth_deg,
        source: TargetSource::Pixel,
        compensated: compensation.is_some(),
        pixel: Some([col, row]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn eye() -> EyeModel {
        EyeModel::default()
    }

    fn meta60() -> FundusImageMeta {
        FundusImageMeta::new(1024, 1024, 60.0, [512.0, 512.0], 900.0, &eye()).unwrap()
    }

    #[test]
    fn conversion_factor_chain() {
        let m = meta60();
        let d_fov = 2.0 * 12.1 * 30f64.to_radians().sin();
        assert!((m.mm_per_px * m.detected_diameter_px - d_fov).abs() <= 1e-12 * d_fov);
        assert!(FundusImageMeta::new(10, 10, 60.0, [5.0, 5.0], 0.0, &eye()).is_err());
    }

    #[test]
    fn center_click_is_posterior_pole() {
        let p = pixel_to_polar(&PixelTarget::new(0.0, 0.0), &meta60(), &eye()).unwrap();
        assert_eq!(p.polar_deg, 180.0);
        assert_eq!(p.azimuth_deg, 0.0);
    }

    #[test]
    fn rim_click_at_sixty_degree_view() {
        let m = meta60();
        for (x, y, az) in [(450.0, 0.0, 90.0), (0.0, 450.0, 0.0), (0.0, -450.0, 180.0), (-450.0, 0.0, -90.0)] {
            let p = pixel_to_polar(&PixelTarget::new(x, y), &m, &eye()).unwrap();
            assert!((p.polar_deg - 150.0).abs() < 1e-9, "{p:?}");
            assert!((p.azimuth_deg - az).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn outside_hemisphere_is_rejected() {
        let m = meta60();
        // l·k = r needs l = r / k = 12.1 / (12.1/900) = 900 px.
        assert!(matches!(
            pixel_to_polar(&PixelTarget::new(901.0, 0.0), &m, &eye()),
            Err(Error::OutOfField { .. })
        ));
    }

    #[test]
    fn pixel_to_polar_is_monotone() {
        let m = meta60();
        let mut last = -1.0;
        for i in 0..=890 {
            let p = pixel_to_polar(&PixelTarget::new(i as f64 * 0.6, i as f64 * 0.8), &m, &eye()).unwrap();
            let off = 180.0 - p.polar_deg;
            assert!(off > last || i == 0);
            last = off;
        }
    }

    #[test]
    fn kappa2_defaults() {
        let k2 = solve_kappa2(5.0, 16.4, &eye()).unwrap();
        assert!((k2 - 6.77).abs() < 0.01, "{k2}");
        assert_eq!(solve_kappa2(0.0, 16.4, &eye()).unwrap(), 0.0);
    }

    #[test]
    fn kappa2_matches_circle_scan() {
        // Walk the circle (r cos t, r sin t) near the posterior pole and find
        // where it crosses the visual axis line.
        let r = 12.1f64;
        let slope = 5f64.to_radians().tan();
        let c = 16.4 - r;
        let f = |t: f64| r * t.sin() - slope * (r * t.cos() + c);
        let step = 1e-6;
        let mut t = -0.5;
        let mut prev = f(t);
        let mut crossing = None;
        while t < 0.5 {
            let next = f(t + step);
            if prev.signum() != next.signum() {
                crossing = Some(t + step * prev.abs() / (prev.abs() + next.abs()));
                break;
            }
            prev = next;
            t += step;
        }
        let t = crossing.expect("scan found no crossing");
        let scanned = (r * t.sin() / r).asin().to_degrees();
        let solved = solve_kappa2(5.0, 16.4, &eye()).unwrap();
        assert!((scanned - solved).abs() < 1e-4, "{scanned} vs {solved}");
    }

    #[test]
    fn kappa2_without_intersection() {
        // Nodal point far outside the eye with a steep axis never meets it.
        assert!(matches!(solve_kappa2(60.0, 200.0, &eye()), Err(Error::NoSolution(_))));
    }

    #[test]
    fn compensation_moves_pole_toward_plus_y() {
        let e = eye();
        let c = AxisCompensation::new(5.0, 16.4, &e).unwrap();
        let p = compensate_visual_axis(&SphericalPoint::posterior_pole(), &c, &e).unwrap();
        assert!((p.polar_deg - (180.0 - c.kappa2_deg)).abs() < 1e-9);
        assert!(p.azimuth_deg.abs() < 1e-9);
        let v = e.spherical_to_cartesian(&p);
        let k = c.kappa2_deg.to_radians();
        assert!((v - Vec3::new(0.0, 12.1 * k.sin(), -12.1 * k.cos())).norm() < 1e-9);
    }

    #[test]
    fn zero_compensation_is_identity() {
        let e = eye();
        let c = AxisCompensation::new(0.0, 16.4, &e).unwrap();
        let p = SphericalPoint::new(163.0, 41.0).unwrap();
        let q = compensate_visual_axis(&p, &c, &e).unwrap();
        assert!((q.polar_deg - p.polar_deg).abs() < 1e-9 && (q.azimuth_deg - p.azimuth_deg).abs() < 1e-9);
    }

    #[test]
    fn compensation_keeps_points_on_sphere() {
        let e = EyeModel {
            center: Vec3::new(0.3, 0.0, -1.0),
            ..eye()
        };
        let c = AxisCompensation::standard(&e).unwrap();
        for i in 0..50 {
            let p = SphericalPoint::new(130.0 + i as f64, i as f64 * 7.0).unwrap();
            let q = compensate_visual_axis(&p, &c, &e).unwrap();
            let v = e.spherical_to_cartesian(&q);
            assert!(((v - e.center).norm() - e.radius_mm).abs() < 1e-9);
        }
    }

    #[test]
    fn manual_calibration_skips_detection() {
        let sc = FundusSidecar {
            view_angle_deg: 45.0,
            manual_center_px: Some([100.0, 120.0]),
            manual_diameter_px: Some(180.0),
        };
        let m = calibrate(None, &sc, &eye()).unwrap();
        assert_eq!(m.detected_center_px, [100.0, 120.0]);
        let partial = FundusSidecar {
            manual_diameter_px: None,
            ..sc
        };
        assert!(matches!(calibrate(None, &partial, &eye()), Err(Error::ImageUnreadable(_))));
    }

    #[test]
    fn raster_click_flips_rows() {
        let m = meta60();
        let t = reconstruct_target(512.0, 62.0, &m, &eye(), None).unwrap();
        // 450 px straight up: +Y, rim of the 60° field.
        assert!((t.polar_deg - 150.0).abs() < 1e-9);
        assert!(t.azimuth_deg.abs() < 1e-9);
        assert_eq!(t.source, TargetSource::Pixel);
        assert!(!t.compensated);
    }
}
