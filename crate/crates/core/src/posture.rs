//! Eye tilt proposal: the tilt (α about X, β about Y) that moves the centre of
//! the microscope's visible area onto a target.
//!
//! Tilting the eye by θ shifts the visible-area centre by −2θ from the
//! posterior pole, so the visible centre after a tilt is
//! `roty(−2β)·rotx(−2α)·[0, 0, −r]`, and solving that for the target gives
//! `α = ½·asin(−y/r)`, `β = ½·asin(x/(r·cos2α))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EyeModel, SphericalPoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct EyeTiltProposal {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub clamped: bool,
    /// Visible-area centre with the proposed (possibly clamped) tilt.
    pub fov_center_after: SphericalPoint,
    /// Straight-line distance from that centre to the target, mm.
    pub residual_mm: f64,
    /// Tilt before clamping.
    pub requested_alpha_deg: f64,
    pub requested_beta_deg: f64,
}

/// Closed form of the visible-area centre, relative to the eye centre.
pub fn fov_center_vector(alpha_deg: f64, beta_deg: f64, radius_mm: f64) -> Vec3 {
    let (s2a, c2a) = (2.0 * alpha_deg).to_radians().sin_cos();
    let (s2b, c2b) = (2.0 * beta_deg).to_radians().sin_cos();
    Vec3::new(
        radius_mm * s2b * c2a,
        -radius_mm * s2a,
        -radius_mm * c2a * c2b,
    )
}

pub fn fov_center_after_tilt(alpha_deg: f64, beta_deg: f64, eye: &EyeModel) -> SphericalPoint {
    crate::geometry::direction_to_spherical(&fov_center_vector(alpha_deg, beta_deg, eye.radius_mm))
}

pub fn solve_eye_tilt(target: &SphericalPoint, eye: &EyeModel) -> Result<EyeTiltProposal> {
    let r = eye.radius_mm;
    let p = target.unit_vector() * r;
    let alpha = 0.5 * (-p.y / r).clamp(-1.0, 1.0).asin().to_degrees();
    let denom = r * (2.0 * alpha).to_radians().cos();
    let ratio = p.x / denom;
    if !ratio.is_finite() || ratio.abs() > 1.0 + 1e-12 {
        return Err(Error::Unreachable(format!(
            "x/(r·cos2α) = {ratio:.4} for target {target:?}"
        )));
    }
    let beta = 0.5 * ratio.clamp(-1.0, 1.0).asin().to_degrees();

    // Anterior targets satisfy the x/y equations but not z.
    let exact = fov_center_vector(alpha, beta, r);
    if (exact - p).norm() > 1e-6 {
        return Err(Error::Unreachable(format!(
            "target {target:?} is not on the posterior side reachable by tilting"
        )));
    }

    // Values within rounding of the limit count as reachable.
    let limit = eye.tilt_limit_deg;
    let clamp = |t: f64| if t.abs() > limit + 1e-9 { t.clamp(-limit, limit) } else { t };
    let (a, b) = (clamp(alpha), clamp(beta));
    let clamped = a != alpha || b != beta;
    let fov = fov_center_vector(a, b, r);
    Ok(EyeTiltProposal {
        alpha_deg: a,
        beta_deg: b,
        clamped,
        fov_center_after: crate::geometry::direction_to_spherical(&fov),
        residual_mm: (fov - p).norm(),
        requested_alpha_deg: alpha,
        requested_beta_deg: beta,
    })
}
