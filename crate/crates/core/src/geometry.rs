//! Frames, rotations and spherical geometry shared by every planning stage.
//!
//! World frame: origin at the eye centre, +Z from the centre toward the
//! cornea, +Y toward the 3-o'clock trocar ring, +X completing a right-handed
//! frame. The posterior pole is therefore `[0, 0, -r]`.
//!
//! Spherical coordinates measure the polar angle from +Z (corneal pole, so
//! the posterior pole is 180°) and the azimuth in the XY plane from +Y toward
//! +X.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Default eyeball radius in mm.
pub const DEFAULT_EYE_RADIUS_MM: f64 = 12.1;
/// Default eye tilt limit per axis, degrees.
pub const DEFAULT_TILT_LIMIT_DEG: f64 = 10.0;

const SPHERE_TOLERANCE_MM: f64 = 1e-6;

/// Right-handed rotation about X.
pub fn rot_x(angle_deg: f64) -> Mat3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Right-handed rotation about Y.
pub fn rot_y(angle_deg: f64) -> Mat3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Right-handed rotation about Z.
pub fn rot_z(angle_deg: f64) -> Mat3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Unsigned angle between two vectors, degrees. Uses atan2 so it stays
/// accurate near 0° and 180°.
pub fn angle_between_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Normalizes an azimuth into (−180, 180].
pub fn normalize_azimuth(azimuth_deg: f64) -> f64 {
    let mut a = azimuth_deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SphericalPoint {
    pub polar_deg: f64,
    pub azimuth_deg: f64,
}

impl SphericalPoint {
    pub fn new(polar_deg: f64, azimuth_deg: f64) -> Result<Self> {
        if !polar_deg.is_finite() || !azimuth_deg.is_finite() {
            return Err(Error::InvalidInput("non-finite spherical coordinate".into()));
        }
        if !(0.0..=180.0).contains(&polar_deg) {
            return Err(Error::InvalidInput(format!(
                "polar angle {polar_deg} outside [0, 180]"
            )));
        }
        Ok(Self {
            polar_deg,
            azimuth_deg: normalize_azimuth(azimuth_deg),
        })
    }

    pub fn posterior_pole() -> Self {
        Self {
            polar_deg: 180.0,
            azimuth_deg: 0.0,
        }
    }

    /// Unit direction from the eye centre.
    pub fn unit_vector(&self) -> Vec3 {
        let (sp, cp) = self.polar_deg.to_radians().sin_cos();
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        Vec3::new(sp * sa, sp * ca, cp)
    }
}

/// Spherical eyeball with its current tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeModel {
    pub radius_mm: f64,
    pub center: Vec3,
    pub tilt_alpha_deg: f64,
    pub tilt_beta_deg: f64,
    pub tilt_limit_deg: f64,
}

impl Default for EyeModel {
    fn default() -> Self {
        Self {
            radius_mm: DEFAULT_EYE_RADIUS_MM,
            center: Vec3::zeros(),
            tilt_alpha_deg: 0.0,
            tilt_beta_deg: 0.0,
            tilt_limit_deg: DEFAULT_TILT_LIMIT_DEG,
        }
    }
}

impl EyeModel {
    pub fn new(radius_mm: f64) -> Result<Self> {
        let eye = Self {
            radius_mm,
            ..Self::default()
        };
        eye.validate()?;
        Ok(eye)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "eye radius must be positive, got {}",
                self.radius_mm
            )));
        }
        if !(self.tilt_limit_deg.is_finite() && self.tilt_limit_deg >= 0.0) {
            return Err(Error::InvalidInput("tilt limit must be non-negative".into()));
        }
        for (name, t) in [("alpha", self.tilt_alpha_deg), ("beta", self.tilt_beta_deg)] {
            if !t.is_finite() || t.abs() > self.tilt_limit_deg + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "tilt {name} = {t} exceeds ±{}",
                    self.tilt_limit_deg
                )));
            }
        }
        Ok(())
    }

    /// Same eye carrying a different tilt.
    pub fn with_tilt(&self, alpha_deg: f64, beta_deg: f64) -> Result<Self> {
        let eye = Self {
            tilt_alpha_deg: alpha_deg,
            tilt_beta_deg: beta_deg,
            ..*self
        };
        eye.validate()?;
        Ok(eye)
    }

    /// Rigid rotation carried by the eye when tilted: `roty(β)·rotx(α)`.
    pub fn tilt_rotation(&self) -> Mat3 {
        rot_y(self.tilt_beta_deg) * rot_x(self.tilt_alpha_deg)
    }

    /// Maps an eye-frame point (untilted) into the world with the current tilt.
    pub fn tilt_point(&self, p: &Vec3) -> Vec3 {
        self.center + self.tilt_rotation() * (p - self.center)
    }

    /// Inverse of [`EyeModel::tilt_point`].
    pub fn untilt_point(&self, p: &Vec3) -> Vec3 {
        self.center + self.tilt_rotation().transpose() * (p - self.center)
    }

    pub fn spherical_to_cartesian(&self, p: &SphericalPoint) -> Vec3 {
        self.center + p.unit_vector() * self.radius_mm
    }

    /// Rejects points farther than 1e−6 mm from the sphere.
    pub fn cartesian_to_spherical(&self, p: &Vec3) -> Result<SphericalPoint> {
        let rel = p - self.center;
        let dist = rel.norm();
        let off = dist - self.radius_mm;
        if off.abs() > SPHERE_TOLERANCE_MM {
            return Err(Error::OffSphere { distance_mm: off });
        }
        Ok(direction_to_spherical(&rel))
    }

    /// Great-circle distance between two points on the sphere, mm.
    pub fn geodesic_mm(&self, a: &Vec3, b: &Vec3) -> f64 {
        angle_between_deg(&(a - self.center), &(b - self.center)).to_radians() * self.radius_mm
    }

    /// Projects an arbitrary point radially onto the sphere.
    pub fn project_to_sphere(&self, p: &Vec3) -> Result<Vec3> {
        let rel = p - self.center;
        let n = rel.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "cannot project the eye centre onto the sphere".into(),
            ));
        }
        Ok(self.center + rel * (self.radius_mm / n))
    }
}

/// Spherical angles of a (non-zero) direction vector.
pub fn direction_to_spherical(v: &Vec3) -> SphericalPoint {
    let n = v.norm();
    let polar = (v.z / n).clamp(-1.0, 1.0).acos().to_degrees();
    let azimuth = if v.x == 0.0 && v.y == 0.0 {
        0.0
    } else {
        v.x.atan2(v.y).to_degrees()
    };
    SphericalPoint {
        polar_deg: polar,
        azimuth_deg: normalize_azimuth(azimuth),
    }
}

/// Where a retinal target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Picked on a fundus image and reconstructed.
    Pixel,
    /// Defined directly in polar coordinates.
    Polar,
}

/// Target on the retina in both spherical and Cartesian (world, untilted) form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RetinalTarget {
    pub polar_deg: f64,
    pub azimuth_deg: f64,
    pub source: TargetSource,
    pub compensated: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel: Option<[f64; 2]>,
}

impl RetinalTarget {
    pub fn from_polar(p: SphericalPoint) -> Self {
        Self {
            polar_deg: p.polar_deg,
            azimuth_deg: p.azimuth_deg,
            source: TargetSource::Polar,
            compensated: false,
            pixel: None,
        }
    }

    pub fn spherical(&self) -> SphericalPoint {
        SphericalPoint {
            polar_deg: self.polar_deg,
            azimuth_deg: self.azimuth_deg,
        }
    }

    pub fn cartesian(&self, eye: &EyeModel) -> Vec3 {
        eye.spherical_to_cartesian(&self.spherical())
    }
}

/// Straight instrument constrained to pass through a remote centre of motion.
///
/// `p5` (the end of the last robot joint) sits `instrument_length` behind the
/// tip; `lambda` places the RCM on the segment: `rcm − p5 = λ·(tip − p5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentLine {
    pub rcm_point: Vec3,
    pub direction: Vec3,
    pub tip_point: Vec3,
    pub lambda: f64,
}

impl InstrumentLine {
    /// Line through `rcm_point` along `direction` with the tip `depth_mm`
    /// beyond the RCM.
    pub fn from_rcm(rcm_point: Vec3, direction: Vec3, depth_mm: f64, instrument_length_mm: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::InvalidInput("instrument direction must be non-zero".into()));
        }
        if !(instrument_length_mm > 0.0) {
            return Err(Error::InvalidInput("instrument length must be positive".into()));
        }
        let direction = direction / n;
        Ok(Self {
            rcm_point,
            direction,
            tip_point: rcm_point + direction * depth_mm,
            lambda: (instrument_length_mm - depth_mm) / instrument_length_mm,
        })
    }

    /// End of the last joint, `instrument_length` behind the tip.
    pub fn p5(&self, instrument_length_mm: f64) -> Vec3 {
        self.tip_point - self.direction * instrument_length_mm
    }

    /// Signed distance from the RCM to the tip along the direction.
    pub fn depth(&self) -> f64 {
        (self.tip_point - self.rcm_point).dot(&self.direction)
    }

    /// Distance from the RCM point to the line through the tip.
    pub fn rcm_residual(&self) -> f64 {
        let d = self.rcm_point - self.tip_point;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

/// Distance along the instrument from the RCM to the distal (retina-side)
/// intersection with the eye sphere.
pub fn line_sphere_depth(line: &InstrumentLine, eye: &EyeModel) -> Result<f64> {
    ray_sphere_depth(&line.rcm_point, &line.direction, eye)
}

pub(crate) fn ray_sphere_depth(origin: &Vec3, direction: &Vec3, eye: &EyeModel) -> Result<f64> {
    let r = eye.radius_mm;
    let oc = origin - eye.center;
    if (oc.norm() - r).abs() > 2.0 {
        return Err(Error::InvalidInput(format!(
            "RCM point {:.3} mm from the sphere surface (limit 2 mm)",
            (oc.norm() - r).abs()
        )));
    }
    let dir = direction.normalize();
    let b = dir.dot(&oc);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc.abs() < 1e-12 {
        return Ok(-b);
    }
    if disc < 0.0 {
        return Err(Error::NoIntersection);
    }
    let far = -b + disc.sqrt();
    if far < 0.0 {
        return Err(Error::NoIntersection);
    }
    Ok(far)
}
