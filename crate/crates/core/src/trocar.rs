//! Trocar layout and approach planning: which trocar to use, the robot's
//! initial tilt about X, and the residual rotation about Y (γ) that the PCJM
//! initial position has to absorb.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EyeModel, SphericalPoint, Vec3};
use crate::robot::RobotMount;

pub const DEFAULT_RING_POLAR_DEG: f64 = 45.0;
pub const DEFAULT_AZIMUTH_OFFSETS_DEG: [f64; 3] = [-20.0, 0.0, 20.0];
/// Robot tilt band (centre ± half width), degrees.
pub const DEFAULT_THETA_INI_BAND_DEG: [f64; 2] = [15.0, 31.0];

/// Which side of the eye the instrument trocars are planted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TrocarSide {
    /// Ring centred on +Y.
    ThreeOClock,
    /// Ring centred on −Y.
    NineOClock,
}

impl TrocarSide {
    pub fn base_azimuth_deg(self) -> f64 {
        match self {
            TrocarSide::ThreeOClock => 0.0,
            TrocarSide::NineOClock => 180.0,
        }
    }

    /// The robot stands on the trocar side, facing the eye.
    pub fn mount(self) -> RobotMount {
        RobotMount::new(self.base_azimuth_deg())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trocar {
    pub position: SphericalPoint,
    pub world: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrocarLayout {
    pub trocars: Vec<Trocar>,
    pub ring_polar_deg: f64,
    pub side: TrocarSide,
    pub azimuth_offsets_deg: [f64; 3],
}

impl TrocarLayout {
    pub fn new(ring_polar_deg: f64, side: TrocarSide, azimuth_offsets_deg: [f64; 3], eye: &EyeModel) -> Result<Self> {
        if !(ring_polar_deg > 0.0 && ring_polar_deg < 180.0) {
            return Err(Error::InvalidInput(format!("ring polar angle {ring_polar_deg} outside (0, 180)")));
        }
        let trocars = azimuth_offsets_deg
            .iter()
            .map(|off| {
                let position = SphericalPoint::new(ring_polar_deg, side.base_azimuth_deg() + off)?;
                Ok(Trocar {
                    position,
                    world: eye.spherical_to_cartesian(&position),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trocars,
            ring_polar_deg,
            side,
            azimuth_offsets_deg,
        })
    }

    pub fn standard(side: TrocarSide, eye: &EyeModel) -> Result<Self> {
        Self::new(DEFAULT_RING_POLAR_DEG, side, DEFAULT_AZIMUTH_OFFSETS_DEG, eye)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.trocars.iter().map(|t| t.world).collect()
    }
}

/// Rigidly carries trocars and targets with the eye tilt `roty(β)·rotx(α)`.
pub fn rotate_scene(trocars: &[Vec3], targets: &[Vec3], alpha_deg: f64, beta_deg: f64, eye: &EyeModel) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let tilted = eye.with_tilt(alpha_deg, beta_deg)?;
    Ok((
        trocars.iter().map(|p| tilted.tilt_point(p)).collect(),
        targets.iter().map(|p| tilted.tilt_point(p)).collect(),
    ))
}

const TIE_TOLERANCE_MM: f64 = 1e-9;

/// Index of the trocar closest to the target along X. Ties go to the middle
/// trocar, then to the lower index.
pub fn select_trocar(trocars: &[Vec3], target: &Vec3) -> usize {
    let dx: Vec<f64> = trocars.iter().map(|t| (t.x - target.x).abs()).collect();
    let best = dx.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..dx.len()).filter(|&i| dx[i] - best <= TIE_TOLERANCE_MM).collect();
    let middle = trocars.len() / 2;
    if tied.contains(&middle) {
        middle
    } else {
        tied[0]
    }
}

fn yz_projection(v: &Vec3) -> Result<Vec3> {
    let p = Vec3::new(0.0, v.y, v.z);
    if p.norm() < 1e-9 {
        return Err(Error::DegenerateApproach);
    }
    Ok(p)
}

/// Robot tilt about X from the approach vector (robot frame), measured from
/// the vertical: 0° points straight down −Z, positive pitches the instrument
/// toward −Y (away from the robot, into the eye).
pub fn initial_tilt(v_robot: &Vec3) -> Result<f64> {
    let p = yz_projection(v_robot)?;
    Ok((-p.y).atan2(-p.z).to_degrees())
}

/// Angle between the approach vector and its YZ projection, signed like θ₂:
/// negative when the target lies toward +X of the trocar.
pub fn refinement_angle(v_robot: &Vec3) -> Result<f64> {
    let p = yz_projection(v_robot)?;
    let unsigned = v_robot.x.abs().atan2(p.norm()).to_degrees();
    Ok(if v_robot.x > 0.0 { -unsigned } else { unsigned })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ApproachPlan {
    pub selected_index: usize,
    /// Selected trocar after the eye tilt (world).
    #[schemars(with = "[f64; 3]")]
    pub trocar_after: Vec3,
    /// Target (centroid) after the eye tilt (world).
    #[schemars(with = "[f64; 3]")]
    pub target_after: Vec3,
    /// Trocar → target, robot frame.
    #[schemars(with = "[f64; 3]")]
    pub v_trocar2target: Vec3,
    pub theta_ini_deg: f64,
    pub gamma_deg: f64,
    pub theta_ini_in_band: bool,
}

/// Trocar selection plus θ_ini and γ for a tilted scene.
pub fn plan_approach(trocars_after: &[Vec3], target_after: &Vec3, mount: &RobotMount, theta_ini_band_deg: [f64; 2]) -> Result<ApproachPlan> {
    if trocars_after.is_empty() {
        return Err(Error::InvalidInput("no trocars to choose from".into()));
    }
    let selected_index = select_trocar(trocars_after, target_after);
    let trocar_after = trocars_after[selected_index];
    let v = mount.world_to_robot(&(target_after - trocar_after));
    let theta_ini_deg = initial_tilt(&v)?;
    let gamma_deg = refinement_angle(&v)?;
    Ok(ApproachPlan {
        selected_index,
        trocar_after,
        target_after: *target_after,
        v_trocar2target: v,
        theta_ini_deg,
        gamma_deg,
        theta_ini_in_band: theta_ini_deg >= theta_ini_band_deg[0] && theta_ini_deg <= theta_ini_band_deg[1],
    })
}
