//! Planning pipeline for a batch of retinal targets: eye tilt → trocar and
//! robot tilt → PCJM initial position → per-target joint targets.
//!
//! One tilt, trocar and robot configuration is chosen for the targets'
//! centroid; joints are then solved per target. Infeasible targets carry
//! reasons and never abort the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between_deg, direction_to_spherical, EyeModel, SphericalPoint, Vec3};
use crate::posture::{fov_center_vector, solve_eye_tilt, EyeTiltProposal};
use crate::robot::{
    sweep_initial_position, JointTarget, PcjmModel, RobotSetup, SweepResult, DEFAULT_INSTRUMENT_LENGTH_MM,
    DEFAULT_THETA4_LIMIT_DEG,
};
use crate::trocar::{plan_approach, ApproachPlan, TrocarLayout, TrocarSide, DEFAULT_THETA_INI_BAND_DEG};

pub const DEFAULT_VIEW_ANGLE_DEG: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Untilted eye.
    pub eye: EyeModel,
    pub layout: TrocarLayout,
    pub pcjm: PcjmModel,
    pub theta4_limit_deg: f64,
    pub theta_ini_band_deg: [f64; 2],
    pub view_angle_deg: f64,
    pub instrument_length_mm: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let eye = EyeModel::default();
        Self {
            layout: TrocarLayout::standard(TrocarSide::ThreeOClock, &eye).expect("standard layout is valid"),
            eye,
            pcjm: PcjmModel::default(),
            theta4_limit_deg: DEFAULT_THETA4_LIMIT_DEG,
            theta_ini_band_deg: DEFAULT_THETA_INI_BAND_DEG,
            view_angle_deg: DEFAULT_VIEW_ANGLE_DEG,
            instrument_length_mm: DEFAULT_INSTRUMENT_LENGTH_MM,
        }
    }
}

/// Why a plan or target is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// The requested tilt exceeded the limit and was clamped (informational).
    TiltClamped,
    /// γ lies beyond every achievable working-angle centre (informational).
    GammaSaturated,
    ThetaIniOutOfBand,
    NotVisible,
    OutOfWorkingAngle,
    Theta4Limit,
    NoIntersection,
}

impl Reason {
    pub fn is_blocking(self) -> bool {
        !matches!(self, Reason::TiltClamped | Reason::GammaSaturated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct TargetPlan {
    pub target: SphericalPoint,
    /// Target position after the eye tilt (world).
    #[schemars(with = "[f64; 3]")]
    pub world_after: Vec3,
    pub joints: Option<JointTarget>,
    pub visible: bool,
    pub feasible: bool,
    pub reasons: Vec<Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SurgicalPlan {
    pub centroid: SphericalPoint,
    pub tilt: EyeTiltProposal,
    /// Tilt actually applied downstream (the proposal unless overridden).
    pub applied_tilt_deg: [f64; 2],
    pub approach: ApproachPlan,
    pub sweep: SweepResult,
    pub setup: RobotSetup,
    pub targets: Vec<TargetPlan>,
    /// Plan-level flags (tilt, θ_ini band, γ saturation).
    pub reasons: Vec<Reason>,
    pub feasible: bool,
}

impl SurgicalPlan {
    pub fn tilted_eye(&self, cfg: &PlannerConfig) -> Result<EyeModel> {
        cfg.eye.with_tilt(self.applied_tilt_deg[0], self.applied_tilt_deg[1])
    }
}

/// Normalized mean direction of the targets.
pub fn target_centroid(targets: &[SphericalPoint]) -> Result<SphericalPoint> {
    let sum: Vec3 = targets.iter().map(|t| t.unit_vector()).sum();
    if sum.norm() < 1e-9 {
        return Err(Error::InvalidInput("targets have no well-defined centroid".into()));
    }
    Ok(direction_to_spherical(&sum))
}

pub fn plan_targets(cfg: &PlannerConfig, targets: &[SphericalPoint], executed_tilt_deg: Option<[f64; 2]>) -> Result<SurgicalPlan> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("at least one target is required".into()));
    }
    let eye = &cfg.eye;
    let centroid = target_centroid(targets)?;
    let tilt = solve_eye_tilt(&centroid, eye)?;
    let applied = executed_tilt_deg.unwrap_or([tilt.alpha_deg, tilt.beta_deg]);
    let tilted = eye.with_tilt(applied[0], applied[1])?;

    let trocars_after: Vec<Vec3> = cfg.layout.positions().iter().map(|p| tilted.tilt_point(p)).collect();
    let centroid_after = tilted.tilt_point(&eye.spherical_to_cartesian(&centroid));
    let mount = cfg.layout.side.mount();
    let approach = plan_approach(&trocars_after, &centroid_after, &mount, cfg.theta_ini_band_deg)?;
    let sweep = sweep_initial_position(approach.gamma_deg, &cfg.pcjm)?;
    let setup = RobotSetup {
        mount,
        rcm_world: approach.trocar_after,
        theta_ini_deg: approach.theta_ini_deg,
        pcjm: cfg.pcjm.with_initial_position(sweep.initial_position_mm),
        theta4_limit_deg: cfg.theta4_limit_deg,
        instrument_length_mm: cfg.instrument_length_mm,
    };

    let mut reasons = Vec::new();
    if tilt.clamped && executed_tilt_deg.is_none() {
        reasons.push(Reason::TiltClamped);
    }
    if sweep.saturated {
        reasons.push(Reason::GammaSaturated);
    }
    if !approach.theta_ini_in_band {
        reasons.push(Reason::ThetaIniOutOfBand);
    }

    let fov = fov_center_vector(applied[0], applied[1], eye.radius_mm);
    let half_view = cfg.view_angle_deg / 2.0;
    let working = setup.working_angle();
    let per_target = targets
        .iter()
        .map(|t| {
            let rel = t.unit_vector();
            let world_after = tilted.tilt_point(&eye.spherical_to_cartesian(t));
            let visible = angle_between_deg(&rel, &fov) <= half_view + 1e-9;
            let mut r = Vec::new();
            if !visible {
                r.push(Reason::NotVisible);
            }
            let joints = match setup.solve_unchecked(&world_after, eye) {
                Ok(j) => {
                    if !working.contains(j.theta2_deg) {
                        r.push(Reason::OutOfWorkingAngle);
                    }
                    if j.theta4_deg.abs() > cfg.theta4_limit_deg + 1e-9 {
                        r.push(Reason::Theta4Limit);
                    }
                    if j.depth_mm <= 1e-9 {
                        r.push(Reason::NoIntersection);
                    }
                    Some(j)
                }
                Err(Error::NoIntersection) => {
                    r.push(Reason::NoIntersection);
                    None
                }
                Err(e) => return Err(e),
            };
            let feasible = !r.iter().any(|x| x.is_blocking()) && !reasons.iter().any(|x: &Reason| x.is_blocking());
            Ok(TargetPlan {
                target: *t,
                world_after,
                joints,
                visible,
                feasible,
                reasons: r,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let feasible = per_target.iter().all(|t| t.feasible);
    Ok(SurgicalPlan {
        centroid,
        tilt,
        applied_tilt_deg: applied,
        approach,
        sweep,
        setup,
        targets: per_target,
        reasons,
        feasible,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ExecutionOutcome {
    #[schemars(with = "[f64; 3]")]
    pub tip_world: Vec3,
    /// Great-circle distance from the tip to the target on the eye sphere.
    pub geodesic_error_mm: f64,
    /// Distance from the tip to the sphere surface.
    pub sphere_residual_mm: f64,
}

/// Drives each solved target on the simulated eye and measures where the
/// tip lands. Targets without joints, or whose joints the actuators cannot
/// reach, yield `None`.
pub fn simulate_execution(plan: &SurgicalPlan, cfg: &PlannerConfig) -> Result<Vec<Option<ExecutionOutcome>>> {
    plan.targets
        .iter()
        .map(|t| {
            let Some(j) = t.joints else { return Ok(None) };
            let line = match plan.setup.execute(&j) {
                Ok(l) => l,
                Err(Error::OutOfJointRange(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let tip = line.tip_point;
            Ok(Some(ExecutionOutcome {
                tip_world: tip,
                geodesic_error_mm: cfg.eye.geodesic_mm(&tip, &t.world_after),
                sphere_residual_mm: ((tip - cfg.eye.center).norm() - cfg.eye.radius_mm).abs(),
            }))
        })
        .collect()
}
