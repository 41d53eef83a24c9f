//! Reduced model of the 5-DoF robot.
//!
//! Only what the planner needs is modelled: the robot is mounted on the
//! trocar side and tilted by θ_ini about its X axis, θ₂ (about Y) is produced
//! by the PCJM's differential actuator travel, θ₄ rotates about X, and the
//! prismatic joint advances the instrument along its axis through the RCM.
//!
//! The PCJM link geometry is reduced to `θ₂ = asin((s − p₀)/L_eff)` where `s`
//! is actuator travel within ±stroke and `p₀` the initial position. `L_eff`
//! is a calibration constant, not a physical link length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ray_sphere_depth, rot_x, rot_y, rot_z, EyeModel, InstrumentLine, Vec3};

pub const DEFAULT_STROKE_MM: f64 = 13.5;
pub const DEFAULT_SWEEP_STEP_MM: f64 = 0.1;
/// Calibrated against the working angles measured at p₀ = 0 and p₀ = 5.9 mm.
pub const DEFAULT_EFFECTIVE_LENGTH_MM: f64 = 80.1;
pub const DEFAULT_THETA4_LIMIT_DEG: f64 = 45.0;
pub const DEFAULT_INSTRUMENT_LENGTH_MM: f64 = 35.0;

/// Working-angle measurements used for the shipped calibration:
/// `(p₀ mm, θ₂ min deg, θ₂ max deg)`.
pub const REFERENCE_WORKING_ANGLES: [(f64, f64, f64); 2] = [(0.0, -9.86, 9.51), (5.9, -13.88, 5.39)];

/// Yaw of the robot base about world Z. The robot frame's −Y points from the
/// trocar side toward the eye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RobotMount {
    pub yaw_deg: f64,
}

impl RobotMount {
    pub fn new(yaw_deg: f64) -> Self {
        Self { yaw_deg }
    }

    pub fn world_to_robot(&self, v: &Vec3) -> Vec3 {
        rot_z(-self.yaw_deg) * v
    }

    pub fn robot_to_world(&self, v: &Vec3) -> Vec3 {
        rot_z(self.yaw_deg) * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PcjmModel {
    pub stroke_mm: f64,
    pub sweep_step_mm: f64,
    pub effective_length_mm: f64,
    pub initial_position_mm: f64,
}

impl Default for PcjmModel {
    fn default() -> Self {
        Self {
            stroke_mm: DEFAULT_STROKE_MM,
            sweep_step_mm: DEFAULT_SWEEP_STEP_MM,
            effective_length_mm: DEFAULT_EFFECTIVE_LENGTH_MM,
            initial_position_mm: 0.0,
        }
    }
}

impl PcjmModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.stroke_mm > 0.0 && self.sweep_step_mm > 0.0 && self.effective_length_mm > 0.0) {
            return Err(Error::InvalidInput("PCJM stroke, step and effective length must be positive".into()));
        }
        if self.initial_position_mm.abs() > self.stroke_mm + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "initial position {} outside ±{}",
                self.initial_position_mm, self.stroke_mm
            )));
        }
        if self.stroke_mm * 2.0 > self.effective_length_mm {
            return Err(Error::InvalidInput("stroke too long for the effective length".into()));
        }
        Ok(())
    }

    pub fn with_initial_position(&self, p0_mm: f64) -> Self {
        Self {
            initial_position_mm: p0_mm,
            ..*self
        }
    }

    pub fn theta2_from_actuator(&self, s_mm: f64) -> f64 {
        ((s_mm - self.initial_position_mm) / self.effective_length_mm).clamp(-1.0, 1.0).asin().to_degrees()
    }

    pub fn actuator_from_theta2(&self, theta2_deg: f64) -> f64 {
        self.initial_position_mm + self.effective_length_mm * theta2_deg.to_radians().sin()
    }

    /// Actuator travel available for θ₂; independent of p₀.
    pub fn actuator_span_mm(&self) -> f64 {
        2.0 * self.stroke_mm
    }

    pub fn working_angle(&self) -> WorkingAngle {
        let lo = self.theta2_from_actuator(-self.stroke_mm);
        let hi = self.theta2_from_actuator(self.stroke_mm);
        WorkingAngle {
            min_deg: lo,
            max_deg: hi,
            center_deg: 0.5 * (lo + hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct WorkingAngle {
    pub min_deg: f64,
    pub max_deg: f64,
    pub center_deg: f64,
}

impl WorkingAngle {
    pub fn contains(&self, theta2_deg: f64) -> bool {
        theta2_deg >= self.min_deg - 1e-9 && theta2_deg <= self.max_deg + 1e-9
    }

    pub fn span_deg(&self) -> f64 {
        self.max_deg - self.min_deg
    }
}

/// θ₂ range reachable from initial position `p0_mm`.
pub fn working_angle(p0_mm: f64, m: &PcjmModel) -> Result<WorkingAngle> {
    let model = m.with_initial_position(p0_mm);
    model.validate()?;
    Ok(model.working_angle())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SweepResult {
    pub initial_position_mm: f64,
    pub working_angle: WorkingAngle,
    /// γ lies outside every achievable working-angle centre.
    pub saturated: bool,
}

/// Picks the initial position on the sweep grid whose working-angle centre is
/// closest to γ. Ties go to the smaller |p₀|.
pub fn sweep_initial_position(gamma_deg: f64, m: &PcjmModel) -> Result<SweepResult> {
    m.with_initial_position(0.0).validate()?;
    if !gamma_deg.is_finite() {
        return Err(Error::InvalidInput("γ must be finite".into()));
    }
    let n = (m.stroke_mm / m.sweep_step_mm + 1e-9).floor() as i64;
    let (_, _, best) = (-n..=n)
        .into_par_iter()
        .map(|i| {
            let p0 = i as f64 * m.sweep_step_mm;
            let c = m.with_initial_position(p0).working_angle().center_deg;
            ((c - gamma_deg).abs(), p0.abs(), i)
        })
        .reduce_with(|a, b| if (a.0, a.1, a.2) <= (b.0, b.1, b.2) { a } else { b })
        .expect("grid is non-empty");
    let p0 = best as f64 * m.sweep_step_mm;
    let hi_center = m.with_initial_position(-m.stroke_mm).working_angle().center_deg;
    let lo_center = m.with_initial_position(m.stroke_mm).working_angle().center_deg;
    Ok(SweepResult {
        initial_position_mm: p0,
        working_angle: m.with_initial_position(p0).working_angle(),
        saturated: gamma_deg > hi_center || gamma_deg < lo_center,
    })
}

/// Effective length minimizing the squared error against measured working
/// angles, with its RMS residual in degrees.
pub fn calibrate_effective_length(stroke_mm: f64, measurements: &[(f64, f64, f64)], bounds_mm: (f64, f64)) -> (f64, f64) {
    let sse = |l: f64| -> f64 {
        let m = PcjmModel {
            stroke_mm,
            effective_length_mm: l,
            ..PcjmModel::default()
        };
        measurements
            .iter()
            .map(|&(p0, lo, hi)| {
                let w = m.with_initial_position(p0).working_angle();
                (w.min_deg - lo).powi(2) + (w.max_deg - hi).powi(2)
            })
            .sum()
    };
    let (mut a, mut b) = bounds_mm;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let l = 0.5 * (a + b);
    (l, (sse(l) / (2 * measurements.len()) as f64).sqrt())
}

/// RMS residual of a given effective length against the reference angles.
pub fn calibration_residual_deg(m: &PcjmModel) -> f64 {
    let n = REFERENCE_WORKING_ANGLES.len() as f64 * 2.0;
    let sse: f64 = REFERENCE_WORKING_ANGLES
        .iter()
        .map(|&(p0, lo, hi)| {
            let w = m.with_initial_position(p0).working_angle();
            (w.min_deg - lo).powi(2) + (w.max_deg - hi).powi(2)
        })
        .sum();
    (sse / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct JointTarget {
    pub theta2_deg: f64,
    pub theta4_deg: f64,
    pub depth_mm: f64,
    /// Distance from the RCM to the target.
    pub k_mm: f64,
    pub within_limits: bool,
}

/// θ₂, θ₄ and `k` such that `k·rotx(θ₄)·roty(θ₂)·[0,0,−1] = rotx(θ_ini)·v`.
pub fn solve_angles(v_robot: &Vec3, theta_ini_deg: f64) -> Result<(f64, f64, f64)> {
    let v2 = rot_x(theta_ini_deg) * v_robot;
    let k = v2.norm();
    if !(k.is_finite() && k > 1e-12) {
        return Err(Error::InvalidInput("target coincides with the RCM point".into()));
    }
    let theta2 = (-v2.x / k).clamp(-1.0, 1.0).asin().to_degrees();
    let theta4 = v2.y.atan2(-v2.z).to_degrees();
    Ok((theta2, theta4, k))
}

/// Instrument direction (robot frame) for the given joints.
pub fn instrument_direction(theta_ini_deg: f64, theta2_deg: f64, theta4_deg: f64) -> Vec3 {
    rot_x(-theta_ini_deg) * rot_x(theta4_deg) * rot_y(theta2_deg) * Vec3::new(0.0, 0.0, -1.0)
}

/// A robot placed at a trocar and configured for an approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct RobotSetup {
    pub mount: RobotMount,
    #[schemars(with = "[f64; 3]")]
    pub rcm_world: Vec3,
    pub theta_ini_deg: f64,
    pub pcjm: PcjmModel,
    pub theta4_limit_deg: f64,
    pub instrument_length_mm: f64,
}

impl RobotSetup {
    pub fn working_angle(&self) -> WorkingAngle {
        self.pcjm.working_angle()
    }

    /// Joint target for a world point without enforcing joint limits; the
    /// result carries a `within_limits` flag.
    pub fn solve_unchecked(&self, target_world: &Vec3, eye: &EyeModel) -> Result<JointTarget> {
        let v = self.mount.world_to_robot(&(target_world - self.rcm_world));
        let (theta2, theta4, k) = solve_angles(&v, self.theta_ini_deg)?;
        let dir = self.mount.robot_to_world(&instrument_direction(self.theta_ini_deg, theta2, theta4));
        let depth = ray_sphere_depth(&self.rcm_world, &dir, eye)?;
        let within_limits =
            self.working_angle().contains(theta2) && theta4.abs() <= self.theta4_limit_deg + 1e-9 && depth > 1e-9;
        Ok(JointTarget {
            theta2_deg: theta2,
            theta4_deg: theta4,
            depth_mm: depth,
            k_mm: k,
            within_limits,
        })
    }

    /// Joint target that must lie within the current joint limits.
    pub fn solve(&self, target_world: &Vec3, eye: &EyeModel) -> Result<JointTarget> {
        let j = self.solve_unchecked(target_world, eye)?;
        if !j.within_limits {
            let w = self.working_angle();
            return Err(Error::OutOfJointRange(format!(
                "θ₂ = {:.3}° (working angle [{:.3}, {:.3}]), θ₄ = {:.3}° (limit ±{}), depth = {:.3} mm",
                j.theta2_deg, w.min_deg, w.max_deg, j.theta4_deg, self.theta4_limit_deg, j.depth_mm
            )));
        }
        Ok(j)
    }

    /// Instrument line through the RCM for the given joints.
    pub fn rcm_pose(&self, theta2_deg: f64, theta4_deg: f64, depth_mm: f64) -> Result<InstrumentLine> {
        let dir = self.mount.robot_to_world(&instrument_direction(self.theta_ini_deg, theta2_deg, theta4_deg));
        InstrumentLine::from_rcm(self.rcm_world, dir, depth_mm, self.instrument_length_mm)
    }

    /// Drives the joints through actuator space and returns the resulting
    /// instrument line.
    pub fn execute(&self, joints: &JointTarget) -> Result<InstrumentLine> {
        let s = self.pcjm.actuator_from_theta2(joints.theta2_deg);
        if s.abs() > self.pcjm.stroke_mm + 1e-9 {
            return Err(Error::OutOfJointRange(format!("actuator travel {s:.3} mm beyond stroke")));
        }
        let theta2 = self.pcjm.theta2_from_actuator(s);
        self.rcm_pose(theta2, joints.theta4_deg, joints.depth_mm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{line_sphere_depth, SphericalPoint};
    use proptest::prelude::*;

    fn pcjm() -> PcjmModel {
        PcjmModel::default()
    }

    #[test]
    fn working_angle_at_center() {
        let w = working_angle(0.0, &pcjm()).unwrap();
        assert!((w.max_deg - 9.7029).abs() < 1e-3 && (w.min_deg + 9.7029).abs() < 1e-3, "{w:?}");
        assert!(w.center_deg.abs() < 1e-12);
        assert!((w.min_deg + 9.86).abs() < 0.5 && (w.max_deg - 9.51).abs() < 0.5);
    }

    #[test]
    fn working_angle_shifted() {
        let w = working_angle(5.9, &pcjm()).unwrap();
        assert!((w.min_deg + 13.88).abs() < 0.5 && (w.max_deg - 5.39).abs() < 0.5, "{w:?}");
        assert!((w.center_deg + 4.25).abs() < 0.1, "{w:?}");
        assert!(working_angle(14.0, &pcjm()).is_err());
    }

    #[test]
    fn long_linkage_shrinks_range() {
        let m = PcjmModel {
            effective_length_mm: 1e9,
            ..pcjm()
        };
        assert!(m.working_angle().span_deg() < 1e-5);
    }

    #[test]
    fn sweep_cases() {
        let s = sweep_initial_position(-4.19, &pcjm()).unwrap();
        assert!((s.initial_position_mm - 5.9).abs() <= 0.2 + 1e-9, "{s:?}");
        assert!(!s.saturated);
        assert_eq!(sweep_initial_position(0.0, &pcjm()).unwrap().initial_position_mm, 0.0);
        let sat = sweep_initial_position(-30.0, &pcjm()).unwrap();
        assert!(sat.saturated);
        assert!((sat.initial_position_mm - 13.5).abs() < 1e-9);
    }

    #[test]
    fn sweep_agrees_with_finer_grid() {
        let fine = PcjmModel {
            sweep_step_mm: 0.01,
            ..pcjm()
        };
        for g in [-8.0, -4.19, -1.3, 0.7, 3.3, 9.0] {
            let a = sweep_initial_position(g, &pcjm()).unwrap().initial_position_mm;
            let b = sweep_initial_position(g, &fine).unwrap().initial_position_mm;
            assert!((a - b).abs() < 0.1, "γ={g}: {a} vs {b}");
        }
    }

    #[test]
    fn actuator_span_is_constant_but_angle_span_is_not() {
        let w0 = pcjm().working_angle();
        let w1 = pcjm().with_initial_position(5.9).working_angle();
        assert_eq!(pcjm().actuator_span_mm(), pcjm().with_initial_position(5.9).actuator_span_mm());
        let delta = w1.span_deg() - w0.span_deg();
        assert!(delta > 0.0 && delta < 0.1, "angular span change {delta}");
    }

    #[test]
    fn shipped_length_is_near_least_squares_fit() {
        let (l, rms) = calibrate_effective_length(13.5, &REFERENCE_WORKING_ANGLES, (60.0, 100.0));
        assert!((l - 80.59).abs() < 0.05, "{l}");
        let shipped = calibration_residual_deg(&pcjm());
        assert!(rms <= shipped && shipped < 0.16, "{rms} {shipped}");
    }

    fn setup() -> RobotSetup {
        RobotSetup {
            mount: RobotMount::new(0.0),
            rcm_world: EyeModel::default().spherical_to_cartesian(&SphericalPoint::new(45.0, 0.0).unwrap()),
            theta_ini_deg: 22.5,
            pcjm: pcjm(),
            theta4_limit_deg: DEFAULT_THETA4_LIMIT_DEG,
            instrument_length_mm: DEFAULT_INSTRUMENT_LENGTH_MM,
        }
    }

    #[test]
    fn straight_in_target() {
        let eye = EyeModel::default();
        let s = setup();
        // Posterior pole seen from the 45° trocar: inscribed angle 22.5°.
        let target = Vec3::new(0.0, 0.0, -12.1);
        let j = s.solve(&target, &eye).unwrap();
        assert!(j.theta2_deg.abs() < 1e-9 && j.theta4_deg.abs() < 1e-9, "{j:?}");
        assert!((j.depth_mm - (target - s.rcm_world).norm()).abs() < 1e-9);
    }

    #[test]
    fn forward_reconstruction_matches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let v = Vec3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-20.0..5.0), rng.gen_range(-25.0..-2.0));
            let ini = rng.gen_range(10.0..35.0);
            let (t2, t4, k) = solve_angles(&v, ini).unwrap();
            let (s2, c2) = t2.to_radians().sin_cos();
            let (s4, c4) = t4.to_radians().sin_cos();
            let closed = Vec3::new(-s2, s4 * c2, -c4 * c2) * k;
            assert!((closed - rot_x(ini) * v).norm() < 1e-9);
        }
    }

    #[test]
    fn angles_match_newton_root_finder() {
        // Solve for (θ₂, θ₄) by Newton iteration on the direction residual,
        // independent of the closed-form inverse.
        let v = Vec3::new(1.7, -6.2, -19.0);
        let ini = 23.0;
        let target = (rot_x(ini) * v).normalize();
        let f = |a: f64, b: f64| rot_x(b) * rot_y(a) * Vec3::new(0.0, 0.0, -1.0) - target;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            let h = 1e-7;
            let r = f(a, b);
            let ja = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
            let jb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
            // Least squares step on the 3×2 system.
            let m = nalgebra::Matrix3x2::from_columns(&[ja, jb]);
            let step = (m.transpose() * m).try_inverse().unwrap() * m.transpose() * r;
            a -= step[0];
            b -= step[1];
        }
        let (t2, t4, _) = solve_angles(&v, ini).unwrap();
        assert!((a - t2).abs() < 1e-6 && (b - t4).abs() < 1e-6, "{a} {b} vs {t2} {t4}");
    }

    #[test]
    fn out_of_range_is_reported() {
        let eye = EyeModel::default();
        let s = setup();
        let far = eye.spherical_to_cartesian(&SphericalPoint::new(110.0, 90.0).unwrap());
        let j = s.solve_unchecked(&far, &eye).unwrap();
        assert!(!j.within_limits);
        assert!(matches!(s.solve(&far, &eye), Err(Error::OutOfJointRange(_))));
    }

    #[test]
    fn zero_joints_follow_tilted_axis() {
        let s = setup();
        let line = s.rcm_pose(0.0, 0.0, 10.0).unwrap();
        let (si, ci) = 22.5f64.to_radians().sin_cos();
        assert!((line.direction - Vec3::new(0.0, -si, -ci)).norm() < 1e-12);
        assert!(line.rcm_residual() < 1e-9);
        let p5 = line.p5(s.instrument_length_mm);
        assert!(((line.rcm_point - p5) - (line.tip_point - p5) * line.lambda).norm() < 1e-12);
    }

    #[test]
    fn solved_tip_is_on_retina() {
        let eye = EyeModel::default();
        let s = setup();
        let target = eye.spherical_to_cartesian(&SphericalPoint::new(170.0, 30.0).unwrap());
        let j = s.solve(&target, &eye).unwrap();
        let line = s.execute(&j).unwrap();
        assert!(((line.tip_point - eye.center).norm() - eye.radius_mm).abs() < 1e-9);
        assert!((line.tip_point - target).norm() < 1e-9);
        assert!((line_sphere_depth(&line, &eye).unwrap() - j.depth_mm).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn solve_inverts_forward(t2 in -40.0f64..40.0, t4 in -40.0f64..40.0, ini in 0.0f64..40.0, k in 1.0f64..30.0) {
            let v = rot_x(-ini) * rot_x(t4) * rot_y(t2) * Vec3::new(0.0, 0.0, -k);
            let (a, b, kk) = solve_angles(&v, ini).unwrap();
            prop_assert!((a - t2).abs() < 1e-9 && (b - t4).abs() < 1e-9 && (kk - k).abs() < 1e-9);
        }

        #[test]
        fn sweep_is_grid_argmin(g in -10.0f64..10.0) {
            let m = pcjm();
            let s = sweep_initial_position(g, &m).unwrap();
            let best = (-135..=135)
                .map(|i| (m.with_initial_position(i as f64 * 0.1).working_angle().center_deg - g).abs())
                .fold(f64::INFINITY, f64::min);
            prop_assert!(((s.working_angle.center_deg - g).abs() - best).abs() < 1e-12);
        }
    }
}
