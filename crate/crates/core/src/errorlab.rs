//! Error injection: perturb the world a plan was made for, re-solve the joints
//! the robot would really need, and report the difference from the plan.
//!
//! Modeled sources:
//! - `z_align`: the robot is yawed about the world Z axis relative to the eye.
//! - `instr_trocar_offset`: a lateral offset between the RCM and the trocar
//!   tilts the instrument about the θ₂ axis by `atan(x/(l_instrument − l_insert))`.
//! - `trocar_roll`, `trocar_yaw`: the trocar sits rotated about the eye centre
//!   (about X for roll, about Z for yaw) from its planned position.
//! - `eye_pose`: the eye's true tilt differs by ε on both axes; trocars and
//!   targets move with it.
//!
//! The exact solver is the oracle for the "true" joints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_x, rot_y, rot_z, EyeModel, SphericalPoint, Vec3};
use crate::pipeline::{plan_targets, PlannerConfig, SurgicalPlan};
use crate::robot::JointTarget;

pub const DEFAULT_MAGNITUDES: [f64; 9] = [-10.0, -5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_INSERT_LENGTH_MM: f64 = 20.0;
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Posterior pole plus four points 10° off it at the cardinal azimuths.
pub fn default_targets() -> Vec<SphericalPoint> {
    [(180.0, 0.0), (170.0, 0.0), (170.0, 90.0), (170.0, 180.0), (170.0, -90.0)]
        .iter()
        .map(|&(p, a)| SphericalPoint { polar_deg: p, azimuth_deg: a })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    ZAlign,
    InstrTrocarOffset,
    TrocarRoll,
    TrocarYaw,
    EyePose,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::ZAlign,
        ErrorKind::InstrTrocarOffset,
        ErrorKind::TrocarRoll,
        ErrorKind::TrocarYaw,
        ErrorKind::EyePose,
    ];

    pub fn unit(self) -> &'static str {
        match self {
            ErrorKind::InstrTrocarOffset => "mm",
            _ => "deg",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::ZAlign => "z_align",
            ErrorKind::InstrTrocarOffset => "instr_trocar_offset",
            ErrorKind::TrocarRoll => "trocar_roll",
            ErrorKind::TrocarYaw => "trocar_yaw",
            ErrorKind::EyePose => "eye_pose",
        }
    }

    pub fn is_rotational(self) -> bool {
        self != ErrorKind::InstrTrocarOffset
    }
}

impl std::str::FromStr for ErrorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown error kind '{s}'")))
    }
}

/// Instrument lengths used by the offset model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct OffsetGeometry {
    pub instrument_length_mm: f64,
    pub insert_length_mm: f64,
}

impl Default for OffsetGeometry {
    fn default() -> Self {
        Self {
            instrument_length_mm: crate::robot::DEFAULT_INSTRUMENT_LENGTH_MM,
            insert_length_mm: DEFAULT_INSERT_LENGTH_MM,
        }
    }
}

/// Angular error of an instrument pivoted through a trocar that is offset
/// laterally by `x_error_mm` from the RCM.
pub fn instrument_offset_error(x_error_mm: f64, l_instrument_mm: f64, l_insert_mm: f64) -> Result<f64> {
    let lever = l_instrument_mm - l_insert_mm;
    if !(lever > 0.0) || !x_error_mm.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "instrument length {l_instrument_mm} mm must exceed insertion {l_insert_mm} mm"
        )));
    }
    Ok(x_error_mm.atan2(lever).to_degrees())
}

/// One combined perturbation of the planned world.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Perturbation {
    pub z_align_deg: f64,
    pub instr_trocar_offset_mm: f64,
    pub trocar_roll_deg: f64,
    pub trocar_yaw_deg: f64,
    pub eye_pose_deg: f64,
}

impl Perturbation {
    pub fn single(kind: ErrorKind, magnitude: f64) -> Self {
        let mut p = Self::default();
        match kind {
            ErrorKind::ZAlign => p.z_align_deg = magnitude,
            ErrorKind::InstrTrocarOffset => p.instr_trocar_offset_mm = magnitude,
            ErrorKind::TrocarRoll => p.trocar_roll_deg = magnitude,
            ErrorKind::TrocarYaw => p.trocar_yaw_deg = magnitude,
            ErrorKind::EyePose => p.eye_pose_deg = magnitude,
        }
        p
    }
}

/// True minus planned joint values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct JointError {
    pub d_theta2_deg: f64,
    pub d_theta4_deg: f64,
    pub d_z_mm: f64,
}

impl JointError {
    fn between(truth: &JointTarget, planned: &JointTarget) -> Self {
        Self {
            d_theta2_deg: truth.theta2_deg - planned.theta2_deg,
            d_theta4_deg: truth.theta4_deg - planned.theta4_deg,
            d_z_mm: truth.depth_mm - planned.depth_mm,
        }
    }

    fn components(&self) -> [f64; 3] {
        [self.d_theta2_deg, self.d_theta4_deg, self.d_z_mm]
    }
}

/// Joints the robot actually needs for each planned target under `p`.
/// `None` marks targets that were infeasible in the plan or cannot be
/// reached in the perturbed world.
pub fn true_joints(
    plan: &SurgicalPlan,
    cfg: &PlannerConfig,
    p: &Perturbation,
    geometry: &OffsetGeometry,
) -> Result<Vec<Option<JointTarget>>> {
    let eye = EyeModel {
        tilt_alpha_deg: plan.applied_tilt_deg[0] + p.eye_pose_deg,
        tilt_beta_deg: plan.applied_tilt_deg[1] + p.eye_pose_deg,
        tilt_limit_deg: 90.0,
        ..cfg.eye
    };
    let c = cfg.eye.center;
    let trocar_eye = cfg.layout.positions()[plan.approach.selected_index];
    let trocar_eye = c + rot_z(p.trocar_yaw_deg) * rot_x(p.trocar_roll_deg) * (trocar_eye - c);

    let mut setup = plan.setup;
    setup.rcm_world = eye.tilt_point(&trocar_eye);
    setup.mount.yaw_deg += p.z_align_deg;
    let theta_err = instrument_offset_error(p.instr_trocar_offset_mm, geometry.instrument_length_mm, geometry.insert_length_mm)?;
    // The offset tilts the approach about the θ₂ axis of the pitched frame.
    let offset = (theta_err != 0.0).then(|| rot_x(-setup.theta_ini_deg) * rot_y(theta_err) * rot_x(setup.theta_ini_deg));

    Ok(plan
        .targets
        .iter()
        .map(|t| {
            if !t.feasible {
                return None;
            }
            let mut target = eye.tilt_point(&eye.spherical_to_cartesian(&t.target));
            if let Some(m) = offset {
                let v = setup.mount.world_to_robot(&(target - setup.rcm_world));
                target = setup.rcm_world + setup.mount.robot_to_world(&(m * v));
            }
            setup.solve_unchecked(&target, &cfg.eye).ok()
        })
        .collect())
}

/// Per-target joint errors for a single perturbation.
pub fn evaluate(
    plan: &SurgicalPlan,
    cfg: &PlannerConfig,
    p: &Perturbation,
    geometry: &OffsetGeometry,
) -> Result<Vec<Option<JointError>>> {
    let truth = true_joints(plan, cfg, p, geometry)?;
    Ok(plan
        .targets
        .iter()
        .zip(truth)
        .map(|(t, tj)| Some(JointError::between(&tj?, t.joints.as_ref()?)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub n: usize,
}

/// Ordinary least-squares line through `(x, y)`. `None` with fewer than two
/// distinct abscissae.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    Some(LineFit {
        slope,
        intercept,
        residual: (sse / nf).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct JointFits {
    pub theta2: Option<LineFit>,
    pub theta4: Option<LineFit>,
    pub z: Option<LineFit>,
}

impl JointFits {
    fn from_samples(samples: &[(f64, JointError)]) -> Self {
        let col = |i: usize| fit_line(&samples.iter().map(|(m, e)| (*m, e.components()[i])).collect::<Vec<_>>());
        Self {
            theta2: col(0),
            theta4: col(1),
            z: col(2),
        }
    }

    pub fn slope_theta2(&self) -> f64 {
        self.theta2.map_or(0.0, |f| f.slope)
    }

    pub fn slope_theta4(&self) -> f64 {
        self.theta4.map_or(0.0, |f| f.slope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ErrorScenario {
    pub kind: ErrorKind,
    #[serde(default = "default_magnitudes")]
    pub magnitudes: Vec<f64>,
    #[serde(default = "default_targets")]
    pub targets: Vec<SphericalPoint>,
    #[serde(default)]
    pub offset_geometry: OffsetGeometry,
}

fn default_magnitudes() -> Vec<f64> {
    DEFAULT_MAGNITUDES.to_vec()
}

impl ErrorScenario {
    pub fn new(kind: ErrorKind) -> Self {
        Self {
            kind,
            magnitudes: default_magnitudes(),
            targets: default_targets(),
            offset_geometry: OffsetGeometry::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitudes.iter().any(|m| *m == 0.0) {
            return Err(Error::InvalidInput("magnitudes must include 0".into()));
        }
        if self.magnitudes.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("magnitudes must be finite".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidInput("at least one target is required".into()));
        }
        for t in &self.targets {
            SphericalPoint::new(t.polar_deg, t.azimuth_deg)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MagnitudeRow {
    pub magnitude: f64,
    /// `None` when the target was excluded at this magnitude.
    pub error: Option<JointError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct TargetSensitivity {
    pub target: SphericalPoint,
    pub rows: Vec<MagnitudeRow>,
    pub fits: JointFits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AggregateRow {
    pub magnitude: f64,
    /// Mean over the targets evaluated at this magnitude.
    pub mean: Option<JointError>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SensitivityResult {
    pub kind: ErrorKind,
    pub unit: String,
    pub magnitudes: Vec<f64>,
    pub targets: Vec<TargetSensitivity>,
    pub aggregate: Vec<AggregateRow>,
    /// Line fitted to every evaluated (magnitude, error) pair.
    pub fits: JointFits,
    /// Target × magnitude points left out of the fits.
    pub excluded: usize,
}

impl SensitivityResult {
    /// One line per target and magnitude, for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,magnitude,target_polar_deg,target_azimuth_deg,d_theta2_deg,d_theta4_deg,d_z_mm\n");
        for t in &self.targets {
            for r in &t.rows {
                let (a, b, c) = match r.error {
                    Some(e) => (e.d_theta2_deg.to_string(), e.d_theta4_deg.to_string(), e.d_z_mm.to_string()),
                    None => Default::default(),
                };
                s.push_str(&format!(
                    "{},{},{},{},{a},{b},{c}\n",
                    self.kind.as_str(),
                    r.magnitude,
                    t.target.polar_deg,
                    t.target.azimuth_deg
                ));
            }
        }
        s
    }
}

/// Plans the scenario's targets, sweeps the magnitudes and fits lines.
pub fn run_scenario(s: &ErrorScenario, cfg: &PlannerConfig) -> Result<SensitivityResult> {
    s.validate()?;
    let plan = plan_targets(cfg, &s.targets, None)?;
    run_on_plan(s.kind, &s.magnitudes, &plan, cfg, &s.offset_geometry)
}

pub fn run_on_plan(
    kind: ErrorKind,
    magnitudes: &[f64],
    plan: &SurgicalPlan,
    cfg: &PlannerConfig,
    geometry: &OffsetGeometry,
) -> Result<SensitivityResult> {
    let per_mag = magnitudes
        .iter()
        .map(|&m| evaluate(plan, cfg, &Perturbation::single(kind, m), geometry))
        .collect::<Result<Vec<_>>>()?;

    let mut pooled = Vec::new();
    let mut excluded = 0;
    let targets = plan
        .targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let rows: Vec<MagnitudeRow> = magnitudes
                .iter()
                .zip(&per_mag)
                .map(|(&m, errs)| MagnitudeRow { magnitude: m, error: errs[i] })
                .collect();
            let samples: Vec<(f64, JointError)> = rows.iter().filter_map(|r| Some((r.magnitude, r.error?))).collect();
            excluded += rows.len() - samples.len();
            pooled.extend_from_slice(&samples);
            TargetSensitivity {
                target: t.target,
                fits: JointFits::from_samples(&samples),
                rows,
            }
        })
        .collect();

    let aggregate = magnitudes
        .iter()
        .zip(&per_mag)
        .map(|(&m, errs)| {
            let ok: Vec<&JointError> = errs.iter().flatten().collect();
            let n = ok.len();
            let mean = (n > 0).then(|| {
                let nf = n as f64;
                JointError {
                    d_theta2_deg: ok.iter().map(|e| e.d_theta2_deg).sum::<f64>() / nf,
                    d_theta4_deg: ok.iter().map(|e| e.d_theta4_deg).sum::<f64>() / nf,
                    d_z_mm: ok.iter().map(|e| e.d_z_mm).sum::<f64>() / nf,
                }
            });
            AggregateRow { magnitude: m, mean, n }
        })
        .collect();

    Ok(SensitivityResult {
        kind,
        unit: kind.unit().to_string(),
        magnitudes: magnitudes.to_vec(),
        targets,
        aggregate,
        fits: JointFits::from_samples(&pooled),
        excluded,
    })
}

/// Sampling distribution of one error source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Fixed { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Fixed { value: 0.0 }
    }
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Fixed { value } => value.is_finite(),
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid distribution {self:?}")))
        }
    }

    /// Consumes exactly one draw regardless of the variant, so scaling one
    /// source keeps every other source's samples paired.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.gen();
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Normal { mean, sd } => mean + sd * z,
            Distribution::Uniform { low, high } => low + (high - low) * u,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorDistributions {
    pub z_align_deg: Distribution,
    pub instr_trocar_offset_mm: Distribution,
    pub trocar_roll_deg: Distribution,
    pub trocar_yaw_deg: Distribution,
    pub eye_pose_deg: Distribution,
}

impl ErrorDistributions {
    pub fn validate(&self) -> Result<()> {
        for d in [
            &self.z_align_deg,
            &self.instr_trocar_offset_mm,
            &self.trocar_roll_deg,
            &self.trocar_yaw_deg,
            &self.eye_pose_deg,
        ] {
            d.validate()?;
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Perturbation {
        Perturbation {
            z_align_deg: self.z_align_deg.sample(rng),
            instr_trocar_offset_mm: self.instr_trocar_offset_mm.sample(rng),
            trocar_roll_deg: self.trocar_roll_deg.sample(rng),
            trocar_yaw_deg: self.trocar_yaw_deg.sample(rng),
            eye_pose_deg: self.eye_pose_deg.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MonteCarloResult {
    pub rng: String,
    pub seed: u64,
    pub n_trials: usize,
    /// Target evaluations that entered the statistics.
    pub n_samples: usize,
    pub n_excluded: usize,
    pub theta2_deg: Stat,
    pub theta4_deg: Stat,
    pub z_mm: Stat,
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat { mean: 0.0, sd: 0.0 };
    }
    let mut s = CompensatedSum::default();
    values.iter().for_each(|v| s.add(*v));
    let mean = s.value() / n as f64;
    let mut q = CompensatedSum::default();
    values.iter().for_each(|v| q.add((v - mean).powi(2)));
    let sd = if n > 1 { (q.value() / (n - 1) as f64).sqrt() } else { 0.0 };
    Stat { mean, sd }
}

/// Draws `n_trials` combined perturbations and reports joint-error
/// statistics over all planned targets. Trial `i` uses stream `i` of the
/// seeded generator, so results do not depend on scheduling.
pub fn monte_carlo(
    plan: &SurgicalPlan,
    cfg: &PlannerConfig,
    dists: &ErrorDistributions,
    n_trials: usize,
    seed: u64,
    geometry: &OffsetGeometry,
) -> Result<MonteCarloResult> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    dists.validate()?;
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            evaluate(plan, cfg, &dists.sample(&mut rng), geometry)
        })
        .collect::<Result<Vec<_>>>()?;

    let all: Vec<&JointError> = trials.iter().flatten().flatten().collect();
    let total = trials.iter().map(Vec::len).sum::<usize>();
    let col = |f: fn(&JointError) -> f64| stat(&all.iter().map(|e| f(e)).collect::<Vec<_>>());
    Ok(MonteCarloResult {
        rng: RNG_NAME.to_string(),
        seed,
        n_trials,
        n_samples: all.len(),
        n_excluded: total - all.len(),
        theta2_deg: col(|e| e.d_theta2_deg),
        theta4_deg: col(|e| e.d_theta4_deg),
        z_mm: col(|e| e.d_z_mm),
    })
}

/// Monte Carlo over a batch of targets planned from scratch.
pub fn monte_carlo_targets(
    cfg: &PlannerConfig,
    targets: &[SphericalPoint],
    dists: &ErrorDistributions,
    n_trials: usize,
    seed: u64,
    geometry: &OffsetGeometry,
) -> Result<MonteCarloResult> {
    let plan = plan_targets(cfg, targets, None)?;
    monte_carlo(&plan, cfg, dists, n_trials, seed, geometry)
}

/// Pivot geometry used to check the closed-form offset error: an instrument
/// held at its base `l_instrument − l_insert` above the trocar, whose trocar
/// end is displaced laterally by `x_error_mm`.
pub fn pivot_angle_deg(x_error_mm: f64, l_instrument_mm: f64, l_insert_mm: f64) -> f64 {
    let base = Vec3::new(0.0, 0.0, l_instrument_mm - l_insert_mm);
    let nominal = -base;
    let displaced = Vec3::new(x_error_mm, 0.0, 0.0) - base;
    let a = crate::geometry::angle_between_deg(&nominal, &displaced);
    a.copysign(x_error_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trocar::select_trocar;

    fn cfg() -> PlannerConfig {
        PlannerConfig::default()
    }

    fn plan() -> SurgicalPlan {
        plan_targets(&cfg(), &default_targets(), None).unwrap()
    }

    #[test]
    fn offset_error_values() {
        let t = instrument_offset_error(0.5, 35.0, 20.0).unwrap();
        assert!((t - 1.90915).abs() < 1e-5, "{t}");
        assert_eq!(instrument_offset_error(0.0, 35.0, 20.0).unwrap(), 0.0);
        assert!(matches!(instrument_offset_error(0.5, 20.0, 20.0), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn offset_error_is_nearly_linear() {
        let f = |x: f64| instrument_offset_error(x, 35.0, 20.0).unwrap();
        let secant = f(1.0);
        let worst = (0..=200)
            .map(|i| -1.0 + i as f64 * 0.01)
            .map(|x| (f(x) - secant * x).abs())
            .fold(0.0, f64::max);
        assert!(worst / secant < 0.02, "{worst}");
    }

    #[test]
    fn pivot_geometry_matches_closed_form() {
        for i in -100..=100 {
            let x = i as f64 * 0.01;
            let g = pivot_angle_deg(x, 35.0, 20.0);
            assert!((g - instrument_offset_error(x, 35.0, 20.0).unwrap()).abs() < 0.01);
        }
    }

    #[test]
    fn zero_magnitude_is_exact() {
        let (p, c) = (plan(), cfg());
        for kind in ErrorKind::ALL {
            for e in evaluate(&p, &c, &Perturbation::single(kind, 0.0), &OffsetGeometry::default()).unwrap() {
                assert_eq!(e.unwrap(), JointError::default(), "{kind:?}");
            }
        }
    }

    #[test]
    fn offset_shifts_theta2_by_closed_form_on_centroid() {
        let c = cfg();
        let p = plan_targets(&c, &[SphericalPoint::posterior_pole()], None).unwrap();
        let e = evaluate(&p, &c, &Perturbation::single(ErrorKind::InstrTrocarOffset, 0.5), &OffsetGeometry::default())
            .unwrap()[0]
            .unwrap();
        assert!((e.d_theta2_deg - instrument_offset_error(0.5, 35.0, 20.0).unwrap()).abs() < 1e-9, "{e:?}");
        assert!(e.d_theta4_deg.abs() < 1e-9);
    }

    #[test]
    fn roll_dominates_theta4_and_yaw_theta2() {
        let c = cfg();
        let roll = run_scenario(&ErrorScenario::new(ErrorKind::TrocarRoll), &c).unwrap();
        assert!(roll.fits.slope_theta4().abs() > roll.fits.slope_theta2().abs(), "{:?}", roll.fits);
        let yaw = run_scenario(&ErrorScenario::new(ErrorKind::TrocarYaw), &c).unwrap();
        assert!(yaw.fits.slope_theta2().abs() > yaw.fits.slope_theta4().abs(), "{:?}", yaw.fits);
        assert_eq!(roll.excluded + yaw.excluded, 0);
    }

    #[test]
    fn z_align_leaves_theta4_alone() {
        let r = run_scenario(&ErrorScenario::new(ErrorKind::ZAlign), &cfg()).unwrap();
        assert!(r.fits.slope_theta4().abs() < 0.05, "{:?}", r.fits);
        assert!(r.fits.slope_theta2().abs() > 0.3, "{:?}", r.fits);
    }

    #[test]
    fn odd_kinds_fit_through_origin_at_the_pole() {
        let c = cfg();
        for kind in [ErrorKind::ZAlign, ErrorKind::TrocarYaw] {
            let r = run_scenario(&ErrorScenario::new(kind), &c).unwrap();
            let pole = &r.targets[0];
            assert_eq!(pole.target.polar_deg, 180.0);
            assert!(pole.fits.theta2.unwrap().intercept.abs() < 1e-6, "{kind:?} {:?}", pole.fits);
        }
    }

    #[test]
    fn eye_pose_outweighs_trocar_placement() {
        let c = cfg();
        let big = |k| {
            let f = run_scenario(&ErrorScenario::new(k), &c).unwrap().fits;
            f.slope_theta2().abs().max(f.slope_theta4().abs())
        };
        let eye = big(ErrorKind::EyePose);
        assert!(eye > big(ErrorKind::TrocarRoll) && eye > big(ErrorKind::TrocarYaw));
    }

    #[test]
    fn small_z_misalignment_keeps_trocar_choice() {
        let eye = EyeModel::default();
        let trocars = cfg().layout.positions();
        for t in default_targets().iter().chain(&[SphericalPoint { polar_deg: 165.0, azimuth_deg: 40.0 }]) {
            let p = eye.spherical_to_cartesian(t);
            let nominal = select_trocar(&trocars, &p);
            for i in -20..=20 {
                let r = rot_z(-(i as f64) * 0.1);
                let rotated: Vec<Vec3> = trocars.iter().map(|q| r * q).collect();
                assert_eq!(select_trocar(&rotated, &(r * p)), nominal, "{t:?}");
            }
        }
    }

    #[test]
    fn fit_line_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = DEFAULT_MAGNITUDES.iter().map(|&x| (x, 0.7 * x - 0.2)).collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope - 0.7).abs() < 1e-12 && (f.intercept + 0.2).abs() < 1e-12 && f.residual < 1e-12);
        assert!(fit_line(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn scenario_requires_zero_magnitude() {
        let mut s = ErrorScenario::new(ErrorKind::TrocarRoll);
        s.magnitudes = vec![1.0, 2.0];
        assert!(run_scenario(&s, &cfg()).is_err());
    }

    #[test]
    fn degenerate_distributions_give_zero_error() {
        let r = monte_carlo(&plan(), &cfg(), &ErrorDistributions::default(), 50, 9, &OffsetGeometry::default()).unwrap();
        assert_eq!((r.theta2_deg.mean, r.theta2_deg.sd, r.z_mm.sd), (0.0, 0.0, 0.0));
        assert_eq!(r.n_samples, 250);
    }

    fn normal_all(sd: f64) -> ErrorDistributions {
        let n = Distribution::Normal { mean: 0.0, sd };
        ErrorDistributions {
            z_align_deg: n,
            instr_trocar_offset_mm: Distribution::Normal { mean: 0.0, sd: sd / 10.0 },
            trocar_roll_deg: n,
            trocar_yaw_deg: n,
            eye_pose_deg: n,
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_across_thread_pools() {
        let (p, c) = (plan(), cfg());
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo(&p, &c, &normal_all(1.0), 400, 1234, &OffsetGeometry::default()).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(7));
        assert_eq!(a.rng, RNG_NAME);
        assert_ne!(a, monte_carlo(&p, &c, &normal_all(1.0), 400, 1235, &OffsetGeometry::default()).unwrap());
    }

    #[test]
    fn widening_one_source_widens_output() {
        let (p, c) = (plan(), cfg());
        let g = OffsetGeometry::default();
        let base = normal_all(0.5);
        let cases: [(fn(&mut ErrorDistributions) -> &mut Distribution, fn(&MonteCarloResult) -> f64); 4] = [
            (|d| &mut d.z_align_deg, |r| r.theta2_deg.sd),
            (|d| &mut d.trocar_roll_deg, |r| r.theta4_deg.sd),
            (|d| &mut d.trocar_yaw_deg, |r| r.theta2_deg.sd),
            (|d| &mut d.eye_pose_deg, |r| r.theta4_deg.sd),
        ];
        for (field, out) in cases {
            let mut wide = base;
            *field(&mut wide) = Distribution::Normal { mean: 0.0, sd: 2.0 };
            let a = monte_carlo(&p, &c, &base, 300, 5, &g).unwrap();
            let b = monte_carlo(&p, &c, &wide, 300, 5, &g).unwrap();
            assert!(out(&b) >= out(&a), "{} vs {}", out(&b), out(&a));
        }
    }

    #[test]
    fn csv_has_a_row_per_target_and_magnitude() {
        let r = run_scenario(&ErrorScenario::new(ErrorKind::TrocarRoll), &cfg()).unwrap();
        assert_eq!(r.to_csv().lines().count(), 1 + 5 * 9);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ErrorKind::ALL {
            assert_eq!(k.as_str().parse::<ErrorKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
    }
}
