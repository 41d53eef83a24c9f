//! Plan records: the full, reproducible output of planning one batch of
//! targets against a scene.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{Scene, SceneContext};
use crate::access::{GridMeta, Overlay, RetinalRegionSample};
use crate::error::{Error, Result};
use crate::errorlab::{evaluate, ErrorKind, JointError, Perturbation};
use crate::fundus::{reconstruct_target, FundusImageMeta};
use crate::geometry::{RetinalTarget, SphericalPoint};
use crate::pipeline::{plan_targets, simulate_execution, ExecutionOutcome, Reason, SurgicalPlan};
use crate::posture::EyeTiltProposal;
use crate::robot::{JointTarget, RobotSetup, SweepResult};
use crate::trocar::ApproachPlan;

pub const PLAN_SCHEMA_VERSION: u32 = 1;
const DECIMALS: i32 = 6;

/// A target as the operator gave it: a click on the fundus image in raster
/// pixels (column, row from the top-left), or a retinal position directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(untagged)]
pub enum TargetInput {
    Pixel { x_px: f64, y_px: f64 },
    Polar { polar_deg: f64, azimuth_deg: f64 },
}

impl TargetInput {
    /// Retinal position for this input under the scene's calibration.
    pub fn resolve(&self, ctx: &SceneContext) -> Result<RetinalTarget> {
        match *self {
            TargetInput::Polar { polar_deg, azimuth_deg } => {
                let p = SphericalPoint::new(polar_deg, azimuth_deg)?;
                Ok(RetinalTarget::from_polar(p))
            }
            TargetInput::Pixel { x_px, y_px } => {
                let meta = ctx
                    .fundus
                    .as_ref()
                    .ok_or_else(|| Error::SceneInvalid("pixel targets need a fundus image or manual calibration".into()))?;
                reconstruct_target(x_px, y_px, meta, &ctx.config.eye, ctx.compensation.as_ref())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub targets: Vec<TargetInput>,
    /// Overrides the scene's executed tilt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed_tilt_deg: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PlannedTarget {
    pub input: TargetInput,
    pub retinal: RetinalTarget,
    /// Target on the untilted eye, mm from the eye centre.
    pub position_mm: [f64; 3],
    pub joints: Option<JointTarget>,
    pub visible: bool,
    pub feasible: bool,
    pub reasons: Vec<Reason>,
    /// Simulated execution of the joints on the planned eye.
    pub execution: Option<ExecutionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PlanRecord {
    pub schema_version: u32,
    pub engine_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_version: Option<u64>,
    /// Milliseconds since the Unix epoch; excluded from `content_sha256`.
    pub created_unix_ms: u64,
    /// Hash of the scene, request and engine version; names the plan file.
    pub inputs_sha256: String,
    /// Hash of this record without `created_unix_ms` and itself.
    pub content_sha256: String,
    pub scene: Scene,
    pub request: PlanRequest,
    pub fundus: Option<FundusImageMeta>,
    pub centroid: SphericalPoint,
    pub tilt: EyeTiltProposal,
    pub applied_tilt_deg: [f64; 2],
    pub approach: ApproachPlan,
    pub sweep: SweepResult,
    pub robot: RobotSetup,
    pub targets: Vec<PlannedTarget>,
    pub reasons: Vec<Reason>,
    pub feasible: bool,
}

/// Rounds every number in `v` to six decimals, in place.
pub fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| !n.is_i64() && !n.is_u64()) {
                let s = 10f64.powi(DECIMALS);
                let r = (f * s).round() / s;
                // Avoid emitting "-0.0".
                let r = if r == 0.0 { 0.0 } else { r };
                if let Some(x) = serde_json::Number::from_f64(r) {
                    *n = x;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// `value` with every number rounded to six decimals.
pub fn rounded<T: Serialize + serde::de::DeserializeOwned>(value: &T) -> Result<T> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    Ok(serde_json::from_value(v)?)
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON of `value`.
pub fn sha256_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl PlanRecord {
    pub fn compute_content_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("created_unix_ms");
            o.remove("content_sha256");
        }
        sha256_json(&v)
    }
}

pub fn inputs_hash(scene: &Scene, request: &PlanRequest) -> Result<String> {
    sha256_json(&serde_json::json!({
        "engine_version": crate::ENGINE_VERSION,
        "scene": scene,
        "request": request,
    }))
}

/// Resolves every target of the request.
pub fn resolve_targets(ctx: &SceneContext, request: &PlanRequest) -> Result<Vec<RetinalTarget>> {
    if request.targets.is_empty() {
        return Err(Error::SceneInvalid("at least one target is required".into()));
    }
    request.targets.iter().map(|t| t.resolve(ctx)).collect()
}

/// Plans a batch of targets against a scene. Pure apart from the timestamp.
pub fn plan(scene: &Scene, ctx: &SceneContext, request: &PlanRequest) -> Result<PlanRecord> {
    plan_at(scene, ctx, request, now_ms())
}

/// Unrounded planner output for a request.
pub fn surgical_plan(scene: &Scene, ctx: &SceneContext, request: &PlanRequest) -> Result<(Vec<RetinalTarget>, SurgicalPlan)> {
    let retinal = resolve_targets(ctx, request)?;
    let points: Vec<SphericalPoint> = retinal.iter().map(RetinalTarget::spherical).collect();
    let executed = request.executed_tilt_deg.or(scene.executed_tilt_deg);
    let sp = plan_targets(&ctx.config, &points, executed)?;
    Ok((retinal, sp))
}

pub fn plan_at(scene: &Scene, ctx: &SceneContext, request: &PlanRequest, created_unix_ms: u64) -> Result<PlanRecord> {
    let (retinal, sp) = surgical_plan(scene, ctx, request)?;
    let execution = simulate_execution(&sp, &ctx.config)?;
    let eye = &ctx.config.eye;

    let targets = request
        .targets
        .iter()
        .zip(&retinal)
        .zip(sp.targets.iter().zip(execution))
        .map(|((input, r), (t, exec))| {
            let p = eye.spherical_to_cartesian(&t.target);
            PlannedTarget {
                input: *input,
                retinal: *r,
                position_mm: [p.x, p.y, p.z],
                joints: t.joints,
                visible: t.visible,
                feasible: t.feasible,
                reasons: t.reasons.clone(),
                execution: exec,
            }
        })
        .collect();

    let record = PlanRecord {
        schema_version: PLAN_SCHEMA_VERSION,
        engine_version: crate::ENGINE_VERSION.to_string(),
        scene_id: None,
        scene_version: None,
        created_unix_ms,
        inputs_sha256: inputs_hash(scene, request)?,
        content_sha256: String::new(),
        scene: scene.clone(),
        request: request.clone(),
        fundus: ctx.fundus,
        centroid: sp.centroid,
        tilt: sp.tilt,
        applied_tilt_deg: sp.applied_tilt_deg,
        approach: sp.approach,
        sweep: sp.sweep,
        robot: sp.setup,
        targets,
        reasons: sp.reasons,
        feasible: sp.feasible,
    };
    finalize(record)
}

/// Rounds the record and stamps its content hash.
pub fn finalize(record: PlanRecord) -> Result<PlanRecord> {
    let mut r = rounded(&record)?;
    r.content_sha256 = r.compute_content_hash()?;
    Ok(r)
}

/// Overlay of the visible and accessible regions for a request's plan.
pub fn overlay(scene: &Scene, ctx: &SceneContext, request: &PlanRequest, grid: GridMeta) -> Result<Overlay> {
    let (_, sp) = surgical_plan(scene, ctx, request)?;
    let sample = RetinalRegionSample::from_plan(&sp, &ctx.config, grid)?;
    rounded(&sample.overlay())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub kind: ErrorKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct WhatIfTarget {
    pub target: SphericalPoint,
    pub error: Option<JointError>,
}

/// Joint errors for one error magnitude applied to a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct WhatIfRow {
    pub kind: ErrorKind,
    pub unit: String,
    pub magnitude: f64,
    pub targets: Vec<WhatIfTarget>,
    /// Mean over the targets that could be evaluated.
    pub mean: Option<JointError>,
}

pub fn what_if(scene: &Scene, ctx: &SceneContext, request: &PlanRequest, req: &WhatIfRequest) -> Result<WhatIfRow> {
    if !req.magnitude.is_finite() {
        return Err(Error::InvalidInput("magnitude must be finite".into()));
    }
    let (_, sp) = surgical_plan(scene, ctx, request)?;
    let errs = evaluate(&sp, &ctx.config, &Perturbation::single(req.kind, req.magnitude), &ctx.offset)?;
    let ok: Vec<&JointError> = errs.iter().flatten().collect();
    let mean = (!ok.is_empty()).then(|| {
        let n = ok.len() as f64;
        JointError {
            d_theta2_deg: ok.iter().map(|e| e.d_theta2_deg).sum::<f64>() / n,
            d_theta4_deg: ok.iter().map(|e| e.d_theta4_deg).sum::<f64>() / n,
            d_z_mm: ok.iter().map(|e| e.d_z_mm).sum::<f64>() / n,
        }
    });
    rounded(&WhatIfRow {
        kind: req.kind,
        unit: req.kind.unit().to_string(),
        magnitude: req.magnitude,
        targets: sp
            .targets
            .iter()
            .zip(errs)
            .map(|(t, e)| WhatIfTarget { target: t.target, error: e })
            .collect(),
        mean,
    })
}
