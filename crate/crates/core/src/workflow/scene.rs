//! Scene files: everything about the eye, trocars, robot and fundus image
//! that a plan depends on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorlab::{OffsetGeometry, DEFAULT_INSERT_LENGTH_MM};
use crate::fundus::{calibrate, load_gray_image, AxisCompensation, FundusImageMeta, FundusSidecar};
use crate::geometry::{EyeModel, DEFAULT_EYE_RADIUS_MM, DEFAULT_TILT_LIMIT_DEG};
use crate::pipeline::{PlannerConfig, DEFAULT_VIEW_ANGLE_DEG};
use crate::robot::{
    PcjmModel, DEFAULT_EFFECTIVE_LENGTH_MM, DEFAULT_INSTRUMENT_LENGTH_MM, DEFAULT_STROKE_MM, DEFAULT_SWEEP_STEP_MM,
    DEFAULT_THETA4_LIMIT_DEG,
};
use crate::trocar::{TrocarLayout, TrocarSide, DEFAULT_AZIMUTH_OFFSETS_DEG, DEFAULT_RING_POLAR_DEG, DEFAULT_THETA_INI_BAND_DEG};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EyeParams {
    pub radius_mm: f64,
    pub tilt_limit_deg: f64,
}

impl Default for EyeParams {
    fn default() -> Self {
        Self {
            radius_mm: DEFAULT_EYE_RADIUS_MM,
            tilt_limit_deg: DEFAULT_TILT_LIMIT_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrocarParams {
    pub ring_polar_deg: f64,
    pub side: TrocarSide,
    pub azimuth_offsets_deg: [f64; 3],
}

impl Default for TrocarParams {
    fn default() -> Self {
        Self {
            ring_polar_deg: DEFAULT_RING_POLAR_DEG,
            side: TrocarSide::ThreeOClock,
            azimuth_offsets_deg: DEFAULT_AZIMUTH_OFFSETS_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    pub stroke_mm: f64,
    pub sweep_step_mm: f64,
    pub effective_length_mm: f64,
    pub theta4_limit_deg: f64,
    pub theta_ini_band_deg: [f64; 2],
    pub instrument_length_mm: f64,
    /// Inserted instrument length, used by the offset error model.
    pub insert_length_mm: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            stroke_mm: DEFAULT_STROKE_MM,
            sweep_step_mm: DEFAULT_SWEEP_STEP_MM,
            effective_length_mm: DEFAULT_EFFECTIVE_LENGTH_MM,
            theta4_limit_deg: DEFAULT_THETA4_LIMIT_DEG,
            theta_ini_band_deg: DEFAULT_THETA_INI_BAND_DEG,
            instrument_length_mm: DEFAULT_INSTRUMENT_LENGTH_MM,
            insert_length_mm: DEFAULT_INSERT_LENGTH_MM,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FundusParams {
    /// Image path, relative to the scene's base directory unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Disc centre `[col, row]` in raster pixels; skips detection of the centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_center_px: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_diameter_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SceneFlags {
    /// Rotate pixel-derived targets from the optical to the visual axis.
    pub apply_axis_compensation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AxisParams {
    pub kappa_deg: f64,
    pub nodal_offset_mm: f64,
}

impl Default for AxisParams {
    fn default() -> Self {
        Self {
            kappa_deg: 5.0,
            nodal_offset_mm: 16.4,
        }
    }
}

fn default_view_angle() -> f64 {
    DEFAULT_VIEW_ANGLE_DEG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub eye: EyeParams,
    #[serde(default)]
    pub trocars: TrocarParams,
    #[serde(default)]
    pub robot: RobotParams,
    /// Microscope view angle, used for image calibration and visibility.
    #[serde(default = "default_view_angle")]
    pub view_angle_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fundus: Option<FundusParams>,
    #[serde(default)]
    pub flags: SceneFlags,
    #[serde(default)]
    pub axis_compensation: AxisParams,
    /// Tilt the surgeon actually applied `[α, β]`; downstream steps re-solve for it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed_tilt_deg: Option<[f64; 2]>,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            name: None,
            eye: EyeParams::default(),
            trocars: TrocarParams::default(),
            robot: RobotParams::default(),
            view_angle_deg: DEFAULT_VIEW_ANGLE_DEG,
            fundus: None,
            flags: SceneFlags::default(),
            axis_compensation: AxisParams::default(),
            executed_tilt_deg: None,
        }
    }
}

/// Planner inputs derived from a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub config: PlannerConfig,
    pub fundus: Option<FundusImageMeta>,
    pub compensation: Option<AxisCompensation>,
    pub offset: OffsetGeometry,
}

fn invalid(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) | Error::DegenerateGeometry(m) => Error::SceneInvalid(m),
        other => other,
    }
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scene = serde_json::from_str(text).map_err(|e| Error::SceneInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scene file; relative image paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::SceneInvalid(format!("{}: {e}", path.display())))?;
        let scene = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        scene.check_files(&base)?;
        Ok((scene, base))
    }

    pub fn eye_model(&self) -> Result<EyeModel> {
        let eye = EyeModel {
            radius_mm: self.eye.radius_mm,
            tilt_limit_deg: self.eye.tilt_limit_deg,
            ..EyeModel::default()
        };
        eye.validate().map_err(invalid)?;
        Ok(eye)
    }

    /// Structural checks that need no files.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::SceneInvalid(format!(
                "unsupported schema_version {} (expected {SCENE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.planner_config()?;
        if !(self.view_angle_deg > 0.0 && self.view_angle_deg < 180.0) {
            return Err(Error::SceneInvalid("view_angle_deg must be in (0, 180)".into()));
        }
        let r = &self.robot;
        if !(r.insert_length_mm >= 0.0 && r.instrument_length_mm > r.insert_length_mm) {
            return Err(Error::SceneInvalid("instrument_length_mm must exceed insert_length_mm".into()));
        }
        if !(r.theta4_limit_deg > 0.0) || !(r.theta_ini_band_deg[0] <= r.theta_ini_band_deg[1]) {
            return Err(Error::SceneInvalid("theta4 limit must be positive and theta_ini band ordered".into()));
        }
        if let Some(t) = self.executed_tilt_deg {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::SceneInvalid("executed_tilt_deg must be finite".into()));
            }
        }
        if let Some(f) = &self.fundus {
            let manual = f.manual_center_px.is_some() && f.manual_diameter_px.is_some();
            if f.image.is_none() && !manual {
                return Err(Error::SceneInvalid(
                    "fundus needs an image or both manual_center_px and manual_diameter_px".into(),
                ));
            }
            if f.manual_diameter_px.is_some_and(|d| !(d > 0.0)) {
                return Err(Error::SceneInvalid("manual_diameter_px must be positive".into()));
            }
        }
        if self.flags.apply_axis_compensation {
            AxisCompensation::new(self.axis_compensation.kappa_deg, self.axis_compensation.nodal_offset_mm, &self.eye_model()?)
                .map_err(invalid)?;
        }
        Ok(())
    }

    pub fn image_path(&self, base: &Path) -> Option<PathBuf> {
        let img = self.fundus.as_ref()?.image.as_ref()?;
        Some(base.join(img))
    }

    /// Every referenced file must exist.
    pub fn check_files(&self, base: &Path) -> Result<()> {
        if let Some(p) = self.image_path(base) {
            if !p.is_file() {
                return Err(Error::SceneInvalid(format!("fundus image {} not found", p.display())));
            }
        }
        Ok(())
    }

    pub fn planner_config(&self) -> Result<PlannerConfig> {
        let eye = self.eye_model()?;
        let t = &self.trocars;
        let layout = TrocarLayout::new(t.ring_polar_deg, t.side, t.azimuth_offsets_deg, &eye).map_err(invalid)?;
        let r = &self.robot;
        let pcjm = PcjmModel {
            stroke_mm: r.stroke_mm,
            sweep_step_mm: r.sweep_step_mm,
            effective_length_mm: r.effective_length_mm,
            initial_position_mm: 0.0,
        };
        pcjm.validate().map_err(invalid)?;
        Ok(PlannerConfig {
            eye,
            layout,
            pcjm,
            theta4_limit_deg: r.theta4_limit_deg,
            theta_ini_band_deg: r.theta_ini_band_deg,
            view_angle_deg: self.view_angle_deg,
            instrument_length_mm: r.instrument_length_mm,
        })
    }

    /// Full planner context, calibrating the fundus image if one is given.
    pub fn context(&self, base: &Path) -> Result<SceneContext> {
        self.validate()?;
        self.check_files(base)?;
        let config = self.planner_config()?;
        let fundus = match &self.fundus {
            None => None,
            Some(f) => {
                let image = self.image_path(base).map(|p| load_gray_image(&p)).transpose()?;
                let sidecar = FundusSidecar {
                    view_angle_deg: self.view_angle_deg,
                    manual_center_px: f.manual_center_px,
                    manual_diameter_px: f.manual_diameter_px,
                };
                Some(calibrate(image.as_ref(), &sidecar, &config.eye)?)
            }
        };
        let compensation = if self.flags.apply_axis_compensation {
            let a = &self.axis_compensation;
            Some(AxisCompensation::new(a.kappa_deg, a.nodal_offset_mm, &config.eye).map_err(invalid)?)
        } else {
            None
        };
        Ok(SceneContext {
            config,
            fundus,
            compensation,
            offset: OffsetGeometry {
                instrument_length_mm: self.robot.instrument_length_mm,
                insert_length_mm: self.robot.insert_length_mm,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scene_uses_defaults() {
        let s = Scene::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(s, Scene::default());
        let ctx = s.context(Path::new(".")).unwrap();
        assert_eq!(ctx.config, PlannerConfig::default());
        assert!(ctx.fundus.is_none() && ctx.compensation.is_none());
    }

    #[test]
    fn rejects_bad_scenes() {
        for text in [
            r#"{"schema_version": 2}"#,
            r#"{"schema_version": 1, "unknown": 3}"#,
            r#"{"schema_version": 1, "eye": {"radius_mm": -1}}"#,
            r#"{"schema_version": 1, "robot": {"instrument_length_mm": 10}}"#,
            r#"{"schema_version": 1, "fundus": {}}"#,
            r#"{"schema_version": 1, "view_angle_deg": 0}"#,
        ] {
            assert!(matches!(Scene::from_json(text), Err(Error::SceneInvalid(_))), "{text}");
        }
    }

    #[test]
    fn missing_image_is_reported() {
        let mut s = Scene::default();
        s.fundus = Some(FundusParams {
            image: Some("nope.png".into()),
            ..Default::default()
        });
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(s.check_files(dir.path()), Err(Error::SceneInvalid(_))));
        std::fs::write(dir.path().join("nope.png"), b"not a png").unwrap();
        s.check_files(dir.path()).unwrap();
        assert!(matches!(s.context(dir.path()), Err(Error::ImageUnreadable(_))));
    }

    #[test]
    fn manual_calibration_needs_no_image() {
        let mut s = Scene::default();
        s.fundus = Some(FundusParams {
            manual_center_px: Some([512.0, 512.0]),
            manual_diameter_px: Some(900.0),
            ..Default::default()
        });
        s.flags.apply_axis_compensation = true;
        let ctx = s.context(Path::new(".")).unwrap();
        assert_eq!(ctx.fundus.unwrap().detected_diameter_px, 900.0);
        assert!((ctx.compensation.unwrap().kappa2_deg - 6.7749).abs() < 1e-3);
    }
}
