//! Sampled visible and robot-accessible regions of the retina.
//!
//! The posterior hemisphere (eye frame, untilted) is sampled on a regular
//! polar × azimuth grid of cell centres. Lat-long cells are not equal-area, so
//! every sample carries its cell's solid angle; areas and centroids are
//! weighted by it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between_deg, EyeModel, SphericalPoint, Vec3};
use crate::pipeline::{PlannerConfig, SurgicalPlan};
use crate::posture::fov_center_vector;
use crate::robot::RobotSetup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GridMeta {
    pub polar_step_deg: f64,
    pub azimuth_step_deg: f64,
    /// Smallest polar angle covered (90° for the posterior hemisphere).
    pub polar_min_deg: f64,
    pub polar_count: usize,
    pub azimuth_count: usize,
}

impl Default for GridMeta {
    fn default() -> Self {
        Self::new(1.0, 2.0, 90.0).expect("default grid is valid")
    }
}

impl GridMeta {
    pub fn new(polar_step_deg: f64, azimuth_step_deg: f64, polar_min_deg: f64) -> Result<Self> {
        if !(polar_step_deg > 0.0 && azimuth_step_deg > 0.0) || !(0.0..180.0).contains(&polar_min_deg) {
            return Err(Error::InvalidInput("grid steps must be positive and polar_min in [0, 180)".into()));
        }
        Ok(Self {
            polar_step_deg,
            azimuth_step_deg,
            polar_min_deg,
            polar_count: ((180.0 - polar_min_deg) / polar_step_deg).round() as usize,
            azimuth_count: (360.0 / azimuth_step_deg).round() as usize,
        })
    }

    /// Sample points in row-major order (polar outer, azimuth inner) with
    /// their solid-angle weights.
    pub fn samples(&self) -> (Vec<SphericalPoint>, Vec<f64>) {
        let dp = self.polar_step_deg.to_radians();
        let da = self.azimuth_step_deg.to_radians();
        let mut pts = Vec::with_capacity(self.polar_count * self.azimuth_count);
        let mut w = Vec::with_capacity(pts.capacity());
        for i in 0..self.polar_count {
            let polar = self.polar_min_deg + (i as f64 + 0.5) * self.polar_step_deg;
            let weight = polar.to_radians().sin() * dp * da;
            for j in 0..self.azimuth_count {
                let az = -180.0 + (j as f64 + 0.5) * self.azimuth_step_deg;
                pts.push(SphericalPoint {
                    polar_deg: polar,
                    azimuth_deg: az,
                });
                w.push(weight);
            }
        }
        (pts, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetinalRegionSample {
    pub grid: GridMeta,
    pub points: Vec<SphericalPoint>,
    pub weights: Vec<f64>,
    pub visible: Vec<bool>,
    pub accessible: Vec<bool>,
    pub both: Vec<bool>,
}

/// Samples whose angular distance from the visible-area centre is within half
/// the view angle.
pub fn visible_mask(points: &[SphericalPoint], alpha_deg: f64, beta_deg: f64, view_angle_deg: f64) -> Vec<bool> {
    let fov = fov_center_vector(alpha_deg, beta_deg, 1.0);
    let half = view_angle_deg / 2.0;
    points.iter().map(|p| angle_between_deg(&p.unit_vector(), &fov) <= half + 1e-9).collect()
}

/// Samples the robot can touch from `setup` with the eye tilted as `tilted`.
pub fn accessible_mask(points: &[SphericalPoint], tilted: &EyeModel, setup: &RobotSetup) -> Vec<bool> {
    points
        .par_iter()
        .map(|p| {
            let world = tilted.tilt_point(&tilted.spherical_to_cartesian(p));
            setup
                .solve_unchecked(&world, tilted)
                .map(|j| j.within_limits)
                .unwrap_or(false)
        })
        .collect()
}

impl RetinalRegionSample {
    pub fn from_plan(plan: &SurgicalPlan, cfg: &PlannerConfig, grid: GridMeta) -> Result<Self> {
        let tilted = plan.tilted_eye(cfg)?;
        Ok(Self::compute(grid, &tilted, &plan.setup, cfg.view_angle_deg))
    }

    pub fn compute(grid: GridMeta, tilted: &EyeModel, setup: &RobotSetup, view_angle_deg: f64) -> Self {
        let (points, weights) = grid.samples();
        let visible = visible_mask(&points, tilted.tilt_alpha_deg, tilted.tilt_beta_deg, view_angle_deg);
        let accessible = accessible_mask(&points, tilted, setup);
        let both = visible.iter().zip(&accessible).map(|(a, b)| *a && *b).collect();
        Self {
            grid,
            points,
            weights,
            visible,
            accessible,
            both,
        }
    }

    /// Fraction of the whole sphere covered by `mask`.
    pub fn area_fraction(&self, mask: &[bool]) -> f64 {
        let s: f64 = self.weights.iter().zip(mask).filter(|(_, m)| **m).map(|(w, _)| w).sum();
        s / (4.0 * std::f64::consts::PI)
    }

    /// Area-weighted mean unit vector of `mask`, if any sample is set.
    pub fn centroid(&self, mask: &[bool]) -> Option<Vec3> {
        let mut sum = Vec3::zeros();
        let mut total = 0.0;
        for ((p, w), m) in self.points.iter().zip(&self.weights).zip(mask) {
            if *m {
                sum += p.unit_vector() * *w;
                total += w;
            }
        }
        (total > 0.0).then(|| sum / total)
    }

    pub fn overlay(&self) -> Overlay {
        Overlay {
            grid: self.grid,
            visible: Rle::encode(&self.visible),
            accessible: Rle::encode(&self.accessible),
            both: Rle::encode(&self.both),
            visible_area_fraction: self.area_fraction(&self.visible),
            accessible_area_fraction: self.area_fraction(&self.accessible),
            both_area_fraction: self.area_fraction(&self.both),
        }
    }
}

/// Run-length encoded mask: alternating run lengths starting with `first`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Rle {
    pub first: bool,
    pub runs: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &[bool]) -> Self {
        let first = mask.first().copied().unwrap_or(false);
        let mut runs = Vec::new();
        let mut cur = first;
        let mut n = 0u32;
        for &m in mask {
            if m == cur {
                n += 1;
            } else {
                runs.push(n);
                cur = m;
                n = 1;
            }
        }
        if n > 0 {
            runs.push(n);
        }
        Self { first, runs }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.runs.iter().map(|r| *r as usize).sum());
        let mut cur = self.first;
        for &r in &self.runs {
            out.extend(std::iter::repeat(cur).take(r as usize));
            cur = !cur;
        }
        out
    }
}

/// Overlay export consumed by the operator console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Overlay {
    pub grid: GridMeta,
    pub visible: Rle,
    pub accessible: Rle,
    pub both: Rle,
    pub visible_area_fraction: f64,
    pub accessible_area_fraction: f64,
    pub both_area_fraction: f64,
}
