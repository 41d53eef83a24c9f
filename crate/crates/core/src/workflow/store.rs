//! Flat-file workspace: `scenes/<id>.json` holds a versioned scene with its
//! pinned targets, `plans/<inputs hash>.json` holds plan records.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::record::{finalize, overlay, plan, sha256_json, what_if, PlanRecord, PlanRequest, TargetInput, WhatIfRequest, WhatIfRow};
use super::scene::{Scene, SceneContext};
use crate::access::{GridMeta, Overlay};
use crate::error::{Error, Result};
use crate::geometry::RetinalTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct StoredScene {
    pub id: String,
    /// Incremented on every change; writers must quote the version they read.
    pub version: u64,
    pub scene: Scene,
    #[serde(default)]
    pub targets: Vec<TargetInput>,
}

/// A target pinned to a scene, with its reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PinnedTarget {
    pub index: usize,
    pub input: TargetInput,
    pub retinal: RetinalTarget,
    pub scene_version: u64,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    /// Calibrated contexts keyed by scene hash; image detection is the slow part.
    contexts: Mutex<HashMap<String, Arc<SceneContext>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Writes through a temporary file so readers never see partial JSON.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("scenes"))?;
        std::fs::create_dir_all(root.join("plans"))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
            contexts: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn scene_path(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(Error::NotFound(format!("scene '{id}'")));
        }
        Ok(self.root.join("scenes").join(format!("{id}.json")))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut m = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        m.entry(id.to_string()).or_default().clone()
    }

    /// Scene context with image paths resolved against the workspace root.
    pub fn context(&self, scene: &Scene) -> Result<Arc<SceneContext>> {
        let key = sha256_json(scene)?;
        if let Some(c) = self.contexts.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(c.clone());
        }
        let ctx = Arc::new(scene.context(&self.root)?);
        self.contexts.lock().unwrap_or_else(|e| e.into_inner()).insert(key, ctx.clone());
        Ok(ctx)
    }

    pub fn create_scene(&self, scene: Scene) -> Result<StoredScene> {
        scene.validate()?;
        scene.check_files(&self.root)?;
        loop {
            let id = format!("{:016x}", rand::random::<u64>());
            let path = self.scene_path(&id)?;
            let lock = self.lock(&id);
            let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
            if path.exists() {
                continue;
            }
            let stored = StoredScene {
                id,
                version: 1,
                scene,
                targets: Vec::new(),
            };
            write_atomic(&path, &serde_json::to_vec_pretty(&stored)?)?;
            return Ok(stored);
        }
    }

    pub fn get_scene(&self, id: &str) -> Result<StoredScene> {
        let path = self.scene_path(id)?;
        let text = std::fs::read_to_string(&path).map_err(|_| Error::NotFound(format!("scene '{id}'")))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Read-modify-write under the scene's lock with an optimistic version check.
    fn update(&self, id: &str, expected: u64, f: impl FnOnce(&mut StoredScene) -> Result<()>) -> Result<StoredScene> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut s = self.get_scene(id)?;
        if s.version != expected {
            return Err(Error::VersionConflict {
                id: id.to_string(),
                expected,
                found: s.version,
            });
        }
        f(&mut s)?;
        s.version += 1;
        write_atomic(&self.scene_path(id)?, &serde_json::to_vec_pretty(&s)?)?;
        Ok(s)
    }

    pub fn put_scene(&self, id: &str, scene: Scene, expected_version: u64) -> Result<StoredScene> {
        scene.validate()?;
        scene.check_files(&self.root)?;
        self.update(id, expected_version, |s| {
            s.scene = scene;
            Ok(())
        })
    }

    pub fn add_targets(&self, id: &str, targets: &[TargetInput], expected_version: u64) -> Result<StoredScene> {
        self.update(id, expected_version, |s| {
            s.targets.extend_from_slice(targets);
            Ok(())
        })
    }

    pub fn clear_targets(&self, id: &str, expected_version: u64) -> Result<StoredScene> {
        self.update(id, expected_version, |s| {
            s.targets.clear();
            Ok(())
        })
    }

    /// Reconstructs `input` against the scene and pins it. With
    /// `expected_version` the write is rejected if the scene changed.
    pub fn pin_target(&self, id: &str, input: TargetInput, expected_version: Option<u64>) -> Result<PinnedTarget> {
        let current = self.get_scene(id)?;
        let retinal = input.resolve(&*self.context(&current.scene)?)?;
        let stored = self.add_targets(id, &[input], expected_version.unwrap_or(current.version))?;
        Ok(PinnedTarget {
            index: stored.targets.len() - 1,
            input,
            retinal,
            scene_version: stored.version,
        })
    }

    /// Request planned for a stored scene: its pinned targets, or the
    /// posterior pole when none are pinned.
    pub fn default_request(stored: &StoredScene) -> PlanRequest {
        let targets = if stored.targets.is_empty() {
            vec![TargetInput::Polar { polar_deg: 180.0, azimuth_deg: 0.0 }]
        } else {
            stored.targets.clone()
        };
        PlanRequest { targets, executed_tilt_deg: None }
    }

    fn request_for(stored: &StoredScene, request: Option<PlanRequest>) -> PlanRequest {
        match request {
            Some(r) if !r.targets.is_empty() => r,
            Some(r) => PlanRequest {
                executed_tilt_deg: r.executed_tilt_deg,
                ..Self::default_request(stored)
            },
            None => Self::default_request(stored),
        }
    }

    /// Plans a stored scene and saves the record.
    pub fn plan_scene(&self, id: &str, request: Option<PlanRequest>) -> Result<PlanRecord> {
        let stored = self.get_scene(id)?;
        let request = Self::request_for(&stored, request);
        let mut record = plan(&stored.scene, &*self.context(&stored.scene)?, &request)?;
        record.scene_id = Some(stored.id.clone());
        record.scene_version = Some(stored.version);
        let record = finalize(record)?;
        self.save_plan(&record)?;
        Ok(record)
    }

    pub fn scene_overlay(&self, id: &str, grid: GridMeta) -> Result<Overlay> {
        let stored = self.get_scene(id)?;
        overlay(&stored.scene, &*self.context(&stored.scene)?, &Self::default_request(&stored), grid)
    }

    pub fn scene_what_if(&self, id: &str, req: &WhatIfRequest) -> Result<WhatIfRow> {
        let stored = self.get_scene(id)?;
        what_if(&stored.scene, &*self.context(&stored.scene)?, &Self::default_request(&stored), req)
    }

    pub fn plan_path(&self, inputs_sha256: &str) -> Result<PathBuf> {
        if inputs_sha256.len() != 64 || !inputs_sha256.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::NotFound(format!("plan '{inputs_sha256}'")));
        }
        Ok(self.root.join("plans").join(format!("{inputs_sha256}.json")))
    }

    /// Stores a record under its inputs hash and returns the path.
    pub fn save_plan(&self, record: &PlanRecord) -> Result<PathBuf> {
        let path = self.plan_path(&record.inputs_sha256)?;
        write_atomic(&path, &serde_json::to_vec_pretty(record)?)?;
        Ok(path)
    }

    pub fn load_plan(&self, inputs_sha256: &str) -> Result<PlanRecord> {
        let path = self.plan_path(inputs_sha256)?;
        let text = std::fs::read_to_string(&path).map_err(|_| Error::NotFound(format!("plan '{inputs_sha256}'")))?;
        Ok(serde_json::from_str(&text)?)
    }
}
