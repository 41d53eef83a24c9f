//! Scene files, plan records and the on-disk workspace shared by the CLI and
//! the HTTP service.

pub mod record;
pub mod scene;
pub mod store;

pub use record::{
    finalize, inputs_hash, overlay, plan, plan_at, round_json, rounded, sha256_json, surgical_plan, what_if, PlanRecord,
    PlanRequest,
    PlannedTarget, TargetInput, WhatIfRequest, WhatIfRow, WhatIfTarget,
};
pub use scene::{AxisParams, EyeParams, FundusParams, RobotParams, Scene, SceneContext, SceneFlags, TrocarParams, SCENE_SCHEMA_VERSION};
pub use store::{PinnedTarget, StoredScene, Workspace};

/// Published JSON schemas, as `(file stem, schema)` pairs.
pub fn json_schemas() -> Vec<(&'static str, serde_json::Value)> {
    use crate::access::Overlay;
    use crate::errorlab::{ErrorDistributions, ErrorScenario, MonteCarloResult, SensitivityResult};
    use crate::fundus::FundusSidecar;
    use schemars::schema_for;

    let pairs = [
        ("scene", schema_for!(Scene)),
        ("stored_scene", schema_for!(StoredScene)),
        ("target_input", schema_for!(TargetInput)),
        ("pinned_target", schema_for!(PinnedTarget)),
        ("plan_request", schema_for!(PlanRequest)),
        ("plan_record", schema_for!(PlanRecord)),
        ("overlay", schema_for!(Overlay)),
        ("whatif_request", schema_for!(WhatIfRequest)),
        ("whatif_row", schema_for!(WhatIfRow)),
        ("error_scenario", schema_for!(ErrorScenario)),
        ("sensitivity_result", schema_for!(SensitivityResult)),
        ("error_distributions", schema_for!(ErrorDistributions)),
        ("monte_carlo_result", schema_for!(MonteCarloResult)),
        ("fundus_sidecar", schema_for!(FundusSidecar)),
    ];
    pairs
        .into_iter()
        .map(|(name, s)| (name, serde_json::to_value(s).expect("schemas serialize")))
        .collect()
}
