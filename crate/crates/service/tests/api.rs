use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use retplan::api::router;
use retplan_core::access::GridMeta;
use retplan_core::errorlab::ErrorKind;
use retplan_core::workflow::{
    overlay, plan_at, what_if, PlanRecord, PlanRequest, Scene, TargetInput, WhatIfRequest, Workspace,
};

struct Harness {
    _dir: tempfile::TempDir,
    ws: Arc<Workspace>,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Arc::new(Workspace::open(dir.path()).unwrap());
        Self { _dir: dir, ws }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = router(self.ws.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, v)
    }

    async fn new_scene(&self, scene: Value) -> String {
        let (s, v) = self.call("POST", "/scenes", Some(scene)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }
}

fn calibrated_scene() -> Value {
    json!({
        "schema_version": 1,
        "fundus": {"manual_center_px": [512.0, 512.0], "manual_diameter_px": 900.0}
    })
}

#[tokio::test]
async fn health_reports_version() {
    let h = Harness::new();
    let (s, v) = h.call("GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["engine_version"], retplan_core::ENGINE_VERSION);
}

#[tokio::test]
async fn scene_crud_with_version_conflict() {
    let h = Harness::new();
    let id = h.new_scene(json!({"schema_version": 1})).await;
    let (s, v) = h.call("GET", &format!("/scenes/{id}"), None).await;
    assert_eq!((s, v["version"].as_u64()), (StatusCode::OK, Some(1)));

    let body = json!({"version": 1, "scene": {"schema_version": 1, "view_angle_deg": 50.0}});
    let (s, v) = h.call("PUT", &format!("/scenes/{id}"), Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 2);
    let (s, v) = h.call("PUT", &format!("/scenes/{id}"), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "version_conflict");

    let (s, v) = h.call("GET", "/scenes/doesnotexist", None).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn invalid_input_is_4xx_with_code() {
    let h = Harness::new();
    let (s, v) = h.call("POST", "/scenes", Some(json!({"schema_version": 9}))).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("scene_invalid")));
    let (s, v) = h.call("POST", "/scenes", Some(json!({"schema_version": 1, "bogus": true}))).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_json")));

    let id = h.new_scene(calibrated_scene()).await;
    let (s, v) = h.call("POST", &format!("/scenes/{id}/targets"), Some(json!({"x_px": 1000.0, "y_px": 512.0}))).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("out_of_field")));
    let (s, _) = h.call("POST", &format!("/scenes/{id}/whatif"), Some(json!({"kind": "sideways", "magnitude": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pinned_targets_equal_library_reconstruction() {
    let h = Harness::new();
    let id = h.new_scene(calibrated_scene()).await;
    let (s, v) = h.call("POST", &format!("/scenes/{id}/targets"), Some(json!({"x_px": 512.0, "y_px": 512.0}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["retinal"]["polar_deg"], 180.0);

    let (_, v) = h.call("POST", &format!("/scenes/{id}/targets"), Some(json!({"x_px": 700.0, "y_px": 420.0}))).await;
    let scene: Scene = serde_json::from_value(calibrated_scene()).unwrap();
    let ctx = scene.context(h.ws.root()).unwrap();
    let lib = TargetInput::Pixel { x_px: 700.0, y_px: 420.0 }.resolve(&ctx).unwrap();
    assert_eq!(v["retinal"], serde_json::to_value(lib).unwrap());
    assert_eq!(v["index"], 1);

    // Stale optimistic version is rejected.
    let (s, _) = h
        .call("POST", &format!("/scenes/{id}/targets?version=1"), Some(json!({"polar_deg": 170.0, "azimuth_deg": 0.0})))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn plan_overlay_and_whatif_equal_library_calls() {
    let h = Harness::new();
    let id = h.new_scene(calibrated_scene()).await;
    for t in [json!({"x_px": 560.0, "y_px": 400.0}), json!({"polar_deg": 170.0, "azimuth_deg": 30.0})] {
        let (s, _) = h.call("POST", &format!("/scenes/{id}/targets"), Some(t)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, api_plan) = h.call("POST", &format!("/scenes/{id}/plan"), None).await;
    assert_eq!(s, StatusCode::OK, "{api_plan}");
    let api_plan: PlanRecord = serde_json::from_value(api_plan).unwrap();

    let stored = h.ws.get_scene(&id).unwrap();
    let ctx = stored.scene.context(h.ws.root()).unwrap();
    let req = PlanRequest { targets: stored.targets.clone(), executed_tilt_deg: None };
    let mut lib = plan_at(&stored.scene, &ctx, &req, api_plan.created_unix_ms).unwrap();
    lib.scene_id = Some(id.clone());
    lib.scene_version = Some(stored.version);
    let lib = retplan_core::workflow::finalize(lib).unwrap();
    assert_eq!(api_plan, lib);
    assert_eq!(h.ws.load_plan(&lib.inputs_sha256).unwrap(), lib);
    let (s, fetched) = h.call("GET", &format!("/plans/{}", lib.inputs_sha256), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(fetched, serde_json::to_value(&lib).unwrap());

    let (s, api_overlay) = h
        .call("GET", &format!("/scenes/{id}/overlay?polar_step_deg=2&azimuth_step_deg=4"), None)
        .await;
    assert_eq!(s, StatusCode::OK, "{api_overlay}");
    let lib_overlay = overlay(&stored.scene, &ctx, &req, GridMeta::new(2.0, 4.0, 90.0).unwrap()).unwrap();
    assert_eq!(api_overlay, serde_json::to_value(lib_overlay).unwrap());

    for (kind, m) in [("z_align", 2.0), ("instr_trocar_offset", 0.5), ("eye_pose", -1.0)] {
        let (s, api_row) = h.call("POST", &format!("/scenes/{id}/whatif"), Some(json!({"kind": kind, "magnitude": m}))).await;
        assert_eq!(s, StatusCode::OK, "{api_row}");
        let k: ErrorKind = kind.parse().unwrap();
        let lib_row = what_if(&stored.scene, &ctx, &req, &WhatIfRequest { kind: k, magnitude: m }).unwrap();
        assert_eq!(api_row, serde_json::to_value(lib_row).unwrap());
    }
}

#[tokio::test]
async fn whatif_offset_shows_closed_form_value() {
    let h = Harness::new();
    let id = h.new_scene(json!({"schema_version": 1})).await;
    let (_, zero) = h.call("POST", &format!("/scenes/{id}/whatif"), Some(json!({"kind": "trocar_yaw", "magnitude": 0}))).await;
    assert_eq!(zero["mean"], json!({"d_theta2_deg": 0.0, "d_theta4_deg": 0.0, "d_z_mm": 0.0}));
    let (_, row) = h
        .call("POST", &format!("/scenes/{id}/whatif"), Some(json!({"kind": "instr_trocar_offset", "magnitude": 0.5})))
        .await;
    let d = row["mean"]["d_theta2_deg"].as_f64().unwrap();
    assert!((d - 1.91).abs() < 0.01, "{row}");
}

#[tokio::test]
async fn plan_body_overrides_pinned_targets_and_tilt() {
    let h = Harness::new();
    let id = h.new_scene(json!({"schema_version": 1})).await;
    let body = json!({"targets": [{"polar_deg": 165.0, "azimuth_deg": 40.0}], "executed_tilt_deg": [-1.0, 2.0]});
    let (s, v) = h.call("POST", &format!("/scenes/{id}/plan"), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["applied_tilt_deg"], json!([-1.0, 2.0]));
    assert_eq!(v["targets"].as_array().unwrap().len(), 1);
    let (s, v) = h.call("POST", &format!("/scenes/{id}/plan"), Some(json!({"targets": [{"x_px": 3, "y_px": 4}]}))).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("scene_invalid")));
}
