//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use retplan_core::access::GridMeta;
use retplan_core::errorlab::{self, ErrorDistributions, ErrorKind, ErrorScenario};
use retplan_core::fundus::synth::{add_speckle, project_to_raster, render_disc, DiscStyle};
use retplan_core::fundus::{calibrate, load_gray_image, reconstruct_target, AxisCompensation, FundusSidecar};
use retplan_core::geometry::SphericalPoint;
use retplan_core::workflow::{self, PlanRequest, Scene, SceneContext, TargetInput, Workspace};
use retplan_core::{Error, Result};

pub const WORKSPACE_ENV: &str = "RETINA_PLAN_WORKSPACE";

#[derive(Debug, Parser)]
#[command(name = "retplan", version, about = "Preoperative planner for robot-assisted retinal surgery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan targets against a scene file.
    Plan(PlanArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Error-source sweeps and Monte Carlo.
    Errorlab {
        #[command(subcommand)]
        command: ErrorlabCommand,
    },
    /// Calibrate a fundus image and reconstruct clicked targets.
    Ingest(IngestArgs),
    /// Render a synthetic fundus disc and report where targets land on it.
    Synth(SynthArgs),
    /// Write the JSON schemas.
    Schema(SchemaArgs),
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|e| format!("'{a}': {e}"))?,
            b.parse().map_err(|e| format!("'{b}': {e}"))?,
        ]),
        _ => Err(format!("expected two comma-separated numbers, got '{s}'")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"))).collect()
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Fundus click in raster pixels, `COL,ROW`. Repeatable.
    #[arg(long = "target-px", value_parser = parse_pair, allow_hyphen_values = true)]
    pub target_px: Vec<[f64; 2]>,
    /// Retinal target, `POLAR,AZIMUTH` in degrees. Repeatable.
    #[arg(long = "target-polar", value_parser = parse_pair, allow_hyphen_values = true)]
    pub target_polar: Vec<[f64; 2]>,
    /// Tilt actually applied, `ALPHA,BETA` in degrees.
    #[arg(long = "executed-tilt", value_parser = parse_pair, allow_hyphen_values = true)]
    pub executed_tilt: Option<[f64; 2]>,
    /// Write the plan record here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the accessibility overlay.
    #[arg(long = "export-overlay")]
    pub export_overlay: Option<PathBuf>,
    /// Store the record in this workspace as well.
    #[arg(long)]
    pub workspace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value = "./ws")]
    pub workspace: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ErrorlabCommand {
    /// Sweep one error source and fit lines.
    Run(RunArgs),
    /// Sample all error sources together.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scene file; defaults apply without one.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// z_align, instr_trocar_offset, trocar_roll, trocar_yaw or eye_pose.
    #[arg(long)]
    pub kind: ErrorKind,
    /// Comma-separated magnitudes (deg, or mm for the offset).
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub magnitudes: Option<Vec<f64>>,
    #[arg(long = "target-polar", value_parser = parse_pair, allow_hyphen_values = true)]
    pub target_polar: Vec<[f64; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// JSON file with one distribution per error source.
    #[arg(long)]
    pub distributions: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "target-polar", value_parser = parse_pair, allow_hyphen_values = true)]
    pub target_polar: Vec<[f64; 2]>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long = "view-angle", default_value_t = 60.0)]
    pub view_angle: f64,
    /// Click in raster pixels, `COL,ROW`. Repeatable.
    #[arg(long, value_parser = parse_pair)]
    pub click: Vec<[f64; 2]>,
    /// Apply the visual-axis compensation to clicks.
    #[arg(long)]
    pub compensate: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    #[arg(long, default_value_t = 1024)]
    pub height: u32,
    #[arg(long, default_value_t = 900.0)]
    pub diameter: f64,
    #[arg(long = "view-angle", default_value_t = 60.0)]
    pub view_angle: f64,
    /// Fraction of pixels replaced by speckle noise.
    #[arg(long, default_value_t = 0.0)]
    pub speckle: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "target-polar", value_parser = parse_pair, allow_hyphen_values = true)]
    pub target_polar: Vec<[f64; 2]>,
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    #[arg(long = "out-dir", default_value = "docs/schemas")]
    pub out_dir: PathBuf,
    /// Exit non-zero if the files on disk differ instead of writing them.
    #[arg(long)]
    pub check: bool,
}

/// `RETINA_PLAN_WORKSPACE` wins over the flag when set.
pub fn resolve_workspace(flag: Option<PathBuf>) -> Option<PathBuf> {
    match std::env::var_os(WORKSPACE_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => flag,
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => print_stdout(text),
    }
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn load_scene(path: Option<&Path>) -> Result<(Scene, SceneContext)> {
    match path {
        Some(p) => {
            let (scene, base) = Scene::load(p)?;
            let ctx = scene.context(&base)?;
            Ok((scene, ctx))
        }
        None => {
            let scene = Scene::default();
            let ctx = scene.context(Path::new("."))?;
            Ok((scene, ctx))
        }
    }
}

fn polar_targets(pairs: &[[f64; 2]]) -> Result<Vec<SphericalPoint>> {
    pairs.iter().map(|p| SphericalPoint::new(p[0], p[1])).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Serve(a) => {
            let ws = Workspace::open(resolve_workspace(Some(a.workspace)).expect("flag has a default"))?;
            let addr = std::net::SocketAddr::new(a.host, a.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(ws, addr))?;
            Ok(())
        }
        Command::Errorlab { command } => match command {
            ErrorlabCommand::Run(a) => cmd_errorlab_run(a),
            ErrorlabCommand::Montecarlo(a) => cmd_montecarlo(a),
        },
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Schema(a) => cmd_schema(a),
    }
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    let (scene, ctx) = load_scene(Some(&a.scene))?;
    let mut targets: Vec<TargetInput> = a.target_px.iter().map(|p| TargetInput::Pixel { x_px: p[0], y_px: p[1] }).collect();
    targets.extend(a.target_polar.iter().map(|p| TargetInput::Polar { polar_deg: p[0], azimuth_deg: p[1] }));
    let request = PlanRequest {
        targets,
        executed_tilt_deg: a.executed_tilt,
    };
    let record = workflow::plan(&scene, &ctx, &request)?;
    if let Some(dir) = resolve_workspace(a.workspace) {
        let path = Workspace::open(dir)?.save_plan(&record)?;
        eprintln!("stored {}", path.display());
    }
    if let Some(p) = &a.export_overlay {
        std::fs::write(p, to_json(&workflow::overlay(&scene, &ctx, &request, GridMeta::default())?)?)?;
    }
    let feasible = record.targets.iter().filter(|t| t.feasible).count();
    eprintln!(
        "{feasible}/{} targets feasible; tilt α={:.3}° β={:.3}°, trocar {}, θ_ini={:.3}°",
        record.targets.len(),
        record.applied_tilt_deg[0],
        record.applied_tilt_deg[1],
        record.approach.selected_index,
        record.approach.theta_ini_deg
    );
    write_or_print(a.out.as_deref(), &to_json(&record)?)
}

fn cmd_errorlab_run(a: RunArgs) -> Result<()> {
    let (_, ctx) = load_scene(a.scene.as_deref())?;
    let mut s = ErrorScenario::new(a.kind);
    s.offset_geometry = ctx.offset;
    if let Some(m) = a.magnitudes {
        s.magnitudes = m;
    }
    if !a.target_polar.is_empty() {
        s.targets = polar_targets(&a.target_polar)?;
    }
    let r = errorlab::run_scenario(&s, &ctx.config)?;
    if let Some(p) = &a.csv {
        std::fs::write(p, r.to_csv())?;
    }
    eprintln!(
        "{}: slope θ₂ {:+.4}, θ₄ {:+.4} deg/{}; {} points excluded",
        a.kind.as_str(),
        r.fits.slope_theta2(),
        r.fits.slope_theta4(),
        r.unit,
        r.excluded
    );
    write_or_print(a.out.as_deref(), &to_json(&r)?)
}

fn cmd_montecarlo(a: MonteCarloArgs) -> Result<()> {
    let (_, ctx) = load_scene(a.scene.as_deref())?;
    let text = std::fs::read_to_string(&a.distributions)?;
    let dists: ErrorDistributions = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let targets = if a.target_polar.is_empty() {
        errorlab::default_targets()
    } else {
        polar_targets(&a.target_polar)?
    };
    let r = errorlab::monte_carlo_targets(&ctx.config, &targets, &dists, a.trials, a.seed, &ctx.offset)?;
    write_or_print(a.out.as_deref(), &to_json(&r)?)
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let img = load_gray_image(&a.image)?;
    let scene = Scene::default();
    let eye = scene.eye_model()?;
    let sidecar = FundusSidecar {
        view_angle_deg: a.view_angle,
        manual_center_px: None,
        manual_diameter_px: None,
    };
    let meta = calibrate(Some(&img), &sidecar, &eye)?;
    let comp = if a.compensate {
        Some(AxisCompensation::standard(&eye)?)
    } else {
        None
    };
    let targets = a
        .click
        .iter()
        .map(|c| reconstruct_target(c[0], c[1], &meta, &eye, comp.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    print_stdout(&to_json(&serde_json::json!({"meta": meta, "targets": targets}))?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let center = [a.width as f64 / 2.0, a.height as f64 / 2.0];
    let mut img = render_disc(a.width, a.height, center, a.diameter, &DiscStyle::default());
    if a.speckle > 0.0 {
        add_speckle(&mut img, a.speckle, a.seed);
    }
    img.save(&a.out).map_err(|e| Error::ImageUnreadable(e.to_string()))?;
    let eye = Scene::default().eye_model()?;
    let meta = retplan_core::fundus::FundusImageMeta::new(a.width, a.height, a.view_angle, center, a.diameter, &eye)?;
    let projected = polar_targets(&a.target_polar)?
        .iter()
        .map(|p| project_to_raster(p, &meta, &eye).map(|px| serde_json::json!({"target": p, "raster_px": px})))
        .collect::<Result<Vec<_>>>()?;
    print_stdout(&to_json(&serde_json::json!({"meta": meta, "targets": projected}))?)
}

fn cmd_schema(a: SchemaArgs) -> Result<()> {
    let mut stale = Vec::new();
    if !a.check {
        std::fs::create_dir_all(&a.out_dir)?;
    }
    for (name, schema) in workflow::json_schemas() {
        let path = a.out_dir.join(format!("{name}.schema.json"));
        let text = format!("{}\n", to_json(&schema)?);
        if a.check {
            if std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
                stale.push(path.display().to_string());
            }
        } else {
            std::fs::write(&path, text)?;
        }
    }
    if !stale.is_empty() {
        return Err(Error::InvalidInput(format!("stale schemas: {}", stale.join(", "))));
    }
    Ok(())
}
