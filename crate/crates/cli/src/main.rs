use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use discrepancy_core::export::{field_json, to_rounded_json};
use discrepancy_core::field::{sim_grid, vlp16_grid};
use discrepancy_core::scene::vlp16_sensor;
use discrepancy_core::session::{CloudRef, CloudSources};
use discrepancy_core::{
    build_default_scene, default_sensor_sim, icp_register, load_session, raycast_cloud, save_cloud, save_session,
    CloudFormat, IcpParams, Mitigation, RegistrationResult, RigidTransform, Scene, SensorModel, Session,
    SphericalGridSpec,
};

/// Discrepancy-vector fields between two registered lidar scans.
#[derive(Parser, Debug)]
#[command(name = "discrepancy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ray-cast a synthetic scan and write it as a point cloud file.
    Simulate(SimulateArgs),
    /// Register two scans and start a session with its baseline field.
    Register(RegisterArgs),
    /// Export a field, optionally switching the session to another grid.
    Field(FieldArgs),
    /// Add mitigations to a session, one iteration each.
    Mitigate(MitigateArgs),
    /// Print per-iteration field statistics.
    Stats(StatsArgs),
    /// Serve the analyst API for a session.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scene JSON file, or `default`.
    #[arg(long, default_value = "default")]
    scene: String,
    /// Sensor pose `x,y,z,roll,pitch,yaw` (meters, radians).
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    /// `sim` (80 channels), `vlp16`, or a sensor JSON file.
    #[arg(long, default_value = "sim")]
    sensor: String,
    /// Output file; `.ply` or `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    cloud1: PathBuf,
    #[arg(long)]
    cloud2: PathBuf,
    /// Capture poses of both scans, each `x,y,z,roll,pitch,yaw`. Without
    /// this flag (or `--icp`) the poses recorded in the files are used.
    #[arg(long, num_args = 2, value_names = ["POSE1", "POSE2"], allow_hyphen_values = true, conflicts_with = "icp")]
    truth: Option<Vec<String>>,
    /// Refine with point-to-point ICP, starting from the recorded poses.
    #[arg(long)]
    icp: bool,
    #[arg(long, default_value_t = IcpParams::default().max_iter)]
    icp_max_iter: usize,
    #[arg(long, default_value_t = IcpParams::default().max_corr_dist)]
    icp_max_corr: f64,
    /// `az_bins,el_bins,el_min_deg,el_max_deg`, or `sim` / `vlp16`.
    #[arg(long, default_value = "sim", allow_hyphen_values = true)]
    grid: String,
    /// Points each cloud needs in a voxel for it to count.
    #[arg(long, default_value_t = 1)]
    min_points: usize,
    /// Session file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[arg(long)]
    session: PathBuf,
    /// New grid `az_bins,el_bins,el_min_deg,el_max_deg` (or `sim` /
    /// `vlp16`); every iteration is recomputed and the session saved.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Iteration to export; defaults to the latest.
    #[arg(long)]
    iteration: Option<usize>,
    #[arg(long)]
    export: PathBuf,
}

#[derive(Args, Debug)]
struct MitigateArgs {
    #[arg(long)]
    session: PathBuf,
    /// e.g. `ego:radius=3`, `fov:el_min=-22,el_max=10`, `shadow:margin=0.5`.
    /// Repeat to run several iterations in order.
    #[arg(long = "add", required = true, allow_hyphen_values = true)]
    add: Vec<String>,
    #[arg(long, default_value = "")]
    note: String,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    session: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Register(a) => register(a),
        Command::Field(a) => field(a),
        Command::Mitigate(a) => mitigate(a),
        Command::Stats(a) => stats(a),
        Command::Serve(a) => serve(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn parse_pose(text: &str) -> Result<RigidTransform> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("pose {text:?} is not six numbers"))?;
    let Ok(arr) = <[f64; 6]>::try_from(v) else {
        bail!("pose {text:?} must be x,y,z,roll,pitch,yaw");
    };
    let t = RigidTransform::from_array(arr);
    t.validate()?;
    Ok(t)
}

fn parse_grid(text: &str) -> Result<SphericalGridSpec> {
    match text {
        "sim" => return Ok(sim_grid()),
        "vlp16" => return Ok(vlp16_grid()),
        _ => {}
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("grid {text:?} must be az_bins,el_bins,el_min_deg,el_max_deg");
    }
    let az: usize = parts[0].parse().context("azimuth bins")?;
    let el: usize = parts[1].parse().context("elevation bins")?;
    let lo: f64 = parts[2].parse().context("elevation min")?;
    let hi: f64 = parts[3].parse().context("elevation max")?;
    Ok(SphericalGridSpec::from_degrees(az, el, lo, hi)?)
}

fn format_of(path: &Path) -> Result<CloudFormat> {
    CloudFormat::from_path(path).with_context(|| format!("{}: expected a .ply or .csv file", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let scene = if a.scene == "default" {
        build_default_scene()
    } else {
        Scene::from_json(&fs::read_to_string(&a.scene).with_context(|| format!("reading {}", a.scene))?)?
    };
    let sensor = match a.sensor.as_str() {
        "sim" => default_sensor_sim(),
        "vlp16" => vlp16_sensor(),
        file => SensorModel::from_json(&fs::read_to_string(file).with_context(|| format!("reading {file}"))?)?,
    };
    let pose = parse_pose(&a.pose)?;
    let cloud = raycast_cloud(&scene, &pose, &sensor)?;
    save_cloud(&cloud, &a.out, format_of(&a.out)?)?;
    println!("{} points -> {}", cloud.len(), a.out.display());
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let path1 = fs::canonicalize(&a.cloud1).with_context(|| format!("{}", a.cloud1.display()))?;
    let path2 = fs::canonicalize(&a.cloud2).with_context(|| format!("{}", a.cloud2.display()))?;
    let (ref1, cloud1) = CloudRef::open(&path1, format_of(&path1)?)?;
    let (ref2, cloud2) = CloudRef::open(&path2, format_of(&path2)?)?;
    let (pose1, pose2) = match &a.truth {
        Some(poses) => (parse_pose(&poses[0])?, parse_pose(&poses[1])?),
        None => (cloud1.sensor_pose, cloud2.sensor_pose),
    };
    let guess = pose1.inverse().compose(&pose2);
    let registration = if a.icp {
        let params = IcpParams { max_iter: a.icp_max_iter, max_corr_dist: a.icp_max_corr, ..IcpParams::default() };
        icp_register(&cloud1, &cloud2, &guess, &params)?
    } else {
        RegistrationResult::truth(guess)
    };
    let mut session = Session::new(cloud1, cloud2, registration, parse_grid(&a.grid)?, a.min_points)?
        .with_sources(CloudSources { cloud1: ref1, cloud2: ref2 });
    session.run_iteration(None, "baseline")?;
    save_session(&session, &a.out)?;
    let r = &session.registration;
    println!(
        "registered ({:?}, {} iterations, residual {:.6} m); baseline max {:.6} m -> {}",
        r.method,
        r.iterations,
        r.final_residual,
        session.iterations[0].field.stats.max_magnitude,
        a.out.display()
    );
    Ok(())
}

fn field(a: FieldArgs) -> Result<()> {
    let mut session = load_session(&a.session)?;
    if let Some(g) = &a.grid {
        session.set_grid(parse_grid(g)?)?;
        save_session(&session, &a.session)?;
    }
    if session.iterations.is_empty() {
        session.run_iteration(None, "baseline")?;
        save_session(&session, &a.session)?;
    }
    let index = a.iteration.unwrap_or(session.iterations.len() - 1);
    let rec = session.iteration(index)?;
    let mut text = field_json(&rec.field, Some(index), &rec.mitigations)?;
    text.push('\n');
    fs::write(&a.export, text).with_context(|| format!("writing {}", a.export.display()))?;
    println!("{} voxels (iteration {index}) -> {}", rec.field.voxels.len(), a.export.display());
    Ok(())
}

fn mitigate(a: MitigateArgs) -> Result<()> {
    let mut session = load_session(&a.session)?;
    let mitigations: Vec<Mitigation> = a
        .add
        .iter()
        .map(|t| Mitigation::parse_cli(t).with_context(|| format!("--add {t:?}")))
        .collect::<Result<_>>()?;
    for m in mitigations {
        session.run_iteration(Some(m), a.note.clone())?;
        let index = session.iterations.len() - 1;
        let rec = &session.iterations[index];
        let report = rec.reports.last().expect("one report per mitigation");
        println!(
            "iteration {index}: {:?} removed {} / {} points, max {:.6} m",
            report.kind, report.removed_from_cloud1, report.removed_from_cloud2, rec.field.stats.max_magnitude
        );
    }
    save_session(&session, &a.session)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let session = load_session(&a.session)?;
    if a.json {
        let rows: Vec<_> = session.iterations.iter().map(|r| (&r.mitigations, r.field.stats)).collect();
        println!("{}", to_rounded_json(&rows)?);
        return Ok(());
    }
    println!("{:>4}  {:>12}  {:>12}  {:>12}  {:>7}  mitigations", "iter", "max", "mean", "median", "voxels");
    for (i, r) in session.iterations.iter().enumerate() {
        let s = r.field.stats;
        let kinds: Vec<String> = r.mitigations.iter().map(|m| format!("{:?}", m.kind())).collect();
        println!(
            "{i:>4}  {:>12.6}  {:>12.6}  {:>12.6}  {:>7}  {}",
            s.max_magnitude,
            s.mean_magnitude,
            s.median_magnitude,
            s.populated_voxels,
            if kinds.is_empty() { "-".to_string() } else { kinds.join(",") }
        );
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let session = load_session(&a.session)?;
    let state = discrepancy_server::AppState::new(session, Some(a.session.clone()));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(discrepancy_server::serve(state, SocketAddr::new(a.host, a.port)))?;
    Ok(())
}
