//! The `semloc` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::io::{
    load_config, read_ground_truth, read_result_log, read_trajectory, save_config, write_ground_truth, write_odometry,
    write_scan_stream, OutputPaths, RunConfig, TruthRow,
};
use crate::pipeline::{run_localize, write_tdf_cache, LocalizeOptions};
use crate::render::{render_overlay, write_png};
use crate::semantic_map::{build_tdf, load_map_bundle, save_map_bundle, sidecar_path, ClassSet, CANONICAL_CLASSES};
use crate::sim::{simulate, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "semloc", version, about = "Semantic Monte-Carlo localization against top-down maps")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the filter seed (localize) or the world seed (simulate).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for particle weighting.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Pin the map scale (px/m) instead of estimating it.
    #[arg(long = "fixed-scale", global = true, value_name = "S")]
    pub fixed_scale: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the class-wise distance-field cache for a map.
    Tdf {
        /// Map raster; defaults to the map named in --config.
        map: Option<PathBuf>,
        #[arg(long)]
        trunc: Option<f32>,
        /// Output path; defaults to the raster path with a .ctdf extension.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the filter over a scan and odometry stream.
    Localize {
        /// Run configuration; same as --config.
        config: Option<PathBuf>,
        #[arg(long)]
        realtime_factor: Option<f64>,
    },
    /// Generate a synthetic world and sensor streams.
    Simulate { spec: PathBuf, out_dir: PathBuf },
    /// Score a result log against ground truth.
    Evaluate {
        result_log: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        window_s: f64,
        #[arg(long, default_value_t = 10.0)]
        threshold_m: f64,
    },
    /// Draw a trajectory over the class map.
    Render {
        map: PathBuf,
        trajectory: PathBuf,
        out: PathBuf,
        /// Map scale used to place the trajectory; falls back to --fixed-scale
        /// and then to the map sidecar.
        #[arg(long)]
        scale: Option<f64>,
    },
}

/// Result of a command: the JSON summary and its plain-text rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
}

impl Outcome {
    fn new(summary: Value) -> Self {
        Outcome { summary }
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        if let Value::Object(m) = &self.summary {
            for (k, v) in m {
                let v = match v {
                    Value::String(x) => x.clone(),
                    other => other.to_string(),
                };
                s.push_str(&format!("{k}: {v}\n"));
            }
        }
        s
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Init(format!("thread pool: {e}")))
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    pool(cli.threads)?.install(|| match &cli.command {
        Command::Tdf { map, trunc, out } => cmd_tdf(cli, map.as_deref(), *trunc, out.as_deref()),
        Command::Localize { config, realtime_factor } => {
            let path = config
                .as_ref()
                .or(cli.config.as_ref())
                .ok_or_else(|| Error::Config("localize needs a config (--config PATH)".into()))?;
            cmd_localize(cli, path, *realtime_factor)
        }
        Command::Simulate { spec, out_dir } => cmd_simulate(cli, spec, out_dir),
        Command::Evaluate { result_log, ground_truth, window_s, threshold_m } => {
            let opts = EvalOptions { window_s: *window_s, threshold_m: *threshold_m, ..EvalOptions::default() };
            cmd_evaluate(result_log, ground_truth, &opts)
        }
        Command::Render { map, trajectory, out, scale } => cmd_render(map, trajectory, out, scale.or(cli.fixed_scale)),
    })
}

fn cmd_tdf(cli: &Cli, map: Option<&Path>, trunc: Option<f32>, out: Option<&Path>) -> Result<Outcome> {
    let cfg = cli.config.as_deref().map(load_config).transpose()?;
    let map_path = match (map, &cfg) {
        (Some(m), _) => m.to_path_buf(),
        (None, Some(c)) => c.resolve(&c.map),
        (None, None) => return Err(Error::Config("tdf needs a map path or --config".into())),
    };
    let trunc = trunc.or(cfg.as_ref().map(|c| c.trunc_radius)).unwrap_or(crate::semantic_map::DEFAULT_TRUNC_RADIUS);
    let classes = match &cfg {
        Some(c) => c.class_set()?,
        None => ClassSet::portable(),
    };
    let out = match (out, &cfg) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(c)) if c.tdf_cache.is_some() => c.resolve(c.tdf_cache.as_ref().unwrap()),
        _ => map_path.with_extension("ctdf"),
    };
    let map = load_map_bundle(&map_path)?;
    let started = Instant::now();
    let tdf = build_tdf(&map, &classes, trunc)?;
    let build_time = started.elapsed().as_secs_f64();
    write_tdf_cache(&out, &tdf)?;
    let counts = map.class_counts();
    let sources: serde_json::Map<String, Value> =
        CANONICAL_CLASSES.iter().zip(counts).map(|(n, c)| (n.to_string(), json!(c))).collect();
    Ok(Outcome::new(json!({
        "out": out.display().to_string(),
        "width": map.width(),
        "height": map.height(),
        "trunc_radius": trunc,
        "build_time_s": build_time,
        "source_cells": sources,
    })))
}

fn cmd_localize(cli: &Cli, path: &Path, realtime_factor: Option<f64>) -> Result<Outcome> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.filter.rng_seed = seed;
    }
    if let Some(s) = cli.fixed_scale {
        cfg.filter.fixed_scale = Some(s);
    }
    if let Some(r) = realtime_factor {
        if !(r > 0.0) {
            return Err(Error::Config(format!("--realtime-factor must be positive, got {r}")));
        }
    }
    let summary = run_localize(&cfg, &LocalizeOptions { realtime_factor })?;
    Ok(Outcome::new(serde_json::to_value(summary).expect("summary serializes")))
}

/// File names written by `simulate` inside the output directory.
pub mod sim_files {
    pub const MAP: &str = "map.pgm";
    pub const TDF: &str = "map.ctdf";
    pub const SCANS: &str = "scans.sscn";
    pub const ODOMETRY: &str = "odometry.txt";
    pub const GROUND_TRUTH: &str = "ground_truth.csv";
    pub const CONFIG: &str = "run.json";
    pub const RESULT_LOG: &str = "result.csv";
    pub const TRAJECTORY: &str = "trajectory.csv";
    pub const GRAPH_SUMMARY: &str = "graph.json";
}

/// Writes a simulated scenario as a self-contained run directory and
/// returns the run config pointing into it.
pub fn write_scenario(spec: &ScenarioSpec, out_dir: &Path) -> Result<(RunConfig, crate::sim::Scenario)> {
    use sim_files::*;
    let sc = simulate(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_map_bundle(&sc.world.map, &out_dir.join(MAP))?;
    write_scan_stream(&out_dir.join(SCANS), &sc.scans)?;
    write_odometry(&out_dir.join(ODOMETRY), &sc.odometry)?;
    let truth: Vec<TruthRow> = sc
        .timestamps
        .iter()
        .zip(&sc.ground_truth)
        .map(|(&t, &pose)| TruthRow { t, pose, scale: spec.world.scale_true })
        .collect();
    write_ground_truth(&out_dir.join(GROUND_TRUTH), &truth)?;
    let mut cfg = RunConfig::new(MAP, SCANS, ODOMETRY);
    cfg.ground_truth = Some(GROUND_TRUTH.into());
    cfg.tdf_cache = Some(TDF.into());
    cfg.grid = spec.grid;
    cfg.frame_rate_hz = spec.frame_rate_hz;
    cfg.outputs = OutputPaths {
        result_log: Some(RESULT_LOG.into()),
        trajectory: Some(TRAJECTORY.into()),
        summary: Some(GRAPH_SUMMARY.into()),
    };
    save_config(&out_dir.join(CONFIG), &cfg)?;
    cfg.base_dir = out_dir.to_path_buf();
    Ok((cfg, sc))
}

fn cmd_simulate(cli: &Cli, spec_path: &Path, out_dir: &Path) -> Result<Outcome> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut spec: ScenarioSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = cli.seed {
        spec.world.seed = seed;
    }
    let (_, sc) = write_scenario(&spec, out_dir)?;
    if sc.truncated {
        log::warn!("trajectory truncated: the road network is shorter than {} m", spec.length_m);
    }
    Ok(Outcome::new(json!({
        "out_dir": out_dir.display().to_string(),
        "config": out_dir.join(sim_files::CONFIG).display().to_string(),
        "n_frames": sc.scans.len(),
        "truncated": sc.truncated,
        "scale_true": spec.world.scale_true,
        "seed": spec.world.seed,
    })))
}

fn cmd_evaluate(result_log: &Path, ground_truth: &Path, opts: &EvalOptions) -> Result<Outcome> {
    let rows = read_result_log(result_log)?;
    let truth = read_ground_truth(ground_truth)?;
    let report = evaluate(&rows, &truth, opts)?;
    Ok(Outcome::new(serde_json::to_value(report).expect("report serializes")))
}

fn cmd_render(map_path: &Path, trajectory: &Path, out: &Path, scale: Option<f64>) -> Result<Outcome> {
    let map = load_map_bundle(map_path)?;
    let nodes = read_trajectory(trajectory)?;
    let scale = match scale.or(map.scale_prior) {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("scale must be positive, got {s}"))),
        None if nodes.is_empty() => 1.0,
        None => {
            return Err(Error::Config(format!(
                "no scale for the trajectory: pass --scale or set scale_px_per_m in {}",
                sidecar_path(map_path).display()
            )))
        }
    };
    let path: Vec<[f64; 2]> = nodes.iter().map(|n| map.meters_to_px([n.pose.x, n.pose.y], scale)).collect();
    let (img, summary) = render_overlay(&map, &path);
    write_png(out, &img)?;
    if summary.clipped > 0 {
        log::warn!("{} trajectory vertices lie outside the map", summary.clipped);
    }
    let mut v = serde_json::to_value(summary).expect("summary serializes");
    v["out"] = json!(out.display().to_string());
    Ok(Outcome::new(v))
}

/// Parses `args`, runs the command, prints the outcome and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.summary);
            } else {
                print!("{}", out.text());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
