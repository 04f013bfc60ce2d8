//! Runs the `semloc` binary and checks exit codes, artifacts and summaries.

use std::path::{Path, PathBuf};
use std::process::Command;

use semloc::cli::sim_files;
use semloc::geometry::{Se2, Se3};
use semloc::io::{
    open_odometry, read_ground_truth, read_result_log, write_ground_truth, write_odometry, write_scan_stream,
    write_trajectory, OdomFrame, ResultLogWriter, ResultRow, RunConfig, TruthRow,
};
use semloc::georef::GraphNode;
use semloc::scan::{RawPoint, ScanFrame};
use semloc::semantic_map::{load_map_bundle, save_map_bundle, sidecar_path, ClassTdf, SemanticMap};
use semloc::sim::{dead_reckon, NoiseSpec, ScenarioSpec, WorldSpec};
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("bad json {e}: {}", self.stdout))
    }
}

fn semloc<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_semloc")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two roads crossing in a terrain field with a few buildings and trees.
fn small_map(scale: Option<f64>) -> SemanticMap {
    let (w, h) = (40, 30);
    let cells = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if (14..17).contains(&y) || (20..23).contains(&x) {
                0
            } else if (x / 6 + y / 5) % 5 == 0 {
                3
            } else if (x + 2 * y) % 11 == 0 {
                2
            } else {
                1
            }
        })
        .collect();
    let mut m = SemanticMap::new(w, h, cells).unwrap();
    m.scale_prior = scale;
    m
}

fn write_map(dir: &Path, scale: Option<f64>) -> PathBuf {
    let path = dir.join("map.pgm");
    save_map_bundle(&small_map(scale), &path).unwrap();
    path
}

#[test]
fn tdf_cache_is_readable_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let map = write_map(dir.path(), Some(2.0));
    let (a, b) = (dir.path().join("a.ctdf"), dir.path().join("b.ctdf"));
    let r = semloc(["--json", "tdf", p(&map), "--trunc", "12", "-o", p(&a)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert_eq!(v["width"], 40);
    assert_eq!(v["height"], 30);
    let roads = small_map(None).cells().iter().filter(|&&c| c == 0).count();
    assert_eq!(v["source_cells"].as_object().unwrap().len(), 4);
    assert_eq!(v["source_cells"]["road"], roads);
    assert_eq!(semloc(["tdf", p(&map), "--trunc", "12", "-o", p(&b)]).code, 0);
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ba, bb);
    let tdf = ClassTdf::read_cache(&ba[..], "a.ctdf").unwrap();
    assert_eq!((tdf.width(), tdf.height(), tdf.n_classes()), (40, 30, 4));
    assert_eq!(tdf.trunc_radius(), 12.0);
}

#[test]
fn tdf_without_sidecar_names_it() {
    let dir = TempDir::new().unwrap();
    let map = write_map(dir.path(), None);
    let side = sidecar_path(&map);
    std::fs::remove_file(&side).unwrap();
    let r = semloc(["tdf", p(&map)]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains(side.file_name().unwrap().to_str().unwrap()), "{}", r.stderr);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(semloc(["tdf"]).code, 3);
    assert_eq!(semloc(["frobnicate"]).code, 3);
    assert_eq!(semloc(["--help"]).code, 0);
    let map = write_map(dir.path(), Some(2.0));
    assert_eq!(semloc(["--threads", "0", "tdf", p(&map)]).code, 3);
    // truncated raster behind a valid sidecar
    std::fs::write(&map, b"P5\n40 30\n255\n").unwrap();
    assert_eq!(semloc(["tdf", p(&map)]).code, 2);
    assert_eq!(semloc(["localize", p(&dir.path().join("none.json"))]).code, 2);
}

fn write_spec(dir: &Path, spec: &ScenarioSpec) -> PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn small_spec(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        world: WorldSpec { seed, size: 128, scale_true: 2.5, ..Default::default() },
        noise: NoiseSpec { label_flip_prob: 0.1, point_dropout_prob: 0.3, odom_noise: [0.02; 3], ..Default::default() },
        length_m: 30.0,
        ..Default::default()
    }
}

#[test]
fn simulate_writes_loadable_artifacts() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), &small_spec(3));
    let out = dir.path().join("run");
    let r = semloc(["--json", "simulate", p(&spec), p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    let n = v["n_frames"].as_u64().unwrap() as usize;
    assert!(n > 10);
    let map = load_map_bundle(&out.join(sim_files::MAP)).unwrap();
    assert_eq!(map.width(), 128);
    let truth = read_ground_truth(&out.join(sim_files::GROUND_TRUTH)).unwrap();
    assert_eq!(truth.len(), n);
    assert!(truth.iter().all(|g| g.scale == 2.5));
    let odo: Vec<_> = open_odometry(&out.join(sim_files::ODOMETRY)).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(odo.len(), n);
    let scans: Vec<_> = semloc::io::open_portable_scans(&out.join(sim_files::SCANS))
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(scans.len(), n);
    semloc::io::load_config(&out.join(sim_files::CONFIG)).unwrap();
}

#[test]
fn simulate_seed_changes_the_map() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), &small_spec(3));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(semloc(["simulate", p(&spec), p(&a)]).code, 0);
    assert_eq!(semloc(["--seed", "4", "simulate", p(&spec), p(&b)]).code, 0);
    let ma = load_map_bundle(&a.join(sim_files::MAP)).unwrap();
    let mb = load_map_bundle(&b.join(sim_files::MAP)).unwrap();
    assert_ne!(ma.cells(), mb.cells());
}

#[test]
fn simulate_rejects_invalid_spec() {
    let dir = TempDir::new().unwrap();
    let mut spec = small_spec(1);
    spec.world.size = 10;
    let path = write_spec(dir.path(), &spec);
    assert_eq!(semloc(["simulate", p(&path), p(&dir.path().join("x"))]).code, 3);
    std::fs::write(&path, r#"{"world": {"sise": 128}}"#).unwrap();
    assert_eq!(semloc(["simulate", p(&path), p(&dir.path().join("x"))]).code, 3);
}

#[test]
fn noiseless_odometry_reproduces_ground_truth() {
    let dir = TempDir::new().unwrap();
    let mut spec = small_spec(5);
    spec.noise = NoiseSpec::default();
    let path = write_spec(dir.path(), &spec);
    let out = dir.path().join("run");
    assert_eq!(semloc(["simulate", p(&path), p(&out)]).code, 0);
    let truth = read_ground_truth(&out.join(sim_files::GROUND_TRUTH)).unwrap();
    let odo: Vec<OdomFrame> =
        open_odometry(&out.join(sim_files::ODOMETRY)).unwrap().collect::<Result<_, _>>().unwrap();
    let dr = dead_reckon(truth[0].pose, &odo[1..]).unwrap();
    assert_eq!(dr.len(), truth.len());
    for (d, g) in dr.iter().zip(&truth) {
        assert!((d.x - g.pose.x).abs() < 1e-6 && (d.y - g.pose.y).abs() < 1e-6, "{d:?} vs {:?}", g.pose);
        assert!(semloc::geometry::wrap_angle(d.theta - g.pose.theta).abs() < 1e-6);
    }
}

fn simulated_run(dir: &Path, seed: u64) -> PathBuf {
    let spec = write_spec(dir, &small_spec(seed));
    let out = dir.join("run");
    assert_eq!(semloc(["simulate", p(&spec), p(&out)]).code, 0);
    out.join(sim_files::CONFIG)
}

#[test]
fn localize_default_config_converges() {
    let dir = TempDir::new().unwrap();
    let cfg = simulated_run(dir.path(), 11);
    let r = semloc(["--json", "localize", p(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert_eq!(v["converged"], true, "{v}");
    for key in ["convergence_time_s", "mean_err_after_conv_m", "scale_est", "n_priors"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let run = cfg.parent().unwrap();
    let rows = read_result_log(&run.join(sim_files::RESULT_LOG)).unwrap();
    assert!(rows.iter().all(|r| r.err_m.is_some()));
    assert!(run.join(sim_files::TRAJECTORY).exists());
    assert!(run.join(sim_files::GRAPH_SUMMARY).exists());
    // the cache was built on the way
    assert!(run.join(sim_files::TDF).exists());
}

#[test]
fn fixed_scale_is_reported_exactly() {
    let dir = TempDir::new().unwrap();
    let cfg = simulated_run(dir.path(), 12);
    let r = semloc(["--json", "--fixed-scale", "2.37", "localize", p(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["scale_est"].as_f64(), Some(2.37));
    let rows = read_result_log(&cfg.parent().unwrap().join(sim_files::RESULT_LOG)).unwrap();
    assert!(rows.iter().all(|r| r.scale == 2.37));
}

#[test]
fn localize_same_seed_same_log() {
    let dir = TempDir::new().unwrap();
    let cfg = simulated_run(dir.path(), 13);
    let log = cfg.parent().unwrap().join(sim_files::RESULT_LOG);
    assert_eq!(semloc(["--seed", "9", "localize", p(&cfg)]).code, 0);
    let a = std::fs::read(&log).unwrap();
    assert_eq!(semloc(["--seed", "9", "localize", p(&cfg)]).code, 0);
    assert_eq!(a, std::fs::read(&log).unwrap());
}

#[test]
fn localize_without_roads_is_an_init_error() {
    let dir = TempDir::new().unwrap();
    let mut map = SemanticMap::new(32, 32, vec![1; 32 * 32]).unwrap();
    map.scale_prior = Some(2.0);
    save_map_bundle(&map, &dir.path().join("m.pgm")).unwrap();
    let scans: Vec<ScanFrame> = (0..3)
        .map(|i| ScanFrame {
            timestamp: i as f64 * 0.1,
            points: vec![RawPoint { x: 3.0, y: 0.0, z: 0.0, label: 1 }],
        })
        .collect();
    write_scan_stream(&dir.path().join("s.sscn"), &scans).unwrap();
    let odo: Vec<OdomFrame> =
        scans.iter().map(|s| OdomFrame { timestamp: s.timestamp, transform: Se3::identity() }).collect();
    write_odometry(&dir.path().join("o.txt"), &odo).unwrap();
    let cfg = RunConfig::new("m.pgm", "s.sscn", "o.txt");
    let path = dir.path().join("run.json");
    semloc::io::save_config(&path, &cfg).unwrap();
    let r = semloc(["localize", p(&path)]);
    assert_eq!(r.code, 4, "{}", r.stderr);
}

fn row(t: f64, x: f64, converged: bool) -> ResultRow {
    ResultRow { t, x, y: 0.0, theta: 0.0, scale: 2.0, cov: [0.0; 3], converged, err_m: None }
}

fn write_eval_inputs(dir: &Path, rows: &[ResultRow]) -> (PathBuf, PathBuf) {
    let (log, gt) = (dir.join("result.csv"), dir.join("gt.csv"));
    let mut w = ResultLogWriter::create(&log).unwrap();
    for r in rows {
        w.write(r).unwrap();
    }
    let truth: Vec<TruthRow> =
        rows.iter().map(|r| TruthRow { t: r.t, pose: Se2::new(0.0, 0.0, 0.0), scale: 2.0 }).collect();
    write_ground_truth(&gt, &truth).unwrap();
    (log, gt)
}

fn evaluate_rows(rows: &[ResultRow]) -> Value {
    let dir = TempDir::new().unwrap();
    let (log, gt) = write_eval_inputs(dir.path(), rows);
    let r = semloc(["--json", "evaluate", p(&log), p(&gt)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    r.json()
}

#[test]
fn evaluate_constant_errors() {
    let steady = |e: f64| -> Vec<ResultRow> { (0..300).map(|i| row(i as f64 * 0.1, e, i >= 20)).collect() };
    let v = evaluate_rows(&steady(3.0));
    assert_eq!(v["correct"], true);
    assert!((v["mean_err_window_m"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((v["convergence_time_s"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["scale_ratio"].as_f64(), Some(1.0));
    let v = evaluate_rows(&steady(12.0));
    assert_eq!(v["converged"], true);
    assert_eq!(v["correct"], false);
}

#[test]
fn evaluate_hand_built_log() {
    let v = evaluate_rows(&[row(0.0, 100.0, false), row(1.0, 1.0, true), row(2.0, 2.5, true), row(3.0, 6.0, true)]);
    // (1 + 2.5 + 6) / 3
    assert!((v["mean_err_after_conv_m"].as_f64().unwrap() - 9.5 / 3.0).abs() < 1e-12);
    assert!((v["mean_err_window_px"].as_f64().unwrap() - 2.0 * 9.5 / 3.0).abs() < 1e-12);
    assert_eq!(v["n_matched"], 4);
}

#[test]
fn evaluate_without_convergence_exits_zero() {
    let v = evaluate_rows(&[row(0.0, 1.0, false), row(1.0, 1.0, false)]);
    assert_eq!(v["converged"], false);
    assert_eq!(v["correct"], false);
    assert!(v["convergence_time_s"].is_null());
}

fn nodes(pts: &[(f64, f64)]) -> Vec<GraphNode> {
    pts.iter()
        .enumerate()
        .map(|(i, &(x, y))| GraphNode { id: i, timestamp: i as f64, pose: Se2::new(x, y, 0.0) })
        .collect()
}

#[test]
fn render_outputs() {
    let dir = TempDir::new().unwrap();
    let map = write_map(dir.path(), Some(2.0));
    let (empty, inside, outside) =
        (dir.path().join("empty.csv"), dir.path().join("in.csv"), dir.path().join("out.csv"));
    write_trajectory(&empty, &[]).unwrap();
    write_trajectory(&inside, &nodes(&[(1.0, 1.0), (10.0, 5.0), (15.0, 12.0)])).unwrap();
    write_trajectory(&outside, &nodes(&[(1.0, 1.0), (100.0, 1.0), (-50.0, -50.0)])).unwrap();

    let png = dir.path().join("empty.png");
    let r = semloc(["--json", "render", p(&map), p(&empty), p(&png)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["clipped"], 0);
    let img = image::open(&png).unwrap().to_rgb8();
    let pal = semloc::render::palette();
    let m = small_map(None);
    assert!(img.pixels().zip(m.cells()).all(|(px, &c)| px.0 == pal[c as usize]));

    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    assert_eq!(semloc(["render", p(&map), p(&inside), p(&a)]).code, 0);
    assert_eq!(semloc(["render", p(&map), p(&inside), p(&b)]).code, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let drawn = image::open(&a).unwrap().to_rgb8();
    assert!(drawn.pixels().any(|px| px.0 == semloc::render::TRAJECTORY_COLOR));

    let r = semloc(["--json", "render", p(&map), p(&outside), p(&dir.path().join("c.png"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["clipped"], 2);

    assert_eq!(semloc(["render", p(&map), p(&inside), p(&dir.path().join("no/such/dir.png"))]).code, 2);
}

#[test]
fn render_needs_a_scale_for_a_trajectory() {
    let dir = TempDir::new().unwrap();
    let map = write_map(dir.path(), None);
    let traj = dir.path().join("t.csv");
    write_trajectory(&traj, &nodes(&[(1.0, 1.0), (2.0, 2.0)])).unwrap();
    let out = dir.path().join("x.png");
    let r = semloc(["render", p(&map), p(&traj), p(&out)]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("map.json"), "{}", r.stderr);
    assert_eq!(semloc(["--fixed-scale", "2", "render", p(&map), p(&traj), p(&out)]).code, 0);
    assert_eq!(semloc(["render", p(&map), p(&traj), p(&out), "--scale", "2"]).code, 0);
}

#[test]
fn text_output_is_key_value_lines() {
    let dir = TempDir::new().unwrap();
    let map = write_map(dir.path(), Some(2.0));
    let r = semloc(["tdf", p(&map), "-o", p(&dir.path().join("t.ctdf"))]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.lines().any(|l| l.starts_with("width: 40")), "{}", r.stdout);
}
