//! End-to-end localization: filter stepping, keyframing into the pose graph,
//! prior emission, and the on-disk run driven by a [`RunConfig`].

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Se2;
use crate::georef::{prior_information, OptimizeReport, PoseGraph};
use crate::io::{
    open_odometry, open_portable_scans, read_ground_truth, write_graph_summary, write_trajectory, GraphConfig,
    KittiScanReader, OdomFrame, ResultLogWriter, ResultRow, RunConfig, ScanFormat, TruthRow,
};
use crate::mcl::{project_se3, FilterConfig, MclFilter, OdometryDelta, PosteriorEstimate};
use crate::polar::PolarGridSpec;
use crate::scan::{ScanFrame, SemanticScan};
use crate::semantic_map::{build_tdf, load_map_bundle, ClassSet, ClassTdf, SemanticMap};

/// Floors the eigenvalues of a symmetric matrix and inverts it.
pub fn floored_inverse(cov: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = cov.symmetric_eigen();
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    eig.eigenvectors * Matrix3::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// A converged estimate kept in map pixels until the final scale is known.
#[derive(Debug, Clone, Copy)]
struct PendingPrior {
    node: usize,
    q: [f64; 2],
    theta: f64,
    cov_px: [[f64; 2]; 2],
    heading_var: f64,
}

/// Drives an [`MclFilter`] frame by frame and mirrors the run into a pose
/// graph: a node whenever the robot has moved `keyframe_distance_m`, and a
/// prior on that node whenever the filter reports convergence.
///
/// Estimates made early in a run sit at an earlier scale estimate, so priors
/// are held in pixels and converted with the last scale in [`Localizer::finish`].
pub struct Localizer<'a> {
    filter: MclFilter<'a>,
    graph: PoseGraph,
    gcfg: GraphConfig,
    sigma_p: Matrix3<f64>,
    pending: Se2,
    pending_steps: usize,
    pending_dist: f64,
    frames: usize,
    t0: f64,
    convergence_time: Option<f64>,
    priors: Vec<PendingPrior>,
    last_scale: Option<f64>,
}

impl<'a> Localizer<'a> {
    pub fn new(
        map: &'a SemanticMap,
        tdf: &'a ClassTdf,
        classes: ClassSet,
        grid: PolarGridSpec,
        filter: FilterConfig,
        graph: GraphConfig,
    ) -> Result<Self> {
        let sigma_p = Matrix3::from_fn(|i, j| filter.sigma_p[i][j]);
        Ok(Localizer {
            filter: MclFilter::new(map, tdf, classes, grid, filter)?,
            graph: PoseGraph::new(),
            gcfg: graph,
            sigma_p,
            pending: Se2::IDENTITY,
            pending_steps: 0,
            pending_dist: 0.0,
            frames: 0,
            t0: 0.0,
            convergence_time: None,
            priors: Vec::new(),
            last_scale: None,
        })
    }

    pub fn filter(&self) -> &MclFilter<'a> {
        &self.filter
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Seconds from the first frame to the first converged estimate.
    pub fn convergence_time(&self) -> Option<f64> {
        self.convergence_time
    }

    /// Feeds frame `i`: `odom` is the motion since frame `i - 1` and is
    /// ignored on the first frame, which initializes the filter.
    pub fn process(&mut self, t: f64, odom: &OdometryDelta, scan: &SemanticScan) -> Result<PosteriorEstimate> {
        let est = if self.frames == 0 {
            self.t0 = t;
            let est = self.filter.initialize(scan)?;
            self.graph.add_node_with_odom(Se2::IDENTITY, Matrix3::identity(), t)?;
            if est.converged {
                self.add_prior(&est)?;
            }
            est
        } else {
            let est = self.filter.step(odom, Some(scan))?;
            let d = project_se3(odom)?;
            self.pending = self.pending.compose(&d);
            self.pending_steps += 1;
            self.pending_dist += d.translation_norm();
            if self.pending_dist >= self.gcfg.keyframe_distance_m {
                let cov = self.sigma_p * self.pending_steps as f64;
                let info = floored_inverse(&cov, self.gcfg.information_floor);
                self.graph.add_node_with_odom(self.pending, info, t)?;
                self.pending = Se2::IDENTITY;
                self.pending_steps = 0;
                self.pending_dist = 0.0;
                if est.converged {
                    self.add_prior(&est)?;
                }
            }
            est
        };
        if est.converged && self.convergence_time.is_none() {
            self.convergence_time = Some(t - self.t0);
        }
        self.last_scale = Some(est.scale_mean);
        self.frames += 1;
        Ok(est)
    }

    fn add_prior(&mut self, est: &PosteriorEstimate) -> Result<()> {
        let s = est.scale_mean;
        let c = est.position_cov;
        self.priors.push(PendingPrior {
            node: self.graph.len() - 1,
            q: [est.pose.x * s, est.pose.y * s],
            theta: est.pose.theta,
            cov_px: [[c[0][0] * s * s, c[0][1] * s * s], [c[1][0] * s * s, c[1][1] * s * s]],
            heading_var: est.heading_var,
        });
        Ok(())
    }

    /// Priors recorded so far.
    pub fn n_priors(&self) -> usize {
        self.priors.len()
    }

    /// Adds the priors at the final scale estimate, optimizes the graph and
    /// hands it back.
    pub fn finish(mut self) -> Result<(PoseGraph, OptimizeReport)> {
        let s = self.last_scale.unwrap_or(1.0);
        for p in std::mem::take(&mut self.priors) {
            let c = p.cov_px;
            let cov = [[c[0][0] / (s * s), c[0][1] / (s * s)], [c[1][0] / (s * s), c[1][1] / (s * s)]];
            let info =
                prior_information(cov, p.heading_var, self.gcfg.heading_weight, self.gcfg.information_floor);
            self.graph.add_prior(p.node, Se2::new(p.q[0] / s, p.q[1] / s, p.theta), info)?;
        }
        let report = self.graph.optimize(self.gcfg.max_iters, self.gcfg.tol);
        Ok((self.graph, report))
    }
}

/// JSON summary of a `localize` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeSummary {
    pub converged: bool,
    pub convergence_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_err_after_conv_m: Option<f64>,
    pub scale_est: f64,
    pub n_priors: usize,
    pub n_frames: usize,
    pub n_nodes: usize,
    pub final_cost: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LocalizeOptions {
    /// Replay no faster than `factor ×` the recorded timestamps.
    pub realtime_factor: Option<f64>,
}

/// Loads the distance fields from the configured cache, building (and
/// writing) them when the cache is absent.
pub fn load_or_build_tdf(cfg: &RunConfig, map: &SemanticMap, classes: &ClassSet) -> Result<ClassTdf> {
    if let Some(cache) = &cfg.tdf_cache {
        let path = cfg.resolve(cache);
        if path.exists() {
            let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut tdf = ClassTdf::read_cache(std::io::BufReader::new(f), &path.display().to_string())?;
            tdf.origin_px = map.origin_px;
            if tdf.width() != map.width() || tdf.height() != map.height() || tdf.n_classes() != classes.n_classes() {
                return Err(Error::Config(format!("{} does not match the map", path.display())));
            }
            if tdf.trunc_radius() != cfg.trunc_radius {
                return Err(Error::Config(format!(
                    "{} was built with trunc_radius {}, config asks for {}",
                    path.display(),
                    tdf.trunc_radius(),
                    cfg.trunc_radius
                )));
            }
            return Ok(tdf);
        }
        let tdf = build_tdf(map, classes, cfg.trunc_radius)?;
        write_tdf_cache(&path, &tdf)?;
        return Ok(tdf);
    }
    build_tdf(map, classes, cfg.trunc_radius)
}

pub fn write_tdf_cache(path: &Path, tdf: &ClassTdf) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    tdf.write_cache(&mut w).and_then(|_| std::io::Write::flush(&mut w)).map_err(|e| Error::io(path, e))
}

fn scan_stream(cfg: &RunConfig) -> Result<Box<dyn Iterator<Item = Result<ScanFrame>>>> {
    let path = cfg.resolve(&cfg.scans);
    Ok(match cfg.scan_format {
        ScanFormat::Portable => Box::new(open_portable_scans(&path)?),
        ScanFormat::Semantickitti => Box::new(KittiScanReader::open(&path, cfg.frame_rate_hz)?),
    })
}

fn truth_at(truth: &[TruthRow], t: f64) -> Option<&TruthRow> {
    let i = truth.partition_point(|r| r.t < t - 1e-6);
    truth.get(i).filter(|r| (r.t - t).abs() <= 1e-6)
}

/// Runs `localize` as configured: writes the result log, the optimized
/// trajectory and the graph summary to the configured outputs.
pub fn run_localize(cfg: &RunConfig, opts: &LocalizeOptions) -> Result<LocalizeSummary> {
    cfg.validate()?;
    let classes = cfg.class_set()?;
    let map = load_map_bundle(&cfg.resolve(&cfg.map))?;
    let tdf = load_or_build_tdf(cfg, &map, &classes)?;
    let truth = match &cfg.ground_truth {
        Some(p) => read_ground_truth(&cfg.resolve(p))?,
        None => Vec::new(),
    };
    let mut log = match &cfg.outputs.result_log {
        Some(p) => Some(ResultLogWriter::create(&cfg.resolve(p))?),
        None => None,
    };

    let mut loc = Localizer::new(&map, &tdf, classes.clone(), cfg.grid, cfg.filter.clone(), cfg.graph.clone())?;
    let mut scans = scan_stream(cfg)?;
    let odo_path = cfg.resolve(&cfg.odometry);
    let mut odometry = open_odometry(&odo_path)?;
    let started = Instant::now();
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    let mut last: Option<PosteriorEstimate> = None;
    let mut converged_once = false;
    let mut t_first = None;
    loop {
        let (frame, odo) = match (scans.next(), odometry.next()) {
            (None, None) => break,
            (Some(f), Some(o)) => (f?, o?),
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::format(
                    odo_path.display().to_string(),
                    format!("scan and odometry streams differ in length after {} frames", loc.frames()),
                ))
            }
        };
        let t = frame.timestamp;
        if let Some(rate) = opts.realtime_factor.filter(|r| *r > 0.0) {
            let t0 = *t_first.get_or_insert(t);
            let due = Duration::from_secs_f64(((t - t0) / rate).max(0.0));
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let scan = SemanticScan::from_frame(&frame, &classes);
        let est = loc.process(t, &odom_delta(&odo), &scan)?;
        let gt = truth_at(&truth, t);
        let row = ResultRow::from_estimate(t, &est, gt);
        converged_once |= est.converged;
        if converged_once {
            if let Some(e) = row.err_m {
                err_sum += e;
                err_n += 1;
            }
        }
        if let Some(w) = log.as_mut() {
            w.write(&row)?;
        }
        last = Some(est);
    }
    let last = last.ok_or_else(|| Error::Init("no frames to localize".into()))?;
    let convergence_time = loc.convergence_time();
    let n_frames = loc.frames();
    let (graph, report) = loc.finish()?;
    if let Some(p) = &cfg.outputs.trajectory {
        write_trajectory(&cfg.resolve(p), graph.nodes())?;
    }
    let gs = graph.summary();
    if let Some(p) = &cfg.outputs.summary {
        write_graph_summary(&cfg.resolve(p), &gs)?;
    }
    log::info!("localized {n_frames} frames in {:.1} s", started.elapsed().as_secs_f64());
    Ok(LocalizeSummary {
        converged: convergence_time.is_some(),
        convergence_time_s: convergence_time,
        mean_err_after_conv_m: (err_n > 0).then(|| err_sum / err_n as f64),
        scale_est: last.scale_mean,
        n_priors: gs.n_priors,
        n_frames,
        n_nodes: gs.n_nodes,
        final_cost: report.final_cost(),
    })
}

fn odom_delta(f: &OdomFrame) -> OdometryDelta {
    OdometryDelta::new(f.transform)
}
