//! Procedural worlds and a sensor simulator with known ground truth.

mod world;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Se2, Se3};
use crate::io::OdomFrame;
use crate::polar::PolarGridSpec;
use crate::scan::{RawPoint, ScanFrame};
use crate::semantic_map::{raw, SemanticMap, ROAD, UNLABELLED};

pub use world::{generate_world, RoadGraph, RoadStyle, World, WorldSpec, ROAD_HALF_WIDTH};

/// Radius of the arcs joining road segments, px.
const TURN_RADIUS_PX: f64 = 4.0;

/// Spacing of consecutive trajectory poses, meters.
pub const POSE_SPACING_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub label_flip_prob: f64,
    pub point_dropout_prob: f64,
    /// Per-meter standard deviation of the odometry error on `(x, y, theta)`.
    pub odom_noise: [f64; 3],
    pub range_jitter_std: f64,
    /// Probability that a road point is reported with the raw vehicle label.
    pub vehicle_relabel_prob: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            label_flip_prob: 0.0,
            point_dropout_prob: 0.0,
            odom_noise: [0.0; 3],
            range_jitter_std: 0.0,
            vehicle_relabel_prob: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("label_flip_prob", self.label_flip_prob),
            ("point_dropout_prob", self.point_dropout_prob),
            ("vehicle_relabel_prob", self.vehicle_relabel_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.odom_noise.iter().any(|v| !(*v >= 0.0)) || !(self.range_jitter_std >= 0.0) {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Ground-truth poses in meters, map frame.
    pub poses: Vec<Se2>,
    /// Set when the walk hit a dead end before reaching the requested length.
    pub truncated: bool,
}

/// Walks the road graph from a random junction, never turning back and
/// avoiding dead ends where possible, and
/// returns poses every [`POSE_SPACING_M`] meters along the smoothed
/// centerline. Headings follow the path tangent.
pub fn simulate_trajectory(world: &World, length_m: f64, seed: u64) -> Result<Trajectory> {
    let roads = &world.roads;
    let inc = roads.incidence();
    let s = world.spec.scale_true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<usize> = (0..roads.nodes.len()).filter(|&n| inc[n].len() >= 2).collect();
    if starts.is_empty() {
        starts = (0..roads.nodes.len()).filter(|&n| !inc[n].is_empty()).collect();
    }
    let &start = starts
        .choose(&mut rng)
        .ok_or_else(|| Error::Config("road graph has no edges".into()))?;

    let target_px = length_m * s;
    // margin for the smoothing and the turn in the first edge
    let mut path: Vec<[f64; 2]> = vec![roads.nodes[start]];
    let mut node = start;
    let mut came_from: Option<usize> = None;
    let mut length = 0.0;
    let mut truncated = false;
    while length < target_px + 8.0 {
        let mut options: Vec<usize> = inc[node].iter().copied().filter(|&e| Some(e) != came_from).collect();
        let far = |e: usize| if roads.edges[e].0 == node { roads.edges[e].1 } else { roads.edges[e].0 };
        // stay off dead ends while there is a through road
        if options.iter().any(|&e| inc[far(e)].len() >= 2) {
            options.retain(|&e| inc[far(e)].len() >= 2);
        }
        let Some(&e) = options.choose(&mut rng) else {
            truncated = true;
            break;
        };
        let (a, b, line) = &roads.edges[e];
        let pts: Vec<[f64; 2]> = if *a == node { line.clone() } else { line.iter().rev().copied().collect() };
        for p in &pts[1..] {
            let last = *path.last().unwrap();
            length += (p[0] - last[0]).hypot(p[1] - last[1]);
            path.push(*p);
        }
        node = if *a == node { *b } else { *a };
        came_from = Some(e);
    }

    let smooth = fillet(&path, TURN_RADIUS_PX);
    let spacing = POSE_SPACING_M * s;
    let samples = resample_polyline(&smooth, spacing);
    let mut poses = Vec::with_capacity(samples.len());
    let wanted = (length_m / POSE_SPACING_M).floor() as usize + 1;
    for (i, p) in samples.iter().enumerate().take(wanted) {
        let (prev, next) = (samples[i.saturating_sub(1)], samples[(i + 1).min(samples.len() - 1)]);
        let theta = (next[1] - prev[1]).atan2(next[0] - prev[0]);
        let m = world.map.px_to_meters(*p, s);
        poses.push(Se2::new(m[0], m[1], theta));
    }
    if poses.len() < wanted {
        truncated = true;
    }
    if truncated {
        log::warn!("trajectory truncated at {} of {} poses", poses.len(), wanted);
    }
    Ok(Trajectory { poses, truncated })
}

/// Replaces every interior corner by a circular arc of radius up to
/// `radius`, shrunk where the adjacent segments are too short.
fn fillet(path: &[[f64; 2]], radius: f64) -> Vec<[f64; 2]> {
    if path.len() < 3 {
        return path.to_vec();
    }
    let sub = |a: [f64; 2], b: [f64; 2]| [a[0] - b[0], a[1] - b[1]];
    let norm = |v: [f64; 2]| v[0].hypot(v[1]);
    let mut out = vec![path[0]];
    for i in 1..path.len() - 1 {
        let (p, c, n) = (path[i - 1], path[i], path[i + 1]);
        let (u, v) = (sub(c, p), sub(n, c));
        let (lu, lv) = (norm(u), norm(v));
        let (u, v) = ([u[0] / lu, u[1] / lu], [v[0] / lv, v[1] / lv]);
        let turn = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
        if turn.abs() < 1e-6 || lu < 1e-9 || lv < 1e-9 {
            out.push(c);
            continue;
        }
        let half = (turn.abs() / 2.0).tan();
        let tangent = (radius * half).min(0.5 * lu.min(lv));
        let r = tangent / half;
        let a = [c[0] - u[0] * tangent, c[1] - u[1] * tangent];
        // center lies to the left for left turns
        let side = turn.signum();
        let center = [a[0] - side * u[1] * r, a[1] + side * u[0] * r];
        let start = (a[1] - center[1]).atan2(a[0] - center[0]);
        let steps = ((turn.abs() * r / 0.1).ceil() as usize).max(1);
        for k in 0..=steps {
            let ang = start + turn * k as f64 / steps as f64;
            out.push([center[0] + r * ang.cos(), center[1] + r * ang.sin()]);
        }
    }
    out.push(*path.last().unwrap());
    out
}

/// Points at equal arc-length spacing along a polyline, starting at its
/// first vertex.
fn resample_polyline(path: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = vec![path[0]];
    let mut need = spacing;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let mut at = 0.0;
        while len - at >= need {
            at += need;
            let t = at / len;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            need = spacing;
        }
        need -= len - at;
    }
    out
}

/// Casts one ray per angular bin center and places one point per radial bin
/// at the bin's center range, labelled by the map at the point's true
/// location. Labels are written with the portable raw label table, then the
/// noise model is applied.
pub fn synthesize_scan<R: Rng>(
    map: &SemanticMap,
    pose: &Se2,
    scale: f64,
    spec: &PolarGridSpec,
    noise: &NoiseSpec,
    timestamp: f64,
    rng: &mut R,
) -> ScanFrame {
    let present: Vec<u8> = map
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, _)| c as u8)
        .collect();
    let z_dist = Normal::new(0.0, 0.5).unwrap();
    let mut points = Vec::with_capacity(spec.n_bins());
    for tb in 0..spec.n_theta {
        for rb in 0..spec.n_r {
            let c = spec.bin_center(tb, rb);
            let Some(class) = map.class_at_px(map.meters_to_px(pose.transform_point(c), scale)) else {
                continue;
            };
            if class == UNLABELLED {
                continue;
            }
            if noise.point_dropout_prob > 0.0 && rng.gen_bool(noise.point_dropout_prob) {
                continue;
            }
            let mut label = class as u32;
            if noise.label_flip_prob > 0.0 && present.len() > 1 && rng.gen_bool(noise.label_flip_prob) {
                let others: Vec<u8> = present.iter().copied().filter(|&p| p != class).collect();
                label = *others.choose(rng).unwrap() as u32;
            }
            if label == ROAD as u32 && noise.vehicle_relabel_prob > 0.0 && rng.gen_bool(noise.vehicle_relabel_prob) {
                label = raw::VEHICLE;
            }
            let mut scale_r = 1.0;
            if noise.range_jitter_std > 0.0 {
                let r = c[0].hypot(c[1]);
                let jitter = Normal::new(0.0, noise.range_jitter_std).unwrap().sample(rng);
                scale_r = ((r + jitter) / r).max(0.0);
            }
            points.push(RawPoint {
                x: (c[0] * scale_r) as f32,
                y: (c[1] * scale_r) as f32,
                z: z_dist.sample(rng) as f32,
                label,
            });
        }
    }
    ScanFrame { timestamp, points }
}

/// Relative motions between consecutive poses, each corrupted in the robot
/// frame by `N(0, odom_noise² · step_length)`. Returns `poses.len() - 1`
/// frames stamped with the time of their target pose.
pub fn perturb_odometry<R: Rng>(poses: &[Se2], timestamps: &[f64], noise: &NoiseSpec, rng: &mut R) -> Vec<OdomFrame> {
    poses
        .windows(2)
        .zip(timestamps.iter().skip(1))
        .map(|(w, &t)| {
            let delta = w[0].between(&w[1]);
            let root_len = delta.translation_norm().sqrt();
            let mut n = [0.0; 3];
            for (k, v) in n.iter_mut().enumerate() {
                let std = noise.odom_noise[k] * root_len;
                if std > 0.0 {
                    *v = Normal::new(0.0, std).unwrap().sample(rng);
                }
            }
            let noisy = delta.compose(&Se2::new(n[0], n[1], n[2]));
            OdomFrame { timestamp: t, transform: Se3::from_se2(&noisy) }
        })
        .collect()
}

/// A complete synthetic run: world, ground truth, scans and odometry.
/// `odometry[i]` is the motion from frame `i - 1` to frame `i`; the first
/// entry is the identity.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: World,
    pub timestamps: Vec<f64>,
    pub ground_truth: Vec<Se2>,
    pub scans: Vec<ScanFrame>,
    pub odometry: Vec<OdomFrame>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub world: WorldSpec,
    pub noise: NoiseSpec,
    pub length_m: f64,
    pub frame_rate_hz: f64,
    pub grid: PolarGridSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            world: WorldSpec::default(),
            noise: NoiseSpec::default(),
            length_m: 200.0,
            frame_rate_hz: 10.0,
            grid: PolarGridSpec::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.noise.validate()?;
        self.grid.validate()?;
        if !(self.length_m > 0.0) || !(self.frame_rate_hz > 0.0) {
            return Err(Error::Config("length_m and frame_rate_hz must be positive".into()));
        }
        Ok(())
    }
}

pub fn simulate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let world = generate_world(&spec.world)?;
    let traj = simulate_trajectory(&world, spec.length_m, spec.world.seed.wrapping_add(1))?;
    let timestamps: Vec<f64> = (0..traj.poses.len()).map(|i| i as f64 / spec.frame_rate_hz).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.world.seed.wrapping_add(2));
    let scans = traj
        .poses
        .iter()
        .zip(&timestamps)
        .map(|(p, &t)| synthesize_scan(&world.map, p, spec.world.scale_true, &spec.grid, &spec.noise, t, &mut rng))
        .collect();
    let mut odometry = vec![OdomFrame { timestamp: timestamps[0], transform: Se3::identity() }];
    let mut odo_rng = ChaCha8Rng::seed_from_u64(spec.world.seed.wrapping_add(3));
    odometry.extend(perturb_odometry(&traj.poses, &timestamps, &spec.noise, &mut odo_rng));
    Ok(Scenario {
        world,
        timestamps,
        ground_truth: traj.poses,
        scans,
        odometry,
        truncated: traj.truncated,
    })
}

/// Composes odometry frames from `start`.
pub fn dead_reckon(start: Se2, odometry: &[OdomFrame]) -> Result<Vec<Se2>> {
    let mut out = vec![start];
    for f in odometry {
        let d = crate::mcl::project_se3(&crate::mcl::OdometryDelta::new(f.transform))?;
        out.push(out.last().unwrap().compose(&d));
    }
    Ok(out)
}
