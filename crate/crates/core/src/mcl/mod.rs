//! Monte-Carlo localization over pose and map scale.
//!
//! Each particle carries a planar pose in the metric map frame and a map scale
//! in px/m. Odometry is projected onto the ground plane and applied with
//! Gaussian pose noise and log-normal scale noise; scans are scored through
//! the polar rasters in [`crate::polar`] and turned into weights with an
//! inverse-cost likelihood.

mod config;
mod gmm;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Se2, Se3};
use crate::polar::{rasterize_scan, render_local_tdf, PolarGridSpec, PreparedScan};
use crate::scan::SemanticScan;
use crate::semantic_map::{sample_road_cells, ClassSet, ClassTdf, SemanticMap};

pub use config::FilterConfig;
pub use gmm::{adapt_particle_count, fit_gmm, mixture_area, GaussianComponent};

/// Lower bound on a particle's cost before inverting it.
pub const COST_EPSILON: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Pose in the metric map frame.
    pub pose: Se2,
    /// Map scale in px/m.
    pub scale: f64,
    /// Log of the normalized weight.
    pub log_weight: f64,
}

impl Particle {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// Position in pixels relative to the map-frame origin.
    pub fn scaled_position(&self) -> [f64; 2] {
        [self.pose.x * self.scale, self.pose.y * self.scale]
    }

    /// Changes the scale while keeping the particle on the same map pixel.
    fn rescale(&mut self, scale: f64) {
        let ratio = self.scale / scale;
        self.pose.x *= ratio;
        self.pose.y *= ratio;
        self.scale = scale;
    }
}

/// Frame-to-frame rigid motion of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdometryDelta {
    pub transform: Se3,
}

impl OdometryDelta {
    pub fn new(transform: Se3) -> Self {
        OdometryDelta { transform }
    }

    pub fn from_se2(p: &Se2) -> Self {
        OdometryDelta {
            transform: Se3::from_se2(p),
        }
    }
}

/// Ground-plane projection of a spatial motion: planar translation and yaw.
pub fn project_se3(u: &OdometryDelta) -> Result<Se2> {
    let t = &u.transform;
    t.validate(ORTHONORMAL_TOL)?;
    let yaw = t.rotation[(1, 0)].atan2(t.rotation[(0, 0)]);
    Ok(Se2::new(t.translation[0], t.translation[1], yaw))
}

/// Summary statistics of the weighted particle set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEstimate {
    /// Mean pose in the metric map frame (at the mean scale).
    pub pose: Se2,
    /// Position covariance in m².
    pub position_cov: [[f64; 2]; 2],
    /// Circular heading variance in rad².
    pub heading_var: f64,
    pub scale_mean: f64,
    /// Variance of the log scale.
    pub scale_log_var: f64,
    pub converged: bool,
    pub n_particles: usize,
    /// Mean position in map pixels.
    pub position_px: [f64; 2],
}

impl PosteriorEstimate {
    pub fn position_cov_trace(&self) -> f64 {
        self.position_cov[0][0] + self.position_cov[1][1]
    }
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, a, b))
}

/// Matrix square root `A` with `A Aᵀ = sigma`, valid for singular PSD input.
fn noise_factor(sigma: &[[f64; 3]; 3]) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|i, j| sigma[i][j]);
    let eig = SymmetricEigen::new(m);
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&sqrt)
}

/// Motion update applied to every particle.
///
/// Pose: `p ⊕ (proj(u) + n)` with `n ~ N(0, sigma_p)`. Scale, unless frozen:
/// multiplied by `exp(N(0, sigma_s / max(1, dist_from_start)))` and clamped to
/// the configured bounds; particles keep their map pixel when the scale moves.
/// Every particle draws from its own stream derived from `(seed, index)`.
pub fn propagate(
    particles: &mut [Particle],
    u: &Se2,
    dist_from_start: f64,
    cfg: &FilterConfig,
    scale_frozen: bool,
    seed: u64,
) {
    let factor = noise_factor(&cfg.sigma_p);
    let scale_std = (cfg.sigma_s / dist_from_start.max(1.0)).sqrt();
    let (s_min, s_max) = cfg.scale_bounds();
    particles.par_iter_mut().enumerate().for_each(|(i, p)| {
        let mut rng = stream_rng(seed, i as u64, 0);
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = factor * z;
        let noisy = Se2 {
            x: u.x + n[0],
            y: u.y + n[1],
            theta: u.theta + n[2],
        };
        p.pose = p.pose.compose(&noisy);
        if !scale_frozen && scale_std > 0.0 {
            let eps: f64 = rng.sample(StandardNormal);
            let s = (p.scale * (scale_std * eps).exp()).clamp(s_min, s_max);
            p.rescale(s);
        }
    });
}

/// Measurement update: multiplies each weight by `n / max(C, eps) + gamma`
/// and renormalizes. Returns the per-particle costs.
pub fn weigh(particles: &mut [Particle], scan: &PreparedScan, tdf: &ClassTdf, cfg: &FilterConfig) -> Vec<f64> {
    let n = scan.total_points() as f64;
    let costs: Vec<f64> = particles
        .par_iter()
        .map(|p| scan.cost_at(tdf, &p.pose, p.scale, &cfg.alpha))
        .collect();
    if n > 0.0 {
        for (p, c) in particles.iter_mut().zip(&costs) {
            p.log_weight += (n / c.max(COST_EPSILON) + cfg.gamma).ln();
        }
    }
    normalize(particles);
    costs
}

/// Rescales log weights so the weights sum to one.
pub fn normalize(particles: &mut [Particle]) {
    if particles.is_empty() {
        return;
    }
    let max = particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let lw = -(particles.len() as f64).ln();
        particles.iter_mut().for_each(|p| p.log_weight = lw);
        return;
    }
    let sum: f64 = particles.iter().map(|p| (p.log_weight - max).exp()).sum();
    let log_norm = max + sum.ln();
    particles.iter_mut().for_each(|p| p.log_weight -= log_norm);
}

pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    let sum_sq: f64 = particles.iter().map(|p| p.weight().powi(2)).sum();
    if sum_sq > 0.0 {
        1.0 / sum_sq
    } else {
        0.0
    }
}

/// Low-variance resampling to `n_out` particles with uniform weights.
pub fn systematic_resample<R: Rng>(particles: &[Particle], n_out: usize, rng: &mut R) -> Vec<Particle> {
    let mut out = Vec::with_capacity(n_out);
    if particles.is_empty() || n_out == 0 {
        return out;
    }
    let step = 1.0 / n_out as f64;
    let start = rng.gen::<f64>() * step;
    let log_w = -(n_out as f64).ln();
    let mut cumulative = particles[0].weight();
    let mut idx = 0;
    for i in 0..n_out {
        let target = start + i as f64 * step;
        while cumulative < target && idx + 1 < particles.len() {
            idx += 1;
            cumulative += particles[idx].weight();
        }
        out.push(Particle {
            log_weight: log_w,
            ..particles[idx]
        });
    }
    out
}

/// Resamples when the effective sample size falls under half the set size.
/// Returns whether resampling happened.
pub fn resample<R: Rng>(particles: &mut Vec<Particle>, rng: &mut R) -> bool {
    let n = particles.len();
    if n == 0 || effective_sample_size(particles) >= n as f64 / 2.0 {
        return false;
    }
    *particles = systematic_resample(particles, n, rng);
    true
}

/// Evenly spaced scales across the search range, endpoints included.
pub fn initial_scales(cfg: &FilterConfig) -> Vec<f64> {
    let (lo, hi) = cfg.scale_bounds();
    if lo == hi {
        return vec![lo];
    }
    if cfg.k_s == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..cfg.k_s)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.k_s - 1) as f64)
        .collect()
}

/// Angular bin shifts of the `k_theta` candidate headings, deduplicated.
pub fn heading_shifts(spec: &PolarGridSpec, k_theta: usize) -> Vec<usize> {
    let mut shifts: Vec<usize> = (0..k_theta)
        .map(|j| ((j * spec.n_theta) as f64 / k_theta as f64).round() as usize % spec.n_theta)
        .collect();
    shifts.dedup();
    shifts
}

/// Best heading for a particle at `pose` (heading ignored) and `scale`:
/// renders the local fields once and scores every candidate rotation as an
/// index shift of the scan histogram. Returns `(heading, cost)`.
pub fn best_heading(
    tdf: &ClassTdf,
    scan: &PreparedScan,
    pose: &Se2,
    scale: f64,
    alpha: &[f64],
    shifts: &[usize],
) -> (f64, f64) {
    let spec = scan.spec();
    let base = Se2 { theta: 0.0, ..*pose };
    let stack = render_local_tdf(tdf, &base, scale, spec);
    let costs = scan.rotation_costs(&stack, alpha, shifts);
    let (j, cost) = costs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, &c)| if c < acc.1 { (j, c) } else { acc });
    (wrap_angle(shifts[j] as f64 * spec.delta_theta()), cost)
}

/// Seeds the filter from road cells: `k_s` scales per sampled cell, each
/// given the best of `k_theta` headings. All particles get equal weight.
pub fn initialize(
    map: &SemanticMap,
    tdf: &ClassTdf,
    scan: &PreparedScan,
    cfg: &FilterConfig,
) -> Result<Vec<Particle>> {
    let scales = initial_scales(cfg);
    let n_cells = (cfg.n_max / scales.len()).max(1);
    let cells = sample_road_cells(map, n_cells, mix_seed(cfg.rng_seed, u64::MAX, 1))?;
    let shifts = heading_shifts(scan.spec(), cfg.k_theta);
    let jobs: Vec<((usize, usize), f64)> = cells
        .iter()
        .flat_map(|&c| scales.iter().map(move |&s| (c, s)))
        .collect();
    let log_w = -(jobs.len() as f64).ln();
    Ok(jobs
        .par_iter()
        .map(|&((cx, cy), s)| {
            let [x, y] = map.px_to_meters([cx as f64, cy as f64], s);
            let pose = Se2::new(x, y, 0.0);
            let (theta, _) = best_heading(tdf, scan, &pose, s, &cfg.alpha, &shifts);
            Particle {
                pose: Se2 { theta, ..pose },
                scale: s,
                log_weight: log_w,
            }
        })
        .collect())
}

/// Weighted moments of the particle set. Positions are averaged in map
/// pixels and converted to meters with the mean scale.
pub fn estimate(particles: &[Particle], cfg: &FilterConfig, origin_px: [f64; 2]) -> PosteriorEstimate {
    let weights: Vec<f64> = particles.iter().map(Particle::weight).collect();
    let total: f64 = weights.iter().sum();
    let w = |i: usize| weights[i] / total;

    let (mut s_mean, mut ls_mean, mut qx, mut qy, mut sin, mut cos) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, p) in particles.iter().enumerate() {
        let wi = w(i);
        let q = p.scaled_position();
        s_mean += wi * p.scale;
        ls_mean += wi * p.scale.ln();
        qx += wi * q[0];
        qy += wi * q[1];
        sin += wi * p.pose.theta.sin();
        cos += wi * p.pose.theta.cos();
    }
    let (mut cxx, mut cxy, mut cyy, mut ls_var) = (0.0, 0.0, 0.0, 0.0);
    for (i, p) in particles.iter().enumerate() {
        let wi = w(i);
        let q = p.scaled_position();
        let (dx, dy) = (q[0] - qx, q[1] - qy);
        cxx += wi * dx * dx;
        cxy += wi * dx * dy;
        cyy += wi * dy * dy;
        ls_var += wi * (p.scale.ln() - ls_mean).powi(2);
    }
    // a shared scale is reported as is, free of summation round-off
    if let Some(first) = particles.first() {
        if particles.iter().all(|p| p.scale == first.scale) {
            s_mean = first.scale;
            ls_var = 0.0;
        }
    }
    let s2 = s_mean * s_mean;
    let position_cov = [[cxx / s2, cxy / s2], [cxy / s2, cyy / s2]];
    let resultant = sin.hypot(cos).min(1.0);
    let heading_var = if resultant > 0.0 { -2.0 * resultant.ln() } else { f64::INFINITY };
    let trace = position_cov[0][0] + position_cov[1][1];
    PosteriorEstimate {
        pose: Se2::new(qx / s_mean, qy / s_mean, sin.atan2(cos)),
        position_cov,
        heading_var,
        scale_mean: s_mean,
        scale_log_var: ls_var,
        converged: trace < cfg.conv_cov_threshold,
        n_particles: particles.len(),
        position_px: [origin_px[0] + qx, origin_px[1] + qy],
    }
}

/// The filter state: owns the particle set and steps it through odometry and
/// scans.
pub struct MclFilter<'a> {
    map: &'a SemanticMap,
    tdf: &'a ClassTdf,
    classes: ClassSet,
    spec: PolarGridSpec,
    cfg: FilterConfig,
    particles: Vec<Particle>,
    steps: u64,
    travelled: f64,
    scale_frozen: bool,
    initial_area: f64,
}

impl<'a> MclFilter<'a> {
    pub fn new(
        map: &'a SemanticMap,
        tdf: &'a ClassTdf,
        classes: ClassSet,
        spec: PolarGridSpec,
        cfg: FilterConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        classes.validate()?;
        if cfg.alpha.len() != classes.n_classes() || tdf.n_classes() != classes.n_classes() {
            return Err(Error::Config(format!(
                "alpha has {} weights, class set {} classes, distance fields {} classes",
                cfg.alpha.len(),
                classes.n_classes(),
                tdf.n_classes()
            )));
        }
        if tdf.width() != map.width() || tdf.height() != map.height() {
            return Err(Error::Config("distance fields do not match the map size".into()));
        }
        Ok(MclFilter {
            map,
            tdf,
            classes,
            spec,
            cfg,
            particles: Vec::new(),
            steps: 0,
            travelled: 0.0,
            scale_frozen: false,
            initial_area: 0.0,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn is_initialized(&self) -> bool {
        !self.particles.is_empty()
    }

    pub fn is_scale_frozen(&self) -> bool {
        self.scale_frozen
    }

    pub fn travelled(&self) -> f64 {
        self.travelled
    }

    /// Replaces the particle set, e.g. to start from a known pose.
    pub fn set_particles(&mut self, particles: Vec<Particle>) {
        self.particles = particles;
        normalize(&mut self.particles);
        self.initial_area = self.gmm_area().unwrap_or(0.0);
        self.scale_frozen = self.cfg.fixed_scale.is_some();
    }

    pub fn prepare(&self, scan: &SemanticScan) -> PreparedScan {
        PreparedScan::new(&rasterize_scan(scan, &self.spec, &self.classes))
    }

    /// Builds the initial particle set from the first scan.
    pub fn initialize(&mut self, scan: &SemanticScan) -> Result<PosteriorEstimate> {
        let prepared = self.prepare(scan);
        let particles = initialize(self.map, self.tdf, &prepared, &self.cfg)?;
        self.set_particles(particles);
        Ok(self.estimate())
    }

    pub fn estimate(&self) -> PosteriorEstimate {
        estimate(&self.particles, &self.cfg, self.tdf.origin_px)
    }

    fn gmm_area(&self) -> Option<f64> {
        let k = self.cfg.gmm_components;
        if self.particles.len() < k {
            return None;
        }
        let pts: Vec<[f64; 2]> = self.particles.iter().map(Particle::scaled_position).collect();
        let w: Vec<f64> = self.particles.iter().map(Particle::weight).collect();
        let mut rng = stream_rng(self.cfg.rng_seed, self.steps, 3);
        fit_gmm(&pts, Some(&w), k, &mut rng).ok().map(|g| mixture_area(&g))
    }

    /// One filter update. `scan = None` performs the prediction only.
    pub fn step(&mut self, u: &OdometryDelta, scan: Option<&SemanticScan>) -> Result<PosteriorEstimate> {
        if !self.is_initialized() {
            return Err(Error::Init("filter stepped before initialization".into()));
        }
        let motion = project_se3(u)?;
        self.steps += 1;
        self.travelled += motion.translation_norm();
        propagate(
            &mut self.particles,
            &motion,
            self.travelled,
            &self.cfg,
            self.scale_frozen,
            mix_seed(self.cfg.rng_seed, self.steps, 0),
        );
        if let Some(scan) = scan {
            let prepared = self.prepare(scan);
            weigh(&mut self.particles, &prepared, self.tdf, &self.cfg);
        }
        let est = self.estimate();

        if !self.scale_frozen && est.scale_log_var < self.cfg.scale_freeze_var {
            let s = est.scale_mean;
            self.particles.iter_mut().for_each(|p| p.rescale(s));
            self.scale_frozen = true;
        }

        let mut rng = stream_rng(self.cfg.rng_seed, self.steps, 2);
        resample(&mut self.particles, &mut rng);

        if self.steps % self.cfg.adapt_every as u64 == 0 {
            if let Some(area) = self.gmm_area() {
                let n = adapt_particle_count(area, self.initial_area, self.cfg.n_min, self.cfg.n_max);
                if n != self.particles.len() {
                    self.particles = systematic_resample(&self.particles, n, &mut rng);
                }
            }
        }
        Ok(est)
    }
}
