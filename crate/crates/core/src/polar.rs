//! Polar rasters of scans and of local distance fields.
//!
//! A scan is binned once into per-class `(theta, range)` counts in the robot
//! frame. For each particle the map's distance fields are sampled at the same
//! bin centers, and the measurement cost becomes one inner product per class.
//! Turning the robot in place is a cyclic shift along the angular axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Se2;
use crate::scan::SemanticScan;
use crate::semantic_map::{ClassSet, ClassTdf};

/// Shape of the polar grid. Angular bins are half-open `[kΔθ, (k+1)Δθ)` with
/// bin 0 starting at angle 0; radial bins are `[kΔr, (k+1)Δr)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarGridSpec {
    #[serde(default = "PolarGridSpec::default_n_theta")]
    pub n_theta: usize,
    #[serde(default = "PolarGridSpec::default_n_r")]
    pub n_r: usize,
    #[serde(default = "PolarGridSpec::default_r_max")]
    pub r_max: f64,
}

impl Default for PolarGridSpec {
    fn default() -> Self {
        PolarGridSpec {
            n_theta: 100,
            n_r: 25,
            r_max: 25.0,
        }
    }
}

impl PolarGridSpec {
    fn default_n_theta() -> usize {
        100
    }
    fn default_n_r() -> usize {
        25
    }
    fn default_r_max() -> f64 {
        25.0
    }

    pub fn new(n_theta: usize, n_r: usize, r_max: f64) -> Result<Self> {
        let spec = PolarGridSpec { n_theta, n_r, r_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 4 || self.n_theta % 2 != 0 {
            return Err(Error::Config(format!(
                "n_theta must be even and at least 4, got {}",
                self.n_theta
            )));
        }
        if self.n_r == 0 {
            return Err(Error::Config("n_r must be at least 1".into()));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::Config(format!("r_max must be positive, got {}", self.r_max)));
        }
        Ok(())
    }

    pub fn delta_theta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn delta_r(&self) -> f64 {
        self.r_max / self.n_r as f64
    }

    pub fn n_bins(&self) -> usize {
        self.n_theta * self.n_r
    }

    /// Bin containing a ground-plane point, or `None` beyond `r_max`.
    pub fn bin_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = x.hypot(y);
        if !(r < self.r_max) {
            return None;
        }
        let angle = y.atan2(x).rem_euclid(2.0 * PI);
        let mut tb = (angle / self.delta_theta()) as usize;
        if tb >= self.n_theta {
            tb = 0;
        }
        let rb = ((r / self.delta_r()) as usize).min(self.n_r - 1);
        Some((tb, rb))
    }

    /// Robot-frame center of bin `(tb, rb)` in meters.
    pub fn bin_center(&self, tb: usize, rb: usize) -> [f64; 2] {
        let theta = (tb as f64 + 0.5) * self.delta_theta();
        let r = (rb as f64 + 0.5) * self.delta_r();
        let (s, c) = theta.sin_cos();
        [r * c, r * s]
    }

    /// Angular bin shift closest to a heading.
    pub fn shift_for_heading(&self, heading: f64) -> usize {
        let k = (heading.rem_euclid(2.0 * PI) / self.delta_theta()).round() as usize;
        k % self.n_theta
    }

    fn index(&self, class: usize, tb: usize, rb: usize) -> usize {
        (class * self.n_theta + tb) * self.n_r + rb
    }
}

/// Per-class point counts over the polar grid, laid out class-major, then
/// theta, then range.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarClassHistogram {
    pub spec: PolarGridSpec,
    pub n_classes: usize,
    pub counts: Vec<u32>,
    pub total_points: u32,
}

impl PolarClassHistogram {
    pub fn zeros(spec: PolarGridSpec, n_classes: usize) -> Self {
        PolarClassHistogram {
            spec,
            n_classes,
            counts: vec![0; n_classes * spec.n_bins()],
            total_points: 0,
        }
    }

    pub fn count(&self, class: usize, tb: usize, rb: usize) -> u32 {
        self.counts[self.spec.index(class, tb, rb)]
    }

    /// Zeroes all counts of one class and fixes up the total.
    pub fn without_class(&self, class: usize) -> Self {
        let mut out = self.clone();
        let n = self.spec.n_bins();
        let removed: u32 = out.counts[class * n..(class + 1) * n].iter().sum();
        out.counts[class * n..(class + 1) * n].fill(0);
        out.total_points -= removed;
        out
    }
}

/// Local distance-field samples at every polar bin center, same layout as
/// [`PolarClassHistogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTdfStack {
    pub spec: PolarGridSpec,
    pub n_classes: usize,
    pub values: Vec<f32>,
}

impl PolarTdfStack {
    pub fn value(&self, class: usize, tb: usize, rb: usize) -> f32 {
        self.values[self.spec.index(class, tb, rb)]
    }
}

/// Bins a scan by ground-plane position. Points at or beyond `r_max` and
/// points of ignored classes are left out of the counts and of the total.
pub fn rasterize_scan(
    scan: &SemanticScan,
    spec: &PolarGridSpec,
    classes: &ClassSet,
) -> PolarClassHistogram {
    let mut hist = PolarClassHistogram::zeros(*spec, classes.n_classes());
    for p in &scan.points {
        if !classes.is_scored(p.class) {
            continue;
        }
        if let Some((tb, rb)) = spec.bin_of(p.x, p.y) {
            hist.counts[spec.index(p.class as usize, tb, rb)] += 1;
            hist.total_points += 1;
        }
    }
    hist
}

/// Pixel coordinates of a robot-frame point for a particle at `pose` (meters)
/// with map scale `scale` (px/m).
#[inline(always)]
fn to_px(origin: [f64; 2], pose: &Se2, sin: f64, cos: f64, scale: f64, c: [f64; 2]) -> (f64, f64) {
    (
        origin[0] + scale * (pose.x + cos * c[0] - sin * c[1]),
        origin[1] + scale * (pose.y + sin * c[0] + cos * c[1]),
    )
}

/// Samples each class field of `tdf` at the bin centers of a robot at `pose`.
pub fn render_local_tdf(
    tdf: &ClassTdf,
    pose: &Se2,
    scale: f64,
    spec: &PolarGridSpec,
) -> PolarTdfStack {
    let n_classes = tdf.n_classes();
    let mut values = vec![0.0f32; n_classes * spec.n_bins()];
    let (sin, cos) = pose.theta.sin_cos();
    for tb in 0..spec.n_theta {
        for rb in 0..spec.n_r {
            let (x, y) = to_px(tdf.origin_px, pose, sin, cos, scale, spec.bin_center(tb, rb));
            for c in 0..n_classes {
                values[spec.index(c, tb, rb)] = tdf.query(c, x, y);
            }
        }
    }
    PolarTdfStack {
        spec: *spec,
        n_classes,
        values,
    }
}

/// Cyclically shifts counts by `k` angular bins: a point in bin `tb` moves to
/// bin `tb + k`.
pub fn rotate_histogram(hist: &PolarClassHistogram, k: i64) -> PolarClassHistogram {
    let spec = hist.spec;
    let shift = k.rem_euclid(spec.n_theta as i64) as usize;
    let mut out = PolarClassHistogram::zeros(spec, hist.n_classes);
    out.total_points = hist.total_points;
    let block = spec.n_r;
    for c in 0..hist.n_classes {
        for tb in 0..spec.n_theta {
            let src = spec.index(c, tb, 0);
            let dst = spec.index(c, (tb + shift) % spec.n_theta, 0);
            out.counts[dst..dst + block].copy_from_slice(&hist.counts[src..src + block]);
        }
    }
    out
}

/// `Σ_c alpha_c Σ_bins count · value`.
pub fn score(hist: &PolarClassHistogram, stack: &PolarTdfStack, alpha: &[f64]) -> Result<f64> {
    if hist.spec != stack.spec || hist.n_classes != stack.n_classes {
        return Err(Error::Contract(
            "histogram and distance stack have different shapes".into(),
        ));
    }
    if alpha.len() != hist.n_classes {
        return Err(Error::Contract(format!(
            "{} class weights for {} classes",
            alpha.len(),
            hist.n_classes
        )));
    }
    let n = hist.spec.n_bins();
    let mut total = 0.0;
    for (c, a) in alpha.iter().enumerate() {
        let counts = &hist.counts[c * n..(c + 1) * n];
        let values = &stack.values[c * n..(c + 1) * n];
        let class_sum: f64 = counts
            .iter()
            .zip(values)
            .filter(|(&k, _)| k > 0)
            .map(|(&k, &v)| k as f64 * v as f64)
            .sum();
        total += a * class_sum;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    class: u32,
    tb: u32,
    rb: u32,
    count: f64,
    center: [f64; 2],
}

/// The occupied bins of a histogram, prepared for repeated scoring.
///
/// [`PreparedScan::cost_at`] equals `score(hist, render_local_tdf(..))` but
/// only samples the distance fields where the histogram is non-zero.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    spec: PolarGridSpec,
    n_classes: usize,
    total_points: u32,
    /// Sorted by class, then angular bin, then radial bin.
    cells: Vec<Cell>,
    class_ends: Vec<usize>,
}

impl PreparedScan {
    pub fn new(hist: &PolarClassHistogram) -> Self {
        let spec = hist.spec;
        let mut cells = Vec::new();
        let mut class_ends = Vec::with_capacity(hist.n_classes);
        for c in 0..hist.n_classes {
            for tb in 0..spec.n_theta {
                for rb in 0..spec.n_r {
                    let k = hist.count(c, tb, rb);
                    if k > 0 {
                        cells.push(Cell {
                            class: c as u32,
                            tb: tb as u32,
                            rb: rb as u32,
                            count: k as f64,
                            center: spec.bin_center(tb, rb),
                        });
                    }
                }
            }
            class_ends.push(cells.len());
        }
        PreparedScan {
            spec,
            n_classes: hist.n_classes,
            total_points: hist.total_points,
            cells,
            class_ends,
        }
    }

    pub fn total_points(&self) -> u32 {
        self.total_points
    }

    pub fn spec(&self) -> &PolarGridSpec {
        &self.spec
    }

    pub fn n_occupied(&self) -> usize {
        self.cells.len()
    }

    /// Polar cost of a particle at `pose` with map scale `scale`.
    pub fn cost_at(&self, tdf: &ClassTdf, pose: &Se2, scale: f64, alpha: &[f64]) -> f64 {
        debug_assert_eq!(alpha.len(), self.n_classes);
        let (sin, cos) = pose.theta.sin_cos();
        let mut total = 0.0;
        let mut start = 0;
        for (c, &end) in self.class_ends.iter().enumerate() {
            let cells = &self.cells[start..end];
            start = end;
            if alpha[c] == 0.0 {
                continue;
            }
            let mut class_sum = 0.0;
            for cell in cells {
                let (x, y) = to_px(tdf.origin_px, pose, sin, cos, scale, cell.center);
                class_sum += cell.count * tdf.query(c, x, y) as f64;
            }
            total += alpha[c] * class_sum;
        }
        total
    }

    /// Costs of the rendered stack under every angular shift in `shifts`:
    /// entry `j` equals `score(rotate_histogram(hist, shifts[j]), stack)`.
    pub fn rotation_costs(&self, stack: &PolarTdfStack, alpha: &[f64], shifts: &[usize]) -> Vec<f64> {
        let spec = &self.spec;
        shifts
            .iter()
            .map(|&k| {
                let mut total = 0.0;
                let mut start = 0;
                for (c, &end) in self.class_ends.iter().enumerate() {
                    let cells = &self.cells[start..end];
                    start = end;
                    if alpha[c] == 0.0 {
                        continue;
                    }
                    let mut class_sum = 0.0;
                    for cell in cells {
                        let tb = (cell.tb as usize + k) % spec.n_theta;
                        class_sum += cell.count * stack.value(c, tb, cell.rb as usize) as f64;
                    }
                    total += alpha[c] * class_sum;
                }
                total
            })
            .collect()
    }

    /// Class of each occupied cell, for diagnostics.
    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.cells.iter().map(|c| c.class)
    }
}
