//! Top-down semantic maps, their class-wise truncated distance fields, and
//! road sampling for filter initialization.

mod bundle;
mod tdf;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{load_map_bundle, read_raster, save_map_bundle, sidecar_path, MapSidecar};
pub use tdf::{build_tdf, ClassTdf, DEFAULT_TRUNC_RADIUS};

pub const ROAD: u8 = 0;
pub const TERRAIN: u8 = 1;
pub const VEGETATION: u8 = 2;
pub const BUILDING: u8 = 3;
/// Map cells carrying no class. They never act as distance-field sources.
pub const UNLABELLED: u8 = 255;

pub const CANONICAL_CLASSES: [&str; 4] = ["road", "terrain", "vegetation", "building"];

/// Raw labels used by the portable scan format. The first four coincide with
/// the canonical indices.
pub mod raw {
    pub const ROAD: u32 = 0;
    pub const TERRAIN: u32 = 1;
    pub const VEGETATION: u32 = 2;
    pub const BUILDING: u32 = 3;
    pub const VEHICLE: u32 = 4;
    pub const OTHER: u32 = 5;
}

pub fn class_index(name: &str) -> Option<u8> {
    CANONICAL_CLASSES
        .iter()
        .position(|c| *c == name)
        .map(|i| i as u8)
}

/// Canonical scoring classes plus the mapping from raw sensor labels onto them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSet {
    pub names: Vec<String>,
    /// Raw label → canonical index; `None` drops the point. Labels absent from
    /// the table are dropped as well.
    pub remap: BTreeMap<u32, Option<u8>>,
    /// Canonical classes excluded from scoring.
    #[serde(default)]
    pub ignore: BTreeSet<u8>,
}

impl Default for ClassSet {
    fn default() -> Self {
        ClassSet::portable()
    }
}

impl ClassSet {
    fn canonical_names() -> Vec<String> {
        CANONICAL_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    /// Label table of the portable scan format: canonical classes verbatim,
    /// `vehicle` folded into road, `other` dropped.
    pub fn portable() -> Self {
        let remap = [
            (raw::ROAD, Some(ROAD)),
            (raw::TERRAIN, Some(TERRAIN)),
            (raw::VEGETATION, Some(VEGETATION)),
            (raw::BUILDING, Some(BUILDING)),
            (raw::VEHICLE, Some(ROAD)),
            (raw::OTHER, None),
        ]
        .into_iter()
        .collect();
        ClassSet {
            names: Self::canonical_names(),
            remap,
            ignore: BTreeSet::new(),
        }
    }

    /// SemanticKITTI raw label ids. Vehicles (static and moving) are folded
    /// into road; everything not listed is dropped.
    pub fn semantic_kitti() -> Self {
        let mut remap = BTreeMap::new();
        remap.insert(40, Some(ROAD)); // road
        remap.insert(72, Some(TERRAIN)); // terrain
        remap.insert(70, Some(VEGETATION)); // vegetation
        remap.insert(50, Some(BUILDING)); // building
        for vehicle in [10, 13, 18, 20, 252, 256, 257, 258, 259] {
            remap.insert(vehicle, Some(ROAD));
        }
        for other in [0, 1, 11, 15, 16, 30, 31, 32, 44, 48, 49, 51, 52, 60, 71, 80, 81, 99] {
            remap.insert(other, None);
        }
        ClassSet {
            names: Self::canonical_names(),
            remap,
            ignore: BTreeSet::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    /// Resolves a raw label to the canonical class it scores as, if any.
    pub fn resolve(&self, raw_label: u32) -> Option<u8> {
        self.remap
            .get(&raw_label)
            .copied()
            .flatten()
            .filter(|c| (*c as usize) < self.names.len())
    }

    pub fn is_scored(&self, class: u8) -> bool {
        (class as usize) < self.names.len() && !self.ignore.contains(&class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::Config("class set is empty".into()));
        }
        for (raw, target) in &self.remap {
            if let Some(c) = target {
                if *c as usize >= self.names.len() {
                    return Err(Error::Config(format!(
                        "remap entry {raw} points at class {c}, only {} classes defined",
                        self.names.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A rasterized top-down semantic map. Cell `(x, y)` covers the unit square
/// centered on continuous pixel coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    cells: Vec<u8>,
    /// Known map resolution in px/m, when available.
    pub scale_prior: Option<f64>,
    /// Pixel position of the metric map-frame origin.
    pub origin_px: [f64; 2],
}

impl SemanticMap {
    pub fn new(width: usize, height: usize, cells: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("map must be at least 1×1".into()));
        }
        if cells.len() != width * height {
            return Err(Error::Config(format!(
                "map has {} cells, expected {}×{}",
                cells.len(),
                width,
                height
            )));
        }
        if let Some(bad) = cells
            .iter()
            .find(|&&c| c != UNLABELLED && c as usize >= CANONICAL_CLASSES.len())
        {
            return Err(Error::Config(format!("invalid map class index {bad}")));
        }
        Ok(SemanticMap {
            width,
            height,
            cells,
            scale_prior: None,
            origin_px: [0.0, 0.0],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn class_at(&self, x: usize, y: usize) -> u8 {
        self.cells[y * self.width + x]
    }

    /// Class of the cell containing continuous pixel coordinates, if on-map.
    pub fn class_at_px(&self, px: [f64; 2]) -> Option<u8> {
        let (x, y) = (px[0].round(), px[1].round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some(self.class_at(x as usize, y as usize))
    }

    /// Converts a metric map-frame position into pixel coordinates.
    pub fn meters_to_px(&self, p: [f64; 2], scale: f64) -> [f64; 2] {
        [self.origin_px[0] + scale * p[0], self.origin_px[1] + scale * p[1]]
    }

    pub fn px_to_meters(&self, px: [f64; 2], scale: f64) -> [f64; 2] {
        [
            (px[0] - self.origin_px[0]) / scale,
            (px[1] - self.origin_px[1]) / scale,
        ]
    }

    pub fn road_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == ROAD)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for &c in &self.cells {
            if (c as usize) < counts.len() {
                counts[c as usize] += 1;
            }
        }
        counts
    }
}

/// Draws `k` road cells uniformly with replacement.
pub fn sample_road_cells(map: &SemanticMap, k: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let roads = map.road_cells();
    if roads.is_empty() {
        return Err(Error::Init("map contains no road cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| roads[rng.gen_range(0..roads.len())]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vehicle_folds_into_road() {
        let cs = ClassSet::portable();
        assert_eq!(cs.resolve(raw::VEHICLE), Some(ROAD));
        assert_eq!(cs.resolve(raw::OTHER), None);
        assert_eq!(cs.resolve(999), None);
        let kitti = ClassSet::semantic_kitti();
        assert_eq!(kitti.resolve(10), Some(ROAD));
        assert_eq!(kitti.resolve(50), Some(BUILDING));
        assert_eq!(kitti.resolve(1234), None);
    }

    #[test]
    fn map_rejects_bad_cells() {
        assert!(SemanticMap::new(2, 1, vec![0, 7]).is_err());
        assert!(SemanticMap::new(0, 1, vec![]).is_err());
        assert!(SemanticMap::new(2, 1, vec![0, UNLABELLED]).is_ok());
    }

    #[test]
    fn single_road_cell_is_always_sampled() {
        let mut cells = vec![TERRAIN; 9];
        cells[5] = ROAD;
        let map = SemanticMap::new(3, 3, cells).unwrap();
        let s = sample_road_cells(&map, 5, 7).unwrap();
        assert_eq!(s, vec![(2, 1); 5]);
    }

    #[test]
    fn sampling_is_seeded() {
        let map = SemanticMap::new(8, 8, vec![ROAD; 64]).unwrap();
        assert_eq!(
            sample_road_cells(&map, 100, 3).unwrap(),
            sample_road_cells(&map, 100, 3).unwrap()
        );
    }

    #[test]
    fn no_roads_is_an_init_error() {
        let map = SemanticMap::new(4, 4, vec![TERRAIN; 16]).unwrap();
        assert!(matches!(sample_road_cells(&map, 1, 0), Err(Error::Init(_))));
    }

    #[test]
    fn road_sampling_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let map = SemanticMap::new(10, 10, vec![ROAD; 100]).unwrap();
        let samples = sample_road_cells(&map, 10_000, 11).unwrap();
        let mut counts = [0f64; 100];
        for (x, y) in samples {
            counts[y * 10 + x] += 1.0;
        }
        let expected = 100.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
    }
}
