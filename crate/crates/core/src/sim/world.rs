use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic_map::{SemanticMap, BUILDING, ROAD, TERRAIN, VEGETATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadStyle {
    Grid,
    Radial,
    Irregular,
}

/// Parameters of a procedural world. Feature sizes are in cells, so a world
/// looks the same at any `scale_true`; the scale only relates cells to the
/// robot's meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub size: usize,
    pub scale_true: f64,
    pub road_graph_style: RoadStyle,
    pub building_density: f64,
    pub tree_density: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            size: 256,
            scale_true: 2.0,
            road_graph_style: RoadStyle::Irregular,
            building_density: 0.6,
            tree_density: 0.5,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::Config(format!("size must be at least 64, got {}", self.size)));
        }
        if !(1.0..=10.0).contains(&self.scale_true) {
            return Err(Error::Config(format!("scale_true must lie in [1, 10], got {}", self.scale_true)));
        }
        for (name, v) in [("building_density", self.building_density), ("tree_density", self.tree_density)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Road network: junction positions in px and edges as centerline polylines.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    pub nodes: Vec<[f64; 2]>,
    /// `(a, b, polyline from a to b)`.
    pub edges: Vec<(usize, usize, Vec<[f64; 2]>)>,
}

impl RoadGraph {
    /// Edge indices incident to each node.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (i, (a, b, _)) in self.edges.iter().enumerate() {
            inc[*a].push(i);
            inc[*b].push(i);
        }
        inc
    }

    pub fn is_connected(&self) -> bool {
        let used: Vec<usize> = (0..self.nodes.len()).filter(|&n| self.edges.iter().any(|e| e.0 == n || e.1 == n)).collect();
        let Some(&start) = used.first() else { return true };
        let inc = self.incidence();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(n) = queue.pop_front() {
            for &e in &inc[n] {
                let (a, b, _) = &self.edges[e];
                let m = if *a == n { *b } else { *a };
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        used.iter().all(|&n| seen[n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub map: SemanticMap,
    pub roads: RoadGraph,
}

pub const ROAD_HALF_WIDTH: f64 = 3.0;

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size as f64;
    let roads = match spec.road_graph_style {
        RoadStyle::Grid => grid_roads(n, &mut rng),
        RoadStyle::Radial => radial_roads(n, &mut rng),
        RoadStyle::Irregular => irregular_roads(n, &mut rng),
    };
    let mut canvas = Canvas::new(spec.size);
    for (_, _, line) in &roads.edges {
        for w in line.windows(2) {
            canvas.paint_capsule(w[0], w[1], ROAD_HALF_WIDTH, ROAD);
        }
    }
    place_buildings(&mut canvas, &roads, spec.building_density, &mut rng);
    place_vegetation(&mut canvas, spec.tree_density, &mut rng);
    let map = SemanticMap::new(spec.size, spec.size, canvas.cells)?;
    Ok(World { spec: spec.clone(), map, roads })
}

struct Canvas {
    size: usize,
    cells: Vec<u8>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas { size, cells: vec![TERRAIN; size * size] }
    }

    fn bbox(&self, lo: [f64; 2], hi: [f64; 2]) -> (usize, usize, usize, usize) {
        let clip = |v: f64| v.clamp(0.0, (self.size - 1) as f64);
        (
            clip(lo[0].floor()) as usize,
            clip(lo[1].floor()) as usize,
            clip(hi[0].ceil()) as usize,
            clip(hi[1].ceil()) as usize,
        )
    }

    fn paint_capsule(&mut self, a: [f64; 2], b: [f64; 2], r: f64, class: u8) {
        let (x0, y0, x1, y1) = self.bbox(
            [a[0].min(b[0]) - r, a[1].min(b[1]) - r],
            [a[0].max(b[0]) + r, a[1].max(b[1]) + r],
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                if segment_distance([x as f64, y as f64], a, b) <= r {
                    self.cells[y * self.size + x] = class;
                }
            }
        }
    }

    /// Paints `class` over every terrain cell inside the oriented rectangle.
    fn paint_rect(&mut self, center: [f64; 2], dir: [f64; 2], half_len: f64, half_depth: f64, class: u8) {
        let r = half_len.hypot(half_depth);
        let (x0, y0, x1, y1) = self.bbox([center[0] - r, center[1] - r], [center[0] + r, center[1] + r]);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - center[0], y as f64 - center[1]);
                let along = dx * dir[0] + dy * dir[1];
                let across = -dx * dir[1] + dy * dir[0];
                let i = y * self.size + x;
                if along.abs() <= half_len && across.abs() <= half_depth && self.cells[i] == TERRAIN {
                    self.cells[i] = class;
                }
            }
        }
    }

    fn paint_disc(&mut self, center: [f64; 2], r: f64, class: u8) {
        let (x0, y0, x1, y1) = self.bbox([center[0] - r, center[1] - r], [center[0] + r, center[1] + r]);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y * self.size + x;
                if (x as f64 - center[0]).hypot(y as f64 - center[1]) <= r && self.cells[i] == TERRAIN {
                    self.cells[i] = class;
                }
            }
        }
    }
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn straight(a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    vec![a, b]
}

/// Axis-aligned lattice of full-span roads with jittered spacing.
fn grid_roads(n: f64, rng: &mut ChaCha8Rng) -> RoadGraph {
    let lines = |rng: &mut ChaCha8Rng| {
        let mut v = Vec::new();
        let mut p = rng.gen_range(12.0..28.0);
        while p < n - 8.0 {
            v.push(p.round());
            p += rng.gen_range(36.0..60.0);
        }
        v
    };
    let xs = lines(rng);
    let ys = lines(rng);
    let mut nodes = Vec::new();
    let idx = |i: usize, j: usize| j * xs.len() + i;
    for &y in &ys {
        for &x in &xs {
            nodes.push([x, y]);
        }
    }
    let mut edges = Vec::new();
    for j in 0..ys.len() {
        for i in 0..xs.len() {
            if i + 1 < xs.len() {
                edges.push((idx(i, j), idx(i + 1, j), straight(nodes[idx(i, j)], nodes[idx(i + 1, j)])));
            }
            if j + 1 < ys.len() {
                edges.push((idx(i, j), idx(i, j + 1), straight(nodes[idx(i, j)], nodes[idx(i, j + 1)])));
            }
        }
    }
    // stubs running off the map edges
    let mut stub = |from: usize, to: [f64; 2], nodes: &mut Vec<[f64; 2]>| {
        nodes.push(to);
        let id = nodes.len() - 1;
        edges.push((from, id, straight(nodes[from], to)));
    };
    for j in 0..ys.len() {
        stub(idx(0, j), [0.0, ys[j]], &mut nodes);
        stub(idx(xs.len() - 1, j), [n - 1.0, ys[j]], &mut nodes);
    }
    for i in 0..xs.len() {
        stub(idx(i, 0), [xs[i], 0.0], &mut nodes);
        stub(idx(i, ys.len() - 1), [xs[i], n - 1.0], &mut nodes);
    }
    RoadGraph { nodes, edges }
}

/// Concentric rings joined by spokes around a jittered center.
fn radial_roads(n: f64, rng: &mut ChaCha8Rng) -> RoadGraph {
    let c = [n / 2.0 + rng.gen_range(-8.0..8.0), n / 2.0 + rng.gen_range(-8.0..8.0)];
    let n_spokes = rng.gen_range(6..=9);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut radii = Vec::new();
    let mut r = rng.gen_range(22.0..32.0);
    while r < n / 2.0 - 10.0 {
        radii.push(r);
        r += rng.gen_range(30.0..44.0);
    }
    let ang = |k: usize| phase + std::f64::consts::TAU * k as f64 / n_spokes as f64;
    let mut nodes = vec![c];
    for &r in &radii {
        for k in 0..n_spokes {
            nodes.push([c[0] + r * ang(k).cos(), c[1] + r * ang(k).sin()]);
        }
    }
    let id = |ring: usize, k: usize| 1 + ring * n_spokes + k % n_spokes;
    let mut edges = Vec::new();
    for (ring, &r) in radii.iter().enumerate() {
        for k in 0..n_spokes {
            // ring arc sampled finely so it stays round
            let steps = ((r * (ang(k + 1) - ang(k))) / 6.0).ceil() as usize;
            let arc: Vec<[f64; 2]> = (0..=steps)
                .map(|s| {
                    let a = ang(k) + (ang(k + 1) - ang(k)) * s as f64 / steps as f64;
                    [c[0] + r * a.cos(), c[1] + r * a.sin()]
                })
                .collect();
            edges.push((id(ring, k), id(ring, k + 1), arc));
            let inner = if ring == 0 { 0 } else { id(ring - 1, k) };
            edges.push((inner, id(ring, k), straight(nodes[inner], nodes[id(ring, k)])));
        }
    }
    // spokes continue to the border
    for k in 0..n_spokes {
        let from = id(radii.len() - 1, k);
        let a = ang(k);
        let inside = |p: [f64; 2]| (0.0..=n - 1.0).contains(&p[0]) && (0.0..=n - 1.0).contains(&p[1]);
        let mut end = nodes[from];
        loop {
            let next = [end[0] + a.cos(), end[1] + a.sin()];
            if !inside(next) {
                break;
            }
            end = next;
        }
        nodes.push(end);
        let to = nodes.len() - 1;
        edges.push((from, to, straight(nodes[from], end)));
    }
    RoadGraph { nodes, edges }
}

/// Jittered lattice with some edges removed, some diagonals added and bent
/// edges, keeping the network connected and every junction of degree ≥ 2.
fn irregular_roads(n: f64, rng: &mut ChaCha8Rng) -> RoadGraph {
    let spacing = 46.0;
    let m = ((n - 16.0) / spacing).floor() as usize + 1;
    let offset = (n - spacing * (m - 1) as f64) / 2.0;
    let idx = |i: usize, j: usize| j * m + i;
    let mut nodes = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-11.0..11.0);
            nodes.push([
                (offset + spacing * i as f64 + jitter(rng)).clamp(4.0, n - 5.0),
                (offset + spacing * j as f64 + jitter(rng)).clamp(4.0, n - 5.0),
            ]);
        }
    }
    let mut pairs = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if i + 1 < m {
                pairs.push((idx(i, j), idx(i + 1, j)));
            }
            if j + 1 < m {
                pairs.push((idx(i, j), idx(i, j + 1)));
            }
            if i + 1 < m && j + 1 < m && rng.gen_bool(0.2) {
                if rng.gen_bool(0.5) {
                    pairs.push((idx(i, j), idx(i + 1, j + 1)));
                } else {
                    pairs.push((idx(i + 1, j), idx(i, j + 1)));
                }
            }
        }
    }
    let graph = RoadGraph {
        nodes,
        edges: pairs.iter().map(|&(a, b)| (a, b, Vec::new())).collect(),
    };
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.shuffle(rng);
    let target = graph.edges.len() / 4;
    let mut alive = vec![true; graph.edges.len()];
    let subgraph = |alive: &[bool]| RoadGraph {
        nodes: graph.nodes.clone(),
        edges: graph.edges.iter().zip(alive).filter(|(_, &a)| a).map(|(e, _)| e.clone()).collect(),
    };
    let mut removed = 0;
    for e in order {
        if removed == target {
            break;
        }
        alive[e] = false;
        let trial = subgraph(&alive);
        let inc = trial.incidence();
        let (a, b, _) = graph.edges[e];
        if inc[a].len() < 2 || inc[b].len() < 2 || !trial.is_connected() {
            alive[e] = true;
        } else {
            removed += 1;
        }
    }
    let mut graph = subgraph(&alive);
    for (a, b, line) in graph.edges.iter_mut() {
        let (pa, pb) = (graph.nodes[*a], graph.nodes[*b]);
        *line = if rng.gen_bool(0.35) {
            let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
            let len = dx.hypot(dy);
            let bend = rng.gen_range(-0.18..0.18) * len;
            let mid = [
                (pa[0] + pb[0]) / 2.0 - dy / len * bend,
                (pa[1] + pb[1]) / 2.0 + dx / len * bend,
            ];
            vec![pa, [mid[0].clamp(4.0, n - 5.0), mid[1].clamp(4.0, n - 5.0)], pb]
        } else {
            straight(pa, pb)
        };
    }
    graph
}

/// Rectangles set back from the roads on both sides.
fn place_buildings(canvas: &mut Canvas, roads: &RoadGraph, density: f64, rng: &mut ChaCha8Rng) {
    if density <= 0.0 {
        return;
    }
    for (_, _, line) in &roads.edges {
        for w in line.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len < 1.0 {
                continue;
            }
            let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            let normal = [-dir[1], dir[0]];
            for side in [-1.0, 1.0] {
                let mut t = rng.gen_range(4.0..10.0);
                while t < len - 6.0 {
                    let half_len = rng.gen_range(3.0..8.0);
                    if rng.gen_bool(density) && t + half_len < len - 4.0 {
                        let half_depth = rng.gen_range(3.0..7.0);
                        let setback = ROAD_HALF_WIDTH + rng.gen_range(2.0..4.0) + half_depth;
                        let c = [
                            a[0] + dir[0] * (t + half_len) + side * normal[0] * setback,
                            a[1] + dir[1] * (t + half_len) + side * normal[1] * setback,
                        ];
                        canvas.paint_rect(c, dir, half_len, half_depth, BUILDING);
                    }
                    t += 2.0 * half_len + rng.gen_range(3.0..8.0);
                }
            }
        }
    }
}

fn place_vegetation(canvas: &mut Canvas, density: f64, rng: &mut ChaCha8Rng) {
    if density <= 0.0 {
        return;
    }
    let n = canvas.size as f64;
    let blobs = (density * n * n / 220.0).round() as usize;
    for _ in 0..blobs {
        let c = [rng.gen_range(0.0..n), rng.gen_range(0.0..n)];
        // a few overlapping discs per blob
        for _ in 0..rng.gen_range(1..4) {
            let o = [c[0] + rng.gen_range(-3.0..3.0), c[1] + rng.gen_range(-3.0..3.0)];
            canvas.paint_disc(o, rng.gen_range(1.5..4.5), VEGETATION);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road_components(map: &SemanticMap) -> usize {
        let (w, h) = (map.width(), map.height());
        let mut seen = vec![false; w * h];
        let mut count = 0;
        for start in 0..w * h {
            if seen[start] || map.cells()[start] != ROAD {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut push = |j: usize| {
                    if !seen[j] && map.cells()[j] == ROAD {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - w);
                }
                if y + 1 < h {
                    push(i + w);
                }
            }
        }
        count
    }

    #[test]
    fn bare_world_has_roads_and_terrain_only() {
        for style in [RoadStyle::Grid, RoadStyle::Radial, RoadStyle::Irregular] {
            let spec = WorldSpec { building_density: 0.0, tree_density: 0.0, road_graph_style: style, ..Default::default() };
            let counts = generate_world(&spec).unwrap().map.class_counts();
            assert_eq!(counts[VEGETATION as usize], 0);
            assert_eq!(counts[BUILDING as usize], 0);
            assert!(counts[ROAD as usize] > 0 && counts[TERRAIN as usize] > 0);
        }
    }

    #[test]
    fn seeded_worlds_repeat() {
        let spec = WorldSpec { seed: 42, ..Default::default() };
        assert_eq!(generate_world(&spec).unwrap(), generate_world(&spec).unwrap());
        let other = WorldSpec { seed: 43, ..Default::default() };
        assert_ne!(generate_world(&spec).unwrap().map, generate_world(&other).unwrap().map);
    }

    #[test]
    fn roads_are_connected_and_plentiful() {
        for seed in 0..6 {
            for style in [RoadStyle::Grid, RoadStyle::Radial, RoadStyle::Irregular] {
                let spec = WorldSpec { seed, road_graph_style: style, ..Default::default() };
                let w = generate_world(&spec).unwrap();
                assert!(w.roads.is_connected(), "{style:?} seed {seed}");
                assert_eq!(road_components(&w.map), 1, "{style:?} seed {seed}");
                let frac = w.map.class_counts()[ROAD as usize] as f64 / (256.0 * 256.0);
                assert!(frac >= 0.05, "{style:?} seed {seed}: {frac}");
            }
        }
    }

    #[test]
    fn irregular_junctions_have_degree_two() {
        for seed in 0..5 {
            let w = generate_world(&WorldSpec { seed, ..Default::default() }).unwrap();
            for inc in w.roads.incidence() {
                assert!(inc.is_empty() || inc.len() >= 2);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(WorldSpec { size: 32, ..Default::default() }.validate().is_err());
        assert!(WorldSpec { scale_true: 11.0, ..Default::default() }.validate().is_err());
        assert!(WorldSpec { tree_density: 1.5, ..Default::default() }.validate().is_err());
    }
}
