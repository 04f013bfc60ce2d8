//! Scores one synthetic scan at the true pose and at perturbed poses, with
//! the dense polar path and the sparse per-particle path.
//!
//! cargo run --release --example polar_scoring

use semloc::geometry::Se2;
use semloc::polar::{rasterize_scan, render_local_tdf, score, PreparedScan};
use semloc::scan::SemanticScan;
use semloc::semantic_map::{build_tdf, ClassSet};
use semloc::sim::{simulate, NoiseSpec, ScenarioSpec, WorldSpec};

fn main() -> semloc::Result<()> {
    let spec = ScenarioSpec {
        world: WorldSpec { seed: 4, scale_true: 3.0, ..Default::default() },
        noise: NoiseSpec { label_flip_prob: 0.1, point_dropout_prob: 0.3, ..Default::default() },
        length_m: 20.0,
        ..Default::default()
    };
    let sc = simulate(&spec)?;
    let classes = ClassSet::portable();
    let tdf = build_tdf(&sc.world.map, &classes, 50.0)?;
    let s = spec.world.scale_true;
    let i = sc.scans.len() / 2;
    let scan = SemanticScan::from_frame(&sc.scans[i], &classes);
    let hist = rasterize_scan(&scan, &spec.grid, &classes);
    let prepared = PreparedScan::new(&hist);
    let alpha = [1.0; 4];
    println!("{} points in {} occupied bins", hist.total_points, prepared.n_occupied());

    let g = sc.ground_truth[i];
    let probes = [
        ("true pose", g, s),
        ("2 m east", Se2::new(g.x + 2.0, g.y, g.theta), s),
        ("10 m north", Se2::new(g.x, g.y + 10.0, g.theta), s),
        ("rotated 20 deg", Se2::new(g.x, g.y, g.theta + 20f64.to_radians()), s),
        ("scale x1.2", Se2::new(g.x / 1.2, g.y / 1.2, g.theta), s * 1.2),
    ];
    println!("{:<16}{:>12}{:>12}", "probe", "dense", "sparse");
    for (name, pose, scale) in probes {
        let dense = score(&hist, &render_local_tdf(&tdf, &pose, scale, &spec.grid), &alpha)?;
        let sparse = prepared.cost_at(&tdf, &pose, scale, &alpha);
        println!("{name:<16}{dense:>12.1}{sparse:>12.1}");
    }
    Ok(())
}
