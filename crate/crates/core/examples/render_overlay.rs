//! Draws a ground-truth trajectory over its class map and writes a PNG.
//!
//! cargo run --release --example render_overlay [out.png]

use semloc::render::{render_overlay, write_png};
use semloc::sim::{simulate, ScenarioSpec, WorldSpec};

fn main() -> semloc::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("semloc_overlay.png"));
    let spec = ScenarioSpec { world: WorldSpec { seed: 9, scale_true: 2.0, ..Default::default() }, length_m: 300.0, ..Default::default() };
    let sc = simulate(&spec)?;
    let map = &sc.world.map;
    let path: Vec<[f64; 2]> =
        sc.ground_truth.iter().map(|p| map.meters_to_px([p.x, p.y], spec.world.scale_true)).collect();
    let (img, summary) = render_overlay(map, &path);
    write_png(&out, &img)?;
    println!("{} poses over a {}x{} map -> {}", summary.n_poses, summary.width, summary.height, out.display());
    Ok(())
}
