//! Writes a synthetic run directory (map bundle, scans, odometry, ground
//! truth, run config) and localizes from it through the on-disk pipeline.
//!
//! cargo run --release --example simulate_bundle [out_dir]

use semloc::cli::{sim_files, write_scenario};
use semloc::pipeline::{run_localize, LocalizeOptions};
use semloc::sim::{NoiseSpec, ScenarioSpec, WorldSpec};

fn main() -> semloc::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("semloc_run"));
    let spec = ScenarioSpec {
        world: WorldSpec { seed: 21, size: 128, scale_true: 2.5, ..Default::default() },
        noise: NoiseSpec { label_flip_prob: 0.1, point_dropout_prob: 0.3, odom_noise: [0.02; 3], ..Default::default() },
        length_m: 40.0,
        ..Default::default()
    };
    let (mut cfg, sc) = write_scenario(&spec, &out)?;
    println!("wrote {} frames to {}", sc.scans.len(), out.display());
    for f in [sim_files::MAP, sim_files::SCANS, sim_files::ODOMETRY, sim_files::GROUND_TRUTH, sim_files::CONFIG] {
        let len = std::fs::metadata(out.join(f)).map(|m| m.len()).unwrap_or(0);
        println!("  {f:<18}{len:>10} bytes");
    }

    cfg.filter.n_max = 3000;
    cfg.filter.n_min = 300;
    let summary = run_localize(&cfg, &LocalizeOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}
