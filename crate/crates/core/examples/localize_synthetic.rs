//! Global localization with unknown scale on a synthetic world, frame by
//! frame through the filter and pose graph.
//!
//! cargo run --release --example localize_synthetic [seed]

use semloc::evaluate::{evaluate, EvalOptions};
use semloc::io::{GraphConfig, ResultRow, TruthRow};
use semloc::mcl::{FilterConfig, OdometryDelta};
use semloc::pipeline::Localizer;
use semloc::scan::SemanticScan;
use semloc::semantic_map::{build_tdf, ClassSet};
use semloc::sim::{simulate, NoiseSpec, ScenarioSpec, WorldSpec};

fn main() -> semloc::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let spec = ScenarioSpec {
        world: WorldSpec { seed, scale_true: 4.2, ..Default::default() },
        noise: NoiseSpec { label_flip_prob: 0.1, point_dropout_prob: 0.3, odom_noise: [0.02; 3], ..Default::default() },
        length_m: 150.0,
        ..Default::default()
    };
    let sc = simulate(&spec)?;
    let classes = ClassSet::portable();
    let tdf = build_tdf(&sc.world.map, &classes, 50.0)?;
    let cfg = FilterConfig { n_min: 300, k_s: 19, ..Default::default() };
    let mut loc = Localizer::new(&sc.world.map, &tdf, classes.clone(), spec.grid, cfg, GraphConfig::default())?;

    let s_true = spec.world.scale_true;
    let truth: Vec<TruthRow> =
        sc.timestamps.iter().zip(&sc.ground_truth).map(|(&t, &pose)| TruthRow { t, pose, scale: s_true }).collect();
    let mut rows = Vec::new();
    for (i, frame) in sc.scans.iter().enumerate() {
        let scan = SemanticScan::from_frame(frame, &classes);
        let est = loc.process(frame.timestamp, &OdometryDelta::new(sc.odometry[i].transform), &scan)?;
        let row = ResultRow::from_estimate(frame.timestamp, &est, Some(&truth[i]));
        if i % 25 == 0 {
            println!(
                "t {:5.1}  n {:5}  scale {:5.2}  err {:6.1} m  {}",
                row.t,
                est.n_particles,
                est.scale_mean,
                row.err_m.unwrap(),
                if est.converged { "converged" } else { "" }
            );
        }
        rows.push(row);
    }
    let report = evaluate(&rows, &truth, &EvalOptions::default())?;
    let (graph, opt) = loc.finish()?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("graph: {} nodes, {} priors, cost {:.3}", graph.len(), graph.priors().len(), opt.final_cost());
    Ok(())
}
