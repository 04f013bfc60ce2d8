//! Drifting odometry around a square loop, corrected by sparse absolute
//! priors in the pose graph.
//!
//! cargo run --release --example drift_correction

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use semloc::geometry::Se2;
use semloc::georef::PoseGraph;
use semloc::mcl::{project_se3, OdometryDelta};
use semloc::sim::{perturb_odometry, NoiseSpec};

fn main() -> semloc::Result<()> {
    // 1 m steps along a 250 m square
    let mut truth = vec![Se2::IDENTITY];
    for side in 0..4 {
        for _ in 0..250 {
            let p = *truth.last().unwrap();
            truth.push(p.compose(&Se2::new(1.0, 0.0, 0.0)));
        }
        if side < 3 {
            let p = truth.pop().unwrap();
            truth.push(Se2::new(p.x, p.y, p.theta + std::f64::consts::FRAC_PI_2));
        }
    }
    let stamps: Vec<f64> = (0..truth.len()).map(|i| i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = NoiseSpec { odom_noise: [0.03, 0.03, 0.004], ..Default::default() };
    let odo = perturb_odometry(&truth, &stamps, &noise, &mut rng);

    let info = Matrix3::from_diagonal(&Vector3::new(1.0 / 0.03f64.powi(2), 1.0 / 0.03f64.powi(2), 1.0 / 0.004f64.powi(2)));
    let mut g = PoseGraph::new();
    g.add_node_with_odom(Se2::IDENTITY, info, 0.0)?;
    for f in &odo {
        g.add_node_with_odom(project_se3(&OdometryDelta::new(f.transform))?, info, f.timestamp)?;
    }
    let dead = g.dead_reckoning();

    let prior_info = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 400.0));
    let end = truth.len() - 1;
    for k in (0..end).step_by(50) {
        let t = truth[k];
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        g.add_prior(k, Se2::new(t.x + n(), t.y + n(), t.theta + 0.05 * n()), prior_info)?;
    }
    let report = g.optimize(50, 1e-10);

    let err = |p: &Se2| (p.x - truth[end].x).hypot(p.y - truth[end].y);
    println!("{} nodes, {} priors, {} iterations", g.len(), g.priors().len(), report.iterations);
    println!("cost {:.1} -> {:.1}", report.costs[0], report.final_cost());
    println!("endpoint error: dead reckoning {:.2} m, optimized {:.2} m", err(&dead[end]), err(&g.nodes()[end].pose));
    Ok(())
}
