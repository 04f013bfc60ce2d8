//! Scores a result log against ground truth: convergence time, windowed
//! error, the 10 m rule and the scale ratio.
//!
//! cargo run --release --example evaluate_log [result.csv ground_truth.csv]

use semloc::evaluate::{evaluate, EvalOptions};
use semloc::geometry::Se2;
use semloc::io::{read_ground_truth, read_result_log, ResultRow, TruthRow};

fn main() -> semloc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (rows, truth) = if let [log, gt] = &args[..] {
        (read_result_log(log.as_ref())?, read_ground_truth(gt.as_ref())?)
    } else {
        // a filter that converges after 3 s onto a 3 m offset, at 2% scale error
        let truth: Vec<TruthRow> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.1;
                TruthRow { t, pose: Se2::new(0.5 * i as f64, 0.0, 0.0), scale: 2.0 }
            })
            .collect();
        let rows = truth
            .iter()
            .map(|g| {
                let converged = g.t >= 3.0;
                let off = if converged { 3.0 } else { 40.0 };
                let s = 2.04;
                ResultRow {
                    t: g.t,
                    // positions are stored at the estimated scale
                    x: g.pose.x * g.scale / s,
                    y: (g.pose.y + off) * g.scale / s,
                    theta: 0.0,
                    scale: s,
                    cov: [1.0, 0.0, 1.0],
                    converged,
                    err_m: None,
                }
            })
            .collect();
        (rows, truth)
    };
    for window_s in [5.0, 20.0] {
        let r = evaluate(&rows, &truth, &EvalOptions { window_s, ..Default::default() })?;
        println!("window {window_s} s:");
        println!("{}", serde_json::to_string_pretty(&r).unwrap());
    }
    Ok(())
}
