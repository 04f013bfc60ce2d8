//! Scoring of result logs against ground truth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{ResultRow, TruthRow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Length of the post-convergence window, seconds.
    pub window_s: f64,
    /// Correct convergence needs the window's mean error below this, meters.
    pub threshold_m: f64,
    /// Timestamps closer than this are taken to be the same frame.
    pub time_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { window_s: 20.0, threshold_m: 10.0, time_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub converged: bool,
    pub convergence_time_s: Option<f64>,
    pub mean_err_window_m: Option<f64>,
    pub mean_err_after_conv_m: Option<f64>,
    /// The same errors in map pixels, using the true scale.
    pub mean_err_window_px: Option<f64>,
    pub mean_err_after_conv_px: Option<f64>,
    pub correct: bool,
    /// Final scale estimate over the true scale.
    pub scale_ratio: Option<f64>,
    pub window_s: f64,
    pub threshold_m: f64,
    pub n_rows: usize,
    pub n_matched: usize,
}

/// Error of every row in true meters, with the true scale at that time.
/// Rows are matched to ground truth by timestamp; unmatched rows fall back
/// to the error stored in the log.
fn row_errors(rows: &[ResultRow], truth: &[TruthRow], tol: f64) -> Vec<Option<(f64, Option<f64>)>> {
    rows.iter()
        .map(|r| {
            let i = truth.partition_point(|g| g.t < r.t - tol);
            match truth.get(i).filter(|g| (g.t - r.t).abs() <= tol) {
                Some(g) => {
                    let (qx, qy) = (r.x * r.scale, r.y * r.scale);
                    let e = (qx - g.pose.x * g.scale).hypot(qy - g.pose.y * g.scale) / g.scale;
                    Some((e, Some(g.scale)))
                }
                None => r.err_m.map(|e| (e, None)),
            }
        })
        .collect()
}

pub fn evaluate(rows: &[ResultRow], truth: &[TruthRow], opts: &EvalOptions) -> Result<EvalReport> {
    if !(opts.window_s > 0.0) || !(opts.threshold_m > 0.0) {
        return Err(Error::Config("window_s and threshold_m must be positive".into()));
    }
    if rows.windows(2).any(|w| !(w[1].t >= w[0].t)) {
        return Err(Error::Contract("result log timestamps must not decrease".into()));
    }
    let errors = row_errors(rows, truth, opts.time_tol);
    let n_matched = errors.iter().filter(|e| matches!(e, Some((_, Some(_))))).count();
    let mut report = EvalReport {
        converged: false,
        convergence_time_s: None,
        mean_err_window_m: None,
        mean_err_after_conv_m: None,
        mean_err_window_px: None,
        mean_err_after_conv_px: None,
        correct: false,
        scale_ratio: None,
        window_s: opts.window_s,
        threshold_m: opts.threshold_m,
        n_rows: rows.len(),
        n_matched,
    };
    let Some(c) = rows.iter().position(|r| r.converged) else {
        return Ok(report);
    };
    let t_conv = rows[c].t;
    report.converged = true;
    report.convergence_time_s = Some(t_conv - rows[0].t);

    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    let after = || errors[c..].iter().zip(&rows[c..]);
    let in_window = |r: &&ResultRow| r.t < t_conv + opts.window_s;
    report.mean_err_after_conv_m = mean(&mut after().filter_map(|(e, _)| e.map(|e| e.0)));
    report.mean_err_window_m =
        mean(&mut after().filter(|(_, r)| in_window(r)).filter_map(|(e, _)| e.map(|e| e.0)));
    let px = |e: &Option<(f64, Option<f64>)>| e.and_then(|(e, s)| s.map(|s| e * s));
    report.mean_err_after_conv_px = mean(&mut after().filter_map(|(e, _)| px(e)));
    report.mean_err_window_px = mean(&mut after().filter(|(_, r)| in_window(r)).filter_map(|(e, _)| px(e)));
    report.correct = report.mean_err_window_m.is_some_and(|e| e < opts.threshold_m);

    let last = rows.last().unwrap();
    let s_true = errors.last().unwrap().and_then(|e| e.1).or_else(|| truth.last().map(|g| g.scale));
    report.scale_ratio = s_true.map(|s| last.scale / s);
    Ok(report)
}
