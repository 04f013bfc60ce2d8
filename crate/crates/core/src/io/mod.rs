//! On-disk formats: run configs, scan and odometry streams, result logs and
//! trajectories. Numbers are written with Rust's shortest round-trip
//! formatting so every writer/reader pair is lossless.

mod config;
mod scans;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Se2, Se3};
use crate::georef::{GraphNode, GraphSummary};
use crate::mcl::PosteriorEstimate;

pub use config::{load_config, parse_config, save_config, GraphConfig, OutputPaths, RunConfig, ScanFormat};
pub use scans::{
    open_portable_scans, write_scan_frame, write_scan_stream, KittiScanReader, PortableScanReader, SCAN_MAGIC,
    SCAN_VERSION,
};

/// Odometry rotations farther than this from orthonormal are rejected.
pub const ODOM_ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomFrame {
    pub timestamp: f64,
    pub transform: Se3,
}

fn parse_floats(line: &str, n: usize, ctx: &dyn Fn() -> String) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::format(ctx(), format!("not a number: {s:?}"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::format(ctx(), format!("expected {n} values, found {}", v.len())));
    }
    Ok(v)
}

/// Parses one odometry line: timestamp then a row-major 3×4 `[R|t]`.
/// Rotations within [`ODOM_ORTHONORMAL_TOL`] of orthonormal are projected
/// back onto SO(3); others, and reflections, are rejected.
pub fn parse_odometry_line(line: &str, context: &str) -> Result<OdomFrame> {
    let ctx = || context.to_string();
    let v = parse_floats(line, 13, &ctx)?;
    let m: [f64; 12] = v[1..].try_into().unwrap();
    let t = Se3::from_rows_3x4(&m);
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::format(ctx(), "non-finite value"));
    }
    if t.rotation.determinant() <= 0.0 {
        return Err(Error::format(ctx(), "rotation has non-positive determinant"));
    }
    if t.orthonormality_error() > ODOM_ORTHONORMAL_TOL {
        return Err(Error::format(
            ctx(),
            format!("rotation is {:.3e} from orthonormal", t.orthonormality_error()),
        ));
    }
    // round-off level errors are kept verbatim so text round-trips exactly
    let transform = if t.orthonormality_error() > 1e-12 { t.orthonormalized() } else { t };
    Ok(OdomFrame { timestamp: v[0], transform })
}

/// Streaming odometry reader; blank lines and `#` comments are skipped.
pub struct OdometryReader<R> {
    lines: std::io::Lines<R>,
    context: String,
    line_no: usize,
}

impl<R: BufRead> OdometryReader<R> {
    pub fn new(input: R, context: impl Into<String>) -> Self {
        OdometryReader { lines: input.lines(), context: context.into(), line_no: 0 }
    }
}

impl<R: BufRead> Iterator for OdometryReader<R> {
    type Item = Result<OdomFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let ctx = format!("{} line {}", self.context, self.line_no);
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::format(ctx, e.to_string()))),
            };
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Some(parse_odometry_line(t, &ctx));
        }
    }
}

pub fn open_odometry(path: &Path) -> Result<OdometryReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(OdometryReader::new(BufReader::new(f), path.display().to_string()))
}

pub fn format_odometry_line(frame: &OdomFrame) -> String {
    let mut s = frame.timestamp.to_string();
    for v in frame.transform.to_rows_3x4() {
        s.push(' ');
        s.push_str(&v.to_string());
    }
    s
}

pub fn write_odometry(path: &Path, frames: &[OdomFrame]) -> Result<()> {
    let mut out = create(path)?;
    for f in frames {
        writeln!(out, "{}", format_odometry_line(f)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != header {
                return Err(Error::format(path.display().to_string(), format!("expected header {header:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.split(',').count() {
            return Err(Error::format(format!("{} line {}", path.display(), i + 1), "wrong number of fields"));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(format!("{} line {line}", path.display()), format!("cannot parse {s:?}")))
}

pub const RESULT_LOG_HEADER: &str = "t,x,y,theta,scale,cov_xx,cov_xy,cov_yy,converged,err_m";

/// One row of a result log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub scale: f64,
    pub cov: [f64; 3],
    pub converged: bool,
    pub err_m: Option<f64>,
}

impl ResultRow {
    /// The error is measured on the map, in pixels, and reported in true
    /// meters, so a wrong scale estimate does not hide or inflate it.
    pub fn from_estimate(t: f64, est: &PosteriorEstimate, truth: Option<&TruthRow>) -> Self {
        ResultRow {
            t,
            x: est.pose.x,
            y: est.pose.y,
            theta: est.pose.theta,
            scale: est.scale_mean,
            cov: [est.position_cov[0][0], est.position_cov[0][1], est.position_cov[1][1]],
            converged: est.converged,
            err_m: truth.map(|g| {
                let (qx, qy) = (est.pose.x * est.scale_mean, est.pose.y * est.scale_mean);
                (qx - g.pose.x * g.scale).hypot(qy - g.pose.y * g.scale) / g.scale
            }),
        }
    }

    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.x,
            self.y,
            self.theta,
            self.scale,
            self.cov[0],
            self.cov[1],
            self.cov[2],
            self.converged as u8,
            self.err_m.map(|e| e.to_string()).unwrap_or_default()
        )
    }
}

/// CSV result log, flushed after every row.
pub struct ResultLogWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl ResultLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = create(path)?;
        writeln!(out, "{RESULT_LOG_HEADER}").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))?;
        Ok(ResultLogWriter { out, path: path.to_path_buf() })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_result_log(path: &Path) -> Result<Vec<ResultRow>> {
    csv_rows(path, RESULT_LOG_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize| field::<f64>(path, line, &f[i]);
            Ok(ResultRow {
                t: num(0)?,
                x: num(1)?,
                y: num(2)?,
                theta: num(3)?,
                scale: num(4)?,
                cov: [num(5)?, num(6)?, num(7)?],
                converged: match f[8].as_str() {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => return Err(Error::format(format!("{} line {line}", path.display()), format!("bad flag {other:?}"))),
                },
                err_m: if f[9].is_empty() { None } else { Some(num(9)?) },
            })
        })
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "node_id,timestamp,x_m,y_m,theta_rad";

pub fn write_trajectory(path: &Path, nodes: &[GraphNode]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{TRAJECTORY_HEADER}").map_err(io)?;
    for n in nodes {
        writeln!(out, "{},{},{},{},{}", n.id, n.timestamp, n.pose.x, n.pose.y, n.pose.theta).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<GraphNode>> {
    csv_rows(path, TRAJECTORY_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize| field::<f64>(path, line, &f[i]);
            Ok(GraphNode {
                id: field(path, line, &f[0])?,
                timestamp: num(1)?,
                // fields are written from wrapped angles, keep them verbatim
                pose: Se2 { x: num(2)?, y: num(3)?, theta: num(4)? },
            })
        })
        .collect()
}

pub fn write_graph_summary(path: &Path, summary: &GraphSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const GROUND_TRUTH_HEADER: &str = "t,x_m,y_m,theta_rad,scale_px_per_m";

/// Ground-truth pose with the true map scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t: f64,
    pub pose: Se2,
    pub scale: f64,
}

pub fn write_ground_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{GROUND_TRUTH_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.t, r.pose.x, r.pose.y, r.pose.theta, r.scale).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<TruthRow>> {
    csv_rows(path, GROUND_TRUTH_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let num = |i: usize| field::<f64>(path, line, &f[i]);
            Ok(TruthRow {
                t: num(0)?,
                pose: Se2 { x: num(1)?, y: num(2)?, theta: num(3)? },
                scale: num(4)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
