//! SE(2) pose graph anchoring an odometry chain to the global map.
//!
//! Nodes are linked by sequential odometry factors; prior factors pin single
//! nodes to globally referenced poses (typically the converged filter
//! estimate). Because every odometry factor joins consecutive nodes, the
//! normal matrix is block tridiagonal and is solved directly.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Se2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub pose: Se2,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomFactor {
    pub from: usize,
    pub to: usize,
    pub delta: Se2,
    pub information: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorFactor {
    pub node: usize,
    pub pose: Se2,
    pub information: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_nodes: usize,
    pub n_priors: usize,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub converged: bool,
    pub iterations: usize,
    /// Cost before the first iteration followed by the cost after every
    /// accepted step.
    pub costs: Vec<f64>,
}

impl OptimizeReport {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    nodes: Vec<GraphNode>,
    odom: Vec<OdomFactor>,
    priors: Vec<PriorFactor>,
}

fn check_spd(m: &Matrix3<f64>, what: &str) -> Result<()> {
    let sym = (m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1.0);
    if !m.iter().all(|v| v.is_finite()) || !sym || m.cholesky().is_none() {
        return Err(Error::Contract(format!("{what} information matrix is not symmetric positive definite")));
    }
    Ok(())
}

fn rot_t(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Residual of an odometry factor, `t2v(Z⁻¹ · Xi⁻¹ · Xj)`, and its Jacobians
/// with respect to `xi` and `xj` as `(x, y, theta)`.
pub fn odom_residual(xi: &Se2, xj: &Se2, z: &Se2) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let rz_t = rot_t(z.theta);
    let ri_t = rot_t(xi.theta);
    let (s, c) = xi.theta.sin_cos();
    let dri_t = Matrix2::new(-s, c, -c, -s);
    let dt = Vector2::new(xj.x - xi.x, xj.y - xi.y);
    let et = rz_t * (ri_t * dt - Vector2::new(z.x, z.y));
    let e = Vector3::new(et[0], et[1], wrap_angle(xj.theta - xi.theta - z.theta));

    let a = rz_t * ri_t;
    let b = rz_t * dri_t * dt;
    let mut ji = Matrix3::zeros();
    let mut jj = Matrix3::zeros();
    ji.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-a));
    ji[(0, 2)] = b[0];
    ji[(1, 2)] = b[1];
    ji[(2, 2)] = -1.0;
    jj.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
    jj[(2, 2)] = 1.0;
    (e, ji, jj)
}

/// Residual of a prior factor: translation error in the prior's frame and
/// wrapped heading difference. Returns the residual and its Jacobian.
pub fn prior_residual(x: &Se2, prior: &Se2) -> (Vector3<f64>, Matrix3<f64>) {
    let rp_t = rot_t(prior.theta);
    let et = rp_t * Vector2::new(x.x - prior.x, x.y - prior.y);
    let e = Vector3::new(et[0], et[1], wrap_angle(x.theta - prior.theta));
    let mut j = Matrix3::zeros();
    j.fixed_view_mut::<2, 2>(0, 0).copy_from(&rp_t);
    j[(2, 2)] = 1.0;
    (e, j)
}

/// Prior information from a filter posterior: the inverse position
/// covariance and `heading_weight / heading_var`. Covariance eigenvalues are
/// floored at `floor` before inversion.
pub fn prior_information(position_cov: [[f64; 2]; 2], heading_var: f64, heading_weight: f64, floor: f64) -> Matrix3<f64> {
    let cov = Matrix2::new(position_cov[0][0], position_cov[0][1], position_cov[1][0], position_cov[1][1]);
    let eig = cov.symmetric_eigen();
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let inv = eig.eigenvectors * Matrix2::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let mut info = Matrix3::zeros();
    info.fixed_view_mut::<2, 2>(0, 0).copy_from(&inv);
    info[(2, 2)] = heading_weight / heading_var.max(floor);
    // keep it SPD even with a zero heading weight
    info[(2, 2)] = info[(2, 2)].max(floor);
    info
}

/// Solves `A x = b` for symmetric block-tridiagonal `A` with diagonal blocks
/// `diag` and super-diagonal blocks `upper` (`upper[i]` couples `i` and
/// `i + 1`). Returns `None` if `A` is not positive definite.
fn solve_block_tridiagonal(diag: &[Matrix3<f64>], upper: &[Matrix3<f64>], b: &[Vector3<f64>]) -> Option<Vec<Vector3<f64>>> {
    let n = diag.len();
    let mut schur: Vec<nalgebra::Cholesky<f64, nalgebra::U3>> = Vec::with_capacity(n);
    let mut y: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (d, r) = if i == 0 {
            (diag[0], b[0])
        } else {
            let u = &upper[i - 1];
            let prev = &schur[i - 1];
            (diag[i] - u.transpose() * prev.solve(u), b[i] - u.transpose() * prev.solve(&y[i - 1]))
        };
        schur.push(d.cholesky()?);
        y.push(r);
    }
    let mut x = vec![Vector3::zeros(); n];
    for i in (0..n).rev() {
        let r = if i + 1 < n { y[i] - upper[i] * x[i + 1] } else { y[i] };
        x[i] = schur[i].solve(&r);
    }
    if x.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        Some(x)
    } else {
        None
    }
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn odom_factors(&self) -> &[OdomFactor] {
        &self.odom
    }

    pub fn priors(&self) -> &[PriorFactor] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node at `last ⊕ delta` linked by an odometry factor. The
    /// first node is placed at the identity (or at the global frame once a
    /// prior exists) and carries no factor, so `delta` is unused for it.
    pub fn add_node_with_odom(&mut self, delta: Se2, information: Matrix3<f64>, timestamp: f64) -> Result<usize> {
        let id = self.nodes.len();
        if let Some(last) = self.nodes.last() {
            check_spd(&information, "odometry")?;
            if !(timestamp > last.timestamp) {
                return Err(Error::Contract(format!(
                    "node timestamps must increase ({timestamp} after {})",
                    last.timestamp
                )));
            }
            let pose = last.pose.compose(&delta);
            self.odom.push(OdomFactor { from: id - 1, to: id, delta, information });
            self.nodes.push(GraphNode { id, pose, timestamp });
        } else {
            self.nodes.push(GraphNode { id, pose: Se2::IDENTITY, timestamp });
        }
        Ok(id)
    }

    /// Records a global prior on `node`. The first prior also moves the whole
    /// chain rigidly so that `node` sits on the prior, which gives the solver
    /// a starting point in the global frame.
    pub fn add_prior(&mut self, node: usize, pose: Se2, information: Matrix3<f64>) -> Result<()> {
        let anchor = self.nodes.get(node).ok_or(Error::UnknownNode(node))?.pose;
        check_spd(&information, "prior")?;
        if self.priors.is_empty() {
            let t = pose.compose(&anchor.inverse());
            for n in &mut self.nodes {
                n.pose = t.compose(&n.pose);
            }
        }
        self.priors.push(PriorFactor { node, pose, information });
        Ok(())
    }

    /// Sum of squared Mahalanobis residuals over all factors.
    pub fn cost(&self) -> f64 {
        self.cost_of(&self.nodes)
    }

    fn cost_of(&self, nodes: &[GraphNode]) -> f64 {
        let odom: f64 = self
            .odom
            .iter()
            .map(|f| {
                let (e, _, _) = odom_residual(&nodes[f.from].pose, &nodes[f.to].pose, &f.delta);
                (e.transpose() * f.information * e)[0]
            })
            .sum();
        let prior: f64 = self
            .priors
            .iter()
            .map(|p| {
                let (e, _) = prior_residual(&nodes[p.node].pose, &p.pose);
                (e.transpose() * p.information * e)[0]
            })
            .sum();
        odom + prior
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            n_nodes: self.nodes.len(),
            n_priors: self.priors.len(),
            final_cost: self.cost(),
        }
    }

    /// Builds the Gauss-Newton system over nodes `first..`.
    fn normal_equations(&self, first: usize) -> (Vec<Matrix3<f64>>, Vec<Matrix3<f64>>, Vec<Vector3<f64>>) {
        let n = self.nodes.len() - first;
        let mut diag = vec![Matrix3::zeros(); n];
        let mut upper = vec![Matrix3::zeros(); n.saturating_sub(1)];
        let mut rhs = vec![Vector3::zeros(); n];
        let slot = |id: usize| id.checked_sub(first);
        for f in &self.odom {
            let (e, ji, jj) = odom_residual(&self.nodes[f.from].pose, &self.nodes[f.to].pose, &f.delta);
            let om = &f.information;
            let (a, b) = (slot(f.from), slot(f.to));
            if let Some(a) = a {
                diag[a] += ji.transpose() * om * ji;
                rhs[a] -= ji.transpose() * om * e;
            }
            if let Some(b) = b {
                diag[b] += jj.transpose() * om * jj;
                rhs[b] -= jj.transpose() * om * e;
            }
            if let Some(a) = a {
                upper[a] += ji.transpose() * om * jj;
            }
        }
        for p in &self.priors {
            if let Some(a) = slot(p.node) {
                let (e, j) = prior_residual(&self.nodes[p.node].pose, &p.pose);
                diag[a] += j.transpose() * p.information * j;
                rhs[a] -= j.transpose() * p.information * e;
            }
        }
        (diag, upper, rhs)
    }

    /// Gauss-Newton with a Levenberg fallback. Steps that would raise the
    /// cost are rejected and retried with a larger damping, so the cost
    /// history is non-increasing. Stops once the step norm drops below `tol`.
    pub fn optimize(&mut self, max_iters: usize, tol: f64) -> OptimizeReport {
        let mut costs = vec![self.cost()];
        if self.nodes.is_empty() {
            return OptimizeReport { converged: true, iterations: 0, costs };
        }
        // gauge: without priors the first node stays where it is
        let first = if self.priors.is_empty() { 1 } else { 0 };
        if first >= self.nodes.len() {
            return OptimizeReport { converged: true, iterations: 0, costs };
        }
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            let cost = *costs.last().unwrap();
            let (diag, upper, rhs) = self.normal_equations(first);
            let mut lambda = 0.0;
            let mut accepted = None;
            loop {
                let damped: Vec<Matrix3<f64>> = diag.iter().map(|d| d + Matrix3::identity() * lambda).collect();
                if let Some(step) = solve_block_tridiagonal(&damped, &upper, &rhs) {
                    let mut trial = self.nodes.clone();
                    for (k, d) in step.iter().enumerate() {
                        let p = &mut trial[first + k].pose;
                        *p = Se2::new(p.x + d[0], p.y + d[1], p.theta + d[2]);
                    }
                    let c = self.cost_of(&trial);
                    if c <= cost {
                        let norm = step.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
                        accepted = Some((trial, c, norm));
                        break;
                    }
                }
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
                if lambda > 1e12 {
                    break;
                }
            }
            match accepted {
                Some((trial, c, norm)) => {
                    self.nodes = trial;
                    costs.push(c);
                    if norm < tol {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // no descent direction left: already at a minimum up to round-off
                    converged = true;
                    break;
                }
            }
        }
        OptimizeReport { converged, iterations, costs }
    }

    /// Poses obtained by composing the odometry factors from the first node.
    pub fn dead_reckoning(&self) -> Vec<Se2> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if let Some(first) = self.nodes.first() {
            out.push(first.pose);
            for f in &self.odom {
                let last = *out.last().unwrap();
                out.push(last.compose(&f.delta));
            }
        }
        out
    }
}
