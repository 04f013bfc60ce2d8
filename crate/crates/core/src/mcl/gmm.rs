//! Weighted Gaussian mixture fit over planar particle positions, used to size
//! the particle set.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

const COV_FLOOR: f64 = 1e-6;
const MAX_ITERS: usize = 50;
const LL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GaussianComponent {
    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    /// Area of the one-sigma ellipse.
    pub fn ellipse_area(&self) -> f64 {
        PI * self.det().max(0.0).sqrt()
    }

    fn log_density(&self, p: [f64; 2]) -> f64 {
        let det = self.det();
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let m = (self.cov[1][1] * dx * dx - 2.0 * self.cov[0][1] * dx * dy + self.cov[0][0] * dy * dy) / det;
        -0.5 * m - 0.5 * det.ln() - (2.0 * PI).ln()
    }
}

/// Clamps the eigenvalues of a symmetric 2×2 matrix from below.
fn floor_cov(c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (a, b, d) = (c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]);
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (tr + disc, tr - disc);
    if l2 >= COV_FLOOR {
        return [[a, b], [b, d]];
    }
    // eigenvector of l1
    let (vx, vy) = if b.abs() > 1e-300 {
        let n = (b * b + (l1 - a) * (l1 - a)).sqrt();
        (b / n, (l1 - a) / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (l1, l2) = (l1.max(COV_FLOOR), l2.max(COV_FLOOR));
    // R diag(l1, l2) Rᵀ with R = [[vx, -vy], [vy, vx]]
    let xx = l1 * vx * vx + l2 * vy * vy;
    let yy = l1 * vy * vy + l2 * vx * vx;
    let xy = (l1 - l2) * vx * vy;
    [[xx, xy], [xy, yy]]
}

fn weighted_moments(points: &[[f64; 2]], w: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let total: f64 = w.iter().sum();
    let mut m = [0.0; 2];
    for (p, wi) in points.iter().zip(w) {
        m[0] += wi * p[0];
        m[1] += wi * p[1];
    }
    m[0] /= total;
    m[1] /= total;
    let mut c = [[0.0; 2]; 2];
    for (p, wi) in points.iter().zip(w) {
        let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
        c[0][0] += wi * dx * dx;
        c[0][1] += wi * dx * dy;
        c[1][1] += wi * dy * dy;
    }
    c[0][0] /= total;
    c[0][1] /= total;
    c[1][1] /= total;
    c[1][0] = c[0][1];
    (m, c)
}

fn pick_weighted<R: Rng>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return rng.gen_range(0..w.len());
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        u -= wi;
        if u < 0.0 {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

/// Fits a `k`-component mixture by EM, seeded with k-means++.
///
/// `weights` are per-point sample weights (uniform when `None`).
pub fn fit_gmm<R: Rng>(
    points: &[[f64; 2]],
    weights: Option<&[f64]>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<GaussianComponent>> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::Contract(format!("cannot fit {k} components to {n} points")));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == n => w.to_vec(),
        Some(_) => return Err(Error::Contract("one weight per point required".into())),
        None => vec![1.0; n],
    };

    // k-means++ seeding
    let mut centers = vec![points[pick_weighted(&w, rng)]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(&w).map(|(d, wi)| d * wi).collect();
        let next = if scores.iter().any(|&s| s > 0.0) {
            points[pick_weighted(&scores, rng)]
        } else {
            points[pick_weighted(&w, rng)]
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &next));
        }
        centers.push(next);
    }

    let (_, global_cov) = weighted_moments(points, &w);
    let init_cov = floor_cov(global_cov);
    let mut comps: Vec<GaussianComponent> = centers
        .into_iter()
        .map(|mean| GaussianComponent {
            weight: 1.0 / k as f64,
            mean,
            cov: init_cov,
        })
        .collect();

    let total_w: f64 = w.iter().sum();
    let mut resp = vec![0.0; n * k];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERS {
        // E step
        let mut ll = 0.0;
        for i in 0..n {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut best = f64::NEG_INFINITY;
            for (j, c) in comps.iter().enumerate() {
                row[j] = c.weight.ln() + c.log_density(points[i]);
                best = best.max(row[j]);
            }
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - best).exp();
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
            ll += w[i] * (best + sum.ln());
        }
        ll /= total_w;

        // M step
        for (j, comp) in comps.iter_mut().enumerate() {
            let rw: Vec<f64> = (0..n).map(|i| resp[i * k + j] * w[i]).collect();
            let mass: f64 = rw.iter().sum();
            if mass <= 1e-300 {
                continue;
            }
            let (mean, cov) = weighted_moments(points, &rw);
            comp.weight = mass / total_w;
            comp.mean = mean;
            comp.cov = floor_cov(cov);
        }

        if (ll - prev_ll).abs() < LL_TOL {
            break;
        }
        prev_ll = ll;
    }
    Ok(comps)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Sum of the one-sigma ellipse areas of a mixture.
pub fn mixture_area(gmm: &[GaussianComponent]) -> f64 {
    gmm.iter().map(GaussianComponent::ellipse_area).sum()
}

/// Particle count proportional to the mixture's ellipse area relative to the
/// area measured right after initialization, clamped to `[n_min, n_max]`.
pub fn adapt_particle_count(area: f64, initial_area: f64, n_min: usize, n_max: usize) -> usize {
    if !(initial_area > 0.0) {
        return n_max;
    }
    let raw = (n_max as f64 * area / initial_area).round();
    (raw.max(n_min as f64).min(n_max as f64)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_points_collapse_to_floor() {
        let pts = vec![[3.0, -2.0]; 50];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = fit_gmm(&pts, None, 3, &mut rng).unwrap();
        for c in &g {
            assert!((c.mean[0] - 3.0).abs() < 1e-12 && (c.mean[1] + 2.0).abs() < 1e-12);
            assert!((c.cov[0][0] - COV_FLOOR).abs() < 1e-12);
            assert!((c.cov[1][1] - COV_FLOOR).abs() < 1e-12);
            assert!(c.cov[0][1].abs() < 1e-12);
        }
    }

    #[test]
    fn single_component_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| {
                let a = nd.sample(&mut rng);
                [2.0 * a + 1.0, a + 0.5 * nd.sample(&mut rng)]
            })
            .collect();
        let g = fit_gmm(&pts, None, 1, &mut rng).unwrap();
        let (m, c) = weighted_moments(&pts, &vec![1.0; pts.len()]);
        assert_eq!(g.len(), 1);
        assert!((g[0].weight - 1.0).abs() < 1e-12);
        for i in 0..2 {
            assert!((g[0].mean[i] - m[i]).abs() < 1e-9);
            for j in 0..2 {
                assert!((g[0].cov[i][j] - c[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn separated_clusters_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 2.0;
        let nd = Normal::new(0.0, sigma).unwrap();
        let centers = [[0.0, 0.0], [100.0, 40.0]];
        let mut pts = Vec::new();
        for c in centers {
            for _ in 0..2000 {
                pts.push([c[0] + nd.sample(&mut rng), c[1] + nd.sample(&mut rng)]);
            }
        }
        let g = fit_gmm(&pts, None, 2, &mut rng).unwrap();
        for c in centers {
            let best = g
                .iter()
                .map(|comp| dist2(&comp.mean, &c).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1 * sigma, "center {c:?} missed by {best}");
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fit_gmm(&[[0.0, 0.0]], None, 2, &mut rng).is_err());
    }

    #[test]
    fn count_rule() {
        assert_eq!(adapt_particle_count(10.0, 10.0, 1000, 10_000), 10_000);
        assert_eq!(adapt_particle_count(0.0, 10.0, 1000, 10_000), 1000);
        assert_eq!(adapt_particle_count(5.0, 10.0, 1000, 10_000), 5000);
        assert_eq!(adapt_particle_count(50.0, 10.0, 1000, 10_000), 10_000);
    }

    #[test]
    fn floor_keeps_orientation() {
        let c = floor_cov([[1.0, 1.0], [1.0, 1.0]]);
        // rank-one input: the zero eigenvalue is lifted to the floor
        assert!((c[0][0] - (1.0 + 0.5 * COV_FLOOR)).abs() < 1e-9);
        assert!((c[0][1] - (1.0 - 0.5 * COV_FLOOR)).abs() < 1e-9);
    }
}
