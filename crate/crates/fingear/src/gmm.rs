//! Diagonal-covariance Gaussian mixtures fitted with EM, with BIC model
//! selection and thresholded soft assignment.
//!
//! Used in two places: clustering lexicon terms (FLAM) and clustering chunk
//! or summary embeddings while building the per-Item trees. Initialization
//! is k-means++ style from a fixed seed, so fits are fully reproducible.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LOG_2PI: f64 = 1.8378770664093453;
const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmConfig {
    /// Upper bound on the number of mixture components searched by BIC.
    pub max_components: usize,
    pub em_max_iters: usize,
    /// Stop when the log-likelihood improves by less than this.
    pub em_tol: f64,
    /// Lower bound applied to every covariance entry.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_components: 50,
            em_max_iters: 200,
            em_tol: 1e-4,
            variance_floor: 1e-6,
            seed: 0,
        }
    }
}

/// A fitted mixture: diagonal Gaussians plus the EM log-likelihood trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModel {
    pub n_components: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component diagonal variances, floored at `variance_floor`.
    pub variances: Vec<Vec<f64>>,
    /// Total log-likelihood after each EM iteration; non-decreasing.
    pub log_likelihood_trace: Vec<f64>,
    pub bic: f64,
}

impl GmmModel {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// Posterior responsibilities, one row per point; rows sum to 1.
    pub fn responsibilities(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.point_responsibilities(p)).collect()
    }

    fn point_responsibilities(&self, point: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.n_components)
            .map(|c| self.weights[c].max(WEIGHT_FLOOR).ln() + self.log_density(c, point))
            .collect();
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    fn log_density(&self, c: usize, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for d in 0..self.dim {
            let var = self.variances[c][d];
            let diff = point[d] - self.means[c][d];
            acc += -0.5 * (LOG_2PI + var.ln() + diff * diff / var);
        }
        acc
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fit a mixture, selecting the component count by minimum BIC. The scan is
/// bounded by `cfg.max_components` and by an expected occupancy of two
/// points per component: with fewer, every distinct point collapses onto a
/// floor-variance singleton whose density term dominates any BIC penalty,
/// and model selection degenerates. A single point yields a single
/// component centered on it.
pub fn fit_gmm(points: &[Vec<f64>], cfg: &GmmConfig) -> GmmModel {
    assert!(!points.is_empty(), "fit_gmm needs at least one point");
    let k_max = cfg.max_components.max(1).min((points.len() / 2).max(1));
    let mut best: Option<GmmModel> = None;
    for k in 1..=k_max {
        let model = fit_gmm_k(points, k, cfg);
        if best.as_ref().is_none_or(|b| model.bic < b.bic) {
            best = Some(model);
        }
    }
    best.unwrap()
}

/// Fit a mixture with exactly `k` components.
pub fn fit_gmm_k(points: &[Vec<f64>], k: usize, cfg: &GmmConfig) -> GmmModel {
    let n = points.len();
    let dim = points[0].len();
    assert!(k >= 1 && k <= n);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9 * k as u64));
    let means = kmeanspp_init(points, k, &mut rng);
    let data_var = column_variances(points, cfg.variance_floor);

    let mut model = GmmModel {
        n_components: k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![data_var; k],
        log_likelihood_trace: Vec::new(),
        bic: f64::INFINITY,
    };

    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..cfg.em_max_iters.max(1) {
        // E-step and current log-likelihood.
        let mut resp = vec![vec![0.0; k]; n];
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|c| model.weights[c].max(WEIGHT_FLOOR).ln() + model.log_density(c, p))
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[i][c] = (logs[c] - lse).exp();
            }
        }
        model.log_likelihood_trace.push(ll);
        if iter > 0 && ll - prev_ll < cfg.em_tol {
            break;
        }
        prev_ll = ll;

        // M-step.
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= WEIGHT_FLOOR {
                // Empty component: leave its parameters, floor its weight.
                model.weights[c] = WEIGHT_FLOOR;
                continue;
            }
            model.weights[c] = nk / n as f64;
            for d in 0..dim {
                let mu = points
                    .iter()
                    .zip(&resp)
                    .map(|(p, r)| r[c] * p[d])
                    .sum::<f64>()
                    / nk;
                model.means[c][d] = mu;
            }
            for d in 0..dim {
                let var = points
                    .iter()
                    .zip(&resp)
                    .map(|(p, r)| {
                        let diff = p[d] - model.means[c][d];
                        r[c] * diff * diff
                    })
                    .sum::<f64>()
                    / nk;
                model.variances[c][d] = var.max(cfg.variance_floor);
            }
        }
        let wsum: f64 = model.weights.iter().sum();
        for w in &mut model.weights {
            *w /= wsum;
        }
    }

    // BIC = -2 LL + p ln n with p = (k-1) weights + k*d means + k*d variances.
    let p = (k - 1) + 2 * k * dim;
    model.bic = -2.0 * model.log_likelihood() + p as f64 * (n as f64).ln();
    model
}

fn kmeanspp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with chosen centers; spread uniformly.
            rng.gen_range(0..n)
        } else {
            WeightedIndex::new(dist2.iter().map(|d| d.max(0.0)))
                .map(|w| w.sample(rng))
                .unwrap_or_else(|_| rng.gen_range(0..n))
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn column_variances(points: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mut means = vec![0.0; dim];
    for p in points {
        for d in 0..dim {
            means[d] += p[d];
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; dim];
    for p in points {
        for d in 0..dim {
            let diff = p[d] - means[d];
            vars[d] += diff * diff;
        }
    }
    vars.iter().map(|v| (v / n).max(floor)).collect()
}

/// Thresholded soft assignment: a point joins every component whose
/// responsibility clears `threshold`; its argmax component is always
/// included, so every point belongs somewhere.
pub fn soft_assign(model: &GmmModel, points: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    model
        .responsibilities(points)
        .into_iter()
        .map(|row| {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(c, _)| c)
                .unwrap_or(0);
            let mut members: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, r)| **r >= threshold)
                .map(|(c, _)| c)
                .collect();
            if !members.contains(&argmax) {
                members.push(argmax);
                members.sort_unstable();
            }
            members
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob(center: &[f64], radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.gen_range(-radius..radius))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_point_yields_single_component() {
        let points = vec![vec![2.0, -1.0]];
        let model = fit_gmm(&points, &GmmConfig::default());
        assert_eq!(model.n_components, 1);
        assert_eq!(model.means[0], vec![2.0, -1.0]);
    }

    #[test]
    fn two_separated_blobs_select_two_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = blob(&[0.0, 0.0], 0.5, 20, &mut rng);
        pts.extend(blob(&[10.0, 10.0], 0.5, 20, &mut rng));
        let cfg = GmmConfig {
            max_components: 8,
            seed: 3,
            ..Default::default()
        };
        let model = fit_gmm(&pts, &cfg);
        assert_eq!(model.n_components, 2);
        // Means land inside the generating blobs.
        let mut found = [false, false];
        for mean in &model.means {
            if sq_dist(mean, &[0.0, 0.0]).sqrt() < 1.0 {
                found[0] = true;
            }
            if sq_dist(mean, &[10.0, 10.0]).sqrt() < 1.0 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1]);
    }

    #[test]
    fn responsibilities_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = blob(&[0.0, 0.0, 0.0], 1.0, 15, &mut rng);
        pts.extend(blob(&[5.0, 5.0, 5.0], 1.0, 15, &mut rng));
        let model = fit_gmm(&pts, &GmmConfig { max_components: 6, ..Default::default() });
        for row in model.responsibilities(&pts) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn log_likelihood_trace_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut pts = blob(&[0.0; 4], 2.0, 25, &mut rng);
        pts.extend(blob(&[4.0; 4], 2.0, 25, &mut rng));
        let model = fit_gmm_k(&pts, 3, &GmmConfig::default());
        for w in model.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace dipped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn soft_assign_respects_threshold_and_argmax() {
        // Hand-built model: component 0 at x=0, component 1 at x=1, tight.
        let model = GmmModel {
            n_components: 2,
            dim: 1,
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![1.0]],
            variances: vec![vec![0.05], vec![0.05]],
            log_likelihood_trace: vec![0.0],
            bic: 0.0,
        };
        // Close to component 0: single membership.
        let near = soft_assign(&model, &[vec![0.0]], 0.1);
        assert_eq!(near[0], vec![0]);
        // Midpoint: responsibilities 0.5/0.5, both above threshold.
        let mid = soft_assign(&model, &[vec![0.5]], 0.1);
        assert_eq!(mid[0], vec![0, 1]);
    }

    #[test]
    fn single_component_assigns_everything_with_full_responsibility() {
        let pts = vec![vec![1.0], vec![2.0], vec![3.0]];
        let model = fit_gmm_k(&pts, 1, &GmmConfig::default());
        let resp = model.responsibilities(&pts);
        for row in resp {
            assert!((row[0] - 1.0).abs() < 1e-12);
        }
        let members = soft_assign(&model, &pts, 0.1);
        assert!(members.iter().all(|m| m == &vec![0]));
    }

    #[test]
    fn duplicate_points_do_not_break_the_fit() {
        let pts = vec![vec![1.0, 1.0]; 8];
        let model = fit_gmm(&pts, &GmmConfig { max_components: 4, ..Default::default() });
        assert!(model.log_likelihood().is_finite());
        assert_eq!(model.n_components, 1);
    }

    #[test]
    fn fits_are_deterministic_for_a_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = blob(&[0.0, 0.0], 3.0, 30, &mut rng);
        let cfg = GmmConfig { max_components: 5, seed: 42, ..Default::default() };
        let a = fit_gmm(&pts, &cfg);
        let b = fit_gmm(&pts, &cfg);
        assert_eq!(a.means, b.means);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log_likelihood_trace, b.log_likelihood_trace);
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = blob(&[0.0, 1.0], 2.0, 40, &mut rng);
        let model = fit_gmm_k(&pts, 4, &GmmConfig::default());
        let sum: f64 = model.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}
