//! Full-covariance Gaussian mixture fitted by EM.
//!
//! Covariances carry a weak prior that keeps them invertible: the M-step sets
//! `Sigma_k = (S_k + lambda I) / N_k`, where `S_k` is the responsibility-weighted
//! scatter and `lambda = reg_eps * scale * n` with `scale` the mean diagonal of
//! the pooled covariance. For one component this is the sample covariance
//! plus `reg_eps * scale * I`. EM maximizes the log-likelihood minus
//! `lambda / 2 * sum_k tr(Sigma_k^-1)`, and that penalized value is what the
//! trace records, so it never decreases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the objective gains less than this per sample.
    pub tol: f64,
    pub reg_eps: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { max_iter: 200, tol: 1e-6, reg_eps: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d x d` per component.
    pub covariances: Vec<Vec<f64>>,
    pub log_likelihood_trace: Vec<f64>,
}

/// Samples as columns of a `d x n` matrix.
pub(crate) fn to_matrix<F: AsRef<[f64]>>(features: &[F]) -> Result<DMatrix<f64>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = features[0].as_ref().len();
    if d == 0 {
        return Err(Error::Shape("features have dimension 0".into()));
    }
    let mut m = DMatrix::zeros(d, n);
    for (i, f) in features.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != d {
            return Err(Error::Shape(format!("feature {i} has dimension {}, expected {d}", f.len())));
        }
        if let Some(j) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {i} component {j}")));
        }
        m.column_mut(i).copy_from_slice(f);
    }
    Ok(m)
}

/// Compensated summation; EM objectives are long sums of similar terms.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.ncols() as f64;
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| stable_sum(r.iter().copied()) / n))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Per-component quantities for the E-step.
struct Component {
    log_weight: f64,
    /// Inverse of the lower Cholesky factor.
    l_inv: DMatrix<f64>,
    half_log_det: f64,
}

impl Component {
    fn new(weight: f64, cov: &DMatrix<f64>) -> Result<Component> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonFinite("covariance lost positive definiteness".into()))?;
        let l = chol.l();
        let half_log_det = l.diagonal().iter().map(|v| v.ln()).sum();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(cov.nrows(), cov.nrows()))
            .ok_or_else(|| Error::NonFinite("singular Cholesky factor".into()))?;
        Ok(Component { log_weight: weight.ln(), l_inv, half_log_det })
    }

    /// `log w + log N(x | mu, Sigma)` for every column of `x`.
    fn log_joint(&self, x: &DMatrix<f64>, mean: &DVector<f64>) -> Vec<f64> {
        let d = x.nrows() as f64;
        let mut centered = x.clone();
        for mut c in centered.column_iter_mut() {
            c -= mean;
        }
        let z = &self.l_inv * centered;
        let c0 = self.log_weight - self.half_log_det - 0.5 * d * (2.0 * std::f64::consts::PI).ln();
        z.column_iter().map(|c| c0 - 0.5 * c.norm_squared()).collect()
    }

    fn trace_of_precision(&self) -> f64 {
        self.l_inv.norm_squared()
    }
}

struct State {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

/// Log responsibilities (k rows of n) and the penalized objective.
fn e_step(x: &DMatrix<f64>, st: &State, lambda: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    let k = st.weights.len();
    let comps: Vec<Result<Component>> = par::map_range(k, |j| Component::new(st.weights[j], &st.covs[j]));
    let comps: Vec<Component> = comps.into_iter().collect::<Result<_>>()?;
    let mut log_r: Vec<Vec<f64>> = par::map_range(k, |j| comps[j].log_joint(x, &st.means[j]));
    let n = x.ncols();
    let mut per_sample = Vec::with_capacity(n);
    for i in 0..n {
        let m = (0..k).map(|j| log_r[j][i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + stable_sum((0..k).map(|j| (log_r[j][i] - m).exp())).ln();
        for row in log_r.iter_mut() {
            row[i] -= lse;
        }
        per_sample.push(lse);
    }
    let penalty = 0.5 * lambda * stable_sum(comps.iter().map(Component::trace_of_precision));
    let objective = stable_sum(per_sample) - penalty;
    if !objective.is_finite() {
        return Err(Error::NonFinite("mixture log-likelihood".into()));
    }
    Ok((log_r, objective))
}

fn m_step(x: &DMatrix<f64>, log_r: &[Vec<f64>], lambda: f64) -> State {
    let n = x.ncols();
    let d = x.nrows();
    let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = par::map(log_r, |lr| {
        let r: Vec<f64> = lr.iter().map(|v| v.exp()).collect();
        let nk = stable_sum(r.iter().copied()).max(1e-300);
        let mut mean = DVector::zeros(d);
        for (i, ri) in r.iter().enumerate() {
            mean.axpy(*ri, &x.column(i), 1.0);
        }
        mean /= nk;
        let mut centered = x.clone();
        let mut weighted = x.clone();
        for i in 0..n {
            let mut c = centered.column_mut(i);
            c -= &mean;
            weighted.column_mut(i).copy_from(&(&c * r[i]));
        }
        let mut cov = weighted * centered.transpose();
        for j in 0..d {
            cov[(j, j)] += lambda;
        }
        cov /= nk;
        symmetrize(&mut cov);
        (nk, mean, cov)
    });
    let total = stable_sum(parts.iter().map(|p| p.0));
    let mut st = State { weights: Vec::new(), means: Vec::new(), covs: Vec::new() };
    for (nk, mean, cov) in parts {
        st.weights.push(nk / total);
        st.means.push(mean);
        st.covs.push(cov);
    }
    st
}

/// k-means++ seeding of the means.
fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = x.ncols();
    let mut centers: Vec<DVector<f64>> = vec![x.column(rng.random_range(0..n)).into_owned()];
    let mut dist: Vec<f64> = (0..n).map(|i| (x.column(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total = stable_sum(dist.iter().copied());
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > u && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x.column(pick).into_owned();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((x.column(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

/// Mean diagonal of the pooled covariance, or 1 when the data has no spread.
fn scale_of(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n = x.ncols() as f64;
    let mean = column_mean(x);
    let mut centered = x.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let mut cov = &centered * centered.transpose() / n;
    symmetrize(&mut cov);
    let s = cov.trace() / x.nrows() as f64;
    (mean, cov, if s > 0.0 { s } else { 1.0 })
}

pub fn fit_gmm<F: AsRef<[f64]>>(features: &[F], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    let x = to_matrix(features)?;
    let (n, d) = (x.ncols(), x.nrows());
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} samples cannot form {k} clusters")));
    }
    if !(opts.reg_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("reg_eps must be positive, got {}", opts.reg_eps)));
    }
    let (_, mut pooled, scale) = scale_of(&x);
    let lambda = opts.reg_eps * scale * n as f64;
    for j in 0..d {
        pooled[(j, j)] += lambda / n as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = State {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(&x, k, &mut rng),
        covs: vec![pooled; k],
    };
    let mut trace = Vec::new();
    let mut iter = 0;
    loop {
        let (log_r, objective) = e_step(&x, &st, lambda)?;
        let gain = trace.last().map(|prev| (objective - prev) / n as f64);
        trace.push(objective);
        if gain.is_some_and(|g| g < opts.tol) || iter == opts.max_iter {
            break;
        }
        st = m_step(&x, &log_r, lambda);
        iter += 1;
    }
    Ok(GmmModel {
        k,
        weights: st.weights,
        means: st.means.iter().map(|m| m.iter().copied().collect()).collect(),
        covariances: st.covs.iter().map(|c| c.transpose().iter().copied().collect()).collect(),
        log_likelihood_trace: trace,
    })
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn state(&self) -> State {
        let d = self.dim();
        State {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            covs: self.covariances.iter().map(|c| DMatrix::from_row_slice(d, d, c)).collect(),
        }
    }

    /// Posterior responsibilities, one row of `k` per feature.
    pub fn responsibilities<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<Vec<Vec<f64>>> {
        let x = to_matrix(features)?;
        if x.nrows() != self.dim() {
            return Err(Error::Shape(format!("features have dimension {}, model expects {}", x.nrows(), self.dim())));
        }
        let (log_r, _) = e_step(&x, &self.state(), 0.0)?;
        Ok((0..x.ncols()).map(|i| log_r.iter().map(|row| row[i].exp()).collect()).collect())
    }
}

/// Index of the most responsible component per feature; ties go to the lowest index.
pub fn hard_assign<F: AsRef<[f64]>>(gmm: &GmmModel, features: &[F]) -> Result<Vec<usize>> {
    let x = to_matrix(features)?;
    if x.nrows() != gmm.dim() {
        return Err(Error::Shape(format!("features have dimension {}, model expects {}", x.nrows(), gmm.dim())));
    }
    let (log_r, _) = e_step(&x, &gmm.state(), 0.0)?;
    Ok((0..x.ncols())
        .map(|i| {
            let mut best = 0;
            for j in 1..gmm.k {
                if log_r[j][i] > log_r[best][i] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n_per: usize, centers: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..n_per {
                out.push(c.iter().map(|m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect());
            }
        }
        out
    }

    fn sample_mean_cov(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = xs.len() as f64;
        let d = xs[0].len();
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let mut cov = vec![0.0; d * d];
        for x in xs {
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += (x[a] - mean[a]) * (x[b] - mean[b]) / n;
                }
            }
        }
        (mean, cov)
    }

    #[test]
    fn single_component_is_closed_form() {
        let xs = blobs(50, &[vec![1.0, -2.0, 0.5]], 1);
        let opts = GmmOptions::default();
        let g = fit_gmm(&xs, 1, 0, &opts).unwrap();
        let (mean, cov) = sample_mean_cov(&xs);
        let scale = (0..3).map(|j| cov[j * 3 + j]).sum::<f64>() / 3.0;
        assert_eq!(g.weights, vec![1.0]);
        for j in 0..3 {
            assert!((g.means[0][j] - mean[j]).abs() < 1e-12);
        }
        for a in 0..3 {
            for b in 0..3 {
                let expect = cov[a * 3 + b] + if a == b { opts.reg_eps * scale } else { 0.0 };
                assert!((g.covariances[0][a * 3 + b] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recovers_separated_blobs() {
        let centers = vec![vec![-5.0, -5.0], vec![5.0, 5.0]];
        let xs = blobs(200, &centers, 7);
        let g = fit_gmm(&xs, 2, 3, &GmmOptions::default()).unwrap();
        for c in &centers {
            let best = g
                .means
                .iter()
                .map(|m| ((m[0] - c[0]).powi(2) + (m[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.5, "{:?}", g.means);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let labels = hard_assign(&g, &centers).unwrap();
        assert_ne!(labels[0], labels[1]);
        // a blob center is assigned to the component whose mean is nearest
        let near = |c: &Vec<f64>| {
            (0..2)
                .min_by(|&a, &b| {
                    let da = (g.means[a][0] - c[0]).powi(2) + (g.means[a][1] - c[1]).powi(2);
                    let db = (g.means[b][0] - c[0]).powi(2) + (g.means[b][1] - c[1]).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        };
        assert_eq!(labels, vec![near(&centers[0]), near(&centers[1])]);
    }

    #[test]
    fn responsibilities_match_hand_computation() {
        let xs = blobs(30, &[vec![0.0], vec![4.0]], 2);
        let g = fit_gmm(&xs, 2, 1, &GmmOptions::default()).unwrap();
        let x = 1.3;
        let dens: Vec<f64> = (0..2)
            .map(|j| {
                let v = g.covariances[j][0];
                g.weights[j] * (-(x - g.means[j][0]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .collect();
        let r = g.responsibilities(&[vec![x]]).unwrap();
        for j in 0..2 {
            assert!((r[0][j] - dens[j] / (dens[0] + dens[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_assigns_everything_to_zero() {
        let xs = blobs(20, &[vec![0.0, 0.0]], 3);
        let g = fit_gmm(&xs, 1, 0, &GmmOptions::default()).unwrap();
        assert!(hard_assign(&g, &xs).unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let g = GmmModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![0.0]],
            covariances: vec![vec![1.0], vec![1.0]],
            log_likelihood_trace: vec![],
        };
        assert_eq!(hard_assign(&g, &[vec![0.3], vec![-2.0]]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn errors() {
        let xs = blobs(3, &[vec![0.0]], 1);
        assert!(fit_gmm(&xs, 4, 0, &GmmOptions::default()).is_err());
        assert!(fit_gmm(&xs, 0, 0, &GmmOptions::default()).is_err());
        assert!(fit_gmm::<Vec<f64>>(&[], 1, 0, &GmmOptions::default()).is_err());
        assert!(fit_gmm(&[vec![0.0], vec![1.0, 2.0]], 1, 0, &GmmOptions::default()).is_err());
    }

    #[test]
    fn degenerate_data_is_regularized() {
        let xs = vec![vec![1.0, 1.0]; 10];
        let g = fit_gmm(&xs, 3, 0, &GmmOptions::default()).unwrap();
        assert!(g.covariances.iter().flatten().all(|v| v.is_finite()));
        let rank_one: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let g = fit_gmm(&rank_one, 2, 0, &GmmOptions::default()).unwrap();
        assert!(g.log_likelihood_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_given_seed() {
        let xs = blobs(40, &[vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 4.0]], 5);
        let a = fit_gmm(&xs, 3, 11, &GmmOptions::default()).unwrap();
        let b = fit_gmm(&xs, 3, 11, &GmmOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trace_is_monotone(seed in any::<u64>(), k in 1usize..5, d in 1usize..5, n in 8usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..d).map(|_| rng.random_range(-1.0..1.0) + (i % 3) as f64 * 2.0).collect())
                .collect();
            let g = fit_gmm(&xs, k.min(n), seed, &GmmOptions::default()).unwrap();
            for w in g.log_likelihood_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
            prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(g.weights.iter().all(|&w| w >= 0.0));
            for c in &g.covariances {
                for a in 0..d {
                    for b in 0..d {
                        prop_assert!((c[a * d + b] - c[b * d + a]).abs() <= 1e-10);
                    }
                }
            }
        }

        #[test]
        fn permuting_features_permutes_labels(seed in any::<u64>()) {
            let xs = blobs(15, &[vec![0.0, 0.0], vec![4.0, 4.0]], seed);
            let g = fit_gmm(&xs, 2, seed, &GmmOptions::default()).unwrap();
            let labels = hard_assign(&g, &xs).unwrap();
            let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let mut back = hard_assign(&g, &rev).unwrap();
            back.reverse();
            prop_assert_eq!(labels, back);
        }
    }
}
