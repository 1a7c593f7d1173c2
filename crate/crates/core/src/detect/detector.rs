//! Per-cluster Gaussian statistics and the Mahalanobis noise score.

use nalgebra::DMatrix;

use super::gmm::{fit_gmm, hard_assign, to_matrix, GmmModel, GmmOptions};
use crate::error::{Error, Result};
use crate::par;

/// Where cluster statistics come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StatsMode {
    /// Empirical mean and covariance of the hard-assigned members.
    #[default]
    Hard,
    /// The mixture's own component parameters.
    Gmm,
}

impl std::str::FromStr for StatsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(StatsMode::Hard),
            "gmm" => Ok(StatsMode::Gmm),
            _ => Err(Error::InvalidArgument(format!("unknown stats mode {s:?}, expected hard or gmm"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDetector {
    /// Requested cluster count; clusters left empty are not stored.
    pub k: usize,
    pub mus: Vec<Vec<f64>>,
    /// Row-major `d x d` per cluster.
    pub precisions: Vec<Vec<f64>>,
}

fn regularized_precision(mut cov: DMatrix<f64>, reg_eps: f64) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let tr = cov.trace();
    let add = if tr > 0.0 { reg_eps * tr / d as f64 } else { reg_eps };
    for j in 0..d {
        cov[(j, j)] += add;
    }
    let chol = cov.cholesky().ok_or_else(|| Error::NonFinite("regularized covariance is not positive definite".into()))?;
    let mut p = chol.inverse();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(p)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

pub fn build_detector<F: AsRef<[f64]>>(features: &[F], labels: &[usize], k: usize, reg_eps: f64) -> Result<ClusterDetector> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} features but {} labels", features.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for k = {k}")));
    }
    if !(reg_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("reg_eps must be positive, got {reg_eps}")));
    }
    let x = to_matrix(features)?;
    let d = x.nrows();
    let stats = par::map_range(k, |c| {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Ok::<_, Error>(None);
        }
        let nc = members.len() as f64;
        let mut mu = vec![0.0; d];
        for &i in &members {
            for (m, v) in mu.iter_mut().zip(x.column(i).iter()) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= nc);
        let mut centered = DMatrix::zeros(d, members.len());
        for (col, &i) in members.iter().enumerate() {
            for j in 0..d {
                centered[(j, col)] = x[(j, i)] - mu[j];
            }
        }
        let cov = &centered * centered.transpose() / nc;
        Ok(Some((mu, regularized_precision(cov, reg_eps)?)))
    });
    let mut det = ClusterDetector { k, mus: Vec::new(), precisions: Vec::new() };
    for (c, s) in stats.into_iter().enumerate() {
        match s? {
            Some((mu, p)) => {
                det.mus.push(mu);
                det.precisions.push(row_major(&p));
            }
            None => log::warn!("k = {k}: cluster {c} is empty and was dropped"),
        }
    }
    if det.mus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(det)
}

/// Detector built from the mixture's component means and covariances.
pub fn detector_from_gmm(gmm: &GmmModel, reg_eps: f64) -> Result<ClusterDetector> {
    let d = gmm.dim();
    let mut det = ClusterDetector { k: gmm.k, mus: gmm.means.clone(), precisions: Vec::new() };
    for c in &gmm.covariances {
        det.precisions.push(row_major(&regularized_precision(DMatrix::from_row_slice(d, d, c), reg_eps)?));
    }
    Ok(det)
}

impl ClusterDetector {
    pub fn dim(&self) -> usize {
        self.mus.first().map_or(0, Vec::len)
    }

    pub fn cluster_count(&self) -> usize {
        self.mus.len()
    }

    /// `(f - mu_c)^T P_c (f - mu_c)` for every stored cluster.
    pub fn distances(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if feature.len() != d {
            return Err(Error::Shape(format!("feature has dimension {}, detector expects {d}", feature.len())));
        }
        let mut diff = vec![0.0; d];
        Ok(self
            .mus
            .iter()
            .zip(&self.precisions)
            .map(|(mu, p)| {
                for j in 0..d {
                    diff[j] = feature[j] - mu[j];
                }
                let mut q = 0.0;
                for (a, row) in p.chunks(d).enumerate() {
                    let mut s = 0.0;
                    for b in 0..d {
                        s += row[b] * diff[b];
                    }
                    q += diff[a] * s;
                }
                // rounding can push an exact-zero form slightly negative
                q.max(0.0)
            })
            .collect())
    }

    /// Negated smallest squared Mahalanobis distance: 0 at a cluster mean, lower is noisier.
    pub fn noise_score(&self, feature: &[f64]) -> Result<f64> {
        Ok(-self.distances(feature)?.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn noise_scores<F: AsRef<[f64]> + Sync>(&self, features: &[F]) -> Result<Vec<f64>> {
        par::map(features, |f| self.noise_score(f.as_ref())).into_iter().collect()
    }
}

pub fn noise_score(detector: &ClusterDetector, feature: &[f64]) -> Result<f64> {
    detector.noise_score(feature)
}

/// Mixture fit, hard assignment, and per-cluster statistics for one `k`.
pub fn fit_detector<F: AsRef<[f64]>>(features: &[F], k: usize, seed: u64, opts: &GmmOptions, mode: StatsMode) -> Result<ClusterDetector> {
    let gmm = fit_gmm(features, k, seed, opts)?;
    match mode {
        StatsMode::Hard => {
            let labels = hard_assign(&gmm, features)?;
            build_detector(features, &labels, k, opts.reg_eps)
        }
        StatsMode::Gmm => detector_from_gmm(&gmm, opts.reg_eps),
    }
}
