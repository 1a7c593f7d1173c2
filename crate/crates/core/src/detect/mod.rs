//! Latent-space noise detection: mixture clustering, per-cluster Gaussian
//! statistics, Mahalanobis scores and the multi-`k` ensemble.
//!
//! # `DET1` detector file (little-endian)
//!
//! magic `44 45 54 31`, u16 version, u32 member count; per member u32 `k`,
//! u32 `d`, then the cluster means and the precision matrices, each as a u32
//! element count followed by that many f32 values (means `c * d`, precisions
//! `c * d * d`, where `c` is the number of non-empty clusters). A trailing
//! u32 holds the number of standardization pairs (0 or the member count),
//! followed by that many f32 `(mean, std)` pairs.

mod detector;
mod gmm;

use std::fs;
use std::path::Path;

pub use detector::{build_detector, detector_from_gmm, fit_detector, noise_score, ClusterDetector, StatsMode};
pub use gmm::{fit_gmm, hard_assign, GmmModel, GmmOptions};

use crate::error::{Error, Result};
use crate::par;

pub const DETECTOR_MAGIC: [u8; 4] = *b"DET1";
pub const DETECTOR_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub ks: Vec<usize>,
    pub gmm: GmmOptions,
    pub mode: StatsMode,
    /// Z-score each member on its training scores before averaging.
    pub standardize: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { ks: (1..=10).collect(), gmm: GmmOptions::default(), mode: StatsMode::Hard, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDetector {
    pub members: Vec<ClusterDetector>,
    /// Per-member `(mean, std)` of training scores when standardizing.
    pub standardization: Option<Vec<(f64, f64)>>,
}

/// Seed for the member with `k` clusters.
pub fn member_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn fit_ensemble<F: AsRef<[f64]> + Sync>(features: &[F], ks: &[usize], seed: u64, reg_eps: f64) -> Result<EnsembleDetector> {
    let config = EnsembleConfig { ks: ks.to_vec(), gmm: GmmOptions { reg_eps, ..GmmOptions::default() }, ..EnsembleConfig::default() };
    fit_ensemble_with(features, &config, seed)
}

pub fn fit_ensemble_with<F: AsRef<[f64]> + Sync>(features: &[F], config: &EnsembleConfig, seed: u64) -> Result<EnsembleDetector> {
    if config.ks.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one k".into()));
    }
    for (i, k) in config.ks.iter().enumerate() {
        if config.ks[..i].contains(k) {
            return Err(Error::InvalidArgument(format!("duplicate k = {k} in ensemble")));
        }
    }
    let members = par::map(&config.ks, |&k| fit_detector(features, k, member_seed(seed, k), &config.gmm, config.mode));
    let members: Vec<ClusterDetector> = members.into_iter().collect::<Result<_>>()?;
    let mut ens = EnsembleDetector { members, standardization: None };
    if config.standardize {
        let mut stats = Vec::with_capacity(ens.members.len());
        for m in &ens.members {
            let s = m.noise_scores(features)?;
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            stats.push((mean, if sd > 0.0 { sd } else { 1.0 }));
        }
        ens.standardization = Some(stats);
    }
    Ok(ens)
}

impl EnsembleDetector {
    pub fn new(members: Vec<ClusterDetector>) -> Result<Self> {
        let ens = EnsembleDetector { members, standardization: None };
        ens.validate()?;
        Ok(ens)
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidArgument("ensemble has no members".into()));
        }
        let d = self.members[0].dim();
        for (i, m) in self.members.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::Shape(format!("member {i} has dimension {}, member 0 has {d}", m.dim())));
            }
            if self.members[..i].iter().any(|o| o.k == m.k) {
                return Err(Error::InvalidArgument(format!("duplicate k = {} in ensemble", m.k)));
            }
        }
        if let Some(s) = &self.standardization {
            if s.len() != self.members.len() {
                return Err(Error::Shape("standardization does not match member count".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, ClusterDetector::dim)
    }

    pub fn ks(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.k).collect()
    }

    /// Scores of each member, in member order.
    pub fn member_scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.noise_score(feature)).collect()
    }

    pub fn ensemble_score(&self, feature: &[f64]) -> Result<f64> {
        if self.members.is_empty() {
            return Err(Error::InvalidArgument("ensemble has no members".into()));
        }
        let scores = self.member_scores(feature)?;
        let total: f64 = match &self.standardization {
            None => scores.iter().sum(),
            Some(st) => scores.iter().zip(st).map(|(s, (m, sd))| (s - m) / sd).sum(),
        };
        Ok(total / scores.len() as f64)
    }

    pub fn ensemble_scores<F: AsRef<[f64]> + Sync>(&self, features: &[F]) -> Result<Vec<f64>> {
        par::map(features, |f| self.ensemble_score(f.as_ref())).into_iter().collect()
    }

    /// The member with `k` clusters, if present.
    pub fn member(&self, k: usize) -> Option<&ClusterDetector> {
        self.members.iter().find(|m| m.k == k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&DETECTOR_MAGIC);
        buf.extend_from_slice(&DETECTOR_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.members.len() as u32).to_le_bytes());
        let put = |buf: &mut Vec<u8>, vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        };
        for m in &self.members {
            buf.extend_from_slice(&(m.k as u32).to_le_bytes());
            buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
            put(&mut buf, &mut m.mus.iter().flatten().copied());
            put(&mut buf, &mut m.precisions.iter().flatten().copied());
        }
        let st = self.standardization.as_deref().unwrap_or(&[]);
        put(&mut buf, &mut st.iter().flat_map(|&(a, b)| [a, b]));
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != DETECTOR_MAGIC {
            return Err(Error::parse("byte 0", "bad magic, expected \"DET1\""));
        }
        let version = r.u32_from(2)?;
        if version != DETECTOR_VERSION as u32 {
            return Err(Error::parse("byte 4", format!("unsupported detector version {version}")));
        }
        let count = r.u32_from(4)? as usize;
        let mut members = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let k = r.u32_from(4)? as usize;
            let d = r.u32_from(4)? as usize;
            if d == 0 {
                return Err(Error::parse(format!("byte {at}"), "member with dimension 0"));
            }
            let means = r.array()?;
            let precs = r.array()?;
            if means.is_empty() || means.len() % d != 0 || precs.len() != means.len() * d {
                return Err(Error::parse(
                    format!("byte {at}"),
                    format!("{} mean values and {} precision values do not fit d = {d}", means.len(), precs.len()),
                ));
            }
            members.push(ClusterDetector {
                k,
                mus: means.chunks(d).map(<[f64]>::to_vec).collect(),
                precisions: precs.chunks(d * d).map(<[f64]>::to_vec).collect(),
            });
        }
        let st = r.array()?;
        let standardization = if st.is_empty() {
            None
        } else if st.len() == 2 * count {
            Some(st.chunks(2).map(|p| (p[0], p[1])).collect())
        } else {
            return Err(Error::parse(format!("byte {}", r.pos), "standardization block does not match member count"));
        };
        if r.pos != bytes.len() {
            return Err(Error::parse(format!("byte {}", r.pos), format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ens = EnsembleDetector { members, standardization };
        ens.validate()?;
        Ok(ens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn ensemble_score(ensemble: &EnsembleDetector, feature: &[f64]) -> Result<f64> {
    ensemble.ensemble_score(feature)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::parse(format!("byte {}", self.pos), format!("truncated: need {} more bytes, {} left", n, self.bytes.len() - self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32_from(&mut self, width: usize) -> Result<u32> {
        let b = self.take(width)?;
        Ok(match width {
            2 => u16::from_le_bytes([b[0], b[1]]) as u32,
            _ => u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        })
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = self.u32_from(4)? as usize;
        let at = self.pos;
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::parse(format!("byte {}", at + 4 * i), "non-finite value"))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| (0..d).map(|_| rng.random_range(-1.0..1.0) + (i % 4) as f64 * 3.0).collect()).collect()
    }

    fn fixed(k: usize, mu: Vec<f64>, scale: f64) -> ClusterDetector {
        let d = mu.len();
        let mut p = vec![0.0; d * d];
        for j in 0..d {
            p[j * d + j] = scale;
        }
        ClusterDetector { k, mus: vec![mu], precisions: vec![p] }
    }

    #[test]
    fn averaging() {
        let one = EnsembleDetector::new(vec![fixed(1, vec![0.0, 0.0], 1.0)]).unwrap();
        assert_eq!(one.ensemble_score(&[1.0, 1.0]).unwrap(), one.members[0].noise_score(&[1.0, 1.0]).unwrap());
        // member scores -2 and -4
        let two = EnsembleDetector::new(vec![fixed(1, vec![0.0], 2.0), fixed(2, vec![0.0], 4.0)]).unwrap();
        assert_eq!(two.member_scores(&[1.0]).unwrap(), vec![-2.0, -4.0]);
        assert_eq!(two.ensemble_score(&[1.0]).unwrap(), -3.0);
        assert_eq!(two.ensemble_score(&[0.0]).unwrap(), 0.0);
        assert!(EnsembleDetector::new(vec![]).is_err());
        assert!(EnsembleDetector::new(vec![fixed(1, vec![0.0], 1.0), fixed(1, vec![0.0], 1.0)]).is_err());
        let empty = EnsembleDetector { members: vec![], standardization: None };
        assert!(empty.ensemble_score(&[0.0]).is_err());
    }

    #[test]
    fn single_k_matches_whole_set_detector() {
        let xs = points(40, 3, 1);
        let ens = fit_ensemble(&xs, &[1], 5, 1e-6).unwrap();
        let direct = build_detector(&xs, &vec![0; 40], 1, 1e-6).unwrap();
        assert_eq!(ens.members, vec![direct]);
    }

    #[test]
    fn default_ks_and_determinism() {
        assert_eq!(EnsembleConfig::default().ks, (1..=10).collect::<Vec<_>>());
        let xs = points(80, 2, 2);
        let a = fit_ensemble(&xs, &[1, 2, 3, 4], 9, 1e-6).unwrap();
        let b = fit_ensemble(&xs, &[1, 2, 3, 4], 9, 1e-6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ks(), vec![1, 2, 3, 4]);
        assert!(fit_ensemble(&xs, &[2, 2], 9, 1e-6).is_err());
        assert!(fit_ensemble(&xs, &[], 9, 1e-6).is_err());
    }

    #[test]
    fn unanimous_order_is_preserved() {
        let xs = points(60, 2, 3);
        let ens = fit_ensemble(&xs, &[1, 2, 3], 4, 1e-6).unwrap();
        let probes = points(30, 2, 4);
        for a in &probes {
            for b in &probes {
                let ma = ens.member_scores(a).unwrap();
                let mb = ens.member_scores(b).unwrap();
                if ma.iter().zip(&mb).all(|(x, y)| x > y) {
                    assert!(ens.ensemble_score(a).unwrap() > ens.ensemble_score(b).unwrap());
                }
            }
        }
    }

    #[test]
    fn standardized_members_are_zero_mean_on_training_data() {
        let xs = points(50, 2, 6);
        let cfg = EnsembleConfig { ks: vec![1, 2], standardize: true, ..EnsembleConfig::default() };
        let ens = fit_ensemble_with(&xs, &cfg, 1).unwrap();
        let mean: f64 = ens.ensemble_scores(&xs).unwrap().iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-9);
        let back = EnsembleDetector::from_bytes(&ens.to_bytes()).unwrap();
        assert!(back.standardization.is_some());
    }

    #[test]
    fn file_round_trip() {
        let xs = points(60, 3, 7);
        let ens = fit_ensemble(&xs, &[1, 3, 5], 2, 1e-6).unwrap();
        let bytes = ens.to_bytes();
        let back = EnsembleDetector::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.ks(), ens.ks());
        for f in points(10, 3, 8) {
            let (a, b) = (ens.ensemble_score(&f).unwrap(), back.ensemble_score(&f).unwrap());
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
        assert!(EnsembleDetector::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err().to_string().contains("truncated"));
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(EnsembleDetector::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EnsembleDetector::from_bytes(&extra).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ens = fit_ensemble(&points(20, 2, 1), &[1], 0, 1e-6).unwrap();
        assert!(ens.ensemble_score(&[0.0, 0.0, 0.0]).is_err());
    }
}
