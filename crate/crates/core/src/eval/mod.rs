//! Detection metrics, PCA export and evaluation reports.

mod metrics;
mod pca;

pub use metrics::{auprc, auroc, ScoredSample};
pub use pca::{pca_fit, pca_project, PcaModel};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::par;
use crate::signal::shuffled_indices;

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricStat {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        MetricStat { values, mean, std }
    }
}

/// One (method, level) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub auroc: MetricStat,
    pub auprc: MetricStat,
    /// Noisy windows per balanced set.
    pub positives: usize,
    /// Clean windows per balanced set.
    pub negatives: usize,
    pub seeds: Vec<u64>,
}

/// Indices into the clean and noisy sides after downsampling the larger one.
pub fn balanced_indices(n_clean: usize, n_noisy: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let m = n_clean.min(n_noisy);
    let pick = |n: usize| {
        if n == m {
            (0..n).collect()
        } else {
            let mut v = shuffled_indices(n, seed)[..m].to_vec();
            v.sort_unstable();
            v
        }
    };
    (pick(n_clean), pick(n_noisy))
}

/// AUROC and AUPRC of `score`-oriented outputs (higher is cleaner) on
/// balanced sets, one per seed.
pub fn evaluate(clean_scores: &[f64], noisy_scores: &[f64], seeds: &[u64]) -> Result<EvalCell> {
    if clean_scores.is_empty() || noisy_scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one seed".into()));
    }
    let runs = par::map(seeds, |&seed| {
        let (ci, ni) = balanced_indices(clean_scores.len(), noisy_scores.len(), seed);
        let samples: Vec<ScoredSample> = ci
            .iter()
            .map(|&i| ScoredSample::from_score(clean_scores[i], false))
            .chain(ni.iter().map(|&i| ScoredSample::from_score(noisy_scores[i], true)))
            .collect();
        Ok::<_, Error>((auroc(&samples)?, auprc(&samples)?))
    });
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_>>()?;
    let m = clean_scores.len().min(noisy_scores.len());
    Ok(EvalCell {
        auroc: MetricStat::from_values(runs.iter().map(|r| r.0).collect()),
        auprc: MetricStat::from_values(runs.iter().map(|r| r.1).collect()),
        positives: m,
        negatives: m,
        seeds: seeds.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub key: String,
    pub level: String,
    pub cell: EvalCell,
}

/// Rows of `key x level` cells. `key_name` titles the first column
/// (`method` for detection tables, `fraction` for transfer sweeps).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub key_name: String,
    /// `key=value` lines echoed above the table.
    pub header: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

impl EvalReport {
    pub fn new(key_name: &str) -> Self {
        EvalReport { key_name: key_name.to_string(), header: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, key: impl Into<String>, level: impl Into<String>, cell: EvalCell) {
        self.rows.push(ReportRow { key: key.into(), level: level.into(), cell });
    }

    pub fn get(&self, key: &str, level: &str) -> Option<&EvalCell> {
        self.rows.iter().find(|r| r.key == key && r.level == level).map(|r| &r.cell)
    }

    /// `key,level,metric,mean,std,seeds`, seeds separated by `;`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "{},level,metric,mean,std,seeds", self.key_name);
        for r in &self.rows {
            for (metric, stat) in [("auroc", &r.cell.auroc), ("auprc", &r.cell.auprc)] {
                let _ = writeln!(s, "{},{},{metric},{:.6},{:.6},{}", r.key, r.level, stat.mean, stat.std, seed_list(&r.cell.seeds));
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            let _ = writeln!(s, "# {h}");
        }
        let w = self.rows.iter().map(|r| r.key.len()).chain([self.key_name.len()]).max().unwrap_or(0);
        let _ = writeln!(s, "{:<w$}  {:<8}  {:>17}  {:>17}  {:>9}", self.key_name, "level", "AUROC", "AUPRC", "pos/neg");
        for r in &self.rows {
            let c = &r.cell;
            let _ = writeln!(
                s,
                "{:<w$}  {:<8}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}  {:>9}",
                r.key,
                r.level,
                c.auroc.mean,
                c.auroc.std,
                c.auprc.mean,
                c.auprc.std,
                format!("{}/{}", c.positives, c.negatives)
            );
        }
        s
    }
}

/// `pc1,pc2,level` rows for external plotting.
pub fn pca_csv(points: &[([f64; 2], String)]) -> String {
    let mut s = String::from("pc1,pc2,level\n");
    for (p, level) in points {
        let _ = writeln!(s, "{},{},{level}", p[0], p[1]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balancing_downsamples_majority() {
        let (c, n) = balanced_indices(100, 40, 3);
        assert_eq!((c.len(), n.len()), (40, 40));
        assert_eq!(n, (0..40).collect::<Vec<_>>());
        assert!(c.windows(2).all(|w| w[0] < w[1]) && *c.last().unwrap() < 100);
        assert_ne!(c, balanced_indices(100, 40, 4).0);
        let cell = evaluate(&vec![0.0; 100], &vec![-1.0; 40], &[1, 2]).unwrap();
        assert_eq!((cell.positives, cell.negatives), (40, 40));
        assert_eq!(cell.auroc.mean, 1.0);
        assert_eq!(cell.auroc.std, 0.0);
    }

    #[test]
    fn rank_transform_keeps_auroc() {
        let clean: Vec<f64> = (0..30).map(|i| -((i * 7 % 30) as f64) * 0.1).collect();
        let noisy: Vec<f64> = (0..30).map(|i| -((i * 11 % 30) as f64) * 0.13 - 0.5).collect();
        let mut all: Vec<f64> = clean.iter().chain(&noisy).copied().collect();
        all.sort_by(f64::total_cmp);
        let rank = |v: f64| all.iter().position(|&x| x == v).unwrap() as f64;
        let a = evaluate(&clean, &noisy, &[0]).unwrap();
        let b = evaluate(&clean.iter().map(|&v| rank(v)).collect::<Vec<_>>(), &noisy.iter().map(|&v| rank(v)).collect::<Vec<_>>(), &[0])
            .unwrap();
        assert_eq!(a.auroc.mean, b.auroc.mean);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[], &[1.0], &[0]).is_err());
        assert!(evaluate(&[1.0], &[], &[0]).is_err());
        assert!(evaluate(&[1.0], &[1.0], &[]).is_err());
    }

    #[test]
    fn population_std() {
        let s = MetricStat::from_values(vec![1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn report_layout() {
        let cell = evaluate(&[0.0, -0.1], &[-1.0, -2.0], &[1, 2, 3]).unwrap();
        let mut r = EvalReport::new("method");
        r.header.push("seed=7".into());
        for m in ["recon", "ensemble"] {
            for l in ["Level 2", "Level 3"] {
                r.push(m, l, cell.clone());
            }
        }
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed=7");
        assert_eq!(lines[1], "method,level,metric,mean,std,seeds");
        assert_eq!(lines.len(), 2 + 4 * 2);
        assert_eq!(lines[2], "recon,Level 2,auroc,1.000000,0.000000,1;2;3");
        assert!(r.get("ensemble", "Level 3").is_some());
        assert!(r.get("ensemble", "Level 4").is_none());
        let table = r.to_table();
        assert!(table.contains("ensemble") && table.contains("2/2"));
        assert_eq!(pca_csv(&[([1.0, -0.5], "Level 1".into())]), "pc1,pc2,level\n1,-0.5,Level 1\n");
    }
}
