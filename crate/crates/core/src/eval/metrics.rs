use std::cmp::Ordering;

use crate::error::{Error, Result};

/// A scored window with noisy windows as the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    /// Higher is noisier.
    pub noisiness: f64,
    pub is_noisy: bool,
}

impl ScoredSample {
    /// Detector and baseline scores are "higher is cleaner"; this is the only
    /// place that orientation is flipped.
    pub fn from_score(score: f64, is_noisy: bool) -> Self {
        ScoredSample { noisiness: -score, is_noisy }
    }
}

fn check(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(i) = samples.iter().position(|s| !s.noisiness.is_finite()) {
        return Err(Error::NonFinite(format!("noisiness of sample {i}")));
    }
    let p = samples.iter().filter(|s| s.is_noisy).count();
    Ok((p, samples.len() - p))
}

fn sorted_by_noisiness(samples: &[ScoredSample], descending: bool) -> Vec<ScoredSample> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| {
        let o = a.noisiness.partial_cmp(&b.noisiness).unwrap_or(Ordering::Equal);
        if descending { o.reverse() } else { o }
    });
    v
}

/// Mann-Whitney AUROC from mid-rank sums; ties count one half.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (p, n) = check(samples)?;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC needs both classes, got {p} noisy and {n} clean")));
    }
    let v = sorted_by_noisiness(samples, false);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1].noisiness == v[i].noisiness {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * v[i..=j].iter().filter(|s| s.is_noisy).count() as f64;
        i = j + 1;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision over distinct thresholds, tied scores forming one step.
pub fn auprc(samples: &[ScoredSample]) -> Result<f64> {
    let (p, _) = check(samples)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one noisy sample".into()));
    }
    let v = sorted_by_noisiness(samples, true);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].noisiness == v[i].noisiness {
            if v[j].is_noisy {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / p as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        pos.iter()
            .map(|&x| ScoredSample { noisiness: x, is_noisy: true })
            .chain(neg.iter().map(|&x| ScoredSample { noisiness: x, is_noisy: false }))
            .collect()
    }

    fn brute_auroc(s: &[ScoredSample]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for a in s.iter().filter(|x| x.is_noisy) {
            for b in s.iter().filter(|x| !x.is_noisy) {
                pairs += 1.0;
                if a.noisiness > b.noisiness {
                    num += 1.0;
                } else if a.noisiness == b.noisiness {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    fn brute_auprc(s: &[ScoredSample]) -> f64 {
        let p = s.iter().filter(|x| x.is_noisy).count() as f64;
        let mut ts: Vec<f64> = s.iter().map(|x| x.noisiness).collect();
        ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ts.dedup();
        let mut prev = 0.0;
        let mut ap = 0.0;
        for t in ts {
            let tp = s.iter().filter(|x| x.is_noisy && x.noisiness >= t).count() as f64;
            let k = s.iter().filter(|x| x.noisiness >= t).count() as f64;
            ap += (tp / p - prev) * (tp / k);
            prev = tp / p;
        }
        ap
    }

    #[test]
    fn hand_examples() {
        let s = set(&[0.9, 0.4], &[0.5, 0.1]);
        assert_eq!(auroc(&s).unwrap(), 0.75);
        assert!((auprc(&s).unwrap() - 0.8333).abs() < 1e-4);
        assert!((auprc(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        let sep = set(&[3.0, 4.0], &[1.0, 2.0]);
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        assert_eq!(auprc(&sep).unwrap(), 1.0);
        let flat = set(&[1.0; 3], &[1.0; 7]);
        assert_eq!(auroc(&flat).unwrap(), 0.5);
        assert!((auprc(&flat).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn orientation_is_negated_score() {
        let s = ScoredSample::from_score(-7.5, true);
        assert_eq!(s.noisiness, 7.5);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(auroc(&set(&[1.0], &[])), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&set(&[], &[1.0])), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auprc(&set(&[], &[1.0])), Err(Error::UndefinedMetric(_))));
        assert_eq!(auprc(&set(&[1.0], &[])).unwrap(), 1.0);
        assert!(auroc(&set(&[f64::NAN], &[1.0])).is_err());
    }

    fn scored() -> impl Strategy<Value = Vec<ScoredSample>> {
        proptest::collection::vec((0i32..12, any::<bool>()), 2..200).prop_map(|v| {
            v.into_iter().map(|(s, y)| ScoredSample { noisiness: s as f64 * 0.37, is_noisy: y }).collect()
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_oracle(mut s in scored()) {
            s[0].is_noisy = true;
            s[1].is_noisy = false;
            prop_assert_eq!(auroc(&s).unwrap(), brute_auroc(&s));
        }

        #[test]
        fn auprc_matches_threshold_oracle(mut s in scored()) {
            s[0].is_noisy = true;
            prop_assert!((auprc(&s).unwrap() - brute_auprc(&s)).abs() <= 1e-12);
        }

        #[test]
        fn auroc_invariant_to_monotone_transform(mut s in scored()) {
            s[0].is_noisy = true;
            s[1].is_noisy = false;
            let t: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { noisiness: (x.noisiness * 3.0).exp() - 1.0, ..*x }).collect();
            prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        }

        #[test]
        fn flipped_labels_complement_without_ties(n in 2usize..60, seed in any::<u64>()) {
            let mut s: Vec<ScoredSample> = (0..n)
                .map(|i| ScoredSample { noisiness: i as f64, is_noisy: (seed >> (i % 64)) & 1 == 1 })
                .collect();
            s[0].is_noisy = true;
            s[1].is_noisy = false;
            let f: Vec<ScoredSample> = s.iter().map(|x| ScoredSample { is_noisy: !x.is_noisy, ..*x }).collect();
            prop_assert!((auroc(&f).unwrap() - (1.0 - auroc(&s).unwrap())).abs() < 1e-12);
        }

        #[test]
        fn metrics_lie_in_unit_interval(mut s in scored()) {
            s[0].is_noisy = true;
            s[1].is_noisy = false;
            let (a, p) = (auroc(&s).unwrap(), auprc(&s).unwrap());
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&p));
        }
    }
}
