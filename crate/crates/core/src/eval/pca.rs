use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Two-component PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

pub fn pca_fit<F: AsRef<[f64]>>(features: &[F]) -> Result<PcaModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = features[0].as_ref().len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("PCA to 2 components needs dimension >= 2, got {d}")));
    }
    let mut mean = vec![0.0; d];
    for (i, f) in features.iter().enumerate() {
        let f = f.as_ref();
        if f.len() != d {
            return Err(Error::Shape(format!("feature {i} has dimension {}, expected {d}", f.len())));
        }
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| features[i].as_ref()[j] - mean[j]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    // n < d leaves only n singular directions; pad with zero rows so two always exist
    let x = if n < d { x.resize_vertically(d, 0.0) } else { x };
    let svd = x.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonFinite("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let pick = |r: usize| -> (Vec<f64>, f64) {
        let mut c: Vec<f64> = v_t.row(order[r]).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        let s = svd.singular_values[order[r]];
        (c, s * s / (n - 1) as f64)
    };
    let (c0, v0) = pick(0);
    let (c1, v1) = pick(1);
    Ok(PcaModel { mean, components: [c0, c1], explained_variance: [v0, v1] })
}

impl PcaModel {
    pub fn project(&self, feature: &[f64]) -> Result<[f64; 2]> {
        if feature.len() != self.mean.len() {
            return Err(Error::Shape(format!("feature has dimension {}, PCA expects {}", feature.len(), self.mean.len())));
        }
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = feature.iter().zip(&self.mean).zip(c).map(|((f, m), w)| (f - m) * w).sum();
        }
        Ok(out)
    }
}

pub fn pca_project<F: AsRef<[f64]>>(model: &PcaModel, features: &[F]) -> Result<Vec<[f64; 2]>> {
    features.iter().map(|f| model.project(f.as_ref())).collect()
}
