use crate::error::{Error, Result};

/// Dense `(batch, channels, time)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    channels: usize,
    time: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        Tensor3 { batch, channels, time, data: vec![0.0; batch * channels * time] }
    }

    pub fn from_vec(batch: usize, channels: usize, time: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * channels * time {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold shape ({batch}, {channels}, {time})",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Tensor3 { batch, channels, time, data })
    }

    /// Single-sample, single-channel tensor.
    pub fn from_signal(samples: &[f64]) -> Self {
        Tensor3 { batch: 1, channels: 1, time: samples.len(), data: samples.to_vec() }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.time)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.channels * self.time;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.channels * self.time;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("dot of {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}
