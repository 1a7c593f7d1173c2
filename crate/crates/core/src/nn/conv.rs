//! 1-D convolution and transposed convolution with exact backward passes.
//!
//! Both layer kinds index weights as `[short_ch, long_ch, K]`, where the
//! "short" side is the strided one: the output of a convolution, the input
//! of a transposed convolution. Tap `k` of short position `t` touches long
//! position `t * stride + k - padding`. With that convention a convolution
//! and a transposed convolution sharing one weight array are adjoint, and
//! three loops (gather, scatter, correlate) cover every pass.

use nalgebra::{DMatrixView, DMatrixViewMut};
use rand::Rng;

use super::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra trailing positions on a transposed output; ignored for convolutions.
    pub output_padding: usize,
    pub transposed: bool,
    /// `(C_out, C_in, K)` for a convolution, `(C_in, C_out, K)` when transposed.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of one layer, flattened like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor3,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::zeroed(in_channels, out_channels, kernel, stride, padding, 0, false)
    }

    pub fn transposed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        Self::zeroed(in_channels, out_channels, kernel, stride, padding, output_padding, true)
    }

    fn zeroed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        transposed: bool,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv layer needs positive channels, kernel and stride (got {in_channels}->{out_channels}, k={kernel}, s={stride})"
            )));
        }
        if transposed && output_padding >= stride {
            return Err(Error::InvalidArgument(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding: if transposed { output_padding } else { 0 },
            transposed,
            weights: vec![0.0; in_channels * out_channels * kernel],
            bias: vec![0.0; out_channels],
        })
    }

    /// Uniform `(-a, a)` init with `a = 1 / sqrt(C_in * K)`. Values are drawn
    /// as `f32` so the layer survives a 32-bit checkpoint unchanged.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let a = 1.0 / ((self.in_channels * self.kernel) as f64).sqrt();
        let a32 = a as f32;
        for w in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *w = rng.random_range(-a32..a32) as f64;
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn short_channels(&self) -> usize {
        if self.transposed { self.in_channels } else { self.out_channels }
    }

    fn long_channels(&self) -> usize {
        if self.transposed { self.out_channels } else { self.in_channels }
    }

    /// Output length for an input of length `t`, or `None` if it would be < 1.
    pub fn output_len(&self, t: usize) -> Option<usize> {
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        let t = t as isize;
        let out = if self.transposed {
            if t < 1 {
                return None;
            }
            (t - 1) * s + k - 2 * p + self.output_padding as isize
        } else {
            let span = t + 2 * p - k;
            if span < 0 {
                return None;
            }
            span / s + 1
        };
        (out >= 1).then_some(out as usize)
    }

    fn geometry(&self, input: &Tensor3) -> Result<Geometry> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let t_out = self.output_len(input.time()).ok_or_else(|| {
            Error::Shape(format!(
                "input length {} gives empty output (k={}, s={}, p={})",
                input.time(),
                self.kernel,
                self.stride,
                self.padding
            ))
        })?;
        let (t_short, t_long) = if self.transposed { (input.time(), t_out) } else { (t_out, input.time()) };
        Ok(Geometry {
            short_ch: self.short_channels(),
            long_ch: self.long_channels(),
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            t_short,
            t_long,
            t_out,
        })
    }

    /// Batched forward pass: one matrix product per layer for the whole batch.
    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        let g = self.geometry(input)?;
        let nb = input.batch();
        let mut out = Tensor3::zeros(nb, self.out_channels, g.t_out);
        for b in 0..nb {
            for (row, &bias) in out.sample_mut(b).chunks_mut(g.t_out).zip(&self.bias) {
                row.fill(bias);
            }
        }
        if self.transposed {
            let short = g.to_channel_major(input.data(), nb);
            let col = g.short_times_wt(&self.weights, &short, nb);
            g.col2im(&col, out.data_mut(), nb);
        } else {
            let col = g.im2col(input.data(), nb);
            let short = g.col_times_w(&self.weights, &col, nb);
            g.add_from_channel_major(&short, out.data_mut(), nb);
        }
        Ok(out)
    }

    /// Gradients with respect to the input, weights and bias.
    pub fn backward(&self, input: &Tensor3, grad_out: &Tensor3) -> Result<LayerGrads> {
        let g = self.geometry(input)?;
        let nb = input.batch();
        let expect = (nb, self.out_channels, g.t_out);
        if grad_out.shape() != expect {
            return Err(Error::Shape(format!("grad_out shape {:?}, forward output {:?}", grad_out.shape(), expect)));
        }
        let mut bias = vec![0.0; self.bias.len()];
        for b in 0..nb {
            for (gb, row) in bias.iter_mut().zip(grad_out.sample(b).chunks(g.t_out)) {
                *gb += row.iter().sum::<f64>();
            }
        }
        let mut weights = vec![0.0; self.weights.len()];
        let mut grad_input = Tensor3::zeros(nb, input.channels(), input.time());
        // the short side is the output of a convolution and the input of a transposed one
        let (short_src, long_src) = if self.transposed { (input, grad_out) } else { (grad_out, input) };
        let short = g.to_channel_major(short_src.data(), nb);
        let col = g.im2col(long_src.data(), nb);
        g.correlate(&col, &short, &mut weights, nb);
        if self.transposed {
            let gx = g.col_times_w(&self.weights, &col, nb);
            g.add_from_channel_major(&gx, grad_input.data_mut(), nb);
        } else {
            let gcol = g.short_times_wt(&self.weights, &short, nb);
            g.col2im(&gcol, grad_input.data_mut(), nb);
        }
        Ok(LayerGrads { input: grad_input, weights, bias })
    }
}

/// Index bookkeeping shared by every pass. Short-side activations are
/// handled channel-major (`[sc][b][t]`) so a batch forms one matrix.
struct Geometry {
    short_ch: usize,
    long_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    t_short: usize,
    t_long: usize,
    t_out: usize,
}

impl Geometry {
    /// Short positions `t` for which tap `k` lands inside the long signal.
    fn valid(&self, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        if self.t_long + p < k + 1 {
            return (0, 0);
        }
        let hi = ((self.t_long - 1 + p - k) / s + 1).min(self.t_short);
        (lo, hi.max(lo))
    }

    #[inline]
    fn long_index(&self, t: usize, k: usize) -> usize {
        t * self.stride + k - self.padding
    }

    fn lk(&self) -> usize {
        self.long_ch * self.kernel
    }

    /// `[b][sc][t]` to `[sc][b][t]`.
    fn to_channel_major(&self, x: &[f64], nb: usize) -> Vec<f64> {
        let t = self.t_short;
        let mut out = vec![0.0; x.len()];
        for b in 0..nb {
            for sc in 0..self.short_ch {
                out[(sc * nb + b) * t..][..t].copy_from_slice(&x[(b * self.short_ch + sc) * t..][..t]);
            }
        }
        out
    }

    /// Add `[sc][b][t]` into `[b][sc][t]`.
    fn add_from_channel_major(&self, x: &[f64], dst: &mut [f64], nb: usize) {
        let t = self.t_short;
        for b in 0..nb {
            for sc in 0..self.short_ch {
                let d = &mut dst[(b * self.short_ch + sc) * t..][..t];
                for (a, v) in d.iter_mut().zip(&x[(sc * nb + b) * t..][..t]) {
                    *a += v;
                }
            }
        }
    }

    /// `col[(lc, k)][b, t] = long[b, lc, t*s + k - p]`, zero outside the
    /// signal: a column-major `(nb * t_short) x (long_ch * K)` matrix.
    fn im2col(&self, long: &[f64], nb: usize) -> Vec<f64> {
        let rows = nb * self.t_short;
        let mut col = vec![0.0; rows * self.lk()];
        for lc in 0..self.long_ch {
            for k in 0..self.kernel {
                let (lo, hi) = self.valid(k);
                if lo >= hi {
                    continue;
                }
                let start = self.long_index(lo, k);
                for b in 0..nb {
                    let src = &long[(b * self.long_ch + lc) * self.t_long..][..self.t_long];
                    let dst = &mut col[(lc * self.kernel + k) * rows + b * self.t_short..][..self.t_short];
                    for (d, &v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(self.stride)) {
                        *d = v;
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Geometry::im2col`], accumulating into `long`.
    fn col2im(&self, col: &[f64], long: &mut [f64], nb: usize) {
        let rows = nb * self.t_short;
        for lc in 0..self.long_ch {
            for k in 0..self.kernel {
                let (lo, hi) = self.valid(k);
                if lo >= hi {
                    continue;
                }
                let start = self.long_index(lo, k);
                for b in 0..nb {
                    let dst = &mut long[(b * self.long_ch + lc) * self.t_long..][..self.t_long];
                    let src = &col[(lc * self.kernel + k) * rows + b * self.t_short..][..self.t_short];
                    for (d, &v) in dst[start..].iter_mut().step_by(self.stride).zip(&src[lo..hi]) {
                        *d += v;
                    }
                }
            }
        }
    }

    /// Weights `[sc][lc][k]` viewed column-major as `(long_ch * K) x short_ch`.
    fn weight_matrix<'a>(&self, w: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(w, self.lk(), self.short_ch)
    }

    /// `short[sc][b, t] = sum_(lc, k) w[sc, lc, k] * col[(lc, k)][b, t]`
    fn col_times_w(&self, w: &[f64], col: &[f64], nb: usize) -> Vec<f64> {
        let rows = nb * self.t_short;
        let c = DMatrixView::from_slice(col, rows, self.lk());
        let mut out = vec![0.0; rows * self.short_ch];
        DMatrixViewMut::from_slice(&mut out, rows, self.short_ch).gemm(1.0, &c, &self.weight_matrix(w), 0.0);
        out
    }

    /// `col[(lc, k)][b, t] = sum_sc w[sc, lc, k] * short[sc][b, t]`
    fn short_times_wt(&self, w: &[f64], short: &[f64], nb: usize) -> Vec<f64> {
        let rows = nb * self.t_short;
        let s = DMatrixView::from_slice(short, rows, self.short_ch);
        (s * self.weight_matrix(w).transpose()).data.into()
    }

    /// `gw[sc, lc, k] += sum_(b, t) short[sc][b, t] * col[(lc, k)][b, t]`
    fn correlate(&self, col: &[f64], short: &[f64], gw: &mut [f64], nb: usize) {
        let rows = nb * self.t_short;
        let c = DMatrixView::from_slice(col, rows, self.lk());
        let s = DMatrixView::from_slice(short, rows, self.short_ch);
        DMatrixViewMut::from_slice(gw, self.lk(), self.short_ch).gemm(1.0, &c.transpose(), &s, 1.0);
    }
}

fn expect_kind(layer: &ConvLayer, transposed: bool) -> Result<()> {
    if layer.transposed != transposed {
        let want = if transposed { "transposed" } else { "regular" };
        return Err(Error::InvalidArgument(format!("expected a {want} convolution layer")));
    }
    Ok(())
}

pub fn conv1d_forward(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    expect_kind(layer, false)?;
    layer.forward(input)
}

pub fn tconv1d_forward(input: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    expect_kind(layer, true)?;
    layer.forward(input)
}

pub fn conv1d_backward(input: &Tensor3, layer: &ConvLayer, grad_out: &Tensor3) -> Result<LayerGrads> {
    expect_kind(layer, false)?;
    layer.backward(input, grad_out)
}

pub fn tconv1d_backward(input: &Tensor3, layer: &ConvLayer, grad_out: &Tensor3) -> Result<LayerGrads> {
    expect_kind(layer, true)?;
    layer.backward(input, grad_out)
}
