//! One-dimensional convolutional autoencoder.
//!
//! The encoder stacks strided convolutions with ReLU; the decoder mirrors it
//! with transposed convolutions, ReLU between layers and a linear output.
//! The latent feature of a window is the encoder output averaged over time,
//! one value per latent channel.
//!
//! # `CAE1` checkpoint layout (little-endian)
//!
//! magic `43 41 45 31`, u16 version, u32 byte length + UTF-8 `key=value`
//! config text, then for each layer in order its weight array and its bias
//! array, each as u32 element count followed by that many f32 values.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{format_list, parse_list, KeyValues};
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, AdamW, AdamWConfig, ConvLayer, Tensor3};
use crate::par;
use crate::signal::{shuffled_indices, Dataset, SignalWindow};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CAE1";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Windows pushed through the network as one batch. Fixed, so results do
/// not depend on the thread count.
const CHUNK: usize = 16;

/// Geometry of one layer. `output_padding` only matters for decoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl LayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec { in_channels, out_channels, kernel, stride, padding: 0, output_padding: 0 }
    }

    fn to_text(self) -> String {
        format_list(&[self.in_channels, self.out_channels, self.kernel, self.stride, self.padding, self.output_padding])
    }

    fn from_text(text: &str) -> Result<Self> {
        let v: Vec<usize> = parse_list(text)?;
        match v.as_slice() {
            &[in_channels, out_channels, kernel, stride, padding, output_padding] => {
                Ok(LayerSpec { in_channels, out_channels, kernel, stride, padding, output_padding })
            }
            _ => Err(Error::Config(format!("layer spec needs 6 integers, got {text:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch_size: 64, lr: 1e-4, weight_decay: 0.01, seed: 0 }
    }
}

impl TrainConfig {
    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeConfig {
    pub window_len: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub train: TrainConfig,
}

impl CaeConfig {
    /// Default architecture: 1 -> 32 -> 64 channels, kernel 7, stride 4.
    pub fn new(window_len: usize) -> Self {
        Self::mirrored(window_len, &[1, 32, 64], 7, 4)
    }

    /// Encoder through `channels` with a mirrored decoder. Each decoder
    /// layer gets the output padding that restores the length its encoder
    /// twin consumed. Lengths that cannot be encoded are left for
    /// [`build_model`] to reject.
    pub fn mirrored(window_len: usize, channels: &[usize], kernel: usize, stride: usize) -> Self {
        let encoder: Vec<LayerSpec> =
            channels.windows(2).map(|c| LayerSpec::new(c[0], c[1], kernel, stride)).collect();
        let mut lengths = vec![window_len];
        for spec in &encoder {
            let t = *lengths.last().unwrap();
            lengths.push(if t >= spec.kernel && spec.stride > 0 { (t - spec.kernel) / spec.stride + 1 } else { 0 });
        }
        let decoder = encoder
            .iter()
            .enumerate()
            .rev()
            .map(|(i, e)| {
                let t_in = lengths[i];
                let op = if t_in >= e.kernel && e.stride > 0 { (t_in - e.kernel) % e.stride } else { 0 };
                LayerSpec { in_channels: e.out_channels, out_channels: e.in_channels, output_padding: op, ..*e }
            })
            .collect();
        CaeConfig { window_len, encoder, decoder, train: TrainConfig::default() }
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.out_channels)
    }

    fn layers(&self) -> Result<Vec<ConvLayer>> {
        let enc = self.encoder.iter().map(|s| ConvLayer::conv(s.in_channels, s.out_channels, s.kernel, s.stride, s.padding));
        let dec = self.decoder.iter().map(|s| {
            ConvLayer::transposed(s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, s.output_padding)
        });
        enc.chain(dec).collect()
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("window_len", self.window_len);
        kv.set("encoder_layers", self.encoder.len());
        for (i, s) in self.encoder.iter().enumerate() {
            kv.set(&format!("encoder.{i}"), s.to_text());
        }
        kv.set("decoder_layers", self.decoder.len());
        for (i, s) in self.decoder.iter().enumerate() {
            kv.set(&format!("decoder.{i}"), s.to_text());
        }
        kv.set("epochs", self.train.epochs);
        kv.set("batch_size", self.train.batch_size);
        kv.set("lr", self.train.lr);
        kv.set("weight_decay", self.train.weight_decay);
        kv.set("seed", self.train.seed);
        kv.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let specs = |prefix: &str| -> Result<Vec<LayerSpec>> {
            let n: usize = kv.require_parsed(&format!("{prefix}_layers"))?;
            (0..n).map(|i| LayerSpec::from_text(kv.require(&format!("{prefix}.{i}"))?)).collect()
        };
        Ok(CaeConfig {
            window_len: kv.require_parsed("window_len")?,
            encoder: specs("encoder")?,
            decoder: specs("decoder")?,
            train: TrainConfig {
                epochs: kv.require_parsed("epochs")?,
                batch_size: kv.require_parsed("batch_size")?,
                lr: kv.require_parsed("lr")?,
                weight_decay: kv.require_parsed("weight_decay")?,
                seed: kv.require_parsed("seed")?,
            },
        })
    }
}

/// Per-epoch mean reconstruction losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        s
    }
}

/// Time-pooled encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    pub values: Vec<f64>,
}

impl LatentFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for LatentFeature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    config: CaeConfig,
    layers: Vec<ConvLayer>,
}

/// Layer outputs of one forward pass: `inputs[l]` feeds layer `l`,
/// `pre[l]` is its output before the activation.
struct Trace {
    inputs: Vec<Tensor3>,
    pre: Vec<Tensor3>,
    output: Tensor3,
}

/// Validate the shape chain and initialize parameters from `config.train.seed`.
pub fn build_model(config: &CaeConfig) -> Result<CaeModel> {
    let mut layers = config.layers()?;
    check_shapes(config, &layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    for layer in &mut layers {
        layer.init_uniform(&mut rng);
    }
    Ok(CaeModel { config: config.clone(), layers })
}

fn check_shapes(config: &CaeConfig, layers: &[ConvLayer]) -> Result<()> {
    if config.encoder.is_empty() || config.decoder.is_empty() {
        return Err(Error::Config("encoder and decoder need at least one layer each".into()));
    }
    let mut chain = vec![config.window_len.to_string()];
    let mut t = config.window_len;
    let mut channels = 1;
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_channels != channels {
            return Err(Error::Config(format!(
                "layer {i} expects {} channels but receives {channels}; shape chain {}",
                layer.in_channels,
                chain.join(" -> ")
            )));
        }
        match layer.output_len(t) {
            Some(next) => {
                t = next;
                channels = layer.out_channels;
                chain.push(format!("{channels}x{t}"));
            }
            None => {
                chain.push("<empty>".into());
                return Err(Error::Config(format!(
                    "layer {i} produces no output; shape chain {}",
                    chain.join(" -> ")
                )));
            }
        }
    }
    if t != config.window_len || channels != 1 {
        return Err(Error::Config(format!(
            "decoder does not restore 1x{} (got {channels}x{t}); shape chain {}",
            config.window_len,
            chain.join(" -> ")
        )));
    }
    Ok(())
}

impl CaeModel {
    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_channels()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Parameters in checkpoint order: each layer's weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!("model has {} parameters, got {}", self.param_count(), params.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Round every parameter to `f32`, the checkpoint precision.
    pub fn snap_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    fn encoder_len(&self) -> usize {
        self.config.encoder.len()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.config.window_len {
            return Err(Error::Shape(format!("window length {n}, model expects {}", self.config.window_len)));
        }
        Ok(())
    }

    fn trace(&self, x: Tensor3) -> Result<Trace> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur)?;
            let mut a = z.clone();
            if i != last {
                relu_in_place(a.data_mut());
            }
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Ok(Trace { inputs, pre, output: cur })
    }

    fn batch_tensor(&self, windows: &[&[f64]]) -> Result<Tensor3> {
        let w = self.config.window_len;
        let mut data = Vec::with_capacity(windows.len() * w);
        for x in windows {
            self.check_len(x.len())?;
            data.extend_from_slice(x);
        }
        Tensor3::from_vec(windows.len(), 1, w, data)
    }

    /// Encoder activations `(batch, latent_channels, T')`.
    pub fn encode_batch_map(&self, windows: &[&[f64]]) -> Result<Tensor3> {
        let mut cur = self.batch_tensor(windows)?;
        for layer in &self.layers[..self.encoder_len()] {
            cur = layer.forward(&cur)?;
            relu_in_place(cur.data_mut());
        }
        Ok(cur)
    }

    /// Encoder activation `(1, latent_channels, T')` for one window.
    pub fn encode_map(&self, samples: &[f64]) -> Result<Tensor3> {
        self.encode_batch_map(&[samples])
    }

    pub fn encode_batch(&self, windows: &[&[f64]]) -> Result<Vec<LatentFeature>> {
        let code = self.encode_batch_map(windows)?;
        let t = code.time();
        Ok((0..code.batch())
            .map(|b| LatentFeature { values: code.sample(b).chunks(t).map(|row| row.iter().sum::<f64>() / t as f64).collect() })
            .collect())
    }

    pub fn encode(&self, samples: &[f64]) -> Result<LatentFeature> {
        Ok(self.encode_batch(&[samples])?.remove(0))
    }

    pub fn encode_window(&self, window: &SignalWindow) -> Result<LatentFeature> {
        self.encode(&window.to_f64())
    }

    /// Run `f` over fixed-size chunks of the dataset in parallel and
    /// concatenate the per-window results in order.
    fn map_chunks<T: Send>(&self, dataset: &Dataset, f: impl Fn(&[&[f64]]) -> Result<Vec<T>> + Sync + Send) -> Result<Vec<T>> {
        let xs: Vec<Vec<f64>> = dataset.windows().iter().map(SignalWindow::to_f64).collect();
        let chunks: Vec<&[Vec<f64>]> = xs.chunks(CHUNK).collect();
        let parts = par::map(&chunks, |c| {
            let views: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
            f(&views)
        });
        let mut out = Vec::with_capacity(dataset.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Features for every window of `dataset`, in order.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Vec<LatentFeature>> {
        self.map_chunks(dataset, |c| self.encode_batch(c))
    }

    pub fn reconstruct(&self, samples: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(self.batch_tensor(&[samples])?)?.output.into_vec())
    }

    /// Per-window reconstruction MSE.
    pub fn reconstruction_mses(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let x = self.batch_tensor(windows)?;
        let out = self.trace(x.clone())?.output;
        Ok(per_sample_mse(&out, &x))
    }

    pub fn reconstruction_mse(&self, samples: &[f64]) -> Result<f64> {
        Ok(self.reconstruction_mses(&[samples])?[0])
    }

    /// Negated reconstruction MSE: higher means cleaner.
    pub fn recon_score(&self, samples: &[f64]) -> Result<f64> {
        Ok(-self.reconstruction_mse(samples)?)
    }

    pub fn recon_scores(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let mses = self.map_chunks(dataset, |c| self.reconstruction_mses(c))?;
        Ok(mses.into_iter().map(|m| -m).collect())
    }

    /// Mean per-window reconstruction MSE over `dataset`.
    pub fn dataset_loss(&self, dataset: &Dataset) -> Result<f64> {
        let mses = self.map_chunks(dataset, |c| self.reconstruction_mses(c))?;
        Ok(mses.iter().sum::<f64>() / dataset.len() as f64)
    }

    /// Per-window losses of a batch and the parameter gradients (weights then
    /// bias per layer) of `scale` times their sum.
    pub fn batch_loss_and_grads(&self, windows: &[&[f64]], scale: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let x = self.batch_tensor(windows)?;
        let trace = self.trace(x.clone())?;
        let losses = per_sample_mse(&trace.output, &x);
        let per = self.config.window_len as f64;
        let grad: Vec<f64> = trace.output.data().iter().zip(x.data()).map(|(p, t)| 2.0 * (p - t) / per * scale).collect();
        let (b, c, t) = trace.output.shape();
        let mut g = Tensor3::from_vec(b, c, t, grad)?;
        let last = self.layers.len() - 1;
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            if i != last {
                let gin = relu_backward(trace.pre[i].data(), g.data())?;
                let (b, c, t) = g.shape();
                g = Tensor3::from_vec(b, c, t, gin)?;
            }
            let lg = self.layers[i].backward(&trace.inputs[i], &g)?;
            grads[2 * i] = lg.weights;
            grads[2 * i + 1] = lg.bias;
            g = lg.input;
        }
        Ok((losses, grads))
    }

    /// Loss of one window and its parameter gradients, scaled by `scale`.
    pub fn loss_and_grads(&self, samples: &[f64], scale: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        let (losses, grads) = self.batch_loss_and_grads(&[samples], scale)?;
        Ok((losses[0], grads))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.checkpoint_bytes())?;
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for l in &self.layers {
            for arr in [&l.weights, &l.bias] {
                buf.extend_from_slice(&(arr.len() as u32).to_le_bytes());
                for v in arr.iter() {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<CaeModel> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::parse("byte 0", "bad magic, expected \"CAE1\""));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::parse("byte 4", format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::parse("byte 10", "config block is not UTF-8"))?;
        let config = CaeConfig::from_text(text)?;
        let mut layers = config.layers()?;
        check_shapes(&config, &layers)?;
        for layer in &mut layers {
            for arr in [&mut layer.weights, &mut layer.bias] {
                let at = r.pos;
                let len = r.u32()? as usize;
                if len != arr.len() {
                    return Err(Error::parse(format!("byte {at}"), format!("array of {len} values, config implies {}", arr.len())));
                }
                for v in arr.iter_mut() {
                    let x = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                    if !x.is_finite() {
                        return Err(Error::parse(format!("byte {}", r.pos - 4), "non-finite parameter"));
                    }
                    *v = x as f64;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(format!("byte {}", r.pos), format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(CaeModel { config, layers })
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CaeModel> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

fn per_sample_mse(pred: &Tensor3, target: &Tensor3) -> Vec<f64> {
    let n = pred.channels() * pred.time();
    (0..pred.batch())
        .map(|b| pred.sample(b).iter().zip(target.sample(b)).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64)
        .collect()
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::parse(
                format!("byte {}", self.pos),
                format!("truncated: need {end} bytes, file has {}", self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Mini-batch AdamW on reconstruction MSE.
///
/// Each epoch visits the training windows in a seeded shuffle. The epoch's
/// train loss is the mean of per-window losses taken during the pass, summed
/// in dataset order; validation loss is measured after the epoch. The model
/// with the lowest validation loss is returned, rounded to `f32`.
pub fn train(model: &CaeModel, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<(CaeModel, TrainHistory)> {
    model.check_len(train_set.window_len())?;
    model.check_len(val_set.window_len())?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let xs: Vec<Vec<f64>> = train_set.windows().iter().map(SignalWindow::to_f64).collect();
    let n = xs.len();
    let mut current = model.clone();
    let mut best: Option<(f64, CaeModel)> = None;
    let mut history = TrainHistory::default();
    let mut opt = AdamW::new(config.optimizer(), current.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sample_loss = vec![0.0; n];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
            let results = par::map(&chunks, |c| {
                let views: Vec<&[f64]> = c.iter().map(|&i| xs[i].as_slice()).collect();
                current.batch_loss_and_grads(&views, scale)
            });
            let mut sum: Vec<Vec<f64>> = Vec::new();
            for (c, res) in chunks.iter().zip(results) {
                let (losses, grads) = res?;
                for (&i, &loss) in c.iter().zip(&losses) {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("training loss at epoch {} batch {bi}", epoch + 1)));
                    }
                    sample_loss[i] = loss;
                }
                if sum.is_empty() {
                    sum = grads;
                } else {
                    for (acc, g) in sum.iter_mut().zip(&grads) {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
            let mut slots: Vec<&mut [f64]> = Vec::with_capacity(sum.len());
            for l in current.layers.iter_mut() {
                slots.push(&mut l.weights);
                slots.push(&mut l.bias);
            }
            let views: Vec<&[f64]> = sum.iter().map(Vec::as_slice).collect();
            opt.step_many(&mut slots, &views).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {} batch {bi}", epoch + 1)),
                other => other,
            })?;
        }
        let train_loss = sample_loss.iter().sum::<f64>() / n as f64;
        let val_loss = current.dataset_loss(val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {}", epoch + 1)));
        }
        log::debug!("epoch {}: train {train_loss:.6} val {val_loss:.6}", epoch + 1);
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, current.clone()));
        }
    }
    let mut out = best.map_or(current, |(_, m)| m);
    out.snap_to_f32();
    Ok((out, history))
}

/// The first `ceil(fraction * n)` windows of a seeded shuffle, in dataset order.
pub fn finetune_subset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let m = ((fraction * dataset.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    if m == 0 {
        return Err(Error::InvalidArgument("finetune subset is empty".into()));
    }
    let mut idx = shuffled_indices(dataset.len(), seed)[..m].to_vec();
    idx.sort_unstable();
    dataset.subset(&idx)
}

/// Continue training `model` on a fraction of `new_train` with a fresh
/// optimizer. The subset doubles as the selection set.
pub fn finetune(model: &CaeModel, new_train: &Dataset, fraction: f64, config: &TrainConfig) -> Result<(CaeModel, TrainHistory)> {
    let subset = finetune_subset(new_train, fraction, config.seed)?;
    train(model, &subset, &subset, config)
}
