//! Seeded synthetic ECG and noise artifacts for desk-scale experiments.
//!
//! A beat is five Gaussian bumps (P, Q, R, S, T) placed at fixed offsets
//! from the R peak; beats repeat at `60 / heart_rate` seconds with seeded
//! jitter. Noise is a mix of sinusoidal baseline wander, sinusoidal
//! powerline interference and low-passed white "muscle" noise, rescaled to a
//! target SNR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;
use crate::signal::{Dataset, Label, SignalWindow};

/// One Gaussian bump of a beat, timed relative to the R peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub offset_s: f64,
    pub amplitude: f64,
    pub width_s: f64,
}

impl Wave {
    pub const fn new(offset_s: f64, amplitude: f64, width_s: f64) -> Self {
        Wave { offset_s, amplitude, width_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgParams {
    pub heart_rate: f64,
    pub sample_rate: f64,
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    /// Each RR interval is scaled by a uniform factor in `1 ± rr_jitter`.
    pub rr_jitter: f64,
}

impl Default for EcgParams {
    fn default() -> Self {
        EcgParams {
            heart_rate: 70.0,
            sample_rate: 256.0,
            p: Wave::new(-0.2, 0.15, 0.025),
            q: Wave::new(-0.035, -0.15, 0.01),
            r: Wave::new(0.0, 1.0, 0.012),
            s: Wave::new(0.035, -0.25, 0.01),
            t: Wave::new(0.28, 0.3, 0.045),
            rr_jitter: 0.05,
        }
    }
}

impl EcgParams {
    pub fn waves(&self) -> [Wave; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.heart_rate) {
            return Err(Error::InvalidArgument(format!("heart rate {} outside [30, 220] bpm", self.heart_rate)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        for w in self.waves() {
            if !(w.width_s > 0.0 && w.width_s.is_finite()) || !w.amplitude.is_finite() || !w.offset_s.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid wave {w:?}")));
            }
        }
        if !(0.0..0.5).contains(&self.rr_jitter) {
            return Err(Error::InvalidArgument(format!("rr_jitter must lie in [0, 0.5), got {}", self.rr_jitter)));
        }
        Ok(())
    }
}

pub fn gen_clean_ecg(params: &EcgParams, duration_s: f64, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration_s}")));
    }
    let fs = params.sample_rate;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 60.0 / params.heart_rate;
    let mut r_times = Vec::new();
    // start one beat early so waves spilling into the window are present
    let mut t = rng.random::<f64>() * period - period;
    while t < duration_s + period {
        r_times.push(t);
        t += period * (1.0 + params.rr_jitter * rng.random_range(-1.0..=1.0));
    }
    let waves = params.waves();
    Ok((0..n)
        .map(|i| {
            let ti = i as f64 / fs;
            let mut v = 0.0;
            for &r in &r_times {
                for w in &waves {
                    let z = (ti - r - w.offset_s) / w.width_s;
                    if z.abs() < 8.0 {
                        v += w.amplitude * (-0.5 * z * z).exp();
                    }
                }
            }
            v
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Amplitude and frequency (Hz) of the wander sinusoid.
    pub baseline_wander: (f64, f64),
    /// Amplitude and frequency (Hz), normally 50 or 60.
    pub powerline: (f64, f64),
    /// Amplitude (std) and bandwidth (Hz) of the muscle noise.
    pub muscle: (f64, f64),
    /// Rescale the summed noise to this SNR; `None` keeps the raw amplitudes
    /// and `+inf` adds nothing.
    pub snr_db: Option<f64>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { baseline_wander: (0.0, 0.3), powerline: (0.0, 50.0), muscle: (0.0, 40.0), snr_db: None }
    }

    fn is_silent(&self) -> bool {
        self.baseline_wander.0 == 0.0 && self.powerline.0 == 0.0 && self.muscle.0 == 0.0
    }

    fn validate(&self) -> Result<()> {
        for (name, (a, f)) in [("baseline_wander", self.baseline_wander), ("powerline", self.powerline), ("muscle", self.muscle)] {
            if !(a >= 0.0 && a.is_finite()) || !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} needs amplitude >= 0 and frequency > 0, got ({a}, {f})")));
            }
        }
        if self.snr_db.is_some_and(f64::is_nan) {
            return Err(Error::InvalidArgument("snr_db is NaN".into()));
        }
        Ok(())
    }
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// The unscaled noise of `spec` for `n` samples at `fs` Hz.
pub fn noise_component(spec: &NoiseSpec, n: usize, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wander_phase = rng.random::<f64>() * 2.0 * PI;
    let line_phase = rng.random::<f64>() * 2.0 * PI;
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    // moving average of length ~fs / (2 * bandwidth) as a crude low-pass
    let taps = ((fs / (2.0 * spec.muscle.1)).round() as usize).max(1);
    let gain = (taps as f64).sqrt();
    let (wa, wf) = spec.baseline_wander;
    let (pa, pf) = spec.powerline;
    let ma = spec.muscle.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let mut v = wa * (2.0 * PI * wf * t + wander_phase).sin() + pa * (2.0 * PI * pf * t + line_phase).sin();
            if ma > 0.0 {
                let lo = i.saturating_sub(taps - 1);
                v += ma * gain * white[lo..=i].iter().sum::<f64>() / taps as f64;
            }
            v
        })
        .collect()
}

/// `signal` plus noise, rescaled so `10 log10(P_signal / P_noise) == snr_db`.
pub fn add_noise(signal: &[f64], spec: &NoiseSpec, sample_rate: f64, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.is_silent() || spec.snr_db == Some(f64::INFINITY) {
        return Ok(signal.to_vec());
    }
    let mut noise = noise_component(spec, signal.len(), sample_rate, seed);
    if let Some(snr) = spec.snr_db {
        let ps = power(signal);
        if ps == 0.0 {
            return Err(Error::InvalidArgument("cannot target an SNR on a zero-power signal".into()));
        }
        let pn = power(&noise);
        if pn == 0.0 {
            return Ok(signal.to_vec());
        }
        let k = (ps / pn / 10f64.powf(snr / 10.0)).sqrt();
        noise.iter_mut().for_each(|v| *v *= k);
    }
    Ok(signal.iter().zip(noise).map(|(s, n)| s + n).collect())
}

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub sizes: [usize; 3],
    pub window_len: usize,
    pub sample_rate: f64,
    pub heart_rate: (f64, f64),
    /// Uniform range of the per-window scale applied to every wave amplitude.
    pub amplitude_scale: (f64, f64),
    pub base: EcgParams,
    pub powerline_hz: f64,
    /// Target SNR (dB) of Levels 1, 2 and 3.
    pub snr_db: [f64; 3],
    /// Extra Level 3 wander amplitude as a multiple of the R amplitude.
    pub level3_wander: (f64, f64),
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            sizes: [2000, 400, 400],
            window_len: 512,
            sample_rate: 256.0,
            heart_rate: (55.0, 95.0),
            amplitude_scale: (0.8, 1.2),
            base: EcgParams::default(),
            powerline_hz: 50.0,
            snr_db: [30.0, 5.0, -5.0],
            level3_wander: (2.0, 3.0),
        }
    }
}

impl BenchmarkSpec {
    /// A second recorder population: faster hearts, smaller R, taller T and
    /// 60 Hz mains.
    pub fn shifted() -> Self {
        let mut base = EcgParams::default();
        base.r.amplitude = 0.7;
        base.s.amplitude = -0.35;
        base.t = Wave::new(0.24, 0.45, 0.04);
        base.p.amplitude = 0.1;
        BenchmarkSpec {
            heart_rate: (85.0, 130.0),
            amplitude_scale: (0.6, 1.0),
            base,
            powerline_hz: 60.0,
            ..BenchmarkSpec::default()
        }
    }

    pub fn with_sizes(mut self, sizes: [usize; 3]) -> Self {
        self.sizes = sizes;
        self
    }
}

/// Independent per-window seed.
fn window_seed(seed: u64, level: u64, index: u64) -> u64 {
    let mut z = seed ^ level.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gen_window(spec: &BenchmarkSpec, level: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = spec.base;
    params.sample_rate = spec.sample_rate;
    params.heart_rate = rng.random_range(spec.heart_rate.0..=spec.heart_rate.1);
    let scale = rng.random_range(spec.amplitude_scale.0..=spec.amplitude_scale.1);
    for w in [&mut params.p, &mut params.q, &mut params.r, &mut params.s, &mut params.t] {
        w.amplitude *= scale;
    }
    let duration = spec.window_len as f64 / spec.sample_rate;
    let clean = gen_clean_ecg(&params, duration, rng.random())?;
    let noise = NoiseSpec {
        baseline_wander: (rng.random_range(0.2..1.0), rng.random_range(0.15..0.5)),
        powerline: (rng.random_range(0.0..0.6), spec.powerline_hz),
        muscle: (rng.random_range(0.3..1.0), rng.random_range(20.0..60.0)),
        snr_db: Some(spec.snr_db[level]),
    };
    let mut x = add_noise(&clean, &noise, spec.sample_rate, rng.random())?;
    if level == 2 {
        let amp = params.r.amplitude * rng.random_range(spec.level3_wander.0..=spec.level3_wander.1);
        let wander = NoiseSpec { baseline_wander: (amp, rng.random_range(0.2..0.5)), snr_db: None, ..NoiseSpec::none() };
        x = add_noise(&x, &wander, spec.sample_rate, rng.random())?;
    }
    x.truncate(spec.window_len);
    Ok(x)
}

fn gen_level(spec: &BenchmarkSpec, level: usize, seed: u64) -> Result<Dataset> {
    let label = [Label::Level1, Label::Level2, Label::Level3][level];
    let windows: Vec<Result<SignalWindow>> = par::map_range(spec.sizes[level], |i| {
        let x = gen_window(spec, level, window_seed(seed, level as u64, i as u64))?;
        Ok(SignalWindow::new(x.into_iter().map(|v| v as f32).collect(), spec.sample_rate as f32, label, format!("w{i}")))
    });
    Dataset::new(windows.into_iter().collect::<Result<_>>()?)
}

/// Level 1, 2 and 3 corpora.
pub fn make_benchmark_with(spec: &BenchmarkSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if spec.window_len == 0 || spec.sizes.contains(&0) {
        return Err(Error::InvalidArgument("benchmark sizes and window length must be positive".into()));
    }
    Ok((gen_level(spec, 0, seed)?, gen_level(spec, 1, seed)?, gen_level(spec, 2, seed)?))
}

pub fn make_benchmark(seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    make_benchmark_with(&BenchmarkSpec::default(), seed)
}
