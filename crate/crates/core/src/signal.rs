//! Dataset container and on-disk formats.
//!
//! # `ECGW` v1 binary layout (little-endian)
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `45 43 47 57`       |
//! | 4      | 2    | u16 version = 1           |
//! | 6      | 2    | u16 reserved = 0          |
//! | 8      | 4    | u32 window_count          |
//! | 12     | 4    | u32 window_len            |
//! | 16     | 4    | f32 sample_rate           |
//! | 20     | ...  | per window: u8 label, then window_len f32 samples |
//!
//! The CSV form has the header `label,s0,s1,...,s{W-1}` and one window per
//! row. It carries no sample rate, so the reader is told what to assume.
//!
//! Samples are held as `f32`, the storage precision of both formats, which
//! keeps the binary round trip exact. Models widen to `f64` internally.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const ECGW_MAGIC: [u8; 4] = *b"ECGW";
pub const ECGW_VERSION: u16 = 1;
pub const ECGW_HEADER_LEN: usize = 20;

/// Noise-level annotation of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Unknown,
    Level1,
    Level2,
    Level3,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Unknown => 0,
            Label::Level1 => 1,
            Label::Level2 => 2,
            Label::Level3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Unknown),
            1 => Some(Label::Level1),
            2 => Some(Label::Level2),
            3 => Some(Label::Level3),
            _ => None,
        }
    }

    /// Level 2 and Level 3 count as noisy.
    pub fn is_noisy(self) -> bool {
        matches!(self, Label::Level2 | Label::Level3)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Unknown => write!(f, "Unknown"),
            Label::Level1 => write!(f, "Level 1"),
            Label::Level2 => write!(f, "Level 2"),
            Label::Level3 => write!(f, "Level 3"),
        }
    }
}

/// A fixed-length single-lead ECG segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub samples: Vec<f32>,
    pub sample_rate: f32,
    pub label: Label,
    /// Opaque provenance tag. Not persisted; loaders assign `w{index}`.
    pub source_id: String,
}

impl SignalWindow {
    pub fn new(samples: Vec<f32>, sample_rate: f32, label: Label, source_id: impl Into<String>) -> Self {
        SignalWindow { samples, sample_rate, label, source_id: source_id.into() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

/// A nonempty, homogeneous collection of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<SignalWindow>,
    window_len: usize,
    sample_rate: f32,
}

impl Dataset {
    /// Validates every invariant: nonempty, one window length, one positive
    /// sample rate, finite samples.
    pub fn new(windows: Vec<SignalWindow>) -> Result<Self> {
        let first = windows.first().ok_or(Error::EmptyDataset)?;
        let window_len = first.len();
        let sample_rate = first.sample_rate;
        if window_len == 0 {
            return Err(Error::InvalidArgument("window length must be positive".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample rate must be positive, got {sample_rate}")));
        }
        for (i, w) in windows.iter().enumerate() {
            if w.len() != window_len {
                return Err(Error::Shape(format!(
                    "window {i} has length {}, expected {window_len}",
                    w.len()
                )));
            }
            if w.sample_rate != sample_rate {
                return Err(Error::InvalidArgument(format!(
                    "window {i} has sample rate {}, expected {sample_rate}",
                    w.sample_rate
                )));
            }
            if let Some(j) = w.samples.iter().position(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("window {i} sample {j}")));
            }
        }
        Ok(Dataset { windows, window_len, sample_rate })
    }

    pub fn windows(&self) -> &[SignalWindow] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<SignalWindow> {
        self.windows
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn sample_rate(&self) -> f32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Windows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.windows[i].clone()).collect())
    }

    /// Copy with every window z-scored by [`normalize_window`].
    pub fn normalized(&self) -> Dataset {
        let windows = self
            .windows
            .iter()
            .map(|w| {
                let z = normalize_window(&w.to_f64());
                SignalWindow { samples: z.into_iter().map(|v| v as f32).collect(), ..w.clone() }
            })
            .collect();
        Dataset { windows, window_len: self.window_len, sample_rate: self.sample_rate }
    }

    /// Same windows with every label replaced.
    pub fn relabeled(&self, label: Label) -> Dataset {
        let windows = self.windows.iter().map(|w| SignalWindow { label, ..w.clone() }).collect();
        Dataset { windows, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Format {
    Binary,
    /// CSV does not store a sample rate; this one is assigned on load.
    Csv { sample_rate: f32 },
}

impl Format {
    /// `.csv` selects CSV, anything else the binary format.
    pub fn from_path(path: &Path, csv_sample_rate: f32) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv { sample_rate: csv_sample_rate },
            _ => Format::Binary,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let bytes = fs::read(path.as_ref())?;
    match format {
        Format::Binary => decode_binary(&bytes),
        Format::Csv { sample_rate } => {
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::parse(format!("byte {}", e.utf8_error().valid_up_to()), "invalid UTF-8")
            })?;
            decode_csv(&text, sample_rate)
        }
    }
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
    match format {
        Format::Binary => out.write_all(&encode_binary(dataset))?,
        Format::Csv { .. } => out.write_all(encode_csv(dataset).as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

pub fn encode_binary(dataset: &Dataset) -> Vec<u8> {
    let w = dataset.window_len;
    let mut buf = Vec::with_capacity(ECGW_HEADER_LEN + dataset.len() * (1 + 4 * w));
    buf.extend_from_slice(&ECGW_MAGIC);
    buf.extend_from_slice(&ECGW_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&dataset.sample_rate.to_le_bytes());
    for win in &dataset.windows {
        buf.push(win.label.code());
        for s in &win.samples {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    buf
}

pub fn decode_binary(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bytes.len() < ECGW_HEADER_LEN {
        return Err(Error::parse(
            format!("byte {}", bytes.len()),
            format!("truncated header: need {ECGW_HEADER_LEN} bytes"),
        ));
    }
    if bytes[0..4] != ECGW_MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected \"ECGW\""));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u16_at(4);
    if version != ECGW_VERSION {
        return Err(Error::parse("byte 4", format!("unsupported version {version}")));
    }
    let count = u32_at(8) as usize;
    let window_len = u32_at(12) as usize;
    let sample_rate = f32::from_bits(u32_at(16));
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    if window_len == 0 {
        return Err(Error::parse("byte 12", "window_len must be positive"));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::parse("byte 16", format!("invalid sample rate {sample_rate}")));
    }
    let record = 1 + 4 * window_len;
    let expected = ECGW_HEADER_LEN + count * record;
    if bytes.len() != expected {
        return Err(Error::parse(
            format!("byte {}", bytes.len().min(expected)),
            format!("file length {} does not match header (expected {expected})", bytes.len()),
        ));
    }
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let base = ECGW_HEADER_LEN + i * record;
        let label = Label::from_code(bytes[base])
            .ok_or_else(|| Error::parse(format!("byte {base}"), format!("invalid label {}", bytes[base])))?;
        let mut samples = Vec::with_capacity(window_len);
        for j in 0..window_len {
            let o = base + 1 + 4 * j;
            let v = f32::from_bits(u32_at(o));
            if !v.is_finite() {
                return Err(Error::parse(format!("byte {o}"), "non-finite sample"));
            }
            samples.push(v);
        }
        windows.push(SignalWindow::new(samples, sample_rate, label, format!("w{i}")));
    }
    Dataset::new(windows)
}

pub fn encode_csv(dataset: &Dataset) -> String {
    let mut s = String::from("label");
    for j in 0..dataset.window_len {
        s.push_str(&format!(",s{j}"));
    }
    s.push('\n');
    for win in &dataset.windows {
        s.push_str(&win.label.code().to_string());
        for v in &win.samples {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn decode_csv(text: &str, sample_rate: f32) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::parse("line 1", "header must start with \"label,s0\""));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("s{j}") {
            return Err(Error::parse("line 1", format!("column {} should be s{j}, found {c:?}", j + 1)));
        }
    }
    let window_len = cols.len() - 1;
    let mut windows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != window_len + 1 {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("expected {} fields, found {}", window_len + 1, fields.len()),
            ));
        }
        let label = fields[0]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| Error::parse(format!("line {lineno}"), format!("invalid label {:?}", fields[0])))?;
        let mut samples = Vec::with_capacity(window_len);
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::parse(format!("line {lineno}"), format!("column s{j}: not a number {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(format!("line {lineno}"), format!("column s{j}: non-finite sample {f:?}")));
            }
            samples.push(v);
        }
        windows.push(SignalWindow::new(samples, sample_rate, label, format!("w{}", windows.len())));
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(windows)
}

/// Cut `signal` into windows of `window_len` starting every `hop` samples.
/// A trailing remainder shorter than `window_len` is dropped.
pub fn window_signal(signal: &[f64], window_len: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if window_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument("window_len and hop must be at least 1".into()));
    }
    if signal.len() < window_len {
        return Ok(Vec::new());
    }
    let count = (signal.len() - window_len) / hop + 1;
    Ok((0..count).map(|k| signal[k * hop..k * hop + window_len].to_vec()).collect())
}

/// Population z-score. Windows with standard deviation below `1e-8` map to zeros.
pub fn normalize_window(samples: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return Vec::new();
    }
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; samples.len()];
    }
    samples.iter().map(|x| (x - mean) / std).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec { train_frac, val_frac, test_frac, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// 80/10/10.
    pub fn standard(seed: u64) -> Self {
        SplitSpec { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument(format!("split fractions must lie in [0,1], got {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("split fractions must sum to 1, got {fr:?}")));
        }
        Ok(())
    }

    /// Cut points `(floor(n*t), floor(n*(t+v)))`. A `1e-9` guard absorbs
    /// representation error such as `0.7 + 0.2 = 0.8999999999999999`.
    pub fn cut_points(&self, n: usize) -> (usize, usize) {
        let nf = n as f64;
        let a = ((nf * self.train_frac + 1e-9).floor() as usize).min(n);
        let b = ((nf * (self.train_frac + self.val_frac) + 1e-9).floor() as usize).clamp(a, n);
        (a, b)
    }
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Index permutations of the three parts, used by [`split_dataset`].
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let idx = shuffled_indices(n, spec.seed);
    let (a, b) = spec.cut_points(n);
    Ok([idx[..a].to_vec(), idx[a..b].to_vec(), idx[b..].to_vec()])
}

/// Parts that come out empty are returned as `None`.
pub type SplitParts = (Option<Dataset>, Option<Dataset>, Option<Dataset>);

/// Shuffle by seed, then cut into train / val / test.
pub fn split_dataset(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitParts> {
    let [tr, va, te] = split_indices(dataset.len(), spec)?;
    let part = |ix: &[usize]| if ix.is_empty() { Ok(None) } else { dataset.subset(ix).map(Some) };
    Ok((part(&tr)?, part(&va)?, part(&te)?))
}
