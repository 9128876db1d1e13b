//! Epoch dataset model, synthetic correlated-noise baseline generation, and
//! the on-disk "EPD v1" dataset format.
//!
//! A dataset is a trials x channels x time array of z-scored amplitudes with
//! a two-class label per trial. The synthetic baseline stands in for a
//! resting-state recording: Gaussian AR(1) noise per channel with a
//! compound-symmetry cross-channel correlation, plus a log-normal per-trial
//! amplitude jitter.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPD_FORMAT_VERSION: u32 = 1;

/// Trial class tag. `A` is the condition that receives injected signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    /// Numeric coding used by the learners: A -> +1, B -> -1.
    pub fn as_sign(self) -> f64 {
        match self {
            Label::A => 1.0,
            Label::B => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
        }
    }
}

/// Epoched multichannel dataset, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDataset {
    data: Vec<f64>, // C-order [trial][channel][time]
    labels: Vec<Label>,
    channel_ids: Vec<String>,
    sampling_rate: f64,
    time_offsets_ms: Vec<f64>,
    rng_seed: Option<u64>,
    n_trials: usize,
    n_channels: usize,
    n_time: usize,
}

impl EpochDataset {
    /// Validates invariants: finite values, exactly two classes present,
    /// consistent dimensions. Time offsets are derived as k * 1000 / rate
    /// starting at onset (0 ms).
    pub fn new(
        data: Vec<f64>,
        n_trials: usize,
        n_channels: usize,
        n_time: usize,
        labels: Vec<Label>,
        channel_ids: Vec<String>,
        sampling_rate: f64,
        rng_seed: Option<u64>,
    ) -> Result<Self> {
        if data.len() != n_trials * n_channels * n_time {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != trials*channels*time = {}",
                data.len(),
                n_trials * n_channels * n_time
            )));
        }
        if labels.len() != n_trials {
            return Err(Error::DimensionMismatch(format!(
                "labels length {} != n_trials {}",
                labels.len(),
                n_trials
            )));
        }
        if channel_ids.len() != n_channels {
            return Err(Error::DimensionMismatch(format!(
                "channel_ids length {} != n_channels {}",
                channel_ids.len(),
                n_channels
            )));
        }
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::validation("sampling_rate", "must be finite and > 0"));
        }
        let n_a = labels.iter().filter(|l| **l == Label::A).count();
        if n_a == 0 || n_a == labels.len() {
            return Err(Error::validation(
                "labels",
                "exactly two distinct classes must be present",
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "data",
                format!("non-finite value at flat index {bad}"),
            ));
        }
        let step = 1000.0 / sampling_rate;
        let time_offsets_ms = (0..n_time).map(|k| k as f64 * step).collect();
        Ok(EpochDataset {
            data,
            labels,
            channel_ids,
            sampling_rate,
            time_offsets_ms,
            rng_seed,
            n_trials,
            n_channels,
            n_time,
        })
    }

    #[inline]
    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn time_offsets_ms(&self) -> &[f64] {
        &self.time_offsets_ms
    }

    pub fn rng_seed(&self) -> Option<u64> {
        self.rng_seed
    }

    pub fn n_class_a(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::A).count()
    }

    pub fn n_class_b(&self) -> usize {
        self.n_trials - self.n_class_a()
    }

    /// Trial indices of one class, in ascending order.
    pub fn class_indices(&self, label: Label) -> Vec<usize> {
        (0..self.n_trials)
            .filter(|&t| self.labels[t] == label)
            .collect()
    }

    /// One channel's time series within one trial.
    #[inline]
    pub fn trace(&self, trial: usize, channel: usize) -> &[f64] {
        let base = (trial * self.n_channels + channel) * self.n_time;
        &self.data[base..base + self.n_time]
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    /// Sample indices whose time offset lies inside [start, end] ms (inclusive).
    pub fn window_samples(&self, window_ms: (f64, f64)) -> Result<Vec<usize>> {
        let (start, end) = window_ms;
        let t0 = self.time_offsets_ms[0];
        let t1 = *self.time_offsets_ms.last().unwrap();
        if !(start <= end) {
            return Err(Error::WindowOutOfRange(format!(
                "start {start} > end {end}"
            )));
        }
        if start < t0 - 1e-9 || end > t1 + 1e-9 {
            return Err(Error::WindowOutOfRange(format!(
                "[{start}, {end}] ms outside dataset range [{t0}, {t1}] ms"
            )));
        }
        let idx: Vec<usize> = self
            .time_offsets_ms
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= start - 1e-9 && **t <= end + 1e-9)
            .map(|(k, _)| k)
            .collect();
        if idx.is_empty() {
            return Err(Error::WindowOutOfRange(format!(
                "[{start}, {end}] ms contains no samples"
            )));
        }
        Ok(idx)
    }

    /// Full time range as a window, (first, last) offsets in ms.
    pub fn full_window(&self) -> (f64, f64) {
        (
            self.time_offsets_ms[0],
            *self.time_offsets_ms.last().unwrap(),
        )
    }

    /// Returns a copy with `delta` added to channel `channel` of every trial
    /// whose label is `label`. Used by the injection stage.
    pub(crate) fn with_added_trace(mut self, label: Label, channel: usize, delta: &[f64]) -> Self {
        assert_eq!(delta.len(), self.n_time);
        for t in 0..self.n_trials {
            if self.labels[t] != label {
                continue;
            }
            let base = (t * self.n_channels + channel) * self.n_time;
            for (k, d) in delta.iter().enumerate() {
                self.data[base + k] += d;
            }
        }
        self
    }

    /// Returns a copy with the label vector replaced (for permutation tests).
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Self> {
        let mut copy = self.clone();
        if labels.len() != self.n_trials {
            return Err(Error::DimensionMismatch("label vector length".into()));
        }
        copy.labels = labels;
        Ok(copy)
    }
}

/// Parameters of the synthetic correlated-noise baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub n_trials_a: usize,
    pub n_trials_b: usize,
    pub n_channels: usize,
    pub n_time: usize,
    pub sampling_rate: f64,
    /// Temporal AR(1) coefficient, in [0, 1).
    pub ar_coefficient: f64,
    /// Constant off-diagonal cross-channel correlation, in [0, 1).
    pub spatial_correlation: f64,
    /// Std-dev of the per-trial log amplitude scale exp(g), g ~ N(0, sd).
    pub trial_jitter_sd: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    /// Dimensions of the reference recording: 60 A + 56 B trials, 38
    /// channels, 1001 samples at 1 kHz.
    fn default() -> Self {
        NoiseSpec {
            n_trials_a: 60,
            n_trials_b: 56,
            n_channels: 38,
            n_time: 1001,
            sampling_rate: 1000.0,
            ar_coefficient: 0.95,
            spatial_correlation: 0.2,
            trial_jitter_sd: 0.1,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials_a < 1 {
            return Err(Error::validation("n_trials_a", "must be >= 1"));
        }
        if self.n_trials_b < 1 {
            return Err(Error::validation("n_trials_b", "must be >= 1"));
        }
        if self.n_channels < 1 {
            return Err(Error::validation("n_channels", "must be >= 1"));
        }
        if self.n_time < 1 {
            return Err(Error::validation("n_time", "must be >= 1"));
        }
        if !(self.sampling_rate.is_finite() && self.sampling_rate > 0.0) {
            return Err(Error::validation("sampling_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(Error::validation("ar_coefficient", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.spatial_correlation) {
            return Err(Error::validation(
                "spatial_correlation",
                "must be in [0, 1)",
            ));
        }
        if !(self.trial_jitter_sd.is_finite() && self.trial_jitter_sd >= 0.0) {
            return Err(Error::validation("trial_jitter_sd", "must be >= 0"));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::validation(
                        "spatial_correlation",
                        "correlation matrix is not positive definite",
                    ));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Generates the synthetic baseline recording.
///
/// Per channel the noise is a stationary AR(1) process with unit marginal
/// variance; innovations are spatially correlated through the Cholesky factor
/// of a compound-symmetry matrix, so the lag-0 cross-channel correlation
/// equals `spatial_correlation` on every pair. Trials are independent. The
/// first `n_trials_a` trials carry label A, the rest label B. Output is a
/// pure function of the `NoiseSpec`, seed included.
pub fn generate_baseline(spec: &NoiseSpec) -> Result<EpochDataset> {
    spec.validate()?;
    let p = spec.n_channels;
    let n_time = spec.n_time;
    let n_trials = spec.n_trials_a + spec.n_trials_b;

    let rho = spec.spatial_correlation;
    let cs: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect();
    let l = cholesky(&cs)?;

    let ar = spec.ar_coefficient;
    let innov_scale = (1.0 - ar * ar).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![0.0f64; n_trials * p * n_time];
    let mut eps = vec![0.0f64; p];
    let mut eta = vec![0.0f64; p];
    let mut state = vec![0.0f64; p];

    for trial in 0..n_trials {
        let g: f64 = rng.sample(StandardNormal);
        let jitter = (spec.trial_jitter_sd * g).exp();
        for k in 0..n_time {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            for c in 0..p {
                let mut s = 0.0;
                for (j, lij) in l[c][..=c].iter().enumerate() {
                    s += lij * eps[j];
                }
                eta[c] = s;
            }
            for c in 0..p {
                state[c] = if k == 0 {
                    eta[c]
                } else {
                    ar * state[c] + innov_scale * eta[c]
                };
                data[(trial * p + c) * n_time + k] = jitter * state[c];
            }
        }
    }

    let labels: Vec<Label> = (0..n_trials)
        .map(|t| {
            if t < spec.n_trials_a {
                Label::A
            } else {
                Label::B
            }
        })
        .collect();
    let channel_ids = (0..p).map(|c| format!("ch{c:02}")).collect();
    EpochDataset::new(
        data,
        n_trials,
        p,
        n_time,
        labels,
        channel_ids,
        spec.sampling_rate,
        Some(spec.seed),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct EpdMeta {
    format_version: u32,
    n_trials: usize,
    n_channels: usize,
    n_time: usize,
    sampling_rate: f64,
    channel_ids: Vec<String>,
    labels: Vec<String>,
    seed: Option<u64>,
}

/// Writes a dataset as an "EPD v1" directory: `meta.json` plus `data.f64`
/// (little-endian f64, C-order [trial][channel][time]).
pub fn write_dataset(dataset: &EpochDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EpdMeta {
        format_version: EPD_FORMAT_VERSION,
        n_trials: dataset.n_trials,
        n_channels: dataset.n_channels,
        n_time: dataset.n_time,
        sampling_rate: dataset.sampling_rate,
        channel_ids: dataset.channel_ids.clone(),
        labels: dataset
            .labels
            .iter()
            .map(|l| l.as_str().to_string())
            .collect(),
        seed: dataset.rng_seed,
    };
    let mut meta_file = BufWriter::new(fs::File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut meta_file, &meta)?;
    meta_file.write_all(b"\n")?;
    meta_file.flush()?;

    let mut payload = BufWriter::new(fs::File::create(dir.join("data.f64"))?);
    for v in &dataset.data {
        payload.write_all(&v.to_le_bytes())?;
    }
    payload.flush()?;
    Ok(())
}

/// Reads an "EPD v1" directory back into a dataset.
pub fn read_dataset(dir: &Path) -> Result<EpochDataset> {
    let meta_path = dir.join("meta.json");
    let meta_str = fs::read_to_string(&meta_path)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    let meta: EpdMeta = serde_json::from_str(&meta_str)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    if meta.format_version != EPD_FORMAT_VERSION {
        return Err(Error::parse(
            meta_path.display().to_string(),
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.labels.len() != meta.n_trials {
        return Err(Error::parse(
            meta_path.display().to_string(),
            format!("{} labels for {} trials", meta.labels.len(), meta.n_trials),
        ));
    }
    let mut labels = Vec::with_capacity(meta.labels.len());
    for (i, s) in meta.labels.iter().enumerate() {
        match s.as_str() {
            "A" => labels.push(Label::A),
            "B" => labels.push(Label::B),
            other => {
                return Err(Error::parse(
                    meta_path.display().to_string(),
                    format!("label class {other:?} at trial {i}: only \"A\"/\"B\" are valid"),
                ))
            }
        }
    }

    let data_path = dir.join("data.f64");
    let expected = meta.n_trials * meta.n_channels * meta.n_time * 8;
    let mut bytes = Vec::new();
    fs::File::open(&data_path)
        .map_err(|e| Error::parse(data_path.display().to_string(), e.to_string()))?
        .read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(Error::parse(
            data_path.display().to_string(),
            format!(
                "payload length mismatch: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    EpochDataset::new(
        data,
        meta.n_trials,
        meta.n_channels,
        meta.n_time,
        labels,
        meta.channel_ids,
        meta.sampling_rate,
        meta.seed,
    )
    .map_err(|e| match e {
        Error::Validation { field, reason } => {
            Error::parse(dir.display().to_string(), format!("{field}: {reason}"))
        }
        other => other,
    })
}
