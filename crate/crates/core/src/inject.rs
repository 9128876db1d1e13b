//! Signal injection: adds a smoothed rectangular template to condition-A
//! trials at a target SNR on a pseudo-randomly chosen channel subset, and
//! records the ground truth needed by the recovery metrics.
//!
//! The injected amplitude on a channel is `snr_in * std(mean B trace)`, the
//! std taken across time samples of the across-B-trials average, so the
//! template rides on top of the baseline without replacing it.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{EpochDataset, Label};
use crate::error::{Error, Result};

/// What to inject and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    /// Dimensionless target SNR; 0 means no signal.
    pub snr_in: f64,
    /// Number of channels that receive signal, in [0, n_channels].
    pub n_signal_channels: usize,
    /// Rectangle extent [start, end] in ms.
    pub window_ms: (f64, f64),
    /// FWHM of the Gaussian smoothing window in ms; 0 disables smoothing.
    pub gaussian_fwhm_ms: f64,
    /// Seed of the pseudo-random channel ordering.
    pub channel_order_seed: u64,
}

impl InjectionSpec {
    pub fn new(snr_in: f64, n_signal_channels: usize, channel_order_seed: u64) -> Self {
        InjectionSpec {
            snr_in,
            n_signal_channels,
            window_ms: (0.0, 1000.0),
            gaussian_fwhm_ms: 200.0,
            channel_order_seed,
        }
    }

    pub fn validate(&self, dataset: &EpochDataset) -> Result<()> {
        if !(self.snr_in.is_finite() && self.snr_in >= 0.0) {
            return Err(Error::validation("snr_in", "must be finite and >= 0"));
        }
        if self.n_signal_channels > dataset.n_channels() {
            return Err(Error::validation(
                "n_signal_channels",
                format!(
                    "{} exceeds channel count {}",
                    self.n_signal_channels,
                    dataset.n_channels()
                ),
            ));
        }
        if !(self.gaussian_fwhm_ms.is_finite() && self.gaussian_fwhm_ms >= 0.0) {
            return Err(Error::validation(
                "gaussian_fwhm_ms",
                "must be finite and >= 0",
            ));
        }
        dataset.window_samples(self.window_ms)?;
        Ok(())
    }
}

/// The injected difference signal and where it went.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Injected per-channel traces, [n_channels][n_time]; zero off the
    /// signal channels.
    pub x_in: Vec<Vec<f64>>,
    /// Channel indices that actually received non-zero input, ascending.
    pub signal_channels: Vec<usize>,
    /// Fraction of features carrying signal; equals |I_in| / n_channels.
    pub s_in: f64,
    /// Time-average of x_in per channel.
    pub channel_means: Vec<f64>,
    /// The SNR the injection targeted.
    pub snr_in: f64,
    /// Template parameters, recorded for provenance.
    pub window_ms: (f64, f64),
    pub gaussian_fwhm_ms: f64,
    pub channel_order_seed: u64,
}

impl GroundTruth {
    pub fn n_channels(&self) -> usize {
        self.x_in.len()
    }

    pub fn is_signal_channel(&self, channel: usize) -> bool {
        self.signal_channels.binary_search(&channel).is_ok()
    }

    /// True when no non-zero signal was injected anywhere.
    pub fn is_empty(&self) -> bool {
        self.signal_channels.is_empty()
    }
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

/// Unit-amplitude smoothed rectangle sampled on the dataset time axis.
///
/// The rectangle is 1 on [start, end] ms and 0 elsewhere on the real line;
/// it is convolved with a unit-sum Gaussian kernel (FWHM as given, truncated
/// at +-3 sigma). Because the kernel is renormalized after truncation, the
/// plateau more than 3 sigma inside the window stays at exactly 1, and the
/// value at the window edge is approximately one half.
pub fn build_template(
    window_ms: (f64, f64),
    gaussian_fwhm_ms: f64,
    n_time: usize,
    sampling_rate: f64,
) -> Result<Vec<f64>> {
    let (start, end) = window_ms;
    if !(start <= end) {
        return Err(Error::WindowOutOfRange(format!(
            "start {start} > end {end}"
        )));
    }
    let dt = 1000.0 / sampling_rate;
    let t_last = (n_time - 1) as f64 * dt;
    if start < -1e-9 || end > t_last + 1e-9 {
        return Err(Error::WindowOutOfRange(format!(
            "[{start}, {end}] ms outside time axis [0, {t_last}] ms"
        )));
    }
    let in_rect = |t: f64| t >= start - 1e-9 && t <= end + 1e-9;

    if gaussian_fwhm_ms <= 0.0 {
        return Ok((0..n_time)
            .map(|k| if in_rect(k as f64 * dt) { 1.0 } else { 0.0 })
            .collect());
    }

    let sigma = gaussian_fwhm_ms / FWHM_TO_SIGMA;
    let radius = (3.0 * sigma / dt).ceil() as i64;
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    for j in -radius..=radius {
        let x = j as f64 * dt;
        weights.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }

    let template = (0..n_time)
        .map(|k| {
            let t = k as f64 * dt;
            let mut acc = 0.0;
            for (wi, j) in (-radius..=radius).enumerate() {
                if in_rect(t - j as f64 * dt) {
                    acc += weights[wi];
                }
            }
            acc.clamp(0.0, 1.0)
        })
        .collect();
    Ok(template)
}

/// Std across window time-samples of the across-B-trials mean trace of one
/// channel (population std, divisor N). The caller multiplies by `snr_in`.
pub fn amplitude_for_channel(
    dataset: &EpochDataset,
    channel: usize,
    window_ms: (f64, f64),
) -> Result<f64> {
    if channel >= dataset.n_channels() {
        return Err(Error::validation(
            "channel",
            format!("{channel} out of range"),
        ));
    }
    let b_trials = dataset.class_indices(Label::B);
    if b_trials.len() < 2 {
        return Err(Error::validation(
            "dataset",
            "need >= 2 B trials to estimate noise",
        ));
    }
    let samples = dataset.window_samples(window_ms)?;

    let mut mean_trace = vec![0.0f64; samples.len()];
    for &t in &b_trials {
        let trace = dataset.trace(t, channel);
        for (i, &k) in samples.iter().enumerate() {
            mean_trace[i] += trace[k];
        }
    }
    let nb = b_trials.len() as f64;
    for v in mean_trace.iter_mut() {
        *v /= nb;
    }

    let n = mean_trace.len() as f64;
    let m = mean_trace.iter().sum::<f64>() / n;
    let var = mean_trace.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateNoise(format!(
            "mean B trace of channel {channel} has zero variance in the window"
        )));
    }
    Ok(var.sqrt())
}

/// Injects the template into condition-A trials and returns the modified
/// dataset together with the ground truth.
///
/// Signal channels are the first `n_signal_channels` entries of a seeded
/// pseudo-random permutation of all channel indices. B trials and
/// non-signal channels are bit-identical to the input. With `snr_in == 0`
/// the ground truth records an empty signal set.
pub fn inject_signal(
    dataset: &EpochDataset,
    spec: &InjectionSpec,
) -> Result<(EpochDataset, GroundTruth)> {
    spec.validate(dataset)?;
    let p = dataset.n_channels();
    let n_time = dataset.n_time();

    let mut order: Vec<usize> = (0..p).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.channel_order_seed);
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..spec.n_signal_channels].to_vec();
    chosen.sort_unstable();

    let template = build_template(
        spec.window_ms,
        spec.gaussian_fwhm_ms,
        n_time,
        dataset.sampling_rate(),
    )?;

    let mut x_in = vec![vec![0.0f64; n_time]; p];
    let mut out = dataset.clone();
    if spec.snr_in > 0.0 {
        for &c in &chosen {
            let amp = spec.snr_in * amplitude_for_channel(dataset, c, spec.window_ms)?;
            let trace: Vec<f64> = template.iter().map(|v| v * amp).collect();
            out = out.with_added_trace(Label::A, c, &trace);
            x_in[c] = trace;
        }
    }

    // Channels count as signal only when they received non-zero input.
    let signal_channels = if spec.snr_in > 0.0 {
        chosen
    } else {
        Vec::new()
    };
    let s_in = signal_channels.len() as f64 / p as f64;
    let channel_means = x_in
        .iter()
        .map(|row| row.iter().sum::<f64>() / n_time as f64)
        .collect();

    let truth = GroundTruth {
        x_in,
        signal_channels,
        s_in,
        channel_means,
        snr_in: spec.snr_in,
        window_ms: spec.window_ms,
        gaussian_fwhm_ms: spec.gaussian_fwhm_ms,
        channel_order_seed: spec.channel_order_seed,
    };
    Ok((out, truth))
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthMeta {
    format_version: u32,
    snr_in: f64,
    signal_channels: Vec<usize>,
    s_in: f64,
    window_ms: (f64, f64),
    gaussian_fwhm_ms: f64,
    channel_order_seed: u64,
    n_channels: usize,
    n_time: usize,
}

/// Persists ground truth as `truth.json` plus `x_in.f64` (little-endian,
/// C-order [channel][time]).
pub fn write_truth(truth: &GroundTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n_time = truth.x_in.first().map_or(0, |r| r.len());
    let meta = TruthMeta {
        format_version: 1,
        snr_in: truth.snr_in,
        signal_channels: truth.signal_channels.clone(),
        s_in: truth.s_in,
        window_ms: truth.window_ms,
        gaussian_fwhm_ms: truth.gaussian_fwhm_ms,
        channel_order_seed: truth.channel_order_seed,
        n_channels: truth.x_in.len(),
        n_time,
    };
    let mut meta_file = BufWriter::new(fs::File::create(dir.join("truth.json"))?);
    serde_json::to_writer_pretty(&mut meta_file, &meta)?;
    meta_file.write_all(b"\n")?;
    meta_file.flush()?;

    let mut payload = BufWriter::new(fs::File::create(dir.join("x_in.f64"))?);
    for row in &truth.x_in {
        for v in row {
            payload.write_all(&v.to_le_bytes())?;
        }
    }
    payload.flush()?;
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let meta_path = dir.join("truth.json");
    let meta_str = fs::read_to_string(&meta_path)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    let meta: TruthMeta = serde_json::from_str(&meta_str)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;

    let payload_path = dir.join("x_in.f64");
    let mut bytes = Vec::new();
    fs::File::open(&payload_path)
        .map_err(|e| Error::parse(payload_path.display().to_string(), e.to_string()))?
        .read_to_end(&mut bytes)?;
    let expected = meta.n_channels * meta.n_time * 8;
    if bytes.len() != expected {
        return Err(Error::parse(
            payload_path.display().to_string(),
            format!(
                "payload length mismatch: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let x_in: Vec<Vec<f64>> = flat.chunks_exact(meta.n_time).map(|r| r.to_vec()).collect();
    let channel_means = x_in
        .iter()
        .map(|row| row.iter().sum::<f64>() / meta.n_time.max(1) as f64)
        .collect();
    Ok(GroundTruth {
        x_in,
        signal_channels: meta.signal_channels,
        s_in: meta.s_in,
        channel_means,
        snr_in: meta.snr_in,
        window_ms: meta.window_ms,
        gaussian_fwhm_ms: meta.gaussian_fwhm_ms,
        channel_order_seed: meta.channel_order_seed,
    })
}
