//! Per-channel linear kernels over the analysis window, kernel addition,
//! train-fold mean centering and trace normalization.
//!
//! Centering and normalization constants are always computed on training
//! trials only and then applied to every row/column, so test trials are
//! mapped through the train-fold statistics without leaking into them.

use rayon::prelude::*;

use crate::dataio::EpochDataset;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// How far a kernel has been taken through the preparation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelState {
    Raw,
    Centered,
    Normalized,
}

/// One symmetric n x n kernel per channel.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub kernels: Vec<Mat>,
    pub window_ms: (f64, f64),
    pub states: Vec<KernelState>,
    /// Dataset trial index behind each kernel row/column.
    pub trial_indices: Vec<usize>,
}

impl KernelSet {
    pub fn n_channels(&self) -> usize {
        self.kernels.len()
    }

    pub fn n_trials(&self) -> usize {
        self.trial_indices.len()
    }

    /// Centers every kernel with the given training trials.
    pub fn center_all(&self, train: &[usize]) -> Result<KernelSet> {
        let kernels: Result<Vec<Mat>> =
            self.kernels.iter().map(|k| center_kernel(k, train)).collect();
        Ok(KernelSet {
            kernels: kernels?,
            window_ms: self.window_ms,
            states: vec![KernelState::Centered; self.kernels.len()],
            trial_indices: self.trial_indices.clone(),
        })
    }

    /// Centers and trace-normalizes every kernel; degenerate channels are
    /// dropped rather than failing the set. Returns the surviving set plus
    /// the per-surviving-channel (original index, divisor) pairs.
    pub fn center_normalize_all(&self, train: &[usize]) -> Result<(KernelSet, Vec<(usize, f64)>)> {
        let mut kernels = Vec::new();
        let mut kept = Vec::new();
        for (c, kernel) in self.kernels.iter().enumerate() {
            let centered = center_kernel(kernel, train)?;
            match normalize_kernel(&centered, train) {
                Ok((normalized, scale)) => {
                    kernels.push(normalized);
                    kept.push((c, scale));
                }
                Err(Error::DegenerateKernel(_)) => {
                    eprintln!("warning: dropping degenerate channel {c} from the kernel set");
                }
                Err(other) => return Err(other),
            }
        }
        if kernels.is_empty() {
            return Err(Error::DegenerateKernel(
                "every channel is degenerate on this training fold".into(),
            ));
        }
        let set = KernelSet {
            states: vec![KernelState::Normalized; kernels.len()],
            kernels,
            window_ms: self.window_ms,
            trial_indices: self.trial_indices.clone(),
        };
        Ok((set, kept))
    }
}

/// Train-fold statistics of one kernel; enough to center any entry.
#[derive(Debug, Clone)]
pub struct CenteringStats {
    /// mean over train columns of K[i, t], for every row i.
    pub row_means: Vec<f64>,
    /// mean over the train x train block.
    pub grand_mean: f64,
}

impl CenteringStats {
    pub fn compute(kernel: &Mat, train: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::validation("train_indices", "must be nonempty"));
        }
        let n = kernel.rows();
        let inv = 1.0 / train.len() as f64;
        let mut row_means = vec![0.0f64; n];
        for (i, rm) in row_means.iter_mut().enumerate() {
            let row = kernel.row(i);
            *rm = train.iter().map(|&t| row[t]).sum::<f64>() * inv;
        }
        let grand_mean = train.iter().map(|&t| row_means[t]).sum::<f64>() * inv;
        Ok(CenteringStats {
            row_means,
            grand_mean,
        })
    }

    /// Centered kernel entry: K(x,y) - mean_t K(x,t) - mean_t K(t,y) + grand.
    #[inline]
    pub fn centered(&self, kernel: &Mat, i: usize, j: usize) -> f64 {
        kernel.get(i, j) - self.row_means[i] - self.row_means[j] + self.grand_mean
    }

    /// Mean train self-similarity of the centered kernel (trace / n_train).
    pub fn centered_trace_mean(&self, kernel: &Mat, train: &[usize]) -> f64 {
        train
            .iter()
            .map(|&t| self.centered(kernel, t, t))
            .sum::<f64>()
            / train.len() as f64
    }
}

/// Linear kernel per channel: K_c[i][j] = <trial i, trial j> over the window.
pub fn build_channel_kernels(dataset: &EpochDataset, window_ms: (f64, f64)) -> Result<KernelSet> {
    let samples = dataset.window_samples(window_ms)?;
    let n = dataset.n_trials();
    let kernels: Vec<Mat> = (0..dataset.n_channels())
        .into_par_iter()
        .map(|c| {
            // gather the windowed traces once per channel
            let traces: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let tr = dataset.trace(t, c);
                    samples.iter().map(|&k| tr[k]).collect()
                })
                .collect();
            let mut k = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let dot: f64 = traces[i].iter().zip(&traces[j]).map(|(a, b)| a * b).sum();
                    k.set(i, j, dot);
                    k.set(j, i, dot);
                }
            }
            k
        })
        .collect();
    Ok(KernelSet {
        states: vec![KernelState::Raw; kernels.len()],
        kernels,
        window_ms,
        trial_indices: (0..n).collect(),
    })
}

/// Elementwise sum of all kernels; equals the linear kernel of the
/// concatenated per-channel feature vectors.
pub fn sum_kernels(set: &KernelSet) -> Result<Mat> {
    let first = set
        .kernels
        .first()
        .ok_or_else(|| Error::validation("kernels", "kernel set is empty"))?;
    let (r, c) = (first.rows(), first.cols());
    let mut out = Mat::zeros(r, c);
    for k in &set.kernels {
        if k.rows() != r || k.cols() != c {
            return Err(Error::DimensionMismatch(format!(
                "kernel sizes differ: {}x{} vs {r}x{c}",
                k.rows(),
                k.cols()
            )));
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Feature-space mean centering with the train mean; applied to all rows and
/// columns so test trials are centered by the train statistics.
pub fn center_kernel(kernel: &Mat, train: &[usize]) -> Result<Mat> {
    let stats = CenteringStats::compute(kernel, train)?;
    let n = kernel.rows();
    Ok(Mat::from_fn(n, n, |i, j| stats.centered(kernel, i, j)))
}

/// Scales a centered kernel so the mean train self-similarity is 1.
/// Returns the scaled kernel and the divisor that was applied.
pub fn normalize_kernel(centered: &Mat, train: &[usize]) -> Result<(Mat, f64)> {
    if train.is_empty() {
        return Err(Error::validation("train_indices", "must be nonempty"));
    }
    let trace_mean = train.iter().map(|&t| centered.get(t, t)).sum::<f64>() / train.len() as f64;
    if trace_mean <= 0.0 {
        return Err(Error::DegenerateKernel(format!(
            "train trace mean {trace_mean} <= 0: channel carries no variance"
        )));
    }
    let mut out = centered.clone();
    for v in out.as_mut_slice() {
        *v /= trace_mean;
    }
    Ok((out, trace_mean))
}
