//! Kernel machines: SVM dual solver, sparse MKL, weight-map reconstruction
//! and per-channel contributions.

pub mod mkl;
pub mod svm;

pub use mkl::{mkl_train, MklSolution};
pub use svm::{dual_objective, equality_residual, kkt_violation, svm_train, SvmSolution};

use serde::{Deserialize, Serialize};

use crate::dataio::EpochDataset;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Which machine produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svm,
    Mkl,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Svm => "svm",
            Method::Mkl => "mkl",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(Method::Svm),
            "mkl" => Ok(Method::Mkl),
            other => Err(Error::validation(
                "method",
                format!("unknown method {other:?}"),
            )),
        }
    }
}

/// A trained kernel machine on one training fold.
///
/// Carries everything needed to evaluate decisions and to reconstruct the
/// primal weight map: dual coefficients, the kernel weights d (all ones for
/// the SVM, where the kernel sum is implicit), and the per-channel
/// normalization divisors applied before training (ones for the SVM).
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub c: f64,
    /// Dataset trial indices the model was trained on.
    pub train_indices: Vec<usize>,
    /// +-1 labels aligned with train_indices.
    pub train_labels: Vec<f64>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    /// Per-channel kernel weights; simplex for MKL, all ones for SVM.
    pub kernel_weights: Vec<f64>,
    /// Per-channel kernel normalization divisors used during preparation.
    pub kernel_scales: Vec<f64>,
    /// Positions within train_indices whose alpha exceeds 1e-8 * C.
    pub support: Vec<usize>,
}

impl TrainedModel {
    pub fn support_threshold(&self) -> f64 {
        1e-8 * self.c
    }
}

/// Decision values f(x) = sum_i alpha_i y_i K_eff(x_i, x) + bias for rows of
/// the effective (prepared, weighted) kernel between evaluation trials and
/// the training trials.
pub fn predict(model: &TrainedModel, kernel_rows: &Mat) -> Result<Vec<f64>> {
    if kernel_rows.cols() != model.alphas.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel rows have {} columns for {} training trials",
            kernel_rows.cols(),
            model.alphas.len()
        )));
    }
    Ok((0..kernel_rows.rows())
        .map(|t| {
            let row = kernel_rows.row(t);
            let mut f = model.bias;
            for i in 0..model.alphas.len() {
                f += model.alphas[i] * model.train_labels[i] * row[i];
            }
            f
        })
        .collect())
}

/// Primal weight map, one weight per channel x time feature.
///
/// w = sum_i alpha_i y_i x~_i with x~ the train-mean-centered features; MKL
/// channels are additionally scaled by d_m / s_m so that W is the primal
/// vector of the composite kernel and reproduces its decision values.
/// Samples outside the window get weight zero.
pub fn weight_map(
    model: &TrainedModel,
    dataset: &EpochDataset,
    window_ms: (f64, f64),
) -> Result<Mat> {
    let samples = dataset.window_samples(window_ms)?;
    let p = dataset.n_channels();
    if model.kernel_weights.len() != p || model.kernel_scales.len() != p {
        return Err(Error::DimensionMismatch(
            "kernel weight/scale vectors must have one entry per channel".into(),
        ));
    }
    let n_train = model.train_indices.len();
    let betas: Vec<f64> = (0..n_train)
        .map(|i| model.alphas[i] * model.train_labels[i])
        .collect();
    let beta_sum: f64 = betas.iter().sum();
    let inv_train = 1.0 / n_train as f64;

    let mut w = Mat::zeros(p, dataset.n_time());
    for c in 0..p {
        let dm = model.kernel_weights[c];
        if dm == 0.0 {
            continue;
        }
        let scale = dm / model.kernel_scales[c];
        for &k in &samples {
            let mut weighted = 0.0;
            let mut mean = 0.0;
            for (i, &t) in model.train_indices.iter().enumerate() {
                let v = dataset.trace(t, c)[k];
                weighted += betas[i] * v;
                mean += v;
            }
            mean *= inv_train;
            w.set(c, k, scale * (weighted - beta_sum * mean));
        }
    }
    Ok(w)
}

/// Channel-level contribution W_c: mean absolute weight for the SVM, the
/// kernel weight d_m for MKL.
pub fn channel_contribution(model: &TrainedModel, weights: &Mat, p_t: usize) -> Vec<f64> {
    match model.method {
        Method::Svm => (0..weights.rows())
            .map(|c| weights.row(c).iter().map(|v| v.abs()).sum::<f64>() / p_t as f64)
            .collect(),
        Method::Mkl => model.kernel_weights.clone(),
    }
}
