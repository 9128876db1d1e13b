//! Cross-validation orchestration: stratified outer folds, nested C-grid
//! search, balanced accuracy, and the model-level permutation test.
//!
//! All train-derived constants (kernel centering, normalization, the chosen
//! C) depend only on the training trials of the fold that uses them. Raw
//! kernels are built once per run; each fold context re-centers them with
//! its own training statistics.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{EpochDataset, Label};
use crate::error::{Error, Result};
use crate::kernels::{build_channel_kernels, sum_kernels, CenteringStats, KernelSet};
use crate::learners::{
    channel_contribution, mkl_train, svm_train, weight_map, Method, TrainedModel,
};
use crate::mat::Mat;

/// Outer/inner fold assignment; test-trial indices per fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub outer: Vec<Vec<usize>>,
    /// Per outer fold, the inner test sets drawn from its training trials.
    pub inner: Vec<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_trials(&self) -> usize {
        self.outer.iter().map(|f| f.len()).sum()
    }

    /// Training indices of one outer fold (complement of its test set).
    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        let n = self.n_trials();
        let test = &self.outer[fold];
        (0..n).filter(|t| !test.contains(t)).collect()
    }
}

/// Knobs of one CV run; defaults follow the reference protocol.
#[derive(Debug, Clone)]
pub struct CvOptions {
    pub c_grid: Vec<f64>,
    /// Kernel window; None uses the full time range.
    pub window_ms: Option<(f64, f64)>,
    pub svm_tol: f64,
    pub mkl_svm_tol: f64,
    pub mkl_d_tol: f64,
    pub mkl_gap_tol: f64,
    pub mkl_max_outer: usize,
    pub max_passes: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
            window_ms: None,
            svm_tol: 1e-3,
            mkl_svm_tol: 1e-4,
            mkl_d_tol: 1e-4,
            mkl_gap_tol: crate::learners::mkl::DEFAULT_GAP_TOL,
            mkl_max_outer: 200,
            max_passes: 2_000_000,
        }
    }
}

/// Per-fold artifacts of a CV run.
#[derive(Debug, Clone)]
pub struct FoldSummary {
    pub test_indices: Vec<usize>,
    pub chosen_c: f64,
    pub model: TrainedModel,
    pub weight_map: Mat,
    pub channel_contributions: Vec<f64>,
    pub decision_values: Vec<f64>,
}

/// Outcome of one cross-validated model.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub method: Method,
    pub folds: Vec<FoldSummary>,
    /// Decision value per trial; every trial is predicted exactly once.
    pub decision_values: Vec<f64>,
    pub predicted: Vec<Label>,
    /// Mean over folds of the per-fold balanced accuracy.
    pub balanced_accuracy: f64,
    pub p_value: Option<f64>,
}

/// Stratified fold plan: per class, a seeded shuffle dealt round-robin into
/// folds, so per-class fold sizes differ by at most one.
pub fn make_folds(labels: &[Label], k_outer: usize, k_inner: usize, seed: u64) -> Result<FoldPlan> {
    if k_outer < 2 {
        return Err(Error::validation("k_outer", "must be >= 2"));
    }
    if k_inner < 2 {
        return Err(Error::validation("k_inner", "must be >= 2"));
    }
    let a_idx: Vec<usize> = (0..labels.len())
        .filter(|&t| labels[t] == Label::A)
        .collect();
    let b_idx: Vec<usize> = (0..labels.len())
        .filter(|&t| labels[t] == Label::B)
        .collect();
    for (name, idx) in [("A", &a_idx), ("B", &b_idx)] {
        if idx.len() < k_outer {
            return Err(Error::validation(
                "labels",
                format!(
                    "class {name} has {} trials, fewer than k_outer = {k_outer}",
                    idx.len()
                ),
            ));
        }
    }

    let deal = |indices: &[usize], k: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
        let mut shuffled = indices.to_vec();
        shuffled.shuffle(rng);
        let mut folds = vec![Vec::new(); k];
        for (i, idx) in shuffled.into_iter().enumerate() {
            folds[i % k].push(idx);
        }
        folds
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_folds = deal(&a_idx, k_outer, &mut rng);
    let b_folds = deal(&b_idx, k_outer, &mut rng);
    let mut outer: Vec<Vec<usize>> = (0..k_outer)
        .map(|f| {
            let mut fold = a_folds[f].clone();
            fold.extend(&b_folds[f]);
            fold.sort_unstable();
            fold
        })
        .collect();
    outer.retain(|f| !f.is_empty());

    let mut inner = Vec::with_capacity(outer.len());
    for (f, test) in outer.iter().enumerate() {
        let train_a: Vec<usize> = a_idx
            .iter()
            .copied()
            .filter(|t| !test.contains(t))
            .collect();
        let train_b: Vec<usize> = b_idx
            .iter()
            .copied()
            .filter(|t| !test.contains(t))
            .collect();
        for (name, idx) in [("A", &train_a), ("B", &train_b)] {
            if idx.len() < k_inner {
                return Err(Error::validation(
                    "labels",
                    format!(
                        "outer fold {f} leaves class {name} with {} trials, fewer than k_inner = {k_inner}",
                        idx.len()
                    ),
                ));
            }
        }
        let mut inner_rng =
            ChaCha8Rng::seed_from_u64(crate::seeding::substream(seed, 1 + f as u64));
        let ia = deal(&train_a, k_inner, &mut inner_rng);
        let ib = deal(&train_b, k_inner, &mut inner_rng);
        let folds: Vec<Vec<usize>> = (0..k_inner)
            .map(|g| {
                let mut fold = ia[g].clone();
                fold.extend(&ib[g]);
                fold.sort_unstable();
                fold
            })
            .collect();
        inner.push(folds);
    }

    Ok(FoldPlan { outer, inner, seed })
}

fn class_counts(predicted: &[Label], actual: &[Label]) -> ([usize; 2], [usize; 2]) {
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for (p, a) in predicted.iter().zip(actual) {
        let cls = if *a == Label::A { 0 } else { 1 };
        total[cls] += 1;
        if p == a {
            correct[cls] += 1;
        }
    }
    (correct, total)
}

/// Balanced accuracy of one fold: mean of per-class accuracies.
pub fn balanced_accuracy(predicted: &[Label], actual: &[Label]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch("predictions vs labels".into()));
    }
    let (correct, total) = class_counts(predicted, actual);
    if total[0] == 0 || total[1] == 0 {
        return Err(Error::validation("labels", "fold is missing one class"));
    }
    Ok(0.5 * (correct[0] as f64 / total[0] as f64 + correct[1] as f64 / total[1] as f64))
}

/// Fold accuracy that tolerates a missing class by averaging over the
/// classes present. Coincides with `balanced_accuracy` on stratified folds;
/// used for permuted-label runs, where the fixed fold plan can occasionally
/// leave a test fold single-class.
fn balanced_accuracy_tolerant(predicted: &[Label], actual: &[Label]) -> f64 {
    let (correct, total) = class_counts(predicted, actual);
    let mut sum = 0.0;
    let mut classes = 0usize;
    for cls in 0..2 {
        if total[cls] > 0 {
            sum += correct[cls] as f64 / total[cls] as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

fn sign_label(decision: f64) -> Label {
    if decision > 0.0 {
        Label::A
    } else {
        Label::B
    }
}

/// One fold's prepared kernels: training block plus test-against-train rows,
/// already centered (and for MKL normalized) with training statistics only.
struct FoldKernels {
    train: Vec<usize>,
    test: Vec<usize>,
    /// SVM: single summed kernel.
    svm: Option<(Mat, Mat)>,
    /// MKL: per active channel.
    mkl_blocks: Vec<(Mat, Mat)>,
    mkl_active: Vec<usize>,
    /// Full-length per-channel divisors (1.0 where dropped or unused).
    mkl_scales: Vec<f64>,
}

/// Shared per-run state: raw kernels, built once.
pub(crate) struct CvEngine {
    kernels: KernelSet,
    summed: Option<Mat>,
    method: Method,
    n_channels: usize,
    /// Channels already reported as degenerate, so permutation reruns do
    /// not repeat the warning hundreds of times.
    warned_degenerate: std::sync::Mutex<Vec<bool>>,
}

impl CvEngine {
    pub(crate) fn new(
        dataset: &EpochDataset,
        method: Method,
        window_ms: (f64, f64),
    ) -> Result<Self> {
        let kernels = build_channel_kernels(dataset, window_ms)?;
        let summed = match method {
            Method::Svm => Some(sum_kernels(&kernels)?),
            Method::Mkl => None,
        };
        Ok(CvEngine {
            kernels,
            summed,
            method,
            n_channels: dataset.n_channels(),
            warned_degenerate: std::sync::Mutex::new(vec![false; dataset.n_channels()]),
        })
    }

    fn prepare_fold(&self, train: &[usize], test: &[usize]) -> Result<FoldKernels> {
        match self.method {
            Method::Svm => {
                let summed = self.summed.as_ref().unwrap();
                let stats = CenteringStats::compute(summed, train)?;
                let train_block = Mat::from_fn(train.len(), train.len(), |i, j| {
                    stats.centered(summed, train[i], train[j])
                });
                let test_rows = Mat::from_fn(test.len(), train.len(), |i, j| {
                    stats.centered(summed, test[i], train[j])
                });
                Ok(FoldKernels {
                    train: train.to_vec(),
                    test: test.to_vec(),
                    svm: Some((train_block, test_rows)),
                    mkl_blocks: Vec::new(),
                    mkl_active: Vec::new(),
                    mkl_scales: vec![1.0; self.n_channels],
                })
            }
            Method::Mkl => {
                let mut blocks = Vec::new();
                let mut active = Vec::new();
                let mut scales = vec![1.0; self.n_channels];
                for (c, kernel) in self.kernels.kernels.iter().enumerate() {
                    let stats = CenteringStats::compute(kernel, train)?;
                    let trace_mean = stats.centered_trace_mean(kernel, train);
                    if trace_mean <= 0.0 {
                        // zero-variance channel: drop from MKL with a warning
                        let mut warned = self.warned_degenerate.lock().unwrap();
                        if !warned[c] {
                            warned[c] = true;
                            eprintln!(
                                "warning: dropping degenerate channel {c} from MKL (train trace mean {trace_mean})"
                            );
                        }
                        continue;
                    }
                    let inv = 1.0 / trace_mean;
                    let train_block = Mat::from_fn(train.len(), train.len(), |i, j| {
                        stats.centered(kernel, train[i], train[j]) * inv
                    });
                    let test_rows = Mat::from_fn(test.len(), train.len(), |i, j| {
                        stats.centered(kernel, test[i], train[j]) * inv
                    });
                    scales[c] = trace_mean;
                    active.push(c);
                    blocks.push((train_block, test_rows));
                }
                if active.is_empty() {
                    return Err(Error::DegenerateKernel(
                        "every channel is degenerate on this training fold".into(),
                    ));
                }
                Ok(FoldKernels {
                    train: train.to_vec(),
                    test: test.to_vec(),
                    svm: None,
                    mkl_blocks: blocks,
                    mkl_active: active,
                    mkl_scales: scales,
                })
            }
        }
    }

    /// Trains on the fold's training block and returns decision values for
    /// its test rows, plus the fitted model pieces.
    fn train_and_decide(
        &self,
        fold: &FoldKernels,
        y_train: &[f64],
        c: f64,
        opts: &CvOptions,
    ) -> Result<(Vec<f64>, f64, Vec<f64>, Vec<f64>)> {
        match self.method {
            Method::Svm => {
                let (train_block, test_rows) = fold.svm.as_ref().unwrap();
                let sol = svm_train(train_block, y_train, c, opts.svm_tol, opts.max_passes)?;
                let decisions = (0..test_rows.rows())
                    .map(|t| {
                        let row = test_rows.row(t);
                        let mut f = sol.bias;
                        for i in 0..y_train.len() {
                            f += sol.alphas[i] * y_train[i] * row[i];
                        }
                        f
                    })
                    .collect();
                Ok((sol.alphas, sol.bias, vec![1.0; self.n_channels], decisions))
            }
            Method::Mkl => {
                let train_blocks: Vec<Mat> =
                    fold.mkl_blocks.iter().map(|(t, _)| t.clone()).collect();
                let sol = mkl_train(
                    &train_blocks,
                    y_train,
                    c,
                    opts.mkl_svm_tol,
                    opts.mkl_d_tol,
                    opts.mkl_gap_tol,
                    opts.mkl_max_outer,
                )?;
                // effective test rows under the learned kernel weights
                let n_test = fold.test.len();
                let mut decisions = vec![sol.bias; n_test];
                for (m, (_, test_rows)) in fold.mkl_blocks.iter().enumerate() {
                    let dm = sol.d[m];
                    if dm == 0.0 {
                        continue;
                    }
                    for (t, dec) in decisions.iter_mut().enumerate() {
                        let row = test_rows.row(t);
                        let mut f = 0.0;
                        for i in 0..y_train.len() {
                            f += sol.alphas[i] * y_train[i] * row[i];
                        }
                        *dec += dm * f;
                    }
                }
                let mut d_full = vec![0.0; self.n_channels];
                for (m, &ch) in fold.mkl_active.iter().enumerate() {
                    d_full[ch] = sol.d[m];
                }
                Ok((sol.alphas, sol.bias, d_full, decisions))
            }
        }
    }
}

struct FoldOutcome {
    chosen_c: f64,
    alphas: Vec<f64>,
    bias: f64,
    kernel_weights: Vec<f64>,
    kernel_scales: Vec<f64>,
    decisions: Vec<f64>,
}

fn run_fold(
    engine: &CvEngine,
    plan: &FoldPlan,
    fold_idx: usize,
    labels: &[Label],
    opts: &CvOptions,
    tolerant: bool,
) -> Result<FoldOutcome> {
    let test = &plan.outer[fold_idx];
    let train = plan.outer_train(fold_idx);
    let y_of = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&t| labels[t].as_sign()).collect() };

    let mut c_grid = opts.c_grid.clone();
    c_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let chosen_c = if c_grid.len() == 1 {
        c_grid[0]
    } else {
        // inner fold contexts are label-independent; build once, reuse per C
        let inner_folds: Vec<FoldKernels> = plan.inner[fold_idx]
            .iter()
            .map(|inner_test| {
                let inner_train: Vec<usize> = train
                    .iter()
                    .copied()
                    .filter(|t| !inner_test.contains(t))
                    .collect();
                engine.prepare_fold(&inner_train, inner_test)
            })
            .collect::<Result<_>>()?;

        let mut best_c = c_grid[0];
        let mut best_acc = f64::NEG_INFINITY;
        for &c in &c_grid {
            let mut acc_sum = 0.0;
            for ctx in &inner_folds {
                let y_train = y_of(&ctx.train);
                let (_, _, _, decisions) = engine.train_and_decide(ctx, &y_train, c, opts)?;
                let predicted: Vec<Label> = decisions.iter().map(|&d| sign_label(d)).collect();
                let actual: Vec<Label> = ctx.test.iter().map(|&t| labels[t]).collect();
                acc_sum += if tolerant {
                    balanced_accuracy_tolerant(&predicted, &actual)
                } else {
                    balanced_accuracy(&predicted, &actual)?
                };
            }
            let acc = acc_sum / inner_folds.len() as f64;
            if acc > best_acc {
                best_acc = acc;
                best_c = c; // ties keep the smallest C (ascending scan)
            }
        }
        best_c
    };

    let ctx = engine.prepare_fold(&train, test)?;
    let y_train = y_of(&train);
    let (alphas, bias, kernel_weights, decisions) =
        engine.train_and_decide(&ctx, &y_train, chosen_c, opts)?;
    Ok(FoldOutcome {
        chosen_c,
        alphas,
        bias,
        kernel_weights,
        kernel_scales: ctx.mkl_scales,
        decisions,
    })
}

/// Accuracy-only CV pass for the permutation null distribution; tolerant of
/// single-class folds produced by label shuffling.
fn accuracy_over_folds(
    engine: &CvEngine,
    plan: &FoldPlan,
    labels: &[Label],
    opts: &CvOptions,
) -> Result<f64> {
    let mut acc_sum = 0.0;
    for f in 0..plan.outer.len() {
        let outcome = run_fold(engine, plan, f, labels, opts, true)?;
        let predicted: Vec<Label> = outcome.decisions.iter().map(|&d| sign_label(d)).collect();
        let actual: Vec<Label> = plan.outer[f].iter().map(|&t| labels[t]).collect();
        acc_sum += balanced_accuracy_tolerant(&predicted, &actual);
    }
    Ok(acc_sum / plan.outer.len() as f64)
}

/// Full nested cross-validation for one method.
pub fn run_cv(
    dataset: &EpochDataset,
    method: Method,
    plan: &FoldPlan,
    opts: &CvOptions,
) -> Result<CvResult> {
    if plan.n_trials() != dataset.n_trials() {
        return Err(Error::DimensionMismatch(
            "fold plan does not cover the dataset".into(),
        ));
    }
    let window = opts.window_ms.unwrap_or_else(|| dataset.full_window());
    let engine = CvEngine::new(dataset, method, window)?;
    let labels = dataset.labels();
    let samples = dataset.window_samples(window)?;

    let mut folds = Vec::with_capacity(plan.outer.len());
    let mut decision_values = vec![0.0f64; dataset.n_trials()];
    let mut predicted = vec![Label::B; dataset.n_trials()];
    let mut seen = vec![false; dataset.n_trials()];
    let mut acc_sum = 0.0;

    for f in 0..plan.outer.len() {
        let outcome = run_fold(&engine, plan, f, labels, opts, false)?;
        let train = plan.outer_train(f);
        let model = TrainedModel {
            method,
            c: outcome.chosen_c,
            train_labels: train.iter().map(|&t| labels[t].as_sign()).collect(),
            support: {
                let thr = 1e-8 * outcome.chosen_c;
                (0..train.len())
                    .filter(|&i| outcome.alphas[i] > thr)
                    .collect()
            },
            train_indices: train,
            alphas: outcome.alphas,
            bias: outcome.bias,
            kernel_weights: outcome.kernel_weights,
            kernel_scales: outcome.kernel_scales,
        };
        let w = weight_map(&model, dataset, window)?;
        let wc = channel_contribution(&model, &w, samples.len());

        let fold_pred: Vec<Label> = outcome.decisions.iter().map(|&d| sign_label(d)).collect();
        let actual: Vec<Label> = plan.outer[f].iter().map(|&t| labels[t]).collect();
        acc_sum += balanced_accuracy(&fold_pred, &actual)?;

        for (pos, &t) in plan.outer[f].iter().enumerate() {
            if seen[t] {
                return Err(Error::validation(
                    "fold_plan",
                    format!("trial {t} tested twice"),
                ));
            }
            seen[t] = true;
            decision_values[t] = outcome.decisions[pos];
            predicted[t] = fold_pred[pos];
        }

        folds.push(FoldSummary {
            test_indices: plan.outer[f].clone(),
            chosen_c: outcome.chosen_c,
            model,
            weight_map: w,
            channel_contributions: wc,
            decision_values: outcome.decisions,
        });
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::validation(
            "fold_plan",
            "some trials are never tested",
        ));
    }

    Ok(CvResult {
        method,
        folds,
        decision_values,
        predicted,
        balanced_accuracy: acc_sum / plan.outer.len() as f64,
        p_value: None,
    })
}

/// Label-permutation significance of a CV accuracy. Repeats the full nested
/// CV on shuffled labels (fold plan fixed) and returns the add-one p-value;
/// None when n_perm is 0.
pub fn model_permutation_test(
    dataset: &EpochDataset,
    method: Method,
    plan: &FoldPlan,
    opts: &CvOptions,
    n_perm: usize,
    seed: u64,
    observed_accuracy: f64,
) -> Result<Option<f64>> {
    if n_perm == 0 {
        return Ok(None);
    }
    let window = opts.window_ms.unwrap_or_else(|| dataset.full_window());
    let engine = CvEngine::new(dataset, method, window)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled_labels = Vec::with_capacity(n_perm);
    let mut labels = dataset.labels().to_vec();
    for _ in 0..n_perm {
        labels.shuffle(&mut rng);
        shuffled_labels.push(labels.clone());
    }

    let flags: Result<Vec<usize>> = shuffled_labels
        .par_iter()
        .map(|perm| {
            accuracy_over_folds(&engine, plan, perm, opts)
                .map(|acc| usize::from(acc >= observed_accuracy))
        })
        .collect();
    let hits: usize = flags?.into_iter().sum();
    Ok(Some((1 + hits) as f64 / (1 + n_perm) as f64))
}
