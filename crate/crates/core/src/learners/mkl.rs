//! Sparse multiple kernel learning over per-channel kernels.
//!
//! Alternates SVM training on the weighted kernel sum with reduced-gradient
//! descent of the objective J(d) over the probability simplex. The gradient
//! at the SVM optimum is dJ/dd_m = -1/2 sum_ij a_i a_j y_i y_j K_m[i,j];
//! steps follow an Armijo backtracking line search from the largest step
//! that stays inside the simplex. The returned weight vector is sparse:
//! entries below 1e-8 are clamped to zero and the rest renormalized.

use crate::error::{Error, Result};
use crate::learners::svm::{svm_train_warm, SvmSolution};
use crate::mat::Mat;

/// Result of one MKL training run.
#[derive(Debug, Clone)]
pub struct MklSolution {
    /// Simplex kernel weights, one per input kernel; sparse.
    pub d: Vec<f64>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    /// Final value of J(d) (the SVM dual optimum on the weighted sum).
    pub objective: f64,
    /// J(d) after every accepted step, starting at the uniform init.
    pub objective_history: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
}

const SPARSITY_CLAMP: f64 = 1e-8;
/// Default relative duality-gap stopping threshold.
pub const DEFAULT_GAP_TOL: f64 = 1e-3;
const ARMIJO_C: f64 = 1e-4;

fn weighted_sum(kernels: &[Mat], d: &[f64]) -> Mat {
    let n = kernels[0].rows();
    let mut out = Mat::zeros(n, n);
    for (k, &w) in kernels.iter().zip(d) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
            *o += w * v;
        }
    }
    out
}

/// 1/2 v' K_m v for each kernel, with v = alphas .* y.
fn kernel_quadratics(kernels: &[Mat], y: &[f64], alphas: &[f64]) -> Vec<f64> {
    let n = y.len();
    let v: Vec<f64> = alphas.iter().zip(y).map(|(a, yi)| a * yi).collect();
    let active: Vec<usize> = (0..n).filter(|&i| v[i] != 0.0).collect();
    kernels
        .iter()
        .map(|k| {
            let mut s = 0.0;
            for &i in &active {
                let row = k.row(i);
                let mut acc = 0.0;
                for &j in &active {
                    acc += v[j] * row[j];
                }
                s += v[i] * acc;
            }
            0.5 * s
        })
        .collect()
}

fn solve(
    kernels: &[Mat],
    d: &[f64],
    y: &[f64],
    c: f64,
    svm_tol: f64,
    warm: Option<&[f64]>,
) -> Result<(SvmSolution, f64)> {
    let k = weighted_sum(kernels, d);
    let sol = svm_train_warm(&k, y, c, svm_tol, 500_000, warm)?;
    let obj = crate::learners::svm::dual_objective(&k, y, &sol.alphas);
    Ok((sol, obj))
}

/// Trains sparse MKL on centered (and normalized) per-channel kernels.
/// `gap_tol` is the relative duality-gap stopping threshold
/// ([`DEFAULT_GAP_TOL`] unless a tighter optimum is needed).
pub fn mkl_train(
    kernels: &[Mat],
    y: &[f64],
    c: f64,
    svm_tol: f64,
    d_tol: f64,
    gap_tol: f64,
    max_outer: usize,
) -> Result<MklSolution> {
    let m = kernels.len();
    if m == 0 {
        return Err(Error::validation(
            "kernels",
            "at least one kernel is required",
        ));
    }
    let n = y.len();
    for (idx, k) in kernels.iter().enumerate() {
        if k.rows() != n || k.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "kernel {idx} is {}x{}, expected {n}x{n}",
                k.rows(),
                k.cols()
            )));
        }
    }

    let mut d = vec![1.0 / m as f64; m];
    let (mut sol, mut objective) = solve(kernels, &d, y, c, svm_tol, None)?;
    let mut objective_history = vec![objective];
    let mut converged = false;
    let mut outer = 0usize;

    while outer < max_outer {
        outer += 1;
        let quad = kernel_quadratics(kernels, y, &sol.alphas); // S_m = -gradient
        let weighted_quad: f64 = d.iter().zip(&quad).map(|(w, s)| w * s).sum();
        let max_quad = quad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let gap = max_quad - weighted_quad;
        if gap <= gap_tol * objective.abs().max(1e-12) {
            converged = true;
            break;
        }

        // reduced gradient with the heaviest component as pivot
        let grad: Vec<f64> = quad.iter().map(|s| -s).collect();
        let mut pivot = 0usize;
        for i in 1..m {
            if d[i] > d[pivot] {
                pivot = i;
            }
        }
        let mut dir = vec![0.0f64; m];
        let mut dir_pivot = 0.0;
        for i in 0..m {
            if i == pivot {
                continue;
            }
            let reduced = grad[i] - grad[pivot];
            if d[i] <= 0.0 && reduced > 0.0 {
                dir[i] = 0.0;
            } else {
                dir[i] = -reduced;
            }
            dir_pivot -= dir[i];
        }
        dir[pivot] = dir_pivot;
        let dir_max = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dir_max < 1e-12 {
            converged = true;
            break;
        }

        // largest simplex-feasible step
        let mut gamma_max = f64::INFINITY;
        for i in 0..m {
            if dir[i] < 0.0 {
                gamma_max = gamma_max.min(-d[i] / dir[i]);
            }
        }
        if !gamma_max.is_finite() || gamma_max <= 0.0 {
            converged = true;
            break;
        }

        let slope: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
        let mut gamma = gamma_max;
        let mut accepted = None;
        for _ in 0..30 {
            let mut d_try: Vec<f64> = d
                .iter()
                .zip(&dir)
                .map(|(w, v)| (w + gamma * v).max(0.0))
                .collect();
            let total: f64 = d_try.iter().sum();
            for w in d_try.iter_mut() {
                *w /= total;
            }
            let (sol_try, obj_try) = solve(kernels, &d_try, y, c, svm_tol, Some(&sol.alphas))?;
            if obj_try <= objective + ARMIJO_C * gamma * slope {
                accepted = Some((d_try, sol_try, obj_try));
                break;
            }
            gamma *= 0.5;
            if gamma < 1e-8 * gamma_max {
                break;
            }
        }

        match accepted {
            Some((d_new, sol_new, obj_new)) => {
                let delta = d
                    .iter()
                    .zip(&d_new)
                    .fold(0.0f64, |a, (old, new)| a.max((old - new).abs()));
                d = d_new;
                sol = sol_new;
                objective = obj_new;
                objective_history.push(objective);
                if delta < d_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // line search stalled: no measurable descent left
                converged = true;
                break;
            }
        }
    }

    // sparsify and retrain on the final weights
    let mut clamped = false;
    for w in d.iter_mut() {
        if *w < SPARSITY_CLAMP {
            if *w != 0.0 {
                clamped = true;
            }
            *w = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateKernel(
            "all kernel weights collapsed to zero".into(),
        ));
    }
    for w in d.iter_mut() {
        *w /= total;
    }
    if clamped {
        let (sol_final, obj_final) = solve(kernels, &d, y, c, svm_tol, Some(&sol.alphas))?;
        sol = sol_final;
        objective = obj_final;
        objective_history.push(objective);
    }

    Ok(MklSolution {
        d,
        alphas: sol.alphas,
        bias: sol.bias,
        objective,
        objective_history,
        outer_iterations: outer,
        converged,
    })
}
