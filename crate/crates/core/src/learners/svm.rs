//! Soft-margin SVM dual solver on a precomputed kernel.
//!
//! Sequential minimal optimization with maximal-violating-pair working-set
//! selection: the pair is the most KKT-violating (i, j) across the up/down
//! index sets, ties broken by lowest index, which keeps runs deterministic.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Dual solution of one SVM training problem.
#[derive(Debug, Clone)]
pub struct SvmSolution {
    /// One dual coefficient per training trial, in [0, C].
    pub alphas: Vec<f64>,
    pub bias: f64,
    /// Number of pair updates performed.
    pub iterations: usize,
    /// False when max_passes ran out before the KKT gap closed below tol.
    pub converged: bool,
}

fn validate_problem(kernel: &Mat, y: &[f64]) -> Result<()> {
    let n = y.len();
    if kernel.rows() != n || kernel.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel {}x{} vs {n} labels",
            kernel.rows(),
            kernel.cols()
        )));
    }
    if kernel.max_asymmetry() > 1e-10 {
        return Err(Error::validation("kernel", "matrix is not symmetric"));
    }
    let n_pos = y.iter().filter(|v| **v == 1.0).count();
    let n_neg = y.iter().filter(|v| **v == -1.0).count();
    if n_pos + n_neg != n {
        return Err(Error::validation("labels", "labels must be +1 or -1"));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("labels", "both classes must be present"));
    }
    Ok(())
}

/// Solves max_a sum(a) - 1/2 sum a_i a_j y_i y_j K_ij subject to
/// 0 <= a <= C and sum a_i y_i = 0, stopping when the maximal KKT
/// violation falls below `tol`.
pub fn svm_train(
    kernel: &Mat,
    y: &[f64],
    c: f64,
    tol: f64,
    max_passes: usize,
) -> Result<SvmSolution> {
    svm_train_warm(kernel, y, c, tol, max_passes, None)
}

/// `svm_train` with an optional feasible starting point (used by the MKL
/// outer loop to warm-start between kernel-weight updates).
pub fn svm_train_warm(
    kernel: &Mat,
    y: &[f64],
    c: f64,
    tol: f64,
    max_passes: usize,
    warm_alphas: Option<&[f64]>,
) -> Result<SvmSolution> {
    validate_problem(kernel, y)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::validation("C", "must be finite and > 0"));
    }
    let n = y.len();

    let mut alphas = match warm_alphas {
        Some(a0) => {
            if a0.len() != n {
                return Err(Error::DimensionMismatch("warm start length".into()));
            }
            a0.iter().map(|a| a.clamp(0.0, c)).collect()
        }
        None => vec![0.0f64; n],
    };

    // u_k = sum_i alpha_i y_i K_ik, maintained incrementally.
    let mut u = vec![0.0f64; n];
    if warm_alphas.is_some() {
        for i in 0..n {
            let v = alphas[i] * y[i];
            if v != 0.0 {
                let row = kernel.row(i);
                for k in 0..n {
                    u[k] += v * row[k];
                }
            }
        }
    }

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < max_passes {
        // maximal violating pair over gradient y_i - u_i
        let mut i_up = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        let mut i_low = usize::MAX;
        let mut m_low = f64::INFINITY;
        for i in 0..n {
            let g = y[i] - u[i];
            let in_up = (y[i] > 0.0 && alphas[i] < c) || (y[i] < 0.0 && alphas[i] > 0.0);
            let in_low = (y[i] < 0.0 && alphas[i] < c) || (y[i] > 0.0 && alphas[i] > 0.0);
            if in_up && g > m_up {
                m_up = g;
                i_up = i;
            }
            if in_low && g < m_low {
                m_low = g;
                i_low = i;
            }
        }
        if i_up == usize::MAX || i_low == usize::MAX || m_up - m_low <= tol {
            converged = true;
            break;
        }

        // canonical pair ordering keeps the update algebra identical under
        // a global label flip
        let (p, q) = if i_up < i_low {
            (i_up, i_low)
        } else {
            (i_low, i_up)
        };
        let (l, h) = if y[p] != y[q] {
            (
                (alphas[q] - alphas[p]).max(0.0),
                (c + alphas[q] - alphas[p]).min(c),
            )
        } else {
            (
                (alphas[p] + alphas[q] - c).max(0.0),
                (alphas[p] + alphas[q]).min(c),
            )
        };
        let eta = (kernel.get(p, p) + kernel.get(q, q) - 2.0 * kernel.get(p, q)).max(1e-12);
        let e_p = u[p] - y[p];
        let e_q = u[q] - y[q];
        // snap near-bound values to the exact bound; a residue like 1e-17
        // leaves a coordinate selectable by the working-set rule yet
        // immovable, which would wedge the solver
        let snap = |a: f64| -> f64 {
            if a < 1e-12 * c {
                0.0
            } else if a > c * (1.0 - 1e-12) {
                c
            } else {
                a
            }
        };
        let a_q_new = snap((alphas[q] + y[q] * (e_p - e_q) / eta).clamp(l, h));
        let delta_q = a_q_new - alphas[q];
        if delta_q == 0.0 {
            // feasible interval numerically empty for this pair
            break;
        }
        // the constraint-derived alpha_p can land an ulp outside the box
        let a_p_new = snap((alphas[p] + y[p] * y[q] * (alphas[q] - a_q_new)).clamp(0.0, c));
        let delta_p = a_p_new - alphas[p];
        alphas[p] = a_p_new;
        alphas[q] = a_q_new;

        let wp = y[p] * delta_p;
        let wq = y[q] * delta_q;
        let row_p = kernel.row(p);
        let row_q = kernel.row(q);
        for k in 0..n {
            u[k] += wp * row_p[k] + wq * row_q[k];
        }
        iterations += 1;
    }

    // bias: average y_i - u_i over free support vectors; midpoint of the
    // final KKT interval when none are free
    let eps = 1e-8 * c;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for i in 0..n {
        if alphas[i] > eps && alphas[i] < c - eps {
            free_sum += y[i] - u[i];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for i in 0..n {
            let g = y[i] - u[i];
            if (y[i] > 0.0 && alphas[i] < c) || (y[i] < 0.0 && alphas[i] > 0.0) {
                m_up = m_up.max(g);
            }
            if (y[i] < 0.0 && alphas[i] < c) || (y[i] > 0.0 && alphas[i] > 0.0) {
                m_low = m_low.min(g);
            }
        }
        (m_up + m_low) / 2.0
    };

    Ok(SvmSolution {
        alphas,
        bias,
        iterations,
        converged,
    })
}

/// Dual objective sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij.
pub fn dual_objective(kernel: &Mat, y: &[f64], alphas: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        let vi = alphas[i] * y[i];
        if vi == 0.0 {
            continue;
        }
        let row = kernel.row(i);
        let mut s = 0.0;
        for j in 0..n {
            s += alphas[j] * y[j] * row[j];
        }
        quad += vi * s;
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Largest KKT violation of a solution: distance of y_i f(x_i) from its
/// admissible region given the box position of alpha_i.
pub fn kkt_violation(kernel: &Mat, y: &[f64], c: f64, alphas: &[f64], bias: f64) -> f64 {
    let n = y.len();
    let eps = 1e-8 * c;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut u = 0.0;
        let row = kernel.row(i);
        for j in 0..n {
            u += alphas[j] * y[j] * row[j];
        }
        let margin = y[i] * (u + bias);
        let v = if alphas[i] <= eps {
            (1.0 - margin).max(0.0)
        } else if alphas[i] >= c - eps {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// |sum alpha_i y_i|, which the solver keeps at zero up to rounding.
pub fn equality_residual(y: &[f64], alphas: &[f64]) -> f64 {
    alphas
        .iter()
        .zip(y)
        .map(|(a, yi)| a * yi)
        .sum::<f64>()
        .abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Mat {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn two_trial_analytic_solution() {
        // y = [+1, -1], K = I, C = 10: equality constraint forces
        // a1 = a2 = a; objective 2a - a^2 is maximal at a = 1.
        let k = identity(2);
        let y = [1.0, -1.0];
        let sol = svm_train(&k, &y, 10.0, 1e-6, 10_000).unwrap();
        assert!((sol.alphas[0] - 1.0).abs() < 1e-6, "{:?}", sol.alphas);
        assert!((sol.alphas[1] - 1.0).abs() < 1e-6);
        assert!(sol.bias.abs() < 1e-9);
        // decision values on the training points
        let f0 = sol.alphas[0] * 1.0 * 1.0 + sol.bias;
        let f1 = sol.alphas[1] * -1.0 * 1.0 + sol.bias;
        assert!((f0 - 1.0).abs() < 1e-6);
        assert!((f1 + 1.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_labels_saturate_at_bound() {
        // identical points with opposite labels are inseparable; with a
        // small C both multipliers sit at the bound.
        let k = Mat::from_fn(2, 2, |_, _| 1.0);
        let y = [1.0, -1.0];
        let c = 0.25;
        let sol = svm_train(&k, &y, c, 1e-6, 10_000).unwrap();
        assert!((sol.alphas[0] - c).abs() < 1e-9, "{:?}", sol.alphas);
        assert!((sol.alphas[1] - c).abs() < 1e-9);
        let obj = dual_objective(&k, &y, &sol.alphas);
        assert!(obj.is_finite());
        assert!((obj - 2.0 * c).abs() < 1e-9); // quad term vanishes here
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut k = identity(3);
        assert!(svm_train(&k, &[1.0, 1.0, 1.0], 1.0, 1e-3, 100).is_err());
        assert!(svm_train(&k, &[1.0, -1.0, 0.5], 1.0, 1e-3, 100).is_err());
        k.set(0, 1, 0.5); // asymmetric now
        assert!(svm_train(&k, &[1.0, -1.0, 1.0], 1.0, 1e-3, 100).is_err());
    }

    #[test]
    fn kkt_audit_passes_on_random_problems() {
        let mut rng_state = 0x1234_5678_u64;
        let mut next = move || {
            rng_state = rng_state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for trial in 0..10 {
            let n = 14;
            let dim = 20;
            let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| next()).collect()).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            let k = Mat::from_fn(n, n, |i, j| {
                feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum()
            });
            let c = [0.5, 5.0, 50.0][trial % 3];
            let sol = svm_train(&k, &y, c, 1e-4, 200_000).unwrap();
            assert!(sol.converged, "trial {trial} did not converge");
            let viol = kkt_violation(&k, &y, c, &sol.alphas, sol.bias);
            assert!(viol <= 1e-3, "trial {trial}: KKT violation {viol}");
            assert!(equality_residual(&y, &sol.alphas) < 1e-6);
            assert!(sol.alphas.iter().all(|a| (0.0..=c).contains(a)));
        }
    }

    #[test]
    fn label_flip_negates_decisions_exactly() {
        let mut rng_state = 0xdead_beef_u64;
        let mut next = move || {
            rng_state = rng_state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let n = 12;
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| next()).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let y_flip: Vec<f64> = y.iter().map(|v| -v).collect();
        let k = Mat::from_fn(n, n, |i, j| {
            feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum()
        });
        let a = svm_train(&k, &y, 2.0, 1e-5, 100_000).unwrap();
        let b = svm_train(&k, &y_flip, 2.0, 1e-5, 100_000).unwrap();
        assert_eq!(a.alphas, b.alphas);
        assert_eq!(a.bias, -b.bias);
        for t in 0..n {
            let fa: f64 = (0..n)
                .map(|i| a.alphas[i] * y[i] * k.get(i, t))
                .sum::<f64>()
                + a.bias;
            let fb: f64 = (0..n)
                .map(|i| b.alphas[i] * y_flip[i] * k.get(i, t))
                .sum::<f64>()
                + b.bias;
            assert_eq!(fa, -fb, "trial {t}");
        }
    }
}
