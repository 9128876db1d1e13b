//! Shared oracles for the acceptance suite. Everything here is an
//! independent route to the quantities the library computes: a dense
//! projected-gradient QP solver for the SVM dual, explicit feature-space
//! primal decision values, and a deterministic problem generator.

use recoverbench_core::dataio::EpochDataset;
use recoverbench_core::learners::TrainedModel;
use recoverbench_core::Mat;

/// Deterministic uniform(-1,1) stream; avoids depending on the crate's RNG.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed
            .wrapping_mul(2862933555777941757)
            .wrapping_add(3037000493))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

/// Random linearly-kernelized two-class problem with a controllable class
/// separation. Returns (kernel, labels).
pub fn random_problem(seed: u64, n: usize, dim: usize, separation: f64) -> (Mat, Vec<f64>) {
    let mut rng = Lcg::new(seed);
    let y: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let shift = separation * y[i];
            (0..dim).map(|_| rng.next_f64() + shift).collect()
        })
        .collect();
    let kernel = Mat::from_fn(n, n, |i, j| {
        feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum()
    });
    (kernel, y)
}

/// Projection of v onto {0 <= a <= c, y'a = 0} by bisection on the
/// multiplier of the equality constraint.
fn project_box_hyperplane(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let eval = |lambda: f64| -> f64 {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| yi * (vi - lambda * yi).clamp(0.0, c))
            .sum()
    };
    let bound = v.iter().fold(0.0f64, |a, x| a.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    v.iter()
        .zip(y)
        .map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c))
        .collect()
}

/// Dense projected-gradient ascent on the SVM dual; independent of the SMO
/// path. Returns (alphas, objective).
pub fn projected_gradient_qp(kernel: &Mat, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    // Q_ij = y_i y_j K_ij; step 1/L with L >= lambda_max(Q)
    let mut frob = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = y[i] * y[j] * kernel.get(i, j);
            frob += q * q;
        }
    }
    let step = 1.0 / frob.sqrt().max(1e-12);

    let mut alphas = vec![0.0f64; n];
    let mut last_obj = f64::NEG_INFINITY;
    for iter in 0..400_000 {
        // gradient of sum(a) - 1/2 a'Qa is 1 - Qa
        let mut grad = vec![1.0f64; n];
        for i in 0..n {
            let vi = alphas[i] * y[i];
            if vi == 0.0 {
                continue;
            }
            let row = kernel.row(i);
            for j in 0..n {
                grad[j] -= y[j] * vi * row[j];
            }
        }
        let proposal: Vec<f64> = (0..n).map(|i| alphas[i] + step * grad[i]).collect();
        alphas = project_box_hyperplane(&proposal, y, c);

        if iter % 2000 == 1999 {
            let obj = recoverbench_core::learners::dual_objective(kernel, y, &alphas);
            if (obj - last_obj).abs() < 1e-10 {
                break;
            }
            last_obj = obj;
        }
    }
    let obj = recoverbench_core::learners::dual_objective(kernel, y, &alphas);
    (alphas, obj)
}

/// Explicit primal decision values: f(x) = W . (x - train_mean) + bias,
/// computed straight from the dataset, independent of any kernel algebra.
pub fn primal_decisions(
    model: &TrainedModel,
    weight_map: &Mat,
    dataset: &EpochDataset,
    window_ms: (f64, f64),
    eval_trials: &[usize],
) -> Vec<f64> {
    let samples = dataset.window_samples(window_ms).expect("window");
    let n_train = model.train_indices.len() as f64;
    let mut means = vec![vec![0.0f64; samples.len()]; dataset.n_channels()];
    for &t in &model.train_indices {
        for c in 0..dataset.n_channels() {
            let tr = dataset.trace(t, c);
            for (si, &k) in samples.iter().enumerate() {
                means[c][si] += tr[k] / n_train;
            }
        }
    }
    eval_trials
        .iter()
        .map(|&t| {
            let mut f = model.bias;
            for c in 0..dataset.n_channels() {
                let tr = dataset.trace(t, c);
                for (si, &k) in samples.iter().enumerate() {
                    f += weight_map.get(c, k) * (tr[k] - means[c][si]);
                }
            }
            f
        })
        .collect()
}
