//! Recovery metrics: Expected Ranking of channels, cosine similarity between
//! weight maps and the injected signal at feature and channel level, and
//! TP/FP rates under the adaptive and Top-10 thresholds.

use serde::{Deserialize, Serialize};

use crate::cv::CvResult;
use crate::error::{Error, Result};
use crate::inject::GroundTruth;
use crate::mat::Mat;

/// Threshold rule for the ranking-based TP/FP rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreshMode {
    /// thresh = p_c - |I_in|: the lowest rank compatible with perfect
    /// recovery of all signal channels.
    Adaptive,
    /// thresh = p_c - 10: the conventional "Top 10" cut.
    Top10,
}

/// Ranking-based rates; `fp` is None where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    pub tp: f64,
    pub fp: Option<f64>,
    /// Raw count of non-signal channels above threshold.
    pub fp_raw_count: usize,
    pub thresh: i64,
}

/// All recovery metrics of one (cell, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub er: Vec<u32>,
    pub cosine_feature: Option<f64>,
    pub cosine_channel: Option<f64>,
    pub tp_adaptive: Option<f64>,
    pub fp_adaptive: Option<f64>,
    pub tp_top10: Option<f64>,
    pub fp_top10: Option<f64>,
    pub fp_top10_raw_count: Option<usize>,
    pub balanced_accuracy: f64,
    pub p_value: Option<f64>,
    /// True when the cell carries no injected signal, which leaves the
    /// similarity and rate metrics undefined.
    pub no_signal: bool,
}

/// Expected Ranking: per fold, channels with positive contribution are
/// ranked descending (best = p_c, next p_c - 1, ...; zero-contribution
/// channels get rank 0, ties broken by ascending channel index), then the
/// per-channel ranks are averaged across folds and rounded half away from
/// zero.
pub fn expected_ranking(per_fold_wc: &[Vec<f64>]) -> Result<Vec<u32>> {
    let n_folds = per_fold_wc.len();
    if n_folds == 0 {
        return Err(Error::validation("per_fold_wc", "need at least one fold"));
    }
    let p_c = per_fold_wc[0].len();
    let mut rank_sums = vec![0.0f64; p_c];
    for (f, wc) in per_fold_wc.iter().enumerate() {
        if wc.len() != p_c {
            return Err(Error::DimensionMismatch(format!(
                "fold {f} has {} channels, expected {p_c}",
                wc.len()
            )));
        }
        if let Some(c) = wc.iter().position(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::validation(
                "per_fold_wc",
                format!("contribution of channel {c} in fold {f} is {}", wc[c]),
            ));
        }
        let mut contributing: Vec<usize> = (0..p_c).filter(|&c| wc[c] > 0.0).collect();
        contributing.sort_by(|&a, &b| wc[b].partial_cmp(&wc[a]).unwrap().then(a.cmp(&b)));
        for (pos, &c) in contributing.iter().enumerate() {
            rank_sums[c] += (p_c - pos) as f64;
        }
    }
    Ok(rank_sums
        .iter()
        .map(|s| {
            let mean = s / n_folds as f64;
            mean.round() as u32 // round half away from zero; means are >= 0
        })
        .collect())
}

/// Cosine similarity dot(a,b) / (|a||b|).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// TP and FP rates of an Expected Ranking against the ground truth.
///
/// TP counts signal channels ranked above the threshold over the number of
/// signal channels; FP counts non-signal channels above the threshold over
/// the threshold itself. FP is undefined when every channel carries signal
/// or when the threshold is not positive.
pub fn tp_fp_rates(er: &[u32], truth: &GroundTruth, mode: ThreshMode) -> Result<RateResult> {
    let p_c = truth.n_channels();
    if er.len() != p_c {
        return Err(Error::DimensionMismatch(format!(
            "ER length {} vs {p_c} channels",
            er.len()
        )));
    }
    let n_signal = truth.signal_channels.len();
    if n_signal == 0 {
        return Err(Error::validation(
            "truth",
            "no signal channels: rates undefined",
        ));
    }
    let thresh: i64 = match mode {
        ThreshMode::Adaptive => (p_c - n_signal) as i64,
        ThreshMode::Top10 => p_c as i64 - 10,
    };
    let above = |c: usize| er[c] as i64 > thresh;
    let tp_hits = truth.signal_channels.iter().filter(|&&c| above(c)).count();
    let tp = tp_hits as f64 / n_signal as f64;
    let fp_raw_count = (0..p_c)
        .filter(|&c| !truth.is_signal_channel(c) && above(c))
        .count();
    let fp = if n_signal == p_c || thresh <= 0 {
        None
    } else {
        Some(fp_raw_count as f64 / thresh as f64)
    };
    Ok(RateResult {
        tp,
        fp,
        fp_raw_count,
        thresh,
    })
}

/// Builds the full recovery report of one CV result against one truth.
///
/// The feature-level cosine compares the fold-averaged weight map with the
/// injected traces; the channel-level cosine compares fold-averaged
/// contributions with the per-channel time averages of the injection.
pub fn assemble_report(cv: &CvResult, truth: &GroundTruth) -> Result<RecoveryReport> {
    let n_folds = cv.folds.len();
    if n_folds == 0 {
        return Err(Error::validation("cv", "no folds"));
    }
    let p_c = truth.n_channels();
    let per_fold_wc: Vec<Vec<f64>> = cv
        .folds
        .iter()
        .map(|f| f.channel_contributions.clone())
        .collect();
    for wc in &per_fold_wc {
        if wc.len() != p_c {
            return Err(Error::DimensionMismatch(
                "channel contributions vs truth channel count".into(),
            ));
        }
    }
    let er = expected_ranking(&per_fold_wc)?;

    if truth.is_empty() {
        return Ok(RecoveryReport {
            er,
            cosine_feature: None,
            cosine_channel: None,
            tp_adaptive: None,
            fp_adaptive: None,
            tp_top10: None,
            fp_top10: None,
            fp_top10_raw_count: None,
            balanced_accuracy: cv.balanced_accuracy,
            p_value: cv.p_value,
            no_signal: true,
        });
    }

    // fold-averaged weight map
    let rows = cv.folds[0].weight_map.rows();
    let cols = cv.folds[0].weight_map.cols();
    let mut w_mean = Mat::zeros(rows, cols);
    for fold in &cv.folds {
        for (acc, v) in w_mean
            .as_mut_slice()
            .iter_mut()
            .zip(fold.weight_map.as_slice())
        {
            *acc += v;
        }
    }
    for v in w_mean.as_mut_slice() {
        *v /= n_folds as f64;
    }
    let x_in_flat: Vec<f64> = truth.x_in.iter().flatten().copied().collect();
    if x_in_flat.len() != w_mean.as_slice().len() {
        return Err(Error::DimensionMismatch(
            "weight map shape vs injected signal shape".into(),
        ));
    }
    let cosine_feature = cosine_similarity(w_mean.as_slice(), &x_in_flat).ok();

    let mut wc_mean = vec![0.0f64; p_c];
    for wc in &per_fold_wc {
        for (acc, v) in wc_mean.iter_mut().zip(wc) {
            *acc += v;
        }
    }
    for v in wc_mean.iter_mut() {
        *v /= n_folds as f64;
    }
    let cosine_channel = cosine_similarity(&wc_mean, &truth.channel_means).ok();

    let adaptive = tp_fp_rates(&er, truth, ThreshMode::Adaptive)?;
    let top10 = tp_fp_rates(&er, truth, ThreshMode::Top10)?;

    Ok(RecoveryReport {
        er,
        cosine_feature,
        cosine_channel,
        tp_adaptive: Some(adaptive.tp),
        fp_adaptive: adaptive.fp,
        tp_top10: Some(top10.tp),
        fp_top10: top10.fp,
        fp_top10_raw_count: Some(top10.fp_raw_count),
        balanced_accuracy: cv.balanced_accuracy,
        p_value: cv.p_value,
        no_signal: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth_with(p_c: usize, signal: Vec<usize>) -> GroundTruth {
        GroundTruth {
            x_in: vec![vec![0.0; 8]; p_c],
            s_in: signal.len() as f64 / p_c as f64,
            channel_means: vec![0.0; p_c],
            signal_channels: signal,
            snr_in: 1.0,
            window_ms: (0.0, 7.0),
            gaussian_fwhm_ms: 0.0,
            channel_order_seed: 0,
        }
    }

    #[test]
    fn er_textbook_example() {
        let folds = vec![vec![0.5, 0.2, 0.0, 0.1], vec![0.4, 0.3, 0.0, 0.2]];
        assert_eq!(expected_ranking(&folds).unwrap(), vec![4, 3, 0, 2]);
    }

    #[test]
    fn er_zero_contributions() {
        let folds = vec![vec![0.0; 5]; 3];
        assert_eq!(expected_ranking(&folds).unwrap(), vec![0; 5]);
    }

    #[test]
    fn er_strictly_decreasing_single_fold() {
        let folds = vec![vec![9.0, 5.0, 4.0, 1.0]];
        assert_eq!(expected_ranking(&folds).unwrap(), vec![4, 3, 2, 1]);
    }

    #[test]
    fn er_ties_break_by_channel_index() {
        let folds = vec![vec![0.5, 0.5, 0.2]];
        // channel 0 wins the tie for the top rank
        assert_eq!(expected_ranking(&folds).unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn er_rejects_negative_contributions() {
        assert!(expected_ranking(&[vec![0.1, -0.2]]).is_err());
    }

    #[test]
    fn er_rounds_half_away_from_zero() {
        // ranks 3 and 2 across two folds -> mean 2.5 -> rounds to 3
        let folds = vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0]];
        assert_eq!(expected_ranking(&folds).unwrap(), vec![3, 3, 0]);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rates_perfect_recovery() {
        let truth = truth_with(38, (0..10).collect());
        // signal channels ranked 29..38, others below
        let mut er = vec![0u32; 38];
        for (i, c) in (0..10).enumerate() {
            er[c] = (29 + i) as u32;
        }
        for c in 10..38 {
            er[c] = (c - 10) as u32;
        }
        let r = tp_fp_rates(&er, &truth, ThreshMode::Adaptive).unwrap();
        assert_eq!(r.thresh, 28);
        assert_eq!(r.tp, 1.0);
        assert_eq!(r.fp, Some(0.0));
        assert_eq!(r.fp_raw_count, 0);
    }

    #[test]
    fn rates_inverted_recovery() {
        // 10 non-signal channels occupy the top ranks; signal channels low
        let truth = truth_with(38, (0..10).collect());
        let mut er = vec![0u32; 38];
        for (i, c) in (10..20).enumerate() {
            er[c] = (29 + i) as u32;
        }
        let r = tp_fp_rates(&er, &truth, ThreshMode::Adaptive).unwrap();
        assert_eq!(r.tp, 0.0);
        assert!((r.fp.unwrap() - 10.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn rates_top10_mode() {
        let truth = truth_with(38, (0..10).collect());
        let mut er = vec![0u32; 38];
        // 8 signal channels and 2 non-signal channels in the top 10
        for (i, c) in (0..8).enumerate() {
            er[c] = (31 + i) as u32;
        }
        er[15] = 29;
        er[16] = 30;
        let r = tp_fp_rates(&er, &truth, ThreshMode::Top10).unwrap();
        assert_eq!(r.thresh, 28);
        assert!((r.tp - 0.8).abs() < 1e-12);
        assert!((r.fp.unwrap() - 2.0 / 28.0).abs() < 1e-12);
        assert_eq!(r.fp_raw_count, 2);
    }

    #[test]
    fn fp_undefined_at_full_sparsity() {
        let truth = truth_with(6, (0..6).collect());
        let er: Vec<u32> = (1..=6).collect();
        let r = tp_fp_rates(&er, &truth, ThreshMode::Adaptive).unwrap();
        assert_eq!(r.fp, None);
    }

    #[test]
    fn rates_error_on_empty_signal_set() {
        let truth = truth_with(6, vec![]);
        assert!(tp_fp_rates(&[0; 6], &truth, ThreshMode::Adaptive).is_err());
    }

    #[test]
    fn report_roundtrips_through_json() {
        let report = RecoveryReport {
            er: vec![3, 0, 2],
            cosine_feature: Some(0.25),
            cosine_channel: None,
            tp_adaptive: Some(1.0),
            fp_adaptive: Some(0.0),
            tp_top10: Some(1.0),
            fp_top10: None,
            fp_top10_raw_count: Some(0),
            balanced_accuracy: 0.875,
            p_value: Some(1.0 / 501.0),
            no_signal: false,
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: RecoveryReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // permuting channels permutes ER identically
        #[test]
        fn er_permutation_equivariant(
            wc in proptest::collection::vec(0.0f64..5.0, 4..10),
            seed in 0u64..100,
        ) {
            let n = wc.len();
            let mut perm: Vec<usize> = (0..n).collect();
            // simple seeded Fisher-Yates
            let mut state = seed.wrapping_add(1);
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                perm.swap(i, j);
            }
            let permuted: Vec<f64> = (0..n).map(|i| wc[perm[i]]).collect();
            let er = expected_ranking(&[wc.clone()]).unwrap();
            let er_p = expected_ranking(&[permuted]).unwrap();
            // equivariance can only be exact when contributions are distinct
            // (ties break by index); make them distinct by construction
            prop_assume!((0..n).all(|i| (0..n).all(|j| i == j || wc[i] != wc[j])));
            for i in 0..n {
                prop_assert_eq!(er_p[i], er[perm[i]]);
            }
        }

        // positive rescaling of contributions within a fold leaves ER fixed
        #[test]
        fn er_scale_invariant(
            wc in proptest::collection::vec(0.0f64..5.0, 3..8),
            scale in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = wc.iter().map(|v| v * scale).collect();
            prop_assert_eq!(
                expected_ranking(&[wc]).unwrap(),
                expected_ranking(&[scaled]).unwrap()
            );
        }

        // cosine is scale invariant in the first argument
        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-3.0f64..3.0, 3..6),
            lambda in 0.001f64..1000.0,
        ) {
            let norm: f64 = a.iter().map(|v| v * v).sum();
            prop_assume!(norm > 1e-6);
            let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            prop_assume!(nb > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let c1 = cosine_similarity(&a, &b).unwrap();
            let c2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
        }

        // lowering the threshold weakly increases both rates
        #[test]
        fn rates_monotone_in_threshold(
            er in proptest::collection::vec(0u32..12, 12),
            n_signal in 1usize..11,
        ) {
            let truth = truth_with(12, (0..n_signal).collect());
            let taller = tp_fp_rates(&er, &truth, ThreshMode::Adaptive).unwrap();
            // emulate a lower threshold by comparing raw counts directly
            let lower = taller.thresh - 1;
            let above = |c: usize, t: i64| er[c] as i64 > t;
            let tp_low = truth.signal_channels.iter()
                .filter(|&&c| above(c, lower)).count() as f64 / n_signal as f64;
            prop_assert!(tp_low >= taller.tp - 1e-12);
            let fp_low_count = (0..12)
                .filter(|&c| !truth.is_signal_channel(c) && above(c, lower)).count();
            prop_assert!(fp_low_count >= taller.fp_raw_count);
        }
    }
}
