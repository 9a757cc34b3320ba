//! Score-set evaluation: ROC/EER for verification, top-1 accuracy for
//! identification, multi-run aggregation.

use crate::error::{Error, Result};

/// One point of the ROC table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Equal error rate over genuine/impostor score sets, accept-if
/// `score >= threshold`.
///
/// Candidate thresholds are the distinct observed scores;
/// `FRR(t) = P(genuine < t)`, `FAR(t) = P(impostor >= t)`. The EER is the
/// FAR/FRR midpoint at the threshold minimizing `|FAR - FRR|`, ties going to
/// the lower threshold.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    if genuine.is_empty() {
        return Err(Error::EmptyScores("genuine"));
    }
    if impostor.is_empty() {
        return Err(Error::EmptyScores("impostor"));
    }
    let mut gen_sorted = genuine.to_vec();
    gen_sorted.sort_by(f64::total_cmp);
    let mut imp_sorted = impostor.to_vec();
    imp_sorted.sort_by(f64::total_cmp);

    let mut best: Option<(f64, f64, f64)> = None; // (|far-frr|, threshold, eer)
    for &t in candidate_thresholds(genuine, impostor).iter() {
        let frr = count_below(&gen_sorted, t) as f64 / gen_sorted.len() as f64;
        let at_least = imp_sorted.len() - count_below(&imp_sorted, t);
        let far = at_least as f64 / imp_sorted.len() as f64;
        let gap = (far - frr).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, t, (far + frr) / 2.0));
        }
    }
    let (_, threshold, eer) = best.expect("at least one candidate threshold");
    Ok((eer, threshold))
}

/// ROC table over all distinct observed thresholds, ascending.
pub fn roc_points(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores("roc"));
    }
    let mut gen_sorted = genuine.to_vec();
    gen_sorted.sort_by(f64::total_cmp);
    let mut imp_sorted = impostor.to_vec();
    imp_sorted.sort_by(f64::total_cmp);
    Ok(candidate_thresholds(genuine, impostor)
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            far: (imp_sorted.len() - count_below(&imp_sorted, t)) as f64
                / imp_sorted.len() as f64,
            frr: count_below(&gen_sorted, t) as f64 / gen_sorted.len() as f64,
        })
        .collect())
}

fn candidate_thresholds(genuine: &[f64], impostor: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Elements strictly below `t` in a sorted slice.
fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&v| v < t)
}

/// Fraction of exact label matches.
pub fn compute_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Arithmetic mean and sample standard deviation (n-1 denominator, 0 for a
/// single value).
pub fn aggregate_runs(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("run values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

/// Multi-run verification evaluation report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub leads: usize,
    pub runs: usize,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub per_run_eer: Vec<f64>,
    pub per_run_threshold: Vec<f64>,
    pub mean_eer: f64,
    pub std_eer: f64,
    /// Resolved configuration for the audit trail.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    /// Exhaustive-sweep oracle, deliberately brute force.
    fn eer_oracle(genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
        let mut cands: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let mut best_gap = f64::INFINITY;
        let mut best = (0.0, 0.0);
        for &t in &cands {
            let frr = genuine.iter().filter(|&&g| g < t).count() as f64 / genuine.len() as f64;
            let far = impostor.iter().filter(|&&i| i >= t).count() as f64 / impostor.len() as f64;
            if (far - frr).abs() < best_gap {
                best_gap = (far - frr).abs();
                best = ((far + frr) / 2.0, t);
            }
        }
        best
    }

    #[test]
    fn separated_scores_have_zero_eer() {
        let (eer, _) = compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert_eq!(eer, 0.0);
    }

    #[test]
    fn indistinguishable_scores_have_half_eer() {
        let (eer, t) = compute_eer(&[0.5], &[0.5]).unwrap();
        assert_eq!(eer, 0.5);
        assert_eq!(t, 0.5);
    }

    #[test]
    fn overlapping_scores_match_derived_third() {
        let genuine = [0.9, 0.8, 0.3];
        let impostor = [0.7, 0.2, 0.1];
        let (eer, t) = compute_eer(&genuine, &impostor).unwrap();
        let (oracle_eer, oracle_t) = eer_oracle(&genuine, &impostor);
        assert_eq!(eer, oracle_eer);
        assert_eq!(t, oracle_t);
        assert!((eer - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn eer_matches_oracle_on_random_sets() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(12);
        for _ in 0..100 {
            let ng = rng.gen_range(1..50);
            let ni = rng.gen_range(1..50);
            // coarse grid forces score ties across the two sets
            let genuine: Vec<f64> = (0..ng).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
            let impostor: Vec<f64> = (0..ni).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
            let (eer, t) = compute_eer(&genuine, &impostor).unwrap();
            let (oe, ot) = eer_oracle(&genuine, &impostor);
            assert_eq!(eer, oe);
            assert_eq!(t, ot);
        }
    }

    #[test]
    fn empty_scores_are_rejected() {
        assert!(matches!(compute_eer(&[], &[0.1]), Err(Error::EmptyScores(_))));
        assert!(matches!(compute_eer(&[0.1], &[]), Err(Error::EmptyScores(_))));
    }

    #[test]
    fn accuracy_counts_exact_matches() {
        assert_eq!(compute_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(compute_accuracy(&[0, 0, 0], &[1, 2, 3]).unwrap(), 0.0);
        let pred: Vec<usize> = (0..100).collect();
        let mut truth = pred.clone();
        truth[10] = 999;
        truth[20] = 999;
        truth[30] = 999;
        truth[40] = 999;
        assert_eq!(compute_accuracy(&pred, &truth).unwrap(), 0.96);
        assert!(matches!(
            compute_accuracy(&[1], &[1, 2]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn aggregation_uses_sample_std() {
        let (m, s) = aggregate_runs(&[0.02; 10]).unwrap();
        assert!((m - 0.02).abs() < 1e-15);
        assert!(s.abs() < 1e-12);
        let (m, s) = aggregate_runs(&[0.01, 0.03]).unwrap();
        assert!((m - 0.02).abs() < 1e-15);
        assert!((s - 0.0141421356).abs() < 1e-9);
        let (m, s) = aggregate_runs(&[0.05]).unwrap();
        assert_eq!((m, s), (0.05, 0.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    proptest! {
        /// EER is invariant under strictly increasing score transforms.
        #[test]
        fn eer_invariant_under_monotone_transform(
            genuine in proptest::collection::vec(0.0f64..1.0, 1..30),
            impostor in proptest::collection::vec(0.0f64..1.0, 1..30),
        ) {
            let (eer, _) = compute_eer(&genuine, &impostor).unwrap();
            let warp = |v: f64| (3.0 * v + 0.5).tanh() + 0.1 * v;
            let gw: Vec<f64> = genuine.iter().map(|&v| warp(v)).collect();
            let iw: Vec<f64> = impostor.iter().map(|&v| warp(v)).collect();
            let (eer_w, _) = compute_eer(&gw, &iw).unwrap();
            prop_assert!((eer - eer_w).abs() < 1e-12);
        }

        /// Swapping genuine/impostor roles under the accept-if <= threshold
        /// convention yields the same EER.
        #[test]
        fn eer_symmetric_under_label_swap(
            genuine in proptest::collection::vec(0.0f64..1.0, 1..30),
            impostor in proptest::collection::vec(0.0f64..1.0, 1..30),
        ) {
            let (eer, _) = compute_eer(&genuine, &impostor).unwrap();
            // swapped computation: accept-if score <= t
            let mut cands: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
            cands.sort_by(f64::total_cmp);
            cands.dedup();
            let mut best_gap = f64::INFINITY;
            let mut swapped_eer = 0.0;
            for &t in &cands {
                let frr = impostor.iter().filter(|&&v| v > t).count() as f64 / impostor.len() as f64;
                let far = genuine.iter().filter(|&&v| v <= t).count() as f64 / genuine.len() as f64;
                if (far - frr).abs() < best_gap {
                    best_gap = (far - frr).abs();
                    swapped_eer = (far + frr) / 2.0;
                }
            }
            prop_assert!((eer - swapped_eer).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_points_cover_all_thresholds() {
        let pts = roc_points(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(pts.len(), 6);
        // FAR falls, FRR rises with the threshold
        for w in pts.windows(2) {
            assert!(w[1].far <= w[0].far);
            assert!(w[1].frr >= w[0].frr);
        }
    }
}
