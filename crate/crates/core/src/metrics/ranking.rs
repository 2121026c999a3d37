use super::MetricError;

fn check<S: Copy + Into<f64>>(scores: &[S], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|&s| s.into().is_nan()) {
        return Err(MetricError::NaN);
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn descending_groups<S: Copy + Into<f64>>(scores: &[S]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].into().total_cmp(&scores[a].into()));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]].into() == scores[i].into() => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve as the normalized Mann–Whitney U statistic;
/// tied positive/negative pairs count one half.
pub fn auroc<S: Copy + Into<f64>>(scores: &[S], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricError::SingleClass);
    }
    // Walk from the lowest group up, counting negatives strictly below.
    let mut below = 0.0;
    let mut u = 0.0;
    for group in descending_groups(scores).iter().rev() {
        let gp = group.iter().filter(|&&i| labels[i]).count() as f64;
        let gn = group.len() as f64 - gp;
        u += gp * (below + 0.5 * gn);
        below += gn;
    }
    Ok(u / (pos * neg))
}

/// Step-wise average precision `Σ (R_n − R_{n−1}) P_n` over descending
/// thresholds; tied scores form a single threshold.
pub fn average_precision<S: Copy + Into<f64>>(scores: &[S], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let total = labels.iter().filter(|&&l| l).count() as f64;
    if total == 0.0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    for group in descending_groups(scores) {
        let gp = group.iter().filter(|&&i| labels[i]).count() as f64;
        tp += gp;
        fp += group.len() as f64 - gp;
        let recall = tp / total;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise enumeration.
    fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    /// Every distinct score as a threshold, highest first.
    fn ap_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev = 0.0;
        let mut ap = 0.0;
        for t in ts {
            let tp = scores.iter().zip(labels).filter(|&(&s, &l)| l && s >= t).count() as f64;
            let all = scores.iter().filter(|&&s| s >= t).count() as f64;
            ap += (tp / p - prev) * tp / all;
            prev = tp / p;
        }
        ap
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass)));
        assert!(matches!(auroc(&[f64::NAN, 0.2], &[true, false]), Err(MetricError::NaN)));
        assert!(matches!(auroc(&[0.1], &[true, false]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut labels = vec![false; n];
        labels[n - 1] = true;
        assert!((average_precision(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-12);
        let ap = average_precision(&[3.0, 2.0, 1.0], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert!((ap - ap_thresholds(&[3.0, 2.0, 1.0], &[true, false, true])).abs() < 1e-12);
        assert!(matches!(average_precision(&[1.0], &[false]), Err(MetricError::NoPositives)));
    }

    #[test]
    fn random_scores_give_prevalence_level_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - prevalence).abs() < 0.02, "ap {ap} prevalence {prevalence}");
        let auc = auroc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.02);
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(|v| v as f64 * 0.5), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_enumeration((scores, labels) in case()) {
            let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
            prop_assume!(both);
            let fast = auroc(&scores, &labels).unwrap();
            prop_assert!((fast - auroc_pairs(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn ap_matches_threshold_enumeration((scores, labels) in case()) {
            prop_assume!(labels.iter().any(|&l| l));
            let fast = average_precision(&scores, &labels).unwrap();
            prop_assert!((fast - ap_thresholds(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform((scores, labels) in case()) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
        }
    }
}
