use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub i: usize,
    pub j: usize,
    pub score: f64,
    pub label: PairLabel,
}

/// Probability that a random positive outranks a random negative, ties counted as
/// one half, via the Mann-Whitney rank sum.
pub fn auc(scored: &[ScoredPair]) -> Result<f64> {
    let pos: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == PairLabel::Positive)
        .map(|s| s.score)
        .collect();
    let neg: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == PairLabel::Negative)
        .map(|s| s.score)
        .collect();
    auc_from_scores(&pos, &neg)
}

pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "AUC needs both classes ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "auc" });
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < all.len() {
        let mut end = k;
        while end + 1 < all.len() && all[end + 1].0 == all[k].0 {
            end += 1;
        }
        // 1-based ranks k+1..=end+1 share their average
        let avg = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[k..=end].iter().filter(|e| e.1).count() as f64;
        k = end + 1;
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Hanley-McNeil standard error of an AUC estimate.
pub fn auc_std_error(auc: f64, n_pos: usize, n_neg: usize) -> f64 {
    let (p, n) = (n_pos as f64, n_neg as f64);
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc) + (p - 1.0) * (q1 - auc * auc) + (n - 1.0) * (q2 - auc * auc)) / (p * n);
    var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut c = 0.0;
        for p in pos {
            for n in neg {
                c += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        c / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn separated_tied_and_single_class() {
        assert_eq!(auc_from_scores(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc_from_scores(&[1.0; 4], &[1.0; 3]).unwrap(), 0.5);
        assert!(auc_from_scores(&[1.0], &[]).is_err());
        let pairs = [ScoredPair {
            i: 0,
            j: 1,
            score: 0.3,
            label: PairLabel::Positive,
        }];
        assert!(auc(&pairs).is_err());
    }

    #[test]
    fn random_scorer_is_near_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let neg: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!((auc_from_scores(&pos, &neg).unwrap() - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn matches_brute_force(pos in proptest::collection::vec(0u8..6, 1..12), neg in proptest::collection::vec(0u8..6, 1..12)) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            prop_assert!((auc_from_scores(&pos, &neg).unwrap() - brute(&pos, &neg)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_increasing_transform(pos in proptest::collection::vec(-3.0f64..3.0, 1..15), neg in proptest::collection::vec(-3.0f64..3.0, 1..15)) {
            let f = |x: f64| x * x * x + x;
            let a = auc_from_scores(&pos, &neg).unwrap();
            let b = auc_from_scores(&pos.iter().map(|&x| f(x)).collect::<Vec<_>>(), &neg.iter().map(|&x| f(x)).collect::<Vec<_>>()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
