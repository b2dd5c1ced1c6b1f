use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// L2-regularized one-vs-rest linear classifier trained by full-batch subgradient
/// descent on the hinge loss.
///
/// Features are centered and divided by one global scale, and the weights start at
/// zero, so fitting commutes with any rotation of the input space.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    classes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    mean: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierOptions {
    pub l2: f64,
    pub lr: f64,
    pub iterations: usize,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        ClassifierOptions {
            l2: 1e-3,
            lr: 0.5,
            iterations: 300,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[usize], opts: &ClassifierOptions) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidArgument("need matching, non-empty features and labels".into()));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let sq: f64 = x
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let scale = if sq > 0.0 { sq.sqrt() } else { 1.0 };
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m) / scale).collect())
            .collect();

        let mut classes: Vec<usize> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let mut weights = Vec::with_capacity(classes.len());
        let mut biases = Vec::with_capacity(classes.len());
        for &c in &classes {
            let t: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0; dim];
            let mut b = 0.0;
            for _ in 0..opts.iterations {
                let mut gw: Vec<f64> = w.iter().map(|v| opts.l2 * v).collect();
                let mut gb = 0.0;
                for (row, &tk) in z.iter().zip(&t) {
                    if tk * (dot(&w, row) + b) < 1.0 {
                        for (g, v) in gw.iter_mut().zip(row) {
                            *g -= tk * v / n;
                        }
                        gb -= tk / n;
                    }
                }
                for (wv, g) in w.iter_mut().zip(&gw) {
                    *wv -= opts.lr * g;
                }
                b -= opts.lr * gb;
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(LinearClassifier {
            classes,
            weights,
            biases,
            mean,
            scale,
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| (v - m) / self.scale).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let s = dot(w, &z) + b;
            if s > best.0 {
                best = (s, k);
            }
        }
        self.classes[best.1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for ClassifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy\t{}\t{}", self.mean, self.std)?;
        writeln!(f, "repeats\t{}\t0", self.accuracies.len())
    }
}

/// Stratified random splits over labeled vertices; per repeat fit on `train_ratio`
/// of each class and report accuracy on the rest.
pub fn classify_vertices(
    embeddings: &[Vec<f64>],
    labels: &[Option<usize>],
    train_ratio: f64,
    repeats: usize,
    seed: u64,
    opts: &ClassifierOptions,
) -> Result<ClassifyReport> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("train_ratio {train_ratio} not in (0, 1)")));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::InvalidArgument("one label slot per embedding required".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be positive".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            by_class.entry(*c).or_default().push(v);
        }
    }
    if by_class.len() < 2 {
        return Err(Error::InvalidArgument("need at least two labeled classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accuracies = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for members in by_class.values() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            // every class keeps at least one training example
            let k = ((train_ratio * m.len() as f64).round() as usize).clamp(1, m.len());
            train.extend_from_slice(&m[..k]);
            test.extend_from_slice(&m[k..]);
        }
        if test.is_empty() {
            return Err(Error::InvalidArgument("test split is empty".into()));
        }
        let x: Vec<Vec<f64>> = train.iter().map(|&v| embeddings[v].clone()).collect();
        let y: Vec<usize> = train.iter().map(|&v| labels[v].expect("labeled")).collect();
        let clf = LinearClassifier::fit(&x, &y, opts)?;
        let correct = test
            .iter()
            .filter(|&&v| clf.predict(&embeddings[v]) == labels[v].expect("labeled"))
            .count();
        accuracies.push(correct as f64 / test.len() as f64);
    }
    let mean = accuracies.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ClassifyReport { accuracies, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(rng: &mut impl Rng, classes: usize, per: usize, dim: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<Option<usize>>) {
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>())
            .collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                let noise: Vec<f64> = (0..dim).map(|_| spread * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
                x.push(center.iter().zip(noise).map(|(a, b)| a + b).collect());
                y.push(Some(c));
            }
        }
        (x, y)
    }

    #[test]
    fn separable_two_class_toy_is_perfect() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|k| vec![if k < 20 { -1.0 } else { 1.0 } + 0.01 * k as f64, 0.3 * (k % 3) as f64])
            .collect();
        let y: Vec<Option<usize>> = (0..40).map(|k| Some(usize::from(k >= 20))).collect();
        let r = classify_vertices(&x, &y, 0.5, 5, 0, &ClassifierOptions::default()).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, mut y) = blobs(&mut rng, 7, 100, 8, 1.0);
        y.shuffle(&mut rng);
        let r = classify_vertices(&x, &y, 0.5, 10, 2, &ClassifierOptions::default()).unwrap();
        assert!((r.mean - 1.0 / 7.0).abs() < 0.05, "{}", r.mean);
    }

    #[test]
    fn rotation_leaves_accuracy_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = blobs(&mut rng, 3, 40, 2, 2.0);
        let (s, c) = (0.6f64, 0.8f64);
        let rotated: Vec<Vec<f64>> = x.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
        let a = classify_vertices(&x, &y, 0.3, 10, 4, &ClassifierOptions::default()).unwrap();
        let b = classify_vertices(&rotated, &y, 0.3, 10, 4, &ClassifierOptions::default()).unwrap();
        assert!((a.mean - b.mean).abs() <= a.std.max(b.std), "{} vs {}", a.mean, b.mean);
    }

    #[test]
    fn invalid_inputs() {
        let x = vec![vec![0.0]; 4];
        let y = vec![Some(0), Some(1), None, Some(1)];
        assert!(classify_vertices(&x, &y, 1.0, 1, 0, &ClassifierOptions::default()).is_err());
        assert!(classify_vertices(&x, &[Some(0); 4], 0.5, 1, 0, &ClassifierOptions::default()).is_err());
    }
}
