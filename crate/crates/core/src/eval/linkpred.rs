use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::auc::{auc, auc_std_error, PairLabel, ScoredPair};
use crate::data::{canonical, sample_pair_where, EdgeSplit, Network};
use crate::error::{Error, Result};
use crate::inference::{pair_posterior, run_maybe_parallel, VertexRef};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMethod {
    /// Edge probability from the encoder with the edge state unknown.
    #[default]
    PosteriorPi,
    /// Cosine similarity of combined global embeddings.
    CosineGlobal,
}

impl FromStr for ScoreMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior_pi" => Ok(ScoreMethod::PosteriorPi),
            "cosine_global" => Ok(ScoreMethod::CosineGlobal),
            _ => Err(Error::Config(format!(
                "unknown score method {s:?} (expected posterior_pi or cosine_global)"
            ))),
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::PosteriorPi => "posterior_pi",
            ScoreMethod::CosineGlobal => "cosine_global",
        })
    }
}

/// Something that assigns a real score to a vertex pair.
pub trait PairScorer: Sync {
    fn score(&self, i: usize, j: usize) -> Result<f64>;
}

impl<F: Fn(usize, usize) -> Result<f64> + Sync> PairScorer for F {
    fn score(&self, i: usize, j: usize) -> Result<f64> {
        self(i, j)
    }
}

/// `π` for the canonically ordered pair.
pub struct PosteriorPiScorer<'a> {
    pub model: &'a Model,
    pub network: &'a Network,
}

impl PairScorer for PosteriorPiScorer<'_> {
    fn score(&self, i: usize, j: usize) -> Result<f64> {
        let (a, b) = canonical(i, j);
        let p = pair_posterior(self.model, VertexRef::of(self.network, a), VertexRef::of(self.network, b), true)?;
        Ok(p.pi.expect("requested"))
    }
}

/// Cosine similarity between precomputed embedding rows.
pub struct CosineScorer<'a> {
    pub embeddings: &'a [Vec<f64>],
}

impl PairScorer for CosineScorer<'_> {
    fn score(&self, i: usize, j: usize) -> Result<f64> {
        Ok(cosine(&self.embeddings[i], &self.embeddings[j]))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPredOptions {
    /// Sampled non-edges per test edge.
    pub neg_per_pos: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for LinkPredOptions {
    fn default() -> Self {
        LinkPredOptions {
            neg_per_pos: 1,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileAuc {
    /// Inclusive range of the lower endpoint's training degree.
    pub degree_range: (usize, usize),
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredReport {
    pub auc: f64,
    pub std_error: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub quantiles: Vec<QuantileAuc>,
    pub scored: Vec<ScoredPair>,
}

impl fmt::Display for LinkPredReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "auc\t{}\t{}", self.auc, self.std_error)?;
        writeln!(f, "n_pos\t{}\t0", self.n_pos)?;
        writeln!(f, "n_neg\t{}\t0", self.n_neg)?;
        for (k, q) in self.quantiles.iter().enumerate() {
            match q.auc {
                Some(a) => writeln!(f, "auc_q{}\t{}\t{}", k + 1, a, auc_std_error(a, q.n_pos, q.n_neg))?,
                None => writeln!(f, "auc_q{}\tnan\tnan", k + 1)?,
            }
        }
        Ok(())
    }
}

/// Sample `neg_per_pos` non-edges per test edge, score everything and compute AUC
/// overall and per quartile of the lower endpoint's training degree.
pub fn link_prediction_eval(
    scorer: &dyn PairScorer,
    network: &Network,
    split: &EdgeSplit,
    opts: &LinkPredOptions,
) -> Result<LinkPredReport> {
    if split.test_pos.is_empty() {
        return Err(Error::InvalidArgument("no test edges to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pairs: Vec<(usize, usize, PairLabel)> =
        split.test_pos.iter().map(|&(i, j)| (i, j, PairLabel::Positive)).collect();
    for _ in 0..split.test_pos.len() * opts.neg_per_pos {
        let (i, j) = sample_pair_where(network.n_vertices(), &mut rng, |a, b| !network.has_edge(a, b))?;
        pairs.push((i, j, PairLabel::Negative));
    }
    let scores = run_maybe_parallel(opts.threads, pairs.len(), |k| scorer.score(pairs[k].0, pairs[k].1))?;
    let scored: Vec<ScoredPair> = pairs
        .iter()
        .zip(scores)
        .map(|(&(i, j, label), score)| ScoredPair { i, j, score, label })
        .collect();
    report_from_scored(scored, &split.train_degrees())
}

pub(crate) fn report_from_scored(scored: Vec<ScoredPair>, degrees: &[usize]) -> Result<LinkPredReport> {
    let value = auc(&scored)?;
    let n_pos = scored.iter().filter(|s| s.label == PairLabel::Positive).count();
    let n_neg = scored.len() - n_pos;
    let low = |s: &ScoredPair| degrees[s.i].min(degrees[s.j]);
    let mut pos_deg: Vec<usize> = scored
        .iter()
        .filter(|s| s.label == PairLabel::Positive)
        .map(low)
        .collect();
    pos_deg.sort_unstable();
    let cut = |q: f64| pos_deg[((q * pos_deg.len() as f64).ceil() as usize).saturating_sub(1)];
    let bounds = [cut(0.25), cut(0.5), cut(0.75)];
    let bucket = |deg: usize| bounds.iter().position(|&b| deg <= b).unwrap_or(3);
    let mut quantiles = Vec::new();
    for k in 0..4 {
        let members: Vec<ScoredPair> = scored.iter().filter(|s| bucket(low(s)) == k).copied().collect();
        let qp = members.iter().filter(|s| s.label == PairLabel::Positive).count();
        let qn = members.len() - qp;
        let lo = if k == 0 { 0 } else { bounds[k - 1] + 1 };
        let hi = if k == 3 { usize::MAX } else { bounds[k] };
        quantiles.push(QuantileAuc {
            degree_range: (lo, hi),
            n_pos: qp,
            n_neg: qn,
            auc: if qp > 0 && qn > 0 { Some(auc(&members)?) } else { None },
        });
    }
    Ok(LinkPredReport {
        auc: value,
        std_error: auc_std_error(value, n_pos, n_neg),
        n_pos,
        n_neg,
        quantiles,
        scored,
    })
}
