use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::auc::{auc, auc_std_error, PairLabel, ScoredPair};
use super::linkpred::{cosine, ScoreMethod};
use crate::data::Network;
use crate::error::{Error, Result};
use crate::inference::{
    embed_all, embed_unseen, pair_posterior, run_maybe_parallel, Conditioning, StructureRef, UnseenOptions, VertexEmbedding,
    VertexRef,
};
use crate::model::Model;

/// Seen/held-out vertex partition. `seen_network` re-indexes `seen` to `0..seen.len()`.
#[derive(Debug, Clone)]
pub struct VertexHoldout {
    pub seen: Vec<usize>,
    pub held_out: Vec<usize>,
    pub seen_network: Network,
}

/// Hold out `round(fraction * N)` uniformly chosen vertices together with all their edges.
pub fn hold_out_vertices(network: &Network, fraction: f64, seed: u64) -> Result<VertexHoldout> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let n = network.n_vertices();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k + 2 > n {
        return Err(Error::InvalidArgument(format!("cannot hold out {k} of {n} vertices")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held_out = order.split_off(n - k);
    let mut seen = order;
    seen.sort_unstable();
    held_out.sort_unstable();
    let seen_network = network.induced(&seen)?;
    Ok(VertexHoldout {
        seen,
        held_out,
        seen_network,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnseenEvalOptions {
    /// Seen vertices the new vertex is fitted against.
    pub contexts: usize,
    pub neg_per_pos: usize,
    pub method: ScoreMethod,
    /// Contexts per seen vertex when `method` needs global embeddings.
    pub global_samples: usize,
    pub fit: UnseenOptions,
    pub seed: u64,
    pub threads: usize,
}

impl Default for UnseenEvalOptions {
    fn default() -> Self {
        UnseenEvalOptions {
            contexts: 64,
            neg_per_pos: 1,
            method: ScoreMethod::PosteriorPi,
            global_samples: 64,
            fit: UnseenOptions::default(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenReport {
    pub auc: f64,
    pub std_error: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Held-out vertex id (original indexing) and its fitted embedding.
    pub embeddings: Vec<(usize, VertexEmbedding)>,
    pub scored: Vec<ScoredPair>,
}

impl fmt::Display for UnseenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unseen_auc\t{}\t{}", self.auc, self.std_error)?;
        writeln!(f, "n_pos\t{}\t0", self.n_pos)?;
        writeln!(f, "n_neg\t{}\t0", self.n_neg)?;
        writeln!(f, "n_unseen\t{}\t0", self.embeddings.len())
    }
}

/// Embed each held-out vertex from its text alone, then score its edges to seen
/// vertices against `neg_per_pos` sampled non-neighbours among the seen vertices.
///
/// `model` must have been trained on `holdout.seen_network`. Held-out vertices with
/// no seen neighbour contribute no pairs. `PosteriorPi` scores a pair by the edge
/// probability with the new vertex in the first slot and its fitted structure vector;
/// `CosineGlobal` compares its combined embedding with the seen vertex's global one.
pub fn unseen_link_prediction(
    model: &Model,
    network: &Network,
    holdout: &VertexHoldout,
    opts: &UnseenEvalOptions,
) -> Result<UnseenReport> {
    if opts.contexts == 0 {
        return Err(Error::InvalidArgument("contexts must be positive".into()));
    }
    let seen_index: Vec<Option<usize>> = {
        let mut idx = vec![None; network.n_vertices()];
        for (k, &v) in holdout.seen.iter().enumerate() {
            idx[v] = Some(k);
        }
        idx
    };
    let n_seen = holdout.seen.len();
    let seen_global: Vec<Vec<f64>> = match opts.method {
        ScoreMethod::PosteriorPi => Vec::new(),
        ScoreMethod::CosineGlobal => embed_all(
            model,
            &holdout.seen_network,
            opts.global_samples,
            Conditioning::Unknown,
            opts.seed,
            opts.threads,
        )?
        .iter()
        .map(VertexEmbedding::combined)
        .collect(),
    };
    let per_vertex = |k: usize| -> Result<(VertexEmbedding, Vec<ScoredPair>)> {
        let u = holdout.held_out[k];
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (u as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let all: Vec<usize> = (0..n_seen).collect();
        let contexts: Vec<usize> = all.choose_multiple(&mut rng, opts.contexts.min(n_seen)).copied().collect();
        let fit = UnseenOptions {
            seed: rng.random(),
            ..opts.fit
        };
        let tokens = network.text(u);
        let emb = embed_unseen(model, &holdout.seen_network, tokens, &contexts, &fit)?.embedding;

        let positives: Vec<usize> = (0..network.n_vertices())
            .filter(|&v| network.has_edge(u, v))
            .filter_map(|v| seen_index[v])
            .collect();
        let mut pairs: Vec<(usize, PairLabel)> = positives.iter().map(|&s| (s, PairLabel::Positive)).collect();
        let candidates: Vec<usize> = (0..n_seen)
            .filter(|&s| !network.has_edge(u, holdout.seen[s]))
            .collect();
        for _ in 0..positives.len() * opts.neg_per_pos {
            if let Some(&s) = candidates.choose(&mut rng) {
                pairs.push((s, PairLabel::Negative));
            }
        }
        let combined = emb.combined();
        let scored = pairs
            .into_iter()
            .map(|(s, label)| {
                let score = match opts.method {
                    ScoreMethod::PosteriorPi => {
                        let a = VertexRef {
                            tokens,
                            structure: StructureRef::Vector(&emb.structure),
                        };
                        let post = pair_posterior(model, a, VertexRef::of(&holdout.seen_network, s), true)?;
                        post.pi.expect("requested")
                    }
                    ScoreMethod::CosineGlobal => cosine(&combined, &seen_global[s]),
                };
                Ok(ScoredPair {
                    i: u,
                    j: holdout.seen[s],
                    score,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((emb, scored))
    };
    let results = run_maybe_parallel(opts.threads, holdout.held_out.len(), per_vertex)?;
    let mut embeddings = Vec::with_capacity(results.len());
    let mut scored = Vec::new();
    for (&u, (emb, s)) in holdout.held_out.iter().zip(results) {
        embeddings.push((u, emb));
        scored.extend(s);
    }
    let value = auc(&scored)?;
    let n_pos = scored.iter().filter(|s| s.label == PairLabel::Positive).count();
    let n_neg = scored.len() - n_pos;
    Ok(UnseenReport {
        auc: value,
        std_error: auc_std_error(value, n_pos, n_neg),
        n_pos,
        n_neg,
        embeddings,
        scored,
    })
}
