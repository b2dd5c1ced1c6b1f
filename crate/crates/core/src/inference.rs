//! Global vertex embeddings and embedding of vertices unseen during training.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Adam, Graph, ParameterStore, Tensor};
use crate::data::{canonical, EdgeSplit, Network, TokenSeq};
use crate::encoder::{encode_pair, Structure, VertexInput};
use crate::error::{Error, Result};
use crate::latent::PairPosterior;
use crate::model::{structure_init, Model, ModelNodes};
use crate::trainer::{elbo_incomplete, PairNoise};

#[derive(Debug, Clone, PartialEq)]
pub struct VertexEmbedding {
    /// Posterior-mean latent code averaged over contexts.
    pub semantic: Vec<f64>,
    /// Structure vector.
    pub structure: Vec<f64>,
}

impl VertexEmbedding {
    /// `[semantic; structure]`.
    pub fn combined(&self) -> Vec<f64> {
        let mut v = self.semantic.clone();
        v.extend_from_slice(&self.structure);
        v
    }
}

/// A vertex described by its text and a structure source that need not be a table row.
#[derive(Debug, Clone, Copy)]
pub enum StructureRef<'a> {
    Row(usize),
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct VertexRef<'a> {
    pub tokens: &'a TokenSeq,
    pub structure: StructureRef<'a>,
}

impl<'a> VertexRef<'a> {
    pub fn of(network: &'a Network, v: usize) -> Self {
        VertexRef {
            tokens: network.text(v),
            structure: StructureRef::Row(v),
        }
    }
}

fn bind_vertex<'a>(g: &mut Graph, v: VertexRef<'a>) -> Result<VertexInput<'a>> {
    let structure = match v.structure {
        StructureRef::Row(r) => Structure::Row(r),
        StructureRef::Vector(h) => Structure::Free(g.constant(Tensor::column(h.to_vec()))?),
    };
    Ok(VertexInput {
        tokens: v.tokens,
        structure,
    })
}

/// Forward-only posterior for the ordered pair `(a, b)`.
pub fn pair_posterior(model: &Model, a: VertexRef<'_>, b: VertexRef<'_>, with_pi: bool) -> Result<PairPosterior> {
    let mut g = Graph::new();
    let nodes = ModelNodes::bind(&mut g, &model.params)?;
    let a = bind_vertex(&mut g, a)?;
    let b = bind_vertex(&mut g, b)?;
    let enc = encode_pair(&mut g, &nodes, &model.dims, a, b, with_pi)?;
    Ok(enc.posterior.values(&g))
}

/// How edge state is treated for each context pair in [`global_embedding`].
#[derive(Debug, Clone, Copy, Default)]
pub enum Conditioning<'a> {
    /// Every pair unknown: average the mixture mean.
    #[default]
    Unknown,
    /// Training edges use the linked mean; all other pairs are unknown.
    TrainEdges(&'a EdgeSplit),
    /// Training edges use the linked mean; all other pairs are asserted non-edges.
    Complete(&'a EdgeSplit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    First,
    Second,
}

/// Posterior mean of one endpoint's code for a context pair.
fn context_mean(post: &PairPosterior, side: Side, state: PairState) -> Vec<f64> {
    let (mu, mu0) = match side {
        Side::First => (&post.mu_i, &post.mu0_i),
        Side::Second => (&post.mu_j, &post.mu0_j),
    };
    match state {
        PairState::Linked => mu.clone(),
        PairState::Unlinked => mu0.clone(),
        PairState::Unknown => {
            let pi = post.pi.expect("encoded with pi");
            mu.iter().zip(mu0).map(|(a, b)| pi * a + (1.0 - pi) * b).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairState {
    Linked,
    Unlinked,
    Unknown,
}

fn pair_state(cond: Conditioning<'_>, i: usize, j: usize) -> PairState {
    match cond {
        Conditioning::Unknown => PairState::Unknown,
        Conditioning::TrainEdges(s) if s.is_train_edge(i, j) => PairState::Linked,
        Conditioning::TrainEdges(_) => PairState::Unknown,
        Conditioning::Complete(s) if s.is_train_edge(i, j) => PairState::Linked,
        Conditioning::Complete(_) => PairState::Unlinked,
    }
}

/// Semantic part of `i`'s embedding against one context, with the pair encoded in
/// canonical (smaller id first) order.
pub fn context_code(model: &Model, network: &Network, i: usize, j: usize, cond: Conditioning<'_>) -> Result<Vec<f64>> {
    let (a, b) = canonical(i, j);
    let state = pair_state(cond, i, j);
    let post = pair_posterior(model, VertexRef::of(network, a), VertexRef::of(network, b), state == PairState::Unknown)?;
    let side = if i == a { Side::First } else { Side::Second };
    Ok(context_mean(&post, side, state))
}

fn average(codes: &[Vec<f64>]) -> Vec<f64> {
    let d = codes[0].len();
    let mut acc = vec![0.0; d];
    for c in codes {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / codes.len() as f64).collect()
}

/// Average `i`'s posterior-mean code over `s` contexts drawn without replacement
/// from `contexts` (all of them when `s ≥ contexts.len()`).
pub fn global_embedding(
    model: &Model,
    network: &Network,
    i: usize,
    contexts: &[usize],
    s: usize,
    cond: Conditioning<'_>,
    rng: &mut impl Rng,
) -> Result<VertexEmbedding> {
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("empty context set".into()));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("subsample size must be at least 1".into()));
    }
    if contexts.contains(&i) {
        return Err(Error::InvalidArgument(format!("vertex {i} is its own context")));
    }
    let chosen: Vec<usize> = if s >= contexts.len() {
        contexts.to_vec()
    } else {
        contexts.choose_multiple(rng, s).copied().collect()
    };
    let codes = chosen
        .iter()
        .map(|&j| context_code(model, network, i, j, cond))
        .collect::<Result<Vec<_>>>()?;
    Ok(VertexEmbedding {
        semantic: average(&codes),
        structure: model.structure_row(i)?,
    })
}

/// Embeddings for every vertex, each against `s` contexts sampled from all other
/// vertices. Vertex `v` uses its own generator seeded from `(seed, v)`, so results
/// do not depend on `threads`.
pub fn embed_all(
    model: &Model,
    network: &Network,
    s: usize,
    cond: Conditioning<'_>,
    seed: u64,
    threads: usize,
) -> Result<Vec<VertexEmbedding>> {
    let all: Vec<usize> = (0..network.n_vertices()).collect();
    embed_vertices(model, network, &all, s, cond, seed, threads)
}

/// [`embed_all`] restricted to `vertices`; each vertex gets the same embedding it
/// would get from [`embed_all`].
pub fn embed_vertices(
    model: &Model,
    network: &Network,
    vertices: &[usize],
    s: usize,
    cond: Conditioning<'_>,
    seed: u64,
    threads: usize,
) -> Result<Vec<VertexEmbedding>> {
    let n = network.n_vertices();
    if let Some(&v) = vertices.iter().find(|&&v| v >= n) {
        return Err(Error::InvalidArgument(format!("vertex {v} out of range for {n} vertices")));
    }
    let one = |k: usize| {
        let v = vertices[k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let contexts: Vec<usize> = (0..n).filter(|&u| u != v).collect();
        global_embedding(model, network, v, &contexts, s, cond, &mut rng)
    };
    run_maybe_parallel(threads, vertices.len(), one)
}

pub(crate) fn run_maybe_parallel<T: Send>(
    threads: usize,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    } else {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnseenOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for UnseenOptions {
    fn default() -> Self {
        UnseenOptions {
            steps: 100,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenEmbedding {
    pub embedding: VertexEmbedding,
    /// Average bound over the contexts before each update, then after the last.
    pub objective: Vec<f64>,
}

const H_STAR: &str = "h_star";

/// Fit a structure vector for a new text by maximizing the average incomplete-edge
/// bound against `contexts` with every trained parameter frozen, then average the
/// mixture-mean code over the same contexts.
///
/// Noise is drawn once per context, so the objective is a deterministic function of
/// the structure vector.
pub fn embed_unseen(
    model: &Model,
    network: &Network,
    tokens: &TokenSeq,
    contexts: &[usize],
    opts: &UnseenOptions,
) -> Result<UnseenEmbedding> {
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("empty context set".into()));
    }
    if tokens.len == 0 {
        return Err(Error::EmptyDocument);
    }
    let prior = model.prior()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = structure_init(&mut rng, 1, model.dims.d_w).with_shape(vec![model.dims.d_w, 1])?;
    let noise: Vec<PairNoise> = contexts
        .iter()
        .map(|_| PairNoise::draw(&mut rng, model.dims.d, 1))
        .collect();
    let mut h_store = ParameterStore::new();
    h_store.insert(H_STAR, init);
    let adam = Adam::new(opts.lr);
    let scale = 1.0 / contexts.len() as f64;

    let objective_and_grad = |h: &ParameterStore| -> Result<(f64, Tensor)> {
        let mut total = 0.0;
        let mut grad = Tensor::zeros(&[model.dims.d_w, 1]);
        for (&c, nz) in contexts.iter().zip(&noise) {
            let mut g = Graph::new();
            let nodes = ModelNodes::bind(&mut g, &model.params)?;
            let h_node = g.param_from(h, H_STAR)?;
            let a = VertexInput {
                tokens,
                structure: Structure::Free(h_node),
            };
            let b = VertexInput::row(network.text(c), c);
            let parts = elbo_incomplete(&mut g, &nodes, &model.dims, a, b, nz, &prior)?;
            let loss = g.neg(parts.elbo)?;
            let loss = g.scale(loss, scale)?;
            total -= g.value(loss).item();
            if let Some(gh) = g.backward(loss)?.param(H_STAR) {
                grad.add_assign(gh);
            }
        }
        Ok((total, grad))
    };

    let mut objective = Vec::with_capacity(opts.steps + 1);
    for _ in 0..opts.steps {
        let (obj, grad) = objective_and_grad(&h_store)?;
        objective.push(obj);
        h_store.adam_step(&BTreeMap::from([(H_STAR.to_owned(), grad)]), &adam)?;
    }
    objective.push(objective_and_grad(&h_store)?.0);

    let h = h_store.get(H_STAR)?.data().to_vec();
    let codes = contexts
        .iter()
        .map(|&c| {
            let a = VertexRef {
                tokens,
                structure: StructureRef::Vector(&h),
            };
            let post = pair_posterior(model, a, VertexRef::of(network, c), true)?;
            Ok(context_mean(&post, Side::First, PairState::Unknown))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnseenEmbedding {
        embedding: VertexEmbedding {
            semantic: average(&codes),
            structure: h,
        },
        objective,
    })
}

/// Write "vertex_id<TAB>v1 … vn" lines with 17 significant digits.
pub fn write_embeddings(
    mut w: impl std::io::Write,
    rows: impl IntoIterator<Item = (usize, Vec<f64>)>,
) -> std::io::Result<()> {
    for (id, values) in rows {
        let cells: Vec<String> = values.iter().map(|v| format!("{:.16e}", v)).collect();
        writeln!(w, "{}\t{}", id, cells.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Network;
    use crate::encoder::tests::{tiny_dims, tiny_store};
    use approx::assert_abs_diff_eq;

    fn toy() -> (Model, Network) {
        let dims = tiny_dims();
        let texts = (0..4).map(|v| TokenSeq::new(vec![2 + v as u32, 6 - v as u32], 4)).collect();
        let (net, _) = Network::new(4, [(0, 1), (2, 3)], texts, Vec::new()).unwrap();
        (Model::new(tiny_store(9), dims, 0.9, 0.2).unwrap(), net)
    }

    #[test]
    fn exhaustive_average_matches_hand_loop() {
        let (model, net) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = global_embedding(&model, &net, 2, &[0, 1, 3], 3, Conditioning::Unknown, &mut rng).unwrap();
        let mut want = vec![0.0; 2];
        for j in [0usize, 1, 3] {
            let (a, b) = canonical(2, j);
            let p = pair_posterior(&model, VertexRef::of(&net, a), VertexRef::of(&net, b), true).unwrap();
            let pi = p.pi.unwrap();
            for k in 0..2 {
                let (mu, mu0) = if a == 2 { (p.mu_i[k], p.mu0_i[k]) } else { (p.mu_j[k], p.mu0_j[k]) };
                want[k] += (pi * mu + (1.0 - pi) * mu0) / 3.0;
            }
        }
        for k in 0..2 {
            assert_abs_diff_eq!(e.semantic[k], want[k], epsilon = 1e-14);
        }
        assert_eq!(e.structure, model.structure_row(2).unwrap());
        assert_eq!(e.combined().len(), 2 + 3);
    }

    #[test]
    fn conditioning_on_train_edges_uses_linked_mean() {
        let (model, net) = toy();
        let split = crate::data::split_edges(&net, 1.0, 0).unwrap();
        let code = context_code(&model, &net, 1, 0, Conditioning::TrainEdges(&split)).unwrap();
        let p = pair_posterior(&model, VertexRef::of(&net, 0), VertexRef::of(&net, 1), false).unwrap();
        assert_eq!(code, p.mu_j);
        let code = context_code(&model, &net, 0, 3, Conditioning::Complete(&split)).unwrap();
        let p = pair_posterior(&model, VertexRef::of(&net, 0), VertexRef::of(&net, 3), false).unwrap();
        assert_eq!(code, p.mu0_i);
    }

    #[test]
    fn pi_one_reduces_mixture_to_linked_mean() {
        let mut p = PairPosterior::standard(2, 0.5);
        p.mu_i = vec![1.0, 2.0];
        p.mu0_i = vec![-5.0, 7.0];
        p.pi = Some(1.0);
        assert_eq!(context_mean(&p, Side::First, PairState::Unknown), vec![1.0, 2.0]);
    }

    #[test]
    fn global_embedding_errors_and_determinism() {
        let (model, net) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(global_embedding(&model, &net, 0, &[], 1, Conditioning::Unknown, &mut rng).is_err());
        assert!(global_embedding(&model, &net, 0, &[0, 1], 1, Conditioning::Unknown, &mut rng).is_err());
        let a = embed_all(&model, &net, 2, Conditioning::Unknown, 5, 1).unwrap();
        let b = embed_all(&model, &net, 2, Conditioning::Unknown, 5, 3).unwrap();
        assert_eq!(a, b);
        let subset = embed_vertices(&model, &net, &[2, 0], 2, Conditioning::Unknown, 5, 1).unwrap();
        assert_eq!(subset, vec![a[2].clone(), a[0].clone()]);
        assert!(embed_vertices(&model, &net, &[99], 2, Conditioning::Unknown, 5, 1).is_err());
    }

    #[test]
    fn unseen_zero_steps_keeps_initialization() {
        let (model, net) = toy();
        let tokens = TokenSeq::new(vec![3, 4], 4);
        let opts = UnseenOptions { steps: 0, lr: 1e-2, seed: 4 };
        let out = embed_unseen(&model, &net, &tokens, &[0, 1, 2], &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = structure_init(&mut rng, 1, 3);
        assert_eq!(out.embedding.structure, init.data());
        assert_eq!(out.objective.len(), 1);
    }

    #[test]
    fn unseen_objective_improves() {
        let (model, net) = toy();
        let tokens = TokenSeq::new(vec![3, 4], 4);
        let opts = UnseenOptions { steps: 40, lr: 5e-2, seed: 1 };
        let out = embed_unseen(&model, &net, &tokens, &[0, 1, 2, 3], &opts).unwrap();
        assert!(out.objective[40] > out.objective[0]);
    }

    #[test]
    fn embedding_lines_round_trip() {
        let mut buf = Vec::new();
        let v = vec![0.1, -1.0 / 3.0, 12345.678];
        write_embeddings(&mut buf, [(7, v.clone())]).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let (id, rest) = line.trim_end().split_once('\t').unwrap();
        assert_eq!(id, "7");
        let back: Vec<f64> = rest.split(' ').map(|s| s.parse().unwrap()).collect();
        assert_eq!(back, v);
    }
}
