//! Per-pair evidence lower bounds and the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::{Adam, Graph, NodeId, ParameterStore, Tensor};
use crate::data::{self, EdgeSplit, EdgeState, Network, PairObservation, TokenSeq};
use crate::decoder::{recon_loglik, target_feature};
use crate::encoder::{embed_text, encode_pair, VertexInput};
use crate::error::{Error, Result};
use crate::latent::{Branch, HomophilicPrior, PosteriorNodes};
use crate::model::{init_params, Model, ModelDims, ModelNodes};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub d_w: usize,
    pub max_len: usize,
    pub kernels: usize,
    pub kernel_width: usize,
    pub lambda: f64,
    pub alpha: f64,
    /// Also drop sampled non-edges to the unknown set at rate `alpha`.
    pub drop_negatives: bool,
    /// Prior edge probability; `None` uses the sparsity of the training graph.
    pub pi0: Option<f64>,
    pub neg_per_pos: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Reparameterized samples per branch per pair.
    pub samples: usize,
    pub deterministic: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 100,
            d_w: 100,
            max_len: 128,
            kernels: 200,
            kernel_width: 5,
            lambda: 0.99,
            alpha: 0.2,
            drop_negatives: false,
            pi0: None,
            neg_per_pos: 1,
            batch_size: 64,
            epochs: 10,
            lr: 1e-4,
            seed: 0,
            samples: 1,
            deterministic: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.lambda) {
            return bad(format!("lambda {} not in [0, 1)", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} not in [0, 1]", self.alpha));
        }
        if let Some(p) = self.pi0 {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("pi0 {p} not in (0, 1)"));
            }
        }
        if self.batch_size == 0 || self.samples == 0 || self.threads == 0 {
            return bad("batch_size, samples and threads must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.kernel_width.is_multiple_of(2) {
            return bad(format!("kernel_width {} must be odd", self.kernel_width));
        }
        Ok(())
    }

    pub fn dims(&self, vocab_size: usize, n_vertices: usize) -> ModelDims {
        ModelDims {
            d: self.d,
            d_w: self.d_w,
            max_len: self.max_len,
            kernels: self.kernels,
            kernel_width: self.kernel_width,
            vocab_size,
            n_vertices,
        }
    }

    /// π₀ from the config, or the training-edge density clamped into `(0, 1)`.
    pub fn resolve_pi0(&self, split: &EdgeSplit) -> f64 {
        self.pi0.unwrap_or_else(|| {
            let n = split.n_vertices as f64;
            let pairs = (n * (n - 1.0) / 2.0).max(1.0);
            (split.train_pos.len() as f64 / pairs).clamp(1e-6, 1.0 - 1e-6)
        })
    }
}

/// Standard normal noise for one pair: per sample, `(ε₁, ε₂)` for each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNoise {
    pub linked: Vec<(Vec<f64>, Vec<f64>)>,
    pub unlinked: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PairNoise {
    pub fn draw(rng: &mut impl rand::Rng, d: usize, samples: usize) -> Self {
        let mut v = || -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
        let mut linked = Vec::with_capacity(samples);
        let mut unlinked = Vec::with_capacity(samples);
        for _ in 0..samples {
            linked.push((v(), v()));
            unlinked.push((v(), v()));
        }
        PairNoise { linked, unlinked }
    }

    pub fn zeros(d: usize) -> Self {
        PairNoise {
            linked: vec![(vec![0.0; d], vec![0.0; d])],
            unlinked: vec![(vec![0.0; d], vec![0.0; d])],
        }
    }
}

/// Graph nodes making up one pair's bound.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    pub elbo: NodeId,
    pub recon_linked: Option<NodeId>,
    pub recon_unlinked: Option<NodeId>,
    pub kl: NodeId,
    pub posterior: PosteriorNodes,
}

fn mean_recon(
    g: &mut Graph,
    nodes: &ModelNodes,
    post: &PosteriorNodes,
    branch: Branch,
    draws: &[(Vec<f64>, Vec<f64>)],
    targets: (NodeId, NodeId),
) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (e1, e2) in draws {
        let e1 = g.constant(Tensor::column(e1.clone()))?;
        let e2 = g.constant(Tensor::column(e2.clone()))?;
        let (zi, zj) = post.sample(g, branch, e1, e2)?;
        let r = recon_loglik(g, nodes, targets.0, targets.1, zi, zj)?;
        acc = Some(match acc {
            Some(a) => g.add(a, r)?,
            None => r,
        });
    }
    let total = acc.ok_or_else(|| Error::invalid("elbo", "no noise samples"))?;
    g.scale(total, 1.0 / draws.len() as f64)
}

/// Evidence lower bound for one pair under edge state `w`.
///
/// Present and Absent use the linked and unlinked branch respectively; Unknown
/// marginalizes the edge analytically with weight π.
#[allow(clippy::too_many_arguments)]
pub fn pair_elbo(
    g: &mut Graph,
    nodes: &ModelNodes,
    dims: &ModelDims,
    a: VertexInput<'_>,
    b: VertexInput<'_>,
    w: EdgeState,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<ElboParts> {
    let enc = encode_pair(g, nodes, dims, a, b, w == EdgeState::Unknown)?;
    let ti = target_feature(g, enc.x_i, &a.tokens.mask())?;
    let tj = target_feature(g, enc.x_j, &b.tokens.mask())?;
    bound_from_posterior(g, nodes, enc.posterior, (ti, tj), w, noise, prior)
}

/// [`pair_elbo`] with decoder targets supplied as constants.
///
/// Targets carry no gradient, so finite differences of [`pair_elbo`] with respect to
/// the word table also see the target move; checking gradients against this variant
/// with targets computed once by [`text_targets`] isolates the differentiated path.
#[allow(clippy::too_many_arguments)]
pub fn pair_elbo_fixed_targets(
    g: &mut Graph,
    nodes: &ModelNodes,
    dims: &ModelDims,
    a: VertexInput<'_>,
    b: VertexInput<'_>,
    targets: (&Tensor, &Tensor),
    w: EdgeState,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<ElboParts> {
    let enc = encode_pair(g, nodes, dims, a, b, w == EdgeState::Unknown)?;
    let ti = g.constant(targets.0.clone())?;
    let tj = g.constant(targets.1.clone())?;
    bound_from_posterior(g, nodes, enc.posterior, (ti, tj), w, noise, prior)
}

/// Max-pooled decoder targets of two texts under the current word table.
pub fn text_targets(store: &ParameterStore, a: &TokenSeq, b: &TokenSeq) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let table = g.param_from(store, crate::model::WORD_EMB)?;
    let mut one = |t: &TokenSeq| -> Result<Tensor> {
        let x = embed_text(&mut g, table, t)?;
        let f = target_feature(&mut g, x, &t.mask())?;
        Ok(g.value(f).clone())
    };
    Ok((one(a)?, one(b)?))
}

fn bound_from_posterior(
    g: &mut Graph,
    nodes: &ModelNodes,
    post: PosteriorNodes,
    (ti, tj): (NodeId, NodeId),
    w: EdgeState,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<ElboParts> {
    match w {
        EdgeState::Present => {
            let r = mean_recon(g, nodes, &post, Branch::Linked, &noise.linked, (ti, tj))?;
            let kl = post.kl_linked(g, prior.lambda)?;
            Ok(ElboParts {
                elbo: g.sub(r, kl)?,
                recon_linked: Some(r),
                recon_unlinked: None,
                kl,
                posterior: post,
            })
        }
        EdgeState::Absent => {
            let r = mean_recon(g, nodes, &post, Branch::Unlinked, &noise.unlinked, (ti, tj))?;
            let kl = post.kl_unlinked(g)?;
            Ok(ElboParts {
                elbo: g.sub(r, kl)?,
                recon_linked: None,
                recon_unlinked: Some(r),
                kl,
                posterior: post,
            })
        }
        EdgeState::Unknown => {
            let pi = post.pi.expect("requested above");
            let r1 = mean_recon(g, nodes, &post, Branch::Linked, &noise.linked, (ti, tj))?;
            let r0 = mean_recon(g, nodes, &post, Branch::Unlinked, &noise.unlinked, (ti, tj))?;
            let a1 = g.mul(pi, r1)?;
            let one_m = g.one_minus(pi)?;
            let a0 = g.mul(one_m, r0)?;
            let recon = g.add(a1, a0)?;
            let recon = g.sum(recon)?;
            let kl = post.kl_mixture(g, prior.lambda, prior.pi0)?;
            Ok(ElboParts {
                elbo: g.sub(recon, kl)?,
                recon_linked: Some(r1),
                recon_unlinked: Some(r0),
                kl,
                posterior: post,
            })
        }
    }
}

/// Bound for a pair with observed edge state (Present or Absent).
#[allow(clippy::too_many_arguments)]
pub fn elbo_complete(
    g: &mut Graph,
    nodes: &ModelNodes,
    dims: &ModelDims,
    a: VertexInput<'_>,
    b: VertexInput<'_>,
    w: EdgeState,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<ElboParts> {
    if w == EdgeState::Unknown {
        return Err(Error::invalid("elbo_complete", "edge state is unknown"));
    }
    pair_elbo(g, nodes, dims, a, b, w, noise, prior)
}

/// Bound for a pair whose edge state is latent.
pub fn elbo_incomplete(
    g: &mut Graph,
    nodes: &ModelNodes,
    dims: &ModelDims,
    a: VertexInput<'_>,
    b: VertexInput<'_>,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<ElboParts> {
    pair_elbo(g, nodes, dims, a, b, EdgeState::Unknown, noise, prior)
}

/// Negative ELBO for one observation and its parameter gradients.
pub fn pair_loss_and_grads(
    store: &ParameterStore,
    network: &Network,
    dims: &ModelDims,
    obs: &PairObservation,
    noise: &PairNoise,
    prior: &HomophilicPrior,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let nodes = ModelNodes::bind(&mut g, store)?;
    let a = VertexInput::row(network.text(obs.i), obs.i);
    let b = VertexInput::row(network.text(obs.j), obs.j);
    let parts = pair_elbo(&mut g, &nodes, dims, a, b, obs.w, noise, prior)?;
    let loss = g.neg(parts.elbo)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), grads.into_params()))
}

/// Summed negative ELBO over a batch with gradients reduced in batch order.
pub fn batch_loss_and_grads(
    store: &ParameterStore,
    network: &Network,
    dims: &ModelDims,
    batch: &[(PairObservation, PairNoise)],
    prior: &HomophilicPrior,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let eval = |(obs, noise): &(PairObservation, PairNoise)| {
        pair_loss_and_grads(store, network, dims, obs, noise, prior)
    };
    let per_pair: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = match pool {
        Some(pool) => pool.install(|| batch.par_iter().map(eval).collect()),
        None => batch.iter().map(eval).collect(),
    };
    let mut total = 0.0;
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    for r in per_pair {
        let (loss, grads) = r?;
        total += loss;
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(t) => t.add_assign(&g),
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    Ok((total, acc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

impl std::fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}", self.epoch, self.step, self.loss)
    }
}

#[derive(Debug, Default)]
pub struct TrainOptions {
    /// Start from these parameters instead of a fresh initialization.
    pub init: Option<ParameterStore>,
    /// Append-only loss trace.
    pub trace_path: Option<PathBuf>,
    /// Checkpoint written every `checkpoint_every` epochs, at the end, and on divergence.
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub trace: Vec<TraceEntry>,
}

impl TrainOutput {
    /// Mean batch loss per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for e in &self.trace {
            let s = sums.entry(e.epoch).or_default();
            s.0 += e.loss;
            s.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

/// Maximize the summed pair bounds over training edges, sampled non-edges and
/// α-dropped edges with Adam. Batches and dropout are redrawn every epoch.
pub fn train(
    network: &Network,
    split: &EdgeSplit,
    vocab_size: usize,
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutput> {
    config.validate()?;
    if network.max_len() != config.max_len {
        return Err(Error::Config(format!(
            "network texts padded to {}, config max_len {}",
            network.max_len(),
            config.max_len
        )));
    }
    let dims = config.dims(vocab_size, network.n_vertices());
    let mut store = match options.init {
        Some(s) => {
            dims.check_store(&s)?;
            s
        }
        None => init_params(&dims, config.seed)?,
    };
    let pi0 = config.resolve_pi0(split);
    let prior = HomophilicPrior::new(config.d, config.lambda, pi0)?;
    let opt = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let mut trace_file = match &options.trace_path {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };

    let mut trace = Vec::new();
    for epoch in 0..config.epochs {
        let batches = data::epoch_batches(
            split,
            config.batch_size,
            config.neg_per_pos,
            config.alpha,
            config.drop_negatives,
            &mut rng,
        )?;
        for batch in batches {
            let batch: Vec<(PairObservation, PairNoise)> = batch
                .into_iter()
                .map(|o| (o, PairNoise::draw(&mut rng, config.d, config.samples)))
                .collect();
            let step = store.step() + 1;
            let outcome = batch_loss_and_grads(&store, network, &dims, &batch, &prior, pool.as_ref())
                .and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite { op: "loss" });
                    }
                    store.adam_step(&grads, &opt)?;
                    Ok(loss)
                });
            let loss = match outcome {
                Ok(l) => l,
                Err(e @ (Error::NonFinite { .. } | Error::InvalidOp { .. })) => {
                    if let Some(p) = &options.checkpoint_path {
                        store.save(p)?;
                    }
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            };
            let entry = TraceEntry { epoch, step, loss };
            if let Some(f) = trace_file.as_mut() {
                let path = options.trace_path.as_ref().expect("file implies path");
                writeln!(f, "{entry}").map_err(|e| Error::io(path, e))?;
            }
            trace.push(entry);
        }
        if let Some(last) = trace.last() {
            log::info!("epoch {} step {} loss {:.4}", epoch, last.step, last.loss);
        }
        if let Some(p) = &options.checkpoint_path {
            if options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0 {
                store.save(p)?;
            }
        }
    }
    if let Some(f) = trace_file.as_mut() {
        f.flush().map_err(|e| Error::io(options.trace_path.as_ref().expect("path"), e))?;
    }
    if let Some(p) = &options.checkpoint_path {
        store.save(p)?;
    }
    Ok(TrainOutput {
        model: Model {
            params: store,
            dims,
            lambda: config.lambda,
            pi0,
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, GradCheckOptions};
    use crate::data::split_edges;
    use crate::decoder;
    use crate::encoder::tests::{tiny_dims, tiny_store};
    use crate::latent::{self, PairPosterior};
    use approx::assert_abs_diff_eq;

    fn texts() -> (TokenSeq, TokenSeq) {
        (TokenSeq::new(vec![2, 5, 3], 4), TokenSeq::new(vec![6, 2, 2, 4], 4))
    }

    fn prior() -> HomophilicPrior {
        HomophilicPrior::new(2, 0.9, 0.1).unwrap()
    }

    fn noise() -> PairNoise {
        PairNoise {
            linked: vec![(vec![0.3, -1.2], vec![0.8, 0.1])],
            unlinked: vec![(vec![-0.5, 0.4], vec![1.1, -0.7])],
        }
    }

    // Rebuild each term from plain functions and separately built graph pieces.
    fn decomposition(s: &ParameterStore, w: EdgeState) -> (f64, f64) {
        let (a, b) = texts();
        let dims = tiny_dims();
        let mut g = Graph::new();
        let nodes = ModelNodes::bind(&mut g, s).unwrap();
        let parts = pair_elbo(&mut g, &nodes, &dims, VertexInput::row(&a, 1), VertexInput::row(&b, 2), w, &noise(), &prior()).unwrap();
        let post: PairPosterior = parts.posterior.values(&g);

        let mut h = Graph::new();
        let n2 = ModelNodes::bind(&mut h, s).unwrap();
        let xi = crate::encoder::embed_text(&mut h, n2.word_emb, &a).unwrap();
        let xj = crate::encoder::embed_text(&mut h, n2.word_emb, &b).unwrap();
        let ti = decoder::target_feature(&mut h, xi, &a.mask()).unwrap();
        let tj = decoder::target_feature(&mut h, xj, &b.mask()).unwrap();
        let mut recon = |branch: Branch, e: &(Vec<f64>, Vec<f64>)| -> f64 {
            let mut eps = e.0.clone();
            eps.extend(&e.1);
            let z = latent::sample_pair(&post, branch, &eps).unwrap();
            let zi = h.constant(Tensor::column(z.z_i)).unwrap();
            let zj = h.constant(Tensor::column(z.z_j)).unwrap();
            let r = decoder::recon_loglik(&mut h, &n2, ti, tj, zi, zj).unwrap();
            h.value(r).item()
        };
        let nz = noise();
        let p = prior();
        let want = match w {
            EdgeState::Present => recon(Branch::Linked, &nz.linked[0]) - latent::kl_linked(&post, p.lambda),
            EdgeState::Absent => recon(Branch::Unlinked, &nz.unlinked[0]) - latent::kl_unlinked(&post),
            EdgeState::Unknown => {
                let pi = post.pi.unwrap();
                pi * recon(Branch::Linked, &nz.linked[0]) + (1.0 - pi) * recon(Branch::Unlinked, &nz.unlinked[0])
                    - latent::kl_mixture(&post, p.lambda, p.pi0).unwrap()
            }
        };
        (g.value(parts.elbo).item(), want)
    }

    #[test]
    fn elbo_equals_recomputed_parts() {
        for seed in 0..3 {
            let s = tiny_store(seed);
            for w in [EdgeState::Present, EdgeState::Absent, EdgeState::Unknown] {
                let (got, want) = decomposition(&s, w);
                assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn elbo_complete_rejects_unknown() {
        let s = tiny_store(0);
        let (a, b) = texts();
        let mut g = Graph::new();
        let nodes = ModelNodes::bind(&mut g, &s).unwrap();
        let r = elbo_complete(&mut g, &nodes, &tiny_dims(), VertexInput::row(&a, 0), VertexInput::row(&b, 1), EdgeState::Unknown, &noise(), &prior());
        assert!(r.is_err());
    }

    #[test]
    fn full_pair_elbo_gradients() {
        let (a, b) = texts();
        let dims = ModelDims {
            d: 3,
            d_w: 5,
            max_len: 4,
            kernels: 4,
            ..tiny_dims()
        };
        let mut s = init_params(&dims, 3).unwrap();
        let names: Vec<String> = s.names().map(str::to_owned).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in names {
            for v in s.get_mut(&name).unwrap().data_mut() {
                *v = rand::Rng::random_range(&mut rng, -0.6..0.6);
            }
        }
        let nz = PairNoise::draw(&mut rng, 3, 1);
        let p = HomophilicPrior::new(3, 0.99, 0.05).unwrap();
        let (ta, tb) = text_targets(&s, &a, &b).unwrap();
        for w in [EdgeState::Present, EdgeState::Absent, EdgeState::Unknown] {
            let report = check_gradients(
                &s,
                |g, s| {
                    let nodes = ModelNodes::bind(g, s)?;
                    let (va, vb) = (VertexInput::row(&a, 0), VertexInput::row(&b, 2));
                    let parts = pair_elbo_fixed_targets(g, &nodes, &dims, va, vb, (&ta, &tb), w, &nz, &p)?;
                    Ok(parts.elbo)
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "{w:?}\n{report}");
        }
    }

    fn toy_network() -> (Network, EdgeSplit) {
        let texts = (0..8)
            .map(|v| TokenSeq::new(vec![2 + (v % 5) as u32, 2 + ((v * 3) % 5) as u32], 4))
            .collect();
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 4)];
        let (net, _) = Network::new(8, edges, texts, Vec::new()).unwrap();
        let split = split_edges(&net, 1.0, 0).unwrap();
        (net, split)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            d: 2,
            d_w: 3,
            max_len: 4,
            kernels: 3,
            kernel_width: 3,
            batch_size: 3,
            epochs: 3,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (net, split) = toy_network();
        let cfg = TrainConfig { epochs: 0, ..toy_config() };
        let out = train(&net, &split, 7, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(out.model.params, init_params(&cfg.dims(7, 8), cfg.seed).unwrap());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_thread_count_invariant() {
        let (net, split) = toy_network();
        let a = train(&net, &split, 7, &toy_config(), TrainOptions::default()).unwrap();
        let b = train(&net, &split, 7, &toy_config(), TrainOptions::default()).unwrap();
        let c = train(&net, &split, 7, &TrainConfig { threads: 3, ..toy_config() }, TrainOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.trace, c.trace);
        assert_eq!(a.model.params, c.model.params);
        assert_eq!(a.trace.len(), 3 * 3);
    }

    #[test]
    fn batch_loss_is_sum_of_pair_bounds() {
        let (net, split) = toy_network();
        let s = init_params(&toy_config().dims(7, 8), 5).unwrap();
        let dims = toy_config().dims(7, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = data::sample_pair_batch(&split, 6, 2, 0.5, &mut rng).unwrap();
        let batch: Vec<_> = obs.into_iter().map(|o| (o, PairNoise::draw(&mut rng, 2, 1))).collect();
        let (total, _) = batch_loss_and_grads(&s, &net, &dims, &batch, &prior(), None).unwrap();
        let mut sum = 0.0;
        for (o, nz) in &batch {
            let mut g = Graph::new();
            let nodes = ModelNodes::bind(&mut g, &s).unwrap();
            let a = VertexInput::row(net.text(o.i), o.i);
            let b = VertexInput::row(net.text(o.j), o.j);
            let parts = pair_elbo(&mut g, &nodes, &dims, a, b, o.w, nz, &prior()).unwrap();
            sum -= g.value(parts.elbo).item();
        }
        assert_abs_diff_eq!(total, sum, epsilon = 1e-10);
    }

    #[test]
    fn trace_and_checkpoint_files() {
        let (net, split) = toy_network();
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            trace_path: Some(dir.path().join("trace.tsv")),
            checkpoint_path: Some(dir.path().join("model.ckpt")),
            checkpoint_every: 1,
            ..TrainOptions::default()
        };
        let out = train(&net, &split, 7, &toy_config(), opts).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
        assert_eq!(text.lines().count(), out.trace.len());
        assert_eq!(text.lines().next().unwrap(), out.trace[0].to_string());
        let back = ParameterStore::load(&dir.path().join("model.ckpt")).unwrap();
        assert_eq!(back, out.model.params);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { lambda: 1.0, ..toy_config() },
            TrainConfig { alpha: 1.5, ..toy_config() },
            TrainConfig { pi0: Some(0.0), ..toy_config() },
            TrainConfig { kernel_width: 2, ..toy_config() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
