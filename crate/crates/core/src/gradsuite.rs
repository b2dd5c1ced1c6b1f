//! Finite-difference checks over every primitive op and every differentiable model
//! component, as one table.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, GradCheckOptions, GradCheckReport, Graph, NodeId, ParameterStore, Tensor};
use crate::data::{EdgeState, TokenSeq};
use crate::decoder::recon_loglik;
use crate::encoder::{encode_pair, VertexInput};
use crate::error::Result;
use crate::latent::{kl_bernoulli_node, HomophilicPrior, PairPosterior, PosteriorNodes};
use crate::model::{init_params, ModelDims, ModelNodes};
use crate::trainer::{pair_elbo_fixed_targets, text_targets, PairNoise};

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub group: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.report.passed())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_rel_error()).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<String> {
        self.entries
            .iter()
            .flat_map(|e| {
                e.report
                    .params
                    .iter()
                    .filter(|p| !p.passed)
                    .map(move |p| format!("{}/{}", e.group, p.name))
            })
            .collect()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "group\tparam\tentries\tmax_rel_error\tresult")?;
        for e in &self.entries {
            for p in &e.report.params {
                writeln!(
                    f,
                    "{}\t{}\t{}\t{:.3e}\t{}",
                    e.group,
                    p.name,
                    p.entries,
                    p.max_rel_error,
                    if p.passed { "pass" } else { "FAIL" }
                )?;
            }
        }
        Ok(())
    }
}

/// The small model used by `gradcheck --dims tiny`.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        d: 3,
        d_w: 5,
        max_len: 4,
        kernels: 4,
        kernel_width: 3,
        vocab_size: 8,
        n_vertices: 4,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

// Contract a tensor-valued node against fixed weights so every entry carries gradient.
fn project(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

type OpCase = (&'static str, Vec<(&'static str, Tensor)>, Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>);

/// Check every primitive with a detectable gradient. `detach` is excluded: its
/// gradient is zero by definition while finite differences see the identity.
pub fn primitive_checks(seed: u64, opts: GradCheckOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let cases: Vec<OpCase> = vec![
        ("matmul", vec![("a", uniform(r, &[3, 4], -1.0, 1.0)), ("b", uniform(r, &[4, 2], -1.0, 1.0))], Box::new(|g, x| g.matmul(x[0], x[1]))),
        ("transpose", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.transpose(x[0]))),
        ("add", vec![("a", uniform(r, &[3, 2], -1.0, 1.0)), ("b", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.add(x[0], x[1]))),
        ("sub", vec![("a", uniform(r, &[3, 2], -1.0, 1.0)), ("b", uniform(r, &[1, 1], -1.0, 1.0))], Box::new(|g, x| g.sub(x[0], x[1]))),
        ("mul", vec![("a", uniform(r, &[3, 2], -1.0, 1.0)), ("b", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.mul(x[0], x[1]))),
        ("mul_broadcast", vec![("a", uniform(r, &[1, 1], -1.0, 1.0)), ("b", uniform(r, &[2, 3], -1.0, 1.0))], Box::new(|g, x| g.mul(x[0], x[1]))),
        ("scale", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.scale(x[0], -1.7))),
        ("add_scalar", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.add_scalar(x[0], 0.3))),
        ("tanh", vec![("a", uniform(r, &[3, 2], -2.0, 2.0))], Box::new(|g, x| g.tanh(x[0]))),
        ("sigmoid", vec![("a", uniform(r, &[3, 2], -3.0, 3.0))], Box::new(|g, x| g.sigmoid(x[0]))),
        ("exp", vec![("a", uniform(r, &[3, 2], -2.0, 2.0))], Box::new(|g, x| g.exp(x[0]))),
        ("log", vec![("a", uniform(r, &[3, 2], 0.5, 2.0))], Box::new(|g, x| g.log(x[0]))),
        ("sqrt", vec![("a", uniform(r, &[3, 2], 0.5, 2.0))], Box::new(|g, x| g.sqrt(x[0]))),
        ("square", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.square(x[0]))),
        ("sum", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.sum(x[0]))),
        ("mean", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.mean(x[0]))),
        (
            "softmax_masked",
            vec![("a", uniform(r, &[5, 1], -1.0, 1.0))],
            Box::new(|g, x| g.softmax_masked(x[0], vec![true, false, true, true, false])),
        ),
        (
            "max_pool_rows",
            vec![("a", uniform(r, &[3, 4], -1.0, 1.0))],
            Box::new(|g, x| g.max_pool(x[0], 1, Some(vec![true, true, false, true]))),
        ),
        ("max_pool_cols", vec![("a", uniform(r, &[4, 3], -1.0, 1.0))], Box::new(|g, x| g.max_pool(x[0], 0, None))),
        (
            "conv1d",
            vec![("signal", uniform(r, &[2, 5], -1.0, 1.0)), ("kernel", uniform(r, &[3, 2, 3], -1.0, 1.0))],
            Box::new(|g, x| g.conv1d(x[0], x[1])),
        ),
        (
            "concat",
            vec![("a", uniform(r, &[2, 3], -1.0, 1.0)), ("b", uniform(r, &[1, 3], -1.0, 1.0))],
            Box::new(|g, x| g.concat(&[x[0], x[1], x[0]])),
        ),
        ("gather_rows", vec![("a", uniform(r, &[4, 2], -1.0, 1.0))], Box::new(|g, x| g.gather_rows(x[0], vec![2, 0, 2]))),
        ("slice_rows", vec![("a", uniform(r, &[4, 2], -1.0, 1.0))], Box::new(|g, x| g.slice_rows(x[0], 1, 2))),
        ("reshape", vec![("a", uniform(r, &[3, 2], -1.0, 1.0))], Box::new(|g, x| g.reshape(x[0], vec![2, 3]))),
        (
            "clamp",
            vec![("a", Tensor::matrix(3, 2, vec![-0.9, -0.3, 0.1, 0.45, 0.7, -0.55]).expect("shape"))],
            Box::new(|g, x| g.clamp(x[0], -0.5, 0.5)),
        ),
    ];
    let mut entries = Vec::new();
    for (k, (name, inputs, op)) in cases.into_iter().enumerate() {
        let mut store = ParameterStore::new();
        let names: Vec<&str> = inputs.iter().map(|(n, _)| *n).collect();
        for (n, t) in inputs {
            store.insert(n, t);
        }
        let report = check_gradients(
            &store,
            |g, s| {
                let x = names.iter().map(|n| g.param_from(s, n)).collect::<Result<Vec<_>>>()?;
                let out = op(g, &x)?;
                project(g, out, seed ^ k as u64)
            },
            opts,
        )?;
        entries.push(SuiteEntry {
            group: name.to_owned(),
            report,
        });
    }
    Ok(SuiteReport { entries })
}

fn random_posterior(rng: &mut ChaCha8Rng, d: usize) -> PairPosterior {
    let mut v = |lo: f64, hi: f64| (0..d).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    PairPosterior {
        mu_i: v(-1.0, 1.0),
        mu_j: v(-1.0, 1.0),
        logvar_i: v(-1.0, 1.0),
        logvar_j: v(-1.0, 1.0),
        gamma: v(0.0, 0.9),
        mu0_i: v(-1.0, 1.0),
        mu0_j: v(-1.0, 1.0),
        logvar0_i: v(-1.0, 1.0),
        logvar0_j: v(-1.0, 1.0),
        pi: Some(rng.random_range(0.05..0.95)),
    }
}

/// Check the KL terms, the encoder, the decoder likelihood and the full pair bound
/// for each edge state, with all model parameters drawn uniformly from ±0.6.
pub fn model_checks(dims: &ModelDims, seed: u64, opts: GradCheckOptions) -> Result<SuiteReport> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut push = |group: String, report: GradCheckReport| entries.push(SuiteEntry { group, report });

    let post = random_posterior(&mut rng, dims.d).to_store();
    for lambda in [0.0, 0.5, 0.99] {
        push(
            format!("kl_linked(lambda={lambda})"),
            check_gradients(&post, |g, s| PosteriorNodes::from_store(g, s)?.kl_linked(g, lambda), opts)?,
        );
    }
    push("kl_unlinked".into(), check_gradients(&post, |g, s| PosteriorNodes::from_store(g, s)?.kl_unlinked(g), opts)?);
    push(
        "kl_bernoulli".into(),
        check_gradients(
            &post,
            |g, s| {
                let p = PosteriorNodes::from_store(g, s)?;
                kl_bernoulli_node(g, p.pi.expect("stored"), 0.07)
            },
            opts,
        )?,
    );
    for lambda in [0.0, 0.5, 0.99] {
        push(
            format!("kl_mixture(lambda={lambda})"),
            check_gradients(&post, |g, s| PosteriorNodes::from_store(g, s)?.kl_mixture(g, lambda, 0.07), opts)?,
        );
    }

    let mut store = init_params(dims, seed)?;
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        for v in store.get_mut(&name)?.data_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    let ids = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(2..dims.vocab_size as u32)).collect::<Vec<_>>();
    let short = TokenSeq::new(ids(&mut rng, (dims.max_len / 2).max(1)), dims.max_len);
    let full = TokenSeq::new(ids(&mut rng, dims.max_len), dims.max_len);
    let (vi, vj) = (0, dims.n_vertices - 1);

    push(
        "encode_pair".into(),
        check_gradients(
            &store,
            |g, s| {
                let nodes = ModelNodes::bind(g, s)?;
                let p = encode_pair(g, &nodes, dims, VertexInput::row(&short, vi), VertexInput::row(&full, vj), true)?.posterior;
                let mut acc = g.scalar(0.0)?;
                let outs = [p.mu_i, p.mu_j, p.logvar_i, p.logvar_j, p.gamma, p.mu0_i, p.mu0_j, p.logvar0_i, p.logvar0_j, p.pi.expect("requested")];
                for (k, id) in outs.into_iter().enumerate() {
                    let t = project(g, id, seed.wrapping_add(k as u64))?;
                    acc = g.add(acc, t)?;
                }
                Ok(acc)
            },
            opts,
        )?,
    );

    let mut dec = store.clone();
    dec.insert("z_i", uniform(&mut rng, &[dims.d, 1], -1.0, 1.0));
    dec.insert("z_j", uniform(&mut rng, &[dims.d, 1], -1.0, 1.0));
    let ti = uniform(&mut rng, &[dims.d_w, 1], -1.0, 1.0);
    let tj = uniform(&mut rng, &[dims.d_w, 1], -1.0, 1.0);
    push(
        "recon_loglik".into(),
        check_gradients(
            &dec,
            |g, s| {
                let nodes = ModelNodes::bind(g, s)?;
                let (a, b) = (g.constant(ti.clone())?, g.constant(tj.clone())?);
                let (zi, zj) = (g.param_from(s, "z_i")?, g.param_from(s, "z_j")?);
                recon_loglik(g, &nodes, a, b, zi, zj)
            },
            opts,
        )?,
    );

    let noise = PairNoise::draw(&mut rng, dims.d, 1);
    let prior = HomophilicPrior::new(dims.d, 0.99, 0.05)?;
    let targets = text_targets(&store, &short, &full)?;
    for w in [EdgeState::Present, EdgeState::Absent, EdgeState::Unknown] {
        push(
            format!("pair_elbo({w:?})"),
            check_gradients(
                &store,
                |g, s| {
                    let nodes = ModelNodes::bind(g, s)?;
                    let (a, b) = (VertexInput::row(&short, vi), VertexInput::row(&full, vj));
                    Ok(pair_elbo_fixed_targets(g, &nodes, dims, a, b, (&targets.0, &targets.1), w, &noise, &prior)?.elbo)
                },
                opts,
            )?,
        );
    }
    Ok(SuiteReport { entries })
}

/// Primitive and model checks together.
pub fn gradient_suite(dims: &ModelDims, seed: u64, opts: GradCheckOptions) -> Result<SuiteReport> {
    let mut report = primitive_checks(seed, opts)?;
    report.entries.extend(model_checks(dims, seed, opts)?.entries);
    Ok(report)
}
