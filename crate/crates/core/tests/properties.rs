use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vhe::autodiff::{check_gradients, GradCheckOptions, Graph, Tensor};
use vhe::data::{epoch_batches, split_edges, EdgeState, PairObservation, TokenSeq};
use vhe::encoder::{align, embed_text, similarity_matrix, VertexInput};
use vhe::eval::{link_prediction_eval, synth_network, LinkPredOptions, PairLabel, PairScorer, SynthConfig, SynthNetwork};
use vhe::gradsuite::primitive_checks;
use vhe::inference::{global_embedding, Conditioning};
use vhe::latent::HomophilicPrior;
use vhe::model::{init_params, Model, ModelDims, ModelNodes};
use vhe::trainer::{batch_loss_and_grads, pair_elbo_fixed_targets, text_targets, PairNoise};

fn small_synth(seed: u64) -> SynthNetwork {
    synth_network(&SynthConfig {
        n: 40,
        d: 3,
        d_w: 6,
        sparsity: 0.08,
        vocab_size: 30,
        max_len: 6,
        seed,
        ..SynthConfig::default()
    })
    .expect("synthetic network")
}

fn small_dims(s: &SynthNetwork) -> ModelDims {
    ModelDims {
        d: 3,
        d_w: 6,
        max_len: 6,
        kernels: 3,
        kernel_width: 3,
        vocab_size: s.vocab.len(),
        n_vertices: s.network.n_vertices(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_softmax_is_a_distribution_on_real_positions(
        values in proptest::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in any::<u16>(),
    ) {
        let n = values.len();
        let mut mask: Vec<bool> = (0..n).map(|k| mask_bits >> k & 1 == 1).collect();
        mask[(mask_bits as usize) % n] = true;
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(values)).unwrap();
        let s = g.softmax_masked(x, mask.clone()).unwrap();
        let out = g.value(s).data();
        let mut total = 0.0;
        for (p, &m) in out.iter().zip(&mask) {
            if m {
                prop_assert!(*p >= 0.0);
                total += p;
            } else {
                prop_assert_eq!(*p, 0.0);
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_weights_live_on_real_tokens(seed in any::<u64>(), len_i in 1usize..=6, len_j in 1usize..=6) {
        let (l, dw, k, vocab) = (6, 4, 3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = |len: usize| TokenSeq::new((0..len).map(|_| rng.random_range(1..vocab as u32)).collect(), l);
        let (a, b) = (text(len_i), text(len_j));
        let mut rand_tensor = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let mut g = Graph::new();
        let words = g.constant(rand_tensor(vec![vocab, dw])).unwrap();
        let u = g.constant(rand_tensor(vec![k, l, 3])).unwrap();
        let v = g.constant(rand_tensor(vec![k, l, 3])).unwrap();
        let x_i = embed_text(&mut g, words, &a).unwrap();
        let x_j = embed_text(&mut g, words, &b).unwrap();
        let m = similarity_matrix(&mut g, x_i, x_j).unwrap();
        let (w_i, w_j) = align(&mut g, m, u, v, &a.mask(), &b.mask()).unwrap();
        for (w, seq) in [(w_i, &a), (w_j, &b)] {
            let w = g.value(w).data();
            let real: f64 = w[..seq.real().len()].iter().sum();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((real - 1.0).abs() < 1e-12);
            prop_assert!(w[seq.real().len()..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn no_dropout_and_no_negatives_leaves_only_present(seed in any::<u64>(), batch in 1usize..9) {
        let s = small_synth(3);
        let split = split_edges(&s.network, 0.8, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = epoch_batches(&split, batch, 0, 0.0, true, &mut rng).unwrap();
        let all: Vec<&PairObservation> = batches.iter().flatten().collect();
        prop_assert_eq!(all.len(), split.train_pos.len());
        prop_assert!(all.iter().all(|o| o.w == EdgeState::Present));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_primitive_passes_at_random_seeds(seed in any::<u64>()) {
        let report = primitive_checks(seed, GradCheckOptions::default()).unwrap();
        prop_assert!(report.passed(), "{}", report);
    }

    #[test]
    fn evaluation_negatives_are_never_training_edges(seed in any::<u64>(), ratio in 0.3f64..0.9) {
        struct Constant;
        impl PairScorer for Constant {
            fn score(&self, _: usize, _: usize) -> vhe::Result<f64> {
                Ok(0.0)
            }
        }
        let s = small_synth(seed % 4);
        let split = split_edges(&s.network, ratio, seed).unwrap();
        let opts = LinkPredOptions { neg_per_pos: 5, seed, threads: 1 };
        let report = link_prediction_eval(&Constant, &s.network, &split, &opts).unwrap();
        for p in report.scored.iter().filter(|p| p.label == PairLabel::Negative) {
            prop_assert!(p.i != p.j);
            prop_assert!(!split.is_train_edge(p.i, p.j));
            prop_assert!(!s.network.has_edge(p.i, p.j));
        }
    }
}

#[test]
fn subsampled_global_embedding_is_unbiased() {
    let s = small_synth(1);
    let dims = small_dims(&s);
    let model = Model::new(init_params(&dims, 5).unwrap(), dims, 0.9, 0.1).unwrap();
    let i = 7;
    let contexts: Vec<usize> = (0..dims.n_vertices).filter(|&u| u != i).collect();
    let half = contexts.len() / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let exact = global_embedding(&model, &s.network, i, &contexts, contexts.len(), Conditioning::Unknown, &mut rng)
        .unwrap()
        .semantic;
    let draws: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            global_embedding(&model, &s.network, i, &contexts, half, Conditioning::Unknown, &mut rng)
                .unwrap()
                .semantic
        })
        .collect();
    for k in 0..dims.d {
        let xs: Vec<f64> = draws.iter().map(|e| e[k]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let se = (var / xs.len() as f64).sqrt();
        assert!((mean - exact[k]).abs() <= 3.0 * se + 1e-12, "dim {k}: {mean} vs {} (se {se})", exact[k]);
    }
}

/// Batch of observations covering every edge state, with fixed noise.
fn mixed_batch(s: &SynthNetwork, d: usize) -> Vec<(PairObservation, PairNoise)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let edges = s.network.edges();
    let states = [EdgeState::Present, EdgeState::Absent, EdgeState::Unknown];
    (0..6)
        .map(|k| {
            let (i, j) = edges[k * 3 % edges.len()];
            let obs = PairObservation { i, j, w: states[k % 3] };
            (obs, PairNoise::draw(&mut rng, d, 1))
        })
        .collect()
}

#[test]
fn full_batch_gradients_match_finite_differences() {
    let s = small_synth(2);
    let dims = small_dims(&s);
    let store = init_params(&dims, 3).unwrap();
    let prior = HomophilicPrior::new(dims.d, 0.9, 0.1).unwrap();
    let batch = mixed_batch(&s, dims.d);
    let targets: Vec<(Tensor, Tensor)> = batch
        .iter()
        .map(|(o, _)| text_targets(&store, s.network.text(o.i), s.network.text(o.j)).unwrap())
        .collect();
    let build = |g: &mut Graph, st: &vhe::autodiff::ParameterStore| {
        let nodes = ModelNodes::bind(g, st)?;
        let mut total = g.scalar(0.0)?;
        for ((o, noise), (ti, tj)) in batch.iter().zip(&targets) {
            let a = VertexInput::row(s.network.text(o.i), o.i);
            let b = VertexInput::row(s.network.text(o.j), o.j);
            let parts = pair_elbo_fixed_targets(g, &nodes, &dims, a, b, (ti, tj), o.w, noise, &prior)?;
            total = g.sub(total, parts.elbo)?;
        }
        Ok(total)
    };
    let report = check_gradients(&store, build, GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{report}");

    // the trainer's reduction agrees with the single-graph gradient
    let mut g = Graph::new();
    let loss = build(&mut g, &store).unwrap();
    let reference: BTreeMap<String, Tensor> = g.backward(loss).unwrap().into_params();
    let (total, grads) = batch_loss_and_grads(&store, &s.network, &dims, &batch, &prior, None).unwrap();
    assert!((total - g.value(loss).item()).abs() < 1e-10);
    for (name, t) in &reference {
        let diff = t.max_abs_diff(&grads[name]);
        assert!(diff < 1e-10, "{name}: {diff}");
    }
}
