//! Train on a synthetic homophilic network and score held-out edges two ways.
//!
//! Run with `cargo run --release --example synthetic_link_prediction [lambda]`,
//! where `lambda` is the generator's homophily (0.99 by default, 0 for none).

use vhe::data::split_edges;
use vhe::eval::{link_prediction_eval, synth_network, CosineScorer, LinkPredOptions, PosteriorPiScorer, SynthConfig};
use vhe::inference::{embed_all, Conditioning, VertexEmbedding};
use vhe::model::init_params;
use vhe::trainer::{train, TrainConfig, TrainOptions};

fn main() -> vhe::Result<()> {
    let lambda = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.99);
    let synth = synth_network(&SynthConfig {
        lambda,
        ..SynthConfig::default()
    })?;
    let net = &synth.network;
    println!("{} vertices, {} edges, sparsity {:.4}", net.n_vertices(), net.edges().len(), net.sparsity());

    let split = split_edges(net, 0.5, 0)?;
    let config = TrainConfig {
        d: 8,
        d_w: 16,
        max_len: 16,
        kernels: 8,
        kernel_width: 5,
        batch_size: 16,
        epochs: 50,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let mut init = init_params(&config.dims(synth.vocab.len(), net.n_vertices()), config.seed)?;
    synth.install_word_vectors(&mut init)?;
    let out = train(
        net,
        &split,
        synth.vocab.len(),
        &config,
        TrainOptions {
            init: Some(init),
            ..TrainOptions::default()
        },
    )?;
    let losses = out.epoch_losses();
    println!("epoch loss {:.2} -> {:.2}", losses[0], losses[losses.len() - 1]);

    let opts = LinkPredOptions {
        neg_per_pos: 10,
        ..LinkPredOptions::default()
    };
    let model = &out.model;
    let pi = link_prediction_eval(&PosteriorPiScorer { model, network: net }, net, &split, &opts)?;
    println!("posterior_pi\n{pi}");

    let rows: Vec<Vec<f64>> = embed_all(model, net, 64, Conditioning::Unknown, 0, 1)?
        .iter()
        .map(VertexEmbedding::combined)
        .collect();
    let cos = link_prediction_eval(&CosineScorer { embeddings: &rows }, net, &split, &opts)?;
    println!("cosine_global\n{cos}");
    Ok(())
}
