//! Classify vertices from frozen embeddings with a linear classifier, comparing
//! the semantic part alone against the combined embedding.
//!
//! Run with `cargo run --release --example vertex_classification`.

use vhe::data::split_edges;
use vhe::eval::{classify_vertices, synth_network, ClassifierOptions, SynthConfig};
use vhe::inference::{embed_all, Conditioning};
use vhe::model::init_params;
use vhe::trainer::{train, TrainConfig, TrainOptions};

fn main() -> vhe::Result<()> {
    let synth = synth_network(&SynthConfig::default())?;
    let net = &synth.network;
    let config = TrainConfig {
        d: 8,
        d_w: 16,
        max_len: 16,
        kernels: 8,
        kernel_width: 5,
        batch_size: 16,
        epochs: 30,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let split = split_edges(net, 1.0, 0)?;
    let mut init = init_params(&config.dims(synth.vocab.len(), net.n_vertices()), 0)?;
    synth.install_word_vectors(&mut init)?;
    let options = TrainOptions {
        init: Some(init),
        ..TrainOptions::default()
    };
    let model = train(net, &split, synth.vocab.len(), &config, options)?.model;

    let emb = embed_all(&model, net, 64, Conditioning::TrainEdges(&split), 0, 1)?;
    let semantic: Vec<Vec<f64>> = emb.iter().map(|e| e.semantic.clone()).collect();
    let combined: Vec<Vec<f64>> = emb.iter().map(|e| e.combined()).collect();
    let opts = ClassifierOptions::default();
    for ratio in [0.1, 0.3, 0.5, 0.7] {
        let s = classify_vertices(&semantic, net.labels(), ratio, 10, 0, &opts)?;
        let c = classify_vertices(&combined, net.labels(), ratio, 10, 0, &opts)?;
        println!(
            "{:>3.0}% labels: semantic {:.3} ± {:.3}, combined {:.3} ± {:.3}",
            ratio * 100.0,
            s.mean,
            s.std,
            c.mean,
            c.std
        );
    }
    Ok(())
}
