//! Hold out a quarter of the vertices, train on the rest, then embed the held-out
//! vertices from their text alone and predict their links.
//!
//! Run with `cargo run --release --example unseen_vertices`.

use vhe::data::split_edges;
use vhe::eval::{hold_out_vertices, synth_network, unseen_link_prediction, ScoreMethod, SynthConfig, UnseenEvalOptions};
use vhe::inference::{embed_unseen, UnseenOptions};
use vhe::model::init_params;
use vhe::trainer::{train, TrainConfig, TrainOptions};

fn main() -> vhe::Result<()> {
    let synth = synth_network(&SynthConfig::default())?;
    let holdout = hold_out_vertices(&synth.network, 0.25, 0)?;
    let seen = &holdout.seen_network;
    println!("{} seen, {} held out", holdout.seen.len(), holdout.held_out.len());

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
    let split = split_edges(seen, 1.0, 0)?;
    let mut init = init_params(&config.dims(synth.vocab.len(), seen.n_vertices()), 0)?;
    synth.install_word_vectors(&mut init)?;
    let model = train(
        seen,
        &split,
        synth.vocab.len(),
        &config,
        TrainOptions {
            init: Some(init),
            ..TrainOptions::default()
        },
    )?
    .model;

    // one held-out vertex by hand: the objective should climb
    let v = holdout.held_out[0];
    let contexts: Vec<usize> = (0..seen.n_vertices()).take(32).collect();
    let fit = embed_unseen(&model, seen, synth.network.text(v), &contexts, &UnseenOptions::default())?;
    println!(
        "vertex {v}: bound {:.3} -> {:.3}",
        fit.objective[0],
        fit.objective[fit.objective.len() - 1]
    );

    let opts = UnseenEvalOptions {
        method: ScoreMethod::CosineGlobal,
        ..UnseenEvalOptions::default()
    };
    print!("{}", unseen_link_prediction(&model, &synth.network, &holdout, &opts)?);
    Ok(())
}
