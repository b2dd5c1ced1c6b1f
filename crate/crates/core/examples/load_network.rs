//! Load an attributed network from the three text files and inspect it.
//!
//! Run with `cargo run --example load_network [dir]`. The directory must hold
//! `edges.txt`, `texts.txt` and optionally `labels.txt`; without an argument a small
//! synthetic network is written to a temporary directory first.

use std::path::PathBuf;

use vhe::data::{load_network, split_edges};
use vhe::eval::{synth_network, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            let dir = std::env::temp_dir().join("vhe-load-network");
            std::fs::create_dir_all(&dir)?;
            synth_network(&SynthConfig {
                n: 30,
                sparsity: 0.1,
                ..SynthConfig::default()
            })?
            .write_files(&dir)?;
            dir
        }
    };
    let labels = dir.join("labels.txt");
    let loaded = load_network(
        &dir.join("edges.txt"),
        &dir.join("texts.txt"),
        labels.exists().then_some(labels.as_path()),
        16,
        1,
    )?;
    let net = &loaded.network;
    println!(
        "{}: {} vertices, {} edges, vocabulary {}",
        dir.display(),
        net.n_vertices(),
        net.edges().len(),
        loaded.vocab.len()
    );
    println!(
        "dropped {} self loops and {} duplicate edges",
        loaded.self_loops_dropped, loaded.duplicate_edges
    );
    for v in 0..net.n_vertices().min(3) {
        println!("vertex {v} (label {:?}): {}", net.label(v), loaded.vocab.decode(net.text(v)));
    }
    let split = split_edges(net, 0.85, 0)?;
    println!("split: {} train, {} test edges", split.train_pos.len(), split.test_pos.len());
    Ok(())
}
