//! The command-line pipeline driven in-process: synthesize, train, score.
//!
//! Run with `cargo run --release --example cli_pipeline`. Each step prints the
//! resolved configuration it ran with, followed by its report.

fn step(args: &[&str]) {
    let code = vhe::cli::run(args.iter().copied(), &mut std::io::stdout(), &mut std::io::stderr());
    if code != 0 {
        std::process::exit(code);
    }
}

fn main() {
    let dir = std::env::temp_dir().join("vhe-cli-pipeline");
    let d = dir.to_str().expect("utf-8 temp dir");
    let file = |name: &str| format!("{d}/{name}");
    let (edges, texts, words) = (file("edges.txt"), file("texts.txt"), file("words.txt"));
    let (ckpt, trace) = (file("model.ckpt"), file("trace.tsv"));

    step(&["vhe", "synth", "--out-dir", d, "--synth-n", "80", "--synth-sparsity", "0.05"]);
    let common = [
        "--edges", &edges, "--texts", &texts, "--checkpoint", &ckpt, "--d", "8", "--d-w", "16", "--max-len", "16",
        "--kernels", "8", "--epochs", "10", "--batch-size", "16", "--lr", "0.003",
    ];
    step(&[&["vhe", "train"][..], &common, &["--trace", &trace, "--words", &words]].concat());
    step(&[&["vhe", "linkpred"][..], &common, &["--method", "cosine_global"]].concat());
}
