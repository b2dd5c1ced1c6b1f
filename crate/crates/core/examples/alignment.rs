//! Mutual attention between two texts: the similarity matrix, the convolved
//! alignment weights and the resulting text embeddings.
//!
//! Run with `cargo run --example alignment`.

use vhe::autodiff::Graph;
use vhe::data::Vocabulary;
use vhe::encoder::{align, embed_text, similarity_matrix, text_embedding};
use vhe::model::{init_params, ModelDims, ModelNodes};

fn main() -> vhe::Result<()> {
    let texts = ["graph neural embedding of citation networks", "variational embedding of networks"];
    let vocab = Vocabulary::build(texts, 1);
    let max_len = 8;
    let a = vocab.encode(texts[0], max_len);
    let b = vocab.encode(texts[1], max_len);
    let dims = ModelDims {
        d: 4,
        d_w: 6,
        max_len,
        kernels: 4,
        kernel_width: 3,
        vocab_size: vocab.len(),
        n_vertices: 2,
    };
    let store = init_params(&dims, 7)?;

    let mut g = Graph::new();
    let nodes = ModelNodes::bind(&mut g, &store)?;
    let x_a = embed_text(&mut g, nodes.word_emb, &a)?;
    let x_b = embed_text(&mut g, nodes.word_emb, &b)?;
    let m = similarity_matrix(&mut g, x_a, x_b)?;
    let (w_a, w_b) = align(&mut g, m, nodes.align_u, nodes.align_v, &a.mask(), &b.mask())?;

    for (name, seq, w) in [("a", &a, w_a), ("b", &b, w_b)] {
        println!("text {name}:");
        for (k, weight) in g.value(w).data().iter().enumerate() {
            let token = seq.real().get(k).and_then(|&id| vocab.token(id)).unwrap_or("<pad>");
            println!("  {token:<12} {weight:.4}");
        }
    }
    let t_a = text_embedding(&mut g, x_a, w_a)?;
    println!("text embedding of a: {:?}", g.value(t_a).data());
    Ok(())
}
