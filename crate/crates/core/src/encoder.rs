//! Pair encoder: phrase-to-word alignment over the cross-text similarity matrix, the
//! structure table, and an MLP integrator emitting every posterior parameter.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::TokenSeq;
use crate::error::{Error, Result};
use crate::latent::{PosteriorNodes, EPS};
use crate::model::{ModelDims, ModelNodes};

/// Where a vertex's structure vector comes from.
#[derive(Debug, Clone, Copy)]
pub enum Structure {
    /// Row of the trained structure table.
    Row(usize),
    /// A free `[d_w, 1]` node, used when embedding unseen vertices.
    Free(NodeId),
}

#[derive(Debug, Clone, Copy)]
pub struct VertexInput<'a> {
    pub tokens: &'a TokenSeq,
    pub structure: Structure,
}

impl<'a> VertexInput<'a> {
    pub fn row(tokens: &'a TokenSeq, v: usize) -> Self {
        VertexInput {
            tokens,
            structure: Structure::Row(v),
        }
    }
}

/// Output of [`encode_pair`]: posterior nodes plus the embedded texts, which the
/// decoder reuses for its targets.
#[derive(Debug, Clone, Copy)]
pub struct EncodedPair {
    pub posterior: PosteriorNodes,
    pub x_i: NodeId,
    pub x_j: NodeId,
}

/// Look up a text's word vectors as a `[d_w, L]` matrix with padding columns zeroed.
pub fn embed_text(g: &mut Graph, word_emb: NodeId, tokens: &TokenSeq) -> Result<NodeId> {
    let rows = g.gather_rows(word_emb, tokens.indices())?;
    let x = g.transpose(rows)?;
    let (d_w, l) = (g.value(x).rows(), g.value(x).cols());
    let mut mask = Tensor::zeros(&[d_w, l]);
    for r in 0..d_w {
        for c in 0..tokens.len {
            mask.data_mut()[r * l + c] = 1.0;
        }
    }
    let mask = g.constant(mask)?;
    g.mul(x, mask)
}

/// `M = x_iᵀ x_j`.
pub fn similarity_matrix(g: &mut Graph, x_i: NodeId, x_j: NodeId) -> Result<NodeId> {
    let xt = g.transpose(x_i)?;
    g.matmul(xt, x_j)
}

/// Alignment weights `(w_i, w_j)` as `[L, 1]` columns: convolve over the similarity
/// matrix, squash, max-pool over kernels, then softmax over real tokens.
pub fn align(
    g: &mut Graph,
    m: NodeId,
    u: NodeId,
    v: NodeId,
    mask_i: &[bool],
    mask_j: &[bool],
) -> Result<(NodeId, NodeId)> {
    let mt = g.transpose(m)?;
    let w_i = align_side(g, mt, u, mask_i)?;
    let w_j = align_side(g, m, v, mask_j)?;
    Ok((w_i, w_j))
}

fn align_side(g: &mut Graph, signal: NodeId, kernel: NodeId, mask: &[bool]) -> Result<NodeId> {
    if !mask.iter().any(|&b| b) {
        return Err(Error::EmptyDocument);
    }
    let f = g.conv1d(signal, kernel)?;
    let f = g.tanh(f)?;
    let pooled = g.max_pool(f, 0, None)?;
    let l = g.value(pooled).numel();
    let col = g.reshape(pooled, vec![l, 1])?;
    g.softmax_masked(col, mask.to_vec())
}

/// `x w`: the attention-weighted sum of token columns.
pub fn text_embedding(g: &mut Graph, x: NodeId, w: NodeId) -> Result<NodeId> {
    g.matmul(x, w)
}

fn structure_vector(g: &mut Graph, nodes: &ModelNodes, s: Structure) -> Result<NodeId> {
    match s {
        Structure::Row(v) => {
            let row = g.gather_rows(nodes.structure, vec![v])?;
            g.transpose(row)
        }
        Structure::Free(h) => Ok(h),
    }
}

/// Encode a pair into posterior nodes. `with_pi` requests the edge-probability head,
/// used for pairs whose edge state is unknown.
pub fn encode_pair(
    g: &mut Graph,
    nodes: &ModelNodes,
    dims: &ModelDims,
    a: VertexInput<'_>,
    b: VertexInput<'_>,
    with_pi: bool,
) -> Result<EncodedPair> {
    let x_i = embed_text(g, nodes.word_emb, a.tokens)?;
    let x_j = embed_text(g, nodes.word_emb, b.tokens)?;
    let m = similarity_matrix(g, x_i, x_j)?;
    let (w_i, w_j) = align(g, m, nodes.align_u, nodes.align_v, &a.tokens.mask(), &b.tokens.mask())?;
    let t_i = text_embedding(g, x_i, w_i)?;
    let t_j = text_embedding(g, x_j, w_j)?;
    let h_i = structure_vector(g, nodes, a.structure)?;
    let h_j = structure_vector(g, nodes, b.structure)?;
    let f = g.concat(&[t_i, t_j, h_i, h_j])?;

    let hidden = g.matmul(nodes.enc_w1, f)?;
    let hidden = g.add(hidden, nodes.enc_b1)?;
    let hidden = g.tanh(hidden)?;
    let out = g.matmul(nodes.enc_w2, hidden)?;
    let out = g.add(out, nodes.enc_b2)?;

    let d = dims.d;
    let mut block = |k: usize| g.slice_rows(out, k * d, d);
    let mu_i = block(0)?;
    let mu_j = block(1)?;
    let logvar_i = block(2)?;
    let logvar_j = block(3)?;
    let gamma_pre = block(4)?;
    let mu0_i = block(5)?;
    let mu0_j = block(6)?;
    let logvar0_i = block(7)?;
    let logvar0_j = block(8)?;
    let gamma = squash(g, gamma_pre)?;
    let pi = if with_pi {
        let pre = g.slice_rows(out, 9 * d, 1)?;
        Some(squash(g, pre)?)
    } else {
        None
    };
    Ok(EncodedPair {
        posterior: PosteriorNodes {
            mu_i,
            mu_j,
            logvar_i,
            logvar_j,
            gamma,
            mu0_i,
            mu0_j,
            logvar0_i,
            logvar0_j,
            pi,
        },
        x_i,
        x_j,
    })
}

fn squash(g: &mut Graph, pre: NodeId) -> Result<NodeId> {
    let s = g.sigmoid(pre)?;
    g.clamp(s, EPS, 1.0 - EPS)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, GradCheckOptions, ParameterStore};
    use crate::data::TokenSeq;
    use crate::latent::PairPosterior;
    use crate::model::{self, init_params};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_dims() -> ModelDims {
        ModelDims {
            d: 2,
            d_w: 3,
            max_len: 4,
            kernels: 3,
            kernel_width: 3,
            vocab_size: 7,
            n_vertices: 4,
        }
    }

    /// Parameters scaled up from the default init so every path carries signal.
    pub(crate) fn tiny_store(seed: u64) -> ParameterStore {
        let dims = tiny_dims();
        let mut s = init_params(&dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let names: Vec<String> = s.names().map(str::to_owned).collect();
        for name in names {
            for v in s.get_mut(&name).unwrap().data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        s
    }

    fn texts() -> (TokenSeq, TokenSeq) {
        (TokenSeq::new(vec![2, 5, 3], 4), TokenSeq::new(vec![6, 2], 4))
    }

    fn posterior(s: &ParameterStore, a: &TokenSeq, b: &TokenSeq, with_pi: bool) -> PairPosterior {
        let mut g = Graph::new();
        let nodes = ModelNodes::bind(&mut g, s).unwrap();
        let enc = encode_pair(&mut g, &nodes, &tiny_dims(), VertexInput::row(a, 0), VertexInput::row(b, 3), with_pi).unwrap();
        enc.posterior.values(&g)
    }

    // Straight-line reimplementation of the encoder forward pass on plain vectors.
    fn reference_posterior(s: &ParameterStore, a: &TokenSeq, b: &TokenSeq, vi: usize, vj: usize) -> PairPosterior {
        let dims = tiny_dims();
        let (d, dw, l, k, width) = (dims.d, dims.d_w, dims.max_len, dims.kernels, dims.kernel_width);
        let emb = s.get(model::WORD_EMB).unwrap();
        let embed = |t: &TokenSeq| -> Vec<Vec<f64>> {
            (0..l)
                .map(|p| {
                    (0..dw)
                        .map(|r| if p < t.len { emb.at(t.ids[p] as usize, r) } else { 0.0 })
                        .collect()
                })
                .collect()
        };
        let (xi, xj) = (embed(a), embed(b));
        let m: Vec<Vec<f64>> = (0..l)
            .map(|p| (0..l).map(|q| (0..dw).map(|r| xi[p][r] * xj[q][r]).sum()).collect())
            .collect();
        let weights = |kern: &Tensor, sig: &dyn Fn(usize, usize) -> f64, len: usize| -> Vec<f64> {
            let half = width / 2;
            let pooled: Vec<f64> = (0..l)
                .map(|p| {
                    (0..k)
                        .map(|o| {
                            let mut acc = 0.0;
                            for c in 0..l {
                                for t in 0..width {
                                    let pos = p as isize + t as isize - half as isize;
                                    if pos >= 0 && (pos as usize) < l {
                                        acc += kern.data()[(o * l + c) * width + t] * sig(c, pos as usize);
                                    }
                                }
                            }
                            acc.tanh()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let mx = pooled[..len].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = pooled[..len].iter().map(|v| (v - mx).exp()).sum();
            (0..l).map(|p| if p < len { (pooled[p] - mx).exp() / z } else { 0.0 }).collect()
        };
        // channels of the i-side signal index j positions, and vice versa
        let wi = weights(s.get(model::ALIGN_U).unwrap(), &|c, pos| m[pos][c], a.len);
        let wj = weights(s.get(model::ALIGN_V).unwrap(), &|c, pos| m[c][pos], b.len);
        let mut f = Vec::new();
        for r in 0..dw {
            f.push((0..l).map(|p| xi[p][r] * wi[p]).sum::<f64>());
        }
        for r in 0..dw {
            f.push((0..l).map(|p| xj[p][r] * wj[p]).sum::<f64>());
        }
        let h = s.get(model::STRUCTURE).unwrap();
        f.extend((0..dw).map(|r| h.at(vi, r)));
        f.extend((0..dw).map(|r| h.at(vj, r)));
        let (w1, b1) = (s.get(model::ENC_W1).unwrap(), s.get(model::ENC_B1).unwrap());
        let (w2, b2) = (s.get(model::ENC_W2).unwrap(), s.get(model::ENC_B2).unwrap());
        let hid: Vec<f64> = (0..w1.rows())
            .map(|r| ((0..f.len()).map(|c| w1.at(r, c) * f[c]).sum::<f64>() + b1.data()[r]).tanh())
            .collect();
        let out: Vec<f64> = (0..w2.rows())
            .map(|r| (0..hid.len()).map(|c| w2.at(r, c) * hid[c]).sum::<f64>() + b2.data()[r])
            .collect();
        let blk = |q: usize| out[q * d..(q + 1) * d].to_vec();
        let sq = |v: f64| (1.0 / (1.0 + (-v).exp())).clamp(EPS, 1.0 - EPS);
        PairPosterior {
            mu_i: blk(0),
            mu_j: blk(1),
            logvar_i: blk(2),
            logvar_j: blk(3),
            gamma: blk(4).into_iter().map(sq).collect(),
            mu0_i: blk(5),
            mu0_j: blk(6),
            logvar0_i: blk(7),
            logvar0_j: blk(8),
            pi: Some(sq(out[9 * d])),
        }
    }

    #[test]
    fn forward_matches_reference_implementation() {
        let (a, b) = texts();
        for seed in 0..3 {
            let s = tiny_store(seed);
            let got = posterior(&s, &a, &b, true);
            let want = reference_posterior(&s, &a, &b, 0, 3);
            let pairs = [
                (&got.mu_i, &want.mu_i),
                (&got.mu_j, &want.mu_j),
                (&got.logvar_i, &want.logvar_i),
                (&got.logvar_j, &want.logvar_j),
                (&got.gamma, &want.gamma),
                (&got.mu0_i, &want.mu0_i),
                (&got.mu0_j, &want.mu0_j),
                (&got.logvar0_i, &want.logvar0_i),
                (&got.logvar0_j, &want.logvar0_j),
            ];
            for (x, y) in pairs {
                for (p, q) in x.iter().zip(y.iter()) {
                    assert_abs_diff_eq!(p, q, epsilon = 1e-12);
                }
            }
            assert_abs_diff_eq!(got.pi.unwrap(), want.pi.unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_integrator_gives_standard_posterior() {
        let mut s = tiny_store(1);
        for name in [model::ENC_W1, model::ENC_B1, model::ENC_W2, model::ENC_B2] {
            s.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let (a, b) = texts();
        let p = posterior(&s, &a, &b, true);
        assert!(p.mu_i.iter().chain(&p.mu0_j).all(|&v| v == 0.0));
        assert!(p.logvar_i.iter().chain(&p.logvar0_j).all(|&v| v == 0.0));
        assert!(p.gamma.iter().all(|&v| v == 0.5));
        assert_eq!(p.pi, Some(0.5));
        assert_eq!(posterior(&s, &a, &b, false).pi, None);
    }

    #[test]
    fn pad_token_ids_do_not_matter() {
        let s = tiny_store(4);
        let (a, b) = texts();
        let mut a2 = a.clone();
        a2.ids[3] = 6;
        let mut b2 = b.clone();
        b2.ids[2] = 4;
        b2.ids[3] = 1;
        assert_eq!(posterior(&s, &a, &b, true), posterior(&s, &a2, &b2, true));
    }

    #[test]
    fn all_pad_text_is_an_empty_document() {
        let s = tiny_store(0);
        let (a, _) = texts();
        let empty = TokenSeq::new(vec![], 4);
        let mut g = Graph::new();
        let nodes = ModelNodes::bind(&mut g, &s).unwrap();
        let err = encode_pair(&mut g, &nodes, &tiny_dims(), VertexInput::row(&a, 0), VertexInput::row(&empty, 1), false);
        assert!(matches!(err, Err(Error::EmptyDocument)));
    }

    #[test]
    fn alignment_weight_cases() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::full(&[2, 3, 3], 0.1)).unwrap();
        let m = g.constant(Tensor::full(&[3, 3], 0.7)).unwrap();
        // interior and boundary positions see different padding, so use width-1 kernels
        let u1 = g.constant(Tensor::full(&[2, 3, 1], 0.1)).unwrap();
        let (wi, wj) = align(&mut g, m, u1, u1, &[true, true, false], &[true, true, true]).unwrap();
        assert_eq!(g.value(wi).data(), &[0.5, 0.5, 0.0]);
        for &v in g.value(wj).data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let (single, _) = align(&mut g, m, u, u, &[true, false, false], &[true; 3]).unwrap();
        assert_eq!(g.value(single).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn similarity_and_text_embedding_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi_t = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let xj_t = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut g = Graph::new();
        let xi = g.constant(xi_t.clone()).unwrap();
        let xj = g.constant(xj_t.clone()).unwrap();
        let m = similarity_matrix(&mut g, xi, xj).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..3).map(|r| xi_t.at(r, a) * xj_t.at(r, b)).sum();
                assert_abs_diff_eq!(g.value(m).at(a, b), dot, epsilon = 1e-14);
            }
        }
        let same = similarity_matrix(&mut g, xi, xi).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(g.value(same).at(a, b), g.value(same).at(b, a));
            }
        }
        let w = g.constant(Tensor::column(vec![0.0, 0.0, 1.0, 0.0])).unwrap();
        let e = text_embedding(&mut g, xi, w).unwrap();
        assert_eq!(g.value(e).data(), &[xi_t.at(0, 2), xi_t.at(1, 2), xi_t.at(2, 2)]);
    }

    #[test]
    fn encode_pair_gradients_cover_every_group() {
        let s = tiny_store(6);
        let (a, b) = texts();
        let dims = tiny_dims();
        let report = check_gradients(
            &s,
            |g, s| {
                let nodes = ModelNodes::bind(g, s)?;
                let enc = encode_pair(g, &nodes, &dims, VertexInput::row(&a, 0), VertexInput::row(&b, 3), true)?;
                let p = enc.posterior;
                let mut acc = g.scalar(0.0)?;
                // random projection so every output carries gradient
                for (k, id) in [p.mu_i, p.mu_j, p.logvar_i, p.logvar_j, p.gamma, p.mu0_i, p.mu0_j, p.logvar0_i, p.logvar0_j, p.pi.unwrap()]
                    .into_iter()
                    .enumerate()
                {
                    let t = g.tanh(id)?;
                    let t = g.sum(t)?;
                    let t = g.scale(t, 0.3 + 0.17 * k as f64)?;
                    acc = g.add(acc, t)?;
                }
                Ok(acc)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        let decoder_free: Vec<_> = report.params.iter().filter(|p| !p.name.starts_with("dec")).collect();
        assert_eq!(decoder_free.len(), 8);
    }
}
