//! Model dimensions, parameter initialization and graph binding.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Graph, NodeId, ParameterStore, Tensor};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::latent::HomophilicPrior;

pub const WORD_EMB: &str = "word_emb";
pub const STRUCTURE: &str = "structure";
pub const ALIGN_U: &str = "align_u";
pub const ALIGN_V: &str = "align_v";
pub const ENC_W1: &str = "enc_w1";
pub const ENC_B1: &str = "enc_b1";
pub const ENC_W2: &str = "enc_w2";
pub const ENC_B2: &str = "enc_b2";
pub const DEC_W1: &str = "dec_w1";
pub const DEC_B1: &str = "dec_b1";
pub const DEC_W2: &str = "dec_w2";
pub const DEC_B2: &str = "dec_b2";

/// Std of the structure-table initializer; also the prior for unseen vertices.
pub const STRUCTURE_INIT_STD: f64 = 0.1;
const WORD_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Latent (semantic) dimension.
    pub d: usize,
    /// Word and structure embedding dimension.
    pub d_w: usize,
    /// Padded text length.
    pub max_len: usize,
    pub kernels: usize,
    /// Odd convolution width.
    pub kernel_width: usize,
    pub vocab_size: usize,
    pub n_vertices: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("d_w", self.d_w),
            ("max_len", self.max_len),
            ("kernels", self.kernels),
            ("vocab_size", self.vocab_size),
            ("n_vertices", self.n_vertices),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel_width {} must be odd",
                self.kernel_width
            )));
        }
        Ok(())
    }

    /// Integrator output size: nine `d`-blocks plus the edge logit.
    pub fn head_size(&self) -> usize {
        9 * self.d + 1
    }

    pub fn hidden(&self) -> usize {
        4 * self.d_w
    }

    /// Expected shape of every parameter, in name order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h = self.hidden();
        vec![
            (ALIGN_U, vec![self.kernels, self.max_len, self.kernel_width]),
            (ALIGN_V, vec![self.kernels, self.max_len, self.kernel_width]),
            (DEC_B1, vec![self.d_w, 1]),
            (DEC_B2, vec![self.d_w, 1]),
            (DEC_W1, vec![self.d_w, self.d]),
            (DEC_W2, vec![self.d_w, self.d_w]),
            (ENC_B1, vec![h, 1]),
            (ENC_B2, vec![self.head_size(), 1]),
            (ENC_W1, vec![h, 4 * self.d_w]),
            (ENC_W2, vec![self.head_size(), h]),
            (STRUCTURE, vec![self.n_vertices, self.d_w]),
            (WORD_EMB, vec![self.vocab_size, self.d_w]),
        ]
    }

    /// Error listing every parameter whose stored shape disagrees with these dims.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        let mut problems = Vec::new();
        for (name, shape) in self.shapes() {
            match store.get(name) {
                Ok(t) if t.shape() == shape.as_slice() => {}
                Ok(t) => problems.push(format!("{name}: checkpoint {:?}, config {:?}", t.shape(), shape)),
                Err(_) => problems.push(format!("{name}: missing from checkpoint, config {:?}", shape)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(problems.join("; ")))
        }
    }
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

/// Fresh parameters: word table uniform in ±0.05, structure table N(0, 0.1²),
/// Glorot-uniform weights and zero biases.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ParameterStore> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    let word = Uniform::new_inclusive(-WORD_INIT_RANGE, WORD_INIT_RANGE).expect("finite bounds");
    let n = dims.vocab_size * dims.d_w;
    s.insert(
        WORD_EMB,
        Tensor::new(vec![dims.vocab_size, dims.d_w], (0..n).map(|_| word.sample(&mut rng)).collect())?,
    );
    s.insert(STRUCTURE, structure_init(&mut rng, dims.n_vertices, dims.d_w));
    let (k, l, w) = (dims.kernels, dims.max_len, dims.kernel_width);
    s.insert(ALIGN_U, glorot(&mut rng, &[k, l, w], l * w, k * w));
    s.insert(ALIGN_V, glorot(&mut rng, &[k, l, w], l * w, k * w));
    let (h, f, o) = (dims.hidden(), 4 * dims.d_w, dims.head_size());
    s.insert(ENC_W1, glorot(&mut rng, &[h, f], f, h));
    s.insert(ENC_B1, Tensor::zeros(&[h, 1]));
    s.insert(ENC_W2, glorot(&mut rng, &[o, h], h, o));
    s.insert(ENC_B2, Tensor::zeros(&[o, 1]));
    s.insert(DEC_W1, glorot(&mut rng, &[dims.d_w, dims.d], dims.d, dims.d_w));
    s.insert(DEC_B1, Tensor::zeros(&[dims.d_w, 1]));
    s.insert(DEC_W2, glorot(&mut rng, &[dims.d_w, dims.d_w], dims.d_w, dims.d_w));
    s.insert(DEC_B2, Tensor::zeros(&[dims.d_w, 1]));
    Ok(s)
}

/// `rows × d_w` draws from N(0, 0.1²).
pub fn structure_init(rng: &mut impl Rng, rows: usize, d_w: usize) -> Tensor {
    let normal = Normal::new(0.0, STRUCTURE_INIT_STD).expect("valid std");
    let data = (0..rows * d_w).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, d_w, data).expect("sized")
}

/// Read "token v1 … v_dw" lines and overwrite matching rows of the word table.
/// Returns the number of vocabulary entries that were found.
pub fn load_pretrained(store: &mut ParameterStore, vocab: &Vocabulary, path: &Path) -> Result<usize> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = store.get_mut(WORD_EMB)?;
    let d_w = table.shape()[1];
    let index: HashMap<&str, usize> = vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut found = 0;
    for (lineno, line) in src.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if values.len() != d_w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected {} values, found {}", d_w, values.len()),
            });
        }
        if let Some(&row) = index.get(token) {
            table.data_mut()[row * d_w..(row + 1) * d_w].copy_from_slice(&values);
            found += 1;
        }
    }
    Ok(found)
}

/// Trained parameters with the dimensions and prior they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParameterStore,
    pub dims: ModelDims,
    pub lambda: f64,
    pub pi0: f64,
}

impl Model {
    pub fn new(params: ParameterStore, dims: ModelDims, lambda: f64, pi0: f64) -> Result<Self> {
        dims.check_store(&params)?;
        Ok(Model {
            params,
            dims,
            lambda,
            pi0,
        })
    }

    pub fn prior(&self) -> Result<HomophilicPrior> {
        HomophilicPrior::new(self.dims.d, self.lambda, self.pi0)
    }

    /// Row `v` of the structure table.
    pub fn structure_row(&self, v: usize) -> Result<Vec<f64>> {
        let t = self.params.get(STRUCTURE)?;
        if v >= t.rows() {
            return Err(Error::InvalidArgument(format!("vertex {v} outside structure table")));
        }
        Ok(t.data()[v * t.cols()..(v + 1) * t.cols()].to_vec())
    }
}

/// Every model parameter bound into one graph.
#[derive(Debug, Clone, Copy)]
pub struct ModelNodes {
    pub word_emb: NodeId,
    pub structure: NodeId,
    pub align_u: NodeId,
    pub align_v: NodeId,
    pub enc_w1: NodeId,
    pub enc_b1: NodeId,
    pub enc_w2: NodeId,
    pub enc_b2: NodeId,
    pub dec_w1: NodeId,
    pub dec_b1: NodeId,
    pub dec_w2: NodeId,
    pub dec_b2: NodeId,
}

impl ModelNodes {
    pub fn bind(g: &mut Graph, store: &ParameterStore) -> Result<Self> {
        Ok(ModelNodes {
            word_emb: g.param_from(store, WORD_EMB)?,
            structure: g.param_from(store, STRUCTURE)?,
            align_u: g.param_from(store, ALIGN_U)?,
            align_v: g.param_from(store, ALIGN_V)?,
            enc_w1: g.param_from(store, ENC_W1)?,
            enc_b1: g.param_from(store, ENC_B1)?,
            enc_w2: g.param_from(store, ENC_W2)?,
            enc_b2: g.param_from(store, ENC_B2)?,
            dec_w1: g.param_from(store, DEC_W1)?,
            dec_b1: g.param_from(store, DEC_B1)?,
            dec_w2: g.param_from(store, DEC_W2)?,
            dec_b2: g.param_from(store, DEC_B2)?,
        })
    }
}
