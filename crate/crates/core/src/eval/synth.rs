use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::ParameterStore;
use crate::data::{Network, Vocabulary};
use crate::error::{Error, Result};
use crate::model::WORD_EMB;

/// Parameters of the homophilic network generator.
///
/// Vertex codes are drawn around `classes` random centers. A pair is linked with
/// probability `sigmoid(b + kappa * lambda * cos(c_i, c_j))`, where `b` is solved so
/// the expected edge count equals `sparsity * N(N-1)/2`; `lambda = 0` removes any
/// dependence on the codes. Each vertex's tokens are drawn with probability
/// proportional to `exp(beta * e_k . A c_i)` for fixed random word vectors `e_k` and a
/// fixed random map `A`, so the max-pooled word vectors of a text track `A c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub d_w: usize,
    pub lambda: f64,
    pub sparsity: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub classes: usize,
    pub code_noise: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 200,
            d: 8,
            d_w: 16,
            lambda: 0.99,
            sparsity: 0.02,
            vocab_size: 200,
            max_len: 16,
            seed: 0,
            classes: 7,
            code_noise: 0.3,
            kappa: 16.0,
            beta: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("need at least 2 vertices, got {}", self.n));
        }
        if self.d == 0 || self.d_w == 0 || self.vocab_size == 0 || self.classes == 0 {
            return bad("d, d_w, vocab_size and classes must be positive".into());
        }
        if self.max_len < 2 {
            return bad(format!("max_len must be at least 2, got {}", self.max_len));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} not in [0, 1]", self.lambda));
        }
        if !self.sparsity.is_finite() || self.sparsity <= 0.0 {
            return bad(format!("sparsity {} must be positive", self.sparsity));
        }
        let pairs = self.n * (self.n - 1) / 2;
        if self.target_edges() > pairs {
            return bad(format!(
                "sparsity {} asks for {} edges but only {} pairs exist",
                self.sparsity,
                self.target_edges(),
                pairs
            ));
        }
        if self.target_edges() == 0 {
            return bad(format!("sparsity {} yields no edges for {} vertices", self.sparsity, self.n));
        }
        Ok(())
    }

    pub fn target_edges(&self) -> usize {
        (self.sparsity * (self.n * (self.n.saturating_sub(1)) / 2) as f64).round() as usize
    }
}

/// A generated network plus the ground truth it was generated from.
#[derive(Debug, Clone)]
pub struct SynthNetwork {
    pub network: Network,
    pub vocab: Vocabulary,
    pub raw_texts: Vec<String>,
    pub codes: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// `(token, vector)` for every generator token.
    pub word_vectors: Vec<(String, Vec<f64>)>,
    /// Edge logit offset that met the requested sparsity.
    pub bias: f64,
}

fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    super::linkpred::cosine(a, b)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn synth_network(cfg: &SynthConfig) -> Result<SynthNetwork> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;

    let centers: Vec<Vec<f64>> = (0..cfg.classes).map(|_| normal_vec(&mut rng, cfg.d, 1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|v| v % cfg.classes).collect();
    let codes: Vec<Vec<f64>> = labels
        .iter()
        .map(|&k| {
            let noise = normal_vec(&mut rng, cfg.d, cfg.code_noise);
            centers[k].iter().zip(noise).map(|(c, e)| c + e).collect()
        })
        .collect();

    let mut logits = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            logits.push(cfg.kappa * cfg.lambda * cosine(&codes[i], &codes[j]));
        }
    }
    let target = cfg.target_edges() as f64;
    let expected = |b: f64| logits.iter().map(|&s| sigmoid(b + s)).sum::<f64>();
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = 0.5 * (lo + hi);
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < sigmoid(bias + logits[k]) {
                edges.push((i, j));
            }
            k += 1;
        }
    }

    let word_vectors: Vec<(String, Vec<f64>)> = (0..cfg.vocab_size)
        .map(|t| (format!("w{t}"), normal_vec(&mut rng, cfg.d_w, 1.0)))
        .collect();
    let map: Vec<Vec<f64>> = (0..cfg.d_w)
        .map(|_| normal_vec(&mut rng, cfg.d, 1.0 / (cfg.d as f64).sqrt()))
        .collect();
    let min_len = cfg.max_len / 2;
    let mut raw_texts = Vec::with_capacity(n);
    for code in &codes {
        let norm = code.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let feature: Vec<f64> = map
            .iter()
            .map(|row| row.iter().zip(code).map(|(a, c)| a * c).sum::<f64>() / norm)
            .collect();
        let logit: Vec<f64> = word_vectors
            .iter()
            .map(|(_, e)| cfg.beta * e.iter().zip(&feature).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let top = logit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logit.iter().map(|l| (l - top).exp()).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Sampling(e.to_string()))?;
        let len = rng.random_range(min_len..=cfg.max_len);
        let words: Vec<&str> = (0..len).map(|_| word_vectors[dist.sample(&mut rng)].0.as_str()).collect();
        raw_texts.push(words.join(" "));
    }

    let vocab = Vocabulary::build(raw_texts.iter().map(String::as_str), 1);
    let texts = raw_texts.iter().map(|t| vocab.encode(t, cfg.max_len)).collect();
    let (network, _) = Network::new(n, edges, texts, labels.iter().map(|&l| Some(l)).collect())?;
    Ok(SynthNetwork {
        network,
        vocab,
        raw_texts,
        codes,
        labels,
        word_vectors,
        bias,
    })
}

impl SynthNetwork {
    /// Copy the generator's word vectors into the matching rows of the word table.
    pub fn install_word_vectors(&self, store: &mut ParameterStore) -> Result<usize> {
        let table = store.get_mut(WORD_EMB)?;
        let d_w = table.shape()[1];
        let mut found = 0;
        for (token, values) in &self.word_vectors {
            if values.len() != d_w {
                return Err(Error::DimensionMismatch(format!(
                    "word vectors have {} dims, model expects {}",
                    values.len(),
                    d_w
                )));
            }
            let row = self.vocab.id(token) as usize;
            if row > crate::data::UNK_ID as usize {
                table.data_mut()[row * d_w..(row + 1) * d_w].copy_from_slice(values);
                found += 1;
            }
        }
        Ok(found)
    }

    /// Write `edges.txt`, `texts.txt`, `labels.txt`, `words.txt` and `codes.txt`
    /// into `dir` in the formats read by the network loader.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let path = dir.join(name);
            let mut buf = Vec::new();
            body(&mut buf).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write("edges.txt", &|w| {
            for (i, j) in self.network.edges() {
                writeln!(w, "{i} {j}")?;
            }
            Ok(())
        })?;
        write("texts.txt", &|w| {
            for (v, t) in self.raw_texts.iter().enumerate() {
                writeln!(w, "{v}\t{t}")?;
            }
            Ok(())
        })?;
        write("labels.txt", &|w| {
            for (v, l) in self.labels.iter().enumerate() {
                writeln!(w, "{v}\t{l}")?;
            }
            Ok(())
        })?;
        write("words.txt", &|w| {
            for (t, e) in &self.word_vectors {
                let cells: Vec<String> = e.iter().map(|x| format!("{x:.16e}")).collect();
                writeln!(w, "{t} {}", cells.join(" "))?;
            }
            Ok(())
        })?;
        write("codes.txt", &|w| {
            crate::inference::write_embeddings(w, self.codes.iter().cloned().enumerate())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_network;
    use crate::model::{init_params, load_pretrained, ModelDims};

    fn small(lambda: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            lambda,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_network() {
        let a = synth_network(&small(0.99, 5)).unwrap();
        let b = synth_network(&small(0.99, 5)).unwrap();
        assert_eq!(a.network.edges(), b.network.edges());
        assert_eq!(a.raw_texts, b.raw_texts);
        assert_eq!(a.codes, b.codes);
        let c = synth_network(&small(0.99, 6)).unwrap();
        assert_ne!(a.network.edges(), c.network.edges());
    }

    #[test]
    fn edge_count_within_poisson_band() {
        for seed in 0..5 {
            for lambda in [0.0, 0.99] {
                let cfg = small(lambda, seed);
                let s = synth_network(&cfg).unwrap();
                let m = cfg.target_edges() as f64;
                assert_eq!(m, 398.0);
                let got = s.network.edges().len() as f64;
                assert!((got - m).abs() <= 4.0 * m.sqrt(), "seed {seed} λ {lambda}: {got} vs {m}");
            }
        }
    }

    #[test]
    fn infeasible_sparsity_is_rejected() {
        assert!(synth_network(&SynthConfig { sparsity: 1.5, ..small(0.5, 0) }).is_err());
        assert!(synth_network(&SynthConfig { sparsity: 0.0, ..small(0.5, 0) }).is_err());
        assert!(synth_network(&SynthConfig { n: 1, ..small(0.5, 0) }).is_err());
    }

    fn mean_code_cosine(s: &SynthNetwork, linked: bool) -> f64 {
        let n = s.network.n_vertices();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if s.network.has_edge(i, j) == linked {
                    total += cosine(&s.codes[i], &s.codes[j]);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn homophily_follows_lambda() {
        let on = synth_network(&small(0.99, 1)).unwrap();
        assert!(mean_code_cosine(&on, true) > mean_code_cosine(&on, false) + 0.3);
        let off = synth_network(&small(0.0, 1)).unwrap();
        let gap = mean_code_cosine(&off, true) - mean_code_cosine(&off, false);
        assert!(gap.abs() < 0.05, "{gap}");
    }

    #[test]
    fn texts_track_codes() {
        let s = synth_network(&small(0.99, 2)).unwrap();
        // bag-of-words overlap is higher within a class than across classes
        let bag = |v: usize| {
            let mut b = vec![0.0; s.vocab.len()];
            for &t in s.network.text(v).real() {
                b[t as usize] += 1.0;
            }
            b
        };
        let (mut same, mut diff, mut ns, mut nd) = (0.0, 0.0, 0, 0);
        for i in 0..60 {
            for j in i + 1..60 {
                let c = cosine(&bag(i), &bag(j));
                if s.labels[i] == s.labels[j] {
                    same += c;
                    ns += 1;
                } else {
                    diff += c;
                    nd += 1;
                }
            }
        }
        assert!(same / ns as f64 > diff / nd as f64 + 0.1);
    }

    #[test]
    fn files_round_trip_through_loader() {
        let s = synth_network(&small(0.99, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_files(dir.path()).unwrap();
        let loaded = load_network(
            &dir.path().join("edges.txt"),
            &dir.path().join("texts.txt"),
            Some(&dir.path().join("labels.txt")),
            16,
            1,
        )
        .unwrap();
        assert_eq!(loaded.network.edges(), s.network.edges());
        assert_eq!(loaded.network.texts(), s.network.texts());
        assert_eq!(loaded.network.labels(), s.network.labels());

        let dims = ModelDims {
            d: 2,
            d_w: 16,
            max_len: 16,
            kernels: 2,
            kernel_width: 3,
            vocab_size: s.vocab.len(),
            n_vertices: 200,
        };
        let mut from_file = init_params(&dims, 0).unwrap();
        let mut direct = from_file.clone();
        let found = load_pretrained(&mut from_file, &loaded.vocab, &dir.path().join("words.txt")).unwrap();
        assert_eq!(found, s.install_word_vectors(&mut direct).unwrap());
        assert_eq!(from_file.get(WORD_EMB).unwrap(), direct.get(WORD_EMB).unwrap());
    }
}
