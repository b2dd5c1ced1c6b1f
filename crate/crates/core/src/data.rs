//! Attributed networks: loading, vocabularies, edge splits and training-pair sampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Unordered vertex pair stored as `(min, max)`.
pub type Edge = (usize, usize);

pub fn canonical(i: usize, j: usize) -> Edge {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    /// Ids are assigned by descending frequency, ties broken lexicographically.
    /// Tokens seen fewer than `min_count` times map to the unknown id.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            tokens,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        match self.token_to_id.get(token) {
            Some(&id) if id != PAD_ID => id,
            _ => UNK_ID,
        }
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase, split on whitespace, truncate or pad to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSeq {
        let mut ids: Vec<u32> = tokenize(text).map(|t| self.id(&t)).take(max_len).collect();
        let len = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSeq { ids, len }
    }

    /// Inverse of [`Vocabulary::encode`] over the real tokens.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        seq.real()
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Fixed-length token ids plus the number of real (non-padding) tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub len: usize,
}

impl TokenSeq {
    pub fn new(mut ids: Vec<u32>, max_len: usize) -> Self {
        ids.truncate(max_len);
        let len = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSeq { ids, len }
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn real(&self) -> &[u32] {
        &self.ids[..self.len]
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|k| k < self.len).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.ids.iter().map(|&id| id as usize).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    n_vertices: usize,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    texts: Vec<TokenSeq>,
    labels: Vec<Option<usize>>,
    max_len: usize,
}

impl Network {
    /// Build a network, canonicalizing and deduplicating edges. Self-loops are dropped;
    /// returns the network and the number of dropped self-loops.
    pub fn new(
        n_vertices: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        texts: Vec<TokenSeq>,
        labels: Vec<Option<usize>>,
    ) -> Result<(Self, usize)> {
        if texts.len() != n_vertices {
            return Err(Error::InvalidArgument(format!(
                "{} texts for {} vertices",
                texts.len(),
                n_vertices
            )));
        }
        let max_len = texts.first().map_or(0, TokenSeq::max_len);
        if texts.iter().any(|t| t.max_len() != max_len || t.len > max_len) {
            return Err(Error::InvalidArgument("texts must share one padded length".into()));
        }
        let labels = if labels.is_empty() {
            vec![None; n_vertices]
        } else if labels.len() == n_vertices {
            labels
        } else {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} vertices",
                labels.len(),
                n_vertices
            )));
        };
        let mut self_loops = 0;
        let mut edge_set = HashSet::new();
        for (i, j) in edges {
            if i >= n_vertices || j >= n_vertices {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) outside [0, {n_vertices})"
                )));
            }
            if i == j {
                self_loops += 1;
                continue;
            }
            edge_set.insert(canonical(i, j));
        }
        let mut edges: Vec<Edge> = edge_set.iter().copied().collect();
        edges.sort_unstable();
        Ok((
            Network {
                n_vertices,
                edges,
                edge_set,
                texts,
                labels,
                max_len,
            },
            self_loops,
        ))
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Sorted canonical edges.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_set.contains(&canonical(i, j))
    }

    pub fn text(&self, v: usize) -> &TokenSeq {
        &self.texts[v]
    }

    pub fn texts(&self) -> &[TokenSeq] {
        &self.texts
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Fraction of vertex pairs that are edges.
    pub fn sparsity(&self) -> f64 {
        let pairs = self.n_vertices * self.n_vertices.saturating_sub(1) / 2;
        if pairs == 0 {
            0.0
        } else {
            self.edges.len() as f64 / pairs as f64
        }
    }

    /// Sub-network on `keep` (in that order), re-indexed to `0..keep.len()`.
    pub fn induced(&self, keep: &[usize]) -> Result<Network> {
        let index: HashMap<usize, usize> = keep.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let edges = self.edges.iter().filter_map(|&(a, b)| Some((*index.get(&a)?, *index.get(&b)?)));
        let texts = keep.iter().map(|&v| self.texts[v].clone()).collect();
        let labels = keep.iter().map(|&v| self.labels[v]).collect();
        Network::new(keep.len(), edges, texts, labels).map(|(n, _)| n)
    }
}

/// Result of [`load_network`].
#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub network: Network,
    pub vocab: Vocabulary,
    pub self_loops_dropped: usize,
    pub duplicate_edges: usize,
}

/// Load edges ("i j"), texts ("i<TAB>text") and optional labels ("i<TAB>class").
pub fn load_network(
    edge_path: &Path,
    text_path: &Path,
    label_path: Option<&Path>,
    max_len: usize,
    min_count: usize,
) -> Result<LoadedNetwork> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be positive".into()));
    }
    let raw_texts = read_keyed_lines(text_path)?;
    let n_vertices = raw_texts.keys().next_back().map_or(0, |&k| k + 1);
    if raw_texts.len() < n_vertices {
        log::warn!(
            "{} vertices in [0, {}) have no text line",
            n_vertices - raw_texts.len(),
            n_vertices
        );
    }

    let edge_src = std::fs::read_to_string(edge_path).map_err(|e| Error::io(edge_path, e))?;
    let mut raw_edges = Vec::new();
    for (lineno, line) in edge_src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: edge_path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(format!("expected \"i j\", got {:?}", line)));
        }
        let mut ends = [0usize; 2];
        for (slot, f) in ends.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| parse_err(format!("bad vertex id {:?}", f)))?;
        }
        for &v in &ends {
            if !raw_texts.contains_key(&v) {
                return Err(Error::MissingText { vertex: v });
            }
        }
        raw_edges.push((ends[0], ends[1]));
    }

    let vocab = Vocabulary::build(raw_texts.values().map(String::as_str), min_count);
    let mut empty = 0;
    let texts: Vec<TokenSeq> = (0..n_vertices)
        .map(|v| {
            let seq = vocab.encode(raw_texts.get(&v).map_or("", String::as_str), max_len);
            if seq.len == 0 {
                // a lone unknown token keeps the alignment softmax defined
                empty += 1;
                TokenSeq::new(vec![UNK_ID], max_len)
            } else {
                seq
            }
        })
        .collect();
    if empty > 0 {
        log::warn!("{} vertices have empty text; encoded as a single unknown token", empty);
    }

    let labels = match label_path {
        Some(path) => {
            let raw = read_keyed_lines(path)?;
            let mut labels = vec![None; n_vertices];
            for (v, class) in raw {
                if v >= n_vertices {
                    return Err(Error::InvalidArgument(format!(
                        "{}: label for unknown vertex {}",
                        path.display(),
                        v
                    )));
                }
                labels[v] = Some(class.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("bad class id {:?} for vertex {}", class, v),
                })?);
            }
            labels
        }
        None => Vec::new(),
    };

    let non_loop = raw_edges.iter().filter(|(a, b)| a != b).count();
    let (network, self_loops) = Network::new(n_vertices, raw_edges, texts, labels)?;
    if self_loops > 0 {
        log::warn!("dropped {} self-loop(s) from {}", self_loops, edge_path.display());
    }
    let duplicate_edges = non_loop - network.edges().len();
    Ok(LoadedNetwork {
        network,
        vocab,
        self_loops_dropped: self_loops,
        duplicate_edges,
    })
}

/// Parse "id<TAB>rest" lines into an ordered map. Duplicate ids are an error.
fn read_keyed_lines(path: &Path) -> Result<BTreeMap<usize, String>> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected \"id<TAB>value\"".into()))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad vertex id {:?}", id)))?;
        if out.insert(id, rest.to_owned()).is_some() {
            return Err(parse_err(format!("duplicate vertex id {}", id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub seed: u64,
    pub ratio: f64,
    pub n_vertices: usize,
    train_set: HashSet<Edge>,
}

impl EdgeSplit {
    pub fn from_parts(n_vertices: usize, train_pos: Vec<Edge>, test_pos: Vec<Edge>, seed: u64) -> Self {
        let total = train_pos.len() + test_pos.len();
        let ratio = if total == 0 {
            1.0
        } else {
            train_pos.len() as f64 / total as f64
        };
        let train_set = train_pos.iter().copied().collect();
        EdgeSplit {
            train_pos,
            test_pos,
            seed,
            ratio,
            n_vertices,
            train_set,
        }
    }

    pub fn is_train_edge(&self, i: usize, j: usize) -> bool {
        self.train_set.contains(&canonical(i, j))
    }

    /// Number of training edges incident to each vertex.
    pub fn train_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_vertices];
        for &(a, b) in &self.train_pos {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

/// Uniform random partition of the edge set with `round(ratio * |E|)` training edges.
pub fn split_edges(network: &Network, ratio: f64, seed: u64) -> Result<EdgeSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("edge ratio {ratio} not in (0, 1]")));
    }
    let mut edges = network.edges().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let n_train = (ratio * edges.len() as f64).round() as usize;
    let mut test_pos = edges.split_off(n_train);
    let mut train_pos = edges;
    train_pos.sort_unstable();
    test_pos.sort_unstable();
    let mut split = EdgeSplit::from_parts(network.n_vertices(), train_pos, test_pos, seed);
    split.ratio = ratio;
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeState {
    Present,
    Absent,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairObservation {
    pub i: usize,
    pub j: usize,
    pub w: EdgeState,
}

const NEGATIVE_ATTEMPTS: usize = 10_000;

/// Uniform vertex pair `i < j` that is not a training edge.
pub fn sample_non_edge(split: &EdgeSplit, rng: &mut impl Rng) -> Result<Edge> {
    sample_pair_where(split.n_vertices, rng, |a, b| !split.is_train_edge(a, b))
}

pub(crate) fn sample_pair_where(
    n_vertices: usize,
    rng: &mut impl Rng,
    accept: impl Fn(usize, usize) -> bool,
) -> Result<Edge> {
    if n_vertices < 2 {
        return Err(Error::Sampling("need at least two vertices".into()));
    }
    for _ in 0..NEGATIVE_ATTEMPTS {
        let a = rng.random_range(0..n_vertices);
        let b = rng.random_range(0..n_vertices);
        if a == b {
            continue;
        }
        let e = canonical(a, b);
        if accept(e.0, e.1) {
            return Ok(e);
        }
    }
    Err(Error::Sampling(format!(
        "no acceptable vertex pair after {} attempts; network too dense",
        NEGATIVE_ATTEMPTS
    )))
}

/// Observations for the given positives: each becomes `Unknown` with probability `alpha`,
/// and is followed by `neg_per_pos` sampled non-edges labelled `Absent`. With
/// `drop_negatives` the sampled non-edges are dropped to `Unknown` at the same rate.
pub fn observations_for(
    positives: &[Edge],
    split: &EdgeSplit,
    neg_per_pos: usize,
    alpha: f64,
    drop_negatives: bool,
    rng: &mut impl Rng,
) -> Result<Vec<PairObservation>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in [0, 1]")));
    }
    let mut out = Vec::with_capacity(positives.len() * (1 + neg_per_pos));
    for &(i, j) in positives {
        let w = if alpha > 0.0 && rng.random::<f64>() < alpha {
            EdgeState::Unknown
        } else {
            EdgeState::Present
        };
        out.push(PairObservation { i, j, w });
        for _ in 0..neg_per_pos {
            let (a, b) = sample_non_edge(split, rng)?;
            let w = if drop_negatives && alpha > 0.0 && rng.random::<f64>() < alpha {
                EdgeState::Unknown
            } else {
                EdgeState::Absent
            };
            out.push(PairObservation { i: a, j: b, w });
        }
    }
    Ok(out)
}

/// Draw `batch_size` training positives uniformly (with replacement) and expand them
/// with [`observations_for`].
pub fn sample_pair_batch(
    split: &EdgeSplit,
    batch_size: usize,
    neg_per_pos: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Vec<PairObservation>> {
    if split.train_pos.is_empty() {
        return Err(Error::Sampling("no training edges".into()));
    }
    let positives: Vec<Edge> = (0..batch_size)
        .map(|_| split.train_pos[rng.random_range(0..split.train_pos.len())])
        .collect();
    observations_for(&positives, split, neg_per_pos, alpha, false, rng)
}

/// One epoch: training positives shuffled and chunked into batches of `batch_size`.
pub fn epoch_batches(
    split: &EdgeSplit,
    batch_size: usize,
    neg_per_pos: usize,
    alpha: f64,
    drop_negatives: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<PairObservation>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order = split.train_pos.clone();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| observations_for(chunk, split, neg_per_pos, alpha, drop_negatives, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn ring(n: usize) -> Network {
        let texts = (0..n).map(|v| TokenSeq::new(vec![2 + v as u32], 4)).collect();
        let edges = (0..n).map(|v| (v, (v + 1) % n));
        Network::new(n, edges, texts, Vec::new()).unwrap().0
    }

    #[test]
    fn empty_edge_file_two_texts() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "");
        let t = write(dir.path(), "t.txt", "0\tone\n1\ttwo\n");
        let loaded = load_network(&e, &t, None, 8, 1).unwrap();
        assert_eq!(loaded.network.n_vertices(), 2);
        assert!(loaded.network.edges().is_empty());
    }

    #[test]
    fn empty_edge_file_and_blank_texts() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "");
        let t = write(dir.path(), "t.txt", "0\thello world\n1\tHello\n3\t \n");
        let loaded = load_network(&e, &t, None, 8, 1).unwrap();
        assert_eq!(loaded.network.n_vertices(), 4);
        assert_eq!(loaded.network.text(2).real(), &[UNK_ID]);
        assert_eq!(loaded.network.text(3).real(), &[UNK_ID]);
        assert!(loaded.network.edges().is_empty());
        assert_eq!(loaded.network.text(0).len, 2);
        assert_eq!(loaded.network.text(0).ids[0], loaded.network.text(1).ids[0]);
    }

    #[test]
    fn duplicate_reversed_and_self_loop_edges() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "0 1\n1 0\n2 2\n");
        let t = write(dir.path(), "t.txt", "0\ta\n1\tb\n2\tc\n");
        let loaded = load_network(&e, &t, None, 4, 1).unwrap();
        assert_eq!(loaded.network.edges(), &[(0, 1)]);
        assert_eq!(loaded.self_loops_dropped, 1);
        assert_eq!(loaded.duplicate_edges, 1);
    }

    #[test]
    fn missing_text_names_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "0 1\n0 7\n");
        let t = write(dir.path(), "t.txt", "0\ta\n1\tb\n");
        let err = load_network(&e, &t, None, 4, 1).unwrap_err();
        assert!(matches!(err, Error::MissingText { vertex: 7 }), "{err}");
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn unparseable_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "0 1\n\n1 x\n");
        let t = write(dir.path(), "t.txt", "0\ta\n1\tb\n");
        match load_network(&e, &t, None, 4, 1).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn labels_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "0 1\n");
        let t = write(dir.path(), "t.txt", "0\tone two three four five\n1\tsix\n");
        let l = write(dir.path(), "l.txt", "0\t3\n1\t0\n");
        let loaded = load_network(&e, &t, Some(&l), 3, 1).unwrap();
        assert_eq!(loaded.network.text(0).len, 3);
        assert_eq!(loaded.network.text(1).ids[1..], [PAD_ID, PAD_ID]);
        assert_eq!(loaded.network.labels(), &[Some(3), Some(0)]);
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unknown() {
        let vocab = Vocabulary::build(["a a b", "a c c"], 2);
        assert_eq!(vocab.len(), 4);
        assert_eq!(vocab.id("b"), UNK_ID);
        assert_eq!(vocab.id("a"), 2);
        assert_eq!(vocab.id("c"), 3);
        assert_eq!(vocab.id("<pad>"), UNK_ID);
    }

    #[test]
    fn split_boundaries_and_counts() {
        let net = ring(10);
        let full = split_edges(&net, 1.0, 3).unwrap();
        assert!(full.test_pos.is_empty());
        let half = split_edges(&net, 0.5, 3).unwrap();
        assert_eq!(half.train_pos.len(), 5);
        let mut all: Vec<Edge> = half.train_pos.iter().chain(&half.test_pos).copied().collect();
        all.sort_unstable();
        assert_eq!(all, net.edges());
        assert!(half.train_pos.iter().all(|e| !half.test_pos.contains(e)));
        assert_eq!(half, split_edges(&net, 0.5, 3).unwrap());
        assert!(split_edges(&net, 0.0, 3).is_err());
    }

    #[test]
    fn alpha_boundaries() {
        let net = ring(30);
        let split = split_edges(&net, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let none = sample_pair_batch(&split, 200, 1, 0.0, &mut rng).unwrap();
        assert!(none.iter().all(|o| o.w != EdgeState::Unknown));
        let all = sample_pair_batch(&split, 200, 0, 1.0, &mut rng).unwrap();
        assert!(all.iter().all(|o| o.w == EdgeState::Unknown));
    }

    #[test]
    fn dropout_fraction_concentrates() {
        let net = ring(50);
        let split = split_edges(&net, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obs = sample_pair_batch(&split, 100_000, 0, 0.2, &mut rng).unwrap();
        let unknown = obs.iter().filter(|o| o.w == EdgeState::Unknown).count();
        let frac = unknown as f64 / obs.len() as f64;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
    }

    #[test]
    fn negatives_drop_only_when_asked() {
        let net = ring(40);
        let split = split_edges(&net, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let unknown_negatives = |drop: bool, rng: &mut ChaCha8Rng| {
            let batches = epoch_batches(&split, 7, 3, 1.0, drop, rng).unwrap();
            let obs: Vec<PairObservation> = batches.into_iter().flatten().collect();
            assert_eq!(obs.len(), 4 * split.train_pos.len());
            obs.iter().filter(|o| !net.has_edge(o.i, o.j) && o.w == EdgeState::Unknown).count()
        };
        assert_eq!(unknown_negatives(false, &mut rng), 0);
        assert_eq!(unknown_negatives(true, &mut rng), 3 * split.train_pos.len());
    }

    #[test]
    fn dense_network_fails_negative_sampling() {
        let texts = (0..3).map(|_| TokenSeq::new(vec![2], 2)).collect();
        let (net, _) = Network::new(3, [(0, 1), (1, 2), (0, 2)], texts, Vec::new()).unwrap();
        let split = split_edges(&net, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_pair_batch(&split, 1, 1, 0.0, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    proptest! {
        #[test]
        fn emitted_pairs_respect_invariants(seed in any::<u64>(), ratio in 0.05f64..=1.0) {
            let net = ring(12);
            let split = split_edges(&net, ratio, seed).unwrap();
            prop_assert_eq!(split.train_pos.len(), (ratio * 12.0).round() as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if !split.train_pos.is_empty() {
                for o in sample_pair_batch(&split, 16, 3, 0.3, &mut rng).unwrap() {
                    prop_assert!(o.i != o.j);
                    if o.w == EdgeState::Absent {
                        prop_assert!(!split.is_train_edge(o.i, o.j));
                    }
                }
            }
        }

        #[test]
        fn tokenization_is_idempotent(words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..12), max_len in 1usize..10) {
            let text = words.join(" ");
            let vocab = Vocabulary::build([text.as_str(), "extra Words here"], 1);
            let seq = vocab.encode(&text, max_len);
            let again = vocab.encode(&vocab.decode(&seq), max_len);
            prop_assert_eq!(seq, again);
        }
    }
}
