//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{ScoreMethod, SynthConfig};
use crate::trainer::TrainConfig;

/// Every accepted key with its help text, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("edges", "edge list file, one `i j` pair per line"),
    ("texts", "vertex text file, `id<TAB>text` per line"),
    ("labels", "optional vertex label file, `id<TAB>class` per line"),
    ("words", "optional pretrained word vectors, `token v1 .. vn` per line"),
    ("min_count", "minimum token count for the vocabulary"),
    ("edge_ratio", "fraction of edges used for training"),
    ("holdout", "fraction of vertices held out of training (used by unseen)"),
    ("checkpoint", "checkpoint path written by train and read by the other commands"),
    ("checkpoint_every", "also checkpoint every this many epochs (0 = only at the end)"),
    ("trace", "loss trace path written by train"),
    ("embeddings", "embedding output path"),
    ("report", "also write the report to this path"),
    ("d", "semantic embedding dimension"),
    ("d_w", "word and structure embedding dimension"),
    ("max_len", "tokens per text after padding or truncation"),
    ("kernels", "alignment kernels"),
    ("kernel_width", "alignment kernel width (odd)"),
    ("lambda", "homophily factor in [0, 1)"),
    ("alpha", "edge dropout rate"),
    ("drop_negatives", "also drop sampled non-edges at rate alpha"),
    ("pi0", "prior edge probability, or `auto` for the training sparsity"),
    ("neg_per_pos", "sampled non-edges per training edge"),
    ("batch_size", "pairs per optimizer step"),
    ("epochs", "training epochs"),
    ("lr", "Adam learning rate"),
    ("seed", "seed for splits, initialization, sampling and evaluation"),
    ("samples", "reparameterized samples per branch per pair"),
    ("deterministic", "fixed-order reductions (results never depend on threads)"),
    ("threads", "worker threads"),
    ("vertices", "`all` or a comma-separated vertex list for embed"),
    ("embed_samples", "contexts averaged per global embedding"),
    ("conditioning", "context edge states for global embeddings: unknown, train_edges or complete"),
    ("embed_part", "embedding written by embed: combined or semantic"),
    ("method", "edge score: posterior_pi or cosine_global"),
    ("eval_neg_per_pos", "sampled non-edges per test edge in evaluation"),
    ("train_ratio", "labeled fraction used to fit the classifier"),
    ("repeats", "classification repeats"),
    ("contexts", "seen vertices an unseen vertex is fitted against"),
    ("unseen_steps", "gradient steps when fitting an unseen vertex"),
    ("unseen_lr", "learning rate when fitting an unseen vertex"),
    ("out_dir", "output directory for synth"),
    ("synth_n", "synthetic vertices"),
    ("synth_d", "synthetic code dimension"),
    ("synth_d_w", "synthetic word vector dimension"),
    ("synth_lambda", "synthetic homophily strength (0 = edges ignore codes)"),
    ("synth_sparsity", "synthetic edge density"),
    ("synth_vocab", "synthetic vocabulary size"),
    ("synth_max_len", "synthetic maximum text length"),
    ("synth_classes", "synthetic classes"),
    ("synth_noise", "spread of codes around class centers"),
    ("synth_kappa", "edge logit scale"),
    ("synth_beta", "token logit scale"),
    ("dims", "gradcheck model size: tiny or config"),
    ("gradcheck_step", "finite-difference step"),
    ("gradcheck_tolerance", "largest accepted relative error"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningKind {
    Unknown,
    TrainEdges,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VertexSelection {
    All,
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub edges: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub min_count: usize,
    pub edge_ratio: f64,
    pub holdout: f64,
    pub checkpoint: PathBuf,
    pub checkpoint_every: usize,
    pub trace: PathBuf,
    pub embeddings: PathBuf,
    pub report: Option<PathBuf>,
    pub train: TrainConfig,
    pub vertices: VertexSelection,
    pub embed_samples: usize,
    pub conditioning: ConditioningKind,
    pub semantic_only: bool,
    pub method: ScoreMethod,
    pub eval_neg_per_pos: usize,
    pub train_ratio: f64,
    pub repeats: usize,
    pub contexts: usize,
    pub unseen_steps: usize,
    pub unseen_lr: f64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub tiny_dims: bool,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            edges: None,
            texts: None,
            labels: None,
            words: None,
            min_count: 1,
            edge_ratio: 0.85,
            holdout: 0.0,
            checkpoint: "vhe.ckpt".into(),
            checkpoint_every: 0,
            trace: "trace.tsv".into(),
            embeddings: "embeddings.tsv".into(),
            report: None,
            train: TrainConfig::default(),
            vertices: VertexSelection::All,
            embed_samples: 64,
            conditioning: ConditioningKind::Unknown,
            semantic_only: false,
            method: ScoreMethod::PosteriorPi,
            eval_neg_per_pos: 1,
            train_ratio: 0.5,
            repeats: 10,
            contexts: 64,
            unseen_steps: 100,
            unseen_lr: 1e-2,
            out_dir: "synth".into(),
            synth: SynthConfig::default(),
            tiny_dims: true,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Parse config-file text on top of the defaults. `#` starts a comment; a key
    /// may appear once.
    pub fn parse_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(parse_err(format!("duplicate key {key}")));
            }
            cfg.set(key, value.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "edges" => self.edges = optional_path(value),
            "texts" => self.texts = optional_path(value),
            "labels" => self.labels = optional_path(value),
            "words" => self.words = optional_path(value),
            "min_count" => self.min_count = parse(key, value)?,
            "edge_ratio" => self.edge_ratio = parse(key, value)?,
            "holdout" => self.holdout = parse(key, value)?,
            "checkpoint" => self.checkpoint = value.into(),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "trace" => self.trace = value.into(),
            "embeddings" => self.embeddings = value.into(),
            "report" => self.report = optional_path(value),
            "d" => t.d = parse(key, value)?,
            "d_w" => t.d_w = parse(key, value)?,
            "max_len" => t.max_len = parse(key, value)?,
            "kernels" => t.kernels = parse(key, value)?,
            "kernel_width" => t.kernel_width = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "drop_negatives" => t.drop_negatives = parse_bool(key, value)?,
            "pi0" => t.pi0 = if value == "auto" { None } else { Some(parse(key, value)?) },
            "neg_per_pos" => t.neg_per_pos = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                s.seed = t.seed;
            }
            "samples" => t.samples = parse(key, value)?,
            "deterministic" => t.deterministic = parse_bool(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "vertices" => {
                self.vertices = if value == "all" {
                    VertexSelection::All
                } else {
                    VertexSelection::List(
                        value
                            .split(',')
                            .map(|v| parse(key, v.trim()))
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
            }
            "embed_samples" => self.embed_samples = parse(key, value)?,
            "conditioning" => {
                self.conditioning = match value {
                    "unknown" => ConditioningKind::Unknown,
                    "train_edges" => ConditioningKind::TrainEdges,
                    "complete" => ConditioningKind::Complete,
                    _ => return Err(Error::Config(format!("conditioning: unknown value {value:?}"))),
                }
            }
            "embed_part" => {
                self.semantic_only = match value {
                    "combined" => false,
                    "semantic" => true,
                    _ => return Err(Error::Config(format!("embed_part: unknown value {value:?}"))),
                }
            }
            "method" => self.method = value.parse()?,
            "eval_neg_per_pos" => self.eval_neg_per_pos = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "contexts" => self.contexts = parse(key, value)?,
            "unseen_steps" => self.unseen_steps = parse(key, value)?,
            "unseen_lr" => self.unseen_lr = parse(key, value)?,
            "out_dir" => self.out_dir = value.into(),
            "synth_n" => s.n = parse(key, value)?,
            "synth_d" => s.d = parse(key, value)?,
            "synth_d_w" => s.d_w = parse(key, value)?,
            "synth_lambda" => s.lambda = parse(key, value)?,
            "synth_sparsity" => s.sparsity = parse(key, value)?,
            "synth_vocab" => s.vocab_size = parse(key, value)?,
            "synth_max_len" => s.max_len = parse(key, value)?,
            "synth_classes" => s.classes = parse(key, value)?,
            "synth_noise" => s.code_noise = parse(key, value)?,
            "synth_kappa" => s.kappa = parse(key, value)?,
            "synth_beta" => s.beta = parse(key, value)?,
            "dims" => {
                self.tiny_dims = match value {
                    "tiny" => true,
                    "config" => false,
                    _ => return Err(Error::Config(format!("dims: expected tiny or config, got {value:?}"))),
                }
            }
            "gradcheck_step" => self.gradcheck_step = parse(key, value)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = &self.synth;
        Some(match key {
            "edges" => show_path(&self.edges),
            "texts" => show_path(&self.texts),
            "labels" => show_path(&self.labels),
            "words" => show_path(&self.words),
            "min_count" => self.min_count.to_string(),
            "edge_ratio" => self.edge_ratio.to_string(),
            "holdout" => self.holdout.to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "trace" => self.trace.display().to_string(),
            "embeddings" => self.embeddings.display().to_string(),
            "report" => show_path(&self.report),
            "d" => t.d.to_string(),
            "d_w" => t.d_w.to_string(),
            "max_len" => t.max_len.to_string(),
            "kernels" => t.kernels.to_string(),
            "kernel_width" => t.kernel_width.to_string(),
            "lambda" => t.lambda.to_string(),
            "alpha" => t.alpha.to_string(),
            "drop_negatives" => t.drop_negatives.to_string(),
            "pi0" => t.pi0.map_or_else(|| "auto".to_owned(), |p| p.to_string()),
            "neg_per_pos" => t.neg_per_pos.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "seed" => t.seed.to_string(),
            "samples" => t.samples.to_string(),
            "deterministic" => t.deterministic.to_string(),
            "threads" => t.threads.to_string(),
            "vertices" => match &self.vertices {
                VertexSelection::All => "all".to_owned(),
                VertexSelection::List(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            },
            "embed_samples" => self.embed_samples.to_string(),
            "conditioning" => match self.conditioning {
                ConditioningKind::Unknown => "unknown",
                ConditioningKind::TrainEdges => "train_edges",
                ConditioningKind::Complete => "complete",
            }
            .to_owned(),
            "embed_part" => if self.semantic_only { "semantic" } else { "combined" }.to_owned(),
            "method" => self.method.to_string(),
            "eval_neg_per_pos" => self.eval_neg_per_pos.to_string(),
            "train_ratio" => self.train_ratio.to_string(),
            "repeats" => self.repeats.to_string(),
            "contexts" => self.contexts.to_string(),
            "unseen_steps" => self.unseen_steps.to_string(),
            "unseen_lr" => self.unseen_lr.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "synth_n" => s.n.to_string(),
            "synth_d" => s.d.to_string(),
            "synth_d_w" => s.d_w.to_string(),
            "synth_lambda" => s.lambda.to_string(),
            "synth_sparsity" => s.sparsity.to_string(),
            "synth_vocab" => s.vocab_size.to_string(),
            "synth_max_len" => s.max_len.to_string(),
            "synth_classes" => s.classes.to_string(),
            "synth_noise" => s.code_noise.to_string(),
            "synth_kappa" => s.kappa.to_string(),
            "synth_beta" => s.beta.to_string(),
            "dims" => if self.tiny_dims { "tiny" } else { "config" }.to_owned(),
            "gradcheck_step" => self.gradcheck_step.to_string(),
            "gradcheck_tolerance" => self.gradcheck_tolerance.to_string(),
            _ => return None,
        })
    }

    /// Range checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.edge_ratio > 0.0 && self.edge_ratio <= 1.0) {
            return bad(format!("edge_ratio {} not in (0, 1]", self.edge_ratio));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout {} not in [0, 1)", self.holdout));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad(format!("train_ratio {} not in (0, 1)", self.train_ratio));
        }
        if self.min_count == 0 || self.embed_samples == 0 || self.repeats == 0 || self.contexts == 0 {
            return bad("min_count, embed_samples, repeats and contexts must be positive".into());
        }
        if !(self.unseen_lr > 0.0 && self.gradcheck_step > 0.0 && self.gradcheck_tolerance > 0.0) {
            return bad("unseen_lr, gradcheck_step and gradcheck_tolerance must be positive".into());
        }
        Ok(())
    }
}

/// Renders the resolved configuration in the config-file format.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, _) in KEYS {
            writeln!(f, "{key} = {}", self.get(key).expect("every listed key renders"))?;
        }
        Ok(())
    }
}
