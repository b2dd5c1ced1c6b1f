use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::config::{ConditioningKind, RunConfig, VertexSelection};
use crate::autodiff::{GradCheckOptions, ParameterStore};
use crate::data::{load_network, split_edges, EdgeSplit, LoadedNetwork, Network};
use crate::error::{Error, Result};
use crate::eval::{
    classify_vertices, hold_out_vertices, link_prediction_eval, synth_network, unseen_link_prediction, ClassifierOptions,
    CosineScorer, LinkPredOptions, PosteriorPiScorer, ScoreMethod, UnseenEvalOptions, VertexHoldout,
};
use crate::gradsuite::{gradient_suite, tiny_dims};
use crate::inference::{embed_all, embed_vertices, write_embeddings, Conditioning, UnseenOptions, VertexEmbedding};
use crate::model::{init_params, load_pretrained, Model, ModelDims};
use crate::trainer::{train, TrainOptions};

pub(super) fn dispatch(name: &str, cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    match name {
        "train" => command_train(cfg, out),
        "embed" => command_embed(cfg, out),
        "linkpred" => command_linkpred(cfg, out),
        "classify" => command_classify(cfg, out),
        "unseen" => command_unseen(cfg, out),
        "synth" => command_synth(cfg, out),
        "gradcheck" => command_gradcheck(cfg, out),
        _ => Err(Error::Config(format!("unknown command {name}"))),
    }
}

/// Loaded data plus the training view: the seen subgraph when vertices are held out.
struct Prepared {
    data: LoadedNetwork,
    holdout: Option<VertexHoldout>,
    split: EdgeSplit,
}

impl Prepared {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone().ok_or_else(|| Error::Config(format!("`{key}` is required")))
        };
        let edges = need(&cfg.edges, "edges")?;
        let texts = need(&cfg.texts, "texts")?;
        let data = load_network(&edges, &texts, cfg.labels.as_deref(), cfg.train.max_len, cfg.min_count)?;
        let holdout = if cfg.holdout > 0.0 {
            Some(hold_out_vertices(&data.network, cfg.holdout, cfg.train.seed)?)
        } else {
            None
        };
        let view = holdout.as_ref().map_or(&data.network, |h| &h.seen_network);
        let split = split_edges(view, cfg.edge_ratio, cfg.train.seed)?;
        Ok(Prepared { data, holdout, split })
    }

    fn network(&self) -> &Network {
        self.holdout.as_ref().map_or(&self.data.network, |h| &h.seen_network)
    }

    fn dims(&self, cfg: &RunConfig) -> ModelDims {
        cfg.train.dims(self.data.vocab.len(), self.network().n_vertices())
    }

    fn model(&self, cfg: &RunConfig) -> Result<Model> {
        let store = ParameterStore::load(&cfg.checkpoint)?;
        let dims = self.dims(cfg);
        dims.check_store(&store).map_err(|e| match e {
            Error::DimensionMismatch(m) => Error::DimensionMismatch(format!("{}: {m}", cfg.checkpoint.display())),
            other => other,
        })?;
        Model::new(store, dims, cfg.train.lambda, cfg.train.resolve_pi0(&self.split))
    }

    fn conditioning(&self, cfg: &RunConfig) -> Conditioning<'_> {
        match cfg.conditioning {
            ConditioningKind::Unknown => Conditioning::Unknown,
            ConditioningKind::TrainEdges => Conditioning::TrainEdges(&self.split),
            ConditioningKind::Complete => Conditioning::Complete(&self.split),
        }
    }

    fn global_embeddings(&self, cfg: &RunConfig, model: &Model) -> Result<Vec<VertexEmbedding>> {
        let t = &cfg.train;
        embed_all(model, self.network(), cfg.embed_samples, self.conditioning(cfg), t.seed, t.threads)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Print `report` and copy it to the `report` path when one is set.
fn emit(cfg: &RunConfig, out: &mut dyn Write, report: &str) -> Result<()> {
    out.write_all(report.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(p) = &cfg.report {
        let mut f = create(p)?;
        f.write_all(report.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn command_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::load(cfg)?;
    let network = prep.network();
    let mut init = init_params(&prep.dims(cfg), cfg.train.seed)?;
    let mut pretrained = 0;
    if let Some(words) = &cfg.words {
        pretrained = load_pretrained(&mut init, &prep.data.vocab, words)?;
    }
    // the trainer appends; start each run from an empty trace
    create(&cfg.trace)?;
    let options = TrainOptions {
        init: Some(init),
        trace_path: Some(cfg.trace.clone()),
        checkpoint_path: Some(cfg.checkpoint.clone()),
        checkpoint_every: cfg.checkpoint_every,
    };
    let result = train(network, &prep.split, prep.data.vocab.len(), &cfg.train, options)?;
    let losses = result.epoch_losses();
    let mut report = String::new();
    report += &format!("vertices\t{}\t0\n", network.n_vertices());
    report += &format!("train_edges\t{}\t0\n", prep.split.train_pos.len());
    report += &format!("test_edges\t{}\t0\n", prep.split.test_pos.len());
    report += &format!("vocabulary\t{}\t0\n", prep.data.vocab.len());
    report += &format!("pretrained_words\t{pretrained}\t0\n");
    report += &format!("steps\t{}\t0\n", result.trace.len());
    if let Some(last) = losses.last() {
        report += &format!("final_epoch_loss\t{last}\t0\n");
    }
    emit(cfg, out, &report)?;
    Ok(0)
}

fn command_embed(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::load(cfg)?;
    let model = prep.model(cfg)?;
    let vertices: Vec<usize> = match &cfg.vertices {
        VertexSelection::All => (0..prep.network().n_vertices()).collect(),
        VertexSelection::List(v) => v.clone(),
    };
    let t = &cfg.train;
    let emb = embed_vertices(&model, prep.network(), &vertices, cfg.embed_samples, prep.conditioning(cfg), t.seed, t.threads)?;
    let rows = vertices.iter().zip(&emb).map(|(&v, e)| {
        let values = if cfg.semantic_only { e.semantic.clone() } else { e.combined() };
        let id = prep.holdout.as_ref().map_or(v, |h| h.seen[v]);
        (id, values)
    });
    let mut f = create(&cfg.embeddings)?;
    write_embeddings(&mut f, rows)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&cfg.embeddings, e))?;
    emit(cfg, out, &format!("embedded\t{}\t0\n", vertices.len()))?;
    Ok(0)
}

fn command_linkpred(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::load(cfg)?;
    let model = prep.model(cfg)?;
    let opts = LinkPredOptions {
        neg_per_pos: cfg.eval_neg_per_pos,
        seed: cfg.train.seed,
        threads: cfg.train.threads,
    };
    let report = match cfg.method {
        ScoreMethod::PosteriorPi => {
            let scorer = PosteriorPiScorer {
                model: &model,
                network: prep.network(),
            };
            link_prediction_eval(&scorer, prep.network(), &prep.split, &opts)?
        }
        ScoreMethod::CosineGlobal => {
            let rows: Vec<Vec<f64>> = prep.global_embeddings(cfg, &model)?.iter().map(VertexEmbedding::combined).collect();
            link_prediction_eval(&CosineScorer { embeddings: &rows }, prep.network(), &prep.split, &opts)?
        }
    };
    emit(cfg, out, &report.to_string())?;
    Ok(0)
}

fn command_classify(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::load(cfg)?;
    if !prep.network().has_labels() {
        return Err(Error::Config("classify needs `labels`".into()));
    }
    let model = prep.model(cfg)?;
    let rows: Vec<Vec<f64>> = prep
        .global_embeddings(cfg, &model)?
        .iter()
        .map(|e| if cfg.semantic_only { e.semantic.clone() } else { e.combined() })
        .collect();
    let report = classify_vertices(
        &rows,
        prep.network().labels(),
        cfg.train_ratio,
        cfg.repeats,
        cfg.train.seed,
        &ClassifierOptions::default(),
    )?;
    emit(cfg, out, &report.to_string())?;
    Ok(0)
}

fn command_unseen(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::load(cfg)?;
    let holdout = prep
        .holdout
        .as_ref()
        .ok_or_else(|| Error::Config("unseen needs `holdout` > 0 (and a checkpoint trained with it)".into()))?;
    let model = prep.model(cfg)?;
    let t = &cfg.train;
    let opts = UnseenEvalOptions {
        contexts: cfg.contexts,
        neg_per_pos: cfg.eval_neg_per_pos,
        method: cfg.method,
        global_samples: cfg.embed_samples,
        fit: UnseenOptions {
            steps: cfg.unseen_steps,
            lr: cfg.unseen_lr,
            seed: t.seed,
        },
        seed: t.seed,
        threads: t.threads,
    };
    let report = unseen_link_prediction(&model, &prep.data.network, holdout, &opts)?;
    let mut f = create(&cfg.embeddings)?;
    let rows = report.embeddings.iter().map(|(v, e)| {
        let values = if cfg.semantic_only { e.semantic.clone() } else { e.combined() };
        (*v, values)
    });
    write_embeddings(&mut f, rows)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&cfg.embeddings, e))?;
    emit(cfg, out, &report.to_string())?;
    Ok(0)
}

fn command_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let s = synth_network(&cfg.synth)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    s.write_files(&cfg.out_dir)?;
    let mut report = String::new();
    report += &format!("vertices\t{}\t0\n", s.network.n_vertices());
    report += &format!("edges\t{}\t0\n", s.network.edges().len());
    report += &format!("sparsity\t{}\t0\n", s.network.sparsity());
    report += &format!("vocabulary\t{}\t0\n", s.vocab.len());
    emit(cfg, out, &report)?;
    Ok(0)
}

fn command_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let dims = if cfg.tiny_dims {
        tiny_dims()
    } else {
        cfg.train.dims(8, 4)
    };
    let opts = GradCheckOptions {
        step: cfg.gradcheck_step,
        tolerance: cfg.gradcheck_tolerance,
    };
    let report = gradient_suite(&dims, cfg.train.seed, opts)?;
    let mut text = report.to_string();
    text += &format!("max_rel_error\t{:.3e}\t0\n", report.max_rel_error());
    text += &format!("result\t{}\t0\n", if report.passed() { "pass" } else { "FAIL" });
    emit(cfg, out, &text)?;
    Ok(if report.passed() { 0 } else { 1 })
}
