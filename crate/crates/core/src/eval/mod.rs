//! Link-prediction and classification protocols plus a synthetic network generator.

pub mod auc;
pub mod classify;
pub mod linkpred;
pub mod synth;
pub mod unseen;

pub use auc::{auc, auc_from_scores, auc_std_error, PairLabel, ScoredPair};
pub use classify::{classify_vertices, ClassifierOptions, ClassifyReport, LinearClassifier};
pub use linkpred::{cosine, link_prediction_eval, CosineScorer, LinkPredOptions, LinkPredReport, PairScorer, PosteriorPiScorer, QuantileAuc, ScoreMethod};
pub use synth::{synth_network, SynthConfig, SynthNetwork};
pub use unseen::{hold_out_vertices, unseen_link_prediction, UnseenEvalOptions, UnseenReport, VertexHoldout};
