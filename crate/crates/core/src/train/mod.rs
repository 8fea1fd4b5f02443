//! Pretraining loop, configuration, checkpoints and downstream evaluation.

mod checkpoint;
mod config;
mod eval;
mod model;
mod optim;
mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MANIFEST};
pub use config::{
    format_layers, parse_layers, synth_config_from, FinetuneConfig, KeyValues, ProbeConfig, TrainConfig,
};
pub use eval::{
    embed_dataset, ensemble_streams, finetune, knn_evaluate, knn_from_embeddings, knn_predict, linear_probe,
    softmax_rows, stratified_subset, train_linear, EvalReport, LinearClassifier,
};
pub use model::{make_views, named_grads, plain_input, Objective, SkeAttn, Views};
pub use optim::Sgd;
pub use pretrain::{
    loss_csv, pretrain, write_logs, PretrainOutcome, Probe, StepRecord, TrainState, Trainer, LOSS_CSV_HEADER,
};
