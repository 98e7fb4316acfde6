#![allow(dead_code)]

use std::path::{Path, PathBuf};

use graph2tree::data::{load_dataset, Example, LoadOptions, Task};
use graph2tree::graph::GraphType;
use graph2tree::train::TrainConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str, graph_type: GraphType) -> Vec<Example> {
    let opts = LoadOptions {
        graph_type,
        task: Task::Mwp,
        collapse_unary: true,
    };
    load_dataset(&fixture(name), opts).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Desk-scale settings for the toy corpus: 64-wide layers, batches of 5,
/// lr 0.001, two hops, no dropout, seed 17.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        embed_dim: 64,
        hidden_dim: 64,
        decoder_embed_dim: 64,
        decoder_hidden_dim: 64,
        hops: 2,
        dropout: 0.0,
        learning_rate: 0.001,
        batch_size: 5,
        epochs: 300,
        seed: 17,
        graph_type: GraphType::Constituency,
        task: Task::Mwp,
        ..Default::default()
    }
}
