mod common;

use std::ops::ControlFlow;

use graph2tree::checkpoint;
use graph2tree::data::{parse_dataset, LoadOptions, Task};
use graph2tree::graph::GraphType;
use graph2tree::model::Graph2Tree;
use graph2tree::train::{TrainConfig, TrainState};
use graph2tree::vocab::build_vocabs;

use common::{load, toy_config};

#[test]
fn single_example_loss_falls_below_001_within_500_steps() {
    // full-width defaults; the run stops as soon as the bound is met
    let line = r#"{"id":"a","text":"alyssa went to 11 soccer games , but missed 7 . she went to 3 games last year and plans to go to 13 games next year .","target":"x = 11 + 3 + 13"}"#;
    let opts = LoadOptions {
        graph_type: GraphType::Chain,
        task: Task::Mwp,
        collapse_unary: true,
    };
    let exs = parse_dataset(line, opts).unwrap();
    let cfg = TrainConfig {
        graph_type: GraphType::Chain,
        dropout: 0.0,
        epochs: 500,
        ..Default::default()
    };
    assert_eq!(cfg.learning_rate, 0.001);
    let mut st = TrainState::new(Graph2Tree::new(cfg, build_vocabs(&exs).unwrap()).unwrap());
    let mut hit = None;
    st.train(&exs, None, |_, s| {
        let loss = s.model.loss(&exs[0]).unwrap();
        if loss < 0.01 {
            hit = Some(s.adam.t);
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert!(hit.is_some_and(|t| t <= 500), "loss never fell below 0.01");
}

#[test]
fn one_metric_row_per_requested_epoch() {
    let train = load("toy_train.jsonl", GraphType::Chain);
    let dev = load("toy_dev.jsonl", GraphType::Chain);
    let cfg = TrainConfig {
        embed_dim: 8,
        hidden_dim: 8,
        decoder_embed_dim: 8,
        decoder_hidden_dim: 8,
        graph_type: GraphType::Chain,
        epochs: 4,
        ..toy_config()
    };
    let mut st = TrainState::new(Graph2Tree::new(cfg, build_vocabs(&train).unwrap()).unwrap());
    let reports = st.train(&train, Some(&dev), |_, _| ControlFlow::Continue(())).unwrap();
    assert_eq!(reports.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(reports.iter().all(|r| r.dev_exact_match.is_some() && r.mean_loss.is_finite()));
    let best = st.best.as_ref().unwrap();
    let top = reports.iter().map(|r| r.dev_exact_match.unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(best.dev_exact_match, top);
    // earliest epoch wins ties
    assert_eq!(reports.iter().position(|r| r.dev_exact_match == Some(top)).unwrap() + 1, best.epoch);
}

#[test]
fn attention_none_has_fewer_parameters() {
    let train = load("toy_train.jsonl", GraphType::Constituency);
    let v = build_vocabs(&train).unwrap();
    let count = |attention: &str| {
        let cfg = TrainConfig {
            attention: attention.into(),
            ..toy_config()
        };
        Graph2Tree::new(cfg, v.clone()).unwrap().params.num_scalars()
    };
    assert!(count("none") < count("separated"));
    assert_eq!(count("uniform"), count("separated"));
}

#[test]
fn vocab_is_idempotent_and_keeps_markers() {
    let train = load("toy_train.jsonl", GraphType::Constituency);
    let twice: Vec<_> = train.iter().chain(train.iter()).cloned().collect();
    let v = build_vocabs(&train).unwrap();
    assert_eq!(build_vocabs(&twice).unwrap(), v);
    for m in ["n1", "n2", "n3"] {
        assert!(v.input.get(m).is_some() && v.output.get(m).is_some(), "{m}");
    }
    assert!(v.input.get("rel:NP").is_some());
    assert!(build_vocabs(&[]).is_err());
}

#[test]
fn checkpoint_file_round_trip_then_one_step() {
    let train = load("toy_train.jsonl", GraphType::Constituency);
    let cfg = TrainConfig {
        embed_dim: 8,
        hidden_dim: 8,
        decoder_embed_dim: 8,
        decoder_hidden_dim: 8,
        dropout: 0.2,
        epochs: 3,
        ..toy_config()
    };
    let fresh = || TrainState::new(Graph2Tree::new(cfg.clone(), build_vocabs(&train).unwrap()).unwrap());
    let mut straight = fresh();
    straight.train(&train, None, |_, _| ControlFlow::Continue(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut part = fresh();
    part.run_epoch(&train, None).unwrap();
    part.run_epoch(&train, None).unwrap();
    checkpoint::save(&part, &path).unwrap();
    let mut back = checkpoint::load(&path).unwrap();
    back.run_epoch(&train, None).unwrap();
    assert_eq!(back.model.params, straight.model.params);
    assert_eq!(back.adam, straight.adam);
    assert_eq!(checkpoint::to_bytes(&back), checkpoint::to_bytes(&straight));
}

#[test]
fn inference_uses_best_dev_weights() {
    let train = load("toy_train.jsonl", GraphType::Chain);
    let cfg = TrainConfig {
        embed_dim: 8,
        hidden_dim: 8,
        decoder_embed_dim: 8,
        decoder_hidden_dim: 8,
        graph_type: GraphType::Chain,
        epochs: 3,
        ..toy_config()
    };
    let mut st = TrainState::new(Graph2Tree::new(cfg, build_vocabs(&train).unwrap()).unwrap());
    st.train(&train, Some(&train[..3]), |_, _| ControlFlow::Continue(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&st, &path).unwrap();
    let m = checkpoint::load_for_inference(&path).unwrap();
    assert_eq!(m.params, st.best.unwrap().params);
}
