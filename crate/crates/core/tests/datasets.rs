mod common;

use graph2tree::data::{load_dataset, parse_dataset, DataError, LoadOptions, Task};
use graph2tree::eval::{exact_match, solution_accuracy, MetricSummary};
use graph2tree::graph::{GraphType, NodeKind};
use graph2tree::train::evaluate;
use graph2tree::tree::parse_to_tree;

use common::{fixture, load};

const MWP_CHAIN: LoadOptions = LoadOptions {
    graph_type: GraphType::Chain,
    task: Task::Mwp,
    collapse_unary: true,
};

#[test]
fn equation_target_loads_into_two_node_tree() {
    let exs = parse_dataset(r#"{"id":"r","text":"twice a number increased by 2 is 1 .","target":"( 2.0 * x ) + 2 = 1"}"#, MWP_CHAIN).unwrap();
    let t = &exs[0].tree;
    assert_eq!(t.num_nodes(), 2);
    assert_eq!(t.root.tokens, ["<N>", "+", "n1", "=", "n2"]);
    assert_eq!(t.root.children[0].tokens, ["2.0", "*", "x"]);
    // 2 * x + 2 = 1
    assert_eq!(exs[0].answer, Some(-0.5));
}

#[test]
fn empty_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.jsonl");
    std::fs::write(&p, "\n\n").unwrap();
    assert!(matches!(load_dataset(&p, MWP_CHAIN), Err(DataError::Empty)));
    assert!(matches!(load_dataset(&dir.path().join("missing"), MWP_CHAIN), Err(DataError::Io { .. })));
}

#[test]
fn every_line_error_is_reported() {
    let text = concat!(
        r#"{"id":"a","text":"3 apples","target":"x = 3"}"#,
        "\n",
        "not json\n",
        r#"{"id":"c","text":"4 pens","target":"( x"}"#,
        "\n",
        r#"{"id":"d","text":"4 pens","target":"x = 4","extra":1}"#,
    );
    match parse_dataset(text, MWP_CHAIN) {
        Err(DataError::Lines(errs)) => assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3, 4]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn chain_ignores_parses_and_loading_is_deterministic() {
    let a = load("toy_train.jsonl", GraphType::Chain);
    let b = load("toy_train.jsonl", GraphType::Chain);
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|e| e.id.as_str()).collect::<Vec<_>>()[..3], ["toy-01", "toy-02", "toy-03"]);
    assert!(a.iter().all(|e| e.graph.relation_ids().is_empty()));
}

#[test]
fn toy_corpus_loads_under_every_graph_type() {
    for gt in [GraphType::Dependency, GraphType::Constituency, GraphType::Chain] {
        for name in ["toy_train.jsonl", "toy_dev.jsonl"] {
            let exs = load(name, gt);
            for e in &exs {
                assert!(e.answer.is_some(), "{} has no derivable answer", e.id);
                assert!(e.graph.is_weakly_connected());
                let words = e.graph.nodes().iter().filter(|n| n.kind == NodeKind::Word).count();
                assert_eq!(words, e.tokens.len());
                if gt == GraphType::Dependency {
                    assert_eq!(e.graph.num_nodes(), 2 * words - 1);
                }
            }
        }
    }
}

#[test]
fn sample_problem_rows_score_as_published() {
    let text = std::fs::read_to_string(fixture("sample_problems.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let row = |i: usize| &rows[i - 1];
    let tree = |v: &serde_json::Value| parse_to_tree(v.as_str().unwrap()).unwrap();
    // identical strings
    assert!(exact_match(&tree(&row(2)["prediction"]), &tree(&row(2)["gold"])));
    // solution-equivalent but spelled differently
    assert!(!exact_match(&tree(&row(1)["prediction"]), &tree(&row(1)["gold"])));
    let map = graph2tree::eval::NumberMap::from_pairs(vec![("n1".into(), "3".into()), ("n2".into(), "7".into())]);
    // 3 % of 7
    assert!(solution_accuracy(&tree(&row(1)["prediction"]), &map, 0.21));
    // lawyer: 3 * 7 = 21 vs 7 / 3
    assert!(!solution_accuracy(&tree(&row(10)["prediction"]), &map, 21.0));
    assert!(!solution_accuracy(&parse_to_tree("x = n1 / 0").unwrap(), &map, 0.0));
    assert!(!solution_accuracy(&parse_to_tree("x = n9").unwrap(), &map, 0.0));
}

#[test]
fn evaluate_reports_one_row_per_example() {
    let exs = load("toy_dev.jsonl", GraphType::Chain);
    let cfg = graph2tree::train::TrainConfig {
        embed_dim: 8,
        hidden_dim: 8,
        decoder_embed_dim: 8,
        decoder_hidden_dim: 8,
        graph_type: GraphType::Chain,
        ..Default::default()
    };
    let m = graph2tree::model::Graph2Tree::new(cfg, graph2tree::vocab::build_vocabs(&exs).unwrap()).unwrap();
    let rows = evaluate(&m, &exs).unwrap();
    assert_eq!(rows.len(), exs.len());
    assert!(rows.iter().all(|r| r.solution_correct.is_some()));
    let s = MetricSummary::from_rows(&rows);
    assert_eq!(s.examples, 10);
    let json = serde_json::to_value(&rows[0]).unwrap();
    for k in ["id", "exact_match", "solution_correct", "prediction", "gold"] {
        assert!(json.get(k).is_some(), "{k}");
    }
}
