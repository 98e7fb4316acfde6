use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 10] = [
    "--set", "embed_dim=16", "--set", "hidden_dim=16", "--set", "decoder_embed_dim=16", "--set", "decoder_hidden_dim=16", "--set", "dropout=0",
];

const MEDIUM: [&str; 10] = [
    "--set", "embed_dim=64", "--set", "hidden_dim=64", "--set", "decoder_embed_dim=64", "--set", "decoder_hidden_dim=64", "--set", "dropout=0",
];

fn g2t(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2t"))
        .args(args)
        .env_remove("G2T_SEED")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ALYSSA: &str = "alyssa went to 11 soccer games this year , but missed 7 . she went to 3 games last year and plans to go to 13 games next year . how many soccer games will alyssa go to in all ?";

#[test]
fn gradcheck_passes_on_fresh_seed() {
    let o = g2t(&["gradcheck", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("graph2tree_loss"));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = g2t(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(g2t(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(g2t(&["train", "--graph", "tree"]).status.code(), Some(2));
}

#[test]
fn dependency_graph_without_conllu_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let text = std::fs::read_to_string(fixture("toy_train.jsonl")).unwrap();
    let mut lines: Vec<Value> = text.lines().take(3).map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[1].as_object_mut().unwrap().remove("conllu");
    std::fs::write(&data, lines.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = g2t(&["train", "--graph", "dependency", "--train", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("conllu"));
    assert!(!ckpt.exists());
}

#[test]
fn missing_file_is_a_runtime_error() {
    let o = g2t(&["preprocess", "--data", "/nonexistent/x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preprocess_statistics_are_repeatable() {
    let data = fixture("toy_train.jsonl");
    let run = || g2t(&["preprocess", "--data", data.to_str().unwrap()]);
    let (a, b) = (run(), run());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let stats: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(stats["examples"], 20);
    assert_eq!(stats["graph_type"], "constituency");
    let dep = g2t(&["preprocess", "--graph", "dependency", "--data", data.to_str().unwrap()]);
    let dep: Value = serde_json::from_slice(&dep.stdout).unwrap();
    // one relation node per non-root arc: every token but the root
    assert_eq!(dep["relation_nodes"]["total"].as_u64().unwrap() + 20, dep["word_nodes"]["total"].as_u64().unwrap());
}

#[test]
fn overfit_checkpoint_predicts_the_alyssa_equation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("alyssa.jsonl");
    let rec = serde_json::json!({"id": "alyssa", "text": ALYSSA, "target": "x = 11 + 3 + 13"});
    std::fs::write(&data, format!("{rec}\n")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--graph", "chain", "--train", data.to_str().unwrap(), "--dev", data.to_str().unwrap()];
    args.extend(["--checkpoint", ckpt.to_str().unwrap(), "--set", "epochs=60", "--set", "learning_rate=0.01"]);
    args.extend(MEDIUM);
    let o = g2t(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 60);

    let masked = "alyssa went to n1 soccer games this year , but missed n2 . she went to n3 games last year and plans to go to n4 games next year . how many soccer games will alyssa go to in all ?";
    let o = g2t(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--input", masked]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "x = n1 + n3 + n4");

    let o = g2t(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--input", ALYSSA, "--unmask"]);
    assert_eq!(stdout(&o).trim(), "x = 11 + 3 + 13");

    let o = g2t(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--graph", "dependency", "--input", ALYSSA]);
    assert_eq!(o.status.code(), Some(1));

    let report = dir.path().join("rows.jsonl");
    let o = g2t(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row: Value = serde_json::from_str(std::fs::read_to_string(&report).unwrap().trim()).unwrap();
    assert_eq!(row["exact_match"], true);
    assert_eq!(row["solution_correct"], true);
    assert_eq!(row["gold"], "x = n1 + n3 + n4");
    assert!(stderr(&o).contains("affine two-point checker"));
}

fn train_toy(dir: &Path, name: &str, extra: &[&str], env_seed: Option<&str>) -> Vec<u8> {
    let ckpt = dir.join(name);
    let train = fixture("toy_train.jsonl");
    let mut args = vec!["train", "--train", train.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--set", "batch_size=7"];
    args.extend(SMALL);
    args.extend(extra);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_g2t"));
    cmd.args(&args).env_remove("G2T_SEED");
    if let Some(s) = env_seed {
        cmd.env("G2T_SEED", s);
    }
    let o = cmd.output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::read(ckpt).unwrap()
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let straight = train_toy(dir.path(), "a.ckpt", &["--set", "epochs=4", "--set", "dropout=0.2"], None);
    train_toy(dir.path(), "b.ckpt", &["--set", "epochs=2", "--set", "dropout=0.2"], None);
    let resumed = train_toy(dir.path(), "b.ckpt", &["--set", "epochs=4", "--set", "dropout=0.2", "--resume"], None);
    assert_eq!(straight, resumed);
}

#[test]
fn seed_environment_variable_wins() {
    let dir = tempfile::tempdir().unwrap();
    let flag = train_toy(dir.path(), "a.ckpt", &["--set", "epochs=1", "--seed", "2"], None);
    let env = train_toy(dir.path(), "b.ckpt", &["--set", "epochs=1", "--seed", "9"], Some("2"));
    let other = train_toy(dir.path(), "c.ckpt", &["--set", "epochs=1", "--seed", "9"], None);
    assert_eq!(flag, env);
    assert_ne!(flag, other);
}
