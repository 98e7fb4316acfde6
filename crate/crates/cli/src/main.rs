use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use graph2tree::checkpoint;
use graph2tree::data::{load_dataset, prepare_source, LoadOptions, Task};
use graph2tree::eval::{unmask, MetricSummary, SOLUTION_CHECKER};
use graph2tree::gradcheck;
use graph2tree::graph::{GraphType, NodeKind};
use graph2tree::model::Graph2Tree;
use graph2tree::train::{evaluate, TrainConfig, TrainState};
use graph2tree::vocab::build_vocabs;

const SEED_ENV: &str = "G2T_SEED";

#[derive(Parser)]
#[command(name = "g2t", version, about = "Graph-to-tree semantic parser and math word problem solver")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["dependency", "constituency", "chain"])]
    graph: Option<String>,
    #[arg(long, global = true, value_parser = ["sp", "mwp"])]
    task: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Random seed; the G2T_SEED environment variable takes precedence.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print graph, tree and vocabulary statistics.
    Preprocess {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Train from a configuration, writing a checkpoint after every epoch.
    Train {
        #[arg(long, value_name = "PATH")]
        train: PathBuf,
        #[arg(long, value_name = "PATH")]
        dev: Option<PathBuf>,
        /// Continue from the checkpoint file if it exists.
        #[arg(long)]
        resume: bool,
        /// Configuration override, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a dataset with a checkpoint; one JSON row per example.
    Eval {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Decode one input and print the linearized tree.
    Predict {
        /// Whitespace-tokenized source text.
        #[arg(long)]
        input: String,
        /// Bracketed constituency parse of the input.
        #[arg(long)]
        constituency: Option<String>,
        /// CoNLL-U file with the dependency parse of the input.
        #[arg(long, value_name = "PATH")]
        conllu: Option<PathBuf>,
        /// Replace number markers by the literals of the input.
        #[arg(long)]
        unmask: bool,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

impl Common {
    fn seed(&self) -> Result<Option<u64>> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map(Some).with_context(|| format!("{SEED_ENV}=`{v}` is not an integer")),
            Err(_) => Ok(self.seed),
        }
    }

    fn graph_type(&self) -> Result<Option<GraphType>> {
        self.graph.as_deref().map(|g| g.parse().map_err(|e| anyhow!("{e}"))).transpose()
    }

    fn task(&self) -> Result<Option<Task>> {
        self.task.as_deref().map(|t| t.parse().map_err(|e| anyhow!("{e}"))).transpose()
    }

    /// Config file (or defaults) with the flag overrides applied.
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                TrainConfig::parse_str(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(g) = self.graph_type()? {
            cfg.graph_type = g;
        }
        if let Some(t) = self.task()? {
            cfg.task = t;
        }
        if let Some(s) = self.seed()? {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| anyhow!("--checkpoint is required"))
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    /// Loads a checkpoint for inference and rejects graph or task flags
    /// that contradict what it was trained with.
    fn model(&self) -> Result<Graph2Tree> {
        let path = self.checkpoint()?;
        let model = checkpoint::load_for_inference(path).with_context(|| format!("cannot load {}", path.display()))?;
        if let Some(g) = self.graph_type()? {
            if g != model.config.graph_type {
                bail!("checkpoint was trained on {} graphs, not {g}", model.config.graph_type);
            }
        }
        if let Some(t) = self.task()? {
            if t != model.config.task {
                bail!("checkpoint was trained for task {}, not {t}", model.config.task);
            }
        }
        Ok(model)
    }
}

fn load_options(cfg: &TrainConfig) -> LoadOptions {
    LoadOptions {
        graph_type: cfg.graph_type,
        task: cfg.task,
        collapse_unary: cfg.collapse_unary,
    }
}

fn load(path: &Path, opts: LoadOptions) -> Result<Vec<graph2tree::data::Example>> {
    load_dataset(path, opts).with_context(|| format!("{}", path.display()))
}

fn preprocess(common: &Common, data: &Path) -> Result<()> {
    let cfg = common.config()?;
    let examples = load(data, load_options(&cfg))?;
    let vocabs = build_vocabs(&examples).map_err(|e| anyhow!(e))?;
    let n = examples.len() as f64;
    let count = |kind| examples.iter().map(|e| e.graph.nodes().iter().filter(|x| x.kind == kind).count()).collect::<Vec<_>>();
    let words = count(NodeKind::Word);
    let relations = count(NodeKind::Relation);
    let nodes: Vec<usize> = examples.iter().map(|e| e.graph.num_nodes()).collect();
    let tree_nodes: Vec<usize> = examples.iter().map(|e| e.tree.num_nodes()).collect();
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / n;
    let max = |v: &[usize]| v.iter().copied().max().unwrap_or(0);
    let stats = json!({
        "examples": examples.len(),
        "graph_type": cfg.graph_type.as_str(),
        "task": cfg.task.as_str(),
        "word_nodes": {"total": words.iter().sum::<usize>(), "mean": mean(&words)},
        "relation_nodes": {"total": relations.iter().sum::<usize>(), "mean": mean(&relations)},
        "graph_nodes": {"mean": mean(&nodes), "max": max(&nodes)},
        "edges": examples.iter().map(|e| e.graph.num_edges()).sum::<usize>(),
        "tree_nodes": {"mean": mean(&tree_nodes), "max": max(&tree_nodes)},
        "tree_height_max": examples.iter().map(|e| e.tree.height()).max().unwrap_or(0),
        "input_vocab": vocabs.input.len(),
        "output_vocab": vocabs.output.len(),
    });
    let mut out = common.output()?;
    writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
    out.flush()?;
    Ok(())
}

fn train(common: &Common, train_path: &Path, dev_path: Option<&Path>, resume: bool, overrides: &[String]) -> Result<()> {
    let mut cfg = common.config()?;
    for kv in overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| anyhow!("--set {kv}: {e}"))?;
    }
    cfg.validate().map_err(|e| anyhow!(e))?;
    let ckpt = common.checkpoint()?;
    let opts = load_options(&cfg);
    let train = load(train_path, opts)?;
    let dev = dev_path.map(|p| load(p, opts)).transpose()?;

    let mut state = if resume && ckpt.exists() {
        let mut st = checkpoint::load(ckpt).with_context(|| format!("cannot load {}", ckpt.display()))?;
        let mut stored = st.model.config.clone();
        stored.epochs = cfg.epochs;
        if stored != cfg {
            bail!("configuration differs from the one stored in {}", ckpt.display());
        }
        st.model.config.epochs = cfg.epochs;
        eprintln!("resuming after epoch {}", st.epochs_done);
        st
    } else {
        let vocabs = build_vocabs(&train).map_err(|e| anyhow!(e))?;
        let glove = cfg.glove.clone();
        let mut model = Graph2Tree::new(cfg, vocabs).map_err(|e| anyhow!(e))?;
        if let Some(g) = glove {
            let found = model.load_glove(Path::new(&g)).map_err(|e| anyhow!(e))?;
            eprintln!("glove: {found} of {} input tokens found", model.vocabs.input.len());
        }
        TrainState::new(model)
    };

    let mut out = common.output()?;
    let mut failure: Option<anyhow::Error> = None;
    state.train(&train, dev.as_deref(), |r, st| {
        let row = json!({"epoch": r.epoch, "loss": r.mean_loss, "dev_exact_match": r.dev_exact_match});
        let step = writeln!(out, "{row}")
            .map_err(anyhow::Error::from)
            .and_then(|_| checkpoint::save(st, ckpt).with_context(|| format!("cannot write {}", ckpt.display())));
        match step {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    // covers a resume with nothing left to do
    checkpoint::save(&state, ckpt)?;
    out.flush()?;
    if let Some(b) = &state.best {
        eprintln!("best dev exact match {:.4} at epoch {}", b.dev_exact_match, b.epoch);
    }
    Ok(())
}

fn eval(common: &Common, data: &Path) -> Result<()> {
    let model = common.model()?;
    let examples = load(data, load_options(&model.config))?;
    let rows = evaluate(&model, &examples)?;
    let mut out = common.output()?;
    for r in &rows {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()?;
    let s = MetricSummary::from_rows(&rows);
    eprintln!("exact match: {}/{} = {:.4}", s.exact_match, s.examples, s.exact_match_accuracy());
    if let Some(acc) = s.solution_accuracy() {
        eprintln!("solution accuracy ({SOLUTION_CHECKER}): {}/{} = {acc:.4}", s.solution_correct, s.solution_scored);
    }
    Ok(())
}

fn predict(common: &Common, input: &str, constituency: Option<&str>, conllu: Option<&Path>, unmask_numbers: bool) -> Result<()> {
    let model = common.model()?;
    let conllu = conllu
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())))
        .transpose()?;
    let tokens: Vec<String> = input.split_whitespace().map(String::from).collect();
    let src = prepare_source(&tokens, conllu.as_deref(), constituency, load_options(&model.config)).map_err(|e| anyhow!(e))?;
    let tree = model.predict(&src.graph)?;
    let mut text = tree.linearize()?;
    if unmask_numbers {
        let toks: Vec<&str> = text.split(' ').collect();
        text = unmask(&toks, &src.numbers)?.join(" ");
    }
    let mut out = common.output()?;
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn gradcheck(common: &Common) -> Result<bool> {
    let seed = common.seed()?.unwrap_or(1);
    let reports = gradcheck::run_all(seed)?;
    let mut out = common.output()?;
    let mut ok = true;
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{verdict:4} {:16} max rel err {:.3e} over {} entries", r.name, r.max_rel_error, r.checked)?;
        ok &= r.passed();
    }
    writeln!(out, "tolerance {:e}, step {:e}", gradcheck::TOLERANCE, gradcheck::EPS)?;
    out.flush()?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    match &cli.command {
        Command::Preprocess { data } => preprocess(c, data)?,
        Command::Train {
            train: t,
            dev,
            resume,
            overrides,
        } => train(c, t, dev.as_deref(), *resume, overrides)?,
        Command::Eval { data } => eval(c, data)?,
        Command::Predict {
            input,
            constituency,
            conllu,
            unmask,
        } => predict(c, input, constituency.as_deref(), conllu.as_deref(), *unmask)?,
        Command::Gradcheck => return gradcheck(c),
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
