//! JSON-lines dataset records and their conversion into model examples.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{mask_numbers, mask_with, solve_linear, unmask, NumberMap};
use crate::graph::{ConstituencyParse, DependencyParse, GraphBuilderRegistry, GraphInput, GraphType, TextGraph};
use crate::tree::{parse_to_tree, OutputTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Semantic parsing: exact match only.
    Sp,
    /// Math word problems: numbers masked, solution accuracy reported.
    Mwp,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sp => "sp",
            Task::Mwp => "mwp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sp" => Ok(Task::Sp),
            "mwp" => Ok(Task::Mwp),
            other => Err(format!("unknown task `{other}` (expected sp or mwp)")),
        }
    }
}

/// One line of a dataset file. Source text is given either as `tokens` or
/// as whitespace-separated `text`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conllu: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constituency: Option<String>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<f64>,
}

impl DatasetRecord {
    pub fn source_tokens(&self) -> Result<Vec<String>, String> {
        match (&self.tokens, &self.text) {
            (Some(t), None) => Ok(t.clone()),
            (None, Some(s)) => Ok(s.split_whitespace().map(String::from).collect()),
            (Some(_), Some(_)) => Err("give either `tokens` or `text`, not both".into()),
            (None, None) => Err("missing `tokens` or `text`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Source tokens after number masking (unchanged for `sp`).
    pub tokens: Vec<String>,
    pub numbers: NumberMap,
    pub graph: TextGraph,
    pub tree: OutputTree,
    pub answer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("{}", format_lines(.0))]
    Lines(Vec<LineError>),
}

fn format_lines(errs: &[LineError]) -> String {
    let mut s = format!("{} malformed line(s):", errs.len());
    for e in errs {
        s.push_str(&format!("\n  line {}: {}", e.line, e.message));
    }
    s
}

/// Options shared by every record of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub graph_type: GraphType,
    pub task: Task,
    pub collapse_unary: bool,
}

/// Masked tokens, number map and graph of one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub tokens: Vec<String>,
    pub numbers: NumberMap,
    pub graph: TextGraph,
}

/// Builds the graph over the original tokens (the parses refer to them) and
/// then replaces its word labels by the masked tokens.
pub fn prepare_source(tokens: &[String], conllu: Option<&str>, constituency: Option<&str>, opts: LoadOptions) -> Result<Source, String> {
    if tokens.is_empty() {
        return Err("empty source".into());
    }
    let mut input = GraphInput {
        tokens: tokens.to_vec(),
        ..Default::default()
    };
    match opts.graph_type {
        GraphType::Dependency => {
            let text = conllu.ok_or("record has no `conllu` parse, required for --graph dependency")?;
            let parse = DependencyParse::from_conllu(text).map_err(|e| e.to_string())?;
            if parse.tokens != tokens {
                return Err(format!("CoNLL-U forms {:?} differ from source tokens {:?}", parse.tokens, tokens));
            }
            input.dependency = Some(parse);
        }
        GraphType::Constituency => {
            let text = constituency.ok_or("record has no `constituency` parse, required for --graph constituency")?;
            let parse = ConstituencyParse::parse(text).map_err(|e| e.to_string())?;
            if parse.leaves() != tokens.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(format!("constituency leaves {:?} differ from source tokens {:?}", parse.leaves(), tokens));
            }
            input.constituency = Some(parse);
        }
        GraphType::Chain => {}
    }
    let registry = GraphBuilderRegistry::with_collapse(opts.collapse_unary);
    let mut graph = registry
        .get(opts.graph_type.as_str())
        .and_then(|b| b.build(&input))
        .map_err(|e| e.to_string())?;
    let (masked, numbers) = match opts.task {
        Task::Sp => (tokens.to_vec(), NumberMap::new()),
        Task::Mwp => mask_numbers(tokens),
    };
    graph.relabel_words(&masked).map_err(|e| e.to_string())?;
    Ok(Source {
        tokens: masked,
        numbers,
        graph,
    })
}

/// Converts one record; for `mwp` the target is masked with the source's
/// number map.
pub fn example_from_record(rec: &DatasetRecord, opts: LoadOptions) -> Result<Example, String> {
    let tokens = rec.source_tokens()?;
    let src = prepare_source(&tokens, rec.conllu.as_deref(), rec.constituency.as_deref(), opts)?;
    let target = match opts.task {
        Task::Sp => rec.target.clone(),
        Task::Mwp => {
            let target: Vec<&str> = rec.target.split_whitespace().collect();
            mask_with(&target, &src.numbers).join(" ")
        }
    };
    let tree = parse_to_tree(&target).map_err(|e| format!("target: {e}"))?;
    let answer = match (opts.task, rec.answer) {
        (Task::Mwp, None) => gold_answer(&tree, &src.numbers),
        (_, a) => a,
    };
    Ok(Example {
        id: rec.id.clone(),
        tokens: src.tokens,
        numbers: src.numbers,
        graph: src.graph,
        tree,
        answer,
    })
}

/// Solves the gold equation when no explicit answer is recorded.
fn gold_answer(tree: &OutputTree, numbers: &NumberMap) -> Option<f64> {
    let text = tree.linearize().ok()?;
    let toks: Vec<&str> = text.split(' ').collect();
    let literal = unmask(&toks, numbers).ok()?;
    solve_linear(&literal.join(" ")).ok()
}

/// Parses JSON-lines text. Blank lines are skipped; every malformed line is
/// reported with its 1-based number.
pub fn parse_dataset(text: &str, opts: LoadOptions) -> Result<Vec<Example>, DataError> {
    let mut examples = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<DatasetRecord>(line)
            .map_err(|e| format!("invalid record: {e}"))
            .and_then(|rec| example_from_record(&rec, opts));
        match result {
            Ok(ex) => examples.push(ex),
            Err(message) => errors.push(LineError { line: i + 1, message }),
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Lines(errors));
    }
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(examples)
}

pub fn load_dataset(path: &Path, opts: LoadOptions) -> Result<Vec<Example>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, opts)
}

/// Record values as they appear in a file, for tools that only need
/// validation or statistics.
pub fn read_records(text: &str) -> Result<Vec<DatasetRecord>, DataError> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => errors.push(LineError {
                line: i + 1,
                message: format!("invalid record: {e}"),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Lines(errors));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OPTS: LoadOptions = LoadOptions {
        graph_type: GraphType::Chain,
        task: Task::Mwp,
        collapse_unary: true,
    };

    #[test]
    fn loads_mwp_record() {
        let line = r#"{"id":"t1","text":"twice a number increased by 2 is 1 .","target":"( 2.0 * x ) + 2 = 1"}"#;
        let ex = parse_dataset(line, OPTS).unwrap();
        assert_eq!(ex.len(), 1);
        let ex = &ex[0];
        assert_eq!(ex.tokens[5], "n1");
        assert_eq!(ex.tree.linearize().unwrap(), "( 2.0 * x ) + n1 = n2");
        assert_eq!(ex.tree.num_nodes(), 2);
        assert_eq!(ex.graph.nodes()[5].label, "n1");
        assert_eq!(ex.answer, Some(-0.5));
    }

    #[test]
    fn sp_leaves_numbers() {
        let opts = LoadOptions { task: Task::Sp, ..OPTS };
        let line = r#"{"id":"a","tokens":["jobs","in","2"],"target":"answer ( A )"}"#;
        let ex = &parse_dataset(line, opts).unwrap()[0];
        assert_eq!(ex.tokens, vec!["jobs", "in", "2"]);
        assert_eq!(ex.answer, None);
    }

    #[test]
    fn collects_line_errors() {
        let text = "{\"id\":\"a\",\"text\":\"x\",\"target\":\"x\"}\n\nnot json\n{\"id\":\"b\",\"text\":\"x\",\"target\":\"( x\"}\n";
        match parse_dataset(text, OPTS) {
            Err(DataError::Lines(errs)) => {
                assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![3, 4]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dataset("", OPTS), Err(DataError::Empty)));
    }

    #[test]
    fn missing_parse_is_reported() {
        let opts = LoadOptions {
            graph_type: GraphType::Dependency,
            ..OPTS
        };
        let text = "{\"id\":\"a\",\"text\":\"cows sleep\",\"target\":\"x\"}";
        match parse_dataset(text, opts) {
            Err(DataError::Lines(errs)) => {
                assert_eq!(errs[0].line, 1);
                assert!(errs[0].message.contains("conllu"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_must_align() {
        let opts = LoadOptions {
            graph_type: GraphType::Constituency,
            ..OPTS
        };
        let text = r#"{"id":"a","text":"cows sleep","constituency":"(ROOT (S (NP cows) (VP sleeps)))","target":"x"}"#;
        assert!(parse_dataset(text, opts).is_err());
        let text = r#"{"id":"a","text":"cows sleep","constituency":"(ROOT (S (NP cows) (VP sleep)))","target":"x"}"#;
        let ex = &parse_dataset(text, opts).unwrap()[0];
        assert_eq!(ex.graph.num_words(), 2);
    }
}
