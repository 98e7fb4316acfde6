//! Heterogeneous text graphs: word nodes from the token sequence plus
//! relation nodes derived from a dependency or constituency parse.
//!
//! Graph construction strategies implement [`GraphBuilder`] and are looked
//! up by name in a [`GraphBuilderRegistry`], so the CLI and the training
//! configuration select them with a plain string.

mod chain;
mod constituency;
mod dependency;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use chain::{build_chain_graph, ChainGraphBuilder};
pub use constituency::{build_constituency_graph, ConstituencyGraphBuilder, ConstituencyParse, PtbTree};
pub use dependency::{build_dependency_graph, DependencyArc, DependencyGraphBuilder, DependencyParse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("arc {head} -> {dependent} out of range for {tokens} tokens")]
    ArcOutOfRange {
        head: usize,
        dependent: usize,
        tokens: usize,
    },
    #[error("parse covers {parse} tokens but the sentence has {tokens}")]
    Alignment { parse: usize, tokens: usize },
    #[error("CoNLL-U line {line}: {message}")]
    Conllu { line: usize, message: String },
    #[error("bracketed tree at byte {pos}: {message}")]
    Bracket { pos: usize, message: String },
    #[error("sentence ending at line {line} has {count} root arcs, expected 1")]
    RootCount { line: usize, count: usize },
    #[error("graph type `{0}` needs a {1} parse")]
    MissingParse(String, &'static str),
    #[error("unknown graph type `{0}`")]
    UnknownGraphType(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Word,
    Relation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Token text for word nodes, relation or constituent tag otherwise.
    pub label: String,
    /// Position in the token sequence; present exactly for word nodes.
    pub seq_pos: Option<usize>,
}

impl GraphNode {
    pub fn word(id: usize, label: impl Into<String>, seq_pos: usize) -> Self {
        GraphNode {
            id,
            kind: NodeKind::Word,
            label: label.into(),
            seq_pos: Some(seq_pos),
        }
    }

    pub fn relation(id: usize, label: impl Into<String>) -> Self {
        GraphNode {
            id,
            kind: NodeKind::Relation,
            label: label.into(),
            seq_pos: None,
        }
    }
}

/// Directed graph with dense node ids and sorted adjacency lists in both
/// directions. `backward_adj` is always the transpose of `forward_adj`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGraph {
    nodes: Vec<GraphNode>,
    forward: Vec<Vec<usize>>,
    backward: Vec<Vec<usize>>,
}

impl TextGraph {
    /// Validates nodes and edges and builds both adjacency directions.
    pub fn from_edges(nodes: Vec<GraphNode>, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut positions = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(GraphError::Invalid(format!("node at index {i} has id {}", node.id)));
            }
            match (node.kind, node.seq_pos) {
                (NodeKind::Word, Some(p)) => positions.push(p),
                (NodeKind::Relation, None) => {}
                _ => {
                    return Err(GraphError::Invalid(format!(
                        "node {i}: word nodes carry a sequence position, relation nodes do not"
                    )))
                }
            }
        }
        positions.sort_unstable();
        if positions.iter().enumerate().any(|(i, p)| *p != i) {
            return Err(GraphError::Invalid("word positions must be 0..n without gaps".into()));
        }
        let mut forward = vec![Vec::new(); n];
        let mut backward = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Invalid(format!("edge {a} -> {b} out of range")));
            }
            if a == b {
                return Err(GraphError::Invalid(format!("self-loop on node {a}")));
            }
            forward[a].push(b);
            backward[b].push(a);
        }
        for adj in forward.iter_mut().chain(backward.iter_mut()) {
            adj.sort_unstable();
            if adj.windows(2).any(|w| w[0] == w[1]) {
                return Err(GraphError::Invalid("duplicate edge".into()));
            }
        }
        Ok(TextGraph { nodes, forward, backward })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    /// Successors of each node.
    pub fn forward_adj(&self) -> &[Vec<usize>] {
        &self.forward
    }

    /// Predecessors of each node.
    pub fn backward_adj(&self) -> &[Vec<usize>] {
        &self.backward
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.forward
            .iter()
            .enumerate()
            .flat_map(|(a, succ)| succ.iter().map(move |b| (a, *b)))
    }

    pub fn kinds(&self) -> Vec<NodeKind> {
        self.nodes.iter().map(|n| n.kind).collect()
    }

    /// Word node ids ordered by sequence position.
    pub fn word_ids(&self) -> Vec<usize> {
        let mut ids: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .filter_map(|n| n.seq_pos.map(|p| (p, n.id)))
            .collect();
        ids.sort_unstable();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    pub fn relation_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Relation)
            .map(|n| n.id)
            .collect()
    }

    pub fn num_words(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Word).count()
    }

    /// Replaces word labels by position, e.g. after number masking.
    pub fn relabel_words(&mut self, labels: &[String]) -> Result<(), GraphError> {
        let words = self.word_ids();
        if words.len() != labels.len() {
            return Err(GraphError::Alignment {
                parse: words.len(),
                tokens: labels.len(),
            });
        }
        for (id, label) in words.into_iter().zip(labels) {
            self.nodes[id].label = label.clone();
        }
        Ok(())
    }

    /// Copy with node `i` moved to id `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(GraphError::Invalid("not a permutation".into()));
        }
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = GraphNode {
                id: perm[old],
                ..node.clone()
            };
        }
        let edges: Vec<(usize, usize)> = self.edges().map(|(a, b)| (perm[a], perm[b])).collect();
        TextGraph::from_edges(nodes, &edges)
    }

    /// Connectivity ignoring edge direction.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in self.forward[v].iter().chain(&self.backward[v]) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Merges every relation node whose only successor is a relation node
    /// with no other predecessor. Labels are joined top-down with `+`.
    /// Word ids are preserved; relation nodes keep their relative order.
    pub fn collapse_relation_chains(&self) -> TextGraph {
        let n = self.nodes.len();
        let mut labels: Vec<String> = self.nodes.iter().map(|n| n.label.clone()).collect();
        let mut succ: Vec<Vec<usize>> = self.forward.clone();
        let mut alive = vec![true; n];
        let is_rel = |i: usize| self.nodes[i].kind == NodeKind::Relation;
        for p in 0..n {
            if !is_rel(p) {
                continue;
            }
            while alive[p] && succ[p].len() == 1 {
                let c = succ[p][0];
                if !is_rel(c) || self.backward[c].len() != 1 {
                    break;
                }
                let tail = std::mem::take(&mut labels[c]);
                labels[p] = format!("{}+{}", labels[p], tail);
                succ[p] = std::mem::take(&mut succ[c]);
                alive[c] = false;
            }
        }
        let mut remap = vec![usize::MAX; n];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if alive[i] {
                remap[i] = nodes.len();
                nodes.push(GraphNode {
                    id: nodes.len(),
                    kind: node.kind,
                    label: labels[i].clone(),
                    seq_pos: node.seq_pos,
                });
            }
        }
        let edges: Vec<(usize, usize)> = (0..n)
            .filter(|i| alive[*i])
            .flat_map(|a| succ[a].iter().map(move |b| (a, *b)))
            .map(|(a, b)| (remap[a], remap[b]))
            .collect();
        TextGraph::from_edges(nodes, &edges).expect("collapse keeps a valid graph")
    }
}

/// Which graph construction to apply to a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphType {
    Dependency,
    Constituency,
    Chain,
}

impl GraphType {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphType::Dependency => "dependency",
            GraphType::Constituency => "constituency",
            GraphType::Chain => "chain",
        }
    }
}

impl fmt::Display for GraphType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphType {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dependency" => Ok(GraphType::Dependency),
            "constituency" => Ok(GraphType::Constituency),
            "chain" => Ok(GraphType::Chain),
            other => Err(GraphError::UnknownGraphType(other.to_string())),
        }
    }
}

/// Tokens of one example together with whatever parses are available.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphInput {
    pub tokens: Vec<String>,
    pub dependency: Option<DependencyParse>,
    pub constituency: Option<ConstituencyParse>,
}

pub trait GraphBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, input: &GraphInput) -> Result<TextGraph, GraphError>;
}

/// Graph builders keyed by name.
pub struct GraphBuilderRegistry {
    builders: BTreeMap<&'static str, Box<dyn GraphBuilder>>,
}

impl Default for GraphBuilderRegistry {
    fn default() -> Self {
        Self::with_collapse(true)
    }
}

impl GraphBuilderRegistry {
    pub fn empty() -> Self {
        GraphBuilderRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// The three stock builders; `collapse_unary` toggles relation-chain
    /// collapsing for the parse-based ones.
    pub fn with_collapse(collapse_unary: bool) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DependencyGraphBuilder { collapse_unary }));
        r.register(Box::new(ConstituencyGraphBuilder { collapse_unary }));
        r.register(Box::new(ChainGraphBuilder));
        r
    }

    pub fn register(&mut self, builder: Box<dyn GraphBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn get(&self, name: &str) -> Result<&dyn GraphBuilder, GraphError> {
        self.builders
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| GraphError::UnknownGraphType(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }
}
