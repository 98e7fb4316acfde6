use super::{GraphBuilder, GraphError, GraphInput, GraphNode, TextGraph};

/// Ordered phrase-structure tree; leaves are the sentence tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PtbTree {
    Node { label: String, children: Vec<PtbTree> },
    Leaf(String),
}

impl PtbTree {
    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            PtbTree::Leaf(w) => out.push(w),
            PtbTree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstituencyParse {
    pub root: PtbTree,
}

impl ConstituencyParse {
    /// Parses a Penn Treebank style bracketing such as
    /// `(ROOT (S (NP (NNS jobs)) (VP (VBP exist))))`. The outermost label
    /// may be empty, as in `( (S ...) )`.
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let mut p = BracketReader { src: s, pos: 0 };
        p.skip_ws();
        if p.pos == s.len() {
            return Err(GraphError::EmptyInput);
        }
        let root = p.tree()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.error("trailing input after tree"));
        }
        if let PtbTree::Leaf(_) = root {
            return Err(p.error("expected a bracketed tree"));
        }
        Ok(ConstituencyParse { root })
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }
}

struct BracketReader<'a> {
    src: &'a str,
    pos: usize,
}

impl BracketReader<'_> {
    fn error(&self, message: &str) -> GraphError {
        GraphError::Bracket {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn atom(&mut self) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn tree(&mut self) -> Result<PtbTree, GraphError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(')') => Err(self.error("unbalanced `)`")),
            Some('(') => {
                self.pos += 1;
                self.skip_ws();
                let label = match self.peek() {
                    Some('(') => String::new(),
                    _ => self.atom().to_string(),
                };
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return Err(self.error("missing `)`")),
                        Some(')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => children.push(self.tree()?),
                    }
                }
                if children.is_empty() {
                    return Err(self.error("constituent without children"));
                }
                Ok(PtbTree::Node { label, children })
            }
            Some(_) => Ok(PtbTree::Leaf(self.atom().to_string())),
        }
    }
}

/// Word nodes joined by a bidirectional sequence chain; every constituent
/// below the (removed) outermost node becomes a relation node with edges
/// to its children, and tree leaves are identified with the word nodes.
/// Relation nodes are numbered in pre-order.
pub fn build_constituency_graph(tokens: &[String], parse: &ConstituencyParse) -> Result<TextGraph, GraphError> {
    if tokens.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    let n = tokens.len();
    let leaves = parse.leaves().len();
    if leaves != n {
        return Err(GraphError::Alignment { parse: leaves, tokens: n });
    }
    let mut nodes: Vec<GraphNode> = tokens.iter().enumerate().map(|(i, t)| GraphNode::word(i, t.as_str(), i)).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((i - 1, i));
        edges.push((i, i - 1));
    }
    let mut next_leaf = 0;
    if let PtbTree::Node { children, .. } = &parse.root {
        for child in children {
            attach(child, None, &mut nodes, &mut edges, &mut next_leaf);
        }
    }
    TextGraph::from_edges(nodes, &edges)
}

fn attach(t: &PtbTree, parent: Option<usize>, nodes: &mut Vec<GraphNode>, edges: &mut Vec<(usize, usize)>, next_leaf: &mut usize) {
    match t {
        PtbTree::Leaf(_) => {
            if let Some(p) = parent {
                edges.push((p, *next_leaf));
            }
            *next_leaf += 1;
        }
        PtbTree::Node { label, children } => {
            let id = nodes.len();
            nodes.push(GraphNode::relation(id, label.as_str()));
            if let Some(p) = parent {
                edges.push((p, id));
            }
            for c in children {
                attach(c, Some(id), nodes, edges, next_leaf);
            }
        }
    }
}

pub struct ConstituencyGraphBuilder {
    pub collapse_unary: bool,
}

impl GraphBuilder for ConstituencyGraphBuilder {
    fn name(&self) -> &'static str {
        "constituency"
    }

    fn build(&self, input: &GraphInput) -> Result<TextGraph, GraphError> {
        let parse = input
            .constituency
            .as_ref()
            .ok_or_else(|| GraphError::MissingParse(self.name().into(), "constituency"))?;
        let g = build_constituency_graph(&input.tokens, parse)?;
        Ok(if self.collapse_unary { g.collapse_relation_chains() } else { g })
    }
}
