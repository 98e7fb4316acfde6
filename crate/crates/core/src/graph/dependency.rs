use super::{GraphBuilder, GraphError, GraphInput, GraphNode, TextGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyArc {
    pub head: usize,
    pub label: String,
    pub dependent: usize,
}

impl DependencyArc {
    pub fn new(head: usize, label: impl Into<String>, dependent: usize) -> Self {
        DependencyArc {
            head,
            label: label.into(),
            dependent,
        }
    }
}

/// Dependency analysis of one or more consecutive sentences. Root
/// attachments are kept apart from `arcs`: each sentence contributes exactly
/// one entry to `roots`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyParse {
    pub tokens: Vec<String>,
    pub arcs: Vec<DependencyArc>,
    pub roots: Vec<usize>,
}

impl DependencyParse {
    /// Single-sentence parse.
    pub fn new(tokens: Vec<String>, arcs: Vec<DependencyArc>, root: usize) -> Self {
        DependencyParse {
            tokens,
            arcs,
            roots: vec![root],
        }
    }

    /// Reads CoNLL-U. Only ID, FORM, HEAD and DEPREL are used; multiword
    /// ranges (`3-4`) and empty nodes (`5.1`) are skipped. Blank lines
    /// separate sentences, whose tokens are concatenated.
    pub fn from_conllu(text: &str) -> Result<Self, GraphError> {
        let mut parse = DependencyParse {
            tokens: Vec::new(),
            arcs: Vec::new(),
            roots: Vec::new(),
        };
        let mut offset = 0;
        let mut sentence: Vec<(usize, usize, String)> = Vec::new();
        let mut last_line = 0;
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))) {
            last_line = lineno;
            if line.trim().is_empty() {
                if !sentence.is_empty() {
                    offset = parse.close_sentence(&mut sentence, offset, lineno)?;
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 8 {
                return Err(GraphError::Conllu {
                    line: lineno,
                    message: format!("expected at least 8 tab-separated columns, got {}", cols.len()),
                });
            }
            if cols[0].contains('-') || cols[0].contains('.') {
                continue;
            }
            let id: usize = cols[0].parse().map_err(|_| GraphError::Conllu {
                line: lineno,
                message: format!("bad ID `{}`", cols[0]),
            })?;
            if id != sentence.len() + 1 {
                return Err(GraphError::Conllu {
                    line: lineno,
                    message: format!("ID {id} out of sequence"),
                });
            }
            let head: usize = cols[6].parse().map_err(|_| GraphError::Conllu {
                line: lineno,
                message: format!("bad HEAD `{}`", cols[6]),
            })?;
            parse.tokens.push(cols[1].to_string());
            sentence.push((id, head, cols[7].to_string()));
        }
        if !sentence.is_empty() {
            parse.close_sentence(&mut sentence, offset, last_line)?;
        }
        if parse.tokens.is_empty() {
            return Err(GraphError::EmptyInput);
        }
        Ok(parse)
    }

    fn close_sentence(&mut self, sentence: &mut Vec<(usize, usize, String)>, offset: usize, line: usize) -> Result<usize, GraphError> {
        let len = sentence.len();
        let mut roots = 0;
        for (id, head, label) in sentence.drain(..) {
            let dependent = offset + id - 1;
            if head == 0 {
                roots += 1;
                self.roots.push(dependent);
            } else if head > len {
                return Err(GraphError::Conllu {
                    line,
                    message: format!("HEAD {head} beyond sentence length {len}"),
                });
            } else {
                self.arcs.push(DependencyArc::new(offset + head - 1, label, dependent));
            }
        }
        if roots != 1 {
            return Err(GraphError::RootCount { line, count: roots });
        }
        Ok(offset + len)
    }
}

/// Word nodes in sequence order linked by forward sequence edges, plus one
/// relation node per non-root arc wired `head -> label -> dependent`.
pub fn build_dependency_graph(tokens: &[String], parse: &DependencyParse) -> Result<TextGraph, GraphError> {
    if tokens.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    let n = tokens.len();
    if parse.tokens.len() != n {
        return Err(GraphError::Alignment {
            parse: parse.tokens.len(),
            tokens: n,
        });
    }
    let mut nodes: Vec<GraphNode> = tokens.iter().enumerate().map(|(i, t)| GraphNode::word(i, t.as_str(), i)).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for arc in &parse.arcs {
        if arc.head >= n || arc.dependent >= n {
            return Err(GraphError::ArcOutOfRange {
                head: arc.head,
                dependent: arc.dependent,
                tokens: n,
            });
        }
        let rel = nodes.len();
        nodes.push(GraphNode::relation(rel, arc.label.as_str()));
        edges.push((arc.head, rel));
        edges.push((rel, arc.dependent));
    }
    TextGraph::from_edges(nodes, &edges)
}

pub struct DependencyGraphBuilder {
    pub collapse_unary: bool,
}

impl GraphBuilder for DependencyGraphBuilder {
    fn name(&self) -> &'static str {
        "dependency"
    }

    fn build(&self, input: &GraphInput) -> Result<TextGraph, GraphError> {
        let parse = input
            .dependency
            .as_ref()
            .ok_or_else(|| GraphError::MissingParse(self.name().into(), "dependency"))?;
        let g = build_dependency_graph(&input.tokens, parse)?;
        Ok(if self.collapse_unary { g.collapse_relation_chains() } else { g })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cows_sleep() {
        let tokens = toks("cows sleep");
        let parse = DependencyParse::new(tokens.clone(), vec![DependencyArc::new(1, "nsubj", 0)], 1);
        let g = build_dependency_graph(&tokens, &parse).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.nodes()[2].label, "nsubj");
        assert_eq!(g.nodes()[2].kind, NodeKind::Relation);
        let mut edges: Vec<_> = g.edges().collect();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn single_token_without_arcs() {
        let tokens = toks("hi");
        let parse = DependencyParse::new(tokens.clone(), vec![], 0);
        let g = build_dependency_graph(&tokens, &parse).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn errors() {
        let tokens = toks("a b");
        let bad = DependencyParse::new(tokens.clone(), vec![DependencyArc::new(5, "x", 0)], 1);
        assert!(matches!(build_dependency_graph(&tokens, &bad), Err(GraphError::ArcOutOfRange { .. })));
        assert_eq!(build_dependency_graph(&[], &bad), Err(GraphError::EmptyInput));
    }

    #[test]
    fn conllu_reader() {
        let text = "# sent_id = 1\n1\tcows\tcow\tNOUN\tNNS\t_\t2\tnsubj\t_\t_\n2\tsleep\tsleep\tVERB\tVBP\t_\t0\troot\t_\t_\n\n\
                    1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\tdo\tAUX\tVB\t_\t2\taux\t_\t_\n2\tgo\tgo\tVERB\tVB\t_\t0\troot\t_\t_\n";
        let p = DependencyParse::from_conllu(text).unwrap();
        assert_eq!(p.tokens, toks("cows sleep do go"));
        assert_eq!(p.roots, vec![1, 3]);
        assert_eq!(p.arcs, vec![DependencyArc::new(1, "nsubj", 0), DependencyArc::new(3, "aux", 2)]);
    }

    #[test]
    fn conllu_requires_one_root() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(DependencyParse::from_conllu(text), Err(GraphError::RootCount { count: 2, .. })));
        assert!(matches!(DependencyParse::from_conllu("1\ta\n"), Err(GraphError::Conllu { line: 1, .. })));
    }
}
