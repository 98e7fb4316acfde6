use super::{GraphBuilder, GraphError, GraphInput, GraphNode, TextGraph};

/// Word nodes only, linked in both directions along the sequence.
pub fn build_chain_graph(tokens: &[String]) -> Result<TextGraph, GraphError> {
    if tokens.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    let nodes: Vec<GraphNode> = tokens.iter().enumerate().map(|(i, t)| GraphNode::word(i, t.as_str(), i)).collect();
    let edges: Vec<(usize, usize)> = (1..tokens.len()).flat_map(|i| [(i - 1, i), (i, i - 1)]).collect();
    TextGraph::from_edges(nodes, &edges)
}

/// Ignores any parse attached to the input.
pub struct ChainGraphBuilder;

impl GraphBuilder for ChainGraphBuilder {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn build(&self, input: &GraphInput) -> Result<TextGraph, GraphError> {
        build_chain_graph(&input.tokens)
    }
}
