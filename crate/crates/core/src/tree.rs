//! Hierarchical output trees built from bracketed logic forms and equations.
//!
//! Every parenthesized group of the target string becomes a child node, and
//! the group is replaced in its parent's token list by the sub-tree
//! placeholder [`SUBTREE`].

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Placeholder for a child sub-tree inside a node's token list.
pub const SUBTREE: &str = "<N>";
/// End-of-node token appended to gold sequences.
pub const END: &str = "</s>";
/// First decoder input of every node.
pub const START: &str = "<s>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("empty input")]
    Empty,
    #[error("unbalanced `)` at byte {0}")]
    UnexpectedClose(usize),
    #[error("unclosed `(` at byte {0}")]
    Unclosed(usize),
    #[error("empty group at byte {0}")]
    EmptyGroup(usize),
    #[error("reserved token `{token}` at byte {pos}")]
    Reserved { token: String, pos: usize },
    #[error("node has {placeholders} placeholders but {children} children")]
    Structure { placeholders: usize, children: usize },
    #[error("node without tokens")]
    EmptyNode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub tokens: Vec<String>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf<S: AsRef<str>>(tokens: &[S]) -> Self {
        TreeNode {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            children: Vec::new(),
        }
    }

    pub fn placeholders(&self) -> usize {
        self.tokens.iter().filter(|t| *t == SUBTREE).count()
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.tokens.is_empty() {
            return Err(TreeError::EmptyNode);
        }
        let placeholders = self.placeholders();
        if placeholders != self.children.len() {
            return Err(TreeError::Structure {
                placeholders,
                children: self.children.len(),
            });
        }
        self.children.iter().try_for_each(TreeNode::validate)
    }

    fn write_linear(&self, out: &mut Vec<String>) {
        let mut kids = self.children.iter();
        for t in &self.tokens {
            if t == SUBTREE {
                out.push("(".into());
                kids.next().expect("validated").write_linear(out);
                out.push(")".into());
            } else {
                out.push(t.clone());
            }
        }
    }

    fn count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::count).sum::<usize>()
    }

    fn height(&self) -> usize {
        1 + self.children.iter().map(TreeNode::height).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputTree {
    pub root: TreeNode,
}

fn is_reserved(tok: &str) -> bool {
    tok == SUBTREE || tok == "⟨N⟩"
}

/// Splits `s` on whitespace and nests every `( ... )` group as a child.
pub fn parse_to_tree(s: &str) -> Result<OutputTree, TreeError> {
    let mut stack: Vec<(usize, TreeNode)> = vec![(0, TreeNode::leaf::<&str>(&[]))];
    let mut any = false;
    let base = s.as_ptr() as usize;
    for tok in s.split_whitespace() {
        any = true;
        let pos = tok.as_ptr() as usize - base;
        match tok {
            "(" => stack.push((pos, TreeNode::leaf::<&str>(&[]))),
            ")" => {
                if stack.len() == 1 {
                    return Err(TreeError::UnexpectedClose(pos));
                }
                let (open, node) = stack.pop().expect("len > 1");
                if node.tokens.is_empty() {
                    return Err(TreeError::EmptyGroup(open));
                }
                let parent = &mut stack.last_mut().expect("root frame").1;
                parent.tokens.push(SUBTREE.to_string());
                parent.children.push(node);
            }
            t if is_reserved(t) => {
                return Err(TreeError::Reserved {
                    token: t.to_string(),
                    pos,
                })
            }
            t => stack.last_mut().expect("root frame").1.tokens.push(t.to_string()),
        }
    }
    if !any {
        return Err(TreeError::Empty);
    }
    if stack.len() > 1 {
        return Err(TreeError::Unclosed(stack.last().expect("len > 1").0));
    }
    let root = stack.pop().expect("root frame").1;
    Ok(OutputTree { root })
}

impl OutputTree {
    pub fn validate(&self) -> Result<(), TreeError> {
        self.root.validate()
    }

    /// Bracketed form with single-space separation.
    pub fn linearize(&self) -> Result<String, TreeError> {
        self.validate()?;
        let mut out = Vec::new();
        self.root.write_linear(&mut out);
        Ok(out.join(" "))
    }

    pub fn num_nodes(&self) -> usize {
        self.root.count()
    }

    pub fn height(&self) -> usize {
        self.root.height()
    }

    /// Nodes in breadth-first, left-to-right order.
    pub fn bfs(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([&self.root]);
        while let Some(n) = queue.pop_front() {
            out.push(n);
            queue.extend(n.children.iter());
        }
        out
    }
}

impl fmt::Display for OutputTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.linearize() {
            Ok(s) => f.write_str(&s),
            Err(e) => write!(f, "<invalid tree: {e}>"),
        }
    }
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn canonical_spacing(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One sub-decoding problem of a gold tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTask {
    /// Index of the parent entry in the decomposition.
    pub parent: Option<usize>,
    /// Which placeholder of the parent (0-based, left to right) this expands.
    pub child_index: usize,
    /// Index of the nearest left sibling entry.
    pub sibling: Option<usize>,
    /// Gold tokens followed by [`END`].
    pub tokens: Vec<String>,
}

/// Breadth-first decomposition of a tree into sub-decoding tasks.
pub fn decompose_for_training(t: &OutputTree) -> Vec<SubTask> {
    let mut out: Vec<SubTask> = Vec::new();
    let mut queue: VecDeque<(&TreeNode, Option<usize>, usize, Option<usize>)> = VecDeque::from([(&t.root, None, 0, None)]);
    while let Some((node, parent, child_index, sibling)) = queue.pop_front() {
        let me = out.len();
        let mut tokens = node.tokens.clone();
        tokens.push(END.to_string());
        out.push(SubTask {
            parent,
            child_index,
            sibling,
            tokens,
        });
        // siblings are contiguous in BFS order, so the left sibling of child
        // k is the entry enqueued just before it
        let first = out.len() + queue.len();
        for (k, c) in node.children.iter().enumerate() {
            let sib = (k > 0).then(|| first + k - 1);
            queue.push_back((c, Some(me), k, sib));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = "( ( 0.5 * x ) + ( 0.25 * x ) ) + 9.0 = x";

    #[test]
    fn nested_equation() {
        let t = parse_to_tree(FIG).unwrap();
        assert_eq!(t.root.tokens, vec!["<N>", "+", "9.0", "=", "x"]);
        let child = &t.root.children[0];
        assert_eq!(child.tokens, vec!["<N>", "+", "<N>"]);
        assert_eq!(child.children[0].tokens, vec!["0.5", "*", "x"]);
        assert_eq!(child.children[1].tokens, vec!["0.25", "*", "x"]);
        assert_eq!(t.linearize().unwrap(), FIG);
    }

    #[test]
    fn flat_and_single_group() {
        let t = parse_to_tree("x").unwrap();
        assert_eq!(t.root, TreeNode::leaf(&["x"]));
        assert_eq!(t.linearize().unwrap(), "x");
        let t = parse_to_tree("( 2.0 * x ) + 2 = 1").unwrap();
        assert_eq!(t.root.tokens, vec!["<N>", "+", "2", "=", "1"]);
        assert_eq!(t.root.children, vec![TreeNode::leaf(&["2.0", "*", "x"])]);
    }

    #[test]
    fn logic_form_functor_stays_in_parent() {
        let t = parse_to_tree("answer ( A , ( job ( A ) ) )").unwrap();
        assert_eq!(t.root.tokens, vec!["answer", "<N>"]);
        assert_eq!(t.root.children[0].tokens, vec!["A", ",", "<N>"]);
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(parse_to_tree(""), Err(TreeError::Empty));
        assert_eq!(parse_to_tree("  "), Err(TreeError::Empty));
        assert_eq!(parse_to_tree("x )"), Err(TreeError::UnexpectedClose(2)));
        assert_eq!(parse_to_tree("a ( b"), Err(TreeError::Unclosed(2)));
        assert_eq!(parse_to_tree("a ( )"), Err(TreeError::EmptyGroup(2)));
        assert!(matches!(parse_to_tree("a <N>"), Err(TreeError::Reserved { .. })));
        assert!(matches!(parse_to_tree("a ⟨N⟩"), Err(TreeError::Reserved { .. })));
    }

    #[test]
    fn linearize_rejects_mismatched_structure() {
        let t = OutputTree {
            root: TreeNode::leaf(&["<N>", "+", "<N>"]),
        };
        assert_eq!(
            t.linearize(),
            Err(TreeError::Structure {
                placeholders: 2,
                children: 0
            })
        );
    }

    #[test]
    fn decomposition_is_breadth_first() {
        let t = parse_to_tree(FIG).unwrap();
        let d = decompose_for_training(&t);
        assert_eq!(d.len(), 4);
        assert_eq!(d[0].parent, None);
        assert_eq!(d[1].parent, Some(0));
        assert_eq!((d[2].parent, d[3].parent), (Some(1), Some(1)));
        assert_eq!(d[2].sibling, None);
        assert_eq!(d[3].sibling, Some(2));
        assert_eq!((d[2].child_index, d[3].child_index), (0, 1));
        assert_eq!(d[3].tokens, vec!["0.25", "*", "x", "</s>"]);

        let single = decompose_for_training(&parse_to_tree("x").unwrap());
        assert_eq!(single.len(), 1);
        assert_eq!((single[0].parent, single[0].sibling), (None, None));
    }

    #[test]
    fn sibling_links_across_cousins() {
        // root has two children, each with two children
        let t = parse_to_tree("( ( a ) ( b ) ) ( ( c ) ( d ) )").unwrap();
        let d = decompose_for_training(&t);
        assert_eq!(d.len(), 7);
        assert_eq!(d[2].sibling, Some(1));
        assert_eq!((d[3].parent, d[3].sibling), (Some(1), None));
        assert_eq!((d[4].parent, d[4].sibling), (Some(1), Some(3)));
        assert_eq!((d[5].parent, d[5].sibling), (Some(2), None));
        assert_eq!((d[6].parent, d[6].sibling), (Some(2), Some(5)));
        assert_eq!(d[4].tokens, vec!["b", "</s>"]);
    }
}
