use std::collections::HashMap;

use crate::data::Example;
use crate::graph::{NodeKind, TextGraph};
use crate::tree::{decompose_for_training, END, START, SUBTREE};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
/// Reserved entries, in id order.
pub const RESERVED: [&str; 5] = [PAD, UNK, START, END, SUBTREE];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const START_ID: usize = 2;
pub const END_ID: usize = 3;
pub const SUBTREE_ID: usize = 4;
/// Namespace for relation labels in the input vocabulary.
pub const REL_PREFIX: &str = "rel:";

pub fn relation_key(label: &str) -> String {
    format!("{REL_PREFIX}{label}")
}

/// Token table with the reserved entries at ids 0–4 and the rest in order
/// of first insertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.add(t);
        }
        v
    }

    /// Rebuilds a table from its token list; the reserved prefix is checked.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err("vocabulary does not start with the reserved tokens".into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary entry `{t}`"));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn add(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.index.get(tok) {
            return i;
        }
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn get(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    /// Id of `tok`, or [`UNK_ID`].
    pub fn id(&self, tok: &str) -> usize {
        self.get(tok).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    /// Word tokens and `rel:`-prefixed relation labels.
    pub input: Vocab,
    pub output: Vocab,
}

impl Vocabs {
    /// Input ids for every graph node, in node id order.
    pub fn node_ids(&self, graph: &TextGraph) -> Vec<usize> {
        graph
            .nodes()
            .iter()
            .map(|n| match n.kind {
                NodeKind::Word => self.input.id(&n.label),
                NodeKind::Relation => self.input.id(&relation_key(&n.label)),
            })
            .collect()
    }
}

/// Input vocabulary from graph node labels, output vocabulary from target
/// tokens in decomposition order.
pub fn build_vocabs(examples: &[Example]) -> Result<Vocabs, String> {
    if examples.is_empty() {
        return Err("cannot build vocabularies from an empty training set".into());
    }
    let mut input = Vocab::new();
    let mut output = Vocab::new();
    for ex in examples {
        for n in ex.graph.nodes() {
            match n.kind {
                NodeKind::Word => input.add(&n.label),
                NodeKind::Relation => input.add(&relation_key(&n.label)),
            };
        }
        for task in decompose_for_training(&ex.tree) {
            for t in &task.tokens {
                output.add(t);
            }
        }
    }
    Ok(Vocabs { input, output })
}
