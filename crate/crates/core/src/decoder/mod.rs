//! Hierarchical LSTM tree decoder with parent and sibling feeding.
//!
//! Every tree node is decoded as its own token sequence. A node's first
//! state comes from the graph embedding (root) or from the decoder state at
//! the step that emitted the parent's matching [`SUBTREE`] token; the
//! parent's attentional state at that step and the final state of the left
//! sibling are fed into every input of the node.

mod attention;

pub use attention::{
    AttentionDims, AttentionFactory, AttentionRecord, AttentionRegistry, AttentionStrategy, NoAttention, SeparatedAttention,
    UniformAttention,
};

use std::collections::VecDeque;

use crate::encoder::EncodedGraph;
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{Linear, LstmCell, Result, Tape, Tensor, TensorError, Var};
use crate::tree::{decompose_for_training, OutputTree, TreeNode, SUBTREE};
use crate::vocab::{Vocab, END_ID, PAD_ID, START_ID, SUBTREE_ID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the encoder's node embeddings.
    pub node_dim: usize,
    /// Width of the graph embedding.
    pub graph_dim: usize,
    pub parent_feeding: bool,
    pub sibling_feeding: bool,
    pub attention: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeLimits {
    /// Tokens per node, not counting the end token.
    pub max_len: usize,
    pub max_nodes: usize,
    /// Root is at depth 1.
    pub max_depth: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits {
            max_len: 60,
            max_nodes: 30,
            max_depth: 8,
        }
    }
}

/// Result of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub logits: Var,
    pub h: Var,
    pub c: Var,
    /// Attentional state s̃.
    pub attn: Var,
}

pub struct TreeDecoder {
    cfg: DecoderConfig,
    pub embedding: ParamId,
    cell: LstmCell,
    bridge_h: Linear,
    bridge_c: Linear,
    attention: Box<dyn AttentionStrategy>,
    out: Linear,
}

impl TreeDecoder {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, cfg: DecoderConfig, registry: &AttentionRegistry) -> std::result::Result<Self, String> {
        let h = cfg.hidden_dim;
        let embedding = store.register("dec.embedding", init.uniform(&[cfg.vocab_size, cfg.embed_dim]));
        let cell = LstmCell::register(store, init, "dec.lstm", cfg.embed_dim + 2 * h, h);
        let bridge_h = Linear::register(store, init, "dec.bridge_h", cfg.graph_dim, h, true);
        let bridge_c = Linear::register(store, init, "dec.bridge_c", cfg.graph_dim, h, true);
        let attention = registry.build(&cfg.attention, store, init, AttentionDims { hidden: h, node: cfg.node_dim })?;
        let out = Linear::register(store, init, "dec.out", h, cfg.vocab_size, true);
        Ok(TreeDecoder {
            cfg,
            embedding,
            cell,
            bridge_h,
            bridge_c,
            attention,
            out,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn attention_name(&self) -> &'static str {
        self.attention.name()
    }

    /// Initial `(h, c)` of the root task.
    pub fn bridge(&self, tape: &mut Tape, enc: &EncodedGraph) -> Result<(Var, Var)> {
        Ok((self.bridge_h.forward(tape, enc.g)?, self.bridge_c.forward(tape, enc.g)?))
    }

    fn zeros(&self, tape: &mut Tape) -> Var {
        tape.constant(Tensor::zeros(&[self.cfg.hidden_dim]))
    }

    /// One LSTM step on `[emb(prev); parent; sibling]` followed by attention
    /// and the output projection. Disabled feeding slots are zeroed here.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        enc: &EncodedGraph,
        prev: usize,
        (h, c): (Var, Var),
        parent: Option<Var>,
        sibling: Option<Var>,
        trace: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<Step> {
        if prev >= self.cfg.vocab_size {
            return Err(TensorError::Index {
                op: "decoder input token",
                index: prev,
                extent: self.cfg.vocab_size,
            });
        }
        let table = tape.param(self.embedding)?;
        let emb = tape.row(table, prev)?;
        let parent = match parent.filter(|_| self.cfg.parent_feeding) {
            Some(p) => p,
            None => self.zeros(tape),
        };
        let sibling = match sibling.filter(|_| self.cfg.sibling_feeding) {
            Some(s) => s,
            None => self.zeros(tape),
        };
        let x = tape.concat(&[emb, parent, sibling], 0)?;
        let (h, c) = self.cell.step(tape, x, h, c)?;
        let attn = self.attention.attend(tape, enc, h, trace)?;
        let logits = self.out.forward(tape, attn)?;
        Ok(Step { logits, h, c, attn })
    }

    /// Summed token cross-entropy of the gold tree under teacher forcing.
    pub fn teacher_forced_loss(&self, tape: &mut Tape, enc: &EncodedGraph, tree: &OutputTree, vocab: &Vocab) -> Result<Var> {
        let tasks = decompose_for_training(tree);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); tasks.len()];
        for (i, t) in tasks.iter().enumerate() {
            if let Some(p) = t.parent {
                children[p].push(i);
            }
        }
        // (h, c, parent s̃) handed to each task by its parent
        let mut inits: Vec<Option<(Var, Var, Var)>> = vec![None; tasks.len()];
        let mut finals: Vec<Option<Var>> = vec![None; tasks.len()];
        let mut terms = Vec::new();
        for (i, task) in tasks.iter().enumerate() {
            let (mut state, parent) = match task.parent {
                None => (self.bridge(tape, enc)?, None),
                Some(_) => {
                    let (h, c, p) = inits[i].expect("parents precede children in breadth-first order");
                    ((h, c), Some(p))
                }
            };
            let sibling = task.sibling.map(|s| finals[s].expect("left siblings precede"));
            let mut prev = START_ID;
            let mut next_child = 0;
            for tok in &task.tokens {
                let target = vocab.id(tok);
                let step = self.step(tape, enc, prev, state, parent, sibling, None)?;
                terms.push(tape.cross_entropy(step.logits, target)?);
                state = (step.h, step.c);
                if tok == SUBTREE {
                    inits[children[i][next_child]] = Some((step.h, step.c, step.attn));
                    next_child += 1;
                }
                prev = target;
            }
            finals[i] = Some(state.0);
        }
        tape.add_n(&terms)
    }

    /// Greedy top-down decoding, breadth-first over pending nodes.
    pub fn decode_greedy(
        &self,
        tape: &mut Tape,
        enc: &EncodedGraph,
        vocab: &Vocab,
        limits: DecodeLimits,
        mut trace: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<OutputTree> {
        struct Pending {
            node: usize,
            state: (Var, Var),
            parent: Option<Var>,
            left: Option<usize>,
        }
        let max_len = limits.max_len.max(1);
        let mut tokens: Vec<Vec<String>> = vec![Vec::new()];
        let mut kids: Vec<Vec<usize>> = vec![Vec::new()];
        let mut depth = vec![1usize];
        let mut finals: Vec<Option<Var>> = vec![None];
        let mut queue = VecDeque::from([Pending {
            node: 0,
            state: self.bridge(tape, enc)?,
            parent: None,
            left: None,
        }]);

        while let Some(task) = queue.pop_front() {
            let sibling = task.left.and_then(|l| finals[l]);
            let mut state = task.state;
            let mut prev = START_ID;
            for t in 0..max_len {
                let step = self.step(tape, enc, prev, state, task.parent, sibling, trace.as_deref_mut())?;
                state = (step.h, step.c);
                let can_branch = tokens.len() < limits.max_nodes && depth[task.node] < limits.max_depth;
                let logits = tape.value(step.logits).data();
                let choice = argmax_allowed(logits, |id| match id {
                    PAD_ID | START_ID => false,
                    END_ID => t > 0,
                    SUBTREE_ID => can_branch,
                    _ => true,
                });
                if choice == END_ID {
                    break;
                }
                let word = vocab.token(choice).unwrap_or(crate::vocab::UNK).to_string();
                tokens[task.node].push(word);
                if choice == SUBTREE_ID {
                    let child = tokens.len();
                    tokens.push(Vec::new());
                    kids.push(Vec::new());
                    depth.push(depth[task.node] + 1);
                    finals.push(None);
                    let left = kids[task.node].last().copied();
                    kids[task.node].push(child);
                    queue.push_back(Pending {
                        node: child,
                        state,
                        parent: Some(step.attn),
                        left,
                    });
                }
                prev = choice;
            }
            finals[task.node] = Some(state.0);
        }
        Ok(OutputTree {
            root: assemble(0, &mut tokens, &kids),
        })
    }
}

fn argmax_allowed(logits: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if allowed(i) && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(crate::vocab::UNK_ID, |(i, _)| i)
}

fn assemble(i: usize, tokens: &mut [Vec<String>], kids: &[Vec<usize>]) -> TreeNode {
    TreeNode {
        tokens: std::mem::take(&mut tokens[i]),
        children: kids[i].iter().map(|&k| assemble(k, tokens, kids)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;
    use crate::tree::parse_to_tree;

    fn setup(attention: &str, scale: f64) -> (ParamStore, TreeDecoder, Vocab) {
        let mut vocab = Vocab::new();
        for t in ["x", "=", "+", "n1", "n2"] {
            vocab.add(t);
        }
        let cfg = DecoderConfig {
            vocab_size: vocab.len(),
            embed_dim: 3,
            hidden_dim: 4,
            node_dim: 2,
            graph_dim: 5,
            parent_feeding: true,
            sibling_feeding: true,
            attention: attention.into(),
        };
        let mut store = ParamStore::new();
        let dec = TreeDecoder::register(&mut store, &mut Initializer::new(9, scale), cfg, &AttentionRegistry::default()).unwrap();
        (store, dec, vocab)
    }

    fn encoded(tape: &mut Tape) -> EncodedGraph {
        EncodedGraph {
            z: tape.constant(Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6]]).unwrap()),
            g: tape.constant(Tensor::vector(vec![0.1, -0.2, 0.3, 0.0, 0.5])),
            kinds: vec![NodeKind::Word, NodeKind::Word, NodeKind::Relation],
            word_rows: vec![0, 1],
            relation_rows: vec![2],
        }
    }

    #[test]
    fn zero_params_give_bias_logits() {
        let (mut store, dec, vocab) = setup("separated", 0.5);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            if store.name(id) != "dec.out.b" {
                store.set(id, Tensor::zeros(&shape));
            }
        }
        let b = store.get(store.id("dec.out.b").unwrap()).clone();
        let mut tape = Tape::with_params(&store);
        let enc = encoded(&mut tape);
        let init = dec.bridge(&mut tape, &enc).unwrap();
        for prev in [START_ID, 5, 7] {
            let s = dec.step(&mut tape, &enc, prev, init, None, None, None).unwrap();
            assert_eq!(tape.value(s.logits), &b);
            assert_eq!(tape.value(s.logits).len(), vocab.len());
        }
        assert!(dec.step(&mut tape, &enc, vocab.len(), init, None, None, None).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_steps_times_log_v() {
        let (mut store, dec, vocab) = setup("separated", 0.5);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape));
        }
        let tree = parse_to_tree("x = ( n1 + n2 )").unwrap();
        let mut tape = Tape::with_params(&store);
        let enc = encoded(&mut tape);
        let loss = dec.teacher_forced_loss(&mut tape, &enc, &tree, &vocab).unwrap();
        // root: x = <N> </s>; child: n1 + n2 </s>
        let steps = 8.0;
        assert!((tape.value(loss).item() - steps * (vocab.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_respects_limits() {
        for seed_scale in [0.5, 2.0, 5.0] {
            let (store, dec, vocab) = setup("separated", seed_scale);
            let mut tape = Tape::with_params(&store);
            let enc = encoded(&mut tape);
            let one = DecodeLimits {
                max_len: 1,
                max_nodes: 1,
                max_depth: 8,
            };
            let t = dec.decode_greedy(&mut tape, &enc, &vocab, one, None).unwrap();
            assert_eq!(t.num_nodes(), 1);
            assert!(t.root.tokens.len() <= 1);
            let lim = DecodeLimits {
                max_len: 6,
                max_nodes: 4,
                max_depth: 3,
            };
            let t = dec.decode_greedy(&mut tape, &enc, &vocab, lim, None).unwrap();
            assert!(t.num_nodes() <= 4 && t.height() <= 3);
            t.validate().unwrap();
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let (store, dec, vocab) = setup("uniform", 1.0);
        let run = || {
            let mut tape = Tape::with_params(&store);
            let enc = encoded(&mut tape);
            dec.decode_greedy(&mut tape, &enc, &vocab, DecodeLimits::default(), None).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn no_sibling_equals_sibling_ablation_on_first_child() {
        let (store, dec, _) = setup("separated", 1.0);
        let mut ablated_cfg = dec.config().clone();
        ablated_cfg.sibling_feeding = false;
        let mut store2 = ParamStore::new();
        let ablated = TreeDecoder::register(&mut store2, &mut Initializer::new(9, 1.0), ablated_cfg, &AttentionRegistry::default()).unwrap();
        assert_eq!(store.num_scalars(), store2.num_scalars());
        let mut t1 = Tape::with_params(&store);
        let enc1 = encoded(&mut t1);
        let s1 = dec.bridge(&mut t1, &enc1).unwrap();
        let a = dec.step(&mut t1, &enc1, 5, s1, None, None, None).unwrap();
        let mut t2 = Tape::with_params(&store2);
        let enc2 = encoded(&mut t2);
        let s2 = ablated.bridge(&mut t2, &enc2).unwrap();
        let sib = t2.constant(Tensor::ones(&[4]));
        let b = ablated.step(&mut t2, &enc2, 5, s2, None, Some(sib), None).unwrap();
        assert_eq!(t1.value(a.logits), t2.value(b.logits));
    }
}
