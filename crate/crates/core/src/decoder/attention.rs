//! Attention variants behind one trait, selected by name.

use std::collections::BTreeMap;

use crate::encoder::EncodedGraph;
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{Linear, Result, Tape, Tensor, TensorError, Var};

/// Sizes an attention module is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    /// Decoder hidden width (rows of s_t).
    pub hidden: usize,
    /// Width of the node embeddings z_v.
    pub node: usize,
}

/// Weights of one decode step, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// Distribution over word nodes (over all nodes for `uniform`).
    pub alpha: Vec<f64>,
    /// Distribution over relation nodes; empty when there are none.
    pub beta: Vec<f64>,
    /// The relation-side context vector.
    pub relation_context: Vec<f64>,
}

pub trait AttentionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Maps the decoder state `s` to the attentional state s̃.
    fn attend(&self, tape: &mut Tape, enc: &EncodedGraph, s: Var, trace: Option<&mut Vec<AttentionRecord>>) -> Result<Var>;
}

pub type AttentionFactory = fn(&mut ParamStore, &mut Initializer, AttentionDims) -> Box<dyn AttentionStrategy>;

/// Attention constructors keyed by name.
pub struct AttentionRegistry {
    factories: BTreeMap<&'static str, AttentionFactory>,
}

impl Default for AttentionRegistry {
    fn default() -> Self {
        let mut r = AttentionRegistry {
            factories: BTreeMap::new(),
        };
        r.register("separated", |s, i, d| Box::new(SeparatedAttention::register(s, i, d)));
        r.register("uniform", |s, i, d| Box::new(UniformAttention::register(s, i, d)));
        r.register("none", |s, i, d| Box::new(NoAttention::register(s, i, d)));
        r
    }
}

impl AttentionRegistry {
    pub fn register(&mut self, name: &'static str, f: AttentionFactory) {
        self.factories.insert(name, f);
    }

    pub fn build(&self, name: &str, store: &mut ParamStore, init: &mut Initializer, dims: AttentionDims) -> std::result::Result<Box<dyn AttentionStrategy>, String> {
        let f = self.factories.get(name).ok_or_else(|| {
            let known: Vec<_> = self.factories.keys().copied().collect();
            format!("unknown attention `{name}` (known: {})", known.join(", "))
        })?;
        Ok(f(store, init, dims))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

/// Bilinear scores `s · W_a · z_vᵀ` over `rows`, softmax-normalized, and the
/// resulting context vector.
fn attend_rows(tape: &mut Tape, z: Var, rows: &[usize], q: Var) -> Result<(Var, Var)> {
    let sub = tape.index_rows(z, rows)?;
    let scores = tape.matvec(sub, q)?;
    let weights = tape.softmax(scores)?;
    let context = tape.matmul(weights, sub)?;
    Ok((weights, context))
}

fn combine(tape: &mut Tape, out: &Linear, c1: Var, c2: Var, s: Var) -> Result<Var> {
    let joined = tape.concat(&[c1, c2, s], 0)?;
    let pre = out.forward(tape, joined)?;
    Ok(tape.tanh(pre))
}

/// Independent softmaxes over word nodes and relation nodes.
pub struct SeparatedAttention {
    w_a: ParamId,
    out: Linear,
    node: usize,
}

impl SeparatedAttention {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, d: AttentionDims) -> Self {
        SeparatedAttention {
            w_a: store.register("att.w_a", init.uniform(&[d.hidden, d.node])),
            out: Linear::register(store, init, "att.combine", 2 * d.node + d.hidden, d.hidden, true),
            node: d.node,
        }
    }
}

impl AttentionStrategy for SeparatedAttention {
    fn name(&self) -> &'static str {
        "separated"
    }

    fn attend(&self, tape: &mut Tape, enc: &EncodedGraph, s: Var, trace: Option<&mut Vec<AttentionRecord>>) -> Result<Var> {
        if enc.word_rows.is_empty() {
            return Err(TensorError::Empty { op: "attention over word nodes" });
        }
        let w_a = tape.param(self.w_a)?;
        let q = tape.matmul(s, w_a)?;
        let (alpha, c1) = attend_rows(tape, enc.z, &enc.word_rows, q)?;
        let (beta, c2) = if enc.relation_rows.is_empty() {
            (None, tape.constant(Tensor::zeros(&[self.node])))
        } else {
            let (b, c) = attend_rows(tape, enc.z, &enc.relation_rows, q)?;
            (Some(b), c)
        };
        if let Some(trace) = trace {
            trace.push(AttentionRecord {
                alpha: tape.value(alpha).data().to_vec(),
                beta: beta.map(|b| tape.value(b).data().to_vec()).unwrap_or_default(),
                relation_context: tape.value(c2).data().to_vec(),
            });
        }
        combine(tape, &self.out, c1, c2, s)
    }
}

/// One softmax over every node; the context fills both slots.
pub struct UniformAttention {
    w_a: ParamId,
    out: Linear,
}

impl UniformAttention {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, d: AttentionDims) -> Self {
        UniformAttention {
            w_a: store.register("att.w_a", init.uniform(&[d.hidden, d.node])),
            out: Linear::register(store, init, "att.combine", 2 * d.node + d.hidden, d.hidden, true),
        }
    }
}

impl AttentionStrategy for UniformAttention {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn attend(&self, tape: &mut Tape, enc: &EncodedGraph, s: Var, trace: Option<&mut Vec<AttentionRecord>>) -> Result<Var> {
        let all: Vec<usize> = (0..enc.kinds.len()).collect();
        if all.is_empty() {
            return Err(TensorError::EmptyGraph);
        }
        let w_a = tape.param(self.w_a)?;
        let q = tape.matmul(s, w_a)?;
        let (alpha, c) = attend_rows(tape, enc.z, &all, q)?;
        if let Some(trace) = trace {
            trace.push(AttentionRecord {
                alpha: tape.value(alpha).data().to_vec(),
                beta: Vec::new(),
                relation_context: tape.value(c).data().to_vec(),
            });
        }
        combine(tape, &self.out, c, c, s)
    }
}

/// No contexts: s̃ = tanh(W_c · s + b_c).
pub struct NoAttention {
    out: Linear,
}

impl NoAttention {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, d: AttentionDims) -> Self {
        NoAttention {
            out: Linear::register(store, init, "att.combine", d.hidden, d.hidden, true),
        }
    }
}

impl AttentionStrategy for NoAttention {
    fn name(&self) -> &'static str {
        "none"
    }

    fn attend(&self, tape: &mut Tape, _enc: &EncodedGraph, s: Var, _trace: Option<&mut Vec<AttentionRecord>>) -> Result<Var> {
        let pre = self.out.forward(tape, s)?;
        Ok(tape.tanh(pre))
    }
}
