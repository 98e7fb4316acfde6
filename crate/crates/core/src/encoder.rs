//! Bidirectional GraphSAGE encoder over heterogeneous text graphs.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeKind, TextGraph};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{Linear, LstmCell, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Width of h⁰; the BiLSTM runs `embed_dim / 2` units per direction.
    pub embed_dim: usize,
    /// Width of h^k for k ≥ 1.
    pub hidden_dim: usize,
    /// Width of the graph embedding g.
    pub graph_dim: usize,
    pub hops: usize,
    pub no_bilstm: bool,
    pub original_graphsage: bool,
    /// Run one stream updated by a single W^k instead of two.
    pub shared_streams: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    m_fwd: ParamId,
    m_bwd: Option<ParamId>,
    w_fwd: ParamId,
    w_bwd: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    cfg: EncoderConfig,
    pub embedding: ParamId,
    bilstm: Option<(LstmCell, LstmCell)>,
    hops: Vec<Hop>,
    gate: Option<ParamId>,
    fc: Linear,
}

/// Output of [`GraphEncoder::encode`].
#[derive(Debug, Clone)]
pub struct EncodedGraph {
    /// Node embeddings, one row per node id.
    pub z: Var,
    pub g: Var,
    pub kinds: Vec<NodeKind>,
    /// Node ids of word nodes, ascending.
    pub word_rows: Vec<usize>,
    /// Node ids of relation nodes, ascending.
    pub relation_rows: Vec<usize>,
}

impl GraphEncoder {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, cfg: EncoderConfig) -> std::result::Result<Self, String> {
        if cfg.hops == 0 {
            return Err("hops must be at least 1".into());
        }
        if !cfg.no_bilstm && cfg.embed_dim % 2 != 0 {
            return Err(format!("embed_dim {} must be even for the BiLSTM", cfg.embed_dim));
        }
        let embedding = store.register("enc.embedding", init.uniform(&[cfg.vocab_size, cfg.embed_dim]));
        let bilstm = (!cfg.no_bilstm).then(|| {
            let half = cfg.embed_dim / 2;
            (
                LstmCell::register(store, init, "enc.lstm_fwd", cfg.embed_dim, half),
                LstmCell::register(store, init, "enc.lstm_bwd", cfg.embed_dim, half),
            )
        });
        let two_streams = !cfg.original_graphsage && !cfg.shared_streams;
        let d = cfg.hidden_dim;
        let mut hops = Vec::with_capacity(cfg.hops);
        for k in 1..=cfg.hops {
            let d_in = if k == 1 { cfg.embed_dim } else { d };
            let m_fwd = store.register(format!("enc.hop{k}.m_fwd"), init.uniform(&[d_in, d]));
            let m_bwd = (!cfg.original_graphsage).then(|| store.register(format!("enc.hop{k}.m_bwd"), init.uniform(&[d_in, d])));
            let w_fwd = store.register(format!("enc.hop{k}.w_fwd"), init.uniform(&[d_in + d, d]));
            let w_bwd = two_streams.then(|| store.register(format!("enc.hop{k}.w_bwd"), init.uniform(&[d_in + d, d])));
            hops.push(Hop { m_fwd, m_bwd, w_fwd, w_bwd });
        }
        let gate = (!cfg.original_graphsage).then(|| store.register("enc.gate", init.uniform(&[4 * d, d])));
        let fc = Linear::register(store, init, "enc.fc", Self::node_dim_of(&cfg), cfg.graph_dim, true);
        Ok(GraphEncoder {
            cfg,
            embedding,
            bilstm,
            hops,
            gate,
            fc,
        })
    }

    fn node_dim_of(cfg: &EncoderConfig) -> usize {
        if cfg.original_graphsage {
            cfg.hidden_dim
        } else {
            2 * cfg.hidden_dim
        }
    }

    /// Width of the rows of z.
    pub fn node_dim(&self) -> usize {
        Self::node_dim_of(&self.cfg)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// h⁰: BiLSTM states for word nodes (or raw embeddings with
    /// `no_bilstm`), table embeddings for relation nodes.
    pub fn init_node_states(&self, tape: &mut Tape, graph: &TextGraph, node_ids: &[usize]) -> Result<Var> {
        if graph.num_nodes() == 0 {
            return Err(TensorError::EmptyGraph);
        }
        if node_ids.len() != graph.num_nodes() {
            return Err(TensorError::Count {
                op: "init_node_states",
                expected: graph.num_nodes(),
                got: node_ids.len(),
            });
        }
        let table = tape.param(self.embedding)?;
        let emb = tape.index_rows(table, node_ids)?;
        let Some((fwd, bwd)) = &self.bilstm else {
            return Ok(emb);
        };
        let words = graph.word_ids();
        let half = fwd.hidden;
        let zero = tape.constant(Tensor::zeros(&[half]));
        let inputs: Vec<Var> = words.iter().map(|&v| tape.row(emb, v)).collect::<Result<_>>()?;

        let mut fwd_states = Vec::with_capacity(words.len());
        let (mut h, mut c) = (zero, zero);
        for &x in &inputs {
            (h, c) = fwd.step(tape, x, h, c)?;
            fwd_states.push(h);
        }
        let mut bwd_states = vec![zero; words.len()];
        let (mut h, mut c) = (zero, zero);
        for (i, &x) in inputs.iter().enumerate().rev() {
            (h, c) = bwd.step(tape, x, h, c)?;
            bwd_states[i] = h;
        }

        let mut rows: Vec<Option<Var>> = vec![None; graph.num_nodes()];
        for (i, &v) in words.iter().enumerate() {
            rows[v] = Some(tape.concat(&[fwd_states[i], bwd_states[i]], 0)?);
        }
        let rows: Vec<Var> = rows
            .into_iter()
            .enumerate()
            .map(|(v, r)| match r {
                Some(r) => Ok(r),
                None => tape.row(emb, v),
            })
            .collect::<Result<_>>()?;
        tape.stack(&rows)
    }

    /// Runs the encoder. Dropout on h⁰ is applied only when `rng` is given.
    pub fn encode(&self, tape: &mut Tape, graph: &TextGraph, node_ids: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<EncodedGraph> {
        let mut h0 = self.init_node_states(tape, graph, node_ids)?;
        if let Some(rng) = rng {
            h0 = tape.dropout(h0, self.cfg.dropout, rng);
        }
        let succ = Rc::new(graph.forward_adj().to_vec());
        let pred = Rc::new(graph.backward_adj().to_vec());

        let z = if self.cfg.original_graphsage {
            let mut h = h0;
            for hop in &self.hops {
                let m = tape.param(hop.m_fwd)?;
                let agg = aggregate_neighborhood(tape, h, succ.clone(), m)?;
                let w = tape.param(hop.w_fwd)?;
                h = update_nodes(tape, h, agg, w)?;
            }
            h
        } else {
            let w_z = tape.param(self.gate.expect("registered with fusion"))?;
            let (mut hf, mut hb) = (h0, h0);
            for hop in &self.hops {
                let m_f = tape.param(hop.m_fwd)?;
                let m_b = tape.param(hop.m_bwd.expect("registered with fusion"))?;
                let agg_f = aggregate_neighborhood(tape, hf, succ.clone(), m_f)?;
                let agg_b = aggregate_neighborhood(tape, hb, pred.clone(), m_b)?;
                let fused = fuse(tape, agg_f, agg_b, w_z)?;
                let w_f = tape.param(hop.w_fwd)?;
                match hop.w_bwd {
                    Some(w_b) => {
                        let w_b = tape.param(w_b)?;
                        let next_f = update_nodes(tape, hf, fused, w_f)?;
                        hb = update_nodes(tape, hb, fused, w_b)?;
                        hf = next_f;
                    }
                    None => {
                        hf = update_nodes(tape, hf, fused, w_f)?;
                        hb = hf;
                    }
                }
            }
            tape.concat(&[hf, hb], 1)?
        };

        let projected = self.fc.forward(tape, z)?;
        let projected = tape.relu(projected);
        let g = tape.max_pool_rows(projected)?;
        Ok(EncodedGraph {
            z,
            g,
            kinds: graph.kinds(),
            word_rows: (0..graph.num_nodes()).filter(|&v| graph.nodes()[v].kind == NodeKind::Word).collect(),
            relation_rows: graph.relation_ids(),
        })
    }
}

/// `relu(mean_{u ∈ adj(v)} h_u · M)` per node; empty neighborhoods
/// contribute the zero vector.
pub fn aggregate_neighborhood(tape: &mut Tape, h: Var, adj: Rc<Vec<Vec<usize>>>, m: Var) -> Result<Var> {
    let mean = tape.neighbor_mean(h, adj)?;
    let mapped = tape.matmul(mean, m)?;
    Ok(tape.relu(mapped))
}

/// Gated fusion `w ⊙ h1 + (1 − w) ⊙ h2` with
/// `w = sigmoid([h1; h2; h1 ⊙ h2; h1 − h2] · W_z)`, evaluated as
/// `h2 + w ⊙ (h1 − h2)` so that equal inputs come back unchanged.
pub fn fuse(tape: &mut Tape, h1: Var, h2: Var, w_z: Var) -> Result<Var> {
    let prod = tape.mul(h1, h2)?;
    let diff = tape.sub(h1, h2)?;
    let axis = tape.shape(h1).len() - 1;
    let features = tape.concat(&[h1, h2, prod, diff], axis)?;
    let pre = tape.matmul(features, w_z)?;
    let w = tape.sigmoid(pre);
    let moved = tape.mul(w, diff)?;
    tape.add(h2, moved)
}

/// `relu([h; h_N] · W)` row by row.
pub fn update_nodes(tape: &mut Tape, h: Var, h_n: Var, w: Var) -> Result<Var> {
    let axis = tape.shape(h).len() - 1;
    let joined = tape.concat(&[h, h_n], axis)?;
    let mapped = tape.matmul(joined, w)?;
    Ok(tape.relu(mapped))
}
