//! Encoder, decoder, vocabularies and weights bundled as one model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::decoder::{AttentionRecord, AttentionRegistry, DecoderConfig, TreeDecoder};
use crate::encoder::{EncoderConfig, GraphEncoder};
use crate::glove::{fill_embedding, read_glove};
use crate::graph::TextGraph;
use crate::params::{Initializer, ParamStore};
use crate::tensor::{Result, Tape};
use crate::train::TrainConfig;
use crate::tree::OutputTree;
use crate::vocab::{Vocab, Vocabs};

pub struct Graph2Tree {
    pub config: TrainConfig,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub encoder: GraphEncoder,
    pub decoder: TreeDecoder,
}

impl Graph2Tree {
    /// Registers every weight, drawn from uniform(±init_scale) with the
    /// configured seed.
    pub fn new(config: TrainConfig, vocabs: Vocabs) -> std::result::Result<Self, String> {
        Self::with_registry(config, vocabs, &AttentionRegistry::default())
    }

    pub fn with_registry(config: TrainConfig, vocabs: Vocabs, attention: &AttentionRegistry) -> std::result::Result<Self, String> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(config.seed, config.init_scale);
        let encoder = GraphEncoder::register(
            &mut params,
            &mut init,
            EncoderConfig {
                vocab_size: vocabs.input.len(),
                embed_dim: config.embed_dim,
                hidden_dim: config.hidden_dim,
                graph_dim: config.decoder_hidden_dim,
                hops: config.hops,
                no_bilstm: config.no_bilstm,
                original_graphsage: config.original_graphsage,
                shared_streams: config.shared_streams,
                dropout: config.dropout,
            },
        )?;
        let decoder = TreeDecoder::register(
            &mut params,
            &mut init,
            DecoderConfig {
                vocab_size: vocabs.output.len(),
                embed_dim: config.decoder_embed_dim,
                hidden_dim: config.decoder_hidden_dim,
                node_dim: encoder.node_dim(),
                graph_dim: config.decoder_hidden_dim,
                parent_feeding: config.parent_feeding,
                sibling_feeding: config.sibling_feeding,
                attention: config.attention.clone(),
            },
            attention,
        )?;
        Ok(Graph2Tree {
            config,
            vocabs,
            params,
            encoder,
            decoder,
        })
    }

    /// Overwrites the input embedding table from a GloVe file; returns the
    /// number of vocabulary entries found.
    pub fn load_glove(&mut self, path: &Path) -> std::result::Result<usize, String> {
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let vocab: &Vocab = &self.vocabs.input;
        let vectors = read_glove(std::io::BufReader::new(file), self.config.embed_dim, |t| vocab.get(t).is_some()).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let table = self.params.get_mut(self.encoder.embedding);
        fill_embedding(table, &self.vocabs.input, &vectors, &mut rng).map_err(|e| e.to_string())
    }

    /// Builds the loss of one example on `tape`. Dropout is active only
    /// when `rng` is given.
    pub fn loss_on(&self, tape: &mut Tape, ex: &Example, rng: Option<&mut ChaCha8Rng>) -> Result<crate::tensor::Var> {
        let ids = self.vocabs.node_ids(&ex.graph);
        let enc = self.encoder.encode(tape, &ex.graph, &ids, rng)?;
        self.decoder.teacher_forced_loss(tape, &enc, &ex.tree, &self.vocabs.output)
    }

    /// Loss of one example and its gradient, added into `grads` (one buffer
    /// per parameter, in registration order).
    pub fn accumulate_grads(&self, ex: &Example, rng: Option<&mut ChaCha8Rng>, grads: &mut [Vec<f64>]) -> Result<f64> {
        let mut tape = Tape::with_params(&self.params);
        let loss = self.loss_on(&mut tape, ex, rng)?;
        tape.backward(loss)?;
        for (id, g) in tape.param_grads() {
            for (acc, v) in grads[id.index()].iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(tape.value(loss).item())
    }

    /// Teacher-forced loss without dropout.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let mut tape = Tape::with_params(&self.params);
        let loss = self.loss_on(&mut tape, ex, None)?;
        Ok(tape.value(loss).item())
    }

    pub fn predict(&self, graph: &TextGraph) -> Result<OutputTree> {
        self.decode(graph, None)
    }

    /// Greedy decode that also returns the attention weights of every step.
    pub fn predict_traced(&self, graph: &TextGraph) -> Result<(OutputTree, Vec<AttentionRecord>)> {
        let mut trace = Vec::new();
        let tree = self.decode(graph, Some(&mut trace))?;
        Ok((tree, trace))
    }

    fn decode(&self, graph: &TextGraph, trace: Option<&mut Vec<AttentionRecord>>) -> Result<OutputTree> {
        let mut tape = Tape::with_params(&self.params);
        let ids = self.vocabs.node_ids(graph);
        let enc = self.encoder.encode(&mut tape, graph, &ids, None)?;
        self.decoder.decode_greedy(&mut tape, &enc, &self.vocabs.output, self.config.limits(), trace)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_dataset, LoadOptions, Task};
    use crate::graph::GraphType;
    use crate::vocab::build_vocabs;

    fn small_config() -> TrainConfig {
        TrainConfig {
            embed_dim: 6,
            hidden_dim: 5,
            decoder_embed_dim: 4,
            decoder_hidden_dim: 7,
            graph_type: GraphType::Chain,
            ..Default::default()
        }
    }

    fn examples() -> Vec<Example> {
        let text = concat!(
            r#"{"id":"a","text":"what is 3 plus 4 ?","target":"x = ( 3 + 4 )"}"#,
            "\n",
            r#"{"id":"b","text":"twice 5 is what ?","target":"x = 2.0 * 5"}"#,
        );
        parse_dataset(
            text,
            LoadOptions {
                graph_type: GraphType::Chain,
                task: Task::Mwp,
                collapse_unary: true,
            },
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let exs = examples();
        let v = build_vocabs(&exs).unwrap();
        let a = Graph2Tree::new(small_config(), v.clone()).unwrap();
        let b = Graph2Tree::new(small_config(), v).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn ablations_change_parameter_layout() {
        let exs = examples();
        let v = build_vocabs(&exs).unwrap();
        let count = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = small_config();
            f(&mut c);
            Graph2Tree::new(c, v.clone()).unwrap().params.num_scalars()
        };
        let full = count(&|_| {});
        assert!(count(&|c| c.attention = "none".into()) < full);
        assert!(count(&|c| c.no_bilstm = true) < full);
        assert!(count(&|c| c.original_graphsage = true) < full);
        assert_eq!(count(&|c| c.parent_feeding = false), full);
        let mut bad = small_config();
        bad.attention = "cross".into();
        assert!(Graph2Tree::new(bad, v.clone()).is_err());
    }

    #[test]
    fn loss_and_prediction_run() {
        let exs = examples();
        let m = Graph2Tree::new(small_config(), build_vocabs(&exs).unwrap()).unwrap();
        let l = m.loss(&exs[0]).unwrap();
        assert!(l.is_finite() && l > 0.0);
        let mut grads = m.zero_grads();
        let l2 = m.accumulate_grads(&exs[0], None, &mut grads).unwrap();
        assert_eq!(l, l2);
        assert!(grads.iter().flatten().any(|g| *g != 0.0));
        let t = m.predict(&exs[1].graph).unwrap();
        t.validate().unwrap();
    }
}
