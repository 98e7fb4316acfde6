//! `key = value` configuration files.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::Task;
use crate::decoder::DecodeLimits;
use crate::graph::GraphType;

/// Model shape, ablation switches and optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub decoder_embed_dim: usize,
    pub decoder_hidden_dim: usize,
    pub hops: usize,
    pub dropout: f64,
    pub init_scale: f64,
    pub no_bilstm: bool,
    pub original_graphsage: bool,
    pub shared_streams: bool,
    pub collapse_unary: bool,
    pub parent_feeding: bool,
    pub sibling_feeding: bool,
    pub attention: String,
    pub graph_type: GraphType,
    pub task: Task,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub glove: Option<String>,
    pub max_len: usize,
    pub max_nodes: usize,
    pub max_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 300,
            hidden_dim: 300,
            decoder_embed_dim: 300,
            decoder_hidden_dim: 300,
            hops: 2,
            dropout: 0.1,
            init_scale: 0.08,
            no_bilstm: false,
            original_graphsage: false,
            shared_streams: false,
            collapse_unary: true,
            parent_feeding: true,
            sibling_feeding: true,
            attention: "separated".into(),
            graph_type: GraphType::Constituency,
            task: Task::Mwp,
            learning_rate: 0.001,
            batch_size: 30,
            epochs: 100,
            seed: 1,
            grad_clip: 5.0,
            glove: None,
            max_len: 60,
            max_nodes: 30,
            max_depth: 8,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid boolean `{value}` for `{key}`")),
    }
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "decoder_embed_dim" => self.decoder_embed_dim = parse(key, value)?,
            "decoder_hidden_dim" => self.decoder_hidden_dim = parse(key, value)?,
            "hops" => self.hops = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "no_bilstm" => self.no_bilstm = parse_bool(key, value)?,
            "original_graphsage" => self.original_graphsage = parse_bool(key, value)?,
            "shared_streams" => self.shared_streams = parse_bool(key, value)?,
            "collapse_unary" => self.collapse_unary = parse_bool(key, value)?,
            "parent_feeding" => self.parent_feeding = parse_bool(key, value)?,
            "sibling_feeding" => self.sibling_feeding = parse_bool(key, value)?,
            "attention" => self.attention = value.to_string(),
            "graph_type" => self.graph_type = value.parse().map_err(|e: crate::graph::GraphError| e.to_string())?,
            "task" => self.task = value.parse()?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "glove" => self.glove = (!value.is_empty()).then(|| value.to_string()),
            "max_len" => self.max_len = parse(key, value)?,
            "max_nodes" => self.max_nodes = parse(key, value)?,
            "max_depth" => self.max_depth = parse(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self, String> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.hops == 0 {
            return Err("hops must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if !self.no_bilstm && self.embed_dim % 2 != 0 {
            return Err("embed_dim must be even when the BiLSTM is used".into());
        }
        if self.max_len == 0 || self.max_nodes == 0 || self.max_depth == 0 {
            return Err("decode limits must be positive".into());
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("decoder_embed_dim", self.decoder_embed_dim),
            ("decoder_hidden_dim", self.decoder_hidden_dim),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn limits(&self) -> DecodeLimits {
        DecodeLimits {
            max_len: self.max_len,
            max_nodes: self.max_nodes,
            max_depth: self.max_depth,
        }
    }

    /// Every field as `key = value` lines; [`TrainConfig::parse_str`] reads
    /// it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("embed_dim", self.embed_dim.to_string());
        put("hidden_dim", self.hidden_dim.to_string());
        put("decoder_embed_dim", self.decoder_embed_dim.to_string());
        put("decoder_hidden_dim", self.decoder_hidden_dim.to_string());
        put("hops", self.hops.to_string());
        put("dropout", format!("{:?}", self.dropout));
        put("init_scale", format!("{:?}", self.init_scale));
        put("no_bilstm", self.no_bilstm.to_string());
        put("original_graphsage", self.original_graphsage.to_string());
        put("shared_streams", self.shared_streams.to_string());
        put("collapse_unary", self.collapse_unary.to_string());
        put("parent_feeding", self.parent_feeding.to_string());
        put("sibling_feeding", self.sibling_feeding.to_string());
        put("attention", self.attention.clone());
        put("graph_type", self.graph_type.to_string());
        put("task", self.task.to_string());
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("grad_clip", format!("{:?}", self.grad_clip));
        put("glove", self.glove.clone().unwrap_or_default());
        put("max_len", self.max_len.to_string());
        put("max_nodes", self.max_nodes.to_string());
        put("max_depth", self.max_depth.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!((c.embed_dim, c.decoder_hidden_dim), (300, 300));
        assert_eq!(c.attention, "separated");
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.dropout = 0.3;
        c.hops = 4;
        c.attention = "uniform".into();
        c.graph_type = GraphType::Chain;
        c.glove = Some("vectors.txt".into());
        assert_eq!(TrainConfig::parse_str(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = TrainConfig::parse_str("# toy\nhops = 3 # inline\n\nsibling_feeding = false\n").unwrap();
        assert_eq!(c.hops, 3);
        assert!(!c.sibling_feeding);
        assert!(TrainConfig::parse_str("hops 3").unwrap_err().contains("line 1"));
        assert!(TrainConfig::parse_str("x\nbogus = 1").is_err());
        assert!(TrainConfig::parse_str("dropout = 1.0").is_err());
        assert!(TrainConfig::parse_str("learning_rate = 0").is_err());
        assert!(TrainConfig::parse_str("graph_type = tree").is_err());
    }
}
