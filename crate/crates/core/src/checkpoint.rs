//! Versioned little-endian checkpoint container.
//!
//! Layout: magic, u32 version, config text, input and output token lists,
//! u64 completed epochs, named parameter tensors (name, u32 ndim, u64 dims,
//! f64 values), an optional best-dev block and an optional Adam block.
//! Strings are u64 length plus UTF-8 bytes.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::Graph2Tree;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{Adam, BestSnapshot, TrainConfig, TrainState};
use crate::vocab::{Vocab, Vocabs};

pub const MAGIC: &[u8; 8] = b"G2TCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())
    }
    fn tokens(&mut self, v: &Vocab) -> io::Result<()> {
        self.u64(v.len() as u64)?;
        v.tokens().iter().try_for_each(|t| self.str(t))
    }
    fn values(&mut self, store: &ParamStore) -> io::Result<()> {
        store.iter().try_for_each(|(_, _, t)| self.f64s(t.data()))
    }
    fn buffers(&mut self, bufs: &[Vec<f64>]) -> io::Result<()> {
        bufs.iter().try_for_each(|b| self.f64s(b))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => corrupt("truncated file"),
            _ => e.into(),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(corrupt(format!("length {n} exceeds {limit}")));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1 << 24)?;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(|_| corrupt("truncated string"))?;
        String::from_utf8(b).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn tokens(&mut self) -> Result<Vocab> {
        let n = self.len(1 << 24)?;
        let toks = (0..n).map(|_| self.str()).collect::<Result<Vec<_>>>()?;
        Vocab::from_tokens(toks).map_err(corrupt)
    }
    /// Values for every tensor of `like`, in order.
    fn buffers(&mut self, like: &ParamStore) -> Result<Vec<Vec<f64>>> {
        like.iter().map(|(_, _, t)| self.f64s(t.len())).collect()
    }
}

pub fn write_state<W: Write>(state: &TrainState, out: W) -> Result<()> {
    let mut w = Writer(out);
    let m = &state.model;
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.str(&m.config.to_text())?;
    w.tokens(&m.vocabs.input)?;
    w.tokens(&m.vocabs.output)?;
    w.u64(state.epochs_done as u64)?;
    w.u64(m.params.len() as u64)?;
    for (_, name, t) in m.params.iter() {
        w.str(name)?;
        w.u32(t.ndim() as u32)?;
        for &d in t.shape() {
            w.u64(d as u64)?;
        }
        w.f64s(t.data())?;
    }
    match &state.best {
        Some(b) => {
            w.u8(1)?;
            w.f64s(&[b.dev_exact_match])?;
            w.u64(b.epoch as u64)?;
            w.values(&b.params)?;
        }
        None => w.u8(0)?,
    }
    w.u8(1)?;
    w.u64(state.adam.t)?;
    w.buffers(&state.adam.m)?;
    w.buffers(&state.adam.v)?;
    w.0.flush()?;
    Ok(())
}

/// Reads a checkpoint back into a resumable training state. The model is
/// rebuilt from the stored config and vocabularies, then every tensor is
/// overwritten and checked against the expected name and shape.
pub fn read_state<R: Read>(input: R) -> Result<TrainState> {
    let mut r = Reader(input);
    if &r.bytes::<8>()? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config = TrainConfig::parse_str(&r.str()?).map_err(|e| corrupt(format!("config: {e}")))?;
    let vocabs = Vocabs {
        input: r.tokens()?,
        output: r.tokens()?,
    };
    let epochs_done = r.u64()? as usize;
    let mut model = Graph2Tree::new(config, vocabs).map_err(corrupt)?;
    let count = r.len(1 << 20)?;
    if count != model.params.len() {
        return Err(corrupt(format!("expected {} tensors, found {count}", model.params.len())));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = r.str()?;
        let expected = model.params.name(id).to_string();
        if name != expected {
            return Err(corrupt(format!("expected tensor `{expected}`, found `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len(1 << 32)).collect::<Result<Vec<_>>>()?;
        if shape != model.params.get(id).shape() {
            return Err(corrupt(format!("tensor `{name}` has shape {shape:?}, model expects {:?}", model.params.get(id).shape())));
        }
        let data = r.f64s(shape.iter().product())?;
        model.params.set(id, Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?);
    }
    let best = match r.u8()? {
        0 => None,
        1 => {
            let dev_exact_match = r.f64s(1)?[0];
            let epoch = r.u64()? as usize;
            let mut params = model.params.clone();
            for (id, data) in params.ids().collect::<Vec<_>>().into_iter().zip(r.buffers(&model.params)?) {
                params.get_mut(id).data_mut().copy_from_slice(&data);
            }
            Some(BestSnapshot {
                dev_exact_match,
                epoch,
                params,
            })
        }
        f => return Err(corrupt(format!("bad best-block flag {f}"))),
    };
    let mut adam = Adam::new(model.config.learning_rate, &model.params);
    match r.u8()? {
        0 => {}
        1 => {
            adam.t = r.u64()?;
            adam.m = r.buffers(&model.params)?;
            adam.v = r.buffers(&model.params)?;
        }
        f => return Err(corrupt(format!("bad optimizer-block flag {f}"))),
    }
    let mut rest = Vec::new();
    r.0.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }
    Ok(TrainState {
        model,
        adam,
        epochs_done,
        best,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_state(state, io::BufWriter::new(file))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let file = std::fs::File::open(path)?;
    read_state(io::BufReader::new(file))
}

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut buf = Vec::new();
    write_state(state, &mut buf).expect("writing to memory cannot fail");
    buf
}

/// The model to use for inference: the best-dev weights when the checkpoint
/// has them, the latest otherwise.
pub fn load_for_inference(path: &Path) -> Result<Graph2Tree> {
    let mut state = load(path)?;
    state.restore_best();
    Ok(state.model)
}
