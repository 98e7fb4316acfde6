use super::{Result, Tape, Var};
use crate::params::{Initializer, ParamId, ParamStore};

/// Affine map `x · W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let w = store.register(format!("{name}.w"), init.uniform(&[input, output]));
        let b = bias.then(|| store.register(format!("{name}.b"), init.uniform(&[output])));
        Linear { w, b, input, output }
    }

    /// Works on a single vector or on every row of a matrix.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b)?;
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Single LSTM cell with input, forget, candidate and output gates packed in
/// that order along the last axis of the weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, name: &str, input: usize, hidden: usize) -> Self {
        let w_x = store.register(format!("{name}.w_x"), init.uniform(&[input, 4 * hidden]));
        let w_h = store.register(format!("{name}.w_h"), init.uniform(&[hidden, 4 * hidden]));
        let b = store.register(format!("{name}.b"), init.uniform(&[4 * hidden]));
        LstmCell {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    /// One step: returns the new `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let (w_x, w_h, b) = (tape.param(self.w_x)?, tape.param(self.w_h)?, tape.param(self.b)?);
        let xw = tape.matmul(x, w_x)?;
        let hw = tape.matmul(h, w_h)?;
        let pre = tape.add(xw, hw)?;
        let gates = tape.add(pre, b)?;
        let i = tape.slice(gates, 0, n)?;
        let f = tape.slice(gates, n, n)?;
        let g = tape.slice(gates, 2 * n, n)?;
        let o = tape.slice(gates, 3 * n, n)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_new = tape.add(keep, write)?;
        let squashed = tape.tanh(c_new);
        let h_new = tape.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}
