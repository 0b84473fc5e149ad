//! Layer functions. Each one evaluates through a [`Graph`], so the code path
//! tested here is the one used during training.

use super::graph::{BatchStats, Graph, Mode, ParamStore, Var};
use super::{NnError, RngStream, Tensor};

/// `x W + b` for `x [*, n]`, `W [n, m]`, `b [m]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.matmul(xv, wv)?;
    let y = g.add_row_vec(y, bv)?;
    Ok(g.value(y).clone())
}

/// LSTM weights with gate blocks ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `[n_in, 4u]`
    pub w: Tensor,
    /// `[u, 4u]`
    pub u: Tensor,
    /// `[4u]`
    pub b: Tensor,
}

/// GRU weights with gate blocks ordered update, reset, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    /// `[n_in, 3u]`
    pub w: Tensor,
    /// `[u, 2u]` recurrent weights of the update and reset gates
    pub u_zr: Tensor,
    /// `[u, u]` recurrent weights of the candidate
    pub u_h: Tensor,
    /// `[3u]`
    pub b: Tensor,
}

/// One LSTM step in a graph. `xw` is the input projection `x W`, `h_rec`
/// the (possibly dropout-masked) state fed to the recurrent matmul.
pub fn lstm_cell(
    g: &mut Graph,
    xw: Var,
    h_rec: Var,
    c: Var,
    u: Var,
    b: Var,
    units: usize,
) -> Result<(Var, Var), NnError> {
    let rec = g.matmul(h_rec, u)?;
    let pre = g.add_row_vec(xw, b)?;
    let pre = g.add(pre, rec)?;
    let i = g.slice_cols(pre, 0, units)?;
    let f = g.slice_cols(pre, units, 2 * units)?;
    let cand = g.slice_cols(pre, 2 * units, 3 * units)?;
    let o = g.slice_cols(pre, 3 * units, 4 * units)?;
    let (i, f, cand, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(cand), g.sigmoid(o));
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// One GRU step: `h' = (1 - z) * h + z * tanh(x W_h + (r * h_rec) U_h + b_h)`.
#[allow(clippy::too_many_arguments)]
pub fn gru_cell(
    g: &mut Graph,
    xw: Var,
    h: Var,
    h_rec: Var,
    u_zr: Var,
    u_h: Var,
    b: Var,
    units: usize,
) -> Result<Var, NnError> {
    let xb = g.add_row_vec(xw, b)?;
    let x_zr = g.slice_cols(xb, 0, 2 * units)?;
    let x_h = g.slice_cols(xb, 2 * units, 3 * units)?;
    let rec = g.matmul(h_rec, u_zr)?;
    let zr = g.add(x_zr, rec)?;
    let zr = g.sigmoid(zr);
    let z = g.slice_cols(zr, 0, units)?;
    let r = g.slice_cols(zr, units, 2 * units)?;
    let rh = g.mul(r, h_rec)?;
    let rec_h = g.matmul(rh, u_h)?;
    let cand = g.add(x_h, rec_h)?;
    let cand = g.tanh(cand);
    let one_minus_z = g.affine(z, -1.0, 1.0);
    let keep = g.mul(one_minus_z, h)?;
    let write = g.mul(z, cand)?;
    g.add(keep, write)
}

fn as_row(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    t.clone().reshape(&[r, c]).expect("same element count")
}

/// Single LSTM step on unbatched vectors `x_t [n_in]`, `h [u]`, `c [u]`.
pub fn lstm_step(x_t: &Tensor, h: &Tensor, c: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor), NnError> {
    let units = h.len();
    if c.len() != units || p.u.shape() != [units, 4 * units] || p.b.len() != 4 * units {
        return Err(NnError::Shape(format!(
            "lstm_step: h {:?}, c {:?}, U {:?}, b {:?}",
            h.shape(),
            c.shape(),
            p.u.shape(),
            p.b.shape()
        )));
    }
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let x = g.constant(as_row(x_t));
    let w = g.constant(p.w.clone());
    let xw = g.matmul(x, w)?;
    let (hv, cv) = (g.constant(as_row(h)), g.constant(as_row(c)));
    let (u, b) = (g.constant(p.u.clone()), g.constant(p.b.clone()));
    let (h2, c2) = lstm_cell(&mut g, xw, hv, cv, u, b, units)?;
    Ok((
        g.value(h2).clone().reshape(&[units])?,
        g.value(c2).clone().reshape(&[units])?,
    ))
}

/// Single GRU step on unbatched vectors.
pub fn gru_step(x_t: &Tensor, h: &Tensor, p: &GruParams) -> Result<Tensor, NnError> {
    let units = h.len();
    if p.u_zr.shape() != [units, 2 * units] || p.u_h.shape() != [units, units] || p.b.len() != 3 * units {
        return Err(NnError::Shape(format!(
            "gru_step: h {:?}, U_zr {:?}, U_h {:?}, b {:?}",
            h.shape(),
            p.u_zr.shape(),
            p.u_h.shape(),
            p.b.shape()
        )));
    }
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let x = g.constant(as_row(x_t));
    let w = g.constant(p.w.clone());
    let xw = g.matmul(x, w)?;
    let hv = g.constant(as_row(h));
    let (uzr, uh, b) = (g.constant(p.u_zr.clone()), g.constant(p.u_h.clone()), g.constant(p.b.clone()));
    let h2 = gru_cell(&mut g, xw, hv, hv, uzr, uh, b, units)?;
    g.value(h2).clone().reshape(&[units])
}

/// Same-padded, stride-1 cross-correlation of `x [L, Cin]` with `kernels [k, Cin, Cout]`.
pub fn conv1d(x: &Tensor, kernels: &Tensor) -> Result<Tensor, NnError> {
    let (len, _) = x.dims2();
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let (xv, kv) = (g.constant(x.clone()), g.constant(kernels.clone()));
    let y = g.conv1d(xv, kv, len)?;
    Ok(g.value(y).clone())
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.9;

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn as_batch_stats(&self) -> BatchStats {
        BatchStats {
            mean: self.mean.clone(),
            var: self.var.clone(),
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

/// Per-channel batch normalization of `x [R, C]`.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    running: &mut RunningStats,
) -> Result<Tensor, NnError> {
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let (xv, gv, bv) = (g.constant(x.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
    let (y, stats) = g.batch_norm(xv, gv, bv, mode, &running.as_batch_stats())?;
    if mode == Mode::Train {
        running.update(&stats);
    }
    Ok(g.value(y).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Global,
    Window(usize),
}

/// Average pooling over the time axis of `x [L, C]`.
pub fn avg_pool(x: &Tensor, pool: Pool) -> Result<Tensor, NnError> {
    let (len, _) = x.dims2();
    let window = match pool {
        Pool::Global => len,
        Pool::Window(w) => w,
    };
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let xv = g.constant(x.clone());
    let y = g.time_pool(xv, len, window)?;
    Ok(g.value(y).clone())
}

pub fn check_rate(rate: f64) -> Result<(), NnError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut RngStream) -> Result<Tensor, NnError> {
    check_rate(rate)?;
    let mut m = Tensor::full(shape, 1.0);
    if rate > 0.0 {
        let keep = 1.0 / (1.0 - rate);
        for v in m.data_mut() {
            *v = if rng.unit() < rate { 0.0 } else { keep };
        }
    }
    Ok(m)
}

/// Inverted dropout in train mode; identity in infer mode.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut RngStream) -> Result<Tensor, NnError> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.shape(), rate, rng)?;
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let (xv, mv) = (g.constant(x.clone()), g.constant(mask));
    let y = g.mul(xv, mv)?;
    Ok(g.value(y).clone())
}

/// Softmax probabilities of `logits [V]` and the cross-entropy against `target`.
pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<(Tensor, f64), NnError> {
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let l = g.constant(as_row(logits));
    let loss = g.softmax_xent(l, &[target as u32])?;
    let probs = g.probs(loss).expect("softmax node").clone().reshape(logits.shape())?;
    Ok((probs, g.value(loss).data()[0]))
}
