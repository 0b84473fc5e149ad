//! Parameter layout and forward pass of the five architectures.

use super::{ModelConfig, ModelError, ModelKind};
use crate::nncore::graph::{softmax_in_place, BatchStats, Graph, Mode, ParamStore, Pid, Var};
use crate::nncore::init::{glorot_uniform, lstm_bias};
use crate::nncore::layers::{dropout_mask, gru_cell, lstm_cell, RunningStats};
use crate::nncore::{NnError, RngStream, Tensor};
use crate::textprep::OOV_ID;

/// Recurrent state per batch slot: `h [B, u]`, and `c [B, u]` for LSTMs.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl RecurrentState {
    pub fn zeros(batch: usize, units: usize, with_cell: bool) -> Self {
        Self {
            h: Tensor::zeros(&[batch, units]),
            c: with_cell.then(|| Tensor::zeros(&[batch, units])),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.dims2().0
    }

    /// Rows `0..n` of every state tensor.
    pub fn take_rows(&self, n: usize) -> Self {
        let cut = |t: &Tensor| {
            let (_, u) = t.dims2();
            Tensor::from_vec(&[n, u], t.data()[..n * u].to_vec()).expect("row slice")
        };
        Self {
            h: cut(&self.h),
            c: self.c.as_ref().map(cut),
        }
    }

    /// Overwrites rows `0..other.batch()` with `other`.
    pub fn put_rows(&mut self, other: &RecurrentState) {
        let n = other.h.len();
        self.h.data_mut()[..n].copy_from_slice(other.h.data());
        if let (Some(c), Some(oc)) = (&mut self.c, &other.c) {
            c.data_mut()[..n].copy_from_slice(oc.data());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Recurrent {
    Lstm { w: Pid, u: Pid, b: Pid },
    Gru { w: Pid, u_zr: Pid, u_h: Pid, b: Pid },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvBlock {
    w: Pid,
    b: Pid,
    gamma: Pid,
    beta: Pid,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    recurrent: Option<Recurrent>,
    conv: Vec<ConvBlock>,
    head_w: Pid,
    head_b: Pid,
    copy: Option<(Pid, Pid)>,
}

/// A built (possibly trained) network: parameters, batch-norm statistics and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub max_len: usize,
    pub params: ParamStore,
    pub bn: Vec<RunningStats>,
    layout: Layout,
}

const MASKED_SCORE: f64 = -1e9;

/// Result of one forward pass over a batch.
pub struct ForwardOut {
    /// `[batch, V]` class scores, followed by `L` position scores when the
    /// copy head is on. See [`Network::target_sets`] and [`Network::class_log_probs`].
    pub logits: Var,
    pub state: Option<RecurrentState>,
    pub bn_stats: Vec<BatchStats>,
}

impl Network {
    pub fn build(config: &ModelConfig, vocab_size: usize, max_len: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab_size == 0 || max_len == 0 {
            return Err(ModelError::Config(format!(
                "vocabulary size {vocab_size} and sequence length {max_len} must be positive"
            )));
        }
        let mut rng = RngStream::new(seed);
        let mut ps = ParamStore::new();
        let (v, u) = (vocab_size, config.units);
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        if config.kind.has_conv() {
            let mut cin = v;
            for (i, (&f, &k)) in config.filters.iter().zip(&config.kernels).enumerate() {
                let n = i + 1;
                conv.push(ConvBlock {
                    w: ps.add(format!("conv{n}.w"), glorot_uniform(&[k, cin, f], &mut rng)),
                    b: ps.add(format!("conv{n}.b"), Tensor::zeros(&[f])),
                    gamma: ps.add(format!("bn{n}.gamma"), Tensor::full(&[f], 1.0)),
                    beta: ps.add(format!("bn{n}.beta"), Tensor::zeros(&[f])),
                });
                bn.push(RunningStats::new(f));
                cin = f;
            }
        }
        let recurrent = match config.kind {
            ModelKind::Fcn => None,
            ModelKind::GruFcn => Some(Recurrent::Gru {
                w: ps.add("gru.w", glorot_uniform(&[v, 3 * u], &mut rng)),
                u_zr: ps.add("gru.u_zr", glorot_uniform(&[u, 2 * u], &mut rng)),
                u_h: ps.add("gru.u_h", glorot_uniform(&[u, u], &mut rng)),
                b: ps.add("gru.b", Tensor::zeros(&[3 * u])),
            }),
            _ => Some(Recurrent::Lstm {
                w: ps.add("lstm.w", glorot_uniform(&[v, 4 * u], &mut rng)),
                u: ps.add("lstm.u", glorot_uniform(&[u, 4 * u], &mut rng)),
                b: ps.add("lstm.b", lstm_bias(u)),
            }),
        };
        let head_in = config.head_inputs(max_len);
        let head_w = ps.add("head.w", glorot_uniform(&[head_in, v], &mut rng));
        let head_b = ps.add("head.b", Tensor::zeros(&[v]));
        let copy = config.pointer_head.then(|| {
            let d = config.position_features();
            (
                ps.add("copy.w", glorot_uniform(&[d, 1], &mut rng)),
                ps.add("copy.b", Tensor::zeros(&[1])),
            )
        });
        Ok(Self {
            config: config.clone(),
            vocab_size,
            max_len,
            params: ps,
            bn,
            layout: Layout {
                recurrent,
                conv,
                head_w,
                head_b,
                copy,
            },
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Columns of [`ForwardOut::logits`].
    pub fn score_width(&self) -> usize {
        self.vocab_size + if self.layout.copy.is_some() { self.max_len } else { 0 }
    }

    /// Score columns that count as predicting `target` for each line: the
    /// class itself and, with the copy head, every position holding it.
    pub fn target_sets(&self, ids: &[u32], targets: &[u32]) -> Vec<Vec<u32>> {
        let (v, len) = (self.vocab_size as u32, self.max_len);
        targets
            .iter()
            .enumerate()
            .map(|(b, &t)| {
                let mut set = vec![t];
                if self.layout.copy.is_some() && t > OOV_ID {
                    let row = &ids[b * len..(b + 1) * len];
                    set.extend((0..len as u32).filter(|&p| row[p as usize] == t).map(|p| v + p));
                }
                set
            })
            .collect()
    }

    /// Folds one row of scores into log-probabilities over the `V` classes.
    pub fn class_log_probs(&self, scores: &[f64], ids: &[u32]) -> Vec<f64> {
        let mut p = scores.to_vec();
        softmax_in_place(&mut p);
        let (classes, positions) = p.split_at(self.vocab_size);
        let mut out = classes.to_vec();
        for (&mass, &id) in positions.iter().zip(ids) {
            out[id as usize] += mass;
        }
        out.iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect()
    }

    pub fn is_recurrent(&self) -> bool {
        self.layout.recurrent.is_some()
    }

    pub fn zero_state(&self, batch: usize) -> Option<RecurrentState> {
        self.layout.recurrent.map(|r| {
            RecurrentState::zeros(batch, self.config.units, matches!(r, Recurrent::Lstm { .. }))
        })
    }

    /// Builds the forward graph for `ids` laid out as `b * L + t`. Dropout is
    /// active only in train mode with an `rng`; batch norm follows `mode`.
    pub fn forward(
        &self,
        g: &mut Graph,
        ids: &[u32],
        state: Option<&RecurrentState>,
        mode: Mode,
        mut rng: Option<&mut RngStream>,
    ) -> Result<ForwardOut, ModelError> {
        let len = self.max_len;
        if ids.is_empty() || !ids.len().is_multiple_of(len) {
            return Err(ModelError::Shape {
                expected: len,
                actual: ids.len(),
            });
        }
        let batch = ids.len() / len;
        let cfg = &self.config;
        let mut drop = |shape: &[usize], rate: f64| -> Result<Option<Tensor>, NnError> {
            match rng.as_deref_mut() {
                Some(r) if mode == Mode::Train && rate > 0.0 => dropout_mask(shape, rate, r).map(Some),
                _ => Ok(None),
            }
        };

        let mut bn_stats = Vec::new();
        let conv_out = if self.layout.conv.is_empty() {
            None
        } else {
            let mut x: Option<Var> = None;
            for (i, blk) in self.layout.conv.iter().enumerate() {
                let y = match x {
                    None => g.conv_one_hot(blk.w, ids, len)?,
                    Some(prev) => {
                        let w = g.param(blk.w);
                        g.conv1d(prev, w, len)?
                    }
                };
                let b = g.param(blk.b);
                let y = g.add_row_vec(y, b)?;
                let (gm, bt) = (g.param(blk.gamma), g.param(blk.beta));
                let (y, stats) = g.batch_norm(y, gm, bt, mode, &self.bn[i].as_batch_stats())?;
                bn_stats.push(stats);
                x = Some(g.sigmoid(y));
            }
            x
        };

        let mut final_state = None;
        let rec_out = match self.layout.recurrent {
            None => None,
            Some(rec) => {
                let units = cfg.units;
                let init = match state {
                    Some(s) => {
                        if s.batch() != batch {
                            return Err(ModelError::Shape {
                                expected: batch,
                                actual: s.batch(),
                            });
                        }
                        s.clone()
                    }
                    None => self.zero_state(batch).expect("recurrent"),
                };
                let mut h = g.constant(init.h.clone());
                let mut c = init.c.clone().map(|c| g.constant(c));
                let gates = match rec {
                    Recurrent::Lstm { .. } => 4 * units,
                    Recurrent::Gru { .. } => 3 * units,
                };
                let rec_mask = drop(&[batch, units], cfg.recurrent_dropout)?.map(|m| g.constant(m));
                let mut hs = Vec::with_capacity(len);
                for t in 0..len {
                    let ids_t: Vec<u32> = (0..batch).map(|b| ids[b * len + t]).collect();
                    let w_pid = match rec {
                        Recurrent::Lstm { w, .. } | Recurrent::Gru { w, .. } => w,
                    };
                    let mut xw = g.gather(w_pid, &ids_t)?;
                    if let Some(m) = drop(&[batch], cfg.input_dropout)? {
                        let mut rows = Tensor::zeros(&[batch, gates]);
                        for (row, &mv) in rows.data_mut().chunks_mut(gates).zip(m.data()) {
                            row.iter_mut().for_each(|v| *v = mv);
                        }
                        let mv = g.constant(rows);
                        xw = g.mul(xw, mv)?;
                    }
                    let h_rec = match rec_mask {
                        Some(m) => g.mul(h, m)?,
                        None => h,
                    };
                    match rec {
                        Recurrent::Lstm { u, b, .. } => {
                            let (uv, bv) = (g.param(u), g.param(b));
                            let (h2, c2) = lstm_cell(g, xw, h_rec, c.expect("lstm cell state"), uv, bv, units)?;
                            h = h2;
                            c = Some(c2);
                        }
                        Recurrent::Gru { u_zr, u_h, b, .. } => {
                            let (a, bb, cc) = (g.param(u_zr), g.param(u_h), g.param(b));
                            h = gru_cell(g, xw, h, h_rec, a, bb, cc, units)?;
                        }
                    }
                    hs.push(h);
                }
                final_state = Some(RecurrentState {
                    h: g.value(h).clone(),
                    c: c.map(|c| g.value(c).clone()),
                });
                Some((g.stack_time(&hs)?, h))
            }
        };

        // pooled features for the dense head, per-position features for the copy head
        let (pooled, positions) = match (cfg.kind, conv_out, rec_out) {
            (ModelKind::Lstm | ModelKind::StatefulLstm, _, Some((seq, _))) => {
                let w = cfg.effective_pool(len);
                let p = g.time_pool(seq, len, w)?;
                let p = g.reshape(p, &[batch, (len / w) * cfg.units])?;
                let p = match drop(&[batch, (len / w) * cfg.units], cfg.post_dropout)? {
                    Some(m) => {
                        let m = g.constant(m);
                        g.mul(p, m)?
                    }
                    None => p,
                };
                let pos = match drop(&[batch * len, cfg.units], cfg.post_dropout)? {
                    Some(m) => {
                        let m = g.constant(m);
                        g.mul(seq, m)?
                    }
                    None => seq,
                };
                (p, pos)
            }
            (ModelKind::Fcn, Some(f), _) => (g.time_pool(f, len, len)?, f),
            (ModelKind::LstmFcn | ModelKind::GruFcn, Some(f), Some((seq, last))) => {
                let gap = g.time_pool(f, len, len)?;
                let last = match drop(&[batch, cfg.units], cfg.post_dropout)? {
                    Some(m) => {
                        let m = g.constant(m);
                        g.mul(last, m)?
                    }
                    None => last,
                };
                let pooled = g.concat_cols(&[gap, last])?;
                let pos = g.concat_cols(&[f, seq])?;
                let pos = match drop(&[batch * len, cfg.position_features()], cfg.post_dropout)? {
                    Some(m) => {
                        let m = g.constant(m);
                        g.mul(pos, m)?
                    }
                    None => pos,
                };
                (pooled, pos)
            }
            _ => unreachable!("layout matches kind"),
        };
        let hw = g.param(self.layout.head_w);
        let hb = g.param(self.layout.head_b);
        let logits = g.matmul(pooled, hw)?;
        let mut logits = g.add_row_vec(logits, hb)?;
        if let Some((cw, cb)) = self.layout.copy {
            let (cw, cb) = (g.param(cw), g.param(cb));
            let s = g.matmul(positions, cw)?;
            let s = g.add_row_vec(s, cb)?;
            // reserved ids (PAD, OOV) carry no token identity to copy
            let mask: Vec<f64> = ids.iter().map(|&id| if id > OOV_ID { 0.0 } else { MASKED_SCORE }).collect();
            let mask = g.constant(Tensor::from_vec(&[ids.len(), 1], mask)?);
            let s = g.add(s, mask)?;
            let s = g.reshape(s, &[batch, len])?;
            logits = g.concat_cols(&[logits, s])?;
        }
        Ok(ForwardOut {
            logits,
            state: final_state,
            bn_stats,
        })
    }

    /// Named tensors for checkpoints: parameters, then batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.tensors().iter().cloned())
            .collect();
        for (i, s) in self.bn.iter().enumerate() {
            out.push((format!("bn{}.running_mean", i + 1), Tensor::vector(&s.mean)));
            out.push((format!("bn{}.running_var", i + 1), Tensor::vector(&s.var)));
        }
        out
    }

    /// Restores tensors written by [`Network::named_tensors`].
    pub fn load_tensors(&mut self, named: &[(String, Tensor)]) -> Result<(), ModelError> {
        let expected = self.named_tensors();
        if expected.len() != named.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                expected.len()
            )));
        }
        for ((en, et), (n, t)) in expected.iter().zip(named) {
            if en != n || et.shape() != t.shape() {
                return Err(ModelError::Config(format!(
                    "checkpoint tensor {n} {:?} does not match {en} {:?}",
                    t.shape(),
                    et.shape()
                )));
            }
        }
        let np = self.params.len();
        for (pid, (_, t)) in named.iter().take(np).enumerate() {
            *self.params.get_mut(pid) = t.clone();
        }
        for (i, pair) in named[np..].chunks(2).enumerate() {
            self.bn[i].mean = pair[0].1.data().to_vec();
            self.bn[i].var = pair[1].1.data().to_vec();
        }
        Ok(())
    }
}
