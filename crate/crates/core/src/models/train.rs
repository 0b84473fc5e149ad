//! Training loop, prediction sessions and checkpoints.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Network, RecurrentState};
use super::{ModelConfig, ModelError, ModelKind, TrainConfig};
use crate::corpus::Label;
use crate::evaluator::f1;
use crate::nncore::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, TensorMeta};
use crate::nncore::gradcheck::{check_gradients, GradCheckReport};
use crate::nncore::{adam_update, AdamState, Graph, Mode, ParamStore, RngStream, Tensor};
use crate::textprep::{EncodedDataset, EncodedExample, PrepConfig, Vocabulary, NO_VALUE_ID, OOV_ID, PAD_ID};

/// Label text emitted when the head picks the out-of-vocabulary class.
pub const OOV_PREDICTION: &str = "__OOV__";

/// Maps a predicted class id back to a label.
pub fn id_label(vocab: &Vocabulary, id: u32) -> Label {
    match id {
        PAD_ID | NO_VALUE_ID => Label::NoValue,
        OOV_ID => Label::Value(OOV_PREDICTION.to_string()),
        _ => Label::Value(vocab.token(id).unwrap_or(OOV_PREDICTION).to_string()),
    }
}

/// Label keyed by class id, for F1 without vocabulary lookups.
fn id_key(id: u32) -> Label {
    match id {
        PAD_ID | NO_VALUE_ID => Label::NoValue,
        _ => Label::Value(id.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    /// Breaks ties between epochs with equal validation F1.
    pub val_loss: f64,
    /// Carried states were zeroed after this epoch.
    pub state_reset: bool,
    /// SHA-256 over the example-to-(batch, slot) assignment of this epoch.
    pub slot_digest: String,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network,
    pub vocab: Vocabulary,
    pub prep: PrepConfig,
    pub train_config: TrainConfig,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: u64,
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Stateful-aware batched inference. Line `i` of a stream starts from the
/// state left by line `i - slots` when the model is stateful.
pub struct InferenceSession<'m> {
    network: &'m Network,
    vocab: &'m Vocabulary,
    slots: usize,
    state: Option<RecurrentState>,
}

impl<'m> InferenceSession<'m> {
    pub fn new(network: &'m Network, vocab: &'m Vocabulary, slots: usize) -> Self {
        let slots = slots.max(1);
        Self {
            network,
            vocab,
            slots,
            state: if network.config.is_stateful() {
                network.zero_state(slots)
            } else {
                None
            },
        }
    }

    pub fn reset_states(&mut self) {
        if self.state.is_some() {
            self.state = self.network.zero_state(self.slots);
        }
    }

    pub fn state(&self) -> Option<&RecurrentState> {
        self.state.as_ref()
    }

    /// Class log-probabilities, one row of `V` per line.
    pub fn log_probs(&mut self, lines: &[Vec<u32>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let len = self.network.max_len;
        if let Some(bad) = lines.iter().find(|l| l.len() != len) {
            return Err(ModelError::Shape {
                expected: len,
                actual: bad.len(),
            });
        }
        let w = self.network.score_width();
        let mut out = Vec::with_capacity(lines.len());
        for chunk in lines.chunks(self.slots) {
            let ids: Vec<u32> = chunk.iter().flatten().copied().collect();
            let state_in = self.state.as_ref().map(|s| s.take_rows(chunk.len()));
            let mut g = Graph::new(&self.network.params);
            let f = self.network.forward(&mut g, &ids, state_in.as_ref(), Mode::Infer, None)?;
            if let (Some(s), Some(new)) = (&mut self.state, &f.state) {
                s.put_rows(new);
            }
            let scores = g.value(f.logits).data().chunks(w);
            out.extend(scores.zip(chunk).map(|(row, ids)| self.network.class_log_probs(row, ids)));
        }
        Ok(out)
    }

    pub fn predict_ids(&mut self, lines: &[Vec<u32>]) -> Result<Vec<u32>, ModelError> {
        Ok(self.log_probs(lines)?.iter().map(|r| argmax(r)).collect())
    }

    pub fn predict(&mut self, lines: &[Vec<u32>]) -> Result<Vec<Label>, ModelError> {
        Ok(self
            .predict_ids(lines)?
            .into_iter()
            .map(|id| id_label(self.vocab, id))
            .collect())
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.network.config.kind
    }

    pub fn max_len(&self) -> usize {
        self.network.max_len
    }

    /// Session whose slot count equals the training batch size.
    pub fn session(&self) -> InferenceSession<'_> {
        InferenceSession::new(&self.network, &self.vocab, self.train_config.batch_size)
    }

    /// Softmax distribution for one encoded line, from a zero state.
    pub fn probabilities(&self, ids: &[u32]) -> Result<Tensor, ModelError> {
        let mut s = InferenceSession::new(&self.network, &self.vocab, 1);
        let row = s.log_probs(&[ids.to_vec()])?.remove(0);
        Ok(Tensor::vector(&row.iter().map(|l| l.exp()).collect::<Vec<_>>()))
    }

    /// Prediction for one encoded line, from a zero state.
    pub fn predict(&self, ids: &[u32]) -> Result<Label, ModelError> {
        let mut s = InferenceSession::new(&self.network, &self.vocab, 1);
        Ok(s.predict(&[ids.to_vec()])?.remove(0))
    }

    /// Encodes and predicts a stream of raw lines in order.
    pub fn predict_lines<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Result<Vec<Label>, ModelError> {
        let encoded: Vec<Vec<u32>> = lines.into_iter().map(|l| self.prep.encode_line(l, &self.vocab)).collect();
        self.session().predict(&encoded)
    }

    /// Writes `epoch,loss,val_f1,state_reset_flag`.
    pub fn write_log_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "val_f1", "state_reset_flag"])?;
        for r in &self.log {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.val_f1.to_string(),
                u8::from(r.state_reset).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let named = self.network.named_tensors();
        let header = CheckpointHeader {
            architecture: self.kind().id().to_string(),
            seed: self.train_config.seed,
            step: self.steps,
            tensors: named
                .iter()
                .map(|(n, t)| TensorMeta {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: serde_json::json!({
                "model_config": self.network.config,
                "train_config": self.train_config,
                "vocab_hash": self.vocab.content_hash(),
                "vocab_size": self.network.vocab_size,
                "max_len": self.network.max_len,
                "best_epoch": self.best_epoch,
            }),
        };
        let tensors: Vec<Tensor> = named.into_iter().map(|(_, t)| t).collect();
        write_checkpoint(out, &header, &tensors)?;
        Ok(())
    }

    /// Restores a model; `vocab` must be the one it was trained with.
    pub fn read_checkpoint<R: Read>(input: R, vocab: Vocabulary) -> Result<Self, ModelError> {
        let (header, tensors) = read_checkpoint(input)?;
        let meta = &header.meta;
        let model_config: ModelConfig = meta_field(meta, "model_config")?;
        let train_config: TrainConfig = meta_field(meta, "train_config")?;
        let vocab_hash: String = meta_field(meta, "vocab_hash")?;
        let max_len: usize = meta_field(meta, "max_len")?;
        let best_epoch: usize = meta_field(meta, "best_epoch")?;
        if vocab_hash != vocab.content_hash() {
            return Err(ModelError::VocabMismatch {
                expected: vocab_hash,
                actual: vocab.content_hash(),
            });
        }
        let mut network = Network::build(&model_config, vocab.len(), max_len, header.seed)?;
        let named: Vec<(String, Tensor)> = header.tensors.iter().map(|m| m.name.clone()).zip(tensors).collect();
        network.load_tensors(&named)?;
        Ok(Self {
            network,
            vocab,
            prep: PrepConfig::default().with_max_len(max_len),
            train_config,
            log: Vec::new(),
            best_epoch,
            steps: header.step,
        })
    }
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T, ModelError> {
    let v = meta
        .get(key)
        .cloned()
        .ok_or_else(|| ModelError::Config(format!("checkpoint lacks {key}")))?;
    serde_json::from_value(v).map_err(|e| ModelError::Config(format!("checkpoint field {key}: {e}")))
}

fn slot_digest(batches: &[Vec<usize>]) -> String {
    let mut h = Sha256::new();
    for (k, b) in batches.iter().enumerate() {
        for (slot, &ex) in b.iter().enumerate() {
            h.update(format!("{ex}:{k}:{slot};").as_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Validation F1 and mean cross-entropy of the folded class distribution.
fn validate(net: &Network, vocab: &Vocabulary, val: &[EncodedExample], slots: usize) -> Result<(f64, f64), ModelError> {
    let lines: Vec<Vec<u32>> = val.iter().map(|e| e.ids.clone()).collect();
    let rows = InferenceSession::new(net, vocab, slots).log_probs(&lines)?;
    let truth: Vec<Label> = val.iter().map(|e| id_key(e.label_id)).collect();
    let pred: Vec<Label> = rows.iter().map(|r| id_key(argmax(r))).collect();
    let loss = -rows.iter().zip(val).map(|(r, e)| r[e.label_id as usize]).sum::<f64>() / val.len() as f64;
    Ok((f1(&truth, &pred).expect("equal lengths"), loss))
}

/// (val F1, -val loss), epoch, weights and batch-norm statistics of the best epoch so far.
type Snapshot = ((f64, f64), usize, ParamStore, Vec<crate::nncore::RunningStats>);

/// Trains `config` on `data` (encoded with `vocab` and `prep`).
///
/// The stateful LSTM keeps example order and a fixed batch shape (drop
/// remainder): slot `j` of batch `k` always holds example `k * B + j`, and
/// its state carries over from the previous batch and epoch until the reset period.
pub fn train(
    config: &ModelConfig,
    vocab: &Vocabulary,
    prep: &PrepConfig,
    data: &EncodedDataset,
    tc: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    tc.validate()?;
    if data.examples.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if data.vocab_size != vocab.len() {
        return Err(ModelError::Config(format!(
            "dataset vocabulary size {} differs from vocabulary ({})",
            data.vocab_size,
            vocab.len()
        )));
    }
    let n = data.examples.len();
    let n_val = ((n as f64) * tc.validation_fraction).floor() as usize;
    let (train_ex, val_ex) = data.examples.split_at(n - n_val);
    let val_ex = if val_ex.is_empty() { train_ex } else { val_ex };
    let stateful = config.is_stateful();
    let bsz = tc.batch_size;
    if train_ex.is_empty() || (stateful && train_ex.len() < bsz) {
        return Err(ModelError::Config(format!(
            "{} training examples cannot fill a batch of {bsz}",
            train_ex.len()
        )));
    }

    let mut net = Network::build(config, vocab.len(), data.max_len, tc.seed)?;
    let mut adam = AdamState::new(net.params.tensors(), config.lr);
    let root = RngStream::new(tc.seed);
    let mut drop_rng = root.fork(1);
    let mut shuffle_rng = root.fork(2);
    let mut oov_rng = root.fork(3);
    let mut state = if stateful { net.zero_state(bsz) } else { None };

    let mut log = Vec::new();
    let mut best: Option<Snapshot> = None;
    let mut steps = 0u64;
    for epoch in 1..=tc.max_epochs {
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        if !stateful {
            for i in (1..order.len()).rev() {
                order.swap(i, shuffle_rng.below(i + 1));
            }
        }
        let batches: Vec<Vec<usize>> = if stateful {
            order.chunks_exact(bsz).map(<[usize]>::to_vec).collect()
        } else {
            order.chunks(bsz).map(<[usize]>::to_vec).collect()
        };
        let mut loss_sum = 0.0;
        for (k, batch) in batches.iter().enumerate() {
            let targets: Vec<u32> = batch.iter().map(|&i| train_ex[i].label_id).collect();
            let mut ids: Vec<u32> = batch.iter().flat_map(|&i| train_ex[i].ids.iter().copied()).collect();
            if tc.oov_rate > 0.0 {
                for (row, &t) in ids.chunks_mut(data.max_len).zip(&targets) {
                    for id in row.iter_mut().filter(|id| **id > NO_VALUE_ID && **id != t) {
                        if oov_rng.uniform(0.0, 1.0) < tc.oov_rate {
                            *id = OOV_ID;
                        }
                    }
                }
            }
            let (grads, loss, fwd_state, bn_stats) = {
                let mut g = Graph::new(&net.params);
                let f = net.forward(&mut g, &ids, state.as_ref(), Mode::Train, Some(&mut drop_rng))?;
                let loss = g.softmax_xent_sets(f.logits, net.target_sets(&ids, &targets))?;
                let lv = g.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(ModelError::NonFinite {
                        epoch,
                        batch: k + 1,
                        op: g.first_non_finite().unwrap_or("softmax_xent").to_string(),
                    });
                }
                (g.backward(loss), lv, f.state, f.bn_stats)
            };
            adam_update(net.params.tensors_mut(), &grads, &mut adam)?;
            for (rs, s) in net.bn.iter_mut().zip(&bn_stats) {
                rs.update(s);
            }
            if stateful {
                state = fwd_state;
            }
            loss_sum += loss;
            steps += 1;
        }
        let reset = stateful && config.state_reset_period > 0 && epoch % config.state_reset_period == 0;
        if reset {
            state = net.zero_state(bsz);
        }
        let (val_f1, val_loss) = validate(&net, vocab, val_ex, bsz)?;
        if best.as_ref().is_none_or(|b| (val_f1, -val_loss) > b.0) {
            best = Some(((val_f1, -val_loss), epoch, net.params.clone(), net.bn.clone()));
        }
        log.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.len().max(1) as f64,
            val_f1,
            val_loss,
            state_reset: reset,
            slot_digest: slot_digest(&batches),
        });
        log::debug!("{} epoch {epoch}: loss {:.5} val_f1 {val_f1:.4}", config.kind, log.last().unwrap().loss);
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= tc.patience {
            break;
        }
    }
    let (_, best_epoch, params, bn) = best.expect("at least one epoch");
    net.params = params;
    net.bn = bn;
    Ok(TrainedModel {
        network: net,
        vocab: vocab.clone(),
        prep: prep.clone().with_max_len(data.max_len),
        train_config: tc.clone(),
        log,
        best_epoch,
        steps,
    })
}

/// Finite-difference check of one architecture on a 10-example micro-batch
/// with a reduced configuration and fixed dropout masks.
pub fn gradient_check(kind: ModelKind, seed: u64) -> Result<GradCheckReport, ModelError> {
    let (v, len, batch) = (12usize, 6usize, 10usize);
    let mut cfg = ModelConfig::new(kind);
    if kind.is_recurrent() {
        cfg.units = 3;
    }
    if kind.has_conv() {
        cfg.filters = vec![3, 3, 4];
    }
    let net = Network::build(&cfg, v, len, seed)?;
    let mut rng = RngStream::new(seed ^ 0x5eed);
    let ids: Vec<u32> = (0..batch * len).map(|_| rng.below(v) as u32).collect();
    // even rows target a token of their own line so the copy path is exercised
    let targets: Vec<u32> = (0..batch)
        .map(|b| {
            if b % 2 == 0 {
                ids[b * len + rng.below(len)]
            } else {
                rng.below(v) as u32
            }
        })
        .collect();
    let state = net.zero_state(batch).map(|mut s| {
        for x in s.h.data_mut() {
            *x = rng.uniform(-0.5, 0.5);
        }
        if let Some(c) = &mut s.c {
            for x in c.data_mut() {
                *x = rng.uniform(-0.5, 0.5);
            }
        }
        s
    });
    let run = |ps: &ParamStore, want_grad: bool| -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new(ps);
        let mut masks = RngStream::new(seed.wrapping_add(1));
        let f = net.forward(&mut g, &ids, state.as_ref(), Mode::Train, Some(&mut masks))?;
        let loss = g.softmax_xent_sets(f.logits, net.target_sets(&ids, &targets))?;
        let grads = if want_grad { g.backward(loss) } else { Vec::new() };
        Ok((g.value(loss).data()[0], grads))
    };
    let report = check_gradients(
        &net.params,
        |ps| run(ps, false).map(|r| r.0).map_err(to_nn),
        |ps| run(ps, true).map(|r| r.1).map_err(to_nn),
        1e-5,
        GRADCHECK_FLOOR,
        1,
    )?;
    Ok(report)
}

/// Denominator floor of the relative error used by [`gradient_check`].
pub const GRADCHECK_FLOOR: f64 = 1e-6;

fn to_nn(e: ModelError) -> crate::nncore::NnError {
    match e {
        ModelError::Nn(n) => n,
        other => crate::nncore::NnError::Config(other.to_string()),
    }
}
