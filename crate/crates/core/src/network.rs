//! The shared Transformer encoder (causal and bidirectional views over one
//! weight set), the horizon-conditioned predictor, and the event head.
//!
//! Parameters live in a [`ModelWeights`] bundle, named and grouped. A
//! training step binds the groups it needs onto a fresh tape (frozen groups
//! bind as constants, or are simply not bound when their forward pass is
//! precomputed), runs the forward functions here, and applies gradients
//! slot-by-slot through AdamW.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::autodiff::{AdamW, Tape, TensorId};
use crate::error::HepaError;
use crate::featurize::{positional_encoding, TokenBatch};
use crate::Result;

pub const D_MODEL: usize = 256;
pub const N_HEADS: usize = 4;
pub const N_BLOCKS: usize = 2;
pub const FFN_DIM: usize = 4 * D_MODEL;
pub const DROPOUT_RATE: f32 = 0.1;
pub const LAYERNORM_EPS: f32 = 1e-5;
/// Horizons concatenated by the frozen multi-horizon probe.
pub const MULTI_HORIZONS: usize = 16;

// ── Parameter storage ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Predictor,
    Head,
    MultiProbe,
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    group: ParamGroup,
}

/// Every learnable tensor of the model, in a fixed registration order that
/// doubles as the optimizer slot order and the checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub d_in: usize,
    params: Vec<Param>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zero,
    One,
}

impl ModelWeights {
    /// Fresh weights for an input token dimension: Xavier-uniform matrices,
    /// zero biases, unit layernorm gains. Deterministic in the seed.
    pub fn new(d_in: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = D_MODEL;
        let mut params = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, group: ParamGroup, init: Init, rng: &mut ChaCha8Rng| {
            let values = match init {
                Init::Zero => vec![0.0; rows * cols],
                Init::One => vec![1.0; rows * cols],
                Init::Xavier => {
                    let limit = (6.0 / (rows + cols) as f32).sqrt();
                    (0..rows * cols).map(|_| (2.0 * rng.gen::<f32>() - 1.0) * limit).collect()
                }
            };
            params.push(Param { name, rows, cols, values, group });
        };

        push("enc.in_proj.w".into(), d_in, d, ParamGroup::Encoder, Init::Xavier, &mut rng);
        push("enc.in_proj.b".into(), 1, d, ParamGroup::Encoder, Init::Zero, &mut rng);
        for l in 0..N_BLOCKS {
            for (suffix, rows, cols, init) in [
                ("ln1.g", 1, d, Init::One),
                ("ln1.b", 1, d, Init::Zero),
                ("attn.wq", d, d, Init::Xavier),
                ("attn.bq", 1, d, Init::Zero),
                ("attn.wk", d, d, Init::Xavier),
                ("attn.bk", 1, d, Init::Zero),
                ("attn.wv", d, d, Init::Xavier),
                ("attn.bv", 1, d, Init::Zero),
                ("attn.wo", d, d, Init::Xavier),
                ("attn.bo", 1, d, Init::Zero),
                ("ln2.g", 1, d, Init::One),
                ("ln2.b", 1, d, Init::Zero),
                ("ffn.w1", d, FFN_DIM, Init::Xavier),
                ("ffn.b1", 1, FFN_DIM, Init::Zero),
                ("ffn.w2", FFN_DIM, d, Init::Xavier),
                ("ffn.b2", 1, d, Init::Zero),
            ] {
                push(format!("enc.block{l}.{suffix}"), rows, cols, ParamGroup::Encoder, init, &mut rng);
            }
        }
        push("enc.final_ln.g".into(), 1, d, ParamGroup::Encoder, Init::One, &mut rng);
        push("enc.final_ln.b".into(), 1, d, ParamGroup::Encoder, Init::Zero, &mut rng);
        push("enc.q_pool".into(), 1, d, ParamGroup::Encoder, Init::Xavier, &mut rng);

        push("pred.l1.w".into(), d + 1, d, ParamGroup::Predictor, Init::Xavier, &mut rng);
        push("pred.l1.b".into(), 1, d, ParamGroup::Predictor, Init::Zero, &mut rng);
        push("pred.l2.w".into(), d, d, ParamGroup::Predictor, Init::Xavier, &mut rng);
        push("pred.l2.b".into(), 1, d, ParamGroup::Predictor, Init::Zero, &mut rng);
        push("pred.l3.w".into(), d, d, ParamGroup::Predictor, Init::Xavier, &mut rng);
        push("pred.l3.b".into(), 1, d, ParamGroup::Predictor, Init::Zero, &mut rng);

        push("head.ln.g".into(), 1, d, ParamGroup::Head, Init::One, &mut rng);
        push("head.ln.b".into(), 1, d, ParamGroup::Head, Init::Zero, &mut rng);
        push("head.w".into(), d, 1, ParamGroup::Head, Init::Xavier, &mut rng);
        push("head.b".into(), 1, 1, ParamGroup::Head, Init::Zero, &mut rng);

        push("multi.w".into(), MULTI_HORIZONS * d, 1, ParamGroup::MultiProbe, Init::Xavier, &mut rng);
        push("multi.b".into(), 1, 1, ParamGroup::MultiProbe, Init::Zero, &mut rng);

        ModelWeights { d_in, params }
    }

    pub fn param_count(&self, group: ParamGroup) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.values.len()).sum()
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn n_slots(&self) -> usize {
        self.params.len()
    }

    /// (name, rows, cols, values) in registration order, for serialization.
    pub fn entries(&self) -> impl Iterator<Item = (&str, usize, usize, &[f32])> {
        self.params.iter().map(|p| (p.name.as_str(), p.rows, p.cols, p.values.as_slice()))
    }

    /// Replaces one named tensor; shape must match.
    pub fn set(&mut self, name: &str, values: Vec<f32>) -> Result<()> {
        let param = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| HepaError::checkpoint(format!("unknown tensor name {name}")))?;
        if values.len() != param.rows * param.cols {
            return Err(HepaError::checkpoint(format!(
                "tensor {name} holds {} values, expected {}",
                values.len(),
                param.rows * param.cols
            )));
        }
        param.values = values;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<(&[f32], (usize, usize))> {
        self.params.iter().find(|p| p.name == name).map(|p| (p.values.as_slice(), (p.rows, p.cols)))
    }

    /// Copies the values of `group` from another bundle (used to restore
    /// snapshot weights or reset a predictor to random init).
    pub fn copy_group_from(&mut self, other: &ModelWeights, group: ParamGroup) {
        assert_eq!(self.d_in, other.d_in, "mismatched input dims");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            assert_eq!(dst.name, src.name);
            if dst.group == group {
                dst.values.copy_from_slice(&src.values);
            }
        }
    }

    fn bind_range(&self, tape: &mut Tape, group: ParamGroup, trainable: bool) -> Binding {
        let mut ids = Vec::new();
        let mut slots = Vec::new();
        for (idx, p) in self.params.iter().enumerate() {
            if p.group == group {
                ids.push(tape.leaf(p.values.clone(), p.rows, p.cols, trainable));
                slots.push(idx);
            }
        }
        Binding { ids, slots, trainable }
    }

    pub fn bind_encoder(&self, tape: &mut Tape, trainable: bool) -> EncoderBound {
        let b = self.bind_range(tape, ParamGroup::Encoder, trainable);
        let id = |k: usize| b.ids[k];
        let mut blocks = Vec::with_capacity(N_BLOCKS);
        for l in 0..N_BLOCKS {
            let o = 2 + l * 16;
            blocks.push(BlockBound {
                ln1_g: id(o),
                ln1_b: id(o + 1),
                wq: id(o + 2),
                bq: id(o + 3),
                wk: id(o + 4),
                bk: id(o + 5),
                wv: id(o + 6),
                bv: id(o + 7),
                wo: id(o + 8),
                bo: id(o + 9),
                ln2_g: id(o + 10),
                ln2_b: id(o + 11),
                f1_w: id(o + 12),
                f1_b: id(o + 13),
                f2_w: id(o + 14),
                f2_b: id(o + 15),
            });
        }
        let tail = 2 + N_BLOCKS * 16;
        EncoderBound {
            in_proj_w: id(0),
            in_proj_b: id(1),
            blocks,
            final_ln_g: id(tail),
            final_ln_b: id(tail + 1),
            q_pool: id(tail + 2),
            binding: b,
        }
    }

    pub fn bind_predictor(&self, tape: &mut Tape, trainable: bool) -> PredictorBound {
        let b = self.bind_range(tape, ParamGroup::Predictor, trainable);
        PredictorBound {
            w1: b.ids[0],
            b1: b.ids[1],
            w2: b.ids[2],
            b2: b.ids[3],
            w3: b.ids[4],
            b3: b.ids[5],
            binding: b,
        }
    }

    pub fn bind_head(&self, tape: &mut Tape, trainable: bool) -> HeadBound {
        let b = self.bind_range(tape, ParamGroup::Head, trainable);
        HeadBound { ln_g: b.ids[0], ln_b: b.ids[1], w: b.ids[2], b: b.ids[3], binding: b }
    }

    pub fn bind_multi(&self, tape: &mut Tape, trainable: bool) -> MultiBound {
        let b = self.bind_range(tape, ParamGroup::MultiProbe, trainable);
        MultiBound { w: b.ids[0], b: b.ids[1], binding: b }
    }

    /// Applies one optimizer step from the gradients of every trainable
    /// binding. Panics if a trainable parameter ended up outside the graph —
    /// that is a wiring bug, not a runtime condition.
    pub fn apply_step(&mut self, tape: &Tape, opt: &mut AdamW, bindings: &[&Binding]) {
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.params.len()];
        for b in bindings {
            assert!(b.trainable, "apply_step given a frozen binding");
            for (&slot, &id) in b.slots.iter().zip(&b.ids) {
                grads[slot] = Some(tape.grad(id).expect("trainable parameter missing from graph").to_vec());
            }
        }
        let mut items: Vec<(usize, &mut [f32], &[f32])> = Vec::new();
        for (idx, (p, g)) in self.params.iter_mut().zip(&grads).enumerate() {
            if let Some(g) = g {
                items.push((idx, p.values.as_mut_slice(), g.as_slice()));
            }
        }
        opt.step(&mut items);
    }
}

/// The tape ids of one bound group plus their optimizer slots.
#[derive(Debug, Clone)]
pub struct Binding {
    pub ids: Vec<TensorId>,
    pub slots: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct BlockBound {
    pub ln1_g: TensorId,
    pub ln1_b: TensorId,
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
    pub ln2_g: TensorId,
    pub ln2_b: TensorId,
    pub f1_w: TensorId,
    pub f1_b: TensorId,
    pub f2_w: TensorId,
    pub f2_b: TensorId,
}

#[derive(Debug, Clone)]
pub struct EncoderBound {
    pub in_proj_w: TensorId,
    pub in_proj_b: TensorId,
    pub blocks: Vec<BlockBound>,
    pub final_ln_g: TensorId,
    pub final_ln_b: TensorId,
    pub q_pool: TensorId,
    pub binding: Binding,
}

#[derive(Debug, Clone)]
pub struct PredictorBound {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub w3: TensorId,
    pub b3: TensorId,
    pub binding: Binding,
}

#[derive(Debug, Clone)]
pub struct HeadBound {
    pub ln_g: TensorId,
    pub ln_b: TensorId,
    pub w: TensorId,
    pub b: TensorId,
    pub binding: Binding,
}

#[derive(Debug, Clone)]
pub struct MultiBound {
    pub w: TensorId,
    pub b: TensorId,
    pub binding: Binding,
}

// ── Forward passes ──

/// Runs the Transformer trunk over a token batch and returns the final-LN
/// token outputs [windows*tokens, d]. `causal` selects the online (masked)
/// or target (bidirectional) view; `dropout` > 0 only during training.
pub fn encode_tokens<R: Rng>(
    tape: &mut Tape,
    enc: &EncoderBound,
    batch: &TokenBatch,
    causal: bool,
    dropout: f32,
    rng: &mut R,
) -> TensorId {
    let (w, n) = (batch.windows, batch.tokens_per_window);
    let pad = batch.attn_mask.as_ref().map(|m| Arc::new(m.clone()));

    let x = tape.constant(batch.inputs.clone(), w * n, batch.d_in);
    let proj = tape.matmul(x, enc.in_proj_w);
    let mut h = tape.add_bias(proj, enc.in_proj_b);

    let pe_one = positional_encoding(n, D_MODEL);
    let mut pe = Vec::with_capacity(w * n * D_MODEL);
    for _ in 0..w {
        pe.extend_from_slice(&pe_one);
    }
    let pe = tape.constant(pe, w * n, D_MODEL);
    h = tape.add(h, pe);

    for block in &enc.blocks {
        let a = tape.layernorm(h, block.ln1_g, block.ln1_b, LAYERNORM_EPS);
        let qm = tape.matmul(a, block.wq);
        let q = tape.add_bias(qm, block.bq);
        let km = tape.matmul(a, block.wk);
        let k = tape.add_bias(km, block.bk);
        let vm = tape.matmul(a, block.wv);
        let v = tape.add_bias(vm, block.bv);
        let att = tape.mha(q, k, v, w, n, N_HEADS, causal, pad.clone());
        let om = tape.matmul(att, block.wo);
        let o = tape.add_bias(om, block.bo);
        let o = tape.dropout(o, dropout, rng);
        h = tape.add(h, o);

        let f = tape.layernorm(h, block.ln2_g, block.ln2_b, LAYERNORM_EPS);
        let f1m = tape.matmul(f, block.f1_w);
        let f1 = tape.add_bias(f1m, block.f1_b);
        let f1 = tape.gelu(f1);
        let f2m = tape.matmul(f1, block.f2_w);
        let f2 = tape.add_bias(f2m, block.f2_b);
        let f2 = tape.dropout(f2, dropout, rng);
        h = tape.add(h, f2);
    }
    tape.layernorm(h, enc.final_ln_g, enc.final_ln_b, LAYERNORM_EPS)
}

/// Causal summary embeddings: one row per window, read at its last real
/// token. Output [windows, d].
pub fn encode_causal<R: Rng>(
    tape: &mut Tape,
    enc: &EncoderBound,
    batch: &TokenBatch,
    dropout: f32,
    rng: &mut R,
) -> TensorId {
    let out = encode_tokens(tape, enc, batch, true, dropout, rng);
    tape.gather_rows(out, batch.last_token_rows.clone())
}

/// Bidirectional target embeddings with attention pooling over token
/// outputs. Output [windows, d].
pub fn encode_target<R: Rng>(
    tape: &mut Tape,
    enc: &EncoderBound,
    batch: &TokenBatch,
    dropout: f32,
    rng: &mut R,
) -> TensorId {
    let out = encode_tokens(tape, enc, batch, false, dropout, rng);
    let scores = tape.pool_scores(out, enc.q_pool, batch.windows, batch.tokens_per_window);
    let mask = batch.attn_mask.as_ref().map(|m| Arc::new(m.clone()));
    let probs = tape.softmax_rows(scores, mask);
    tape.row_weighted_sum(probs, out)
}

/// Horizon-conditioned prediction for one (h, dt) pair per row: rows of `h`
/// [B, d] against `dt_scaled` in [0, 1] (dt / K). Output [B, d].
pub fn predict(tape: &mut Tape, pred: &PredictorBound, h: TensorId, dt_scaled: &[f32]) -> TensorId {
    let (rows, d) = tape.shape(h);
    assert_eq!(d, D_MODEL);
    assert_eq!(dt_scaled.len(), rows, "one horizon per row");
    let dt = tape.constant(dt_scaled.to_vec(), rows, 1);
    let joint = tape.concat_cols(h, dt);
    let l1m = tape.matmul(joint, pred.w1);
    let l1 = tape.add_bias(l1m, pred.b1);
    let l1 = tape.gelu(l1);
    let l2m = tape.matmul(l1, pred.w2);
    let l2 = tape.add_bias(l2m, pred.b2);
    let l2 = tape.gelu(l2);
    let l3m = tape.matmul(l2, pred.w3);
    tape.add_bias(l3m, pred.b3)
}

/// Stacks each row of `h` [B, d] against horizons 1..=k: output row b*k + j
/// is predict(h_b, j+1). Output [B*k, d].
pub fn predict_horizons(tape: &mut Tape, pred: &PredictorBound, h: TensorId, k: usize) -> TensorId {
    let (rows, _) = tape.shape(h);
    let rep = tape.repeat_rows(h, k);
    let mut dts = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        for j in 1..=k {
            dts.push(j as f32 / k as f32);
        }
    }
    predict(tape, pred, rep, &dts)
}

/// Event-head logit: layernorm then affine to one column. Input [R, d],
/// output [R, 1].
pub fn event_logit(tape: &mut Tape, head: &HeadBound, h: TensorId) -> TensorId {
    let normed = tape.layernorm(h, head.ln_g, head.ln_b, LAYERNORM_EPS);
    let lm = tape.matmul(normed, head.w);
    tape.add_bias(lm, head.b)
}

/// Frozen multi-horizon probe logit: plain affine on the concatenation of
/// `MULTI_HORIZONS` predictor outputs. Input [R, MULTI_HORIZONS*d], output
/// [R, 1].
pub fn multi_logit(tape: &mut Tape, multi: &MultiBound, concat: TensorId) -> TensorId {
    let lm = tape.matmul(concat, multi.w);
    tape.add_bias(lm, multi.b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{window_to_tokens, TokenBatch};

    fn tiny_batch(seed: u64, channels: usize, steps: usize) -> TokenBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f32> = (0..channels * steps).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
        TokenBatch::from_sequences(&[window_to_tokens(&vals, channels, steps, 16)])
    }

    #[test]
    fn parameter_counts_are_pinned() {
        let w = ModelWeights::new(80, 0);
        assert_eq!(w.param_count(ParamGroup::Predictor), 197_632);
        assert_eq!(w.param_count(ParamGroup::Head), 769);
        assert_eq!(w.param_count(ParamGroup::Predictor) + w.param_count(ParamGroup::Head), 198_401);
        assert_eq!(w.param_count(ParamGroup::MultiProbe), MULTI_HORIZONS * D_MODEL + 1);
    }

    #[test]
    fn causal_embedding_has_model_dim() {
        let w = ModelWeights::new(32, 1);
        let batch = tiny_batch(2, 2, 48);
        let mut tape = Tape::new();
        let enc = w.bind_encoder(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = encode_causal(&mut tape, &enc, &batch, 0.0, &mut rng);
        assert_eq!(tape.shape(h), (1, D_MODEL));
    }

    #[test]
    fn causal_mask_blocks_future_tokens() {
        let w = ModelWeights::new(32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f32> = (0..2 * 64).map(|_| rng.gen::<f32>()).collect();
        let base = TokenBatch::from_sequences(&[window_to_tokens(&vals, 2, 64, 16)]);
        assert_eq!(base.tokens_per_window, 4);

        let run = |batch: &TokenBatch| -> Vec<f32> {
            let mut tape = Tape::new();
            let enc = w.bind_encoder(&mut tape, false);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let out = encode_tokens(&mut tape, &enc, batch, true, 0.0, &mut drop_rng);
            tape.values(out).to_vec()
        };
        let before = run(&base);
        let mut perturbed = base.clone();
        for v in &mut perturbed.inputs[3 * base.d_in..4 * base.d_in] {
            *v += 1.0;
        }
        let after = run(&perturbed);
        let d = D_MODEL;
        for row in 0..3 {
            assert_eq!(before[row * d..(row + 1) * d], after[row * d..(row + 1) * d], "row {row} saw a future token");
        }
        assert_ne!(before[3 * d..4 * d], after[3 * d..4 * d], "perturbed token must change its own row");
    }

    #[test]
    fn single_token_target_pools_to_its_own_output() {
        let w = ModelWeights::new(32, 5);
        let batch = tiny_batch(6, 2, 16);
        assert_eq!(batch.tokens_per_window, 1);
        let mut tape = Tape::new();
        let enc = w.bind_encoder(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let toks = encode_tokens(&mut tape, &enc, &batch, false, 0.0, &mut rng);
        let pooled = encode_target(&mut tape, &enc, &batch, 0.0, &mut rng);
        let t = tape.values(toks).to_vec();
        let p = tape.values(pooled).to_vec();
        for (a, b) in t.iter().zip(&p) {
            assert!((a - b).abs() < 1e-6, "pooling over one token must be the identity");
        }
    }

    #[test]
    fn permuting_target_tokens_changes_the_embedding() {
        let w = ModelWeights::new(32, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f32> = (0..2 * 48).map(|_| rng.gen::<f32>()).collect();
        let base = TokenBatch::from_sequences(&[window_to_tokens(&vals, 2, 48, 16)]);
        let mut swapped = base.clone();
        let d = base.d_in;
        let (left, right) = swapped.inputs.split_at_mut(d);
        left.swap_with_slice(&mut right[..d]);

        let run = |batch: &TokenBatch| -> Vec<f32> {
            let mut tape = Tape::new();
            let enc = w.bind_encoder(&mut tape, false);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let out = encode_target(&mut tape, &enc, batch, 0.0, &mut drop_rng);
            tape.values(out).to_vec()
        };
        assert_ne!(run(&base), run(&swapped), "position encoding must make order matter");
    }

    #[test]
    fn horizon_conditioning_is_live() {
        let w = ModelWeights::new(32, 9);
        let mut tape = Tape::new();
        let pred = w.bind_predictor(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h_vals: Vec<f32> = (0..D_MODEL).map(|_| rng.gen::<f32>()).collect();
        let h = tape.constant(h_vals, 1, D_MODEL);
        let near = predict(&mut tape, &pred, h, &[1.0 / 24.0]);
        let far = predict(&mut tape, &pred, h, &[1.0]);
        assert_ne!(tape.values(near), tape.values(far));
    }

    #[test]
    fn zero_predictor_outputs_its_final_bias() {
        let mut w = ModelWeights::new(32, 11);
        for name in ["pred.l1.w", "pred.l1.b", "pred.l2.w", "pred.l2.b", "pred.l3.w"] {
            let (vals, _) = w.get(name).unwrap();
            let zeros = vec![0.0; vals.len()];
            w.set(name, zeros).unwrap();
        }
        w.set("pred.l3.b", vec![2.5; D_MODEL]).unwrap();
        let mut tape = Tape::new();
        let pred = w.bind_predictor(&mut tape, false);
        let h = tape.constant(vec![0.7; D_MODEL], 1, D_MODEL);
        let out = predict(&mut tape, &pred, h, &[0.5]);
        assert!(tape.values(out).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn predict_horizons_orders_rows_by_anchor_then_horizon() {
        let w = ModelWeights::new(32, 12);
        let mut tape = Tape::new();
        let pred = w.bind_predictor(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h_vals: Vec<f32> = (0..2 * D_MODEL).map(|_| rng.gen::<f32>()).collect();
        let h = tape.constant(h_vals.clone(), 2, D_MODEL);
        let k = 3;
        let stacked = predict_horizons(&mut tape, &pred, h, k);
        assert_eq!(tape.shape(stacked), (2 * k, D_MODEL));
        // Row 1*k+2 must equal a direct predict of anchor 1 at horizon 3.
        let h1 = tape.constant(h_vals[D_MODEL..].to_vec(), 1, D_MODEL);
        let direct = predict(&mut tape, &pred, h1, &[1.0]);
        let got = &tape.values(stacked)[(k + 2) * D_MODEL..(k + 3) * D_MODEL];
        for (a, b) in got.iter().zip(tape.values(direct)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn weight_sharing_feeds_both_encoder_views() {
        let mut w = ModelWeights::new(32, 14);
        let batch = tiny_batch(15, 2, 48);
        let run = |w: &ModelWeights| -> (Vec<f32>, Vec<f32>) {
            let mut tape = Tape::new();
            let enc = w.bind_encoder(&mut tape, false);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let c = encode_causal(&mut tape, &enc, &batch, 0.0, &mut rng);
            let t = encode_target(&mut tape, &enc, &batch, 0.0, &mut rng);
            (tape.values(c).to_vec(), tape.values(t).to_vec())
        };
        let (c0, t0) = run(&w);
        let (mut vals, _) = w.get("enc.block0.attn.wq").map(|(v, s)| (v.to_vec(), s)).unwrap();
        for v in &mut vals {
            *v += 0.05;
        }
        w.set("enc.block0.attn.wq", vals).unwrap();
        let (c1, t1) = run(&w);
        assert_ne!(c0, c1, "causal view must see the shared mutation");
        assert_ne!(t0, t1, "target view must see the shared mutation");
    }

    #[test]
    fn frozen_encoder_gets_no_grads_while_predictor_trains() {
        let w = ModelWeights::new(32, 16);
        let batch = tiny_batch(17, 2, 48);
        let mut tape = Tape::new();
        let enc = w.bind_encoder(&mut tape, false);
        let pred = w.bind_predictor(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = encode_causal(&mut tape, &enc, &batch, 0.0, &mut rng);
        let hhat = predict(&mut tape, &pred, h, &[0.5]);
        let loss = tape.mean_all(hhat);
        tape.backward(loss).unwrap();
        for &id in &enc.binding.ids {
            assert!(tape.grad(id).is_none(), "frozen encoder leaf received a gradient");
        }
        let total: f32 = pred
            .binding
            .ids
            .iter()
            .map(|&id| tape.grad_or_zeros(id).iter().map(|g| g.abs()).sum::<f32>())
            .sum();
        assert!(total > 0.0, "predictor gradients must be nonzero");
    }

    #[test]
    fn dropout_only_perturbs_training_forward() {
        let w = ModelWeights::new(32, 18);
        let batch = tiny_batch(19, 2, 48);
        let run = |dropout: f32, seed: u64| -> Vec<f32> {
            let mut tape = Tape::new();
            let enc = w.bind_encoder(&mut tape, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = encode_causal(&mut tape, &enc, &batch, dropout, &mut rng);
            tape.values(h).to_vec()
        };
        assert_eq!(run(0.0, 0), run(0.0, 99), "eval forward must ignore the rng");
        assert_ne!(run(0.1, 0), run(0.1, 1), "training dropout must depend on the rng");
    }

    #[test]
    fn apply_step_updates_only_bound_trainable_groups() {
        let mut w = ModelWeights::new(32, 20);
        let before_enc = w.get("enc.in_proj.w").unwrap().0.to_vec();
        let before_pred = w.get("pred.l1.w").unwrap().0.to_vec();
        let batch = tiny_batch(21, 2, 48);

        let mut tape = Tape::new();
        let enc = w.bind_encoder(&mut tape, false);
        let pred = w.bind_predictor(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = encode_causal(&mut tape, &enc, &batch, 0.0, &mut rng);
        let hhat = predict(&mut tape, &pred, h, &[0.25]);
        let sq = tape.powi(hhat, 2);
        let loss = tape.mean_all(sq);
        tape.backward(loss).unwrap();

        let mut opt = AdamW::new(crate::autodiff::AdamWConfig::new(1e-3, 0.0), w.n_slots());
        w.apply_step(&tape, &mut opt, &[&pred.binding]);
        assert_eq!(w.get("enc.in_proj.w").unwrap().0, before_enc.as_slice(), "frozen encoder moved");
        assert_ne!(w.get("pred.l1.w").unwrap().0, before_pred.as_slice(), "predictor did not move");
    }
}
