//! Window-to-token conversion: per-context instance normalization,
//! channel-fusion patchify, sinusoidal positional encoding, and batching of
//! variable-length token sequences for the encoder.
//!
//! A context window is S channels by T steps, row-major by channel. Patchify
//! flattens non-overlapping runs of `patch` steps across all channels into
//! one token of dimension S*patch, left-padding the earliest steps with
//! zeros when T is not a multiple of the patch size. Everything here is a
//! pure function of values at or before the window's anchor time; the caller
//! does the slicing.

use crate::autodiff::MASK_NEG;

/// Epsilon added to the per-channel std in instance normalization (and in
/// its inverse, so round-trips cancel).
pub const INSTANCE_NORM_EPS: f32 = 1e-5;

/// Per-channel mean and population std captured during normalization.
/// Applying `denormalize` with the same stats inverts the transform.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// One window converted to encoder input tokens. Token i holds padded steps
/// [i*patch, (i+1)*patch) of every channel, channel-major within the token;
/// implicit positions are 0..n_tokens-1.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    /// Row-major [n_tokens, d_in].
    pub tokens: Vec<f32>,
    pub n_tokens: usize,
    /// S * patch.
    pub d_in: usize,
    /// Zero steps prepended to reach a patch multiple.
    pub pad_steps: usize,
    pub norm_stats: NormStats,
}

/// Standardizes each channel by its own mean and population std over the
/// window. Constant channels map to zeros under the eps guard.
pub fn instance_normalize(values: &[f32], channels: usize, steps: usize) -> (Vec<f32>, NormStats) {
    assert_eq!(values.len(), channels * steps, "window shape mismatch");
    assert!(steps >= 1, "empty window");
    let mut out = vec![0.0f32; values.len()];
    let mut mean = Vec::with_capacity(channels);
    let mut std = Vec::with_capacity(channels);
    for c in 0..channels {
        let row = &values[c * steps..(c + 1) * steps];
        let mu = row.iter().sum::<f32>() / steps as f32;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f32>() / steps as f32;
        let sd = var.sqrt();
        let denom = sd + INSTANCE_NORM_EPS;
        for (o, &v) in out[c * steps..(c + 1) * steps].iter_mut().zip(row) {
            *o = (v - mu) / denom;
        }
        mean.push(mu);
        std.push(sd);
    }
    (out, NormStats { mean, std })
}

/// Inverse of [`instance_normalize`] under the same stats.
pub fn denormalize(values: &[f32], stats: &NormStats, channels: usize, steps: usize) -> Vec<f32> {
    assert_eq!(values.len(), channels * steps);
    assert_eq!(stats.mean.len(), channels);
    let mut out = vec![0.0f32; values.len()];
    for c in 0..channels {
        let denom = stats.std[c] + INSTANCE_NORM_EPS;
        for (o, &v) in out[c * steps..(c + 1) * steps].iter_mut().zip(&values[c * steps..(c + 1) * steps]) {
            *o = v * denom + stats.mean[c];
        }
    }
    out
}

/// Splits a (normalized) window into channel-fusion tokens of `patch` steps,
/// left-padding with zeros to the next patch multiple.
pub fn patchify(values: &[f32], channels: usize, steps: usize, patch: usize, norm_stats: NormStats) -> TokenSequence {
    assert!(patch >= 1, "patch size must be positive");
    assert!(steps >= 1 && channels >= 1, "empty window");
    assert_eq!(values.len(), channels * steps);
    let n_tokens = steps.div_ceil(patch);
    let padded = n_tokens * patch;
    let pad_steps = padded - steps;
    let d_in = channels * patch;
    let mut tokens = vec![0.0f32; n_tokens * d_in];
    for i in 0..n_tokens {
        for c in 0..channels {
            for p in 0..patch {
                let padded_step = i * patch + p;
                if padded_step >= pad_steps {
                    tokens[i * d_in + c * patch + p] = values[c * steps + (padded_step - pad_steps)];
                }
            }
        }
    }
    TokenSequence { tokens, n_tokens, d_in, pad_steps, norm_stats }
}

/// Reassembles the window a [`TokenSequence`] was built from, dropping pad
/// steps. Inverse of [`patchify`] (values still normalized).
pub fn unpatchify(seq: &TokenSequence, channels: usize) -> Vec<f32> {
    let patch = seq.d_in / channels;
    assert_eq!(seq.d_in, channels * patch);
    let padded = seq.n_tokens * patch;
    let steps = padded - seq.pad_steps;
    let mut values = vec![0.0f32; channels * steps];
    for i in 0..seq.n_tokens {
        for c in 0..channels {
            for p in 0..patch {
                let padded_step = i * patch + p;
                if padded_step >= seq.pad_steps {
                    values[c * steps + (padded_step - seq.pad_steps)] = seq.tokens[i * seq.d_in + c * patch + p];
                }
            }
        }
    }
    values
}

/// Instance-normalize then patchify: the full raw-window-to-tokens pipeline.
pub fn window_to_tokens(values: &[f32], channels: usize, steps: usize, patch: usize) -> TokenSequence {
    let (normed, stats) = instance_normalize(values, channels, steps);
    patchify(&normed, channels, steps, patch, stats)
}

/// Interleaved sinusoidal positional encoding, wavelength base 10000:
/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
pub fn positional_encoding(n_tokens: usize, d: usize) -> Vec<f32> {
    assert!(d % 2 == 0, "positional encoding needs an even dimension");
    let mut pe = vec![0.0f32; n_tokens * d];
    for pos in 0..n_tokens {
        for i in 0..d / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[pos * d + 2 * i] = rate.sin() as f32;
            pe[pos * d + 2 * i + 1] = rate.cos() as f32;
        }
    }
    pe
}

/// Equal-length stacking of token sequences for one encoder pass. Shorter
/// sequences are padded with all-zero tokens at the end, so every real token
/// keeps its own position index; pad rows are excluded from attention by the
/// additive key mask and never read out.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub windows: usize,
    /// Common (max) token count after padding.
    pub tokens_per_window: usize,
    pub d_in: usize,
    /// Row-major [windows * tokens_per_window, d_in].
    pub inputs: Vec<f32>,
    /// Additive attention mask per row: 0 for real tokens, [`MASK_NEG`] for
    /// pad rows. None when nothing is padded.
    pub attn_mask: Option<Vec<f32>>,
    /// Per window, the global row index of its last real token.
    pub last_token_rows: Vec<usize>,
    /// Per window, its real token count.
    pub real_tokens: Vec<usize>,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[TokenSequence]) -> Self {
        assert!(!seqs.is_empty(), "empty batch");
        let d_in = seqs[0].d_in;
        assert!(seqs.iter().all(|s| s.d_in == d_in), "mixed token dims in one batch");
        assert!(seqs.iter().all(|s| s.n_tokens >= 1), "sequence without tokens");
        let max_tokens = seqs.iter().map(|s| s.n_tokens).max().unwrap();
        let windows = seqs.len();
        let mut inputs = vec![0.0f32; windows * max_tokens * d_in];
        let mut mask = vec![0.0f32; windows * max_tokens];
        let mut any_pad = false;
        let mut last_token_rows = Vec::with_capacity(windows);
        let mut real_tokens = Vec::with_capacity(windows);
        for (w, seq) in seqs.iter().enumerate() {
            let base = w * max_tokens;
            inputs[base * d_in..(base + seq.n_tokens) * d_in].copy_from_slice(&seq.tokens);
            for row in seq.n_tokens..max_tokens {
                mask[base + row] = MASK_NEG;
                any_pad = true;
            }
            last_token_rows.push(base + seq.n_tokens - 1);
            real_tokens.push(seq.n_tokens);
        }
        TokenBatch {
            windows,
            tokens_per_window: max_tokens,
            d_in,
            inputs,
            attn_mask: if any_pad { Some(mask) } else { None },
            last_token_rows,
            real_tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_zeros() {
        let (out, stats) = instance_normalize(&[5.0, 5.0, 5.0, 5.0], 1, 4);
        assert_eq!(out, vec![0.0; 4]);
        assert_eq!(stats.mean, vec![5.0]);
        assert_eq!(stats.std, vec![0.0]);
    }

    #[test]
    fn two_point_channel_standardizes_symmetrically() {
        // Population std of [1,3] is 1, so the result is [-1, 1] up to eps.
        let (out, _) = instance_normalize(&[1.0, 3.0], 1, 2);
        assert!((out[0] + 1.0).abs() < 1e-4);
        assert!((out[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn normalized_window_has_unit_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (channels, steps) = (3usize, 512usize);
        let vals: Vec<f32> = (0..channels * steps).map(|_| 4.0 * rng.gen::<f32>() - 1.0).collect();
        let (out, _) = instance_normalize(&vals, channels, steps);
        for c in 0..channels {
            let row = &out[c * steps..(c + 1) * steps];
            let mu = row.iter().sum::<f32>() / steps as f32;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f32>() / steps as f32;
            assert!(mu.abs() < 1e-5, "channel {c} mean {mu}");
            assert!((var.sqrt() - 1.0).abs() < 1e-4, "channel {c} std {}", var.sqrt());
        }
    }

    #[test]
    fn normalization_round_trips_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vals: Vec<f32> = (0..2 * 64).map(|_| 10.0 * rng.gen::<f32>() + 3.0).collect();
        let (normed, stats) = instance_normalize(&vals, 2, 64);
        let back = denormalize(&normed, &stats, 2, 64);
        for (a, b) in back.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-5, "round trip {a} vs {b}");
        }
        let (again, _) = instance_normalize(&normed, 2, 64);
        for (a, b) in again.iter().zip(&normed) {
            assert!((a - b).abs() < 1e-4, "not idempotent: {a} vs {b}");
        }
    }

    #[test]
    fn patchify_shapes_follow_channel_fusion() {
        let seq = window_to_tokens(&vec![0.5f32; 14 * 512], 14, 512, 16);
        assert_eq!(seq.n_tokens, 32);
        assert_eq!(seq.d_in, 224);
        assert_eq!(seq.pad_steps, 0);
    }

    #[test]
    fn single_patch_token_is_the_raw_series() {
        let vals: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let seq = patchify(&vals, 1, 16, 16, NormStats { mean: vec![0.0], std: vec![1.0] });
        assert_eq!(seq.n_tokens, 1);
        assert_eq!(seq.tokens, vals);
    }

    #[test]
    fn short_window_left_pads_first_token() {
        let vals: Vec<f32> = (0..40).map(|i| 1.0 + i as f32).collect(); // 2 channels x 20 steps
        let seq = patchify(&vals, 2, 20, 16, NormStats { mean: vec![0.0; 2], std: vec![1.0; 2] });
        assert_eq!(seq.n_tokens, 2);
        assert_eq!(seq.d_in, 32);
        assert_eq!(seq.pad_steps, 12);
        // Token 0: each channel block starts with 12 zeros then steps 0..4.
        for c in 0..2 {
            let block = &seq.tokens[c * 16..(c + 1) * 16];
            assert!(block[..12].iter().all(|&v| v == 0.0), "channel {c} pad region {block:?}");
            for (p, &v) in block[12..].iter().enumerate() {
                assert_eq!(v, vals[c * 20 + p]);
            }
        }
        // Token 1 carries steps 4..20 of each channel.
        for c in 0..2 {
            let block = &seq.tokens[32 + c * 16..32 + (c + 1) * 16];
            for (p, &v) in block.iter().enumerate() {
                assert_eq!(v, vals[c * 20 + 4 + p]);
            }
        }
    }

    #[test]
    fn patchify_round_trips_through_unpatchify() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (channels, steps, patch) in [(1usize, 16usize, 16usize), (3, 48, 16), (2, 20, 16), (5, 7, 4)] {
            let vals: Vec<f32> = (0..channels * steps).map(|_| rng.gen::<f32>()).collect();
            let seq = patchify(&vals, channels, steps, patch, NormStats { mean: vec![0.0; channels], std: vec![1.0; channels] });
            assert_eq!(unpatchify(&seq, channels), vals);
        }
    }

    #[test]
    fn positional_encoding_matches_formula() {
        let d = 8;
        let pe = positional_encoding(3, d);
        for i in 0..d / 2 {
            assert_eq!(pe[2 * i], 0.0, "sin dim at position 0");
            assert_eq!(pe[2 * i + 1], 1.0, "cos dim at position 0");
        }
        assert!((pe[d] - 1f32.sin()).abs() < 1e-6, "PE(1)[0] must be sin(1)");
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn batching_pads_short_sequences_at_the_end() {
        let a = window_to_tokens(&vec![1.0f32; 2 * 20], 2, 20, 16); // 2 tokens
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f32> = (0..2 * 48).map(|_| rng.gen::<f32>()).collect();
        let b = window_to_tokens(&vals, 2, 48, 16); // 3 tokens
        let batch = TokenBatch::from_sequences(&[a, b]);
        assert_eq!(batch.windows, 2);
        assert_eq!(batch.tokens_per_window, 3);
        assert_eq!(batch.real_tokens, vec![2, 3]);
        assert_eq!(batch.last_token_rows, vec![1, 5]);
        let mask = batch.attn_mask.expect("padding must produce a mask");
        assert_eq!(mask[2], MASK_NEG, "row 2 is window 0's pad token");
        assert!(mask.iter().filter(|&&m| m == MASK_NEG).count() == 1);
        // Pad token rows are all zeros.
        assert!(batch.inputs[2 * batch.d_in..3 * batch.d_in].iter().all(|&v| v == 0.0));
    }
}
