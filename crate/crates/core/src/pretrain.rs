//! Joint-embedding pretraining: the causal encoder embeds the context up
//! to an anchor, the weight-shared target encoder embeds the future
//! interval bidirectionally, and the horizon-conditioned predictor is
//! trained to map one to the other. A sketched-moment regularizer on the
//! raw predictions rules out the collapsed solution; no stop-gradient or
//! momentum copy is involved.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Tape, TensorId};
use crate::data::{Dataset, Split, WindowCfg};
use crate::error::HepaError;
use crate::featurize::TokenBatch;
use crate::network::{
    encode_causal, encode_target, predict, EncoderBound, ModelWeights, PredictorBound, DROPOUT_RATE,
};
use crate::Result;

// ── Horizon sampling ──

/// Draws a horizon log-uniformly from [1, dt_max]: dt = round(exp(u *
/// ln(dt_max))). Short horizons dominate, and the median sits near
/// sqrt(dt_max).
pub fn sample_horizon<R: Rng>(rng: &mut R, dt_max: usize) -> usize {
    assert!(dt_max >= 1, "dt_max must be positive");
    let u: f64 = rng.gen();
    let dt = (u * (dt_max as f64).ln()).exp().round() as usize;
    dt.clamp(1, dt_max)
}

// ── SIGReg ──

/// Variance floor inside the standardized-moment denominators; keeps the
/// penalty and its gradients finite on a collapsed batch.
const MOMENT_EPS: f32 = 1e-6;

/// Sketched isotropic-Gaussian regularizer: project the batch onto
/// `n_directions` random unit directions and penalize, per direction,
/// squared deviations of the first four moments from N(0, 1):
/// mean^2 + (var - 1)^2 + skew^2 + excess_kurtosis^2, averaged over
/// directions. Applied to raw (un-normalized) predictions.
pub fn sigreg<R: Rng>(tape: &mut Tape, h: TensorId, n_directions: usize, rng: &mut R) -> Result<TensorId> {
    let (b, d) = tape.shape(h);
    if b < 2 {
        return Err(HepaError::contract(format!("sigreg needs at least 2 rows to estimate moments, got {b}")));
    }
    assert!(n_directions >= 1);
    let mut dirs = vec![0.0f32; d * n_directions];
    for j in 0..n_directions {
        let col: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = col.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        for i in 0..d {
            dirs[i * n_directions + j] = col[i] / norm;
        }
    }
    let dmat = tape.constant(dirs, d, n_directions);
    let proj = tape.matmul(h, dmat); // [b, m]

    let mu = tape.mean_axis0(proj); // [1, m]
    let cent = tape.sub_bias(proj, mu);
    let sq = tape.powi(cent, 2);
    let var = tape.mean_axis0(sq);
    let cu = tape.powi(cent, 3);
    let m3 = tape.mean_axis0(cu);
    let qu = tape.powi(cent, 4);
    let m4 = tape.mean_axis0(qu);

    let mean_term = tape.powi(mu, 2);
    let vshift = tape.add_scalar(var, -1.0);
    let var_term = tape.powi(vshift, 2);
    let var_safe = tape.add_scalar(var, MOMENT_EPS);
    let denom3 = tape.powi(var_safe, 3);
    let m3sq = tape.powi(m3, 2);
    let skew_term = tape.div(m3sq, denom3);
    let denom2 = tape.powi(var_safe, 2);
    let kurt = tape.div(m4, denom2);
    let kshift = tape.add_scalar(kurt, -3.0);
    let kurt_term = tape.powi(kshift, 2);

    let s = tape.add(mean_term, var_term);
    let s = tape.add(s, skew_term);
    let s = tape.add(s, kurt_term);
    let total = tape.sum_all(s);
    Ok(tape.scale(total, 1.0 / n_directions as f32))
}

// ── JEPA objective ──

/// Scalar terms of one pretraining loss evaluation.
pub struct JepaTerms {
    pub loss: TensorId,
    pub l1: TensorId,
    pub sigreg: TensorId,
}

/// (1 - alpha) * mean-L1 between l2-normalized prediction and target rows,
/// plus alpha * sigreg on the raw predictions. Gradients flow into both
/// encoder views and the predictor.
pub fn jepa_loss<R: Rng>(
    tape: &mut Tape,
    h_hat: TensorId,
    h_star: TensorId,
    alpha: f32,
    n_directions: usize,
    rng: &mut R,
) -> Result<JepaTerms> {
    let (rows, cols) = tape.shape(h_hat);
    assert_eq!((rows, cols), tape.shape(h_star), "prediction/target shape mismatch");
    let a = tape.l2_normalize_rows(h_hat);
    let b = tape.l2_normalize_rows(h_star);
    let diff = tape.sub(a, b);
    let ad = tape.abs(diff);
    let sum = tape.sum_all(ad);
    let l1 = tape.scale(sum, 1.0 / (rows * cols) as f32);
    let sig = sigreg(tape, h_hat, n_directions, rng)?;
    let lw = tape.scale(l1, 1.0 - alpha);
    let sw = tape.scale(sig, alpha);
    let loss = tape.add(lw, sw);
    Ok(JepaTerms { loss, l1, sigreg: sig })
}

// ── Configuration and report ──

fn default_lr() -> f32 {
    3e-4
}

fn default_wd() -> f32 {
    1e-2
}

fn default_batch() -> usize {
    64
}

fn default_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

fn default_alpha() -> f32 {
    0.1
}

fn default_directions() -> usize {
    16
}

fn default_steps_cap() -> usize {
    512
}

fn default_stride() -> usize {
    1
}

fn default_snapshots() -> Vec<usize> {
    vec![1, 3, 8, 25]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub window: WindowCfg,
    /// Maximum prediction horizon in steps.
    pub k: usize,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_wd")]
    pub weight_decay: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    #[serde(default = "default_directions")]
    pub sigreg_directions: usize,
    /// Cap on optimizer steps per epoch (and validation batches).
    #[serde(default = "default_steps_cap")]
    pub steps_per_epoch: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_snapshots")]
    pub snapshot_epochs: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(HepaError::config("k must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(HepaError::config("batch_size must be at least 2 (moment estimation)"));
        }
        if self.max_epochs < 1 || self.patience < 1 || self.steps_per_epoch < 1 || self.stride < 1 {
            return Err(HepaError::config("max_epochs, patience, steps_per_epoch and stride must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HepaError::config("alpha must lie in [0, 1]"));
        }
        if self.sigreg_directions < 1 {
            return Err(HepaError::config("sigreg_directions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_l1: f32,
    pub val_sigreg: f32,
}

/// Weights captured at a fixed epoch, for quality-sweep experiments.
#[derive(Debug, Clone)]
pub struct TrainingSnapshot {
    pub epoch: usize,
    pub val_l1: f32,
    pub weights: ModelWeights,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// Weights of the best epoch by validation L1.
    pub weights: ModelWeights,
    pub best_epoch: usize,
    /// Representation error: validation mean L1 of the best epoch, with the
    /// regularizer excluded.
    pub epsilon: f32,
    pub history: Vec<EpochStats>,
    pub snapshots: Vec<TrainingSnapshot>,
    pub stopped_early: bool,
}

// ── Training loop ──

struct Anchor {
    episode: usize,
    t: usize,
}

fn collect_anchors(ds: &Dataset, idxs: &[usize], window: &WindowCfg, stride: usize) -> Vec<Anchor> {
    let mut out = Vec::new();
    for &ei in idxs {
        for t in window.anchors(&ds.episodes[ei], stride) {
            out.push(Anchor { episode: ei, t });
        }
    }
    out
}

struct BatchOutcome {
    loss: f32,
    l1: f32,
    sigreg: f32,
    enc: EncoderBound,
    pred: PredictorBound,
}

/// One forward pass over a batch of anchors. When `train` is set the tape
/// is left holding gradients for the returned bindings.
fn jepa_batch<R: Rng>(
    tape: &mut Tape,
    ds: &Dataset,
    batch: &[Anchor],
    weights: &ModelWeights,
    cfg: &PretrainConfig,
    train: bool,
    rng: &mut R,
) -> Result<BatchOutcome> {
    let enc = weights.bind_encoder(tape, train);
    let pred = weights.bind_predictor(tape, train);
    let mut ctxs = Vec::with_capacity(batch.len());
    let mut tgts = Vec::with_capacity(batch.len());
    let mut dts = Vec::with_capacity(batch.len());
    for a in batch {
        let ep = &ds.episodes[a.episode];
        let dt_max = cfg.k.min(ep.last_step() - a.t);
        let dt = sample_horizon(rng, dt_max);
        ctxs.push(cfg.window.context_tokens(ep, a.t));
        tgts.push(cfg.window.target_tokens(ep, a.t, dt));
        dts.push(dt as f32 / cfg.k as f32);
    }
    let rate = if train { DROPOUT_RATE } else { 0.0 };
    let cb = TokenBatch::from_sequences(&ctxs);
    let tb = TokenBatch::from_sequences(&tgts);
    let h = encode_causal(tape, &enc, &cb, rate, rng);
    let h_star = encode_target(tape, &enc, &tb, rate, rng);
    let h_hat = predict(tape, &pred, h, &dts);
    let terms = jepa_loss(tape, h_hat, h_star, cfg.alpha, cfg.sigreg_directions, rng)?;
    let out = BatchOutcome {
        loss: tape.scalar_value(terms.loss),
        l1: tape.scalar_value(terms.l1),
        sigreg: tape.scalar_value(terms.sigreg),
        enc,
        pred,
    };
    if train {
        tape.backward(terms.loss)?;
    }
    Ok(out)
}

fn run_validation(
    ds: &Dataset,
    val_anchors: &[Anchor],
    weights: &ModelWeights,
    cfg: &PretrainConfig,
) -> Result<(f32, f32)> {
    // Fresh identically-seeded RNG every epoch: the same anchors get the
    // same horizons, so validation numbers are comparable across epochs.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76a1_c0de);
    let mut l1_sum = 0.0f64;
    let mut sig_sum = 0.0f64;
    let mut rows = 0usize;
    let mut batches = 0usize;
    for chunk in val_anchors.chunks(cfg.batch_size) {
        if chunk.len() < 2 || batches == cfg.steps_per_epoch {
            break;
        }
        let mut tape = Tape::new();
        let out = jepa_batch(&mut tape, ds, chunk, weights, cfg, false, &mut rng)?;
        l1_sum += out.l1 as f64 * chunk.len() as f64;
        sig_sum += out.sigreg as f64 * chunk.len() as f64;
        rows += chunk.len();
        batches += 1;
    }
    if rows == 0 {
        return Err(HepaError::data("validation split produced no usable anchors"));
    }
    Ok(((l1_sum / rows as f64) as f32, (sig_sum / rows as f64) as f32))
}

/// Pretrains encoder and predictor on the train split. The last tenth of
/// the train episodes (at least one) is held out for validation and early
/// stopping; test episodes are never touched.
pub fn pretrain(ds: &Dataset, cfg: &PretrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    let train_idx = ds.split_indices(Split::Train);
    if train_idx.len() < 2 {
        return Err(HepaError::data(format!(
            "pretraining needs at least 2 train episodes, got {}",
            train_idx.len()
        )));
    }
    let n_val = (train_idx.len() / 10).max(1);
    let (fit_idx, val_idx) = train_idx.split_at(train_idx.len() - n_val);
    let mut fit_anchors = collect_anchors(ds, fit_idx, &cfg.window, cfg.stride);
    let val_anchors = collect_anchors(ds, val_idx, &cfg.window, cfg.stride);
    if fit_anchors.is_empty() || val_anchors.is_empty() {
        return Err(HepaError::data("no anchors; episodes are too short for the context window"));
    }

    let d_in = cfg.window.d_in(ds.channels());
    let mut weights = ModelWeights::new(d_in, cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::new(cfg.lr, cfg.weight_decay), weights.n_slots());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));

    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut best: Option<TrainingSnapshot> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        fit_anchors.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut rows = 0usize;
        let steps = fit_anchors.len().div_ceil(cfg.batch_size).min(cfg.steps_per_epoch);
        for s in 0..steps {
            let lo = s * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(fit_anchors.len());
            if hi - lo < 2 {
                break;
            }
            let mut tape = Tape::new();
            let out = jepa_batch(&mut tape, ds, &fit_anchors[lo..hi], &weights, cfg, true, &mut rng)?;
            weights.apply_step(&tape, &mut opt, &[&out.enc.binding, &out.pred.binding]);
            loss_sum += out.loss as f64 * (hi - lo) as f64;
            rows += hi - lo;
        }
        let train_loss = (loss_sum / rows.max(1) as f64) as f32;
        let (val_l1, val_sigreg) = run_validation(ds, &val_anchors, &weights, cfg)?;
        history.push(EpochStats { epoch, train_loss, val_l1, val_sigreg });

        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.push(TrainingSnapshot { epoch, val_l1, weights: weights.clone() });
        }
        let improved = best.as_ref().map_or(true, |b| val_l1 < b.val_l1);
        if improved {
            best = Some(TrainingSnapshot { epoch, val_l1, weights: weights.clone() });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best = best.expect("at least one epoch ran");
    Ok(PretrainReport {
        weights: best.weights,
        best_epoch: best.epoch,
        epsilon: best.val_l1,
        history,
        snapshots,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_dataset(beta: f32, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_episodes: 10,
            channels: 3,
            steps: 120,
            beta,
            noise: 0.1,
            hazard_base: 0.25,
            hazard_theta: 4.0,
            drift_rate: 0.02,
            drift_accel: 0.5,
            seasonal_amp: 0.5,
            ar_phi: 0.8,
            lifecycle: false,
            train_frac: 0.8,
            seed,
        })
    }

    fn tiny_config() -> PretrainConfig {
        PretrainConfig {
            window: WindowCfg::stream(16, 4),
            k: 8,
            lr: 1e-3,
            weight_decay: 1e-2,
            batch_size: 8,
            max_epochs: 3,
            patience: 10,
            alpha: 0.1,
            sigreg_directions: 8,
            steps_per_epoch: 2,
            stride: 4,
            snapshot_epochs: vec![1, 3],
            seed: 5,
        }
    }

    #[test]
    fn horizon_sampling_is_log_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<usize> = (0..20_000).map(|_| sample_horizon(&mut rng, 24)).collect();
        assert!(draws.iter().all(|&d| (1..=24).contains(&d)));
        let mut sorted = draws.clone();
        sorted.sort_unstable();
        let median = sorted[draws.len() / 2];
        // Median of round(exp(u ln 24)) sits at sqrt(24) ~ 4.9.
        assert!((4..=6).contains(&median), "median {median}");
        let ones = draws.iter().filter(|&&d| d == 1).count();
        let tail = draws.iter().filter(|&&d| d >= 20).count();
        assert!(ones > tail, "short horizons must dominate: {ones} vs {tail}");
        assert!((0..100).all(|i| sample_horizon(&mut ChaCha8Rng::seed_from_u64(i), 1) == 1));
    }

    fn moments_penalty(values: Vec<f32>, rows: usize, cols: usize, seed: u64) -> f32 {
        let mut tape = Tape::new();
        let h = tape.constant(values, rows, cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sigreg(&mut tape, h, 16, &mut rng).unwrap();
        tape.scalar_value(s)
    }

    #[test]
    fn sigreg_is_small_on_a_standard_normal_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..1024 * 16).map(|_| Rng::sample(&mut rng, StandardNormal)).collect();
        let pen = moments_penalty(vals, 1024, 16, 4);
        assert!(pen < 0.05, "penalty {pen} for a batch already matching the reference moments");
    }

    #[test]
    fn sigreg_flags_collapsed_and_scaled_batches() {
        // Identical rows: every projection has zero variance, so the
        // (var - 1)^2 term alone contributes 1 per direction.
        let pen = moments_penalty(vec![0.7; 8 * 6], 8, 6, 4);
        assert!(pen >= 1.0, "collapsed batch penalty {pen}");

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..1024 * 16).map(|_| Rng::sample::<f32, _>(&mut rng, StandardNormal) * 3.0).collect();
        let pen = moments_penalty(vals, 1024, 16, 4);
        // Projections have variance near 9: (9 - 1)^2 = 64 dominates.
        assert!(pen > 30.0, "scaled batch penalty {pen}");
    }

    #[test]
    fn sigreg_rejects_single_row_batches() {
        let mut tape = Tape::new();
        let h = tape.constant(vec![1.0; 4], 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sigreg(&mut tape, h, 4, &mut rng), Err(HepaError::Contract(_))));
    }

    #[test]
    fn jepa_loss_hand_case_and_recomposition() {
        // Rows normalize to distinct basis vectors, so each row's L1
        // distance is exactly 2 and the element-wise mean is 2 / cols.
        let hat = vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0];
        let star = vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let mut tape = Tape::new();
        let a = tape.constant(hat.clone(), 2, 4);
        let b = tape.constant(star.clone(), 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = jepa_loss(&mut tape, a, b, 0.0, 4, &mut rng).unwrap();
        assert!((tape.scalar_value(t.l1) - 0.5).abs() < 1e-6);
        assert!((tape.scalar_value(t.loss) - 0.5).abs() < 1e-6);

        let mut tape = Tape::new();
        let a = tape.constant(hat, 2, 4);
        let b = tape.constant(star, 2, 4);
        let t = jepa_loss(&mut tape, a, b, 0.1, 4, &mut rng).unwrap();
        let (loss, l1, sig) = (
            tape.scalar_value(t.loss),
            tape.scalar_value(t.l1),
            tape.scalar_value(t.sigreg),
        );
        assert!((loss - (0.9 * l1 + 0.1 * sig)).abs() < 1e-6, "loss must recompose from its terms");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normalized_rows_have_l1_norm_between_one_and_sqrt_d(
            rows in 1usize..6, cols in 1usize..20, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f32> =
                (0..rows * cols).map(|_| rand::Rng::sample(&mut rng, StandardNormal)).collect();
            prop_assume!(vals.chunks(cols).all(|r| r.iter().map(|v| v * v).sum::<f32>().sqrt() > 1e-3));
            let mut tape = Tape::new();
            let h = tape.constant(vals, rows, cols);
            let n = tape.l2_normalize_rows(h);
            // ||u||_2 <= ||u||_1 <= sqrt(d) ||u||_2 bounds the per-row L1
            // distance of unit vectors, which is what epsilon measures.
            for row in tape.values(n).to_vec().chunks(cols) {
                let l1: f32 = row.iter().map(|v| v.abs()).sum();
                prop_assert!(l1 >= 1.0 - 1e-3 && l1 <= (cols as f32).sqrt() + 1e-3, "l1 {l1}");
            }
        }
    }

    #[test]
    fn gradients_reach_both_encoder_views_and_the_predictor() {
        let ds = tiny_dataset(2.0, 7);
        let window = WindowCfg::stream(16, 4);
        let weights = ModelWeights::new(window.d_in(ds.channels()), 1);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = weights.bind_encoder(&mut tape, true);
        let pred = weights.bind_predictor(&mut tape, true);
        // Multi-token targets: with a single target token the pooling
        // softmax is constant and the query correctly gets zero gradient,
        // so use dt = 8 (two tokens of patch 4).
        let anchors = [(0usize, 20usize), (0, 40), (1, 30), (1, 60)];
        let ctxs: Vec<_> = anchors.iter().map(|&(e, t)| window.context_tokens(&ds.episodes[e], t)).collect();
        let tgts: Vec<_> = anchors.iter().map(|&(e, t)| window.target_tokens(&ds.episodes[e], t, 8)).collect();
        let cb = TokenBatch::from_sequences(&ctxs);
        let tb = TokenBatch::from_sequences(&tgts);
        let h = encode_causal(&mut tape, &enc, &cb, DROPOUT_RATE, &mut rng);
        let h_star = encode_target(&mut tape, &enc, &tb, DROPOUT_RATE, &mut rng);
        let h_hat = predict(&mut tape, &pred, h, &vec![1.0; anchors.len()]);
        let terms = jepa_loss(&mut tape, h_hat, h_star, 0.1, 8, &mut rng).unwrap();
        tape.backward(terms.loss).unwrap();
        let nonzero = |id: TensorId| tape.grad(id).unwrap().iter().any(|g| g.abs() > 0.0);
        assert!(nonzero(enc.q_pool), "target pooling query gets no gradient");
        assert!(nonzero(pred.w1), "predictor gets no gradient");
        assert!(nonzero(enc.blocks[0].wq), "context attention gets no gradient");
    }

    #[test]
    fn pretraining_is_deterministic_and_snapshots_requested_epochs() {
        let ds = tiny_dataset(2.0, 11);
        let cfg = tiny_config();
        let a = pretrain(&ds, &cfg).unwrap();
        let b = pretrain(&ds, &cfg).unwrap();
        assert_eq!(a.history.len(), 3);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.val_l1, y.val_l1);
            assert_eq!(x.val_sigreg, y.val_sigreg);
        }
        assert_eq!(a.weights, b.weights, "same seed must give bit-identical weights");
        assert_eq!(a.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![1, 3]);
        let min_val = a.history.iter().map(|h| h.val_l1).fold(f32::INFINITY, f32::min);
        assert_eq!(a.epsilon, min_val);
        assert!(a.epsilon.is_finite() && a.epsilon > 0.0);
    }

    #[test]
    fn validation_l1_improves_over_the_first_epochs() {
        let ds = tiny_dataset(2.0, 13);
        let mut cfg = tiny_config();
        cfg.max_epochs = 6;
        cfg.steps_per_epoch = 6;
        cfg.snapshot_epochs = vec![];
        let rep = pretrain(&ds, &cfg).unwrap();
        assert!(
            rep.epsilon < rep.history[0].val_l1,
            "best {} never beat the first epoch {}",
            rep.epsilon,
            rep.history[0].val_l1
        );
    }

    #[test]
    fn patience_triggers_early_stop() {
        let ds = tiny_dataset(0.0, 17);
        let mut cfg = tiny_config();
        cfg.max_epochs = 40;
        cfg.patience = 1;
        cfg.steps_per_epoch = 1;
        cfg.lr = 3e-2;
        cfg.snapshot_epochs = vec![];
        let rep = pretrain(&ds, &cfg).unwrap();
        assert!(rep.stopped_early);
        assert!(rep.history.len() < 40);
        assert_eq!(rep.best_epoch + 1, rep.history.last().unwrap().epoch);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = tiny_config();
        cfg.batch_size = 1;
        assert!(matches!(cfg.validate(), Err(HepaError::Config(_))));
        let mut cfg = tiny_config();
        cfg.alpha = 1.5;
        assert!(matches!(cfg.validate(), Err(HepaError::Config(_))));
        let mut cfg = tiny_config();
        cfg.k = 0;
        assert!(matches!(cfg.validate(), Err(HepaError::Config(_))));
    }
}
