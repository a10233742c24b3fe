//! The theory-validation sweep: snapshot the encoder at fixed pretraining
//! epochs, finetune from every snapshot under several seeds, and test
//! whether representation error ε predicts downstream h-AUROC with the
//! expected negative rank correlation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, Split};
use crate::error::HepaError;
use crate::metrics::h_auroc;
use crate::pretrain::{pretrain, PretrainConfig, TrainingSnapshot};
use crate::survival::{emit_surface, predictor_finetune, FinetuneConfig};
use crate::Result;

// ── Spearman rank correlation ──

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite rank input"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn rho_of(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Two-sided p of ρ under the t-approximation t = ρ·√((n−2)/(1−ρ²))
/// against Student-t with n−2 degrees of freedom.
fn student_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Spearman ρ of `xs` against `ys` with its two-sided t-approximation
/// p-value. None when either input is constant, shorter than 3, or
/// non-finite (the statistic is undefined there).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let rho = rho_of(xs, ys)?;
    Some((rho, student_p(rho, xs.len())))
}

/// Permutations are enumerated exhaustively up to this length.
pub const EXACT_PERMUTATION_MAX: usize = 7;
/// Monte Carlo draws for longer inputs.
pub const PERMUTATION_SAMPLES: usize = 10_000;
const PERMUTATION_SEED: u64 = 0x5eeb_a5e5;

/// Two-sided permutation p-value for Spearman ρ: the fraction of
/// y-permutations whose |ρ| reaches the observed one. Exact for n ≤
/// EXACT_PERMUTATION_MAX, otherwise a seeded Monte Carlo estimate with
/// the add-one correction.
pub fn permutation_p(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let observed = rho_of(xs, ys)?.abs();
    let rx = ranks(xs);
    if xs.len() <= EXACT_PERMUTATION_MAX {
        let mut perm = ranks(ys);
        let mut hits = 0usize;
        let mut total = 0usize;
        // Heap's algorithm, counting |ρ| ≥ observed across all n! orders.
        fn visit(k: usize, perm: &mut [f64], rx: &[f64], observed: f64, hits: &mut usize, total: &mut usize) {
            if k == 1 {
                *total += 1;
                if let Some(r) = pearson(rx, perm) {
                    if r.abs() >= observed - 1e-12 {
                        *hits += 1;
                    }
                }
                return;
            }
            for i in 0..k {
                visit(k - 1, perm, rx, observed, hits, total);
                if k % 2 == 0 {
                    perm.swap(i, k - 1);
                } else {
                    perm.swap(0, k - 1);
                }
            }
        }
        let n = perm.len();
        visit(n, &mut perm, &rx, observed, &mut hits, &mut total);
        Some(hits as f64 / total as f64)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(PERMUTATION_SEED ^ xs.len() as u64);
        let mut perm = ranks(ys);
        let mut hits = 0usize;
        for _ in 0..PERMUTATION_SAMPLES {
            perm.shuffle(&mut rng);
            if let Some(r) = pearson(&rx, &perm) {
                if r.abs() >= observed - 1e-12 {
                    hits += 1;
                }
            }
        }
        Some((hits + 1) as f64 / (PERMUTATION_SAMPLES + 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    /// t-approximation (the default; matches reported values).
    Student,
    /// Permutation test, exact at sweep-sized n.
    Permutation,
}

// ── Sweep ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Pretraining epoch the encoder snapshot was taken at.
    pub epoch: usize,
    /// Finetuning seed.
    pub seed: u64,
    /// Validation L1 of the snapshot (representation error).
    pub epsilon: f32,
    /// Test h-AUROC after finetuning from the snapshot.
    pub h_auroc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub spearman_rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pools sweep points into the report statistic. Fails below 3 points or
/// when the correlation is undefined (constant ε or constant h-AUROC).
pub fn sweep_report(points: Vec<SweepPoint>, method: PMethod) -> Result<SweepReport> {
    if points.len() < 3 {
        return Err(HepaError::config(format!(
            "sweep pooled only {} points, need at least 3",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.epsilon as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.h_auroc).collect();
    let (rho, student) = spearman(&xs, &ys)
        .ok_or_else(|| HepaError::data("sweep correlation is undefined (constant inputs)"))?;
    let p_value = match method {
        PMethod::Student => student,
        PMethod::Permutation => permutation_p(&xs, &ys).expect("rho was defined"),
    };
    let n = points.len();
    Ok(SweepReport { points, spearman_rho: rho, p_value, n })
}

/// One pretraining run, finetuned from every snapshot (the configured
/// epochs plus the converged best) under every seed. Points already in
/// `prior` are reused instead of recomputed, which makes interrupted
/// sweeps resumable from their CSV.
pub fn run_sweep(
    ds: &Dataset,
    pre_cfg: &PretrainConfig,
    ft_cfg: &FinetuneConfig,
    seeds: &[u64],
    prior: &[SweepPoint],
    method: PMethod,
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(HepaError::config("sweep needs at least one finetune seed"));
    }
    let report = pretrain(ds, pre_cfg)?;
    let mut snapshots: Vec<&TrainingSnapshot> = report.snapshots.iter().collect();
    let best = TrainingSnapshot {
        epoch: report.best_epoch,
        val_l1: report.epsilon,
        weights: report.weights.clone(),
    };
    if !snapshots.iter().any(|s| s.epoch == best.epoch) {
        snapshots.push(&best);
    }
    snapshots.sort_by_key(|s| s.epoch);

    let mut points: Vec<SweepPoint> = Vec::new();
    for snap in snapshots {
        for &seed in seeds {
            if let Some(p) = prior.iter().find(|p| p.epoch == snap.epoch && p.seed == seed) {
                points.push(*p);
                continue;
            }
            let mut cfg = ft_cfg.clone();
            cfg.seed = seed;
            let ft = predictor_finetune(ds, &snap.weights, &cfg)?;
            let surface = emit_surface(ds, &ft.weights, &cfg, Split::Test)?;
            let (auroc, _) = h_auroc(&surface);
            let auroc = auroc.ok_or_else(|| {
                HepaError::data("test surface has no scorable horizon; cannot sweep")
            })?;
            points.push(SweepPoint { epoch: snap.epoch, seed, epsilon: snap.val_l1, h_auroc: auroc });
        }
    }
    sweep_report(points, method)
}

// ── Persistence ──

/// Writes `epoch,seed,epsilon,h_auroc` rows, one per point.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("epoch,seed,epsilon,h_auroc\n");
    for p in points {
        // 9 and 17 significant digits round-trip f32 and f64 exactly.
        writeln!(out, "{},{},{:.9e},{:.17e}", p.epoch, p.seed, p.epsilon, p.h_auroc)
            .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepPoint>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch,seed,epsilon,h_auroc")) => {}
        _ => return Err(HepaError::data(format!("{}: missing sweep header", path.display()))),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| HepaError::data(format!("{}:{}: missing {name}", path.display(), i + 1)))
        };
        let parse_err =
            |name: &str| HepaError::data(format!("{}:{}: bad {name}", path.display(), i + 1));
        let epoch = next("epoch")?.parse().map_err(|_| parse_err("epoch"))?;
        let seed = next("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let epsilon = next("epsilon")?.parse().map_err(|_| parse_err("epsilon"))?;
        let h = next("h_auroc")?.parse().map_err(|_| parse_err("h_auroc"))?;
        points.push(SweepPoint { epoch, seed, epsilon, h_auroc: h });
    }
    Ok(points)
}
