//! Evaluation over the probability surface: ranking quality per horizon
//! (h-AUROC), point projections (expected time-to-event RMSE, thresholded
//! F1, point-adjusted F1), and calibration (ECE, Brier with its Murphy
//! decomposition). All metrics are pure functions of an immutable surface.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HepaError;
use crate::Result;

// ── Surface containers ──

/// One anchor's slice of the surface: cumulative event probabilities,
/// cumulative labels and a validity mask over horizons 1..=K.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub episode: String,
    pub t: usize,
    /// p[j-1] = P(event within j steps of t); non-decreasing, in [0, 1).
    pub p: Vec<f64>,
    pub y: Vec<bool>,
    pub valid: Vec<bool>,
}

impl SurfaceRow {
    /// Panics if the monotone-CDF or cumulative-label invariants fail;
    /// violating them is a construction bug, never a data condition.
    pub fn new(episode: String, t: usize, p: Vec<f64>, y: Vec<bool>, valid: Vec<bool>) -> Self {
        assert_eq!(p.len(), y.len());
        assert_eq!(p.len(), valid.len());
        for (j, &v) in p.iter().enumerate() {
            assert!((0.0..1.0).contains(&v), "p[{j}] = {v} outside [0, 1)");
            if j > 0 {
                assert!(v >= p[j - 1], "surface not monotone at horizon {}: {} < {}", j + 1, v, p[j - 1]);
            }
        }
        for j in 1..y.len() {
            if valid[j] && valid[j - 1] {
                assert!(y[j] >= y[j - 1], "cumulative labels decrease at horizon {}", j + 1);
            }
        }
        SurfaceRow { episode, t, p, y, valid }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySurface {
    pub k: usize,
    pub dataset: String,
    pub seed: u64,
    pub rows: Vec<SurfaceRow>,
}

impl ProbabilitySurface {
    pub fn new(k: usize, dataset: String, seed: u64, rows: Vec<SurfaceRow>) -> Self {
        assert!(k >= 1);
        for r in &rows {
            assert_eq!(r.p.len(), k, "row with {} horizons in a K={k} surface", r.p.len());
        }
        ProbabilitySurface { k, dataset, seed, rows }
    }

    /// Writes `HEPA-SURFACE v1, K=<k>, dataset=<id>, seed=<seed>` followed
    /// by one CSV line per (anchor, horizon) cell, probabilities at 9
    /// significant digits.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "HEPA-SURFACE v1, K={}, dataset={}, seed={}", self.k, self.dataset, self.seed)?;
        writeln!(w, "episode,t,dt,p,y,mask")?;
        for r in &self.rows {
            for j in 0..self.k {
                writeln!(
                    w,
                    "{},{},{},{:.8e},{},{}",
                    r.episode,
                    r.t,
                    j + 1,
                    r.p[j],
                    r.y[j] as u8,
                    r.valid[j] as u8
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| HepaError::data(format!("{}: empty file", path.display())))??;
        let (k, dataset, seed) = parse_surface_header(&header)
            .ok_or_else(|| HepaError::data(format!("{}: bad surface header {header:?}", path.display())))?;
        let columns = lines
            .next()
            .ok_or_else(|| HepaError::data("surface file has no column line".to_string()))??;
        if columns.trim() != "episode,t,dt,p,y,mask" {
            return Err(HepaError::data(format!("unexpected surface columns {columns:?}")));
        }
        let mut rows: Vec<SurfaceRow> = Vec::new();
        let mut cur: Option<(String, usize, Vec<f64>, Vec<bool>, Vec<bool>)> = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let ln = i + 3;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(HepaError::data(format!("line {ln}: expected 6 fields, got {}", f.len())));
            }
            let t: usize = f[1].parse().map_err(|_| HepaError::data(format!("line {ln}: bad t")))?;
            let dt: usize = f[2].parse().map_err(|_| HepaError::data(format!("line {ln}: bad dt")))?;
            let p: f64 = f[3].parse().map_err(|_| HepaError::data(format!("line {ln}: bad p")))?;
            let y = f[4] == "1";
            let mask = f[5] == "1";
            let switch = cur.as_ref().map_or(true, |(e, ct, ..)| e != f[0] || *ct != t);
            if switch {
                if let Some((e, ct, p, y, m)) = cur.take() {
                    rows.push(SurfaceRow::new(e, ct, p, y, m));
                }
                cur = Some((f[0].to_string(), t, Vec::new(), Vec::new(), Vec::new()));
            }
            let (_, _, ps, ys, ms) = cur.as_mut().unwrap();
            if dt != ps.len() + 1 {
                return Err(HepaError::data(format!("line {ln}: dt {dt} out of order")));
            }
            // Validate here with line context; SurfaceRow::new would panic.
            if !(0.0..1.0).contains(&p) {
                return Err(HepaError::data(format!("line {ln}: p {p} outside [0, 1)")));
            }
            if ps.last().is_some_and(|&prev| p < prev) {
                return Err(HepaError::data(format!("line {ln}: p decreases at dt {dt}")));
            }
            if mask && ms.last() == Some(&true) && ys.last() == Some(&true) && !y {
                return Err(HepaError::data(format!("line {ln}: cumulative label drops at dt {dt}")));
            }
            ps.push(p);
            ys.push(y);
            ms.push(mask);
        }
        if let Some((e, ct, p, y, m)) = cur.take() {
            rows.push(SurfaceRow::new(e, ct, p, y, m));
        }
        if rows.iter().any(|r| r.p.len() != k) {
            return Err(HepaError::data("surface rows disagree with header K".to_string()));
        }
        Ok(ProbabilitySurface::new(k, dataset, seed, rows))
    }
}

fn parse_surface_header(line: &str) -> Option<(usize, String, u64)> {
    let rest = line.strip_prefix("HEPA-SURFACE v1,")?;
    let mut k = None;
    let mut dataset = None;
    let mut seed = None;
    for part in rest.split(',') {
        let (key, val) = part.trim().split_once('=')?;
        match key {
            "K" => k = val.parse().ok(),
            "dataset" => dataset = Some(val.to_string()),
            "seed" => seed = val.parse().ok(),
            _ => return None,
        }
    }
    Some((k?, dataset?, seed?))
}

// ── Ranking ──

/// Probability that a random positive outscores a random negative, ties at
/// half credit; rank-sum formulation with average ranks. `None` when one
/// class is absent: chance level is not a defined value there.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    assert!(scores.iter().all(|s| s.is_finite()), "AUROC scores must be finite");
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            rank[idx[t]] = avg;
        }
        i = j + 1;
    }
    let r_pos: f64 = (0..n).filter(|&i| labels[i]).map(|i| rank[i]).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Quadratic pair-counting oracle for `auroc`; exposed so tests and the
/// acceptance battery share one reference.
pub fn auroc_pair_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut credit = 0.0f64;
    for &p in &pos {
        for &q in &neg {
            credit += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(credit / (pos.len() * neg.len()) as f64)
}

/// Horizons with prevalence outside [0.001, 0.999], or with a single
/// class, carry no ranking information and are excluded from h-AUROC.
pub const PREVALENCE_MIN: f64 = 0.001;
pub const PREVALENCE_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonAuroc {
    pub dt: usize,
    pub auroc: Option<f64>,
    pub prevalence: f64,
    pub n: usize,
}

pub fn per_horizon_auroc(surface: &ProbabilitySurface) -> Vec<HorizonAuroc> {
    (1..=surface.k)
        .map(|dt| {
            let j = dt - 1;
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for r in &surface.rows {
                if r.valid[j] {
                    scores.push(r.p[j]);
                    labels.push(r.y[j]);
                }
            }
            let n = scores.len();
            let prevalence = if n == 0 {
                0.0
            } else {
                labels.iter().filter(|&&l| l).count() as f64 / n as f64
            };
            let a = if n == 0 || prevalence < PREVALENCE_MIN || prevalence > PREVALENCE_MAX {
                None
            } else {
                auroc(&scores, &labels)
            };
            HorizonAuroc { dt, auroc: a, prevalence, n }
        })
        .collect()
}

/// Unweighted mean of per-horizon AUROC over retained horizons, plus the
/// full curve. `None` when every horizon is degenerate.
pub fn h_auroc(surface: &ProbabilitySurface) -> (Option<f64>, Vec<HorizonAuroc>) {
    let curve = per_horizon_auroc(surface);
    let kept: Vec<f64> = curve.iter().filter_map(|h| h.auroc).collect();
    let mean = if kept.is_empty() {
        None
    } else {
        Some(kept.iter().sum::<f64>() / kept.len() as f64)
    };
    (mean, curve)
}

/// The Fig-style per-horizon curve artifact: `dt,auroc,prevalence,n` with
/// an empty auroc field for skipped horizons.
pub fn write_horizon_curve(path: &Path, curve: &[HorizonAuroc]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "dt,auroc,prevalence,n")?;
    for h in curve {
        match h.auroc {
            Some(a) => writeln!(w, "{},{:.8e},{:.8e},{}", h.dt, a, h.prevalence, h.n)?,
            None => writeln!(w, "{},,{:.8e},{}", h.dt, h.prevalence, h.n)?,
        }
    }
    w.flush()?;
    Ok(())
}

// ── RMSE projection ──

/// Probability mass per horizon: increments of the CDF plus the residual
/// survival mass, placed at horizon K+1. Sums to 1 by construction.
pub fn event_mass(p: &[f64]) -> Vec<f64> {
    let mut mass = Vec::with_capacity(p.len() + 1);
    let mut prev = 0.0;
    for &v in p {
        mass.push(v - prev);
        prev = v;
    }
    mass.push(1.0 - prev);
    mass
}

/// Point estimate of time-to-event: the mean of the event-mass
/// distribution, residual mass at K+1.
pub fn tau_hat(p: &[f64]) -> f64 {
    event_mass(p)
        .iter()
        .enumerate()
        .map(|(i, m)| (i + 1) as f64 * m)
        .sum()
}

/// RMSE of tau_hat against true time-to-event, with the dataset RUL cap
/// applied to the truth only. `tte[i]` aligns with `surface.rows[i]`;
/// a missing truth is an error, not a silent skip.
pub fn rmse_projection(surface: &ProbabilitySurface, tte: &[Option<usize>], rul_cap: Option<usize>) -> Result<f64> {
    if tte.len() != surface.rows.len() {
        return Err(HepaError::contract(format!(
            "{} ground-truth entries for {} anchors",
            tte.len(),
            surface.rows.len()
        )));
    }
    if surface.rows.is_empty() {
        return Err(HepaError::data("empty surface".to_string()));
    }
    let mut sq = 0.0f64;
    for (r, t) in surface.rows.iter().zip(tte) {
        let truth = t.ok_or_else(|| {
            HepaError::data(format!("anchor ({}, {}) lacks event-time ground truth", r.episode, r.t))
        })?;
        let capped = rul_cap.map_or(truth, |c| truth.min(c)) as f64;
        let e = tau_hat(&r.p) - capped;
        sq += e * e;
    }
    Ok((sq / surface.rows.len() as f64).sqrt())
}

// ── Thresholded F1 ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Stats {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> F1Stats {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    F1Stats { f1, precision, recall, tp, fp, fn_ }
}

/// F1 of `p(t, horizon) >= threshold` over valid cells of one horizon.
pub fn threshold_f1(surface: &ProbabilitySurface, horizon: usize, threshold: f64) -> F1Stats {
    assert!(horizon >= 1 && horizon <= surface.k, "horizon {horizon} outside 1..=K");
    let j = horizon - 1;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in &surface.rows {
        if !r.valid[j] {
            continue;
        }
        let pred = r.p[j] >= threshold;
        match (pred, r.y[j]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// Number of evenly spaced candidate thresholds (0.00, 0.01, .., 1.00).
pub const F1_GRID: usize = 101;

/// Best threshold by F1 sweep, selected on this surface (pass a validation
/// surface, never the test one). Ties resolve to the lowest threshold.
pub fn best_f1_threshold(surface: &ProbabilitySurface, horizon: usize) -> (f64, F1Stats) {
    let mut best_thr = 0.0;
    let mut best: Option<F1Stats> = None;
    for i in 0..F1_GRID {
        let thr = i as f64 / (F1_GRID - 1) as f64;
        let s = threshold_f1(surface, horizon, thr);
        if best.as_ref().map_or(true, |b| s.f1 > b.f1) {
            best_thr = thr;
            best = Some(s);
        }
    }
    (best_thr, best.unwrap())
}

// ── Point-adjusted F1 ──

/// Binarizes the Δt=1 track and scores it twice: once cellwise, once with
/// the point-adjust protocol that credits a whole contiguous true-event
/// segment as detected if any one of its cells fires. Returned as
/// (adjusted, unadjusted); the gap between them is the inflation the
/// adjusted protocol introduces.
pub fn pa_f1(surface: &ProbabilitySurface, threshold: f64) -> (F1Stats, F1Stats) {
    // Group the dt=1 cells by episode, ordered by anchor time.
    let mut tracks: Vec<(&str, Vec<(bool, bool)>)> = Vec::new();
    for r in &surface.rows {
        if !r.valid[0] {
            continue;
        }
        let cell = (r.p[0] >= threshold, r.y[0]);
        match tracks.last_mut() {
            Some((e, cells)) if *e == r.episode => cells.push(cell),
            _ => tracks.push((&r.episode, vec![cell])),
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut atp, mut afp, mut afn) = (0, 0, 0);
    for (_, cells) in &tracks {
        let mut i = 0;
        while i < cells.len() {
            let (pred, y) = cells[i];
            if !y {
                if pred {
                    fp += 1;
                    afp += 1;
                }
                i += 1;
                continue;
            }
            // A maximal run of positive cells is one event segment.
            let mut j = i;
            while j + 1 < cells.len() && cells[j + 1].1 {
                j += 1;
            }
            let seg = j - i + 1;
            let hits = cells[i..=j].iter().filter(|(p, _)| *p).count();
            tp += hits;
            fn_ += seg - hits;
            if hits > 0 {
                atp += seg;
            } else {
                afn += seg;
            }
            i = j + 1;
        }
    }
    (f1_from_counts(atp, afp, afn), f1_from_counts(tp, fp, fn_))
}

/// Best threshold for the adjusted and unadjusted protocols separately
/// (each metric gets its most favorable operating point).
pub fn best_pa_thresholds(surface: &ProbabilitySurface) -> ((f64, F1Stats), (f64, F1Stats)) {
    let mut best_pa: Option<(f64, F1Stats)> = None;
    let mut best_plain: Option<(f64, F1Stats)> = None;
    for i in 0..F1_GRID {
        let thr = i as f64 / (F1_GRID - 1) as f64;
        let (pa, plain) = pa_f1(surface, thr);
        if best_pa.as_ref().map_or(true, |(_, b)| pa.f1 > b.f1) {
            best_pa = Some((thr, pa));
        }
        if best_plain.as_ref().map_or(true, |(_, b)| plain.f1 > b.f1) {
            best_plain = Some((thr, plain));
        }
    }
    (best_pa.unwrap(), best_plain.unwrap())
}

// ── Calibration ──

pub const CALIBRATION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ece: f64,
    /// Raw mean squared error of the probabilities.
    pub brier: f64,
    /// Brier of bin-averaged confidences; the Murphy identity
    /// brier_binned = reliability - resolution + uncertainty is exact.
    pub brier_binned: f64,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
}

/// Pools every valid cell of the surface into 10 equal-width probability
/// bins.
pub fn calibration(surface: &ProbabilitySurface) -> Result<Calibration> {
    let mut cells: Vec<(f64, bool)> = Vec::new();
    for r in &surface.rows {
        for j in 0..surface.k {
            if r.valid[j] {
                cells.push((r.p[j], r.y[j]));
            }
        }
    }
    if cells.is_empty() {
        return Err(HepaError::data("no valid cells to calibrate".to_string()));
    }
    let n = cells.len() as f64;
    let mut bin_n = [0usize; CALIBRATION_BINS];
    let mut bin_p = [0.0f64; CALIBRATION_BINS];
    let mut bin_y = [0.0f64; CALIBRATION_BINS];
    for &(p, y) in &cells {
        let b = ((p * CALIBRATION_BINS as f64) as usize).min(CALIBRATION_BINS - 1);
        bin_n[b] += 1;
        bin_p[b] += p;
        bin_y[b] += y as u8 as f64;
    }
    let ybar = cells.iter().map(|&(_, y)| y as u8 as f64).sum::<f64>() / n;
    let mut ece = 0.0;
    let mut reliability = 0.0;
    let mut resolution = 0.0;
    let mut brier_binned = 0.0;
    for b in 0..CALIBRATION_BINS {
        if bin_n[b] == 0 {
            continue;
        }
        let nb = bin_n[b] as f64;
        let conf = bin_p[b] / nb;
        let acc = bin_y[b] / nb;
        ece += nb / n * (acc - conf).abs();
        reliability += nb / n * (conf - acc) * (conf - acc);
        resolution += nb / n * (acc - ybar) * (acc - ybar);
        // Within a bin, mean (conf - y)^2 = (conf - acc)^2 + acc(1 - acc).
        brier_binned += nb / n * ((conf - acc) * (conf - acc) + acc * (1.0 - acc));
    }
    let brier = cells.iter().map(|&(p, y)| (p - y as u8 as f64).powi(2)).sum::<f64>() / n;
    Ok(Calibration {
        ece,
        brier,
        brier_binned,
        reliability,
        resolution,
        uncertainty: ybar * (1.0 - ybar),
    })
}

// ── Full report ──

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub h_auroc: Option<f64>,
    pub n_valid_horizons: usize,
    pub per_horizon_auroc: Vec<Option<f64>>,
    pub rmse: Option<f64>,
    pub f1: f64,
    pub f1_threshold: f64,
    pub f1_horizon: usize,
    pub pa_f1: f64,
    pub pa_threshold: f64,
    pub non_pa_f1: f64,
    pub non_pa_threshold: f64,
    pub ece: f64,
    pub brier: f64,
    pub brier_binned: f64,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Horizon for the single-cell F1 projection.
    pub f1_horizon: usize,
    /// Cap applied to RMSE ground truth.
    pub rul_cap: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { f1_horizon: 1, rul_cap: None }
    }
}

/// Computes the full report for `test`. Thresholds are selected on
/// `validation` when given, falling back to selection on `test` itself
/// (acceptable only for diagnostics). RMSE is computed when `tte` supplies
/// per-anchor ground truth.
pub fn evaluate(
    test: &ProbabilitySurface,
    validation: Option<&ProbabilitySurface>,
    tte: Option<&[Option<usize>]>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if opts.f1_horizon < 1 || opts.f1_horizon > test.k {
        return Err(HepaError::config(format!("f1_horizon {} outside 1..={}", opts.f1_horizon, test.k)));
    }
    let (h, curve) = h_auroc(test);
    let selection = validation.unwrap_or(test);
    let (f1_thr, _) = best_f1_threshold(selection, opts.f1_horizon);
    let f1 = threshold_f1(test, opts.f1_horizon, f1_thr);
    let ((pa_thr, _), (plain_thr, _)) = best_pa_thresholds(selection);
    let (pa, _) = pa_f1(test, pa_thr);
    let (_, plain) = pa_f1(test, plain_thr);
    let cal = calibration(test)?;
    let rmse = match tte {
        Some(t) => Some(rmse_projection(test, t, opts.rul_cap)?),
        None => None,
    };
    Ok(MetricReport {
        h_auroc: h,
        n_valid_horizons: curve.iter().filter(|c| c.auroc.is_some()).count(),
        per_horizon_auroc: curve.iter().map(|c| c.auroc).collect(),
        rmse,
        f1: f1.f1,
        f1_threshold: f1_thr,
        f1_horizon: opts.f1_horizon,
        pa_f1: pa.f1,
        pa_threshold: pa_thr,
        non_pa_f1: plain.f1,
        non_pa_threshold: plain_thr,
        ece: cal.ece,
        brier: cal.brier,
        brier_binned: cal.brier_binned,
        reliability: cal.reliability,
        resolution: cal.resolution,
        uncertainty: cal.uncertainty,
    })
}
