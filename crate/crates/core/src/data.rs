//! Episodes, CSV ingestion with train-split-only preprocessing, cumulative
//! label construction, anchor/window iteration, and the synthetic precursor
//! generator used for desk-scale verification.
//!
//! CSV schema: `episode_id,time,<channels...>,event` with rows grouped by
//! episode and strictly increasing time. Missing cells are forward-filled
//! within channel and episode, then zero-filled. All preprocessing
//! statistics (constant-channel detection, normalization) come from the
//! train split alone.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HepaError;
use crate::featurize::{window_to_tokens, TokenSequence};
use crate::Result;

// ── Core containers ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One multivariate series with per-timestep event flags. Values are
/// channel-major [channels, steps]. `latent` carries the generator's hidden
/// degradation state when the episode is synthetic, so tests can score with
/// a ground-truth oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub values: Vec<f32>,
    pub channels: usize,
    pub steps: usize,
    /// Sorted, within [0, steps).
    pub event_times: Vec<usize>,
    pub split: Split,
    pub latent: Option<Vec<f32>>,
}

impl Episode {
    pub fn last_step(&self) -> usize {
        self.steps - 1
    }

    /// True when some event time e satisfies lo < e <= hi.
    pub fn has_event_in(&self, lo: usize, hi: usize) -> bool {
        let above = self.event_times.partition_point(|&e| e <= lo);
        above < self.event_times.len() && self.event_times[above] <= hi
    }

    /// Channel-major copy of steps [lo, hi] inclusive.
    pub fn slice_window(&self, lo: usize, hi: usize) -> Vec<f32> {
        assert!(lo <= hi && hi < self.steps, "window [{lo}, {hi}] outside episode of {} steps", self.steps);
        let w = hi - lo + 1;
        let mut out = Vec::with_capacity(self.channels * w);
        for c in 0..self.channels {
            out.extend_from_slice(&self.values[c * self.steps + lo..c * self.steps + hi + 1]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channel_names: Vec<String>,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }
}

// ── Windowing policy ──

fn default_max_tokens() -> usize {
    512
}

/// How anchors become token sequences: fixed sliding windows of
/// `context_len` steps cut into `patch`-step tokens, or (lifecycle
/// cycle-as-patch mode) the full history with one token per step, capped at
/// `max_context_tokens`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowCfg {
    pub context_len: usize,
    pub patch: usize,
    #[serde(default)]
    pub cycle_as_patch: bool,
    #[serde(default = "default_max_tokens")]
    pub max_context_tokens: usize,
}

impl WindowCfg {
    pub fn stream(context_len: usize, patch: usize) -> Self {
        WindowCfg { context_len, patch, cycle_as_patch: false, max_context_tokens: default_max_tokens() }
    }

    pub fn cycles() -> Self {
        WindowCfg { context_len: 1, patch: 1, cycle_as_patch: true, max_context_tokens: default_max_tokens() }
    }

    /// Token dimension the encoder's input projection must accept.
    pub fn d_in(&self, channels: usize) -> usize {
        if self.cycle_as_patch {
            channels
        } else {
            channels * self.patch
        }
    }

    /// Anchor times for one episode: every anchor has a full context (stream
    /// mode) or at least one cycle (cycle mode), plus at least one future
    /// step. Episodes too short for any anchor yield an empty list.
    pub fn anchors(&self, episode: &Episode, stride: usize) -> Vec<usize> {
        assert!(stride >= 1, "stride must be positive");
        if episode.steps < 2 {
            return Vec::new();
        }
        let last = episode.steps - 2;
        let first = if self.cycle_as_patch { 0 } else { self.context_len - 1 };
        if first > last {
            return Vec::new();
        }
        (first..=last).step_by(stride).collect()
    }

    /// The context window ending at anchor `t`, tokenized.
    pub fn context_tokens(&self, episode: &Episode, t: usize) -> TokenSequence {
        if self.cycle_as_patch {
            let len = (t + 1).min(self.max_context_tokens);
            let vals = episode.slice_window(t + 1 - len, t);
            window_to_tokens(&vals, episode.channels, len, 1)
        } else {
            assert!(t + 1 >= self.context_len, "anchor {t} lacks a full context");
            let vals = episode.slice_window(t + 1 - self.context_len, t);
            window_to_tokens(&vals, episode.channels, self.context_len, self.patch)
        }
    }

    /// The future interval (t, t+dt], tokenized for the target encoder.
    pub fn target_tokens(&self, episode: &Episode, t: usize, dt: usize) -> TokenSequence {
        assert!(dt >= 1 && t + dt <= episode.last_step(), "future interval ({t}, {}] leaves the episode", t + dt);
        let vals = episode.slice_window(t + 1, t + dt);
        let patch = if self.cycle_as_patch { 1 } else { self.patch };
        window_to_tokens(&vals, episode.channels, dt, patch)
    }
}

// ── Labels ──

/// Cumulative event labels and validity mask for one anchor: y[j-1] says an
/// event falls in (t, t+j]; the cell is invalid (right-censored) when the
/// horizon leaves the observed range and no event was seen by the last step.
pub fn build_labels(event_times: &[usize], t: usize, k: usize, last_step: usize) -> (Vec<bool>, Vec<bool>) {
    let first_after = event_times.partition_point(|&e| e <= t);
    let next_event = event_times.get(first_after).copied();
    let mut y = Vec::with_capacity(k);
    let mut valid = Vec::with_capacity(k);
    for j in 1..=k {
        let hit = next_event.map_or(false, |e| e <= t + j);
        let observed = t + j <= last_step || next_event.map_or(false, |e| e <= last_step);
        y.push(hit);
        valid.push(observed);
    }
    (y, valid)
}

// ── Dataset spec and CSV ingestion ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    None,
    ZscoreTrain,
    MinmaxSubset,
}

fn default_context_len() -> usize {
    512
}

fn default_patch() -> usize {
    16
}

/// Where a dataset comes from and how it is preprocessed and windowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub train_csv: PathBuf,
    #[serde(default)]
    pub test_csv: Option<PathBuf>,
    /// Restrict to these channels (by header name) before other rules.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    /// Drop channels whose train-split variance is below 1e-8.
    #[serde(default)]
    pub drop_constant: bool,
    #[serde(default)]
    pub normalization: NormMode,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default)]
    pub cycle_as_patch: bool,
    pub k: usize,
    #[serde(default)]
    pub rul_cap: Option<usize>,
    /// Anchor stride; defaults to 1 in cycle mode and 8 for sliding windows.
    #[serde(default)]
    pub stride: Option<usize>,
}

impl DatasetSpec {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(if self.cycle_as_patch { 1 } else { 8 })
    }

    pub fn window_cfg(&self) -> WindowCfg {
        WindowCfg {
            context_len: self.context_len,
            patch: if self.cycle_as_patch { 1 } else { self.patch },
            cycle_as_patch: self.cycle_as_patch,
            max_context_tokens: default_max_tokens(),
        }
    }
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<Option<f32>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f32>()
        .map(Some)
        .map_err(|_| HepaError::data(format!("row {row}: non-numeric value {trimmed:?} in column {col}")))
}

fn read_csv_file(path: &Path, split: Split) -> Result<(Vec<Episode>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HepaError::data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| HepaError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.first().map(String::as_str) != Some("episode_id") || headers.get(1).map(String::as_str) != Some("time") {
        return Err(HepaError::data(format!("{}: header must start with episode_id,time", path.display())));
    }
    if headers.last().map(String::as_str) != Some("event") {
        return Err(HepaError::data(format!("{}: header must end with an event column", path.display())));
    }
    let channel_names: Vec<String> = headers[2..headers.len() - 1].to_vec();
    if channel_names.is_empty() {
        return Err(HepaError::data(format!("{}: no channel columns", path.display())));
    }

    struct Building {
        id: String,
        last_time: i64,
        columns: Vec<Vec<f32>>, // per channel
        last_seen: Vec<Option<f32>>,
        events: Vec<usize>,
    }
    let mut done: Vec<Episode> = Vec::new();
    let mut seen_ids: Vec<String> = Vec::new();
    let mut current: Option<Building> = None;
    let n_ch = channel_names.len();

    let finish = |b: Building, done: &mut Vec<Episode>| {
        let steps = b.columns[0].len();
        let mut values = Vec::with_capacity(n_ch * steps);
        for col in &b.columns {
            values.extend_from_slice(col);
        }
        done.push(Episode {
            id: b.id,
            values,
            channels: n_ch,
            steps,
            event_times: b.events,
            split,
            latent: None,
        });
    };

    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|e| HepaError::data(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(HepaError::data(format!("row {row}: {} fields, expected {}", record.len(), headers.len())));
        }
        let id = record.get(0).unwrap().to_string();
        let time = record
            .get(1)
            .unwrap()
            .parse::<i64>()
            .map_err(|_| HepaError::data(format!("row {row}: non-integer time {:?}", record.get(1).unwrap())))?;

        let switch = current.as_ref().map_or(true, |b| b.id != id);
        if switch {
            if let Some(b) = current.take() {
                finish(b, &mut done);
            }
            if seen_ids.contains(&id) {
                return Err(HepaError::data(format!("row {row}: episode {id:?} reappears; rows must be sorted by (episode_id, time)")));
            }
            seen_ids.push(id.clone());
            current = Some(Building {
                id,
                last_time: i64::MIN,
                columns: vec![Vec::new(); n_ch],
                last_seen: vec![None; n_ch],
                events: Vec::new(),
            });
        }
        let b = current.as_mut().unwrap();
        if time <= b.last_time {
            return Err(HepaError::data(format!("row {row}: time {time} not increasing within episode {:?}", b.id)));
        }
        b.last_time = time;

        let step = b.columns[0].len();
        for (c, name) in channel_names.iter().enumerate() {
            let cell = parse_cell(record.get(2 + c).unwrap(), row, name)?;
            let filled = match cell {
                Some(v) => {
                    b.last_seen[c] = Some(v);
                    v
                }
                None => b.last_seen[c].unwrap_or(0.0),
            };
            b.columns[c].push(filled);
        }
        let ev = record
            .get(headers.len() - 1)
            .unwrap()
            .parse::<f32>()
            .map_err(|_| HepaError::data(format!("row {row}: non-numeric event flag")))?;
        if ev != 0.0 {
            b.events.push(step);
        }
    }
    if let Some(b) = current.take() {
        finish(b, &mut done);
    }
    if done.is_empty() {
        return Err(HepaError::data(format!("{}: no data rows", path.display())));
    }
    Ok((done, channel_names))
}

/// Per-channel (offset, scale) so that normalized = (x - offset) / scale.
fn channel_norm_stats(episodes: &[&Episode], channels: usize, mode: NormMode) -> Vec<(f32, f32)> {
    match mode {
        NormMode::None => vec![(0.0, 1.0); channels],
        NormMode::ZscoreTrain => (0..channels)
            .map(|c| {
                let mut n = 0usize;
                let mut mean = 0.0f64;
                let mut m2 = 0.0f64;
                for ep in episodes {
                    for &v in &ep.values[c * ep.steps..(c + 1) * ep.steps] {
                        n += 1;
                        let d = v as f64 - mean;
                        mean += d / n as f64;
                        m2 += d * (v as f64 - mean);
                    }
                }
                let std = (m2 / n.max(1) as f64).sqrt().max(1e-8);
                (mean as f32, std as f32)
            })
            .collect(),
        NormMode::MinmaxSubset => (0..channels)
            .map(|c| {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for ep in episodes {
                    for &v in &ep.values[c * ep.steps..(c + 1) * ep.steps] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                (lo, (hi - lo).max(1e-12))
            })
            .collect(),
    }
}

impl Dataset {
    /// Loads and preprocesses a dataset: channel selection, forward/zero
    /// fill (during parse), constant-channel drop by train variance, and
    /// dataset-level normalization with train-split statistics.
    pub fn load(spec: &DatasetSpec) -> Result<Dataset> {
        let (train, names) = read_csv_file(&spec.train_csv, Split::Train)?;
        let mut episodes = train;
        if let Some(test_path) = &spec.test_csv {
            let (test, test_names) = read_csv_file(test_path, Split::Test)?;
            if test_names != names {
                return Err(HepaError::data(format!(
                    "channel mismatch between {} and {}",
                    spec.train_csv.display(),
                    test_path.display()
                )));
            }
            episodes.extend(test);
        }
        let mut keep: Vec<usize> = (0..names.len()).collect();
        if let Some(wanted) = &spec.channels {
            for w in wanted {
                if !names.contains(w) {
                    return Err(HepaError::config(format!("unknown channel {w:?} requested; file has {names:?}")));
                }
            }
            keep.retain(|&c| wanted.contains(&names[c]));
        }
        let mut ds = Dataset {
            name: spec.name.clone(),
            channel_names: keep.iter().map(|&c| names[c].clone()).collect(),
            episodes,
        };
        if keep.len() != names.len() {
            retain_channels(&mut ds.episodes, &keep);
        }

        if spec.drop_constant {
            let train_refs: Vec<&Episode> = ds.episodes.iter().filter(|e| e.split == Split::Train).collect();
            let mut keep = Vec::new();
            for c in 0..ds.channels() {
                let mut n = 0usize;
                let mut mean = 0.0f64;
                let mut m2 = 0.0f64;
                for ep in &train_refs {
                    for &v in &ep.values[c * ep.steps..(c + 1) * ep.steps] {
                        n += 1;
                        let d = v as f64 - mean;
                        mean += d / n as f64;
                        m2 += d * (v as f64 - mean);
                    }
                }
                if m2 / n.max(1) as f64 >= 1e-8 {
                    keep.push(c);
                }
            }
            if keep.is_empty() {
                return Err(HepaError::data("all channels are near-constant on the train split".to_string()));
            }
            if keep.len() != ds.channels() {
                ds.channel_names = keep.iter().map(|&c| ds.channel_names[c].clone()).collect();
                retain_channels(&mut ds.episodes, &keep);
            }
        }

        if spec.normalization != NormMode::None {
            let stats = ds.train_norm_stats(spec.normalization);
            for ep in &mut ds.episodes {
                for c in 0..ep.channels {
                    let (off, scale) = stats[c];
                    for v in &mut ep.values[c * ep.steps..(c + 1) * ep.steps] {
                        *v = (*v - off) / scale;
                    }
                }
            }
        }
        Ok(ds)
    }

    /// Normalization statistics from the train split only; exposed so tests
    /// can assert independence from the test split.
    pub fn train_norm_stats(&self, mode: NormMode) -> Vec<(f32, f32)> {
        let train: Vec<&Episode> = self.episodes.iter().filter(|e| e.split == Split::Train).collect();
        channel_norm_stats(&train, self.channels(), mode)
    }

    /// Writes one split back out in the ingestion schema.
    pub fn write_csv(&self, path: &Path, split: Split) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| HepaError::data(format!("cannot create {}: {e}", path.display())))?;
        let mut header = vec!["episode_id".to_string(), "time".to_string()];
        header.extend(self.channel_names.iter().cloned());
        header.push("event".to_string());
        w.write_record(&header).map_err(|e| HepaError::data(e.to_string()))?;
        for ep in self.episodes.iter().filter(|e| e.split == split) {
            for t in 0..ep.steps {
                let mut rec = vec![ep.id.clone(), t.to_string()];
                for c in 0..ep.channels {
                    rec.push(format!("{:.9e}", ep.values[c * ep.steps + t]));
                }
                rec.push(if ep.event_times.binary_search(&t).is_ok() { "1" } else { "0" }.to_string());
                w.write_record(&rec).map_err(|e| HepaError::data(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| HepaError::data(e.to_string()))?;
        Ok(())
    }
}

fn retain_channels(episodes: &mut [Episode], keep: &[usize]) {
    for ep in episodes {
        let mut values = Vec::with_capacity(keep.len() * ep.steps);
        for &c in keep {
            values.extend_from_slice(&ep.values[c * ep.steps..(c + 1) * ep.steps]);
        }
        ep.values = values;
        ep.channels = keep.len();
    }
}

// ── Synthetic precursor generator ──

fn default_train_frac() -> f32 {
    0.8
}

fn default_theta() -> f32 {
    4.0
}

fn default_rate() -> f32 {
    0.01
}

fn default_accel() -> f32 {
    0.5
}

fn default_seasonal() -> f32 {
    0.5
}

fn default_phi() -> f32 {
    0.8
}

/// Synthetic precursor process: a latent degradation state drifts upward
/// with accelerating increments, channels observe it scaled by `beta` on
/// top of seasonal and AR(1) structure, and the per-step event hazard is
/// `hazard_base * sigmoid(z - hazard_theta)`. With `beta = 0` the labels
/// are independent of anything observable. In stream mode events reset the
/// latent state; in lifecycle mode the first event ends the episode
/// (run-to-failure), with a forced failure at the step cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_episodes: usize,
    pub channels: usize,
    pub steps: usize,
    pub beta: f32,
    pub noise: f32,
    pub hazard_base: f32,
    #[serde(default = "default_theta")]
    pub hazard_theta: f32,
    #[serde(default = "default_rate")]
    pub drift_rate: f32,
    #[serde(default = "default_accel")]
    pub drift_accel: f32,
    #[serde(default = "default_seasonal")]
    pub seasonal_amp: f32,
    #[serde(default = "default_phi")]
    pub ar_phi: f32,
    #[serde(default)]
    pub lifecycle: bool,
    #[serde(default = "default_train_frac")]
    pub train_frac: f32,
    pub seed: u64,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Dataset {
    assert!(spec.n_episodes >= 1 && spec.channels >= 1 && spec.steps >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = ((spec.train_frac * spec.n_episodes as f32).round() as usize).clamp(1, spec.n_episodes.max(2) - 1).min(spec.n_episodes);
    let mut episodes = Vec::with_capacity(spec.n_episodes);
    for e in 0..spec.n_episodes {
        let loadings: Vec<f32> = (0..spec.channels).map(|_| 0.5 + rng.gen::<f32>()).collect();
        let periods: Vec<f32> = (0..spec.channels).map(|_| 20.0 + 40.0 * rng.gen::<f32>()).collect();
        let phases: Vec<f32> = (0..spec.channels).map(|_| 2.0 * std::f32::consts::PI * rng.gen::<f32>()).collect();
        let mut ar = vec![0.0f32; spec.channels];
        let mut z = 0.0f32;
        let mut latent = Vec::with_capacity(spec.steps);
        let mut columns = vec![Vec::with_capacity(spec.steps); spec.channels];
        let mut events = Vec::new();
        let mut steps_taken = 0usize;
        for t in 0..spec.steps {
            latent.push(z);
            for c in 0..spec.channels {
                let seasonal = spec.seasonal_amp * (2.0 * std::f32::consts::PI * t as f32 / periods[c] + phases[c]).sin();
                ar[c] = spec.ar_phi * ar[c] + 0.25 * normal(&mut rng);
                let x = spec.beta * loadings[c] * z + seasonal + ar[c] + spec.noise * normal(&mut rng);
                columns[c].push(x);
            }
            steps_taken = t + 1;
            let hazard = spec.hazard_base * sigmoid(z - spec.hazard_theta);
            let fired = rng.gen::<f32>() < hazard;
            let forced = spec.lifecycle && t == spec.steps - 1 && events.is_empty();
            if fired || forced {
                events.push(t);
                if spec.lifecycle {
                    break;
                }
                z = 0.0;
            } else {
                z += spec.drift_rate * (1.0 + spec.drift_accel * z) * normal(&mut rng).abs();
            }
        }
        let steps = steps_taken;
        let mut values = Vec::with_capacity(spec.channels * steps);
        for col in &mut columns {
            col.truncate(steps);
            values.extend_from_slice(col);
        }
        latent.truncate(steps);
        episodes.push(Episode {
            id: format!("ep{e:04}"),
            values,
            channels: spec.channels,
            steps,
            event_times: events,
            split: if e < n_train { Split::Train } else { Split::Test },
            latent: Some(latent),
        });
    }
    Dataset {
        name: format!("synthetic-beta{}", spec.beta),
        channel_names: (0..spec.channels).map(|c| format!("ch{c}")).collect(),
        episodes,
    }
}

/// The surface an observer of the hidden degradation state would emit:
/// per-anchor constant hazard λ_t = base·σ(z_t − θ), expanded to
/// p(Δt) = 1 − (1−λ_t)^Δt. Ignores future drift, so it is a ranking
/// ceiling (any monotone transform of z_t ranks the same), not a
/// calibration oracle. Requires generator latents.
pub fn latent_oracle_surface(
    ds: &Dataset,
    window: &WindowCfg,
    k: usize,
    stride: usize,
    split: Split,
    hazard_base: f32,
    hazard_theta: f32,
) -> Result<crate::metrics::ProbabilitySurface> {
    let mut rows = Vec::new();
    for ei in ds.split_indices(split) {
        let ep = &ds.episodes[ei];
        let z = ep
            .latent
            .as_ref()
            .ok_or_else(|| HepaError::data(format!("episode {} carries no latent state", ep.id)))?;
        for t in window.anchors(ep, stride) {
            let lam = (hazard_base * sigmoid(z[t] - hazard_theta)) as f64;
            let lam = lam.clamp(0.0, 1.0 - 1e-7);
            let p: Vec<f64> =
                (1..=k).map(|j| (-(j as f64 * (-lam).ln_1p()).exp_m1()).min(1.0 - 1e-12)).collect();
            let (y, valid) = build_labels(&ep.event_times, t, k, ep.last_step());
            rows.push(crate::metrics::SurfaceRow::new(ep.id.clone(), t, p, y, valid));
        }
    }
    if rows.is_empty() {
        return Err(HepaError::data("no anchors; episodes are too short for the context window"));
    }
    Ok(crate::metrics::ProbabilitySurface::new(k, ds.name.clone(), 0, rows))
}

/// Replaces every episode's event times with uniformly drawn ones of the
/// same count, severing any input-label dependence (stream datasets only;
/// lifecycle events are structural).
pub fn shuffle_event_times(dataset: &mut Dataset, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ep in &mut dataset.episodes {
        let n = ep.event_times.len().min(ep.steps);
        let mut times: Vec<usize> = index_sample(&mut rng, ep.steps, n).into_iter().collect();
        times.sort_unstable();
        ep.event_times = times;
    }
}
