//! Subcommand implementations. Every command writes its artifacts under an
//! output directory and prints a short summary; anything numeric lands in
//! CSV (9 significant digits) or JSON, never only on stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hepa_core::data::generate_synthetic;
use hepa_core::Result;
use hepa_core::metrics::{self, EvalOptions, HorizonAuroc, MetricReport, ProbabilitySurface};
use hepa_core::survival::{emit_surface, predictor_finetune};
use hepa_core::theory::{read_sweep_csv, run_sweep, write_sweep_csv, PMethod};
use hepa_core::{
    Dataset, DatasetSpec, Episode, FinetuneConfig, HepaError, ModelWeights, Split, SyntheticSpec,
};
use serde::Serialize;

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{
    data_root, load_config, DataSource, FinetuneRun, LabelCurveRun, PretrainRun, SweepRun,
};
use crate::svg::{polyline_chart, Series};

fn prepare_out(cli_out: Option<PathBuf>, cfg_out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = cli_out.or(cfg_out).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| HepaError::config(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn config_hash(bytes: &[u8]) -> String {
    format!("{:016x}", checkpoint::fnv1a64(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

// ── pretrain ──

#[derive(Serialize)]
struct PretrainSummary {
    config_hash: String,
    best_epoch: usize,
    epsilon: f32,
    epochs_run: usize,
    stopped_early: bool,
    snapshot_epochs: Vec<usize>,
}

pub fn cmd_pretrain(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let (mut run, bytes) = load_config::<PretrainRun>(config)?;
    run.data.resolve(data_root().as_deref());
    if let Some(s) = seed {
        run.pretrain.seed = s;
    }
    let out = prepare_out(out, run.out_dir.take())?;
    let hash = config_hash(&bytes);
    let ds = run.data.load()?;
    let report = hepa_core::pretrain::pretrain(&ds, &run.pretrain)?;

    let meta = |epoch, epsilon| CheckpointMeta {
        config_hash: hash.clone(),
        epoch,
        epsilon,
        d_in: report.weights.d_in,
    };
    checkpoint::save(&out.join("best.ckpt"), &report.weights, &meta(report.best_epoch, report.epsilon))?;
    for snap in &report.snapshots {
        checkpoint::save(
            &out.join(format!("snap_e{}.ckpt", snap.epoch)),
            &snap.weights,
            &meta(snap.epoch, snap.val_l1),
        )?;
    }

    let mut csv = String::from("epoch,train_loss,val_l1,val_sigreg\n");
    for e in &report.history {
        writeln!(csv, "{},{:.8e},{:.8e},{:.8e}", e.epoch, e.train_loss, e.val_l1, e.val_sigreg)
            .expect("string write");
    }
    fs::write(out.join("pretrain_loss.csv"), csv)?;
    write_json(
        &out.join("pretrain_report.json"),
        &PretrainSummary {
            config_hash: hash,
            best_epoch: report.best_epoch,
            epsilon: report.epsilon,
            epochs_run: report.history.len(),
            stopped_early: report.stopped_early,
            snapshot_epochs: report.snapshots.iter().map(|s| s.epoch).collect(),
        },
    )?;
    println!(
        "pretrain: {} epochs on {} ({} episodes), best epoch {}, epsilon {:.6}",
        report.history.len(),
        ds.name,
        ds.episodes.len(),
        report.best_epoch,
        report.epsilon
    );
    println!("wrote best.ckpt + {} snapshots to {}", report.snapshots.len(), out.display());
    Ok(())
}

// ── shared surface evaluation (the one code path for metric reports) ──

/// True time-to-event per surface row, when the dataset defines one for
/// every anchor (lifecycle data); `None` otherwise, which skips RMSE.
fn tte_for(surface: &ProbabilitySurface, ds: &Dataset) -> Result<Option<Vec<Option<usize>>>> {
    let mut tte = Vec::with_capacity(surface.rows.len());
    for row in &surface.rows {
        let ep = ds
            .episodes
            .iter()
            .find(|e| e.id == row.episode)
            .ok_or_else(|| HepaError::data(format!("surface episode {} not in the dataset", row.episode)))?;
        let next = ep.event_times.iter().find(|&&e| e > row.t);
        tte.push(next.map(|&e| e - row.t));
    }
    Ok(if tte.iter().all(Option::is_some) { Some(tte) } else { None })
}

/// Reads a surface file and computes its report. Both `evaluate` and the
/// tail of `finetune` go through here, so re-evaluating an emitted surface
/// reproduces the original report exactly.
fn evaluate_surface_file(
    surface_path: &Path,
    validation_path: Option<&Path>,
    data: Option<&DataSource>,
    f1_horizon: usize,
) -> Result<(ProbabilitySurface, MetricReport)> {
    let surface = ProbabilitySurface::read(surface_path)?;
    let validation = validation_path.map(ProbabilitySurface::read).transpose()?;
    let (tte, rul_cap) = match data {
        Some(src) => (tte_for(&surface, &src.load()?)?, src.rul_cap()),
        None => (None, None),
    };
    let opts = EvalOptions { f1_horizon, rul_cap };
    let report = metrics::evaluate(&surface, validation.as_ref(), tte.as_deref(), &opts)?;
    Ok((surface, report))
}

fn write_eval_outputs(out: &Path, surface: &ProbabilitySurface, report: &MetricReport) -> Result<()> {
    write_json(&out.join("metrics.json"), report)?;
    let curve = metrics::per_horizon_auroc(surface);
    metrics::write_horizon_curve(&out.join("horizon_auroc.csv"), &curve)?;
    fs::write(out.join("horizon_auroc.svg"), horizon_svg(&curve))?;
    Ok(())
}

fn horizon_svg(curve: &[HorizonAuroc]) -> String {
    let points: Vec<(f64, f64)> =
        curve.iter().filter_map(|h| h.auroc.map(|a| (h.dt as f64, a))).collect();
    polyline_chart(
        "Per-horizon AUROC",
        "horizon dt (steps)",
        "AUROC",
        &[Series { label: "auroc", points }],
    )
}

// ── finetune ──

#[derive(Serialize)]
struct FinetuneSummary {
    config_hash: String,
    mode: hepa_core::FinetuneMode,
    trainable_params: usize,
    labeled_episodes: usize,
    w_plus: f32,
    best_epoch: usize,
    best_val_h_auroc: f64,
    epochs_run: usize,
    stopped_early: bool,
    test_h_auroc: Option<f64>,
}

pub struct FinetuneOverrides {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub label_fraction: Option<f64>,
    pub mode: Option<hepa_core::FinetuneMode>,
    pub predictor_init: Option<hepa_core::PredictorInit>,
}

pub fn cmd_finetune(config: &Path, ov: FinetuneOverrides) -> Result<()> {
    let (mut run, bytes) = load_config::<FinetuneRun>(config)?;
    run.data.resolve(data_root().as_deref());
    if let Some(s) = ov.seed {
        run.finetune.seed = s;
    }
    if let Some(f) = ov.label_fraction {
        run.finetune.label_fraction = f;
    }
    if let Some(m) = ov.mode {
        run.finetune.mode = m;
    }
    if let Some(i) = ov.predictor_init {
        run.finetune.predictor_init = i;
    }
    let ckpt_path = ov
        .checkpoint
        .or(run.checkpoint.take())
        .ok_or_else(|| HepaError::config("no checkpoint given (config field or --checkpoint)"))?;
    let out = prepare_out(ov.out, run.out_dir.take())?;
    let hash = config_hash(&bytes);

    let (weights, in_meta) = checkpoint::load(&ckpt_path)?;
    let ds = run.data.load()?;
    let report = predictor_finetune(&ds, &weights, &run.finetune)?;
    let surface = emit_surface(&ds, &report.weights, &run.finetune, Split::Test)?;
    let surface_path = out.join("surface_test.txt");
    surface.write(&surface_path)?;

    // Round-trip through the file so this report is identical to what
    // `hepa evaluate` on the emitted surface produces.
    let (surface, mreport) = evaluate_surface_file(&surface_path, None, Some(&run.data), 1)?;
    write_eval_outputs(&out, &surface, &mreport)?;

    checkpoint::save(
        &out.join("finetuned.ckpt"),
        &report.weights,
        &CheckpointMeta {
            config_hash: hash.clone(),
            epoch: report.best_epoch,
            epsilon: in_meta.epsilon,
            d_in: report.weights.d_in,
        },
    )?;
    let mut csv = String::from("epoch,train_loss,val_h_auroc\n");
    for e in &report.history {
        let val = e.val_h_auroc.map_or(String::new(), |v| format!("{v:.8e}"));
        writeln!(csv, "{},{:.8e},{}", e.epoch, e.train_loss, val).expect("string write");
    }
    fs::write(out.join("finetune_history.csv"), csv)?;
    write_json(
        &out.join("finetune_report.json"),
        &FinetuneSummary {
            config_hash: hash,
            mode: report.mode,
            trainable_params: report.trainable_params,
            labeled_episodes: report.labeled_episodes,
            w_plus: report.w_plus,
            best_epoch: report.best_epoch,
            best_val_h_auroc: report.best_val_h_auroc,
            epochs_run: report.history.len(),
            stopped_early: report.stopped_early,
            test_h_auroc: mreport.h_auroc,
        },
    )?;
    println!(
        "finetune ({:?}): {} labeled episodes, {} trainable params, best epoch {} (val h-AUROC {:.4})",
        report.mode, report.labeled_episodes, report.trainable_params, report.best_epoch, report.best_val_h_auroc
    );
    println!("test h-AUROC {}; wrote {}", fmt_opt(mreport.h_auroc), out.display());
    Ok(())
}

// ── evaluate ──

pub fn cmd_evaluate(
    surface: &Path,
    validation: Option<PathBuf>,
    data_config: Option<PathBuf>,
    f1_horizon: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = match data_config {
        Some(path) => {
            let (mut src, _) = load_config::<DataSource>(&path)?;
            src.resolve(data_root().as_deref());
            Some(src)
        }
        None => None,
    };
    let out = prepare_out(out, None)?;
    let (surface, report) = evaluate_surface_file(surface, validation.as_deref(), data.as_ref(), f1_horizon)?;
    write_eval_outputs(&out, &surface, &report)?;
    println!(
        "evaluate: {} anchors x {} horizons on {}",
        surface.rows.len(),
        surface.k,
        surface.dataset
    );
    println!(
        "h-AUROC {} ({} scorable horizons), F1@{} {:.4}, PA-F1 {:.4}, non-PA F1 {:.4}, ECE {:.4}, RMSE {}",
        fmt_opt(report.h_auroc),
        report.n_valid_horizons,
        report.f1_horizon,
        report.f1,
        report.pa_f1,
        report.non_pa_f1,
        report.ece,
        fmt_opt(report.rmse),
    );
    Ok(())
}

// ── sweep ──

pub fn cmd_sweep(
    config: &Path,
    seeds: Option<Vec<u64>>,
    permutation: bool,
    fresh: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut run, _) = load_config::<SweepRun>(config)?;
    run.data.resolve(data_root().as_deref());
    if let Some(s) = seeds {
        run.seeds = s;
    }
    let out = prepare_out(out, run.out_dir.take())?;
    let csv_path = out.join("sweep.csv");
    let prior = if !fresh && csv_path.exists() { read_sweep_csv(&csv_path)? } else { Vec::new() };
    if !prior.is_empty() {
        println!("resuming from {} prior points in {}", prior.len(), csv_path.display());
    }
    let ds = run.data.load()?;
    let method = if permutation { PMethod::Permutation } else { PMethod::Student };
    let report = run_sweep(&ds, &run.pretrain, &run.finetune, &run.seeds, &prior, method)?;
    write_sweep_csv(&csv_path, &report.points)?;
    write_json(&out.join("sweep_report.json"), &report)?;
    println!(
        "sweep: n={} points, spearman rho {:.4}, p {:.4} ({})",
        report.n,
        report.spearman_rho,
        report.p_value,
        if permutation { "permutation" } else { "student-t" }
    );
    Ok(())
}

// ── labelcurve ──

#[derive(Serialize, Clone)]
struct CurveCell {
    fraction: f64,
    seed: u64,
    labeled_episodes: Option<usize>,
    h_auroc: Option<f64>,
    retention: Option<f64>,
}

#[derive(Serialize, Clone)]
struct CurveSummary {
    fraction: f64,
    mean_h_auroc: Option<f64>,
    mean_retention: Option<f64>,
    cells_present: usize,
}

#[derive(Serialize)]
struct LabelCurveReport {
    cells: Vec<CurveCell>,
    summary: Vec<CurveSummary>,
}

pub fn cmd_labelcurve(
    config: &Path,
    checkpoint_path: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut run, _) = load_config::<LabelCurveRun>(config)?;
    run.data.resolve(data_root().as_deref());
    if let Some(s) = seeds {
        run.seeds = s;
    }
    let ckpt_path = checkpoint_path
        .or(run.checkpoint.take())
        .ok_or_else(|| HepaError::config("no checkpoint given (config field or --checkpoint)"))?;
    let out = prepare_out(out, run.out_dir.take())?;
    let mut fractions = run.fractions.clone();
    fractions.sort_by(|a, b| b.partial_cmp(a).expect("finite fractions"));
    fractions.dedup();
    if fractions.first() != Some(&1.0) {
        return Err(HepaError::config("fractions must include 1.0 (the retention denominator)"));
    }

    let (weights, _) = checkpoint::load(&ckpt_path)?;
    let ds = run.data.load()?;
    let mut cells: Vec<CurveCell> = Vec::new();
    for &seed in &run.seeds {
        let mut full: Option<f64> = None;
        for &fraction in &fractions {
            let mut cfg = run.finetune.clone();
            cfg.seed = seed;
            cfg.label_fraction = fraction;
            let outcome = curve_cell(&ds, &weights, &cfg);
            let (labeled, h_auroc) = match outcome {
                Ok(cell) => cell,
                // 1.0 must succeed; smaller fractions may be infeasible
                // (too few labeled episodes) and are recorded as absent.
                Err(e) if fraction < 1.0 => {
                    eprintln!("warning: fraction {fraction} seed {seed}: {e}");
                    (None, None)
                }
                Err(e) => return Err(e),
            };
            if fraction == 1.0 {
                full = h_auroc;
            }
            let retention = match (h_auroc, full) {
                (Some(h), Some(f)) => Some(h / f),
                _ => None,
            };
            cells.push(CurveCell { fraction, seed, labeled_episodes: labeled, h_auroc, retention });
        }
    }

    let mut csv = String::from("fraction,seed,labeled_episodes,h_auroc,retention\n");
    for c in &cells {
        writeln!(
            csv,
            "{:.8e},{},{},{},{}",
            c.fraction,
            c.seed,
            c.labeled_episodes.map_or(String::new(), |v| v.to_string()),
            c.h_auroc.map_or(String::new(), |v| format!("{v:.8e}")),
            c.retention.map_or(String::new(), |v| format!("{v:.8e}")),
        )
        .expect("string write");
    }
    fs::write(out.join("labelcurve.csv"), csv)?;

    let summary: Vec<CurveSummary> = fractions
        .iter()
        .map(|&fraction| {
            let present: Vec<&CurveCell> =
                cells.iter().filter(|c| c.fraction == fraction && c.h_auroc.is_some()).collect();
            let mean = |get: fn(&CurveCell) -> Option<f64>| {
                if present.is_empty() {
                    None
                } else {
                    Some(present.iter().map(|c| get(c).expect("present cell")).sum::<f64>() / present.len() as f64)
                }
            };
            CurveSummary {
                fraction,
                mean_h_auroc: mean(|c| c.h_auroc),
                mean_retention: mean(|c| c.retention),
                cells_present: present.len(),
            }
        })
        .collect();
    write_json(&out.join("labelcurve_report.json"), &LabelCurveReport { cells: cells.clone(), summary: summary.clone() })?;

    let labels: Vec<String> = run.seeds.iter().map(|s| format!("seed {s}")).collect();
    let series: Vec<Series> = run
        .seeds
        .iter()
        .zip(&labels)
        .map(|(&seed, label)| {
            let mut points: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.seed == seed)
                .filter_map(|c| c.h_auroc.map(|h| (c.fraction, h)))
                .collect();
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite fractions"));
            Series { label, points }
        })
        .collect();
    fs::write(
        out.join("labelcurve.svg"),
        polyline_chart("h-AUROC vs label fraction", "label fraction", "h-AUROC", &series),
    )?;

    for s in &summary {
        println!(
            "labelcurve: fraction {:.2} mean h-AUROC {} retention {} ({} of {} seeds)",
            s.fraction,
            fmt_opt(s.mean_h_auroc),
            fmt_opt(s.mean_retention),
            s.cells_present,
            run.seeds.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn curve_cell(
    ds: &Dataset,
    weights: &ModelWeights,
    cfg: &FinetuneConfig,
) -> Result<(Option<usize>, Option<f64>)> {
    let report = predictor_finetune(ds, weights, cfg)?;
    let surface = emit_surface(ds, &report.weights, cfg, Split::Test)?;
    let (h, _) = metrics::h_auroc(&surface);
    Ok((Some(report.labeled_episodes), h))
}

// ── gen-synthetic ──

pub fn cmd_gen_synthetic(config: &Path, out: PathBuf) -> Result<()> {
    let (spec, _) = load_config::<SyntheticSpec>(config)?;
    fs::create_dir_all(&out)
        .map_err(|e| HepaError::config(format!("cannot create output dir {}: {e}", out.display())))?;
    let ds = generate_synthetic(&spec);
    let train_csv = out.join("train.csv");
    let test_csv = out.join("test.csv");
    ds.write_csv(&train_csv, Split::Train)?;
    ds.write_csv(&test_csv, Split::Test)?;
    // A loader spec for the generated pair, ready for the other commands.
    let dataset = DatasetSpec {
        name: ds.name.clone(),
        train_csv,
        test_csv: Some(test_csv),
        channels: None,
        drop_constant: false,
        normalization: hepa_core::data::NormMode::None,
        context_len: 512,
        patch: 16,
        cycle_as_patch: spec.lifecycle,
        k: 16,
        rul_cap: None,
        stride: None,
    };
    write_json(&out.join("dataset.json"), &serde_json::json!({ "csv": dataset }))?;
    let n_events: usize = ds.episodes.iter().map(|e| e.event_times.len()).sum();
    println!(
        "gen-synthetic: {} episodes ({} train / {} test), {} events; wrote {}",
        ds.episodes.len(),
        ds.split_indices(Split::Train).len(),
        ds.split_indices(Split::Test).len(),
        n_events,
        out.display()
    );
    Ok(())
}

// ── convert-cmapss ──

/// The standard informative-sensor subset for FD001-FD004 (sensor indices
/// are 1-based; the rest are near-constant on these subsets).
const SELECTED_SENSORS: [usize; 14] = [2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21];

/// Converts a native C-MAPSS training file (26 whitespace-separated columns:
/// unit, cycle, 3 op settings, 21 sensors) into the CSV schema, keeping the
/// selected sensors and splitting units train/test. Only run-to-failure
/// files are supported: the last cycle of each unit becomes its event.
pub fn cmd_convert_cmapss(input: PathBuf, out: PathBuf, train_frac: f64) -> Result<()> {
    let input = match data_root() {
        Some(root) if input.is_relative() => root.join(input),
        _ => input,
    };
    if !(0.0..1.0).contains(&train_frac) || train_frac <= 0.0 {
        return Err(HepaError::config(format!("train_frac {train_frac} outside (0, 1)")));
    }
    let text = fs::read(&input)
        .map_err(|e| HepaError::config(format!("cannot read {}: {e}", input.display())))?;
    let text = String::from_utf8(text)
        .map_err(|_| HepaError::data(format!("{}: not UTF-8 text", input.display())))?;

    struct Unit {
        id: usize,
        columns: Vec<Vec<f32>>, // one per selected sensor
    }
    let mut units: Vec<Unit> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 26 {
            return Err(HepaError::data(format!(
                "{}:{ln}: {} columns, expected 26 (unit, cycle, 3 settings, 21 sensors)",
                input.display(),
                fields.len()
            )));
        }
        let parse = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| HepaError::data(format!("{}:{ln}: bad {what} {:?}", input.display(), fields[idx])))
        };
        let unit = parse(0, "unit")? as usize;
        let cycle = parse(1, "cycle")? as usize;
        if units.last().map(|u| u.id) != Some(unit) {
            if units.iter().any(|u| u.id == unit) {
                return Err(HepaError::data(format!(
                    "{}:{ln}: unit {unit} reappears; rows must be grouped by unit",
                    input.display()
                )));
            }
            units.push(Unit { id: unit, columns: vec![Vec::new(); SELECTED_SENSORS.len()] });
        }
        let u = units.last_mut().expect("just pushed");
        if cycle != u.columns[0].len() + 1 {
            return Err(HepaError::data(format!(
                "{}:{ln}: unit {unit} cycle {cycle}, expected {}",
                input.display(),
                u.columns[0].len() + 1
            )));
        }
        for (c, &s) in SELECTED_SENSORS.iter().enumerate() {
            u.columns[c].push(parse(4 + s, &format!("sensor {s}"))? as f32);
        }
    }
    if units.len() < 2 {
        return Err(HepaError::data(format!(
            "{}: {} units; need at least 2 for a train/test split",
            input.display(),
            units.len()
        )));
    }

    let n_train = ((train_frac * units.len() as f64).round() as usize).clamp(1, units.len() - 1);
    let episodes: Vec<Episode> = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let steps = u.columns[0].len();
            let mut values = Vec::with_capacity(SELECTED_SENSORS.len() * steps);
            for col in &u.columns {
                values.extend_from_slice(col);
            }
            Episode {
                id: format!("unit{:03}", u.id),
                values,
                channels: SELECTED_SENSORS.len(),
                steps,
                event_times: vec![steps - 1],
                split: if i < n_train { Split::Train } else { Split::Test },
                latent: None,
            }
        })
        .collect();
    let name = input.file_stem().map_or_else(|| "cmapss".to_string(), |s| s.to_string_lossy().into_owned());
    let ds = Dataset {
        name: name.clone(),
        channel_names: SELECTED_SENSORS.iter().map(|s| format!("s{s}")).collect(),
        episodes,
    };

    fs::create_dir_all(&out)
        .map_err(|e| HepaError::config(format!("cannot create output dir {}: {e}", out.display())))?;
    let train_csv = out.join("train.csv");
    let test_csv = out.join("test.csv");
    ds.write_csv(&train_csv, Split::Train)?;
    ds.write_csv(&test_csv, Split::Test)?;
    let dataset = DatasetSpec {
        name,
        train_csv,
        test_csv: Some(test_csv),
        channels: None,
        drop_constant: false,
        normalization: hepa_core::data::NormMode::MinmaxSubset,
        context_len: 512,
        patch: 16,
        cycle_as_patch: true,
        k: 150,
        rul_cap: Some(125),
        stride: Some(1),
    };
    write_json(&out.join("dataset.json"), &serde_json::json!({ "csv": dataset }))?;
    let cycles: usize = ds.episodes.iter().map(|e| e.steps).sum();
    println!(
        "convert-cmapss: {} units ({} train / {} test), {} cycles, {} sensors; wrote {}",
        ds.episodes.len(),
        n_train,
        ds.episodes.len() - n_train,
        cycles,
        SELECTED_SENSORS.len(),
        out.display()
    );
    Ok(())
}
