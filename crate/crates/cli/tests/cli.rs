//! End-to-end tests of the `hepa` binary: every subcommand, the exit-code
//! contract, determinism of reruns, and the finetune/evaluate report
//! identity. All pipelines run at miniature scale.

use std::path::Path;
use std::process::{Command, Output};

use hepa_core::{Dataset, DatasetSpec, ProbabilitySurface};
use serde_json::{json, Value};

fn hepa() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hepa"));
    cmd.env_remove("HEPA_DATA_DIR");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn hepa");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command, code: i32) -> String {
    let out = cmd.output().expect("spawn hepa");
    assert_eq!(
        out.status.code(),
        Some(code),
        "wrong exit code\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Sharp precursor process kept tiny; 12 episodes split 10 train / 2 test.
fn synthetic_spec(seed: u64) -> Value {
    json!({
        "n_episodes": 12, "channels": 3, "steps": 80, "beta": 2.0, "noise": 0.1,
        "hazard_base": 0.9, "hazard_theta": 10.0, "drift_rate": 0.02, "drift_accel": 6.0,
        "seasonal_amp": 0.5, "ar_phi": 0.8, "train_frac": 0.8, "seed": seed
    })
}

fn window() -> Value {
    json!({"context_len": 16, "patch": 4, "cycle_as_patch": false, "max_context_tokens": 512})
}

fn pretrain_cfg() -> Value {
    json!({
        "window": window(), "k": 4, "batch_size": 8, "max_epochs": 2, "patience": 2,
        "alpha": 0.1, "sigreg_directions": 4, "steps_per_epoch": 3, "stride": 4,
        "snapshot_epochs": [1], "seed": 5
    })
}

fn finetune_cfg(seed: u64) -> Value {
    json!({
        "window": window(), "k": 4, "batch_size": 16, "max_epochs": 2, "patience": 2,
        "steps_per_epoch": 4, "stride": 2, "seed": seed
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pretrain_writes_checkpoints_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pre.json");
    write_json(&cfg, &json!({"data": {"synthetic": synthetic_spec(11)}, "pretrain": pretrain_cfg()}));

    let run1 = dir.path().join("run1");
    run_ok(hepa().args(["pretrain", "--config"]).arg(&cfg).arg("--out").arg(&run1));
    for f in ["best.ckpt", "snap_e1.ckpt", "pretrain_loss.csv", "pretrain_report.json"] {
        assert!(run1.join(f).exists(), "missing {f}");
    }
    let loss = std::fs::read_to_string(run1.join("pretrain_loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,train_loss,val_l1,val_sigreg\n"));
    assert_eq!(loss.lines().count(), 3, "header + 2 epochs");

    let run2 = dir.path().join("run2");
    run_ok(hepa().args(["pretrain", "--config"]).arg(&cfg).arg("--out").arg(&run2));
    assert_eq!(
        std::fs::read(run1.join("pretrain_loss.csv")).unwrap(),
        std::fs::read(run2.join("pretrain_loss.csv")).unwrap(),
        "rerun changed the loss CSV"
    );
    assert_eq!(
        std::fs::read(run1.join("best.ckpt")).unwrap(),
        std::fs::read(run2.join("best.ckpt")).unwrap(),
        "rerun changed the checkpoint"
    );
}

#[test]
fn missing_dataset_path_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pre.json");
    write_json(
        &cfg,
        &json!({
            "data": {"csv": {"name": "gone", "train_csv": "/no/such/file.csv", "k": 4}},
            "pretrain": pretrain_cfg()
        }),
    );
    let err = run_err(hepa().args(["pretrain", "--config"]).arg(&cfg), 2);
    assert!(err.contains("/no/such/file.csv"), "stderr must name the path: {err}");
}

#[test]
fn finetune_evaluate_round_trip_and_mode_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = json!({"synthetic": synthetic_spec(11)});
    let pre_cfg = dir.path().join("pre.json");
    write_json(&pre_cfg, &json!({"data": data, "pretrain": pretrain_cfg()}));
    let pre_out = dir.path().join("pre");
    run_ok(hepa().args(["pretrain", "--config"]).arg(&pre_cfg).arg("--out").arg(&pre_out));
    let ckpt = pre_out.join("best.ckpt");

    let ft_cfg = dir.path().join("ft.json");
    write_json(&ft_cfg, &json!({"data": data, "finetune": finetune_cfg(0), "checkpoint": ckpt}));
    let ft_out = dir.path().join("ft");
    run_ok(hepa().args(["finetune", "--config"]).arg(&ft_cfg).arg("--out").arg(&ft_out));
    for f in [
        "finetuned.ckpt",
        "surface_test.txt",
        "metrics.json",
        "finetune_report.json",
        "finetune_history.csv",
        "horizon_auroc.csv",
        "horizon_auroc.svg",
    ] {
        assert!(ft_out.join(f).exists(), "missing {f}");
    }
    let report = read_json(&ft_out.join("finetune_report.json"));
    assert_eq!(report["labeled_episodes"], 10);
    assert_eq!(report["trainable_params"], 198_401);
    assert_eq!(report["mode"], "standard");
    let surface = ProbabilitySurface::read(&ft_out.join("surface_test.txt")).unwrap();
    assert_eq!(surface.k, 4);
    assert!(!surface.rows.is_empty());

    // Re-evaluating the emitted surface reproduces metrics.json exactly.
    let data_cfg = dir.path().join("data.json");
    write_json(&data_cfg, &data);
    let ev_out = dir.path().join("ev");
    run_ok(
        hepa()
            .args(["evaluate", "--surface"])
            .arg(ft_out.join("surface_test.txt"))
            .arg("--data")
            .arg(&data_cfg)
            .arg("--out")
            .arg(&ev_out),
    );
    assert_eq!(
        std::fs::read(ft_out.join("metrics.json")).unwrap(),
        std::fs::read(ev_out.join("metrics.json")).unwrap(),
        "evaluate disagrees with finetune's inline report"
    );

    // Override flags reach the run: probe mode, 20% labels, random init.
    let probe_out = dir.path().join("probe");
    run_ok(
        hepa()
            .args(["finetune", "--config"])
            .arg(&ft_cfg)
            .arg("--out")
            .arg(&probe_out)
            .args(["--mode", "probe", "--label-fraction", "0.2", "--predictor-init", "random", "--seed", "3"]),
    );
    let probe = read_json(&probe_out.join("finetune_report.json"));
    assert_eq!(probe["trainable_params"], 769);
    assert_eq!(probe["labeled_episodes"], 2);
    assert_eq!(probe["mode"], "probe");

    // A dataset whose hazard never fires has no positive cells.
    let dead_cfg = dir.path().join("dead.json");
    let mut dead = synthetic_spec(13);
    dead["hazard_base"] = json!(0.0);
    write_json(
        &dead_cfg,
        &json!({"data": {"synthetic": dead}, "finetune": finetune_cfg(0), "checkpoint": ckpt}),
    );
    let err = run_err(
        hepa().args(["finetune", "--config"]).arg(&dead_cfg).arg("--out").arg(dir.path().join("dead")),
        2,
    );
    assert!(err.contains("no positive"), "stderr: {err}");
}

#[test]
fn malformed_surface_exits_two_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(
        &path,
        "HEPA-SURFACE v1, K=2, dataset=d, seed=0\n\
         episode,t,dt,p,y,mask\n\
         e,0,1,2e-1,0,1\n\
         e,0,2,1e-1,0,1\n",
    )
    .unwrap();
    let err = run_err(hepa().args(["evaluate", "--surface"]).arg(&path), 2);
    assert!(err.contains("line 4"), "stderr must carry the line number: {err}");
}

#[test]
fn gen_synthetic_writes_a_loadable_csv_pair() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &synthetic_spec(21));
    let out = dir.path().join("data");
    run_ok(hepa().args(["gen-synthetic", "--config"]).arg(&spec).arg("--out").arg(&out));
    let ds_spec: DatasetSpec = serde_json::from_value(read_json(&out.join("dataset.json"))["csv"].clone()).unwrap();
    let ds = Dataset::load(&ds_spec).unwrap();
    assert_eq!(ds.episodes.len(), 12);
    assert_eq!(ds.channels(), 3);
    assert_eq!(ds.split_indices(hepa_core::Split::Train).len(), 10);
    assert!(ds.episodes.iter().any(|e| !e.event_times.is_empty()), "no events generated");
}

#[test]
fn sweep_emits_points_and_resumes_from_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let mut pre = pretrain_cfg();
    pre["snapshot_epochs"] = json!([1, 2]);
    write_json(
        &cfg,
        &json!({
            "data": {"synthetic": synthetic_spec(31)},
            "pretrain": pre,
            "finetune": finetune_cfg(0),
            "seeds": [0, 1]
        }),
    );
    let out = dir.path().join("sweep");
    run_ok(hepa().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let report = read_json(&out.join("sweep_report.json"));
    assert_eq!(report["n"], 4, "2 snapshots (best deduplicated) x 2 seeds");
    let csv1 = std::fs::read(out.join("sweep.csv")).unwrap();
    assert!(csv1.starts_with(b"epoch,seed,epsilon,h_auroc\n"));

    let rerun = run_ok(hepa().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(
        String::from_utf8_lossy(&rerun.stdout).contains("resuming from 4 prior points"),
        "second run must resume"
    );
    assert_eq!(csv1, std::fs::read(out.join("sweep.csv")).unwrap(), "resume changed the points");
}

#[test]
fn labelcurve_reports_retention_and_absent_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let data = json!({"synthetic": synthetic_spec(11)});
    let pre_cfg = dir.path().join("pre.json");
    write_json(&pre_cfg, &json!({"data": data, "pretrain": pretrain_cfg()}));
    let pre_out = dir.path().join("pre");
    run_ok(hepa().args(["pretrain", "--config"]).arg(&pre_cfg).arg("--out").arg(&pre_out));

    let lc_cfg = dir.path().join("lc.json");
    write_json(
        &lc_cfg,
        &json!({
            "data": data,
            "finetune": finetune_cfg(0),
            // 0.01 of 10 train episodes rounds up to a single episode,
            // below the 2-episode floor: recorded absent, not an error.
            "fractions": [1.0, 0.5, 0.01],
            "seeds": [0]
        }),
    );
    let out = dir.path().join("lc");
    let run = run_ok(
        hepa()
            .args(["labelcurve", "--config"])
            .arg(&lc_cfg)
            .arg("--checkpoint")
            .arg(pre_out.join("best.ckpt"))
            .arg("--out")
            .arg(&out),
    );
    assert!(String::from_utf8_lossy(&run.stderr).contains("fraction 0.01"), "absent cell must warn");

    let csv = std::fs::read_to_string(out.join("labelcurve.csv")).unwrap();
    assert!(csv.starts_with("fraction,seed,labeled_episodes,h_auroc,retention\n"));
    assert_eq!(csv.lines().count(), 4, "header + 3 fraction rows");
    let report = read_json(&out.join("labelcurve_report.json"));
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3);
    assert_eq!(cells[0]["fraction"], 1.0);
    assert_eq!(cells[0]["retention"], 1.0, "full labels retain 100% by definition");
    assert_eq!(cells[1]["labeled_episodes"], 5);
    assert!(cells[2]["h_auroc"].is_null(), "infeasible fraction is absent");
    assert!(out.join("labelcurve.svg").exists());
}

// ── convert-cmapss ──

/// 26-column run-to-failure rows for `units`, cycles counted from 1.
fn fabricate_cmapss(path: &Path, units: &[(usize, usize)]) {
    let mut text = String::new();
    for &(unit, cycles) in units {
        for c in 1..=cycles {
            text.push_str(&format!("{unit} {c} -0.0007 -0.0004 100.0"));
            for s in 1..=21 {
                text.push_str(&format!(" {:.2}", 100.0 * s as f64 + c as f64 + unit as f64 / 10.0));
            }
            text.push('\n');
        }
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn convert_cmapss_builds_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("train_MINI.txt");
    fabricate_cmapss(&input, &[(1, 5), (2, 6), (3, 4)]);
    let out = dir.path().join("conv");
    run_ok(
        hepa()
            .args(["convert-cmapss", "--input"])
            .arg(&input)
            .arg("--out")
            .arg(&out)
            .args(["--train-frac", "0.67"]),
    );
    let ds_spec: DatasetSpec = serde_json::from_value(read_json(&out.join("dataset.json"))["csv"].clone()).unwrap();
    assert_eq!(ds_spec.k, 150);
    assert_eq!(ds_spec.rul_cap, Some(125));
    assert!(ds_spec.cycle_as_patch);
    let ds = Dataset::load(&ds_spec).unwrap();
    assert_eq!(ds.episodes.len(), 3);
    assert_eq!(ds.channels(), 14);
    assert_eq!(ds.split_indices(hepa_core::Split::Train).len(), 2);
    let unit1 = ds.episodes.iter().find(|e| e.id == "unit001").unwrap();
    assert_eq!(unit1.steps, 5);
    assert_eq!(unit1.event_times, vec![4], "failure at the last cycle");

    // Malformed inputs carry line numbers.
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 1 0 0 0 1 2 3\n").unwrap();
    let err = run_err(
        hepa().args(["convert-cmapss", "--input"]).arg(&bad).arg("--out").arg(dir.path().join("x")),
        2,
    );
    assert!(err.contains("expected 26"), "stderr: {err}");
    let skip = dir.path().join("skip.txt");
    fabricate_cmapss(&skip, &[(1, 3)]);
    let mut lines: Vec<String> = std::fs::read_to_string(&skip).unwrap().lines().map(String::from).collect();
    lines.remove(1); // cycle 2 vanishes; cycle numbering breaks on line 2
    std::fs::write(&skip, lines.join("\n")).unwrap();
    let err = run_err(
        hepa().args(["convert-cmapss", "--input"]).arg(&skip).arg("--out").arg(dir.path().join("y")),
        2,
    );
    assert!(err.contains(":2:"), "stderr: {err}");
}

#[test]
fn hepa_data_dir_is_the_default_dataset_root() {
    let dir = tempfile::tempdir().unwrap();
    fabricate_cmapss(&dir.path().join("mini.txt"), &[(1, 4), (2, 5)]);
    // Relative input only resolves once HEPA_DATA_DIR points at the root.
    run_err(
        hepa().args(["convert-cmapss", "--input", "mini.txt", "--out"]).arg(dir.path().join("a")),
        2,
    );
    run_ok(
        hepa()
            .env("HEPA_DATA_DIR", dir.path())
            .args(["convert-cmapss", "--input", "mini.txt", "--out"])
            .arg(dir.path().join("b")),
    );
    assert!(dir.path().join("b/train.csv").exists());
}
