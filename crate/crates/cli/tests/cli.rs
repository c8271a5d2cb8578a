use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prunetrain::criteria::zero_filters_percentage;
use prunetrain::experiment::{build_network, read_metrics, Checkpoint, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_prunetrain");

fn prunetrain(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, epochs: usize, schedule: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    fs::write(
        &path,
        format!(
            r#"{{"name": "{name}", "seed": 3, "epochs": {epochs}, "checkpoint_every": 1,
                "dataset": {{"type": "synthetic", "num_classes": 3, "n_train": 96, "n_test": 48, "image_side": 16}},
                "schedule": {schedule}}}"#
        ),
    )
    .unwrap();
    path
}

fn train(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    let o = prunetrain(&args);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    o
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(prunetrain(&[]).status.code(), Some(1));
    assert_eq!(prunetrain(&["train"]).status.code(), Some(1));
    assert_eq!(prunetrain(&["bogus"]).status.code(), Some(1));
    assert_eq!(prunetrain(&["--help"]).status.code(), Some(0));
    assert_eq!(prunetrain(&["train", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"seed": 1, "epochs": 2, "optimizer": {"momentum": 0.9},
            "dataset": {"type": "synthetic", "num_classes": 2, "n_train": 8, "n_test": 8, "image_side": 16}}"#,
    )
    .unwrap();
    let o = prunetrain(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("optimizer.momentum"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "short", 2, r#"{"mode": "pwt", "rate_per_epoch": 1, "target_prune_perc": 50}"#);
    let o = prunetrain(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schedule.rate_per_epoch"), "{}", stderr(&o));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.json");
    fs::write(
        &path,
        r#"{"seed": 1, "epochs": 1, "dataset": {"type": "idx",
            "train_images": "missing-images", "train_labels": "missing-labels",
            "test_images": "missing-images", "test_labels": "missing-labels"}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = prunetrain(&["train", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn an_unpruned_run_writes_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dense", 3, r#"{"mode": "none"}"#);
    let out = dir.path().join("dense");
    let o = train(&cfg, &out, &["--seed", "11"]);
    assert!(stdout(&o).contains("3 epochs"));
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "epoch,train_loss,train_acc,test_acc,pruned_pct,unmasked_params,executed_macs,wall_seconds,t_l1norm_seconds"
    );
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.pruned_pct == 0.0 && r.wall_seconds == 0.0));
    assert!(rows.windows(2).all(|w| w[0].unmasked_params == w[1].unmasked_params));
    assert!(rows.windows(2).all(|w| w[0].executed_macs == w[1].executed_macs));
    let saved = RunConfig::from_path(out.join("config.json")).unwrap();
    assert_eq!(saved.seed, 11);
    assert!(out.join("checkpoint-final.bin").exists());
}

#[test]
fn pruned_percentage_matches_a_recount_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pwt", 4, r#"{"mode": "pwt", "rate_per_epoch": 10, "target_prune_perc": 35}"#);
    let out = dir.path().join("pwt");
    train(&cfg, &out, &[]);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    let run_cfg = RunConfig::from_path(out.join("config.json")).unwrap();
    for r in &rows {
        let ck = Checkpoint::read(out.join(format!("checkpoint-epoch-{:04}.bin", r.epoch))).unwrap();
        let masked = ck.header.masks.iter().flatten().filter(|&&m| m).count();
        let total = ck.header.masks.iter().map(Vec::len).sum::<usize>();
        assert_eq!(r.pruned_pct, 100.0 * masked as f64 / total as f64);

        let mut net = build_network::<f32>(&run_cfg, ck.header.input_shape, ck.header.num_classes).unwrap();
        ck.restore(&mut net).unwrap();
        assert_eq!(zero_filters_percentage(&net), r.pruned_pct);
        assert_eq!(net.unmasked_params(), r.unmasked_params);
    }
    assert!(rows.last().unwrap().pruned_pct >= 35.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t", 2, r#"{"mode": "pwt", "rate_per_epoch": 10, "target_prune_perc": 20}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&cfg, &a, &["--threads", "1"]);
    train(&cfg, &b, &["--threads", "3"]);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoint-final.bin")).unwrap(),
        fs::read(b.join("checkpoint-final.bin")).unwrap()
    );
}

#[test]
fn compare_writes_summary_plot_sources_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let pwt = write_config(dir.path(), "gradual", 4, r#"{"mode": "pwt", "rate_per_epoch": 10, "target_prune_perc": 30}"#);
    let prt = write_config(
        dir.path(),
        "oneshot",
        4,
        r#"{"mode": "prt", "target_prune_perc": 30, "prt_prune_epoch": 2}"#,
    );
    let (a, b) = (dir.path().join("runs/gradual"), dir.path().join("runs/oneshot"));
    train(&pwt, &a, &[]);
    train(&prt, &b, &[]);
    let out = dir.path().join("cmp");
    let o = prunetrain(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);

    let summary = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("gradual") && summary.contains("oneshot"));

    let params = fs::read_to_string(out.join("params_vs_epoch.csv")).unwrap();
    let series = |run: &str| -> Vec<f64> {
        params
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{run},")))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let (g, s) = (series("gradual"), series("oneshot"));
    assert_eq!((g.len(), s.len()), (4, 4));
    // Rows are written after the pruning hook. Gradual pruning shrinks every
    // epoch until the target; one-shot pruning drops once, at epoch 2.
    assert!(g[..3].windows(2).all(|w| w[1] < w[0]));
    assert_eq!(g[2], g[3]);
    assert!(s[1] < s[0]);
    assert!(s[1] == s[2] && s[2] == s[3]);

    let acc = fs::read_to_string(out.join("accuracy_vs_epoch.csv")).unwrap();
    assert_eq!(acc.lines().next().unwrap(), "run,epoch,value");
    assert_eq!(acc.lines().count(), 9);
    for svg in ["accuracy_vs_epoch.svg", "params_vs_epoch.svg"] {
        let text = fs::read_to_string(out.join(svg)).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        assert_eq!(text.matches("stroke-width=\"2\"").count(), 2);
    }

    let missing = prunetrain(&["compare", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("metrics.csv"));
}

#[test]
fn cost_prints_layers_and_projections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c", 2, "{}");
    let c = cfg.to_str().unwrap();
    let o = prunetrain(&["cost", "--config", c, "--n", "80", "--m", "10", "--target-rate", "0.8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("layer,n,m,k,i,o,s,r,forward_macs"));
    let savings: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("savings,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((savings - 0.4098).abs() < 1e-4);

    let out = dir.path().join("cost");
    let o = prunetrain(&[
        "cost", "--config", c, "--out", out.to_str().unwrap(), "--n", "100", "--m", "10", "--batches", "1",
        "--t-batch", "7680", "--t-l1norm", "3.3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let proj = fs::read_to_string(out.join("projections.csv")).unwrap();
    let gap: f64 = proj
        .lines()
        .find_map(|l| l.strip_prefix("latency_prt_minus_pwt_seconds,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((gap - (76800.0 - 99.0 * 3.3)).abs() < 1e-6);
    assert_eq!(fs::read_to_string(out.join("layers.csv")).unwrap().lines().count(), 6);

    let partial = prunetrain(&["cost", "--config", c, "--n", "80"]);
    assert_eq!(partial.status.code(), Some(1));
    let partial = prunetrain(&["cost", "--config", c, "--n", "80", "--m", "1", "--t-batch", "1"]);
    assert_eq!(partial.status.code(), Some(1));
}
