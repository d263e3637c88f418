//! End-to-end checks of the `manip` binary: exit codes, file outputs and
//! report rendering.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_manip");

const SMALL_RUN: &str = r#"
seeds = [1, 2, 3]
methods = ["base", "base_merged", "weight"]
[data]
source = "blobs"
pool_per_class = 400
[protocol]
kind = "imbalanced"
minority = 20
majority = 200
val_per_class = 10
test_per_class = 100
[model]
kind = "logistic"
[trainer]
epochs = 3
phi_lr = 100.0
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_report_and_plot_data_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let out = tmp.path().join("out");

    let status = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for file in ["metrics.jsonl", "timing.jsonl", "summary.json", "weights_weight_1.tsv"] {
        assert!(out.join(file).exists(), "missing {file}");
    }

    let report = Command::new(BIN).arg("report").arg(&out).output().unwrap();
    assert!(report.status.success());
    let table = String::from_utf8(report.stdout).unwrap();
    assert!(table.contains("custom(20:200)"), "{table}");
    assert!(table.contains("base_merged"), "{table}");
    assert!(table.contains('±'), "{table}");

    let plot = Command::new(BIN)
        .args(["plot-data"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(plot.status.success());
    let text = String::from_utf8(plot.stdout).unwrap();
    assert!(text.starts_with("# epoch\tmethod\tmetric\tmean\tstd"), "{text}");
    // base and weight contribute 3 epochs each; the merged baseline trains
    // for the averaged base budget, so only bound its row count
    let base_rows = text.lines().filter(|l| l.contains("\tbase\t")).count();
    let weight_rows = text.lines().filter(|l| l.contains("\tweight\t")).count();
    let merged_rows = text.lines().filter(|l| l.contains("\tbase_merged\t")).count();
    assert_eq!((base_rows, weight_rows), (3, 3), "{text}");
    assert!((1..=3).contains(&merged_rows), "{text}");
}

#[test]
fn plot_row_count_is_methods_times_epochs() {
    let text = SMALL_RUN.replace(
        r#"["base", "base_merged", "weight"]"#,
        r#"["base", "weight"]"#,
    );
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    assert!(Command::new(BIN)
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let plot = Command::new(BIN).args(["plot-data"]).arg(&out).output().unwrap();
    let text = String::from_utf8(plot.stdout).unwrap();
    // 2 methods x 3 epochs data rows plus the header line
    assert_eq!(text.lines().count(), 1 + 6, "{text}");
}

#[test]
fn plot_data_matches_the_summary_at_the_final_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let out = tmp.path().join("out");
    let status = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let summary =
        manip_harness::metrics::read_summary(&out.join("summary.json")).unwrap();
    let mut buf = Vec::new();
    manip_harness::report::emit_plot_data(&out, "selected_test_accuracy", &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let final_epoch = summary.epochs;
    for m in &summary.methods {
        // base_merged trains for the averaged base budget, not `epochs`
        let epoch = if m.name == "base_merged" {
            m.mean_selected_epoch.unwrap() as usize
        } else {
            final_epoch
        };
        let row = text
            .lines()
            .find(|l| l.starts_with(&format!("{epoch}\t{}\t", m.name)))
            .unwrap_or_else(|| panic!("no final-epoch row for {}:\n{text}", m.name));
        let mean: f64 = row.split('\t').nth(3).unwrap().parse().unwrap();
        assert_eq!(
            mean,
            m.mean_test_accuracy.unwrap(),
            "{}: plot mean {mean} vs summary {:?}",
            m.name,
            m.mean_test_accuracy
        );
    }
}

#[test]
fn seed_override_shrinks_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_RUN);
    let out = tmp.path().join("out");
    let status = Command::new(BIN)
        .args(["run", "--seeds", "2", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = manip_harness::metrics::read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.seeds, vec![1, 2]);
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "methods = []\n");
    let output = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error"));
}

#[test]
fn universal_divergence_exits_two() {
    let text = SMALL_RUN
        .replace("epochs = 3", "epochs = 3\ntheta_lr = 1e9\ndivergence_limit = 10.0")
        .replace(r#"["base", "base_merged", "weight"]"#, r#"["base"]"#);
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let output = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", String::from_utf8_lossy(&output.stderr));
    // failed seeds are counted, not silently dropped
    let summary = manip_harness::metrics::read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.methods[0].n_seeds, 0);
    assert_eq!(summary.methods[0].failed_seeds, vec![1, 2, 3]);
}
