//! Cross-run comparison tables and plot-ready exports.

use crate::metrics::{mean_std, read_metrics, read_summary, METRICS_FILE, SUMMARY_FILE};
use crate::HarnessError;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// method x setting accuracy table assembled from run summaries.
#[derive(Debug, Clone)]
pub struct ReportTable {
    /// Row order: first appearance across the input dirs.
    pub methods: Vec<String>,
    /// Column order: first appearance across the input dirs.
    pub settings: Vec<String>,
    /// (method, setting) -> (mean, std) of final test accuracy.
    pub cells: BTreeMap<(String, String), (f64, f64)>,
    pub warnings: Vec<String>,
}

/// Collect the summaries of several run directories into one table.
///
/// Runs covering different settings land in different columns; when a
/// method is missing for some setting the cell stays empty and a warning is
/// recorded.
pub fn aggregate_report(dirs: &[impl AsRef<Path>]) -> Result<ReportTable> {
    let mut methods = Vec::new();
    let mut settings = Vec::new();
    let mut cells = BTreeMap::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let dir = dir.as_ref();
        let summary = read_summary(&dir.join(SUMMARY_FILE))?;
        if !settings.contains(&summary.setting) {
            settings.push(summary.setting.clone());
        }
        for m in &summary.methods {
            if !methods.contains(&m.name) {
                methods.push(m.name.clone());
            }
            let key = (m.name.clone(), summary.setting.clone());
            if cells.contains_key(&key) {
                warnings.push(format!(
                    "duplicate cell for method {} at setting {} (from {}); keeping the first",
                    m.name,
                    summary.setting,
                    dir.display()
                ));
                continue;
            }
            let (Some(mean), Some(std)) = (m.mean_test_accuracy, m.std_test_accuracy) else {
                warnings.push(format!(
                    "method {} at setting {} has no successful seeds",
                    m.name, summary.setting
                ));
                continue;
            };
            cells.insert(key, (mean, std));
        }
    }
    for m in &methods {
        for s in &settings {
            if !cells.contains_key(&(m.clone(), s.clone())) {
                warnings.push(format!("missing cell: method {m} at setting {s}"));
            }
        }
    }
    Ok(ReportTable {
        methods,
        settings,
        cells,
        warnings,
    })
}

/// Render the table as aligned text, accuracies in percent.
pub fn render_table(t: &ReportTable) -> String {
    let mut col_width: Vec<usize> = t.settings.iter().map(|s| s.len().max(14)).collect();
    let method_width = t
        .methods
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(6)
        .max("method".len());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for m in &t.methods {
        let mut row = vec![m.clone()];
        for (j, s) in t.settings.iter().enumerate() {
            let cell = match t.cells.get(&(m.clone(), s.clone())) {
                Some((mean, std)) => format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0),
                None => "—".to_string(),
            };
            col_width[j] = col_width[j].max(cell.chars().count());
            row.push(cell);
        }
        rows.push(row);
    }
    let mut out = String::new();
    out.push_str(&format!("{:method_width$}", "method"));
    for (j, s) in t.settings.iter().enumerate() {
        out.push_str(&format!("  {:>width$}", s, width = col_width[j]));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:method_width$}", row[0]));
        for (j, cell) in row[1..].iter().enumerate() {
            let pad = col_width[j].saturating_sub(cell.chars().count());
            out.push_str("  ");
            out.push_str(&" ".repeat(pad));
            out.push_str(cell);
        }
        out.push('\n');
    }
    out
}

pub const PLOT_METRICS: &[&str] = &[
    "train_loss",
    "val_loss",
    "val_accuracy",
    "test_accuracy",
    "selected_test_accuracy",
];

/// Long-format per-epoch aggregates of one run directory:
/// `epoch<TAB>method<TAB>metric<TAB>mean<TAB>std`, one header line.
///
/// Returns the number of data rows. A run directory without metrics yields
/// the header only, plus a warning on the writer-independent channel
/// (stderr).
pub fn emit_plot_data(dir: &Path, metric: &str, out: &mut dyn Write) -> Result<usize> {
    if !PLOT_METRICS.contains(&metric) {
        return Err(HarnessError::Config(format!(
            "unknown metric {metric:?}; choose one of {PLOT_METRICS:?}"
        )));
    }
    writeln!(out, "# epoch\tmethod\tmetric\tmean\tstd")?;
    let path = dir.join(METRICS_FILE);
    let records = if path.exists() {
        read_metrics(&path)?
    } else {
        eprintln!("warning: {} has no {METRICS_FILE}; emitting header only", dir.display());
        Vec::new()
    };
    if records.is_empty() && path.exists() {
        eprintln!("warning: {} is empty", path.display());
    }

    // group values by (method, epoch), preserving first-seen method order
    let mut method_order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &records {
        let midx = match method_order.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                method_order.push(r.method.clone());
                method_order.len() - 1
            }
        };
        let value = match metric {
            "train_loss" => r.train_loss,
            "val_loss" => r.val_loss,
            "val_accuracy" => r.val_accuracy,
            "test_accuracy" => r.test_accuracy,
            "selected_test_accuracy" => r.selected_test_accuracy,
            _ => unreachable!("validated above"),
        };
        groups.entry((midx, r.epoch)).or_default().push(value);
    }
    let mut rows = 0;
    for ((midx, epoch), values) in &groups {
        let (mean, std) = mean_std(values);
        writeln!(out, "{epoch}\t{}\t{metric}\t{mean}\t{std}", method_order[*midx])?;
        rows += 1;
    }
    Ok(rows)
}
