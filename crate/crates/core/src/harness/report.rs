//! Report rendering: aligned-column text tables and machine-readable JSON.

use super::ablation::AblationTable;
use super::metrics::MetricsReport;
use super::transfer::TransferReport;

fn metrics_cells(m: &MetricsReport) -> [String; 4] {
    [
        format!("{:.2}", m.accuracy),
        format!("{:.2}", m.precision),
        format!("{:.2}", m.recall),
        format!("{:.2}", m.f1),
    ]
}

fn render_rows(title: &str, head: &str, rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    let mut width = head.len();
    for (label, _) in rows {
        width = width.max(label.len());
    }
    out.push_str(&format!(
        "{:<w$}  {:>8}  {:>12}  {:>9}  {:>11}\n",
        head,
        "ACC(%)",
        "Precision(%)",
        "Recall(%)",
        "F1-score(%)",
        w = width
    ));
    for (label, m) in rows {
        let c = metrics_cells(m);
        out.push_str(&format!(
            "{:<w$}  {:>8}  {:>12}  {:>9}  {:>11}\n",
            label,
            c[0],
            c[1],
            c[2],
            c[3],
            w = width
        ));
    }
    out
}

pub fn render_metrics(title: &str, m: &MetricsReport) -> String {
    let mut out = render_rows(title, "", &[(String::new(), m)]);
    if let Some(folds) = &m.per_fold {
        let rows: Vec<(String, &MetricsReport)> = folds
            .iter()
            .enumerate()
            .map(|(i, f)| (format!("fold {}", i + 1), f))
            .collect();
        out.push_str(&render_rows("per-fold", "fold", &rows));
    }
    out.push_str(&format!(
        "confusion: TP={} FP={} FN={} TN={}\n",
        m.tp, m.fp, m.fn_, m.tn
    ));
    out
}

pub fn render_ablation(title: &str, head: &str, table: &AblationTable) -> String {
    let rows: Vec<(String, &MetricsReport)> =
        table.rows.iter().map(|r| (r.label.clone(), &r.metrics)).collect();
    let mut out = render_rows(title, head, &rows);
    if let Some(h) = &table.trajectory_cache_hash {
        out.push_str(&format!("trajectory cache: {h}\n"));
    }
    out
}

pub fn render_transfer(report: &TransferReport) -> String {
    let mut out = String::new();
    let fmt_lines = |lines: &[(usize, usize)]| {
        lines
            .iter()
            .map(|(f, t)| format!("{f}-{t}"))
            .collect::<Vec<_>>()
            .join(" & ")
    };
    let direct: Vec<(String, &MetricsReport)> = report
        .rows
        .iter()
        .map(|r| (format!("{} (lines {})", r.dataset, fmt_lines(&r.lines)), &r.direct))
        .collect();
    out.push_str(&render_rows("Direct transfer", "Dataset", &direct));
    out.push('\n');
    let tuned: Vec<(String, &MetricsReport)> = report
        .rows
        .iter()
        .map(|r| (format!("{} (lines {})", r.dataset, fmt_lines(&r.lines)), &r.fine_tuned))
        .collect();
    out.push_str(&render_rows(
        &format!("Fine-tuning ({} samples)", report.finetune_count),
        "Dataset",
        &tuned,
    ));
    for r in &report.rows {
        if let Some(src) = &r.source_after_tune {
            out.push_str(&format!(
                "{}: source-domain accuracy after tuning {:.2}%\n",
                r.dataset, src.accuracy
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::compute_metrics;

    #[test]
    fn tables_render_all_rows() {
        let m = compute_metrics(&[1, 0, 1], &[1, 0, 0]).unwrap();
        let text = render_metrics("test", &m);
        assert!(text.contains("ACC(%)"));
        assert!(text.contains("66.67"));
        assert!(text.contains("TP=1"));
    }
}
