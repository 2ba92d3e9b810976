//! Human-readable tables and line-delimited machine records.

use std::fmt::Write as _;

use cmmlp_core::MetricReport;

/// Markdown-style table with one row per label and the four metric columns.
pub fn metric_table(first_column: &str, rows: &[(String, MetricReport)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([first_column.len()])
        .max()
        .unwrap_or(0);
    let mut s = String::new();
    let _ = write!(s, "| {first_column:<width$} |");
    for c in MetricReport::COLUMNS {
        let _ = write!(s, " {c:>6} |");
    }
    s.push('\n');
    let _ = write!(s, "|{}|", "-".repeat(width + 2));
    for _ in MetricReport::COLUMNS {
        s.push_str("-------:|");
    }
    s.push('\n');
    for (label, r) in rows {
        let _ = write!(s, "| {label:<width$} |");
        for v in r.values() {
            let _ = write!(s, " {v:>6.4} |");
        }
        s.push('\n');
    }
    s
}

/// One JSON object per line: `{"<key>": <label>, "dice": ..., ...}`.
pub fn metric_lines(key: &str, rows: &[(String, MetricReport)]) -> String {
    let mut s = String::new();
    for (label, r) in rows {
        let mut obj = serde_json::to_value(r).expect("metric report serializes");
        obj.as_object_mut()
            .expect("struct serializes to an object")
            .insert(key.to_string(), serde_json::Value::String(label.clone()));
        s.push_str(&obj.to_string());
        s.push('\n');
    }
    s
}

/// Counts body rows of a table produced by [`metric_table`].
pub fn table_rows(table: &str) -> usize {
    table.lines().skip(2).filter(|l| l.starts_with('|')).count()
}
