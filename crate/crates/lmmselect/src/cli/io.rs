//! File formats behind the command-line front end.
//!
//! All tables are plain comma-separated text with a `# config: {...}` first
//! line carrying the resolved run configuration, then a header row. Fields
//! are never quoted, so free-text columns (error messages) have their commas
//! replaced. Floats are written in scientific notation with 17 significant
//! digits, which round-trips every finite `f64` exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Round-trip float formatting: 17 significant digits in scientific
/// notation. Infinities print as `inf`/`-inf`, which `f64::from_str`
/// accepts back.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Serializes a report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(report).expect("reports contain no non-string keys");
    write_file(path, &format!("{body}\n"))
}

/// First line of every CSV artifact: the resolved configuration.
pub fn config_banner<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("configs contain no non-string keys");
    format!("# config: {json}\n")
}

/// A parsed `data.csv`: group labels, response, and named covariates,
/// in file order.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub names: Vec<String>,
    pub groups: Vec<i64>,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Reads a dataset table: a header with `group`, `y`, and covariate columns
/// in any order, one observation per row. Lines starting with `#` and blank
/// lines are skipped; reported line numbers count them.
pub fn read_data_csv(path: &Path) -> Result<CsvData> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = raw
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| !line.trim().is_empty() && !line.starts_with('#'));

    let (header_line, header) = rows
        .next()
        .ok_or_else(|| parse_error(path, 1, "no header row".to_string()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let position = |name: &str| columns.iter().position(|&c| c == name);
    let group_col = position("group")
        .ok_or_else(|| parse_error(path, header_line, "missing required column 'group'".into()))?;
    let y_col = position("y")
        .ok_or_else(|| parse_error(path, header_line, "missing required column 'y'".into()))?;
    let mut seen = std::collections::BTreeSet::new();
    for &column in &columns {
        if !seen.insert(column) {
            return Err(parse_error(
                path,
                header_line,
                format!("duplicate column '{column}'"),
            ));
        }
    }
    let covariate_cols: Vec<usize> = (0..columns.len())
        .filter(|&j| j != group_col && j != y_col)
        .collect();
    let names: Vec<String> = covariate_cols
        .iter()
        .map(|&j| columns[j].to_string())
        .collect();

    let mut groups = Vec::new();
    let mut y = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    for (line_no, row) in rows {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_error(
                path,
                line_no,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let float = |j: usize| -> Result<f64> {
            let value: f64 = fields[j].parse().map_err(|_| {
                parse_error(
                    path,
                    line_no,
                    format!("column '{}': not a number: '{}'", columns[j], fields[j]),
                )
            })?;
            if !value.is_finite() {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("column '{}': non-finite value", columns[j]),
                ));
            }
            Ok(value)
        };
        let group: i64 = fields[group_col].parse().map_err(|_| {
            parse_error(
                path,
                line_no,
                format!("column 'group': not an integer: '{}'", fields[group_col]),
            )
        })?;
        groups.push(group);
        y.push(float(y_col)?);
        for &j in &covariate_cols {
            x_rows.push(float(j)?);
        }
    }
    if groups.is_empty() {
        return Err(parse_error(path, header_line, "no data rows".to_string()));
    }

    let n = groups.len();
    Ok(CsvData {
        names,
        groups,
        y: DVector::from_vec(y),
        x: DMatrix::from_row_iterator(n, covariate_cols.len(), x_rows),
    })
}

/// Writes a dataset table with columns `group`, `y`, then the covariates.
pub fn write_data_csv<T: Serialize>(
    path: &Path,
    config: &T,
    names: &[String],
    groups: &[usize],
    y: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<()> {
    let mut out = config_banner(config);
    out.push_str("group,y");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..y.len() {
        out.push_str(&groups[i].to_string());
        out.push(',');
        out.push_str(&fmt_f64(y[i]));
        for j in 0..x.ncols() {
            out.push(',');
            out.push_str(&fmt_f64(x[(i, j)]));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// One row per lambda: the penalized coefficients, the active-set size, the
/// refit BIC (infinite when that lambda was ineligible), and convergence.
pub fn write_path_csv<T: Serialize>(
    path: &Path,
    config: &T,
    names: &[String],
    rows: &[PathRow],
) -> Result<()> {
    let mut out = config_banner(config);
    out.push_str("lambda");
    for name in names {
        out.push_str(",beta_");
        out.push_str(name);
    }
    out.push_str(",n_active,bic,converged\n");
    for row in rows {
        out.push_str(&fmt_f64(row.lambda));
        for &b in row.beta.iter() {
            out.push(',');
            out.push_str(&fmt_f64(b));
        }
        out.push_str(&format!(",{},{},{}\n", row.n_active, fmt_f64(row.bic), row.converged));
    }
    write_file(path, &out)
}

/// One line of `path.csv`.
#[derive(Debug, Clone)]
pub struct PathRow {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub n_active: usize,
    pub bic: f64,
    pub converged: bool,
}

/// Replication-level record of a benchmark run; `status` is "ok" or an
/// error description. Result fields are empty strings on failed rows.
#[derive(Debug, Clone)]
pub struct ReplicationRow {
    pub method: &'static str,
    pub replication: usize,
    pub seed: u64,
    pub status: String,
    pub lambda: Option<f64>,
    pub n_active: Option<usize>,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub mse: Option<f64>,
    pub exact_recovery: Option<bool>,
    pub contains_truth: Option<bool>,
    pub zp: Option<f64>,
    /// Active set as a 0/1 string in column order.
    pub active_bits: Option<String>,
}

fn opt<T, F: Fn(&T) -> String>(value: &Option<T>, f: F) -> String {
    value.as_ref().map(f).unwrap_or_default()
}

pub fn write_replications_csv<T: Serialize>(
    path: &Path,
    config: &T,
    rows: &[ReplicationRow],
) -> Result<()> {
    let mut out = config_banner(config);
    out.push_str(
        "method,replication,seed,status,lambda,n_active,bic,loglik,mse,\
         exact_recovery,contains_truth,zp,active_set\n",
    );
    for row in rows {
        // The status text is free-form; commas would break the table.
        let status = row.status.replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.method,
            row.replication,
            row.seed,
            status,
            opt(&row.lambda, |v| fmt_f64(*v)),
            opt(&row.n_active, |v| v.to_string()),
            opt(&row.bic, |v| fmt_f64(*v)),
            opt(&row.loglik, |v| fmt_f64(*v)),
            opt(&row.mse, |v| fmt_f64(*v)),
            opt(&row.exact_recovery, |v| v.to_string()),
            opt(&row.contains_truth, |v| v.to_string()),
            opt(&row.zp, |v| fmt_f64(*v)),
            opt(&row.active_bits, |v| v.clone()),
        ));
    }
    write_file(path, &out)
}

/// Per-method summary line; `summary` is `None` when no replication of the
/// method survived to be aggregated.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: &'static str,
    pub n_requested: usize,
    pub n_effective: usize,
    pub summary: Option<crate::metrics::BenchmarkSummary>,
}

const SUMMARY_FIELDS: [&str; 10] = [
    "mse_mean",
    "mse_sd",
    "active_size_mean",
    "active_size_median",
    "active_size_sd",
    "tp_rate",
    "tpc_rate",
    "zp_mean",
    "zp_sd",
    "n_replications",
];

fn summary_values(entry: &MethodSummary) -> Vec<String> {
    match &entry.summary {
        Some(s) => vec![
            fmt_f64(s.mse_mean),
            fmt_f64(s.mse_sd),
            fmt_f64(s.active_size_mean),
            fmt_f64(s.active_size_median),
            fmt_f64(s.active_size_sd),
            fmt_f64(s.tp_rate),
            fmt_f64(s.tpc_rate),
            fmt_f64(s.zp_mean),
            fmt_f64(s.zp_sd),
            s.n_replications.to_string(),
        ],
        None => vec![String::new(); SUMMARY_FIELDS.len()],
    }
}

pub fn write_summary_csv<T: Serialize>(
    path: &Path,
    config: &T,
    entries: &[MethodSummary],
) -> Result<()> {
    let mut out = config_banner(config);
    out.push_str("method,n_requested,n_effective");
    for field in SUMMARY_FIELDS {
        out.push(',');
        out.push_str(field);
    }
    out.push('\n');
    for entry in entries {
        out.push_str(&format!(
            "{},{},{}",
            entry.method, entry.n_requested, entry.n_effective
        ));
        for value in summary_values(entry) {
            out.push(',');
            out.push_str(&value);
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn write_zp_histogram_csv<T: Serialize>(
    path: &Path,
    config: &T,
    entries: &[MethodSummary],
) -> Result<()> {
    let mut out = config_banner(config);
    out.push_str("method,zp,count\n");
    for entry in entries {
        if let Some(summary) = &entry.summary {
            for (zp, count) in &summary.zp_histogram {
                out.push_str(&format!("{},{},{}\n", entry.method, zp, count));
            }
        }
    }
    write_file(path, &out)
}

/// Fixed-width rendering of the summary for terminal output, one method
/// per row.
pub fn summary_text_table(entries: &[MethodSummary]) -> String {
    let headers = [
        "method", "reps", "used", "mse", "mse_sd", "|S|", "|S|_med", "|S|_sd", "tp", "tpc", "zp",
        "zp_sd",
    ];
    let mut rows: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for entry in entries {
        let mut row = vec![
            entry.method.to_string(),
            entry.n_requested.to_string(),
            entry.n_effective.to_string(),
        ];
        match &entry.summary {
            Some(s) => row.extend(
                [
                    s.mse_mean,
                    s.mse_sd,
                    s.active_size_mean,
                    s.active_size_median,
                    s.active_size_sd,
                    s.tp_rate,
                    s.tpc_rate,
                    s.zp_mean,
                    s.zp_sd,
                ]
                .iter()
                .map(|v| format!("{v:.4}")),
            ),
            None => row.extend(std::iter::repeat_n("-".to_string(), 9)),
        }
        rows.push(row);
    }
    align_columns(&rows)
}

/// ZP histogram as a fixed-width table.
pub fn histogram_text_table(entries: &[MethodSummary]) -> String {
    let mut rows: Vec<Vec<String>> = vec![vec![
        "method".to_string(),
        "zp".to_string(),
        "count".to_string(),
    ]];
    for entry in entries {
        if let Some(summary) = &entry.summary {
            for (zp, count) in &summary.zp_histogram {
                rows.push(vec![entry.method.to_string(), zp.clone(), count.to_string()]);
            }
        }
    }
    align_columns(&rows)
}

fn align_columns(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|j| {
            rows.iter()
                .map(|row| row.get(j).map_or(0, String::len))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[j]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn float_format_round_trips_awkward_values() {
        for v in [
            0.0,
            -0.0,
            1.0 / 3.0,
            -2.5e-300,
            1.7976931348623157e308,
            5e-324,
            123456.789,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "value {v}");
        }
    }

    #[test]
    fn data_csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let names = vec!["age".to_string(), "dose".to_string()];
        let groups = vec![1usize, 1, 2, 2, 3];
        let y = DVector::from_vec(vec![0.1, -0.2, 1.0 / 3.0, 4.5e-12, -7.0]);
        let x = DMatrix::from_row_slice(
            5,
            2,
            &[18.5, 0.0, 22.0, 1.0, 30.25, 0.5, 41.0, 0.25, 27.5, 0.75],
        );
        write_data_csv(&path, &json!({"seed": 7}), &names, &groups, &y, &x).unwrap();

        let parsed = read_data_csv(&path).unwrap();
        assert_eq!(parsed.names, names);
        assert_eq!(parsed.groups, vec![1, 1, 2, 2, 3]);
        assert_eq!(parsed.y, y);
        assert_eq!(parsed.x, x);
    }

    #[test]
    fn reader_accepts_reordered_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "y,dose,group\n1.5,0.25,4\n-0.5,0.75,2\n").unwrap();
        let parsed = read_data_csv(&path).unwrap();
        assert_eq!(parsed.names, vec!["dose".to_string()]);
        assert_eq!(parsed.groups, vec![4, 2]);
        assert_eq!(parsed.y, DVector::from_vec(vec![1.5, -0.5]));
        assert_eq!(parsed.x, DMatrix::from_row_slice(2, 1, &[0.25, 0.75]));
    }

    #[test]
    fn reader_errors_name_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let write = |body: &str| {
            let path = dir.path().join("bad.csv");
            std::fs::write(&path, body).unwrap();
            path
        };

        let err = read_data_csv(&write("# config: {}\ngroup,age\n1,20\n")).unwrap_err();
        assert!(err.to_string().contains("missing required column 'y'"), "{err}");

        let err = read_data_csv(&write("group,y,age\n1,2.0\n")).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains("expected 3 fields, found 2"), "{err}");

        // The comment line shifts the data to line 3.
        let err = read_data_csv(&write("# config: {}\ngroup,y,age\n1,2.0,oops\n")).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        assert!(err.to_string().contains("column 'age'"), "{err}");

        let err = read_data_csv(&write("group,y,age\n1.5,2.0,20\n")).unwrap_err();
        assert!(err.to_string().contains("not an integer"), "{err}");

        let err = read_data_csv(&write("group,y,age\n1,inf,20\n")).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");

        let err = read_data_csv(&write("group,y,y\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate column 'y'"), "{err}");

        let err = read_data_csv(&write("group,y,age\n")).unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");

        let missing = read_data_csv(Path::new("/nonexistent/file.csv")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
        assert_eq!(missing.exit_code(), 2);
    }

    #[test]
    fn tables_align_and_pad_missing_summaries() {
        let entries = vec![
            MethodSummary {
                method: "iwr",
                n_requested: 2,
                n_effective: 0,
                summary: None,
            },
        ];
        let table = summary_text_table(&entries);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("method"));
        assert!(lines[1].contains('-'));
    }
}
