//! Artifact input/output: delimited-text dataset ingestion with coordinate
//! errors, trace persistence, partition import/export, plot-ready tables,
//! and the run manifest. All numeric output uses 17 significant digits so
//! every file round-trips bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{ColumnRoles, RunConfig};
use crate::error::{Error, Result};
use crate::estimands::{GroupEffect, GroupProfile, Groups, PosteriorSummary};
use crate::gibbs::PosteriorDraws;
use crate::matching::BalanceRow;
use crate::model::Dataset;

/// Round-trippable text form of a double (17 significant digits).
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.16e}")
}

fn detect_delimiter(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else if header.contains(',') {
        ','
    } else {
        ' '
    }
}

fn split_fields(line: &str, delim: char) -> Vec<String> {
    if delim == ' ' {
        line.split_whitespace().map(str::to_string).collect()
    } else {
        line.split(delim).map(|f| f.trim().to_string()).collect()
    }
}

/// Parses a delimited dataset file under the configured column roles.
///
/// Returns the dataset plus per-covariate categorical flags (aligned with
/// the dataset's column order). Errors carry 1-based data-row coordinates
/// and column names.
pub fn load_dataset(path: &Path, roles: &ColumnRoles) -> Result<(Dataset<f64>, Vec<bool>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::input(format!("dataset {} is empty", path.display())))?;
    let delim = detect_delimiter(header_line);
    let header = split_fields(header_line, delim);
    for (i, name) in header.iter().enumerate() {
        if header[..i].contains(name) {
            return Err(Error::input(format!("duplicated header column '{name}'")));
        }
    }
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("declared column '{name}' not found in header")))
    };
    let y_col = col(&roles.outcome)?;
    let t_col = col(&roles.treatment)?;
    let cov_names: Vec<String> = if roles.covariates.is_empty() {
        header
            .iter()
            .filter(|h| **h != roles.outcome && **h != roles.treatment)
            .cloned()
            .collect()
    } else {
        roles.covariates.clone()
    };
    if cov_names.is_empty() {
        return Err(Error::input("dataset has no covariate columns".to_string()));
    }
    let cov_cols: Vec<usize> = cov_names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    for c in &roles.categorical {
        if !cov_names.contains(c) {
            return Err(Error::input(format!(
                "categorical column '{c}' is not among the covariates"
            )));
        }
    }
    let categorical: Vec<bool> = cov_names.iter().map(|n| roles.categorical.contains(n)).collect();

    let p = cov_cols.len();
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        let fields = split_fields(line, delim);
        if fields.len() != header.len() {
            return Err(Error::input(format!(
                "row {row} has {} fields, header has {}",
                fields.len(),
                header.len()
            )));
        }
        let cell = |c: usize| -> Result<f64> {
            fields[c].parse::<f64>().map_err(|_| {
                Error::input(format!(
                    "non-numeric value '{}' at row {row}, column '{}'",
                    fields[c], header[c]
                ))
            })
        };
        y.push(cell(y_col)?);
        let tv = cell(t_col)?;
        if tv == 0.0 {
            t.push(0u8);
        } else if tv == 1.0 {
            t.push(1u8);
        } else {
            return Err(Error::input(format!(
                "treatment value '{}' at row {row} is not in {{0,1}}",
                fields[t_col]
            )));
        }
        for &c in &cov_cols {
            x.push(cell(c)?);
        }
    }
    let data = Dataset::new(y, t, x, p, cov_names)?;
    Ok((data, categorical))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Error::input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))
}

/// Writes a dataset as tab-separated text with a header row.
pub fn save_dataset(path: &Path, data: &Dataset<f64>) -> Result<()> {
    let mut out = String::from("y\tt");
    for name in &data.column_names {
        out.push('\t');
        out.push_str(name);
    }
    for i in 0..data.n() {
        let _ = write!(out, "\n{}\t{}", fmt_sig(data.y[i]), data.t[i]);
        for v in data.row(i) {
            let _ = write!(out, "\t{}", fmt_sig(*v));
        }
    }
    out.push('\n');
    write_text(path, &out)
}

/// One-column partition export (header plus one label per unit).
pub fn save_partition(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("cluster");
    for l in labels {
        let _ = write!(out, "\n{l}");
    }
    out.push('\n');
    write_text(path, &out)
}

/// Reads a one-column partition file written by [`save_partition`].
pub fn load_partition(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read partition {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "cluster" => {}
        _ => {
            return Err(Error::input(format!(
                "partition file {} must start with a 'cluster' header",
                path.display()
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                Error::input(format!("non-integer label '{}' at row {}", l.trim(), i + 1))
            })
        })
        .collect()
}

fn matrix_file(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join("\t");
    for row in rows {
        out.push('\n');
        let mut first = true;
        for v in row {
            if !first {
                out.push('\t');
            }
            first = false;
            out.push_str(&fmt_sig(v));
        }
    }
    out.push('\n');
    out
}

/// Persists the thinned trace, one file per parameter block per arm, plus
/// the allocation draws. Row r is stored draw r.
pub fn save_traces(dir: &Path, draws: &PosteriorDraws<f64>) -> Result<()> {
    let l_total = draws.hyper.truncation;
    for arm in 0..2 {
        let eta_names: Vec<String> = (0..l_total).map(|l| format!("eta_{l}")).collect();
        let eta = matrix_file(
            &eta_names,
            draws.states.iter().map(|s| s.arms[arm].eta.clone()),
        );
        write_text(&dir.join(format!("trace_eta_t{arm}.tsv")), &eta)?;

        let s2_names: Vec<String> = (0..l_total).map(|l| format!("sigma2_{l}")).collect();
        let s2 = matrix_file(
            &s2_names,
            draws.states.iter().map(|s| s.arms[arm].sigma2.clone()),
        );
        write_text(&dir.join(format!("trace_sigma2_t{arm}.tsv")), &s2)?;

        let b0_names: Vec<String> = (0..l_total - 1).map(|l| format!("beta0_{l}")).collect();
        let b0 = matrix_file(
            &b0_names,
            draws.states.iter().map(|s| s.arms[arm].beta0.clone()),
        );
        write_text(&dir.join(format!("trace_beta0_t{arm}.tsv")), &b0)?;

        let p = draws.states[0].arms[arm].p;
        let mut b_names = Vec::with_capacity((l_total - 1) * p);
        for l in 0..l_total - 1 {
            for q in 0..p {
                b_names.push(format!("beta_{l}_{q}"));
            }
        }
        let b = matrix_file(
            &b_names,
            draws.states.iter().map(|s| s.arms[arm].beta.clone()),
        );
        write_text(&dir.join(format!("trace_beta_t{arm}.tsv")), &b)?;

        let n = draws.states[0].alloc[arm].len();
        let mut alloc = (0..n).map(|i| format!("s_{i}")).collect::<Vec<_>>().join("\t");
        for s in &draws.states {
            alloc.push('\n');
            alloc.push_str(
                &s.alloc[arm].iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\t"),
            );
        }
        alloc.push('\n');
        write_text(&dir.join(format!("trace_alloc_t{arm}.tsv")), &alloc)?;
    }
    Ok(())
}

/// Group effect summaries (GATE or GARR) as a plot-ready table.
pub fn save_group_effects(path: &Path, effects: &[GroupEffect<f64>]) -> Result<()> {
    let mut out = String::from(
        "group\tsize\tmean\tmedian\tsd\tlower\tupper\tsmall_group\tdegenerate_draws",
    );
    for e in effects {
        let _ = write!(
            out,
            "\n{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.group,
            e.size,
            fmt_sig(e.summary.mean),
            fmt_sig(e.summary.median),
            fmt_sig(e.summary.sd),
            fmt_sig(e.summary.lower),
            fmt_sig(e.summary.upper),
            e.small_group,
            e.degenerate_draws
        );
    }
    out.push('\n');
    write_text(path, &out)
}

/// Per-draw effect samples, one column per group.
pub fn save_effect_draws(path: &Path, effects: &[GroupEffect<f64>]) -> Result<()> {
    let header: Vec<String> = effects.iter().map(|e| format!("group_{}", e.group)).collect();
    let n_draws = effects.iter().map(|e| e.summary.draws.len()).max().unwrap_or(0);
    let rows = (0..n_draws).map(|r| {
        effects
            .iter()
            .map(|e| e.summary.draws.get(r).copied().unwrap_or(f64::NAN))
            .collect()
    });
    write_text(path, &matrix_file(&header, rows))
}

/// ATE posterior: summary line plus the raw draws.
pub fn save_ate(dir: &Path, ate: &PosteriorSummary<f64>) -> Result<()> {
    let summary = format!(
        "mean\tmedian\tsd\tlower\tupper\n{}\t{}\t{}\t{}\t{}\n",
        fmt_sig(ate.mean),
        fmt_sig(ate.median),
        fmt_sig(ate.sd),
        fmt_sig(ate.lower),
        fmt_sig(ate.upper)
    );
    write_text(&dir.join("ate_summary.tsv"), &summary)?;
    let draws = matrix_file(&["ate".to_string()], ate.draws.iter().map(|&v| vec![v]));
    write_text(&dir.join("ate_draws.tsv"), &draws)
}

/// Group covariate profiles (spider-plot-ready data).
pub fn save_profiles(
    path: &Path,
    profiles: &[GroupProfile<f64>],
    names: &[String],
) -> Result<()> {
    let mut out = String::from("group\tsize");
    for n in names {
        let _ = write!(out, "\tmean_{n}");
    }
    for n in names {
        let _ = write!(out, "\tmode_{n}");
    }
    for p in profiles {
        let _ = write!(out, "\n{}\t{}", p.group, p.size);
        for v in &p.column_means {
            let _ = write!(out, "\t{}", fmt_sig(*v));
        }
        for m in &p.column_modes {
            match m {
                Some(v) => {
                    let _ = write!(out, "\t{}", fmt_sig(*v));
                }
                None => out.push_str("\tNA"),
            }
        }
    }
    out.push('\n');
    write_text(path, &out)
}

/// Covariate balance table (Love-plot-ready data).
pub fn save_balance(path: &Path, rows: &[BalanceRow]) -> Result<()> {
    let mut out = String::from("covariate\tsmd_before\tsmd_after\tdegenerate");
    for r in rows {
        let _ = write!(
            out,
            "\n{}\t{}\t{}\t{}",
            r.name,
            fmt_sig(r.smd_before),
            fmt_sig(r.smd_after),
            r.degenerate
        );
    }
    out.push('\n');
    write_text(path, &out)
}

/// Matched pairs as two-column text.
pub fn save_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut out = String::from("treated\tcontrol");
    for (a, b) in pairs {
        let _ = write!(out, "\n{a}\t{b}");
    }
    out.push('\n');
    write_text(path, &out)
}

/// Group labels plus sizes.
pub fn save_groups(dir: &Path, groups: &Groups) -> Result<()> {
    save_partition(&dir.join("group_labels.txt"), &groups.labels)?;
    let mut out = String::from("group\tsize");
    for (g, members) in groups.members.iter().enumerate() {
        let _ = write!(out, "\n{g}\t{}", members.len());
    }
    out.push('\n');
    write_text(&dir.join("group_sizes.tsv"), &out)
}

/// Writes the run manifest: software version, command, and the complete
/// configuration, which together reproduce every output file.
pub fn save_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    let text = format!(
        "# manifest\nversion = {}\ncommand = {}\n\n# configuration\n{}",
        env!("CARGO_PKG_VERSION"),
        command,
        config.to_toml()?
    );
    write_text(&dir.join("manifest.txt"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_tmp("y\tt\tx1\tx2\n1.5\t0\t0\t1\n2.5\t1\t1\t0\n3.5\t0\t1\t1\n");
        let (data, cat) = load_dataset(f.path(), &ColumnRoles::default()).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.p, 2);
        assert_eq!(data.t, vec![0, 1, 0]);
        assert_eq!(data.column_names, vec!["x1", "x2"]);
        assert_eq!(cat, vec![false, false]);
    }

    #[test]
    fn comma_delimited_and_explicit_roles() {
        let f = write_tmp("death,exposed,age\n0.5,1,63\n1.5,0,70\n");
        let roles = ColumnRoles {
            outcome: "death".into(),
            treatment: "exposed".into(),
            covariates: vec!["age".into()],
            categorical: vec![],
        };
        let (data, _) = load_dataset(f.path(), &roles).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.x, vec![63.0, 70.0]);
    }

    #[test]
    fn bad_treatment_cites_row() {
        let mut content = String::from("y\tt\tx1\n");
        for i in 1..=6 {
            content.push_str(&format!("{i}\t{}\t0\n", i % 2));
        }
        content.push_str("7\t2\t0\n");
        let f = write_tmp(&content);
        let err = load_dataset(f.path(), &ColumnRoles::default()).unwrap_err();
        assert!(err.to_string().contains("row 7"), "{err}");
    }

    #[test]
    fn duplicate_header_names_column() {
        let f = write_tmp("y\tt\tx1\tx1\n1\t0\t0\t0\n");
        let err = load_dataset(f.path(), &ColumnRoles::default()).unwrap_err();
        assert!(err.to_string().contains("x1"), "{err}");
    }

    #[test]
    fn non_numeric_cell_cites_coordinates() {
        let f = write_tmp("y\tt\tx1\n1\t0\t0\nbad\t1\t0\n");
        let err = load_dataset(f.path(), &ColumnRoles::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("'y'"), "{msg}");
    }

    #[test]
    fn missing_column_is_reported() {
        let f = write_tmp("y\tx1\n1\t0\n");
        let err = load_dataset(f.path(), &ColumnRoles::default()).unwrap_err();
        assert!(err.to_string().contains("'t'"), "{err}");
    }

    #[test]
    fn dataset_round_trips() {
        let data = Dataset::new(
            vec![1.25, -2.5, 3.0625],
            vec![0, 1, 1],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            2,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        save_dataset(&path, &data).unwrap();
        let (back, _) = load_dataset(
            &path,
            &ColumnRoles { covariates: vec!["a".into(), "b".into()], ..Default::default() },
        )
        .unwrap();
        assert_eq!(back.y, data.y);
        assert_eq!(back.t, data.t);
        assert_eq!(back.x, data.x);
    }

    #[test]
    fn partition_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("part.txt");
        let labels = vec![0usize, 2, 1, 1, 0];
        save_partition(&path, &labels).unwrap();
        assert_eq!(load_partition(&path).unwrap(), labels);
    }

    #[test]
    fn fmt_sig_round_trips_doubles() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 2.5e17, std::f64::consts::PI] {
            assert_eq!(fmt_sig(v).parse::<f64>().unwrap(), v);
        }
    }
}
