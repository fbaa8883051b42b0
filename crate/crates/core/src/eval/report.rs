//! CSV and JSON export of evaluation results.
//!
//! Matrices are written as `cf_hz,<level>,<level>,...` with one row per
//! channel. Floats use the shortest representation that round-trips; absent
//! cells are empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{delta_ser, EvalError, ExcitationPattern, LogMaeCurve, SerMatrix};
use crate::matrix::Matrix;

/// Named results to export together.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub ser: BTreeMap<String, SerMatrix>,
    pub curves: BTreeMap<String, LogMaeCurve>,
    pub excitation: BTreeMap<String, Vec<ExcitationPattern>>,
    /// `(a, b)` pairs of SER entries exported as `a − b`.
    pub deltas: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub ge: BTreeMap<String, f64>,
    /// Mean over present cells; `None` when every cell is absent.
    pub mean_ser: BTreeMap<String, Option<f64>>,
    pub mean_delta_ser: BTreeMap<String, Option<f64>>,
    pub excitation_argmax_hz: BTreeMap<String, Vec<(f64, f64, f64)>>,
}

fn finite(v: f64) -> Option<f64> {
    Some(v).filter(|v| !v.is_nan())
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

fn matrix_csv(cfs: &[f64], columns: &[String], m: &Matrix) -> String {
    let mut s = String::from("cf_hz");
    for c in columns {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (cf, row) in cfs.iter().zip(m.iter_rows()) {
        s.push_str(&cell(*cf));
        for v in row {
            s.push(',');
            s.push_str(&cell(*v));
        }
        s.push('\n');
    }
    s
}

fn level_columns(levels: &[f64]) -> Vec<String> {
    levels.iter().map(|l| format!("{l:?}")).collect()
}

/// Reads a matrix written by [`export_report`]: returns CFs, column headers and values.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<f64>, Vec<String>, Matrix), EvalError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EvalError::Csv("empty file".into()))?;
    let columns: Vec<String> = header.split(',').skip(1).map(str::to_owned).collect();
    let parse = |s: &str| -> Result<f64, EvalError> {
        if s.is_empty() {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| EvalError::Csv(format!("bad number {s:?}")))
        }
    };
    let (mut cfs, mut data) = (Vec::new(), Vec::new());
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() + 1 {
            return Err(EvalError::Csv(format!("expected {} fields, got {}", columns.len() + 1, fields.len())));
        }
        cfs.push(parse(fields[0])?);
        for f in &fields[1..] {
            data.push(parse(f)?);
        }
    }
    let m = Matrix::from_vec(cfs.len(), columns.len(), data);
    Ok((cfs, columns, m))
}

fn write(dir: &Path, name: &str, content: &str, out: &mut Vec<PathBuf>) -> Result<(), EvalError> {
    let p = dir.join(name);
    fs::write(&p, content)?;
    out.push(p);
    Ok(())
}

const PLOT_SCRIPT: &str = r#"# Plots the exported CSV files. Usage: python plot.py <report dir>
import csv, glob, os, sys
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
for path in sorted(glob.glob(os.path.join(d, "ser_*.csv")) + glob.glob(os.path.join(d, "delta_*.csv"))):
    rows = list(csv.reader(open(path)))
    levels = [float(x) for x in rows[0][1:]]
    cfs = [float(r[0]) for r in rows[1:]]
    z = [[float(v) if v else float("nan") for v in r[1:]] for r in rows[1:]]
    plt.figure()
    plt.pcolormesh(levels, range(len(cfs)), z, shading="nearest")
    plt.yticks(range(len(cfs)), [f"{c:.0f}" for c in cfs])
    plt.xlabel("level (dB SPL)"); plt.ylabel("CF (Hz)"); plt.colorbar(label="dB")
    plt.title(os.path.basename(path))
    plt.savefig(path[:-4] + ".png")
for path in sorted(glob.glob(os.path.join(d, "logmae_*.csv"))):
    rows = list(csv.reader(open(path)))[1:]
    plt.figure(1000)
    plt.plot([float(r[0]) for r in rows], [float(r[2]) for r in rows], label=os.path.basename(path))
plt.figure(1000); plt.xlabel("level (dB SPL)"); plt.ylabel("log10 MAE"); plt.legend()
plt.savefig(os.path.join(d, "logmae.png"))
"#;

/// Writes every part of `report` into `dir` and returns the paths written.
pub fn export_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if report.ser.is_empty() && report.curves.is_empty() && report.excitation.is_empty() {
        return Err(EvalError::EmptyReport("no SER matrices, curves or excitation patterns".into()));
    }
    for (name, patterns) in &report.excitation {
        if patterns.is_empty() {
            return Err(EvalError::EmptyReport(format!("excitation set {name} has no tones")));
        }
    }
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    let mut summary = ReportSummary {
        ge: BTreeMap::new(),
        mean_ser: BTreeMap::new(),
        mean_delta_ser: BTreeMap::new(),
        excitation_argmax_hz: BTreeMap::new(),
    };

    for (name, s) in &report.ser {
        write(dir, &format!("ser_{name}.csv"), &matrix_csv(&s.cfs, &level_columns(&s.levels), &s.values), &mut out)?;
        let all = s.values.as_slice();
        let present: Vec<f64> = all.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = if present.is_empty() { f64::NAN } else { present.iter().sum::<f64>() / present.len() as f64 };
        summary.mean_ser.insert(name.clone(), finite(mean));
    }
    for (a, b) in &report.deltas {
        let missing = |n: &String| EvalError::EmptyReport(format!("no SER matrix named {n}"));
        let (sa, sb) = (report.ser.get(a).ok_or_else(|| missing(a))?, report.ser.get(b).ok_or_else(|| missing(b))?);
        let (d, mean) = delta_ser(sa, sb)?;
        write(dir, &format!("delta_{a}_minus_{b}.csv"), &matrix_csv(&sa.cfs, &level_columns(&sa.levels), &d), &mut out)?;
        summary.mean_delta_ser.insert(format!("{a}-{b}"), finite(mean));
    }
    for (name, c) in &report.curves {
        let mut s = String::from("level_db,mae,log10_mae\n");
        for ((l, m), g) in c.levels.iter().zip(&c.mae).zip(&c.log_mae) {
            writeln!(s, "{l:?},{m:?},{g:?}").expect("writing to a String");
        }
        write(dir, &format!("logmae_{name}.csv"), &s, &mut out)?;
        summary.ge.insert(name.clone(), c.ge);
    }
    for (name, patterns) in &report.excitation {
        let columns: Vec<String> = patterns.iter().map(|p| format!("{:?}Hz@{:?}dB", p.tone_freq, p.tone_level)).collect();
        let j = patterns[0].cfs.len();
        let m = Matrix::from_vec(
            j,
            patterns.len(),
            (0..j).flat_map(|ch| patterns.iter().map(move |p| p.rms_per_cf[ch])).collect(),
        );
        write(dir, &format!("excitation_{name}.csv"), &matrix_csv(&patterns[0].cfs, &columns, &m), &mut out)?;
        summary.excitation_argmax_hz.insert(
            name.clone(),
            patterns.iter().map(|p| (p.tone_freq, p.tone_level, p.cfs[p.argmax()])).collect(),
        );
    }
    write(dir, "summary.json", &serde_json::to_string_pretty(&summary)?, &mut out)?;
    write(dir, "plot.py", PLOT_SCRIPT, &mut out)?;
    Ok(out)
}
