//! Plot-ready CSV artifacts. Every number goes through [`format_sig`] with
//! nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::commands::SweepRow;
use super::config::ExperimentConfig;
use super::run::{Evaluation, RunRecord};
use super::ExperimentError;
use crate::data::format_sig;
use crate::network::{save_checkpoint, Network};

pub const SIG_DIGITS: usize = 9;

fn num(x: f64) -> String {
    format_sig(x, SIG_DIGITS)
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn metrics_csv(record: &RunRecord) -> String {
    let mut s = String::from("epoch,ls,lo,total,val_acc,lr\n");
    for e in &record.epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.epoch,
            num(e.ls),
            num(e.lo),
            num(e.total),
            num(e.val_acc),
            num(e.lr)
        );
    }
    s
}

fn histogram_csv(hist: &[(f64, f64, usize)]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (lo, hi, c) in hist {
        let _ = writeln!(s, "{},{},{}", num(*lo), num(*hi), c);
    }
    s
}

/// Writes the artifacts of one evaluated network into `dir` and returns the
/// paths written. `record` is omitted for checkpoint-only evaluations.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    record: Option<&RunRecord>,
    eval: &Evaluation,
    net: Option<&Network>,
) -> Result<Vec<PathBuf>, ExperimentError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    if let Some(record) = record {
        emit("metrics.csv", metrics_csv(record))?;
    }

    let report = &eval.report;
    let mut angles = String::new();
    for i in 0..report.angle_matrix.rows() {
        let row: Vec<String> = report.angle_matrix.row(i).iter().map(|&v| num(v)).collect();
        angles.push_str(&row.join(","));
        angles.push('\n');
    }
    emit("angles.csv", angles)?;

    let mut angle_labels = String::from("label\n");
    for l in &report.angle_labels {
        let _ = writeln!(angle_labels, "{l}");
    }
    emit("angle_labels.csv", angle_labels)?;

    let mut spectrum = String::from("index,normalized_sv\n");
    for (k, v) in report.spectrum.iter().enumerate() {
        let _ = writeln!(spectrum, "{},{}", k + 1, num(*v));
    }
    emit("spectrum.csv", spectrum)?;

    let d = eval.features.rows();
    let mut features = String::from("label");
    for i in 1..=d {
        let _ = write!(features, ",v{i}");
    }
    features.push('\n');
    for (j, label) in eval.labels.iter().enumerate() {
        let _ = write!(features, "{label}");
        for i in 0..d {
            let _ = write!(features, ",{}", num(eval.features[(i, j)]));
        }
        features.push('\n');
    }
    emit("features.csv", features)?;

    emit("hist.csv", histogram_csv(&eval.histogram))?;
    if let Some(h) = &eval.novel_histogram {
        emit("novel_hist.csv", histogram_csv(h))?;
    }
    if !report.novelty_curve.is_empty() {
        let mut novelty = String::from("threshold,known_acc,fpr\n");
        for p in &report.novelty_curve {
            let _ = writeln!(
                novelty,
                "{},{},{}",
                num(p.threshold),
                num(p.known_accuracy),
                num(p.false_positive_ratio)
            );
        }
        emit("novelty.csv", novelty)?;
    }

    let mut summary = String::from(
        "seed,val_acc,test_acc,knn_acc,argmax_acc,mean_intra_angle,mean_inter_angle,energy_top_c,zero_features\n",
    );
    let seed = record.map_or_else(|| "NaN".to_string(), |r| r.seed.to_string());
    let val = record.map_or(f64::NAN, |r| r.val_accuracy);
    let _ = writeln!(
        summary,
        "{},{},{},{},{},{},{},{},{}",
        seed,
        num(val),
        num(eval.accuracy),
        num(report.knn_accuracy),
        num(report.argmax_accuracy),
        num(report.mean_intra_angle),
        num(report.mean_inter_angle),
        num(report.energy_top_c),
        eval.zero_features
    );
    emit("summary.csv", summary)?;
    emit("config.txt", cfg.to_text())?;

    if let Some(net) = net {
        let path = dir.join("model.ckpt");
        save_checkpoint(net, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut s = String::from("lambda,mean_acc,std_acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", num(r.lambda), num(r.mean_acc), num(r.std_acc));
    }
    write_file(path, &s)
}

pub(crate) fn write_sweep_runs_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut s = String::from("lambda,seed,val_acc\n");
    for r in rows {
        for (seed, acc) in &r.runs {
            let _ = writeln!(s, "{},{},{}", num(r.lambda), seed, num(*acc));
        }
    }
    write_file(path, &s)
}
