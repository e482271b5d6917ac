//! The four subcommands, callable from the binary or from tests.

use std::path::PathBuf;

use rayon::prelude::*;

use super::config::{ExperimentConfig, LossMode};
use super::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use super::output::{create_dir, write_run_outputs, write_sweep_csv, write_sweep_runs_csv};
use super::run::{evaluate, prepare_data, train_once, Evaluation, RunRecord, TrainedRun};
use super::ExperimentError;
use crate::data::DataError;
use crate::network::{load_checkpoint, Network};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The selected run, with test accuracy and report filled in.
    pub best: RunRecord,
    /// Every repeat in seed order.
    pub runs: Vec<RunRecord>,
    pub evaluation: Evaluation,
    pub network: Network,
    pub files: Vec<PathBuf>,
}

/// Index of the highest validation accuracy; ties go to the earlier run.
fn select_best(runs: &[TrainedRun]) -> usize {
    let mut best = 0;
    for (k, r) in runs.iter().enumerate().skip(1) {
        if r.record.val_accuracy > runs[best].record.val_accuracy {
            best = k;
        }
    }
    best
}

/// Trains `repeats` networks with seeds `seed..seed+repeats`, keeps the
/// best by validation accuracy, evaluates it on the test split and writes
/// the artifacts into `output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let mut trained = (0..cfg.repeats as u64)
        .into_par_iter()
        .map(|r| train_once(cfg, &data, cfg.seed.wrapping_add(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let best_idx = select_best(&trained);
    let runs: Vec<RunRecord> = trained.iter().map(|t| t.record.clone()).collect();
    let TrainedRun { mut record, network } = trained.swap_remove(best_idx);
    let evaluation = evaluate(cfg, &network, &data.train, &data.test, data.novel.as_ref())?;
    record.test_accuracy = Some(evaluation.accuracy);
    record.report = Some(evaluation.report.clone());
    let files = write_run_outputs(&cfg.output_dir, cfg, Some(&record), &evaluation, Some(&network))?;
    Ok(TrainOutcome {
        best: record,
        runs,
        evaluation,
        network,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_acc: f64,
    /// Sample standard deviation (n − 1); zero for a single run.
    pub std_acc: f64,
    /// `(seed, final validation accuracy)` per repeat.
    pub runs: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// λ with the highest mean validation accuracy (first on ties).
    pub best_lambda: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Validation accuracy of the combined objective for each λ, averaged over
/// `repeats` seeds on the same train/validation split. Writes `sweep.csv`
/// and `sweep_runs.csv` into `output_dir`.
pub fn cmd_sweep_lambda(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepResult, ExperimentError> {
    if lambdas.is_empty() {
        return Err(ExperimentError::Config("lambda list is empty".into()));
    }
    let mut base = cfg.clone();
    base.mode = LossMode::Combined;
    for &l in lambdas {
        let mut c = base.clone();
        c.lambda = l;
        c.validate()?;
    }
    let data = prepare_data(&base)?;
    let jobs: Vec<(usize, u64)> = (0..lambdas.len())
        .flat_map(|k| (0..cfg.repeats as u64).map(move |r| (k, r)))
        .collect();
    let accs = jobs
        .par_iter()
        .map(|&(k, r)| {
            let mut c = base.clone();
            c.lambda = lambdas[k];
            let seed = cfg.seed.wrapping_add(r);
            train_once(&c, &data, seed).map(|t| (seed, t.record.val_accuracy))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<SweepRow> = lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let runs: Vec<(u64, f64)> = jobs
                .iter()
                .zip(&accs)
                .filter(|((kk, _), _)| *kk == k)
                .map(|(_, &run)| run)
                .collect();
            let values: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (mean_acc, std_acc) = mean_std(&values);
            SweepRow {
                lambda,
                mean_acc,
                std_acc,
                runs,
            }
        })
        .collect();
    let mut best = 0;
    for (k, r) in rows.iter().enumerate() {
        if r.mean_acc > rows[best].mean_acc {
            best = k;
        }
    }
    create_dir(&cfg.output_dir)?;
    write_sweep_csv(&cfg.output_dir.join("sweep.csv"), &rows)?;
    write_sweep_runs_csv(&cfg.output_dir.join("sweep_runs.csv"), &rows)?;
    Ok(SweepResult {
        best_lambda: rows[best].lambda,
        rows,
    })
}

/// Runs the gradient and orthogonality suites. A failing suite is reported,
/// not returned as an error; callers map [`GradcheckReport::passed`] to an
/// exit status.
pub fn cmd_gradcheck(seed: u64, trials: usize, options: GradcheckOptions) -> Result<GradcheckReport, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::Config("trials must be >= 1".into()));
    }
    run_gradcheck(seed, trials, options)
}

/// Loads `checkpoint` (or the config's `checkpoint` key), evaluates it on the
/// configured test split with the training split as the 1-NN gallery, and
/// writes the artifacts into `output_dir`.
pub fn cmd_metrics(cfg: &ExperimentConfig) -> Result<Evaluation, ExperimentError> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| ExperimentError::Config("checkpoint is required".into()))?;
    let net = load_checkpoint(path)?;
    let data = prepare_data(cfg)?;
    let spec = net.spec();
    if spec.input_dim != data.input_dim() || spec.class_count != data.class_count() {
        return Err(ExperimentError::Data(DataError::Invalid(format!(
            "checkpoint expects {} inputs and {} classes, dataset has {} and {}",
            spec.input_dim,
            spec.class_count,
            data.input_dim(),
            data.class_count()
        ))));
    }
    let evaluation = evaluate(cfg, &net, &data.train, &data.test, data.novel.as_ref())?;
    write_run_outputs(&cfg.output_dir, cfg, None, &evaluation, None)?;
    Ok(evaluation)
}
