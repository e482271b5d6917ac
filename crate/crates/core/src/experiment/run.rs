//! One training run and the evaluation of a trained network.

use super::config::{DatasetKind, ExperimentConfig, LossMode};
use super::ExperimentError;
use crate::data::{self, BatchSampler, Dataset, Split};
use crate::linalg::Matrix;
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::network::{Mode, Network};
use crate::ole_loss::{ole_value_and_grad, FeatureBatch};
use crate::optim::OptimizerState;
use crate::softmax::{combined_loss, softmax_columns, softmax_cross_entropy, LogitsBatch};

/// Angle matrices above this many samples are computed on an evenly spaced
/// subsample of the class-sorted order.
pub const MAX_ANGLE_SAMPLES: usize = 2000;
pub const NOVELTY_STEPS: usize = 1000;
pub const HISTOGRAM_BINS: usize = 50;
const EVAL_CHUNK: usize = 4096;

/// Train/validation/test splits ready for a run. With novel classes
/// configured, `train`, `val` and `test` hold only the known classes
/// (relabelled contiguously) and `novel` holds the withheld test samples.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub novel: Option<Dataset>,
}

impl PreparedData {
    pub fn class_count(&self) -> usize {
        self.train.class_count()
    }

    pub fn input_dim(&self) -> usize {
        self.train.dim()
    }

    /// Validation split, or the test split when no validation data is held out.
    pub fn selection_split(&self) -> &Dataset {
        if self.val.is_empty() {
            &self.test
        } else {
            &self.val
        }
    }
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a std::path::Path, ExperimentError> {
    p.as_deref()
        .ok_or_else(|| ExperimentError::Config(format!("{key} is required for this dataset kind")))
}

fn with_class_count(ds: Dataset, class_count: usize, split: Split) -> Result<Dataset, ExperimentError> {
    Ok(Dataset::new(
        ds.samples().clone(),
        ds.labels().to_vec(),
        class_count,
        split,
    )?)
}

/// Loads the configured source and carves out validation and novel splits.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Blobs => data::gaussian_blobs_split(
            cfg.blob_dim,
            cfg.blob_classes,
            cfg.blob_train_per_class,
            cfg.blob_test_per_class,
            cfg.blob_spread,
            cfg.data_seed,
        )?,
        DatasetKind::Csv => (
            data::load_csv(required(&cfg.train_path, "train_path")?)?,
            data::load_csv(required(&cfg.test_path, "test_path")?)?,
        ),
        DatasetKind::Idx => (
            data::load_idx(
                required(&cfg.train_images, "train_images")?,
                required(&cfg.train_labels, "train_labels")?,
            )?,
            data::load_idx(
                required(&cfg.test_images, "test_images")?,
                required(&cfg.test_labels, "test_labels")?,
            )?,
        ),
    };
    if train.dim() != test.dim() {
        return Err(ExperimentError::Data(data::DataError::Invalid(format!(
            "train samples have dimension {} but test samples have {}",
            train.dim(),
            test.dim()
        ))));
    }
    let classes = train.class_count().max(test.class_count());
    let train = with_class_count(train, classes, Split::Train)?;
    let test = with_class_count(test, classes, Split::Test)?;
    if let Some(&bad) = cfg.novel_classes.iter().find(|&&c| c >= classes) {
        return Err(ExperimentError::Config(format!(
            "novel class {bad} not in 0..{classes}"
        )));
    }
    let (train, test, novel) = if cfg.novel_classes.is_empty() {
        (train, test, None)
    } else {
        let (kept_train, _) = train.partition_classes(&cfg.novel_classes);
        let (kept_test, novel) = test.partition_classes(&cfg.novel_classes);
        (kept_train, kept_test, Some(novel.with_split(Split::Test)))
    };
    if train.class_count() < 2 {
        return Err(ExperimentError::Config("need at least two training classes".into()));
    }
    let (train, val) = train.split_validation(cfg.val_fraction, cfg.seed)?;
    Ok(PreparedData {
        train,
        val,
        test: test.with_split(Split::Test),
        novel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch means over the epoch.
    pub ls: f64,
    pub lo: f64,
    pub total: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Validation accuracy after the last epoch.
    pub val_accuracy: f64,
    /// Filled in for the selected run only.
    pub test_accuracy: Option<f64>,
    pub report: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub network: Network,
}

struct StepLoss {
    ls: f64,
    lo: f64,
    total: f64,
    feature_grad: Matrix,
    logit_grad: Matrix,
}

fn step_loss(cfg: &ExperimentConfig, features: FeatureBatch, logits: LogitsBatch) -> Result<StepLoss, ExperimentError> {
    let ole_cfg = cfg.ole_config();
    match cfg.mode {
        LossMode::Softmax | LossMode::Combined => {
            let c = combined_loss(&features, &logits, cfg.effective_lambda(), &ole_cfg)?;
            Ok(StepLoss {
                ls: c.softmax,
                lo: c.ole,
                total: c.total,
                feature_grad: c.feature_grad,
                logit_grad: c.logit_grad,
            })
        }
        LossMode::Ole => {
            let (ls, _) = softmax_cross_entropy(&logits)?;
            let (lo, grad) = ole_value_and_grad(&features, &ole_cfg)?;
            let (rows, cols) = logits.logits().shape();
            Ok(StepLoss {
                ls,
                lo,
                total: lo,
                feature_grad: grad,
                logit_grad: Matrix::zeros(rows, cols),
            })
        }
    }
}

/// Trains one network from `seed` (which seeds both initialization and
/// batch order) and records the per-epoch curve.
pub fn train_once(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<TrainedRun, ExperimentError> {
    cfg.validate()?;
    let classes = data.class_count();
    let mut net = Network::init(cfg.network_spec(data.input_dim(), classes), seed)?;
    let shapes: Vec<usize> = net.params().tensors().iter().map(|(_, t)| t.len()).collect();
    let mut opt = OptimizerState::new(cfg.optimizer_config(), &shapes);
    let sampler = BatchSampler::new(cfg.batch_size, seed).stratified(cfg.stratified);
    let train = &data.train;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = opt.begin_epoch(epoch, cfg.epochs);
        let batches = sampler.epoch_batches(train.labels(), epoch);
        let (mut ls, mut lo, mut total) = (0.0, 0.0, 0.0);
        for idx in &batches {
            let inputs = train.samples().select_columns(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let trace = net.forward_train(&inputs)?;
            let features = FeatureBatch::new(trace.features().clone(), labels.clone(), classes)?;
            let logits = LogitsBatch::new(trace.logits().clone(), labels)?;
            let step = step_loss(cfg, features, logits)?;
            if !step.total.is_finite() {
                return Err(ExperimentError::Numeric(format!(
                    "loss is not finite at epoch {epoch} (seed {seed}); try a smaller lr"
                )));
            }
            let grads = net.backward(&trace, &step.feature_grad, &step.logit_grad)?;
            opt.step(net.params_mut().tensors_mut(), &grads.tensors())?;
            ls += step.ls;
            lo += step.lo;
            total += step.total;
        }
        let n = batches.len().max(1) as f64;
        let val_acc = accuracy_on(cfg, &net, train, data.selection_split())?;
        epochs.push(EpochRecord {
            epoch,
            ls: ls / n,
            lo: lo / n,
            total: total / n,
            val_acc,
            lr,
        });
    }
    let val_accuracy = epochs.last().map_or(0.0, |e| e.val_acc);
    Ok(TrainedRun {
        record: RunRecord {
            seed,
            epochs,
            val_accuracy,
            test_accuracy: None,
            report: None,
        },
        network: net,
    })
}

/// Eval-mode features (D×N) and logits (C×N), computed in column chunks.
pub fn embed(net: &Network, samples: &Matrix) -> Result<(Matrix, Matrix), ExperimentError> {
    let n = samples.cols();
    let mut features = Matrix::zeros(net.spec().feature_dim, n);
    let mut logits = Matrix::zeros(net.spec().class_count, n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let trace = net.forward(&samples.select_columns(&idx), Mode::Eval)?;
        for (k, j) in idx.iter().enumerate() {
            features.set_column(*j, &trace.features().column(k));
            logits.set_column(*j, &trace.logits().column(k));
        }
        start = end;
    }
    Ok((features, logits))
}

fn nonzero_columns(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .filter(|&j| (0..m.rows()).any(|i| m[(i, j)] != 0.0))
        .collect()
}

/// 1-NN cosine accuracy that tolerates all-zero feature vectors: zero
/// references are skipped and zero queries count as misses.
fn knn_accuracy_lenient(
    reference: &Matrix,
    ref_labels: &[usize],
    queries: &Matrix,
    query_labels: &[usize],
) -> Result<f64, ExperimentError> {
    if query_labels.is_empty() {
        return Ok(0.0);
    }
    let refs = nonzero_columns(reference);
    let qs = nonzero_columns(queries);
    if refs.is_empty() || qs.is_empty() {
        return Ok(0.0);
    }
    let ref_l: Vec<usize> = refs.iter().map(|&j| ref_labels[j]).collect();
    let pred = metrics::knn_cosine_predict(&reference.select_columns(&refs), &ref_l, &queries.select_columns(&qs))?;
    let correct = pred.iter().zip(&qs).filter(|(p, &j)| **p == query_labels[j]).count();
    Ok(correct as f64 / query_labels.len() as f64)
}

fn accuracy_on(
    cfg: &ExperimentConfig,
    net: &Network,
    reference: &Dataset,
    eval: &Dataset,
) -> Result<f64, ExperimentError> {
    if eval.is_empty() {
        return Ok(0.0);
    }
    let (qf, ql) = embed(net, eval.samples())?;
    if cfg.uses_knn() {
        let (rf, _) = embed(net, reference.samples())?;
        knn_accuracy_lenient(&rf, reference.labels(), &qf, eval.labels())
    } else {
        Ok(metrics::accuracy(&metrics::argmax_columns(&ql), eval.labels()))
    }
}

/// Full evaluation of one split, plus the arrays behind the exported files.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Accuracy under the configured evaluation rule.
    pub accuracy: f64,
    /// D×N features in the split's sample order.
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Softmax scores of the evaluated split, C×N.
    pub scores: Matrix,
    pub histogram: Vec<(f64, f64, usize)>,
    pub novel_histogram: Option<Vec<(f64, f64, usize)>>,
    /// Samples whose feature vector is exactly zero; they have no direction
    /// and are left out of the angle statistics.
    pub zero_features: usize,
}

fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

/// Computes the metrics report of `eval` for a trained network; `reference`
/// provides the 1-NN gallery.
pub fn evaluate(
    cfg: &ExperimentConfig,
    net: &Network,
    reference: &Dataset,
    eval: &Dataset,
    novel: Option<&Dataset>,
) -> Result<Evaluation, ExperimentError> {
    if eval.dim() != net.spec().input_dim {
        return Err(ExperimentError::Data(data::DataError::Invalid(format!(
            "dataset has dimension {} but the network expects {}",
            eval.dim(),
            net.spec().input_dim
        ))));
    }
    if eval.is_empty() {
        return Err(ExperimentError::Data(data::DataError::Empty));
    }
    let (features, logits) = embed(net, eval.samples())?;
    let (ref_features, _) = embed(net, reference.samples())?;
    let labels = eval.labels().to_vec();
    let scores = softmax_columns(&logits);
    let knn_accuracy = knn_accuracy_lenient(&ref_features, reference.labels(), &features, &labels)?;
    let argmax_accuracy = metrics::accuracy(&metrics::argmax_columns(&logits), &labels);

    let live = nonzero_columns(&features);
    let zero_features = features.cols() - live.len();
    let mut sorted = live.clone();
    sorted.sort_by_key(|&j| labels[j]);
    let chosen: Vec<usize> = evenly_spaced(sorted.len(), MAX_ANGLE_SAMPLES)
        .into_iter()
        .map(|k| sorted[k])
        .collect();
    let angle_features = features.select_columns(&chosen);
    let angle_labels: Vec<usize> = chosen.iter().map(|&j| labels[j]).collect();
    let angle_matrix = metrics::angle_matrix(&angle_features)?;
    let (mean_intra_angle, mean_inter_angle) = match metrics::block_orthogonality(&angle_features, &angle_labels) {
        Ok(v) => v,
        Err(MetricsError::Insufficient(_)) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e.into()),
    };

    let spectrum = match metrics::spectrum(&features) {
        Ok(s) => s,
        Err(MetricsError::ZeroMatrix) => vec![0.0; features.rows().min(features.cols())],
        Err(e) => return Err(e.into()),
    };
    let energy_top_c = metrics::energy_top(&spectrum, eval.class_count());

    let (novelty_curve, novel_histogram) = match novel {
        Some(novel) if !novel.is_empty() => {
            let (_, novel_logits) = embed(net, novel.samples())?;
            let novel_scores = softmax_columns(&novel_logits);
            let curve = metrics::novelty_curve(
                &scores,
                &labels,
                &novel_scores,
                &metrics::uniform_thresholds(NOVELTY_STEPS),
            )?;
            (curve, Some(metrics::max_score_histogram(&novel_scores, HISTOGRAM_BINS)))
        }
        _ => (Vec::new(), None),
    };
    let histogram = metrics::max_score_histogram(&scores, HISTOGRAM_BINS);
    let accuracy = if cfg.uses_knn() { knn_accuracy } else { argmax_accuracy };
    Ok(Evaluation {
        report: MetricsReport {
            angle_matrix,
            angle_labels,
            spectrum,
            knn_accuracy,
            argmax_accuracy,
            mean_intra_angle,
            mean_inter_angle,
            energy_top_c,
            novelty_curve,
        },
        accuracy,
        features,
        labels,
        scores,
        histogram,
        novel_histogram,
        zero_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "blob_dim=4",
            "blob_train_per_class=20",
            "blob_test_per_class=5",
            "hidden=8",
            "feature_dim=6",
            "epochs=3",
            "batch_size=16",
            "lr=0.01",
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn data_preparation_splits() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg).unwrap();
        assert_eq!(data.train.len() + data.val.len(), 60);
        assert_eq!(data.val.len(), 6);
        assert_eq!(data.test.len(), 15);
        assert!(data.novel.is_none());

        let mut novel_cfg = tiny_config();
        novel_cfg.set("novel_classes", "1").unwrap();
        let data = prepare_data(&novel_cfg).unwrap();
        assert_eq!(data.class_count(), 2);
        assert_eq!(data.novel.as_ref().unwrap().len(), 5);
        assert!(data.test.labels().iter().all(|&l| l < 2));
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg).unwrap();
        let a = train_once(&cfg, &data, 7).unwrap();
        let b = train_once(&cfg, &data, 7).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.network.params(), b.network.params());
        assert_eq!(a.record.epochs.len(), 3);
        assert!(a.record.epochs.iter().enumerate().all(|(k, e)| e.epoch == k));
    }

    #[test]
    fn softmax_mode_matches_zero_lambda() {
        let mut soft = tiny_config();
        soft.set("mode", "softmax").unwrap();
        soft.set("lambda", "3").unwrap();
        let mut comb = tiny_config();
        comb.set("lambda", "0").unwrap();
        let data = prepare_data(&soft).unwrap();
        let a = train_once(&soft, &data, 1).unwrap();
        let b = train_once(&comb, &data, 1).unwrap();
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn evaluation_of_fresh_network_is_well_formed() {
        let mut cfg = tiny_config();
        cfg.set("novel_classes", "2").unwrap();
        let data = prepare_data(&cfg).unwrap();
        let net = Network::init(cfg.network_spec(data.input_dim(), data.class_count()), 3).unwrap();
        let ev = evaluate(&cfg, &net, &data.train, &data.test, data.novel.as_ref()).unwrap();
        assert!(ev.report.angle_matrix.all_finite());
        assert_eq!(ev.report.novelty_curve.len(), NOVELTY_STEPS + 1);
        assert_eq!(ev.histogram.iter().map(|h| h.2).sum::<usize>(), data.test.len());
        assert_eq!(ev.features.cols(), data.test.len());
    }
}
