//! Embedding diagnostics: pairwise angles, normalized spectra, 1-NN cosine
//! accuracy, and max-score novelty rejection curves.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),
    #[error("spectrum of a zero matrix is undefined")]
    ZeroMatrix,
    #[error("{0}")]
    Shape(String),
    #[error("score column {column} sums to {sum}, not 1")]
    NotNormalized { column: usize, sum: f64 },
    #[error("need at least {0}")]
    Insufficient(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn unit_columns(x: &Matrix) -> Result<Vec<Vec<f64>>, MetricsError> {
    (0..x.cols())
        .map(|j| {
            let c = x.column(j);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(MetricsError::ZeroColumn(j))
            } else {
                Ok(c.into_iter().map(|v| v / norm).collect())
            }
        })
        .collect()
}

/// Angle between two unit vectors as `2·atan2(‖u−v‖, ‖u+v‖)`, which stays
/// accurate near 0° and 180° where `acos` of the dot product does not.
fn angle_deg(u: &[f64], v: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// N×N matrix of pairwise angles (degrees) between feature columns.
pub fn angle_matrix(features: &Matrix) -> Result<Matrix, MetricsError> {
    let units = unit_columns(features)?;
    let n = units.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let a = angle_deg(&units[i], &units[j]);
            out[(i, j)] = a;
            out[(j, i)] = a;
        }
    }
    Ok(out)
}

/// Singular values divided by the largest one.
pub fn spectrum(features: &Matrix) -> Result<Vec<f64>, MetricsError> {
    let sv = linalg::singular_values(features)?;
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(MetricsError::ZeroMatrix);
    }
    Ok(sv.iter().map(|s| s / top).collect())
}

/// Share of the total spectral mass carried by the `c` largest values.
pub fn energy_top(spectrum: &[f64], c: usize) -> f64 {
    let total: f64 = spectrum.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    spectrum.iter().take(c).sum::<f64>() / total
}

/// Label of the reference column closest in cosine similarity to each
/// query; ties go to the lowest reference index.
pub fn knn_cosine_predict(
    reference: &Matrix,
    ref_labels: &[usize],
    queries: &Matrix,
) -> Result<Vec<usize>, MetricsError> {
    if reference.cols() == 0 {
        return Err(MetricsError::Insufficient("one reference sample"));
    }
    if reference.rows() != queries.rows() || ref_labels.len() != reference.cols() {
        return Err(MetricsError::Shape(format!(
            "reference {:?} with {} labels vs queries {:?}",
            reference.shape(),
            ref_labels.len(),
            queries.shape()
        )));
    }
    let refs = unit_columns(reference)?;
    let qs = unit_columns(queries)?;
    Ok(qs
        .par_iter()
        .map(|q| {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (k, r) in refs.iter().enumerate() {
                let s = dot(q, r);
                if s > best_sim {
                    best_sim = s;
                    best = k;
                }
            }
            ref_labels[best]
        })
        .collect())
}

pub fn knn_cosine_accuracy(
    reference: &Matrix,
    ref_labels: &[usize],
    queries: &Matrix,
    query_labels: &[usize],
) -> Result<f64, MetricsError> {
    if query_labels.len() != queries.cols() {
        return Err(MetricsError::Shape("query label count".into()));
    }
    let pred = knn_cosine_predict(reference, ref_labels, queries)?;
    Ok(accuracy(&pred, query_labels))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Row index of the largest entry in each column; ties to the lowest index.
pub fn argmax_columns(scores: &Matrix) -> Vec<usize> {
    (0..scores.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..scores.rows() {
                if scores[(i, j)] > scores[(best, j)] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean off-diagonal angle within classes and mean angle across classes.
pub fn block_orthogonality(features: &Matrix, labels: &[usize]) -> Result<(f64, f64), MetricsError> {
    if labels.len() != features.cols() {
        return Err(MetricsError::Shape("label count".into()));
    }
    let angles = angle_matrix(features)?;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if labels[i] == labels[j] {
                intra += angles[(i, j)];
                n_intra += 1;
            } else {
                inter += angles[(i, j)];
                n_inter += 1;
            }
        }
    }
    if n_inter == 0 {
        return Err(MetricsError::Insufficient("two classes"));
    }
    if n_intra == 0 {
        return Err(MetricsError::Insufficient("one class with two samples"));
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoveltyPoint {
    pub threshold: f64,
    /// Fraction of known samples with max score above the threshold and a
    /// correct argmax.
    pub known_accuracy: f64,
    /// Fraction of novel samples with max score above the threshold.
    pub false_positive_ratio: f64,
}

fn check_probabilities(scores: &Matrix) -> Result<(), MetricsError> {
    for j in 0..scores.cols() {
        let sum: f64 = (0..scores.rows()).map(|i| scores[(i, j)]).sum();
        if (sum - 1.0).abs() > 1e-6 || (0..scores.rows()).any(|i| scores[(i, j)] < 0.0) {
            return Err(MetricsError::NotNormalized { column: j, sum });
        }
    }
    Ok(())
}

fn max_scores(scores: &Matrix) -> Vec<f64> {
    (0..scores.cols())
        .map(|j| {
            (0..scores.rows())
                .map(|i| scores[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Known accuracy and false-positive ratio as the rejection threshold on
/// the maximum softmax score varies.
pub fn novelty_curve(
    known_scores: &Matrix,
    known_labels: &[usize],
    novel_scores: &Matrix,
    thresholds: &[f64],
) -> Result<Vec<NoveltyPoint>, MetricsError> {
    check_probabilities(known_scores)?;
    check_probabilities(novel_scores)?;
    if known_labels.len() != known_scores.cols() {
        return Err(MetricsError::Shape("known label count".into()));
    }
    if known_scores.cols() == 0 || novel_scores.cols() == 0 {
        return Err(MetricsError::Insufficient("one known and one novel sample"));
    }
    let known_max = max_scores(known_scores);
    let correct: Vec<bool> = argmax_columns(known_scores)
        .iter()
        .zip(known_labels)
        .map(|(p, t)| p == t)
        .collect();
    let novel_max = max_scores(novel_scores);
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = known_max.iter().zip(&correct).filter(|(&m, &ok)| ok && m > t).count();
            let fp = novel_max.iter().filter(|&&m| m > t).count();
            NoveltyPoint {
                threshold: t,
                known_accuracy: hits as f64 / known_max.len() as f64,
                false_positive_ratio: fp as f64 / novel_max.len() as f64,
            }
        })
        .collect())
}

/// `steps + 1` evenly spaced thresholds covering `[0, 1]`.
pub fn uniform_thresholds(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// The operating point with the highest threshold whose known accuracy is
/// still at least `target`. `None` when even `t = 0` falls short.
pub fn operating_point(curve: &[NoveltyPoint], target: f64) -> Option<NoveltyPoint> {
    curve
        .iter()
        .filter(|p| p.known_accuracy >= target)
        .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
        .copied()
}

/// Histogram of the column-wise maximum score over `bins` equal bins on
/// `[0, 1]`; returns `(lo, hi, count)` per bin.
pub fn max_score_histogram(scores: &Matrix, bins: usize) -> Vec<(f64, f64, usize)> {
    let mut counts = vec![0usize; bins];
    for m in max_scores(scores) {
        let b = ((m * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, c))
        .collect()
}

/// Everything computed for one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Degrees, samples ordered by class.
    pub angle_matrix: Matrix,
    /// Labels of the rows/columns of `angle_matrix`.
    pub angle_labels: Vec<usize>,
    pub spectrum: Vec<f64>,
    pub knn_accuracy: f64,
    pub argmax_accuracy: f64,
    pub mean_intra_angle: f64,
    pub mean_inter_angle: f64,
    pub energy_top_c: f64,
    pub novelty_curve: Vec<NoveltyPoint>,
}
