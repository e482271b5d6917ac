//! Datasets, synthetic generators, minibatch sampling and file readers.

mod csv;
mod idx;

pub use self::csv::{format_sig, load_csv, parse_csv, read_table, save_csv, write_csv, Table};
pub use self::idx::{
    load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages, IMAGES_MAGIC,
    LABELS_MAGIC,
};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{what}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what}: {extra} unexpected trailing bytes")]
    TrailingBytes { what: &'static str, extra: usize },
    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: cannot parse {text:?}")]
    Parse { line: usize, field: usize, text: String },
    #[error("no samples")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

/// Labelled samples, one per column of a d×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self, DataError> {
        if labels.len() != samples.cols() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!("label {bad} outside 0..{class_count}")));
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            split,
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn dim(&self) -> usize {
        self.samples.rows()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// Stable reordering so that samples are grouped by ascending class.
    pub fn sorted_by_class(&self) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.labels[i]);
        self.select(&order)
    }

    /// Shuffles with `seed` and holds out the last `fraction` of the
    /// shuffled order as a validation split.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(DataError::Invalid(format!(
                "validation fraction {fraction} outside [0, 1)"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * fraction).round() as usize;
        let n_train = self.len() - n_val;
        if n_train == 0 {
            return Err(DataError::Empty);
        }
        let train = self.select(&order[..n_train]).with_split(Split::Train);
        let val = self.select(&order[n_train..]).with_split(Split::Val);
        Ok((train, val))
    }

    /// Drops the classes in `excluded` and renumbers the rest contiguously
    /// (ascending original id). Returns the kept dataset and the removed
    /// samples (labels untouched).
    pub fn partition_classes(&self, excluded: &[usize]) -> (Dataset, Dataset) {
        let mut remap = vec![None; self.class_count];
        let mut next = 0;
        for (c, slot) in remap.iter_mut().enumerate() {
            if !excluded.contains(&c) {
                *slot = Some(next);
                next += 1;
            }
        }
        let kept_idx: Vec<usize> = (0..self.len()).filter(|&i| remap[self.labels[i]].is_some()).collect();
        let novel_idx: Vec<usize> = (0..self.len()).filter(|&i| remap[self.labels[i]].is_none()).collect();
        let mut kept = self.select(&kept_idx);
        kept.labels = kept.labels.iter().map(|&l| remap[l].expect("kept class")).collect();
        kept.class_count = next;
        (kept, self.select(&novel_idx))
    }
}

/// Synthetic class-structured data: class `c` is centred at a pseudo-random
/// unit direction scaled by 5, with isotropic Gaussian noise of standard
/// deviation `spread`. Samples are ordered class by class.
pub fn make_gaussian_blobs(
    dim: usize,
    classes: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if dim < 2 || classes < 2 {
        return Err(DataError::Invalid(format!(
            "blobs need dim >= 2 and classes >= 2, got dim={dim} classes={classes}"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(DataError::Invalid(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| 5.0 * x / norm).collect()
        })
        .collect();
    let n = classes * n_per_class;
    let mut samples = Matrix::zeros(dim, n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..n_per_class {
            let j = c * n_per_class + k;
            for (i, &mu) in center.iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                samples[(i, j)] = mu + spread * noise;
            }
            labels.push(c);
        }
    }
    Dataset::new(samples, labels, classes, Split::Train)
}

/// Blobs with fixed per-class train/test sizes drawn from the same centres.
pub fn gaussian_blobs_split(
    dim: usize,
    classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let per = train_per_class + test_per_class;
    let all = make_gaussian_blobs(dim, classes, per, spread, seed)?;
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..classes {
        train_idx.extend(c * per..c * per + train_per_class);
        test_idx.extend(c * per + train_per_class..(c + 1) * per);
    }
    Ok((
        all.select(&train_idx).with_split(Split::Train),
        all.select(&test_idx).with_split(Split::Test),
    ))
}

/// A minibatch: sample columns and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub epoch: usize,
}

/// Epoch-wise shuffled minibatches. The order for an epoch depends only on
/// `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    seed: u64,
    stratified: bool,
    epoch: usize,
    cursor: usize,
    order: Option<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self {
            batch_size: batch_size.max(1),
            seed,
            stratified: false,
            epoch: 0,
            cursor: 0,
            order: None,
        }
    }

    /// Interleave classes round-robin so every batch is close to balanced.
    pub fn stratified(mut self, on: bool) -> Self {
        self.stratified = on;
        self
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Sample permutation for one epoch.
    pub fn epoch_order(&self, labels: &[usize], epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        if !self.stratified {
            return order;
        }
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut queues: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for &i in &order {
            queues[labels[i]].push(i);
        }
        let mut out = Vec::with_capacity(order.len());
        let mut k = 0;
        while out.len() < order.len() {
            for q in &queues {
                if let Some(&i) = q.get(k) {
                    out.push(i);
                }
            }
            k += 1;
        }
        out
    }

    /// All batches of an epoch as index lists; the last may be short.
    pub fn epoch_batches(&self, labels: &[usize], epoch: usize) -> Vec<Vec<usize>> {
        self.epoch_order(labels, epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Next consecutive slice of the current epoch's permutation, rolling
    /// over to the next epoch once exhausted.
    pub fn next_batch(&mut self, dataset: &Dataset) -> Batch {
        assert!(!dataset.is_empty(), "sampling from an empty dataset");
        if self.order.is_none() {
            self.order = Some(self.epoch_order(dataset.labels(), self.epoch));
            self.cursor = 0;
        }
        let order = self.order.as_ref().expect("order");
        let end = (self.cursor + self.batch_size).min(order.len());
        let indices = order[self.cursor..end].to_vec();
        let epoch = self.epoch;
        self.cursor = end;
        if self.cursor >= order.len() {
            self.order = None;
            self.epoch += 1;
        }
        let part = dataset.select(&indices);
        Batch {
            inputs: part.samples,
            labels: part.labels,
            indices,
            epoch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_without_noise_sit_on_centres() {
        let ds = make_gaussian_blobs(4, 3, 5, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 15);
        for c in 0..3 {
            let first = ds.samples().column(c * 5);
            let norm: f64 = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 5.0).abs() < 1e-12);
            for k in 1..5 {
                assert_eq!(ds.samples().column(c * 5 + k), first);
            }
        }
        assert_eq!(ds, make_gaussian_blobs(4, 3, 5, 0.0, 1).unwrap());
        assert!(make_gaussian_blobs(1, 3, 5, 0.1, 1).is_err());
        assert!(make_gaussian_blobs(3, 1, 5, 0.1, 1).is_err());
    }

    #[test]
    fn blob_split_shares_centres() {
        let (train, test) = gaussian_blobs_split(6, 2, 3, 2, 0.0, 5).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 4);
        assert_eq!(train.samples().column(0), test.samples().column(0));
        assert_eq!(test.labels(), &[0, 0, 1, 1]);
        assert_eq!(test.split(), Split::Test);
    }

    #[test]
    fn sampler_covers_epoch_once() {
        let ds = make_gaussian_blobs(2, 3, 7, 0.1, 2).unwrap();
        let mut s = BatchSampler::new(4, 9);
        let mut seen = Vec::new();
        loop {
            let b = s.next_batch(&ds);
            assert_eq!(b.epoch, 0);
            assert!(b.labels.len() <= 4);
            seen.extend(b.indices);
            if s.epoch() == 1 {
                break;
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_whole_dataset_batch_and_determinism() {
        let ds = make_gaussian_blobs(2, 2, 5, 0.1, 2).unwrap();
        let mut s = BatchSampler::new(100, 3);
        let b = s.next_batch(&ds);
        assert_eq!(b.labels.len(), 10);
        assert_eq!(s.epoch(), 1);
        let a = BatchSampler::new(3, 11).epoch_batches(ds.labels(), 4);
        let b = BatchSampler::new(3, 11).epoch_batches(ds.labels(), 4);
        assert_eq!(a, b);
        assert_ne!(a, BatchSampler::new(3, 11).epoch_batches(ds.labels(), 5));
    }

    #[test]
    fn stratified_batches_are_balanced() {
        let ds = make_gaussian_blobs(2, 3, 10, 0.1, 2).unwrap();
        let s = BatchSampler::new(6, 1).stratified(true);
        for batch in s.epoch_batches(ds.labels(), 0) {
            for c in 0..3 {
                assert_eq!(batch.iter().filter(|&&i| ds.labels()[i] == c).count(), 2);
            }
        }
    }

    #[test]
    fn validation_split_and_class_partition() {
        let ds = make_gaussian_blobs(2, 4, 10, 0.1, 2).unwrap();
        let (train, val) = ds.split_validation(0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (36, 4));
        assert_eq!(val.split(), Split::Val);
        let (kept, novel) = ds.partition_classes(&[1]);
        assert_eq!(kept.class_count(), 3);
        assert_eq!(kept.len(), 30);
        assert!(kept.labels().iter().all(|&l| l < 3));
        assert_eq!(kept.labels()[15], 1);
        assert!(novel.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn sorted_by_class_is_stable() {
        let ds = Dataset::new(
            Matrix::from_rows(&[&[0.0, 1.0, 2.0, 3.0]]),
            vec![1, 0, 1, 0],
            2,
            Split::Test,
        )
        .unwrap();
        let s = ds.sorted_by_class();
        assert_eq!(s.labels(), &[0, 0, 1, 1]);
        assert_eq!(s.samples().as_slice(), &[1.0, 3.0, 0.0, 2.0]);
    }
}
