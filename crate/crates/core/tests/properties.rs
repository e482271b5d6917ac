mod common;

use ole::data::{
    format_sig, load_csv, parse_csv, parse_idx_images, parse_idx_labels, save_csv, write_csv, write_idx_images,
    write_idx_labels, BatchSampler, Dataset, IdxImages, Split,
};
use ole::linalg::{nuclear_norm, singular_values};
use ole::metrics::{angle_matrix, knn_cosine_accuracy, novelty_curve, spectrum, uniform_thresholds};
use ole::ole_loss::{ole_forward, FeatureBatch, OleConfig};
use ole::softmax::softmax_columns;
use ole::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

/// Features with labels in `0..c` (every class present).
fn labelled(max_d: usize, max_n: usize) -> impl Strategy<Value = (Matrix, Vec<usize>, usize)> {
    (2..=max_d, 2..=4usize).prop_flat_map(move |(d, c)| {
        (c..=max_n).prop_flat_map(move |n| {
            let x = prop::collection::vec(-3.0..3.0f64, d * n).prop_map(move |v| Matrix::new(d, n, v).unwrap());
            let labels = prop::collection::vec(0..c, n - c).prop_map(move |mut l| {
                l.extend(0..c);
                l
            });
            (x, labels, Just(c))
        })
    })
}

fn ole(x: &Matrix, labels: &[usize], c: usize) -> f64 {
    ole_forward(
        &FeatureBatch::new(x.clone(), labels.to_vec(), c).unwrap(),
        &OleConfig::default(),
    )
    .unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nuclear_norm_matches_gram_oracle(x in matrix(1..=7, 1..=7)) {
        prop_assert!(close(nuclear_norm(&x).unwrap(), common::nuclear_norm(&x), 1e-9));
    }

    #[test]
    fn nuclear_norm_transpose_invariant(x in matrix(1..=8, 1..=8)) {
        prop_assert!(close(nuclear_norm(&x).unwrap(), nuclear_norm(&x.transpose()).unwrap(), 1e-10));
    }

    #[test]
    fn nuclear_norm_absolutely_homogeneous(x in matrix(1..=6, 1..=6), a in -10.0..10.0f64) {
        let lhs = nuclear_norm(&x.scale(a)).unwrap();
        prop_assert!(close(lhs, a.abs() * nuclear_norm(&x).unwrap(), 1e-10));
    }

    #[test]
    fn nuclear_norm_orthogonal_invariant(x in matrix(2..=6, 2..=6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_orthonormal(&mut rng, x.rows());
        let p = common::random_orthonormal(&mut rng, x.cols());
        let rotated = q.matmul(&x).unwrap().matmul(&p).unwrap();
        prop_assert!(close(nuclear_norm(&rotated).unwrap(), nuclear_norm(&x).unwrap(), 1e-9));
    }

    #[test]
    fn nuclear_norm_subadditive(x in matrix(3..=3, 4..=4), y in matrix(3..=3, 4..=4)) {
        let sum = nuclear_norm(&x.add(&y).unwrap()).unwrap();
        prop_assert!(sum <= nuclear_norm(&x).unwrap() + nuclear_norm(&y).unwrap() + 1e-9);
    }

    #[test]
    fn singular_values_sorted_and_nonnegative(x in matrix(1..=8, 1..=8)) {
        let sv = singular_values(&x).unwrap();
        prop_assert_eq!(sv.len(), x.rows().min(x.cols()));
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(sv.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn ole_nonnegative((x, labels, c) in labelled(10, 24)) {
        prop_assert!(ole(&x, &labels, c) >= -1e-9);
    }

    #[test]
    fn ole_matches_oracle((x, labels, c) in labelled(6, 12)) {
        prop_assert!(close(ole(&x, &labels, c), common::ole_loss(&x, &labels, c, 1.0), 1e-9));
    }

    #[test]
    fn ole_invariant_to_sample_order((x, labels, c) in labelled(8, 16), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let px = x.select_columns(&order);
        let pl: Vec<usize> = order.iter().map(|&j| labels[j]).collect();
        prop_assert!(close(ole(&x, &labels, c), ole(&px, &pl, c), 1e-10));
    }

    #[test]
    fn ole_invariant_to_class_renaming((x, labels, c) in labelled(8, 16), shift in 1..4usize) {
        let renamed: Vec<usize> = labels.iter().map(|&l| (l + shift) % c).collect();
        prop_assert!(close(ole(&x, &labels, c), ole(&x, &renamed, c), 1e-10));
    }

    #[test]
    fn ole_invariant_to_feature_rotation((x, labels, c) in labelled(6, 12), seed in any::<u64>()) {
        let q = common::random_orthonormal(&mut ChaCha8Rng::seed_from_u64(seed), x.rows());
        let rotated = q.matmul(&x).unwrap();
        prop_assert!(close(ole(&x, &labels, c), ole(&rotated, &labels, c), 1e-9));
    }

    #[test]
    fn ole_single_class_is_clamp_minus_norm(x in matrix(2..=6, 2..=8)) {
        let labels = vec![0; x.cols()];
        let n = nuclear_norm(&x).unwrap();
        prop_assert!(close(ole(&x, &labels, 1), n.max(1.0) - n, 1e-10));
    }

    #[test]
    fn angles_invariant_to_positive_rescaling(x in matrix(2..=6, 2..=8), scales in prop::collection::vec(0.01..100.0f64, 8)) {
        prop_assume!((0..x.cols()).all(|j| common::norm(&x.column(j)) > 1e-6));
        let scaled = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] * scales[j]);
        let a = angle_matrix(&x).unwrap();
        let b = angle_matrix(&scaled).unwrap();
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(p, q)| (p - q).abs() <= 1e-9));
    }

    #[test]
    fn angles_symmetric_in_range(x in matrix(2..=6, 2..=8)) {
        prop_assume!((0..x.cols()).all(|j| common::norm(&x.column(j)) > 1e-6));
        let a = angle_matrix(&x).unwrap();
        for i in 0..a.rows() {
            prop_assert_eq!(a[(i, i)], 0.0);
            for j in 0..a.cols() {
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                prop_assert!((0.0..=180.0).contains(&a[(i, j)]));
            }
        }
    }

    #[test]
    fn spectrum_invariant_to_orthogonal_transforms(x in matrix(2..=6, 2..=6), seed in any::<u64>()) {
        prop_assume!(x.frobenius_norm() > 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_orthonormal(&mut rng, x.rows());
        let p = common::random_orthonormal(&mut rng, x.cols());
        let a = spectrum(&x).unwrap();
        let b = spectrum(&q.matmul(&x).unwrap().matmul(&p).unwrap()).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(s, t)| (s - t).abs() <= 1e-9));
    }

    #[test]
    fn knn_accuracy_invariant_to_rotation((x, labels, _) in labelled(5, 20), seed in any::<u64>()) {
        let n = x.cols();
        prop_assume!(n >= 4);
        let half = n / 2;
        let refs: Vec<usize> = (0..half).collect();
        let qs: Vec<usize> = (half..n).collect();
        let q = common::random_orthonormal(&mut ChaCha8Rng::seed_from_u64(seed), x.rows());
        let acc = |m: &Matrix| {
            knn_cosine_accuracy(
                &m.select_columns(&refs),
                &labels[..half],
                &m.select_columns(&qs),
                &labels[half..],
            )
            .unwrap()
        };
        // Rotation preserves cosines up to rounding; exact ties are unlikely.
        prop_assert_eq!(acc(&x), acc(&q.matmul(&x).unwrap()));
    }

    #[test]
    fn novelty_curve_monotone(known in matrix(3..=3, 1..=20), novel in matrix(3..=3, 1..=20), labels in prop::collection::vec(0..3usize, 20)) {
        let ks = softmax_columns(&known);
        let ns = softmax_columns(&novel);
        let curve = novelty_curve(&ks, &labels[..ks.cols()], &ns, &uniform_thresholds(50)).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].known_accuracy <= w[0].known_accuracy);
            prop_assert!(w[1].false_positive_ratio <= w[0].false_positive_ratio);
        }
        prop_assert_eq!(curve[0].false_positive_ratio, 1.0);
        prop_assert_eq!(curve.last().unwrap().false_positive_ratio, 0.0);
        prop_assert_eq!(curve.last().unwrap().known_accuracy, 0.0);
    }

    #[test]
    fn sampler_epoch_is_a_permutation(n in 1..300usize, batch in 1..70usize, seed in any::<u64>(), epoch in 0..5usize, stratified in any::<bool>()) {
        let labels: Vec<usize> = (0..n).map(|j| j % 3).collect();
        let sampler = BatchSampler::new(batch, seed).stratified(stratified);
        let mut order = sampler.epoch_order(&labels, epoch);
        prop_assert_eq!(&order, &sampler.epoch_order(&labels, epoch));
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        let batches = sampler.epoch_batches(&labels, epoch);
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        prop_assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), n);
    }

    #[test]
    fn csv_round_trips_exactly(x in matrix(1..=6, 1..=30), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..x.cols()).map(|_| rng.random_range(0..4)).collect();
        labels[0] = 3;
        let ds = Dataset::new(x, labels, 4, Split::Train).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.samples(), ds.samples());
        prop_assert_eq!(back.class_count(), 4);
    }

    #[test]
    fn idx_round_trips_exactly(count in 0..6usize, rows in 1..5usize, cols in 1..5usize, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = IdxImages {
            count,
            rows,
            cols,
            pixels: (0..count * rows * cols).map(|_| rng.random()).collect(),
        };
        let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
        let mut a = Vec::new();
        write_idx_images(&mut a, &images).unwrap();
        let mut b = Vec::new();
        write_idx_labels(&mut b, &labels).unwrap();
        prop_assert_eq!(parse_idx_images(&a).unwrap(), images);
        prop_assert_eq!(parse_idx_labels(&b).unwrap(), labels);
    }

    #[test]
    fn format_sig_keeps_nine_digits(x in -1e12..1e12f64) {
        let back: f64 = format_sig(x, 9).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs().max(f64::MIN_POSITIVE));
    }
}

#[test]
fn csv_file_round_trip_thousand_rows() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = common::gaussian(&mut rng, 8, 1000, 1e3);
    let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..7)).collect();
    let mut labels = labels;
    labels[0] = 6;
    let ds = Dataset::new(x, labels, 7, Split::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.samples(), ds.samples());
    assert_eq!(back.labels(), ds.labels());
}
