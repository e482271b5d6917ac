//! Finite-difference and orthogonal-optimum suites behind `ole gradcheck`.
//!
//! Each trial draws its own `ChaCha8Rng` stream from `(seed, suite, trial)`,
//! so reports are reproducible and trials can run in parallel.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::ExperimentError;
use crate::linalg::{self, Matrix};
use crate::network::{Activation, Mode, Network, NetworkSpec};
use crate::ole_loss::{ole_backward, ole_forward, ole_value_and_grad, FeatureBatch, OleConfig};
use crate::softmax::{combined_loss, LogitsBatch};

pub const NUCLEAR_TOL: f64 = 1e-5;
pub const OLE_TOL: f64 = 1e-4;
pub const ORTHOGONAL_TOL: f64 = 1e-8;
pub const NETWORK_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradcheckOptions {
    /// Test hook: perturbs one entry of one analytic embedding gradient by
    /// 1e-2 so the failure path can be exercised.
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest error over the trials (relative for gradient suites, absolute
    /// for the orthogonal-optimum suite).
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    pub suites: Vec<SuiteResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    /// Worst relative error of the embedding-loss gradient suite.
    pub fn worst_ole_error(&self) -> f64 {
        self.suite("ole_loss").map_or(f64::NAN, |s| s.worst)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{:<14} trials={} failures={} worst={:.3e} tol={:.0e} {}",
                s.name,
                s.trials,
                s.failures,
                s.worst,
                s.tolerance,
                if s.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        writeln!(f, "worst ole gradient relative error: {:.3e}", self.worst_ole_error())?;
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn trial_rng(seed: u64, suite: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((suite << 32) | trial as u64);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Central differences of `f` at every entry of `x`.
pub fn finite_difference<F>(x: &Matrix, h: f64, mut f: F) -> Result<Matrix, ExperimentError>
where
    F: FnMut(&Matrix) -> Result<f64, ExperimentError>,
{
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe)?;
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// All singular values above `min_sv` and consecutive gaps above `min_gap`.
fn well_separated(sv: &[f64], min_sv: f64, min_gap: f64) -> bool {
    sv.iter().all(|&s| s > min_sv) && sv.windows(2).all(|w| w[0] - w[1] > min_gap)
}

/// The conditions under which the embedding loss is differentiable with
/// margin: every class block and the full matrix have well-separated
/// nonzero singular values, and no class sits near the clamp.
fn ole_point_ok(batch: &FeatureBatch, cfg: &OleConfig) -> Result<bool, ExperimentError> {
    let min_sv = 10.0 * cfg.sv_threshold;
    if !well_separated(&linalg::singular_values(batch.features())?, min_sv, 1e-3) {
        return Ok(false);
    }
    for (_, block) in crate::ole_loss::partition_by_class(batch) {
        let sv = linalg::singular_values(&block)?;
        if !well_separated(&sv, min_sv, 1e-3) || sv.iter().sum::<f64>() <= cfg.delta_clamp + 0.1 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn summarize(name: &'static str, tolerance: f64, errors: &[f64]) -> SuiteResult {
    SuiteResult {
        name,
        trials: errors.len(),
        failures: errors.iter().filter(|e| !(**e <= tolerance)).count(),
        worst: errors.iter().copied().fold(0.0, f64::max),
        tolerance,
    }
}

fn exhausted(what: &str) -> ExperimentError {
    ExperimentError::Numeric(format!("could not draw a well-conditioned {what}"))
}

fn nuclear_trial(seed: u64, trial: usize) -> Result<f64, ExperimentError> {
    let mut rng = trial_rng(seed, 1, trial);
    let delta = OleConfig::default().sv_threshold;
    for _ in 0..MAX_ATTEMPTS {
        let (m, n) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let a = gaussian(&mut rng, m, n);
        if !well_separated(&linalg::singular_values(&a)?, 10.0 * delta, 1e-3) {
            continue;
        }
        let g = linalg::nuclear_subgradient(&a, delta)?;
        let fd = finite_difference(&a, FD_STEP, |x| Ok(linalg::nuclear_norm(x)?))?;
        return Ok(relative_error(g.as_slice(), fd.as_slice()));
    }
    Err(exhausted("matrix"))
}

/// Random labelled batch; some classes may be absent.
fn random_batch(rng: &mut ChaCha8Rng) -> Result<FeatureBatch, ExperimentError> {
    let d = rng.random_range(3..=8);
    let c = rng.random_range(2..=4);
    let n = rng.random_range(2..=12);
    let scale = rng.random_range(0.5..2.0);
    let x = gaussian(rng, d, n).scale(scale);
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    Ok(FeatureBatch::new(x, labels, c)?)
}

fn ole_trial(seed: u64, trial: usize, corrupt: bool) -> Result<f64, ExperimentError> {
    let mut rng = trial_rng(seed, 2, trial);
    let cfg = OleConfig::default();
    for _ in 0..MAX_ATTEMPTS {
        let batch = random_batch(&mut rng)?;
        if !ole_point_ok(&batch, &cfg)? {
            continue;
        }
        let mut g = ole_backward(&batch, &cfg)?;
        if corrupt {
            g.as_mut_slice()[0] += 1e-2;
        }
        let labels = batch.labels().to_vec();
        let classes = batch.class_count();
        let fd = finite_difference(batch.features(), FD_STEP, |x| {
            let b = FeatureBatch::new(x.clone(), labels.clone(), classes)?;
            Ok(ole_forward(&b, &cfg)?)
        })?;
        return Ok(relative_error(g.as_slice(), fd.as_slice()));
    }
    Err(exhausted("batch"))
}

/// Builds class blocks living in mutually orthogonal subspaces, each with
/// nuclear norm above the clamp, in shuffled column order.
pub fn orthogonal_batch(rng: &mut ChaCha8Rng, cfg: &OleConfig) -> Result<FeatureBatch, ExperimentError> {
    let c = rng.random_range(2..=4);
    let ranks: Vec<usize> = (0..c).map(|_| rng.random_range(1..=2)).collect();
    let d = ranks.iter().sum::<usize>() + rng.random_range(0..=2);
    let basis = linalg::svd(&gaussian(rng, d, d))?.u;
    let mut columns = Vec::new();
    let mut offset = 0;
    for (class, &r) in ranks.iter().enumerate() {
        let dirs: Vec<usize> = (offset..offset + r).collect();
        offset += r;
        let n = rng.random_range(r..=3);
        let coeffs = gaussian(rng, r, n);
        let block = basis.select_columns(&dirs).matmul(&coeffs)?;
        let target = cfg.delta_clamp + rng.random_range(0.5..3.0);
        let block = block.scale(target / linalg::nuclear_norm(&block)?);
        for j in 0..n {
            columns.push((class, block.column(j)));
        }
    }
    for k in (1..columns.len()).rev() {
        columns.swap(k, rng.random_range(0..=k));
    }
    let labels = columns.iter().map(|(l, _)| *l).collect();
    let x = Matrix::from_columns(&columns.into_iter().map(|(_, v)| v).collect::<Vec<_>>());
    Ok(FeatureBatch::new(x, labels, c)?)
}

fn orthogonal_trial(seed: u64, trial: usize) -> Result<f64, ExperimentError> {
    let mut rng = trial_rng(seed, 3, trial);
    let cfg = OleConfig::default();
    let batch = orthogonal_batch(&mut rng, &cfg)?;
    let (value, grad) = ole_value_and_grad(&batch, &cfg)?;
    Ok(value.abs().max(grad.frobenius_norm()))
}

/// Spec of the small network used for end-to-end checks.
pub fn check_network_spec() -> NetworkSpec {
    NetworkSpec {
        input_dim: 4,
        hidden: vec![6],
        feature_dim: 5,
        class_count: 3,
        use_batchnorm: false,
        activation: Activation::Relu,
    }
}

fn network_loss(net: &Network, input: &Matrix, labels: &[usize], lambda: f64) -> Result<f64, ExperimentError> {
    let trace = net.forward(input, Mode::Train)?;
    let classes = net.spec().class_count;
    let fb = FeatureBatch::new(trace.features().clone(), labels.to_vec(), classes)?;
    let lb = LogitsBatch::new(trace.logits().clone(), labels.to_vec())?;
    Ok(combined_loss(&fb, &lb, lambda, &OleConfig::default())?.total)
}

/// Worst per-tensor relative error between backprop and central
/// differences of the combined loss.
fn network_trial(seed: u64, trial: usize, lambda: f64) -> Result<f64, ExperimentError> {
    let mut rng = trial_rng(seed, 4, trial);
    let spec = check_network_spec();
    let labels = vec![0, 0, 1, 1, 2, 2];
    let cfg = OleConfig::default();
    for _ in 0..MAX_ATTEMPTS {
        let net = Network::init(spec.clone(), rng.random())?;
        let input = gaussian(&mut rng, spec.input_dim, labels.len());
        let trace = net.forward(&input, Mode::Train)?;
        let near_kink = trace
            .pre_activations()
            .iter()
            .any(|z| z.as_slice().iter().any(|v| v.abs() < 1e-3));
        if near_kink {
            continue;
        }
        let fb = FeatureBatch::new(trace.features().clone(), labels.clone(), spec.class_count)?;
        if !ole_point_ok(&fb, &cfg)? {
            continue;
        }
        let lb = LogitsBatch::new(trace.logits().clone(), labels.clone())?;
        let loss = combined_loss(&fb, &lb, lambda, &cfg)?;
        let grads = net.backward(&trace, &loss.feature_grad, &loss.logit_grad)?;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for (t, an) in analytic.iter().enumerate() {
            let mut fd = vec![0.0; an.len()];
            for (k, slot) in fd.iter_mut().enumerate() {
                let orig = probe.params().tensors()[t].1[k];
                probe.params_mut().tensors_mut()[t].1[k] = orig + FD_STEP;
                let up = network_loss(&probe, &input, &labels, lambda)?;
                probe.params_mut().tensors_mut()[t].1[k] = orig - FD_STEP;
                let down = network_loss(&probe, &input, &labels, lambda)?;
                probe.params_mut().tensors_mut()[t].1[k] = orig;
                *slot = (up - down) / (2.0 * FD_STEP);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = an.iter().zip(&fd).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / norm(an).max(norm(&fd)).max(1e-8));
        }
        return Ok(worst);
    }
    Err(exhausted("network point"))
}

/// Runs all four suites with `trials` trials each (the network suite runs
/// every trial at λ = 0 and λ = 0.25).
pub fn run_gradcheck(seed: u64, trials: usize, options: GradcheckOptions) -> Result<GradcheckReport, ExperimentError> {
    let collect = |f: &(dyn Fn(usize) -> Result<f64, ExperimentError> + Sync)| -> Result<Vec<f64>, ExperimentError> {
        (0..trials).into_par_iter().map(f).collect()
    };
    let nuclear = collect(&|t| nuclear_trial(seed, t))?;
    let ole = collect(&|t| ole_trial(seed, t, options.corrupt && t == 0))?;
    let orthogonal = collect(&|t| orthogonal_trial(seed, t))?;
    let network: Vec<f64> = collect(&|t| Ok(network_trial(seed, t, 0.0)?.max(network_trial(seed, t, 0.25)?)))?;
    Ok(GradcheckReport {
        seed,
        trials,
        suites: vec![
            summarize("nuclear_norm", NUCLEAR_TOL, &nuclear),
            summarize("ole_loss", OLE_TOL, &ole),
            summarize("orthogonal", ORTHOGONAL_TOL, &orthogonal),
            summarize("network", NETWORK_TOL, &network),
        ],
    })
}
