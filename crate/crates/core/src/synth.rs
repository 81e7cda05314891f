//! Synthetic weak-supervision benchmarks with binary features.
//!
//! The truth is a fair coin per example. Every feature copies the truth with its
//! own agreement probability. Weak signals are noisy copies of the truth on a
//! random subset of the training examples: either one base signal plus noisy
//! duplicates of it (dependent errors) or fully independent signals.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureMatrix, LabeledEval, WeakSignalSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Base signals plus `n_copies` noisy copies of the first one.
    Dependent,
    /// Every signal errs independently; full coverage.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: BenchmarkKind,
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
    /// Per-feature probability of equalling the truth is drawn uniformly from this range.
    pub feature_agreement_range: [f64; 2],
    pub n_signals: usize,
    pub n_copies: usize,
    pub copy_flip_rate: f64,
    /// Fraction of training examples each signal votes on.
    pub coverage: f64,
    pub error_range: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::dependent()
    }
}

impl SyntheticSpec {
    /// 32k/8k examples, 200 features, one signal copied noisily 9 times at 50% coverage.
    pub fn dependent() -> Self {
        Self {
            kind: BenchmarkKind::Dependent,
            n_train: 32_000,
            n_test: 8_000,
            n_features: 200,
            feature_agreement_range: [0.55, 0.65],
            n_signals: 10,
            n_copies: 9,
            copy_flip_rate: 0.05,
            coverage: 0.5,
            error_range: [0.35, 0.45],
            seed: 0,
        }
    }

    /// 20 independent full-coverage signals.
    pub fn independent() -> Self {
        Self {
            kind: BenchmarkKind::Independent,
            n_signals: 20,
            n_copies: 0,
            copy_flip_rate: 0.0,
            coverage: 1.0,
            ..Self::dependent()
        }
    }

    pub fn with_size(mut self, n_train: usize, n_test: usize) -> Self {
        self.n_train = n_train;
        self.n_test = n_test;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.n_train == 0 || self.n_features == 0 || self.n_signals == 0 {
            return bad("n_train, n_features and n_signals must be positive".into());
        }
        let [alo, ahi] = self.feature_agreement_range;
        if !(0.5 < alo && alo <= ahi && ahi < 1.0) {
            return bad(format!("feature_agreement_range {:?} must satisfy 0.5 < lo <= hi < 1", self.feature_agreement_range));
        }
        let [elo, ehi] = self.error_range;
        if !(0.0 < elo && elo <= ehi && ehi < 1.0) {
            return bad(format!("error_range {:?} must satisfy 0 < lo <= hi < 1", self.error_range));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return bad(format!("coverage {} must lie in (0, 1]", self.coverage));
        }
        if !(0.0..=1.0).contains(&self.copy_flip_rate) {
            return bad(format!("copy_flip_rate {} must lie in [0, 1]", self.copy_flip_rate));
        }
        match self.kind {
            BenchmarkKind::Dependent if self.n_copies >= self.n_signals => {
                bad("n_copies must be smaller than n_signals".into())
            }
            BenchmarkKind::Independent if self.n_copies != 0 || self.coverage != 1.0 => {
                bad("independent benchmark needs n_copies = 0 and coverage = 1".into())
            }
            _ => Ok(()),
        }
    }

    fn covered_per_signal(&self) -> usize {
        ((self.coverage * self.n_train as f64).round() as usize).clamp(1, self.n_train)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBundle<T> {
    pub train_x: FeatureMatrix<T>,
    pub train_truth: LabeledEval,
    pub test_x: FeatureMatrix<T>,
    pub test_truth: LabeledEval,
    pub signals: WeakSignalSet<T>,
    /// Error of each signal on the examples it covers.
    pub realized_errors: Vec<f64>,
    /// Fraction of training examples at least one signal covers.
    pub global_coverage: f64,
}

impl<T: Scalar> SyntheticBundle<T> {
    /// SHA-256 over every generated value, for checking that runs saw identical data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in [self.train_x.view(), self.test_x.view()] {
            for v in m.iter() {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        for v in self.signals.to_sentinel().iter() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
        for t in self.train_truth.labels().iter().chain(self.test_truth.labels()) {
            h.update((*t as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Features {
    train_x: Array2<f64>,
    train_truth: Vec<usize>,
    test_x: Array2<f64>,
    test_truth: Vec<usize>,
}

fn draw_features<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Features {
    let n = spec.n_train + spec.n_test;
    let truth: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<bool>())).collect();
    let [lo, hi] = spec.feature_agreement_range;
    let agreement: Vec<f64> = (0..spec.n_features).map(|_| rng.random_range(lo..=hi)).collect();
    let mut x = Array2::zeros((n, spec.n_features));
    for (j, mut row) in x.rows_mut().into_iter().enumerate() {
        for (v, &p) in row.iter_mut().zip(&agreement) {
            let agree = rng.random::<f64>() < p;
            *v = if agree == (truth[j] == 1) { 1.0 } else { 0.0 };
        }
    }
    let test_x = x.slice(ndarray::s![spec.n_train.., ..]).to_owned();
    let train_x = x.slice(ndarray::s![..spec.n_train, ..]).to_owned();
    Features {
        train_x,
        test_truth: truth[spec.n_train..].to_vec(),
        train_truth: truth[..spec.n_train].to_vec(),
        test_x,
    }
}

/// Hard votes: the truth flipped independently with probability `rate` on `covered` rows.
fn noisy_votes<R: Rng>(reference: &[usize], covered: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    covered
        .iter()
        .map(|&j| {
            let flip = rng.random::<f64>() < rate;
            reference[j] ^ usize::from(flip)
        })
        .collect()
}

fn error_rate(votes: &[usize], covered: &[usize], truth: &[usize]) -> f64 {
    let wrong = votes.iter().zip(covered).filter(|(&v, &j)| v != truth[j]).count();
    wrong as f64 / covered.len() as f64
}

fn in_range(e: f64, [lo, hi]: [f64; 2]) -> bool {
    (lo..=hi).contains(&e)
}

fn coverage_mask<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<usize> {
    let mut rows = rand::seq::index::sample(rng, spec.n_train, spec.covered_per_signal()).into_vec();
    rows.sort_unstable();
    rows
}

fn assemble<T: Scalar>(spec: &SyntheticSpec, feats: Features, signals: Vec<(Vec<usize>, Vec<usize>)>) -> Result<SyntheticBundle<T>> {
    let n = spec.n_train;
    let m = signals.len();
    let mut votes = Array2::from_elem((n, m), None);
    let mut realized = Vec::with_capacity(m);
    let mut any = vec![false; n];
    for (i, (rows, v)) in signals.iter().enumerate() {
        realized.push(error_rate(v, rows, &feats.train_truth));
        for (&j, &vote) in rows.iter().zip(v) {
            votes[[j, i]] = Some(T::of(vote as f64));
            any[j] = true;
        }
    }
    let global_coverage = any.iter().filter(|&&c| c).count() as f64 / n as f64;
    let cast = |a: Array2<f64>| FeatureMatrix::new(a.mapv(T::of));
    Ok(SyntheticBundle {
        train_x: cast(feats.train_x)?,
        train_truth: LabeledEval::new(feats.train_truth, 2)?,
        test_x: if spec.n_test > 0 {
            cast(feats.test_x)?
        } else {
            // keep a well-formed (if meaningless) test matrix
            cast(Array2::zeros((1, spec.n_features)))?
        },
        test_truth: LabeledEval::new(if spec.n_test > 0 { feats.test_truth } else { vec![0] }, 2)?,
        signals: WeakSignalSet::binary(votes)?,
        realized_errors: realized,
        global_coverage,
    })
}

/// Base signals plus noisy copies of the first base signal, all sharing its coverage mask.
pub fn generate_dependent<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticBundle<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let feats = draw_features(spec, &mut rng);
    let truth = &feats.train_truth;
    let [lo, hi] = spec.error_range;
    let n_base = spec.n_signals - spec.n_copies;

    let mut signals = Vec::with_capacity(spec.n_signals);
    for b in 0..n_base {
        let rows = coverage_mask(spec, &mut rng);
        let copies = if b == 0 { spec.n_copies } else { 0 };
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let e = rng.random_range(lo..=hi);
            let base = noisy_votes(truth, &rows, e, &mut rng);
            // copies flip the base votes, not the truth
            let base_full = {
                let mut full = vec![0usize; spec.n_train];
                for (&j, &v) in rows.iter().zip(&base) {
                    full[j] = v;
                }
                full
            };
            let family: Vec<Vec<usize>> = std::iter::once(base)
                .chain((0..copies).map(|_| noisy_votes(&base_full, &rows, spec.copy_flip_rate, &mut rng)))
                .collect();
            if family.iter().all(|v| in_range(error_rate(v, &rows, truth), spec.error_range)) {
                accepted = Some(family);
                break;
            }
        }
        let family = accepted.ok_or_else(|| {
            Error::InfeasibleSpec(format!(
                "could not realize error rates inside {:?} for signal family {b} in {MAX_ATTEMPTS} attempts",
                spec.error_range
            ))
        })?;
        signals.extend(family.into_iter().map(|v| (rows.clone(), v)));
    }
    // copies sit right after the first base signal
    assemble(spec, feats, signals)
}

/// Independent full-coverage signals with their own error rates.
pub fn generate_independent<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticBundle<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let feats = draw_features(spec, &mut rng);
    let truth = &feats.train_truth;
    let [lo, hi] = spec.error_range;
    let rows: Vec<usize> = (0..spec.n_train).collect();
    let mut signals = Vec::with_capacity(spec.n_signals);
    for i in 0..spec.n_signals {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let e = rng.random_range(lo..=hi);
            let v = noisy_votes(truth, &rows, e, &mut rng);
            if in_range(error_rate(&v, &rows, truth), spec.error_range) {
                accepted = Some(v);
                break;
            }
        }
        let v = accepted.ok_or_else(|| {
            Error::InfeasibleSpec(format!("signal {i}: no error rate inside {:?} after {MAX_ATTEMPTS} attempts", spec.error_range))
        })?;
        signals.push((rows.clone(), v));
    }
    assemble(spec, feats, signals)
}

/// Dispatch on `spec.kind`.
pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticBundle<T>> {
    match spec.kind {
        BenchmarkKind::Dependent => generate_dependent(spec),
        BenchmarkKind::Independent => generate_independent(spec),
    }
}
