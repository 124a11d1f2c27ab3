//! Dataset construction and resampling.
//!
//! Three sources feed the experiments: the binary Gaussian mixture whose
//! head/tail odds are `r : 1`, a balanced multi-class Gaussian mixture with
//! class means on a scaled simplex, and CIFAR-10 binary records for optional
//! real-data runs. Long-tailed training sets come out of
//! [`make_long_tailed`]; the balanced teacher subset comes out of
//! [`make_balanced_subset`]. Every sampling operation is a pure function of
//! its inputs and seed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// A feature matrix with integer class labels.
///
/// `features` has shape `[N, ...]` with one leading row per sample; labels
/// lie in `[0, num_classes)`. Class 0 is the head by convention and the
/// highest index is the tail.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().is_empty() || features.shape()[0] != labels.len() {
            return Err(Error::shape(
                "LabeledSet::new",
                format!("features {:?} vs {} labels", features.shape(), labels.len()),
            ));
        }
        if num_classes == 0 {
            return Err(Error::contract("LabeledSet::new", "num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::contract(
                "LabeledSet::new",
                format!("label {bad} outside [0, {num_classes})"),
            ));
        }
        if !features.all_finite() {
            return Err(Error::contract("LabeledSet::new", "non-finite feature value"));
        }
        Ok(LabeledSet {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Exact histogram of labels, length `num_classes`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Number of feature values per sample.
    pub fn sample_width(&self) -> usize {
        self.features.shape()[1..].iter().product()
    }

    /// Per-sample feature shape (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn sample_row(&self, i: usize) -> &[f64] {
        let w = self.sample_width();
        &self.features.data()[i * w..(i + 1) * w]
    }

    /// Assemble a new set from the given sample indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<LabeledSet> {
        let w = self.sample_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(
                    "LabeledSet::select",
                    format!("index {i} out of range for {} samples", self.len()),
                ));
            }
            data.extend_from_slice(self.sample_row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        LabeledSet::new(Tensor::new(shape, data)?, labels, self.num_classes)
    }

    /// Feature/label batch for the given indices, ready for a model forward.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let w = self.sample_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample_row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::new(shape, data).expect("consistent batch shape"), labels)
    }
}

/// How class sizes decay from head to tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImbalanceKind {
    /// `n_c = floor(n_max · r^(−c/(C−1)))`, the standard "-LT" profile.
    Exponential,
    /// Step profile: the first `ceil(C/2)` classes keep `n_max`, the rest
    /// `floor(n_max / r)`.
    TwoClass,
}

/// Target imbalance for [`make_long_tailed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceProfile {
    pub ratio: f64,
    pub kind: ImbalanceKind,
}

impl ImbalanceProfile {
    pub fn exponential(ratio: f64) -> Result<Self> {
        Self::new(ratio, ImbalanceKind::Exponential)
    }

    pub fn new(ratio: f64, kind: ImbalanceKind) -> Result<Self> {
        if !(ratio >= 1.0) {
            return Err(Error::contract(
                "ImbalanceProfile",
                format!("imbalance ratio must be >= 1, got {ratio}"),
            ));
        }
        Ok(ImbalanceProfile { ratio, kind })
    }

    /// Per-class target counts for a head-class count of `n_max`.
    pub fn targets(&self, n_max: usize, num_classes: usize) -> Vec<usize> {
        let c_last = (num_classes - 1).max(1) as f64;
        (0..num_classes)
            .map(|c| match self.kind {
                ImbalanceKind::Exponential => {
                    let frac = math::powf(self.ratio, -(c as f64) / c_last);
                    math::floor(n_max as f64 * frac) as usize
                }
                ImbalanceKind::TwoClass => {
                    if c < num_classes.div_ceil(2) {
                        n_max
                    } else {
                        math::floor(n_max as f64 / self.ratio) as usize
                    }
                }
            })
            .collect()
    }
}

/// Sample the binary Gaussian mixture: label head (class 1, `y = +1`) with
/// probability `r/(r+1)`, tail (class 0, `y = −1`) with probability
/// `1/(r+1)`; each of the `n_dim` coordinates is drawn independently from
/// `N(η·y, 1)`.
pub fn sample_gaussian_binary(
    r: f64,
    eta: f64,
    n_dim: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if !(r >= 1.0) || !(eta > 0.0) || n_dim == 0 || n_samples == 0 {
        return Err(Error::contract(
            "sample_gaussian_binary",
            format!("r {r}, eta {eta}, n_dim {n_dim}, n_samples {n_samples}"),
        ));
    }
    let mut rng = rng::rng_from(seed, stream::DATA, 0);
    let head_prob = r / (r + 1.0);
    let mut data = Vec::with_capacity(n_samples * n_dim);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let head = rng.gen::<f64>() < head_prob;
        let mean = if head { eta } else { -eta };
        labels.push(head as usize);
        for _ in 0..n_dim {
            let z: f64 = rng.sample(StandardNormal);
            data.push(mean + z);
        }
    }
    LabeledSet::new(Tensor::new(vec![n_samples, n_dim], data)?, labels, 2)
}

/// Sample a balanced multi-class Gaussian mixture with unit covariance and
/// class means on a scaled simplex: `μ_c = η·√2·(e_c − 1/C)` in the first
/// `num_classes` coordinates of `R^n_dim`, so every pair of means sits at
/// distance `2η`.
pub fn sample_gaussian_multiclass(
    num_classes: usize,
    eta: f64,
    n_dim: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if num_classes < 2 || n_dim < num_classes || !(eta > 0.0) || n_per_class == 0 {
        return Err(Error::contract(
            "sample_gaussian_multiclass",
            format!("num_classes {num_classes}, eta {eta}, n_dim {n_dim}, n_per_class {n_per_class}"),
        ));
    }
    let mut rng = rng::rng_from(seed, stream::DATA, 1);
    let scale = eta * math::sqrt(2.0);
    let offset = scale / num_classes as f64;
    let n_samples = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n_samples * n_dim);
    let mut labels = Vec::with_capacity(n_samples);
    for class in 0..num_classes {
        for _ in 0..n_per_class {
            labels.push(class);
            for d in 0..n_dim {
                let mut mean = if d < num_classes { -offset } else { 0.0 };
                if d == class {
                    mean += scale;
                }
                let z: f64 = rng.sample(StandardNormal);
                data.push(mean + z);
            }
        }
    }
    LabeledSet::new(
        Tensor::new(vec![n_samples, n_dim], data)?,
        labels,
        num_classes,
    )
}

/// Subsample `base` down to a long-tailed class profile. Class `c` keeps
/// `profile.targets(n_max, C)[c]` samples drawn without replacement, where
/// `n_max` is the head class count of `base`.
pub fn make_long_tailed(
    base: &LabeledSet,
    profile: &ImbalanceProfile,
    seed: u64,
) -> Result<LabeledSet> {
    let counts = base.class_counts();
    let n_max = counts[0];
    let targets = profile.targets(n_max, base.num_classes);
    let mut rng = rng::rng_from(seed, stream::SUBSAMPLE, 0);
    let mut keep = Vec::new();
    for (class, (&have, &need)) in counts.iter().zip(&targets).enumerate() {
        if have < need {
            return Err(Error::InsufficientData { class, have, need });
        }
        let pool: Vec<usize> = (0..base.len()).filter(|&i| base.labels[i] == class).collect();
        keep.extend(sample_without_replacement(&pool, need, &mut rng));
    }
    base.select(&keep)
}

/// Re-sample `lt` into a balanced subset where every class holds exactly
/// `floor(gamma · n_min)` samples: larger classes are down-sampled without
/// replacement, smaller ones up-sampled with replacement.
pub fn make_balanced_subset(lt: &LabeledSet, gamma: f64, seed: u64) -> Result<LabeledSet> {
    let counts = lt.class_counts();
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(
            "make_balanced_subset",
            format!("class {class} is empty"),
        ));
    }
    let n_min = *counts.iter().min().expect("at least one class");
    let target = math::floor(gamma * n_min as f64) as usize;
    if !(gamma > 0.0) || target == 0 {
        return Err(Error::contract(
            "make_balanced_subset",
            format!("gamma {gamma} with n_min {n_min} yields an empty target"),
        ));
    }
    let mut rng = rng::rng_from(seed, stream::BALANCE, 0);
    let mut keep = Vec::with_capacity(target * lt.num_classes);
    for class in 0..lt.num_classes {
        let pool: Vec<usize> = (0..lt.len()).filter(|&i| lt.labels[i] == class).collect();
        if pool.len() >= target {
            keep.extend(sample_without_replacement(&pool, target, &mut rng));
        } else {
            for _ in 0..target {
                keep.push(pool[rng.gen_range(0..pool.len())]);
            }
        }
    }
    lt.select(&keep)
}

/// Partial Fisher-Yates draw of `k` distinct elements from `pool`.
fn sample_without_replacement(pool: &[usize], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    debug_assert!(k <= pool.len());
    let mut idx: Vec<usize> = pool.to_vec();
    for i in 0..k {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Byte length of one CIFAR-10 record: 1 label byte + 3×32×32 pixel bytes.
pub const CIFAR10_RECORD_BYTES: usize = 3073;

/// Parse CIFAR-10 binary records: per record one label byte in `0..=9`
/// followed by 1024 R, 1024 G, and 1024 B bytes (row-major planes). Pixels
/// are scaled into `[0,1]` by division by 255.
pub fn parse_cifar10_bytes(bytes: &[u8]) -> Result<LabeledSet> {
    if bytes.is_empty() || bytes.len() % CIFAR10_RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % CIFAR10_RECORD_BYTES;
        return Err(Error::format(
            offset,
            format!(
                "file length {} is not a positive multiple of {CIFAR10_RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR10_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (rec, chunk) in bytes.chunks(CIFAR10_RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(Error::format(
                rec * CIFAR10_RECORD_BYTES,
                format!("label byte {label} > 9 in record {rec}"),
            ));
        }
        labels.push(label as usize);
        data.extend(chunk[1..].iter().map(|&b| b as f64 / 255.0));
    }
    LabeledSet::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)
}

/// Inverse of [`parse_cifar10_bytes`]; a parsed set re-encodes to the exact
/// input bytes.
pub fn encode_cifar10(set: &LabeledSet) -> Result<Vec<u8>> {
    if set.sample_shape() != [3, 32, 32] || set.num_classes != 10 {
        return Err(Error::contract(
            "encode_cifar10",
            format!("expected [N,3,32,32] 10-class data, got {:?}", set.features.shape()),
        ));
    }
    let mut out = Vec::with_capacity(set.len() * CIFAR10_RECORD_BYTES);
    for i in 0..set.len() {
        out.push(set.labels[i] as u8);
        for &v in set.sample_row(i) {
            let b = math::floor(v * 255.0 + 0.5);
            if !(0.0..=255.0).contains(&b) {
                return Err(Error::contract(
                    "encode_cifar10",
                    format!("pixel value {v} outside [0,1]"),
                ));
            }
            out.push(b as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_mixture_fractions_match_the_odds() {
        let set = sample_gaussian_binary(1.0, 1.0, 2, 100_000, 7).unwrap();
        let counts = set.class_counts();
        let head_frac = counts[1] as f64 / set.len() as f64;
        assert!((head_frac - 0.5).abs() < 0.01, "r=1 head fraction {head_frac}");

        let set = sample_gaussian_binary(5.0, 1.0, 2, 100_000, 7).unwrap();
        let head_frac = set.class_counts()[1] as f64 / set.len() as f64;
        assert!((head_frac - 5.0 / 6.0).abs() < 0.01, "r=5 head fraction {head_frac}");
    }

    #[test]
    fn binary_mixture_moments_match() {
        // Head-class coordinates are N(eta, 1); check sample mean/variance.
        let set = sample_gaussian_binary(2.0, 1.0, 2, 1_000_000, 11).unwrap();
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..set.len() {
            if set.labels[i] == 1 {
                for &v in set.sample_row(i) {
                    n += 1;
                    sum += v;
                    sumsq += v * v;
                }
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "head mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "head variance {var}");
    }

    #[test]
    fn long_tailed_counts_follow_the_profile() {
        let base = sample_gaussian_multiclass(3, 1.0, 4, 100, 3).unwrap();
        let lt = make_long_tailed(&base, &ImbalanceProfile::exponential(10.0).unwrap(), 5).unwrap();
        assert_eq!(lt.class_counts(), vec![100, 31, 10]);
    }

    #[test]
    fn ratio_one_is_degenerate() {
        let base = sample_gaussian_multiclass(3, 1.0, 4, 50, 3).unwrap();
        let lt = make_long_tailed(&base, &ImbalanceProfile::exponential(1.0).unwrap(), 5).unwrap();
        assert_eq!(lt.class_counts(), vec![50, 50, 50]);
    }

    #[test]
    fn cifar_scale_tail_count() {
        // IR 50 with 5000 per class leaves floor(5000/50) = 100 tail samples.
        let profile = ImbalanceProfile::exponential(50.0).unwrap();
        let targets = profile.targets(5000, 10);
        assert_eq!(targets[0], 5000);
        assert_eq!(targets[9], 100);
    }

    #[test]
    fn insufficient_class_is_reported_by_index() {
        let features = Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let base = LabeledSet::new(features, vec![0, 0, 0, 1], 2).unwrap();
        // head has 3, tail has 1; targets for r=1 want 3 per class.
        let err = make_long_tailed(&base, &ImbalanceProfile::exponential(1.0).unwrap(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::InsufficientData { class: 1, have: 1, need: 3 }));
    }

    #[test]
    fn balanced_subset_hits_gamma_n_min() {
        let base = sample_gaussian_multiclass(3, 1.0, 4, 500, 9).unwrap();
        let mut keep = Vec::new();
        let mut seen = vec![0usize; 3];
        let want = [500usize, 300, 100];
        for (i, &y) in base.labels.iter().enumerate() {
            if seen[y] < want[y] {
                seen[y] += 1;
                keep.push(i);
            }
        }
        let lt = base.select(&keep).unwrap();
        assert_eq!(lt.class_counts(), vec![500, 300, 100]);

        let balanced = make_balanced_subset(&lt, 2.0, 1).unwrap();
        assert_eq!(balanced.class_counts(), vec![200, 200, 200]);
    }

    #[test]
    fn upsampled_class_reuses_samples_with_replacement() {
        // With 100 uniques resampled to 200 picks, draws must repeat.
        let base = sample_gaussian_multiclass(2, 1.0, 2, 400, 21).unwrap();
        let keep: Vec<usize> = (0..400).chain(400..500).collect();
        let lt = base.select(&keep).unwrap();
        assert_eq!(lt.class_counts(), vec![400, 100]);

        let balanced = make_balanced_subset(&lt, 2.0, 3).unwrap();
        assert_eq!(balanced.class_counts(), vec![200, 200]);
        let w = balanced.sample_width();
        let mut tail_rows: Vec<&[f64]> = (0..balanced.len())
            .filter(|&i| balanced.labels[i] == 1)
            .map(|i| &balanced.features.data()[i * w..(i + 1) * w])
            .collect();
        tail_rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let has_dup = tail_rows.windows(2).any(|p| p[0] == p[1]);
        assert!(has_dup, "200 with-replacement draws from 100 uniques must repeat");
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let a = sample_gaussian_binary(3.0, 1.5, 4, 512, 1234).unwrap();
        let b = sample_gaussian_binary(3.0, 1.5, 4, 512, 1234).unwrap();
        assert_eq!(a, b);

        let base = sample_gaussian_multiclass(4, 1.0, 6, 64, 5).unwrap();
        let p = ImbalanceProfile::exponential(4.0).unwrap();
        assert_eq!(
            make_long_tailed(&base, &p, 77).unwrap(),
            make_long_tailed(&base, &p, 77).unwrap()
        );
        let lt = make_long_tailed(&base, &p, 77).unwrap();
        assert_eq!(
            make_balanced_subset(&lt, 2.0, 9).unwrap(),
            make_balanced_subset(&lt, 2.0, 9).unwrap()
        );
    }

    #[test]
    fn cifar_roundtrip_and_errors() {
        // Two synthetic records with labels 3 and 7.
        let mut bytes = Vec::new();
        for (label, fill) in [(3u8, 0u8), (7u8, 255u8)] {
            bytes.push(label);
            bytes.extend(core::iter::repeat(fill).take(3072));
        }
        let set = parse_cifar10_bytes(&bytes).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels, vec![3, 7]);
        assert!(set.sample_row(1).iter().all(|&v| v == 1.0));
        assert_eq!(encode_cifar10(&set).unwrap(), bytes);

        let err = parse_cifar10_bytes(&vec![0u8; 3072]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));

        let mut bad = bytes.clone();
        bad[CIFAR10_RECORD_BYTES] = 10; // second record's label byte
        let err = parse_cifar10_bytes(&bad).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == CIFAR10_RECORD_BYTES));
    }

    #[test]
    fn class_counts_are_exact() {
        let features = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let set = LabeledSet::new(features, vec![0, 0, 1], 2).unwrap();
        assert_eq!(set.class_counts(), vec![2, 1]);
    }
}
