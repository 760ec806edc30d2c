//! Primitives over finite categorical distributions.
//!
//! Everything here is measured in nats. Degenerate supports follow the
//! `0 · ln 0 = 0` convention; no probability floor is applied, so a KL
//! divergence with an escaped support comes back as `+inf` rather than a
//! large finite number.

use std::fmt;
use std::ops::{Add, AddAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the sum of a categorical distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("distribution is empty")]
    Empty,
    #[error("negative weight {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
    #[error("all weights are zero")]
    AllZero,
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("evidence {0} outside [0, 1]")]
    EvidenceOutOfRange(f64),
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
    #[error("precision must be positive and finite, got {0}")]
    InvalidPrecision(f64),
}

/// An information quantity in nats. `+inf` is a legitimate value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Nats(pub f64);

impl Nats {
    pub const ZERO: Nats = Nats(0.0);
    pub const INFINITY: Nats = Nats(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Add for Nats {
    type Output = Nats;
    fn add(self, rhs: Nats) -> Nats {
        Nats(self.0 + rhs.0)
    }
}

impl AddAssign for Nats {
    fn add_assign(&mut self, rhs: Nats) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Nats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nats", self.0)
    }
}

// JSON has no infinity literal, so unbounded values travel as strings.
impl Serialize for Nats {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serialize_extended_f64(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for Nats {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserialize_extended_f64(deserializer).map(Nats)
    }
}

pub(crate) fn serialize_extended_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    let v = *v;
    if v.is_finite() {
        s.serialize_f64(v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub(crate) fn deserialize_extended_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    struct ExtendedF64;

    impl Visitor<'_> for ExtendedF64 {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    d.deserialize_any(ExtendedF64)
}

/// A finite probability vector: entries are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Accepts `probs` as-is after checking the invariants.
    pub fn new(probs: Vec<f64>) -> Result<Self, BeliefError> {
        check_weights(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(BeliefError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self, BeliefError> {
        if n == 0 {
            return Err(BeliefError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self, BeliefError> {
        if n == 0 {
            return Err(BeliefError::Empty);
        }
        if index >= n {
            return Err(BeliefError::LengthMismatch(index + 1, n));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.probs)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Categorical) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = BeliefError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Categorical::new(v)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(c: Categorical) -> Self {
        c.probs
    }
}

fn check_weights(w: &[f64]) -> Result<(), BeliefError> {
    if w.is_empty() {
        return Err(BeliefError::Empty);
    }
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() {
            return Err(BeliefError::NonFinite(index));
        }
        if value < 0.0 {
            return Err(BeliefError::Negative { index, value });
        }
    }
    Ok(())
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Divides non-negative weights by their sum.
pub fn normalize(weights: &[f64]) -> Result<Categorical, BeliefError> {
    check_weights(weights)?;
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(BeliefError::AllZero);
    }
    Ok(Categorical {
        probs: weights.iter().map(|w| w / sum).collect(),
    })
}

/// Shannon entropy `-Σ p ln p`.
pub fn entropy(p: &Categorical) -> Nats {
    Nats(entropy_of(p.probs()))
}

/// Entropy of an arbitrary non-negative vector assumed to sum to one.
pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    h.max(0.0)
}

/// `D_KL[q ‖ p]`. Returns `+inf` when `q` puts mass where `p` has none.
pub fn kl_divergence(q: &Categorical, p: &Categorical) -> Result<Nats, BeliefError> {
    if q.len() != p.len() {
        return Err(BeliefError::LengthMismatch(q.len(), p.len()));
    }
    Ok(Nats(kl_of(q.probs(), p.probs())))
}

pub(crate) fn kl_of(q: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi <= 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return f64::INFINITY;
        }
        acc += qi * (qi / pi).ln();
    }
    // Rounding can leave a few ulps below zero for q ≈ p.
    acc.max(0.0)
}

/// Shannon surprise `-ln(evidence)`.
pub fn surprise(evidence: f64) -> Result<Nats, BeliefError> {
    if !(0.0..=1.0).contains(&evidence) {
        return Err(BeliefError::EvidenceOutOfRange(evidence));
    }
    Ok(Nats(-evidence.ln()))
}

/// Inverse temperature for [`softmax`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    Finite(f64),
    /// The precision → ∞ limit: an indicator on the argmax.
    OneHotLimit,
}

/// `p_i ∝ exp(precision · logit_i)`, stabilised by subtracting the max logit.
pub fn softmax(logits: &[f64], precision: Precision) -> Result<Categorical, BeliefError> {
    if logits.is_empty() {
        return Err(BeliefError::Empty);
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(BeliefError::NonFiniteLogit(i));
    }
    match precision {
        Precision::OneHotLimit => Categorical::one_hot(logits.len(), argmax_lowest(logits)),
        Precision::Finite(gamma) => {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(BeliefError::InvalidPrecision(gamma));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (gamma * (l - max)).exp()).collect();
            normalize(&weights)
        }
    }
}

/// Draws an index with probability `p_i` by inverse-CDF lookup.
pub fn sample_categorical(p: &Categorical, rng: &mut RngStream) -> usize {
    inverse_cdf(p.probs(), rng.uniform())
}

pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_supported = 0;
    for (i, &pi) in probs.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        last_supported = i;
        if u < acc {
            return i;
        }
    }
    last_supported
}

/// A seeded, single-owner random stream.
///
/// Backed by ChaCha8, a counter-based generator. Child streams are derived
/// from the seed alone, so deriving never depends on how many draws the
/// parent has already made.
#[derive(Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `label`.
    pub fn derive(&self, label: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, label))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// Mixes a parent seed and a label into a child seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix(seed ^ splitmix(label.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize(&[0.0, 0.0, 5.0]).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(normalize(&[1.0, 3.0]).unwrap().probs(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rejects_bad_weights() {
        assert_eq!(normalize(&[0.0, 0.0]), Err(BeliefError::AllZero));
        assert_eq!(normalize(&[]), Err(BeliefError::Empty));
        assert!(matches!(
            normalize(&[1.0, -0.5]),
            Err(BeliefError::Negative { index: 1, .. })
        ));
    }

    #[test]
    fn categorical_rejects_unnormalized() {
        assert!(matches!(
            Categorical::new(vec![0.5, 0.6]),
            Err(BeliefError::NotNormalized(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&cat(&[1.0, 0.0])).0, 0.0);
        assert!((entropy(&cat(&[0.25; 4])).0 - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&cat(&[0.5, 0.5])).0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = cat(&[0.3, 0.7]);
        assert_eq!(kl_divergence(&p, &p).unwrap().0, 0.0);
        let kl = kl_divergence(&cat(&[1.0, 0.0]), &cat(&[0.5, 0.5])).unwrap();
        assert!((kl.0 - 2f64.ln()).abs() < 1e-12);
        let kl = kl_divergence(&cat(&[0.5, 0.5]), &cat(&[0.9, 0.1])).unwrap();
        assert!((kl.0 - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn kl_support_escape_is_infinite() {
        let kl = kl_divergence(&cat(&[0.5, 0.5]), &cat(&[1.0, 0.0])).unwrap();
        assert_eq!(kl, Nats::INFINITY);
    }

    #[test]
    fn kl_length_mismatch() {
        assert_eq!(
            kl_divergence(&cat(&[1.0]), &cat(&[0.5, 0.5])),
            Err(BeliefError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn surprise_examples() {
        assert_eq!(surprise(1.0).unwrap().0, 0.0);
        assert!((surprise((-1f64).exp()).unwrap().0 - 1.0).abs() < 1e-12);
        assert!((surprise(0.55).unwrap().0 - 0.5978).abs() < 1e-4);
        assert_eq!(surprise(0.0).unwrap(), Nats::INFINITY);
        assert!(surprise(1.5).is_err());
        assert!(surprise(-0.1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[3.0, 3.0, 3.0], Precision::Finite(2.0)).unwrap();
        assert!(u.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        let s = softmax(&[0.0, -1.0], Precision::Finite(1.0)).unwrap();
        assert!((s.get(0) - 0.7311).abs() < 1e-4);
        assert!((s.get(1) - 0.2689).abs() < 1e-4);
        let h = softmax(&[1.0, 5.0, 5.0], Precision::OneHotLimit).unwrap();
        assert_eq!(h.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(
            softmax(&[0.0, f64::NAN], Precision::Finite(1.0)),
            Err(BeliefError::NonFiniteLogit(1))
        ));
        assert!(softmax(&[0.0], Precision::Finite(0.0)).is_err());
    }

    #[test]
    fn sampling_degenerate_and_reproducible() {
        let p = cat(&[0.0, 1.0, 0.0]);
        let mut rng = RngStream::new(5);
        assert!((0..200).all(|_| sample_categorical(&p, &mut rng) == 1));

        let q = cat(&[0.2, 0.3, 0.5]);
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        let xs: Vec<usize> = (0..500).map(|_| sample_categorical(&q, &mut a)).collect();
        let ys: Vec<usize> = (0..500).map(|_| sample_categorical(&q, &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn sampling_frequency_within_binomial_bound() {
        // sd of the frequency at n = 10000 is 0.005; 0.02 is four sd.
        let p = cat(&[0.5, 0.5]);
        let mut rng = RngStream::new(2024);
        let zeros = (0..10_000)
            .filter(|_| sample_categorical(&p, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn derived_streams_ignore_parent_consumption() {
        let mut parent = RngStream::new(7);
        let mut before = parent.derive(3);
        parent.uniform();
        let mut after = parent.derive(3);
        assert_eq!(before.uniform().to_bits(), after.uniform().to_bits());
        assert_ne!(parent.derive(3).seed(), parent.derive(4).seed());
    }

    #[test]
    fn nats_json_round_trip_with_infinity() {
        let v = vec![Nats(0.25), Nats::INFINITY];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[0.25,"inf"]"#);
        let back: Vec<Nats> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
