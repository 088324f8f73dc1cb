//! Core closed-form quantities: the contrast transform `h(v)`,
//! datamodel-based feature-strength estimates, and exact subset-count
//! probabilities.
//!
//! For an indicator `v` with `p` set bits out of `n`, the contrast vector
//! is `h(v) = v/p - (1 - v)/(n - p)`. Its inner product with a target's
//! weight vector estimates the per-target feature strength: the expected
//! change in model output from swapping one non-support training example
//! for a support example, at a fixed subset size.

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::ToPrimitive;

use crate::error::{Error, Result};

/// Boolean vector marking a feature's support over the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndicator {
    bits: Vec<bool>,
    support_size: usize,
}

impl FeatureIndicator {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let support_size = bits.iter().filter(|&&b| b).count();
        Self { bits, support_size }
    }

    /// Build an indicator of length `n` with the given support indices set.
    pub fn from_support(n: usize, support: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in support {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "support index {i} out of range for n={n}"
                )));
            }
            if bits[i] {
                return Err(Error::InvalidArgument(format!("duplicate support index {i}")));
            }
            bits[i] = true;
        }
        Ok(Self::from_bits(bits))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Indices of the set bits, ascending.
    pub fn support_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Both `p` and `n - p` must be nonzero for `h(v)` to be defined.
    pub fn check_nondegenerate(&self) -> Result<()> {
        let (p, n) = (self.support_size, self.bits.len());
        if p == 0 || p == n {
            return Err(Error::DegenerateIndicator { support: p, n });
        }
        Ok(())
    }
}

/// Real matrix of per-target linear weights over training examples.
/// Row `i` is the weight vector of target example `z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatamodelMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DatamodelMatrix {
    /// Row-major construction; every entry must be finite.
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}={} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column sums, i.e. the vector `1ᵀW`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }
}

/// Per-target strength estimates plus their average over the feature
/// support (present only for the square, self-attribution case).
#[derive(Debug, Clone)]
pub struct StrengthReport {
    pub per_target: Vec<f64>,
    pub mean_over_support: Option<f64>,
}

/// The contrast vector `h(v)`: entry `i` is `1/p` when `v_i = 1` and
/// `-1/(n-p)` otherwise. Entries sum to zero.
pub fn contrast_vector(v: &FeatureIndicator) -> Result<Vec<f64>> {
    v.check_nondegenerate()?;
    let n = v.len();
    let p = v.support_size();
    let pos = 1.0 / p as f64;
    let neg = -1.0 / (n - p) as f64;
    Ok(v.bits().iter().map(|&b| if b { pos } else { neg }).collect())
}

/// Per-target feature-strength estimates `W · h(v)`, with the mean over
/// support rows when targets and training examples are the same indexed
/// set (square `W`).
pub fn strength_estimate(w: &DatamodelMatrix, v: &FeatureIndicator) -> Result<StrengthReport> {
    if w.cols() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns but indicator has length {}",
            w.cols(),
            v.len()
        )));
    }
    let h = contrast_vector(v)?;
    let per_target: Vec<f64> = (0..w.rows())
        .map(|i| w.row(i).iter().zip(&h).map(|(a, b)| a * b).sum())
        .collect();
    let mean_over_support = if w.is_square() {
        let support = v.support_indices();
        let sum: f64 = support.iter().map(|&z| per_target[z]).sum();
        Some(sum / support.len() as f64)
    } else {
        None
    };
    Ok(StrengthReport { per_target, mean_over_support })
}

/// Probability that a uniformly random size-`subset_size` subset of `n`
/// training examples contains exactly `a` of the `p` support examples:
/// `C(p,a)·C(n-p, s-a) / C(n,s)`, the hypergeometric mass.
///
/// Computed with exact big-integer binomials and a single final division.
pub fn subset_count_probability(n: i64, p: i64, subset_size: i64, a: i64) -> Result<f64> {
    if n < 0 || p < 0 || subset_size < 0 || a < 0 {
        return Err(Error::InvalidArgument(format!(
            "negative argument in (n={n}, p={p}, subset_size={subset_size}, a={a})"
        )));
    }
    if p > n {
        return Err(Error::InvalidArgument(format!("p={p} exceeds n={n}")));
    }
    if subset_size > n {
        return Err(Error::InvalidArgument(format!("subset_size={subset_size} exceeds n={n}")));
    }
    // infeasible counts have zero mass
    if a > p || a > subset_size || subset_size - a > n - p {
        return Ok(0.0);
    }
    let numer = binomial_big(p as u64, a as u64) * binomial_big((n - p) as u64, (subset_size - a) as u64);
    let denom = binomial_big(n as u64, subset_size as u64);
    let ratio = Ratio::new(numer, denom);
    ratio.to_f64().ok_or_else(|| {
        Error::InvalidArgument("probability ratio not representable as f64".into())
    })
}

fn binomial_big(n: u64, k: u64) -> BigUint {
    num_integer::binomial(BigUint::from(n), BigUint::from(k))
}
