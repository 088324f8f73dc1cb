//! Least-squares / ridge fitting of per-target datamodel weights from
//! subset records, and empirical verification of how well the fitted
//! weights predict the recorded outputs.
//!
//! All targets share one design matrix (the subset indicators), so the
//! Gram matrix is formed and factorized once; per-target solves reuse the
//! factorization. The factorization is a symmetric eigendecomposition:
//! with a ridge penalty the inverse uses `1/(e + lambda)`, and with
//! `lambda = 0` eigenvalues below the relative tolerance are dropped,
//! which yields the minimum-norm solution on rank-deficient designs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_math::DatamodelMatrix;
use crate::subset_sim::SubsetRecord;

/// Fitting options.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Ridge penalty lambda >= 0; 0 means ordinary least squares.
    pub ridge_lambda: f64,
    /// Fit a per-target intercept. With fixed-size subsets the intercept
    /// direction is linearly dependent on the indicator columns, which the
    /// minimum-norm solve absorbs.
    pub include_intercept: bool,
    /// Relative eigenvalue cutoff for the pseudo-inverse at lambda = 0.
    pub solver_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { ridge_lambda: 0.0, include_intercept: false, solver_tolerance: 1e-10 }
    }
}

/// Fitted weights plus intercepts when requested.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub weights: DatamodelMatrix,
    pub intercepts: Option<Vec<f64>>,
}

/// Per-target mean squared prediction error and its mean over targets (the
/// empirical datamodel-accuracy bound).
#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub per_target_mse: Vec<f64>,
    pub epsilon_hat: f64,
}

fn check_records(records: &[SubsetRecord]) -> Result<(usize, usize)> {
    let first = records.first().ok_or_else(|| Error::InvalidArgument("no records".into()))?;
    let (n, m) = (first.indicator.len(), first.outputs.len());
    for rec in records {
        if rec.indicator.len() != n || rec.outputs.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent record shapes: expected ({n}, {m}), got ({}, {})",
                rec.indicator.len(),
                rec.outputs.len()
            )));
        }
    }
    Ok((n, m))
}

fn ones_lists(records: &[SubsetRecord]) -> Vec<Vec<u32>> {
    records
        .iter()
        .map(|rec| {
            rec.indicator
                .iter()
                .enumerate()
                .filter_map(|(j, &b)| b.then_some(j as u32))
                .collect()
        })
        .collect()
}

/// Fit one weight vector per target by minimizing the squared prediction
/// error over records, with optional ridge penalty and intercept.
pub fn fit_datamodels(records: &[SubsetRecord], config: &FitConfig) -> Result<FitOutput> {
    if !(config.ridge_lambda.is_finite() && config.ridge_lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge_lambda={} must be finite and nonnegative",
            config.ridge_lambda
        )));
    }
    let (n, m) = check_records(records)?;
    let d = n + usize::from(config.include_intercept);
    let ones = ones_lists(records);

    // Gram matrix of the shared design: co-occurrence counts are exact
    // integers, summed with a commutative reduction so the result is
    // independent of chunking and thread count.
    let counts = ones
        .par_chunks(2048)
        .map(|chunk| {
            let mut local = vec![0u64; d * d];
            for rec_ones in chunk {
                for (a, &i) in rec_ones.iter().enumerate() {
                    let i = i as usize;
                    for &j in &rec_ones[a..] {
                        local[i * d + j as usize] += 1;
                    }
                }
                if config.include_intercept {
                    for &i in rec_ones.iter() {
                        local[(i as usize) * d + (d - 1)] += 1;
                    }
                    local[d * d - 1] += 1;
                }
            }
            local
        })
        .reduce(
            || vec![0u64; d * d],
            |mut acc, local| {
                for (a, b) in acc.iter_mut().zip(&local) {
                    *a += b;
                }
                acc
            },
        );
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let c = counts[i * d + j] as f64;
            gram[(i, j)] = c;
            gram[(j, i)] = c;
        }
    }

    // Cross-products X^T Y, one column per target, each accumulated in
    // record order.
    let mut xty = DMatrix::<f64>::zeros(d, m);
    {
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|z| {
                let mut col = vec![0.0; d];
                for (rec, rec_ones) in records.iter().zip(&ones) {
                    let y = rec.outputs[z];
                    for &j in rec_ones {
                        col[j as usize] += y;
                    }
                    if config.include_intercept {
                        col[d - 1] += y;
                    }
                }
                col
            })
            .collect();
        for (z, col) in cols.iter().enumerate() {
            for (j, &v) in col.iter().enumerate() {
                xty[(j, z)] = v;
            }
        }
    }

    let eigen = gram.symmetric_eigen();
    let e_max = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let inv = DVector::from_iterator(
        d,
        eigen.eigenvalues.iter().map(|&e| {
            if config.ridge_lambda > 0.0 {
                1.0 / (e.max(0.0) + config.ridge_lambda)
            } else if e > e_max * config.solver_tolerance && e > 0.0 {
                1.0 / e
            } else {
                0.0
            }
        }),
    );

    // W = V diag(inv) V^T (X^T Y)
    let mut projected = eigen.eigenvectors.transpose() * xty;
    for i in 0..d {
        projected.row_mut(i).scale_mut(inv[i]);
    }
    let solution = &eigen.eigenvectors * projected;

    let mut values = vec![0.0; m * n];
    for z in 0..m {
        for j in 0..n {
            values[z * n + j] = solution[(j, z)];
        }
    }
    let intercepts = config
        .include_intercept
        .then(|| (0..m).map(|z| solution[(d - 1, z)]).collect());
    Ok(FitOutput { weights: DatamodelMatrix::from_row_major(m, n, values)?, intercepts })
}

/// Score a weight matrix against records: per-target mean of
/// `(output - 1_{S'}^T w_z)^2` and the mean over targets.
pub fn verify_datamodel_accuracy(
    records: &[SubsetRecord],
    weights: &DatamodelMatrix,
) -> Result<AccuracyReport> {
    let (n, m) = check_records(records)?;
    if weights.rows() != m || weights.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "weights are {}x{} but records have m={m}, n={n}",
            weights.rows(),
            weights.cols()
        )));
    }
    let ones = ones_lists(records);
    let per_target_mse: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|z| {
            let row = weights.row(z);
            let mut total = 0.0;
            for (rec, rec_ones) in records.iter().zip(&ones) {
                let pred: f64 = rec_ones.iter().map(|&j| row[j as usize]).sum();
                total += (rec.outputs[z] - pred).powi(2);
            }
            total / records.len() as f64
        })
        .collect();
    let epsilon_hat = per_target_mse.iter().sum::<f64>() / m as f64;
    Ok(AccuracyReport { per_target_mse, epsilon_hat })
}
