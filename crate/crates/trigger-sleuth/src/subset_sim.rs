//! Synthetic data plane: sample fixed-size training subsets, generate
//! ground-truth linear model outputs with a planted backdoor feature, and
//! compute the empirical k-output / k-strength estimators.
//!
//! The subset distribution is uniform over subsets of fixed size
//! `floor(alpha * n)` (not i.i.d. Bernoulli inclusion), matching the
//! counting arguments the closed-form probabilities rely on.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_math::{DatamodelMatrix, FeatureIndicator};
use crate::seeding::derive_seed;

/// Default minimum per-cell sample count for reporting aggregated curve
/// values; sparse cells below this are treated as unpopulated.
pub const DEFAULT_MIN_CELL_COUNT: u64 = 5;

/// One sampled training subset plus the model output for each target.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRecord {
    /// Inclusion indicator over the n training examples.
    pub indicator: Vec<bool>,
    /// Model output `f(z_i; S')` for each of the m targets.
    pub outputs: Vec<f64>,
}

impl SubsetRecord {
    pub fn subset_size(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }

    /// Number of feature-support examples included in this subset.
    pub fn support_count(&self, v: &FeatureIndicator) -> usize {
        self.indicator
            .iter()
            .zip(v.bits())
            .filter(|(&inc, &sup)| inc && sup)
            .count()
    }
}

/// Ground truth for a planted-feature instance: exact linear weights, the
/// planted support, and the output noise level.
///
/// Support rows carry weight `theta` on each of the `p` support columns, so
/// both the empirical strength and the datamodel strength estimate of the
/// planted feature equal `theta` (up to the `tau`-scale background weights).
#[derive(Debug, Clone)]
pub struct SyntheticGroundTruth {
    pub true_weights: DatamodelMatrix,
    pub noise_sigma: f64,
    pub planted: FeatureIndicator,
    pub planted_strength: f64,
    /// When set, linear outputs are clipped at this ceiling before noise,
    /// reproducing the saturation failure mode at large subset fractions.
    pub clip_ceiling: Option<f64>,
}

impl SyntheticGroundTruth {
    pub fn n(&self) -> usize {
        self.true_weights.rows()
    }

    pub fn with_clip_ceiling(mut self, ceiling: f64) -> Self {
        self.clip_ceiling = Some(ceiling);
        self
    }
}

/// Empirical per-(target, count) output means with sample counts, plus the
/// support-aggregated curve g(k).
#[derive(Debug, Clone)]
pub struct EmpiricalOutputCurve {
    support: Vec<usize>,
    /// Parallel to `support`: per target, count k -> (mean, samples).
    cells: Vec<BTreeMap<usize, (f64, u64)>>,
    min_cell_count: u64,
}

impl EmpiricalOutputCurve {
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Mean output and sample count for one support target at count k.
    pub fn per_target(&self, support_pos: usize, k: usize) -> Option<(f64, u64)> {
        self.cells[support_pos].get(&k).copied()
    }

    /// Aggregated k-output: mean over support targets of the per-target
    /// cell means. Defined only where every support target has at least
    /// `min_cell_count` samples at k.
    pub fn g(&self, k: usize) -> Option<f64> {
        let mut total = 0.0;
        for cell in &self.cells {
            let &(mean, count) = cell.get(&k)?;
            if count < self.min_cell_count {
                return None;
            }
            total += mean;
        }
        Some(total / self.cells.len() as f64)
    }

    /// Counts k at which g(k) is defined, ascending.
    pub fn populated_ks(&self) -> Vec<usize> {
        let Some(first) = self.cells.first() else {
            return Vec::new();
        };
        first
            .keys()
            .copied()
            .filter(|&k| self.g(k).is_some())
            .collect()
    }
}

/// Sample `count` uniform subsets of size `floor(alpha * n)`, as inclusion
/// indicators. Bit-identical output for identical arguments.
pub fn sample_subsets(n: usize, alpha: f64, count: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    let size = subset_size(n, alpha)?;
    let indicators: Vec<Vec<bool>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, i as u64, 0));
            let mut bits = vec![false; n];
            for idx in rand::seq::index::sample(&mut rng, n, size) {
                bits[idx] = true;
            }
            bits
        })
        .collect();
    Ok(indicators)
}

/// `floor(alpha * n)`, rejecting degenerate sizes 0 and n.
pub fn subset_size(n: usize, alpha: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&alpha) && alpha != 1.0 {
        return Err(Error::InvalidArgument(format!("alpha={alpha} outside (0, 1)")));
    }
    let size = (alpha * n as f64).floor() as usize;
    if size == 0 || size >= n {
        return Err(Error::InvalidArgument(format!(
            "degenerate subset size {size} for n={n}, alpha={alpha}"
        )));
    }
    Ok(size)
}

/// Construct a planted-feature ground truth: a random size-p support whose
/// rows carry weight `theta` on every support column; all other entries are
/// drawn from Normal(0, tau²). Deterministic given the seed.
pub fn plant_backdoor(
    n: usize,
    p: usize,
    theta: f64,
    tau: f64,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticGroundTruth> {
    if p == 0 || p >= n {
        return Err(Error::InvalidArgument(format!("support size p={p} outside 1..{n}")));
    }
    if theta <= 0.0 {
        return Err(Error::InvalidArgument(format!("theta={theta} must be positive")));
    }
    if tau < 0.0 || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative noise scale (tau={tau}, sigma={sigma})"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut support_idx = rand::seq::index::sample(&mut rng, n, p).into_vec();
    support_idx.sort_unstable();
    let planted = FeatureIndicator::from_support(n, &support_idx)?;

    let background = Normal::new(0.0, tau.max(f64::MIN_POSITIVE)).map_err(|e| {
        Error::InvalidArgument(format!("invalid background distribution: {e}"))
    })?;
    let mut values = vec![0.0; n * n];
    for z in 0..n {
        for j in 0..n {
            let planted_entry = planted.is_set(z) && planted.is_set(j);
            // draw unconditionally so the support placement does not
            // perturb the RNG stream of later entries
            let noise = background.sample(&mut rng);
            values[z * n + j] = if planted_entry {
                theta
            } else if tau > 0.0 {
                noise
            } else {
                0.0
            };
        }
    }
    Ok(SyntheticGroundTruth {
        true_weights: DatamodelMatrix::from_row_major(n, n, values)?,
        noise_sigma: sigma,
        planted,
        planted_strength: theta,
        clip_ceiling: None,
    })
}

/// Generate one record per indicator: `outputs = W* · 1_{S'}` (clipped at
/// the ceiling when configured), plus independent Normal(0, sigma²) noise
/// per (record, target). Deterministic given the seed.
pub fn synth_outputs(
    gt: &SyntheticGroundTruth,
    indicators: &[Vec<bool>],
    seed: u64,
) -> Result<Vec<SubsetRecord>> {
    let n = gt.n();
    for ind in indicators {
        if ind.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "indicator length {} but ground truth has n={}",
                ind.len(),
                n
            )));
        }
    }
    // column-major copy so summing the included columns is contiguous
    let mut columns = vec![0.0; n * n];
    for z in 0..n {
        let row = gt.true_weights.row(z);
        for j in 0..n {
            columns[j * n + z] = row[j];
        }
    }
    let noise = if gt.noise_sigma > 0.0 {
        Some(Normal::new(0.0, gt.noise_sigma).map_err(|e| {
            Error::InvalidArgument(format!("invalid noise distribution: {e}"))
        })?)
    } else {
        None
    };
    let records: Vec<SubsetRecord> = indicators
        .par_iter()
        .enumerate()
        .map(|(r, ind)| {
            let mut outputs = vec![0.0; n];
            for (j, &included) in ind.iter().enumerate() {
                if included {
                    let col = &columns[j * n..(j + 1) * n];
                    for (o, c) in outputs.iter_mut().zip(col) {
                        *o += c;
                    }
                }
            }
            if let Some(ceiling) = gt.clip_ceiling {
                for o in &mut outputs {
                    *o = o.min(ceiling);
                }
            }
            if let Some(dist) = &noise {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, r as u64, 1));
                for o in &mut outputs {
                    *o += dist.sample(&mut rng);
                }
            }
            SubsetRecord { indicator: ind.clone(), outputs }
        })
        .collect();
    Ok(records)
}

/// Empirical k-output curve with the default minimum cell count.
pub fn empirical_k_output(
    records: &[SubsetRecord],
    v: &FeatureIndicator,
    exclude_target: bool,
) -> Result<EmpiricalOutputCurve> {
    empirical_k_output_with_min(records, v, exclude_target, DEFAULT_MIN_CELL_COUNT)
}

/// For each support target z and support count k, the mean output over
/// records with exactly k support examples included (skipping records that
/// contain z itself when `exclude_target` is set).
pub fn empirical_k_output_with_min(
    records: &[SubsetRecord],
    v: &FeatureIndicator,
    exclude_target: bool,
    min_cell_count: u64,
) -> Result<EmpiricalOutputCurve> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records".into()));
    }
    let n = v.len();
    for rec in records {
        if rec.indicator.len() != n || rec.outputs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "record shape ({}, {}) but indicator has length {n}",
                rec.indicator.len(),
                rec.outputs.len()
            )));
        }
    }
    let support = v.support_indices();
    let mut sums: Vec<BTreeMap<usize, (f64, u64)>> = vec![BTreeMap::new(); support.len()];
    for rec in records {
        let k = rec.support_count(v);
        for (pos, &z) in support.iter().enumerate() {
            if exclude_target && rec.indicator[z] {
                continue;
            }
            let cell = sums[pos].entry(k).or_insert((0.0, 0));
            cell.0 += rec.outputs[z];
            cell.1 += 1;
        }
    }
    let cells = sums
        .into_iter()
        .map(|m| {
            m.into_iter()
                .map(|(k, (sum, cnt))| (k, (sum / cnt as f64, cnt)))
                .collect()
        })
        .collect();
    Ok(EmpiricalOutputCurve { support, cells, min_cell_count })
}

/// Empirical k-strength `g(k+1) - g(k)`; absent when either side is
/// unpopulated.
pub fn empirical_strength(curve: &EmpiricalOutputCurve, k: usize) -> Option<f64> {
    Some(curve.g(k + 1)? - curve.g(k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_math::strength_estimate;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sample_subsets_size_contract() {
        let subs = sample_subsets(4, 0.5, 3, 7).unwrap();
        assert_eq!(subs.len(), 3);
        for s in &subs {
            assert_eq!(s.iter().filter(|&&b| b).count(), 2);
        }
    }

    #[test]
    fn sample_subsets_boundary_sizes() {
        assert!(sample_subsets(4, 0.999, 1, 0).is_ok()); // floor = 3
        assert!(sample_subsets(4, 0.1, 1, 0).is_err()); // floor = 0
        assert!(sample_subsets(4, 1.0, 1, 0).is_err());
    }

    #[test]
    fn sample_subsets_deterministic() {
        assert_eq!(sample_subsets(20, 0.4, 10, 3).unwrap(), sample_subsets(20, 0.4, 10, 3).unwrap());
    }

    #[test]
    fn plant_noiseless_strength_is_theta() {
        let gt = plant_backdoor(8, 2, 1.0, 0.0, 0.0, 11).unwrap();
        let report = strength_estimate(&gt.true_weights, &gt.planted).unwrap();
        assert_abs_diff_eq!(report.mean_over_support.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn plant_disjoint_feature_has_zero_strength() {
        let gt = plant_backdoor(8, 2, 1.0, 0.0, 0.0, 11).unwrap();
        let support = gt.planted.support_indices();
        let rival: Vec<usize> = (0..8).filter(|i| !support.contains(i)).take(2).collect();
        let v = FeatureIndicator::from_support(8, &rival).unwrap();
        let report = strength_estimate(&gt.true_weights, &v).unwrap();
        assert_abs_diff_eq!(report.mean_over_support.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn plant_is_deterministic() {
        let a = plant_backdoor(10, 3, 2.0, 0.5, 0.1, 99).unwrap();
        let b = plant_backdoor(10, 3, 2.0, 0.5, 0.1, 99).unwrap();
        assert_eq!(a.true_weights, b.true_weights);
        assert_eq!(a.planted, b.planted);
    }

    #[test]
    fn plant_rejects_bad_support() {
        assert!(plant_backdoor(8, 0, 1.0, 0.0, 0.0, 0).is_err());
        assert!(plant_backdoor(8, 8, 1.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn synth_noiseless_identity_weights() {
        let n = 6;
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            vals[i * n + i] = 1.0;
        }
        let gt = SyntheticGroundTruth {
            true_weights: DatamodelMatrix::from_row_major(n, n, vals).unwrap(),
            noise_sigma: 0.0,
            planted: FeatureIndicator::from_support(n, &[0]).unwrap(),
            planted_strength: 1.0,
            clip_ceiling: None,
        };
        let inds = sample_subsets(n, 0.5, 20, 5).unwrap();
        let recs = synth_outputs(&gt, &inds, 5).unwrap();
        for rec in recs {
            for i in 0..n {
                assert_eq!(rec.outputs[i], if rec.indicator[i] { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn synth_noise_variance_matches_sigma() {
        let gt = plant_backdoor(10, 2, 1.0, 0.0, 0.1, 4).unwrap();
        let inds = sample_subsets(10, 0.5, 10_000, 6).unwrap();
        let noisy = synth_outputs(&gt, &inds, 8).unwrap();
        let mut clean_gt = gt.clone();
        clean_gt.noise_sigma = 0.0;
        let clean = synth_outputs(&clean_gt, &inds, 8).unwrap();
        for z in 0..10 {
            let var: f64 = noisy
                .iter()
                .zip(&clean)
                .map(|(a, b)| (a.outputs[z] - b.outputs[z]).powi(2))
                .sum::<f64>()
                / noisy.len() as f64;
            assert!((var - 0.01).abs() < 0.001, "target {z}: residual variance {var}");
        }
    }

    #[test]
    fn curve_hand_example() {
        // n=3, v=(1,0,0); records S'={2} out 1 and S'={1,2} out 3 both have
        // support count 0 and exclude target 0, so g(z0, 0) = 2
        let v = FeatureIndicator::from_support(3, &[0]).unwrap();
        let records = vec![
            SubsetRecord { indicator: vec![false, false, true], outputs: vec![1.0, 0.0, 0.0] },
            SubsetRecord { indicator: vec![false, true, true], outputs: vec![3.0, 0.0, 0.0] },
        ];
        let curve = empirical_k_output_with_min(&records, &v, true, 1).unwrap();
        let (mean, count) = curve.per_target(0, 0).unwrap();
        assert_abs_diff_eq!(mean, 2.0);
        assert_eq!(count, 2);
        assert_abs_diff_eq!(curve.g(0).unwrap(), 2.0);
    }

    #[test]
    fn constant_outputs_give_flat_curve() {
        let v = FeatureIndicator::from_support(6, &[0, 1]).unwrap();
        let inds = sample_subsets(6, 0.5, 200, 1).unwrap();
        let records: Vec<SubsetRecord> = inds
            .into_iter()
            .map(|indicator| SubsetRecord { indicator, outputs: vec![3.5; 6] })
            .collect();
        let curve = empirical_k_output(&records, &v, true).unwrap();
        let ks = curve.populated_ks();
        assert!(!ks.is_empty());
        for k in &ks {
            assert_abs_diff_eq!(curve.g(*k).unwrap(), 3.5);
        }
        if ks.len() >= 2 {
            assert_abs_diff_eq!(empirical_strength(&curve, ks[0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn planted_noiseless_curve_has_strength_theta() {
        let theta = 2.0;
        let gt = plant_backdoor(20, 4, theta, 0.0, 0.0, 13).unwrap();
        let inds = sample_subsets(20, 0.5, 4_000, 14).unwrap();
        let records = synth_outputs(&gt, &inds, 15).unwrap();
        let curve = empirical_k_output(&records, &gt.planted, true).unwrap();
        let ks = curve.populated_ks();
        assert!(ks.len() >= 2);
        for window in ks.windows(2) {
            if window[1] == window[0] + 1 {
                let s = empirical_strength(&curve, window[0]).unwrap();
                assert_abs_diff_eq!(s, theta, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn support_curve_increases_and_disjoint_feature_is_flat() {
        let gt = plant_backdoor(24, 4, 1.0, 0.0, 0.0, 21).unwrap();
        let inds = sample_subsets(24, 0.5, 6_000, 22).unwrap();
        let records = synth_outputs(&gt, &inds, 23).unwrap();

        let curve = empirical_k_output(&records, &gt.planted, true).unwrap();
        let ks = curve.populated_ks();
        for window in ks.windows(2) {
            assert!(curve.g(window[1]).unwrap() > curve.g(window[0]).unwrap());
        }

        let support = gt.planted.support_indices();
        let rival: Vec<usize> = (0..24).filter(|i| !support.contains(i)).take(4).collect();
        let v = FeatureIndicator::from_support(24, &rival).unwrap();
        let rival_curve = empirical_k_output(&records, &v, true).unwrap();
        let rks = rival_curve.populated_ks();
        for window in rks.windows(2) {
            if window[1] == window[0] + 1 {
                let s = empirical_strength(&rival_curve, window[0]).unwrap();
                assert_abs_diff_eq!(s, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn unpopulated_strength_is_absent_not_a_crash() {
        let v = FeatureIndicator::from_support(3, &[0]).unwrap();
        let records = vec![SubsetRecord {
            indicator: vec![false, true, false],
            outputs: vec![1.0, 0.0, 0.0],
        }];
        let curve = empirical_k_output_with_min(&records, &v, true, 1).unwrap();
        assert!(empirical_strength(&curve, 5).is_none());
    }
}
