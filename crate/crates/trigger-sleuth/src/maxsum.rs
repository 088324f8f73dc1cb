//! The optimization core: the contrast-form objective `h(v)ᵀWv`, its
//! submatrix-sum reformulation, exact enumeration for small instances, and
//! a greedy pair-swap local search.
//!
//! For a size-p indicator `v` the two objective forms satisfy
//! `h(v)ᵀWv · p(n-p)/n = vᵀ(W - diag((p/n)·1ᵀW))v`, so for fixed p they
//! rank candidates identically. The search optimizes the submatrix form,
//! which admits O(1) swap deltas from cached row/column partial sums; the
//! reported objective value is the contrast form.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_math::{contrast_vector, DatamodelMatrix, FeatureIndicator};
use crate::seeding::derive_seed;

/// Improvements at or below this are treated as non-improving, so the
/// search terminates under floating-point noise.
pub const SWAP_TOLERANCE: f64 = 1e-12;

/// Guard on the number of candidates `exact_solve` will enumerate.
pub const EXACT_SOLVE_BUDGET: u128 = 10_000_000;

/// A square weight matrix prepared for submatrix-sum optimization, with
/// cached column sums `1ᵀW`.
#[derive(Debug, Clone)]
pub struct MaxSumInstance {
    weights: DatamodelMatrix,
    column_sums: Vec<f64>,
}

impl MaxSumInstance {
    pub fn new(weights: DatamodelMatrix) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "maxsum instance requires a square matrix, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        let column_sums = weights.column_sums();
        Ok(Self { weights, column_sums })
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DatamodelMatrix {
        &self.weights
    }

    pub fn column_sums(&self) -> &[f64] {
        &self.column_sums
    }
}

/// One local-search (or exact) solution with its objective value.
#[derive(Debug, Clone)]
pub struct CandidateSolution {
    pub v: FeatureIndicator,
    /// Candidate size, `||v||_1`.
    pub k: usize,
    /// Contrast-form objective `h(v)ᵀWv`.
    pub objective_value: f64,
    pub restart_index: usize,
    pub seed: u64,
    pub swap_count: usize,
}

/// Both objective forms for one indicator.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveValue {
    /// `h(v)ᵀWv`
    pub h_form: f64,
    /// `vᵀ(W - diag((p/n)·1ᵀW))v`
    pub final_prob_form: f64,
}

impl ObjectiveValue {
    /// The submatrix form implied by the h-form through the algebraic
    /// identity; comparing it with `final_prob_form` checks the
    /// proportionality of the two independently computed routes.
    pub fn implied_final_prob(&self, n: usize, p: usize) -> f64 {
        self.h_form * (p * (n - p)) as f64 / n as f64
    }

    pub fn proportionality_residual(&self, n: usize, p: usize) -> f64 {
        (self.implied_final_prob(n, p) - self.final_prob_form).abs()
    }
}

/// Evaluate both objective forms for `v`. The two values are computed by
/// independent routes: the h-form as `h(v)·(Wv)` and the submatrix form as
/// a direct sum over support pairs.
pub fn objective(inst: &MaxSumInstance, v: &FeatureIndicator) -> Result<ObjectiveValue> {
    let n = inst.n();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "indicator length {} but instance has n={n}",
            v.len()
        )));
    }
    let h = contrast_vector(v)?;
    let support = v.support_indices();
    let p = support.len();

    // h-form: W v is the sum of the selected columns
    let mut wv = vec![0.0; n];
    for &j in &support {
        for (acc, row_idx) in wv.iter_mut().zip(0..n) {
            *acc += inst.weights.get(row_idx, j);
        }
    }
    let h_form: f64 = h.iter().zip(&wv).map(|(a, b)| a * b).sum();

    // submatrix form: sum over the support block, minus the diagonal shift
    let mut block = 0.0;
    for &i in &support {
        let row = inst.weights.row(i);
        for &j in &support {
            block += row[j];
        }
    }
    let shift: f64 = support.iter().map(|&j| inst.column_sums[j]).sum();
    let final_prob_form = block - (p as f64 / n as f64) * shift;

    Ok(ObjectiveValue { h_form, final_prob_form })
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul((n - j) as u128) / (j + 1) as u128;
        if acc > EXACT_SOLVE_BUDGET * 2 {
            return u128::MAX;
        }
    }
    acc
}

/// Global maximizer over all size-p indicators by exhaustive enumeration.
/// Ties are broken by the lexicographically smallest support-index tuple
/// (so on a zero matrix the first candidate, `{0, .., p-1}`, wins).
pub fn exact_solve(inst: &MaxSumInstance, p: usize) -> Result<CandidateSolution> {
    let n = inst.n();
    if p == 0 || p >= n {
        return Err(Error::InvalidArgument(format!("candidate size p={p} outside 1..{n}")));
    }
    let budget = binomial_u128(n, p);
    if budget > EXACT_SOLVE_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "C({n},{p}) candidates exceed the exact-solve budget of {EXACT_SOLVE_BUDGET}"
        )));
    }
    let scale = p as f64 / n as f64;
    let eval = |support: &[usize]| -> f64 {
        let mut block = 0.0;
        let mut shift = 0.0;
        for &i in support {
            let row = inst.weights.row(i);
            for &j in support {
                block += row[j];
            }
            shift += inst.column_sums[i];
        }
        block - scale * shift
    };

    let mut idx: Vec<usize> = (0..p).collect();
    let mut best_support = idx.clone();
    let mut best_value = eval(&idx);
    loop {
        // advance to the next combination in lexicographic order
        let mut i = p;
        loop {
            if i == 0 {
                let v = FeatureIndicator::from_support(n, &best_support)?;
                let obj = objective(inst, &v)?;
                return Ok(CandidateSolution {
                    v,
                    k: p,
                    objective_value: obj.h_form,
                    restart_index: 0,
                    seed: 0,
                    swap_count: 0,
                });
            }
            i -= 1;
            if idx[i] != i + n - p {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..p {
            idx[j] = idx[j - 1] + 1;
        }
        let value = eval(&idx);
        if value > best_value {
            best_value = value;
            best_support.copy_from_slice(&idx);
        }
    }
}

/// Greedy pair-swap local search from a seeded uniform random size-k start.
/// Each step applies the single (out, in) swap with the largest objective
/// improvement (ties: smallest (out, in) index pair) and stops when no swap
/// improves by more than [`SWAP_TOLERANCE`].
pub fn local_search(inst: &MaxSumInstance, k: usize, seed: u64) -> Result<CandidateSolution> {
    local_search_with_trace(inst, k, seed).map(|(sol, _)| sol)
}

/// As [`local_search`], also returning the submatrix-form objective value
/// after the start and after each applied swap.
pub fn local_search_with_trace(
    inst: &MaxSumInstance,
    k: usize,
    seed: u64,
) -> Result<(CandidateSolution, Vec<f64>)> {
    let n = inst.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("candidate size k={k} outside 1..{n}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut in_set = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        in_set[i] = true;
    }

    let w = &inst.weights;
    let scale = k as f64 / n as f64;
    // shifted diagonal term of the submatrix-form matrix
    let diag_shift: Vec<f64> = inst.column_sums.iter().map(|&c| scale * c).collect();

    // row+column partial sums over the current set: s[t] = sum_{u in v} (W[t][u] + W[u][t])
    let mut partial = vec![0.0; n];
    for (t, slot) in partial.iter_mut().enumerate() {
        let row = w.row(t);
        let mut acc = 0.0;
        for u in 0..n {
            if in_set[u] {
                acc += row[u] + w.get(u, t);
            }
        }
        *slot = acc;
    }
    let mut value = {
        let mut block = 0.0;
        let mut shift = 0.0;
        for i in 0..n {
            if in_set[i] {
                let row = w.row(i);
                for j in 0..n {
                    if in_set[j] {
                        block += row[j];
                    }
                }
                shift += diag_shift[i];
            }
        }
        block - shift
    };
    let mut trace = vec![value];
    let mut swap_count = 0;

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !in_set[i] {
                continue;
            }
            let row_i = w.row(i);
            // removing i: lose its row/col sums (its diagonal counted once)
            let remove_gain = -(partial[i] - row_i[i]) + diag_shift[i];
            for j in 0..n {
                if in_set[j] {
                    continue;
                }
                let add_gain =
                    partial[j] - row_i[j] - w.get(j, i) + w.get(j, j) - diag_shift[j];
                let delta = remove_gain + add_gain;
                if best.is_none_or(|(b, _, _)| delta > b) {
                    best = Some((delta, i, j));
                }
            }
        }
        let Some((delta, out_idx, in_idx)) = best else { break };
        if delta <= SWAP_TOLERANCE {
            break;
        }
        in_set[out_idx] = false;
        in_set[in_idx] = true;
        for (t, slot) in partial.iter_mut().enumerate() {
            *slot += w.get(t, in_idx) + w.get(in_idx, t)
                - w.get(t, out_idx)
                - w.get(out_idx, t);
        }
        value += delta;
        trace.push(value);
        swap_count += 1;
    }

    let v = FeatureIndicator::from_bits(in_set);
    let obj = objective(inst, &v)?;
    debug_assert!(
        (obj.final_prob_form - value).abs() <= 1e-9 * (1.0 + value.abs()),
        "incremental objective drifted from recomputation"
    );
    Ok((
        CandidateSolution {
            v,
            k,
            objective_value: obj.h_form,
            restart_index: 0,
            seed,
            swap_count,
        },
        trace,
    ))
}

/// Run `restarts` seeded local searches for every size in `k_set` and
/// return all candidates, sorted by (k, restart). The per-restart seed is
/// derived from (base_seed, k, restart), so results do not depend on
/// execution order or thread count.
pub fn multi_search(
    inst: &MaxSumInstance,
    k_set: &[usize],
    restarts: usize,
    base_seed: u64,
) -> Result<Vec<CandidateSolution>> {
    if k_set.is_empty() {
        return Err(Error::InvalidArgument("empty candidate size set".into()));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut sizes = k_set.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    for &k in &sizes {
        if k == 0 || k >= inst.n() {
            return Err(Error::InvalidArgument(format!(
                "candidate size k={k} outside 1..{}",
                inst.n()
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&k| (0..restarts).map(move |l| (k, l)))
        .collect();
    let mut candidates = jobs
        .into_par_iter()
        .map(|(k, l)| {
            let seed = derive_seed(base_seed, k as u64, l as u64);
            local_search(inst, k, seed).map(|mut sol| {
                sol.restart_index = l;
                sol
            })
        })
        .collect::<Result<Vec<_>>>()?;
    candidates.sort_by_key(|c| (c.k, c.restart_index));
    Ok(candidates)
}

/// Default candidate sizes: geometric doubling from `max(2, n/500)` up to
/// `n/10`, at most 10 sizes.
pub fn default_candidate_sizes(n: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut k = (n / 500).max(2);
    while k <= n / 10 && sizes.len() < 10 {
        sizes.push(k);
        k *= 2;
    }
    if sizes.is_empty() && n >= 2 {
        sizes.push((n / 2).max(1));
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subset_sim::plant_backdoor;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ind(bits: &[u8]) -> FeatureIndicator {
        FeatureIndicator::from_bits(bits.iter().map(|&b| b != 0).collect())
    }

    fn random_instance(n: usize, seed: u64) -> MaxSumInstance {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        MaxSumInstance::new(DatamodelMatrix::from_row_major(n, n, vals).unwrap()).unwrap()
    }

    #[test]
    fn objective_identity_matrix_example() {
        let mut vals = vec![0.0; 16];
        for i in 0..4 {
            vals[i * 4 + i] = 1.0;
        }
        let inst =
            MaxSumInstance::new(DatamodelMatrix::from_row_major(4, 4, vals).unwrap()).unwrap();
        let obj = objective(&inst, &ind(&[1, 1, 0, 0])).unwrap();
        assert_abs_diff_eq!(obj.h_form, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(obj.final_prob_form, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_zero_matrix() {
        let inst = MaxSumInstance::new(DatamodelMatrix::zeros(5, 5)).unwrap();
        let obj = objective(&inst, &ind(&[1, 0, 1, 0, 0])).unwrap();
        assert_eq!(obj.h_form, 0.0);
        assert_eq!(obj.final_prob_form, 0.0);
    }

    #[test]
    fn objective_rejects_degenerate_or_mismatched() {
        let inst = MaxSumInstance::new(DatamodelMatrix::zeros(4, 4)).unwrap();
        assert!(objective(&inst, &ind(&[1, 1, 1, 1])).is_err());
        assert!(objective(&inst, &ind(&[1, 0, 0])).is_err());
        assert!(MaxSumInstance::new(DatamodelMatrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn exact_solve_three_candidates() {
        let mut vals = vec![0.0; 9];
        vals[0] = 1.0;
        let inst =
            MaxSumInstance::new(DatamodelMatrix::from_row_major(3, 3, vals).unwrap()).unwrap();
        let sol = exact_solve(&inst, 1).unwrap();
        assert_eq!(sol.v.support_indices(), vec![0]);
        assert_abs_diff_eq!(sol.objective_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_solve_tie_break_is_first_candidate() {
        let inst = MaxSumInstance::new(DatamodelMatrix::zeros(6, 6)).unwrap();
        let sol = exact_solve(&inst, 3).unwrap();
        assert_eq!(sol.v.support_indices(), vec![0, 1, 2]);
    }

    #[test]
    fn exact_solve_budget_guard() {
        let inst = MaxSumInstance::new(DatamodelMatrix::zeros(100, 100)).unwrap();
        assert!(matches!(exact_solve(&inst, 50), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn exact_solve_recovers_planted_support() {
        let gt = plant_backdoor(12, 3, 5.0, 0.2, 0.0, 41).unwrap();
        let inst = MaxSumInstance::new(gt.true_weights.clone()).unwrap();
        let sol = exact_solve(&inst, 3).unwrap();
        assert_eq!(sol.v.support_indices(), gt.planted.support_indices());
    }

    #[test]
    fn local_search_two_examples() {
        let inst = random_instance(2, 3);
        let sol = local_search(&inst, 1, 9).unwrap();
        assert!(sol.swap_count <= 1);
        let best = exact_solve(&inst, 1).unwrap();
        assert_abs_diff_eq!(sol.objective_value, best.objective_value, epsilon = 1e-12);
    }

    #[test]
    fn restarts_reach_the_exact_optimum_on_planted_instance() {
        let gt = plant_backdoor(30, 5, 5.0, 0.2, 0.0, 51).unwrap();
        let inst = MaxSumInstance::new(gt.true_weights.clone()).unwrap();
        let exact = exact_solve(&inst, 5).unwrap();
        let best = (0..50)
            .map(|l| local_search(&inst, 5, derive_seed(77, 5, l)).unwrap())
            .max_by(|a, b| a.objective_value.total_cmp(&b.objective_value))
            .unwrap();
        assert_eq!(best.v.support_indices(), exact.v.support_indices());
    }

    #[test]
    fn local_search_never_beats_exact() {
        for case in 0..10u64 {
            let n = 8 + (case % 5) as usize;
            let inst = random_instance(n, 100 + case);
            let p = 2 + (case % 3) as usize;
            let exact = exact_solve(&inst, p).unwrap();
            for l in 0..5 {
                let sol = local_search(&inst, p, derive_seed(case, p as u64, l)).unwrap();
                assert!(sol.objective_value <= exact.objective_value + 1e-9);
            }
        }
    }

    #[test]
    fn trace_is_strictly_increasing_and_matches_recomputation() {
        for seed in 0..5u64 {
            let inst = random_instance(40, 200 + seed);
            let (sol, trace) = local_search_with_trace(&inst, 8, seed).unwrap();
            for pair in trace.windows(2) {
                assert!(pair[1] > pair[0]);
            }
            let obj = objective(&inst, &sol.v).unwrap();
            assert_abs_diff_eq!(*trace.last().unwrap(), obj.final_prob_form, epsilon = 1e-9);
            assert_eq!(sol.swap_count, trace.len() - 1);
        }
    }

    #[test]
    fn multi_search_contract_and_determinism() {
        let inst = random_instance(12, 7);
        let a = multi_search(&inst, &[2], 3, 19).unwrap();
        assert_eq!(a.len(), 3);
        for sol in &a {
            assert_eq!(sol.v.support_size(), 2);
        }
        let b = multi_search(&inst, &[2], 3, 19).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.v, y.v);
            assert_eq!(x.objective_value, y.objective_value);
        }
        assert!(multi_search(&inst, &[], 3, 0).is_err());
        assert!(multi_search(&inst, &[12], 3, 0).is_err());
    }

    #[test]
    fn most_restarts_find_a_strongly_planted_support() {
        let gt = plant_backdoor(60, 5, 5.0, 0.1, 0.0, 61).unwrap();
        let inst = MaxSumInstance::new(gt.true_weights.clone()).unwrap();
        let candidates = multi_search(&inst, &[5], 40, 62).unwrap();
        let planted = gt.planted.support_indices();
        let hits = candidates.iter().filter(|c| c.v.support_indices() == planted).count();
        assert!(hits * 10 >= 40 * 9, "only {hits}/40 restarts found the planted set");
    }

    #[test]
    fn default_sizes_are_valid() {
        for n in [20, 100, 1000, 50_000] {
            let sizes = default_candidate_sizes(n);
            assert!(!sizes.is_empty());
            assert!(sizes.len() <= 10);
            for &k in &sizes {
                assert!(k >= 1 && k < n);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn objective_forms_are_proportional(n in 4usize..32, seed in any::<u64>()) {
            let inst = random_instance(n, seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabcd);
            let p = rng.random_range(1..n);
            let mut bits = vec![false; n];
            for i in rand::seq::index::sample(&mut rng, n, p) {
                bits[i] = true;
            }
            let v = FeatureIndicator::from_bits(bits);
            let obj = objective(&inst, &v).unwrap();
            prop_assert!(obj.proportionality_residual(n, p) < 1e-10);

            // the middle form of the derivation chain
            let w = inst.weights();
            let support = v.support_indices();
            let mut quad = 0.0;
            for &i in &support {
                for &j in &support {
                    quad += w.get(i, j);
                }
            }
            let shift: f64 = support.iter().map(|&j| inst.column_sums()[j]).sum();
            let middle = quad - (p as f64 / n as f64) * shift;
            prop_assert!((middle - obj.final_prob_form).abs() < 1e-10);
        }
    }
}
