//! Shared test oracles and helpers.
//!
//! The gradient oracle is a central finite difference over forward-only
//! evaluation, independent of the backward implementation it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use longrank::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor for near-zero pairs: values below 1e-6 in
/// magnitude are compared absolutely at 1e-8.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        if (analytic - numeric).abs() < 1e-8 {
            0.0
        } else {
            (analytic - numeric).abs() * 1e6
        }
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central finite difference of `forward` w.r.t. one coordinate of `param`.
pub fn fd_coordinate(param: &Tensor, coord: usize, forward: &dyn Fn() -> f64) -> f64 {
    let mut data = param.data();
    let original = data[coord];
    data[coord] = original + FD_STEP;
    param.set_data(data.clone());
    let plus = forward();
    data[coord] = original - FD_STEP;
    param.set_data(data.clone());
    let minus = forward();
    data[coord] = original;
    param.set_data(data);
    (plus - minus) / (2.0 * FD_STEP)
}

/// Check the analytic gradient of `loss_fn` against finite differences on
/// up to `coords_per_tensor` random coordinates of every tensor in
/// `params`. Returns the maximum relative error observed.
pub fn check_gradients(
    params: &[Tensor],
    loss_fn: &dyn Fn() -> Tensor,
    coords_per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    loss.backward().expect("loss must be scalar");
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let forward = || loss_fn().item().expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (p, grad) in params.iter().zip(&grads) {
        let n = p.numel();
        for _ in 0..coords_per_tensor.min(n) {
            let coord = rng.random_range(0..n);
            let numeric = fd_coordinate(p, coord, &forward);
            worst = worst.max(grad_rel_err(grad[coord], numeric));
        }
    }
    worst
}

/// Random values with pairwise gaps of at least 0.02 in every position,
/// keeping finite differences far away from max-op ties.
pub fn well_separated_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut levels: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
    // Fisher-Yates with the seeded rng.
    for i in (1..levels.len()).rev() {
        let j = rng.random_range(0..=i);
        levels.swap(i, j);
    }
    levels
        .iter()
        .map(|v| v + rng.random_range(-0.04..0.04) - 0.5)
        .collect()
}

pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| rng.sample(normal)).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- independent quadratic DP string oracles ----

/// Plain full-table longest-common-substring oracle.
pub fn oracle_lcs_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut best = 0;
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            if a[i - 1] == b[j - 1] {
                table[i][j] = table[i - 1][j - 1] + 1;
                best = best.max(table[i][j]);
            }
        }
    }
    best
}

/// Plain full-table longest-common-subsequence oracle.
pub fn oracle_lcs_subsequence(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

// ---- brute-force ranking metric oracles ----

/// Reciprocal rank by direct scan.
pub fn oracle_mrr(ordered_grades: &[u32], cutoff: usize) -> f64 {
    for (i, &g) in ordered_grades.iter().take(cutoff).enumerate() {
        if g > 0 {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn oracle_dcg(ordered_grades: &[u32], k: usize) -> f64 {
    ordered_grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| ((2f64).powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG with the ideal computed by exhaustive maximization over all
/// permutations of the judged grades (factorial, n <= 5).
pub fn oracle_ndcg(ordered_grades: &[u32], all_grades: &[u32], k: usize) -> Option<f64> {
    let mut best = 0f64;
    let mut grades = all_grades.to_vec();
    permute(&mut grades, 0, &mut |perm| {
        best = best.max(oracle_dcg(perm, k));
    });
    if best == 0.0 {
        return None;
    }
    Some(oracle_dcg(ordered_grades, k) / best)
}

/// Average precision by direct definition.
pub fn oracle_map(ordered_grades: &[u32], total_relevant: usize) -> Option<f64> {
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in ordered_grades.iter().enumerate() {
        if g > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Heap-free recursive permutation enumeration.
pub fn permute<T: Clone>(items: &mut Vec<T>, start: usize, visit: &mut impl FnMut(&[T])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
