//! Linear assignment between the columns of two factor sets.

use nalgebra::DMatrix;

/// Above this many columns the greedy assignment replaces the exact solver.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 64;

/// Assigns every row of `score` to a distinct column, maximizing the total
/// score. Requires `rows <= cols`. Returns the column chosen for each row.
pub fn maximize(score: &DMatrix<f64>) -> Vec<usize> {
    assert!(score.nrows() <= score.ncols(), "more rows than columns");
    if score.ncols() > EXACT_ASSIGNMENT_LIMIT {
        greedy(score)
    } else {
        hungarian(&score.map(|s| -s))
    }
}

/// Shortest augmenting path Hungarian method on a `n x m` cost matrix with
/// `n <= m`, O(n² m).
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    // 1-based potentials and matching, index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Repeatedly takes the highest remaining score.
pub fn greedy(score: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = score.shape();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| score[*b].total_cmp(&score[*a]).then(a.cmp(b)));
    let mut row_done = vec![false; n];
    let mut col_done = vec![false; m];
    let mut assignment = vec![usize::MAX; n];
    for (i, j) in pairs {
        if !row_done[i] && !col_done[j] {
            row_done[i] = true;
            col_done[j] = true;
            assignment[i] = j;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(score: &DMatrix<f64>, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| score[(i, j)]).sum()
    }

    fn brute_best(score: &DMatrix<f64>) -> f64 {
        fn rec(score: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == score.nrows() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..score.ncols() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(score[(row, j)] + rec(score, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(score, 0, &mut vec![false; score.ncols()])
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..200 {
            let n = 1 + trial % 5;
            let m = n + (trial / 5) % 3;
            let score = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
            let a = maximize(&score);
            let mut seen = a.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), n);
            assert!((total(&score, &a) - brute_best(&score)).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_is_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let score = DMatrix::from_fn(70, 80, |_, _| rng.random::<f64>());
        let mut a = maximize(&score);
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 70);
    }
}
