//! Core consistency diagnostic and rank estimation by scanning candidate ranks.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::als::{cp_als, pseudo_inverse, AlsConfig};
use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::seed::derive_seed;
use crate::tensor::{FactorMatrix, SparseTensor};

/// Largest dense intermediate the core computation will allocate.
pub const CORE_SIZE_CAP: usize = 100_000_000;

/// Aggregate core consistency a candidate rank needs to be accepted.
pub const ACCEPT_SCORE: f64 = 90.0;

/// Core consistency of `m` as a model of `x`, at most 100.
///
/// The least-squares Tucker core for the fixed factors (weights absorbed into
/// the first factor) is compared with the superdiagonal of ones:
/// `100 · (1 − ‖G − T‖² / R)`.
pub fn corcondia(x: &SparseTensor, m: &KruskalModel) -> Result<f64> {
    m.check_shape(x)?;
    let rank = m.rank();
    let n = x.ndims();
    if rank == 0 {
        return Err(Error::InvalidArgument("model has no components".into()));
    }

    let mut pinvs = Vec::with_capacity(n);
    for (mode, f) in m.factors.iter().enumerate() {
        let f = if mode == 0 {
            let mut scaled = f.clone();
            for (r, mut col) in scaled.column_iter_mut().enumerate() {
                col *= m.lambda[r];
            }
            scaled
        } else {
            f.clone()
        };
        pinvs.push(pseudo_inverse(&f)?);
    }

    // Contract the sparse tensor along the last mode first, then the rest densely.
    let mut dims: Vec<usize> = x.dims().to_vec();
    dims[n - 1] = rank;
    let size = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    if size > CORE_SIZE_CAP {
        return Err(Error::ReconstructionTooLarge { entries: size, cap: CORE_SIZE_CAP });
    }
    let stride_last: usize = dims[..n - 1].iter().product();
    let mut data = vec![0.0; size];
    let last = &pinvs[n - 1];
    for (c, v) in x.iter() {
        let base: usize = c[..n - 1]
            .iter()
            .zip(&dims[..n - 1])
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i);
        for r in 0..rank {
            data[base + r * stride_last] += v * last[(r, c[n - 1])];
        }
    }
    for mode in 0..n - 1 {
        data = mode_product(&data, &mut dims, mode, &pinvs[mode]);
    }

    let mut off = 0.0;
    let mut idx = vec![0usize; n];
    for g in &data {
        let target = if idx.iter().all(|&i| i == idx[0]) { 1.0 } else { 0.0 };
        off += (g - target) * (g - target);
        for (m, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < dims[m] {
                break;
            }
            *i = 0;
        }
    }
    let score = 100.0 * (1.0 - off / rank as f64);
    if !score.is_finite() {
        return Err(Error::NumericalBreakdown("core consistency is not finite".into()));
    }
    Ok(score)
}

/// Dense mode-`mode` product with `p` (`rows x dims[mode]`), first index fastest.
fn mode_product(data: &[f64], dims: &mut [usize], mode: usize, p: &FactorMatrix) -> Vec<f64> {
    let inner: usize = dims[..mode].iter().product();
    let outer: usize = dims[mode + 1..].iter().product();
    let (rows, cols) = p.shape();
    debug_assert_eq!(cols, dims[mode]);
    let mut out = vec![0.0; inner * rows * outer];
    for o in 0..outer {
        for c in 0..cols {
            let src = &data[(o * cols + c) * inner..(o * cols + c + 1) * inner];
            for r in 0..rows {
                let w = p[(r, c)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
    }
    dims[mode] = rows;
    out
}

/// Scores of a rank scan: one row per candidate rank, one column per trial.
#[derive(Clone, Debug)]
pub struct RankScan {
    /// `scores[(rank - 1, trial)]`; failed trials hold `-inf`.
    pub scores: DMatrix<f64>,
    pub chosen_rank: usize,
}

impl RankScan {
    /// Median score per candidate rank over the trials that succeeded.
    ///
    /// A single restart stuck in a degenerate solution can score far below
    /// zero; the median keeps it from deciding the rank.
    pub fn aggregate_scores(&self) -> Vec<f64> {
        self.scores
            .row_iter()
            .map(|row| {
                let mut ok: Vec<f64> = row.iter().copied().filter(|s| s.is_finite()).collect();
                if ok.is_empty() {
                    return f64::NEG_INFINITY;
                }
                ok.sort_by(f64::total_cmp);
                let mid = ok.len() / 2;
                if ok.len() % 2 == 1 {
                    ok[mid]
                } else {
                    0.5 * (ok[mid - 1] + ok[mid])
                }
            })
            .collect()
    }
}

/// Fits every rank in `1..=r_max` `trials` times and scores each fit with
/// [`corcondia`].
pub fn scan_ranks(x: &SparseTensor, r_max: usize, trials: usize, cfg: &AlsConfig) -> Result<RankScan> {
    if r_max == 0 || trials == 0 {
        return Err(Error::InvalidArgument("r_max and trials must be at least 1".into()));
    }
    let cells: Vec<(usize, usize)> = (1..=r_max).flat_map(|r| (0..trials).map(move |t| (r, t))).collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(rank, trial)| {
            let trial_cfg = AlsConfig { rank, seed: derive_seed(cfg.seed, &[rank as u64, trial as u64]), ..cfg.clone() };
            cp_als(x, &trial_cfg)
                .and_then(|m| corcondia(x, &m))
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    if scores.iter().all(|s| !s.is_finite()) {
        return Err(Error::RankEstimationFailed);
    }
    let scores = DMatrix::from_row_slice(r_max, trials, &scores);
    let mut scan = RankScan { scores, chosen_rank: 1 };
    scan.chosen_rank = choose_rank(&scan.aggregate_scores());
    Ok(scan)
}

/// Largest rank such that it and every smaller rank clear [`ACCEPT_SCORE`];
/// when rank 1 already fails, the best score with ties going to the smaller rank.
fn choose_rank(means: &[f64]) -> usize {
    let passing = means.iter().take_while(|&&s| s >= ACCEPT_SCORE).count();
    if passing > 0 {
        return passing;
    }
    let mut best = 0;
    for (i, &s) in means.iter().enumerate() {
        if s > means[best] {
            best = i;
        }
    }
    best + 1
}

/// Estimated number of components of `x`, in `[1, r_max]`.
pub fn get_rank(x: &SparseTensor, r_max: usize, trials: usize, cfg: &AlsConfig) -> Result<usize> {
    scan_ranks(x, r_max, trials, cfg).map(|s| s.chosen_rank)
}
