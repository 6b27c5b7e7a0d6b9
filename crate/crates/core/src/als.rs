//! CP decomposition by alternating least squares.

use log::debug;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{mttkrp, FactorMatrix, SparseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    /// Stop once the fit changes by less than this between two sweeps.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self { rank: 1, tolerance: 1e-5, max_iterations: 1000, seed: 0 }
    }
}

impl AlsConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self { rank, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a traced ALS run.
#[derive(Clone, Debug)]
pub struct AlsFit {
    pub model: KruskalModel,
    /// `‖x − model‖² / ‖x‖²` after every sweep.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AlsFit {
    pub fn relative_error(&self) -> f64 {
        self.objective.last().copied().unwrap_or(1.0).sqrt()
    }
}

/// Fits a normalized rank-`cfg.rank` model to `x`.
pub fn cp_als(x: &SparseTensor, cfg: &AlsConfig) -> Result<KruskalModel> {
    cp_als_traced(x, cfg).map(|fit| fit.model)
}

/// Uniform `[0, 1)` initial factors drawn from `seed`.
pub fn random_factors(dims: &[usize], rank: usize, seed: u64) -> Vec<FactorMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.iter()
        .map(|&d| FactorMatrix::from_fn(d, rank, |_, _| rng.random::<f64>()))
        .collect()
}

pub fn cp_als_traced(x: &SparseTensor, cfg: &AlsConfig) -> Result<AlsFit> {
    cfg.validate()?;
    let init = random_factors(x.dims(), cfg.rank, cfg.seed);
    cp_als_from(x, cfg, init)
}

/// ALS started from the given factors.
pub fn cp_als_from(x: &SparseTensor, cfg: &AlsConfig, init: Vec<FactorMatrix>) -> Result<AlsFit> {
    cfg.validate()?;
    let norm_sq = x.norm_squared();
    if x.nnz() == 0 || norm_sq == 0.0 {
        return Err(Error::DegenerateInput("tensor has no nonzero entries".into()));
    }
    let n = x.ndims();
    if init.len() != n {
        return Err(Error::ShapeMismatch(format!("{} initial factors for {n} modes", init.len())));
    }
    for (m, f) in init.iter().enumerate() {
        if f.nrows() != x.dims()[m] || f.ncols() != cfg.rank {
            return Err(Error::ShapeMismatch(format!(
                "initial factor {m} is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                x.dims()[m],
                cfg.rank
            )));
        }
    }

    let rank = cfg.rank;
    let mut model = KruskalModel::new(init, DVector::from_element(rank, 1.0))?;
    let mut grams: Vec<FactorMatrix> = model.factors.iter().map(|f| f.transpose() * f).collect();
    let mut objective = Vec::new();
    let mut fit_old = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iterations {
        iterations = iter + 1;
        let mut last_mttkrp = None;
        for mode in 0..n {
            let m = mttkrp(x, &model.factors, mode)?;
            let mut v = FactorMatrix::from_element(rank, rank, 1.0);
            for (g_mode, g) in grams.iter().enumerate() {
                if g_mode != mode {
                    v.component_mul_assign(g);
                }
            }
            let mut f = solve_normal_equations(&m, &v)?;
            for (r, mut col) in f.column_iter_mut().enumerate() {
                let norm = col.norm();
                model.lambda[r] = norm;
                if norm > 0.0 {
                    col /= norm;
                }
            }
            grams[mode] = f.transpose() * &f;
            model.factors[mode] = f;
            if mode == n - 1 {
                last_mttkrp = Some(m);
            }
        }

        let m_last = last_mttkrp.expect("at least one mode");
        let mut v = FactorMatrix::from_element(rank, rank, 1.0);
        grams.iter().for_each(|g| v.component_mul_assign(g));
        let model_sq = model.lambda.dot(&(&v * &model.lambda));
        let inner: f64 = (0..rank)
            .map(|r| model.lambda[r] * model.factors[n - 1].column(r).dot(&m_last.column(r)))
            .sum();
        let resid_sq = (norm_sq + model_sq - 2.0 * inner).max(0.0);
        let obj = resid_sq / norm_sq;
        if !obj.is_finite() || model.lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::NumericalBreakdown(format!("non-finite objective at sweep {iterations}")));
        }
        objective.push(obj);
        let fit = 1.0 - obj.sqrt();
        if iter > 0 && (fit - fit_old).abs() < cfg.tolerance {
            converged = true;
            break;
        }
        fit_old = fit;
    }
    debug!(
        "cp_als rank {rank}: {iterations} sweeps, relative error {:.3e}, converged {converged}",
        objective.last().copied().unwrap_or(1.0).sqrt()
    );

    model.normalize_in_place();
    model.canonicalize_signs();
    Ok(AlsFit { model, objective, iterations, converged })
}

/// Solves `F V = M` for symmetric positive semidefinite `V`, falling back to
/// the pseudoinverse when the Cholesky route fails or is not finite.
pub(crate) fn solve_normal_equations(m: &FactorMatrix, v: &FactorMatrix) -> Result<FactorMatrix> {
    if let Some(chol) = v.clone().cholesky() {
        let f = chol.solve(&m.transpose()).transpose();
        if f.iter().all(|x| x.is_finite()) {
            return Ok(f);
        }
    }
    let pinv = pseudo_inverse(v)?;
    let f = m * pinv;
    if f.iter().all(|x| x.is_finite()) {
        Ok(f)
    } else {
        Err(Error::NumericalBreakdown("normal equations produced non-finite factors".into()))
    }
}

const PINV_RELATIVE_TOLERANCE: f64 = 1e-12;

pub(crate) fn pseudo_inverse(a: &FactorMatrix) -> Result<FactorMatrix> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite matrix".into()));
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    // Exactly collinear columns from fitted models leave singular values a few
    // ulps above the usual max(m, n)·ε·σ₁ cut.
    let eps = PINV_RELATIVE_TOLERANCE * (a.nrows().max(a.ncols()) as f64) * top.max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::relative_error;

    fn rank_one(a: &[f64], b: &[f64], c: &[f64], scale: f64) -> SparseTensor {
        let mut entries = Vec::new();
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                for (k, ck) in c.iter().enumerate() {
                    entries.push((vec![i, j, k], scale * ai * bj * ck));
                }
            }
        }
        SparseTensor::from_entries(vec![a.len(), b.len(), c.len()], entries).unwrap()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn recovers_rank_one() {
        let a = unit(&[1.0, 2.0, -1.0, 0.5]);
        let b = unit(&[0.3, 1.0, 2.0]);
        let c = unit(&[2.0, -1.0, 1.0, 1.0, 0.2]);
        let x = rank_one(&a, &b, &c, 5.0);
        let m = cp_als(&x, &AlsConfig { rank: 1, tolerance: 1e-12, ..AlsConfig::default() }).unwrap();
        assert!((m.lambda[0] - 5.0).abs() < 1e-6);
        for (f, want) in m.factors.iter().zip([&a, &b, &c]) {
            let dot: f64 = f.column(0).iter().zip(want.iter()).map(|(x, y)| x * y).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6);
        }
        assert!(relative_error(&x, &m).unwrap() < 1e-6);
    }

    #[test]
    fn zero_tensor_is_degenerate() {
        let x = SparseTensor::zeros(vec![3, 3, 3]);
        assert!(matches!(cp_als(&x, &AlsConfig::with_rank(2)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let x = rank_one(&[1.0], &[1.0], &[1.0], 1.0);
        assert!(cp_als(&x, &AlsConfig { rank: 0, ..AlsConfig::default() }).is_err());
        assert!(cp_als(&x, &AlsConfig { tolerance: 0.0, ..AlsConfig::default() }).is_err());
        assert!(cp_als(&x, &AlsConfig { max_iterations: 0, ..AlsConfig::default() }).is_err());
    }

    #[test]
    fn output_is_normalized_with_canonical_signs() {
        let gt = crate::synth::generate(&[8, 7, 6], 2, 1.0, 0.1, 3).unwrap();
        let m = cp_als(&gt.tensor, &AlsConfig::with_rank(2)).unwrap();
        for f in &m.factors {
            for col in f.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
        for col in m.factors[0].column_iter() {
            let pivot = col.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot > 0.0);
        }
        assert!(m.lambda.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn singular_gram_uses_pseudoinverse() {
        // Two identical initial columns make every Gram product singular.
        let x = rank_one(&[1.0, 2.0], &[1.0, 1.0], &[3.0, 1.0], 1.0);
        let init = vec![FactorMatrix::from_element(2, 2, 1.0); 3];
        let fit = cp_als_from(&x, &AlsConfig { rank: 2, ..AlsConfig::default() }, init).unwrap();
        assert!(fit.relative_error() < 1e-8);
    }

    #[test]
    fn deterministic_under_seed() {
        let gt = crate::synth::generate(&[6, 6, 6], 2, 0.8, 0.05, 9).unwrap();
        let cfg = AlsConfig { rank: 2, seed: 4, ..AlsConfig::default() };
        assert_eq!(cp_als(&gt.tensor, &cfg).unwrap(), cp_als(&gt.tensor, &cfg).unwrap());
    }
}
