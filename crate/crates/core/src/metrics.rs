//! Quality measures: relative error, relative fitness and factor match score.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::assignment;
use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::SparseTensor;

/// One CSV row of a streaming experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchReport {
    pub batch_index: usize,
    pub arm: String,
    #[serde(rename = "seconds")]
    pub wall_clock_seconds: f64,
    pub relative_error: f64,
    pub relative_fitness: Option<f64>,
    pub fms: Option<f64>,
}

/// `‖x − m‖²` without materializing `m`.
///
/// On the support of `x` the residual is accumulated entry by entry; off the
/// support it is `‖m‖²` minus the model energy on the support. A difference
/// below the rounding resolution of `‖m‖²` is reported as zero.
pub fn residual_norm_squared(x: &SparseTensor, m: &KruskalModel) -> Result<f64> {
    m.check_shape(x)?;
    let mut on_support = 0.0;
    let mut model_on_support = 0.0;
    for (c, v) in x.iter() {
        let mv = m.value_at(c);
        on_support += (v - mv) * (v - mv);
        model_on_support += mv * mv;
    }
    let full = x
        .dims()
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .is_some_and(|numel| numel == x.nnz());
    let off_support = if full {
        0.0
    } else {
        let model_sq = m.norm_squared();
        let diff = model_sq - model_on_support;
        if diff <= 64.0 * f64::EPSILON * model_sq {
            0.0
        } else {
            diff
        }
    };
    Ok(on_support + off_support)
}

/// `‖x − m‖ / ‖x‖`.
pub fn relative_error(x: &SparseTensor, m: &KruskalModel) -> Result<f64> {
    let norm_sq = x.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::DegenerateInput("relative error of a zero tensor".into()));
    }
    Ok((residual_norm_squared(x, m)? / norm_sq).sqrt())
}

/// `‖x − candidate‖ / ‖x − baseline‖`.
pub fn relative_fitness(x: &SparseTensor, candidate: &KruskalModel, baseline: &KruskalModel) -> Result<f64> {
    let base = residual_norm_squared(x, baseline)?;
    if base == 0.0 {
        return Err(Error::DegenerateInput("baseline residual is zero".into()));
    }
    Ok((residual_norm_squared(x, candidate)? / base).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FmsScale {
    /// Mean over matched components, in `[0, 1]`.
    #[default]
    Mean,
    /// `100 · Σ` over matched components.
    Raw,
}

/// Factor match score in `[0, 1]`.
pub fn fms(a: &KruskalModel, b: &KruskalModel) -> Result<f64> {
    fms_scaled(a, b, FmsScale::Mean)
}

/// Factor match score with components paired by the best one-to-one matching.
///
/// Each pair scores `(1 − |λa − λb| / max(λa, λb)) · Πₙ |aₙᵀ bₙ|` on unit-norm
/// columns.
pub fn fms_scaled(a: &KruskalModel, b: &KruskalModel, scale: FmsScale) -> Result<f64> {
    if a.rank() != b.rank() {
        return Err(Error::ColumnCountMismatch { left: a.rank(), right: b.rank() });
    }
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("model dims {:?} vs {:?}", a.dims(), b.dims())));
    }
    let rank = a.rank();
    if rank == 0 {
        return Ok(match scale {
            FmsScale::Mean => 1.0,
            FmsScale::Raw => 0.0,
        });
    }
    let mut a = a.clone();
    let mut b = b.clone();
    a.normalize_in_place();
    b.normalize_in_place();

    let score = DMatrix::from_fn(rank, rank, |r, s| {
        let (la, lb) = (a.lambda[r], b.lambda[s]);
        let top = la.max(lb);
        let penalty = if top > 0.0 { 1.0 - (la - lb).abs() / top } else { 1.0 };
        a.factors
            .iter()
            .zip(&b.factors)
            .fold(penalty, |acc, (fa, fb)| acc * fa.column(r).dot(&fb.column(s)).abs())
    });
    let assignment = assignment::maximize(&score);
    let total: f64 = assignment.iter().enumerate().map(|(r, &s)| score[(r, s)]).sum();
    Ok(match scale {
        FmsScale::Mean => (total / rank as f64).clamp(0.0, 1.0),
        FmsScale::Raw => 100.0 * total,
    })
}
