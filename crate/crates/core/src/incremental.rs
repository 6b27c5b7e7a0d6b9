//! Sampling-based batch-incremental CP decomposition.
//!
//! A model of a tensor growing along its last mode is maintained without
//! refitting the whole tensor. For every incoming batch of slices, each
//! repetition
//!
//! 1. draws indices in every mode, biased by the per-index sum of squares of
//!    the tensor seen so far,
//! 2. gathers the sub-tensor at those indices, extended by the batch slices
//!    restricted to the sampled non-growth indices,
//! 3. fits a CP model to that small tensor, started from the stored rows at
//!    the sampled indices when the batch is fitted at full rank,
//! 4. pairs its components with the stored model through the sampled rows,
//!    which both share (the anchors),
//! 5. proposes values for stored factor entries that are still exactly zero,
//!    weights for the matched components, and rows for the new slices.
//!
//! Repetitions read one immutable snapshot and are reduced in repetition
//! order, so results do not depend on scheduling. Entries of the stored
//! factors that are nonzero are never modified; the model is normalized over
//! the rows it held when first fitted, and appended growth-mode rows share
//! that scale.

use std::fmt;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::als::{cp_als, cp_als_from, cp_als_traced, solve_normal_equations, AlsConfig};
use crate::assignment;
use crate::corcondia::get_rank;
use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::seed::derive_seed;
use crate::tensor::{mttkrp, FactorMatrix, SparseTensor};

/// Sampled indices of one repetition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSpec {
    /// Sorted, duplicate-free indices per mode. The growth mode draws from
    /// the slices present before the batch.
    pub index_sets: Vec<Vec<usize>>,
    pub sampling_factors: Vec<usize>,
    pub repetition: usize,
}

/// `⌈size / factor⌉`.
pub fn sample_size(size: usize, factor: usize) -> usize {
    size.div_ceil(factor.max(1))
}

/// Draws `⌈dims[m] / factors[m]⌉` indices per mode without replacement, each
/// draw with probability proportional to the index's sum of squares among
/// the indices not yet drawn.
///
/// Zero-weight indices are only drawn once every positive-weight index has
/// been taken, and then uniformly.
pub fn importance_sample<R: Rng + ?Sized>(x: &SparseTensor, factors: &[usize], rng: &mut R) -> Result<SampleSpec> {
    sample_with_weights(&mode_weights(x), factors, rng)
}

/// Per-mode sums of squares.
fn mode_weights(x: &SparseTensor) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = x.dims().iter().map(|&d| vec![0.0; d]).collect();
    for (c, v) in x.iter() {
        for (w, &i) in out.iter_mut().zip(c) {
            w[i] += v * v;
        }
    }
    out
}

/// Adds the weights of `batch` to those of the tensor it is appended to.
fn extend_mode_weights(weights: &mut [Vec<f64>], batch: &SparseTensor) {
    let (last, rest) = weights.split_last_mut().expect("tensor has a mode");
    let mut added = mode_weights(batch);
    let batch_last = added.pop().expect("tensor has a mode");
    for (w, a) in rest.iter_mut().zip(added) {
        w.iter_mut().zip(a).for_each(|(w, a)| *w += a);
    }
    last.extend(batch_last);
}

fn sample_with_weights<R: Rng + ?Sized>(weights: &[Vec<f64>], factors: &[usize], rng: &mut R) -> Result<SampleSpec> {
    if factors.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sampling factors for a {}-mode tensor",
            factors.len(),
            weights.len()
        )));
    }
    if factors.contains(&0) {
        return Err(Error::InvalidArgument("sampling factors must be at least 1".into()));
    }
    let mut index_sets = Vec::with_capacity(weights.len());
    for (mode, (w, &s)) in weights.iter().zip(factors).enumerate() {
        if w.iter().all(|&v| v <= 0.0) {
            return Err(Error::DegenerateInput(format!("mode {mode} has no positive weight")));
        }
        index_sets.push(weighted_sample(w, sample_size(w.len(), s), rng));
    }
    Ok(SampleSpec { index_sets, sampling_factors: factors.to_vec(), repetition: 0 })
}

/// Exponential-race sampling: the `count` largest `ln(u) / w` keys are a
/// successive proportional draw without replacement.
fn weighted_sample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    let mut zero = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let u = 1.0 - rng.random::<f64>();
            keyed.push((u.ln() / w, i));
        } else {
            zero.push(i);
        }
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed.iter().take(count).map(|&(_, i)| i).collect();
    if count > chosen.len() {
        let extra = (count - chosen.len()).min(zero.len());
        for pos in rand::seq::index::sample(rng, zero.len(), extra) {
            chosen.push(zero[pos]);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// The stored tensor at the sampled indices followed by the batch slices at
/// the sampled non-growth indices.
pub fn build_sample(x_old: &SparseTensor, batch: &SparseTensor, spec: &SampleSpec) -> Result<SparseTensor> {
    check_batch_shape(x_old, batch)?;
    let old = x_old.subtensor(&spec.index_sets)?;
    old.append_slices(&batch_region(batch, spec)?)
}

fn batch_region(batch: &SparseTensor, spec: &SampleSpec) -> Result<SparseTensor> {
    let last = batch.ndims() - 1;
    let mut sets = spec.index_sets.clone();
    sets[last] = (0..batch.dims()[last]).collect();
    batch.subtensor(&sets)
}

fn check_batch_shape(x: &SparseTensor, batch: &SparseTensor) -> Result<()> {
    let n = x.ndims();
    if batch.ndims() != n || x.dims()[..n - 1] != batch.dims()[..n - 1] {
        return Err(Error::ShapeMismatch(format!(
            "batch dims {:?} do not extend tensor dims {:?}",
            batch.dims(),
            x.dims()
        )));
    }
    Ok(())
}

/// Pairing of candidate components with anchor components.
#[derive(Clone, Debug)]
pub struct MatchResult {
    /// `assignment[c]` is the anchor component matched to candidate `c`.
    pub assignment: Vec<usize>,
    /// Mean over modes of `|⟨anchor, candidate⟩|` on unit-norm columns,
    /// candidate components by rows.
    pub similarity: FactorMatrix,
}

fn unit_columns(f: &FactorMatrix) -> (FactorMatrix, Vec<f64>) {
    let mut out = f.clone();
    let mut norms = Vec::with_capacity(f.ncols());
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Optimal one-to-one pairing of candidate columns with anchor columns.
///
/// `anchor` and `candidate` hold the same modes restricted to the same rows;
/// the anchor may have more components than the candidate. Columns are
/// compared after scaling to unit norm, up to sign.
pub fn match_components(anchor: &[FactorMatrix], candidate: &[FactorMatrix]) -> Result<MatchResult> {
    if anchor.is_empty() || anchor.len() != candidate.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} anchor modes vs {} candidate modes",
            anchor.len(),
            candidate.len()
        )));
    }
    let r = anchor[0].ncols();
    let r_sub = candidate[0].ncols();
    if r_sub > r {
        return Err(Error::ColumnCountMismatch { left: r, right: r_sub });
    }
    let mut similarity = FactorMatrix::zeros(r_sub, r);
    for (mode, (a, c)) in anchor.iter().zip(candidate).enumerate() {
        if a.ncols() != r {
            return Err(Error::ColumnCountMismatch { left: r, right: a.ncols() });
        }
        if c.ncols() != r_sub {
            return Err(Error::ColumnCountMismatch { left: r_sub, right: c.ncols() });
        }
        if a.nrows() != c.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "mode {mode}: {} anchor rows vs {} candidate rows",
                a.nrows(),
                c.nrows()
            )));
        }
        let (a_unit, a_norms) = unit_columns(a);
        if let Some(column) = a_norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroComponent { mode, column });
        }
        let (c_unit, _) = unit_columns(c);
        similarity += (c_unit.transpose() * a_unit).abs();
    }
    similarity /= anchor.len() as f64;
    let assignment = assignment::maximize(&similarity);
    Ok(MatchResult { assignment, similarity })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalConfig {
    /// Rank, convergence settings and base seed for every decomposition.
    pub als: AlsConfig,
    /// Per-mode sampling factor `s`.
    pub sampling_factors: Vec<usize>,
    /// Independent sample/decompose/match passes per batch.
    pub repetitions: usize,
    /// Estimate the rank of each batch before decomposing it.
    pub quality_control: bool,
    /// Trials per candidate rank when estimating the rank.
    pub rank_trials: usize,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            als: AlsConfig::default(),
            sampling_factors: vec![2, 2, 2],
            repetitions: 4,
            quality_control: false,
            rank_trials: 3,
        }
    }
}

impl IncrementalConfig {
    fn validate(&self, ndims: usize) -> Result<()> {
        if self.sampling_factors.len() != ndims {
            return Err(Error::InvalidArgument(format!(
                "{} sampling factors for a {ndims}-mode tensor",
                self.sampling_factors.len()
            )));
        }
        if self.sampling_factors.contains(&0) {
            return Err(Error::InvalidArgument("sampling factors must be at least 1".into()));
        }
        if self.repetitions == 0 || self.rank_trials == 0 {
            return Err(Error::InvalidArgument("repetitions and rank trials must be at least 1".into()));
        }
        if ndims < 2 {
            return Err(Error::InvalidArgument("incremental decomposition needs at least two modes".into()));
        }
        Ok(())
    }
}

/// Summary of one processed batch.
#[derive(Clone, Debug, Default)]
pub struct BatchOutcome {
    pub batch_index: usize,
    pub successful_repetitions: usize,
    pub failed_repetitions: usize,
    /// Rank used by each successful repetition.
    pub ranks: Vec<usize>,
    /// Stored components matched by each successful repetition.
    pub matched: Vec<Vec<usize>>,
    /// Shape of the tensor each successful repetition decomposed.
    pub sample_dims: Vec<Vec<usize>>,
}

/// Decomposition state of a growing tensor.
#[derive(Clone)]
pub struct IncrementalState {
    model: KruskalModel,
    tensor: SparseTensor,
    config: IncrementalConfig,
    batches: usize,
    /// Per-mode sums of squares of `tensor`.
    weights: Vec<Vec<f64>>,
}

impl fmt::Debug for IncrementalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncrementalState")
            .field("dims", &self.tensor.dims())
            .field("rank", &self.model.rank())
            .field("batches", &self.batches)
            .finish()
    }
}

/// Fits the initial tensor at the configured rank.
pub fn init_state(x_initial: &SparseTensor, config: IncrementalConfig) -> Result<IncrementalState> {
    IncrementalState::new(x_initial, config)
}

struct Proposal {
    anchor: usize,
    /// Candidate values in the stored scale for the sampled rows of each
    /// anchored mode.
    rows: Vec<Option<Vec<f64>>>,
}

struct Repetition {
    spec: SampleSpec,
    rank: usize,
    sample_dims: Vec<usize>,
    proposals: Vec<Proposal>,
    /// Weighted growth-mode rows for the batch slices, one column per stored
    /// component; only matched columns are meaningful.
    new_rows: FactorMatrix,
    /// Weight estimate per stored component.
    weights: Vec<Option<f64>>,
}

impl IncrementalState {
    pub fn new(x_initial: &SparseTensor, config: IncrementalConfig) -> Result<Self> {
        config.validate(x_initial.ndims())?;
        let k = *x_initial.dims().last().expect("tensor has a mode");
        if config.als.rank > k {
            warn!("rank {} exceeds the {k} initial slices", config.als.rank);
        }
        let fit = cp_als_traced(x_initial, &config.als)?;
        debug!(
            "initial fit: {} sweeps, relative error {:.4}",
            fit.iterations,
            fit.relative_error()
        );
        let weights = mode_weights(x_initial);
        Ok(Self { model: fit.model, tensor: x_initial.clone(), config, batches: 0, weights })
    }

    /// Resumes from an existing model of `tensor`.
    pub fn from_model(model: KruskalModel, tensor: SparseTensor, config: IncrementalConfig) -> Result<Self> {
        config.validate(tensor.ndims())?;
        model.check_shape(&tensor)?;
        if model.rank() != config.als.rank {
            return Err(Error::ColumnCountMismatch { left: config.als.rank, right: model.rank() });
        }
        let weights = mode_weights(&tensor);
        Ok(Self { model, tensor, config, batches: 0, weights })
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    /// Copy of the model with every column scaled to unit norm.
    pub fn normalized_model(&self) -> KruskalModel {
        let mut m = self.model.clone();
        m.normalize_in_place();
        m
    }

    pub fn tensor(&self) -> &SparseTensor {
        &self.tensor
    }

    pub fn config(&self) -> &IncrementalConfig {
        &self.config
    }

    pub fn dims(&self) -> &[usize] {
        self.tensor.dims()
    }

    pub fn batches_processed(&self) -> usize {
        self.batches
    }

    /// Folds one batch of slices into the model. On error the state is left
    /// as it was.
    pub fn process_batch(&mut self, batch: &SparseTensor) -> Result<BatchOutcome> {
        check_batch_shape(&self.tensor, batch)?;
        let n = self.tensor.ndims();
        let last = n - 1;
        let k_new = batch.dims()[last];
        if k_new == 0 {
            return Err(Error::EmptyBatch);
        }
        let batch_index = self.batches;

        let results: Vec<Result<Repetition>> = (0..self.config.repetitions)
            .into_par_iter()
            .map(|rep| self.run_repetition(batch, &self.weights, batch_index, rep))
            .collect();

        let mut reps = Vec::new();
        let mut first_error = None;
        for (rep, result) in results.into_iter().enumerate() {
            match result {
                Ok(r) => reps.push(r),
                Err(e) => {
                    warn!("batch {batch_index}, repetition {rep} failed: {e}");
                    first_error.get_or_insert(e);
                }
            }
        }
        if reps.is_empty() {
            let reason = first_error.map_or_else(|| "no repetitions".to_string(), |e| e.to_string());
            return Err(Error::BatchRejected(reason));
        }

        let model = self.merge(&reps, k_new);

        let outcome = BatchOutcome {
            batch_index,
            successful_repetitions: reps.len(),
            failed_repetitions: self.config.repetitions - reps.len(),
            ranks: reps.iter().map(|r| r.rank).collect(),
            matched: reps.iter().map(|r| r.proposals.iter().map(|p| p.anchor).collect()).collect(),
            sample_dims: reps.iter().map(|r| r.sample_dims.clone()).collect(),
        };
        self.model = model;
        self.tensor.extend_slices(batch)?;
        extend_mode_weights(&mut self.weights, batch);
        self.batches += 1;
        Ok(outcome)
    }

    /// Appends a batch without modelling it: the new growth-mode rows are zero.
    pub fn skip_batch(&mut self, batch: &SparseTensor) -> Result<()> {
        check_batch_shape(&self.tensor, batch)?;
        let last = self.tensor.ndims() - 1;
        self.tensor.extend_slices(batch)?;
        extend_mode_weights(&mut self.weights, batch);
        let c = &self.model.factors[last];
        let grown = c.clone().resize_vertically(c.nrows() + batch.dims()[last], 0.0);
        self.model.factors[last] = grown;
        self.batches += 1;
        Ok(())
    }

    fn run_repetition(
        &self,
        batch: &SparseTensor,
        weights: &[Vec<f64>],
        batch_index: usize,
        rep: usize,
    ) -> Result<Repetition> {
        let cfg = &self.config;
        let n = self.tensor.ndims();
        let last = n - 1;
        let rank = cfg.als.rank;
        let seed = derive_seed(cfg.als.seed, &[batch_index as u64 + 1, rep as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut spec = sample_with_weights(weights, &cfg.sampling_factors, &mut rng)?;
        spec.repetition = rep;
        let new_region = batch_region(batch, &spec)?;
        let als = AlsConfig { seed: rng.random(), ..cfg.als.clone() };

        let sub_rank = if cfg.quality_control {
            let probe = AlsConfig { seed: rng.random(), ..cfg.als.clone() };
            get_rank(&new_region, rank, cfg.rank_trials, &probe)?
        } else {
            rank
        };

        // A full-rank batch is fitted together with the sampled history and
        // anchored in every mode. A rank-deficient batch is fitted on its own
        // and anchored in the non-growth modes only.
        let full = sub_rank == rank;
        let init = if full { Some(self.warm_start(&spec, &new_region)?) } else { None };
        let (sample, anchored) = if full {
            let old = self.tensor.subtensor(&spec.index_sets)?;
            (old.append_slices(&new_region)?, n)
        } else {
            (new_region, last)
        };
        let fit = match init {
            Some(init) => cp_als_from(&sample, &als, init)?.model,
            None => cp_als(&sample, &AlsConfig { rank: sub_rank, ..als })?,
        };
        let k_s = if full { spec.index_sets[last].len() } else { 0 };

        let anchors: Vec<FactorMatrix> = (0..anchored)
            .map(|m| self.model.factors[m].select_rows(&spec.index_sets[m]))
            .collect();
        let candidates: Vec<FactorMatrix> = (0..anchored)
            .map(|m| {
                if m == last {
                    fit.factors[m].rows(0, k_s).into_owned()
                } else {
                    fit.factors[m].clone()
                }
            })
            .collect();
        let matching = match_components(&anchors, &candidates)?;

        let mut proposals = Vec::with_capacity(sub_rank);
        let mut used = Vec::with_capacity(sub_rank);
        for (c, &a) in matching.assignment.iter().enumerate() {
            if !(fit.lambda[c] > 0.0) || candidates.iter().any(|f| f.column(c).norm_squared() == 0.0) {
                continue;
            }
            let rows = (0..n)
                .map(|m| {
                    (m < anchored).then(|| {
                        // Candidate column scaled onto the anchor column.
                        let cand = candidates[m].column(c);
                        let beta = cand.dot(&anchors[m].column(a)) / cand.norm_squared();
                        cand.iter().map(|v| v * beta).collect()
                    })
                })
                .collect();
            proposals.push(Proposal { anchor: a, rows });
            used.push(c);
        }
        let matched: Vec<usize> = proposals.iter().map(|p| p.anchor).collect();

        // Least-squares projection of the sample model onto the matched
        // anchor columns. Projecting the components jointly rather than pair
        // by pair keeps the scale when the sample components are mixtures of
        // the stored ones.
        let mut cross = FactorMatrix::from_element(used.len(), matched.len(), 1.0);
        let mut gram = FactorMatrix::from_element(matched.len(), matched.len(), 1.0);
        for m in 0..last {
            let anc = anchors[m].select_columns(&matched);
            cross.component_mul_assign(&(candidates[m].select_columns(&used).transpose() * &anc));
            gram.component_mul_assign(&(anc.transpose() * &anc));
        }
        let mut weighted_new = fit.factors[last].rows(k_s, fit.factors[last].nrows() - k_s).select_columns(&used);
        for (mut col, &c) in weighted_new.column_iter_mut().zip(&used) {
            col *= fit.lambda[c];
        }
        let projected = solve_normal_equations(&(weighted_new * &cross), &gram)?;
        let mut new_rows = FactorMatrix::zeros(projected.nrows(), rank);
        for (j, &a) in matched.iter().enumerate() {
            new_rows.set_column(a, &projected.column(j));
        }

        let mut weights = vec![None; rank];
        if full {
            let anc = anchors[last].select_columns(&matched);
            cross.component_mul_assign(&(candidates[last].select_columns(&used).transpose() * &anc));
            gram.component_mul_assign(&(anc.transpose() * &anc));
            let sample_weights = FactorMatrix::from_fn(1, used.len(), |_, j| fit.lambda[used[j]]);
            let estimate = solve_normal_equations(&(sample_weights * &cross), &gram)?;
            for (j, &a) in matched.iter().enumerate() {
                weights[a] = Some(estimate[(0, j)]);
            }
        }

        Ok(Repetition { sample_dims: sample.dims().to_vec(), spec, rank: sub_rank, proposals, new_rows, weights })
    }

    /// Initial factors for a full-rank sample: the stored rows at the sampled
    /// indices, weights folded into the old slices, and least-squares rows for
    /// the new slices given the other modes.
    fn warm_start(&self, spec: &SampleSpec, new_region: &SparseTensor) -> Result<Vec<FactorMatrix>> {
        let last = self.tensor.ndims() - 1;
        let rank = self.model.rank();
        let mut init: Vec<FactorMatrix> = spec
            .index_sets
            .iter()
            .zip(&self.model.factors)
            .map(|(rows, f)| f.select_rows(rows))
            .collect();
        for (mut col, l) in init[last].column_iter_mut().zip(self.model.lambda.iter()) {
            col *= *l;
        }
        let mut gram = FactorMatrix::from_element(rank, rank, 1.0);
        for f in &init[..last] {
            gram.component_mul_assign(&(f.transpose() * f));
        }
        let mut placeholder = init.clone();
        placeholder[last] = FactorMatrix::zeros(new_region.dims()[last], rank);
        let new_rows = solve_normal_equations(&mttkrp(new_region, &placeholder, last)?, &gram)?;

        let k_s = init[last].nrows();
        let mut growth = FactorMatrix::zeros(k_s + new_rows.nrows(), rank);
        growth.rows_mut(0, k_s).copy_from(&init[last]);
        growth.rows_mut(k_s, new_rows.nrows()).copy_from(&new_rows);
        init[last] = growth;
        Ok(init)
    }

    fn merge(&self, reps: &[Repetition], k_new: usize) -> KruskalModel {
        let n = self.tensor.ndims();
        let last = n - 1;
        let rank = self.model.rank();
        let mut model = self.model.clone();

        // Stored entries that are exactly zero take the mean of the proposals.
        for m in 0..n {
            let original = &self.model.factors[m];
            let mut sum = FactorMatrix::zeros(original.nrows(), rank);
            let mut count = FactorMatrix::zeros(original.nrows(), rank);
            for rep in reps {
                for p in &rep.proposals {
                    let Some(values) = &p.rows[m] else { continue };
                    for (&row, &v) in rep.spec.index_sets[m].iter().zip(values) {
                        if original[(row, p.anchor)] == 0.0 && v.is_finite() {
                            sum[(row, p.anchor)] += v;
                            count[(row, p.anchor)] += 1.0;
                        }
                    }
                }
            }
            for ((dst, s), c) in model.factors[m].iter_mut().zip(sum.iter()).zip(count.iter()) {
                if *c > 0.0 {
                    *dst = s / c;
                }
            }
        }

        // Weights: average of the previous value and the repetitions' mean.
        for a in 0..rank {
            let estimates: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.weights[a])
                .filter(|w| w.is_finite() && *w > 0.0)
                .collect();
            if !estimates.is_empty() {
                let fresh = estimates.iter().sum::<f64>() / estimates.len() as f64;
                model.lambda[a] = 0.5 * (self.model.lambda[a] + fresh);
            }
        }

        // New growth-mode rows: mean over the repetitions that matched the
        // component, in the scale of the updated weight.
        let mut new_rows = FactorMatrix::zeros(k_new, rank);
        for a in 0..rank {
            let matched: Vec<&Repetition> =
                reps.iter().filter(|r| r.proposals.iter().any(|p| p.anchor == a)).collect();
            let weight = model.lambda[a];
            if matched.is_empty() || weight == 0.0 {
                continue;
            }
            let scale = 1.0 / (matched.len() as f64 * weight);
            for r in matched {
                new_rows.column_mut(a).axpy(scale, &r.new_rows.column(a), 1.0);
            }
        }
        let old_rows = model.factors[last].nrows();
        let mut grown = model.factors[last].clone().resize_vertically(old_rows + k_new, 0.0);
        grown.rows_mut(old_rows, k_new).copy_from(&new_rows);
        model.factors[last] = grown;
        model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;
    use nalgebra::DVector;

    #[test]
    fn full_sampling_takes_everything() {
        let gt = generate(&[5, 4, 6], 2, 0.7, 0.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = importance_sample(&gt.tensor, &[1, 1, 1], &mut rng).unwrap();
        for (set, &d) in spec.index_sets.iter().zip(gt.tensor.dims()) {
            assert_eq!(set, &(0..d).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_positive_weight_is_certain() {
        let x = SparseTensor::from_entries(vec![1, 1, 4], vec![(vec![0, 0, 2], 7.0)]).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = importance_sample(&x, &[1, 1, 4], &mut rng).unwrap();
            assert_eq!(spec.index_sets[2], vec![2]);
        }
    }

    #[test]
    fn zero_weights_only_after_positive_ones() {
        let weights = [0.0, 3.0, 0.0, 1.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let two = weighted_sample(&weights, 2, &mut rng);
            assert_eq!(two, vec![1, 3]);
            let four = weighted_sample(&weights, 4, &mut rng);
            assert_eq!(four.len(), 4);
            assert!(four.contains(&1) && four.contains(&3));
        }
    }

    #[test]
    fn sample_sizes_round_up() {
        let gt = generate(&[7, 5, 9], 1, 1.0, 0.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = importance_sample(&gt.tensor, &[2, 3, 4], &mut rng).unwrap();
        let sizes: Vec<usize> = spec.index_sets.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 2, 3]);
        for set in &spec.index_sets {
            assert!(set.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn degenerate_mode_rejected() {
        let x = SparseTensor::zeros(vec![3, 3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(importance_sample(&x, &[1, 1, 1], &mut rng), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn build_sample_shapes_and_values() {
        let old = generate(&[6, 6, 8], 2, 0.8, 0.1, 4).unwrap().tensor;
        let batch = generate(&[6, 6, 2], 2, 0.8, 0.1, 5).unwrap().tensor;
        let spec = SampleSpec {
            index_sets: vec![vec![0, 2, 5], vec![1, 2, 3, 4], vec![0, 3, 4, 6, 7]],
            sampling_factors: vec![2, 2, 2],
            repetition: 0,
        };
        let s = build_sample(&old, &batch, &spec).unwrap();
        assert_eq!(s.dims(), &[3, 4, 7]);
        for (a, &i) in spec.index_sets[0].iter().enumerate() {
            for (b, &j) in spec.index_sets[1].iter().enumerate() {
                for (c, &k) in spec.index_sets[2].iter().enumerate() {
                    assert_eq!(s.get(&[a, b, c]), old.get(&[i, j, k]));
                }
                for k in 0..2 {
                    assert_eq!(s.get(&[a, b, 5 + k]), batch.get(&[i, j, k]));
                }
            }
        }

        let full = SampleSpec {
            index_sets: old.dims().iter().map(|&d| (0..d).collect()).collect(),
            sampling_factors: vec![1, 1, 1],
            repetition: 0,
        };
        let empty = SparseTensor::zeros(vec![6, 6, 0]);
        assert_eq!(build_sample(&old, &empty, &full).unwrap(), old);

        let wrong = SparseTensor::zeros(vec![5, 6, 2]);
        assert!(matches!(build_sample(&old, &wrong, &full), Err(Error::ShapeMismatch(_))));
    }

    fn random_factors(rows: &[usize], rank: usize, seed: u64) -> Vec<FactorMatrix> {
        crate::als::random_factors(rows, rank, seed)
    }

    #[test]
    fn identical_candidate_matches_identity() {
        let anchor = random_factors(&[10, 9, 8], 4, 6);
        let r = match_components(&anchor, &anchor).unwrap();
        assert_eq!(r.assignment, vec![0, 1, 2, 3]);
        for c in 0..4 {
            assert!((r.similarity[(c, c)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_permutation_with_sign_flips() {
        let anchor = random_factors(&[12, 11, 10], 5, 7);
        let perm = [3, 0, 4, 1, 2];
        let candidate: Vec<FactorMatrix> = anchor
            .iter()
            .enumerate()
            .map(|(m, f)| {
                let mut p = f.select_columns(&perm);
                for (c, mut col) in p.column_iter_mut().enumerate() {
                    col *= if (c + m) % 2 == 0 { -2.5 } else { 0.7 };
                }
                p
            })
            .collect();
        let r = match_components(&anchor, &candidate).unwrap();
        assert_eq!(r.assignment, perm.to_vec());
    }

    #[test]
    fn fewer_candidate_components() {
        let anchor = random_factors(&[12, 11], 4, 8);
        let candidate: Vec<FactorMatrix> = anchor.iter().map(|f| f.select_columns(&[2])).collect();
        assert_eq!(match_components(&anchor, &candidate).unwrap().assignment, vec![2]);
        let too_many = random_factors(&[12, 11], 5, 9);
        assert!(matches!(match_components(&anchor, &too_many), Err(Error::ColumnCountMismatch { .. })));
    }

    #[test]
    fn zero_anchor_column_rejected() {
        let mut anchor = random_factors(&[6, 6], 2, 9);
        anchor[1].column_mut(1).fill(0.0);
        let candidate = random_factors(&[6, 6], 2, 10);
        assert!(matches!(
            match_components(&anchor, &candidate),
            Err(Error::ZeroComponent { mode: 1, column: 1 })
        ));
    }

    fn small_config(rank: usize) -> IncrementalConfig {
        IncrementalConfig {
            als: AlsConfig { rank, tolerance: 1e-8, max_iterations: 1000, seed: 3 },
            sampling_factors: vec![2, 2, 2],
            repetitions: 3,
            quality_control: false,
            rank_trials: 2,
        }
    }

    #[test]
    fn empty_batch_leaves_state() {
        let gt = generate(&[8, 8, 10], 2, 1.0, 0.0, 11).unwrap();
        let mut state = init_state(&gt.tensor, small_config(2)).unwrap();
        let before = state.model().clone();
        let empty = SparseTensor::zeros(vec![8, 8, 0]);
        assert!(matches!(state.process_batch(&empty), Err(Error::EmptyBatch)));
        assert_eq!(state.model(), &before);
        assert_eq!(state.batches_processed(), 0);
    }

    #[test]
    fn rank_one_initial_state_is_exact() {
        let gt = generate(&[6, 5, 4], 1, 1.0, 0.0, 12).unwrap();
        let state = init_state(&gt.tensor, small_config(1)).unwrap();
        assert!(crate::metrics::relative_error(&gt.tensor, state.model()).unwrap() < 1e-6);
    }

    #[test]
    fn rank_above_initial_slices_still_fits() {
        let gt = generate(&[6, 6, 2], 3, 1.0, 0.0, 13).unwrap();
        assert!(init_state(&gt.tensor, small_config(3)).is_ok());
    }

    #[test]
    fn noiseless_batch_is_absorbed() {
        let gt = generate(&[16, 16, 30], 2, 1.0, 0.0, 14).unwrap();
        let initial = gt.tensor.slice_range(0..10).unwrap();
        let mut state = init_state(&initial, small_config(2)).unwrap();
        let out = state.process_batch(&gt.tensor.slice_range(10..20).unwrap()).unwrap();
        assert_eq!(out.successful_repetitions, 3);
        state.process_batch(&gt.tensor.slice_range(20..30).unwrap()).unwrap();
        assert_eq!(state.model().factors[2].nrows(), 30);
        assert_eq!(state.dims(), gt.tensor.dims());
        let err = crate::metrics::relative_error(&gt.tensor, state.model()).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn zero_entries_are_filled_and_others_kept() {
        let gt = generate(&[10, 10, 20], 2, 1.0, 0.0, 15).unwrap();
        let initial = gt.tensor.slice_range(0..10).unwrap();
        let mut state = init_state(&initial, small_config(2)).unwrap();
        // Knock out a few stored entries; only those may change.
        let mut model = state.model().clone();
        model.factors[0][(3, 1)] = 0.0;
        model.factors[1][(7, 0)] = 0.0;
        let tensor = state.tensor().clone();
        state = IncrementalState::from_model(model.clone(), tensor, small_config(2)).unwrap();
        state.process_batch(&gt.tensor.slice_range(10..20).unwrap()).unwrap();
        for m in 0..3 {
            let before = &model.factors[m];
            let after = &state.model().factors[m];
            for r in 0..2 {
                for i in 0..before.nrows() {
                    if before[(i, r)] != 0.0 {
                        assert_eq!(after[(i, r)], before[(i, r)]);
                    }
                }
            }
        }
    }

    #[test]
    fn all_repetitions_failing_rejects_batch() {
        // A batch with no entries at all makes every sample degenerate.
        let gt = generate(&[6, 6, 8], 2, 1.0, 0.0, 16).unwrap();
        let mut cfg = small_config(2);
        cfg.quality_control = true;
        let mut state = init_state(&gt.tensor, cfg).unwrap();
        let before = state.model().clone();
        let zero = SparseTensor::zeros(vec![6, 6, 3]);
        assert!(matches!(state.process_batch(&zero), Err(Error::BatchRejected(_))));
        assert_eq!(state.model(), &before);
        state.skip_batch(&zero).unwrap();
        assert_eq!(state.model().factors[2].nrows(), 11);
    }

    #[test]
    fn deterministic() {
        let gt = generate(&[12, 12, 24], 2, 0.7, 0.1, 17).unwrap();
        let run = || {
            let mut s = init_state(&gt.tensor.slice_range(0..8).unwrap(), small_config(2)).unwrap();
            s.process_batch(&gt.tensor.slice_range(8..16).unwrap()).unwrap();
            s.process_batch(&gt.tensor.slice_range(16..24).unwrap()).unwrap();
            s.model().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn running_weights_track_the_tensor() {
        let gt = generate(&[10, 9, 30], 2, 0.6, 0.1, 19).unwrap();
        let mut s = init_state(&gt.tensor.slice_range(0..10).unwrap(), small_config(2)).unwrap();
        s.process_batch(&gt.tensor.slice_range(10..20).unwrap()).unwrap();
        s.skip_batch(&gt.tensor.slice_range(20..30).unwrap()).unwrap();
        assert_eq!(s.tensor(), &gt.tensor);
        for (running, full) in s.weights.iter().zip(mode_weights(&gt.tensor)) {
            assert_eq!(running.len(), full.len());
            for (r, f) in running.iter().zip(full) {
                assert!((r - f).abs() <= 1e-12 * f.max(1.0));
            }
        }
    }

    #[test]
    fn from_model_checks_rank() {
        let gt = generate(&[5, 5, 5], 2, 1.0, 0.0, 18).unwrap();
        let m = KruskalModel::new(gt.model.factors.clone(), DVector::from_element(2, 1.0)).unwrap();
        assert!(IncrementalState::from_model(m, gt.tensor.clone(), small_config(3)).is_err());
    }
}
