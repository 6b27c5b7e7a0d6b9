//! Synthetic tensors with a known generating model, and batch streams that
//! replay a tensor slice range by slice range.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{FactorMatrix, SparseTensor};

#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Normalized generating model.
    pub model: KruskalModel,
    pub tensor: SparseTensor,
    pub density: f64,
}

/// Draws i.i.d. uniform `[0, 1)` factors, reconstructs, adds Gaussian noise and
/// keeps a uniformly random set of `round(density · numel)` coordinates.
///
/// `noise_level` is relative: the noise standard deviation is `noise_level`
/// times the root-mean-square entry of the noiseless reconstruction.
pub fn generate(dims: &[usize], rank: usize, density: f64, noise_level: f64, seed: u64) -> Result<GroundTruth> {
    if !(density > 0.0) {
        return Err(Error::DegenerateInput(format!("density {density} keeps no entries")));
    }
    if density > 1.0 {
        return Err(Error::InvalidArgument(format!("density {density} exceeds 1")));
    }
    if rank == 0 || dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument("rank and mode sizes must be positive".into()));
    }
    if !(noise_level >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {noise_level} must be nonnegative")));
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidArgument("tensor too large".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<FactorMatrix> = dims
        .iter()
        .map(|&d| FactorMatrix::from_fn(d, rank, |_, _| rng.random::<f64>()))
        .collect();
    let model = KruskalModel::from_factors(factors)?;

    let linear: Vec<usize> = if density >= 1.0 {
        (0..numel).collect()
    } else {
        let keep = ((density * numel as f64).round() as usize).clamp(1, numel);
        let mut idx = rand::seq::index::sample(&mut rng, numel, keep).into_vec();
        idx.sort_unstable();
        idx
    };

    let noise = if noise_level > 0.0 {
        let rms = (model.norm_squared() / numel as f64).sqrt();
        Some(Normal::new(0.0, noise_level * rms).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };

    let n = dims.len();
    let mut coords = Vec::with_capacity(linear.len() * n);
    let mut values = Vec::with_capacity(linear.len());
    let mut coord = vec![0usize; n];
    for &lin in &linear {
        let mut rest = lin;
        for (c, &d) in coord.iter_mut().zip(dims) {
            *c = rest % d;
            rest /= d;
        }
        let mut v = model.value_at(&coord);
        if let Some(dist) = &noise {
            v += dist.sample(&mut rng);
        }
        coords.extend_from_slice(&coord);
        values.push(v);
    }
    let tensor = SparseTensor::new(dims.to_vec(), coords, values)?;
    let model = model.normalize()?;
    Ok(GroundTruth { model, tensor, density })
}

/// An initial tensor followed by batches of last-mode slices.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStream {
    pub initial: SparseTensor,
    pub batches: Vec<SparseTensor>,
}

impl BatchStream {
    /// Concatenates the initial tensor and all batches.
    pub fn reassemble(&self) -> Result<SparseTensor> {
        self.batches
            .iter()
            .try_fold(self.initial.clone(), |acc, b| acc.append_slices(b))
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Splits `x` along its last mode: the leading `⌈fraction · K⌉` slices form the
/// initial tensor, the rest is cut in order into batches of `batch_size`
/// (the last one may be smaller).
pub fn stream(x: &SparseTensor, initial_fraction: f64, batch_size: usize) -> Result<BatchStream> {
    if !(initial_fraction > 0.0 && initial_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "initial fraction {initial_fraction} must lie in (0, 1)"
        )));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let k = *x.dims().last().expect("tensor has a mode");
    // Guard against 0.1 * 1000 landing a hair above 100.
    let scaled = initial_fraction * k as f64;
    let initial_len = ((scaled - scaled * 1e-12).ceil() as usize).clamp(1, k);
    let initial = x.slice_range(0..initial_len)?;

    let mut batches = Vec::new();
    let mut start = initial_len;
    while start < k {
        let end = (start + batch_size).min(k);
        batches.push(x.slice_range(start..end)?);
        start = end;
    }
    if batches.is_empty() {
        warn!("stream of {k} slices has no batches after the initial {initial_len}");
    }
    Ok(BatchStream { initial, batches })
}
