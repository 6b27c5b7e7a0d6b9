//! Streaming experiments: the incremental arm against recomputing CP on the
//! whole tensor after every batch.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};

use crate::als::cp_als;
use crate::error::{Error, Result};
use crate::incremental::{IncrementalConfig, IncrementalState};
use crate::kruskal::KruskalModel;
use crate::metrics::{fms, relative_error, relative_fitness, BatchReport};
use crate::synth::stream;
use crate::tensor::SparseTensor;

pub const INCREMENTAL_ARM: &str = "incremental";
pub const RECOMPUTE_ARM: &str = "recompute";

/// Column order of the report CSV.
pub const CSV_COLUMNS: [&str; 6] = ["batch_index", "arm", "seconds", "relative_error", "relative_fitness", "fms"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub incremental: IncrementalConfig,
    pub batch_size: usize,
    pub initial_fraction: f64,
    /// Also refit the whole tensor after every batch.
    pub baseline: bool,
}

/// Final models of a streaming experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<BatchReport>,
    pub incremental: KruskalModel,
    pub recompute: Option<KruskalModel>,
    pub rejected_batches: Vec<usize>,
}

/// Streams `x` and collects one report per arm per batch.
pub fn run_stream_experiment(
    x: &SparseTensor,
    cfg: &ExperimentConfig,
    truth: Option<&KruskalModel>,
) -> Result<ExperimentOutcome> {
    run_stream_experiment_with(x, cfg, truth, |_| Ok(()))
}

/// As [`run_stream_experiment`], handing every report to `sink` as soon as it
/// is available.
pub fn run_stream_experiment_with<F>(
    x: &SparseTensor,
    cfg: &ExperimentConfig,
    truth: Option<&KruskalModel>,
    mut sink: F,
) -> Result<ExperimentOutcome>
where
    F: FnMut(&BatchReport) -> Result<()>,
{
    if let Some(t) = truth {
        if t.dims() != x.dims() {
            return Err(Error::ShapeMismatch(format!(
                "ground truth dims {:?} vs tensor dims {:?}",
                t.dims(),
                x.dims()
            )));
        }
        if t.rank() != cfg.incremental.als.rank {
            warn!("ground truth rank {} differs from rank {}; FMS is skipped", t.rank(), cfg.incremental.als.rank);
        }
    }
    let parts = stream(x, cfg.initial_fraction, cfg.batch_size)?;
    let mut state = IncrementalState::new(&parts.initial, cfg.incremental.clone())?;
    let als = &cfg.incremental.als;
    let last = x.ndims() - 1;

    let mut reports = Vec::new();
    let mut rejected = Vec::new();
    let mut recompute = None;
    for (batch_index, batch) in parts.batches.iter().enumerate() {
        let start = Instant::now();
        match state.process_batch(batch) {
            Ok(_) => {}
            Err(Error::BatchRejected(reason)) => {
                warn!("batch {batch_index} rejected ({reason}); appended without update");
                state.skip_batch(batch)?;
                rejected.push(batch_index);
            }
            Err(e) => return Err(e),
        }
        let seconds = start.elapsed().as_secs_f64();
        let current = state.tensor();
        let k = current.dims()[last];
        let truth_now = truth.filter(|t| t.rank() == als.rank).map(|t| leading_slices(t, k));

        let baseline = if cfg.baseline {
            let start = Instant::now();
            let model = cp_als(current, als)?;
            Some((model, start.elapsed().as_secs_f64()))
        } else {
            None
        };

        let inc_model = state.model();
        let fitness = match &baseline {
            Some((b, _)) => match relative_fitness(current, inc_model, b) {
                Ok(f) => Some(f),
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        let mut rows = vec![BatchReport {
            batch_index,
            arm: INCREMENTAL_ARM.to_string(),
            wall_clock_seconds: seconds,
            relative_error: relative_error(current, inc_model)?,
            relative_fitness: fitness,
            fms: truth_now.as_ref().map(|t| fms(inc_model, t)).transpose()?,
        }];
        if let Some((model, secs)) = baseline {
            rows.push(BatchReport {
                batch_index,
                arm: RECOMPUTE_ARM.to_string(),
                wall_clock_seconds: secs,
                relative_error: relative_error(current, &model)?,
                relative_fitness: None,
                fms: truth_now.as_ref().map(|t| fms(&model, t)).transpose()?,
            });
            recompute = Some(model);
        }
        for row in rows {
            info!(
                "batch {} {}: {:.3}s, relative error {:.4}",
                row.batch_index, row.arm, row.wall_clock_seconds, row.relative_error
            );
            sink(&row)?;
            reports.push(row);
        }
    }

    Ok(ExperimentOutcome {
        reports,
        incremental: state.model().clone(),
        recompute,
        rejected_batches: rejected,
    })
}

/// `m` restricted to the first `k` rows of its last factor.
fn leading_slices(m: &KruskalModel, k: usize) -> KruskalModel {
    let mut out = m.clone();
    let last = out.factors.len() - 1;
    out.factors[last] = out.factors[last].rows(0, k).into_owned();
    out
}

/// CSV writer for [`BatchReport`] rows with the fixed header.
pub struct ReportWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl ReportWriter<std::fs::File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(std::fs::File::create(path)?))
    }
}

impl<W: Write> ReportWriter<W> {
    pub fn new(out: W) -> Self {
        Self { inner: csv::WriterBuilder::new().has_headers(true).from_writer(out) }
    }

    pub fn append(&mut self, report: &BatchReport) -> Result<()> {
        self.inner.serialize(report)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Serializes reports to CSV text.
pub fn reports_to_csv(reports: &[BatchReport]) -> Result<String> {
    let mut w = ReportWriter::new(Vec::new());
    for r in reports {
        w.append(r)?;
    }
    let bytes = w.into_inner()?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}
