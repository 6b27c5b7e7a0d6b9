//! Sparse tensors, CP decomposition and sampling-based incremental CP for
//! tensors that grow along their last mode.

pub mod als;
pub mod assignment;
pub mod corcondia;
pub mod error;
pub mod experiment;
pub mod incremental;
pub mod io;
pub mod kruskal;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use als::{cp_als, AlsConfig, AlsFit};
pub use corcondia::{corcondia, get_rank, scan_ranks, RankScan};
pub use error::{Error, Result};
pub use experiment::{run_stream_experiment, ExperimentConfig, ExperimentOutcome, ReportWriter};
pub use incremental::{init_state, BatchOutcome, IncrementalConfig, IncrementalState};
pub use kruskal::KruskalModel;
pub use metrics::{fms, relative_error, relative_fitness, BatchReport};
pub use synth::{generate, stream, BatchStream, GroundTruth};
pub use tensor::{khatri_rao, mttkrp, FactorMatrix, SparseTensor};
