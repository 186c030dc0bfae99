//! Error-bounded lossy compression of multidimensional floating-point
//! fields with progressive, plan-driven retrieval.
//!
//! A field is decorrelated by hierarchical interpolation, quantized against
//! an absolute error bound and stored as per-level negabinary bitplanes.
//! Retrieval loads the plane prefixes chosen by [`planner`] for either an
//! error target or a byte budget, and can later be refined by loading only
//! the missing planes.

pub mod archive;
pub mod bpcodec;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod predictor;
pub mod quantizer;
pub mod scalar;
pub mod synth;

pub use archive::{read_header, ArchiveHeader, ArchiveIndex, RetrievalPlan};
pub use error::{Error, Result};
pub use grid::{Field, FieldGrid, LevelDecomposition};
pub use metrics::{quality, Quality};
pub use pipeline::{
    compress, compress_field, decompress, reconstruct, refine, refine_additive, CompressOptions,
    Retrieval, RetrievalSession,
};
pub use planner::ErrorModel;
pub use predictor::InterpKind;
pub use scalar::{Scalar, ScalarKind};
