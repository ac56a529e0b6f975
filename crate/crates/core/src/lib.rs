//! Streaming robust Koopman operator learning.
//!
//! Snapshot pairs `(x, y)` are lifted through a fixed dictionary `Ψ` and the
//! operator `K = (G + λI)⁻¹A` is maintained under rank-one updates, so each
//! new sample costs `O(K²)` rather than a fresh `O(K³)` solve.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod container;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod ingest;
pub mod lifting;
pub mod linalg;
pub mod scalar;
pub mod spectral;
pub mod stream;

pub use error::{Error, Result};
pub use lifting::{build_dictionary, Dictionary, DictionarySpec, SnapshotPair};
pub use scalar::Scalar;
pub use spectral::{spectrum, Spectrum};
pub use stream::{run_stream, KoopmanModel, StreamConfig, StreamSummary};

pub type Dictionary64 = Dictionary<f64>;
pub type Dictionary32 = Dictionary<f32>;
pub type SnapshotPair64 = SnapshotPair<f64>;
pub type SnapshotPair32 = SnapshotPair<f32>;
pub type KoopmanModel64 = KoopmanModel<f64>;
pub type KoopmanModel32 = KoopmanModel<f32>;
pub type Spectrum64 = Spectrum<f64>;
pub type Spectrum32 = Spectrum<f32>;
pub type GramPair64 = edmd::GramPair<f64>;
pub type GramPair32 = edmd::GramPair<f32>;
