//! Bayesian multilevel compositional data analysis.
//!
//! Geometry (`aitchison`, `ilr`, `multilevel`) is generic over the float type
//! through [`Scalar`]; fitting, diagnostics, substitution and simulation work
//! in `f64`.

pub mod aitchison;
pub mod diagnostics;
pub mod error;
pub mod ilr;
pub mod model;
pub mod multilevel;
pub mod scalar;
pub mod sim;
pub mod substitution;

pub use aitchison::{closure, geometric_mean_composition, Composition};
pub use error::{CodaError, ErrorCategory, Result};
pub use ilr::{build_basis, default_sbp, validate_sbp, IlrCoords, OrthonormalBasis, Sbp};
pub use multilevel::{
    between_within_split, coordinates_of, ingest, DecomposedCoords, IngestReport, LongTable,
    Observation, Schema,
};
pub use scalar::Scalar;

pub type Composition64 = Composition<f64>;
pub type Composition32 = Composition<f32>;
pub type IlrCoords64 = IlrCoords<f64>;
pub type IlrCoords32 = IlrCoords<f32>;
pub type Basis64 = OrthonormalBasis<f64>;
pub type Basis32 = OrthonormalBasis<f32>;
pub type LongTable64 = LongTable<f64>;
pub type LongTable32 = LongTable<f32>;
pub type DecomposedCoords64 = DecomposedCoords<f64>;
pub type DecomposedCoords32 = DecomposedCoords<f32>;
