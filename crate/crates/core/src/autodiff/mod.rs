//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value lives on a [`Tape`] as a 2-D matrix (scalars are 1×1, vectors
//! are 1×n rows). Primitives are recorded in evaluation order and
//! [`Tape::backward`] walks them once in reverse, accumulating gradients
//! additively so a parameter used at many steps collects every
//! contribution.

mod adam;
mod params;
mod tape;

pub use adam::Adam;
pub use params::{ParamStore, METADATA_KEY};
pub use tape::{concat_cols, Gradients, Matrix, Tape, Var};
