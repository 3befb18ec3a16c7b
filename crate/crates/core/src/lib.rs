//! Two-weight lab: dyadic grids, weighted Haar systems, fractional kernels and
//! the stopping-time machinery behind the two-weight `T1` theorem, evaluated
//! exactly on finite atomic measures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod corona;
pub mod dyadic;
pub mod error;
pub mod haar;
pub mod kernel;
pub mod lab;
pub mod measure;
pub mod operator;
pub mod stopping_form;
pub mod tolerance;

pub use dyadic::{Cube, GridSpec};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use lab::{Report, RunConfig, Suite};
pub use measure::{Atom, AtomicMeasure, HalfSpaceAtom, HalfSpaceMeasure, Located, PoissonKind, WeightPair};
pub use stopping_form::PairCollection;
