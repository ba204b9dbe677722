//! Finite-volume solver, proper orthogonal decomposition and stabilised
//! POD-Galerkin reduced-order models for two-dimensional incompressible
//! Navier-Stokes flow.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod error;
pub mod field;
pub mod hf;
pub mod mesh;
pub mod analysis;
pub mod assemble;
pub mod ops;
pub mod pod;
pub mod rom;
pub mod snapshot;
pub mod sparse;
pub mod supremizer;
pub mod vtk;

pub use error::{Error, Result};
pub use field::{BcKind, BoundaryCondition, BoundaryConditions, Field, Rank};
pub use mesh::Mesh;
pub use ops::{Form, Scheme};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/mesh.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/full_order.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/bases.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/reduced_models.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub mod chapter5 {}
}
