//! Ricci-DeTurck h-flow of rough metrics on flat periodic tori.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`], [`tensor`], [`metric`], [`geometry`]: periodic grids and
//!   discrete tensor calculus measured against a background metric `h`.
//! * [`fields`]: rough initial data, singular-set masks, mollification.
//! * [`flow`]: the DeTurck vector field, the flow right-hand side, RK2 time
//!   stepping and the gauge pullback to a Ricci flow.
//! * [`analysis`]: Morrey-functional, decay-exponent, codimension and
//!   convergence meters.
//! * [`curvature`]: distributional scalar curvature and the removability
//!   experiment.
//! * [`heat`]: heat and conjugate-heat equations along a flow.
//!
//! Per-cell work runs on rayon when the `parallel` feature is enabled (the
//! default). All reductions are sequential, so results are bit-identical
//! whichever way the crate is built.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod curvature;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod heat;
pub mod interp;
pub mod linalg;
pub mod metric;
pub mod par;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::Grid;
pub use metric::{BackgroundGeometry, MetricField};
pub use tensor::{ScalarField, Slot, TensorField, Valence};
