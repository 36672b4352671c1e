//! Numerical weak KAM and Aubry–Mather theory on the tori T¹ and T².
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure function
//! of immutable inputs; file formats, configuration and the command-line driver
//! live in the `weakkam` companion crate.
//!
//! Module map:
//!
//! * [`grid`], [`model`], [`geometry`]: base/fiber discretizations, Tonelli
//!   Lagrangians and their Hamiltonians, flows and Lagrangian sections.
//! * [`action`]: discrete action potentials and the Mañé critical value.
//! * [`weakkam`]: Lax–Oleinik operators, weak KAM pairs, the inf-max formula.
//! * [`aubry`]: Peierls barrier, Aubry and Mather sets, foliation cycles,
//!   strong chain recurrence.
//! * [`selector`]: generating functions quadratic at infinity and graph selectors.
//! * [`shape`]: Mather's α-function and shapes of sublevel domains.
//! * [`verify`]: the example registry and claim-level verification reports.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod action;
pub mod aubry;
mod error;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod lp;
pub mod math;
pub mod model;
pub mod selector;
pub mod shape;
pub mod verify;
pub mod weakkam;

pub use error::{Error, Result};
pub use grid::{FiberGrid, ScalarField, TorusGrid};
pub use math::Vec2;
