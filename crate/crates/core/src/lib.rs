//! Executable operator models of the irreducible unitary representations of
//! SL(2), SL(3) and SL(4) over the reals and complexes, with numerical checks of
//! their structural properties.

pub mod charmod;
pub mod error;
pub mod flagdecomp;
pub mod harness;
pub mod matcore;
pub mod measures;
pub mod operators;
pub mod report;
pub mod repspaces;

pub use error::{Error, Result};
