//! Computational toolkit for the quantum variance of dihedral Maass forms
//! over real quadratic fields Q(sqrt D) with D = p1 p2, p1 = p2 = 3 mod 4.

pub mod arith;
pub mod chars;
pub mod error;
pub mod experiments;
pub mod halfint;
pub mod hecke;
pub mod ideals;
pub mod lattice;
pub mod lfun;
pub mod quadfield;
pub mod report;
pub mod weight;

pub use error::{Error, Result};
