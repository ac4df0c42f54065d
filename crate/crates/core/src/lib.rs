//! Simulator and verification harness for the two-species oil and water
//! abelian network on `Z` and `Z^d`.

pub mod lattice;
pub mod stacks;
pub mod engine;
pub mod observables;
pub mod scaling;
pub mod stats;
pub mod par;
pub mod experiments;
pub mod verify;
pub mod io;
pub mod render;
