//! Dirac particle creation and annihilation at the naked singularity of
//! super-critical Reissner–Nordström space-time, modelled with an
//! interior-boundary condition on a mini-Fock space ℂ ⊕ 𝓗⁽¹⁾.
//!
//! Modules, bottom-up:
//! - [`geometry`]: metric factor, tortoise coordinate and its inverse
//! - [`spinors`]: Dirac matrices, spherical harmonics and the spinor basis Φ±
//! - [`radial`]: the discretized IBC Hamiltonian of one angular sector and its time stepping
//! - [`bohm`]: currents, Bohmian velocity field, trajectories and their asymptotics
//! - [`bellprocess`]: the Bohm–Bell jump process and equivariance statistics
//! - [`verify`]: suites of invariant checks used by the command-line driver

pub mod bellprocess;
pub mod bohm;
pub mod geometry;
pub mod numerics;
pub mod radial;
pub mod spinors;
pub mod verify;
