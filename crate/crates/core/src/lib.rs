//! Volume Nambu–Poisson mechanics.
//!
//! An n-dimensional volume structure `Ω = ρ dx¹∧…∧dxⁿ` induces the n-ary
//! bracket `{f₁,…,fₙ} = det(∂fᵢ/∂xʲ)/ρ`. A tuple of n−1 Hamiltonians
//! generates a vector field whose flow conserves every generator. This
//! crate evaluates the bracket and its algebraic identities, integrates
//! flows, verifies the Hamilton–Jacobi condition for graph sections, and
//! ships the third-order Kummer–Schwarz and n-coupled Riccati systems as
//! built-in presets.

pub mod cli;
pub mod diff;
pub mod dynamics;
pub mod expr;
pub mod hj;
pub mod nambu;
pub mod par;
pub mod sample;
pub mod systems;

pub use expr::{Chart, CoefficientTable, EvalError, ExprNode, ParseError, ScalarField};
pub use nambu::{DomainPredicate, HamiltonianTuple, VectorField, VolumeNPStructure};
