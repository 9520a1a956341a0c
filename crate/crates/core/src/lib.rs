//! Adiabatic timescale bounds for discretized, possibly unbounded,
//! time-dependent Hamiltonians, with the propagators needed to check them.
//!
//! The crate is organised bottom-up:
//!
//! * [`operator_core`]: spectral splits, the twiddle map, τ, block norms,
//!   c_k certificates.
//! * [`circuits`]: flux-qubit circuit matrices and their parameter
//!   derivatives.
//! * [`schedule`]: the CSFQ anneal controls b(s), f(s).
//! * [`paths`]: [`OperatorPath`] implementations tying the above together.
//! * [`bounds`]: the three adiabatic timescales and closed-form asymptotics.
//! * [`evolution`]: exact, intertwined and effective propagators plus
//!   diagnostics.
//! * [`oracle`]: brute-force leakage of a dilated harmonic well.

pub mod bounds;
pub mod circuits;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod operator_core;
pub mod oracle;
pub mod paths;
pub mod schedule;

pub use bounds::{BoundReport, OperatorPath};
pub use error::{Error, Result};
pub use linalg::{CMat, C64};
pub use operator_core::{BasisTag, CkList, HermitianOperator, SpectralSplit};
