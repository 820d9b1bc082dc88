//! Nonlinear differential-algebraic models of multi-machine power networks,
//! decentralized load/renewable-following gain synthesis, and the scenarios
//! used to compare it against AGC and LQR.
// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod daesolve;
pub mod equilibrium;
pub mod error;
pub mod ndae;
pub mod netcase;
pub mod powerflow;
pub mod scenario;
pub mod sdp;
pub mod synth;

pub use daesolve::{Controller, IntegratorOptions, Signal, Trajectory};
pub use equilibrium::OperatingPoint;
pub use error::{Error, Result};
pub use ndae::{ChannelScaling, JacobianBlocks, NdaeModel, Residual, StateIndexing};
pub use netcase::{AdmittanceMatrix, Branch, Bus, BusKind, CaseId, GeneratorParams, NetworkCase, RenewableRule, OMEGA0};
pub use powerflow::PfSolution;
pub use synth::{BoundingMatrices, CertificateResult, SynthesisResult};
