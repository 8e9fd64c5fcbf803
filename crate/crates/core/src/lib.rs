//! Core of the `ktune` kernel auto-tuner.
//!
//! Everything here is `no_std` + `alloc`: constrained discrete parameter
//! spaces ([`space`]), the constraint language ([`expr`]), full, random,
//! simulated-annealing and particle-swarm search ([`search`]), tuning-job
//! orchestration with thread-size resolution, device limits and output
//! verification ([`tuner`]), the backend contract with a synthetic
//! performance model ([`backend`]), and the convolution and GEMM case-study
//! spaces with their CPU reference implementations ([`landscapes`]).
//!
//! IO-bound pieces (replay files, the external runner protocol, job files,
//! CSV reports) live in the `ktune` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod backend;
pub mod device;
pub mod expr;
pub mod landscapes;
pub mod rng;
pub mod search;
pub mod space;
pub mod tuner;

pub use backend::{Backend, BackendError, Buffer, EvaluationRequest, EvaluationResult, Status};
pub use device::DeviceModel;
pub use expr::{Expr, ExprError};
pub use search::{Fraction, SearchError, SearchOutcome, Strategy, TraceStep};
pub use space::{Configuration, Constraint, Parameter, SearchSpace, SpaceError};
pub use tuner::{KernelSpec, TunerError, TuningJob, TuningResult};
