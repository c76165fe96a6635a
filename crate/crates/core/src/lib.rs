//! Invariant tori of near-integrable Hamiltonian systems by a KAM scheme
//! built on rational approximations of the frequency vector.
//!
//! Instead of dividing Fourier coefficients by the small quantities `k·ω₀`,
//! each step averages the perturbation along `n` periodic directions whose
//! numerators form a basis of `Zⁿ`; every division is then by some
//! `k·v_j` with `|k·v_j| ≥ 1/q_j`.

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diophantine;
pub mod error;
pub mod hamiltonian;
pub mod inversion;
pub mod iterate;
pub mod kam_step;
pub mod parampoly;
pub mod reduction;
pub mod series;
pub mod transform;
pub mod verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use diophantine::{
    ArithmeticProfile, BasisBudget, FrequencyVector, PsiBudget, PsiValue, Q0Choice, RationalBasis,
    RationalVector, TailEstimate,
};
pub use error::{ErrorClass, KamError, Result};
pub use series::{Caps, Direction, Discard, DomainParams, FourierTaylor, Monomial};
pub use hamiltonian::{Carried, ParamHamiltonian};
pub use inversion::{invert_frequency_map, Inversion, InversionConfig};
pub use iterate::{
    build_schedule, iterate, DriverConfig, ErrorBounds, IterationRecord, Schedule, ScheduleConfig, ScheduleEntry,
    TorusResult,
};
pub use kam_step::{kam_step, ConditionPolicy, Constants, StepConfig, StepOutcome, StepReport, StepScale};
pub use reduction::{
    place_torus, reduce_to_param_form, IntegrableSpec, PlacedTorus, Polynomial, ReductionConfig, ReductionRecipe,
    TrigPolynomial, TrigTerm,
};
pub use transform::{KamTransformation, TransportConfig};
pub use verify::{verify_invariance, VerificationConfig, VerificationReport};
