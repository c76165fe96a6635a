use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// A quantitative hypothesis of the scheme is not met.
    Condition,
    /// A numerical procedure failed (no convergence, truncation budget, ...).
    Numerical,
    /// Malformed input.
    Input,
}

#[derive(Debug, Error)]
pub enum KamError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("frequency is resonant: k = {k:?} gives k·ω = {value:e}")]
    Resonant { k: Vec<i64>, value: f64 },

    #[error("x = {x} is below Δ(1) = {delta_one}; Δ* is undefined there")]
    DeltaDomain { x: f64, delta_one: f64 },

    #[error("arithmetic table too small: need Δ up to {needed:e}, table reaches Δ(Q={q_max}) = {available:e}")]
    TableTooSmall { needed: f64, available: f64, q_max: u64 },

    #[error("Q0 condition unsatisfiable within table: best tail {best_tail:e} at Q0 = {best_q0}, need ≤ {threshold:e}")]
    Q0Unsatisfiable { best_tail: f64, best_q0: u64, threshold: f64 },

    #[error("no unimodular basis within budget: best |det| = {best_det}")]
    NoUnimodularBasis { best_det: i64 },

    #[error("averaged mode k = {k:?} has nonzero coefficient {magnitude:e}; right-hand side must have zero average along v")]
    AveragedModePresent { k: Vec<i32>, magnitude: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("condition `{name}` failed: measured {measured:e} > threshold {threshold:e}")]
    Condition { name: String, measured: f64, threshold: f64 },

    #[error("frequency-map inversion: {0}")]
    Inversion(String),

    #[error("truncation budget exceeded in {context}: discarded {discard:e} > budget {budget:e}")]
    TruncationBudget { context: String, discard: f64, budget: f64 },

    #[error("flow domain: {0}")]
    FlowDomain(String),

    #[error("composition domain: {0}")]
    CompositionDomain(String),

    #[error("reality violated: imaginary part {0:e} exceeds tolerance")]
    Reality(f64),

    #[error("iterate diverged at step {step}: remainder {current:e} did not improve on {previous:e}")]
    Divergence { step: usize, current: f64, previous: f64 },

    #[error("non-degeneracy: {0}")]
    Nondegeneracy(String),

    #[error("epsilon too large: ε = {eps:e} exceeds smallness threshold {threshold:e}")]
    EpsilonTooLarge { eps: f64, threshold: f64 },

    #[error("numerical identity violated: {0}")]
    Numerical(String),

    #[error("torus placement: {0}")]
    Placement(String),

    #[error("at iteration {step}: {source}")]
    AtIteration {
        step: usize,
        #[source]
        source: Box<KamError>,
    },
}

impl KamError {
    pub fn class(&self) -> ErrorClass {
        use KamError::*;
        match self {
            InvalidInput(_) | DimensionMismatch { .. } => ErrorClass::Input,
            Resonant { .. }
            | Q0Unsatisfiable { .. }
            | Condition { .. }
            | Nondegeneracy(_)
            | EpsilonTooLarge { .. }
            | AveragedModePresent { .. }
            | DeltaDomain { .. }
            | Domain(_)
            | FlowDomain(_)
            | CompositionDomain(_) => ErrorClass::Condition,
            Budget(_)
            | TableTooSmall { .. }
            | NoUnimodularBasis { .. }
            | Inversion(_)
            | TruncationBudget { .. }
            | Reality(_)
            | Divergence { .. }
            | Numerical(_)
            | Placement(_) => ErrorClass::Numerical,
            AtIteration { source, .. } => source.class(),
        }
    }

    pub(crate) fn at_iteration(self, step: usize) -> Self {
        KamError::AtIteration {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn condition(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        KamError::Condition {
            name: name.into(),
            measured,
            threshold,
        }
    }
}

pub type Result<T, E = KamError> = std::result::Result<T, E>;
