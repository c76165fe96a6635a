//! Hamiltonians in parameter form `H(I, θ, ω) = e(ω) + ω·I + P(I, θ, ω)`.

use serde::{Deserialize, Serialize};

use crate::diophantine::FrequencyVector;
use crate::error::{KamError, Result};
use crate::series::{Caps, Discard, DomainParams, FourierTaylor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHamiltonian {
    pub omega0: FrequencyVector,
    /// `e(ω₀ + w)`, a function of `w` only.
    pub energy: FourierTaylor,
    pub perturbation: FourierTaylor,
    pub domain: DomainParams,
    /// The part of the remainder not stored in `perturbation`.
    #[serde(default)]
    pub discarded: Carried,
}

/// Remainder terms dropped from storage, still bounded on every later domain.
///
/// Dropped terms are composed with all later transformations. Those move
/// points by at most `inflation` (action, angle width, parameter), so the
/// composed terms are bounded by the profile evaluated on the current domain
/// widened by `inflation`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Carried {
    pub profile: Discard,
    /// Contributions known only as a number (series tails, pruned mass).
    pub scalar: f64,
    pub inflation: [f64; 3],
}

impl Carried {
    pub fn norm(&self, d: &DomainParams) -> f64 {
        let wide = DomainParams {
            r: d.r + self.inflation[0],
            s: d.s + self.inflation[1],
            h: d.h + self.inflation[2],
        };
        self.profile.norm(&wide) + self.scalar
    }

    pub fn is_empty(&self) -> bool {
        self.profile.is_empty() && self.scalar == 0.0
    }
}

impl ParamHamiltonian {
    pub fn new(
        omega0: FrequencyVector,
        energy: FourierTaylor,
        perturbation: FourierTaylor,
        domain: DomainParams,
    ) -> Result<Self> {
        let n = omega0.dim();
        for f in [&energy, &perturbation] {
            if f.dim() != n {
                return Err(KamError::DimensionMismatch {
                    expected: n,
                    got: f.dim(),
                });
            }
        }
        if energy.iter().any(|(m, _)| !m.is_mean() || m.alpha_deg() > 0) {
            return Err(KamError::InvalidInput("energy term must depend on ω only".into()));
        }
        domain.validate()?;
        Ok(Self {
            omega0,
            energy,
            perturbation,
            domain,
            discarded: Carried::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.omega0.dim()
    }

    pub fn caps(&self) -> Caps {
        self.perturbation.caps()
    }

    pub fn with_discarded(mut self, discarded: Carried) -> Self {
        self.discarded = discarded;
        self
    }

    /// Measured `|P|_{r,s,h}`, including the discarded part.
    pub fn perturbation_norm(&self) -> f64 {
        self.perturbation.norm(&self.domain) + self.discarded.norm(&self.domain)
    }

    /// `ω·I = ω₀·I + w·I`.
    pub fn frequency_term(omega0: &[f64], caps: Caps) -> FourierTaylor {
        let n = omega0.len();
        let mut f = FourierTaylor::zero(n, caps);
        for (i, &w) in omega0.iter().enumerate() {
            let ii = FourierTaylor::action(n, caps, i);
            let (wi, _) = FourierTaylor::param(n, caps, i).mul(&ii).expect("same dimension");
            f = f.axpy(w, &ii).and_then(|g| g.add(&wi)).expect("same dimension");
        }
        f
    }

    /// The full Hamiltonian as one function.
    pub fn total(&self) -> FourierTaylor {
        Self::frequency_term(self.omega0.as_slice(), self.caps())
            .add(&self.energy)
            .and_then(|f| f.add(&self.perturbation))
            .expect("same dimension")
    }
}
