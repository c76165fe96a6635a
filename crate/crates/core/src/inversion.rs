//! Inversion of the frequency map `f(ω) = ω + ν(ω)` near the identity.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::parampoly::{GradedBasis, ParamPoly};
use crate::series::FourierTaylor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    /// Internal polynomial degree; `None` picks one from the dimension.
    pub degree: Option<u32>,
    /// Stop when successive iterates differ by less than `tol · h/4` on `O_{h/4}`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            degree: None,
            tol: 1e-16,
            max_iter: 400,
        }
    }
}

impl InversionConfig {
    pub fn degree_for(&self, n: usize) -> u32 {
        self.degree.unwrap_or(match n {
            1 | 2 => 28,
            3 => 16,
            _ => 10,
        })
    }
}

/// Measured quantities of one inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionCertificate {
    /// `δ = max_i |ν_i|_h`.
    pub delta: f64,
    pub h: f64,
    pub iterations: usize,
    /// `max_i |φ_i − w_i|_{h/4}`.
    pub phi_minus_id: f64,
    /// `h/4 · max_i Σ_j |∂_j φ_i − δ_ij|_{h/4}`.
    pub dphi_minus_id_scaled: f64,
    /// `max_i |φ_i + ν_i∘φ − w_i|_{h/4}` in truncated arithmetic.
    pub residual: f64,
    pub degree: u32,
}

#[derive(Debug, Clone)]
pub struct Inversion {
    /// `φ(ω₀ + w) − ω₀`, one polynomial per component.
    pub phi: Vec<ParamPoly>,
    /// `ν∘φ`, reused for the inversion residual.
    pub nu_of_phi: Vec<ParamPoly>,
    pub certificate: InversionCertificate,
}

/// Inverts `w ↦ w + ν(w)` on `O_{h/4}` by the contraction `φ ← w − ν∘φ`.
///
/// Requires `|ν|_h ≤ h/4`; then `φ` maps `O_{h/4}` into `O_h` and
/// `|φ − Id|_{h/4} ≤ |ν|_h`.
pub fn invert_frequency_map(nu: &[FourierTaylor], h: f64, cfg: &InversionConfig) -> Result<Inversion> {
    let n = nu.len();
    if n == 0 {
        return Err(KamError::InvalidInput("empty frequency shift".into()));
    }
    if !(h > 0.0) {
        return Err(KamError::Domain(format!("parameter radius h = {h} must be positive")));
    }
    let basis = GradedBasis::new(n, cfg.degree_for(n));
    let nu: Vec<ParamPoly> = nu
        .iter()
        .map(|f| ParamPoly::from_series(f, &basis))
        .collect::<Result<_>>()?;
    let delta = nu.iter().map(|p| p.norm(h)).fold(0.0, f64::max);
    if delta > h / 4.0 {
        return Err(KamError::condition(
            "frequency shift |ν|_h ≤ h/4 (inverse-map precondition)",
            delta,
            h / 4.0,
        ));
    }
    let hq = h / 4.0;
    let ids: Vec<ParamPoly> = (0..n).map(|i| ParamPoly::var(&basis, i)).collect();
    let mut phi = ids.clone();
    let mut nu_phi: Vec<ParamPoly> = nu.iter().map(|p| p.compose(&phi)).collect();
    let mut iterations = 0;
    let mut last_diff = f64::INFINITY;
    let mut rising = 0;
    loop {
        let next: Vec<ParamPoly> = ids.iter().zip(&nu_phi).map(|(w, v)| w.sub(v)).collect();
        let diff = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| a.sub(b).norm(hq))
            .fold(0.0, f64::max);
        phi = next;
        nu_phi = nu.iter().map(|p| p.compose(&phi)).collect();
        iterations += 1;
        if diff <= cfg.tol * hq {
            break;
        }
        if diff >= last_diff {
            rising += 1;
            if rising >= 3 {
                return Err(KamError::Inversion(format!(
                    "fixed-point iteration stopped contracting after {iterations} steps (difference {diff:e})"
                )));
            }
        } else {
            rising = 0;
        }
        last_diff = diff;
        if iterations >= cfg.max_iter {
            return Err(KamError::Inversion(format!(
                "no convergence within {} iterations (difference {diff:e})",
                cfg.max_iter
            )));
        }
    }
    let phi_minus_id = phi
        .iter()
        .zip(&ids)
        .map(|(p, w)| p.sub(w).norm(hq))
        .fold(0.0, f64::max);
    let dphi_minus_id = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = phi[i].derivative(j);
                    let d = if i == j {
                        d.sub(&ParamPoly::constant(&basis, 1.0))
                    } else {
                        d
                    };
                    d.norm(hq)
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let residual = (0..n)
        .map(|i| phi[i].add(&nu_phi[i]).sub(&ids[i]).norm(hq))
        .fold(0.0, f64::max);
    if phi_minus_id > delta * (1.0 + 1e-9) + 1e-300 {
        return Err(KamError::condition("inverse-map bound |φ − Id|_{h/4} ≤ δ", phi_minus_id, delta));
    }
    Ok(Inversion {
        phi,
        nu_of_phi: nu_phi,
        certificate: InversionCertificate {
            delta,
            h,
            iterations,
            phi_minus_id,
            dphi_minus_id_scaled: hq * dphi_minus_id,
            residual,
            degree: basis.degree(),
        },
    })
}
