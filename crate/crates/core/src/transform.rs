//! Near-identity symplectic transformations `F(I, θ, ω) = (Φ(I, θ, ω), φ(ω))`.
//!
//! `Φ = (U, V)` is stored as the action component `U`, affine in `I`, and the
//! angle displacement `ṽ = V − θ`, independent of `I`. The parameter map is
//! stored as `φ̂(w) = φ(ω₀ + w) − ω₀`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::series::{lie_series_with_first, Caps, Discard, DomainParams, FourierTaylor, Monomial, MAX_DIM};

const TWO_PI: f64 = 2.0 * PI;

/// Norms of `F − Id` actually achieved on the stated domain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformCertificates {
    pub domain: Option<DomainParams>,
    /// Angle weight in `W = Diag(r⁻¹ Id, σ⁻¹ Id)`.
    pub sigma: f64,
    /// `|W(Φ − Id)|`.
    pub w_phi_minus_id: f64,
    /// `|W(DΦ − Id)W⁻¹|` (row-sum operator norm).
    pub w_dphi_minus_id: f64,
    /// `|φ − Id|_h`.
    pub phi_minus_id: f64,
    /// `h |Dφ − Id|_h`.
    pub dphi_minus_id_scaled: f64,
    /// `max |DΦᵀ J DΦ − J|` at sampled real points.
    pub symplectic_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KamTransformation {
    pub omega0: Vec<f64>,
    /// `U_i(I, θ, w)`.
    pub action: Vec<FourierTaylor>,
    /// `ṽ_i(θ, w) = V_i − θ_i`.
    pub angle: Vec<FourierTaylor>,
    /// `φ̂_i(w)`.
    pub param: Vec<FourierTaylor>,
    pub certificates: TransformCertificates,
}

/// Settings for transporting coordinate functions along time-one flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Lie series stop once a term has norm below this on the target domain.
    pub tol: f64,
    pub max_order: usize,
    /// Pruning budget per coordinate function, on the target domain.
    pub prune: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            tol: 1e-20,
            max_order: 40,
            prune: 1e-17,
        }
    }
}

/// Errors committed while transporting coordinates (norms on the target domain).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportDiscard {
    pub truncation: f64,
    pub series_tail: f64,
    pub pruned: f64,
}

impl TransportDiscard {
    pub fn total(&self) -> f64 {
        self.truncation + self.series_tail + self.pruned
    }
}

impl KamTransformation {
    pub fn identity(omega0: &[f64], caps: Caps) -> Self {
        let n = omega0.len();
        Self {
            omega0: omega0.to_vec(),
            action: (0..n).map(|i| FourierTaylor::action(n, caps, i)).collect(),
            angle: (0..n).map(|_| FourierTaylor::zero(n, caps)).collect(),
            param: (0..n).map(|i| FourierTaylor::param(n, caps, i)).collect(),
            certificates: TransformCertificates::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.omega0.len()
    }

    /// Checks that `U` is affine in `I`, `ṽ` independent of `I` and `φ̂` a function of `w`.
    pub fn check_structure(&self) -> Result<()> {
        for u in &self.action {
            if u.max_degrees().1 > 1 {
                return Err(KamError::InvalidInput("action map is not affine in I".into()));
            }
        }
        for v in &self.angle {
            if v.max_degrees().1 > 0 {
                return Err(KamError::InvalidInput("angle map depends on I".into()));
            }
        }
        for p in &self.param {
            if p.iter().any(|(m, _)| !m.is_mean() || m.alpha_deg() > 0) {
                return Err(KamError::InvalidInput("parameter map depends on (I, θ)".into()));
            }
        }
        Ok(())
    }

    /// `(Φ(I, θ, ω), φ(ω))` at a real point.
    pub fn evaluate(&self, action: &[f64], theta: &[f64], omega: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w: Vec<f64> = omega.iter().zip(&self.omega0).map(|(a, b)| a - b).collect();
        let u = self.action.iter().map(|f| f.evaluate_real(action, theta, &w)).collect();
        let v = self
            .angle
            .iter()
            .zip(theta)
            .map(|(f, t)| t + f.evaluate_real(action, theta, &w))
            .collect();
        let p = self
            .param
            .iter()
            .zip(&self.omega0)
            .map(|(f, o)| o + f.evaluate_real(action, theta, &w))
            .collect();
        (u, v, p)
    }

    /// Jacobian of `Φ` in `(I, θ)` at fixed `ω`, rows `(U, V)`, columns `(I, θ)`.
    pub fn jacobian(&self, action: &[f64], theta: &[f64], omega: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let w: Vec<f64> = omega.iter().zip(&self.omega0).map(|(a, b)| a - b).collect();
        let mut jac = vec![vec![0.0; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                jac[i][j] = self.action[i].d_action(j).evaluate_real(action, theta, &w);
                jac[i][n + j] = self.action[i].d_theta(j).evaluate_real(action, theta, &w);
                jac[n + i][j] = self.angle[i].d_action(j).evaluate_real(action, theta, &w);
                jac[n + i][n + j] = self.angle[i].d_theta(j).evaluate_real(action, theta, &w)
                    + if i == j { 1.0 } else { 0.0 };
            }
        }
        jac
    }

    /// `max |DΦᵀ J DΦ − J|` over `samples` seeded random points of the real domain.
    pub fn symplectic_defect(&self, d: &DomainParams, samples: usize, seed: u64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-d.r..=d.r)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let o: Vec<f64> = self
                .omega0
                .iter()
                .map(|x| x + rng.random_range(-d.h..=d.h))
                .collect();
            let m = self.jacobian(&a, &t, &o);
            worst = worst.max(symplectic_form_defect(&m));
        }
        worst
    }

    /// Fills the norm certificates on `d` with angle weight `sigma`.
    pub fn certify(&mut self, d: &DomainParams, sigma: f64, samples: usize, seed: u64) {
        let n = self.dim();
        let caps = self.action[0].caps();
        let mut phi_dev: f64 = 0.0;
        let mut dphi: f64 = 0.0;
        for i in 0..n {
            let id = FourierTaylor::action(n, caps, i);
            let du = self.action[i].sub(&id).expect("same dimension");
            phi_dev = phi_dev.max(du.norm(d) / d.r).max(self.angle[i].norm(d) / sigma);
            let mut row_u = 0.0;
            let mut row_v = 0.0;
            for j in 0..n {
                let mut dui = self.action[i].d_action(j);
                if i == j {
                    dui = dui.sub(&FourierTaylor::constant(n, caps, 1.0)).expect("same dimension");
                }
                row_u += dui.norm(d) + self.action[i].d_theta(j).norm(d) * sigma / d.r;
                row_v += self.angle[i].d_action(j).norm(d) * d.r / sigma + self.angle[i].d_theta(j).norm(d);
            }
            dphi = dphi.max(row_u).max(row_v);
        }
        let mut p_dev: f64 = 0.0;
        let mut dp: f64 = 0.0;
        for i in 0..n {
            let id = FourierTaylor::param(n, caps, i);
            p_dev = p_dev.max(self.param[i].sub(&id).expect("same dimension").norm(d));
            let mut row = 0.0;
            for j in 0..n {
                let mut g = self.param[i].d_param(j);
                if i == j {
                    g = g.sub(&FourierTaylor::constant(n, caps, 1.0)).expect("same dimension");
                }
                row += g.norm(d);
            }
            dp = dp.max(row * d.h);
        }
        self.certificates = TransformCertificates {
            domain: Some(*d),
            sigma,
            w_phi_minus_id: phi_dev,
            w_dphi_minus_id: dphi,
            phi_minus_id: p_dev,
            dphi_minus_id_scaled: dp,
            symplectic_defect: self.symplectic_defect(d, samples, seed),
        };
    }

    /// Torus embedding `θ ↦ Φ(0, θ, ω₀)`: the action and angle-displacement
    /// components as trigonometric polynomials.
    pub fn zero_section(&self) -> (Vec<FourierTaylor>, Vec<FourierTaylor>) {
        let restrict = |f: &FourierTaylor| f.at_zero_action().at_zero_param();
        (
            self.action.iter().map(restrict).collect(),
            self.angle.iter().map(restrict).collect(),
        )
    }

    /// `φ(ω₀)`.
    pub fn omega_tilde(&self) -> Vec<Complex64> {
        self.frequency_shift()
            .into_iter()
            .zip(&self.omega0)
            .map(|(d, o)| Complex64::new(*o, 0.0) + d)
            .collect()
    }

    /// `ω̃ − ω₀`, evaluated without cancellation against `ω₀`.
    pub fn frequency_shift(&self) -> Vec<Complex64> {
        let n = self.dim();
        let zero = vec![Complex64::new(0.0, 0.0); n];
        self.param.iter().map(|f| f.evaluate(&zero, &zero, &zero)).collect()
    }
}

/// `max |Mᵀ J M − J|` with `J = [[0, Id], [−Id, 0]]`.
pub fn symplectic_form_defect(m: &[Vec<f64>]) -> f64 {
    let dim = m.len();
    let n = dim / 2;
    let j = |a: usize, b: usize| -> f64 {
        if a < n && b == a + n {
            1.0
        } else if a >= n && b + n == a {
            -1.0
        } else {
            0.0
        }
    };
    let mut worst: f64 = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let mut s = 0.0;
            for p in 0..dim {
                for q in 0..dim {
                    let jpq = j(p, q);
                    if jpq != 0.0 {
                        s += m[p][a] * jpq * m[q][b];
                    }
                }
            }
            worst = worst.max((s - j(a, b)).abs());
        }
    }
    worst
}

/// `g ∘ X¹_{F_n} ∘ … ` applied through Lie series, `generators` in order of application.
fn transport_function(
    g: &FourierTaylor,
    angle_index: Option<usize>,
    generators: &[FourierTaylor],
    target: &DomainParams,
    cfg: &TransportConfig,
    acc: &mut TransportDiscard,
) -> Result<FourierTaylor> {
    let mut cur = g.clone();
    for f in generators {
        if f.is_empty() {
            continue;
        }
        // for an angle coordinate θ_i + ṽ_i the first bracket has the extra term ∂_{I_i} F
        let first = match angle_index {
            Some(i) => {
                let (b, d) = cur.bracket(f)?;
                acc.truncation += d.norm(target);
                Some(b.add(&f.d_action(i))?)
            }
            None => None,
        };
        let series = lie_series_with_first(&cur, first, f, target, cfg.tol, cfg.max_order)?;
        acc.truncation += series.truncation.norm(target);
        acc.series_tail += series.tail_estimate;
        let (pruned, dropped) = series.value.prune(target, cfg.prune);
        acc.pruned += dropped;
        cur = pruned;
    }
    Ok(cur)
}

/// Composes `base` with the step transformation generated by `generators`
/// and the parameter map `phi`: returns `base ∘ (X¹_{F_1}∘…∘X¹_{F_n}, φ)`,
/// where the flows act at parameter `φ(ω)`.
///
/// Coordinate functions of `base` are transported by Lie series (so the
/// composition stays symplectic up to the series tolerance), then the
/// parameter is substituted.
pub fn transport(
    base: &KamTransformation,
    generators: &[FourierTaylor],
    phi: &[FourierTaylor],
    target: &DomainParams,
    cfg: &TransportConfig,
) -> Result<(KamTransformation, TransportDiscard)> {
    let n = base.dim();
    if phi.len() != n {
        return Err(KamError::DimensionMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    let mut acc = TransportDiscard::default();
    let mut action = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    for i in 0..n {
        let u = transport_function(&base.action[i], None, generators, target, cfg, &mut acc)?;
        let (u, d) = u.substitute_param(phi)?;
        acc.truncation += d.norm(target);
        action.push(u);
        let v = transport_function(&base.angle[i], Some(i), generators, target, cfg, &mut acc)?;
        let (v, d) = v.substitute_param(phi)?;
        acc.truncation += d.norm(target);
        angle.push(v);
    }
    let mut param = Vec::with_capacity(n);
    for p in &base.param {
        let (q, d) = p.substitute_param(phi)?;
        acc.truncation += d.norm(target);
        param.push(q);
    }
    Ok((
        KamTransformation {
            omega0: base.omega0.clone(),
            action,
            angle,
            param,
            certificates: TransformCertificates::default(),
        },
        acc,
    ))
}

/// `f(U_B(I,θ,w), θ + ṽ_B(θ,w), φ̂_B(w))`.
fn compose_series(f: &FourierTaylor, b: &KamTransformation, d: &DomainParams, tol: f64) -> Result<(FourierTaylor, Discard)> {
    let n = f.dim();
    let caps = f.caps();
    let real = f.is_real();
    let (f1, mut discard) = f.substitute_param(&b.param)?;

    // θ ← θ + a + ṽ' with a the real constant part
    let zero_m = Monomial::default();
    let shift: Vec<f64> = b.angle.iter().map(|v| v.coeff(&zero_m).re).collect();
    let rest: Vec<FourierTaylor> = b
        .angle
        .iter()
        .zip(&shift)
        .map(|(v, a)| v.sub(&FourierTaylor::constant(n, caps, *a)))
        .collect::<Result<_>>()?;

    let mut by_mode: BTreeMap<[i32; MAX_DIM], Vec<(Monomial, Complex64)>> = BTreeMap::new();
    for (m, c) in f1.iter() {
        let mut base = *m;
        base.k = [0; MAX_DIM];
        by_mode.entry(m.k).or_default().push((base, *c));
    }
    let mut after_angle = FourierTaylor::zero(n, caps).into_complex();
    for (k, terms) in by_mode {
        let phase = Complex64::new(0.0, TWO_PI * (0..n).map(|i| k[i] as f64 * shift[i]).sum::<f64>()).exp();
        let amp: Vec<(Monomial, Complex64)> = terms
            .into_iter()
            .map(|(mut m, c)| {
                m.k = k;
                (m, c * phase)
            })
            .collect();
        let (g, dg) = FourierTaylor::from_terms(n, caps, false, amp)?;
        discard.absorb(&dg);
        // exp(2πi k·ṽ') as a Taylor series
        let mut kv = FourierTaylor::zero(n, caps).into_complex();
        for i in 0..n {
            if k[i] != 0 {
                kv = kv.axpy(k[i] as f64, &rest[i])?;
            }
        }
        let kv = kv.scale_complex(Complex64::new(0.0, TWO_PI));
        let mut sum = g.clone();
        let mut term = g;
        for m in 1..60 {
            if kv.is_empty() {
                break;
            }
            let (t, dt) = term.mul(&kv)?;
            discard.absorb(&dt);
            term = t.scale(1.0 / m as f64);
            sum = sum.add(&term)?;
            if term.norm(d) <= tol {
                break;
            }
        }
        after_angle = after_angle.add(&sum)?;
    }

    // I ← U_B
    let max_alpha = after_angle.max_degrees().1 as usize;
    let mut by_alpha: BTreeMap<[u8; MAX_DIM], Vec<(Monomial, Complex64)>> = BTreeMap::new();
    for (m, c) in after_angle.iter() {
        let mut base = *m;
        base.alpha = [0; MAX_DIM];
        by_alpha.entry(m.alpha).or_default().push((base, *c));
    }
    let mut powers: Vec<Vec<FourierTaylor>> = Vec::with_capacity(n);
    for u in &b.action {
        let mut row = vec![FourierTaylor::constant(n, caps, 1.0)];
        for p in 1..=max_alpha {
            let (next, dp) = row[p - 1].mul(u)?;
            discard.absorb(&dp);
            row.push(next);
        }
        powers.push(row);
    }
    let mut out = FourierTaylor::zero(n, caps).into_complex();
    for (alpha, terms) in by_alpha {
        let (mut g, dg) = FourierTaylor::from_terms(n, caps, false, terms)?;
        discard.absorb(&dg);
        for i in 0..n {
            if alpha[i] > 0 {
                let (p, dp) = g.mul(&powers[i][alpha[i] as usize])?;
                discard.absorb(&dp);
                g = p;
            }
        }
        out = out.add(&g)?;
    }
    if real {
        out.enforce_reality();
    }
    Ok((out, discard))
}

/// `(Φ_A ∘ Φ_B, φ_A ∘ φ_B)`.
///
/// `d_b` is the domain of `B`, `d_a` that of `A`; the majorant image of
/// `d_b` under `B` must fit in `d_a`. Angle substitutions are expanded in
/// Taylor series until terms fall below `tol` on `d_b`.
pub fn compose_transforms(
    a: &KamTransformation,
    b: &KamTransformation,
    d_a: &DomainParams,
    d_b: &DomainParams,
    tol: f64,
) -> Result<(KamTransformation, Discard)> {
    let n = a.dim();
    if b.dim() != n {
        return Err(KamError::DimensionMismatch {
            expected: n,
            got: b.dim(),
        });
    }
    let zero_m = Monomial::default();
    let u_range = b.action.iter().map(|u| u.norm(d_b)).fold(0.0, f64::max);
    let v_range = b
        .angle
        .iter()
        .map(|v| {
            let c = v.coeff(&zero_m).re;
            v.sub(&FourierTaylor::constant(n, v.caps(), c)).map(|r| r.norm(d_b))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let w_domain = DomainParams { r: 1.0, s: 0.0, h: d_b.h };
    let p_range = b.param.iter().map(|p| p.norm(&w_domain)).fold(0.0, f64::max);
    if u_range > d_a.r || d_b.s + v_range > d_a.s || p_range > d_a.h {
        return Err(KamError::CompositionDomain(format!(
            "image of inner domain (|U| ≤ {u_range:e}, |Im V| ≤ {:e}, |φ̂| ≤ {p_range:e}) exceeds outer domain (r {:e}, s {:e}, h {:e})",
            d_b.s + v_range,
            d_a.r,
            d_a.s,
            d_a.h
        )));
    }
    let mut discard = Discard::none();
    let mut action = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    let mut param = Vec::with_capacity(n);
    for i in 0..n {
        let (u, du) = compose_series(&a.action[i], b, d_b, tol)?;
        discard.absorb(&du);
        action.push(u);
        let (v, dv) = compose_series(&a.angle[i], b, d_b, tol)?;
        discard.absorb(&dv);
        angle.push(v.add(&b.angle[i])?);
        let (p, dp) = a.param[i].substitute_param(&b.param)?;
        discard.absorb(&dp);
        param.push(p);
    }
    Ok((
        KamTransformation {
            omega0: a.omega0.clone(),
            action,
            angle,
            param,
            certificates: TransformCertificates::default(),
        },
        discard,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Caps {
        Caps::new(10, 1, 2)
    }

    fn rotation(omega0: &[f64], a: &[f64]) -> KamTransformation {
        let mut t = KamTransformation::identity(omega0, caps());
        for (i, &x) in a.iter().enumerate() {
            t.angle[i] = FourierTaylor::constant(omega0.len(), caps(), x);
        }
        t
    }

    #[test]
    fn identity_is_symplectic() {
        let t = KamTransformation::identity(&[1.0, 0.6], caps());
        let d = DomainParams::new(0.1, 0.1, 0.01).unwrap();
        assert_eq!(t.symplectic_defect(&d, 10, 1), 0.0);
        t.check_structure().unwrap();
    }

    #[test]
    fn rotations_compose() {
        let w0 = [1.0, 0.6];
        let d = DomainParams::new(0.1, 0.1, 0.01).unwrap();
        let a = rotation(&w0, &[0.1, 0.2]);
        let b = rotation(&w0, &[0.05, -0.3]);
        let (c, _) = compose_transforms(&a, &b, &d, &d, 1e-18).unwrap();
        let (_, v, _) = c.evaluate(&[0.0, 0.0], &[0.3, 0.4], &w0);
        assert!((v[0] - 0.45).abs() < 1e-15 && (v[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identity_left_unit() {
        let w0 = [1.0, 0.6];
        let d = DomainParams::new(0.1, 0.1, 0.01).unwrap();
        let id = KamTransformation::identity(&w0, caps());
        let mut b = rotation(&w0, &[0.0, 0.0]);
        b.action[0] = b.action[0]
            .add(&FourierTaylor::cos_term(2, caps(), 1e-3, &[1, 0], &[], &[]))
            .unwrap();
        b.angle[1] = FourierTaylor::sin_term(2, caps(), 1e-3, &[0, 1], &[], &[1, 0]);
        let outer = DomainParams::new(0.2, 0.2, 0.02).unwrap();
        let (c, _) = compose_transforms(&id, &b, &outer, &d, 1e-18).unwrap();
        for i in 0..2 {
            assert!(c.action[i].max_coeff_diff(&b.action[i]) < 1e-16);
            assert!(c.angle[i].max_coeff_diff(&b.angle[i]) < 1e-16);
        }
    }
}
