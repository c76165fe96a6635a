//! From `H(p, q) = h(p) + ε f(p, q)` to the parameter form
//! `e(ω) + ω·I + P(I, θ, ω)`, and back from the computed torus to `(p, q)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diophantine::FrequencyVector;
use crate::error::{KamError, Result};
use crate::hamiltonian::{Carried, ParamHamiltonian};
use crate::iterate::TorusResult;
use crate::kam_step::{ConditionCheck, ConditionPolicy, Constants};
use crate::series::{Caps, Discard, DomainParams, FourierTaylor};

const TWO_PI: f64 = 2.0 * PI;

/// `coeff · p^powers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coeff: f64,
    pub powers: Vec<u8>,
}

/// Real polynomial in the actions `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub n: usize,
    pub terms: Vec<PolyTerm>,
}

impl Polynomial {
    pub fn new(n: usize, terms: Vec<PolyTerm>) -> Result<Self> {
        if terms.iter().any(|t| t.powers.len() != n) {
            return Err(KamError::InvalidInput(format!("polynomial terms must have {n} exponents")));
        }
        Ok(Self { n, terms })
    }

    /// `ω₀·p + ½|p|²`.
    pub fn linear_plus_half_square(omega0: &[f64]) -> Self {
        let n = omega0.len();
        let mut terms = Vec::with_capacity(2 * n);
        for (i, &w) in omega0.iter().enumerate() {
            let mut e = vec![0u8; n];
            e[i] = 1;
            terms.push(PolyTerm { coeff: w, powers: e.clone() });
            e[i] = 2;
            terms.push(PolyTerm { coeff: 0.5, powers: e });
        }
        Self { n, terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().map(|&e| e as u32).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn derivative(&self, i: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[i] > 0)
            .map(|t| {
                let mut powers = t.powers.clone();
                powers[i] -= 1;
                PolyTerm {
                    coeff: t.coeff * t.powers[i] as f64,
                    powers,
                }
            })
            .collect();
        Self { n: self.n, terms }
    }

    pub fn eval_complex(&self, p: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .zip(p)
                    .fold(Complex64::new(t.coeff, 0.0), |acc, (&e, &x)| acc * x.powi(e as i32))
            })
            .sum()
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .zip(p)
                    .fold(t.coeff, |acc, (&e, &x)| acc * x.powi(e as i32))
            })
            .sum()
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.n).map(|i| self.derivative(i)).collect()
    }

    pub fn hessian(&self) -> Vec<Vec<Polynomial>> {
        self.gradient()
            .iter()
            .map(|g| (0..self.n).map(|j| g.derivative(j)).collect())
            .collect()
    }

    /// `self(x)` for series arguments `x`, truncated to their caps.
    pub fn compose(&self, x: &[FourierTaylor]) -> Result<(FourierTaylor, Discard)> {
        let n = self.n;
        let caps = x[0].caps();
        let mut discard = Discard::none();
        let max_pow: Vec<u8> = (0..n)
            .map(|i| self.terms.iter().map(|t| t.powers[i]).max().unwrap_or(0))
            .collect();
        let mut powers: Vec<Vec<FourierTaylor>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![FourierTaylor::constant(n, caps, 1.0)];
            for e in 1..=max_pow[i] as usize {
                let (next, d) = row[e - 1].mul(&x[i])?;
                discard.absorb(&d);
                row.push(next);
            }
            powers.push(row);
        }
        let mut out = FourierTaylor::zero(n, caps);
        for t in &self.terms {
            let mut prod = FourierTaylor::constant(n, caps, t.coeff);
            for i in 0..n {
                if t.powers[i] > 0 {
                    let (next, d) = prod.mul(&powers[i][t.powers[i] as usize])?;
                    discard.absorb(&d);
                    prod = next;
                }
            }
            out = out.add(&prod)?;
        }
        Ok((out, discard))
    }
}

/// `(cos · cos(2π k·q) + sin · sin(2π k·q)) · p^powers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: Vec<i32>,
    pub powers: Vec<u8>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub n: usize,
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(n: usize, terms: Vec<TrigTerm>) -> Result<Self> {
        if terms.iter().any(|t| t.k.len() != n || t.powers.len() != n) {
            return Err(KamError::InvalidInput(format!(
                "trigonometric terms must have {n} modes and {n} exponents"
            )));
        }
        Ok(Self { n, terms })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    fn phase<T: Copy + std::iter::Sum<T> + std::ops::Mul<f64, Output = T>>(k: &[i32], q: &[T]) -> T {
        k.iter().zip(q).map(|(&a, &x)| x * (TWO_PI * a as f64)).sum()
    }

    pub fn eval_complex(&self, p: &[Complex64], q: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                let ph = Self::phase(&t.k, q);
                let mono = t
                    .powers
                    .iter()
                    .zip(p)
                    .fold(Complex64::new(1.0, 0.0), |acc, (&e, &x)| acc * x.powi(e as i32));
                (ph.cos() * t.cos + ph.sin() * t.sin) * mono
            })
            .sum()
    }

    pub fn eval(&self, p: &[f64], q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let ph = Self::phase(&t.k, q);
                let mono = t
                    .powers
                    .iter()
                    .zip(p)
                    .fold(1.0, |acc, (&e, &x)| acc * x.powi(e as i32));
                (ph.cos() * t.cos + ph.sin() * t.sin) * mono
            })
            .sum()
    }

    /// `(∂_p f, ∂_q f)` at a real point.
    pub fn gradient(&self, p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut gp = vec![0.0; n];
        let mut gq = vec![0.0; n];
        for t in &self.terms {
            let ph = Self::phase(&t.k, q);
            let (s, c) = ph.sin_cos();
            let trig = c * t.cos + s * t.sin;
            let dtrig = TWO_PI * (-s * t.cos + c * t.sin);
            let mono: f64 = t.powers.iter().zip(p).map(|(&e, &x)| x.powi(e as i32)).product();
            for i in 0..n {
                gq[i] += dtrig * t.k[i] as f64 * mono;
                if t.powers[i] > 0 {
                    let dm: f64 = t
                        .powers
                        .iter()
                        .zip(p)
                        .enumerate()
                        .map(|(j, (&e, &x))| {
                            if j == i {
                                e as f64 * x.powi(e as i32 - 1)
                            } else {
                                x.powi(e as i32)
                            }
                        })
                        .product();
                    gp[i] += trig * dm;
                }
            }
        }
        (gp, gq)
    }

    /// `f(x, θ)` with series actions `x`.
    pub fn compose(&self, x: &[FourierTaylor]) -> Result<(FourierTaylor, Discard)> {
        let n = self.n;
        let caps = x[0].caps();
        let zero = vec![0u8; n];
        let mut out = FourierTaylor::zero(n, caps);
        let mut discard = Discard::none();
        for t in &self.terms {
            let mut f = FourierTaylor::cos_term(n, caps, t.cos, &t.k, &zero, &zero);
            if t.sin != 0.0 {
                f = f.add(&FourierTaylor::sin_term(n, caps, t.sin, &t.k, &zero, &zero))?;
            }
            let mono = Polynomial {
                n,
                terms: vec![PolyTerm {
                    coeff: 1.0,
                    powers: t.powers.clone(),
                }],
            };
            if t.powers.iter().any(|&e| e > 0) {
                let (m, d1) = mono.compose(x)?;
                let (prod, d2) = f.mul(&m)?;
                discard.absorb(&d1);
                discard.absorb(&d2);
                f = prod;
            }
            out = out.add(&f)?;
        }
        Ok((out, discard))
    }
}

/// `H(p, q) = h(p) + ε f(p, q)` on `|p − p*| < domain_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrableSpec {
    pub omega0: FrequencyVector,
    pub h: Polynomial,
    pub f: TrigPolynomial,
    pub epsilon: f64,
    pub domain_radius: f64,
}

impl IntegrableSpec {
    pub fn new(omega0: FrequencyVector, h: Polynomial, f: TrigPolynomial, epsilon: f64, domain_radius: f64) -> Result<Self> {
        let n = omega0.dim();
        if h.n != n || f.n != n {
            return Err(KamError::DimensionMismatch {
                expected: n,
                got: if h.n != n { h.n } else { f.n },
            });
        }
        if !(epsilon >= 0.0) || !(domain_radius > 0.0) {
            return Err(KamError::InvalidInput(format!(
                "need ε ≥ 0 and a positive domain radius (ε = {epsilon}, radius = {domain_radius})"
            )));
        }
        Ok(Self {
            omega0,
            h,
            f,
            epsilon,
            domain_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega0.dim()
    }

    pub fn energy(&self, p: &[f64], q: &[f64]) -> f64 {
        self.h.eval(p) + self.epsilon * self.f.eval(p, q)
    }

    /// Hamiltonian vector field `(ṗ, q̇) = (−∂_q H, ∂_p H)`.
    pub fn vector_field(&self, grad_h: &[Polynomial], p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (fp, fq) = self.f.gradient(p, q);
        let pdot = fq.iter().map(|x| -self.epsilon * x).collect();
        let qdot = grad_h
            .iter()
            .zip(&fp)
            .map(|(g, x)| g.eval(p) + self.epsilon * x)
            .collect();
        (pdot, qdot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub s: f64,
    pub h: f64,
    pub caps: Caps,
    pub constants: Constants,
    pub policy: ConditionPolicy,
    /// Multiplier on sampled suprema.
    pub safety: f64,
    /// Sample points per complex dimension on the distinguished boundary.
    pub samples: usize,
    /// Largest accepted condition number of `∇²h(p*)`.
    pub condition_cap: f64,
    pub newton_tol: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            s: 0.4,
            h: 1e-3,
            caps: Caps::new(16, 2, 2),
            constants: Constants::default(),
            policy: ConditionPolicy::Enforce,
            safety: 1.05,
            samples: 32,
            condition_cap: 1e8,
            newton_tol: 1e-14,
        }
    }
}

/// Measured constants of the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRecipe {
    /// `∇h(p*) = ω₀`.
    pub p_star: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub hessian_condition: f64,
    /// `sup ½ Σ_ij |∂²h|` on the sampled boundary.
    pub m_sampled: f64,
    pub m: f64,
    pub f_sampled: f64,
    /// Majorant norm of `f` on `(ρ, s, h)`.
    pub f_majorant: f64,
    pub f: f64,
    pub r: f64,
    pub eps_phys: f64,
    pub eps_param: f64,
    pub measured: f64,
    pub discard: f64,
    pub smallness: ConditionCheck,
    pub domain: DomainParams,
}

fn newton_p_star(spec: &IntegrableSpec, grad: &[Polynomial], hess: &[Vec<Polynomial>], tol: f64) -> Result<Vec<f64>> {
    let n = spec.dim();
    let omega0 = spec.omega0.as_slice();
    let mut p = vec![0.0; n];
    for _ in 0..100 {
        let rhs = DVector::from_iterator(n, grad.iter().zip(omega0).map(|(g, w)| g.eval(&p) - w));
        if rhs.amax() <= tol {
            return Ok(p);
        }
        let m = DMatrix::from_fn(n, n, |i, j| hess[i][j].eval(&p));
        let step = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| KamError::Nondegeneracy("singular Hessian in the Newton solve for ∇h(p) = ω₀".into()))?;
        for (x, d) in p.iter_mut().zip(step.iter()) {
            *x -= d;
        }
    }
    Err(KamError::Nondegeneracy("Newton solve for ∇h(p) = ω₀ did not converge".into()))
}

/// Visits `samples^n` points `c + ρ e^{2πi j/samples}` of the distinguished boundary.
fn distinguished_boundary(center: &[f64], rho: f64, samples: usize, mut f: impl FnMut(&[Complex64])) {
    let n = center.len();
    let mut idx = vec![0usize; n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    loop {
        for i in 0..n {
            z[i] = center[i] + Complex64::from_polar(rho, TWO_PI * idx[i] as f64 / samples as f64);
        }
        f(&z);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            idx[i] += 1;
            if idx[i] < samples {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn samples_for(n: usize, requested: usize) -> usize {
    match n {
        1 | 2 => requested,
        3 => requested.min(16),
        _ => requested.min(8),
    }
}

/// Brings `h(p) + ε f(p, q)` into parameter form around `∇h⁻¹(ω₀)`.
pub fn reduce_to_param_form(spec: &IntegrableSpec, cfg: &ReductionConfig) -> Result<(ParamHamiltonian, ReductionRecipe)> {
    let n = spec.dim();
    let caps = cfg.caps;
    let omega0 = spec.omega0.as_slice();
    if !(cfg.s > 0.0 && cfg.h > 0.0) {
        return Err(KamError::InvalidInput(format!("need s > 0 and h > 0 (s = {}, h = {})", cfg.s, cfg.h)));
    }
    if !(spec.epsilon > 0.0) {
        return Err(KamError::InvalidInput("ε must be positive to set the action radius".into()));
    }
    let grad = spec.h.gradient();
    let hess = spec.h.hessian();
    let p_star = newton_p_star(spec, &grad, &hess, cfg.newton_tol)?;
    let h0 = DMatrix::from_fn(n, n, |i, j| hess[i][j].eval(&p_star));
    let sv = h0.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(sv.min() > 0.0) || !(cond <= cfg.condition_cap) {
        return Err(KamError::Nondegeneracy(format!(
            "∇²h(p*) has condition number {cond:e} (cap {:e})",
            cfg.condition_cap
        )));
    }
    let h0_inv = h0
        .clone()
        .try_inverse()
        .ok_or_else(|| KamError::Nondegeneracy("∇²h(p*) is singular".into()))?;

    // g(w) = ∇h⁻¹(ω₀ + w) − p*, by g ← H⁻¹(w − R(g))
    let mut discard = Discard::none();
    let w: Vec<FourierTaylor> = (0..n).map(|i| FourierTaylor::param(n, caps, i)).collect();
    let mut g: Vec<FourierTaylor> = (0..n).map(|_| FourierTaylor::zero(n, caps)).collect();
    for _ in 0..=caps.deg_w {
        let x: Vec<FourierTaylor> = g
            .iter()
            .zip(&p_star)
            .map(|(gi, &p)| gi.add(&FourierTaylor::constant(n, caps, p)))
            .collect::<Result<_>>()?;
        let mut rem = Vec::with_capacity(n);
        for i in 0..n {
            let (gr, _) = grad[i].compose(&x)?;
            let mut r = gr.add(&FourierTaylor::constant(n, caps, -omega0[i]))?;
            for j in 0..n {
                r = r.axpy(-h0[(i, j)], &g[j])?;
            }
            rem.push(w[i].sub(&r)?);
        }
        g = (0..n)
            .map(|i| {
                (0..n).try_fold(FourierTaylor::zero(n, caps), |acc, j| acc.axpy(h0_inv[(i, j)], &rem[j]))
            })
            .collect::<Result<_>>()?;
    }
    let x: Vec<FourierTaylor> = (0..n)
        .map(|i| {
            g[i].add(&FourierTaylor::constant(n, caps, p_star[i]))?
                .add(&FourierTaylor::action(n, caps, i))
        })
        .collect::<Result<_>>()?;
    let (h_series, dh) = spec.h.compose(&x)?;
    discard.absorb(&dh);
    let energy = h_series.at_zero_action();
    let p_h = h_series
        .sub(&energy)?
        .sub(&ParamHamiltonian::frequency_term(omega0, caps))?;
    let (f_series, df) = spec.f.compose(&x)?;
    let mut p = p_h.axpy(spec.epsilon, &f_series)?;
    discard.absorb(&df.scaled(spec.epsilon));
    p.enforce_reality();

    // sampled constants on the distinguished boundaries
    let rho = spec.domain_radius;
    let samples = samples_for(n, cfg.samples);
    let mut m_sampled: f64 = 0.0;
    distinguished_boundary(&p_star, rho, samples, |z| {
        let total: f64 = hess.iter().flatten().map(|hij| hij.eval_complex(z).norm()).sum();
        m_sampled = m_sampled.max(0.5 * total);
    });
    let mut f_sampled: f64 = 0.0;
    distinguished_boundary(&p_star, rho, samples, |z| {
        let mut idx = vec![0usize; n];
        let mut q = vec![Complex64::new(0.0, 0.0); n];
        'outer: loop {
            for sign in [1.0, -1.0] {
                for i in 0..n {
                    q[i] = Complex64::new(idx[i] as f64 / samples as f64, sign * cfg.s);
                }
                f_sampled = f_sampled.max(spec.f.eval_complex(z, &q).norm());
            }
            let mut i = 0;
            loop {
                if i == n {
                    break 'outer;
                }
                idx[i] += 1;
                if idx[i] < samples {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    });
    let m = cfg.safety * m_sampled;
    if !(m > 0.0) {
        return Err(KamError::Nondegeneracy("∇²h vanishes on the domain".into()));
    }
    let f_majorant = f_series.norm(&DomainParams {
        r: rho,
        s: cfg.s,
        h: cfg.h,
    });
    let f_const = (cfg.safety * f_sampled).max(f_majorant);
    if !(f_const > 0.0) {
        return Err(KamError::InvalidInput("perturbation f vanishes; nothing to reduce".into()));
    }
    let r = (f_const * spec.epsilon / m).sqrt();
    if r > rho {
        return Err(KamError::Domain(format!("action radius r = {r:e} exceeds the domain radius {rho:e}")));
    }
    let eps_param = 2.0 * f_const * spec.epsilon;
    let c = cfg.constants.c_small;
    let threshold = c * c * cfg.h * cfg.h / (4.0 * m * f_const);
    let smallness = ConditionCheck {
        name: "ε ≤ (4MF)⁻¹ c² h²".into(),
        measured: spec.epsilon,
        threshold,
        passed: spec.epsilon <= threshold,
        hard: false,
    };
    if !smallness.passed {
        if cfg.policy == ConditionPolicy::Enforce {
            return Err(KamError::EpsilonTooLarge {
                eps: spec.epsilon,
                threshold,
            });
        }
        log::warn!("smallness ε = {:e} > {threshold:e} (reported only)", spec.epsilon);
    }
    let domain = DomainParams::new(r, cfg.s, cfg.h)?;
    let discard_norm = discard.norm(&domain);
    let measured = p.norm(&domain) + discard_norm;
    if measured > eps_param {
        return Err(KamError::condition("|P|_{r,s,h} ≤ 2Fε", measured, eps_param));
    }
    let ham = ParamHamiltonian::new(spec.omega0.clone(), energy, p, domain)?.with_discarded(Carried {
        profile: discard,
        ..Carried::default()
    });
    let recipe = ReductionRecipe {
        p_star,
        hessian: (0..n).map(|i| (0..n).map(|j| h0[(i, j)]).collect()).collect(),
        hessian_condition: cond,
        m_sampled,
        m,
        f_sampled,
        f_majorant,
        f: f_const,
        r,
        eps_phys: spec.epsilon,
        eps_param,
        measured,
        discard: discard_norm,
        smallness,
        domain,
    };
    Ok((ham, recipe))
}

/// The torus in `(p, q)` coordinates: `p(θ) = Ĩ + I(θ)`, `q(θ) = θ + ṽ(θ)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedTorus {
    pub omega0: Vec<f64>,
    pub omega_tilde: Vec<f64>,
    /// `∇h(Ĩ) = ω̃`.
    pub i_tilde: Vec<f64>,
    pub action: Vec<FourierTaylor>,
    pub angle: Vec<FourierTaylor>,
}

impl PlacedTorus {
    /// `(p(θ), q(θ))` with `q` lifted (not reduced mod 1).
    pub fn point(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = theta.len();
        let zero = vec![0.0; n];
        let p = self
            .action
            .iter()
            .zip(&self.i_tilde)
            .map(|(f, c)| c + f.evaluate_real(&zero, theta, &zero))
            .collect();
        let q = self
            .angle
            .iter()
            .zip(theta)
            .map(|(f, t)| t + f.evaluate_real(&zero, theta, &zero))
            .collect();
        (p, q)
    }
}

/// Solves `∇h(Ĩ) = ω̃` and attaches the torus found in parameter coordinates.
pub fn place_torus(result: &TorusResult, spec: &IntegrableSpec, tol: f64) -> Result<PlacedTorus> {
    let n = spec.dim();
    let grad = spec.h.gradient();
    let hess = spec.h.hessian();
    let target = &result.omega_tilde;
    let mut p = newton_p_star(spec, &grad, &hess, tol).map_err(|e| KamError::Placement(e.to_string()))?;
    let center = p.clone();
    let mut ok = false;
    for _ in 0..100 {
        let rhs = DVector::from_iterator(n, grad.iter().zip(target).map(|(g, w)| g.eval(&p) - w));
        if rhs.amax() <= tol {
            ok = true;
            break;
        }
        let m = DMatrix::from_fn(n, n, |i, j| hess[i][j].eval(&p));
        let step = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| KamError::Placement("singular Hessian".into()))?;
        for (x, d) in p.iter_mut().zip(step.iter()) {
            *x -= d;
        }
    }
    if !ok {
        return Err(KamError::Placement(format!("Newton solve for ∇h(Ĩ) = ω̃ did not reach {tol:e}")));
    }
    let dist = p.iter().zip(&center).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if dist > spec.domain_radius {
        return Err(KamError::Placement(format!(
            "Ĩ lies {dist:e} from p*, outside the domain radius {:e}",
            spec.domain_radius
        )));
    }
    Ok(PlacedTorus {
        omega0: result.omega0.clone(),
        omega_tilde: result.omega_tilde.clone(),
        i_tilde: p,
        action: result.embedding_action.clone(),
        angle: result.embedding_angle.clone(),
    })
}
