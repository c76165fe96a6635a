//! Truncated Fourier-Taylor expansions on `Tⁿ × actions × parameter offset`.
//!
//! A function is a finite sum `Σ c(k,α,β) e^{2πi k·θ} I^α w^β` with
//! `w = ω − ω₀`. Every coefficient is weighted by `e^{2π|k|₁s} r^{|α|} h^{|β|}`
//! in the majorant norm, which dominates the sup norm on the complex domain.
//! Terms that would exceed the truncation caps are dropped and their
//! majorant mass is returned as a [`Discard`] so that callers can account
//! for them at whatever domain they later measure on.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::RationalVector;
use crate::error::{KamError, Result};

/// Largest supported number of degrees of freedom.
pub const MAX_DIM: usize = 4;

const TWO_PI: f64 = 2.0 * PI;
const PAR_CHUNK: usize = 64;

/// Analyticity domain `D_{r,s} × O_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub r: f64,
    pub s: f64,
    pub h: f64,
}

impl DomainParams {
    pub fn new(r: f64, s: f64, h: f64) -> Result<Self> {
        let d = Self { r, s, h };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("s", self.s), ("h", self.h)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(KamError::Domain(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn with_r(self, r: f64) -> Self {
        Self { r, ..self }
    }

    pub fn with_s(self, s: f64) -> Self {
        Self { s, ..self }
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }

    /// Weight of one monomial of the given degrees.
    pub fn weight(&self, k_l1: u32, alpha: u32, beta: u32) -> f64 {
        (TWO_PI * k_l1 as f64 * self.s).exp() * self.r.powi(alpha as i32) * self.h.powi(beta as i32)
    }
}

/// Direction of a Cauchy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Action,
    Angle,
    Param,
}

/// Truncation caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub cutoff_k: u32,
    pub deg_i: u32,
    pub deg_w: u32,
}

impl Caps {
    pub fn new(cutoff_k: u32, deg_i: u32, deg_w: u32) -> Self {
        Self {
            cutoff_k,
            deg_i,
            deg_w,
        }
    }

    pub fn admits(&self, m: &Monomial) -> bool {
        m.k_l1() <= self.cutoff_k && m.alpha_deg() <= self.deg_i && m.beta_deg() <= self.deg_w
    }
}

/// Exponents of one term: Fourier mode `k`, action powers `α`, parameter powers `β`.
///
/// Unused trailing slots (beyond the function's dimension) stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial {
    pub k: [i32; MAX_DIM],
    pub alpha: [u8; MAX_DIM],
    pub beta: [u8; MAX_DIM],
}

impl Monomial {
    pub fn new(k: &[i32], alpha: &[u8], beta: &[u8]) -> Self {
        let mut m = Self::default();
        m.k[..k.len()].copy_from_slice(k);
        m.alpha[..alpha.len()].copy_from_slice(alpha);
        m.beta[..beta.len()].copy_from_slice(beta);
        m
    }

    pub fn mode(k: &[i32]) -> Self {
        Self::new(k, &[], &[])
    }

    pub fn k_l1(&self) -> u32 {
        self.k.iter().map(|x| x.unsigned_abs()).sum()
    }

    pub fn alpha_deg(&self) -> u32 {
        self.alpha.iter().map(|&x| x as u32).sum()
    }

    pub fn beta_deg(&self) -> u32 {
        self.beta.iter().map(|&x| x as u32).sum()
    }

    pub fn is_mean(&self) -> bool {
        self.k == [0; MAX_DIM]
    }

    pub fn conjugate(&self) -> Self {
        let mut m = *self;
        for x in m.k.iter_mut() {
            *x = -*x;
        }
        m
    }

    /// True for the representative of `{k, -k}` whose first nonzero entry is positive
    /// (and for `k = 0`).
    fn is_canonical(&self) -> bool {
        match self.k.iter().find(|&&x| x != 0) {
            None => true,
            Some(&x) => x > 0,
        }
    }

    fn add(&self, o: &Self) -> Self {
        let mut m = Self::default();
        for i in 0..MAX_DIM {
            m.k[i] = self.k[i] + o.k[i];
            m.alpha[i] = self.alpha[i] + o.alpha[i];
            m.beta[i] = self.beta[i] + o.beta[i];
        }
        m
    }

    fn weight(&self, d: &DomainParams) -> f64 {
        d.weight(self.k_l1(), self.alpha_deg(), self.beta_deg())
    }
}

/// Majorant mass of dropped terms, binned by `(|k|₁, |α|, |β|)` so it can be
/// weighted on any domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<DiscardBin>", into = "Vec<DiscardBin>")]
pub struct Discard {
    bins: BTreeMap<(u32, u32, u32), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DiscardBin {
    k: u32,
    alpha: u32,
    beta: u32,
    mass: f64,
}

impl From<Vec<DiscardBin>> for Discard {
    fn from(v: Vec<DiscardBin>) -> Self {
        let mut out = Discard::none();
        for b in v {
            *out.bins.entry((b.k, b.alpha, b.beta)).or_insert(0.0) += b.mass;
        }
        out
    }
}

impl From<Discard> for Vec<DiscardBin> {
    fn from(d: Discard) -> Self {
        d.bins
            .into_iter()
            .map(|((k, alpha, beta), mass)| DiscardBin { k, alpha, beta, mass })
            .collect()
    }
}

impl Discard {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn record(&mut self, m: &Monomial, magnitude: f64) {
        if magnitude > 0.0 {
            *self
                .bins
                .entry((m.k_l1(), m.alpha_deg(), m.beta_deg()))
                .or_insert(0.0) += magnitude;
        }
    }

    pub fn absorb(&mut self, other: &Discard) {
        for (key, v) in &other.bins {
            *self.bins.entry(*key).or_insert(0.0) += v;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            bins: self.bins.iter().map(|(k, v)| (*k, v * factor.abs())).collect(),
        }
    }

    pub fn norm(&self, d: &DomainParams) -> f64 {
        self.bins
            .iter()
            .map(|(&(a, b, c), v)| v * d.weight(a, b, c))
            .fold(0.0, |acc, x| acc + x)
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Truncated Fourier-Taylor function.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTaylor {
    n: usize,
    caps: Caps,
    real: bool,
    terms: BTreeMap<Monomial, Complex64>,
}

impl FourierTaylor {
    pub fn zero(n: usize, caps: Caps) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "dimension {n} unsupported");
        Self {
            n,
            caps,
            real: true,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, caps: Caps, c: f64) -> Self {
        let mut f = Self::zero(n, caps);
        if c != 0.0 {
            f.terms.insert(Monomial::default(), Complex64::new(c, 0.0));
        }
        f
    }

    /// The coordinate function `I_i`.
    pub fn action(n: usize, caps: Caps, i: usize) -> Self {
        let mut alpha = [0u8; MAX_DIM];
        alpha[i] = 1;
        Self::monomial(n, caps, Monomial::new(&[], &alpha, &[]), 1.0)
    }

    /// The coordinate function `w_i = ω_i − ω₀_i`.
    pub fn param(n: usize, caps: Caps, i: usize) -> Self {
        let mut beta = [0u8; MAX_DIM];
        beta[i] = 1;
        Self::monomial(n, caps, Monomial::new(&[], &[], &beta), 1.0)
    }

    fn monomial(n: usize, caps: Caps, m: Monomial, c: f64) -> Self {
        let mut f = Self::zero(n, caps);
        if caps.admits(&m) {
            f.terms.insert(m, Complex64::new(c, 0.0));
        }
        f
    }

    /// `amp · cos(2π k·θ) · I^α w^β`.
    pub fn cos_term(n: usize, caps: Caps, amp: f64, k: &[i32], alpha: &[u8], beta: &[u8]) -> Self {
        let m = Monomial::new(k, alpha, beta);
        let mut f = Self::zero(n, caps);
        if m.is_mean() {
            f.insert_add(m, Complex64::new(amp, 0.0));
        } else {
            f.insert_add(m, Complex64::new(amp / 2.0, 0.0));
            f.insert_add(m.conjugate(), Complex64::new(amp / 2.0, 0.0));
        }
        f.retain_caps();
        f
    }

    /// `amp · sin(2π k·θ) · I^α w^β`.
    pub fn sin_term(n: usize, caps: Caps, amp: f64, k: &[i32], alpha: &[u8], beta: &[u8]) -> Self {
        let m = Monomial::new(k, alpha, beta);
        let mut f = Self::zero(n, caps);
        if !m.is_mean() {
            // sin x = (e^{ix} − e^{-ix}) / 2i
            f.insert_add(m, Complex64::new(0.0, -amp / 2.0));
            f.insert_add(m.conjugate(), Complex64::new(0.0, amp / 2.0));
        }
        f.retain_caps();
        f
    }

    /// Builds a function from raw terms. Duplicates are summed; terms outside
    /// the caps are dropped into the returned discard. With `real`, the
    /// coefficients are symmetrized to `c(−k) = conj c(k)`.
    pub fn from_terms(
        n: usize,
        caps: Caps,
        real: bool,
        terms: impl IntoIterator<Item = (Monomial, Complex64)>,
    ) -> Result<(Self, Discard)> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(KamError::InvalidInput(format!("dimension {n} unsupported")));
        }
        let mut f = Self {
            n,
            caps,
            real,
            terms: BTreeMap::new(),
        };
        let mut discard = Discard::none();
        for (m, c) in terms {
            if m.k[n..].iter().any(|&x| x != 0)
                || m.alpha[n..].iter().any(|&x| x != 0)
                || m.beta[n..].iter().any(|&x| x != 0)
            {
                return Err(KamError::DimensionMismatch {
                    expected: n,
                    got: MAX_DIM,
                });
            }
            if caps.admits(&m) {
                f.insert_add(m, c);
            } else {
                discard.record(&m, c.norm());
            }
        }
        if real {
            f.enforce_reality();
        }
        Ok((f, discard))
    }

    fn insert_add(&mut self, m: Monomial, c: Complex64) {
        *self.terms.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
    }

    fn retain_caps(&mut self) {
        let caps = self.caps;
        self.terms.retain(|m, _| caps.admits(m));
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn caps(&self) -> Caps {
        self.caps
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    /// Marks the function as complex (drops the conjugate-symmetry invariant).
    pub fn into_complex(mut self) -> Self {
        self.real = false;
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| c.norm() == 0.0)
    }

    pub fn coeff(&self, m: &Monomial) -> Complex64 {
        self.terms.get(m).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    /// Same terms under different caps; terms that no longer fit are discarded.
    pub fn with_caps(&self, caps: Caps) -> (Self, Discard) {
        let mut out = Self {
            n: self.n,
            caps,
            real: self.real,
            terms: BTreeMap::new(),
        };
        let mut discard = Discard::none();
        for (m, c) in &self.terms {
            if caps.admits(m) {
                out.terms.insert(*m, *c);
            } else {
                discard.record(m, c.norm());
            }
        }
        (out, discard)
    }

    fn check_compat(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(KamError::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(())
    }

    fn empty_like(&self, real: bool) -> Self {
        Self {
            n: self.n,
            caps: self.caps,
            real,
            terms: BTreeMap::new(),
        }
    }

    /// Weighted ℓ¹ norm `Σ |c| e^{2π|k|₁s} r^{|α|} h^{|β|}`.
    pub fn norm(&self, d: &DomainParams) -> f64 {
        self.terms.iter().fold(0.0, |acc, (m, c)| acc + c.norm() * m.weight(d))
    }

    /// Largest `|k|₁`, `|α|`, `|β|` present.
    pub fn max_degrees(&self) -> (u32, u32, u32) {
        self.terms.keys().fold((0, 0, 0), |acc, m| {
            (
                acc.0.max(m.k_l1()),
                acc.1.max(m.alpha_deg()),
                acc.2.max(m.beta_deg()),
            )
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `self + a · other`; terms of `other` outside `self`'s caps are dropped.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        self.check_compat(other)?;
        let mut out = self.clone();
        out.real = self.real && other.real;
        for (m, c) in &other.terms {
            if out.caps.admits(m) {
                out.insert_add(*m, c * a);
            }
        }
        out.drop_exact_zeros();
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= a;
        }
        out.drop_exact_zeros();
        out
    }

    pub fn scale_complex(&self, a: Complex64) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= a;
        }
        out.real = self.real && a.im == 0.0;
        out.drop_exact_zeros();
        out
    }

    fn drop_exact_zeros(&mut self) {
        self.terms.retain(|_, c| c.re != 0.0 || c.im != 0.0);
    }

    /// Pairwise products of terms, accumulated in a fixed order so the result
    /// is independent of the thread count.
    fn pair_products<F>(&self, other: &Self, emit: F) -> (BTreeMap<Monomial, Complex64>, Discard)
    where
        F: Fn(&Monomial, Complex64, &Monomial, Complex64, &mut dyn FnMut(Monomial, Complex64)) + Sync,
    {
        let caps = self.caps;
        let left: Vec<(Monomial, Complex64)> = self.terms.iter().map(|(m, c)| (*m, *c)).collect();
        let right: Vec<(Monomial, Complex64)> = other.terms.iter().map(|(m, c)| (*m, *c)).collect();
        let partial: Vec<(HashMap<Monomial, Complex64>, Discard)> = left
            .par_chunks(PAR_CHUNK)
            .map(|chunk| {
                let mut acc: HashMap<Monomial, Complex64> = HashMap::new();
                let mut discard = Discard::none();
                for (ma, ca) in chunk {
                    for (mb, cb) in &right {
                        emit(ma, *ca, mb, *cb, &mut |m, c| {
                            if caps.admits(&m) {
                                *acc.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
                            } else {
                                discard.record(&m, c.norm());
                            }
                        });
                    }
                }
                (acc, discard)
            })
            .collect();
        let mut terms: BTreeMap<Monomial, Complex64> = BTreeMap::new();
        let mut discard = Discard::none();
        for (acc, d) in partial {
            // sort each chunk's contribution so the merge order is fixed
            let mut entries: Vec<_> = acc.into_iter().collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (m, c) in entries {
                *terms.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
            }
            discard.absorb(&d);
        }
        (terms, discard)
    }

    fn finish(&self, real: bool, terms: BTreeMap<Monomial, Complex64>) -> Self {
        let mut out = self.empty_like(real);
        out.terms = terms;
        out.drop_exact_zeros();
        if real {
            out.enforce_reality();
        }
        out
    }

    /// Pointwise product, truncated to `self`'s caps.
    pub fn mul(&self, other: &Self) -> Result<(Self, Discard)> {
        self.check_compat(other)?;
        let (terms, discard) = self.pair_products(other, |ma, ca, mb, cb, out| out(ma.add(mb), ca * cb));
        Ok((self.finish(self.real && other.real, terms), discard))
    }

    /// `{f, g} = ∂_θ f · ∂_I g − ∂_I f · ∂_θ g`.
    ///
    /// With this sign `{g, v·I}` is the derivative of `g` along `v`, and the
    /// flow of `F` transports observables by `ġ = {g, F}`.
    pub fn bracket(&self, other: &Self) -> Result<(Self, Discard)> {
        self.check_compat(other)?;
        let n = self.n;
        let (terms, discard) = self.pair_products(other, |ma, ca, mb, cb, out| {
            let base = ma.add(mb);
            let prod = ca * cb;
            for i in 0..n {
                let factor = ma.k[i] as f64 * mb.alpha[i] as f64 - ma.alpha[i] as f64 * mb.k[i] as f64;
                if factor != 0.0 {
                    let mut m = base;
                    m.alpha[i] -= 1;
                    out(m, prod * Complex64::new(0.0, TWO_PI * factor));
                }
            }
        });
        Ok((self.finish(self.real && other.real, terms), discard))
    }

    pub fn d_theta(&self, i: usize) -> Self {
        let mut out = self.empty_like(self.real);
        for (m, c) in &self.terms {
            if m.k[i] != 0 {
                out.terms
                    .insert(*m, c * Complex64::new(0.0, TWO_PI * m.k[i] as f64));
            }
        }
        out
    }

    pub fn d_action(&self, i: usize) -> Self {
        let mut out = self.empty_like(self.real);
        for (m, c) in &self.terms {
            if m.alpha[i] > 0 {
                let mut mm = *m;
                mm.alpha[i] -= 1;
                out.insert_add(mm, c * m.alpha[i] as f64);
            }
        }
        out
    }

    pub fn d_param(&self, i: usize) -> Self {
        let mut out = self.empty_like(self.real);
        for (m, c) in &self.terms {
            if m.beta[i] > 0 {
                let mut mm = *m;
                mm.beta[i] -= 1;
                out.insert_add(mm, c * m.beta[i] as f64);
            }
        }
        out
    }

    /// Derivative along the constant vector field `v` on the torus.
    pub fn lie_derivative(&self, v: &[f64]) -> Self {
        let mut out = self.empty_like(self.real);
        for (m, c) in &self.terms {
            let kv: f64 = (0..self.n).map(|i| m.k[i] as f64 * v[i]).sum();
            if kv != 0.0 {
                out.terms.insert(*m, c * Complex64::new(0.0, TWO_PI * kv));
            }
        }
        out
    }

    /// Mean over the torus: keeps the `k = 0` terms.
    pub fn average_full(&self) -> Self {
        let mut out = self.empty_like(self.real);
        out.terms = self
            .terms
            .iter()
            .filter(|(m, _)| m.is_mean())
            .map(|(m, c)| (*m, *c))
            .collect();
        out
    }

    /// Average along the periodic flow `θ ↦ θ + t q v`: keeps modes with `k·(qv) = 0`.
    pub fn average_along(&self, v: &RationalVector) -> Self {
        let mut out = self.empty_like(self.real);
        out.terms = self
            .terms
            .iter()
            .filter(|(m, _)| v.scaled_dot(&m.k[..self.n]) == 0)
            .map(|(m, c)| (*m, *c))
            .collect();
        out
    }

    /// Solves `{F, v·I} = rhs` for `rhs` with no component on modes averaged along `v`.
    pub fn solve_homological(&self, v: &RationalVector) -> Result<Self> {
        if v.dim() != self.n {
            return Err(KamError::DimensionMismatch {
                expected: self.n,
                got: v.dim(),
            });
        }
        let scale = self.terms.values().map(|c| c.norm()).fold(0.0, f64::max);
        let tol = 1e-13 * scale;
        let mut out = self.empty_like(self.real);
        for (m, c) in &self.terms {
            let d = v.scaled_dot(&m.k[..self.n]);
            if d == 0 {
                if c.norm() > tol {
                    return Err(KamError::AveragedModePresent {
                        k: m.k[..self.n].to_vec(),
                        magnitude: c.norm(),
                    });
                }
                continue;
            }
            let kv = d as f64 / v.q as f64;
            out.terms.insert(*m, c / Complex64::new(0.0, TWO_PI * kv));
        }
        Ok(out)
    }

    /// Splits into the part of degree ≤ 1 in `I` and the rest.
    pub fn split_affine(&self) -> (Self, Self) {
        let mut affine = self.empty_like(self.real);
        let mut tail = self.empty_like(self.real);
        for (m, c) in &self.terms {
            if m.alpha_deg() <= 1 {
                affine.terms.insert(*m, *c);
            } else {
                tail.terms.insert(*m, *c);
            }
        }
        (affine, tail)
    }

    /// Affine-in-`I` part and the measured norm of the remainder on the
    /// domain with action radius `c·r`, together with the a-priori bound
    /// `c²(1−c)⁻¹|f|_{r,s,h}`.
    pub fn linearize_in_i(&self, d: &DomainParams, c: f64) -> Result<Linearization> {
        if !(c > 0.0 && c < 1.0) {
            return Err(KamError::Domain(format!("shrink factor {c} outside (0, 1)")));
        }
        let (affine, tail) = self.split_affine();
        let tail_norm = tail.norm(&d.with_r(c * d.r));
        let bound = c * c / (1.0 - c) * self.norm(d);
        if tail_norm > bound * (1.0 + 1e-12) {
            return Err(KamError::condition("affine truncation tail", tail_norm, bound));
        }
        Ok(Linearization {
            affine,
            tail,
            tail_norm,
            bound,
        })
    }

    /// Majorant norm of the first derivatives in `direction` on the domain
    /// shrunk by `amount` (max over components).
    pub fn cauchy_shrink_bound(&self, d: &DomainParams, direction: Direction, amount: f64) -> Result<f64> {
        let limit = match direction {
            Direction::Action => d.r,
            Direction::Angle => d.s,
            Direction::Param => d.h,
        };
        if !(amount > 0.0 && amount < limit) {
            return Err(KamError::Domain(format!(
                "shrink amount {amount} must lie in (0, {limit})"
            )));
        }
        let shrunk = match direction {
            Direction::Action => d.with_r(d.r - amount),
            Direction::Angle => d.with_s(d.s - amount),
            Direction::Param => d.with_h(d.h - amount),
        };
        let bound = (0..self.n)
            .map(|i| {
                let g = match direction {
                    Direction::Action => self.d_action(i),
                    Direction::Angle => self.d_theta(i),
                    Direction::Param => self.d_param(i),
                };
                g.norm(&shrunk)
            })
            .fold(0.0, f64::max);
        let cauchy = self.norm(d) / amount;
        debug_assert!(bound <= cauchy * (1.0 + 1e-12) + f64::MIN_POSITIVE);
        Ok(bound)
    }

    /// Substitutes `w ← g(w)` where `g[i]` are functions of `w` alone.
    pub fn substitute_param(&self, g: &[Self]) -> Result<(Self, Discard)> {
        if g.len() != self.n {
            return Err(KamError::DimensionMismatch {
                expected: self.n,
                got: g.len(),
            });
        }
        for gi in g {
            if gi.terms.keys().any(|m| !m.is_mean() || m.alpha_deg() > 0) {
                return Err(KamError::InvalidInput(
                    "parameter substitution must depend on w only".into(),
                ));
            }
        }
        let deg = self.max_degrees().2;
        let wcaps = Caps::new(0, 0, self.caps.deg_w);
        let mut discard = Discard::none();
        // powers[i][p] = g_i^p truncated to deg_w
        let mut powers: Vec<Vec<Self>> = Vec::with_capacity(self.n);
        for gi in g {
            let (gi, d0) = gi.with_caps(wcaps);
            discard.absorb(&d0);
            let mut row = vec![Self::constant(self.n, wcaps, 1.0)];
            for p in 1..=deg as usize {
                let (next, d) = row[p - 1].mul(&gi)?;
                discard.absorb(&d);
                row.push(next);
            }
            powers.push(row);
        }
        let mut cache: BTreeMap<[u8; MAX_DIM], Self> = BTreeMap::new();
        let mut real = self.real && g.iter().all(|x| x.real);
        let mut acc: BTreeMap<Monomial, Complex64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let prod = match cache.entry(m.beta) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    let mut prod = Self::constant(self.n, wcaps, 1.0);
                    for i in 0..self.n {
                        if m.beta[i] > 0 {
                            let (p, d) = prod.mul(&powers[i][m.beta[i] as usize])?;
                            discard.absorb(&d);
                            prod = p;
                        }
                    }
                    e.insert(prod)
                }
            };
            for (pm, pc) in &prod.terms {
                let mut out = *m;
                out.beta = pm.beta;
                *acc.entry(out).or_insert(Complex64::new(0.0, 0.0)) += c * pc;
            }
        }
        if g.iter().any(|x| !x.real) {
            real = false;
        }
        Ok((self.finish(real, acc), discard))
    }

    /// Value at `(I, θ, w)`.
    pub fn evaluate(&self, action: &[Complex64], theta: &[Complex64], w: &[Complex64]) -> Complex64 {
        let n = self.n;
        let kmax = self
            .terms
            .keys()
            .flat_map(|m| m.k[..n].iter().map(|x| x.unsigned_abs()))
            .max()
            .unwrap_or(0) as usize;
        // e^{2πi m θ_j} for m in −kmax..=kmax
        let phases: Vec<Vec<Complex64>> = theta[..n]
            .iter()
            .map(|&t| {
                let z = (Complex64::new(0.0, TWO_PI) * t).exp();
                let zi = z.inv();
                let mut row = vec![Complex64::new(1.0, 0.0); 2 * kmax + 1];
                for m in 1..=kmax {
                    row[kmax + m] = row[kmax + m - 1] * z;
                    row[kmax - m] = row[kmax - m + 1] * zi;
                }
                row
            })
            .collect();
        let mut sum = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut t = *c;
            for j in 0..n {
                t *= phases[j][(kmax as i64 + m.k[j] as i64) as usize];
                if m.alpha[j] > 0 {
                    t *= action[j].powu(m.alpha[j] as u32);
                }
                if m.beta[j] > 0 {
                    t *= w[j].powu(m.beta[j] as u32);
                }
            }
            sum += t;
        }
        sum
    }

    /// Real value at real arguments (real part of the complex evaluation).
    pub fn evaluate_real(&self, action: &[f64], theta: &[f64], w: &[f64]) -> f64 {
        let c = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
        self.evaluate(&c(action), &c(theta), &c(w)).re
    }

    /// Drops the smallest terms (by weighted magnitude on `d`) while their
    /// total stays within `budget`. Conjugate pairs are dropped together.
    /// Returns the pruned function and the dropped norm on `d`.
    pub fn prune(&self, d: &DomainParams, budget: f64) -> (Self, f64) {
        let (out, dropped) = self.prune_profile(d, budget);
        (out, dropped.norm(d))
    }

    /// As [`prune`](Self::prune), returning the dropped terms as a profile.
    pub fn prune_profile(&self, d: &DomainParams, budget: f64) -> (Self, Discard) {
        let mut profile = Discard::none();
        if budget <= 0.0 || self.terms.is_empty() {
            return (self.clone(), profile);
        }
        let mut groups: Vec<(f64, Monomial)> = Vec::new();
        for (m, c) in &self.terms {
            if self.real {
                if !m.is_canonical() {
                    continue;
                }
                let mut w = c.norm() * m.weight(d);
                if !m.is_mean() {
                    w += self.coeff(&m.conjugate()).norm() * m.weight(d);
                }
                groups.push((w, *m));
            } else {
                groups.push((c.norm() * m.weight(d), *m));
            }
        }
        if self.real {
            // orphans whose canonical partner is absent
            for (m, c) in &self.terms {
                if !m.is_canonical() && !self.terms.contains_key(&m.conjugate()) {
                    groups.push((c.norm() * m.weight(d), *m));
                }
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut dropped = 0.0;
        let mut out = self.clone();
        for (w, m) in groups {
            if dropped + w > budget {
                break;
            }
            dropped += w;
            if let Some(c) = out.terms.remove(&m) {
                profile.record(&m, c.norm());
            }
            if self.real && !m.is_mean() {
                if let Some(c) = out.terms.remove(&m.conjugate()) {
                    profile.record(&m.conjugate(), c.norm());
                }
            }
        }
        (out, profile)
    }

    /// Largest `|c(−k) − conj c(k)|`.
    pub fn reality_defect(&self) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| (self.coeff(&m.conjugate()) - c.conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Symmetrizes to `c(−k) = conj c(k)` and sets the flag.
    pub fn enforce_reality(&mut self) {
        self.real = true;
        let keys: Vec<Monomial> = self
            .terms
            .keys()
            .map(|m| if m.is_canonical() { *m } else { m.conjugate() })
            .collect();
        for m in keys {
            let a = self.coeff(&m);
            if m.is_mean() {
                if a.im != 0.0 {
                    self.terms.insert(m, Complex64::new(a.re, 0.0));
                }
                continue;
            }
            let b = self.coeff(&m.conjugate());
            let avg = (a + b.conj()) * 0.5;
            if avg.re == 0.0 && avg.im == 0.0 {
                self.terms.remove(&m);
                self.terms.remove(&m.conjugate());
            } else {
                self.terms.insert(m, avg);
                self.terms.insert(m.conjugate(), avg.conj());
            }
        }
        self.drop_exact_zeros();
    }

    /// Parts with `|α| = 0` and `|α| = 1` in the `k = 0` sector: `c(w)` and `ν(w)`.
    pub fn mean_affine_parts(&self) -> (Self, Vec<Self>) {
        let mut c = self.empty_like(self.real);
        let mut nu: Vec<Self> = (0..self.n).map(|_| self.empty_like(self.real)).collect();
        for (m, v) in &self.terms {
            if !m.is_mean() {
                continue;
            }
            match m.alpha_deg() {
                0 => {
                    c.terms.insert(*m, *v);
                }
                1 => {
                    let i = m.alpha.iter().position(|&a| a == 1).expect("degree one");
                    let mut mm = *m;
                    mm.alpha[i] = 0;
                    nu[i].terms.insert(mm, *v);
                }
                _ => {}
            }
        }
        (c, nu)
    }

    /// Restriction to `I = 0` (keeps `α = 0` terms).
    pub fn at_zero_action(&self) -> Self {
        let mut out = self.empty_like(self.real);
        out.terms = self
            .terms
            .iter()
            .filter(|(m, _)| m.alpha_deg() == 0)
            .map(|(m, c)| (*m, *c))
            .collect();
        out
    }

    /// Restriction to `w = 0` (keeps `β = 0` terms).
    pub fn at_zero_param(&self) -> Self {
        let mut out = self.empty_like(self.real);
        out.terms = self
            .terms
            .iter()
            .filter(|(m, _)| m.beta_deg() == 0)
            .map(|(m, c)| (*m, *c))
            .collect();
        out
    }

    /// Coefficient-wise maximum difference.
    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for (m, c) in &self.terms {
            d = d.max((c - other.coeff(m)).norm());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                d = d.max(c.norm());
            }
        }
        d
    }
}

/// Output of [`FourierTaylor::linearize_in_i`].
#[derive(Debug, Clone)]
pub struct Linearization {
    pub affine: FourierTaylor,
    pub tail: FourierTaylor,
    /// Exact majorant norm of `tail` at action radius `c·r`.
    pub tail_norm: f64,
    /// `c²(1−c)⁻¹ |f|`.
    pub bound: f64,
}

/// Result of a truncated Lie series `Σ_{m≤M} L^m g / m!`, `L g = {g, F}`.
#[derive(Debug, Clone)]
pub struct LieSeries {
    pub value: FourierTaylor,
    pub order: usize,
    /// Estimated norm of the omitted tail on the target domain.
    pub tail_estimate: f64,
    /// Caps truncation incurred by the brackets.
    pub truncation: Discard,
}

/// Transports `g` along the time-one flow of `generator`: `g ∘ X¹_F`.
///
/// Terms are added until one has norm at most `tol` on `target`; the tail
/// beyond it is estimated geometrically from the last two term norms.
pub fn lie_series(
    g: &FourierTaylor,
    generator: &FourierTaylor,
    target: &DomainParams,
    tol: f64,
    max_order: usize,
) -> Result<LieSeries> {
    lie_series_with_first(g, None, generator, target, tol, max_order)
}

/// Same as [`lie_series`], with the first-order term optionally supplied
/// (used when `g` contains a part whose bracket is known in closed form).
pub fn lie_series_with_first(
    g: &FourierTaylor,
    first: Option<FourierTaylor>,
    generator: &FourierTaylor,
    target: &DomainParams,
    tol: f64,
    max_order: usize,
) -> Result<LieSeries> {
    let mut truncation = Discard::none();
    let mut sum = g.clone();
    if generator.is_empty() {
        return Ok(LieSeries {
            value: sum,
            order: 0,
            tail_estimate: 0.0,
            truncation,
        });
    }
    let mut term = match first {
        Some(t) => t,
        None => {
            let (t, d) = g.bracket(generator)?;
            truncation.absorb(&d);
            t
        }
    };
    let mut prev_norm = f64::INFINITY;
    let mut order = 1;
    loop {
        let norm = term.norm(target);
        sum = sum.add(&term)?;
        if norm <= tol || order >= max_order || term.is_empty() {
            let ratio = if prev_norm.is_finite() && prev_norm > 0.0 {
                norm / prev_norm
            } else {
                0.0
            };
            let tail_estimate = if term.is_empty() {
                0.0
            } else if ratio < 0.5 {
                norm * ratio / (1.0 - ratio)
            } else {
                // slow or unknown decay: charge the last term again
                norm
            };
            return Ok(LieSeries {
                value: sum,
                order,
                tail_estimate,
                truncation,
            });
        }
        order += 1;
        let (next, d) = term.bracket(generator)?;
        truncation.absorb(&d.scaled(1.0 / order as f64));
        term = next.scale(1.0 / order as f64);
        prev_norm = norm;
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    k: Vec<i32>,
    alpha: Vec<u8>,
    beta: Vec<u8>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FourierTaylorJson {
    n: usize,
    cutoff_k: u32,
    deg_i: u32,
    deg_w: u32,
    #[serde(default)]
    real: bool,
    terms: Vec<TermJson>,
}

impl Serialize for FourierTaylor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.n;
        FourierTaylorJson {
            n,
            cutoff_k: self.caps.cutoff_k,
            deg_i: self.caps.deg_i,
            deg_w: self.caps.deg_w,
            real: self.real,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| TermJson {
                    k: m.k[..n].to_vec(),
                    alpha: m.alpha[..n].to_vec(),
                    beta: m.beta[..n].to_vec(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierTaylor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let j = FourierTaylorJson::deserialize(d)?;
        if !(1..=MAX_DIM).contains(&j.n) {
            return Err(D::Error::custom(format!("dimension {} unsupported", j.n)));
        }
        let caps = Caps::new(j.cutoff_k, j.deg_i, j.deg_w);
        let mut terms = Vec::with_capacity(j.terms.len());
        for t in j.terms {
            if t.k.len() != j.n || t.alpha.len() != j.n || t.beta.len() != j.n {
                return Err(D::Error::custom("term length does not match n"));
            }
            let m = Monomial::new(&t.k, &t.alpha, &t.beta);
            if !caps.admits(&m) {
                return Err(D::Error::custom(format!("term {:?} exceeds caps", t.k)));
            }
            terms.push((m, Complex64::new(t.re, t.im)));
        }
        let mut f = FourierTaylor {
            n: j.n,
            caps,
            real: false,
            terms: BTreeMap::new(),
        };
        for (m, c) in terms {
            f.insert_add(m, c);
        }
        if j.real {
            let defect = f.reality_defect();
            if defect > 1e-12 * f.terms.values().map(|c| c.norm()).fold(1e-300, f64::max) {
                return Err(D::Error::custom(format!(
                    "coefficients flagged real are not conjugate-symmetric (defect {defect:e})"
                )));
            }
            f.enforce_reality();
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> Caps {
        Caps::new(8, 2, 2)
    }

    #[test]
    fn norm_examples() {
        let d = DomainParams::new(0.5, 0.1, 0.1).unwrap();
        let f = FourierTaylor::cos_term(2, caps(), 1.0, &[1, 0], &[], &[]);
        assert!((f.norm(&d) - (0.2 * PI).exp()).abs() < 1e-14);
        assert_eq!(FourierTaylor::constant(2, caps(), -3.0).norm(&d), 3.0);
        assert_eq!(FourierTaylor::action(2, caps(), 0).norm(&d), 0.5);
    }

    #[test]
    fn bracket_sign() {
        let i1 = FourierTaylor::action(2, caps(), 0);
        let s = FourierTaylor::sin_term(2, caps(), 1.0, &[1, 0], &[], &[]);
        let (b, _) = i1.bracket(&s).unwrap();
        let expect = FourierTaylor::cos_term(2, caps(), -TWO_PI, &[1, 0], &[], &[]);
        assert!(b.max_coeff_diff(&expect) < 1e-14);
        let (z, _) = s.bracket(&s).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn bracket_with_linear_form_is_lie_derivative() {
        let v = [1.0, 0.3];
        let mut n_v = FourierTaylor::zero(2, caps());
        for (i, &vi) in v.iter().enumerate() {
            n_v = n_v.axpy(vi, &FourierTaylor::action(2, caps(), i)).unwrap();
        }
        let g = FourierTaylor::cos_term(2, caps(), 0.7, &[2, -1], &[1, 0], &[])
            .add(&FourierTaylor::sin_term(2, caps(), 0.2, &[0, 3], &[], &[1, 0]))
            .unwrap();
        let (b, _) = g.bracket(&n_v).unwrap();
        assert!(b.max_coeff_diff(&g.lie_derivative(&v)) < 1e-14);
    }

    #[test]
    fn homological_example() {
        let v = RationalVector::new(1, vec![1, 0]).unwrap();
        let rhs = FourierTaylor::sin_term(2, caps(), 1.0, &[1, 0], &[], &[]);
        let f = rhs.solve_homological(&v).unwrap();
        let expect = FourierTaylor::cos_term(2, caps(), -1.0 / TWO_PI, &[1, 0], &[], &[]);
        assert!(f.max_coeff_diff(&expect) < 1e-15);
        let bad = FourierTaylor::cos_term(2, caps(), 1.0, &[0, 1], &[], &[]);
        assert!(matches!(
            bad.solve_homological(&v),
            Err(KamError::AveragedModePresent { .. })
        ));
    }

    #[test]
    fn linearize_examples() {
        let d = DomainParams::new(1.0, 0.1, 0.1).unwrap();
        let (sq, _) = FourierTaylor::action(2, caps(), 0)
            .mul(&FourierTaylor::action(2, caps(), 0))
            .unwrap();
        let lin = sq.linearize_in_i(&d, 0.5).unwrap();
        assert!(lin.affine.is_empty());
        assert!((lin.tail_norm - 0.25).abs() < 1e-15);
        assert!((lin.bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cauchy_examples() {
        let d = DomainParams::new(1.0, 0.2, 0.1).unwrap();
        let f = FourierTaylor::cos_term(2, caps(), 1.0, &[1, 0], &[], &[]);
        let b = f.cauchy_shrink_bound(&d, Direction::Angle, 0.1).unwrap();
        assert!((b - TWO_PI * (0.2 * PI).exp()).abs() < 1e-12);
        assert!(b <= f.norm(&d) / 0.1);
        let i1 = FourierTaylor::action(2, caps(), 0);
        assert_eq!(i1.cauchy_shrink_bound(&d, Direction::Action, 0.5).unwrap(), 1.0);
        assert!(i1.cauchy_shrink_bound(&d, Direction::Action, 1.0).is_err());
        assert_eq!(
            FourierTaylor::constant(2, caps(), 2.0)
                .cauchy_shrink_bound(&d, Direction::Angle, 0.05)
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn json_round_trip() {
        let f = FourierTaylor::cos_term(2, caps(), 0.3, &[1, -2], &[1, 0], &[0, 1]);
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"cutoffK\":8"));
        let g: FourierTaylor = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn evaluate_matches_closed_form() {
        let f = FourierTaylor::cos_term(2, caps(), 2.0, &[1, 1], &[1, 0], &[]);
        let v = f.evaluate_real(&[0.3, 0.0], &[0.1, 0.2], &[0.0, 0.0]);
        assert!((v - 0.6 * (TWO_PI * 0.3).cos()).abs() < 1e-14);
    }

    #[test]
    fn substitute_param_shift() {
        let caps = Caps::new(4, 1, 2);
        // f = w₀² ; w ← w + 0.1
        let mut f = FourierTaylor::param(2, caps, 0);
        f = f.mul(&f).unwrap().0;
        let g: Vec<_> = (0..2)
            .map(|i| {
                FourierTaylor::param(2, caps, i)
                    .add(&FourierTaylor::constant(2, caps, 0.1))
                    .unwrap()
            })
            .collect();
        let (h, _) = f.substitute_param(&g).unwrap();
        let val = h.evaluate_real(&[0.0; 2], &[0.0; 2], &[0.05, 0.0]);
        assert!((val - 0.15f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn prune_respects_budget() {
        let d = DomainParams::new(1.0, 0.1, 0.1).unwrap();
        let f = FourierTaylor::cos_term(2, caps(), 1.0, &[1, 0], &[], &[])
            .add(&FourierTaylor::cos_term(2, caps(), 1e-9, &[3, 1], &[], &[]))
            .unwrap();
        let (g, dropped) = f.prune(&d, 1e-6);
        assert_eq!(g.len(), 2);
        assert!(dropped > 0.0 && dropped <= 1e-6);
        assert!((f.sub(&g).unwrap().norm(&d) - dropped).abs() < 1e-20);
    }
}
