//! Dense real polynomials in the parameter offset `w`, graded by total degree.
//!
//! Used where high degrees are needed (inverting the frequency map), which
//! would be slow in the sparse representation.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{KamError, Result};
use crate::series::{Caps, Discard, FourierTaylor, Monomial, MAX_DIM};

/// Monomials of total degree `≤ degree` in `n` variables, in graded order,
/// with a precomputed product index.
#[derive(Debug)]
pub struct GradedBasis {
    n: usize,
    degree: u32,
    exps: Vec<[u8; MAX_DIM]>,
    /// `offsets[d]` is the index of the first monomial of degree `d`.
    offsets: Vec<usize>,
    /// `mul[i][j]` is the index of `exps[i] + exps[j]` for every `j` with
    /// `deg(i) + deg(j) ≤ degree`.
    mul: Vec<Vec<u32>>,
}

impl GradedBasis {
    pub fn new(n: usize, degree: u32) -> Arc<Self> {
        assert!((1..=MAX_DIM).contains(&n));
        let mut exps = Vec::new();
        let mut offsets = Vec::with_capacity(degree as usize + 2);
        for d in 0..=degree {
            offsets.push(exps.len());
            let mut e = [0u8; MAX_DIM];
            fill(&mut exps, &mut e, 0, n, d);
        }
        offsets.push(exps.len());
        let index: HashMap<[u8; MAX_DIM], u32> =
            exps.iter().enumerate().map(|(i, e)| (*e, i as u32)).collect();
        let deg = |e: &[u8; MAX_DIM]| e.iter().map(|&x| x as u32).sum::<u32>();
        let mul = exps
            .iter()
            .map(|a| {
                let limit = offsets[(degree - deg(a)) as usize + 1];
                exps[..limit]
                    .iter()
                    .map(|b| {
                        let mut s = [0u8; MAX_DIM];
                        for t in 0..MAX_DIM {
                            s[t] = a[t] + b[t];
                        }
                        index[&s]
                    })
                    .collect()
            })
            .collect();
        Arc::new(Self {
            n,
            degree,
            exps,
            offsets,
            mul,
        })
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    fn index_of(&self, e: &[u8; MAX_DIM]) -> Option<usize> {
        let d: u32 = e.iter().map(|&x| x as u32).sum();
        if d > self.degree {
            return None;
        }
        (self.offsets[d as usize]..self.offsets[d as usize + 1]).find(|&i| &self.exps[i] == e)
    }
}

fn fill(out: &mut Vec<[u8; MAX_DIM]>, e: &mut [u8; MAX_DIM], pos: usize, n: usize, remaining: u32) {
    if pos == n - 1 {
        e[pos] = remaining as u8;
        out.push(*e);
        e[pos] = 0;
        return;
    }
    for a in (0..=remaining).rev() {
        e[pos] = a as u8;
        fill(out, e, pos + 1, n, remaining - a);
    }
    e[pos] = 0;
}

/// Real polynomial `Σ c_e w^e` with `|e| ≤ degree`.
#[derive(Debug, Clone)]
pub struct ParamPoly {
    basis: Arc<GradedBasis>,
    coeffs: Vec<f64>,
}

impl ParamPoly {
    pub fn zero(basis: &Arc<GradedBasis>) -> Self {
        Self {
            basis: basis.clone(),
            coeffs: vec![0.0; basis.len()],
        }
    }

    pub fn constant(basis: &Arc<GradedBasis>, c: f64) -> Self {
        let mut p = Self::zero(basis);
        p.coeffs[0] = c;
        p
    }

    /// The coordinate `w_i`.
    pub fn var(basis: &Arc<GradedBasis>, i: usize) -> Self {
        let mut p = Self::zero(basis);
        if basis.degree >= 1 {
            let mut e = [0u8; MAX_DIM];
            e[i] = 1;
            let idx = basis.index_of(&e).expect("degree one monomial");
            p.coeffs[idx] = 1.0;
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.basis.n
    }

    pub fn basis(&self) -> &Arc<GradedBasis> {
        &self.basis
    }

    pub fn coeff(&self, e: &[u8]) -> f64 {
        let mut key = [0u8; MAX_DIM];
        key[..e.len()].copy_from_slice(e);
        self.basis.index_of(&key).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn add(&self, o: &Self) -> Self {
        self.axpy(1.0, o)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.axpy(-1.0, o)
    }

    pub fn axpy(&self, a: f64, o: &Self) -> Self {
        let mut out = self.clone();
        for (x, y) in out.coeffs.iter_mut().zip(&o.coeffs) {
            *x += a * y;
        }
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        for x in out.coeffs.iter_mut() {
            *x *= a;
        }
        out
    }

    /// Product truncated to the basis degree.
    pub fn mul(&self, o: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len()];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &t) in self.basis.mul[i].iter().enumerate() {
                out[t as usize] += a * o.coeffs[j];
            }
        }
        Self {
            basis: self.basis.clone(),
            coeffs: out,
        }
    }

    /// `Σ |c_e| h^{|e|}`.
    pub fn norm(&self, h: f64) -> f64 {
        let mut total = 0.0;
        for d in 0..=self.basis.degree as usize {
            let hp = h.powi(d as i32);
            for i in self.basis.offsets[d]..self.basis.offsets[d + 1] {
                total += self.coeffs[i].abs() * hp;
            }
        }
        total
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(&self.basis);
        for (i, e) in self.basis.exps.iter().enumerate() {
            if e[var] > 0 && self.coeffs[i] != 0.0 {
                let mut f = *e;
                f[var] -= 1;
                let j = self.basis.index_of(&f).expect("lower degree exists");
                out.coeffs[j] += self.coeffs[i] * e[var] as f64;
            }
        }
        out
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let n = self.basis.n;
        let d = self.basis.degree as usize;
        let pows: Vec<Vec<f64>> = w[..n]
            .iter()
            .map(|&x| {
                let mut row = vec![1.0; d + 1];
                for p in 1..=d {
                    row[p] = row[p - 1] * x;
                }
                row
            })
            .collect();
        self.basis
            .exps
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(e, c)| c * (0..n).map(|t| pows[t][e[t] as usize]).product::<f64>())
            .sum()
    }

    /// `self(g(w))` where `g[i]` share this polynomial's basis.
    pub fn compose(&self, g: &[Self]) -> Self {
        let n = self.basis.n;
        let max_pow: Vec<u8> = (0..n)
            .map(|t| {
                self.basis
                    .exps
                    .iter()
                    .zip(&self.coeffs)
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(e, _)| e[t])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let powers: Vec<Vec<Self>> = (0..n)
            .map(|t| {
                let mut row = vec![Self::constant(&g[t].basis, 1.0)];
                for p in 1..=max_pow[t] as usize {
                    row.push(row[p - 1].mul(&g[t]));
                }
                row
            })
            .collect();
        let mut out = Self::zero(&g[0].basis);
        for (e, &c) in self.basis.exps.iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let mut prod: Option<Self> = None;
            for t in 0..n {
                if e[t] == 0 {
                    continue;
                }
                let factor = &powers[t][e[t] as usize];
                prod = Some(match prod {
                    None => factor.clone(),
                    Some(p) => p.mul(factor),
                });
            }
            match prod {
                None => out.coeffs[0] += c,
                Some(p) => {
                    for (x, y) in out.coeffs.iter_mut().zip(&p.coeffs) {
                        *x += c * y;
                    }
                }
            }
        }
        out
    }

    /// Reads the `w`-only part of `f`; requires real coefficients.
    pub fn from_series(f: &FourierTaylor, basis: &Arc<GradedBasis>) -> Result<Self> {
        let mut p = Self::zero(basis);
        for (m, c) in f.iter() {
            if !m.is_mean() || m.alpha_deg() > 0 {
                return Err(KamError::InvalidInput(
                    "parameter polynomial must depend on w only".into(),
                ));
            }
            if c.im.abs() > 1e-14 * c.norm().max(1e-300) && c.im.abs() > 1e-300 {
                return Err(KamError::Reality(c.im.abs()));
            }
            let idx = basis.index_of(&m.beta).ok_or_else(|| {
                KamError::InvalidInput(format!(
                    "degree {} exceeds polynomial degree {}",
                    m.beta_deg(),
                    basis.degree
                ))
            })?;
            p.coeffs[idx] += c.re;
        }
        Ok(p)
    }

    /// Converts back, truncating to `caps.deg_w`.
    pub fn to_series(&self, caps: Caps) -> (FourierTaylor, Discard) {
        let terms = self
            .basis
            .exps
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(e, c)| {
                (
                    Monomial {
                        k: [0; MAX_DIM],
                        alpha: [0; MAX_DIM],
                        beta: *e,
                    },
                    Complex64::new(*c, 0.0),
                )
            });
        FourierTaylor::from_terms(self.basis.n, caps, true, terms).expect("dimension checked")
    }
}
