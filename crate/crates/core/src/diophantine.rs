//! Arithmetic of the frequency vector.
//!
//! Everything downstream conditions on how well `ω₀ = (1, ω̄₀)` is approximated
//! by rationals. This module evaluates the worst small divisor `Ψ(Q)`, the
//! derived `Δ(Q) = QΨ(Q)` and its generalized inverse `Δ*`, the truncated
//! Bruno-Rüssmann tail that drives the choice of `Q₀`, and builds `n` rational
//! approximations of `ω₀` whose scaled numerators form a basis of `Zⁿ`.
//!
//! All quantities are measured, never taken from theoretical constants: a
//! [`RationalBasis`] carries its own exactly recomputed quality record.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};

/// Target frequency `ω₀ = (1, ω̄₀)` with `|ω̄₀|_∞ ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyVector {
    omega: Vec<f64>,
}

impl FrequencyVector {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.len() < 2 {
            return Err(KamError::InvalidInput(format!(
                "frequency needs dimension ≥ 2, got {}",
                omega.len()
            )));
        }
        if omega.len() > crate::series::MAX_DIM {
            return Err(KamError::InvalidInput(format!(
                "dimension {} exceeds supported maximum {}",
                omega.len(),
                crate::series::MAX_DIM
            )));
        }
        if omega[0] != 1.0 {
            return Err(KamError::InvalidInput(format!(
                "first frequency component must be exactly 1, got {}",
                omega[0]
            )));
        }
        for (j, &w) in omega.iter().enumerate().skip(1) {
            if !w.is_finite() || w.abs() > 1.0 {
                return Err(KamError::InvalidInput(format!(
                    "frequency component {j} = {w} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { omega })
    }

    /// `(1, (√5 − 1)/2)`.
    pub fn golden() -> Self {
        Self {
            omega: vec![1.0, (5f64.sqrt() - 1.0) / 2.0],
        }
    }

    /// `(1, √2 − 1)`.
    pub fn sqrt2() -> Self {
        Self {
            omega: vec![1.0, 2f64.sqrt() - 1.0],
        }
    }

    /// `(1, 2^{1/3} − 1, 4^{1/3} − 1)`, a basis of a cubic field shifted into `[-1, 1]`.
    pub fn cubic_root() -> Self {
        let c = 2f64.cbrt();
        Self {
            omega: vec![1.0, c - 1.0, c * c - 1.0],
        }
    }

    /// Parses a preset name (`golden`, `sqrt2`, `cubic-root`) or a comma
    /// separated list of decimals.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "golden" => Ok(Self::golden()),
            "sqrt2" => Ok(Self::sqrt2()),
            "cubic-root" | "cubic_root" => Ok(Self::cubic_root()),
            other => {
                let values = other
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|e| {
                            KamError::InvalidInput(format!("bad frequency component `{t}`: {e}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(values)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn dot(&self, k: &[i64]) -> f64 {
        k.iter().zip(&self.omega).map(|(&a, &w)| a as f64 * w).sum()
    }
}

impl TryFrom<Vec<f64>> for FrequencyVector {
    type Error = KamError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FrequencyVector> for Vec<f64> {
    fn from(f: FrequencyVector) -> Self {
        f.omega
    }
}

/// Rational vector `v = numerators / q` with `v[0] = 1`.
///
/// `q` is a period of the linear flow along `v`, not necessarily the reduced
/// denominator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RationalVector {
    pub q: i64,
    pub numerators: Vec<i64>,
}

impl RationalVector {
    pub fn new(q: i64, numerators: Vec<i64>) -> Result<Self> {
        if q < 1 {
            return Err(KamError::InvalidInput(format!(
                "denominator must be positive, got {q}"
            )));
        }
        if numerators.first() != Some(&q) {
            return Err(KamError::InvalidInput(
                "first numerator must equal the denominator".into(),
            ));
        }
        Ok(Self { q, numerators })
    }

    pub fn dim(&self) -> usize {
        self.numerators.len()
    }

    pub fn value(&self) -> Vec<f64> {
        self.numerators
            .iter()
            .map(|&p| p as f64 / self.q as f64)
            .collect()
    }

    /// `k·(q v)` as an exact integer.
    pub fn scaled_dot(&self, k: &[i32]) -> i64 {
        k.iter()
            .zip(&self.numerators)
            .map(|(&a, &p)| a as i64 * p)
            .sum()
    }

    /// Sup-norm distance `|ω − v|`.
    pub fn approx_error(&self, omega: &[f64]) -> f64 {
        self.numerators
            .iter()
            .zip(omega)
            .map(|(&p, &w)| (w - p as f64 / self.q as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Measured quality of one basis vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxQuality {
    pub q: i64,
    pub approx_error: f64,
    /// `q · Q · |ω₀ − v|`.
    pub score: f64,
}

/// `n` rational approximations whose scaled numerators `q_j v_j` form a basis of `Zⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalBasis {
    pub vectors: Vec<RationalVector>,
    pub quality: Vec<ApproxQuality>,
    pub scale: f64,
    pub determinant: i64,
}

impl RationalBasis {
    pub fn max_score(&self) -> f64 {
        self.quality.iter().map(|q| q.score).fold(0.0, f64::max)
    }

    pub fn max_denominator(&self) -> i64 {
        self.vectors.iter().map(|v| v.q).max().unwrap_or(0)
    }

    /// Integer matrix with columns `q_j v_j`, stored row-major.
    pub fn numerator_matrix(&self) -> Vec<Vec<i64>> {
        let n = self.vectors.len();
        (0..n)
            .map(|row| self.vectors.iter().map(|v| v.numerators[row]).collect())
            .collect()
    }
}

/// Limits on the exhaustive `k`-lattice enumeration behind `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiBudget {
    pub max_dim: usize,
    pub max_l1: u64,
}

impl Default for PsiBudget {
    fn default() -> Self {
        Self {
            max_dim: 4,
            max_l1: 200,
        }
    }
}

impl PsiBudget {
    fn check(&self, n: usize, q: u64) -> Result<()> {
        if n > self.max_dim {
            return Err(KamError::Budget(format!(
                "dimension {n} exceeds enumeration cap {}",
                self.max_dim
            )));
        }
        if q > self.max_l1 {
            return Err(KamError::Budget(format!(
                "|k|_1 ≤ {q} exceeds enumeration cap {}",
                self.max_l1
            )));
        }
        Ok(())
    }
}

/// Value of `Ψ(Q)` together with the integer vector attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    /// `+∞` when `ω₀` is resonant within `|k|_1 ≤ Q`.
    pub value: f64,
    pub minimizer: Vec<i64>,
    /// `min |k·ω₀|` over the enumerated shell.
    pub min_divisor: f64,
}

impl PsiValue {
    pub fn is_resonant(&self) -> bool {
        self.value.is_infinite()
    }
}

fn resonance_threshold(l1: u64) -> f64 {
    4.0 * f64::EPSILON * l1 as f64
}

/// Calls `f` on every `k ∈ Zⁿ` with `|k|_1 = m`, taking one of `±k` (first
/// nonzero entry positive).
pub(crate) fn for_each_in_shell(n: usize, m: u64, mut f: impl FnMut(&[i64])) {
    fn rec(pos: usize, remaining: i64, leading_zero: bool, k: &mut Vec<i64>, f: &mut dyn FnMut(&[i64])) {
        let n = k.len();
        if pos == n - 1 {
            if remaining == 0 {
                if !leading_zero {
                    k[pos] = 0;
                    f(k);
                }
            } else {
                k[pos] = remaining;
                f(k);
                if !leading_zero {
                    k[pos] = -remaining;
                    f(k);
                }
            }
            return;
        }
        for a in 0..=remaining {
            if a == 0 {
                k[pos] = 0;
                rec(pos + 1, remaining, leading_zero, k, f);
            } else {
                k[pos] = a;
                rec(pos + 1, remaining - a, false, k, f);
                if !leading_zero {
                    k[pos] = -a;
                    rec(pos + 1, remaining - a, false, k, f);
                }
            }
        }
    }
    if m == 0 || n == 0 {
        return;
    }
    let mut k = vec![0i64; n];
    rec(0, m as i64, true, &mut k, &mut f);
}

/// `Ψ(Q) = max { |k·ω₀|⁻¹ : 0 < |k|_1 ≤ ⌊Q⌋ }` by exhaustive enumeration.
pub fn psi(omega: &FrequencyVector, q: f64, budget: &PsiBudget) -> Result<PsiValue> {
    if !(q >= 1.0) {
        return Err(KamError::InvalidInput(format!("Ψ needs Q ≥ 1, got {q}")));
    }
    let q_int = q.floor() as u64;
    budget.check(omega.dim(), q_int)?;
    let mut best = f64::INFINITY;
    let mut argmin = Vec::new();
    for m in 1..=q_int {
        let threshold = resonance_threshold(m);
        for_each_in_shell(omega.dim(), m, |k| {
            let d = omega.dot(k).abs();
            let d = if d <= threshold { 0.0 } else { d };
            if d < best {
                best = d;
                argmin = k.to_vec();
            }
        });
    }
    Ok(PsiValue {
        value: if best == 0.0 { f64::INFINITY } else { 1.0 / best },
        minimizer: argmin,
        min_divisor: best,
    })
}

/// Sampled `Ψ`, `Δ` and truncated Bruno-Rüssmann tails on the integer grid `1..=q_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticProfile {
    pub omega: FrequencyVector,
    pub q_max: u64,
    /// `psi[Q-1] = Ψ(Q)`.
    pub psi: Vec<f64>,
    /// `delta[Q-1] = Δ(Q)`.
    pub delta: Vec<f64>,
    /// `minimizers[Q-1]` attains `Ψ(Q)`.
    pub minimizers: Vec<Vec<i64>>,
    /// `tails[Q0-1]` is the tail value at cutoff `Δ(q_max)`.
    pub tails: Vec<f64>,
}

/// Truncated `Q₀⁻¹ + (ln 2)⁻¹ ∫_{Δ(Q₀)}^{X} dx / (x Δ*(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub q0: u64,
    pub value: f64,
    pub integral: f64,
    pub x_cut: f64,
    /// Always true: the integral to `+∞` is replaced by one up to `x_cut`, so
    /// the value is a heuristic within the cutoff.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q0Choice {
    pub q0: u64,
    pub tail: TailEstimate,
    pub threshold: f64,
}

impl ArithmeticProfile {
    pub fn build(omega: &FrequencyVector, q_max: u64, budget: &PsiBudget) -> Result<Self> {
        if q_max < 1 {
            return Err(KamError::InvalidInput("q_max must be ≥ 1".into()));
        }
        budget.check(omega.dim(), q_max)?;
        let shells: Vec<(f64, Vec<i64>)> = {
            use rayon::prelude::*;
            (1..=q_max)
                .into_par_iter()
                .map(|m| {
                    let threshold = resonance_threshold(m);
                    let mut best = f64::INFINITY;
                    let mut argmin = Vec::new();
                    for_each_in_shell(omega.dim(), m, |k| {
                        let d = omega.dot(k).abs();
                        let d = if d <= threshold { 0.0 } else { d };
                        if d < best {
                            best = d;
                            argmin = k.to_vec();
                        }
                    });
                    (best, argmin)
                })
                .collect()
        };
        let mut psi = Vec::with_capacity(q_max as usize);
        let mut minimizers = Vec::with_capacity(q_max as usize);
        let mut best = f64::INFINITY;
        let mut argmin = Vec::new();
        for (d, k) in shells {
            if d < best {
                best = d;
                argmin = k;
            }
            if best == 0.0 {
                return Err(KamError::Resonant {
                    k: argmin,
                    value: 0.0,
                });
            }
            psi.push(1.0 / best);
            minimizers.push(argmin.clone());
        }
        let delta: Vec<f64> = psi
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .collect();
        let mut profile = Self {
            omega: omega.clone(),
            q_max,
            psi,
            delta,
            minimizers,
            tails: Vec::new(),
        };
        let x_cut = profile.delta_max();
        profile.tails = (1..=q_max)
            .map(|q0| profile.bruno_russmann_tail(q0, x_cut).map(|t| t.value))
            .collect::<Result<_>>()?;
        Ok(profile)
    }

    pub fn psi_at(&self, q: u64) -> f64 {
        self.psi[(q - 1) as usize]
    }

    pub fn delta_at(&self, q: u64) -> f64 {
        self.delta[(q - 1) as usize]
    }

    pub fn delta_max(&self) -> f64 {
        *self.delta.last().expect("non-empty profile")
    }

    /// `Δ*(x)`: the largest sampled `Q` with `Δ(Q) ≤ x`.
    pub fn delta_star(&self, x: f64) -> Result<u64> {
        let delta_one = self.delta[0];
        if !(x >= delta_one) {
            return Err(KamError::DeltaDomain { x, delta_one });
        }
        if x > self.delta_max() {
            return Err(KamError::TableTooSmall {
                needed: x,
                available: self.delta_max(),
                q_max: self.q_max,
            });
        }
        // number of entries with Δ(Q) ≤ x; Δ is strictly increasing
        Ok(self.delta.partition_point(|&d| d <= x) as u64)
    }

    /// `Q₀⁻¹ + (ln 2)⁻¹ ∫_{Δ(Q₀)}^{x_cut} dx/(x Δ*(x))`.
    ///
    /// `Δ*` is constant (equal to `Q`) on each `[Δ(Q), Δ(Q+1))`, so the
    /// integral is summed exactly piece by piece.
    pub fn bruno_russmann_tail(&self, q0: u64, x_cut: f64) -> Result<TailEstimate> {
        if q0 < 1 || q0 > self.q_max {
            return Err(KamError::InvalidInput(format!(
                "Q0 = {q0} outside table 1..={}",
                self.q_max
            )));
        }
        let start = self.delta_at(q0);
        if x_cut < start {
            return Err(KamError::InvalidInput(format!(
                "cutoff {x_cut:e} below Δ(Q0) = {start:e}"
            )));
        }
        if x_cut > self.delta_max() {
            return Err(KamError::TableTooSmall {
                needed: x_cut,
                available: self.delta_max(),
                q_max: self.q_max,
            });
        }
        let mut integral = 0.0;
        let mut q = q0;
        while q <= self.q_max {
            let lo = self.delta_at(q);
            if lo >= x_cut {
                break;
            }
            let hi = if q < self.q_max {
                self.delta_at(q + 1).min(x_cut)
            } else {
                x_cut
            };
            integral += (hi / lo).ln() / q as f64;
            q += 1;
        }
        Ok(TailEstimate {
            q0,
            value: 1.0 / q0 as f64 + integral / std::f64::consts::LN_2,
            integral,
            x_cut,
            truncated: true,
        })
    }

    /// Smallest `Q₀` with `tail(Q₀) ≤ s / (2C)`.
    pub fn choose_q0(&self, s: f64, c: f64, x_cut: Option<f64>) -> Result<Q0Choice> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(KamError::InvalidInput(format!("need 0 < s ≤ 1, got {s}")));
        }
        if !(c >= 1.0) {
            return Err(KamError::InvalidInput(format!("need C ≥ 1, got {c}")));
        }
        let x_cut = x_cut.unwrap_or_else(|| self.delta_max());
        let threshold = s / (2.0 * c);
        let mut best: Option<TailEstimate> = None;
        for q0 in 1..=self.q_max {
            if self.delta_at(q0) > x_cut {
                break;
            }
            let tail = self.bruno_russmann_tail(q0, x_cut)?;
            if tail.value <= threshold {
                return Ok(Q0Choice {
                    q0,
                    tail,
                    threshold,
                });
            }
            if best.is_none_or(|b| tail.value < b.value) {
                best = Some(tail);
            }
        }
        let best = best.expect("table has at least Q0 = 1");
        Err(KamError::Q0Unsatisfiable {
            best_tail: best.value,
            best_q0: best.q0,
            threshold,
        })
    }
}

/// Search limits for [`rational_basis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisBudget {
    /// Denominators range over `1..=⌈c_den Ψ(Q)⌉`.
    pub c_den: f64,
    pub max_den: u64,
    /// Numerators range over `round(q ω̄₀) ± radius`.
    pub numerator_radius: i64,
    /// Cap on determinant evaluations.
    pub max_subsets: u64,
    pub psi: PsiBudget,
}

impl Default for BasisBudget {
    fn default() -> Self {
        Self {
            c_den: 1.0,
            max_den: 1 << 20,
            numerator_radius: 1,
            max_subsets: 20_000_000,
            psi: PsiBudget::default(),
        }
    }
}

/// Exact determinant of a small integer matrix (fraction-free elimination).
pub fn integer_determinant(m: &[Vec<i64>]) -> i64 {
    let n = m.len();
    let mut a: Vec<Vec<i128>> = m
        .iter()
        .map(|row| row.iter().map(|&x| x as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| a[r][col] != 0) else {
            return 0;
        };
        if pivot != col {
            a.swap(pivot, col);
            sign = -sign;
        }
        for r in col + 1..n {
            for c in col + 1..n {
                a[r][c] = (a[r][c] * a[col][col] - a[r][col] * a[col][c]) / prev;
            }
            a[r][col] = 0;
        }
        prev = a[col][col];
    }
    (sign * a[n - 1][n - 1]) as i64
}

struct Candidate {
    vector: RationalVector,
    score: f64,
    error: f64,
}

/// `n` rational approximations of `ω₀` at scale `Q` with `det[q_j v_j] = ±1`,
/// minimizing `max_j q_j Q |ω₀ − v_j|` over the candidate pool.
///
/// Candidates are the nearest-integer vectors `round(q ω₀)/q` and their
/// neighbours within `numerator_radius`, for every `q ≤ ⌈c_den Ψ(Q)⌉`. They
/// are ranked by score and the first `n`-subset (in order of its worst
/// member) with unit determinant is returned, so the result is optimal over
/// the pool.
pub fn rational_basis(omega: &FrequencyVector, q: f64, budget: &BasisBudget) -> Result<RationalBasis> {
    if !(q >= 1.0) {
        return Err(KamError::InvalidInput(format!("need Q ≥ 1, got {q}")));
    }
    let n = omega.dim();
    let p = psi(omega, q, &budget.psi)?;
    if p.is_resonant() {
        return Err(KamError::Resonant {
            k: p.minimizer,
            value: 0.0,
        });
    }
    let q_cap = ((budget.c_den * p.value).ceil() as u64).clamp(1, budget.max_den);
    let w = omega.as_slice();
    let rad = budget.numerator_radius.max(0);
    let mut pool = Vec::new();
    let offsets: Vec<Vec<i64>> = {
        let mut out = vec![vec![]];
        for _ in 1..n {
            out = out
                .into_iter()
                .flat_map(|o| {
                    (-rad..=rad).map(move |d| {
                        let mut o = o.clone();
                        o.push(d);
                        o
                    })
                })
                .collect();
        }
        out
    };
    for den in 1..=q_cap as i64 {
        let base: Vec<i64> = w[1..].iter().map(|&x| (den as f64 * x).round() as i64).collect();
        for off in &offsets {
            let mut num = Vec::with_capacity(n);
            num.push(den);
            num.extend(base.iter().zip(off).map(|(b, o)| b + o));
            let v = RationalVector {
                q: den,
                numerators: num,
            };
            let error = v.approx_error(w);
            if error == 0.0 {
                // ω₀ = v is rational: (v_j, 0, …, −q, …) annihilates it
                let j = (1..n).find(|&j| v.numerators[j] != 0).unwrap_or(1);
                let mut k = vec![0; n];
                k[0] = v.numerators[j];
                k[j] = -den;
                return Err(KamError::Resonant { k, value: 0.0 });
            }
            pool.push(Candidate {
                score: den as f64 * q * error,
                error,
                vector: v,
            });
        }
    }
    pool.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.vector.q.cmp(&b.vector.q))
            .then(a.vector.numerators.cmp(&b.vector.numerators))
    });

    let mut evaluated = 0u64;
    let mut best_det = i64::MAX;
    let mut idx = vec![0usize; n];
    for last in (n - 1)..pool.len() {
        idx[n - 1] = last;
        // enumerate (n-1)-subsets of 0..last in lexicographic order
        let mut comb: Vec<usize> = (0..n - 1).collect();
        loop {
            if n == 1 || comb.last().is_none_or(|&c| c < last) {
                idx[..n - 1].copy_from_slice(&comb);
                let mat: Vec<Vec<i64>> = (0..n)
                    .map(|row| idx.iter().map(|&i| pool[i].vector.numerators[row]).collect())
                    .collect();
                let det = integer_determinant(&mat);
                evaluated += 1;
                if det != 0 {
                    best_det = best_det.min(det.abs());
                }
                if det.abs() == 1 {
                    let mut chosen: Vec<&Candidate> = idx.iter().map(|&i| &pool[i]).collect();
                    chosen.sort_by(|a, b| a.score.total_cmp(&b.score).then(b.vector.q.cmp(&a.vector.q)));
                    let vectors: Vec<RationalVector> =
                        chosen.iter().map(|c| c.vector.clone()).collect();
                    let quality = chosen
                        .iter()
                        .map(|c| ApproxQuality {
                            q: c.vector.q,
                            approx_error: c.error,
                            score: c.score,
                        })
                        .collect();
                    let mut basis = RationalBasis {
                        vectors,
                        quality,
                        scale: q,
                        determinant: 0,
                    };
                    basis.determinant = integer_determinant(&basis.numerator_matrix());
                    debug_assert_eq!(basis.determinant.abs(), 1);
                    return Ok(basis);
                }
                if evaluated >= budget.max_subsets {
                    return Err(KamError::NoUnimodularBasis {
                        best_det: if best_det == i64::MAX { 0 } else { best_det },
                    });
                }
            }
            // advance combination
            if n == 1 {
                break;
            }
            let r = n - 1;
            let mut i = r;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if comb[i] < last - (r - i) {
                    comb[i] += 1;
                    for j in i + 1..r {
                        comb[j] = comb[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    Err(KamError::NoUnimodularBasis {
        best_det: if best_det == i64::MAX { 0 } else { best_det },
    })
}
