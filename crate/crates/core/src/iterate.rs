//! The iteration driver: parameter schedule, step chaining and composition.

use serde::{Deserialize, Serialize};

use crate::diophantine::{rational_basis, ArithmeticProfile, BasisBudget, Q0Choice};
use crate::error::{KamError, Result};
use crate::hamiltonian::ParamHamiltonian;
use crate::kam_step::{kam_step, ConditionCheck, ConditionPolicy, Constants, StepConfig, StepReport, StepScale};
use crate::series::{DomainParams, FourierTaylor};
use crate::transform::{transport, KamTransformation, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub eta: f64,
    pub h_ratio: f64,
    pub delta_ratio: f64,
    /// `σ_i = C Q_i⁻¹`.
    pub c_sigma: f64,
    /// Fixed `Q₀`; chosen from the tail condition when absent.
    pub q0: Option<u64>,
    pub max_iters: usize,
    pub constants: Constants,
    pub policy: ConditionPolicy,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            eta: 1.0 / 66.0,
            h_ratio: 0.25,
            delta_ratio: 2.0,
            c_sigma: 1.0,
            q0: None,
            max_iters: 12,
            constants: Constants::default(),
            policy: ConditionPolicy::Enforce,
        }
    }
}

impl ScheduleConfig {
    pub fn eps_ratio(&self) -> f64 {
        self.eta / 8.0
    }

    pub fn r_ratio(&self) -> f64 {
        self.eta
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("eta", self.eta), ("h_ratio", self.h_ratio)] {
            if !(x > 0.0 && x < 1.0) {
                return Err(KamError::InvalidInput(format!("{name} = {x} must lie in (0, 1)")));
            }
        }
        if self.delta_ratio != 2.0 {
            return Err(KamError::InvalidInput(format!(
                "delta_ratio = {} must be 2",
                self.delta_ratio
            )));
        }
        if !(self.c_sigma >= 1.0) {
            return Err(KamError::InvalidInput(format!("C = {} must be ≥ 1", self.c_sigma)));
        }
        if self.max_iters == 0 {
            return Err(KamError::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of iteration `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub i: usize,
    pub eps: f64,
    pub r: f64,
    pub h: f64,
    pub s: f64,
    pub sigma: f64,
    /// `Δ_i = 2^i Δ(Q₀)`.
    pub delta: f64,
    /// `Q_i = Δ*(Δ_i)`.
    pub q: u64,
    /// `Δ(Q_i)` from the table.
    pub delta_q: f64,
}

impl ScheduleEntry {
    pub fn domain(&self) -> DomainParams {
        DomainParams {
            r: self.r,
            s: self.s,
            h: self.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub q0: Q0Choice,
    /// Entries `0..=max_iters`; the last one only describes the final domain.
    pub entries: Vec<ScheduleEntry>,
    pub sigma_sum: f64,
    pub s: f64,
    pub conditions: Vec<ConditionCheck>,
}

/// Builds `ε_i, r_i, h_i, Δ_i, Q_i, σ_i, s_i` for `i ≤ max_iters`.
pub fn build_schedule(profile: &ArithmeticProfile, d: &DomainParams, eps: f64, cfg: &ScheduleConfig) -> Result<Schedule> {
    cfg.validate()?;
    d.validate()?;
    if !(eps > 0.0) {
        return Err(KamError::InvalidInput(format!("ε = {eps} must be positive")));
    }
    let q0 = match cfg.q0 {
        Some(q0) => {
            let tail = profile.bruno_russmann_tail(q0, profile.delta_max())?;
            Q0Choice {
                q0,
                tail,
                threshold: d.s / (2.0 * cfg.c_sigma),
            }
        }
        None => profile.choose_q0(d.s, cfg.c_sigma, None)?,
    };
    let delta0 = profile.delta_at(q0.q0);
    let c = &cfg.constants;
    let mut conditions = Vec::new();
    for (name, measured, threshold) in [
        ("ε r⁻¹ ≤ c·h", eps / d.r, c.c_eps_h * d.h),
        ("h ≤ c·Δ(Q₀)⁻¹", d.h, c.c_h_delta / delta0),
    ] {
        let passed = measured <= threshold;
        conditions.push(ConditionCheck {
            name: name.into(),
            measured,
            threshold,
            passed,
            hard: false,
        });
        if !passed {
            if cfg.policy == ConditionPolicy::Enforce {
                return Err(KamError::condition(name, measured, threshold));
            }
            log::warn!("schedule condition `{name}` not met: {measured:e} > {threshold:e} (reported only)");
        }
    }

    let mut entries = Vec::with_capacity(cfg.max_iters + 1);
    let mut s_i = d.s;
    let mut sigma_sum = 0.0;
    for i in 0..=cfg.max_iters {
        let delta = cfg.delta_ratio.powi(i as i32) * delta0;
        let q = profile.delta_star(delta)?;
        let sigma = cfg.c_sigma / q as f64;
        entries.push(ScheduleEntry {
            i,
            eps: cfg.eps_ratio().powi(i as i32) * eps,
            r: cfg.r_ratio().powi(i as i32) * d.r,
            h: cfg.h_ratio.powi(i as i32) * d.h,
            s: s_i,
            sigma,
            delta,
            q,
            delta_q: profile.delta_at(q),
        });
        if i < cfg.max_iters {
            s_i -= sigma;
            sigma_sum += sigma;
        }
    }
    if sigma_sum > d.s / 2.0 {
        return Err(KamError::condition(
            "Q₀ too small: Σσ_i ≤ s/2",
            sigma_sum,
            d.s / 2.0,
        ));
    }
    Ok(Schedule {
        config: *cfg,
        q0,
        entries,
        sigma_sum,
        s: d.s,
        conditions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    pub step: StepConfig,
    pub basis: BasisBudget,
    /// Stop once `|P_i| ≤ stop_tol · |ω·I|_{r_i, h_i}`, the size of the
    /// normal form on the current domain.
    pub stop_tol: f64,
    pub reality_tol: f64,
    /// Bound on `Π (1 + d_l)` over the measured telescoping distances `d_l`.
    pub jacobian_bound: f64,
    /// Composition discard budget as a fraction of `ε_{i+1}`.
    pub compose_budget: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            step: StepConfig::default(),
            basis: BasisBudget::default(),
            stop_tol: 1e-14,
            reality_tol: 1e-12,
            jacobian_bound: 2.0,
            compose_budget: 1e-2,
        }
    }
}

/// One executed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub i: usize,
    pub eps: f64,
    /// `|P_i|_{r_i, s_i, h_i}`.
    pub measured: f64,
    pub sigma: f64,
    pub q: u64,
    /// `|W̄₀(F^{i+1} − F^i)|`.
    pub telescope: f64,
    /// `ε_i (r_i h_i)⁻¹`.
    pub predicted: f64,
    pub jacobian_product: f64,
    pub compose_discard: f64,
    pub report: StepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    /// `|W(Φ_{ω₀} − Φ₀)|_{s/2}` with `W = Diag(r⁻¹, Q₀)`.
    pub w_embedding_shift: f64,
    /// `max_i |ω̃_i − ω₀_i|`.
    pub omega_shift: f64,
    /// `|W(Φ_{ω₀} − Φ₀)| r h / ε`.
    pub c4_surrogate: f64,
    /// `|ω̃ − ω₀| r / ε`.
    pub c5_surrogate: f64,
    /// `Σ_i` telescoping distances.
    pub telescope_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub reason: String,
    pub iterations: usize,
    /// `|P_N|` on the final domain.
    pub final_remainder: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TorusResult {
    pub omega0: Vec<f64>,
    /// `I(θ)` of the embedding `θ ↦ Φ_{ω₀}(0, θ)`.
    pub embedding_action: Vec<FourierTaylor>,
    /// `Θ(θ) − θ`.
    pub embedding_angle: Vec<FourierTaylor>,
    pub omega_tilde: Vec<f64>,
    pub error_bounds: ErrorBounds,
    pub convergence: Convergence,
    pub history: Vec<IterationRecord>,
    /// The composed transformation `F^N`.
    pub transform: KamTransformation,
    /// Final `N^N + P^N`.
    pub hamiltonian: ParamHamiltonian,
}

fn distance(a: &KamTransformation, b: &KamTransformation, d: &DomainParams, weights: (f64, f64, f64)) -> Result<f64> {
    let mut out: f64 = 0.0;
    for (fa, fb) in a.action.iter().zip(&b.action) {
        out = out.max(fa.sub(fb)?.norm(d) * weights.0);
    }
    for (fa, fb) in a.angle.iter().zip(&b.angle) {
        out = out.max(fa.sub(fb)?.norm(d) * weights.1);
    }
    for (fa, fb) in a.param.iter().zip(&b.param) {
        out = out.max(fa.sub(fb)?.norm(d) * weights.2);
    }
    Ok(out)
}

/// `|ω·I|_{r,h} = (|ω₀|₁ + n h) r`.
fn normal_form_size(omega0: &[f64], e: &ScheduleEntry) -> f64 {
    let l1: f64 = omega0.iter().map(|w| w.abs()).sum();
    (l1 + omega0.len() as f64 * e.h) * e.r
}

/// Runs the scheme from `h0` along `schedule`.
pub fn iterate(h0: &ParamHamiltonian, schedule: &Schedule, cfg: &DriverConfig) -> Result<TorusResult> {
    let sc = &schedule.config;
    let first = schedule.entries[0];
    let d0 = first.domain();
    if h0.domain != d0 {
        return Err(KamError::InvalidInput(format!(
            "Hamiltonian domain {:?} differs from the schedule's {:?}",
            h0.domain, d0
        )));
    }
    let step_cfg = StepConfig {
        eta: sc.eta,
        constants: sc.constants,
        policy: sc.policy,
        ..cfg.step
    };
    let omega0 = h0.omega0.as_slice().to_vec();
    let q0 = schedule.q0.q0 as f64;
    let weights = (1.0 / d0.r, q0, 1.0 / d0.h);
    let eps0 = first.eps;

    let mut ham = h0.clone();
    let mut transform = KamTransformation::identity(&omega0, h0.caps());
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut jacobian_product = 1.0;
    let mut previous: Option<f64> = None;
    let mut non_improving = 0;
    let mut reason = format!("reached max_iters = {}", sc.max_iters);
    let mut converged = false;
    let mut i = 0;
    loop {
        let entry = schedule.entries[i];
        let measured = ham.perturbation_norm();
        if measured > entry.eps * (1.0 + 1e-12) {
            return Err(KamError::condition("envelope |P_i| ≤ ε_i", measured, entry.eps).at_iteration(i));
        }
        if entry.s < schedule.s / 2.0 {
            return Err(KamError::condition("s_i ≥ s/2", schedule.s / 2.0, entry.s).at_iteration(i));
        }
        let floor = cfg.stop_tol * normal_form_size(&omega0, &entry);
        if measured <= floor {
            converged = true;
            reason = format!("remainder {measured:e} below stop_tol·|ω·I| = {floor:e}");
            break;
        }
        let dropped = ham.discarded.norm(&ham.domain);
        if let Some(next) = schedule.entries.get(i + 1) {
            if dropped > 0.5 * next.eps {
                // the next step could not meet its target through terms no longer stored
                converged = true;
                reason = format!(
                    "dropped-term bound {dropped:e} exceeds half the next envelope {:e} (truncation floor)",
                    next.eps
                );
                break;
            }
        }
        if i >= sc.max_iters {
            break;
        }
        if let Some(prev) = previous {
            if measured >= prev {
                non_improving += 1;
                if non_improving >= 2 {
                    return Err(KamError::Divergence {
                        step: i,
                        current: measured,
                        previous: prev,
                    });
                }
            } else {
                non_improving = 0;
            }
        }
        previous = Some(measured);

        let mut budget = cfg.basis;
        budget.psi.max_l1 = budget.psi.max_l1.max(entry.q);
        let basis = rational_basis(&h0.omega0, entry.q as f64, &budget).map_err(|e| e.at_iteration(i))?;
        let scale = StepScale {
            eps: entry.eps,
            sigma: entry.sigma,
            q: entry.q as f64,
            delta_q: entry.delta_q,
        };
        let outcome = kam_step(&ham, &scale, &basis, &step_cfg).map_err(|e| e.at_iteration(i))?;
        let next = schedule.entries[i + 1];
        let target = next.domain();
        let compose_budget = cfg.compose_budget * next.eps;
        let tcfg = TransportConfig {
            tol: cfg.step.transport.tol.min(1e-6 * compose_budget),
            prune: cfg.step.transport.prune.min(1e-3 * compose_budget / (3 * omega0.len()) as f64),
            ..cfg.step.transport
        };
        let (composed, tdisc) = transport(&transform, &outcome.generators, &outcome.phi, &target, &tcfg)
            .map_err(|e| e.at_iteration(i))?;
        if tdisc.total() > compose_budget {
            return Err(KamError::TruncationBudget {
                context: "composition".into(),
                discard: tdisc.total(),
                budget: compose_budget,
            }
            .at_iteration(i));
        }
        let telescope = distance(&composed, &transform, &target, weights)?;
        let predicted = entry.eps / (entry.r * entry.h);
        jacobian_product *= 1.0 + telescope;
        if jacobian_product > cfg.jacobian_bound {
            log::warn!(
                "iteration {i}: Jacobian product {jacobian_product:e} exceeds bound {:e}",
                cfg.jacobian_bound
            );
        }
        log::info!(
            "iteration {i}: |P| = {measured:e} (ε_i = {:e}), Q = {}, σ = {:.4}, |P⁺| = {:e}, distance {telescope:e}",
            entry.eps,
            entry.q,
            entry.sigma,
            outcome.report.output.p_plus
        );
        history.push(IterationRecord {
            i,
            eps: entry.eps,
            measured,
            sigma: entry.sigma,
            q: entry.q,
            telescope,
            predicted,
            jacobian_product,
            compose_discard: tdisc.total(),
            report: outcome.report,
        });
        transform = composed;
        ham = outcome.hamiltonian;
        i += 1;
    }
    let final_remainder = ham.perturbation_norm();

    // ω̃ = φ(ω₀), checked real
    let omega_tilde_c = transform.omega_tilde();
    let mut omega_tilde = Vec::with_capacity(omega0.len());
    for z in &omega_tilde_c {
        if z.im.abs() > cfg.reality_tol {
            return Err(KamError::Reality(z.im.abs()));
        }
        omega_tilde.push(z.re);
    }
    let (mut embedding_action, mut embedding_angle) = transform.zero_section();
    for f in embedding_action.iter_mut().chain(embedding_angle.iter_mut()) {
        if f.reality_defect() > cfg.reality_tol {
            return Err(KamError::Reality(f.reality_defect()));
        }
        f.enforce_reality();
    }
    let half = DomainParams {
        r: d0.r,
        s: schedule.s / 2.0,
        h: d0.h,
    };
    let mut w_shift: f64 = 0.0;
    for f in &embedding_action {
        w_shift = w_shift.max(f.norm(&half) / d0.r);
    }
    for f in &embedding_angle {
        w_shift = w_shift.max(f.norm(&half) * q0);
    }
    let omega_shift = transform
        .frequency_shift()
        .iter()
        .map(|z| z.re.abs())
        .fold(0.0, f64::max);
    let error_bounds = ErrorBounds {
        w_embedding_shift: w_shift,
        omega_shift,
        c4_surrogate: w_shift * d0.r * d0.h / eps0,
        c5_surrogate: omega_shift * d0.r / eps0,
        telescope_sum: history.iter().fold(0.0, |acc, h| acc + h.telescope),
    };
    Ok(TorusResult {
        omega0,
        embedding_action,
        embedding_angle,
        omega_tilde,
        error_bounds,
        convergence: Convergence {
            converged,
            reason,
            iterations: history.len(),
            final_remainder,
        },
        history,
        transform,
        hamiltonian: ham,
    })
}
