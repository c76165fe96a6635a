//! Independent dynamical checks of a computed torus in `(p, q)` coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::reduction::{IntegrableSpec, PlacedTorus, Polynomial};
use crate::series::FourierTaylor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    /// Points per angle for the invariance residual.
    pub grid: usize,
    pub dt: f64,
    pub t_max: f64,
    pub theta0: Vec<f64>,
    /// Fixed-point tolerance of the implicit midpoint solve.
    pub midpoint_tol: f64,
    pub midpoint_max_iter: usize,
    /// Trajectory samples written for output (every `record_every` steps).
    pub record_every: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            dt: 1e-3,
            t_max: 100.0,
            theta0: Vec::new(),
            midpoint_tol: 1e-15,
            midpoint_max_iter: 50,
            record_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `sup_θ |X_H(Θ(θ)) − DΘ(θ)·ω₀|` over the grid.
    pub invariance_residual: f64,
    pub grid: usize,
    /// `max_{t ≤ t_max} |z(t) − Θ(θ₀ + tω₀)|` with `q` lifted.
    pub shadow_distance: f64,
    pub t_max: f64,
    pub dt: f64,
    pub theta0: Vec<f64>,
    /// `max_t |H(z(t)) − H(z(0))|`.
    pub energy_drift: f64,
    /// `(q(t_max) − q(0)) / t_max`.
    pub rotation_number: Vec<f64>,
    /// `max_i |rotation_i − ω₀_i|`.
    pub rotation_error: f64,
    pub samples: Vec<TrajectorySample>,
}

fn grid_points(n: usize, grid: usize) -> Vec<Vec<f64>> {
    let total = grid.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let j = idx % grid;
                    idx /= grid;
                    j as f64 / grid as f64
                })
                .collect()
        })
        .collect()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sup over the grid of the invariance defect of `torus` for the flow of `spec`.
pub fn invariance_residual(spec: &IntegrableSpec, torus: &PlacedTorus, grid: usize) -> Result<f64> {
    let n = spec.dim();
    if grid < 8 {
        return Err(KamError::InvalidInput(format!("grid = {grid} must be at least 8")));
    }
    let omega0 = &torus.omega0;
    let grad_h = spec.h.gradient();
    let dp: Vec<FourierTaylor> = torus.action.iter().map(|f| f.lie_derivative(omega0)).collect();
    let dq: Vec<FourierTaylor> = torus.angle.iter().map(|f| f.lie_derivative(omega0)).collect();
    let zero = vec![0.0; n];
    let worst = grid_points(n, grid)
        .par_iter()
        .map(|theta| {
            let (p, q) = torus.point(theta);
            let (pdot, qdot) = spec.vector_field(&grad_h, &p, &q);
            let mut out: f64 = 0.0;
            for i in 0..n {
                let tp = dp[i].evaluate_real(&zero, theta, &zero);
                let tq = omega0[i] + dq[i].evaluate_real(&zero, theta, &zero);
                out = out.max((pdot[i] - tp).abs()).max((qdot[i] - tq).abs());
            }
            out
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

struct Midpoint<'a> {
    spec: &'a IntegrableSpec,
    grad_h: Vec<Polynomial>,
    tol: f64,
    max_iter: usize,
}

impl Midpoint<'_> {
    /// One implicit midpoint step `z⁺ = z + dt X((z + z⁺)/2)`.
    fn step(&self, p: &mut [f64], q: &mut [f64], dt: f64) -> Result<()> {
        let n = p.len();
        let (mut pn, mut qn) = (p.to_vec(), q.to_vec());
        let mut mp = vec![0.0; n];
        let mut mq = vec![0.0; n];
        for _ in 0..self.max_iter {
            for i in 0..n {
                mp[i] = 0.5 * (p[i] + pn[i]);
                mq[i] = 0.5 * (q[i] + qn[i]);
            }
            let (pdot, qdot) = self.spec.vector_field(&self.grad_h, &mp, &mq);
            let mut change: f64 = 0.0;
            for i in 0..n {
                let a = p[i] + dt * pdot[i];
                let b = q[i] + dt * qdot[i];
                change = change.max((a - pn[i]).abs()).max((b - qn[i]).abs());
                pn[i] = a;
                qn[i] = b;
            }
            if change <= self.tol * (1.0 + q.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
                p.copy_from_slice(&pn);
                q.copy_from_slice(&qn);
                return Ok(());
            }
        }
        Err(KamError::Numerical("implicit midpoint iteration did not converge".into()))
    }
}

/// Integrates from `Θ(θ₀)` and compares with `Θ(θ₀ + tω₀)`.
pub fn shadow(spec: &IntegrableSpec, torus: &PlacedTorus, cfg: &VerificationConfig) -> Result<VerificationReport> {
    let n = spec.dim();
    let theta0 = if cfg.theta0.is_empty() {
        vec![0.0; n]
    } else if cfg.theta0.len() == n {
        cfg.theta0.clone()
    } else {
        return Err(KamError::DimensionMismatch {
            expected: n,
            got: cfg.theta0.len(),
        });
    };
    if !(cfg.dt > 0.0 && cfg.t_max >= 0.0) {
        return Err(KamError::InvalidInput("need dt > 0 and t_max ≥ 0".into()));
    }
    let omega0 = &torus.omega0;
    let integrator = Midpoint {
        spec,
        grad_h: spec.h.gradient(),
        tol: cfg.midpoint_tol,
        max_iter: cfg.midpoint_max_iter,
    };
    let (mut p, mut q) = torus.point(&theta0);
    let q0 = q.clone();
    let e0 = spec.energy(&p, &q);
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let mut shadow: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut samples = vec![TrajectorySample {
        t: 0.0,
        p: p.clone(),
        q: q.clone(),
        distance: 0.0,
    }];
    for s in 1..=steps {
        integrator.step(&mut p, &mut q, cfg.dt)?;
        let t = s as f64 * cfg.dt;
        let theta: Vec<f64> = theta0.iter().zip(omega0).map(|(a, w)| a + t * w).collect();
        let (tp, tq) = torus.point(&theta);
        let dist = sup_dist(&p, &tp).max(sup_dist(&q, &tq));
        shadow = shadow.max(dist);
        drift = drift.max((spec.energy(&p, &q) - e0).abs());
        if cfg.record_every > 0 && (s % cfg.record_every == 0 || s == steps) {
            samples.push(TrajectorySample {
                t,
                p: p.clone(),
                q: q.clone(),
                distance: dist,
            });
        }
    }
    let t_end = steps as f64 * cfg.dt;
    let rotation_number: Vec<f64> = if t_end > 0.0 {
        q.iter().zip(&q0).map(|(a, b)| (a - b) / t_end).collect()
    } else {
        omega0.clone()
    };
    let rotation_error = sup_dist(&rotation_number, omega0);
    Ok(VerificationReport {
        invariance_residual: 0.0,
        grid: 0,
        shadow_distance: shadow,
        t_max: t_end,
        dt: cfg.dt,
        theta0,
        energy_drift: drift,
        rotation_number,
        rotation_error,
        samples,
    })
}

/// Invariance residual on a `grid^n` lattice plus a shadowing trajectory.
pub fn verify_invariance(spec: &IntegrableSpec, torus: &PlacedTorus, cfg: &VerificationConfig) -> Result<VerificationReport> {
    let residual = invariance_residual(spec, torus, cfg.grid)?;
    let mut report = shadow(spec, torus, cfg)?;
    report.invariance_residual = residual;
    report.grid = cfg.grid;
    Ok(report)
}
