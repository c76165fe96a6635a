use std::f64::consts::PI;

use kam_core::diophantine::rational_basis;
use kam_core::inversion::invert_frequency_map;
use kam_core::transform::{compose_transforms, transport};
use kam_core::{
    build_schedule, kam_step, ArithmeticProfile, BasisBudget, Caps, ConditionPolicy, DomainParams, FourierTaylor,
    FrequencyVector, InversionConfig, KamError, KamTransformation, Monomial, ParamHamiltonian, PsiBudget,
    ScheduleConfig, StepConfig, StepScale, TransportConfig,
};
use num_complex::Complex64;
use proptest::prelude::*;

const CAPS: Caps = Caps {
    cutoff_k: 16,
    deg_i: 2,
    deg_w: 2,
};

fn desk_domain() -> DomainParams {
    DomainParams::new(0.0125, 0.4, 1e-3).unwrap()
}

/// Hamiltonian and step scale as the driver would pick them at iteration 0.
fn driver_setup(p: FourierTaylor) -> (ParamHamiltonian, StepScale, kam_core::RationalBasis, StepConfig) {
    let omega = FrequencyVector::golden();
    let d = desk_domain();
    let eps = p.norm(&d);
    let profile = ArithmeticProfile::build(&omega, 2048, &PsiBudget { max_dim: 4, max_l1: 2048 }).unwrap();
    let sched = build_schedule(
        &profile,
        &d,
        eps,
        &ScheduleConfig {
            policy: ConditionPolicy::Report,
            ..ScheduleConfig::default()
        },
    )
    .unwrap();
    let e = sched.entries[0];
    let mut budget = BasisBudget::default();
    budget.psi.max_l1 = budget.psi.max_l1.max(e.q);
    let basis = rational_basis(&omega, e.q as f64, &budget).unwrap();
    let ham = ParamHamiltonian::new(omega, FourierTaylor::zero(2, CAPS), p, d).unwrap();
    let scale = StepScale {
        eps,
        sigma: e.sigma,
        q: e.q as f64,
        delta_q: e.delta_q,
    };
    let cfg = StepConfig {
        policy: ConditionPolicy::Report,
        ..StepConfig::default()
    };
    (ham, scale, basis, cfg)
}

fn single_mode(eps: f64) -> FourierTaylor {
    // ε cos(2πθ₁)(1 + I₁)
    FourierTaylor::cos_term(2, CAPS, eps, &[1, 0], &[0, 0], &[0, 0])
        .add(&FourierTaylor::cos_term(2, CAPS, eps, &[1, 0], &[1, 0], &[0, 0]))
        .unwrap()
}

#[test]
fn single_mode_step_contract_and_pointwise_conjugacy() {
    let (ham, scale, basis, cfg) = driver_setup(single_mode(1e-6));
    let out = kam_step(&ham, &scale, &basis, &cfg).unwrap();
    let rep = &out.report;
    assert!(rep.output.p_plus <= cfg.eta * scale.eps / 8.0);
    assert!(rep.linearization.tail_norm <= cfg.eta * scale.eps / 16.0);
    assert!(rep.output.nu_norm <= ham.domain.h / 4.0);
    for st in rep.stages.iter().filter(|s| !s.skipped) {
        assert!(st.conjugacy_defect <= 1e-10 * st.p_norm);
        assert!(st.f_norm <= st.q_j as f64 * st.p_norm * (1.0 + 1e-12));
    }
    assert!(rep.conditions.iter().filter(|c| c.hard).all(|c| c.passed));
    out.transform.check_structure().unwrap();
    assert!(rep.transform.symplectic_defect <= 1e-9);

    // H ∘ F = N⁺ + P⁺ on a 16² grid
    let full = ham.total();
    let plus = out.hamiltonian.total();
    let w0 = ham.omega0.as_slice();
    let tol = 1e-3 * cfg.eta * scale.eps / 8.0;
    for &(a, w) in &[([0.0, 0.0], [0.0, 0.0]), ([1e-5, -1e-5], [1e-4, -1e-4])] {
        for i in 0..16 {
            for j in 0..16 {
                let t = [i as f64 / 16.0, j as f64 / 16.0];
                let om = [w0[0] + w[0], w0[1] + w[1]];
                let (u, v, ph) = out.transform.evaluate(&a, &t, &om);
                let wp = [ph[0] - w0[0], ph[1] - w0[1]];
                let diff = full.evaluate_real(&u, &v, &wp) - plus.evaluate_real(&a, &t, &w);
                assert!(diff.abs() <= tol, "θ = {t:?}: {diff:e}");
            }
        }
    }
}

#[test]
fn step_on_zero_remainder_changes_nothing() {
    let (ham, scale, basis, cfg) = driver_setup(FourierTaylor::constant(2, CAPS, 1e-9));
    let out = kam_step(&ham, &scale, &basis, &cfg).unwrap();
    assert!(out.generators.iter().all(|f| f.is_empty()));
    assert!(out.hamiltonian.perturbation.is_zero());
    let (u, v, p) = out.transform.evaluate(&[1e-4, 0.0], &[0.25, 0.5], ham.omega0.as_slice());
    assert_eq!((u, v, p[1]), (vec![1e-4, 0.0], vec![0.25, 0.5], ham.omega0.as_slice()[1]));
}

fn flow(f: FourierTaylor) -> KamTransformation {
    let w0 = FrequencyVector::golden();
    let id = KamTransformation::identity(w0.as_slice(), CAPS);
    let phi: Vec<FourierTaylor> = (0..2).map(|i| FourierTaylor::param(2, CAPS, i)).collect();
    let cfg = TransportConfig {
        tol: 1e-22,
        max_order: 40,
        prune: 0.0,
    };
    transport(&id, &[f], &phi, &desk_domain(), &cfg).unwrap().0
}

#[test]
fn time_one_flow_examples() {
    let w0 = FrequencyVector::golden();
    let at = |t: &KamTransformation, a: [f64; 2], th: [f64; 2]| t.evaluate(&a, &th, w0.as_slice());

    let id = flow(FourierTaylor::zero(2, CAPS));
    assert_eq!(at(&id, [1e-3, 2e-3], [0.1, 0.9]).0, vec![1e-3, 2e-3]);

    // F = b·I rotates the angles rigidly
    let b = [0.03, -0.07];
    let lin = FourierTaylor::action(2, CAPS, 0)
        .scale(b[0])
        .add(&FourierTaylor::action(2, CAPS, 1).scale(b[1]))
        .unwrap();
    let rot = flow(lin);
    let (u, v, _) = at(&rot, [1e-3, 2e-3], [0.1, 0.9]);
    assert!((v[0] - 0.13).abs() < 1e-15 && (v[1] - 0.83).abs() < 1e-15);
    assert!((u[0] - 1e-3).abs() < 1e-18 && (u[1] - 2e-3).abs() < 1e-18);

    // F = a sin(2πθ₁): θ is constant along the flow, İ₁ = −2πa cos(2πθ₁)
    let a = 1e-4;
    let kick = flow(FourierTaylor::sin_term(2, CAPS, a, &[1, 0], &[0, 0], &[0, 0]));
    for th in [0.0, 0.2, 0.45, 0.8] {
        let (u, v, _) = at(&kick, [1e-3, 0.0], [th, 0.3]);
        assert!((u[0] - (1e-3 - 2.0 * PI * a * (2.0 * PI * th).cos())).abs() < 1e-17);
        assert!((v[0] - th).abs() < 1e-17 && (v[1] - 0.3).abs() < 1e-17);
    }
}

#[test]
fn composing_flows_with_their_inverses_is_identity() {
    let f1 = FourierTaylor::sin_term(2, CAPS, 2e-5, &[1, -1], &[0, 0], &[0, 0])
        .add(&FourierTaylor::cos_term(2, CAPS, 1e-5, &[0, 1], &[1, 0], &[0, 0]))
        .unwrap();
    let f2 = FourierTaylor::cos_term(2, CAPS, 3e-5, &[2, 1], &[0, 1], &[0, 0]);
    let w0 = FrequencyVector::golden();
    let id = KamTransformation::identity(w0.as_slice(), CAPS);
    let phi: Vec<FourierTaylor> = (0..2).map(|i| FourierTaylor::param(2, CAPS, i)).collect();
    let d = desk_domain();
    let cfg = TransportConfig {
        tol: 1e-24,
        max_order: 40,
        prune: 0.0,
    };
    let (fwd, _) = transport(&id, &[f1.clone(), f2.clone()], &phi, &d, &cfg).unwrap();
    let (back, _) = transport(&id, &[f2.scale(-1.0), f1.scale(-1.0)], &phi, &d.with_s(0.35), &cfg).unwrap();
    let outer = DomainParams::new(0.03, 0.45, 1e-3).unwrap();
    let inner = DomainParams::new(0.0125, 0.2, 1e-3).unwrap();
    let (both, _) = compose_transforms(&back, &fwd, &outer, &inner, 1e-22).unwrap();
    both.check_structure().unwrap();
    for i in 0..50 {
        let x = i as f64 / 50.0;
        let a = [0.01 * (x - 0.5), 0.004 * (0.3 - x)];
        let t = [x, (3.0 * x) % 1.0];
        let (u, v, _) = both.evaluate(&a, &t, w0.as_slice());
        for k in 0..2 {
            assert!((u[k] - a[k]).abs() < 1e-13, "U at sample {i}: {:e}", u[k] - a[k]);
            assert!((v[k] - t[k]).abs() < 1e-13, "V at sample {i}: {:e}", v[k] - t[k]);
        }
    }
}

#[test]
fn inversion_examples() {
    let cfg = InversionConfig::default();
    let h = 1e-3;
    let constant: Vec<FourierTaylor> = [2e-5, -1e-5].iter().map(|&c| FourierTaylor::constant(2, CAPS, c)).collect();
    let inv = invert_frequency_map(&constant, h, &cfg).unwrap();
    assert!((inv.phi[0].eval(&[1e-4, 0.0]) - (1e-4 - 2e-5)).abs() < 1e-19);
    assert!((inv.phi[1].eval(&[0.0, 3e-5]) - (3e-5 + 1e-5)).abs() < 1e-19);

    let zero = vec![FourierTaylor::zero(2, CAPS); 2];
    let inv = invert_frequency_map(&zero, h, &cfg).unwrap();
    assert_eq!(inv.phi[0].eval(&[1e-4, 2e-4]), 1e-4);

    // ν₁ = a w₁: φ₁ = w₁/(1 + a)
    let a = 0.05;
    let lin = vec![FourierTaylor::param(2, CAPS, 0).scale(a), FourierTaylor::zero(2, CAPS)];
    let inv = invert_frequency_map(&lin, h, &cfg).unwrap();
    for w in [-2.5e-4, 1e-4, 2.5e-4] {
        assert!((inv.phi[0].eval(&[w, 0.0]) - w / (1.0 + a)).abs() <= 1e-16 * h);
    }

    let big = vec![FourierTaylor::constant(2, CAPS, 0.3 * h), FourierTaylor::zero(2, CAPS)];
    assert!(matches!(invert_frequency_map(&big, h, &cfg), Err(KamError::Condition { .. })));
}

prop_compose! {
    fn param_shift(h: f64)(
        coeffs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2),
        frac in 0.01f64..1.0,
    ) -> Vec<FourierTaylor> {
        let exps: [[u8; 2]; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
        let raw: Vec<FourierTaylor> = coeffs
            .iter()
            .map(|row| {
                let terms = row.iter().zip(&exps).map(|(&c, e)| (Monomial::new(&[0, 0], &[0, 0], e), Complex64::new(c, 0.0)));
                FourierTaylor::from_terms(2, CAPS, true, terms).unwrap().0
            })
            .collect();
        let d = DomainParams { r: 1.0, s: 0.0, h };
        let delta = raw.iter().map(|f| f.norm(&d)).fold(0.0, f64::max);
        raw.iter().map(|f| f.scale(frac * h / 4.0 / delta)).collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inverse_is_close_to_identity_and_exact(nu in param_shift(1e-3)) {
        let h = 1e-3;
        let inv = invert_frequency_map(&nu, h, &InversionConfig::default()).unwrap();
        let delta = inv.certificate.delta;
        prop_assert!(delta <= h / 4.0 * (1.0 + 1e-12));
        prop_assert!(inv.certificate.phi_minus_id <= delta * (1.0 + 1e-9));
        prop_assert!(inv.certificate.dphi_minus_id_scaled <= delta * (1.0 + 1e-9));
        for i in 0..20 {
            let t = i as f64 / 20.0 * 2.0 * PI;
            let w = [0.2 * h * t.cos(), 0.2 * h * (1.7 * t).sin()];
            let phi: Vec<f64> = inv.phi.iter().map(|p| p.eval(&w)).collect();
            for k in 0..2 {
                let f = phi[k] + nu[k].evaluate_real(&[0.0, 0.0], &[0.0, 0.0], &phi);
                prop_assert!((f - w[k]).abs() <= 1e-12 * h, "{:e}", f - w[k]);
            }
        }
    }
}
