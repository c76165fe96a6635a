mod common;

use kam_core::transform::compose_transforms;
use kam_core::{
    build_schedule, iterate, ArithmeticProfile, Caps, ConditionPolicy, DomainParams, DriverConfig, FourierTaylor,
    FrequencyVector, KamTransformation, ParamHamiltonian, PsiBudget, ScheduleConfig,
};

const CAPS: Caps = Caps {
    cutoff_k: 16,
    deg_i: 2,
    deg_w: 2,
};

fn desk_domain() -> DomainParams {
    DomainParams::new(0.0125, 0.4, 1e-3).unwrap()
}

fn golden_profile() -> ArithmeticProfile {
    ArithmeticProfile::build(&FrequencyVector::golden(), 2048, &PsiBudget { max_dim: 4, max_l1: 4096 }).unwrap()
}

fn report_schedule() -> ScheduleConfig {
    ScheduleConfig {
        policy: ConditionPolicy::Report,
        ..ScheduleConfig::default()
    }
}

#[test]
fn schedule_follows_geometric_sequences() {
    let prof = golden_profile();
    let d = desk_domain();
    let cfg = report_schedule();
    let sched = build_schedule(&prof, &d, 1e-6, &cfg).unwrap();
    let e = &sched.entries;
    let ratio = cfg.eta / 8.0;
    assert!((e[3].eps - ratio.powi(3) * 1e-6).abs() <= 1e-15 * e[3].eps);
    assert!((e[5].delta - 32.0 * prof.delta_at(sched.q0.q0)).abs() <= 1e-12 * e[5].delta);
    for x in e {
        assert_eq!(x.q, prof.delta_star(x.delta).unwrap());
        assert!(x.s >= d.s / 2.0, "s_{} = {}", x.i, x.s);
        assert!((x.sigma - 1.0 / x.q as f64).abs() < 1e-15);
        assert!((x.r - cfg.eta.powi(x.i as i32) * d.r).abs() <= 1e-15 * x.r);
        assert!((x.h - 0.25f64.powi(x.i as i32) * d.h).abs() <= 1e-15 * x.h);
    }
    assert!(e.windows(2).all(|w| w[1].q >= w[0].q && w[1].s < w[0].s));
    assert!(sched.sigma_sum <= d.s / 2.0);
}

#[test]
fn schedule_rejects_bad_ratios() {
    let prof = golden_profile();
    let mut cfg = report_schedule();
    cfg.delta_ratio = 3.0;
    assert!(build_schedule(&prof, &desk_domain(), 1e-6, &cfg).is_err());
    let mut cfg = report_schedule();
    cfg.c_sigma = 0.5;
    assert!(build_schedule(&prof, &desk_domain(), 1e-6, &cfg).is_err());
}

#[test]
fn vanishing_remainder_converges_immediately() {
    let omega = FrequencyVector::golden();
    let d = desk_domain();
    let ham = ParamHamiltonian::new(omega, FourierTaylor::zero(2, CAPS), FourierTaylor::zero(2, CAPS), d).unwrap();
    let sched = build_schedule(&golden_profile(), &d, 1e-9, &report_schedule()).unwrap();
    let res = iterate(&ham, &sched, &DriverConfig::default()).unwrap();
    assert!(res.convergence.converged, "{}", res.convergence.reason);
    assert!(res.history.len() <= 1);
    assert_eq!(res.omega_tilde, res.omega0);
    let (u, v, _) = res.transform.evaluate(&[1e-3, 0.0], &[0.3, 0.7], &res.omega0);
    assert_eq!((u, v), (vec![1e-3, 0.0], vec![0.3, 0.7]));
}

fn rotation(b: [f64; 2]) -> KamTransformation {
    let w0 = FrequencyVector::golden();
    let mut t = KamTransformation::identity(w0.as_slice(), CAPS);
    for (v, c) in t.angle.iter_mut().zip(b) {
        *v = v.add(&FourierTaylor::constant(2, CAPS, c)).unwrap();
    }
    t
}

#[test]
fn composition_examples() {
    let w0 = FrequencyVector::golden();
    let d = desk_domain();
    let id = KamTransformation::identity(w0.as_slice(), CAPS);
    let a = rotation([0.1, 0.2]);
    let (left, _) = compose_transforms(&id, &a, &d, &d, 1e-22).unwrap();
    let (right, _) = compose_transforms(&a, &id, &d, &d, 1e-22).unwrap();
    let (both, _) = compose_transforms(&a, &rotation([0.05, -0.3]), &d, &d, 1e-22).unwrap();
    for i in 0..50 {
        let x = i as f64 / 50.0;
        let act = [0.01 * (x - 0.5), 0.002];
        let th = [x, (7.0 * x) % 1.0];
        let direct = a.evaluate(&act, &th, w0.as_slice());
        assert_eq!(left.evaluate(&act, &th, w0.as_slice()).1, direct.1);
        assert_eq!(right.evaluate(&act, &th, w0.as_slice()).1, direct.1);
        let (_, v, _) = both.evaluate(&act, &th, w0.as_slice());
        assert!((v[0] - (th[0] + 0.15)).abs() < 1e-15 && (v[1] - (th[1] - 0.1)).abs() < 1e-15);
    }
}

#[test]
fn desk_run_stays_inside_the_envelopes() {
    let run = common::desk_run(1e-6);
    let res = &run.result;
    assert!(res.convergence.converged, "{}", res.convergence.reason);
    assert!(res.history.len() >= 5, "only {} iterations", res.history.len());
    for rec in &res.history {
        let next = run.schedule.entries[rec.i + 1].eps;
        assert!(rec.measured <= rec.eps, "|P_{}| = {:e} > ε = {:e}", rec.i, rec.measured, rec.eps);
        assert!(rec.report.output.p_plus <= next, "P⁺ at {} = {:e}", rec.i, rec.report.output.p_plus);
        assert!(rec.jacobian_product <= 2.0);
    }
    let sum: f64 = res.history.iter().map(|r| r.telescope).sum();
    assert!((res.error_bounds.telescope_sum - sum).abs() <= 1e-12 * sum.max(1e-300));
    assert!(res.error_bounds.w_embedding_shift <= res.error_bounds.telescope_sum * (1.0 + 1e-9) + 1e-300);
    res.transform.check_structure().unwrap();
}
