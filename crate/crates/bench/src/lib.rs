//! Fixtures shared by the benchmarks in `benches/`.

use kam_core::reduction::{IntegrableSpec, Polynomial, TrigPolynomial, TrigTerm};
use kam_core::{
    build_schedule, reduce_to_param_form, ArithmeticProfile, ConditionPolicy, FrequencyVector, ParamHamiltonian,
    PsiBudget, ReductionConfig, Schedule, ScheduleConfig,
};

/// `h = ω₀·p + ½|p|²`, `f = cos(2πq₁) + cos(2π(q₁ + q₂))`.
pub fn desk_spec(eps: f64) -> IntegrableSpec {
    let omega = FrequencyVector::golden();
    let h = Polynomial::linear_plus_half_square(omega.as_slice());
    let term = |k: Vec<i32>| TrigTerm {
        k,
        powers: vec![0, 0],
        cos: 1.0,
        sin: 0.0,
    };
    let f = TrigPolynomial::new(2, vec![term(vec![1, 0]), term(vec![1, 1])]).unwrap();
    IntegrableSpec::new(omega, h, f, eps, 0.1).unwrap()
}

pub fn golden_profile(q_max: u64) -> ArithmeticProfile {
    ArithmeticProfile::build(&FrequencyVector::golden(), q_max, &PsiBudget { max_dim: 4, max_l1: 4096 }).unwrap()
}

/// Reduced desk Hamiltonian and its schedule.
pub fn desk_problem() -> (ParamHamiltonian, Schedule) {
    let spec = desk_spec(1e-6);
    let rcfg = ReductionConfig {
        policy: ConditionPolicy::Report,
        ..ReductionConfig::default()
    };
    let (ham, recipe) = reduce_to_param_form(&spec, &rcfg).unwrap();
    let scfg = ScheduleConfig {
        policy: ConditionPolicy::Report,
        ..ScheduleConfig::default()
    };
    let schedule = build_schedule(&golden_profile(2048), &ham.domain, recipe.eps_param, &scfg).unwrap();
    (ham, schedule)
}
