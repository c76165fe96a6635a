#![allow(dead_code)]

use kam_core::{
    build_schedule, iterate, reduce_to_param_form, ArithmeticProfile, ConditionPolicy, DriverConfig, FrequencyVector,
    IntegrableSpec, ParamHamiltonian, Polynomial, PsiBudget, ReductionConfig, ReductionRecipe, Schedule,
    ScheduleConfig, TorusResult, TrigPolynomial, TrigTerm,
};

/// `f = cos(2πq₁) + cos(2π(q₁ + q₂))`.
pub fn desk_forcing() -> TrigPolynomial {
    let term = |k: Vec<i32>| TrigTerm {
        k,
        powers: vec![0, 0],
        cos: 1.0,
        sin: 0.0,
    };
    TrigPolynomial::new(2, vec![term(vec![1, 0]), term(vec![1, 1])]).unwrap()
}

pub fn desk_spec(eps: f64) -> IntegrableSpec {
    let omega = FrequencyVector::golden();
    let h = Polynomial::linear_plus_half_square(omega.as_slice());
    IntegrableSpec::new(omega, h, desk_forcing(), eps, 0.1).unwrap()
}

pub struct Run {
    pub spec: IntegrableSpec,
    pub ham: ParamHamiltonian,
    pub recipe: ReductionRecipe,
    pub schedule: Schedule,
    pub result: TorusResult,
}

pub fn desk_run(eps: f64) -> Run {
    let spec = desk_spec(eps);
    let rcfg = ReductionConfig {
        policy: ConditionPolicy::Report,
        ..ReductionConfig::default()
    };
    let (ham, recipe) = reduce_to_param_form(&spec, &rcfg).unwrap();
    let profile = ArithmeticProfile::build(&spec.omega0, 2048, &PsiBudget { max_dim: 4, max_l1: 4096 }).unwrap();
    let scfg = ScheduleConfig {
        policy: ConditionPolicy::Report,
        ..ScheduleConfig::default()
    };
    let schedule = build_schedule(&profile, &ham.domain, recipe.eps_param, &scfg).unwrap();
    let result = iterate(&ham, &schedule, &DriverConfig::default()).unwrap();
    Run {
        spec,
        ham,
        recipe,
        schedule,
        result,
    }
}
