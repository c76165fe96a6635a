use std::path::{Path, PathBuf};

use kam_core::diophantine::rational_basis;
use kam_core::{
    build_schedule, iterate, kam_step, place_torus, reduce_to_param_form, verify_invariance, ArithmeticProfile,
    BasisBudget, FrequencyVector, ParamHamiltonian, PsiBudget, Q0Choice, ReductionRecipe, Schedule, StepConfig,
    StepScale, VerificationConfig,
};
use log::info;
use serde::Serialize;

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::output::{self, csv_error, num, Embedding, RunResult, ScheduleSummary, Versions};
use crate::CliError;

fn frequency(spec: &str) -> Result<FrequencyVector, CliError> {
    FrequencyVector::parse(spec).map_err(|e| CliError::Usage(format!("--freq: {e}")))
}

#[derive(Serialize)]
struct AnalyzeSummary {
    schema: u32,
    omega: Vec<f64>,
    q_max: u64,
    delta_max: f64,
    s: f64,
    c: f64,
    q0: Option<Q0Choice>,
    q0_error: Option<String>,
}

pub fn analyze(freq: &str, q_max: u64, s: f64, c: f64, out: Option<&Path>) -> Result<(), CliError> {
    let omega = frequency(freq)?;
    let budget = PsiBudget {
        max_l1: PsiBudget::default().max_l1.max(q_max),
        ..PsiBudget::default()
    };
    let profile = ArithmeticProfile::build(&omega, q_max, &budget)?;
    let write_table = |w: &mut csv::Writer<Box<dyn std::io::Write>>| -> Result<(), CliError> {
        w.write_record(["Q", "Psi", "Delta", "tail"]).map_err(csv_error)?;
        for q in 1..=q_max {
            let i = (q - 1) as usize;
            w.write_record([q.to_string(), num(profile.psi[i]), num(profile.delta[i]), num(profile.tails[i])])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    };
    let (q0, q0_error) = match profile.choose_q0(s, c, None) {
        Ok(choice) => (Some(choice), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = AnalyzeSummary {
        schema: SCHEMA_VERSION,
        omega: omega.as_slice().to_vec(),
        q_max,
        delta_max: profile.delta_max(),
        s,
        c,
        q0,
        q0_error,
    };
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let file: Box<dyn std::io::Write> = Box::new(std::fs::File::create(dir.join("profile.csv"))?);
            write_table(&mut csv::Writer::from_writer(file))?;
            output::write_json(&dir.join("summary.json"), &summary)?;
        }
        None => {
            let stdout: Box<dyn std::io::Write> = Box::new(std::io::stdout().lock());
            write_table(&mut csv::Writer::from_writer(stdout))?;
        }
    }
    Ok(())
}

pub fn approx(freq: &str, q: f64) -> Result<(), CliError> {
    let omega = frequency(freq)?;
    let basis = rational_basis(&omega, q, &BasisBudget::default())?;
    let text = serde_json::to_string_pretty(&basis).map_err(|e| CliError::Numerical(e.to_string()))?;
    println!("{text}");
    Ok(())
}

struct Prepared {
    spec: kam_core::IntegrableSpec,
    ham: ParamHamiltonian,
    recipe: ReductionRecipe,
    schedule: Schedule,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let spec = cfg.spec()?;
    let (ham, recipe) = reduce_to_param_form(&spec, &cfg.reduction())?;
    info!(
        "reduced: r = {:e}, M = {:e}, F = {:e}, ε_param = {:e}",
        recipe.r, recipe.m, recipe.f, recipe.eps_param
    );
    let profile = ArithmeticProfile::build(&spec.omega0, cfg.profile.q_max, &cfg.profile.budget())?;
    let schedule = build_schedule(&profile, &ham.domain, recipe.eps_param, &cfg.schedule)?;
    info!("schedule: Q₀ = {}, Σσ = {:e}", schedule.q0.q0, schedule.sigma_sum);
    Ok(Prepared {
        spec,
        ham,
        recipe,
        schedule,
    })
}

pub fn run(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.echo()?)?;
    output::write_json(&dir.join("versions.json"), &Versions::current())?;

    let p = prepare(&cfg)?;
    let res = iterate(&p.ham, &p.schedule, &cfg.driver)?;
    for r in &res.history {
        info!(
            "i = {}: ε = {:e}, |P| = {:e}, Q = {}, telescope = {:e}",
            r.i, r.eps, r.measured, r.q, r.telescope
        );
    }
    output::write_iterations(&dir.join("iterations.csv"), &res.history)?;
    let result = RunResult {
        schema: SCHEMA_VERSION,
        converged: res.convergence.converged,
        reason: res.convergence.reason.clone(),
        iterations: res.convergence.iterations,
        final_remainder: res.convergence.final_remainder,
        omega0: res.omega0.clone(),
        omega_tilde: res.omega_tilde.clone(),
        error_bounds: res.error_bounds.clone(),
        system: p.spec.clone(),
        reduction: p.recipe.clone(),
        schedule: ScheduleSummary {
            q0: p.schedule.q0.q0,
            tail: p.schedule.q0.tail.value,
            tail_threshold: p.schedule.q0.threshold,
            sigma_sum: p.schedule.sigma_sum,
            entries: p.schedule.entries.clone(),
        },
    };
    output::write_json(&dir.join("result.json"), &result)?;
    if cfg.output.reports {
        let reports: Vec<_> = res.history.iter().map(|r| &r.report).collect();
        output::write_json(&dir.join("reports.json"), &reports)?;
    }
    if !res.convergence.converged {
        return Err(CliError::Numerical(format!("iteration did not converge: {}", res.convergence.reason)));
    }
    if cfg.output.embedding || cfg.verify.is_some() {
        let placed = place_torus(&res, &p.spec, 1e-15)?;
        if cfg.output.embedding {
            let emb = Embedding {
                schema: SCHEMA_VERSION,
                torus: placed.clone(),
            };
            output::write_json(&dir.join("embedding.json"), &emb)?;
        }
        if let Some(vcfg) = &cfg.verify {
            verify_into(&p.spec, &placed, vcfg, &dir)?;
        }
    }
    info!("converged: {}", res.convergence.reason);
    Ok(())
}

fn verify_into(
    spec: &kam_core::IntegrableSpec,
    torus: &kam_core::PlacedTorus,
    vcfg: &VerificationConfig,
    dir: &Path,
) -> Result<(), CliError> {
    let mut rep = verify_invariance(spec, torus, vcfg)?;
    info!(
        "residual {:e}, shadow {:e}, energy drift {:e}",
        rep.invariance_residual, rep.shadow_distance, rep.energy_drift
    );
    let n = spec.dim();
    let mut w = output::csv_writer(&dir.join("trajectory.csv"))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.push("distance".into());
    w.write_record(&header).map_err(csv_error)?;
    for s in &rep.samples {
        let mut row = vec![num(s.t)];
        row.extend(s.p.iter().chain(&s.q).map(|&x| num(x)));
        row.push(num(s.distance));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    rep.samples.clear();
    output::write_json(&dir.join("verification.json"), &rep)?;
    Ok(())
}

pub fn step(config: &Path, dump: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let p = prepare(&cfg)?;
    let e = p.schedule.entries[0];
    let mut budget = cfg.driver.basis;
    budget.psi.max_l1 = budget.psi.max_l1.max(e.q);
    let basis = rational_basis(&p.ham.omega0, e.q as f64, &budget)?;
    let scale = StepScale {
        eps: e.eps,
        sigma: e.sigma,
        q: e.q as f64,
        delta_q: e.delta_q,
    };
    let sc = &cfg.schedule;
    let step_cfg = StepConfig {
        eta: sc.eta,
        constants: sc.constants,
        policy: sc.policy,
        ..cfg.driver.step
    };
    let outcome = kam_step(&p.ham, &scale, &basis, &step_cfg)?;
    let text = serde_json::to_string_pretty(&outcome.report).map_err(|e| CliError::Numerical(e.to_string()))?;
    match dump {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn verify(
    result: &Path,
    embedding: &Path,
    t_max: f64,
    dt: f64,
    grid: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let res: RunResult = output::read_json(result)?;
    let emb: Embedding = output::read_json(embedding)?;
    for (name, schema) in [("result", res.schema), ("embedding", emb.schema)] {
        if schema != SCHEMA_VERSION {
            return Err(CliError::Usage(format!("{name} schema {schema} unsupported")));
        }
    }
    let vcfg = VerificationConfig {
        t_max,
        dt,
        grid,
        ..VerificationConfig::default()
    };
    let dir = out.unwrap_or_else(|| result.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir)?;
    verify_into(&res.system, &emb.torus, &vcfg, &dir)
}
