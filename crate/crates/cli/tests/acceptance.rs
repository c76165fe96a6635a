//! End-to-end acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria marked `known` are ones whose literal statement cannot hold for
//! this system; they print FAIL with the measured evidence but do not fail
//! the process. Any other FAIL exits non-zero.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use kam_core::diophantine::{integer_determinant, psi, rational_basis, RationalVector};
use kam_core::inversion::invert_frequency_map;
use kam_core::{
    build_schedule, ArithmeticProfile, BasisBudget, Caps, ConditionPolicy, DomainParams, FourierTaylor,
    FrequencyVector, InversionConfig, KamError, Monomial, PsiBudget, ScheduleConfig,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

// ---- 1 -------------------------------------------------------------------

fn brute_min_divisor(omega: &[f64], q: i64) -> (f64, Vec<i64>) {
    let mut best = (f64::INFINITY, vec![]);
    for a in -q..=q {
        for b in -q..=q {
            let l1 = a.abs() + b.abs();
            if l1 == 0 || l1 > q {
                continue;
            }
            let d = (a as f64 * omega[0] + b as f64 * omega[1]).abs();
            if d < best.0 {
                best = (d, vec![a, b]);
            }
        }
    }
    best
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let omega = FrequencyVector::golden();
    let mut worst: f64 = 0.0;
    let mut same_k = true;
    for q in [1, 2, 3, 5, 8, 13] {
        let got = psi(&omega, q as f64, &PsiBudget::default()).unwrap();
        let (d, k) = brute_min_divisor(omega.as_slice(), q);
        worst = worst.max((got.min_divisor - d).abs()).max((got.value - 1.0 / d).abs() / got.value);
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        same_k &= got.minimizer == k || got.minimizer == neg;
    }
    let el = t.elapsed();
    outcome(
        same_k && worst <= 1e-14 && within(el, Duration::from_secs(1)),
        format!("same minimizers: {same_k}, max deviation {worst:.1e}, {el:.2?}"),
    )
}

// ---- 2 -------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut dets_ok = true;
    let mut worst_score: f64 = 0.0;
    for omega in [FrequencyVector::golden(), FrequencyVector::sqrt2()] {
        for q in [5.0, 10.0, 20.0, 40.0] {
            let b = rational_basis(&omega, q, &BasisBudget::default()).unwrap();
            let det = integer_determinant(&b.numerator_matrix());
            dets_ok &= det.abs() == 1 && det == b.determinant;
            for v in &b.vectors {
                worst_score = worst_score.max(v.q as f64 * q * v.approx_error(omega.as_slice()));
            }
        }
    }
    let resonant = FrequencyVector::new(vec![1.0, 0.5]).unwrap();
    let rejected = matches!(
        rational_basis(&resonant, 10.0, &BasisBudget::default()),
        Err(KamError::Resonant { .. })
    );
    let el = t.elapsed();
    outcome(
        dets_ok && worst_score <= 10.0 && rejected && within(el, Duration::from_secs(5)),
        format!("|det| = 1 on all 8: {dets_ok}, max q·Q·|ω₀−v| = {worst_score:.3}, (1, 1/2) rejected: {rejected}, {el:.2?}"),
    )
}

// ---- 3, 4 ----------------------------------------------------------------

const CAPS: Caps = Caps {
    cutoff_k: 16,
    deg_i: 2,
    deg_w: 2,
};

fn random_trig(rng: &mut ChaCha8Rng, n: usize, k_max: i32) -> FourierTaylor {
    let count = rng.random_range(1..24);
    let terms: Vec<(Monomial, Complex64)> = (0..count)
        .filter_map(|_| {
            let k: Vec<i32> = (0..n).map(|_| rng.random_range(-k_max..=k_max)).collect();
            if k.iter().map(|x| x.abs()).sum::<i32>() > k_max {
                return None;
            }
            let mut alpha = vec![0u8; n];
            alpha[0] = rng.random_range(0..3);
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            Some((Monomial::new(&k, &alpha, &vec![0; n]), c))
        })
        .collect();
    FourierTaylor::from_terms(n, CAPS, true, terms).unwrap().0
}

fn bases() -> Vec<(usize, Vec<RationalVector>)> {
    let budget = BasisBudget::default();
    let mut out = Vec::new();
    for omega in [FrequencyVector::golden(), FrequencyVector::sqrt2()] {
        for q in [5.0, 10.0, 20.0, 40.0] {
            out.push((2, rational_basis(&omega, q, &budget).unwrap().vectors));
        }
    }
    for q in [3.0, 4.0] {
        out.push((3, rational_basis(&FrequencyVector::cubic_root(), q, &budget).unwrap().vectors));
    }
    out
}

fn cascade(f: &FourierTaylor, vectors: &[RationalVector]) -> FourierTaylor {
    vectors.iter().fold(f.clone(), |acc, v| acc.average_along(v))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bases = bases();
    let det_two = [RationalVector::new(1, vec![1, 1]).unwrap(), RationalVector::new(1, vec![1, -1]).unwrap()];
    let mut worst: f64 = 0.0;
    let mut det_two_failures = 0;
    let mut tested_2d = 0;
    for i in 0..200 {
        let (n, basis) = &bases[i % bases.len()];
        let f = random_trig(&mut rng, *n, 6);
        let full = f.average_full();
        worst = worst.max(cascade(&f, basis).max_coeff_diff(&full));
        if *n == 2 {
            tested_2d += 1;
            if cascade(&f, &det_two).max_coeff_diff(&full) > 1e-12 {
                det_two_failures += 1;
            }
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-12 && det_two_failures > 0 && within(el, Duration::from_secs(10)),
        format!(
            "unimodular cascade max error {worst:.1e}; det = 2 family differs on {det_two_failures}/{tested_2d} \
             (independent directions already annihilate every k ≠ 0), {el:.2?}"
        ),
    )
}

fn linear_form(v: &RationalVector) -> FourierTaylor {
    let n = v.dim();
    v.value()
        .into_iter()
        .enumerate()
        .fold(FourierTaylor::zero(n, CAPS), |f, (i, x)| f.axpy(x, &FourierTaylor::action(n, CAPS, i)).unwrap())
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bases = bases();
    let d = DomainParams::new(0.5, 0.1, 0.5).unwrap();
    let mut worst_res: f64 = 0.0;
    let mut worst_gain: f64 = 0.0;
    for i in 0..200 {
        let (n, basis) = &bases[i % bases.len()];
        let v = &basis[i % basis.len()];
        let f = random_trig(&mut rng, *n, 6);
        let rhs = f.sub(&f.average_along(v)).unwrap();
        let sol = rhs.solve_homological(v).unwrap();
        let (lhs, _) = sol.bracket(&linear_form(v)).unwrap();
        let scale = rhs.norm(&d).max(1e-300);
        worst_res = worst_res.max(lhs.sub(&rhs).unwrap().norm(&d) / scale);
        worst_gain = worst_gain.max(sol.norm(&d) / (v.q as f64 * scale));
    }
    let el = t.elapsed();
    outcome(
        worst_res <= 1e-10 && worst_gain <= 1.0 + 1e-12 && within(el, Duration::from_secs(10)),
        format!("max residual/|rhs| {worst_res:.1e}, max |F|/(q|rhs|) {worst_gain:.4}, {el:.2?}"),
    )
}

// ---- 5, 6, 8, 10 ---------------------------------------------------------

/// η of the desk configuration.
const ETA: f64 = 1.0 / 66.0;

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn run_kam(config: &Path, out: &Path) -> Result<Duration, String> {
    let t = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_kam"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!("exit {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr)));
    }
    Ok(t.elapsed())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn criterion_5(dir: &Path, elapsed: Duration) -> Outcome {
    let result = json(&dir.join("result.json"));
    let ver = json(&dir.join("verification.json"));
    let eta = ETA;
    let eps_param = f(&result["reduction"]["eps_param"]);
    let mut rd = csv::Reader::from_path(dir.join("iterations.csv")).unwrap();
    let mut rows = 0;
    let mut inside = true;
    let mut worst: f64 = 0.0;
    for r in rd.records() {
        let r = r.unwrap();
        let i: i32 = r[0].parse().unwrap();
        let measured: f64 = r[2].parse().unwrap();
        let envelope = (eta / 8.0).powi(i) * eps_param;
        inside &= measured <= envelope;
        worst = worst.max(measured / envelope);
        rows += 1;
    }
    let residual = f(&ver["invariance_residual"]);
    let shadow = f(&ver["shadow_distance"]);
    let t_max = f(&ver["t_max"]);
    let ok = result["converged"] == true
        && rows >= 5
        && inside
        && residual <= 1e-8
        && f(&ver["grid"]) == 32.0
        && shadow <= 1e-6
        && t_max >= 100.0
        && within(elapsed, Duration::from_secs(300));
    outcome(
        ok,
        format!(
            "{rows} iterations, max |P_i|/envelope {worst:.3}, residual {residual:.1e} (32²), \
             shadow {shadow:.1e} over t ≤ {t_max}, {elapsed:.2?}"
        ),
    )
}

fn criterion_6(dir: &Path) -> Outcome {
    let reports = json(&dir.join("reports.json"));
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, r) in reports.as_array().unwrap().iter().enumerate() {
        let eps = f(&r["input"]["eps"]);
        let eta = ETA;
        let p_plus = f(&r["output"]["p_plus"]);
        let tail = f(&r["linearization"]["tail_norm"]);
        ok &= p_plus <= eta * eps / 8.0 && tail <= eta * eps / 16.0;
        lines.push(format!(
            "i={i}: |P⁺|/(ηε/8) = {:.2e}, tail/(ηε/16) = {:.2e}",
            p_plus / (eta * eps / 8.0),
            tail / (eta * eps / 16.0)
        ));
    }
    outcome(ok, lines.join("; "))
}

fn criterion_8(base: &Path, eps6: &Path) -> Outcome {
    let t = Instant::now();
    let text = std::fs::read_to_string(desk_config()).unwrap();
    let mut ratios = Vec::new();
    for eps in ["1e-6", "1e-7", "1e-8"] {
        let dir = if eps == "1e-6" {
            eps6.to_path_buf()
        } else {
            let dir = base.join(format!("eps{eps}"));
            let cfg = base.join(format!("eps{eps}.toml"));
            std::fs::write(&cfg, text.replace("epsilon = 1e-6", &format!("epsilon = {eps}"))).unwrap();
            if let Err(e) = run_kam(&cfg, &dir) {
                return outcome(false, format!("run at ε = {eps} failed: {e}"));
            }
            dir
        };
        let res = json(&dir.join("result.json"));
        let shift = f(&res["error_bounds"]["omega_shift"]);
        let r = f(&res["reduction"]["r"]);
        let eps_param = f(&res["reduction"]["eps_param"]);
        ratios.push((eps, shift * r / eps_param));
    }
    let hi = ratios.iter().map(|x| x.1).fold(0.0, f64::max);
    let lo = ratios.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let el = t.elapsed();
    outcome(
        lo > 0.0 && hi / lo <= 3.0 && within(el, Duration::from_secs(900)),
        format!(
            "|ω̃−ω₀|·r/ε_param = {} (spread ×{:.0}; the shift is O(ε²) while r/ε_param ~ ε^(-1/2)), {el:.2?}",
            ratios.iter().map(|(e, x)| format!("{x:.2e} at ε={e}")).collect::<Vec<_>>().join(", "),
            hi / lo
        ),
    )
}

fn criterion_10(base: &Path, first: &Path) -> Outcome {
    let second = base.join("repeat");
    if let Err(e) = run_kam(&desk_config(), &second) {
        return outcome(false, format!("second run failed: {e}"));
    }
    let same = |name: &str| std::fs::read(first.join(name)).unwrap() == std::fs::read(second.join(name)).unwrap();
    let (a, b) = (same("iterations.csv"), same("result.json"));
    outcome(a && b, format!("iterations.csv identical: {a}, result.json identical: {b}"))
}

// ---- 7 -------------------------------------------------------------------

fn random_shift(rng: &mut ChaCha8Rng, h: f64, frac: f64) -> Vec<FourierTaylor> {
    let exps: [[u8; 2]; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
    let raw: Vec<FourierTaylor> = (0..2)
        .map(|_| {
            let terms: Vec<_> = exps
                .iter()
                .map(|e| (Monomial::new(&[0, 0], &[0, 0], e), Complex64::new(rng.random_range(-1.0..1.0), 0.0)))
                .collect();
            FourierTaylor::from_terms(2, CAPS, true, terms).unwrap().0
        })
        .collect();
    let d = DomainParams { r: 1.0, s: 0.0, h };
    let delta = raw.iter().map(|f| f.norm(&d)).fold(0.0, f64::max);
    raw.iter().map(|f| f.scale(frac * h / 4.0 / delta)).collect()
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-3;
    let cfg = InversionConfig::default();
    let mut ok = true;
    let mut worst_close: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for _ in 0..100 {
        let frac = rng.random_range(0.01..1.0);
        let nu = random_shift(&mut rng, h, frac);
        let inv = match invert_frequency_map(&nu, h, &cfg) {
            Ok(inv) => inv,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        let delta = inv.certificate.delta;
        worst_close = worst_close.max(inv.certificate.phi_minus_id / delta);
        for j in 0..20 {
            let a = j as f64 / 20.0 * std::f64::consts::TAU;
            let w = [0.2 * h * a.cos(), 0.2 * h * (1.7 * a).sin()];
            let phi: Vec<f64> = inv.phi.iter().map(|p| p.eval(&w)).collect();
            for k in 0..2 {
                let fk = phi[k] + nu[k].evaluate_real(&[0.0, 0.0], &[0.0, 0.0], &phi);
                worst_inv = worst_inv.max((fk - w[k]).abs());
            }
        }
    }
    let big = random_shift(&mut rng, h, 1.5);
    let rejected = invert_frequency_map(&big, h, &cfg).is_err();
    let el = t.elapsed();
    outcome(
        ok && worst_close <= 1.0 + 1e-9 && worst_inv <= 1e-12 && rejected && within(el, Duration::from_secs(5)),
        format!(
            "max |φ−Id|/δ {worst_close:.3}, max |f(φ(ω))−ω| {worst_inv:.1e}, δ > h/4 rejected: {rejected}, {el:.2?}"
        ),
    )
}

// ---- 9 -------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let omega = FrequencyVector::golden();
    let profile = ArithmeticProfile::build(&omega, 2048, &PsiBudget { max_dim: 4, max_l1: 4096 }).unwrap();
    let d = DomainParams::new(0.0125, 0.4, 1e-3).unwrap();
    let cfg = ScheduleConfig {
        policy: ConditionPolicy::Report,
        ..ScheduleConfig::default()
    };
    let sched = build_schedule(&profile, &d, 3.3e-4, &cfg).unwrap();
    let sigma_sum: f64 = sched.entries[..cfg.max_iters].iter().map(|e| cfg.c_sigma / e.q as f64).sum();
    let sum_ok = sigma_sum <= d.s / 2.0 && (sigma_sum - sched.sigma_sum).abs() <= 1e-15;
    // independent scan of the table
    let q_ok = sched.entries.iter().all(|e| {
        let scan = profile.delta.iter().take_while(|&&x| x <= e.delta).count() as u64;
        scan == e.q
    });
    let q0 = sched.q0.q0;
    let tail = profile.bruno_russmann_tail(q0, profile.delta_max()).unwrap();
    let q0_ok = tail.value <= d.s / (2.0 * cfg.c_sigma);
    let el = t.elapsed();
    outcome(
        sum_ok && q_ok && q0_ok && within(el, Duration::from_secs(1)),
        format!(
            "Σσ_i = {sigma_sum:.4} ≤ {:.2}: {sum_ok}, Δ*(Δ_i) = Q_i: {q_ok}, tail(Q₀ = {q0}) = {:.4} ≤ {:.2}: {q0_ok}, {el:.2?}",
            d.s / 2.0,
            tail.value,
            d.s / (2.0 * cfg.c_sigma)
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters from the libtest CLI are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let base = tempfile::tempdir().unwrap();
    let desk = base.path().join("desk");
    let desk_run = run_kam(&desk_config(), &desk);

    let known: &[usize] = &[3, 8];
    let mut results: Vec<(usize, Outcome)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3()), (4, criterion_4())];
    match &desk_run {
        Ok(el) => {
            results.push((5, criterion_5(&desk, *el)));
            results.push((6, criterion_6(&desk)));
        }
        Err(e) => {
            results.push((5, outcome(false, format!("desk run failed: {e}"))));
            results.push((6, outcome(false, "no desk run".into())));
        }
    }
    results.push((7, criterion_7()));
    results.push((8, if desk_run.is_ok() { criterion_8(base.path(), &desk) } else { outcome(false, "no desk run".into()) }));
    results.push((9, criterion_9()));
    results.push((10, if desk_run.is_ok() { criterion_10(base.path(), &desk) } else { outcome(false, "no desk run".into()) }));

    let mut unexpected = 0;
    for (id, o) in &results {
        let tag = match (o.pass, known.contains(id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {id:>2}: {tag}: {}", o.detail);
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
