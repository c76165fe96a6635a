//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use kam_core::reduction::PolyTerm;
use kam_core::{
    Caps, ConditionPolicy, DriverConfig, FrequencyVector, IntegrableSpec, Polynomial, PsiBudget, ReductionConfig,
    ScheduleConfig, TrigPolynomial, TrigTerm, VerificationConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    /// `"golden"`, `"sqrt2"`, `"cubic-root"` or comma separated decimals.
    pub frequency: String,
    #[serde(default)]
    pub policy: ConditionPolicy,
    pub system: SystemConfig,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub cutoffs: CutoffConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: Option<VerificationConfig>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub epsilon: f64,
    /// Radius of the action domain around `∇h⁻¹(ω₀)`.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Terms of `h`; `ω₀·p + ½|p|²` when empty.
    #[serde(default)]
    pub h: Vec<PolyTerm>,
    pub f: Vec<TrigTerm>,
}

fn default_radius() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub s: f64,
    pub h: f64,
    /// Safety factor on the sampled constants `M`, `F`.
    pub safety: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        let r = ReductionConfig::default();
        Self {
            s: r.s,
            h: r.h,
            safety: r.safety,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffConfig {
    pub k: u32,
    pub deg_i: u32,
    pub deg_w: u32,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            k: 16,
            deg_i: 2,
            deg_w: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub q_max: u64,
    pub max_dim: usize,
    pub max_l1: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            q_max: 2048,
            max_dim: 4,
            max_l1: 4096,
        }
    }
}

impl ProfileConfig {
    pub fn budget(&self) -> PsiBudget {
        PsiBudget {
            max_dim: self.max_dim,
            max_l1: self.max_l1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths are resolved against the config file's directory.
    pub dir: PathBuf,
    pub embedding: bool,
    pub reports: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("kam-out"),
            embedding: true,
            reports: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if cfg.output.dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    /// The top-level policy and the schedule's `η` and constants govern every stage.
    pub fn normalize(&mut self) {
        self.schedule.policy = self.policy;
        self.driver.step.policy = self.policy;
        self.driver.step.eta = self.schedule.eta;
        self.driver.step.constants = self.schedule.constants;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Usage(format!("config field `{field}`: {why}")));
        if self.version != SCHEMA_VERSION {
            return bad("version", format!("schema {} unsupported (expected {SCHEMA_VERSION})", self.version));
        }
        let n = self.omega()?.dim();
        let sys = &self.system;
        if !(sys.epsilon > 0.0 && sys.epsilon.is_finite()) {
            return bad("system.epsilon", format!("{} must be positive", sys.epsilon));
        }
        if !(sys.radius > 0.0) {
            return bad("system.radius", format!("{} must be positive", sys.radius));
        }
        if sys.f.is_empty() {
            return bad("system.f", "needs at least one term".into());
        }
        for (i, t) in sys.f.iter().enumerate() {
            if t.k.len() != n || t.powers.len() != n {
                return bad(&format!("system.f[{i}]"), format!("k and powers need {n} entries"));
            }
        }
        for (i, t) in sys.h.iter().enumerate() {
            if t.powers.len() != n {
                return bad(&format!("system.h[{i}]"), format!("powers need {n} entries"));
            }
        }
        if !(self.domain.s > 0.0 && self.domain.h > 0.0) {
            return bad("domain", format!("s = {} and h = {} must be positive", self.domain.s, self.domain.h));
        }
        if !(self.domain.safety >= 1.0) {
            return bad("domain.safety", format!("{} must be ≥ 1", self.domain.safety));
        }
        if self.cutoffs.k == 0 || self.cutoffs.deg_i < 2 {
            return bad("cutoffs", "need k ≥ 1 and deg_i ≥ 2".into());
        }
        self.schedule
            .validate()
            .or_else(|e| bad("schedule", e.to_string()))?;
        if let Some(v) = &self.verify {
            if !(v.dt > 0.0 && v.t_max > 0.0) {
                return bad("verify", format!("dt = {} and t_max = {} must be positive", v.dt, v.t_max));
            }
        }
        Ok(())
    }

    pub fn omega(&self) -> Result<FrequencyVector, CliError> {
        FrequencyVector::parse(&self.frequency).map_err(|e| CliError::Usage(format!("config field `frequency`: {e}")))
    }

    pub fn spec(&self) -> Result<IntegrableSpec, CliError> {
        let omega = self.omega()?;
        let n = omega.dim();
        let h = if self.system.h.is_empty() {
            Polynomial::linear_plus_half_square(omega.as_slice())
        } else {
            Polynomial::new(n, self.system.h.clone())?
        };
        let f = TrigPolynomial::new(n, self.system.f.clone())?;
        Ok(IntegrableSpec::new(omega, h, f, self.system.epsilon, self.system.radius)?)
    }

    pub fn reduction(&self) -> ReductionConfig {
        ReductionConfig {
            s: self.domain.s,
            h: self.domain.h,
            safety: self.domain.safety,
            caps: Caps::new(self.cutoffs.k, self.cutoffs.deg_i, self.cutoffs.deg_w),
            constants: self.schedule.constants,
            policy: self.policy,
            ..ReductionConfig::default()
        }
    }


    /// Canonical TOML form, defaults filled in.
    pub fn echo(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Numerical(format!("config echo: {e}")))
    }
}
