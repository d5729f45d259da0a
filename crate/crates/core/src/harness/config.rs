//! Experiment configuration: a flat `key = value` text format with named
//! presets as starting points.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::ce::Shaping;
use crate::error::{CoreError, Result};
use crate::mrp::SamplingMode;
use crate::sce::{GateMode, Schedule, SceConfig, StepSize, WeightMode};

/// ‖z‖ above this marks a run as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Sce,
    Td0,
    Gtd2,
    Rg,
    Lstd,
    Rlstd,
    Lspe,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] =
        [Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Rg, Algorithm::Lstd, Algorithm::Rlstd, Algorithm::Lspe];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sce => "sce",
            Algorithm::Td0 => "td0",
            Algorithm::Gtd2 => "gtd2",
            Algorithm::Rg => "rg",
            Algorithm::Lstd => "lstd",
            Algorithm::Rlstd => "rlstd",
            Algorithm::Lspe => "lspe",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CoreError::InvalidParameter(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    BairdPerfect,
    BairdImperfect,
    Ring,
    /// Binomial random chain; features chosen by `features`.
    Random,
    CartPole,
    Pendulum5,
}

impl EnvKind {
    const NAMES: [(EnvKind, &'static str); 6] = [
        (EnvKind::BairdPerfect, "baird-perfect"),
        (EnvKind::BairdImperfect, "baird-imperfect"),
        (EnvKind::Ring, "ring"),
        (EnvKind::Random, "random"),
        (EnvKind::CartPole, "cartpole"),
        (EnvKind::Pendulum5, "pendulum5"),
    ];

    pub fn is_continuous(self) -> bool {
        matches!(self, EnvKind::CartPole | EnvKind::Pendulum5)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = EnvKind::NAMES.iter().find(|(k, _)| k == self).map(|(_, n)| *n).unwrap_or("?");
        f.write_str(name)
    }
}

impl FromStr for EnvKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        EnvKind::NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(k, _)| *k)
            .ok_or_else(|| CoreError::InvalidParameter(format!("unknown environment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Whatever the environment ships with.
    Native,
    Rbf,
    Fourier,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Native => "native",
            FeatureKind::Rbf => "rbf",
            FeatureKind::Fourier => "fourier",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(FeatureKind::Native),
            "rbf" => Ok(FeatureKind::Rbf),
            "fourier" => Ok(FeatureKind::Fourier),
            _ => Err(CoreError::InvalidParameter(format!("unknown feature set `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvKind,
    pub features: FeatureKind,
    /// State count for random chains.
    pub states: usize,
    /// Feature count for random chains.
    pub k: usize,
    pub instances: usize,
    pub instance_seed: u64,
    pub gamma: f64,
    pub algorithms: Vec<Algorithm>,

    pub alpha: StepSize,
    pub beta: StepSize,
    pub c: StepSize,
    pub epsilon1: f64,
    pub lambda: f64,
    pub rho: f64,
    pub r: f64,
    pub q: f64,
    /// Initial mean; a single value is broadcast.
    pub mu0: Vec<f64>,
    pub gate: GateMode,
    pub weight: WeightMode,

    pub td_alpha: StepSize,
    pub eta: f64,
    pub lspe_alpha: StepSize,
    pub lstd_ridge: f64,
    /// Starting iterate for the incremental baselines; broadcast like `mu0`.
    pub z0: Vec<f64>,

    pub budget: u64,
    pub seeds: Vec<u64>,
    pub log_stride: u64,
    /// Final √MSPBE at or below this counts as converged.
    pub tol: f64,
    pub expect_divergence: Vec<Algorithm>,
    pub sampling: SamplingMode,
    /// Std of the i.i.d. state distribution for continuous systems.
    pub nu_std: f64,
    /// Quadratic features are taken of `feature_scale · s`.
    pub feature_scale: f64,
    /// Held-out transitions used to estimate the error functionals of
    /// continuous systems.
    pub heldout: usize,
    pub heldout_seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            env: EnvKind::BairdPerfect,
            features: FeatureKind::Native,
            states: 1000,
            k: 50,
            instances: 1,
            instance_seed: 1,
            gamma: 0.9,
            algorithms: vec![Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Lstd],
            alpha: StepSize::Const(0.001),
            beta: StepSize::Const(0.05),
            c: StepSize::Const(0.01),
            epsilon1: 0.8,
            lambda: 0.2,
            rho: 0.1,
            r: 100.0,
            q: 20.0,
            mu0: vec![0.0],
            gate: GateMode::Persistent,
            weight: WeightMode::Shifted,
            td_alpha: StepSize::Const(0.001),
            eta: 1.0,
            lspe_alpha: StepSize::Const(1.0),
            lstd_ridge: 0.0,
            z0: vec![0.0],
            budget: 100_000,
            seeds: (1..=10).collect(),
            log_stride: 100,
            tol: 0.05,
            expect_divergence: Vec::new(),
            sampling: SamplingMode::Iid,
            nu_std: 1.0,
            feature_scale: 1.0,
            heldout: 1_000_000,
            heldout_seed: 7,
            out: PathBuf::from("results"),
        }
    }
}

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidParameter(msg.into())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("{key}: cannot parse `{v}`")))
}

fn parse_list<T, F>(v: &str, f: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

/// Parses `1,2,3` or an inclusive range `1..10`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.trim().split_once("..") {
        let a: u64 = parse_num("seeds", a.trim())?;
        let b: u64 = parse_num("seeds", b.trim())?;
        if b < a {
            return Err(bad(format!("seeds: empty range {a}..{b}")));
        }
        return Ok((a..=b).collect());
    }
    parse_list(v, |s| parse_num("seeds", s))
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn sampling_name(m: SamplingMode) -> &'static str {
    match m {
        SamplingMode::Iid => "iid",
        SamplingMode::Chain => "chain",
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "name" => self.name = v.to_string(),
            "env" => self.env = v.parse()?,
            "features" => self.features = v.parse()?,
            "states" => self.states = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "instances" => self.instances = parse_num(key, v)?,
            "instance_seed" => self.instance_seed = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "algorithms" => self.algorithms = parse_list(v, str::parse)?,
            "alpha" => self.alpha = v.parse()?,
            "beta" => self.beta = v.parse()?,
            "c" => self.c = v.parse()?,
            "epsilon1" => self.epsilon1 = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "rho" => self.rho = parse_num(key, v)?,
            "r" => self.r = parse_num(key, v)?,
            "q" => self.q = parse_num(key, v)?,
            "mu0" => self.mu0 = parse_list(v, |s| parse_num(key, s))?,
            "gate" => self.gate = v.parse()?,
            "weight" => self.weight = v.parse()?,
            "td_alpha" => self.td_alpha = v.parse()?,
            "eta" => self.eta = parse_num(key, v)?,
            "lspe_alpha" => self.lspe_alpha = v.parse()?,
            "lstd_ridge" => self.lstd_ridge = parse_num(key, v)?,
            "z0" => self.z0 = parse_list(v, |s| parse_num(key, s))?,
            "budget" => self.budget = parse_num(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "log_stride" => self.log_stride = parse_num(key, v)?,
            "tol" => self.tol = parse_num(key, v)?,
            "expect_divergence" => self.expect_divergence = parse_list(v, str::parse)?,
            "sampling" => {
                self.sampling = match v {
                    "iid" => SamplingMode::Iid,
                    "chain" => SamplingMode::Chain,
                    _ => return Err(bad(format!("sampling: unknown mode `{v}`"))),
                }
            }
            "nu_std" => self.nu_std = parse_num(key, v)?,
            "feature_scale" => self.feature_scale = parse_num(key, v)?,
            "heldout" => self.heldout = parse_num(key, v)?,
            "heldout_seed" => self.heldout_seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(bad(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a config file. A leading `preset = NAME` line starts from
    /// that preset; otherwise from the defaults, in which case `env` is
    /// required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<ExperimentConfig> = None;
        let mut saw_env = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if key == "preset" {
                if cfg.is_some() {
                    return Err(bad(format!("line {}: `preset` must come first", lineno + 1)));
                }
                cfg = Some(preset(value.trim())?);
                saw_env = true;
                continue;
            }
            saw_env |= key == "env";
            cfg.get_or_insert_with(ExperimentConfig::default)
                .set(key, value)
                .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
        }
        if !saw_env {
            return Err(bad("config must set `env` or start from a `preset`"));
        }
        let cfg = cfg.unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("name", self.name.clone());
        put("env", self.env.to_string());
        put("features", self.features.to_string());
        put("states", self.states.to_string());
        put("k", self.k.to_string());
        put("instances", self.instances.to_string());
        put("instance_seed", self.instance_seed.to_string());
        put("gamma", self.gamma.to_string());
        put("algorithms", join(&self.algorithms));
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("c", self.c.to_string());
        put("epsilon1", self.epsilon1.to_string());
        put("lambda", self.lambda.to_string());
        put("rho", self.rho.to_string());
        put("r", self.r.to_string());
        put("q", self.q.to_string());
        put("mu0", join(&self.mu0));
        put("gate", self.gate.to_string());
        put("weight", self.weight.to_string());
        put("td_alpha", self.td_alpha.to_string());
        put("eta", self.eta.to_string());
        put("lspe_alpha", self.lspe_alpha.to_string());
        put("lstd_ridge", self.lstd_ridge.to_string());
        put("z0", join(&self.z0));
        put("budget", self.budget.to_string());
        put("seeds", join(&self.seeds));
        put("log_stride", self.log_stride.to_string());
        put("tol", self.tol.to_string());
        put("expect_divergence", join(&self.expect_divergence));
        put("sampling", sampling_name(self.sampling).to_string());
        put("nu_std", self.nu_std.to_string());
        put("feature_scale", self.feature_scale.to_string());
        put("heldout", self.heldout.to_string());
        put("heldout_seed", self.heldout_seed.to_string());
        put("out", self.out.display().to_string());
        s
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = Schedule {
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
            epsilon1: self.epsilon1,
            lambda: self.lambda,
            shaping: Shaping::new(self.r, self.rho)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn sce_config(&self) -> Result<SceConfig> {
        Ok(SceConfig { schedule: self.schedule()?, gate: self.gate, weight: self.weight })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(bad(format!("name `{}` must be non-empty without separators", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(bad("seed list is empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(bad("seed list has duplicates"));
        }
        if self.algorithms.is_empty() {
            return Err(bad("algorithm list is empty"));
        }
        if self.log_stride == 0 {
            return Err(bad("log_stride must be positive"));
        }
        if self.instances == 0 {
            return Err(bad("instances must be positive"));
        }
        if self.instances > 1 && self.env != EnvKind::Random {
            return Err(bad("multiple instances only make sense for random chains"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(bad(format!("gamma={} outside [0,1)", self.gamma)));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(bad(format!("q={} must be positive", self.q)));
        }
        if self.mu0.is_empty() || self.z0.is_empty() {
            return Err(bad("mu0 and z0 need at least one value"));
        }
        if !(self.eta > 0.0) || self.lstd_ridge < 0.0 || !(self.tol >= 0.0) {
            return Err(bad("eta must be positive, lstd_ridge and tol non-negative"));
        }
        if self.env == EnvKind::Random {
            if self.features == FeatureKind::Native {
                return Err(bad("random chains need features = rbf or fourier"));
            }
            if self.states < 2 || self.k == 0 || self.k > self.states {
                return Err(bad(format!("need 2 <= states and 1 <= k <= states, got {} / {}", self.states, self.k)));
            }
        } else if self.features != FeatureKind::Native {
            return Err(bad(format!("{} uses its own features", self.env)));
        }
        if self.env.is_continuous() && (self.heldout == 0 || !(self.nu_std > 0.0) || !(self.feature_scale > 0.0)) {
            return Err(bad("continuous systems need heldout, nu_std and feature_scale positive"));
        }
        if self.algorithms.contains(&Algorithm::Sce) {
            self.schedule()?;
        }
        Ok(())
    }

    /// Expands `mu0`/`z0`-style lists to length `k`.
    pub fn broadcast(values: &[f64], k: usize, key: &str) -> Result<Vec<f64>> {
        match values.len() {
            1 => Ok(vec![values[0]; k]),
            n if n == k => Ok(values.to_vec()),
            n => Err(bad(format!("{key} has {n} entries, expected 1 or {k}"))),
        }
    }
}

/// Names and one-line descriptions of the built-in presets.
pub const PRESETS: [(&str, &str); 11] = [
    ("cartpole", "linearized cart-pole under the LQR policy, quadratic features"),
    ("pendulum5", "linearized 5-link pendulum under the LQR policy, quadratic features"),
    ("baird-perfect-0.1", "Baird's star, perfect features, discount 0.1"),
    ("baird-perfect-0.9", "Baird's star, perfect features, discount 0.9 (TD(0) diverges)"),
    ("baird-imperfect", "Baird's star, imperfect features, reward 2, discount 0.99"),
    ("ring-0.99", "10-state ring, discount 0.99"),
    ("ring-0.1", "10-state ring, discount 0.1"),
    ("random-rbf", "binomial random chain, 1000 states, 50 RBF features, discount 0.01"),
    ("random-fourier", "binomial random chain, 1000 states, 50 Fourier features, discount 0.9"),
    ("table3-scaled", "7 random chains, 200 states, 20 RBF features, discount 0.9"),
    ("table3-full", "7 random chains, 2^15 states, 100 RBF features (long; opt-in)"),
];

const BAIRD_START: [f64; 8] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig { name: name.to_string(), ..ExperimentConfig::default() };
    let power = |power: f64| StepSize::Power { scale: 1.0, power };
    let c = match name {
        "cartpole" => ExperimentConfig {
            env: EnvKind::CartPole,
            gamma: 0.95,
            algorithms: vec![Algorithm::Sce],
            alpha: power(1.0),
            beta: power(0.6),
            c: StepSize::Const(0.01),
            epsilon1: 0.95,
            q: 0.1,
            r: 1.0,
            nu_std: 0.03,
            feature_scale: 10.0,
            budget: 300_000,
            log_stride: 1_000,
            heldout: 200_000,
            ..base
        },
        "pendulum5" => ExperimentConfig {
            env: EnvKind::Pendulum5,
            gamma: 0.95,
            algorithms: vec![Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Lstd],
            alpha: StepSize::Const(0.001),
            beta: StepSize::Const(0.05),
            c: StepSize::Const(0.05),
            epsilon1: 0.95,
            td_alpha: StepSize::Const(1e-5),
            q: 0.1,
            r: 1.0,
            nu_std: 0.03,
            feature_scale: 10.0,
            budget: 50_000,
            heldout: 200_000,
            ..base
        },
        "baird-perfect-0.1" | "baird-perfect-0.9" | "baird-imperfect" => {
            let (env, gamma) = match name {
                "baird-perfect-0.1" => (EnvKind::BairdPerfect, 0.1),
                "baird-perfect-0.9" => (EnvKind::BairdPerfect, 0.9),
                _ => (EnvKind::BairdImperfect, 0.99),
            };
            let algorithms = vec![Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Rg, Algorithm::Lstd];
            ExperimentConfig {
                env,
                gamma,
                algorithms,
                alpha: StepSize::Const(0.001),
                beta: StepSize::Const(0.05),
                c: StepSize::Const(0.01),
                epsilon1: 0.8,
                q: if env == EnvKind::BairdImperfect { 300.0 } else { 20.0 },
                mu0: BAIRD_START.to_vec(),
                z0: BAIRD_START.to_vec(),
                td_alpha: StepSize::Const(0.01),
                lstd_ridge: 1e-6,
                budget: if env == EnvKind::BairdImperfect { 500_000 } else { 200_000 },
                expect_divergence: if gamma > 0.5 { vec![Algorithm::Td0] } else { Vec::new() },
                ..base
            }
        }
        "ring-0.99" | "ring-0.1" => ExperimentConfig {
            env: EnvKind::Ring,
            gamma: if name == "ring-0.99" { 0.99 } else { 0.1 },
            algorithms: vec![Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Rg, Algorithm::Lstd],
            alpha: StepSize::Const(0.001),
            beta: StepSize::Const(0.05),
            c: StepSize::Const(0.075),
            epsilon1: 0.85,
            td_alpha: StepSize::Const(0.01),
            budget: 100_000,
            ..base
        },
        "random-rbf" | "random-fourier" => ExperimentConfig {
            env: EnvKind::Random,
            features: if name == "random-rbf" { FeatureKind::Rbf } else { FeatureKind::Fourier },
            states: 1000,
            k: 50,
            gamma: if name == "random-rbf" { 0.01 } else { 0.9 },
            algorithms: vec![Algorithm::Sce, Algorithm::Td0, Algorithm::Gtd2, Algorithm::Rg, Algorithm::Lstd],
            alpha: StepSize::Const(0.001),
            beta: StepSize::Const(0.05),
            c: StepSize::Const(0.075),
            epsilon1: 0.85,
            q: if name == "random-rbf" { 1.0 } else { 0.3 },
            r: 1.0,
            budget: 300_000,
            log_stride: 1_000,
            ..base
        },
        "table3-scaled" | "table3-full" => {
            let full = name == "table3-full";
            ExperimentConfig {
                env: EnvKind::Random,
                features: FeatureKind::Rbf,
                states: if full { 1 << 15 } else { 200 },
                k: if full { 100 } else { 20 },
                instances: 7,
                gamma: 0.9,
                algorithms: Algorithm::ALL.to_vec(),
                alpha: StepSize::Decay { c0: 0.002, tau: 100_000.0 },
                beta: power(0.6),
                c: StepSize::Const(0.075),
                epsilon1: 0.85,
                q: 30.0,
                r: 1.0,
                budget: 1_000_000,
                log_stride: 10_000,
                seeds: if full { vec![1] } else { (1..=10).collect() },
                ..base
            }
        }
        _ => return Err(bad(format!("unknown preset `{name}`"))),
    };
    Ok(c)
}
