//! Typed run configuration: one JSON document describes the model (diffusion
//! coefficient, declared zero set, driving measure, start point) plus exactly
//! one experiment section. Parsing is strict — unknown keys are rejected — and
//! validation happens before any simulation starts, so a bad config always
//! exits with a config error rather than a half-written output directory.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fk::{FkConfig, TerminalPayoff};
use crate::func::RealFn;
use crate::measure::{DensityPiece, MeasureError, SignedMeasure, ZeroSet};
use crate::transform::{DiffusionSpec, DriftSpec, TransformError};
use crate::verify::{ContinuityConfig, ModulusPair, RegularityConfig, UniquenessConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON for the run schema: {0}")]
    Json(#[from] serde_json::Error),
    /// An admissibility clause of the driving measure fails; `condition` names
    /// the clause, e.g. "(A1)" for an atom whose |weight| reaches 1.
    #[error("config violates {condition}: {detail}")]
    Condition { condition: String, detail: String },
    #[error("invalid measure: {0}")]
    Measure(#[from] MeasureError),
    #[error("invalid coefficient: {0}")]
    Spec(#[from] TransformError),
    #[error("{0}")]
    Invalid(String),
}

/// The experiments the laboratory can run. Serialized names are the
/// snake_case variant names; `Experiment::ALL` fixes the listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Localtime,
    Uniqueness,
    Conditions,
    Reflected,
    Fk,
    Continuity,
    Regularity,
    Sobolev,
    Nakao,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Simulate,
        Experiment::Localtime,
        Experiment::Uniqueness,
        Experiment::Conditions,
        Experiment::Reflected,
        Experiment::Fk,
        Experiment::Continuity,
        Experiment::Regularity,
        Experiment::Sobolev,
        Experiment::Nakao,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Localtime => "localtime",
            Experiment::Uniqueness => "uniqueness",
            Experiment::Conditions => "conditions",
            Experiment::Reflected => "reflected",
            Experiment::Fk => "fk",
            Experiment::Continuity => "continuity",
            Experiment::Regularity => "regularity",
            Experiment::Sobolev => "sobolev",
            Experiment::Nakao => "nakao",
        }
    }

    /// Name of the config section this experiment reads; every section has
    /// defaults, so a run may omit it entirely.
    pub fn section(self) -> &'static str {
        self.name()
    }

    /// One-line description for the `list` subcommand.
    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Simulate => {
                "runs one path scheme (transform, atom flow, classical, reflected) \
                 and dumps summary statistics and sampled paths"
            }
            Experiment::Localtime => {
                "estimates local time at a level with occupation and positive-part \
                 estimators and checks the occupation-density identity under refinement"
            }
            Experiment::Uniqueness => {
                "compares the transform scheme against the regularized atom-flow \
                 scheme and checks the gap shrinks with the step and the start offset"
            }
            Experiment::Conditions => {
                "checks admissibility of the driving measure, local square \
                 integrability of the diffusion, and the small-gap modulus conditions"
            }
            Experiment::Reflected => {
                "simulates nonnegative reflected paths and checks the boundary \
                 identities: odd-power residual and local-time support fraction"
            }
            Experiment::Fk => {
                "cross-validates a Monte Carlo expectation against a finite \
                 difference PDE value on matched space-time probes"
            }
            Experiment::Continuity => {
                "measures start-point sensitivity through a Holder-norm \
                 exceedance ladder over shrinking offsets"
            }
            Experiment::Regularity => {
                "fits the mean-square time-increment exponent and checks the \
                 square-root modulus bound on every sampled pair"
            }
            Experiment::Sobolev => {
                "checks the half-derivative maximal-function criterion for the \
                 diffusion coefficient against its declared zero set"
            }
            Experiment::Nakao => {
                "certifies ellipticity and bounded variation of 1/sigma on compacts"
            }
        }
    }

    pub fn from_name(name: &str) -> Option<Experiment> {
        Experiment::ALL.iter().copied().find(|e| e.name() == name)
    }

    /// Closest experiment names to a misspelled one, best match first.
    pub fn suggestions(name: &str) -> Vec<&'static str> {
        let mut scored: Vec<(usize, &'static str)> = Experiment::ALL
            .iter()
            .map(|e| (edit_distance(name, e.name()), e.name()))
            .collect();
        scored.sort();
        scored.into_iter().take(3).map(|(_, n)| n).collect()
    }
}

/// Levenshtein distance; inputs are short command-line words.
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut row = vec![i + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row.push(sub.min(prev[j + 1] + 1).min(row[j] + 1));
        }
        prev = row;
    }
    prev[b.len()]
}

/// Which ensemble the `simulate` experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Transform,
    Atom,
    Classical,
    Reflected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scheme: SchemeKind,
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Transform grid resolution (transform scheme only).
    pub resolution: usize,
    /// Working window override; the default is the hull of the start point
    /// and the measure support plus a far-field pad.
    pub domain: Option<(f64, f64)>,
    /// Write every path to paths.csv (time rows, one column per path).
    pub dump_paths: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scheme: SchemeKind::Transform,
            paths: 64,
            steps: 1 << 10,
            horizon: 1.0,
            seed: 11,
            resolution: 1 << 12,
            domain: None,
            dump_paths: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocaltimeConfig {
    /// Level at which local time is estimated.
    pub level: f64,
    pub paths: usize,
    /// Coarsest step count; each refinement doubles it.
    pub steps: usize,
    /// Number of dyadic refinements (ladder length).
    pub refinements: usize,
    pub horizon: f64,
    pub seed: u64,
    pub resolution: usize,
    /// Weight for the occupation-density residual; omitted means 1.
    pub weight: Option<RealFn>,
    /// Relative residual allowed at the finest step.
    pub residual_tolerance: f64,
    /// Allowed mean relative residual of the two-path lattice and min/max
    /// identities at the finest step.
    pub identity_tolerance: f64,
}

impl Default for LocaltimeConfig {
    fn default() -> Self {
        LocaltimeConfig {
            level: 0.0,
            paths: 256,
            steps: 1 << 10,
            refinements: 3,
            horizon: 1.0,
            seed: 29,
            resolution: 1 << 12,
            weight: None,
            residual_tolerance: 0.05,
            identity_tolerance: 0.10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsConfig {
    /// Compacts for the local square-integrability check of sigma^{-2}.
    pub compacts: Vec<(f64, f64)>,
    /// Optional modulus pair for the small-gap divergence/integrability checks.
    pub pair: Option<ModulusPair>,
    pub samples: usize,
    pub seed: u64,
    /// Window for the modulus checks; defaults to the working window.
    pub domain: Option<(f64, f64)>,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            compacts: vec![(-1.0, 1.0)],
            pair: None,
            samples: 10_000,
            seed: 101,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectedConfig {
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Start of the partner ensemble (same driver, coupled pairs) used by the
    /// two-path identities; measured as an offset above the run's `x0`.
    pub partner_offset: f64,
    /// Odd power 2n+1 of the two-path power identity is set through `n`.
    pub power: u32,
    /// Distance threshold for the push-support fraction.
    pub support_delta: f64,
    /// Allowed mean relative residual of the odd-power identity.
    pub power_tolerance: f64,
    /// Allowed mean support fraction at distance `support_delta`.
    pub support_tolerance: f64,
}

impl Default for ReflectedConfig {
    fn default() -> Self {
        ReflectedConfig {
            paths: 512,
            steps: 1 << 12,
            horizon: 1.0,
            seed: 41,
            partner_offset: 0.5,
            power: 1,
            support_delta: 0.05,
            power_tolerance: 0.10,
            support_tolerance: 0.10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SobolevConfig {
    pub domain: (f64, f64),
    pub resolution: usize,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        SobolevConfig { domain: (-8.0, 8.0), resolution: 1 << 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NakaoConfig {
    /// Ellipticity floor sigma must clear on every compact.
    pub eps_floor: f64,
    pub compacts: Vec<(f64, f64)>,
}

impl Default for NakaoConfig {
    fn default() -> Self {
        NakaoConfig { eps_floor: 1e-3, compacts: vec![(-1.0, 1.0)] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FkSection {
    pub payoff: TerminalPayoff,
    pub compare: FkConfig,
}

impl Default for FkSection {
    fn default() -> Self {
        FkSection {
            // Smoothed indicator of the right half line: bounded, Lipschitz,
            // and sensitive to the skew an atom at 0 introduces.
            payoff: TerminalPayoff {
                f: RealFn::Table { xs: vec![-0.25, 0.25], ys: vec![0.0, 1.0] },
                g_time: RealFn::constant(0.0),
                g_space: RealFn::constant(0.0),
                f_bound: 1.0,
                g_bound: 0.0,
            },
            compare: FkConfig::default(),
        }
    }
}

/// One full run: model + experiment choice + optional per-experiment section.
/// Only the section matching `experiment` is read; the rest may be present
/// (a config file can describe a whole campaign) and are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub sigma: RealFn,
    #[serde(default)]
    pub zero_set: ZeroSet,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    /// (c1, c2) with |sigma(x)| <= c1 + c2 |x|; required by `continuity`.
    #[serde(default)]
    pub growth_bound: Option<(f64, f64)>,
    /// Atoms of the driving measure as (location, weight) pairs.
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    /// Absolutely continuous pieces of the driving measure.
    #[serde(default)]
    pub pieces: Vec<DensityPiece>,
    #[serde(default)]
    pub x0: f64,
    /// Driver seed; command-line and environment overrides win over this.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub localtime: Option<LocaltimeConfig>,
    #[serde(default)]
    pub uniqueness: Option<UniquenessConfig>,
    #[serde(default)]
    pub conditions: Option<ConditionsConfig>,
    #[serde(default)]
    pub reflected: Option<ReflectedConfig>,
    #[serde(default)]
    pub fk: Option<FkSection>,
    #[serde(default)]
    pub continuity: Option<ContinuityConfig>,
    #[serde(default)]
    pub regularity: Option<RegularityConfig>,
    #[serde(default)]
    pub sobolev: Option<SobolevConfig>,
    #[serde(default)]
    pub nakao: Option<NakaoConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no simulation: coefficient validity and
    /// measure admissibility. Atom weights are checked here so that an
    /// inadmissible weight reports the violated clause by name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sigma.validate().map_err(|e| ConfigError::Invalid(format!("sigma: {e}")))?;
        for &(location, weight) in &self.atoms {
            if !location.is_finite() || !weight.is_finite() {
                return Err(ConfigError::Invalid(format!(
                    "atom ({location}, {weight}) must be finite"
                )));
            }
            if weight.abs() >= 1.0 && !self.zero_set.contains(location) {
                return Err(ConfigError::Condition {
                    condition: "(A1)".into(),
                    detail: format!(
                        "atom at {location} has |weight| = {} >= 1 outside the declared \
                         zero set, so the jump factor (1 - w)/(1 + w) is not usable",
                        weight.abs()
                    ),
                });
            }
        }
        self.build_model().map(|_| ())
    }

    /// Builds the diffusion spec and the *working* driving measure: the
    /// configured measure restricted to the complement of the declared zero
    /// set (mass sitting where sigma vanishes never moves the process).
    /// The restriction must satisfy the strong admissibility pair.
    pub fn build_model(&self) -> Result<(DiffusionSpec, SignedMeasure), ConfigError> {
        let atoms: Vec<crate::measure::Atom> = self
            .atoms
            .iter()
            .map(|&(location, weight)| crate::measure::Atom { location, weight })
            .collect();
        let raw = SignedMeasure::new(atoms, self.pieces.clone())?;
        let working = raw.restrict(&self.zero_set);
        if !working.strong_pair_passes() {
            let report = working.check_conditions(&self.zero_set);
            let first = report
                .violations
                .iter()
                .find(|v| v.condition == "(A1)" || v.condition == "(A2)");
            return Err(ConfigError::Condition {
                condition: first.map(|v| v.condition.clone()).unwrap_or_else(|| "(A1)".into()),
                detail: first
                    .map(|v| v.detail.clone())
                    .unwrap_or_else(|| "strong admissibility pair fails".into()),
            });
        }
        let spec = DiffusionSpec::new(
            self.sigma.clone(),
            self.zero_set.clone(),
            self.drift.clone(),
            self.growth_bound,
        )
        .map_err(ConfigError::Spec)?;
        Ok((spec, working))
    }
}
