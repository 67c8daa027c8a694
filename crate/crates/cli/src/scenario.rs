//! Scenario files: a JSON document naming a protocol on `n` strategies and
//! the analyses to run on it.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use simplexflow::dynamics::{NewtonOptions, OmegaOptions};
use simplexflow::games::{CorrespondenceOptions, DEFAULT_BETA_LADDER};
use simplexflow::lyapunov::LyapunovSpec;
use simplexflow::protocols::{PayoffSpec, Protocol, ProtocolSpec, TargetSpec};
use simplexflow::SimplexPoint;

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub name: String,
    pub n: usize,
    pub protocol: ProtocolSpec,
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Which field a flow or Lyapunov check uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// `x L(x)`
    #[default]
    Generator,
    /// `-x + pi(x)`
    Relaxation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StochasticMode {
    Population,
    Reinforcement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Analysis {
    Integrate {
        x0: Vec<f64>,
        t_end: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        field: FieldKind,
        /// Classifies the tail of the trajectory when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<OmegaOptions>,
        /// Expected verdict: `fixed-point`, `periodic` or `undecided`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<String>,
    },
    Equilibria {
        #[serde(default)]
        newton: NewtonOptions,
    },
    LyapunovCheck {
        /// Taken from the protocol's target family when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lyapunov: Option<LyapunovSpec>,
        /// Multiplies `V` (and its gradient and `alpha`).
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        field: FieldKind,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    BetaLadder {
        payoff: PayoffSpec,
        #[serde(default = "default_ladder")]
        ladder: Vec<f64>,
        #[serde(default)]
        options: CorrespondenceOptions,
    },
    Stochastic {
        mode: StochasticMode,
        /// Initial population shares, or the prior of the occupation measure.
        x0: Vec<f64>,
        #[serde(default = "default_agents")]
        agents: u64,
        /// Mean-field time covered by population runs.
        #[serde(default = "default_horizon")]
        horizon: f64,
        /// Length of reinforcement runs.
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default)]
        start: usize,
        #[serde(default = "default_replicates")]
        replicates: usize,
    },
    /// Flows of both fields of a reversible-from-target protocol with a
    /// spiral target, compared at the barycenter and in the long run.
    Counterexample {
        x0: Vec<f64>,
        #[serde(default = "default_ce_t_end")]
        t_end: f64,
        #[serde(default = "default_ce_window")]
        window: f64,
        #[serde(default = "default_ce_dt")]
        dt: f64,
        /// The relaxation field contracts slowly (rate `epsilon eta`) and
        /// gets its own horizon.
        #[serde(default = "default_ce_relaxation_t_end")]
        relaxation_t_end: f64,
    },
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Integrate { .. } => "integrate",
            Analysis::Equilibria { .. } => "equilibria",
            Analysis::LyapunovCheck { .. } => "lyapunov-check",
            Analysis::BetaLadder { .. } => "beta-ladder",
            Analysis::Stochastic { .. } => "stochastic",
            Analysis::Counterexample { .. } => "counterexample",
        }
    }
}

fn default_dt() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    2000
}
fn default_delta() -> f64 {
    0.01
}
fn default_tol() -> f64 {
    1e-6
}
fn default_ladder() -> Vec<f64> {
    DEFAULT_BETA_LADDER.to_vec()
}
fn default_agents() -> u64 {
    1000
}
fn default_horizon() -> f64 {
    5.0
}
fn default_steps() -> usize {
    10_000
}
fn default_replicates() -> usize {
    10
}
fn default_ce_t_end() -> f64 {
    2000.0
}
fn default_ce_window() -> f64 {
    500.0
}
fn default_ce_dt() -> f64 {
    0.05
}
fn default_ce_relaxation_t_end() -> f64 {
    5000.0
}

const PROTOCOL_KINDS: [&str; 6] = [
    "sampling",
    "comparison",
    "gibbs-direct",
    "vertex-reinforcement",
    "reversible-from-target",
    "replicator",
];
const ANALYSIS_KINDS: [&str; 6] = [
    "integrate",
    "equilibria",
    "lyapunov-check",
    "beta-ladder",
    "stochastic",
    "counterexample",
];

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    check_kinds(&value)?;
    let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        match unknown_variant(&message) {
            Some(tag) => CliError::UnknownKind { path, tag },
            None => CliError::Schema { path, message },
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Top-level protocol and analysis tags are checked up front so that the
/// error names the tag rather than a serde message.
fn check_kinds(value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(kind) = value.pointer("/protocol/kind").and_then(|k| k.as_str()) {
        if !PROTOCOL_KINDS.contains(&kind) {
            return Err(CliError::UnknownKind {
                path: "protocol.kind".into(),
                tag: kind.into(),
            });
        }
    }
    if let Some(list) = value.get("analyses").and_then(|a| a.as_array()) {
        for (i, a) in list.iter().enumerate() {
            if let Some(kind) = a.get("kind").and_then(|k| k.as_str()) {
                if !ANALYSIS_KINDS.contains(&kind) {
                    return Err(CliError::UnknownKind {
                        path: format!("analyses[{i}].kind"),
                        tag: kind.into(),
                    });
                }
            }
        }
    }
    Ok(())
}

fn unknown_variant(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown variant `")?;
    Some(rest.split('`').next()?.to_string())
}

fn point(x: &[f64], n: usize, path: &str) -> Result<SimplexPoint, CliError> {
    if x.len() != n {
        return Err(CliError::input(
            path,
            simplexflow::Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            },
        ));
    }
    SimplexPoint::new(x.to_vec()).map_err(|e| CliError::input(path, e))
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn build_protocol(&self) -> Result<Protocol, CliError> {
        self.protocol.clone().build(self.n).map_err(|e| CliError::input("protocol", e))
    }

    /// Dimensions and parameters of every component.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Schema {
                path: "format_version".into(),
                message: format!("expected {FORMAT_VERSION}, found {}", self.format_version),
            });
        }
        let protocol = self.build_protocol()?;
        for (i, a) in self.analyses.iter().enumerate() {
            let at = |field: &str| format!("analyses[{i}].{field}");
            match a {
                Analysis::Integrate { x0, t_end, dt, .. } => {
                    point(x0, self.n, &at("x0"))?;
                    positive(*t_end, &at("t_end"))?;
                    positive(*dt, &at("dt"))?;
                }
                Analysis::Equilibria { .. } => {}
                Analysis::LyapunovCheck {
                    lyapunov,
                    samples,
                    delta,
                    ..
                } => {
                    let spec = match lyapunov {
                        Some(l) => l.clone(),
                        None => default_lyapunov(&protocol).ok_or_else(|| {
                            CliError::invalid(&at("lyapunov"), "protocol has no known Lyapunov function")
                        })?,
                    };
                    spec.validate(self.n).map_err(|e| CliError::input(&at("lyapunov"), e))?;
                    if *samples == 0 {
                        return Err(CliError::invalid(&at("samples"), "must be positive"));
                    }
                    if !(*delta >= 0.0 && *delta * (self.n as f64) < 1.0) {
                        return Err(CliError::invalid(&at("delta"), "must lie in [0, 1/n)"));
                    }
                }
                Analysis::BetaLadder { payoff, ladder, .. } => {
                    payoff.validate(self.n).map_err(|e| CliError::input(&at("payoff"), e))?;
                    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(CliError::invalid(&at("ladder"), "must be nonempty and increasing"));
                    }
                }
                Analysis::Stochastic {
                    mode,
                    x0,
                    agents,
                    horizon,
                    start,
                    replicates,
                    ..
                } => {
                    let p = point(x0, self.n, &at("x0"))?;
                    if *agents == 0 || *replicates == 0 {
                        return Err(CliError::invalid(&at("agents"), "agents and replicates must be positive"));
                    }
                    positive(*horizon, &at("horizon"))?;
                    if *mode == StochasticMode::Reinforcement {
                        p.require_interior().map_err(|e| CliError::input(&at("x0"), e))?;
                        if *start >= self.n {
                            return Err(CliError::invalid(&at("start"), "state index out of range"));
                        }
                    }
                }
                Analysis::Counterexample {
                    x0,
                    t_end,
                    window,
                    dt,
                    relaxation_t_end,
                } => {
                    counterexample_parameters(&self.protocol).ok_or_else(|| {
                        CliError::invalid(
                            "protocol",
                            "counterexample needs a reversible-from-target protocol with a spiral target",
                        )
                    })?;
                    point(x0, self.n, &at("x0"))?;
                    positive(*dt, &at("dt"))?;
                    if !(*window > 0.0 && window < t_end && window < relaxation_t_end) {
                        return Err(CliError::invalid(&at("window"), "must be positive and shorter than both horizons"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn positive(v: f64, path: &str) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::invalid(path, &format!("must be positive, got {v}")))
    }
}

pub fn default_lyapunov(protocol: &Protocol) -> Option<LyapunovSpec> {
    LyapunovSpec::from_target(&protocol.target()?)
}

/// `(eta, epsilon, weights)` of a reversible spiral protocol.
pub fn counterexample_parameters(spec: &ProtocolSpec) -> Option<(f64, f64, nalgebra::DMatrix<f64>)> {
    match spec {
        ProtocolSpec::ReversibleFromTarget {
            weights,
            target: TargetSpec::Spiral { eta, epsilon },
        } => Some((*eta, *epsilon, weights.clone())),
        _ => None,
    }
}
