//! Procurement data model.
//!
//! A [`DrugScenario`] describes one procurement lot: the policy parameters set
//! by the buyer (price ceiling, agreed ratio, number of winners, volumes) and
//! the roster of firms that bid on it. Scenario files are plain JSON:
//!
//! ```json
//! {"scenarios": [{"drug_id": "adefovir", "p_max": 1.08, "rho": 0.6, "x": 2,
//!   "q0": 2893.17, "qe": 3471.80,
//!   "firms": [{"firm_id": "F1", "omega": 0.5, "type": "C", "raw_material": true, "cost": 0.189}]}]}
//! ```
//!
//! Volumes are in 10^4 dosage units and prices in CNY per unit.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual-market shares may exceed one by this much before a warning.
pub const BETA_SUM_WARN: f64 = 1e-9;
/// ... and by this much before the scenario is rejected.
pub const BETA_SUM_ERROR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("scenario `{scenario}`, field `{field}`: {message}")]
    Invalid {
        scenario: String,
        field: String,
        message: String,
    },
    #[error("scenario `{scenario}`: override {target} x{multiplier}: {message}")]
    Override {
        scenario: String,
        target: OverrideTarget,
        multiplier: f64,
        message: String,
    },
    #[error("task `{task}`: {message}")]
    Task { task: String, message: String },
}

/// Non-fatal finding from scenario validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioWarning {
    pub scenario: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ScenarioWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scenario `{}`, field `{}`: {}",
            self.scenario, self.field, self.message
        )
    }
}

/// Firm category. Originators are type A; B, C and D are large, medium and
/// small generic manufacturers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FirmType {
    A,
    B,
    C,
    D,
}

impl FirmType {
    /// Baseline cost band as fractions of the price ceiling, `[lo, hi)`.
    pub fn cost_band(self) -> (f64, f64) {
        match self {
            FirmType::A => (0.05, 0.115),
            FirmType::B => (0.115, 0.20),
            FirmType::C | FirmType::D => (0.115, 0.30),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FirmType::A => "A",
            FirmType::B => "B",
            FirmType::C => "C",
            FirmType::D => "D",
        }
    }
}

impl fmt::Display for FirmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FirmType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" => Ok(FirmType::A),
            "B" => Ok(FirmType::B),
            "C" => Ok(FirmType::C),
            "D" => Ok(FirmType::D),
            other => Err(format!("unknown firm type `{other}` (expected A, B, C or D)")),
        }
    }
}

/// One bidder in a procurement lot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmConfig {
    pub firm_id: String,
    /// Price-linkage coefficient.
    pub omega: f64,
    #[serde(rename = "type")]
    pub firm_type: FirmType,
    /// In-house active pharmaceutical ingredient capability.
    #[serde(rename = "raw_material")]
    pub has_raw_material: bool,
    /// Share of the residual (linkage) market. Defaults to `1/N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Unit production cost. Sampled from the firm type when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

/// One procurement lot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugScenario {
    pub drug_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Maximum valid bidding price.
    pub p_max: f64,
    /// Agreed procurement ratio.
    pub rho: f64,
    /// Number of winning bidders.
    pub x: usize,
    /// Agreed procurement volume.
    pub q0: f64,
    /// Actual procurement volume.
    pub qe: f64,
    pub firms: Vec<FirmConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    scenarios: Vec<DrugScenario>,
}

impl DrugScenario {
    pub fn num_firms(&self) -> usize {
        self.firms.len()
    }

    /// Residual-market share of firm `i`, falling back to the uniform split.
    pub fn beta(&self, i: usize) -> f64 {
        self.firms[i]
            .beta
            .unwrap_or(1.0 / self.firms.len() as f64)
    }

    /// Resolved cost of firm `i`.
    pub fn cost(&self, i: usize) -> Option<f64> {
        self.firms[i].cost
    }

    pub fn costs_resolved(&self) -> bool {
        self.firms.iter().all(|f| f.cost.is_some())
    }

    /// Residual (price-linkage) volume `Qe - rho * Q0`.
    pub fn residual_volume(&self) -> f64 {
        self.qe - self.rho * self.q0
    }

    /// Checks every invariant. Returns warnings for conditions that are
    /// suspicious but still simulate (negative residual volume, shares summing
    /// slightly above one).
    pub fn validate(&self) -> Result<Vec<ScenarioWarning>, ScenarioError> {
        let invalid = |field: &str, message: String| ScenarioError::Invalid {
            scenario: self.drug_id.clone(),
            field: field.to_string(),
            message,
        };
        let mut warnings = Vec::new();

        if self.drug_id.trim().is_empty() {
            return Err(invalid("drug_id", "must not be empty".into()));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(invalid("p_max", format!("must be positive, got {}", self.p_max)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(invalid("rho", format!("must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.q0.is_finite() && self.q0 > 0.0) {
            return Err(invalid("q0", format!("must be positive, got {}", self.q0)));
        }
        if !(self.qe.is_finite() && self.qe > 0.0) {
            return Err(invalid("qe", format!("must be positive, got {}", self.qe)));
        }
        if self.firms.is_empty() {
            return Err(invalid("firms", "at least one firm is required".into()));
        }
        if self.x == 0 {
            return Err(invalid("x", "at least one winner is required".into()));
        }
        if self.x > self.firms.len() {
            return Err(invalid(
                "x",
                format!(
                    "x exceeds firm count ({} winners, {} firms)",
                    self.x,
                    self.firms.len()
                ),
            ));
        }
        if self.qe < self.rho * self.q0 {
            warnings.push(ScenarioWarning {
                scenario: self.drug_id.clone(),
                field: "qe".into(),
                message: format!(
                    "qe ({}) is below rho*q0 ({}); the linkage term is negative",
                    self.qe,
                    self.rho * self.q0
                ),
            });
        }

        let mut seen = std::collections::HashSet::new();
        for (i, firm) in self.firms.iter().enumerate() {
            let field = |name: &str| format!("firms[{i}].{name}");
            if firm.firm_id.trim().is_empty() {
                return Err(invalid(&field("firm_id"), "must not be empty".into()));
            }
            if !seen.insert(firm.firm_id.as_str()) {
                return Err(invalid(
                    &field("firm_id"),
                    format!("duplicate firm id `{}`", firm.firm_id),
                ));
            }
            if !(firm.omega.is_finite() && firm.omega >= 0.0) {
                return Err(invalid(
                    &field("omega"),
                    format!("must be nonnegative, got {}", firm.omega),
                ));
            }
            if let Some(beta) = firm.beta {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(invalid(
                        &field("beta"),
                        format!("must lie in [0, 1], got {beta}"),
                    ));
                }
            }
            if let Some(cost) = firm.cost {
                if !(cost > 0.0 && cost < self.p_max) {
                    return Err(invalid(
                        &field("cost"),
                        format!("must satisfy 0 < cost < p_max ({}), got {cost}", self.p_max),
                    ));
                }
            }
        }

        let beta_sum: f64 = (0..self.firms.len()).map(|i| self.beta(i)).sum();
        if beta_sum > 1.0 + BETA_SUM_ERROR {
            return Err(invalid(
                "beta",
                format!("residual shares sum to {beta_sum}, above 1"),
            ));
        }
        if beta_sum > 1.0 + BETA_SUM_WARN {
            warnings.push(ScenarioWarning {
                scenario: self.drug_id.clone(),
                field: "beta".into(),
                message: format!("residual shares sum to {beta_sum}, slightly above 1"),
            });
        }
        Ok(warnings)
    }

    /// Returns a copy with every missing cost drawn by [`sample_cost`].
    /// Costs already present are kept as given.
    pub fn resolve_costs<R: Rng + ?Sized>(&self, rng: &mut R) -> DrugScenario {
        let mut out = self.clone();
        for firm in &mut out.firms {
            if firm.cost.is_none() {
                firm.cost = Some(sample_cost(firm, self.p_max, rng));
            }
        }
        out
    }

    /// Returns a copy with each override applied multiplicatively, in order.
    /// A `rho` result above one is clamped to one with a warning.
    pub fn apply_overrides(
        &self,
        overrides: &[SensitivityOverride],
    ) -> Result<DrugScenario, ScenarioError> {
        let mut out = self.clone();
        for ov in overrides {
            let fail = |message: String| ScenarioError::Override {
                scenario: self.drug_id.clone(),
                target: ov.target,
                multiplier: ov.multiplier,
                message,
            };
            if !(ov.multiplier.is_finite() && ov.multiplier > 0.0) {
                return Err(fail("multiplier must be positive".into()));
            }
            match ov.target {
                OverrideTarget::Rho => {
                    let rho = out.rho * ov.multiplier;
                    if rho > 1.0 {
                        log::warn!(
                            "scenario `{}`: rho {} x{} = {} clamped to 1",
                            self.drug_id,
                            out.rho,
                            ov.multiplier,
                            rho
                        );
                        out.rho = 1.0;
                    } else {
                        out.rho = rho;
                    }
                }
                OverrideTarget::PMax => out.p_max *= ov.multiplier,
                OverrideTarget::Q0 => out.q0 *= ov.multiplier,
                OverrideTarget::Qe => out.qe *= ov.multiplier,
                OverrideTarget::Cost => {
                    for firm in &mut out.firms {
                        let cost = firm.cost.ok_or_else(|| {
                            fail(format!("cost of firm `{}` is unresolved", firm.firm_id))
                        })?;
                        firm.cost = Some(cost * ov.multiplier);
                    }
                }
            }
            if let Err(e) = out.validate() {
                return Err(fail(e.to_string()));
            }
        }
        Ok(out)
    }
}

/// Draws a unit cost for a firm whose cost is not given: uniform on the
/// type's band scaled by `p_max`, then discounted by a uniform factor in
/// `[0.90, 0.95)` when the firm makes its own raw material.
pub fn sample_cost<R: Rng + ?Sized>(firm: &FirmConfig, p_max: f64, rng: &mut R) -> f64 {
    let (lo, hi) = firm.firm_type.cost_band();
    let base = uniform(rng, lo * p_max, hi * p_max);
    if firm.has_raw_material {
        base * uniform(rng, 0.90, 0.95)
    } else {
        base
    }
}

/// Uniform draw on `[lo, hi)`.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = lo + (hi - lo) * rng.random::<f64>();
    if v >= hi {
        hi.next_down()
    } else {
        v
    }
}

/// Parameter a sensitivity override scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideTarget {
    Rho,
    PMax,
    Q0,
    Qe,
    Cost,
}

impl OverrideTarget {
    pub const ALL: [OverrideTarget; 5] = [
        OverrideTarget::Rho,
        OverrideTarget::PMax,
        OverrideTarget::Q0,
        OverrideTarget::Qe,
        OverrideTarget::Cost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OverrideTarget::Rho => "rho",
            OverrideTarget::PMax => "p_max",
            OverrideTarget::Q0 => "q0",
            OverrideTarget::Qe => "qe",
            OverrideTarget::Cost => "cost",
        }
    }
}

impl fmt::Display for OverrideTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OverrideTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OverrideTarget::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| {
                format!("unknown sensitivity target `{s}` (expected rho, p_max, q0, qe or cost)")
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOverride {
    pub target: OverrideTarget,
    pub multiplier: f64,
}

impl SensitivityOverride {
    pub fn new(target: OverrideTarget, multiplier: f64) -> Self {
        Self { target, multiplier }
    }
}

/// Agent family driving every firm in a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rule,
    Ippo,
    Mappo,
    Llm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Rule,
        Algorithm::Ippo,
        Algorithm::Mappo,
        Algorithm::Llm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rule => "rule",
            Algorithm::Ippo => "ippo",
            Algorithm::Mappo => "mappo",
            Algorithm::Llm => "llm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected rule, ippo, mappo or llm)"))
    }
}

/// One unit of work: a scenario, an agent family and a sensitivity setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub batch_id: String,
    /// `drug_id` of the scenario this task runs.
    pub scenario_ref: String,
    pub algorithm: Algorithm,
    pub overrides: Vec<SensitivityOverride>,
    pub episodes: usize,
    pub timesteps: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |message: &str| ScenarioError::Task {
            task: self.label(),
            message: message.to_string(),
        };
        if self.episodes == 0 {
            return Err(fail("episodes must be at least 1"));
        }
        if self.timesteps == 0 {
            return Err(fail("timesteps must be at least 1"));
        }
        if let Some(ov) = self.overrides.iter().find(|o| !(o.multiplier > 0.0)) {
            return Err(fail(&format!(
                "override multiplier for {} must be positive",
                ov.target
            )));
        }
        Ok(())
    }

    /// Directory-safe name of the sensitivity setting, `base` when no
    /// override applies.
    pub fn setting_label(&self) -> String {
        setting_label(&self.overrides)
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.batch_id,
            self.scenario_ref,
            self.algorithm,
            self.setting_label()
        )
    }
}

pub fn setting_label(overrides: &[SensitivityOverride]) -> String {
    if overrides.is_empty() {
        return "base".to_string();
    }
    overrides
        .iter()
        .map(|o| format!("{}_x{}", o.target, o.multiplier))
        .collect::<Vec<_>>()
        .join("+")
}

/// Parses a scenario document. Errors carry the line and column of syntax
/// problems, or the scenario index and id for schema problems.
pub fn parse_scenarios(text: &str, origin: &str) -> Result<Vec<DrugScenario>, ScenarioError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        context: format!("{origin}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let entries = value
        .get("scenarios")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ScenarioError::Parse {
            context: origin.to_string(),
            message: "expected a top-level object with a `scenarios` array".into(),
        })?;

    let mut out = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let id = entry
            .get("drug_id")
            .and_then(|v| v.as_str())
            .unwrap_or("?");
        let scenario: DrugScenario =
            serde_json::from_value(entry.clone()).map_err(|e| ScenarioError::Parse {
                context: format!("{origin}: scenarios[{i}] (`{id}`)"),
                message: e.to_string(),
            })?;
        out.push(scenario);
    }
    Ok(out)
}

/// Reads and validates a scenario file. Warnings are logged.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<DrugScenario>, ScenarioError> {
    let (scenarios, warnings) = load_scenarios_with_warnings(path)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(scenarios)
}

pub fn load_scenarios_with_warnings(
    path: impl AsRef<Path>,
) -> Result<(Vec<DrugScenario>, Vec<ScenarioWarning>), ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scenarios = parse_scenarios(&text, &path.display().to_string())?;
    let mut warnings = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for s in &scenarios {
        if !ids.insert(s.drug_id.as_str()) {
            return Err(ScenarioError::Invalid {
                scenario: s.drug_id.clone(),
                field: "drug_id".into(),
                message: "duplicate drug id".into(),
            });
        }
        warnings.extend(s.validate()?);
    }
    Ok((scenarios, warnings))
}

pub fn scenarios_to_json(scenarios: &[DrugScenario]) -> String {
    let file = ScenarioFile {
        scenarios: scenarios.to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("scenario serialization is infallible")
}

pub fn save_scenarios(path: impl AsRef<Path>, scenarios: &[DrugScenario]) -> std::io::Result<()> {
    fs::write(path, scenarios_to_json(scenarios))
}
