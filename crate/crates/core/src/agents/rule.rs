//! Target-margin heuristic with additive adjustments.

use super::{check_firms, AgentError, AgentPolicy, Phase};
use crate::env::{Observation, StepOutcome};
use crate::nn::UpdateStats;
use crate::scenario::{Algorithm, DrugScenario, FirmType};

pub const DEFAULT_STEP: f64 = 0.02;

pub fn base_margin(firm_type: FirmType) -> f64 {
    match firm_type {
        FirmType::A => 0.20,
        FirmType::B => 0.14,
        FirmType::C | FirmType::D => 0.086,
    }
}

/// One firm's margin state. Losing lowers the margin by `step` (floor 0),
/// winning raises it by `step / 2` (capped at the base margin).
#[derive(Clone, Debug, PartialEq)]
pub struct RuleAgent {
    pub base_margin: f64,
    pub current_margin: f64,
    pub step: f64,
}

impl RuleAgent {
    pub fn new(base_margin: f64, step: f64) -> Self {
        Self {
            base_margin,
            current_margin: base_margin,
            step,
        }
    }

    pub fn for_type(firm_type: FirmType) -> Self {
        Self::new(base_margin(firm_type), DEFAULT_STEP)
    }

    pub fn reset(&mut self) {
        self.current_margin = self.base_margin;
    }

    pub fn target_price(&self, cost: f64, p_max: f64) -> f64 {
        (cost * (1.0 + self.current_margin)).clamp(cost, p_max)
    }

    /// Price quote for the current margin.
    pub fn act(&self, obs: &Observation) -> f64 {
        self.target_price(obs.cost(), obs.p_max())
    }

    pub fn observe(&mut self, won: bool) {
        self.current_margin = if won {
            (self.current_margin + 0.5 * self.step).min(self.base_margin)
        } else {
            (self.current_margin - self.step).max(0.0)
        };
    }
}

#[derive(Clone, Debug)]
pub struct RuleAgents {
    agents: Vec<RuleAgent>,
}

impl RuleAgents {
    pub fn new(scenario: &DrugScenario) -> Self {
        Self {
            agents: scenario
                .firms
                .iter()
                .map(|f| RuleAgent::for_type(f.firm_type))
                .collect(),
        }
    }

    pub fn agents(&self) -> &[RuleAgent] {
        &self.agents
    }
}

impl AgentPolicy for RuleAgents {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Rule
    }

    fn begin_episode(&mut self, _episode: usize, _phase: Phase) {
        self.agents.iter_mut().for_each(RuleAgent::reset);
    }

    fn act(&mut self, obs: &[Observation], _explore: bool) -> Result<Vec<f64>, AgentError> {
        check_firms(self.agents.len(), obs.len())?;
        Ok(self.agents.iter().zip(obs).map(|(a, o)| a.act(o)).collect())
    }

    fn quotes_prices(&self) -> bool {
        true
    }

    fn observe_outcome(&mut self, outcome: &StepOutcome) -> Result<(), AgentError> {
        check_firms(self.agents.len(), outcome.winners.len())?;
        for (agent, &won) in self.agents.iter_mut().zip(&outcome.winners) {
            agent.observe(won);
        }
        Ok(())
    }

    fn end_episode_update(&mut self, _progress: f64) -> Result<Option<UpdateStats>, AgentError> {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{decode_action, encode_price};

    #[test]
    fn type_a_fresh_price() {
        let agent = RuleAgent::for_type(FirmType::A);
        let p = agent.target_price(0.098, 1.08);
        assert!((p - 0.1176).abs() < 1e-12);
        let a = encode_price(p, 0.098, 1.08);
        assert!((decode_action(a, 0.098, 1.08) - 0.1176).abs() < 1e-12);
    }

    #[test]
    fn price_clamps_to_ceiling() {
        let agent = RuleAgent::new(0.5, 0.02);
        assert_eq!(agent.target_price(0.9, 1.0), 1.0);
    }

    #[test]
    fn three_losses_from_generic_margin() {
        let mut agent = RuleAgent::for_type(FirmType::C);
        for _ in 0..3 {
            agent.observe(false);
        }
        assert!((agent.current_margin - 0.026).abs() < 1e-12);
        for _ in 0..10 {
            agent.observe(false);
        }
        assert_eq!(agent.current_margin, 0.0);
    }

    #[test]
    fn wins_recover_up_to_base() {
        let mut agent = RuleAgent::for_type(FirmType::B);
        agent.observe(false);
        agent.observe(true);
        assert!((agent.current_margin - 0.13).abs() < 1e-12);
        for _ in 0..5 {
            agent.observe(true);
        }
        assert_eq!(agent.current_margin, 0.14);
    }
}
