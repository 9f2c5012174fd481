//! Language-model bidders: perceive the market as text, keep a short memory
//! of outcomes, reflect periodically and answer with a JSON bid.

mod memory;
mod parse;
mod prompt;
mod stats;
mod transport;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use memory::{LlmMemory, MemoryEntry, MEMORY_WINDOW, REFLECTION_INTERVAL};
pub use parse::{parse_llm_response, ParsedBid};
pub use prompt::{
    build_prompt, system_prompt, FirmProfile, MarketFeedback, MarketTerms, PromptInput, NO_HISTORY,
    SECTION_FIRM, SECTION_FORMAT, SECTION_MARKET, SECTION_MEMORY, SECTION_REFLECTION,
    SECTION_ROLE, SECTION_RULES,
};
pub use stats::{constraint_stats, constraint_table, write_constraint_csv, ConstraintStats};
pub use transport::{
    ChatRequest, ChatTransport, HttpTransport, MockScript, MockTransport, ScriptedResponse,
    TransportError, API_KEY_ENV, ENDPOINT_ENV,
};

use super::{check_firms, AgentError, AgentPolicy, Phase};
use crate::env::{Observation, StepOutcome};
use crate::nn::UpdateStats;
use crate::scenario::{Algorithm, DrugScenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub memory_window: usize,
    pub reflection_interval: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "Qwen3-235B-A22B-Instruct-2507".into(),
            temperature: 0.7,
            max_tokens: 512,
            memory_window: MEMORY_WINDOW,
            reflection_interval: REFLECTION_INTERVAL,
        }
    }
}

/// One bidding decision of one firm, with everything a reviewer needs to
/// judge it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub phase: String,
    pub episode: usize,
    pub step: usize,
    pub firm_id: String,
    pub system: String,
    pub user: String,
    /// Raw model answers, one per attempt.
    pub responses: Vec<String>,
    pub reasoning: Option<String>,
    /// Bid as answered, before clamping. `None` when no answer parsed.
    pub raw_bid: Option<f64>,
    /// Bid actually submitted.
    pub bid: f64,
    pub cost: f64,
    pub p_max: f64,
    pub below_cost: bool,
    pub above_max: bool,
    pub fallback: bool,
    pub reflection: bool,
}

impl DialogueRecord {
    #[cfg(test)]
    pub(crate) fn for_test(raw: f64, cost: f64, p_max: f64) -> Self {
        Self {
            phase: Phase::Train.as_str().into(),
            episode: 0,
            step: 1,
            firm_id: "F1".into(),
            system: String::new(),
            user: String::new(),
            responses: Vec::new(),
            reasoning: None,
            raw_bid: Some(raw),
            bid: raw.clamp(cost, p_max),
            cost,
            p_max,
            below_cost: raw < cost,
            above_max: raw > p_max,
            fallback: false,
            reflection: false,
        }
    }
}

struct FirmState {
    profile: FirmProfile,
    memory: LlmMemory,
    feedback: Option<MarketFeedback>,
    prev_bid: Option<f64>,
}

pub struct LlmAgents {
    settings: LlmSettings,
    transport: Arc<dyn ChatTransport>,
    market: MarketTerms,
    horizon: usize,
    firms: Vec<FirmState>,
    phase: Phase,
    episode: usize,
    step: usize,
    transcripts: Vec<DialogueRecord>,
}

impl LlmAgents {
    pub fn new(
        scenario: &DrugScenario,
        horizon: usize,
        settings: LlmSettings,
        transport: Arc<dyn ChatTransport>,
    ) -> Self {
        let firms = scenario
            .firms
            .iter()
            .enumerate()
            .map(|(i, f)| FirmState {
                profile: FirmProfile {
                    firm_id: f.firm_id.clone(),
                    firm_type: f.firm_type,
                    omega: f.omega,
                    has_raw_material: f.has_raw_material,
                    cost: scenario.cost(i).unwrap_or(0.0),
                    beta: scenario.beta(i),
                },
                memory: LlmMemory::new(settings.memory_window, settings.reflection_interval),
                feedback: None,
                prev_bid: None,
            })
            .collect();
        Self {
            market: MarketTerms {
                p_max: scenario.p_max,
                rho: scenario.rho,
                q0: scenario.q0,
                qe: scenario.qe,
                x: scenario.x,
                num_firms: scenario.num_firms(),
            },
            horizon,
            settings,
            transport,
            firms,
            phase: Phase::Train,
            episode: 0,
            step: 0,
            transcripts: Vec::new(),
        }
    }

    pub fn memory(&self, firm: usize) -> &LlmMemory {
        &self.firms[firm].memory
    }

    /// Builds the prompt, queries the transport (one retry on an unparseable
    /// answer) and falls back to the previous bid when both attempts fail.
    fn decide(&self, firm: &FirmState, obs: &Observation) -> Result<DialogueRecord, TransportError> {
        let (cost, p_max) = (obs.cost(), obs.p_max());
        let mut profile = firm.profile.clone();
        profile.cost = cost;
        let market = MarketTerms {
            p_max,
            ..self.market.clone()
        };
        let reflection = firm.memory.is_reflection_step(self.step);
        let (system, user) = build_prompt(&PromptInput {
            firm: &profile,
            market: &market,
            memory: &firm.memory,
            feedback: firm.feedback.as_ref(),
            step: self.step,
            horizon: self.horizon,
        });
        let mut request = ChatRequest {
            model: self.settings.model.clone(),
            system,
            user,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            firm_id: profile.firm_id.clone(),
            phase: self.phase.as_str().into(),
            episode: self.episode,
            step: self.step,
            attempt: 0,
        };
        let mut responses = Vec::with_capacity(2);
        let mut parsed = None;
        for attempt in 0..2 {
            request.attempt = attempt;
            let text = self.transport.complete(&request)?;
            parsed = parse_llm_response(&text);
            responses.push(text);
            if parsed.is_some() {
                break;
            }
        }
        let (reasoning, raw_bid, bid, fallback) = match parsed {
            Some(p) => (
                Some(p.reasoning),
                Some(p.bid_price),
                p.bid_price.clamp(cost, p_max),
                false,
            ),
            None => {
                let bid = firm
                    .prev_bid
                    .unwrap_or(cost * 1.1)
                    .clamp(cost, p_max);
                log::warn!(
                    "firm {} step {}: no parseable bid after retry; using fallback {bid:.4}",
                    profile.firm_id,
                    self.step
                );
                (None, None, bid, true)
            }
        };
        Ok(DialogueRecord {
            phase: request.phase,
            episode: self.episode,
            step: self.step,
            firm_id: profile.firm_id,
            system: request.system,
            user: request.user,
            responses,
            reasoning,
            raw_bid,
            bid,
            cost,
            p_max,
            below_cost: raw_bid.is_some_and(|b| b < cost),
            above_max: raw_bid.is_some_and(|b| b > p_max),
            fallback,
            reflection,
        })
    }
}

impl AgentPolicy for LlmAgents {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Llm
    }

    fn begin_episode(&mut self, episode: usize, phase: Phase) {
        self.episode = episode;
        self.phase = phase;
        self.step = 0;
        for f in &mut self.firms {
            f.memory.clear();
            f.feedback = None;
            f.prev_bid = None;
        }
    }

    fn act(&mut self, obs: &[Observation], _explore: bool) -> Result<Vec<f64>, AgentError> {
        check_firms(self.firms.len(), obs.len())?;
        self.step += 1;
        let this = &*self;
        let records: Vec<Result<DialogueRecord, TransportError>> =
            if this.transport.concurrent() && this.firms.len() > 1 {
                // All firms answer before anyone's bid is revealed.
                std::thread::scope(|s| {
                    let handles: Vec<_> = this
                        .firms
                        .iter()
                        .zip(obs)
                        .map(|(f, o)| s.spawn(move || this.decide(f, o)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("chat worker panicked"))
                        .collect()
                })
            } else {
                this.firms.iter().zip(obs).map(|(f, o)| this.decide(f, o)).collect()
            };
        let mut actions = Vec::with_capacity(records.len());
        for (firm, record) in self.firms.iter_mut().zip(records) {
            let record = record?;
            actions.push(record.bid);
            firm.prev_bid = Some(record.bid);
            if record.reflection {
                if let Some(r) = &record.reasoning {
                    firm.memory.last_reflection = Some(r.clone());
                }
            }
            self.transcripts.push(record);
        }
        Ok(actions)
    }

    fn quotes_prices(&self) -> bool {
        true
    }

    fn observe_outcome(&mut self, outcome: &StepOutcome) -> Result<(), AgentError> {
        check_firms(self.firms.len(), outcome.prices.len())?;
        let lo = outcome.winning_prices.iter().copied().reduce(f64::min);
        let hi = outcome.winning_prices.iter().copied().reduce(f64::max);
        let n = self.firms.len();
        for (i, firm) in self.firms.iter_mut().enumerate() {
            firm.memory.record(
                outcome.t,
                outcome.prices[i],
                outcome.profits[i],
                outcome.rank_of[i],
                outcome.winners[i],
            );
            firm.feedback = Some(MarketFeedback {
                rank: outcome.rank_of[i],
                num_firms: n,
                won: outcome.winners[i],
                winning_low: lo,
                winning_high: hi,
            });
        }
        Ok(())
    }

    fn end_episode_update(&mut self, _progress: f64) -> Result<Option<UpdateStats>, AgentError> {
        Ok(None)
    }

    fn transcripts(&self) -> &[DialogueRecord] {
        &self.transcripts
    }
}
