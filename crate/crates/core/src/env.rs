//! The procurement bidding game.
//!
//! Each step every firm submits a normalized action in `[-1, 1]`, which maps
//! linearly onto `[C_i, P_max]`. The `x` lowest bids win a share of the agreed
//! volume; every firm also earns a price-linkage margin on its share of the
//! residual market. Rewards are the instantaneous profits, undiscounted.

use std::cmp::Ordering;

use thiserror::Error;

use crate::scenario::{DrugScenario, ScenarioError};

/// Length of the per-firm observation vector.
pub const OBS_DIM: usize = 10;

/// Observation slots, in order.
pub mod slot {
    pub const P_MAX: usize = 0;
    pub const RHO: usize = 1;
    pub const X: usize = 2;
    pub const OMEGA: usize = 3;
    pub const Q0: usize = 4;
    pub const QE: usize = 5;
    pub const COST: usize = 6;
    pub const PREV_PRICE: usize = 7;
    pub const PREV_PROFIT: usize = 8;
    pub const TIME: usize = 9;
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("firm `{0}` has no resolved cost")]
    UnresolvedCost(String),
    #[error("horizon must be at least one step")]
    ZeroHorizon,
    #[error("episode already finished at t = {0}")]
    EpisodeFinished(usize),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action for firm {0} is not finite")]
    NonFiniteAction(usize),
}

/// Policy parameters shared by every firm in a lot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketParams {
    pub p_max: f64,
    pub rho: f64,
    pub x: usize,
    pub q0: f64,
    pub qe: f64,
}

impl MarketParams {
    pub fn from_scenario(s: &DrugScenario) -> Self {
        Self {
            p_max: s.p_max,
            rho: s.rho,
            x: s.x,
            q0: s.q0,
            qe: s.qe,
        }
    }

    pub fn residual_volume(&self) -> f64 {
        self.qe - self.rho * self.q0
    }
}

/// Firm-specific parameters with the cost resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirmParams {
    pub omega: f64,
    pub cost: f64,
    pub beta: f64,
}

/// Maps a normalized action onto the feasible price range `[cost, p_max]`.
/// Actions outside `[-1, 1]` are clamped first. The endpoints map exactly.
pub fn decode_action(action: f64, cost: f64, p_max: f64) -> f64 {
    let w = (action.clamp(-1.0, 1.0) + 1.0) * 0.5;
    let price = cost * (1.0 - w) + p_max * w;
    price.clamp(cost, p_max)
}

/// Inverse of [`decode_action`] on `[cost, p_max]`; prices outside the range
/// are clamped.
pub fn encode_price(price: f64, cost: f64, p_max: f64) -> f64 {
    if p_max <= cost {
        return -1.0;
    }
    let price = price.clamp(cost, p_max);
    (2.0 * (price - cost) / (p_max - cost) - 1.0).clamp(-1.0, 1.0)
}

/// Profit in 10^4 CNY. Winners earn the guaranteed-volume margin on top of the
/// linkage margin every firm earns on its residual share.
pub fn profit(price: f64, firm: &FirmParams, market: &MarketParams, won: bool) -> f64 {
    let linkage =
        (price * (1.0 + firm.omega) - firm.cost) * market.residual_volume() * firm.beta;
    if won {
        procurement_margin(price, firm.cost, market) + linkage
    } else {
        linkage
    }
}

/// The guaranteed-volume term alone: `(P - C) * rho / x * Q0`.
pub fn procurement_margin(price: f64, cost: f64, market: &MarketParams) -> f64 {
    (price - cost) * (market.rho / market.x as f64) * market.q0
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClearingResult {
    /// Firm indices in ascending bid order (after tie-breaking).
    pub ranks: Vec<usize>,
    /// 1-based price rank of each firm.
    pub rank_of: Vec<usize>,
    pub winners: Vec<bool>,
    /// The `x` winning prices, lowest first.
    pub winning_prices: Vec<f64>,
}

/// Top-`x` clearing with ties broken by firm index.
pub fn clear_market(prices: &[f64], x: usize) -> ClearingResult {
    clear_by(prices, x, |a, b| prices[a].total_cmp(&prices[b]).then(a.cmp(&b)))
}

/// Top-`x` clearing with ties broken by lower cost, then lower firm index.
pub fn clear_market_with_costs(prices: &[f64], costs: &[f64], x: usize) -> ClearingResult {
    debug_assert_eq!(prices.len(), costs.len());
    clear_by(prices, x, |a, b| {
        prices[a]
            .total_cmp(&prices[b])
            .then(costs[a].total_cmp(&costs[b]))
            .then(a.cmp(&b))
    })
}

fn clear_by<F>(prices: &[f64], x: usize, cmp: F) -> ClearingResult
where
    F: Fn(usize, usize) -> Ordering,
{
    assert!(x <= prices.len(), "x = {x} exceeds {} bids", prices.len());
    let mut ranks: Vec<usize> = (0..prices.len()).collect();
    ranks.sort_by(|&a, &b| cmp(a, b));
    let mut rank_of = vec![0; prices.len()];
    let mut winners = vec![false; prices.len()];
    for (pos, &i) in ranks.iter().enumerate() {
        rank_of[i] = pos + 1;
        winners[i] = pos < x;
    }
    let winning_prices = ranks[..x].iter().map(|&i| prices[i]).collect();
    ClearingResult {
        ranks,
        rank_of,
        winners,
        winning_prices,
    }
}

/// One firm's view of the market: the raw state vector and its min-max
/// normalized counterpart fed to learning agents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub raw: [f64; OBS_DIM],
    pub normalized: [f64; OBS_DIM],
}

impl Observation {
    pub fn p_max(&self) -> f64 {
        self.raw[slot::P_MAX]
    }

    pub fn cost(&self) -> f64 {
        self.raw[slot::COST]
    }

    pub fn prev_price(&self) -> f64 {
        self.raw[slot::PREV_PRICE]
    }

    pub fn prev_profit(&self) -> f64 {
        self.raw[slot::PREV_PROFIT]
    }
}

/// Concatenation of all firms' normalized observations in firm order.
pub fn global_state(obs: &[Observation]) -> Vec<f64> {
    obs.iter().flat_map(|o| o.normalized).collect()
}

/// Per-feature `[lo, lo + span]` ranges, fixed from the scenario at
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    lo: [f64; OBS_DIM],
    span: [f64; OBS_DIM],
}

impl Normalizer {
    fn new(market: &MarketParams, firms: &[FirmParams]) -> Self {
        let omega_hi = firms.iter().map(|f| f.omega).fold(0.0, f64::max);
        let volume_hi = market.q0.max(market.qe);
        let (profit_lo, profit_hi) = profit_bounds(market, firms);
        let ranges = [
            (0.0, market.p_max),
            (0.0, 1.0),
            (0.0, firms.len() as f64),
            (0.0, omega_hi),
            (0.0, volume_hi),
            (0.0, volume_hi),
            (0.0, market.p_max),
            (0.0, market.p_max),
            (profit_lo, profit_hi),
            (0.0, 1.0),
        ];
        let mut lo = [0.0; OBS_DIM];
        let mut span = [1.0; OBS_DIM];
        for (k, (l, h)) in ranges.into_iter().enumerate() {
            lo[k] = l;
            span[k] = if h > l { h - l } else { 1.0 };
        }
        Self { lo, span }
    }

    pub fn apply(&self, raw: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|k| (raw[k] - self.lo[k]) / self.span[k])
    }

    /// Width of the profit range, a natural reward scale.
    pub fn profit_span(&self) -> f64 {
        self.span[slot::PREV_PROFIT]
    }
}

/// Smallest and largest single-step profit any firm can realize (zero
/// included). Profit is linear in price, so the extremes sit at the range
/// endpoints.
pub fn profit_bounds(market: &MarketParams, firms: &[FirmParams]) -> (f64, f64) {
    let mut lo = 0.0_f64;
    let mut hi = 0.0_f64;
    for f in firms {
        for price in [f.cost, market.p_max] {
            for won in [false, true] {
                let p = profit(price, f, market, won);
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Step just completed, 1-based.
    pub t: usize,
    /// Actions as received, before clamping.
    pub actions: Vec<f64>,
    pub prices: Vec<f64>,
    pub winners: Vec<bool>,
    /// 1-based price rank of each firm.
    pub rank_of: Vec<usize>,
    pub winning_prices: Vec<f64>,
    pub profits: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Observation>,
    pub done: bool,
}

/// A single-lot bidding environment.
#[derive(Clone, Debug)]
pub struct MarketEnv {
    firm_ids: Vec<String>,
    market: MarketParams,
    firms: Vec<FirmParams>,
    horizon: usize,
    t: usize,
    prev_price: Vec<f64>,
    prev_profit: Vec<f64>,
    normalizer: Normalizer,
}

impl MarketEnv {
    /// Builds an environment for a validated scenario whose costs are all
    /// resolved. The environment starts in its reset state.
    pub fn new(scenario: &DrugScenario, horizon: usize) -> Result<Self, EnvError> {
        scenario.validate()?;
        if horizon == 0 {
            return Err(EnvError::ZeroHorizon);
        }
        let firms = scenario
            .firms
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let cost = f
                    .cost
                    .ok_or_else(|| EnvError::UnresolvedCost(f.firm_id.clone()))?;
                Ok(FirmParams {
                    omega: f.omega,
                    cost,
                    beta: scenario.beta(i),
                })
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        let market = MarketParams::from_scenario(scenario);
        let normalizer = Normalizer::new(&market, &firms);
        let mut env = Self {
            firm_ids: scenario.firms.iter().map(|f| f.firm_id.clone()).collect(),
            market,
            prev_price: firms.iter().map(|f| f.cost).collect(),
            prev_profit: vec![0.0; firms.len()],
            firms,
            horizon,
            t: 0,
            normalizer,
        };
        env.reset();
        Ok(env)
    }

    /// Clears history: every firm's previous price becomes its cost and its
    /// previous profit zero.
    pub fn reset(&mut self) -> Vec<Observation> {
        self.t = 0;
        for (i, f) in self.firms.iter().enumerate() {
            self.prev_price[i] = f.cost;
            self.prev_profit[i] = 0.0;
        }
        self.observations()
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.firms.len()).map(|i| self.observation(i)).collect()
    }

    fn observation(&self, i: usize) -> Observation {
        let m = &self.market;
        let f = &self.firms[i];
        let raw = [
            m.p_max,
            m.rho,
            m.x as f64,
            f.omega,
            m.q0,
            m.qe,
            f.cost,
            self.prev_price[i],
            self.prev_profit[i],
            self.t as f64 / self.horizon as f64,
        ];
        Observation {
            raw,
            normalized: self.normalizer.apply(&raw),
        }
    }

    /// Simultaneous-move step: decode, clear, pay out, advance.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome, EnvError> {
        self.check_input(actions)?;
        let prices: Vec<f64> = actions
            .iter()
            .zip(&self.firms)
            .map(|(&a, f)| decode_action(a, f.cost, self.market.p_max))
            .collect();
        Ok(self.settle(actions.to_vec(), prices))
    }

    /// Step with bids quoted directly as prices, clamped to `[cost, p_max]`.
    /// The recorded actions are the encoded prices.
    pub fn step_prices(&mut self, prices: &[f64]) -> Result<StepOutcome, EnvError> {
        self.check_input(prices)?;
        let p_max = self.market.p_max;
        let prices: Vec<f64> = prices
            .iter()
            .zip(&self.firms)
            .map(|(&p, f)| p.clamp(f.cost, p_max.max(f.cost)))
            .collect();
        let actions = prices
            .iter()
            .zip(&self.firms)
            .map(|(&p, f)| encode_price(p, f.cost, p_max))
            .collect();
        Ok(self.settle(actions, prices))
    }

    fn check_input(&self, values: &[f64]) -> Result<(), EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished(self.t));
        }
        let n = self.firms.len();
        if values.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction(i));
        }
        Ok(())
    }

    fn settle(&mut self, actions: Vec<f64>, prices: Vec<f64>) -> StepOutcome {
        let n = self.firms.len();
        let costs: Vec<f64> = self.firms.iter().map(|f| f.cost).collect();
        let clearing = clear_market_with_costs(&prices, &costs, self.market.x);
        let profits: Vec<f64> = (0..n)
            .map(|i| profit(prices[i], &self.firms[i], &self.market, clearing.winners[i]))
            .collect();

        self.prev_price.copy_from_slice(&prices);
        self.prev_profit.copy_from_slice(&profits);
        self.t += 1;

        StepOutcome {
            t: self.t,
            actions,
            rewards: profits.clone(),
            profits,
            prices,
            winners: clearing.winners,
            rank_of: clearing.rank_of,
            winning_prices: clearing.winning_prices,
            next_obs: self.observations(),
            done: self.t == self.horizon,
        }
    }

    pub fn num_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn firm_ids(&self) -> &[String] {
        &self.firm_ids
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn firm(&self, i: usize) -> &FirmParams {
        &self.firms[i]
    }

    pub fn firms(&self) -> &[FirmParams] {
        &self.firms
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }
}
