//! Sliding-window decision memory with a fixed reflection cadence.

use std::collections::VecDeque;

use serde::Serialize;

pub const MEMORY_WINDOW: usize = 3;
pub const REFLECTION_INTERVAL: usize = 5;

/// Outcome of one past decision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryEntry {
    pub step: usize,
    pub bid: f64,
    pub profit: f64,
    /// 1-based price rank.
    pub rank: usize,
    pub won: bool,
    /// Profit change against the previous step; `None` on the first step.
    pub profit_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmMemory {
    window: usize,
    interval: usize,
    entries: VecDeque<MemoryEntry>,
    rounds: usize,
    wins: usize,
    total_profit: f64,
    total_bid: f64,
    last_profit: Option<f64>,
    pub last_reflection: Option<String>,
}

impl Default for LlmMemory {
    fn default() -> Self {
        Self::new(MEMORY_WINDOW, REFLECTION_INTERVAL)
    }
}

impl LlmMemory {
    pub fn new(window: usize, interval: usize) -> Self {
        Self {
            window: window.max(1),
            interval: interval.max(1),
            entries: VecDeque::with_capacity(window),
            rounds: 0,
            wins: 0,
            total_profit: 0.0,
            total_bid: 0.0,
            last_profit: None,
            last_reflection: None,
        }
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.window, self.interval);
    }

    pub fn record(&mut self, step: usize, bid: f64, profit: f64, rank: usize, won: bool) {
        let entry = MemoryEntry {
            step,
            bid,
            profit,
            rank,
            won,
            profit_delta: self.last_profit.map(|p| profit - p),
        };
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        self.rounds += 1;
        self.wins += won as usize;
        self.total_profit += profit;
        self.total_bid += bid;
        self.last_profit = Some(profit);
    }

    /// Oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True on steps 5, 10, 15, ... (1-based).
    pub fn is_reflection_step(&self, step: usize) -> bool {
        step > 0 && step % self.interval == 0
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn wins(&self) -> usize {
        self.wins
    }

    pub fn total_profit(&self) -> f64 {
        self.total_profit
    }

    pub fn mean_bid(&self) -> Option<f64> {
        (self.rounds > 0).then(|| self.total_bid / self.rounds as f64)
    }
}
