//! Prompt rendering for the perception, memory and reflection stages.

use std::fmt::Write;

use super::memory::{LlmMemory, MemoryEntry};
use crate::scenario::FirmType;

pub const SECTION_ROLE: &str = "## Role";
pub const SECTION_FIRM: &str = "## Firm characteristics";
pub const SECTION_RULES: &str = "## Procurement rules";
pub const SECTION_MEMORY: &str = "## Recent decisions";
pub const SECTION_MARKET: &str = "## Current market";
pub const SECTION_REFLECTION: &str = "## Strategy reflection";
pub const SECTION_FORMAT: &str = "## Response format";
pub const NO_HISTORY: &str = "No bidding history yet.";

#[derive(Clone, Debug, PartialEq)]
pub struct FirmProfile {
    pub firm_id: String,
    pub firm_type: FirmType,
    pub omega: f64,
    pub has_raw_material: bool,
    pub cost: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketTerms {
    pub p_max: f64,
    pub rho: f64,
    pub q0: f64,
    pub qe: f64,
    pub x: usize,
    pub num_firms: usize,
}

/// What the firm saw after the previous clearing.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketFeedback {
    pub rank: usize,
    pub num_firms: usize,
    pub won: bool,
    pub winning_low: Option<f64>,
    pub winning_high: Option<f64>,
}

pub struct PromptInput<'a> {
    pub firm: &'a FirmProfile,
    pub market: &'a MarketTerms,
    pub memory: &'a LlmMemory,
    pub feedback: Option<&'a MarketFeedback>,
    /// 1-based.
    pub step: usize,
    pub horizon: usize,
}

fn type_label(t: FirmType) -> &'static str {
    match t {
        FirmType::A => "originator",
        FirmType::B => "large-scale generic manufacturer",
        FirmType::C => "medium-scale generic manufacturer",
        FirmType::D => "small-scale generic manufacturer",
    }
}

pub fn system_prompt() -> String {
    "You are the pricing strategist of a pharmaceutical firm taking part in a national \
     volume-based drug procurement tender. You submit one sealed bid per round and aim to \
     maximize your firm's profit. Always answer with a single JSON object."
        .to_string()
}

fn render_entry(out: &mut String, e: &MemoryEntry) {
    let outcome = if e.won { "won" } else { "lost" };
    let change = match e.profit_delta {
        Some(d) => format!("{d:+.2} vs previous round"),
        None => "first round".to_string(),
    };
    let _ = writeln!(
        out,
        "- Round {}: bid {:.4}, price rank {}, profit {:.2} ({}, {})",
        e.step, e.bid, e.rank, e.profit, change, outcome
    );
}

/// Returns `(system, user)` texts.
pub fn build_prompt(input: &PromptInput<'_>) -> (String, String) {
    let f = input.firm;
    let m = input.market;
    let mut u = String::new();

    let _ = writeln!(u, "{SECTION_ROLE}");
    let _ = writeln!(
        u,
        "You set the bid price for firm {} in round {} of {}.\n",
        f.firm_id, input.step, input.horizon
    );

    let _ = writeln!(u, "{SECTION_FIRM}");
    let _ = writeln!(u, "- Type {} ({})", f.firm_type, type_label(f.firm_type));
    let _ = writeln!(u, "- Unit production cost C: {:.4}", f.cost);
    let _ = writeln!(
        u,
        "- Own raw-material supply: {}",
        if f.has_raw_material { "yes" } else { "no" }
    );
    let _ = writeln!(u, "- Brand premium factor in the non-procurement market: {:.2}", f.omega);
    let _ = writeln!(u, "- Share of the non-procurement market: {:.4}\n", f.beta);

    let _ = writeln!(u, "{SECTION_RULES}");
    let _ = writeln!(u, "- Maximum valid bid price P_max: {:.4}", m.p_max);
    let _ = writeln!(u, "- Agreed procurement ratio rho: {:.2}", m.rho);
    let _ = writeln!(u, "- Agreed procurement volume Q0: {:.2}", m.q0);
    let _ = writeln!(u, "- Total expected market volume Qe: {:.2}", m.qe);
    let _ = writeln!(
        u,
        "- The {} lowest of {} bids win and share rho * Q0 equally at their bid price. \
         Every firm, selected or not, also sells its share of the remaining volume \
         Qe - rho * Q0 at its bid price raised by its brand premium factor.",
        m.x, m.num_firms
    );
    let _ = writeln!(
        u,
        "- Your bid must satisfy C <= bid <= P_max, i.e. {:.4} <= bid <= {:.4}.\n",
        f.cost, m.p_max
    );

    let _ = writeln!(u, "{SECTION_MEMORY}");
    if input.memory.is_empty() {
        let _ = writeln!(u, "{NO_HISTORY}");
    } else {
        for e in input.memory.entries() {
            render_entry(&mut u, e);
        }
    }
    if let Some(r) = &input.memory.last_reflection {
        let _ = writeln!(u, "Last strategy note: {r}");
    }
    u.push('\n');

    let _ = writeln!(u, "{SECTION_MARKET}");
    match input.feedback {
        None => {
            let _ = writeln!(u, "No round has been cleared yet.");
        }
        Some(fb) => {
            let _ = writeln!(u, "- Your price rank last round: {} of {}", fb.rank, fb.num_firms);
            let _ = writeln!(
                u,
                "- Selection status: {}",
                if fb.won { "selected" } else { "not selected" }
            );
            if let (Some(lo), Some(hi)) = (fb.winning_low, fb.winning_high) {
                let _ = writeln!(u, "- Winning prices ranged from {lo:.4} to {hi:.4}");
            }
        }
    }
    u.push('\n');

    if input.memory.is_reflection_step(input.step) {
        let _ = writeln!(u, "{SECTION_REFLECTION}");
        let rounds = input.memory.rounds();
        let wins = input.memory.wins();
        let _ = writeln!(
            u,
            "Analyze your cumulative performance before bidding: {} rounds played, {} won, \
             total profit {:.2}, average bid {}. Reconsider whether your pricing strategy \
             should change.\n",
            rounds,
            wins,
            input.memory.total_profit(),
            input
                .memory
                .mean_bid()
                .map_or_else(|| "n/a".to_string(), |b| format!("{b:.4}")),
        );
    }

    let _ = writeln!(u, "{SECTION_FORMAT}");
    let _ = write!(
        u,
        "Reply with JSON only: {{\"reasoning\": \"<text>\", \"bid_price\": <float>}}"
    );

    (system_prompt(), u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn firm() -> FirmProfile {
        FirmProfile {
            firm_id: "F2".into(),
            firm_type: FirmType::A,
            omega: 2.0,
            has_raw_material: true,
            cost: 0.098,
            beta: 1.0 / 3.0,
        }
    }

    fn market() -> MarketTerms {
        MarketTerms {
            p_max: 1.08,
            rho: 0.6,
            q0: 2893.17,
            qe: 3471.80,
            x: 2,
            num_firms: 3,
        }
    }

    fn render(memory: &LlmMemory, step: usize) -> String {
        let (f, m) = (firm(), market());
        build_prompt(&PromptInput {
            firm: &f,
            market: &m,
            memory,
            feedback: None,
            step,
            horizon: 50,
        })
        .1
    }

    #[test]
    fn sections_appear_in_order() {
        let mut memory = LlmMemory::default();
        for s in 1..=4 {
            memory.record(s, 0.5, 100.0, 1, true);
        }
        let text = render(&memory, 5);
        let pos: Vec<usize> = [
            SECTION_ROLE,
            SECTION_FIRM,
            SECTION_RULES,
            SECTION_MEMORY,
            SECTION_MARKET,
            SECTION_REFLECTION,
            SECTION_FORMAT,
        ]
        .iter()
        .map(|s| text.find(s).unwrap())
        .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reflection_only_on_fifth_step() {
        let memory = LlmMemory::default();
        assert!(render(&memory, 5).contains(SECTION_REFLECTION));
        assert!(!render(&memory, 4).contains(SECTION_REFLECTION));
    }

    #[test]
    fn empty_memory_says_so() {
        assert!(render(&LlmMemory::default(), 1).contains(NO_HISTORY));
    }

    #[test]
    fn four_steps_render_three_rounds() {
        let mut memory = LlmMemory::default();
        for s in 1..=4 {
            memory.record(s, 0.5, 100.0, 1, s % 2 == 0);
        }
        let text = render(&memory, 5);
        assert_eq!(text.matches("- Round ").count(), 3);
        assert!(!text.contains("- Round 1:"));
        assert!(text.find("- Round 2:").unwrap() < text.find("- Round 4:").unwrap());
    }
}
