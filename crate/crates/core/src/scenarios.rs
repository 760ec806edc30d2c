//! The three reference scenarios.
//!
//! * easy: every token has one sense and its default rendering works;
//! * hard: one lexicon entry has three senses and its default fits the
//!   context only 30% of the time;
//! * blocked: as hard, plus an entry for which nothing works, under a
//!   tighter effort budget.
//!
//! The files under `configs/` spell out the same settings.

use std::fmt;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::world::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Easy,
    Hard,
    Blocked,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Easy, Scenario::Hard, Scenario::Blocked];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Easy => "scen_easy",
            Scenario::Hard => "scen_hard",
            Scenario::Blocked => "scen_blocked",
        }
    }

    pub fn config(self) -> RunConfig {
        let mut c = RunConfig::default();
        match self {
            Scenario::Easy => {}
            Scenario::Hard => c.task = hard_task(),
            Scenario::Blocked => {
                c.task = TaskConfig {
                    ambiguous_tokens: Some(vec![2, 3]),
                    blocked_tokens: vec![3],
                    ..hard_task()
                };
                c.monitor.effort_budget = 15.0;
            }
        }
        c
    }
}

fn hard_task() -> TaskConfig {
    TaskConfig {
        senses_per_token: 3,
        ambiguous_tokens: Some(vec![2]),
        context_overlap: 0.3,
        ..TaskConfig::default()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == key || sc.name().trim_start_matches("scen_") == key)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}
