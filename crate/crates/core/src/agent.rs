//! The two-mode translating agent.
//!
//! Every source position is first handled in s-mode: the habitual default
//! target is emitted without touching beliefs. A monitor then looks at the
//! free energy of the habit-congruent belief (the sense prior) against the
//! context cue. Above threshold it hands the token to i-mode, which performs
//! exact belief updating, scores every candidate target by expected free
//! energy and re-emits a target. i-mode repeats while the monitor keeps
//! flagging the outcome, up to `imode_max_iterations` per token.
//!
//! Effort is tracked in two channels:
//! * E1, belief updating: `D_KL[posterior ‖ prior]` over senses;
//! * E2, departure from habit: `D_KL[q(π) ‖ E]` over targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{self, BeliefError, Categorical, Nats, RngStream};
use crate::free_energy::{
    behavior_effort, belief_update_effort, exact_posterior, expected_free_energy,
    policy_posterior, variational_free_energy, DiscreteModel, FreeEnergyError, Policy,
    PolicyScore, StochasticMatrix,
};
use crate::world::{self, FeedbackObs, TranslationTask, WorldError};

/// Effort beyond this many nats is rendered as this many nats when it has
/// to be turned into time.
pub const TIMED_EFFORT_CAP: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("monitor.{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("token {0} has no habit entry")]
    NoHabit(usize),
    #[error("token {0} has an empty action set")]
    EmptyActionSet(usize),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] FreeEnergyError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Free-energy threshold above which the monitor interrupts.
    pub theta: f64,
    /// Habit mass on each default target.
    pub habit_strength: f64,
    /// Precision of policy selection.
    pub precision: f64,
    /// Session cap on cumulative effort (E1 + E2).
    pub effort_budget: f64,
    pub imode_max_iterations: usize,
    pub base_imode_ticks: u64,
    pub ticks_per_nat: f64,
    /// Also flag s-mode outcomes whose feedback surprises the sense prior.
    pub adequacy_check: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            theta: 1.5,
            habit_strength: 0.95,
            precision: 4.0,
            effort_budget: 25.0,
            imode_max_iterations: 3,
            base_imode_ticks: 3,
            ticks_per_nat: 1.0,
            adequacy_check: false,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |field, reason: &str| {
            Err(AgentError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.theta >= 0.0) || self.theta.is_nan() {
            return bad("theta", "must be >= 0");
        }
        if !(self.habit_strength > 0.0 && self.habit_strength <= 1.0) {
            return bad("habit_strength", "must be in (0, 1]");
        }
        if !(self.precision.is_finite() && self.precision >= 0.0) {
            return bad("precision", "must be finite and >= 0");
        }
        if !(self.effort_budget > 0.0) {
            return bad("effort_budget", "must be > 0");
        }
        if self.imode_max_iterations == 0 {
            return bad("imode_max_iterations", "must be >= 1");
        }
        if !(self.ticks_per_nat.is_finite() && self.ticks_per_nat >= 0.0) {
            return bad("ticks_per_nat", "must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Smode,
    Imode,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Smode => "smode",
            Mode::Imode => "imode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorDecision {
    Continue,
    TriggerImode,
    Abandon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Completed,
    Abandoned,
}

/// How tokens are routed between the two modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// s-mode first, i-mode when the monitor fires.
    #[default]
    Monitor,
    /// The monitor may abandon but never interrupts.
    SmodeOnly,
    /// Every token goes straight to i-mode.
    ImodeForced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionOptions {
    /// Take the policy-posterior argmax instead of sampling.
    pub deterministic_actions: bool,
    pub schedule: Schedule,
}

/// One translation unit: a single emission of a target for a source token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuRecord {
    pub index: usize,
    /// Source position.
    pub position: usize,
    pub token: usize,
    pub mode: Mode,
    /// 0 for the s-mode draft, 1.. for i-mode repairs.
    pub iteration: usize,
    pub action: usize,
    pub f: Nats,
    pub effort_e1: Nats,
    pub effort_e2: Nats,
    /// Effect newly credited to this token by this emission.
    pub effect: f64,
    pub feedback: FeedbackObs,
    pub fast_ticks: u64,
    /// `precision · (G(default) - min G)`; zero for s-mode records.
    #[serde(
        serialize_with = "belief::serialize_extended_f64",
        deserialize_with = "belief::deserialize_extended_f64"
    )]
    pub habit_gap: f64,
}

impl TuRecord {
    pub fn effort(&self) -> Nats {
        self.effort_e1 + self.effort_e2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionTotals {
    pub effort: Nats,
    pub effect: f64,
    pub free_energy: Nats,
    pub imode_count: usize,
    /// s-mode drafts the monitor interrupted.
    pub interruptions: usize,
}

impl SessionTotals {
    pub fn from_records(records: &[TuRecord]) -> Self {
        let mut totals = SessionTotals {
            effort: Nats::ZERO,
            effect: 0.0,
            free_energy: Nats::ZERO,
            imode_count: 0,
            interruptions: 0,
        };
        for (i, r) in records.iter().enumerate() {
            totals.effort += r.effort();
            totals.effect += r.effect;
            totals.free_energy += r.f;
            if r.mode == Mode::Imode {
                totals.imode_count += 1;
                let drafted = i > 0
                    && records[i - 1].mode == Mode::Smode
                    && records[i - 1].position == r.position;
                if r.iteration == 1 && drafted {
                    totals.interruptions += 1;
                }
            }
        }
        totals
    }

    /// Session relevance, `-ΣF`.
    pub fn relevance(&self) -> f64 {
        // Subtracting from +0 keeps a zero-F session at +0 rather than -0.
        0.0 - self.free_energy.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub seed: u64,
    pub records: Vec<TuRecord>,
    pub status: SessionStatus,
    pub totals: SessionTotals,
}

impl SessionTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    Cue(usize),
    Feedback { target: usize, feedback: FeedbackObs },
}

/// Per-token working state shared by the s-mode draft and i-mode repairs.
#[derive(Debug, Clone)]
pub struct TokenEpisode {
    position: usize,
    token: usize,
    belief: Categorical,
    pending: Pending,
    best_effect: f64,
    next_f: Nats,
}

impl TokenEpisode {
    pub fn start(task: &TranslationTask, t: usize) -> Result<Self, AgentError> {
        let (token, cue) = world::observe(task, t)?;
        let tm = task.token_model(token).map_err(|_| AgentError::NoHabit(token))?;
        Ok(Self {
            position: t,
            token,
            belief: tm.model.prior.clone(),
            pending: Pending::Cue(cue),
            best_effect: 0.0,
            next_f: Nats::ZERO,
        })
    }

    pub fn belief(&self) -> &Categorical {
        &self.belief
    }

    /// The statistic the monitor should look at next.
    pub fn monitor_statistic(&self) -> Nats {
        self.next_f
    }

    fn credit(&mut self, effect: f64) -> f64 {
        let gain = (effect - self.best_effect).max(0.0);
        self.best_effect = self.best_effect.max(effect);
        gain
    }
}

fn token_habit(task: &TranslationTask, token: usize) -> Result<&world::TokenModel, AgentError> {
    let tm = task.token_model(token).map_err(|_| AgentError::NoHabit(token))?;
    if tm.n_targets == 0 || tm.habit.is_empty() {
        return Err(AgentError::EmptyActionSet(token));
    }
    if tm.habit.len() != tm.n_targets {
        return Err(AgentError::NoHabit(token));
    }
    Ok(tm)
}

/// `F` of `belief` held as-is (no updating) against feedback on `target`.
fn outcome_free_energy(
    task: &TranslationTask,
    token: usize,
    belief: &Categorical,
    target: usize,
    feedback: FeedbackObs,
) -> Result<Nats, AgentError> {
    let model = DiscreteModel::new(belief.clone(), task.feedback_likelihood(token, target)?)?;
    Ok(variational_free_energy(belief, &model, feedback.index())?.total_f)
}

/// Fast habitual step: emit the default target, leave beliefs untouched.
pub fn step_smode(
    task: &TranslationTask,
    episode: &mut TokenEpisode,
    config: &MonitorConfig,
    rng: &mut RngStream,
) -> Result<TuRecord, AgentError> {
    let tm = token_habit(task, episode.token)?;
    let Pending::Cue(cue) = episode.pending else {
        unreachable!("s-mode always opens a token episode");
    };
    let action = tm.habit.argmax();
    let f = variational_free_energy(&tm.model.prior, &tm.model, cue)?.total_f;
    let feedback = world::emit_feedback(task, episode.position, action, rng)?;
    let effect = episode.credit(world::effect_of(feedback, &task.preferences)?);

    episode.next_f = if config.adequacy_check {
        let outcome = outcome_free_energy(task, episode.token, &episode.belief, action, feedback)?;
        Nats(f.0.max(outcome.0))
    } else {
        f
    };

    Ok(TuRecord {
        index: 0,
        position: episode.position,
        token: episode.token,
        mode: Mode::Smode,
        iteration: 0,
        action,
        f,
        effort_e1: Nats::ZERO,
        effort_e2: Nats::ZERO,
        effect,
        feedback,
        fast_ticks: 1,
        habit_gap: 0.0,
    })
}

/// Scores each candidate target as a one-step policy.
pub fn score_targets(
    task: &TranslationTask,
    token: usize,
    belief: &Categorical,
) -> Result<Vec<PolicyScore>, AgentError> {
    let tm = task.token_model(token)?;
    let stay = [StochasticMatrix::identity(belief.len())];
    let policy = Policy::new(vec![0])?;
    (0..tm.n_targets)
        .map(|target| {
            let model =
                DiscreteModel::new(belief.clone(), task.feedback_likelihood(token, target)?)?;
            Ok(expected_free_energy(
                &model,
                belief,
                &policy,
                &task.preferences,
                &stay,
            )?)
        })
        .collect()
}

/// Deliberate step: update beliefs on the pending observation, select a
/// target by expected free energy and habit, emit it.
pub fn step_imode(
    task: &TranslationTask,
    episode: &mut TokenEpisode,
    config: &MonitorConfig,
    options: &SessionOptions,
    rng: &mut RngStream,
    iteration: usize,
) -> Result<TuRecord, AgentError> {
    let tm = token_habit(task, episode.token)?;
    let (likelihood, y) = match episode.pending {
        Pending::Cue(cue) => (tm.model.likelihood.clone(), cue),
        Pending::Feedback { target, feedback } => (
            task.feedback_likelihood(episode.token, target)?,
            feedback.index(),
        ),
    };
    let model = DiscreteModel::new(episode.belief.clone(), likelihood)?;
    let (f, e1) = match exact_posterior(&model, y) {
        Ok(post) => {
            let f = variational_free_energy(&post.posterior, &model, y)?.total_f;
            let e1 = belief_update_effort(&episode.belief, &post.posterior)?;
            episode.belief = post.posterior;
            (f, e1)
        }
        // Nothing the translator believes can explain what happened.
        Err(FreeEnergyError::ImpossibleObservation { .. }) => (Nats::INFINITY, Nats::INFINITY),
        Err(e) => return Err(e.into()),
    };

    let scores = score_targets(task, episode.token, &episode.belief)?;
    let best = scores.iter().map(|s| s.g.0).fold(f64::INFINITY, f64::min);
    let habit_gap = if config.precision == 0.0 {
        0.0
    } else {
        config.precision * (scores[0].g.0 - best)
    };

    let (action, e2) = match policy_posterior(&tm.habit, &scores, config.precision) {
        Ok(q) => {
            let action = if options.deterministic_actions {
                q.argmax()
            } else {
                belief::sample_categorical(&q, rng)
            };
            (action, behavior_effort(&q, &tm.habit)?)
        }
        Err(FreeEnergyError::NoViablePolicy) => (tm.habit.argmax(), Nats::INFINITY),
        Err(e) => return Err(e.into()),
    };

    let feedback = world::emit_feedback(task, episode.position, action, rng)?;
    let effect = episode.credit(world::effect_of(feedback, &task.preferences)?);
    episode.next_f = outcome_free_energy(task, episode.token, &episode.belief, action, feedback)?;
    episode.pending = Pending::Feedback {
        target: action,
        feedback,
    };

    let timed = (e1 + e2).0.min(TIMED_EFFORT_CAP);
    let fast_ticks = config.base_imode_ticks + (config.ticks_per_nat * timed).ceil() as u64;

    Ok(TuRecord {
        index: 0,
        position: episode.position,
        token: episode.token,
        mode: Mode::Imode,
        iteration,
        action,
        f,
        effort_e1: e1,
        effort_e2: e2,
        effect,
        feedback,
        fast_ticks,
        habit_gap,
    })
}

/// Abandon over budget; otherwise interrupt when `f` exceeds `theta`.
pub fn monitor_check(f: Nats, cumulative_effort: Nats, config: &MonitorConfig) -> MonitorDecision {
    if cumulative_effort.0 > config.effort_budget {
        MonitorDecision::Abandon
    } else if f.0 > config.theta {
        MonitorDecision::TriggerImode
    } else {
        MonitorDecision::Continue
    }
}

/// Upper bound on E2 for an i-mode step whose habit prior puts `kappa` on the
/// default and whose `habit_gap` (precision × G-advantage of the best
/// alternative) is at most `gap`.
///
/// With `E = [κ, ε, …]` and `d_j = γ(G_0 - G_j) ≤ B`, `Z ≥ κ` and
/// `Σ_j q_j ≤ (1-κ)e^B/κ`, so `E2 ≤ B(1-κ)e^B/κ - ln κ`.
pub fn behavior_effort_bound(kappa: f64, gap: f64) -> f64 {
    let b = gap.max(0.0);
    b * (1.0 - kappa) * b.exp() / kappa - kappa.ln()
}

/// Runs a whole session over the task's source text.
///
/// Random draws at position `t` come from a stream derived from
/// `(seed, t, iteration)`, so changing how one token is handled never
/// perturbs the draws at another.
pub fn run_session(
    task: &TranslationTask,
    config: &MonitorConfig,
    seed: u64,
    options: &SessionOptions,
) -> Result<SessionTrace, AgentError> {
    config.validate()?;
    let session = RngStream::new(seed);
    let mut records: Vec<TuRecord> = Vec::new();
    let mut status = SessionStatus::Completed;
    let mut effort = Nats::ZERO;

    let push = |records: &mut Vec<TuRecord>, mut rec: TuRecord| {
        rec.index = records.len();
        records.push(rec);
    };

    for t in 0..task.len() {
        let mut episode = TokenEpisode::start(task, t)?;
        let position = session.derive(t as u64);

        let mut decision = match options.schedule {
            Schedule::ImodeForced => {
                if effort.0 > config.effort_budget {
                    MonitorDecision::Abandon
                } else {
                    MonitorDecision::TriggerImode
                }
            }
            Schedule::Monitor | Schedule::SmodeOnly => {
                let rec = step_smode(task, &mut episode, config, &mut position.derive(0))?;
                push(&mut records, rec);
                match monitor_check(episode.monitor_statistic(), effort, config) {
                    MonitorDecision::TriggerImode if options.schedule == Schedule::SmodeOnly => {
                        MonitorDecision::Continue
                    }
                    d => d,
                }
            }
        };

        let mut iteration = 0;
        while decision == MonitorDecision::TriggerImode && iteration < config.imode_max_iterations
        {
            iteration += 1;
            let mut rng = position.derive(iteration as u64);
            let rec = step_imode(task, &mut episode, config, options, &mut rng, iteration)?;
            effort += rec.effort();
            push(&mut records, rec);
            decision = monitor_check(episode.monitor_statistic(), effort, config);
        }

        if decision == MonitorDecision::Abandon {
            status = SessionStatus::Abandoned;
            break;
        }
    }

    let totals = SessionTotals::from_records(&records);
    Ok(SessionTrace {
        seed,
        records,
        status,
        totals,
    })
}
