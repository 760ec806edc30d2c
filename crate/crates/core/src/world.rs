//! Toy translation tasks as discrete generative models.
//!
//! Each lexicon entry (source token) has one or more hidden senses, a cue
//! channel that hints at the realised sense, and a set of candidate target
//! renderings:
//!
//! * target `0` is the primed default equivalent, adequate only for sense 0;
//! * target `1 + j` is the interpretive rendering of sense `j`.
//!
//! For ambiguous tokens the sense prior puts mass `context_overlap` on sense
//! 0, so `context_overlap` is exactly the probability that the default
//! equivalent is adequate for the realised sense. Unambiguous tokens have a
//! single sense and their default is always adequate.
//!
//! The latent sense and the cue at every source position are drawn once at
//! build time; a task is a fixed, repeatable text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{self, BeliefError, Categorical, RngStream};
use crate::free_energy::{DiscreteModel, FreeEnergyError, StochasticMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("task.{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("position {t} outside 0..{len}")]
    PositionOutOfRange { t: usize, len: usize },
    #[error("target {target} outside 0..{n_targets} for token {token}")]
    UnknownTarget {
        token: usize,
        target: usize,
        n_targets: usize,
    },
    #[error("token {0} is not in the lexicon")]
    UnknownToken(usize),
    #[error("preferences assign zero mass to an outcome, so effects are unbounded")]
    UnboundedEffect,
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Model(#[from] FreeEnergyError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> WorldError {
    WorldError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// Parameters of a simulated translation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub lexicon_size: usize,
    /// Number of senses carried by each ambiguous token.
    pub senses_per_token: usize,
    /// Lexicon indices that are ambiguous. `None` makes every token ambiguous.
    pub ambiguous_tokens: Option<Vec<usize>>,
    /// Tokens for which no rendering is adequate in the world, although the
    /// translator's brief expects the usual adequacy pattern.
    pub blocked_tokens: Vec<usize>,
    pub cue_reliability: f64,
    /// Probability that the habitual default equivalent is adequate.
    pub context_overlap: f64,
    /// 1.0 makes feedback mirror adequacy exactly; 0.0 makes it a coin flip.
    pub feedback_determinism: f64,
    pub source_length: usize,
    /// Preferences over `[adequate, inadequate]` feedback.
    pub preferences: [f64; 2],
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            lexicon_size: 4,
            senses_per_token: 1,
            ambiguous_tokens: None,
            blocked_tokens: Vec::new(),
            cue_reliability: 0.9,
            context_overlap: 0.95,
            feedback_determinism: 1.0,
            source_length: 8,
            preferences: [0.99, 0.01],
            seed: 42,
        }
    }
}

fn check_probability(field: &'static str, v: f64) -> Result<(), WorldError> {
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(invalid(field, format!("{v} is not in [0, 1]")));
    }
    Ok(())
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.lexicon_size == 0 {
            return Err(invalid("lexicon_size", "must be >= 1"));
        }
        if self.senses_per_token == 0 {
            return Err(invalid("senses_per_token", "must be >= 1"));
        }
        if self.source_length == 0 {
            return Err(invalid("source_length", "must be >= 1"));
        }
        check_probability("cue_reliability", self.cue_reliability)?;
        check_probability("context_overlap", self.context_overlap)?;
        check_probability("feedback_determinism", self.feedback_determinism)?;
        let lists = [
            ("ambiguous_tokens", self.ambiguous_tokens.as_deref().unwrap_or(&[])),
            ("blocked_tokens", self.blocked_tokens.as_slice()),
        ];
        for (field, list) in lists {
            if let Some(&k) = list.iter().find(|&&k| k >= self.lexicon_size) {
                return Err(invalid(field, format!("token {k} outside lexicon")));
            }
        }
        let [a, b] = self.preferences;
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0)
            || ((a + b) - 1.0).abs() > belief::SUM_TOLERANCE
        {
            return Err(invalid("preferences", "must be a probability pair"));
        }
        if a == 0.0 || b == 0.0 {
            return Err(invalid("preferences", "zero entries make effects unbounded"));
        }
        Ok(())
    }

    pub fn is_ambiguous(&self, token: usize) -> bool {
        self.senses_per_token > 1
            && self
                .ambiguous_tokens
                .as_ref()
                .map_or(true, |list| list.contains(&token))
    }

    fn senses_of(&self, token: usize) -> usize {
        if self.is_ambiguous(token) {
            self.senses_per_token
        } else {
            1
        }
    }
}

/// Audience feedback on an emitted target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackObs {
    Adequate,
    Inadequate,
}

impl FeedbackObs {
    /// Row index in feedback likelihoods and preferences.
    pub fn index(self) -> usize {
        match self {
            FeedbackObs::Adequate => 0,
            FeedbackObs::Inadequate => 1,
        }
    }
}

/// One source position: the token and the context cue the translator sees,
/// plus the latent sense the cue was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceItem {
    pub token: usize,
    pub cue: usize,
    pub sense: usize,
}

/// Everything the task knows about one lexicon entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenModel {
    /// Sense prior D and cue likelihood A (cues × senses).
    pub model: DiscreteModel,
    pub n_targets: usize,
    /// Habit prior E over targets.
    pub habit: Categorical,
    /// World truth: `adequacy[sense][target]`.
    pub adequacy: Vec<Vec<f64>>,
    /// What the translator's brief leads them to expect, same layout.
    pub expected_adequacy: Vec<Vec<f64>>,
}

impl TokenModel {
    pub fn n_senses(&self) -> usize {
        self.model.n_states()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationTask {
    pub config: TaskConfig,
    pub habit_strength: f64,
    pub source: Vec<SourceItem>,
    pub tokens: Vec<TokenModel>,
    pub preferences: Categorical,
}

/// Habit prior with mass `kappa` on the default target.
fn habit_prior(n_targets: usize, kappa: f64) -> Result<Categorical, BeliefError> {
    if n_targets == 1 {
        return Categorical::new(vec![1.0]);
    }
    let rest = (1.0 - kappa) / (n_targets - 1) as f64;
    let mut probs = vec![rest; n_targets];
    probs[0] = kappa;
    belief::normalize(&probs)
}

fn sense_prior(n_senses: usize, overlap: f64) -> Result<Categorical, BeliefError> {
    if n_senses == 1 {
        return Categorical::new(vec![1.0]);
    }
    let rest = (1.0 - overlap) / (n_senses - 1) as f64;
    let mut probs = vec![rest; n_senses];
    probs[0] = overlap;
    belief::normalize(&probs)
}

fn cue_likelihood(n_senses: usize, reliability: f64) -> Result<StochasticMatrix, FreeEnergyError> {
    if n_senses == 1 {
        return StochasticMatrix::new(1, 1, vec![1.0]);
    }
    let miss = (1.0 - reliability) / (n_senses - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..n_senses)
        .map(|cue| {
            (0..n_senses)
                .map(|sense| if cue == sense { reliability } else { miss })
                .collect()
        })
        .collect();
    StochasticMatrix::from_rows(&rows)
}

fn nominal_adequacy(n_senses: usize) -> Vec<Vec<f64>> {
    (0..n_senses)
        .map(|sense| {
            (0..=n_senses)
                .map(|target| {
                    let fits = if target == 0 { sense == 0 } else { target - 1 == sense };
                    if fits {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Constructs the task deterministically from `config.seed`.
///
/// `habit_strength` is the mass of the habit prior on each default target.
pub fn build_task(config: &TaskConfig, habit_strength: f64) -> Result<TranslationTask, WorldError> {
    config.validate()?;
    if !(habit_strength.is_finite() && habit_strength > 0.0 && habit_strength <= 1.0) {
        return Err(invalid(
            "habit_strength",
            format!("{habit_strength} is not in (0, 1]"),
        ));
    }

    let mut tokens = Vec::with_capacity(config.lexicon_size);
    for token in 0..config.lexicon_size {
        let n_senses = config.senses_of(token);
        let model = DiscreteModel::new(
            sense_prior(n_senses, config.context_overlap)?,
            cue_likelihood(n_senses, config.cue_reliability)?,
        )?;
        let expected = nominal_adequacy(n_senses);
        let adequacy = if config.blocked_tokens.contains(&token) {
            vec![vec![0.0; n_senses + 1]; n_senses]
        } else {
            expected.clone()
        };
        tokens.push(TokenModel {
            model,
            n_targets: n_senses + 1,
            habit: habit_prior(n_senses + 1, habit_strength)?,
            adequacy,
            expected_adequacy: expected,
        });
    }

    // Two uniforms per position whatever the token, so runs that differ only
    // in probabilities stay coupled draw for draw.
    let mut rng = RngStream::new(config.seed);
    let source = (0..config.source_length)
        .map(|t| {
            let token = t % config.lexicon_size;
            let tm = &tokens[token];
            let sense = belief::inverse_cdf(tm.model.prior.probs(), rng.uniform());
            let cue = belief::inverse_cdf(&tm.model.likelihood.column(sense), rng.uniform());
            SourceItem { token, cue, sense }
        })
        .collect();

    Ok(TranslationTask {
        config: config.clone(),
        habit_strength,
        source,
        tokens,
        preferences: Categorical::new(config.preferences.to_vec())?,
    })
}

impl TranslationTask {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn item(&self, t: usize) -> Result<&SourceItem, WorldError> {
        self.source.get(t).ok_or(WorldError::PositionOutOfRange {
            t,
            len: self.source.len(),
        })
    }

    pub fn token_model(&self, token: usize) -> Result<&TokenModel, WorldError> {
        self.tokens.get(token).ok_or(WorldError::UnknownToken(token))
    }

    /// Probability of adequate feedback given the adequacy of the pair.
    fn feedback_probability(&self, adequacy: f64) -> f64 {
        let d = self.config.feedback_determinism;
        d * adequacy + (1.0 - d) * 0.5
    }

    /// The translator's feedback model for `target`: rows
    /// `[adequate, inadequate]` × senses, built from the brief.
    pub fn feedback_likelihood(
        &self,
        token: usize,
        target: usize,
    ) -> Result<StochasticMatrix, WorldError> {
        let tm = self.token_model(token)?;
        if target >= tm.n_targets {
            return Err(WorldError::UnknownTarget {
                token,
                target,
                n_targets: tm.n_targets,
            });
        }
        let adequate: Vec<f64> = tm
            .expected_adequacy
            .iter()
            .map(|row| self.feedback_probability(row[target]))
            .collect();
        let inadequate: Vec<f64> = adequate.iter().map(|p| 1.0 - p).collect();
        Ok(StochasticMatrix::from_rows(&[adequate, inadequate])?)
    }

    /// Serialized form; identical configs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serializes")
    }
}

/// The scripted token and its context cue at position `t`.
pub fn observe(task: &TranslationTask, t: usize) -> Result<(usize, usize), WorldError> {
    let item = task.item(t)?;
    Ok((item.token, item.cue))
}

/// The world's response to emitting `target` at position `t`.
pub fn emit_feedback(
    task: &TranslationTask,
    t: usize,
    target: usize,
    rng: &mut RngStream,
) -> Result<FeedbackObs, WorldError> {
    let item = task.item(t)?;
    let tm = task.token_model(item.token)?;
    let adequacy = tm.adequacy[item.sense]
        .get(target)
        .copied()
        .ok_or(WorldError::UnknownTarget {
            token: item.token,
            target,
            n_targets: tm.n_targets,
        })?;
    let p = task.feedback_probability(adequacy);
    Ok(if rng.uniform() < p {
        FeedbackObs::Adequate
    } else {
        FeedbackObs::Inadequate
    })
}

/// Shifted log-preference `ln C(feedback) - ln C(inadequate)`.
///
/// Zero for the dispreferred outcome, positive for the preferred one.
pub fn effect_of(feedback: FeedbackObs, preferences: &Categorical) -> Result<f64, WorldError> {
    if preferences.len() != 2 {
        return Err(BeliefError::LengthMismatch(preferences.len(), 2).into());
    }
    let c = preferences.probs();
    if c.iter().any(|&p| p <= 0.0) {
        return Err(WorldError::UnboundedEffect);
    }
    Ok(c[feedback.index()].ln() - c[FeedbackObs::Inadequate.index()].ln())
}
