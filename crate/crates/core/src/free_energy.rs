//! Exact posteriors, variational free energy in both factorizations,
//! effort channels, expected free energy and policy posteriors.
//!
//! Free energy of a belief `q` about hidden states `x` given an observation
//! `y` is reported twice:
//!
//! ```text
//! F[q, y] = D_KL[q(x) ‖ P(x|y)] - ln P(y)        (divergence + evidence)
//!         = D_KL[q(x) ‖ P(x)] - E_q[ln P(y|x)]   (complexity - accuracy)
//! ```
//!
//! Both lines are computed from independent sums and cross-checked before a
//! report is handed out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{self, kl_divergence, BeliefError, Categorical, Nats};

/// Absolute tolerance for the two factorization identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreeEnergyError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("matrix is {rows}x{cols} but has {len} entries")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("column {col} sums to {sum}, expected 1")]
    ColumnNotNormalized { col: usize, sum: f64 },
    #[error("matrix entry ({row}, {col}) = {value} is not a probability")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("observation {y} outside 0..{n_obs}")]
    ObservationOutOfRange { y: usize, n_obs: usize },
    #[error("observation {y} has zero probability under the model")]
    ImpossibleObservation { y: usize },
    #[error("action {action} outside 0..{n_actions}")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("policy must have horizon >= 1")]
    EmptyPolicy,
    #[error("factorizations disagree: {lhs} vs {rhs}")]
    InconsistentFactorization { lhs: f64, rhs: f64 },
    #[error("precision must be finite and >= 0, got {0}")]
    InvalidPrecision(f64),
    #[error("no viable policy: all habit mass sits on policies with unbounded expected free energy")]
    NoViablePolicy,
}

/// Column-stochastic matrix, row-major. Column `j` is a distribution over rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FreeEnergyError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(FreeEnergyError::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        for (i, &value) in data.iter().enumerate() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(FreeEnergyError::BadEntry {
                    row: i / cols,
                    col: i % cols,
                    value,
                });
            }
        }
        let m = Self { rows, cols, data };
        for col in 0..cols {
            let sum: f64 = (0..rows).map(|r| m.at(r, col)).sum();
            if (sum - 1.0).abs() > belief::SUM_TOLERANCE {
                return Err(FreeEnergyError::ColumnNotNormalized { col, sum });
            }
        }
        Ok(m)
    }

    /// Builds from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FreeEnergyError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(FreeEnergyError::Shape {
                rows: n_rows,
                cols: n_cols,
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(n_rows, n_cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.at(r, col)).collect()
    }

    /// `M · v` for a distribution `v` over columns.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(m, x)| m * x).sum())
            .collect()
    }
}

/// A single-step generative model: prior `P(x)` and likelihood `P(y|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub prior: Categorical,
    /// Observations × states.
    pub likelihood: StochasticMatrix,
}

impl DiscreteModel {
    pub fn new(prior: Categorical, likelihood: StochasticMatrix) -> Result<Self, FreeEnergyError> {
        if likelihood.cols() != prior.len() {
            return Err(FreeEnergyError::Dimension {
                what: "likelihood columns",
                got: likelihood.cols(),
                expected: prior.len(),
            });
        }
        Ok(Self { prior, likelihood })
    }

    pub fn n_states(&self) -> usize {
        self.prior.len()
    }

    pub fn n_obs(&self) -> usize {
        self.likelihood.rows()
    }

    fn check_obs(&self, y: usize) -> Result<(), FreeEnergyError> {
        if y >= self.n_obs() {
            return Err(FreeEnergyError::ObservationOutOfRange {
                y,
                n_obs: self.n_obs(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub posterior: Categorical,
    /// `P(y)`.
    pub evidence: f64,
}

/// Bayes rule over a discrete model.
pub fn exact_posterior(model: &DiscreteModel, y: usize) -> Result<Posterior, FreeEnergyError> {
    model.check_obs(y)?;
    let joint: Vec<f64> = model
        .likelihood
        .row(y)
        .iter()
        .zip(model.prior.probs())
        .map(|(l, p)| l * p)
        .collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(FreeEnergyError::ImpossibleObservation { y });
    }
    let posterior = belief::normalize(&joint)?;
    Ok(Posterior {
        posterior,
        evidence,
    })
}

/// Every term of `F[q, y]` in both factorizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    /// `D_KL[q(x) ‖ P(x|y)]`
    pub divergence: Nats,
    /// `-ln P(y)`
    pub evidence_surprise: Nats,
    /// `D_KL[q(x) ‖ P(x)]`
    pub complexity: Nats,
    /// `E_q[ln P(y|x)]`, at most zero.
    #[serde(
        serialize_with = "belief::serialize_extended_f64",
        deserialize_with = "belief::deserialize_extended_f64"
    )]
    pub accuracy: f64,
    pub total_f: Nats,
}

/// Expected log-likelihood `Σ q_i ln l_i` with `0 · ln 0 = 0`.
fn expected_log(q: &[f64], l: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&qi, &li) in q.iter().zip(l) {
        if qi <= 0.0 {
            continue;
        }
        if li <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += qi * li.ln();
    }
    acc
}

/// Variational free energy of `q` against observation `y`.
///
/// An observation the model deems impossible yields `total_f = +inf` (and
/// an unbounded divergence and surprise) rather than an error.
pub fn variational_free_energy(
    q: &Categorical,
    model: &DiscreteModel,
    y: usize,
) -> Result<FreeEnergyReport, FreeEnergyError> {
    model.check_obs(y)?;
    if q.len() != model.n_states() {
        return Err(FreeEnergyError::Dimension {
            what: "belief",
            got: q.len(),
            expected: model.n_states(),
        });
    }
    let complexity = kl_divergence(q, &model.prior)?;
    let accuracy = expected_log(q.probs(), model.likelihood.row(y));
    let total = complexity.0 - accuracy;

    let (divergence, evidence_surprise) = match exact_posterior(model, y) {
        Ok(post) => (
            kl_divergence(q, &post.posterior)?,
            belief::surprise(post.evidence.min(1.0))?,
        ),
        Err(FreeEnergyError::ImpossibleObservation { .. }) => (Nats::INFINITY, Nats::INFINITY),
        Err(e) => return Err(e),
    };

    let report = FreeEnergyReport {
        divergence,
        evidence_surprise,
        complexity,
        accuracy,
        total_f: Nats(total),
    };
    check_identities(&report)?;
    Ok(report)
}

fn check_identities(r: &FreeEnergyReport) -> Result<(), FreeEnergyError> {
    let lhs = r.divergence.0 + r.evidence_surprise.0;
    let rhs = r.complexity.0 - r.accuracy;
    let agree = if lhs.is_finite() || rhs.is_finite() {
        (lhs - rhs).abs() <= IDENTITY_TOLERANCE
    } else {
        lhs == rhs
    };
    if !agree {
        return Err(FreeEnergyError::InconsistentFactorization { lhs, rhs });
    }
    Ok(())
}

/// Effort channel E1: `D_KL[posterior ‖ prior]`, the amount of belief updating.
pub fn belief_update_effort(
    prior_q: &Categorical,
    posterior_q: &Categorical,
) -> Result<Nats, FreeEnergyError> {
    Ok(kl_divergence(posterior_q, prior_q)?)
}

/// Effort channel E2: `D_KL[q(π) ‖ E]`, how far behaviour departs from habit.
pub fn behavior_effort(
    policy_posterior: &Categorical,
    habit: &Categorical,
) -> Result<Nats, FreeEnergyError> {
    Ok(kl_divergence(policy_posterior, habit)?)
}

/// An ordered sequence of action indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>) -> Result<Self, FreeEnergyError> {
        if actions.is_empty() {
            return Err(FreeEnergyError::EmptyPolicy);
        }
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Expected free energy of a policy, split into risk and ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub risk: Nats,
    pub ambiguity: Nats,
    pub g: Nats,
}

/// Rolls `q` forward under `policy` and scores it.
///
/// At each step the state distribution is pushed through the action's
/// transition matrix, then
/// `risk += D_KL[P(y_t) ‖ preferences]` and
/// `ambiguity += Σ_x P(x_t) H[P(y|x)]`.
pub fn expected_free_energy(
    model: &DiscreteModel,
    q: &Categorical,
    policy: &Policy,
    preferences: &Categorical,
    transitions: &[StochasticMatrix],
) -> Result<PolicyScore, FreeEnergyError> {
    let n = model.n_states();
    if q.len() != n {
        return Err(FreeEnergyError::Dimension {
            what: "belief",
            got: q.len(),
            expected: n,
        });
    }
    if preferences.len() != model.n_obs() {
        return Err(FreeEnergyError::Dimension {
            what: "preferences",
            got: preferences.len(),
            expected: model.n_obs(),
        });
    }
    for b in transitions {
        if b.rows() != n || b.cols() != n {
            return Err(FreeEnergyError::Dimension {
                what: "transition matrix",
                got: b.rows().max(b.cols()),
                expected: n,
            });
        }
    }
    let state_entropy: Vec<f64> = (0..n)
        .map(|x| belief::entropy_of(&model.likelihood.column(x)))
        .collect();

    let mut states = q.probs().to_vec();
    let mut risk = 0.0;
    let mut ambiguity = 0.0;
    for &a in policy.actions() {
        let b = transitions.get(a).ok_or(FreeEnergyError::InvalidAction {
            action: a,
            n_actions: transitions.len(),
        })?;
        states = b.apply(&states);
        let predicted = model.likelihood.apply(&states);
        risk += belief::kl_of(&predicted, preferences.probs());
        ambiguity += states
            .iter()
            .zip(&state_entropy)
            .map(|(s, h)| s * h)
            .sum::<f64>();
    }
    Ok(PolicyScore {
        risk: Nats(risk),
        ambiguity: Nats(ambiguity),
        g: Nats(risk + ambiguity),
    })
}

/// `q(π) ∝ E(π) · exp(-precision · G(π))`.
///
/// Policies without habit mass keep zero mass. At `precision = 0` the habit
/// is returned unchanged, whatever the scores.
pub fn policy_posterior(
    habit: &Categorical,
    scores: &[PolicyScore],
    precision: f64,
) -> Result<Categorical, FreeEnergyError> {
    if habit.len() != scores.len() {
        return Err(FreeEnergyError::Dimension {
            what: "scores",
            got: scores.len(),
            expected: habit.len(),
        });
    }
    if !(precision.is_finite() && precision >= 0.0) {
        return Err(FreeEnergyError::InvalidPrecision(precision));
    }
    let log_w: Vec<f64> = habit
        .probs()
        .iter()
        .zip(scores)
        .map(|(&e, s)| {
            if e <= 0.0 {
                f64::NEG_INFINITY
            } else if precision == 0.0 {
                e.ln()
            } else {
                e.ln() - precision * s.g.0
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FreeEnergyError::NoViablePolicy);
    }
    let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    Ok(belief::normalize(&weights)?)
}

/// Relevance as the order-reversal of free energy: `R = -F`.
pub fn relevance_score(report: &FreeEnergyReport) -> f64 {
    -report.total_f.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    fn model2() -> DiscreteModel {
        DiscreteModel::new(
            cat(&[0.5, 0.5]),
            StochasticMatrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn model2_posterior() {
        let p = exact_posterior(&model2(), 0).unwrap();
        assert!((p.evidence - 0.55).abs() < 1e-12);
        assert!((p.posterior.get(0) - 0.8182).abs() < 1e-4);
        assert!((p.posterior.get(1) - 0.1818).abs() < 1e-4);
    }

    #[test]
    fn uninformative_row_keeps_prior() {
        let m = DiscreteModel::new(
            cat(&[0.2, 0.8]),
            StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let p = exact_posterior(&m, 1).unwrap();
        assert!(p.posterior.max_abs_diff(&m.prior) < 1e-15);
    }

    #[test]
    fn deterministic_likelihood_gives_one_hot() {
        let m = DiscreteModel::new(
            cat(&[0.3, 0.3, 0.4]),
            StochasticMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(exact_posterior(&m, 0).unwrap().posterior.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn impossible_observation_is_reported() {
        let m = DiscreteModel::new(
            cat(&[1.0, 0.0]),
            StochasticMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            exact_posterior(&m, 0),
            Err(FreeEnergyError::ImpossibleObservation { y: 0 })
        );
        let r = variational_free_energy(&cat(&[1.0, 0.0]), &m, 0).unwrap();
        assert_eq!(r.total_f, Nats::INFINITY);
    }

    #[test]
    fn observation_out_of_range() {
        assert!(matches!(
            exact_posterior(&model2(), 2),
            Err(FreeEnergyError::ObservationOutOfRange { y: 2, n_obs: 2 })
        ));
    }

    #[test]
    fn vfe_at_posterior_equals_surprise() {
        let m = model2();
        let post = exact_posterior(&m, 0).unwrap().posterior;
        let r = variational_free_energy(&post, &m, 0).unwrap();
        assert!(r.divergence.0.abs() < 1e-12);
        assert!((r.total_f.0 - 0.5978).abs() < 1e-4);
        assert!((r.total_f.0 + 0.55f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vfe_at_prior_model2() {
        let m = model2();
        let r = variational_free_energy(&m.prior, &m, 0).unwrap();
        assert_eq!(r.complexity.0, 0.0);
        assert!((r.accuracy + 0.8574).abs() < 1e-4);
        assert!((r.divergence.0 - 0.2596).abs() < 1e-4);
        assert!((r.total_f.0 - 0.8574).abs() < 1e-4);
        assert!((relevance_score(&r) + 0.8574).abs() < 1e-4);
    }

    #[test]
    fn vfe_dimension_mismatch() {
        assert!(matches!(
            variational_free_energy(&cat(&[1.0]), &model2(), 0),
            Err(FreeEnergyError::Dimension { .. })
        ));
    }

    #[test]
    fn effort_channels() {
        let prior = cat(&[0.5, 0.5]);
        assert_eq!(belief_update_effort(&prior, &prior).unwrap(), Nats::ZERO);
        let post = exact_posterior(&model2(), 0).unwrap().posterior;
        assert!((belief_update_effort(&prior, &post).unwrap().0 - 0.2190).abs() < 1e-4);
        assert_eq!(
            belief_update_effort(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0])).unwrap(),
            Nats::INFINITY
        );

        let habit = cat(&[0.25; 4]);
        assert_eq!(behavior_effort(&habit, &habit).unwrap(), Nats::ZERO);
        let one_hot = cat(&[0.0, 0.0, 1.0, 0.0]);
        assert!((behavior_effort(&one_hot, &habit).unwrap().0 - 4f64.ln()).abs() < 1e-12);
        assert!(behavior_effort(&cat(&[0.5, 0.5]), &habit).is_err());
    }

    #[test]
    fn efe_preferred_and_unambiguous_is_zero() {
        let m = DiscreteModel::new(cat(&[0.5, 0.5]), StochasticMatrix::identity(2)).unwrap();
        let q = cat(&[0.7, 0.3]);
        let s = expected_free_energy(
            &m,
            &q,
            &Policy::new(vec![0]).unwrap(),
            &q,
            &[StochasticMatrix::identity(2)],
        )
        .unwrap();
        assert_eq!(s.risk.0, 0.0);
        assert_eq!(s.ambiguity.0, 0.0);
        assert_eq!(s.g.0, 0.0);
    }

    #[test]
    fn efe_risk_example() {
        let m = DiscreteModel::new(cat(&[0.5, 0.5]), StochasticMatrix::identity(2)).unwrap();
        let s = expected_free_energy(
            &m,
            &cat(&[0.9, 0.1]),
            &Policy::new(vec![0]).unwrap(),
            &cat(&[0.99, 0.01]),
            &[StochasticMatrix::identity(2)],
        )
        .unwrap();
        assert!((s.risk.0 - 0.1445).abs() < 1e-4);
        assert_eq!(s.ambiguity.0, 0.0);
    }

    #[test]
    fn efe_invalid_action_and_unbounded_risk() {
        let m = DiscreteModel::new(cat(&[0.5, 0.5]), StochasticMatrix::identity(2)).unwrap();
        let q = cat(&[0.5, 0.5]);
        let b = [StochasticMatrix::identity(2)];
        assert!(matches!(
            expected_free_energy(&m, &q, &Policy::new(vec![1]).unwrap(), &q, &b),
            Err(FreeEnergyError::InvalidAction { action: 1, .. })
        ));
        let s = expected_free_energy(&m, &q, &Policy::new(vec![0]).unwrap(), &cat(&[1.0, 0.0]), &b)
            .unwrap();
        assert_eq!(s.risk, Nats::INFINITY);
        assert!(Policy::new(vec![]).is_err());
    }

    fn score(g: f64) -> PolicyScore {
        PolicyScore {
            risk: Nats(g),
            ambiguity: Nats::ZERO,
            g: Nats(g),
        }
    }

    #[test]
    fn policy_posterior_examples() {
        let habit = cat(&[0.2, 0.8]);
        let q = policy_posterior(&habit, &[score(0.0), score(50.0)], 0.0).unwrap();
        assert!(q.max_abs_diff(&habit) < 1e-15);

        let q = policy_posterior(&cat(&[0.5, 0.5]), &[score(1.0), score(2.0)], 1.0).unwrap();
        assert!((q.get(0) - 0.7311).abs() < 1e-4);
        assert!((q.get(1) - 0.2689).abs() < 1e-4);

        let q = policy_posterior(&cat(&[0.999, 0.001]), &[score(2.0), score(1.0)], 1.0).unwrap();
        assert_eq!(q.argmax(), 0);
    }

    #[test]
    fn policy_posterior_keeps_zero_habit_mass() {
        let q = policy_posterior(&cat(&[0.0, 1.0]), &[score(0.0), score(9.0)], 3.0).unwrap();
        assert_eq!(q.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn policy_posterior_no_viable_policy() {
        let r = policy_posterior(
            &cat(&[0.0, 1.0]),
            &[score(0.0), score(f64::INFINITY)],
            1.0,
        );
        assert_eq!(r, Err(FreeEnergyError::NoViablePolicy));
    }

    #[test]
    fn stochastic_matrix_validation() {
        assert!(matches!(
            StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.6, 0.5]]),
            Err(FreeEnergyError::ColumnNotNormalized { col: 0, .. })
        ));
        assert!(StochasticMatrix::from_rows(&[vec![1.0], vec![0.0, 1.0]]).is_err());
    }
}
