use proptest::prelude::*;

use relevance_core::agent::{
    run_session, Mode, MonitorConfig, SessionOptions, SessionStatus, SessionTotals,
};
use relevance_core::belief::{
    entropy, kl_divergence, normalize, softmax, Categorical, Precision, RngStream,
};
use relevance_core::field::{classify_path, trace_path, GridAxis, PathClass, RelevanceBoundary};
use relevance_core::free_energy::{
    exact_posterior, policy_posterior, variational_free_energy, DiscreteModel, PolicyScore,
    StochasticMatrix,
};
use relevance_core::belief::Nats;
use relevance_core::world::{build_task, TaskConfig};

fn weights(n: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, n)
}

fn dist(n: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Categorical> {
    weights(n).prop_map(|w| normalize(&w).unwrap())
}

/// A model with 2..=16 states and observations, an observation index and a
/// belief over states.
fn model_case() -> impl Strategy<Value = (DiscreteModel, usize, Categorical)> {
    (2usize..=16, 2usize..=16).prop_flat_map(|(n, m)| {
        (
            dist(n),
            prop::collection::vec(dist(m), n),
            0..m,
            dist(n),
        )
            .prop_map(move |(prior, cols, y, q)| {
                let data = (0..m).flat_map(|r| cols.iter().map(move |c| c.get(r))).collect();
                let a = StochasticMatrix::new(m, n, data).unwrap();
                (DiscreteModel::new(prior, a).unwrap(), y, q)
            })
    })
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(w in weights(1..40)) {
        let p = normalize(&w).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn entropy_is_bounded(p in dist(1..40)) {
        let h = entropy(&p).0;
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        (q, p) in (1usize..20).prop_flat_map(|n| (dist(n), dist(n)))
    ) {
        prop_assert!(kl_divergence(&q, &p).unwrap().0 >= 0.0);
        prop_assert!(kl_divergence(&q, &q).unwrap().0.abs() <= 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(
        logits in prop::collection::vec(-1e3..1e3f64, 1..12),
        gamma in 0.0..100.0f64,
    ) {
        let p = softmax(&logits, Precision::Finite(gamma)).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn same_seed_same_draws(seed in any::<u64>()) {
        let mut a = RngStream::new(seed);
        let mut b = RngStream::new(seed);
        for _ in 0..16 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn factorizations_agree_and_bound_surprise((model, y, q) in model_case()) {
        let r = variational_free_energy(&q, &model, y).unwrap();
        let lhs = r.divergence.0 + r.evidence_surprise.0;
        let rhs = r.complexity.0 - r.accuracy;
        prop_assert!((lhs - rhs).abs() <= 1e-9);
        prop_assert!((lhs - r.total_f.0).abs() <= 1e-9);
        let post = exact_posterior(&model, y).unwrap();
        prop_assert!(r.total_f.0 >= -post.evidence.ln() - 1e-9);
    }

    #[test]
    fn posterior_minimizes_free_energy((model, y, q) in model_case()) {
        let post = exact_posterior(&model, y).unwrap();
        let at_post = variational_free_energy(&post.posterior, &model, y).unwrap().total_f.0;
        let elsewhere = variational_free_energy(&q, &model, y).unwrap().total_f.0;
        prop_assert!(at_post <= elsewhere + 1e-9);
        prop_assert!((at_post + post.evidence.ln()).abs() <= 1e-9);
    }

    #[test]
    fn policy_posterior_is_valid(
        (habit, g) in (1usize..8).prop_flat_map(|n| (dist(n), prop::collection::vec(0.0..50.0f64, n))),
        gamma in 0.0..20.0f64,
    ) {
        let scores: Vec<PolicyScore> = g
            .iter()
            .map(|&g| PolicyScore { risk: Nats(g), ambiguity: Nats(0.0), g: Nats(g) })
            .collect();
        let q = policy_posterior(&habit, &scores, gamma).unwrap();
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        if gamma == 0.0 {
            prop_assert!(q.max_abs_diff(&habit) <= 1e-12);
        }
    }

    #[test]
    fn grid_axes_span_their_range(lo in 0.0..1.0f64, span in 0.0..1.0f64, step in 0.01..0.5f64) {
        let hi = lo + span;
        let axis: GridAxis = format!("theta={lo}:{hi}:{step}").parse().unwrap();
        prop_assert!(!axis.values.is_empty());
        prop_assert!(axis.values.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(axis.values.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }
}

fn any_task_config() -> impl Strategy<Value = TaskConfig> {
    (
        1usize..5,
        1usize..4,
        0.5..1.0f64,
        0.0..=1.0f64,
        0.5..=1.0f64,
        1usize..12,
        any::<u64>(),
    )
        .prop_map(|(lexicon, senses, cue, rho, det, len, seed)| TaskConfig {
            lexicon_size: lexicon,
            senses_per_token: senses,
            cue_reliability: cue,
            context_overlap: rho,
            feedback_determinism: det,
            source_length: len,
            seed,
            ..TaskConfig::default()
        })
}

fn any_monitor() -> impl Strategy<Value = MonitorConfig> {
    (0.0..3.0f64, 0.5..0.999f64, 0.0..8.0f64, 0.5..30.0f64, 1usize..4, any::<bool>()).prop_map(
        |(theta, kappa, gamma, budget, iters, check)| MonitorConfig {
            theta,
            habit_strength: kappa,
            precision: gamma,
            effort_budget: budget,
            imode_max_iterations: iters,
            adequacy_check: check,
            ..MonitorConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sessions_keep_their_invariants(
        task_config in any_task_config(),
        monitor in any_monitor(),
        seed in any::<u64>(),
    ) {
        let task = build_task(&task_config, monitor.habit_strength).unwrap();
        let trace = run_session(&task, &monitor, seed, &SessionOptions::default()).unwrap();

        let totals = SessionTotals::from_records(&trace.records);
        prop_assert_eq!(totals, trace.totals);

        let mut cum = 0.0;
        let mut exceeded = false;
        for r in &trace.records {
            prop_assert!(r.effort_e1.0 >= 0.0 && r.effort_e2.0 >= 0.0 && r.effect >= 0.0);
            if r.mode == Mode::Smode {
                prop_assert_eq!(r.effort_e1.0, 0.0);
                prop_assert_eq!(r.effort_e2.0, 0.0);
                prop_assert_eq!(r.fast_ticks, 1);
            } else {
                prop_assert!(r.fast_ticks > 1);
            }
            cum += r.effort().0;
            exceeded |= cum > monitor.effort_budget;
        }
        prop_assert_eq!(trace.status == SessionStatus::Abandoned, exceeded);

        let again = run_session(&task, &monitor, seed, &SessionOptions::default()).unwrap();
        prop_assert_eq!(again.to_json(), trace.to_json());

        let path = trace_path(&trace);
        let monotone = path.points.windows(2).all(|w| {
            w[1].effort >= w[0].effort && w[1].effect >= w[0].effect && w[1].tick >= w[0].tick
        });
        prop_assert!(monotone);
        let class = classify_path(&path, &RelevanceBoundary::default());
        prop_assert_eq!(
            class == PathClass::Abandoned,
            trace.status == SessionStatus::Abandoned
        );
    }
}
