//! Property tests for the structural invariants: stochasticity, backup
//! monotonicity, gap positivity, greedification, and the policy-improvement
//! theorem under exact evaluation.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vigpi_core::dp::{
    backward_induction_evaluation, bellman_backup, bellman_optimality_backup, exact_state_values,
    greedification_gap,
};
use vigpi_core::expectile::expectile_scalar;
use vigpi_core::instances::random_layered_mdp;
use vigpi_core::operators::{
    bon_exact_op, bon_sampled_op, gmz_op, greedy_op, inadequate_op, OperatorConfig,
};
use vigpi_core::{FiniteMdp, QTable, TabularPolicy};

const ROW_TOL: f64 = 1e-12;

fn seeded_policy(seed: u64, states: usize, actions: usize) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..states)
        .map(|_| {
            let draws: Vec<f64> = (0..actions).map(|_| rng.random::<f64>() + 1e-6).collect();
            let total: f64 = draws.iter().sum();
            draws.iter().map(|d| d / total).collect()
        })
        .collect();
    TabularPolicy::from_rows(rows).unwrap()
}

fn seeded_qtable(seed: u64, states: usize, actions: usize) -> QTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QTable::from_rows(
        (0..states)
            .map(|_| (0..actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn rows_are_distributions(policy: &TabularPolicy) -> bool {
    (0..policy.num_states()).all(|s| {
        let row = policy.row(s);
        row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
    })
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=4, 1usize..=4, 2usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn operator_outputs_are_stochastic(seed in any::<u64>(), states in 1usize..=5, actions in 2usize..=5) {
        let pi = seeded_policy(seed, states, actions);
        let q = seeded_qtable(seed ^ 0x9e37, states, actions);
        for out in [
            greedy_op(&pi, &q).unwrap(),
            gmz_op(&pi, &q, &OperatorConfig::gmz(1.5), 0).unwrap(),
            bon_exact_op(&pi, &q, 3).unwrap(),
            bon_sampled_op(&pi, &q, 3, seed).unwrap(),
            inadequate_op(&pi, &q, 0.5).unwrap(),
        ] {
            prop_assert!(rows_are_distributions(&out));
        }
    }

    #[test]
    fn catalog_operators_greedify(seed in any::<u64>(), states in 1usize..=5, actions in 2usize..=5) {
        let pi = seeded_policy(seed, states, actions);
        let q = seeded_qtable(seed ^ 0x517c, states, actions);
        for out in [
            greedy_op(&pi, &q).unwrap(),
            gmz_op(&pi, &q, &OperatorConfig::gmz(1.0), 0).unwrap(),
            bon_exact_op(&pi, &q, 4).unwrap(),
            inadequate_op(&pi, &q, 0.3).unwrap(),
        ] {
            for s in 0..states {
                prop_assert!(
                    out.expected_value(s, &q) >= pi.expected_value(s, &q) - 1e-10,
                    "expected value dropped at state {s}"
                );
            }
        }
    }

    #[test]
    fn gmz_preserves_support(seed in any::<u64>(), states in 1usize..=4, actions in 2usize..=5) {
        let pi = seeded_policy(seed, states, actions);
        let q = seeded_qtable(seed ^ 0xabcd, states, actions);
        let out = gmz_op(&pi, &q, &OperatorConfig::gmz(3.0), 0).unwrap();
        for s in 0..states {
            for a in 0..actions {
                prop_assert!(out.prob(s, a) > 0.0);
            }
        }
    }

    #[test]
    fn greedy_is_invariant_under_positive_affine_maps(
        seed in any::<u64>(),
        scale in 0.01f64..50.0,
        shift in -10.0f64..10.0,
    ) {
        let pi = seeded_policy(seed, 3, 4);
        let q = seeded_qtable(seed ^ 0x7777, 3, 4);
        let mapped = QTable::from_rows(
            q.rows()
                .iter()
                .map(|row| row.iter().map(|v| scale * v + shift).collect())
                .collect(),
        )
        .unwrap();
        let a = greedy_op(&pi, &q).unwrap();
        let b = greedy_op(&pi, &mapped).unwrap();
        for s in 0..3 {
            for act in 0..4 {
                prop_assert!((a.prob(s, act) - b.prob(s, act)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gaps_are_nonnegative_and_zero_for_argmax(seed in any::<u64>(), states in 1usize..=5, actions in 2usize..=5) {
        let pi = seeded_policy(seed, states, actions);
        let q = seeded_qtable(seed ^ 0x3141, states, actions);
        let gaps = greedification_gap(&pi, &q).unwrap();
        for s in 0..states {
            prop_assert!(gaps.get(s) >= -1e-12);
        }
        let greedy = greedy_op(&pi, &q).unwrap();
        let gaps = greedification_gap(&greedy, &q).unwrap();
        for s in 0..states {
            prop_assert!(gaps.get(s) <= 1e-12);
        }
    }

    #[test]
    fn backups_are_monotone(seed in any::<u64>(), (layers, width, actions) in dims()) {
        let mdp = random_layered_mdp(layers, width, actions, seed).unwrap();
        let pi = seeded_policy(seed ^ 0x2222, mdp.num_states(), actions);
        let lo = seeded_qtable(seed ^ 0x4444, mdp.num_states(), actions);
        let bump = seeded_qtable(seed ^ 0x8888, mdp.num_states(), actions);
        let hi = QTable::from_rows(
            lo.rows()
                .iter()
                .zip(bump.rows())
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y.abs()).collect())
                .collect(),
        )
        .unwrap();
        prop_assert!(lo.le_elementwise(&hi, 0.0));

        let lo_pi = bellman_backup(&lo, &pi, &mdp, 1).unwrap();
        let hi_pi = bellman_backup(&hi, &pi, &mdp, 1).unwrap();
        prop_assert!(lo_pi.le_elementwise(&hi_pi, 1e-12));

        let lo_opt = bellman_optimality_backup(&lo, &mdp).unwrap();
        let hi_opt = bellman_optimality_backup(&hi, &mdp).unwrap();
        prop_assert!(lo_opt.le_elementwise(&hi_opt, 1e-12));
    }

    #[test]
    fn h_fold_backup_is_exact_on_dags(seed in any::<u64>(), (layers, width, actions) in dims()) {
        let mdp = random_layered_mdp(layers, width, actions, seed).unwrap();
        let pi = seeded_policy(seed ^ 0x1357, mdp.num_states(), actions);
        let zeros = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let via_backup = bellman_backup(&zeros, &pi, &mdp, layers).unwrap();
        let via_sweep = backward_induction_evaluation(&pi, &mdp).unwrap();
        prop_assert!(via_backup.sup_distance(&via_sweep) <= 1e-12);
    }

    #[test]
    fn greedification_of_exact_values_improves_the_policy(
        seed in any::<u64>(),
        (layers, width, actions) in dims(),
    ) {
        // Policy-improvement route: any catalog operator applied to (pi, Q^pi)
        // produces a policy whose exact values dominate pi's.
        let mdp = random_layered_mdp(layers, width, actions, seed).unwrap();
        let pi = seeded_policy(seed ^ 0xb00b, mdp.num_states(), actions);
        let q_pi = backward_induction_evaluation(&pi, &mdp).unwrap();
        let before = exact_state_values(&pi, &mdp).unwrap();
        for improved in [
            greedy_op(&pi, &q_pi).unwrap(),
            gmz_op(&pi, &q_pi, &OperatorConfig::gmz(2.0), 0).unwrap(),
            bon_exact_op(&pi, &q_pi, 3).unwrap(),
            inadequate_op(&pi, &q_pi, 0.7).unwrap(),
        ] {
            let after = exact_state_values(&improved, &mdp).unwrap();
            for s in 0..mdp.num_states() {
                prop_assert!(after.get(s) >= before.get(s) - 1e-10);
            }
        }
    }

    #[test]
    fn expectile_is_monotone_and_bounded(seed in any::<u64>(), tau_lo in 0.05f64..0.9, gap in 0.01f64..0.09) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = draws.iter().sum();
        let probs: Vec<f64> = draws.iter().map(|d| d / total).collect();

        let tau_hi = tau_lo + gap;
        let lo = expectile_scalar(&values, &probs, tau_lo).unwrap();
        let hi = expectile_scalar(&values, &probs, tau_hi).unwrap();
        prop_assert!(hi >= lo - 1e-12);

        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo >= min - 1e-12 && hi <= max + 1e-12);
    }

    #[test]
    fn mdp_rows_stay_stochastic_through_construction(seed in any::<u64>(), (layers, width, actions) in dims()) {
        let mdp = random_layered_mdp(layers, width, actions, seed).unwrap();
        prop_assert!(vigpi_core::validate_mdp(&mdp).ok());
        check_transition_rows(&mdp)?;
    }
}

fn check_transition_rows(mdp: &FiniteMdp) -> Result<(), TestCaseError> {
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let sum: f64 = mdp.transition(s, a).iter().sum();
            prop_assert!((sum - 1.0).abs() <= ROW_TOL);
        }
    }
    Ok(())
}

/// Sampled Best-of-N greedifies in expectation: over many seeds the average
/// selected value beats the sampling policy's expectation, within Monte-Carlo
/// error.
#[test]
fn sampled_bon_greedifies_in_expectation() {
    let n_seeds = 10_000u64;
    for pair_seed in 0..8u64 {
        let pi = seeded_policy(pair_seed, 3, 3);
        let q = seeded_qtable(pair_seed ^ 0xfeed, 3, 3);
        for s in 0..3 {
            let baseline = pi.expected_value(s, &q);
            let mut total = 0.0;
            let mut total_sq = 0.0;
            for seed in 0..n_seeds {
                let out = bon_sampled_op(&pi, &q, 3, seed).unwrap();
                let v = out.expected_value(s, &q);
                total += v;
                total_sq += v * v;
            }
            let mean = total / n_seeds as f64;
            let var = (total_sq / n_seeds as f64 - mean * mean).max(0.0);
            let se = (var / n_seeds as f64).sqrt();
            assert!(
                mean >= baseline - 3.0 * se,
                "pair {pair_seed}, state {s}: mean {mean} vs baseline {baseline} (se {se:.2e})"
            );
        }
    }
}
