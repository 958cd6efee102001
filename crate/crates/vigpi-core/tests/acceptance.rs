//! The acceptance battery: one test per criterion, each printing a pass line
//! with the measured margins. Run with `cargo test --test acceptance`
//! (add `-- --nocapture` to see the lines).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vigpi_core::dp::{
    bellman_backup, greedification_gap, optimal_values, optimal_values_discounted,
};
use vigpi_core::engine::{gpi_run, vigpi_run, EngineConfig, EvalMode};
use vigpi_core::expectile::{expectile_backup, expectile_scalar};
use vigpi_core::instances::{
    build_counterexample, build_grid_world_default, random_layered_mdp, Counterexample,
};
use vigpi_core::operators::{
    apply_policy_q_operator, bon_exact_op, bon_sampled_op, greedy_op, min_det_op, OperatorConfig,
};
use vigpi_core::verify::certification_matrix;
use vigpi_core::{QTable, TabularPolicy};

fn report(criterion: &str, detail: String) {
    println!("PASS  {criterion}: {detail}");
}

#[test]
fn criterion_01_greedy_policy_iteration_matches_the_oracle() {
    let start = Instant::now();
    let mut max_error = 0.0_f64;
    let mut max_iters = 0;
    for seed in 0..100u64 {
        let mdp = random_layered_mdp(4, 5, 3, seed).unwrap();
        let (q_star, _) = optimal_values(&mdp).unwrap();
        let trace = gpi_run(&mdp, &EngineConfig::greedy_default(), Some(&q_star)).unwrap();
        let error = trace.final_record().q_error.unwrap();
        assert!(trace.converged, "seed {seed} did not converge");
        assert!(error <= 1e-9, "seed {seed}: q error {error}");
        assert!(
            trace.iterations() <= mdp.horizon().unwrap(),
            "seed {seed}: {} iterations exceed the horizon",
            trace.iterations()
        );
        max_error = max_error.max(error);
        max_iters = max_iters.max(trace.iterations());
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "oracle equivalence took {elapsed:?}"
    );
    report(
        "criterion 1 (oracle equivalence)",
        format!(
            "100 instances, worst q error {max_error:.2e}, worst iterations {max_iters}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_02_improvement_alone_does_not_converge() {
    let Counterexample::TwoAction { mdp, .. } = build_counterexample("two_action").unwrap()
    else {
        unreachable!()
    };
    let config = EngineConfig {
        max_iters: 10_000,
        ..EngineConfig::greedy_default().with_improvement(OperatorConfig::inadequate(0.9))
    };
    let trace = gpi_run(&mdp, &config, None).unwrap();
    let e = 1.0_f64.exp();
    let p2 = trace.final_policy.prob(0, 1);
    let gap = trace.final_record().sup_gap;
    assert!(!trace.converged);
    assert!((p2 - e / (1.0 + e)).abs() <= 1e-6, "pi(a2|s0) = {p2}");
    assert!((gap - 1.0 / (1.0 + e)).abs() <= 1e-6, "gap = {gap}");
    report(
        "criterion 2 (improvement is not sufficient)",
        format!(
            "stalled at pi(a2|s0) = {p2:.9}, gap = {gap:.9}, converged = {}",
            trace.converged
        ),
    );
}

#[test]
fn criterion_03_softmax_accumulation_gap_is_logistic() {
    let q = QTable::from_rows(vec![vec![1.0, 2.0]]).unwrap();
    let cfg = OperatorConfig::gmz(1.0);
    let mut pi = TabularPolicy::uniform(1, 2);
    let mut worst = 0.0_f64;
    let mut gap_at_15 = f64::NAN;
    for n in 0..=30 {
        let gap = greedification_gap(&pi, &q).unwrap().max();
        let expected = 1.0 / (1.0 + (n as f64).exp());
        worst = worst.max((gap - expected).abs());
        assert!(
            (gap - expected).abs() <= 1e-10,
            "n = {n}: gap {gap} vs {expected}"
        );
        if n == 15 {
            gap_at_15 = gap;
            assert!(gap <= 1e-6, "gap at n = 15 is {gap}");
        }
        pi = apply_policy_q_operator(&cfg, &pi, &q, n).unwrap();
    }
    report(
        "criterion 3 (softmax-accumulation limit sufficiency)",
        format!("gap tracks 1/(1+e^n) within {worst:.2e}; gap at n = 15 is {gap_at_15:.2e}"),
    );
}

#[test]
fn criterion_04_decaying_scale_pins_the_gap() {
    let q = QTable::from_rows(vec![vec![1.0, 2.0]]).unwrap();
    let cfg = OperatorConfig::gmz_schedule(1.0, 2.0);
    let mut pi = TabularPolicy::uniform(1, 2);
    let mut min_gap = f64::INFINITY;
    let mut gap = greedification_gap(&pi, &q).unwrap().max();
    min_gap = min_gap.min(gap);
    for n in 0..300 {
        pi = apply_policy_q_operator(&cfg, &pi, &q, n).unwrap();
        gap = greedification_gap(&pi, &q).unwrap().max();
        min_gap = min_gap.min(gap);
    }
    let limit = 1.0 / (1.0 + 2.0_f64.exp());
    assert!((gap - limit).abs() <= 1e-6, "final gap {gap} vs limit {limit}");
    assert!(min_gap >= 0.119, "gap fell to {min_gap}");
    report(
        "criterion 4 (decaying-scale failure)",
        format!("gap settled at {gap:.9} (limit {limit:.9}), never below {min_gap:.6}"),
    );
}

#[test]
fn criterion_05_least_greedy_operator_oscillates() {
    let Counterexample::Oscillating { sequence, pi0 } =
        build_counterexample("oscillating").unwrap()
    else {
        unreachable!()
    };
    let mut pi = pi0;
    let mut visited = std::collections::BTreeSet::new();
    for n in 0..1000 {
        pi = min_det_op(&pi, &sequence.at(n)).unwrap();
        let action = pi.action(0).unwrap();
        assert!(action != 2, "limit-optimal action selected at step {n}");
        visited.insert(action);
    }
    report(
        "criterion 5 (oscillation)",
        format!("1000 steps visited only actions {visited:?}"),
    );
}

#[test]
fn criterion_06_any_non_detriment_evaluated_policy_reaches_the_oracle() {
    let variants = [
        ("identity", OperatorConfig::identity()),
        ("greedy", OperatorConfig::greedy()),
        ("bon_exact(4)", OperatorConfig::bon_exact(4)),
        ("expectile(0.9)", OperatorConfig::expectile(0.9)),
    ];
    let mut worst = 0.0_f64;
    for seed in 0..100u64 {
        let mdp = random_layered_mdp(4, 5, 3, seed).unwrap();
        let (q_star, _) = optimal_values(&mdp).unwrap();
        for (label, op) in &variants {
            let config = EngineConfig::greedy_default().with_value_improvement(op.clone());
            let trace = vigpi_run(&mdp, &config, Some(&q_star)).unwrap();
            let error = trace.final_record().q_error.unwrap();
            assert!(
                trace.converged && error <= 1e-9,
                "seed {seed}, I2 = {label}: q error {error}, converged {}",
                trace.converged
            );
            worst = worst.max(error);
        }
    }
    report(
        "criterion 6 (value improvement converges for non-detriment operators)",
        format!("100 instances x 4 evaluated-policy operators, worst q error {worst:.2e}"),
    );
}

#[test]
fn criterion_07_grid_world_value_improvement_ordering() {
    let grid = build_grid_world_default();
    let (q_star, v_star) = optimal_values_discounted(&grid, 1e-10).unwrap();
    let threshold = 0.95 * v_star.get(0);

    let mut lines = Vec::new();
    for beta in [0.03_f64, 0.1, 0.3, 1.0] {
        let pi_cfg = EngineConfig {
            eval_mode: EvalMode::Iterative { tol: 0.0005 },
            max_iters: 60_000,
            ..EngineConfig::greedy_default().with_improvement(OperatorConfig::gmz(beta))
        };
        let vi_cfg = EngineConfig {
            value_improvement_op: Some(OperatorConfig::greedy()),
            ..pi_cfg.clone()
        };
        let pi_trace = gpi_run(&grid, &pi_cfg, Some(&q_star)).unwrap();
        let vi_trace = vigpi_run(&grid, &vi_cfg, Some(&q_star)).unwrap();
        let pi_at = pi_trace
            .first_iteration_estimating(threshold)
            .expect("plain run reaches the threshold");
        let vi_at = vi_trace
            .first_iteration_estimating(threshold)
            .expect("value-improved run reaches the threshold");
        assert!(
            vi_at <= pi_at,
            "beta = {beta}: value improvement took {vi_at} > {pi_at} iterations"
        );
        if beta <= 0.1 {
            assert!(
                vi_at < pi_at,
                "beta = {beta}: expected a strict speedup, got {vi_at} vs {pi_at}"
            );
        }
        lines.push(format!("beta {beta}: {vi_at} <= {pi_at}"));
    }

    // beta = 0: the critic still converges while the acting policy never
    // moves off its initial distribution.
    let zero_cfg = EngineConfig {
        eval_mode: EvalMode::Iterative { tol: 0.0005 },
        max_iters: 4000,
        value_improvement_op: Some(OperatorConfig::greedy()),
        ..EngineConfig::greedy_default().with_improvement(OperatorConfig::gmz(0.0))
    };
    let trace = vigpi_run(&grid, &zero_cfg, Some(&q_star)).unwrap();
    let q_error = trace.final_record().q_error.unwrap();
    assert!(q_error <= 1e-6, "beta = 0: q error {q_error}");
    let uniform = TabularPolicy::uniform(grid.num_states(), grid.num_actions());
    assert_eq!(trace.final_policy, uniform, "acting policy moved at beta = 0");
    let initial_gap = greedification_gap(&uniform, &trace.final_q).unwrap().max();
    let final_gap = trace.final_record().sup_gap;
    assert!(
        (final_gap - initial_gap).abs() <= 1e-9,
        "acting gap moved: {final_gap} vs {initial_gap}"
    );
    report(
        "criterion 7 (grid-world value-improvement ordering)",
        format!(
            "iterations to 0.95 V*: {}; beta 0: q error {q_error:.2e} with the acting gap pinned at {final_gap:.6}",
            lines.join(", ")
        ),
    );
}

#[test]
fn criterion_08_expectile_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let taus: Vec<f64> = (1..=20).map(|i| i as f64 / 21.0).collect();
    let mut worst_mean = 0.0_f64;
    let mut worst_max = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let draws: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..=1.0)).collect();
        let total: f64 = draws.iter().sum();
        let probs: Vec<f64> = draws.iter().map(|d| d / total).collect();

        let mean: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        let e_mean = expectile_scalar(&values, &probs, 0.5).unwrap();
        assert!((e_mean - mean).abs() <= 1e-10, "mean {mean} vs {e_mean}");
        worst_mean = worst_mean.max((e_mean - mean).abs());

        let mut previous = f64::NEG_INFINITY;
        for tau in &taus {
            let e = expectile_scalar(&values, &probs, *tau).unwrap();
            assert!(e >= previous - 1e-12, "expectile not monotone at tau {tau}");
            previous = e;
        }

        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e_top = expectile_scalar(&values, &probs, 1.0 - 1e-6).unwrap();
        assert!((e_top - max).abs() <= 1e-3, "top expectile {e_top} vs max {max}");
        worst_max = worst_max.max((e_top - max).abs());
    }

    let mut worst_backup = 0.0_f64;
    for seed in 0..20u64 {
        let mdp = random_layered_mdp(3, 4, 3, 4000 + seed).unwrap();
        let mut pair_rng = ChaCha8Rng::seed_from_u64(seed);
        let q = QTable::from_rows(
            (0..mdp.num_states())
                .map(|_| {
                    (0..mdp.num_actions())
                        .map(|_| pair_rng.random_range(-1.0..=1.0))
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let pi = {
            let rows: Vec<Vec<f64>> = (0..mdp.num_states())
                .map(|_| {
                    let draws: Vec<f64> = (0..mdp.num_actions())
                        .map(|_| pair_rng.random_range(0.05..=1.0))
                        .collect();
                    let total: f64 = draws.iter().sum();
                    draws.iter().map(|d| d / total).collect()
                })
                .collect();
            TabularPolicy::from_rows(rows).unwrap()
        };
        let via_expectile = expectile_backup(&q, &pi, &mdp, 0.5).unwrap();
        let via_bellman = bellman_backup(&q, &pi, &mdp, 1).unwrap();
        worst_backup = worst_backup.max(via_expectile.sup_distance(&via_bellman));
    }
    assert!(worst_backup <= 1e-10);
    report(
        "criterion 8 (expectile statistics)",
        format!(
            "1000 distributions: mean error {worst_mean:.2e}, top-expectile error {worst_max:.2e}; backup-vs-Bellman at tau 0.5: {worst_backup:.2e}"
        ),
    );
}

#[test]
fn criterion_09_best_of_n_distribution_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(910);
    let n_samples = 4;
    let mc_runs = 100_000u64;
    let mut worst_sigma = 0.0_f64;
    for pair in 0..50 {
        let q = QTable::from_rows(vec![(0..3)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect()])
        .unwrap();
        let draws: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..=1.0)).collect();
        let total: f64 = draws.iter().sum();
        let pi =
            TabularPolicy::from_rows(vec![draws.iter().map(|d| d / total).collect()]).unwrap();

        let exact = bon_exact_op(&pi, &q, n_samples).unwrap();
        let mut counts = [0u64; 3];
        let base_seed = rng.random::<u64>();
        for i in 0..mc_runs {
            let out = bon_sampled_op(&pi, &q, n_samples, base_seed.wrapping_add(i)).unwrap();
            counts[out.action(0).unwrap()] += 1;
        }
        for (a, count) in counts.iter().enumerate() {
            let p = exact.prob(0, a);
            let freq = *count as f64 / mc_runs as f64;
            let se = (p * (1.0 - p) / mc_runs as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se + f64::EPSILON,
                "pair {pair}, action {a}: freq {freq} vs exact {p} (se {se:.2e})"
            );
            if se > 0.0 {
                worst_sigma = worst_sigma.max((freq - p).abs() / se);
            }
        }
    }

    // N = 1 returns the sampling policy bit-exactly.
    let q = QTable::from_rows(vec![vec![0.3, -0.2, 0.9]]).unwrap();
    let pi = TabularPolicy::from_rows(vec![vec![0.125, 0.5, 0.375]]).unwrap();
    assert_eq!(bon_exact_op(&pi, &q, 1).unwrap(), pi);

    report(
        "criterion 9 (Best-of-N exactness)",
        format!(
            "50 pairs x {mc_runs} seeds at N = {n_samples}: worst deviation {worst_sigma:.2} standard errors; N = 1 is the identity"
        ),
    );
}

#[test]
fn criterion_10_lower_bounded_operators_converge_in_finite_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let states: usize = 4;
    let actions: usize = 5;
    let q = QTable::from_rows(
        (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect()
            })
            .collect(),
    )
    .unwrap();

    // Every deterministic start: min_det reaches the argmax within |A|-1
    // applications.
    let step_bound = actions - 1;
    let mut all_codes = vec![0usize; states];
    let total = actions.pow(states as u32);
    for code in 0..total {
        let mut c = code;
        for slot in all_codes.iter_mut() {
            *slot = c % actions;
            c /= actions;
        }
        let mut pi = TabularPolicy::deterministic(actions, &all_codes);
        let mut steps = 0;
        while greedification_gap(&pi, &q).unwrap().max() > 0.0 {
            pi = min_det_op(&pi, &q).unwrap();
            steps += 1;
            assert!(
                steps <= step_bound,
                "policy {code} took more than |A|-1 steps"
            );
        }
    }

    // The greedy operator needs exactly one application from anywhere.
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> = (0..states)
            .map(|_| {
                let draws: Vec<f64> = (0..actions).map(|_| rng.random::<f64>() + 1e-9).collect();
                let total: f64 = draws.iter().sum();
                draws.iter().map(|d| d / total).collect()
            })
            .collect();
        let pi = TabularPolicy::from_rows(rows).unwrap();
        let improved = greedy_op(&pi, &q).unwrap();
        assert!(greedification_gap(&improved, &q).unwrap().max() <= 1e-12);
    }

    report(
        "criterion 10 (finite-step convergence)",
        format!(
            "{total} deterministic starts reached the argmax within {} steps; greedy in one",
            actions - 1
        ),
    );
}

#[test]
fn criterion_11_certification_matrix_matches_the_analysis() {
    let matrix = certification_matrix();
    for assertion in &matrix.assertions {
        assert!(assertion.passed, "{}: {}", assertion.name, assertion.detail);
    }
    report(
        "criterion 11 (certification matrix)",
        format!("{} operator/definition rows match the analysis", matrix.assertions.len()),
    );
}
