//! Bellman machinery: backups, exact evaluation, and the optimal-value oracle.
//!
//! Every routine treats terminal states as having value zero: their rows come
//! out as the (zero) reward and their contribution as successors is dropped.

use crate::error::DpError;
use crate::mdp::{time_augment, FiniteMdp};
use crate::policy::TabularPolicy;
use crate::value::{QTable, ValueVector};

/// Iteration cap for the fixed-point loops.
pub const ITERATION_CAP: usize = 1_000_000;

fn check_q_shape(q: &QTable, mdp: &FiniteMdp) -> Result<(), DpError> {
    if q.num_states() != mdp.num_states() || q.num_actions() != mdp.num_actions() {
        return Err(DpError::ShapeMismatch(format!(
            "q is {}x{}, MDP is {}x{}",
            q.num_states(),
            q.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn check_policy_shape(policy: &TabularPolicy, mdp: &FiniteMdp) -> Result<(), DpError> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(DpError::ShapeMismatch(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// Continuation value of a successor state: pi-weighted row sum, zero at
/// terminal states.
fn continuation(q: &QTable, policy: &TabularPolicy, mdp: &FiniteMdp, state: usize) -> f64 {
    if mdp.is_terminal(state) {
        0.0
    } else {
        policy.expected_value(state, q)
    }
}

fn one_backup(q: &QTable, policy: &TabularPolicy, mdp: &FiniteMdp) -> QTable {
    let cont: Vec<f64> = (0..mdp.num_states())
        .map(|s| continuation(q, policy, mdp, s))
        .collect();
    let rows = (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| {
                    if mdp.is_terminal(s) {
                        mdp.reward(s, a)
                    } else {
                        let future: f64 = mdp
                            .transition(s, a)
                            .iter()
                            .zip(&cont)
                            .map(|(p, v)| p * v)
                            .sum();
                        mdp.reward(s, a) + mdp.discount() * future
                    }
                })
                .collect()
        })
        .collect();
    QTable::from_rows_unchecked(rows)
}

/// Applies the policy backup `k` times: `(T^pi)^k q`.
pub fn bellman_backup(
    q: &QTable,
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    k: usize,
) -> Result<QTable, DpError> {
    check_q_shape(q, mdp)?;
    check_policy_shape(policy, mdp)?;
    if k == 0 {
        return Err(DpError::ShapeMismatch("k must be >= 1".into()));
    }
    let mut out = one_backup(q, policy, mdp);
    for _ in 1..k {
        out = one_backup(&out, policy, mdp);
    }
    Ok(out)
}

/// One application of the Bellman optimality operator:
/// `q'(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) max_a' q(s',a')`.
pub fn bellman_optimality_backup(q: &QTable, mdp: &FiniteMdp) -> Result<QTable, DpError> {
    check_q_shape(q, mdp)?;
    let cont: Vec<f64> = (0..mdp.num_states())
        .map(|s| if mdp.is_terminal(s) { 0.0 } else { q.row_max(s) })
        .collect();
    let rows = (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| {
                    if mdp.is_terminal(s) {
                        mdp.reward(s, a)
                    } else {
                        let future: f64 = mdp
                            .transition(s, a)
                            .iter()
                            .zip(&cont)
                            .map(|(p, v)| p * v)
                            .sum();
                        mdp.reward(s, a) + mdp.discount() * future
                    }
                })
                .collect()
        })
        .collect();
    Ok(QTable::from_rows_unchecked(rows))
}

/// Exact `Q^pi` on a layered DAG via one backward sweep from layer `H` to 0.
pub fn backward_induction_evaluation(
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
) -> Result<QTable, DpError> {
    check_policy_shape(policy, mdp)?;
    let horizon = match (mdp.is_layered(), mdp.horizon()) {
        (true, Some(h)) => h,
        _ => return Err(DpError::NotLayered),
    };
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut values = vec![0.0; mdp.num_states()];
    for t in (0..horizon).rev() {
        let mut rows = q.rows().to_vec();
        for s in mdp.states_in_layer(t) {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let future: f64 = mdp
                    .transition(s, a)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum();
                rows[s][a] = mdp.reward(s, a) + mdp.discount() * future;
            }
        }
        q = QTable::from_rows_unchecked(rows);
        for s in mdp.states_in_layer(t) {
            if !mdp.is_terminal(s) {
                values[s] = policy.expected_value(s, &q);
            }
        }
    }
    Ok(q)
}

/// State values of a policy: exact on layered MDPs (backward sweep) and on
/// discounted stationary MDPs (direct linear solve of `(I - gamma P^pi) v = r^pi`).
pub fn exact_state_values(policy: &TabularPolicy, mdp: &FiniteMdp) -> Result<ValueVector, DpError> {
    check_policy_shape(policy, mdp)?;
    if mdp.is_layered() {
        let q = backward_induction_evaluation(policy, mdp)?;
        let values = (0..mdp.num_states())
            .map(|s| if mdp.is_terminal(s) { 0.0 } else { policy.expected_value(s, &q) })
            .collect();
        return Ok(ValueVector::from_vec(values));
    }
    if mdp.discount() >= 1.0 {
        return Err(DpError::NonContractive(mdp.discount()));
    }

    let n = mdp.num_states();
    // Dense system: row s is v(s) - gamma * sum_s' P^pi(s'|s) v(s') = r^pi(s),
    // with v(s) = 0 pinned for terminal states.
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s][s] = 1.0;
        if mdp.is_terminal(s) {
            continue;
        }
        for act in 0..mdp.num_actions() {
            let p_act = policy.prob(s, act);
            if p_act == 0.0 {
                continue;
            }
            b[s] += p_act * mdp.reward(s, act);
            for (sp, p) in mdp.transition(s, act).iter().enumerate() {
                if *p > 0.0 && !mdp.is_terminal(sp) {
                    a[s][sp] -= mdp.discount() * p_act * p;
                }
            }
        }
    }
    let v = solve_dense(&mut a, &mut b)
        .ok_or_else(|| DpError::ShapeMismatch("singular policy-evaluation system".into()))?;
    Ok(ValueVector::from_vec(v))
}

/// Gaussian elimination with partial pivoting; `a` and `b` are consumed.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = b[row];
        for col in row + 1..n {
            sum -= a[row][col] * x[col];
        }
        x[row] = sum / a[row][row];
    }
    Some(x)
}

/// Iterates `V_j = T^pi V_{j-1}` from `V_0 = 0` until the sup-norm change
/// drops below `tol`.
pub fn iterative_policy_evaluation(
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    tol: f64,
) -> Result<ValueVector, DpError> {
    check_policy_shape(policy, mdp)?;
    if tol <= 0.0 {
        return Err(DpError::InvalidTolerance(tol));
    }
    if !mdp.is_layered() && mdp.discount() >= 1.0 {
        return Err(DpError::NonContractive(mdp.discount()));
    }
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..ITERATION_CAP {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let p_act = policy.prob(s, a);
                if p_act == 0.0 {
                    continue;
                }
                let future: f64 = mdp
                    .transition(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, val)| p * val)
                    .sum();
                next[s] += p_act * (mdp.reward(s, a) + mdp.discount() * future);
            }
        }
        let change = v
            .iter()
            .zip(&next)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < tol {
            return Ok(ValueVector::from_vec(v));
        }
    }
    Err(DpError::IterationCapExceeded(ITERATION_CAP))
}

/// Exact `q*` and `V*` on a layered DAG via backward induction with max.
/// Stationary MDPs must be time-augmented first.
pub fn optimal_values(mdp: &FiniteMdp) -> Result<(QTable, ValueVector), DpError> {
    let horizon = match (mdp.is_layered(), mdp.horizon()) {
        (true, Some(h)) => h,
        _ => return Err(DpError::MissingHorizon),
    };
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut values = vec![0.0; mdp.num_states()];
    for t in (0..horizon).rev() {
        let mut rows = q.rows().to_vec();
        for s in mdp.states_in_layer(t) {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let future: f64 = mdp
                    .transition(s, a)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum();
                rows[s][a] = mdp.reward(s, a) + mdp.discount() * future;
            }
        }
        q = QTable::from_rows_unchecked(rows);
        for s in mdp.states_in_layer(t) {
            if !mdp.is_terminal(s) {
                values[s] = q.row_max(s);
            }
        }
    }
    Ok((q, ValueVector::from_vec(values)))
}

/// `q*` and `V*` of a discounted stationary MDP by value iteration, run until
/// the fixed-point error is below `tol`.
pub fn optimal_values_discounted(
    mdp: &FiniteMdp,
    tol: f64,
) -> Result<(QTable, ValueVector), DpError> {
    if mdp.is_layered() {
        // Exact backward induction is available and cheaper.
        return optimal_values(mdp);
    }
    if mdp.discount() >= 1.0 {
        return Err(DpError::NonContractive(mdp.discount()));
    }
    if tol <= 0.0 {
        return Err(DpError::InvalidTolerance(tol));
    }
    let gamma = mdp.discount();
    // Residual threshold from the contraction bound ||q - q*|| <= gamma/(1-gamma) * resid.
    let resid_tol = tol * (1.0 - gamma) / gamma;
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    for _ in 0..ITERATION_CAP {
        let next = bellman_optimality_backup(&q, mdp)?;
        let change = q.sup_distance(&next);
        q = next;
        if change < resid_tol {
            let values = (0..mdp.num_states())
                .map(|s| if mdp.is_terminal(s) { 0.0 } else { q.row_max(s) })
                .collect();
            return Ok((q, ValueVector::from_vec(values)));
        }
    }
    Err(DpError::IterationCapExceeded(ITERATION_CAP))
}

/// Per-state greedification gap: `max_a q(s,a) - sum_a pi(a|s) q(s,a)`.
pub fn greedification_gap(policy: &TabularPolicy, q: &QTable) -> Result<ValueVector, DpError> {
    if policy.num_states() != q.num_states() || policy.num_actions() != q.num_actions() {
        return Err(DpError::ShapeMismatch(format!(
            "policy is {}x{}, q is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            q.num_states(),
            q.num_actions()
        )));
    }
    let gaps = (0..q.num_states())
        .map(|s| q.row_max(s) - policy.expected_value(s, q))
        .collect();
    Ok(ValueVector::from_vec(gaps))
}

/// Convenience wrapper: optimal values of a stationary MDP after
/// time-augmenting with `horizon`.
pub fn optimal_values_augmented(
    mdp: &FiniteMdp,
    horizon: usize,
) -> Result<(FiniteMdp, QTable, ValueVector), DpError> {
    let dag = time_augment(mdp, horizon).map_err(|e| match e {
        crate::error::MdpError::InvalidHorizon(_) => DpError::MissingHorizon,
        _ => DpError::NotLayered,
    })?;
    let (q, v) = optimal_values(&dag)?;
    Ok((dag, q, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_counterexample, random_layered_mdp, Counterexample};

    fn two_action() -> (FiniteMdp, TabularPolicy) {
        match build_counterexample("two_action").unwrap() {
            Counterexample::TwoAction { mdp, pi0 } => (mdp, pi0),
            _ => unreachable!(),
        }
    }

    fn branching() -> (FiniteMdp, TabularPolicy) {
        match build_counterexample("branching").unwrap() {
            Counterexample::Branching { mdp, pi0 } => (mdp, pi0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn backup_on_two_action_mdp() {
        let (mdp, pi0) = two_action();
        let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let q1 = bellman_backup(&q0, &pi0, &mdp, 1).unwrap();
        assert_eq!(q1.get(0, 0), 1.0);
        assert_eq!(q1.get(0, 1), 2.0);
        // Successors are terminal, so a second application changes nothing.
        let q2 = bellman_backup(&q0, &pi0, &mdp, 2).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn optimality_backup_on_two_action_mdp() {
        let (mdp, _) = two_action();
        let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let q1 = bellman_optimality_backup(&q0, &mdp).unwrap();
        assert_eq!(q1.get(0, 0), 1.0);
        assert_eq!(q1.get(0, 1), 2.0);
    }

    #[test]
    fn optimality_backup_fixes_q_star() {
        let mdp = random_layered_mdp(3, 4, 3, 11).unwrap();
        let (q_star, _) = optimal_values(&mdp).unwrap();
        let backed = bellman_optimality_backup(&q_star, &mdp).unwrap();
        assert!(q_star.sup_distance(&backed) <= 1e-12);
    }

    #[test]
    fn backward_induction_matches_known_values() {
        let (mdp, pi0) = branching();
        let q = backward_induction_evaluation(&pi0, &mdp).unwrap();
        // Q^{pi0}(s1, .) = (-1, 0, -2).
        assert_eq!(q.row(0), &[-1.0, 0.0, -2.0]);
        let (_, v_star) = optimal_values(&mdp).unwrap();
        assert_eq!(v_star.get(0), 3.0);
    }

    #[test]
    fn h_fold_backup_equals_backward_induction() {
        let mdp = random_layered_mdp(4, 3, 3, 7).unwrap();
        let pi = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let k = mdp.horizon().unwrap();
        let via_backup = bellman_backup(&q0, &pi, &mdp, k).unwrap();
        let via_sweep = backward_induction_evaluation(&pi, &mdp).unwrap();
        assert!(via_backup.sup_distance(&via_sweep) <= 1e-12);
    }

    #[test]
    fn h_fold_optimality_backup_reaches_q_star() {
        let mdp = random_layered_mdp(4, 3, 3, 19).unwrap();
        let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
        for _ in 0..mdp.horizon().unwrap() {
            q = bellman_optimality_backup(&q, &mdp).unwrap();
        }
        let (q_star, _) = optimal_values(&mdp).unwrap();
        assert!(q.sup_distance(&q_star) <= 1e-12);
    }

    #[test]
    fn iterative_evaluation_matches_backward_induction() {
        // On a DAG the sweeps stabilize at the exact values within H steps.
        let mdp = random_layered_mdp(3, 3, 2, 5).unwrap();
        let pi = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        let v = iterative_policy_evaluation(&pi, &mdp, 1e-10).unwrap();
        let q = backward_induction_evaluation(&pi, &mdp).unwrap();
        for s in 0..mdp.num_states() {
            let exact = if mdp.is_terminal(s) { 0.0 } else { pi.expected_value(s, &q) };
            assert!((v.get(s) - exact).abs() <= 1e-9);
        }
    }

    #[test]
    fn iterative_evaluation_zero_rewards_converges_immediately() {
        let mdp = random_layered_mdp(2, 2, 2, 3).unwrap();
        let zero_rewards = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
        let mdp = FiniteMdp::new(
            (0..mdp.num_states())
                .map(|s| (0..mdp.num_actions()).map(|a| mdp.transition(s, a).to_vec()).collect())
                .collect(),
            zero_rewards,
            mdp.discount(),
            mdp.start_dist().to_vec(),
            mdp.terminal_flags().to_vec(),
            mdp.horizon(),
            mdp.layers().map(|l| l.to_vec()),
        );
        let pi = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        let v = iterative_policy_evaluation(&pi, &mdp, 1e-9).unwrap();
        assert!(v.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn iterative_evaluation_of_the_greedy_grid_policy_is_near_optimal() {
        let grid = crate::instances::build_grid_world_default();
        let (q_star, v_star) = optimal_values_discounted(&grid, 1e-10).unwrap();
        let actions: Vec<usize> = (0..grid.num_states())
            .map(|s| {
                (0..grid.num_actions())
                    .max_by(|&a, &b| q_star.get(s, a).partial_cmp(&q_star.get(s, b)).unwrap())
                    .unwrap()
            })
            .collect();
        let pi = TabularPolicy::deterministic(grid.num_actions(), &actions);
        let v = iterative_policy_evaluation(&pi, &grid, 0.0005).unwrap();
        assert!((v.get(0) - v_star.get(0)).abs() <= 0.05);
    }

    #[test]
    fn iterative_evaluation_rejects_undiscounted_stationary() {
        let grid = crate::instances::build_grid_world(3, 3, 1.0, 0.0, 1.0).unwrap();
        let pi = TabularPolicy::uniform(grid.num_states(), grid.num_actions());
        assert!(matches!(
            iterative_policy_evaluation(&pi, &grid, 1e-6),
            Err(DpError::NonContractive(_))
        ));
    }

    #[test]
    fn optimal_values_requires_horizon_on_stationary() {
        let grid = crate::instances::build_grid_world(3, 3, 1.0, 0.0, 0.9).unwrap();
        assert!(matches!(optimal_values(&grid), Err(DpError::MissingHorizon)));
    }

    #[test]
    fn exact_state_values_agree_between_solver_and_iteration() {
        let grid = crate::instances::build_grid_world(4, 4, 1.0, -0.01, 0.95).unwrap();
        let pi = TabularPolicy::uniform(grid.num_states(), grid.num_actions());
        let solved = exact_state_values(&pi, &grid).unwrap();
        let iterated = iterative_policy_evaluation(&pi, &grid, 1e-12).unwrap();
        assert!(solved.sup_distance(&iterated) <= 1e-9);
    }

    #[test]
    fn gap_is_zero_for_argmax_and_positive_otherwise() {
        let q = QTable::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let greedy = TabularPolicy::deterministic(2, &[1]);
        let gaps = greedification_gap(&greedy, &q).unwrap();
        assert_eq!(gaps.get(0), 0.0);

        let uniform = TabularPolicy::uniform(1, 2);
        let gaps = greedification_gap(&uniform, &q).unwrap();
        assert!((gaps.get(0) - 0.5).abs() <= 1e-15);

        // softmax(1, 2) policy: gap = 1/(1+e).
        let z = 1.0_f64.exp() + 2.0_f64.exp();
        let soft = TabularPolicy::from_rows(vec![vec![1.0_f64.exp() / z, 2.0_f64.exp() / z]])
            .unwrap();
        let gaps = greedification_gap(&soft, &q).unwrap();
        let expected = 1.0 / (1.0 + 1.0_f64.exp());
        assert!((gaps.get(0) - expected).abs() <= 1e-12);
    }

    #[test]
    fn oracle_dominates_enumerated_policies() {
        // Exhaustive deterministic-policy enumeration on a small instance.
        let mdp = random_layered_mdp(3, 2, 3, 23).unwrap();
        let (_, v_star) = optimal_values(&mdp).unwrap();
        let n = mdp.num_states();
        let a = mdp.num_actions();
        let total = a.pow(n as u32);
        for code in 0..total {
            let mut actions = vec![0usize; n];
            let mut c = code;
            for slot in actions.iter_mut() {
                *slot = c % a;
                c /= a;
            }
            let pi = TabularPolicy::deterministic(a, &actions);
            let v = exact_state_values(&pi, &mdp).unwrap();
            for s in 0..n {
                assert!(
                    v.get(s) <= v_star.get(s) + 1e-10,
                    "policy {code} beats the oracle at state {s}"
                );
            }
        }
    }
}
