//! Expectile statistics and the implicit-greedification backup.
//!
//! The scalar expectile `e_tau` of a discrete distribution is the unique root
//! of the asymmetric balance equation
//! `tau * sum_i p_i max(v_i - e, 0) = (1 - tau) * sum_i p_i max(e - v_i, 0)`,
//! which is the minimizer of the expected asymmetric squared loss. It equals
//! the mean at `tau = 0.5` and approaches the maximum as `tau -> 1`, so
//! backing up expectiles of the successor rows evaluates a policy greedier
//! than the one supplied, without constructing that policy explicitly.

use crate::error::OperatorError;
use crate::mdp::FiniteMdp;
use crate::policy::TabularPolicy;
use crate::value::QTable;

/// Absolute bisection tolerance for the scalar expectile.
pub const EXPECTILE_TOL: f64 = 1e-12;

/// The `tau`-expectile of the distribution placing `probs[i]` on
/// `values[i]`, found by bisection on `[min v, max v]`.
pub fn expectile_scalar(values: &[f64], probs: &[f64], tau: f64) -> Result<f64, OperatorError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(OperatorError::InvalidParameter(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    if values.len() != probs.len() {
        return Err(OperatorError::ShapeMismatch(format!(
            "{} values but {} probabilities",
            values.len(),
            probs.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut mass = 0.0;
    for (v, p) in values.iter().zip(probs) {
        if *p < 0.0 {
            return Err(OperatorError::InvalidParameter(format!(
                "negative probability {p}"
            )));
        }
        if *p > 0.0 {
            lo = lo.min(*v);
            hi = hi.max(*v);
            mass += *p;
        }
    }
    if mass <= 0.0 {
        return Err(OperatorError::EmptySupport);
    }
    if lo == hi {
        return Ok(lo);
    }

    // balance(e) is strictly decreasing with a root in [lo, hi].
    let balance = |e: f64| -> f64 {
        let mut above = 0.0;
        let mut below = 0.0;
        for (v, p) in values.iter().zip(probs) {
            if *p <= 0.0 {
                continue;
            }
            if *v > e {
                above += p * (v - e);
            } else {
                below += p * (e - v);
            }
        }
        tau * above - (1.0 - tau) * below
    };
    for _ in 0..200 {
        if hi - lo <= EXPECTILE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if balance(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One expectile backup:
/// `q'(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) e_tau(q(s',.), pi(.|s'))`,
/// the tabular fixed-point analog of regressing the critic with the
/// asymmetric loss on targets drawn under `pi`. Rejects `tau < 0.5`
/// (anti-greedification) and treats terminal continuation as zero.
pub fn expectile_backup(
    q: &QTable,
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    tau: f64,
) -> Result<QTable, OperatorError> {
    check_backup_inputs(q, policy, mdp, tau)?;
    let cont = expectile_continuations(q, policy, mdp, tau)?;
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

/// Exact fixed point of the expectile backup on a layered DAG, by a single
/// backward sweep.
pub fn expectile_backward_induction(
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    tau: f64,
) -> Result<QTable, OperatorError> {
    let dummy = QTable::zeros(mdp.num_states(), mdp.num_actions());
    check_backup_inputs(&dummy, policy, mdp, tau)?;
    let horizon = match (mdp.is_layered(), mdp.horizon()) {
        (true, Some(h)) => h,
        _ => return Err(OperatorError::RequiresLayeredMdp),
    };
    let mut q = dummy;
    let mut cont = vec![0.0; mdp.num_states()];
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
                    .zip(&cont)
                    .map(|(p, v)| p * v)
                    .sum();
                rows[s][a] = mdp.reward(s, a) + mdp.discount() * future;
            }
        }
        q = QTable::from_rows_unchecked(rows);
        for s in mdp.states_in_layer(t) {
            if !mdp.is_terminal(s) {
                cont[s] = expectile_scalar(q.row(s), policy.row(s), tau)?;
            }
        }
    }
    Ok(q)
}

fn check_backup_inputs(
    q: &QTable,
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    tau: f64,
) -> Result<(), OperatorError> {
    if tau < 0.5 {
        return Err(OperatorError::InvalidParameter(format!(
            "tau must lie in [0.5, 1) for value improvement, got {tau}"
        )));
    }
    if !(tau < 1.0) {
        return Err(OperatorError::InvalidParameter(format!(
            "tau must lie in [0.5, 1), got {tau}"
        )));
    }
    if q.num_states() != mdp.num_states()
        || q.num_actions() != mdp.num_actions()
        || policy.num_states() != mdp.num_states()
        || policy.num_actions() != mdp.num_actions()
    {
        return Err(OperatorError::ShapeMismatch(
            "q, policy, and MDP shapes disagree".into(),
        ));
    }
    Ok(())
}

fn expectile_continuations(
    q: &QTable,
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    tau: f64,
) -> Result<Vec<f64>, OperatorError> {
    (0..mdp.num_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                Ok(0.0)
            } else {
                expectile_scalar(q.row(s), policy.row(s), tau)
            }
        })
        .collect()
}
