//! The generalized policy-iteration loop and its value-improved extension.
//!
//! A run alternates evaluation and improvement from `(q0, pi0)`, in that
//! order. Plain runs evaluate the acting policy itself; value-improved runs
//! first improve the evaluated policy with a second operator (or switch to
//! the expectile backup when the second operator is implicit) and still
//! improve the acting policy afterwards. Diagnostics are recorded for the
//! acting policy at every iteration.

use serde::{Deserialize, Serialize};

use crate::dp::{
    backward_induction_evaluation, bellman_backup, bellman_optimality_backup, exact_state_values,
    greedification_gap, ITERATION_CAP,
};
use crate::error::{DpError, EngineError, OperatorError};
use crate::expectile::{expectile_backup, expectile_backward_induction};
use crate::mdp::FiniteMdp;
use crate::operators::{apply_policy_q_operator, random_search_improvement_op, OperatorConfig, OperatorKind};
use crate::policy::TabularPolicy;
use crate::value::QTable;

/// How the evaluation step computes `q` from the evaluated policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    /// `k` applications of the policy backup (the algorithmic default).
    BackupK,
    /// Exact evaluation by a backward sweep; requires a layered MDP.
    ExactBackward,
    /// Repeated backups until the sup-norm change drops below `tol`.
    Iterative { tol: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QInit {
    #[default]
    Zeros,
    Custom(QTable),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiInit {
    #[default]
    Uniform,
    Custom(TabularPolicy),
}

/// Full description of an engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// The acting-policy improvement operator (I1).
    pub improvement_op: OperatorConfig,
    /// The evaluated-policy improvement operator (I2); absent means plain
    /// generalized policy iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_improvement_op: Option<OperatorConfig>,
    /// Bellman steps per evaluation in `backup_k` mode.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_eval_mode")]
    pub eval_mode: EvalMode,
    #[serde(default = "default_eps")]
    pub eps_policy: f64,
    #[serde(default = "default_eps")]
    pub eps_value: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub q_init: QInit,
    #[serde(default)]
    pub pi_init: PiInit,
    /// Record per-iteration snapshots of the evaluated policy.
    #[serde(default)]
    pub record_policies: bool,
}

fn default_k() -> usize {
    1
}

fn default_eval_mode() -> EvalMode {
    EvalMode::BackupK
}

fn default_eps() -> f64 {
    1e-9
}

fn default_max_iters() -> usize {
    100_000
}

impl EngineConfig {
    /// A plain greedy policy-iteration config with the default tolerances.
    pub fn greedy_default() -> Self {
        Self {
            improvement_op: OperatorConfig::greedy(),
            value_improvement_op: None,
            k: 1,
            eval_mode: EvalMode::BackupK,
            eps_policy: 1e-9,
            eps_value: 1e-9,
            max_iters: 100_000,
            q_init: QInit::Zeros,
            pi_init: PiInit::Uniform,
            record_policies: false,
        }
    }

    pub fn with_improvement(mut self, op: OperatorConfig) -> Self {
        self.improvement_op = op;
        self
    }

    pub fn with_value_improvement(mut self, op: OperatorConfig) -> Self {
        self.value_improvement_op = Some(op);
        self
    }

    fn validate(&self, mdp: &FiniteMdp) -> Result<(), EngineError> {
        let invalid = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.k < 1 {
            return invalid("k must be >= 1".into());
        }
        if !(self.eps_policy > 0.0) || !(self.eps_value > 0.0) {
            return invalid("tolerances must be positive".into());
        }
        if let EvalMode::Iterative { tol } = self.eval_mode {
            if !(tol > 0.0) {
                return invalid(format!("iterative tolerance must be positive, got {tol}"));
            }
        }
        if self.eval_mode == EvalMode::ExactBackward && !mdp.is_layered() {
            return invalid("exact_backward evaluation requires a layered MDP".into());
        }
        if !mdp.is_layered() && mdp.discount() >= 1.0 {
            return invalid(
                "stationary runs require discount < 1 for exact diagnostics".into(),
            );
        }
        self.improvement_op
            .validate()
            .map_err(|source| EngineError::Operator { iteration: 0, source })?;
        if self.improvement_op.is_implicit() {
            return invalid("the acting-policy operator cannot be implicit".into());
        }
        if let Some(op) = &self.value_improvement_op {
            op.validate()
                .map_err(|source| EngineError::Operator { iteration: 0, source })?;
        }
        if let QInit::Custom(q) = &self.q_init {
            if q.num_states() != mdp.num_states() || q.num_actions() != mdp.num_actions() {
                return invalid("custom q_init shape does not match the MDP".into());
            }
        }
        if let PiInit::Custom(pi) = &self.pi_init {
            if pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions() {
                return invalid("custom pi_init shape does not match the MDP".into());
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Largest per-state greedification gap of the acting policy.
    pub sup_gap: f64,
    /// `||q - T* q||_inf`.
    pub bellman_residual: f64,
    /// `||q - q*||_inf` when an oracle was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_error: Option<f64>,
    /// Start-distribution value of the acting policy under exact evaluation.
    pub start_value: f64,
    /// Start-distribution value of the q table under the policy evaluated
    /// this iteration (the critic's own estimate, the quantity the iteration
    /// plots track).
    #[serde(default)]
    pub eval_start_value: f64,
    /// The policy evaluated at this iteration, when snapshots are enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_snapshot: Option<TabularPolicy>,
}

/// The full history of one engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub final_policy: TabularPolicy,
    pub final_q: QTable,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("a trace has at least one record")
    }

    /// First iteration whose acting-policy start value reaches `threshold`.
    pub fn first_iteration_reaching(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.start_value >= threshold)
            .map(|r| r.iter)
    }

    /// First iteration whose critic start value reaches `threshold`.
    pub fn first_iteration_estimating(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.eval_start_value >= threshold)
            .map(|r| r.iter)
    }
}

/// Outcome of [`stopping_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingCheck {
    pub stop: bool,
    pub sup_gap: f64,
    pub bellman_residual: f64,
}

/// The loop condition: stop when the acting policy's largest greedification
/// gap is within `eps_policy` and the Bellman residual of `q` is within
/// `eps_value`.
pub fn stopping_check(
    policy: &TabularPolicy,
    q: &QTable,
    mdp: &FiniteMdp,
    eps_policy: f64,
    eps_value: f64,
) -> Result<StoppingCheck, DpError> {
    let sup_gap = greedification_gap(policy, q)?.max();
    let optimal = bellman_optimality_backup(q, mdp)?;
    let bellman_residual = q.sup_distance(&optimal);
    Ok(StoppingCheck {
        stop: sup_gap <= eps_policy && bellman_residual <= eps_value,
        sup_gap,
        bellman_residual,
    })
}

/// Generalized policy iteration: evaluate the acting policy, then improve it.
pub fn gpi_run(
    mdp: &FiniteMdp,
    config: &EngineConfig,
    oracle: Option<&QTable>,
) -> Result<RunTrace, EngineError> {
    if config.value_improvement_op.is_some() {
        return Err(EngineError::InvalidConfig(
            "gpi_run takes no value-improvement operator; use vigpi_run".into(),
        ));
    }
    run_loop(mdp, config, oracle)
}

/// Value-improved generalized policy iteration: evaluate an independently
/// improved policy, then improve the acting policy.
pub fn vigpi_run(
    mdp: &FiniteMdp,
    config: &EngineConfig,
    oracle: Option<&QTable>,
) -> Result<RunTrace, EngineError> {
    if config.value_improvement_op.is_none() {
        return Err(EngineError::InvalidConfig(
            "vigpi_run requires a value-improvement operator".into(),
        ));
    }
    run_loop(mdp, config, oracle)
}

/// Applies a configured operator in engine context; `iteration_n` counts
/// prior applications and seeds sampled operators.
fn apply_improvement(
    config: &OperatorConfig,
    policy: &TabularPolicy,
    q: &QTable,
    mdp: &FiniteMdp,
    iteration_n: usize,
) -> Result<TabularPolicy, OperatorError> {
    match config.kind {
        OperatorKind::RandomSearch => {
            let seed = config
                .seed
                .unwrap_or(0)
                .wrapping_add(iteration_n as u64);
            let attempts = config.max_attempts.unwrap_or(1000);
            // A failed search keeps the current policy; iteration stalls
            // rather than erroring.
            Ok(random_search_improvement_op(policy, mdp, seed, attempts)?
                .unwrap_or_else(|| policy.clone()))
        }
        _ => apply_policy_q_operator(config, policy, q, iteration_n),
    }
}

fn run_loop(
    mdp: &FiniteMdp,
    config: &EngineConfig,
    oracle: Option<&QTable>,
) -> Result<RunTrace, EngineError> {
    config.validate(mdp)?;

    let mut q = match &config.q_init {
        QInit::Zeros => QTable::zeros(mdp.num_states(), mdp.num_actions()),
        QInit::Custom(q) => q.clone(),
    };
    let mut pi = match &config.pi_init {
        PiInit::Uniform => TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()),
        PiInit::Custom(pi) => pi.clone(),
    };

    let mut records = Vec::new();
    records.push(diagnostics(0, &pi, &q, mdp, oracle, config, Some(&pi))?);

    let mut converged = stopped(&records, config);
    let mut iter = 0usize;
    while !converged && iter < config.max_iters {
        iter += 1;
        let applications = iter - 1; // operator applications before this one

        // Evaluation, optionally of an independently improved policy.
        let implicit_tau = config
            .value_improvement_op
            .as_ref()
            .filter(|op| op.is_implicit())
            .map(|op| op.tau.unwrap_or(0.5));
        let evaluated: TabularPolicy = match (&config.value_improvement_op, implicit_tau) {
            (Some(op), None) => apply_improvement(op, &pi, &q, mdp, applications)
                .map_err(|source| EngineError::Operator { iteration: iter, source })?,
            _ => pi.clone(),
        };
        q = evaluate(&q, &evaluated, mdp, config, implicit_tau)
            .map_err(|e| attach_iteration(e, iter))?;

        // Improvement of the acting policy.
        pi = apply_improvement(&config.improvement_op, &pi, &q, mdp, applications)
            .map_err(|source| EngineError::Operator { iteration: iter, source })?;

        records.push(diagnostics(iter, &pi, &q, mdp, oracle, config, Some(&evaluated))?);
        converged = stopped(&records, config);
    }

    Ok(RunTrace {
        records,
        converged,
        final_policy: pi,
        final_q: q,
    })
}

enum EvalFailure {
    Op(OperatorError),
    Dp(DpError),
}

fn attach_iteration(e: EvalFailure, iteration: usize) -> EngineError {
    match e {
        EvalFailure::Op(source) => EngineError::Operator { iteration, source },
        EvalFailure::Dp(source) => EngineError::Evaluation { iteration, source },
    }
}

fn evaluate(
    q: &QTable,
    evaluated: &TabularPolicy,
    mdp: &FiniteMdp,
    config: &EngineConfig,
    implicit_tau: Option<f64>,
) -> Result<QTable, EvalFailure> {
    let backup = |q: &QTable| -> Result<QTable, EvalFailure> {
        match implicit_tau {
            Some(tau) => expectile_backup(q, evaluated, mdp, tau).map_err(EvalFailure::Op),
            None => bellman_backup(q, evaluated, mdp, 1).map_err(EvalFailure::Dp),
        }
    };
    match config.eval_mode {
        EvalMode::BackupK => {
            let mut out = q.clone();
            for _ in 0..config.k {
                out = backup(&out)?;
            }
            Ok(out)
        }
        EvalMode::ExactBackward => match implicit_tau {
            Some(tau) => {
                expectile_backward_induction(evaluated, mdp, tau).map_err(EvalFailure::Op)
            }
            None => backward_induction_evaluation(evaluated, mdp).map_err(EvalFailure::Dp),
        },
        EvalMode::Iterative { tol } => {
            let mut out = q.clone();
            for _ in 0..ITERATION_CAP {
                let next = backup(&out)?;
                let change = out.sup_distance(&next);
                out = next;
                if change < tol {
                    return Ok(out);
                }
            }
            Err(EvalFailure::Dp(DpError::IterationCapExceeded(ITERATION_CAP)))
        }
    }
}

fn stopped(records: &[IterationRecord], config: &EngineConfig) -> bool {
    records.last().is_some_and(|r| {
        r.sup_gap <= config.eps_policy && r.bellman_residual <= config.eps_value
    })
}

fn diagnostics(
    iter: usize,
    pi: &TabularPolicy,
    q: &QTable,
    mdp: &FiniteMdp,
    oracle: Option<&QTable>,
    config: &EngineConfig,
    evaluated: Option<&TabularPolicy>,
) -> Result<IterationRecord, EngineError> {
    let check = stopping_check(pi, q, mdp, config.eps_policy, config.eps_value)
        .map_err(|source| EngineError::Evaluation { iteration: iter, source })?;
    let values = exact_state_values(pi, mdp)
        .map_err(|source| EngineError::Evaluation { iteration: iter, source })?;
    let start_value = mdp
        .start_dist()
        .iter()
        .zip(values.values())
        .map(|(p, v)| p * v)
        .sum();
    let eval_start_value = evaluated
        .map(|pi_eval| {
            (0..mdp.num_states())
                .map(|s| mdp.start_dist()[s] * pi_eval.expected_value(s, q))
                .sum()
        })
        .unwrap_or(0.0);
    Ok(IterationRecord {
        iter,
        sup_gap: check.sup_gap,
        bellman_residual: check.bellman_residual,
        q_error: oracle.map(|o| q.sup_distance(o)),
        start_value,
        eval_start_value,
        policy_snapshot: if config.record_policies {
            evaluated.cloned()
        } else {
            None
        },
    })
}
