//! The greedification / improvement operator catalog.
//!
//! Every operator is a pure function of its inputs; sampled operators take an
//! explicit seed and are deterministic given it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::exact_state_values;
use crate::error::OperatorError;
use crate::mdp::FiniteMdp;
use crate::policy::TabularPolicy;
use crate::value::QTable;

/// Tolerance under which q-values count as tied for argmax selection.
pub const TIE_TOL: f64 = 1e-12;

/// Smallest probability the softmax operator will emit. The operator
/// preserves support by contract; without a floor, iterated applications
/// drive losing actions below the smallest positive f64 and the next
/// application would reject its own output.
pub const MIN_SUPPORT: f64 = 1e-300;

/// Operator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Greedy,
    MinDet,
    Gmz,
    BonExact,
    BonSampled,
    Inadequate,
    RandomSearch,
    Expectile,
    Identity,
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Greedy => "greedy",
            OperatorKind::MinDet => "min_det",
            OperatorKind::Gmz => "gmz",
            OperatorKind::BonExact => "bon_exact",
            OperatorKind::BonSampled => "bon_sampled",
            OperatorKind::Inadequate => "inadequate",
            OperatorKind::RandomSearch => "random_search",
            OperatorKind::Expectile => "expectile",
            OperatorKind::Identity => "identity",
        }
    }
}

/// Decaying transformation scale `sigma_n(x) = (alpha / beta^n) x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub alpha: f64,
    pub beta: f64,
}

/// Tagged descriptor selecting one operator and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    /// Scale of the softmax transformation `sigma(x) = beta * x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Decaying-scale mode; replaces `beta` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<BetaSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_mix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<usize>,
}

impl OperatorConfig {
    fn bare(kind: OperatorKind) -> Self {
        Self {
            kind,
            beta: None,
            schedule: None,
            n_samples: None,
            alpha_mix: None,
            tau: None,
            seed: None,
            max_attempts: None,
        }
    }

    pub fn greedy() -> Self {
        Self::bare(OperatorKind::Greedy)
    }

    pub fn min_det() -> Self {
        Self::bare(OperatorKind::MinDet)
    }

    pub fn identity() -> Self {
        Self::bare(OperatorKind::Identity)
    }

    pub fn gmz(beta: f64) -> Self {
        Self {
            beta: Some(beta),
            ..Self::bare(OperatorKind::Gmz)
        }
    }

    pub fn gmz_schedule(alpha: f64, beta: f64) -> Self {
        Self {
            schedule: Some(BetaSchedule { alpha, beta }),
            ..Self::bare(OperatorKind::Gmz)
        }
    }

    pub fn bon_exact(n_samples: usize) -> Self {
        Self {
            n_samples: Some(n_samples),
            ..Self::bare(OperatorKind::BonExact)
        }
    }

    pub fn bon_sampled(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples: Some(n_samples),
            seed: Some(seed),
            ..Self::bare(OperatorKind::BonSampled)
        }
    }

    pub fn inadequate(alpha_mix: f64) -> Self {
        Self {
            alpha_mix: Some(alpha_mix),
            ..Self::bare(OperatorKind::Inadequate)
        }
    }

    pub fn random_search(seed: u64, max_attempts: usize) -> Self {
        Self {
            seed: Some(seed),
            max_attempts: Some(max_attempts),
            ..Self::bare(OperatorKind::RandomSearch)
        }
    }

    pub fn expectile(tau: f64) -> Self {
        Self {
            tau: Some(tau),
            ..Self::bare(OperatorKind::Expectile)
        }
    }

    /// True for operators that act through the evaluation backup rather than
    /// producing an explicit policy.
    pub fn is_implicit(&self) -> bool {
        self.kind == OperatorKind::Expectile
    }

    /// Checks the "parameters present iff required by kind" invariant plus
    /// the per-parameter ranges.
    pub fn validate(&self) -> Result<(), OperatorError> {
        let fail = |msg: String| Err(OperatorError::InvalidParameter(msg));
        let required: &[&str] = match self.kind {
            OperatorKind::Greedy | OperatorKind::MinDet | OperatorKind::Identity => &[],
            OperatorKind::Gmz => &["beta|schedule"],
            OperatorKind::BonExact => &["n_samples"],
            OperatorKind::BonSampled => &["n_samples", "seed"],
            OperatorKind::Inadequate => &["alpha_mix"],
            OperatorKind::RandomSearch => &["seed", "max_attempts"],
            OperatorKind::Expectile => &["tau"],
        };
        let present = [
            ("beta", self.beta.is_some()),
            ("schedule", self.schedule.is_some()),
            ("n_samples", self.n_samples.is_some()),
            ("alpha_mix", self.alpha_mix.is_some()),
            ("tau", self.tau.is_some()),
            ("seed", self.seed.is_some()),
            ("max_attempts", self.max_attempts.is_some()),
        ];
        for (name, is_present) in present {
            let needed = required.iter().any(|r| {
                *r == name || (*r == "beta|schedule" && (name == "beta" || name == "schedule"))
            });
            if is_present && !needed {
                return fail(format!("{} does not take `{name}`", self.kind.name()));
            }
            if !is_present && needed && name != "beta" && name != "schedule" {
                return fail(format!("{} requires `{name}`", self.kind.name()));
            }
        }
        if self.kind == OperatorKind::Gmz {
            match (self.beta, self.schedule) {
                (Some(b), None) => {
                    if !(b >= 0.0) {
                        return fail(format!("gmz beta must be >= 0, got {b}"));
                    }
                }
                (None, Some(s)) => {
                    if !(s.alpha > 0.0) || !(s.beta > 1.0) {
                        return fail(format!(
                            "gmz schedule requires alpha > 0 and beta > 1, got ({}, {})",
                            s.alpha, s.beta
                        ));
                    }
                }
                _ => return fail("gmz requires exactly one of `beta` or `schedule`".into()),
            }
        }
        if let Some(n) = self.n_samples {
            if n < 1 {
                return fail("n_samples must be >= 1".into());
            }
        }
        if let Some(a) = self.alpha_mix {
            if !(a > 0.0 && a < 1.0) {
                return fail(format!("alpha_mix must lie in (0, 1), got {a}"));
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return fail(format!("tau must lie in (0, 1), got {t}"));
            }
        }
        Ok(())
    }
}

fn check_shapes(policy: &TabularPolicy, q: &QTable) -> Result<(), OperatorError> {
    if policy.num_states() != q.num_states() || policy.num_actions() != q.num_actions() {
        return Err(OperatorError::ShapeMismatch(format!(
            "policy is {}x{}, q is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            q.num_states(),
            q.num_actions()
        )));
    }
    Ok(())
}

/// Uniform row over the argmax set of `row` (ties within [`TIE_TOL`]).
fn argmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = row
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= max - TIE_TOL)
        .map(|(a, _)| a)
        .collect();
    let share = 1.0 / winners.len() as f64;
    let mut out = vec![0.0; row.len()];
    for a in winners {
        out[a] = share;
    }
    out
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// The greedy operator: support exactly on the argmax set of `q(s, .)`,
/// uniform over ties; independent of the input policy.
pub fn greedy_op(policy: &TabularPolicy, q: &QTable) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q)?;
    let rows = (0..q.num_states()).map(|s| argmax_row(q.row(s))).collect();
    Ok(TabularPolicy::from_normalized_rows(rows))
}

/// The least-greedifying deterministic operator: per state, the worst action
/// that is still strictly better than the current one; the current action is
/// kept when nothing is strictly better. Argmin ties break toward the lowest
/// action index.
pub fn min_det_op(policy: &TabularPolicy, q: &QTable) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q)?;
    let mut actions = Vec::with_capacity(q.num_states());
    for s in 0..q.num_states() {
        let current = policy.action(s).ok_or(OperatorError::NotDeterministic)?;
        let current_value = q.get(s, current);
        let mut chosen = current;
        let mut chosen_value = f64::INFINITY;
        for a in 0..q.num_actions() {
            let v = q.get(s, a);
            if v > current_value && v < chosen_value {
                chosen = a;
                chosen_value = v;
            }
        }
        actions.push(chosen);
    }
    Ok(TabularPolicy::deterministic(q.num_actions(), &actions))
}

/// The regularized softmax operator
/// `pi'(a|s) ~ pi(a|s) * exp(sigma(q(s,a)))` with `sigma(x) = beta * x`, or
/// `sigma_n(x) = (alpha / beta^n) * x` in schedule mode at application `n`.
/// Requires log-defined input: every action must have positive probability.
pub fn gmz_op(
    policy: &TabularPolicy,
    q: &QTable,
    config: &OperatorConfig,
    iteration_n: usize,
) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q)?;
    let scale = match (config.schedule, config.beta) {
        (Some(s), _) => s.alpha / s.beta.powi(iteration_n as i32),
        (None, Some(b)) => b,
        (None, None) => {
            return Err(OperatorError::InvalidParameter(
                "gmz requires `beta` or `schedule`".into(),
            ))
        }
    };
    let mut rows = Vec::with_capacity(q.num_states());
    for s in 0..q.num_states() {
        for a in 0..q.num_actions() {
            if policy.prob(s, a) <= 0.0 {
                return Err(OperatorError::ZeroProbabilityAction { state: s, action: a });
            }
        }
        let logits: Vec<f64> = (0..q.num_actions())
            .map(|a| policy.prob(s, a).ln() + scale * q.get(s, a))
            .collect();
        let mut row = softmax(&logits);
        for p in &mut row {
            if *p < MIN_SUPPORT {
                *p = MIN_SUPPORT;
            }
        }
        let total: f64 = row.iter().sum();
        for p in &mut row {
            *p /= total;
        }
        rows.push(row);
    }
    Ok(TabularPolicy::from_normalized_rows(rows))
}

/// The exact distribution of Best-of-N selection: group actions into q-value
/// classes, give class `c` the winning mass `F(c)^N - F^-(c)^N`, and split a
/// class's mass proportionally to `pi` (equivalent to uniform tie-breaking
/// over sampled maximizers, by exchangeability). `N = 1` returns `pi`.
pub fn bon_exact_op(
    policy: &TabularPolicy,
    q: &QTable,
    n_samples: usize,
) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q)?;
    if n_samples < 1 {
        return Err(OperatorError::InvalidParameter(
            "n_samples must be >= 1".into(),
        ));
    }
    if n_samples == 1 {
        return Ok(policy.clone());
    }
    let n = n_samples as i32;
    let mut rows = Vec::with_capacity(q.num_states());
    for s in 0..q.num_states() {
        let mut order: Vec<usize> = (0..q.num_actions()).collect();
        order.sort_by(|&a, &b| q.get(s, a).partial_cmp(&q.get(s, b)).unwrap());

        let mut out = vec![0.0; q.num_actions()];
        let mut cum_below = 0.0_f64;
        let mut i = 0;
        while i < order.len() {
            // One class of exactly equal q-values.
            let value = q.get(s, order[i]);
            let mut j = i;
            let mut class_mass = 0.0;
            while j < order.len() && q.get(s, order[j]) == value {
                class_mass += policy.prob(s, order[j]);
                j += 1;
            }
            if class_mass > 0.0 {
                let cum = cum_below + class_mass;
                let win = cum.powi(n) - cum_below.powi(n);
                for &a in &order[i..j] {
                    out[a] = win * policy.prob(s, a) / class_mass;
                }
                cum_below = cum;
            }
            i = j;
        }
        let total: f64 = out.iter().sum();
        for p in &mut out {
            *p /= total;
        }
        rows.push(out);
    }
    Ok(TabularPolicy::from_normalized_rows(rows))
}

/// Sampled Best-of-N: draws `n_samples` actions i.i.d. from `pi` per state
/// and returns the argmax over the sampled set as a deterministic row, ties
/// among sampled maximizers broken uniformly from the same generator.
pub fn bon_sampled_op(
    policy: &TabularPolicy,
    q: &QTable,
    n_samples: usize,
    seed: u64,
) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q)?;
    if n_samples < 1 {
        return Err(OperatorError::InvalidParameter(
            "n_samples must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actions = Vec::with_capacity(q.num_states());
    for s in 0..q.num_states() {
        let mut sampled = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            sampled.push(sample_categorical(policy.row(s), &mut rng));
        }
        let best = sampled
            .iter()
            .map(|&a| q.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = sampled
            .iter()
            .copied()
            .filter(|&a| q.get(s, a) == best)
            .collect();
        let pick = if winners.len() == 1 {
            winners[0]
        } else {
            winners[rng.random_range(0..winners.len())]
        };
        actions.push(pick);
    }
    Ok(TabularPolicy::deterministic(q.num_actions(), &actions))
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (a, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return a;
        }
    }
    // Row sums can fall a hair short of 1; charge the remainder to the last
    // action with mass.
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// The mixture operator that stalls policy iteration: while the policy's
/// expected value under `q_pi` sits below the softmax policy's, output
/// `alpha * pi + (1 - alpha) * softmax(q_pi)`; once the policy is greedier
/// than the softmax by [`TIE_TOL`], output the argmax row. The mixture
/// approaches the softmax policy without crossing it, so the tolerance keeps
/// the float iteration on the mixture branch where exact arithmetic would
/// stay forever. `q_pi` must be the exact evaluation of the input policy,
/// which is the caller's responsibility.
pub fn inadequate_op(
    policy: &TabularPolicy,
    q_pi: &QTable,
    alpha_mix: f64,
) -> Result<TabularPolicy, OperatorError> {
    check_shapes(policy, q_pi)?;
    if !(alpha_mix > 0.0 && alpha_mix < 1.0) {
        return Err(OperatorError::InvalidParameter(format!(
            "alpha_mix must lie in (0, 1), got {alpha_mix}"
        )));
    }
    let mut rows = Vec::with_capacity(q_pi.num_states());
    for s in 0..q_pi.num_states() {
        let soft = softmax(q_pi.row(s));
        let e_pi = policy.expected_value(s, q_pi);
        let e_soft: f64 = soft
            .iter()
            .zip(q_pi.row(s))
            .map(|(p, v)| p * v)
            .sum();
        if e_pi - e_soft >= TIE_TOL {
            rows.push(argmax_row(q_pi.row(s)));
        } else {
            let row = (0..q_pi.num_actions())
                .map(|a| alpha_mix * policy.prob(s, a) + (1.0 - alpha_mix) * soft[a])
                .collect();
            rows.push(row);
        }
    }
    Ok(TabularPolicy::from_normalized_rows(rows))
}

/// Random-search improvement: repeatedly draws a uniformly random
/// deterministic policy, evaluates it exactly, and returns the first draw
/// whose values dominate the input policy's (strictly at one state or more).
/// Returns `None` when `max_attempts` draws fail, which always happens for an
/// optimal input.
pub fn random_search_improvement_op(
    policy: &TabularPolicy,
    mdp: &FiniteMdp,
    seed: u64,
    max_attempts: usize,
) -> Result<Option<TabularPolicy>, OperatorError> {
    if !mdp.is_layered() {
        return Err(OperatorError::RequiresLayeredMdp);
    }
    let baseline = exact_state_values(policy, mdp)
        .map_err(|e| OperatorError::ShapeMismatch(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let actions: Vec<usize> = (0..mdp.num_states())
            .map(|_| rng.random_range(0..mdp.num_actions()))
            .collect();
        let candidate = TabularPolicy::deterministic(mdp.num_actions(), &actions);
        let values = exact_state_values(&candidate, mdp)
            .map_err(|e| OperatorError::ShapeMismatch(e.to_string()))?;
        let dominates = (0..mdp.num_states()).all(|s| values.get(s) >= baseline.get(s));
        let strict = (0..mdp.num_states()).any(|s| values.get(s) > baseline.get(s));
        if dominates && strict {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

/// Applies a configured operator as a pure `(policy, q)` map. `iteration_n`
/// counts prior applications: it selects the schedule step for decaying-scale
/// gmz and offsets the seed of sampled operators
/// (`effective_seed = seed + iteration_n`).
pub fn apply_policy_q_operator(
    config: &OperatorConfig,
    policy: &TabularPolicy,
    q: &QTable,
    iteration_n: usize,
) -> Result<TabularPolicy, OperatorError> {
    match config.kind {
        OperatorKind::Greedy => greedy_op(policy, q),
        OperatorKind::MinDet => min_det_op(policy, q),
        OperatorKind::Gmz => gmz_op(policy, q, config, iteration_n),
        OperatorKind::BonExact => bon_exact_op(policy, q, config.n_samples.unwrap_or(1)),
        OperatorKind::BonSampled => bon_sampled_op(
            policy,
            q,
            config.n_samples.unwrap_or(1),
            config.seed.unwrap_or(0).wrapping_add(iteration_n as u64),
        ),
        OperatorKind::Inadequate => {
            inadequate_op(policy, q, config.alpha_mix.unwrap_or(f64::NAN))
        }
        OperatorKind::Identity => Ok(policy.clone()),
        OperatorKind::RandomSearch | OperatorKind::Expectile => Err(
            OperatorError::NotPolicyQOperator(config.kind.name().to_string()),
        ),
    }
}
