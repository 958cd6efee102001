//! Numeric certification of the operator conditions, plus the counterexample
//! and convergence suites.
//!
//! A certification is always suite-relative: the verdict vocabulary says
//! "certified-on-suite" rather than "proved". Refutations, by contrast, are
//! genuine — every one carries a concrete witness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dp::{exact_state_values, greedification_gap, optimal_values};
use crate::engine::{gpi_run, vigpi_run, EngineConfig, PiInit};
use crate::error::OperatorError;
use crate::instances::{build_counterexample, random_layered_mdp, Counterexample, QSequence};
use crate::mdp::FiniteMdp;
use crate::operators::{
    apply_policy_q_operator, random_search_improvement_op, OperatorConfig, OperatorKind, TIE_TOL,
};
use crate::policy::TabularPolicy;
use crate::value::QTable;

/// Slack for the non-strict greedification inequality.
pub const NONSTRICT_SLACK: f64 = 1e-10;
/// Threshold above which an improvement counts as strict.
pub const STRICT_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedOnSuite,
    Refuted,
    Inconclusive,
}

/// A concrete input demonstrating a violation.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<TabularPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<QTable>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances_tested: usize,
    pub passed: bool,
    /// Signed worst slack observed; negative values are violations.
    pub worst_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub operator: OperatorConfig,
    pub checks: Vec<CheckOutcome>,
    pub verdict: Verdict,
}

impl CertificationReport {
    fn from_checks(operator: OperatorConfig, checks: Vec<CheckOutcome>) -> Self {
        let verdict = if checks.iter().all(|c| c.passed) {
            Verdict::CertifiedOnSuite
        } else {
            Verdict::Refuted
        };
        Self {
            operator,
            checks,
            verdict,
        }
    }

    fn inconclusive(operator: OperatorConfig, name: &str, detail: String) -> Self {
        Self {
            operator,
            checks: vec![CheckOutcome {
                name: name.into(),
                instances_tested: 0,
                passed: false,
                worst_violation: f64::NAN,
                witness: Some(Witness {
                    description: detail,
                    state: None,
                    policy: None,
                    q: None,
                }),
            }],
            verdict: Verdict::Inconclusive,
        }
    }
}

/// The input domain a suite must respect for a given operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteFlavor {
    /// Arbitrary policies, including deterministic and exactly greedy ones.
    General,
    /// Every action keeps positive probability (log-defined inputs, the
    /// sensible domain of sampling operators).
    FullSupport,
    /// Deterministic policies only.
    Deterministic,
}

impl SuiteFlavor {
    pub fn for_operator(kind: OperatorKind) -> Self {
        match kind {
            OperatorKind::MinDet => SuiteFlavor::Deterministic,
            OperatorKind::Gmz | OperatorKind::BonExact | OperatorKind::BonSampled => {
                SuiteFlavor::FullSupport
            }
            _ => SuiteFlavor::General,
        }
    }
}

pub fn random_qtable(rng: &mut ChaCha8Rng, num_states: usize, num_actions: usize) -> QTable {
    let rows = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    QTable::from_rows_unchecked(rows)
}

pub fn random_policy(rng: &mut ChaCha8Rng, num_states: usize, num_actions: usize) -> TabularPolicy {
    let rows = (0..num_states)
        .map(|_| {
            let draws: Vec<f64> = (0..num_actions).map(|_| rng.random::<f64>() + 1e-6).collect();
            let total: f64 = draws.iter().sum();
            draws.iter().map(|d| d / total).collect()
        })
        .collect();
    TabularPolicy::from_normalized_rows(rows)
}

fn random_deterministic_policy(
    rng: &mut ChaCha8Rng,
    num_states: usize,
    num_actions: usize,
) -> TabularPolicy {
    let actions: Vec<usize> = (0..num_states)
        .map(|_| rng.random_range(0..num_actions))
        .collect();
    TabularPolicy::deterministic(num_actions, &actions)
}

/// Greedy policy blended with `mix` of uniform; `mix = 0` is exactly greedy.
pub fn near_greedy_policy(q: &QTable, mix: f64) -> TabularPolicy {
    let n_actions = q.num_actions();
    let rows = (0..q.num_states())
        .map(|s| {
            let row = q.row(s);
            let max = q.row_max(s);
            let winners: Vec<usize> = (0..n_actions)
                .filter(|a| row[*a] >= max - TIE_TOL)
                .collect();
            let share = (1.0 - mix) / winners.len() as f64;
            let base = mix / n_actions as f64;
            let mut out = vec![base; n_actions];
            for a in winners {
                out[a] += share;
            }
            out
        })
        .collect();
    TabularPolicy::from_normalized_rows(rows)
}

/// The default random `(pi, q)` suite: `n_random` seeded pairs plus
/// constructed near-tie, near-greedy, exactly greedy, and anti-aligned edge
/// cases, restricted to the operator's input domain.
pub fn default_pair_suite(
    flavor: SuiteFlavor,
    num_states: usize,
    num_actions: usize,
    n_random: usize,
    seed: u64,
) -> Vec<(TabularPolicy, QTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Vec::with_capacity(n_random + 8);
    for _ in 0..n_random {
        let q = random_qtable(&mut rng, num_states, num_actions);
        let pi = match flavor {
            SuiteFlavor::Deterministic => {
                random_deterministic_policy(&mut rng, num_states, num_actions)
            }
            _ => random_policy(&mut rng, num_states, num_actions),
        };
        suite.push((pi, q));
    }

    // Constructed edge cases on a fresh q.
    let q = random_qtable(&mut rng, num_states, num_actions);
    // A q with an exact tie and a near tie at state 0.
    let mut tied_rows = q.rows().to_vec();
    if num_actions >= 2 {
        tied_rows[0][1] = tied_rows[0][0];
        if num_actions >= 3 {
            tied_rows[0][2] = tied_rows[0][0] + 1e-13;
        }
    }
    let q_tied = QTable::from_rows_unchecked(tied_rows);
    match flavor {
        SuiteFlavor::Deterministic => {
            let greedy_actions: Vec<usize> = (0..num_states)
                .map(|s| {
                    (0..num_actions)
                        .max_by(|&a, &b| q.get(s, a).partial_cmp(&q.get(s, b)).unwrap())
                        .unwrap()
                })
                .collect();
            let anti_actions: Vec<usize> = (0..num_states)
                .map(|s| {
                    (0..num_actions)
                        .min_by(|&a, &b| q.get(s, a).partial_cmp(&q.get(s, b)).unwrap())
                        .unwrap()
                })
                .collect();
            suite.push((
                TabularPolicy::deterministic(num_actions, &greedy_actions),
                q.clone(),
            ));
            suite.push((
                TabularPolicy::deterministic(num_actions, &anti_actions),
                q.clone(),
            ));
            suite.push((
                TabularPolicy::deterministic(num_actions, &anti_actions),
                q_tied,
            ));
        }
        SuiteFlavor::General | SuiteFlavor::FullSupport => {
            let greedy_mix = if flavor == SuiteFlavor::General { 0.0 } else { 1e-9 };
            // Exactly greedy (or near enough for log-defined domains).
            suite.push((near_greedy_policy(&q, greedy_mix), q.clone()));
            // Near-greedy with a tiny gap.
            suite.push((near_greedy_policy(&q, 1e-9), q.clone()));
            // Anti-aligned: greedy with respect to -q, softened for support.
            let neg = QTable::from_rows_unchecked(
                q.rows()
                    .iter()
                    .map(|row| row.iter().map(|v| -v).collect())
                    .collect(),
            );
            suite.push((near_greedy_policy(&neg, greedy_mix.max(1e-9)), q.clone()));
            suite.push((near_greedy_policy(&q_tied, 1e-9), q_tied));
        }
    }
    suite
}

fn sup_gap(policy: &TabularPolicy, q: &QTable) -> f64 {
    greedification_gap(policy, q)
        .expect("suite shapes agree")
        .max()
}

/// Checks the greedification definition on a suite: the non-strict
/// expected-value inequality at every state, and strict improvement at some
/// state whenever the input is not already greedy.
pub fn check_greedification(
    op: &OperatorConfig,
    suite: &[(TabularPolicy, QTable)],
) -> CertificationReport {
    check_greedification_with(op.clone(), suite, |pi, q| {
        apply_policy_q_operator(op, pi, q, 0)
    })
}

pub(crate) fn check_greedification_with<F>(
    operator: OperatorConfig,
    suite: &[(TabularPolicy, QTable)],
    apply: F,
) -> CertificationReport
where
    F: Fn(&TabularPolicy, &QTable) -> Result<TabularPolicy, OperatorError>,
{
    if suite.is_empty() {
        return CertificationReport::inconclusive(
            operator,
            "greedification",
            "empty suite".into(),
        );
    }
    let mut worst_nonstrict = f64::INFINITY;
    let mut nonstrict_witness = None;
    let mut worst_strict = f64::INFINITY;
    let mut strict_witness = None;
    let mut strict_cases = 0usize;

    for (idx, (pi, q)) in suite.iter().enumerate() {
        let improved = match apply(pi, q) {
            Ok(p) => p,
            Err(e) => {
                return CertificationReport::inconclusive(
                    operator,
                    "greedification",
                    format!("operator not applicable to suite pair {idx}: {e}"),
                )
            }
        };
        let mut best_gain = f64::NEG_INFINITY;
        for s in 0..q.num_states() {
            let gain = improved.expected_value(s, q) - pi.expected_value(s, q);
            best_gain = best_gain.max(gain);
            if gain < worst_nonstrict {
                worst_nonstrict = gain;
                nonstrict_witness = Some(Witness {
                    description: format!("pair {idx}: expected value drops by {:.3e}", -gain),
                    state: Some(s),
                    policy: Some(pi.clone()),
                    q: Some(q.clone()),
                });
            }
        }
        if sup_gap(pi, q) > TIE_TOL {
            strict_cases += 1;
            if best_gain < worst_strict {
                worst_strict = best_gain;
                strict_witness = Some(Witness {
                    description: format!(
                        "pair {idx}: best per-state gain {best_gain:.3e} on a non-greedy input"
                    ),
                    state: None,
                    policy: Some(pi.clone()),
                    q: Some(q.clone()),
                });
            }
        }
    }

    let nonstrict_ok = worst_nonstrict >= -NONSTRICT_SLACK;
    let strict_ok = strict_cases == 0 || worst_strict >= STRICT_MIN;
    let checks = vec![
        CheckOutcome {
            name: "nonstrict-greedification".into(),
            instances_tested: suite.len(),
            passed: nonstrict_ok,
            worst_violation: worst_nonstrict,
            witness: if nonstrict_ok { None } else { nonstrict_witness },
        },
        CheckOutcome {
            name: "strict-improvement-somewhere".into(),
            instances_tested: strict_cases,
            passed: strict_ok,
            worst_violation: if strict_cases == 0 { 0.0 } else { worst_strict },
            witness: if strict_ok { None } else { strict_witness },
        },
    ];
    CertificationReport::from_checks(operator, checks)
}

/// The per-q improvement floor of the lower-bound definition: the minimum
/// positive pairwise difference between two action values at one state.
pub fn min_positive_pairwise_gap(q: &QTable) -> f64 {
    let mut best = f64::INFINITY;
    for s in 0..q.num_states() {
        let row = q.row(s);
        for i in 0..row.len() {
            for j in i + 1..row.len() {
                let d = (row[i] - row[j]).abs();
                if d > 0.0 {
                    best = best.min(d);
                }
            }
        }
    }
    best
}

/// Checks lower-bounded greedification against the minimum-pairwise-gap
/// floor. Applications whose output is already greedy satisfy the
/// definition's escape clause and are skipped; for the rest, the
/// per-application improvement (largest per-state gain) must reach the floor.
pub fn check_lower_bound(
    op: &OperatorConfig,
    q: &QTable,
    policies: &[TabularPolicy],
) -> CertificationReport {
    if policies.is_empty() {
        return CertificationReport::inconclusive(op.clone(), "lower-bound", "empty suite".into());
    }
    let bound = min_positive_pairwise_gap(q);
    let mut measured = 0usize;
    let mut epsilon_hat = f64::INFINITY;
    let mut witness = None;

    for (idx, pi) in policies.iter().enumerate() {
        let improved = match apply_policy_q_operator(op, pi, q, 0) {
            Ok(p) => p,
            Err(e) => {
                return CertificationReport::inconclusive(
                    op.clone(),
                    "lower-bound",
                    format!("operator not applicable to suite policy {idx}: {e}"),
                )
            }
        };
        if sup_gap(&improved, q) <= TIE_TOL {
            continue; // reached a greedy policy: the bound is not required
        }
        measured += 1;
        let improvement = (0..q.num_states())
            .map(|s| improved.expected_value(s, q) - pi.expected_value(s, q))
            .fold(f64::NEG_INFINITY, f64::max);
        if improvement < epsilon_hat {
            epsilon_hat = improvement;
            witness = Some(Witness {
                description: format!(
                    "policy {idx}: improvement {improvement:.3e} below the floor {bound:.3e}"
                ),
                state: None,
                policy: Some(pi.clone()),
                q: Some(q.clone()),
            });
        }
    }

    let passed = measured == 0 || epsilon_hat >= bound - NONSTRICT_SLACK;
    let worst = if measured == 0 { 0.0 } else { epsilon_hat - bound };
    CertificationReport::from_checks(
        op.clone(),
        vec![CheckOutcome {
            name: "lower-bound".into(),
            instances_tested: measured,
            passed,
            worst_violation: worst,
            witness: if passed { None } else { witness },
        }],
    )
}

/// Iterates `pi <- op(pi, q_n)` along a sequence with a declared limit and
/// classifies the tail behavior of the greedification gap with respect to
/// the limit: certified when it falls below `tol` and is non-increasing over
/// the last tenth of the run, refuted when it stays an order of magnitude
/// above `tol` (either oscillating or pinned at a positive limit).
pub fn check_limit_sufficiency(
    op: &OperatorConfig,
    sequence: &QSequence,
    pi0: &TabularPolicy,
    n_max: usize,
    tol: f64,
) -> CertificationReport {
    let limit = sequence.limit();
    let mut pi = pi0.clone();
    let mut gaps = Vec::with_capacity(n_max + 1);
    gaps.push(sup_gap(&pi, limit));
    for n in 0..n_max {
        let q_n = sequence.at(n);
        pi = match apply_policy_q_operator(op, &pi, &q_n, n) {
            Ok(p) => p,
            Err(e) => {
                return CertificationReport::inconclusive(
                    op.clone(),
                    "limit-sufficiency",
                    format!("operator failed at step {n}: {e}"),
                )
            }
        };
        gaps.push(sup_gap(&pi, limit));
    }

    let last = *gaps.last().unwrap();
    let tail_start = gaps.len() - (gaps.len() / 10).max(2);
    let tail_monotone = gaps[tail_start..]
        .windows(2)
        .all(|w| w[1] <= w[0] + STRICT_MIN);
    let infimum = gaps.iter().cloned().fold(f64::INFINITY, f64::min);

    let window = &gaps[gaps.len().saturating_sub(100)..];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let std = (window.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / window.len() as f64).sqrt();

    let (passed, worst, description) = if last <= tol && tail_monotone {
        (true, last, String::new())
    } else if infimum > 10.0 * tol {
        let kind = if std > 10.0 * tol {
            "oscillating gap"
        } else {
            "gap pinned at a positive limit"
        };
        (
            false,
            infimum,
            format!("{kind}: infimum {infimum:.6e} after {n_max} steps"),
        )
    } else {
        (
            false,
            last,
            format!("undecided tail: last gap {last:.3e}, infimum {infimum:.3e}"),
        )
    };

    let name = "limit-sufficiency";
    if passed {
        CertificationReport::from_checks(
            op.clone(),
            vec![CheckOutcome {
                name: name.into(),
                instances_tested: n_max,
                passed: true,
                worst_violation: worst,
                witness: None,
            }],
        )
    } else if infimum > 10.0 * tol {
        CertificationReport::from_checks(
            op.clone(),
            vec![CheckOutcome {
                name: name.into(),
                instances_tested: n_max,
                passed: false,
                worst_violation: worst,
                witness: Some(Witness {
                    description,
                    state: None,
                    policy: Some(pi0.clone()),
                    q: Some(limit.clone()),
                }),
            }],
        )
    } else {
        CertificationReport::inconclusive(op.clone(), name, description)
    }
}

/// Checks Definition-2-style policy improvement under exact evaluation on a
/// concrete MDP: values never drop, and improve strictly somewhere unless
/// the policy is already greedy with respect to its own evaluation.
pub fn check_policy_improvement(
    op: &OperatorConfig,
    mdp: &FiniteMdp,
    policies: &[TabularPolicy],
) -> CertificationReport {
    let mut worst = f64::INFINITY;
    let mut worst_strict = f64::INFINITY;
    let mut strict_cases = 0usize;
    let mut witness = None;

    for (idx, pi) in policies.iter().enumerate() {
        let q_pi = match crate::dp::backward_induction_evaluation(pi, mdp) {
            Ok(q) => q,
            Err(e) => {
                return CertificationReport::inconclusive(
                    op.clone(),
                    "policy-improvement",
                    format!("evaluation failed for suite policy {idx}: {e}"),
                )
            }
        };
        let improved = match apply_policy_q_operator(op, pi, &q_pi, 0) {
            Ok(p) => p,
            Err(e) => {
                return CertificationReport::inconclusive(
                    op.clone(),
                    "policy-improvement",
                    format!("operator not applicable to suite policy {idx}: {e}"),
                )
            }
        };
        let before = exact_state_values(pi, mdp).expect("layered evaluation");
        let after = exact_state_values(&improved, mdp).expect("layered evaluation");
        let mut best_gain = f64::NEG_INFINITY;
        for s in 0..mdp.num_states() {
            let gain = after.get(s) - before.get(s);
            best_gain = best_gain.max(gain);
            if gain < worst {
                worst = gain;
                witness = Some(Witness {
                    description: format!("pair {idx}: value drops by {:.3e}", -gain),
                    state: Some(s),
                    policy: Some(pi.clone()),
                    q: Some(q_pi.clone()),
                });
            }
        }
        if sup_gap(pi, &q_pi) > TIE_TOL {
            strict_cases += 1;
            worst_strict = worst_strict.min(best_gain);
        }
    }

    let nonstrict_ok = worst >= -NONSTRICT_SLACK;
    let strict_ok = strict_cases == 0 || worst_strict >= STRICT_MIN;
    CertificationReport::from_checks(
        op.clone(),
        vec![
            CheckOutcome {
                name: "value-never-drops".into(),
                instances_tested: policies.len(),
                passed: nonstrict_ok,
                worst_violation: worst,
                witness: if nonstrict_ok { None } else { witness },
            },
            CheckOutcome {
                name: "strict-value-improvement".into(),
                instances_tested: strict_cases,
                passed: strict_ok,
                worst_violation: if strict_cases == 0 { 0.0 } else { worst_strict },
                witness: None,
            },
        ],
    )
}

/// One named assertion of an aggregate suite.
#[derive(Debug, Clone, Serialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Aggregate result of a verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub assertions: Vec<AssertionOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Aggregate status for CI use: 0 when every expected outcome holds,
    /// 1 otherwise.
    pub fn exit_status(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }
}

fn assert_outcome(name: &str, passed: bool, detail: String) -> AssertionOutcome {
    AssertionOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// Seed for which the first accepted random-search draw on the branching MDP
/// selects the third action at the root (found by enumeration; asserted in
/// tests).
pub const BRANCHING_WITNESS_SEED: u64 = 4;

/// Executes the counterexample battery:
/// (a) policy iteration with the mixture operator stalls at the softmax
/// policy, (b) random search improves the branching MDP through an action
/// that greedification forbids, (c) decaying-scale gmz pins its gap at
/// `1/(1+e^2)`, and (d) the least-greedifying deterministic operator
/// oscillates forever on the alternating sequence.
pub fn run_counterexample_suite() -> SuiteReport {
    let mut assertions = Vec::new();
    let e = 1.0_f64.exp();

    // (a) Mixture-operator stall on the two-action MDP.
    {
        let Counterexample::TwoAction { mdp, .. } =
            build_counterexample("two_action").expect("builtin")
        else {
            unreachable!()
        };
        let config = EngineConfig {
            max_iters: 10_000,
            ..EngineConfig::greedy_default().with_improvement(OperatorConfig::inadequate(0.9))
        };
        match gpi_run(&mdp, &config, None) {
            Ok(trace) => {
                let p2 = trace.final_policy.prob(0, 1);
                let gap = trace.final_record().sup_gap;
                let expected_p2 = e / (1.0 + e);
                let expected_gap = 1.0 / (1.0 + e);
                let passed = !trace.converged
                    && (p2 - expected_p2).abs() <= 1e-6
                    && (gap - expected_gap).abs() <= 1e-6;
                assertions.push(assert_outcome(
                    "inadequate-stalls-at-softmax",
                    passed,
                    format!(
                        "pi(a2|s0) = {p2:.9} (want {expected_p2:.9}), gap = {gap:.9} (want {expected_gap:.9}), converged = {}",
                        trace.converged
                    ),
                ));
            }
            Err(err) => assertions.push(assert_outcome(
                "inadequate-stalls-at-softmax",
                false,
                format!("engine error: {err}"),
            )),
        }
    }

    // (b) Improvement without greedification on the branching MDP.
    {
        let Counterexample::Branching { mdp, pi0 } =
            build_counterexample("branching").expect("builtin")
        else {
            unreachable!()
        };
        let q_pi0 = crate::dp::backward_induction_evaluation(&pi0, &mdp).expect("layered");
        match random_search_improvement_op(&pi0, &mdp, BRANCHING_WITNESS_SEED, 10_000) {
            Ok(Some(improved)) => {
                let before = exact_state_values(&pi0, &mdp).expect("layered");
                let after = exact_state_values(&improved, &mdp).expect("layered");
                let dominates = (0..mdp.num_states()).all(|s| after.get(s) >= before.get(s));
                let strict = (0..mdp.num_states()).any(|s| after.get(s) > before.get(s));
                let picks_a3 = improved.action(0) == Some(2);
                // The chosen action is the worst one under Q^{pi0}: this
                // improvement is not a greedification.
                let anti_greedy = improved.expected_value(0, &q_pi0)
                    < pi0.expected_value(0, &q_pi0);
                let passed = dominates && strict && picks_a3 && anti_greedy;
                assertions.push(assert_outcome(
                    "random-search-improves-without-greedifying",
                    passed,
                    format!(
                        "root action = {:?}, V'(s1) = {}, V(s1) = {}, E_pi' Q^pi0(s1) = {}",
                        improved.action(0),
                        after.get(0),
                        before.get(0),
                        improved.expected_value(0, &q_pi0)
                    ),
                ));
            }
            Ok(None) => assertions.push(assert_outcome(
                "random-search-improves-without-greedifying",
                false,
                "no improvement found".into(),
            )),
            Err(err) => assertions.push(assert_outcome(
                "random-search-improves-without-greedifying",
                false,
                format!("operator error: {err}"),
            )),
        }
    }

    // (c) Decaying-scale gmz: gap converges to 1/(1+e^2) from above.
    {
        let q = QTable::from_rows_unchecked(vec![vec![1.0, 2.0]]);
        let cfg = OperatorConfig::gmz_schedule(1.0, 2.0);
        let mut pi = TabularPolicy::uniform(1, 2);
        let mut gaps = Vec::new();
        gaps.push(sup_gap(&pi, &q));
        let mut failed = None;
        for n in 0..200 {
            match apply_policy_q_operator(&cfg, &pi, &q, n) {
                Ok(p) => pi = p,
                Err(err) => {
                    failed = Some(err);
                    break;
                }
            }
            gaps.push(sup_gap(&pi, &q));
        }
        let limit_gap = 1.0 / (1.0 + (2.0_f64).exp().powi(1));
        match failed {
            None => {
                let last = *gaps.last().unwrap();
                let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
                let passed = (last - limit_gap).abs() <= 1e-6 && min >= 0.119;
                assertions.push(assert_outcome(
                    "decaying-scale-gap-pins-positive",
                    passed,
                    format!("final gap = {last:.9} (want {limit_gap:.9}), min gap = {min:.9}"),
                ));
            }
            Some(err) => assertions.push(assert_outcome(
                "decaying-scale-gap-pins-positive",
                false,
                format!("operator error: {err}"),
            )),
        }
    }

    // (d) min_det oscillates on the alternating sequence, never reaching the
    // limit-optimal action.
    {
        let Counterexample::Oscillating { sequence, pi0 } =
            build_counterexample("oscillating").expect("builtin")
        else {
            unreachable!()
        };
        let mut pi = pi0;
        let mut visited = std::collections::BTreeSet::new();
        let mut failed = None;
        for n in 0..1000 {
            match apply_policy_q_operator(&OperatorConfig::min_det(), &pi, &sequence.at(n), n) {
                Ok(p) => pi = p,
                Err(err) => {
                    failed = Some(err);
                    break;
                }
            }
            visited.insert(pi.action(0).expect("deterministic"));
        }
        match failed {
            None => {
                let passed = visited == std::collections::BTreeSet::from([0usize, 1usize]);
                assertions.push(assert_outcome(
                    "min-det-oscillates-forever",
                    passed,
                    format!("visited action set over 1000 steps: {visited:?}"),
                ));
            }
            Some(err) => assertions.push(assert_outcome(
                "min-det-oscillates-forever",
                false,
                format!("operator error: {err}"),
            )),
        }
    }

    SuiteReport {
        name: "counterexamples".into(),
        assertions,
    }
}

/// Runs the engine catalog against exact oracles on seeded random layered
/// MDPs (4 layers x 5 states x 3 actions per instance).
pub fn oracle_equivalence_suite(num_instances: usize, seed: u64) -> SuiteReport {
    let mut failures: Vec<String> = Vec::new();
    let mut vi_speedup_violations: Vec<String> = Vec::new();

    for i in 0..num_instances {
        let instance_seed = seed.wrapping_add(i as u64);
        let mdp = match random_layered_mdp(4, 5, 3, instance_seed) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("seed {instance_seed}: generator failed: {e}"));
                continue;
            }
        };
        let (q_star, v_star) = optimal_values(&mdp).expect("layered oracle");
        let start_star: f64 = mdp
            .start_dist()
            .iter()
            .zip(v_star.values())
            .map(|(p, v)| p * v)
            .sum();

        let check_run = |label: &str,
                             config: &EngineConfig,
                             tol: f64,
                             failures: &mut Vec<String>|
         -> Option<crate::engine::RunTrace> {
            let result = if config.value_improvement_op.is_some() {
                vigpi_run(&mdp, config, Some(&q_star))
            } else {
                gpi_run(&mdp, config, Some(&q_star))
            };
            match result {
                Ok(trace) => {
                    let q_err = trace.final_record().q_error.unwrap_or(f64::INFINITY);
                    let value = exact_state_values(&trace.final_policy, &mdp)
                        .expect("layered evaluation");
                    let value_err = (0..mdp.num_states())
                        .map(|s| (v_star.get(s) - value.get(s)).abs())
                        .fold(0.0, f64::max);
                    if q_err > tol || value_err > tol {
                        failures.push(format!(
                            "seed {instance_seed} {label}: q_err = {q_err:.3e}, value_err = {value_err:.3e} (tol {tol:.0e})"
                        ));
                        None
                    } else {
                        Some(trace)
                    }
                }
                Err(e) => {
                    failures.push(format!("seed {instance_seed} {label}: engine error: {e}"));
                    None
                }
            }
        };

        // Plain runs.
        let greedy_cfg = EngineConfig::greedy_default();
        if let Some(trace) = check_run("gpi-greedy", &greedy_cfg, 1e-9, &mut failures) {
            let h = mdp.horizon().unwrap();
            if !trace.converged || trace.iterations() > h {
                failures.push(format!(
                    "seed {instance_seed} gpi-greedy: {} iterations (H = {h}), converged = {}",
                    trace.iterations(),
                    trace.converged
                ));
            }
        }

        let min_det_cfg = EngineConfig {
            pi_init: PiInit::Custom(TabularPolicy::deterministic(
                mdp.num_actions(),
                &vec![0; mdp.num_states()],
            )),
            ..EngineConfig::greedy_default().with_improvement(OperatorConfig::min_det())
        };
        if let Some(trace) = check_run("gpi-min-det", &min_det_cfg, 1e-9, &mut failures) {
            if !trace.converged {
                failures.push(format!(
                    "seed {instance_seed} gpi-min-det: no finite-step convergence"
                ));
            }
        }

        // Value-improved runs with a greedy acting operator.
        for (label, vi_op) in [
            ("vigpi-identity", OperatorConfig::identity()),
            ("vigpi-greedy", OperatorConfig::greedy()),
            ("vigpi-bon4", OperatorConfig::bon_exact(4)),
            ("vigpi-expectile", OperatorConfig::expectile(0.9)),
        ] {
            let config = EngineConfig::greedy_default().with_value_improvement(vi_op);
            check_run(label, &config, 1e-9, &mut failures);
        }

        // A softmax acting policy, with and without value improvement; the
        // improved run must reach the 0.95 V* threshold at least as fast.
        let gmz_cfg = EngineConfig {
            max_iters: 10_000,
            ..EngineConfig::greedy_default().with_improvement(OperatorConfig::gmz(2.0))
        };
        let threshold = 0.95 * start_star;
        let pi_only = check_run("gmz-pi-only", &gmz_cfg, 1e-4, &mut failures);
        let vi_cfg = EngineConfig {
            max_iters: 10_000,
            ..EngineConfig::greedy_default()
                .with_improvement(OperatorConfig::gmz(2.0))
                .with_value_improvement(OperatorConfig::greedy())
        };
        let with_vi = check_run("gmz-with-vi", &vi_cfg, 1e-4, &mut failures);
        if let (Some(pi_only), Some(with_vi)) = (pi_only, with_vi) {
            // Compared on the critic's value series, the quantity the
            // iteration plots track; the acting policies' own values differ
            // only by crossing noise at this greedification rate.
            let pi_iters = pi_only.first_iteration_estimating(threshold);
            let vi_iters = with_vi.first_iteration_estimating(threshold);
            let ok = match (vi_iters, pi_iters) {
                (Some(vi), Some(pi)) => vi <= pi,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => true,
            };
            if !ok {
                vi_speedup_violations.push(format!(
                    "seed {instance_seed}: VI estimated 0.95 V* at {vi_iters:?}, PI-only at {pi_iters:?}"
                ));
            }
        }
    }

    let assertions = vec![
        assert_outcome(
            "engines-reach-the-oracle",
            failures.is_empty(),
            if failures.is_empty() {
                format!("{num_instances} instances, all runs within tolerance")
            } else {
                failures.join("; ")
            },
        ),
        assert_outcome(
            "value-improvement-never-slower",
            vi_speedup_violations.is_empty(),
            if vi_speedup_violations.is_empty() {
                "greedy value improvement reached the threshold at least as fast on every instance"
                    .into()
            } else {
                vi_speedup_violations.join("; ")
            },
        ),
    ];
    SuiteReport {
        name: "oracle-equivalence".into(),
        assertions,
    }
}

/// One row of the expected-vs-observed classification matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixRow {
    pub operator: String,
    pub check: String,
    pub expected: Verdict,
    pub observed: Verdict,
}

impl MatrixRow {
    pub fn matched(&self) -> bool {
        self.expected == self.observed
    }
}

/// Reproduces the analytic classification of the operator catalog:
/// each operator's certifications and refutations must land exactly where
/// the analysis puts them.
pub fn certification_matrix() -> SuiteReport {
    let mut rows = Vec::new();
    let states = 4;
    let actions = 3;
    let suite_seed = 91;

    let d3_suite = |kind: OperatorKind| {
        default_pair_suite(
            SuiteFlavor::for_operator(kind),
            states,
            actions,
            1000,
            suite_seed,
        )
    };

    // Lower-bound fixture: distinct values whose smallest positive pairwise
    // gap (1e-7, away from the top) is reachable by a non-greedy step.
    let lb_q = QTable::from_rows_unchecked(vec![
        vec![0.0, 0.5, 0.5 + 1e-7, 1.0],
        vec![-0.25, 0.125, 0.75, 0.8],
    ]);
    let lb_det_policies: Vec<TabularPolicy> = {
        let mut v = Vec::new();
        for a0 in 0..4 {
            for a1 in 0..4 {
                v.push(TabularPolicy::deterministic(4, &[a0, a1]));
            }
        }
        v
    };
    let lb_soft_policies: Vec<TabularPolicy> = {
        let mut rng = ChaCha8Rng::seed_from_u64(suite_seed + 1);
        let mut v: Vec<TabularPolicy> =
            (0..200).map(|_| random_policy(&mut rng, 2, 4)).collect();
        v.push(near_greedy_policy(&lb_q, 1e-9));
        v.push(near_greedy_policy(&lb_q, 1e-7));
        v
    };

    let constant_12 = QSequence::Constant {
        q: QTable::from_rows_unchecked(vec![vec![1.0, 2.0]]),
    };
    let geometric = QSequence::PowerDecay {
        limit: QTable::from_rows_unchecked(vec![vec![0.5, -0.25, 1.0]]),
        amplitude: QTable::from_rows_unchecked(vec![vec![0.8, -0.3, 0.2]]),
        ratio: 0.7,
        alternating: false,
        floor: 0.0,
    };
    let random_decay = QSequence::RandomDecay {
        limit: QTable::from_rows_unchecked(vec![vec![0.2, 0.9, -0.4]]),
        scale: 0.5,
        decay: 0.8,
        seed: 17,
    };
    let oscillating = match build_counterexample("oscillating").expect("builtin") {
        Counterexample::Oscillating { sequence, .. } => sequence,
        _ => unreachable!(),
    };
    let uniform2 = TabularPolicy::uniform(1, 2);

    let mut push = |operator: &str, check: &str, expected: Verdict, observed: Verdict| {
        rows.push(MatrixRow {
            operator: operator.into(),
            check: check.into(),
            expected,
            observed,
        });
    };

    // greedy: greedification, lower-bounded, and limit-sufficient.
    let greedy = OperatorConfig::greedy();
    push(
        "greedy",
        "greedification",
        Verdict::CertifiedOnSuite,
        check_greedification(&greedy, &d3_suite(OperatorKind::Greedy)).verdict,
    );
    push(
        "greedy",
        "lower-bound",
        Verdict::CertifiedOnSuite,
        check_lower_bound(&greedy, &lb_q, &lb_soft_policies).verdict,
    );
    let greedy_limit = [&constant_12, &geometric, &random_decay, &oscillating]
        .iter()
        .map(|seq| {
            let pi0 = TabularPolicy::uniform(1, seq.limit().num_actions());
            check_limit_sufficiency(&greedy, seq, &pi0, 100, 1e-6).verdict
        })
        .find(|v| *v != Verdict::CertifiedOnSuite)
        .unwrap_or(Verdict::CertifiedOnSuite);
    push(
        "greedy",
        "limit-sufficiency",
        Verdict::CertifiedOnSuite,
        greedy_limit,
    );

    // min_det: greedification and lower-bounded, but not limit-sufficient.
    let min_det = OperatorConfig::min_det();
    push(
        "min_det",
        "greedification",
        Verdict::CertifiedOnSuite,
        check_greedification(&min_det, &d3_suite(OperatorKind::MinDet)).verdict,
    );
    push(
        "min_det",
        "lower-bound",
        Verdict::CertifiedOnSuite,
        check_lower_bound(&min_det, &lb_q, &lb_det_policies).verdict,
    );
    push(
        "min_det",
        "limit-sufficiency",
        Verdict::Refuted,
        check_limit_sufficiency(
            &min_det,
            &oscillating,
            &TabularPolicy::deterministic(3, &[1]),
            1000,
            1e-6,
        )
        .verdict,
    );

    // gmz with a constant scale: greedification and limit-sufficient, but
    // not lower-bounded.
    let gmz = OperatorConfig::gmz(1.0);
    push(
        "gmz(beta=1)",
        "greedification",
        Verdict::CertifiedOnSuite,
        check_greedification(&gmz, &d3_suite(OperatorKind::Gmz)).verdict,
    );
    push(
        "gmz(beta=1)",
        "lower-bound",
        Verdict::Refuted,
        check_lower_bound(&gmz, &lb_q, &lb_soft_policies).verdict,
    );
    let gmz_limit = [&constant_12, &geometric, &random_decay, &oscillating]
        .iter()
        .map(|seq| {
            let pi0 = TabularPolicy::uniform(1, seq.limit().num_actions());
            check_limit_sufficiency(&gmz, seq, &pi0, 200, 1e-6).verdict
        })
        .find(|v| *v != Verdict::CertifiedOnSuite)
        .unwrap_or(Verdict::CertifiedOnSuite);
    push(
        "gmz(beta=1)",
        "limit-sufficiency",
        Verdict::CertifiedOnSuite,
        gmz_limit,
    );

    // gmz with a decaying scale: still greedifies per application, but is
    // no longer limit-sufficient.
    let gmz_decay = OperatorConfig::gmz_schedule(1.0, 2.0);
    push(
        "gmz(decaying)",
        "greedification",
        Verdict::CertifiedOnSuite,
        check_greedification(&gmz_decay, &d3_suite(OperatorKind::Gmz)).verdict,
    );
    push(
        "gmz(decaying)",
        "limit-sufficiency",
        Verdict::Refuted,
        check_limit_sufficiency(&gmz_decay, &constant_12, &uniform2, 200, 1e-6).verdict,
    );

    // inadequate: improves values on the two-action MDP, but stalls short of
    // greedy.
    let inadequate = OperatorConfig::inadequate(0.9);
    let improvement_policies: Vec<TabularPolicy> = {
        let mut rng = ChaCha8Rng::seed_from_u64(suite_seed + 2);
        let mut v: Vec<TabularPolicy> = (0..200).map(|_| random_policy(&mut rng, 3, 2)).collect();
        v.push(TabularPolicy::uniform(3, 2));
        v
    };
    let two_action_mdp = match build_counterexample("two_action").expect("builtin") {
        Counterexample::TwoAction { mdp, .. } => mdp,
        _ => unreachable!(),
    };
    push(
        "inadequate(0.9)",
        "policy-improvement",
        Verdict::CertifiedOnSuite,
        check_policy_improvement(&inadequate, &two_action_mdp, &improvement_policies).verdict,
    );
    push(
        "inadequate(0.9)",
        "limit-sufficiency",
        Verdict::Refuted,
        check_limit_sufficiency(&inadequate, &constant_12, &uniform2, 2000, 1e-6).verdict,
    );

    // Exact Best-of-N greedifies for N >= 2.
    let bon = OperatorConfig::bon_exact(4);
    push(
        "bon_exact(4)",
        "greedification",
        Verdict::CertifiedOnSuite,
        check_greedification(&bon, &d3_suite(OperatorKind::BonExact)).verdict,
    );

    let assertions = rows
        .iter()
        .map(|row| {
            assert_outcome(
                &format!("{} / {}", row.operator, row.check),
                row.matched(),
                format!("expected {:?}, observed {:?}", row.expected, row.observed),
            )
        })
        .collect();
    SuiteReport {
        name: "certification-matrix".into(),
        assertions,
    }
}
