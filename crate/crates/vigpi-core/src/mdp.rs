//! The tabular MDP data model, its validator, and time augmentation.

use std::fmt;

use crate::error::MdpError;
use crate::policy::ROW_SUM_TOL;

/// A finite MDP with dense transition and mean-reward tensors.
///
/// Rewards are stored as means `R[s][a]`; random rewards enter the Bellman
/// machinery only through their expectation, so no sampling happens in DP.
/// Terminal states self-loop with zero reward, which keeps the tensors
/// rectangular. A layered MDP (`layer_of` present) is a time-augmented DAG:
/// every transition from a layer-`t` state (`t < H`) lands in layer `t + 1`,
/// and all layer-`H` states are terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    /// `transitions[s][a][s']` = P(s' | s, a).
    transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]` = E[R | s, a].
    rewards: Vec<Vec<f64>>,
    /// Present iff the MDP is layered; equals the number of decision layers.
    horizon: Option<usize>,
    discount: f64,
    start_dist: Vec<f64>,
    terminal: Vec<bool>,
    /// Timestep index per state; present iff the MDP is a layered DAG.
    layer_of: Option<Vec<usize>>,
}

impl FiniteMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        discount: f64,
        start_dist: Vec<f64>,
        terminal: Vec<bool>,
        horizon: Option<usize>,
        layer_of: Option<Vec<usize>>,
    ) -> Self {
        let num_states = transitions.len();
        let num_actions = rewards.first().map_or(0, Vec::len);
        Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            horizon,
            discount,
            start_dist,
            terminal,
            layer_of,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state][action]
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    /// Successor distribution of (state, action).
    pub fn transition(&self, state: usize, action: usize) -> &[f64] {
        &self.transitions[state][action]
    }

    pub fn is_layered(&self) -> bool {
        self.layer_of.is_some()
    }

    pub fn layer_of(&self, state: usize) -> Option<usize> {
        self.layer_of.as_ref().map(|l| l[state])
    }

    pub fn layers(&self) -> Option<&[usize]> {
        self.layer_of.as_deref()
    }

    /// States of a given layer, in index order. Empty when not layered.
    pub fn states_in_layer(&self, layer: usize) -> Vec<usize> {
        match &self.layer_of {
            Some(layers) => (0..self.num_states)
                .filter(|s| layers[*s] == layer)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Largest absolute mean reward, used for value bounds.
    pub fn max_abs_reward(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// One invariant violation found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BadShape { detail: String },
    HorizonNotPositive,
    DiscountOutOfRange { discount: f64 },
    RowNotStochastic { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, successor: usize },
    NonFiniteReward { state: usize, action: usize },
    TerminalRewardNonzero { state: usize, action: usize },
    TerminalNotAbsorbing { state: usize, action: usize },
    LayerSkip { state: usize, action: usize, successor: usize },
    LastLayerNotTerminal { state: usize },
    LayerOutOfRange { state: usize, layer: usize },
    StartDistNotStochastic { sum: f64 },
    StartDistNegative { state: usize },
    StartOffLayerZero { state: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadShape { detail } => write!(f, "bad shape: {detail}"),
            Violation::HorizonNotPositive => write!(f, "horizon must be positive"),
            Violation::DiscountOutOfRange { discount } => {
                write!(f, "discount {discount} outside (0, 1]")
            }
            Violation::RowNotStochastic { state, action, sum } => {
                write!(f, "row not stochastic: P({state},{action},.) sums to {sum}")
            }
            Violation::NegativeProbability {
                state,
                action,
                successor,
            } => write!(f, "negative probability at P({state},{action},{successor})"),
            Violation::NonFiniteReward { state, action } => {
                write!(f, "non-finite reward at R({state},{action})")
            }
            Violation::TerminalRewardNonzero { state, action } => {
                write!(f, "terminal state {state} has nonzero reward at action {action}")
            }
            Violation::TerminalNotAbsorbing { state, action } => {
                write!(f, "terminal state {state} does not absorb under action {action}")
            }
            Violation::LayerSkip {
                state,
                action,
                successor,
            } => write!(
                f,
                "transition ({state},{action}) -> {successor} does not land in the next layer"
            ),
            Violation::LastLayerNotTerminal { state } => {
                write!(f, "layer-H state {state} is not terminal")
            }
            Violation::LayerOutOfRange { state, layer } => {
                write!(f, "state {state} has layer {layer} beyond the horizon")
            }
            Violation::StartDistNotStochastic { sum } => {
                write!(f, "start distribution sums to {sum}, not 1")
            }
            Violation::StartDistNegative { state } => {
                write!(f, "start distribution negative at state {state}")
            }
            Violation::StartOffLayerZero { state } => {
                write!(f, "start distribution puts mass on non-layer-0 state {state}")
            }
        }
    }
}

/// Validation outcome; violations are data, not failures.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every [`FiniteMdp`] invariant and reports violations with indices.
pub fn validate_mdp(mdp: &FiniteMdp) -> ValidationReport {
    let mut violations = Vec::new();
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;

    if s_count == 0 || a_count == 0 {
        violations.push(Violation::BadShape {
            detail: "MDP must have at least one state and one action".into(),
        });
        return ValidationReport { violations };
    }
    if mdp.transitions.len() != s_count
        || mdp.rewards.len() != s_count
        || mdp.start_dist.len() != s_count
        || mdp.terminal.len() != s_count
    {
        violations.push(Violation::BadShape {
            detail: "per-state arrays disagree on the number of states".into(),
        });
        return ValidationReport { violations };
    }
    for s in 0..s_count {
        if mdp.transitions[s].len() != a_count || mdp.rewards[s].len() != a_count {
            violations.push(Violation::BadShape {
                detail: format!("state {s} disagrees on the number of actions"),
            });
            return ValidationReport { violations };
        }
        for a in 0..a_count {
            if mdp.transitions[s][a].len() != s_count {
                violations.push(Violation::BadShape {
                    detail: format!("transition row ({s},{a}) has wrong length"),
                });
                return ValidationReport { violations };
            }
        }
    }

    if let Some(h) = mdp.horizon {
        if h == 0 {
            violations.push(Violation::HorizonNotPositive);
        }
    }
    if !(mdp.discount > 0.0 && mdp.discount <= 1.0) {
        violations.push(Violation::DiscountOutOfRange {
            discount: mdp.discount,
        });
    }

    for s in 0..s_count {
        for a in 0..a_count {
            if !mdp.rewards[s][a].is_finite() {
                violations.push(Violation::NonFiniteReward { state: s, action: a });
            }
            let row = &mdp.transitions[s][a];
            for (sp, p) in row.iter().enumerate() {
                if *p < 0.0 {
                    violations.push(Violation::NegativeProbability {
                        state: s,
                        action: a,
                        successor: sp,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(Violation::RowNotStochastic {
                    state: s,
                    action: a,
                    sum,
                });
            }
        }
    }

    // Terminal convention: zero reward everywhere; absorbing means a
    // self-loop for stationary MDPs, or terminal-only successors for
    // layered MDPs (where "later" is the next layer).
    for s in 0..s_count {
        if !mdp.terminal[s] {
            continue;
        }
        for a in 0..a_count {
            if mdp.rewards[s][a] != 0.0 {
                violations.push(Violation::TerminalRewardNonzero { state: s, action: a });
            }
            let absorbing = if mdp.is_layered() {
                mdp.transitions[s][a]
                    .iter()
                    .enumerate()
                    .all(|(sp, p)| *p == 0.0 || mdp.terminal[sp])
            } else {
                mdp.transitions[s][a][s] == 1.0
            };
            if !absorbing {
                violations.push(Violation::TerminalNotAbsorbing { state: s, action: a });
            }
        }
    }

    if let Some(layers) = &mdp.layer_of {
        let h = mdp.horizon.unwrap_or(0);
        if layers.len() != s_count {
            violations.push(Violation::BadShape {
                detail: "layer_of has wrong length".into(),
            });
        } else {
            for s in 0..s_count {
                if layers[s] > h {
                    violations.push(Violation::LayerOutOfRange {
                        state: s,
                        layer: layers[s],
                    });
                    continue;
                }
                if layers[s] == h && !mdp.terminal[s] {
                    violations.push(Violation::LastLayerNotTerminal { state: s });
                }
                if layers[s] < h {
                    for a in 0..a_count {
                        for (sp, p) in mdp.transitions[s][a].iter().enumerate() {
                            if *p > 0.0 && layers[sp] != layers[s] + 1 {
                                violations.push(Violation::LayerSkip {
                                    state: s,
                                    action: a,
                                    successor: sp,
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let start_sum: f64 = mdp.start_dist.iter().sum();
    if (start_sum - 1.0).abs() > ROW_SUM_TOL {
        violations.push(Violation::StartDistNotStochastic { sum: start_sum });
    }
    for s in 0..s_count {
        if mdp.start_dist[s] < 0.0 {
            violations.push(Violation::StartDistNegative { state: s });
        }
        if let Some(layers) = &mdp.layer_of {
            if mdp.start_dist[s] > 0.0 && layers[s] != 0 {
                violations.push(Violation::StartOffLayerZero { state: s });
            }
        }
    }

    ValidationReport { violations }
}

/// Folds the decision time into the state, turning a stationary MDP into a
/// layered DAG with `(H + 1) * num_states` states. State `(t, s)` gets index
/// `t * num_states + s`; all layer-`H` states are terminal.
pub fn time_augment(mdp: &FiniteMdp, horizon: usize) -> Result<FiniteMdp, MdpError> {
    if mdp.is_layered() {
        return Err(MdpError::NotStationary);
    }
    if horizon == 0 {
        return Err(MdpError::InvalidHorizon(horizon));
    }
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let n = (horizon + 1) * s_count;
    let idx = |t: usize, s: usize| t * s_count + s;

    let mut transitions = vec![vec![vec![0.0; n]; a_count]; n];
    let mut rewards = vec![vec![0.0; a_count]; n];
    let mut terminal = vec![false; n];
    let mut layer_of = vec![0usize; n];
    let mut start_dist = vec![0.0; n];

    for t in 0..=horizon {
        for s in 0..s_count {
            let i = idx(t, s);
            layer_of[i] = t;
            if t == horizon {
                terminal[i] = true;
                for a in 0..a_count {
                    transitions[i][a][i] = 1.0;
                }
            } else if mdp.terminal[s] {
                // Absorbing in base space: advance to the same state one
                // layer later with zero reward.
                terminal[i] = true;
                for a in 0..a_count {
                    transitions[i][a][idx(t + 1, s)] = 1.0;
                }
            } else {
                for a in 0..a_count {
                    rewards[i][a] = mdp.rewards[s][a];
                    for (sp, p) in mdp.transitions[s][a].iter().enumerate() {
                        if *p > 0.0 {
                            transitions[i][a][idx(t + 1, sp)] = *p;
                        }
                    }
                }
            }
        }
    }
    for s in 0..s_count {
        start_dist[idx(0, s)] = mdp.start_dist[s];
    }

    Ok(FiniteMdp::new(
        transitions,
        rewards,
        mdp.discount,
        start_dist,
        terminal,
        Some(horizon),
        Some(layer_of),
    ))
}
