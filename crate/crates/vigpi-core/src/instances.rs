//! Builders for the catalog of test instances: the two-action and branching
//! counterexample MDPs, the alternating q-value sequence, a deterministic
//! grid world, and a seeded random layered-MDP generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::MdpError;
use crate::mdp::FiniteMdp;
use crate::policy::TabularPolicy;
use crate::value::QTable;

/// A sequence of q-tables with a declared limit, consumed by the
/// limit-sufficiency checks. Random access by index keeps every sequence
/// deterministic.
#[derive(Debug, Clone, Serialize)]
pub enum QSequence {
    /// The constant sequence `q_n = q`.
    Constant { q: QTable },
    /// `q_n = limit + amplitude * r^n`, with the sign flipped every step in
    /// alternating mode: `q_n = limit + amplitude * (-1)^n * r^n`. The decay
    /// stops at `floor` (0 for a pure power law): a perturbation below the
    /// ulp of the limit would be absorbed outright in f64, erasing the strict
    /// order the sequence is built to carry, so sequences that must keep
    /// alternating verbatim use a floor far above the ulp and far below every
    /// comparison tolerance.
    PowerDecay {
        limit: QTable,
        amplitude: QTable,
        ratio: f64,
        alternating: bool,
        floor: f64,
    },
    /// `q_n = limit + decay^n * u_n` with `u_n` uniform in `[-scale, scale]`
    /// drawn per index from the seed.
    RandomDecay {
        limit: QTable,
        scale: f64,
        decay: f64,
        seed: u64,
    },
}

impl QSequence {
    pub fn at(&self, n: usize) -> QTable {
        match self {
            QSequence::Constant { q } => q.clone(),
            QSequence::PowerDecay {
                limit,
                amplitude,
                ratio,
                alternating,
                floor,
            } => {
                let sign = if *alternating && n % 2 == 1 { -1.0 } else { 1.0 };
                let scale = sign * ratio.powi(n as i32).max(*floor);
                let rows = limit
                    .rows()
                    .iter()
                    .zip(amplitude.rows())
                    .map(|(l, amp)| {
                        l.iter().zip(amp).map(|(x, d)| x + scale * d).collect()
                    })
                    .collect();
                QTable::from_rows_unchecked(rows)
            }
            QSequence::RandomDecay {
                limit,
                scale,
                decay,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
                let factor = decay.powi(n as i32);
                let rows = limit
                    .rows()
                    .iter()
                    .map(|l| {
                        l.iter()
                            .map(|x| x + factor * rng.random_range(-*scale..=*scale))
                            .collect()
                    })
                    .collect();
                QTable::from_rows_unchecked(rows)
            }
        }
    }

    pub fn limit(&self) -> &QTable {
        match self {
            QSequence::Constant { q } => q,
            QSequence::PowerDecay { limit, .. } => limit,
            QSequence::RandomDecay { limit, .. } => limit,
        }
    }
}

/// A named counterexample instance.
#[derive(Debug, Clone)]
pub enum Counterexample {
    /// Two actions from a single start state with rewards (1, 2); `Q^pi` is
    /// the same for every policy.
    TwoAction { mdp: FiniteMdp, pi0: TabularPolicy },
    /// The 10-state branching MDP whose optimal action at the root looks
    /// worst under the starting policy's evaluation.
    Branching { mdp: FiniteMdp, pi0: TabularPolicy },
    /// The alternating q-sequence with limit (1, 1, 2); the object here is a
    /// sequence, not an MDP.
    Oscillating {
        sequence: QSequence,
        pi0: TabularPolicy,
    },
}

impl Counterexample {
    pub fn mdp(&self) -> Option<&FiniteMdp> {
        match self {
            Counterexample::TwoAction { mdp, .. } => Some(mdp),
            Counterexample::Branching { mdp, .. } => Some(mdp),
            Counterexample::Oscillating { .. } => None,
        }
    }

    pub fn pi0(&self) -> &TabularPolicy {
        match self {
            Counterexample::TwoAction { pi0, .. } => pi0,
            Counterexample::Branching { pi0, .. } => pi0,
            Counterexample::Oscillating { pi0, .. } => pi0,
        }
    }
}

/// Builds one of the named counterexample instances:
/// `two_action`, `branching`, or `oscillating`.
pub fn build_counterexample(name: &str) -> Result<Counterexample, MdpError> {
    match name {
        "two_action" => Ok(build_two_action()),
        "branching" => Ok(build_branching()),
        "oscillating" => Ok(build_oscillating()),
        other => Err(MdpError::UnknownInstance(other.to_string())),
    }
}

fn build_two_action() -> Counterexample {
    // s0 --a1/r=1--> s1, s0 --a2/r=2--> s2; s1, s2 terminal.
    let n = 3;
    let mut transitions = vec![vec![vec![0.0; n]; 2]; n];
    transitions[0][0][1] = 1.0;
    transitions[0][1][2] = 1.0;
    for s in 1..n {
        for a in 0..2 {
            transitions[s][a][s] = 1.0;
        }
    }
    let rewards = vec![vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]];
    let mdp = FiniteMdp::new(
        transitions,
        rewards,
        1.0,
        vec![1.0, 0.0, 0.0],
        vec![false, true, true],
        Some(1),
        Some(vec![0, 1, 1]),
    );
    Counterexample::TwoAction {
        mdp,
        pi0: TabularPolicy::uniform(3, 2),
    }
}

fn build_branching() -> Counterexample {
    // States s1..s10 as indices 0..9. Root 0 branches to 1, 2, 3; those
    // branch into terminal states 4..9. Unspecified third actions duplicate
    // the second transition with zero reward.
    let n = 10;
    let a = 3;
    let mut transitions = vec![vec![vec![0.0; n]; a]; n];
    let mut rewards = vec![vec![0.0; a]; n];

    transitions[0][0][1] = 1.0;
    transitions[0][1][2] = 1.0;
    transitions[0][2][3] = 1.0;

    // (state, [targets per action], [rewards per action])
    let inner: [(usize, [usize; 3], [f64; 3]); 3] = [
        (1, [4, 5, 5], [2.0, -1.0, 0.0]),
        (2, [6, 7, 7], [1.0, 0.0, 0.0]),
        (3, [8, 9, 9], [3.0, -2.0, 0.0]),
    ];
    for (s, targets, rews) in inner {
        for act in 0..a {
            transitions[s][act][targets[act]] = 1.0;
            rewards[s][act] = rews[act];
        }
    }
    for s in 4..n {
        for act in 0..a {
            transitions[s][act][s] = 1.0;
        }
    }

    let mut start = vec![0.0; n];
    start[0] = 1.0;
    let mut terminal = vec![false; n];
    for flag in terminal.iter_mut().skip(4) {
        *flag = true;
    }
    let mut layer_of = vec![2usize; n];
    layer_of[0] = 0;
    for l in layer_of.iter_mut().take(4).skip(1) {
        *l = 1;
    }

    let mdp = FiniteMdp::new(
        transitions,
        rewards,
        1.0,
        start,
        terminal,
        Some(2),
        Some(layer_of),
    );
    // pi0: a1 at the root, a2 at the three inner states.
    let pi0 = TabularPolicy::deterministic(a, &[0, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
    Counterexample::Branching { mdp, pi0 }
}

fn build_oscillating() -> Counterexample {
    let limit = QTable::from_rows_unchecked(vec![vec![1.0, 1.0, 2.0]]);
    let amplitude = QTable::from_rows_unchecked(vec![vec![1.0, -1.0, 0.0]]);
    let sequence = QSequence::PowerDecay {
        limit,
        amplitude,
        ratio: 0.5,
        alternating: true,
        floor: 1e-12,
    };
    Counterexample::Oscillating {
        sequence,
        pi0: TabularPolicy::deterministic(3, &[1]),
    }
}

/// Grid-world action order: up, down, left, right.
pub const GRID_ACTIONS: usize = 4;

/// A deterministic grid world: start at the top-left, absorbing goal at the
/// bottom-right paying `goal_reward` on entry, walls absorb the move.
/// Stationary; the default instance is 5x5 with goal 1, step 0, gamma 0.99.
pub fn build_grid_world(
    width: usize,
    height: usize,
    goal_reward: f64,
    step_reward: f64,
    discount: f64,
) -> Result<FiniteMdp, MdpError> {
    if width < 2 || height < 2 {
        return Err(MdpError::DegenerateDimensions(format!(
            "grid must be at least 2x2, got {width}x{height}"
        )));
    }
    let n = width * height;
    let goal = n - 1;
    let idx = |row: usize, col: usize| row * width + col;

    let mut transitions = vec![vec![vec![0.0; n]; GRID_ACTIONS]; n];
    let mut rewards = vec![vec![0.0; GRID_ACTIONS]; n];
    for row in 0..height {
        for col in 0..width {
            let s = idx(row, col);
            if s == goal {
                for a in 0..GRID_ACTIONS {
                    transitions[s][a][s] = 1.0;
                }
                continue;
            }
            // up, down, left, right; a blocked move stays in place.
            let targets = [
                if row > 0 { idx(row - 1, col) } else { s },
                if row + 1 < height { idx(row + 1, col) } else { s },
                if col > 0 { idx(row, col - 1) } else { s },
                if col + 1 < width { idx(row, col + 1) } else { s },
            ];
            for (a, &t) in targets.iter().enumerate() {
                transitions[s][a][t] = 1.0;
                rewards[s][a] = if t == goal { goal_reward } else { step_reward };
            }
        }
    }

    let mut start = vec![0.0; n];
    start[0] = 1.0;
    let mut terminal = vec![false; n];
    terminal[goal] = true;

    Ok(FiniteMdp::new(
        transitions,
        rewards,
        discount,
        start,
        terminal,
        None,
        None,
    ))
}

/// The default grid world of the iteration experiments.
pub fn build_grid_world_default() -> FiniteMdp {
    build_grid_world(5, 5, 1.0, 0.0, 0.99).expect("default grid dimensions are valid")
}

/// A seeded random layered DAG: `layers` decision layers of
/// `states_per_layer` states each plus a terminal layer. Rewards are uniform
/// in [-1, 1] and each transition row is a normalized vector of uniform
/// draws, so all rows have full support over the next layer.
pub fn random_layered_mdp(
    layers: usize,
    states_per_layer: usize,
    actions: usize,
    seed: u64,
) -> Result<FiniteMdp, MdpError> {
    if layers < 1 || states_per_layer < 1 || actions < 1 {
        return Err(MdpError::DegenerateDimensions(format!(
            "layers={layers}, states_per_layer={states_per_layer}, actions={actions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (layers + 1) * states_per_layer;
    let idx = |t: usize, i: usize| t * states_per_layer + i;

    let mut transitions = vec![vec![vec![0.0; n]; actions]; n];
    let mut rewards = vec![vec![0.0; actions]; n];
    let mut terminal = vec![false; n];
    let mut layer_of = vec![0usize; n];

    for t in 0..=layers {
        for i in 0..states_per_layer {
            let s = idx(t, i);
            layer_of[s] = t;
            if t == layers {
                terminal[s] = true;
                for a in 0..actions {
                    transitions[s][a][s] = 1.0;
                }
                continue;
            }
            for a in 0..actions {
                rewards[s][a] = rng.random_range(-1.0..=1.0);
                let draws: Vec<f64> =
                    (0..states_per_layer).map(|_| rng.random::<f64>()).collect();
                let total: f64 = draws.iter().sum();
                for (j, d) in draws.iter().enumerate() {
                    transitions[s][a][idx(t + 1, j)] = d / total;
                }
            }
        }
    }

    let start = (0..n)
        .map(|s| {
            if layer_of[s] == 0 {
                1.0 / states_per_layer as f64
            } else {
                0.0
            }
        })
        .collect();

    Ok(FiniteMdp::new(
        transitions,
        rewards,
        1.0,
        start,
        terminal,
        Some(layers),
        Some(layer_of),
    ))
}
