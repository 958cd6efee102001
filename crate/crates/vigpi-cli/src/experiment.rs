//! Experiment configs and their execution: resolving MDP sources, running
//! repeats, and sweeping one parameter across a value grid.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use vigpi_core::dp::{optimal_values, optimal_values_discounted};
use vigpi_core::engine::{gpi_run, vigpi_run, EngineConfig, RunTrace};
use vigpi_core::instances::{build_counterexample, build_grid_world, random_layered_mdp};
use vigpi_core::io::{self, SummaryRow};
use vigpi_core::mdp::time_augment;
use vigpi_core::operators::{OperatorConfig, OperatorKind};
use vigpi_core::{FiniteMdp, QTable};

use crate::CliError;

/// Where the MDP comes from: a named builtin or a document on disk. Either
/// form may be time-augmented afterwards.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub params: BuiltinParams,
    #[serde(default)]
    pub augment_horizon: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub goal_reward: Option<f64>,
    pub step_reward: Option<f64>,
    pub discount: Option<f64>,
    pub layers: Option<usize>,
    pub states_per_layer: Option<usize>,
    pub actions: Option<usize>,
    pub seed: Option<u64>,
}

impl MdpSource {
    pub fn builtin(name: &str) -> Self {
        MdpSource {
            builtin: Some(name.to_string()),
            file: None,
            params: BuiltinParams::default(),
            augment_horizon: None,
        }
    }

    pub fn from_path(path: PathBuf) -> Self {
        MdpSource {
            builtin: None,
            file: Some(path),
            params: BuiltinParams::default(),
            augment_horizon: None,
        }
    }

    pub fn resolve(&self) -> Result<FiniteMdp, CliError> {
        let mdp = match (&self.builtin, &self.file) {
            (Some(name), None) => self.resolve_builtin(name)?,
            (None, Some(path)) => io::read_mdp(fs::File::open(path).map_err(|e| {
                CliError::Config(format!("cannot open MDP file {}: {e}", path.display()))
            })?)
            .map_err(|e| CliError::Config(format!("bad MDP file {}: {e}", path.display())))?,
            _ => {
                return Err(CliError::Config(
                    "mdp source needs exactly one of `builtin` or `file`".into(),
                ))
            }
        };
        match self.augment_horizon {
            Some(h) => time_augment(&mdp, h)
                .map_err(|e| CliError::Config(format!("cannot time-augment: {e}"))),
            None => Ok(mdp),
        }
    }

    fn resolve_builtin(&self, name: &str) -> Result<FiniteMdp, CliError> {
        let p = &self.params;
        match name {
            "two_action" | "branching" => Ok(build_counterexample(name)
                .expect("known instance")
                .mdp()
                .expect("MDP-backed instance")
                .clone()),
            "oscillating" => Err(CliError::Config(
                "`oscillating` is a q-sequence, not an MDP; it has no oracle or engine form"
                    .into(),
            )),
            "grid_world" => build_grid_world(
                p.width.unwrap_or(5),
                p.height.unwrap_or(5),
                p.goal_reward.unwrap_or(1.0),
                p.step_reward.unwrap_or(0.0),
                p.discount.unwrap_or(0.99),
            )
            .map_err(|e| CliError::Config(e.to_string())),
            "random_layered" => random_layered_mdp(
                p.layers.unwrap_or(4),
                p.states_per_layer.unwrap_or(5),
                p.actions.unwrap_or(3),
                p.seed.unwrap_or(0),
            )
            .map_err(|e| CliError::Config(e.to_string())),
            other => Err(CliError::Config(format!("unknown builtin MDP `{other}`"))),
        }
    }
}

fn default_repeats() -> usize {
    1
}

fn default_emit() -> Vec<Emit> {
    vec![Emit::Trace, Emit::Summary]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Trace,
    Summary,
    Policy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub engine: EngineConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<Emit>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("malformed config {}: {e}", path.display())))?;
        if config.repeats < 1 {
            return Err(CliError::Config("repeats must be >= 1".into()));
        }
        Ok(config)
    }

    /// The base seed, unless VIGPI_SEED overrides it.
    pub fn effective_base_seed(&self) -> Result<u64, CliError> {
        match std::env::var("VIGPI_SEED") {
            Ok(text) => text
                .parse()
                .map_err(|_| CliError::Config(format!("VIGPI_SEED is not a u64: {text}"))),
            Err(_) => Ok(self.base_seed),
        }
    }
}

/// Offsets the seeds of sampled operators by the run seed, keeping repeats
/// distinct but reproducible.
fn seed_engine_config(engine: &EngineConfig, run_seed: u64) -> EngineConfig {
    let mut out = engine.clone();
    let offset = |op: &mut OperatorConfig| {
        if let Some(seed) = op.seed {
            op.seed = Some(seed.wrapping_add(run_seed));
        } else if matches!(op.kind, OperatorKind::BonSampled | OperatorKind::RandomSearch) {
            op.seed = Some(run_seed);
        }
    };
    offset(&mut out.improvement_op);
    if let Some(op) = &mut out.value_improvement_op {
        offset(op);
    }
    out
}

/// The exact optimum used for q_error diagnostics: backward induction on
/// layered MDPs, a tight value-iteration fixed point on discounted
/// stationary ones.
pub fn oracle_for(mdp: &FiniteMdp) -> Result<QTable, CliError> {
    let (q_star, _) = if mdp.is_layered() {
        optimal_values(mdp).map_err(CliError::from_engine_dp)?
    } else {
        optimal_values_discounted(mdp, 1e-10).map_err(CliError::from_engine_dp)?
    };
    Ok(q_star)
}

pub fn execute_engine(
    mdp: &FiniteMdp,
    engine: &EngineConfig,
    oracle: Option<&QTable>,
) -> Result<RunTrace, CliError> {
    let result = if engine.value_improvement_op.is_some() {
        vigpi_run(mdp, engine, oracle)
    } else {
        gpi_run(mdp, engine, oracle)
    };
    result.map_err(CliError::from_engine)
}


/// Executes one engine configuration `repeats` times with consecutive seeds
/// and writes the requested artifacts under `output_dir`.
pub fn run_cells(
    config: &ExperimentConfig,
    cells: &[(String, EngineConfig)],
) -> Result<Vec<SummaryRow>, CliError> {
    let mdp = config.mdp.resolve()?;
    let oracle = oracle_for(&mdp)?;
    let base_seed = config.effective_base_seed()?;
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;

    let mut rows = Vec::new();
    for (cell_id, engine) in cells {
        for repeat in 0..config.repeats {
            let run_seed = base_seed.wrapping_add(repeat as u64);
            let seeded = seed_engine_config(engine, run_seed);
            let run_id = format!("{cell_id}r{repeat:03}");
            let trace = execute_engine(&mdp, &seeded, Some(&oracle))?;
            let row = SummaryRow::from_trace(run_id.clone(), run_seed, &trace);

            if config.emit.contains(&Emit::Trace) {
                let path = config.output_dir.join(format!("{run_id}.jsonl"));
                let file = fs::File::create(&path)
                    .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
                io::write_trace(std::io::BufWriter::new(file), &trace)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            if config.emit.contains(&Emit::Policy) {
                let path = config.output_dir.join(format!("{run_id}_policy.json"));
                let text = serde_json::to_string_pretty(&trace.final_policy)
                    .expect("policies serialize");
                fs::write(&path, text)
                    .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
            }
            rows.push(row);
        }
    }

    if config.emit.contains(&Emit::Summary) {
        let path = config.output_dir.join("summary.csv");
        fs::write(&path, io::summary_csv(&rows))
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(rows)
}

/// The sweepable parameters: engine-level `k`, or an operator parameter
/// applied to whichever configured operator takes it (the acting operator
/// first, the value-improvement operator otherwise).
pub fn apply_sweep_value(
    engine: &EngineConfig,
    param: &str,
    raw: &str,
) -> Result<EngineConfig, CliError> {
    let mut out = engine.clone();
    let parse_f64 = |raw: &str| -> Result<f64, CliError> {
        raw.parse()
            .map_err(|_| CliError::Config(format!("value `{raw}` is not a number")))
    };
    let parse_usize = |raw: &str| -> Result<usize, CliError> {
        raw.parse()
            .map_err(|_| CliError::Config(format!("value `{raw}` is not an integer")))
    };
    match param {
        "k" => out.k = parse_usize(raw)?,
        "beta" | "vi_beta" | "tau" | "n_samples" => {
            let value_side = param == "vi_beta" || {
                let takes = |op: &OperatorConfig| match param {
                    "beta" => op.kind == OperatorKind::Gmz,
                    "tau" => op.kind == OperatorKind::Expectile,
                    "n_samples" => {
                        matches!(op.kind, OperatorKind::BonExact | OperatorKind::BonSampled)
                    }
                    _ => false,
                };
                !takes(&out.improvement_op)
            };
            let op = if value_side {
                out.value_improvement_op.as_mut().ok_or_else(|| {
                    CliError::Config(format!(
                        "no configured operator takes `{param}`"
                    ))
                })?
            } else {
                &mut out.improvement_op
            };
            match param {
                "beta" | "vi_beta" => op.beta = Some(parse_f64(raw)?),
                "tau" => op.tau = Some(parse_f64(raw)?),
                "n_samples" => op.n_samples = Some(parse_usize(raw)?),
                _ => unreachable!(),
            }
            op.validate()
                .map_err(|e| CliError::Config(format!("sweep value `{raw}`: {e}")))?;
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep parameter `{other}` (expected beta, vi_beta, tau, n_samples, or k)"
            )))
        }
    }
    Ok(out)
}
