use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::datagen::{
    gen_ground_truth, gen_logical_weights, gen_mixing_matrix, gen_streams, GroundTruth, LogicalWeights, MixingMatrix,
};
use crate::graph::{build_steiner_tree, build_topology, parse_edge_list, AgentId, Topology, TopologySpec};
use crate::protocols::{run_protocol, EngineStats, Protocol, ProtocolSetup, Routing};
use crate::regret::{compute_regret, empirical_lipschitz, hindsight_optimum, BoundConstants, RegretTrace};
use crate::seed;

use super::config::{RunConfig, TopologySource, WeightsMode};
use super::output::{self, Manifest};
use super::HarnessError;

/// The physical graph for a configuration. It depends on the master seed
/// only, so every seed and sweep point of a run shares it.
pub fn build_topology_for(cfg: &RunConfig) -> Result<Topology, HarnessError> {
    let spec = match &cfg.topology {
        TopologySource::Generator(spec) => spec.clone(),
        TopologySource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            TopologySpec::EdgeList(parse_edge_list(&text)?)
        }
    };
    Ok(build_topology(cfg.n_agents, &spec, seed::derive_seed(cfg.seed, "physical-graph", 0))?)
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub protocol: Protocol,
    pub trace: RegretTrace,
    pub engine_stats: Option<EngineStats>,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub seed_value: u64,
    pub stream_digest: String,
    pub weights: LogicalWeights,
    pub ground_truth: GroundTruth,
    pub mixing: MixingMatrix,
    /// Second-largest singular value of the mixing matrix.
    pub alpha: f64,
    pub constants: BoundConstants,
    pub comparators_converged: usize,
    pub max_stationarity: f64,
    pub protocols: Vec<ProtocolOutcome>,
}

impl SeedOutcome {
    pub fn outcome(&self, protocol: Protocol) -> Option<&ProtocolOutcome> {
        self.protocols.iter().find(|p| p.protocol == protocol)
    }

    pub fn final_regret(&self, protocol: Protocol) -> Option<f64> {
        self.outcome(protocol).map(|p| p.trace.final_regret())
    }
}

/// Generates the data of seed `seed_index`, runs every configured protocol
/// on it, and evaluates regret against the shared comparators.
pub fn execute_seed(cfg: &RunConfig, topo: &Topology, seed_index: usize) -> Result<SeedOutcome, HarnessError> {
    let seed_value = cfg.seed_value(seed_index);
    let n_agents = cfg.n_agents;
    let kind = cfg.loss_kind();
    let domain = cfg.domain();

    let ground_truth = gen_ground_truth(&cfg.ground_truth_params(), seed_value)?;
    let streams = gen_streams(&ground_truth, cfg.horizon, seed_value, cfg.gate());
    let weights = match cfg.weights {
        WeightsMode::Dirichlet => gen_logical_weights(n_agents, cfg.y0, cfg.y1, seed_value)?,
        WeightsMode::Uniform => LogicalWeights::uniform(n_agents),
        WeightsMode::Identity => LogicalWeights::identity(n_agents),
    };

    let comparators = (0..n_agents)
        .into_par_iter()
        .map(|n| hindsight_optimum(n, &streams, &weights, &kind, &domain))
        .collect::<Result<Vec<_>, _>>()?;
    let comparators_converged = comparators.iter().filter(|c| c.converged).count();
    let max_stationarity = comparators.iter().map(|c| c.stationarity).fold(0.0, f64::max);
    let comparator_matrices: Vec<_> = comparators.into_iter().map(|c| c.matrix).collect();

    let trees = (0..n_agents)
        .map(|n| {
            let terminals: BTreeSet<AgentId> = weights.support(n).into_iter().map(AgentId).collect();
            build_steiner_tree(topo, AgentId(n), &terminals)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let routing = Routing::from_trees(&trees, &weights)?;
    let mixing = gen_mixing_matrix(topo);
    let alpha = mixing.second_singular_value();
    let lipschitz = empirical_lipschitz(&streams, &kind, &domain)?;
    let constants = BoundConstants::assemble(&weights, lipschitz, Some(routing.delays()), domain.diameter(), cfg.c);

    let protocols = cfg
        .protocols
        .par_iter()
        .map(|&protocol| {
            let setup = match protocol {
                Protocol::Ogd => ProtocolSetup::Ogd,
                Protocol::Cdogd => ProtocolSetup::Cdogd(mixing.clone()),
                Protocol::Damtogd => ProtocolSetup::Damtogd { routing: routing.clone(), c: cfg.c },
            };
            let run = run_protocol(&kind, &domain, &streams, &weights, &setup)?;
            let trace = compute_regret(&run, &comparator_matrices, &streams, &weights, &kind)?;
            Ok(ProtocolOutcome {
                protocol,
                trace,
                engine_stats: run.engine_stats,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    Ok(SeedOutcome {
        seed_index,
        seed_value,
        stream_digest: streams.digest(),
        weights,
        ground_truth,
        mixing,
        alpha,
        constants,
        comparators_converged,
        max_stationarity,
        protocols,
    })
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub run_id: String,
    pub topology: Topology,
    pub seeds: Vec<Result<SeedOutcome, HarnessError>>,
    /// Set when results were written to disk.
    pub manifest_path: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn completed(&self) -> impl Iterator<Item = &SeedOutcome> {
        self.seeds.iter().filter_map(|s| s.as_ref().ok())
    }
}

/// Runs every seed of `cfg` (in parallel) and, when `out_dir` is given,
/// writes one trace CSV per protocol, the constants table, the physical
/// graph, the canonical config and a manifest. A failing seed is recorded in
/// the manifest and omitted from the traces.
pub fn run_experiment(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let topology = build_topology_for(cfg)?;
    let seeds: Vec<Result<SeedOutcome, HarnessError>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| execute_seed(cfg, &topology, i))
        .collect();
    let run_id = cfg.hash()[..12].to_string();
    let mut report = ExperimentReport {
        config: cfg.clone(),
        run_id,
        topology,
        seeds,
        manifest_path: None,
    };
    if let Some(dir) = out_dir {
        report.manifest_path = Some(output::write_experiment(&report, dir)?);
    }
    Ok(report)
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Horizon,
    Rho,
    Y0,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Horizon => "T",
            SweepAxis::Rho => "rho",
            SweepAxis::Y0 => "y0",
        }
    }

    /// The configuration at one sweep value.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig, HarnessError> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Horizon => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= 1e9) {
                    return Err(HarnessError::invalid("T", "sweep values must be positive integers"));
                }
                cfg.horizon = value as usize;
            }
            SweepAxis::Rho => cfg.rho = value,
            SweepAxis::Y0 => cfg.y0 = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "T" | "t" | "horizon" => Ok(SweepAxis::Horizon),
            "rho" => Ok(SweepAxis::Rho),
            "y0" => Ok(SweepAxis::Y0),
            _ => Err(HarnessError::invalid("axis", "must be T, rho or y0")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub protocol: Protocol,
    pub seed_index: usize,
    pub seed_value: u64,
    pub horizon: usize,
    pub final_regret: f64,
    pub stream_digest: String,
    pub weights_digest: String,
}

#[derive(Debug)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub failures: Vec<(f64, usize, HarnessError)>,
    pub manifest_path: Option<PathBuf>,
}

impl SweepReport {
    /// Final regrets at `value` for `protocol`, in seed order.
    pub fn regrets(&self, value: f64, protocol: Protocol) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.value == value && p.protocol == protocol)
            .map(|p| p.final_regret)
            .collect()
    }
}

/// Runs `base` at every value of `axis`, all seeds and protocols, keeping
/// the final regret of each run.
pub fn run_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<SweepReport, HarnessError> {
    base.validate()?;
    if values.is_empty() {
        return Err(HarnessError::invalid("values", "sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let topology = build_topology_for(base)?;
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|vi| (0..base.seeds).map(move |s| (vi, s)))
        .collect();
    let results: Vec<Result<Vec<SweepPoint>, HarnessError>> = jobs
        .par_iter()
        .map(|&(vi, s)| {
            let cfg = &configs[vi];
            let outcome = execute_seed(cfg, &topology, s)?;
            let weights_digest = outcome.weights.digest();
            Ok(outcome
                .protocols
                .iter()
                .map(|p| SweepPoint {
                    value: values[vi],
                    protocol: p.protocol,
                    seed_index: s,
                    seed_value: outcome.seed_value,
                    horizon: cfg.horizon,
                    final_regret: p.trace.final_regret(),
                    stream_digest: outcome.stream_digest.clone(),
                    weights_digest: weights_digest.clone(),
                })
                .collect())
        })
        .collect();

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (&(vi, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(p) => points.extend(p),
            Err(e) => failures.push((values[vi], s, e)),
        }
    }
    // (value order, protocol order, seed)
    let order = |p: &SweepPoint| {
        let vi = values.iter().position(|&v| v == p.value).unwrap();
        let pi = base.protocols.iter().position(|&q| q == p.protocol).unwrap();
        (vi, pi, p.seed_index)
    };
    points.sort_by_key(order);

    let mut report = SweepReport {
        axis,
        values: values.to_vec(),
        points,
        failures,
        manifest_path: None,
    };
    if let Some(dir) = out_dir {
        report.manifest_path = Some(output::write_sweep(base, &report, dir)?);
    }
    Ok(report)
}

pub(crate) fn manifest_seed_entries(m: &mut Manifest, outcome: &SeedOutcome) {
    let i = outcome.seed_index;
    m.push(format!("seed.{i}.status"), "ok");
    m.push(format!("seed.{i}.value"), outcome.seed_value.to_string());
    m.push(format!("seed.{i}.stream_digest"), outcome.stream_digest.clone());
    m.push(format!("seed.{i}.weights_digest"), outcome.weights.digest());
    m.push(format!("seed.{i}.weights_uniform"), outcome.weights.is_uniform().to_string());
    m.push(format!("seed.{i}.alpha"), output::fmt_float(outcome.alpha));
    m.push(format!("seed.{i}.one_minus_alpha"), output::fmt_float(1.0 - outcome.alpha));
    m.push(
        format!("seed.{i}.second_eigenvalue_modulus"),
        output::fmt_float(outcome.mixing.second_eigenvalue_modulus()),
    );
    m.push(
        format!("seed.{i}.comparators_converged"),
        format!("{}/{}", outcome.comparators_converged, outcome.weights.n_agents()),
    );
    m.push(format!("seed.{i}.max_stationarity"), output::fmt_float(outcome.max_stationarity));
    for p in &outcome.protocols {
        m.push(format!("seed.{i}.regret.{}", p.protocol), output::fmt_float(p.trace.final_regret()));
    }
}
