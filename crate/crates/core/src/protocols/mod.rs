//! Online learners over the agent network.
//!
//! * [`Protocol::Ogd`]: full-information projected OGD. Agent `n` sees every
//!   loss at round `t` and steps along `Σ_m w[n][m] ∇f_{m,t}(X_{n,t})`.
//! * [`Protocol::Cdogd`]: consensus averaging with a doubly stochastic
//!   matrix, then a local gradient step.
//! * [`Protocol::Damtogd`]: OGD on the weighted sum of gradients that have
//!   completed their round trip over the routing trees; see [`engine`].
//!
//! All learners start from the zero matrix and project onto the domain ball
//! after every step.

pub mod engine;
pub mod schedule;

use thiserror::Error;

use crate::datagen::{LogicalWeights, MixingMatrix, Streams};
use crate::losses::{loss_eval, loss_grad, DataPoint, DomainBall, LossError, LossKind, Matrix};

pub use engine::{DamTogdEngine, EngineStats, GradientMessage, IterateMessage, Message, Routing};
pub use schedule::{learning_rate, Protocol, ScheduleParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("gradient from agent {m} expected at agent {n} for round {t} never arrived")]
    MissingArrival { n: usize, m: usize, t: usize },
    #[error("gradient from agent {m} to agent {n} (data round {data_round}) arrived at round {arrived}, expected {expected}")]
    Timing {
        n: usize,
        m: usize,
        data_round: usize,
        arrived: usize,
        expected: usize,
    },
    #[error("agent {n} received two gradients from agent {m} in round {t}")]
    DuplicateArrival { n: usize, m: usize, t: usize },
    #[error("{what}: expected {expected} agents, got {got}")]
    AgentCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("setup for {setup} cannot drive protocol {protocol}")]
    SetupMismatch { setup: &'static str, protocol: Protocol },
}

/// Weighted projected gradient step:
/// `Π[X - η Σ_i w_i g_i]`, summing terms in the order given.
pub fn ogd_step<'g>(
    x: &Matrix,
    eta: f64,
    terms: impl IntoIterator<Item = (f64, &'g Matrix)>,
    domain: &DomainBall,
) -> Result<Matrix, ProtocolError> {
    let mut acc = Matrix::zeros(x.nrows(), x.ncols());
    for (w, g) in terms {
        acc += g * w;
    }
    Ok(domain.project(x - &acc * eta)?)
}

/// Full-information update of agent `n` at round `t` (1-based), with
/// `points[m]` the data of every agent at that round.
pub fn ogd_agent_step(
    kind: &LossKind,
    x: &Matrix,
    n: usize,
    t: usize,
    weights: &LogicalWeights,
    points: &[&DataPoint],
    domain: &DomainBall,
) -> Result<Matrix, ProtocolError> {
    let support = weights.support(n);
    let grads = support
        .iter()
        .map(|&m| loss_grad(kind, x, points[m]))
        .collect::<Result<Vec<_>, _>>()?;
    let eta = 1.0 / (t as f64).sqrt();
    ogd_step(
        x,
        eta,
        support.iter().zip(&grads).map(|(&m, g)| (weights.weight(n, m), g)),
        domain,
    )
}

/// One synchronous consensus round: every agent mixes the round-`t` iterates
/// of its neighbors with `A`, subtracts `η_n ∇f_{n,t}(X_{n,t})`, and projects.
pub fn cdogd_step(
    kind: &LossKind,
    states: &[Matrix],
    mixing: &MixingMatrix,
    etas: &[f64],
    points: &[&DataPoint],
    domain: &DomainBall,
) -> Result<Vec<Matrix>, ProtocolError> {
    let n_agents = states.len();
    if mixing.n_agents() != n_agents {
        return Err(ProtocolError::AgentCount { what: "mixing matrix", expected: n_agents, got: mixing.n_agents() });
    }
    (0..n_agents)
        .map(|n| {
            let mut mixed = Matrix::zeros(states[n].nrows(), states[n].ncols());
            for (m, state) in states.iter().enumerate() {
                let a = mixing.weight(n, m);
                if a > 0.0 {
                    mixed += state * a;
                }
            }
            let g = loss_grad(kind, &states[n], points[n])?;
            Ok(domain.project(mixed - &g * etas[n])?)
        })
        .collect()
}

/// What a protocol needs beyond streams and weights.
#[derive(Debug, Clone)]
pub enum ProtocolSetup {
    Ogd,
    Cdogd(MixingMatrix),
    Damtogd { routing: Routing, c: f64 },
}

impl ProtocolSetup {
    pub fn protocol(&self) -> Protocol {
        match self {
            ProtocolSetup::Ogd => Protocol::Ogd,
            ProtocolSetup::Cdogd(_) => Protocol::Cdogd,
            ProtocolSetup::Damtogd { .. } => Protocol::Damtogd,
        }
    }
}

/// Trajectory and per-round losses of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub protocol: Protocol,
    /// `iterates[n][r]` is `X_{n, r+1}`; one entry per round.
    pub iterates: Vec<Vec<Matrix>>,
    /// `supports[n]`: the agents whose losses enter agent `n`'s objective.
    pub supports: Vec<Vec<usize>>,
    /// `source_losses[n][r * |support| + j]` is `f_{m_j, r+1}(X_{n, r+1})`.
    pub source_losses: Vec<Vec<f64>>,
    pub engine_stats: Option<EngineStats>,
}

impl RunOutput {
    pub fn horizon(&self) -> usize {
        self.iterates.first().map_or(0, Vec::len)
    }

    /// `f_{m,t}(X_{n,t})` for the `j`-th agent of `n`'s support, round `r`.
    pub fn source_loss(&self, n: usize, r: usize, j: usize) -> f64 {
        self.source_losses[n][r * self.supports[n].len() + j]
    }

    /// `Σ_m w[n][m] f_{m,t}(X_{n,t})` for round `r`.
    pub fn weighted_loss(&self, n: usize, r: usize, weights: &LogicalWeights) -> f64 {
        self.supports[n]
            .iter()
            .enumerate()
            .map(|(j, &m)| weights.weight(n, m) * self.source_loss(n, r, j))
            .sum()
    }
}

fn record_losses(
    kind: &LossKind,
    streams: &Streams,
    supports: &[Vec<usize>],
    iterates: &[Matrix],
    r: usize,
    out: &mut [Vec<f64>],
) -> Result<(), ProtocolError> {
    for (n, x) in iterates.iter().enumerate() {
        for &m in &supports[n] {
            out[n].push(loss_eval(kind, x, streams.point(m, r))?);
        }
    }
    Ok(())
}

/// Runs `protocol` for `streams.horizon()` rounds from `X_1 = 0`.
pub fn run_protocol(
    kind: &LossKind,
    domain: &DomainBall,
    streams: &Streams,
    weights: &LogicalWeights,
    setup: &ProtocolSetup,
) -> Result<RunOutput, ProtocolError> {
    let n_agents = weights.n_agents();
    if streams.n_agents() != n_agents {
        return Err(ProtocolError::AgentCount { what: "streams", expected: n_agents, got: streams.n_agents() });
    }
    let horizon = streams.horizon();
    if horizon == 0 {
        return Err(ProtocolError::EmptyHorizon);
    }
    let first = streams.point(0, 0);
    let init = Matrix::zeros(first.value.len(), first.key.len());
    let supports: Vec<Vec<usize>> = (0..n_agents).map(|n| weights.support(n)).collect();
    let mut iterates: Vec<Vec<Matrix>> = vec![Vec::with_capacity(horizon); n_agents];
    let mut source_losses: Vec<Vec<f64>> = supports
        .iter()
        .map(|s| Vec::with_capacity(s.len() * horizon))
        .collect();
    let mut engine_stats = None;

    match setup {
        ProtocolSetup::Ogd | ProtocolSetup::Cdogd(_) => {
            let mut states = vec![init; n_agents];
            for r in 0..horizon {
                record_losses(kind, streams, &supports, &states, r, &mut source_losses)?;
                for (hist, x) in iterates.iter_mut().zip(&states) {
                    hist.push(x.clone());
                }
                if r + 1 == horizon {
                    break;
                }
                let points: Vec<&DataPoint> = (0..n_agents).map(|m| streams.point(m, r)).collect();
                states = match setup {
                    ProtocolSetup::Ogd => (0..n_agents)
                        .map(|n| ogd_agent_step(kind, &states[n], n, r + 1, weights, &points, domain))
                        .collect::<Result<_, _>>()?,
                    ProtocolSetup::Cdogd(mixing) => {
                        let params = ScheduleParams::new(Protocol::Cdogd, 1.0, vec![0; n_agents]);
                        let etas: Vec<f64> = (0..n_agents).map(|n| learning_rate(&params, n, r + 1)).collect();
                        cdogd_step(kind, &states, mixing, &etas, &points, domain)?
                    }
                    ProtocolSetup::Damtogd { .. } => unreachable!(),
                };
            }
        }
        ProtocolSetup::Damtogd { routing, c } => {
            let mut engine = DamTogdEngine::new(*kind, *domain, *c, streams, weights, routing, &init);
            for r in 0..horizon {
                let states: Vec<Matrix> = (0..n_agents).map(|n| engine.iterate(n).clone()).collect();
                record_losses(kind, streams, &supports, &states, r, &mut source_losses)?;
                for (hist, x) in iterates.iter_mut().zip(states) {
                    hist.push(x);
                }
                if r + 1 < horizon {
                    engine.step()?;
                }
            }
            engine_stats = Some(engine.stats().clone());
        }
    }

    Ok(RunOutput {
        protocol: setup.protocol(),
        iterates,
        supports,
        source_losses,
        engine_stats,
    })
}
