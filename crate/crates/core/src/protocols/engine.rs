//! Round-stepped message engine for tree-routed delayed OGD.
//!
//! Every round, each agent `n` snapshots its iterate and sends it down its
//! routing tree to every `m` it must memorize. Messages advance one hop per
//! round; relays never read them. When a snapshot reaches `m` it evaluates
//! the gradient of its loss for the snapshot's round and sends it back along
//! the reversed path. Gradients evaluated on data of round `t'` therefore
//! reach `n` exactly at round `t' + τ[n][m]`, where they enter the weighted
//! projected update together with `n`'s own undelayed gradient.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::datagen::{LogicalWeights, Streams};
use crate::graph::{DelayTable, GraphError, RoutingTree};
use crate::losses::{loss_grad, DomainBall, LossKind, Matrix};

use super::schedule::{learning_rate, ScheduleParams};
use super::ProtocolError;

/// Snapshot of `origin`'s iterate travelling toward `target`.
#[derive(Debug, Clone)]
pub struct IterateMessage {
    pub origin: usize,
    pub target: usize,
    pub payload: Arc<Matrix>,
    pub sent_at: usize,
    pub route: Arc<[usize]>,
    pub hops_remaining: usize,
}

/// Gradient `∇f_{origin, data_round}(X_{target, data_round})` travelling back.
#[derive(Debug, Clone)]
pub struct GradientMessage {
    pub origin: usize,
    pub target: usize,
    pub payload: Matrix,
    pub data_round: usize,
    /// The snapshot the gradient was evaluated at.
    pub evaluated_at: Arc<Matrix>,
    pub route: Arc<[usize]>,
    pub hops_remaining: usize,
}

#[derive(Debug, Clone)]
pub enum Message {
    Iterate(IterateMessage),
    Gradient(GradientMessage),
}

impl Message {
    fn hops_remaining_mut(&mut self) -> &mut usize {
        match self {
            Message::Iterate(m) => &mut m.hops_remaining,
            Message::Gradient(m) => &mut m.hops_remaining,
        }
    }

    /// Agent currently holding the message.
    pub fn location(&self) -> usize {
        let (route, left) = match self {
            Message::Iterate(m) => (&m.route, m.hops_remaining),
            Message::Gradient(m) => (&m.route, m.hops_remaining),
        };
        route[route.len().saturating_sub(1 + left)]
    }
}

/// Paths and delays for every `(n, m)` pair the weights require.
#[derive(Debug, Clone)]
pub struct Routing {
    delays: DelayTable,
    /// `paths[n][m]`: agents from `n` to `m` along `n`'s tree.
    paths: Vec<BTreeMap<usize, Arc<[usize]>>>,
}

impl Routing {
    pub fn from_trees(trees: &[RoutingTree], weights: &LogicalWeights) -> Result<Self, GraphError> {
        let n = weights.n_agents();
        let required: Vec<Vec<usize>> = (0..n).map(|i| weights.support(i)).collect();
        let delays = crate::graph::derive_delays(trees, &required)?;
        let paths = required
            .iter()
            .zip(trees)
            .map(|(req, tree)| {
                req.iter()
                    .map(|&m| (m, Arc::from(tree.path_to(m).expect("reachability checked"))))
                    .collect()
            })
            .collect();
        Ok(Routing { delays, paths })
    }

    /// Every pair at zero delay: messages are delivered within the round
    /// they are sent. Only used to check equivalence with full-information
    /// OGD; never built from a run configuration.
    #[doc(hidden)]
    pub fn zero_delay(weights: &LogicalWeights) -> Self {
        let n = weights.n_agents();
        let paths = (0..n)
            .map(|i| weights.support(i).into_iter().map(|m| (m, Arc::from(vec![i, m]))).collect())
            .collect();
        Routing { delays: DelayTable::zero(n), paths }
    }

    pub fn delays(&self) -> &DelayTable {
        &self.delays
    }

    /// `τ[n][m]`
    pub fn round_trip(&self, n: usize, m: usize) -> usize {
        self.delays.round_trip(n, m).expect("pair covered by routing")
    }

    fn one_way(&self, n: usize, m: usize) -> usize {
        self.delays.one_way(n, m).expect("pair covered by routing")
    }

    pub fn path(&self, n: usize, m: usize) -> Option<&Arc<[usize]>> {
        self.paths[n].get(&m)
    }

    /// `(τ_min, τ_max)` over `support`.
    pub fn delay_range(&self, n: usize, support: &[usize]) -> (usize, usize) {
        let taus = support.iter().map(|&m| self.round_trip(n, m));
        let min = taus.clone().min().unwrap_or(0);
        let max = taus.max().unwrap_or(0);
        (min, max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub iterates_sent: u64,
    pub gradients_sent: u64,
    pub gradients_consumed: u64,
    pub hop_transmissions: u64,
    pub max_in_flight: usize,
}

struct AgentState {
    current: Arc<Matrix>,
    /// Snapshots of the last `depth` rounds, oldest first.
    history: VecDeque<(usize, Arc<Matrix>)>,
    depth: usize,
    inbox: BTreeMap<usize, GradientMessage>,
}

pub struct DamTogdEngine<'a> {
    kind: LossKind,
    domain: DomainBall,
    streams: &'a Streams,
    weights: &'a LogicalWeights,
    routing: &'a Routing,
    schedule: ScheduleParams,
    supports: Vec<Vec<usize>>,
    agents: Vec<AgentState>,
    in_flight: Vec<Message>,
    round: usize,
    stats: EngineStats,
}

impl<'a> DamTogdEngine<'a> {
    pub fn new(
        kind: LossKind,
        domain: DomainBall,
        c: f64,
        streams: &'a Streams,
        weights: &'a LogicalWeights,
        routing: &'a Routing,
        init: &Matrix,
    ) -> Self {
        let n = weights.n_agents();
        let supports: Vec<Vec<usize>> = (0..n).map(|i| weights.support(i)).collect();
        let ranges: Vec<(usize, usize)> = (0..n).map(|i| routing.delay_range(i, &supports[i])).collect();
        let schedule = ScheduleParams::new(
            super::Protocol::Damtogd,
            c,
            ranges.iter().map(|r| r.0).collect(),
        );
        let agents = ranges
            .iter()
            .map(|&(_, tau_max)| AgentState {
                current: Arc::new(init.clone()),
                history: VecDeque::with_capacity(tau_max + 1),
                depth: tau_max + 1,
                inbox: BTreeMap::new(),
            })
            .collect();
        DamTogdEngine {
            kind,
            domain,
            streams,
            weights,
            routing,
            schedule,
            supports,
            agents,
            in_flight: Vec::new(),
            round: 0,
            stats: EngineStats::default(),
        }
    }

    /// 0-based index of the round about to run.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn iterate(&self, agent: usize) -> &Matrix {
        &self.agents[agent].current
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn schedule(&self) -> &ScheduleParams {
        &self.schedule
    }

    pub fn in_flight(&self) -> &[Message] {
        &self.in_flight
    }

    /// Runs one round: moves messages, evaluates arrived snapshots, applies
    /// every agent's update, and advances the clock.
    pub fn step(&mut self) -> Result<(), ProtocolError> {
        let r = self.round;
        let n_agents = self.agents.len();
        for a in &mut self.agents {
            let snapshot = Arc::clone(&a.current);
            if a.history.len() == a.depth {
                a.history.pop_front();
            }
            a.history.push_back((r, snapshot));
        }

        let mut arrivals = VecDeque::new();
        let mut staying = Vec::with_capacity(self.in_flight.len());
        for mut msg in self.in_flight.drain(..) {
            let left = msg.hops_remaining_mut();
            *left -= 1;
            self.stats.hop_transmissions += 1;
            if *left == 0 {
                arrivals.push_back(msg);
            } else {
                staying.push(msg);
            }
        }
        self.in_flight = staying;

        for n in 0..n_agents {
            for i in 0..self.supports[n].len() {
                let m = self.supports[n][i];
                if m == n {
                    continue;
                }
                let msg = Message::Iterate(IterateMessage {
                    origin: n,
                    target: m,
                    payload: Arc::clone(&self.agents[n].current),
                    sent_at: r,
                    route: Arc::clone(self.routing.path(n, m).expect("support is routed")),
                    hops_remaining: self.routing.one_way(n, m),
                });
                self.stats.iterates_sent += 1;
                self.dispatch(msg, &mut arrivals);
            }
        }

        while let Some(msg) = arrivals.pop_front() {
            match msg {
                Message::Iterate(it) => {
                    let data = self.streams.point(it.target, it.sent_at);
                    let payload = loss_grad(&self.kind, &it.payload, data)?;
                    let mut back: Vec<usize> = it.route.to_vec();
                    back.reverse();
                    let reply = Message::Gradient(GradientMessage {
                        origin: it.target,
                        target: it.origin,
                        payload,
                        data_round: it.sent_at,
                        evaluated_at: it.payload,
                        route: Arc::from(back),
                        hops_remaining: self.routing.one_way(it.origin, it.target),
                    });
                    self.stats.gradients_sent += 1;
                    self.dispatch(reply, &mut arrivals);
                }
                Message::Gradient(g) => {
                    let expected = g.data_round + self.routing.round_trip(g.target, g.origin);
                    if expected != r {
                        return Err(ProtocolError::Timing {
                            n: g.target,
                            m: g.origin,
                            data_round: g.data_round + 1,
                            arrived: r + 1,
                            expected: expected + 1,
                        });
                    }
                    let (target, origin) = (g.target, g.origin);
                    if self.agents[target].inbox.insert(origin, g).is_some() {
                        return Err(ProtocolError::DuplicateArrival { n: target, m: origin, t: r + 1 });
                    }
                }
            }
        }

        let mut next = Vec::with_capacity(n_agents);
        for n in 0..n_agents {
            let agent = &mut self.agents[n];
            let mut acc = Matrix::zeros(agent.current.nrows(), agent.current.ncols());
            for &m in &self.supports[n] {
                let w = self.weights.weight(n, m);
                if m == n {
                    let g = loss_grad(&self.kind, &agent.current, self.streams.point(n, r))?;
                    acc += &g * w;
                    continue;
                }
                let tau = self.routing.round_trip(n, m);
                if r < tau {
                    continue;
                }
                let msg = agent.inbox.remove(&m).ok_or(ProtocolError::MissingArrival { n, m, t: r + 1 })?;
                let data_round = r - tau;
                let recorded = agent
                    .history
                    .iter()
                    .find(|(round, _)| *round == data_round)
                    .map(|(_, x)| x);
                match recorded {
                    Some(x) if msg.data_round == data_round && Arc::ptr_eq(x, &msg.evaluated_at) => {}
                    _ => return Err(ProtocolError::MissingArrival { n, m, t: r + 1 }),
                }
                self.stats.gradients_consumed += 1;
                acc += &msg.payload * w;
            }
            if let Some((&m, _)) = agent.inbox.iter().next() {
                return Err(ProtocolError::Timing {
                    n,
                    m,
                    data_round: agent.inbox[&m].data_round + 1,
                    arrived: r + 1,
                    expected: agent.inbox[&m].data_round + self.routing.round_trip(n, m) + 1,
                });
            }
            let eta = learning_rate(&self.schedule, n, r + 1);
            let stepped = &*agent.current - &acc * eta;
            next.push(self.domain.project(stepped)?);
        }
        for (agent, x) in self.agents.iter_mut().zip(next) {
            agent.current = Arc::new(x);
        }
        self.stats.max_in_flight = self.stats.max_in_flight.max(self.in_flight.len());
        self.round += 1;
        Ok(())
    }

    fn dispatch(&mut self, msg: Message, arrivals: &mut VecDeque<Message>) {
        let arrived = match &msg {
            Message::Iterate(m) => m.hops_remaining == 0,
            Message::Gradient(m) => m.hops_remaining == 0,
        };
        if arrived {
            arrivals.push_back(msg);
        } else {
            self.in_flight.push(msg);
        }
    }
}
