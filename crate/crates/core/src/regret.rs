//! Regret against the best fixed memories in hindsight, and the closed-form
//! regret bounds of the three learners.
//!
//! Agent `n`'s cumulative objective is
//! `L_n^T(X) = Σ_t Σ_{m ∈ W_n} w[n][m] f_{m,t}(X_{n,t})`, and network regret
//! is `Reg(T) = Σ_n (L_n^T(X_n) - L_n^T(U*_n))` with `U*_n` minimizing
//! `L_n^T` over the domain ball.

use nalgebra::DMatrix;
use rand::Rng as _;
use thiserror::Error;

use crate::datagen::{LogicalWeights, Streams};
use crate::graph::DelayTable;
use crate::losses::{grad_norm_bound, loss_eval, DomainBall, LossError, LossKind, LossVariant, Matrix, QuadraticForm};
use crate::protocols::RunOutput;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegretError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mixing contraction α = {0} must be < 1")]
    Contraction(f64),
}

pub const COMPARATOR_TOLERANCE: f64 = 1e-9;
pub const COMPARATOR_MAX_ITERATIONS: usize = 100_000;

/// A hindsight-optimal memory and how well the solver pinned it down.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub matrix: Matrix,
    /// `‖U - Π(U - ∇L(U))‖` at the returned point.
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `L_n^T` as sufficient statistics over the first `horizon` rounds.
pub fn cumulative_objective(
    n: usize,
    streams: &Streams,
    horizon: usize,
    weights: &LogicalWeights,
    kind: &LossKind,
) -> Result<QuadraticForm, RegretError> {
    let first = streams.point(0, 0);
    let mut q = QuadraticForm::zeros(first.value.len(), first.key.len());
    for m in weights.support(n) {
        let w = weights.weight(n, m);
        for d in &streams.agent(m)[..horizon] {
            q.add_point(kind, w, d)?;
        }
    }
    Ok(q)
}

fn stationarity(q: &QuadraticForm, x: &Matrix, domain: &DomainBall) -> Result<f64, LossError> {
    let g = q.gradient(x);
    Ok((x - domain.project(x - g)?).norm())
}

/// Projected gradient descent on a quadratic objective. Uses the fixed step
/// `1/λ_max` (50 power iterations) for DeltaNet and Armijo backtracking
/// for the other variants.
pub fn minimize_over_ball(
    q: &QuadraticForm,
    domain: &DomainBall,
    variant: LossVariant,
) -> Result<Comparator, RegretError> {
    let (dv, dk) = q.linear.shape();
    let mut x = DMatrix::zeros(dv, dk);
    let fixed_step = match variant {
        LossVariant::DeltaNet => {
            let lambda = q.curvature(50);
            (lambda > 0.0).then(|| 1.0 / lambda)
        }
        _ => None,
    };
    let mut step = fixed_step.unwrap_or(1.0);
    let mut stat = stationarity(q, &x, domain)?;
    let mut iterations = 0;
    while stat >= COMPARATOR_TOLERANCE && iterations < COMPARATOR_MAX_ITERATIONS {
        iterations += 1;
        let g = q.gradient(&x);
        x = match fixed_step {
            Some(s) => domain.project(&x - &g * s)?,
            None => {
                let fx = q.value(&x);
                loop {
                    let cand = domain.project(&x - &g * step)?;
                    let diff = &cand - &x;
                    let model = fx + g.dot(&diff) + diff.norm_squared() / (2.0 * step);
                    if q.value(&cand) <= model + 1e-12 * fx.abs().max(1.0) || step < 1e-300 {
                        step *= 2.0;
                        break cand;
                    }
                    step *= 0.5;
                }
            }
        };
        stat = stationarity(q, &x, domain)?;
    }
    Ok(Comparator {
        matrix: x,
        stationarity: stat,
        iterations,
        converged: stat < COMPARATOR_TOLERANCE,
    })
}

/// `U*_n = argmin_{X ∈ ball} L_n^T(X)` over the full streams.
pub fn hindsight_optimum(
    n: usize,
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
    domain: &DomainBall,
) -> Result<Comparator, RegretError> {
    let q = cumulative_objective(n, streams, streams.horizon(), weights, kind)?;
    minimize_over_ball(&q, domain, kind.variant())
}

/// `L_n^T(X)` for a fixed `X`, summed term by term.
pub fn cumulative_loss(
    n: usize,
    x: &Matrix,
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
) -> Result<f64, RegretError> {
    let mut total = 0.0;
    for r in 0..streams.horizon() {
        total += round_loss(n, r, x, streams, weights, kind)?;
    }
    Ok(total)
}

/// `Σ_m w[n][m] f_{m,r}(x)`, in ascending `m`.
fn round_loss(
    n: usize,
    r: usize,
    x: &Matrix,
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
) -> Result<f64, RegretError> {
    let mut s = 0.0;
    for m in weights.support(n) {
        s += weights.weight(n, m) * loss_eval(kind, x, streams.point(m, r))?;
    }
    Ok(s)
}

/// Largest decrease of `L_n^T` found by stepping `step` from `u` along
/// `directions` random unit directions (projected back onto the ball).
/// Non-positive for a true minimizer.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_probe(
    n: usize,
    u: &Matrix,
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
    domain: &DomainBall,
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<f64, RegretError> {
    let base = cumulative_loss(n, u, streams, weights, kind)?;
    let mut rng = seed::rng_for(seed, "perturbation-probe", n as u64);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..directions {
        let mut d = Matrix::from_fn(u.nrows(), u.ncols(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        d /= d.norm();
        let moved = domain.project(u + d * step)?;
        let value = cumulative_loss(n, &moved, streams, weights, kind)?;
        worst = worst.max(base - value);
    }
    Ok(worst)
}

/// Per-round cumulative losses of iterates and comparators, and network regret.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    /// `cumulative[n][r] = L_n^{r+1}(X_n)`.
    pub cumulative: Vec<Vec<f64>>,
    /// `comparator_cumulative[n][r] = L_n^{r+1}(U*_n)`.
    pub comparator_cumulative: Vec<Vec<f64>>,
    /// `regret[r] = Reg(r+1)`.
    pub regret: Vec<f64>,
    pub comparators: Vec<Matrix>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        *self.regret.last().expect("non-empty trace")
    }

    pub fn horizon(&self) -> usize {
        self.regret.len()
    }
}

/// Evaluates the cumulative objectives along the run and at the comparators.
pub fn compute_regret(
    run: &RunOutput,
    comparators: &[Matrix],
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
) -> Result<RegretTrace, RegretError> {
    let n_agents = weights.n_agents();
    let horizon = run.horizon();
    for (what, got) in [
        ("iterate histories", run.iterates.len()),
        ("comparators", comparators.len()),
        ("streams", streams.n_agents()),
    ] {
        if got != n_agents {
            return Err(RegretError::Length { what, expected: n_agents, got });
        }
    }
    if streams.horizon() < horizon {
        return Err(RegretError::Length { what: "stream length", expected: horizon, got: streams.horizon() });
    }
    if let Some(bad) = run.iterates.iter().find(|h| h.len() != horizon) {
        return Err(RegretError::Length { what: "iterate history length", expected: horizon, got: bad.len() });
    }

    let mut cumulative = vec![Vec::with_capacity(horizon); n_agents];
    let mut comparator_cumulative = vec![Vec::with_capacity(horizon); n_agents];
    for n in 0..n_agents {
        let (mut a, mut b) = (0.0, 0.0);
        for r in 0..horizon {
            a += round_loss(n, r, &run.iterates[n][r], streams, weights, kind)?;
            b += round_loss(n, r, &comparators[n], streams, weights, kind)?;
            cumulative[n].push(a);
            comparator_cumulative[n].push(b);
        }
    }
    let regret = (0..horizon)
        .map(|r| network_regret(&cumulative, &comparator_cumulative, r))
        .collect();
    Ok(RegretTrace {
        cumulative,
        comparator_cumulative,
        regret,
        comparators: comparators.to_vec(),
    })
}

fn network_regret(cumulative: &[Vec<f64>], comparator: &[Vec<f64>], r: usize) -> f64 {
    let mut s = 0.0;
    for (a, b) in cumulative.iter().zip(comparator) {
        s += a[r] - b[r];
    }
    s
}

/// `Reg(t)` recomputed from scratch for one prefix length `t` (1-based).
pub fn regret_at(
    t: usize,
    run: &RunOutput,
    comparators: &[Matrix],
    streams: &Streams,
    weights: &LogicalWeights,
    kind: &LossKind,
) -> Result<f64, RegretError> {
    let mut s = 0.0;
    for n in 0..weights.n_agents() {
        let (mut a, mut b) = (0.0, 0.0);
        for r in 0..t {
            a += round_loss(n, r, &run.iterates[n][r], streams, weights, kind)?;
            b += round_loss(n, r, &comparators[n], streams, weights, kind)?;
        }
        s += a - b;
    }
    Ok(s)
}

/// Telescoping term `Σ_t (‖X_t - U‖² - ‖X_{t+1} - U‖²) / (2 η_t)` over a
/// recorded trajectory. Diagnostic only; bounds use the closed form.
pub fn telescoping_term(iterates: &[Matrix], comparator: &Matrix, etas: &[f64]) -> f64 {
    iterates
        .windows(2)
        .zip(etas)
        .map(|(w, eta)| ((&w[0] - comparator).norm_squared() - (&w[1] - comparator).norm_squared()) / (2.0 * eta))
        .sum()
}

/// Per-agent constants of the delayed-OGD bound.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConstants {
    pub support_size: usize,
    /// `L̄_n = Σ_m w[n][m] L_m`
    pub lbar: f64,
    /// `K_n = max_m w[n][m] L_m`
    pub k: f64,
    /// `Σ_{m ∈ W_n} L_m`
    pub l_sum: f64,
    /// `Σ_{m ∈ W_n} τ[n][m]`
    pub tau_sum: usize,
    pub tau_min: usize,
    pub tau_max: usize,
    pub delta_tau: usize,
    pub q: f64,
    pub p: f64,
    pub c_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    /// Domain diameter `B = 2R`.
    pub b: f64,
    /// Schedule scale of the delayed learner.
    pub c: f64,
    /// Gradient-norm bound of each agent's losses.
    pub lipschitz: Vec<f64>,
    pub agents: Vec<AgentConstants>,
}

impl BoundConstants {
    /// Assembles the per-agent constants. `delays` may be `None` for learners
    /// without routing, in which case every delay is zero.
    pub fn assemble(
        weights: &LogicalWeights,
        lipschitz: Vec<f64>,
        delays: Option<&DelayTable>,
        b: f64,
        c: f64,
    ) -> Self {
        let agents = (0..weights.n_agents())
            .map(|n| {
                let support = weights.support(n);
                let size = support.len();
                let tau = |m: usize| delays.map_or(0, |d| d.round_trip(n, m).expect("routed pair"));
                let lbar = support.iter().map(|&m| weights.weight(n, m) * lipschitz[m]).sum::<f64>();
                let k = support
                    .iter()
                    .map(|&m| weights.weight(n, m) * lipschitz[m])
                    .fold(0.0, f64::max);
                let l_sum: f64 = support.iter().map(|&m| lipschitz[m]).sum();
                let tau_sum: usize = support.iter().map(|&m| tau(m)).sum();
                let tau_min = support.iter().map(|&m| tau(m)).min().unwrap_or(0);
                let tau_max = support.iter().map(|&m| tau(m)).max().unwrap_or(0);
                let delta_tau = tau_max - tau_min;
                let sz = size as f64;
                AgentConstants {
                    support_size: size,
                    lbar,
                    k,
                    l_sum,
                    tau_sum,
                    tau_min,
                    tau_max,
                    delta_tau,
                    q: k / 2.0 * l_sum + sz * k * k * tau_sum as f64,
                    p: sz * sz * k * k * (tau_max * tau_max) as f64,
                    c_term: delta_tau as f64 / 2.0 * (k * l_sum + sz * b * b),
                }
            })
            .collect();
        BoundConstants { b, c, lipschitz, agents }
    }

    pub fn max_lipschitz(&self) -> f64 {
        self.lipschitz.iter().copied().fold(0.0, f64::max)
    }
}

/// `L_m` for every agent from the realized maxima of `‖φ(k)‖` and `‖v‖`.
pub fn empirical_lipschitz(streams: &Streams, kind: &LossKind, domain: &DomainBall) -> Result<Vec<f64>, RegretError> {
    (0..streams.n_agents())
        .map(|m| {
            let (kb, vb) = streams.norm_maxima(m, |k| kind.features(k));
            Ok(grad_norm_bound(kind, domain, kb.max(f64::MIN_POSITIVE), vb.max(f64::MIN_POSITIVE))?)
        })
        .collect()
}

/// Full-information OGD: `Σ_n (B²/2 + L̄_n²) √T`.
pub fn bound_ogd(constants: &BoundConstants, horizon: usize) -> f64 {
    let root_t = (horizon as f64).sqrt();
    constants
        .agents
        .iter()
        .map(|a| (constants.b * constants.b / 2.0 + a.lbar * a.lbar) * root_t)
        .sum()
}

/// Consensus OGD under uniform weights: `N (B + (5-α)/(1-α) L_max²) √T`.
pub fn bound_cdogd(constants: &BoundConstants, alpha: f64, horizon: usize) -> Result<f64, RegretError> {
    if !(alpha < 1.0) {
        return Err(RegretError::Contraction(alpha));
    }
    let n = constants.agents.len() as f64;
    let l = constants.max_lipschitz();
    Ok(n * (constants.b + (5.0 - alpha) / (1.0 - alpha) * l * l) * (horizon as f64).sqrt())
}

/// Delayed tree-routed OGD with `η = c/√(t - τ_min)`:
/// `Σ_n (2c Q_n √(T + Δτ_n) + B²/(2c) √T + P_n c + C_n)`.
pub fn bound_damtogd(constants: &BoundConstants, horizon: usize) -> f64 {
    let c = constants.c;
    let b2 = constants.b * constants.b;
    let t = horizon as f64;
    constants
        .agents
        .iter()
        .map(|a| 2.0 * c * a.q * (t + a.delta_tau as f64).sqrt() + b2 / (2.0 * c) * t.sqrt() + a.p * c + a.c_term)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{DataPoint, Vector};

    fn constants_single(l: f64, b: f64, c: f64) -> BoundConstants {
        BoundConstants::assemble(&LogicalWeights::identity(1), vec![l], None, b, c)
    }

    #[test]
    fn ogd_bound_examples() {
        let k = constants_single(1.0, 2.0, 1.0);
        assert_eq!(bound_ogd(&k, 4), 6.0);
        assert_eq!(bound_ogd(&k, 0), 0.0);
        let many = BoundConstants::assemble(&LogicalWeights::identity(5), vec![1.0; 5], None, 2.0, 1.0);
        assert_eq!(bound_ogd(&many, 9), 5.0 * bound_ogd(&k, 9));
    }

    #[test]
    fn cdogd_bound_examples() {
        let k = constants_single(1.0, 1.0, 1.0);
        assert_eq!(bound_cdogd(&k, 0.0, 1).unwrap(), 6.0);
        assert!(bound_cdogd(&k, 1.0, 1).is_err());
        let grid: Vec<f64> = (0..99).map(|i| bound_cdogd(&k, i as f64 / 100.0, 10).unwrap()).collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn damtogd_bound_single_agent_reduces() {
        let (l, b, c) = (3.0, 2.0, 0.5);
        let k = constants_single(l, b, c);
        let a = &k.agents[0];
        assert_eq!(a.delta_tau, 0);
        assert_eq!(a.q, a.k * l / 2.0);
        let t = 16.0f64;
        let expect = 2.0 * c * a.q * t.sqrt() + b * b / (2.0 * c) * t.sqrt() + a.p * c;
        assert_eq!(bound_damtogd(&k, 16), expect);
    }

    #[test]
    fn damtogd_bound_with_constant_losses() {
        use crate::graph::{build_steiner_tree, build_topology, derive_delays, AgentId, TopologySpec};
        let topo = build_topology(4, &TopologySpec::EdgeList(vec![(0, 1), (1, 2), (2, 3)]), 0).unwrap();
        let w = LogicalWeights::uniform(4);
        let all = (0..4).map(AgentId).collect();
        let trees: Vec<_> = (0..4).map(|n| build_steiner_tree(&topo, AgentId(n), &all).unwrap()).collect();
        let delays = derive_delays(&trees, &vec![(0..4).collect(); 4]).unwrap();
        let b = 2.0;
        let k = BoundConstants::assemble(&w, vec![0.0; 4], Some(&delays), b, 1.0);
        let c_sum: f64 = k.agents.iter().map(|a| a.delta_tau as f64 * a.support_size as f64 * b * b / 2.0).sum();
        assert!(c_sum > 0.0);
        assert_eq!(bound_damtogd(&k, 0), c_sum);
        let with_t = c_sum + 4.0 * b * b / 2.0 * 3.0;
        assert!((bound_damtogd(&k, 9) - with_t).abs() < 1e-12);
    }

    #[test]
    fn linear_objective_optimum_on_boundary() {
        let kind = LossKind::new(LossVariant::LinearAttention);
        let ball = DomainBall::new(3.0).unwrap();
        let pts = vec![
            DataPoint::new(Vector::from_row_slice(&[1.0, 0.5]), Vector::from_row_slice(&[0.2, -1.0])),
            DataPoint::new(Vector::from_row_slice(&[-0.3, 0.8]), Vector::from_row_slice(&[1.0, 0.4])),
        ];
        let streams = Streams::new(vec![pts]);
        let u = hindsight_optimum(0, &streams, &LogicalWeights::identity(1), &kind, &ball).unwrap();
        assert!(u.converged);
        assert!((u.matrix.norm() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn telescoping_matches_hand_value() {
        let u = Matrix::zeros(1, 1);
        let xs: Vec<Matrix> = [2.0, 1.0, 0.0].iter().map(|&x| Matrix::from_element(1, 1, x)).collect();
        // (4 - 1)/(2·1) + (1 - 0)/(2·0.5) = 1.5 + 1
        assert_eq!(telescoping_term(&xs, &u, &[1.0, 0.5]), 2.5);
    }
}
