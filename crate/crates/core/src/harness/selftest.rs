use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::datagen::{gen_ground_truth, gen_logical_weights, gen_streams, GroundTruthParams};
use crate::graph::{build_steiner_tree, build_topology, AgentId, TopologySpec};
use crate::losses::{loss_eval, loss_grad, DataPoint, DomainBall, LossKind, LossVariant, Matrix, Vector};
use crate::oracle;
use crate::protocols::{run_protocol, ProtocolSetup, Routing};
use crate::regret::hindsight_optimum;
use crate::seed::rng_for;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone)]
pub struct SelfTestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> SelfTestCheck {
    match result {
        Ok(detail) => SelfTestCheck { name, passed: true, detail },
        Err(detail) => SelfTestCheck { name, passed: false, detail },
    }
}

/// Runs the oracle suites on small instances.
pub fn selftest() -> Vec<SelfTestCheck> {
    vec![
        check("delayed learner matches history replay", engine_vs_replay()),
        check("steiner trees within twice the optimum", steiner_vs_brute_force()),
        check("analytic gradients match finite differences", gradients_vs_finite_differences()),
        check("comparator matches normal equations", comparator_vs_normal_equations()),
        check("zero delays reduce to full-information OGD", zero_delay_reduction()),
    ]
}

fn small_instance(n: usize, horizon: usize, seed: u64) -> (crate::datagen::Streams, crate::datagen::LogicalWeights) {
    let params = GroundTruthParams {
        n_agents: n,
        d_k: 3,
        d_v: 2,
        ..GroundTruthParams::default()
    };
    let gt = gen_ground_truth(&params, seed).expect("valid parameters");
    let streams = gen_streams(&gt, horizon, seed, None);
    let weights = gen_logical_weights(n, 1.0, 3.0, seed).expect("valid weights");
    (streams, weights)
}

fn engine_vs_replay() -> Result<String, String> {
    let n = 6;
    let topo = build_topology(n, &TopologySpec::ErdosRenyi { p: 0.4 }, 11).map_err(|e| e.to_string())?;
    let (streams, weights) = small_instance(n, 60, 3);
    let trees = (0..n)
        .map(|a| {
            let t: BTreeSet<AgentId> = weights.support(a).into_iter().map(AgentId).collect();
            build_steiner_tree(&topo, AgentId(a), &t)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let routing = Routing::from_trees(&trees, &weights).map_err(|e| e.to_string())?;
    let kind = LossKind::new(LossVariant::DeltaNet);
    let domain = DomainBall::new(10.0).unwrap();
    let run = run_protocol(
        &kind,
        &domain,
        &streams,
        &weights,
        &ProtocolSetup::Damtogd { routing: routing.clone(), c: 0.5 },
    )
    .map_err(|e| e.to_string())?;
    let replay = oracle::replay_delayed_ogd(&kind, &domain, 0.5, &streams, &weights, routing.delays())
        .map_err(|e| e.to_string())?;
    if run.iterates == replay {
        Ok(format!("{n} agents, {} rounds, bitwise equal", streams.horizon()))
    } else {
        Err("iterates differ".into())
    }
}

fn steiner_vs_brute_force() -> Result<String, String> {
    let mut rng = rng_for(5, "selftest-steiner", 0);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let topo = build_topology(9, &TopologySpec::ErdosRenyi { p: 0.3 }, trial).map_err(|e| e.to_string())?;
        let mut nodes: Vec<usize> = (0..9).collect();
        nodes.shuffle(&mut rng);
        let k = rng.gen_range(1..=5);
        let terminals: BTreeSet<usize> = nodes[..k].iter().copied().collect();
        let root = nodes[0];
        let set: BTreeSet<AgentId> = terminals.iter().copied().map(AgentId).collect();
        let tree = build_steiner_tree(&topo, AgentId(root), &set).map_err(|e| e.to_string())?;
        let best = oracle::steiner_optimum_cost(&topo, &terminals);
        let limit = 2.0 * (1.0 - 1.0 / k as f64) * best as f64;
        if tree.cost() as f64 > limit + 1e-9 {
            return Err(format!("trial {trial}: cost {} exceeds {limit}", tree.cost()));
        }
        if best > 0 {
            worst = worst.max(tree.cost() as f64 / best as f64);
        }
    }
    Ok(format!("20 graphs, worst ratio {worst:.3}"))
}

fn gradients_vs_finite_differences() -> Result<String, String> {
    let mut rng = rng_for(9, "selftest-gradients", 0);
    let mut worst: f64 = 0.0;
    for variant in LossVariant::ALL {
        let kind = LossKind::new(variant);
        for _ in 0..5 {
            let x = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-2.0..2.0));
            let key = Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let value = Vector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0));
            let mut d = DataPoint::new(key, value);
            if variant.is_gated() {
                d = d.with_gate((0..3).map(|_| rng.gen_bool(0.5)).collect());
            }
            let g = loss_grad(&kind, &x, &d).map_err(|e| e.to_string())?;
            let fd = oracle::finite_difference_gradient(|m| loss_eval(&kind, m, &d).unwrap(), &x, 1e-5);
            let err = (&g - &fd).norm() / (1.0 + g.norm());
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("{}: relative error {err:e}", variant.name()));
            }
        }
    }
    Ok(format!("6 losses, worst relative error {worst:.2e}"))
}

fn comparator_vs_normal_equations() -> Result<String, String> {
    let (streams, weights) = small_instance(4, 200, 21);
    let kind = LossKind::new(LossVariant::DeltaNet);
    // radius large enough that the constraint is inactive
    let domain = DomainBall::new(1e6).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..4 {
        let u = hindsight_optimum(n, &streams, &weights, &kind, &domain).map_err(|e| e.to_string())?;
        let exact = oracle::normal_equations_optimum(n, &streams, &weights).ok_or("singular key moment")?;
        let err = (&u.matrix - &exact).norm() / exact.norm();
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(format!("agent {n}: relative error {err:e}"));
        }
    }
    Ok(format!("4 agents, worst relative error {worst:.2e}"))
}

fn zero_delay_reduction() -> Result<String, String> {
    let (streams, weights) = small_instance(5, 50, 8);
    let kind = LossKind::new(LossVariant::DeltaNet);
    let domain = DomainBall::new(10.0).unwrap();
    let ogd = run_protocol(&kind, &domain, &streams, &weights, &ProtocolSetup::Ogd).map_err(|e| e.to_string())?;
    let delayed = run_protocol(
        &kind,
        &domain,
        &streams,
        &weights,
        &ProtocolSetup::Damtogd { routing: Routing::zero_delay(&weights), c: 1.0 },
    )
    .map_err(|e| e.to_string())?;
    if ogd.iterates == delayed.iterates {
        Ok("5 agents, 50 rounds, bitwise equal".into())
    } else {
        Err("iterates differ".into())
    }
}
