//! Reference computations used to cross-check the main code paths.
//!
//! Each routine here solves the same problem as a production routine by a
//! different route (literal history indexing instead of message passing,
//! exhaustive search instead of approximation, finite differences instead
//! of analytic gradients, a linear solve instead of iterative descent). They
//! back the test suites and the `selftest` command.

use std::collections::BTreeSet;

use crate::datagen::{LogicalWeights, Streams};
use crate::graph::{DelayTable, Topology};
use crate::losses::{loss_grad, DataPoint, DomainBall, LossError, LossKind, LossVariant, Matrix};

/// Iterates of the delayed learner computed directly from the update rule
/// `X_{n,t+1} = Π[X_{n,t} - η_{n,t} Σ_m w[n][m] ∇f_{m,t-τ}(X_{n,t-τ}) 𝟙{t > τ}]`
/// by indexing the stored trajectory. Returns `X[n][r]` for `r < T`.
pub fn replay_delayed_ogd(
    kind: &LossKind,
    domain: &DomainBall,
    c: f64,
    streams: &Streams,
    weights: &LogicalWeights,
    delays: &DelayTable,
) -> Result<Vec<Vec<Matrix>>, LossError> {
    let n_agents = weights.n_agents();
    let horizon = streams.horizon();
    let p = streams.point(0, 0);
    let mut xs: Vec<Vec<Matrix>> = vec![vec![Matrix::zeros(p.value.len(), p.key.len())]; n_agents];
    let tau = |n: usize, m: usize| 2 * delays.one_way(n, m).expect("routed");
    for t in 1..horizon {
        for n in 0..n_agents {
            let support: Vec<usize> = (0..n_agents).filter(|&m| weights.weight(n, m) > 0.0).collect();
            let tau_min = support.iter().map(|&m| tau(n, m)).min().unwrap_or(0);
            let mut acc = Matrix::zeros(p.value.len(), p.key.len());
            for &m in &support {
                let d = tau(n, m);
                if t > d {
                    let g = loss_grad(kind, &xs[n][t - 1 - d], streams.point(m, t - 1 - d))?;
                    acc += &g * weights.weight(n, m);
                }
            }
            let eta = if t > tau_min { c / ((t - tau_min) as f64).sqrt() } else { c };
            let next = domain.project(&xs[n][t - 1] - &acc * eta)?;
            xs[n].push(next);
        }
    }
    Ok(xs)
}

/// Union-find connectivity over an explicit edge list.
pub fn is_connected(n_agents: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n_agents).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(u, v) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..n_agents).all(|x| find(&mut parent, x) == root)
}

/// Minimum unit-weight Steiner tree cost by enumerating every vertex set
/// containing the terminals whose induced subgraph is connected.
pub fn steiner_optimum_cost(topo: &Topology, terminals: &BTreeSet<usize>) -> usize {
    let n = topo.n_agents();
    assert!(n <= 20, "exhaustive search limited to 20 nodes");
    let required: u32 = terminals.iter().map(|&t| 1u32 << t).sum();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << n) {
        if mask & required != required {
            continue;
        }
        let size = mask.count_ones() as usize;
        if size == 0 || size > best {
            continue;
        }
        let nodes: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let edges: Vec<(usize, usize)> = topo
            .edges()
            .filter(|&(u, v)| mask & (1 << u) != 0 && mask & (1 << v) != 0)
            .map(|(u, v)| {
                let iu = nodes.binary_search(&u).unwrap();
                let iv = nodes.binary_search(&v).unwrap();
                (iu, iv)
            })
            .collect();
        if is_connected(nodes.len(), &edges) {
            best = size - 1;
        }
    }
    best
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference_gradient(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[(i, j)] += h;
        minus[(i, j)] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Loss value by explicit scalar loops, without matrix algebra.
pub fn scalar_loop_loss(kind: &LossKind, x: &Matrix, d: &DataPoint) -> f64 {
    let (dv, dk) = x.shape();
    let phi = kind.features(&d.key);
    let mut read = vec![0.0; dv];
    for i in 0..dv {
        for j in 0..dk {
            read[i] += x[(i, j)] * phi[j];
        }
    }
    let mut inner = 0.0;
    for i in 0..dv {
        inner += read[i] * d.value[i];
    }
    let mut frob = 0.0;
    let mut masked = 0.0;
    for i in 0..dv {
        for j in 0..dk {
            let sq = x[(i, j)] * x[(i, j)];
            frob += sq;
            if let Some(g) = &d.gate {
                if !g[i] {
                    masked += sq;
                }
            }
        }
    }
    match kind.variant() {
        LossVariant::DeltaNet => {
            let mut s = 0.0;
            for i in 0..dv {
                s += (read[i] - d.value[i]).powi(2);
            }
            0.5 * s
        }
        LossVariant::LinearAttention | LossVariant::SoftmaxNoNorm => -inner,
        LossVariant::SoftmaxWithNorm => -inner + 0.5 * frob,
        LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax => -inner + 0.5 * masked,
    }
}

/// Unconstrained DeltaNet minimizer `(Σ w v kᵀ)(Σ w k kᵀ)⁻¹` of agent `n`'s
/// cumulative objective, or `None` when the key moment is singular.
pub fn normal_equations_optimum(n: usize, streams: &Streams, weights: &LogicalWeights) -> Option<Matrix> {
    let p = streams.point(0, 0);
    let (dv, dk) = (p.value.len(), p.key.len());
    let mut kk = Matrix::zeros(dk, dk);
    let mut vk = Matrix::zeros(dv, dk);
    for m in 0..weights.n_agents() {
        let w = weights.weight(n, m);
        if w == 0.0 {
            continue;
        }
        for d in streams.agent(m) {
            kk += &d.key * d.key.transpose() * w;
            vk += &d.value * d.key.transpose() * w;
        }
    }
    // solve U kk = vk  ⇔  kkᵀ Uᵀ = vkᵀ
    let lu = kk.transpose().lu();
    lu.solve(&vk.transpose()).map(|ut| ut.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, TopologySpec};

    #[test]
    fn brute_force_steiner_on_a_path() {
        let topo = build_topology(5, &TopologySpec::EdgeList(vec![(0, 1), (1, 2), (2, 3), (3, 4)]), 0).unwrap();
        let t: BTreeSet<usize> = [0, 4].into_iter().collect();
        assert_eq!(steiner_optimum_cost(&topo, &t), 4);
        let t: BTreeSet<usize> = [2].into_iter().collect();
        assert_eq!(steiner_optimum_cost(&topo, &t), 0);
    }

    #[test]
    fn union_find_connectivity() {
        assert!(is_connected(3, &[(0, 1), (1, 2)]));
        assert!(!is_connected(3, &[(0, 1)]));
        assert!(is_connected(1, &[]));
    }

    #[test]
    fn finite_differences_of_a_quadratic() {
        let x = Matrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let g = finite_difference_gradient(|m| m.norm_squared(), &x, 1e-5);
        assert!((g - &x * 2.0).norm() < 1e-9);
    }

    #[test]
    fn scalar_loop_matches_on_gated_instance() {
        let kind = LossKind::new(LossVariant::GatedLinearAttention);
        let x = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let d = DataPoint::new(
            crate::losses::Vector::from_row_slice(&[1.0, 1.0]),
            crate::losses::Vector::from_row_slice(&[1.0, 0.0]),
        )
        .with_gate(vec![true, false]);
        // -<Xk, v> = -(3) ; masked rows: row 1 -> ½(1 + 0.25)
        assert_eq!(scalar_loop_loss(&kind, &x, &d), -3.0 + 0.625);
    }
}
