//! Seeded synthetic data: ground-truth memories, per-agent key/value streams,
//! logical weight matrices and consensus mixing matrices.
//!
//! Values follow `v = ((1-ρ) M_n + ρ M_com) k + noise`, with keys uniform on
//! `[-1, 1]^{d_k}`, `M_com` entries `χ²(2)`, and each `M_n` Gaussian with an
//! agent-specific mean and variance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::Topology;
use crate::losses::{DataPoint, Matrix, Vector};
use crate::seed;

/// Tolerance for row/column sums of stochastic matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{name} = {value} is out of range: {constraint}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("y1 must be ≥ y0 (got y0 = {y0}, y1 = {y1})")]
    DirichletOrder { y0: f64, y1: f64 },
    #[error("{what} must be {expected}×{expected}, got {rows}×{cols}")]
    Shape {
        what: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{what} row {row}: {detail}")]
    Row {
        what: &'static str,
        row: usize,
        detail: String,
    },
    #[error("mixing matrix column {col} sums to {sum}")]
    Column { col: usize, sum: f64 },
    #[error("mixing weight a[{n}][{m}] = {value} but ({n}, {m}) is not an edge")]
    Support { n: usize, m: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthParams {
    pub n_agents: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub rho: f64,
    /// Standard deviation of the additive value noise.
    pub noise_std: f64,
    /// Range of the per-agent mean of `M_n` entries.
    pub personal_mean_range: (f64, f64),
    /// Range of the per-agent variance of `M_n` entries.
    pub personal_variance_range: (f64, f64),
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            n_agents: 20,
            d_k: 8,
            d_v: 8,
            rho: 0.75,
            noise_std: 1.0,
            personal_mean_range: (-5.0, 5.0),
            personal_variance_range: (0.0, 50.0),
        }
    }
}

impl GroundTruthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let check = |ok: bool, name, value: f64, constraint| {
            if ok {
                Ok(())
            } else {
                Err(DataError::OutOfRange { name, value, constraint })
            }
        };
        check(self.n_agents >= 1, "n_agents", self.n_agents as f64, "must be ≥ 1")?;
        check(self.d_k >= 1, "d_k", self.d_k as f64, "must be ≥ 1")?;
        check(self.d_v >= 1, "d_v", self.d_v as f64, "must be ≥ 1")?;
        check((0.0..=1.0).contains(&self.rho), "rho", self.rho, "must lie in [0, 1]")?;
        check(
            self.noise_std.is_finite() && self.noise_std >= 0.0,
            "noise_std",
            self.noise_std,
            "must be finite and ≥ 0",
        )?;
        let (ml, mh) = self.personal_mean_range;
        check(ml.is_finite() && mh.is_finite() && ml <= mh, "personal_mean_range", ml, "needs finite lo ≤ hi")?;
        let (vl, vh) = self.personal_variance_range;
        check(
            vl.is_finite() && vh.is_finite() && 0.0 <= vl && vl <= vh,
            "personal_variance_range",
            vl,
            "needs finite 0 ≤ lo ≤ hi",
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub common: Matrix,
    pub personal: Vec<Matrix>,
    pub rho: f64,
    pub noise_std: f64,
}

impl GroundTruth {
    /// `(1-ρ) M_n + ρ M_com`
    pub fn effective(&self, agent: usize) -> Matrix {
        &self.personal[agent] * (1.0 - self.rho) + &self.common * self.rho
    }

    pub fn d_v(&self) -> usize {
        self.common.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.common.ncols()
    }
}

pub fn gen_ground_truth(params: &GroundTruthParams, seed: u64) -> Result<GroundTruth, DataError> {
    params.validate()?;
    let (dv, dk) = (params.d_v, params.d_k);

    // χ²(2) by inverse CDF: -2 ln U with U in (0, 1]
    let mut rng = seed::rng_for(seed, "common-memory", 0);
    let common = DMatrix::from_fn(dv, dk, |_, _| -2.0 * (1.0 - rng.gen::<f64>()).ln());

    let personal = (0..params.n_agents)
        .map(|n| {
            let mut rng = seed::rng_for(seed, "personal-memory", n as u64);
            let (ml, mh) = params.personal_mean_range;
            let (vl, vh) = params.personal_variance_range;
            let mean = ml + (mh - ml) * rng.gen::<f64>();
            let variance = vl + (vh - vl) * rng.gen::<f64>();
            let normal = Normal::new(mean, variance.sqrt()).expect("validated parameters");
            DMatrix::from_fn(dv, dk, |_, _| normal.sample(&mut rng))
        })
        .collect();

    Ok(GroundTruth {
        common,
        personal,
        rho: params.rho,
        noise_std: params.noise_std,
    })
}

/// Per-agent data streams, `points[agent][round]` with rounds 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    points: Vec<Vec<DataPoint>>,
}

impl Streams {
    pub fn new(points: Vec<Vec<DataPoint>>) -> Self {
        let len = points.first().map_or(0, Vec::len);
        assert!(points.iter().all(|p| p.len() == len), "stream lengths differ across agents");
        Streams { points }
    }

    pub fn n_agents(&self) -> usize {
        self.points.len()
    }

    pub fn horizon(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn point(&self, agent: usize, round: usize) -> &DataPoint {
        &self.points[agent][round]
    }

    pub fn agent(&self, agent: usize) -> &[DataPoint] {
        &self.points[agent]
    }

    /// Streams cut to their first `horizon` rounds.
    pub fn truncated(&self, horizon: usize) -> Streams {
        Streams {
            points: self.points.iter().map(|p| p[..horizon.min(p.len())].to_vec()).collect(),
        }
    }

    /// SHA-256 over every key, value and gate in (agent, round) order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for agent in &self.points {
            for d in agent {
                for x in d.key.iter().chain(d.value.iter()) {
                    h.update(x.to_bits().to_le_bytes());
                }
                if let Some(g) = &d.gate {
                    h.update(g.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
                }
            }
        }
        hex(&h.finalize())
    }

    /// `(max ‖φ(k)‖, max ‖v‖)` over one agent's stream.
    pub fn norm_maxima(&self, agent: usize, features: impl Fn(&Vector) -> Vector) -> (f64, f64) {
        self.points[agent].iter().fold((0.0, 0.0), |(kb, vb), d| {
            (f64::max(kb, features(&d.key).norm()), f64::max(vb, d.value.norm()))
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates `horizon` rounds for one agent. When `gate_keep_prob` is set,
/// each data point carries a gate with independent Bernoulli entries drawn
/// from a separate sub-stream.
pub fn gen_stream(
    gt: &GroundTruth,
    agent: usize,
    horizon: usize,
    seed: u64,
    gate_keep_prob: Option<f64>,
) -> Vec<DataPoint> {
    let m_eff = gt.effective(agent);
    let mut rng = seed::rng_for(seed, "stream", agent as u64);
    let mut gate_rng = seed::rng_for(seed, "gate", agent as u64);
    let key_dist = Uniform::new_inclusive(-1.0, 1.0);
    let noise = Normal::new(0.0, gt.noise_std).expect("validated noise_std");
    (0..horizon)
        .map(|_| {
            let key = Vector::from_fn(gt.d_k(), |_, _| key_dist.sample(&mut rng));
            let mut value = &m_eff * &key;
            if gt.noise_std > 0.0 {
                for v in value.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            let d = DataPoint::new(key, value);
            match gate_keep_prob {
                Some(p) => d.with_gate((0..gt.d_v()).map(|_| gate_rng.gen::<f64>() < p).collect()),
                None => d,
            }
        })
        .collect()
}

pub fn gen_streams(gt: &GroundTruth, horizon: usize, seed: u64, gate_keep_prob: Option<f64>) -> Streams {
    Streams::new(
        (0..gt.personal.len())
            .map(|n| gen_stream(gt, n, horizon, seed, gate_keep_prob))
            .collect(),
    )
}

/// Row-stochastic matrix of memorization requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalWeights {
    w: Matrix,
}

impl LogicalWeights {
    pub fn from_matrix(w: Matrix) -> Result<Self, DataError> {
        let n = w.nrows();
        if w.ncols() != n || n == 0 {
            return Err(DataError::Shape { what: "weight matrix", expected: n.max(1), rows: w.nrows(), cols: w.ncols() });
        }
        for (i, row) in w.row_iter().enumerate() {
            if let Some(bad) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(DataError::Row { what: "weight", row: i, detail: format!("entry {bad} outside [0, 1]") });
            }
            let s = row.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(DataError::Row { what: "weight", row: i, detail: format!("sums to {s}") });
            }
        }
        Ok(LogicalWeights { w })
    }

    pub fn identity(n: usize) -> Self {
        LogicalWeights { w: Matrix::identity(n, n) }
    }

    /// `11ᵀ/N`
    pub fn uniform(n: usize) -> Self {
        LogicalWeights { w: Matrix::from_element(n, n, 1.0 / n as f64) }
    }

    pub fn n_agents(&self) -> usize {
        self.w.nrows()
    }

    pub fn weight(&self, n: usize, m: usize) -> f64 {
        self.w[(n, m)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    /// `{m : w[n][m] > 0}` in ascending order.
    pub fn support(&self, n: usize) -> Vec<usize> {
        (0..self.n_agents()).filter(|&m| self.w[(n, m)] > 0.0).collect()
    }

    /// Whether every entry equals `1/N`.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.n_agents() as f64;
        self.w.iter().all(|&x| x == u)
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in self.w.iter() {
            h.update(x.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }
}

/// Row `n` drawn from `Dirichlet(y0, …, y1 (at n), …, y0)` via normalized
/// Gamma draws. A zero concentration puts no mass on that coordinate, so
/// `y0 = 0` yields the identity.
pub fn gen_logical_weights(n_agents: usize, y0: f64, y1: f64, seed: u64) -> Result<LogicalWeights, DataError> {
    if n_agents == 0 {
        return Err(DataError::OutOfRange { name: "n_agents", value: 0.0, constraint: "must be ≥ 1" });
    }
    if !(y0.is_finite() && y0 >= 0.0) {
        return Err(DataError::OutOfRange { name: "y0", value: y0, constraint: "must be finite and ≥ 0" });
    }
    if !(y1.is_finite() && y1 > 0.0) {
        return Err(DataError::OutOfRange { name: "y1", value: y1, constraint: "must be finite and > 0" });
    }
    if y1 < y0 {
        return Err(DataError::DirichletOrder { y0, y1 });
    }
    let mut w = Matrix::zeros(n_agents, n_agents);
    for n in 0..n_agents {
        let mut rng = seed::rng_for(seed, "logical-weights", n as u64);
        let mut row: Vec<f64> = (0..n_agents)
            .map(|m| {
                let shape = if m == n { y1 } else { y0 };
                if shape == 0.0 {
                    0.0
                } else {
                    Gamma::new(shape, 1.0).expect("positive shape").sample(&mut rng)
                }
            })
            .collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            // every Gamma draw underflowed; fall back to the mode at n
            row.iter_mut().enumerate().for_each(|(m, x)| *x = if m == n { 1.0 } else { 0.0 });
        }
        for (m, x) in row.into_iter().enumerate() {
            w[(n, m)] = x;
        }
    }
    LogicalWeights::from_matrix(w)
}

/// Doubly stochastic, graph-supported consensus matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    a: Matrix,
}

impl MixingMatrix {
    pub fn from_matrix(a: Matrix, topo: &Topology) -> Result<Self, DataError> {
        let n = topo.n_agents();
        if a.nrows() != n || a.ncols() != n {
            return Err(DataError::Shape { what: "mixing matrix", expected: n, rows: a.nrows(), cols: a.ncols() });
        }
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(DataError::Row { what: "mixing", row: i, detail: format!("entry {v} at column {j}") });
                }
                if v > 0.0 && i != j && !topo.has_edge(i, j) {
                    return Err(DataError::Support { n: i, m: j, value: v });
                }
            }
            let s = a.row(i).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(DataError::Row { what: "mixing", row: i, detail: format!("sums to {s}") });
            }
            let s = a.column(i).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(DataError::Column { col: i, sum: s });
            }
        }
        Ok(MixingMatrix { a })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn weight(&self, n: usize, m: usize) -> f64 {
        self.a[(n, m)]
    }

    pub fn n_agents(&self) -> usize {
        self.a.nrows()
    }

    /// Second-largest singular value; the contraction factor of one
    /// averaging step on the disagreement subspace.
    pub fn second_singular_value(&self) -> f64 {
        let mut sv: Vec<f64> = self.a.clone().singular_values().iter().copied().collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv.get(1).copied().unwrap_or(0.0)
    }

    /// Second-largest eigenvalue modulus of the symmetrized matrix.
    pub fn second_eigenvalue_modulus(&self) -> f64 {
        let sym = (&self.a + self.a.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().map(|x| x.abs()).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev.get(1).copied().unwrap_or(0.0)
    }
}

/// Metropolis–Hastings weights: `a[n][m] = 1 / (1 + max(deg n, deg m))`
/// on edges, the remainder on the diagonal.
pub fn gen_mixing_matrix(topo: &Topology) -> MixingMatrix {
    let n = topo.n_agents();
    let mut a = Matrix::zeros(n, n);
    for (u, v) in topo.edges() {
        let w = 1.0 / (1.0 + topo.degree(u).max(topo.degree(v)) as f64);
        a[(u, v)] = w;
        a[(v, u)] = w;
    }
    for i in 0..n {
        let off: f64 = topo.neighbors(i).iter().map(|&j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_matrix(a, topo).expect("Metropolis weights are doubly stochastic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, TopologySpec};

    #[test]
    fn ground_truth_is_deterministic() {
        let p = GroundTruthParams { n_agents: 3, ..Default::default() };
        assert_eq!(gen_ground_truth(&p, 11).unwrap(), gen_ground_truth(&p, 11).unwrap());
        assert_ne!(gen_ground_truth(&p, 11).unwrap(), gen_ground_truth(&p, 12).unwrap());
    }

    #[test]
    fn zero_personal_variance_gives_constant_matrix() {
        let p = GroundTruthParams {
            n_agents: 2,
            personal_variance_range: (0.0, 0.0),
            ..Default::default()
        };
        let gt = gen_ground_truth(&p, 3).unwrap();
        for m in &gt.personal {
            let first = m[(0, 0)];
            assert!((-5.0..=5.0).contains(&first));
            assert!(m.iter().all(|&x| x == first));
        }
    }

    #[test]
    fn noiseless_stream_follows_ground_truth() {
        for (rho, pick_common) in [(1.0, true), (0.0, false)] {
            let p = GroundTruthParams { n_agents: 2, rho, noise_std: 0.0, ..Default::default() };
            let gt = gen_ground_truth(&p, 5).unwrap();
            let m = if pick_common { gt.common.clone() } else { gt.personal[1].clone() };
            for d in gen_stream(&gt, 1, 20, 5, None) {
                assert_eq!(d.value, &m * &d.key);
                assert!(d.key.iter().all(|x| (-1.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn gates_do_not_perturb_keys_or_values() {
        let p = GroundTruthParams { n_agents: 2, ..Default::default() };
        let gt = gen_ground_truth(&p, 5).unwrap();
        let plain = gen_stream(&gt, 0, 10, 9, None);
        let gated = gen_stream(&gt, 0, 10, 9, Some(0.9));
        for (a, b) in plain.iter().zip(&gated) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.value, b.value);
            assert_eq!(b.gate.as_ref().unwrap().len(), 8);
        }
    }

    #[test]
    fn stream_generation_order_is_irrelevant() {
        let p = GroundTruthParams { n_agents: 4, ..Default::default() };
        let gt = gen_ground_truth(&p, 1).unwrap();
        let forward: Vec<_> = (0..4).map(|n| gen_stream(&gt, n, 5, 2, None)).collect();
        let mut backward: Vec<_> = (0..4).rev().map(|n| gen_stream(&gt, n, 5, 2, None)).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn logical_weight_examples() {
        assert_eq!(gen_logical_weights(5, 0.0, 10.0, 1).unwrap(), LogicalWeights::identity(5));
        let w = gen_logical_weights(6, 2.0, 10.0, 4).unwrap();
        for n in 0..6 {
            assert!((w.matrix().row(n).sum() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(
            gen_logical_weights(3, 10.0, 5.0, 0),
            Err(DataError::DirichletOrder { y0: 10.0, y1: 5.0 })
        );
        assert!(gen_logical_weights(3, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn mixing_examples() {
        let t = build_topology(2, &TopologySpec::EdgeList(vec![(0, 1)]), 0).unwrap();
        let a = gen_mixing_matrix(&t);
        assert_eq!(a.matrix(), &Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));

        let t = build_topology(6, &TopologySpec::Ring, 0).unwrap();
        let a = gen_mixing_matrix(&t);
        assert!((a.second_eigenvalue_modulus() - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.second_singular_value() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_rejects_off_graph_weights() {
        let t = build_topology(3, &TopologySpec::EdgeList(vec![(0, 1), (1, 2)]), 0).unwrap();
        let a = Matrix::from_row_slice(3, 3, &[0.5, 0.0, 0.5, 0.0, 1.0, 0.0, 0.5, 0.0, 0.5]);
        assert_eq!(
            MixingMatrix::from_matrix(a, &t),
            Err(DataError::Support { n: 0, m: 2, value: 0.5 })
        );
        assert!(MixingMatrix::from_matrix(Matrix::identity(3, 3), &t).is_ok());
    }
}
