//! Memory-retrieval objectives for linear associative memories.
//!
//! A memory is a `d_v × d_k` matrix `X` that answers a key `k` with `X φ(k)`.
//! Each [`LossVariant`] is a convex function of `X` built from one
//! key/value pair (and, for gated variants, a binary gate `ψ` over the value
//! dimensions):
//!
//! | variant               | f(X)                                      |
//! |-----------------------|-------------------------------------------|
//! | `LinearAttention`     | `-<X k, v>`                               |
//! | `GatedLinearAttention`| `-<X k, v> + ½ ‖diag(√(1-ψ)) X‖²`         |
//! | `DeltaNet`            | `½ ‖X k - v‖²`                            |
//! | `SoftmaxNoNorm`       | `-<X φ(k), v>`                            |
//! | `SoftmaxWithNorm`     | `-<X φ(k), v> + ½ ‖X‖²`                   |
//! | `GatedSoftmax`        | `-<X φ(k), v> + ½ ‖diag(√(1-ψ)) X‖²`      |
//!
//! All norms are Frobenius. The feasible set is a Frobenius ball
//! ([`DomainBall`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0} loss requires a gate vector")]
    MissingGate(LossVariant),
    #[error("feature map {map} only applies to softmax-family losses, not {variant}")]
    FeatureMapNotApplicable { variant: LossVariant, map: FeatureMap },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("non-finite entry in matrix")]
    NonFinite,
    #[error("unknown {what} {name:?}")]
    Unknown { what: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    LinearAttention,
    GatedLinearAttention,
    DeltaNet,
    SoftmaxNoNorm,
    SoftmaxWithNorm,
    GatedSoftmax,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::LinearAttention,
        LossVariant::GatedLinearAttention,
        LossVariant::DeltaNet,
        LossVariant::SoftmaxNoNorm,
        LossVariant::SoftmaxWithNorm,
        LossVariant::GatedSoftmax,
    ];

    pub fn is_gated(self) -> bool {
        matches!(self, LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax)
    }

    pub fn is_softmax_family(self) -> bool {
        matches!(
            self,
            LossVariant::SoftmaxNoNorm | LossVariant::SoftmaxWithNorm | LossVariant::GatedSoftmax
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::LinearAttention => "linear-attention",
            LossVariant::GatedLinearAttention => "gated-linear-attention",
            LossVariant::DeltaNet => "deltanet",
            LossVariant::SoftmaxNoNorm => "softmax-no-norm",
            LossVariant::SoftmaxWithNorm => "softmax-with-norm",
            LossVariant::GatedSoftmax => "gated-softmax",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| LossError::Unknown {
                what: "loss",
                name: s.to_string(),
            })
    }
}

/// Key feature extraction `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMap {
    Identity,
    /// `exp(k_i)` per entry.
    ElementwiseExp,
    /// `softmax(k)`, computed with max subtraction.
    NormalizedExp,
}

impl FeatureMap {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::ElementwiseExp => "elementwise-exp",
            FeatureMap::NormalizedExp => "normalized-exp",
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMap {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [FeatureMap::Identity, FeatureMap::ElementwiseExp, FeatureMap::NormalizedExp]
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| LossError::Unknown {
                what: "feature map",
                name: s.to_string(),
            })
    }
}

pub fn feature_map(map: FeatureMap, key: &Vector) -> Vector {
    match map {
        FeatureMap::Identity => key.clone(),
        FeatureMap::ElementwiseExp => key.map(f64::exp),
        FeatureMap::NormalizedExp => {
            let max = key.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = key.map(|x| (x - max).exp());
            let total = e.sum();
            e / total
        }
    }
}

/// A loss variant together with its key feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LossKind {
    variant: LossVariant,
    feature_map: FeatureMap,
}

impl LossKind {
    /// Uses identity features for the linear family and normalized-exp
    /// features for the softmax family.
    pub fn new(variant: LossVariant) -> Self {
        let feature_map = if variant.is_softmax_family() {
            FeatureMap::NormalizedExp
        } else {
            FeatureMap::Identity
        };
        LossKind { variant, feature_map }
    }

    pub fn with_feature_map(variant: LossVariant, feature_map: FeatureMap) -> Result<Self, LossError> {
        if !variant.is_softmax_family() && feature_map != FeatureMap::Identity {
            return Err(LossError::FeatureMapNotApplicable { variant, map: feature_map });
        }
        Ok(LossKind { variant, feature_map })
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn features(&self, key: &Vector) -> Vector {
        feature_map(self.feature_map, key)
    }
}

/// One key/value observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub key: Vector,
    pub value: Vector,
    /// `ψ`: `true` keeps a memory row, `false` marks it for decay.
    pub gate: Option<Vec<bool>>,
}

impl DataPoint {
    pub fn new(key: Vector, value: Vector) -> Self {
        DataPoint { key, value, gate: None }
    }

    pub fn with_gate(mut self, gate: Vec<bool>) -> Self {
        self.gate = Some(gate);
        self
    }
}

fn check_shapes(kind: &LossKind, x: &Matrix, d: &DataPoint) -> Result<(), LossError> {
    let (dv, dk) = x.shape();
    if d.key.len() != dk {
        return Err(LossError::Shape { what: "key length (d_k)", expected: dk, got: d.key.len() });
    }
    if d.value.len() != dv {
        return Err(LossError::Shape { what: "value length (d_v)", expected: dv, got: d.value.len() });
    }
    if kind.variant.is_gated() {
        match &d.gate {
            None => return Err(LossError::MissingGate(kind.variant)),
            Some(g) if g.len() != dv => {
                return Err(LossError::Shape { what: "gate length (d_v)", expected: dv, got: g.len() })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// `½ Σ_i (1-ψ_i) ‖X_i,:‖²`
fn gated_penalty(x: &Matrix, gate: &[bool]) -> f64 {
    let mut total = 0.0;
    for (i, &keep) in gate.iter().enumerate() {
        if !keep {
            total += x.row(i).norm_squared();
        }
    }
    0.5 * total
}

pub fn loss_eval(kind: &LossKind, x: &Matrix, d: &DataPoint) -> Result<f64, LossError> {
    check_shapes(kind, x, d)?;
    let phi = kind.features(&d.key);
    let value = match kind.variant {
        LossVariant::DeltaNet => 0.5 * (x * &phi - &d.value).norm_squared(),
        LossVariant::LinearAttention | LossVariant::SoftmaxNoNorm => -(x * &phi).dot(&d.value),
        LossVariant::SoftmaxWithNorm => -(x * &phi).dot(&d.value) + 0.5 * x.norm_squared(),
        LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax => {
            let gate = d.gate.as_deref().expect("checked");
            -(x * &phi).dot(&d.value) + gated_penalty(x, gate)
        }
    };
    Ok(value)
}

pub fn loss_grad(kind: &LossKind, x: &Matrix, d: &DataPoint) -> Result<Matrix, LossError> {
    check_shapes(kind, x, d)?;
    let phi = kind.features(&d.key);
    let grad = match kind.variant {
        LossVariant::DeltaNet => (x * &phi - &d.value) * phi.transpose(),
        LossVariant::LinearAttention | LossVariant::SoftmaxNoNorm => -(&d.value * phi.transpose()),
        LossVariant::SoftmaxWithNorm => x - &d.value * phi.transpose(),
        LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax => {
            let gate = d.gate.as_deref().expect("checked");
            let mut g = -(&d.value * phi.transpose());
            for (i, &keep) in gate.iter().enumerate() {
                if !keep {
                    let row = x.row(i).clone_owned();
                    let mut gr = g.row_mut(i);
                    gr += row;
                }
            }
            g
        }
    };
    Ok(grad)
}

/// Frobenius ball `{X : ‖X‖ ≤ R}` of diameter `B = 2R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBall {
    radius: f64,
}

impl DomainBall {
    pub fn new(radius: f64) -> Result<Self, LossError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(LossError::NonPositive { name: "radius", value: radius });
        }
        Ok(DomainBall { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, x: &Matrix) -> bool {
        x.norm() <= self.radius
    }

    /// Radial projection. The returned matrix always satisfies
    /// `norm() <= radius` as computed, so projecting twice is a no-op.
    pub fn project(&self, x: Matrix) -> Result<Matrix, LossError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        let norm = x.norm();
        if norm <= self.radius {
            return Ok(x);
        }
        let mut scale = self.radius / norm;
        loop {
            let y = &x * scale;
            if y.norm() <= self.radius {
                return Ok(y);
            }
            scale *= 1.0 - f64::EPSILON;
        }
    }
}

/// A valid Lipschitz constant `L` with `‖∇f(X)‖ ≤ L` on the ball, given
/// `key_bound ≥ sup ‖φ(k)‖` and `value_bound ≥ sup ‖v‖`.
pub fn grad_norm_bound(
    kind: &LossKind,
    domain: &DomainBall,
    key_bound: f64,
    value_bound: f64,
) -> Result<f64, LossError> {
    for (name, value) in [("key_bound", key_bound), ("value_bound", value_bound)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(LossError::NonPositive { name, value });
        }
    }
    let r = domain.radius();
    Ok(match kind.variant {
        LossVariant::DeltaNet => (r * key_bound + value_bound) * key_bound,
        LossVariant::LinearAttention | LossVariant::SoftmaxNoNorm => value_bound * key_bound,
        LossVariant::SoftmaxWithNorm | LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax => {
            value_bound * key_bound + r
        }
    })
}

/// Sum of weighted losses, kept as sufficient statistics:
/// `½ <X S, X> + ½ Σ_i r_i ‖X_i,:‖² - <C, X> + κ`.
///
/// Every variant is at most quadratic in `X`, so any weighted sum of
/// per-point losses fits this form exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub key_second_moment: Matrix,
    pub row_penalty: Vector,
    pub linear: Matrix,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn zeros(d_v: usize, d_k: usize) -> Self {
        QuadraticForm {
            key_second_moment: Matrix::zeros(d_k, d_k),
            row_penalty: Vector::zeros(d_v),
            linear: Matrix::zeros(d_v, d_k),
            constant: 0.0,
        }
    }

    /// Adds `weight · f(·; d)`.
    pub fn add_point(&mut self, kind: &LossKind, weight: f64, d: &DataPoint) -> Result<(), LossError> {
        let probe = Matrix::zeros(self.linear.nrows(), self.linear.ncols());
        check_shapes(kind, &probe, d)?;
        let phi = kind.features(&d.key);
        self.linear += (&d.value * phi.transpose()) * weight;
        match kind.variant {
            LossVariant::DeltaNet => {
                self.key_second_moment += (&phi * phi.transpose()) * weight;
                self.constant += 0.5 * weight * d.value.norm_squared();
            }
            LossVariant::LinearAttention | LossVariant::SoftmaxNoNorm => {}
            LossVariant::SoftmaxWithNorm => self.row_penalty.add_scalar_mut(weight),
            LossVariant::GatedLinearAttention | LossVariant::GatedSoftmax => {
                for (i, &keep) in d.gate.as_deref().expect("checked").iter().enumerate() {
                    if !keep {
                        self.row_penalty[i] += weight;
                    }
                }
            }
        }
        Ok(())
    }

    fn row_scaled(&self, x: &Matrix) -> Matrix {
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.row_penalty[i];
        }
        y
    }

    pub fn value(&self, x: &Matrix) -> f64 {
        let xs = x * &self.key_second_moment;
        0.5 * xs.dot(x) + 0.5 * self.row_scaled(x).dot(x) - self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &Matrix) -> Matrix {
        x * &self.key_second_moment + self.row_scaled(x) - &self.linear
    }

    /// Largest eigenvalue of the Hessian operator `X ↦ X S + diag(r) X`,
    /// estimated by power iteration.
    pub fn curvature(&self, iterations: usize) -> f64 {
        let (dv, dk) = self.linear.shape();
        let mut x = Matrix::from_element(dv, dk, 1.0);
        x /= x.norm();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let y = &x * &self.key_second_moment + self.row_scaled(&x);
            let n = y.norm();
            if n == 0.0 {
                return 0.0;
            }
            lambda = n;
            x = y / n;
        }
        lambda
    }
}
