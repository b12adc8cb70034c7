//! Admissible payoff perturbations and the models built from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A deterministic payoff perturbation `Q` on the interior of the simplex.
///
/// Implementations must be strictly convex along tangent directions and have a
/// gradient whose norm blows up as any coordinate approaches zero; the choice
/// map `argmax z'p - Q(z)` is then single-valued and interior.
pub trait Perturbation: Send + Sync + fmt::Debug {
    fn value(&self, z: &[f64]) -> f64;

    fn gradient(&self, z: &[f64], grad: &mut [f64]);

    /// Writes the full `n x n` Hessian into `hess`.
    fn hessian(&self, z: &[f64], hess: &mut DMatrix<f64>);

    /// Whether `value` has a finite extension to the simplex boundary.
    fn extends_to_boundary(&self) -> bool {
        false
    }
}

/// `Q(z) = sum z_i ln z_i`, with `0 ln 0 = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegEntropy;

impl Perturbation for NegEntropy {
    fn value(&self, z: &[f64]) -> f64 {
        z.iter().map(|&v| xlogx(v)).sum()
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        for (g, &v) in grad.iter_mut().zip(z) {
            *g = v.ln() + 1.0;
        }
    }

    fn hessian(&self, z: &[f64], hess: &mut DMatrix<f64>) {
        hess.fill(0.0);
        for (i, &v) in z.iter().enumerate() {
            hess[(i, i)] = 1.0 / v;
        }
    }

    fn extends_to_boundary(&self) -> bool {
        true
    }
}

/// `Q(z) = -sum ln z_i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogBarrier;

impl Perturbation for LogBarrier {
    fn value(&self, z: &[f64]) -> f64 {
        -z.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        for (g, &v) in grad.iter_mut().zip(z) {
            *g = -1.0 / v;
        }
    }

    fn hessian(&self, z: &[f64], hess: &mut DMatrix<f64>) {
        hess.fill(0.0);
        for (i, &v) in z.iter().enumerate() {
            hess[(i, i)] = 1.0 / (v * v);
        }
    }
}

pub(crate) fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// Unit-scale perturbation `Q̄` of a one-parameter family `μ Q̄`.
#[derive(Clone, Debug)]
pub enum BasePerturbation {
    NegEntropy,
    LogBarrier,
    Custom(Arc<dyn Perturbation>),
}

impl BasePerturbation {
    fn as_dyn(&self) -> &dyn Perturbation {
        match self {
            BasePerturbation::NegEntropy => &NegEntropy,
            BasePerturbation::LogBarrier => &LogBarrier,
            BasePerturbation::Custom(q) => q.as_ref(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum PerturbationKind {
    /// Logit choice: `Q = μ sum z ln z`. Has closed forms for everything.
    Logit { mu: f64 },
    /// `Q = μ Q̄` for a unit-scale base perturbation.
    Scaled { mu: f64, base: BasePerturbation },
    /// A fully user-supplied `Q`.
    Custom(Arc<dyn Perturbation>),
}

/// An admissible perturbation together with the strategy count it acts on.
#[derive(Clone, Debug)]
pub struct PerturbationModel {
    kind: PerturbationKind,
    n: usize,
}

impl PerturbationModel {
    pub fn new(kind: PerturbationKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param(format!("strategy count must be at least 2, got {n}")));
        }
        match &kind {
            PerturbationKind::Logit { mu } | PerturbationKind::Scaled { mu, .. } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::param(format!("noise level mu must be positive, got {mu}")));
                }
            }
            PerturbationKind::Custom(_) => {}
        }
        Ok(Self { kind, n })
    }

    pub fn logit(mu: f64, n: usize) -> Result<Self> {
        Self::new(PerturbationKind::Logit { mu }, n)
    }

    pub fn scaled(mu: f64, base: BasePerturbation, n: usize) -> Result<Self> {
        Self::new(PerturbationKind::Scaled { mu, base }, n)
    }

    pub fn kind(&self) -> &PerturbationKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_logit(&self) -> bool {
        matches!(self.kind, PerturbationKind::Logit { .. })
    }

    /// The noise level of a one-parameter model; `None` for custom `Q`.
    pub fn mu(&self) -> Option<f64> {
        match &self.kind {
            PerturbationKind::Logit { mu } | PerturbationKind::Scaled { mu, .. } => Some(*mu),
            PerturbationKind::Custom(_) => None,
        }
    }

    /// Same family with a different noise level.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        let kind = match &self.kind {
            PerturbationKind::Logit { .. } => PerturbationKind::Logit { mu },
            PerturbationKind::Scaled { base, .. } => PerturbationKind::Scaled { mu, base: base.clone() },
            PerturbationKind::Custom(_) => {
                return Err(Error::param("a custom perturbation has no noise parameter"))
            }
        };
        Self::new(kind, self.n)
    }

    fn scale_and_base(&self) -> (f64, &dyn Perturbation) {
        match &self.kind {
            PerturbationKind::Logit { mu } => (*mu, &NegEntropy),
            PerturbationKind::Scaled { mu, base } => (*mu, base.as_dyn()),
            PerturbationKind::Custom(q) => (1.0, q.as_ref()),
        }
    }

    pub(crate) fn extends_to_boundary(&self) -> bool {
        self.scale_and_base().1.extends_to_boundary()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let (s, q) = self.scale_and_base();
        s * q.value(z)
    }

    pub fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let (s, q) = self.scale_and_base();
        q.gradient(z, grad);
        if s != 1.0 {
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn hessian(&self, z: &[f64], hess: &mut DMatrix<f64>) {
        let (s, q) = self.scale_and_base();
        q.hessian(z, hess);
        if s != 1.0 {
            *hess *= s;
        }
    }
}
