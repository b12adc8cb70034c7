//! Random-utility choice: i.i.d. additive payoff noise.
//!
//! `C_i(p) = P(p_i + v_i >= max_l p_l + v_l)`. Two evaluators are provided: a
//! seeded Monte-Carlo estimator, and a deterministic quadrature of
//! `C_i(p) = ∫_0^1 prod_{j != i} F(p_i - p_j + F^{-1}(u)) du` used wherever the
//! choice map must be smooth (e.g. inside the integrator).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Euler–Mascheroni constant; centers the Gumbel noise at zero mean.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gumbel,
    Normal,
    Laplace,
    /// Generalized extreme value; shape 0 is the Gumbel family.
    Gev,
    Logistic,
    Cauchy,
}

impl NoiseFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(Self::Gumbel),
            "normal" | "gaussian" | "probit" => Ok(Self::Normal),
            "laplace" => Ok(Self::Laplace),
            "gev" => Ok(Self::Gev),
            "logistic" => Ok(Self::Logistic),
            "cauchy" => Ok(Self::Cauchy),
            other => Err(Error::Config(format!("unknown noise distribution {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gumbel => "gumbel",
            Self::Normal => "normal",
            Self::Laplace => "laplace",
            Self::Gev => "gev",
            Self::Logistic => "logistic",
            Self::Cauchy => "cauchy",
        }
    }
}

/// i.i.d. per-strategy payoff noise with a scale parameter.
///
/// Gumbel uses `P(v <= ζ) = exp(-exp(-ζ/scale - γ))`, for which the choice map
/// is exactly logit with `μ = scale`. Normal scale is the standard deviation and
/// Cauchy scale is the half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    family: NoiseFamily,
    scale: f64,
    shape: f64,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        Self::with_shape(family, scale, 0.0)
    }

    /// `shape` is only used by GEV. A nonzero shape gives bounded support.
    pub fn with_shape(family: NoiseFamily, scale: f64, shape: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param(format!("noise scale must be positive, got {scale}")));
        }
        if !shape.is_finite() {
            return Err(Error::param("GEV shape must be finite"));
        }
        Ok(Self { family, scale, shape })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.scale;
        let y = x / s;
        match self.family {
            NoiseFamily::Gumbel => (-(-y - EULER_GAMMA).exp()).exp(),
            NoiseFamily::Normal => standard_normal().cdf(y),
            NoiseFamily::Laplace => {
                if y < 0.0 {
                    0.5 * y.exp()
                } else {
                    1.0 - 0.5 * (-y).exp()
                }
            }
            NoiseFamily::Gev => {
                let xi = self.shape;
                if xi == 0.0 {
                    (-(-y).exp()).exp()
                } else {
                    let t = 1.0 + xi * y;
                    if t <= 0.0 {
                        if xi > 0.0 {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        (-t.powf(-1.0 / xi)).exp()
                    }
                }
            }
            NoiseFamily::Logistic => 1.0 / (1.0 + (-y).exp()),
            NoiseFamily::Cauchy => 0.5 + y.atan() / std::f64::consts::PI,
        }
    }

    /// Inverse CDF on the open interval (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let s = self.scale;
        s * match self.family {
            NoiseFamily::Gumbel => -((-u.ln()).ln() + EULER_GAMMA),
            NoiseFamily::Normal => standard_normal().inverse_cdf(u),
            NoiseFamily::Laplace => {
                if u < 0.5 {
                    (2.0 * u).ln()
                } else {
                    -(2.0 * (1.0 - u)).ln()
                }
            }
            NoiseFamily::Gev => {
                let xi = self.shape;
                if xi == 0.0 {
                    -(-u.ln()).ln()
                } else {
                    ((-u.ln()).powf(-xi) - 1.0) / xi
                }
            }
            NoiseFamily::Logistic => (u / (1.0 - u)).ln(),
            NoiseFamily::Cauchy => (std::f64::consts::PI * (u - 0.5)).tan(),
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Uniform draw on the open interval (0, 1).
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Empirical frequency of `argmax(p + v)` over `samples` seeded noise draws.
pub fn mc_choice(noise: &NoiseModel, p: &[f64], samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::param("samples must be at least 1"));
    }
    if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("payoff must be non-empty and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; p.len()];
    for _ in 0..samples {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, &pi) in p.iter().enumerate() {
            let v = pi + noise.quantile(open_unit(&mut rng));
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        counts[best] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / samples as f64).collect())
}

// 8-point Gauss–Legendre on [-1, 1]
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];
const PANELS: usize = 96;

/// Deterministic evaluator of a noise model's choice map.
#[derive(Debug, Clone)]
pub struct NoiseChoice {
    model: NoiseModel,
    // (weight, quantile) at each quadrature node in u
    nodes: Vec<(f64, f64)>,
}

impl NoiseChoice {
    pub fn new(model: NoiseModel) -> Self {
        let mut nodes = Vec::with_capacity(PANELS * GL_NODES.len());
        let h = 1.0 / PANELS as f64;
        // u = s^3 (10 - 15 s + 6 s^2) clusters nodes at both tails, where the
        // quantile diverges
        for k in 0..PANELS {
            let mid = (k as f64 + 0.5) * h;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                let s = mid + 0.5 * h * x;
                let u = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
                let du = 30.0 * s * s * (1.0 - s) * (1.0 - s);
                nodes.push((0.5 * h * w * du, model.quantile(u)));
            }
        }
        Self { model, nodes }
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn probabilities(&self, p: &[f64]) -> Vec<f64> {
        let n = p.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for &(w, q) in &self.nodes {
                let mut prod = 1.0;
                for j in 0..n {
                    if j != i {
                        prod *= self.model.cdf(p[i] - p[j] + q);
                        if prod == 0.0 {
                            break;
                        }
                    }
                }
                acc += w * prod;
            }
            out[i] = acc;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }
}
