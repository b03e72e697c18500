//! Bregman-divergence losses.
//!
//! Both built-in families use the squared-norm potential `F(v) = ‖v‖²`:
//!
//! * `squared_location`: `ℓ(z, w) = D_F(w, z) = ‖w − z‖²` with `w, z ∈ R^d`.
//! * `ols_regression`: `ℓ((x, y), w) = (wᵀx − y)² = D_F(wᵀx, y)` with the
//!   scalar potential `y ↦ y²`.
//!
//! `∇F` is linear with Lipschitz constant 2 in both cases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, Model, Sample};

/// A strictly convex, continuously differentiable potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `F(v) = ‖v‖²`.
    SquaredNorm,
}

impl Potential {
    pub fn value(&self, v: &[f64]) -> f64 {
        match self {
            Potential::SquaredNorm => dot(v, v),
        }
    }

    pub fn grad(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Potential::SquaredNorm => v.iter().map(|x| 2.0 * x).collect(),
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn smoothness(&self) -> f64 {
        match self {
            Potential::SquaredNorm => 2.0,
        }
    }
}

/// `D_F(w, z) = F(w) − F(z) − ⟨∇F(z), w − z⟩`.
pub fn bregman(potential: Potential, w: &[f64], z: &[f64]) -> Result<f64> {
    if w.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), got: w.len() });
    }
    let gz = potential.grad(z);
    let inner: f64 = gz.iter().zip(w.iter().zip(z)).map(|(g, (a, b))| g * (a - b)).sum();
    Ok(potential.value(w) - potential.value(z) - inner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossFamily {
    SquaredLocation { dim: usize },
    OlsRegression { dim: usize },
}

impl LossFamily {
    pub const SQUARED_LOCATION: &'static str = "squared_location";
    pub const OLS_REGRESSION: &'static str = "ols_regression";

    /// Parses the identifier used in configuration files.
    pub fn from_id(id: &str, dim: usize) -> Result<Self> {
        match id {
            Self::SQUARED_LOCATION => Ok(LossFamily::SquaredLocation { dim }),
            Self::OLS_REGRESSION => Ok(LossFamily::OlsRegression { dim }),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            LossFamily::SquaredLocation { .. } => Self::SQUARED_LOCATION,
            LossFamily::OlsRegression { .. } => Self::OLS_REGRESSION,
        }
    }

    /// Model dimension `p`.
    pub fn dim(&self) -> usize {
        match *self {
            LossFamily::SquaredLocation { dim } | LossFamily::OlsRegression { dim } => dim,
        }
    }

    pub fn potential(&self) -> Potential {
        Potential::SquaredNorm
    }

    /// Checks that `z` has this family's variant and dimension.
    pub fn check(&self, z: &Sample) -> Result<()> {
        match (self, z) {
            (LossFamily::SquaredLocation { dim }, Sample::Location(v)) if v.len() == *dim => Ok(()),
            (LossFamily::OlsRegression { dim }, Sample::Regression { x, .. }) if x.len() == *dim => Ok(()),
            _ => Err(Error::VariantMismatch),
        }
    }

    fn check_model(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        Ok(())
    }

    pub fn loss(&self, z: &Sample, w: &[f64]) -> Result<f64> {
        self.check(z)?;
        self.check_model(w)?;
        Ok(self.loss_unchecked(z, w))
    }

    pub(crate) fn loss_unchecked(&self, z: &Sample, w: &[f64]) -> f64 {
        match z {
            Sample::Location(v) => w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum(),
            Sample::Regression { x, y } => {
                let r = dot(w, x) - y;
                r * r
            }
        }
    }

    /// `∇_w ℓ(z, w)`.
    pub fn grad_w_loss(&self, z: &Sample, w: &[f64]) -> Result<Model> {
        self.check(z)?;
        self.check_model(w)?;
        let mut g = vec![0.0; w.len()];
        self.grad_into(z, w, &mut g);
        Ok(Model(g))
    }

    pub(crate) fn grad_into(&self, z: &Sample, w: &[f64], out: &mut [f64]) {
        match z {
            Sample::Location(v) => {
                for ((o, a), b) in out.iter_mut().zip(w).zip(v) {
                    *o = 2.0 * (a - b);
                }
            }
            Sample::Regression { x, y } => {
                let r = 2.0 * (dot(w, x) - y);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = r * xi;
                }
            }
        }
    }

    /// `w ← w − η ∇_w ℓ(z, w)` in place. Every SGD step in the crate goes through here.
    #[inline]
    pub(crate) fn sgd_step(&self, z: &Sample, w: &mut [f64], eta: f64) {
        match z {
            Sample::Location(v) => {
                for (a, b) in w.iter_mut().zip(v) {
                    *a -= eta * (2.0 * (*a - b));
                }
            }
            Sample::Regression { x, y } => {
                let r = 2.0 * (dot(w, x) - y);
                for (a, xi) in w.iter_mut().zip(x) {
                    *a -= eta * (r * xi);
                }
            }
        }
    }

    /// `g(z) = ∇F(z)` at the Bregman argument of the sample: `2z` for a
    /// location, the scalar `2y` for a regression pair.
    pub fn potential_grad_at_sample(&self, z: &Sample) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(match z {
            Sample::Location(v) => self.potential().grad(v),
            Sample::Regression { y, .. } => vec![2.0 * y],
        })
    }

    /// `‖g(z)‖` without allocating.
    pub(crate) fn potential_grad_norm(&self, z: &Sample) -> f64 {
        match z {
            Sample::Location(v) => 2.0 * dot(v, v).sqrt(),
            Sample::Regression { y, .. } => 2.0 * y.abs(),
        }
    }

    /// `L`, the Lipschitz constant of `∇F`.
    pub fn smoothness_constant(&self) -> f64 {
        self.potential().smoothness()
    }
}
