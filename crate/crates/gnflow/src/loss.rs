//! Output-space loss. The training objective is g(ψ) evaluated at ψ = α f(w);
//! the flow only needs g's value, gradient, and its strong-convexity /
//! smoothness constants.
//!
//! The quadratic loss g(ψ) = ‖ψ − y‖₂² has ∇g(ψ) = 2(ψ − y) and is 2-strongly
//! convex with 2-Lipschitz gradient, so ν = μ = 2.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// g(ψ) = ‖ψ − y‖₂².
#[derive(Clone, Debug)]
pub struct QuadraticLoss {
    y: DVector<f64>,
}

impl QuadraticLoss {
    pub fn new(y: DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("target vector is empty".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss targets".into()));
        }
        Ok(Self { y })
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    fn check(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.y.len() {
            return Err(Error::ShapeMismatch(format!(
                "loss input has length {}, targets have length {}",
                psi.len(),
                self.y.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, psi: &DVector<f64>) -> Result<f64> {
        self.check(psi)?;
        Ok((psi - &self.y).norm_squared())
    }

    pub fn grad(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(psi)?;
        Ok(2.0 * (psi - &self.y))
    }

    /// Strong-convexity constant ν.
    pub fn nu(&self) -> f64 {
        2.0
    }

    /// Gradient-Lipschitz constant μ.
    pub fn mu(&self) -> f64 {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_targets() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let loss = QuadraticLoss::new(y.clone()).unwrap();
        assert_eq!(loss.value(&y).unwrap(), 0.0);
        assert!(loss.grad(&y).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_value_and_gradient() {
        let loss = QuadraticLoss::new(DVector::zeros(2)).unwrap();
        let psi = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(loss.value(&psi).unwrap(), 25.0);
        let g = loss.grad(&psi).unwrap();
        assert_eq!(g[0], 6.0);
        assert_eq!(g[1], 8.0);
    }

    #[test]
    fn curvature_constants() {
        let loss = QuadraticLoss::new(DVector::zeros(1)).unwrap();
        assert_eq!(loss.nu(), 2.0);
        assert_eq!(loss.mu(), 2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let loss = QuadraticLoss::new(DVector::zeros(2)).unwrap();
        assert!(loss.value(&DVector::zeros(3)).is_err());
        assert!(loss.grad(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn empty_or_nonfinite_targets_rejected() {
        assert!(QuadraticLoss::new(DVector::zeros(0)).is_err());
        assert!(QuadraticLoss::new(DVector::from_vec(vec![f64::NAN])).is_err());
    }
}
