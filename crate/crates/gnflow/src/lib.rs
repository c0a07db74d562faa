//! Damped Gauss-Newton flows for shallow networks.
//!
//! The crate trains two-layer models by following the preconditioned flow
//! ẇ = −(1/α) H_ρ⁻¹ Dᵀ ∇g(α f(w)), where D is the Jacobian of the centered
//! network output f, H_ρ = (1−ρ)DᵀD + ρI interpolates between the pure
//! Gauss-Newton direction (ρ = 0) and the plain gradient direction (ρ = 1),
//! and α scales the output. Alongside the dynamics it provides the spectral
//! diagnostics (Gram/kernel extremes, projected gradient norms, deviation
//! radii) and closed-form rate certificates that make the convergence
//! behavior checkable on concrete problems, plus a reproducible experiment
//! harness with CSV artifacts.

pub mod activation;
pub mod data;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod network;

pub use activation::{ActivationKind, ActivationSpec};
pub use data::{Dataset, Standardization};
pub use diagnostics::{FitWindow, RateBound, Regime, SpectralReport};
pub use dynamics::{ExitPolicy, FlowConfig, FlowMode, StepRow, TrajectoryRecord};
pub use error::{Error, Result};
pub use linalg::DampedPreconditioner;
pub use loss::QuadraticLoss;
pub use network::Network;
