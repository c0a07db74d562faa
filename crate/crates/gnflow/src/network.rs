//! Two-layer network with fixed signs on the output layer.
//!
//! The model is φ(x; w) = Σᵢ cᵢ σ(xᵀ w⁽ⁱ⁾) with m hidden units, signs
//! cᵢ ∈ {−1, +1} frozen at initialization, and trainable first-layer weights
//! stored as one flat vector w ∈ ℝᵖ, p = m·d, block i occupying
//! `w[i*d..(i+1)*d]`. Training always acts on the *centered* output
//! f(w) = φ(w) − φ(w_init), so f(w_init) = 0 exactly and the optimization
//! starts from the origin of the output space regardless of the draw.
//!
//! The Jacobian of f with respect to w (the signs are not trainable) has row
//! j, block i equal to cᵢ σ′(x_jᵀ w⁽ⁱ⁾) x_jᵀ; centering does not change it.
//!
//! Randomness is fully pinned: a ChaCha8 stream seeded from the config draws
//! first all m signs (one boolean each, `true` ↦ +1), then all m·d weight
//! coordinates block by block from the standard normal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct BoundData {
    x: DMatrix<f64>,
    phi_init: DVector<f64>,
}

/// Two-layer model: frozen signs, trainable flat weight vector, frozen
/// initialization snapshot, and (once bound) the cached φ(w_init) needed for
/// the centered output.
#[derive(Clone, Debug)]
pub struct Network {
    activation: ActivationSpec,
    m: usize,
    d: usize,
    c: DVector<f64>,
    w: DVector<f64>,
    w_init: DVector<f64>,
    bound: Option<BoundData>,
}

impl Network {
    /// Random initialization: cᵢ i.i.d. uniform on {−1, +1}, then each block
    /// w⁽ⁱ⁾ i.i.d. standard normal. Deterministic for a fixed seed.
    pub fn init(seed: u64, m: usize, d: usize, activation: ActivationSpec) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs m >= 1 and d >= 1, got m = {m}, d = {d}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let w = DVector::from_fn(m * d, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::from_parts(activation, m, d, c, w)
    }

    /// Builds a network from explicit parts (test fixtures, replays).
    pub fn from_parts(
        activation: ActivationSpec,
        m: usize,
        d: usize,
        c: DVector<f64>,
        w: DVector<f64>,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidArgument("m and d must be at least 1".into()));
        }
        if c.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "sign vector has length {}, expected m = {m}",
                c.len()
            )));
        }
        if w.len() != m * d {
            return Err(Error::ShapeMismatch(format!(
                "weight vector has length {}, expected m*d = {}",
                w.len(),
                m * d
            )));
        }
        if c.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::InvalidArgument(
                "sign vector entries must be exactly -1 or +1".into(),
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial weights".into()));
        }
        let w_init = w.clone();
        Ok(Self {
            activation,
            m,
            d,
            c,
            w,
            w_init,
            bound: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of trainable parameters p = m·d.
    pub fn p(&self) -> usize {
        self.m * self.d
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.activation
    }

    pub fn signs(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn w_init(&self) -> &DVector<f64> {
        &self.w_init
    }

    /// ‖w − w_init‖₂.
    pub fn deviation(&self) -> f64 {
        (&self.w - &self.w_init).norm()
    }

    pub fn set_weights(&mut self, w: DVector<f64>) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "weight vector has length {}, expected {}",
                w.len(),
                self.p()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        self.w = w;
        Ok(())
    }

    /// Caches the feature matrix and φ(w_init) so that the centered output
    /// f(w) = φ(w) − φ(w_init) can be evaluated. φ_init is always taken at
    /// the frozen snapshot, not the current weights.
    pub fn bind(&mut self, x: &DMatrix<f64>) -> Result<()> {
        self.check_features(x)?;
        let phi_init = self.forward_with(&self.w_init, x);
        self.bound = Some(BoundData {
            x: x.clone(),
            phi_init,
        });
        Ok(())
    }

    pub fn is_bound(&self) -> bool {
        self.bound.is_some()
    }

    pub fn bound_features(&self) -> Option<&DMatrix<f64>> {
        self.bound.as_ref().map(|b| &b.x)
    }

    fn check_features(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} columns, network expects d = {}",
                x.ncols(),
                self.d
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::ShapeMismatch("feature matrix has no rows".into()));
        }
        Ok(())
    }

    fn bound_data(&self) -> Result<&BoundData> {
        self.bound.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "network is not bound to a dataset (call bind before centered evaluation)".into(),
            )
        })
    }

    /// Pre-activations xᵀw⁽ⁱ⁾ as an n×m matrix. Block i of the flat weight
    /// vector is column i of the d×m weight matrix.
    fn preactivations(&self, w: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let w_mat = DMatrix::from_column_slice(self.d, self.m, w.as_slice());
        x * w_mat
    }

    fn forward_with(&self, w: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
        let mut z = self.preactivations(w, x);
        z.apply(|v| *v = self.activation.value(*v));
        z * &self.c
    }

    /// φ(w) on an arbitrary feature matrix.
    pub fn forward_on(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_features(x)?;
        Ok(self.forward_with(&self.w, x))
    }

    /// φ(w) on the bound feature matrix.
    pub fn forward(&self) -> Result<DVector<f64>> {
        let bound = self.bound_data()?;
        Ok(self.forward_with(&self.w, &bound.x))
    }

    /// Centered output f(w) = φ(w) − φ(w_init) on the bound feature matrix.
    /// Exactly zero at w = w_init.
    pub fn centered_output(&self) -> Result<DVector<f64>> {
        let bound = self.bound_data()?;
        Ok(self.forward_with(&self.w, &bound.x) - &bound.phi_init)
    }

    /// Exact Jacobian of f (equivalently φ) with respect to w at the current
    /// weights: row j, block i is cᵢ σ′(x_jᵀw⁽ⁱ⁾) x_jᵀ.
    pub fn jacobian_on(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_features(x)?;
        let z = self.preactivations(&self.w, x);
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.p());
        for j in 0..n {
            for i in 0..self.m {
                let scale = self.c[i] * self.activation.deriv(z[(j, i)]);
                for k in 0..self.d {
                    out[(j, i * self.d + k)] = scale * x[(j, k)];
                }
            }
        }
        Ok(out)
    }

    /// Jacobian on the bound feature matrix.
    pub fn jacobian(&self) -> Result<DMatrix<f64>> {
        let bound = self.bound_data()?;
        self.jacobian_on(&bound.x.clone())
    }

    /// Central finite-difference Jacobian; test oracle for the analytic one.
    pub fn fd_jacobian_on(&self, x: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
        if !crate::error::is_positive(h) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        self.check_features(x)?;
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.p());
        let mut w_plus = self.w.clone();
        let mut w_minus = self.w.clone();
        for l in 0..self.p() {
            w_plus[l] += h;
            w_minus[l] -= h;
            let diff = (self.forward_with(&w_plus, x) - self.forward_with(&w_minus, x)) / (2.0 * h);
            out.set_column(l, &diff);
            w_plus[l] = self.w[l];
            w_minus[l] = self.w[l];
        }
        Ok(out)
    }

    /// Lipschitz bound for f as a map of the weights: σ₁ √(m Σⱼ ‖x_j‖₂²).
    pub fn lipschitz_bound_on(&self, x: &DMatrix<f64>) -> f64 {
        let sum_sq: f64 = x.row_iter().map(|r| r.norm_squared()).sum();
        self.activation.sigma1() * (self.m as f64 * sum_sq).sqrt()
    }

    pub fn lipschitz_bound(&self) -> Result<f64> {
        let bound = self.bound_data()?;
        Ok(self.lipschitz_bound_on(&bound.x))
    }
}
