//! Seeded synthetic regression problems with a controllable feature spectrum.
//!
//! The generator builds an n×d feature matrix X = τ·U·S·Vᵀ where
//!
//! * U has orthonormal columns drawn from a column-centered Gaussian (so
//!   every column of X has exactly zero mean: the all-ones vector is
//!   orthogonal to the span),
//! * S is a geometric singular-value profile running from 1 down to
//!   1/`sv_ratio`, which makes the feature conditioning an input rather than
//!   an accident of sampling,
//! * V is a Sylvester-Hadamard orthogonal mix when d is a power of two — its
//!   entries all have magnitude 1/√d, so every column of X gets the same
//!   variance and the final standardization is a no-op up to round-off,
//!   leaving the requested spectrum intact. For other d a random orthogonal
//!   mix is used and the post-hoc standardization may distort the spectrum
//!   (best effort, verified and warned about).
//!
//! Targets come from a smooth, seeded teacher (a small two-layer tanh
//! network evaluated on the finished features) plus optional Gaussian noise,
//! so every config is reproducible from its seeds alone with no files to
//! vendor.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::activation::ActivationSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::SynthSource;
use crate::network::Network;

/// Hidden width of the target-generating teacher network.
const TEACHER_WIDTH: usize = 8;

/// Achieved-vs-requested conditioning beyond this factor triggers a warning.
const CONDITION_WARN_FACTOR: f64 = 2.0;

/// Ratio of the largest to the smallest singular value of a matrix.
pub fn feature_condition(x: &DMatrix<f64>) -> f64 {
    let sv = x.clone().singular_values();
    let hi = sv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Sylvester construction: an orthogonal d×d matrix (d a power of two) whose
/// entries all have magnitude 1/√d.
fn normalized_hadamard(d: usize) -> DMatrix<f64> {
    debug_assert!(d.is_power_of_two());
    let mut h = DMatrix::from_element(1, 1, 1.0);
    let mut k = 1;
    while k < d {
        let mut next = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                let v = h[(i, j)];
                next[(i, j)] = v;
                next[(i, j + k)] = v;
                next[(i + k, j)] = v;
                next[(i + k, j + k)] = -v;
            }
        }
        h = next;
        k *= 2;
    }
    h / (d as f64).sqrt()
}

/// Generates the dataset described by `spec`. Deterministic: every byte of
/// the result is a pure function of its argument. Features are standardized
/// (exactly zero column means by construction; unit variance enforced by a
/// final standardization pass); targets are left raw.
pub fn synth_dataset(spec: &SynthSource) -> Result<Dataset> {
    if spec.d == 0 {
        return Err(Error::Data("synthetic data needs d >= 1".into()));
    }
    if spec.n < spec.d + 1 {
        return Err(Error::Data(format!(
            "synthetic data needs n >= d + 1 (centering costs one rank), got n = {}, d = {}",
            spec.n, spec.d
        )));
    }
    if !spec.sv_ratio.is_finite() || spec.sv_ratio < 1.0 {
        return Err(Error::Data(format!(
            "sv_ratio must be finite and >= 1, got {}",
            spec.sv_ratio
        )));
    }
    if !spec.noise.is_finite() || spec.noise < 0.0 {
        return Err(Error::Data(format!(
            "noise must be finite and >= 0, got {}",
            spec.noise
        )));
    }
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Orthonormal column basis orthogonal to the all-ones vector: column-center
    // a Gaussian draw, then take the thin Q factor. Row-major draw order.
    let mut g = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    for j in 0..d {
        let mean = g.column(j).sum() / n as f64;
        for i in 0..n {
            g[(i, j)] -= mean;
        }
    }
    let u = g.qr().q();

    // Geometric singular profile 1 → 1/sv_ratio.
    let s = DVector::from_fn(d, |k, _| {
        if d == 1 {
            1.0
        } else {
            spec.sv_ratio.powf(-(k as f64) / (d as f64 - 1.0))
        }
    });

    let exact_mix = d.is_power_of_two();
    let v = if exact_mix {
        normalized_hadamard(d)
    } else {
        log::warn!(
            "synthetic features: d = {d} is not a power of two, using a random orthogonal mix; \
             standardization may distort the requested spectrum (best effort)"
        );
        let mut gm = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                gm[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        gm.qr().q()
    };

    // τ makes the average column variance exactly 1; with the Hadamard mix
    // every column hits it individually.
    let tau = (n as f64 * d as f64 / s.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let x_raw = u * DMatrix::from_diagonal(&s) * v.transpose() * tau;

    let x_std = Dataset::new(x_raw, DVector::zeros(n))?
        .standardize()?
        .x()
        .clone();

    let achieved = feature_condition(&x_std);
    let rel = achieved / spec.sv_ratio;
    if !(1.0 / CONDITION_WARN_FACTOR..=CONDITION_WARN_FACTOR).contains(&rel) {
        log::warn!(
            "synthetic features: requested conditioning {} but achieved {achieved:.6} \
             after standardization (best effort)",
            spec.sv_ratio
        );
    }

    // Smooth seeded teacher on the finished features, plus optional noise.
    let teacher_seed: u64 = rng.random();
    let teacher = Network::init(teacher_seed, TEACHER_WIDTH, d, ActivationSpec::tanh())?;
    let mut y = teacher.forward_on(&x_std)?;
    if spec.noise > 0.0 {
        for i in 0..n {
            y[i] += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }

    Dataset::new(x_std, y)
}
