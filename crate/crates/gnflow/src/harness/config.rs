//! Experiment configuration: TOML schema, validation, and path resolution.
//!
//! A config file fully determines an experiment: where the data comes from,
//! the network, the flow settings, the (α, ρ) grid to sweep, and where the
//! artifacts go. Unknown keys are rejected so a typo cannot silently fall
//! back to a default. Parsing ([`from_toml_str`]) is a pure function of the
//! text; only [`load`] touches the filesystem (reading the file, resolving
//! relative paths against the config's directory, and checking that every
//! referenced file exists).

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::activation::ActivationKind;
use crate::diagnostics::FitWindow;
use crate::dynamics::{ExitPolicy, FlowMode};
use crate::error::{Error, Result};

/// Top-level experiment description, deserialized from TOML.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory receiving all artifacts; created if absent. A relative path
    /// is resolved against the config file's directory.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub flow: FlowSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

/// Exactly one of `csv` / `synthetic` must be present.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub csv: Option<CsvSource>,
    pub synthetic: Option<SynthSource>,
}

/// A CSV file with a header row; the named target column becomes `y` and all
/// remaining columns must be numeric features. Features are standardized
/// after the (optional, seeded) row subsample.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Header name of the target column.
    pub target: String,
    /// Keep only this many rows (sampled without replacement); all rows when
    /// absent.
    pub n_subset: Option<usize>,
    /// Seed for the row subsample.
    #[serde(default)]
    pub subsample_seed: u64,
}

fn default_sv_ratio() -> f64 {
    1.0
}

/// Seeded synthetic regression problem with a controllable feature spectrum;
/// see [`crate::harness::synth`].
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    /// Sample count (must exceed the feature count: `n >= d + 1`).
    pub n: usize,
    /// Feature count. Powers of two get an exactly standardized construction;
    /// other values are standardized post hoc (best effort on the spectrum).
    pub d: usize,
    /// Requested ratio between the largest and smallest singular value of the
    /// feature matrix (>= 1; 1 = perfectly conditioned).
    #[serde(default = "default_sv_ratio")]
    pub sv_ratio: f64,
    pub seed: u64,
    /// Standard deviation of additive Gaussian target noise.
    #[serde(default)]
    pub noise: f64,
}

/// Width and initialization of the two-layer network; the input dimension is
/// inferred from the dataset.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of hidden units.
    pub m: usize,
    /// Seed for the sign/weight draw.
    pub init_seed: u64,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
}

fn default_activation() -> ActivationKind {
    ActivationKind::Tanh
}

/// Loss selection. Only the squared error ‖ψ − y‖² is available; the field
/// exists so configs state it explicitly and future kinds stay additive.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Quadratic,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Estimate of the best attainable loss; the recorded gap column is
    /// `loss - floor`. Zero when the targets are reachable.
    pub floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Quadratic,
            floor: 0.0,
        }
    }
}

fn default_mode() -> FlowMode {
    FlowMode::EulerFlow
}

fn default_exit_policy() -> ExitPolicy {
    ExitPolicy::FlagAndContinue
}

/// Integration settings plus the (α, ρ) grid. One trajectory runs per pair,
/// outer loop over `alpha`, inner over `rho`. Empty lists are legal and
/// produce a summary with zero runs.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// Output scalings α > 0 to sweep.
    pub alpha: Vec<f64>,
    /// Damping values ρ ∈ [0, 1] to sweep.
    pub rho: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: FlowMode,
    /// Δt for `euler-flow`, η for `discrete-gn`.
    pub step_size: f64,
    /// Steps per trajectory (each record holds `horizon + 1` states unless
    /// halted early).
    pub horizon: usize,
    /// Deviation radius that raises the exit flag; defaults to the spectral
    /// report's persistence radius r₀ (`inf` disables the monitor).
    pub exit_radius: Option<f64>,
    #[serde(default = "default_exit_policy")]
    pub exit_policy: ExitPolicy,
}

/// Knobs for the derived diagnostics; all optional.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Override for the Jacobian-Lipschitz modulus L; default is the
    /// activation/feature bound σ₂√(Σⱼ‖x_j‖₂⁴).
    pub l_override: Option<f64>,
    /// Fraction r ∈ (0, 1) of the persistence radius used by the
    /// narrow-regime certificates and the Gram-floor verdicts.
    pub radius_fraction: f64,
    /// Fractional window for the empirical decay-rate fit.
    pub fit_window: FitWindow,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            l_override: None,
            radius_fraction: 0.5,
            fit_window: FitWindow::default(),
        }
    }
}

impl ExperimentConfig {
    /// Semantic validation (no filesystem access).
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.csv, &self.dataset.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "dataset: `csv` and `synthetic` are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "dataset: exactly one of `csv` or `synthetic` is required".into(),
                ))
            }
            _ => {}
        }
        if let Some(csv) = &self.dataset.csv {
            if csv.target.is_empty() {
                return Err(Error::Config("dataset.csv: empty target column name".into()));
            }
            if csv.n_subset == Some(0) {
                return Err(Error::Config(
                    "dataset.csv: n_subset must be at least 1 when present".into(),
                ));
            }
        }
        if let Some(synth) = &self.dataset.synthetic {
            if synth.d == 0 {
                return Err(Error::Config(
                    "dataset.synthetic: d must be at least 1".into(),
                ));
            }
            if synth.n < synth.d + 1 {
                return Err(Error::Config(format!(
                    "dataset.synthetic: need n >= d + 1 (centering costs one rank), got n = {}, d = {}",
                    synth.n, synth.d
                )));
            }
            if !synth.sv_ratio.is_finite() || synth.sv_ratio < 1.0 {
                return Err(Error::Config(format!(
                    "dataset.synthetic: sv_ratio must be finite and >= 1, got {}",
                    synth.sv_ratio
                )));
            }
            if !synth.noise.is_finite() || synth.noise < 0.0 {
                return Err(Error::Config(format!(
                    "dataset.synthetic: noise must be finite and >= 0, got {}",
                    synth.noise
                )));
            }
        }
        if self.network.m == 0 {
            return Err(Error::Config("network: m must be at least 1".into()));
        }
        if !self.loss.floor.is_finite() {
            return Err(Error::Config(format!(
                "loss: floor must be finite, got {}",
                self.loss.floor
            )));
        }
        for (i, &a) in self.flow.alpha.iter().enumerate() {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!(
                    "flow: alpha[{i}] must be positive and finite, got {a}"
                )));
            }
        }
        for (i, &r) in self.flow.rho.iter().enumerate() {
            if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!(
                    "flow: rho[{i}] must lie in [0, 1], got {r}"
                )));
            }
            if self.flow.mode == FlowMode::DiscreteGn && r == 0.0 {
                return Err(Error::Config(
                    "flow: the discrete update needs damping > 0; drop rho = 0 or use euler-flow"
                        .into(),
                ));
            }
        }
        if !(self.flow.step_size.is_finite() && self.flow.step_size > 0.0) {
            return Err(Error::Config(format!(
                "flow: step_size must be positive and finite, got {}",
                self.flow.step_size
            )));
        }
        if let Some(r) = self.flow.exit_radius {
            // +inf is legal: it disables the exit monitor
            if r.is_nan() || r <= 0.0 {
                return Err(Error::Config(format!(
                    "flow: exit_radius must be positive, got {r}"
                )));
            }
        }
        if let Some(l) = self.diagnostics.l_override {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!(
                    "diagnostics: l_override must be positive and finite, got {l}"
                )));
            }
        }
        let r = self.diagnostics.radius_fraction;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!(
                "diagnostics: radius_fraction must lie strictly inside (0, 1), got {r}"
            )));
        }
        self.diagnostics
            .fit_window
            .validate()
            .map_err(|e| Error::Config(format!("diagnostics.fit_window: {e}")))?;
        Ok(())
    }

    /// Rewrites relative paths (`output_dir`, `dataset.csv.path`) to be
    /// relative to `base`, typically the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let Some(csv) = &mut self.dataset.csv {
            if csv.path.is_relative() {
                csv.path = base.join(&csv.path);
            }
        }
    }
}

/// Parses and semantically validates a config from TOML text. Pure: never
/// touches the filesystem, so arbitrary bytes are safe input.
pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file, validates it, resolves relative paths against the
/// file's directory, and checks that every referenced file exists. Returns
/// the config together with the raw text (echoed into run summaries).
pub fn load(path: &Path) -> Result<(ExperimentConfig, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {:?}: {e}", path.display())))?;
    let mut cfg = from_toml_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    cfg.resolve_paths(base);
    if let Some(csv) = &cfg.dataset.csv {
        if !csv.path.is_file() {
            return Err(Error::Config(format!(
                "dataset.csv: referenced file {:?} does not exist",
                csv.path.display()
            )));
        }
    }
    Ok((cfg, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_synth() -> String {
        r#"
            output_dir = "out"

            [dataset.synthetic]
            n = 16
            d = 4
            seed = 7

            [network]
            m = 3
            init_seed = 1

            [flow]
            alpha = [2.0]
            rho = [0.5]
            step_size = 0.01
            horizon = 10
        "#
        .to_string()
    }

    #[test]
    fn parses_minimal_synthetic_config_with_defaults() {
        let cfg = from_toml_str(&minimal_synth()).unwrap();
        assert_eq!(cfg.network.m, 3);
        assert_eq!(cfg.network.activation, ActivationKind::Tanh);
        assert_eq!(cfg.loss.kind, LossKind::Quadratic);
        assert_eq!(cfg.loss.floor, 0.0);
        assert_eq!(cfg.flow.mode, FlowMode::EulerFlow);
        assert_eq!(cfg.flow.exit_policy, ExitPolicy::FlagAndContinue);
        assert!(cfg.flow.exit_radius.is_none());
        assert_eq!(cfg.diagnostics.radius_fraction, 0.5);
        assert_eq!(cfg.dataset.synthetic.as_ref().unwrap().sv_ratio, 1.0);
        assert_eq!(cfg.dataset.synthetic.as_ref().unwrap().noise, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = minimal_synth() + "\nbogus = 1\n";
        assert!(matches!(from_toml_str(&top), Err(Error::Config(_))));

        let nested = minimal_synth().replace("[network]", "[network]\ntypo_key = 2\n");
        let err = from_toml_str(&nested).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");

        let flow = minimal_synth().replace("step_size = 0.01", "step_size = 0.01\nstep_sze = 1");
        assert!(from_toml_str(&flow).is_err());
    }

    #[test]
    fn requires_exactly_one_dataset_source() {
        let none = minimal_synth().replace("[dataset.synthetic]", "[dataset.synthetic_off]");
        assert!(from_toml_str(&none).is_err());

        let both = minimal_synth()
            + "\n[dataset.csv]\npath = \"x.csv\"\ntarget = \"y\"\n";
        let err = from_toml_str(&both).unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_scalars() {
        for (from, to) in [
            ("alpha = [2.0]", "alpha = [0.0]"),
            ("alpha = [2.0]", "alpha = [-1.0]"),
            ("alpha = [2.0]", "alpha = [nan]"),
            ("rho = [0.5]", "rho = [1.5]"),
            ("rho = [0.5]", "rho = [-0.1]"),
            ("step_size = 0.01", "step_size = 0.0"),
            ("n = 16", "n = 4"),
            ("d = 4", "d = 0"),
        ] {
            let text = minimal_synth().replace(from, to);
            assert!(
                from_toml_str(&text).is_err(),
                "expected rejection for {to:?}"
            );
        }
    }

    #[test]
    fn rejects_discrete_mode_with_undamped_rho() {
        let text = minimal_synth().replace("rho = [0.5]", "rho = [0.5, 0.0]\nmode = \"discrete-gn\"");
        let err = from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("damping"), "{err}");

        let ok = minimal_synth().replace("rho = [0.5]", "rho = [0.5]\nmode = \"discrete-gn\"");
        assert!(from_toml_str(&ok).is_ok());
    }

    #[test]
    fn empty_sweep_lists_are_legal() {
        let text = minimal_synth().replace("alpha = [2.0]", "alpha = []");
        assert!(from_toml_str(&text).is_ok());
    }

    #[test]
    fn infinite_exit_radius_is_legal() {
        let text = minimal_synth().replace("horizon = 10", "horizon = 10\nexit_radius = inf");
        let cfg = from_toml_str(&text).unwrap();
        assert_eq!(cfg.flow.exit_radius, Some(f64::INFINITY));

        let bad = minimal_synth().replace("horizon = 10", "horizon = 10\nexit_radius = -1.0");
        assert!(from_toml_str(&bad).is_err());
    }

    #[test]
    fn resolves_relative_paths_against_base() {
        let mut cfg = from_toml_str(&minimal_synth()).unwrap();
        cfg.resolve_paths(Path::new("/tmp/exp"));
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/exp/out"));

        // absolute paths stay put
        let abs = minimal_synth().replace("output_dir = \"out\"", "output_dir = \"/var/out\"");
        let mut cfg = from_toml_str(&abs).unwrap();
        cfg.resolve_paths(Path::new("/tmp/exp"));
        assert_eq!(cfg.output_dir, PathBuf::from("/var/out"));
    }

    #[test]
    fn load_rejects_missing_file_and_missing_csv() {
        let err = load(Path::new("/nonexistent/config.toml")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("exp.toml");
        let text = minimal_synth().replace(
            "[dataset.synthetic]\n            n = 16\n            d = 4\n            seed = 7",
            "[dataset.csv]\npath = \"missing.csv\"\ntarget = \"y\"",
        );
        std::fs::write(&cfg_path, text.replace("            ", "")).unwrap();
        let err = load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn load_resolves_csv_relative_to_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.csv"), "a,b,y\n1,2,3\n4,5,6\n").unwrap();
        let text = r#"
output_dir = "artifacts"

[dataset.csv]
path = "data.csv"
target = "y"

[network]
m = 2
init_seed = 0

[flow]
alpha = [1.0]
rho = [1.0]
step_size = 0.1
horizon = 1
"#;
        let cfg_path = dir.path().join("exp.toml");
        std::fs::write(&cfg_path, text).unwrap();
        let (cfg, echoed) = load(&cfg_path).unwrap();
        assert_eq!(echoed, text);
        assert_eq!(
            cfg.dataset.csv.unwrap().path,
            dir.path().join("data.csv")
        );
        assert_eq!(cfg.output_dir, dir.path().join("artifacts"));
    }
}
