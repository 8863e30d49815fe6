//! Config-driven experiment definitions.
//!
//! Configs are TOML files; unspecified fields take the documented defaults
//! and the resolved config (all defaults materialized) is echoed into every
//! output file header, so a run can be reproduced from its output alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{FramePolicy, Manifold, Point};
use crate::targets::{ScorePerturbation, SphereHkMixture, Target, TorusGmm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ExitProb,
    TvSweep,
    Sample,
    ValidateKernels,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ExitProb => "exit-prob",
            ExperimentKind::TvSweep => "tv-sweep",
            ExperimentKind::Sample => "sample",
            ExperimentKind::ValidateKernels => "validate-kernels",
        }
    }
}

/// Target distribution specification in config form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    /// Uniform distribution on the manifold (score is identically zero).
    Uniform,
    /// The default three-component warped Gaussian mixture for the manifold
    /// dimension (torus) or the default heat-kernel mixture (sphere).
    Default,
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sigmas: Vec<f64>,
    },
    SphereMixture {
        weights: Vec<f64>,
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
    },
}

impl TargetSpec {
    pub fn build(&self, manifold: Manifold) -> Result<Target> {
        match self {
            TargetSpec::Uniform => Ok(Target::Uniform(manifold)),
            TargetSpec::Default => match manifold {
                Manifold::Torus { dim } => Ok(Target::default_torus_gmm(dim)),
                Manifold::Sphere { dim } => {
                    if dim != 2 {
                        return Err(Error::Config(
                            "sphere targets are implemented for S^2 only".into(),
                        ));
                    }
                    Ok(Target::default_sphere_mixture())
                }
            },
            TargetSpec::Gmm {
                weights,
                means,
                sigmas,
            } => {
                let Manifold::Torus { dim } = manifold else {
                    return Err(Error::Config("gmm targets live on the torus".into()));
                };
                if means.iter().any(|m| m.len() != dim) {
                    return Err(Error::Config(format!(
                        "gmm means must have dimension {dim}"
                    )));
                }
                Ok(Target::TorusGmm(TorusGmm::new(
                    weights.clone(),
                    means.clone(),
                    sigmas.clone(),
                )?))
            }
            TargetSpec::SphereMixture {
                weights,
                centers,
                widths,
            } => {
                if manifold != Manifold::sphere(2) {
                    return Err(Error::Config(
                        "sphere-mixture targets live on S^2".into(),
                    ));
                }
                let centers = centers
                    .iter()
                    .map(|c| Point::sphere(c.clone()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Target::SphereHkMixture(SphereHkMixture::new(
                    weights.clone(),
                    centers,
                    widths.clone(),
                )?))
            }
        }
    }

    /// Replace `Default` by its concrete parameters for the echoed config.
    pub fn materialize(&self, manifold: Manifold) -> TargetSpec {
        if *self != TargetSpec::Default {
            return self.clone();
        }
        match manifold {
            Manifold::Torus { dim } => TargetSpec::Gmm {
                weights: vec![0.5, 0.3, 0.2],
                means: [0.2, 0.5, 0.8].iter().map(|c| vec![*c; dim]).collect(),
                sigmas: vec![0.05; 3],
            },
            Manifold::Sphere { .. } => TargetSpec::SphereMixture {
                weights: vec![0.5, 0.3, 0.2],
                centers: vec![
                    vec![1.0, 0.0, 0.0],
                    vec![-0.5, 0.75f64.sqrt(), 0.0],
                    vec![0.0, 0.0, 1.0],
                ],
                widths: vec![0.05; 3],
            },
        }
    }
}

/// Sampler settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SamplerSection {
    pub horizon: f64,
    pub delta: f64,
    /// Step count for `sample`; `tv-sweep` takes counts from its own list and
    /// `exit-prob` derives counts from its step sizes.
    pub steps: usize,
    pub frame_policy: FramePolicy,
    pub perturbation: ScorePerturbation,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            horizon: 2.0,
            delta: 0.01,
            steps: 199,
            frame_policy: FramePolicy::Canonical,
            perturbation: ScorePerturbation::None,
        }
    }
}

/// Exit-probability experiment settings. The default step sizes make
/// `h^{-1/2}` the integers 5..9, evenly spaced in the plotting variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ExitProbSection {
    pub h_list: Vec<f64>,
    pub trajectories: usize,
}

impl Default for ExitProbSection {
    fn default() -> Self {
        ExitProbSection {
            h_list: vec![1.0 / 25.0, 1.0 / 36.0, 1.0 / 49.0, 1.0 / 64.0, 1.0 / 81.0],
            trajectories: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TvSweepSection {
    pub n_list: Vec<usize>,
    pub samples: usize,
}

impl Default for TvSweepSection {
    fn default() -> Self {
        TvSweepSection {
            n_list: vec![10, 100, 1000],
            samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SampleSection {
    pub trajectories: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { trajectories: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ValidateKernelsSection {
    pub t_grid: Vec<f64>,
    pub pair_samples: usize,
    /// Fault-injection hook: kernel values are multiplied by this factor
    /// before the checks run. Leave at 1.0 outside of tests.
    pub kernel_scale: f64,
}

impl Default for ValidateKernelsSection {
    fn default() -> Self {
        ValidateKernelsSection {
            t_grid: vec![0.05, 0.5, 5.0],
            pair_samples: 100,
            kernel_scale: 1.0,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output: String,
    pub manifolds: Vec<Manifold>,
    pub target: TargetSpec,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub exit_prob: ExitProbSection,
    #[serde(default)]
    pub tv_sweep: TvSweepSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub validate_kernels: ValidateKernelsSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Materialize defaults that depend on other fields, so the echoed config
    /// is self-contained. With several manifolds the `default` target stays
    /// symbolic (its parameters differ per manifold and are documented).
    pub fn resolved(&self) -> ExperimentConfig {
        let mut out = self.clone();
        if let [manifold] = self.manifolds.as_slice() {
            out.target = self.target.materialize(*manifold);
        }
        out
    }

    /// Validate everything that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        if self.manifolds.is_empty() {
            return Err(Error::Config("at least one manifold is required".into()));
        }
        for m in &self.manifolds {
            if m.dim() == 0 {
                return Err(Error::Config("manifold dimension must be >= 1".into()));
            }
            if matches!(m, Manifold::Sphere { dim } if *dim != 2) {
                return Err(Error::Config(
                    "kernel-backed experiments support the sphere only for d = 2".into(),
                ));
            }
        }
        let s = &self.sampler;
        if !(s.delta > 0.0 && s.delta < s.horizon) {
            return Err(Error::Config(format!(
                "need 0 < delta < horizon (delta = {}, horizon = {})",
                s.delta, s.horizon
            )));
        }
        s.perturbation
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self
            .manifolds
            .iter()
            .any(|m| matches!(m, Manifold::Sphere { .. }))
            && s.delta < 1e-3
        {
            return Err(Error::Config(
                "sphere experiments require delta >= 1e-3 (kernel floor)".into(),
            ));
        }
        match self.experiment {
            ExperimentKind::ExitProb => {
                if self.exit_prob.trajectories == 0 {
                    return Err(Error::Config("exit-prob needs trajectories > 0".into()));
                }
                if self.exit_prob.trajectories < 1000 {
                    return Err(Error::Config(
                        "exit-prob needs at least 1000 trajectories".into(),
                    ));
                }
                if self.exit_prob.h_list.is_empty() {
                    return Err(Error::Config("exit-prob needs a nonempty h-list".into()));
                }
                for h in &self.exit_prob.h_list {
                    if !(*h > 0.0 && *h <= s.horizon - s.delta) {
                        return Err(Error::Config(format!(
                            "step size {h} outside (0, horizon - delta]"
                        )));
                    }
                }
            }
            ExperimentKind::TvSweep => {
                let m = self.manifolds[0];
                match m {
                    Manifold::Torus { dim } if dim <= 3 => {}
                    _ => {
                        return Err(Error::Config(
                            "tv-sweep runs on the torus with d <= 3".into(),
                        ))
                    }
                }
                if self.tv_sweep.n_list.is_empty() || self.tv_sweep.n_list.contains(&0) {
                    return Err(Error::Config("tv-sweep needs positive step counts".into()));
                }
                if self.tv_sweep.samples < 100 {
                    return Err(Error::Config("tv-sweep needs at least 100 samples".into()));
                }
            }
            ExperimentKind::Sample => {
                if self.sample.trajectories == 0 {
                    return Err(Error::Config("sample needs trajectories > 0".into()));
                }
                if self.sampler.steps == 0 {
                    return Err(Error::Config("sample needs steps > 0".into()));
                }
            }
            ExperimentKind::ValidateKernels => {
                let v = &self.validate_kernels;
                if v.t_grid.is_empty() {
                    return Err(Error::Config("validate-kernels needs a t-grid".into()));
                }
                if v.t_grid.iter().any(|t| !(*t > 0.0)) {
                    return Err(Error::Config("t-grid entries must be positive".into()));
                }
                if v.pair_samples == 0 {
                    return Err(Error::Config("pair-samples must be positive".into()));
                }
                if !(v.kernel_scale > 0.0) {
                    return Err(Error::Config("kernel-scale must be positive".into()));
                }
            }
        }
        // Target compatibility with the first manifold.
        self.target
            .build(self.manifolds[0])
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
