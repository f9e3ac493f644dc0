//! TOML experiment specifications.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::{find_slice, Coupling, SimConfig};
use crate::drift::{Certificate, DriftModel, Family, Sigma};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Contraction,
    UniformDissipative,
    FlatPotential,
    Superconvex,
    Invariant,
    TvDecay,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Contraction => "contraction",
            Self::UniformDissipative => "uniform_dissipative",
            Self::FlatPotential => "flat_potential",
            Self::Superconvex => "superconvex",
            Self::Invariant => "invariant",
            Self::TvDecay => "tv_decay",
        }
    }
}

/// σ given as a scalar multiple of the identity or as row-major rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self::Scalar(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

fn one() -> usize {
    1
}

fn need(v: Option<f64>, family: &str, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("model family `{family}` needs parameter `{name}`")))
}

impl ModelSpec {
    /// Compact form `family[:key=value,...]`, e.g. `linear:k=1` or
    /// `piecewise:k1=1,k2=2,l=0.5`.
    pub fn parse_compact(text: &str, dim: usize, sigma: SigmaSpec) -> Result<Self> {
        let (family, params) = text.split_once(':').unwrap_or((text, ""));
        let mut spec = Self {
            family: family.trim().to_string(),
            dim,
            sigma,
            k: None,
            delta: None,
            alpha: None,
            k1: None,
            k2: None,
            l: None,
        };
        for kv in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) =
                kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
            let v: f64 = value.trim().parse().map_err(|_| Error::Config(format!("`{value}` is not a number")))?;
            let slot = match key.trim() {
                "k" => &mut spec.k,
                "delta" => &mut spec.delta,
                "alpha" => &mut spec.alpha,
                "k1" => &mut spec.k1,
                "k2" => &mut spec.k2,
                "l" => &mut spec.l,
                other => return Err(Error::Config(format!("unknown model parameter `{other}`"))),
            };
            *slot = Some(v);
        }
        Ok(spec)
    }

    pub fn family(&self) -> Result<Family> {
        let f = self.family.as_str();
        Ok(match f {
            "linear" => Family::Linear { k: need(self.k, f, "k")? },
            "flat_potential" => Family::FlatPotential { delta: need(self.delta, f, "delta")? },
            "superconvex" => Family::Superconvex { alpha: need(self.alpha, f, "alpha")? },
            "double_well" => Family::DoubleWell,
            "piecewise" => {
                Family::Piecewise { k1: need(self.k1, f, "k1")?, k2: need(self.k2, f, "k2")?, l: need(self.l, f, "l")? }
            }
            other => return Err(Error::Config(format!("unknown model family `{other}`"))),
        })
    }

    pub fn build(&self) -> Result<DriftModel> {
        let sigma = match &self.sigma {
            SigmaSpec::Scalar(s) => Sigma::scalar(self.dim, *s)?,
            SigmaSpec::Matrix(rows) => Sigma::from_rows(rows)?,
        };
        if sigma.dim() != self.dim {
            return Err(Error::Config(format!("σ is {0}×{0} but dim = {1}", sigma.dim(), self.dim)));
        }
        DriftModel::new(self.dim, self.family()?, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl CertificateSpec {
    pub fn certificate(&self) -> Result<Option<Certificate>> {
        match self.c {
            None => Ok(None),
            Some(c) => Ok(Some(Certificate::new(c, self.eta.unwrap_or(0.0), self.theta.unwrap_or(1.0))?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    /// `synchronous`/`sync`, `reflection`/`reflect` or `hybrid`; each
    /// experiment has its own default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<String>,
    /// Switch radius of the hybrid coupling; defaults to the certificate's η.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Spacing of recorded slices; defaults to every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_threshold: Option<f64>,
}

pub fn parse_coupling(name: &str, eta: Option<f64>) -> Result<Coupling> {
    match name {
        "synchronous" | "sync" => Ok(Coupling::Synchronous),
        "reflection" | "reflect" => Ok(Coupling::Reflection),
        "hybrid" => {
            Ok(Coupling::Hybrid { eta: eta.ok_or_else(|| Error::Config("hybrid coupling needs an η".into()))? })
        }
        other => Err(Error::Config(format!("unknown coupling `{other}`"))),
    }
}

impl SimSpec {
    pub fn coupling_or(&self, default: Coupling) -> Result<Coupling> {
        let eta = self.eta.or(match default {
            Coupling::Hybrid { eta } => Some(eta),
            _ => None,
        });
        match &self.coupling {
            None => Ok(match (default, self.eta) {
                (Coupling::Hybrid { .. }, Some(eta)) => Coupling::Hybrid { eta },
                _ => default,
            }),
            Some(name) => parse_coupling(name, eta),
        }
    }

    pub fn config(&self, seed: u64, coupling: Coupling) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(self.dt, self.horizon, self.n_paths, seed, coupling);
        if let Some(m) = self.merge_threshold {
            cfg.merge_threshold = m;
        }
        if let Some(every) = self.record_every {
            let stride = (every / self.dt).round();
            if !(stride >= 1.0) || ((stride * self.dt - every).abs() > 1e-9 * every) {
                return Err(Error::Config(format!("record_every = {every} is not a multiple of dt = {}", self.dt)));
            }
            cfg.record_stride = stride as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    /// Sample size of each exact assignment.
    #[serde(default = "default_n_assignment")]
    pub n_assignment: usize,
    /// Disjoint sample batches; their spread gives the plug-in error bar.
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_n_assignment() -> usize {
    1024
}

fn default_batches() -> usize {
    4
}

impl Default for TransportSpec {
    fn default() -> Self {
        Self { n_assignment: default_n_assignment(), batches: default_batches() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSpec {
    /// Burn-in horizon; defaults to `10/λ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_burn: Option<f64>,
    /// Start of the burn-in trajectories; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    /// Random half-splits of the pooled sample for the noise floor.
    #[serde(default = "default_splits")]
    pub splits: usize,
}

fn default_splits() -> usize {
    32
}

impl Default for InvariantSpec {
    fn default() -> Self {
        Self { t_burn: None, start: None, splits: default_splits() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub certificate: CertificateSpec,
    pub sim: SimSpec,
    #[serde(default = "default_ps")]
    pub p: Vec<f64>,
    pub times: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    /// Absolute tolerance of deterministic comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Random start pairs for validating the chaining prefactor (0 = skip).
    #[serde(default)]
    pub prefactor_pairs: usize,
    #[serde(default)]
    pub transport: TransportSpec,
    #[serde(default)]
    pub invariant: InvariantSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_ps() -> Vec<f64> {
    vec![1.0, 2.0]
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&p) = self.p.iter().find(|&&p| !(p >= 1.0 && p.is_finite())) {
            return Err(Error::Config(format!("every p must be at least 1, got {p}")));
        }
        if self.x0.len() != self.model.dim || self.y0.as_ref().is_some_and(|y| y.len() != self.model.dim) {
            return Err(Error::Config("x0/y0 do not match the model dimension".into()));
        }
        if self.times.is_empty() || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("times must be non-empty and increasing".into()));
        }
        if self.transport.n_assignment == 0 || self.transport.batches == 0 {
            return Err(Error::Config("transport sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn y0(&self) -> Result<&[f64]> {
        self.y0.as_deref().ok_or_else(|| Error::Config(format!("experiment `{}` needs y0", self.kind.name())))
    }

    /// Every requested time must be a recorded slice of `cfg`.
    pub fn check_times(&self, cfg: &SimConfig) -> Result<()> {
        let slices: Vec<f64> = cfg.slice_steps().iter().map(|&k| k as f64 * cfg.dt).collect();
        for &t in &self.times {
            find_slice(&slices, t).map_err(|_| {
                Error::Config(format!(
                    "time {t} is not a recorded slice (dt = {}, stride = {})",
                    cfg.dt, cfg.record_stride
                ))
            })?;
        }
        Ok(())
    }
}
