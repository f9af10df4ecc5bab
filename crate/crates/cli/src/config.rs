//! Experiment configuration: a versioned TOML schema, range checks and the
//! canonical form that is hashed into run records.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use unavoid::geometry::Domain;
use unavoid::kernels::{CapacityProfile, MeasureFunction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Cantor,
    Champagne,
    Verify,
    Hausdorff,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Classical { d: usize },
    Logarithmic { eta: f64, r0: Option<f64> },
    Riesz { d: usize, alpha: f64 },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<CapacityProfile> {
        Ok(match *self {
            ProfileSpec::Classical { d } => CapacityProfile::classical(d)?,
            ProfileSpec::Logarithmic { eta, r0 } => CapacityProfile::logarithmic(eta, r0)?,
            ProfileSpec::Riesz { d, alpha } => CapacityProfile::riesz(d, alpha)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum PhiSpec {
    Cap,
    #[default]
    CapOverLog,
    CapTimesPower {
        eps: f64,
    },
    Power {
        gamma: f64,
    },
}

impl PhiSpec {
    pub fn build(&self, profile: &CapacityProfile) -> MeasureFunction {
        match *self {
            PhiSpec::Cap => MeasureFunction::cap(profile),
            PhiSpec::CapOverLog => MeasureFunction::cap_over_log(profile),
            PhiSpec::CapTimesPower { eps } => MeasureFunction::cap_times_power(profile, eps),
            PhiSpec::Power { gamma } => MeasureFunction::power(gamma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    WholeSpace { d: usize },
}

impl DomainSpec {
    pub fn build(&self) -> Domain {
        match self {
            DomainSpec::Ball { center, radius } => Domain::Ball {
                center: center.clone(),
                radius: *radius,
            },
            DomainSpec::WholeSpace { d } => Domain::WholeSpace { d: *d },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CantorSpec {
    pub depth: usize,
    /// Sample points per step of the potential growth check.
    pub growth_samples: usize,
}

impl Default for CantorSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            growth_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChampagneSpec {
    BoundaryCover {
        delta: f64,
        depth: usize,
        /// Constant upper bound `psi` on the budget density.
        #[serde(default = "one")]
        psi: f64,
    },
    RieszShell {
        radii: Vec<f64>,
        delta_shell: f64,
    },
    Kz {
        k_radius: f64,
        k_prime_radius: f64,
        eta: f64,
        kappa: f64,
        #[serde(default)]
        resolution: Option<usize>,
    },
    /// Bubbles from a CSV table, relative to the configuration file.
    Listed {
        bubbles: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub samples: usize,
    #[serde(default = "sixteen")]
    pub probes_per_shell: usize,
    /// Probes are placed on the spheres of the first `shells` shells.
    #[serde(default = "three")]
    pub shells: usize,
    #[serde(default)]
    pub free: Vec<Vec<f64>>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub eps_shell: Option<f64>,
    #[serde(default)]
    pub escape_radius: Option<f64>,
}

fn sixteen() -> usize {
    16
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HausdorffSpec {
    pub grid_max: f64,
    pub grid_step: f64,
}

impl Default for HausdorffSpec {
    fn default() -> Self {
        Self {
            grid_max: 3.0,
            grid_step: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Must agree with the verb when given.
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    #[serde(with = "seed_repr")]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub profile: ProfileSpec,
    #[serde(default)]
    pub phi: PhiSpec,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub cantor: CantorSpec,
    #[serde(default)]
    pub champagne: Option<ChampagneSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default)]
    pub hausdorff: HausdorffSpec,
}

/// Seeds above `i64::MAX` do not fit a TOML integer and are written as
/// decimal strings; both forms are read.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t
                .parse()
                .map_err(|_| de::Error::custom(format!("seed {t:?} is not a u64"))),
        }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub depth: Option<usize>,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ));
        }
        Ok(cfg)
    }

    /// Read a configuration file; relative bubble tables are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(ChampagneSpec::Listed { bubbles }) = &mut cfg.champagne {
            if bubbles.is_relative() {
                *bubbles = path.parent().unwrap_or(Path::new(".")).join(&*bubbles);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Apply the verb and the flags, then check every range.
    pub fn resolve(mut self, verb: Pipeline, o: &Overrides) -> Result<Self> {
        match self.pipeline {
            Some(p) if p != verb => {
                return bad(format!("configuration is for {p:?}, not {verb:?}"))
            }
            _ => self.pipeline = Some(verb),
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(n) = o.samples {
            match &mut self.verify {
                Some(v) => v.samples = n,
                None => return bad("--samples needs a [verify] section"),
            }
        }
        if let Some(m) = o.depth {
            if matches!(
                verb,
                Pipeline::Cantor | Pipeline::Hausdorff | Pipeline::Full
            ) {
                self.cantor.depth = m;
            }
            if matches!(
                verb,
                Pipeline::Champagne | Pipeline::Verify | Pipeline::Full
            ) {
                if let Some(ChampagneSpec::BoundaryCover { depth, .. }) = &mut self.champagne {
                    *depth = m;
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn pipeline(&self) -> Pipeline {
        self.pipeline.unwrap_or(Pipeline::Full)
    }

    pub fn validate(&self) -> Result<()> {
        let profile = self.profile.build()?;
        let d = profile.d;
        if !(1..=12).contains(&self.cantor.depth) {
            return bad("cantor.depth must lie in 1..=12");
        }
        if self.cantor.growth_samples == 0 {
            return bad("cantor.growth_samples must be positive");
        }
        match self.phi {
            PhiSpec::CapTimesPower { eps } if !(eps > 0.0) => {
                return bad("phi.eps must be positive")
            }
            PhiSpec::Power { gamma } if !(gamma > 0.0) => return bad("phi.gamma must be positive"),
            _ => {}
        }
        if !(self.hausdorff.grid_step > 0.0 && self.hausdorff.grid_max > 0.0) {
            return bad("hausdorff grid must be positive");
        }
        if let Some(dom) = &self.domain {
            let dom = dom.build();
            dom.validate()?;
            if dom.dim() != d {
                return bad(format!(
                    "domain dimension {} differs from the profile dimension {d}",
                    dom.dim()
                ));
            }
        }
        let p = self.pipeline();
        let needs_champagne = matches!(p, Pipeline::Champagne | Pipeline::Verify | Pipeline::Full);
        if needs_champagne && (self.champagne.is_none() || self.domain.is_none()) {
            return bad("this pipeline needs [domain] and [champagne] sections");
        }
        if matches!(p, Pipeline::Verify | Pipeline::Full) && self.verify.is_none() {
            return bad("this pipeline needs a [verify] section");
        }
        if p == Pipeline::Hausdorff && self.cantor.depth < 3 {
            return bad("the dimension fit needs cantor.depth >= 3");
        }
        if p == Pipeline::Full && !matches!(self.domain, Some(DomainSpec::Ball { .. })) {
            return bad("the full pipeline runs in a ball");
        }
        match &self.champagne {
            Some(ChampagneSpec::BoundaryCover { delta, depth, psi }) => {
                if !(*delta > 0.0 && *psi > 0.0) || !(1..=8).contains(depth) {
                    return bad("boundary cover needs delta > 0, psi > 0 and depth in 1..=8");
                }
            }
            Some(ChampagneSpec::RieszShell { radii, delta_shell }) => {
                if radii.is_empty() || !(*delta_shell >= 0.0) {
                    return bad("riesz shells need radii and delta_shell >= 0");
                }
            }
            Some(ChampagneSpec::Kz {
                k_radius,
                k_prime_radius,
                eta,
                kappa,
                ..
            }) if !(0.0 < *k_radius
                && k_radius < k_prime_radius
                && 0.0 < *eta
                && *eta < 1.0
                && 0.0 < *kappa
                && *kappa < 1.0) =>
            {
                return bad("kz needs 0 < k_radius < k_prime_radius and eta, kappa in (0, 1)");
            }
            _ => {}
        }
        if let Some(v) = &self.verify {
            if v.samples == 0 || v.probes_per_shell == 0 || v.shells == 0 {
                return bad("verify needs positive samples, probes_per_shell and shells");
            }
            if v.free.iter().any(|x| x.len() != d) {
                return bad("free points must match the dimension");
            }
            if v.kappa.is_some_and(|k| !(k > 0.0 && k < 1.0)) {
                return bad("verify.kappa must lie in (0, 1)");
            }
            if v.eps_shell.is_some_and(|e| !(e > 0.0))
                || v.escape_radius.is_some_and(|e| !(e > 0.0))
            {
                return bad("verify.eps_shell and verify.escape_radius must be positive");
            }
        }
        Ok(())
    }

    /// Canonical JSON text of the configuration, without the output directory.
    pub fn canonical(&self) -> String {
        let c = Self {
            out: None,
            ..self.clone()
        };
        serde_json::to_string(&c).expect("configuration serializes")
    }

    /// SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
