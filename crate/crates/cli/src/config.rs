//! Run configuration: a JSON file, overridden field by field from flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use metatree::{Engine, FeatureAssignment, FitOptions, LeafPrior, MetaTreeSpec, NodeParam, TreeShape};

/// `max_depth` is a non-negative integer or the string `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Bounded(u32),
    Unbounded,
}

impl std::str::FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "unbounded" {
            return Ok(Depth::Unbounded);
        }
        s.parse()
            .map(Depth::Bounded)
            .map_err(|_| format!("max depth must be a non-negative integer or \"unbounded\", got {s:?}"))
    }
}

impl Serialize for Depth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Depth::Bounded(d) => s.serialize_u32(*d),
            Depth::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Depth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct DepthVisitor;

        impl Visitor<'_> for DepthVisitor {
            type Value = Depth;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative integer or \"unbounded\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Depth, E> {
                u32::try_from(v).map(Depth::Bounded).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Depth, E> {
                v.parse().map_err(E::custom)
            }
        }

        d.deserialize_any(DepthVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssignmentConfig {
    /// Feature per depth.
    Depths(Vec<u32>),
    /// `{"file": "path.json"}` holding a serialized assignment.
    File { file: PathBuf },
    /// `{"by_depth": [...]}` or `{"by_node": [{"address": [..], "value": k}, ..]}`.
    Explicit(FeatureAssignment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitPriorConfig {
    Shared(f64),
    ByDepth(Vec<f64>),
    Full(NodeParam<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeafPriorConfig {
    Shared(LeafPrior),
    Full(NodeParam<LeafPrior>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arity: u32,
    /// Inferred from the CSV header when absent; 5 for synthetic benchmarks.
    pub feature_count: Option<u32>,
    pub max_depth: Depth,
    /// Defaults to depth `d` splitting on feature `(d mod K) + 1`.
    pub assignment: Option<AssignmentConfig>,
    pub split_prior: SplitPriorConfig,
    pub leaf_prior: LeafPriorConfig,
    pub engine: Engine,
    pub seed: u64,
    pub depth_cap: usize,
    pub zero_based: bool,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub engines: Vec<Engine>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arity: 2,
            feature_count: None,
            max_depth: Depth::Bounded(5),
            assignment: None,
            split_prior: SplitPriorConfig::Shared(0.5),
            leaf_prior: LeafPriorConfig::Shared(LeafPrior::default()),
            engine: Engine::Batch,
            seed: 0,
            depth_cap: FitOptions::default().depth_cap,
            zero_based: false,
            data: None,
            model: None,
            out: None,
            sizes: vec![50, 100, 200],
            reps: 100,
            engines: vec![Engine::Sequential, Engine::Batch, Engine::Sparse],
        }
    }
}

pub const DEFAULT_FEATURE_COUNT: u32 = 5;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn options(&self) -> FitOptions {
        FitOptions {
            depth_cap: self.depth_cap,
        }
    }

    /// Builds and validates the prior. `feature_count` fills in K when the
    /// config leaves it open.
    pub fn spec(&self, feature_count: Option<u32>) -> Result<MetaTreeSpec> {
        let k = match (self.feature_count, feature_count) {
            (Some(a), Some(b)) if a != b => {
                bail!("config sets {a} features but the data has {b}")
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => DEFAULT_FEATURE_COUNT,
        };
        let shape = match self.max_depth {
            Depth::Bounded(d) => TreeShape::bounded(self.arity, d, k)?,
            Depth::Unbounded => TreeShape::unbounded(self.arity, k)?,
        };
        let assignment = match &self.assignment {
            None => FeatureAssignment::cyclic(k, shape.max_depth.unwrap_or(k)),
            Some(AssignmentConfig::Depths(v)) => FeatureAssignment::ByDepth(v.clone()),
            Some(AssignmentConfig::Explicit(a)) => a.clone(),
            Some(AssignmentConfig::File { file }) => {
                let text = fs::read_to_string(file)
                    .with_context(|| format!("reading assignment {}", file.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing assignment {}", file.display()))?
            }
        };
        let split_prior = match &self.split_prior {
            SplitPriorConfig::Shared(g) => NodeParam::shared(*g),
            SplitPriorConfig::ByDepth(gs) => {
                let Some(&last) = gs.last() else {
                    bail!("per-depth split probabilities must not be empty");
                };
                NodeParam {
                    by_depth: gs.clone(),
                    ..NodeParam::shared(last)
                }
            }
            SplitPriorConfig::Full(p) => p.clone(),
        };
        let leaf_prior = match &self.leaf_prior {
            LeafPriorConfig::Shared(p) => NodeParam::shared(*p),
            LeafPriorConfig::Full(p) => p.clone(),
        };
        let spec = MetaTreeSpec::new(shape, assignment)
            .with_split_prior(split_prior)
            .with_leaf_prior(leaf_prior);
        spec.validate()?;
        Ok(spec)
    }
}
