//! JSON configurations for the subcommands that are not covered by a library
//! type. `verify` reads a [`etaquot::harness::SweepSpec`] and `solve` a
//! [`etaquot::gridpde::ProblemConfig`] directly.

use etaquot::gridpde::Domain;
use etaquot::hypersurf::{BarrierConfig, RadialSolveConfig, WarpModel};
use etaquot::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn from_json<T: DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Input(format!("{what} config: {e}")))
}

/// Warp profile `φ` as an expression in `r`, with an optional interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    #[serde(default = "euclidean")]
    pub warp: String,
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
}

fn euclidean() -> String {
    "r".into()
}

impl WarpSpec {
    pub fn model(&self) -> Result<WarpModel> {
        let (lo, hi) = match self.interval {
            Some([lo, hi]) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        WarpModel::parse(&self.warp, lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "surface", rename_all = "lowercase")]
pub enum GeometryConfig {
    /// `r = f(z)` over the unit sphere, with `z = (x1, x2, x3)`.
    Radial {
        #[serde(flatten)]
        warp: WarpSpec,
        r: String,
        #[serde(default = "default_mesh")]
        grid: [usize; 2],
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        l: Option<usize>,
    },
    /// `u = f(x)` over a domain in `Rⁿ`.
    Graph {
        domain: Domain,
        u: String,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        l: Option<usize>,
    },
}

fn default_mesh() -> [usize; 2] {
    [32, 64]
}

fn default_points() -> usize {
    33
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierSpec {
    #[serde(flatten)]
    pub warp: WarpSpec,
    pub psi: String,
    pub r1: f64,
    pub r2: f64,
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub l: usize,
    #[serde(default)]
    pub check: BarrierConfig,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSolveSpec {
    #[serde(flatten)]
    pub warp: WarpSpec,
    pub psi: String,
    pub r1: f64,
    pub r2: f64,
    /// Starting radii as an expression in `x1, x2, x3`.
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default)]
    pub solver: RadialSolveConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSpec {
    #[serde(default = "three")]
    pub n: usize,
    #[serde(default = "three")]
    pub k: usize,
    #[serde(default = "two")]
    pub l: usize,
    #[serde(default = "unit")]
    pub theta: f64,
    #[serde(default = "unit")]
    pub mu: f64,
    #[serde(default = "etaquot::harness::default_probe_eps")]
    pub eps: Vec<f64>,
}

fn three() -> usize {
    3
}

fn unit() -> f64 {
    1.0
}

impl Default for ProbeSpec {
    fn default() -> Self {
        from_json("probe", "{}").expect("defaults parse")
    }
}
