//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::PathBuf;

use anisolab::solver::LevelMethod;
use anisolab::StabilityVariant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    /// Anisotropy exponents; the space dimension is their count.
    pub p: Vec<f64>,
    pub problem: ProblemConfig,
    pub weight: WeightConfig,
    pub grid: GridConfig,
    pub tolerances: ToleranceConfig,
    pub truncation: TruncationConfig,
    pub stability: StabilityConfig,
    pub sweep: SweepConfig,
    pub n_max: u32,
    pub method: LevelMethod,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            p: vec![2.0, 3.0, 4.0],
            problem: ProblemConfig::default(),
            weight: WeightConfig::default(),
            grid: GridConfig::default(),
            tolerances: ToleranceConfig::default(),
            truncation: TruncationConfig::default(),
            stability: StabilityConfig::default(),
            sweep: SweepConfig::default(),
            n_max: 6,
            method: LevelMethod::Direct,
            out: PathBuf::from("out"),
            seed: 0x5eed,
        }
    }
}

/// Mixed power when `delta` is set (with `gamma` defaulting to `delta`),
/// exponential when `cap` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub cap: Option<f64>,
    pub weight_floor: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            delta: None,
            gamma: None,
            cap: None,
            weight_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Constant,
    RadialPower,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: WeightKind,
    /// Value of a constant weight.
    pub c: f64,
    /// Exponent of `|x - center|^{-s}`.
    pub s: f64,
    /// Center of the radial weight; the box center when empty.
    pub center: Vec<f64>,
    pub path: Option<PathBuf>,
    /// Integrability exponent claimed for a file weight.
    pub m: Option<f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            kind: WeightKind::Constant,
            c: 1.0,
            s: 0.0,
            center: Vec::new(),
            path: None,
            m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Lower corner; a scalar list is broadcast when it has one entry.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: vec![0.0],
            hi: vec![1.0],
            res: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub inner: Option<f64>,
    pub fix: f64,
    pub inner_max_iter: usize,
    pub outer_max_iter: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            inner: None,
            fix: 1e-8,
            inner_max_iter: 10_000,
            outer_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    pub k: u32,
    pub alpha: f64,
    pub samples: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            k: 2,
            alpha: 3.0,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Candidate field file; a constant field when absent.
    pub field: Option<PathBuf>,
    pub u_const: f64,
    /// Replaces `f'(u)` by this constant when set.
    pub lambda: Option<f64>,
    pub variant: StabilityVariant,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            field: None,
            u_const: 1.0,
            lambda: None,
            variant: StabilityVariant::WeightedByG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
    pub cconst: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            radii: Vec::new(),
            cconst: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Box corners broadcast to the dimension.
    pub fn box_corners(&self) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let fit = |v: &[f64], name: &str| -> anyhow::Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                l if l == n => Ok(v.to_vec()),
                l => anyhow::bail!("grid.{name} has {l} entries for dimension {n}"),
            }
        };
        Ok((fit(&self.grid.lo, "lo")?, fit(&self.grid.hi, "hi")?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let c = RunConfig::from_toml(
            "p = [2.0, 3.0]\nproblem.delta = 10.0\ngrid.res = 16\nweight.kind = \"radial-power\"\nweight.s = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.p, vec![2.0, 3.0]);
        assert_eq!(c.problem.delta, Some(10.0));
        assert_eq!(c.grid.res, 16);
        assert_eq!(c.weight.kind, WeightKind::RadialPower);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("grid.resolution = 3").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.problem.cap = Some(0.2);
        c.sweep.radii = vec![1.0, 2.0];
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corners_broadcast() {
        let c = RunConfig::default();
        assert_eq!(c.box_corners().unwrap(), (vec![0.0; 3], vec![1.0; 3]));
    }
}
