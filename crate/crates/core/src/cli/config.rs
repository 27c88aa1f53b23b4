//! Flat `key = value` configuration files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::CliError;
use crate::aln::{Mode, Pipeline};
use crate::sparse::Solver;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    path: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let origin = path.map(|p| p.display().to_string()).unwrap_or_else(|| "config".into());
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::input(format!("{origin}:{}: expected 'key = value'", no + 1)));
            };
            let key = key.trim().replace('_', "-");
            if key.is_empty() {
                return Err(CliError::input(format!("{origin}:{}: empty key", no + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::input(format!("{origin}:{}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(Self {
            values,
            path: path.map(Path::to_path_buf),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("cannot read config '{}': {e}", p.display())))?;
                Self::parse(&text, Some(p))
            }
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Rejects keys the current subcommand does not understand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::input(format!(
                "unknown config key '{k}' (accepted: {})",
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    /// Flag value if given, else the parsed config value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::input(format!("config key '{key}': invalid value '{v}': {e}"))),
        }
    }
}

/// Topology pipeline names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineArg {
    Mst,
    Polytree,
    MisoBlanket,
}

impl PipelineArg {
    pub fn pipeline(self) -> Pipeline {
        match self {
            PipelineArg::Mst => Pipeline::MstCoherence,
            PipelineArg::Polytree => Pipeline::PolytreeCausal,
            PipelineArg::MisoBlanket => Pipeline::MisoBlanket,
        }
    }
}

impl FromStr for PipelineArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mst" | "mst-coherence" => Ok(PipelineArg::Mst),
            "polytree" | "polytree-causal" => Ok(PipelineArg::Polytree),
            "miso-blanket" => Ok(PipelineArg::MisoBlanket),
            _ => Err("expected mst, polytree or miso-blanket".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Analytic,
    Simulated,
}

impl ModeArg {
    pub fn mode(self) -> Mode {
        match self {
            ModeArg::Analytic => Mode::Analytic,
            ModeArg::Simulated => Mode::Simulated,
        }
    }
}

impl FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(ModeArg::Analytic),
            "simulated" => Ok(ModeArg::Simulated),
            _ => Err("expected analytic or simulated".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    Exhaustive,
    Mp,
    Ols,
}

impl SolverArg {
    pub fn solver(self) -> Solver {
        match self {
            SolverArg::Exhaustive => Solver::Exhaustive,
            SolverArg::Mp => Solver::MatchingPursuit,
            SolverArg::Ols => Solver::OrthogonalLeastSquares,
        }
    }
}

impl FromStr for SolverArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exhaustive" => Ok(SolverArg::Exhaustive),
            "mp" | "matching-pursuit" => Ok(SolverArg::Mp),
            "ols" | "orthogonal-least-squares" => Ok(SolverArg::Ols),
            _ => Err("expected exhaustive, mp or ols".into()),
        }
    }
}

/// Inclusive node-count range written `lo-hi` or a single `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRange {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for NodeRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad node count '{v}': {e}"));
        let (lo, hi) = match s.split_once(['-', ':']) {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let n = parse(s)?;
                (n, n)
            }
        };
        if lo < 2 || lo > hi {
            return Err(format!("node range must satisfy 2 <= lo <= hi, got {lo}-{hi}"));
        }
        Ok(Self { lo, hi })
    }
}

impl fmt::Display for NodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

impl Serialize for NodeRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Resolved settings of one run, echoed in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub grid_size: usize,
    pub window: &'static str,
    pub segments: usize,
    pub overlap: f64,
    pub window_length: usize,
    pub detrend_window: usize,
    pub pipeline: PipelineArg,
    pub budget: usize,
    pub min_gain: f64,
    pub solver: SolverArg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub trials: usize,
    pub nodes: NodeRange,
    pub length: usize,
    pub mode: ModeArg,
    pub seed: u64,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        Self {
            command: command.to_string(),
            input: None,
            out: PathBuf::from("out"),
            grid_size: crate::signal::DEFAULT_GRID_SIZE,
            window: "hann",
            segments: 8,
            overlap: 0.5,
            window_length: 0,
            detrend_window: 0,
            pipeline: PipelineArg::Mst,
            budget: 2,
            min_gain: crate::sparse::DEFAULT_MIN_GAIN,
            solver: SolverArg::Ols,
            target: None,
            trials: 200,
            nodes: NodeRange { lo: 4, hi: 16 },
            length: 1 << 17,
            mode: ModeArg::Analytic,
            seed: 0,
        }
    }

    pub fn validate_spectral(&self) -> Result<(), CliError> {
        if self.grid_size < 64 || !self.grid_size.is_power_of_two() {
            return Err(CliError::input(format!(
                "grid-size must be a power of two >= 64, got {}",
                self.grid_size
            )));
        }
        if self.segments < 2 {
            return Err(CliError::input(format!("segments must be >= 2, got {}", self.segments)));
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(CliError::input(format!("overlap must lie in [0, 0.9], got {}", self.overlap)));
        }
        if self.detrend_window == 1 {
            return Err(CliError::input("detrend-window must be 0 (off) or >= 2".to_string()));
        }
        Ok(())
    }
}
