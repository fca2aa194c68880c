//! Run configuration: a TOML file, overridden field by field by flags, then
//! validated into a [`Resolved`] config that every report embeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dyadic::{default_max_level, Grid};
use crate::error::{Error, Result};
use crate::measure::{MeasureSpec, MeshMeasure};
use crate::operator::{DiscreteOperator, Kernel, Profile, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Characteristics,
    Experiment,
    Search,
    Frames,
    MatrixDemo,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Characteristics => "characteristics",
            CommandKind::Experiment => "experiment",
            CommandKind::Search => "search",
            CommandKind::Frames => "frames",
            CommandKind::MatrixDemo => "matrix-demo",
        }
    }

    fn needs_operator(self) -> bool {
        matches!(self, CommandKind::Characteristics | CommandKind::Experiment | CommandKind::Search)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    A2LowerBound,
    KernelDifference,
    Absorption,
    Quadratic,
    Halo,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        toml::Value::String(s.to_string())
            .try_into()
            .map_err(|_| Error::Config(format!("field `experiment`: unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: Option<usize>,
    pub max_level: Option<u32>,
    pub origin: Option<Vec<f64>>,
    pub side: Option<f64>,
    pub shift: Option<Vec<f64>>,
}

/// Everything optional, as read from a file or from flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub kernel: Option<String>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub r: Option<f64>,
    pub profile: Option<Profile>,
    /// Measure specs such as `lebesgue`, `power:0.3` or `doubling:2:7`.
    pub measures: Option<Vec<String>>,
    pub p: Option<f64>,
    pub depth: Option<u32>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub rotation_samples: Option<u32>,
    /// Random samples per check (frames, kernel differences).
    pub samples: Option<usize>,
    pub iterations: Option<usize>,
    pub mutations: Option<usize>,
    pub experiment: Option<ExperimentKind>,
    pub gamma: Option<f64>,
    /// `lo:hi` exponents for the matrix ladder.
    pub ladder: Option<String>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
    pub grid: Option<GridConfig>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// `self` with every field set in `top` replaced.
    pub fn merged(mut self, top: RunConfig) -> RunConfig {
        overlay!(self, top; command, kernel, lambda, eps, r, profile, measures, p, depth, seed, trials,
            rotation_samples, samples, iterations, mutations, experiment, gamma, ladder, eta, epsilon, out);
        if let Some(g) = top.grid {
            let mut base = self.grid.take().unwrap_or_default();
            overlay!(base, g; dim, max_level, origin, side, shift);
            self.grid = Some(base);
        }
        self
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let field = |name: &str, msg: String| Error::Config(format!("field `{name}`: {msg}"));
        let command = self.command.ok_or_else(|| field("command", "missing; choose one of characteristics, experiment, search, frames, matrix-demo".into()))?;
        let g = self.grid.clone().unwrap_or_default();
        let dim = g.dim.or(g.origin.as_ref().map(Vec::len)).unwrap_or(1);
        if dim == 0 || dim > 3 {
            return Err(field("grid.dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        let max_level = g.max_level.unwrap_or_else(|| default_max_level(dim));
        let origin = g.origin.unwrap_or_else(|| vec![0.0; dim]);
        if origin.len() != dim {
            return Err(field("grid.origin", format!("has {} coordinates, expected {dim}", origin.len())));
        }
        let side = g.side.unwrap_or(1.0);
        let shift = g.shift.unwrap_or_else(|| vec![0.0; dim]);
        if shift.len() != dim {
            return Err(field("grid.shift", format!("has {} coordinates, expected {dim}", shift.len())));
        }
        let grid = GridSpec { dim, max_level, origin, side, shift };
        let built = grid.build().map_err(|e| field("grid", e.to_string()))?;

        let depth = self.depth.unwrap_or(max_level.min(6));
        if depth > max_level {
            return Err(field("depth", format!("{depth} exceeds grid.max_level = {max_level}")));
        }
        let p = self.p.unwrap_or(2.0);
        if !(p.is_finite() && p > 1.0) {
            return Err(field("p", format!("must be a finite number > 1, got {p}")));
        }
        let lambda = self.lambda.unwrap_or(0.0);
        let needs_kernel = command.needs_operator() && !(command == CommandKind::Experiment && self.experiment == Some(ExperimentKind::Halo));
        let kernel = match (&self.kernel, needs_kernel) {
            (Some(k), _) => {
                Kernel::from_name(k, dim, lambda).map_err(|e| field("kernel", e.to_string()))?;
                Some(k.clone())
            }
            (None, true) => return Err(field("kernel", format!("required by `{}`", command.as_str()))),
            (None, false) => None,
        };
        let default_t = Truncation::default_for(&built);
        let eps = self.eps.unwrap_or(default_t.eps);
        let r = self.r.unwrap_or(default_t.r);
        let trunc = Truncation::new(eps, r).map_err(|e| field("eps", e.to_string()))?;
        if kernel.is_some() && eps < 2.0 * built.cell_diameter() {
            return Err(field(
                "eps",
                format!("{eps} is below twice the cell diameter {}", 2.0 * built.cell_diameter()),
            ));
        }
        let measures: Vec<MeasureSpec> = self
            .measures
            .clone()
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse().map_err(|e: Error| field("measures", e.to_string())))
            .collect::<Result<_>>()?;
        let needed = match command {
            CommandKind::MatrixDemo => 0,
            CommandKind::Frames => 1,
            CommandKind::Experiment if self.experiment == Some(ExperimentKind::Halo) => 1,
            CommandKind::Experiment if self.experiment == Some(ExperimentKind::KernelDifference) => 0,
            _ => 2,
        };
        if measures.len() < needed {
            return Err(field("measures", format!("`{}` needs at least {needed}, got {}", command.as_str(), measures.len())));
        }
        if command == CommandKind::Search && !measures.len().is_multiple_of(2) {
            return Err(field("measures", "search takes (sigma, omega) pairs, so an even count".into()));
        }
        let experiment = match (command, self.experiment) {
            (CommandKind::Experiment, None) => return Err(field("experiment", "required by `experiment`".into())),
            (_, e) => e,
        };
        let gamma = self.gamma.unwrap_or(0.6);
        let ladder = parse_ladder(self.ladder.as_deref().unwrap_or("10:20")).map_err(|m| field("ladder", m))?;
        if command == CommandKind::MatrixDemo {
            crate::experiments::MatrixCounterexampleConfig::new(gamma, ladder.clone()).map_err(|e| field("gamma", e.to_string()))?;
        }
        let eta = self.eta.unwrap_or(0.9);
        let epsilon = self.epsilon.unwrap_or(0.1);
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(field("eta", format!("must lie in (0, 1], got {eta}")));
        }
        if !(epsilon > 0.0) {
            return Err(field("epsilon", format!("must be positive, got {epsilon}")));
        }
        let trials = self.trials.unwrap_or(50);
        if trials == 0 {
            return Err(field("trials", "must be at least 1".into()));
        }
        let rotation_samples = self.rotation_samples.unwrap_or(1);
        if rotation_samples == 0 {
            return Err(field("rotation_samples", "must be at least 1".into()));
        }
        Ok(Resolved {
            command,
            grid,
            kernel,
            lambda,
            truncation: trunc.with_profile(self.profile.unwrap_or_default()),
            measures,
            p,
            depth,
            seed: self.seed.unwrap_or(0),
            trials,
            rotation_samples,
            samples: self.samples.unwrap_or(200).max(1),
            iterations: self.iterations.unwrap_or(8).max(1),
            mutations: self.mutations.unwrap_or(6),
            experiment,
            gamma,
            ladder,
            eta,
            epsilon,
        })
    }
}

fn parse_ladder(s: &str) -> std::result::Result<Vec<u32>, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
    let a: u32 = a.trim().parse().map_err(|_| format!("bad lower exponent in `{s}`"))?;
    let b: u32 = b.trim().parse().map_err(|_| format!("bad upper exponent in `{s}`"))?;
    if a > b {
        return Err(format!("`{s}` is decreasing"));
    }
    Ok((a..=b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub dim: usize,
    pub max_level: u32,
    pub origin: Vec<f64>,
    pub side: f64,
    pub shift: Vec<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::with_window(self.origin.clone(), self.side, self.max_level)?.with_shift(self.shift.clone())
    }
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub command: CommandKind,
    pub grid: GridSpec,
    pub kernel: Option<String>,
    pub lambda: f64,
    pub truncation: Truncation,
    pub measures: Vec<MeasureSpec>,
    pub p: f64,
    pub depth: u32,
    pub seed: u64,
    pub trials: usize,
    pub rotation_samples: u32,
    pub samples: usize,
    pub iterations: usize,
    pub mutations: usize,
    pub experiment: Option<ExperimentKind>,
    pub gamma: f64,
    pub ladder: Vec<u32>,
    pub eta: f64,
    pub epsilon: f64,
}

impl Resolved {
    pub fn grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn kernel(&self) -> Result<Kernel> {
        let name = self.kernel.as_deref().ok_or_else(|| Error::Config("field `kernel`: not set".into()))?;
        Kernel::from_name(name, self.grid.dim, self.lambda)
    }

    pub fn operator(&self) -> Result<DiscreteOperator> {
        DiscreteOperator::new(&self.grid()?, &self.kernel()?, &self.truncation)
    }

    pub fn measures(&self, grid: &Grid) -> Result<Vec<MeshMeasure>> {
        self.measures.iter().map(|s| MeshMeasure::generate(grid, s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_rejected() {
        let c = RunConfig::from_toml_str("").unwrap();
        let e = c.resolve().unwrap_err().to_string();
        assert!(e.contains("command"), "{e}");
    }

    #[test]
    fn file_then_flags() {
        let file = RunConfig::from_toml_str(
            r#"
            command = "characteristics"
            kernel = "hilbert"
            measures = ["lebesgue", "doubling:2:7"]
            depth = 5
            [grid]
            max_level = 8
            "#,
        )
        .unwrap();
        let flags = RunConfig { depth: Some(4), seed: Some(3), ..Default::default() };
        let r = file.merged(flags).resolve().unwrap();
        assert_eq!((r.depth, r.seed, r.grid.max_level), (4, 3, 8));
        assert_eq!(r.measures[1], MeasureSpec::RandomDyadicDoubling { r: 2.0, seed: 7 });
        assert!((r.truncation.eps - 4.0 / 256.0).abs() < 1e-15);
        r.operator().unwrap();
    }

    #[test]
    fn field_messages() {
        let base = || RunConfig {
            command: Some(CommandKind::Characteristics),
            kernel: Some("hilbert".into()),
            measures: Some(vec!["lebesgue".into(), "lebesgue".into()]),
            ..Default::default()
        };
        let cases: Vec<(RunConfig, &str)> = vec![
            (RunConfig { depth: Some(40), ..base() }, "depth"),
            (RunConfig { p: Some(1.0), ..base() }, "`p`"),
            (RunConfig { kernel: Some("nope".into()), ..base() }, "kernel"),
            (RunConfig { measures: Some(vec!["lebesgue".into()]), ..base() }, "measures"),
            (RunConfig { measures: Some(vec!["wat".into(), "lebesgue".into()]), ..base() }, "measures"),
            (RunConfig { eps: Some(1e-6), ..base() }, "eps"),
            (RunConfig { command: Some(CommandKind::MatrixDemo), gamma: Some(0.9), ..base() }, "gamma"),
            (RunConfig { command: Some(CommandKind::Experiment), ..base() }, "experiment"),
        ];
        for (c, f) in cases {
            let e = c.resolve().unwrap_err().to_string();
            assert!(e.contains(f), "{f}: {e}");
        }
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert_eq!("a2-lower-bound".parse::<ExperimentKind>().unwrap(), ExperimentKind::A2LowerBound);
    }
}
