//! Monte Carlo suites: each turns a qualitative property of the equation into
//! inequalities on ensemble means with explicit statistical and discretization tolerances.

pub mod report;
mod suites;

use rayon::prelude::*;

pub use report::{ExperimentReport, Metric, Provenance, Relation, Series};
pub use suites::{
    apriori_report, cauchy_report, run_apriori, run_cauchy_in_n, run_entropy_battery, run_initial_attainment,
    run_l1_contraction, run_level_ladder, run_mollified_difference, run_mollified_difference_ensemble,
    run_nonnegativity, LadderRun, DETERMINISTIC_BATTERY_CELLS, DETERMINISTIC_RESIDUAL_FLOOR,
};

use crate::error::{Error, Result};
use crate::model::{BoxDomain, CoefficientSet, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec, Profile};
use crate::noise::{sample_path, NoisePath, NoiseSpec};
use crate::solver::{Grid, SolverConfig};

/// Monte Carlo settings shared by all suites.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub paths: usize,
    /// Compared runs of one path share the same increments.
    pub coupled: bool,
    /// Width of the statistical band in standard errors.
    pub confidence: f64,
    /// Base noise: path `p` uses stream `"{stream}/{p}"` with this seed and time grid.
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
    /// Regularization levels; single-level suites use the first.
    pub levels: Vec<u32>,
}

impl EnsembleConfig {
    /// 3-SE bands, coupled, noise grid from the solver's default time step.
    pub fn new(spec: &ProblemSpec, paths: usize, seed: u64, solver: SolverConfig, levels: Vec<u32>) -> Result<Self> {
        let steps = solver.default_steps(spec)?;
        let noise = NoiseSpec::new(spec.coefficients.ito.modes(), steps, spec.horizon, seed, "ensemble")?;
        let e = Self { paths, coupled: true, confidence: 3.0, noise, solver, levels };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(Error::Config(format!("statistical verdicts need at least 2 paths, got {}", self.paths)));
        }
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::Config("regularization levels must be a non-empty list of positive integers".into()));
        }
        if !(self.confidence > 0.0) {
            return Err(Error::Config(format!("confidence multiplier must be positive, got {}", self.confidence)));
        }
        Ok(())
    }

    pub fn level(&self) -> u32 {
        self.levels[0]
    }

    /// Same ensemble on the noise grid of another horizon / step count.
    pub fn for_horizon(&self, horizon: f64, steps: usize) -> Result<Self> {
        let mut e = self.clone();
        e.noise = NoiseSpec::new(self.noise.modes, steps, horizon, self.noise.seed, self.noise.stream.clone())?;
        Ok(e)
    }

    pub(crate) fn check_spec(&self, spec: &ProblemSpec) -> Result<()> {
        self.validate()?;
        if self.noise.modes != spec.coefficients.ito.modes() {
            return Err(Error::Config(format!(
                "ensemble noise has {} modes, the problem has {}",
                self.noise.modes,
                spec.coefficients.ito.modes()
            )));
        }
        if (self.noise.horizon - spec.horizon).abs() > 1e-12 * spec.horizon {
            return Err(Error::Config(format!(
                "ensemble noise horizon {} differs from the problem horizon {}",
                self.noise.horizon, spec.horizon
            )));
        }
        Ok(())
    }

    /// Increments of path `p` for the run labelled `run` (ignored when coupled).
    pub fn path_noise(&self, p: usize, run: &str) -> Result<NoisePath> {
        let stream = if self.coupled || run.is_empty() {
            format!("{}/{p}", self.noise.stream)
        } else {
            format!("{}/{p}/{run}", self.noise.stream)
        };
        let spec = NoiseSpec { stream, ..self.noise.clone() };
        sample_path(&spec)
    }

    pub(crate) fn provenance(&self, grid: &Grid, levels: Vec<u32>) -> Provenance {
        Provenance {
            seed: self.noise.seed,
            stream: self.noise.stream.clone(),
            paths: self.paths,
            dim: grid.dim,
            cells: self.solver.cells,
            dt: self.solver.dt.unwrap_or(self.noise.dt()),
            steps: self.noise.steps,
            horizon: self.noise.horizon,
            levels,
        }
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Estimate { mean: f64::NAN, se: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate { mean, se: f64::NAN };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate { mean, se: (var / n).sqrt() }
}

/// `5 (h + sqrt(dt))`, the discretization part of every tolerance (multiplied by a data norm).
pub fn discretization_allowance(h: f64, dt: f64) -> f64 {
    5.0 * (h + dt.sqrt())
}

/// Least-squares slope and `R^2` of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Runs `f` for every path id; results come back in path order regardless of scheduling.
pub(crate) fn over_paths<T: Send>(paths: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..paths).into_par_iter().map(f).collect()
}

/// PME `Phi(r) = r|r|` on `(0, 1)`, `T = 0.05`, `xi = 2 sin(pi x)`, two linear-gradient
/// modes of amplitude `c` with sine profiles, `G = F = 0`.
pub fn reference_problem(noise_amplitude: f64) -> Result<ProblemSpec> {
    let d = BoxDomain::interval(1.0)?;
    let phi = DiffusionNonlinearity::pme(2.0, 2.0)?;
    let noise = if noise_amplitude == 0.0 {
        NoiseField::zero(1)
    } else {
        NoiseField::linear_gradient(1, d.lengths, &[noise_amplitude; 2], Profile::Sine)
    };
    let coeffs = CoefficientSet::new(phi, &noise, &DriftFields::zero(1))?;
    ProblemSpec::new(d, 0.05, coeffs, InitialDatum::sine(d, 2.0))
}
