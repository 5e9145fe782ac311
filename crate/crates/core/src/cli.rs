//! Sectioned `key = value` configuration, suite orchestration and report files.
//!
//! ```text
//! [domain]
//! dim = 1
//! lengths = 1.0
//! horizon = 0.05
//!
//! [phi]
//! family = pme
//! m = 2
//! ```
//!
//! Sections: `domain`, `phi`, `noise`, `drift`, `initial`, `initial_tilde`, `solver`,
//! `ensemble`. Lines starting with `#` are comments. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::entropy::default_battery;
use crate::error::{Error, Result};
use crate::experiments::{
    run_apriori, run_cauchy_in_n, run_entropy_battery, run_initial_attainment, run_l1_contraction,
    run_mollified_difference_ensemble, run_nonnegativity, EnsembleConfig, ExperimentReport,
};
use crate::model::{BoxDomain, CoefficientSet, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec, Profile};
use crate::solver::{ClipPolicy, Grid, SolverConfig};

/// Suite names accepted by `--suites`, in execution order.
pub const SUITES: [&str; 7] = [
    "nonnegativity",
    "l1-contraction",
    "cauchy",
    "apriori",
    "initial-attainment",
    "mollified-difference",
    "entropy-battery",
];

const SECTIONS: [&str; 8] = ["domain", "phi", "noise", "drift", "initial", "initial_tilde", "solver", "ensemble"];

/// Everything a run needs besides the suite list.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub ensemble: EnsembleConfig,
    /// Comparison datum for `l1-contraction`.
    pub initial_tilde: Option<InitialDatum>,
    pub cauchy_levels: Vec<u32>,
    pub epsilons: Vec<f64>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Upper bounds, not replacements.
    pub max_paths: Option<usize>,
    pub max_cells: Option<usize>,
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    name: String,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn empty(name: &str) -> Self {
        Self { name: name.into(), entries: BTreeMap::new() }
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.entries.get(key) {
            Some(e) => Error::Config(format!("[{}] key `{key}` (line {}): {msg}", self.name, e.line)),
            None => Error::Config(format!("[{}] key `{key}`: {msg}", self.name)),
        }
    }

    fn raw(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|e| e.value)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        let v = e.value.parse::<T>().map_err(|err| self.err(key, format!("cannot parse `{}`: {err}", e.value)))?;
        self.entries.remove(key);
        Ok(Some(v))
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str, why: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| self.err(key, format!("missing, required {why}")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        let mut out = Vec::new();
        for item in e.value.split(',') {
            let item = item.trim();
            out.push(item.parse::<T>().map_err(|err| self.err(key, format!("cannot parse list item `{item}`: {err}")))?);
        }
        self.entries.remove(key);
        Ok(Some(out))
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            Some((k, e)) => Err(Error::Config(format!("[{}] unknown key `{k}` (line {})", self.name, e.line))),
            None => Ok(()),
        }
    }
}

fn sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut headers: BTreeMap<String, usize> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse { line, msg: format!("malformed section header `{t}`") })?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::Parse { line, msg: format!("unknown section `[{name}]`") });
            }
            if let Some(first) = headers.insert(name.to_string(), line) {
                return Err(Error::Parse { line, msg: format!("duplicate section `[{name}]`, first at line {first}") });
            }
            out.insert(name.to_string(), Section::empty(name));
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got `{t}`") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse { line, msg: "empty key".into() });
        }
        let Some(name) = &current else {
            return Err(Error::Parse { line, msg: format!("key `{k}` outside any section") });
        };
        let sec = out.get_mut(name).expect("section registered on its header");
        if let Some(prev) = sec.entries.get(k) {
            return Err(Error::Parse { line, msg: format!("duplicate key `{k}` in [{name}] at lines {} and {line}", prev.line) });
        }
        sec.entries.insert(k.to_string(), Entry { value: v.to_string(), line });
    }
    Ok(out)
}

fn take(all: &mut BTreeMap<String, Section>, name: &str) -> Section {
    all.remove(name).unwrap_or_else(|| Section::empty(name))
}

fn parse_bool(s: &mut Section, key: &str) -> Result<Option<bool>> {
    match s.string(key).as_deref() {
        None => Ok(None),
        Some("true") => Ok(Some(true)),
        Some("false") => Ok(Some(false)),
        Some(other) => Err(Error::Config(format!("[{}] key `{key}`: expected true or false, got `{other}`", s.name))),
    }
}

fn point(s: &mut Section, key: &str, dim: usize, default: [f64; 2]) -> Result<[f64; 2]> {
    match s.list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == dim => Ok([v[0], if dim == 2 { v[1] } else { 0.0 }]),
        Some(v) => Err(s.err(key, format!("expected {dim} components, got {}", v.len()))),
    }
}

fn domain(s: &mut Section) -> Result<(BoxDomain, f64)> {
    let dim = s.parsed::<usize>("dim")?.unwrap_or(1);
    if dim != 1 && dim != 2 {
        return Err(s.err("dim", format!("must be 1 or 2, got {dim}")));
    }
    let lengths = point(s, "lengths", dim, [1.0, if dim == 2 { 1.0 } else { 0.0 }])?;
    let horizon = s.required::<f64>("horizon", "for every run")?;
    let d = BoxDomain::new(dim, lengths).map_err(|e| s.err("lengths", e))?;
    Ok((d, horizon))
}

fn phi(s: &mut Section) -> Result<DiffusionNonlinearity> {
    let family = s.string("family").ok_or_else(|| s.err("family", "missing, one of pme, linear, table"))?;
    let k = s.parsed::<f64>("k")?.unwrap_or(2.0);
    let r = match family.as_str() {
        "pme" => {
            let m = s.required::<f64>("m", "for family pme")?;
            DiffusionNonlinearity::pme(m, k).map_err(|e| s.err("m", e))
        }
        "linear" => {
            let eps = s.required::<f64>("eps", "for family linear")?;
            let m = s.parsed::<f64>("m")?.unwrap_or(2.0);
            DiffusionNonlinearity::linear(eps, m, k).map_err(|e| s.err("eps", e))
        }
        "table" => {
            let m = s.required::<f64>("m", "for family table")?;
            let r = s.list::<f64>("r")?.ok_or_else(|| s.err("r", "missing, required for family table"))?;
            let v = s.list::<f64>("phi")?.ok_or_else(|| s.err("phi", "missing, required for family table"))?;
            DiffusionNonlinearity::tabulated(r, v, m, k).map_err(|e| s.err("phi", e))
        }
        other => return Err(s.err("family", format!("unknown family `{other}`, expected pme, linear or table"))),
    };
    r
}

fn noise(s: &mut Section, d: &BoxDomain) -> Result<NoiseField> {
    let kind = s.string("kind").unwrap_or_else(|| "none".into());
    if kind == "none" {
        return Ok(NoiseField::zero(d.dim));
    }
    let amplitudes = s.list::<f64>("amplitudes")?.ok_or_else(|| s.err("amplitudes", format!("missing, required for kind {kind}")))?;
    let profile = match s.string("profile").as_deref().unwrap_or("sine") {
        "sine" => Profile::Sine,
        "polynomial" => Profile::Polynomial(
            s.list::<f64>("coefficients")?.ok_or_else(|| s.err("coefficients", "missing, required for profile polynomial"))?,
        ),
        other => return Err(s.err("profile", format!("unknown profile `{other}`, expected sine or polynomial"))),
    };
    match kind.as_str() {
        "linear-gradient" => Ok(NoiseField::linear_gradient(d.dim, d.lengths, &amplitudes, profile)),
        "additive" => Ok(NoiseField::additive(d.dim, d.lengths, &amplitudes, profile)),
        other => Err(s.err("kind", format!("unknown noise kind `{other}`, expected none, linear-gradient or additive"))),
    }
}

fn drift(s: &mut Section, d: &BoxDomain) -> Result<DriftFields> {
    let velocity = point(s, "velocity", d.dim, [0.0; 2])?;
    let rate = s.parsed::<f64>("rate")?.unwrap_or(0.0);
    if velocity == [0.0; 2] && rate == 0.0 {
        Ok(DriftFields::zero(d.dim))
    } else {
        Ok(DriftFields::linear(d.dim, velocity, rate))
    }
}

fn datum(s: &mut Section, d: &BoxDomain) -> Result<InitialDatum> {
    let shape = s.string("shape").ok_or_else(|| s.err("shape", "missing, one of zero, constant, sine, bump, parabola"))?;
    let centre = [d.lengths[0] / 2.0, d.lengths[1] / 2.0];
    Ok(match shape.as_str() {
        "zero" => InitialDatum::zero(),
        "constant" => InitialDatum::constant(s.required::<f64>("value", "for shape constant")?),
        "sine" => InitialDatum::sine(*d, s.required::<f64>("amplitude", "for shape sine")?),
        "parabola" => InitialDatum::parabola(*d, s.required::<f64>("amplitude", "for shape parabola")?),
        "bump" => {
            let a = s.required::<f64>("amplitude", "for shape bump")?;
            let c = point(s, "center", d.dim, centre)?;
            let w = s.required::<f64>("half_width", "for shape bump")?;
            if !(w > 0.0) {
                return Err(s.err("half_width", "must be positive"));
            }
            InitialDatum::bump(*d, a, c, w)
        }
        other => return Err(s.err("shape", format!("unknown shape `{other}`"))),
    })
}

fn solver(s: &mut Section, max_cells: Option<usize>) -> Result<(SolverConfig, Option<f64>)> {
    let mut cells = s.required::<usize>("cells", "for every run")?;
    if cells == 0 {
        return Err(s.err("cells", "must be positive"));
    }
    if let Some(cap) = max_cells {
        cells = cells.min(cap);
    }
    let mut cfg = SolverConfig::new(cells);
    let dt = s.parsed::<f64>("dt")?;
    if let Some(dt) = dt {
        if !(dt > 0.0) {
            return Err(s.err("dt", "must be positive"));
        }
    }
    if let Some(v) = s.parsed("newton_tol")? {
        cfg.newton_tol = v;
    }
    if let Some(v) = s.parsed("newton_max_iter")? {
        cfg.newton_max_iter = v;
    }
    if let Some(v) = s.parsed("positivity_tol")? {
        cfg.positivity_tol = v;
    }
    if let Some(v) = s.parsed("snapshot_every")? {
        cfg.snapshot_every = v;
    }
    match s.string("clipping").as_deref() {
        None | Some("report") => cfg.clipping = ClipPolicy::ClipAndReport,
        Some("off") => cfg.clipping = ClipPolicy::Off,
        Some(other) => return Err(Error::Config(format!("[solver] key `clipping`: expected report or off, got `{other}`"))),
    }
    Ok((cfg, dt))
}

/// Parses and validates a configuration without overrides.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, ov: &Overrides) -> Result<RunConfig> {
    let mut all = sections(text)?;
    let mut sd = take(&mut all, "domain");
    let (d, horizon) = domain(&mut sd)?;
    sd.finish()?;
    let mut sp = take(&mut all, "phi");
    let phi = phi(&mut sp)?;
    sp.finish()?;
    let mut sn = take(&mut all, "noise");
    let noise = noise(&mut sn, &d)?;
    sn.finish()?;
    let mut sr = take(&mut all, "drift");
    let drift = drift(&mut sr, &d)?;
    sr.finish()?;
    let mut si = take(&mut all, "initial");
    let xi = datum(&mut si, &d)?;
    si.finish()?;
    let initial_tilde = match all.remove("initial_tilde") {
        None => None,
        Some(mut st) => {
            let relative = parse_bool(&mut st, "relative")?.unwrap_or(false);
            let t = datum(&mut st, &d)?;
            st.finish()?;
            Some(if relative { xi.plus(&t) } else { t })
        }
    };
    let mut ss = take(&mut all, "solver");
    let (solver_cfg, dt) = solver(&mut ss, ov.max_cells)?;
    ss.finish()?;

    let coeffs = CoefficientSet::new(phi, &noise, &drift)?;
    let spec = ProblemSpec::new(d, horizon, coeffs, xi)?;

    let mut se = take(&mut all, "ensemble");
    let mut paths = se.required::<usize>("paths", "for every run")?;
    if let Some(cap) = ov.max_paths {
        paths = paths.min(cap);
    }
    let seed = ov.seed.unwrap_or(se.parsed::<u64>("seed")?.unwrap_or(0));
    let levels = se.list::<u32>("levels")?.unwrap_or_else(|| vec![16]);
    let coupled = parse_bool(&mut se, "coupled")?.unwrap_or(true);
    let confidence = se.parsed::<f64>("confidence")?;
    let stream = se.string("stream");
    let cauchy_levels = se.list::<u32>("cauchy_levels")?.unwrap_or_else(|| vec![8, 16, 32]);
    let epsilons = se.list::<f64>("epsilons")?.unwrap_or_else(|| vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0]);
    se.finish()?;

    let mut ens = EnsembleConfig::new(&spec, paths, seed, solver_cfg, levels)?;
    if let Some(dt) = dt {
        ens = ens.for_horizon(horizon, (horizon / dt).ceil() as usize)?;
    }
    ens.coupled = coupled;
    if let Some(c) = confidence {
        ens.confidence = c;
    }
    if let Some(s) = stream {
        ens.noise.stream = s;
    }
    ens.validate()?;
    if cauchy_levels.contains(&0) {
        return Err(Error::Config("[ensemble] key `cauchy_levels`: levels must be positive".into()));
    }
    Ok(RunConfig { spec, ensemble: ens, initial_tilde, cauchy_levels, epsilons })
}

/// One invocation: which config, which suites, where to write.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: PathBuf,
    pub suites: Vec<String>,
    pub out: PathBuf,
    pub overrides: Overrides,
    /// Also write `<suite>_plot.csv`.
    pub plot_data: bool,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.suites.is_empty() {
            return Err(Error::Config(format!("usage: at least one suite is required, choose from {}", SUITES.join(", "))));
        }
        for s in &self.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(Error::Config(format!("usage: unknown suite `{s}`, choose from {}", SUITES.join(", "))));
            }
        }
        if !self.config.is_file() {
            return Err(Error::Io(format!("config file {} does not exist", self.config.display())));
        }
        Ok(())
    }
}

/// Result of a run: one summary line per suite and the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summaries: Vec<String>,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn run_suite(name: &str, cfg: &RunConfig) -> Result<ExperimentReport> {
    let (spec, ens) = (&cfg.spec, &cfg.ensemble);
    match name {
        "nonnegativity" => run_nonnegativity(spec, ens),
        "l1-contraction" => {
            let t = cfg
                .initial_tilde
                .clone()
                .ok_or_else(|| Error::Config("suite l1-contraction needs an [initial_tilde] section".into()))?;
            run_l1_contraction(spec, &spec.with_initial(t), ens)
        }
        "cauchy" => run_cauchy_in_n(spec, &cfg.cauchy_levels, ens),
        "apriori" => run_apriori(spec, ens),
        "initial-attainment" => run_initial_attainment(spec, ens),
        "mollified-difference" => run_mollified_difference_ensemble(spec, ens, &cfg.epsilons),
        "entropy-battery" => {
            let grid = Grid::new(&spec.domain, ens.solver.cells)?;
            let xi_max = grid.centers().iter().map(|x| spec.initial.eval(*x)).fold(0.0, f64::max);
            let battery = default_battery(&spec.domain, spec.horizon, xi_max)?;
            run_entropy_battery(spec, ens, &battery)
        }
        other => Err(Error::Config(format!("unknown suite `{other}`"))),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f(&mut file)
}

/// Runs the selected suites and writes `<suite>.csv` and `provenance.txt` into `out`.
/// Suite errors are reported as failures; the remaining suites still run.
pub fn run(manifest: &RunManifest) -> Result<RunOutcome> {
    manifest.validate()?;
    fs::create_dir_all(&manifest.out).map_err(|e| Error::Io(format!("{}: {e}", manifest.out.display())))?;
    let prov_path = manifest.out.join("provenance.txt");
    let mut prov = fs::File::create(&prov_path).map_err(|e| Error::Io(format!("{}: {e}", prov_path.display())))?;

    let text = fs::read_to_string(&manifest.config).map_err(|e| Error::Io(format!("{}: {e}", manifest.config.display())))?;
    let hash = config_hash(&text);
    let cfg = parse_config_with(&text, &manifest.overrides)?;
    writeln!(prov, "config={}", manifest.config.display())?;
    writeln!(prov, "config_hash={hash}")?;
    writeln!(prov, "seed={}", cfg.ensemble.noise.seed)?;
    writeln!(prov, "version={}", env!("CARGO_PKG_VERSION"))?;

    let mut out = RunOutcome { summaries: Vec::new(), files: vec![prov_path], passed: true };
    for name in SUITES.iter().filter(|s| manifest.suites.iter().any(|m| m == *s)) {
        match run_suite(name, &cfg) {
            Ok(rep) => {
                let path = manifest.out.join(format!("{name}.csv"));
                write_file(&path, |f| rep.write_csv(f, &hash))?;
                out.files.push(path);
                if manifest.plot_data {
                    let path = manifest.out.join(format!("{name}_plot.csv"));
                    write_file(&path, |f| rep.write_plot_data(f, &hash))?;
                    out.files.push(path);
                }
                writeln!(prov, "suite={name} {}", rep.provenance.to_line())?;
                out.passed &= rep.passed();
                out.summaries.push(rep.summary());
            }
            Err(e) => {
                writeln!(prov, "suite={name} error={e}")?;
                out.passed = false;
                out.summaries.push(format!("{name}: FAIL ({e})"));
            }
        }
    }
    Ok(out)
}
