use super::report::{ExperimentReport, Metric, Provenance, Relation, Series};
use super::{discretization_allowance, estimate, linear_fit, over_paths, EnsembleConfig};
use crate::entropy::{EntropyTestPair, ResidualEvaluator, ResidualOptions, ShiftedMollifier};
use crate::error::{Error, Result};
use crate::model::validate::ZERO_CONDITION;
use crate::model::{validate_assumptions, CoefficientSet, DiffusionNonlinearity, NoiseField, ProbeGrid, ProblemSpec, Verdict};
use crate::noise::NoisePath;
use crate::solver::{align_noise, solve_discretized, ClipPolicy, Discretization, Grid, NormReport, SolverConfig, Trajectory};

/// Cells per axis of the deterministic entropy sub-battery in one dimension.
pub const DETERMINISTIC_BATTERY_CELLS: usize = 256;
/// Lower bound for deterministic entropy residuals.
pub const DETERMINISTIC_RESIDUAL_FLOOR: f64 = -1e-6;

fn positive_part_l1(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).max(0.0)).sum::<f64>() * grid.cell_volume()
}

fn l1_distance(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.cell_volume()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn require_zero_condition(spec: &ProblemSpec, r_max: f64) -> Result<()> {
    let probe = ProbeGrid::lattice(&spec.domain, 9, r_max.max(1.0), 9)?;
    let rep = validate_assumptions(spec, &probe);
    if rep.verdict(ZERO_CONDITION) == Verdict::Fail {
        return Err(Error::Config("the zero condition fails for this problem; non-negativity is not expected".into()));
    }
    Ok(())
}

/// Per-path clipped mass and pre-clip minimum against `1e-3 ||xi||_1` and `-10 positivity_tol`.
pub fn run_nonnegativity(spec: &ProblemSpec, ens: &EnsembleConfig) -> Result<ExperimentReport> {
    ens.check_spec(spec)?;
    let disc = Discretization::new(spec, ens.level(), ens.solver.cells)?;
    require_zero_condition(spec, max_of(&disc.initial))?;
    let cfg = SolverConfig { clipping: ClipPolicy::ClipAndReport, ..ens.solver.clone() };
    let rows = over_paths(ens.paths, |p| {
        let noise = ens.path_noise(p, "")?;
        let tr = solve_discretized(&disc, spec.horizon, &noise, &cfg)?;
        let min = tr.diagnostics.iter().map(|d| d.min).fold(f64::INFINITY, f64::min);
        Ok((tr.total_clipped_mass(), min))
    })?;
    let l1 = disc.grid.integrate(&disc.initial);
    let clipped: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mins: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut rep = ExperimentReport::new("nonnegativity", ens.provenance(&disc.grid, vec![ens.level()]));
    let bound = 1e-3 * l1;
    let e = estimate(&clipped);
    rep.push(Metric::check("mean_clipped_mass", e.mean, e.se, e.mean, Relation::Le, bound, 0.0));
    let worst = max_of(&clipped);
    rep.push(Metric::check("max_clipped_mass", worst, 0.0, worst, Relation::Le, bound, 0.0).with_note("per path"));
    let floor = -10.0 * cfg.positivity_tol;
    let min = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let em = estimate(&mins);
    rep.push(Metric::check("min_pre_clip", min, em.se, min, Relation::Ge, floor, 0.0).with_note("over paths, cells and steps"));
    rep.push(Metric::info("initial_l1", l1, 0.0));
    rep.series.push(Series {
        figure: "nonnegativity".into(),
        name: "clipped_mass".into(),
        points: clipped.iter().enumerate().map(|(p, c)| (p as f64, *c)).collect(),
    });
    rep.series.push(Series {
        figure: "nonnegativity".into(),
        name: "min_pre_clip".into(),
        points: mins.iter().enumerate().map(|(p, c)| (p as f64, *c)).collect(),
    });
    Ok(rep)
}

/// `sup_{x, r} |d_r F|` on the cell centers and `r in [0, r_max]`.
fn reaction_lipschitz(coeffs: &CoefficientSet, grid: &Grid, r_max: f64) -> f64 {
    let ito = &coeffs.ito;
    let step = 1e-6 * r_max.max(1.0);
    let mut l: f64 = 0.0;
    for x in grid.centers() {
        for i in 0..=32 {
            let r = r_max * i as f64 / 32.0;
            let d = (ito.reaction(x, r + step) - ito.reaction(x, r - step)) / (2.0 * step);
            if d.is_finite() {
                l = l.max(d.abs());
            }
        }
    }
    l
}

/// Coupled pair of runs from `xi` and `xi~`: `e(t) = E ||(u - u~)^+(t)||_1` against the
/// stability bound `exp(L t) ||(xi - xi~)^+||_1`, the ordering bound when `xi <= xi~`,
/// and the step-to-step trend.
pub fn run_l1_contraction(spec: &ProblemSpec, spec_tilde: &ProblemSpec, ens: &EnsembleConfig) -> Result<ExperimentReport> {
    if !ens.coupled {
        return Err(Error::Config("L1 contraction needs a coupled ensemble".into()));
    }
    ens.check_spec(spec)?;
    ens.check_spec(spec_tilde)?;
    if spec.domain != spec_tilde.domain || spec.horizon != spec_tilde.horizon {
        return Err(Error::Config("compared problems must share the domain and the horizon".into()));
    }
    let (p, q) = (&spec.coefficients, &spec_tilde.coefficients);
    if p.phi.m() != q.phi.m() || p.phi.k() != q.phi.k() || p.ito.modes() != q.ito.modes() {
        return Err(Error::Config("compared problems must share Phi and the noise".into()));
    }
    let n = ens.level();
    let disc = Discretization::new(spec, n, ens.solver.cells)?;
    let disc_t = Discretization::with_coefficients(spec_tilde, disc.grid.clone(), disc.coeffs.clone(), n)?;
    let grid = &disc.grid;
    let cfg = SolverConfig { snapshot_every: (ens.noise.steps / 16).max(1), ..ens.solver.clone() };
    let rows = over_paths(ens.paths, |p| {
        let noise = ens.path_noise(p, "")?;
        let noise_t = ens.path_noise(p, "tilde")?;
        let a = solve_discretized(&disc, spec.horizon, &noise, &cfg)?;
        let b = solve_discretized(&disc_t, spec.horizon, &noise_t, &cfg)?;
        let times: Vec<f64> = a.snapshots.iter().map(|s| s.t).collect();
        let e: Vec<f64> = a.snapshots.iter().zip(&b.snapshots).map(|(x, y)| positive_part_l1(grid, &x.u, &y.u)).collect();
        Ok((times, e))
    })?;
    let times = rows[0].0.clone();
    let e0 = positive_part_l1(grid, &disc.initial, &disc_t.initial);
    let tilde_l1 = grid.integrate(&disc_t.initial);
    let r_max = 2.0 * max_of(&disc.initial).max(max_of(&disc_t.initial)).max(0.5);
    let lip = reaction_lipschitz(&disc.coeffs, grid, r_max);
    let dt = ens.solver.dt.unwrap_or(ens.noise.dt());
    let allow = discretization_allowance(grid.h_min(), dt) * tilde_l1;
    let ordered = disc.initial.iter().zip(&disc_t.initial).all(|(a, b)| a <= b);
    let c = ens.confidence;

    let mut rep = ExperimentReport::new("l1-contraction", ens.provenance(grid, vec![n]));
    rep.push(Metric::info("lipschitz_L", lip, 0.0).with_note("sup |dF/dr| on the probe lattice"));
    rep.push(Metric::info("initial_positive_part_l1", e0, 0.0));
    let mut mean_curve = Vec::new();
    let mut bound_curve = Vec::new();
    let last = times.len() - 1;
    for (j, t) in times.iter().enumerate() {
        let ej: Vec<f64> = rows.iter().map(|r| r.1[j]).collect();
        let est = estimate(&ej);
        let at = if j == last { "T".to_string() } else { format!("{t:.6}") };
        let cexp = (lip * t).exp();
        let tol = c * est.se + allow;
        rep.push(
            Metric::check(format!("stability@{at}"), est.mean, est.se, est.mean, Relation::Le, cexp * e0 + tol, tol)
                .with_note("C = exp(L t) is a heuristic proxy for the constant"),
        );
        if ordered {
            rep.push(
                Metric::check(format!("ordering@{at}"), est.mean, est.se, est.mean, Relation::Le, tol, tol)
                    .with_note("xi <= xi~ pointwise"),
            );
        }
        if j > 0 {
            let grow = (lip * (t - times[j - 1])).exp();
            let d: Vec<f64> = rows.iter().map(|r| r.1[j] - grow * r.1[j - 1]).collect();
            let ed = estimate(&d);
            let tol = c * ed.se + allow;
            rep.push(Metric::check(format!("trend@{at}"), ed.mean, ed.se, ed.mean, Relation::Le, tol, tol));
        }
        mean_curve.push((*t, est.mean));
        bound_curve.push((*t, cexp * e0));
    }
    rep.series.push(Series { figure: "l1_contraction".into(), name: "e(t)".into(), points: mean_curve });
    rep.series.push(Series { figure: "l1_contraction".into(), name: "exp(Lt)e(0)".into(), points: bound_curve });
    Ok(rep)
}

/// Endpoints and a priori functionals of every path at every level, same noise per path.
#[derive(Debug, Clone)]
pub struct LadderRun {
    pub levels: Vec<u32>,
    pub grid: Grid,
    /// `[path][level]` endpoint `u_n(T)`.
    pub finals: Vec<Vec<Vec<f64>>>,
    /// `[path][level]`.
    pub norms: Vec<Vec<NormReport>>,
    pub provenance: Provenance,
}

pub fn run_level_ladder(spec: &ProblemSpec, levels: &[u32], ens: &EnsembleConfig) -> Result<LadderRun> {
    ens.check_spec(spec)?;
    if !ens.coupled {
        return Err(Error::Config("level comparisons need the same noise at every level".into()));
    }
    let discs = levels
        .iter()
        .map(|&n| Discretization::new(spec, n, ens.solver.cells))
        .collect::<Result<Vec<_>>>()?;
    let rows = over_paths(ens.paths, |p| {
        let noise = ens.path_noise(p, "")?;
        let mut finals = Vec::with_capacity(discs.len());
        let mut norms = Vec::with_capacity(discs.len());
        for d in &discs {
            let tr = solve_discretized(d, spec.horizon, &noise, &ens.solver)?;
            norms.push(tr.norms);
            finals.push(tr.final_state().u.clone());
        }
        Ok((finals, norms))
    })?;
    let (finals, norms) = rows.into_iter().unzip();
    let grid = discs[0].grid.clone();
    Ok(LadderRun { levels: levels.to_vec(), provenance: ens.provenance(&grid, levels.to_vec()), grid, finals, norms })
}

/// `D_j = E ||u_{n_j}(T) - u_{n_{j+1}}(T)||_1` must not increase along the ladder beyond one SE.
pub fn cauchy_report(run: &LadderRun) -> Result<ExperimentReport> {
    let l = run.levels.len();
    if l < 3 {
        return Err(Error::Config(format!("the Cauchy study needs at least 3 levels, got {l}")));
    }
    let d: Vec<Vec<f64>> = run
        .finals
        .iter()
        .map(|f| (0..l - 1).map(|j| l1_distance(&run.grid, &f[j], &f[j + 1])).collect())
        .collect();
    let mut rep = ExperimentReport::new("cauchy", run.provenance.clone());
    let mut curve = Vec::new();
    for j in 0..l - 1 {
        let col: Vec<f64> = d.iter().map(|r| r[j]).collect();
        let e = estimate(&col);
        rep.push(Metric::info(format!("D({},{})", run.levels[j], run.levels[j + 1]), e.mean, e.se));
        curve.push((run.levels[j] as f64, e.mean));
    }
    for j in 0..l - 2 {
        let col: Vec<f64> = d.iter().map(|r| r[j + 1] - r[j]).collect();
        let e = estimate(&col);
        let prev = estimate(&d.iter().map(|r| r[j]).collect::<Vec<_>>()).mean;
        let next = estimate(&d.iter().map(|r| r[j + 1]).collect::<Vec<_>>()).mean;
        rep.push(
            Metric::check(
                format!("decrease D({},{})->D({},{})", run.levels[j], run.levels[j + 1], run.levels[j + 1], run.levels[j + 2]),
                e.mean,
                e.se,
                next,
                Relation::Le,
                prev + e.se,
                e.se,
            )
            .with_note("one SE of the paired difference"),
        );
    }
    rep.series.push(Series { figure: "cauchy".into(), name: "D(n,next n)".into(), points: curve });
    Ok(rep)
}

/// The three a priori functionals must stay within a factor 4 across levels;
/// `||grad u_n||^2` is reported only.
pub fn apriori_report(run: &LadderRun) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("apriori", run.provenance.clone());
    let fields: [(&str, fn(&NormReport) -> f64, bool); 4] = [
        ("sup_l2_sq", |n| n.sup_l2_sq, true),
        ("grad_bracket_sq", |n| n.grad_bracket_sq, true),
        ("sup_lm1", |n| n.sup_lm1, true),
        ("grad_u_sq", |n| n.grad_u_sq, false),
    ];
    for (name, get, bounded) in fields {
        let mut means = Vec::new();
        let mut curve = Vec::new();
        for (j, n) in run.levels.iter().enumerate() {
            let col: Vec<f64> = run.norms.iter().map(|r| get(&r[j])).collect();
            let e = estimate(&col);
            rep.push(Metric::info(format!("{name}@n={n}"), e.mean, e.se));
            means.push(e.mean);
            curve.push((*n as f64, e.mean));
        }
        if bounded {
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            rep.push(Metric::check(format!("{name} uniform in n"), hi, 0.0, hi, Relation::Le, 4.0 * lo, 0.0).with_note("max <= 4 min over levels"));
        }
        rep.series.push(Series { figure: "apriori".into(), name: name.into(), points: curve });
    }
    Ok(rep)
}

pub fn run_cauchy_in_n(spec: &ProblemSpec, levels: &[u32], ens: &EnsembleConfig) -> Result<ExperimentReport> {
    if levels.len() < 3 {
        return Err(Error::Config(format!("the Cauchy study needs at least 3 levels, got {}", levels.len())));
    }
    cauchy_report(&run_level_ladder(spec, levels, ens)?)
}

pub fn run_apriori(spec: &ProblemSpec, ens: &EnsembleConfig) -> Result<ExperimentReport> {
    apriori_report(&run_level_ladder(spec, &ens.levels, ens)?)
}

/// `g(gamma) = E (1/gamma) int_0^gamma ||u(t) - xi||_2^2 dt` for `gamma in {T/64, T/32, T/16}`.
pub fn run_initial_attainment(spec: &ProblemSpec, ens: &EnsembleConfig) -> Result<ExperimentReport> {
    ens.check_spec(spec)?;
    let gamma_max = spec.horizon / 16.0;
    let dt_target = ens.solver.dt.unwrap_or(ens.noise.dt());
    let steps = 4 * ((gamma_max / dt_target / 4.0).ceil() as usize).max(1);
    let short = ProblemSpec { horizon: gamma_max, ..spec.clone() };
    let ens_s = ens.for_horizon(gamma_max, steps)?;
    let cfg = SolverConfig { dt: None, snapshot_every: 1, ..ens.solver.clone() };
    let disc = Discretization::new(&short, ens.level(), cfg.cells)?;
    let dt = gamma_max / steps as f64;
    let marks = [steps / 4, steps / 2, steps];
    let rows = over_paths(ens.paths, |p| {
        let noise = ens_s.path_noise(p, "")?;
        let tr = solve_discretized(&disc, gamma_max, &noise, &cfg)?;
        let mut acc = 0.0;
        let mut out = [0.0; 3];
        for (k, s) in tr.snapshots.iter().enumerate().skip(1) {
            let d: Vec<f64> = s.u.iter().zip(&disc.initial).map(|(a, b)| (a - b).powi(2)).collect();
            acc += dt * disc.grid.integrate(&d);
            for (i, m) in marks.iter().enumerate() {
                if k == *m {
                    out[i] = acc / (*m as f64 * dt);
                }
            }
        }
        Ok(out)
    })?;
    let gammas = marks.map(|m| m as f64 * dt);
    let mut rep = ExperimentReport::new("initial-attainment", ens_s.provenance(&disc.grid, vec![ens.level()]));
    let mut means = [0.0; 3];
    for i in 0..3 {
        let e = estimate(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
        means[i] = e.mean;
        rep.push(Metric::info(format!("g(T/{})", [64, 32, 16][i]), e.mean, e.se));
    }
    for (i, j) in [(0usize, 1usize), (1, 2), (0, 2)] {
        let e = estimate(&rows.iter().map(|r| r[i] - r[j]).collect::<Vec<_>>());
        let names = ["T/64", "T/32", "T/16"];
        rep.push(
            Metric::check(format!("g({}) <= g({})", names[i], names[j]), e.mean, e.se, means[i], Relation::Le, means[j] + e.se, e.se)
                .with_note("one SE of the paired difference"),
        );
    }
    if means.iter().all(|m| *m > 0.0) {
        let (slope, r2) = linear_fit(&gammas.map(f64::ln), &means.map(f64::ln));
        rep.push(Metric::info("loglog_slope", slope, 0.0).with_note(format!("R^2 = {r2:.4}")));
    }
    rep.series.push(Series {
        figure: "initial_attainment".into(),
        name: "g(gamma)".into(),
        points: gammas.iter().zip(&means).map(|(a, b)| (*a, *b)).collect(),
    });
    Ok(rep)
}

/// `sum_x h^d sum_y w(x - y) |v(x) - v(y)|` over cell pairs inside the domain, with the
/// weights `w` the cell samples of the origin-centred mollifier normalized to sum one.
fn mollified_difference(grid: &Grid, v: &[f64], kernel: &[([isize; 2], f64)]) -> f64 {
    let mut s = 0.0;
    let j = grid.cells as isize;
    for idx in 0..grid.len() {
        let m = grid.multi(idx);
        let mut local = 0.0;
        for (off, w) in kernel {
            let (a, b) = (m[0] as isize + off[0], m[1] as isize + off[1]);
            let inside = a >= 0 && a < j && (grid.dim == 1 || (b >= 0 && b < j));
            if inside {
                let other = grid.index([a as usize, if grid.dim == 1 { 0 } else { b as usize }]);
                local += w * (v[idx] - v[other]).abs();
            }
        }
        s += local;
    }
    s * grid.cell_volume()
}

fn kernel(grid: &Grid, eps: f64) -> Result<Vec<([isize; 2], f64)>> {
    let moll = ShiftedMollifier::origin(grid.dim, eps);
    let reach = 7.0 * eps / 16.0;
    let mut out = Vec::new();
    let r: Vec<isize> = (0..grid.dim).map(|a| (reach / grid.h[a]).floor() as isize).collect();
    if r.iter().any(|v| *v < 1) {
        return Err(Error::Domain(format!("eps = {eps} is not resolved by the grid (need 7 eps / 16 >= h)")));
    }
    let ry = if grid.dim == 2 { r[1] } else { 0 };
    for dy in -ry..=ry {
        for dx in -r[0]..=r[0] {
            let w = [dx as f64 * grid.h[0], if grid.dim == 2 { dy as f64 * grid.h[1] } else { 0.0 }];
            let val = moll.eval(w);
            if val > 0.0 {
                out.push(([dx, dy], val));
            }
        }
    }
    let total: f64 = out.iter().map(|o| o.1).sum();
    for o in &mut out {
        o.1 /= total;
    }
    Ok(out)
}

/// Decay of `E int |u(t,x) - u(t,y)| rho_eps(x - y)` and its `Phi` version across `epsilons`;
/// the log-log slope must reach `0.8 / (m + 1)`.
pub fn run_mollified_difference(
    trajs: &[Trajectory],
    phi: &DiffusionNonlinearity,
    epsilons: &[f64],
) -> Result<ExperimentReport> {
    if trajs.len() < 2 {
        return Err(Error::Config("the mollified-difference study needs at least 2 trajectories".into()));
    }
    if epsilons.len() < 2 {
        return Err(Error::Config("the mollified-difference study needs at least 2 values of eps".into()));
    }
    let grid = &trajs[0].grid;
    if trajs.iter().any(|t| &t.grid != grid || t.snapshots.len() < 2) {
        return Err(Error::Domain("trajectories must share one grid and record at least two states".into()));
    }
    let kernels = epsilons.iter().map(|e| kernel(grid, *e)).collect::<Result<Vec<_>>>()?;
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = over_paths(trajs.len(), |p| {
        let tr = &trajs[p];
        let mut mu = vec![0.0; kernels.len()];
        let mut mphi = vec![0.0; kernels.len()];
        for w in tr.snapshots.windows(2) {
            let dt = w[1].t - w[0].t;
            let pv: Vec<f64> = w[1].u.iter().map(|v| phi.phi(*v)).collect();
            for (k, ker) in kernels.iter().enumerate() {
                mu[k] += dt * mollified_difference(grid, &w[1].u, ker);
                mphi[k] += dt * mollified_difference(grid, &pv, ker);
            }
        }
        Ok((mu, mphi))
    })?;
    let m = phi.m();
    let required = 0.8 / (m + 1.0);
    let prov = Provenance {
        seed: 0,
        stream: String::new(),
        paths: trajs.len(),
        dim: grid.dim,
        cells: grid.cells,
        dt: trajs[0].dt,
        steps: trajs[0].steps(),
        horizon: trajs[0].final_state().t,
        levels: vec![trajs[0].level],
    };
    let mut rep = ExperimentReport::new("mollified-difference", prov);
    let log_eps: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    for (label, pick) in [("u", 0usize), ("phi", 1usize)] {
        let col = |k: usize| -> Vec<f64> { per_path.iter().map(|r| if pick == 0 { r.0[k] } else { r.1[k] }).collect() };
        let mut means = Vec::new();
        for (k, eps) in epsilons.iter().enumerate() {
            let e = estimate(&col(k));
            rep.push(Metric::info(format!("M_{label}(eps={eps})"), e.mean, e.se));
            means.push(e.mean);
        }
        let name = format!("slope_{label}");
        if means.iter().all(|v| *v == 0.0) {
            rep.push(
                Metric::check(name, 0.0, 0.0, f64::INFINITY, Relation::Ge, required, 0.0)
                    .with_note("functional vanishes at every eps"),
            );
        } else {
            let (slope, r2) = linear_fit(&log_eps, &means.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect::<Vec<_>>());
            let slopes: Vec<f64> = per_path
                .iter()
                .filter_map(|r| {
                    let v = if pick == 0 { &r.0 } else { &r.1 };
                    v.iter().all(|x| *x > 0.0).then(|| linear_fit(&log_eps, &v.iter().map(|x| x.ln()).collect::<Vec<_>>()).0)
                })
                .collect();
            let se = estimate(&slopes).se;
            rep.push(Metric::check(name, slope, se, slope, Relation::Ge, required, 0.0).with_note(format!("R^2 = {r2:.4}; required 0.8/(m+1)")));
        }
        rep.series.push(Series {
            figure: "mollified_difference".into(),
            name: format!("M_{label}"),
            points: epsilons.iter().zip(&means).map(|(a, b)| (*a, *b)).collect(),
        });
    }
    Ok(rep)
}

/// Solves the ensemble and runs `run_mollified_difference` on it with the base `Phi`.
pub fn run_mollified_difference_ensemble(spec: &ProblemSpec, ens: &EnsembleConfig, epsilons: &[f64]) -> Result<ExperimentReport> {
    ens.check_spec(spec)?;
    let disc = Discretization::new(spec, ens.level(), ens.solver.cells)?;
    let cfg = SolverConfig { snapshot_every: (ens.noise.steps / 32).max(1), ..ens.solver.clone() };
    let trajs = over_paths(ens.paths, |p| solve_discretized(&disc, spec.horizon, &ens.path_noise(p, "")?, &cfg))?;
    let mut rep = run_mollified_difference(&trajs, &spec.coefficients.phi, epsilons)?;
    rep.provenance = ens.provenance(&disc.grid, vec![ens.level()]);
    Ok(rep)
}

/// Monte Carlo mean residual per pair (`R >= -3 SE - 5 (h + sqrt dt) ||xi||_1`), plus the
/// noiseless counterpart on a finer grid where every residual must exceed
/// `DETERMINISTIC_RESIDUAL_FLOOR`.
pub fn run_entropy_battery(spec: &ProblemSpec, ens: &EnsembleConfig, battery: &[EntropyTestPair]) -> Result<ExperimentReport> {
    ens.check_spec(spec)?;
    if battery.is_empty() {
        return Err(Error::Config("the entropy battery is empty".into()));
    }
    let disc = Discretization::new(spec, ens.level(), ens.solver.cells)?;
    let cfg = ens.solver.clone().recording_all();
    let eval = ResidualEvaluator::new(&disc.grid, &disc.coeffs, battery, ResidualOptions::default())?;
    let rows = over_paths(ens.paths, |p| {
        let noise = align_noise(&ens.path_noise(p, "")?, cfg.dt, spec.horizon)?;
        let tr = solve_discretized(&disc, spec.horizon, &noise, &SolverConfig { dt: None, ..cfg.clone() })?;
        Ok(eval.evaluate(&tr, &noise)?.iter().map(|t| t.residual()).collect::<Vec<f64>>())
    })?;
    let dt = ens.solver.dt.unwrap_or(ens.noise.dt());
    let allow = discretization_allowance(disc.grid.h_min(), dt) * disc.grid.integrate(&disc.initial);
    let mut rep = ExperimentReport::new("entropy-battery", ens.provenance(&disc.grid, vec![ens.level()]));
    let mut curve = Vec::new();
    for (i, pair) in battery.iter().enumerate() {
        let e = estimate(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
        let tol = ens.confidence * e.se + allow;
        rep.push(Metric::check(format!("mc:{}", pair.label()), e.mean, e.se, e.mean, Relation::Ge, -tol, tol));
        curve.push((i as f64, e.mean));
    }
    rep.series.push(Series { figure: "entropy_battery".into(), name: "mean_residual".into(), points: curve });

    let det = deterministic_counterpart(spec)?;
    let cells = if spec.domain.dim == 1 { DETERMINISTIC_BATTERY_CELLS } else { ens.solver.cells };
    let det_cfg = SolverConfig { cells, dt: None, ..ens.solver.clone() }.recording_all();
    let steps = det_cfg.default_steps(&det)?;
    let noise = NoisePath::zeros(steps, 0, det.horizon / steps as f64);
    let det_disc = Discretization::new(&det, ens.level(), cells)?;
    let tr = solve_discretized(&det_disc, det.horizon, &noise, &det_cfg)?;
    let det_eval = ResidualEvaluator::new(&det_disc.grid, &det_disc.coeffs, battery, ResidualOptions::default())?;
    let mut curve = Vec::new();
    for (i, (pair, t)) in battery.iter().zip(det_eval.evaluate(&tr, &noise)?).enumerate() {
        let r = t.residual();
        rep.push(Metric::check(
            format!("det:{}", pair.label()),
            r,
            0.0,
            r,
            Relation::Ge,
            DETERMINISTIC_RESIDUAL_FLOOR,
            -DETERMINISTIC_RESIDUAL_FLOOR,
        ));
        curve.push((i as f64, r));
    }
    rep.series.push(Series { figure: "entropy_battery".into(), name: "deterministic_residual".into(), points: curve });
    Ok(rep)
}

/// Same problem with `sigma = 0`.
fn deterministic_counterpart(spec: &ProblemSpec) -> Result<ProblemSpec> {
    let c = &spec.coefficients;
    let coeffs = CoefficientSet::new(c.phi.clone(), &NoiseField::zero(spec.domain.dim), c.ito.drift())?;
    ProblemSpec::new(spec.domain, spec.horizon, coeffs, spec.initial.clone())
}
