//! Finite-volume discretization of the regularized Dirichlet problem.
//!
//! One step is semi-implicit: the degenerate diffusion `Delta Phi_n(u)` is
//! implicit (Newton), the Ito first-order terms and the source are explicit
//! conservative fluxes, and the noise is Euler-Maruyama on face values of
//! `sigma^k`. Ghost cells carry `-u` so every face average vanishes on the boundary.

pub mod grid;
pub mod linalg;

use std::io::Write;

pub use grid::Grid;

use crate::error::{Error, Result};
use crate::model::{truncate_initial, CoefficientSet, ProblemSpec};
use crate::noise::NoisePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipPolicy {
    Off,
    ClipAndReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub cells: usize,
    /// Time step; `None` uses the noise grid spacing.
    pub dt: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub positivity_tol: f64,
    pub clipping: ClipPolicy,
    /// Keep every `k`-th state (0 keeps only the first and last).
    pub snapshot_every: usize,
}

impl SolverConfig {
    pub fn new(cells: usize) -> Self {
        Self {
            cells,
            dt: None,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            positivity_tol: 1e-8,
            clipping: ClipPolicy::ClipAndReport,
            snapshot_every: 0,
        }
    }

    /// Keep the state after every step (needed by entropy residuals).
    pub fn recording_all(mut self) -> Self {
        self.snapshot_every = 1;
        self
    }

    /// `h_min^2 / 4` for the grid of `spec`.
    pub fn default_dt(&self, spec: &ProblemSpec) -> Result<f64> {
        Ok(Grid::new(&spec.domain, self.cells)?.h_min().powi(2) / 4.0)
    }

    /// Number of uniform steps covering the horizon with `dt <= default_dt`.
    pub fn default_steps(&self, spec: &ProblemSpec) -> Result<usize> {
        Ok((spec.horizon / self.default_dt(spec)?).ceil() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub mass: f64,
    /// Minimum before clipping.
    pub min: f64,
    pub max: f64,
    pub clipped_mass: f64,
    /// Mass leaving through the boundary faces (diffusive plus advective), signed.
    pub boundary_flux: f64,
    pub source: f64,
    pub noise: f64,
    /// `|Delta mass - (boundary_flux + source + noise)|` before clipping.
    pub accounting_residual: f64,
}

/// Cumulative a priori functionals of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormReport {
    /// `sup_t ||u||_{L2}^2`.
    pub sup_l2_sq: f64,
    /// `sup_t ||u||_{L_{m+1}}^{m+1}`.
    pub sup_lm1: f64,
    /// `int_0^T ||grad [[a_n]](u)||_{L2}^2 dt`.
    pub grad_bracket_sq: f64,
    /// `int_0^T ||grad u||_{L2}^2 dt`.
    pub grad_u_sq: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    pub level: u32,
    pub snapshots: Vec<FieldState>,
    /// Step index of each snapshot.
    pub snapshot_steps: Vec<usize>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub norms: NormReport,
    pub initial_mass: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &FieldState {
        self.snapshots.last().expect("trajectory has at least the initial state")
    }

    pub fn initial_state(&self) -> &FieldState {
        &self.snapshots[0]
    }

    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn total_clipped_mass(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.clipped_mass).sum()
    }

    pub fn max_newton_iterations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.newton_iterations).max().unwrap_or(0)
    }

    /// Snapshot closest to time `t`.
    pub fn state_at(&self, t: f64) -> &FieldState {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("non-empty")
    }

    /// CSV with columns `t,ix[,iy],u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.grid.dim == 1 {
            writeln!(w, "t,ix,u")?;
        } else {
            writeln!(w, "t,ix,iy,u")?;
        }
        for s in &self.snapshots {
            for (c, v) in s.u.iter().enumerate() {
                let m = self.grid.multi(c);
                if self.grid.dim == 1 {
                    writeln!(w, "{},{},{:e}", s.t, m[0], v)?;
                } else {
                    writeln!(w, "{},{},{},{:e}", s.t, m[0], m[1], v)?;
                }
            }
        }
        Ok(())
    }

    /// Little-endian `u64 snapshots, u64 dim, u64 J`, then per snapshot
    /// `f64 t` followed by the cell values in index order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.snapshots.len() as u64, self.grid.dim as u64, self.grid.cells as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.snapshots {
            w.write_all(&s.t.to_le_bytes())?;
            for v in &s.u {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Discrete a priori functionals of a finished trajectory.
pub fn discrete_norms(traj: &Trajectory) -> NormReport {
    traj.norms
}

/// `sum_faces ((v_R - v_L)/h)^2 h^d`, boundary faces counted with half
/// weight against the ghost value `-v`, which makes it equal to `-<v, L v>`.
pub fn dirichlet_energy(grid: &Grid, v: &[f64]) -> f64 {
    let vol = grid.cell_volume();
    let mut s = 0.0;
    for c in 0..grid.len() {
        for axis in 0..grid.dim {
            let h = grid.h[axis];
            match grid.step(c, axis, true) {
                Some(n) => s += ((v[n] - v[c]) / h).powi(2) * vol,
                None => s += 0.5 * (2.0 * v[c] / h).powi(2) * vol,
            }
            if grid.step(c, axis, false).is_none() {
                s += 0.5 * (2.0 * v[c] / h).powi(2) * vol;
            }
        }
    }
    s
}

/// Grid, regularized coefficients and truncated initial values of `Pi(Phi_n, xi_n)`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub level: u32,
    pub initial: Vec<f64>,
}

impl Discretization {
    pub fn new(spec: &ProblemSpec, n: u32, cells: usize) -> Result<Self> {
        let grid = Grid::new(&spec.domain, cells)?;
        let coeffs = spec.coefficients.regularized(n)?;
        Self::with_coefficients(spec, grid, coeffs, n)
    }

    /// Reuse already regularized coefficients with the initial datum of `spec`.
    pub fn with_coefficients(spec: &ProblemSpec, grid: Grid, coeffs: CoefficientSet, n: u32) -> Result<Self> {
        let raw: Vec<f64> = grid.centers().iter().map(|x| spec.initial.eval(*x)).collect();
        let initial = truncate_initial(&raw, n)?;
        Ok(Self { grid, coeffs, level: n, initial })
    }
}

struct Explicit {
    rhs: Vec<f64>,
    boundary_rate: f64,
    source_rate: f64,
    noise_boundary: f64,
}

/// Tangential derivative of `u` along `j` at cell `c` (ghost `-u`).
#[inline]
fn tangential(grid: &Grid, u: &[f64], c: usize, j: usize) -> f64 {
    let p = grid.step(c, j, true).map_or(-u[c], |n| u[n]);
    let m = grid.step(c, j, false).map_or(-u[c], |n| u[n]);
    (p - m) / (2.0 * grid.h[j])
}

/// Face flux along `axis` (`a^{ij} d_j u + b^i + f^i`) and noise flux `sum_k sigma^{ik} dW^k`.
fn face_terms(
    grid: &Grid,
    coeffs: &CoefficientSet,
    u: &[f64],
    dw: &[f64],
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
    x: [f64; 2],
) -> (f64, f64) {
    let ito = &coeffs.ito;
    let h = grid.h[axis];
    let (ul, ur) = match (left, right) {
        (Some(l), Some(r)) => (u[l], u[r]),
        (Some(l), None) => (u[l], -u[l]),
        (None, Some(r)) => (-u[r], u[r]),
        (None, None) => unreachable!("a face has at least one cell"),
    };
    let ubar = if left.is_some() && right.is_some() { 0.5 * (ul + ur) } else { 0.0 };
    let mut grad = [0.0; 2];
    grad[axis] = (ur - ul) / h;
    if grid.dim == 2 {
        let j = 1 - axis;
        if let (Some(l), Some(r)) = (left, right) {
            grad[j] = 0.5 * (tangential(grid, u, l, j) + tangential(grid, u, r, j));
        }
    }
    let mut a_row = [0.0; 2];
    let mut b = 0.0;
    let mut noise = 0.0;
    for (k, mode) in ito.noise().modes().iter().enumerate() {
        let sr = mode.d_r(x, ubar);
        let div = mode.div_x(grid.dim, x, ubar);
        for j in 0..grid.dim {
            a_row[j] += 0.5 * sr[axis] * sr[j];
        }
        b += sr[axis] * div;
        if dw[k] != 0.0 {
            noise += mode.value(x, ubar)[axis] * dw[k];
        }
    }
    let g = ito.drift().g.value(x, ubar)[axis];
    let mut flux = g + 0.5 * b;
    for j in 0..grid.dim {
        flux += a_row[j] * grad[j];
    }
    (flux, noise)
}

fn explicit_terms(grid: &Grid, coeffs: &CoefficientSet, u: &[f64], dw: &[f64], dt: f64) -> Explicit {
    let n = grid.len();
    let vol = grid.cell_volume();
    let mut rhs = u.to_vec();
    let mut boundary_rate = 0.0;
    let mut noise_boundary = 0.0;
    let mut source_rate = 0.0;
    let trivial = coeffs.ito.is_trivial();
    if !trivial {
        let mut low_flux = vec![0.0; n];
        let mut low_noise = vec![0.0; n];
        for axis in 0..grid.dim {
            let h = grid.h[axis];
            for c in 0..n {
                let left = grid.step(c, axis, false);
                let (f, s) = face_terms(grid, coeffs, u, dw, axis, left, Some(c), grid.face(c, axis, false));
                low_flux[c] = f;
                low_noise[c] = s;
                if left.is_none() {
                    boundary_rate -= f * vol / h;
                    noise_boundary -= s * vol / h;
                }
            }
            for c in 0..n {
                let (hf, hs) = match grid.step(c, axis, true) {
                    Some(r) => (low_flux[r], low_noise[r]),
                    None => {
                        let (f, s) = face_terms(grid, coeffs, u, dw, axis, Some(c), None, grid.face(c, axis, true));
                        boundary_rate += f * vol / h;
                        noise_boundary += s * vol / h;
                        (f, s)
                    }
                };
                rhs[c] += dt * (hf - low_flux[c]) / h + (hs - low_noise[c]) / h;
            }
        }
        for c in 0..n {
            let src = coeffs.ito.reaction(grid.center(c), u[c]);
            rhs[c] += dt * src;
            source_rate += src * vol;
        }
    }
    Explicit { rhs, boundary_rate, source_rate, noise_boundary }
}

fn first_non_finite(grid: &Grid, v: &[f64]) -> Option<String> {
    v.iter()
        .position(|x| !x.is_finite())
        .map(|c| format!("non-finite value {} at cell {} (x = {:?})", v[c], c, &grid.center(c)[..grid.dim]))
}

fn newton_residual(grid: &Grid, coeffs: &CoefficientSet, u: &[f64], rhs: &[f64], dt: f64, phi: &mut [f64], dphi: &mut [f64], lphi: &mut [f64], res: &mut [f64]) {
    for c in 0..u.len() {
        let (p, d) = coeffs.phi.phi_and_derivative(u[c]);
        phi[c] = p;
        dphi[c] = d;
    }
    linalg::laplacian(grid, phi, lphi);
    for c in 0..u.len() {
        res[c] = u[c] - dt * lphi[c] - rhs[c];
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Advance `state` by one step of size `dt` with increments `dw` (one per mode).
pub fn step(
    state: &FieldState,
    grid: &Grid,
    coeffs: &CoefficientSet,
    dw: &[f64],
    dt: f64,
    cfg: &SolverConfig,
    index: usize,
) -> Result<(FieldState, StepDiagnostics)> {
    let err = |msg: String| Error::Step { step: index, msg };
    if dw.len() != coeffs.ito.modes() {
        return Err(err(format!("{} increments for {} noise modes", dw.len(), coeffs.ito.modes())));
    }
    if let Some(m) = first_non_finite(grid, &state.u) {
        return Err(err(m));
    }
    let n = grid.len();
    let ex = explicit_terms(grid, coeffs, &state.u, dw, dt);
    if let Some(m) = first_non_finite(grid, &ex.rhs) {
        return Err(err(m));
    }
    let tol = cfg.newton_tol * (1.0 + sup_norm(&ex.rhs));
    let mut u = state.u.clone();
    let (mut phi, mut dphi, mut lphi, mut res) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    newton_residual(grid, coeffs, &u, &ex.rhs, dt, &mut phi, &mut dphi, &mut lphi, &mut res);
    let mut rnorm = sup_norm(&res);
    let mut iterations = 0;
    let (mut tphi, mut tdphi, mut tres) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut trial = vec![0.0; n];
    while rnorm > tol {
        if iterations >= cfg.newton_max_iter {
            return Err(err(format!(
                "Newton did not converge after {iterations} iterations (residual {rnorm:e}); reduce dt"
            )));
        }
        iterations += 1;
        let w: Vec<f64> = dphi.iter().map(|d| 1.0 / d).collect();
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let y = linalg::solve_shifted(grid, &w, dt, &neg).map_err(|e| err(e.to_string()))?;
        let r2 = l2(&res);
        let mut lambda = 1.0;
        loop {
            for c in 0..n {
                trial[c] = u[c] + lambda * w[c] * y[c];
            }
            newton_residual(grid, coeffs, &trial, &ex.rhs, dt, &mut tphi, &mut tdphi, &mut lphi, &mut tres);
            if l2(&tres) < (1.0 - 1e-4 * lambda) * r2 || lambda < 1e-6 {
                break;
            }
            lambda *= 0.5;
        }
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut phi, &mut tphi);
        std::mem::swap(&mut dphi, &mut tdphi);
        std::mem::swap(&mut res, &mut tres);
        rnorm = sup_norm(&res);
    }
    if let Some(m) = first_non_finite(grid, &u) {
        return Err(err(m));
    }
    let vol = grid.cell_volume();
    let mut diffusive = 0.0;
    for c in 0..n {
        for axis in 0..grid.dim {
            let missing = grid.step(c, axis, true).is_none() as u8 + grid.step(c, axis, false).is_none() as u8;
            diffusive -= missing as f64 * 2.0 * phi[c] / (grid.h[axis] * grid.h[axis]) * vol;
        }
    }
    let old_mass = grid.integrate(&state.u);
    let new_mass = grid.integrate(&u);
    let boundary_flux = dt * (diffusive + ex.boundary_rate);
    let source = dt * ex.source_rate;
    let accounting_residual = (new_mass - old_mass - (boundary_flux + source + ex.noise_boundary)).abs();
    let mut clipped_mass = 0.0;
    let min_raw = u.iter().copied().fold(f64::INFINITY, f64::min);
    match cfg.clipping {
        ClipPolicy::ClipAndReport => {
            for v in u.iter_mut() {
                if *v < 0.0 {
                    clipped_mass -= *v * vol;
                    *v = 0.0;
                }
            }
        }
        ClipPolicy::Off => {
            if min_raw < -cfg.positivity_tol {
                return Err(err(format!("min(u) = {min_raw:e} below the positivity tolerance")));
            }
        }
    }
    let diag = StepDiagnostics {
        step: index,
        t: state.t + dt,
        newton_iterations: iterations,
        newton_residual: rnorm,
        mass: grid.integrate(&u),
        min: min_raw,
        max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        clipped_mass,
        boundary_flux,
        source,
        noise: ex.noise_boundary,
        accounting_residual,
    };
    Ok((FieldState { u, t: state.t + dt }, diag))
}

/// Noise path on the time grid of `dt` (Brownian-bridge refinement when `dt` is finer),
/// checked to span the horizon.
pub fn align_noise(noise: &NoisePath, dt: Option<f64>, horizon: f64) -> Result<NoisePath> {
    let path = match dt {
        None => noise.clone(),
        Some(dt) => {
            let q = noise.dt() / dt;
            if (q - q.round()).abs() > 1e-9 * q.max(1.0) || q.round() < 1.0 {
                return Err(Error::Config(format!("dt {dt} does not divide the noise spacing {}", noise.dt())));
            }
            let q = q.round() as usize;
            if q == 1 {
                noise.clone()
            } else {
                noise.refine(q)?
            }
        }
    };
    let span = path.dt() * path.steps() as f64;
    if (span - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!("noise grid spans {span}, horizon is {horizon}")));
    }
    Ok(path)
}

fn accumulate_sup(norms: &mut NormReport, grid: &Grid, coeffs: &CoefficientSet, u: &[f64]) {
    let m = coeffs.phi.m();
    let l2 = grid.integrate(&u.iter().map(|v| v * v).collect::<Vec<_>>());
    let lm = grid.integrate(&u.iter().map(|v| v.abs().powf(m + 1.0)).collect::<Vec<_>>());
    norms.sup_l2_sq = norms.sup_l2_sq.max(l2);
    norms.sup_lm1 = norms.sup_lm1.max(lm);
}

/// Solve `Pi(Phi_n, xi_n)` along one noise path.
pub fn solve_path(spec: &ProblemSpec, n: u32, noise: &NoisePath, cfg: &SolverConfig) -> Result<Trajectory> {
    let disc = Discretization::new(spec, n, cfg.cells)?;
    solve_discretized(&disc, spec.horizon, noise, cfg)
}

/// `solve_path` on a prepared discretization (avoids rebuilding `Phi_n`).
pub fn solve_discretized(disc: &Discretization, horizon: f64, noise: &NoisePath, cfg: &SolverConfig) -> Result<Trajectory> {
    if noise.modes() != disc.coeffs.ito.modes() {
        return Err(Error::Config(format!(
            "noise path has {} modes, coefficients have {}",
            noise.modes(),
            disc.coeffs.ito.modes()
        )));
    }
    let path = align_noise(noise, cfg.dt, horizon)?;
    let dt = path.dt();
    let grid = &disc.grid;
    let coeffs = &disc.coeffs;
    let mut state = FieldState { u: disc.initial.clone(), t: 0.0 };
    let mut norms = NormReport::default();
    accumulate_sup(&mut norms, grid, coeffs, &state.u);
    let initial_mass = grid.integrate(&state.u);
    let mut snapshots = vec![state.clone()];
    let mut snapshot_steps = vec![0];
    let mut diagnostics = Vec::with_capacity(path.steps());
    let mut bracket = vec![0.0; grid.len()];
    for k in 0..path.steps() {
        let (next, mut d) = step(&state, grid, coeffs, path.row(k), dt, cfg, k)?;
        d.t = (k + 1) as f64 * dt;
        state = FieldState { u: next.u, t: d.t };
        accumulate_sup(&mut norms, grid, coeffs, &state.u);
        for (b, v) in bracket.iter_mut().zip(&state.u) {
            *b = coeffs.phi.bracket_a(*v);
        }
        norms.grad_bracket_sq += dt * dirichlet_energy(grid, &bracket);
        norms.grad_u_sq += dt * dirichlet_energy(grid, &state.u);
        diagnostics.push(d);
        let last = k + 1 == path.steps();
        if last || (cfg.snapshot_every > 0 && (k + 1) % cfg.snapshot_every == 0) {
            snapshots.push(state.clone());
            snapshot_steps.push(k + 1);
        }
    }
    Ok(Trajectory { grid: grid.clone(), dt, level: disc.level, snapshots, snapshot_steps, diagnostics, norms, initial_mass })
}
