//! Discrete entropy-inequality residuals along solver trajectories.
//!
//! For a test pair `(eta, phi(t) rho(x))` the residual is `R = RHS - LHS` of the
//! entropy inequality with the time integral written by summation by parts:
//! `LHS = -sum_n E_{n+1} (phi_{n+1} - phi_n)` where `E_n = sum_c eta(u^n_c) rho_c h^d`.
//! Diffusion terms are taken at `u^{n+1}` (the implicit level of the scheme),
//! everything else at `u^n`; the stochastic integral is left-point.

use std::collections::HashMap;

use super::cutoff::{Jet, SpatialCutoff, TimeProfile};
use super::eta::{chebyshev_fit, chebyshev_nodes, rho_chebyshev_moments, EntropyFunction, Orientation, CHEB_TERMS, RHO_HI};
use crate::error::{Error, Result};
use crate::model::quadrature::{default_tolerance, gauss_legendre, integrate};
use crate::model::{CoefficientSet, Point};
use crate::noise::NoisePath;
use crate::solver::{linalg, Grid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestClass {
    /// Any entropy with a compactly supported cutoff.
    CompactSupport,
    /// `eta'(0) = 0` with a cutoff smooth up to the boundary.
    VanishingSlope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTestPair {
    pub eta: EntropyFunction,
    pub time: TimeProfile,
    pub cutoff: SpatialCutoff,
    pub class: TestClass,
}

impl EntropyTestPair {
    /// Pair with the class derived from the cutoff; rejects inadmissible combinations.
    pub fn new(eta: EntropyFunction, time: TimeProfile, cutoff: SpatialCutoff) -> Result<Self> {
        let class = if cutoff.is_interior() { TestClass::CompactSupport } else { TestClass::VanishingSlope };
        let p = Self { eta, time, cutoff, class };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        match self.class {
            TestClass::CompactSupport if !self.cutoff.is_interior() => Err(Error::Domain(format!(
                "cutoff {} is not compactly supported in the domain",
                self.cutoff.label()
            ))),
            TestClass::VanishingSlope if !self.eta.vanishes_at_zero() => Err(Error::Domain(format!(
                "entropy {} has eta'(0) != 0 and cannot be paired with a boundary cutoff",
                self.eta.label()
            ))),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        format!("{}|{}|{}", self.eta.label(), self.cutoff.label(), self.time.label())
    }
}

/// How the diffusion and `eta'' |grad [[a]](u)|^2` terms are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipationForm {
    /// `[[a^2 eta']](u) L_h rho` and the matching face dissipation, which
    /// together equal `rho eta'(u) L_h Phi(u)` exactly.
    SchemeConsistent,
    /// Analytic `Delta rho` and central differences of `[[a]](u)`.
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub dissipation: DissipationForm,
    /// Range of `r` covered by the cached primitives (outside it, adaptive quadrature).
    pub r_range: (f64, f64),
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { dissipation: DissipationForm::SchemeConsistent, r_range: (-1.0, 4.0) }
    }
}

/// Individual contributions; `residual() = rhs() - lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualTerms {
    pub lhs: f64,
    pub initial: f64,
    /// `[[a^2 eta']] Delta phi`.
    pub diffusion: f64,
    /// `-eta'' |grad [[a]]|^2 phi`.
    pub dissipation: f64,
    /// `[[a^{ij} eta']] phi_{x_i x_j}`.
    pub second_order: f64,
    /// `([[a^{ij}_{x_j} eta' - f^i_r eta']] - eta' b^i) phi_{x_i}`.
    pub first_order: f64,
    /// `(eta' f^i_{x_i} - [[f^i_{r x_i} eta']] + eta' F) phi`.
    pub zeroth_order: f64,
    /// `1/2 eta'' sum_k |sigma^{ik}_{x_i}|^2 phi`.
    pub ito: f64,
    pub stochastic: f64,
    residual: f64,
}

impl ResidualTerms {
    pub fn rhs(&self) -> f64 {
        self.initial
            + self.diffusion
            + self.dissipation
            + self.second_order
            + self.first_order
            + self.zeroth_order
            + self.ito
            + self.stochastic
    }

    /// `RHS - LHS`, accumulated step by step to avoid cancellation.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

type CoefFn = Box<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Indices of the bracketed coefficient functions.
struct CoefLayout {
    a: Vec<(usize, usize, usize)>,
    c: Vec<usize>,
    frdiv: Option<usize>,
    srdiv: Vec<usize>,
    sr: Vec<[usize; 2]>,
    funcs: Vec<CoefFn>,
}

fn coefficient_layout(coeffs: &CoefficientSet) -> CoefLayout {
    let dim = coeffs.dim();
    let ito = &coeffs.ito;
    let mut funcs: Vec<CoefFn> = Vec::new();
    let mut layout = CoefLayout { a: vec![], c: vec![], frdiv: None, srdiv: vec![], sr: vec![], funcs: vec![] };
    if ito.is_trivial() {
        return layout;
    }
    for i in 0..dim {
        for j in i..dim {
            let it = ito.clone();
            layout.a.push((i, j, funcs.len()));
            funcs.push(Box::new(move |x, r| it.a(x, r)[i][j]));
        }
    }
    for i in 0..dim {
        let it = ito.clone();
        layout.c.push(funcs.len());
        funcs.push(Box::new(move |x, r| it.a_div(x, r)[i] - it.f_r(x, r)[i]));
    }
    let it = ito.clone();
    layout.frdiv = Some(funcs.len());
    funcs.push(Box::new(move |x, r| it.f_r_div(x, r)));
    for k in 0..ito.modes() {
        let it = ito.clone();
        layout.srdiv.push(funcs.len());
        funcs.push(Box::new(move |x, r| it.sigma_r_div(k, x, r)));
    }
    for k in 0..ito.modes() {
        let mut idx = [0; 2];
        for (i, slot) in idx.iter_mut().enumerate().take(dim) {
            let it = ito.clone();
            *slot = funcs.len();
            funcs.push(Box::new(move |x, r| it.sigma_r(k, x, r)[i]));
        }
        layout.sr.push(idx);
    }
    layout.funcs = funcs;
    layout
}

/// Cubic Hermite tables of `G_q(x_c, r) = int_0^r g_q(x_c, s) ds` for every cell and function.
struct PrimitiveTables {
    lo: f64,
    step: f64,
    nodes: usize,
    nq: usize,
    vals: Vec<f64>,
    ders: Vec<f64>,
}

impl PrimitiveTables {
    fn build(centers: &[Point], funcs: &[CoefFn], range: (f64, f64)) -> Self {
        let step = (1.0 / 64.0f64).max((range.1 - range.0) / 256.0);
        let below = (-range.0.min(0.0) / step).ceil() as usize;
        let above = (range.1.max(0.0) / step).ceil() as usize;
        let nodes = below + above + 1;
        let lo = -(below as f64) * step;
        let nq = funcs.len();
        let (gx, gw) = gauss_legendre(8);
        let mut vals = vec![0.0; centers.len() * nq * nodes];
        let mut ders = vec![0.0; centers.len() * nq * nodes];
        for (c, x) in centers.iter().enumerate() {
            for (q, g) in funcs.iter().enumerate() {
                let base = (c * nq + q) * nodes;
                let piece = |a: f64, b: f64| -> f64 {
                    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
                    gx.iter().zip(&gw).map(|(t, w)| w * r * g(*x, m + r * t)).sum()
                };
                for m in 0..nodes {
                    ders[base + m] = g(*x, lo + m as f64 * step);
                }
                for m in below + 1..nodes {
                    let (a, b) = (lo + (m - 1) as f64 * step, lo + m as f64 * step);
                    vals[base + m] = vals[base + m - 1] + piece(a, b);
                }
                for m in (0..below).rev() {
                    let (a, b) = (lo + m as f64 * step, lo + (m + 1) as f64 * step);
                    vals[base + m] = vals[base + m + 1] - piece(a, b);
                }
            }
        }
        Self { lo, step, nodes, nq, vals, ders }
    }

    #[inline]
    fn eval(&self, c: usize, q: usize, r: f64, funcs: &[CoefFn], x: Point) -> f64 {
        let t = (r - self.lo) / self.step;
        if !(t >= 0.0 && t <= (self.nodes - 1) as f64) {
            let g = &funcs[q];
            return integrate(|s| g(x, s), 0.0, r, default_tolerance(r)).unwrap_or(f64::NAN);
        }
        let m = (t.floor() as usize).min(self.nodes - 2);
        let s = t - m as f64;
        let base = (c * self.nq + q) * self.nodes + m;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.vals[base] + h10 * self.step * self.ders[base] + h01 * self.vals[base + 1] + h11 * self.step * self.ders[base + 1]
    }
}

/// Constants that turn a primitive `G` into `[[g eta']]` for one entropy.
///
/// On the transition, `int_{t0}^r g eta' = G eta' |_{t0}^r - int_{t0}^r G eta''`; the last
/// integral uses a Chebyshev fit of `G` against tabulated moments of `rho`.
#[derive(Clone, Copy, Default)]
struct EtaBracket {
    g_t0: f64,
    g_t1: f64,
    full: f64,
    at_zero: f64,
    fit: [f64; CHEB_TERMS],
}

/// `r = z + delta t` (plus) or `r = z - delta t` (minus).
fn transition_point(eta: &EntropyFunction, t: f64) -> f64 {
    match eta.orientation {
        Orientation::Plus => eta.z + eta.delta * t,
        Orientation::Minus => eta.z - eta.delta * t,
    }
}

/// Moment weights `W_k` with `int_{t0}^r G eta'' = sum_k fit_k W_k(r)`.
fn transition_weights(eta: &EntropyFunction, r: f64) -> [f64; CHEB_TERMS] {
    match eta.orientation {
        Orientation::Plus => rho_chebyshev_moments((r - eta.z) / eta.delta),
        Orientation::Minus => {
            let total = rho_chebyshev_moments(RHO_HI);
            let part = rho_chebyshev_moments((eta.z - r) / eta.delta);
            let mut w = [0.0; CHEB_TERMS];
            for k in 0..CHEB_TERMS {
                w[k] = total[k] - part[k];
            }
            w
        }
    }
}

#[inline]
fn in_transition(eta: &EntropyFunction, r: f64) -> bool {
    let (t0, t1) = eta.transition();
    r > t0 && r < t1
}

/// `A(r) = int_{t0}^r g eta'` from the primitive value `G(r)`; `w` are the weights at `r`
/// (only read when `r` is inside the transition).
#[inline]
fn antiderivative(eta: &EntropyFunction, k: &EtaBracket, r: f64, g_r: f64, w: &[f64; CHEB_TERMS]) -> f64 {
    let (t0, t1) = eta.transition();
    let (c_lo, c_hi) = eta.outer_slopes();
    if r <= t0 {
        c_lo * (g_r - k.g_t0)
    } else if r >= t1 {
        k.full + c_hi * (g_r - k.g_t1)
    } else {
        let s: f64 = k.fit.iter().zip(w).map(|(a, b)| a * b).sum();
        g_r * eta.d1(r) - k.g_t0 * c_lo - s
    }
}

fn eta_bracket(eta: &EntropyFunction, g_at: &dyn Fn(f64) -> f64) -> EtaBracket {
    let (t0, t1) = eta.transition();
    let (c_lo, c_hi) = eta.outer_slopes();
    let fit = chebyshev_fit(&chebyshev_nodes().map(|t| g_at(transition_point(eta, t))));
    let mut k = EtaBracket { g_t0: g_at(t0), g_t1: g_at(t1), full: 0.0, at_zero: 0.0, fit };
    let s: f64 = fit.iter().zip(&transition_weights(eta, t1)).map(|(a, b)| a * b).sum();
    k.full = k.g_t1 * c_hi - k.g_t0 * c_lo - s;
    k.at_zero = antiderivative(eta, &k, 0.0, g_at(0.0), &transition_weights(eta, 0.0));
    k
}

const PSI_NODES: usize = 2048;

/// `Psi(r) = [[Phi_n' eta']](r)` for one entropy: cubic Hermite across the transition,
/// affine in `Phi_n` outside it.
struct PsiTable {
    t0: f64,
    step: f64,
    vals: Vec<f64>,
    ders: Vec<f64>,
    phi_t0: f64,
    phi_t1: f64,
    at_zero: f64,
}

impl PsiTable {
    fn build(eta: &EntropyFunction, phi: &crate::model::DiffusionNonlinearity) -> Self {
        let (t0, t1) = eta.transition();
        let step = (t1 - t0) / PSI_NODES as f64;
        let f = |s: f64| phi.phi_prime(s) * eta.d1(s);
        let (gx, gw) = gauss_legendre(8);
        let mut vals = vec![0.0; PSI_NODES + 1];
        for i in 0..PSI_NODES {
            let m = t0 + (i as f64 + 0.5) * step;
            vals[i + 1] = vals[i] + gx.iter().zip(&gw).map(|(x, w)| w * 0.5 * step * f(m + 0.5 * step * x)).sum::<f64>();
        }
        let ders = (0..=PSI_NODES).map(|i| f(t0 + i as f64 * step)).collect();
        let mut t = Self { t0, step, vals, ders, phi_t0: phi.phi(t0), phi_t1: phi.phi(t1), at_zero: 0.0 };
        t.at_zero = t.raw(eta, 0.0, phi.phi(0.0));
        t
    }

    #[inline]
    fn raw(&self, eta: &EntropyFunction, r: f64, phi_r: f64) -> f64 {
        let (c_lo, c_hi) = eta.outer_slopes();
        let x = (r - self.t0) / self.step;
        if x <= 0.0 {
            return c_lo * (phi_r - self.phi_t0);
        }
        if x >= PSI_NODES as f64 {
            return self.vals[PSI_NODES] + c_hi * (phi_r - self.phi_t1);
        }
        let m = (x.floor() as usize).min(PSI_NODES - 1);
        let s = x - m as f64;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.vals[m]
            + (s3 - 2.0 * s2 + s) * self.step * self.ders[m]
            + (-2.0 * s3 + 3.0 * s2) * self.vals[m + 1]
            + (s3 - s2) * self.step * self.ders[m + 1]
    }

    /// `[[Phi_n' eta']](r)`, normalized to vanish at `r = 0`.
    #[inline]
    fn eval(&self, eta: &EntropyFunction, r: f64, phi_r: f64) -> f64 {
        self.raw(eta, r, phi_r) - self.at_zero
    }
}

/// Evaluates many test pairs on trajectories sharing one grid and coefficient set.
pub struct ResidualEvaluator {
    grid: Grid,
    coeffs: CoefficientSet,
    pairs: Vec<EntropyTestPair>,
    options: ResidualOptions,
    etas: Vec<EntropyFunction>,
    /// (eta index, cutoff index) per spatial pair.
    spatial: Vec<(usize, usize)>,
    pair_spatial: Vec<usize>,
    users: Vec<Vec<usize>>,
    jets: Vec<Vec<Jet>>,
    lh_rho: Vec<Vec<f64>>,
    layout: CoefLayout,
    tables: PrimitiveTables,
    centers: Vec<Point>,
    /// per eta, per cell, per function
    eta_consts: Vec<Vec<EtaBracket>>,
    psi: Vec<PsiTable>,
}

fn key(e: &EntropyFunction) -> (u64, u64, bool) {
    (e.delta.to_bits(), e.z.to_bits(), matches!(e.orientation, Orientation::Plus))
}

impl ResidualEvaluator {
    pub fn new(grid: &Grid, coeffs: &CoefficientSet, pairs: &[EntropyTestPair], options: ResidualOptions) -> Result<Self> {
        if coeffs.dim() != grid.dim {
            return Err(Error::Domain("coefficient and grid dimensions differ".into()));
        }
        let mut etas: Vec<EntropyFunction> = Vec::new();
        let mut eta_idx: HashMap<(u64, u64, bool), usize> = HashMap::new();
        let mut cutoffs: Vec<SpatialCutoff> = Vec::new();
        let mut spatial: Vec<(usize, usize)> = Vec::new();
        let mut pair_spatial = Vec::new();
        for p in pairs {
            p.check()?;
            if p.cutoff.dim != grid.dim {
                return Err(Error::Domain("cutoff dimension does not match the grid".into()));
            }
            let e = *eta_idx.entry(key(&p.eta)).or_insert_with(|| {
                etas.push(p.eta);
                etas.len() - 1
            });
            let c = match cutoffs.iter().position(|c| *c == p.cutoff) {
                Some(c) => c,
                None => {
                    cutoffs.push(p.cutoff.clone());
                    cutoffs.len() - 1
                }
            };
            let s = match spatial.iter().position(|s| *s == (e, c)) {
                Some(s) => s,
                None => {
                    spatial.push((e, c));
                    spatial.len() - 1
                }
            };
            pair_spatial.push(s);
        }
        let centers = grid.centers();
        let jets: Vec<Vec<Jet>> = cutoffs.iter().map(|c| centers.iter().map(|x| c.jet(*x)).collect()).collect();
        let lh_rho = cutoffs
            .iter()
            .zip(&jets)
            .map(|(_, j)| {
                let v: Vec<f64> = j.iter().map(|j| j.value).collect();
                let mut out = vec![0.0; v.len()];
                linalg::laplacian(grid, &v, &mut out);
                out
            })
            .collect();
        let layout = coefficient_layout(coeffs);
        let tables = PrimitiveTables::build(&centers, &layout.funcs, options.r_range);
        let mut eta_consts = Vec::with_capacity(etas.len());
        for eta in &etas {
            let mut per = Vec::with_capacity(centers.len() * layout.funcs.len());
            for (c, x) in centers.iter().enumerate() {
                for q in 0..layout.funcs.len() {
                    let g_at = |r: f64| tables.eval(c, q, r, &layout.funcs, *x);
                    per.push(eta_bracket(eta, &g_at));
                }
            }
            eta_consts.push(per);
        }
        let phi = &coeffs.phi;
        let users = (0..etas.len()).map(|e| (0..spatial.len()).filter(|s| spatial[*s].0 == e).collect()).collect();
        let psi = etas.iter().map(|eta| PsiTable::build(eta, phi)).collect();
        Ok(Self {
            grid: grid.clone(),
            coeffs: coeffs.clone(),
            pairs: pairs.to_vec(),
            options,
            etas,
            spatial,
            pair_spatial,
            users,
            jets,
            lh_rho,
            layout,
            tables,
            centers,
            eta_consts,
            psi,
        })
    }

    pub fn pairs(&self) -> &[EntropyTestPair] {
        &self.pairs
    }

    fn check_inputs(&self, traj: &Trajectory, noise: &NoisePath) -> Result<()> {
        if traj.grid != self.grid {
            return Err(Error::Domain("trajectory grid differs from the evaluator grid".into()));
        }
        let n = traj.steps();
        if traj.snapshots.len() != n + 1 {
            return Err(Error::Domain("entropy residuals need every time step recorded".into()));
        }
        if noise.steps() != n || (noise.dt() - traj.dt).abs() > 1e-12 * traj.dt {
            return Err(Error::Domain(format!(
                "noise grid ({} steps of {}) does not match the trajectory ({} steps of {})",
                noise.steps(),
                noise.dt(),
                n,
                traj.dt
            )));
        }
        if noise.modes() != self.coeffs.ito.modes() {
            return Err(Error::Domain("noise modes do not match the coefficients".into()));
        }
        Ok(())
    }

    /// Residual terms for every pair, in the order given at construction.
    pub fn evaluate(&self, traj: &Trajectory, noise: &NoisePath) -> Result<Vec<ResidualTerms>> {
        self.check_inputs(traj, noise)?;
        let grid = &self.grid;
        let n_cells = grid.len();
        let dim = grid.dim;
        let vol = grid.cell_volume();
        let dt = traj.dt;
        let ito = &self.coeffs.ito;
        let phi = &self.coeffs.phi;
        let nq = self.layout.funcs.len();
        let modes = ito.modes();
        let explicit = !ito.is_trivial();
        let mut out = vec![ResidualTerms::default(); self.pairs.len()];
        let steps = traj.steps();

        // scratch
        let mut gq = vec![0.0; n_cells * nq];
        let mut b = vec![[0.0; 2]; n_cells];
        let mut fdiv = vec![0.0; n_cells];
        let mut src = vec![0.0; n_cells];
        let mut sdiv = vec![0.0; n_cells * modes];
        let mut phi1 = vec![0.0; n_cells];
        let mut lphi1 = vec![0.0; n_cells];
        let mut grad_b_sq = vec![0.0; n_cells];
        let mut spatial_terms = vec![[0.0f64; 9]; self.spatial.len()];
        let mut e_first = vec![0.0; self.spatial.len()];

        for n in 0..steps {
            let u0 = &traj.snapshots[n].u;
            let u1 = &traj.snapshots[n + 1].u;
            let dw = noise.row(n);
            let t_n = traj.snapshots[n].t;
            let t_n1 = traj.snapshots[n + 1].t;
            if explicit {
                for c in 0..n_cells {
                    let x = self.centers[c];
                    let r = u0[c];
                    for q in 0..nq {
                        gq[c * nq + q] = self.tables.eval(c, q, r, &self.layout.funcs, x);
                    }
                    b[c] = ito.b(x, r);
                    fdiv[c] = ito.f_div(x, r);
                    src[c] = ito.reaction(x, r);
                    for k in 0..modes {
                        sdiv[c * modes + k] = ito.sigma_div(k, x, r);
                    }
                }
            }
            for c in 0..n_cells {
                phi1[c] = phi.phi(u1[c]);
            }
            linalg::laplacian(grid, &phi1, &mut lphi1);
            if self.options.dissipation == DissipationForm::CentralDifference {
                let bb: Vec<f64> = u1.iter().map(|v| phi.bracket_a(*v)).collect();
                for c in 0..n_cells {
                    let mut s = 0.0;
                    for axis in 0..dim {
                        let p = grid.step(c, axis, true).map_or(-bb[c], |m| bb[m]);
                        let m = grid.step(c, axis, false).map_or(-bb[c], |m| bb[m]);
                        s += ((p - m) / (2.0 * grid.h[axis])).powi(2);
                    }
                    grad_b_sq[c] = s;
                }
            }

            for (e_idx, eta) in self.etas.iter().enumerate() {
                let users = &self.users[e_idx];
                if users.is_empty() {
                    continue;
                }
                for &s in users {
                    spatial_terms[s] = [0.0; 9];
                }
                let consts = &self.eta_consts[e_idx];
                let psi_table = &self.psi[e_idx];
                for c in 0..n_cells {
                    let (h0, d0, dd0) = eta.all(u0[c]);
                    let (h1, d1, dd1) = eta.all(u1[c]);
                    let psi = psi_table.eval(eta, u1[c], phi1[c]);
                    // explicit weights
                    let mut w0 = 0.0;
                    let mut w_ito = 0.0;
                    let mut w1 = [0.0; 2];
                    let mut w2 = [[0.0; 2]; 2];
                    let mut y0 = [0.0; 8];
                    let mut y1 = [[0.0; 2]; 8];
                    let heavy = modes > 8;
                    let mut y0v = if heavy { vec![0.0; modes] } else { Vec::new() };
                    let mut y1v = if heavy { vec![[0.0; 2]; modes] } else { Vec::new() };
                    if explicit {
                        let wts = if in_transition(eta, u0[c]) { transition_weights(eta, u0[c]) } else { [0.0; CHEB_TERMS] };
                        let br = |q: usize| -> f64 {
                            let k = &consts[c * nq + q];
                            antiderivative(eta, k, u0[c], gq[c * nq + q], &wts) - k.at_zero
                        };
                        for &(i, j, q) in &self.layout.a {
                            let v = br(q);
                            w2[i][j] = v;
                            w2[j][i] = v;
                        }
                        for (i, &q) in self.layout.c.iter().enumerate() {
                            w1[i] = br(q) - d0 * b[c][i];
                        }
                        let frd = self.layout.frdiv.map_or(0.0, br);
                        w0 = d0 * fdiv[c] - frd + d0 * src[c];
                        let mut s2 = 0.0;
                        for k in 0..modes {
                            let sd = sdiv[c * modes + k];
                            s2 += sd * sd;
                            let v0 = d0 * sd - br(self.layout.srdiv[k]);
                            let mut v1 = [0.0; 2];
                            for i in 0..dim {
                                v1[i] = -br(self.layout.sr[k][i]);
                            }
                            if heavy {
                                y0v[k] = v0;
                                y1v[k] = v1;
                            } else {
                                y0[k] = v0;
                                y1[k] = v1;
                            }
                        }
                        w_ito = 0.5 * dd0 * s2;
                    }
                    for &s in users {
                        let cut = self.spatial[s].1;
                        let j = &self.jets[cut][c];
                        let rv = j.value;
                        let t = &mut spatial_terms[s];
                        // 0 diffusion, 1 dissipation(total), 2 second, 3 first, 4 zeroth, 5 ito, 6 stochastic, 7 E_n, 8 E_{n+1}
                        match self.options.dissipation {
                            DissipationForm::SchemeConsistent => {
                                t[0] += psi * self.lh_rho[cut][c];
                                t[1] += rv * d1 * lphi1[c];
                            }
                            DissipationForm::CentralDifference => {
                                t[0] += psi * j.laplacian(dim);
                                t[1] -= rv * dd1 * grad_b_sq[c];
                            }
                        }
                        t[7] += rv * h0;
                        t[8] += rv * h1;
                        if explicit {
                            let mut sec = 0.0;
                            let mut fir = 0.0;
                            for i in 0..dim {
                                fir += w1[i] * j.grad[i];
                                for jj in 0..dim {
                                    sec += w2[i][jj] * j.hess[i][jj];
                                }
                            }
                            t[2] += sec;
                            t[3] += fir;
                            t[4] += w0 * rv;
                            t[5] += w_ito * rv;
                            let mut st = 0.0;
                            for k in 0..modes {
                                let (v0, v1) = if heavy { (y0v[k], y1v[k]) } else { (y0[k], y1[k]) };
                                let mut s = v0 * rv;
                                for i in 0..dim {
                                    s += v1[i] * j.grad[i];
                                }
                                st += s * dw[k];
                            }
                            t[6] += st;
                        }
                    }
                }
            }
            for (p, pair) in self.pairs.iter().enumerate() {
                let s = self.pair_spatial[p];
                let t = &spatial_terms[s];
                let (f0, f1) = (pair.time.eval(t_n), pair.time.eval(t_n1));
                let o = &mut out[p];
                let diffusion = dt * vol * t[0];
                let dissipation = match self.options.dissipation {
                    DissipationForm::SchemeConsistent => dt * vol * t[1] - diffusion,
                    DissipationForm::CentralDifference => dt * vol * t[1],
                };
                let e0 = vol * t[7];
                let e1 = vol * t[8];
                if n == 0 {
                    o.initial = e0 * f0;
                    e_first[s] = e0;
                }
                let parts = [
                    diffusion,
                    dissipation,
                    dt * vol * t[2],
                    dt * vol * t[3],
                    dt * vol * t[4],
                    dt * vol * t[5],
                    vol * t[6],
                ];
                o.diffusion += f0 * parts[0];
                o.dissipation += f0 * parts[1];
                o.second_order += f0 * parts[2];
                o.first_order += f0 * parts[3];
                o.zeroth_order += f0 * parts[4];
                o.ito += f0 * parts[5];
                o.stochastic += f0 * parts[6];
                o.lhs -= e1 * (f1 - f0);
                o.residual += f0 * (parts.iter().sum::<f64>() - (e1 - e0));
                if n + 1 == steps {
                    o.residual += e1 * f1;
                }
            }
        }
        Ok(out)
    }
}

/// Residual `R = RHS - LHS` of one test pair along one path.
pub fn entropy_residual(traj: &Trajectory, noise: &NoisePath, pair: &EntropyTestPair, coeffs: &CoefficientSet) -> Result<f64> {
    pair.check()?;
    let (lo, hi) = traj
        .snapshots
        .iter()
        .flat_map(|s| s.u.iter())
        .fold((0.0f64, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let opts = ResidualOptions { r_range: (lo - 0.5, hi + 0.5), ..Default::default() };
    let ev = ResidualEvaluator::new(&traj.grid, coeffs, std::slice::from_ref(pair), opts)?;
    Ok(ev.evaluate(traj, noise)?[0].residual())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::cutoff::{build_partition, TimeShape};
    use crate::entropy::eta::{make_eta, Orientation};
    use crate::model::{BoxDomain, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec, Profile};
    use crate::noise::{sample_path, NoiseSpec};
    use crate::model::quadrature::integrate_with_breaks;
    use crate::solver::{solve_path, SolverConfig};

    fn profile(shape: TimeShape, horizon: f64) -> TimeProfile {
        TimeProfile { shape, horizon }
    }

    fn pme(noise: NoiseField, xi: InitialDatum, horizon: f64) -> ProblemSpec {
        let d = BoxDomain::interval(1.0).unwrap();
        let phi = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
        let c = CoefficientSet::new(phi, &noise, &DriftFields::zero(1)).unwrap();
        ProblemSpec::new(d, horizon, c, xi).unwrap()
    }

    #[test]
    fn brackets_match_direct_integration() {
        let g = |s: f64| (2.0 * s).cos() + s;
        let big_g = |s: f64| 0.5 * (2.0 * s).sin() + 0.5 * s * s;
        let phi = DiffusionNonlinearity::pme(2.0, 2.0).unwrap().regularize(16).unwrap();
        for (delta, z, o) in [(0.05, 0.0, Orientation::Plus), (0.2, 0.5, Orientation::Plus), (0.2, 0.5, Orientation::Minus), (0.05, 1.5, Orientation::Minus)] {
            let eta = make_eta(delta, z, o).unwrap();
            let k = eta_bracket(&eta, &big_g);
            let psi = PsiTable::build(&eta, &phi);
            let (t0, t1) = eta.transition();
            for i in 0..=300 {
                let r = -0.5 + 2.5 * i as f64 / 300.0;
                let breaks: Vec<f64> = [t0, t1].into_iter().filter(|b| *b > r.min(0.0) && *b < r.max(0.0)).collect();
                let direct = integrate_with_breaks(|s| g(s) * eta.d1(s), 0.0, r, &breaks, 1e-13).unwrap();
                let fast = antiderivative(&eta, &k, r, big_g(r), &transition_weights(&eta, r)) - k.at_zero;
                assert!((fast - direct).abs() < 1e-10, "{} r={r}: {fast} vs {direct}", eta.label());
                let direct = integrate_with_breaks(|s| phi.phi_prime(s) * eta.d1(s), 0.0, r, &breaks, 1e-13).unwrap();
                let fast = psi.eval(&eta, r, phi.phi(r));
                assert!((fast - direct).abs() < 1e-9, "psi {} r={r}: {fast} vs {direct}", eta.label());
            }
        }
    }

    #[test]
    fn zero_trajectory_has_zero_residual() {
        let noise = NoiseField::linear_gradient(1, [1.0, 1.0], &[0.5, 0.5], Profile::Sine);
        let spec = pme(noise, InitialDatum::zero(), 0.01);
        let path = sample_path(&NoiseSpec::new(2, 50, 0.01, 9, "z").unwrap()).unwrap();
        let traj = solve_path(&spec, 8, &path, &SolverConfig::new(16).recording_all()).unwrap();
        let coeffs = spec.coefficients.regularized(8).unwrap();
        let p = build_partition(&spec.domain, 0.25).unwrap();
        for m in &p.members {
            let pair = EntropyTestPair::new(make_eta(0.1, 0.0, Orientation::Plus).unwrap(), profile(TimeShape::Full, 0.01), m.cutoff.clone()).unwrap();
            let r = entropy_residual(&traj, &path, &pair, &coeffs).unwrap();
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn admissibility_gate() {
        let d = BoxDomain::interval(1.0).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        let bad = make_eta(0.1, 0.5, Orientation::Minus).unwrap();
        assert!(matches!(
            EntropyTestPair::new(bad, profile(TimeShape::Full, 1.0), p.members[1].cutoff.clone()),
            Err(Error::Domain(_))
        ));
        assert!(EntropyTestPair::new(bad, profile(TimeShape::Full, 1.0), p.members[0].cutoff.clone()).is_ok());
        let forged = EntropyTestPair {
            eta: bad,
            time: profile(TimeShape::Full, 1.0),
            cutoff: p.members[2].cutoff.clone(),
            class: TestClass::VanishingSlope,
        };
        let spec = pme(NoiseField::zero(1), InitialDatum::zero(), 0.01);
        let path = NoisePath::zeros(10, 0, 0.001);
        let traj = solve_path(&spec, 8, &path, &SolverConfig::new(16).recording_all()).unwrap();
        let coeffs = spec.coefficients.regularized(8).unwrap();
        assert!(matches!(entropy_residual(&traj, &path, &forged, &coeffs), Err(Error::Domain(_))));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let spec = pme(NoiseField::zero(1), InitialDatum::zero(), 0.01);
        let path = NoisePath::zeros(10, 0, 0.001);
        let coeffs = spec.coefficients.regularized(8).unwrap();
        let sparse = solve_path(&spec, 8, &path, &SolverConfig::new(16)).unwrap();
        let p = build_partition(&spec.domain, 0.25).unwrap();
        let pair = EntropyTestPair::new(make_eta(0.1, 0.0, Orientation::Plus).unwrap(), profile(TimeShape::Full, 0.01), p.members[0].cutoff.clone()).unwrap();
        assert!(matches!(entropy_residual(&sparse, &path, &pair, &coeffs), Err(Error::Domain(_))));
        let full = solve_path(&spec, 8, &path, &SolverConfig::new(16).recording_all()).unwrap();
        let other = NoisePath::zeros(5, 0, 0.002);
        assert!(matches!(entropy_residual(&full, &other, &pair, &coeffs), Err(Error::Domain(_))));
    }

    #[test]
    fn deterministic_heat_residual_is_nonnegative() {
        let d = BoxDomain::interval(1.0).unwrap();
        let phi = DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap();
        let c = CoefficientSet::new(phi, &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
        let spec = ProblemSpec::new(d, 0.05, c, InitialDatum::sine(d, 1.0)).unwrap();
        let path = NoisePath::zeros(500, 0, 1e-4);
        let traj = solve_path(&spec, 4, &path, &SolverConfig::new(256).recording_all()).unwrap();
        let coeffs = spec.coefficients.regularized(4).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        for m in &p.members {
            for z in [0.0, 0.5] {
                let eta = make_eta(0.05, z, Orientation::Plus).unwrap();
                let pair = EntropyTestPair::new(eta, profile(TimeShape::Full, 0.05), m.cutoff.clone()).unwrap();
                let ev = ResidualEvaluator::new(&traj.grid, &coeffs, &[pair], ResidualOptions::default()).unwrap();
                let t = ev.evaluate(&traj, &path).unwrap()[0];
                assert!(t.residual() >= -1e-6, "{t:?}");
                assert_eq!(t.stochastic, 0.0);
                assert!((t.rhs() - t.lhs - t.residual()).abs() < 1e-9 * (1.0 + t.lhs.abs()));
            }
        }
    }

    #[test]
    fn central_difference_variant_agrees_to_leading_order() {
        let d = BoxDomain::interval(1.0).unwrap();
        let spec = pme(NoiseField::zero(1), InitialDatum::sine(d, 1.0), 0.02);
        let path = NoisePath::zeros(200, 0, 1e-4);
        let traj = solve_path(&spec, 16, &path, &SolverConfig::new(64).recording_all()).unwrap();
        let coeffs = spec.coefficients.regularized(16).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        let pair = EntropyTestPair::new(make_eta(0.2, 0.25, Orientation::Plus).unwrap(), profile(TimeShape::Full, 0.02), p.members[0].cutoff.clone()).unwrap();
        let a = ResidualEvaluator::new(&traj.grid, &coeffs, std::slice::from_ref(&pair), ResidualOptions::default()).unwrap().evaluate(&traj, &path).unwrap()[0];
        let opts = ResidualOptions { dissipation: DissipationForm::CentralDifference, ..Default::default() };
        let b = ResidualEvaluator::new(&traj.grid, &coeffs, &[pair], opts).unwrap().evaluate(&traj, &path).unwrap()[0];
        assert!(a.residual() >= -1e-9);
        let (sa, sb) = (a.diffusion + a.dissipation, b.diffusion + b.dissipation);
        assert!((sa - sb).abs() < 0.05 * sa.abs(), "{a:?} {b:?}");
        assert_eq!(a.lhs, b.lhs);
    }

    #[test]
    fn stochastic_run_residual_is_finite_and_small() {
        let d = BoxDomain::interval(1.0).unwrap();
        let noise = NoiseField::linear_gradient(1, [1.0, 1.0], &[0.5, 0.5], Profile::Sine);
        let spec = pme(noise, InitialDatum::sine(d, 1.0), 0.01);
        let cfg = SolverConfig::new(32).recording_all();
        let steps = cfg.default_steps(&spec).unwrap();
        let path = sample_path(&NoiseSpec::new(2, steps, 0.01, 4, "st").unwrap()).unwrap();
        let traj = solve_path(&spec, 16, &path, &cfg).unwrap();
        let coeffs = spec.coefficients.regularized(16).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        let pair = EntropyTestPair::new(make_eta(0.2, 0.0, Orientation::Plus).unwrap(), profile(TimeShape::Full, 0.01), p.members[1].cutoff.clone()).unwrap();
        let ev = ResidualEvaluator::new(&traj.grid, &coeffs, &[pair], ResidualOptions::default()).unwrap();
        let t = ev.evaluate(&traj, &path).unwrap()[0];
        assert!(t.residual().is_finite());
        assert!(t.stochastic != 0.0);
        assert!(t.residual().abs() < 0.1 * t.initial.abs().max(1e-3), "{t:?}");
    }
}
