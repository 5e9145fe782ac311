//! Sampled checks of the structural assumptions on `Phi`, the coefficients and
//! the zero condition. Verdicts are reported, never enforced.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::fields::Point;
use crate::model::nonlinearity::DiffusionNonlinearity;
use crate::model::problem::{BoxDomain, ProblemSpec};

/// Sample lattice in `D x [-R, R]`.
#[derive(Debug, Clone)]
pub struct ProbeGrid {
    pub xs: Vec<Point>,
    pub rs: Vec<f64>,
}

impl ProbeGrid {
    pub fn new(xs: Vec<Point>, rs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || rs.is_empty() {
            return Err(Error::Domain("probe grid must be nonempty".into()));
        }
        Ok(Self { xs, rs })
    }

    /// `per_axis` interior points per axis, `2 r_count + 1` values in `[-r_max, r_max]`.
    pub fn lattice(domain: &BoxDomain, per_axis: usize, r_max: f64, r_count: usize) -> Result<Self> {
        let axis = |i: usize| -> Vec<f64> {
            (0..per_axis).map(|p| domain.lengths[i] * (p as f64 + 0.5) / per_axis as f64).collect()
        };
        let xs = if domain.dim == 1 {
            axis(0).into_iter().map(|x| [x, 0.0]).collect()
        } else {
            let (a, b) = (axis(0), axis(1));
            a.iter().flat_map(|&x| b.iter().map(move |&y| [x, y])).collect()
        };
        let rs = (0..=2 * r_count).map(|i| r_max * (i as f64 - r_count as f64) / r_count.max(1) as f64).collect();
        Self::new(xs, rs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

/// One checked quantity: the empirical value, the bound it is compared to, and where it was worst.
#[derive(Debug, Clone)]
pub struct Check {
    pub assumption: &'static str,
    pub name: String,
    pub verdict: Verdict,
    pub empirical: f64,
    pub bound: f64,
    pub worst_x: Option<Point>,
    pub worst_r: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn verdict(&self, assumption: &str) -> Verdict {
        Verdict::from_bool(self.checks.iter().filter(|c| c.assumption == assumption).all(|c| c.verdict == Verdict::Pass))
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.verdict == Verdict::Fail).collect()
    }

    /// Line-oriented text: one `key=value` record per check, whitespace-separated,
    /// `-` for absent fields, notes percent-encoded for spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# validation v1\n");
        for c in &self.checks {
            let x = c.worst_x.map(|p| format!("{},{}", p[0], p[1])).unwrap_or_else(|| "-".into());
            let r = c.worst_r.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "assumption={} check={} verdict={} empirical={} bound={} worst_x={} worst_r={} note={}",
                c.assumption,
                c.name,
                c.verdict.as_str(),
                c.empirical,
                c.bound,
                x,
                r,
                if c.note.is_empty() { "-".to_string() } else { c.note.replace(' ', "%20") }
            );
        }
        s
    }
}

pub const PHI: &str = "phi";
pub const COEFFICIENTS: &str = "coefficients";
pub const ZERO_CONDITION: &str = "zero-condition";

struct Worst {
    value: f64,
    x: Option<Point>,
    r: Option<f64>,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, x: None, r: None }
    }
    fn push(&mut self, v: f64, x: Option<Point>, r: f64) {
        if !(v <= self.value) {
            self.value = v;
            self.x = x;
            self.r = Some(r);
        }
    }
}

fn check(assumption: &'static str, name: &str, w: Worst, bound: f64, ok: bool, note: &str) -> Check {
    Check {
        assumption,
        name: name.into(),
        verdict: Verdict::from_bool(ok),
        empirical: w.value,
        bound,
        worst_x: w.x,
        worst_r: w.r,
        note: note.into(),
    }
}

/// Checks on `Phi` alone: invariants and the four bounds with constant `K`.
pub fn validate_phi(phi: &DiffusionNonlinearity, rs: &[f64]) -> Vec<Check> {
    let (m, k) = (phi.m(), phi.k());
    let mut out = Vec::new();

    let mut w = Worst::new();
    w.push(phi.phi(0.0).abs(), None, 0.0);
    out.push(check(PHI, "phi(0)=0", w, 0.0, phi.phi(0.0) == 0.0, ""));

    let mut sorted = rs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let mut w = Worst::new();
    let mut mono = true;
    for p in sorted.windows(2) {
        let d = phi.phi(p[1]) - phi.phi(p[0]);
        if !(d > 0.0) {
            mono = false;
            w.push(-d, None, p[0]);
        }
    }
    out.push(check(PHI, "strictly-increasing", w, 0.0, mono, ""));

    let mut w = Worst::new();
    let mut ok = true;
    for &r in &sorted {
        let h = 1e-7;
        let fd = (phi.phi(r + h) - phi.phi(r - h)) / (2.0 * h);
        let a2 = phi.a(r).powi(2);
        let tol = 1e-6 * (1.0 + a2.abs());
        let e = (fd - a2).abs();
        w.push(e, None, r);
        ok &= e <= tol;
    }
    out.push(check(PHI, "a^2=phi'", w, 1e-6, ok, "relative to 1+a^2"));

    let mut w = Worst::new();
    w.push(phi.a(0.0).abs(), None, 0.0);
    let ok = w.value <= k;
    out.push(check(PHI, "|a(0)|<=K", w, k, ok, ""));

    let mut w = Worst::new();
    for &r in sorted.iter().filter(|r| **r != 0.0) {
        w.push(phi.a_prime(r).abs() / r.abs().powf(0.5 * (m - 3.0)), None, r);
    }
    let ok = w.value <= k;
    out.push(check(PHI, "|a'(r)|<=K|r|^((m-3)/2)", w, k, ok, "empirical K"));

    let mut w = Worst::new();
    for &r in sorted.iter().filter(|r| r.abs() >= 1.0) {
        w.push(1.0 / phi.a(r), None, r);
    }
    let ok = w.value <= k;
    out.push(check(PHI, "a(r)>=1/K for |r|>=1", w, k, ok, "empirical K"));

    let brackets: Vec<f64> = sorted.iter().map(|&r| phi.bracket_a(r)).collect();
    let mut w = Worst::new();
    for i in 0..sorted.len() {
        for j in 0..i {
            let (r, s) = (sorted[i], sorted[j]);
            let diff = (brackets[i] - brackets[j]).abs();
            let p = if r.abs().max(s.abs()) >= 1.0 { 1.0 } else { 0.5 * (m + 1.0) };
            let need = (r - s).abs().powf(p);
            let ratio = if diff > 0.0 { need / diff } else { f64::INFINITY };
            w.push(ratio, None, r);
        }
    }
    let ok = w.value <= k;
    out.push(check(PHI, "|[[a]](r)-[[a]](s)| lower bound", w, k, ok, "empirical K"));
    out
}

/// Full sampled validation of a problem.
pub fn validate_assumptions(spec: &ProblemSpec, probe: &ProbeGrid) -> ValidationReport {
    let mut checks = validate_phi(&spec.coefficients.phi, &probe.rs);
    let ito = &spec.coefficients.ito;
    let dim = ito.dim();
    let modes = ito.modes();

    // coefficient bounds: report sampled sups as candidates for N_0
    let mut s_r = Worst::new();
    let mut s_rx = Worst::new();
    let mut s_rr = Worst::new();
    let mut holder = Worst::new();
    let mut g_r = Worst::new();
    let mut g_rx = Worst::new();
    let mut f_r = Worst::new();
    let mut gram = Worst::new();
    let mut finite = true;
    for &x in &probe.xs {
        for (idx, &r) in probe.rs.iter().enumerate() {
            let mut l2 = [0.0; 4];
            for k in 0..modes {
                let m = &ito.noise().modes()[k];
                let sr = m.d_r(x, r);
                let srr = m.d_rr(x, r);
                l2[0] += sr[0] * sr[0] + sr[1] * sr[1];
                l2[2] += srr[0] * srr[0] + srr[1] * srr[1];
                for j in 0..dim {
                    let v = m.d_rx(j, x, r);
                    l2[1] += v[0] * v[0] + v[1] * v[1];
                }
                if idx > 0 {
                    let rp = probe.rs[idx - 1];
                    let (a, b) = (m.value(x, r), m.value(x, rp));
                    if r != rp {
                        l2[3] += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / (r - rp).powi(2);
                    }
                }
            }
            s_r.push(l2[0].sqrt(), Some(x), r);
            s_rx.push(l2[1].sqrt(), Some(x), r);
            s_rr.push(l2[2].sqrt(), Some(x), r);
            holder.push(l2[3].sqrt(), Some(x), r);
            let g = &ito.drift().g;
            let gr = g.d_r(x, r);
            g_r.push(gr[0].abs().max(gr[1].abs()), Some(x), r);
            for j in 0..dim {
                let v = g.d_rx(j, x, r);
                g_rx.push(v[0].abs().max(v[1].abs()), Some(x), r);
            }
            f_r.push(ito.drift().f.d_r(x, r).abs(), Some(x), r);
            let a = ito.a(x, r);
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let lmin = 0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt();
            gram.push(-lmin, Some(x), r);
            finite &= ito.check_at(x, r).is_ok();
        }
    }
    let cap = 1e8;
    for (name, w, note) in [
        ("sup|sigma_r|", s_r, "N0 candidate"),
        ("sup|sigma_rx|", s_rx, "N0 candidate"),
        ("sup|sigma_rr|", s_rr, "N0 candidate"),
        ("[sigma(x,.)]_Lip", holder, "sampled seminorm is a lower bound"),
        ("sup|G_r|", g_r, "N0 candidate"),
        ("sup|G_rx|", g_rx, "N0 candidate"),
        ("sup|F_r|", f_r, "N0 candidate"),
    ] {
        let ok = w.value.is_finite() && w.value <= cap && finite;
        checks.push(check(COEFFICIENTS, name, w, cap, ok, note));
    }
    let ok = gram.value <= 1e-12;
    checks.push(check(COEFFICIENTS, "a^ij positive semidefinite", gram, 1e-12, ok, "minus smallest eigenvalue"));

    // zero condition
    let tol = 1e-10;
    let mut drift0 = Worst::new();
    let mut noise0 = Worst::new();
    for &x in &probe.xs {
        let v = ito.drift().g.div_x(dim, x, 0.0) + ito.drift().f.value(x, 0.0);
        drift0.push(-v, Some(x), 0.0);
        for k in 0..modes {
            noise0.push(ito.sigma_div(k, x, 0.0).abs(), Some(x), 0.0);
        }
    }
    let ok = drift0.value <= tol;
    checks.push(check(ZERO_CONDITION, "div G(x,0)+F(x,0)>=0", drift0, tol, ok, "worst negative part"));
    let ok = noise0.value <= tol;
    checks.push(check(ZERO_CONDITION, "div sigma(x,0)=0", noise0, tol, ok, ""));

    ValidationReport { checks }
}
