//! The diffusion nonlinearity `Phi`, its root-derivative `a = sqrt(Phi')` and
//! the non-degenerate regularizations `Phi_n`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::quadrature;

/// Fritsch-Carlson monotone cubic interpolant through `(x_i, y_i)`.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::Config("tabulated nonlinearity needs at least two matching nodes".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("tabulated nodes must be strictly increasing".into()));
        }
        if y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("tabulated values must be strictly increasing".into()));
        }
        let n = x.len();
        let secant: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slope = vec![0.0; n];
        slope[0] = secant[0];
        slope[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            slope[i] = 0.5 * (secant[i - 1] + secant[i]);
        }
        for i in 0..n - 1 {
            let alpha = slope[i] / secant[i];
            let beta = slope[i + 1] / secant[i];
            let s = alpha * alpha + beta * beta;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                slope[i] = tau * alpha * secant[i];
                slope[i + 1] = tau * beta * secant[i];
            }
        }
        Ok(Self { x, y, slope })
    }

    fn segment(&self, r: f64) -> usize {
        match self.x.partition_point(|&v| v <= r) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        }
    }

    /// Value and derivative; linear extension by the end slopes outside the nodes.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let n = self.x.len();
        if r <= self.x[0] {
            return (self.y[0] + self.slope[0] * (r - self.x[0]), self.slope[0]);
        }
        if r >= self.x[n - 1] {
            return (self.y[n - 1] + self.slope[n - 1] * (r - self.x[n - 1]), self.slope[n - 1]);
        }
        let i = self.segment(r);
        let h = self.x[i + 1] - self.x[i];
        let t = (r - self.x[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v = h00 * self.y[i] + h10 * h * self.slope[i] + h01 * self.y[i + 1] + h11 * h * self.slope[i + 1];
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let d = d00 * self.y[i] + d10 * self.slope[i] + d01 * self.y[i + 1] + d11 * self.slope[i + 1];
        (v, d.max(0.0))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }
}

/// Piecewise-linear `a_n` on a two-tier grid with exact primitives of `a_n` and `a_n^2`.
#[derive(Debug)]
pub struct RegularizedTable {
    fine_half_width: f64,
    fine_step: f64,
    coarse_step: f64,
    outer: f64,
    nodes: Vec<f64>,
    a: Vec<f64>,
    phi: Vec<f64>,
    bracket: Vec<f64>,
    fine_start: usize,
    fine_count: usize,
    mollifier_width: f64,
    level: u32,
}

impl RegularizedTable {
    fn locate(&self, r: f64) -> usize {
        let last = self.nodes.len() - 2;
        let idx = if r < -self.fine_half_width {
            ((r + self.outer) / self.coarse_step).floor() as isize
        } else if r < self.fine_half_width {
            self.fine_start as isize + ((r + self.fine_half_width) / self.fine_step).floor() as isize
        } else {
            (self.fine_start + self.fine_count) as isize
                + ((r - self.fine_half_width) / self.coarse_step).floor() as isize
        };
        let mut i = idx.clamp(0, last as isize) as usize;
        // guard against rounding at section seams
        while i > 0 && self.nodes[i] > r {
            i -= 1;
        }
        while i < last && self.nodes[i + 1] <= r {
            i += 1;
        }
        i
    }

    /// (a_n, Phi_n, [[a_n]]) at r.
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        let n = self.nodes.len();
        if r <= self.nodes[0] {
            let d = r - self.nodes[0];
            let a = self.a[0];
            return (a, self.phi[0] + a * a * d, self.bracket[0] + a * d);
        }
        if r >= self.nodes[n - 1] {
            let d = r - self.nodes[n - 1];
            let a = self.a[n - 1];
            return (a, self.phi[n - 1] + a * a * d, self.bracket[n - 1] + a * d);
        }
        let i = self.locate(r);
        let d = r - self.nodes[i];
        let s = (self.a[i + 1] - self.a[i]) / (self.nodes[i + 1] - self.nodes[i]);
        let ai = self.a[i];
        let a = ai + s * d;
        let phi = self.phi[i] + ai * ai * d + ai * s * d * d + s * s * d * d * d / 3.0;
        let br = self.bracket[i] + ai * d + 0.5 * s * d * d;
        (a, phi, br)
    }

    pub fn max_a(&self) -> f64 {
        self.a.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mollifier_width(&self) -> f64 {
        self.mollifier_width
    }
    pub fn coarse_step(&self) -> f64 {
        self.coarse_step
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// Phi(u) = u |u|^(m-1)
    Pme,
    /// Phi(u) = eps u
    Linear { eps: f64 },
    Tabulated(Arc<MonotoneCubic>),
    Regularized { base: Box<DiffusionNonlinearity>, table: Arc<RegularizedTable> },
}

/// `Phi` together with `a = sqrt(Phi')`, the exponent `m` and constant `K`.
#[derive(Debug, Clone)]
pub struct DiffusionNonlinearity {
    kind: Kind,
    m: f64,
    k: f64,
}

impl DiffusionNonlinearity {
    /// Porous medium nonlinearity `Phi(u) = u |u|^(m-1)`.
    pub fn pme(m: f64, k: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::Config(format!("pme exponent m must be > 1, got {m}")));
        }
        Self::checked(Kind::Pme, m, k)
    }

    /// Linear diffusion `Phi(u) = eps u`.
    pub fn linear(eps: f64, m: f64, k: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Config(format!("linear diffusivity must be > 0, got {eps}")));
        }
        Self::checked(Kind::Linear { eps }, m, k)
    }

    /// Tabulated `Phi` through strictly increasing nodes, monotone cubic in between.
    pub fn tabulated(r: Vec<f64>, phi: Vec<f64>, m: f64, k: f64) -> Result<Self> {
        let cubic = MonotoneCubic::new(r, phi)?;
        if cubic.eval(0.0).0.abs() > 1e-12 {
            return Err(Error::Config("tabulated Phi must vanish at 0".into()));
        }
        Self::checked(Kind::Tabulated(Arc::new(cubic)), m, k)
    }

    fn checked(kind: Kind, m: f64, k: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::Config(format!("exponent m must be > 1, got {m}")));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Config(format!("assumption constant K must be > 0, got {k}")));
        }
        Ok(Self { kind, m, k })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.kind, Kind::Tabulated(_) | Kind::Regularized { .. })
    }

    /// Regularization level `n` for `Phi_n`, if any.
    pub fn regularization_level(&self) -> Option<u32> {
        match &self.kind {
            Kind::Regularized { table, .. } => Some(table.level),
            _ => None,
        }
    }

    pub fn table(&self) -> Option<&RegularizedTable> {
        match &self.kind {
            Kind::Regularized { table, .. } => Some(table),
            _ => None,
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        match &self.kind {
            Kind::Pme => r * r.abs().powf(self.m - 1.0),
            Kind::Linear { eps } => eps * r,
            Kind::Tabulated(c) => c.eval(r).0,
            Kind::Regularized { table, .. } => table.eval(r).1,
        }
    }

    /// `Phi'(r) = a(r)^2`.
    pub fn phi_prime(&self, r: f64) -> f64 {
        let a = self.a(r);
        a * a
    }

    /// (Phi(r), Phi'(r)) in one lookup.
    pub fn phi_and_derivative(&self, r: f64) -> (f64, f64) {
        match &self.kind {
            Kind::Regularized { table, .. } => {
                let (a, phi, _) = table.eval(r);
                (phi, a * a)
            }
            _ => (self.phi(r), self.phi_prime(r)),
        }
    }

    /// `a(r) = sqrt(Phi'(r))`; exact at r = 0 for the closed-form families.
    pub fn a(&self, r: f64) -> f64 {
        match &self.kind {
            Kind::Pme => {
                if r == 0.0 {
                    0.0
                } else {
                    self.m.sqrt() * r.abs().powf(0.5 * (self.m - 1.0))
                }
            }
            Kind::Linear { eps } => eps.sqrt(),
            Kind::Tabulated(c) => c.eval(r).1.sqrt(),
            Kind::Regularized { table, .. } => table.eval(r).0,
        }
    }

    /// Derivative `a'(r)` for `r != 0` (closed form or central difference).
    pub fn a_prime(&self, r: f64) -> f64 {
        match &self.kind {
            Kind::Pme => {
                if r == 0.0 {
                    return f64::INFINITY;
                }
                let e = 0.5 * (self.m - 1.0);
                self.m.sqrt() * e * r.abs().powf(e - 1.0) * r.signum()
            }
            Kind::Linear { .. } => 0.0,
            _ => {
                let h = 1e-6 * (1.0 + r.abs()).min(r.abs().max(1e-9));
                (self.a(r + h) - self.a(r - h)) / (2.0 * h)
            }
        }
    }

    /// `[[a]](r) = int_0^r a(s) ds`.
    pub fn bracket_a(&self, r: f64) -> f64 {
        match &self.kind {
            Kind::Pme => {
                let p = 0.5 * (self.m + 1.0);
                self.m.sqrt() * r.signum() * r.abs().powf(p) / p
            }
            Kind::Linear { eps } => eps.sqrt() * r,
            Kind::Regularized { table, .. } => table.eval(r).2,
            Kind::Tabulated(c) => {
                let breaks: Vec<f64> = c.nodes().to_vec();
                quadrature::integrate_with_breaks(|s| self.a(s), 0.0, r, &breaks, quadrature::default_tolerance(r))
                    .unwrap_or(f64::NAN)
            }
        }
    }

    /// Non-degenerate regularization `Phi_n` with `a_n >= 2/n` and
    /// `sup_{|r| <= n} |a - a_n| <= 4/n`.
    ///
    /// `a_n` is `max(a, 2/n)` convolved with a smooth symmetric kernel of width
    /// `1/n^2`, blended to a constant for `|r| > n + 1`, and sampled on a
    /// two-tier grid (fine near the origin) with linear interpolation;
    /// `Phi_n` and `[[a_n]]` are the exact primitives of the interpolant.
    pub fn regularize(&self, n: u32) -> Result<DiffusionNonlinearity> {
        if n == 0 {
            return Err(Error::Domain("regularization level n must be >= 1".into()));
        }
        let base = match &self.kind {
            Kind::Regularized { base, .. } => base.as_ref().clone(),
            _ => self.clone(),
        };
        let nf = n as f64;
        let floor = 2.0 / nf;
        let width = 1.0 / (nf * nf);
        let outer = nf + 2.0;
        let fine_half_width = 1.0f64.min(outer);
        let fine_count = (2.0 * fine_half_width / (width / 8.0)).ceil() as usize;
        let fine_step = 2.0 * fine_half_width / fine_count as f64;
        let coarse_span = outer - fine_half_width;
        let coarse_count = ((coarse_span / 1e-3).ceil() as usize).max(1);
        let coarse_step = coarse_span / coarse_count as f64;

        let mut nodes = Vec::with_capacity(fine_count + 2 * coarse_count + 1);
        for i in 0..coarse_count {
            nodes.push(-outer + i as f64 * coarse_step);
        }
        let fine_start = nodes.len();
        for i in 0..fine_count {
            nodes.push(-fine_half_width + i as f64 * fine_step);
        }
        for i in 0..=coarse_count {
            nodes.push(fine_half_width + i as f64 * coarse_step);
        }

        let (gl_x, gl_w) = quadrature::gauss_legendre(32);
        let kernel: Vec<f64> = gl_x.iter().map(|&t| bump(t)).collect();
        let norm: f64 = kernel.iter().zip(&gl_w).map(|(k, w)| k * w).sum();
        let clipped = |s: f64| base.a(s).max(floor);
        let mollified = |r: f64| -> f64 {
            let mut acc = 0.0;
            for ((&t, &k), &w) in gl_x.iter().zip(&kernel).zip(&gl_w) {
                acc += w * k * clipped(r + 0.5 * width * t);
            }
            (acc / norm).max(floor)
        };
        let edge_lo = mollified(-(nf + 1.0));
        let edge_hi = mollified(nf + 1.0);
        let a: Vec<f64> = nodes
            .iter()
            .map(|&r| {
                let ar = r.abs();
                if ar <= nf + 1.0 {
                    mollified(r)
                } else {
                    let edge = if r < 0.0 { edge_lo } else { edge_hi };
                    let s = smooth_step(ar - (nf + 1.0));
                    ((1.0 - s) * mollified(r) + s * edge).max(floor)
                }
            })
            .collect();
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::Internal(format!("non-finite regularized a_n at r={}", nodes[i])));
        }

        // primitives anchored at r = 0: integrate piecewise from the origin node
        let zero = nodes
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let mut phi = vec![0.0; nodes.len()];
        let mut bracket = vec![0.0; nodes.len()];
        let seg = |i: usize| -> (f64, f64) {
            let d = nodes[i + 1] - nodes[i];
            let (p, q) = (a[i], a[i + 1]);
            (d * (p * p + p * q + q * q) / 3.0, d * 0.5 * (p + q))
        };
        for i in zero..nodes.len() - 1 {
            let (dp, db) = seg(i);
            phi[i + 1] = phi[i] + dp;
            bracket[i + 1] = bracket[i] + db;
        }
        for i in (0..zero).rev() {
            let (dp, db) = seg(i);
            phi[i] = phi[i + 1] - dp;
            bracket[i] = bracket[i + 1] - db;
        }
        let mut table = RegularizedTable {
            fine_half_width,
            fine_step,
            coarse_step,
            outer,
            nodes,
            a,
            phi,
            bracket,
            fine_start,
            fine_count,
            mollifier_width: width,
            level: n,
        };
        // Phi_n(0) = 0 exactly even when 0 is not a node
        let (_, p0, b0) = table.eval(0.0);
        for v in table.phi.iter_mut() {
            *v -= p0;
        }
        for v in table.bracket.iter_mut() {
            *v -= b0;
        }
        let out = DiffusionNonlinearity {
            kind: Kind::Regularized { base: Box::new(base.clone()), table: Arc::new(table) },
            m: self.m,
            k: 3.0 * self.k,
        };
        let probe = regularization_probe(&base, &out, n);
        if probe.min_a < floor * (1.0 - 1e-12) {
            return Err(Error::Internal(format!("a_n fell below 2/n: {}", probe.min_a)));
        }
        if probe.sup_error > 4.0 / nf {
            return Err(Error::Internal(format!("sup |a - a_n| = {} exceeds 4/n", probe.sup_error)));
        }
        Ok(out)
    }
}

/// Outcome of probing `a_n` against `a` on `|r| <= n` at spacing `1/(10 n)`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizationProbe {
    pub sup_error: f64,
    pub min_a: f64,
    pub max_phi_prime: f64,
}

pub fn regularization_probe(base: &DiffusionNonlinearity, reg: &DiffusionNonlinearity, n: u32) -> RegularizationProbe {
    probe_on(base, reg, n as f64, 1.0 / (10.0 * n as f64))
}

/// Probe `sup_{|r| <= radius} |a - a_n|` and `min a_n` on a lattice of the given spacing.
pub fn probe_on(base: &DiffusionNonlinearity, reg: &DiffusionNonlinearity, radius: f64, spacing: f64) -> RegularizationProbe {
    let steps = (radius / spacing).ceil() as i64;
    let mut sup_error: f64 = 0.0;
    let mut min_a = f64::INFINITY;
    let mut max_pp: f64 = 0.0;
    for i in -steps..=steps {
        let r = (i as f64 * spacing).clamp(-radius, radius);
        let an = reg.a(r);
        sup_error = sup_error.max((base.a(r) - an).abs());
        min_a = min_a.min(an);
        max_pp = max_pp.max(an * an);
    }
    if let Some(t) = reg.table() {
        max_pp = max_pp.max(t.max_a().powi(2));
    }
    RegularizationProbe { sup_error, min_a, max_phi_prime: max_pp }
}

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// C-infinity step from 0 (t <= 0) to 1 (t >= 1).
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let f = |s: f64| (-1.0 / s).exp();
    let a = f(t);
    let b = f(1.0 - t);
    a / (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pme_closed_forms() {
        let p = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
        assert_eq!(p.phi(-3.0), -9.0);
        assert_eq!(p.a(0.0), 0.0);
        assert!((p.a(0.5) - 1.0).abs() < 1e-15);
        assert!((p.bracket_a(1.0) - 2.0 * 2f64.sqrt() / 3.0).abs() < 1e-15);
        let q = quadrature::bracket_integral(|_, s| p.a(s), [0.0; 2], 1.0).unwrap();
        assert!((q - p.bracket_a(1.0)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(DiffusionNonlinearity::pme(1.0, 1.0).is_err());
        assert!(DiffusionNonlinearity::pme(2.0, 0.0).is_err());
    }

    #[test]
    fn regularized_pme_meets_floor_and_sup_bound() {
        let p = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
        let r10 = p.regularize(10).unwrap();
        assert!(r10.a(0.0) >= 0.2);
        assert!((p.a(4.0) - r10.a(4.0)).abs() <= 0.4);
        assert_eq!(r10.phi(0.0), 0.0);
        assert_eq!(r10.regularization_level(), Some(10));
        assert!((r10.k() - 6.0).abs() < 1e-15);
    }

    #[test]
    fn regularized_primitives_are_consistent() {
        let p = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
        let r = p.regularize(8).unwrap();
        for &x in &[-3.0, -0.3, 0.01, 0.7, 2.5, 11.0] {
            let q = quadrature::integrate(|s| r.phi_prime(s), 0.0, x, 1e-9).unwrap();
            assert!((q - r.phi(x)).abs() < 1e-6, "x={x}: {q} vs {}", r.phi(x));
            let b = quadrature::integrate(|s| r.a(s), 0.0, x, 1e-9).unwrap();
            assert!((b - r.bracket_a(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_regularization_is_identity() {
        let l = DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap();
        for n in [2, 5, 16] {
            let ln = l.regularize(n).unwrap();
            for &x in &[-50.0, -1.0, 0.0, 0.3, 4.0, 80.0] {
                assert!((ln.phi(x) - x).abs() < 1e-12 * (1.0 + x.abs()), "n={n} x={x}");
                assert!((ln.a(x) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn regularization_chain_rate() {
        let p = DiffusionNonlinearity::pme(2.0, 2.0).unwrap();
        let mut last = f64::INFINITY;
        for n in [4u32, 8, 16, 32] {
            let r = p.regularize(n).unwrap();
            let e = probe_on(&p, &r, 4.0, 1.0 / (10.0 * n as f64)).sup_error;
            assert!(e <= 4.0 / n as f64);
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn monotone_cubic_is_monotone() {
        let c = MonotoneCubic::new(vec![-1.0, 0.0, 0.2, 3.0], vec![-1.0, 0.0, 0.01, 9.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let r = -1.0 + 4.0 * i as f64 / 400.0;
            let (v, d) = c.eval(r);
            assert!(v >= prev);
            assert!(d >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }
}
