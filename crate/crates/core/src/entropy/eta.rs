//! The base mollifier `rho` and the smoothed Kruzhkov entropies `eta_delta`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::quadrature::gauss_legendre;

/// Support of `rho` is `[RHO_LO, RHO_HI]`, strictly inside `(0, 1)`.
pub const RHO_LO: f64 = 1.0 / 16.0;
pub const RHO_HI: f64 = 15.0 / 16.0;
const HALF_WIDTH: f64 = 0.5 - RHO_LO;
const TABLE_CELLS: usize = 1024;
/// Number of Chebyshev moments tabulated for `rho`.
pub const CHEB_TERMS: usize = 13;

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

fn bump_prime(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        -2.0 * s / (q * q) * bump(s)
    }
}

struct Tables {
    norm: f64,
    cdf: Vec<f64>,
    prim: Vec<f64>,
    rho: Vec<f64>,
    drho: Vec<f64>,
    /// `int_{1/16}^t T_k(w(s)) rho(s) ds`, `w(s) = (s - 1/2) / (7/16)`, row-major by node.
    cheb: Vec<[f64; CHEB_TERMS]>,
}

/// `T_k(w)` and `T_k'(w)` for `k < CHEB_TERMS`.
fn chebyshev(w: f64) -> ([f64; CHEB_TERMS], [f64; CHEB_TERMS]) {
    let mut t = [0.0; CHEB_TERMS];
    let mut u = [0.0; CHEB_TERMS];
    t[0] = 1.0;
    t[1] = w;
    u[0] = 1.0;
    u[1] = 2.0 * w;
    for k in 2..CHEB_TERMS {
        t[k] = 2.0 * w * t[k - 1] - t[k - 2];
        u[k] = 2.0 * w * u[k - 1] - u[k - 2];
    }
    let mut dt = [0.0; CHEB_TERMS];
    for k in 1..CHEB_TERMS {
        dt[k] = k as f64 * u[k - 1];
    }
    (t, dt)
}

/// Chebyshev nodes of the moment basis, as points of `[1/16, 15/16]`.
pub fn chebyshev_nodes() -> [f64; CHEB_TERMS] {
    let mut out = [0.0; CHEB_TERMS];
    for (j, o) in out.iter_mut().enumerate() {
        let w = (std::f64::consts::PI * (j as f64 + 0.5) / CHEB_TERMS as f64).cos();
        *o = 0.5 + HALF_WIDTH * w;
    }
    out
}

/// Coefficients `c` with `f(t) ~ sum_k c_k T_k(w(t))` from samples at `chebyshev_nodes`.
pub fn chebyshev_fit(samples: &[f64; CHEB_TERMS]) -> [f64; CHEB_TERMS] {
    let mut c = [0.0; CHEB_TERMS];
    let n = CHEB_TERMS as f64;
    for (j, f) in samples.iter().enumerate() {
        let w = (std::f64::consts::PI * (j as f64 + 0.5) / n).cos();
        let (t, _) = chebyshev(w);
        for k in 0..CHEB_TERMS {
            c[k] += 2.0 / n * f * t[k];
        }
    }
    c[0] *= 0.5;
    c
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let (gx, gw) = gauss_legendre(24);
        let raw_integral = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            gx.iter().zip(&gw).map(|(x, w)| w * r * f(m + r * x)).sum()
        };
        let raw = |t: f64| bump((t - 0.5) / HALF_WIDTH);
        let h = (RHO_HI - RHO_LO) / TABLE_CELLS as f64;
        let mut cdf = vec![0.0; TABLE_CELLS + 1];
        let mut first = vec![0.0; TABLE_CELLS + 1];
        for i in 0..TABLE_CELLS {
            let (a, b) = (RHO_LO + i as f64 * h, RHO_LO + (i + 1) as f64 * h);
            cdf[i + 1] = cdf[i] + raw_integral(a, b, &raw);
            first[i + 1] = first[i] + raw_integral(a, b, &|t| t * raw(t));
        }
        let norm = cdf[TABLE_CELLS];
        // P(t) = t C(t) - int_0^t s rho(s) ds
        let prim = (0..=TABLE_CELLS)
            .map(|i| {
                let t = RHO_LO + i as f64 * h;
                (t * cdf[i] - first[i]) / norm
            })
            .collect();
        let cdf = cdf.iter().map(|c| c / norm).collect();
        let nodes: Vec<f64> = (0..=TABLE_CELLS).map(|i| RHO_LO + i as f64 * h).collect();
        let rho = nodes.iter().map(|t| raw(*t) / norm).collect();
        let drho = nodes.iter().map(|t| bump_prime((t - 0.5) / HALF_WIDTH) / (HALF_WIDTH * norm)).collect();
        let mut cheb = vec![[0.0; CHEB_TERMS]; TABLE_CELLS + 1];
        for i in 0..TABLE_CELLS {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = cheb[i];
            for (x, w) in gx.iter().zip(&gw) {
                let t = m + r * x;
                let (tk, _) = chebyshev((t - 0.5) / HALF_WIDTH);
                let weight = w * r * raw(t) / norm;
                for k in 0..CHEB_TERMS {
                    acc[k] += weight * tk[k];
                }
            }
            cheb[i + 1] = acc;
        }
        Tables { norm, cdf, prim, rho, drho, cheb }
    })
}

/// The mollifier: a normalized bump, smooth, `supp rho = [1/16, 15/16]`, `max rho < 2`.
pub fn rho(t: f64) -> f64 {
    bump((t - 0.5) / HALF_WIDTH) / tables().norm
}

pub fn rho_prime(t: f64) -> f64 {
    bump_prime((t - 0.5) / HALF_WIDTH) / (HALF_WIDTH * tables().norm)
}

/// Quintic Hermite interpolation on `[0, 1]` from value, slope, curvature at both ends.
fn quintic(s: f64, h: f64, f0: [f64; 3], f1: [f64; 3]) -> f64 {
    let (s2, s3) = (s * s, s * s * s);
    let (s4, s5) = (s3 * s, s3 * s2);
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 0.5 * (s3 - 2.0 * s4 + s5);
    f0[0] * h0 + h * f0[1] * h1 + h * h * f0[2] * h2 + f1[0] * h3 + h * f1[1] * h4 + h * h * f1[2] * h5
}

fn locate(t: f64) -> (usize, f64, f64) {
    let h = (RHO_HI - RHO_LO) / TABLE_CELLS as f64;
    let x = (t - RHO_LO) / h;
    let i = (x.floor() as usize).min(TABLE_CELLS - 1);
    (i, x - i as f64, h)
}

/// `C(t) = int_0^t rho`.
pub fn rho_cdf(t: f64) -> f64 {
    if t <= RHO_LO {
        return 0.0;
    }
    if t >= RHO_HI {
        return 1.0;
    }
    let tb = tables();
    let (i, s, h) = locate(t);
    quintic(s, h, [tb.cdf[i], tb.rho[i], tb.drho[i]], [tb.cdf[i + 1], tb.rho[i + 1], tb.drho[i + 1]])
}

/// `P(t) = int_0^t C`; `P(t) = t - 1/2` for `t >= 15/16` (`rho` is symmetric about 1/2).
pub fn rho_second_primitive(t: f64) -> f64 {
    if t <= RHO_LO {
        return 0.0;
    }
    let tb = tables();
    if t >= RHO_HI {
        return tb.prim[TABLE_CELLS] + (t - RHO_HI);
    }
    let (i, s, h) = locate(t);
    quintic(s, h, [tb.prim[i], tb.cdf[i], tb.rho[i]], [tb.prim[i + 1], tb.cdf[i + 1], tb.rho[i + 1]])
}

/// `int_{1/16}^t T_k(w(s)) rho(s) ds` for every `k`, clamped to the support.
pub fn rho_chebyshev_moments(t: f64) -> [f64; CHEB_TERMS] {
    let tb = tables();
    if t <= RHO_LO {
        return [0.0; CHEB_TERMS];
    }
    if t >= RHO_HI {
        return tb.cheb[TABLE_CELLS];
    }
    let (i, s, h) = locate(t);
    let (a, b) = (RHO_LO + i as f64 * h, RHO_LO + (i + 1) as f64 * h);
    let (ta, da) = chebyshev((a - 0.5) / HALF_WIDTH);
    let (tb_, db) = chebyshev((b - 0.5) / HALF_WIDTH);
    let mut out = [0.0; CHEB_TERMS];
    for k in 0..CHEB_TERMS {
        let f0 = [tb.cheb[i][k], ta[k] * tb.rho[i], da[k] / HALF_WIDTH * tb.rho[i] + ta[k] * tb.drho[i]];
        let f1 = [tb.cheb[i + 1][k], tb_[k] * tb.rho[i + 1], db[k] / HALF_WIDTH * tb.rho[i + 1] + tb_[k] * tb.drho[i + 1]];
        out[k] = quintic(s, h, f0, f1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Smoothed `(r - z)^+`, transition on `[z, z + delta]`.
    Plus,
    /// Smoothed `(z - r)^+`, transition on `[z - delta, z]`.
    Minus,
}

/// `eta` with `eta'' = rho_delta` composed per orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyFunction {
    pub delta: f64,
    pub z: f64,
    pub orientation: Orientation,
}

pub fn make_eta(delta: f64, z: f64, orientation: Orientation) -> Result<EntropyFunction> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("entropy smoothing width must be positive, got {delta}")));
    }
    if !z.is_finite() {
        return Err(Error::Domain("entropy shift must be finite".into()));
    }
    Ok(EntropyFunction { delta, z, orientation })
}

impl EntropyFunction {
    #[inline]
    fn arg(&self, r: f64) -> f64 {
        match self.orientation {
            Orientation::Plus => (r - self.z) / self.delta,
            Orientation::Minus => (self.z - r) / self.delta,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.delta * rho_second_primitive(self.arg(r))
    }

    pub fn d1(&self, r: f64) -> f64 {
        let c = rho_cdf(self.arg(r));
        match self.orientation {
            Orientation::Plus => c,
            Orientation::Minus => -c,
        }
    }

    pub fn d2(&self, r: f64) -> f64 {
        rho(self.arg(r)) / self.delta
    }

    /// `(eta, eta', eta'')` in one call.
    pub fn all(&self, r: f64) -> (f64, f64, f64) {
        (self.eval(r), self.d1(r), self.d2(r))
    }

    /// Interval outside of which `eta'` is constant.
    pub fn transition(&self) -> (f64, f64) {
        match self.orientation {
            Orientation::Plus => (self.z + self.delta * RHO_LO, self.z + self.delta * RHO_HI),
            Orientation::Minus => (self.z - self.delta * RHO_HI, self.z - self.delta * RHO_LO),
        }
    }

    /// Values of `eta'` below and above the transition.
    pub fn outer_slopes(&self) -> (f64, f64) {
        match self.orientation {
            Orientation::Plus => (0.0, 1.0),
            Orientation::Minus => (-1.0, 0.0),
        }
    }

    /// Membership in the class with `eta'(0) = 0`.
    pub fn vanishes_at_zero(&self) -> bool {
        self.d1(0.0) == 0.0
    }

    /// The unsmoothed target `(r - z)^+` or `(z - r)^+`.
    pub fn kruzhkov(&self, r: f64) -> f64 {
        match self.orientation {
            Orientation::Plus => (r - self.z).max(0.0),
            Orientation::Minus => (self.z - r).max(0.0),
        }
    }

    pub fn label(&self) -> String {
        let o = match self.orientation {
            Orientation::Plus => "plus",
            Orientation::Minus => "minus",
        };
        format!("{o}(z={},delta={})", self.z, self.delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quadrature::integrate;

    #[test]
    fn mollifier_contract() {
        let total = integrate(rho, 0.0, 1.0, 1e-13).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        let peak = (0..=1000).map(|i| rho(i as f64 / 1000.0)).fold(0.0, f64::max);
        assert!(peak <= 2.0 && peak > 1.0);
        assert_eq!(rho(0.0), 0.0);
        assert_eq!(rho(RHO_LO), 0.0);
        assert_eq!(rho(1.0), 0.0);
        assert!((rho_cdf(0.5) - 0.5).abs() < 1e-13);
        assert!((rho_second_primitive(2.0) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn tables_are_consistent_primitives() {
        for i in 1..200 {
            let t = i as f64 / 200.0;
            let c = integrate(rho, 0.0, t, 1e-14).unwrap();
            assert!((rho_cdf(t) - c).abs() < 1e-12, "cdf at {t}");
            let p = integrate(rho_cdf, 0.0, t, 1e-14).unwrap();
            assert!((rho_second_primitive(t) - p).abs() < 1e-12, "primitive at {t}");
        }
    }

    #[test]
    fn chebyshev_moments_match_quadrature() {
        for i in 0..=40 {
            let t = i as f64 / 40.0;
            let m = rho_chebyshev_moments(t);
            for k in [0, 1, 5, 12] {
                let direct = integrate(|s| chebyshev((s - 0.5) / HALF_WIDTH).0[k] * rho(s), 0.0, t.max(1e-9), 1e-14).unwrap();
                assert!((m[k] - direct).abs() < 1e-12, "k={k} t={t}: {} vs {direct}", m[k]);
            }
        }
        assert!((rho_chebyshev_moments(1.0)[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn chebyshev_fit_reproduces_smooth_functions() {
        let f = |t: f64| (3.0 * t).sin() + t * t;
        let nodes = chebyshev_nodes();
        let c = chebyshev_fit(&nodes.map(f));
        for i in 0..50 {
            let t = RHO_LO + (RHO_HI - RHO_LO) * i as f64 / 49.0;
            let (tk, _) = chebyshev((t - 0.5) / HALF_WIDTH);
            let p: f64 = c.iter().zip(&tk).map(|(a, b)| a * b).sum();
            assert!((p - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_examples() {
        let e = make_eta(0.1, 0.0, Orientation::Plus).unwrap();
        assert_eq!(e.eval(-1.0), 0.0);
        assert!((e.eval(5.0) - 5.0).abs() <= 0.1);
        let (t0, t1) = e.transition();
        let mass = integrate(|r| e.d2(r), t0, t1, 1e-13).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        assert!(e.vanishes_at_zero());
        assert!(make_eta(0.0, 0.0, Orientation::Plus).is_err());
        assert!(make_eta(-1.0, 0.0, Orientation::Minus).is_err());
    }

    #[test]
    fn class_membership() {
        assert!(make_eta(0.2, 0.3, Orientation::Plus).unwrap().vanishes_at_zero());
        assert!(!make_eta(0.2, -0.1, Orientation::Plus).unwrap().vanishes_at_zero());
        assert!(make_eta(0.2, 0.0, Orientation::Minus).unwrap().vanishes_at_zero());
        assert!(!make_eta(0.2, 0.5, Orientation::Minus).unwrap().vanishes_at_zero());
    }

    #[test]
    fn minus_orientation_mirrors() {
        let e = make_eta(0.2, 0.5, Orientation::Minus).unwrap();
        let p = make_eta(0.2, -0.5, Orientation::Plus).unwrap();
        for i in 0..50 {
            let r = -1.0 + i as f64 * 0.04;
            assert!((e.eval(r) - p.eval(-r)).abs() < 1e-15);
            assert!((e.d1(r) + p.d1(-r)).abs() < 1e-15);
            assert!((e.eval(r) - e.kruzhkov(r)).abs() <= 0.2);
        }
        let (t0, t1) = e.transition();
        assert!(t0 >= 0.3 && t1 <= 0.5);
    }
}
