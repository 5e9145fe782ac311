//! Coefficient maps `sigma^k`, `G`, `F` with their derivative oracles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// A point of the box; unused trailing components are 0 when d = 1.
pub type Point = [f64; 2];
pub type Vector = [f64; 2];
pub type VectorFn = Arc<dyn Fn(Point, f64) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// How a derivative is obtained.
#[derive(Clone)]
pub enum Oracle<F> {
    Closed(F),
    /// Central difference with the given step.
    FiniteDifference { step: f64 },
    Missing,
}

impl<F> Oracle<F> {
    pub fn is_missing(&self) -> bool {
        matches!(self, Oracle::Missing)
    }
}

impl<F> fmt::Debug for Oracle<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Oracle::Closed(_) => write!(f, "Closed"),
            Oracle::FiniteDifference { step } => write!(f, "FiniteDifference({step})"),
            Oracle::Missing => write!(f, "Missing"),
        }
    }
}

fn shift(x: Point, j: usize, h: f64) -> Point {
    let mut y = x;
    y[j] += h;
    y
}

fn central<V: Fn(f64) -> Vector>(v: V, h: f64) -> Vector {
    let (p, m) = (v(h), v(-h));
    [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
}

/// A vector field `D x R -> R^d` with oracles for `d/dr`, `d/dx_j`, `d^2/dr dx_j`.
#[derive(Clone)]
pub struct VectorMap {
    value: VectorFn,
    d_r: Oracle<VectorFn>,
    d_x: [Oracle<VectorFn>; 2],
    d_rx: [Oracle<VectorFn>; 2],
}

impl fmt::Debug for VectorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorMap")
            .field("d_r", &self.d_r)
            .field("d_x", &self.d_x)
            .field("d_rx", &self.d_rx)
            .finish()
    }
}

impl VectorMap {
    /// Closure without derivative oracles; attach them with the builder methods.
    pub fn new(value: impl Fn(Point, f64) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            d_r: Oracle::Missing,
            d_x: [Oracle::Missing, Oracle::Missing],
            d_rx: [Oracle::Missing, Oracle::Missing],
        }
    }

    /// All derivatives by central differences with step `step`.
    pub fn finite_difference(value: impl Fn(Point, f64) -> Vector + Send + Sync + 'static, step: f64) -> Self {
        let fd = || Oracle::FiniteDifference { step };
        Self { value: Arc::new(value), d_r: fd(), d_x: [fd(), fd()], d_rx: [fd(), fd()] }
    }

    pub fn zero() -> Self {
        let z: VectorFn = Arc::new(|_, _| [0.0; 2]);
        Self {
            value: z.clone(),
            d_r: Oracle::Closed(z.clone()),
            d_x: [Oracle::Closed(z.clone()), Oracle::Closed(z.clone())],
            d_rx: [Oracle::Closed(z.clone()), Oracle::Closed(z)],
        }
    }

    pub fn with_d_r(mut self, f: impl Fn(Point, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.d_r = Oracle::Closed(Arc::new(f));
        self
    }

    pub fn with_d_x(mut self, j: usize, f: impl Fn(Point, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.d_x[j] = Oracle::Closed(Arc::new(f));
        self
    }

    pub fn with_d_rx(mut self, j: usize, f: impl Fn(Point, f64) -> Vector + Send + Sync + 'static) -> Self {
        self.d_rx[j] = Oracle::Closed(Arc::new(f));
        self
    }

    /// Names of missing oracles among the first `dim` axes.
    pub fn missing(&self, dim: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.d_r.is_missing() {
            out.push("d/dr".to_string());
        }
        for j in 0..dim {
            if self.d_x[j].is_missing() {
                out.push(format!("d/dx{}", j + 1));
            }
            if self.d_rx[j].is_missing() {
                out.push(format!("d2/dr dx{}", j + 1));
            }
        }
        out
    }

    #[inline]
    pub fn value(&self, x: Point, r: f64) -> Vector {
        (self.value)(x, r)
    }

    pub fn d_r(&self, x: Point, r: f64) -> Vector {
        match &self.d_r {
            Oracle::Closed(f) => f(x, r),
            Oracle::FiniteDifference { step } => central(|h| self.value(x, r + h), *step),
            Oracle::Missing => [f64::NAN; 2],
        }
    }

    pub fn d_x(&self, j: usize, x: Point, r: f64) -> Vector {
        match &self.d_x[j] {
            Oracle::Closed(f) => f(x, r),
            Oracle::FiniteDifference { step } => central(|h| self.value(shift(x, j, h), r), *step),
            Oracle::Missing => [f64::NAN; 2],
        }
    }

    pub fn d_rx(&self, j: usize, x: Point, r: f64) -> Vector {
        match &self.d_rx[j] {
            Oracle::Closed(f) => f(x, r),
            Oracle::FiniteDifference { step } => central(|h| self.d_r(shift(x, j, h), r), *step),
            Oracle::Missing => [f64::NAN; 2],
        }
    }

    /// `d^2/dr^2` by central differences of the `d/dr` oracle.
    pub fn d_rr(&self, x: Point, r: f64) -> Vector {
        central(|h| self.d_r(x, r + h), 1e-5 * (1.0 + r.abs()))
    }

    /// Divergence `sum_i d/dx_i v^i` over the first `dim` axes.
    pub fn div_x(&self, dim: usize, x: Point, r: f64) -> f64 {
        (0..dim).map(|i| self.d_x(i, x, r)[i]).sum()
    }
}

/// A scalar field `D x R -> R` with a `d/dr` oracle.
#[derive(Clone)]
pub struct ScalarMap {
    value: ScalarFn,
    d_r: Oracle<ScalarFn>,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap").field("d_r", &self.d_r).finish()
    }
}

impl ScalarMap {
    pub fn new(value: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), d_r: Oracle::Missing }
    }

    pub fn finite_difference(value: impl Fn(Point, f64) -> f64 + Send + Sync + 'static, step: f64) -> Self {
        Self { value: Arc::new(value), d_r: Oracle::FiniteDifference { step } }
    }

    pub fn zero() -> Self {
        Self { value: Arc::new(|_, _| 0.0), d_r: Oracle::Closed(Arc::new(|_, _| 0.0)) }
    }

    pub fn with_d_r(mut self, f: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.d_r = Oracle::Closed(Arc::new(f));
        self
    }

    pub fn is_missing_d_r(&self) -> bool {
        self.d_r.is_missing()
    }

    #[inline]
    pub fn value(&self, x: Point, r: f64) -> f64 {
        (self.value)(x, r)
    }

    pub fn d_r(&self, x: Point, r: f64) -> f64 {
        match &self.d_r {
            Oracle::Closed(f) => f(x, r),
            Oracle::FiniteDifference { step } => (self.value(x, r + step) - self.value(x, r - step)) / (2.0 * step),
            Oracle::Missing => f64::NAN,
        }
    }
}

/// Spatial profile `h(x)` of a builtin noise mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `h_k(x) = prod_i sin(k pi x_i / L_i)`
    Sine,
    /// `h(x) = prod_i p(x_i)` with `p(t) = sum_q c_q t^q`, shared by all modes
    Polynomial(Vec<f64>),
}

fn poly(c: &[f64], t: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &cq in c.iter().rev() {
        d = d * t + v;
        v = v * t + cq;
    }
    (v, d)
}

/// `(h(x), grad h(x))` for mode number `k >= 1`.
pub fn profile_eval(profile: &Profile, k: usize, dim: usize, lengths: [f64; 2], x: Point) -> (f64, Vector) {
    let mut f = [1.0; 2];
    let mut df = [0.0; 2];
    for i in 0..dim {
        match profile {
            Profile::Sine => {
                let w = k as f64 * PI / lengths[i];
                f[i] = (w * x[i]).sin();
                df[i] = w * (w * x[i]).cos();
            }
            Profile::Polynomial(c) => {
                let (v, d) = poly(c, x[i]);
                f[i] = v;
                df[i] = d;
            }
        }
    }
    let h = f[0] * f[1];
    let grad = [df[0] * f[1], f[0] * df[1]];
    (h, grad)
}

/// Finite family of noise modes `sigma^{., k}`.
#[derive(Debug, Clone)]
pub struct NoiseField {
    dim: usize,
    modes: Vec<VectorMap>,
}

impl NoiseField {
    pub fn new(dim: usize, modes: Vec<VectorMap>) -> Self {
        Self { dim, modes }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, modes: Vec::new() }
    }

    /// `sigma^k(x, r) = c_k r h_k(x) e_{dir(k)}`, with `dir` cycling over the axes.
    pub fn linear_gradient(dim: usize, lengths: [f64; 2], amplitudes: &[f64], profile: Profile) -> Self {
        let modes = amplitudes
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let k = idx + 1;
                let dir = idx % dim;
                let unit = move |s: f64| {
                    let mut v = [0.0; 2];
                    v[dir] = s;
                    v
                };
                let (p0, p1, p2, p3) = (profile.clone(), profile.clone(), profile.clone(), profile.clone());
                let mut m = VectorMap::new(move |x, r| unit(c * r * profile_eval(&p0, k, dim, lengths, x).0))
                    .with_d_r(move |x, _| unit(c * profile_eval(&p1, k, dim, lengths, x).0));
                for j in 0..dim {
                    let (pa, pb) = (p2.clone(), p3.clone());
                    m = m
                        .with_d_x(j, move |x, r| unit(c * r * profile_eval(&pa, k, dim, lengths, x).1[j]))
                        .with_d_rx(j, move |x, _| unit(c * profile_eval(&pb, k, dim, lengths, x).1[j]));
                }
                m
            })
            .collect();
        Self { dim, modes }
    }

    /// `sigma^k(x, r) = c_k h_k(x) e_{dir(k)}`, independent of `r`.
    pub fn additive(dim: usize, lengths: [f64; 2], amplitudes: &[f64], profile: Profile) -> Self {
        let modes = amplitudes
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                let k = idx + 1;
                let dir = idx % dim;
                let unit = move |s: f64| {
                    let mut v = [0.0; 2];
                    v[dir] = s;
                    v
                };
                let (p0, p1) = (profile.clone(), profile.clone());
                let mut m = VectorMap::new(move |x, _| unit(c * profile_eval(&p0, k, dim, lengths, x).0))
                    .with_d_r(|_, _| [0.0; 2]);
                for j in 0..dim {
                    let pa = p1.clone();
                    m = m
                        .with_d_x(j, move |x, _| unit(c * profile_eval(&pa, k, dim, lengths, x).1[j]))
                        .with_d_rx(j, |_, _| [0.0; 2]);
                }
                m
            })
            .collect();
        Self { dim, modes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[VectorMap] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Flux `G` and reaction `F`.
#[derive(Debug, Clone)]
pub struct DriftFields {
    dim: usize,
    pub g: VectorMap,
    pub f: ScalarMap,
    /// true when both maps are identically zero
    trivial: bool,
}

impl DriftFields {
    pub fn new(dim: usize, g: VectorMap, f: ScalarMap) -> Self {
        Self { dim, g, f, trivial: false }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, g: VectorMap::zero(), f: ScalarMap::zero(), trivial: true }
    }

    /// `G(x, r) = v r` (constant advection velocity) and `F(x, r) = lambda r`.
    pub fn linear(dim: usize, velocity: Vector, rate: f64) -> Self {
        let g = VectorMap::new(move |_, r| [velocity[0] * r, velocity[1] * r])
            .with_d_r(move |_, _| velocity)
            .with_d_x(0, |_, _| [0.0; 2])
            .with_d_x(1, |_, _| [0.0; 2])
            .with_d_rx(0, |_, _| [0.0; 2])
            .with_d_rx(1, |_, _| [0.0; 2]);
        let f = ScalarMap::new(move |_, r| rate * r).with_d_r(move |_, _| rate);
        let trivial = velocity == [0.0; 2] && rate == 0.0;
        Self { dim, g, f, trivial }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_trivial(&self) -> bool {
        self.trivial
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_profile_and_derivative() {
        let (v, d) = poly(&[1.0, -2.0, 3.0], 2.0);
        assert_eq!(v, 9.0);
        assert_eq!(d, 10.0);
    }

    #[test]
    fn closed_oracles_match_finite_differences() {
        let n = NoiseField::linear_gradient(2, [1.0, 2.0], &[0.5, 0.3], Profile::Sine);
        let x = [0.31, 0.77];
        let r = 0.8;
        for m in n.modes() {
            let fd = VectorMap::finite_difference(
                {
                    let m = m.clone();
                    move |x, r| m.value(x, r)
                },
                1e-5,
            );
            for j in 0..2 {
                let (a, b) = (m.d_x(j, x, r), fd.d_x(j, x, r));
                assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
                let (a, b) = (m.d_rx(j, x, r), fd.d_rx(j, x, r));
                assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
            }
            let (a, b) = (m.d_r(x, r), fd.d_r(x, r));
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn missing_oracles_are_listed() {
        let m = VectorMap::new(|_, r| [r, 0.0]);
        assert_eq!(m.missing(1), vec!["d/dr", "d/dx1", "d2/dr dx1"]);
        assert!(VectorMap::zero().missing(2).is_empty());
    }
}
