//! Problem data: box domain, horizon, coefficients, initial datum.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::fields::{DriftFields, NoiseField, Point};
use crate::model::ito::{ito_from_stratonovich, ItoCoefficients};
use crate::model::nonlinearity::DiffusionNonlinearity;

/// Axis-aligned box `(0, L_1) x ... x (0, L_d)`, d in {1, 2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub dim: usize,
    pub lengths: [f64; 2],
}

impl BoxDomain {
    pub fn new(dim: usize, lengths: [f64; 2]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        for &l in &lengths[..dim] {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("side length must be positive, got {l}")));
            }
        }
        let mut lengths = lengths;
        if dim == 1 {
            lengths[1] = 1.0;
        }
        Ok(Self { dim, lengths })
    }

    pub fn interval(length: f64) -> Result<Self> {
        Self::new(1, [length, 1.0])
    }

    pub fn volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    pub fn contains_closure(&self, x: Point) -> bool {
        (0..self.dim).all(|i| x[i] >= 0.0 && x[i] <= self.lengths[i])
    }
}

/// Initial datum `xi : D -> R_+`.
#[derive(Clone)]
pub struct InitialDatum {
    label: String,
    f: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
}

impl fmt::Debug for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialDatum({})", self.label)
    }
}

impl InitialDatum {
    pub fn new(label: impl Into<String>, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), f: Arc::new(f) }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c)
    }

    /// `A prod_i sin(pi x_i / L_i)`
    pub fn sine(domain: BoxDomain, amplitude: f64) -> Self {
        Self::new(format!("sine({amplitude})"), move |x| {
            let mut v = amplitude;
            for i in 0..domain.dim {
                v *= (std::f64::consts::PI * x[i] / domain.lengths[i]).sin();
            }
            v
        })
    }

    /// Compactly supported `A prod_i (1 - ((x_i - c_i)/w_i)^2)^+`.
    pub fn bump(domain: BoxDomain, amplitude: f64, center: Point, half_width: f64) -> Self {
        Self::new(format!("bump({amplitude},{center:?},{half_width})"), move |x| {
            let mut v = amplitude;
            for i in 0..domain.dim {
                let t = (x[i] - center[i]) / half_width;
                v *= (1.0 - t * t).max(0.0);
            }
            v
        })
    }

    /// `A prod_i 4 x_i (L_i - x_i) / L_i^2`
    pub fn parabola(domain: BoxDomain, amplitude: f64) -> Self {
        Self::new(format!("parabola({amplitude})"), move |x| {
            let mut v = amplitude;
            for i in 0..domain.dim {
                let l = domain.lengths[i];
                v *= 4.0 * x[i] * (l - x[i]) / (l * l);
            }
            v
        })
    }

    /// Pointwise sum of two data.
    pub fn plus(&self, other: &InitialDatum) -> Self {
        let (a, b) = (self.f.clone(), other.f.clone());
        Self::new(format!("{}+{}", self.label, other.label), move |x| a(x) + b(x))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let a = self.f.clone();
        Self::new(format!("{s}*{}", self.label), move |x| s * a(x))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        (self.f)(x)
    }

    /// `xi_n = xi ^ n`.
    pub fn truncated(&self, n: u32) -> Self {
        let a = self.f.clone();
        let cap = n as f64;
        Self::new(format!("min({},{n})", self.label), move |x| a(x).min(cap))
    }
}

/// Pointwise `min(xi, n)` on sampled values; rejects negative input.
pub fn truncate_initial(values: &[f64], n: u32) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("truncation level must be >= 1".into()));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("initial datum is negative or NaN at sample {i}: {v}")));
    }
    let cap = n as f64;
    Ok(values.iter().map(|&v| v.min(cap)).collect())
}

/// `Phi` plus the Ito coefficients built from `sigma`, `G`, `F`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub phi: DiffusionNonlinearity,
    pub ito: ItoCoefficients,
}

impl CoefficientSet {
    pub fn new(phi: DiffusionNonlinearity, noise: &NoiseField, drift: &DriftFields) -> Result<Self> {
        Ok(Self { phi, ito: ito_from_stratonovich(noise, drift)? })
    }

    /// Same coefficients with `Phi` replaced by `Phi_n`.
    pub fn regularized(&self, n: u32) -> Result<Self> {
        Ok(Self { phi: self.phi.regularize(n)?, ito: self.ito.clone() })
    }

    pub fn dim(&self) -> usize {
        self.ito.dim()
    }
}

/// The Dirichlet problem `Pi(Phi, xi)` on a box.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: BoxDomain,
    pub horizon: f64,
    pub coefficients: CoefficientSet,
    pub initial: InitialDatum,
}

impl ProblemSpec {
    pub fn new(domain: BoxDomain, horizon: f64, coefficients: CoefficientSet, initial: InitialDatum) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if coefficients.dim() != domain.dim {
            return Err(Error::Config("coefficient dimension does not match the domain".into()));
        }
        Ok(Self { domain, horizon, coefficients, initial })
    }

    /// Same problem with a different initial datum.
    pub fn with_initial(&self, initial: InitialDatum) -> Self {
        Self { initial, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_initial(&[0.5, 0.5], 1).unwrap(), vec![0.5, 0.5]);
        let xs: Vec<f64> = (0..10).map(|i| 10.0 * (i as f64 + 0.5) / 10.0).collect();
        let t = truncate_initial(&xs, 5).unwrap();
        for (a, b) in xs.iter().zip(&t) {
            assert_eq!(*b, a.min(5.0));
        }
        let t = truncate_initial(&[1.0, 7.3, 2.0], 7).unwrap();
        assert_eq!(t.iter().copied().fold(0.0, f64::max), 7.0);
        assert!(matches!(truncate_initial(&[0.1, -0.2], 3), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_datum() {
        let d = BoxDomain::interval(1.0).unwrap();
        let xi = InitialDatum::new("10x", |x| 10.0 * x[0]).truncated(5);
        assert_eq!(xi.eval([0.2, 0.0]), 2.0);
        assert_eq!(xi.eval([0.9, 0.0]), 5.0);
        assert!(d.contains_closure([1.0, 0.3]));
    }

    #[test]
    fn domain_validation() {
        assert!(BoxDomain::new(3, [1.0, 1.0]).is_err());
        assert!(BoxDomain::new(2, [1.0, -1.0]).is_err());
        assert_eq!(BoxDomain::new(2, [2.0, 3.0]).unwrap().volume(), 6.0);
    }
}
