//! Stratonovich-to-Ito conversion of the conservative noise.
//!
//! `a^{ij} = 1/2 sigma_r^{ik} sigma_r^{jk}`, `b^i = sigma_r^{ik} sigma_{x_j}^{jk}`,
//! `f^i = G^i - 1/2 b^i`, summed over the finite set of modes.

use crate::error::{Error, Result};
use crate::model::fields::{DriftFields, NoiseField, Point, Vector};

/// Step for the finite differences of `f` in `r`.
const FD_R: f64 = 1e-5;
/// Step for the finite differences of `f` in `x`.
const FD_X: f64 = 1e-5;

pub type Matrix = [[f64; 2]; 2];

/// Ito-form coefficients derived from a noise field and drift fields.
#[derive(Debug, Clone)]
pub struct ItoCoefficients {
    dim: usize,
    noise: NoiseField,
    drift: DriftFields,
}

/// Convert the Stratonovich coefficient set into Ito form.
///
/// Fails with a configuration error when a mode lacks a derivative oracle.
pub fn ito_from_stratonovich(noise: &NoiseField, drift: &DriftFields) -> Result<ItoCoefficients> {
    if noise.dim() != drift.dim() {
        return Err(Error::Config(format!(
            "noise dimension {} does not match drift dimension {}",
            noise.dim(),
            drift.dim()
        )));
    }
    let dim = noise.dim();
    if !(1..=2).contains(&dim) {
        return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
    }
    for (k, m) in noise.modes().iter().enumerate() {
        let missing = m.missing(dim);
        if !missing.is_empty() {
            return Err(Error::Config(format!("noise mode {k} lacks oracles: {}", missing.join(", "))));
        }
    }
    Ok(ItoCoefficients { dim, noise: noise.clone(), drift: drift.clone() })
}

impl ItoCoefficients {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.noise.len()
    }

    pub fn noise(&self) -> &NoiseField {
        &self.noise
    }

    pub fn drift(&self) -> &DriftFields {
        &self.drift
    }

    /// True when every coefficient vanishes identically (no noise, no drift).
    pub fn is_trivial(&self) -> bool {
        self.noise.is_empty() && self.drift.is_trivial()
    }

    pub fn sigma(&self, k: usize, x: Point, r: f64) -> Vector {
        self.noise.modes()[k].value(x, r)
    }

    pub fn sigma_r(&self, k: usize, x: Point, r: f64) -> Vector {
        self.noise.modes()[k].d_r(x, r)
    }

    /// `sum_i d/dx_i sigma^{ik}(x, r)`.
    pub fn sigma_div(&self, k: usize, x: Point, r: f64) -> f64 {
        self.noise.modes()[k].div_x(self.dim, x, r)
    }

    /// `sum_i d^2/dr dx_i sigma^{ik}(x, r)`.
    pub fn sigma_r_div(&self, k: usize, x: Point, r: f64) -> f64 {
        let m = &self.noise.modes()[k];
        (0..self.dim).map(|i| m.d_rx(i, x, r)[i]).sum()
    }

    pub fn a(&self, x: Point, r: f64) -> Matrix {
        let mut a = [[0.0; 2]; 2];
        for m in self.noise.modes() {
            let s = m.d_r(x, r);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    a[i][j] += 0.5 * s[i] * s[j];
                }
            }
        }
        a
    }

    pub fn b(&self, x: Point, r: f64) -> Vector {
        let mut b = [0.0; 2];
        for m in self.noise.modes() {
            let s = m.d_r(x, r);
            let div = m.div_x(self.dim, x, r);
            for i in 0..self.dim {
                b[i] += s[i] * div;
            }
        }
        b
    }

    pub fn f(&self, x: Point, r: f64) -> Vector {
        let g = self.drift.g.value(x, r);
        let b = self.b(x, r);
        let mut f = [0.0; 2];
        for i in 0..self.dim {
            f[i] = g[i] - 0.5 * b[i];
        }
        f
    }

    #[inline]
    pub fn reaction(&self, x: Point, r: f64) -> f64 {
        self.drift.f.value(x, r)
    }

    /// `sum_j d/dx_j a^{ij}` from the mixed oracles.
    pub fn a_div(&self, x: Point, r: f64) -> Vector {
        let mut out = [0.0; 2];
        for m in self.noise.modes() {
            let s = m.d_r(x, r);
            for j in 0..self.dim {
                let sj = m.d_rx(j, x, r);
                for i in 0..self.dim {
                    out[i] += 0.5 * (sj[i] * s[j] + s[i] * sj[j]);
                }
            }
        }
        out
    }

    /// `d/dr f^i` (central difference of `f`).
    pub fn f_r(&self, x: Point, r: f64) -> Vector {
        let h = FD_R * (1.0 + r.abs());
        let (p, m) = (self.f(x, r + h), self.f(x, r - h));
        [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
    }

    /// `sum_i d/dx_i f^i` (central difference of `f`).
    pub fn f_div(&self, x: Point, r: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut xp = x;
            let mut xm = x;
            xp[i] += FD_X;
            xm[i] -= FD_X;
            s += (self.f(xp, r)[i] - self.f(xm, r)[i]) / (2.0 * FD_X);
        }
        s
    }

    /// `sum_i d^2/dr dx_i f^i` (central difference of `f_r` in `x`).
    pub fn f_r_div(&self, x: Point, r: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-4;
            xm[i] -= 1e-4;
            s += (self.f_r(xp, r)[i] - self.f_r(xm, r)[i]) / 2e-4;
        }
        s
    }

    /// Evaluate every coefficient at `(x, r)` and report the first non-finite one.
    pub fn check_at(&self, x: Point, r: f64) -> Result<()> {
        let bad = |mode: Option<usize>, what: &str| Error::Evaluation { x, r, mode, msg: format!("non-finite {what}") };
        for k in 0..self.modes() {
            let s = self.sigma(k, x, r);
            let sr = self.sigma_r(k, x, r);
            if !(s[0].is_finite() && s[1].is_finite()) {
                return Err(bad(Some(k), "sigma"));
            }
            if !(sr[0].is_finite() && sr[1].is_finite()) {
                return Err(bad(Some(k), "sigma_r"));
            }
            if !self.sigma_div(k, x, r).is_finite() {
                return Err(bad(Some(k), "div_x sigma"));
            }
        }
        let f = self.f(x, r);
        if !(f[0].is_finite() && f[1].is_finite()) {
            return Err(bad(None, "f"));
        }
        if !self.reaction(x, r).is_finite() {
            return Err(bad(None, "F"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fields::{Profile, ScalarMap, VectorMap};
    use std::f64::consts::PI;

    fn one_mode(c: f64) -> ItoCoefficients {
        let n = NoiseField::linear_gradient(1, [1.0, 1.0], &[c], Profile::Sine);
        ito_from_stratonovich(&n, &DriftFields::zero(1)).unwrap()
    }

    #[test]
    fn vanishing_noise_passes_drift_through() {
        let d = DriftFields::linear(1, [0.7, 0.0], 0.0);
        let ito = ito_from_stratonovich(&NoiseField::zero(1), &d).unwrap();
        let x = [0.4, 0.0];
        assert_eq!(ito.a(x, 1.3), [[0.0; 2]; 2]);
        assert_eq!(ito.b(x, 1.3), [0.0; 2]);
        assert!((ito.f(x, 1.3)[0] - 0.7 * 1.3).abs() < 1e-15);
    }

    #[test]
    fn single_sine_mode_matches_symbolic_derivatives() {
        let c = 0.5;
        let ito = one_mode(c);
        for &(x, r) in &[(0.1, 0.3), (0.37, -1.2), (0.8, 2.0)] {
            let p = [x, 0.0];
            let s = (PI * x).sin();
            let co = (PI * x).cos();
            assert!((ito.a(p, r)[0][0] - 0.5 * c * c * s * s).abs() < 1e-14);
            let b = PI * c * c * r * s * co;
            assert!((ito.b(p, r)[0] - b).abs() < 1e-13);
            assert!((ito.f(p, r)[0] + 0.5 * b).abs() < 1e-13);
            // central finite differences of sigma at step 1e-6
            let h = 1e-6;
            let sig = |x: f64, r: f64| c * r * (PI * x).sin();
            let sr = (sig(x, r + h) - sig(x, r - h)) / (2.0 * h);
            let sx = (sig(x + h, r) - sig(x - h, r)) / (2.0 * h);
            assert!((sr * sx - b).abs() < 1e-7);
        }
    }

    #[test]
    fn additive_noise_has_no_correction() {
        let n = NoiseField::additive(1, [1.0, 1.0], &[0.3], Profile::Sine);
        let ito = ito_from_stratonovich(&n, &DriftFields::zero(1)).unwrap();
        let p = [0.2, 0.0];
        assert_eq!(ito.a(p, 0.5)[0][0], 0.0);
        assert_eq!(ito.b(p, 0.5)[0], 0.0);
        assert_eq!(ito.f(p, 0.5)[0], 0.0);
    }

    #[test]
    fn missing_oracle_is_config_error() {
        let n = NoiseField::new(1, vec![VectorMap::new(|_, r| [r, 0.0])]);
        let e = ito_from_stratonovich(&n, &DriftFields::zero(1)).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn non_finite_value_names_point_and_mode() {
        let m = VectorMap::finite_difference(|x, r| [if x[0] > 0.5 { f64::NAN } else { r }, 0.0], 1e-5);
        let n = NoiseField::new(1, vec![VectorMap::zero(), m]);
        let ito = ito_from_stratonovich(&n, &DriftFields::new(1, VectorMap::zero(), ScalarMap::zero())).unwrap();
        assert!(ito.check_at([0.2, 0.0], 1.0).is_ok());
        match ito.check_at([0.7, 0.0], 1.0) {
            Err(Error::Evaluation { x, mode, .. }) => {
                assert_eq!(x, [0.7, 0.0]);
                assert_eq!(mode, Some(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn b_finite_difference_reconstruction_is_first_order() {
        // forward differences of sigma: error should decay linearly in the step
        let c = 0.8;
        let ito = one_mode(c);
        let (x, r) = (0.3, 0.9);
        let sig = |x: f64, r: f64| c * r * (PI * x).sin();
        let exact = ito.b([x, 0.0], r)[0];
        let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&h| {
                let sr = (sig(x, r + h) - sig(x, r)) / h;
                let sx = (sig(x + h, r) - sig(x, r)) / h;
                (sr * sx - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn gram_matrix_is_psd_in_2d() {
        let n = NoiseField::linear_gradient(2, [1.0, 1.0], &[0.5, 0.4, 0.3], Profile::Sine);
        let ito = ito_from_stratonovich(&n, &DriftFields::zero(2)).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let p = [0.05 + 0.1 * i as f64, 0.05 + 0.1 * j as f64];
                let a = ito.a(p, 0.7);
                let tr = a[0][0] + a[1][1];
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                assert!(0.5 * tr - disc >= -1e-12);
                assert_eq!(a[0][1], a[1][0]);
            }
        }
    }
}
