//! One-dimensional quadrature used for the `[[g]](x, r)` brackets.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

/// Default absolute tolerance for a bracket ending at `r`.
pub fn default_tolerance(r: f64) -> f64 {
    1e-10 * (1.0 + r.abs())
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(non_finite(c));
    }
    let mut gauss = fc * WG[3];
    let mut kron = fc * WGK[7];
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = hw * x;
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        if !f1.is_finite() {
            return Err(non_finite(c - dx));
        }
        if !f2.is_finite() {
            return Err(non_finite(c + dx));
        }
        kron += w * (f1 + f2);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    Ok((kron * hw, ((kron - gauss) * hw).abs()))
}

fn non_finite(s: f64) -> Error {
    Error::Evaluation {
        x: [f64::NAN; 2],
        r: s,
        mode: None,
        msg: "non-finite integrand sample".into(),
    }
}

fn adapt<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (val, err) = kronrod(f, a, b)?;
    if err <= tol || depth >= MAX_DEPTH || (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
        return Ok(val);
    }
    let m = 0.5 * (a + b);
    Ok(adapt(f, a, m, 0.5 * tol, depth + 1)? + adapt(f, m, b, 0.5 * tol, depth + 1)?)
}

/// Adaptive Gauss-Kronrod (7/15) integral of `f` over `[a, b]`, signed.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    adapt(&mut f, a, b, tol.max(f64::MIN_POSITIVE), 0)
}

/// Adaptive integral with interior breakpoints where the integrand may lose smoothness.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&p| p > lo && p < hi).collect();
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    let mut total = 0.0;
    let mut left = lo;
    let pieces = pts.len() + 1;
    for p in pts.into_iter().chain(std::iter::once(hi)) {
        total += adapt(&mut f, left, p, tol / pieces as f64, 0)?;
        left = p;
    }
    Ok(sign * total)
}

/// `[[g]](x, r) = int_0^r g(x, s) ds` with absolute tolerance `tol`.
pub fn bracket_integral_tol<G: Fn([f64; 2], f64) -> f64>(
    g: G,
    x: [f64; 2],
    r: f64,
    tol: f64,
) -> Result<f64> {
    integrate_with_breaks(|s| g(x, s), 0.0, r, &[], tol).map_err(|e| match e {
        Error::Evaluation { r, mode, msg, .. } => Error::Evaluation { x, r, mode, msg },
        other => other,
    })
}

/// `[[g]](x, r)` at the default tolerance `1e-10 (1 + |r|)`.
pub fn bracket_integral<G: Fn([f64; 2], f64) -> f64>(g: G, x: [f64; 2], r: f64) -> Result<f64> {
    bracket_integral_tol(g, x, r, default_tolerance(r))
}

/// Fixed-order Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integrand() {
        let v = bracket_integral(|_, _| 1.0, [0.0; 2], 2.5).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_endpoint() {
        assert_eq!(bracket_integral(|_, s| s.exp(), [0.3, 0.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn sqrt_singularity_matches_closed_form() {
        // int_0^1 sqrt(2 s) ds = 2 sqrt(2) / 3
        let v = bracket_integral(|_, s: f64| (2.0 * s.abs()).sqrt(), [0.0; 2], 1.0).unwrap();
        assert!((v - 2.0 * 2f64.sqrt() / 3.0).abs() < 1e-9);
        let neg = bracket_integral(|_, s: f64| (2.0 * s.abs()).sqrt(), [0.0; 2], -1.0).unwrap();
        assert!((neg + 2.0 * 2f64.sqrt() / 3.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_sample_is_reported() {
        let err = bracket_integral(|_, s| if s > 0.5 { f64::NAN } else { s }, [0.25, 0.0], 1.0);
        match err {
            Err(Error::Evaluation { x, .. }) => assert_eq!(x, [0.25, 0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn additivity_over_split() {
        let g = |_: [f64; 2], s: f64| (3.0 * s).sin() + s * s;
        let (r1, r2) = (0.7, 1.9);
        let whole = bracket_integral(g, [0.0; 2], r1 + r2).unwrap();
        let first = bracket_integral(g, [0.0; 2], r1).unwrap();
        let rest = integrate(|s| g([0.0; 2], s), r1, r1 + r2, default_tolerance(r2)).unwrap();
        assert!((whole - first - rest).abs() <= 2.0 * default_tolerance(r1 + r2));
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-13);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }
}
