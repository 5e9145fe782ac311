//! Discrete Dirichlet Laplacian and the shifted systems of the implicit step.

use super::grid::Grid;
use crate::error::{Error, Result};

/// `(L v)_c = sum_i (v_{c+e_i} - 2 v_c + v_{c-e_i}) / h_i^2` with ghost
/// values `-v_c`, so the face average vanishes on the boundary.
pub fn laplacian(grid: &Grid, v: &[f64], out: &mut [f64]) {
    for c in 0..grid.len() {
        let vc = v[c];
        let mut s = 0.0;
        for axis in 0..grid.dim {
            let p = grid.step(c, axis, true).map_or(-vc, |n| v[n]);
            let m = grid.step(c, axis, false).map_or(-vc, |n| v[n]);
            s += (p - 2.0 * vc + m) / (grid.h[axis] * grid.h[axis]);
        }
        out[c] = s;
    }
}

/// Solve `(diag(w) - dt L) y = rhs` for `w > 0` (symmetric positive definite).
pub fn solve_shifted(grid: &Grid, w: &[f64], dt: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    if grid.dim == 1 {
        Ok(thomas(grid, w, dt, rhs))
    } else {
        pcg(grid, w, dt, rhs)
    }
}

fn thomas(grid: &Grid, w: &[f64], dt: f64, rhs: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let k = dt / (grid.h[0] * grid.h[0]);
    let diag = |c: usize| w[c] + k * if c == 0 || c + 1 == n { 3.0 } else { 2.0 };
    let off = -k;
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = off / diag(0);
    dp[0] = rhs[0] / diag(0);
    for c in 1..n {
        let den = diag(c) - off * cp[c - 1];
        cp[c] = off / den;
        dp[c] = (rhs[c] - off * dp[c - 1]) / den;
    }
    let mut y = vec![0.0; n];
    y[n - 1] = dp[n - 1];
    for c in (0..n - 1).rev() {
        y[c] = dp[c] - cp[c] * y[c + 1];
    }
    y
}

fn apply(grid: &Grid, w: &[f64], dt: f64, y: &[f64], out: &mut [f64]) {
    laplacian(grid, y, out);
    for c in 0..y.len() {
        out[c] = w[c] * y[c] - dt * out[c];
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(grid: &Grid, w: &[f64], dt: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    let mut pre = vec![0.0; n];
    for (c, p) in pre.iter_mut().enumerate() {
        let mut d = w[c];
        for axis in 0..grid.dim {
            let k = dt / (grid.h[axis] * grid.h[axis]);
            d += k * (2.0 + grid.step(c, axis, true).is_none() as u8 as f64 + grid.step(c, axis, false).is_none() as u8 as f64);
        }
        *p = 1.0 / d;
    }
    let bnorm = dot(rhs, rhs).sqrt();
    let mut y = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(y);
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&pre).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for _ in 0..10 * n + 100 {
        apply(grid, w, dt, &p, &mut q);
        let alpha = rz / dot(&p, &q);
        for c in 0..n {
            y[c] += alpha * p[c];
            r[c] -= alpha * q[c];
        }
        if dot(&r, &r).sqrt() <= 1e-15 * bnorm {
            return Ok(y);
        }
        for c in 0..n {
            z[c] = r[c] * pre[c];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for c in 0..n {
            p[c] = z[c] + beta * p[c];
        }
    }
    // stagnation at round-off is acceptable once the residual is small
    if dot(&r, &r).sqrt() <= 1e-10 * bnorm {
        Ok(y)
    } else {
        Err(Error::Internal("conjugate gradients did not converge".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoxDomain;

    fn check(grid: &Grid) {
        let n = grid.len();
        let w: Vec<f64> = (0..n).map(|c| 0.5 + (c % 7) as f64 * 0.3).collect();
        let rhs: Vec<f64> = (0..n).map(|c| ((c * 37) % 11) as f64 - 5.0).collect();
        let dt = 0.3 * grid.h_min().powi(2);
        let y = solve_shifted(grid, &w, dt, &rhs).unwrap();
        let mut back = vec![0.0; n];
        apply(grid, &w, dt, &y, &mut back);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn shifted_solves_invert_the_operator() {
        check(&Grid::new(&BoxDomain::interval(1.0).unwrap(), 17).unwrap());
        check(&Grid::new(&BoxDomain::new(2, [1.0, 0.5]).unwrap(), 9).unwrap());
    }

    #[test]
    fn discrete_sine_is_an_eigenvector() {
        let g = Grid::new(&BoxDomain::interval(1.0).unwrap(), 32).unwrap();
        let v: Vec<f64> = g.centers().iter().map(|x| (std::f64::consts::PI * x[0]).sin()).collect();
        let mut lv = vec![0.0; 32];
        laplacian(&g, &v, &mut lv);
        let h = g.h[0];
        let lam = -4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        for (a, b) in lv.iter().zip(&v) {
            assert!((a - lam * b).abs() < 1e-10);
        }
    }
}
