//! Discrete check of `d_x [[a f]](u) = f(u) d_x [[a]](u)`.

use crate::model::quadrature::{default_tolerance, integrate};
use crate::model::CoefficientSet;
use crate::solver::Trajectory;

/// `L2(D_T)` norm of `D^+ [[a f]](u) - f(u) D^+ [[a]](u)` over all faces and steps.
///
/// Forward face differences (boundary faces against the value 0 at distance
/// `h/2`), so the mismatch is first order in `h` for smooth trajectories and
/// exactly zero for `f = 1`. Both brackets use the same quadrature.
pub fn check_chain_rule(traj: &Trajectory, f: &dyn Fn(f64) -> f64, coeffs: &CoefficientSet) -> f64 {
    let grid = &traj.grid;
    let phi = &coeffs.phi;
    let vol = grid.cell_volume();
    let bracket = |g: &dyn Fn(f64) -> f64, r: f64| integrate(g, 0.0, r, default_tolerance(r)).unwrap_or(f64::NAN);
    let mut total = 0.0;
    for (k, s) in traj.snapshots.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let dt = (s.t - traj.snapshots[k - 1].t).abs();
        let af: Vec<f64> = s.u.iter().map(|&r| bracket(&|v| phi.a(v) * f(v), r)).collect();
        let a: Vec<f64> = s.u.iter().map(|&r| bracket(&|v| phi.a(v), r)).collect();
        let mut sum = 0.0;
        for c in 0..grid.len() {
            let fc = f(s.u[c]);
            for axis in 0..grid.dim {
                let h = grid.h[axis];
                let (d_af, d_a, w) = match grid.step(c, axis, true) {
                    Some(n) => ((af[n] - af[c]) / h, (a[n] - a[c]) / h, 1.0),
                    None => (-af[c] / (0.5 * h), -a[c] / (0.5 * h), 0.5),
                };
                sum += w * (d_af - fc * d_a).powi(2) * vol;
                if grid.step(c, axis, false).is_none() {
                    let (d_af, d_a) = (af[c] / (0.5 * h), a[c] / (0.5 * h));
                    sum += 0.5 * (d_af - fc * d_a).powi(2) * vol;
                }
            }
        }
        total += dt * sum;
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxDomain, DiffusionNonlinearity, DriftFields, InitialDatum, NoiseField, ProblemSpec};
    use crate::noise::NoisePath;
    use crate::solver::{solve_path, SolverConfig};

    fn heat_run(cells: usize) -> (Trajectory, CoefficientSet) {
        let d = BoxDomain::interval(1.0).unwrap();
        let phi = DiffusionNonlinearity::linear(1.0, 2.0, 1.0).unwrap();
        let c = CoefficientSet::new(phi, &NoiseField::zero(1), &DriftFields::zero(1)).unwrap();
        let spec = ProblemSpec::new(d, 0.02, c, InitialDatum::sine(d, 1.0)).unwrap();
        let mut cfg = SolverConfig::new(cells);
        cfg.snapshot_every = 10;
        let traj = solve_path(&spec, 4, &NoisePath::zeros(200, 0, 1e-4), &cfg).unwrap();
        (traj, spec.coefficients.regularized(4).unwrap())
    }

    #[test]
    fn unit_function_gives_exact_zero() {
        let (traj, c) = heat_run(32);
        assert_eq!(check_chain_rule(&traj, &|_| 1.0, &c), 0.0);
    }

    #[test]
    fn mismatch_halves_under_refinement() {
        let m: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&j| {
                let (traj, c) = heat_run(j);
                check_chain_rule(&traj, &|r: f64| r.cos(), &c)
            })
            .collect();
        for w in m.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..=2.4).contains(&ratio), "{m:?}");
        }
    }
}
