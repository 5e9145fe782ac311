//! Spatial cutoffs, the boundary partition of unity, shifted mollifiers and time profiles.

use super::eta::{rho, RHO_HI, RHO_LO};
use crate::error::{Error, Result};
use crate::model::quadrature::gauss_legendre;
use crate::model::{BoxDomain, Point};

/// Smooth step `S` on `[0, 1]` with `S(0) = 0`, `S(1) = 1`, flat to all orders at both ends.
/// Returns `(S, S', S'')`.
pub fn smooth_step3(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let f = |s: f64| (-1.0 / s).exp();
    let f1 = |s: f64| f(s) / (s * s);
    let f2 = |s: f64| f(s) * (1.0 / s.powi(4) - 2.0 / s.powi(3));
    let (g, g1, g2) = (f(t), f1(t), f2(t));
    let u = 1.0 - t;
    let (h, h1, h2) = (f(u), -f1(u), f2(u));
    let d = g + h;
    let n = g1 * h - g * h1;
    let n1 = g2 * h - g * h2;
    (g / d, n / (d * d), (n1 * d - 2.0 * n * (g1 + h1)) / (d * d * d))
}

/// One-dimensional factor of a partition member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisFactor {
    /// Equal to 1 on `[0, a]`, 0 beyond `b`.
    Left { a: f64, b: f64 },
    /// Mirror of `Left` at `length`.
    Right { a: f64, b: f64, length: f64 },
    /// `1 - Left - Right`.
    Interior { a: f64, b: f64, length: f64 },
    One,
}

impl AxisFactor {
    /// `(psi, psi', psi'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            AxisFactor::Left { a, b } => {
                let w = b - a;
                let (s, s1, s2) = smooth_step3((x - a) / w);
                (1.0 - s, -s1 / w, -s2 / (w * w))
            }
            AxisFactor::Right { a, b, length } => {
                let w = b - a;
                let (s, s1, s2) = smooth_step3((length - x - a) / w);
                (1.0 - s, s1 / w, -s2 / (w * w))
            }
            AxisFactor::Interior { a, b, length } => {
                let l = AxisFactor::Left { a, b }.eval(x);
                let r = AxisFactor::Right { a, b, length }.eval(x);
                (1.0 - l.0 - r.0, -l.1 - r.1, -l.2 - r.2)
            }
            AxisFactor::One => (1.0, 0.0, 0.0),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            AxisFactor::Left { .. } => "L",
            AxisFactor::Right { .. } => "R",
            AxisFactor::Interior { .. } => "I",
            AxisFactor::One => "1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffKind {
    /// Compactly supported in `D`; vanishes with all derivatives within `margin` of the boundary.
    InteriorCompact { margin: f64 },
    /// Smooth up to the boundary, generally non-zero there.
    ClosureSmooth,
}

/// Tensor-product spatial test function `prod_i psi_i(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCutoff {
    pub dim: usize,
    pub factors: [AxisFactor; 2],
    pub kind: CutoffKind,
}

/// Value, gradient and Hessian of a cutoff at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Jet {
    pub fn laplacian(&self, dim: usize) -> f64 {
        (0..dim).map(|i| self.hess[i][i]).sum()
    }
}

impl SpatialCutoff {
    pub fn new(dim: usize, factors: [AxisFactor; 2]) -> Self {
        let interior = factors[..dim].iter().all(|f| matches!(f, AxisFactor::Interior { .. }));
        let kind = if interior {
            let margin = factors[..dim]
                .iter()
                .map(|f| match f {
                    AxisFactor::Interior { a, .. } => *a,
                    _ => unreachable!(),
                })
                .fold(f64::INFINITY, f64::min);
            CutoffKind::InteriorCompact { margin }
        } else {
            CutoffKind::ClosureSmooth
        };
        Self { dim, factors, kind }
    }

    /// The constant function 1 on `D` (closure-smooth).
    pub fn one(dim: usize) -> Self {
        Self { dim, factors: [AxisFactor::One; 2], kind: CutoffKind::ClosureSmooth }
    }

    pub fn is_interior(&self) -> bool {
        matches!(self.kind, CutoffKind::InteriorCompact { .. })
    }

    pub fn label(&self) -> String {
        self.factors[..self.dim].iter().map(|f| f.tag()).collect()
    }

    pub fn value(&self, x: Point) -> f64 {
        (0..self.dim).map(|i| self.factors[i].eval(x[i]).0).product()
    }

    pub fn jet(&self, x: Point) -> Jet {
        let e: Vec<(f64, f64, f64)> = (0..self.dim).map(|i| self.factors[i].eval(x[i])).collect();
        let mut j = Jet::default();
        if self.dim == 1 {
            j.value = e[0].0;
            j.grad[0] = e[0].1;
            j.hess[0][0] = e[0].2;
        } else {
            let (p, q) = (e[0], e[1]);
            j.value = p.0 * q.0;
            j.grad = [p.1 * q.0, p.0 * q.1];
            j.hess = [[p.2 * q.0, p.1 * q.1], [p.1 * q.1, p.0 * q.2]];
        }
        j
    }
}

/// Member of a partition of unity with its inward mollifier shift (in units of `epsilon`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMember {
    pub cutoff: SpatialCutoff,
    pub shift: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    pub domain: BoxDomain,
    pub members: Vec<PartitionMember>,
    /// Admissible mollifier scales are `epsilon < eps_bar`.
    pub eps_bar: f64,
    /// `supp rho_{eps,i} ⊂ {|x| < k_tilde eps}` for every member.
    pub k_tilde: f64,
}

/// Extra distance (in units of `epsilon`) between a shifted mollifier window and the boundary.
pub const SHIFT_MARGIN: f64 = 0.5;
// support of y -> rho~(y) per axis is [LO_SUPP, HI_SUPP]
const LO_SUPP: f64 = 0.5 + RHO_LO;
const HI_SUPP: f64 = 0.5 + RHO_HI;

fn axis_shift(f: &AxisFactor) -> f64 {
    match f {
        AxisFactor::Left { .. } => -(HI_SUPP + SHIFT_MARGIN),
        AxisFactor::Right { .. } => -LO_SUPP + SHIFT_MARGIN,
        _ => 0.0,
    }
}

/// Partition of `D` into an interior member and boundary members (`overlap` in `(0, 1/2)`).
///
/// Per axis: `psi_L = 1` on `[0, a]`, `0` beyond `b`, with `a = overlap L / 2`, `b = overlap L`;
/// `psi_R` is the mirror image and the interior factor is `1 - psi_L - psi_R`.
/// In 2D members are the nine tensor products; corners get diagonal shifts.
pub fn build_partition(domain: &BoxDomain, overlap: f64) -> Result<PartitionOfUnity> {
    if !(overlap > 0.0 && overlap < 0.5) {
        return Err(Error::Domain(format!("partition overlap must lie in (0, 1/2), got {overlap}")));
    }
    let dim = domain.dim;
    let mut per_axis: Vec<[AxisFactor; 3]> = Vec::new();
    for i in 0..dim {
        let length = domain.lengths[i];
        let (a, b) = (0.5 * overlap * length, overlap * length);
        per_axis.push([
            AxisFactor::Interior { a, b, length },
            AxisFactor::Left { a, b },
            AxisFactor::Right { a, b, length },
        ]);
    }
    let mut members = Vec::new();
    let combos: Vec<[usize; 2]> = if dim == 1 {
        (0..3).map(|i| [i, 0]).collect()
    } else {
        (0..3).flat_map(|j| (0..3).map(move |i| [i, j])).collect()
    };
    let mut eps_bar = f64::INFINITY;
    let mut k_tilde: f64 = 0.0;
    for c in combos {
        let mut factors = [AxisFactor::One; 2];
        let mut shift = [0.0; 2];
        let mut reach_sq = 0.0;
        for i in 0..dim {
            let f = per_axis[i][c[i]];
            factors[i] = f;
            shift[i] = axis_shift(&f);
            let length = domain.lengths[i];
            let (a, b) = match f {
                AxisFactor::Interior { a, b, .. } | AxisFactor::Left { a, b } | AxisFactor::Right { a, b, .. } => (a, b),
                AxisFactor::One => unreachable!(),
            };
            let (lo, hi) = (shift[i] + LO_SUPP, shift[i] + HI_SUPP);
            // y = x - eps w with w in [lo, hi] must stay in (0, L) for x in supp psi
            let (x_min, x_max) = match f {
                AxisFactor::Left { .. } => (0.0, b),
                AxisFactor::Right { .. } => (length - b, length),
                _ => (a, length - a),
            };
            let mut bound = f64::INFINITY;
            if hi > 0.0 {
                bound = bound.min(x_min / hi);
            }
            if lo < 0.0 {
                bound = bound.min((length - x_max) / -lo);
            }
            eps_bar = eps_bar.min(bound);
            reach_sq += lo.abs().max(hi.abs()).powi(2);
        }
        k_tilde = k_tilde.max(reach_sq.sqrt());
        members.push(PartitionMember { cutoff: SpatialCutoff::new(dim, factors), shift });
    }
    Ok(PartitionOfUnity { domain: *domain, members, eps_bar: 0.99 * eps_bar, k_tilde: k_tilde * (1.0 + 1e-9) })
}

impl PartitionOfUnity {
    pub fn sum(&self, x: Point) -> f64 {
        self.members.iter().map(|m| m.cutoff.value(x)).sum()
    }

    pub fn interior(&self) -> &PartitionMember {
        &self.members[0]
    }

    pub fn mollifier(&self, member: usize, eps: f64) -> Result<ShiftedMollifier> {
        if !(eps > 0.0 && eps < self.eps_bar) {
            return Err(Error::Domain(format!("mollifier scale {eps} outside (0, {})", self.eps_bar)));
        }
        Ok(ShiftedMollifier { dim: self.domain.dim, eps, shift: self.members[member].shift })
    }
}

/// `rho_{eps,i}(w) = eps^{-d} rho~(w / eps - shift)` with `rho~(x) = prod rho(x_i - 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedMollifier {
    pub dim: usize,
    pub eps: f64,
    pub shift: [f64; 2],
}

impl ShiftedMollifier {
    /// Unshifted mollifier at scale `eps`.
    pub fn centered(dim: usize, eps: f64) -> Self {
        Self { dim, eps, shift: [0.0; 2] }
    }

    /// Mollifier supported in `[-7 eps/16, 7 eps/16]^d`, symmetric about the origin.
    pub fn origin(dim: usize, eps: f64) -> Self {
        Self { dim, eps, shift: [-1.0; 2] }
    }

    pub fn eval(&self, w: Point) -> f64 {
        let mut v = self.eps.powi(-(self.dim as i32));
        for i in 0..self.dim {
            v *= rho(w[i] / self.eps - self.shift[i] - 0.5);
        }
        v
    }

    /// Per-axis closed support `[lo, hi]` of `w -> rho_{eps,i}(w)`.
    pub fn support(&self) -> [(f64, f64); 2] {
        let mut s = [(0.0, 0.0); 2];
        for i in 0..self.dim {
            s[i] = (self.eps * (self.shift[i] + LO_SUPP), self.eps * (self.shift[i] + HI_SUPP));
        }
        s
    }

    /// Tensor Gauss-Legendre integral over the support.
    pub fn integral(&self) -> f64 {
        let (gx, gw) = gauss_legendre(64);
        let s = self.support();
        let axis: Vec<Vec<(f64, f64)>> = (0..self.dim)
            .map(|i| {
                let (m, r) = (0.5 * (s[i].0 + s[i].1), 0.5 * (s[i].1 - s[i].0));
                gx.iter().zip(&gw).map(|(x, w)| (m + r * x, w * r)).collect()
            })
            .collect();
        if self.dim == 1 {
            axis[0].iter().map(|(x, w)| w * self.eval([*x, 0.0])).sum()
        } else {
            let mut t = 0.0;
            for (x, wx) in &axis[0] {
                for (y, wy) in &axis[1] {
                    t += wx * wy * self.eval([*x, *y]);
                }
            }
            t
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeShape {
    /// 1 at `t = 0`, vanishing from `T/2` on.
    Early,
    /// 1 on `[0, T/10]`, vanishing from `9T/10` on.
    Full,
    /// Supported in `[T/5, 4T/5]`, so `phi(0) = 0`.
    Window,
}

/// Non-negative smooth time profile supported in `[0, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeProfile {
    pub shape: TimeShape,
    pub horizon: f64,
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        match self.shape {
            TimeShape::Early => 1.0 - smooth_step3(2.0 * s).0,
            TimeShape::Full => 1.0 - smooth_step3((s - 0.1) / 0.8).0,
            TimeShape::Window => smooth_step3((s - 0.2) / 0.2).0 * (1.0 - smooth_step3((s - 0.6) / 0.2).0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self.shape {
            TimeShape::Early => "early",
            TimeShape::Full => "full",
            TimeShape::Window => "window",
        }
    }

    pub fn all(horizon: f64) -> Vec<TimeProfile> {
        [TimeShape::Early, TimeShape::Full, TimeShape::Window].into_iter().map(|shape| TimeProfile { shape, horizon }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_step_derivatives() {
        for i in 1..40 {
            let t = i as f64 / 40.0;
            let h = 1e-5;
            let (_, d1, d2) = smooth_step3(t);
            let fd1 = (smooth_step3(t + h).0 - smooth_step3(t - h).0) / (2.0 * h);
            let fd2 = (smooth_step3(t + h).1 - smooth_step3(t - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()));
            assert!((d2 - fd2).abs() < 1e-5 * (1.0 + d2.abs()));
        }
        assert!((smooth_step3(0.5).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partition_sums_to_one_in_1d() {
        let d = BoxDomain::interval(1.0).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        assert_eq!(p.members.len(), 3);
        for i in 0..=10 {
            let x = [i as f64 / 10.0, 0.0];
            assert!((p.sum(x) - 1.0).abs() < 1e-12);
            for m in &p.members {
                let v = m.cutoff.value(x);
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(p.interior().cutoff.is_interior());
        // interior member vanishes near the boundary
        assert_eq!(p.interior().cutoff.value([0.1, 0.0]), 0.0);
        assert!(build_partition(&d, 0.5).is_err());
        assert!(build_partition(&d, 0.0).is_err());
    }

    #[test]
    fn boundary_mollifier_windows_stay_inside() {
        for dim in [1, 2] {
            let d = BoxDomain::new(dim, [1.0, 0.7]).unwrap();
            let p = build_partition(&d, 0.25).unwrap();
            let eps = 0.5 * p.eps_bar;
            for (i, m) in p.members.iter().enumerate() {
                let moll = p.mollifier(i, eps).unwrap();
                let s = moll.support();
                for k in 0..=40 {
                    for l in 0..=(if dim == 2 { 40 } else { 0 }) {
                        let x = [k as f64 / 40.0 * d.lengths[0], l as f64 / 40.0 * d.lengths[1]];
                        if m.cutoff.value(x) == 0.0 {
                            continue;
                        }
                        for a in 0..dim {
                            // y = x - w, w in [lo, hi]
                            assert!(x[a] - s[a].1 > 0.0, "member {i} axis {a} x {x:?}");
                            assert!(x[a] - s[a].0 < d.lengths[a]);
                        }
                    }
                }
                let r = (0..dim).map(|a| s[a].0.abs().max(s[a].1.abs()).powi(2)).sum::<f64>().sqrt();
                assert!(r < p.k_tilde * eps);
                assert!((moll.integral() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn boundary_point_support_is_strictly_inside() {
        let d = BoxDomain::interval(1.0).unwrap();
        let p = build_partition(&d, 0.25).unwrap();
        let eps = 0.5 * p.eps_bar;
        let moll = p.mollifier(1, eps).unwrap();
        let s = moll.support()[0];
        // x = 0, y = 0 - w: smallest y is -hi
        assert!(-s.1 > 0.0);
        assert!(p.mollifier(1, p.eps_bar * 1.01).is_err());
    }

    #[test]
    fn cutoff_jet_matches_differences() {
        let d = BoxDomain::new(2, [1.0, 1.0]).unwrap();
        let p = build_partition(&d, 0.3).unwrap();
        let c = &p.members[4].cutoff;
        let x = [0.13, 0.52];
        let j = c.jet(x);
        let h = 1e-5;
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let fd = (c.value(xp) - c.value(xm)) / (2.0 * h);
            assert!((fd - j.grad[a]).abs() < 1e-6);
            let fd2 = (c.jet(xp).grad[1 - a] - c.jet(xm).grad[1 - a]) / (2.0 * h);
            assert!((fd2 - j.hess[a][1 - a]).abs() < 1e-5);
        }
    }

    #[test]
    fn time_profiles_vanish_at_horizon() {
        for p in TimeProfile::all(0.05) {
            assert_eq!(p.eval(0.05), 0.0);
            assert!((0..=100).all(|i| p.eval(i as f64 * 0.0005) >= 0.0));
        }
        assert_eq!(TimeProfile { shape: TimeShape::Window, horizon: 1.0 }.eval(0.0), 0.0);
        assert_eq!(TimeProfile { shape: TimeShape::Full, horizon: 1.0 }.eval(0.0), 1.0);
    }
}
