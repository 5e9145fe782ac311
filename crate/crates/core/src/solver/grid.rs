//! Cell-centred tensor grids on a box.

use crate::error::{Error, Result};
use crate::model::{BoxDomain, Point};

/// `J` cells per axis, centres at `(j + 1/2) h`. Cell `(ix, iy)` has
/// linear index `iy * J + ix`. Cells tile `D` exactly, so the discrete
/// measure of a constant is `c |D|` with no boundary correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub cells: usize,
    pub h: [f64; 2],
    pub lengths: [f64; 2],
}

impl Grid {
    pub fn new(domain: &BoxDomain, cells: usize) -> Result<Self> {
        if cells < 4 {
            return Err(Error::Config(format!("grid needs at least 4 cells per axis, got {cells}")));
        }
        let mut h = [1.0; 2];
        for i in 0..domain.dim {
            h[i] = domain.lengths[i] / cells as f64;
        }
        Ok(Self { dim: domain.dim, cells, h, lengths: domain.lengths })
    }

    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    pub fn h_min(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn multi(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.cells, idx / self.cells]
        }
    }

    pub fn index(&self, m: [usize; 2]) -> usize {
        if self.dim == 1 {
            m[0]
        } else {
            m[1] * self.cells + m[0]
        }
    }

    pub fn center(&self, idx: usize) -> Point {
        let m = self.multi(idx);
        let mut x = [0.0; 2];
        for i in 0..self.dim {
            x[i] = (m[i] as f64 + 0.5) * self.h[i];
        }
        x
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|c| self.center(c)).collect()
    }

    /// Neighbour of `idx` along `axis`, or `None` across the boundary.
    #[inline]
    pub fn step(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut m = self.multi(idx);
        if forward {
            if m[axis] + 1 >= self.cells {
                return None;
            }
            m[axis] += 1;
        } else {
            if m[axis] == 0 {
                return None;
            }
            m[axis] -= 1;
        }
        Some(self.index(m))
    }

    /// Centre of the face of `idx` on the low (`forward = false`) or high side of `axis`.
    pub fn face(&self, idx: usize, axis: usize, forward: bool) -> Point {
        let mut x = self.center(idx);
        x[axis] += if forward { 0.5 } else { -0.5 } * self.h[axis];
        x
    }

    /// `sum_c v_c h^d`.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        v.iter().sum::<f64>() * self.cell_volume()
    }
}
