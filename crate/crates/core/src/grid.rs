//! Uniform cube grids and the forward-difference cell gradient.
//!
//! Nodes are indexed lexicographically with axis 0 fastest, `(n+1)^d` of them;
//! cells likewise, `n^d`, and cell `K` has base node `K` (its lower corner).
//! The unit-difference operator `D` maps nodal values `u` (`m` components per
//! node) to per-cell matrices `(D u)_{K,a,k} = u_a(ν_K + e_k) - u_a(ν_K)`;
//! the physical gradient is `D u / h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cube `lo + (0, side)^d` split into `n^d` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    side: f64,
    n: usize,
    m: usize,
}

impl Grid {
    /// The cube `Q_side(center)`.
    pub fn centered(center: &[f64], side: f64, n: usize, m: usize) -> Result<Self> {
        let lo = center.iter().map(|c| c - 0.5 * side).collect();
        Self::with_corner(lo, side, n, m)
    }

    pub fn with_corner(lo: Vec<f64>, side: f64, n: usize, m: usize) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::Input("grid dimension must be >= 1".into()));
        }
        if n < 2 {
            return Err(Error::Input(format!("grid needs n >= 2 cells per side, got {n}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::Input(format!("cube side must be positive, got {side}")));
        }
        if m == 0 {
            return Err(Error::Input("component count m must be >= 1".into()));
        }
        Ok(Self { lo, side, n, m })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn h(&self) -> f64 {
        self.side / self.n as f64
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim() as i32)
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1).pow(self.dim() as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn cell_multi_index(&self, mut cell: usize, out: &mut [usize]) {
        for o in out.iter_mut().take(self.dim()) {
            *o = cell % self.n;
            cell /= self.n;
        }
    }

    pub fn node_multi_index(&self, mut node: usize, out: &mut [usize]) {
        for o in out.iter_mut().take(self.dim()) {
            *o = node % (self.n + 1);
            node /= self.n + 1;
        }
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * (self.n + 1) + i)
    }

    pub fn cell_center(&self, cell: usize, out: &mut [f64]) {
        let h = self.h();
        let mut idx = [0usize; 8];
        self.cell_multi_index(cell, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.lo[k] + (idx[k] as f64 + 0.5) * h;
        }
    }

    pub fn node_coord(&self, node: usize, out: &mut [f64]) {
        let h = self.h();
        let mut idx = [0usize; 8];
        self.node_multi_index(node, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.lo[k] + idx[k] as f64 * h;
        }
    }

    /// Operator tables shared by every solve on this grid shape.
    pub fn stencil(&self) -> Stencil {
        let d = self.dim();
        let n = self.n;
        let strides: Vec<usize> = (0..d).map(|k| (n + 1).pow(k as u32)).collect();
        let mut base = Vec::with_capacity(self.num_cells());
        let mut idx = vec![0usize; d];
        for c in 0..self.num_cells() {
            self.cell_multi_index(c, &mut idx);
            base.push(self.node_index(&idx));
        }
        let mut boundary = vec![false; self.num_nodes()];
        for (v, b) in boundary.iter_mut().enumerate() {
            self.node_multi_index(v, &mut idx);
            *b = idx.iter().any(|&i| i == 0 || i == n);
        }
        Stencil { d, m: self.m, strides, base, boundary }
    }
}

/// Index tables for `D` and `Dᵀ`.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub d: usize,
    pub m: usize,
    pub strides: Vec<usize>,
    /// Base node of each cell.
    pub base: Vec<usize>,
    pub boundary: Vec<bool>,
}

impl Stencil {
    pub fn num_cells(&self) -> usize {
        self.base.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    /// Width of one cell block in a dual array: `m·d`.
    pub fn block(&self) -> usize {
        self.m * self.d
    }

    /// `out = D u`; `out` has `m·d` entries per cell, `(a, k)` row major.
    pub fn apply<T: Scalar>(&self, u: &[T], out: &mut [T]) {
        let (m, d) = (self.m, self.d);
        for (c, &nu) in self.base.iter().enumerate() {
            let blk = &mut out[c * m * d..(c + 1) * m * d];
            for a in 0..m {
                let u0 = u[nu * m + a];
                for k in 0..d {
                    blk[a * d + k] = u[(nu + self.strides[k]) * m + a] - u0;
                }
            }
        }
    }

    /// `out = Dᵀ q` restricted to interior nodes (boundary entries are zero).
    pub fn apply_transpose<T: Scalar>(&self, q: &[T], out: &mut [T]) {
        let (m, d) = (self.m, self.d);
        out.fill(T::zero());
        for (c, &nu) in self.base.iter().enumerate() {
            let blk = &q[c * m * d..(c + 1) * m * d];
            for a in 0..m {
                let mut s = T::zero();
                for k in 0..d {
                    let v = blk[a * d + k];
                    out[(nu + self.strides[k]) * m + a] += v;
                    s += v;
                }
                out[nu * m + a] -= s;
            }
        }
        self.zero_boundary(out);
    }

    pub fn zero_boundary<T: Scalar>(&self, u: &mut [T]) {
        let m = self.m;
        for (v, &b) in self.boundary.iter().enumerate() {
            if b {
                u[v * m..(v + 1) * m].fill(T::zero());
            }
        }
    }

    /// Upper bound on `‖D‖²` for the Dirichlet unit-difference operator.
    pub fn norm_sq_bound(&self) -> f64 {
        4.0 * self.d as f64
    }
}
