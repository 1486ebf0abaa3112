//! Exact Dirichlet Poisson solves for `Dᵀ D` on a cube grid.
//!
//! On interior nodes `Dᵀ D` is the standard `(2d+1)`-point Laplacian with
//! homogeneous Dirichlet data, diagonalized by the type-I discrete sine
//! transform along every axis. Eigenvalues are `Σ_k 2 - 2 cos(π j_k / n)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

pub struct DirichletPoisson {
    d: usize,
    m: usize,
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    eig1: Vec<f64>,
    interior: Vec<f64>,
    line: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl DirichletPoisson {
    pub fn new(grid: &Grid) -> Self {
        let (d, m, n) = (grid.dim(), grid.m(), grid.n());
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        let eig1 = (1..n)
            .map(|j| 2.0 - 2.0 * (std::f64::consts::PI * j as f64 / n as f64).cos())
            .collect();
        let scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Self {
            d,
            m,
            n,
            fft,
            eig1,
            interior: vec![0.0; (n - 1).pow(d as u32) * m],
            line: vec![Complex::new(0.0, 0.0); 2 * n],
            scratch,
        }
    }

    // In-place unnormalized DST-I along `axis` of the interior array.
    fn dst_axis(&mut self, axis: usize) {
        let (n, m) = (self.n, self.m);
        let len = n - 1;
        let stride = len.pow(axis as u32) * m;
        let total = self.interior.len();
        let block = stride * len;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                self.line[0] = Complex::new(0.0, 0.0);
                self.line[n] = Complex::new(0.0, 0.0);
                for j in 0..len {
                    let v = self.interior[base + j * stride];
                    self.line[j + 1] = Complex::new(v, 0.0);
                    self.line[2 * n - 1 - j] = Complex::new(-v, 0.0);
                }
                self.fft.process_with_scratch(&mut self.line, &mut self.scratch);
                for j in 0..len {
                    self.interior[base + j * stride] = -0.5 * self.line[j + 1].im;
                }
            }
        }
    }

    /// Solve `Dᵀ D φ = b` for interior nodes. `b` and `phi` use the full nodal
    /// layout (`m` components per node); boundary entries of `phi` are zero.
    pub fn solve(&mut self, b: &[f64], phi: &mut [f64]) {
        let (d, m, n) = (self.d, self.m, self.n);
        let len = n - 1;
        let np = n + 1;
        let count = len.pow(d as u32);
        let mut idx = vec![0usize; d];
        let node_of = |idx: &[usize]| idx.iter().rev().fold(0, |acc, &i| acc * np + i + 1);
        for p in 0..count {
            let mut r = p;
            for i in idx.iter_mut() {
                *i = r % len;
                r /= len;
            }
            let node = node_of(&idx);
            self.interior[p * m..(p + 1) * m].copy_from_slice(&b[node * m..(node + 1) * m]);
        }
        for axis in 0..d {
            self.dst_axis(axis);
        }
        let norm = (2.0 / n as f64).powi(d as i32);
        for p in 0..count {
            let mut r = p;
            let mut ev = 0.0;
            for _ in 0..d {
                ev += self.eig1[r % len];
                r /= len;
            }
            let s = norm / ev;
            for v in &mut self.interior[p * m..(p + 1) * m] {
                *v *= s;
            }
        }
        for axis in 0..d {
            self.dst_axis(axis);
        }
        phi.fill(0.0);
        for p in 0..count {
            let mut r = p;
            for i in idx.iter_mut() {
                *i = r % len;
                r /= len;
            }
            let node = node_of(&idx);
            phi[node * m..(node + 1) * m].copy_from_slice(&self.interior[p * m..(p + 1) * m]);
        }
    }
}
