//! Certified first-order solver for the discrete cell problem
//!
//! ```text
//! μ_h(ξ, Q) = min_v  Σ_K h^d ( |(G v + ξ) Λ_K| + λ_K ),   v = 0 on ∂Q,
//! ```
//!
//! where `G = D/h` is the forward-difference cell gradient of the nodal field.
//! With `u = v / (h|ξ|)` and `ξ̂ = ξ/|ξ|` the `u`-dependent part becomes
//! `|ξ| h^d Σ_K |(D u + ξ̂) Λ_K|`, which is solved by primal–dual hybrid gradient
//! iterations on the saddle function `Σ_K ⟨q_K, (D u)_K + ξ̂⟩` with
//! `q_K` in the ellipsoid `{ |q Λ_K⁻¹| ≤ 1 }`.
//!
//! Certificate: any `q` with `Dᵀq = 0` on interior nodes and `q_K` in its
//! ellipsoid gives the lower bound `Σ_K ⟨q_K, ξ̂⟩`. The current dual iterate is
//! made feasible by an `L²` projection onto `ker Dᵀ` (a Dirichlet Laplace solve)
//! followed by a global rescaling into the ellipsoids. The same Laplace solve
//! preconditions the primal step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Stencil};
use crate::integrand::{IntegrandModel, Matrix};
use crate::poisson::DirichletPoisson;
use crate::scalar::Scalar;

/// Discretized cell problem: weights are sampled at cell centers.
#[derive(Debug, Clone)]
pub struct CellProblem<T> {
    pub grid: Grid,
    pub xi: Matrix<T>,
    /// Diagonal of `Λ_K`, `d` entries per cell.
    pub diag: Vec<T>,
    /// `λ_K`, one entry per cell (zeros when the model omits `λ`).
    pub lambda: Vec<T>,
}

/// Fill per-cell weights of `model` on `grid`.
pub fn assemble<T: Scalar>(model: &IntegrandModel, grid: &Grid, xi: &Matrix<T>) -> Result<CellProblem<T>> {
    let d = grid.dim();
    if model.dim() != d {
        return Err(Error::Input(format!("field dimension {} does not match grid dimension {d}", model.dim())));
    }
    if model.m != grid.m() {
        return Err(Error::Input(format!("model has m = {}, grid has m = {}", model.m, grid.m())));
    }
    let cells = grid.num_cells();
    let mut diag = Vec::with_capacity(cells * d);
    let mut lambda = Vec::with_capacity(cells);
    let mut x = vec![0.0; d];
    let mut w = vec![0.0; d];
    for c in 0..cells {
        grid.cell_center(c, &mut x);
        model.field.diag_at(&x, &mut w);
        diag.extend(w.iter().map(|v| T::of(*v)));
        lambda.push(if model.include_lambda { T::of(model.field.lambda_at(&x)) } else { T::zero() });
    }
    CellProblem::from_weights(grid.clone(), xi.clone(), diag, lambda)
}

impl<T: Scalar> CellProblem<T> {
    /// Problem with explicit per-cell weights.
    pub fn from_weights(grid: Grid, xi: Matrix<T>, diag: Vec<T>, lambda: Vec<T>) -> Result<Self> {
        let (d, cells) = (grid.dim(), grid.num_cells());
        if xi.rows() != grid.m() || xi.cols() != d {
            return Err(Error::Input(format!(
                "ξ must be {}×{d}, got {}×{}",
                grid.m(),
                xi.rows(),
                xi.cols()
            )));
        }
        if !xi.is_finite() {
            return Err(Error::Input("ξ has non-finite entries".into()));
        }
        if diag.len() != cells * d || lambda.len() != cells {
            return Err(Error::Input("weight arrays do not match the grid".into()));
        }
        if diag.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::Input("cell weights must be finite and positive".into()));
        }
        Ok(Self { grid, xi, diag, lambda })
    }

    pub fn cell_diag(&self, cell: usize) -> &[T] {
        let d = self.grid.dim();
        &self.diag[cell * d..(cell + 1) * d]
    }

    /// Same grid and weights, different macroscopic gradient.
    pub fn with_xi(&self, xi: Matrix<T>) -> Result<Self> {
        Self::from_weights(self.grid.clone(), xi, self.diag.clone(), self.lambda.clone())
    }

    /// Discrete energy of the perturbation `v` (nodal, `m` components per node,
    /// zero on the boundary): `Σ_K h^d (|(G v + ξ) Λ_K| + λ_K)`.
    pub fn energy(&self, v: &[T]) -> f64 {
        let st = self.grid.stencil();
        let h = T::of(self.grid.h());
        let blk = st.block();
        let mut dv = vec![T::zero(); st.num_cells() * blk];
        st.apply(v, &mut dv);
        let xi = self.xi.as_slice();
        let d = self.grid.dim();
        let mut total = 0.0;
        for c in 0..st.num_cells() {
            let lam = self.cell_diag(c);
            let mut s = T::zero();
            for (e, g) in dv[c * blk..(c + 1) * blk].iter().enumerate() {
                let w = (*g / h + xi[e]) * lam[e % d];
                s += w * w;
            }
            total += s.sqrt().as_f64() + self.lambda[c].as_f64();
        }
        total * self.grid.cell_volume()
    }
}

// Euclidean projection of `y` onto { p : Σ_{a,k} p_{ak}² / Λ_k² ≤ 1 }.
// Outside the ellipsoid p_{ak} = y_{ak} Λ_k² / (Λ_k² + μ) where μ > 0 solves
// φ(μ) = Σ y_{ak}² Λ_k² / (Λ_k² + μ)² - 1 = 0; φ is convex and decreasing, so
// Newton from μ = 0 increases monotonically to the root. A bisection bracket
// guards against roundoff.
pub(crate) fn project_ellipsoid<T: Scalar>(y: &mut [T], diag: &[T], d: usize) {
    let mut q = T::zero();
    for (e, v) in y.iter().enumerate() {
        let l = diag[e % d];
        q += (*v * *v) / (l * l);
    }
    if q <= T::one() {
        return;
    }
    let iso = diag[..d].iter().all(|l| *l == diag[0]);
    if iso {
        let s = T::one() / q.sqrt();
        y.iter_mut().for_each(|v| *v *= s);
        return;
    }
    let ynorm = y.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let lmax = diag[..d].iter().fold(T::zero(), |a, b| a.max(*b));
    let (mut lo, mut hi) = (T::zero(), lmax * ynorm);
    let mut mu = T::zero();
    let two = T::of(2.0);
    let tol = T::epsilon() * T::of(16.0);
    for _ in 0..100 {
        let (mut phi, mut dphi) = (-T::one(), T::zero());
        for (e, v) in y.iter().enumerate() {
            let l2 = diag[e % d] * diag[e % d];
            let den = l2 + mu;
            let t = *v * *v * l2 / (den * den);
            phi += t;
            dphi -= two * t / den;
        }
        if phi.abs() <= tol {
            break;
        }
        if phi > T::zero() {
            lo = mu;
        } else {
            hi = mu;
        }
        let mut next = mu - phi / dphi;
        if !(next > lo && next < hi) {
            next = T::of(0.5) * (lo + hi);
        }
        if (next - mu).abs() <= tol * (T::one() + mu) {
            mu = next;
            break;
        }
        mu = next;
    }
    let mut q = T::zero();
    for (e, v) in y.iter_mut().enumerate() {
        let l2 = diag[e % d] * diag[e % d];
        *v = *v * l2 / (l2 + mu);
        q += (*v * *v) / l2;
    }
    if q > T::one() {
        let s = T::one() / q.sqrt();
        y.iter_mut().for_each(|v| *v *= s);
    }
}

/// Primal update rule of the primal–dual iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Primal step preconditioned by `(Dᵀ D)⁻¹`; step sizes obey `τ σ < 1`.
    Preconditioned,
    /// Plain gradient step; step sizes obey `τ σ ‖D‖² < 1` with `‖D‖² ≤ 4d`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target relative gap `(primal - dual) / max(1, |primal|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between certificate evaluations (plain method only; the
    /// preconditioned method certifies every iteration).
    pub check_every: usize,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-5, max_iter: 100_000, check_every: 50, method: Method::Preconditioned }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport<T> {
    /// Energy of the returned minimizer.
    pub primal: f64,
    /// Certified lower bound on the discrete minimum.
    pub dual: f64,
    /// `(primal - dual) / max(1, |primal|)`.
    pub gap: f64,
    pub iterations: usize,
    /// False when `max_iter` was reached before `gap <= tol`.
    pub converged: bool,
    /// Relative residual `|Dᵀ q̃| / |Dᵀ q|` of the certifying dual.
    pub dual_residual: f64,
    /// Minimizing perturbation `v`, nodal, `m` components per node.
    pub minimizer: Vec<T>,
    pub wall_time_s: f64,
}

impl<T> SolveReport<T> {
    pub fn is_certified(&self, tol: f64) -> bool {
        self.converged && self.dual <= self.primal && self.gap <= tol
    }
}

fn primal_value<T: Scalar>(st: &Stencil, du: &[T], diag: &[T], xi: &[T]) -> f64 {
    let (d, blk) = (st.d, st.block());
    let mut total = 0.0;
    for c in 0..st.num_cells() {
        let lam = &diag[c * d..(c + 1) * d];
        let mut s = T::zero();
        for e in 0..blk {
            let w = (du[c * blk + e] + xi[e]) * lam[e % d];
            s += w * w;
        }
        total += s.sqrt().as_f64();
    }
    total
}

/// Iteration state shared by both update rules.
struct Engine<'a, T> {
    st: Stencil,
    poisson: DirichletPoisson,
    diag: &'a [T],
    xi: Vec<T>,
    q: Vec<T>,
    // f64 scratch for the Poisson solve
    rhs: Vec<f64>,
    phi: Vec<f64>,
    phi_t: Vec<T>,
    nodes_t: Vec<T>,
    cells_t: Vec<T>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    /// `φ = (Dᵀ D)⁻¹ Dᵀ q` into `phi_t`, and `D φ` into `cells_t`.
    fn project_dual(&mut self) -> f64 {
        self.st.apply_transpose(&self.q, &mut self.nodes_t);
        let mut bnorm = 0.0;
        for (r, v) in self.rhs.iter_mut().zip(&self.nodes_t) {
            *r = v.as_f64();
            bnorm += *r * *r;
        }
        self.poisson.solve(&self.rhs, &mut self.phi);
        for (a, b) in self.phi_t.iter_mut().zip(&self.phi) {
            *a = T::of(*b);
        }
        self.st.apply(&self.phi_t, &mut self.cells_t);
        bnorm.sqrt()
    }

    /// Lower bound from `q - Dφ` (requires a preceding `project_dual`).
    fn certificate(&mut self, bnorm: f64) -> (f64, f64) {
        let (d, blk) = (self.st.d, self.st.block());
        let mut scale = 1.0f64;
        let mut obj = 0.0;
        let mut feasible = std::mem::take(&mut self.cells_t);
        for c in 0..self.st.num_cells() {
            let lam = &self.diag[c * d..(c + 1) * d];
            let mut nrm = 0.0;
            for e in 0..blk {
                let v = (self.q[c * blk + e] - feasible[c * blk + e]).as_f64();
                let l = lam[e % d].as_f64();
                nrm += v * v / (l * l);
                obj += v * self.xi[e].as_f64();
                feasible[c * blk + e] = T::of(v);
            }
            scale = scale.max(nrm.sqrt());
        }
        self.st.apply_transpose(&feasible, &mut self.nodes_t);
        let res = self.nodes_t.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        // restore Dφ for the caller
        for (f, q) in feasible.iter_mut().zip(&self.q) {
            *f = *q - *f;
        }
        self.cells_t = feasible;
        (obj / scale, if bnorm > 0.0 { res / bnorm } else { 0.0 })
    }
}

/// Minimize the discrete cell energy to relative gap `opts.tol`.
pub fn solve_cell<T: Scalar>(p: &CellProblem<T>, opts: &SolveOptions) -> Result<SolveReport<T>> {
    if !(opts.tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let start = Instant::now();
    let grid = &p.grid;
    let st = grid.stencil();
    let (d, blk) = (st.d, st.block());
    let (nodes, cells) = (st.num_nodes() * st.m, st.num_cells() * blk);
    let hd = grid.cell_volume();
    let lambda_sum: f64 = p.lambda.iter().map(|v| v.as_f64()).sum();
    let xi_norm = p.xi.norm();
    let scale = xi_norm.as_f64();
    let energies = |primal_hat: f64, dual_hat: f64| {
        let primal = hd * (scale * primal_hat + lambda_sum);
        // roundoff can push an exact certificate a few ulps above the primal
        let mut dual = hd * (scale * dual_hat + lambda_sum);
        if dual > primal && dual - primal <= 1e-12 * primal.abs().max(1.0) {
            dual = primal;
        }
        (primal, dual, ((primal - dual) / primal.abs().max(1.0)).max(0.0))
    };
    let finish = |primal_hat: f64, dual_hat: f64, iterations, converged, residual, u: Vec<T>| {
        let (primal, dual, gap) = energies(primal_hat, dual_hat);
        let h = T::of(grid.h());
        SolveReport {
            primal,
            dual,
            gap,
            iterations,
            converged,
            dual_residual: residual,
            minimizer: u.into_iter().map(|v| v * h * xi_norm).collect(),
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    };

    if xi_norm == T::zero() {
        return Ok(finish(0.0, 0.0, 0, true, 0.0, vec![T::zero(); nodes]));
    }
    let xi: Vec<T> = p.xi.as_slice().iter().map(|v| *v / xi_norm).collect();
    let diag = &p.diag[..];

    // Dual start: the subgradient of each cell term at u = 0.
    let mut q = vec![T::zero(); cells];
    for c in 0..st.num_cells() {
        let lam = &diag[c * d..(c + 1) * d];
        let mut s = T::zero();
        for e in 0..blk {
            let w = xi[e] * lam[e % d];
            s += w * w;
        }
        let s = s.sqrt();
        for e in 0..blk {
            q[c * blk + e] = xi[e] * lam[e % d] * lam[e % d] / s;
        }
    }

    let mean_weight = diag.iter().map(|v| v.as_f64()).sum::<f64>() / diag.len() as f64;
    let theta = 0.99;
    let beta = match opts.method {
        // Empirical choice: concentration along a line favours long primal
        // steps in one dimension.
        Method::Preconditioned if d == 1 => (0.25 * grid.n() as f64).max(3.0) / mean_weight,
        Method::Preconditioned => 3.0 / mean_weight,
        Method::Plain => 0.5 * grid.n() as f64 / (mean_weight * st.norm_sq_bound().sqrt()),
    };
    let step_norm = match opts.method {
        Method::Preconditioned => 1.0,
        Method::Plain => st.norm_sq_bound().sqrt(),
    };
    let steps = |beta: f64| (T::of(theta * beta / step_norm), T::of(theta / (beta * step_norm)));
    let (tau, sigma) = steps(beta);
    let check_every = match opts.method {
        Method::Preconditioned => 1,
        Method::Plain => opts.check_every.max(1),
    };

    let mut eng = Engine {
        poisson: DirichletPoisson::new(grid),
        diag,
        xi,
        q,
        rhs: vec![0.0; nodes],
        phi: vec![0.0; nodes],
        phi_t: vec![T::zero(); nodes],
        nodes_t: vec![T::zero(); nodes],
        cells_t: vec![T::zero(); cells],
        st,
    };

    let two = T::of(2.0);
    let mut u = vec![T::zero(); nodes];
    let mut u_prev = vec![T::zero(); nodes];
    let mut du = vec![T::zero(); cells];
    let mut dubar = vec![T::zero(); cells];
    let mut gq = vec![T::zero(); nodes];
    let mut best_primal = f64::INFINITY;
    let mut best_u = u.clone();
    let mut best_dual = f64::NEG_INFINITY;
    let mut residual = 0.0;
    let mut iter = 0;
    let mut projected: Option<f64> = None;
    loop {
        if iter % check_every == 0 || iter >= opts.max_iter {
            eng.st.apply(&u, &mut du);
            let pv = primal_value(&eng.st, &du, diag, &eng.xi);
            if pv < best_primal {
                best_primal = pv;
                best_u.copy_from_slice(&u);
            }
            let bnorm = match projected {
                Some(b) => b,
                None => eng.project_dual(),
            };
            let (dv, res) = eng.certificate(bnorm);
            if dv > best_dual {
                best_dual = dv;
                residual = res;
            }
            let (_, _, gap) = energies(best_primal, best_dual);
            if gap <= opts.tol {
                return Ok(finish(best_primal, best_dual, iter, true, residual, best_u));
            }
            if iter >= opts.max_iter {
                return Ok(finish(best_primal, best_dual, iter, false, residual, best_u));
            }
        }
        projected = None;

        // Dual ascent at the extrapolated primal point.
        for c in 0..eng.st.num_cells() {
            let y = &mut eng.q[c * blk..(c + 1) * blk];
            for e in 0..blk {
                y[e] += sigma * (dubar[c * blk + e] + eng.xi[e]);
            }
            project_ellipsoid(y, &diag[c * d..(c + 1) * d], d);
        }
        std::mem::swap(&mut u, &mut u_prev);
        match opts.method {
            Method::Preconditioned => {
                projected = Some(eng.project_dual());
                for i in 0..nodes {
                    u[i] = u_prev[i] - tau * eng.phi_t[i];
                }
            }
            Method::Plain => {
                eng.st.apply_transpose(&eng.q, &mut gq);
                for i in 0..nodes {
                    u[i] = u_prev[i] - tau * gq[i];
                }
            }
        }
        for i in 0..nodes {
            gq[i] = two * u[i] - u_prev[i];
        }
        eng.st.apply(&gq, &mut dubar);
        iter += 1;
    }
}

/// Map from cube side `t` to cells per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionPolicy {
    pub cells_per_unit: f64,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self { cells_per_unit: 2.0 }
    }
}

impl ResolutionPolicy {
    pub fn cells(&self, t: f64) -> Result<usize> {
        let n = (self.cells_per_unit * t).round();
        if !(n >= 2.0) || !n.is_finite() {
            return Err(Error::Input(format!(
                "resolution gives {n} cells for t = {t}; need at least 2"
            )));
        }
        Ok(n as usize)
    }
}

/// Normalized cell energy with its solver report.
#[derive(Debug, Clone)]
pub struct CellEnergy<T> {
    /// `μ_h(ξ, Q_t) / t^d`.
    pub value: f64,
    pub report: SolveReport<T>,
}

/// `μ_ξ(ω, Q_t(center)) / t^d` on the grid chosen by `policy`.
pub fn mu_xi_at<T: Scalar>(
    model: &IntegrandModel,
    xi: &Matrix<T>,
    center: &[f64],
    t: f64,
    policy: &ResolutionPolicy,
    opts: &SolveOptions,
) -> Result<CellEnergy<T>> {
    let grid = Grid::centered(center, t, policy.cells(t)?, model.m)?;
    mu_xi_on(model, xi, &grid, opts)
}

/// `μ_ξ(ω, Q_t(0)) / t^d`.
pub fn mu_xi<T: Scalar>(
    model: &IntegrandModel,
    xi: &Matrix<T>,
    t: f64,
    policy: &ResolutionPolicy,
    opts: &SolveOptions,
) -> Result<CellEnergy<T>> {
    mu_xi_at(model, xi, &vec![0.0; model.dim()], t, policy, opts)
}

pub fn mu_xi_on<T: Scalar>(model: &IntegrandModel, xi: &Matrix<T>, grid: &Grid, opts: &SolveOptions) -> Result<CellEnergy<T>> {
    let p = assemble(model, grid, xi)?;
    let report = solve_cell(&p, opts)?;
    let vol = grid.side().powi(grid.dim() as i32);
    Ok(CellEnergy { value: report.primal / vol, report })
}
