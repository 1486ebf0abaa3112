//! Layered cutoff gluing of two nodal fields.
//!
//! Given `A' ⊂⊂ A''` and `B`, the band between `A'` and `∂A''` is split into
//! `N = ⌈max(1/α, 1)/δ⌉` layers of `w` cells each. Layer `i` carries the cutoff
//! `φ_i(ν) = clamp((k_{i+1} - dist_∞(ν, A'))/w, 0, 1)` with `k_i = i w`, and the
//! layer whose glued energy is smallest is kept (first one on ties). The
//! returned report checks
//!
//! ```text
//! E(w, A' ∪ B) ≤ (1+δ)(E(u, A'') + E(v, B)) + 4/dist(A', ∂A'') Σ_S h^d |u-v| |Λ| + δ Σ_S h^d λ
//! ```
//!
//! with `S` the cells of `B ∩ A''` outside `A'`. A cell belongs to a box when it
//! is contained in the closed box; `|u - v|` is taken at the base node of each
//! cell, which is the node the discrete product rule attaches it to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::AxisBox;
use crate::scalar::Scalar;
use crate::solver::CellProblem;

/// Coercivity constant of the integrand model.
pub const ALPHA: f64 = 1.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlueReport {
    pub delta: f64,
    /// Number of candidate layers.
    pub layers: usize,
    /// Layer width in cells.
    pub width: usize,
    pub chosen: usize,
    pub layer_energies: Vec<f64>,
    /// `dist(A', ∂A'')`.
    pub dist: f64,
    /// `E(w, A' ∪ B)`.
    pub lhs: f64,
    pub energy_u: f64,
    pub energy_v: f64,
    /// `Σ_S h^d |u - v| |Λ|`.
    pub coupling: f64,
    /// `Σ_S h^d λ`.
    pub lambda_overlap: f64,
    pub overlap_cells: usize,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
}

impl GlueReport {
    pub fn holds(&self) -> bool {
        self.slack >= 0.0
    }
}

/// `N = ⌈max(1/α, 1)/δ⌉`.
pub fn layer_count(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Input(format!("δ must be positive, got {delta}")));
    }
    let x = (1.0 / ALPHA).max(1.0) / delta;
    Ok((x * (1.0 - 4.0 * f64::EPSILON)).ceil().max(1.0) as usize)
}

struct IndexBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IndexBox {
    fn new(b: &AxisBox, p_lo: &[f64], h: f64, name: &str) -> Result<Self> {
        if b.dim() != p_lo.len() || !b.is_nonempty() {
            return Err(Error::Geometry(format!("{name} must be a nonempty box of dimension {}", p_lo.len())));
        }
        let lo = b.lo.iter().zip(p_lo).map(|(x, o)| (x - o) / h).collect();
        let hi = b.hi.iter().zip(p_lo).map(|(x, o)| (x - o) / h).collect();
        Ok(Self { lo, hi })
    }

    fn contains_cell(&self, c: &[usize]) -> bool {
        c.iter()
            .enumerate()
            .all(|(k, &i)| i as f64 >= self.lo[k] - EPS && (i + 1) as f64 <= self.hi[k] + EPS)
    }

    /// `ℓ∞` distance from an index point to the box.
    fn dist(&self, nu: &[usize]) -> f64 {
        nu.iter()
            .enumerate()
            .map(|(k, &i)| (self.lo[k] - i as f64).max(i as f64 - self.hi[k]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Energy `Σ_{K ⊂ A} h^d (|D u Λ_K|/h + λ_K)` of a full nodal field on the
/// cells of `p.grid` contained in `a` (the macroscopic gradient of `p` is not
/// used).
pub fn energy_on_box<T: Scalar>(p: &CellProblem<T>, u: &[T], a: &AxisBox) -> Result<f64> {
    let g = &p.grid;
    check_len(p, u)?;
    let ib = IndexBox::new(a, g.lo(), g.h(), "box")?;
    let cells = cell_energies(p, u);
    let mut idx = vec![0usize; g.dim()];
    let mut total = 0.0;
    for (c, e) in cells.iter().enumerate() {
        g.cell_multi_index(c, &mut idx);
        if ib.contains_cell(&idx) {
            total += e;
        }
    }
    Ok(total)
}

fn check_len<T>(p: &CellProblem<T>, u: &[T]) -> Result<()> {
    let want = p.grid.num_nodes() * p.grid.m();
    if u.len() != want {
        return Err(Error::Input(format!("nodal field has length {}, grid needs {want}", u.len())));
    }
    Ok(())
}

fn cell_energies<T: Scalar>(p: &CellProblem<T>, u: &[T]) -> Vec<f64> {
    let g = &p.grid;
    let st = g.stencil();
    let (d, blk) = (st.d, st.block());
    let mut du = vec![T::zero(); st.num_cells() * blk];
    st.apply(u, &mut du);
    let (h, hd) = (g.h(), g.cell_volume());
    (0..st.num_cells())
        .map(|c| {
            let lam = p.cell_diag(c);
            let s = du[c * blk..(c + 1) * blk]
                .iter()
                .enumerate()
                .map(|(e, v)| (*v * lam[e % d]).as_f64().powi(2))
                .sum::<f64>();
            hd * (s.sqrt() / h + p.lambda[c].as_f64())
        })
        .collect()
}

fn blend<T: Scalar>(u: &[T], v: &[T], phi: &[f64], m: usize) -> Vec<T> {
    let mut w = Vec::with_capacity(u.len());
    for (node, f) in phi.iter().enumerate() {
        let f = T::of(*f);
        for a in 0..m {
            let i = node * m + a;
            w.push(f * u[i] + (T::one() - f) * v[i]);
        }
    }
    w
}

/// Glue `u` (kept on `A'`) to `v` (kept outside `A''`) with the cheapest layer.
pub fn glue_with_cutoff<T: Scalar>(
    u: &[T],
    v: &[T],
    inner: &AxisBox,
    outer: &AxisBox,
    b: &AxisBox,
    delta: f64,
    p: &CellProblem<T>,
) -> Result<(Vec<T>, GlueReport)> {
    let g = &p.grid;
    let (d, m, h, hd) = (g.dim(), g.m(), g.h(), g.cell_volume());
    check_len(p, u)?;
    check_len(p, v)?;
    let layers = layer_count(delta)?;
    let a1 = IndexBox::new(inner, g.lo(), h, "A'")?;
    let a2 = IndexBox::new(outer, g.lo(), h, "A''")?;
    let bb = IndexBox::new(b, g.lo(), h, "B")?;
    let n = g.n() as f64;
    for k in 0..d {
        if a2.lo[k] < -EPS || a2.hi[k] > n + EPS {
            return Err(Error::Geometry("A'' must lie inside the grid cube".into()));
        }
        for x in [a1.lo[k], a1.hi[k]] {
            if (x - x.round()).abs() > EPS {
                return Err(Error::Geometry("A' must have its faces on grid nodes".into()));
            }
        }
    }
    // Gap in cells; equal to the Euclidean distance to the boundary for nested boxes.
    let gap = (0..d)
        .map(|k| (a1.lo[k] - a2.lo[k]).min(a2.hi[k] - a1.hi[k]))
        .fold(f64::INFINITY, f64::min);
    if !(gap > EPS) {
        return Err(Error::Geometry("A' must be compactly contained in A''".into()));
    }
    let width = ((gap + EPS) / layers as f64).floor() as usize;
    if width == 0 {
        return Err(Error::Geometry(format!(
            "{layers} layers do not fit in a gap of {gap:.3} cells; refine the grid or increase δ"
        )));
    }
    let dist = gap * h;

    let nodes = g.num_nodes();
    let mut idx = vec![0usize; d];
    let dnode: Vec<f64> = (0..nodes)
        .map(|nu| {
            g.node_multi_index(nu, &mut idx);
            a1.dist(&idx).round()
        })
        .collect();

    let st = g.stencil();
    let cells = g.num_cells();
    let mut in_a1 = vec![false; cells];
    let mut in_a2 = vec![false; cells];
    let mut in_b = vec![false; cells];
    let mut dmin = vec![0.0f64; cells];
    let mut dmax = vec![0.0f64; cells];
    let mut corner = vec![0usize; d];
    for c in 0..cells {
        g.cell_multi_index(c, &mut idx);
        in_a1[c] = a1.contains_cell(&idx);
        in_a2[c] = a2.contains_cell(&idx);
        in_b[c] = bb.contains_cell(&idx);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for mask in 0..(1usize << d) {
            for k in 0..d {
                corner[k] = idx[k] + ((mask >> k) & 1);
            }
            let x = dnode[g.node_index(&corner)];
            lo = lo.min(x);
            hi = hi.max(x);
        }
        dmin[c] = lo;
        dmax[c] = hi;
    }
    let overlap: Vec<usize> = (0..cells).filter(|&c| in_b[c] && in_a2[c] && !in_a1[c]).collect();
    if overlap.is_empty() {
        return Err(Error::Geometry("the overlap (A'' \\ A') ∩ B contains no cells".into()));
    }

    let cutoff = |i: usize| -> Vec<f64> {
        let top = ((i + 1) * width) as f64;
        dnode.iter().map(|x| ((top - x) / width as f64).clamp(0.0, 1.0)).collect()
    };
    let mut layer_energies = Vec::with_capacity(layers);
    let mut chosen = 0;
    for i in 0..layers {
        let (lo, hi) = ((i * width) as f64, ((i + 1) * width) as f64);
        let band: Vec<usize> = overlap.iter().copied().filter(|&c| dmax[c] > lo && dmin[c] < hi).collect();
        let w = blend(u, v, &cutoff(i), m);
        let e = cell_energies_on(p, &w, &band, &st);
        if e < layer_energies.iter().copied().fold(f64::INFINITY, f64::min) {
            chosen = i;
        }
        layer_energies.push(e);
    }
    let w = blend(u, v, &cutoff(chosen), m);

    let cu = cell_energies(p, u);
    let cv = cell_energies(p, v);
    let cw = cell_energies(p, &w);
    let lhs: f64 = (0..cells).filter(|&c| in_a1[c] || in_b[c]).map(|c| cw[c]).sum();
    let energy_u: f64 = (0..cells).filter(|&c| in_a2[c]).map(|c| cu[c]).sum();
    let energy_v: f64 = (0..cells).filter(|&c| in_b[c]).map(|c| cv[c]).sum();
    let mut coupling = 0.0;
    let mut lambda_overlap = 0.0;
    for &c in &overlap {
        let base = st.base[c];
        let diff = (0..m).map(|a| (u[base * m + a] - v[base * m + a]).as_f64().powi(2)).sum::<f64>().sqrt();
        let lam = p.cell_diag(c).iter().map(|l| l.as_f64().powi(2)).sum::<f64>().sqrt();
        coupling += hd * diff * lam;
        lambda_overlap += hd * p.lambda[c].as_f64();
    }
    let rhs = (1.0 + delta) * (energy_u + energy_v) + 4.0 / dist * coupling + delta * lambda_overlap;
    let report = GlueReport {
        delta,
        layers,
        width,
        chosen,
        layer_energies,
        dist,
        lhs,
        energy_u,
        energy_v,
        coupling,
        lambda_overlap,
        overlap_cells: overlap.len(),
        rhs,
        slack: rhs - lhs,
    };
    Ok((w, report))
}

fn cell_energies_on<T: Scalar>(p: &CellProblem<T>, u: &[T], cells: &[usize], st: &crate::grid::Stencil) -> f64 {
    let (d, m) = (st.d, st.m);
    let (h, hd) = (p.grid.h(), p.grid.cell_volume());
    let mut total = 0.0;
    for &c in cells {
        let base = st.base[c];
        let lam = p.cell_diag(c);
        let mut s = 0.0;
        for a in 0..m {
            for k in 0..d {
                let diff = (u[(base + st.strides[k]) * m + a] - u[base * m + a]) * lam[k];
                s += diff.as_f64().powi(2);
            }
        }
        total += hd * (s.sqrt() / h + p.lambda[c].as_f64());
    }
    total
}
