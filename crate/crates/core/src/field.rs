//! Stationary random weight fields on unit cells and the shift action.
//!
//! A realization assigns to every integer cell `k ∈ ℤ^d` a positive diagonal
//! weight `Λ_k` and an optional nonnegative lower-order value `λ_k`. Values are
//! computed on demand from `(seed, index, cell, slot)` through the keyed
//! generator in [`crate::rng`], so evaluation is pure and order independent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::error::{Error, Result};
use crate::rng;

const LAMBDA_SLOT: u64 = u64::MAX;
const OFFSET_SLOT: u64 = u64::MAX - 1;

/// Law of the diagonal of `Λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Diagonal {
    /// `Λ = a·I` with a single scalar weight per cell.
    Isotropic(DistributionSpec),
    /// Independent entries, one law per diagonal slot.
    PerEntry(Vec<DistributionSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    /// Independent values on every unit cube.
    IidCubes,
    /// Values depend on `x_axis` only; `axis` is 1-based.
    Laminate { axis: usize },
    /// Deterministic tile repeated over `ℤ^d`. `weights` holds one entry per
    /// tile cell (axis 0 fastest); each entry has length 1 (isotropic) or `d`.
    Periodic {
        tile: Vec<usize>,
        weights: Vec<Vec<f64>>,
        #[serde(default)]
        lambda: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    pub structure: Structure,
    /// Required unless the structure is periodic.
    #[serde(default)]
    pub diagonal: Option<Diagonal>,
    /// Law of `λ`; absent means `λ ≡ 0`.
    #[serde(default)]
    pub lambda: Option<DistributionSpec>,
    /// Draw a uniform offset in `[0,1)^d` per realization.
    #[serde(default)]
    pub random_offset: bool,
}

impl FieldSpec {
    pub fn iid(dim: usize, diagonal: Diagonal) -> Self {
        Self {
            dim,
            structure: Structure::IidCubes,
            diagonal: Some(diagonal),
            lambda: None,
            random_offset: false,
        }
    }

    pub fn laminate(dim: usize, axis: usize, diagonal: Diagonal) -> Self {
        Self {
            dim,
            structure: Structure::Laminate { axis },
            diagonal: Some(diagonal),
            lambda: None,
            random_offset: false,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::iid(dim, Diagonal::Isotropic(DistributionSpec::Constant { c }))
    }

    pub fn with_lambda(mut self, lambda: DistributionSpec) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// Collect every violated invariant.
    pub fn validation_errors(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        let d = self.dim;
        if d == 0 {
            errs.push(Error::config("field.dim", "dimension must be >= 1"));
        }
        match &self.structure {
            Structure::IidCubes => {}
            Structure::Laminate { axis } => {
                if *axis == 0 || *axis > d {
                    errs.push(Error::config(
                        "field.structure.axis",
                        format!("laminate axis must lie in 1..={d}, got {axis}"),
                    ));
                }
            }
            Structure::Periodic { tile, weights, lambda } => {
                if tile.len() != d || tile.iter().any(|&n| n == 0) {
                    errs.push(Error::config(
                        "field.structure.tile",
                        format!("tile must list {d} positive integers, got {tile:?}"),
                    ));
                } else {
                    let cells: usize = tile.iter().product();
                    if weights.len() != cells {
                        errs.push(Error::config(
                            "field.structure.weights",
                            format!("expected {cells} tile entries, got {}", weights.len()),
                        ));
                    }
                    for (i, w) in weights.iter().enumerate() {
                        if w.len() != 1 && w.len() != d {
                            errs.push(Error::config(
                                "field.structure.weights",
                                format!("entry {i} must have length 1 or {d}"),
                            ));
                        }
                        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                            errs.push(Error::config(
                                "field.structure.weights",
                                format!("entry {i} must be finite and positive"),
                            ));
                        }
                    }
                    if let Some(l) = lambda {
                        if l.len() != cells || l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                            errs.push(Error::config(
                                "field.structure.lambda",
                                format!("expected {cells} finite nonnegative values"),
                            ));
                        }
                    }
                }
            }
        }
        let periodic = matches!(self.structure, Structure::Periodic { .. });
        match &self.diagonal {
            None if !periodic => errs.push(Error::config("field.diagonal", "missing weight law")),
            None => {}
            Some(Diagonal::Isotropic(law)) => {
                if let Err(e) = law.validate("field.diagonal") {
                    errs.push(e);
                }
            }
            Some(Diagonal::PerEntry(laws)) => {
                if laws.len() != d {
                    errs.push(Error::config(
                        "field.diagonal",
                        format!("per_entry needs {d} laws, got {}", laws.len()),
                    ));
                }
                for (j, law) in laws.iter().enumerate() {
                    if let Err(e) = law.validate(&format!("field.diagonal[{}]", j + 1)) {
                        errs.push(e);
                    }
                }
            }
        }
        if let Some(l) = &self.lambda {
            if let Err(e) = l.validate("field.lambda") {
                errs.push(e);
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.structure, Structure::Periodic { .. })
    }

    pub fn has_lambda(&self) -> bool {
        self.lambda.is_some()
            || matches!(&self.structure, Structure::Periodic { lambda: Some(_), .. })
    }

    /// Whether `Λ` is a multiple of the identity everywhere.
    pub fn is_isotropic(&self) -> bool {
        match &self.structure {
            Structure::Periodic { weights, .. } => weights
                .iter()
                .all(|w| w.len() == 1 || w.iter().all(|v| *v == w[0])),
            _ => matches!(self.diagonal, Some(Diagonal::Isotropic(_))),
        }
    }
}

/// One realization `ω` of the field, possibly shifted by `τ_z`.
#[derive(Debug, Clone)]
pub struct FieldSample {
    spec: Arc<FieldSpec>,
    seed: u64,
    index: u64,
    shift: Vec<f64>,
    offset: Vec<f64>,
}

/// Build realization `index` of `spec` under `seed`, with zero shift.
pub fn sample_field(spec: &FieldSpec, seed: u64, index: u64) -> Result<FieldSample> {
    spec.validate()?;
    let d = spec.dim;
    let offset = if spec.random_offset {
        (0..d)
            .map(|k| rng::uniform(seed, &[index, OFFSET_SLOT, k as u64]).min(1.0 - f64::EPSILON))
            .collect()
    } else {
        vec![0.0; d]
    };
    Ok(FieldSample {
        spec: Arc::new(spec.clone()),
        seed,
        index,
        shift: vec![0.0; d],
        offset,
    })
}

/// `τ_z f`: the field evaluated at `x` equals `f` at `x + z`.
pub fn shift(f: &FieldSample, z: &[f64]) -> FieldSample {
    assert_eq!(z.len(), f.dim(), "shift vector has wrong dimension");
    let mut g = f.clone();
    for (s, zk) in g.shift.iter_mut().zip(z) {
        *s += zk;
    }
    g
}

impl FieldSample {
    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn shift_vector(&self) -> &[f64] {
        &self.shift
    }

    /// Integer cell containing `x` after shift and offset.
    pub fn cell_of(&self, x: &[f64], cell: &mut [i64]) {
        for k in 0..self.dim() {
            cell[k] = ((x[k] + self.shift[k]) + self.offset[k]).floor() as i64;
        }
    }

    /// Coordinate of `x` in the unshifted cell frame along `axis`.
    pub fn frame_coord(&self, x: f64, axis: usize) -> f64 {
        (x + self.shift[axis]) + self.offset[axis]
    }

    fn draw(&self, law: &DistributionSpec, slot: u64, cell: &[i64]) -> f64 {
        let mut words = [0u64; 8];
        let n = self.cell_key(slot, cell, &mut words);
        let u = rng::uniform(self.seed, &words[..n]);
        let u2 = if law.uses_second_uniform() {
            words[2] = 1;
            rng::uniform(self.seed, &words[..n])
        } else {
            0.5
        };
        law.sample(u, u2)
    }

    // [index, slot, sub, coords...]; laminate fields key on the axis coordinate only.
    fn cell_key(&self, slot: u64, cell: &[i64], words: &mut [u64; 8]) -> usize {
        words[0] = self.index;
        words[1] = slot;
        words[2] = 0;
        match self.spec.structure {
            Structure::Laminate { axis } => {
                words[3] = cell[axis - 1] as u64;
                4
            }
            _ => {
                let d = cell.len();
                assert!(d <= 5, "keyed cells support d <= 5");
                for (w, c) in words[3..3 + d].iter_mut().zip(cell) {
                    *w = *c as u64;
                }
                3 + d
            }
        }
    }

    fn tile_index(tile: &[usize], cell: &[i64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (k, &n) in tile.iter().enumerate() {
            idx += cell[k].rem_euclid(n as i64) as usize * stride;
            stride *= n;
        }
        idx
    }

    /// Diagonal of `Λ` on an integer cell.
    pub fn diag_cell(&self, cell: &[i64], out: &mut [f64]) {
        let d = self.dim();
        match &self.spec.structure {
            Structure::Periodic { tile, weights, .. } => {
                let w = &weights[Self::tile_index(tile, cell)];
                if w.len() == 1 {
                    out[..d].fill(w[0]);
                } else {
                    out[..d].copy_from_slice(w);
                }
            }
            _ => match self.spec.diagonal.as_ref().expect("validated spec") {
                Diagonal::Isotropic(law) => {
                    let a = self.draw(law, 0, cell);
                    out[..d].fill(a);
                }
                Diagonal::PerEntry(laws) => {
                    for (j, law) in laws.iter().enumerate() {
                        out[j] = self.draw(law, j as u64, cell);
                    }
                }
            },
        }
    }

    /// `λ` on an integer cell.
    pub fn lambda_cell(&self, cell: &[i64]) -> f64 {
        if let Structure::Periodic { tile, lambda: Some(l), .. } = &self.spec.structure {
            return l[Self::tile_index(tile, cell)];
        }
        match &self.spec.lambda {
            Some(law) => self.draw(law, LAMBDA_SLOT, cell),
            None => 0.0,
        }
    }

    /// Diagonal of `Λ(x)`.
    pub fn diag_at(&self, x: &[f64], out: &mut [f64]) {
        let mut cell = [0i64; 8];
        let d = self.dim();
        self.cell_of(x, &mut cell[..d]);
        self.diag_cell(&cell[..d], out);
    }

    pub fn diag(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diag_at(x, &mut out);
        out
    }

    /// `λ(x)`.
    pub fn lambda_at(&self, x: &[f64]) -> f64 {
        let mut cell = [0i64; 8];
        let d = self.dim();
        self.cell_of(x, &mut cell[..d]);
        self.lambda_cell(&cell[..d])
    }
}

/// Scalar quantity of the field averaged by [`birkhoff_average`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Frobenius norm `|Λ|`.
    Norm,
    Lambda,
    /// Diagonal entry, 1-based.
    Entry(usize),
}

impl Observable {
    fn on_cell(self, f: &FieldSample, cell: &[i64], buf: &mut [f64]) -> f64 {
        match self {
            Observable::Norm => {
                f.diag_cell(cell, buf);
                buf.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Observable::Lambda => f.lambda_cell(cell),
            Observable::Entry(j) => {
                f.diag_cell(cell, buf);
                buf[j - 1]
            }
        }
    }
}

/// Axis-aligned box `∏ (lo_k, hi_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn is_nonempty(&self) -> bool {
        self.lo.len() == self.hi.len() && self.lo.iter().zip(&self.hi).all(|(a, b)| b > a)
    }
}

/// Exact integral of `g` over the box given in physical coordinates; the field
/// is piecewise constant so the integral is a finite weighted sum over cells.
pub fn integrate_box(f: &FieldSample, g: Observable, b: &AxisBox) -> f64 {
    let d = f.dim();
    let lo: Vec<f64> = (0..d).map(|k| f.frame_coord(b.lo[k], k)).collect();
    let hi: Vec<f64> = (0..d).map(|k| f.frame_coord(b.hi[k], k)).collect();
    let first: Vec<i64> = lo.iter().map(|v| v.floor() as i64).collect();
    let last: Vec<i64> = hi.iter().map(|v| v.ceil() as i64 - 1).collect();
    if first.iter().zip(&last).any(|(a, b)| b < a) {
        return 0.0;
    }
    let overlap = |k: usize, c: i64| -> f64 {
        let a = lo[k].max(c as f64);
        let b = hi[k].min(c as f64 + 1.0);
        (b - a).max(0.0)
    };

    // Laminates only vary along one axis: integrate the 1-D profile.
    if let Structure::Laminate { axis } = f.spec.structure {
        let ax = axis - 1;
        let cross: f64 = (0..d).filter(|&k| k != ax).map(|k| hi[k] - lo[k]).product();
        let mut cell = vec![0i64; d];
        let mut buf = vec![0.0; d];
        let mut total = 0.0;
        for c in first[ax]..=last[ax] {
            cell[ax] = c;
            total += overlap(ax, c) * g.on_cell(f, &cell, &mut buf);
        }
        return total * cross;
    }

    let mut cell = first.clone();
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let w: f64 = (0..d).map(|k| overlap(k, cell[k])).product();
        if w > 0.0 {
            total += w * g.on_cell(f, &cell, &mut buf);
        }
        let mut k = 0;
        loop {
            if k == d {
                return total;
            }
            if cell[k] < last[k] {
                cell[k] += 1;
                break;
            }
            cell[k] = first[k];
            k += 1;
        }
    }
}

/// Spatial means `⨍_{tB} g(τ_z ω) dz` for each `t` in `t_list`.
pub fn birkhoff_average(
    f: &FieldSample,
    g: Observable,
    b: &AxisBox,
    t_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if b.dim() != f.dim() || !b.is_nonempty() {
        return Err(Error::Input("averaging box must be nonempty and match the field dimension".into()));
    }
    if let Observable::Entry(j) = g {
        if j == 0 || j > f.dim() {
            return Err(Error::Input(format!("entry index {j} out of range")));
        }
    }
    Ok(t_list
        .iter()
        .map(|&t| {
            let tb = AxisBox::new(
                b.lo.iter().map(|v| v * t).collect(),
                b.hi.iter().map(|v| v * t).collect(),
            );
            (t, integrate_box(f, g, &tb) / tb.volume())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform12(dim: usize) -> FieldSpec {
        FieldSpec::iid(dim, Diagonal::Isotropic(DistributionSpec::Uniform { a: 1.0, b: 2.0 }))
    }

    #[test]
    fn constant_field_is_constant() {
        let f = sample_field(&FieldSpec::constant(3, 2.0), 1, 0).unwrap();
        assert_eq!(f.diag(&[0.3, -17.2, 1e6]), vec![2.0, 2.0, 2.0]);
        assert_eq!(f.lambda_at(&[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let spec = uniform12(2);
        let a = sample_field(&spec, 99, 4).unwrap();
        let b = sample_field(&spec, 99, 4).unwrap();
        let pts: Vec<[f64; 2]> = (0..200).map(|i| [i as f64 * 0.731 - 50.0, i as f64 * -1.37]).collect();
        let fwd: Vec<Vec<f64>> = pts.iter().map(|p| a.diag(p)).collect();
        let rev: Vec<Vec<f64>> = pts.iter().rev().map(|p| b.diag(p)).collect();
        for (x, y) in fwd.iter().zip(rev.iter().rev()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn different_index_gives_different_realization() {
        let spec = uniform12(1);
        let a = sample_field(&spec, 5, 0).unwrap();
        let b = sample_field(&spec, 5, 1).unwrap();
        let differs = (0..20).any(|i| a.diag(&[i as f64]) != b.diag(&[i as f64]));
        assert!(differs);
    }

    #[test]
    fn empirical_mean_of_uniform_cells() {
        // 10^4 cells of U(1,2): mean within 3 standard errors of 1.5.
        let f = sample_field(&uniform12(2), 2024, 0).unwrap();
        let mut s = 0.0;
        for i in 0..100 {
            for j in 0..100 {
                s += f.diag(&[i as f64 + 0.5, j as f64 + 0.5])[0];
            }
        }
        let mean = s / 1e4;
        assert!((mean - 1.5).abs() < 3.0 * (1.0 / 12f64).sqrt() / 100.0, "{mean}");
    }

    #[test]
    fn laminate_depends_on_axis_only() {
        let spec = FieldSpec::laminate(2, 1, Diagonal::Isotropic(DistributionSpec::Uniform { a: 1.0, b: 2.0 }));
        let f = sample_field(&spec, 3, 0).unwrap();
        for i in 0..10 {
            let x = i as f64 + 0.25;
            let v = f.diag(&[x, 0.5]);
            for j in -5..5 {
                assert_eq!(f.diag(&[x, j as f64 * 3.3]), v);
            }
        }
    }

    #[test]
    fn periodic_tile_repeats() {
        let spec = FieldSpec {
            dim: 2,
            structure: Structure::Periodic {
                tile: vec![2, 2],
                weights: vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
                lambda: None,
            },
            diagonal: None,
            lambda: None,
            random_offset: false,
        };
        let f = sample_field(&spec, 0, 0).unwrap();
        assert_eq!(f.diag(&[0.5, 0.5]), vec![1.0, 1.0]);
        assert_eq!(f.diag(&[1.5, 0.5]), vec![2.0, 2.0]);
        assert_eq!(f.diag(&[0.5, 1.5]), vec![3.0, 3.0]);
        assert_eq!(f.diag(&[-0.5, -0.5]), vec![4.0, 4.0]);
        assert_eq!(f.diag(&[4.5, 7.5]), vec![3.0, 3.0]);
    }

    #[test]
    fn shift_identity_and_composition() {
        let f = sample_field(&uniform12(2), 11, 2).unwrap();
        let g = shift(&f, &[0.0, 0.0]);
        let h = shift(&shift(&f, &[1.25, -3.5]), &[0.5, 2.0]);
        for i in 0..50 {
            let x = [i as f64 * 0.375 - 4.0, i as f64 * 0.625];
            assert_eq!(f.diag(&x), g.diag(&x));
            assert_eq!(h.diag(&x), f.diag(&[x[0] + 1.75, x[1] - 1.5]));
        }
    }

    #[test]
    fn validation_names_offending_field() {
        let mut spec = FieldSpec::laminate(2, 3, Diagonal::Isotropic(DistributionSpec::Pareto { x_m: 1.0, alpha: 0.0 }));
        spec.lambda = Some(DistributionSpec::Constant { c: -1.0 });
        let errs = spec.validation_errors();
        assert_eq!(errs.len(), 3);
        let text: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        assert!(text[0].contains("axis"));
        assert!(text[1].contains("pareto"));
        assert!(text[2].contains("field.lambda"));
    }

    #[test]
    fn birkhoff_constant_is_exact() {
        let f = sample_field(&FieldSpec::constant(2, 3.0), 0, 0).unwrap();
        let series = birkhoff_average(&f, Observable::Entry(1), &AxisBox::unit(2), &[1.0, 3.7, 10.0]).unwrap();
        for (_, v) in series {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_box_handles_partial_cells() {
        let spec = FieldSpec {
            dim: 1,
            structure: Structure::Periodic { tile: vec![2], weights: vec![vec![1.0], vec![3.0]], lambda: None },
            diagonal: None,
            lambda: None,
            random_offset: false,
        };
        let f = sample_field(&spec, 0, 0).unwrap();
        // (0.5, 1.5): half of the weight-1 cell and half of the weight-3 cell.
        let v = integrate_box(&f, Observable::Entry(1), &AxisBox::new(vec![0.5], vec![1.5]));
        assert!((v - 2.0).abs() < 1e-15);
    }
}
