//! The integrand `f(ω, x, ξ) = |ξ Λ(ω, x)| + λ(ω, x)` and the growth constants
//! of its homogenized limit.
//!
//! All matrix norms are Frobenius norms.

use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::field::{Diagonal, FieldSample, FieldSpec, Structure};
use crate::rng::{self, KeyedStream};
use crate::scalar::Scalar;

/// Dense `m × d` matrix stored row major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == d), "ragged matrix rows");
        Self { rows: m, cols: d, data: rows.iter().flatten().copied().collect() }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    /// `e_i ⊗ e_j` (0-based).
    pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.data[i * cols + j] = T::one();
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| *v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    /// `(1 - s) a + s b`.
    pub fn lerp(a: &Self, b: &Self, s: T) -> Self {
        a.scale(T::one() - s).add(&b.scale(s))
    }

    /// `|ξ diag(w)|` for a diagonal given as a slice.
    pub fn norm_col_scaled(&self, diag: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = self.data[i * self.cols + j] * diag[j];
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// Ratio `σ₂/σ₁` estimated from the 2×2 minors; zero for rank ≤ 1.
    pub fn rank_one_defect(&self) -> T {
        let n2 = self.data.iter().map(|v| *v * *v).sum::<T>();
        if n2 == T::zero() {
            return T::zero();
        }
        // Σ of squared 2×2 minors equals Σ_{i<j} σ_i² σ_j².
        let mut e2 = T::zero();
        for i1 in 0..self.rows {
            for i2 in i1 + 1..self.rows {
                for j1 in 0..self.cols {
                    for j2 in j1 + 1..self.cols {
                        let minor = self.get(i1, j1) * self.get(i2, j2) - self.get(i1, j2) * self.get(i2, j1);
                        e2 += minor * minor;
                    }
                }
            }
        }
        e2.sqrt() / n2
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// The admissible integrand built on one field realization.
#[derive(Debug, Clone)]
pub struct IntegrandModel {
    pub field: FieldSample,
    /// Number of components `m` of the unknown.
    pub m: usize,
    pub include_lambda: bool,
}

impl IntegrandModel {
    pub fn new(field: FieldSample, m: usize) -> Self {
        let include_lambda = field.spec().has_lambda();
        Self { field, m, include_lambda }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// `f(x, ξ)`.
    pub fn eval<T: Scalar>(&self, x: &[f64], xi: &Matrix<T>) -> T {
        eval_integrand(self, x, xi)
    }
}

/// `|ξ Λ(x)|_F`, plus `λ(x)` when the model includes it.
pub fn eval_integrand<T: Scalar>(model: &IntegrandModel, x: &[f64], xi: &Matrix<T>) -> T {
    let diag: Vec<T> = model.field.diag(x).into_iter().map(T::of).collect();
    let mut v = xi.norm_col_scaled(&diag);
    if model.include_lambda {
        v += T::of(model.field.lambda_at(x));
    }
    v
}

/// How a constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantMethod {
    Analytic,
    /// Exact expectation over a finite law, maximized over a probe set.
    Enumerated,
    MonteCarlo,
}

/// Constants of the linear growth sandwich `α c₀ |ξ| ≤ f_hom(ξ) ≤ C₀ |ξ| + C₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub alpha: f64,
    /// `1 / esssup |Λ⁻¹|`; zero when `Λ` is not bounded away from zero.
    pub c0: f64,
    /// `sup_{|η|=1} E|ηΛ|`; `+inf` for infinite-mean laws.
    pub upper_c0: f64,
    /// `E[λ]`.
    pub upper_c1: f64,
    pub upper_infinite: bool,
    pub method: ConstantMethod,
    /// 99% half width of the Monte Carlo estimate of `C₀`, zero otherwise.
    pub upper_c0_half_width: f64,
}

/// `esssup |Λ⁻¹|_F` with a flag for the degenerate (unbounded) regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityBound {
    pub value: f64,
    pub degenerate: bool,
}

fn per_slot_laws(spec: &FieldSpec) -> Option<Vec<DistributionSpec>> {
    match spec.diagonal.as_ref()? {
        Diagonal::Isotropic(law) => Some(vec![law.clone(); spec.dim]),
        Diagonal::PerEntry(laws) => Some(laws.clone()),
    }
}

/// Constant `C` with `|ξ| ≤ C |ξ Λ(x)|` for a.e. `x`.
pub fn coercivity_constant(spec: &FieldSpec) -> CoercivityBound {
    let value = match &spec.structure {
        Structure::Periodic { weights, .. } => weights
            .iter()
            .map(|w| {
                if w.len() == 1 {
                    (spec.dim as f64).sqrt() / w[0]
                } else {
                    w.iter().map(|v| 1.0 / (v * v)).sum::<f64>().sqrt()
                }
            })
            .fold(0.0, f64::max),
        _ => {
            let laws = per_slot_laws(spec).expect("validated spec");
            let mut s = 0.0;
            for law in &laws {
                let inf = law.ess_inf();
                if inf <= 0.0 {
                    s = f64::INFINITY;
                    break;
                }
                s += 1.0 / (inf * inf);
            }
            s.sqrt()
        }
    };
    CoercivityBound { value, degenerate: !value.is_finite() }
}

// Candidate column weights `w` (Σ w_j = 1) for the sup over unit η: |ηΛ|² = Σ_j w_j Λ_j².
fn simplex_probes(d: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut probes = Vec::new();
    for j in 0..d {
        let mut w = vec![0.0; d];
        w[j] = 1.0;
        probes.push(w);
    }
    if d > 1 {
        probes.push(vec![1.0 / d as f64; d]);
        for i in 0..d {
            for j in i + 1..d {
                let mut w = vec![0.0; d];
                w[i] = 0.5;
                w[j] = 0.5;
                probes.push(w);
            }
        }
        let mut s = KeyedStream::new(seed);
        for _ in 0..extra {
            let e: Vec<f64> = (0..d).map(|_| -s.next_f64().ln()).collect();
            let tot: f64 = e.iter().sum();
            probes.push(e.into_iter().map(|v| v / tot).collect());
        }
    }
    probes
}

// Exact E[sqrt(Σ w_j Λ_j²)] over a product of finite laws.
fn enumerated_expectation(atoms: &[Vec<(f64, f64)>], w: &[f64]) -> f64 {
    fn rec(atoms: &[Vec<(f64, f64)>], w: &[f64], k: usize, acc: f64, p: f64) -> f64 {
        if k == atoms.len() {
            return p * acc.sqrt();
        }
        atoms[k]
            .iter()
            .map(|&(v, q)| rec(atoms, w, k + 1, acc + w[k] * v * v, p * q))
            .sum()
    }
    rec(atoms, w, 0, 0.0, 1.0)
}

// Concave maximization of w ↦ value(w) over the simplex: best probe, then a
// shrinking pairwise exchange search.
fn maximize_on_simplex(d: usize, probes: Vec<Vec<f64>>, value: impl Fn(&[f64]) -> f64) -> f64 {
    let (mut best_w, mut best) = probes
        .into_iter()
        .map(|w| {
            let v = value(&w);
            (w, v)
        })
        .fold((Vec::new(), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut step: f64 = 0.25;
    while step > 1e-6 && d > 1 {
        let mut improved = false;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let mv = step.min(best_w[j]);
                if mv <= 0.0 {
                    continue;
                }
                let mut w = best_w.clone();
                w[i] += mv;
                w[j] -= mv;
                let v = value(&w);
                if v > best {
                    best = v;
                    best_w = w;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Growth constants of the limit integrand for the law described by `spec`.
pub fn growth_constants(spec: &FieldSpec, mc_budget: usize) -> GrowthConstants {
    let d = spec.dim;
    let c0 = {
        let cb = coercivity_constant(spec);
        if cb.degenerate {
            0.0
        } else {
            1.0 / cb.value
        }
    };
    let mc_seed = rng::stream_tag("growth-constants");

    if let Structure::Periodic { weights, lambda, .. } = &spec.structure {
        // The shift-invariant law of Λ(·,0) is uniform over the tile cells.
        let n = weights.len() as f64;
        let cells: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| if w.len() == 1 { vec![w[0]; d] } else { w.clone() })
            .collect();
        let probes = simplex_probes(d, 32, mc_seed);
        let upper = maximize_on_simplex(d, probes, |w| {
            cells
                .iter()
                .map(|c| c.iter().zip(w).map(|(v, wj)| wj * v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / n
        });
        let c1 = lambda.as_ref().map_or(0.0, |l| l.iter().sum::<f64>() / n);
        return GrowthConstants {
            alpha: 1.0,
            c0,
            upper_c0: upper,
            upper_c1: c1,
            upper_infinite: false,
            method: ConstantMethod::Enumerated,
            upper_c0_half_width: 0.0,
        };
    }

    let c1 = spec.lambda.as_ref().map_or(0.0, |l| l.mean());
    let base = GrowthConstants {
        alpha: 1.0,
        c0,
        upper_c0: 0.0,
        upper_c1: c1,
        upper_infinite: false,
        method: ConstantMethod::Analytic,
        upper_c0_half_width: 0.0,
    };
    let laws = per_slot_laws(spec).expect("validated spec");
    if laws.iter().any(|l| !l.mean().is_finite()) {
        return GrowthConstants { upper_c0: f64::INFINITY, upper_infinite: true, ..base };
    }
    match spec.diagonal.as_ref().expect("validated spec") {
        // |ηΛ| = a|η| for Λ = aI.
        Diagonal::Isotropic(law) => GrowthConstants { upper_c0: law.mean(), ..base },
        Diagonal::PerEntry(laws) => {
            if laws.iter().all(|l| matches!(l, DistributionSpec::Constant { .. })) {
                let m = laws.iter().map(|l| l.mean()).fold(0.0, f64::max);
                return GrowthConstants { upper_c0: m, ..base };
            }
            if d == 1 {
                return GrowthConstants { upper_c0: laws[0].mean(), ..base };
            }
            let probes = simplex_probes(d, 32, mc_seed);
            if let Some(atoms) = laws.iter().map(|l| l.atoms()).collect::<Option<Vec<_>>>() {
                let upper = maximize_on_simplex(d, probes, |w| enumerated_expectation(&atoms, w));
                return GrowthConstants { upper_c0: upper, method: ConstantMethod::Enumerated, ..base };
            }
            monte_carlo_upper(laws, probes, mc_budget.max(2), mc_seed, base)
        }
    }
}

fn monte_carlo_upper(
    laws: &[DistributionSpec],
    probes: Vec<Vec<f64>>,
    budget: usize,
    seed: u64,
    base: GrowthConstants,
) -> GrowthConstants {
    let d = laws.len();
    let samples: Vec<Vec<f64>> = (0..budget as u64)
        .map(|i| {
            laws.iter()
                .enumerate()
                .map(|(j, l)| {
                    let u = rng::uniform(seed, &[i, j as u64, 0]);
                    let u2 = rng::uniform(seed, &[i, j as u64, 1]);
                    let v = l.sample(u, u2);
                    v * v
                })
                .collect()
        })
        .collect();
    let stats = |w: &[f64]| -> (f64, f64) {
        let vals: Vec<f64> = samples
            .iter()
            .map(|s| s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().sqrt())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    };
    let best = maximize_on_simplex(d, probes.clone(), |w| stats(w).0);
    // Widest spread over the probe set.
    let sd = probes.iter().map(|w| stats(w).1).fold(0.0, f64::max);
    GrowthConstants {
        upper_c0: best,
        method: ConstantMethod::MonteCarlo,
        upper_c0_half_width: crate::stats::Z99 * sd / (budget as f64).sqrt(),
        ..base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample_field;

    fn two_point_iso(d: usize) -> FieldSpec {
        FieldSpec::iid(d, Diagonal::Isotropic(DistributionSpec::TwoPoint { v1: 1.0, p: 0.5, v2: 2.0 }))
    }

    #[test]
    fn zero_gradient_costs_nothing() {
        let model = IntegrandModel::new(sample_field(&FieldSpec::constant(2, 2.0), 0, 0).unwrap(), 1);
        assert_eq!(eval_integrand(&model, &[0.1, 0.2], &Matrix::<f64>::zeros(1, 2)), 0.0);
    }

    #[test]
    fn anisotropic_column_scaling() {
        let spec = FieldSpec::iid(
            2,
            Diagonal::PerEntry(vec![DistributionSpec::Constant { c: 2.0 }, DistributionSpec::Constant { c: 3.0 }]),
        );
        let model = IntegrandModel::new(sample_field(&spec, 0, 0).unwrap(), 1);
        let xi = Matrix::from_rows(&[vec![1.0, 1.0]]);
        assert!((model.eval(&[0.0, 0.0], &xi) - 13f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_field_constants() {
        for d in 1..=3 {
            let gc = growth_constants(&FieldSpec::constant(d, 2.0), 0);
            assert!((gc.c0 - 2.0 / (d as f64).sqrt()).abs() < 1e-15);
            assert_eq!(gc.upper_c0, 2.0);
            assert_eq!(gc.upper_c1, 0.0);
        }
    }

    #[test]
    fn two_point_isotropic_constants() {
        let gc = growth_constants(&two_point_iso(2), 0);
        assert!((gc.c0 - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(gc.upper_c0, 1.5);
        assert_eq!(gc.method, ConstantMethod::Analytic);
    }

    #[test]
    fn two_point_closed_form_agrees_with_monte_carlo() {
        // Empirical E|e₁Λ| over many cells of a sampled field.
        let f = sample_field(&two_point_iso(2), 77, 0).unwrap();
        let n = 40_000;
        let mean: f64 = (0..n).map(|i| f.diag(&[i as f64, 0.0])[0]).sum::<f64>() / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((mean - 1.5).abs() < 4.0 * se);
    }

    #[test]
    fn infinite_mean_is_flagged() {
        let spec = FieldSpec::iid(2, Diagonal::Isotropic(DistributionSpec::Pareto { x_m: 1.0, alpha: 1.0 }));
        let gc = growth_constants(&spec, 100);
        assert!(gc.upper_infinite);
        assert!(gc.upper_c0.is_infinite());
        assert_eq!(gc.c0, 1.0 / 2f64.sqrt());
    }

    #[test]
    fn per_entry_sup_can_sit_inside_the_simplex() {
        // Independent two-point entries: E sqrt((Λ₁² + Λ₂²)/2) > E Λ₁.
        let law = DistributionSpec::TwoPoint { v1: 1.0, p: 0.5, v2: 2.0 };
        let spec = FieldSpec::iid(2, Diagonal::PerEntry(vec![law.clone(), law]));
        let gc = growth_constants(&spec, 0);
        let center = 0.25 * (1.0 + 2.5f64.sqrt() * 2.0 + 2.0);
        assert_eq!(gc.method, ConstantMethod::Enumerated);
        assert!(gc.upper_c0 >= center - 1e-12);
        assert!(gc.upper_c0 > 1.5);
    }

    #[test]
    fn monte_carlo_fallback_reports_width() {
        let spec = FieldSpec::iid(
            2,
            Diagonal::PerEntry(vec![
                DistributionSpec::Uniform { a: 1.0, b: 2.0 },
                DistributionSpec::Uniform { a: 1.0, b: 2.0 },
            ]),
        );
        let gc = growth_constants(&spec, 20_000);
        assert_eq!(gc.method, ConstantMethod::MonteCarlo);
        assert!(gc.upper_c0_half_width > 0.0 && gc.upper_c0_half_width < 0.02);
        assert!(gc.upper_c0 > 1.5 - gc.upper_c0_half_width);
    }

    #[test]
    fn coercivity_examples() {
        let c = coercivity_constant(&FieldSpec::constant(2, 4.0));
        assert!((c.value - 2f64.sqrt() / 4.0).abs() < 1e-15);
        let u = FieldSpec::iid(1, Diagonal::Isotropic(DistributionSpec::Uniform { a: 1.0, b: 2.0 }));
        assert_eq!(coercivity_constant(&u).value, 1.0);
        for delta in [1e-1, 1e-3, 1e-6] {
            let s = FieldSpec::iid(1, Diagonal::Isotropic(DistributionSpec::TwoPoint { v1: delta, p: 0.5, v2: 1.0 }));
            assert!((coercivity_constant(&s).value - 1.0 / delta).abs() < 1e-9 / delta);
        }
        let z = FieldSpec::iid(1, Diagonal::Isotropic(DistributionSpec::Uniform { a: 0.0, b: 1.0 }));
        let cz = coercivity_constant(&z);
        assert!(cz.degenerate && cz.value.is_infinite());
    }

    #[test]
    fn rank_one_defect_detects_rank() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.rank_one_defect() < 1e-15);
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(b.rank_one_defect() > 0.4);
        let c = Matrix::from_rows(&[vec![1.0, -1.0]]);
        assert_eq!(c.rank_one_defect(), 0.0);
    }
}
