//! The two degenerate regimes of laminate weights `Λ(x) = a(x₁) I`.
//!
//! * Infinite mean: the cell energy is bounded below by the transverse part of
//!   `ξ` times the running mean of `a`, so `f_hom` blows up off `ℝ e₁`.
//! * Weights not bounded away from zero: a single cheap stripe carries a unit
//!   jump at cost below `δ`, so plane interfaces are approximated at vanishing
//!   energy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::error::{Error, Result};
use crate::field::{sample_field, Diagonal, FieldSample, FieldSpec, Structure};
use crate::grid::Grid;
use crate::homogenizer::{Check, McSettings, PropertyReport};
use crate::integrand::{coercivity_constant, IntegrandModel, Matrix};
use crate::rng::{derive_seed, stream_tag};
use crate::solver::mu_xi_on;
use crate::stats::{summarize, Summary};

/// Law of `Λ₁₁`, and whether the field depends on `x₁` only.
fn first_entry_law(spec: &FieldSpec) -> Result<&DistributionSpec> {
    let law = match &spec.diagonal {
        Some(Diagonal::Isotropic(law)) => law,
        Some(Diagonal::PerEntry(laws)) => &laws[0],
        None => return Err(Error::Input("a laminate with a diagonal law is required".into())),
    };
    let laminate = matches!(spec.structure, Structure::Laminate { axis: 1 });
    let constant = law.ess_inf() == law.ess_sup()
        && match &spec.diagonal {
            Some(Diagonal::PerEntry(laws)) => laws.iter().all(|l| l.ess_inf() == l.ess_sup()),
            _ => true,
        };
    if !(laminate || constant) {
        return Err(Error::Input("field must be a laminate along axis 1 (or spatially constant)".into()));
    }
    Ok(law)
}

/// Transverse part `ξ' = (ξ_{·2}, …, ξ_{·d})`.
fn transverse(xi: &Matrix<f64>) -> Vec<f64> {
    (0..xi.rows()).flat_map(|i| (1..xi.cols()).map(move |j| (i, j))).map(|(i, j)| xi.get(i, j)).collect()
}

/// `|ξ' Λ'|` for the diagonal `diag`.
fn transverse_norm(xi: &Matrix<f64>, diag: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..xi.rows() {
        for j in 1..xi.cols() {
            s += (xi.get(i, j) * diag[j]).powi(2);
        }
    }
    s.sqrt()
}

/// `(1/t) ∫_0^t |ξ' Λ'(x₁)| dx₁`, integrated exactly over the unit cells.
fn running_bound(f: &FieldSample, xi: &Matrix<f64>, t: f64) -> f64 {
    let d = f.dim();
    let c0 = f.frame_coord(0.0, 0);
    let (lo, hi) = (c0, c0 + t);
    let mut diag = vec![0.0; d];
    let mut cell = vec![0i64; d];
    let mut total = 0.0;
    let mut j = lo.floor();
    while j < hi {
        let len = (j + 1.0).min(hi) - j.max(lo);
        cell[0] = j as i64;
        f.diag_cell(&cell, &mut diag);
        total += len * transverse_norm(xi, &diag);
        j += 1.0;
    }
    total / t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePoint {
    pub t: f64,
    pub realization: u64,
    /// `μ / t^d` on `(0, t)^d`.
    pub value: f64,
    /// `|ξ'| × running mean of a` (general diagonal: `⨍ |ξ' Λ'|`).
    pub bound: f64,
    /// Difference between the bound from cell-center weights and the exact one.
    pub discretization_slack: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cells_per_side: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub t_list: Vec<f64>,
    pub series: Vec<Summary>,
    pub medians: Vec<f64>,
    /// Means strictly increasing with last/first above 2.
    pub diverging: bool,
    pub ratio: f64,
    pub bound_check: PropertyReport,
    pub points: Vec<DivergencePoint>,
}

/// Cell energies on `(0, t)^d` for a laminate along `x₁`, with the
/// per-realization lower bound. Realizations are shared across `t`.
pub fn divergence_experiment(
    spec: &FieldSpec,
    xi: &Matrix<f64>,
    t_list: &[f64],
    s: &McSettings,
) -> Result<DivergenceReport> {
    spec.validate()?;
    let d = spec.dim;
    if d < 2 {
        return Err(Error::Input("the divergence experiment needs d >= 2".into()));
    }
    first_entry_law(spec)?;
    if xi.cols() != d {
        return Err(Error::Input(format!("ξ must have {d} columns")));
    }
    if transverse(xi).iter().all(|v| *v == 0.0) {
        return Err(Error::Input("ξ lies in span(e₁); the transverse bound is vacuous there".into()));
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] <= 0.0 {
        return Err(Error::Input("t_list must be positive and increasing".into()));
    }
    let field_seed = derive_seed(s.seed, stream_tag("divergence"), &[]);
    let tasks: Vec<(usize, u64)> =
        (0..t_list.len()).flat_map(|j| (0..s.realizations as u64).map(move |r| (j, r))).collect();
    let points: Vec<DivergencePoint> = tasks
        .par_iter()
        .map(|&(j, r)| {
            let t = t_list[j];
            let f = sample_field(spec, field_seed, r)?;
            let bound = running_bound(&f, xi, t);
            let model = IntegrandModel::new(f, xi.rows());
            let n = s.policy.cells(t)?;
            let grid = Grid::with_corner(vec![0.0; d], t, n, model.m)?;
            let e = mu_xi_on(&model, xi, &grid, &s.solve)?;
            // The discrete Jensen bound uses the cell-center weights.
            let mut x = vec![0.5 * grid.h(); d];
            let mut diag = vec![0.0; d];
            let mut discrete = 0.0;
            for i in 0..n {
                x[0] = (i as f64 + 0.5) * grid.h();
                model.field.diag_at(&x, &mut diag);
                discrete += transverse_norm(xi, &diag);
            }
            discrete /= n as f64;
            Ok(DivergencePoint {
                t,
                realization: r,
                value: e.value,
                bound,
                discretization_slack: (bound - discrete).abs(),
                gap: e.report.gap,
                iterations: e.report.iterations,
                converged: e.report.is_certified(s.solve.tol),
                cells_per_side: n,
                wall_time_s: e.report.wall_time_s,
            })
        })
        .collect::<Result<_>>()?;

    let checks = points
        .iter()
        .map(|p| {
            let roundoff = 1e-12 * p.bound.max(1.0);
            Check::lower(format!("t{}/r{}", p.t, p.realization), p.value, p.bound, p.discretization_slack + roundoff)
        })
        .collect();
    let mut bound_check = PropertyReport::from_checks("jensen_lower_bound", points.len(), checks);
    let unconverged = points.iter().filter(|p| !p.converged).count();
    if unconverged > 0 {
        bound_check.passed = false;
        bound_check.notes.push(format!("{unconverged} solves did not certify"));
    }
    let mut series = Vec::new();
    let mut medians = Vec::new();
    for &t in t_list {
        let mut v: Vec<f64> = points.iter().filter(|p| p.t == t).map(|p| p.value).collect();
        series.push(summarize(&v));
        v.sort_by(f64::total_cmp);
        medians.push(if v.is_empty() {
            f64::NAN
        } else if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        });
    }
    let ratio = series.last().unwrap().mean / series[0].mean;
    let increasing = series.windows(2).all(|w| w[1].mean > w[0].mean);
    Ok(DivergenceReport {
        t_list: t_list.to_vec(),
        diverging: increasing && ratio > 2.0,
        ratio,
        series,
        medians,
        bound_check,
        points,
    })
}

/// Scan parameters of a cheap-interface probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Cells scanned before giving up.
    pub search_limit: u64,
    /// Target interface position `r ∈ [0, 1)` along `x₁`.
    pub target: f64,
    /// Width of `[r, r + window]` that must contain the stripe; defaults to
    /// `min(δ, 1 - r)`.
    pub window: Option<f64>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { search_limit: 10_000, target: 0.0, window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceProbe {
    pub delta: f64,
    pub realization: u64,
    pub target: f64,
    pub epsilon: f64,
    /// First scanned cell index.
    pub scan_start: i64,
    /// Cell index `k_δ` of the stripe, when found.
    pub k_delta: Option<i64>,
    /// Number of cells rejected before the hit.
    pub hits_before: Option<u64>,
    pub scanned: u64,
    /// Weight of the stripe cell.
    pub weight: Option<f64>,
    /// `∫_Q a(x/ε) |∂₁ u_ε|`.
    pub energy: Option<f64>,
    /// Left edge `x*` of the stripe.
    pub x_star: Option<f64>,
    /// `‖u_ε - χ_{x₁ > x*}‖_{L¹(Q)}`.
    pub l1_to_step: Option<f64>,
    /// `‖u_ε - χ_{x₁ > r}‖_{L¹(Q)}`.
    pub l1_to_target: Option<f64>,
    /// `|Dχ|(Q)` of the limit interface.
    pub bv_seminorm: f64,
    /// `P(a < δ)` under the law.
    pub p_delta: f64,
    /// Share of scanned cells with `a < δ` (`0` on failure).
    pub empirical_hit_rate: f64,
    pub success: bool,
}

impl InterfaceProbe {
    /// `u_ε(x) = clamp((x₁ - x*)/ε, 0, 1)`, or `None` for failed probes.
    pub fn profile(&self, x1: f64) -> Option<f64> {
        Some(((x1 - self.x_star?) / self.epsilon).clamp(0.0, 1.0))
    }
}

/// Locate the first cell with `a < δ` and build the stripe profile on `Q = (0,1)^d`.
pub fn cheap_interface(spec: &FieldSpec, delta: f64, seed: u64, index: u64, ps: &ProbeSettings) -> Result<InterfaceProbe> {
    let law = first_entry_law(spec)?.clone();
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Input(format!("δ must be positive, got {delta}")));
    }
    let r = ps.target;
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Input(format!("interface target must lie in [0, 1), got {r}")));
    }
    let window = ps.window.unwrap_or(delta.min(1.0 - r));
    if !(window > 0.0 && r + window <= 1.0) {
        return Err(Error::Input("window must be positive and keep the stripe inside Q".into()));
    }
    if ps.search_limit == 0 {
        return Err(Error::Input("search_limit must be >= 1".into()));
    }
    let f = sample_field(spec, seed, index)?;
    let d = f.dim();
    // Stripes are cells of a(·/ε); the scan start ⌈r/ε⌉ (in the cell frame)
    // and ε = window/(limit + 1) keep every candidate inside [r, r + window].
    let epsilon = window / (ps.search_limit + 1) as f64;
    let c0 = f.frame_coord(0.0, 0);
    let scan_start = (r / epsilon + c0).ceil() as i64;
    let mut cell = vec![0i64; d];
    let mut diag = vec![0.0; d];
    let mut found = None;
    let mut scanned = 0;
    for k in 0..ps.search_limit {
        cell[0] = scan_start + k as i64;
        f.diag_cell(&cell, &mut diag);
        scanned += 1;
        if diag[0] < delta {
            found = Some((k, cell[0], diag[0]));
            break;
        }
    }
    let p_delta = law.prob_below(delta);
    let mut probe = InterfaceProbe {
        delta,
        realization: index,
        target: r,
        epsilon,
        scan_start,
        k_delta: None,
        hits_before: None,
        scanned,
        weight: None,
        energy: None,
        x_star: None,
        l1_to_step: None,
        l1_to_target: None,
        bv_seminorm: 1.0,
        p_delta,
        empirical_hit_rate: 0.0,
        success: false,
    };
    if let Some((k, j, a)) = found {
        // In the cell frame the stripe is exactly [j, j+1) and ∂₁u_ε = 1/ε
        // there, so the energy is a_j times its frame length times the unit
        // cross-section.
        let energy = a * ((j + 1) as f64 - j as f64);
        let x_star = epsilon * (j as f64 - c0);
        probe.k_delta = Some(j);
        probe.hits_before = Some(k);
        probe.weight = Some(a);
        probe.energy = Some(energy);
        probe.x_star = Some(x_star);
        probe.l1_to_step = Some(0.5 * epsilon);
        probe.l1_to_target = Some((x_star - r) + 0.5 * epsilon);
        probe.empirical_hit_rate = 1.0 / scanned as f64;
        probe.success = true;
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub delta: f64,
    pub scans: usize,
    pub failures: usize,
    pub p_delta: f64,
    /// Geometric mean `(1 - p)/p` of the rejected-cell count.
    pub expected_mean: f64,
    pub empirical_mean: f64,
    /// `√((1 - p)/p² / n)`.
    pub standard_error: f64,
    pub z_score: f64,
    /// Within 4 standard errors.
    pub passed: bool,
}

/// Rejected-cell counts over `scans` independent realizations.
pub fn hitting_statistics(spec: &FieldSpec, delta: f64, seed: u64, scans: usize, ps: &ProbeSettings) -> Result<HittingStats> {
    let probes: Vec<InterfaceProbe> =
        (0..scans as u64).into_par_iter().map(|i| cheap_interface(spec, delta, seed, i, ps)).collect::<Result<_>>()?;
    let k: Vec<f64> = probes.iter().filter_map(|p| p.hits_before).map(|k| k as f64).collect();
    let p = probes.first().map(|p| p.p_delta).unwrap_or(0.0);
    let failures = scans - k.len();
    let n = k.len() as f64;
    let expected_mean = (1.0 - p) / p;
    let standard_error = ((1.0 - p) / (p * p) / n).sqrt();
    let empirical_mean = k.iter().sum::<f64>() / n;
    let z_score = (empirical_mean - expected_mean) / standard_error;
    Ok(HittingStats {
        delta,
        scans,
        failures,
        p_delta: p,
        expected_mean,
        empirical_mean,
        standard_error,
        z_score,
        passed: p > 0.0 && z_score.abs() <= 4.0,
    })
}

/// Energies below `δ`, `L¹` distances within `ε` (to the stripe step) and the
/// window (to the target step), for a decreasing `δ` sequence. Levels with
/// `P(a < δ) = 0` lie below the weight floor and are only noted; whether the
/// zero-cost limit `δ → 0` is available at all (degenerate coercivity) is
/// reported as a note.
pub fn interface_limit_check(spec: &FieldSpec, probes: &[InterfaceProbe]) -> PropertyReport {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let decreasing = probes.windows(2).all(|w| w[1].delta < w[0].delta);
    if !decreasing {
        notes.push("δ sequence is not decreasing".to_string());
    }
    for p in probes {
        let tag = format!("delta{}", p.delta);
        match (p.energy, p.l1_to_step, p.l1_to_target) {
            (Some(e), Some(l1), Some(lt)) => {
                checks.push(Check::upper(format!("{tag}/energy"), e, p.delta, 0.0));
                checks.push(Check::upper(format!("{tag}/l1_step"), l1, p.epsilon, 0.0));
                checks.push(Check::upper(format!("{tag}/l1_target"), lt, p.delta.min(1.0 - p.target), 1e-15));
                checks.push(Check::upper(format!("{tag}/bv_seminorm"), (p.bv_seminorm - 1.0).abs(), 0.0, 0.0));
            }
            _ if p.p_delta == 0.0 => {
                notes.push(format!("P(a < {}) = 0: below the weight floor, no cheap interface at this level", p.delta));
            }
            _ => {
                checks.push(Check::upper(format!("{tag}/found"), 1.0, 0.0, 0.0));
                notes.push(format!("no cell below δ = {} within {} cells", p.delta, p.scanned));
            }
        }
    }
    let coercivity = coercivity_constant(spec);
    notes.push(if coercivity.degenerate {
        "degenerate coercivity: P(a < δ) > 0 for every δ > 0, the zero-cost limit is available".to_string()
    } else {
        format!("coercivity constant {}: weights are bounded below, the zero-cost limit is not available", coercivity.value)
    });
    let mut rep = PropertyReport::from_checks("interface_limit", probes.len(), checks);
    if !decreasing {
        rep.passed = false;
    }
    rep.notes = notes;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laminate(law: DistributionSpec, d: usize) -> FieldSpec {
        FieldSpec::laminate(d, 1, Diagonal::Isotropic(law))
    }

    #[test]
    fn rejects_longitudinal_xi_and_one_dimension() {
        let spec = laminate(DistributionSpec::Pareto { x_m: 1.0, alpha: 1.0 }, 2);
        let s = McSettings::new(2, 0, 1e-5);
        let e1 = Matrix::unit(1, 2, 0, 0);
        assert!(matches!(divergence_experiment(&spec, &e1, &[4.0], &s), Err(Error::Input(_))));
        let spec1 = laminate(DistributionSpec::Pareto { x_m: 1.0, alpha: 1.0 }, 1);
        assert!(divergence_experiment(&spec1, &Matrix::unit(1, 1, 0, 0), &[4.0], &s).is_err());
        let iid = FieldSpec::iid(2, Diagonal::Isotropic(DistributionSpec::Pareto { x_m: 1.0, alpha: 1.0 }));
        assert!(divergence_experiment(&iid, &Matrix::unit(1, 2, 0, 1), &[4.0], &s).is_err());
    }

    #[test]
    fn constant_control_is_flat() {
        let spec = FieldSpec::constant(2, 3.0);
        let rep = divergence_experiment(&spec, &Matrix::unit(1, 2, 0, 1), &[2.0, 4.0, 8.0], &McSettings::new(2, 0, 1e-6))
            .unwrap();
        for s in &rep.series {
            assert!((s.mean - 3.0).abs() < 1e-9);
        }
        assert!(!rep.diverging);
        assert!(rep.bound_check.passed);
    }

    #[test]
    fn running_bound_matches_cell_average() {
        let spec = laminate(DistributionSpec::Uniform { a: 1.0, b: 2.0 }, 2);
        let f = sample_field(&spec, 4, 0).unwrap();
        let xi = Matrix::from_rows(&[vec![0.0, 2.0]]);
        let direct: f64 = (0..5).map(|j| f.diag(&[j as f64 + 0.5, 0.3])[1]).sum::<f64>() / 5.0;
        assert!((running_bound(&f, &xi, 5.0) - 2.0 * direct).abs() < 1e-12);
    }

    #[test]
    fn constant_law_never_hits() {
        let spec = FieldSpec::constant(1, 1.0);
        let p = cheap_interface(&spec, 0.1, 0, 0, &ProbeSettings { search_limit: 50, ..Default::default() }).unwrap();
        assert!(!p.success);
        assert_eq!(p.scanned, 50);
        assert_eq!(p.empirical_hit_rate, 0.0);
    }

    #[test]
    fn probe_energy_and_geometry() {
        let spec = laminate(DistributionSpec::TwoPoint { v1: 0.05, p: 0.5, v2: 1.0 }, 2);
        for i in 0..20 {
            let p = cheap_interface(&spec, 0.1, 7, i, &ProbeSettings::default()).unwrap();
            assert!(p.success);
            assert_eq!(p.energy, Some(0.05));
            let xs = p.x_star.unwrap();
            assert!(xs >= 0.0 && xs + p.epsilon <= 0.1 + 1e-15);
            assert_eq!(p.profile(xs), Some(0.0));
            assert!(p.profile(xs + 1.01 * p.epsilon) == Some(1.0));
        }
    }

    #[test]
    fn floor_levels_are_noted_not_failed() {
        let spec = laminate(DistributionSpec::TwoPoint { v1: 0.05, p: 0.5, v2: 1.0 }, 2);
        let ps = ProbeSettings { search_limit: 100, ..Default::default() };
        let probes: Vec<_> = [0.1, 0.01].iter().map(|&d| cheap_interface(&spec, d, 1, 0, &ps).unwrap()).collect();
        let rep = interface_limit_check(&spec, &probes);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.notes.iter().any(|n| n.contains("below the weight floor")));
        assert!(rep.notes.iter().any(|n| n.contains("not available")));
        let uni = laminate(DistributionSpec::Uniform { a: 0.0, b: 1.0 }, 2);
        let probes: Vec<_> = [0.1, 0.01].iter().map(|&d| cheap_interface(&uni, d, 1, 0, &ps).unwrap()).collect();
        let rep = interface_limit_check(&uni, &probes);
        assert!(rep.notes.iter().any(|n| n.contains("is available")));
    }

    #[test]
    fn shifted_target_places_stripe_after_target() {
        let spec = laminate(DistributionSpec::Uniform { a: 0.0, b: 1.0 }, 2);
        let ps = ProbeSettings { target: 0.5, ..Default::default() };
        let p = cheap_interface(&spec, 0.05, 3, 0, &ps).unwrap();
        let xs = p.x_star.unwrap();
        assert!(xs >= 0.5 - 1e-12 && xs + p.epsilon <= 0.55 + 1e-12);
        assert!(p.energy.unwrap() < 0.05);
    }
}
