//! Monte Carlo estimation of `f_hom` and numerical checks of its properties.
//!
//! Every check returns a [`PropertyReport`] whose pass threshold is a stated
//! sum of solver tolerance and statistical half-width. Work items are solved in
//! parallel on the ambient rayon pool and collected in task order, so results
//! do not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sample_field, shift, FieldSpec};
use crate::grid::Grid;
use crate::integrand::{GrowthConstants, IntegrandModel, Matrix};
use crate::rng::{derive_seed, stream_tag};
use crate::solver::{mu_xi_on, ResolutionPolicy, SolveOptions};
use crate::stats::{ks_critical, ks_statistic, summarize, Summary};

/// Monte Carlo budget shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    /// Realizations per `(ξ, t)`.
    pub realizations: usize,
    pub seed: u64,
    pub solve: SolveOptions,
    pub policy: ResolutionPolicy,
}

impl McSettings {
    pub fn new(realizations: usize, seed: u64, tol: f64) -> Self {
        Self {
            realizations,
            seed,
            solve: SolveOptions::with_tol(tol),
            policy: ResolutionPolicy::default(),
        }
    }

    pub fn tol(&self) -> f64 {
        self.solve.tol
    }

    /// Deterministic fields need a single realization.
    fn effective(&self, spec: &FieldSpec) -> usize {
        if spec.is_periodic() && !spec.random_offset {
            1
        } else {
            self.realizations
        }
    }
}

/// One cell solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub xi_index: usize,
    pub t_index: usize,
    pub t: f64,
    pub realization: u64,
    /// Extra coordinate distinguishing solves within a task (subcube,
    /// segment point, scale index, ...).
    pub part: usize,
    /// Normalized energy `μ / t^d`.
    pub value: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cells_per_side: usize,
    pub wall_time_s: f64,
}

impl SolveRecord {
    pub fn flagged(&self) -> bool {
        !self.converged
    }
}

/// Where and what to solve.
#[derive(Debug, Clone)]
struct Task {
    field_seed: u64,
    index: u64,
    shift: Option<Vec<f64>>,
    xi: Matrix<f64>,
    lo: Vec<f64>,
    side: f64,
    /// Normalization side for the value (`value = primal / norm_side^d`).
    norm_side: f64,
    record: SolveRecord,
}

fn blank(xi_index: usize, t_index: usize, t: f64, realization: u64, part: usize) -> SolveRecord {
    SolveRecord {
        xi_index,
        t_index,
        t,
        realization,
        part,
        value: f64::NAN,
        primal: f64::NAN,
        dual: f64::NAN,
        gap: f64::NAN,
        iterations: 0,
        converged: false,
        cells_per_side: 0,
        wall_time_s: 0.0,
    }
}

fn cube_lo(center: &[f64], side: f64) -> Vec<f64> {
    center.iter().map(|c| c - 0.5 * side).collect()
}

fn run_tasks(spec: &FieldSpec, tasks: Vec<Task>, s: &McSettings) -> Result<Vec<SolveRecord>> {
    tasks
        .into_par_iter()
        .map(|task| {
            let mut f = sample_field(spec, task.field_seed, task.index)?;
            if let Some(z) = &task.shift {
                f = shift(&f, z);
            }
            let model = IntegrandModel::new(f, task.xi.rows());
            let n = s.policy.cells(task.side)?;
            let grid = Grid::with_corner(task.lo.clone(), task.side, n, model.m)?;
            let e = mu_xi_on(&model, &task.xi, &grid, &s.solve)?;
            let r = e.report;
            let mut rec = task.record;
            rec.value = r.primal / task.norm_side.powi(spec.dim as i32);
            rec.primal = r.primal;
            rec.dual = r.dual;
            rec.gap = r.gap;
            rec.iterations = r.iterations;
            rec.converged = r.is_certified(s.solve.tol);
            rec.cells_per_side = n;
            rec.wall_time_s = r.wall_time_s;
            Ok(rec)
        })
        .collect()
}

fn check_xi(spec: &FieldSpec, xi: &Matrix<f64>) -> Result<()> {
    spec.validate()?;
    if xi.cols() != spec.dim || xi.rows() == 0 {
        return Err(Error::Input(format!("ξ must have {} columns, got {}×{}", spec.dim, xi.rows(), xi.cols())));
    }
    if !xi.is_finite() {
        return Err(Error::Input("ξ has non-finite entries".into()));
    }
    Ok(())
}

fn check_t_list(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() || t_list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Input("t_list must hold positive side lengths".into()));
    }
    if t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("t_list must be strictly increasing".into()));
    }
    Ok(())
}

/// Statistics at one cube side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLevel {
    pub t: f64,
    /// Over the accepted (certified) solves.
    pub summary: Summary,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomEstimate {
    pub xi: Matrix<f64>,
    pub levels: Vec<TLevel>,
    /// Mean at the largest `t`.
    pub f_hat: f64,
    pub ci_half_width: f64,
    /// `f_hat`, reported only when the last two levels agree within their
    /// combined half-widths plus solver tolerance.
    pub extrapolated: Option<f64>,
    pub tol: f64,
    /// More than 10% of the solves at some level were flagged.
    pub flagged: bool,
    pub records: Vec<SolveRecord>,
}

/// Share of flagged solves above which an estimate is flagged.
pub const FLAG_FRACTION: f64 = 0.1;

fn level(t: f64, recs: &[&SolveRecord]) -> TLevel {
    let ok: Vec<f64> = recs.iter().filter(|r| !r.flagged()).map(|r| r.value).collect();
    TLevel { t, summary: summarize(&ok), flagged: recs.len() - ok.len() }
}

/// Normalized cell energies over `N` independent realizations per `t`.
pub fn estimate_f_hom(spec: &FieldSpec, xi: &Matrix<f64>, t_list: &[f64], s: &McSettings) -> Result<HomEstimate> {
    estimate_f_hom_indexed(spec, xi, 0, t_list, s)
}

/// As [`estimate_f_hom`], tagging records with `xi_index`. Realizations do not
/// depend on `xi_index`, so estimates for several `ξ` share them.
pub fn estimate_f_hom_indexed(
    spec: &FieldSpec,
    xi: &Matrix<f64>,
    xi_index: usize,
    t_list: &[f64],
    s: &McSettings,
) -> Result<HomEstimate> {
    check_xi(spec, xi)?;
    check_t_list(t_list)?;
    let n = s.effective(spec);
    if n < 1 || (n < 2 && !spec.is_periodic()) {
        return Err(Error::Input("need at least 2 realizations".into()));
    }
    let d = spec.dim;
    let stream = stream_tag("estimate");
    let mut tasks = Vec::new();
    for (j, &t) in t_list.iter().enumerate() {
        let field_seed = derive_seed(s.seed, stream, &[j as u64]);
        for r in 0..n as u64 {
            tasks.push(Task {
                field_seed,
                index: r,
                shift: None,
                xi: xi.clone(),
                lo: cube_lo(&vec![0.0; d], t),
                side: t,
                norm_side: t,
                record: blank(xi_index, j, t, r, 0),
            });
        }
    }
    let records = run_tasks(spec, tasks, s)?;
    let levels: Vec<TLevel> = t_list
        .iter()
        .enumerate()
        .map(|(j, &t)| level(t, &records.iter().filter(|r| r.t_index == j).collect::<Vec<_>>()))
        .collect();
    let flagged = levels.iter().any(|l| l.flagged as f64 > FLAG_FRACTION * n as f64);
    let last = levels.last().unwrap();
    let (f_hat, ci) = (last.summary.mean, last.summary.ci_half_width);
    let extrapolated = match levels.len() {
        1 => None,
        k => {
            let prev = &levels[k - 2].summary;
            let allowance = (prev.ci_half_width.powi(2) + ci.powi(2)).sqrt()
                + 2.0 * s.tol() * f_hat.abs().max(xi.norm());
            ((f_hat - prev.mean).abs() <= allowance).then_some(f_hat)
        }
    };
    Ok(HomEstimate {
        xi: xi.clone(),
        levels,
        f_hat,
        ci_half_width: ci,
        extrapolated,
        tol: s.tol(),
        flagged,
        records,
    })
}

/// One verified inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub bound: f64,
    /// Tolerance granted on top of the bound.
    pub allowance: f64,
    /// Signed margin; nonnegative when the check passes.
    pub slack: f64,
}

impl Check {
    /// `value ≤ bound + allowance`.
    pub fn upper(label: impl Into<String>, value: f64, bound: f64, allowance: f64) -> Self {
        Self { label: label.into(), value, bound, allowance, slack: bound + allowance - value }
    }

    /// `value ≥ bound - allowance`.
    pub fn lower(label: impl Into<String>, value: f64, bound: f64, allowance: f64) -> Self {
        Self { label: label.into(), value, bound, allowance, slack: value - bound + allowance }
    }

    pub fn passed(&self) -> bool {
        self.slack >= 0.0 || self.slack.is_nan() && self.bound.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest signed slack over all checks.
    pub worst_slack: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PropertyReport {
    pub fn from_checks(property: impl Into<String>, instances: usize, checks: Vec<Check>) -> Self {
        let violations = checks.iter().filter(|c| !c.passed()).count();
        let worst_slack = checks.iter().map(|c| c.slack).filter(|s| !s.is_nan()).fold(f64::INFINITY, f64::min);
        Self {
            property: property.into(),
            instances,
            violations,
            worst_slack,
            passed: violations == 0,
            checks,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn fail(mut self, note: impl Into<String>) -> Self {
        self.passed = false;
        self.notes.push(note.into());
        self
    }
}

/// `α c₀ |ξ| - slack ≤ f̂ ≤ C₀ |ξ| + C₁ + slack` with
/// `slack = tol · max(|ξ|, f̂) + CI` (plus the Monte Carlo half-width of `C₀`
/// on the upper side when `C₀` was sampled).
pub fn verify_growth_sandwich(est: &HomEstimate, gc: &GrowthConstants) -> PropertyReport {
    let xn = est.xi.norm();
    let slack = est.tol * xn.max(est.f_hat.abs()) + est.ci_half_width;
    let lower = Check::lower("lower", est.f_hat, gc.alpha * gc.c0 * xn, slack);
    let upper_bound = if gc.upper_infinite { f64::INFINITY } else { gc.upper_c0 * xn + gc.upper_c1 };
    let upper = Check::upper("upper", est.f_hat, upper_bound, slack + gc.upper_c0_half_width * xn);
    let mut rep = PropertyReport::from_checks("growth_sandwich", 1, vec![lower, upper]);
    if gc.upper_infinite {
        rep = rep.with_note("upper constant is infinite; only the lower bound constrains the estimate");
    }
    if est.flagged {
        rep = rep.fail("estimate flagged: more than 10% of solves did not certify");
    }
    rep
}

/// Rows of a dyadic subadditivity run together with its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRun {
    pub report: PropertyReport,
    pub records: Vec<SolveRecord>,
}

/// `μ(Q_t) ≤ Σ_i μ(Q_i)` for dyadic partitions of `Q_t(0)` at every depth up
/// to `depth`, and between consecutive depths. The allowance is the sum of
/// the certified absolute errors, `tol · Σ max(1, primal)`, of the solves
/// involved. `xis` are tested on `N` realizations each.
pub fn check_subadditivity(
    spec: &FieldSpec,
    xis: &[Matrix<f64>],
    t: f64,
    depth: usize,
    s: &McSettings,
) -> Result<PropertyRun> {
    if depth < 1 {
        return Err(Error::Input("partition depth must be >= 1".into()));
    }
    for xi in xis {
        check_xi(spec, xi)?;
    }
    check_t_list(&[t])?;
    let d = spec.dim;
    let n = s.effective(spec);
    let stream = stream_tag("subadditivity");
    let mut tasks = Vec::new();
    for (xi_index, xi) in xis.iter().enumerate() {
        for r in 0..n as u64 {
            let field_seed = derive_seed(s.seed, stream, &[xi_index as u64]);
            let mut part = 0;
            for level in 0..=depth {
                let k = 1usize << level;
                let side = t / k as f64;
                for q in 0..k.pow(d as u32) {
                    let mut lo = vec![0.0; d];
                    let mut rem = q;
                    for l in lo.iter_mut() {
                        *l = -0.5 * t + (rem % k) as f64 * side;
                        rem /= k;
                    }
                    tasks.push(Task {
                        field_seed,
                        index: r,
                        shift: None,
                        xi: xi.clone(),
                        lo,
                        side,
                        norm_side: t,
                        record: blank(xi_index, level, side, r, part),
                    });
                    part += 1;
                }
            }
        }
    }
    let records = run_tasks(spec, tasks, s)?;
    let tol = s.tol();
    let mut checks = Vec::new();
    let per_instance = records.len() / (xis.len() * n).max(1);
    let mut flagged = 0;
    for chunk in records.chunks(per_instance) {
        flagged += chunk.iter().filter(|r| r.flagged()).count();
        let sums: Vec<(f64, f64)> = (0..=depth)
            .map(|level| {
                let rs = chunk.iter().filter(|r| r.t_index == level);
                rs.fold((0.0, 0.0), |(e, a), r| (e + r.primal, a + tol * r.primal.abs().max(1.0)))
            })
            .collect();
        let (xi_index, r) = (chunk[0].xi_index, chunk[0].realization);
        for level in 1..=depth {
            let (coarse, ca) = sums[level - 1];
            let (fine, fa) = sums[level];
            checks.push(Check::upper(format!("xi{xi_index}/r{r}/depth{}-{level}", level - 1), coarse, fine, ca + fa));
        }
        if depth > 1 {
            let (top, ta) = sums[0];
            let (fine, fa) = sums[depth];
            checks.push(Check::upper(format!("xi{xi_index}/r{r}/depth0-{depth}"), top, fine, ta + fa));
        }
    }
    let mut report = PropertyReport::from_checks("subadditivity", xis.len() * n, checks);
    if flagged > 0 {
        report = report.fail(format!("{flagged} solves did not certify"));
    }
    Ok(PropertyRun { report, records })
}

/// Shift covariance on matched realizations (exact equality of
/// `μ(ω, Q_t(z))` and `μ(τ_z ω, Q_t(0))`) and a two-sample
/// Kolmogorov–Smirnov test of `μ(ω, Q_t(z))` against independent
/// `μ(ω', Q_t(0))` at level `ks_alpha`.
pub fn check_stationarity_in_law(
    spec: &FieldSpec,
    xi: &Matrix<f64>,
    t: f64,
    z: &[i64],
    ks_alpha: f64,
    s: &McSettings,
) -> Result<PropertyRun> {
    check_xi(spec, xi)?;
    check_t_list(&[t])?;
    let d = spec.dim;
    if z.len() != d {
        return Err(Error::Input(format!("shift must have {d} integer entries")));
    }
    let n = s.effective(spec);
    let zf: Vec<f64> = z.iter().map(|v| *v as f64).collect();
    let seed_a = derive_seed(s.seed, stream_tag("stationarity"), &[0]);
    let seed_b = derive_seed(s.seed, stream_tag("stationarity"), &[1]);
    let mut tasks = Vec::new();
    for r in 0..n as u64 {
        let base = |field_seed, shift, center: &[f64], part| Task {
            field_seed,
            index: r,
            shift,
            xi: xi.clone(),
            lo: cube_lo(center, t),
            side: t,
            norm_side: t,
            record: blank(0, 0, t, r, part),
        };
        tasks.push(base(seed_a, None, &zf, 0));
        tasks.push(base(seed_a, Some(zf.clone()), &vec![0.0; d], 1));
        tasks.push(base(seed_b, None, &vec![0.0; d], 2));
    }
    let records = run_tasks(spec, tasks, s)?;
    let mut checks = Vec::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for trip in records.chunks(3) {
        let diff = (trip[0].primal - trip[1].primal).abs();
        checks.push(Check::upper(format!("matched/r{}", trip[0].realization), diff, 0.0, 0.0));
        a.push(trip[0].value);
        b.push(trip[2].value);
    }
    let stat = ks_statistic(&a, &b);
    let crit = ks_critical(a.len(), b.len(), ks_alpha);
    checks.push(Check::upper("ks", stat, crit, 0.0));
    let mut report = PropertyReport::from_checks("stationarity", n, checks);
    let flagged = records.iter().filter(|r| r.flagged()).count();
    if flagged > 0 {
        report = report.fail(format!("{flagged} solves did not certify"));
    }
    Ok(PropertyRun { report, records })
}

/// `f̂(sξ)/s` over `s_list`, on common realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecessionSeries {
    pub s_list: Vec<f64>,
    /// Mean of `μ(sξ)/(s t^d)` per `s`.
    pub series: Vec<Summary>,
    /// Value at the largest `s`.
    pub f_inf: f64,
    pub records: Vec<SolveRecord>,
}

pub fn recession(spec: &FieldSpec, xi: &Matrix<f64>, s_list: &[f64], t: f64, s: &McSettings) -> Result<RecessionSeries> {
    check_xi(spec, xi)?;
    check_t_list(&[t])?;
    if s_list.is_empty() || s_list[0] < 1.0 || s_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("s_list must be increasing with s >= 1".into()));
    }
    let d = spec.dim;
    let n = s.effective(spec);
    let field_seed = derive_seed(s.seed, stream_tag("recession"), &[]);
    let mut tasks = Vec::new();
    for (k, &sc) in s_list.iter().enumerate() {
        for r in 0..n as u64 {
            tasks.push(Task {
                field_seed,
                index: r,
                shift: None,
                xi: xi.scale(sc),
                lo: cube_lo(&vec![0.0; d], t),
                side: t,
                norm_side: t,
                record: blank(0, 0, t, r, k),
            });
        }
    }
    let mut records = run_tasks(spec, tasks, s)?;
    for rec in records.iter_mut() {
        rec.value /= s_list[rec.part];
    }
    let series: Vec<Summary> = (0..s_list.len())
        .map(|k| summarize(&records.iter().filter(|r| r.part == k).map(|r| r.value).collect::<Vec<_>>()))
        .collect();
    let f_inf = series.last().map(|x| x.mean).unwrap_or(0.0);
    Ok(RecessionSeries { s_list: s_list.to_vec(), series, f_inf, records })
}

/// Consecutive differences of the recession series against
/// `E[λ] (1/s_k - 1/s_{k+1})`: per-realization increments are summarized and
/// must match within their CI plus `2·tol·max(1, value)` per end point.
pub fn verify_recession(rs: &RecessionSeries, lambda_mean: f64, tol: f64) -> PropertyReport {
    let k = rs.s_list.len();
    let mut checks = Vec::new();
    let reals: Vec<u64> = {
        let mut v: Vec<u64> = rs.records.iter().map(|r| r.realization).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let value = |i: usize, r: u64| rs.records.iter().find(|x| x.part == i && x.realization == r).map(|x| x.value);
    for i in 0..k.saturating_sub(1) {
        let expected = lambda_mean * (1.0 / rs.s_list[i] - 1.0 / rs.s_list[i + 1]);
        let incs: Vec<f64> = reals
            .iter()
            .filter_map(|&r| Some(value(i, r)? - value(i + 1, r)?))
            .collect();
        let sm = summarize(&incs);
        let scale = rs.series[i].mean.abs().max(rs.series[i + 1].mean.abs()).max(1.0);
        let allowance = sm.ci_half_width + 2.0 * tol * scale;
        let label = format!("s{}-s{}", rs.s_list[i], rs.s_list[i + 1]);
        checks.push(Check::upper(format!("{label}/above"), sm.mean, expected, allowance));
        checks.push(Check::lower(format!("{label}/below"), sm.mean, expected, allowance));
    }
    PropertyReport::from_checks("recession", reals.len(), checks)
}

/// Midpoint convexity of `f̂` along the segment `ξ₁ → ξ₂` at `points`
/// equispaced parameters, on common realizations. A point passes when the
/// midpoint slack is at least `-(2·tol·max(1, f̂) + CI)`.
pub fn check_rank_one_convexity(
    spec: &FieldSpec,
    xi1: &Matrix<f64>,
    xi2: &Matrix<f64>,
    points: usize,
    t: f64,
    s: &McSettings,
) -> Result<PropertyRun> {
    check_xi(spec, xi1)?;
    check_xi(spec, xi2)?;
    if xi1.rows() != xi2.rows() {
        return Err(Error::Input("ξ₁ and ξ₂ must have the same shape".into()));
    }
    let defect = xi1.sub(xi2).rank_one_defect();
    if defect > 1e-12 {
        return Err(Error::Input(format!("ξ₁ - ξ₂ is not rank one (defect {defect:.3e})")));
    }
    if points < 3 {
        return Err(Error::Input("need at least 3 segment points".into()));
    }
    check_t_list(&[t])?;
    let d = spec.dim;
    let n = s.effective(spec);
    let field_seed = derive_seed(s.seed, stream_tag("rank-one"), &[]);
    let mut tasks = Vec::new();
    for k in 0..points {
        let lam = k as f64 / (points - 1) as f64;
        for r in 0..n as u64 {
            tasks.push(Task {
                field_seed,
                index: r,
                shift: None,
                xi: Matrix::lerp(xi1, xi2, lam),
                lo: cube_lo(&vec![0.0; d], t),
                side: t,
                norm_side: t,
                record: blank(k, 0, t, r, k),
            });
        }
    }
    let records = run_tasks(spec, tasks, s)?;
    let tol = s.tol();
    let at = |k: usize, r: u64| records[k * n + r as usize].value;
    let mut checks = Vec::new();
    for k in 1..points - 1 {
        let slacks: Vec<f64> = (0..n as u64).map(|r| 0.5 * (at(k - 1, r) + at(k + 1, r)) - at(k, r)).collect();
        let sm = summarize(&slacks);
        let scale = (0..n as u64).map(|r| at(k, r).abs()).fold(1.0, f64::max);
        let ci = if n > 1 { sm.ci_half_width } else { 0.0 };
        checks.push(Check::lower(format!("point{k}"), sm.mean, 0.0, 2.0 * tol * scale + ci));
    }
    let mut report = PropertyReport::from_checks("rank_one_convexity", n, checks);
    let flagged = records.iter().filter(|r| r.flagged()).count();
    if flagged > 0 {
        report = report.fail(format!("{flagged} solves did not certify"));
    }
    Ok(PropertyRun { report, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::DistributionSpec;
    use crate::field::{Diagonal, Structure};
    use crate::integrand::growth_constants;

    fn e(i: usize) -> Matrix<f64> {
        Matrix::unit(1, 2, 0, i)
    }

    #[test]
    fn constant_field_estimate_is_exact() {
        let spec = FieldSpec::constant(2, 2.0);
        let xi = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let est = estimate_f_hom(&spec, &xi, &[2.0, 4.0], &McSettings::new(3, 1, 1e-6)).unwrap();
        assert!((est.f_hat - 2.0 * 2f64.sqrt()).abs() < 1e-9, "{}", est.f_hat);
        assert_eq!(est.ci_half_width, 0.0);
        assert!(est.extrapolated.is_some());
        assert!(!est.flagged);
        let rep = verify_growth_sandwich(&est, &growth_constants(&spec, 0));
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn estimate_rejects_bad_input() {
        let spec = FieldSpec::constant(2, 1.0);
        let s = McSettings::new(2, 0, 1e-5);
        assert!(estimate_f_hom(&spec, &e(0), &[4.0, 2.0], &s).is_err());
        assert!(estimate_f_hom(&spec, &Matrix::zeros(1, 3), &[2.0], &s).is_err());
        assert!(estimate_f_hom(&spec, &e(0), &[2.0], &McSettings::new(1, 0, 1e-5)).is_err());
    }

    #[test]
    fn infinite_upper_constant_keeps_lower_check() {
        let spec = FieldSpec::iid(2, Diagonal::Isotropic(DistributionSpec::Pareto { x_m: 1.0, alpha: 1.0 }));
        let gc = growth_constants(&spec, 1000);
        let est = HomEstimate {
            xi: e(0),
            levels: vec![],
            f_hat: 0.5,
            ci_half_width: 0.0,
            extrapolated: None,
            tol: 1e-5,
            flagged: false,
            records: vec![],
        };
        let rep = verify_growth_sandwich(&est, &gc);
        assert!(!rep.passed);
        assert!(rep.checks[1].passed());
    }

    #[test]
    fn constant_field_subadditivity_is_tight() {
        let spec = FieldSpec::constant(2, 1.5);
        let run = check_subadditivity(&spec, &[e(0)], 4.0, 2, &McSettings::new(2, 3, 1e-6)).unwrap();
        assert!(run.report.passed);
        for c in &run.report.checks {
            assert!((c.value - c.bound).abs() < 1e-6 * c.value);
        }
    }

    #[test]
    fn matched_shift_is_exact() {
        let spec = FieldSpec::iid(2, Diagonal::Isotropic(DistributionSpec::TwoPoint { v1: 1.0, p: 0.5, v2: 2.0 }));
        let run = check_stationarity_in_law(&spec, &e(0), 3.0, &[5, -2], 0.01, &McSettings::new(4, 9, 1e-4)).unwrap();
        for c in run.report.checks.iter().filter(|c| c.label.starts_with("matched")) {
            assert_eq!(c.value, 0.0);
        }
    }

    #[test]
    fn recession_of_zero_is_zero() {
        let spec = FieldSpec::constant(2, 1.0);
        let rs = recession(&spec, &Matrix::zeros(1, 2), &[1.0, 2.0], 2.0, &McSettings::new(2, 0, 1e-5)).unwrap();
        assert!(rs.series.iter().all(|x| x.mean == 0.0));
        assert_eq!(rs.f_inf, 0.0);
    }

    #[test]
    fn rank_one_requires_rank_one_pair() {
        let spec = FieldSpec::constant(2, 1.0);
        let s = McSettings::new(2, 0, 1e-5);
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let b = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(check_rank_one_convexity(&spec, &a, &b, 5, 2.0, &s), Err(Error::Input(_))));
        let same = check_rank_one_convexity(&spec, &a, &a, 5, 2.0, &s).unwrap();
        assert!(same.report.passed);
    }

    #[test]
    fn periodic_fields_use_one_realization() {
        let spec = FieldSpec {
            dim: 2,
            structure: Structure::Periodic { tile: vec![2, 2], weights: vec![vec![1.0], vec![2.0], vec![2.0], vec![1.0]], lambda: None },
            diagonal: None,
            lambda: None,
            random_offset: false,
        };
        let run = check_rank_one_convexity(&spec, &e(0), &e(1), 5, 2.0, &McSettings::new(10, 0, 1e-5)).unwrap();
        assert_eq!(run.records.len(), 5);
        assert!(run.report.passed, "{:?}", run.report);
    }
}
