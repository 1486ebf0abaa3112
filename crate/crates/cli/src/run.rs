//! Command execution and output writing.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use homlab_core::degeneracy::ProbeSettings;
use homlab_core::glue::ALPHA;
use homlab_core::rng::{derive_seed, stream_tag, KeyedStream};
use homlab_core::stats::summarize;
use homlab_core::{
    assemble, birkhoff_average, cheap_interface, check_rank_one_convexity, check_stationarity_in_law,
    check_subadditivity, coercivity_constant, divergence_experiment, dump, estimate_f_hom_indexed,
    glue_with_cutoff, growth_constants, hitting_statistics, interface_limit_check, mu_xi_on, recession,
    sample_field, solve_cell, verify_growth_sandwich, verify_recession, AxisBox, Check, Diagonal,
    DistributionSpec, Error, FieldSpec, Grid, IntegrandModel, Matrix, McSettings, Observable, PropertyReport,
    SolveRecord, Structure,
};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{expand_xi, Command, ConfigError, ConfigErrors, RunConfig};
use crate::records::{
    format_xi, unix_ms, write_csv, write_summary, Environment, OutputPaths, ResultRecord, RunSummary, Verdict,
    CSV_VERSION, SUMMARY_SCHEMA, SUMMARY_VERSION,
};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "HOMLAB_WORKERS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

/// Command line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigErrors),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "output error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Io(_) => EXIT_ERROR,
        }
    }
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub paths: OutputPaths,
    pub summary: RunSummary,
}

/// `--workers`, then the config, then [`WORKERS_ENV`], then all cores.
pub fn resolve_workers(flag: Option<usize>, cfg: &RunConfig) -> Result<usize, ConfigErrors> {
    if let Some(w) = flag.or(cfg.workers) {
        return Ok(w.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(ConfigErrors(vec![ConfigError {
                field: WORKERS_ENV.into(),
                message: format!("expected a positive integer, got {v:?}"),
            }])),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Stable id of the numerical content of a run: everything except the
/// worker count and output location.
pub fn run_id(cfg: &RunConfig, command: Command) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("workers");
        m.remove("output");
        m.insert("command".into(), json!(command.name()));
    }
    format!("{:016x}", stream_tag(&v.to_string()))
}

fn requirement_errors(cfg: &RunConfig, command: Command) -> Vec<ConfigError> {
    let mut errs = Vec::new();
    let mut need = |ok: bool, field: &str, message: &str| {
        if !ok {
            errs.push(ConfigError { field: field.into(), message: format!("{message} for {command}") });
        }
    };
    if let Some(c) = cfg.command {
        need(c == command, "command", &format!("config is for {c}, not valid"));
    }
    use Command::*;
    if matches!(command, SolveCell | EstimateFhom | VerifyBounds | Subadditivity | Stationarity | Recession | DegenerateDivergence) {
        need(!cfg.xi.is_empty(), "xi", "at least one ξ is required");
    }
    if matches!(command, FieldStats | SolveCell | EstimateFhom | VerifyBounds | DegenerateDivergence) {
        need(!cfg.t_list.is_empty(), "t_list", "a nonempty t_list is required");
    }
    let single = |t: Option<f64>| cfg.single_t(t).is_some();
    match command {
        Subadditivity => {
            need(single(cfg.subadditivity.t), "subadditivity.t", "a side length is required");
            need(cfg.subadditivity.depth >= 1, "subadditivity.depth", "depth >= 1 is required");
        }
        Stationarity => need(single(cfg.stationarity.t), "stationarity.t", "a side length is required"),
        Recession => need(single(cfg.recession.t), "recession.t", "a side length is required"),
        RankOne => {
            need(single(cfg.rank_one.t), "rank_one.t", "a side length is required");
            let endpoints = cfg.rank_one.xi1.is_some() as usize + cfg.rank_one.xi2.is_some() as usize;
            need(endpoints == 2 || cfg.xi.len() >= 2, "rank_one", "two endpoints (xi1, xi2 or two xi entries) are required");
        }
        DegenerateInterface => need(!cfg.degenerate_interface.deltas.is_empty(), "degenerate_interface.deltas", "at least one δ is required"),
        GlueCheck => need(!cfg.glue_check.deltas.is_empty(), "glue_check.deltas", "at least one δ is required"),
        _ => {}
    }
    errs
}

#[derive(Default)]
struct Acc {
    records: Vec<ResultRecord>,
    reports: Vec<PropertyReport>,
    estimates: Vec<Value>,
    constants: Option<Value>,
    details: Map<String, Value>,
    flagged: bool,
}

fn mc(cfg: &RunConfig) -> McSettings {
    McSettings { realizations: cfg.n, seed: cfg.seed, solve: cfg.solve_options(), policy: cfg.resolution_policy }
}

fn solve_rows(acc: &mut Acc, quantity: &str, xis: &[String], recs: &[SolveRecord], xi_of: impl Fn(&SolveRecord) -> usize) {
    for r in recs {
        let i = xi_of(r);
        let mut row = ResultRecord::from_solve(quantity, &xis[i], r);
        row.xi_index = i;
        acc.records.push(row);
    }
}

fn certificate_details(acc: &mut Acc, tol: f64) {
    let solves: Vec<&ResultRecord> = acc.records.iter().filter(|r| r.primal.is_some() && r.dual.is_some()).collect();
    let uncertified = solves.iter().filter(|r| !r.flags.is_empty()).count();
    let dual_above = solves.iter().filter(|r| r.dual.unwrap() > r.primal.unwrap()).count();
    let worst_gap = solves.iter().filter(|r| r.flags.is_empty()).map(|r| r.gap.unwrap()).fold(0.0, f64::max);
    acc.details.insert(
        "certificates".into(),
        json!({"solves": solves.len(), "uncertified": uncertified, "dual_above_primal": dual_above,
               "worst_certified_gap": worst_gap, "tol": tol}),
    );
}

fn labeled(mut r: PropertyReport, label: String) -> PropertyReport {
    r.property = label;
    r
}

fn first_law(spec: &FieldSpec) -> Option<&DistributionSpec> {
    match spec.diagonal.as_ref()? {
        Diagonal::Isotropic(l) => Some(l),
        Diagonal::PerEntry(v) => v.first(),
    }
}

/// `(mean, variance)` of the observable on one cell, when known in closed form.
fn observable_law(spec: &FieldSpec, obs: Observable) -> Option<(f64, f64)> {
    if matches!(spec.structure, Structure::Periodic { .. }) {
        return None;
    }
    let d = spec.dim as f64;
    match obs {
        Observable::Lambda => Some(spec.lambda.as_ref().map(|l| (l.mean(), l.variance())).unwrap_or((0.0, 0.0))),
        Observable::Entry(j) => match spec.diagonal.as_ref()? {
            Diagonal::Isotropic(l) => Some((l.mean(), l.variance())),
            Diagonal::PerEntry(v) => v.get(j - 1).map(|l| (l.mean(), l.variance())),
        },
        Observable::Norm => match spec.diagonal.as_ref()? {
            Diagonal::Isotropic(l) => Some((d.sqrt() * l.mean(), d * l.variance())),
            Diagonal::PerEntry(_) => None,
        },
    }
}

fn observable_name(obs: Observable) -> String {
    match obs {
        Observable::Norm => "norm".into(),
        Observable::Lambda => "lambda".into(),
        Observable::Entry(j) => format!("entry{j}"),
    }
}

fn field_stats(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let spec = &cfg.field;
    let d = spec.dim;
    let obs = cfg.field_stats.observable;
    let region = cfg.field_stats.region.clone().unwrap_or_else(|| AxisBox::unit(d));
    let seed = derive_seed(cfg.seed, stream_tag("field-stats"), &[]);
    let n = if spec.is_periodic() && !spec.random_offset { 1 } else { cfg.n };
    let series: Vec<Vec<(f64, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|r| birkhoff_average(&sample_field(spec, seed, r)?, obs, &region, &cfg.t_list))
        .collect::<homlab_core::Result<_>>()?;
    let name = format!("birkhoff_{}", observable_name(obs));
    for (r, s) in series.iter().enumerate() {
        for &(t, v) in s {
            acc.records.push(ResultRecord::new(&name, 0, "", t, Some(r as u64), 0, v));
        }
    }
    let mut levels = Vec::new();
    for (k, &t) in cfg.t_list.iter().enumerate() {
        let sm = summarize(&series.iter().map(|s| s[k].1).collect::<Vec<_>>());
        acc.records.push(ResultRecord::aggregate(&format!("{name}_mean"), 0, "", t, &sm));
        levels.push((t, sm));
    }

    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let law = observable_law(spec, obs);
    let (t_last, last) = levels.last().cloned().expect("nonempty t_list");
    match law {
        Some((mean, var)) if mean.is_finite() && var.is_finite() => {
            let cells = match spec.structure {
                Structure::Laminate { axis } => t_last * (region.hi[axis - 1] - region.lo[axis - 1]),
                _ => t_last.powi(d as i32) * region.volume(),
            };
            let se = (var / cells / n as f64).sqrt();
            checks.push(Check::upper(format!("mean/t{t_last}"), (last.mean - mean).abs(), 3.0 * se, 0.0));
            notes.push(format!("law mean {mean}; 3 standard errors = {}", 3.0 * se));
        }
        Some((mean, _)) if mean.is_infinite() => {
            let first = levels[0].1.mean;
            let ratio = last.mean / first;
            if levels.len() > 1 {
                checks.push(Check::lower("divergence_ratio", ratio, 2.0, 0.0));
            }
            notes.push(format!("infinite law mean; last/first series ratio {ratio}"));
        }
        Some(_) => notes.push("infinite variance; no standard error available".into()),
        None => notes.push("no closed-form law for this observable".into()),
    }
    let mut report = PropertyReport::from_checks("ergodic_average", n, checks);
    for note in notes {
        report = report.with_note(note);
    }
    acc.reports.push(report);
    acc.details.insert(
        "series".into(),
        json!(levels.iter().map(|(t, s)| json!({"t": t, "mean": s.mean, "std": s.std, "ci_half_width": s.ci_half_width})).collect::<Vec<_>>()),
    );
    acc.details.insert("observable".into(), json!(obs));
    acc.details.insert("box".into(), json!(region));
    acc.details.insert("realizations".into(), json!(n));
    constants(cfg, acc);
    Ok(())
}

fn constants(cfg: &RunConfig, acc: &mut Acc) {
    let gc = growth_constants(&cfg.field, cfg.verify_bounds.mc_budget);
    let cb = coercivity_constant(&cfg.field);
    acc.constants = Some(json!({"growth": gc, "coercivity": cb}));
}

fn solve_cell_cmd(cfg: &RunConfig, paths: &OutputPaths, stem: &str, acc: &mut Acc) -> homlab_core::Result<()> {
    let spec = &cfg.field;
    let p = &cfg.solve_cell;
    let seed = derive_seed(cfg.seed, stream_tag("solve-cell"), &[]);
    let center = p.center.clone().unwrap_or_else(|| vec![0.0; spec.dim]);
    if center.len() != spec.dim {
        return Err(Error::Input(format!("solve_cell.center needs {} entries", spec.dim)));
    }
    let model = IntegrandModel::new(sample_field(spec, seed, p.realization)?, cfg.m);
    let opts = cfg.solve_options();
    let tasks: Vec<(usize, usize)> = (0..cfg.xi.len()).flat_map(|i| (0..cfg.t_list.len()).map(move |j| (i, j))).collect();
    let out: Vec<_> = tasks
        .par_iter()
        .map(|&(i, j)| {
            let t = cfg.t_list[j];
            let grid = Grid::centered(&center, t, cfg.resolution_policy.cells(t)?, cfg.m)?;
            let e = mu_xi_on(&model, &cfg.xi[i], &grid, &opts)?;
            Ok((i, j, grid, e))
        })
        .collect::<homlab_core::Result<_>>()?;
    let mut dumps = Vec::new();
    let mut checks = Vec::new();
    for (i, j, grid, e) in out {
        let r = &e.report;
        let t = cfg.t_list[j];
        let certified = r.is_certified(opts.tol);
        let rec = SolveRecord {
            xi_index: i,
            t_index: j,
            t,
            realization: p.realization,
            part: 0,
            value: e.value,
            primal: r.primal,
            dual: r.dual,
            gap: r.gap,
            iterations: r.iterations,
            converged: certified,
            cells_per_side: grid.n(),
            wall_time_s: r.wall_time_s,
        };
        acc.records.push(ResultRecord::from_solve("mu_normalized", &format_xi(&cfg.xi[i]), &rec));
        checks.push(Check::upper(format!("xi{i}/t{t}/gap"), r.gap, opts.tol, 0.0));
        checks.push(Check::upper(format!("xi{i}/t{t}/dual"), r.dual, r.primal, 0.0));
        acc.flagged |= !certified;
        if p.dump {
            let path = paths.dir.join(format!("{stem}_xi{i}_t{j}.bin"));
            let problem = json!({
                "xi": cfg.xi[i], "field": spec, "seed": cfg.seed, "realization": p.realization,
                "primal": r.primal, "dual": r.dual, "gap": r.gap, "value": e.value,
            });
            dump::write_minimizer(&path, &grid, &r.minimizer, problem)?;
            dumps.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    acc.reports.push(PropertyReport::from_checks("certificates", checks.len() / 2, checks));
    if p.dump {
        acc.details.insert("dumps".into(), json!(dumps));
    }
    Ok(())
}

fn estimate_value(est: &homlab_core::HomEstimate, xi_index: usize) -> Value {
    let mut v = serde_json::to_value(est).expect("estimate serializes");
    if let Value::Object(m) = &mut v {
        m.remove("records");
        m.insert("xi_index".into(), json!(xi_index));
    }
    v
}

fn estimates(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<Vec<homlab_core::HomEstimate>> {
    let s = mc(cfg);
    let xis: Vec<String> = cfg.xi.iter().map(format_xi).collect();
    let mut out = Vec::new();
    for (i, xi) in cfg.xi.iter().enumerate() {
        let est = estimate_f_hom_indexed(&cfg.field, xi, i, &cfg.t_list, &s)?;
        solve_rows(acc, "mu_normalized", &xis, &est.records, |_| i);
        for l in &est.levels {
            let mut row = ResultRecord::aggregate("f_hat_level", i, &xis[i], l.t, &l.summary);
            if l.flagged > 0 {
                row = row.with_flag(&format!("uncertified={}", l.flagged));
            }
            acc.records.push(row);
        }
        acc.flagged |= est.flagged;
        acc.estimates.push(estimate_value(&est, i));
        out.push(est);
    }
    Ok(out)
}

fn verify_bounds(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    constants(cfg, acc);
    let gc = growth_constants(&cfg.field, cfg.verify_bounds.mc_budget);
    for (i, est) in estimates(cfg, acc)?.iter().enumerate() {
        acc.reports.push(labeled(verify_growth_sandwich(est, &gc), format!("growth_sandwich/xi{i}")));
    }
    Ok(())
}

fn subadditivity(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.subadditivity;
    let t = cfg.single_t(p.t).expect("checked");
    let run = check_subadditivity(&cfg.field, &cfg.xi, t, p.depth, &mc(cfg))?;
    let xis: Vec<String> = cfg.xi.iter().map(format_xi).collect();
    solve_rows(acc, "mu_subcube", &xis, &run.records, |r| r.xi_index);
    acc.reports.push(run.report);
    acc.details.insert("t".into(), json!(t));
    acc.details.insert("depth".into(), json!(p.depth));
    Ok(())
}

fn stationarity(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.stationarity;
    let t = cfg.single_t(p.t).expect("checked");
    let z = p.shift.clone().unwrap_or_else(|| vec![3; cfg.field.dim]);
    let alpha = p.ks_alpha.unwrap_or(0.01);
    let xis: Vec<String> = cfg.xi.iter().map(format_xi).collect();
    for (i, xi) in cfg.xi.iter().enumerate() {
        let run = check_stationarity_in_law(&cfg.field, xi, t, &z, alpha, &mc(cfg))?;
        solve_rows(acc, "mu_normalized", &xis, &run.records, |_| i);
        acc.reports.push(labeled(run.report, format!("stationarity/xi{i}")));
    }
    acc.details.insert("t".into(), json!(t));
    acc.details.insert("shift".into(), json!(z));
    acc.details.insert("parts".into(), json!(["at_shift", "shifted_field", "independent"]));
    Ok(())
}

fn recession_cmd(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.recession;
    let t = cfg.single_t(p.t).expect("checked");
    let lambda_mean = cfg.field.lambda.as_ref().map(|l| l.mean()).unwrap_or(0.0);
    let xis: Vec<String> = cfg.xi.iter().map(format_xi).collect();
    let mut series = Vec::new();
    for (i, xi) in cfg.xi.iter().enumerate() {
        let rs = recession(&cfg.field, xi, &p.s_list, t, &mc(cfg))?;
        for r in &rs.records {
            let row = ResultRecord::from_solve("mu_over_s", &xis[i], r).with_param(p.s_list[r.part]);
            acc.records.push(ResultRecord { xi_index: i, ..row });
        }
        for (k, sm) in rs.series.iter().enumerate() {
            let row = ResultRecord::aggregate("mu_over_s_mean", i, &xis[i], t, sm).with_param(p.s_list[k]);
            acc.records.push(ResultRecord { part: k, ..row });
        }
        acc.flagged |= rs.records.iter().filter(|r| r.flagged()).count() as f64 > homlab_core::homogenizer::FLAG_FRACTION * rs.records.len() as f64;
        acc.reports.push(labeled(verify_recession(&rs, lambda_mean, cfg.tol), format!("recession/xi{i}")));
        series.push(json!({"xi_index": i, "s_list": rs.s_list, "series": rs.series, "f_inf": rs.f_inf}));
    }
    acc.details.insert("t".into(), json!(t));
    acc.details.insert("lambda_mean".into(), json!(lambda_mean));
    acc.details.insert("series".into(), json!(series));
    Ok(())
}

fn rank_one(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.rank_one;
    let t = cfg.single_t(p.t).expect("checked");
    let pick = |e: &Option<crate::config::XiEntry>, k: usize| -> homlab_core::Result<Matrix<f64>> {
        match e {
            Some(e) => Ok(expand_xi(e, Some(cfg.field.dim), cfg.m).map_err(Error::Input)?.remove(0)),
            None => Ok(cfg.xi[k].clone()),
        }
    };
    let (xi1, xi2) = (pick(&p.xi1, 0)?, pick(&p.xi2, 1)?);
    let run = check_rank_one_convexity(&cfg.field, &xi1, &xi2, p.points, t, &mc(cfg))?;
    let xis: Vec<String> =
        (0..p.points).map(|k| format_xi(&Matrix::lerp(&xi1, &xi2, k as f64 / (p.points - 1) as f64))).collect();
    for r in &run.records {
        let row = ResultRecord::from_solve("mu_normalized", &xis[r.part], r);
        acc.records.push(row.with_param(r.part as f64 / (p.points - 1) as f64));
    }
    acc.reports.push(run.report);
    acc.details.insert("xi1".into(), json!(xi1));
    acc.details.insert("xi2".into(), json!(xi2));
    acc.details.insert("t".into(), json!(t));
    Ok(())
}

fn divergence(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let infinite_mean = first_law(&cfg.field).map(|l| l.mean().is_infinite()).unwrap_or(false);
    let mut out = Vec::new();
    for (i, xi) in cfg.xi.iter().enumerate() {
        let x = format_xi(xi);
        let rep = divergence_experiment(&cfg.field, xi, &cfg.t_list, &mc(cfg))?;
        let mut uncertified = 0;
        for pt in &rep.points {
            let mut row = ResultRecord::new("mu_normalized", i, &x, pt.t, Some(pt.realization), 0, pt.value);
            row.gap = Some(pt.gap);
            row.iterations = Some(pt.iterations);
            row.cells_per_side = Some(pt.cells_per_side);
            row.wall_time_s = pt.wall_time_s;
            let vol = pt.t.powi(cfg.field.dim as i32);
            row.primal = Some(pt.value * vol);
            if !pt.converged {
                row = row.with_flag("not_certified");
                uncertified += 1;
            }
            acc.records.push(row);
            let mut b = ResultRecord::new("jensen_bound", i, &x, pt.t, Some(pt.realization), 1, pt.bound);
            b.std = None;
            acc.records.push(b.with_param(pt.discretization_slack));
        }
        for (k, (&t, sm)) in rep.t_list.iter().zip(&rep.series).enumerate() {
            let row = ResultRecord::aggregate("mu_normalized_mean", i, &x, t, sm).with_param(rep.medians[k]);
            acc.records.push(row);
        }
        acc.flagged |= uncertified as f64 > homlab_core::homogenizer::FLAG_FRACTION * rep.points.len() as f64;
        acc.reports.push(labeled(rep.bound_check.clone(), format!("jensen_bound/xi{i}")));
        let mut checks = Vec::new();
        let mut report_notes = Vec::new();
        if infinite_mean {
            for (k, w) in rep.series.windows(2).enumerate() {
                checks.push(Check::lower(format!("increasing/{k}"), w[1].mean, w[0].mean, 0.0));
            }
            checks.push(Check::lower("ratio", rep.ratio, 2.0, 0.0));
        } else {
            report_notes.push("finite mean law; divergence is not expected and not tested".to_string());
        }
        let mut r = PropertyReport::from_checks(format!("divergence/xi{i}"), rep.t_list.len(), checks);
        for note in report_notes {
            r = r.with_note(note);
        }
        acc.reports.push(r);
        out.push(json!({"xi_index": i, "t_list": rep.t_list, "series": rep.series, "medians": rep.medians,
                        "ratio": rep.ratio, "diverging": rep.diverging}));
    }
    acc.details.insert("experiments".into(), json!(out));
    Ok(())
}

fn interface(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.degenerate_interface;
    let ps = ProbeSettings { search_limit: p.search_limit, target: p.target, window: p.window };
    let seed = derive_seed(cfg.seed, stream_tag("degenerate-interface"), &[]);
    let probes = p
        .deltas
        .iter()
        .map(|&delta| cheap_interface(&cfg.field, delta, seed, 0, &ps))
        .collect::<homlab_core::Result<Vec<_>>>()?;
    for (k, pr) in probes.iter().enumerate() {
        for (q, v) in [("interface_energy", pr.energy), ("interface_l1_step", pr.l1_to_step), ("interface_l1_target", pr.l1_to_target)] {
            let mut row = ResultRecord::new(q, 0, "", 1.0, Some(pr.realization), k, v.unwrap_or(f64::NAN)).with_param(pr.delta);
            if !pr.success {
                row = row.with_flag("not_found");
            }
            acc.records.push(row);
        }
    }
    acc.reports.push(interface_limit_check(&cfg.field, &probes));
    let mut checks = Vec::new();
    let mut stats = Vec::new();
    let mut notes = Vec::new();
    for (k, &delta) in p.deltas.iter().enumerate() {
        let hs = hitting_statistics(&cfg.field, delta, derive_seed(cfg.seed, stream_tag("hitting"), &[k as u64]), p.scans, &ps)?;
        if hs.p_delta == 0.0 {
            notes.push(format!("P(a < {delta}) = 0: hitting index undefined, level skipped"));
            stats.push(hs);
            continue;
        }
        let mut row = ResultRecord::new("hits_before_mean", 0, "", 1.0, None, k, hs.empirical_mean).with_param(delta);
        row.std = Some(hs.standard_error * (hs.scans as f64).sqrt());
        row.ci_half_width = Some(4.0 * hs.standard_error);
        acc.records.push(row);
        checks.push(Check::upper(format!("delta{delta}/z"), hs.z_score.abs(), 4.0, 0.0));
        if hs.failures > 0 {
            checks.push(Check::upper(format!("delta{delta}/failures"), hs.failures as f64, 0.0, 0.0));
        }
        stats.push(hs);
    }
    let mut report = PropertyReport::from_checks("hitting_statistics", p.scans, checks);
    for note in notes {
        report = report.with_note(note);
    }
    acc.reports.push(report);
    acc.details.insert("probes".into(), json!(probes));
    acc.details.insert("hitting".into(), json!(stats));
    Ok(())
}

/// `⌈max(1/α, 1)/δ⌉`, treating ratios within rounding of an integer as exact.
pub fn expected_layers(delta: f64) -> usize {
    let q = (1.0 / ALPHA).max(1.0) / delta;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q {
        r as usize
    } else {
        q.ceil() as usize
    }
}

fn glue_check(cfg: &RunConfig, acc: &mut Acc) -> homlab_core::Result<()> {
    let p = &cfg.glue_check;
    let (d, m) = (cfg.field.dim, cfg.m);
    let side = p.side;
    let scaled = |b: &Option<AxisBox>, lo: f64, hi: f64| match b {
        Some(b) => AxisBox::new(b.lo.iter().map(|v| v * side).collect(), b.hi.iter().map(|v| v * side).collect()),
        None => AxisBox::new(vec![lo * side; d], vec![hi * side; d]),
    };
    let inner = scaled(&p.inner, 0.375, 0.625);
    let outer = scaled(&p.outer, 0.125, 0.875);
    let whole = AxisBox::new(vec![0.0; d], vec![side; d]);
    let grid = Grid::with_corner(vec![0.0; d], side, p.cells, m)?;
    let field_seed = derive_seed(cfg.seed, stream_tag("glue-field"), &[]);
    let opts = cfg.solve_options();
    let results: Vec<_> = (0..p.instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = KeyedStream::new(derive_seed(cfg.seed, stream_tag("glue-check"), &[i]));
            let model = IntegrandModel::new(sample_field(&cfg.field, field_seed, i)?, m);
            let mut draw = || Matrix::from_vec(m, d, (0..m * d).map(|_| 4.0 * rng.next_f64() - 2.0).collect());
            let (xa, xb) = (draw(), draw());
            let offset = 2.0 * rng.next_f64() - 1.0;
            let delta = p.deltas[i as usize % p.deltas.len()];
            let pa = assemble::<f64>(&model, &grid, &xa)?;
            let pb = pa.with_xi(xb.clone())?;
            let (ra, rb) = (solve_cell(&pa, &opts)?, solve_cell(&pb, &opts)?);
            let certified = ra.is_certified(opts.tol) && rb.is_certified(opts.tol);
            let full = |xi: &Matrix<f64>, v: &[f64], c: f64| -> Vec<f64> {
                let mut x = vec![0.0; d];
                let mut out = vec![0.0; v.len()];
                for node in 0..grid.num_nodes() {
                    grid.node_coord(node, &mut x);
                    for r in 0..m {
                        let lin: f64 = (0..d).map(|k| xi.get(r, k) * x[k]).sum();
                        out[node * m + r] = lin + v[node * m + r] + c;
                    }
                }
                out
            };
            let u = full(&xa, &ra.minimizer, 0.0);
            let v = full(&xb, &rb.minimizer, offset);
            let (_, rep) = glue_with_cutoff(&u, &v, &inner, &outer, &whole, delta, &pa)?;
            Ok((i, delta, xa, xb, certified, rep))
        })
        .collect::<homlab_core::Result<_>>()?;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for (i, delta, xa, xb, certified, rep) in results {
        let x = format!("{};{}", format_xi(&xa), format_xi(&xb));
        for (part, (q, val)) in [("glue_slack", rep.slack), ("glue_lhs", rep.lhs), ("glue_rhs", rep.rhs)].into_iter().enumerate() {
            let mut row = ResultRecord::new(q, 0, &x, side, Some(i), part, val).with_param(delta);
            if !certified {
                row = row.with_flag("not_certified");
            }
            acc.records.push(row);
        }
        checks.push(Check::upper(format!("instance{i}/estimate"), rep.lhs, rep.rhs, 0.0));
        let expected = expected_layers(delta);
        checks.push(Check::upper(format!("instance{i}/layers"), (rep.layers as f64 - expected as f64).abs(), 0.0, 0.0));
        reports.push(rep);
    }
    acc.reports.push(PropertyReport::from_checks("fundamental_estimate", p.instances, checks));
    acc.details.insert("inner".into(), json!(inner));
    acc.details.insert("outer".into(), json!(outer));
    acc.details.insert("instances".into(), json!(reports));
    Ok(())
}

fn dispatch(cfg: &RunConfig, command: Command, paths: &OutputPaths, stem: &str, acc: &mut Acc) -> homlab_core::Result<()> {
    match command {
        Command::FieldStats => field_stats(cfg, acc),
        Command::SolveCell => solve_cell_cmd(cfg, paths, stem, acc),
        Command::EstimateFhom => estimates(cfg, acc).map(|_| ()),
        Command::VerifyBounds => verify_bounds(cfg, acc),
        Command::Subadditivity => subadditivity(cfg, acc),
        Command::Stationarity => stationarity(cfg, acc),
        Command::Recession => recession_cmd(cfg, acc),
        Command::RankOne => rank_one(cfg, acc),
        Command::DegenerateDivergence => divergence(cfg, acc),
        Command::DegenerateInterface => interface(cfg, acc),
        Command::GlueCheck => glue_check(cfg, acc),
    }
}

/// Execute `command` and write the CSV and JSON summary. Outputs are written
/// even when the command fails part way.
pub fn run(mut cfg: RunConfig, command: Command, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let started_ms = unix_ms();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &opts.out {
        cfg.output.dir = dir.clone();
    }
    let errs = requirement_errors(&cfg, command);
    if !errs.is_empty() {
        return Err(RunError::Config(ConfigErrors(errs)));
    }
    let workers = resolve_workers(opts.workers, &cfg).map_err(RunError::Config)?;
    let stem = cfg.output.stem.clone().unwrap_or_else(|| command.name().to_string());
    fs::create_dir_all(&cfg.output.dir).map_err(|e| RunError::Io(format!("{}: {e}", cfg.output.dir.display())))?;
    let paths = OutputPaths::new(&cfg.output.dir, &stem);
    let id = run_id(&cfg, command);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| RunError::Io(e.to_string()))?;
    let mut acc = Acc::default();
    let result = pool.install(|| dispatch(&cfg, command, &paths, &stem, &mut acc));
    if acc.records.iter().any(|r| r.gap.is_some()) {
        certificate_details(&mut acc, cfg.tol);
    }

    let error = result.err().map(|e| e.to_string());
    let failed = acc.reports.iter().any(|r| !r.passed);
    let (verdict, exit_code) = match (&error, failed || acc.flagged) {
        (Some(_), _) => (Verdict::Error, EXIT_ERROR),
        (None, true) => (Verdict::Fail, EXIT_FAIL),
        (None, false) => (Verdict::Pass, EXIT_PASS),
    };
    write_csv(&paths.csv, &id, command.name(), &mut acc.records).map_err(|e| RunError::Io(e.to_string()))?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        schema_version: SUMMARY_VERSION,
        csv_version: CSV_VERSION,
        run_id: id,
        command: command.name().to_string(),
        seed: cfg.seed,
        verdict,
        exit_code,
        error,
        flagged: acc.flagged,
        csv: paths.csv.file_name().unwrap().to_string_lossy().into_owned(),
        records: acc.records.len(),
        constants: acc.constants,
        estimates: acc.estimates,
        reports: acc.reports,
        details: Value::Object(acc.details),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        environment: Environment { workers, started_unix_ms: started_ms, elapsed_s: started.elapsed().as_secs_f64() },
    };
    write_summary(&paths.summary, &summary).map_err(|e| RunError::Io(e.to_string()))?;
    Ok(RunOutcome { exit_code, paths, summary })
}
