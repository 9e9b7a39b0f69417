//! Study pipelines behind the command-line subcommands.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::acceptance::{self, BUDGETS};
use crate::ball::{macroscopic_study, EIGEN_TOL, FIT_TOL};
use crate::cell::{
    albanese_tensor, build_periodic_grid, harmonic_length_field, norm_comparison, solve_correctors, AlbaneseTensor,
    CellRecord, FORMULA_TOL,
};
use crate::config::{Resolved, Study};
use crate::distance::HorizontalNorm;
use crate::grid::Grid;
use crate::report::{to_json, Cell, ReportError, Table};
use crate::subriemannian::{
    albanese_norm, default_directions, inclusion_minmax_check, kohn_eigenvalues, shared_masks, stable_norm_estimate,
    StableNormEstimate, EQUALITY_VARIANCE,
};
use crate::volume::{asvol_lower_bound, asvol_study, compare_with_bound, haar_volume, PansuValue};

#[derive(Debug, Error)]
pub enum StudyError {
    /// A computation failed or a verdict flags a bug.
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn numerical<E: std::fmt::Display>(context: &'static str) -> impl Fn(E) -> StudyError {
    move |e| StudyError::Numerical(format!("{context}: {e}"))
}

/// Everything a study produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report_json: String,
    pub tables: Vec<Table>,
    /// Lines for `run.log` (timings live here, never in the report).
    pub log: Vec<String>,
    /// Set by `verify` when a criterion fails.
    pub acceptance_failed: bool,
}

struct Log {
    lines: Vec<String>,
    start: Instant,
}

impl Log {
    fn new() -> Self {
        Log { lines: Vec::new(), start: Instant::now() }
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.lines.push(format!("phase {name}: {:.3} s", t.elapsed().as_secs_f64()));
        out
    }

    fn line(&mut self, s: String) {
        self.lines.push(s);
    }
}

/// Report envelope shared by all studies.
fn envelope(r: &Resolved, results: Value) -> Result<String, StudyError> {
    let v = json!({
        "nilspec_version": env!("CARGO_PKG_VERSION"),
        "study": r.study.name(),
        "config": r.config,
        "results": results,
    });
    Ok(to_json(&v)?)
}

fn cell_tensor(r: &Resolved, log: &mut Log) -> Result<(AlbaneseTensor, CellRecord, Value), StudyError> {
    log.phase("cell problem", || {
        let grid = build_periodic_grid(&r.algebra, &r.cell).map_err(numerical("cell grid"))?;
        let sol = solve_correctors(&r.metric, &grid).map_err(numerical("corrector solve"))?;
        let q = albanese_tensor(&sol).map_err(numerical("albanese tensor"))?;
        let lengths = harmonic_length_field(&sol);
        let record = CellRecord::new(&sol, &q, &lengths);
        let mut rng = ChaCha8Rng::seed_from_u64(r.config.seed);
        let pairs = norm_comparison(&sol, 16, &mut rng);
        let l2_below_sup = pairs.iter().all(|p| p.l2 <= p.sup * (1.0 + 1e-12));
        let extra = json!({
            "q_gram": q.q_gram, "formula_gap": q.formula_gap, "manifold_volume": q.volume,
            "iterations": sol.iterations, "harmonic_length_mean": lengths.mean,
            "norm_comparison": pairs, "l2_below_sup": l2_below_sup,
        });
        Ok((q, record, extra))
    })
}

fn albanese(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>), StudyError> {
    let (q, record, extra) = cell_tensor(r, log)?;
    let mut t = Table::new("albanese", vec!["i", "j", "q"]);
    for (i, row) in q.q.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t.push(vec![(i + 1).into(), (j + 1).into(), (*v).into()]);
        }
    }
    Ok((json!({ "cell": record, "details": extra }), vec![t]))
}

fn needs_ball_dims(r: &Resolved) -> Result<(), StudyError> {
    if r.algebra.dim() > 3 {
        return Err(StudyError::Numerical(format!("ball studies support dimension at most 3, got {}", r.algebra.dim())));
    }
    Ok(())
}

/// Kohn eigenvalues on the Albanese CC unit ball, with the ball's Haar volume.
fn cc_ball(r: &Resolved, q: &AlbaneseTensor, log: &mut Log) -> Result<(Vec<f64>, Vec<f64>, Value), StudyError> {
    log.phase("CC ball and Kohn spectrum", || {
        let qm = q.matrix();
        let norm = albanese_norm(&qm).map_err(numerical("albanese norm"))?;
        let (fields, masks) = shared_masks(&r.algebra, &[&norm], &r.comparison).map_err(numerical("CC ball"))?;
        let pairs = kohn_eigenvalues(&qm, &r.algebra, &masks[0], r.config.k).map_err(numerical("Kohn spectrum"))?;
        let (lo, hi) = fields[0].field.bounds(1.0);
        let haar = haar_volume(&masks[0]);
        let info = json!({
            "extent_low": lo, "extent_high": hi, "mask_nodes": masks[0].count(),
            "haar_volume": haar, "spacing": masks[0].grid.spacing(),
        });
        Ok((pairs.values, pairs.residuals, info))
    })
}

fn spectrum(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>), StudyError> {
    needs_ball_dims(r)?;
    let (q, record, _) = cell_tensor(r, log)?;
    let (reference, _, _) = cc_ball(r, &q, log)?;
    let tol = r.config.tolerances.inequality * reference[0];
    let report = log.phase("rescaled balls", || {
        macroscopic_study(&r.metric, &r.rhos, &r.rule, r.config.k, Some(reference), tol).map_err(numerical("spectrum"))
    })?;
    let mut t = Table::new("spectrum", vec!["rho", "i", "lambda", "residual", "grid_N"]);
    for row in &report.rows {
        for (i, (l, res)) in row.lambdas.iter().zip(&row.residuals).enumerate() {
            t.push(vec![row.rho.into(), (i + 1).into(), (*l).into(), (*res).into(), row.grid_n.into()]);
        }
    }
    Ok((json!({ "albanese_q": record.q, "study": report }), vec![t]))
}

fn ccball(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>), StudyError> {
    needs_ball_dims(r)?;
    let (q, _, _) = cell_tensor(r, log)?;
    let (values, residuals, info) = cc_ball(r, &q, log)?;
    let mut t = Table::new("ccball", vec!["i", "lambda", "residual"]);
    for (i, (l, res)) in values.iter().zip(&residuals).enumerate() {
        t.push(vec![(i + 1).into(), (*l).into(), (*res).into()]);
    }
    Ok((json!({ "albanese_q": q.q, "kohn_eigenvalues": values, "residuals": residuals, "ball": info }), vec![t]))
}

fn stable(r: &Resolved, log: &mut Log) -> Result<StableNormEstimate, StudyError> {
    log.phase("stable norm", || {
        let dirs = default_directions(r.algebra.horizontal_dim(), r.stable_radius);
        stable_norm_estimate(&r.metric, &dirs, r.stable_n_max, r.stable_step).map_err(numerical("stable norm"))
    })
}

fn stable_norm(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>), StudyError> {
    needs_ball_dims(r)?;
    let (q, record, _) = cell_tensor(r, log)?;
    let s = stable(r, log)?;
    let verdict = if s.inner.is_some() && s.outer.is_some() {
        let v = log.phase("inclusion and minmax", || {
            inclusion_minmax_check(
                &r.algebra,
                &q.matrix(),
                &s,
                &record.variance_per_form,
                &r.comparison,
                r.config.k,
                r.config.tolerances.inequality,
            )
            .map_err(numerical("inclusion check"))
        })?;
        Some(v)
    } else {
        None
    };
    let qinv = albanese_norm(&q.matrix()).map_err(numerical("albanese norm"))?;
    let mut t = Table::new("stable_norm", vec!["direction", "power", "distance", "ratio"]);
    let mut comparison = Vec::new();
    for e in &s.estimates {
        let dir: Vec<String> = e.direction.iter().map(i64::to_string).collect();
        for (k, d) in e.distances.iter().enumerate() {
            t.push(vec![Cell::Text(dir.join(" ")), (k + 1).into(), (*d).into(), (*d / (k + 1) as f64).into()]);
        }
        let v: Vec<f64> = e.direction.iter().map(|&x| x as f64).collect();
        comparison.push(json!({ "direction": e.direction, "stable": e.norm, "albanese_dual": qinv.norm(&v) }));
    }
    Ok((
        json!({
            "albanese_q": record.q, "estimates": s, "inner_area": s.inner_area(),
            "outer_area": s.outer.as_ref().map(|p| p.area()), "norm_comparison": comparison,
            "verdict": verdict,
        }),
        vec![t],
    ))
}

fn asvol(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>), StudyError> {
    needs_ball_dims(r)?;
    let (q, _, _) = cell_tensor(r, log)?;
    let bound = log.phase("lower bound", || {
        let norm = albanese_norm(&q.matrix()).map_err(numerical("albanese norm"))?;
        let (_, masks) = shared_masks(&r.algebra, &[&norm], &r.comparison).map_err(numerical("CC ball"))?;
        Ok::<_, StudyError>(asvol_lower_bound(q.volume, &masks[0]))
    })?;
    let study =
        log.phase("volume study", || asvol_study(&r.metric, &r.rhos, &r.rule).map_err(numerical("volume study")))?;
    let verdict = compare_with_bound(&study, &bound);
    let pansu = if r.algebra.horizontal_dim() == 2 {
        let s = stable(r, log)?;
        match (&s.inner, &s.outer) {
            (Some(inner), Some(outer)) => {
                let (inner, outer) = (HorizontalNorm::Polygon(inner.clone()), HorizontalNorm::Polygon(outer.clone()));
                let (_, m) = shared_masks(&r.algebra, &[&inner, &outer], &r.comparison).map_err(numerical("stable ball"))?;
                Some(PansuValue::new(q.volume, &m[0], &m[1]))
            }
            _ => None,
        }
    } else {
        None
    };
    let mut t = Table::new("asvol", vec!["rho", "volume", "bracket_low", "bracket_high"]);
    for row in &study.rows {
        t.push(vec![row.rho.into(), row.volume.into(), row.bracket_low.into(), row.bracket_high.into()]);
    }
    let results = json!({
        "study": study, "asvol": study.asvol(), "error_bar": study.error_bar(), "cauchy": study.is_cauchy(),
        "lower_bound": bound, "verdict": verdict, "pansu": pansu,
        "pansu_mismatch": pansu.as_ref().map(|p| p.mismatch(study.asvol())),
    });
    if !verdict.holds {
        return Err(StudyError::Numerical(format!(
            "lower bound violated beyond error bars: asvol {} < bound {} - {}",
            verdict.asvol, verdict.bound, verdict.error_bar
        )));
    }
    Ok((results, vec![t]))
}

fn verify(r: &Resolved, log: &mut Log) -> Result<(Value, Vec<Table>, bool), StudyError> {
    let run = acceptance::run_suite(r.config.seed);
    let mut t = Table::new("criteria", vec!["id", "title", "passed", "summary"]);
    for (c, time) in run.report.criteria.iter().zip(&run.timings) {
        let budget = BUDGETS[c.id as usize - 1].map(|b| format!(" (budget {b} s)")).unwrap_or_default();
        log.line(format!("criterion {} {}: {:.3} s{budget}", c.id, if c.passed { "PASS" } else { "FAIL" }, time.as_secs_f64()));
        t.push(vec![
            (c.id as usize).into(),
            Cell::Text(c.title.into()),
            Cell::Text(c.passed.to_string()),
            Cell::Text(c.summary.clone()),
        ]);
    }
    let failed = !run.report.all_passed;
    Ok((serde_json::to_value(&run.report).map_err(ReportError::from)?, vec![t], failed))
}

/// Run the resolved study.
pub fn run(r: &Resolved) -> Result<Outcome, StudyError> {
    let mut log = Log::new();
    log.line(format!("nilspec {} study {}", env!("CARGO_PKG_VERSION"), r.study.name()));
    log.line(format!("seed {}", r.config.seed));
    log.line(format!(
        "tolerances: eigen residual {EIGEN_TOL:e}, 1/rho fit residual {FIT_TOL}, Albanese formula gap {FORMULA_TOL:e}, \
         inequality {}, equality variance {EQUALITY_VARIANCE:e}",
        r.config.tolerances.inequality
    ));
    if r.study == Study::Verify {
        log.line(format!(
            "acceptance tolerances: c1 {}, c2 {}, c3 {:e}, inequality {}, c5 {:e}/{:e}, c6 {}, c7 {}, c8 {}/{}/{}, c9 {:e}",
            acceptance::C1_TOL,
            acceptance::C2_TOL,
            acceptance::C3_TOL,
            acceptance::INEQUALITY_TOL,
            acceptance::C5_VARIANCE_MAX,
            acceptance::C5_LAMINATE_MIN,
            acceptance::C6_EQUALITY_TOL,
            acceptance::C7_AGREEMENT_TOL,
            acceptance::C8_DILATION_TOL,
            acceptance::C8_HORIZONTAL_TOL,
            acceptance::C8_VERTICAL_TOL,
            acceptance::C9_EVAL_TOL
        ));
    }
    let (results, tables, acceptance_failed) = match r.study {
        Study::Albanese => albanese(r, &mut log).map(|(v, t)| (v, t, false))?,
        Study::Spectrum => spectrum(r, &mut log).map(|(v, t)| (v, t, false))?,
        Study::Ccball => ccball(r, &mut log).map(|(v, t)| (v, t, false))?,
        Study::StableNorm => stable_norm(r, &mut log).map(|(v, t)| (v, t, false))?,
        Study::Asvol => asvol(r, &mut log).map(|(v, t)| (v, t, false))?,
        Study::Verify => verify(r, &mut log)?,
    };
    let report_json = envelope(r, results)?;
    log.line(format!("total {:.3} s", log.start.elapsed().as_secs_f64()));
    Ok(Outcome { report_json, tables, log: log.lines, acceptance_failed })
}
