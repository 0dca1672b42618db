//! Run orchestration for the `dphase` binary: builds the problem from a
//! [`RunConfig`], executes one of the four modes and writes CSV and JSON.
//!
//! Exit codes: 0 certified or converged, 1 configuration error, 2 failed
//! certificate (or a failed weight check), 3 solver non-convergence.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::continuation::{
    run_continuation, step_diagnostics, Aborted, CertVerdict, ContinuationConfig, ContinuationRun,
    LimitCertificate, SolverKnobs, StepDiagnostics,
};
use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField};
use crate::orlicz::{smallness_check, ExponentPair, Smallness};
use crate::solver::solve_fixed_p;
use crate::weights::{check_h0, H0Report, Verdict, WeightField};

pub use config::{parse_config, Mode, RawConfig, RhsPreset, RunConfig};

pub const CSV_HEADER: &str = "p,lambda_p,weighted_q,flux_l1,flux_l2,flux_l4,flux_l8,flux_sup,theta0_diff_prev,pairing_ratio,residual,iterations,ratio_ok";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Caps the worker count of `sweep`.
pub const THREADS_ENV: &str = "DPHASE_THREADS";

pub fn build_grid(cfg: &RunConfig) -> Result<Arc<GridDomain>> {
    GridDomain::shared(cfg.dim, cfg.resolution, cfg.shape)
}

/// Samples the load: constant, a Gaussian bump of width `side/4` at the
/// centre, or a 4-per-axis checkerboard of signs.
pub fn rhs_field(preset: RhsPreset, scale: f64, grid: &Arc<GridDomain>) -> ScalarField {
    let center = grid.center();
    let side = grid.side();
    let sigma2 = (0.25 * side).powi(2);
    ScalarField::from_fn(grid, |x| match preset {
        RhsPreset::Constant => scale,
        RhsPreset::GaussianBump => {
            let d2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
            scale * (-d2 / sigma2).exp()
        }
        RhsPreset::Checker => {
            let parity: i64 = x
                .iter()
                .zip(&center)
                .map(|(a, c)| ((a - c + 0.5 * side) / side * 4.0).floor().clamp(0.0, 3.0) as i64)
                .sum();
            if parity % 2 == 0 {
                scale
            } else {
                -scale
            }
        }
    })
}

pub fn continuation_config(cfg: &RunConfig) -> Result<ContinuationConfig> {
    let k = cfg.k_max.ok_or_else(|| Error::MissingKey { key: "exponents.k_max".into() })?;
    let mut c = ContinuationConfig::new(cfg.q, k);
    c.epsilon0 = cfg.epsilon0;
    c.solver = SolverKnobs { tol: cfg.tol, max_iter: cfg.max_iter, ..SolverKnobs::default() };
    c.strict_h0 = cfg.strict_h0;
    Ok(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub p: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub energy: f64,
    pub grad_sup: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub rhs_scale: f64,
    pub smallness: Smallness,
    pub certificate: LimitCertificate,
    pub aborted: Option<Aborted>,
    pub csv: Option<String>,
    pub exit_code: i32,
}

/// Everything a run reports. Wall time is deliberately absent so identical
/// configs give identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// Config echo in the flat input format.
    pub config: String,
    pub mode: Mode,
    pub h0: Option<H0Report>,
    pub smallness: Option<Smallness>,
    pub solve: Option<SolveSummary>,
    pub steps: Vec<StepDiagnostics>,
    pub monotone_gaps: Vec<f64>,
    pub certificate: Option<LimitCertificate>,
    pub aborted: Option<Aborted>,
    pub sweep: Vec<SweepEntry>,
    pub exit_code: i32,
}

impl RunSummary {
    fn new(cfg: &RunConfig) -> Self {
        RunSummary {
            config: cfg.to_text(),
            mode: cfg.mode,
            h0: None,
            smallness: None,
            solve: None,
            steps: Vec::new(),
            monotone_gaps: Vec::new(),
            certificate: None,
            aborted: None,
            sweep: Vec::new(),
            exit_code: EXIT_OK,
        }
    }
}

fn continuation_exit(run: &ContinuationRun) -> i32 {
    if run.aborted.is_some() {
        EXIT_NOT_CONVERGED
    } else if run.certificate.verdict == CertVerdict::Failed {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}

/// Executes the configured mode and writes the requested files.
/// Errors are configuration or IO problems and map to exit code 1.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let grid = build_grid(cfg)?;
    let weight = WeightField::from_preset(&cfg.weight, &grid)?;
    let mut summary = RunSummary::new(cfg);
    match cfg.mode {
        Mode::Solve => run_solve(cfg, &grid, &weight, &mut summary)?,
        Mode::Continue => {
            let ccfg = continuation_config(cfg)?;
            let f = rhs_field(cfg.rhs, cfg.rhs_scale, &grid);
            let run = run_continuation(&ccfg, &weight, &f, None)?;
            if let Some(path) = &cfg.csv {
                if !run.steps.is_empty() {
                    emit_csv(&run.steps, path)?;
                }
            }
            summary.exit_code = continuation_exit(&run);
            summary.h0 = Some(run.h0);
            summary.smallness = Some(run.smallness);
            summary.steps = run.steps;
            summary.monotone_gaps = run.monotone_gaps;
            summary.certificate = Some(run.certificate);
            summary.aborted = run.aborted;
        }
        Mode::CheckWeight => {
            let p_min = match (cfg.k_max, cfg.p) {
                (Some(_), _) => continuation_config(cfg)?.p_min(),
                (None, Some(p)) => p,
                (None, None) => return Err(Error::MissingKey { key: "exponents.p".into() }),
            };
            let report = check_h0(&weight, cfg.dim, cfg.q, p_min)?;
            summary.exit_code = if report.verdict == Verdict::Fail { EXIT_FAILED } else { EXIT_OK };
            summary.h0 = Some(report);
        }
        Mode::Sweep => run_sweep(cfg, &grid, &weight, &mut summary)?,
    }
    if let Some(path) = &cfg.json {
        write_json(&summary, path)?;
    }
    Ok(summary)
}

fn run_solve(cfg: &RunConfig, grid: &Arc<GridDomain>, weight: &WeightField, summary: &mut RunSummary) -> Result<()> {
    let p = cfg.p.ok_or_else(|| Error::MissingKey { key: "exponents.p".into() })?;
    let f = rhs_field(cfg.rhs, cfg.rhs_scale, grid);
    let ccfg = ContinuationConfig {
        p_schedule: vec![p],
        ..continuation_config(&RunConfig { k_max: Some(1), ..cfg.clone() })?
    };
    let eps = ccfg.epsilon(p);
    let params = ccfg.solver.params(ExponentPair::unordered(p, cfg.q)?, eps);
    let res = solve_fixed_p(&params, weight, &f, &ScalarField::zeros(grid))?;
    if p < cfg.q {
        summary.h0 = Some(check_h0(weight, cfg.dim, cfg.q, p)?);
    }
    summary.smallness = Some(smallness_check(&f));
    if res.converged {
        let zero = ScalarField::zeros(grid);
        summary.steps = vec![step_diagnostics(&res.u, &zero, p, &ccfg, weight, res.residual, res.iterations)?];
        if let Some(path) = &cfg.csv {
            emit_csv(&summary.steps, path)?;
        }
    }
    summary.exit_code = if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    summary.solve = Some(SolveSummary {
        p,
        epsilon: eps,
        iterations: res.iterations,
        energy: res.energy,
        grad_sup: res.grad_sup,
        residual: res.residual,
        converged: res.converged,
    });
    Ok(())
}

/// `dir/name.csv` becomes `dir/name.s{index}.csv`.
pub fn sweep_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.s{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}.s{index}"),
    };
    base.with_file_name(name)
}

fn sweep_threads() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n.min(available.max(1)),
        _ => available,
    }
}

fn run_sweep(cfg: &RunConfig, grid: &Arc<GridDomain>, weight: &WeightField, summary: &mut RunSummary) -> Result<()> {
    let ccfg = continuation_config(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let entries = pool.install(|| {
        cfg.sweep_rhs_scales
            .par_iter()
            .enumerate()
            .map(|(i, &scale)| {
                let f = rhs_field(cfg.rhs, scale, grid);
                let run = run_continuation(&ccfg, weight, &f, None)?;
                let csv = match &cfg.csv {
                    Some(base) if !run.steps.is_empty() => {
                        let path = sweep_path(base, i);
                        emit_csv(&run.steps, &path)?;
                        Some(path.display().to_string())
                    }
                    _ => None,
                };
                Ok((
                    run.h0.clone(),
                    SweepEntry {
                        rhs_scale: scale,
                        smallness: run.smallness,
                        exit_code: continuation_exit(&run),
                        certificate: run.certificate,
                        aborted: run.aborted,
                        csv,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    summary.h0 = entries.first().map(|e| e.0.clone());
    summary.sweep = entries.into_iter().map(|e| e.1).collect();
    summary.exit_code = summary.sweep.iter().map(|e| e.exit_code).fold(EXIT_OK, |worst, c| match (worst, c) {
        (EXIT_NOT_CONVERGED, _) | (_, EXIT_NOT_CONVERGED) => EXIT_NOT_CONVERGED,
        (EXIT_FAILED, _) | (_, EXIT_FAILED) => EXIT_FAILED,
        _ => EXIT_OK,
    });
    Ok(())
}

fn real(x: f64) -> String {
    format!("{x:?}")
}

/// CSV text for `steps`: fixed header, shortest round-trip reals, `ratio_ok` as 0/1.
pub fn csv_string(steps: &[StepDiagnostics]) -> Result<String> {
    if steps.is_empty() {
        return Err(Error::InvalidParameter("no steps to write".into()));
    }
    let mut out = String::with_capacity(64 * (steps.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in steps {
        let lr = |r: f64| {
            s.flux_lr
                .iter()
                .find(|(k, _)| *k == r)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::InvalidParameter(format!("step at p = {} lacks the L^{r} flux norm", s.p)))
        };
        let fields = [
            real(s.p),
            real(s.lambda_p),
            real(s.weighted_q),
            real(lr(1.0)?),
            real(lr(2.0)?),
            real(lr(4.0)?),
            real(lr(8.0)?),
            real(s.flux_sup),
            real(s.theta0_diff_prev),
            real(s.pairing_ratio),
            real(s.residual),
            s.iterations.to_string(),
            u8::from(s.ratio_ok).to_string(),
        ];
        let _ = writeln!(out, "{}", fields.join(","));
    }
    Ok(out)
}

pub fn emit_csv(steps: &[StepDiagnostics], path: &Path) -> Result<()> {
    let text = csv_string(steps)?;
    write_file(path, text.as_bytes())
}

pub fn write_json(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_step() -> StepDiagnostics {
        StepDiagnostics {
            p: 0.0,
            epsilon: 0.0,
            lambda_p: 0.0,
            weighted_q: 0.0,
            flux_lr: vec![(1.0, 0.0), (2.0, 0.0), (4.0, 0.0), (8.0, 0.0)],
            flux_sup: 0.0,
            theta0_diff_prev: 0.0,
            pairing_ratio: 1.0,
            residual: 0.0,
            iterations: 0,
            ratio_ok: false,
        }
    }

    #[test]
    fn csv_zero_row() {
        let text = csv_string(&[zero_step()]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0,0.0,1.0,0.0,0,0");
        assert!(lines.iter().all(|l| l.split(',').count() == 13));
        assert!(csv_string(&[]).is_err());
    }

    #[test]
    fn csv_reals_round_trip() {
        let mut s = zero_step();
        s.p = 1.0 + 1.0 / 1024.0;
        s.lambda_p = 1.0 / 3.0;
        s.residual = 1.875e-13;
        s.ratio_ok = true;
        let text = csv_string(&[s.clone()]).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0].parse::<f64>().unwrap(), s.p);
        assert_eq!(row[1].parse::<f64>().unwrap(), s.lambda_p);
        assert_eq!(row[10], "1.875e-13");
        assert_eq!(row[12], "1");
    }

    #[test]
    fn sweep_paths() {
        assert_eq!(sweep_path(Path::new("out/run.csv"), 3), PathBuf::from("out/run.s3.csv"));
        assert_eq!(sweep_path(Path::new("run"), 0), PathBuf::from("run.s0"));
    }

    #[test]
    fn rhs_presets() {
        let g = GridDomain::shared(2, 8, crate::grid::Shape::Square).unwrap();
        let c = rhs_field(RhsPreset::Constant, 0.5, &g);
        assert!(c.values().iter().all(|v| *v == 0.5));
        let b = rhs_field(RhsPreset::GaussianBump, 2.0, &g);
        let mid = g.node_index(&[4, 4]);
        assert_eq!(b.values()[mid], 2.0);
        assert!(b.values().iter().all(|v| *v > 0.0 && *v <= 2.0));
        let k = rhs_field(RhsPreset::Checker, 1.0, &g);
        assert!(k.values().iter().all(|v| v.abs() == 1.0));
        assert_eq!(k.values()[g.node_index(&[0, 0])], 1.0);
        assert_eq!(k.values()[g.node_index(&[2, 0])], -1.0);
        assert_eq!(k.values()[g.node_index(&[2, 2])], 1.0);
    }
}
