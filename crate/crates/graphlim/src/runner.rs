//! Command implementations behind the `graphlim` CLI. Each takes a parsed
//! configuration and an output directory and writes the artifact set there;
//! the CLI maps the returned [`Outcome`] onto exit codes.

use crate::config::{ConvergeConfig, PicardRunConfig, SimulateConfig, ValidateConfig};
use crate::convergence::StudyConfig;
use crate::discrete::{self, DiscreteState, IntegrateOptions};
use crate::grid::{cell_average_1d, project_graphon, UnitGrid};
use crate::io::{self, Manifest};
use crate::picard::{picard_solve, PicardConfig};
use crate::{Error, Result};
use std::path::Path;

/// How a command run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The solver aborted (non-finite state, lost contraction); artifacts up
    /// to the abort were still written.
    SolverAbort,
}

/// One diagnostic line for stderr, serialized as a JSON object.
pub fn diag(event: &str, fields: serde_json::Value) {
    let mut obj = serde_json::json!({ "event": event });
    if let (Some(dst), Some(src)) = (obj.as_object_mut(), fields.as_object()) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{obj}");
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn run_simulate(
    cfg: &SimulateConfig,
    config_hash: &str,
    out: &Path,
    verbose: bool,
) -> Result<Outcome> {
    if cfg.n < 1 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    if !(cfg.dt > 0.0) || !(cfg.t_final > 0.0) {
        return Err(Error::Config("dt and t_final must be > 0".into()));
    }
    ensure_dir(out)?;
    let model = cfg.model.build().map_err(|e| Error::Config(e.to_string()))?;
    if model.dim != 1 {
        return Err(Error::Config("profile initial data requires d = 1".into()));
    }
    let grid = UnitGrid::new(cfg.n);
    let p = cfg.initial.u0.build();
    let u0 = cell_average_1d(move |x| p(x), grid, cfg.quadrature_order)?;
    let k0 = project_graphon(&cfg.initial.w.build(), grid, cfg.quadrature_order)?;
    if verbose {
        diag("start", serde_json::json!({
            "command": "simulate", "model": model.name, "n": cfg.n,
            "dt": cfg.dt, "t_final": cfg.t_final,
        }));
    }
    let opts = IntegrateOptions {
        dt: cfg.dt,
        t_final: cfg.t_final,
        store_every: cfg.store_every,
        quadrature_order: cfg.quadrature_order,
    };
    let traj = discrete::integrate(&model, DiscreteState::new(0.0, u0, k0)?, &opts);

    io::write_trajectory(&traj, out)?;
    io::write_monitors(&traj, out)?;
    let manifest = Manifest {
        command: "simulate".into(),
        model: model.name.clone(),
        n: cfg.n,
        dt: Some(cfg.dt),
        t_final: cfg.t_final,
        store_every: Some(cfg.store_every),
        config_hash: config_hash.to_string(),
        all_monitors_ok: Some(traj.monitors.iter().all(|m| m.within_envelope)),
        aborted_at: traj.abort.as_ref().map(|a| a.t_last_finite),
        abort_detail: traj.abort.as_ref().map(|a| a.detail.clone()),
    };
    io::write_manifest(&manifest, out)?;
    if let Some(a) = &traj.abort {
        diag("solver_abort", serde_json::json!({
            "t_last_finite": a.t_last_finite, "detail": a.detail,
        }));
        return Ok(Outcome::SolverAbort);
    }
    if verbose {
        diag("done", serde_json::json!({ "states_stored": traj.states.len() }));
    }
    Ok(Outcome::Success)
}

pub fn run_picard(
    cfg: &PicardRunConfig,
    config_hash: &str,
    out: &Path,
    verbose: bool,
) -> Result<Outcome> {
    if cfg.m < 1 {
        return Err(Error::Config("m must be >= 1".into()));
    }
    ensure_dir(out)?;
    let model = cfg.model.build().map_err(|e| Error::Config(e.to_string()))?;
    let grid = UnitGrid::new(cfg.m);
    let p = cfg.initial.u0.build();
    let u0 = cell_average_1d(move |x| p(x), grid, cfg.quadrature_order)?;
    let k0 = project_graphon(&cfg.initial.w.build(), grid, cfg.quadrature_order)?;
    let pcfg = PicardConfig {
        t0: 0.0,
        horizon: cfg.t_final,
        window_override: cfg.window_override,
        max_iters: cfg.max_iters,
        tol_l2: cfg.tol_l2,
        nodes_per_window: cfg.nodes_per_window,
        quadrature_order: cfg.quadrature_order,
    };
    pcfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    if verbose {
        diag("start", serde_json::json!({
            "command": "picard", "model": model.name, "m": cfg.m,
            "t_final": cfg.t_final, "tol_l2": cfg.tol_l2,
        }));
    }
    let sol = match picard_solve(&model, u0, k0, &pcfg) {
        Ok(sol) => sol,
        Err(Error::Solver(msg)) | Err(Error::NonFinite(msg)) => {
            diag("solver_abort", serde_json::json!({ "detail": msg }));
            let manifest = Manifest {
                command: "picard".into(),
                model: model.name.clone(),
                n: cfg.m,
                dt: None,
                t_final: cfg.t_final,
                store_every: None,
                config_hash: config_hash.to_string(),
                all_monitors_ok: None,
                aborted_at: Some(0.0),
                abort_detail: Some(msg),
            };
            io::write_manifest(&manifest, out)?;
            return Ok(Outcome::SolverAbort);
        }
        Err(e) => return Err(e),
    };
    for w in &sol.windows {
        diag("window", serde_json::to_value(w).unwrap_or_default());
    }
    io::write_picard(&sol, out)?;
    let manifest = Manifest {
        command: "picard".into(),
        model: model.name.clone(),
        n: cfg.m,
        dt: None,
        t_final: cfg.t_final,
        store_every: None,
        config_hash: config_hash.to_string(),
        all_monitors_ok: Some(sol.windows.iter().all(|w| w.iterate_bound_ok)),
        aborted_at: None,
        abort_detail: None,
    };
    io::write_manifest(&manifest, out)?;
    if !sol.converged {
        diag("solver_abort", serde_json::json!({
            "detail": "picard iteration exhausted max_iters before reaching tol_l2",
        }));
        return Ok(Outcome::SolverAbort);
    }
    if verbose {
        diag("done", serde_json::json!({ "windows": sol.windows.len() }));
    }
    Ok(Outcome::Success)
}

pub fn run_converge(
    cfg: &ConvergeConfig,
    config_hash: &str,
    out: &Path,
    verbose: bool,
) -> Result<Outcome> {
    ensure_dir(out)?;
    let model = cfg.model.build().map_err(|e| Error::Config(e.to_string()))?;
    let study = StudyConfig {
        model,
        graphon: cfg.initial.w.build(),
        u0: cfg.initial.u0.build(),
        n_list: cfg.n_list.clone(),
        m_ref: cfg.m_ref,
        t_final: cfg.t_final,
        dt: cfg.dt,
        store_every: cfg.store_every,
        quadrature_order: cfg.quadrature_order,
    };
    study
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    if verbose {
        diag("start", serde_json::json!({
            "command": "converge", "model": study.model.name,
            "n_list": cfg.n_list, "m_ref": cfg.m_ref,
        }));
    }
    let report = match crate::convergence::run_study(&study) {
        Ok(r) => r,
        Err(Error::Solver(msg)) => {
            diag("solver_abort", serde_json::json!({ "detail": msg }));
            return Ok(Outcome::SolverAbort);
        }
        Err(e) => return Err(e),
    };
    for row in &report.rows {
        diag("study_row", serde_json::to_value(row).unwrap_or_default());
    }
    io::write_convergence(&report, config_hash, out)?;
    let any_failed = report.rows.iter().any(|r| !r.converged);
    let manifest = Manifest {
        command: "converge".into(),
        model: study.model.name.clone(),
        n: cfg.m_ref,
        dt: Some(cfg.dt),
        t_final: cfg.t_final,
        store_every: Some(cfg.store_every),
        config_hash: config_hash.to_string(),
        all_monitors_ok: Some(report.rows.iter().all(|r| r.envelope_ok)),
        aborted_at: None,
        abort_detail: None,
    };
    io::write_manifest(&manifest, out)?;
    if any_failed {
        return Ok(Outcome::SolverAbort);
    }
    if verbose {
        if let Some(fit) = &report.fit {
            diag("rate_fit", serde_json::to_value(fit).unwrap_or_default());
        }
    }
    Ok(Outcome::Success)
}

pub fn run_validate(
    cfg: &ValidateConfig,
    config_hash: &str,
    out: &Path,
    _verbose: bool,
) -> Result<Outcome> {
    if cfg.n_samples < 1 || cfg.discrete_samples < 1 {
        return Err(Error::Config("sample counts must be >= 1".into()));
    }
    if cfg.grid_n < 1 {
        return Err(Error::Config("grid_n must be >= 1".into()));
    }
    ensure_dir(out)?;
    let model = cfg.model.build().map_err(|e| Error::Config(e.to_string()))?;
    let report = crate::model::check_assumptions(&model, cfg.n_samples, cfg.seed)?;
    let discrete_report = discrete::discrete_assumption_check(
        &model,
        UnitGrid::new(cfg.grid_n),
        cfg.discrete_samples,
        cfg.seed,
        cfg.quadrature_order,
    )?;

    #[derive(serde::Serialize)]
    struct ValidateOut<'a> {
        model: &'a str,
        continuum: &'a crate::model::AssumptionReport,
        discrete: &'a crate::discrete::DiscreteAssumptionReport,
        config_hash: &'a str,
    }
    let doc = ValidateOut {
        model: &model.name,
        continuum: &report,
        discrete: &discrete_report,
        config_hash,
    };
    let f = std::fs::File::create(out.join("validation.json"))?;
    serde_json::to_writer_pretty(f, &doc).map_err(|e| Error::Io(e.into()))?;

    diag("validate", serde_json::json!({
        "model": model.name,
        "continuum_pass": report.pass,
        "discrete_pass": discrete_report.pass,
    }));
    if report.pass && discrete_report.pass {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::SolverAbort)
    }
}
