//! N-sweep convergence studies: sup-in-time L^2 errors against a fine
//! method-of-lines reference, discretization residuals, the Gronwall error
//! envelope and empirical rate fitting.

use crate::discrete::{self, DiscreteState, IntegrateOptions, Trajectory};
use crate::grid::{
    cell_average_1d, l2_distance_1d, l2_distance_1d_fn, l2_distance_2d, l2_distance_2d_fn,
    project_graphon, Graphon, UnitGrid,
};
use crate::model::ModelSpec;
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};
use std::sync::Arc;

/// Definition of one convergence experiment.
#[derive(Clone)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub graphon: Graphon,
    /// Continuum initial profile `u_0` (scalar state).
    pub u0: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub n_list: Vec<usize>,
    pub m_ref: usize,
    pub t_final: f64,
    pub dt: f64,
    pub store_every: usize,
    pub quadrature_order: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.dim != 1 {
            return Err(Error::InvalidParameter(
                "convergence studies support scalar state (d = 1)".into(),
            ));
        }
        if self.n_list.len() < 2 {
            return Err(Error::InvalidParameter("need at least two N values".into()));
        }
        let n_max = *self.n_list.iter().max().expect("nonempty");
        if self.m_ref < 4 * n_max {
            return Err(Error::InvalidParameter(format!(
                "reference resolution {} must be at least 4 * N_max = {}",
                self.m_ref,
                4 * n_max
            )));
        }
        for &n in &self.n_list {
            if self.m_ref % n != 0 {
                return Err(Error::InvalidParameter(format!(
                    "N = {n} does not divide M_ref = {}",
                    self.m_ref
                )));
            }
        }
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::InvalidParameter("dt and t_final must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-N study outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyRow {
    pub n: usize,
    /// `sup_t ( ||u^N - u||_L2^2 + ||K^N - K||_L2^2 )`.
    pub e_sup: f64,
    pub err_u0: f64,
    pub err_k0: f64,
    /// `int_0^T ( ||r_N||^2 + ||R_N||^2 ) ds`.
    pub residual_integral: f64,
    /// Gronwall envelope value dominating `e_sup`.
    pub envelope: f64,
    pub converged: bool,
    pub envelope_ok: bool,
    /// All sup-norm monitors stayed within the a-priori envelopes.
    pub monitors_ok: bool,
}

/// Least-squares fit of `log sqrt(e)` against `log N`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Full study report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<StudyRow>,
    pub fit: Option<RateFit>,
    /// Errors strictly decrease along the N list.
    pub monotone: bool,
    /// Reference-trajectory monitors stayed within the a-priori envelopes.
    pub reference_monitors_ok: bool,
}

/// L^2 norms of the discretization residuals `r_N` (forcing) and `R_N`
/// (weight drift) at each stored time of the reference trajectory:
/// the deviation between the N-cell average and the pointwise value of the
/// ingredient evaluated on the reference fields.
pub fn residuals(m: &ModelSpec, reference: &Trajectory, n: usize, order: usize) -> Result<Vec<(f64, f64)>> {
    let m_ref = reference.states[0].u.grid.len();
    if m_ref % n != 0 {
        return Err(Error::GridMismatch(format!("{n} does not divide {m_ref}")));
    }
    let block = m_ref / n;
    let rule = GaussLegendre::new(order);
    let mut out = Vec::with_capacity(reference.states.len());

    for state in &reference.states {
        let t = state.t;
        let u = &state.u;
        let k = &state.k;
        let fine_grid = u.grid;

        // r_N: forcing cell-average deviation
        let r_sq = if !m.f.varies_within_cell {
            0.0
        } else {
            // Sample f on quadrature points of each fine cell; the coarse
            // average uses the same samples, so the deviation integral is
            // consistent to quadrature accuracy.
            let q = rule.nodes.len();
            let mut samples = vec![0.0; m_ref * q];
            let mut weights = vec![0.0; m_ref * q];
            let mut buf = vec![0.0; m.dim];
            for c in 0..m_ref {
                let (a, b) = fine_grid.cell_bounds(c);
                for (i, (x, w)) in rule.mapped(a, b).enumerate() {
                    (m.f.eval)(t, x, u, &mut buf);
                    samples[c * q + i] = buf[0];
                    weights[c * q + i] = w;
                }
            }
            let mut acc = 0.0;
            for coarse in 0..n {
                // coarse average = N * integral over the coarse cell
                let mut avg = 0.0;
                for c in coarse * block..(coarse + 1) * block {
                    for i in 0..q {
                        avg += weights[c * q + i] * samples[c * q + i];
                    }
                }
                avg *= n as f64;
                for c in coarse * block..(coarse + 1) * block {
                    for i in 0..q {
                        let d = avg - samples[c * q + i];
                        acc += weights[c * q + i] * d * d;
                    }
                }
            }
            acc
        };

        // R_N: weight-drift cell-average deviation
        let big_r_sq = {
            // Lambda evaluated on the reference step fields; constant per
            // fine cell unless the law varies within cells.
            let fine = discrete::weight_drift_averages(m, t, u, k, &rule);
            let mut acc = 0.0;
            for ci in 0..n {
                for cj in 0..n {
                    let mut avg = 0.0;
                    for i in ci * block..(ci + 1) * block {
                        for j in cj * block..(cj + 1) * block {
                            avg += fine[i * m_ref + j];
                        }
                    }
                    avg /= (block * block) as f64;
                    for i in ci * block..(ci + 1) * block {
                        for j in cj * block..(cj + 1) * block {
                            let d = avg - fine[i * m_ref + j];
                            acc += d * d;
                        }
                    }
                }
            }
            acc / (m_ref * m_ref) as f64
        };

        out.push((r_sq.sqrt(), big_r_sq.sqrt()));
    }
    Ok(out)
}

/// The uniform Gronwall error envelope:
///
/// ```text
/// ( init_err_sq + int_0^T (||r_N||^2 + ||R_N||^2) ds )
///   * exp( 4 L_g int_0^T ||K(s)||_inf ds + (2 L_f + 3 L_L + B_g + 1) T )
/// ```
pub fn gronwall_envelope(
    m: &ModelSpec,
    init_err_sq: f64,
    residual_integral: f64,
    t_final: f64,
    k_inf_integral: f64,
) -> f64 {
    let exponent = 4.0 * m.g.lipschitz * k_inf_integral
        + (2.0 * m.f.lipschitz + 3.0 * m.lambda.lipschitz + m.g.bound + 1.0) * t_final;
    (init_err_sq + residual_integral) * exponent.exp()
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..times.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
    }
    acc
}

/// Least squares of `log sqrt(e)` on `log N`; nonpositive errors are
/// dropped, and fewer than 3 surviving points yield no fit.
pub fn fit_rate(errors: &[(usize, f64)]) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(n, e)| ((*n as f64).ln(), e.sqrt().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let len = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let denom = len * sxx - sx * sx;
    if denom == 0.0 {
        return None;
    }
    let slope = (len * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / len;
    let mean_y = sy / len;
    let ss_tot: f64 = pts.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(RateFit {
        slope,
        intercept,
        r_squared,
        points_used: pts.len(),
    })
}

/// Run a full convergence study.
///
/// The reference solution is a method-of-lines run at `M_ref` from
/// cell-averaged initial data; each N runs the particle system from
/// cell-averaged data on its own grid with the identical time grid, and
/// errors are measured over the common refinement at the stored times.
/// A solver abort at one N marks that row failed without killing the study.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let m = &cfg.model;
    let q = cfg.quadrature_order;
    let opts = IntegrateOptions {
        dt: cfg.dt,
        t_final: cfg.t_final,
        store_every: cfg.store_every,
        quadrature_order: q,
    };

    let ref_grid = UnitGrid::new(cfg.m_ref);
    let u0_ref = cell_average_1d(|x| (cfg.u0)(x), ref_grid, q)?;
    let k0_ref = project_graphon(&cfg.graphon, ref_grid, q)?;
    let reference = discrete::integrate(m, DiscreteState::new(0.0, u0_ref, k0_ref)?, &opts);
    if let Some(a) = &reference.abort {
        return Err(Error::Solver(format!(
            "reference solve aborted at t={}: {}",
            a.t_last_finite, a.detail
        )));
    }
    let ref_times = reference.times();
    let k_inf: Vec<f64> = reference.states.iter().map(|s| s.k.sup_norm()).collect();
    let k_inf_integral = trapezoid(&ref_times, &k_inf);

    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let grid = UnitGrid::new(n);
        let u0_n = cell_average_1d(|x| (cfg.u0)(x), grid, q)?;
        let k0_n = project_graphon(&cfg.graphon, grid, q)?;

        let err_u0 = l2_distance_1d_fn(&u0_n, |x| (cfg.u0)(x), q)?;
        let err_k0 = match &cfg.graphon {
            Graphon::Analytic { eval, .. } => l2_distance_2d_fn(&k0_n, |x, y| eval(x, y), q)?,
            Graphon::Sampled(s) => l2_distance_2d(&k0_n, s)?,
        };

        let traj = discrete::integrate(m, DiscreteState::new(0.0, u0_n, k0_n)?, &opts);
        let converged = traj.abort.is_none();

        let mut e_sup: f64 = 0.0;
        if converged {
            for (s_n, s_ref) in traj.states.iter().zip(&reference.states) {
                let du = l2_distance_1d(&s_n.u, &s_ref.u)?;
                let dk = l2_distance_2d(&s_n.k, &s_ref.k)?;
                e_sup = e_sup.max(du * du + dk * dk);
            }
        } else {
            e_sup = f64::NAN;
        }

        let res = residuals(m, &reference, n, q)?;
        let res_sq: Vec<f64> = res.iter().map(|(r, big_r)| r * r + big_r * big_r).collect();
        let residual_integral = trapezoid(&ref_times, &res_sq);

        let envelope = gronwall_envelope(
            m,
            err_u0 * err_u0 + err_k0 * err_k0,
            residual_integral,
            cfg.t_final,
            k_inf_integral,
        );
        rows.push(StudyRow {
            n,
            e_sup,
            err_u0,
            err_k0,
            residual_integral,
            envelope,
            converged,
            envelope_ok: converged && e_sup <= envelope * 1.05,
            monitors_ok: traj.monitors.iter().all(|mo| mo.within_envelope),
        });
    }

    let fit_input: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.converged && r.e_sup.is_finite())
        .map(|r| (r.n, r.e_sup))
        .collect();
    let fit = fit_rate(&fit_input);
    let monotone = rows.windows(2).all(|w| {
        !w[0].converged || !w[1].converged || w[1].e_sup < w[0].e_sup
    });

    Ok(ConvergenceReport {
        rows,
        fit,
        monotone,
        reference_monitors_ok: reference.monitors.iter().all(|mo| mo.within_envelope),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kuramoto_adaptive, ForcingField, WeightLaw};

    fn study(model: ModelSpec, graphon: Graphon, u0: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> StudyConfig {
        StudyConfig {
            model,
            graphon,
            u0,
            n_list: vec![4, 8, 16],
            m_ref: 64,
            t_final: 0.5,
            dt: 1e-2,
            store_every: 10,
            quadrature_order: 4,
        }
    }

    #[test]
    fn residual_zero_for_cell_constant_ingredients() {
        // kuramoto forcing is constant and Lambda depends on (x, y) only
        // through the step fields, so both residuals vanish identically.
        let m = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5).unwrap();
        let grid = UnitGrid::new(16);
        let traj = discrete::integrate(
            &m,
            DiscreteState::new(
                0.0,
                crate::grid::StepFunction1D::constant(grid, 1, 0.2),
                crate::grid::StepFunction2D::constant(grid, 1.0),
            )
            .unwrap(),
            &IntegrateOptions { dt: 0.1, t_final: 0.2, store_every: 1, quadrature_order: 4 },
        );
        for (r, big_r) in residuals(&m, &traj, 4, 4).unwrap() {
            assert_eq!(r, 0.0);
            assert!(big_r.abs() < 1e-13, "{big_r}");
        }
    }

    #[test]
    fn residual_linear_forcing_oracle() {
        // f(t, x, u) = x: the N-cell average deviates from x by a sawtooth
        // with ||r_N||_L2 = 1 / (2 sqrt(3) N).
        let mut m = kuramoto_adaptive(0.0, 0.0, 0.0, 0.0).unwrap();
        m.f = ForcingField::new(|_t, x, _u, out: &mut [f64]| out[0] = x, 1.0, 0.0, true);
        let grid = UnitGrid::new(32);
        let traj = discrete::integrate(
            &m,
            DiscreteState::new(
                0.0,
                crate::grid::StepFunction1D::constant(grid, 1, 0.0),
                crate::grid::StepFunction2D::constant(grid, 0.0),
            )
            .unwrap(),
            &IntegrateOptions { dt: 0.1, t_final: 0.1, store_every: 1, quadrature_order: 8 },
        );
        for n in [4usize, 8, 16] {
            let res = residuals(&m, &traj, n, 8).unwrap();
            let expect = 1.0 / (2.0 * 3f64.sqrt() * n as f64);
            for (r, _) in res {
                assert!((r - expect).abs() < 1e-12, "N={n}: {r} vs {expect}");
            }
        }
    }

    #[test]
    fn residual_weight_drift_oracle() {
        // Lambda(t,x,y) = x + y on a fine grid: restricted to N cells the
        // deviation is two independent 1D sawtooths in x and y, each with
        // variance h^2 / 12 at coarse width h = 1/N, computed over the fine
        // sampling. The fine grid quantizes each sawtooth, giving variance
        // (h^2/12)(1 - 1/b^2) with b = M/N fine cells per coarse cell.
        let mut m = kuramoto_adaptive(0.0, 0.0, 0.0, 0.0).unwrap();
        m.lambda = WeightLaw::new(|_t, x, y, _k, _u| x + y, 10.0, 0.0, true);
        let m_ref = 64;
        let grid = UnitGrid::new(m_ref);
        let traj = discrete::integrate(
            &m,
            DiscreteState::new(
                0.0,
                crate::grid::StepFunction1D::constant(grid, 1, 0.0),
                crate::grid::StepFunction2D::constant(grid, 0.0),
            )
            .unwrap(),
            &IntegrateOptions { dt: 0.1, t_final: 0.1, store_every: 1, quadrature_order: 8 },
        );
        for n in [4usize, 8, 16] {
            let b = (m_ref / n) as f64;
            let var = 2.0 / (12.0 * (n as f64).powi(2)) * (1.0 - 1.0 / (b * b));
            let expect = var.sqrt();
            for (_, big_r) in residuals(&m, &traj, n, 8).unwrap() {
                assert!((big_r - expect).abs() < 1e-12, "N={n}: {big_r} vs {expect}");
            }
        }
    }

    #[test]
    fn gronwall_envelope_values() {
        let m = kuramoto_adaptive(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(gronwall_envelope(&m, 0.0, 0.0, 1.0, 0.0), 0.0);
        // L_g = 1, B_g = 1, L_f = 0, L_L = 0: exponent = 4 * k_int + 2 T.
        // With T = 1, k_int = 0: envelope = 1e-4 * e^2.
        let env = gronwall_envelope(&m, 1e-4, 0.0, 1.0, 0.0);
        let expect = 1e-4 * (2.0f64).exp();
        assert!((env - expect).abs() < 1e-15);
        assert!((env - 7.3890560989306495e-4).abs() < 1e-15, "{env}");
        // monotone in every argument
        assert!(gronwall_envelope(&m, 2e-4, 0.0, 1.0, 0.0) > env);
        assert!(gronwall_envelope(&m, 1e-4, 1e-4, 1.0, 0.0) > env);
        assert!(gronwall_envelope(&m, 1e-4, 0.0, 2.0, 0.0) > env);
        assert!(gronwall_envelope(&m, 1e-4, 0.0, 1.0, 1.0) > env);
    }

    #[test]
    fn graphon_projection_distance_oracle() {
        // W(x,y) = xy against the constant 1/4: L2 distance
        // sqrt(E[(xy)^2] - 2/4 E[xy] + 1/16) = sqrt(1/9 - 1/8 + 1/16)
        // = sqrt(7/144).
        let w = Graphon::analytic(|x, y| x * y, 1.0);
        let flat = crate::grid::StepFunction2D::constant(UnitGrid::new(1), 0.25);
        let d = crate::grid::l2_distance_2d_fn(&flat, |x, y| w.eval(x, y), 8).unwrap();
        let expect = (7.0f64 / 144.0).sqrt();
        assert!((d - expect).abs() < 1e-12, "{d} vs {expect}");
        assert!((d - 0.22047927592204922).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_exact_slope() {
        let errors: Vec<(usize, f64)> = [4usize, 8, 16, 32]
            .iter()
            .map(|&n| (n, (3.0 / n as f64).powi(2))) // sqrt(e) = 3 / N
            .collect();
        let fit = fit_rate(&errors).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12, "{}", fit.slope);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_constant_errors_give_zero_slope() {
        let errors: Vec<(usize, f64)> = [4usize, 8, 16].iter().map(|&n| (n, 1e-4)).collect();
        let fit = fit_rate(&errors).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_needs_three_points() {
        assert!(fit_rate(&[(4, 1.0), (8, 0.5)]).is_none());
        assert!(fit_rate(&[(4, 0.0), (8, 0.0), (16, 0.0)]).is_none());
    }

    #[test]
    fn fit_rate_noisy_near_minus_one() {
        // multiplicative perturbations up to 5 percent
        let noise = [1.03, 0.97, 1.05, 0.96, 1.02];
        let errors: Vec<(usize, f64)> = [4usize, 8, 16, 32, 64]
            .iter()
            .zip(noise)
            .map(|(&n, eps)| (n, (eps / n as f64).powi(2)))
            .collect();
        let fit = fit_rate(&errors).unwrap();
        assert!((-1.05..=-0.95).contains(&fit.slope), "{}", fit.slope);
    }

    #[test]
    fn homogeneous_study_has_tiny_errors() {
        // Constant u0 and constant graphon: every N sees the identical
        // finite-dimensional dynamics, so e(N) is pure roundoff.
        let m = kuramoto_adaptive(0.5, 0.0, 0.1, 0.5).unwrap();
        let cfg = study(
            m,
            Graphon::analytic(|_x, _y| 1.0, 1.0),
            Arc::new(|_x| 0.3),
        );
        let report = run_study(&cfg).unwrap();
        for row in &report.rows {
            assert!(row.converged);
            assert!(row.e_sup < 1e-10, "N={}: {}", row.n, row.e_sup);
            assert!(row.err_u0 < 1e-12);
            assert!(row.err_k0 < 1e-12);
        }
    }

    #[test]
    fn study_errors_decrease_and_envelope_holds() {
        let m = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5).unwrap();
        let cfg = study(
            m,
            Graphon::analytic(|x, y| (-(x - y) * (x - y)).exp(), 1.0),
            Arc::new(|x: f64| (2.0 * std::f64::consts::PI * x).sin()),
        );
        let report = run_study(&cfg).unwrap();
        assert!(report.monotone, "{:?}", report.rows);
        for row in &report.rows {
            assert!(row.envelope_ok, "{row:?}");
        }
        let fit = report.fit.expect("three usable points");
        assert!(fit.slope < -0.5, "slope {}", fit.slope);
    }

    #[test]
    fn study_validation_rejects_bad_setups() {
        let m = kuramoto_adaptive(0.0, 0.0, 0.0, 0.0).unwrap();
        let base = study(m, Graphon::analytic(|_x, _y| 0.0, 0.0), Arc::new(|_x| 0.0));
        let mut c = base.clone();
        c.n_list = vec![4];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.m_ref = 20; // not divisible by 8 and below 4 * 16
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.n_list = vec![4, 7];
        c.m_ref = 64; // 7 does not divide 64
        assert!(c.validate().is_err());
        let mut c = base;
        c.dt = 0.0;
        assert!(c.validate().is_err());
    }
}
