//! Right-hand side and fixed-step time integration of the N-particle system
//! with cell-averaged weight drift and forcing, plus spot checks of the
//! discrete bound/Lipschitz inequalities.

use crate::grid::{StepFunction1D, StepFunction2D, UnitGrid};
use crate::model::ModelSpec;
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// The system state `(phi, kappa)` at one instant, embedded as step
/// functions on a common grid.
#[derive(Debug, Clone)]
pub struct DiscreteState {
    pub t: f64,
    pub u: StepFunction1D,
    pub k: StepFunction2D,
}

impl DiscreteState {
    pub fn new(t: f64, u: StepFunction1D, k: StepFunction2D) -> Result<Self> {
        if u.grid.len() != k.grid.len() {
            return Err(Error::GridMismatch(format!(
                "u on {} cells, K on {} cells",
                u.grid.len(),
                k.grid.len()
            )));
        }
        Ok(DiscreteState { t, u, k })
    }
}

/// Per-stored-time record of the a-priori sup-norm envelopes.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub u_sup: f64,
    pub u_envelope: f64,
    pub k_sup: f64,
    pub k_envelope: f64,
    /// sup norms within envelope * (1 + 1e-6); a violation is a warning,
    /// not an abort.
    pub within_envelope: bool,
}

/// Abort information when the state leaves the finite range.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AbortInfo {
    pub t_last_finite: f64,
    pub detail: String,
}

/// A computed solution: states stored every `store_every` steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model_name: String,
    pub dt: f64,
    pub store_every: usize,
    pub states: Vec<DiscreteState>,
    pub monitors: Vec<MonitorRecord>,
    pub abort: Option<AbortInfo>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &DiscreteState {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Forcing averaged per cell: `f_k = N int_{I_k} f(t, x, u) dx`.
///
/// When `f` does not vary within a cell the integral collapses to one
/// evaluation at the cell center.
pub fn forcing_averages(
    m: &ModelSpec,
    t: f64,
    u: &StepFunction1D,
    rule: &GaussLegendre,
) -> Vec<f64> {
    let n = u.grid.len();
    let d = m.dim;
    let mut values = vec![0.0; n * d];
    let mut out = vec![0.0; d];
    let mut acc = vec![0.0; d];
    for k in 0..n {
        let slot = &mut values[k * d..(k + 1) * d];
        if m.f.varies_within_cell {
            let (a, b) = u.grid.cell_bounds(k);
            acc.fill(0.0);
            for (x, w) in rule.mapped(a, b) {
                (m.f.eval)(t, x, u, &mut out);
                for (s, v) in acc.iter_mut().zip(&out) {
                    *s += w * v;
                }
            }
            for (sl, s) in slot.iter_mut().zip(&acc) {
                *sl = s * n as f64;
            }
        } else {
            (m.f.eval)(t, u.grid.cell_center(k), u, &mut out);
            slot.copy_from_slice(&out);
        }
    }
    values
}

/// Weight drift averaged per cell pair:
/// `Lambda_kl = N^2 int_{I_k x I_l} Lambda(t, x, y, K, u) dx dy`.
pub fn weight_drift_averages(
    m: &ModelSpec,
    t: f64,
    u: &StepFunction1D,
    k2: &StepFunction2D,
    rule: &GaussLegendre,
) -> Vec<f64> {
    let n = k2.grid.len();
    let grid = k2.grid;
    let mut values = vec![0.0; n * n];
    if !m.lambda.varies_within_cell {
        if let Some(batch) = &m.lambda.batch {
            batch(t, u, k2, &mut values);
            return values;
        }
    }
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, row)| {
            if m.lambda.varies_within_cell {
                let (ax, bx) = grid.cell_bounds(k);
                for (l, slot) in row.iter_mut().enumerate() {
                    let (ay, by) = grid.cell_bounds(l);
                    let mut acc = 0.0;
                    for (x, wx) in rule.mapped(ax, bx) {
                        for (y, wy) in rule.mapped(ay, by) {
                            acc += wx * wy * (m.lambda.eval)(t, x, y, k2, u);
                        }
                    }
                    *slot = acc * (n * n) as f64;
                }
            } else {
                let x = grid.cell_center(k);
                for (l, slot) in row.iter_mut().enumerate() {
                    let y = grid.cell_center(l);
                    *slot = (m.lambda.eval)(t, x, y, k2, u);
                }
            }
        });
    values
}

/// Right-hand side of the coupled system:
///
/// `du_k = (1/N) sum_l K_kl g(t, u_k, u_l) + f_k` and
/// `dK_kl` the cell-averaged weight drift.
///
/// Rows are computed in parallel; each row reduction is sequential, so the
/// result is independent of the thread count.
pub fn rhs(
    m: &ModelSpec,
    t: f64,
    u: &StepFunction1D,
    k2: &StepFunction2D,
    rule: &GaussLegendre,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = u.grid.len();
    let d = m.dim;
    let inv_n = 1.0 / n as f64;
    let f_avg = forcing_averages(m, t, u, rule);

    let mut du = vec![0.0; n * d];
    match (&m.g.batch, d) {
        (Some(batch), 1) => {
            batch(t, u, k2, &mut du);
            for (s, f) in du.iter_mut().zip(&f_avg) {
                *s += f;
            }
        }
        _ => {
            du.par_chunks_mut(d).enumerate().for_each(|(k, slot)| {
                let uk = u.cell(k);
                let mut out = vec![0.0; d];
                let mut acc = vec![0.0; d];
                for l in 0..n {
                    let kv = k2.entry(k, l);
                    (m.g.eval)(t, uk, u.cell(l), &mut out);
                    for (a, v) in acc.iter_mut().zip(&out) {
                        *a += kv * v;
                    }
                }
                for ((s, a), f) in slot.iter_mut().zip(&acc).zip(&f_avg[k * d..(k + 1) * d]) {
                    *s = a * inv_n + f;
                }
            });
        }
    }

    let dk = weight_drift_averages(m, t, u, k2, rule);

    if let Some(i) = du.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("du at t={t}, node {}", i / d)));
    }
    if let Some(i) = dk.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "dK at t={t}, edge ({}, {})",
            i / n,
            i % n
        )));
    }
    Ok((du, dk))
}

/// Integration options for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub t_final: f64,
    pub store_every: usize,
    pub quadrature_order: usize,
}

fn monitor(m: &ModelSpec, s: &DiscreteState, u0_sup: f64, k0_sup: f64) -> MonitorRecord {
    let env = crate::picard::apriori_envelope(m, u0_sup, k0_sup, 0.0);
    let u_sup = s.u.sup_norm();
    let k_sup = s.k.sup_norm();
    let u_env = env.u_bound(s.t);
    let k_env = env.k_bound(s.t);
    MonitorRecord {
        t: s.t,
        u_sup,
        u_envelope: u_env,
        k_sup,
        k_envelope: k_env,
        within_envelope: u_sup <= u_env * (1.0 + 1e-6) + 1e-12
            && k_sup <= k_env * (1.0 + 1e-6) + 1e-12,
    }
}

/// Classical RK4 with fixed step on the coupled `(u, K)` system.
///
/// States are stored every `store_every` steps (the initial and final states
/// always included). Monitors record the a-priori sup-norm envelopes at each
/// stored time; violations set a flag but do not abort. A non-finite state
/// aborts with the last finite state retained.
pub fn integrate(m: &ModelSpec, s0: DiscreteState, opts: &IntegrateOptions) -> Trajectory {
    assert!(opts.dt > 0.0, "step size must be positive");
    assert!(opts.t_final >= 0.0, "horizon must be nonnegative");
    assert!(opts.store_every >= 1, "store_every must be >= 1");
    let rule = GaussLegendre::new(opts.quadrature_order);
    let n_steps = (opts.t_final / opts.dt).round() as usize;
    let u0_sup = s0.u.sup_norm();
    let k0_sup = s0.k.sup_norm();
    let grid = s0.u.grid;
    let dim = s0.u.dim;
    let t0 = s0.t;

    let mut states = Vec::with_capacity(n_steps / opts.store_every + 2);
    let mut monitors = Vec::new();
    monitors.push(monitor(m, &s0, u0_sup, k0_sup));
    let mut u = s0.u.values.clone();
    let mut k = s0.k.values.clone();
    states.push(s0);
    let mut abort = None;

    let wrap = |uv: &[f64], kv: &[f64]| -> (StepFunction1D, StepFunction2D) {
        (
            StepFunction1D::new(grid, dim, uv.to_vec()).expect("length preserved"),
            StepFunction2D::new(grid, kv.to_vec()).expect("length preserved"),
        )
    };
    let dt = opts.dt;

    'time: for step in 0..n_steps {
        let t = t0 + step as f64 * dt;
        // RK4 stages
        let mut stage_u = u.clone();
        let mut stage_k = k.clone();
        let mut acc_u = vec![0.0; u.len()];
        let mut acc_k = vec![0.0; k.len()];
        let coeffs = [(0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)];
        let mut prev_du: Vec<f64> = Vec::new();
        let mut prev_dk: Vec<f64> = Vec::new();
        for (i, (c, w)) in coeffs.iter().enumerate() {
            if i > 0 {
                for (s, (y, d)) in stage_u.iter_mut().zip(u.iter().zip(&prev_du)) {
                    *s = y + c * dt * d;
                }
                for (s, (y, d)) in stage_k.iter_mut().zip(k.iter().zip(&prev_dk)) {
                    *s = y + c * dt * d;
                }
            }
            let (su, sk) = wrap(&stage_u, &stage_k);
            match rhs(m, t + c * dt, &su, &sk, &rule) {
                Ok((du, dk)) => {
                    for (a, d) in acc_u.iter_mut().zip(&du) {
                        *a += w * d;
                    }
                    for (a, d) in acc_k.iter_mut().zip(&dk) {
                        *a += w * d;
                    }
                    prev_du = du;
                    prev_dk = dk;
                }
                Err(e) => {
                    abort = Some(AbortInfo {
                        t_last_finite: t,
                        detail: e.to_string(),
                    });
                    break 'time;
                }
            }
        }
        for (y, a) in u.iter_mut().zip(&acc_u) {
            *y += dt / 6.0 * a;
        }
        for (y, a) in k.iter_mut().zip(&acc_k) {
            *y += dt / 6.0 * a;
        }
        let t_next = t0 + (step + 1) as f64 * dt;
        if u.iter().chain(k.iter()).any(|v| !v.is_finite()) {
            abort = Some(AbortInfo {
                t_last_finite: t,
                detail: format!("non-finite state after step to t={t_next}"),
            });
            break;
        }
        if (step + 1) % opts.store_every == 0 || step + 1 == n_steps {
            let (su, sk) = wrap(&u, &k);
            let state = DiscreteState { t: t_next, u: su, k: sk };
            monitors.push(monitor(m, &state, u0_sup, k0_sup));
            states.push(state);
        }
    }

    Trajectory {
        model_name: m.name.clone(),
        dt,
        store_every: opts.store_every,
        states,
        monitors,
        abort,
    }
}

/// Deviation between the directly integrated edge weights and the
/// variation-of-constants (Duhamel) solution
/// `kappa_kl(t) = kappa_kl(0) e^{-gamma t} + int_0^t Gamma(phi_l - phi_k) e^{-gamma (t-s)} ds`,
/// evaluated by trapezoid rule on the stored state samples.
///
/// Only meaningful for trajectories of the linear-decay weight model; other
/// trajectories are rejected by name.
pub fn duhamel_check<G>(traj: &Trajectory, decay: f64, gamma_fn: G) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if !traj.model_name.starts_with("hnp") {
        return Err(Error::InvalidParameter(format!(
            "duhamel check requires an hnp trajectory, got model '{}'",
            traj.model_name
        )));
    }
    let n = traj.states[0].u.grid.len();
    let times = traj.times();
    if times.len() < 2 {
        return Err(Error::InvalidParameter("trajectory too short".into()));
    }
    let h = times[1] - times[0];
    let mut max_dev: f64 = 0.0;
    for k in 0..n {
        for l in 0..n {
            let kappa0 = traj.states[0].k.entry(k, l);
            // J_j approximates int_0^{t_j} Gamma(phi_l - phi_k) e^{-gamma (t_j - s)} ds
            let mut j_acc = 0.0;
            let decay_step = (-decay * h).exp();
            for (idx, s) in traj.states.iter().enumerate() {
                let g_val = gamma_fn(s.u.cell(l)[0] - s.u.cell(k)[0]);
                if idx > 0 {
                    let prev = &traj.states[idx - 1];
                    let g_prev = gamma_fn(prev.u.cell(l)[0] - prev.u.cell(k)[0]);
                    j_acc = j_acc * decay_step + 0.5 * h * (g_prev * decay_step + g_val);
                }
                let t = s.t - times[0];
                let duhamel = kappa0 * (-decay * t).exp() + j_acc;
                max_dev = max_dev.max((s.k.entry(k, l) - duhamel).abs());
            }
        }
    }
    Ok(max_dev)
}

/// One inequality probed by [`discrete_assumption_check`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiscreteRatio {
    pub inequality: String,
    pub max_ratio: f64,
}

/// Result of the random spot check of the discrete bound/Lipschitz
/// inequalities inherited from the continuum assumptions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiscreteAssumptionReport {
    pub ratios: Vec<DiscreteRatio>,
    pub pass: bool,
    pub n: usize,
    pub n_samples: usize,
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Verify, on random `(phi, psi, kappa, lambda)` draws, the summed
/// inequalities satisfied by the cell-averaged `f_k` and `Lambda_kl`:
///
/// ```text
/// sum_k |f_k(phi)|^2                 <= B_f^2 N (1 + |phi|)^2
/// sum_k |f_k(phi) - f_k(psi)|^2      <= L_f^2 |phi - psi|^2
/// sum_kl |L_kl(kappa,phi)|^2         <= B_L^2 N (1 + |kappa|)^2
/// sum_kl |L_kl(kappa,phi)-L_kl(lambda,psi)|^2
///                                    <= L_L^2 (|kappa-lambda| + N |phi-psi|)^2
/// ```
pub fn discrete_assumption_check(
    m: &ModelSpec,
    grid: UnitGrid,
    n_samples: usize,
    seed: u64,
    order: usize,
) -> Result<DiscreteAssumptionReport> {
    if n_samples < 1 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let rule = GaussLegendre::new(order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let d = m.dim;
    let range = 3.0;
    let tol = 1.0 + 1e-9;

    let mut r_fb: f64 = 0.0;
    let mut r_fl: f64 = 0.0;
    let mut r_lb: f64 = 0.0;
    let mut r_ll: f64 = 0.0;
    let rto = |num: f64, den: f64| {
        if den == 0.0 {
            if num <= 1e-20 { 0.0 } else { f64::INFINITY }
        } else {
            num / den
        }
    };

    for _ in 0..n_samples {
        let t = rng.gen_range(0.0..1.0);
        let draw1 = |rng: &mut ChaCha8Rng| -> StepFunction1D {
            StepFunction1D::new(
                grid,
                d,
                (0..n * d).map(|_| rng.gen_range(-range..range)).collect(),
            )
            .expect("sizes match")
        };
        let draw2 = |rng: &mut ChaCha8Rng| -> StepFunction2D {
            StepFunction2D::new(grid, (0..n * n).map(|_| rng.gen_range(-range..range)).collect())
                .expect("sizes match")
        };
        let phi = draw1(&mut rng);
        let psi = draw1(&mut rng);
        let kappa = draw2(&mut rng);
        let lambda = draw2(&mut rng);

        let f_phi = forcing_averages(m, t, &phi, &rule);
        let f_psi = forcing_averages(m, t, &psi, &rule);
        let phi_norm = frob(&phi.values);
        let nf = n as f64;

        let sum_f: f64 = f_phi.iter().map(|v| v * v).sum();
        r_fb = r_fb.max(rto(
            sum_f,
            m.f.bound.powi(2) * nf * (1.0 + phi_norm).powi(2),
        ));

        let diff_f: f64 = f_phi
            .iter()
            .zip(&f_psi)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let phi_psi: f64 = phi
            .values
            .iter()
            .zip(&psi.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        r_fl = r_fl.max(rto(diff_f, m.f.lipschitz.powi(2) * phi_psi));

        let l_kp = weight_drift_averages(m, t, &phi, &kappa, &rule);
        let l_lp = weight_drift_averages(m, t, &psi, &lambda, &rule);
        let kappa_norm = frob(&kappa.values);

        let sum_l: f64 = l_kp.iter().map(|v| v * v).sum();
        r_lb = r_lb.max(rto(
            sum_l,
            m.lambda.bound.powi(2) * nf * (1.0 + kappa_norm).powi(2),
        ));

        let diff_l: f64 = l_kp
            .iter()
            .zip(&l_lp)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let kl_norm = frob(
            &kappa
                .values
                .iter()
                .zip(&lambda.values)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        let denom = m.lambda.lipschitz.powi(2) * (kl_norm + nf * phi_psi.sqrt()).powi(2);
        r_ll = r_ll.max(rto(diff_l, denom));
    }

    let ratios = vec![
        DiscreteRatio { inequality: "forcing_bound".into(), max_ratio: r_fb },
        DiscreteRatio { inequality: "forcing_lipschitz".into(), max_ratio: r_fl },
        DiscreteRatio { inequality: "weight_drift_bound".into(), max_ratio: r_lb },
        DiscreteRatio { inequality: "weight_drift_lipschitz".into(), max_ratio: r_ll },
    ];
    let pass = ratios.iter().all(|r| r.max_ratio <= tol);
    Ok(DiscreteAssumptionReport { ratios, pass, n, n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hnp_model, kuramoto_adaptive, InteractionKernel, ModelSpec};

    fn rule() -> GaussLegendre {
        GaussLegendre::new(4)
    }

    fn zero_model() -> ModelSpec {
        ModelSpec {
            name: "zero".into(),
            dim: 1,
            g: InteractionKernel::new(|_t, _xi: &[f64], _eta: &[f64], out: &mut [f64]| out[0] = 0.0, 0.0, 0.0),
            f: crate::model::ForcingField::new(|_t, _x, _u, out: &mut [f64]| out[0] = 0.0, 0.0, 0.0, false),
            lambda: crate::model::WeightLaw::new(|_t, _x, _y, _k, _u| 0.0, 0.0, 0.0, false),
        }
    }

    #[test]
    fn rhs_single_node_kuramoto() {
        // N = 1, alpha = 0: g(u, u) = 0, so du = omega and dK = -eps K.
        let m = kuramoto_adaptive(0.7, 0.0, 0.0, 0.5).unwrap();
        let grid = UnitGrid::new(1);
        let u = StepFunction1D::constant(grid, 1, 0.3);
        let k = StepFunction2D::constant(grid, 2.0);
        let (du, dk) = rhs(&m, 0.0, &u, &k, &rule()).unwrap();
        assert!((du[0] - 0.7).abs() < 1e-15);
        assert!((dk[0] - (-0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn rhs_zero_model_is_zero() {
        let m = zero_model();
        let grid = UnitGrid::new(5);
        let u = StepFunction1D::new(grid, 1, vec![1.0, -2.0, 0.5, 3.0, 0.1]).unwrap();
        let k = StepFunction2D::constant(grid, 4.0);
        let (du, dk) = rhs(&m, 1.0, &u, &k, &rule()).unwrap();
        assert!(du.iter().all(|v| *v == 0.0));
        assert!(dk.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weight_drift_cell_averages_match_analytic() {
        // Lambda(t,x,y) = x + y varies within cells; the (k,l) average is
        // (k + l + 1) / N for cell centers (k + 0.5)/N, (l + 0.5)/N.
        let mut m = zero_model();
        m.lambda = crate::model::WeightLaw::new(|_t, x, y, _k, _u| x + y, 10.0, 0.0, true);
        let grid = UnitGrid::new(3);
        let u = StepFunction1D::constant(grid, 1, 0.0);
        let k = StepFunction2D::constant(grid, 0.0);
        let avg = weight_drift_averages(&m, 0.0, &u, &k, &rule());
        for ci in 0..3 {
            for cj in 0..3 {
                let expect = (ci as f64 + cj as f64 + 1.0) / 3.0;
                assert!(
                    (avg[ci * 3 + cj] - expect).abs() < 1e-12,
                    "cell ({ci},{cj}): {} vs {expect}",
                    avg[ci * 3 + cj]
                );
            }
        }
    }

    #[test]
    fn integrate_matches_exponential_decay() {
        // Constant u (omega = 0), Lambda = -K: K(t) = K0 e^{-t}.
        let m = kuramoto_adaptive(0.0, 0.0, 0.0, 1.0).unwrap();
        let grid = UnitGrid::new(2);
        let s0 = DiscreteState::new(
            0.0,
            StepFunction1D::constant(grid, 1, 0.0),
            StepFunction2D::constant(grid, 2.0),
        )
        .unwrap();
        let traj = integrate(
            &m,
            s0,
            &IntegrateOptions { dt: 1e-3, t_final: 1.0, store_every: 100, quadrature_order: 4 },
        );
        assert!(traj.abort.is_none());
        let last = traj.last();
        assert!((last.t - 1.0).abs() < 1e-12);
        let expect = 2.0 * (-1.0f64).exp();
        for v in &last.k.values {
            assert!((v - expect).abs() < 1e-8, "{v} vs {expect}");
        }
        // alpha = 0, identical phases: u stays constant
        assert!(traj.states.iter().all(|s| s.u.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn rk4_order_on_weight_decay() {
        // Error(dt) / Error(dt/2) should be near 2^4 = 16 for smooth dynamics.
        let m = kuramoto_adaptive(0.0, 0.0, 0.0, 1.0).unwrap();
        let grid = UnitGrid::new(1);
        let run = |dt: f64| {
            let s0 = DiscreteState::new(
                0.0,
                StepFunction1D::constant(grid, 1, 0.0),
                StepFunction2D::constant(grid, 1.0),
            )
            .unwrap();
            let traj = integrate(
                &m,
                s0,
                &IntegrateOptions { dt, t_final: 1.0, store_every: usize::MAX / 2, quadrature_order: 4 },
            );
            (traj.last().k.values[0] - (-1.0f64).exp()).abs()
        };
        let e1 = run(0.05);
        let e2 = run(0.025);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn node_permutation_equivariance() {
        // Relabeling nodes (and the weight matrix accordingly) permutes the
        // solution: dynamics carry no positional dependence for this model.
        let m = kuramoto_adaptive(0.3, 0.1, 0.2, 0.4).unwrap();
        let n = 4;
        let grid = UnitGrid::new(n);
        let phi = vec![0.1, -0.5, 0.8, 0.3];
        let kappa: Vec<f64> = (0..n * n).map(|i| 0.2 + 0.1 * i as f64).collect();
        // symmetrize so the permuted matrix stays consistent
        let mut sym = kappa.clone();
        for k in 0..n {
            for l in 0..n {
                sym[k * n + l] = 0.5 * (kappa[k * n + l] + kappa[l * n + k]);
            }
        }
        let perm = [2usize, 0, 3, 1];
        let phi_p: Vec<f64> = perm.iter().map(|&p| phi[p]).collect();
        let mut kappa_p = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                kappa_p[k * n + l] = sym[perm[k] * n + perm[l]];
            }
        }
        let opts = IntegrateOptions { dt: 1e-2, t_final: 0.5, store_every: usize::MAX / 2, quadrature_order: 4 };
        let t1 = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::new(grid, 1, phi).unwrap(),
                StepFunction2D::new(grid, sym).unwrap(),
            )
            .unwrap(),
            &opts,
        );
        let t2 = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::new(grid, 1, phi_p).unwrap(),
                StepFunction2D::new(grid, kappa_p).unwrap(),
            )
            .unwrap(),
            &opts,
        );
        let (a, b) = (t1.last(), t2.last());
        for k in 0..n {
            assert!((a.u.values[perm[k]] - b.u.values[k]).abs() < 1e-13);
            for l in 0..n {
                assert!((a.k.entry(perm[k], perm[l]) - b.k.entry(k, l)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn eps_zero_keeps_weights_bitwise_constant() {
        let m = kuramoto_adaptive(1.0, 0.5, 0.0, 0.0).unwrap();
        let grid = UnitGrid::new(3);
        let k0: Vec<f64> = (0..9).map(|i| 0.3 + 0.05 * i as f64).collect();
        let traj = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::new(grid, 1, vec![0.0, 1.0, 2.0]).unwrap(),
                StepFunction2D::new(grid, k0.clone()).unwrap(),
            )
            .unwrap(),
            &IntegrateOptions { dt: 1e-2, t_final: 0.3, store_every: 10, quadrature_order: 4 },
        );
        for s in &traj.states {
            assert_eq!(s.k.values, k0);
        }
    }

    #[test]
    fn blowup_aborts_with_last_finite_time() {
        // du = 10 (1 + u^2) blows up near t = pi / 20 ~ 0.157.
        let cfg: crate::config::ModelConfig =
            serde_json::from_str(r#"{"model": "quadratic_blowup", "rate": 10.0}"#).unwrap();
        let m = cfg.build().unwrap();
        let grid = UnitGrid::new(2);
        let traj = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::constant(grid, 1, 0.0),
                StepFunction2D::constant(grid, 0.0),
            )
            .unwrap(),
            &IntegrateOptions { dt: 1e-3, t_final: 1.0, store_every: 10, quadrature_order: 4 },
        );
        let abort = traj.abort.as_ref().expect("must abort");
        assert!(abort.t_last_finite > 0.1 && abort.t_last_finite < 0.2, "{}", abort.t_last_finite);
        assert!(traj.last().u.is_finite());
    }

    fn hnp(gamma_fn: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64, lip: f64) -> ModelSpec {
        hnp_model(
            gamma_fn,
            bound,
            lip,
            1.3,
            &[0.4, -0.2],
            InteractionKernel::new(
                |_t, xi: &[f64], eta: &[f64], out: &mut [f64]| out[0] = (eta[0] - xi[0]).sin(),
                1.0,
                1.0,
            ),
        )
        .unwrap()
    }

    fn hnp_traj(m: &ModelSpec) -> Trajectory {
        let grid = UnitGrid::new(2);
        integrate(
            m,
            DiscreteState::new(
                0.0,
                StepFunction1D::new(grid, 1, vec![0.2, -0.4]).unwrap(),
                StepFunction2D::new(grid, vec![1.0, 0.5, 0.5, 1.0]).unwrap(),
            )
            .unwrap(),
            &IntegrateOptions { dt: 1e-3, t_final: 1.0, store_every: 1, quadrature_order: 4 },
        )
    }

    #[test]
    fn duhamel_zero_gamma_is_pure_decay() {
        let m = hnp(|_s| 0.0, 0.0, 0.0);
        let traj = hnp_traj(&m);
        let dev = duhamel_check(&traj, 1.3, |_s| 0.0).unwrap();
        // RK4 at dt = 1e-3 against the exact exponential
        assert!(dev < 1e-10, "{dev}");
    }

    #[test]
    fn duhamel_constant_gamma() {
        let m = hnp(|_s| 0.7, 0.7, 0.0);
        let traj = hnp_traj(&m);
        let dev = duhamel_check(&traj, 1.3, |_s| 0.7).unwrap();
        // trapezoid-in-time reconstruction: O(dt^2)
        assert!(dev < 1e-5, "{dev}");
    }

    #[test]
    fn duhamel_sin_gamma() {
        let m = hnp(|s: f64| s.sin(), 1.0, 1.0);
        let traj = hnp_traj(&m);
        let dev = duhamel_check(&traj, 1.3, |s: f64| s.sin()).unwrap();
        assert!(dev < 1e-5, "{dev}");
    }

    #[test]
    fn duhamel_rejects_other_models() {
        let m = kuramoto_adaptive(0.0, 0.0, 0.0, 1.0).unwrap();
        let grid = UnitGrid::new(2);
        let traj = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::constant(grid, 1, 0.0),
                StepFunction2D::constant(grid, 1.0),
            )
            .unwrap(),
            &IntegrateOptions { dt: 0.1, t_final: 0.2, store_every: 1, quadrature_order: 4 },
        );
        assert!(duhamel_check(&traj, 1.0, |_s| 0.0).is_err());
    }

    #[test]
    fn discrete_check_passes_for_builtins() {
        let m = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5).unwrap();
        let report = discrete_assumption_check(&m, UnitGrid::new(6), 500, 3, 4).unwrap();
        assert!(report.pass, "{report:?}");
        let m = hnp(|s: f64| s.sin(), 1.0, 1.0);
        let report = discrete_assumption_check(&m, UnitGrid::new(6), 500, 3, 4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn discrete_check_falsifies_wrong_constant() {
        let mut m = kuramoto_adaptive(2.0, 0.0, 0.0, 0.5).unwrap();
        // claim B_f = 0.1 although f = 2 everywhere
        m.f = crate::model::ForcingField::new(|_t, _x, _u, out: &mut [f64]| out[0] = 2.0, 0.1, 0.0, false);
        let report = discrete_assumption_check(&m, UnitGrid::new(6), 200, 5, 4).unwrap();
        assert!(!report.pass);
        let fb = report.ratios.iter().find(|r| r.inequality == "forcing_bound").unwrap();
        assert!(fb.max_ratio > 1.0);
    }

    #[test]
    fn monitors_stay_within_envelope() {
        let m = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5).unwrap();
        let grid = UnitGrid::new(8);
        let traj = integrate(
            &m,
            DiscreteState::new(
                0.0,
                StepFunction1D::new(grid, 1, (0..8).map(|i| 0.1 * i as f64).collect()).unwrap(),
                StepFunction2D::constant(grid, 0.8),
            )
            .unwrap(),
            &IntegrateOptions { dt: 1e-2, t_final: 1.0, store_every: 10, quadrature_order: 4 },
        );
        assert!(traj.abort.is_none());
        assert!(traj.monitors.iter().all(|mo| mo.within_envelope));
    }
}
