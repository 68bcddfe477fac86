//! The dynamical ingredients `(g, f, Lambda)` of an adaptively coupled
//! network model, their bound and Lipschitz constants, built-in models and
//! a sampling-based assumption checker.
//!
//! The constants are analytic metadata attached by the constructors; the
//! checker can only falsify them on random samples, never certify them.

use crate::grid::{StepFunction1D, StepFunction2D, UnitGrid};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// `g(t, xi, eta)`: pairwise interaction, written into `out` (d components).
pub type KernelFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// `f(t, x, u)`: forcing, written into `out` (d components).
pub type ForcingFn = Arc<dyn Fn(f64, f64, &StepFunction1D, &mut [f64]) + Send + Sync>;

/// `Lambda(t, x, y, K, u)`: weight drift.
pub type WeightFn = Arc<dyn Fn(f64, f64, f64, &StepFunction2D, &StepFunction1D) -> f64 + Send + Sync>;

/// Whole-vector interaction sweep: writes `(1/N) sum_l K_kl g(t, u_k, u_l)`
/// into `out[k]` for every node at once (scalar state, shared grid).
pub type BatchKernelFn = Arc<dyn Fn(f64, &StepFunction1D, &StepFunction2D, &mut [f64]) + Send + Sync>;

/// Whole-matrix weight-drift sweep: writes `Lambda` at the cell centers of
/// `K`'s grid into `out` (row-major).
pub type BatchWeightFn = Arc<dyn Fn(f64, &StepFunction1D, &StepFunction2D, &mut [f64]) + Send + Sync>;

/// Pairwise interaction `g` with its uniform bound `B_g` and Lipschitz
/// constant `L_g` (sum-of-arguments form).
#[derive(Clone)]
pub struct InteractionKernel {
    pub eval: KernelFn,
    pub bound: f64,
    pub lipschitz: f64,
    /// Optional fused sweep, mathematically equal to the pointwise `eval`
    /// reduction up to floating-point reassociation.
    pub batch: Option<BatchKernelFn>,
}

impl InteractionKernel {
    pub fn new<F>(eval: F, bound: f64, lipschitz: f64) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        InteractionKernel {
            eval: Arc::new(eval),
            bound,
            lipschitz,
            batch: None,
        }
    }

    pub fn with_batch<F>(mut self, batch: F) -> Self
    where
        F: Fn(f64, &StepFunction1D, &StepFunction2D, &mut [f64]) + Send + Sync + 'static,
    {
        self.batch = Some(Arc::new(batch));
        self
    }
}

/// Forcing `f` with `B_f` (affine bound `B_f (1 + ||u||_inf)`) and `L_f`
/// (`L^2`-Lipschitz in `u`).
///
/// `varies_within_cell` is false when `f` depends on `x` only through the
/// step-function argument `u`, in which case per-cell integrals collapse to
/// a single evaluation at the cell center.
#[derive(Clone)]
pub struct ForcingField {
    pub eval: ForcingFn,
    pub bound: f64,
    pub lipschitz: f64,
    pub varies_within_cell: bool,
}

impl ForcingField {
    pub fn new<F>(eval: F, bound: f64, lipschitz: f64, varies_within_cell: bool) -> Self
    where
        F: Fn(f64, f64, &StepFunction1D, &mut [f64]) + Send + Sync + 'static,
    {
        ForcingField {
            eval: Arc::new(eval),
            bound,
            lipschitz,
            varies_within_cell,
        }
    }
}

/// Weight law `Lambda` with `B_Lambda` (affine bound in `||K||_inf`) and
/// `L_Lambda` (`L^2`-Lipschitz in `(K, u)` jointly).
#[derive(Clone)]
pub struct WeightLaw {
    pub eval: WeightFn,
    pub bound: f64,
    pub lipschitz: f64,
    pub varies_within_cell: bool,
    /// Optional fused sweep over all cell centers; only consulted when
    /// `varies_within_cell` is false.
    pub batch: Option<BatchWeightFn>,
}

impl WeightLaw {
    pub fn new<F>(eval: F, bound: f64, lipschitz: f64, varies_within_cell: bool) -> Self
    where
        F: Fn(f64, f64, f64, &StepFunction2D, &StepFunction1D) -> f64 + Send + Sync + 'static,
    {
        WeightLaw {
            eval: Arc::new(eval),
            bound,
            lipschitz,
            varies_within_cell,
            batch: None,
        }
    }

    pub fn with_batch<F>(mut self, batch: F) -> Self
    where
        F: Fn(f64, &StepFunction1D, &StepFunction2D, &mut [f64]) + Send + Sync + 'static,
    {
        self.batch = Some(Arc::new(batch));
        self
    }
}

/// One dynamical system: the triple `(g, f, Lambda)` with state dimension
/// `d` and a label. Immutable after construction; all eval functions must
/// be pure.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub g: InteractionKernel,
    pub f: ForcingField,
    pub lambda: WeightLaw,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("B_g", &self.g.bound)
            .field("L_g", &self.g.lipschitz)
            .field("B_f", &self.f.bound)
            .field("L_f", &self.f.lipschitz)
            .field("B_Lambda", &self.lambda.bound)
            .field("L_Lambda", &self.lambda.lipschitz)
            .finish()
    }
}

/// Adaptively coupled Kuramoto model:
///
/// ```text
/// g(t, xi, eta)         = -sin(eta - xi + alpha)
/// f                     = omega
/// Lambda(t, x, y, K, u) = -eps (sin(u(x) - u(y) + beta) + K(x, y))
/// ```
///
/// Constants: `B_g = 1`, `L_g = 1`, `B_f = |omega|`, `L_f = 0`,
/// `B_Lambda = eps`, `L_Lambda = 2 eps`.
pub fn kuramoto_adaptive(omega: f64, alpha: f64, beta: f64, eps: f64) -> Result<ModelSpec> {
    for (name, v) in [("omega", omega), ("alpha", alpha), ("beta", beta), ("eps", eps)] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be finite")));
        }
    }
    if eps < 0.0 {
        return Err(Error::InvalidParameter("eps must be >= 0".into()));
    }
    let g = InteractionKernel::new(
        move |_t, xi, eta, out| out[0] = -(eta[0] - xi[0] + alpha).sin(),
        1.0,
        1.0,
    )
    // sin(u_l - u_k + alpha) = sin(u_l) cos(alpha - u_k) + cos(u_l) sin(alpha - u_k),
    // so one sweep needs O(N) trig calls instead of O(N^2).
    .with_batch(move |_t, u, k2, out| {
        use rayon::prelude::*;
        let n = u.grid.len();
        let inv_n = 1.0 / n as f64;
        let (sin_u, cos_u): (Vec<f64>, Vec<f64>) =
            u.values.iter().map(|v| (v.sin(), v.cos())).unzip();
        out.par_iter_mut().enumerate().for_each(|(k, slot)| {
            let (sa, ca) = (alpha - u.values[k]).sin_cos();
            let mut acc_s = 0.0;
            let mut acc_c = 0.0;
            for l in 0..n {
                let kv = k2.entry(k, l);
                acc_s += kv * sin_u[l];
                acc_c += kv * cos_u[l];
            }
            *slot = -(ca * acc_s + sa * acc_c) * inv_n;
        });
    });
    let f = ForcingField::new(move |_t, _x, _u, out| out[0] = omega, omega.abs(), 0.0, false);
    let lambda = if eps == 0.0 {
        WeightLaw::new(|_t, _x, _y, _k, _u| 0.0, 0.0, 0.0, false)
    } else {
        WeightLaw::new(
            move |_t, x, y, k, u| -eps * ((u.at(x)[0] - u.at(y)[0] + beta).sin() + k.at(x, y)),
            eps,
            2.0 * eps,
            false,
        )
        // sin(u(x) - u(y) + beta) = sin(u(x) + beta) cos(u(y)) - cos(u(x) + beta) sin(u(y))
        .with_batch(move |_t, u, k2, out| {
            use rayon::prelude::*;
            let n = k2.grid.len();
            let grid = k2.grid;
            let uc: Vec<f64> = (0..n).map(|k| u.at(grid.cell_center(k))[0]).collect();
            let (sin_u, cos_u): (Vec<f64>, Vec<f64>) =
                uc.iter().map(|v| (v.sin(), v.cos())).unzip();
            out.par_chunks_mut(n).enumerate().for_each(|(k, row)| {
                let (sb, cb) = (uc[k] + beta).sin_cos();
                for (l, slot) in row.iter_mut().enumerate() {
                    *slot = -eps * (sb * cos_u[l] - cb * sin_u[l] + k2.values[k * n + l]);
                }
            });
        })
    };
    Ok(ModelSpec {
        name: format!("kuramoto_adaptive(omega={omega},alpha={alpha},beta={beta},eps={eps})"),
        dim: 1,
        g,
        f,
        lambda,
    })
}

/// Oscillators with Hebbian-type linear-decay weight dynamics:
///
/// ```text
/// phase:   g(t, xi, eta) = g_base(t, xi, eta)   (difference-coupled kernel)
/// forcing: f(t, x, u)    = omega(x)             (natural frequencies, step function)
/// weights: Lambda        = Gamma(u(y) - u(x)) - gamma K(x, y)
/// ```
///
/// `gamma_bound`/`gamma_lipschitz` are the caller-supplied constants of
/// `Gamma`; the weight-law constants are `B_Lambda = max(B_Gamma, gamma)`
/// and `L_Lambda = 2 L_Gamma + gamma`.
///
/// The frequencies live on their own step grid; per-cell forcing integrals
/// are exact whenever the frequency grid divides the simulation grid.
pub fn hnp_model<G>(
    gamma_fn: G,
    gamma_bound: f64,
    gamma_lipschitz: f64,
    decay: f64,
    omega: &[f64],
    g_base: InteractionKernel,
) -> Result<ModelSpec>
where
    G: Fn(f64) -> f64 + Send + Sync + 'static,
{
    if !(decay > 0.0) {
        return Err(Error::InvalidParameter("decay rate gamma must be > 0".into()));
    }
    if !gamma_bound.is_finite() || !gamma_lipschitz.is_finite() || gamma_bound < 0.0 {
        return Err(Error::InvalidParameter("Gamma constants must be finite and >= 0".into()));
    }
    if omega.is_empty() {
        return Err(Error::InvalidParameter("need at least one natural frequency".into()));
    }
    let freqs = StepFunction1D::new(UnitGrid::new(omega.len()), 1, omega.to_vec())?;
    let b_f = omega.iter().fold(0.0, |m: f64, w| m.max(w.abs()));
    let f = ForcingField::new(
        move |_t, x, _u, out| out[0] = freqs.at(x)[0],
        b_f,
        0.0,
        true,
    );
    let lambda = WeightLaw::new(
        move |_t, x, y, k, u| gamma_fn(u.at(y)[0] - u.at(x)[0]) - decay * k.at(x, y),
        gamma_bound.max(decay),
        2.0 * gamma_lipschitz + decay,
        false,
    );
    Ok(ModelSpec {
        name: format!("hnp(gamma={decay})"),
        dim: 1,
        g: g_base,
        f,
        lambda,
    })
}

/// Opinion dynamics with time-varying weights, embedded with a rank-one-in-x
/// weight law: `kappa_kl = m_l`, `g(t, xi, eta) = psi(eta - xi)` and
/// `Lambda(t, x, y, K, u) = Psi(t, y, u, K(0, .))`, so the kernel depends on
/// `y` only and every row of `K` carries the weight vector `m`.
///
/// `psi` maps the opinion difference `eta - xi` to a d-vector; `weight_drift`
/// receives `(t, y, u, m)` where `m` is the first row of the current kernel.
/// All constants are caller-supplied.
#[allow(clippy::too_many_arguments)]
pub fn opinion_model<P, W>(
    dim: usize,
    psi: P,
    psi_bound: f64,
    psi_lipschitz: f64,
    weight_drift: W,
    drift_bound: f64,
    drift_lipschitz: f64,
) -> Result<ModelSpec>
where
    P: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    W: Fn(f64, f64, &StepFunction1D, &StepFunction1D) -> f64 + Send + Sync + 'static,
{
    if dim < 1 {
        return Err(Error::InvalidParameter("state dimension must be >= 1".into()));
    }
    for (name, v) in [
        ("psi_bound", psi_bound),
        ("psi_lipschitz", psi_lipschitz),
        ("drift_bound", drift_bound),
        ("drift_lipschitz", drift_lipschitz),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} must be finite and >= 0"
            )));
        }
    }
    let g = InteractionKernel::new(
        move |_t, xi, eta, out| {
            let mut diff = vec![0.0; xi.len()];
            for ((d, e), x) in diff.iter_mut().zip(eta).zip(xi) {
                *d = e - x;
            }
            psi(&diff, out);
        },
        psi_bound,
        psi_lipschitz,
    );
    let f = ForcingField::new(|_t, _x, _u, out| out.fill(0.0), 0.0, 0.0, false);
    let lambda = WeightLaw::new(
        move |t, _x, y, k, u| {
            let m = StepFunction1D::new(k.grid, 1, k.row(0).to_vec())
                .expect("row length matches grid");
            weight_drift(t, y, u, &m)
        },
        drift_bound,
        drift_lipschitz,
        false,
    );
    Ok(ModelSpec {
        name: "opinion".into(),
        dim,
        g,
        f,
        lambda,
    })
}

/// Worst observed ratio of a quantity against its claimed bound.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RatioRecord {
    pub constant: String,
    pub max_ratio: f64,
}

/// Output of [`check_assumptions`]: per-constant worst-case ratios over the
/// sampled inputs and an overall pass flag (`ratio <= 1 + 1e-9` everywhere).
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionReport {
    pub ratios: Vec<RatioRecord>,
    pub pass: bool,
    pub n_samples: usize,
}

const RATIO_TOL: f64 = 1.0 + 1e-9;

/// When a claimed constant is zero the ratio is only meaningful if the
/// sampled quantity vanishes as well.
fn ratio(value: f64, bound: f64) -> f64 {
    if bound == 0.0 {
        if value.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        value / bound
    }
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize, range: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-range..range)).collect()
}

fn random_field_1d(rng: &mut ChaCha8Rng, grid: UnitGrid, dim: usize, range: f64) -> StepFunction1D {
    let values = (0..grid.len() * dim)
        .map(|_| rng.gen_range(-range..range))
        .collect();
    StepFunction1D::new(grid, dim, values).expect("sizes match")
}

fn random_field_2d(rng: &mut ChaCha8Rng, grid: UnitGrid, range: f64) -> StepFunction2D {
    let values = (0..grid.len() * grid.len())
        .map(|_| rng.gen_range(-range..range))
        .collect();
    StepFunction2D::new(grid, values).expect("sizes match")
}

/// Probe the claimed constants of a model on random samples.
///
/// Returns, per constant, the maximum observed `|quantity| / bound` over
/// `n_samples` draws; the flag passes iff every ratio is `<= 1 + 1e-9`.
/// A sampling check can falsify wrong constants but never certify them.
pub fn check_assumptions(m: &ModelSpec, n_samples: usize, seed: u64) -> Result<AssumptionReport> {
    if n_samples < 1 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = UnitGrid::new(8);
    let range = 3.0;
    let d = m.dim;

    let mut r_bg: f64 = 0.0;
    let mut r_lg: f64 = 0.0;
    let mut r_bf: f64 = 0.0;
    let mut r_lf: f64 = 0.0;
    let mut r_bl: f64 = 0.0;
    let mut r_ll: f64 = 0.0;

    let mut out1 = vec![0.0; d];
    let mut out2 = vec![0.0; d];

    for _ in 0..n_samples {
        let t = rng.gen_range(0.0..1.0);
        let x = rng.gen_range(0.0..1.0);
        let y = rng.gen_range(0.0..1.0);
        let xi1 = random_state(&mut rng, d, range);
        let xi2 = random_state(&mut rng, d, range);
        let eta1 = random_state(&mut rng, d, range);
        let eta2 = random_state(&mut rng, d, range);
        let u1 = random_field_1d(&mut rng, grid, d, range);
        let u2 = random_field_1d(&mut rng, grid, d, range);
        let k1 = random_field_2d(&mut rng, grid, range);
        let k2 = random_field_2d(&mut rng, grid, range);

        // g: bound and Lipschitz
        (m.g.eval)(t, &xi1, &eta1, &mut out1);
        let norm1 = out1.iter().map(|v| v * v).sum::<f64>().sqrt();
        r_bg = r_bg.max(ratio(norm1, m.g.bound));
        (m.g.eval)(t, &xi2, &eta2, &mut out2);
        let diff = out1
            .iter()
            .zip(&out2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let arg = vec_dist(&xi1, &xi2) + vec_dist(&eta1, &eta2);
        if arg > 1e-12 {
            r_lg = r_lg.max(ratio(diff / arg, m.g.lipschitz));
        }

        // f: affine bound and L2 Lipschitz (on the sampled step fields)
        (m.f.eval)(t, x, &u1, &mut out1);
        let fnorm = out1.iter().map(|v| v * v).sum::<f64>().sqrt();
        r_bf = r_bf.max(ratio(fnorm, m.f.bound * (1.0 + u1.sup_norm())));
        let fu1 = eval_f_field(m, t, &u1)?;
        let fu2 = eval_f_field(m, t, &u2)?;
        let fdiff = crate::grid::l2_distance_1d(&fu1, &fu2)?;
        let udiff = crate::grid::l2_distance_1d(&u1, &u2)?;
        if udiff > 1e-12 {
            r_lf = r_lf.max(ratio(fdiff / udiff, m.f.lipschitz));
        }

        // Lambda: affine bound and joint L2 Lipschitz
        let lv = (m.lambda.eval)(t, x, y, &k1, &u1);
        r_bl = r_bl.max(ratio(lv.abs(), m.lambda.bound * (1.0 + k1.sup_norm())));
        let l1 = eval_lambda_field(m, t, &k1, &u1);
        let l2 = eval_lambda_field(m, t, &k2, &u2);
        let ldiff = crate::grid::l2_distance_2d(&l1, &l2)?;
        let kdiff = crate::grid::l2_distance_2d(&k1, &k2)?;
        let denom = kdiff + udiff;
        if denom > 1e-12 {
            r_ll = r_ll.max(ratio(ldiff / denom, m.lambda.lipschitz));
        }
    }

    let ratios = vec![
        RatioRecord { constant: "B_g".into(), max_ratio: r_bg },
        RatioRecord { constant: "L_g".into(), max_ratio: r_lg },
        RatioRecord { constant: "B_f".into(), max_ratio: r_bf },
        RatioRecord { constant: "L_f".into(), max_ratio: r_lf },
        RatioRecord { constant: "B_Lambda".into(), max_ratio: r_bl },
        RatioRecord { constant: "L_Lambda".into(), max_ratio: r_ll },
    ];
    let pass = ratios.iter().all(|r| r.max_ratio <= RATIO_TOL);
    Ok(AssumptionReport { ratios, pass, n_samples })
}

fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Evaluate `x -> f(t, x, u)` at the cell centers of `u`'s grid.
fn eval_f_field(m: &ModelSpec, t: f64, u: &StepFunction1D) -> Result<StepFunction1D> {
    let n = u.grid.len();
    let mut values = vec![0.0; n * m.dim];
    let mut out = vec![0.0; m.dim];
    for k in 0..n {
        (m.f.eval)(t, u.grid.cell_center(k), u, &mut out);
        values[k * m.dim..(k + 1) * m.dim].copy_from_slice(&out);
    }
    StepFunction1D::new(u.grid, m.dim, values)
}

/// Evaluate `(x,y) -> Lambda(t, x, y, K, u)` at the cell centers.
fn eval_lambda_field(m: &ModelSpec, t: f64, k: &StepFunction2D, u: &StepFunction1D) -> StepFunction2D {
    let n = k.grid.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let x = k.grid.cell_center(i);
        for j in 0..n {
            let y = k.grid.cell_center(j);
            values[i * n + j] = (m.lambda.eval)(t, x, y, k, u);
        }
    }
    StepFunction2D::new(k.grid, values).expect("sizes match")
}
