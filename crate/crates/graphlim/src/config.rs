//! JSON run configurations for the CLI. Unknown keys are rejected and the
//! schema version must match [`SCHEMA_VERSION`].

use crate::grid::Graphon;
use crate::model::{self, InteractionKernel, ModelSpec};
use crate::{Error, Result};
use serde::Deserialize;
use std::sync::Arc;

pub const SCHEMA_VERSION: u32 = 1;

fn default_order() -> usize {
    4
}

fn default_store_every() -> usize {
    1
}

/// Built-in model selector: `{"model": "<name>", ...params}`.
#[derive(Debug, Clone)]
pub enum ModelConfig {
    KuramotoAdaptive { omega: f64, alpha: f64, beta: f64, epsilon: f64 },
    Hnp { gamma: f64, gamma_fn: ScalarFnConfig, omega: Vec<f64> },
    Opinion { psi: ScalarFnConfig, drift: DriftConfig },
    /// Unbounded forcing `f = rate (1 + u^2)`; blows up in finite time.
    /// Exists to exercise abort paths; its declared constants are wrong by
    /// construction and fail the assumption checker.
    QuadraticBlowup { rate: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFnConfig {
    Sin { #[serde(default = "one")] amplitude: f64 },
    Constant { value: f64 },
    Linear { #[serde(default = "one")] slope: f64 },
}

fn one() -> f64 {
    1.0
}

impl ScalarFnConfig {
    pub fn build(&self) -> (Arc<dyn Fn(f64) -> f64 + Send + Sync>, f64, f64) {
        match self {
            // (fn, bound, lipschitz); Linear is Lipschitz but unbounded, the
            // bound reported is over |s| <= 2 pi which suffices for phases.
            ScalarFnConfig::Sin { amplitude } => {
                let a = *amplitude;
                (Arc::new(move |s: f64| a * s.sin()), a.abs(), a.abs())
            }
            ScalarFnConfig::Constant { value } => {
                let c = *value;
                (Arc::new(move |_s: f64| c), c.abs(), 0.0)
            }
            ScalarFnConfig::Linear { slope } => {
                let a = *slope;
                (
                    Arc::new(move |s: f64| a * s),
                    a.abs() * 2.0 * std::f64::consts::PI,
                    a.abs(),
                )
            }
        }
    }
}

/// Weight drift for the opinion model: `dm/dt = -rate (m(y) - target(u(y)))`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub rate: f64,
    pub target: ScalarFnConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct KuramotoParams {
    omega: f64,
    alpha: f64,
    beta: f64,
    epsilon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HnpParams {
    gamma: f64,
    gamma_fn: ScalarFnConfig,
    omega: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpinionParams {
    psi: ScalarFnConfig,
    drift: DriftConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlowupParams {
    rate: f64,
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error as DeError;
        let mut value = serde_json::Value::deserialize(deserializer)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| D::Error::custom("model must be a JSON object"))?;
        let name = obj
            .remove("model")
            .and_then(|v| v.as_str().map(|s| s.to_string()))
            .ok_or_else(|| D::Error::custom("missing string field `model`"))?;
        let rest = serde_json::Value::Object(obj.clone());
        match name.as_str() {
            "kuramoto_adaptive" => {
                let p: KuramotoParams = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(ModelConfig::KuramotoAdaptive {
                    omega: p.omega,
                    alpha: p.alpha,
                    beta: p.beta,
                    epsilon: p.epsilon,
                })
            }
            "hnp" => {
                let p: HnpParams = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(ModelConfig::Hnp {
                    gamma: p.gamma,
                    gamma_fn: p.gamma_fn,
                    omega: p.omega,
                })
            }
            "opinion" => {
                let p: OpinionParams = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(ModelConfig::Opinion { psi: p.psi, drift: p.drift })
            }
            "quadratic_blowup" => {
                let p: BlowupParams = serde_json::from_value(rest).map_err(D::Error::custom)?;
                Ok(ModelConfig::QuadraticBlowup { rate: p.rate })
            }
            other => Err(D::Error::custom(format!("unknown model `{other}`"))),
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::KuramotoAdaptive { omega, alpha, beta, epsilon } => {
                model::kuramoto_adaptive(*omega, *alpha, *beta, *epsilon)
            }
            ModelConfig::Hnp { gamma, gamma_fn, omega } => {
                let (f, bound, lip) = gamma_fn.build();
                let g_base = InteractionKernel::new(
                    |_t, xi: &[f64], eta: &[f64], out: &mut [f64]| {
                        out[0] = (eta[0] - xi[0]).sin()
                    },
                    1.0,
                    1.0,
                );
                model::hnp_model(move |s| f(s), bound, lip, *gamma, omega, g_base)
            }
            ModelConfig::Opinion { psi, drift } => {
                let (pf, pb, pl) = psi.build();
                let (tf, tb, _tl) = drift.target.build();
                let rate = drift.rate;
                if !(rate > 0.0) {
                    return Err(Error::InvalidParameter("drift rate must be > 0".into()));
                }
                // Lambda = -rate (m(y) - target(u(y))): bounded by
                // rate (||m||_inf + B_target) <= B (1 + ||K||_inf) with
                // B = rate max(1, B_target); L^2-Lipschitz constant
                // rate (1 + L_target).
                let (_, _, tl) = drift.target.build();
                model::opinion_model(
                    1,
                    move |d: &[f64], out: &mut [f64]| out[0] = pf(d[0]),
                    pb,
                    pl,
                    move |_t, y, u, m| -rate * (m.at(y)[0] - tf(u.at(y)[0])),
                    rate * tb.max(1.0),
                    rate * (1.0 + tl),
                )
            }
            ModelConfig::QuadraticBlowup { rate } => {
                let r = *rate;
                if !r.is_finite() {
                    return Err(Error::InvalidParameter("rate must be finite".into()));
                }
                let g = InteractionKernel::new(
                    |_t, _xi: &[f64], _eta: &[f64], out: &mut [f64]| out[0] = 0.0,
                    0.0,
                    0.0,
                );
                let f = model::ForcingField::new(
                    move |_t, x, u: &crate::grid::StepFunction1D, out: &mut [f64]| {
                        let v = u.at(x)[0];
                        out[0] = r * (1.0 + v * v)
                    },
                    r.abs(),
                    r.abs(),
                    false,
                );
                let lambda = model::WeightLaw::new(|_t, _x, _y, _k, _u| 0.0, 0.0, 0.0, false);
                Ok(ModelSpec {
                    name: format!("quadratic_blowup(rate={r})"),
                    dim: 1,
                    g,
                    f,
                    lambda,
                })
            }
        }
    }
}

/// Initial profile `u_0` on `I`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Constant { value: f64 },
    /// `amplitude * sin(2 pi frequency x)`.
    Sine { amplitude: f64, #[serde(default = "one")] frequency: f64 },
    /// `scale * x^2 (3 - 2x)`, a smooth monotone ramp from 0 to `scale`.
    Smoothstep { scale: f64 },
}

impl ProfileConfig {
    pub fn build(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match self {
            ProfileConfig::Constant { value } => {
                let c = *value;
                Arc::new(move |_x| c)
            }
            ProfileConfig::Sine { amplitude, frequency } => {
                let (a, fr) = (*amplitude, *frequency);
                Arc::new(move |x| a * (2.0 * std::f64::consts::PI * fr * x).sin())
            }
            ProfileConfig::Smoothstep { scale } => {
                let s = *scale;
                Arc::new(move |x| s * x * x * (3.0 - 2.0 * x))
            }
        }
    }
}

/// The limiting kernel `W`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphonConfig {
    Constant { value: f64 },
    /// `exp(-(x - y)^2)`.
    GaussianDiff,
    /// `x y`.
    Product,
    /// `amplitude * cos(pi (x - y))`.
    CosineDiff { amplitude: f64 },
}

impl GraphonConfig {
    pub fn build(&self) -> Graphon {
        match self {
            GraphonConfig::Constant { value } => {
                let c = *value;
                Graphon::analytic(move |_x, _y| c, c.abs())
            }
            GraphonConfig::GaussianDiff => {
                Graphon::analytic(|x, y| (-(x - y) * (x - y)).exp(), 1.0)
            }
            GraphonConfig::Product => Graphon::analytic(|x, y| x * y, 1.0),
            GraphonConfig::CosineDiff { amplitude } => {
                let a = *amplitude;
                Graphon::analytic(move |x, y| a * (std::f64::consts::PI * (x - y)).cos(), a.abs())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub u0: ProfileConfig,
    pub w: GraphonConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardRunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub m: usize,
    pub t_final: f64,
    pub tol_l2: f64,
    pub max_iters: usize,
    #[serde(default = "default_nodes")]
    pub nodes_per_window: usize,
    #[serde(default)]
    pub window_override: Option<f64>,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    pub initial: InitialConfig,
}

fn default_nodes() -> usize {
    9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub n_list: Vec<usize>,
    pub m_ref: usize,
    pub t_final: f64,
    pub dt: f64,
    pub store_every: usize,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub seed: u64,
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Grid resolution for the discrete spot check.
    pub grid_n: usize,
    pub discrete_samples: usize,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
}

/// Parse a config document of type `T`, checking the schema version.
pub fn parse<T>(bytes: &[u8]) -> Result<T>
where
    T: serde::de::DeserializeOwned + HasSchemaVersion,
{
    let cfg: T = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version {} not supported (expected {})",
            cfg.schema_version(),
            SCHEMA_VERSION
        )));
    }
    Ok(cfg)
}

pub trait HasSchemaVersion {
    fn schema_version(&self) -> u32;
}

macro_rules! impl_schema_version {
    ($($t:ty),*) => {
        $(impl HasSchemaVersion for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        })*
    };
}

impl_schema_version!(SimulateConfig, PicardRunConfig, ConvergeConfig, ValidateConfig);

/// Hex SHA-256 of the raw config bytes; recorded in every output manifest.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kuramoto_config_round_trip() {
        let doc = br#"{
            "schema_version": 1,
            "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
            "n": 8, "t_final": 1.0, "dt": 0.001,
            "initial": {"u0": {"kind": "constant", "value": 0.0}, "w": {"kind": "gaussian_diff"}}
        }"#;
        let cfg: SimulateConfig = parse(doc).unwrap();
        let m = cfg.model.build().unwrap();
        assert_eq!(m.f.bound, 0.5);
        assert_eq!(m.lambda.bound, 0.5);
        assert_eq!(m.lambda.lipschitz, 1.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let doc = br#"{
            "schema_version": 1,
            "model": {"model": "kuramoto_adaptive", "omega": 0.0, "alpha": 0.0, "beta": 0.0, "epsilon": 0.0},
            "n": 8, "t_final": 1.0, "dt": 0.001, "bogus": 3,
            "initial": {"u0": {"kind": "constant", "value": 0.0}, "w": {"kind": "constant", "value": 1.0}}
        }"#;
        let err = parse::<SimulateConfig>(doc).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn unknown_model_param_rejected() {
        let doc = br#"{
            "schema_version": 1,
            "model": {"model": "kuramoto_adaptive", "omega": 0.0, "alpha": 0.0, "beta": 0.0, "epsilon": 0.0, "zeta": 1},
            "n": 8, "t_final": 1.0, "dt": 0.001,
            "initial": {"u0": {"kind": "constant", "value": 0.0}, "w": {"kind": "constant", "value": 1.0}}
        }"#;
        let err = parse::<SimulateConfig>(doc).unwrap_err();
        assert!(err.to_string().contains("zeta"), "{err}");
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let doc = br#"{
            "schema_version": 2,
            "model": {"model": "kuramoto_adaptive", "omega": 0.0, "alpha": 0.0, "beta": 0.0, "epsilon": 0.0},
            "n": 8, "t_final": 1.0, "dt": 0.001,
            "initial": {"u0": {"kind": "constant", "value": 0.0}, "w": {"kind": "constant", "value": 1.0}}
        }"#;
        assert!(parse::<SimulateConfig>(doc).is_err());
    }

    #[test]
    fn config_hash_stable() {
        assert_eq!(config_hash(b"abc"), config_hash(b"abc"));
        assert_ne!(config_hash(b"abc"), config_hash(b"abd"));
    }
}
