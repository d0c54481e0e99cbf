use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::benchmark::GridSpec;
use super::disturbance::{DisturbanceSpec, DisturbanceStream};
use super::{HarnessError, Result};
use crate::geometry::ConvexSet;
use crate::lti::{certify_linear_policy_safety, certify_strong_stability, LtiError, LtiSystem, SafetySpec, StabilityCertificate};
use crate::ogd::{
    select_parameters, AlgorithmParams, CostFunction, OgdBzc, ProblemConstants, QuadraticCost, RunOptions, RunTrace,
    Schedule, SmoothedHingeCost,
};
use crate::{Matrix, Vector};

/// The built-in two-state example.
pub const TOY_CONFIG: &str = include_str!("../../../../configs/toy2d.toml");

/// Top-level run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    pub safety: SafetyConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub benchmark: GridSpec,
}

/// Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub w_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub state: SetConfig,
    pub input: SetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SetConfig {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    L2ball { center: Vec<f64>, radius: f64 },
    /// `{x : normals x <= offsets}`, normals given as rows.
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl SetConfig {
    pub fn build(&self) -> Result<ConvexSet> {
        let set = match self {
            SetConfig::Box { lower, upper } => {
                ConvexSet::new_box(Vector::from_column_slice(lower), Vector::from_column_slice(upper))
            }
            SetConfig::L2ball { center, radius } => ConvexSet::l2_ball(Vector::from_column_slice(center), *radius),
            SetConfig::Polytope { normals, offsets } => {
                ConvexSet::polytope(to_matrix("safety normals", normals)?, Vector::from_column_slice(offsets))
            }
        };
        set.map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Gain inside the disturbance-action policy.
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    /// Strictly safe linear gain whose embedding seeds the iterates (defaults to `K`).
    #[serde(rename = "K_safe", default, skip_serializing_if = "Option::is_none")]
    pub k_safe: Option<Vec<Vec<f64>>>,
    /// Linear controller simulated next to OGD-BZC in the figures (defaults to `K`).
    #[serde(rename = "K_compare", default, skip_serializing_if = "Option::is_none")]
    pub k_compare: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Theorem,
    #[default]
    Experiment,
    Manual,
}

/// Schedule choice. `H`, `eta` and `epsilon` override the schedule's values
/// and are all required for `manual`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl ParamsConfig {
    fn has_overrides(&self) -> bool {
        self.h.is_some() || self.eta.is_some() || self.epsilon.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    /// `x' Q x + u' R u`, identity weights by default.
    Quadratic {
        #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<Vec<f64>>>,
        #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
        r: Option<Vec<Vec<f64>>>,
    },
    SmoothedHinge { threshold: f64, smoothing: f64 },
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::Quadratic { q: None, r: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "T")]
    pub t: usize,
    /// Output directory for traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { t: 200, out: None }
    }
}

fn to_matrix(what: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(HarnessError::Config(format!("{what} must be a non-empty rectangular list of rows")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn toy() -> Self {
        Self::from_toml(TOY_CONFIG).expect("built-in config parses")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A validated configuration with its certificates computed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub sys: LtiSystem,
    pub spec: SafetySpec,
    pub base: StabilityCertificate,
    pub safe: StabilityCertificate,
    pub comparator: Matrix,
    /// Certified strict-safety margin of the safe gain.
    pub eps_star: f64,
    pub cost: Arc<dyn CostFunction>,
}

fn lti_config_error(e: LtiError) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        let s = &config.system;
        let sys = LtiSystem::new(to_matrix("system.A", &s.a)?, to_matrix("system.B", &s.b)?, s.w_bar)
            .map_err(lti_config_error)?;
        let spec =
            SafetySpec::new(&sys, config.safety.state.build()?, config.safety.input.build()?).map_err(lti_config_error)?;
        let gain = |what: &str, rows: &[Vec<f64>]| -> Result<Matrix> {
            let k = to_matrix(what, rows)?;
            sys.check_gain(&k).map_err(lti_config_error)?;
            Ok(k)
        };
        let c = &config.controller;
        let k = gain("controller.K", &c.k)?;
        let k_safe = match &c.k_safe {
            Some(rows) => gain("controller.K_safe", rows)?,
            None => k.clone(),
        };
        let comparator = match &c.k_compare {
            Some(rows) => gain("controller.K_compare", rows)?,
            None => k.clone(),
        };
        let certify = |k: &Matrix| {
            certify_strong_stability(&sys, k).map_err(|e| HarnessError::Infeasible(format!("gain {k}: {e}")))
        };
        let base = certify(&k)?;
        let safe = certify(&k_safe)?;
        let eps_star = certify_linear_policy_safety(&sys, &safe, &spec)
            .map_err(|e| HarnessError::Infeasible(e.to_string()))?
            .filter(|e| *e > 0.0)
            .ok_or_else(|| {
                HarnessError::Infeasible("the safe gain is not certified strictly safe for these constraints".into())
            })?;
        let cost: Arc<dyn CostFunction> = match &config.cost {
            CostConfig::Quadratic { q, r } => {
                let q = match q {
                    Some(rows) => to_matrix("cost.Q", rows)?,
                    None => Matrix::identity(sys.n(), sys.n()),
                };
                let r = match r {
                    Some(rows) => to_matrix("cost.R", rows)?,
                    None => Matrix::identity(sys.m(), sys.m()),
                };
                if q.shape() != (sys.n(), sys.n()) || r.shape() != (sys.m(), sys.m()) {
                    return Err(HarnessError::Config("cost.Q must be n x n and cost.R m x m".into()));
                }
                Arc::new(QuadraticCost::new(q, r).map_err(|e| HarnessError::Config(e.to_string()))?)
            }
            CostConfig::SmoothedHinge { threshold, smoothing } => {
                if !(*threshold >= 0.0 && *smoothing > 0.0 && threshold.is_finite() && smoothing.is_finite()) {
                    return Err(HarnessError::Config("hinge needs threshold >= 0 and smoothing > 0".into()));
                }
                Arc::new(SmoothedHingeCost { threshold: *threshold, smoothing: *smoothing, dims: sys.n() + sys.m() })
            }
        };
        if config.run.t == 0 {
            return Err(HarnessError::Config("run.T must be at least 1".into()));
        }
        let p = &config.params;
        if p.schedule == ScheduleKind::Manual && !(p.h.is_some() && p.eta.is_some() && p.epsilon.is_some()) {
            return Err(HarnessError::Config("manual schedule needs H, eta and epsilon".into()));
        }
        config.benchmark.values()?;
        // catch bad disturbance fields at load time rather than mid-run
        DisturbanceStream::new(&config.disturbance, sys.n(), sys.w_bar(), config.seed)?;
        Ok(Experiment { config, sys, spec, base, safe, comparator, eps_star, cost })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::new(RunConfig::from_toml(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(RunConfig::load(path)?)
    }

    pub fn toy() -> Self {
        Self::new(RunConfig::toy()).expect("built-in config is feasible")
    }

    pub fn horizon(&self) -> usize {
        self.config.run.t
    }

    pub fn constants(&self) -> ProblemConstants {
        ProblemConstants::new(&self.sys, &self.base, &self.safe)
    }

    pub fn params(&self, horizon: usize) -> Result<AlgorithmParams> {
        let p = &self.config.params;
        let consts = self.constants();
        let select = |s: Schedule| {
            select_parameters(&consts, self.cost.as_ref(), self.eps_star, horizon, s).map_err(HarnessError::from_param)
        };
        match p.schedule {
            ScheduleKind::Manual => select(Schedule::Manual {
                h: p.h.unwrap_or_default(),
                eta: p.eta.unwrap_or_default(),
                epsilon: p.epsilon.unwrap_or_default(),
            }),
            kind => {
                let sched = if kind == ScheduleKind::Theorem { Schedule::Theorem } else { Schedule::Experiment };
                let chosen = select(sched)?;
                if !p.has_overrides() {
                    return Ok(chosen);
                }
                select(Schedule::Manual {
                    h: p.h.unwrap_or(chosen.h),
                    eta: p.eta.unwrap_or(chosen.eta),
                    epsilon: p.epsilon.unwrap_or(chosen.epsilon),
                })
            }
        }
    }

    pub fn controller(&self, horizon: usize) -> Result<OgdBzc> {
        let params = self.params(horizon)?;
        Ok(OgdBzc::new(&self.sys, &self.base, &self.safe, &self.spec, params, self.cost.as_ref())?)
    }

    /// Stream seeds fall back to the config's top-level seed.
    pub fn stream(&self, spec: &DisturbanceSpec, seed: u64) -> Result<DisturbanceStream> {
        DisturbanceStream::new(spec, self.sys.n(), self.sys.w_bar(), seed)
    }

    pub fn run_with(&self, horizon: usize, spec: &DisturbanceSpec, seed: u64, opts: RunOptions) -> Result<RunTrace> {
        let ctrl = self.controller(horizon)?;
        let mut stream = self.stream(spec, seed)?;
        let mut costs = crate::ogd::FixedCost(self.cost.clone());
        Ok(ctrl.run(horizon, &mut costs, &mut stream, opts)?)
    }

    /// The configured run: `run.T` steps under the configured disturbance.
    pub fn run(&self) -> Result<RunTrace> {
        self.run_with(self.horizon(), &self.config.disturbance, self.config.seed, RunOptions::default())
    }

    /// Comment block carrying the seed and the full config.
    pub fn header(&self, extra: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&format!("# seed: {}\n# config:\n", self.config.seed));
        for line in self.config.to_toml().lines() {
            out.push_str(&format!("#   {line}\n"));
        }
        out
    }
}

impl HarnessError {
    fn from_param(e: crate::ogd::ParamError) -> Self {
        use crate::ogd::ParamError as P;
        match e {
            P::ZeroHorizon | P::InvalidManual { .. } | P::InvalidCost(_) => HarnessError::Config(e.to_string()),
            P::InvalidMargin(_) | P::WindowViolated { .. } => HarnessError::Infeasible(e.to_string()),
        }
    }
}
