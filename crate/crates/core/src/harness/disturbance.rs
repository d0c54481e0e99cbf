use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::output::read_trace_disturbances;
use super::{HarnessError, Result};
use crate::ogd::{AdversaryView, DisturbanceSource};
use crate::Vector;

/// Disturbance generator settings. Seeds left unset use the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    /// Independent coordinates, uniform on `[-w_bar, w_bar]`.
    IidUniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// The same vector every step; `w_bar * (1, ..., 1)` when no value is given.
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Vec<f64>>,
    },
    /// A random sign pattern scaled to `w_bar`, negated every `period` steps.
    SignFlip {
        period: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Chooses `w_t` after seeing the state and the committed input.
    Adaptive {
        #[serde(default)]
        strategy: AdaptiveStrategy,
    },
    /// Disturbances read back from a trace CSV; zeros once the trace runs out.
    Replay { trace: PathBuf },
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec::IidUniform { seed: None }
    }
}

impl DisturbanceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DisturbanceSpec::IidUniform { .. } => "iid_uniform",
            DisturbanceSpec::Constant { .. } => "constant",
            DisturbanceSpec::SignFlip { .. } => "sign_flip",
            DisturbanceSpec::Adaptive { .. } => "adaptive",
            DisturbanceSpec::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveStrategy {
    /// Vertex of the disturbance box maximizing `||x_{t+1}||_2`.
    #[default]
    MaxStateNorm,
    /// `w_bar * sign(x_t)`: keeps pushing the state the way it already points.
    Chase,
}

#[derive(Debug, Clone)]
enum Kind {
    Iid(ChaCha8Rng),
    Constant(Vector),
    SignFlip { period: usize, signs: Vector },
    Adaptive(AdaptiveStrategy),
    Replay(Vec<Vector>),
}

/// A disturbance source whose outputs always satisfy `||w||_inf <= w_bar`.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    n: usize,
    w_bar: f64,
    kind: Kind,
    t: usize,
}

fn sign(z: f64) -> f64 {
    if z < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl DisturbanceStream {
    pub fn new(spec: &DisturbanceSpec, n: usize, w_bar: f64, seed: u64) -> Result<Self> {
        let kind = match spec {
            DisturbanceSpec::IidUniform { seed: s } => Kind::Iid(ChaCha8Rng::seed_from_u64(s.unwrap_or(seed))),
            DisturbanceSpec::Constant { value } => {
                let v = match value {
                    Some(v) => Vector::from_column_slice(v),
                    None => Vector::from_element(n, w_bar),
                };
                return Self::checked(n, w_bar, Kind::Constant(v.clone()), std::slice::from_ref(&v));
            }
            DisturbanceSpec::SignFlip { period, seed: s } => {
                if *period == 0 {
                    return Err(HarnessError::Config("sign_flip period must be at least 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.unwrap_or(seed));
                let signs = Vector::from_fn(n, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
                Kind::SignFlip { period: *period, signs }
            }
            DisturbanceSpec::Adaptive { strategy } => Kind::Adaptive(*strategy),
            DisturbanceSpec::Replay { trace } => {
                let ws = read_trace_disturbances(trace)?;
                return Self::replay(ws, w_bar);
            }
        };
        Ok(DisturbanceStream { n, w_bar, kind, t: 0 })
    }

    /// Replays `ws` in order. Every entry must respect the bound.
    pub fn replay(ws: Vec<Vector>, w_bar: f64) -> Result<Self> {
        let n = ws.first().map_or(0, |w| w.len());
        let kind = Kind::Replay(ws.clone());
        Self::checked(n, w_bar, kind, &ws)
    }

    fn checked(n: usize, w_bar: f64, kind: Kind, ws: &[Vector]) -> Result<Self> {
        for w in ws {
            if w.len() != n {
                return Err(HarnessError::Config(format!("disturbance has {} entries, expected {n}", w.len())));
            }
            if !(w.amax() <= w_bar) {
                return Err(HarnessError::Config(format!("disturbance {} exceeds w_bar = {w_bar}", w.transpose())));
            }
        }
        Ok(DisturbanceStream { n, w_bar, kind, t: 0 })
    }

    pub fn w_bar(&self) -> f64 {
        self.w_bar
    }
}

impl DisturbanceSource for DisturbanceStream {
    fn next(&mut self, view: &AdversaryView<'_>) -> Vector {
        let t = self.t;
        self.t += 1;
        let wb = self.w_bar;
        match &mut self.kind {
            Kind::Iid(rng) => Vector::from_fn(self.n, |_, _| rng.gen_range(-wb..=wb)),
            Kind::Constant(v) => v.clone(),
            Kind::SignFlip { period, signs } => {
                let s = if (t / *period) % 2 == 0 { wb } else { -wb };
                &*signs * s
            }
            Kind::Adaptive(AdaptiveStrategy::MaxStateNorm) => {
                // ||z + w||^2 separates over coordinates, so the best vertex matches signs with z
                let z = view.sys.a() * view.x + view.sys.b() * view.u;
                z.map(|zi| wb * sign(zi))
            }
            Kind::Adaptive(AdaptiveStrategy::Chase) => view.x.map(|xi| wb * sign(xi)),
            Kind::Replay(ws) => ws.get(t).cloned().unwrap_or_else(|| Vector::zeros(self.n)),
        }
    }
}
