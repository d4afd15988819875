//! The decentralized online mirror descent loop.
//!
//! Each round `t`, with iterates `x_{i,t}`:
//!
//! ```text
//! g_i      = ∇f_{i,t}(x_{i,t})                     (or one stochastic draw)
//! y_i      = Σ_j W_ij x_{j,t}
//! x̂_i      = argmin_x η_t⟨x, g_i⟩ + D(x, y_i)
//! x_{i,t+1} = A x̂_i                                (projected back onto X)
//! ```
//!
//! Rounds are 0-based in storage: trace state `k` is the iterate used in
//! round `k` and `etas[k]` is the step size of that round.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::csvio::{fmt_float, Csv};
use crate::dynamics::LinearDynamics;
use crate::geometry::{Domain, GeometryError, MirrorGeometry};
use crate::network::{mix, NetworkError, WeightMatrix};
use crate::objectives::{LossEnsemble, ObjectiveError};
use crate::{seed, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid step-size schedule: {0}")]
    Schedule(String),
    #[error("step size requested at t = {t}, schedule defined on 1..={last}")]
    EtaOutOfRange { t: usize, last: usize },
    #[error("initial state outside the domain")]
    InitOutsideDomain,
    #[error("inconsistent setup: {0}")]
    Mismatch(String),
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// One agent after a round: the new iterate and the intermediates that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Iterate `x_{i,t}`.
    pub x: Vector,
    /// Mixed state `y_{i,t-1}` that led to `x`.
    pub y: Vector,
    /// Prox output `x̂_{i,t}` that led to `x`.
    pub xhat: Vector,
}

impl AgentState {
    fn at(x: Vector) -> Self {
        Self { y: x.clone(), xhat: x.clone(), x }
    }
}

/// Initial states, identical across agents: `x0` if given, otherwise the
/// origin for Euclidean domains (free or containing it) and the uniform
/// distribution on the simplex.
pub fn init_state(n: usize, geom: &MirrorGeometry, x0: Option<&Vector>) -> Result<Vec<AgentState>, EngineError> {
    let x = match x0 {
        Some(x) => {
            if x.len() != geom.dim() || !geom.domain().contains(x) {
                return Err(EngineError::InitOutsideDomain);
            }
            x.clone()
        }
        None => match geom.domain() {
            Domain::Simplex { dim, .. } => Vector::from_element(*dim, 1.0 / *dim as f64),
            d => {
                let origin = Vector::zeros(d.dim());
                if d.contains(&origin) {
                    origin
                } else {
                    d.project(&origin)
                }
            }
        },
    };
    Ok(vec![AgentState::at(x); n])
}

// ---------------------------------------------------------------------------
// Step sizes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant,
    InvSqrt,
    /// `η = √((1 − σ₂) C_T / T)` for every round.
    CorollaryOptimal { c_t: f64, sigma2: f64 },
}

/// Positive, non-increasing step sizes `η_1, …, η_{T+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    kind: ScheduleKind,
    eta0: f64,
    horizon: usize,
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind, eta0: f64, horizon: usize) -> Result<Self, EngineError> {
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(EngineError::Schedule(format!("eta0 must be positive, got {eta0}")));
        }
        if let ScheduleKind::CorollaryOptimal { c_t, sigma2 } = kind {
            if !(c_t >= 0.0 && c_t.is_finite()) {
                return Err(EngineError::Schedule(format!("C_T must be >= 0, got {c_t}")));
            }
            if !(0.0..1.0).contains(&sigma2) {
                return Err(EngineError::Schedule(format!("sigma2 must lie in [0, 1), got {sigma2}")));
            }
            if horizon == 0 {
                return Err(EngineError::Schedule("corollary step needs T >= 1".into()));
            }
        }
        Ok(Self { kind, eta0, horizon })
    }

    pub fn constant(eta0: f64, horizon: usize) -> Result<Self, EngineError> {
        Self::new(ScheduleKind::Constant, eta0, horizon)
    }

    pub fn inv_sqrt(eta0: f64, horizon: usize) -> Result<Self, EngineError> {
        Self::new(ScheduleKind::InvSqrt, eta0, horizon)
    }

    /// `eta0` is the fallback used when `C_T = 0`.
    pub fn corollary_optimal(c_t: f64, sigma2: f64, eta0: f64, horizon: usize) -> Result<Self, EngineError> {
        Self::new(ScheduleKind::CorollaryOptimal { c_t, sigma2 }, eta0, horizon)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// True when a corollary schedule had `C_T = 0` and runs at `eta0`.
    pub fn fallback_used(&self) -> bool {
        matches!(self.kind, ScheduleKind::CorollaryOptimal { c_t, .. } if c_t == 0.0)
    }

    /// `η_t` for `1 ≤ t ≤ T + 1`.
    pub fn eta(&self, t: usize) -> Result<f64, EngineError> {
        if t == 0 || t > self.horizon + 1 {
            return Err(EngineError::EtaOutOfRange { t, last: self.horizon + 1 });
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.eta0,
            ScheduleKind::InvSqrt => self.eta0 / (t as f64).sqrt(),
            ScheduleKind::CorollaryOptimal { c_t, sigma2 } => {
                if c_t == 0.0 {
                    self.eta0
                } else {
                    ((1.0 - sigma2) * c_t / self.horizon as f64).sqrt()
                }
            }
        })
    }

    /// `[η_1, …, η_{T+1}]`.
    pub fn etas(&self) -> Vec<f64> {
        (1..=self.horizon + 1).map(|t| self.eta(t).expect("t in range")).collect()
    }
}

// ---------------------------------------------------------------------------
// One round
// ---------------------------------------------------------------------------

/// One synchronous round from iterates `states[i].x` with gradients
/// `grads[i]` evaluated at those iterates. `step_index` is only used for
/// error reporting.
///
/// After the dynamics the iterate is projected back onto a bounded domain
/// when `A` pushes it outside (a no-op whenever `A` maps `X` into itself).
pub fn step(
    states: &[AgentState],
    w: &WeightMatrix,
    geom: &MirrorGeometry,
    dyn_: &LinearDynamics,
    grads: &[Vector],
    eta: f64,
    step_index: usize,
) -> Result<Vec<AgentState>, EngineError> {
    let n = states.len();
    if grads.len() != n || w.n() != n {
        return Err(EngineError::Mismatch(format!(
            "{n} states, {} gradients, {} weight rows",
            grads.len(),
            w.n()
        )));
    }
    if dyn_.dim() != geom.dim() {
        return Err(EngineError::Mismatch(format!("dynamics dim {} vs geometry dim {}", dyn_.dim(), geom.dim())));
    }
    let xs: Vec<Vector> = states.iter().map(|s| s.x.clone()).collect();
    let ys = mix(w, &xs)?;
    let mut out = Vec::with_capacity(n);
    for (y, g) in ys.into_iter().zip(grads) {
        if g.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite { step: step_index });
        }
        let xhat = match geom.prox(g, &y, eta) {
            Ok(v) => v,
            Err(GeometryError::NonFinite(_)) => return Err(EngineError::NonFinite { step: step_index }),
            Err(e) => return Err(e.into()),
        };
        let moved = dyn_.apply(&xhat);
        if moved.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite { step: step_index });
        }
        let x = if geom.domain().contains(&moved) { moved } else { geom.domain().project(&moved) };
        out.push(AgentState { x, y, xhat });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientMode {
    Exact,
    Stochastic,
}

/// Everything a run needs. The horizon is the schedule's `T`.
#[derive(Debug, Clone, Copy)]
pub struct Simulation<'a> {
    pub weights: &'a WeightMatrix,
    pub geometry: &'a MirrorGeometry,
    pub dynamics: &'a LinearDynamics,
    pub losses: &'a LossEnsemble,
    pub schedule: &'a StepSchedule,
    pub mode: GradientMode,
    pub x0: Option<&'a Vector>,
    /// Seed of the oracle streams (one sub-stream per agent).
    pub seed: u64,
}

/// Full record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// `iterates[t][i] = x_{i,t}`, `t = 0..=T`.
    pub iterates: Vec<Vec<Vector>>,
    /// `mixed[t][i] = y_{i,t}`, `t = 0..T`.
    pub mixed: Vec<Vec<Vector>>,
    /// `prox[t][i] = x̂_{i,t+1}`, `t = 0..T`.
    pub prox: Vec<Vec<Vector>>,
    /// Gradients used in round `t`, `t = 0..T`.
    pub gradients: Vec<Vec<Vector>>,
    /// `[η_1, …, η_{T+1}]`.
    pub etas: Vec<f64>,
    /// `means[t] = x̄_t`.
    pub means: Vec<Vector>,
    pub seed: u64,
    pub config_hash: String,
}

impl RunTrace {
    pub fn horizon(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn n(&self) -> usize {
        self.iterates[0].len()
    }

    pub fn dim(&self) -> usize {
        self.iterates[0][0].len()
    }

    fn comment(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }

    /// One row per `(t, agent)` with the iterate coordinates.
    pub fn iterates_csv(&self) -> Csv {
        per_agent_csv(&self.comment(), &self.iterates, self.dim())
    }

    /// One row per `(t, agent)` with the gradient used in round `t`.
    pub fn gradients_csv(&self) -> Csv {
        per_agent_csv(&self.comment(), &self.gradients, self.dim())
    }

    pub fn eta_csv(&self) -> Csv {
        let mut csv = Csv::new(Some(&self.comment()), &["t", "eta"]);
        for (k, eta) in self.etas.iter().enumerate() {
            csv.row(&[(k + 1).to_string(), fmt_float(*eta)]);
        }
        csv
    }
}

fn per_agent_csv(comment: &str, rows: &[Vec<Vector>], d: usize) -> Csv {
    let cols: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    let mut header = vec!["t", "agent"];
    header.extend(cols.iter().map(String::as_str));
    let mut csv = Csv::new(Some(comment), &header);
    for (t, agents) in rows.iter().enumerate() {
        for (i, v) in agents.iter().enumerate() {
            let mut row = vec![t.to_string(), i.to_string()];
            row.extend(v.iter().map(|x| fmt_float(*x)));
            csv.row(&row);
        }
    }
    csv
}

fn mean(xs: &[Vector]) -> Vector {
    xs.iter().fold(Vector::zeros(xs[0].len()), |a, x| a + x) / xs.len() as f64
}

/// Runs `T` rounds. In stochastic mode every agent draws exactly once per
/// round from its own stream `(seed, oracle, agent)`, so the trace depends
/// only on the inputs and the seed.
pub fn run(sim: &Simulation<'_>, config_hash: &str) -> Result<RunTrace, EngineError> {
    let n = sim.weights.n();
    let horizon = sim.schedule.horizon();
    if sim.losses.n() != n {
        return Err(EngineError::Mismatch(format!("{} loss agents vs {n} network agents", sim.losses.n())));
    }
    if sim.losses.dim() != sim.geometry.dim() {
        return Err(EngineError::Mismatch(format!(
            "loss dim {} vs geometry dim {}",
            sim.losses.dim(),
            sim.geometry.dim()
        )));
    }
    if sim.losses.horizon() < horizon {
        return Err(EngineError::Mismatch(format!("losses cover {} rounds, need {horizon}", sim.losses.horizon())));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| seed::stream(sim.seed, seed::Stream::Oracle, i as u64)).collect();
    let etas = sim.schedule.etas();

    let mut states = init_state(n, sim.geometry, sim.x0)?;
    let mut iterates = Vec::with_capacity(horizon + 1);
    let mut mixed = Vec::with_capacity(horizon);
    let mut prox = Vec::with_capacity(horizon);
    let mut gradients = Vec::with_capacity(horizon);
    iterates.push(states.iter().map(|s| s.x.clone()).collect::<Vec<_>>());

    for t in 0..horizon {
        let grads = states
            .iter()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(i, (s, rng))| match sim.mode {
                GradientMode::Exact => sim.losses.gradient(i, t, &s.x),
                GradientMode::Stochastic => sim.losses.stochastic_gradient(i, t, &s.x, rng),
            })
            .collect::<Result<Vec<_>, _>>()?;
        states = step(&states, sim.weights, sim.geometry, sim.dynamics, &grads, etas[t], t)?;
        iterates.push(states.iter().map(|s| s.x.clone()).collect());
        mixed.push(states.iter().map(|s| s.y.clone()).collect());
        prox.push(states.iter().map(|s| s.xhat.clone()).collect());
        gradients.push(grads);
    }
    let means = iterates.iter().map(|xs| mean(xs)).collect();
    Ok(RunTrace { iterates, mixed, prox, gradients, etas, means, seed: sim.seed, config_hash: config_hash.to_string() })
}
