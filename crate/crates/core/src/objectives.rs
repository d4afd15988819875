//! Time-varying local losses `f_{i,t}` with exact and stochastic gradient
//! oracles.
//!
//! * Tracking square loss: agent `i` observes one coordinate `k_i` of the
//!   target through additive uniform noise, `z = x*_t(k_i) + w`, and
//!   `f_{i,t}(x) = E[(z − x(k_i))²] = (x*_t(k_i) − x(k_i))² + Var(w)`.
//! * Synthetic quadratic `‖x − c_{i,t}‖²` and synthetic linear `⟨g_{i,t}, x⟩`
//!   losses, built so that every regularity constant is known analytically.
//!
//! Time indices are 0-based: `t = 0` is the first round.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dynamics::{LinearDynamics, MinimizerPath};
use crate::geometry::{Domain, MirrorGeometry, MirrorKind};
use crate::{seed, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("agent {agent} or time {t} out of range (n = {n}, horizon = {horizon})")]
    IndexOutOfRange { agent: usize, t: usize, n: usize, horizon: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("observation model: {0}")]
    Observation(String),
    #[error("constant unavailable on an unbounded domain")]
    Unbounded,
    #[error("{0} requires a box domain")]
    NeedsBox(&'static str),
    #[error("invalid synthetic losses: {0}")]
    Invalid(String),
}

/// Which stochastic direction the tracking oracle returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientConvention {
    /// Innovation direction `−e_k (z − x(k))`, half the true gradient in
    /// expectation. With `η = 0.5` this reproduces the consensus+innovation
    /// tracking update.
    Literal,
    /// Unbiased gradient of the square loss, `−2 e_k (z − x(k))`.
    True,
}

// ---------------------------------------------------------------------------
// Observation model
// ---------------------------------------------------------------------------

/// Which state coordinate each agent observes, and the support `[-h, h]` of
/// its uniform observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    assignment: Vec<usize>,
    noise_half_width: f64,
}

impl ObservationModel {
    /// Every coordinate in `0..dim` must be observed by at least one agent.
    pub fn new(assignment: Vec<usize>, dim: usize, noise_half_width: f64) -> Result<Self, ObjectiveError> {
        if !(noise_half_width >= 0.0 && noise_half_width.is_finite()) {
            return Err(ObjectiveError::Observation(format!("noise half-width {noise_half_width} must be >= 0")));
        }
        if let Some(k) = assignment.iter().find(|&&k| k >= dim) {
            return Err(ObjectiveError::Observation(format!("coordinate {k} outside 0..{dim}")));
        }
        if let Some(k) = (0..dim).find(|k| !assignment.contains(k)) {
            return Err(ObjectiveError::Observation(format!("coordinate {k} is observed by no agent")));
        }
        Ok(Self { assignment, noise_half_width })
    }

    /// `n` agents split into four contiguous near-equal groups, the first
    /// `n mod 4` groups one larger; group `g` observes coordinate `g`.
    /// For `n = 25` the groups are 7, 6, 6, 6.
    pub fn four_groups(n: usize, noise_half_width: f64) -> Result<Self, ObjectiveError> {
        if n < 4 {
            return Err(ObjectiveError::Observation(format!("four groups need n >= 4, got {n}")));
        }
        let (base, extra) = (n / 4, n % 4);
        let assignment = (0..4).flat_map(|g| std::iter::repeat_n(g, base + usize::from(g < extra))).collect();
        Self::new(assignment, 4, noise_half_width)
    }

    pub fn coordinate(&self, agent: usize) -> usize {
        self.assignment[agent]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn noise_half_width(&self) -> f64 {
        self.noise_half_width
    }

    /// `Var(w) = h² / 3` for `w ~ U[-h, h]`.
    pub fn noise_variance(&self) -> f64 {
        self.noise_half_width.powi(2) / 3.0
    }
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    TrackingSquare {
        observation: ObservationModel,
        /// `x*_t` for every round (length `T + 1`).
        targets: Vec<Vector>,
        convention: GradientConvention,
    },
    /// `f_{i,t}(x) = ‖x − centers[t][i]‖²`.
    SyntheticQuadratic { centers: Vec<Vec<Vector>> },
    /// `f_{i,t}(x) = ⟨coefficients[t][i], x⟩`.
    SyntheticLinear { coefficients: Vec<Vec<Vector>> },
}

/// The family `{f_{i,t}}` for all agents and rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEnsemble {
    n: usize,
    d: usize,
    kind: LossKind,
    /// Half-width of the additive uniform noise of synthetic stochastic
    /// gradients.
    gradient_noise: f64,
}

impl LossEnsemble {
    pub fn tracking(
        observation: ObservationModel,
        path: &MinimizerPath,
        convention: GradientConvention,
    ) -> Result<Self, ObjectiveError> {
        let d = path.dim();
        if observation.assignment.iter().any(|&k| k >= d) {
            return Err(ObjectiveError::Dimension { expected: d, got: observation.assignment.len() });
        }
        Ok(Self {
            n: observation.assignment.len(),
            d,
            kind: LossKind::TrackingSquare { observation, targets: path.states.clone(), convention },
            gradient_noise: 0.0,
        })
    }

    pub fn quadratic(centers: Vec<Vec<Vector>>, geom: &MirrorGeometry) -> Result<Self, ObjectiveError> {
        let (n, d) = table_shape(&centers)?;
        if d != geom.dim() {
            return Err(ObjectiveError::Dimension { expected: geom.dim(), got: d });
        }
        if centers.iter().flatten().any(|c| !geom.domain().contains(c)) {
            return Err(ObjectiveError::Invalid("every center must lie in the domain".into()));
        }
        Ok(Self { n, d, kind: LossKind::SyntheticQuadratic { centers }, gradient_noise: 0.0 })
    }

    pub fn linear(coefficients: Vec<Vec<Vector>>, geom: &MirrorGeometry) -> Result<Self, ObjectiveError> {
        let (n, d) = table_shape(&coefficients)?;
        if d != geom.dim() {
            return Err(ObjectiveError::Dimension { expected: geom.dim(), got: d });
        }
        if coefficients.iter().flatten().any(|g| geom.dual_norm(g) > 1.0 + 1e-12) {
            return Err(ObjectiveError::Invalid("linear coefficients need dual norm <= 1".into()));
        }
        Ok(Self { n, d, kind: LossKind::SyntheticLinear { coefficients }, gradient_noise: 0.0 })
    }

    /// Sets the half-width `s` of the zero-mean uniform noise `U[-s, s]^d`
    /// added by [`LossEnsemble::stochastic_gradient`] to synthetic losses.
    pub fn with_gradient_noise(mut self, half_width: f64) -> Self {
        self.gradient_noise = half_width.max(0.0);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn gradient_noise(&self) -> f64 {
        self.gradient_noise
    }

    /// Number of rounds with a defined loss.
    pub fn horizon(&self) -> usize {
        match &self.kind {
            LossKind::TrackingSquare { targets, .. } => targets.len(),
            LossKind::SyntheticQuadratic { centers } => centers.len(),
            LossKind::SyntheticLinear { coefficients } => coefficients.len(),
        }
    }

    fn check(&self, agent: usize, t: usize, x: &Vector) -> Result<(), ObjectiveError> {
        if agent >= self.n || t >= self.horizon() {
            return Err(ObjectiveError::IndexOutOfRange { agent, t, n: self.n, horizon: self.horizon() });
        }
        if x.len() != self.d {
            return Err(ObjectiveError::Dimension { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    /// `f_{i,t}(x)`.
    pub fn value(&self, agent: usize, t: usize, x: &Vector) -> Result<f64, ObjectiveError> {
        self.check(agent, t, x)?;
        Ok(match &self.kind {
            LossKind::TrackingSquare { observation, targets, .. } => {
                let k = observation.coordinate(agent);
                (targets[t][k] - x[k]).powi(2) + observation.noise_variance()
            }
            LossKind::SyntheticQuadratic { centers } => (x - &centers[t][agent]).norm_squared(),
            LossKind::SyntheticLinear { coefficients } => coefficients[t][agent].dot(x),
        })
    }

    /// Global loss `f_t(x) = (1/n) Σ_i f_{i,t}(x)`.
    pub fn global_value(&self, t: usize, x: &Vector) -> Result<f64, ObjectiveError> {
        let mut total = 0.0;
        for i in 0..self.n {
            total += self.value(i, t, x)?;
        }
        Ok(total / self.n as f64)
    }

    /// Exact `∇f_{i,t}(x)`.
    pub fn gradient(&self, agent: usize, t: usize, x: &Vector) -> Result<Vector, ObjectiveError> {
        self.check(agent, t, x)?;
        Ok(match &self.kind {
            LossKind::TrackingSquare { observation, targets, .. } => {
                let k = observation.coordinate(agent);
                let mut g = Vector::zeros(self.d);
                g[k] = 2.0 * (x[k] - targets[t][k]);
                g
            }
            LossKind::SyntheticQuadratic { centers } => (x - &centers[t][agent]) * 2.0,
            LossKind::SyntheticLinear { coefficients } => coefficients[t][agent].clone(),
        })
    }

    /// `∇f_t(x)`.
    pub fn global_gradient(&self, t: usize, x: &Vector) -> Result<Vector, ObjectiveError> {
        let mut g = Vector::zeros(self.d);
        for i in 0..self.n {
            g += self.gradient(i, t, x)?;
        }
        Ok(g / self.n as f64)
    }

    /// One draw from the stochastic oracle.
    ///
    /// Tracking: draws `w ~ U[-h, h]`, forms `z = x*_t(k) + w` and returns the
    /// direction selected by the [`GradientConvention`]. Synthetic: exact
    /// gradient plus `U[-s, s]^d` noise. Exactly one uniform draw per
    /// coordinate of noise is consumed, whatever the noise width.
    pub fn stochastic_gradient(
        &self,
        agent: usize,
        t: usize,
        x: &Vector,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vector, ObjectiveError> {
        self.check(agent, t, x)?;
        match &self.kind {
            LossKind::TrackingSquare { observation, targets, convention } => {
                let k = observation.coordinate(agent);
                let w = observation.noise_half_width * rng.random_range(-1.0..1.0);
                let innovation = targets[t][k] + w - x[k];
                let scale = match convention {
                    GradientConvention::Literal => 1.0,
                    GradientConvention::True => 2.0,
                };
                let mut g = Vector::zeros(self.d);
                g[k] = -scale * innovation;
                Ok(g)
            }
            _ => {
                let mut g = self.gradient(agent, t, x)?;
                for v in g.iter_mut() {
                    *v += self.gradient_noise * rng.random_range(-1.0..1.0);
                }
                Ok(g)
            }
        }
    }

    /// The declared mean of [`LossEnsemble::stochastic_gradient`]: half the
    /// exact gradient for tracking under the literal convention, the exact
    /// gradient otherwise.
    pub fn expected_stochastic_gradient(&self, agent: usize, t: usize, x: &Vector) -> Result<Vector, ObjectiveError> {
        let g = self.gradient(agent, t, x)?;
        Ok(match &self.kind {
            LossKind::TrackingSquare { convention: GradientConvention::Literal, .. } => g * 0.5,
            _ => g,
        })
    }

    /// Multiplier relating the loss the stochastic oracle is unbiased for to
    /// `f`: 0.5 for tracking under the literal convention, 1 otherwise.
    pub fn oracle_scale(&self) -> f64 {
        match &self.kind {
            LossKind::TrackingSquare { convention: GradientConvention::Literal, .. } => 0.5,
            _ => 1.0,
        }
    }

    /// `argmin_{x ∈ X} f_t(x)` in closed form.
    pub fn per_step_minimizer(&self, t: usize, geom: &MirrorGeometry) -> Result<Vector, ObjectiveError> {
        if t >= self.horizon() {
            return Err(ObjectiveError::IndexOutOfRange { agent: 0, t, n: self.n, horizon: self.horizon() });
        }
        Ok(match &self.kind {
            LossKind::TrackingSquare { targets, .. } => geom.domain().project(&targets[t]),
            LossKind::SyntheticQuadratic { centers } => geom.domain().project(&mean(&centers[t])),
            LossKind::SyntheticLinear { coefficients } => linear_minimizer(&mean(&coefficients[t]), geom.domain()),
        })
    }

    /// `argmin_{x ∈ X} Σ_t f_t(x)` over rounds `0..rounds`, in closed form:
    /// the time-averaged target (tracking), the mean of all centers
    /// (quadratic), or a minimizing vertex of the summed linear term.
    pub fn static_minimizer(&self, rounds: usize, geom: &MirrorGeometry) -> Result<Vector, ObjectiveError> {
        if rounds == 0 || rounds > self.horizon() {
            return Err(ObjectiveError::IndexOutOfRange { agent: 0, t: rounds, n: self.n, horizon: self.horizon() });
        }
        Ok(match &self.kind {
            LossKind::TrackingSquare { targets, .. } => geom.domain().project(&mean(&targets[..rounds])),
            LossKind::SyntheticQuadratic { centers } => {
                let all: Vec<Vector> = centers[..rounds].iter().flatten().cloned().collect();
                geom.domain().project(&mean(&all))
            }
            LossKind::SyntheticLinear { coefficients } => {
                let all: Vec<Vector> = coefficients[..rounds].iter().flatten().cloned().collect();
                linear_minimizer(&mean(&all), geom.domain())
            }
        })
    }
}

fn table_shape(table: &[Vec<Vector>]) -> Result<(usize, usize), ObjectiveError> {
    let n = table.first().map_or(0, Vec::len);
    let d = table.first().and_then(|r| r.first()).map_or(0, Vector::len);
    if table.is_empty() || n == 0 || d == 0 {
        return Err(ObjectiveError::Invalid("empty loss table".into()));
    }
    if table.iter().any(|r| r.len() != n || r.iter().any(|v| v.len() != d)) {
        return Err(ObjectiveError::Invalid("ragged loss table".into()));
    }
    Ok((n, d))
}

fn mean(xs: &[Vector]) -> Vector {
    xs.iter().fold(Vector::zeros(xs[0].len()), |a, x| a + x) / xs.len() as f64
}

/// A minimizer of `⟨g, x⟩` over the domain. Zero coefficients on a box take
/// the midpoint; on the simplex all mass beyond the floor goes to the
/// smallest coefficient.
fn linear_minimizer(g: &Vector, domain: &Domain) -> Vector {
    match domain {
        Domain::Box { lo, hi } => Vector::from_fn(g.len(), |k, _| {
            if g[k] > 0.0 {
                lo[k]
            } else if g[k] < 0.0 {
                hi[k]
            } else {
                0.5 * (lo[k] + hi[k])
            }
        }),
        Domain::Simplex { dim, floor } => {
            let best = g.argmin().0;
            let mut x = Vector::from_element(*dim, *floor);
            x[best] = 1.0 - floor * (*dim as f64 - 1.0);
            x
        }
        Domain::Free { .. } => Vector::zeros(g.len()),
    }
}

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

/// `sup_{x, c ∈ X} ‖x − c‖_*`: the `ℓ2` diameter of a box, `1 − d·floor`
/// (`ℓ∞`) on the floored simplex.
fn dual_diameter(geom: &MirrorGeometry) -> Result<f64, ObjectiveError> {
    match geom.domain() {
        Domain::Box { lo, hi } => Ok((hi - lo).norm()),
        Domain::Simplex { dim, floor } => Ok(1.0 - *dim as f64 * floor),
        Domain::Free { .. } => Err(ObjectiveError::Unbounded),
    }
}

fn observed_range(ens: &LossEnsemble, geom: &MirrorGeometry) -> Result<f64, ObjectiveError> {
    match (&ens.kind, geom.domain()) {
        (LossKind::TrackingSquare { observation, .. }, Domain::Box { lo, hi }) => Ok(observation
            .assignment
            .iter()
            .map(|&k| hi[k] - lo[k])
            .fold(0.0, f64::max)),
        (LossKind::TrackingSquare { .. }, Domain::Free { .. }) => Err(ObjectiveError::Unbounded),
        _ => Err(ObjectiveError::NeedsBox("tracking loss")),
    }
}

/// Uniform bound `L` on `‖∇f_{i,t}‖_*` over the domain: `2 · max observed
/// coordinate range` (tracking), `2 · diameter` (quadratic), `1` (linear).
pub fn lipschitz_bound(ens: &LossEnsemble, geom: &MirrorGeometry) -> Result<f64, ObjectiveError> {
    if !geom.domain().is_bounded() {
        return Err(ObjectiveError::Unbounded);
    }
    match ens.kind {
        LossKind::TrackingSquare { .. } => Ok(2.0 * observed_range(ens, geom)?),
        LossKind::SyntheticQuadratic { .. } => Ok(2.0 * dual_diameter(geom)?),
        LossKind::SyntheticLinear { .. } => Ok(1.0),
    }
}

/// `G` with `‖stochastic gradient‖_* ≤ G` almost surely on the domain, hence
/// `E‖·‖_*² ≤ G²`.
///
/// Tracking: `|z − x(k)| ≤ range + h`, doubled under the true convention.
/// Synthetic: `L` plus the dual norm of the largest noise vector.
pub fn stochastic_gradient_bound(ens: &LossEnsemble, geom: &MirrorGeometry) -> Result<f64, ObjectiveError> {
    match &ens.kind {
        LossKind::TrackingSquare { observation, convention, .. } => {
            let base = observed_range(ens, geom)? + observation.noise_half_width;
            Ok(match convention {
                GradientConvention::Literal => base,
                GradientConvention::True => 2.0 * base,
            })
        }
        _ => {
            let noise = match geom.kind() {
                MirrorKind::Euclidean => ens.gradient_noise * (ens.d as f64).sqrt(),
                MirrorKind::Kl => ens.gradient_noise,
            };
            Ok(lipschitz_bound(ens, geom)? + noise)
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    Quadratic,
    Linear,
}

/// Recipe for a synthetic loss family with a known comparator path.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub horizon: usize,
    /// Dynamics the comparator follows up to mismatch noise.
    pub dynamics: LinearDynamics,
    /// Magnitude of the random per-round mismatch.
    pub jitter: f64,
    /// Deterministic per-round drift added to the comparator.
    pub drift: Option<Vector>,
    /// First comparator state; a random interior point when `None`.
    pub start: Option<Vector>,
    /// Relative size of the per-agent heterogeneity, in `[0, 1]`.
    pub spread: f64,
    /// Scale of linear coefficients, in `[0, 1]`.
    pub scale: f64,
    pub seed: u64,
}

impl SuiteSpec {
    pub fn new(kind: SyntheticKind, n: usize, horizon: usize, dynamics: LinearDynamics, seed: u64) -> Self {
        Self { kind, n, horizon, dynamics, jitter: 0.05, drift: None, start: None, spread: 1.0, scale: 1.0, seed }
    }
}

/// Builds a synthetic ensemble over rounds `0..=horizon` together with its
/// per-round minimizer sequence as a [`MinimizerPath`] under
/// `spec.dynamics`.
///
/// Quadratic: the comparator moves by `A x + drift + jitter·u`, kept inside
/// the inner half of the domain; agent centers are the comparator plus
/// zero-mean offsets, so the global minimizer is exactly their mean.
/// Linear: agent 0 receives `+scale·u_t`, every other agent `−scale·u_t`,
/// for a unit dual-norm direction `u_t` that drifts by `jitter` per round.
pub fn synthetic_suite(spec: &SuiteSpec, geom: &MirrorGeometry) -> Result<(LossEnsemble, MinimizerPath), ObjectiveError> {
    let d = geom.dim();
    if !geom.domain().is_bounded() {
        return Err(ObjectiveError::Unbounded);
    }
    if spec.dynamics.dim() != d {
        return Err(ObjectiveError::Dimension { expected: d, got: spec.dynamics.dim() });
    }
    if spec.n == 0 || spec.horizon == 0 {
        return Err(ObjectiveError::Invalid("need n >= 1 and horizon >= 1".into()));
    }
    let mut rng = seed::stream(spec.seed, seed::Stream::Losses, 0);
    let rounds = spec.horizon + 1;
    let ensemble = match spec.kind {
        SyntheticKind::Quadratic => {
            let inner = InnerRegion::new(geom.domain());
            let mut x = match &spec.start {
                Some(s) => inner.project(s),
                None => inner.project(&geom.domain().sample(&mut rng)),
            };
            let mut centers = Vec::with_capacity(rounds);
            for t in 0..rounds {
                if t > 0 {
                    let mut next = spec.dynamics.apply(&x);
                    if let Some(v) = &spec.drift {
                        next += v;
                    }
                    next += inner.jitter(&mut rng, d) * spec.jitter;
                    x = inner.project(&next);
                }
                let raw: Vec<Vector> = (0..spec.n).map(|_| inner.jitter(&mut rng, d)).collect();
                let avg = mean(&raw);
                centers.push(raw.iter().map(|r| &x + inner.offset(&(r - &avg), spec.spread)).collect());
            }
            LossEnsemble::quadratic(centers, geom)?
        }
        SyntheticKind::Linear => {
            let mut u = unit_direction(&mut rng, geom, None, 1.0);
            let mut coefficients = Vec::with_capacity(rounds);
            for t in 0..rounds {
                if t > 0 {
                    u = unit_direction(&mut rng, geom, Some(&u), spec.jitter);
                }
                let scale = spec.scale.clamp(0.0, 1.0);
                coefficients.push((0..spec.n).map(|i| &u * if i == 0 { scale } else { -scale }).collect());
            }
            LossEnsemble::linear(coefficients, geom)?
        }
    };
    let states = (0..rounds).map(|t| ensemble.per_step_minimizer(t, geom)).collect::<Result<Vec<_>, _>>()?;
    let path = MinimizerPath::from_states(states, &spec.dynamics).map_err(|e| ObjectiveError::Invalid(e.to_string()))?;
    Ok((ensemble, path))
}

/// Random direction with unit dual norm; with `prev`, a step of size
/// `jitter` away from it, renormalized.
fn unit_direction(rng: &mut ChaCha8Rng, geom: &MirrorGeometry, prev: Option<&Vector>, jitter: f64) -> Vector {
    let d = geom.dim();
    let fresh = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let raw = match prev {
        Some(p) => p + fresh * jitter,
        None => fresh,
    };
    let norm = geom.dual_norm(&raw);
    if norm > 0.0 {
        raw / norm
    } else {
        let mut e = Vector::zeros(d);
        e[0] = 1.0;
        e
    }
}

/// The region comparators live in, leaving room for per-agent offsets.
enum InnerRegion {
    /// Box of half the original half-widths around the same center.
    Box { mid: Vector, half: Vector },
    /// Simplex with a raised floor; offsets may use the gap down to `floor`.
    Simplex { floor: f64, inner_floor: f64 },
}

impl InnerRegion {
    fn new(domain: &Domain) -> Self {
        match domain {
            Domain::Box { lo, hi } => Self::Box { mid: (lo + hi) * 0.5, half: (hi - lo) * 0.5 },
            Domain::Simplex { dim, floor } => {
                Self::Simplex { floor: *floor, inner_floor: floor + 0.5 * (1.0 / *dim as f64 - floor) }
            }
            Domain::Free { .. } => unreachable!("bounded domains only"),
        }
    }

    fn project(&self, x: &Vector) -> Vector {
        match self {
            Self::Box { mid, half } => {
                Vector::from_fn(x.len(), |k, _| x[k].clamp(mid[k] - 0.5 * half[k], mid[k] + 0.5 * half[k]))
            }
            Self::Simplex { inner_floor, .. } => {
                let inner = Domain::Simplex { dim: x.len(), floor: *inner_floor };
                inner.project(x)
            }
        }
    }

    /// Zero-sum jitter for the simplex, coordinate-wise `U[-1, 1]` on a box
    /// (scaled by the half-widths).
    fn jitter(&self, rng: &mut ChaCha8Rng, d: usize) -> Vector {
        let u = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        match self {
            Self::Box { half, .. } => u.component_mul(half),
            Self::Simplex { .. } => {
                let m = u.mean();
                u.map(|v| (v - m) / 2.0)
            }
        }
    }

    /// Scales a centered jitter difference so that `comparator + offset`
    /// stays inside the full domain.
    fn offset(&self, r: &Vector, spread: f64) -> Vector {
        let spread = spread.clamp(0.0, 1.0);
        match self {
            // |r_k| <= 2 half_k, so |offset_k| <= half_k / 2.
            Self::Box { .. } => r * (0.25 * spread),
            // |r_k| <= 2 and Σr = 0, so x + offset keeps Σ = 1 and x >= floor.
            Self::Simplex { floor, inner_floor } => r * (0.5 * spread * (inner_floor - floor)),
        }
    }
}
