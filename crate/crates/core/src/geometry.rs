//! Mirror geometries: feasible domains, Bregman divergences, the prox step
//! `argmin_{x ∈ X} η⟨x, g⟩ + D(x, y)`, and checkable forms of the
//! separate-convexity, Lipschitz and non-expansiveness conditions the regret
//! analysis relies on.
//!
//! Two geometries are built in:
//!
//! * **Euclidean**: `R(x) = ½‖x‖²`, `D(x, y) = ½‖x − y‖²`, primal and dual
//!   norm `ℓ2`, on a box or on all of `ℝ^d`.
//! * **KL**: `R(x) = Σ x log x − x`, `D(x, y) = Σ x log(x / y)` on the floored
//!   simplex `{x : Σx = 1, x ≥ floor}`, primal norm `ℓ1`, dual norm `ℓ∞`.
//!   The floor keeps `∇R` bounded, which makes the divergence Lipschitz.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::{seed, Matrix, Vector};

/// Membership slack for points produced by floating-point arithmetic.
pub const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("{kind:?} geometry cannot be paired with a {domain} domain")]
    IncompatibleDomain { kind: MirrorKind, domain: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{what} lies outside the domain")]
    OutsideDomain { what: &'static str },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("geometry constants are unavailable on an unbounded domain")]
    Unavailable,
}

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Axis-aligned box `lo ≤ x ≤ hi`.
    Box { lo: Vector, hi: Vector },
    /// Simplex with every coordinate at least `floor`.
    Simplex { dim: usize, floor: f64 },
    /// All of `ℝ^dim`.
    Free { dim: usize },
}

impl Domain {
    pub fn new_box(lo: Vector, hi: Vector) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(GeometryError::InvalidDomain(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l >= h || !l.is_finite() || !h.is_finite()) {
            return Err(GeometryError::InvalidDomain("box needs finite lo < hi in every coordinate".into()));
        }
        Ok(Self::Box { lo, hi })
    }

    /// `[-bound, bound]^dim`.
    pub fn symmetric_box(dim: usize, bound: f64) -> Result<Self, GeometryError> {
        Self::new_box(Vector::from_element(dim, -bound), Vector::from_element(dim, bound))
    }

    pub fn simplex(dim: usize, floor: f64) -> Result<Self, GeometryError> {
        if dim == 0 || !(floor > 0.0 && floor * (dim as f64) < 1.0) {
            return Err(GeometryError::InvalidDomain(format!(
                "simplex floor must lie in (0, 1/{dim}), got {floor}"
            )));
        }
        Ok(Self::Simplex { dim, floor })
    }

    pub fn free(dim: usize) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidDomain("dimension must be positive".into()));
        }
        Ok(Self::Free { dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } => lo.len(),
            Self::Simplex { dim, .. } | Self::Free { dim } => *dim,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Free { .. })
    }

    fn label(&self) -> &'static str {
        match self {
            Self::Box { .. } => "box",
            Self::Simplex { .. } => "simplex",
            Self::Free { .. } => "free",
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Self::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - DOMAIN_TOL && *v <= h + DOMAIN_TOL),
            Self::Simplex { floor, .. } => {
                (x.sum() - 1.0).abs() <= DOMAIN_TOL && x.iter().all(|&v| v >= floor - DOMAIN_TOL)
            }
            Self::Free { .. } => true,
        }
    }

    /// Uniform sample from the domain; free domains sample `[-1, 1]^d`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            Self::Box { lo, hi } => Vector::from_fn(lo.len(), |i, _| rng.random_range(lo[i]..hi[i])),
            Self::Simplex { dim, floor } => {
                let e = Vector::from_fn(*dim, |_, _| Exp1.sample(rng));
                let p = &e / e.sum();
                p.map(|v| floor + (1.0 - *dim as f64 * floor) * v)
            }
            Self::Free { dim } => Vector::from_fn(*dim, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    /// Nearest feasible point. Boxes clamp; the simplex zeroes negative
    /// entries, renormalizes, then applies the floor rule of
    /// [`floor_project`]. Points already inside are returned unchanged.
    pub fn project(&self, x: &Vector) -> Vector {
        if self.contains(x) {
            return x.clone();
        }
        match self {
            Self::Box { lo, hi } => Vector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i])),
            Self::Simplex { dim, floor } => {
                let z = x.map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
                let z = if z.sum() > 0.0 { z } else { Vector::from_element(*dim, 1.0) };
                floor_project(&z, *floor)
            }
            Self::Free { .. } => x.clone(),
        }
    }
}

/// Maps nonnegative weights `z` (not all zero) onto the floored simplex.
///
/// Coordinates that would fall below `floor` are pinned to it and the
/// remaining mass is shared proportionally to `z` among the others, repeated
/// until no free coordinate is below the floor. The result is
/// `x_i = max(floor, λ z_i)` with `λ` fixing `Σx = 1`; it terminates in at
/// most `d` passes because the largest weight is never pinned.
pub fn floor_project(z: &Vector, floor: f64) -> Vector {
    let d = z.len();
    let mut pinned = vec![false; d];
    let mut x = Vector::zeros(d);
    loop {
        let free_mass: f64 = (0..d).filter(|&i| !pinned[i]).map(|i| z[i]).sum();
        let remaining = 1.0 - floor * pinned.iter().filter(|&&p| p).count() as f64;
        let mut changed = false;
        for i in 0..d {
            if pinned[i] {
                continue;
            }
            x[i] = z[i] * remaining / free_mass;
            if x[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for i in (0..d).filter(|&i| pinned[i]) {
        x[i] = floor;
    }
    x
}

// ---------------------------------------------------------------------------
// Mirror geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MirrorKind {
    Euclidean,
    Kl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorGeometry {
    kind: MirrorKind,
    domain: Domain,
}

/// Sup of the divergence and its Lipschitz constant over a bounded domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConstants {
    /// `R² = sup_{x, y ∈ X} D(x, y)` (an upper bound for KL).
    pub r2: f64,
    /// `K` with `|D(x, z) − D(y, z)| ≤ K‖x − y‖` on the domain.
    pub k: f64,
}

impl MirrorGeometry {
    pub fn new(kind: MirrorKind, domain: Domain) -> Result<Self, GeometryError> {
        match (kind, &domain) {
            (MirrorKind::Euclidean, Domain::Box { .. } | Domain::Free { .. })
            | (MirrorKind::Kl, Domain::Simplex { .. }) => Ok(Self { kind, domain }),
            _ => Err(GeometryError::IncompatibleDomain { kind, domain: domain.label() }),
        }
    }

    pub fn euclidean(domain: Domain) -> Result<Self, GeometryError> {
        Self::new(MirrorKind::Euclidean, domain)
    }

    pub fn kl(dim: usize, floor: f64) -> Result<Self, GeometryError> {
        Self::new(MirrorKind::Kl, Domain::simplex(dim, floor)?)
    }

    pub fn kind(&self) -> MirrorKind {
        self.kind
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Norm in which `R` is 1-strongly convex (`ℓ2` or `ℓ1`).
    pub fn norm(&self, v: &Vector) -> f64 {
        match self.kind {
            MirrorKind::Euclidean => v.norm(),
            MirrorKind::Kl => v.lp_norm(1),
        }
    }

    /// Dual of [`MirrorGeometry::norm`] (`ℓ2` or `ℓ∞`), used for gradients.
    pub fn dual_norm(&self, v: &Vector) -> f64 {
        match self.kind {
            MirrorKind::Euclidean => v.norm(),
            MirrorKind::Kl => v.amax(),
        }
    }

    /// Diameter of the domain in the primal norm; `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match &self.domain {
            Domain::Box { lo, hi } => Some((hi - lo).norm()),
            Domain::Simplex { dim, floor } => Some(2.0 * (1.0 - *dim as f64 * floor)),
            Domain::Free { .. } => None,
        }
    }

    fn check_point(&self, x: &Vector, what: &'static str) -> Result<(), GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::Dimension { expected: self.dim(), got: x.len() });
        }
        if !self.domain.contains(x) {
            return Err(GeometryError::OutsideDomain { what });
        }
        Ok(())
    }

    /// Bregman divergence `D(x, y) = R(x) − R(y) − ⟨x − y, ∇R(y)⟩`.
    pub fn bregman(&self, x: &Vector, y: &Vector) -> Result<f64, GeometryError> {
        self.check_point(x, "first argument")?;
        self.check_point(y, "second argument")?;
        Ok(match self.kind {
            MirrorKind::Euclidean => 0.5 * (x - y).norm_squared(),
            MirrorKind::Kl => x.iter().zip(y.iter()).map(|(a, b)| a * (a / b).ln()).sum(),
        })
    }

    /// Prox step `argmin_{x ∈ X} η⟨x, g⟩ + D(x, y)`.
    ///
    /// Euclidean: clamp of `y − ηg` to the box. KL: exponentiated gradient
    /// `x ∝ y · exp(−ηg)` (computed after subtracting the max log-weight)
    /// followed by [`floor_project`], which is the exact minimizer on the
    /// floored simplex.
    pub fn prox(&self, gradient: &Vector, y: &Vector, eta: f64) -> Result<Vector, GeometryError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(GeometryError::InvalidStep(eta));
        }
        if gradient.len() != self.dim() {
            return Err(GeometryError::Dimension { expected: self.dim(), got: gradient.len() });
        }
        if gradient.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("gradient"));
        }
        self.check_point(y, "prox center")?;
        let out = match &self.domain {
            Domain::Free { .. } => y - gradient * eta,
            Domain::Box { lo, hi } => {
                Vector::from_fn(y.len(), |i, _| (y[i] - eta * gradient[i]).clamp(lo[i], hi[i]))
            }
            Domain::Simplex { floor, .. } => {
                let logits = Vector::from_fn(y.len(), |i, _| y[i].ln() - eta * gradient[i]);
                let top = logits.max();
                floor_project(&logits.map(|l| (l - top).exp()), *floor)
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("prox output"));
        }
        Ok(out)
    }

    /// `R²` and `K` for bounded domains.
    ///
    /// Box: `R² = ½‖hi − lo‖²`, `K = ‖hi − lo‖`. Floored simplex:
    /// `R² = log(1/floor)`, `K = d · log(1/floor)`.
    pub fn constants(&self) -> Result<GeometryConstants, GeometryError> {
        match &self.domain {
            Domain::Box { lo, hi } => {
                let span = hi - lo;
                Ok(GeometryConstants { r2: 0.5 * span.norm_squared(), k: span.norm() })
            }
            Domain::Simplex { dim, floor } => {
                let log_inv = (1.0 / floor).ln();
                Ok(GeometryConstants { r2: log_inv, k: *dim as f64 * log_inv })
            }
            Domain::Free { .. } => Err(GeometryError::Unavailable),
        }
    }
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `lhs − rhs` (negative when every trial holds with room).
    pub max_violation: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples `x`, points `y_1..y_m` and weights `α` on the simplex and checks
/// `D(x, Σ α_i y_i) ≤ Σ α_i D(x, y_i) + 1e-9`.
pub fn check_separate_convexity(geom: &MirrorGeometry, trials: usize, seed: u64) -> CheckReport {
    let mut rng = seed::stream(seed, seed::Stream::Losses, 0x5C);
    let mut report = CheckReport { trials, violations: 0, max_violation: f64::NEG_INFINITY };
    for _ in 0..trials {
        let m = rng.random_range(1..=5);
        let x = geom.domain.sample(&mut rng);
        let ys: Vec<Vector> = (0..m).map(|_| geom.domain.sample(&mut rng)).collect();
        let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|a| a / total).collect();
        let mixed = ys.iter().zip(&alpha).fold(Vector::zeros(geom.dim()), |acc, (y, a)| acc + y * *a);
        let mixed = geom.domain.project(&mixed);
        let lhs = geom.bregman(&x, &mixed).expect("sampled points lie in the domain");
        let rhs: f64 = ys
            .iter()
            .zip(&alpha)
            .map(|(y, a)| a * geom.bregman(&x, y).expect("sampled points lie in the domain"))
            .sum();
        let gap = lhs - rhs;
        report.max_violation = report.max_violation.max(gap);
        if gap > 1e-9 {
            report.violations += 1;
        }
    }
    report
}

/// Non-expansiveness of a linear map under the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct NonexpansiveReport {
    /// Largest singular value of `a`.
    pub sigma_max: f64,
    pub passed: bool,
    /// Monte Carlo details (KL only): pairs whose images stayed in the domain.
    pub pairs_checked: usize,
    pub max_violation: f64,
}

/// Euclidean: `σ_max(a) ≤ 1 + 1e-12`. KL: sampled
/// `D(Ax, Ay) ≤ D(x, y)` on pairs whose images remain in the domain.
pub fn check_nonexpansive(
    geom: &MirrorGeometry,
    a: &Matrix,
    trials: usize,
    seed: u64,
) -> Result<NonexpansiveReport, GeometryError> {
    if a.nrows() != geom.dim() || a.ncols() != geom.dim() {
        return Err(GeometryError::Dimension { expected: geom.dim(), got: a.nrows().max(a.ncols()) });
    }
    let sigma_max = spectral_norm(a);
    match geom.kind {
        MirrorKind::Euclidean => Ok(NonexpansiveReport {
            sigma_max,
            passed: sigma_max <= 1.0 + 1e-12,
            pairs_checked: 0,
            max_violation: sigma_max - 1.0,
        }),
        MirrorKind::Kl => {
            let mut rng = seed::stream(seed, seed::Stream::Losses, 0x4E);
            let mut checked = 0;
            let mut max_violation = f64::NEG_INFINITY;
            let mut passed = true;
            for _ in 0..trials {
                let x = geom.domain.sample(&mut rng);
                let y = geom.domain.sample(&mut rng);
                let (ax, ay) = (a * &x, a * &y);
                if !(geom.domain.contains(&ax) && geom.domain.contains(&ay)) {
                    continue;
                }
                checked += 1;
                let gap = geom.bregman(&ax, &ay)? - geom.bregman(&x, &y)?;
                max_violation = max_violation.max(gap);
                if gap > 1e-12 {
                    passed = false;
                }
            }
            Ok(NonexpansiveReport { sigma_max, passed, pairs_checked: checked, max_violation })
        }
    }
}

/// Largest singular value of a square matrix.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}
