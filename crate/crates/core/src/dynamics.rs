//! Comparator dynamics `x*_{t+1} = A x*_t + v_t`, the near-constant-velocity
//! target model, mismatch-noise generation, and the path variation
//! `C_T = Σ_t ‖x*_{t+1} − A x*_t‖`.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::csvio::{self, Csv};
use crate::geometry::spectral_norm;
use crate::{seed, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dynamics matrix must be square with finite entries")]
    InvalidMatrix,
    #[error("{what} must be {requirement}, got {value}")]
    Parameter { what: &'static str, requirement: &'static str, value: f64 },
    #[error("dimension mismatch: dynamics is {expected}-dimensional, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("gaussian NCV noise requires the 4-dimensional NCV dynamics")]
    NoiseModelMismatch,
    #[error("custom noise sequence has {got} entries, horizon needs {needed}")]
    ShortNoise { needed: usize, got: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("path needs at least two states")]
    ShortPath,
    #[error("path CSV: {0}")]
    Csv(String),
}

// ---------------------------------------------------------------------------
// Linear dynamics
// ---------------------------------------------------------------------------

/// Known linear dynamics `A`, with its spectral norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    a: Matrix,
    spectral_norm: f64,
}

impl LinearDynamics {
    pub fn new(a: Matrix) -> Result<Self, DynamicsError> {
        if a.nrows() == 0 || a.nrows() != a.ncols() || a.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidMatrix);
        }
        let spectral_norm = spectral_norm(&a);
        Ok(Self { a, spectral_norm })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(Matrix::identity(dim, dim)).expect("identity is valid")
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self, DynamicsError> {
        Self::new(Matrix::identity(dim, dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.a * x
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    /// Euclidean non-expansiveness verdict, `σ_max(A) ≤ 1 + 1e-12`.
    pub fn is_nonexpansive(&self) -> bool {
        self.spectral_norm <= 1.0 + 1e-12
    }
}

/// `A = I₂ ⊗ [[1, ε], [0, 1]]`, state order (horizontal position, horizontal
/// velocity, vertical position, vertical velocity).
pub fn ncv_dynamics(eps: f64) -> Result<LinearDynamics, DynamicsError> {
    positive("eps", eps)?;
    let mut a = Matrix::identity(4, 4);
    a[(0, 1)] = eps;
    a[(2, 3)] = eps;
    LinearDynamics::new(a)
}

/// `Σ = σ_v² · I₂ ⊗ [[ε³/3, ε²/2], [ε²/2, ε]]`.
pub fn ncv_noise_covariance(eps: f64, sigma_v2: f64) -> Result<Matrix, DynamicsError> {
    positive("eps", eps)?;
    nonnegative("sigma_v2", sigma_v2)?;
    let block = [eps.powi(3) / 3.0, eps * eps / 2.0, eps * eps / 2.0, eps];
    Ok(block_diag(&block, sigma_v2))
}

/// Lower Cholesky factor `L` of the NCV covariance, per 2×2 block in closed
/// form: `[[√a, 0], [b/√a, √(c − b²/a)]]` for the block `[[a, b], [b, c]]`.
pub fn ncv_noise_factor(eps: f64, sigma_v2: f64) -> Result<Matrix, DynamicsError> {
    positive("eps", eps)?;
    nonnegative("sigma_v2", sigma_v2)?;
    let (a, b, c) = (eps.powi(3) / 3.0, eps * eps / 2.0, eps);
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    Ok(block_diag(&[l11, 0.0, l21, l22], sigma_v2.sqrt()))
}

fn block_diag(block: &[f64; 4], scale: f64) -> Matrix {
    let mut m = Matrix::zeros(4, 4);
    for off in [0, 2] {
        m[(off, off)] = scale * block[0];
        m[(off, off + 1)] = scale * block[1];
        m[(off + 1, off)] = scale * block[2];
        m[(off + 1, off + 1)] = scale * block[3];
    }
    m
}

fn positive(what: &'static str, value: f64) -> Result<(), DynamicsError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::Parameter { what, requirement: "positive", value })
    }
}

fn nonnegative(what: &'static str, value: f64) -> Result<(), DynamicsError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::Parameter { what, requirement: "nonnegative", value })
    }
}

// ---------------------------------------------------------------------------
// Noise and paths
// ---------------------------------------------------------------------------

/// How the mismatch noise `v_t` is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Zero,
    /// `v_t = L ξ_t` with `L Lᵀ` the NCV covariance and `ξ_t ~ N(0, I₄)`.
    GaussianNcv { eps: f64, sigma_v2: f64, seed: u64 },
    /// The same `v` every step.
    ConstantDrift(Vector),
    /// An explicit, possibly adversarial, sequence.
    Custom(Vec<Vector>),
}

/// Comparator sequence `x*_1 … x*_{T+1}` and the noise `v_1 … v_T` that
/// links consecutive states. Index `t` of `states` holds `x*_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerPath {
    pub states: Vec<Vector>,
    pub noise: Vec<Vector>,
}

impl MinimizerPath {
    /// Derives the noise from a given state sequence: `v_t = x*_{t+1} − A x*_t`.
    pub fn from_states(states: Vec<Vector>, dyn_: &LinearDynamics) -> Result<Self, DynamicsError> {
        if states.len() < 2 {
            return Err(DynamicsError::ShortPath);
        }
        check_dims(&states, dyn_.dim())?;
        let noise = states.windows(2).map(|w| &w[1] - dyn_.apply(&w[0])).collect();
        Ok(Self { states, noise })
    }

    /// Horizon `T` (number of noise terms).
    pub fn horizon(&self) -> usize {
        self.noise.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vector::len)
    }

    /// Largest `‖x*_{t+1} − (A x*_t + v_t)‖_∞` over the path.
    pub fn reconstruction_error(&self, dyn_: &LinearDynamics) -> f64 {
        self.states
            .windows(2)
            .zip(&self.noise)
            .map(|(w, v)| (&w[1] - dyn_.apply(&w[0]) - v).amax())
            .fold(0.0, f64::max)
    }

    /// Planar distance travelled by the position coordinates `positions`.
    pub fn path_length(&self, positions: &[usize]) -> f64 {
        self.states
            .windows(2)
            .map(|w| positions.iter().map(|&k| (w[1][k] - w[0][k]).powi(2)).sum::<f64>().sqrt())
            .sum()
    }

    /// CSV with columns `t, x1..xd, v1..vd`; the final state has empty `v`.
    pub fn to_csv(&self, comment: Option<&str>) -> Csv {
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("x{k}")));
        header.extend((1..=d).map(|k| format!("v{k}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = Csv::new(comment, &header);
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(x.iter().map(|&v| csvio::fmt_float(v)));
            match self.noise.get(t) {
                Some(v) => row.extend(v.iter().map(|&e| csvio::fmt_float(e))),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            csv.row(&row);
        }
        csv
    }

    pub fn from_csv(text: &str) -> Result<Self, DynamicsError> {
        let (header, rows) = csvio::parse(text).ok_or_else(|| DynamicsError::Csv("empty document".into()))?;
        if header.first().map(String::as_str) != Some("t") || header.len() < 3 || header.len() % 2 == 0 {
            return Err(DynamicsError::Csv("header must be t, x1..xd, v1..vd".into()));
        }
        let d = (header.len() - 1) / 2;
        let num = |s: &str, line: usize| {
            s.parse::<f64>().map_err(|e| DynamicsError::Csv(format!("row {line}: {e}")))
        };
        let mut states = Vec::with_capacity(rows.len());
        let mut noise = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(DynamicsError::Csv(format!("row {} has {} fields", r + 1, row.len())));
            }
            let x: Vec<f64> = row[1..=d].iter().map(|s| num(s, r + 1)).collect::<Result<_, _>>()?;
            states.push(Vector::from_vec(x));
            if r + 1 < rows.len() {
                let v: Vec<f64> = row[d + 1..].iter().map(|s| num(s, r + 1)).collect::<Result<_, _>>()?;
                noise.push(Vector::from_vec(v));
            }
        }
        if states.len() < 2 {
            return Err(DynamicsError::ShortPath);
        }
        Ok(Self { states, noise })
    }
}

fn check_dims(xs: &[Vector], d: usize) -> Result<(), DynamicsError> {
    match xs.iter().find(|x| x.len() != d) {
        Some(x) => Err(DynamicsError::Dimension { expected: d, got: x.len() }),
        None => Ok(()),
    }
}

/// Rolls the dynamics forward from `x0` for `horizon` steps.
pub fn generate_path(
    dyn_: &LinearDynamics,
    noise: &NoiseModel,
    x0: &Vector,
    horizon: usize,
) -> Result<MinimizerPath, DynamicsError> {
    if horizon == 0 {
        return Err(DynamicsError::EmptyHorizon);
    }
    let d = dyn_.dim();
    check_dims(std::slice::from_ref(x0), d)?;
    let draws: Vec<Vector> = match noise {
        NoiseModel::Zero => vec![Vector::zeros(d); horizon],
        NoiseModel::GaussianNcv { eps, sigma_v2, seed } => {
            if d != 4 || dyn_.matrix() != ncv_dynamics(*eps)?.matrix() {
                return Err(DynamicsError::NoiseModelMismatch);
            }
            let factor = ncv_noise_factor(*eps, *sigma_v2)?;
            let mut rng = seed::stream(*seed, seed::Stream::PathNoise, 0);
            (0..horizon)
                .map(|_| {
                    let xi = Vector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
                    &factor * xi
                })
                .collect()
        }
        NoiseModel::ConstantDrift(v) => {
            check_dims(std::slice::from_ref(v), d)?;
            vec![v.clone(); horizon]
        }
        NoiseModel::Custom(seq) => {
            if seq.len() < horizon {
                return Err(DynamicsError::ShortNoise { needed: horizon, got: seq.len() });
            }
            check_dims(&seq[..horizon], d)?;
            seq[..horizon].to_vec()
        }
    };
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for v in &draws {
        let next = dyn_.apply(states.last().expect("nonempty")) + v;
        states.push(next);
    }
    Ok(MinimizerPath { states, noise: draws })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathNorm {
    L2,
    L1,
}

/// `C_T = Σ_t ‖x*_{t+1} − A x*_t‖`, recomputed from the states.
pub fn path_variation(path: &MinimizerPath, dyn_: &LinearDynamics, norm: PathNorm) -> Result<f64, DynamicsError> {
    if path.states.len() < 2 {
        return Err(DynamicsError::ShortPath);
    }
    check_dims(&path.states, dyn_.dim())?;
    Ok(path
        .states
        .windows(2)
        .map(|w| {
            let r = &w[1] - dyn_.apply(&w[0]);
            match norm {
                PathNorm::L2 => r.norm(),
                PathNorm::L1 => r.lp_norm(1),
            }
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn ncv_matrix() {
        let a = ncv_dynamics(0.1).unwrap();
        let expected = Matrix::from_row_slice(
            4,
            4,
            &[1.0, 0.1, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(a.matrix(), &expected);
        for eps in [0.01, 0.1, 3.0] {
            assert!((ncv_dynamics(eps).unwrap().matrix().determinant() - 1.0).abs() < 1e-12);
        }
        let sigma = ((2.01 + 0.0401f64.sqrt()) / 2.0).sqrt();
        assert!((a.spectral_norm() - sigma).abs() < 1e-12);
        assert!(!a.is_nonexpansive());
        assert!(ncv_dynamics(0.0).is_err());
    }

    #[test]
    fn ncv_covariance_and_factor() {
        let s = ncv_noise_covariance(0.1, 1.0).unwrap();
        for off in [0, 2] {
            assert!((s[(off, off)] - 1.0 / 3000.0).abs() < 1e-15);
            assert!((s[(off, off + 1)] - 1.0 / 200.0).abs() < 1e-15);
            assert!((s[(off + 1, off)] - 1.0 / 200.0).abs() < 1e-15);
            assert!((s[(off + 1, off + 1)] - 0.1).abs() < 1e-15);
        }
        assert_eq!(s[(0, 2)], 0.0);
        assert_eq!(ncv_noise_covariance(0.1, 0.0).unwrap(), Matrix::zeros(4, 4));
        for (eps, s2) in [(0.1, 1.0), (0.5, 0.3), (2.0, 4.0), (0.1, 0.0)] {
            let l = ncv_noise_factor(eps, s2).unwrap();
            let sigma = ncv_noise_covariance(eps, s2).unwrap();
            assert!((&l * l.transpose() - &sigma).amax() < 1e-14);
            assert!(nalgebra::Cholesky::new(sigma + Matrix::identity(4, 4) * 1e-15).is_some());
        }
        assert!(ncv_noise_covariance(0.1, -1.0).is_err());
    }

    #[test]
    fn zero_noise_paths() {
        let c = v(&[0.3, -2.0]);
        let p = generate_path(&LinearDynamics::identity(2), &NoiseModel::Zero, &c, 5).unwrap();
        assert_eq!(p.states.len(), 6);
        assert!(p.states.iter().all(|s| s == &c));

        let ncv = ncv_dynamics(0.1).unwrap();
        let p = generate_path(&ncv, &NoiseModel::Zero, &v(&[0.0, 1.0, 0.0, 1.0]), 50).unwrap();
        for (k, s) in p.states.iter().enumerate() {
            assert!((s[0] - 0.1 * k as f64).abs() < 1e-12);
            assert!((s[2] - 0.1 * k as f64).abs() < 1e-12);
        }
        assert_eq!(path_variation(&p, &ncv, PathNorm::L2).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_paths_are_deterministic() {
        let ncv = ncv_dynamics(0.1).unwrap();
        let noise = NoiseModel::GaussianNcv { eps: 0.1, sigma_v2: 0.5, seed: 11 };
        let x0 = v(&[0.0, 1.0, 0.0, 1.0]);
        let a = generate_path(&ncv, &noise, &x0, 200).unwrap();
        let b = generate_path(&ncv, &noise, &x0, 200).unwrap();
        assert_eq!(a.to_csv(None).as_str(), b.to_csv(None).as_str());
        assert!(a.reconstruction_error(&ncv) <= 1e-12);
        let direct: f64 = a.noise.iter().map(|n| n.norm()).sum();
        assert!((path_variation(&a, &ncv, PathNorm::L2).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn gaussian_noise_requires_ncv() {
        let noise = NoiseModel::GaussianNcv { eps: 0.1, sigma_v2: 0.5, seed: 1 };
        let r = generate_path(&LinearDynamics::identity(4), &noise, &Vector::zeros(4), 3);
        assert_eq!(r, Err(DynamicsError::NoiseModelMismatch));
        let r = generate_path(&LinearDynamics::identity(2), &noise, &Vector::zeros(2), 3);
        assert_eq!(r, Err(DynamicsError::NoiseModelMismatch));
    }

    #[test]
    fn constant_drift_variation() {
        let ncv = ncv_dynamics(0.1).unwrap();
        let drift = NoiseModel::ConstantDrift(v(&[0.1, 0.0, 0.0, 0.0]));
        let p = generate_path(&ncv, &drift, &v(&[0.0, 1.0, 0.0, 1.0]), 100).unwrap();
        assert!((path_variation(&p, &ncv, PathNorm::L2).unwrap() - 10.0).abs() < 1e-9);
        assert!((path_variation(&p, &ncv, PathNorm::L1).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn custom_noise_and_errors() {
        let id = LinearDynamics::identity(1);
        let seq = vec![v(&[1.0]), v(&[-2.0]), v(&[0.5])];
        let p = generate_path(&id, &NoiseModel::Custom(seq.clone()), &v(&[0.0]), 3).unwrap();
        assert_eq!(p.states.last().unwrap()[0], -0.5);
        assert_eq!(path_variation(&p, &id, PathNorm::L1).unwrap(), 3.5);
        assert!(matches!(
            generate_path(&id, &NoiseModel::Custom(seq), &v(&[0.0]), 4),
            Err(DynamicsError::ShortNoise { .. })
        ));
        assert_eq!(generate_path(&id, &NoiseModel::Zero, &v(&[0.0]), 0), Err(DynamicsError::EmptyHorizon));
        let short = MinimizerPath { states: vec![v(&[0.0])], noise: vec![] };
        assert_eq!(path_variation(&short, &id, PathNorm::L2), Err(DynamicsError::ShortPath));
    }

    #[test]
    fn csv_round_trip() {
        let ncv = ncv_dynamics(0.1).unwrap();
        let noise = NoiseModel::GaussianNcv { eps: 0.1, sigma_v2: 1.0, seed: 3 };
        let p = generate_path(&ncv, &noise, &v(&[0.0, 1.0, 0.0, 1.0]), 20).unwrap();
        let csv = p.to_csv(Some("config_hash=x"));
        assert!(csv.as_str().lines().nth(1).unwrap().starts_with("t,x1,x2,x3,x4,v1"));
        let back = MinimizerPath::from_csv(csv.as_str()).unwrap();
        assert_eq!(back, p);
        assert!(MinimizerPath::from_csv("t,x1\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn noise_scales_with_sqrt_of_variance(s in any::<u64>(), c in 0.01f64..10.0) {
            let ncv = ncv_dynamics(0.1).unwrap();
            let x0 = Vector::zeros(4);
            let base = generate_path(&ncv, &NoiseModel::GaussianNcv { eps: 0.1, sigma_v2: 0.5, seed: s }, &x0, 30).unwrap();
            let scaled = generate_path(&ncv, &NoiseModel::GaussianNcv { eps: 0.1, sigma_v2: 0.5 * c, seed: s }, &x0, 30).unwrap();
            for (a, b) in base.noise.iter().zip(&scaled.noise) {
                prop_assert!((a * c.sqrt() - b).amax() <= 1e-12 * (1.0 + b.amax()));
            }
        }

        #[test]
        fn reconstruction_identity(s in any::<u64>(), scale in 0.0f64..1.5, t in 1usize..60) {
            let a = LinearDynamics::new(Matrix::from_fn(3, 3, |i, j| scale * ((i * 3 + j) as f64).sin())).unwrap();
            let seq: Vec<Vector> = (0..t).map(|k| Vector::from_fn(3, |i, _| ((s % 97) as f64 + (k * 3 + i) as f64).cos())).collect();
            let p = generate_path(&a, &NoiseModel::Custom(seq), &Vector::from_element(3, 0.5), t).unwrap();
            prop_assert!(p.reconstruction_error(&a) <= 1e-12);
        }
    }
}
