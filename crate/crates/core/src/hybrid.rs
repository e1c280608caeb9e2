//! Hybrid analog/digital realization of target beamformers.
//!
//! The analog network `F_A` is N x N_RF with every entry of modulus 1/sqrt(N);
//! the digital precoder `F_D` is N_RF x K.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::ArrayGeometry;
use crate::wavefront::Codeword;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Condition number above which ZF is refused unless ridge is enabled.
pub const MAX_CONDITION: f64 = 1e6;
/// Default alternating-minimization iteration count.
pub const ALTMIN_ITERS: usize = 50;
/// Default dictionary oversampling.
pub const DICTIONARY_OVERSAMPLING: usize = 2;

/// Oversampled far-field dictionary; column g steers to
/// `sin(theta) = -1 + 2 g / G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftDictionary {
    pub d: CMatrix,
    pub sines: Vec<f64>,
}

impl DftDictionary {
    pub fn new(geometry: &ArrayGeometry, wavelength: f64, oversampling: usize) -> Result<Self> {
        if oversampling == 0 {
            return Err(Error::InvalidArgument("dictionary oversampling must be >= 1".into()));
        }
        let n = geometry.num_elements();
        let g = oversampling * n;
        let sines: Vec<f64> = (0..g).map(|i| -1.0 + 2.0 * i as f64 / g as f64).collect();
        let amp = 1.0 / (n as f64).sqrt();
        let k = 2.0 * std::f64::consts::PI / wavelength;
        let positions: Vec<f64> = geometry.positions().collect();
        let d = CMatrix::from_fn(n, g, |row, col| Complex64::from_polar(amp, -k * positions[row] * sines[col]));
        Ok(Self { d, sines })
    }

    pub fn num_atoms(&self) -> usize {
        self.d.ncols()
    }

    pub fn atom(&self, g: usize) -> CVector {
        self.d.column(g).into_owned()
    }
}

/// Least-squares solve of `A x = b` through the normal equations, with a
/// `1e-12 * trace` diagonal floor when the Gram matrix is near-singular.
/// Returns the solution and whether the floor was applied.
pub fn least_squares(a: &CMatrix, b: &CVector) -> (CVector, bool) {
    let mut gram = a.adjoint() * a;
    let rhs = a.adjoint() * b;
    let trace: f64 = gram.diagonal().iter().map(|c| c.re).sum();
    let floor = 1e-12 * trace;
    let min_sv = gram.singular_values().min();
    let regularized = min_sv < floor;
    if regularized {
        for i in 0..gram.nrows() {
            gram[(i, i)] += floor;
        }
    }
    let x = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, floor.max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| CVector::zeros(a.ncols())),
    };
    (x, regularized)
}

/// Orthogonal matching pursuit realization of a single codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub f_a: CMatrix,
    /// Normalized so that `||F_A f_D||^2 = P`.
    pub f_d: CVector,
    pub atoms: Vec<usize>,
    /// Residual norms `||r_t||` for t = 0..=N_RF, before normalization.
    pub residuals: Vec<f64>,
    /// True when any least-squares solve needed the regularization floor.
    pub regularized: bool,
}

impl OmpResult {
    /// The realized codeword `F_A f_D`.
    pub fn realized(&self) -> CVector {
        &self.f_a * &self.f_d
    }
}

pub fn omp_codeword(target: &Codeword, dict: &DftDictionary, n_rf: usize, power: f64) -> Result<OmpResult> {
    omp_vector(&target.w, dict, n_rf, power)
}

/// OMP on a raw target vector.
pub fn omp_vector(target: &CVector, dict: &DftDictionary, n_rf: usize, power: f64) -> Result<OmpResult> {
    if n_rf == 0 {
        return Err(Error::InvalidArgument("N_RF must be >= 1".into()));
    }
    if dict.num_atoms() < n_rf {
        return Err(Error::InvalidArgument(format!(
            "dictionary has {} atoms, fewer than N_RF = {n_rf}",
            dict.num_atoms()
        )));
    }
    if target.len() != dict.d.nrows() {
        return Err(Error::InvalidArgument(format!(
            "target has {} entries, dictionary rows {}",
            target.len(),
            dict.d.nrows()
        )));
    }
    let n = target.len();
    let mut atoms: Vec<usize> = Vec::with_capacity(n_rf);
    let mut f_a = CMatrix::zeros(n, 0);
    let mut f_d = CVector::zeros(0);
    let mut residual = target.clone();
    let mut residuals = vec![residual.norm()];
    let mut regularized = false;
    for _ in 0..n_rf {
        let corr = dict.d.adjoint() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for (g, c) in corr.iter().enumerate() {
            if atoms.contains(&g) {
                continue;
            }
            let v = c.norm();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let (g, _) = best.expect("dictionary has more atoms than N_RF");
        atoms.push(g);
        let cols: Vec<_> = atoms.iter().map(|&a| dict.d.column(a)).collect();
        f_a = CMatrix::from_columns(&cols);
        let (x, reg) = least_squares(&f_a, target);
        regularized |= reg;
        f_d = x;
        residual = target - &f_a * &f_d;
        residuals.push(residual.norm());
    }
    let realized_norm = (&f_a * &f_d).norm();
    if !(realized_norm > 0.0 && realized_norm.is_finite()) {
        return Err(Error::DegenerateCodeword);
    }
    f_d *= Complex64::new(power.sqrt() / realized_norm, 0.0);
    Ok(OmpResult {
        f_a,
        f_d,
        atoms,
        residuals,
        regularized,
    })
}

/// Project onto the constant-modulus set: `(1/sqrt(N)) exp(j arg M)`.
/// Zero entries take phase 0.
pub fn phase_project(m: &CMatrix) -> CMatrix {
    let amp = 1.0 / (m.nrows() as f64).sqrt();
    m.map(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            Complex64::new(amp, 0.0)
        } else {
            Complex64::from_polar(amp, c.im.atan2(c.re))
        }
    })
}

/// Random constant-modulus analog matrix.
pub fn random_analog(n: usize, n_rf: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = 1.0 / (n as f64).sqrt();
    let tau = 2.0 * std::f64::consts::PI;
    let phases: Vec<f64> = (0..n * n_rf).map(|_| rng.random::<f64>() * tau).collect();
    CMatrix::from_fn(n, n_rf, |r, c| Complex64::from_polar(amp, phases[c * n + r]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltMinResult {
    pub f_a: CMatrix,
    /// Semi-unitary N_RF x K digital factor from the last iteration.
    pub f_d_temp: CMatrix,
    /// `||F_T' - F_A F_D,temp||_F^2` after each iteration, where `F_T'` is
    /// the target rescaled to `||F_T'||_F^2 = K`.
    pub objective: Vec<f64>,
    /// Factor applied to the target before iterating.
    pub target_scale: f64,
}

impl AltMinResult {
    /// Final objective relative to `||F_T'||_F^2`.
    pub fn relative_error(&self) -> f64 {
        let k = self.f_d_temp.ncols() as f64;
        self.objective.last().copied().unwrap_or(f64::NAN) / k
    }
}

fn procrustes(f_t: &CMatrix, f_a: &CMatrix) -> CMatrix {
    let k = f_t.ncols();
    let svd = (f_t.adjoint() * f_a).svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let v1 = v_t.rows(0, k).adjoint();
    v1 * u.adjoint()
}

/// Alternating minimization of `||F_T - F_A F_D||_F` over constant-modulus
/// `F_A` and semi-unitary `F_D`.
pub fn altmin_analog(f_t: &CMatrix, n_rf: usize, iters: usize, seed: u64) -> Result<AltMinResult> {
    let (n, k) = f_t.shape();
    if k == 0 || n_rf < k {
        return Err(Error::InvalidArgument(format!("alternating minimization needs N_RF >= K >= 1, got N_RF = {n_rf}, K = {k}")));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("alternating minimization needs at least one iteration".into()));
    }
    let norm2 = f_t.norm_squared();
    if !(norm2 > 0.0 && norm2.is_finite()) {
        return Err(Error::ZeroChannel);
    }
    let target_scale = (k as f64 / norm2).sqrt();
    let target = f_t * Complex64::new(target_scale, 0.0);
    let mut f_a = random_analog(n, n_rf, seed);
    let mut f_d = procrustes(&target, &f_a);
    let mut objective = Vec::with_capacity(iters);
    for _ in 0..iters {
        f_d = procrustes(&target, &f_a);
        f_a = phase_project(&(&target * f_d.adjoint()));
        objective.push((&target - &f_a * &f_d).norm_squared());
    }
    Ok(AltMinResult {
        f_a,
        f_d_temp: f_d,
        objective,
        target_scale,
    })
}

/// `H_eq = H^H F_A`, K x N_RF.
pub fn effective_channel(h: &CMatrix, f_a: &CMatrix) -> Result<CMatrix> {
    if h.nrows() != f_a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "channel has {} rows, analog beamformer {}",
            h.nrows(),
            f_a.nrows()
        )));
    }
    Ok(h.adjoint() * f_a)
}

/// Ratio of largest to smallest singular value (infinite if rank deficient).
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min > 0.0 { max / min } else { f64::INFINITY }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfResult {
    /// Power-allocated digital precoder.
    pub f_d: CMatrix,
    /// Diagonal of `Lambda`.
    pub lambda: Vec<f64>,
    pub condition: f64,
    pub ridge: Option<f64>,
}

/// Zero-forcing digital precoder `F_D = H_eq^H (H_eq H_eq^H)^{-1} Lambda`
/// with equal effective power per user. The right pseudo-inverse is formed
/// from the SVD `H_eq = U S V^H` as `V S^{-1} U^H`; with ridge `lambda` each
/// `1/s` becomes `s / (s^2 + lambda)`.
pub fn zf_digital(h_eq: &CMatrix, power: f64, f_a: &CMatrix, allow_ridge: bool) -> Result<ZfResult> {
    let k = h_eq.nrows();
    if k == 0 {
        return Ok(ZfResult {
            f_d: CMatrix::zeros(h_eq.ncols(), 0),
            lambda: vec![],
            condition: 1.0,
            ridge: None,
        });
    }
    if h_eq.ncols() < k {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let svd = h_eq.clone().svd(true, true);
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::RankDeficient { cond: f64::INFINITY }),
    };
    let sv = &svd.singular_values;
    let (s_max, s_min) = (sv.max(), sv.min());
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    let mut ridge = None;
    if !(condition <= MAX_CONDITION) {
        if !allow_ridge || s_max == 0.0 {
            return Err(Error::RankDeficient { cond: condition });
        }
        ridge = Some(1e-6 * h_eq.norm_squared() / k as f64);
    }
    let lam = ridge.unwrap_or(0.0);
    let inv: Vec<Complex64> = sv.iter().map(|&s| Complex64::from(if s > 0.0 { s / (s * s + lam) } else { 0.0 })).collect();
    let mut v_scaled = v_t.adjoint();
    for (j, &w) in inv.iter().enumerate() {
        let mut col = v_scaled.column_mut(j);
        col *= w;
    }
    let unscaled = v_scaled * u.adjoint();
    let (f_d, lambda) = power_allocate(f_a, &unscaled, power)?;
    Ok(ZfResult {
        f_d,
        lambda,
        condition,
        ridge,
    })
}

/// Scale column k of `F_D` by `beta_k = sqrt(P/K) / ||F_A f_k||`, giving
/// `||F_A F_D||_F^2 = P` with equal effective power per user.
pub fn power_allocate(f_a: &CMatrix, f_d: &CMatrix, power: f64) -> Result<(CMatrix, Vec<f64>)> {
    let k = f_d.ncols();
    let composite = f_a * f_d;
    let mut scaled = f_d.clone();
    let mut betas = Vec::with_capacity(k);
    for j in 0..k {
        let norm = composite.column(j).norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroColumn(j));
        }
        let beta = (power / k as f64).sqrt() / norm;
        scaled.column_mut(j).scale_mut(beta);
        betas.push(beta);
    }
    Ok((scaled, betas))
}

/// Final hybrid precoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridBeamformer {
    #[serde(skip)]
    pub f_a: CMatrix,
    #[serde(skip)]
    pub f_d: CMatrix,
    pub power: f64,
    pub scene_hash: String,
    pub grid_hash: String,
}

impl HybridBeamformer {
    pub fn num_elements(&self) -> usize {
        self.f_a.nrows()
    }

    pub fn num_rf(&self) -> usize {
        self.f_a.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.f_d.ncols()
    }

    pub fn composite(&self) -> CMatrix {
        &self.f_a * &self.f_d
    }

    /// Text export: sizes, provenance, analog phases, digital entries.
    pub fn export(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# hybrid-beamformer v1").unwrap();
        writeln!(out, "N {}", self.num_elements()).unwrap();
        writeln!(out, "N_RF {}", self.num_rf()).unwrap();
        writeln!(out, "K {}", self.num_users()).unwrap();
        writeln!(out, "P {:.17e}", self.power).unwrap();
        writeln!(out, "scene_hash {}", self.scene_hash).unwrap();
        writeln!(out, "grid_hash {}", self.grid_hash).unwrap();
        writeln!(out, "[analog_phase_rad]").unwrap();
        for r in 0..self.num_elements() {
            let row: Vec<String> = (0..self.num_rf()).map(|c| format!("{:.15e}", self.f_a[(r, c)].arg())).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        writeln!(out, "[digital]").unwrap();
        for r in 0..self.num_rf() {
            let row: Vec<String> = (0..self.num_users())
                .map(|c| format!("{:.15e} {:.15e}", self.f_d[(r, c)].re, self.f_d[(r, c)].im))
                .collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }
}
