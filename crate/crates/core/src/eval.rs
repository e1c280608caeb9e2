//! Achievable rates, gain bounds and end-to-end beamforming pipelines.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{
    altmin_analog, effective_channel, zf_digital, AltMinResult, CMatrix, CVector, HybridBeamformer, ALTMIN_ITERS,
};
use crate::propagation::ChannelMatrix;
pub use crate::propagation::GainMap;
use crate::scene::ArrayGeometry;
use crate::training::{
    exhaustive_search, hierarchical_search, BeamSelection, Realization, TrainingConfig, TrainingMode,
};
use crate::wavefront::{build_codebook, CodebookKind, CodebookSampling, CodebookSpec, Codeword, CodewordKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRate {
    pub user: usize,
    pub rate: f64,
    pub signal: f64,
    pub interference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub scheme: String,
    pub power: f64,
    pub sigma2: f64,
    pub users: Vec<UserRate>,
    pub sum_rate: f64,
    pub scenario_hash: String,
}

impl RateReport {
    pub const CSV_HEADER: &'static str = "scheme,K,P,sigma2,user,rate_bps_hz,signal_w,interference_w";

    /// CSV rows without header: one per user, then a `sum` row.
    pub fn csv_rows(&self) -> String {
        let k = self.users.len();
        let mut out = String::new();
        for u in &self.users {
            writeln!(
                out,
                "{},{k},{:.6e},{:.6e},{},{:.9},{:.9e},{:.9e}",
                self.scheme, self.power, self.sigma2, u.user, u.rate, u.signal, u.interference
            )
            .unwrap();
        }
        writeln!(out, "{},{k},{:.6e},{:.6e},sum,{:.9},,", self.scheme, self.power, self.sigma2, self.sum_rate).unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    /// Largest interference-to-signal ratio over users (linear).
    pub fn max_interference_ratio(&self) -> f64 {
        self.users
            .iter()
            .map(|u| if u.signal > 0.0 { u.interference / u.signal } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Signal and interference power at user k for precoder `F_A F_D`.
pub fn rate_terms(k: usize, h: &CMatrix, f_a: &CMatrix, f_d: &CMatrix) -> (f64, f64) {
    let row = h.column(k).adjoint() * f_a * f_d;
    let signal = row[(0, k)].norm_sqr();
    let interference = (0..row.ncols()).filter(|&j| j != k).map(|j| row[(0, j)].norm_sqr()).sum();
    (signal, interference)
}

pub fn user_rate(k: usize, h: &CMatrix, f_a: &CMatrix, f_d: &CMatrix, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let (s, i) = rate_terms(k, h, f_a, f_d);
    Ok((1.0 + s / (i + sigma2)).log2())
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise power must be positive, got {sigma2}")));
    }
    Ok(())
}

pub fn sum_rate(scheme: &str, h: &CMatrix, f_a: &CMatrix, f_d: &CMatrix, power: f64, sigma2: f64) -> Result<RateReport> {
    check_sigma2(sigma2)?;
    if f_a.nrows() != h.nrows() || f_a.ncols() != f_d.nrows() || f_d.ncols() != h.ncols() {
        return Err(Error::InvalidArgument(format!(
            "precoder shapes {}x{} * {}x{} do not fit a {}x{} channel",
            f_a.nrows(),
            f_a.ncols(),
            f_d.nrows(),
            f_d.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let users: Vec<UserRate> = (0..h.ncols())
        .map(|k| {
            let (signal, interference) = rate_terms(k, h, f_a, f_d);
            UserRate {
                user: k,
                rate: (1.0 + signal / (interference + sigma2)).log2(),
                signal,
                interference,
            }
        })
        .collect();
    Ok(RateReport {
        scheme: scheme.to_string(),
        power,
        sigma2,
        sum_rate: users.iter().map(|u| u.rate).sum(),
        users,
        scenario_hash: String::new(),
    })
}

/// `P ||h_k||^2`, the largest power any codeword of power P can deliver.
pub fn gain_bound(h_k: &CVector, power: f64) -> f64 {
    power * h_k.norm_squared()
}

/// `sqrt(P) h_k / ||h_k||`.
pub fn mrt_codeword(h_k: &CVector, user: usize, power: f64) -> Result<Codeword> {
    if h_k.norm_squared() == 0.0 {
        return Err(Error::ZeroChannel);
    }
    Codeword::normalized(h_k.clone(), CodewordKind::Mrt { user }, power)
}

/// Everything produced by one precoding scheme.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RateReport,
    pub beamformer: HybridBeamformer,
    pub selection: Option<BeamSelection>,
    pub altmin: Option<AltMinResult>,
    pub condition: f64,
}

fn hashes(h: &ChannelMatrix) -> (String, String) {
    (h.scene_hash.clone(), h.grid_hash.clone())
}

fn finish(scheme: &str, h: &ChannelMatrix, f_a: CMatrix, f_d: CMatrix, power: f64, sigma2: f64) -> Result<(RateReport, HybridBeamformer)> {
    let mut report = sum_rate(scheme, &h.h, &f_a, &f_d, power, sigma2)?;
    let (scene_hash, grid_hash) = hashes(h);
    report.scenario_hash = scene_hash.clone();
    Ok((
        report,
        HybridBeamformer {
            f_a,
            f_d,
            power,
            scene_hash,
            grid_hash,
        },
    ))
}

/// Fully digital zero forcing `F = H (H^H H)^{-1} Lambda`.
pub fn perfect_csi_digital(h: &ChannelMatrix, power: f64, sigma2: f64, allow_ridge: bool) -> Result<Outcome> {
    let eye = DMatrix::<Complex64>::identity(h.num_elements(), h.num_elements());
    let zf = zf_digital(&h.h.adjoint(), power, &eye, allow_ridge)?;
    let (report, beamformer) = finish("digital", h, eye, zf.f_d, power, sigma2)?;
    Ok(Outcome {
        report,
        beamformer,
        selection: None,
        altmin: None,
        condition: zf.condition,
    })
}

/// Settings shared by the hybrid pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_rf: usize,
    pub power: f64,
    pub sigma2: f64,
    pub realization: Realization,
    pub training_noise: f64,
    pub altmin_iters: usize,
    pub seed: u64,
    pub allow_ridge: bool,
}

impl PipelineConfig {
    pub fn new(n_rf: usize, power: f64, sigma2: f64) -> Self {
        Self {
            n_rf,
            power,
            sigma2,
            realization: Realization::Ideal,
            training_noise: 0.0,
            altmin_iters: ALTMIN_ITERS,
            seed: 0,
            allow_ridge: false,
        }
    }

    fn training(&self, mode: TrainingMode) -> TrainingConfig {
        TrainingConfig {
            mode,
            realization: self.realization,
            noise_power: self.training_noise,
            seed: self.seed,
        }
    }
}

/// Alternating minimization toward `target`, then ZF on the effective channel.
fn realize_target(scheme: &str, h: &ChannelMatrix, target: &CMatrix, cfg: &PipelineConfig) -> Result<(RateReport, HybridBeamformer, AltMinResult, f64)> {
    let alt = altmin_analog(target, cfg.n_rf, cfg.altmin_iters, cfg.seed)?;
    let h_eq = effective_channel(&h.h, &alt.f_a)?;
    let zf = zf_digital(&h_eq, cfg.power, &alt.f_a, cfg.allow_ridge)?;
    let (report, bf) = finish(scheme, h, alt.f_a.clone(), zf.f_d, cfg.power, cfg.sigma2)?;
    Ok((report, bf, alt, zf.condition))
}

/// Alternating-minimization approximation of the digital ZF precoder.
pub fn perfect_csi_hybrid(h: &ChannelMatrix, cfg: &PipelineConfig) -> Result<Outcome> {
    let digital = perfect_csi_digital(h, cfg.power, cfg.sigma2, cfg.allow_ridge)?;
    let target = digital.beamformer.composite();
    let (report, beamformer, alt, condition) = realize_target("hybrid", h, &target, cfg)?;
    Ok(Outcome {
        report,
        beamformer,
        selection: None,
        altmin: Some(alt),
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Hierarchical Airy training.
    Airy,
    /// Exhaustive Airy training.
    AiryExhaustive,
    Focused,
    Steered,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Airy => "airy",
            Scheme::AiryExhaustive => "airy-exhaustive",
            Scheme::Focused => "focused",
            Scheme::Steered => "steered",
        }
    }
}

/// Stack selected codewords as target columns with `||f_k||^2 = P/K`.
pub fn target_matrix(selection: &BeamSelection, power: f64) -> CMatrix {
    let k = selection.users.len();
    let cols: Vec<CVector> = selection
        .users
        .iter()
        .map(|u| {
            let scale = (power / k as f64).sqrt() / u.codeword.w.norm();
            &u.codeword.w * Complex64::new(scale, 0.0)
        })
        .collect();
    CMatrix::from_columns(&cols)
}

/// Training, target assembly, alternating minimization, ZF and rates.
pub fn baseline_pipeline(
    scheme: Scheme,
    h: &ChannelMatrix,
    geometry: &ArrayGeometry,
    wavelength: f64,
    sampling: &CodebookSampling,
    cfg: &PipelineConfig,
) -> Result<Outcome> {
    let book = |kind| -> Result<_> {
        build_codebook(CodebookSpec::from_sampling(kind, sampling)?, geometry, wavelength, cfg.power)
    };
    let selection = match scheme {
        Scheme::Airy => hierarchical_search(
            &h.h,
            &book(CodebookKind::Polar)?,
            &book(CodebookKind::Airy)?,
            &cfg.training(TrainingMode::Hierarchical),
        )?,
        Scheme::AiryExhaustive => {
            exhaustive_search(&h.h, &book(CodebookKind::Airy)?, &cfg.training(TrainingMode::Exhaustive))?
        }
        Scheme::Focused => exhaustive_search(&h.h, &book(CodebookKind::Polar)?, &cfg.training(TrainingMode::Exhaustive))?,
        Scheme::Steered => exhaustive_search(&h.h, &book(CodebookKind::Dft)?, &cfg.training(TrainingMode::Exhaustive))?,
    };
    let target = target_matrix(&selection, cfg.power);
    let (report, beamformer, alt, condition) = realize_target(scheme.label(), h, &target, cfg)?;
    Ok(Outcome {
        report,
        beamformer,
        selection: Some(selection),
        altmin: Some(alt),
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::random_analog;

    fn ch(h: CMatrix) -> ChannelMatrix {
        ChannelMatrix {
            h,
            scene_hash: "s".into(),
            grid_hash: "g".into(),
        }
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let h = random_analog(4, 2, 1);
        let f_a = random_analog(4, 2, 2);
        let f_d = CMatrix::zeros(2, 2);
        assert_eq!(user_rate(0, &h, &f_a, &f_d, 1.0).unwrap(), 0.0);
        assert!(user_rate(0, &h, &f_a, &f_d, 0.0).is_err());
    }

    #[test]
    fn single_user_rate_formula() {
        let h = random_analog(4, 1, 3);
        let f_a = random_analog(4, 1, 4);
        let f_d = CMatrix::from_element(1, 1, Complex64::new(0.5, 0.2));
        let s = (h.column(0).adjoint() * &f_a * &f_d)[(0, 0)].norm_sqr();
        let r = user_rate(0, &h, &f_a, &f_d, 0.01).unwrap();
        assert!((r - (1.0 + s / 0.01).log2()).abs() < 1e-12);
    }

    #[test]
    fn empty_user_set_has_zero_sum() {
        let h = CMatrix::zeros(4, 0);
        let r = sum_rate("x", &h, &random_analog(4, 1, 0), &CMatrix::zeros(1, 0), 1.0, 1.0).unwrap();
        assert_eq!(r.sum_rate, 0.0);
    }

    #[test]
    fn orthogonal_users_add_independently() {
        let mut h = CMatrix::zeros(4, 2);
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(0.0, 2.0);
        let eye = CMatrix::identity(4, 4);
        let f_d = h.clone();
        let r = sum_rate("x", &h, &eye, &f_d, 1.0, 0.5).unwrap();
        assert_eq!(r.users[0].interference, 0.0);
        let expect = (1.0f64 + 1.0 / 0.5).log2() + (1.0f64 + 16.0 / 0.5).log2();
        assert!((r.sum_rate - expect).abs() < 1e-12);
    }

    #[test]
    fn mrt_meets_bound() {
        let h = random_analog(8, 1, 5).column(0) * Complex64::new(3.0, -1.0);
        let w = mrt_codeword(&h, 0, 2.0).unwrap();
        let got = h.dotc(&w.w).norm_sqr();
        assert!((got - gain_bound(&h, 2.0)).abs() <= 1e-12 * got);
        assert!(matches!(mrt_codeword(&CVector::zeros(8), 0, 1.0), Err(Error::ZeroChannel)));
    }

    #[test]
    fn digital_zf_single_user_is_mrt() {
        let h = random_analog(8, 1, 6) * Complex64::new(0.3, 0.4);
        let out = perfect_csi_digital(&ch(h.clone()), 1.0, 1e-3, false).unwrap();
        let expect = (1.0 + h.norm_squared() / 1e-3).log2();
        assert!((out.report.sum_rate - expect).abs() < 1e-9);
    }

    #[test]
    fn digital_zf_has_no_interference() {
        let h = random_analog(8, 3, 7) + random_analog(8, 3, 8);
        let out = perfect_csi_digital(&ch(h), 1.0, 1e-3, false).unwrap();
        assert!(out.report.max_interference_ratio() < 1e-10);
    }

    #[test]
    fn csv_layout() {
        let h = random_analog(4, 2, 1) + random_analog(4, 2, 9);
        let out = perfect_csi_digital(&ch(h), 1.0, 0.1, false).unwrap();
        let csv = out.report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RateReport::CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("digital,2,") && lines[3].contains(",sum,"));
    }
}
