//! Near-field Airy, focused and steered codewords and the codebooks built from them.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ArrayGeometry;
pub use crate::special::airy_ai as airy_fn;

/// Classical Airy envelope of an element: `Ai(nd/s) * exp(a nd/s)`.
pub fn airy_amplitude(index: f64, spacing: f64, s: f64, a: f64) -> f64 {
    let u = index * spacing / s;
    airy_fn(u) * (a * u).exp()
}

/// Near-field focusing phase toward `(r, theta)`:
/// `(2 pi / lambda) (-nd sin(theta) + (nd)^2 cos^2(theta) / (2r))`, unreduced.
pub fn focusing_phase(index: f64, spacing: f64, wavelength: f64, r: f64, theta: f64) -> f64 {
    let y = index * spacing;
    let c = theta.cos();
    2.0 * PI / wavelength * (-y * theta.sin() + y * y * c * c / (2.0 * r))
}

/// Far-field steering phase toward `theta`.
pub fn steering_phase(index: f64, spacing: f64, wavelength: f64, theta: f64) -> f64 {
    -2.0 * PI / wavelength * index * spacing * theta.sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiryParams {
    pub theta: f64,
    pub r: f64,
    pub s: f64,
    pub a: f64,
}

impl AiryParams {
    pub fn new(theta: f64, r: f64, s: f64, a: f64) -> Result<Self> {
        let p = Self { theta, r, s, a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidArgument(format!("focal distance must be positive, got {}", self.r)));
        }
        if self.s == 0.0 || !self.s.is_finite() {
            return Err(Error::InvalidArgument("spatial scaling factor s must be nonzero".into()));
        }
        if !(self.a <= 0.0) {
            return Err(Error::InvalidArgument(format!("decay parameter must be <= 0, got {}", self.a)));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodewordKind {
    Airy(AiryParams),
    Focused { theta: f64, r: f64 },
    Steered { theta: f64 },
    Mrt { user: usize },
    Custom,
}

impl CodewordKind {
    pub fn label(&self) -> &'static str {
        match self {
            CodewordKind::Airy(_) => "airy",
            CodewordKind::Focused { .. } => "focused",
            CodewordKind::Steered { .. } => "steered",
            CodewordKind::Mrt { .. } => "mrt",
            CodewordKind::Custom => "custom",
        }
    }

    /// Space-separated `name=value` parameter list.
    pub fn describe(&self) -> String {
        match *self {
            CodewordKind::Airy(p) => format!("theta={:.9} r={:.9} s={:.9} a={:.9}", p.theta, p.r, p.s, p.a),
            CodewordKind::Focused { theta, r } => format!("theta={theta:.9} r={r:.9}"),
            CodewordKind::Steered { theta } => format!("theta={theta:.9}"),
            CodewordKind::Mrt { user } => format!("user={user}"),
            CodewordKind::Custom => String::new(),
        }
    }
}

/// A transmit vector with `||w||^2 = power`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub w: DVector<Complex64>,
    pub kind: CodewordKind,
    pub power: f64,
}

impl Codeword {
    /// Scale an arbitrary nonzero vector to the requested power.
    pub fn normalized(w: DVector<Complex64>, kind: CodewordKind, power: f64) -> Result<Self> {
        let norm2 = w.norm_squared();
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::DegenerateCodeword);
        }
        let scale = (power / norm2).sqrt();
        Ok(Self {
            w: w * Complex64::from(scale),
            kind,
            power,
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn airy_codeword(
    params: AiryParams,
    geometry: &ArrayGeometry,
    wavelength: f64,
    power: f64,
) -> Result<Codeword> {
    params.validate()?;
    let d = geometry.spacing();
    let w = DVector::from_iterator(
        geometry.num_elements(),
        geometry.indices().map(|n| {
            let amp = airy_amplitude(n, d, params.s, params.a);
            Complex64::from_polar(amp, focusing_phase(n, d, wavelength, params.r, params.theta))
        }),
    );
    Codeword::normalized(w, CodewordKind::Airy(params), power)
}

pub fn focused_codeword(
    theta: f64,
    r: f64,
    geometry: &ArrayGeometry,
    wavelength: f64,
    power: f64,
) -> Result<Codeword> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("focal distance must be positive, got {r}")));
    }
    let d = geometry.spacing();
    let w = DVector::from_iterator(
        geometry.num_elements(),
        geometry
            .indices()
            .map(|n| Complex64::from_polar(1.0, focusing_phase(n, d, wavelength, r, theta))),
    );
    Codeword::normalized(w, CodewordKind::Focused { theta, r }, power)
}

pub fn steered_codeword(theta: f64, geometry: &ArrayGeometry, wavelength: f64, power: f64) -> Codeword {
    let d = geometry.spacing();
    let w = DVector::from_iterator(
        geometry.num_elements(),
        geometry
            .indices()
            .map(|n| Complex64::from_polar(1.0, steering_phase(n, d, wavelength, theta))),
    );
    Codeword::normalized(w, CodewordKind::Steered { theta }, power)
        .expect("unit-modulus vectors are never degenerate")
}

/// Sampling rules for the codebook parameter sets.
///
/// `sin(theta)` is uniform over `[-sin(theta_max), sin(theta_max)]`, `r` is
/// uniform in `1/r`, `|s|` is log-spaced with half the points on each sign,
/// and `a` is uniform. All ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSampling {
    pub n_theta: usize,
    pub theta_max_deg: f64,
    pub n_r: usize,
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub n_s: usize,
    pub s_min_m: f64,
    pub s_max_m: f64,
    pub n_a: usize,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for CodebookSampling {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl CodebookSampling {
    /// 90 x 6 x 20 x 10 over [-45, 45] deg, [1, 5] m, +-[0.05, 0.3] m, [-2, 0].
    pub fn full_scale() -> Self {
        Self {
            n_theta: 90,
            theta_max_deg: 45.0,
            n_r: 6,
            r_min_m: 1.0,
            r_max_m: 5.0,
            n_s: 20,
            s_min_m: 0.05,
            s_max_m: 0.3,
            n_a: 10,
            a_min: -2.0,
            a_max: 0.0,
        }
    }

    /// Scale every length (distances and scaling factors) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r_min_m: self.r_min_m * factor,
            r_max_m: self.r_max_m * factor,
            s_min_m: self.s_min_m * factor,
            s_max_m: self.s_max_m * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(format!("codebook.{path}"), msg));
        if self.n_theta == 0 {
            return Err(Error::EmptySamplingSet("theta"));
        }
        if self.n_r == 0 {
            return Err(Error::EmptySamplingSet("r"));
        }
        if self.n_s == 0 {
            return Err(Error::EmptySamplingSet("s"));
        }
        if self.n_a == 0 {
            return Err(Error::EmptySamplingSet("a"));
        }
        if !(self.theta_max_deg > 0.0 && self.theta_max_deg < 90.0) {
            return bad("theta_max_deg", "must lie in (0, 90)");
        }
        if !(self.r_min_m > 0.0 && self.r_min_m <= self.r_max_m) {
            return bad("r_min_m", "need 0 < r_min <= r_max");
        }
        if !self.n_s.is_multiple_of(2) {
            return bad("n_s", "must be even (half the points per sign)");
        }
        if !(self.s_min_m > 0.0 && self.s_min_m <= self.s_max_m) {
            return bad("s_min_m", "need 0 < s_min <= s_max");
        }
        if !(self.a_min <= self.a_max && self.a_max <= 0.0) {
            return bad("a_max", "need a_min <= a_max <= 0");
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<f64> {
        let hi = self.theta_max_deg.to_radians().sin();
        linspace(-hi, hi, self.n_theta).into_iter().map(f64::asin).collect()
    }

    /// Ascending distances, uniform in 1/r.
    pub fn ranges(&self) -> Vec<f64> {
        let mut r: Vec<f64> = linspace(1.0 / self.r_max_m, 1.0 / self.r_min_m, self.n_r)
            .into_iter()
            .map(|u| 1.0 / u)
            .collect();
        r.sort_by(f64::total_cmp);
        r
    }

    /// Ascending scaling factors: `-s_max .. -s_min, s_min .. s_max`.
    pub fn scales(&self) -> Vec<f64> {
        let half = self.n_s / 2;
        let mags = logspace(self.s_min_m, self.s_max_m, half);
        let mut s: Vec<f64> = mags.iter().rev().map(|m| -m).collect();
        s.extend(mags);
        s
    }

    pub fn decays(&self) -> Vec<f64> {
        linspace(self.a_min, self.a_max, self.n_a)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i == 0 { lo } else if i + 1 == n { hi } else { v.exp() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Airy,
    Polar,
    Dft,
}

/// Explicit parameter sets for one codebook family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub kind: CodebookKind,
    pub thetas: Vec<f64>,
    pub ranges: Vec<f64>,
    pub scales: Vec<f64>,
    pub decays: Vec<f64>,
}

impl CodebookSpec {
    pub fn from_sampling(kind: CodebookKind, sampling: &CodebookSampling) -> Result<Self> {
        sampling.validate()?;
        let spec = Self {
            kind,
            thetas: sampling.thetas(),
            ranges: if kind == CodebookKind::Dft { vec![] } else { sampling.ranges() },
            scales: if kind == CodebookKind::Airy { sampling.scales() } else { vec![] },
            decays: if kind == CodebookKind::Airy { sampling.decays() } else { vec![] },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(Error::EmptySamplingSet("theta"));
        }
        if self.kind != CodebookKind::Dft {
            if self.ranges.is_empty() {
                return Err(Error::EmptySamplingSet("r"));
            }
            if self.ranges.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                return Err(Error::InvalidArgument("focal distances must be positive".into()));
            }
        }
        if self.kind == CodebookKind::Airy {
            if self.scales.is_empty() {
                return Err(Error::EmptySamplingSet("s"));
            }
            if self.decays.is_empty() {
                return Err(Error::EmptySamplingSet("a"));
            }
            if self.scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
                return Err(Error::InvalidArgument("scaling factors must be nonzero".into()));
            }
            if self.decays.iter().any(|&a| a > 0.0) {
                return Err(Error::InvalidArgument("decay parameters must be <= 0".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self.kind {
            CodebookKind::Dft => self.thetas.len(),
            CodebookKind::Polar => self.thetas.len() * self.ranges.len(),
            CodebookKind::Airy => {
                self.thetas.len() * self.ranges.len() * self.scales.len() * self.decays.len()
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Codeword index of `(theta, r, s, a)` positions in lexicographic order.
    pub fn airy_index(&self, it: usize, ir: usize, is: usize, ia: usize) -> usize {
        ((it * self.ranges.len() + ir) * self.scales.len() + is) * self.decays.len() + ia
    }

    /// Parameters of codeword `i`.
    pub fn params(&self, i: usize) -> CodewordKind {
        match self.kind {
            CodebookKind::Dft => CodewordKind::Steered { theta: self.thetas[i] },
            CodebookKind::Polar => {
                let nr = self.ranges.len();
                CodewordKind::Focused {
                    theta: self.thetas[i / nr],
                    r: self.ranges[i % nr],
                }
            }
            CodebookKind::Airy => {
                let (ns, na, nr) = (self.scales.len(), self.decays.len(), self.ranges.len());
                let ia = i % na;
                let is = (i / na) % ns;
                let ir = (i / (na * ns)) % nr;
                let it = i / (na * ns * nr);
                CodewordKind::Airy(AiryParams {
                    theta: self.thetas[it],
                    r: self.ranges[ir],
                    s: self.scales[is],
                    a: self.decays[ia],
                })
            }
        }
    }
}

/// An indexed codebook. Codewords are synthesized on demand: the full-scale
/// Airy codebook holds 108 000 codewords of 266 coefficients.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub spec: CodebookSpec,
    pub geometry: ArrayGeometry,
    pub wavelength: f64,
    pub power: f64,
}

pub fn build_codebook(
    spec: CodebookSpec,
    geometry: &ArrayGeometry,
    wavelength: f64,
    power: f64,
) -> Result<Codebook> {
    spec.validate()?;
    Ok(Codebook {
        spec,
        geometry: geometry.clone(),
        wavelength,
        power,
    })
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub fn params(&self, i: usize) -> CodewordKind {
        self.spec.params(i)
    }

    pub fn codeword(&self, i: usize) -> Result<Codeword> {
        synthesize(self.params(i), &self.geometry, self.wavelength, self.power)
    }

    pub fn materialize(&self) -> Result<Vec<Codeword>> {
        (0..self.len()).map(|i| self.codeword(i)).collect()
    }

    /// Text listing: one line per codeword with its parameters, optionally
    /// followed by the coefficients as interleaved (re, im) pairs.
    pub fn export(&self, with_coefficients: bool) -> Result<String> {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "# codebook kind={:?} size={} N={} P={}", self.spec.kind, self.len(),
            self.geometry.num_elements(), self.power).unwrap();
        writeln!(out, "index,kind,theta_rad,r_m,s_m,a{}", if with_coefficients { ",coefficients" } else { "" })
            .unwrap();
        for i in 0..self.len() {
            let kind = self.params(i);
            let (t, r, s, a) = match kind {
                CodewordKind::Airy(p) => (p.theta, p.r, p.s, p.a),
                CodewordKind::Focused { theta, r } => (theta, r, f64::NAN, f64::NAN),
                CodewordKind::Steered { theta } => (theta, f64::NAN, f64::NAN, f64::NAN),
                _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            write!(out, "{i},{},{t:.12e},{r:.12e},{s:.12e},{a:.12e}", kind.label()).unwrap();
            if with_coefficients {
                let cw = self.codeword(i)?;
                out.push(',');
                let coeffs: Vec<String> =
                    cw.w.iter().map(|c| format!("{:.12e} {:.12e}", c.re, c.im)).collect();
                out.push_str(&coeffs.join(" "));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Build the codeword described by `kind` (Airy, focused or steered).
pub fn synthesize(
    kind: CodewordKind,
    geometry: &ArrayGeometry,
    wavelength: f64,
    power: f64,
) -> Result<Codeword> {
    match kind {
        CodewordKind::Airy(p) => airy_codeword(p, geometry, wavelength, power),
        CodewordKind::Focused { theta, r } => focused_codeword(theta, r, geometry, wavelength, power),
        CodewordKind::Steered { theta } => Ok(steered_codeword(theta, geometry, wavelength, power)),
        other => Err(Error::InvalidArgument(format!(
            "{} codewords cannot be synthesized from parameters alone",
            other.label()
        ))),
    }
}
