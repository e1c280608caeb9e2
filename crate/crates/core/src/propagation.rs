//! Plane-by-plane propagation through the masked medium.
//!
//! Each step applies the angular-spectrum transfer function over a distance
//! `dx` on a zero-padded transverse line, then zeroes samples inside
//! obstacles and in the pad region. The crop keeps outgoing radiation from
//! wrapping around the circular transform. The end-to-end map from antenna weights to the field at a user
//! is linear; its conjugated coefficients form the channel vector `h_k`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{PropagationGrid, Scene};
use crate::special::hankel2_1;

/// Complex field samples along the padded transverse line at downrange `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPlane {
    pub x: f64,
    pub samples: Vec<Complex64>,
}

impl FieldPlane {
    pub fn zeros(x: f64, len: usize) -> Self {
        Self {
            x,
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Spatial frequencies (cycles/m) of an FFT of `len` samples spaced `dy`.
pub fn spatial_frequencies(len: usize, dy: f64) -> Vec<f64> {
    let span = len as f64 * dy;
    (0..len)
        .map(|q| {
            if q < len.div_ceil(2) {
                q as f64 / span
            } else {
                (q as f64 - len as f64) / span
            }
        })
        .collect()
}

/// Angular-spectrum multipliers for one propagation distance.
///
/// `exp(-j k dist sqrt(1 - (lambda f)^2))` inside the propagating band,
/// zero for evanescent frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSpectrum {
    pub distance: f64,
    pub freqs: Vec<f64>,
    pub multipliers: Vec<Complex64>,
}

impl TransferSpectrum {
    pub fn new(wavelength: f64, dy: f64, len: usize, distance: f64) -> Self {
        let k = 2.0 * std::f64::consts::PI / wavelength;
        let freqs = spatial_frequencies(len, dy);
        let multipliers = freqs
            .iter()
            .map(|f| {
                let u = wavelength * f;
                let c2 = 1.0 - u * u;
                if c2 >= 0.0 {
                    Complex64::from_polar(1.0, -k * distance * c2.sqrt())
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Self {
            distance,
            freqs,
            multipliers,
        }
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMethod {
    /// One propagation per antenna element.
    Forward,
    /// One transposed propagation per user.
    Adjoint,
}

/// `H = [h_1, ..., h_K]`, N x K, with `E(x_k, y_k) = h_k^H w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub h: DMatrix<Complex64>,
    pub scene_hash: String,
    pub grid_hash: String,
}

impl ChannelMatrix {
    pub fn num_elements(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.h.ncols()
    }

    pub fn column(&self, k: usize) -> DVector<Complex64> {
        self.h.column(k).into_owned()
    }

    /// eta_{k,n} = |h_{k,n}|
    pub fn amplitude(&self, k: usize, n: usize) -> f64 {
        self.h[(n, k)].norm()
    }

    /// Psi_{k,n} with h_{k,n} = eta e^{-j Psi}, wrapped to (-pi, pi].
    pub fn phase(&self, k: usize, n: usize) -> f64 {
        -self.h[(n, k)].arg()
    }

    /// Plain-text export: header lines, then one `n k re im` row per entry.
    pub fn export(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# channel-matrix v1").unwrap();
        writeln!(out, "N {}", self.num_elements()).unwrap();
        writeln!(out, "K {}", self.num_users()).unwrap();
        writeln!(out, "scene_hash {}", self.scene_hash).unwrap();
        writeln!(out, "grid_hash {}", self.grid_hash).unwrap();
        for k in 0..self.num_users() {
            for n in 0..self.num_elements() {
                let c = self.h[(n, k)];
                writeln!(out, "{n} {k} {:.17e} {:.17e}", c.re, c.im).unwrap();
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("channel matrix: {msg}"));
        let mut n = None;
        let mut k = None;
        let mut scene_hash = String::new();
        let mut grid_hash = String::new();
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["N", v] => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                ["K", v] => k = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                ["scene_hash", v] => scene_hash = v.to_string(),
                ["grid_hash", v] => grid_hash = v.to_string(),
                [a, b, re, im] => {
                    let p = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
                    let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
                    entries.push((idx(a)?, idx(b)?, Complex64::new(p(re)?, p(im)?)));
                }
                _ => return Err(bad(format!("unrecognized line `{line}`"))),
            }
        }
        let (n, k) = (n.ok_or_else(|| bad("missing N".into()))?, k.ok_or_else(|| bad("missing K".into()))?);
        if entries.len() != n * k {
            return Err(bad(format!("expected {} entries, found {}", n * k, entries.len())));
        }
        let mut h = DMatrix::zeros(n, k);
        for (i, j, c) in entries {
            if i >= n || j >= k {
                return Err(bad(format!("entry ({i}, {j}) out of range")));
            }
            h[(i, j)] = c;
        }
        Ok(Self {
            h,
            scene_hash,
            grid_hash,
        })
    }
}

/// |E|^2 over the (x, y) region, pad region cropped.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major by plane: `power[i * ys.len() + j]`.
    pub power: Vec<f64>,
}

impl GainMap {
    pub const DB_FLOOR: f64 = -200.0;

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.power[i * self.ys.len() + j]
    }

    pub fn max(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    /// Power in dB relative to the map maximum, floored at -200 dB.
    pub fn db(&self) -> Vec<f64> {
        let peak = self.max();
        self.power
            .iter()
            .map(|&p| {
                if p > 0.0 && peak > 0.0 {
                    (10.0 * (p / peak).log10()).max(Self::DB_FLOOR)
                } else {
                    Self::DB_FLOOR
                }
            })
            .collect()
    }

    /// (plane, sample) indices of the largest entry.
    pub fn argmax(&self) -> (usize, usize) {
        let (idx, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        (idx / self.ys.len(), idx % self.ys.len())
    }

    pub fn to_csv(&self) -> String {
        let db = self.db();
        let mut out = String::from("x_m,y_m,power_linear,power_db\n");
        for (i, x) in self.xs.iter().enumerate() {
            for (j, y) in self.ys.iter().enumerate() {
                let idx = i * self.ys.len() + j;
                writeln!(out, "{x:.6},{y:.6},{:.9e},{:.3}", self.power[idx], db[idx]).unwrap();
            }
        }
        out
    }
}

/// Per-step attenuation exponent at the outer edge of the pad region.
pub const ABSORBER_STRENGTH: f64 = 1.0;
/// Polynomial order of the absorber ramp.
pub const ABSORBER_ORDER: i32 = 4;

/// Smooth absorbing profile applied to the pad region at every plane.
fn absorber_profile(grid: &PropagationGrid) -> Vec<f64> {
    let len = grid.padded_len();
    let start = grid.pad_offset();
    let end = start + grid.physical_len();
    let width = start.max(1) as f64;
    (0..len)
        .map(|i| {
            let depth = if i < start {
                (start - i) as f64
            } else if i >= end {
                (i + 1 - end) as f64
            } else {
                return 1.0;
            };
            (-ABSORBER_STRENGTH * (depth / width).powi(ABSORBER_ORDER)).exp()
        })
        .collect()
}

pub(crate) fn short_hash<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("hashable values serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Propagation engine bound to one scene and grid.
///
/// Stateless between calls and safe to share across threads.
pub struct Propagator {
    scene: Scene,
    grid: PropagationGrid,
    len: usize,
    kernel: TransferSpectrum,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    elements: Vec<usize>,
    /// Per-step absorbing profile: 1 on the physical line, decaying to 0
    /// across the pad region.
    damping: Vec<f64>,
    /// Per obstacle: x range and the inclusive padded index range it blocks.
    blocked_rows: Vec<([f64; 2], usize, usize)>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("grid", &self.grid)
            .field("len", &self.len)
            .finish_non_exhaustive()
    }
}

impl Propagator {
    pub fn new(scene: &Scene, grid: &PropagationGrid) -> Result<Self> {
        grid.validate(scene)?;
        let len = grid.padded_len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);

        let mut elements = Vec::with_capacity(scene.geometry.num_elements());
        for (i, y) in scene.geometry.positions().enumerate() {
            let j = grid.nearest_index(y).ok_or_else(|| {
                Error::config("grid.y_extent_m", format!("element {i} at y = {y} is off the grid"))
            })?;
            if elements.last().is_some_and(|&prev| prev >= j) {
                return Err(Error::config(
                    "grid.dy_m",
                    format!("elements {} and {i} share a grid point; reduce dy", i - 1),
                ));
            }
            elements.push(j);
        }

        let y0 = grid.y_at(0);
        let eps = 1e-9;
        let blocked_rows = scene
            .obstacles
            .iter()
            .filter_map(|ob| {
                let lo = ((ob.y[0] - y0) / grid.dy - eps).ceil().max(0.0);
                let hi = ((ob.y[1] - y0) / grid.dy + eps).floor().min(len as f64 - 1.0);
                (lo <= hi).then_some((ob.x, lo as usize, hi as usize))
            })
            .collect();

        Ok(Self {
            scene: scene.clone(),
            grid: grid.clone(),
            len,
            kernel: TransferSpectrum::new(scene.wavelength(), grid.dy, len, grid.dx),
            fft,
            ifft,
            elements,
            damping: absorber_profile(grid),
            blocked_rows,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn grid(&self) -> &PropagationGrid {
        &self.grid
    }

    /// Padded line length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The one-step transfer spectrum for `dx`.
    pub fn kernel(&self) -> &TransferSpectrum {
        &self.kernel
    }

    pub fn transfer(&self, distance: f64) -> TransferSpectrum {
        TransferSpectrum::new(self.scene.wavelength(), self.grid.dy, self.len, distance)
    }

    /// Padded sample index of each antenna element.
    pub fn element_indices(&self) -> &[usize] {
        &self.elements
    }

    pub fn y_at(&self, i: usize) -> f64 {
        self.grid.y_at(i)
    }

    pub fn scene_hash(&self) -> String {
        short_hash(&self.scene)
    }

    pub fn grid_hash(&self) -> String {
        short_hash(&self.grid)
    }

    /// Obstacle mask at plane `x` times the absorbing profile of the pad region.
    fn mask_plane(&self, x: f64, samples: &mut [Complex64]) {
        for (v, d) in samples.iter_mut().zip(&self.damping) {
            *v *= *d;
        }
        let eps = 1e-9 * self.grid.dx;
        for &(xr, lo, hi) in &self.blocked_rows {
            if x >= xr[0] - eps && x <= xr[1] + eps {
                samples[lo..=hi].fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    fn apply_transfer(&self, multipliers: &[Complex64], samples: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let scale = 1.0 / self.len as f64;
        scratch.resize(self.fft.get_inplace_scratch_len().max(self.ifft.get_inplace_scratch_len()), Complex64::default());
        self.fft.process_with_scratch(samples, scratch);
        for (v, m) in samples.iter_mut().zip(multipliers) {
            *v *= m * scale;
        }
        self.ifft.process_with_scratch(samples, scratch);
    }

    fn check_plane(&self, field: &FieldPlane) -> Result<()> {
        if field.samples.len() != self.len {
            return Err(Error::GridMismatch(format!(
                "field has {} samples, grid has {}",
                field.samples.len(),
                self.len
            )));
        }
        Ok(())
    }

    /// One masked angular-spectrum step with an explicit transfer spectrum.
    pub fn step_with(&self, field: &FieldPlane, kernel: &TransferSpectrum, x_next: f64) -> Result<FieldPlane> {
        self.check_plane(field)?;
        if kernel.len() != self.len {
            return Err(Error::GridMismatch(format!(
                "kernel has {} bins, grid has {}",
                kernel.len(),
                self.len
            )));
        }
        let dist = x_next - field.x;
        if (dist - kernel.distance).abs() > 1e-9 * kernel.distance.abs().max(self.grid.dx) {
            return Err(Error::GridMismatch(format!(
                "step from x = {} to {x_next} does not match kernel distance {}",
                field.x, kernel.distance
            )));
        }
        let mut samples = field.samples.clone();
        let mut scratch = Vec::new();
        self.apply_transfer(&kernel.multipliers, &mut samples, &mut scratch);
        self.mask_plane(x_next, &mut samples);
        Ok(FieldPlane { x: x_next, samples })
    }

    /// Angular-spectrum step from `field.x` to `x_next`.
    pub fn asm_step(&self, field: &FieldPlane, x_next: f64) -> Result<FieldPlane> {
        let dist = x_next - field.x;
        if !(dist > 0.0) {
            return Err(Error::InvalidArgument(format!("step distance must be positive, got {dist}")));
        }
        if (dist - self.grid.dx).abs() <= 1e-9 * self.grid.dx {
            self.step_with(field, &self.kernel, x_next)
        } else {
            self.step_with(field, &self.transfer(dist), x_next)
        }
    }

    /// Direct midpoint-rule quadrature of the two-dimensional
    /// Rayleigh-Sommerfeld integral from `field.x` to `x_next`:
    /// `E(y) = B(x_next, y) sum_j E(y_j) (-j k dz / (2 r)) H1^(2)(k r) dy`.
    pub fn rs_step_direct(&self, field: &FieldPlane, x_next: f64) -> Result<FieldPlane> {
        self.check_plane(field)?;
        let dz = x_next - field.x;
        if !(dz > 0.0) {
            return Err(Error::InvalidArgument(format!("step distance must be positive, got {dz}")));
        }
        let k = self.scene.wavenumber();
        let dy = self.grid.dy;
        let taps: Vec<Complex64> = (0..self.len)
            .map(|m| {
                let r = ((m as f64 * dy).powi(2) + dz * dz).sqrt();
                Complex64::new(0.0, -k * dz / (2.0 * r)) * hankel2_1(k * r) * dy
            })
            .collect();
        let sources: Vec<(usize, Complex64)> = field
            .samples
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != Complex64::new(0.0, 0.0))
            .collect();
        let mut samples: Vec<Complex64> = (0..self.len)
            .into_par_iter()
            .map(|i| sources.iter().map(|&(j, v)| v * taps[i.abs_diff(j)]).sum())
            .collect();
        self.mask_plane(x_next, &mut samples);
        Ok(FieldPlane { x: x_next, samples })
    }

    /// Aperture plane with `w_n` deposited on each element's grid point.
    pub fn aperture_field(&self, w: &DVector<Complex64>) -> Result<FieldPlane> {
        if w.len() != self.elements.len() {
            return Err(Error::InvalidArgument(format!(
                "beamformer has {} entries, array has {} elements",
                w.len(),
                self.elements.len()
            )));
        }
        let mut plane = FieldPlane::zeros(0.0, self.len);
        for (&j, &v) in self.elements.iter().zip(w.iter()) {
            plane.samples[j] = v;
        }
        Ok(plane)
    }

    /// Run the full-step march from the aperture, calling `visit` on every
    /// plane (including x = 0) up to plane `steps`.
    fn march(&self, mut plane: FieldPlane, steps: usize, mut visit: impl FnMut(usize, &FieldPlane)) -> FieldPlane {
        let mut scratch = Vec::new();
        visit(0, &plane);
        for i in 1..=steps {
            self.apply_transfer(&self.kernel.multipliers, &mut plane.samples, &mut scratch);
            plane.x = self.grid.plane_x(i);
            self.mask_plane(plane.x, &mut plane.samples);
            visit(i, &plane);
        }
        plane
    }

    /// Propagate antenna weights to `until_x`; a trailing partial step covers
    /// any remainder of `until_x` modulo dx.
    pub fn propagate(&self, w: &DVector<Complex64>, until_x: f64) -> Result<FieldPlane> {
        if !(until_x > 0.0) {
            return Err(Error::InvalidArgument(format!("until_x must be positive, got {until_x}")));
        }
        let (steps, rem) = self.grid.steps_to(until_x);
        let plane = self.march(self.aperture_field(w)?, steps, |_, _| {});
        if rem > 0.0 {
            self.step_with(&plane, &self.transfer(rem), until_x)
        } else {
            Ok(plane)
        }
    }

    /// Every plane from the aperture through `steps` full steps.
    pub fn propagate_planes(&self, w: &DVector<Complex64>, steps: usize) -> Result<Vec<FieldPlane>> {
        let mut planes = Vec::with_capacity(steps + 1);
        self.march(self.aperture_field(w)?, steps, |_, p| planes.push(p.clone()));
        Ok(planes)
    }

    /// Linear functional returning the band-limited field at transverse
    /// position `y`, a distance `partial` beyond the plane it is applied to.
    pub fn readout_weights(&self, y: f64, partial: f64) -> Vec<Complex64> {
        let transfer = self.transfer(partial);
        let y0 = self.grid.y_at(0);
        let tau = 2.0 * std::f64::consts::PI;
        let mut c: Vec<Complex64> = transfer
            .freqs
            .iter()
            .zip(&transfer.multipliers)
            .map(|(f, m)| m * Complex64::from_polar(1.0, tau * f * (y - y0)))
            .collect();
        if self.len.is_multiple_of(2) {
            let q = self.len / 2;
            c[q] = transfer.multipliers[q] * (tau * transfer.freqs[q] * (y - y0)).cos();
        }
        self.fft.process(&mut c);
        let scale = 1.0 / self.len as f64;
        c.iter_mut().for_each(|v| *v *= scale);
        c
    }

    /// Field at `point`, consistent with the channel readout.
    pub fn field_at(&self, w: &DVector<Complex64>, point: [f64; 2]) -> Result<Complex64> {
        let (steps, rem) = self.grid.steps_to(point[0]);
        let plane = self.march(self.aperture_field(w)?, steps, |_, _| {});
        let g = self.readout_weights(point[1], rem);
        Ok(g.iter().zip(&plane.samples).map(|(a, b)| a * b).sum())
    }

    /// Band-limited value of a plane at transverse position `y`.
    pub fn sample(&self, field: &FieldPlane, y: f64) -> Result<Complex64> {
        self.check_plane(field)?;
        let g = self.readout_weights(y, 0.0);
        Ok(g.iter().zip(&field.samples).map(|(a, b)| a * b).sum())
    }

    fn user_readouts(&self) -> Result<Vec<(usize, Vec<Complex64>)>> {
        self.scene
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                if u[1].abs() >= self.grid.y_extent {
                    return Err(Error::UserOutsideGrid {
                        user: k,
                        y: u[1],
                        extent: self.grid.y_extent,
                    });
                }
                let (steps, rem) = self.grid.steps_to(u[0]);
                Ok((steps, self.readout_weights(u[1], rem)))
            })
            .collect()
    }

    /// Channel matrix for the scene's users.
    pub fn channel_matrix(&self, method: ChannelMethod) -> Result<ChannelMatrix> {
        let readouts = self.user_readouts()?;
        let n = self.elements.len();
        let k = readouts.len();
        let mut h = DMatrix::zeros(n, k);
        match method {
            ChannelMethod::Forward => {
                let max_steps = readouts.iter().map(|r| r.0).max().unwrap_or(0);
                let rows: Vec<Vec<Complex64>> = (0..n)
                    .into_par_iter()
                    .map(|e| {
                        let mut plane = FieldPlane::zeros(0.0, self.len);
                        plane.samples[self.elements[e]] = Complex64::new(1.0, 0.0);
                        let mut row = vec![Complex64::new(0.0, 0.0); k];
                        self.march(plane, max_steps, |i, p| {
                            for (user, (steps, g)) in readouts.iter().enumerate() {
                                if *steps == i {
                                    let v: Complex64 = g.iter().zip(&p.samples).map(|(a, b)| a * b).sum();
                                    row[user] = v.conj();
                                }
                            }
                        });
                        row
                    })
                    .collect();
                for (e, row) in rows.into_iter().enumerate() {
                    for (user, v) in row.into_iter().enumerate() {
                        h[(e, user)] = v;
                    }
                }
            }
            ChannelMethod::Adjoint => {
                let cols: Vec<Vec<Complex64>> = readouts
                    .par_iter()
                    .map(|(steps, g)| {
                        let mut v = g.clone();
                        let mut scratch = Vec::new();
                        for i in (1..=*steps).rev() {
                            self.mask_plane(self.grid.plane_x(i), &mut v);
                            self.apply_transfer(&self.kernel.multipliers, &mut v, &mut scratch);
                        }
                        self.elements.iter().map(|&j| v[j].conj()).collect()
                    })
                    .collect();
                for (user, col) in cols.into_iter().enumerate() {
                    for (e, v) in col.into_iter().enumerate() {
                        h[(e, user)] = v;
                    }
                }
            }
        }
        Ok(ChannelMatrix {
            h,
            scene_hash: self.scene_hash(),
            grid_hash: self.grid_hash(),
        })
    }

    /// |E|^2 on every plane from the aperture to `x_max`, cropped to the
    /// physical transverse extent.
    pub fn field_map(&self, w: &DVector<Complex64>, x_max: f64) -> Result<GainMap> {
        if !(x_max > 0.0) {
            return Err(Error::InvalidArgument(format!("x_max must be positive, got {x_max}")));
        }
        let (steps, rem) = self.grid.steps_to(x_max);
        let off = self.grid.pad_offset();
        let phys = self.grid.physical_len();
        let ys: Vec<f64> = (off..off + phys).map(|i| self.grid.y_at(i)).collect();
        let mut xs = Vec::with_capacity(steps + 2);
        let mut power = Vec::with_capacity((steps + 2) * phys);
        let last = self.march(self.aperture_field(w)?, steps, |_, p| {
            xs.push(p.x);
            power.extend(p.samples[off..off + phys].iter().map(|c| c.norm_sqr()));
        });
        if rem > 0.0 {
            let p = self.step_with(&last, &self.transfer(rem), x_max)?;
            xs.push(p.x);
            power.extend(p.samples[off..off + phys].iter().map(|c| c.norm_sqr()));
        }
        Ok(GainMap { xs, ys, power })
    }

    /// sum |E|^2 dy over the padded line.
    pub fn energy(&self, field: &FieldPlane) -> f64 {
        field.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dy
    }

    /// Energy of the propagating (|lambda f| <= 1) part of the field.
    pub fn propagating_energy(&self, field: &FieldPlane) -> f64 {
        let mut spec = field.samples.clone();
        self.fft.process(&mut spec);
        let band: f64 = spec
            .iter()
            .zip(&self.kernel.multipliers)
            .filter(|(_, m)| m.norm_sqr() > 0.0)
            .map(|(v, _)| v.norm_sqr())
            .sum();
        band / self.len as f64 * self.grid.dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ArrayGeometry, Obstacle, SPEED_OF_LIGHT};

    fn desk_scene(n: usize, obstacles: Vec<Obstacle>, users: Vec<[f64; 2]>) -> (Scene, PropagationGrid) {
        let lambda = SPEED_OF_LIGHT / 100e9;
        let scene = Scene::new(ArrayGeometry::new(n, lambda / 2.0).unwrap(), obstacles, users, lambda).unwrap();
        let grid = PropagationGrid::default_for(&scene);
        (scene, grid)
    }

    fn gaussian(prop: &Propagator, y_c: f64, waist: f64) -> FieldPlane {
        let mut p = FieldPlane::zeros(0.0, prop.len());
        for (i, v) in p.samples.iter_mut().enumerate() {
            let y = prop.y_at(i) - y_c;
            *v = Complex64::new((-(y / waist).powi(2)).exp(), 0.0);
        }
        p
    }

    #[test]
    fn kernel_modulus_at_most_one() {
        let t = TransferSpectrum::new(3e-3, 0.75e-3, 512, 5e-3);
        assert!(t.multipliers.iter().all(|m| m.norm() <= 1.0 + 1e-15));
        let propagating = t.multipliers.iter().filter(|m| m.norm() > 0.5).count();
        assert!(propagating > 200 && propagating < 312);
    }

    #[test]
    fn zero_field_stays_zero() {
        let (scene, grid) = desk_scene(16, vec![], vec![[0.3, 0.0]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let z = FieldPlane::zeros(0.0, prop.len());
        assert!(prop.asm_step(&z, grid.dx).unwrap().samples.iter().all(|c| c.norm() == 0.0));
        assert!(prop.rs_step_direct(&z, grid.dx).unwrap().samples.iter().all(|c| c.norm() == 0.0));
        let w = DVector::zeros(16);
        assert!(prop.propagate(&w, 0.2).unwrap().samples.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn asm_step_conserves_band_limited_energy() {
        let (scene, grid) = desk_scene(16, vec![], vec![[0.3, 0.0]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        // narrow enough to stay clear of the absorbing pad region
        let g = gaussian(&prop, 0.0, 2.0 * scene.wavelength());
        let next = prop.asm_step(&g, grid.dx).unwrap();
        let (e0, e1) = (prop.energy(&g), prop.energy(&next));
        assert!(((e1 - e0) / e0).abs() < 1e-6, "{e0} {e1}");
    }

    #[test]
    fn full_width_obstacle_zeroes_its_rows() {
        let wall = Obstacle::new([0.01, 0.02], [-0.05, 0.05]).unwrap();
        let (scene, grid) = desk_scene(16, vec![wall], vec![[0.3, 0.08]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let g = gaussian(&prop, 0.0, 0.02);
        let mid = FieldPlane { x: 0.01, ..g };
        let out = prop.asm_step(&mid, 0.015).unwrap();
        for (i, v) in out.samples.iter().enumerate() {
            if scene.mask(0.015, prop.y_at(i)) == 0 {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn direct_point_source_is_symmetric() {
        let (scene, grid) = desk_scene(16, vec![], vec![[0.3, 0.0]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let mut p = FieldPlane::zeros(0.0, prop.len());
        let c = prop.grid().nearest_index(0.0).unwrap();
        p.samples[c] = Complex64::new(1.0, 0.0);
        let out = prop.rs_step_direct(&p, grid.dx).unwrap();
        for m in 1..c.min(200) {
            let d = (out.samples[c + m].norm() - out.samples[c - m].norm()).abs();
            assert!(d < 1e-14 * out.samples[c].norm());
        }
    }

    #[test]
    fn mismatched_plane_is_rejected() {
        let (scene, grid) = desk_scene(16, vec![], vec![[0.3, 0.0]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let bad = FieldPlane::zeros(0.0, prop.len() + 1);
        assert!(matches!(prop.asm_step(&bad, grid.dx), Err(Error::GridMismatch(_))));
        let ok = FieldPlane::zeros(0.0, prop.len());
        assert!(matches!(prop.step_with(&ok, prop.kernel(), 2.0 * grid.dx), Err(Error::GridMismatch(_))));
        assert!(prop.propagate(&DVector::zeros(16), 0.0).is_err());
    }

    #[test]
    fn full_grid_wall_gives_zero_channel() {
        let (scene0, grid) = desk_scene(16, vec![], vec![[0.3, 0.01], [0.25, -0.02]]);
        let ext = grid.y_extent * 3.0;
        let wall = Obstacle::new([0.1, 0.12], [-ext, ext]).unwrap();
        let scene = Scene::new(scene0.geometry.clone(), vec![wall], scene0.users.clone(), scene0.wavelength()).unwrap();
        let prop = Propagator::new(&scene, &grid).unwrap();
        let h = prop.channel_matrix(ChannelMethod::Adjoint).unwrap();
        assert!(h.h.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn channel_reproduces_field_at_user() {
        let ob = Obstacle::new([0.1, 0.13], [-0.02, 0.01]).unwrap();
        let (scene, grid) = desk_scene(16, vec![ob], vec![[0.2512, 0.0071]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let h = prop.channel_matrix(ChannelMethod::Adjoint).unwrap();
        let w = DVector::from_fn(16, |i, _| Complex64::new((i as f64 * 0.7).cos(), (i as f64 * 1.3).sin()));
        let e = prop.field_at(&w, scene.users[0]).unwrap();
        let hw = h.column(0).dotc(&w);
        assert!((e - hw).norm() <= 1e-10 * e.norm());
    }

    #[test]
    fn channel_export_round_trip() {
        let (scene, grid) = desk_scene(8, vec![], vec![[0.2, 0.0], [0.15, 0.01]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let h = prop.channel_matrix(ChannelMethod::Adjoint).unwrap();
        let back = ChannelMatrix::parse(&h.export()).unwrap();
        assert_eq!(back, h);
        assert!(ChannelMatrix::parse("N 2\nK 1\n0 0 1 0\n").is_err());
    }

    #[test]
    fn zero_weights_map_to_floor() {
        let (scene, grid) = desk_scene(8, vec![], vec![[0.2, 0.0]]);
        let prop = Propagator::new(&scene, &grid).unwrap();
        let map = prop.field_map(&DVector::zeros(8), 0.05).unwrap();
        assert!(map.db().iter().all(|&d| d == GainMap::DB_FLOOR));
        assert_eq!(map.xs.len(), 11);
    }
}
