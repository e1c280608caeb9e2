//! Array geometry, obstacles, users and the discretized propagation region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear array along y, centered at the origin.
///
/// Element `i` (0-based) has centered index `i - (N-1)/2`, which is a
/// half-integer for even `N`, and sits at `(0, index * spacing)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    num_elements: usize,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, spacing: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::config("num_elements", "must be at least 1"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::config("spacing_m", format!("must be positive, got {spacing}")));
        }
        Ok(Self {
            num_elements,
            spacing,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Centered index of element `i`.
    pub fn index(&self, i: usize) -> f64 {
        // 2i - (N-1) is an exact integer; halving it is exact in binary.
        (2 * i as i64 - (self.num_elements as i64 - 1)) as f64 / 2.0
    }

    pub fn position(&self, i: usize) -> f64 {
        self.index(i) * self.spacing
    }

    pub fn indices(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_elements).map(move |i| self.index(i))
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_elements).map(move |i| self.position(i))
    }

    /// y coordinate of the outermost element.
    pub fn half_aperture(&self) -> f64 {
        (self.num_elements as f64 - 1.0) / 2.0 * self.spacing
    }
}

/// Axis-aligned rectangular obstacle, treated as a closed set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Obstacle {
    pub fn new(x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        let ob = Self { x, y };
        ob.validate("obstacle")?;
        Ok(ob)
    }

    pub(crate) fn validate(&self, path: &str) -> Result<()> {
        if !(self.x[0] < self.x[1]) {
            return Err(Error::config(
                format!("{path}.x_range"),
                format!("need x_min < x_max, got {:?}", self.x),
            ));
        }
        if !(self.y[0] < self.y[1]) {
            return Err(Error::config(
                format!("{path}.y_range"),
                format!("need y_min < y_max, got {:?}", self.y),
            ));
        }
        if !(self.x[0] > 0.0) {
            return Err(Error::config(
                format!("{path}.x_range"),
                "obstacles must lie strictly in front of the aperture (x_min > 0)",
            ));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && y >= self.y[0] && y <= self.y[1]
    }

    /// Does the open segment `a -> b` touch this (closed) rectangle?
    pub fn intersects_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        // Liang-Barsky clipping on the parameter t of a + t (b - a).
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for axis in 0..2 {
            let (lo, hi) = if axis == 0 { (self.x[0], self.x[1]) } else { (self.y[0], self.y[1]) };
            let p = a[axis];
            let dir = b[axis] - a[axis];
            if dir == 0.0 {
                if p < lo || p > hi {
                    return false;
                }
            } else {
                let t1 = (lo - p) / dir;
                let t2 = (hi - p) / dir;
                let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                t_lo = t_lo.max(t1);
                t_hi = t_hi.min(t2);
            }
        }
        t_lo <= t_hi && t_lo < 1.0 && t_hi > 0.0
    }
}

/// Array, obstacles, users and carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub obstacles: Vec<Obstacle>,
    pub users: Vec<[f64; 2]>,
    wavelength: f64,
}

impl Scene {
    pub fn new(
        geometry: ArrayGeometry,
        obstacles: Vec<Obstacle>,
        users: Vec<[f64; 2]>,
        wavelength: f64,
    ) -> Result<Self> {
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::config("frequency_ghz", "wavelength must be positive"));
        }
        for (i, ob) in obstacles.iter().enumerate() {
            ob.validate(&format!("obstacles[{i}]"))?;
        }
        for (k, u) in users.iter().enumerate() {
            if !(u[0].is_finite() && u[1].is_finite()) {
                return Err(Error::config(format!("users[{k}]"), "coordinates must be finite"));
            }
            if !(u[0] > 0.0) {
                return Err(Error::config(format!("users[{k}]"), "user must have x > 0"));
            }
            if let Some(j) = obstacles.iter().position(|ob| ob.contains(u[0], u[1])) {
                return Err(Error::config(
                    format!("users[{k}]"),
                    format!("user lies inside obstacles[{j}]"),
                ));
            }
        }
        Ok(Self {
            geometry,
            obstacles,
            users,
            wavelength,
        })
    }

    pub fn from_frequency(
        geometry: ArrayGeometry,
        obstacles: Vec<Obstacle>,
        users: Vec<[f64; 2]>,
        frequency_hz: f64,
    ) -> Result<Self> {
        Self::new(geometry, obstacles, users, SPEED_OF_LIGHT / frequency_hz)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    pub fn frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Same array, obstacles and carrier with a different user set.
    pub fn with_users(&self, users: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(self.geometry.clone(), self.obstacles.clone(), users, self.wavelength)
    }

    /// Blockage indicator B(x, y): 0 inside any obstacle (boundary included), 1 elsewhere.
    pub fn mask(&self, x: f64, y: f64) -> u8 {
        if self.obstacles.iter().any(|ob| ob.contains(x, y)) {
            0
        } else {
            1
        }
    }

    /// Whether the line of sight from element `n` to user `k` crosses an obstacle.
    pub fn los_blocked(&self, n: usize, k: usize) -> bool {
        let a = [0.0, self.geometry.position(n)];
        let b = self.users[k];
        self.obstacles.iter().any(|ob| ob.intersects_segment(a, b))
    }

    /// Fraction of array elements whose line of sight to user `k` is blocked.
    pub fn blockage_ratio(&self, k: usize) -> f64 {
        let n = self.geometry.num_elements();
        let blocked = (0..n).filter(|&i| self.los_blocked(i, k)).count();
        blocked as f64 / n as f64
    }

    /// Largest |y| among elements, users and obstacle edges.
    pub fn transverse_reach(&self) -> f64 {
        let mut reach = self.geometry.half_aperture();
        for u in &self.users {
            reach = reach.max(u[1].abs());
        }
        for ob in &self.obstacles {
            reach = reach.max(ob.y[0].abs()).max(ob.y[1].abs());
        }
        reach
    }
}

/// Sampling of the propagation region.
///
/// The transverse grid is origin-aligned: samples sit at `j * dy` for
/// `|j| <= ceil(y_extent / dy)`, then the line is zero-padded to
/// `pad_factor` times its length for the spectral steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationGrid {
    pub dy: f64,
    pub dx: f64,
    pub y_extent: f64,
    pub pad_factor: f64,
}

impl PropagationGrid {
    pub const DEFAULT_DX: f64 = 5e-3;
    pub const DEFAULT_PAD: f64 = 2.0;

    /// dy = lambda/4, dx = 5 mm, extent = 1.5 x the scene's transverse reach.
    pub fn default_for(scene: &Scene) -> Self {
        Self {
            dy: scene.wavelength() / 4.0,
            dx: Self::DEFAULT_DX,
            y_extent: 1.5 * scene.transverse_reach(),
            pad_factor: Self::DEFAULT_PAD,
        }
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        let lambda = scene.wavelength();
        if !(self.dy > 0.0 && self.dy <= lambda / 2.0 * (1.0 + 1e-12)) {
            return Err(Error::config(
                "grid.dy_m",
                format!("need 0 < dy <= lambda/2 = {:.4e}, got {}", lambda / 2.0, self.dy),
            ));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::config("grid.dx_m", "must be positive"));
        }
        if !(self.pad_factor >= 1.0 && self.pad_factor.is_finite()) {
            return Err(Error::config("grid.pad_factor", "must be >= 1"));
        }
        if !(self.y_extent > scene.geometry.half_aperture()) {
            return Err(Error::config(
                "grid.y_extent_m",
                "grid must extend beyond the outermost antenna element",
            ));
        }
        for (k, u) in scene.users.iter().enumerate() {
            if u[1].abs() >= self.y_extent {
                return Err(Error::UserOutsideGrid {
                    user: k,
                    y: u[1],
                    extent: self.y_extent,
                });
            }
        }
        Ok(())
    }

    /// Number of samples on each side of y = 0.
    pub fn half_count(&self) -> usize {
        (self.y_extent / self.dy - 1e-9).ceil() as usize
    }

    /// Samples in the physical (unpadded) line.
    pub fn physical_len(&self) -> usize {
        2 * self.half_count() + 1
    }

    /// Total samples including padding, rounded up to a 2-3-5 smooth size.
    pub fn padded_len(&self) -> usize {
        let target = (self.physical_len() as f64 * self.pad_factor).ceil() as usize;
        next_smooth(target.max(self.physical_len()))
    }

    /// Index of the first physical sample inside the padded line.
    pub fn pad_offset(&self) -> usize {
        (self.padded_len() - self.physical_len()) / 2
    }

    /// y coordinate of padded sample `i`.
    pub fn y_at(&self, i: usize) -> f64 {
        (i as f64 - self.pad_offset() as f64 - self.half_count() as f64) * self.dy
    }

    /// Nearest padded index to coordinate `y`.
    pub fn nearest_index(&self, y: f64) -> Option<usize> {
        let j = (y / self.dy).round() as i64 + (self.half_count() + self.pad_offset()) as i64;
        (j >= 0 && (j as usize) < self.padded_len()).then_some(j as usize)
    }

    /// Number of full steps needed to reach `x`, and the leftover distance.
    pub fn steps_to(&self, x: f64) -> (usize, f64) {
        let ratio = x / self.dx;
        let full = (ratio + 1e-9).floor().max(0.0) as usize;
        let rem = x - full as f64 * self.dx;
        (full, if rem.abs() <= 1e-9 * self.dx { 0.0 } else { rem })
    }

    pub fn plane_x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }
}

fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scale_obstacle() -> Obstacle {
        Obstacle::new([0.8, 1.0], [-0.15, 0.15]).unwrap()
    }

    fn scene(n: usize, obstacles: Vec<Obstacle>, users: Vec<[f64; 2]>) -> Scene {
        let lambda = SPEED_OF_LIGHT / 100e9;
        Scene::new(ArrayGeometry::new(n, lambda / 2.0).unwrap(), obstacles, users, lambda).unwrap()
    }

    #[test]
    fn index_set_is_centered() {
        let odd = ArrayGeometry::new(5, 1.0).unwrap();
        assert_eq!(odd.indices().collect::<Vec<_>>(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let even = ArrayGeometry::new(4, 1.0).unwrap();
        assert_eq!(even.indices().collect::<Vec<_>>(), vec![-1.5, -0.5, 0.5, 1.5]);
        let g = ArrayGeometry::new(266, 1.5e-3).unwrap();
        let pos: Vec<f64> = g.positions().collect();
        assert_eq!(pos.len(), 266);
        for (a, b) in pos.iter().zip(pos.iter().rev()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn mask_examples() {
        let s = scene(8, vec![full_scale_obstacle()], vec![[2.0, 0.0]]);
        assert_eq!(s.mask(0.9, 0.0), 0);
        assert_eq!(s.mask(0.9, 0.2), 1);
        assert_eq!(s.mask(0.8, 0.15), 0);
        let free = scene(8, vec![], vec![[2.0, 0.0]]);
        assert_eq!(free.mask(0.9, 0.0), 1);
    }

    #[test]
    fn degenerate_obstacle_names_field() {
        let err = Scene::new(
            ArrayGeometry::new(4, 1e-3).unwrap(),
            vec![Obstacle { x: [1.0, 1.0], y: [0.0, 1.0] }],
            vec![],
            3e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("obstacles[0].x_range"), "{err}");
    }

    #[test]
    fn user_inside_obstacle_rejected() {
        let err = Scene::new(
            ArrayGeometry::new(4, 1e-3).unwrap(),
            vec![full_scale_obstacle()],
            vec![[0.9, 0.0]],
            3e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("users[0]"));
    }

    #[test]
    fn blockage_no_obstacles_and_full_shadow() {
        let s = scene(32, vec![], vec![[1.0, 0.0]]);
        assert_eq!(s.blockage_ratio(0), 0.0);
        let wall = Obstacle::new([0.4, 0.5], [-0.5, 0.5]).unwrap();
        let s = scene(32, vec![wall], vec![[1.0, 0.0]]);
        assert_eq!(s.blockage_ratio(0), 1.0);
        assert!((0..32).all(|n| s.los_blocked(n, 0)));
    }

    #[test]
    fn partial_blockage_matches_brute_force() {
        let ob = Obstacle::new([0.9, 1.1], [-0.4, 0.15]).unwrap();
        let s = scene(266, vec![ob], vec![[1.2, 0.19]]);
        // brute force: march along each ray
        let mut blocked = 0;
        for n in 0..266 {
            let y0 = s.geometry.position(n);
            let hit = (1..20000).any(|i| {
                let t = i as f64 / 20000.0;
                ob.contains(1.2 * t, y0 + (0.19 - y0) * t)
            });
            assert_eq!(hit, s.los_blocked(n, 0), "element {n}");
            blocked += hit as usize;
        }
        let ratio = s.blockage_ratio(0);
        assert_eq!(ratio, blocked as f64 / 266.0);
        assert!(ratio > 0.0 && ratio < 1.0);
    }

    #[test]
    fn segment_touching_corner_counts() {
        let ob = Obstacle::new([1.0, 2.0], [1.0, 2.0]).unwrap();
        assert!(ob.intersects_segment([0.0, 0.0], [3.0, 3.0]));
        assert!(ob.intersects_segment([0.0, 0.0], [4.0, 2.0]));
        assert!(!ob.intersects_segment([0.0, 0.0], [3.0, 0.9]));
    }

    #[test]
    fn grid_layout_is_origin_aligned() {
        let s = scene(16, vec![], vec![[0.5, 0.05]]);
        let g = PropagationGrid::default_for(&s);
        g.validate(&s).unwrap();
        let m = g.half_count();
        assert_eq!(g.y_at(g.pad_offset() + m), 0.0);
        assert!(g.padded_len() >= 2 * g.physical_len());
        for y in s.geometry.positions() {
            let j = g.nearest_index(y).unwrap();
            assert!((g.y_at(j) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn steps_to_handles_rounding() {
        let g = PropagationGrid { dy: 1e-3, dx: 5e-3, y_extent: 0.1, pad_factor: 2.0 };
        assert_eq!(g.steps_to(1.0), (200, 0.0));
        let (n, rem) = g.steps_to(1.0021);
        assert_eq!(n, 200);
        assert!((rem - 0.0021).abs() < 1e-12);
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(7), 8);
        assert_eq!(next_smooth(1067), 1080);
        assert_eq!(next_smooth(1024), 1024);
    }
}
