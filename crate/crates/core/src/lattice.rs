//! Lattice points and the dense, origin-centred window that stores per-site
//! fields. The window is the cube `[-half, half]^dim` and grows by doubling.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 3;

/// A point of `Z^d`, `d <= 3`. Unused trailing coordinates are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site([i64; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn line(x: i64) -> Self {
        Site([x, 0, 0])
    }

    pub fn plane(x: i64, y: i64) -> Self {
        Site([x, y, 0])
    }

    pub fn from_coords(coords: &[i64]) -> Self {
        assert!(coords.len() <= MAX_DIM);
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    pub fn coords(&self) -> &[i64; MAX_DIM] {
        &self.0
    }

    pub fn x(&self) -> i64 {
        self.0[0]
    }

    pub fn offset(mut self, axis: usize, delta: i64) -> Self {
        self.0[axis] += delta;
        self
    }

    /// Largest absolute coordinate.
    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Geometry of the dense storage window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    dim: usize,
    half: i64,
}

impl Window {
    pub fn new(dim: usize, half: i64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        assert!(half >= 1);
        Window { dim, half }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half(&self) -> i64 {
        self.half
    }

    pub fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow(axis as u32)
    }

    pub fn contains(&self, site: &Site) -> bool {
        site.0[..self.dim].iter().all(|c| c.abs() <= self.half)
            && site.0[self.dim..].iter().all(|&c| c == 0)
    }

    pub fn index(&self, site: &Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let side = self.side();
        let mut idx = 0usize;
        for axis in (0..self.dim).rev() {
            idx = idx * side + (site.0[axis] + self.half) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let side = self.side();
        let mut c = [0i64; MAX_DIM];
        for coord in c.iter_mut().take(self.dim) {
            *coord = (idx % side) as i64 - self.half;
            idx /= side;
        }
        Site(c)
    }

    /// True when some coordinate of `idx` sits on the outer layer, so that a
    /// neighbour could fall outside the window.
    #[inline]
    pub fn on_border(&self, idx: usize) -> bool {
        let side = self.side();
        if self.dim == 1 {
            return idx == 0 || idx + 1 == side;
        }
        let mut rest = idx;
        for _ in 0..self.dim {
            let c = rest % side;
            if c == 0 || c + 1 == side {
                return true;
            }
            rest /= side;
        }
        false
    }

    pub fn grown(&self) -> Window {
        Window::new(self.dim, 2 * self.half + 1)
    }

    /// Copy a field laid out on `self` into the layout of `to`.
    pub fn remap<T: Copy + Default>(&self, to: &Window, field: &[T], per_site: usize) -> Vec<T> {
        let mut out = vec![T::default(); to.len() * per_site];
        for idx in 0..self.len() {
            let target = to.index(&self.site(idx)).expect("target window must contain source");
            out[target * per_site..(target + 1) * per_site]
                .copy_from_slice(&field[idx * per_site..(idx + 1) * per_site]);
        }
        out
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |i| self.site(i))
    }
}

/// A scalar field over a window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteField<T> {
    window: Window,
    values: Vec<T>,
}

impl<T: Copy + Default + PartialEq> SiteField<T> {
    pub fn new(window: Window, values: Vec<T>) -> Self {
        assert_eq!(values.len(), window.len());
        SiteField { window, values }
    }

    pub fn zeros(window: Window) -> Self {
        SiteField {
            window,
            values: vec![T::default(); window.len()],
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at `site`; zero outside the window.
    pub fn get(&self, site: &Site) -> T {
        self.window
            .index(site)
            .map(|i| self.values[i])
            .unwrap_or_default()
    }

    pub fn at(&self, x: i64) -> T {
        self.get(&Site::line(x))
    }

    /// Nonzero entries in index order.
    pub fn nonzero(&self) -> impl Iterator<Item = (Site, T)> + '_ {
        let zero = T::default();
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, v)| **v != zero)
            .map(move |(i, &v)| (self.window.site(i), v))
    }

    /// Closed bounding range `[lo, hi]` of the nonzero entries along axis 0,
    /// or `None` for an all-zero field.
    pub fn support_range(&self, axis: usize) -> Option<(i64, i64)> {
        self.nonzero().fold(None, |acc, (s, _)| {
            let c = s.coords()[axis];
            Some(match acc {
                None => (c, c),
                Some((lo, hi)) => (lo.min(c), hi.max(c)),
            })
        })
    }
}
