//! Uniform mesh, per-point marching records and the indexed heap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Quasipotential value and gradient at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub u: f64,
    pub g: Vec2,
}

impl Jet {
    pub const UNKNOWN: Jet = Jet {
        u: f64::INFINITY,
        g: [f64::INFINITY, f64::INFINITY],
    };

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.g[0].is_finite() && self.g[1].is_finite()
    }
}

/// A mesh with common spacing `h` on both axes: `nx` points along x and
/// `ny` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Mesh of `[x0, x1] × [y0, y1]` with `n` points along x. The y extent
    /// must be a whole number of cells of the same spacing.
    pub fn new(x: [f64; 2], y: [f64; 2], n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Grid(format!("need at least 3 points per side, got {n}")));
        }
        let h = (x[1] - x[0]) / (n - 1) as f64;
        let cells = (y[1] - y[0]) / h;
        if !(h > 0.0 && cells > 0.0) {
            return Err(Error::Grid("domain must have positive extent".into()));
        }
        let ny = cells.round() as usize + 1;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || ny < 3 {
            return Err(Error::Grid(format!(
                "y extent {} is not a whole number (at least 2) of cells of size {h}",
                y[1] - y[0]
            )));
        }
        Ok(Self { x0: x[0], y0: y[0], h, nx: n, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.h * (self.nx - 1) as f64
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.h * (self.ny - 1) as f64
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    #[inline]
    pub fn point(&self, i: usize) -> Vec2 {
        let (ix, iy) = self.coords(i);
        [self.x0 + ix as f64 * self.h, self.y0 + iy as f64 * self.h]
    }

    /// Index after shifting by an integer offset, if it stays on the mesh.
    #[inline]
    pub fn offset(&self, i: usize, d: [i64; 2]) -> Option<usize> {
        let (ix, iy) = self.coords(i);
        let jx = ix as i64 + d[0];
        let jy = iy as i64 + d[1];
        if jx < 0 || jy < 0 || jx >= self.nx as i64 || jy >= self.ny as i64 {
            None
        } else {
            Some(self.index(jx as usize, jy as usize))
        }
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        let (ix, iy) = self.coords(i);
        ix == 0 || iy == 0 || ix == self.nx - 1 || iy == self.ny - 1
    }

    /// Nearest mesh index to a point inside the domain.
    pub fn nearest(&self, p: Vec2) -> Option<usize> {
        let fx = ((p[0] - self.x0) / self.h).round();
        let fy = ((p[1] - self.y0) / self.h).round();
        if fx < 0.0 || fy < 0.0 || fx > (self.nx - 1) as f64 || fy > (self.ny - 1) as f64 {
            return None;
        }
        Some(self.index(fx as usize, fy as usize))
    }

    /// Mesh index of a point that must lie on the mesh.
    pub fn locate(&self, p: Vec2) -> Result<usize> {
        let i = self
            .nearest(p)
            .ok_or_else(|| Error::Grid(format!("point {p:?} is outside the domain")))?;
        let q = self.point(i);
        if (q[0] - p[0]).abs() > 1e-9 * self.h || (q[1] - p[1]).abs() > 1e-9 * self.h {
            return Err(Error::Grid(format!("point {p:?} is not a mesh point")));
        }
        Ok(i)
    }

    /// In-bounds members of the 8-point neighbourhood.
    pub fn neighbors8(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        NEIGHBORS8.iter().filter_map(move |&d| self.offset(i, d))
    }

    /// In-bounds points at ℓ1 mesh distance exactly `k`, counter-clockwise
    /// from the +x axis.
    pub fn l1_ball(&self, i: usize, k: usize) -> Vec<usize> {
        l1_ring_offsets(k)
            .into_iter()
            .filter_map(|d| self.offset(i, d))
            .collect()
    }
}

/// The eight nearest offsets, counter-clockwise from +x.
pub const NEIGHBORS8: [[i64; 2]; 8] = [
    [1, 0],
    [1, 1],
    [0, 1],
    [-1, 1],
    [-1, 0],
    [-1, -1],
    [0, -1],
    [1, -1],
];

/// All `4k` offsets with `|dx| + |dy| = k`, counter-clockwise from `(k, 0)`.
/// Consecutive entries (cyclically) are diagonal neighbours.
pub fn l1_ring_offsets(k: usize) -> Vec<[i64; 2]> {
    assert!(k >= 1, "ring radius must be positive");
    let k = k as i64;
    let mut out = Vec::with_capacity(4 * k as usize);
    for t in 0..k {
        out.push([k - t, t]);
    }
    for t in 0..k {
        out.push([-t, k - t]);
    }
    for t in 0..k {
        out.push([-k + t, -t]);
    }
    for t in 0..k {
        out.push([t, -k + t]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PointState {
    #[default]
    Unknown,
    Considered,
    Accepted,
}

impl PointState {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointState::Unknown => "unknown",
            PointState::Considered => "considered",
            PointState::Accepted => "accepted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum UpdateKind {
    /// Not updated, or seeded by the initialization.
    #[default]
    None,
    OnePoint,
    Triangle,
}

/// Marching state of one mesh point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub state: PointState,
    pub jet: Jet,
    /// Smallest one-point proposal ever made to this point.
    pub best_one_point: f64,
    pub kind: UpdateKind,
    pub parents: Option<(usize, usize)>,
    pub lambda: f64,
    pub slopes: [f64; 2],
    /// `|x_λ - y|` of the adopted triangle update, `∞` otherwise.
    pub update_length: f64,
    /// Seeded by the initialization; never updated afterwards.
    pub fixed: bool,
}

impl Default for PointRecord {
    fn default() -> Self {
        Self {
            state: PointState::Unknown,
            jet: Jet::UNKNOWN,
            best_one_point: f64::INFINITY,
            kind: UpdateKind::None,
            parents: None,
            lambda: f64::NAN,
            slopes: [f64::NAN; 2],
            update_length: f64::INFINITY,
            fixed: false,
        }
    }
}

/// Binary min-heap over mesh indices. Keys live outside the heap (the
/// tentative values of the point records) and are passed to every call;
/// ties go to the lower index.
#[derive(Debug, Clone)]
pub struct IndexedMinHeap {
    heap: Vec<usize>,
    pos: Vec<usize>,
    pub ops: u64,
}

const ABSENT: usize = usize::MAX;

impl IndexedMinHeap {
    pub fn new(capacity: usize) -> Self {
        Self {
            heap: Vec::new(),
            pos: vec![ABSENT; capacity],
            ops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.pos[i] != ABSENT
    }

    #[inline]
    fn less(keys: &[f64], a: usize, b: usize) -> bool {
        keys[a] < keys[b] || (keys[a] == keys[b] && a < b)
    }

    pub fn push(&mut self, i: usize, keys: &[f64]) {
        debug_assert!(!self.contains(i));
        self.ops += 1;
        self.heap.push(i);
        self.pos[i] = self.heap.len() - 1;
        self.sift_up(self.heap.len() - 1, keys);
    }

    /// Restore order after `keys[i]` decreased. Fails if `i` is absent or
    /// its key moved above its parent's... i.e. the caller raised it.
    pub fn decrease_key(&mut self, i: usize, old_key: f64, keys: &[f64]) -> Result<()> {
        if !self.contains(i) {
            return Err(Error::InvalidArgument(format!("index {i} is not in the heap")));
        }
        if keys[i] > old_key {
            return Err(Error::InvalidArgument(format!(
                "decrease_key would raise key of {i} from {old_key} to {}",
                keys[i]
            )));
        }
        self.ops += 1;
        self.sift_up(self.pos[i], keys);
        Ok(())
    }

    /// Restore order after `keys[i]` changed in either direction.
    pub fn update(&mut self, i: usize, keys: &[f64]) {
        debug_assert!(self.contains(i));
        self.ops += 1;
        let p = self.sift_up(self.pos[i], keys);
        self.sift_down(p, keys);
    }

    pub fn peek(&self) -> Option<usize> {
        self.heap.first().copied()
    }

    pub fn extract_min(&mut self, keys: &[f64]) -> Option<usize> {
        if self.heap.is_empty() {
            return None;
        }
        self.ops += 1;
        let top = self.heap[0];
        let last = self.heap.pop().unwrap();
        self.pos[top] = ABSENT;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last] = 0;
            self.sift_down(0, keys);
        }
        Some(top)
    }

    fn sift_up(&mut self, mut p: usize, keys: &[f64]) -> usize {
        let item = self.heap[p];
        while p > 0 {
            let parent = (p - 1) / 2;
            let q = self.heap[parent];
            if Self::less(keys, item, q) {
                self.heap[p] = q;
                self.pos[q] = p;
                p = parent;
            } else {
                break;
            }
        }
        self.heap[p] = item;
        self.pos[item] = p;
        p
    }

    fn sift_down(&mut self, mut p: usize, keys: &[f64]) -> usize {
        let n = self.heap.len();
        let item = self.heap[p];
        loop {
            let l = 2 * p + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && Self::less(keys, self.heap[r], self.heap[l]) {
                r
            } else {
                l
            };
            let child = self.heap[c];
            if Self::less(keys, child, item) {
                self.heap[p] = child;
                self.pos[child] = p;
                p = c;
            } else {
                break;
            }
        }
        self.heap[p] = item;
        self.pos[item] = p;
        p
    }
}
