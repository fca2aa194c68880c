//! Dyadic grid combinatorics on a bounded window.
//!
//! A [`Grid`] fixes a window (an axis-parallel cube of `R^n`, optionally
//! translated by a shift) and a finite mesh depth `max_level`. Cubes are
//! integer-indexed: a [`DyadicCube`] at level `k` has side `2^-k` times the
//! window side and a lower corner given by integer coordinates at that level.
//! Everything in this module is pure value computation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cube of the dyadic grid, `level:coord,coord,...`.
///
/// Ordering is by level, then lexicographically by coordinates; this is the
/// enumeration order used for Haar indices and witness tie-breaking.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DyadicCube {
    pub level: u32,
    pub coords: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: u32, coords: Vec<i64>) -> Self {
        Self { level, coords }
    }

    /// The window itself in dimension `dim`.
    pub fn root(dim: usize) -> Self {
        Self::new(0, vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn parent(&self) -> Option<DyadicCube> {
        if self.level == 0 {
            return None;
        }
        Some(DyadicCube::new(
            self.level - 1,
            self.coords.iter().map(|c| c.div_euclid(2)).collect(),
        ))
    }

    /// Ancestor `up` generations above this cube.
    pub fn ancestor(&self, up: u32) -> Option<DyadicCube> {
        if up > self.level {
            return None;
        }
        Some(DyadicCube::new(
            self.level - up,
            self.coords.iter().map(|c| c.div_euclid(1 << up)).collect(),
        ))
    }

    /// Children in lexicographic coordinate order, without depth checks.
    pub(crate) fn children_unchecked(&self) -> Vec<DyadicCube> {
        let n = self.dim();
        (0..(1usize << n))
            .map(|mask| {
                let coords = (0..n)
                    .map(|d| 2 * self.coords[d] + ((mask >> (n - 1 - d)) & 1) as i64)
                    .collect();
                DyadicCube::new(self.level + 1, coords)
            })
            .collect()
    }

    /// Whether `self ⊇ other` as dyadic cubes.
    pub fn contains(&self, other: &DyadicCube) -> bool {
        other
            .ancestor(other.level.wrapping_sub(self.level))
            .is_some_and(|a| other.level >= self.level && &a == self)
    }

    /// Position of a descendant inside this cube as a path of child indices
    /// (lex order), from the top down.
    pub fn location_of(&self, descendant: &DyadicCube) -> Option<Vec<usize>> {
        if !self.contains(descendant) {
            return None;
        }
        let n = self.dim();
        let mut path = Vec::with_capacity((descendant.level - self.level) as usize);
        for up in (0..descendant.level - self.level).rev() {
            let a = descendant.ancestor(up)?;
            let mut idx = 0usize;
            for d in 0..n {
                idx = (idx << 1) | (a.coords[d].rem_euclid(2) as usize);
            }
            path.push(idx);
        }
        Some(path)
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.level)?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for DyadicCube {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (level, coords) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("cube `{s}` is not `level:coords`")))?;
        let level = level
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad cube level in `{s}`")))?;
        let coords = coords
            .split(',')
            .map(|c| c.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid(format!("bad cube coordinates in `{s}`")))?;
        Ok(DyadicCube::new(level, coords))
    }
}

impl Serialize for DyadicCube {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DyadicCube {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An axis-parallel cube in real coordinates, `[lower, lower + side)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisCube {
    pub lower: Vec<f64>,
    pub side: f64,
}

impl AxisCube {
    pub fn new(lower: Vec<f64>, side: f64) -> Self {
        Self { lower, side }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().map(|l| l + self.side / 2.0).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    /// Same center, side multiplied by `factor`.
    pub fn dilate(&self, factor: f64) -> AxisCube {
        let side = self.side * factor;
        let lower = self
            .center()
            .iter()
            .map(|c| c - side / 2.0)
            .collect();
        AxisCube::new(lower, side)
    }

    pub fn upper(&self) -> Vec<f64> {
        self.lower.iter().map(|l| l + self.side).collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.lower
            .iter()
            .zip(x)
            .all(|(l, xi)| *xi >= *l && *xi < *l + self.side)
    }

    /// Closed containment of another cube, with a relative slack for rounding.
    pub fn contains_cube(&self, other: &AxisCube) -> bool {
        let tol = 1e-12 * self.side.max(other.side);
        self.lower.iter().zip(&other.lower).all(|(a, b)| {
            *b >= *a - tol && *b + other.side <= *a + self.side + tol
        })
    }

    /// Euclidean gap between the closures of two boxes.
    pub fn distance(&self, other: &AxisCube) -> f64 {
        self.lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| {
                let gap = (b - (a + self.side)).max(a - (b + other.side)).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Whether the interiors intersect.
    pub fn interiors_meet(&self, other: &AxisCube) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| {
            (a + self.side).min(b + other.side) > a.max(*b)
        })
    }

    /// Intersection with another cube-shaped box, as `(lower, upper)`.
    pub(crate) fn clip_to(&self, window: &AxisCube) -> (Vec<f64>, Vec<f64>) {
        let lo = self
            .lower
            .iter()
            .zip(&window.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi = self
            .upper()
            .iter()
            .zip(window.upper())
            .map(|(a, b)| a.min(b))
            .collect();
        (lo, hi)
    }
}

/// Pairwise geometry of two dyadic cubes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeGeometry {
    /// Euclidean gap between the closures.
    pub distance: f64,
    /// Whether `3Q1 ∩ 3Q2` has nonempty interior after clipping to the window.
    pub triple_overlap: bool,
    /// Whether `Q1 ⊇ Q2`.
    pub contains: bool,
    /// Whether either triple left the window and was clipped.
    pub clipped: bool,
}

/// A finite dyadic mesh over a translated window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    origin: Vec<f64>,
    side: f64,
    shift: Vec<f64>,
    max_level: u32,
}

/// Default mesh depth for a dimension: 10 levels on the line, 5 in the plane.
pub fn default_max_level(dim: usize) -> u32 {
    match dim {
        1 => 10,
        2 => 5,
        _ => 3,
    }
}

impl Grid {
    /// Unit window `[0,1)^n`, no shift.
    pub fn new(dim: usize, max_level: u32) -> Result<Self> {
        Self::with_window(vec![0.0; dim], 1.0, max_level)
    }

    pub fn with_window(origin: Vec<f64>, side: f64, max_level: u32) -> Result<Self> {
        let dim = origin.len();
        if dim == 0 {
            return Err(Error::invalid("grid dimension must be at least 1"));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::invalid(format!("window side must be positive, got {side}")));
        }
        if (dim as u32) * max_level > 24 {
            return Err(Error::invalid(format!(
                "mesh too large: {dim} x {max_level} levels exceeds 2^24 cells"
            )));
        }
        Ok(Self {
            dim,
            origin,
            side,
            shift: vec![0.0; dim],
            max_level,
        })
    }

    /// Translate the whole lattice (and hence the mesh) by `shift`.
    pub fn with_shift(mut self, shift: Vec<f64>) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::invalid("shift length must equal the grid dimension"));
        }
        self.shift = shift;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn window_side(&self) -> f64 {
        self.side
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// Lower corner of the (shifted) window.
    pub fn window_lower(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.shift)
            .map(|(o, s)| o + s)
            .collect()
    }

    pub fn window(&self) -> AxisCube {
        AxisCube::new(self.window_lower(), self.side)
    }

    pub fn window_volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn side_at(&self, level: u32) -> f64 {
        self.side / (1u64 << level) as f64
    }

    pub fn cell_side(&self) -> f64 {
        self.side_at(self.max_level)
    }

    pub fn cell_diameter(&self) -> f64 {
        self.cell_side() * (self.dim as f64).sqrt()
    }

    pub fn per_axis(&self, level: u32) -> i64 {
        1i64 << level
    }

    pub fn cubes_at_level_count(&self, level: u32) -> usize {
        1usize << (self.dim as u32 * level)
    }

    pub fn cell_count(&self) -> usize {
        self.cubes_at_level_count(self.max_level)
    }

    pub fn in_window(&self, q: &DyadicCube) -> bool {
        let m = self.per_axis(q.level);
        q.level <= self.max_level && q.coords.iter().all(|&c| (0..m).contains(&c))
    }

    /// Lex index of an in-window cube among the cubes of its level.
    pub fn level_index(&self, q: &DyadicCube) -> usize {
        let m = self.per_axis(q.level);
        q.coords.iter().fold(0i64, |acc, &c| acc * m + c) as usize
    }

    pub fn cube_from_level_index(&self, level: u32, mut idx: usize) -> DyadicCube {
        let m = self.per_axis(level) as usize;
        let mut coords = vec![0i64; self.dim];
        for d in (0..self.dim).rev() {
            coords[d] = (idx % m) as i64;
            idx /= m;
        }
        DyadicCube::new(level, coords)
    }

    /// Max-level cell with the given linear index.
    pub fn cell(&self, idx: usize) -> DyadicCube {
        self.cube_from_level_index(self.max_level, idx)
    }

    /// All cubes at `level` in lex order.
    pub fn cubes_at_level(&self, level: u32) -> impl Iterator<Item = DyadicCube> + '_ {
        (0..self.cubes_at_level_count(level)).map(move |i| self.cube_from_level_index(level, i))
    }

    /// All cubes at levels `0..depth` in enumeration order.
    pub fn cubes_to_depth(&self, depth: u32) -> Vec<DyadicCube> {
        (0..depth).flat_map(|k| self.cubes_at_level(k)).collect()
    }

    pub fn cube_lower(&self, q: &DyadicCube) -> Vec<f64> {
        let s = self.side_at(q.level);
        self.window_lower()
            .iter()
            .zip(&q.coords)
            .map(|(o, &c)| o + c as f64 * s)
            .collect()
    }

    pub fn cube_center(&self, q: &DyadicCube) -> Vec<f64> {
        let s = self.side_at(q.level);
        self.cube_lower(q).iter().map(|l| l + s / 2.0).collect()
    }

    pub fn to_axis(&self, q: &DyadicCube) -> AxisCube {
        AxisCube::new(self.cube_lower(q), self.side_at(q.level))
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        self.cube_center(&self.cell(idx))
    }

    /// Linear indices of the max-level cells of an in-window cube, lex order.
    pub fn cells_of(&self, q: &DyadicCube) -> Vec<usize> {
        debug_assert!(self.in_window(q));
        let shift = self.max_level - q.level;
        let b = 1usize << shift;
        let m = self.per_axis(self.max_level) as usize;
        let base: Vec<usize> = q.coords.iter().map(|&c| (c as usize) << shift).collect();
        let mut out = Vec::with_capacity(b.pow(self.dim as u32));
        let mut offs = vec![0usize; self.dim];
        loop {
            let idx = (0..self.dim).fold(0usize, |acc, d| acc * m + base[d] + offs[d]);
            out.push(idx);
            let mut d = self.dim;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                offs[d] += 1;
                if offs[d] < b {
                    break;
                }
                offs[d] = 0;
            }
        }
    }

    /// Level-`level` ancestor's level index for a max-level cell.
    pub(crate) fn cell_ancestor_index(&self, cell: usize, level: u32) -> usize {
        let m = self.per_axis(self.max_level) as usize;
        let shift = self.max_level - level;
        let ml = 1usize << level;
        let mut idx = cell;
        let mut coords = vec![0usize; self.dim];
        for d in (0..self.dim).rev() {
            coords[d] = (idx % m) >> shift;
            idx /= m;
        }
        coords.iter().fold(0, |acc, &c| acc * ml + c)
    }

    /// The `2^n` children of `q` in lex order.
    pub fn children(&self, q: &DyadicCube) -> Result<Vec<DyadicCube>> {
        if q.level >= self.max_level {
            return Err(Error::MeshExhausted {
                level: q.level,
                max_level: self.max_level,
            });
        }
        Ok(q.children_unchecked())
    }

    /// Descendants `m` levels down; with `cumulative`, all of levels `1..=m`.
    pub fn grandchildren(&self, q: &DyadicCube, m: u32, cumulative: bool) -> Result<Vec<DyadicCube>> {
        if q.level + m > self.max_level {
            return Err(Error::MeshExhausted {
                level: q.level + m,
                max_level: self.max_level,
            });
        }
        let mut out = Vec::new();
        let mut frontier = vec![q.clone()];
        for _ in 0..m {
            frontier = frontier.iter().flat_map(|c| c.children_unchecked()).collect();
            if cumulative {
                out.extend(frontier.iter().cloned());
            }
        }
        if !cumulative {
            out = frontier;
        }
        Ok(out)
    }

    pub fn geometry(&self, q1: &DyadicCube, q2: &DyadicCube) -> CubeGeometry {
        let a = self.to_axis(q1);
        let b = self.to_axis(q2);
        let window = self.window();
        let ta = a.dilate(3.0);
        let tb = b.dilate(3.0);
        let clipped = !window.contains_cube(&ta) || !window.contains_cube(&tb);
        let (alo, ahi) = ta.clip_to(&window);
        let (blo, bhi) = tb.clip_to(&window);
        let triple_overlap = (0..self.dim).all(|d| ahi[d].min(bhi[d]) > alo[d].max(blo[d]));
        CubeGeometry {
            distance: a.distance(&b),
            triple_overlap,
            contains: q1.contains(q2),
            clipped,
        }
    }
}
