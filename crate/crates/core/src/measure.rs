//! Nonnegative measures at mesh resolution.
//!
//! A [`MeshMeasure`] stores one mass per max-level cell of a [`Grid`] and
//! keeps a pyramid of partial sums so that the mass of any dyadic cube is a
//! lookup. Densities are constant on cells, so every integral against the
//! measure is a finite sum over cells.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{AxisCube, DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::quad;

/// A function on the max-level cells, one value per cell.
pub type MeshFn = Vec<f64>;

#[derive(Clone, Debug)]
pub struct MeshMeasure {
    grid: Grid,
    levels: Vec<Vec<f64>>,
    id: u64,
    label: String,
}

/// Result of a finite doubling scan.
#[derive(Clone, Debug, Serialize)]
pub struct DoublingReport {
    pub constant: f64,
    pub witness: DyadicCube,
    pub levels_scanned: u32,
    pub clipped_to_window: bool,
}

/// Generator parameters for the measure corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    Lebesgue,
    PowerWeight {
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    RandomDyadicDoubling {
        r: f64,
        seed: u64,
    },
    NearPointMass {
        sharpness: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cell: Option<usize>,
    },
    CustomCells {
        masses: Vec<f64>,
    },
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureSpec::Lebesgue => f.write_str("lebesgue"),
            MeasureSpec::PowerWeight { a, x0: None } => write!(f, "power:{a}"),
            MeasureSpec::PowerWeight { a, x0: Some(x) } => {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                write!(f, "power:{a}@{}", xs.join("/"))
            }
            MeasureSpec::RandomDyadicDoubling { r, seed } => write!(f, "doubling:{r}:{seed}"),
            MeasureSpec::NearPointMass { sharpness, cell: None } => write!(f, "point:{sharpness}"),
            MeasureSpec::NearPointMass { sharpness, cell: Some(c) } => {
                write!(f, "point:{sharpness}@{c}")
            }
            MeasureSpec::CustomCells { masses } => write!(f, "custom[{}]", masses.len()),
        }
    }
}

/// Short forms: `lebesgue`, `power:A[@X/Y]`, `doubling:R:SEED`, `point:S[@CELL]`.
impl FromStr for MeasureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |what: &str| Error::Config(format!("measure `{s}`: {what}"));
        let mut parts = s.splitn(2, ':');
        let kind = parts.next().unwrap_or_default();
        let rest = parts.next();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("bad number"));
        match kind {
            "lebesgue" => Ok(MeasureSpec::Lebesgue),
            "power" | "power_weight" => {
                let rest = rest.ok_or_else(|| bad("missing exponent"))?;
                let (a, x0) = match rest.split_once('@') {
                    Some((a, x)) => {
                        let x0 = x.split('/').map(num).collect::<Result<Vec<_>>>()?;
                        (num(a)?, Some(x0))
                    }
                    None => (num(rest)?, None),
                };
                Ok(MeasureSpec::PowerWeight { a, x0 })
            }
            "doubling" | "random_dyadic_doubling" => {
                let rest = rest.ok_or_else(|| bad("missing ratio bound"))?;
                let (r, seed) = rest.split_once(':').unwrap_or((rest, "0"));
                let seed = seed.trim().parse().map_err(|_| bad("bad seed"))?;
                Ok(MeasureSpec::RandomDyadicDoubling { r: num(r)?, seed })
            }
            "point" | "near_point_mass" => {
                let rest = rest.ok_or_else(|| bad("missing sharpness"))?;
                let (sh, cell) = match rest.split_once('@') {
                    Some((sh, c)) => (sh, Some(c.trim().parse().map_err(|_| bad("bad cell"))?)),
                    None => (rest, None),
                };
                Ok(MeasureSpec::NearPointMass { sharpness: num(sh)?, cell })
            }
            _ => Err(bad("unknown kind")),
        }
    }
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl MeshMeasure {
    /// Measure from explicit cell masses.
    pub fn from_cells(grid: Grid, masses: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if masses.len() != grid.cell_count() {
            return Err(Error::invalid(format!(
                "expected {} cell masses, got {}",
                grid.cell_count(),
                masses.len()
            )));
        }
        if let Some((i, m)) = masses.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::invalid(format!("cell {i} has invalid mass {m}")));
        }
        let mut levels = vec![Vec::new(); grid.max_level() as usize + 1];
        let id = fnv1a(&masses);
        levels[grid.max_level() as usize] = masses;
        for k in (0..grid.max_level()).rev() {
            let fine = &levels[k as usize + 1];
            let mut coarse = vec![0.0; grid.cubes_at_level_count(k)];
            for (i, q) in grid.cubes_at_level(k).enumerate() {
                coarse[i] = q
                    .children_unchecked()
                    .iter()
                    .map(|c| fine[grid.level_index(c)])
                    .sum();
            }
            levels[k as usize] = coarse;
        }
        Ok(Self { grid, levels, id, label: label.into() })
    }

    pub fn generate(grid: &Grid, spec: &MeasureSpec) -> Result<Self> {
        let label = spec.to_string();
        let masses = match spec {
            MeasureSpec::Lebesgue => vec![grid.cell_side().powi(grid.dim() as i32); grid.cell_count()],
            MeasureSpec::PowerWeight { a, x0 } => power_weight_cells(grid, *a, x0.as_deref())?,
            MeasureSpec::RandomDyadicDoubling { r, seed } => doubling_cells(grid, *r, *seed)?,
            MeasureSpec::NearPointMass { sharpness, cell } => point_mass_cells(grid, *sharpness, *cell)?,
            MeasureSpec::CustomCells { masses } => masses.clone(),
        };
        Self::from_cells(grid.clone(), masses, label)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cell_masses(&self) -> &[f64] {
        &self.levels[self.grid.max_level() as usize]
    }

    /// Masses of all level-`k` cubes in lex order.
    pub fn level_masses(&self, k: u32) -> &[f64] {
        &self.levels[k as usize]
    }

    pub fn total(&self) -> f64 {
        self.levels[0][0]
    }

    /// Mass of a dyadic cube; zero outside the window.
    pub fn mass(&self, q: &DyadicCube) -> f64 {
        if !self.grid.in_window(q) {
            return 0.0;
        }
        self.levels[q.level as usize][self.grid.level_index(q)]
    }

    /// Mass of a general cube, sharing boundary cells by volume fraction.
    /// The flag reports whether the cube left the window and was clipped.
    pub fn cube_mass(&self, q: &AxisCube) -> (f64, bool) {
        let window = self.grid.window();
        let clipped = !window.contains_cube(q);
        let (lo, hi) = q.clip_to(&window);
        (self.box_mass(&lo, &hi), clipped)
    }

    /// Mass of the box `[lo, hi)`, volume-fraction shares at the boundary.
    pub fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let cells = self.box_cells(lo, hi);
        let m = self.cell_masses();
        cells.iter().map(|&(i, frac)| frac * m[i]).sum()
    }

    /// Cells meeting the box `[lo, hi)` with their volume fractions inside.
    pub fn box_cells(&self, lo: &[f64], hi: &[f64]) -> Vec<(usize, f64)> {
        box_cells(&self.grid, lo, hi)
    }

    /// `∫ f g dμ`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_masses()
            .iter()
            .zip(f.iter().zip(g))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        self.cell_masses().iter().zip(f).map(|(m, a)| m * a).sum()
    }

    /// `(∫ |f|^p dμ)^{1/p}`.
    pub fn lp_norm(&self, f: &[f64], p: f64) -> f64 {
        self.cell_masses()
            .iter()
            .zip(f)
            .map(|(m, a)| m * a.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// `μ`-average over the whole window.
    pub fn average(&self, f: &[f64]) -> f64 {
        self.integral(f) / self.total()
    }

    /// Finite scan of `|2Q ∩ window|_μ / |Q|_μ` over dyadic levels `1..=depth`.
    pub fn doubling_constant(&self, depth: u32) -> Result<DoublingReport> {
        if depth + 1 > self.grid.max_level() {
            return Err(Error::invalid(format!(
                "doubling depth {depth} needs max_level >= {}",
                depth + 1
            )));
        }
        if self.total() <= 0.0 {
            return Err(Error::DegenerateMeasure("total mass is zero".into()));
        }
        let mut best: Option<(f64, DyadicCube, bool)> = None;
        for k in 1..=depth {
            let cubes: Vec<DyadicCube> = self.grid.cubes_at_level(k).collect();
            let ratios: Vec<Option<(f64, bool)>> = cubes
                .par_iter()
                .map(|q| {
                    let m = self.mass(q);
                    if m <= 0.0 {
                        return None;
                    }
                    let (big, clipped) = self.cube_mass(&self.grid.to_axis(q).dilate(2.0));
                    Some((big / m, clipped))
                })
                .collect();
            for (q, r) in cubes.into_iter().zip(ratios) {
                if let Some((r, clipped)) = r {
                    let replace = match &best {
                        None => true,
                        Some((b, _, _)) => r > *b * (1.0 + 1e-12),
                    };
                    if replace {
                        best = Some((r, q, clipped));
                    }
                }
            }
        }
        let (constant, witness, clipped_to_window) =
            best.ok_or_else(|| Error::DegenerateMeasure("no cube with positive mass".into()))?;
        Ok(DoublingReport { constant, witness, levels_scanned: depth, clipped_to_window })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cell_index", "mass"])?;
        for (i, m) in self.cell_masses().iter().enumerate() {
            wtr.write_record([i.to_string(), format!("{m:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read `(cell_index, mass)` rows; missing cells get mass zero.
    pub fn read_csv<R: Read>(grid: Grid, r: R, label: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut masses = vec![0.0; grid.cell_count()];
        for rec in rdr.records() {
            let rec = rec?;
            let idx: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid("bad cell_index in measure csv"))?;
            let mass: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid("bad mass in measure csv"))?;
            if idx >= masses.len() {
                return Err(Error::invalid(format!("cell_index {idx} out of range")));
            }
            masses[idx] = mass;
        }
        Self::from_cells(grid, masses, label)
    }
}

pub(crate) fn box_cells(grid: &Grid, lo: &[f64], hi: &[f64]) -> Vec<(usize, f64)> {
    let n = grid.dim();
    let cs = grid.cell_side();
    let wl = grid.window_lower();
    let m = grid.per_axis(grid.max_level());
    let mut ranges = Vec::with_capacity(n);
    for d in 0..n {
        let a = ((lo[d] - wl[d]) / cs).floor().max(0.0) as i64;
        let b = (((hi[d] - wl[d]) / cs).ceil() as i64).min(m);
        if b <= a {
            return Vec::new();
        }
        ranges.push((a, b));
    }
    let mut out = Vec::new();
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let cell_vol = cs.powi(n as i32);
    loop {
        let mut frac = 1.0;
        for d in 0..n {
            let c0 = wl[d] + idx[d] as f64 * cs;
            let a = c0.max(lo[d]);
            let b = (c0 + cs).min(hi[d]);
            frac *= (b - a).max(0.0);
        }
        frac /= cell_vol;
        if frac > 0.0 {
            let lin = idx.iter().fold(0i64, |acc, &c| acc * m + c) as usize;
            out.push((lin, frac.min(1.0)));
        }
        let mut d = n;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < ranges[d].1 {
                break;
            }
            idx[d] = ranges[d].0;
        }
    }
}

fn power_weight_cells(grid: &Grid, a: f64, x0: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = grid.dim();
    if !(a.is_finite() && a > -(n as f64)) {
        return Err(Error::invalid(format!("power weight exponent must exceed -{n}, got {a}")));
    }
    let x0: Vec<f64> = match x0 {
        Some(x) if x.len() == n => x.to_vec(),
        Some(_) => return Err(Error::invalid("power weight centre has wrong dimension")),
        None => grid.window_lower(),
    };
    let side = grid.cell_side();
    let out = (0..grid.cell_count())
        .into_par_iter()
        .map(|i| {
            let lo = grid.cube_lower(&grid.cell(i));
            if n == 1 {
                let anti = |t: f64| t.signum() * t.abs().powf(a + 1.0) / (a + 1.0);
                anti(lo[0] + side - x0[0]) - anti(lo[0] - x0[0])
            } else {
                power_box_integral(&lo, side, &x0, a, 0)
            }
        })
        .collect();
    Ok(out)
}

/// Tensor Gauss–Legendre on a box, subdividing boxes close to the centre.
fn power_box_integral(lo: &[f64], side: f64, x0: &[f64], a: f64, depth: u32) -> f64 {
    let n = lo.len();
    let gap: f64 = lo
        .iter()
        .zip(x0)
        .map(|(l, c)| {
            let g = (l - c).max(c - (l + side)).max(0.0);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if gap < side && depth < 8 {
        let h = side / 2.0;
        return (0..(1usize << n))
            .map(|mask| {
                let sub: Vec<f64> = (0..n)
                    .map(|d| lo[d] + h * ((mask >> d) & 1) as f64)
                    .collect();
                power_box_integral(&sub, h, x0, a, depth + 1)
            })
            .sum();
    }
    let (nodes, weights) = quad::gauss_legendre(6);
    let q = nodes.len();
    let mut total = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let mut w = 1.0;
        let mut r2 = 0.0;
        for d in 0..n {
            let x = lo[d] + side / 2.0 * (1.0 + nodes[idx[d]]);
            w *= weights[idx[d]] * side / 2.0;
            r2 += (x - x0[d]).powi(2);
        }
        total += w * r2.sqrt().powf(a);
        let mut d = n;
        loop {
            if d == 0 {
                return total;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < q {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Per-level split bound `r^(2^-j)`; the product over levels stays below `r^2`.
pub fn doubling_split_bound(r: f64, level: u32) -> f64 {
    r.powf(0.5f64.powi(level as i32))
}

/// Analytic bound on the doubling constant of `random_dyadic_doubling(r)`.
///
/// Every cell density relative to Lebesgue lies in `[r^-2, r^2]` times the
/// mean density, so `|2Q|_μ / |Q|_μ <= 2^n r^4`.
pub fn doubling_bound(dim: usize, r: f64) -> f64 {
    (1u64 << dim) as f64 * r.powi(4)
}

fn doubling_cells(grid: &Grid, r: f64, seed: u64) -> Result<Vec<f64>> {
    if !(r.is_finite() && r >= 1.0) {
        return Err(Error::invalid(format!("ratio bound r must be >= 1, got {r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kids = 1usize << grid.dim();
    let mut level = vec![1.0];
    for k in 0..grid.max_level() {
        let rk = doubling_split_bound(r, k);
        let mut next = vec![0.0; grid.cubes_at_level_count(k + 1)];
        for (i, q) in grid.cubes_at_level(k).enumerate() {
            let u: Vec<f64> = (0..kids)
                .map(|_| if rk > 1.0 { rng.random_range(1.0..=rk) } else { 1.0 })
                .collect();
            let s: f64 = u.iter().sum();
            for (c, ui) in q.children_unchecked().iter().zip(&u) {
                next[grid.level_index(c)] = level[i] * ui / s;
            }
        }
        level = next;
    }
    Ok(level)
}

fn point_mass_cells(grid: &Grid, sharpness: f64, cell: Option<usize>) -> Result<Vec<f64>> {
    if !(sharpness.is_finite() && sharpness >= 0.0) {
        return Err(Error::invalid(format!("sharpness must be >= 0, got {sharpness}")));
    }
    let n = grid.cell_count();
    if n < 2 {
        return Err(Error::invalid("near point mass needs at least two cells"));
    }
    let heavy = match cell {
        Some(c) if c < n => c,
        Some(c) => return Err(Error::invalid(format!("cell {c} out of range"))),
        None => {
            let mid = grid.per_axis(grid.max_level()) / 2;
            grid.level_index(&DyadicCube::new(grid.max_level(), vec![mid; grid.dim()]))
        }
    };
    let eta = 10f64.powf(-sharpness).min(1.0 - 1.0 / n as f64);
    let light = eta / (n - 1) as f64;
    let mut m = vec![light; n];
    m[heavy] = 1.0 - eta;
    Ok(m)
}
