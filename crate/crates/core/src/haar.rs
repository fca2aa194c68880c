//! Weighted Haar wavelets.
//!
//! On a cube `Q` the space of functions that are constant on the children of
//! `Q` and have `μ`-mean zero has dimension `#{children of positive mass} - 1`.
//! The canonical basis is Gram–Schmidt (in `L²(μ)`) over the normalized
//! indicator differences `1_{p_j}/|p_j| - 1_{p_{j+1}}/|p_{j+1}|` of the
//! positive-mass children `p_0 < p_1 < ...` in lex order, with each vector's
//! first nonzero child value made positive.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::measure::{MeshFn, MeshMeasure};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HaarWavelet {
    pub cube: DyadicCube,
    /// Value on each child, lex order.
    pub child_values: Vec<f64>,
    pub index: usize,
    pub measure_id: u64,
}

impl HaarWavelet {
    /// `(cell, value)` for every max-level cell of the cube.
    pub fn support_cells(&self, grid: &Grid) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (child, v) in self.cube.children_unchecked().iter().zip(&self.child_values) {
            for c in grid.cells_of(child) {
                out.push((c, *v));
            }
        }
        out
    }

    pub fn to_mesh(&self, grid: &Grid) -> MeshFn {
        let mut f = vec![0.0; grid.cell_count()];
        for (c, v) in self.support_cells(grid) {
            f[c] = v;
        }
        f
    }

    /// `∫ h dμ` from child masses.
    pub fn mean(&self, mu: &MeshMeasure) -> f64 {
        self.child_masses(mu).iter().zip(&self.child_values).map(|(m, v)| m * v).sum()
    }

    pub fn l2_norm_sq(&self, mu: &MeshMeasure) -> f64 {
        self.child_masses(mu).iter().zip(&self.child_values).map(|(m, v)| m * v * v).sum()
    }

    /// `‖h‖_{L^p(μ)}`.
    pub fn lp_norm(&self, mu: &MeshMeasure, p: f64) -> f64 {
        self.child_masses(mu)
            .iter()
            .zip(&self.child_values)
            .map(|(m, v)| m * v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    fn child_masses(&self, mu: &MeshMeasure) -> Vec<f64> {
        self.cube.children_unchecked().iter().map(|c| mu.mass(c)).collect()
    }
}

/// How the orthonormal basis inside each cube's wavelet space is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisChoice {
    Canonical,
    /// Canonical basis rotated by a Haar-random orthogonal matrix, seeded per cube.
    Rotated { seed: u64 },
}

fn child_masses(mu: &MeshMeasure, q: &DyadicCube) -> Result<Vec<f64>> {
    if q.level >= mu.grid().max_level() {
        return Err(Error::MeshExhausted { level: q.level, max_level: mu.grid().max_level() });
    }
    Ok(q.children_unchecked().iter().map(|c| mu.mass(c)).collect())
}

fn weighted_dot(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
    m.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
}

fn apply_sign_convention(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Canonical child-value vectors for a cube with the given child masses.
pub fn canonical_child_values(masses: &[f64]) -> Vec<Vec<f64>> {
    let pos: Vec<usize> = (0..masses.len()).filter(|&j| masses[j] > 0.0).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for w in pos.windows(2) {
        let mut d = vec![0.0; masses.len()];
        d[w[0]] = 1.0 / masses[w[0]];
        d[w[1]] = -1.0 / masses[w[1]];
        // two Gram–Schmidt passes keep orthogonality under wide mass ratios
        for _ in 0..2 {
            for b in &basis {
                let c = weighted_dot(masses, &d, b);
                d.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nrm = weighted_dot(masses, &d, &d).sqrt();
        d.iter_mut().for_each(|x| *x /= nrm);
        apply_sign_convention(&mut d);
        basis.push(d);
    }
    basis
}

/// The canonical orthonormal Haar basis on `q`.
///
/// Returns an empty list when fewer than two children carry mass.
pub fn build_haar(mu: &MeshMeasure, q: &DyadicCube) -> Result<Vec<HaarWavelet>> {
    let m = child_masses(mu, q)?;
    if mu.mass(q) <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("cube {q} has zero mass")));
    }
    Ok(wrap(mu, q, canonical_child_values(&m)))
}

/// The canonical basis on `q` rotated by an orthogonal `d × d` matrix.
pub fn build_haar_rotated(mu: &MeshMeasure, q: &DyadicCube, rotation: &DMatrix<f64>) -> Result<Vec<HaarWavelet>> {
    let m = child_masses(mu, q)?;
    if mu.mass(q) <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("cube {q} has zero mass")));
    }
    let base = canonical_child_values(&m);
    let d = base.len();
    if rotation.nrows() != d || rotation.ncols() != d {
        return Err(Error::invalid(format!(
            "rotation for cube {q} must be {d}x{d}, got {}x{}",
            rotation.nrows(),
            rotation.ncols()
        )));
    }
    let ortho = (rotation.transpose() * rotation - DMatrix::identity(d, d)).amax();
    if ortho > 1e-10 {
        return Err(Error::invalid(format!("rotation for cube {q} is not orthogonal ({ortho:e})")));
    }
    let vals = (0..d)
        .map(|i| {
            let mut v = vec![0.0; m.len()];
            for (k, b) in base.iter().enumerate() {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += rotation[(i, k)] * y);
            }
            apply_sign_convention(&mut v);
            v
        })
        .collect();
    Ok(wrap(mu, q, vals))
}

fn wrap(mu: &MeshMeasure, q: &DyadicCube, vals: Vec<Vec<f64>>) -> Vec<HaarWavelet> {
    vals.into_iter()
        .enumerate()
        .map(|(index, child_values)| HaarWavelet {
            cube: q.clone(),
            child_values,
            index,
            measure_id: mu.id(),
        })
        .collect()
}

/// Haar-distributed orthogonal matrix.
pub fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn cube_seed(seed: u64, q: &DyadicCube) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    };
    mix(q.level as u64);
    for c in &q.coords {
        mix(*c as u64);
    }
    h
}

/// Position of a wavelet in a [`HaarSystem`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct WaveletId {
    pub cube: DyadicCube,
    pub gamma: usize,
}

/// All wavelets on cubes of levels `0..depth`.
#[derive(Clone, Debug)]
pub struct HaarSystem {
    measure_id: u64,
    depth: u32,
    basis: BasisChoice,
    cubes: Vec<DyadicCube>,
    wavelets: Vec<Vec<HaarWavelet>>,
    lookup: HashMap<DyadicCube, usize>,
    degenerate: Vec<DyadicCube>,
}

/// Haar coefficients aligned with a system's cubes plus the mean term.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    /// `μ`-average of the function over the window.
    pub mean: f64,
    pub values: Vec<Vec<f64>>,
}

impl HaarSystem {
    pub fn build(mu: &MeshMeasure, depth: u32, basis: BasisChoice) -> Result<Self> {
        if depth > mu.grid().max_level() {
            return Err(Error::MeshExhausted { level: depth, max_level: mu.grid().max_level() });
        }
        let cubes = mu.grid().cubes_to_depth(depth);
        let built: Vec<Vec<HaarWavelet>> = cubes
            .par_iter()
            .map(|q| {
                if mu.mass(q) <= 0.0 {
                    return Ok(Vec::new());
                }
                match basis {
                    BasisChoice::Canonical => build_haar(mu, q),
                    BasisChoice::Rotated { seed } => {
                        let d = canonical_child_values(&child_masses(mu, q)?).len();
                        let mut rng = ChaCha8Rng::seed_from_u64(cube_seed(seed, q));
                        build_haar_rotated(mu, q, &random_rotation(d, &mut rng))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let full = (1usize << mu.grid().dim()) - 1;
        let degenerate = cubes
            .iter()
            .zip(&built)
            .filter(|(_, w)| w.len() < full)
            .map(|(q, _)| q.clone())
            .collect();
        let lookup = cubes.iter().cloned().enumerate().map(|(i, q)| (q, i)).collect();
        Ok(Self { measure_id: mu.id(), depth, basis, cubes, wavelets: built, lookup, degenerate })
    }

    /// Replace the basis on one cube by a rotation of the canonical one.
    pub fn set_rotation(&mut self, mu: &MeshMeasure, q: &DyadicCube, rotation: &DMatrix<f64>) -> Result<()> {
        let i = *self
            .lookup
            .get(q)
            .ok_or_else(|| Error::invalid(format!("cube {q} is not in the system")))?;
        self.wavelets[i] = build_haar_rotated(mu, q, rotation)?;
        Ok(())
    }

    pub fn measure_id(&self) -> u64 {
        self.measure_id
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn basis(&self) -> BasisChoice {
        self.basis
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    /// Cubes whose wavelet space lost dimensions to zero-mass children.
    pub fn degenerate_cubes(&self) -> &[DyadicCube] {
        &self.degenerate
    }

    pub fn get(&self, q: &DyadicCube) -> &[HaarWavelet] {
        self.lookup.get(q).map(|&i| self.wavelets[i].as_slice()).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &HaarWavelet> {
        self.wavelets.iter().flatten()
    }

    pub fn ids(&self) -> Vec<WaveletId> {
        self.iter().map(|h| WaveletId { cube: h.cube.clone(), gamma: h.index }).collect()
    }

    pub fn len(&self) -> usize {
        self.wavelets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense `cells × wavelets` matrix of wavelet values, enumeration order.
    pub fn value_matrix(&self, grid: &Grid) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(grid.cell_count(), self.len());
        for (j, h) in self.iter().enumerate() {
            for (c, v) in h.support_cells(grid) {
                w[(c, j)] = v;
            }
        }
        w
    }

    /// `⟨f, h⟩_μ` for every wavelet, plus the window average.
    pub fn expand(&self, mu: &MeshMeasure, f: &[f64]) -> Coefficients {
        let grid = mu.grid();
        let sums = weighted_pyramid(mu, f, self.depth);
        let values = self
            .cubes
            .iter()
            .zip(&self.wavelets)
            .map(|(q, ws)| {
                let kids: Vec<f64> = q
                    .children_unchecked()
                    .iter()
                    .map(|c| sums[c.level as usize][grid.level_index(c)])
                    .collect();
                ws.iter()
                    .map(|h| h.child_values.iter().zip(&kids).map(|(v, s)| v * s).sum())
                    .collect()
            })
            .collect();
        Coefficients { mean: mu.average(f), values }
    }

    /// `mean + Σ c_{Q,γ} h_{Q,γ}` on the mesh.
    #[allow(clippy::needless_range_loop)]
    pub fn reconstruct(&self, mu: &MeshMeasure, coeffs: &Coefficients) -> MeshFn {
        let grid = mu.grid();
        let mut level = vec![coeffs.mean];
        let mut offset = 0;
        for k in 0..self.depth {
            let count = grid.cubes_at_level_count(k);
            let mut next = vec![0.0; grid.cubes_at_level_count(k + 1)];
            for i in 0..count {
                let q = &self.cubes[offset + i];
                let ws = &self.wavelets[offset + i];
                let cs = &coeffs.values[offset + i];
                for (j, child) in q.children_unchecked().iter().enumerate() {
                    let add: f64 = ws.iter().zip(cs).map(|(h, c)| c * h.child_values[j]).sum();
                    next[grid.level_index(child)] = level[i] + add;
                }
            }
            offset += count;
            level = next;
        }
        (0..grid.cell_count())
            .map(|c| level[grid.cell_ancestor_index(c, self.depth)])
            .collect()
    }
}

impl Coefficients {
    pub fn to_map(&self, system: &HaarSystem) -> BTreeMap<WaveletId, f64> {
        system
            .ids()
            .into_iter()
            .zip(self.values.iter().flatten().copied())
            .collect()
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().flatten().map(|c| c * c).sum()
    }

    /// Number of coefficients with `|c| > tol`.
    pub fn nonzero_count(&self, tol: f64) -> usize {
        self.values.iter().flatten().filter(|c| c.abs() > tol).count()
    }

    pub fn write_csv<W: Write>(&self, system: &HaarSystem, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cube", "gamma", "value"])?;
        for (id, v) in system.ids().iter().zip(self.values.iter().flatten()) {
            wtr.write_record([id.cube.to_string(), id.gamma.to_string(), format!("{v:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Level sums of `f·μ` for levels `0..=depth`.
fn weighted_pyramid(mu: &MeshMeasure, f: &[f64], depth: u32) -> Vec<Vec<f64>> {
    let grid = mu.grid();
    let mut sums: Vec<Vec<f64>> = (0..=depth).map(|k| vec![0.0; grid.cubes_at_level_count(k)]).collect();
    let bottom = &mut sums[depth as usize];
    for (c, (m, v)) in mu.cell_masses().iter().zip(f).enumerate() {
        bottom[grid.cell_ancestor_index(c, depth)] += m * v;
    }
    for k in (0..depth).rev() {
        for (i, q) in grid.cubes_at_level(k).enumerate() {
            let s: f64 = q
                .children_unchecked()
                .iter()
                .map(|c| sums[k as usize + 1][grid.level_index(c)])
                .sum();
            sums[k as usize][i] = s;
        }
    }
    sums
}

/// `Δ_Q f = Σ_γ ⟨f, h_Q^γ⟩ h_Q^γ` with the canonical basis.
pub fn project(mu: &MeshMeasure, f: &[f64], q: &DyadicCube) -> Result<MeshFn> {
    let grid = mu.grid();
    let mut out = vec![0.0; grid.cell_count()];
    if mu.mass(q) <= 0.0 {
        return Ok(out);
    }
    for h in build_haar(mu, q)? {
        let cells = h.support_cells(grid);
        let c: f64 = cells.iter().map(|&(i, v)| v * f[i] * mu.cell_masses()[i]).sum();
        for (i, v) in cells {
            out[i] += c * v;
        }
    }
    Ok(out)
}

/// `((1/|I|)∫|h|^q dμ)^{1/q} / ((1/|I|)∫|h|² dμ)^{1/2}`.
pub fn lq_l2_ratio(h: &HaarWavelet, mu: &MeshMeasure, q: f64) -> f64 {
    let total = mu.mass(&h.cube);
    let lq = (h.lp_norm(mu, q).powf(q) / total).powf(1.0 / q);
    let l2 = (h.l2_norm_sq(mu) / total).sqrt();
    lq / l2
}
