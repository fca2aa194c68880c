//! Frame bounds: Hilbert-space bounds for finite families, square-function
//! bounds for weighted Haar systems in `L^p`, and the Banach-frame triple
//! (Haar coefficients, the `ℓ²`-valued `L^p` sequence norm, Haar synthesis).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::LpConfig;
use crate::error::{Error, Result};
use crate::haar::{BasisChoice, Coefficients, HaarSystem};
use crate::measure::{MeshFn, MeshMeasure};

/// Extreme sampled ratio and where it occurred.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameWitness {
    pub sample: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameBoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub sample_count: usize,
    pub p: f64,
    pub seed: u64,
    pub lower_witness: Option<FrameWitness>,
    pub upper_witness: Option<FrameWitness>,
    /// Extreme eigenvalues of the frame operator, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<(f64, f64)>,
    /// Mesh function attaining the exact lower bound.
    #[serde(skip)]
    pub lower_vector: Option<MeshFn>,
}

fn sample_rng(seed: u64, s: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn extremes(ratios: &[f64]) -> (Option<FrameWitness>, Option<FrameWitness>) {
    let mut lo: Option<FrameWitness> = None;
    let mut hi: Option<FrameWitness> = None;
    for (sample, &ratio) in ratios.iter().enumerate() {
        if !ratio.is_finite() {
            continue;
        }
        if lo.as_ref().is_none_or(|w| ratio < w.ratio) {
            lo = Some(FrameWitness { sample, ratio });
        }
        if hi.as_ref().is_none_or(|w| ratio > w.ratio) {
            hi = Some(FrameWitness { sample, ratio });
        }
    }
    (lo, hi)
}

fn check_measure(mu: &MeshMeasure) -> Result<()> {
    if !(mu.total() > 0.0) {
        return Err(Error::DegenerateMeasure("measure has zero total mass".into()));
    }
    Ok(())
}

/// `Σ_j |⟨x, f_j⟩_μ|² / ‖x‖²_{L²(μ)}` over random `x`, plus the exact bounds
/// from the spectrum of the frame operator on cells of positive mass.
pub fn hilbert_frame_bounds(elements: &[MeshFn], mu: &MeshMeasure, sample_count: usize, seed: u64) -> Result<FrameBoundsReport> {
    check_measure(mu)?;
    let n = mu.grid().cell_count();
    if let Some(f) = elements.iter().find(|f| f.len() != n) {
        return Err(Error::invalid(format!("element has {} values, the mesh has {n} cells", f.len())));
    }
    let mass = mu.cell_masses();
    let live: Vec<usize> = (0..n).filter(|&c| mass[c] > 0.0).collect();
    let ratios: Vec<f64> = (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let mut x = vec![0.0; n];
            for &c in &live {
                x[c] = rng.sample(StandardNormal);
            }
            let num: f64 = elements.iter().map(|f| mu.inner(&x, f).powi(2)).sum();
            num / mu.inner(&x, &x)
        })
        .collect();
    let (lw, uw) = extremes(&ratios);
    // G = Σ (M^{1/2} f)(M^{1/2} f)ᵀ on the live cells
    let k = live.len();
    let rows = DMatrix::from_fn(k, elements.len(), |i, j| mass[live[i]].sqrt() * elements[j][live[i]]);
    let eig = SymmetricEigen::new(&rows * rows.transpose());
    let (imin, lmin) = eig.eigenvalues.argmin();
    let lmax = eig.eigenvalues.max();
    let mut lower_vector = vec![0.0; n];
    for (i, &c) in live.iter().enumerate() {
        lower_vector[c] = eig.eigenvectors[(i, imin)] / mass[c].sqrt();
    }
    Ok(FrameBoundsReport {
        lower: lw.as_ref().map_or(f64::NAN, |w| w.ratio),
        upper: uw.as_ref().map_or(f64::NAN, |w| w.ratio),
        sample_count,
        p: 2.0,
        seed,
        lower_witness: lw,
        upper_witness: uw,
        exact: Some((lmin.max(0.0), lmax)),
        lower_vector: Some(lower_vector),
    })
}

/// Random function constant on the cubes of level `depth`, with its
/// `μ`-average removed.
fn random_mean_zero(mu: &MeshMeasure, depth: u32, rng: &mut ChaCha8Rng) -> MeshFn {
    let grid = mu.grid();
    let vals: Vec<f64> = (0..grid.cubes_at_level_count(depth)).map(|_| rng.sample(StandardNormal)).collect();
    let mut f: MeshFn = (0..grid.cell_count()).map(|c| vals[grid.cell_ancestor_index(c, depth)]).collect();
    let avg = mu.average(&f);
    f.iter_mut().for_each(|v| *v -= avg);
    f
}

/// `(Σ_Q |Δ_Q f|²)^{1/2}` on the mesh.
pub fn square_function(sys: &HaarSystem, mu: &MeshMeasure, f: &[f64]) -> MeshFn {
    let grid = mu.grid();
    let c = sys.expand(mu, f);
    let mut acc = vec![0.0; grid.cell_count()];
    for (q, cs) in sys.cubes().iter().zip(&c.values) {
        let ws = sys.get(q);
        if ws.is_empty() {
            continue;
        }
        for (j, child) in q.children_unchecked().iter().enumerate() {
            let d: f64 = ws.iter().zip(cs).map(|(h, a)| a * h.child_values[j]).sum();
            if d != 0.0 {
                for cell in grid.cells_of(child) {
                    acc[cell] += d * d;
                }
            }
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

/// `‖(Σ|a h|²)^{1/2}‖_{L^p(μ)}`, the sequence-space norm.
pub fn sequence_norm(sys: &HaarSystem, mu: &MeshMeasure, coeffs: &Coefficients, p: f64) -> f64 {
    let grid = mu.grid();
    let mut acc = vec![0.0; grid.cell_count()];
    for (h, a) in sys.iter().zip(coeffs.values.iter().flatten()) {
        if *a != 0.0 {
            for (cell, v) in h.support_cells(grid) {
                acc[cell] += (a * v).powi(2);
            }
        }
    }
    let s: MeshFn = acc.into_iter().map(f64::sqrt).collect();
    mu.lp_norm(&s, p)
}

fn square_ratios(sys: &HaarSystem, mu: &MeshMeasure, p: f64, depth: u32, sample_count: usize, seed: u64) -> Vec<f64> {
    (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let f = random_mean_zero(mu, depth, &mut sample_rng(seed, s));
            mu.lp_norm(&square_function(sys, mu, &f), p) / mu.lp_norm(&f, p)
        })
        .collect()
}

/// Sampled bounds for `‖S f‖_{L^p(μ)} / ‖f - ⟨f⟩_μ‖_{L^p(μ)}` over random
/// functions resolved at level `depth`.
pub fn lp_square_function_bounds(mu: &MeshMeasure, p: f64, depth: u32, sample_count: usize, seed: u64) -> Result<FrameBoundsReport> {
    LpConfig::new(p)?;
    check_measure(mu)?;
    let sys = HaarSystem::build(mu, depth, BasisChoice::Canonical)?;
    let ratios = square_ratios(&sys, mu, p, depth, sample_count, seed);
    let (lw, uw) = extremes(&ratios);
    Ok(FrameBoundsReport {
        lower: lw.as_ref().map_or(f64::NAN, |w| w.ratio),
        upper: uw.as_ref().map_or(f64::NAN, |w| w.ratio),
        sample_count,
        p,
        seed,
        lower_witness: lw,
        upper_witness: uw,
        exact: None,
        lower_vector: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BanachFrameReport {
    pub p: f64,
    pub depth: u32,
    pub sample_count: usize,
    pub seed: u64,
    /// Largest sequence norm seen, finite when property 1 holds.
    pub max_sequence_norm: f64,
    /// Range of `‖a(f)‖_{X_d} / ‖f‖_{L^p}`.
    pub equivalence: (f64, f64),
    /// Largest `‖S a‖_{L^p} / ‖a‖_{X_d}` over random sparse sequences.
    pub synthesis_bound: f64,
    pub reconstruction_error: f64,
    pub properties: [bool; 4],
    pub failures: Vec<String>,
    pub passed: bool,
}

impl BanachFrameReport {
    pub fn ensure(&self) -> Result<()> {
        match self.failures.first() {
            None => Ok(()),
            Some(f) => Err(Error::check("banach_frame", f.clone())),
        }
    }
}

fn sparse_coefficients(sys: &HaarSystem, rng: &mut ChaCha8Rng) -> Coefficients {
    let total = sys.len().max(1);
    let keep = rng.random_range(1..=total.min(8));
    let mut values: Vec<Vec<f64>> = sys.cubes().iter().map(|q| vec![0.0; sys.get(q).len()]).collect();
    for _ in 0..keep {
        let mut j = rng.random_range(0..total);
        for v in values.iter_mut() {
            if j < v.len() {
                v[j] = rng.sample(StandardNormal);
                break;
            }
            j -= v.len();
        }
    }
    Coefficients { mean: 0.0, values }
}

/// The four Banach-frame properties on sampled mean-zero functions.
pub fn banach_frame_check(mu: &MeshMeasure, p: f64, depth: u32, sample_count: usize, seed: u64) -> Result<BanachFrameReport> {
    LpConfig::new(p)?;
    check_measure(mu)?;
    let sys = HaarSystem::build(mu, depth, BasisChoice::Canonical)?;
    let per: Vec<(f64, f64, f64)> = (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let f = random_mean_zero(mu, depth, &mut sample_rng(seed, s));
            let mut c = sys.expand(mu, &f);
            let xd = sequence_norm(&sys, mu, &c, p);
            c.mean = 0.0;
            let back = sys.reconstruct(mu, &c);
            let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let err = f.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            (xd, xd / mu.lp_norm(&f, p), err)
        })
        .collect();
    let synth: Vec<f64> = (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed ^ 0x5b_a7c4, s);
            let a = sparse_coefficients(&sys, &mut rng);
            let xd = sequence_norm(&sys, mu, &a, p);
            if xd > 0.0 {
                mu.lp_norm(&sys.reconstruct(mu, &a), p) / xd
            } else {
                0.0
            }
        })
        .collect();
    let max_sequence_norm = per.iter().map(|x| x.0).fold(0.0, f64::max);
    let equivalence = per.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x.1), hi.max(x.1)));
    let synthesis_bound = synth.iter().copied().fold(0.0, f64::max);
    let reconstruction_error = per.iter().map(|x| x.2).fold(0.0, f64::max);
    let properties = [
        per.iter().all(|x| x.0.is_finite()),
        equivalence.0 > 0.0 && equivalence.1.is_finite(),
        synthesis_bound.is_finite(),
        reconstruction_error < 1e-10,
    ];
    let names = [
        "coefficient sequence has infinite norm",
        "norm equivalence band degenerates",
        "synthesis unbounded on sampled sequences",
        "synthesis does not reproduce f",
    ];
    let failures: Vec<String> = properties
        .iter()
        .zip(names)
        .enumerate()
        .filter(|(_, (ok, _))| !**ok)
        .map(|(i, (_, n))| format!("property {}: {n}", i + 1))
        .collect();
    Ok(BanachFrameReport {
        p,
        depth,
        sample_count,
        seed,
        max_sequence_norm,
        equivalence,
        synthesis_bound,
        reconstruction_error,
        properties,
        passed: failures.is_empty(),
        failures,
    })
}
