//! The A₂ lower bound from aligned triples and the triple-testing absorption.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::aligned::{accept_delta, phi_test_function, AlignedTriple};
use crate::characteristics::{a2_lambda, cube_cells, cube_testing, haar_testing, CubeMode, CubeRef, CubeSource, TestingMode};
use crate::dyadic::{DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::haar::{build_haar, HaarWavelet, WaveletId};
use crate::measure::MeshMeasure;
use crate::operator::DiscreteOperator;

/// Expansion of a mean-zero function that is constant on the `m`-grandchildren
/// of `top`, over the wavelets of `top` and its descendants down `m - 1` levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyIdentity {
    pub top: DyadicCube,
    pub m: u32,
    pub coefficients: Vec<(WaveletId, f64)>,
    /// `‖f/‖f‖ - Σ c h‖_{L²(σ)}`.
    pub reconstruction_error: f64,
    /// Coefficients with `|c| > 1e-12`.
    pub count: usize,
    /// `(2ⁿ - 1)·|C^[m-1](top)|`.
    pub bound: usize,
}

pub fn key_identity(sigma: &MeshMeasure, f: &[f64], top: &DyadicCube, m: u32) -> Result<(KeyIdentity, Vec<HaarWavelet>)> {
    let grid = sigma.grid();
    let norm = sigma.lp_norm(f, 2.0);
    if norm <= 0.0 {
        return Err(Error::DegenerateMeasure("function has zero L2(sigma) norm".into()));
    }
    let mut cubes = vec![top.clone()];
    if m > 1 {
        cubes.extend(grid.grandchildren(top, m - 1, true)?);
    }
    let mut wavelets = Vec::new();
    for q in &cubes {
        if sigma.mass(q) > 0.0 {
            wavelets.extend(build_haar(sigma, q)?);
        }
    }
    let mut rec = vec![0.0; grid.cell_count()];
    let mut coefficients = Vec::with_capacity(wavelets.len());
    for h in &wavelets {
        let cells = h.support_cells(grid);
        let m = sigma.cell_masses();
        let c: f64 = cells.iter().map(|&(i, v)| m[i] * v * f[i]).sum::<f64>() / norm;
        for (i, v) in cells {
            rec[i] += c * v;
        }
        coefficients.push((WaveletId { cube: h.cube.clone(), gamma: h.index }, c));
    }
    let err: Vec<f64> = f.iter().zip(&rec).map(|(a, b)| a / norm - b).collect();
    let n = grid.dim() as u32;
    let per_level: usize = (0..m).map(|j| 1usize << (n * j)).sum();
    let ki = KeyIdentity {
        top: top.clone(),
        m,
        count: coefficients.iter().filter(|(_, c)| c.abs() > 1e-12).count(),
        coefficients,
        reconstruction_error: sigma.lp_norm(&err, 2.0),
        bound: ((1usize << n) - 1) * per_level,
    };
    Ok((ki, wavelets))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundConfig {
    pub trials: usize,
    pub seed: u64,
    /// Kernel-difference samples per trial.
    pub samples: usize,
    /// Depth for the A₂ scan and the Haar testing constant.
    pub depth: Option<u32>,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        Self { trials: 50, seed: 0, samples: 200, depth: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub triple: AlignedTriple,
    pub delta: f64,
    /// `|⟨T_σφ, 1_J⟩_ω| |J|^{1-λ/n} / |J|_ω`.
    pub r1: f64,
    pub floor: f64,
    pub sign_constant: bool,
    pub negligible_fraction: f64,
    pub reconstruction_error: f64,
    pub coefficient_count: usize,
    pub coefficient_bound: usize,
    /// `|⟨T_σφ, 1_J⟩_ω|` and its bound `‖φ‖ Σ|c_Q| ‖T_σ h_Q‖ |J|_ω^{1/2}`.
    pub pairing: f64,
    pub pairing_bound: f64,
    /// `(|J|_ω |I|_σ)^{1/2} / |I|^{1-λ/n}` over the Haar testing constant.
    pub local_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub config: LowerBoundConfig,
    pub depth: u32,
    pub trials_accepted: usize,
    pub skipped: usize,
    pub skip_reasons: Vec<String>,
    pub records: Vec<TrialRecord>,
    pub a2: f64,
    pub testing: f64,
    /// `A₂^λ / ℌ^glob`.
    pub constant: f64,
    pub max_local_constant: f64,
    pub min_r1: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl LowerBoundReport {
    pub fn ensure(&self) -> Result<()> {
        match self.failures.first() {
            None if self.passed => Ok(()),
            None => Err(Error::check("a2_lower_bound", "no accepted trials")),
            Some(f) => Err(Error::check("a2_lower_bound", f.clone())),
        }
    }
}

pub(crate) fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// A random cube with room below for the grandchildren and a direction that
/// points into the larger part of the window.
pub(crate) fn random_base(grid: &Grid, rng: &mut ChaCha8Rng) -> Result<(DyadicCube, Vec<f64>)> {
    let top = grid.max_level().checked_sub(3).filter(|&t| t >= 2).ok_or_else(|| {
        Error::invalid(format!("max_level {} leaves no room for aligned triples", grid.max_level()))
    })?;
    let k = rng.random_range(2..=top);
    let per = grid.per_axis(k);
    let coords: Vec<i64> = (0..grid.dim()).map(|_| rng.random_range(0..per)).collect();
    let axis = rng.random_range(0..grid.dim());
    let mut v = vec![0.0; grid.dim()];
    v[axis] = if 2 * coords[axis] + 1 < per { 1.0 } else { -1.0 };
    Ok((DyadicCube::new(k, coords), v))
}

fn vol_scale(grid: &Grid, q: &DyadicCube, lambda: f64) -> f64 {
    grid.to_axis(q).volume().powf(1.0 - lambda / grid.dim() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `0.9 · ½ dist(c, L) · min_{x ∈ J} |w·∇₂K(x, c)| · |J|^{1-λ/n}`.
fn predicted_floor(op: &DiscreteOperator, t: &AlignedTriple) -> f64 {
    let grid = op.grid();
    let k = op.kernel();
    let al = grid.to_axis(&t.l);
    let d_cl: f64 = al
        .lower
        .iter()
        .zip(&t.c)
        .map(|(lo, c)| {
            let gap = (lo - c).max(c - (lo + al.side)).max(0.0);
            gap * gap
        })
        .sum::<f64>()
        .sqrt();
    let min_grad = grid
        .cells_of(&t.j)
        .into_iter()
        .map(|i| {
            let x = grid.cell_center(i);
            let xc: Vec<f64> = x.iter().zip(&t.c).map(|(a, b)| a - b).collect();
            let r = xc.iter().map(|a| a * a).sum::<f64>().sqrt();
            let w: Vec<f64> = xc.iter().map(|a| a / r).collect();
            dot(&w, &k.grad_y(&x, &t.c)).abs()
        })
        .fold(f64::INFINITY, f64::min);
    0.9 * 0.5 * d_cl * min_grad * vol_scale(grid, &t.j, k.lambda())
}

/// Norms `‖T_σ h‖_{L²(ω)}` of the given wavelets.
fn image_norms(op: &DiscreteOperator, sigma: &MeshMeasure, omega: &MeshMeasure, hs: &[HaarWavelet]) -> Vec<f64> {
    hs.iter().map(|h| omega.lp_norm(&op.apply(sigma, &h.to_mesh(sigma.grid())), 2.0)).collect()
}

enum Trial {
    Skipped(String),
    Done(Box<TrialRecord>),
}

fn run_trial(op: &DiscreteOperator, sigma: &MeshMeasure, omega: &MeshMeasure, cfg: &LowerBoundConfig, testing: f64, trial: usize) -> Result<Trial> {
    let grid = sigma.grid();
    let kernel = op.kernel();
    let mut rng = trial_rng(cfg.seed, trial);
    let (base, v) = random_base(grid, &mut rng)?;
    let (triple, diff) = match accept_delta(kernel, op.truncation(), grid, &base, &v, cfg.samples, cfg.seed ^ trial as u64) {
        Ok(x) => x,
        Err(e @ Error::NoAlignedConfiguration(_)) => return Ok(Trial::Skipped(format!("{base}: {e}"))),
        Err(e) => return Err(e),
    };
    let phi = match phi_test_function(sigma, &triple) {
        Ok(p) => p,
        Err(Error::DegenerateMeasure(s)) => return Ok(Trial::Skipped(format!("{base}: {s}"))),
        Err(e) => return Err(e),
    };
    let tphi = op.apply(sigma, &phi.phi);
    let jcells = grid.cells_of(&triple.j);
    let s0 = tphi[jcells[0]].signum();
    let sign_constant = s0 != 0.0 && jcells.iter().all(|&i| tphi[i].signum() == s0);
    let wm = omega.cell_masses();
    let pairing: f64 = jcells.iter().map(|&i| wm[i] * tphi[i]).sum::<f64>().abs();
    let j_omega = omega.mass(&triple.j);
    let lambda = kernel.lambda();
    let r1 = if j_omega > 0.0 { pairing * vol_scale(grid, &triple.j, lambda) / j_omega } else { 0.0 };
    let (ki, hs) = key_identity(sigma, &phi.phi, &triple.i, triple.m)?;
    let norms = image_norms(op, sigma, omega, &hs);
    let sum_c: f64 = ki.coefficients.iter().zip(&norms).map(|((_, c), n)| c.abs() * n).sum();
    let pairing_bound = phi.norm * sum_c * j_omega.sqrt();
    let mixed = (j_omega * sigma.mass(&triple.i)).sqrt() / vol_scale(grid, &triple.i, lambda);
    Ok(Trial::Done(Box::new(TrialRecord {
        trial,
        delta: triple.delta,
        floor: predicted_floor(op, &triple),
        triple,
        r1,
        sign_constant,
        negligible_fraction: diff.negligible_fraction,
        reconstruction_error: ki.reconstruction_error,
        coefficient_count: ki.count,
        coefficient_bound: ki.bound,
        pairing,
        pairing_bound,
        local_constant: if testing > 0.0 { mixed / testing } else { f64::INFINITY },
    })))
}

/// Sample aligned triples, test the pointwise lower bound on `T_σφ` over `J`,
/// the Haar expansion of `φ`, and compare `A₂^λ` with `ℌ^glob`.
pub fn a2_lower_bound_experiment(
    op: &DiscreteOperator,
    sigma: &MeshMeasure,
    omega: &MeshMeasure,
    cfg: &LowerBoundConfig,
) -> Result<LowerBoundReport> {
    let grid = sigma.grid();
    if omega.grid() != grid || op.grid() != grid {
        return Err(Error::invalid("operator and measures must share the grid"));
    }
    let depth = cfg.depth.unwrap_or(grid.max_level());
    let testing = haar_testing(op, sigma, omega, TestingMode::Global, depth, 1, cfg.seed)?.value;
    let a2 = a2_lambda(sigma, omega, op.kernel().lambda(), &CubeSource::Dyadic { depth })?.value;
    let outcomes: Vec<Result<Trial>> = (0..cfg.trials).into_par_iter().map(|t| run_trial(op, sigma, omega, cfg, testing, t)).collect();
    let mut records = Vec::new();
    let mut skip_reasons = Vec::new();
    for o in outcomes {
        match o? {
            Trial::Done(r) => records.push(*r),
            Trial::Skipped(s) => skip_reasons.push(s),
        }
    }
    let mut failures = Vec::new();
    for r in &records {
        let t = &r.triple;
        let name = format!("trial {} (I = {}, J = {}, K = {}, L = {})", r.trial, t.i, t.j, t.k, t.l);
        if !r.sign_constant {
            failures.push(format!("{name}: T_sigma phi changes sign on J"));
        }
        if !(r.r1 >= r.floor && r.r1 > 0.0) {
            failures.push(format!("{name}: r1 = {} below floor {}", r.r1, r.floor));
        }
        if !(r.reconstruction_error < 1e-10) {
            failures.push(format!("{name}: key identity error {}", r.reconstruction_error));
        }
        if r.coefficient_count > r.coefficient_bound {
            failures.push(format!("{name}: {} coefficients exceed {}", r.coefficient_count, r.coefficient_bound));
        }
        if r.pairing > r.pairing_bound * (1.0 + 1e-9) {
            failures.push(format!("{name}: pairing {} above its Haar bound {}", r.pairing, r.pairing_bound));
        }
    }
    let constant = if testing > 0.0 { a2 / testing } else { f64::INFINITY };
    if !constant.is_finite() {
        failures.push(format!("A2 / H is not finite (A2 = {a2}, H = {testing})"));
    }
    Ok(LowerBoundReport {
        config: cfg.clone(),
        depth,
        trials_accepted: records.len(),
        skipped: skip_reasons.len(),
        skip_reasons,
        max_local_constant: records.iter().map(|r| r.local_constant).fold(0.0, f64::max),
        min_r1: records.iter().map(|r| r.r1).fold(f64::INFINITY, f64::min),
        passed: failures.is_empty() && !records.is_empty(),
        records,
        a2,
        testing,
        constant,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsorptionReport {
    pub depth: u32,
    pub testing: f64,
    pub a2: f64,
    pub triple_testing: f64,
    /// Smallest `C` with `X_L <= C(ℌ² + A₂√X_L)` for every scanned `L`.
    pub constant: f64,
    pub witness: Option<DyadicCube>,
    /// `𝔗^trip / (ℌ + A₂)`.
    pub constant_after_absorption: f64,
    /// `C·A₂ + √C·ℌ`, which bounds `𝔗^trip` when the constant holds.
    pub implied_bound: f64,
    /// Largest `|∫_{3L} T1_L T1_K dω| / (‖T1_L‖ ‖T1_K‖)` over separated pairs.
    pub cross_ratio_max: f64,
    pub pairs: usize,
    pub cubes: usize,
}

/// For each `L` of levels `0..depth`, the smallest constant in
/// `∫_{3L}|T_σ(1_L/√|L|)|² dω <= C ℌ² + C A₂ (∫_{3L}|T_σ(1_L/√|L|)|² dω)^{1/2}`.
pub fn triple_absorption_experiment(op: &DiscreteOperator, sigma: &MeshMeasure, omega: &MeshMeasure, depth: u32) -> Result<AbsorptionReport> {
    let grid = sigma.grid();
    if omega.grid() != grid || op.grid() != grid {
        return Err(Error::invalid("operator and measures must share the grid"));
    }
    let testing = haar_testing(op, sigma, omega, TestingMode::Global, depth, 1, 0)?.value;
    let a2 = a2_lambda(sigma, omega, op.kernel().lambda(), &CubeSource::Dyadic { depth })?.value;
    let trip = cube_testing(op, sigma, omega, CubeMode::Triple, &CubeSource::Dyadic { depth })?.value;
    let cubes: Vec<DyadicCube> = grid.cubes_to_depth(depth).into_iter().filter(|q| sigma.mass(q) > 0.0).collect();
    let wm = omega.cell_masses();
    let images: Vec<Vec<f64>> = cubes
        .par_iter()
        .map(|q| {
            let s = 1.0 / sigma.mass(q).sqrt();
            let mut f = vec![0.0; grid.cell_count()];
            for c in grid.cells_of(q) {
                f[c] = s;
            }
            op.apply(sigma, &f)
        })
        .collect();
    let triples: Vec<Vec<(usize, f64)>> = cubes.iter().map(|q| cube_cells(grid, &CubeRef::Axis(grid.to_axis(q).dilate(3.0)))).collect();
    let on = |g: &[f64], h: &[f64], cells: &[(usize, f64)]| -> f64 { cells.iter().map(|&(i, fr)| fr * wm[i] * g[i] * h[i]).sum() };
    let mut constant = 0.0f64;
    let mut witness = None;
    for (idx, q) in cubes.iter().enumerate() {
        let x = on(&images[idx], &images[idx], &triples[idx]);
        let denom = testing * testing + a2 * x.sqrt();
        let c = if x == 0.0 { 0.0 } else if denom > 0.0 { x / denom } else { f64::INFINITY };
        if c > constant {
            constant = c;
            witness = Some(q.clone());
        }
    }
    let lookup: std::collections::HashMap<&DyadicCube, usize> = cubes.iter().enumerate().map(|(i, q)| (q, i)).collect();
    let mut cross_ratio_max = 0.0f64;
    let mut pairs = 0;
    for (idx, l) in cubes.iter().enumerate() {
        let al3 = grid.to_axis(l).dilate(3.0);
        let partner = (1..=l.level).find_map(|m| {
            let anc = l.ancestor(m)?;
            grid.grandchildren(&anc, m, false)
                .ok()?
                .into_iter()
                .find(|k| lookup.contains_key(k) && !grid.to_axis(k).dilate(3.0).interiors_meet(&al3))
        });
        let Some(k) = partner else { continue };
        let kidx = lookup[&k];
        let xl = on(&images[idx], &images[idx], &triples[idx]);
        let xk = on(&images[kidx], &images[kidx], &triples[idx]);
        let chain = (xl * xk).sqrt();
        if chain > 0.0 {
            cross_ratio_max = cross_ratio_max.max(on(&images[idx], &images[kidx], &triples[idx]).abs() / chain);
            pairs += 1;
        }
    }
    let denom = testing + a2;
    Ok(AbsorptionReport {
        depth,
        testing,
        a2,
        triple_testing: trip,
        constant,
        witness,
        constant_after_absorption: if denom > 0.0 { trip / denom } else { 0.0 },
        implied_bound: constant * a2 + constant.sqrt() * testing,
        cross_ratio_max,
        pairs,
        cubes: cubes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;
    use crate::operator::{Kernel, Truncation};

    fn setup(n: usize, lv: u32, k: Kernel, s: MeasureSpec, w: MeasureSpec) -> (DiscreteOperator, MeshMeasure, MeshMeasure) {
        let g = Grid::new(n, lv).unwrap();
        let op = DiscreteOperator::new(&g, &k, &Truncation::default_for(&g)).unwrap();
        (op, MeshMeasure::generate(&g, &s).unwrap(), MeshMeasure::generate(&g, &w).unwrap())
    }

    #[test]
    fn key_identity_on_phi() {
        let g = Grid::new(1, 8).unwrap();
        let sigma = MeshMeasure::generate(&g, &MeasureSpec::RandomDyadicDoubling { r: 3.0, seed: 5 }).unwrap();
        let mut f = vec![0.0; g.cell_count()];
        let top = DyadicCube::new(2, vec![1]);
        let kids = g.grandchildren(&top, 3, false).unwrap();
        for c in g.cells_of(&kids[1]) {
            f[c] = -1.0 / sigma.mass(&kids[1]);
        }
        for c in g.cells_of(&kids[6]) {
            f[c] = 1.0 / sigma.mass(&kids[6]);
        }
        let (ki, _) = key_identity(&sigma, &f, &top, 3).unwrap();
        assert!(ki.reconstruction_error < 1e-12);
        assert_eq!(ki.bound, 7);
        assert!(ki.count <= 7 && ki.count >= 1);
        let s: f64 = ki.coefficients.iter().map(|(_, c)| c * c).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hilbert_lebesgue_trials() {
        let (op, s, w) = setup(1, 9, Kernel::hilbert(), MeasureSpec::Lebesgue, MeasureSpec::Lebesgue);
        let r = a2_lower_bound_experiment(&op, &s, &w, &LowerBoundConfig { trials: 12, seed: 4, samples: 100, depth: Some(7) }).unwrap();
        assert!(r.passed, "{:?}", r.failures);
        assert!(r.records.iter().all(|t| t.r1 > 0.0 && t.sign_constant));
        assert!(r.trials_accepted >= 6);
        assert!((r.a2 - 1.0).abs() < 1e-12);
        let again = a2_lower_bound_experiment(&op, &s, &w, &LowerBoundConfig { trials: 12, seed: 4, samples: 100, depth: Some(7) }).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn doubling_trials() {
        let (op, s, w) = setup(
            1,
            9,
            Kernel::fractional_integral(1, 0.5).unwrap(),
            MeasureSpec::RandomDyadicDoubling { r: 2.0, seed: 1 },
            MeasureSpec::RandomDyadicDoubling { r: 2.0, seed: 2 },
        );
        let r = a2_lower_bound_experiment(&op, &s, &w, &LowerBoundConfig { trials: 8, seed: 9, samples: 100, depth: Some(7) }).unwrap();
        assert!(r.passed, "{:?}", r.failures);
        assert!(r.constant.is_finite() && r.constant > 0.0);
    }

    #[test]
    fn absorption_zero_kernel() {
        let (op, s, w) = setup(1, 7, Kernel::zero(1), MeasureSpec::Lebesgue, MeasureSpec::Lebesgue);
        let r = triple_absorption_experiment(&op, &s, &w, 5).unwrap();
        assert_eq!(r.constant, 0.0);
        assert_eq!(r.triple_testing, 0.0);
    }

    #[test]
    fn absorption_hilbert() {
        let (op, s, w) = setup(1, 9, Kernel::hilbert(), MeasureSpec::Lebesgue, MeasureSpec::Lebesgue);
        let r5 = triple_absorption_experiment(&op, &s, &w, 5).unwrap();
        let r6 = triple_absorption_experiment(&op, &s, &w, 6).unwrap();
        assert!(r5.triple_testing <= r5.implied_bound * (1.0 + 1e-12));
        assert!(r5.cross_ratio_max <= 1.0 + 1e-12 && r5.pairs > 0);
        let rel = (r6.constant_after_absorption - r5.constant_after_absorption).abs() / r5.constant_after_absorption;
        assert!(rel < 0.10, "{r5:?} {r6:?}");
    }
}
