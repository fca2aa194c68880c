//! The quadratic A_p bound through families of aligned configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::aligned::{accept_delta_in, phi_test_function, AlignedTriple};
use super::lower_bound::key_identity;
use crate::characteristics::{quadratic_haar_testing, quadratic_nested_ratio, LpConfig, NestedTerm};
use crate::dyadic::{DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::measure::MeshMeasure;
use crate::operator::DiscreteOperator;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticConfig {
    pub p: f64,
    pub families: usize,
    pub family_size: usize,
    /// Generations between `I_i` and `J_i`.
    pub generations: u32,
    pub samples: usize,
    pub seed: u64,
    /// Depth and random family count for the quadratic Haar testing constant.
    pub testing_depth: Option<u32>,
    pub testing_families: usize,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self { p: 2.0, families: 20, family_size: 4, generations: 3, samples: 100, seed: 0, testing_depth: None, testing_families: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermRecord {
    pub cube: DyadicCube,
    /// The cube `I_i'` holding `K_i, L_i`.
    pub inner: DyadicCube,
    pub triple: AlignedTriple,
    pub coef: f64,
    /// `min_{x ∈ J_i} |T_σφ_i(x)| |J_i|^{1-λ/n}`.
    pub pointwise: f64,
    pub sign_constant: bool,
    /// `‖φ_i‖² |J_i|_σ`.
    pub phi_band: f64,
    pub reconstruction_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyRecord {
    pub terms: Vec<TermRecord>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticReport {
    pub config: QuadraticConfig,
    pub families: Vec<FamilyRecord>,
    pub skipped_terms: usize,
    /// `1 / min pointwise`, the constant in `1_J/|J|^{1-λ/n} <= C|T_σφ|1_J`.
    pub pointwise_constant: f64,
    pub phi_band: (f64, f64),
    pub max_reconstruction_error: f64,
    pub max_ratio: f64,
    pub testing: f64,
    /// `max ratio / ℌ^{ℓ²}`.
    pub constant: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl QuadraticReport {
    pub fn ensure(&self) -> Result<()> {
        match self.failures.first() {
            None if self.passed => Ok(()),
            None => Err(Error::check("quadratic_ap", "no family could be built")),
            Some(f) => Err(Error::check("quadratic_ap", f.clone())),
        }
    }
}

fn unit_toward(from: &[f64], to: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
    let axis = (0..d.len()).max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs())).unwrap_or(0);
    let mut v = vec![0.0; d.len()];
    v[axis] = d[axis].signum();
    v
}

/// Aligned configuration for `J ⊂ I`: `I'` runs over the other subcubes of
/// `I` at the level of `J`, nearest to `c_I` first.
fn inner_triple(op: &DiscreteOperator, i: &DyadicCube, j: &DyadicCube, samples: usize, seed: u64) -> Option<(DyadicCube, AlignedTriple)> {
    let grid = op.grid();
    let ci = grid.cube_center(i);
    let cj = grid.cube_center(j);
    let mut cands = grid.grandchildren(i, j.level - i.level, false).ok()?;
    cands.retain(|q| q != j);
    let dist = |q: &DyadicCube| grid.cube_center(q).iter().zip(&ci).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    cands.sort_by(|a, b| dist(a).total_cmp(&dist(b)).then_with(|| a.cmp(b)));
    let pool = [j.clone()];
    cands.into_iter().find_map(|q| {
        let v = unit_toward(&grid.cube_center(&q), &cj);
        accept_delta_in(op.kernel(), op.truncation(), grid, &q, &v, Some(&pool), samples, seed)
            .ok()
            .map(|(t, _)| (q, t))
    })
}

fn term_record(
    op: &DiscreteOperator,
    sigma: &MeshMeasure,
    cube: DyadicCube,
    inner: DyadicCube,
    triple: AlignedTriple,
    coef: f64,
) -> Result<Option<TermRecord>> {
    let grid = sigma.grid();
    let phi = match phi_test_function(sigma, &triple) {
        Ok(p) => p,
        Err(Error::DegenerateMeasure(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let t = op.apply(sigma, &phi.phi);
    let cells = grid.cells_of(&triple.j);
    let s0 = t[cells[0]].signum();
    let sign_constant = s0 != 0.0 && cells.iter().all(|&c| t[c].signum() == s0);
    let scale = grid.to_axis(&triple.j).volume().powf(1.0 - op.kernel().lambda() / grid.dim() as f64);
    let pointwise = cells.iter().map(|&c| t[c].abs()).fold(f64::INFINITY, f64::min) * scale;
    let (ki, _) = key_identity(sigma, &phi.phi, &triple.i, triple.m)?;
    Ok(Some(TermRecord {
        phi_band: phi.norm * phi.norm * sigma.mass(&triple.j),
        cube,
        inner,
        triple,
        coef,
        pointwise,
        sign_constant,
        reconstruction_error: ki.reconstruction_error,
    }))
}

fn random_term(grid: &Grid, generations: u32, rng: &mut ChaCha8Rng) -> Result<(DyadicCube, DyadicCube)> {
    let top = grid.max_level().checked_sub(generations + 3).filter(|&t| t >= 1).ok_or_else(|| {
        Error::invalid(format!(
            "max_level {} leaves no room for {generations} generations plus grandchildren",
            grid.max_level()
        ))
    })?;
    let k = rng.random_range(1..=top);
    let per = grid.per_axis(k);
    let i = DyadicCube::new(k, (0..grid.dim()).map(|_| rng.random_range(0..per)).collect());
    let subs = grid.grandchildren(&i, generations, false)?;
    let j = subs[rng.random_range(0..subs.len())].clone();
    Ok((i, j))
}

/// Random families `{(b_i, I_i, J_i)}` with `φ_i` built on `I_i' ⊂ I_i`;
/// checks the pointwise bound on `J_i`, the expansion of each `φ_i`, and
/// compares the nested quadratic ratio with quadratic Haar testing.
pub fn quadratic_ap_experiment(op: &DiscreteOperator, sigma: &MeshMeasure, omega: &MeshMeasure, cfg: &QuadraticConfig) -> Result<QuadraticReport> {
    LpConfig::new(cfg.p)?;
    let grid = sigma.grid();
    if omega.grid() != grid || op.grid() != grid {
        return Err(Error::invalid("operator and measures must share the grid"));
    }
    if cfg.generations < 2 {
        return Err(Error::invalid("generations must be at least 2 so that J and I' fit inside I"));
    }
    let built: Vec<Result<(Vec<TermRecord>, usize)>> = (0..cfg.families)
        .into_par_iter()
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(f as u64);
            let size = if f == 0 { 1 } else { rng.random_range(1..=cfg.family_size.max(1)) };
            let mut terms = Vec::new();
            let mut skipped = 0;
            for s in 0..size {
                let (i, j) = random_term(grid, cfg.generations, &mut rng)?;
                let coef: f64 = if s == 0 && f == 0 { 1.0 } else { rng.sample(StandardNormal) };
                match inner_triple(op, &i, &j, cfg.samples, cfg.seed ^ ((f as u64) << 16) ^ s as u64) {
                    Some((inner, t)) => match term_record(op, sigma, i, inner, t, coef)? {
                        Some(r) => terms.push(r),
                        None => skipped += 1,
                    },
                    None => skipped += 1,
                }
            }
            Ok((terms, skipped))
        })
        .collect();
    let lambda = op.kernel().lambda();
    let mut families = Vec::new();
    let mut skipped_terms = 0;
    for b in built {
        let (terms, s) = b?;
        skipped_terms += s;
        if terms.is_empty() {
            continue;
        }
        let nested: Vec<NestedTerm> = terms
            .iter()
            .map(|t| NestedTerm { cube: t.cube.clone(), sub: t.triple.j.clone(), coef: t.coef })
            .collect();
        let ratio = quadratic_nested_ratio(sigma, omega, lambda, cfg.p, &nested);
        families.push(FamilyRecord { terms, ratio });
    }
    let depth = cfg.testing_depth.unwrap_or(grid.max_level());
    let testing = quadratic_haar_testing(op, sigma, omega, cfg.p, depth, cfg.testing_families, cfg.family_size, cfg.seed)?.value;
    let all = || families.iter().flat_map(|f| f.terms.iter());
    let mut failures = Vec::new();
    for t in all() {
        let tr = &t.triple;
        let name = format!("I = {}, J = {}, K = {}, L = {}", t.cube, tr.j, tr.k, tr.l);
        if !t.sign_constant || !(t.pointwise > 0.0) {
            failures.push(format!("{name}: T_sigma phi vanishes or changes sign on J"));
        }
        if !(t.reconstruction_error < 1e-10) {
            failures.push(format!("{name}: key identity error {}", t.reconstruction_error));
        }
    }
    let min_pt = all().map(|t| t.pointwise).fold(f64::INFINITY, f64::min);
    let band = all().fold((f64::INFINITY, 0.0f64), |(a, b), t| (a.min(t.phi_band), b.max(t.phi_band)));
    let max_ratio = families.iter().map(|f| f.ratio).fold(0.0, f64::max);
    Ok(QuadraticReport {
        config: cfg.clone(),
        skipped_terms,
        pointwise_constant: 1.0 / min_pt,
        phi_band: band,
        max_reconstruction_error: all().map(|t| t.reconstruction_error).fold(0.0, f64::max),
        max_ratio,
        testing,
        constant: if testing > 0.0 { max_ratio / testing } else { f64::INFINITY },
        passed: failures.is_empty() && !families.is_empty(),
        failures,
        families,
    })
}
