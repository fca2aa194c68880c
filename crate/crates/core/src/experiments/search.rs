//! Randomised search for measure pairs with a large norm-to-testing ratio.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::{comparability, Comparability};
use crate::error::{Error, Result};
use crate::measure::{MeasureSpec, MeshMeasure};
use crate::operator::DiscreteOperator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    /// Greedy mutation rounds per iteration.
    pub mutations: usize,
    /// Standard deviation of the log-normal mass factors.
    pub step: f64,
    pub depth: u32,
    pub rotation_samples: u32,
    pub seed: u64,
    /// Leaderboard length.
    pub keep: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { iterations: 8, mutations: 6, step: 0.5, depth: 5, rotation_samples: 1, seed: 0, keep: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub iteration: usize,
    pub sigma: String,
    pub omega: String,
    pub ratio: f64,
    pub norm: f64,
    pub testing: f64,
    pub testing_dual: f64,
    pub converged: bool,
    pub accepted_mutations: usize,
    pub doubling_sigma: f64,
    pub doubling_omega: f64,
    /// Hash of both cell-mass vectors.
    pub hash: u64,
    #[serde(skip)]
    pub sigma_masses: Vec<f64>,
    #[serde(skip)]
    pub omega_masses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchReport {
    pub config: SearchConfig,
    pub family: Vec<(MeasureSpec, MeasureSpec)>,
    /// Best first; ties broken by hash.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

fn evaluate(op: &DiscreteOperator, s: &MeshMeasure, w: &MeshMeasure, cfg: &SearchConfig) -> Result<Comparability> {
    comparability(op, s, w, cfg.depth, cfg.rotation_samples, cfg.seed)
}

fn mutate(mu: &MeshMeasure, rng: &mut ChaCha8Rng, step: f64) -> Result<MeshMeasure> {
    let normal = Normal::new(0.0, step).map_err(|e| Error::invalid(e.to_string()))?;
    let masses = mu.cell_masses().iter().map(|m| m * normal.sample(rng).exp()).collect();
    MeshMeasure::from_cells(mu.grid().clone(), masses, format!("{}+mut", mu.label().trim_end_matches("+mut")))
}

fn doubling(mu: &MeshMeasure, depth: u32) -> f64 {
    let d = depth.min(mu.grid().max_level().saturating_sub(1)).max(1);
    mu.doubling_constant(d).map(|r| r.constant).unwrap_or(f64::INFINITY)
}

fn one_iteration(op: &DiscreteOperator, family: &[(MeasureSpec, MeasureSpec)], cfg: &SearchConfig, it: usize) -> Result<LeaderboardEntry> {
    let grid = op.grid();
    let (ss, ws) = &family[it % family.len()];
    let mut sigma = MeshMeasure::generate(grid, ss)?;
    let mut omega = MeshMeasure::generate(grid, ws)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(it as u64);
    let mut best = evaluate(op, &sigma, &omega, cfg)?;
    let mut accepted = 0;
    // iterations past the first family pass start from a random perturbation
    if it >= family.len() {
        sigma = mutate(&sigma, &mut rng, cfg.step)?;
        omega = mutate(&omega, &mut rng, cfg.step)?;
        best = evaluate(op, &sigma, &omega, cfg)?;
    }
    for _ in 0..cfg.mutations {
        let which: bool = rng.random();
        let (s2, w2) = if which {
            (mutate(&sigma, &mut rng, cfg.step)?, omega.clone())
        } else {
            (sigma.clone(), mutate(&omega, &mut rng, cfg.step)?)
        };
        let c = evaluate(op, &s2, &w2, cfg)?;
        if c.ratio > best.ratio {
            best = c;
            sigma = s2;
            omega = w2;
            accepted += 1;
        }
    }
    Ok(LeaderboardEntry {
        iteration: it,
        sigma: sigma.label().to_string(),
        omega: omega.label().to_string(),
        ratio: best.ratio,
        norm: best.norm,
        testing: best.testing,
        testing_dual: best.testing_dual,
        converged: best.converged,
        accepted_mutations: accepted,
        doubling_sigma: doubling(&sigma, cfg.depth),
        doubling_omega: doubling(&omega, cfg.depth),
        hash: sigma.id().rotate_left(17) ^ omega.id(),
        sigma_masses: sigma.cell_masses().to_vec(),
        omega_masses: omega.cell_masses().to_vec(),
    })
}

/// Greedy search over mutations of the family's measure pairs, maximising
/// `𝔑 / (ℌ^glob + ℌ*^glob)`. The result is a leaderboard, not a verdict.
pub fn counterexample_search(op: &DiscreteOperator, family: &[(MeasureSpec, MeasureSpec)], cfg: &SearchConfig) -> Result<SearchReport> {
    if family.is_empty() {
        return Err(Error::invalid("measure family is empty"));
    }
    if !(cfg.step > 0.0) {
        return Err(Error::invalid("mutation step must be positive"));
    }
    let runs: Vec<Result<LeaderboardEntry>> = (0..cfg.iterations).into_par_iter().map(|it| one_iteration(op, family, cfg, it)).collect();
    let mut entries = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let min_ratio = entries.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = entries.iter().map(|e| e.ratio).fold(0.0, f64::max);
    entries.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.hash.cmp(&b.hash)));
    entries.truncate(cfg.keep.max(1));
    Ok(SearchReport { config: cfg.clone(), family: family.to_vec(), leaderboard: entries, min_ratio, max_ratio })
}

impl SearchReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "rank", "iteration", "sigma", "omega", "ratio", "norm", "testing", "testing_dual", "doubling_sigma", "doubling_omega",
            "hash",
        ])?;
        for (rank, e) in self.leaderboard.iter().enumerate() {
            wtr.write_record([
                (rank + 1).to_string(),
                e.iteration.to_string(),
                e.sigma.clone(),
                e.omega.clone(),
                format!("{:.12e}", e.ratio),
                format!("{:.12e}", e.norm),
                format!("{:.12e}", e.testing),
                format!("{:.12e}", e.testing_dual),
                format!("{:.6e}", e.doubling_sigma),
                format!("{:.6e}", e.doubling_omega),
                format!("{:016x}", e.hash),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
