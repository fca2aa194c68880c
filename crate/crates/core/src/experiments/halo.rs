//! Covers of a cube by dyadic cubes inside a concentric dilate.

use serde::Serialize;

use crate::dyadic::{AxisCube, DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::measure::MeshMeasure;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HaloCover {
    pub i: AxisCube,
    pub cubes: Vec<DyadicCube>,
    pub eta: f64,
    pub epsilon: f64,
    /// Number of cubes in the cover.
    pub c0: usize,
    /// Generations below `ℓ(I)` that were needed.
    pub t: u32,
    pub mass: f64,
    pub leftover: f64,
    pub leftover_ratio: f64,
}

fn maximal_inside(grid: &Grid, target: &AxisCube, q: DyadicCube, max_level: u32, out: &mut Vec<DyadicCube>) {
    let a = grid.to_axis(&q);
    if target.contains_cube(&a) {
        out.push(q);
        return;
    }
    if q.level >= max_level || !a.interiors_meet(target) {
        return;
    }
    for c in q.children_unchecked() {
        maximal_inside(grid, target, c, max_level, out);
    }
}

/// Maximal dyadic cubes inside `ηI` with side at least `2^{-t}ℓ(I)`, for
/// `t = 0, 1, ...` until `|I \ ∪J_k|_μ < ε|I|_μ`.
pub fn halo_cover(mu: &MeshMeasure, i: &AxisCube, epsilon: f64, eta: f64) -> Result<HaloCover> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let grid = mu.grid();
    if i.dim() != grid.dim() {
        return Err(Error::invalid("cube dimension differs from the grid"));
    }
    let (mass, _) = mu.cube_mass(i);
    if mass <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("cube at {:?} has zero mass", i.lower)));
    }
    let target = i.dilate(eta);
    let mut t = 0u32;
    loop {
        let side = i.side * 0.5f64.powi(t as i32);
        // deepest level whose side is still >= side, up to rounding
        let depth = (grid.window_side() / side * (1.0 + 1e-12)).log2().floor();
        if depth > grid.max_level() as f64 {
            let ratio = leftover_with(mu, &target, grid.max_level(), mass) / mass;
            return Err(Error::HaloExhausted { t, leftover_ratio: ratio });
        }
        let depth = depth.max(0.0) as u32;
        let mut cubes = Vec::new();
        maximal_inside(grid, &target, DyadicCube::root(grid.dim()), depth, &mut cubes);
        let covered: f64 = cubes.iter().map(|q| mu.mass(q)).sum();
        let leftover = (mass - covered).max(0.0);
        if leftover < epsilon * mass {
            return Ok(HaloCover {
                i: i.clone(),
                c0: cubes.len(),
                cubes,
                eta,
                epsilon,
                t,
                mass,
                leftover,
                leftover_ratio: leftover / mass,
            });
        }
        t += 1;
    }
}

fn leftover_with(mu: &MeshMeasure, target: &AxisCube, depth: u32, mass: f64) -> f64 {
    let mut cubes = Vec::new();
    maximal_inside(mu.grid(), target, DyadicCube::root(mu.grid().dim()), depth, &mut cubes);
    (mass - cubes.iter().map(|q| mu.mass(q)).sum::<f64>()).max(0.0)
}

impl HaloCover {
    /// Recompute containment, disjointness and the leftover mass.
    pub fn verify(&self, mu: &MeshMeasure) -> Result<()> {
        let grid = mu.grid();
        let target = self.i.dilate(self.eta);
        for q in &self.cubes {
            if !target.contains_cube(&grid.to_axis(q)) {
                return Err(Error::check("halo_cover", format!("{q} is not inside eta I")));
            }
        }
        for (a, qa) in self.cubes.iter().enumerate() {
            for qb in &self.cubes[a + 1..] {
                if qa.contains(qb) || qb.contains(qa) {
                    return Err(Error::check("halo_cover", format!("{qa} and {qb} overlap")));
                }
            }
        }
        let (mass, _) = mu.cube_mass(&self.i);
        let covered: f64 = self.cubes.iter().map(|q| mu.mass(q)).sum();
        let left = mass - covered;
        if !(left < self.epsilon * mass) {
            return Err(Error::check(
                "halo_cover",
                format!("leftover {left} is not below {} of |I| = {mass}", self.epsilon),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    #[test]
    fn dyadic_cube_covers_itself() {
        let g = Grid::new(2, 6).unwrap();
        let mu = MeshMeasure::generate(&g, &MeasureSpec::RandomDyadicDoubling { r: 2.0, seed: 1 }).unwrap();
        let i = g.to_axis(&DyadicCube::new(2, vec![1, 2]));
        let h = halo_cover(&mu, &i, 0.01, 1.0).unwrap();
        assert_eq!(h.cubes, vec![DyadicCube::new(2, vec![1, 2])]);
        assert_eq!((h.t, h.leftover), (0, 0.0));
        h.verify(&mu).unwrap();
    }

    #[test]
    fn lebesgue_shell_blocks_the_criterion() {
        // |I \ 0.9 I| = 0.1 |I| on the line, so the strict bound is out of reach
        let g = Grid::new(1, 12).unwrap();
        let mu = MeshMeasure::generate(&g, &MeasureSpec::Lebesgue).unwrap();
        let i = AxisCube::new(vec![0.3], 0.25);
        match halo_cover(&mu, &i, 0.1, 0.9) {
            Err(Error::HaloExhausted { leftover_ratio, .. }) => assert!(leftover_ratio >= 0.1 - 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let h = halo_cover(&mu, &i, 0.15, 0.9).unwrap();
        h.verify(&mu).unwrap();
        assert!(h.leftover_ratio < 0.15 && h.t >= 1);
    }

    #[test]
    fn heavy_cell_inside() {
        let g = Grid::new(1, 8).unwrap();
        let mu = MeshMeasure::generate(&g, &MeasureSpec::NearPointMass { sharpness: 6.0, cell: Some(100) }).unwrap();
        let i = AxisCube::new(vec![0.3], 0.2);
        let h = halo_cover(&mu, &i, 0.1, 0.9).unwrap();
        h.verify(&mu).unwrap();
        assert!(h.t <= 6 && h.leftover_ratio < 0.1);
    }

    #[test]
    fn bad_parameters() {
        let g = Grid::new(1, 6).unwrap();
        let mu = MeshMeasure::generate(&g, &MeasureSpec::Lebesgue).unwrap();
        let i = AxisCube::new(vec![0.1], 0.3);
        assert!(halo_cover(&mu, &i, 0.1, 0.0).is_err());
        assert!(halo_cover(&mu, &i, 0.0, 0.5).is_err());
    }
}
