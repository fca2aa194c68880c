//! Aligned cube configurations, the mean-zero test function built on them,
//! and the three-term split of the kernel difference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{AxisCube, DyadicCube, Grid};
use crate::error::{Error, Result};
use crate::measure::{MeshFn, MeshMeasure};
use crate::operator::{Kernel, Truncation};
use crate::quad::gauss_legendre;

/// Direction, aperture and optional grandchild depth of a sector search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorConfig {
    pub v: Vec<f64>,
    pub delta: f64,
    /// Fixed grandchild depth; `None` picks the smallest that works.
    #[serde(default)]
    pub m: Option<u32>,
}

impl SectorConfig {
    pub fn new(v: Vec<f64>, delta: f64) -> Self {
        Self { v, delta, m: None }
    }
}

/// `z ∈ S(v, δ)`, i.e. `|z/|z| - v| < δ`.
pub fn in_sector(z: &[f64], v: &[f64], delta: f64) -> bool {
    let r = norm(z);
    if r == 0.0 {
        return false;
    }
    let d: f64 = z.iter().zip(v).map(|(a, b)| (a / r - b).powi(2)).sum::<f64>().sqrt();
    d < delta
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn corners(q: &AxisCube) -> Vec<Vec<f64>> {
    let n = q.dim();
    (0..1usize << n)
        .map(|mask| (0..n).map(|d| q.lower[d] + if mask >> d & 1 == 1 { q.side } else { 0.0 }).collect())
        .collect()
}

/// Whether the closed cube `q` lies in `apex + S(v, δ)`.
///
/// For `δ < √2` the sector is convex, so checking the corners suffices.
pub fn cube_in_sector(q: &AxisCube, apex: &[f64], v: &[f64], delta: f64) -> bool {
    corners(q).iter().all(|c| in_sector(&sub(c, apex), v, delta))
}

/// `I, J` of equal side in direction `v`, and `K, L ⊂ I` a few generations down.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignedTriple {
    pub i: DyadicCube,
    pub j: DyadicCube,
    pub k: DyadicCube,
    pub l: DyadicCube,
    pub c: Vec<f64>,
    pub m: u32,
    pub delta: f64,
    pub v: Vec<f64>,
}

fn separation_band(side: f64, delta: f64) -> (f64, f64) {
    (side / (2.0 * delta), 2.0 * side / delta)
}

fn validate_sector(grid: &Grid, kernel: &Kernel, cfg: &SectorConfig) -> Result<()> {
    if cfg.v.len() != grid.dim() || (norm(&cfg.v) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("sector direction must be a unit vector of the grid dimension"));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::invalid("sector aperture must be positive"));
    }
    let d0 = kernel.ellipticity.delta0;
    if cfg.delta > d0 {
        return Err(Error::NoAlignedConfiguration(format!(
            "constraint `delta <= delta0` violated: delta = {}, delta0 = {d0}",
            cfg.delta
        )));
    }
    Ok(())
}

/// Same-level cubes `J` with `dist(I, J)` in the separation band and
/// `J ⊂ c_I + S(v, δ)`, best first.
fn j_candidates(grid: &Grid, cfg: &SectorConfig, base: &DyadicCube, pool: Option<&[DyadicCube]>) -> Result<Vec<DyadicCube>> {
    let a = grid.to_axis(base);
    let (lo, hi) = separation_band(a.side, cfg.delta);
    let target = a.side / cfg.delta;
    let all: Vec<DyadicCube> = match pool {
        Some(p) => p.to_vec(),
        None => grid.cubes_at_level(base.level).collect(),
    };
    let banded: Vec<(f64, DyadicCube)> = all
        .into_iter()
        .filter(|q| q != base)
        .map(|q| (a.distance(&grid.to_axis(&q)), q))
        .filter(|(d, _)| *d >= lo * (1.0 - 1e-12) && *d <= hi * (1.0 + 1e-12))
        .collect();
    if banded.is_empty() {
        return Err(Error::NoAlignedConfiguration(format!(
            "separation band: no cube at level {} with dist(I, J) in [{lo}, {hi}] inside the window",
            base.level
        )));
    }
    let ci = a.center();
    let mut ok: Vec<(f64, DyadicCube)> = banded
        .into_iter()
        .filter(|(_, q)| cube_in_sector(&grid.to_axis(q), &ci, &cfg.v, cfg.delta))
        .collect();
    if ok.is_empty() {
        return Err(Error::NoAlignedConfiguration(format!(
            "sector: no cube at distance ~ l(I)/delta lies in c_I + S(v, {})",
            cfg.delta
        )));
    }
    ok.sort_by(|x, y| (x.0 - target).abs().total_cmp(&(y.0 - target).abs()).then_with(|| x.1.cmp(&y.1)));
    Ok(ok.into_iter().map(|(_, q)| q).collect())
}

/// Best `K, L ∈ C^(m)(I)`: `dist(3K, 3L)` within a factor two of `ℓ(I)` and
/// `L ⊂ c_K + S(v, δ)`, with `c` closest to `c_I`.
fn kl_pair(grid: &Grid, cfg: &SectorConfig, base: &DyadicCube, m: u32) -> Option<(DyadicCube, DyadicCube)> {
    let side = grid.side_at(base.level);
    let ci = grid.cube_center(base);
    let subs = grid.grandchildren(base, m, false).ok()?;
    let axes: Vec<AxisCube> = subs.iter().map(|q| grid.to_axis(q)).collect();
    let triples: Vec<AxisCube> = axes.iter().map(|a| a.dilate(3.0)).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for (a, ka) in axes.iter().enumerate() {
        let ck = ka.center();
        for b in 0..axes.len() {
            if a == b {
                continue;
            }
            let d = triples[a].distance(&triples[b]);
            if d < side / 2.0 * (1.0 - 1e-12) || d > 2.0 * side * (1.0 + 1e-12) {
                continue;
            }
            if !cube_in_sector(&axes[b], &ck, &cfg.v, cfg.delta) {
                continue;
            }
            let cl = axes[b].center();
            let c: Vec<f64> = ck.iter().zip(&cl).map(|(x, y)| (x + y) / 2.0).collect();
            let score = norm(&sub(&c, &ci));
            if best.is_none_or(|(s, _, _)| score < s - 1e-15) {
                best = Some((score, a, b));
            }
        }
    }
    best.map(|(_, a, b)| (subs[a].clone(), subs[b].clone()))
}

fn complete_triple(grid: &Grid, cfg: &SectorConfig, base: &DyadicCube, j: DyadicCube) -> Result<AlignedTriple> {
    let room = grid.max_level() - base.level;
    let ms: Vec<u32> = match cfg.m {
        Some(m) if m > room => {
            return Err(Error::NoAlignedConfiguration(format!(
                "grandchild depth m = {m} exceeds the {room} levels below I"
            )))
        }
        Some(m) => vec![m],
        None => (1..=room).collect(),
    };
    for m in ms {
        if let Some((k, l)) = kl_pair(grid, cfg, base, m) {
            let ck = grid.cube_center(&k);
            let cl = grid.cube_center(&l);
            let c = ck.iter().zip(&cl).map(|(x, y)| (x + y) / 2.0).collect();
            return Ok(AlignedTriple { i: base.clone(), j, k, l, c, m, delta: cfg.delta, v: cfg.v.clone() });
        }
    }
    Err(Error::NoAlignedConfiguration(format!(
        "no K, L in C^(m)(I) with dist(3K, 3L) ~ l(I) and L in c_K + S(v, {}) for m up to {room}",
        cfg.delta
    )))
}

/// Deterministic search for an aligned configuration around `base`.
pub fn build_aligned_triple(grid: &Grid, kernel: &Kernel, cfg: &SectorConfig, base: &DyadicCube) -> Result<AlignedTriple> {
    validate_sector(grid, kernel, cfg)?;
    let js = j_candidates(grid, cfg, base, None)?;
    complete_triple(grid, cfg, base, js.into_iter().next().expect("nonempty candidates"))
}

/// As [`build_aligned_triple`] with `J` drawn from a given pool.
pub fn build_aligned_triple_in(
    grid: &Grid,
    kernel: &Kernel,
    cfg: &SectorConfig,
    base: &DyadicCube,
    pool: &[DyadicCube],
) -> Result<AlignedTriple> {
    validate_sector(grid, kernel, cfg)?;
    let js = j_candidates(grid, cfg, base, Some(pool))?;
    complete_triple(grid, cfg, base, js.into_iter().next().expect("nonempty candidates"))
}

impl AlignedTriple {
    /// Recheck every geometric constraint of the configuration.
    pub fn verify(&self, grid: &Grid) -> Result<()> {
        let fail = |what: &str| Err(Error::check("aligned_triple", what.to_string()));
        let (ai, aj) = (grid.to_axis(&self.i), grid.to_axis(&self.j));
        if self.i.level != self.j.level {
            return fail("I and J differ in side");
        }
        let (lo, hi) = separation_band(ai.side, self.delta);
        let d = ai.distance(&aj);
        if d < lo * (1.0 - 1e-12) || d > hi * (1.0 + 1e-12) {
            return fail("dist(I, J) outside the separation band");
        }
        if !cube_in_sector(&aj, &ai.center(), &self.v, self.delta) {
            return fail("J not in c_I + S(v, delta)");
        }
        if self.k.level != self.i.level + self.m || self.l.level != self.k.level {
            return fail("K, L not m-grandchildren");
        }
        if !self.i.contains(&self.k) || !self.i.contains(&self.l) || self.k == self.l {
            return fail("K, L not distinct subcubes of I");
        }
        let (ak, al) = (grid.to_axis(&self.k), grid.to_axis(&self.l));
        let d3 = ak.dilate(3.0).distance(&al.dilate(3.0));
        if d3 < ai.side / 2.0 * (1.0 - 1e-12) || d3 > 2.0 * ai.side * (1.0 + 1e-12) {
            return fail("dist(3K, 3L) not comparable to l(I)");
        }
        if !cube_in_sector(&al, &ak.center(), &self.v, self.delta) {
            return fail("L not in c_K + S(v, delta)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiReport {
    #[serde(skip)]
    pub phi: MeshFn,
    /// `∫ φ dσ`.
    pub mean: f64,
    pub norm: f64,
    /// `√(1/|L|_σ + 1/|K|_σ)`.
    pub norm_formula: f64,
}

/// `φ = 1_L/|L|_σ - 1_K/|K|_σ`.
pub fn phi_test_function(sigma: &MeshMeasure, t: &AlignedTriple) -> Result<PhiReport> {
    let grid = sigma.grid();
    let (mk, ml) = (sigma.mass(&t.k), sigma.mass(&t.l));
    if mk <= 0.0 || ml <= 0.0 {
        return Err(Error::DegenerateMeasure(format!("|K| = {mk}, |L| = {ml} under sigma")));
    }
    let mut phi = vec![0.0; grid.cell_count()];
    for c in grid.cells_of(&t.l) {
        phi[c] = 1.0 / ml;
    }
    for c in grid.cells_of(&t.k) {
        phi[c] = -1.0 / mk;
    }
    let mean = sigma.integral(&phi);
    let norm = sigma.lp_norm(&phi, 2.0);
    Ok(PhiReport { phi, mean, norm, norm_formula: (1.0 / ml + 1.0 / mk).sqrt() })
}

/// The split `K(x,y) - K(x,c) = I + II + III` along `c + τ(y - c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DifferenceTerms {
    pub diff: f64,
    pub first: f64,
    pub second: f64,
    pub main: f64,
}

/// The reference direction is `sgn((y-c)·v)·(x-c)/|x-c|`, which points
/// along `(y-c)/|y-c|` on both `L` and `K`.
pub fn kernel_difference_terms(k: &Kernel, x: &[f64], y: &[f64], c: &[f64], v: &[f64]) -> DifferenceTerms {
    let yc = sub(y, c);
    let r = norm(&yc);
    let diff = k.eval(x, y) - k.eval(x, c);
    if r == 0.0 {
        return DifferenceTerms { diff, first: 0.0, second: 0.0, main: 0.0 };
    }
    let u: Vec<f64> = yc.iter().map(|a| a / r).collect();
    let xc = sub(x, c);
    let s = if dot(&yc, v) >= 0.0 { 1.0 } else { -1.0 };
    let w: Vec<f64> = xc.iter().map(|a| s * a / norm(&xc)).collect();
    let g0 = k.grad_y(x, c);
    let (nodes, weights) = gauss_legendre(16);
    let (mut first, mut second) = (0.0, 0.0);
    for (t, wt) in nodes.iter().zip(&weights) {
        let tau = 0.5 * (t + 1.0);
        let p: Vec<f64> = c.iter().zip(&yc).map(|(a, b)| a + tau * b).collect();
        let g = k.grad_y(x, &p);
        let uw: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - b).collect();
        first += 0.5 * wt * dot(&uw, &g);
        second += 0.5 * wt * (dot(&w, &g) - dot(&w, &g0));
    }
    DifferenceTerms { diff, first: r * first, second: r * second, main: r * dot(&w, &g0) }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelDifferenceReport {
    pub delta: f64,
    pub samples: usize,
    pub seed: u64,
    /// Sign of `w·∇₂K(x, c)` at `x = c_J`; the expected sign of the
    /// difference is this times `sgn((y-c)·v)`.
    pub orientation: f64,
    pub sign_agreement: f64,
    /// Range of `|K(x,y) - K(x,c)|·|I|^{1-λ/n}`.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Fraction of samples with `|I| + |II| <= |III|/2`.
    pub negligible_fraction: f64,
    /// Largest `(|I| + |II|)/|III|`.
    pub worst: f64,
    pub worst_sample: Option<(Vec<f64>, Vec<f64>)>,
    /// Largest `|I + II + III - diff|` relative to `|diff|`.
    pub identity_error: f64,
    pub passed: bool,
}

fn uniform_in(q: &AxisCube, rng: &mut ChaCha8Rng) -> Vec<f64> {
    q.lower.iter().map(|l| l + q.side * rng.random_range(0.0..1.0)).collect()
}

/// Sample `x ∈ J`, `y ∈ K ∪ L` and test the sign rule and the relative size
/// of the three terms. Fails when the plateau of `t` does not cover the
/// sampled distances.
pub fn kernel_difference_report(
    k: &Kernel,
    t: &Truncation,
    grid: &Grid,
    triple: &AlignedTriple,
    sample_count: usize,
    seed: u64,
) -> Result<KernelDifferenceReport> {
    let (ai, aj) = (grid.to_axis(&triple.i), grid.to_axis(&triple.j));
    let far = corners(&ai)
        .iter()
        .flat_map(|a| corners(&aj).into_iter().map(move |b| norm(&sub(a, &b))))
        .fold(0.0, f64::max);
    if !t.plateau_covers(ai.distance(&aj), far) {
        return Err(Error::invalid(format!(
            "truncation plateau [{}, {}] does not cover distances [{}, {far}]",
            2.0 * t.eps,
            t.r / 2.0,
            ai.distance(&aj)
        )));
    }
    let (ak, al) = (grid.to_axis(&triple.k), grid.to_axis(&triple.l));
    let scale = ai.volume().powf(1.0 - k.lambda() / grid.dim() as f64);
    let cj = aj.center();
    let xc = sub(&cj, &triple.c);
    let w: Vec<f64> = xc.iter().map(|a| a / norm(&xc)).collect();
    let orientation = dot(&w, &k.grad_y(&cj, &triple.c)).signum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut agree, mut negl) = (0usize, 0usize);
    let (mut rmin, mut rmax, mut worst, mut ident) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let mut worst_sample = None;
    for s in 0..sample_count {
        let x = uniform_in(&aj, &mut rng);
        let y = uniform_in(if s % 2 == 0 { &al } else { &ak }, &mut rng);
        let d = kernel_difference_terms(k, &x, &y, &triple.c, &triple.v);
        let expect = orientation * dot(&sub(&y, &triple.c), &triple.v).signum();
        if d.diff.signum() == expect && d.diff != 0.0 {
            agree += 1;
        }
        let r = d.diff.abs() * scale;
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        let q = (d.first.abs() + d.second.abs()) / d.main.abs();
        if q <= 0.5 {
            negl += 1;
        }
        if q > worst || worst_sample.is_none() {
            worst = worst.max(q);
            worst_sample = Some((x.clone(), y.clone()));
        }
        ident = ident.max((d.first + d.second + d.main - d.diff).abs() / d.diff.abs().max(f64::MIN_POSITIVE));
    }
    let n = sample_count.max(1) as f64;
    let sign_agreement = agree as f64 / n;
    let negligible_fraction = negl as f64 / n;
    Ok(KernelDifferenceReport {
        delta: triple.delta,
        samples: sample_count,
        seed,
        orientation,
        sign_agreement,
        ratio_min: rmin,
        ratio_max: rmax,
        negligible_fraction,
        worst,
        worst_sample,
        identity_error: ident,
        passed: sign_agreement == 1.0 && negligible_fraction >= 0.99,
    })
}

/// Search `δ = 2^{-j} <= δ₀` downward until a configuration exists and its
/// kernel-difference report passes.
pub fn accept_delta(
    k: &Kernel,
    t: &Truncation,
    grid: &Grid,
    base: &DyadicCube,
    v: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<(AlignedTriple, KernelDifferenceReport)> {
    accept_delta_in(k, t, grid, base, v, None, sample_count, seed)
}

/// As [`accept_delta`] with `J` restricted to `pool`.
#[allow(clippy::too_many_arguments)]
pub fn accept_delta_in(
    k: &Kernel,
    t: &Truncation,
    grid: &Grid,
    base: &DyadicCube,
    v: &[f64],
    pool: Option<&[DyadicCube]>,
    sample_count: usize,
    seed: u64,
) -> Result<(AlignedTriple, KernelDifferenceReport)> {
    let d0 = k.ellipticity.delta0;
    let mut j = (1.0 / d0).log2().ceil() as i32;
    let mut last = None;
    while j <= 12 {
        let cfg = SectorConfig::new(v.to_vec(), 0.5f64.powi(j));
        let built = match pool {
            Some(p) => build_aligned_triple_in(grid, k, &cfg, base, p),
            None => build_aligned_triple(grid, k, &cfg, base),
        };
        match built {
            Ok(tr) => match kernel_difference_report(k, t, grid, &tr, sample_count, seed) {
                Ok(rep) if rep.passed => return Ok((tr, rep)),
                Ok(rep) => last = Some(format!("delta = {} failed the difference check (worst {})", cfg.delta, rep.worst)),
                Err(e) => last = Some(e.to_string()),
            },
            Err(e) => last = Some(e.to_string()),
        }
        j += 1;
    }
    Err(Error::NoAlignedConfiguration(last.unwrap_or_else(|| "no delta tried".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MeasureSpec;

    fn hilbert_grid() -> Grid {
        Grid::new(1, 10).unwrap()
    }

    #[test]
    fn hilbert_triple_to_the_right() {
        let g = hilbert_grid();
        let base = DyadicCube::new(4, vec![0]);
        let tr = build_aligned_triple(&g, &Kernel::hilbert(), &SectorConfig::new(vec![1.0], 0.125), &base).unwrap();
        assert_eq!(tr.j, DyadicCube::new(4, vec![9]));
        let d = g.to_axis(&tr.i).distance(&g.to_axis(&tr.j));
        assert!((d - 8.0 / 16.0).abs() < 1e-15);
        assert_eq!(tr.m, 3);
        assert!(tr.k.coords[0] < tr.l.coords[0]);
        tr.verify(&g).unwrap();
    }

    #[test]
    fn mirror_and_failure() {
        let g = hilbert_grid();
        let base = DyadicCube::new(4, vec![15]);
        let tr = build_aligned_triple(&g, &Kernel::hilbert(), &SectorConfig::new(vec![-1.0], 0.125), &base).unwrap();
        assert_eq!(tr.j, DyadicCube::new(4, vec![6]));
        assert!(tr.k.coords[0] > tr.l.coords[0]);
        tr.verify(&g).unwrap();
        let big = build_aligned_triple(&g, &Kernel::hilbert(), &SectorConfig::new(vec![1.0], 0.5), &base);
        assert!(matches!(big, Err(Error::NoAlignedConfiguration(ref s)) if s.contains("delta0")));
        // J to the right would have to leave the window
        let edge = build_aligned_triple(&g, &Kernel::hilbert(), &SectorConfig::new(vec![1.0], 0.125), &base);
        assert!(matches!(edge, Err(Error::NoAlignedConfiguration(ref s)) if s.contains("sector")));
    }

    #[test]
    fn planar_triple() {
        let g = Grid::new(2, 5).unwrap();
        let k = Kernel::riesz_like(2, 0.5).unwrap();
        let base = DyadicCube::new(2, vec![0, 1]);
        let tr = build_aligned_triple(&g, &k, &SectorConfig::new(vec![1.0, 0.0], 0.25), &base).unwrap();
        tr.verify(&g).unwrap();
        assert_eq!(tr.m, 3);
        assert!(build_aligned_triple(&g, &k, &SectorConfig::new(vec![1.0, 0.0], 0.125), &DyadicCube::new(3, vec![0, 3])).is_err());
    }

    #[test]
    fn phi_norms() {
        let g = Grid::new(1, 9).unwrap();
        let leb = MeshMeasure::generate(&g, &MeasureSpec::Lebesgue).unwrap();
        let tr = build_aligned_triple(&g, &Kernel::hilbert(), &SectorConfig { v: vec![1.0], delta: 0.25, m: Some(3) }, &DyadicCube::new(3, vec![0]))
            .unwrap();
        assert_eq!(tr.k.level, 6);
        let p = phi_test_function(&leb, &tr).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert!((p.norm - (2.0 * 64.0f64).sqrt()).abs() < 1e-10);
        assert!((p.norm - p.norm_formula).abs() < 1e-10);
        let d = MeshMeasure::generate(&g, &MeasureSpec::RandomDyadicDoubling { r: 4.0, seed: 3 }).unwrap();
        let p = phi_test_function(&d, &tr).unwrap();
        assert!(p.mean.abs() < 1e-12 && (p.norm - p.norm_formula).abs() < 1e-10 * p.norm);
    }

    #[test]
    fn difference_decomposition() {
        let g = hilbert_grid();
        let t = Truncation::default_for(&g);
        for k in [Kernel::hilbert(), Kernel::fractional_integral(1, 0.5).unwrap()] {
            let tr = build_aligned_triple(&g, &k, &SectorConfig::new(vec![1.0], 0.125), &DyadicCube::new(4, vec![0])).unwrap();
            let r = kernel_difference_report(&k, &t, &g, &tr, 400, 1).unwrap();
            assert_eq!(r.sign_agreement, 1.0);
            assert!(r.passed && r.identity_error < 1e-9, "{r:?}");
            assert!(r.ratio_min > 0.0 && r.ratio_max.is_finite());
            let z = kernel_difference_terms(&k, &[0.8], &tr.c, &tr.c, &[1.0]);
            assert_eq!(z.diff, 0.0);
        }
        let g2 = Grid::new(2, 5).unwrap();
        let k = Kernel::riesz_like(2, 0.5).unwrap();
        let tr = build_aligned_triple(&g2, &k, &SectorConfig::new(vec![1.0, 0.0], 0.25), &DyadicCube::new(2, vec![0, 1])).unwrap();
        let r = kernel_difference_report(&k, &Truncation::default_for(&g2), &g2, &tr, 400, 2).unwrap();
        assert!(r.identity_error < 1e-8 && r.sign_agreement == 1.0, "{r:?}");
    }

    #[test]
    fn delta_search() {
        let g = hilbert_grid();
        let (tr, rep) = accept_delta(&Kernel::hilbert(), &Truncation::default_for(&g), &g, &DyadicCube::new(4, vec![2]), &[1.0], 200, 3).unwrap();
        assert!(rep.passed && tr.delta <= 0.25);
    }
}
