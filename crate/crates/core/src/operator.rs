//! λ-fractional Calderón–Zygmund kernels, smooth truncations, and their
//! discretization on a mesh.
//!
//! The discrete operator samples `K_{ε,R}` at cell centres, so
//! `T_σ f(x_i) = Σ_j K_{ε,R}(x_i, x_j) f_j σ_j`. The truncation keeps the
//! diagonal out of reach once `ε` is at least two cell diameters.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::Grid;
use crate::error::{Error, Result};
use crate::haar::{HaarSystem, WaveletId};
use crate::measure::{MeshFn, MeshMeasure};

type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelFamily {
    /// `1/(x - y)` on the line.
    Hilbert,
    /// `|x - y|^{λ-n}`.
    FractionalIntegral,
    /// `(x₁ - y₁)|x - y|^{λ-n-1}`.
    RieszLike,
    Zero,
    Custom { name: String, eval: KernelFn },
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl KernelFamily {
    pub fn name(&self) -> String {
        match self {
            KernelFamily::Hilbert => "hilbert".into(),
            KernelFamily::FractionalIntegral => "fractional_integral".into(),
            KernelFamily::RieszLike => "riesz_like".into(),
            KernelFamily::Zero => "zero".into(),
            KernelFamily::Custom { name, .. } => format!("custom:{name}"),
        }
    }
}

/// Ellipticity data: direction `v`, order `κ`, lower constants and the
/// direction tolerance `δ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub v: Vec<f64>,
    pub kappa: u32,
    pub c1: f64,
    pub c0: f64,
    pub delta0: f64,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    family: KernelFamily,
    dim: usize,
    lambda: f64,
    transposed: bool,
    /// Declared constant for `|∇_x^m K| + |∇_y^m K| <= C_CZ |x-y|^{λ-n-m}`, `m <= 2`.
    pub c_cz: f64,
    pub ellipticity: Ellipticity,
}

/// Serializable kernel and truncation selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Spectral norm of a symmetric matrix.
fn sym_norm(h: DMatrix<f64>) -> f64 {
    if h.nrows() == 1 {
        return h[(0, 0)].abs();
    }
    SymmetricEigen::new(h).eigenvalues.amax()
}

impl Kernel {
    pub fn hilbert() -> Self {
        Self::builtin(KernelFamily::Hilbert, 1, 0.0).expect("hilbert is valid")
    }

    pub fn fractional_integral(dim: usize, lambda: f64) -> Result<Self> {
        Self::builtin(KernelFamily::FractionalIntegral, dim, lambda)
    }

    pub fn riesz_like(dim: usize, lambda: f64) -> Result<Self> {
        Self::builtin(KernelFamily::RieszLike, dim, lambda)
    }

    pub fn zero(dim: usize) -> Self {
        Self::builtin(KernelFamily::Zero, dim, 0.0).expect("zero kernel is valid")
    }

    /// User-supplied kernel with declared constants.
    pub fn custom(
        dim: usize,
        lambda: f64,
        name: impl Into<String>,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        c_cz: f64,
        ellipticity: Ellipticity,
    ) -> Result<Self> {
        check_lambda(dim, lambda)?;
        Ok(Self {
            family: KernelFamily::Custom { name: name.into(), eval: Arc::new(eval) },
            dim,
            lambda,
            transposed: false,
            c_cz,
            ellipticity,
        })
    }

    pub fn from_name(name: &str, dim: usize, lambda: f64) -> Result<Self> {
        match name {
            "hilbert" => {
                if dim != 1 || lambda != 0.0 {
                    return Err(Error::invalid("hilbert kernel needs dim = 1 and lambda = 0"));
                }
                Ok(Self::hilbert())
            }
            "fractional_integral" | "fractional" => Self::fractional_integral(dim, lambda),
            "riesz_like" | "riesz" => Self::riesz_like(dim, lambda),
            "zero" => Ok(Self::zero(dim)),
            other => Err(Error::Config(format!("unknown kernel family `{other}`"))),
        }
    }

    fn builtin(family: KernelFamily, dim: usize, lambda: f64) -> Result<Self> {
        check_lambda(dim, lambda)?;
        if matches!(family, KernelFamily::Hilbert) && dim != 1 {
            return Err(Error::invalid("hilbert kernel is one-dimensional"));
        }
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        let mut k = Self {
            family,
            dim,
            lambda,
            transposed: false,
            c_cz: 0.0,
            ellipticity: Ellipticity { v, kappa: 1, c1: 0.0, c0: 0.0, delta0: 0.25 },
        };
        let a = lambda - dim as f64;
        let (c1, c0) = match k.family {
            KernelFamily::Hilbert => (1.0, 1.0),
            KernelFamily::FractionalIntegral => (a.abs(), 1.0),
            KernelFamily::RieszLike => (a.abs(), 1.0),
            _ => (0.0, 0.0),
        };
        k.ellipticity.c1 = c1;
        k.ellipticity.c0 = c0;
        k.c_cz = 2.0 * k.per_variable_constants().iter().fold(0.0f64, |m, c| m.max(*c));
        Ok(k)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    pub fn name(&self) -> String {
        let base = self.family.name();
        if self.transposed {
            format!("{base}*")
        } else {
            base
        }
    }

    /// `K*(x, y) = K(y, x)`.
    pub fn transpose(&self) -> Kernel {
        let mut k = self.clone();
        k.transposed = !k.transposed;
        k
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, KernelFamily::Zero)
    }

    /// Untruncated kernel; zero on the diagonal.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let (x, y) = if self.transposed { (y, x) } else { (x, y) };
        if let KernelFamily::Custom { eval, .. } = &self.family {
            return if x == y { 0.0 } else { eval(x, y) };
        }
        self.profile(&sub(x, y))
    }

    /// `k(z)` for the translation-invariant built-ins, `z = x - y` (untransposed).
    fn profile(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        if r == 0.0 {
            return 0.0;
        }
        let a = self.lambda - self.dim as f64;
        match self.family {
            KernelFamily::Hilbert => 1.0 / z[0],
            KernelFamily::FractionalIntegral => r.powf(a),
            KernelFamily::RieszLike => z[0] * r.powf(a - 1.0),
            KernelFamily::Zero => 0.0,
            KernelFamily::Custom { .. } => unreachable!("custom kernels are not translation profiles"),
        }
    }

    /// Gradient and Hessian of the profile in `z` (untransposed).
    fn profile_derivatives(&self, z: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.dim;
        let r = norm(z);
        let a = self.lambda - n as f64;
        match self.family {
            KernelFamily::Hilbert => (
                vec![-1.0 / (z[0] * z[0])],
                DMatrix::from_element(1, 1, 2.0 / z[0].powi(3)),
            ),
            KernelFamily::FractionalIntegral => {
                let g = z.iter().map(|zi| a * r.powf(a - 2.0) * zi).collect();
                let h = DMatrix::from_fn(n, n, |i, j| {
                    let d = if i == j { 1.0 } else { 0.0 };
                    a * r.powf(a - 2.0) * (d + (a - 2.0) * z[i] * z[j] / (r * r))
                });
                (g, h)
            }
            KernelFamily::RieszLike => {
                let b = a - 1.0;
                let g = (0..n)
                    .map(|i| {
                        let e = if i == 0 { 1.0 } else { 0.0 };
                        e * r.powf(b) + b * z[0] * r.powf(b - 2.0) * z[i]
                    })
                    .collect();
                let h = DMatrix::from_fn(n, n, |i, j| {
                    let e = |k: usize| if k == 0 { 1.0 } else { 0.0 };
                    let d = if i == j { 1.0 } else { 0.0 };
                    b * r.powf(b - 2.0) * (e(i) * z[j] + z[i] * e(j) + z[0] * d)
                        + b * (b - 2.0) * z[0] * r.powf(b - 4.0) * z[i] * z[j]
                });
                (g, h)
            }
            _ => (vec![0.0; n], DMatrix::zeros(n, n)),
        }
    }

    /// `∇_y K(x, y)`, analytic for the built-ins and by central differences otherwise.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match (&self.family, self.transposed) {
            (KernelFamily::Custom { .. }, _) => fd_gradient(|p| self.eval(x, p), y),
            (_, false) => self.profile_derivatives(&sub(x, y)).0.iter().map(|g| -g).collect(),
            (_, true) => self.profile_derivatives(&sub(y, x)).0,
        }
    }

    /// `∇_x K(x, y)`.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match (&self.family, self.transposed) {
            (KernelFamily::Custom { .. }, _) => fd_gradient(|p| self.eval(p, y), x),
            (_, false) => self.profile_derivatives(&sub(x, y)).0,
            (_, true) => self.profile_derivatives(&sub(y, x)).0.iter().map(|g| -g).collect(),
        }
    }

    /// Constants `c_m` with `|∇^m K| <= c_m |x-y|^{λ-n-m}` in one variable.
    pub fn per_variable_constants(&self) -> [f64; 3] {
        let a = self.lambda - self.dim as f64;
        match self.family {
            KernelFamily::Hilbert => [1.0, 1.0, 2.0],
            KernelFamily::FractionalIntegral => [1.0, a.abs(), a.abs() * (a - 1.0).abs().max(1.0)],
            KernelFamily::RieszLike if self.dim == 1 => [1.0, a.abs(), a.abs() * (a - 1.0).abs()],
            KernelFamily::RieszLike => {
                // homogeneous profile: the sup over the unit sphere is the constant
                let mut c = [0.0f64; 3];
                let steps = 2048;
                for s in 0..steps {
                    let th = 2.0 * std::f64::consts::PI * s as f64 / steps as f64;
                    let mut z = vec![0.0; self.dim];
                    z[0] = th.cos();
                    z[1] = th.sin();
                    let (g, h) = self.profile_derivatives(&z);
                    c[0] = c[0].max(self.profile(&z).abs());
                    c[1] = c[1].max(norm(&g));
                    c[2] = c[2].max(sym_norm(h));
                }
                c.map(|v| v * 1.01)
            }
            KernelFamily::Zero => [0.0; 3],
            KernelFamily::Custom { .. } => [self.c_cz / 2.0; 3],
        }
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec { family: self.family.name(), lambda: self.lambda, eps: None, r: None }
    }
}

fn check_lambda(dim: usize, lambda: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("kernel dimension must be at least 1"));
    }
    if !(lambda >= 0.0 && lambda < dim as f64) {
        return Err(Error::invalid(format!("lambda must lie in [0, {dim}), got {lambda}")));
    }
    Ok(())
}

fn fd_step(scale: f64) -> f64 {
    1e-5 * scale
}

fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let scale = norm(at).max(1e-3);
    fd_gradient_h(&f, at, fd_step(scale))
}

fn fd_gradient_h(f: &impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|d| {
            let mut p = at.to_vec();
            let mut m = at.to_vec();
            p[d] += h;
            m[d] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian_h(f: &impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> DMatrix<f64> {
    let n = at.len();
    let f0 = f(at);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                let mut p = at.to_vec();
                let mut m = at.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - 2.0 * f0 + f(&m)) / (h * h)
            } else {
                let shift = |si: f64, sj: f64| {
                    let mut q = at.to_vec();
                    q[i] += si * h;
                    q[j] += sj * h;
                    f(&q)
                };
                (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0)) / (4.0 * h * h)
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Smoothstep profile of a truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `6t⁵ - 15t⁴ + 10t³`, C² at the ends.
    #[default]
    Quintic,
    /// `-20t⁷ + 70t⁶ - 84t⁵ + 35t⁴`, C³ at the ends.
    Septic,
}

impl Profile {
    pub fn eval(self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self {
            Profile::Quintic => t * t * t * (t * (6.0 * t - 15.0) + 10.0),
            Profile::Septic => t.powi(4) * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t))),
        }
    }

    pub fn d1(self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            Profile::Quintic => 30.0 * t * t * (1.0 - t) * (1.0 - t),
            Profile::Septic => 140.0 * t.powi(3) * (1.0 - t).powi(3),
        }
    }

    pub fn d2(self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            Profile::Quintic => 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
            Profile::Septic => 420.0 * t * t * (1.0 - t) * (1.0 - t) * (1.0 - 2.0 * t),
        }
    }

    /// `(1, max|S'|, max|S''|)` on `[0, 1]`.
    pub fn derivative_bounds(self) -> [f64; 3] {
        match self {
            Profile::Quintic => [1.0, 1.875, 10.0 / 3f64.sqrt()],
            Profile::Septic => {
                let s2 = (0..=20000)
                    .map(|i| self.d2(i as f64 / 20000.0).abs())
                    .fold(0.0, f64::max);
                [1.0, 2.1875, s2 * (1.0 + 1e-6)]
            }
        }
    }
}

/// Smooth cutoff: zero below `ε` and above `R`, one on `[2ε, R/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub eps: f64,
    pub r: f64,
    #[serde(default)]
    pub profile: Profile,
}

impl Truncation {
    /// Requires `R >= 4ε` so the two transition bands never overlap.
    pub fn new(eps: f64, r: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if !(r.is_finite() && r >= 4.0 * eps) {
            return Err(Error::invalid(format!("R must be at least 4 eps, got R = {r}, eps = {eps}")));
        }
        Ok(Self { eps, r, profile: Profile::Quintic })
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    /// `ε = 4·(cell side)` and `R = 4·(window side)`.
    pub fn default_for(grid: &Grid) -> Self {
        Self::new(4.0 * grid.cell_side(), 4.0 * grid.window_side()).expect("default truncation is valid")
    }

    /// Cutoff factor at distance `d`.
    pub fn factor(&self, d: f64) -> f64 {
        if d < self.eps || d > self.r {
            return 0.0;
        }
        let rise = self.profile.eval((d - self.eps) / self.eps);
        let fall = self.profile.eval((self.r - d) / (self.r / 2.0));
        rise * fall
    }

    /// Whether `[a, b]` lies in the plateau `[2ε, R/2]`.
    pub fn plateau_covers(&self, a: f64, b: f64) -> bool {
        a >= 2.0 * self.eps && b <= self.r / 2.0
    }

    /// Bound on the truncated kernel's CZ ratio from the kernel constants and the profile.
    pub fn cz_bound(&self, kernel: &Kernel, m_max: u32) -> f64 {
        let c = kernel.per_variable_constants();
        let s = self.profile.derivative_bounds();
        let s2 = s[2].max(s[1]);
        let sj = [1.0, s[1], s2];
        let binom = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]];
        let mut best = 0.0f64;
        for m in 0..=m_max.min(2) as usize {
            let b: f64 = (0..=m)
                .map(|j| binom[m][j] * c[m - j] * sj[j] * 2f64.powi(j as i32))
                .sum();
            best = best.max(2.0 * b);
        }
        best
    }
}

/// `K_{ε,R}(x, y) = K(x, y)·s(|x - y|)`.
pub fn eval_truncated(k: &Kernel, t: &Truncation, x: &[f64], y: &[f64]) -> f64 {
    let s = t.factor(norm(&sub(x, y)));
    if s == 0.0 {
        0.0
    } else {
        k.eval(x, y) * s
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CzReport {
    pub kernel: String,
    pub truncated: bool,
    pub m_max: u32,
    pub samples: usize,
    pub seed: u64,
    /// Per order: sup of `max(|∇_x^m K|, |∇_y^m K|)·|x-y|^{n+m-λ}`.
    pub ratio_max_variable: Vec<f64>,
    /// Per order: sup of `(|∇_x^m K| + |∇_y^m K|)·|x-y|^{n+m-λ}`.
    pub ratio_sum: Vec<f64>,
    pub declared: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>, u32)>,
    pub passed: bool,
}

/// Sample pairs and compare finite-difference derivatives with the declared constant.
///
/// Untruncated pairs have `|x - y|` log-uniform in `[1e-3, 1]`; truncated
/// pairs cover `[ε, R]` with half the samples in the inner transition band.
pub fn check_cz_bounds(
    k: &Kernel,
    t: Option<&Truncation>,
    m_max: u32,
    sample_count: usize,
    seed: u64,
) -> Result<CzReport> {
    if m_max > 2 {
        return Err(Error::invalid("check_cz_bounds supports m_max <= 2"));
    }
    let n = k.dim();
    let f = |x: &[f64], y: &[f64]| match t {
        Some(t) => eval_truncated(k, t, x, y),
        None => k.eval(x, y),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rmax = vec![0.0f64; m_max as usize + 1];
    let mut rsum = vec![0.0f64; m_max as usize + 1];
    let declared = match t {
        Some(t) => t.cz_bound(k, m_max),
        None => k.c_cz,
    };
    let mut witness = None;
    let mut worst = 0.0f64;
    for s in 0..sample_count {
        let dist = match t {
            Some(t) if s % 2 == 0 => rng.random_range(t.eps..2.0 * t.eps),
            Some(t) => (rng.random_range(t.eps.ln()..t.r.ln())).exp(),
            None => (rng.random_range((1e-3f64).ln()..0.0)).exp(),
        };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = random_unit(n, &mut rng);
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - dist * b).collect();
        let h = fd_step(dist);
        for m in 0..=m_max {
            let (ax, ay) = match m {
                0 => {
                    let v = f(&x, &y).abs();
                    (v, v)
                }
                1 => (
                    norm(&fd_gradient_h(&|p: &[f64]| f(p, &y), &x, h)),
                    norm(&fd_gradient_h(&|p: &[f64]| f(&x, p), &y, h)),
                ),
                _ => (
                    sym_norm(fd_hessian_h(&|p: &[f64]| f(p, &y), &x, h)),
                    sym_norm(fd_hessian_h(&|p: &[f64]| f(&x, p), &y, h)),
                ),
            };
            let w = dist.powf(n as f64 + m as f64 - k.lambda());
            let (a, b) = (ax.max(ay) * w, (ax + ay) * w);
            rmax[m as usize] = rmax[m as usize].max(a);
            rsum[m as usize] = rsum[m as usize].max(b);
            if b > worst {
                worst = b;
                witness = Some((x.clone(), y.clone(), m));
            }
        }
    }
    // finite-difference tolerance at h = 1e-5 |x-y|
    let passed = worst <= declared * (1.0 + 1e-4) + 1e-12;
    let rep = CzReport {
        kernel: k.name(),
        truncated: t.is_some(),
        m_max,
        samples: sample_count,
        seed,
        ratio_max_variable: rmax,
        ratio_sum: rsum,
        declared,
        witness,
        passed,
    };
    if !passed {
        return Err(Error::check(
            "cz_bounds",
            format!("ratio {worst} exceeds declared {declared} at {:?}", rep.witness),
        ));
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub kernel: String,
    pub kappa: u32,
    pub v: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// inf of `(|∂_t^κ K(y+tv, y)| + |∂_t^κ K(x, x+tv)|) / t^{λ-n-κ}`.
    pub inf_ratio_sum: f64,
    /// inf of `|∂_t^κ K(x, x+tv)| / t^{λ-n-κ}` alone.
    pub inf_ratio_single: f64,
    pub declared: f64,
    pub witness: Option<(Vec<f64>, f64)>,
    pub passed: bool,
}

fn directional(f: impl Fn(f64) -> f64, t: f64, kappa: u32) -> f64 {
    if kappa == 0 {
        return f(t);
    }
    let h = fd_step(t);
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// Sample the κ-ellipticity lower bound along the kernel's direction `v`.
/// For `κ = 1` the two-term sum is compared with `c₁`; for `κ = 0` the
/// single term `|K(x, x+tv)|` is compared with `c₀`.
pub fn check_ellipticity(k: &Kernel, kappa: u32, sample_count: usize, seed: u64) -> Result<EllipticityReport> {
    check_ellipticity_along(k, &k.ellipticity.v.clone(), kappa, sample_count, seed, None)
}

/// Ellipticity along an arbitrary unit direction; `declared` overrides the kernel constant.
pub fn check_ellipticity_along(
    k: &Kernel,
    v: &[f64],
    kappa: u32,
    sample_count: usize,
    seed: u64,
    declared: Option<f64>,
) -> Result<EllipticityReport> {
    if kappa > 1 {
        return Err(Error::invalid("kappa must be 0 or 1"));
    }
    let n = k.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inf_sum, mut inf_single) = (f64::INFINITY, f64::INFINITY);
    let mut witness = None;
    for _ in 0..sample_count {
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = (rng.random_range((1e-3f64).ln()..0.0)).exp();
        let along = |s: f64| -> Vec<f64> { base.iter().zip(v).map(|(b, vi)| b + s * vi).collect() };
        let phi = directional(|s| k.eval(&along(s), &base), t, kappa);
        let psi = directional(|s| k.eval(&base, &along(s)), t, kappa);
        let scale = t.powf(k.lambda() - n as f64 - kappa as f64);
        let sum = (phi.abs() + psi.abs()) / scale;
        let single = psi.abs() / scale;
        let key = if kappa == 1 { sum } else { single };
        if key < if kappa == 1 { inf_sum } else { inf_single } {
            witness = Some((base.clone(), t));
        }
        inf_sum = inf_sum.min(sum);
        inf_single = inf_single.min(single);
    }
    let declared = declared.unwrap_or(if kappa == 1 { k.ellipticity.c1 } else { k.ellipticity.c0 });
    let measured = if kappa == 1 { inf_sum } else { inf_single };
    let passed = measured >= declared * (1.0 - 1e-4);
    let rep = EllipticityReport {
        kernel: k.name(),
        kappa,
        v: v.to_vec(),
        samples: sample_count,
        seed,
        inf_ratio_sum: inf_sum,
        inf_ratio_single: inf_single,
        declared,
        witness,
        passed,
    };
    if !passed {
        return Err(Error::check(
            "ellipticity",
            format!("inf ratio {measured} below declared {declared} at {:?}", rep.witness),
        ));
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    pub delta0: f64,
    pub directions: usize,
    /// inf over sampled `|w - v| < δ₀` of `|∂_t K(x, x+tw)| / t^{λ-n-1}`.
    pub inf_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Sweep directions within `δ₀` of `v` and check half the single-term constant survives.
pub fn check_perturbation(k: &Kernel, directions: usize, samples_per: usize, seed: u64) -> Result<PerturbationReport> {
    let n = k.dim();
    let v = k.ellipticity.v.clone();
    let delta0 = k.ellipticity.delta0;
    let base = check_ellipticity_along(k, &v, 1, samples_per, seed, Some(0.0))?.inf_ratio_single;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut inf_ratio = base;
    let mut tried = 1;
    while tried < directions && n > 1 {
        // uniform perturbation of size < δ₀, renormalized to the sphere
        let u = random_unit(n, &mut rng);
        let s = rng.random_range(0.0..delta0);
        let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a + s * b).collect();
        let nw = norm(&w);
        let w: Vec<f64> = w.iter().map(|x| x / nw).collect();
        if norm(&sub(&w, &v)) >= delta0 {
            continue;
        }
        let r = check_ellipticity_along(k, &w, 1, samples_per, seed.wrapping_add(tried as u64), Some(0.0))?;
        inf_ratio = inf_ratio.min(r.inf_ratio_single);
        tried += 1;
    }
    let threshold = base / 2.0;
    let passed = inf_ratio >= threshold;
    if !passed {
        return Err(Error::check("perturbation", format!("ratio {inf_ratio} below {threshold}")));
    }
    Ok(PerturbationReport { delta0, directions: tried, inf_ratio, threshold, passed })
}

/// Dense discretization of a truncated kernel on the mesh cell centres.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: Grid,
    kernel: Kernel,
    trunc: Truncation,
    matrix: DMatrix<f64>,
}

impl DiscreteOperator {
    pub fn new(grid: &Grid, kernel: &Kernel, trunc: &Truncation) -> Result<Self> {
        if kernel.dim() != grid.dim() {
            return Err(Error::invalid("kernel and grid dimensions differ"));
        }
        let required = 2.0 * grid.cell_diameter();
        if trunc.eps < required * (1.0 - 1e-12) {
            return Err(Error::TruncationUnderResolved { eps: trunc.eps, required });
        }
        let n = grid.cell_count();
        let centres: Vec<Vec<f64>> = (0..n).map(|i| grid.cell_center(i)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                centres
                    .iter()
                    .map(|y| if kernel.is_zero() { 0.0 } else { eval_truncated(kernel, trunc, &centres[i], y) })
                    .collect()
            })
            .collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(Self { grid: grid.clone(), kernel: kernel.clone(), trunc: *trunc, matrix })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn truncation(&self) -> &Truncation {
        &self.trunc
    }

    /// `K_ij = K_{ε,R}(x_i, x_j)`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Operator for the transposed kernel.
    pub fn transposed(&self) -> DiscreteOperator {
        Self {
            grid: self.grid.clone(),
            kernel: self.kernel.transpose(),
            trunc: self.trunc,
            matrix: self.matrix.transpose(),
        }
    }

    /// `T_σ f` at the cell centres.
    pub fn apply(&self, sigma: &MeshMeasure, f: &[f64]) -> MeshFn {
        let w = DVector::from_iterator(f.len(), f.iter().zip(sigma.cell_masses()).map(|(a, m)| a * m));
        (&self.matrix * w).as_slice().to_vec()
    }

    /// `T*_ω g = Σ_i K(x_i, y) g_i ω_i`, evaluated at the cell centres.
    pub fn apply_adjoint(&self, omega: &MeshMeasure, g: &[f64]) -> MeshFn {
        let w = DVector::from_iterator(g.len(), g.iter().zip(omega.cell_masses()).map(|(a, m)| a * m));
        (self.matrix.tr_mul(&w)).as_slice().to_vec()
    }

    /// `T_σ` applied to every column of `f` (cells × k).
    pub fn apply_columns(&self, sigma: &MeshMeasure, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = f.clone();
        for (mut row, m) in w.row_iter_mut().zip(sigma.cell_masses()) {
            row *= *m;
        }
        &self.matrix * w
    }

    /// `T_σ f` at arbitrary points by direct midpoint quadrature.
    pub fn apply_at(&self, sigma: &MeshMeasure, f: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
        let centres: Vec<Vec<f64>> = (0..self.grid.cell_count()).map(|i| self.grid.cell_center(i)).collect();
        points
            .par_iter()
            .map(|x| {
                centres
                    .iter()
                    .zip(f.iter().zip(sigma.cell_masses()))
                    .filter(|(_, (v, m))| **v != 0.0 && **m != 0.0)
                    .map(|(y, (v, m))| eval_truncated(&self.kernel, &self.trunc, x, y) * v * m)
                    .sum()
            })
            .collect()
    }
}

/// Row or column label of a Haar matrix.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasisId {
    /// The normalized constant function on the window.
    Mean,
    Wavelet(WaveletId),
}

impl fmt::Display for BasisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisId::Mean => f.write_str("mean"),
            BasisId::Wavelet(w) => write!(f, "{}#{}", w.cube, w.gamma),
        }
    }
}

impl Serialize for BasisId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// `⟨T_σ h_col, h_row⟩_ω` in Haar coordinates.
#[derive(Clone, Debug)]
pub struct HaarMatrix {
    pub row_ids: Vec<BasisId>,
    pub col_ids: Vec<BasisId>,
    pub data: DMatrix<f64>,
    pub depth: u32,
}

fn basis_columns(mu: &MeshMeasure, sys: &HaarSystem, with_mean: bool) -> (Vec<BasisId>, DMatrix<f64>) {
    let grid = mu.grid();
    let w = sys.value_matrix(grid);
    let mut ids: Vec<BasisId> = sys.ids().into_iter().map(BasisId::Wavelet).collect();
    if !with_mean || mu.total() <= 0.0 {
        return (ids, w);
    }
    ids.insert(0, BasisId::Mean);
    let c = 1.0 / mu.total().sqrt();
    let mut out = DMatrix::from_element(grid.cell_count(), w.ncols() + 1, c);
    out.columns_mut(1, w.ncols()).copy_from(&w);
    (ids, out)
}

/// Haar matrix with rows from `rows_sys` (on `ω`) and columns from `cols_sys` (on `σ`).
pub fn haar_matrix(
    op: &DiscreteOperator,
    sigma: &MeshMeasure,
    omega: &MeshMeasure,
    cols_sys: &HaarSystem,
    rows_sys: &HaarSystem,
    rows_with_mean: bool,
) -> HaarMatrix {
    let (col_ids, hc) = basis_columns(sigma, cols_sys, false);
    let (row_ids, mut hr) = basis_columns(omega, rows_sys, rows_with_mean);
    let g = op.apply_columns(sigma, &hc);
    for (mut row, m) in hr.row_iter_mut().zip(omega.cell_masses()) {
        row *= *m;
    }
    HaarMatrix { row_ids, col_ids, data: hr.tr_mul(&g), depth: cols_sys.depth() }
}

/// Pure Haar rows and columns to `depth` (no mean row).
pub fn assemble_haar_matrix(
    op: &DiscreteOperator,
    sigma: &MeshMeasure,
    omega: &MeshMeasure,
    sys_sigma: &HaarSystem,
    sys_omega: &HaarSystem,
) -> HaarMatrix {
    haar_matrix(op, sigma, omega, sys_sigma, sys_omega, false)
}

impl HaarMatrix {
    pub fn column_norms(&self) -> Vec<f64> {
        self.data.column_iter().map(|c| c.norm()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["row_id", "col_id", "value"])?;
        for j in 0..self.data.ncols() {
            for i in 0..self.data.nrows() {
                let v = self.data[(i, j)];
                if v != 0.0 {
                    wtr.write_record([self.row_ids[i].to_string(), self.col_ids[j].to_string(), format!("{v:e}")])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
