//! The upper-triangular matrix `a_{mn} = n^{-γ}` (`n >= m`): rows and
//! columns are uniformly in `ℓ²`, yet `v = (n^{-γ})` is not mapped into `ℓ²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCounterexampleConfig {
    pub gamma: f64,
    /// Exponents `k` of the truncations `N = 2^k`, increasing.
    pub ladder: Vec<u32>,
}

impl MatrixCounterexampleConfig {
    pub fn new(gamma: f64, ladder: Vec<u32>) -> Result<Self> {
        let c = Self { gamma, ladder };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.5 && self.gamma <= 0.75) {
            return Err(Error::invalid(format!("gamma must lie in (1/2, 3/4], got {}", self.gamma)));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("ladder must be a nonempty increasing list of exponents"));
        }
        if *self.ladder.last().unwrap() > 26 {
            return Err(Error::invalid("ladder exponents above 26 are not supported"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthRow {
    pub k: u32,
    pub n: u64,
    pub growth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixReport {
    pub config: MatrixCounterexampleConfig,
    /// `sup_n ‖A e_n‖ = sup_n n^{1/2-γ}`.
    pub col_sup: f64,
    pub col_sup_at: u64,
    /// `sup_m (Σ_{n>=m} n^{-2γ})^{1/2} = ζ(2γ)^{1/2}`.
    pub row_sup: f64,
    pub row_sup_at: u64,
    /// `‖v‖` with `v` cut at the top of the ladder.
    pub v_norm: f64,
    pub growth: Vec<GrowthRow>,
    pub strictly_increasing: bool,
    pub passed: bool,
}

/// `ζ(s)` for `s > 1`: a partial sum to 1000 plus the Euler–Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    let m = 1000.0f64;
    let head: f64 = (1..=1000u32).rev().map(|n| (n as f64).powf(-s)).sum();
    // Σ_{n>M} n^{-s} = M^{1-s}/(s-1) - M^{-s}/2 + s M^{-s-1}/12 - s(s+1)(s+2) M^{-s-3}/720 + ...
    let tail = m.powf(1.0 - s) / (s - 1.0) - 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0;
    head + tail
}

pub fn matrix_counterexample(cfg: &MatrixCounterexampleConfig) -> Result<MatrixReport> {
    cfg.validate()?;
    let g = cfg.gamma;
    let nmax = 1usize << cfg.ladder.last().unwrap();
    // w[n-1] = n^{-2γ}
    let w: Vec<f64> = (1..=nmax).map(|n| (n as f64).powf(-2.0 * g)).collect();
    let (mut col_sup, mut col_sup_at) = (0.0f64, 1u64);
    for n in 1..=nmax {
        let c = (n as f64).powf(0.5 - g);
        if c > col_sup {
            col_sup = c;
            col_sup_at = n as u64;
        }
    }
    let v_norm = w.iter().rev().sum::<f64>().sqrt();
    let mut growth = Vec::with_capacity(cfg.ladder.len());
    for &k in &cfg.ladder {
        let n = 1usize << k;
        // (A_N v)_m = Σ_{j=m}^{N} j^{-2γ}, accumulated from the bottom row up
        let mut row = 0.0f64;
        let mut sq = 0.0f64;
        for m in (1..=n).rev() {
            row += w[m - 1];
            sq += row * row;
        }
        growth.push(GrowthRow { k, n: n as u64, growth: sq.sqrt() / v_norm });
    }
    let strictly_increasing = growth.windows(2).all(|p| p[1].growth > p[0].growth);
    let row_sup = zeta(2.0 * g).sqrt();
    Ok(MatrixReport {
        config: cfg.clone(),
        passed: strictly_increasing && col_sup.is_finite() && row_sup.is_finite(),
        col_sup,
        col_sup_at,
        row_sup,
        row_sup_at: 1,
        v_norm,
        growth,
        strictly_increasing,
    })
}

impl MatrixReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "n", "growth"])?;
        for r in &self.growth {
            wtr.write_record([r.k.to_string(), r.n.to_string(), format!("{:.12e}", r.growth)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Partial sum to 10⁶ plus the midpoint of `[∫_{N+1}^∞, ∫_N^∞] x^{-s} dx`.
    fn zeta_bracket(s: f64) -> f64 {
        let n = 1_000_000u64;
        let head: f64 = (1..=n).rev().map(|k| (k as f64).powf(-s)).sum();
        let lo = ((n + 1) as f64).powf(1.0 - s) / (s - 1.0);
        let hi = (n as f64).powf(1.0 - s) / (s - 1.0);
        head + 0.5 * (lo + hi)
    }

    #[test]
    fn zeta_against_bracket() {
        for g in [0.55, 0.6, 0.7] {
            assert!((zeta(2.0 * g) - zeta_bracket(2.0 * g)).abs() < 1e-7, "{g}");
        }
        // ζ(3/2)
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-10);
    }

    #[test]
    fn gamma_point_six() {
        let r = matrix_counterexample(&MatrixCounterexampleConfig::new(0.6, (10..=14).collect()).unwrap()).unwrap();
        assert_eq!((r.col_sup, r.col_sup_at), (1.0, 1));
        assert!(r.strictly_increasing && r.passed);
        assert!(r.growth.last().unwrap().growth > r.growth[0].growth);
    }

    #[test]
    fn growth_by_hand() {
        // N = 2: A_2 v = (1 + 2^{-2γ}, 2^{-2γ})
        let g = 0.75;
        let r = matrix_counterexample(&MatrixCounterexampleConfig { gamma: g, ladder: vec![1] }).unwrap();
        let b = 2f64.powf(-2.0 * g);
        let expect = ((1.0 + b).powi(2) + b * b).sqrt() / (1.0 + b).sqrt();
        assert!((r.growth[0].growth - expect).abs() < 1e-14);
    }

    #[test]
    fn rejects_range() {
        assert!(MatrixCounterexampleConfig::new(0.5, vec![10]).is_err());
        assert!(MatrixCounterexampleConfig::new(0.8, vec![10]).is_err());
        assert!(MatrixCounterexampleConfig::new(0.6, vec![12, 10]).is_err());
    }
}
