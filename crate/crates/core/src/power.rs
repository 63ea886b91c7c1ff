//! Asymptotic power of chi-squared tests and power-loss searches.
//!
//! Power at level α is `P(χ²_{df,ncp} > c)` with `c` the central upper-α
//! quantile. Comparing a small-df test against a large-df test at equal ncp
//! gives the cost of the extra degrees of freedom; the largest such cost over
//! a (α, ncp) region is found by a grid search followed by local refinement.

use std::io::Write;

use rayon::prelude::*;

use crate::chisq;
use crate::error::{invalid, Result};

pub const MAX_DF: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerQuery {
    pub df: u32,
    pub ncp: f64,
    pub alpha: f64,
}

impl PowerQuery {
    pub fn new(df: u32, ncp: f64, alpha: f64) -> Result<Self> {
        if !(1..=MAX_DF).contains(&df) {
            return Err(invalid(format!("df = {df} must be in 1..={MAX_DF}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if !(ncp >= 0.0 && ncp.is_finite()) {
            return Err(invalid(format!("ncp = {ncp} must be finite and nonnegative")));
        }
        Ok(Self { df, ncp, alpha })
    }
}

pub fn power(q: &PowerQuery) -> Result<f64> {
    let crit = chisq::chisq_isf(q.alpha, q.df)?;
    chisq::noncentral_chisq_sf(crit, q.df, q.ncp)
}

/// Power given a precomputed critical value.
pub fn power_at_critical(crit: f64, df: u32, ncp: f64) -> Result<f64> {
    chisq::noncentral_chisq_sf(crit, df, ncp)
}

/// Search region and resolution for [`max_power_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    /// Range of `-log10(α)`.
    pub neg_log_alpha: (f64, f64),
    pub ncp: (f64, f64),
    pub alpha_step: f64,
    pub ncp_step: f64,
    /// Refinement stops once both steps fall below this.
    pub resolution: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            neg_log_alpha: (0.0, 15.0),
            ncp: (0.0, 100.0),
            alpha_step: 0.01,
            ncp_step: 0.1,
            resolution: 1e-4,
        }
    }
}

impl SearchGrid {
    /// Same steps over a single level α.
    pub fn at_alpha(alpha: f64) -> Self {
        let t = -alpha.log10();
        Self {
            neg_log_alpha: (t, t),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (a0, a1) = self.neg_log_alpha;
        let (c0, c1) = self.ncp;
        if !(a0 >= 0.0 && a1 >= a0 && a1.is_finite()) {
            return Err(invalid("-log10(alpha) range must be nonempty and nonnegative"));
        }
        if !(c0 >= 0.0 && c1 >= c0 && c1.is_finite()) {
            return Err(invalid("ncp range must be nonempty and nonnegative"));
        }
        if !(self.alpha_step > 0.0 && self.ncp_step > 0.0 && self.resolution > 0.0) {
            return Err(invalid("grid steps must be positive"));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
        if hi - v[n] > 1e-9 {
            v.push(hi);
        }
        v
    }

    pub fn describe(&self) -> String {
        format!(
            "-log10(alpha) in [{}, {}] step {}, ncp in [{}, {}] step {}, refined to {}",
            self.neg_log_alpha.0, self.neg_log_alpha.1, self.alpha_step, self.ncp.0, self.ncp.1, self.ncp_step, self.resolution
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSurfaceResult {
    pub max_loss: f64,
    pub argmax_alpha: f64,
    pub argmax_ncp: f64,
    pub grid: SearchGrid,
}

fn loss_at(t: f64, ncp: f64, df_small: u32, df_large: u32) -> Result<f64> {
    let alpha = 10f64.powf(-t);
    if alpha >= 1.0 {
        return Ok(0.0);
    }
    let small = chisq::noncentral_chisq_sf(chisq::chisq_isf(alpha, df_small)?, df_small, ncp)?;
    let large = chisq::noncentral_chisq_sf(chisq::chisq_isf(alpha, df_large)?, df_large, ncp)?;
    Ok(small - large)
}

/// Largest `power(df_small) - power(df_large)` at equal ncp over `grid`.
pub fn max_power_loss(df_small: u32, df_large: u32, grid: &SearchGrid) -> Result<LossSurfaceResult> {
    if df_small == 0 || df_small >= df_large || df_large > MAX_DF {
        return Err(invalid(format!(
            "need 1 <= df_small < df_large <= {MAX_DF}, got {df_small}, {df_large}"
        )));
    }
    grid.validate()?;
    let ts = SearchGrid::axis(grid.neg_log_alpha.0, grid.neg_log_alpha.1, grid.alpha_step);
    let cs = SearchGrid::axis(grid.ncp.0, grid.ncp.1, grid.ncp_step);

    // One row per α with both critical values computed once.
    let best = ts
        .par_iter()
        .map(|&t| -> Result<(f64, f64, f64)> {
            let alpha = 10f64.powf(-t);
            if alpha >= 1.0 {
                return Ok((0.0, t, cs[0]));
            }
            let crit_s = chisq::chisq_isf(alpha, df_small)?;
            let crit_l = chisq::chisq_isf(alpha, df_large)?;
            let mut row_best = (f64::NEG_INFINITY, t, cs[0]);
            for &c in &cs {
                let loss = chisq::noncentral_chisq_sf(crit_s, df_small, c)? - chisq::noncentral_chisq_sf(crit_l, df_large, c)?;
                if loss > row_best.0 {
                    row_best = (loss, t, c);
                }
            }
            Ok(row_best)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((f64::NEG_INFINITY, 0.0, 0.0), |acc, r| if r.0 > acc.0 { r } else { acc });

    let (mut loss, mut t, mut c) = best;
    let mut dt = grid.alpha_step;
    let mut dc = grid.ncp_step;
    let clamp_t = |v: f64| v.clamp(grid.neg_log_alpha.0, grid.neg_log_alpha.1);
    let clamp_c = |v: f64| v.clamp(grid.ncp.0, grid.ncp.1);
    while dt >= grid.resolution || dc >= grid.resolution {
        let mut moved = false;
        for (i, j) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
            let nt = clamp_t(t + i as f64 * dt);
            let nc = clamp_c(c + j as f64 * dc);
            let v = loss_at(nt, nc, df_small, df_large)?;
            if v > loss {
                loss = v;
                t = nt;
                c = nc;
                moved = true;
            }
        }
        if !moved {
            dt /= 2.0;
            dc /= 2.0;
        }
    }
    Ok(LossSurfaceResult {
        max_loss: loss,
        argmax_alpha: 10f64.powf(-t),
        argmax_ncp: c,
        grid: *grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoint {
    pub delta: f64,
    pub power_small: f64,
    pub power_large: f64,
}

/// Power of the small-df test at `ncp1` against the large-df test at
/// `ncp1 + Δ`, for Δ from `delta_range.0` to `delta_range.1` in steps of `step`.
pub fn power_gain_curve(ncp1: f64, delta_range: (f64, f64), step: f64, alpha: f64, df_small: u32, df_large: u32) -> Result<Vec<GainPoint>> {
    if !(delta_range.0 >= 0.0 && delta_range.1 >= delta_range.0 && step > 0.0) {
        return Err(invalid("delta range must be nonnegative and nonempty with positive step"));
    }
    let power_small = power(&PowerQuery::new(df_small, ncp1, alpha)?)?;
    let crit = chisq::chisq_isf(alpha, df_large)?;
    PowerQuery::new(df_large, ncp1, alpha)?;
    SearchGrid::axis(delta_range.0, delta_range.1, step)
        .into_iter()
        .map(|delta| {
            Ok(GainPoint {
                delta,
                power_small,
                power_large: chisq::noncentral_chisq_sf(crit, df_large, ncp1 + delta)?,
            })
        })
        .collect()
}

/// Smallest Δ at which the power gained by the large-df test at `ncp1 + Δ`
/// over the small-df test at `ncp1` matches the power lost at Δ = 0.
pub fn gain_crossover(ncp1: f64, alpha: f64, df_small: u32, df_large: u32) -> Result<f64> {
    let small = power(&PowerQuery::new(df_small, ncp1, alpha)?)?;
    let large0 = power(&PowerQuery::new(df_large, ncp1, alpha)?)?;
    let target = 2.0 * small - large0;
    if target >= 1.0 {
        return Err(invalid("power loss at equal ncp is too large to be recovered"));
    }
    let crit = chisq::chisq_isf(alpha, df_large)?;
    let f = |d: f64| -> Result<f64> { Ok(chisq::noncentral_chisq_sf(crit, df_large, ncp1 + d)? - target) };
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(lo)? >= 0.0 {
        return Ok(0.0);
    }
    while f(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(invalid("no crossover found"));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub alpha: f64,
    pub ncp: f64,
    /// Power for df = 1, 2, 3.
    pub power: [f64; 3],
}

impl SurfaceRow {
    pub fn loss(&self, small: usize, large: usize) -> f64 {
        self.power[small - 1] - self.power[large - 1]
    }
}

/// Power of the 1, 2 and 3 df tests over a (-log10 α, ncp) lattice.
pub fn power_surface(neg_log_alpha: &[f64], ncps: &[f64]) -> Result<Vec<SurfaceRow>> {
    let rows: Vec<Vec<SurfaceRow>> = neg_log_alpha
        .par_iter()
        .map(|&t| -> Result<Vec<SurfaceRow>> {
            let alpha = 10f64.powf(-t);
            let crit: Vec<f64> = (1..=3).map(|df| chisq::chisq_isf(alpha, df)).collect::<Result<_>>()?;
            ncps.iter()
                .map(|&ncp| {
                    let mut power = [0.0; 3];
                    for df in 0..3 {
                        power[df] = chisq::noncentral_chisq_sf(crit[df], df as u32 + 1, ncp)?;
                    }
                    Ok(SurfaceRow { alpha, ncp, power })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_surface_csv<W: Write>(out: W, rows: &[SurfaceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "alpha",
        "ncp",
        "power_df1",
        "power_df2",
        "power_df3",
        "loss_1_2",
        "loss_1_3",
        "loss_2_3",
    ])?;
    for r in rows {
        w.write_record(&[
            format!("{:e}", r.alpha),
            format!("{}", r.ncp),
            format!("{:.10}", r.power[0]),
            format!("{:.10}", r.power[1]),
            format!("{:.10}", r.power[2]),
            format!("{:.10}", r.loss(1, 2)),
            format!("{:.10}", r.loss(1, 3)),
            format!("{:.10}", r.loss(2, 3)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gain_csv<W: Write>(out: W, points: &[GainPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta", "power_small", "power_large"])?;
    for p in points {
        w.write_record(&[
            format!("{}", p.delta),
            format!("{:.10}", p.power_small),
            format!("{:.10}", p.power_large),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_power_at_zero_ncp_is_alpha() {
        for df in 1..=3 {
            for alpha in [0.05, 0.0025, 5e-8] {
                let p = power(&PowerQuery::new(df, 0.0, alpha).unwrap()).unwrap();
                assert!((p - alpha).abs() < 1e-9, "df {df} alpha {alpha}: {p}");
            }
        }
    }

    #[test]
    fn test_power_monotone() {
        let mut last = 0.0;
        for i in 0..50 {
            let p = power(&PowerQuery::new(2, i as f64, 0.001).unwrap()).unwrap();
            assert!(p > last);
            last = p;
        }
        let p1 = power(&PowerQuery::new(1, 10.0, 0.01).unwrap()).unwrap();
        let p2 = power(&PowerQuery::new(2, 10.0, 0.01).unwrap()).unwrap();
        let p3 = power(&PowerQuery::new(3, 10.0, 0.01).unwrap()).unwrap();
        assert!(p1 > p2 && p2 > p3);
    }

    #[test]
    fn test_genome_wide_difference() {
        let p1 = power(&PowerQuery::new(1, 31.4, 5e-8).unwrap()).unwrap();
        let p2 = power(&PowerQuery::new(2, 31.4, 5e-8).unwrap()).unwrap();
        assert!((p1 - p2 - 0.103).abs() < 0.001, "{}", p1 - p2);
    }

    #[test]
    fn test_query_validation() {
        assert!(PowerQuery::new(0, 1.0, 0.05).is_err());
        assert!(PowerQuery::new(11, 1.0, 0.05).is_err());
        assert!(PowerQuery::new(1, 1.0, 1.0).is_err());
        assert!(PowerQuery::new(1, -1.0, 0.05).is_err());
        assert!(max_power_loss(2, 2, &SearchGrid::default()).is_err());
    }

    #[test]
    fn test_gain_curve_shape() {
        let pts = power_gain_curve(10.0, (0.0, 40.0), 0.5, 0.0025, 1, 2).unwrap();
        assert!(pts[0].power_large < pts[0].power_small);
        assert!(pts.last().unwrap().power_large > 0.999);
        assert!(pts.windows(2).all(|w| w[1].power_large > w[0].power_large));
    }

    #[test]
    fn test_surface_csv() {
        let rows = power_surface(&[1.0, 2.0], &[0.0, 5.0]).unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_surface_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,ncp,power_df1"));
        assert_eq!(text.lines().count(), 5);
    }
}
