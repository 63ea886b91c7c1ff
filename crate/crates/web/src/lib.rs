//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a flat `Float64Array`; the layouts are given per
//! function. The plain Rust functions carry the logic and the
//! `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

use xwas_core::coding::{CodingScheme, RiskAllele, Xci};
use xwas_core::glm::Family;
use xwas_core::ncp::{x_power_sweep, EffectSpec, PopulationSpec, SweepKind};
use xwas_core::power::{max_power_loss, power, PowerQuery, SearchGrid};
use xwas_core::Result;

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Power for each df in `dfs` at `points` ncp values in [0, ncp_max].
/// Layout: one row per ncp, `[ncp, power(df_1), power(df_2), ..]`.
pub fn power_curves(dfs: &[u32], alpha: f64, ncp_max: f64, points: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points * (dfs.len() + 1));
    for ncp in grid(0.0, ncp_max, points) {
        out.push(ncp);
        for &df in dfs {
            out.push(power(&PowerQuery::new(df, ncp, alpha)?)?);
        }
    }
    Ok(out)
}

/// Power loss of the `df_large` test against the `df_small` test at equal
/// ncp on a `cols` × `rows` lattice: -log10(α) in [0.5, max_neg_log_alpha]
/// across, ncp in [0, ncp_max] down. Row-major, then the lattice maximum as
/// `[loss, alpha, ncp]`.
pub fn loss_map(df_small: u32, df_large: u32, max_neg_log_alpha: f64, ncp_max: f64, cols: usize, rows: usize) -> Result<Vec<f64>> {
    let ts = grid(0.5, max_neg_log_alpha, cols);
    let crit: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let alpha = 10f64.powf(-t);
            Ok((
                xwas_core::chisq::chisq_isf(alpha, df_small)?,
                xwas_core::chisq::chisq_isf(alpha, df_large)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cols * rows + 3);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for ncp in grid(0.0, ncp_max, rows) {
        for (&t, &(cs, cl)) in ts.iter().zip(&crit) {
            let small = xwas_core::chisq::noncentral_chisq_sf(cs, df_small, ncp)?;
            let large = xwas_core::chisq::noncentral_chisq_sf(cl, df_large, ncp)?;
            let loss = small - large;
            if loss > best.0 {
                best = (loss, 10f64.powf(-t), ncp);
            }
            out.push(loss);
        }
    }
    out.extend([best.0, best.1, best.2]);
    Ok(out)
}

/// Refined maximum loss over the full default search region.
/// Layout: `[loss, alpha, ncp]`.
pub fn refined_max_loss(df_small: u32, df_large: u32) -> Result<Vec<f64>> {
    let r = max_power_loss(df_small, df_large, &SearchGrid::default())?;
    Ok(vec![r.max_loss, r.argmax_alpha, r.argmax_ncp])
}

/// Power of M1..M4 as the female heterozygote mean (`interaction = false`)
/// or the male `R` mean (`interaction = true`) sweeps over [-0.6, 0.6].
/// `mu` holds the fixed means rr, rR, RR, r, R. Layout: one row per sweep
/// value, `[value, M1, M2, M3, M4]`.
#[allow(clippy::too_many_arguments)]
pub fn x_sweep(mu: &[f64], interaction: bool, f: f64, n: usize, alpha: f64, sigma2: f64, no_xci: bool, points: usize) -> Result<Vec<f64>> {
    let mu: [f64; 5] = mu
        .try_into()
        .map_err(|_| xwas_core::Error::InvalidParameter("five group means are needed".into()))?;
    let base = EffectSpec::new(mu, sigma2, Family::Linear)?;
    let pop = PopulationSpec::new(f, f)?;
    let xci = if no_xci { Xci::NotInactivated } else { Xci::Inactivated };
    let kind = if interaction { SweepKind::Interaction } else { SweepKind::Dominant };
    let rows = x_power_sweep(
        &base,
        &pop,
        CodingScheme::new(RiskAllele::Alt, xci),
        kind,
        &grid(-0.6, 0.6, points),
        n,
        alpha,
    )?;
    Ok(rows
        .iter()
        .flat_map(|r| std::iter::once(r.value).chain(r.entries.iter().map(|e| e.2)))
        .collect())
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = powerCurves)]
pub fn power_curves_js(dfs: &[u32], alpha: f64, ncp_max: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(power_curves(dfs, alpha, ncp_max, points))
}

#[wasm_bindgen(js_name = lossMap)]
pub fn loss_map_js(
    df_small: u32,
    df_large: u32,
    max_neg_log_alpha: f64,
    ncp_max: f64,
    cols: usize,
    rows: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    js(loss_map(df_small, df_large, max_neg_log_alpha, ncp_max, cols, rows))
}

#[wasm_bindgen(js_name = refinedMaxLoss)]
pub fn refined_max_loss_js(df_small: u32, df_large: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(refined_max_loss(df_small, df_large))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = xSweep)]
pub fn x_sweep_js(
    mu: &[f64],
    interaction: bool,
    f: f64,
    n: usize,
    alpha: f64,
    sigma2: f64,
    no_xci: bool,
    points: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    js(x_sweep(mu, interaction, f, n, alpha, sigma2, no_xci, points))
}
