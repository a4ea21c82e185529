//! Back out beta(x), gamma(x) from a converged iterate and score the
//! result against ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fld;
use crate::grid::{quadrature_weights, ScalarField};
use crate::inversion::{coefficient_fields, time_mean_var, WField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    /// Evaluate at t = T/2 where the integral terms vanish.
    Midpoint,
    /// Average the coefficient fields over all time slices.
    Average,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub beta: ScalarField,
    pub gamma: ScalarField,
    /// Per-point variance over time of the coefficient fields; zero for
    /// exact data since the true coefficients do not depend on t.
    pub beta_tvar: ScalarField,
    pub gamma_tvar: ScalarField,
}

pub fn reconstruct_coefficients(
    w: &WField,
    s: &[ScalarField; 4],
    mode: ReconMode,
) -> Result<Reconstruction> {
    let grid = *w.grid();
    let taxis = grid.time_axis()?;
    let (b_field, g_field) = coefficient_fields(w, s)?;
    let (b_mean, b_var) = time_mean_var(&b_field)?;
    let (g_mean, g_var) = time_mean_var(&g_field)?;
    let (beta, gamma) = match mode {
        ReconMode::Average => (b_mean, g_mean),
        ReconMode::Midpoint => {
            let t_mid = 0.5 * (taxis.min + taxis.max);
            let i_mid = taxis.node_at(t_mid).ok_or_else(|| {
                Error::Config("midpoint reconstruction needs T/2 on the grid".into())
            })?;
            (b_field.time_slice(i_mid)?, g_field.time_slice(i_mid)?)
        }
    };
    Ok(Reconstruction {
        beta,
        gamma,
        beta_tvar: b_var,
        gamma_tvar: g_var,
    })
}

/// Ground-truth mask of one coefficient's inclusion, for shape metrics.
#[derive(Debug, Clone)]
pub struct MaskInfo {
    pub mask: Vec<bool>,
    pub inside_value: f64,
    pub background: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub rel_l2_beta: f64,
    pub rel_l2_gamma: f64,
    pub rel_linf_beta: f64,
    pub rel_linf_gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inclusion_mean_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inclusion_mean_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard_gamma: Option<f64>,
}

fn rel_errors(rec: &ScalarField, truth: &ScalarField) -> Result<(f64, f64)> {
    if rec.grid != truth.grid {
        return Err(Error::Dimension("metrics: grids differ".into()));
    }
    let qw = quadrature_weights(&rec.grid);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut linf_num: f64 = 0.0;
    let mut linf_den: f64 = 0.0;
    for k in 0..rec.values.len() {
        let d = rec.values[k] - truth.values[k];
        num += qw.values[k] * d * d;
        den += qw.values[k] * truth.values[k] * truth.values[k];
        linf_num = linf_num.max(d.abs());
        linf_den = linf_den.max(truth.values[k].abs());
    }
    let l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    let linf = if linf_den > 0.0 { linf_num / linf_den } else { linf_num };
    Ok((l2, linf))
}

fn mask_metrics(rec: &ScalarField, info: &MaskInfo) -> (f64, f64) {
    let n_in = info.mask.iter().filter(|&&m| m).count();
    let mean_inside = if n_in > 0 {
        rec.values
            .iter()
            .zip(&info.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum::<f64>()
            / n_in as f64
    } else {
        f64::NAN
    };
    let threshold = info.background + 0.5 * (info.inside_value - info.background);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (v, &m) in rec.values.iter().zip(&info.mask) {
        let level = *v >= threshold;
        if level && m {
            inter += 1;
        }
        if level || m {
            union += 1;
        }
    }
    let jaccard = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    (mean_inside, jaccard)
}

pub fn error_metrics(
    rec: &Reconstruction,
    truth_beta: &ScalarField,
    truth_gamma: &ScalarField,
    beta_mask: Option<&MaskInfo>,
    gamma_mask: Option<&MaskInfo>,
) -> Result<Metrics> {
    let (rel_l2_beta, rel_linf_beta) = rel_errors(&rec.beta, truth_beta)?;
    let (rel_l2_gamma, rel_linf_gamma) = rel_errors(&rec.gamma, truth_gamma)?;
    let bm = beta_mask.map(|m| mask_metrics(&rec.beta, m));
    let gm = gamma_mask.map(|m| mask_metrics(&rec.gamma, m));
    Ok(Metrics {
        rel_l2_beta,
        rel_l2_gamma,
        rel_linf_beta,
        rel_linf_gamma,
        inclusion_mean_beta: bm.map(|v| v.0),
        inclusion_mean_gamma: gm.map(|v| v.0),
        jaccard_beta: bm.map(|v| v.1),
        jaccard_gamma: gm.map(|v| v.1),
    })
}

/// CSV heatmaps of a set of named fields (one matrix per time slice, rows
/// over y ascending, columns over x ascending).
pub fn export_heatmaps(fields: &[(&str, &ScalarField)], out_dir: &Path) -> Result<()> {
    for (name, field) in fields {
        fld::export_csv(field, out_dir, name)?;
    }
    Ok(())
}
