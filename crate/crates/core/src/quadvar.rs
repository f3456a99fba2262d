//! Quadratic variations, the normalised limit statistic and a
//! quadratic-variation estimator of the Hurst index.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hermite::{box_increments, IncrementArray, SampleField};
use crate::params::{HurstVector, ModelParams};

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvResult {
    pub n: Vec<usize>,
    pub v_n: f64,
    /// Absent for `q = 1`, where the statistic has no second-chaos limit.
    pub t_n: Option<f64>,
}

/// `(Π N_j)^{-1} Σ_i [Π N_j^{2H_j} (ΔZ_i)^2 − 1]`, summed lexicographically
/// with compensation.
pub fn quadratic_variation(incs: &IncrementArray, hurst: &HurstVector) -> Result<f64> {
    if incs.values.is_empty() {
        return Err(Error::Empty("increment array"));
    }
    if incs.shape.len() != hurst.dim() {
        return Err(invalid(format!(
            "increments have {} axes but the Hurst vector has {}",
            incs.shape.len(),
            hurst.dim()
        )));
    }
    let scale: f64 = incs
        .shape
        .iter()
        .zip(hurst.as_slice())
        .map(|(&n, &h)| (n as f64).powf(2.0 * h))
        .product();
    let count = incs.values.len() as f64;
    Ok(compensated_sum(incs.values.iter().map(|&z| scale * z * z - 1.0)) / count)
}

/// `c1^{-1/2} Π_j N_j^{(2-2H_j)/q} / (q! q)`.
pub fn theorem_multiplier(n: &[usize], params: &ModelParams) -> Result<f64> {
    if params.q() == 1 {
        return Err(invalid(
            "the normalised statistic is defined for q >= 2; for q = 1 use the q1 regression harness",
        ));
    }
    if n.len() != params.dim() {
        return Err(invalid("observation grid and Hurst vector differ in dimension"));
    }
    let growth: f64 = n
        .iter()
        .zip(params.axes())
        .map(|(&nn, ax)| (nn as f64).powf(ax.rate))
        .product();
    Ok(growth / (params.c1()?.sqrt() * params.second_chaos_coeff()))
}

/// The normalised statistic `T_N` of the limit theorem.
pub fn normalized_statistic(v: f64, n: &[usize], params: &ModelParams) -> Result<f64> {
    Ok(theorem_multiplier(n, params)? * v)
}

/// `V_N` and (for `q >= 2`) `T_N` of a field on observation grid `n`.
pub fn analyze(field: &SampleField, n: &[usize]) -> Result<QvResult> {
    let incs = box_increments(field, n)?;
    let v_n = quadratic_variation(&incs, field.params.hurst())?;
    let t_n = if field.params.q() >= 2 {
        Some(normalized_statistic(v_n, n, &field.params)?)
    } else {
        None
    };
    Ok(QvResult {
        n: n.to_vec(),
        v_n,
        t_n,
    })
}

/// `-slope / 2` of the least-squares line through `(log N, log mean_square)`.
pub fn hurst_from_moments(levels: &[usize], mean_squares: &[f64]) -> Result<f64> {
    if levels.len() != mean_squares.len() {
        return Err(invalid("levels and moments differ in length"));
    }
    if levels.len() < 2 {
        return Err(invalid("a regression needs at least two levels"));
    }
    if mean_squares.iter().any(|&m| m.is_nan() || m <= 0.0) {
        return Err(Error::ZeroVariation);
    }
    let xs: Vec<f64> = levels.iter().map(|&l| (l as f64).ln()).collect();
    let ys: Vec<f64> = mean_squares.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(-sxy / sxx / 2.0)
}

/// Per-axis Hurst estimates from the mean squared increments of `field`.
///
/// For axis `j`, the resolution along `j` runs over `levels` while every other
/// axis is held at the coarsest level.
pub fn estimate_hurst(field: &SampleField, levels: &[usize]) -> Result<Vec<f64>> {
    if levels.len() < 3 {
        return Err(invalid("the Hurst estimator needs at least three levels"));
    }
    let coarsest = *levels.iter().min().expect("non-empty");
    let d = field.grid.dim();
    (0..d)
        .map(|axis| {
            let moments = levels
                .iter()
                .map(|&level| {
                    let mut obs = vec![coarsest; d];
                    obs[axis] = level;
                    let incs = box_increments(field, &obs)?;
                    let ms = compensated_sum(incs.values.iter().map(|z| z * z)) / incs.values.len() as f64;
                    Ok(ms)
                })
                .collect::<Result<Vec<f64>>>()?;
            hurst_from_moments(levels, &moments)
        })
        .collect()
}
