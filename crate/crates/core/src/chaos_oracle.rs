//! Deterministic evaluation of the chaos-component variances of the
//! quadratic variation.
//!
//! Per axis, every component reduces to the unit-cube integrals
//!
//! ```text
//! I(m) = ∫_{[0,1]^4} |u-v|^β |u'-v'|^β |u-u'+m|^γ |v-v'+m|^γ
//! ```
//!
//! with `β = (2H'-2) r` and `γ = (2H'-2)(q-r)`, summed over lattice pairs
//! `(i, k)` with `m = i - k`. The double lattice sum collapses onto a single
//! sum over displacements weighted by `N - |m|`.
//!
//! Near displacements (`|m| <= 1`) are integrated after the Fubini reduction
//! `I = ∫∫ Φ(v, u'-m) Φ(u', v+m) dv du'`, where
//! `Φ(x, y) = ∫_0^1 |t-x|^β |t-y|^γ dt` is itself split at its singular
//! points. Far displacements use a product rule on pairs `(u, v)` that
//! absorbs `|u-v|^β` exactly, since the remaining factors are smooth there.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Execution};
use crate::gaussian::fgn_autocovariance;
use crate::params::{self, factorial, ModelParams};
use crate::quadrature::{EndPoint, GaussJacobi, GaussLegendre, GradedRule};

/// Displacements computed exactly before the tail is considered for truncation.
pub const EXACT_DISPLACEMENTS: usize = 1 << 13;

/// Relative size below which a bounded displacement tail is dropped.
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;

/// Per-axis exponents `(β, γ)` of one chaos component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellExponents {
    pub near: f64,
    pub cross: f64,
}

impl CellExponents {
    /// Exponents of the component with contraction order `r` on an axis with
    /// substrate index `h_prime`.
    pub fn for_component(h_prime: f64, q: u32, r: u32) -> Self {
        let alpha = 2.0 * h_prime - 2.0;
        Self {
            near: alpha * f64::from(r),
            cross: alpha * f64::from(q - r),
        }
    }

    fn key(&self) -> (u64, u64) {
        (self.near.to_bits(), self.cross.to_bits())
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    at: f64,
    exponent: f64,
}

const SAME_POINT: f64 = 1e-14;

/// Weighted nodes on `[0, 1]` for an integrand that is non-smooth at the
/// given event locations (inside, on, or just outside the interval).
fn nodes_with_events(rule: &GradedRule, events: &[Event], out: &mut Vec<(f64, f64)>) {
    let mut breaks: Vec<f64> = vec![0.0, 1.0];
    for e in events {
        if e.at > SAME_POINT && e.at < 1.0 - SAME_POINT {
            breaks.push(e.at);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|b, a| (*b - *a).abs() <= SAME_POINT);
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let end = |x: f64, outward: f64| {
            let mut ep = EndPoint::REGULAR;
            for e in events {
                let dist = (e.at - x) * outward;
                if dist.abs() <= SAME_POINT {
                    ep.exponent = if ep.exponent == 0.0 { e.exponent } else { ep.exponent.min(e.exponent) };
                } else if dist > 0.0 {
                    ep = ep.with_gap(dist);
                }
            }
            ep
        };
        rule.push_nodes(a, b, end(a, -1.0), end(b, 1.0), out);
    }
}

/// Product rule for `∫∫_{[0,1]^2} |u-v|^β f(u, v) du dv` with smooth `f`.
#[derive(Debug, Clone)]
struct PairRule {
    nodes: Vec<(f64, f64, f64)>,
}

impl PairRule {
    fn new(points: usize, beta: f64) -> Self {
        let jacobi = GaussJacobi::new(points, beta);
        let gl = GaussLegendre::new(points);
        let mut nodes = Vec::with_capacity(2 * points * points);
        for (&delta, &wd) in jacobi.nodes().iter().zip(jacobi.weights()) {
            let mut line = Vec::new();
            gl.push_mapped(0.0, 1.0 - delta, &mut line);
            for (v, wv) in line {
                nodes.push((v + delta, v, wd * wv));
                nodes.push((v, v + delta, wd * wv));
            }
        }
        Self { nodes }
    }
}

#[derive(Debug, Clone)]
struct DisplacementTable {
    values: Vec<f64>,
}

/// Sum over one axis of the lattice-pair integrals, `Σ_{i,k<N} I(|i-k|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSum {
    pub total: f64,
    /// The `m = 0` terms, `N·I(0)`.
    pub diagonal: f64,
    /// Largest displacement summed when the tail was dropped.
    pub truncated_at: Option<usize>,
}

/// Quadrature engine with a per-exponent cache of displacement integrals.
#[derive(Debug)]
pub struct ChaosOracle {
    exec: Execution,
    near_rule: GradedRule,
    phi_rule: GradedRule,
    far_points: usize,
    tables: Mutex<HashMap<(u64, u64), Arc<DisplacementTable>>>,
    pair_rules: Mutex<HashMap<u64, Arc<PairRule>>>,
}

impl Default for ChaosOracle {
    fn default() -> Self {
        Self::new(Execution::default())
    }
}

impl ChaosOracle {
    pub fn new(exec: Execution) -> Self {
        Self {
            exec,
            near_rule: GradedRule::new(10, 0.15, 1e-10),
            phi_rule: GradedRule::new(12, 0.25, 1e-13),
            far_points: 12,
            tables: Mutex::new(HashMap::new()),
            pair_rules: Mutex::new(HashMap::new()),
        }
    }

    /// An oracle with every rule refined, for convergence checks.
    pub fn refined(exec: Execution) -> Self {
        Self {
            near_rule: GradedRule::new(16, 0.1, 1e-12),
            phi_rule: GradedRule::new(16, 0.1, 1e-14),
            far_points: 20,
            ..Self::new(exec)
        }
    }

    /// `Φ(x, y) = ∫_0^1 |t-x|^β |t-y|^γ dt`.
    pub fn phi(&self, ex: CellExponents, x: f64, y: f64) -> f64 {
        let mut sing: Vec<(f64, f64)> = Vec::with_capacity(2);
        if ex.near != 0.0 {
            sing.push((x, ex.near));
        }
        if ex.cross != 0.0 {
            sing.push((y, ex.cross));
        }
        if sing.len() == 2 && (x - y).abs() <= SAME_POINT {
            sing = vec![(x, ex.near + ex.cross)];
        }
        let mut breaks = vec![0.0, 1.0];
        for &(c, _) in &sing {
            if c > 0.0 && c < 1.0 {
                breaks.push(c);
            }
        }
        breaks.sort_by(f64::total_cmp);
        let exponent_at = |p: f64| sing.iter().find(|c| c.0 == p).map(|c| c.1);
        let mut total = 0.0;
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            match (exponent_at(a), exponent_at(b)) {
                (Some(ea), Some(eb)) if sing.len() == 2 => {
                    // Only the two powers live here: a beta integral.
                    total += (b - a).powf(ea + eb + 1.0) * beta(ea + 1.0, eb + 1.0);
                }
                _ => {
                    let mid = 0.5 * (a + b);
                    total += self.phi_half(&sing, a, mid - a, 1.0);
                    total += self.phi_half(&sing, b, b - mid, -1.0);
                }
            }
        }
        total
    }

    /// `∫_0^width Π |anchor + dir τ - c|^e dτ`, graded toward the anchor.
    ///
    /// Distances are formed as `(anchor - c) + dir τ` so a singular point on the
    /// anchor is resolved to full relative precision.
    fn phi_half(&self, sing: &[(f64, f64)], anchor: f64, width: f64, dir: f64) -> f64 {
        let mut near = EndPoint::REGULAR;
        let mut far = EndPoint::REGULAR;
        for &(c, e) in sing {
            let off = (c - anchor) * dir;
            if off == 0.0 {
                near.exponent = e;
            } else if off < 0.0 {
                near = near.with_gap(-off);
            } else if off > width {
                far = far.with_gap(off - width);
            }
        }
        self.phi_rule.integrate(0.0, width, near, far, |tau| {
            sing.iter()
                .map(|&(c, e)| ((anchor - c) + dir * tau).abs().powf(e))
                .product()
        })
    }

    /// `∫_{[0,1]^4} |u-v+p|^β |u'-v'+s|^β |u-u'+r|^γ |v-v'+t|^γ` for integer
    /// offsets `[p, s, r, t]`.
    pub fn displaced_cell_integral(&self, ex: CellExponents, offsets: [i64; 4]) -> f64 {
        let [p, s, r, t] = offsets.map(|o| o as f64);
        let kinks: Vec<f64> = [ex.near + 1.0, ex.cross + 1.0, ex.near + ex.cross + 1.0]
            .into_iter()
            .filter(|&e| (e - 1.0).abs() > 0.0)
            .collect();
        let kink = kinks.into_iter().fold(f64::INFINITY, f64::min);
        let kink = if kink.is_finite() { kink } else { 1.0 };
        // Lines in the (v, u') square where an argument of Φ meets 0, 1 or the other argument.
        let shifts = [r - p, t - s];
        let mut outer_events = Vec::new();
        for c in [p, p + 1.0, -t, 1.0 - t] {
            outer_events.push(Event { at: c, exponent: kink });
        }
        for c in shifts {
            outer_events.push(Event { at: -c, exponent: kink });
            outer_events.push(Event { at: 1.0 - c, exponent: kink });
        }
        let mut outer = Vec::new();
        nodes_with_events(&self.near_rule, &outer_events, &mut outer);
        let rows = map_indexed(self.exec, outer.len(), |i| {
            let (v, wv) = outer[i];
            let mut events = Vec::with_capacity(6);
            for c in [r, r + 1.0, -s, 1.0 - s] {
                events.push(Event { at: c, exponent: kink });
            }
            for c in shifts {
                events.push(Event { at: v + c, exponent: kink });
            }
            let mut inner = Vec::new();
            nodes_with_events(&self.near_rule, &events, &mut inner);
            let acc: f64 = inner
                .iter()
                .map(|&(up, w)| w * self.phi(ex, v - p, up - r) * self.phi(ex, up + s, v + t))
                .sum();
            wv * acc
        });
        rows.iter().sum()
    }

    fn pair_rule(&self, beta_: f64) -> Arc<PairRule> {
        let mut cache = self.pair_rules.lock().expect("pair rule cache");
        cache
            .entry(beta_.to_bits())
            .or_insert_with(|| Arc::new(PairRule::new(self.far_points, beta_)))
            .clone()
    }

    fn far_integral(&self, ex: CellExponents, m: usize, rule: &PairRule) -> f64 {
        let mf = m as f64;
        let g = ex.cross;
        let mut total = 0.0;
        for &(u, v, w) in &rule.nodes {
            let mut acc = 0.0;
            for &(u2, v2, w2) in &rule.nodes {
                acc += w2 * ((u - u2 + mf) * (v - v2 + mf)).powf(g);
            }
            total += w * acc;
        }
        total
    }

    /// `I(m)` for one displacement.
    pub fn displacement_integral(&self, ex: CellExponents, m: i64) -> f64 {
        let m = m.unsigned_abs() as usize;
        if ex.near == 0.0 {
            return zero_near_closed_form(ex.cross, m);
        }
        if m <= 1 {
            self.displaced_cell_integral(ex, [0, 0, m as i64, m as i64])
        } else {
            let rule = self.pair_rule(ex.near);
            self.far_integral(ex, m, &rule)
        }
    }

    /// `I(0), …, I(count-1)`, cached per exponent pair.
    pub fn displacement_integrals(&self, ex: CellExponents, count: usize) -> Vec<f64> {
        let have = {
            let tables = self.tables.lock().expect("table cache");
            tables.get(&ex.key()).cloned()
        };
        if let Some(t) = &have {
            if t.values.len() >= count {
                return t.values[..count].to_vec();
            }
        }
        let mut values = have.map(|t| t.values.clone()).unwrap_or_default();
        let start = values.len();
        if ex.near == 0.0 {
            values.extend((start..count).map(|m| zero_near_closed_form(ex.cross, m)));
        } else {
            for m in start..count.min(2) {
                values.push(self.displacement_integral(ex, m as i64));
            }
            if count > 2 {
                let from = values.len();
                let rule = self.pair_rule(ex.near);
                let far = map_indexed(self.exec, count - from, |k| self.far_integral(ex, from + k, &rule));
                values.extend(far);
            }
        }
        let mut tables = self.tables.lock().expect("table cache");
        tables.insert(ex.key(), Arc::new(DisplacementTable { values: values.clone() }));
        values
    }

    /// `Σ_{i,k<n} I(|i-k|) = n I(0) + 2 Σ_{m=1}^{n-1} (n-m) I(m)`.
    pub fn axis_sum(&self, ex: CellExponents, n: usize) -> AxisSum {
        let exact = n.min(EXACT_DISPLACEMENTS);
        let values = self.displacement_integrals(ex, exact);
        let mut total = displacement_sum(&values, n);
        let diagonal = n as f64 * values[0];
        let mut truncated_at = None;
        if exact < n {
            // |u-u'+m| >= m-1 bounds the tail by the near-field factor times (m-1)^{2γ}.
            let near_mass = if ex.near == 0.0 {
                1.0
            } else {
                2.0 / ((ex.near + 1.0) * (ex.near + 2.0))
            };
            let tail_bound: f64 = (exact..n)
                .map(|m| 2.0 * (n - m) as f64 * near_mass * near_mass * ((m - 1) as f64).powf(2.0 * ex.cross))
                .sum();
            if tail_bound < TRUNCATION_TOLERANCE * total {
                truncated_at = Some(exact - 1);
            } else {
                let values = self.displacement_integrals(ex, n);
                total = displacement_sum(&values, n);
            }
        }
        AxisSum {
            total,
            diagonal,
            truncated_at,
        }
    }

    fn component(&self, params: &ModelParams, n: &[usize], r: u32) -> Result<ComponentVariance> {
        let q = params.q();
        if q < 2 {
            return Err(invalid("chaos-component variances need q >= 2"));
        }
        if r > q - 1 {
            return Err(invalid(format!("contraction order r = {r} must lie in 0..{}", q - 1)));
        }
        if n.len() != params.dim() {
            return Err(invalid("observation grid and Hurst vector differ in dimension"));
        }
        if let Some(&bad) = n.iter().find(|&&x| x < 2) {
            return Err(invalid(format!("observation resolutions must be at least 2, got {bad}")));
        }
        let prefactor = factorial(2 * (q - r)) as f64 * params.b().powi(4) * params.substrate_factor_power();
        let mut total = prefactor;
        let mut off_diagonal = prefactor;
        let mut truncated_at = Vec::with_capacity(n.len());
        for (&nn, ax) in n.iter().zip(params.axes()) {
            let ex = CellExponents::for_component(ax.substrate, q, r);
            let s = self.axis_sum(ex, nn);
            let scale = (nn as f64).powi(-2);
            total *= s.total * scale;
            off_diagonal *= (s.total - s.diagonal) * scale;
            truncated_at.push(s.truncated_at);
        }
        Ok(ComponentVariance {
            r,
            value: total,
            diagonal: total - off_diagonal,
            truncated_at,
        })
    }

    /// `E[F_{2,N}^2]`.
    pub fn second_chaos_variance(&self, n: &[usize], params: &ModelParams) -> Result<f64> {
        Ok(self.component(params, n, params.q().saturating_sub(1))?.value)
    }

    /// Upper bound on `E[F_{2q-2r,N}^2]` for `r <= q-2`.
    pub fn higher_chaos_bound(&self, n: &[usize], params: &ModelParams, r: u32) -> Result<f64> {
        if params.q() < 2 || r + 2 > params.q() {
            return Err(invalid(format!(
                "higher-chaos bounds exist for r in 0..={}, got r = {r}",
                params.q() as i64 - 2
            )));
        }
        Ok(self.component(params, n, r)?.value)
    }

    pub fn report(&self, n: &[usize], params: &ModelParams) -> Result<VarianceReport> {
        let q = params.q();
        let f2 = self.component(params, n, q.saturating_sub(1))?;
        let higher = (0..q - 1)
            .map(|r| self.component(params, n, r))
            .collect::<Result<Vec<_>>>()?;
        let growth: f64 = n
            .iter()
            .zip(params.axes())
            .map(|(&nn, ax)| (nn as f64).powf(2.0 * (2.0 - 2.0 * ax.substrate)))
            .product();
        let c1 = params.c1()?;
        let coeffs = params.chaos_coeffs();
        let mut vn = (coeffs[q as usize - 1] as f64).powi(2) * f2.value;
        for h in &higher {
            vn += (coeffs[h.r as usize] as f64).powi(2) * h.value;
        }
        let mut truncated_at = f2.truncated_at.clone();
        for h in &higher {
            for (t, ht) in truncated_at.iter_mut().zip(&h.truncated_at) {
                *t = match (*t, *ht) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
        }
        Ok(VarianceReport {
            n: n.to_vec(),
            q,
            hurst: params.hurst().as_slice().to_vec(),
            f2_variance: f2.value,
            normalized_ratio: growth * f2.value / c1,
            diagonal_ratio: growth * f2.diagonal / c1,
            higher_bounds: higher
                .iter()
                .map(|h| HigherBound {
                    r: h.r,
                    bound: h.value,
                    scaled: growth * h.value,
                })
                .collect(),
            vn_variance: vn,
            truncated_at,
        })
    }
}

/// `I(m)` when `β = 0`: the square of `∫∫|u-u'+m|^γ`, which is the fGn
/// autocovariance of index `1 + γ/2` divided by `h(2h-1)`.
fn zero_near_closed_form(gamma_: f64, m: usize) -> f64 {
    let h = 1.0 + 0.5 * gamma_;
    let v = fgn_autocovariance(h, m as i64) / (h * (2.0 * h - 1.0));
    v * v
}

/// `n I(0) + 2 Σ_{m=1}^{min(n, len)-1} (n-m) I(m)`.
pub fn displacement_sum(values: &[f64], n: usize) -> f64 {
    let mut acc = n as f64 * values[0];
    for (m, &v) in values.iter().enumerate().take(n).skip(1) {
        acc += 2.0 * (n - m) as f64 * v;
    }
    acc
}

/// `Σ_{i,k} Π_j I_j(|i_j - k_j|)` over all pairs of multi-indices, by brute force.
pub fn brute_force_pair_sum(tables: &[Vec<f64>], n: &[usize]) -> f64 {
    let cells: usize = n.iter().product();
    let unflatten = |mut flat: usize| {
        let mut idx = vec![0usize; n.len()];
        for j in (0..n.len()).rev() {
            idx[j] = flat % n[j];
            flat /= n[j];
        }
        idx
    };
    let mut total = 0.0;
    for a in 0..cells {
        let ia = unflatten(a);
        for b in 0..cells {
            let ib = unflatten(b);
            let mut term = 1.0;
            for j in 0..n.len() {
                term *= tables[j][ia[j].abs_diff(ib[j])];
            }
            total += term;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
struct ComponentVariance {
    r: u32,
    value: f64,
    diagonal: f64,
    truncated_at: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HigherBound {
    pub r: u32,
    pub bound: f64,
    /// `Π N^{2(2-2H')}` times the bound.
    pub scaled: f64,
}

/// Oracle output for one observation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: Vec<usize>,
    pub q: u32,
    pub hurst: Vec<f64>,
    /// `E[F_{2,N}^2]`, exact.
    pub f2_variance: f64,
    /// `c1^{-1} Π N^{2(2-2H')} E[F_{2,N}^2]`.
    pub normalized_ratio: f64,
    /// Part of the normalised ratio coming from pairs on the diagonal of at
    /// least one axis.
    pub diagonal_ratio: f64,
    /// Upper bounds for `r = 0..q-2`.
    pub higher_bounds: Vec<HigherBound>,
    /// `Σ_r c_{2q-2r}^2 E[F_{2q-2r,N}^2]` with the bounds standing in for
    /// `r <= q-2`, so biased upward.
    pub vn_variance: f64,
    pub truncated_at: Vec<Option<usize>>,
}

/// `E[F_{2,N}^2]` with a default oracle.
pub fn second_chaos_variance(n: &[usize], params: &ModelParams) -> Result<f64> {
    ChaosOracle::default().second_chaos_variance(n, params)
}

/// Bound on `E[F_{2q-2r,N}^2]` with a default oracle.
pub fn higher_chaos_bound(n: &[usize], params: &ModelParams, r: u32) -> Result<f64> {
    ChaosOracle::default().higher_chaos_bound(n, params, r)
}

/// Predicted `E[V_N^2]` with a default oracle.
pub fn vn_variance_prediction(n: &[usize], params: &ModelParams) -> Result<f64> {
    Ok(ChaosOracle::default().report(n, params)?.vn_variance)
}

/// `Π_j 2 / [(4H'-3)(4H'-2)((2H'-2)(q-1)+1)^2((H'-1)(q-1)+1)^2]`.
pub fn limit_constant_f3(params: &ModelParams) -> Result<f64> {
    if params.q() < 2 {
        return Err(invalid("the second-chaos limit factor needs q >= 2"));
    }
    params::limit_constant_f3(params.q(), params.hurst())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(beta_: f64, gamma_: f64) -> CellExponents {
        CellExponents { near: beta_, cross: gamma_ }
    }

    #[test]
    fn phi_closed_forms() {
        let o = ChaosOracle::new(Execution::Sequential);
        // Both singular points inside: compare with a direct split by hand.
        let e = ex(-0.3, -0.4);
        let (x, y) = (0.2, 0.7);
        let rule = GradedRule::new(20, 0.1, 1e-14);
        let f = |t: f64| (t - x).abs().powf(-0.3) * (t - y).abs().powf(-0.4);
        let want = rule.integrate(0.0, x, EndPoint::near(1e9), EndPoint::power(-0.3), f)
            + (y - x).powf(0.3) * beta(0.7, 0.6)
            + rule.integrate(y, 1.0, EndPoint::power(-0.4), EndPoint::REGULAR, f);
        assert!((o.phi(e, x, y) / want - 1.0).abs() < 1e-12);
        // One power only: elementary.
        let got = o.phi(ex(-0.5, 0.0), 0.25, 3.0);
        let want = (0.25f64.powf(0.5) + 0.75f64.powf(0.5)) / 0.5;
        assert!((got / want - 1.0).abs() < 1e-12);
        // Coincident points merge their exponents.
        let got = o.phi(ex(-0.2, -0.3), 0.0, 0.0);
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_near_matches_quadrature() {
        let o = ChaosOracle::new(Execution::Sequential);
        let g = -0.6;
        // With β = 0 the near-field route still works and must agree.
        for m in [0i64, 1] {
            let quad = o.displaced_cell_integral(ex(0.0, g), [0, 0, m, m]);
            let exact = zero_near_closed_form(g, m as usize);
            assert!((quad / exact - 1.0).abs() < 1e-8, "m={m}: {quad} vs {exact}");
        }
    }

    #[test]
    fn far_rule_agrees_with_near_route() {
        let o = ChaosOracle::new(Execution::Parallel);
        let e = ex(-0.3, -0.3);
        for m in [2i64, 3] {
            let near = o.displaced_cell_integral(e, [0, 0, m, m]);
            let far = o.displacement_integral(e, m);
            assert!((near / far - 1.0).abs() < 1e-9, "m={m}: {near} vs {far}");
        }
    }

    #[test]
    fn swap_symmetry() {
        let o = ChaosOracle::new(Execution::Parallel);
        let e = ex(-0.3, -0.3);
        for offs in [[1i64, 0, 1, 0], [0, -1, 1, 1], [1, 1, 0, 1]] {
            let [p, s, r, t] = offs;
            let a = o.displaced_cell_integral(e, offs);
            let b = o.displaced_cell_integral(e, [-p, -s, t, r]);
            assert!((a / b - 1.0).abs() < 1e-8, "{offs:?}: {a} vs {b}");
        }
    }

    #[test]
    fn halving_self_similarity() {
        let o = ChaosOracle::new(Execution::Parallel);
        let e = ex(-0.3, -0.3);
        let m = 1i64;
        let mut acc = 0.0;
        for a in 0..2i64 {
            for b in 0..2i64 {
                for c in 0..2i64 {
                    for d in 0..2i64 {
                        acc += o.displaced_cell_integral(e, [a - b, c - d, 2 * m + a - c, 2 * m + b - d]);
                    }
                }
            }
        }
        let scaled = 2f64.powf(-4.0 - 2.0 * e.near - 2.0 * e.cross) * acc;
        let direct = o.displacement_integral(e, m);
        assert!((scaled / direct - 1.0).abs() < 1e-8, "{scaled} vs {direct}");
    }

    #[test]
    fn diagonal_edge_integral() {
        // 2∫(1-x) x^{4H'-4} dx over the unit square's diagonal band.
        let hp = 0.85;
        let e = 4.0 * hp - 4.0;
        let rule = GradedRule::new(12, 0.25, 1e-13);
        let quad = 2.0 * rule.integrate(0.0, 1.0, EndPoint::power(e), EndPoint::REGULAR, |x| (1.0 - x) * x.powf(e));
        let closed = 2.0 / ((4.0 * hp - 3.0) * (4.0 * hp - 2.0));
        assert!((closed - 3.5714).abs() < 1e-4);
        assert!((quad - closed).abs() < 1e-8);
        // The same quantity is the m = 0 entry of the oracle when γ = 0.
        let o = ChaosOracle::new(Execution::Sequential);
        let pair = o.pair_rule(e);
        let sum: f64 = pair.nodes.iter().map(|n| n.2).sum();
        assert!((sum - closed).abs() < 1e-12);
    }

    #[test]
    fn two_axis_brute_force() {
        let a: Vec<f64> = (0..16).map(|m| (1.0 + m as f64).powf(-0.6)).collect();
        let b: Vec<f64> = (0..16).map(|m| (2.0 + m as f64).powf(-1.1)).collect();
        for n in [[3usize, 5], [16, 7], [16, 16]] {
            let fast = displacement_sum(&a, n[0]) * displacement_sum(&b, n[1]);
            let slow = brute_force_pair_sum(&[a.clone(), b.clone()], &n);
            assert!((fast / slow - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_ratio_rises_to_one() {
        let o = ChaosOracle::new(Execution::Parallel);
        let p = ModelParams::from_slice(2, &[0.7]).unwrap();
        let mut last_ratio = 0.0;
        let mut last_diag = f64::INFINITY;
        for n in [64usize, 128, 256, 512] {
            let r = o.report(&[n], &p).unwrap();
            assert!(r.normalized_ratio > last_ratio && r.diagonal_ratio < last_diag);
            assert!(r.f2_variance >= 0.0 && r.higher_bounds.iter().all(|h| h.bound >= 0.0));
            last_ratio = r.normalized_ratio;
            last_diag = r.diagonal_ratio;
        }
        assert!((0.85..=1.05).contains(&last_ratio), "{last_ratio}");
    }

    #[test]
    fn q2_prediction_assembly() {
        let o = ChaosOracle::new(Execution::Parallel);
        let p = ModelParams::from_slice(2, &[0.7]).unwrap();
        let r = o.report(&[32], &p).unwrap();
        let want = r.higher_bounds[0].bound + 16.0 * r.f2_variance;
        assert!((r.vn_variance - want).abs() < 1e-15 * want);
    }

    #[test]
    fn displacement_sum_is_brute_force() {
        let values: Vec<f64> = (0..16).map(|m| 1.0 / (1.0 + m as f64).powf(0.7)).collect();
        for n in [2, 5, 16] {
            let fast = displacement_sum(&values, n);
            let slow = brute_force_pair_sum(std::slice::from_ref(&values), &[n]);
            assert!((fast / slow - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn f3_requires_higher_order() {
        let p1 = ModelParams::from_slice(1, &[0.9]).unwrap();
        assert!(limit_constant_f3(&p1).is_err());
        let p = ModelParams::from_slice(2, &[0.7]).unwrap();
        assert!((limit_constant_f3(&p).unwrap() - 10.088).abs() < 1e-3);
    }

    #[test]
    fn component_domain() {
        let o = ChaosOracle::new(Execution::Sequential);
        let p = ModelParams::from_slice(2, &[0.7]).unwrap();
        assert!(o.higher_chaos_bound(&[8], &p, 1).is_err());
        assert!(o.second_chaos_variance(&[1], &p).is_err());
        assert!(o.second_chaos_variance(&[8, 8], &p).is_err());
    }

    proptest! {
        #[test]
        fn displacement_reduction_exact(
            a in prop::collection::vec(0.0f64..2.0, 16),
            b in prop::collection::vec(0.0f64..2.0, 16),
            n0 in 2usize..=16,
            n1 in 2usize..=16,
        ) {
            let fast = displacement_sum(&a, n0) * displacement_sum(&b, n1);
            let slow = brute_force_pair_sum(&[a.clone(), b.clone()], &[n0, n1]);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1e-300));
        }

        #[test]
        fn phi_is_positive_and_symmetric(x in -0.5f64..1.5, y in -0.5f64..1.5) {
            let o = ChaosOracle::new(Execution::Sequential);
            let e = ex(-0.35, -0.35);
            let a = o.phi(e, x, y);
            let b = o.phi(e, y, x);
            prop_assert!(a > 0.0 && a.is_finite());
            prop_assert!((a / b - 1.0).abs() < 1e-10);
        }
    }
}
