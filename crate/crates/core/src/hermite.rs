//! Sample fields of the Hermite sheet on a lattice and their rectangular
//! increments.
//!
//! Two independent constructions are provided. The Hermite-rank construction
//! applies `H_q` to a long-memory Gaussian array and forms normalised partial
//! sums. The direct-kernel construction discretises the double Wiener–Itô
//! integral of the finite-time kernel representation (order 2, one axis).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::gaussian::{normal_stream, AxisCovariance, GridSpec, SeparableSampler};
use crate::params::{factorial, ModelParams, MAX_ORDER};
use crate::quadrature::{EndPoint, GradedRule};
use crate::volterra::KernelParams;

/// Smallest simulation resolution accepted per axis.
pub const MIN_RESOLUTION: usize = 8;

/// Largest mesh of the direct-kernel construction.
pub const MAX_DIRECT_KERNEL_CELLS: usize = 256;

/// Probabilists' Hermite polynomial `H_q(x)`.
pub fn hermite_poly(q: u32, x: f64) -> Result<f64> {
    if q == 0 || q > MAX_ORDER {
        return Err(Error::OrderOutOfRange(q));
    }
    Ok(hermite_unchecked(q, x))
}

#[inline]
fn hermite_unchecked(q: u32, x: f64) -> f64 {
    match q {
        0 => 1.0,
        1 => x,
        2 => x * x - 1.0,
        _ => {
            let (mut prev, mut cur) = (x, x * x - 1.0);
            for k in 2..q {
                let next = x * cur - f64::from(k) * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    HermiteRank,
    DirectKernel,
}

/// Gaussian array fed to `H_q` in the Hermite-rank construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substrate {
    /// Stationary correlation `γ_H(k)^{1/q}` per axis. Its `q`-th Hermite
    /// transform has exactly the fGn(`H`) covariance, so every lattice
    /// increment has the exact second moment of the limit field. The
    /// correlation decays like `k^{2H'-2}`, the same long memory as fGn(`H'`).
    #[default]
    CovarianceMatched,
    /// Fractional Gaussian noise with index `H'` per axis.
    FgnPrime,
}

impl Substrate {
    fn axis_covariance(self, h: f64, h_prime: f64, q: u32) -> AxisCovariance {
        match self {
            Substrate::CovarianceMatched => AxisCovariance::FgnRoot { h, root: q },
            Substrate::FgnPrime => AxisCovariance::Fgn { h: h_prime },
        }
    }
}

/// Field values at the lattice points `(i_1/n_1, …, i_d/n_d)`, `0 <= i_j <= n_j`,
/// stored row-major with `n_j + 1` entries per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleField {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub method: Method,
    pub seed: u64,
}

impl SampleField {
    /// Builds the field whose unit-cell increments are `masses` (row-major,
    /// one per cell of `grid`).
    pub fn from_cell_masses(params: ModelParams, grid: GridSpec, masses: &[f64], method: Method, seed: u64) -> Result<Self> {
        if masses.len() != grid.cells() {
            return Err(invalid(format!("{} cell masses for a grid of {} cells", masses.len(), grid.cells())));
        }
        let values = cumulate(masses, grid.resolutions());
        Ok(Self {
            params,
            grid,
            values,
            method,
            seed,
        })
    }

    /// Number of lattice points per axis.
    pub fn lattice_shape(&self) -> Vec<usize> {
        self.grid.resolutions().iter().map(|n| n + 1).collect()
    }

    pub fn value(&self, index: &[usize]) -> f64 {
        self.values[flat_index(index, &self.lattice_shape())]
    }

    /// `Z(1, …, 1)`.
    pub fn at_unit_corner(&self) -> f64 {
        *self.values.last().expect("non-empty field")
    }

    /// Unit-cell increments, recovered by differencing along each axis.
    pub fn cell_masses(&self) -> Vec<f64> {
        let mut shape = self.lattice_shape();
        let mut data = self.values.clone();
        for axis in 0..shape.len() {
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let mut next = Vec::with_capacity(outer * (len - 1) * inner);
            for o in 0..outer {
                for k in 1..len {
                    for i in 0..inner {
                        let hi = data[(o * len + k) * inner + i];
                        let lo = data[(o * len + k - 1) * inner + i];
                        next.push(hi - lo);
                    }
                }
            }
            data = next;
            shape[axis] = len - 1;
        }
        data
    }
}

fn flat_index(index: &[usize], shape: &[usize]) -> usize {
    index.iter().zip(shape).fold(0, |acc, (&i, &n)| {
        debug_assert!(i < n);
        acc * n + i
    })
}

/// Cumulative multi-sums with a zero prepended on every axis.
fn cumulate(masses: &[f64], dims: &[usize]) -> Vec<f64> {
    let mut shape = dims.to_vec();
    let mut data = masses.to_vec();
    for axis in 0..shape.len() {
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let mut next = vec![0.0; outer * (len + 1) * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for k in 0..len {
                    acc += data[(o * len + k) * inner + i];
                    next[(o * (len + 1) + k + 1) * inner + i] = acc;
                }
            }
        }
        data = next;
        shape[axis] = len + 1;
    }
    data
}

/// `Σ_{a,b < n} ρ(a - b)` for a stationary correlation given by lags.
fn lag_double_sum(n: usize, rho: impl Fn(i64) -> f64) -> f64 {
    let mut acc = n as f64 * rho(0);
    for k in 1..n {
        acc += 2.0 * (n - k) as f64 * rho(k as i64);
    }
    acc
}

/// Reusable Hermite-rank simulator for one parameter set and grid.
#[derive(Debug, Clone)]
pub struct HermiteRankSimulator {
    params: ModelParams,
    grid: GridSpec,
    substrate: Substrate,
    sampler: SeparableSampler,
    scale: f64,
}

impl HermiteRankSimulator {
    pub fn new(params: &ModelParams, grid: &GridSpec) -> Result<Self> {
        Self::with_substrate(params, grid, Substrate::default())
    }

    pub fn with_substrate(params: &ModelParams, grid: &GridSpec, substrate: Substrate) -> Result<Self> {
        if grid.dim() != params.dim() {
            return Err(invalid(format!(
                "grid has {} axes but the Hurst vector has {}",
                grid.dim(),
                params.dim()
            )));
        }
        if let Some(&n) = grid.resolutions().iter().find(|&&n| n < MIN_RESOLUTION) {
            return Err(invalid(format!(
                "simulation resolution {n} is below the minimum of {MIN_RESOLUTION}"
            )));
        }
        let q = params.q();
        let axes: Vec<AxisCovariance> = params
            .axes()
            .iter()
            .map(|ax| substrate.axis_covariance(ax.hurst, ax.substrate, q))
            .collect();
        let sampler = SeparableSampler::new(grid.clone(), &axes)?;
        // Exact variance of the full sum: q! Π_j Σ_{a,b} ρ_j(a-b)^q.
        let mut variance = factorial(q) as f64;
        for (&n, cov) in grid.resolutions().iter().zip(&axes) {
            variance *= lag_double_sum(n, |k| cov.at(k).powi(q as i32));
        }
        Ok(Self {
            params: params.clone(),
            grid: grid.clone(),
            substrate,
            sampler,
            scale: variance.sqrt().recip(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn substrate(&self) -> Substrate {
        self.substrate
    }

    /// Normalised unit-cell increments `H_q(X_i) / sqrt(Var Σ H_q(X))`.
    pub fn cell_masses(&self, seed: u64, exec: Execution) -> Vec<f64> {
        let q = self.params.q();
        let mut x = self.sampler.sample(seed, exec);
        for v in &mut x {
            *v = self.scale * hermite_unchecked(q, *v);
        }
        x
    }

    pub fn simulate(&self, seed: u64, exec: Execution) -> SampleField {
        let masses = self.cell_masses(seed, exec);
        SampleField {
            params: self.params.clone(),
            grid: self.grid.clone(),
            values: cumulate(&masses, self.grid.resolutions()),
            method: Method::HermiteRank,
            seed,
        }
    }
}

/// Hermite-rank sample on `grid` with the default substrate.
pub fn simulate_hermite_rank(params: &ModelParams, grid: &GridSpec, seed: u64) -> Result<SampleField> {
    Ok(HermiteRankSimulator::new(params, grid)?.simulate(seed, Execution::Sequential))
}

/// Discretisation of the order-2 kernel representation on a graded mesh.
///
/// The Brownian motion is projected onto the cells of the mesh
/// `x_k = (k/n)^2`; the kernel `g_t` is replaced by its cell averages and the
/// double integral is evaluated as
/// `Z(t) = b ∫_0^t (X_u^2 − E X_u^2) du` with
/// `X_u = Σ_k D_k(u) ξ_k / sqrt(|cell k|)` and `D_k(u)` the integral of
/// `∂₁K^{H'}(u, ·)` over cell `k`. Expanding the square shows this is the
/// double sum over cell pairs with Wick-centred diagonal terms.
#[derive(Debug, Clone)]
pub struct DirectKernelSimulator {
    params: ModelParams,
    n: usize,
    /// Quadrature weight of every `u` node.
    weights: Vec<f64>,
    /// Index of the lattice interval `[i/n, (i+1)/n)` holding each `u` node.
    interval: Vec<usize>,
    /// `D_k(u) / sqrt(|cell k|)`, row-major by node; rows are truncated to
    /// the cells that have started by time `u`.
    basis: Vec<Vec<f64>>,
    /// `E X_u^2` per node.
    mean_square: Vec<f64>,
}

impl DirectKernelSimulator {
    pub fn new(params: &ModelParams, n: usize, exec: Execution) -> Result<Self> {
        if params.q() != 2 || params.dim() != 1 {
            return Err(Error::OutOfScope(format!(
                "the direct-kernel construction covers q = 2, d = 1 only (got q = {}, d = {})",
                params.q(),
                params.dim()
            )));
        }
        if !(MIN_RESOLUTION..=MAX_DIRECT_KERNEL_CELLS).contains(&n) {
            return Err(Error::OutOfScope(format!(
                "direct-kernel mesh must have between {MIN_RESOLUTION} and {MAX_DIRECT_KERNEL_CELLS} cells, got {n}"
            )));
        }
        let kernel = KernelParams::new(params.axes()[0].substrate)?;
        let mesh: Vec<f64> = (0..=n).map(|k| (k as f64 / n as f64).powi(2)).collect();
        let lattice: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();

        // Breakpoints: mesh points (where D_k is non-smooth) and lattice points.
        let mut breaks: Vec<(f64, bool)> = mesh.iter().map(|&x| (x, true)).collect();
        breaks.extend(lattice.iter().map(|&x| (x, false)));
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        breaks.dedup_by(|b, a| {
            if (a.0 - b.0).abs() < 1e-15 {
                a.1 |= b.1;
                true
            } else {
                false
            }
        });
        let rule = GradedRule::new(6, 0.15, 1e-6);
        let kink = EndPoint::power(kernel.h() - 0.5);
        let mut nodes = Vec::new();
        for pair in breaks.windows(2) {
            let (a, at_mesh) = pair[0];
            let b = pair[1].0;
            let left = if at_mesh { kink } else { EndPoint::REGULAR };
            rule.push_nodes(a, b, left, EndPoint::REGULAR, &mut nodes);
        }
        let interval = nodes
            .iter()
            .map(|&(u, _)| ((u * n as f64) as usize).min(n - 1))
            .collect();
        let widths: Vec<f64> = mesh.windows(2).map(|w| w[1] - w[0]).collect();
        let basis = map_indexed(exec, nodes.len(), |j| {
            let u = nodes[j].0;
            let started = mesh.partition_point(|&x| x < u).min(n);
            (0..started)
                .map(|k| kernel.cell_integral(u, mesh[k], mesh[k + 1]) / widths[k].sqrt())
                .collect::<Vec<f64>>()
        });
        let mean_square = basis.iter().map(|row| row.iter().map(|v| v * v).sum()).collect();
        Ok(Self {
            params: params.clone(),
            n,
            weights: nodes.iter().map(|p| p.1).collect(),
            interval,
            basis,
            mean_square,
        })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn simulate(&self, seed: u64) -> SampleField {
        let xi: Vec<f64> = normal_stream(seed).take(self.n).collect();
        let b = self.params.b();
        let mut per_interval = vec![0.0; self.n];
        for (j, row) in self.basis.iter().enumerate() {
            let x: f64 = row.iter().zip(&xi).map(|(d, z)| d * z).sum();
            per_interval[self.interval[j]] += self.weights[j] * (x * x - self.mean_square[j]);
        }
        let mut values = Vec::with_capacity(self.n + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for v in per_interval {
            acc += b * v;
            values.push(acc);
        }
        SampleField {
            params: self.params.clone(),
            grid: GridSpec::new(vec![self.n]).expect("validated resolution"),
            values,
            method: Method::DirectKernel,
            seed,
        }
    }

    /// Exact `E[Z(1)^2]` of the discretised field: `2 Σ_{k,l} A_kl^2` with
    /// `A_kl = b ∫ D_k D_l du / sqrt(|k||l|)`.
    pub fn exact_variance(&self) -> f64 {
        let n = self.n;
        let mut gram = vec![0.0; n * n];
        for (row, &w) in self.basis.iter().zip(&self.weights) {
            for (k, &dk) in row.iter().enumerate() {
                let s = w * dk;
                let line = &mut gram[k * n..k * n + row.len()];
                for (g, &dl) in line.iter_mut().zip(row) {
                    *g += s * dl;
                }
            }
        }
        let b = self.params.b();
        2.0 * b * b * gram.iter().map(|g| g * g).sum::<f64>()
    }
}

/// Direct-kernel sample with a mesh of `n` cells.
pub fn simulate_direct_kernel(params: &ModelParams, n: usize, seed: u64) -> Result<SampleField> {
    Ok(DirectKernelSimulator::new(params, n, Execution::Sequential)?.simulate(seed))
}

/// Rectangular increments `ΔZ` over the boxes of an observation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub params: ModelParams,
}

/// Sums blocks of `factor[j]` consecutive cells along every axis, axis by
/// axis in increasing order, each block summed in index order.
fn reduce_blocks(data: &[f64], dims: &[usize], factor: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut shape = dims.to_vec();
    let mut cur = data.to_vec();
    for axis in 0..shape.len() {
        let f = factor[axis];
        if f == 1 {
            continue;
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let out_len = len / f;
        let mut next = vec![0.0; outer * out_len * inner];
        for o in 0..outer {
            for c in 0..out_len {
                for i in 0..inner {
                    let mut acc = 0.0;
                    for k in c * f..(c + 1) * f {
                        acc += cur[(o * len + k) * inner + i];
                    }
                    next[(o * out_len + c) * inner + i] = acc;
                }
            }
        }
        cur = next;
        shape[axis] = out_len;
    }
    (cur, shape)
}

/// One simultaneous halving of every axis: each coarse box is the sum of its
/// `2^d` children taken in lexicographic order of the child offsets.
fn halve(data: &[f64], dims: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let d = dims.len();
    let coarse: Vec<usize> = dims.iter().map(|n| n / 2).collect();
    let total: usize = coarse.iter().product();
    let mut out = vec![0.0; total];
    let mut idx = vec![0usize; d];
    let mut child = vec![0usize; d];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for j in (0..d).rev() {
            idx[j] = rem % coarse[j];
            rem /= coarse[j];
        }
        let mut acc = 0.0;
        for offset in 0..(1usize << d) {
            for j in 0..d {
                child[j] = 2 * idx[j] + ((offset >> (d - 1 - j)) & 1);
            }
            acc += data[flat_index(&child, dims)];
        }
        *slot = acc;
    }
    (out, coarse)
}

/// Increments of `field` over the boxes `[i/N, (i+1)/N]`.
///
/// Mathematically this is the alternating corner sum
/// `Σ_{r∈{0,1}^d} (−1)^{d−|r|} Z((i+r)/N)`. It is evaluated as a fixed
/// summation pyramid so that refinement telescoping is exact in floating
/// point: the unit-cell increments are first summed into blocks at the
/// finest resolution `2^K N` that divides the simulation grid, and then
/// halved `K` times; the increments at `N` are therefore always the
/// lexicographic sums of the increments at `2N` whenever both exist.
pub fn box_increments(field: &SampleField, obs: &[usize]) -> Result<IncrementArray> {
    let n = field.grid.resolutions();
    if obs.len() != n.len() {
        return Err(invalid(format!(
            "observation grid has {} axes but the field has {}",
            obs.len(),
            n.len()
        )));
    }
    for (&nn, &nj) in obs.iter().zip(n) {
        if nn == 0 || nj % nn != 0 {
            return Err(invalid(format!(
                "observation resolution {nn} does not divide the simulation resolution {nj}"
            )));
        }
    }
    let mut halvings = 0u32;
    while obs
        .iter()
        .zip(n)
        .all(|(&nn, &nj)| nj % (nn << (halvings + 1)) == 0)
    {
        halvings += 1;
    }
    let top: Vec<usize> = obs.iter().map(|&nn| nn << halvings).collect();
    let factor: Vec<usize> = top.iter().zip(n).map(|(&t, &nj)| nj / t).collect();
    let (mut data, mut dims) = reduce_blocks(&field.cell_masses(), n, &factor);
    for _ in 0..halvings {
        let (next, next_dims) = halve(&data, &dims);
        data = next;
        dims = next_dims;
    }
    Ok(IncrementArray {
        shape: dims,
        values: data,
        params: field.params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(q: u32, h: &[f64]) -> ModelParams {
        ModelParams::from_slice(q, h).unwrap()
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite_poly(2, 2.0).unwrap(), 3.0);
        assert_eq!(hermite_poly(3, 2.0).unwrap(), 2.0);
        assert_eq!(hermite_poly(1, -1.5).unwrap(), -1.5);
        assert!((hermite_poly(4, 1.0).unwrap() - (1.0 - 6.0 + 3.0)).abs() < 1e-15);
        assert!(hermite_poly(0, 1.0).is_err());
        assert!(hermite_poly(21, 1.0).is_err());
    }

    #[test]
    fn hermite_orthogonality() {
        let reps = 200_000;
        let z: Vec<f64> = normal_stream(5).take(reps).collect();
        for q in 1..=4u32 {
            for p in 1..=4u32 {
                let prod: Vec<f64> = z.iter().map(|&x| hermite_unchecked(q, x) * hermite_unchecked(p, x)).collect();
                let mean = prod.iter().sum::<f64>() / reps as f64;
                let var = prod.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
                let se = (var / reps as f64).sqrt();
                let want = if p == q { factorial(q) as f64 } else { 0.0 };
                assert!((mean - want).abs() < 4.0 * se, "q={q} p={p}: {mean} ± {se}");
            }
        }
    }

    #[test]
    fn field_vanishes_on_axes() {
        let p = params(2, &[0.7, 0.8]);
        let grid = GridSpec::new(vec![16, 8]).unwrap();
        let f = simulate_hermite_rank(&p, &grid, 3).unwrap();
        for i in 0..=16 {
            assert_eq!(f.value(&[i, 0]), 0.0);
        }
        for j in 0..=8 {
            assert_eq!(f.value(&[0, j]), 0.0);
        }
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_small_resolution() {
        let p = params(2, &[0.7]);
        assert!(simulate_hermite_rank(&p, &GridSpec::new(vec![4]).unwrap(), 0).is_err());
        let p2 = params(2, &[0.7, 0.7]);
        assert!(simulate_hermite_rank(&p2, &GridSpec::new(vec![16]).unwrap(), 0).is_err());
    }

    #[test]
    fn matched_normalisation_is_power_law() {
        // With the matched substrate the full-sum variance is n^{2H} q! exactly.
        let p = params(3, &[0.8]);
        let sim = HermiteRankSimulator::new(&p, &GridSpec::new(vec![512]).unwrap()).unwrap();
        assert!((sim.scale - (6.0 * 512f64.powf(1.6)).sqrt().recip()).abs() < 1e-12 * sim.scale);
        let lit = HermiteRankSimulator::with_substrate(&p, &GridSpec::new(vec![512]).unwrap(), Substrate::FgnPrime).unwrap();
        let hp = p.axes()[0].substrate;
        let s = lag_double_sum(512, |k| crate::gaussian::fgn_autocovariance(hp, k).powi(3));
        assert!((lit.scale - (6.0 * s).sqrt().recip()).abs() < 1e-12 * lit.scale);
    }

    #[test]
    fn direct_kernel_scope() {
        assert!(DirectKernelSimulator::new(&params(3, &[0.7]), 64, Execution::Sequential).is_err());
        assert!(DirectKernelSimulator::new(&params(2, &[0.7, 0.7]), 64, Execution::Sequential).is_err());
        assert!(DirectKernelSimulator::new(&params(2, &[0.7]), 512, Execution::Sequential).is_err());
    }

    #[test]
    fn direct_kernel_starts_at_zero_and_variance_grows() {
        let p = params(2, &[0.7]);
        let mut last = 0.0;
        for n in [16, 32, 64] {
            let sim = DirectKernelSimulator::new(&p, n, Execution::Parallel).unwrap();
            let f = sim.simulate(1);
            assert_eq!(f.values[0], 0.0);
            assert_eq!(f.values.len(), n + 1);
            let v = sim.exact_variance();
            assert!(v > last && v < 1.0, "n={n}: {v}");
            last = v;
        }
    }

    #[test]
    fn increments_d1_are_differences() {
        let p = params(2, &[0.7]);
        let f = simulate_hermite_rank(&p, &GridSpec::new(vec![64]).unwrap(), 9).unwrap();
        let inc = box_increments(&f, &[8]).unwrap();
        for i in 0..8 {
            let want = f.values[(i + 1) * 8] - f.values[i * 8];
            assert!((inc.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_d2_four_corner_formula() {
        let p = params(2, &[0.7, 0.6]);
        let f = simulate_hermite_rank(&p, &GridSpec::new(vec![32, 16]).unwrap(), 4).unwrap();
        let inc = box_increments(&f, &[4, 8]).unwrap();
        assert_eq!(inc.shape, vec![4, 8]);
        for i in 0..4 {
            for j in 0..8 {
                let (s1, t1, s2, t2) = (i * 8, (i + 1) * 8, j * 2, (j + 1) * 2);
                let want = f.value(&[t1, t2]) - f.value(&[t1, s2]) - f.value(&[s1, t2]) + f.value(&[s1, s2]);
                assert!((inc.values[i * 8 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_rows_give_zero_box() {
        // Z(s, t) = g(t) for every s: the alternating sum cancels.
        let p = params(1, &[0.7, 0.7]);
        let grid = GridSpec::new(vec![8, 8]).unwrap();
        let values = (0..81).map(|k| ((k % 9) as f64).powi(2) + 0.5).collect();
        let f = SampleField { params: p, grid, values, method: Method::HermiteRank, seed: 0 };
        let inc = box_increments(&f, &[1, 1]).unwrap();
        assert_eq!(inc.values, vec![0.0]);
        let inc = box_increments(&f, &[4, 2]).unwrap();
        assert!(inc.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refinement_telescopes_exactly() {
        let p = params(2, &[0.7, 0.8]);
        let f = simulate_hermite_rank(&p, &GridSpec::new(vec![48, 64]).unwrap(), 2).unwrap();
        let coarse = box_increments(&f, &[6, 8]).unwrap();
        let fine = box_increments(&f, &[12, 16]).unwrap();
        for i in 0..6 {
            for j in 0..8 {
                let mut acc = 0.0;
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += fine.values[(2 * i + a) * 16 + 2 * j + b];
                }
                assert_eq!(acc, coarse.values[i * 8 + j]);
            }
        }
    }

    #[test]
    fn divisibility_required() {
        let p = params(2, &[0.7]);
        let f = simulate_hermite_rank(&p, &GridSpec::new(vec![64]).unwrap(), 9).unwrap();
        assert!(box_increments(&f, &[7]).is_err());
        assert!(box_increments(&f, &[8, 8]).is_err());
    }

    proptest! {
        #[test]
        fn masses_round_trip(seed in 0u64..1000, n1 in 8usize..20, n2 in 8usize..12) {
            let p = params(2, &[0.7, 0.9]);
            let f = simulate_hermite_rank(&p, &GridSpec::new(vec![n1, n2]).unwrap(), seed).unwrap();
            let again = SampleField::from_cell_masses(p, f.grid.clone(), &f.cell_masses(), Method::HermiteRank, seed).unwrap();
            for (a, b) in f.values.iter().zip(&again.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn telescoping_d1(seed in 0u64..1000, k in 0u32..4) {
            let p = params(3, &[0.8]);
            let f = simulate_hermite_rank(&p, &GridSpec::new(vec![96]).unwrap(), seed).unwrap();
            let obs = 3usize << k;
            let coarse = box_increments(&f, &[obs]).unwrap();
            let fine = box_increments(&f, &[2 * obs]).unwrap();
            for i in 0..obs {
                prop_assert_eq!(fine.values[2 * i] + fine.values[2 * i + 1], coarse.values[i]);
            }
        }
    }
}
