//! Exact stationary Gaussian sampling by circulant embedding, in one
//! dimension and separably along every axis of a rectangular grid.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};

/// Default bound on the number of cells of the circulant working array.
pub const DEFAULT_MEMORY_CAP: usize = 1 << 26;

/// Identifies the random stream so that reports can be traced back to it.
pub const GENERATOR_ID: &str =
    "chacha8(rand_chacha 0.9)+ziggurat-normal(rand_distr 0.5);seed=splitmix64(root,stream,index)";

/// Eigenvalues below this (relative to the largest) are treated as rounding noise.
const EIGEN_TOLERANCE: f64 = 1e-9;

/// Per-axis resolutions of a rectangular lattice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    n: Vec<usize>,
}

impl GridSpec {
    pub fn new(n: Vec<usize>) -> Result<Self> {
        Self::with_cap(n, DEFAULT_MEMORY_CAP)
    }

    /// Validates that the circulant working array, which doubles every axis,
    /// fits in `cap` cells.
    pub fn with_cap(n: Vec<usize>, cap: usize) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::Empty("grid"));
        }
        if let Some(&bad) = n.iter().find(|&&x| x < 2) {
            return Err(invalid(format!("every grid resolution must be at least 2, got {bad}")));
        }
        let cells = n
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(2 * x))
            .unwrap_or(usize::MAX);
        if cells > cap {
            return Err(Error::MemoryCap { cells, cap });
        }
        Ok(Self { n })
    }

    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.n
    }

    pub fn cells(&self) -> usize {
        self.n.iter().product()
    }
}

/// `½(|k+1|^{2h} − 2|k|^{2h} + |k−1|^{2h})`.
pub fn fgn_autocovariance(h: f64, k: i64) -> f64 {
    let k = k.unsigned_abs() as f64;
    let p = 2.0 * h;
    0.5 * ((k + 1.0).powf(p) - 2.0 * k.powf(p) + (k - 1.0).abs().powf(p))
}

/// Stationary correlation used along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisCovariance {
    /// Fractional Gaussian noise with index `h`.
    Fgn { h: f64 },
    /// The `1/root`-th power of the fGn(`h`) autocovariance; its `root`-th
    /// Hermite transform has exactly the fGn(`h`) covariance.
    FgnRoot { h: f64, root: u32 },
}

impl AxisCovariance {
    fn validate(&self) -> Result<()> {
        let h = match *self {
            AxisCovariance::Fgn { h } => h,
            AxisCovariance::FgnRoot { h, root } => {
                if root == 0 {
                    return Err(invalid("covariance root must be positive"));
                }
                if h < 0.5 {
                    return Err(invalid("fractional covariance roots need h >= 1/2"));
                }
                h
            }
        };
        if !(h > 0.0 && h < 1.0) {
            return Err(invalid(format!("fGn index must lie in (0, 1), got {h}")));
        }
        Ok(())
    }

    pub fn at(&self, k: i64) -> f64 {
        match *self {
            AxisCovariance::Fgn { h } => fgn_autocovariance(h, k),
            AxisCovariance::FgnRoot { h, root } => fgn_autocovariance(h, k).max(0.0).powf(1.0 / f64::from(root)),
        }
    }
}

/// Spectral square root of the circulant embedding of one stationary
/// covariance, ready to be applied to white-noise lines.
#[derive(Clone)]
pub struct CirculantFilter {
    n: usize,
    /// `sqrt(λ_k) / M`, folding in the inverse-FFT normalisation.
    scale: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    min_eigenvalue: f64,
}

impl std::fmt::Debug for CirculantFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantFilter")
            .field("n", &self.n)
            .field("embedding", &self.scale.len())
            .field("min_eigenvalue", &self.min_eigenvalue)
            .finish()
    }
}

impl CirculantFilter {
    pub fn new(n: usize, cov: AxisCovariance) -> Result<Self> {
        cov.validate()?;
        if n < 2 {
            return Err(invalid("a stationary sequence needs at least 2 points"));
        }
        let m = 2 * n;
        let mut c: Vec<Complex64> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex64::new(cov.at(lag as i64), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        forward.process(&mut c);
        let max = c.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if min < -EIGEN_TOLERANCE * max.max(1.0) {
            return Err(Error::NotPositiveDefinite(min));
        }
        let scale = c.iter().map(|z| z.re.max(0.0).sqrt() / m as f64).collect();
        Ok(Self {
            n,
            scale,
            forward,
            inverse,
            min_eigenvalue: min,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn embedding_len(&self) -> usize {
        self.scale.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Filters `buf` (length `2n`, two real lines packed as re/im) in place.
    fn apply_packed(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
        for (z, &s) in buf.iter_mut().zip(&self.scale) {
            *z *= s;
        }
        self.inverse.process_with_scratch(buf, scratch);
    }

    fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }
}

/// splitmix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `index` in stream `stream` of a campaign rooted at `root`.
///
/// `splitmix64(splitmix64(splitmix64(root) ^ stream) ^ index)`: a pure
/// function, so replica sets are reproducible under any scheduling.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream) ^ index)
}

/// Standard normal stream for a seed.
pub fn normal_stream(seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || rng.sample::<f64, _>(StandardNormal))
}

/// Lines along one axis handled per parallel task.
const LINES_PER_TASK: usize = 64;

/// Applies `filter` along `axis` of the row-major array `data` with shape
/// `dims` (where `dims[axis]` is the embedding length) and crops that axis to
/// the filter's output length.
fn filter_axis(data: &[f64], dims: &[usize], axis: usize, filter: &CirculantFilter, exec: Execution) -> Vec<f64> {
    let m = dims[axis];
    debug_assert_eq!(m, filter.embedding_len());
    let n = filter.len();
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let lines = outer * inner;
    let tasks = lines.div_ceil(LINES_PER_TASK);
    let blocks = map_indexed(exec, tasks, |t| {
        let first = t * LINES_PER_TASK;
        let last = (first + LINES_PER_TASK).min(lines);
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); filter.scratch_len()];
        let mut out = Vec::with_capacity((last - first) * n);
        let base = |line: usize| (line / inner) * m * inner + line % inner;
        let mut line = first;
        while line < last {
            let a = base(line);
            let b = (line + 1 < last).then(|| base(line + 1));
            for (k, z) in buf.iter_mut().enumerate() {
                let im = b.map_or(0.0, |b| data[b + k * inner]);
                *z = Complex64::new(data[a + k * inner], im);
            }
            filter.apply_packed(&mut buf, &mut scratch);
            out.extend(buf[..n].iter().map(|z| z.re));
            if b.is_some() {
                out.extend(buf[..n].iter().map(|z| z.im));
            }
            line += if b.is_some() { 2 } else { 1 };
        }
        out
    });
    let mut result = vec![0.0; outer * n * inner];
    let mut line = 0;
    for block in blocks {
        for values in block.chunks_exact(n) {
            let o = line / inner;
            let i = line % inner;
            let start = o * n * inner + i;
            for (k, &v) in values.iter().enumerate() {
                result[start + k * inner] = v;
            }
            line += 1;
        }
    }
    result
}

/// Separable stationary Gaussian sampler on a grid: each axis carries its
/// own stationary correlation and the covariance of the array is the product.
#[derive(Debug, Clone)]
pub struct SeparableSampler {
    grid: GridSpec,
    filters: Vec<CirculantFilter>,
}

impl SeparableSampler {
    pub fn new(grid: GridSpec, axes: &[AxisCovariance]) -> Result<Self> {
        if axes.len() != grid.dim() {
            return Err(invalid(format!(
                "{} axis covariances given for a {}-dimensional grid",
                axes.len(),
                grid.dim()
            )));
        }
        let filters = grid
            .resolutions()
            .iter()
            .zip(axes)
            .map(|(&n, &cov)| CirculantFilter::new(n, cov))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, filters })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn filters(&self) -> &[CirculantFilter] {
        &self.filters
    }

    fn white_noise(&self, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let dims: Vec<usize> = self.filters.iter().map(|f| f.embedding_len()).collect();
        let total = dims.iter().product();
        (normal_stream(seed).take(total).collect(), dims)
    }

    /// One sample in row-major order.
    pub fn sample(&self, seed: u64, exec: Execution) -> Vec<f64> {
        let order: Vec<usize> = (0..self.grid.dim()).collect();
        self.sample_with_axis_order(seed, &order, exec)
    }

    /// As [`sample`](Self::sample) but filtering the axes in the given order;
    /// the result is the same up to rounding.
    pub fn sample_with_axis_order(&self, seed: u64, order: &[usize], exec: Execution) -> Vec<f64> {
        let (mut data, mut dims) = self.white_noise(seed);
        for &axis in order {
            data = filter_axis(&data, &dims, axis, &self.filters[axis], exec);
            dims[axis] = self.filters[axis].len();
        }
        data
    }
}

/// A sampled Gaussian array with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseArray {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub hurst: Vec<f64>,
    pub seed: u64,
}

/// `n` points of fractional Gaussian noise with index `h ∈ (0, 1)`.
pub fn sample_fgn(n: usize, h: f64, seed: u64) -> Result<Vec<f64>> {
    let grid = GridSpec::new(vec![n])?;
    let sampler = SeparableSampler::new(grid, &[AxisCovariance::Fgn { h }])?;
    Ok(sampler.sample(seed, Execution::Sequential))
}

/// Increments of a fractional Brownian sheet over the unit cells of `grid`:
/// covariance `Π_j γ_{h_j}(i_j − k_j)`.
pub fn sample_sheet_increments(grid: &GridSpec, hurst: &[f64], seed: u64) -> Result<NoiseArray> {
    let axes: Vec<AxisCovariance> = hurst.iter().map(|&h| AxisCovariance::Fgn { h }).collect();
    let sampler = SeparableSampler::new(grid.clone(), &axes)?;
    Ok(NoiseArray {
        grid: grid.clone(),
        values: sampler.sample(seed, Execution::Sequential),
        hurst: hurst.to_vec(),
        seed,
    })
}
