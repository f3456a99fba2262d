//! Monte Carlo campaigns, distributional checks and the self-test.
//!
//! Every replica draws its randomness from
//! `derive_seed(root_seed, stream, replica)`, so reports depend only on the
//! configuration and never on scheduling.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chaos_oracle::{brute_force_pair_sum, displacement_sum, CellExponents, ChaosOracle};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::gaussian::{derive_seed, GridSpec, GENERATOR_ID};
use crate::hermite::{box_increments, DirectKernelSimulator, HermiteRankSimulator, Method, SampleField};
use crate::io::{format_float, Table};
use crate::params::{self, ModelParams};
use crate::quadvar::{compensated_sum, estimate_hurst, hurst_from_moments, quadratic_variation, theorem_multiplier};
use crate::volterra;

/// Seed streams of a campaign.
pub mod streams {
    pub const FIELD: u64 = 0x10;
    pub const REFERENCE: u64 = 0x20;
    pub const SELFTEST: u64 = 0x30;
}

/// Sample moments with standard errors from the replica spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub skewness_se: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(invalid("moments need at least two replicas"));
        }
        let n = xs.len() as f64;
        let mean = compensated_sum(xs.iter().copied()) / n;
        let central = |p: i32| compensated_sum(xs.iter().map(|x| (x - mean).powi(p))) / n;
        let (m2, m3, m4) = (central(2), central(3), central(4));
        let variance = m2 * n / (n - 1.0);
        let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
        let skewness_se = if xs.len() > 2 {
            (6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0))).sqrt()
        } else {
            f64::NAN
        };
        Ok(Self {
            count: xs.len(),
            mean,
            mean_se: (variance / n).sqrt(),
            variance,
            variance_se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
            skewness,
            skewness_se,
        })
    }
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS distance to `N(mean, sd²)`.
pub fn ks_normal_distance(xs: &[f64], mean: f64, sd: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let normal = Normal::new(mean, sd).map_err(|e| invalid(e.to_string()))?;
    let xs = sorted(xs)?;
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

/// Asymptotic 5% critical value of the two-sample statistic.
pub fn ks_critical_95(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// A simulator chosen by [`Method`].
#[derive(Debug, Clone)]
pub enum FieldSource {
    HermiteRank(HermiteRankSimulator),
    DirectKernel(DirectKernelSimulator),
}

impl FieldSource {
    pub fn new(method: Method, params: &ModelParams, resolution: &[usize]) -> Result<Self> {
        match method {
            Method::HermiteRank => Ok(Self::HermiteRank(HermiteRankSimulator::new(
                params,
                &GridSpec::new(resolution.to_vec())?,
            )?)),
            Method::DirectKernel => {
                if resolution.len() != 1 {
                    return Err(Error::OutOfScope("the direct-kernel construction is one-dimensional".into()));
                }
                Ok(Self::DirectKernel(DirectKernelSimulator::new(params, resolution[0], Execution::Sequential)?))
            }
        }
    }

    pub fn simulate(&self, seed: u64) -> SampleField {
        match self {
            Self::HermiteRank(s) => s.simulate(seed, Execution::Sequential),
            Self::DirectKernel(s) => s.simulate(seed),
        }
    }

    /// `Z(1, …, 1)` without building the lattice of partial sums.
    pub fn unit_corner(&self, seed: u64) -> f64 {
        match self {
            Self::HermiteRank(s) => compensated_sum(s.cell_masses(seed, Execution::Sequential)),
            Self::DirectKernel(s) => s.simulate(seed).at_unit_corner(),
        }
    }
}

/// Settings of a Monte Carlo campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    /// Observation grids.
    pub n_list: Vec<Vec<usize>>,
    /// Simulation resolution per observation box and axis.
    pub oversample: usize,
    pub replicas: usize,
    pub root_seed: u64,
    pub method: Method,
    /// Resolution of the reference fields relative to the finest tested field.
    pub reference_factor: usize,
    /// Size of the reference sample; defaults to `replicas`.
    pub reference_replicas: Option<usize>,
    /// Record wall-clock time in the report (which then stops being reproducible).
    pub timing: bool,
    pub exec: Execution,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, n_list: Vec<Vec<usize>>) -> Self {
        let reference_factor = if params.dim() == 1 { 8 } else { 2 };
        Self {
            params,
            n_list,
            oversample: 8,
            replicas: 2000,
            root_seed: 0,
            method: Method::HermiteRank,
            reference_factor,
            reference_replicas: None,
            timing: false,
            exec: Execution::default(),
        }
    }

    pub fn simulation_resolution(&self, n: &[usize]) -> Vec<usize> {
        n.iter().map(|&x| x * self.oversample).collect()
    }

    fn finest_resolution(&self) -> Vec<usize> {
        (0..self.params.dim())
            .map(|j| self.n_list.iter().map(|n| n[j] * self.oversample).max().unwrap_or(0))
            .collect()
    }

    fn reference_resolution(&self) -> Vec<usize> {
        self.finest_resolution().iter().map(|r| r * self.reference_factor).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < 2 {
            return Err(invalid(format!("replicas must be at least 2, got {}", self.replicas)));
        }
        if self.oversample < 2 {
            return Err(invalid(format!("oversampling m must be at least 2, got {}", self.oversample)));
        }
        if self.reference_factor < 1 {
            return Err(invalid("the reference factor must be at least 1"));
        }
        if self.n_list.is_empty() {
            return Err(Error::Empty("observation grid list"));
        }
        for n in &self.n_list {
            if n.len() != self.params.dim() {
                return Err(invalid(format!(
                    "observation grid {n:?} has {} axes but the Hurst vector has {}",
                    n.len(),
                    self.params.dim()
                )));
            }
            if n.contains(&0) {
                return Err(invalid(format!("observation grid {n:?} has an empty axis")));
            }
            let res = self.simulation_resolution(n);
            GridSpec::new(res.clone()).map_err(|e| binding(e, &format!("N = {n:?} with oversampling {}", self.oversample)))?;
            if self.method == Method::DirectKernel && res.iter().any(|&r| r > crate::hermite::MAX_DIRECT_KERNEL_CELLS) {
                return Err(Error::OutOfScope(format!(
                    "N·m = {res:?} exceeds the direct-kernel mesh limit of {}",
                    crate::hermite::MAX_DIRECT_KERNEL_CELLS
                )));
            }
        }
        Ok(())
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            q: self.params.q(),
            hurst: self.params.hurst().as_slice().to_vec(),
            n_list: self.n_list.clone(),
            oversample: self.oversample,
            replicas: self.replicas,
            root_seed: self.root_seed,
            method: self.method,
        }
    }
}

fn binding(e: Error, what: &str) -> Error {
    match e {
        Error::MemoryCap { cells, cap } => invalid(format!(
            "{what} needs a {cells}-cell circulant embedding, above the memory cap of {cap}"
        )),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub q: u32,
    pub hurst: Vec<f64>,
    pub n_list: Vec<Vec<usize>>,
    pub oversample: usize,
    pub replicas: usize,
    pub root_seed: u64,
    pub method: Method,
}

/// Summary for one observation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRecord {
    pub n: Vec<usize>,
    pub resolution: Vec<usize>,
    /// The normalised statistic: `T_N` for `q >= 2`, the regime-scaled
    /// `V_N` for `q = 1`.
    pub statistic: Moments,
    pub v_n: Moments,
    /// Distance to the reference sample (or to a fitted normal for `q = 1`).
    pub ks: f64,
    pub ks_critical_95: f64,
    pub regime: Option<String>,
    /// Pass/fail of the regime gate; absent where no gate applies.
    pub gate_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    #[serde(flatten)]
    pub config: ConfigEcho,
    pub reference_hurst: Option<Vec<f64>>,
    pub reference_resolution: Option<Vec<usize>>,
    pub reference: Option<Moments>,
    pub records: Vec<NRecord>,
    pub generator: String,
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn to_table(&self) -> Table {
        let d = self.config.hurst.len();
        let mut header: Vec<String> = (1..=d).map(|j| format!("N_{j}")).collect();
        header.extend(
            [
                "replicas", "mean", "mean_se", "variance", "variance_se", "skewness", "skewness_se", "V_N_mean",
                "V_N_mean_se", "V_N_variance", "V_N_variance_se", "ks", "ks_critical_95", "regime", "gate",
            ]
            .map(String::from),
        );
        let mut t = Table::new(header);
        for r in &self.records {
            let mut row: Vec<String> = r.n.iter().map(|x| x.to_string()).collect();
            let s = &r.statistic;
            row.push(s.count.to_string());
            row.extend(
                [
                    s.mean, s.mean_se, s.variance, s.variance_se, s.skewness, s.skewness_se, r.v_n.mean, r.v_n.mean_se,
                    r.v_n.variance, r.v_n.variance_se, r.ks, r.ks_critical_95,
                ]
                .map(format_float),
            );
            row.push(r.regime.clone().unwrap_or_default());
            row.push(match r.gate_pass {
                Some(true) => "PASS".into(),
                Some(false) => "FAIL".into(),
                None => String::new(),
            });
            t.push(row);
        }
        t
    }
}

/// Per-replica `(V_N, Z-statistics)` for one observation grid.
fn replicate_vn(cfg: &ExperimentConfig, n: &[usize], stream: u64) -> Result<Vec<f64>> {
    let res = cfg.simulation_resolution(n);
    let source = FieldSource::new(cfg.method, &cfg.params, &res)?;
    let values = map_indexed(cfg.exec, cfg.replicas, |i| -> Result<f64> {
        let field = source.simulate(derive_seed(cfg.root_seed, stream, i as u64));
        let incs = box_increments(&field, n)?;
        quadratic_variation(&incs, field.params.hurst())
    });
    values.into_iter().collect()
}

/// Samples of `Z(1)` of the Rosenblatt sheet with the given Hurst vector.
pub fn rosenblatt_reference(hurst: &[f64], resolution: &[usize], replicas: usize, root_seed: u64, exec: Execution) -> Result<Vec<f64>> {
    let params = ModelParams::from_slice(2, hurst)?;
    let source = FieldSource::new(Method::HermiteRank, &params, resolution)
        .map_err(|e| binding(e, &format!("the reference field at {resolution:?}")))?;
    Ok(map_indexed(exec, replicas, |i| {
        source.unit_corner(derive_seed(root_seed, streams::REFERENCE, i as u64))
    }))
}

/// Law of `T_N` against the Rosenblatt sheet with index `2H'-1`.
pub fn run_limit_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.params.q() < 2 {
        return Err(Error::OutOfScope("the limit experiment needs q >= 2; use the q = 1 regression".into()));
    }
    cfg.validate()?;
    let reference_hurst = cfg.params.rosenblatt_hurst();
    let reference_resolution = cfg.reference_resolution();
    let ref_count = cfg.reference_replicas.unwrap_or(cfg.replicas);
    let reference = rosenblatt_reference(&reference_hurst, &reference_resolution, ref_count, cfg.root_seed, cfg.exec)?;
    let mut records = Vec::with_capacity(cfg.n_list.len());
    for (k, n) in cfg.n_list.iter().enumerate() {
        let v = replicate_vn(cfg, n, streams::FIELD + k as u64)?;
        let mult = theorem_multiplier(n, &cfg.params)?;
        let t: Vec<f64> = v.iter().map(|x| mult * x).collect();
        records.push(NRecord {
            n: n.clone(),
            resolution: cfg.simulation_resolution(n),
            statistic: Moments::of(&t)?,
            v_n: Moments::of(&v)?,
            ks: ks_distance(&t, &reference)?,
            ks_critical_95: ks_critical_95(t.len(), reference.len()),
            regime: None,
            gate_pass: None,
        });
    }
    Ok(ExperimentReport {
        kind: "mc-limit".into(),
        config: cfg.echo(),
        reference_hurst: Some(reference_hurst),
        reference_resolution: Some(reference_resolution),
        reference: Some(Moments::of(&reference)?),
        records,
        generator: GENERATOR_ID.into(),
        wall_clock_seconds: cfg.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Regime of the fBm quadratic variation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q1Regime {
    /// `H < 3/4`: `sqrt(N) V_N` is asymptotically normal.
    Gaussian,
    /// `H = 3/4`: normal after an extra `sqrt(log N)`.
    Boundary,
    /// `H > 3/4`: `N^{2-2H} V_N` has a Rosenblatt limit.
    Rosenblatt,
}

impl Q1Regime {
    pub fn of(h: f64) -> Self {
        if h < 0.75 {
            Self::Gaussian
        } else if h == 0.75 {
            Self::Boundary
        } else {
            Self::Rosenblatt
        }
    }

    pub fn scale(self, n: usize, h: f64) -> f64 {
        let n = n as f64;
        match self {
            Self::Gaussian => n.sqrt(),
            Self::Boundary => (n / n.ln()).sqrt(),
            Self::Rosenblatt => n.powf(2.0 - 2.0 * h),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Boundary => "boundary",
            Self::Rosenblatt => "rosenblatt",
        }
    }
}

/// Largest KS distance to a fitted normal accepted for `H < 3/4`.
pub const Q1_NORMALITY_KS: f64 = 0.05;
/// Smallest |skewness| accepted for `H > 3/4`.
pub const Q1_MIN_SKEWNESS: f64 = 0.3;

/// Trichotomy of the fBm quadratic variation.
pub fn run_q1_regression(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.params.q() != 1 || cfg.params.dim() != 1 {
        return Err(Error::OutOfScope(format!(
            "the q = 1 regression covers q = 1, d = 1 (got q = {}, d = {})",
            cfg.params.q(),
            cfg.params.dim()
        )));
    }
    if cfg.method != Method::HermiteRank {
        return Err(Error::OutOfScope("the q = 1 regression uses the Hermite-rank construction".into()));
    }
    cfg.validate()?;
    let h = cfg.params.hurst().as_slice()[0];
    let regime = Q1Regime::of(h);
    let mut records = Vec::with_capacity(cfg.n_list.len());
    for (k, n) in cfg.n_list.iter().enumerate() {
        let v = replicate_vn(cfg, n, streams::FIELD + k as u64)?;
        let scale = regime.scale(n[0], h);
        let s: Vec<f64> = v.iter().map(|x| scale * x).collect();
        let moments = Moments::of(&s)?;
        let ks = ks_normal_distance(&s, moments.mean, moments.variance.sqrt())?;
        let gate_pass = match regime {
            Q1Regime::Gaussian => Some(ks <= Q1_NORMALITY_KS),
            Q1Regime::Boundary => None,
            Q1Regime::Rosenblatt => Some(moments.skewness.abs() >= Q1_MIN_SKEWNESS),
        };
        records.push(NRecord {
            n: n.clone(),
            resolution: cfg.simulation_resolution(n),
            statistic: moments,
            v_n: Moments::of(&v)?,
            ks,
            // Lilliefors 5% point for a normal with fitted mean and variance.
            ks_critical_95: 0.886 / (s.len() as f64).sqrt(),
            regime: Some(regime.name().into()),
            gate_pass,
        });
    }
    Ok(ExperimentReport {
        kind: "q1-regression".into(),
        config: cfg.echo(),
        reference_hurst: None,
        reference_resolution: None,
        reference: None,
        records,
        generator: GENERATOR_ID.into(),
        wall_clock_seconds: cfg.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// `Z(1)^2` over independent replicas.
pub fn unit_variance(params: &ModelParams, resolution: &[usize], replicas: usize, root_seed: u64, exec: Execution) -> Result<Moments> {
    let source = FieldSource::new(Method::HermiteRank, params, resolution)?;
    let sq = map_indexed(exec, replicas, |i| {
        let z = source.unit_corner(derive_seed(root_seed, streams::FIELD, i as u64));
        z * z
    });
    Moments::of(&sq)
}

/// Mean squared increments per axis and level, and the fitted log–log slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub levels: Vec<usize>,
    /// `mean_squares[j][k]`: axis `j` at `levels[k]`, other axes at the coarsest level.
    pub mean_squares: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
}

/// Pools `E[(ΔZ)^2]` over boxes and replicas, varying one axis at a time.
pub fn increment_scaling(
    params: &ModelParams,
    resolution: &[usize],
    levels: &[usize],
    replicas: usize,
    root_seed: u64,
    exec: Execution,
) -> Result<ScalingFit> {
    if levels.len() < 2 {
        return Err(invalid("a slope needs at least two levels"));
    }
    let d = params.dim();
    let coarsest = *levels.iter().min().expect("non-empty");
    let source = FieldSource::new(Method::HermiteRank, params, resolution)?;
    let per_replica = map_indexed(exec, replicas, |i| -> Result<Vec<f64>> {
        let field = source.simulate(derive_seed(root_seed, streams::FIELD, i as u64));
        let mut out = Vec::with_capacity(d * levels.len());
        for axis in 0..d {
            for &level in levels {
                let mut obs = vec![coarsest; d];
                obs[axis] = level;
                let incs = box_increments(&field, &obs)?;
                out.push(compensated_sum(incs.values.iter().map(|z| z * z)) / incs.values.len() as f64);
            }
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut mean_squares = vec![vec![0.0; levels.len()]; d];
    for (axis, row) in mean_squares.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            let idx = axis * levels.len() + k;
            *cell = compensated_sum(per_replica.iter().map(|r| r[idx])) / replicas as f64;
        }
    }
    let slopes = mean_squares
        .iter()
        .map(|ms| hurst_from_moments(levels, ms).map(|h| -2.0 * h))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingFit {
        levels: levels.to_vec(),
        mean_squares,
        slopes,
    })
}

/// `V_N` over independent replicas at simulation resolution `N·m`.
pub fn vn_sample(params: &ModelParams, n: &[usize], oversample: usize, replicas: usize, root_seed: u64, exec: Execution) -> Result<Vec<f64>> {
    let mut cfg = ExperimentConfig::new(params.clone(), vec![n.to_vec()]);
    cfg.oversample = oversample;
    cfg.replicas = replicas;
    cfg.root_seed = root_seed;
    cfg.exec = exec;
    cfg.validate()?;
    replicate_vn(&cfg, n, streams::FIELD)
}

/// Per-replica Hurst estimates.
pub fn hurst_estimates(
    params: &ModelParams,
    resolution: &[usize],
    levels: &[usize],
    replicas: usize,
    root_seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let source = FieldSource::new(Method::HermiteRank, params, resolution)?;
    map_indexed(exec, replicas, |i| {
        let field = source.simulate(derive_seed(root_seed, streams::FIELD, i as u64));
        estimate_hurst(&field, levels)
    })
    .into_iter()
    .collect()
}

/// One quantitative check of the self-test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Gate {
    fn new(name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.map_or(true, |l| value >= l) && upper.map_or(true, |u| value <= u);
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
        }
    }

    fn at_most(name: &str, value: f64, upper: f64) -> Self {
        Self::new(name, value, None, Some(upper))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub kind: String,
    pub root_seed: u64,
    pub gates: Vec<Gate>,
    pub passed: bool,
    pub generator: String,
    pub wall_clock_seconds: Option<f64>,
}

impl SelftestReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["gate", "value", "lower", "upper", "result"]);
        for g in &self.gates {
            t.push(vec![
                g.name.clone(),
                format_float(g.value),
                g.lower.map(format_float).unwrap_or_default(),
                g.upper.map(format_float).unwrap_or_default(),
                if g.pass { "PASS" } else { "FAIL" }.into(),
            ]);
        }
        t
    }
}

/// Fast end-to-end checks of every module, deterministic in `root_seed`.
pub fn selftest(root_seed: u64, exec: Execution, timing: bool) -> Result<SelftestReport> {
    let start = Instant::now();
    let mut gates = Vec::new();

    // Constant identity on a fixed set of parameter tuples.
    let mut worst = 0.0f64;
    for (q, h) in [(2u32, vec![0.7]), (3, vec![0.8, 0.9]), (5, vec![0.95, 0.97, 0.99])] {
        let p = ModelParams::from_slice(q, &h)?;
        let via_f3 = 2.0 * p.b().powi(4) * p.substrate_factor_power() * params::limit_constant_f3(q, p.hurst())?;
        worst = worst.max((p.c1()? / via_f3 - 1.0).abs());
    }
    gates.push(Gate::at_most("c1_identity_rel_err", worst, 1e-12));

    // Kernel covariance identity.
    let mut worst = 0.0f64;
    for (u, v, h) in [(0.3, 0.9, 0.7), (1.0, 0.25, 0.85), (0.5, 0.6, 0.95)] {
        let got = volterra::kernel_inner_product(u, v, h)?;
        let want = h * (2.0 * h - 1.0) * f64::abs(u - v).powf(2.0 * h - 2.0);
        worst = worst.max((got / want - 1.0).abs());
    }
    gates.push(Gate::at_most("kernel_identity_rel_err", worst, 1e-4));

    gates.push(Gate::new("ks_example", ks_distance(&[0.0, 1.0], &[0.5, 1.5])?, Some(0.5), Some(0.5)));

    // Oracle: displacement reduction and the second-chaos ratio.
    let p = ModelParams::from_slice(2, &[0.7])?;
    let oracle = ChaosOracle::new(exec);
    let ex = CellExponents::for_component(p.axes()[0].substrate, 2, 1);
    let table = oracle.displacement_integrals(ex, 16);
    let mut worst = 0.0f64;
    for n in [4usize, 16] {
        let fast = displacement_sum(&table, n);
        let slow = brute_force_pair_sum(std::slice::from_ref(&table), &[n]);
        worst = worst.max((fast / slow - 1.0).abs());
    }
    gates.push(Gate::at_most("displacement_reduction_rel_err", worst, 1e-12));
    let report = oracle.report(&[64], &p)?;
    gates.push(Gate::new("normalized_ratio_n64", report.normalized_ratio, Some(0.85), Some(1.05)));

    // Monte Carlo: unit variance within four standard errors.
    let m = unit_variance(&p, &[1024], 2000, derive_seed(root_seed, streams::SELFTEST, 0), exec)?;
    gates.push(Gate::at_most("unit_variance_z_score", (m.mean - 1.0).abs() / m.mean_se, 4.0));

    // Sequential and parallel simulation agree bit for bit.
    let p2 = ModelParams::from_slice(2, &[0.7, 0.6])?;
    let sim = HermiteRankSimulator::new(&p2, &GridSpec::new(vec![64, 32])?)?;
    let seed = derive_seed(root_seed, streams::SELFTEST, 1);
    let a = sim.simulate(seed, Execution::Sequential);
    let b = sim.simulate(seed, Execution::Parallel);
    let mismatches = a.values.iter().zip(&b.values).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    gates.push(Gate::at_most("parallel_mismatches", mismatches as f64, 0.0));

    // Hurst estimator on one fBm path.
    let fbm = ModelParams::from_slice(1, &[0.7])?;
    let est = hurst_estimates(&fbm, &[1 << 14], &[1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14], 1, derive_seed(root_seed, streams::SELFTEST, 2), exec)?;
    gates.push(Gate::at_most("hurst_abs_err", (est[0][0] - 0.7).abs(), 0.05));

    let passed = gates.iter().all(|g| g.pass);
    Ok(SelftestReport {
        kind: "selftest".into(),
        root_seed,
        gates,
        passed,
        generator: GENERATOR_ID.into(),
        wall_clock_seconds: timing.then(|| start.elapsed().as_secs_f64()),
    })
}
