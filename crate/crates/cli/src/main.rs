//! `hqv`: simulate Hermite random fields, compute quadratic variations and
//! run the verification campaigns.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hqv_core::chaos_oracle::ChaosOracle;
use hqv_core::gaussian::GENERATOR_ID;
use hqv_core::harness::{self, ExperimentConfig, ExperimentReport};
use hqv_core::hermite::{box_increments, Method};
use hqv_core::io::{self, format_float, Table};
use hqv_core::quadvar::{compensated_sum, quadratic_variation, theorem_multiplier};
use hqv_core::{Execution, ModelParams};

#[derive(Debug, Parser)]
#[command(name = "hqv", version, about = "Hermite random fields: simulation, quadratic variations, limit checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one field and dump it as raw little-endian f64 with a header.
    Simulate(Common),
    /// Quadratic variation V_N and the normalised statistic T_N of a dumped field.
    Qv(Common),
    /// Per-axis Hurst estimates from a dumped field.
    EstimateH(Common),
    /// Deterministic chaos-component variances.
    OracleVariance(Common),
    /// Monte Carlo law of T_N against the Rosenblatt reference.
    McLimit(Common),
    /// The q = 1 trichotomy of the fBm quadratic variation.
    Q1Regression(Common),
    /// Fast end-to-end gates; exits with status 2 if any fails.
    Selftest(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Rank,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Hermite order.
    #[arg(long)]
    q: Option<u32>,
    /// Number of parameters (axes).
    #[arg(long)]
    d: Option<usize>,
    /// Hurst index per axis; a single value is repeated over all axes.
    #[arg(long = "H", value_delimiter = ',', allow_negative_numbers = true)]
    hurst: Vec<f64>,
    /// Observation grid `n1[,n2,…]`; repeat for several grids.
    #[arg(long = "N", action = clap::ArgAction::Append)]
    n: Vec<String>,
    /// Several one-value grids at once, e.g. `64,128,256`.
    #[arg(long = "N-list", value_delimiter = ',')]
    n_list: Vec<usize>,
    /// Simulation cells per observation box and axis.
    #[arg(long = "oversample")]
    oversample: Option<usize>,
    /// Monte Carlo replicas per grid.
    #[arg(long)]
    replicas: Option<usize>,
    /// Size of the reference sample in `mc-limit` (default: `--replicas`).
    #[arg(long = "reference-replicas")]
    reference_replicas: Option<usize>,
    /// Reference resolution relative to the finest tested field in `mc-limit`.
    #[arg(long = "reference-factor")]
    reference_factor: Option<usize>,
    /// Root seed; every replica stream is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Field construction: Hermite transform of a Gaussian field, or the Volterra kernel.
    #[arg(long, value_enum, default_value_t = MethodArg::Rank)]
    method: MethodArg,
    /// Field dump to read (`qv`, `estimate-h`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (default: stdout, except `simulate` which requires it).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Include wall-clock seconds in reports.
    #[arg(long)]
    timing: bool,
    /// Disable data parallelism.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn method(&self) -> Method {
        match self.method {
            MethodArg::Rank => Method::HermiteRank,
            MethodArg::Kernel => Method::DirectKernel,
        }
    }

    fn raw_grids(&self) -> Result<Vec<Vec<usize>>> {
        let mut grids = Vec::new();
        for spec in &self.n {
            let g = spec
                .split(',')
                .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad --N value `{spec}`")))
                .collect::<Result<Vec<_>>>()?;
            grids.push(g);
        }
        grids.extend(self.n_list.iter().map(|&n| vec![n]));
        Ok(grids)
    }

    /// Dimension from `--d`, `--H` or `--N`, checking they agree.
    fn dim(&self) -> Result<usize> {
        let mut candidates: Vec<usize> = self.d.into_iter().collect();
        if self.hurst.len() > 1 {
            candidates.push(self.hurst.len());
        }
        for g in self.raw_grids()? {
            if g.len() > 1 {
                candidates.push(g.len());
            }
        }
        let d = candidates.first().copied().unwrap_or(1);
        if candidates.iter().any(|&c| c != d) {
            bail!("--d, --H and --N disagree on the number of axes");
        }
        Ok(d)
    }

    fn params(&self, default_q: u32) -> Result<ModelParams> {
        let d = self.dim()?;
        let hurst = match self.hurst.as_slice() {
            [] => vec![0.7; d],
            [h] => vec![*h; d],
            hs => hs.to_vec(),
        };
        Ok(ModelParams::from_slice(self.q.unwrap_or(default_q), &hurst)?)
    }

    fn grids(&self, default: &[usize]) -> Result<Vec<Vec<usize>>> {
        let d = self.dim()?;
        let raw = self.raw_grids()?;
        let raw = if raw.is_empty() {
            default.iter().map(|&n| vec![n]).collect()
        } else {
            raw
        };
        Ok(raw
            .into_iter()
            .map(|g| if g.len() == 1 { vec![g[0]; d] } else { g })
            .collect())
    }

    fn experiment(&self, params: ModelParams, default_n: &[usize]) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::new(params, self.grids(default_n)?);
        if let Some(m) = self.oversample {
            cfg.oversample = m;
        }
        if let Some(r) = self.replicas {
            cfg.replicas = r;
        }
        if let Some(f) = self.reference_factor {
            cfg.reference_factor = f;
        }
        cfg.reference_replicas = self.reference_replicas;
        cfg.root_seed = self.seed;
        cfg.method = self.method();
        cfg.timing = self.timing;
        cfg.exec = self.exec();
        Ok(cfg)
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_table(table: &Table, json_value: serde_json::Value, c: &Common) -> Result<()> {
    let text = match c.format {
        Format::Csv => table.to_csv()?,
        Format::Json => serde_json::to_string_pretty(&json_value)? + "\n",
    };
    emit(&text, c.out.as_deref())
}

fn emit_report(report: &ExperimentReport, c: &Common) -> Result<()> {
    emit_table(&report.to_table(), serde_json::to_value(report)?, c)
}

fn simulate(c: &Common) -> Result<()> {
    let start = Instant::now();
    let params = c.params(2)?;
    let grids = c.grids(&[512])?;
    let [n] = grids.as_slice() else {
        bail!("simulate takes exactly one --N");
    };
    let out = c.out.as_deref().context("simulate needs --out PATH for the binary dump")?;
    let m = c.oversample.unwrap_or(1);
    let resolution: Vec<usize> = n.iter().map(|x| x * m).collect();
    let source = harness::FieldSource::new(c.method(), &params, &resolution)?;
    let field = source.simulate(c.seed);
    let header = io::write_field(out, &field)?;
    let sidecar = json!({
        "q": params.q(),
        "hurst": params.hurst().as_slice(),
        "resolution": resolution,
        "shape": header.shape,
        "seed": c.seed,
        "method": field.method,
        "generator": GENERATOR_ID,
        "z_at_unit_corner": field.at_unit_corner(),
        "wall_clock_seconds": c.timing.then(|| start.elapsed().as_secs_f64()),
    });
    io::write_json(&io::companion_path(out, "json"), &sidecar)?;
    Ok(())
}

/// Rows of `N per axis, V_N, T_N, Ĥ per axis` for a dumped field.
fn qv_rows(c: &Common, need_estimate: bool) -> Result<()> {
    let input = c.input.as_deref().context("needs --input PATH of a field dump")?;
    let field = io::read_field(input)?;
    let d = field.grid.dim();
    let grids = if c.n.is_empty() && c.n_list.is_empty() {
        // Every dyadic resolution dividing the field, from 8 up.
        let coarse = *field.grid.resolutions().iter().min().expect("non-empty grid");
        let mut g = Vec::new();
        let mut n = 8;
        while n <= coarse && field.grid.resolutions().iter().all(|r| r % n == 0) {
            g.push(vec![n; d]);
            n *= 2;
        }
        g
    } else {
        c.grids(&[])?
            .into_iter()
            .map(|g| if g.len() == 1 { vec![g[0]; d] } else { g })
            .collect()
    };
    if grids.iter().any(|g| g.len() != d) {
        bail!("--N has a different number of axes than the field ({d})");
    }
    let mut levels: Vec<usize> = grids.iter().filter(|g| g.iter().all(|&x| x == g[0])).map(|g| g[0]).collect();
    levels.sort_unstable();
    levels.dedup();
    let estimate = if levels.len() >= 3 {
        Some(hqv_core::quadvar::estimate_hurst(&field, &levels)?)
    } else if need_estimate {
        bail!("estimate-h needs at least three uniform dyadic levels");
    } else {
        None
    };
    let mut header: Vec<String> = (1..=d).map(|j| format!("N_{j}")).collect();
    header.extend(["V_N".to_string(), "T_N".to_string(), "mean_sq_increment".to_string()]);
    header.extend((1..=d).map(|j| format!("H_hat_{j}")));
    let mut table = Table::new(header);
    let mut records = Vec::new();
    for g in &grids {
        let incs = box_increments(&field, g)?;
        let v = quadratic_variation(&incs, field.params.hurst())?;
        let t = if field.params.q() >= 2 {
            Some(theorem_multiplier(g, &field.params)? * v)
        } else {
            None
        };
        let ms = compensated_sum(incs.values.iter().map(|z| z * z)) / incs.values.len() as f64;
        let mut row: Vec<String> = g.iter().map(|x| x.to_string()).collect();
        row.push(format_float(v));
        row.push(t.map(format_float).unwrap_or_default());
        row.push(format_float(ms));
        row.extend((0..d).map(|j| estimate.as_ref().map(|e| format_float(e[j])).unwrap_or_default()));
        table.push(row);
        records.push(json!({ "n": g, "v_n": v, "t_n": t, "mean_sq_increment": ms }));
    }
    let value = json!({
        "kind": if need_estimate { "estimate-h" } else { "qv" },
        "input": input.display().to_string(),
        "q": field.params.q(),
        "hurst": field.params.hurst().as_slice(),
        "seed": field.seed,
        "records": records,
        "hurst_estimate": estimate,
        "generator": GENERATOR_ID,
    });
    emit_table(&table, value, c)
}

fn oracle_variance(c: &Common) -> Result<()> {
    let start = Instant::now();
    let params = c.params(2)?;
    let grids = c.grids(&[64, 128, 256, 512])?;
    let oracle = ChaosOracle::new(c.exec());
    let d = params.dim();
    let q = params.q();
    let mut header: Vec<String> = (1..=d).map(|j| format!("N_{j}")).collect();
    header.extend(["F2_variance", "normalized_ratio", "diagonal_ratio"].map(String::from));
    for r in 0..q.saturating_sub(1) {
        header.push(format!("bound_r{r}"));
        header.push(format!("scaled_bound_r{r}"));
    }
    header.push("predicted_var_V_N".into());
    header.push("truncated_at".into());
    let mut table = Table::new(header);
    let mut reports = Vec::new();
    for g in &grids {
        let r = oracle.report(g, &params)?;
        let mut row: Vec<String> = g.iter().map(|x| x.to_string()).collect();
        row.extend([r.f2_variance, r.normalized_ratio, r.diagonal_ratio].map(format_float));
        for h in &r.higher_bounds {
            row.push(format_float(h.bound));
            row.push(format_float(h.scaled));
        }
        row.push(format_float(r.vn_variance));
        row.push(
            r.truncated_at
                .iter()
                .map(|t| t.map(|x| x.to_string()).unwrap_or_else(|| "-".into()))
                .collect::<Vec<_>>()
                .join(";"),
        );
        table.push(row);
        reports.push(r);
    }
    let value = json!({
        "kind": "oracle-variance",
        "q": q,
        "hurst": params.hurst().as_slice(),
        "c1": params.c1()?,
        "records": reports,
        "wall_clock_seconds": c.timing.then(|| start.elapsed().as_secs_f64()),
    });
    emit_table(&table, value, c)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(c) => simulate(&c)?,
        Command::Qv(c) => qv_rows(&c, false)?,
        Command::EstimateH(c) => qv_rows(&c, true)?,
        Command::OracleVariance(c) => oracle_variance(&c)?,
        Command::McLimit(c) => {
            let params = c.params(2)?;
            let default_n = if params.dim() == 1 { 512 } else { 64 };
            let report = harness::run_limit_experiment(&c.experiment(params, &[default_n])?)?;
            emit_report(&report, &c)?;
        }
        Command::Q1Regression(c) => {
            let params = c.params(1)?;
            let mut cfg = c.experiment(params, &[4096])?;
            if c.oversample.is_none() {
                cfg.oversample = 2;
            }
            let report = harness::run_q1_regression(&cfg)?;
            emit_report(&report, &c)?;
        }
        Command::Selftest(c) => {
            let report = harness::selftest(c.seed, c.exec(), c.timing)?;
            emit_table(&report.to_table(), serde_json::to_value(&report)?, &c)?;
            if !report.passed {
                for g in report.gates.iter().filter(|g| !g.pass) {
                    eprintln!("selftest gate failed: {} = {}", g.name, g.value);
                }
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
