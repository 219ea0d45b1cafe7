use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rts_core::analysis::{
    dirichlet_form_exact, moments_exact, phi_values, spectral_report, tv_curve, Start,
};
use rts_core::coupling::run_coupling;
use rts_core::io::{
    coupling_csv_header, coupling_csv_row, sample_csv_header, sample_csv_row, write_provenance,
};
use rts_core::kernel::{stationary_law, Kernel};
use rts_core::rng::replicate_rng;
use rts_core::sampler::{phi_moments, urn_sample, Moments};
use rts_core::treespace::cardinality;
use rts_core::{Budget, Error, Matching, Mode, StateSpace};
use serde::Serialize;

mod verify;

#[derive(Parser, Debug)]
#[command(name = "rts", version, about = "Adjacent-swap chains on ranked tree shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// List every state for one size, or just count them.
    Enumerate,
    /// Draw labeled trees from the coalescent urn.
    Sample,
    /// Total-variation distance to stationarity over time.
    Tvdist,
    /// Spectrum, gap and relaxation time.
    Gap,
    /// Coupling times of two coupled copies.
    Couple,
    /// Exact moments of the internal tree length and related bounds.
    Stats,
    /// Run the invariant suite; exits 1 on any failure.
    Verify,
}

#[derive(clap::Args, Debug, Clone, Serialize)]
struct Opts {
    /// Number of leaves.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, default_value = "unlabeled")]
    mode: Mode,
    /// Use the lazy chain (hold with probability 1/2).
    #[arg(long, global = true)]
    lazy: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1000)]
    replicates: u64,
    /// Step limit for curves and coupling runs.
    #[arg(long, global = true)]
    t_max: Option<u64>,
    /// worst, caterpillar or index:<k>.
    #[arg(long, global = true, default_value = "worst")]
    start: String,
    /// Coupling starts: caterpillar, index:<k>, random, or a JSON matching.
    #[arg(long, global = true)]
    x0: Option<String>,
    #[arg(long, global = true)]
    y0: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    count_only: bool,
    /// Lift the size caps on exact computations.
    #[arg(long, global = true)]
    unsafe_budget: bool,
}

impl Opts {
    fn n(&self) -> Result<usize, Error> {
        self.n.ok_or_else(|| Error::InvalidParam("--n is required".into()))
    }

    fn budget(&self, exact: bool) -> Budget {
        match (self.unsafe_budget, exact) {
            (true, _) => Budget::unlimited(),
            (false, true) => Budget::EXACT,
            (false, false) => Budget::ENUMERATION,
        }
    }

    fn out_path(&self, command: Command, ext: &str) -> Result<PathBuf, Error> {
        if let Some(p) = &self.out {
            return Ok(p.clone());
        }
        let name = serde_json::to_value(command)?.as_str().unwrap_or("out").to_string();
        let lazy = if self.lazy { "-lazy" } else { "" };
        Ok(PathBuf::from(format!("{name}-n{}-{}{lazy}.{ext}", self.n()?, self.mode)))
    }
}

struct Output {
    path: PathBuf,
    writer: BufWriter<File>,
}

fn open_output(cli: &Cli, ext: &str) -> Result<Output, Error> {
    let path = cli.opts.out_path(cli.command, ext)?;
    let mut writer = BufWriter::new(File::create(&path)?);
    let flags = serde_json::json!({ "command": cli.command, "opts": cli.opts });
    write_provenance(&mut writer, Some(cli.opts.seed), &flags.to_string())?;
    Ok(Output { path, writer })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enumerate => enumerate(&cli),
        Command::Sample => sample(&cli),
        Command::Tvdist => tvdist(&cli),
        Command::Gap => gap(&cli),
        Command::Couple => couple(&cli),
        Command::Stats => stats(&cli),
        Command::Verify => verify::run(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::CapExceeded { .. } => 3,
                Error::InvalidParam(_) | Error::InvalidInput(_) | Error::IndexOutOfRange(_) | Error::DegenerateSize(_) => 2,
                _ => 1,
            })
        }
    }
}

fn enumerate(cli: &Cli) -> Result<ExitCode, Error> {
    let n = cli.opts.n()?;
    if cli.opts.count_only {
        if n < 2 {
            return Err(Error::InvalidParam(format!("n must be at least 2, got {n}")));
        }
        println!("{}", cardinality(n, cli.opts.mode));
        return Ok(ExitCode::SUCCESS);
    }
    let space = StateSpace::enumerate(n, cli.opts.mode, cli.opts.budget(false))?;
    let mut out = open_output(cli, "jsonl")?;
    space.write_jsonl(&mut out.writer)?;
    out.writer.flush()?;
    println!("{} states written to {}", space.len(), out.path.display());
    Ok(ExitCode::SUCCESS)
}

fn sample(cli: &Cli) -> Result<ExitCode, Error> {
    let n = cli.opts.n()?;
    if n < 3 {
        return Err(Error::InvalidParam(format!("sampling needs n ≥ 3, got {n}")));
    }
    let mut out = open_output(cli, "csv")?;
    sample_csv_header(&mut out.writer, n)?;
    let mut acc = Moments::default();
    for r in 0..cli.opts.replicates {
        let trace = urn_sample(n, &mut replicate_rng(cli.opts.seed, r))?;
        acc.push(trace.red_sum() as f64);
        sample_csv_row(&mut out.writer, r, &trace)?;
    }
    out.writer.flush()?;
    let (mean, var) = phi_moments(n)?;
    println!(
        "phi: mean {:.4} (exact {:.4}), variance {:.4} (exact {:.4}); {} rows in {}",
        acc.mean(),
        *mean.numer() as f64 / *mean.denom() as f64,
        acc.variance(),
        *var.numer() as f64 / *var.denom() as f64,
        acc.count(),
        out.path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn build_kernel(cli: &Cli) -> Result<Kernel, Error> {
    let n = cli.opts.n()?;
    cli.opts.budget(true).check(n, cli.opts.mode)?;
    let space = StateSpace::enumerate(n, cli.opts.mode, cli.opts.budget(true))?;
    Ok(Kernel::build(Arc::new(space), cli.opts.lazy))
}

fn tvdist(cli: &Cli) -> Result<ExitCode, Error> {
    let start: Start = cli.opts.start.parse()?;
    let kernel = build_kernel(cli)?;
    let law = stationary_law(kernel.space());
    let t_max = cli.opts.t_max.unwrap_or(100_000) as usize;
    let curve = tv_curve(&kernel, &law, start, t_max)?;
    let mut out = open_output(cli, "csv")?;
    curve.write_csv(&mut out.writer, true)?;
    out.writer.flush()?;
    match curve.mixing_time() {
        Some(t) => println!("t_mix = {t}; {} rows in {}", curve.values.len(), out.path.display()),
        None => println!("d(t) stayed above 1/4 up to t = {t_max}; {} rows in {}", curve.values.len(), out.path.display()),
    }
    Ok(ExitCode::SUCCESS)
}

fn gap(cli: &Cli) -> Result<ExitCode, Error> {
    let kernel = build_kernel(cli)?;
    let report = spectral_report(&kernel)?;
    let mut out = open_output(cli, "json")?;
    serde_json::to_writer_pretty(&mut out.writer, &report)?;
    writeln!(out.writer)?;
    out.writer.flush()?;
    println!(
        "lambda2 = {:.10}, gap = {:.10}, relaxation = {:.6}; report in {}",
        report.lambda2,
        report.gap,
        report.relaxation,
        out.path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_start(spec: &str, n: usize, mode: Mode, budget: Budget, rng_seed: u64) -> Result<Matching, Error> {
    match spec {
        "caterpillar" => Ok(Matching::caterpillar(n, mode)),
        "random" => {
            let m = urn_sample(n, &mut replicate_rng(rng_seed, u64::MAX))?.matching;
            match mode {
                Mode::Labeled => Ok(m),
                Mode::Unlabeled => m.erase_leaf_labels(),
            }
        }
        s if s.starts_with("index:") => {
            let k: usize = s[6..].parse().map_err(|_| Error::InvalidParam(format!("bad start `{s}`")))?;
            let space = StateSpace::enumerate(n, mode, budget)?;
            if k >= space.len() {
                return Err(Error::IndexOutOfRange(format!("start {k} ≥ {} states", space.len())));
            }
            Ok(space.get(k).clone())
        }
        json => {
            let m = Matching::from_json(json)?;
            if m.n() != n || m.mode() != mode {
                return Err(Error::InvalidParam(format!("start {m} does not match --n {n} --mode {mode}")));
            }
            Ok(m)
        }
    }
}

fn couple(cli: &Cli) -> Result<ExitCode, Error> {
    let n = cli.opts.n()?;
    let mode = cli.opts.mode;
    let budget = cli.opts.budget(false);
    let x0 = parse_start(cli.opts.x0.as_deref().unwrap_or("caterpillar"), n, mode, budget, cli.opts.seed)?;
    let y0 = parse_start(cli.opts.y0.as_deref().unwrap_or("random"), n, mode, budget, cli.opts.seed)?;
    let t_max = cli.opts.t_max.unwrap_or(100_000_000);
    let mut out = open_output(cli, "csv")?;
    writeln!(out.writer, "# x0={}", x0.to_json())?;
    writeln!(out.writer, "# y0={}", y0.to_json())?;
    coupling_csv_header(&mut out.writer, n)?;
    let mut tau = Moments::default();
    let mut timeouts = 0u64;
    let mut violations = 0u64;
    for r in 0..cli.opts.replicates {
        let run = run_coupling(&x0, &y0, &mut replicate_rng(cli.opts.seed, r), t_max)?;
        match run.tau {
            Some(t) => tau.push(t as f64),
            None => timeouts += 1,
        }
        violations += run.property_violations;
        coupling_csv_row(&mut out.writer, n, mode, cli.opts.seed, r, &run)?;
    }
    out.writer.flush()?;
    println!(
        "mean tau = {:.3} ± {:.3} over {} runs ({timeouts} timeouts, {violations} property violations); rows in {}",
        tau.mean(),
        tau.std_error(),
        tau.count(),
        out.path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct StatsReport {
    n: usize,
    mode: Mode,
    lazy: bool,
    states: usize,
    phi_mean: String,
    phi_mean_closed_form: String,
    phi_variance: String,
    phi_variance_closed_form: String,
    dirichlet_form: String,
    variance_over_dirichlet: f64,
    relaxation: f64,
    relaxation_lower_bound: f64,
}

fn stats(cli: &Cli) -> Result<ExitCode, Error> {
    let n = cli.opts.n()?;
    let kernel = build_kernel(cli)?;
    let law = stationary_law(kernel.space());
    let phi = phi_values(kernel.space());
    let (mean, var) = moments_exact(&law, &phi);
    let (mean_cf, var_cf) = phi_moments(n)?;
    let energy = dirichlet_form_exact(&kernel, &law, &phi);
    let relaxation = spectral_report(&kernel)?.relaxation;
    let ratio = (*var.numer() as f64 / *var.denom() as f64) / (*energy.numer() as f64 / *energy.denom() as f64);
    let nf = n as f64;
    let report = StatsReport {
        n,
        mode: cli.opts.mode,
        lazy: cli.opts.lazy,
        states: kernel.len(),
        phi_mean: mean.to_string(),
        phi_mean_closed_form: mean_cf.to_string(),
        phi_variance: var.to_string(),
        phi_variance_closed_form: var_cf.to_string(),
        dirichlet_form: energy.to_string(),
        variance_over_dirichlet: ratio,
        relaxation,
        relaxation_lower_bound: 2.0 / 90.0 * nf * (nf + 1.0) * (nf - 3.0),
    };
    let mut out = open_output(cli, "json")?;
    serde_json::to_writer_pretty(&mut out.writer, &report)?;
    writeln!(out.writer)?;
    out.writer.flush()?;
    println!(
        "E[phi] = {mean}, Var[phi] = {var}, E(phi) = {energy}, Var/E = {ratio:.4} ≤ relaxation {relaxation:.4}; report in {}",
        out.path.display()
    );
    Ok(ExitCode::SUCCESS)
}
