use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use llgctl_core::feynman_kac::{grid_index, value_function_w};
use llgctl_core::scenarios::{
    run_scenario, validate_against_exact, write_artifacts, Manifest, ScenarioSpec, TestProblem,
};
use llgctl_core::{estimate_w, Error, GradientMethod, Result, SpinConfiguration};

/// Effective Monte-Carlo budget of preset/config runs without `--full`.
const DESK_SAMPLE_CAP: usize = 10_000;

#[derive(Parser)]
#[command(name = "llgctl", version, about = "Feedback control of stochastic spin ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop controller on a preset, config file or manifest.
    Run {
        scenario: String,
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long, value_enum, ignore_case = true)]
        method: Option<Method>,
    },
    /// Compare estimated against exact feedback on a test problem (err(t) study).
    Validate {
        #[arg(value_parser = ["test1", "test2"])]
        problem: String,
        #[arg(long, value_enum, ignore_case = true, default_value = "b")]
        method: Method,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Single-point Feynman-Kac estimate of w and W with a confidence interval.
    EstimateW {
        scenario: String,
        /// Grid time of the estimate.
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        /// Spins as `x,y,z;x,y,z;...`; defaults to the scenario's initial state.
        #[arg(long)]
        state: Option<String>,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Write a preset as an editable TOML config.
    EmitConfig {
        preset: String,
        /// Output file; stdout if omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Master seed for both the estimator and the controlled-state noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Monte-Carlo samples per estimate.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    hbar: Option<f64>,
    #[arg(long)]
    quad_points: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Use the scenario's full sample count instead of capping it at 10^4.
    #[arg(long)]
    full: bool,
    /// Treat parameter-regime warnings as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    A,
    B,
}

impl From<Method> for GradientMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::A => GradientMethod::A,
            Method::B => GradientMethod::B,
        }
    }
}

impl CommonOpts {
    /// Applies overrides; `cap` limits a sample count that was not given explicitly.
    fn apply(&self, spec: &mut ScenarioSpec, cap: bool) -> Result<()> {
        if let Some(s) = self.seed {
            spec.outer_seed = s;
            spec.estimator.seed.master_seed = s;
        }
        if let Some(t) = self.tau {
            spec.tau = t;
        }
        match self.samples {
            Some(m) => spec.estimator.samples = m,
            None if cap && !self.full && spec.estimator.samples > DESK_SAMPLE_CAP => {
                eprintln!(
                    "note: capping samples at {DESK_SAMPLE_CAP} (scenario stores {}); pass --full to use it",
                    spec.estimator.samples
                );
                spec.estimator.samples = DESK_SAMPLE_CAP;
            }
            None => {}
        }
        if let Some(h) = self.hbar {
            spec.estimator.hbar = h;
        }
        if let Some(q) = self.quad_points {
            spec.estimator.quad_points = q;
        }
        if let Some(dir) = &self.out_dir {
            spec.output_dir = Some(dir.clone());
        }
        spec.validate()?;
        for w in spec.warnings() {
            eprintln!("warning: {w}");
            if self.strict {
                return Err(Error::Config(format!("--strict: {w}")));
            }
        }
        Ok(())
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
        }
        Ok(())
    }
}

fn output_dir(spec: &ScenarioSpec, default: &str) -> PathBuf {
    spec.output_dir.clone().unwrap_or_else(|| Path::new("runs").join(default))
}

fn parse_state(text: &str) -> Result<SpinConfiguration> {
    let mut spins = Vec::new();
    for chunk in text.split(';').filter(|c| !c.trim().is_empty()) {
        let v: Vec<f64> = chunk
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad --state '{chunk}': {e}")))?;
        if v.len() != 3 {
            return Err(Error::Config(format!("bad --state '{chunk}': need three components")));
        }
        spins.push([v[0], v[1], v[2]]);
    }
    SpinConfiguration::from_spins(&spins)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, opts, method } => {
            opts.init_threads()?;
            let mut spec = ScenarioSpec::resolve(&scenario)?;
            if let Some(m) = method {
                spec.estimator.method = m.into();
            }
            opts.apply(&mut spec, true)?;
            let out = run_scenario(&spec)?;
            let mut manifest = Manifest::new(&command_line(), &spec, &out.run);
            manifest.cost = Some(out.cost);
            let dir = output_dir(&spec, &spec.name);
            write_artifacts(&dir, manifest, &out.run, None)?;
            println!(
                "{}: cost {:.6} (running {:.6}, control {:.6}, terminal {:.6}); max norm deviation {:.2e}; max angle {:.2e}; artifacts in {}",
                spec.name,
                out.cost.total,
                out.cost.running,
                out.cost.control,
                out.cost.terminal,
                out.run.trajectory.max_norm_deviation(),
                out.run.max_orthogonality_angle(),
                dir.display()
            );
        }
        Command::Validate { problem, method, opts } => {
            opts.init_threads()?;
            let problem = TestProblem::parse(&problem)?;
            let mut spec = problem.preset();
            spec.estimator.method = method.into();
            if let Some(m) = opts.samples {
                spec.estimator.samples = m;
                if opts.hbar.is_none() {
                    spec.estimator.hbar = 1.0 / (m as f64).sqrt();
                }
            }
            opts.apply(&mut spec, false)?;
            let v = validate_against_exact(problem, &spec)?;
            let manifest = Manifest::new(&command_line(), &spec, &v.approx);
            let label = format!("{}-{:?}-M{}", problem.name(), spec.estimator.method, spec.estimator.samples);
            let dir = output_dir(&spec, &label);
            write_artifacts(&dir, manifest, &v.approx, Some(&v))?;
            println!(
                "{} method {:?} M={} hbar={:.3e}: mean err {:.4e}, max err {:.4e}, final err {:.4e}; err(t) in {}",
                problem.name(),
                spec.estimator.method,
                spec.estimator.samples,
                spec.estimator.hbar,
                v.mean_err(),
                v.max_err(),
                v.err.last().copied().unwrap_or(0.0),
                dir.join("err.csv").display()
            );
        }
        Command::EstimateW { scenario, time, state, opts } => {
            opts.init_threads()?;
            let mut spec = ScenarioSpec::resolve(&scenario)?;
            opts.apply(&mut spec, true)?;
            let m = match state {
                Some(s) => parse_state(&s)?,
                None => spec.initial_state()?,
            };
            let part = spec.partition()?;
            grid_index(&part, time)?;
            let est = estimate_w(&spec.model, time, &m, &spec.estimator, &spec.payoff, &spec.target, &part)?;
            let beta = spec.model.beta()?;
            let big_w = value_function_w(&est, beta)
                .map(|x| format!("{x:.8}"))
                .unwrap_or_else(|e| format!("undefined ({e})"));
            println!(
                "w = {:.8e} +/- {:.3e} (95% CI [{:.8e}, {:.8e}]), W = {big_w}, M = {}, flagged {:.4}",
                est.value,
                est.std_error,
                est.value - 1.96 * est.std_error,
                est.value + 1.96 * est.std_error,
                est.samples_used,
                est.flagged_fraction()
            );
        }
        Command::EmitConfig { preset, output } => {
            let spec = llgctl_core::preset(&preset)?;
            let text = spec.to_toml()?;
            match output {
                Some(path) => std::fs::write(&path, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
