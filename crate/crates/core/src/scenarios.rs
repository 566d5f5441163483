//! Scenario configuration, the built-in experiments, closed-form reference
//! solutions, the error study against them, and run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::{
    err_metric, orthogonality_angle, realized_cost, run_algorithm, time_average, ControlledRun, CostBreakdown,
    ExactGradient, GradientSource, MonteCarloGradient, ZeroGradient,
};
use crate::error::{Error, Result};
use crate::feynman_kac::{EstimatorConfig, FeynmanKac, GradientMethod};
use crate::integrator::{Partition, PathSample};
use crate::manifold::{norm_sq, SpinConfiguration, Vec3};
use crate::model::{ExchangeMatrix, ModelParams, SpinTarget, TargetProfile, TerminalPayoff};
use crate::rng::{namespace, sample_walk, SeedPolicy, WalkIncrements};

pub const PRESETS: [&str; 6] = ["test1", "test2", "spin3", "spin4-setup1", "spin4-setup2", "spin10"];

/// A complete, serializable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Time step `τ`; `T / τ` must be an integer.
    pub tau: f64,
    /// Seed of the controlled-state noise.
    pub outer_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub initial: Vec<Vec3>,
    pub model: ModelParams,
    pub target: TargetProfile,
    pub payoff: TerminalPayoff,
    pub estimator: EstimatorConfig,
}

impl ScenarioSpec {
    pub fn partition(&self) -> Result<Partition> {
        Partition::from_tau(self.model.horizon, self.tau)
    }

    pub fn initial_state(&self) -> Result<SpinConfiguration> {
        SpinConfiguration::from_spins(&self.initial)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.beta()?;
        let n = self.model.n_spins;
        if self.initial.len() != n {
            return Err(Error::Dimension(format!("{} initial spins given for N = {n}", self.initial.len())));
        }
        self.initial_state()?;
        self.target.validate()?;
        if self.target.n_spins() != n {
            return Err(Error::Dimension(format!("target has {} spins, N = {n}", self.target.n_spins())));
        }
        self.payoff.validate(n)?;
        self.estimator.validate()?;
        self.partition().map(|_| ())
    }

    /// Nonfatal diagnostics.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.model.in_overflow_regime() {
            out.push(format!(
                "lambda*nu^2 = {:.3e} << min(delta,1)*C_ext^2*(1+alpha^2) = {:.3e}: Feynman-Kac weights will underflow",
                self.model.lambda * self.model.nu * self.model.nu,
                self.model.delta.min(1.0) * self.model.c_ext.powi(2) * (1.0 + self.model.alpha.powi(2)),
            ));
        }
        if self.estimator.hbar_too_small() {
            out.push(format!(
                "hbar = {} is much smaller than 1/sqrt(M) = {:.3e}; difference quotients will oscillate strongly",
                self.estimator.hbar,
                1.0 / (self.estimator.samples as f64).sqrt()
            ));
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// A preset name, a TOML config file, or a run manifest (`.json`).
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if PRESETS.contains(&name_or_path) {
            preset(name_or_path)
        } else if path.extension().is_some_and(|e| e == "json") && path.exists() {
            let spec = Manifest::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?.spec;
            spec.validate()?;
            Ok(spec)
        } else if path.exists() {
            Self::load(path)
        } else {
            Err(Error::UnknownPreset(name_or_path.to_string()))
        }
    }

    pub fn outer_walk(&self) -> Result<WalkIncrements> {
        let part = self.partition()?;
        Ok(outer_walk(self.outer_seed, part.steps, self.model.dim(), part.tau()))
    }
}

/// The controlled-state noise of seed `seed`.
pub fn outer_walk(seed: u64, steps: usize, dim: usize, tau: f64) -> WalkIncrements {
    sample_walk(SeedPolicy::new(seed).stream(&[namespace::OUTER]), 0, steps, dim, tau)
}

const E1: Vec3 = [1.0, 0.0, 0.0];
const NEG_E1: Vec3 = [-1.0, 0.0, 0.0];
const E2: Vec3 = [0.0, 1.0, 0.0];

fn estimator(samples: usize, hbar: f64) -> EstimatorConfig {
    EstimatorConfig { samples, hbar, quad_points: 2, method: GradientMethod::B, seed: SeedPolicy::new(0) }
}

fn switching(initial: Vec<Vec3>, target: Vec<SpinTarget>, name: &str) -> ScenarioSpec {
    let n = initial.len();
    ScenarioSpec {
        name: name.into(),
        tau: 1e-2,
        outer_seed: 0,
        output_dir: None,
        initial,
        model: ModelParams {
            n_spins: n,
            alpha: 0.1,
            nu: 0.3,
            lambda: 1e-3,
            delta: 0.0,
            c_ext: 0.1,
            horizon: 0.5,
            d_blocks: vec![[-5.0, 1.0, 3.5]; n],
            exchange: ExchangeMatrix::Ring { strength: 1.0 },
        },
        target: TargetProfile::RotatingSwitch { spins: target },
        payoff: TerminalPayoff::QuadraticTracking { weight: 0.5 },
        estimator: estimator(1_000_000, 1e-3),
    }
}

/// The built-in experiments with the published parameters.
pub fn preset(name: &str) -> Result<ScenarioSpec> {
    use SpinTarget::{Fixed, Switch};
    Ok(match name {
        "test1" => {
            let mut model = ModelParams::isotropic(1);
            model.horizon = 0.5;
            ScenarioSpec {
                name: name.into(),
                tau: 1e-2,
                outer_seed: 0,
                output_dir: None,
                initial: vec![E1],
                model,
                target: TargetProfile::Constant { spins: vec![E1] },
                payoff: TerminalPayoff::LogSphericalHarmonic1Spin { scale: 1.0 },
                estimator: estimator(10_000, 1e-2),
            }
        }
        "test2" => {
            let mut model = ModelParams::isotropic(2);
            model.horizon = 0.5;
            model.alpha = 0.0;
            model.exchange = ExchangeMatrix::TwoSpin { mu: 1.0 };
            ScenarioSpec {
                name: name.into(),
                tau: 1e-2,
                outer_seed: 0,
                output_dir: None,
                initial: vec![E1, E2],
                model,
                target: TargetProfile::Constant { spins: vec![E1, E1] },
                payoff: TerminalPayoff::LogSphericalHarmonic2Spin { scale: 1.0 },
                estimator: estimator(10_000, 1e-2),
            }
        }
        "spin3" => switching(vec![E1, NEG_E1, E1], vec![Fixed(E1), Switch, Fixed(E1)], name),
        "spin4-setup1" => {
            switching(vec![E1, NEG_E1, E1, NEG_E1], vec![Fixed(E1), Switch, Fixed(E1), Switch], name)
        }
        "spin4-setup2" => {
            switching(vec![E1, NEG_E1, NEG_E1, E1], vec![Fixed(E1), Switch, Switch, Fixed(E1)], name)
        }
        "spin10" => {
            let initial: Vec<Vec3> = (1..=10)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / 10.0;
                    [0.0, a.sin(), a.cos()]
                })
                .collect();
            ScenarioSpec {
                name: name.into(),
                tau: 1e-2,
                outer_seed: 0,
                output_dir: None,
                model: ModelParams {
                    n_spins: 10,
                    alpha: 1.0,
                    nu: 0.5,
                    lambda: 1.0,
                    delta: 0.0,
                    c_ext: 1.0,
                    horizon: 0.5,
                    d_blocks: vec![[0.0; 3]; 10],
                    exchange: ExchangeMatrix::Ring { strength: 1.0 },
                },
                initial,
                target: TargetProfile::Constant { spins: vec![E1; 10] },
                payoff: TerminalPayoff::QuadraticTracking { weight: 0.5 },
                estimator: estimator(10_000, 1e-2),
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

/// Closed-form `w`, `∇w` and `∇W` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub w: f64,
    pub grad_w: Vec<f64>,
    pub grad_big_w: Vec<f64>,
}

fn pole_direction(s: &Vec3) -> Vec3 {
    [-s[0] * s[2], -s[1] * s[2], 1.0 - s[2] * s[2]]
}

/// Test problem 1 (`β = 2`): `w = e^{t−T} m_3 + 2`.
pub fn exact_solution_test1(t: f64, horizon: f64, m: &SpinConfiguration) -> ExactSolution {
    let e = (t - horizon).exp();
    let s = m.spin(0);
    let w = e * s[2] + 2.0;
    let d = pole_direction(&s);
    let grad_w: Vec<f64> = d.iter().map(|x| e * x).collect();
    let grad_big_w = grad_w.iter().map(|x| -x / (2.0 * w)).collect();
    ExactSolution { w, grad_w, grad_big_w }
}

/// Test problem 2 (`β = 1`): `w = e^{t−T} (m_{1,3} + m_{2,3}) + 2`.
pub fn exact_solution_test2(t: f64, horizon: f64, m: &SpinConfiguration) -> ExactSolution {
    let e = (t - horizon).exp();
    let (a, b) = (m.spin(0), m.spin(1));
    let w = e * (a[2] + b[2]) + 2.0;
    let grad_w: Vec<f64> = pole_direction(&a).iter().chain(&pole_direction(&b)).map(|x| e * x).collect();
    let grad_big_w = grad_w.iter().map(|x| -x / w).collect();
    ExactSolution { w, grad_w, grad_big_w }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestProblem {
    Test1,
    Test2,
}

impl TestProblem {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "test1" => Ok(Self::Test1),
            "test2" => Ok(Self::Test2),
            other => Err(Error::Config(format!("validation needs test1 or test2, got '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Test1 => "test1",
            Self::Test2 => "test2",
        }
    }

    pub fn preset(self) -> ScenarioSpec {
        preset(self.name()).expect("built-in preset")
    }

    pub fn exact(self, t: f64, horizon: f64, m: &SpinConfiguration) -> ExactSolution {
        match self {
            Self::Test1 => exact_solution_test1(t, horizon, m),
            Self::Test2 => exact_solution_test2(t, horizon, m),
        }
    }
}

/// Exact-gradient and estimated-gradient runs on a common outer walk.
#[derive(Debug, Clone)]
pub struct ValidationResult {
    pub exact: ControlledRun,
    pub approx: ControlledRun,
    pub err: Vec<f64>,
}

impl ValidationResult {
    pub fn mean_err(&self) -> f64 {
        time_average(&self.err)
    }

    pub fn max_err(&self) -> f64 {
        self.err.iter().cloned().fold(0.0, f64::max)
    }
}

/// The `err(t)` study of a test problem under `spec`'s estimator and outer seed.
pub fn validate_against_exact(problem: TestProblem, spec: &ScenarioSpec) -> Result<ValidationResult> {
    spec.validate()?;
    let part = spec.partition()?;
    let walk = spec.outer_walk()?;
    let m0 = spec.initial_state()?;
    let horizon = spec.model.horizon;
    let mut oracle = ExactGradient(|t: f64, m: &SpinConfiguration| problem.exact(t, horizon, m).grad_big_w);
    let exact = run_algorithm(&spec.model, &m0, part, &mut oracle, &walk)?;
    let mut mc = monte_carlo_source(spec)?;
    let approx = run_algorithm(&spec.model, &m0, part, &mut mc, &walk)?;
    let err = err_metric(&exact.trajectory, &approx.trajectory)?;
    Ok(ValidationResult { exact, approx, err })
}

pub fn monte_carlo_source(spec: &ScenarioSpec) -> Result<MonteCarloGradient<'_>> {
    Ok(MonteCarloGradient {
        fk: FeynmanKac::new(&spec.model, &spec.payoff, &spec.target, spec.estimator.quad_points)?,
        cfg: spec.estimator.clone(),
        partition: spec.partition()?,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub run: ControlledRun,
    pub cost: CostBreakdown,
}

/// Algorithm run of `spec` with estimated gradients.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutcome> {
    spec.validate()?;
    let mut src = monte_carlo_source(spec)?;
    run_with_source(spec, &mut src)
}

/// Same outer walk, no control.
pub fn run_uncontrolled(spec: &ScenarioSpec) -> Result<ScenarioOutcome> {
    spec.validate()?;
    run_with_source(spec, &mut ZeroGradient)
}

pub fn run_with_source(spec: &ScenarioSpec, source: &mut dyn GradientSource) -> Result<ScenarioOutcome> {
    let run = run_algorithm(&spec.model, &spec.initial_state()?, spec.partition()?, source, &spec.outer_walk()?)?;
    let cost = realized_cost(&spec.model, &run, &spec.target, &spec.payoff, spec.estimator.quad_points)?;
    Ok(ScenarioOutcome { run, cost })
}

fn spin_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).flat_map(move |i| (1..=3).map(move |l| format!("{prefix}_{i}_{l}")))
}

/// Column names of the trajectory table.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(spin_columns("m", n));
    h.extend(spin_columns("u", n));
    h.extend((1..=n).map(|i| format!("u_norm_sq_{i}")));
    h.extend((1..=n).map(|i| format!("angle_{i}")));
    h.extend(["w", "w_stderr", "flagged_fraction"].map(String::from));
    h
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// One row per grid time; control columns are empty at `T`.
pub fn write_trajectory_csv<W: std::io::Write>(run: &ControlledRun, out: W) -> Result<()> {
    let states = run.states();
    let n = states[0].n_spins();
    let part = run.trajectory.partition;
    let angles: Vec<Vec<Option<f64>>> = (0..n).map(|i| orthogonality_angle(run, i)).collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n))?;
    for (j, m) in states.iter().enumerate() {
        let mut row = vec![fmt(part.time(part.start + j))];
        row.extend(m.as_slice().iter().map(|&x| fmt(x)));
        match run.controls.get(j) {
            Some(u) => {
                row.extend(u.iter().map(|&x| fmt(x)));
                row.extend((0..n).map(|i| fmt(norm_sq(&u[3 * i..3 * i + 3]))));
                row.extend((0..n).map(|i| angles[i][j].map(fmt).unwrap_or_default()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 5 * n)),
        }
        match run.w_estimates.get(j).copied().flatten() {
            Some(e) => row.extend([fmt(e.value), fmt(e.std_error)]),
            None => row.extend([String::new(), String::new()]),
        }
        row.push(fmt(run.flagged_fractions.get(j).copied().unwrap_or(0.0)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, err, exact m, estimated m` per grid time.
pub fn write_err_csv<W: std::io::Write>(result: &ValidationResult, out: W) -> Result<()> {
    let a = &result.exact.trajectory;
    let b = &result.approx.trajectory;
    let n = a.states[0].n_spins();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "err".to_string()];
    header.extend(spin_columns("m_exact", n));
    header.extend(spin_columns("m_approx", n));
    w.write_record(&header)?;
    for (j, e) in result.err.iter().enumerate() {
        let mut row = vec![fmt(a.partition.time(a.partition.start + j)), fmt(*e)];
        row.extend(a.states[j].as_slice().iter().map(|&x| fmt(x)));
        row.extend(b.states[j].as_slice().iter().map(|&x| fmt(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub command: String,
    pub spec: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_err: Option<f64>,
    pub max_norm_deviation: f64,
    pub max_orthogonality_angle: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, spec: &ScenarioSpec, run: &ControlledRun) -> Self {
        Self {
            library: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            spec: spec.clone(),
            cost: None,
            mean_err: None,
            max_norm_deviation: run.trajectory.max_norm_deviation(),
            max_orthogonality_angle: run.max_orthogonality_angle(),
            files: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Writes `trajectory.csv` (and `err.csv` for validation runs) plus `manifest.json` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    mut manifest: Manifest,
    run: &ControlledRun,
    validation: Option<&ValidationResult>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    write_trajectory_csv(run, fs::File::create(dir.join("trajectory.csv"))?)?;
    manifest.files = vec!["trajectory.csv".into()];
    if let Some(v) = validation {
        write_err_csv(v, fs::File::create(dir.join("err.csv"))?)?;
        manifest.files.push("err.csv".into());
        manifest.mean_err = Some(v.mean_err());
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// `max_j ‖a^j − b^j‖`.
pub fn max_step_distance(a: &PathSample, b: &PathSample) -> Result<f64> {
    Ok(err_metric(a, b)?.into_iter().map(f64::sqrt).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{dot, tangent_project};
    use crate::rng::SplitMix64;

    #[test]
    fn preset_fidelity() {
        let s = preset("spin3").unwrap();
        assert_eq!(s.model.d_blocks[0], [-5.0, 1.0, 3.5]);
        assert_eq!((s.model.horizon, s.model.alpha, s.model.delta), (0.5, 0.1, 0.0));
        assert_eq!((s.model.lambda, s.model.nu, s.model.c_ext), (1e-3, 0.3, 0.1));
        assert_eq!((s.estimator.hbar, s.tau, s.estimator.samples), (1e-3, 1e-2, 1_000_000));
        assert_eq!(s.initial, vec![E1, NEG_E1, E1]);
        assert!((s.model.beta().unwrap() - 112.222_222).abs() < 1e-5);

        let s = preset("test1").unwrap();
        assert_eq!(s.model.exchange, ExchangeMatrix::Zero);
        assert_eq!(s.model.d_blocks, vec![[0.0; 3]]);
        assert_eq!((s.model.alpha, s.model.nu, s.model.lambda, s.model.c_ext, s.model.delta), (1.0, 1.0, 1.0, 1.0, 0.0));
        assert_eq!(s.model.beta().unwrap(), 2.0);

        let s = preset("test2").unwrap();
        assert_eq!(s.model.exchange, ExchangeMatrix::TwoSpin { mu: 1.0 });
        assert_eq!((s.model.alpha, s.model.delta), (0.0, 0.0));
        assert_eq!(s.model.beta().unwrap(), 1.0);

        let s = preset("spin10").unwrap();
        assert_eq!((s.model.alpha, s.model.lambda, s.model.nu, s.model.c_ext), (1.0, 1.0, 0.5, 1.0));
        assert_eq!((s.estimator.hbar, s.tau, s.estimator.samples), (1e-2, 1e-2, 10_000));
        let a = 2.0 * std::f64::consts::PI * 3.0 / 10.0;
        assert_eq!(s.initial[2], [0.0, a.sin(), a.cos()]);

        let s = preset("spin4-setup2").unwrap();
        assert_eq!(s.initial, vec![E1, NEG_E1, NEG_E1, E1]);
        assert_eq!(
            s.target,
            TargetProfile::RotatingSwitch {
                spins: vec![SpinTarget::Fixed(E1), SpinTarget::Switch, SpinTarget::Switch, SpinTarget::Fixed(E1)]
            }
        );
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(preset("spin5"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn config_round_trip() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            let text = s.to_toml().unwrap();
            assert_eq!(ScenarioSpec::from_toml(&text).unwrap(), s, "{name}");
        }
    }

    #[test]
    fn config_errors_are_actionable() {
        let mut s = preset("test2").unwrap();
        s.initial.pop();
        let err = ScenarioSpec::from_toml(&s.to_toml().unwrap()).unwrap_err();
        assert!(err.is_config_error() && err.to_string().contains("initial spins"), "{err}");
        let err = ScenarioSpec::from_toml("name = 3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let mut s = preset("test1").unwrap();
        s.tau = 0.03;
        assert!(s.validate().is_err());
    }

    #[test]
    fn overflow_warning() {
        let mut s = preset("test1").unwrap();
        assert!(s.warnings().is_empty());
        s.model.lambda = 1e-6;
        s.model.nu = 0.1;
        s.model.delta = 1.0;
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn exact_solution_examples() {
        let e3 = SpinConfiguration::from_spins(&[[0.0, 0.0, 1.0]]).unwrap();
        let e1 = SpinConfiguration::from_spins(&[E1]).unwrap();
        assert_eq!(exact_solution_test1(0.5, 0.5, &e3).w, 3.0);
        let s = exact_solution_test1(0.0, 0.5, &e3);
        assert!((s.w - 2.606_53).abs() < 1e-5);
        assert!(s.grad_big_w.iter().all(|&x| x == 0.0));
        let s = exact_solution_test1(0.0, 0.5, &e1);
        let expect = -(-0.5f64).exp() / 4.0;
        assert_eq!(s.grad_big_w[..2], [0.0, 0.0]);
        assert!((s.grad_big_w[2] - expect).abs() < 1e-15);

        let both = SpinConfiguration::from_spins(&[[0.0, 0.0, 1.0]; 2]).unwrap();
        assert_eq!(exact_solution_test2(0.5, 0.5, &both).w, 4.0);
        assert!((exact_solution_test2(0.0, 0.5, &both).w - 3.213_06).abs() < 1e-5);
        let m = SpinConfiguration::from_spins(&[E1, E2]).unwrap();
        let g = exact_solution_test2(0.0, 0.5, &m).grad_big_w;
        let c = -(-0.5f64).exp() / 2.0;
        let expect = [0.0, 0.0, c, 0.0, 0.0, c];
        assert!(g.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    fn unit(rng: &mut SplitMix64) -> Vec3 {
        loop {
            let v = [2.0 * rng.next_f64() - 1.0, 2.0 * rng.next_f64() - 1.0, 2.0 * rng.next_f64() - 1.0];
            let n = norm_sq(&v).sqrt();
            if n > 0.1 && n < 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    #[test]
    fn test2_drift_is_orthogonal_to_the_exact_gradient() {
        // b · ∇(m_{1,3} + m_{2,3}) = 0, so the exact w solves the pure heat equation.
        let s = preset("test2").unwrap();
        let mut rng = SplitMix64::new(17);
        for _ in 0..100 {
            let m = SpinConfiguration::from_spins(&[unit(&mut rng), unit(&mut rng)]).unwrap();
            let b = s.model.drift_b(&m);
            let g = tangent_project(&m, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
            assert!(dot3(&b, &g.components).abs() < 1e-13);
        }
    }

    fn dot3(a: &[f64], b: &[f64]) -> f64 {
        a.chunks(3).zip(b.chunks(3)).map(|(x, y)| dot(&[x[0], x[1], x[2]], &[y[0], y[1], y[2]])).sum()
    }

    #[test]
    fn exact_gradients_match_stencil_of_exact_w() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let m = SpinConfiguration::from_spins(&[unit(&mut rng), unit(&mut rng)]).unwrap();
            let s = exact_solution_test2(0.1, 0.5, &m);
            let d = crate::gradient::stencil_gradient(&m, 1e-4, |x| exact_solution_test2(0.1, 0.5, x).w);
            let d = tangent_project(&m, &d).components;
            assert!(d.iter().zip(&s.grad_w).all(|(a, b)| (a - b).abs() < 1e-7));
        }
    }

    #[test]
    fn artifacts_round_trip_and_are_reproducible() {
        let mut spec = preset("spin3").unwrap();
        spec.estimator.samples = 100;
        let dir = tempfile::tempdir().unwrap();
        let mut csvs = Vec::new();
        for k in 0..2 {
            let out = run_scenario(&spec).unwrap();
            let mut m = Manifest::new("run spin3", &spec, &out.run);
            m.cost = Some(out.cost);
            let path = write_artifacts(&dir.path().join(format!("r{k}")), m, &out.run, None).unwrap();
            let back = Manifest::load(&path).unwrap();
            assert_eq!(back.spec, spec);
            csvs.push(fs::read(dir.path().join(format!("r{k}/trajectory.csv"))).unwrap());
        }
        assert_eq!(csvs[0], csvs[1]);
        let text = String::from_utf8(csvs[0].clone()).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,m_1_1,m_1_2,m_1_3,m_2_1"));
        assert!(header.ends_with("angle_3,w,w_stderr,flagged_fraction"));
        assert_eq!(text.lines().count(), 1 + 51);
    }
}
