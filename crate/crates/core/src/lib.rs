//! Optimal control of stochastic Landau-Lifshitz-Gilbert spin systems through
//! Feynman-Kac Monte-Carlo estimation of the value function.

pub mod driver;
pub mod error;
pub mod feynman_kac;
pub mod gradient;
pub mod integrator;
pub mod manifold;
pub mod model;
pub mod rng;
pub mod scenarios;

pub use driver::{run_algorithm, ControlledRun, CostBreakdown, GradientSource};
pub use error::{Error, Result};
pub use feynman_kac::{estimate_w, value_function_w, EstimatorConfig, FeynmanKac, GradientMethod, WEstimate};
pub use gradient::{feedback_control, grad_w_method_a, grad_w_method_b, GradientEstimate};
pub use integrator::{simulate_path, Partition, PathMode, PathSample};
pub use manifold::{SpinConfiguration, TangentVector, Vec3};
pub use model::{ExchangeMatrix, ModelParams, SpinTarget, TargetProfile, TerminalPayoff};
pub use rng::{SeedPolicy, WalkIncrements};
pub use scenarios::{preset, ScenarioSpec};
