use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "integrable", version, about = "Verify, integrate and linearize ODE systems with n-1 first integrals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check conservation, the bracket realization, divergence identities and bracket axioms on a sample.
    Verify(VerifyArgs),
    /// Integrate a trajectory and write it as CSV.
    Integrate(IntegrateArgs),
    /// Integrate and certify that the chart linearizes the flow.
    Linearize(LinearizeArgs),
    /// Report which domain sets a point belongs to.
    Classify(ClassifyArgs),
    /// Evaluate the bracket {f, g} at a point.
    Bracket(BracketArgs),
}

#[derive(Debug, Args)]
pub struct SystemSource {
    /// Path to a JSON system document.
    #[arg(long, value_name = "PATH", required_unless_present = "builtin", conflicts_with = "builtin")]
    pub system: Option<PathBuf>,
    /// Built-in system: lotka-volterra (lv) or euler (rigid-body).
    #[arg(long, value_name = "NAME")]
    pub builtin: Option<String>,
    /// Parameter override, repeatable.
    #[arg(long = "param", value_name = "K=V", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Debug, Args)]
pub struct IntegrationOptions {
    /// Initial state.
    #[arg(long, value_name = "V1,V2,..", allow_hyphen_values = true, value_parser = parse_vector)]
    pub x0: Point,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t1: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Rk45)]
    pub method: MethodArg,
    /// Fixed step for rk4, maximum step for rk45.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = integrable::flow::DEFAULT_RTOL)]
    pub rtol: f64,
    #[arg(long, default_value_t = integrable::flow::DEFAULT_ATOL)]
    pub atol: f64,
    #[arg(long, default_value_t = integrable::flow::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
}

#[derive(Debug, Args)]
pub struct SamplingOptions {
    /// Sample interval, once for every axis or once per axis.
    #[arg(long = "box", value_name = "LO:HI", allow_hyphen_values = true, value_parser = parse_interval)]
    pub intervals: Vec<(f64, f64)>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ToleranceOptions {
    /// Zero band: q counts as zero when |q| <= zero-tol * (1 + sigma).
    #[arg(long, default_value_t = 1e-9)]
    pub zero_tol: f64,
    /// Fixed natural scale sigma instead of max(1, |x|^2).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Largest certified relative defect.
    #[arg(long, default_value_t = 1e-6)]
    pub defect_tol: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub sampling: SamplingOptions,
    /// Points used for the bracket axioms (taken from the head of the sample).
    #[arg(long, default_value_t = 50)]
    pub axiom_samples: usize,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntegrateArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub integration: IntegrationOptions,
    /// Append the chart coordinates u1..un.
    #[arg(long)]
    pub chart: bool,
    /// Integrate the time-rescaled field mu*X.
    #[arg(long)]
    pub rescale: bool,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub integration: IntegrationOptions,
    #[command(flatten)]
    pub tolerances: ToleranceOptions,
    /// Where constancy of nu and admissibility of mu are sampled.
    #[command(flatten)]
    pub sampling: SamplingOptions,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[arg(long, value_name = "V1,V2,..", allow_hyphen_values = true, value_parser = parse_vector)]
    pub x0: Point,
    #[command(flatten)]
    pub tolerances: ToleranceOptions,
    /// Classify with respect to the time-rescaled system.
    #[arg(long)]
    pub rescale: bool,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BracketArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[arg(long, value_name = "V1,V2,..", allow_hyphen_values = true, value_parser = parse_vector)]
    pub x0: Point,
    #[arg(long, allow_hyphen_values = true)]
    pub f: String,
    /// Defaults to the Hamiltonian.
    #[arg(long, allow_hyphen_values = true)]
    pub g: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// A comma-separated coordinate list.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

fn parse_number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected K=V, got `{s}`"))?;
    Ok((k.trim().to_string(), parse_number(v)?))
}

fn parse_vector(s: &str) -> Result<Point, String> {
    s.split(',').map(parse_number).collect::<Result<_, _>>().map(Point)
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    Ok((parse_number(lo)?, parse_number(hi)?))
}
