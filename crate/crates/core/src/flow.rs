//! Trajectory integration of `ẋ = X(x)` augmented with `ṡ = −div X(x)`.
//!
//! The reparametrized time `s` is part of the state, so it is advanced by the
//! same stages and accepted steps as `x` and shares its error control.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::model::{IntegrableSystem, ModelError};
use crate::poisson::norm_squared;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state has dimension {got}, system has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot evaluate the vector field at x0: {0}")]
    InitialState(#[source] EvalError),
    #[error("x0 ∉ Ω₀: the time rescaling mu vanishes there (mu(x0) = {0})")]
    RescalingVanishes(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical fixed-step Runge-Kutta of order 4.
    Rk4,
    /// Dormand-Prince 5(4) with PI step-size control.
    Rk45,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    /// Fixed step for RK4; upper bound on the step for RK45.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: usize = 100_000;

impl IntegratorConfig {
    pub fn rk4(t0: f64, t1: f64, step: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4,
            t0,
            t1,
            step,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn rk45(t0: f64, t1: f64, rtol: f64, atol: f64) -> Self {
        IntegratorConfig { method: Method::Rk45, t0, t1, step: f64::INFINITY, rtol, atol, max_steps: DEFAULT_MAX_STEPS }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.to_string()));
        if !self.t0.is_finite() || !self.t1.is_finite() {
            return bad("t-span must be finite");
        }
        if self.t1 < self.t0 {
            return bad("t1 must not precede t0");
        }
        if self.step.is_nan() || self.step <= 0.0 {
            return bad("step must be positive");
        }
        if self.method == Method::Rk4 && !self.step.is_finite() {
            return bad("fixed step must be finite");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig::rk45(0.0, 1.0, DEFAULT_RTOL, DEFAULT_ATOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// A stage left the evaluation domain and the step could not be shrunk around it.
    DomainError {
        t: f64,
        message: String,
    },
    StepSizeUnderflow {
        t: f64,
    },
    MaxStepsExceeded {
        t: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub system: String,
    pub samples: Vec<Sample>,
    pub config: IntegratorConfig,
    /// Integrated in the rescaled time `t′` of `dt = μ dt′`.
    pub rescaled: bool,
    pub rejected_steps: usize,
    pub termination: Termination,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least x0")
    }

    /// CSV with header `t,x1,…,xn,s[,u1,…,un]`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, chart: Option<&[Vec<f64>]>) -> io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("s".into());
        if chart.is_some() {
            header.extend((1..=n).map(|i| format!("u{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, sample) in self.samples.iter().enumerate() {
            let mut row = vec![fmt17(sample.t)];
            row.extend(sample.x.iter().map(|&v| fmt17(v)));
            row.push(fmt17(sample.s));
            if let Some(u) = chart {
                row.extend(u[k].iter().map(|&v| fmt17(v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Right-hand side of the augmented system `(X(x), −div X(x))`.
fn augmented_rhs(sys: &IntegrableSystem, state: &[f64]) -> Result<Vec<f64>, EvalError> {
    let n = sys.dimension();
    let x = &state[..n];
    let mut out = sys.field().eval(x)?;
    out.push(-sys.field().divergence(x)?);
    Ok(out)
}

pub fn integrate(sys: &IntegrableSystem, x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory, FlowError> {
    run(sys, x0, cfg, false)
}

/// Integrates `dx/dt′ = μ(x)·X(x)` with `ṡ = −div(μX)`.
pub fn integrate_rescaled(sys: &IntegrableSystem, x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory, FlowError> {
    let rescaled = sys.rescaled()?;
    let mu = sys.mu().expect("rescaled() checked mu").eval(x0).map_err(FlowError::InitialState)?;
    if mu.abs() <= crate::poisson::NU_ZERO_TOLERANCE * (1.0 + norm_squared(x0)) {
        return Err(FlowError::RescalingVanishes(mu));
    }
    run(&rescaled, x0, cfg, true)
}

fn run(sys: &IntegrableSystem, x0: &[f64], cfg: &IntegratorConfig, rescaled: bool) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    if x0.len() != sys.dimension() {
        return Err(FlowError::Dimension { expected: sys.dimension(), got: x0.len() });
    }
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let f0 = augmented_rhs(sys, &y0).map_err(FlowError::InitialState)?;
    let mut traj = Trajectory {
        system: sys.name().to_string(),
        samples: vec![Sample { t: cfg.t0, x: x0.to_vec(), s: 0.0 }],
        config: cfg.clone(),
        rescaled,
        rejected_steps: 0,
        termination: Termination::Completed,
    };
    if cfg.t1 == cfg.t0 {
        return Ok(traj);
    }
    match cfg.method {
        Method::Rk4 => rk4(sys, y0, cfg, &mut traj),
        Method::Rk45 => dopri5(sys, y0, f0, cfg, &mut traj),
    }
    Ok(traj)
}

fn push_sample(traj: &mut Trajectory, t: f64, y: &[f64]) {
    let n = y.len() - 1;
    traj.samples.push(Sample { t, x: y[..n].to_vec(), s: y[n] });
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, v) in out.iter_mut().zip(k) {
                *o += h * c * v;
            }
        }
    }
    out
}

fn rk4(sys: &IntegrableSystem, mut y: Vec<f64>, cfg: &IntegratorConfig, traj: &mut Trajectory) {
    let mut t = cfg.t0;
    let span = cfg.t1 - cfg.t0;
    // Steps are counted rather than accumulated so that the grid lands on t1.
    let steps = (span / cfg.step - 1e-9).ceil().max(1.0) as usize;
    if steps > cfg.max_steps {
        traj.termination = Termination::MaxStepsExceeded { t };
        return;
    }
    for k in 0..steps {
        let t_next = if k + 1 == steps { cfg.t1 } else { cfg.t0 + (k + 1) as f64 * cfg.step };
        let h = t_next - t;
        let step = (|| -> Result<Vec<f64>, EvalError> {
            let k1 = augmented_rhs(sys, &y)?;
            let k2 = augmented_rhs(sys, &axpy(&y, h, &[(0.5, &k1)]))?;
            let k3 = augmented_rhs(sys, &axpy(&y, h, &[(0.5, &k2)]))?;
            let k4 = augmented_rhs(sys, &axpy(&y, h, &[(1.0, &k3)]))?;
            Ok(axpy(&y, h, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]))
        })();
        match step {
            Ok(next) if next.iter().all(|v| v.is_finite()) => {
                y = next;
                t = t_next;
                push_sample(traj, t, &y);
            }
            Ok(_) => {
                traj.termination = Termination::DomainError { t, message: "non-finite state".into() };
                return;
            }
            Err(e) => {
                traj.termination = Termination::DomainError { t, message: e.to_string() };
                return;
            }
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Fifth- minus fourth-order weights.
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

const SAFETY: f64 = 0.9;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Attempt {
    y: Vec<f64>,
    f_new: Vec<f64>,
    err: f64,
}

fn dopri_step(
    sys: &IntegrableSystem,
    y: &[f64],
    f0: &[f64],
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<Attempt, EvalError> {
    let k1 = f0;
    let k2 = augmented_rhs(sys, &axpy(y, h, &[(A2[0], k1)]))?;
    let k3 = augmented_rhs(sys, &axpy(y, h, &[(A3[0], k1), (A3[1], &k2)]))?;
    let k4 = augmented_rhs(sys, &axpy(y, h, &[(A4[0], k1), (A4[1], &k2), (A4[2], &k3)]))?;
    let k5 = augmented_rhs(sys, &axpy(y, h, &[(A5[0], k1), (A5[1], &k2), (A5[2], &k3), (A5[3], &k4)]))?;
    let k6 = augmented_rhs(sys, &axpy(y, h, &[(A6[0], k1), (A6[1], &k2), (A6[2], &k3), (A6[3], &k4), (A6[4], &k5)]))?;
    let y_new = axpy(y, h, &[(B[0], k1), (B[2], &k3), (B[3], &k4), (B[4], &k5), (B[5], &k6)]);
    let k7 = augmented_rhs(sys, &y_new)?;
    let ks: [&[f64]; 7] = [k1, &k2, &k3, &k4, &k5, &k6, &k7];
    let mut sum = 0.0;
    for i in 0..y.len() {
        let e: f64 = h * (0..7).map(|j| E[j] * ks[j][i]).sum::<f64>();
        let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
        sum += (e / sc).powi(2);
    }
    let err = (sum / y.len() as f64).sqrt();
    Ok(Attempt { y: y_new, f_new: k7, err })
}

fn rms_scaled(v: &[f64], y: &[f64], cfg: &IntegratorConfig) -> f64 {
    let sum: f64 = v.iter().zip(y).map(|(a, b)| (a / (cfg.atol + cfg.rtol * b.abs())).powi(2)).sum();
    (sum / v.len() as f64).sqrt()
}

/// Starting step from the local Lipschitz estimate.
fn initial_step(sys: &IntegrableSystem, y: &[f64], f0: &[f64], cfg: &IntegratorConfig) -> f64 {
    let span = cfg.t1 - cfg.t0;
    let d0 = rms_scaled(y, y, cfg);
    let d1 = rms_scaled(f0, y, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let h1 = match augmented_rhs(sys, &axpy(y, h0, &[(1.0, f0)])) {
        Ok(f1) => {
            let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
            let d2 = rms_scaled(&diff, y, cfg) / h0;
            let m = d1.max(d2);
            if m <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / m).powf(1.0 / 5.0)
            }
        }
        Err(_) => h0 * 1e-3,
    };
    (100.0 * h0).min(h1).min(span).min(cfg.step)
}

fn dopri5(sys: &IntegrableSystem, mut y: Vec<f64>, mut f0: Vec<f64>, cfg: &IntegratorConfig, traj: &mut Trajectory) {
    let mut t = cfg.t0;
    let mut h = initial_step(sys, &y, &f0, cfg);
    let mut err_prev: f64 = 1e-4;
    let mut accepted = 0usize;
    let mut last_error: Option<String> = None;
    while t < cfg.t1 {
        if accepted >= cfg.max_steps {
            traj.termination = Termination::MaxStepsExceeded { t };
            return;
        }
        let remaining = cfg.t1 - t;
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        if h_try <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            traj.termination = match last_error {
                Some(message) => Termination::DomainError { t, message },
                None => Termination::StepSizeUnderflow { t },
            };
            return;
        }
        match dopri_step(sys, &y, &f0, h_try, cfg) {
            Ok(attempt) if attempt.err <= 1.0 && attempt.y.iter().all(|v| v.is_finite()) => {
                t = if last { cfg.t1 } else { t + h_try };
                y = attempt.y;
                f0 = attempt.f_new;
                accepted += 1;
                push_sample(traj, t, &y);
                let err = attempt.err.max(1e-10);
                let factor = (SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)).clamp(MIN_FACTOR, MAX_FACTOR);
                err_prev = err;
                h = (h_try * factor).min(cfg.step);
                last_error = None;
            }
            Ok(attempt) => {
                traj.rejected_steps += 1;
                let factor = if attempt.err.is_finite() {
                    (SAFETY * attempt.err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                h = h_try * factor;
            }
            Err(e) => {
                // shrink around the singular stage
                traj.rejected_steps += 1;
                last_error = Some(e.to_string());
                h = h_try * 0.25;
            }
        }
    }
}

/// Largest excursion of each conserved quantity from its value at `x(t₀)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Drift {
    pub casimirs: Vec<f64>,
    pub hamiltonian: f64,
    /// Samples where a quantity could not be evaluated.
    pub skipped: usize,
}

impl Drift {
    pub fn max(&self) -> f64 {
        self.casimirs.iter().copied().fold(self.hamiltonian, f64::max)
    }
}

pub fn conservation_drift(sys: &IntegrableSystem, traj: &Trajectory) -> Drift {
    let quantities: Vec<_> = sys.conserved_quantities().collect();
    let mut drift = vec![0.0f64; quantities.len()];
    let mut skipped = 0;
    let x0 = &traj.samples[0].x;
    let initial: Vec<Option<f64>> = quantities.iter().map(|q| q.eval(x0).ok()).collect();
    for sample in &traj.samples {
        for (k, q) in quantities.iter().enumerate() {
            match (initial[k], q.eval(&sample.x)) {
                (Some(v0), Ok(v)) => drift[k] = drift[k].max((v - v0).abs()),
                _ => skipped += 1,
            }
        }
    }
    let hamiltonian = drift.pop().unwrap_or(0.0);
    Drift { casimirs: drift, hamiltonian, skipped }
}
