//! The linearizing chart `u = (1/ν, C₁/ν, …, C_{n−2}/ν, H/ν)` with the time
//! change `ds = −div(X) dt`, under which `u′ = u`.
//!
//! Exact zero sets are replaced by tolerance bands: a quantity `q` at `x` is
//! zero iff `|q| ≤ zero · (1 + σ(x))`.

use serde::Serialize;
use thiserror::Error;

use crate::calculus::{jacobian_determinant, ScalarField};
use crate::expr::EvalError;
use crate::flow::{integrate, integrate_rescaled, FlowError, IntegratorConfig, Termination, Trajectory};
use crate::model::{sample_points, IntegrableSystem, ModelError, SampleBox};
use crate::poisson::{near_nu_zero, norm_squared};
use crate::report::{ResidualAccumulator, VerificationReport};

pub const IDENTITY_TOLERANCE: f64 = 1e-7;
/// Sampled variance of ν below which ν counts as constant.
pub const CONSTANT_NU_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinearizeError {
    #[error("x0 ∉ {set}: {detail}")]
    OutsideDomain { set: &'static str, detail: String },
    #[error("|nu| = {nu:e} lies in the zero band; the chart is undefined")]
    NearNuZero { nu: f64 },
    #[error("nu is constant, so a time rescaling mu is required")]
    MissingMu,
    #[error("nu is not constant (sampled variance {0:e}); use the direct path")]
    NotConstantNu(f64),
    #[error("mu is not admissible: div(mu X) nonzero on {div_fraction:.3} of samples, chart Jacobian on {jacobian_fraction:.3}")]
    Inadmissible { div_fraction: f64, jacobian_fraction: f64 },
    #[error("no trajectory sample lies in Ω₀₀")]
    EmptyTrajectory,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Natural scale `σ(x)` of the zero tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// `max(1, |x|²)`.
    SquaredNorm,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub zero: f64,
    pub sigma: Sigma,
    pub defect: f64,
    pub defect_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { zero: 1e-9, sigma: Sigma::SquaredNorm, defect: 1e-6, defect_floor: 1e-300 }
    }
}

impl Tolerances {
    pub fn band(&self, x: &[f64]) -> f64 {
        let sigma = match self.sigma {
            Sigma::SquaredNorm => norm_squared(x).max(1.0),
            Sigma::Fixed(s) => s,
        };
        self.zero * (1.0 + sigma)
    }

    pub fn is_zero(&self, q: f64, x: &[f64]) -> bool {
        q.abs() <= self.band(x)
    }

    /// Every zero band multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Tolerances { zero: self.zero * factor, ..*self }
    }
}

/// Membership of a point in the sets `Ω₀ ⊇ 𝒪 ⊇ ℰ` and `Ω₀₀ = Ω₀ ∖ 𝒪`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainVerdict {
    pub in_omega0: bool,
    #[serde(rename = "in_E")]
    pub in_e: bool,
    #[serde(rename = "in_O")]
    pub in_o: bool,
    pub in_omega00: bool,
    pub nu: Option<f64>,
    pub divergence: Option<f64>,
    pub chart_jacobian: Option<f64>,
    /// `div X · ∂(1/ν, C…, H)/∂x`, the product whose zero set is 𝒪.
    pub product: Option<f64>,
    pub band: f64,
    pub tolerances: Tolerances,
}

impl DomainVerdict {
    /// The innermost set the point fails, for error messages.
    pub fn violated_set(&self) -> Option<&'static str> {
        if !self.in_omega0 {
            Some("Ω₀")
        } else if self.in_o {
            Some("Ω₀₀")
        } else {
            None
        }
    }
}

/// `(1/ν, C₁/ν, …, C_{n−2}/ν, H/ν)` as fields.
pub fn chart_fields(sys: &IntegrableSystem) -> Vec<ScalarField> {
    let nu = sys.nu();
    std::iter::once(nu.recip()).chain(sys.conserved_quantities().map(|c| c.div(nu))).collect()
}

/// `(1/ν, C₁, …, C_{n−2}, H)`, whose Jacobian determinant defines ℰ.
fn chart_jacobian_fields(sys: &IntegrableSystem) -> Vec<ScalarField> {
    std::iter::once(sys.nu().recip()).chain(sys.conserved_quantities().cloned()).collect()
}

pub fn chart(sys: &IntegrableSystem, x: &[f64]) -> Result<Vec<f64>, LinearizeError> {
    let nu = sys.nu().eval(x)?;
    if near_nu_zero(nu, x) {
        return Err(LinearizeError::NearNuZero { nu });
    }
    let mut u = vec![1.0 / nu];
    for c in sys.conserved_quantities() {
        u.push(c.eval(x)? / nu);
    }
    Ok(u)
}

pub fn classify(sys: &IntegrableSystem, x: &[f64], tols: &Tolerances) -> DomainVerdict {
    let band = tols.band(x);
    let nu = sys.nu().eval(x).ok();
    let in_omega0 = nu.is_some_and(|v| v.abs() > band);
    let mut verdict = DomainVerdict {
        in_omega0,
        in_e: false,
        in_o: false,
        in_omega00: false,
        nu,
        divergence: None,
        chart_jacobian: None,
        product: None,
        band,
        tolerances: *tols,
    };
    if !in_omega0 {
        return verdict;
    }
    let jac = jacobian_determinant(&chart_jacobian_fields(sys), x).ok();
    let div = sys.field().divergence(x).ok();
    verdict.chart_jacobian = jac;
    verdict.divergence = div;
    verdict.product = jac.zip(div).map(|(j, d)| j * d);
    // an unevaluable factor is treated as singular
    verdict.in_e = jac.is_none_or(|j| tols.is_zero(j, x));
    verdict.in_o = verdict.in_e || div.is_none_or(|d| tols.is_zero(d, x));
    verdict.in_omega00 = !verdict.in_o;
    verdict
}

pub fn nu_sample_variance(sys: &IntegrableSystem, region: &SampleBox) -> f64 {
    let values: Vec<f64> =
        sample_points(region, |_| true).points.iter().filter_map(|x| sys.nu().eval(x).ok()).collect();
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub nu_variance: f64,
    /// Largest `|div X|` over the sample; zero when ν is constant.
    pub max_abs_div_x: f64,
    pub div_x_vanishes: bool,
    pub sampled: usize,
    /// Points skipped because `μν` lies in its zero band.
    pub skipped: usize,
    pub div_mu_x_nonzero_fraction: f64,
    pub chart_jacobian_nonzero_fraction: f64,
    pub admissible: bool,
}

/// Checks that `div(μX)` and `∂(1/(μν), C₁, …, H)/∂x` are not identically
/// zero over the box, for a system whose ν is constant.
pub fn check_mu_admissibility(
    sys: &IntegrableSystem,
    region: &SampleBox,
    tols: &Tolerances,
) -> Result<AdmissibilityReport, LinearizeError> {
    if sys.mu().is_none() {
        return Err(LinearizeError::MissingMu);
    }
    let nu_variance = nu_sample_variance(sys, region);
    if nu_variance.is_nan() || nu_variance >= CONSTANT_NU_VARIANCE {
        return Err(LinearizeError::NotConstantNu(nu_variance));
    }
    let rescaled = sys.rescaled()?;
    let jac_fields = chart_jacobian_fields(&rescaled);
    let points = sample_points(region, |_| true).points;

    let mut max_abs_div_x: f64 = 0.0;
    let mut div_x_vanishes = true;
    let (mut used, mut skipped, mut div_nonzero, mut jac_nonzero) = (0usize, 0usize, 0usize, 0usize);
    for x in &points {
        if let Ok(d) = sys.field().divergence(x) {
            max_abs_div_x = max_abs_div_x.max(d.abs());
            div_x_vanishes &= tols.is_zero(d, x);
        }
        let regular = rescaled.nu().eval(x).is_ok_and(|v| !tols.is_zero(v, x));
        if !regular {
            skipped += 1;
            continue;
        }
        used += 1;
        if rescaled.field().divergence(x).is_ok_and(|d| !tols.is_zero(d, x)) {
            div_nonzero += 1;
        }
        if jacobian_determinant(&jac_fields, x).is_ok_and(|j| !tols.is_zero(j, x)) {
            jac_nonzero += 1;
        }
    }
    let fraction = |k: usize| if used == 0 { 0.0 } else { k as f64 / used as f64 };
    let div_mu_x_nonzero_fraction = fraction(div_nonzero);
    let chart_jacobian_nonzero_fraction = fraction(jac_nonzero);
    Ok(AdmissibilityReport {
        nu_variance,
        max_abs_div_x,
        div_x_vanishes,
        sampled: points.len(),
        skipped,
        div_mu_x_nonzero_fraction,
        chart_jacobian_nonzero_fraction,
        admissible: div_mu_x_nonzero_fraction > 0.0 && chart_jacobian_nonzero_fraction > 0.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifiedSample {
    pub t: f64,
    pub s: f64,
    pub u: Vec<f64>,
    /// `None` when the sample lies outside Ω₀₀.
    pub defect: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub tolerances: Tolerances,
    /// Where μ-admissibility and constancy of ν are sampled.
    pub admissibility_box: SampleBox,
}

impl CertifyOptions {
    pub fn for_dimension(n: usize) -> Self {
        CertifyOptions {
            tolerances: Tolerances::default(),
            admissibility_box: SampleBox::cube(n, -2.0, 2.0, 1000, 42).expect("valid default box"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearizationCertificate {
    pub system: String,
    pub x0: Vec<f64>,
    pub tspan: [f64; 2],
    /// Certified through the time change `dt = μ dt′`.
    pub rescaled: bool,
    pub admissibility: Option<AdmissibilityReport>,
    pub initial_chart: Vec<f64>,
    pub samples: Vec<CertifiedSample>,
    pub max_defect: f64,
    pub mean_defect: f64,
    pub excluded_samples: usize,
    pub tolerances: Tolerances,
    pub termination: Termination,
    pub trajectory: Trajectory,
    pub pass: bool,
}

/// The serialized certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary<'a> {
    pub system: &'a str,
    pub x0: &'a [f64],
    pub tspan: [f64; 2],
    pub max_defect: f64,
    pub mean_defect: f64,
    pub excluded_samples: usize,
    pub pass: bool,
    pub tolerances: &'a Tolerances,
}

impl LinearizationCertificate {
    pub fn summary(&self) -> CertificateSummary<'_> {
        CertificateSummary {
            system: &self.system,
            x0: &self.x0,
            tspan: self.tspan,
            max_defect: self.max_defect,
            mean_defect: self.mean_defect,
            excluded_samples: self.excluded_samples,
            pass: self.pass,
            tolerances: &self.tolerances,
        }
    }
}

/// The system a certificate is computed on: `sys` itself, or its μ-rescaling
/// when ν is constant.
pub fn working_system(
    sys: &IntegrableSystem,
    opts: &CertifyOptions,
) -> Result<(IntegrableSystem, Option<AdmissibilityReport>), LinearizeError> {
    let constant_nu =
        sys.nu().is_structurally_constant() || nu_sample_variance(sys, &opts.admissibility_box) < CONSTANT_NU_VARIANCE;
    if !constant_nu {
        return Ok((sys.clone(), None));
    }
    let report = check_mu_admissibility(sys, &opts.admissibility_box, &opts.tolerances)?;
    if !report.admissible {
        return Err(LinearizeError::Inadmissible {
            div_fraction: report.div_mu_x_nonzero_fraction,
            jacobian_fraction: report.chart_jacobian_nonzero_fraction,
        });
    }
    Ok((sys.rescaled()?, Some(report)))
}

/// Integrates from `x0`, maps every sample through the chart and measures
/// `|uᵢ(t) − uᵢ(0)·e^{s(t)}|`, relative where `uᵢ(0) ≠ 0`.
pub fn certify_linearization(
    sys: &IntegrableSystem,
    x0: &[f64],
    cfg: &IntegratorConfig,
    opts: &CertifyOptions,
) -> Result<LinearizationCertificate, LinearizeError> {
    let tols = opts.tolerances;
    let (working, admissibility) = working_system(sys, opts)?;
    let rescaled = admissibility.is_some();
    let v0 = classify(&working, x0, &tols);
    if let Some(set) = v0.violated_set() {
        let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:e}"));
        let detail = if set == "Ω₀" {
            format!("nu = {} is within the zero band {:e}", show(v0.nu), v0.band)
        } else {
            format!(
                "div X = {}, chart Jacobian = {}, zero band {:e}",
                show(v0.divergence),
                show(v0.chart_jacobian),
                v0.band
            )
        };
        return Err(LinearizeError::OutsideDomain { set, detail });
    }
    let trajectory = if rescaled { integrate_rescaled(sys, x0, cfg)? } else { integrate(&working, x0, cfg)? };
    let u0 = chart(&working, x0)?;

    let mut samples = Vec::with_capacity(trajectory.samples.len());
    let mut excluded = 0;
    let (mut max_defect, mut sum, mut retained) = (0.0f64, 0.0, 0usize);
    for sample in &trajectory.samples {
        let verdict = classify(&working, &sample.x, &tols);
        let u = if verdict.in_omega0 { chart(&working, &sample.x).ok() } else { None };
        let (u, defect) = match u {
            Some(u) if verdict.in_omega00 => {
                let growth = sample.s.exp();
                let d = u
                    .iter()
                    .zip(&u0)
                    .map(|(&ui, &u0i)| {
                        let predicted = u0i * growth;
                        if u0i == 0.0 {
                            ui.abs()
                        } else {
                            (ui - predicted).abs() / (predicted.abs() + tols.defect_floor)
                        }
                    })
                    .fold(0.0, f64::max);
                (u, Some(d))
            }
            other => (other.unwrap_or_default(), None),
        };
        match defect {
            Some(d) => {
                retained += 1;
                sum += d;
                max_defect = if d.is_nan() { f64::INFINITY } else { max_defect.max(d) };
            }
            None => excluded += 1,
        }
        samples.push(CertifiedSample { t: sample.t, s: sample.s, u, defect });
    }
    if retained == 0 {
        return Err(LinearizeError::EmptyTrajectory);
    }
    Ok(LinearizationCertificate {
        system: working.name().to_string(),
        x0: x0.to_vec(),
        tspan: [cfg.t0, cfg.t1],
        rescaled,
        admissibility,
        initial_chart: u0,
        samples,
        max_defect,
        mean_defect: sum / retained as f64,
        excluded_samples: excluded,
        tolerances: tols,
        termination: trajectory.termination.clone(),
        trajectory,
        pass: max_defect <= tols.defect,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResiduals {
    /// `⟨∇(1/ν), X⟩ + (1/ν)·div X`.
    pub reciprocal_nu: VerificationReport,
    /// `⟨∇uᵢ, X⟩ + div X · uᵢ`, one report per chart component.
    pub chart: Vec<VerificationReport>,
}

impl IdentityResiduals {
    pub fn passed(&self) -> bool {
        self.reciprocal_nu.passed && self.chart.iter().all(|r| r.passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.chart.iter().map(|r| r.max_residual).fold(self.reciprocal_nu.max_residual, f64::max)
    }
}

/// Pointwise residuals of the two derivative identities behind the chart.
/// Each residual is divided by one plus the sum of the magnitudes of the
/// terms it cancels.
pub fn identity_residuals(sys: &IntegrableSystem, pts: &[Vec<f64>]) -> IdentityResiduals {
    let fields = chart_fields(sys);
    let mut reciprocal = ResidualAccumulator::new("<grad(1/nu), X> + div(X)/nu", IDENTITY_TOLERANCE);
    let mut chart_accs: Vec<ResidualAccumulator> = (1..=fields.len())
        .map(|i| ResidualAccumulator::new(format!("<grad u{i}, X> + div(X) u{i}"), IDENTITY_TOLERANCE))
        .collect();

    for x in pts {
        let prepared = (|| -> Result<_, EvalError> {
            let nu = sys.nu().eval(x)?;
            if near_nu_zero(nu, x) {
                return Ok(None);
            }
            Ok(Some((sys.field().eval(x)?, sys.field().divergence(x)?)))
        })();
        let (field, div) = match prepared {
            Ok(Some(v)) => v,
            _ => {
                reciprocal.skip();
                chart_accs.iter_mut().for_each(ResidualAccumulator::skip);
                continue;
            }
        };
        for (k, (u, acc)) in fields.iter().zip(chart_accs.iter_mut()).enumerate() {
            let r = (|| -> Result<f64, EvalError> {
                let grad = u.gradient(x)?;
                let value = u.eval(x)?;
                let terms: Vec<f64> = grad.iter().zip(&field).map(|(g, v)| g * v).collect();
                let lie: f64 = terms.iter().sum();
                let scale = 1.0 + terms.iter().map(|t| t.abs()).sum::<f64>() + (div * value).abs();
                Ok((lie + div * value).abs() / scale)
            })();
            match r {
                Ok(r) => {
                    acc.push(r, x);
                    // u₁ = 1/ν is exactly the reciprocal-ν identity
                    if k == 0 {
                        reciprocal.push(r, x);
                    }
                }
                Err(_) => {
                    acc.skip();
                    if k == 0 {
                        reciprocal.skip();
                    }
                }
            }
        }
    }
    IdentityResiduals {
        reciprocal_nu: reciprocal.finish(),
        chart: chart_accs.into_iter().map(|a| a.finish()).collect(),
    }
}
