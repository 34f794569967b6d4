use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use integrable::calculus::ScalarField;
use integrable::expr::Expression;
use integrable::flow::{fmt17, integrate, integrate_rescaled, FlowError, IntegratorConfig, Method, Termination};
use integrable::linearize::{
    certify_linearization, chart, check_mu_admissibility, classify, identity_residuals, nu_sample_variance,
    AdmissibilityReport, CertificateSummary, CertifyOptions, DomainVerdict, LinearizeError, Sigma, Tolerances,
    CONSTANT_NU_VARIANCE,
};
use integrable::model::{builtin, sample_points, ModelError, SampleBox, SystemDocument};
use integrable::poisson::{
    check_bracket_axioms, nu_regular, verify_divergence_free, verify_realization, BracketContext,
    ANTISYMMETRY_TOLERANCE, CASIMIR_TOLERANCE, DIVERGENCE_FREE_TOLERANCE, HAMILTONIAN_CONSERVATION_TOLERANCE,
    JACOBI_TOLERANCE, LEIBNIZ_TOLERANCE, NU_ZERO_TOLERANCE, REALIZATION_TOLERANCE,
};
use integrable::{IntegrableSystem, Parameters, VerificationReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::{
    BracketArgs, ClassifyArgs, IntegrateArgs, IntegrationOptions, LinearizeArgs, MethodArg, SamplingOptions,
    SystemSource, ToleranceOptions, VerifyArgs,
};

pub const CONSERVATION_TOLERANCE: f64 = 1e-8;

/// A run that did not pass. `Input` maps to exit status 2, `Check` to 1.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Check(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Check(m) => m,
        }
    }
}

fn input(e: impl ToString) -> Failure {
    Failure::Input(e.to_string())
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        input(e)
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::InitialState(_) | FlowError::RescalingVanishes(_) => Failure::Check(e.to_string()),
            other => input(other),
        }
    }
}

impl From<LinearizeError> for Failure {
    fn from(e: LinearizeError) -> Self {
        match e {
            LinearizeError::Flow(f) => f.into(),
            LinearizeError::Model(m) => m.into(),
            other => Failure::Check(other.to_string()),
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn load(source: &SystemSource) -> Result<IntegrableSystem, Failure> {
    let params: Parameters = source.params.iter().cloned().collect();
    let sys = match (&source.system, &source.builtin) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
            let mut doc: SystemDocument =
                serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
            for (k, v) in params {
                match doc.parameters.get_mut(&k) {
                    Some(slot) => *slot = v,
                    None => return Err(input(format!("parameter `{k}` is not declared by {}", path.display()))),
                }
            }
            IntegrableSystem::from_document(&doc)?
        }
        (None, Some(name)) => builtin(name, &params)?,
        _ => return Err(input("exactly one of --system and --builtin is required")),
    };
    for w in sys.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(sys)
}

/// SHA-256 of the canonical document serialization.
fn system_hash(sys: &IntegrableSystem) -> String {
    let canonical = sys.to_document().ok().and_then(|d| serde_json::to_string(&d).ok()).unwrap_or_default();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn point(sys: &IntegrableSystem, x: &[f64]) -> Result<Vec<f64>, Failure> {
    if x.len() != sys.dimension() {
        return Err(input(format!("--x0 has {} coordinates, the system has dimension {}", x.len(), sys.dimension())));
    }
    Ok(x.to_vec())
}

fn sample_box(n: usize, opts: &SamplingOptions) -> Result<SampleBox, Failure> {
    let intervals = match opts.intervals.len() {
        0 => vec![(-2.0, 2.0); n],
        1 => vec![opts.intervals[0]; n],
        k if k == n => opts.intervals.clone(),
        k => return Err(input(format!("--box given {k} times; expected once or {n} times"))),
    };
    let (lower, upper) = intervals.into_iter().unzip();
    Ok(SampleBox::new(lower, upper, opts.samples, opts.seed)?)
}

fn tolerances(opts: &ToleranceOptions) -> Result<Tolerances, Failure> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(opts.zero_tol) || !positive(opts.defect_tol) || opts.sigma.is_some_and(|s| !positive(s)) {
        return Err(input("tolerances and sigma must be positive"));
    }
    Ok(Tolerances {
        zero: opts.zero_tol,
        sigma: opts.sigma.map_or(Sigma::SquaredNorm, Sigma::Fixed),
        defect: opts.defect_tol,
        ..Tolerances::default()
    })
}

fn integrator(opts: &IntegrationOptions) -> Result<IntegratorConfig, Failure> {
    let mut cfg = match opts.method {
        MethodArg::Rk4 => IntegratorConfig::rk4(opts.t0, opts.t1, opts.step.unwrap_or(1e-3)),
        MethodArg::Rk45 => {
            let mut cfg = IntegratorConfig::rk45(opts.t0, opts.t1, opts.rtol, opts.atol);
            if let Some(h) = opts.step {
                cfg.step = h;
            }
            cfg
        }
    };
    cfg.max_steps = opts.max_steps;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to `path` through a temporary file in the same directory, or to
/// stdout when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    let Some(path) = path else {
        std::io::stdout().write_all(bytes).map_err(input)?;
        return Ok(());
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes).map_err(input)?;
    tmp.persist(path).map_err(|e| input(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(input)?;
    text.push('\n');
    emit(path, text.as_bytes())
}

fn nu_is_constant(sys: &IntegrableSystem, region: &SampleBox) -> bool {
    sys.nu().is_structurally_constant() || nu_sample_variance(sys, region) < CONSTANT_NU_VARIANCE
}

#[derive(Serialize)]
struct CheckTolerances {
    nu_zero: f64,
    conservation: f64,
    realization: f64,
    divergence_free: f64,
    identities: f64,
    antisymmetry: f64,
    leibniz: f64,
    casimir: f64,
    jacobi: f64,
    hamiltonian_conservation: f64,
    domain: Tolerances,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    command: &'static str,
    system: &'a str,
    system_hash: String,
    seed: u64,
    samples_requested: usize,
    samples_used: usize,
    lower: &'a [f64],
    upper: &'a [f64],
    constant_nu: bool,
    tolerances: CheckTolerances,
    checks: Vec<VerificationReport>,
    admissibility: Option<AdmissibilityReport>,
    notes: Vec<String>,
    pass: bool,
}

pub fn verify(args: &VerifyArgs) -> Outcome {
    let sys = load(&args.source)?;
    let n = sys.dimension();
    let region = sample_box(n, &args.sampling)?;
    let domain = Tolerances::default();
    let evaluable = |s: &IntegrableSystem, x: &[f64]| {
        nu_regular(s, x) && s.field().eval(x).is_ok() && s.conserved_quantities().all(|c| c.eval(x).is_ok())
    };
    let pts = sample_points(&region, |x| evaluable(&sys, x)).points;
    if pts.is_empty() {
        return Err(Failure::Check("no sample point lies in the evaluation domain".into()));
    }

    let mut checks = integrable::model::verify_conservation(&sys, &pts, CONSERVATION_TOLERANCE);
    checks.push(verify_realization(&sys, &pts));
    checks.push(verify_divergence_free(&sys, &pts));
    let mut notes = Vec::new();
    let mut admissibility = None;

    let constant_nu = nu_is_constant(&sys, &region);
    let working = if constant_nu {
        match sys.mu() {
            None => {
                notes.push("nu is constant and no mu is given: the chart identities are not checked".into());
                None
            }
            Some(_) => {
                let report = check_mu_admissibility(&sys, &region, &domain)?;
                notes.push(format!("nu is constant; max |div X| over the sample is {:e}", report.max_abs_div_x));
                if !report.admissible {
                    notes.push("mu is not admissible: div(mu X) or the chart Jacobian vanishes on every sample".into());
                }
                admissibility = Some(report);
                let rescaled = sys.rescaled()?;
                let rescaled_pts: Vec<_> = pts.iter().filter(|x| evaluable(&rescaled, x)).cloned().collect();
                let mut divergence = verify_divergence_free(&rescaled, &rescaled_pts);
                divergence.check = "divergence of mu X/(mu nu)".into();
                checks.push(divergence);
                Some(rescaled)
            }
        }
    } else {
        Some(sys.clone())
    };
    if let Some(w) = &working {
        let good: Vec<_> = pts.iter().filter(|x| classify(w, x, &domain).in_omega00).cloned().collect();
        if good.is_empty() {
            notes.push("no sample point lies in Omega_00: the chart identities are not checked".into());
        } else {
            let ids = identity_residuals(w, &good);
            checks.push(ids.reciprocal_nu);
            checks.extend(ids.chart);
        }
    }
    let head = &pts[..pts.len().min(args.axiom_samples)];
    let axioms = check_bracket_axioms(&sys, head, args.sampling.seed);
    checks.extend(axioms.reports().into_iter().cloned());

    for r in &checks {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        eprintln!("{tag} {}: max {:.3e} (tol {:e}, {} points)", r.check, r.max_residual, r.tolerance, r.evaluated);
    }
    for note in &notes {
        eprintln!("note: {note}");
    }
    let admissible = admissibility.as_ref().is_none_or(|a| a.admissible);
    let pass = admissible && checks.iter().all(|r| r.passed);
    let report = VerifyReport {
        command: "verify",
        system: sys.name(),
        system_hash: system_hash(&sys),
        seed: args.sampling.seed,
        samples_requested: region.count(),
        samples_used: pts.len(),
        lower: region.lower(),
        upper: region.upper(),
        constant_nu,
        tolerances: CheckTolerances {
            nu_zero: NU_ZERO_TOLERANCE,
            conservation: CONSERVATION_TOLERANCE,
            realization: REALIZATION_TOLERANCE,
            divergence_free: DIVERGENCE_FREE_TOLERANCE,
            identities: integrable::linearize::IDENTITY_TOLERANCE,
            antisymmetry: ANTISYMMETRY_TOLERANCE,
            leibniz: LEIBNIZ_TOLERANCE,
            casimir: CASIMIR_TOLERANCE,
            jacobi: JACOBI_TOLERANCE,
            hamiltonian_conservation: HAMILTONIAN_CONSERVATION_TOLERANCE,
            domain,
        },
        checks,
        admissibility,
        notes,
        pass,
    };
    emit_json(args.out.as_deref(), &report)?;
    if pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
        let mut what = failed.join(", ");
        if !admissible {
            what = if what.is_empty() { "mu admissibility".into() } else { format!("{what}, mu admissibility") };
        }
        Err(Failure::Check(format!("verification failed: {what}")))
    }
}

fn termination_failure(t: &Termination) -> Outcome {
    match t {
        Termination::Completed => Ok(()),
        other => Err(Failure::Check(format!("integration stopped early: {other:?}"))),
    }
}

pub fn integrate_cmd(args: &IntegrateArgs) -> Outcome {
    let sys = load(&args.source)?;
    let x0 = point(&sys, &args.integration.x0.0)?;
    let cfg = integrator(&args.integration)?;
    let (traj, working) = if args.rescale {
        (integrate_rescaled(&sys, &x0, &cfg)?, sys.rescaled()?)
    } else {
        (integrate(&sys, &x0, &cfg)?, sys.clone())
    };
    let chart_rows: Option<Vec<Vec<f64>>> = args.chart.then(|| {
        traj.samples
            .iter()
            .map(|s| chart(&working, &s.x).unwrap_or_else(|_| vec![f64::NAN; working.dimension()]))
            .collect()
    });
    let mut csv = Vec::new();
    traj.write_csv(&mut csv, chart_rows.as_deref()).map_err(input)?;
    emit(args.out.as_deref(), &csv)?;
    let method = match cfg.method {
        Method::Rk4 => "rk4",
        Method::Rk45 => "rk45",
    };
    eprintln!(
        "{}: {} samples ({method}, {} rejected steps), system hash {}",
        traj.system,
        traj.samples.len(),
        traj.rejected_steps,
        system_hash(&sys)
    );
    termination_failure(&traj.termination)
}

#[derive(Serialize)]
struct CertificateReport<'a> {
    #[serde(flatten)]
    certificate: CertificateSummary<'a>,
    system_hash: String,
    seed: u64,
    rescaled: bool,
    method: Method,
    rtol: f64,
    atol: f64,
    step: Option<f64>,
    samples: usize,
    termination: &'a Termination,
    initial_chart: &'a [f64],
    admissibility: Option<&'a AdmissibilityReport>,
}

pub fn linearize(args: &LinearizeArgs) -> Outcome {
    let sys = load(&args.source)?;
    let x0 = point(&sys, &args.integration.x0.0)?;
    let cfg = integrator(&args.integration)?;
    let opts = CertifyOptions {
        tolerances: tolerances(&args.tolerances)?,
        admissibility_box: sample_box(sys.dimension(), &args.sampling)?,
    };
    let cert = certify_linearization(&sys, &x0, &cfg, &opts)?;
    let report = CertificateReport {
        certificate: cert.summary(),
        system_hash: system_hash(&sys),
        seed: args.sampling.seed,
        rescaled: cert.rescaled,
        method: cfg.method,
        rtol: cfg.rtol,
        atol: cfg.atol,
        step: cfg.step.is_finite().then_some(cfg.step),
        samples: cert.samples.len(),
        termination: &cert.termination,
        initial_chart: &cert.initial_chart,
        admissibility: cert.admissibility.as_ref(),
    };
    emit_json(args.out.as_deref(), &report)?;
    eprintln!(
        "{}: max defect {:.3e} over {} samples ({} excluded), tolerance {:e}",
        cert.system,
        cert.max_defect,
        cert.samples.len(),
        cert.excluded_samples,
        cert.tolerances.defect
    );
    termination_failure(&cert.termination)?;
    if cert.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("max defect {:e} exceeds {:e}", cert.max_defect, cert.tolerances.defect)))
    }
}

#[derive(Serialize)]
struct ClassifyReport<'a> {
    system: &'a str,
    system_hash: String,
    x0: &'a [f64],
    #[serde(flatten)]
    verdict: DomainVerdict,
}

pub fn classify_cmd(args: &ClassifyArgs) -> Outcome {
    let sys = load(&args.source)?;
    let x0 = point(&sys, &args.x0.0)?;
    let working = if args.rescale { sys.rescaled()? } else { sys.clone() };
    let verdict = classify(&working, &x0, &tolerances(&args.tolerances)?);
    emit_json(
        args.out.as_deref(),
        &ClassifyReport { system: working.name(), system_hash: system_hash(&sys), x0: &x0, verdict },
    )
}

#[derive(Serialize)]
struct BracketReport<'a> {
    system: &'a str,
    system_hash: String,
    x0: &'a [f64],
    f: String,
    g: String,
    value: f64,
}

pub fn bracket_cmd(args: &BracketArgs) -> Outcome {
    let sys = load(&args.source)?;
    let x0 = point(&sys, &args.x0.0)?;
    let params = Arc::new(sys.parameters().clone());
    let field = |label: &str, src: &str| -> Result<ScalarField, Failure> {
        let e = Expression::parse_with(src, sys.dimension(), &params).map_err(|e| input(format!("--{label}: {e}")))?;
        Ok(ScalarField::from_expression(e, params.clone()))
    };
    let f = field("f", &args.f)?;
    let g = match &args.g {
        Some(src) => field("g", src)?,
        None => sys.hamiltonian().clone(),
    };
    let value = BracketContext::of_system(&sys)
        .bracket(&f, &g, &x0)
        .map_err(|e| Failure::Check(format!("bracket is not defined at x0: {e}")))?
        + 0.0; // no negative zero in the output
    println!("{}", fmt17(value));
    if let Some(path) = &args.out {
        let text = |s: &ScalarField| s.expression().map(|e| e.to_string()).unwrap_or_default();
        emit_json(
            Some(path),
            &BracketReport {
                system: sys.name(),
                system_hash: system_hash(&sys),
                x0: &x0,
                f: text(&f),
                g: text(&g),
                value,
            },
        )?;
    }
    Ok(())
}
