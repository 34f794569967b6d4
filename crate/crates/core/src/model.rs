//! Integrable-system descriptions: JSON ingestion, validation, the two
//! built-in systems, and seeded point sampling.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{ScalarField, VectorField};
use crate::expr::{Expression, Parameters, ParseError};
use crate::report::{ResidualAccumulator, VerificationReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid system document: {0}")]
    Schema(String),
    #[error("parse error in `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("expected {expected} {what}, found {found}")]
    Count { what: &'static str, expected: usize, found: usize },
    #[error("dimension must be at least 3, got {0}")]
    Dimension(usize),
    #[error("inertia component {0} must be nonzero")]
    ZeroInertia(&'static str),
    #[error("system `{0}` has no time rescaling mu")]
    MissingMu(String),
    #[error("`{0}` has no expression body")]
    Opaque(String),
    #[error("unknown built-in system `{0}` (expected lotka-volterra or euler)")]
    UnknownBuiltin(String),
    #[error("invalid sample box: {0}")]
    SampleBox(String),
}

/// The on-disk JSON form of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub equations: Vec<String>,
    pub casimirs: Vec<String>,
    pub hamiltonian: String,
    pub nu: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
}

/// `ẋ = X(x)` with Casimirs `C₁..C_{n−2}`, Hamiltonian `H`, rescaling `ν`
/// and an optional time rescaling `μ`.
#[derive(Debug, Clone)]
pub struct IntegrableSystem {
    name: String,
    field: VectorField,
    casimirs: Vec<ScalarField>,
    hamiltonian: ScalarField,
    nu: ScalarField,
    mu: Option<ScalarField>,
    parameters: Arc<Parameters>,
    warnings: Vec<String>,
}

impl IntegrableSystem {
    pub fn new(
        name: impl Into<String>,
        field: VectorField,
        casimirs: Vec<ScalarField>,
        hamiltonian: ScalarField,
        nu: ScalarField,
        mu: Option<ScalarField>,
        parameters: Arc<Parameters>,
    ) -> Result<Self, ModelError> {
        let n = field.dimension();
        if n < 3 {
            return Err(ModelError::Dimension(n));
        }
        if casimirs.len() != n - 2 {
            return Err(ModelError::Count { what: "casimirs", expected: n - 2, found: casimirs.len() });
        }
        let scalars = casimirs.iter().chain([&hamiltonian, &nu]).chain(mu.as_ref());
        if let Some(bad) = scalars.map(ScalarField::dimension).find(|&d| d != n) {
            return Err(ModelError::Count { what: "coordinates in a conserved quantity", expected: n, found: bad });
        }
        Ok(IntegrableSystem {
            name: name.into(),
            field,
            casimirs,
            hamiltonian,
            nu,
            mu,
            parameters,
            warnings: Vec::new(),
        })
    }

    pub fn from_document(doc: &SystemDocument) -> Result<Self, ModelError> {
        let n = doc.n;
        if n < 3 {
            return Err(ModelError::Dimension(n));
        }
        if doc.equations.len() != n {
            return Err(ModelError::Count { what: "equations", expected: n, found: doc.equations.len() });
        }
        if doc.casimirs.len() != n - 2 {
            return Err(ModelError::Count { what: "casimirs", expected: n - 2, found: doc.casimirs.len() });
        }
        for (name, value) in &doc.parameters {
            validate_parameter_name(name)?;
            if !value.is_finite() {
                return Err(ModelError::Schema(format!("parameter `{name}` is not finite")));
            }
        }
        let params = Arc::new(doc.parameters.clone());
        let parse = |field: String, src: &str| -> Result<ScalarField, ModelError> {
            Expression::parse_with(src, n, &params)
                .map(|e| ScalarField::from_expression(e, params.clone()))
                .map_err(|source| ModelError::Parse { field, source })
        };
        let components = doc
            .equations
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("equations[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let casimirs = doc
            .casimirs
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("casimirs[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let hamiltonian = parse("hamiltonian".into(), &doc.hamiltonian)?;
        let nu = parse("nu".into(), &doc.nu)?;
        let mu = doc.mu.as_deref().map(|s| parse("mu".into(), s)).transpose()?;
        let field = VectorField::new(components).map_err(|e| ModelError::Schema(e.to_string()))?;
        IntegrableSystem::new(doc.name.clone(), field, casimirs, hamiltonian, nu, mu, params)
    }

    pub fn to_document(&self) -> Result<SystemDocument, ModelError> {
        let text = |label: &str, f: &ScalarField| {
            f.expression().map(|e| e.to_string()).ok_or_else(|| ModelError::Opaque(label.to_string()))
        };
        Ok(SystemDocument {
            name: self.name.clone(),
            n: self.dimension(),
            parameters: (*self.parameters).clone(),
            equations: self
                .field
                .components()
                .iter()
                .enumerate()
                .map(|(i, f)| text(&format!("equations[{i}]"), f))
                .collect::<Result<_, _>>()?,
            casimirs: self
                .casimirs
                .iter()
                .enumerate()
                .map(|(i, f)| text(&format!("casimirs[{i}]"), f))
                .collect::<Result<_, _>>()?,
            hamiltonian: text("hamiltonian", &self.hamiltonian)?,
            nu: text("nu", &self.nu)?,
            mu: self.mu.as_ref().map(|m| text("mu", m)).transpose()?,
        })
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = self.to_document()?;
        serde_json::to_string_pretty(&doc).map_err(|e| ModelError::Schema(e.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.field.dimension()
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn casimirs(&self) -> &[ScalarField] {
        &self.casimirs
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.hamiltonian
    }

    pub fn nu(&self) -> &ScalarField {
        &self.nu
    }

    pub fn mu(&self) -> Option<&ScalarField> {
        self.mu.as_ref()
    }

    pub fn parameters(&self) -> &Parameters {
        &self.parameters
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `C₁, …, C_{n−2}, H` in order.
    pub fn conserved_quantities(&self) -> impl Iterator<Item = &ScalarField> {
        self.casimirs.iter().chain(std::iter::once(&self.hamiltonian))
    }

    /// Replaces the vector field, keeping everything else.
    pub fn with_field(&self, field: VectorField) -> Result<Self, ModelError> {
        if field.dimension() != self.dimension() {
            return Err(ModelError::Count { what: "equations", expected: self.dimension(), found: field.dimension() });
        }
        Ok(IntegrableSystem { field, ..self.clone() })
    }

    pub fn with_mu(&self, mu: Option<ScalarField>) -> Self {
        IntegrableSystem { mu, ..self.clone() }
    }

    /// The system after the time change `dt = μ dt′`: field `μ·X`, rescaling
    /// `ν·μ`, same Casimirs and Hamiltonian.
    pub fn rescaled(&self) -> Result<Self, ModelError> {
        let mu = self.mu.as_ref().ok_or_else(|| ModelError::MissingMu(self.name.clone()))?;
        Ok(IntegrableSystem {
            name: format!("{} (time-rescaled)", self.name),
            field: self.field.scaled_by(mu),
            nu: self.nu.mul(mu),
            mu: None,
            ..self.clone()
        })
    }
}

fn validate_parameter_name(name: &str) -> Result<(), ModelError> {
    let mut chars = name.chars();
    let well_formed = chars.next().is_some_and(|c| c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric());
    if !well_formed {
        return Err(ModelError::Schema(format!("parameter name `{name}` is not an identifier")));
    }
    if crate::expr::is_variable_name(name) {
        return Err(ModelError::Schema(format!("parameter name `{name}` collides with a coordinate")));
    }
    Ok(())
}

pub fn load_system(document: &str) -> Result<IntegrableSystem, ModelError> {
    let doc: SystemDocument = serde_json::from_str(document).map_err(|e| ModelError::Schema(e.to_string()))?;
    IntegrableSystem::from_document(&doc)
}

pub fn lotka_volterra_document() -> SystemDocument {
    SystemDocument {
        name: "lotka-volterra".into(),
        n: 3,
        parameters: BTreeMap::new(),
        equations: vec!["x1*(x2 + x3)".into(), "x2*(-x1 + x3)".into(), "x3*(-x1 - x2)".into()],
        casimirs: vec!["x2*(x1 + x2 + x3)/(x1*x3)".into()],
        hamiltonian: "x1 + x2 + x3".into(),
        nu: "-(x1^2*x3^2)/(x1 + x2 + x3)".into(),
        mu: None,
    }
}

pub fn euler_document(i1: f64, i2: f64, i3: f64) -> SystemDocument {
    SystemDocument {
        name: "euler".into(),
        n: 3,
        parameters: [("I1", i1), ("I2", i2), ("I3", i3)].into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        equations: vec![
            "(I2 - I3)/(I2*I3)*x2*x3".into(),
            "(I3 - I1)/(I1*I3)*x1*x3".into(),
            "(I1 - I2)/(I1*I2)*x1*x2".into(),
        ],
        casimirs: vec!["(x1^2 + x2^2 + x3^2)/2".into()],
        hamiltonian: "(x1^2/I1 + x2^2/I2 + x3^2/I3)/2".into(),
        nu: "-1".into(),
        mu: Some("x1".into()),
    }
}

/// The three-species Lotka-Volterra system with its rational realization.
pub fn builtin_lotka_volterra() -> IntegrableSystem {
    IntegrableSystem::from_document(&lotka_volterra_document()).expect("built-in document is valid")
}

/// Free rigid body with principal moments `I₁, I₂, I₃`, constant `ν = −1`
/// and the time rescaling `μ = x₁` preset.
pub fn builtin_euler(i1: f64, i2: f64, i3: f64) -> Result<IntegrableSystem, ModelError> {
    for (label, v) in [("I1", i1), ("I2", i2), ("I3", i3)] {
        if v == 0.0 || !v.is_finite() {
            return Err(ModelError::ZeroInertia(label));
        }
    }
    let mut sys = IntegrableSystem::from_document(&euler_document(i1, i2, i3))?;
    if i2 == i3 {
        sys.warnings.push("I2 = I3: div(mu*X) vanishes identically, mu = x1 is not admissible".into());
    }
    Ok(sys)
}

/// Looks a built-in up by name. Euler reads `I1`, `I2`, `I3` from
/// `params`, defaulting to (1, 2, 3).
pub fn builtin(name: &str, params: &Parameters) -> Result<IntegrableSystem, ModelError> {
    match name {
        "lotka-volterra" | "lv" => {
            if let Some(k) = params.keys().next() {
                return Err(ModelError::Schema(format!("lotka-volterra takes no parameters (got `{k}`)")));
            }
            Ok(builtin_lotka_volterra())
        }
        "euler" | "rigid-body" => {
            if let Some(k) = params.keys().find(|k| !matches!(k.as_str(), "I1" | "I2" | "I3")) {
                return Err(ModelError::Schema(format!("unknown euler parameter `{k}`")));
            }
            let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
            builtin_euler(get("I1", 1.0), get("I2", 2.0), get("I3", 3.0))
        }
        other => Err(ModelError::UnknownBuiltin(other.to_string())),
    }
}

/// An axis-aligned box with a seeded uniform sampler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    count: usize,
    seed: u64,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, count: usize, seed: u64) -> Result<Self, ModelError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(ModelError::SampleBox("bounds must be nonempty and of equal length".into()));
        }
        if let Some(i) =
            (0..lower.len()).find(|&i| lower[i] >= upper[i] || !lower[i].is_finite() || !upper[i].is_finite())
        {
            return Err(ModelError::SampleBox(format!("axis {} needs finite lower < upper", i + 1)));
        }
        if count == 0 {
            return Err(ModelError::SampleBox("count must be at least 1".into()));
        }
        Ok(SampleBox { lower, upper, count, seed })
    }

    pub fn cube(n: usize, lo: f64, hi: f64, count: usize, seed: u64) -> Result<Self, ModelError> {
        SampleBox::new(vec![lo; n], vec![hi; n], count, seed)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_count(&self, count: usize) -> Self {
        SampleBox { count: count.max(1), ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SampleBox { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub points: Vec<Vec<f64>>,
    pub rejected: usize,
}

/// Candidate draws per requested point before giving up.
const MAX_DRAWS_PER_POINT: usize = 20;

/// Draws uniform points from the box until `count` satisfy `predicate` or
/// the draw budget runs out. Deterministic in the box seed.
pub fn sample_points(region: &SampleBox, predicate: impl Fn(&[f64]) -> bool) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(region.seed);
    let mut points = Vec::with_capacity(region.count);
    let mut rejected = 0;
    let budget = region.count.saturating_mul(MAX_DRAWS_PER_POINT);
    for _ in 0..budget {
        if points.len() == region.count {
            break;
        }
        let x: Vec<f64> = region.lower.iter().zip(&region.upper).map(|(&lo, &hi)| rng.random_range(lo..hi)).collect();
        if predicate(&x) {
            points.push(x);
        } else {
            rejected += 1;
        }
    }
    Samples { points, rejected }
}

/// `|⟨∇C, X⟩|` for each conserved quantity, absolute.
pub fn verify_conservation(sys: &IntegrableSystem, pts: &[Vec<f64>], tolerance: f64) -> Vec<VerificationReport> {
    let labels =
        (1..=sys.casimirs().len()).map(|k| format!("conservation of C{k}")).chain(["conservation of H".to_string()]);
    sys.conserved_quantities()
        .zip(labels)
        .map(|(c, label)| {
            let mut acc = ResidualAccumulator::new(label, tolerance);
            for x in pts {
                match (c.gradient(x), sys.field().eval(x)) {
                    (Ok(g), Ok(v)) => acc.push(dot(&g, &v).abs(), x),
                    _ => acc.skip(),
                }
            }
            acc.finish()
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lotka_volterra_values() {
        let lv = builtin_lotka_volterra();
        let x = [1.0, 1.0, 2.0];
        // x3(-x1 - x2) = 2·(-2)
        assert_eq!(lv.field().eval(&x).unwrap(), vec![3.0, 1.0, -4.0]);
        assert_eq!(lv.casimirs()[0].eval(&x).unwrap(), 2.0);
        assert_eq!(lv.hamiltonian().eval(&x).unwrap(), 4.0);
        assert_eq!(lv.nu().eval(&x).unwrap(), -1.0);
        assert!(lv.mu().is_none());
    }

    #[test]
    fn euler_values() {
        let e = builtin_euler(1.0, 2.0, 3.0).unwrap();
        let x = [1.0, 1.0, 1.0];
        let v = e.field().eval(&x).unwrap();
        for (got, want) in v.iter().zip([-1.0 / 6.0, 2.0 / 3.0, -0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(e.nu().eval(&[0.3, -5.0, 2.0]).unwrap(), -1.0);
        assert!((e.hamiltonian().eval(&x).unwrap() - 11.0 / 12.0).abs() < 1e-15);
        assert!(e.warnings().is_empty());
        assert_eq!(e.mu().unwrap().eval(&[0.25, 1.0, 1.0]).unwrap(), 0.25);
    }

    #[test]
    fn euler_rejects_zero_inertia_and_flags_symmetric_top() {
        assert!(matches!(builtin_euler(0.0, 2.0, 3.0), Err(ModelError::ZeroInertia("I1"))));
        let sym = builtin_euler(1.0, 2.0, 2.0).unwrap();
        assert_eq!(sym.warnings().len(), 1);
    }

    #[test]
    fn wrong_casimir_count() {
        let mut doc = lotka_volterra_document();
        doc.casimirs.push("x1".into());
        let err = IntegrableSystem::from_document(&doc).unwrap_err();
        assert!(matches!(err, ModelError::Count { what: "casimirs", expected: 1, found: 2 }));
    }

    #[test]
    fn parse_errors_carry_field_path() {
        let mut doc = lotka_volterra_document();
        doc.equations[1] = "x2*(x1 + x4)".into();
        match IntegrableSystem::from_document(&doc).unwrap_err() {
            ModelError::Parse { field, .. } => assert_eq!(field, "equations[1]"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(load_system("{}"), Err(ModelError::Schema(_))));
        assert!(matches!(load_system("not json"), Err(ModelError::Schema(_))));
        let mut doc = euler_document(1.0, 2.0, 3.0);
        doc.parameters.insert("x7".into(), 1.0);
        assert!(matches!(IntegrableSystem::from_document(&doc), Err(ModelError::Schema(_))));
        let text = r#"{"name":"a","n":3,"equations":["x1","x2","x3"],"casimirs":["x1"],"hamiltonian":"x2","nu":"1","extra":1}"#;
        assert!(matches!(load_system(text), Err(ModelError::Schema(_))));
        let planar = r#"{"name":"a","n":2,"equations":["x1","x2"],"casimirs":[],"hamiltonian":"x2","nu":"1"}"#;
        assert!(matches!(load_system(planar), Err(ModelError::Dimension(2))));
    }

    #[test]
    fn load_euler_document_text() {
        let text = r#"{
            "name": "euler", "n": 3,
            "parameters": {"I1": 1, "I2": 2, "I3": 3},
            "equations": ["(I2-I3)/(I2*I3)*x2*x3", "(I3-I1)/(I1*I3)*x1*x3", "(I1-I2)/(I1*I2)*x1*x2"],
            "casimirs": ["(x1^2+x2^2+x3^2)/2"],
            "hamiltonian": "(x1^2/I1+x2^2/I2+x3^2/I3)/2",
            "nu": "-1",
            "mu": "x1"
        }"#;
        let sys = load_system(text).unwrap();
        assert_eq!(sys.dimension(), 3);
        assert!(sys.mu().is_some());
        assert_eq!(sys.parameters()["I2"], 2.0);
    }

    #[test]
    fn document_round_trip() {
        for sys in [builtin_lotka_volterra(), builtin_euler(1.0, 2.0, 3.0).unwrap()] {
            let text = sys.to_json().unwrap();
            let again = load_system(&text).unwrap();
            assert_eq!(sys.to_document().unwrap(), again.to_document().unwrap());
            let x = [0.7, -1.2, 1.9];
            assert_eq!(sys.field().eval(&x).unwrap(), again.field().eval(&x).unwrap());
        }
    }

    #[test]
    fn rescaled_euler_field() {
        let e = builtin_euler(1.0, 2.0, 3.0).unwrap().rescaled().unwrap();
        let v = e.field().eval(&[1.0, 1.0, 1.0]).unwrap();
        for (got, want) in v.iter().zip([-1.0 / 6.0, 2.0 / 3.0, -0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(e.nu().eval(&[2.0, 1.0, 1.0]).unwrap(), -2.0);
        assert!(e.mu().is_none());
        assert!(matches!(e.rescaled(), Err(ModelError::MissingMu(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let b = SampleBox::cube(3, -2.0, 2.0, 10, 42).unwrap();
        let a = sample_points(&b, |_| true);
        assert_eq!(a.points.len(), 10);
        assert_eq!(a.rejected, 0);
        assert_eq!(a, sample_points(&b, |_| true));
        assert_ne!(a, sample_points(&b.with_seed(43), |_| true));
        assert!(a.points.iter().flatten().all(|v| (-2.0..2.0).contains(v)));
    }

    #[test]
    fn sampling_filters() {
        let b = SampleBox::cube(3, -2.0, 2.0, 200, 7).unwrap();
        let s = sample_points(&b, |x| (x[0] - x[2]).abs() > 0.5);
        assert!(s.rejected > 0);
        assert!(s.points.iter().all(|x| (x[0] - x[2]).abs() > 0.5));
        let none = sample_points(&b, |_| false);
        assert!(none.points.is_empty());
        assert_eq!(none.rejected, 200 * MAX_DRAWS_PER_POINT);
    }

    #[test]
    fn invalid_boxes() {
        assert!(SampleBox::cube(3, 1.0, 1.0, 5, 0).is_err());
        assert!(SampleBox::cube(3, -1.0, 1.0, 0, 0).is_err());
        assert!(SampleBox::new(vec![0.0], vec![1.0, 2.0], 1, 0).is_err());
    }

    #[test]
    fn builtin_lookup() {
        assert_eq!(builtin("lotka-volterra", &Parameters::new()).unwrap().name(), "lotka-volterra");
        let mut p = Parameters::new();
        p.insert("I3".into(), 5.0);
        assert_eq!(builtin("euler", &p).unwrap().parameters()["I3"], 5.0);
        p.insert("J".into(), 1.0);
        assert!(builtin("euler", &p).is_err());
        assert!(matches!(builtin("henon", &Parameters::new()), Err(ModelError::UnknownBuiltin(_))));
    }
}
