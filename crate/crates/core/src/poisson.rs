//! The rescaled Flaschka-Ratiu bracket
//! `{f,g} = ν · ∂(C₁,…,C_{n−2},f,g)/∂(x₁,…,xₙ)` and the checks built on it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{determinant, GradientMode, ScalarField, StepRule};
use crate::expr::{EvalError, Expression, Node};
use crate::model::{dot, IntegrableSystem, ModelError};
use crate::report::{relative_difference, ResidualAccumulator, VerificationReport};

/// `|ν(x)| ≤ NU_ZERO_TOLERANCE · (1 + |x|²)` counts as the zero set of ν.
pub const NU_ZERO_TOLERANCE: f64 = 1e-9;

pub const REALIZATION_TOLERANCE: f64 = 1e-8;
pub const DIVERGENCE_FREE_TOLERANCE: f64 = 1e-6;
pub const ANTISYMMETRY_TOLERANCE: f64 = 1e-12;
pub const LEIBNIZ_TOLERANCE: f64 = 1e-8;
pub const CASIMIR_TOLERANCE: f64 = 1e-10;
pub const JACOBI_TOLERANCE: f64 = 1e-4;
pub const HAMILTONIAN_CONSERVATION_TOLERANCE: f64 = 1e-10;

pub fn norm_squared(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn near_nu_zero(nu: f64, x: &[f64]) -> bool {
    nu.abs() <= NU_ZERO_TOLERANCE * (1.0 + norm_squared(x))
}

/// ν evaluates at `x` and is clear of its zero set.
pub fn nu_regular(sys: &IntegrableSystem, x: &[f64]) -> bool {
    sys.nu().eval(x).is_ok_and(|nu| !near_nu_zero(nu, x))
}

/// The Casimirs and rescaling that define a bracket.
#[derive(Debug, Clone)]
pub struct BracketContext {
    casimirs: Vec<ScalarField>,
    nu: ScalarField,
}

impl BracketContext {
    pub fn new(casimirs: Vec<ScalarField>, nu: ScalarField) -> Result<Self, ModelError> {
        let n = nu.dimension();
        if n < 3 {
            return Err(ModelError::Dimension(n));
        }
        if casimirs.len() != n - 2 {
            return Err(ModelError::Count { what: "casimirs", expected: n - 2, found: casimirs.len() });
        }
        Ok(BracketContext { casimirs, nu })
    }

    pub fn of_system(sys: &IntegrableSystem) -> Self {
        BracketContext { casimirs: sys.casimirs().to_vec(), nu: sys.nu().clone() }
    }

    pub fn dimension(&self) -> usize {
        self.nu.dimension()
    }

    pub fn casimirs(&self) -> &[ScalarField] {
        &self.casimirs
    }

    fn casimir_rows(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        self.casimirs.iter().map(|c| c.gradient(x)).collect()
    }

    pub fn bracket(&self, f: &ScalarField, g: &ScalarField, x: &[f64]) -> Result<f64, EvalError> {
        let nu = self.nu.eval(x)?;
        let mut rows = self.casimir_rows(x)?;
        rows.push(f.gradient(x)?);
        rows.push(g.gradient(x)?);
        Ok(nu * determinant(rows))
    }

    /// Component `i` is `{xᵢ, H}`.
    pub fn hamiltonian_vector_field(&self, hamiltonian: &ScalarField, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let n = self.dimension();
        let nu = self.nu.eval(x)?;
        let casimir_rows = self.casimir_rows(x)?;
        let grad_h = hamiltonian.gradient(x)?;
        Ok((0..n)
            .map(|i| {
                let mut rows = casimir_rows.clone();
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                rows.push(e);
                rows.push(grad_h.clone());
                nu * determinant(rows)
            })
            .collect())
    }

    /// `x ↦ {f,g}(x)` as a field, differentiated by central differences of
    /// the exact inner gradients.
    pub fn bracket_field(&self, f: &ScalarField, g: &ScalarField) -> ScalarField {
        let (ctx, f, g) = (self.clone(), f.clone(), g.clone());
        ScalarField::opaque(self.dimension(), move |x| ctx.bracket(&f, &g, x))
            .with_mode(GradientMode::CentralDifference(StepRule::SqrtEps))
    }
}

/// Per point, `maxᵢ |Xᵢ − ν·∂(C₁,…,xᵢ,H)/∂x| / (1 + |Xᵢ|)`.
pub fn verify_realization(sys: &IntegrableSystem, pts: &[Vec<f64>]) -> VerificationReport {
    let ctx = BracketContext::of_system(sys);
    let mut acc = ResidualAccumulator::new("realization", REALIZATION_TOLERANCE);
    for x in pts {
        if !nu_regular(sys, x) {
            acc.skip();
            continue;
        }
        match (sys.field().eval(x), ctx.hamiltonian_vector_field(sys.hamiltonian(), x)) {
            (Ok(field), Ok(constructed)) => {
                let r =
                    field.iter().zip(&constructed).map(|(a, b)| (a - b).abs() / (1.0 + a.abs())).fold(0.0, f64::max);
                acc.push(r, x);
            }
            _ => acc.skip(),
        }
    }
    acc.finish()
}

/// `|div((1/ν)·X)|` with the rescaled field formed componentwise as `Xᵢ/ν`.
pub fn verify_divergence_free(sys: &IntegrableSystem, pts: &[Vec<f64>]) -> VerificationReport {
    let rescaled = sys.field().divided_by(sys.nu());
    let mut acc = ResidualAccumulator::new("divergence of X/nu", DIVERGENCE_FREE_TOLERANCE);
    for x in pts {
        if !nu_regular(sys, x) {
            acc.skip();
            continue;
        }
        match rescaled.divergence(x) {
            Ok(d) => acc.push(d.abs(), x),
            Err(_) => acc.skip(),
        }
    }
    acc.finish()
}

/// A random quadratic polynomial in `n` variables, coefficients in [−1, 1].
pub fn random_quadratic(n: usize, rng: &mut impl Rng) -> ScalarField {
    let mut coeff = || Node::Const(rng.random_range(-1.0..1.0));
    let mut terms = vec![coeff()];
    for i in 0..n {
        terms.push(Node::Mul(Box::new(coeff()), Box::new(Node::Var(i))));
        for j in i..n {
            let monomial = Node::Mul(Box::new(Node::Var(i)), Box::new(Node::Var(j)));
            terms.push(Node::Mul(Box::new(coeff()), Box::new(monomial)));
        }
    }
    let sum = terms.into_iter().reduce(|a, b| Node::Add(Box::new(a), Box::new(b))).expect("nonempty");
    ScalarField::from_expression(Expression::from_node(sum, n), Arc::default())
}

pub fn random_test_functions(n: usize, count: usize, seed: u64) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_quadratic(n, &mut rng)).collect()
}

/// Bracket identities checked pointwise over a sample.
#[derive(Debug, Clone, Serialize)]
pub struct BracketAxioms {
    pub antisymmetry: VerificationReport,
    pub leibniz: VerificationReport,
    pub casimir: VerificationReport,
    pub jacobi: VerificationReport,
    pub hamiltonian_conservation: VerificationReport,
}

impl BracketAxioms {
    pub fn reports(&self) -> [&VerificationReport; 5] {
        [&self.antisymmetry, &self.leibniz, &self.casimir, &self.jacobi, &self.hamiltonian_conservation]
    }

    pub fn passed(&self) -> bool {
        self.reports().iter().all(|r| r.passed)
    }
}

/// Number of random test functions drawn for the axiom checks.
pub const TEST_FUNCTION_COUNT: usize = 20;

/// Checks antisymmetry, Leibniz, Casimir annihilation, Jacobi and
/// conservation of `H` at each point, with random quadratic test functions.
///
/// Normalizations: antisymmetry and Leibniz are relative to the larger side;
/// Casimir annihilation to `1 + |ν|·Π‖rows‖` (Hadamard's bound); Jacobi and
/// `⟨∇H, X_H⟩` to one plus the sum of the magnitudes of their terms.
pub fn check_bracket_axioms(sys: &IntegrableSystem, pts: &[Vec<f64>], seed: u64) -> BracketAxioms {
    let n = sys.dimension();
    let ctx = BracketContext::of_system(sys);
    let fns = random_test_functions(n, TEST_FUNCTION_COUNT, seed);
    let mut anti = ResidualAccumulator::new("antisymmetry", ANTISYMMETRY_TOLERANCE);
    let mut leibniz = ResidualAccumulator::new("leibniz", LEIBNIZ_TOLERANCE);
    let mut casimir = ResidualAccumulator::new("casimir annihilation", CASIMIR_TOLERANCE);
    let mut jacobi = ResidualAccumulator::new("jacobi", JACOBI_TOLERANCE);
    let mut conservation = ResidualAccumulator::new("conservation of H under X_H", HAMILTONIAN_CONSERVATION_TOLERANCE);

    for (k, x) in pts.iter().enumerate() {
        let f = &fns[k % fns.len()];
        let g = &fns[(k + 1) % fns.len()];
        let h = &fns[(k + 2) % fns.len()];
        if !nu_regular(sys, x) {
            for acc in [&mut anti, &mut leibniz, &mut casimir, &mut jacobi, &mut conservation] {
                acc.skip();
            }
            continue;
        }

        match (ctx.bracket(f, g, x), ctx.bracket(g, f, x)) {
            (Ok(a), Ok(b)) => anti.push(relative_difference(a, -b), x),
            _ => anti.skip(),
        }

        let fg = f.mul(g);
        let terms = (|| -> Result<_, EvalError> {
            let lhs = ctx.bracket(&fg, h, x)?;
            let t1 = f.eval(x)? * ctx.bracket(g, h, x)?;
            let t2 = g.eval(x)? * ctx.bracket(f, h, x)?;
            Ok((lhs, t1, t2))
        })();
        match terms {
            Ok((lhs, t1, t2)) => {
                let scale = lhs.abs().max(t1.abs() + t2.abs());
                let r = if scale == 0.0 { 0.0 } else { (lhs - t1 - t2).abs() / scale };
                leibniz.push(r, x);
            }
            Err(_) => leibniz.skip(),
        }

        match casimir_residual(&ctx, sys, &fns, x) {
            Ok(r) => casimir.push(r, x),
            Err(_) => casimir.skip(),
        }

        let cyclic = (|| -> Result<_, EvalError> {
            let a = ctx.bracket(f, &ctx.bracket_field(g, h), x)?;
            let b = ctx.bracket(g, &ctx.bracket_field(h, f), x)?;
            let c = ctx.bracket(h, &ctx.bracket_field(f, g), x)?;
            Ok((a + b + c).abs() / (1.0 + a.abs() + b.abs() + c.abs()))
        })();
        match cyclic {
            Ok(r) => jacobi.push(r, x),
            Err(_) => jacobi.skip(),
        }

        let flow = (|| -> Result<_, EvalError> {
            let grad_h = sys.hamiltonian().gradient(x)?;
            let xh = ctx.hamiltonian_vector_field(sys.hamiltonian(), x)?;
            let scale: f64 = grad_h.iter().zip(&xh).map(|(a, b)| (a * b).abs()).sum();
            Ok(dot(&grad_h, &xh).abs() / (1.0 + scale))
        })();
        match flow {
            Ok(r) => conservation.push(r, x),
            Err(_) => conservation.skip(),
        }
    }

    BracketAxioms {
        antisymmetry: anti.finish(),
        leibniz: leibniz.finish(),
        casimir: casimir.finish(),
        jacobi: jacobi.finish(),
        hamiltonian_conservation: conservation.finish(),
    }
}

fn casimir_residual(
    ctx: &BracketContext,
    sys: &IntegrableSystem,
    fns: &[ScalarField],
    x: &[f64],
) -> Result<f64, EvalError> {
    let nu = sys.nu().eval(x)?;
    let casimir_norms =
        ctx.casimirs().iter().map(|c| c.gradient(x).map(|g| norm_squared(&g).sqrt())).collect::<Result<Vec<_>, _>>()?;
    let mut worst: f64 = 0.0;
    for (k, c) in ctx.casimirs().iter().enumerate() {
        let c_norm = casimir_norms[k];
        for g in fns {
            let value = ctx.bracket(c, g, x)?;
            let g_norm = norm_squared(&g.gradient(x)?).sqrt();
            let others: f64 = casimir_norms.iter().product();
            let scale = 1.0 + nu.abs() * others * c_norm * g_norm;
            worst = worst.max(value.abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_euler, builtin_lotka_volterra, sample_points, SampleBox};
    use crate::VectorField;
    use std::collections::BTreeSet;

    fn field(src: &str) -> ScalarField {
        ScalarField::from_expression(Expression::parse(src, 3, &BTreeSet::new()).unwrap(), Arc::default())
    }

    #[test]
    fn bracket_of_a_function_with_itself_is_exactly_zero() {
        let ctx = BracketContext::of_system(&builtin_lotka_volterra());
        let f = field("x1*x2 + x3^2");
        assert_eq!(ctx.bracket(&f, &f, &[0.4, 1.3, -0.9]).unwrap(), 0.0);
    }

    #[test]
    fn lotka_volterra_bracket_reproduces_x2_component() {
        let lv = builtin_lotka_volterra();
        let ctx = BracketContext::of_system(&lv);
        let b = ctx.bracket(&ScalarField::coordinate(3, 1), lv.hamiltonian(), &[1.0, 1.0, 2.0]).unwrap();
        assert!((b - 1.0).abs() < 1e-15, "{b}");
    }

    #[test]
    fn casimir_bracket_vanishes() {
        let lv = builtin_lotka_volterra();
        let ctx = BracketContext::of_system(&lv);
        let c = &lv.casimirs()[0];
        for g in random_test_functions(3, 5, 1) {
            assert_eq!(ctx.bracket(c, &g, &[0.5, -1.0, 1.5]).unwrap(), 0.0);
        }
    }

    #[test]
    fn hamiltonian_vector_fields_match_the_builtins() {
        let lv = builtin_lotka_volterra();
        let v = BracketContext::of_system(&lv).hamiltonian_vector_field(lv.hamiltonian(), &[1.0, 1.0, 2.0]).unwrap();
        for (a, b) in v.iter().zip([3.0, 1.0, -4.0]) {
            assert!((a - b).abs() < 1e-14, "{v:?}");
        }
        let e = builtin_euler(1.0, 2.0, 3.0).unwrap();
        let v = BracketContext::of_system(&e).hamiltonian_vector_field(e.hamiltonian(), &[1.0, 1.0, 1.0]).unwrap();
        for (a, b) in v.iter().zip([-1.0 / 6.0, 2.0 / 3.0, -0.5]) {
            assert!((a - b).abs() < 1e-15, "{v:?}");
        }
    }

    #[test]
    fn casimir_as_hamiltonian_gives_zero_field() {
        let e = builtin_euler(1.0, 2.0, 3.0).unwrap();
        let ctx = BracketContext::of_system(&e);
        let v = ctx.hamiltonian_vector_field(&e.casimirs()[0], &[0.3, -1.2, 0.8]).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn corrupted_field_fails_realization() {
        let lv = builtin_lotka_volterra();
        let mut comps = lv.field().components().to_vec();
        comps[0] = comps[0].add(&ScalarField::constant(3, 0.1));
        let bad = lv.with_field(VectorField::new(comps).unwrap()).unwrap();
        let pts = sample_points(&SampleBox::cube(3, -2.0, 2.0, 100, 3).unwrap(), |x| nu_regular(&lv, x)).points;
        let report = verify_realization(&bad, &pts);
        assert!(!report.passed);
        assert!(report.max_residual >= 1e-3);
        assert!(verify_realization(&lv, &pts).passed);
    }

    #[test]
    fn unit_nu_divergence_equals_div_x() {
        // ν ≡ 1 leaves the field unchanged; LV has div X = 2(x3 − x1).
        let lv = builtin_lotka_volterra();
        let sys = IntegrableSystem::new(
            "lv-unit-nu",
            lv.field().clone(),
            lv.casimirs().to_vec(),
            lv.hamiltonian().clone(),
            ScalarField::constant(3, 1.0),
            None,
            Arc::default(),
        )
        .unwrap();
        let x = vec![0.5, 1.0, 2.0];
        let report = verify_divergence_free(&sys, &[x]);
        assert!((report.max_residual - 3.0).abs() < 1e-14);
        assert!(!report.passed);
    }

    #[test]
    fn near_nu_zero_points_are_skipped() {
        let lv = builtin_lotka_volterra();
        // ν = 0 on x1 = 0
        let report = verify_realization(&lv, &[vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 2.0]]);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.evaluated, 1);
    }

    #[test]
    fn context_rejects_wrong_casimir_count() {
        assert!(BracketContext::new(vec![], ScalarField::constant(3, 1.0)).is_err());
        assert!(BracketContext::new(vec![field("x1")], ScalarField::constant(3, 1.0)).is_ok());
    }
}
