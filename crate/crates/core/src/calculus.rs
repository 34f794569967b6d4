//! Gradients, Jacobian determinants of function tuples, and divergence.

use std::fmt;
use std::sync::Arc;

use crate::expr::{EvalError, EvalErrorKind, Expression, Parameters};

type OpaqueFn = dyn Fn(&[f64]) -> Result<f64, EvalError> + Send + Sync;

/// Step rule for central differences; the step on axis `i` is
/// `factor · max(1, |x_i|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `cbrt(ε)`, balancing O(h²) truncation against rounding.
    CubeRootEps,
    /// `sqrt(ε)`, used when differentiating already-differentiated fields.
    SqrtEps,
}

impl StepRule {
    pub fn factor(self) -> f64 {
        match self {
            StepRule::CubeRootEps => f64::EPSILON.cbrt(),
            StepRule::SqrtEps => f64::EPSILON.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    ExactDual,
    CentralDifference(StepRule),
}

#[derive(Clone)]
enum Body {
    Expr { expr: Expression, params: Arc<Parameters> },
    Opaque(Arc<OpaqueFn>),
}

/// A real-valued function of `n` variables with a gradient.
#[derive(Clone)]
pub struct ScalarField {
    body: Body,
    dimension: usize,
    mode: GradientMode,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.body {
            Body::Expr { expr, .. } => write!(f, "ScalarField({expr}; {:?})", self.mode),
            Body::Opaque(_) => write!(f, "ScalarField(<opaque, n={}>; {:?})", self.dimension, self.mode),
        }
    }
}

impl ScalarField {
    pub fn from_expression(expr: Expression, params: Arc<Parameters>) -> Self {
        let dimension = expr.dimension();
        ScalarField { body: Body::Expr { expr, params }, dimension, mode: GradientMode::ExactDual }
    }

    /// A closed-form field without an expression tree. Its gradient is taken by
    /// central differences.
    pub fn opaque<F>(dimension: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<f64, EvalError> + Send + Sync + 'static,
    {
        ScalarField {
            body: Body::Opaque(Arc::new(f)),
            dimension,
            mode: GradientMode::CentralDifference(StepRule::CubeRootEps),
        }
    }

    pub fn constant(dimension: usize, value: f64) -> Self {
        ScalarField::from_expression(Expression::constant(dimension, value), Arc::default())
    }

    /// The coordinate function `x ↦ x_{index+1}`.
    pub fn coordinate(dimension: usize, index: usize) -> Self {
        ScalarField::from_expression(Expression::variable(dimension, index), Arc::default())
    }

    /// Overrides the gradient mode. Opaque fields ignore `ExactDual`.
    pub fn with_mode(mut self, mode: GradientMode) -> Self {
        self.mode = match (&self.body, mode) {
            (Body::Opaque(_), GradientMode::ExactDual) => self.mode,
            _ => mode,
        };
        self
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn expression(&self) -> Option<&Expression> {
        match &self.body {
            Body::Expr { expr, .. } => Some(expr),
            Body::Opaque(_) => None,
        }
    }

    pub fn parameters(&self) -> Option<&Parameters> {
        match &self.body {
            Body::Expr { params, .. } => Some(params),
            Body::Opaque(_) => None,
        }
    }

    /// Structural constancy: an expression mentioning no coordinate.
    pub fn is_structurally_constant(&self) -> bool {
        self.expression().is_some_and(Expression::is_coordinate_free)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.dimension {
            return Err(EvalError::dimension(self.dimension, x.len()));
        }
        match &self.body {
            Body::Expr { expr, params } => expr.eval(x, params),
            Body::Opaque(f) => {
                let v = f(x)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::new(EvalErrorKind::NonFinite, "<opaque field>"))
                }
            }
        }
    }

    pub fn partial(&self, x: &[f64], axis: usize) -> Result<f64, EvalError> {
        if x.len() != self.dimension {
            return Err(EvalError::dimension(self.dimension, x.len()));
        }
        match (&self.body, self.mode) {
            (Body::Expr { expr, params }, GradientMode::ExactDual) => {
                expr.eval_dual(x, axis, params).map(|d| d.derivative)
            }
            (_, GradientMode::CentralDifference(rule)) => self.central_difference(x, axis, rule),
            (Body::Opaque(_), GradientMode::ExactDual) => self.central_difference(x, axis, StepRule::CubeRootEps),
        }
    }

    fn central_difference(&self, x: &[f64], axis: usize, rule: StepRule) -> Result<f64, EvalError> {
        let h = rule.factor() * x[axis].abs().max(1.0);
        let mut probe = x.to_vec();
        probe[axis] = x[axis] + h;
        let plus = self.eval(&probe)?;
        probe[axis] = x[axis] - h;
        let minus = self.eval(&probe)?;
        // the effective step, after rounding of x ± h
        let span = (x[axis] + h) - (x[axis] - h);
        Ok((plus - minus) / span)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        (0..self.dimension).map(|i| self.partial(x, i)).collect()
    }

    fn binary(&self, other: &ScalarField, op: BinaryOp) -> ScalarField {
        assert_eq!(self.dimension, other.dimension, "fields of different dimension");
        match (&self.body, &other.body) {
            (Body::Expr { expr: a, params: pa }, Body::Expr { expr: b, params: pb }) => {
                let expr = match op {
                    BinaryOp::Add => a.add(b),
                    BinaryOp::Sub => a.sub(b),
                    BinaryOp::Mul => a.mul(b),
                    BinaryOp::Div => a.div(b),
                };
                let params = merge_params(pa, pb);
                let mode = if self.mode == other.mode { self.mode } else { GradientMode::ExactDual };
                ScalarField::from_expression(expr, params).with_mode(mode)
            }
            _ => {
                let (f, g) = (self.clone(), other.clone());
                ScalarField::opaque(self.dimension, move |x| {
                    let a = f.eval(x)?;
                    let b = g.eval(x)?;
                    match op {
                        BinaryOp::Add => Ok(a + b),
                        BinaryOp::Sub => Ok(a - b),
                        BinaryOp::Mul => Ok(a * b),
                        BinaryOp::Div if b == 0.0 => {
                            Err(EvalError::new(EvalErrorKind::DivisionByZero, "<opaque quotient>"))
                        }
                        BinaryOp::Div => Ok(a / b),
                    }
                })
            }
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, BinaryOp::Div)
    }

    /// `1/self`.
    pub fn recip(&self) -> ScalarField {
        ScalarField::constant(self.dimension, 1.0).div(self)
    }

    pub fn scale(&self, factor: f64) -> ScalarField {
        ScalarField::constant(self.dimension, factor).mul(self)
    }
}

#[derive(Debug, Clone, Copy)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn merge_params(a: &Arc<Parameters>, b: &Arc<Parameters>) -> Arc<Parameters> {
    if Arc::ptr_eq(a, b) || b.is_empty() {
        return a.clone();
    }
    if a.is_empty() {
        return b.clone();
    }
    // left operand wins on a name clash
    let mut merged = (**b).clone();
    merged.extend(a.iter().map(|(k, v)| (k.clone(), *v)));
    Arc::new(merged)
}

/// `X = X₁∂₁ + … + Xₙ∂ₙ`.
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self, EvalError> {
        let n = components.len();
        if let Some(bad) = components.iter().find(|c| c.dimension() != n) {
            return Err(EvalError::dimension(n, bad.dimension()));
        }
        Ok(VectorField { components })
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn divergence(&self, x: &[f64]) -> Result<f64, EvalError> {
        divergence(self, x)
    }

    /// Componentwise product `factor · X`.
    pub fn scaled_by(&self, factor: &ScalarField) -> VectorField {
        VectorField { components: self.components.iter().map(|c| factor.mul(c)).collect() }
    }

    /// Componentwise quotient `X / divisor`.
    pub fn divided_by(&self, divisor: &ScalarField) -> VectorField {
        VectorField { components: self.components.iter().map(|c| c.div(divisor)).collect() }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        assert_eq!(self.dimension(), other.dimension());
        VectorField { components: self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn with_mode(&self, mode: GradientMode) -> VectorField {
        VectorField { components: self.components.iter().map(|c| c.clone().with_mode(mode)).collect() }
    }
}

pub fn gradient(f: &ScalarField, x: &[f64]) -> Result<Vec<f64>, EvalError> {
    f.gradient(x)
}

/// `Σᵢ ∂Xᵢ/∂xᵢ`.
pub fn divergence(field: &VectorField, x: &[f64]) -> Result<f64, EvalError> {
    field.components.iter().enumerate().try_fold(0.0, |acc, (i, c)| Ok(acc + c.partial(x, i)?))
}

/// `∂(f₁,…,fₙ)/∂(x₁,…,xₙ)`: the determinant of the matrix of gradient rows.
pub fn jacobian_determinant(fs: &[ScalarField], x: &[f64]) -> Result<f64, EvalError> {
    if fs.len() != x.len() {
        return Err(EvalError::dimension(x.len(), fs.len()));
    }
    let rows = fs.iter().map(|f| f.gradient(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(determinant(rows))
}

/// Determinant by LU factorization with partial pivoting. Consumes the rows.
pub fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    debug_assert!(m.iter().all(|r| r.len() == n), "determinant of a non-square matrix");
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap_or(col);
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        let p = m[col][col];
        det *= p;
        let (upper, lower) = m.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for row in lower {
            let factor = row[col] / p;
            if factor != 0.0 {
                for (v, &q) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *v -= factor * q;
                }
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn field(src: &str) -> ScalarField {
        let e = Expression::parse(src, 3, &BTreeSet::new()).unwrap();
        ScalarField::from_expression(e, Arc::default())
    }

    fn coords(n: usize) -> Vec<ScalarField> {
        (0..n).map(|i| ScalarField::coordinate(n, i)).collect()
    }

    #[test]
    fn gradient_of_linear_and_constant_fields() {
        assert_eq!(gradient(&field("x1+x2+x3"), &[0.3, -2.0, 7.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(gradient(&field("4.25"), &[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let c = field("(x1^2+x2^2+x3^2)/2");
        assert_eq!(gradient(&c, &[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn central_difference_mode_is_second_order_accurate() {
        let c = field("x2*(x1+x2+x3)/(x1*x3)");
        let exact = c.gradient(&[1.0, 1.0, 2.0]).unwrap();
        let fd = c
            .clone()
            .with_mode(GradientMode::CentralDifference(StepRule::CubeRootEps))
            .gradient(&[1.0, 1.0, 2.0])
            .unwrap();
        assert_eq!(exact, vec![-1.5, 2.5, -0.5]);
        for (a, b) in exact.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn opaque_fields_differentiate_numerically() {
        let f = ScalarField::opaque(3, |x| Ok(x[0] * x[0] * x[1] + x[2]));
        let g = f.gradient(&[2.0, 3.0, -1.0]).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
        assert!((g[2] - 1.0).abs() < 1e-8);
        assert_eq!(f.clone().with_mode(GradientMode::ExactDual).mode(), f.mode());
    }

    #[test]
    fn opaque_division_by_zero() {
        let f = ScalarField::opaque(3, |x| Ok(x[0]));
        let q = ScalarField::constant(3, 1.0).div(&f);
        assert_eq!(q.eval(&[0.0, 1.0, 1.0]).unwrap_err().kind, EvalErrorKind::DivisionByZero);
    }

    #[test]
    fn identity_jacobian_is_one() {
        for n in 1..6 {
            let x: Vec<f64> = (0..n).map(|i| i as f64 - 1.3).collect();
            assert_eq!(jacobian_determinant(&coords(n), &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn repeated_entry_gives_zero() {
        let f = field("x1*x2 - x3^2/(1+x1^2)");
        let fs = vec![f.clone(), field("x2+x3^3"), f];
        assert_eq!(jacobian_determinant(&fs, &[0.7, -1.1, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn lotka_volterra_bracket_determinant() {
        // det(∇C, ∇x2, ∇H) at (1,1,2); ν = −1 there and ν·det = x2(x3 − x1) = 1.
        let fs = vec![field("x2*(x1+x2+x3)/(x1*x3)"), ScalarField::coordinate(3, 1), field("x1+x2+x3")];
        let det = jacobian_determinant(&fs, &[1.0, 1.0, 2.0]).unwrap();
        assert!((det + 1.0).abs() < 1e-15);
    }

    #[test]
    fn determinant_known_values() {
        assert_eq!(determinant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), -1.0);
        let m = vec![vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]];
        assert!((determinant(m) - 4.0).abs() < 1e-14);
        assert_eq!(determinant(vec![]), 1.0);
    }

    #[test]
    fn divergence_examples() {
        let lv = VectorField::new(vec![field("x1*(x2+x3)"), field("x2*(-x1+x3)"), field("x3*(-x1-x2)")]).unwrap();
        assert_eq!(lv.divergence(&[1.0, 1.0, 2.0]).unwrap(), 2.0);
        let constant = VectorField::new(vec![field("1"), field("-2"), field("3.5")]).unwrap();
        assert_eq!(constant.divergence(&[4.0, 5.0, 6.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(jacobian_determinant(&coords(3), &[1.0, 2.0]).is_err());
        assert!(field("x1").eval(&[1.0]).is_err());
        assert!(VectorField::new(vec![field("x1"), field("x2")]).is_err());
    }
}
