//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and strings and returns a JSON string; errors become thrown
//! JavaScript strings.

use integrable::calculus::ScalarField;
use integrable::expr::Expression;
use integrable::flow::IntegratorConfig;
use integrable::linearize::{certify_linearization, classify, CertifyOptions, Tolerances};
use integrable::model::builtin;
use integrable::poisson::BracketContext;
use integrable::{IntegrableSystem, Parameters};
use serde::Serialize;
use std::sync::Arc;
use wasm_bindgen::prelude::*;

/// Longest time span the page may request.
const MAX_SPAN: f64 = 50.0;

fn system(name: &str, inertia: &[f64]) -> Result<IntegrableSystem, String> {
    let mut params = Parameters::new();
    if name == "euler" {
        let [i1, i2, i3] = inertia else {
            return Err("euler needs three moments of inertia".into());
        };
        params.extend([("I1".to_string(), *i1), ("I2".to_string(), *i2), ("I3".to_string(), *i3)]);
    }
    builtin(name, &params).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurvePoint {
    t: f64,
    s: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    predicted: Vec<f64>,
    defect: Option<f64>,
}

#[derive(Serialize)]
struct Curve {
    system: String,
    rescaled: bool,
    pass: bool,
    max_defect: f64,
    excluded_samples: usize,
    termination: String,
    points: Vec<CurvePoint>,
}

/// Certifies the linearization from `x0` over `[0, t1]` and returns every
/// sample with its chart value `u(t)` next to the prediction `u(0)·e^{s(t)}`.
pub fn certificate_curve(name: &str, inertia: &[f64], x0: &[f64], t1: f64) -> Result<String, String> {
    if !(0.0..=MAX_SPAN).contains(&t1) {
        return Err(format!("t1 must lie in [0, {MAX_SPAN}]"));
    }
    let sys = system(name, inertia)?;
    if x0.len() != sys.dimension() {
        return Err(format!("x0 needs {} coordinates", sys.dimension()));
    }
    let cfg = IntegratorConfig::rk45(0.0, t1, 1e-10, 1e-12);
    let cert = certify_linearization(&sys, x0, &cfg, &CertifyOptions::for_dimension(3)).map_err(|e| e.to_string())?;
    let points = cert
        .trajectory
        .samples
        .iter()
        .zip(&cert.samples)
        .map(|(sample, c)| CurvePoint {
            t: sample.t,
            s: sample.s,
            x: sample.x.clone(),
            u: c.u.clone(),
            predicted: cert.initial_chart.iter().map(|u0| u0 * sample.s.exp()).collect(),
            defect: c.defect,
        })
        .collect();
    let curve = Curve {
        system: cert.system.clone(),
        rescaled: cert.rescaled,
        pass: cert.pass,
        max_defect: cert.max_defect,
        excluded_samples: cert.excluded_samples,
        termination: format!("{:?}", cert.termination),
        points,
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

/// Domain verdict at `x`, for the rescaled system when `rescale` is set.
pub fn classify_point(name: &str, inertia: &[f64], x: &[f64], rescale: bool) -> Result<String, String> {
    let sys = system(name, inertia)?;
    if x.len() != sys.dimension() {
        return Err(format!("x needs {} coordinates", sys.dimension()));
    }
    let working = if rescale { sys.rescaled().map_err(|e| e.to_string())? } else { sys };
    serde_json::to_string(&classify(&working, x, &Tolerances::default())).map_err(|e| e.to_string())
}

/// `{f, g}(x)` with `g` defaulting to the Hamiltonian when empty.
pub fn bracket_value(name: &str, inertia: &[f64], f: &str, g: &str, x: &[f64]) -> Result<f64, String> {
    let sys = system(name, inertia)?;
    if x.len() != sys.dimension() {
        return Err(format!("x needs {} coordinates", sys.dimension()));
    }
    let params = Arc::new(sys.parameters().clone());
    let field = |src: &str| {
        Expression::parse_with(src, sys.dimension(), &params)
            .map(|e| ScalarField::from_expression(e, params.clone()))
            .map_err(|e| e.to_string())
    };
    let f = field(f)?;
    let g = if g.trim().is_empty() { sys.hamiltonian().clone() } else { field(g)? };
    BracketContext::of_system(&sys).bracket(&f, &g, x).map(|v| v + 0.0).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = certificateCurve)]
pub fn certificate_curve_js(name: &str, inertia: &[f64], x0: &[f64], t1: f64) -> Result<String, JsValue> {
    certificate_curve(name, inertia, x0, t1).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = classifyPoint)]
pub fn classify_point_js(name: &str, inertia: &[f64], x: &[f64], rescale: bool) -> Result<String, JsValue> {
    classify_point(name, inertia, x, rescale).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = bracketValue)]
pub fn bracket_value_js(name: &str, inertia: &[f64], f: &str, g: &str, x: &[f64]) -> Result<f64, JsValue> {
    bracket_value(name, inertia, f, g, x).map_err(JsValue::from)
}
