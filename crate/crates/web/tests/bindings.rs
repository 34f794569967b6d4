use integrable_web::{bracket_value, certificate_curve, classify_point};
use serde_json::Value;

#[test]
fn lotka_volterra_curve_follows_the_prediction() {
    let curve: Value =
        serde_json::from_str(&certificate_curve("lotka-volterra", &[], &[1.0, 1.0, 2.0], 0.3).unwrap()).unwrap();
    assert_eq!(curve["pass"], true);
    let points = curve["points"].as_array().unwrap();
    assert_eq!(points[0]["u"], serde_json::json!([-1.0, -2.0, -4.0]));
    assert_eq!(points[0]["u"], points[0]["predicted"]);
    assert!(curve["max_defect"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn euler_curve_uses_the_rescaled_system() {
    let curve: Value =
        serde_json::from_str(&certificate_curve("euler", &[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 1.0).unwrap()).unwrap();
    assert_eq!(curve["rescaled"], true);
    assert_eq!(curve["pass"], true);
    assert!(certificate_curve("euler", &[1.0, 2.0, 2.0], &[1.0, 1.0, 1.0], 1.0)
        .unwrap_err()
        .contains("not admissible"));
}

#[test]
fn rejected_inputs_are_errors() {
    assert!(certificate_curve("lotka-volterra", &[], &[1.0, 0.5, 1.0], 0.3).unwrap_err().starts_with("x0 ∉ Ω₀₀"));
    assert!(certificate_curve("lotka-volterra", &[], &[1.0, 1.0, 2.0], 1e6).is_err());
    assert!(certificate_curve("lotka-volterra", &[], &[1.0, 1.0], 0.3).is_err());
    assert!(classify_point("euler", &[1.0], &[1.0, 1.0, 1.0], false).is_err());
}

#[test]
fn classify_and_bracket() {
    let v: Value =
        serde_json::from_str(&classify_point("lotka-volterra", &[], &[1.0, 1.0, 1.0], false).unwrap()).unwrap();
    assert_eq!(v["in_O"], true);
    let v: Value =
        serde_json::from_str(&classify_point("euler", &[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0], true).unwrap()).unwrap();
    assert_eq!(v["in_O"], true);
    assert_eq!(bracket_value("lotka-volterra", &[], "x2", "", &[1.0, 1.0, 2.0]).unwrap(), 1.0);
    assert_eq!(bracket_value("lotka-volterra", &[], "x1", "x1", &[1.0, 1.0, 2.0]).unwrap(), 0.0);
    assert!(bracket_value("lotka-volterra", &[], "q", "", &[1.0, 1.0, 2.0]).is_err());
}
