use serde::Serialize;

/// Residual statistics for one identity checked over a set of points.
///
/// Residuals are stored already normalized by whatever scale the check
/// defines, so `passed` is simply `max_residual <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub evaluated: usize,
    pub skipped: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub worst_point: Option<Vec<f64>>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ResidualAccumulator {
    check: String,
    tolerance: f64,
    count: usize,
    skipped: usize,
    sum: f64,
    max: f64,
    worst: Option<Vec<f64>>,
}

impl ResidualAccumulator {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        ResidualAccumulator { check: check.into(), tolerance, count: 0, skipped: 0, sum: 0.0, max: 0.0, worst: None }
    }

    pub fn push(&mut self, residual: f64, x: &[f64]) {
        self.count += 1;
        self.sum += residual;
        // NaN must not hide behind a comparison
        if residual.is_nan() || residual > self.max || self.worst.is_none() {
            self.max = if residual.is_nan() { f64::INFINITY } else { residual.max(self.max) };
            self.worst = Some(x.to_vec());
        }
    }

    pub fn skip(&mut self) {
        self.skipped += 1;
    }

    pub fn finish(self) -> VerificationReport {
        let mean = if self.count == 0 { 0.0 } else { self.sum / self.count as f64 };
        VerificationReport {
            passed: self.count > 0 && self.max <= self.tolerance,
            check: self.check,
            evaluated: self.count,
            skipped: self.skipped,
            max_residual: self.max,
            mean_residual: mean,
            worst_point: self.worst,
            tolerance: self.tolerance,
        }
    }
}

/// Relative difference `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub(crate) fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_does_not_pass() {
        let r = ResidualAccumulator::new("empty", 1.0).finish();
        assert!(!r.passed);
        assert_eq!(r.evaluated, 0);
    }

    #[test]
    fn tracks_worst_point() {
        let mut acc = ResidualAccumulator::new("t", 0.5);
        acc.push(0.1, &[1.0]);
        acc.push(0.7, &[2.0]);
        acc.push(0.2, &[3.0]);
        acc.skip();
        let r = acc.finish();
        assert_eq!(r.worst_point, Some(vec![2.0]));
        assert!(!r.passed);
        assert_eq!(r.skipped, 1);
        assert!((r.mean_residual - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nan_residual_fails() {
        let mut acc = ResidualAccumulator::new("t", 0.5);
        acc.push(f64::NAN, &[1.0]);
        assert!(!acc.finish().passed);
    }
}
