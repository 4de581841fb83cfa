use crate::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the smooth coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates where the one-sided slopes disagree (ReLU or max kinks).
    /// They are reported but do not count toward `max_rel_error`.
    pub kinks: Vec<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares the analytic gradient returned by `f` against central differences
/// `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate. The relative error is
/// `|a − n| / max(1e−8, |a| + |n|)`.
pub fn gradient_check<F>(mut f: F, x: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::ConfigError(format!("finite-difference step must be positive, got {h}")));
    }
    let (f0, analytic) = f(x);
    if analytic.len() != x.len() {
        return Err(Error::ShapeError(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        kinks: Vec::new(),
        checked: 0,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe).0;
        probe[i] = x[i] - h;
        let fm = f(&probe).0;
        probe[i] = x[i];

        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        if (forward - backward).abs() > 1e-4 * (forward.abs() + backward.abs()) + 1e-6 {
            report.kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
