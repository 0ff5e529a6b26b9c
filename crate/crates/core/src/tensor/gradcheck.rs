//! Central finite differences for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the results are independent of
//! every backward rule in the engine.

/// Default perturbation for float64 checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose magnitude stays below this are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error among entries above the floor.
    pub max_rel_error: f64,
    /// Largest absolute error among entries at or below the floor.
    pub max_abs_small: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64, floor: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_small <= floor
    }
}

/// Elementwise comparison of analytic and numerical gradients.
pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_small: 0.0,
        worst_index: 0,
        checked: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let diff = (a - n).abs();
        if scale > floor {
            let rel = diff / scale;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = i;
            }
        } else if diff > report.max_abs_small {
            report.max_abs_small = diff;
        }
    }
    report
}
