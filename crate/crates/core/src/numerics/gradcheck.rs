use crate::error::{GpnError, Result};

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub n_probes: usize,
}

/// Central-difference check of `analytic` (the gradient of `f` at `x`).
///
/// Every coordinate in `probes` (all coordinates when `None`) is perturbed
/// by `±eps`. Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    probes: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(GpnError::Shape(format!(
            "gradient has {} entries, parameters have {}",
            analytic.len(),
            x.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match probes {
        Some(p) => p,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coordinate: 0, n_probes: 0 };
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GpnError::NonFinite(format!("objective at coordinate {i}")));
        }
        let num = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        if report.n_probes == 0 || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
        }
        report.n_probes += 1;
    }
    Ok(report)
}

/// Steps tried by [`grad_check_stepped`], coarse to fine.
pub const STEP_LADDER: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// Like [`grad_check`], but each coordinate picks its own step from `steps`
/// (sorted coarse to fine). The step minimising
/// `|n(h) − n(h_next)| + 2·u·max(|f(x)|, 1)/h` is used: a truncation estimate
/// from the next finer step plus the rounding bound. The choice never looks
/// at `analytic`.
pub fn grad_check_stepped<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    steps: &[f64],
    probes: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(GpnError::Shape(format!(
            "gradient has {} entries, parameters have {}",
            analytic.len(),
            x.len()
        )));
    }
    if steps.len() < 2 || steps.windows(2).any(|w| !(w[0] > w[1] && w[1] > 0.0)) {
        return Err(GpnError::Config("steps must be positive, strictly decreasing, at least two".into()));
    }
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(GpnError::NonFinite("objective at the base point".into()));
    }
    let noise = 2.0 * f64::EPSILON * f0.abs().max(1.0);
    let all: Vec<usize>;
    let coords = match probes {
        Some(p) => p,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_coordinate: 0, n_probes: 0 };
    let mut probe = x.to_vec();
    let mut n = vec![0.0; steps.len()];
    for &i in coords {
        let orig = probe[i];
        for (nk, &h) in n.iter_mut().zip(steps) {
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(GpnError::NonFinite(format!("objective at coordinate {i}")));
            }
            *nk = (fp - fm) / (2.0 * h);
        }
        let num = (0..steps.len() - 1)
            .map(|k| ((n[k] - n[k + 1]).abs() + noise / steps[k], n[k]))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, v)| v)
            .expect("at least two steps");
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        if report.n_probes == 0 || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
        }
        report.n_probes += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = grad_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-4, None).unwrap();
        assert!(r.max_rel_error < 1e-6);
        assert_eq!(r.n_probes, 1);
    }

    #[test]
    fn flags_a_wrong_gradient() {
        let r = grad_check(|x| x[0] * x[1], &[2.0, 5.0], &[5.0, 3.0], 1e-5, None).unwrap();
        assert_eq!(r.worst_coordinate, 1);
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let e = grad_check(|x| (x[0]).ln(), &[0.0], &[1.0], 1e-3, None);
        assert!(matches!(e, Err(GpnError::NonFinite(_))));
    }
    #[test]
    fn stepped_handles_tiny_and_curved_gradients() {
        // A tiny slope on a large offset defeats a fixed small step.
        let tiny = |x: &[f64]| 2.4 + 3e-9 * x[0] + 1e-3 * x[0] * x[0];
        let g = [3e-9];
        let fixed = grad_check(tiny, &[0.0], &g, 1e-7, None).unwrap();
        let stepped = grad_check_stepped(tiny, &[0.0], &g, &STEP_LADDER, None).unwrap();
        assert!(stepped.max_rel_error < 1e-4, "{}", stepped.max_rel_error);
        assert!(fixed.max_rel_error > stepped.max_rel_error);
        // Strong curvature wants a fine step.
        let curved = |x: &[f64]| (300.0 * x[0]).sin();
        let g = [300.0 * (300.0f64 * 0.1).cos()];
        let r = grad_check_stepped(curved, &[0.1], &g, &STEP_LADDER, None).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn stepped_still_flags_a_wrong_gradient() {
        let r = grad_check_stepped(|x| x[0] * x[1], &[2.0, 5.0], &[5.0, 2.0 * 1.001], &STEP_LADDER, None).unwrap();
        assert_eq!(r.worst_coordinate, 1);
        assert!(r.max_rel_error > 9e-4);
        assert!(grad_check_stepped(|x| x[0], &[1.0], &[1.0], &[1e-5, 1e-3], None).is_err());
    }
}
