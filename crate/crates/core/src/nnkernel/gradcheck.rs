use super::{NnError, ParamStore, Tensor};

/// Central-difference step for 64-bit reals.
pub const FD_STEP: f64 = 1e-5;
/// Fallback step used when the default one flips a ReLU or clamp branch.
pub const FD_STEP_FINE: f64 = 1e-7;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely rather than amplifying rounding noise.
pub const REL_FLOOR: f64 = 1e-3;
/// Fraction of entries allowed to remain kink-bound after refinement.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// One evaluation of the loss under test.
pub struct Evaluation {
    pub loss: f64,
    /// Reverse-mode gradients aligned with the store; may be empty when not requested.
    pub grads: Vec<Tensor>,
    /// Fingerprint of the piecewise branches taken (see `Tape::with_branch_tracking`).
    pub branch: u64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter name, flat index) of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries that needed the finer step to stay on one side of a kink.
    pub refined: usize,
    /// Entries whose finite difference straddles a kink even at the finer step.
    pub skipped: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients from `loss_fn` against central finite
/// differences for every parameter entry. `loss_fn(params, want_grads)` must be
/// deterministic.
pub fn grad_check<F>(
    params: &mut ParamStore,
    tol: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&ParamStore, bool) -> Result<Evaluation, NnError>,
{
    let base = loss_fn(params, true)?;
    if !base.loss.is_finite() {
        return Err(NnError::NonFinite { op: "grad_check loss" });
    }
    let analytic = base.grads;
    if analytic.len() != params.len() {
        return Err(NnError::GradCount {
            expected: params.len(),
            found: analytic.len(),
        });
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        refined: 0,
        skipped: 0,
        tol,
        passed: false,
    };

    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        for flat in 0..n {
            let mut numeric = None;
            for (attempt, h) in [FD_STEP, FD_STEP_FINE].into_iter().enumerate() {
                let orig = params.get(id).as_slice().expect("contiguous")[flat];
                params.get_mut(id).as_slice_mut().expect("contiguous")[flat] = orig + h;
                let plus = loss_fn(params, false);
                params.get_mut(id).as_slice_mut().expect("contiguous")[flat] = orig - h;
                let minus = loss_fn(params, false);
                params.get_mut(id).as_slice_mut().expect("contiguous")[flat] = orig;
                let (plus, minus) = (plus?, minus?);
                if !plus.loss.is_finite() || !minus.loss.is_finite() {
                    return Err(NnError::NonFinite { op: "grad_check loss" });
                }
                if plus.branch == base.branch && minus.branch == base.branch {
                    numeric = Some((plus.loss - minus.loss) / (2.0 * h));
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic[id.index()].as_slice().expect("contiguous")[flat];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((params.name(id).to_string(), flat));
            }
        }
    }
    let total = report.checked + report.skipped;
    report.passed = report.max_rel_err <= tol
        && (report.skipped as f64) <= MAX_SKIP_FRACTION * total as f64;
    Ok(report)
}
