use thiserror::Error;

use crate::tensorcore::Real;

/// Summary of an analytic-vs-central-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub n_checked: usize,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    /// Coordinates whose forward and backward differences disagreed, so a
    /// smaller step or one side was used (only [`grad_check_piecewise`]
    /// sets this).
    pub refined: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("function value is not finite at coordinate {coord} ({side} step)")]
    NonFinite { coord: usize, side: &'static str },
    #[error("gradient has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("step must be positive")]
    BadStep,
    #[error("no coordinates to check")]
    Empty,
}

/// Checks every coordinate of `analytic` against central differences of `f` at `x`.
pub fn grad_check<F: Real>(
    f: impl FnMut(&[F]) -> F,
    x: &[F],
    analytic: &[F],
    eps: F,
) -> Result<GradReport, GradCheckError> {
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, analytic, eps, &coords)
}

/// Like [`grad_check`] restricted to `coords`.
///
/// The relative error of coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|, floor)`
/// where `floor = 1e-3 * max_j |a_j|`, so coordinates whose true derivative is
/// numerically zero are judged against the gradient's overall scale.
pub fn grad_check_coords<F: Real>(
    f: impl FnMut(&[F]) -> F,
    x: &[F],
    analytic: &[F],
    eps: F,
    coords: &[usize],
) -> Result<GradReport, GradCheckError> {
    check(f, x, analytic, eps, coords, false)
}

/// Like [`grad_check_coords`] for piecewise-smooth functions such as
/// nearest-neighbour losses.
///
/// A step that crosses a switch of the active piece makes the central
/// difference an average of several slopes. When the forward and backward
/// differences disagree by more than 0.1% and by more than the round-off of a
/// smaller step, the step is divided by ten (at most [`REFINEMENTS`] times)
/// and the central difference at the final step is used. If they still disagree, the analytic value belongs to the
/// piece active at `x`, so a one-sided difference that agrees with it at least
/// ten times better than the central one is used instead. Either way the
/// coordinate is counted in [`GradReport::refined`]. On a smooth stretch all
/// differences agree, so a wrong gradient still fails.
pub fn grad_check_piecewise<F: Real>(
    f: impl FnMut(&[F]) -> F,
    x: &[F],
    analytic: &[F],
    eps: F,
    coords: &[usize],
) -> Result<GradReport, GradCheckError> {
    check(f, x, analytic, eps, coords, true)
}

/// Step divisions tried by [`grad_check_piecewise`].
pub const REFINEMENTS: usize = 1;

fn check<F: Real>(
    mut f: impl FnMut(&[F]) -> F,
    x: &[F],
    analytic: &[F],
    eps: F,
    coords: &[usize],
    piecewise: bool,
) -> Result<GradReport, GradCheckError> {
    if analytic.len() != x.len() {
        return Err(GradCheckError::Length {
            expected: x.len(),
            got: analytic.len(),
        });
    }
    if !(eps > F::zero()) {
        return Err(GradCheckError::BadStep);
    }
    if coords.is_empty() {
        return Err(GradCheckError::Empty);
    }
    let scale = analytic
        .iter()
        .map(|v| v.to_f64_lossy().abs())
        .fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let rel_err = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);

    let f0 = if piecewise { f(x).to_f64_lossy() } else { 0.0 };
    let mut xp = x.to_vec();
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        n_checked: 0,
        worst_index: coords[0],
        refined: 0,
    };
    for &i in coords {
        let a = analytic[i].to_f64_lossy();
        let mut h = eps.to_f64_lossy();
        let (fp, fm) = probe(&mut f, &mut xp, i, eps)?;
        let mut numeric = (fp - fm) / (2.0 * h);
        if piecewise {
            // Differences at step `h` carry round-off of roughly `noise / h`.
            let noise = 64.0 * f64::EPSILON * f0.abs();
            let slopes_differ = |fwd: f64, bwd: f64, h: f64| {
                (fwd - bwd).abs() > (1e-3 * fwd.abs().max(bwd.abs()).max(floor)).max(noise / h)
            };
            let (mut fwd, mut bwd) = ((fp - f0) / h, (f0 - fm) / h);
            let mut refined = 0;
            while slopes_differ(fwd, bwd, h / 10.0) && refined < REFINEMENTS {
                refined += 1;
                h /= 10.0;
                let (fp, fm) = probe(&mut f, &mut xp, i, F::lit(h))?;
                (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
                numeric = (fp - fm) / (2.0 * h);
            }
            let mut adjusted = refined > 0;
            if slopes_differ(fwd, bwd, h) {
                let side = if rel_err(a, fwd) < rel_err(a, bwd) { fwd } else { bwd };
                if 10.0 * rel_err(a, side) < rel_err(a, numeric) {
                    numeric = side;
                    adjusted = true;
                }
            }
            report.refined += adjusted as usize;
        }
        let abs = (a - numeric).abs();
        let rel = rel_err(a, numeric);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        report.n_checked += 1;
    }
    Ok(report)
}

/// `f` at `x +- h e_i`, as f64.
fn probe<F: Real>(
    f: &mut impl FnMut(&[F]) -> F,
    xp: &mut [F],
    i: usize,
    h: F,
) -> Result<(f64, f64), GradCheckError> {
    let orig = xp[i];
    xp[i] = orig + h;
    let fp = f(xp);
    xp[i] = orig - h;
    let fm = f(xp);
    xp[i] = orig;
    if !fp.is_finite() {
        return Err(GradCheckError::NonFinite {
            coord: i,
            side: "forward",
        });
    }
    if !fm.is_finite() {
        return Err(GradCheckError::NonFinite {
            coord: i,
            side: "backward",
        });
    }
    Ok((fp.to_f64_lossy(), fm.to_f64_lossy()))
}
