//! Root bracketing, bisection and quadrature used across the solvers.

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;

/// Tolerances and iteration budgets for every iterative routine in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig<T> {
    /// Absolute bisection tolerance on spam counts.
    pub root_tol: T,
    /// Grid points used to bracket the first sign change before bisecting.
    pub scan_points: usize,
    /// Hard cap on bisection halvings.
    pub max_bisection: usize,
    /// Relative tolerance of the block clearing price fixed point.
    pub fixed_point_tol: T,
    pub max_outer_iterations: usize,
    /// Weight on the new iterate in the damped fixed-point update.
    pub damping: T,
    /// Relative tolerance of adaptive Simpson quadrature.
    pub quadrature_tol: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            root_tol: T::lit(1e-9),
            scan_points: 64,
            max_bisection: 200,
            fixed_point_tol: T::lit(1e-8),
            max_outer_iterations: 500,
            damping: T::lit(0.5),
            quadrature_tol: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.root_tol > T::zero()) || !(self.fixed_point_tol > T::zero()) {
            return Err(ModelError::Argument("solver tolerances must be positive".into()));
        }
        if !(self.quadrature_tol > T::zero()) {
            return Err(ModelError::Argument("quadrature tolerance must be positive".into()));
        }
        if self.scan_points < 2 || self.max_bisection == 0 || self.max_outer_iterations == 0 {
            return Err(ModelError::Argument(
                "scan_points must be >= 2 and iteration budgets nonzero".into(),
            ));
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(ModelError::Argument("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Where a scanned function first turns from positive to nonpositive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing<T> {
    /// Sign change inside `[lo, hi]`, with `f(lo) > 0 >= f(hi)`.
    Bracket { lo: T, hi: T },
    /// No descending crossing and `f` is positive at the right end.
    PositiveAtEnd,
    /// No descending crossing and `f` is nonpositive at the right end.
    NonPositive,
}

/// Scans `f` on `points + 1` equally spaced nodes of `[lo, hi]` and returns
/// the first cell where `f` goes from positive to nonpositive.
///
/// `value_at_lo` overrides `f(lo)`, for functions only defined as a limit at
/// the left end.
pub fn first_descending_crossing<T, F>(
    f: &mut F,
    lo: T,
    hi: T,
    points: usize,
    value_at_lo: Option<T>,
) -> Result<Crossing<T>>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let width = hi - lo;
    let mut prev_x = lo;
    let mut prev_f = match value_at_lo {
        Some(v) => v,
        None => f(lo)?,
    };
    for k in 1..=points {
        let x = if k == points {
            hi
        } else {
            lo + width * T::from_count(k) / T::from_count(points)
        };
        let fx = f(x)?;
        if prev_f > T::zero() && !(fx > T::zero()) {
            return Ok(Crossing::Bracket { lo: prev_x, hi: x });
        }
        prev_x = x;
        prev_f = fx;
    }
    if prev_f > T::zero() {
        Ok(Crossing::PositiveAtEnd)
    } else {
        Ok(Crossing::NonPositive)
    }
}

/// Bisection on a bracket with `f(lo) > 0 >= f(hi)`.
///
/// Stops when the bracket is narrower than `tol` or can no longer be split in
/// the scalar type, returning the midpoint.
pub fn bisect_descending<T, F>(f: &mut F, mut lo: T, mut hi: T, tol: T, max_iter: usize) -> Result<T>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let two = T::lit(2.0);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + (hi - lo) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / two)
}

/// Grid scan followed by bisection. `None` when there is no descending crossing.
pub fn scan_and_bisect<T, F>(
    f: &mut F,
    lo: T,
    hi: T,
    value_at_lo: Option<T>,
    cfg: &SolverConfig<T>,
) -> Result<(Crossing<T>, Option<T>)>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let crossing = first_descending_crossing(f, lo, hi, cfg.scan_points, value_at_lo)?;
    match crossing {
        Crossing::Bracket { lo, hi } => {
            let root = bisect_descending(f, lo, hi, cfg.root_tol, cfg.max_bisection)?;
            Ok((crossing, Some(root)))
        }
        _ => Ok((crossing, None)),
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// `tol` is absolute; callers scale it to the magnitude of the integral.
pub fn adaptive_simpson<T, F>(f: &F, a: T, b: T, tol: T, max_depth: usize) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> Result<T>,
{
    if a == b {
        return Ok(T::zero());
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = mid(a, b);
    let fm = f(m)?;
    let whole = simpson(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

fn mid<T: Scalar>(a: T, b: T) -> T {
    a + (b - a) / T::lit(2.0)
}

fn simpson<T: Scalar>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<T, F>(f: &F, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: usize) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> Result<T>,
{
    let m = mid(a, b);
    let lm = mid(a, m);
    let rm = mid(m, b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::lit(15.0) * tol {
        return Ok(left + right + delta / T::lit(15.0));
    }
    let half = tol / T::lit(2.0);
    Ok(simpson_recurse(f, a, m, fa, flm, fm, left, half, depth - 1)?
        + simpson_recurse(f, m, b, fm, frm, fb, right, half, depth - 1)?)
}

/// `count` evenly spaced values `from, from + step, ...` up to `to` inclusive.
pub fn step_grid<T: Scalar>(from: T, to: T, step: T) -> Result<Vec<T>> {
    if !(step > T::zero()) || !(to >= from) || !from.is_finite() || !to.is_finite() {
        return Err(ModelError::Argument(format!(
            "grid needs finite from <= to and step > 0 (got {from}, {to}, {step})"
        )));
    }
    let span = (to - from) / step;
    // tolerate representation error in the endpoint
    let count = (span + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    Ok((0..count).map(|k| from + step * T::from_count(k)).collect())
}
