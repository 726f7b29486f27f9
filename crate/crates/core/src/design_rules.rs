//! Rules for setting block capacity and the gas price floor.
//!
//! Capacity rules: stop at the plateau capacity, or stop earlier where the
//! user share of the next unit of capacity drops below a target `eta`
//! (minimum marginal user share). Floor rules: the lowest floor at which the
//! current capacity is just sufficient, refined so that lowering the floor
//! keeps admitting at least an `eta` share of users.

use serde::Serialize;

use crate::equilibrium::{b_plat, counterfactual, entry_occurs, solve_with, MarketParams};
use crate::error::{ModelError, Result};
use crate::numeric::SolverConfig;
use crate::scalar::{close, Scalar};

/// Baseline capacity rule: the plateau capacity.
pub use crate::equilibrium::b_plat as choose_bmax_plateau;

fn check_eta<T: Scalar>(eta: T) -> Result<()> {
    if eta > T::zero() && eta <= T::one() {
        Ok(())
    } else {
        Err(ModelError::domain("eta", eta.as_f64(), "0 < eta <= 1"))
    }
}

/// Closed-form marginal user share for linear demand in the congested region.
fn congested_share_linear<T: Scalar>(params: &MarketParams<T>, a: T, b: T) -> T {
    let bk = b * params.opportunity_per_gas();
    let x = params.capacity - a + params.spam_gas + bk;
    let half = T::lit(0.5);
    half * (T::one() - x / (x * x + T::lit(4.0) * a * bk).sqrt())
}

/// Share of the next unit of capacity taken by user gas, `dQ_u*/dB_max`.
///
/// One below spam entry, zero beyond the plateau, and the left limit at the
/// exact plateau capacity.
pub fn marginal_user_share<T: Scalar>(params: &MarketParams<T>, cfg: &SolverConfig<T>) -> Result<T> {
    params.validate()?;
    if params.price_floor > T::zero() {
        let plateau = b_plat(params)?;
        if params.capacity > plateau * (T::one() + T::lit(1e-12)) {
            return Ok(T::zero());
        }
    }
    if !entry_occurs(params) {
        return Ok(T::one());
    }
    match params.demand.linear_parts() {
        Some((a, b)) => Ok(congested_share_linear(params, a, b)),
        None => marginal_user_share_fd(params, T::lit(1e-3), cfg),
    }
}

/// Central finite difference of equilibrium user gas in capacity, with step
/// `rel_step * B_max`.
pub fn marginal_user_share_fd<T: Scalar>(params: &MarketParams<T>, rel_step: T, cfg: &SolverConfig<T>) -> Result<T> {
    let h = rel_step * params.capacity;
    let up = solve_with(&params.with_capacity(params.capacity + h)?, cfg)?;
    let down = solve_with(&params.with_capacity(params.capacity - h)?, cfg)?;
    Ok((up.user_gas - down.user_gas) / (h + h))
}

/// Smallest capacity at which spam enters, if it enters below the plateau.
pub fn entry_capacity<T: Scalar>(template: &MarketParams<T>) -> Result<Option<T>> {
    let plateau = b_plat(template)?;
    if !entry_occurs(&template.with_capacity(plateau.max(T::min_positive_value()))?) {
        return Ok(None);
    }
    let mut lo = T::zero();
    let mut hi = plateau;
    let tol = T::lit(1e-12).max(T::epsilon()) * plateau.max(T::one());
    for _ in 0..400 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if entry_occurs(&template.with_capacity(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Capacity chosen by the minimum-marginal-user-share rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmusChoice<T> {
    pub capacity: T,
    pub plateau: T,
    /// Marginal user share at the chosen capacity (left limit).
    pub share: T,
    /// The curvature condition failed somewhere in the congested range, so a
    /// grid scan replaced bisection.
    pub non_monotone: bool,
}

/// Largest capacity whose marginal user share is at least `eta`.
pub fn choose_bmax_mmus<T: Scalar>(template: &MarketParams<T>, eta: T, cfg: &SolverConfig<T>) -> Result<MmusChoice<T>> {
    check_eta(eta)?;
    template.validate()?;
    let plateau = b_plat(template)?;
    let share_at = |capacity: T| -> Result<T> { marginal_user_share(&template.with_capacity(capacity)?, cfg) };
    let choice = |capacity: T, non_monotone: bool| -> Result<MmusChoice<T>> {
        Ok(MmusChoice {
            capacity,
            plateau,
            share: share_at(capacity)?,
            non_monotone,
        })
    };

    let Some(entry) = entry_capacity(template)? else {
        return choice(plateau, false);
    };
    if eta <= share_at(plateau)? {
        return choice(plateau, false);
    }
    if eta > share_at(entry)? {
        return choice(entry, false);
    }

    // curvature condition over the congested price range
    let top_price = counterfactual(&template.with_capacity(entry)?).price;
    let floor = template.price_floor;
    let probes = 64;
    let mut monotone = true;
    for k in 0..=probes {
        let g = floor + (top_price - floor) * T::from_count(k) / T::from_count(probes);
        if template.demand.mmus_condition(g)? >= T::zero() {
            monotone = false;
            break;
        }
    }

    if !monotone {
        let points = 1024;
        let mut best = entry;
        for k in 0..=points {
            let capacity = entry + (plateau - entry) * T::from_count(k) / T::from_count(points);
            if share_at(capacity)? >= eta {
                best = capacity;
            }
        }
        return choice(best, true);
    }

    let (mut lo, mut hi) = (entry, plateau);
    let tol = T::lit(1e-6);
    for _ in 0..cfg.max_bisection {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if share_at(mid)? >= eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    choice(lo + (hi - lo) / T::lit(2.0), false)
}

/// Price below which the first unit of spam is profitable at a slack floor.
pub fn entry_threshold_price<T: Scalar>(params: &MarketParams<T>) -> Result<T> {
    let k = params.opportunity_per_gas();
    let s = params.spam_gas;
    if let Some((a, b)) = params.demand.linear_parts() {
        return Ok(k * a / (s + k * b));
    }
    // k D(g) - s g is strictly decreasing
    let gap = |g: T| k * params.demand.value_unchecked(g) - s * g;
    let mut hi = T::one();
    while gap(hi) > T::zero() {
        hi = hi * T::lit(2.0);
        if !hi.is_finite() {
            return Err(ModelError::NonConvergence {
                solver: "entry threshold",
                detail: "no finite price deters entry".into(),
            });
        }
    }
    let mut lo = T::zero();
    for _ in 0..400 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi || hi - lo <= T::lit(1e-13) * hi.max(T::one()) {
            break;
        }
        if gap(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / T::lit(2.0))
}

fn baseline_floor_closed_form<T: Scalar>(params: &MarketParams<T>, capacity: T) -> Option<T> {
    let (a, b) = params.demand.linear_parts()?;
    let k = params.opportunity_per_gas();
    let s = params.spam_gas;
    let no_entry = (a - capacity) / b;
    if no_entry >= k * a / (s + k * b) {
        return Some(no_entry);
    }
    let bk = b * k;
    let x = capacity - a + s + bk;
    Some((-x + (x * x + T::lit(4.0) * a * bk).sqrt()) / (T::lit(2.0) * b))
}

fn baseline_floor_bisection<T: Scalar>(template: &MarketParams<T>, capacity: T) -> Result<T> {
    let plat = |g: T| -> Result<T> { b_plat(&template.with_floor(g)?) };
    let mut hi = match template.demand.choke_price() {
        Some(p) => p,
        None => {
            let mut hi = T::one();
            while plat(hi)? > capacity {
                hi = hi * T::lit(2.0);
                if !hi.is_finite() {
                    return Err(ModelError::domain("capacity", capacity.as_f64(), "reachable by some floor"));
                }
            }
            hi
        }
    };
    let mut lo = T::zero();
    for _ in 0..400 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi || hi - lo <= T::lit(1e-14).max(T::epsilon()) * hi.max(T::one()) {
            break;
        }
        if plat(mid)? > capacity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / T::lit(2.0))
}

/// Lowest floor at which `capacity` equals the plateau capacity.
pub fn choose_gmin_baseline<T: Scalar>(template: &MarketParams<T>, capacity: T) -> Result<T> {
    if !(capacity > T::zero() && capacity.is_finite()) {
        return Err(ModelError::domain("capacity", capacity.as_f64(), "bmax > 0"));
    }
    if capacity >= template.demand.intercept() && template.demand.choke_price().is_none() {
        return Err(ModelError::domain("capacity", capacity.as_f64(), "below D(0) for curves without a choke price"));
    }
    let params = template.with_capacity(capacity)?;
    let numeric = baseline_floor_bisection(&params, capacity)?;
    match baseline_floor_closed_form(&params, capacity) {
        Some(exact) => {
            if !close(exact, numeric, T::agreement_tol(1e-6)) {
                return Err(ModelError::NonConvergence {
                    solver: "baseline floor",
                    detail: format!("closed form {exact} and bisection {numeric} disagree"),
                });
            }
            Ok(exact)
        }
        None => Ok(numeric),
    }
}

/// Local user share of the capacity admitted by lowering the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum UserShare<T> {
    Share(T),
    /// Congested spam world: a small floor change moves nothing.
    Undefined,
}

impl<T: Scalar> UserShare<T> {
    pub fn value(self) -> Option<T> {
        match self {
            UserShare::Share(v) => Some(v),
            UserShare::Undefined => None,
        }
    }
}

/// Slack-region share `D' / (D' + k (g D' - D) / g^2)`; for linear demand
/// `beta g^2 / (beta g^2 + r0)`.
fn slack_share<T: Scalar>(params: &MarketParams<T>, g: T) -> Result<T> {
    let d = params.demand.eval(g)?;
    let d1 = params.demand.derivative(g, 1)?;
    let k = params.opportunity_per_gas();
    let spam_slope = k * (g * d1 - d) / (g * g);
    Ok(d1 / (d1 + spam_slope))
}

/// User share `mu_user` of the capacity newly used when the floor is lowered.
pub fn mu_user<T: Scalar>(params: &MarketParams<T>) -> Result<UserShare<T>> {
    params.validate()?;
    let g = params.price_floor;
    if !(g > T::zero()) {
        return Ok(UserShare::Undefined);
    }
    let k = params.opportunity_per_gas();
    let spam_enters_at_floor = k * params.demand.value_unchecked(g) > params.spam_gas * g;
    let floor_binds = params.demand.inverse_clamped(params.capacity) <= g;
    if floor_binds && !spam_enters_at_floor {
        return Ok(UserShare::Share(T::one()));
    }
    if spam_enters_at_floor && params.capacity >= b_plat(params)? {
        return Ok(UserShare::Share(slack_share(params, g)?));
    }
    Ok(UserShare::Undefined)
}

/// Floor chosen by the refined rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinedFloor<T> {
    pub price: T,
    pub baseline: T,
    pub entry_threshold: T,
    /// Floor at which the slack-region user share equals `eta`; `None` when
    /// `eta = 1` makes it diverge.
    pub share_threshold: Option<T>,
    /// `eta = 1` saturated the share term at the entry threshold.
    pub saturated: bool,
}

fn share_threshold<T: Scalar>(params: &MarketParams<T>, eta: T, entry: T) -> Result<T> {
    if let Some((a, b)) = params.demand.linear_parts() {
        let k = params.opportunity_per_gas();
        return Ok((eta * k * a / (b * (T::one() - eta))).sqrt());
    }
    // slack share rises with the floor; solve share(g) = eta below the entry threshold
    let (mut lo, mut hi) = (entry * T::lit(1e-9), entry);
    if slack_share(params, hi)? < eta {
        return Ok(T::infinity());
    }
    for _ in 0..400 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi || hi - lo <= T::lit(1e-13) * hi {
            break;
        }
        if slack_share(params, mid)? >= eta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `max{baseline floor, min{entry threshold, share threshold}}`.
pub fn choose_gmin_refined<T: Scalar>(template: &MarketParams<T>, capacity: T, eta: T) -> Result<RefinedFloor<T>> {
    check_eta(eta)?;
    let params = template.with_capacity(capacity)?;
    let baseline = choose_gmin_baseline(&params, capacity)?;
    let entry = entry_threshold_price(&params)?;
    let (share, saturated) = if eta == T::one() {
        (None, true)
    } else {
        (Some(share_threshold(&params, eta, entry)?), false)
    };
    let capped = share.map_or(entry, |s| s.min(entry));
    Ok(RefinedFloor {
        price: baseline.max(capped),
        baseline,
        entry_threshold: entry,
        share_threshold: share,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandCurve;

    fn fig2(bmax: f64) -> MarketParams<f64> {
        MarketParams::new(DemandCurve::linear(1200.0_f64, 6.0).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
    }

    fn cfg() -> SolverConfig<f64> {
        SolverConfig::default()
    }

    #[test]
    fn marginal_share_values() {
        let m = marginal_user_share(&fig2(1000.0), &cfg()).unwrap();
        assert!((m - 0.5 * (1.0 + 150.0 / 166_500f64.sqrt())).abs() < 1e-12);
        assert!((m - 0.683_80).abs() < 1e-5);
        let at_plateau = marginal_user_share(&fig2(1330.0), &cfg()).unwrap();
        assert!((at_plateau - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(marginal_user_share(&fig2(400.0), &cfg()).unwrap(), 1.0);
        assert_eq!(marginal_user_share(&fig2(1400.0), &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_share_matches_finite_difference() {
        for bmax in [600.0, 800.0, 1000.0, 1200.0, 1300.0] {
            let p = fig2(bmax);
            let exact = marginal_user_share(&p, &cfg()).unwrap();
            let fd = marginal_user_share_fd(&p, 1e-3, &cfg()).unwrap();
            assert!((exact - fd).abs() < 1e-4, "{bmax}: {exact} vs {fd}");
        }
    }

    #[test]
    fn entry_capacity_of_fig2() {
        let e = entry_capacity(&fig2(1000.0)).unwrap().unwrap();
        assert!((e - 480.0).abs() < 1e-6);
        // at a floor that deters entry there is no entry capacity
        assert_eq!(entry_capacity(&fig2(1000.0).with_floor(130.0).unwrap()).unwrap(), None);
    }

    #[test]
    fn mmus_rule() {
        let c = choose_bmax_mmus(&fig2(1000.0), 0.6, &cfg()).unwrap();
        assert!((c.capacity - (1150.0 - 6000f64.sqrt())).abs() < 1e-3, "{}", c.capacity);
        assert!(!c.non_monotone);
        assert_eq!(choose_bmax_mmus(&fig2(1000.0), 1e-9, &cfg()).unwrap().capacity, 1330.0);
        assert_eq!(choose_bmax_mmus(&fig2(1000.0), 0.28571, &cfg()).unwrap().capacity, 1330.0);
        let strict = choose_bmax_mmus(&fig2(1000.0), 0.99, &cfg()).unwrap();
        assert!((strict.capacity - 480.0).abs() < 1e-6);
        assert!(choose_bmax_mmus(&fig2(1000.0), 0.0, &cfg()).is_err());
        assert!(choose_bmax_mmus(&fig2(1000.0), 1.5, &cfg()).is_err());
    }

    #[test]
    fn baseline_floor() {
        let g = choose_gmin_baseline(&fig2(1000.0), 1000.0).unwrap();
        assert!((g - (150.0 + 166_500f64.sqrt()) / 12.0).abs() < 1e-9);
        assert!((g - 46.5037).abs() < 1e-4);
        assert!((choose_gmin_baseline(&fig2(1000.0), 1330.0).unwrap() - 20.0).abs() < 1e-9);
        let g = choose_gmin_baseline(&fig2(1000.0), 1180.0).unwrap();
        assert!((g - 29.22).abs() < 5e-3);
        assert!((b_plat(&fig2(1180.0).with_floor(g).unwrap()).unwrap() - 1180.0).abs() < 1e-6);
        // no-entry branch
        let g = choose_gmin_baseline(&fig2(1000.0), 300.0).unwrap();
        assert!((g - 150.0).abs() < 1e-9);
        assert!(choose_gmin_baseline(&fig2(1000.0), 0.0).is_err());
    }

    #[test]
    fn mu_user_regions() {
        let slack = mu_user(&fig2(1330.0)).unwrap();
        assert!((slack.value().unwrap() - 2400.0 / 8400.0).abs() < 1e-12);
        assert_eq!(mu_user(&fig2(2000.0).with_floor(120.0).unwrap()).unwrap(), UserShare::Share(1.0));
        let p = fig2(1330.0).with_floor(30.0).unwrap();
        let mu = mu_user(&p).unwrap().value().unwrap();
        assert!((mu - 5400.0 / 11_400.0).abs() < 1e-12);
        let p = fig2(1330.0).with_floor(38.729_833_462_074_17).unwrap();
        assert!((mu_user(&p).unwrap().value().unwrap() - 0.6).abs() < 1e-9);
        assert_eq!(mu_user(&fig2(1000.0)).unwrap(), UserShare::Undefined);
    }

    #[test]
    fn refined_floor() {
        let r = choose_gmin_refined(&fig2(1000.0), 1000.0, 0.6).unwrap();
        assert!((r.price - 46.5037).abs() < 1e-4);
        let r = choose_gmin_refined(&fig2(1000.0), 1330.0, 0.6).unwrap();
        assert!((r.price - 38.7298).abs() < 1e-4);
        let r = choose_gmin_refined(&fig2(1000.0), 1330.0, 0.99).unwrap();
        assert!((r.price - 120.0).abs() < 1e-9);
        assert!((r.share_threshold.unwrap() - 314.64).abs() < 1e-2);
        let r = choose_gmin_refined(&fig2(1000.0), 1330.0, 1.0).unwrap();
        assert!(r.saturated);
        assert!((r.price - 120.0).abs() < 1e-9);
    }
}
