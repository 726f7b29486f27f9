//! Competitive spam equilibrium under random transaction ordering.
//!
//! A single opportunity worth `r = r0 * Q_u / D0` is created by user gas and
//! claimed by the first spam transaction executed after it. With `S` spam
//! transactions in random order the claim probability is `S / (S + 1)`, and
//! every included transaction pays the uniform clearing price. Free entry
//! drives the expected profit of spam to zero.

use serde::Serialize;

use crate::demand::DemandCurve;
use crate::error::{ModelError, Result};
use crate::numeric::{scan_and_bisect, Crossing, SolverConfig};
use crate::scalar::{close, positive_part, Scalar};

/// Market constants and the two design levers (capacity and price floor).
#[derive(Debug, Clone)]
pub struct MarketParams<T> {
    pub demand: DemandCurve<T>,
    /// Gas reserved by each spam transaction.
    pub spam_gas: T,
    /// Opportunity value when included user gas equals the reference intercept.
    pub base_opportunity: T,
    pub price_floor: T,
    pub capacity: T,
    /// Intercept used to normalise the opportunity value. `None` means the
    /// intercept of `demand` itself.
    pub opportunity_intercept: Option<T>,
}

impl<T: Scalar> MarketParams<T> {
    pub fn new(demand: DemandCurve<T>, spam_gas: T, base_opportunity: T, price_floor: T, capacity: T) -> Result<Self> {
        let p = Self {
            demand,
            spam_gas,
            base_opportunity,
            price_floor,
            capacity,
            opportunity_intercept: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spam_gas > T::zero() && self.spam_gas.is_finite()) {
            return Err(ModelError::domain("spam gas", self.spam_gas.as_f64(), "s > 0"));
        }
        if !(self.base_opportunity >= T::zero() && self.base_opportunity.is_finite()) {
            return Err(ModelError::domain("base opportunity", self.base_opportunity.as_f64(), "r0 >= 0"));
        }
        if !(self.price_floor >= T::zero() && self.price_floor.is_finite()) {
            return Err(ModelError::domain("price floor", self.price_floor.as_f64(), "gmin >= 0"));
        }
        if !(self.capacity > T::zero() && self.capacity.is_finite()) {
            return Err(ModelError::domain("capacity", self.capacity.as_f64(), "bmax > 0"));
        }
        if let Some(d0) = self.opportunity_intercept {
            if !(d0 > T::zero() && d0.is_finite()) {
                return Err(ModelError::domain("opportunity intercept", d0.as_f64(), "> 0"));
            }
        }
        Ok(())
    }

    pub fn with_capacity(&self, capacity: T) -> Result<Self> {
        let p = Self {
            capacity,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_floor(&self, price_floor: T) -> Result<Self> {
        let p = Self {
            price_floor,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    /// The intercept dividing included user gas in the opportunity value.
    pub fn reference_intercept(&self) -> T {
        self.opportunity_intercept.unwrap_or_else(|| self.demand.intercept())
    }

    /// Opportunity value contributed per unit of included user gas.
    pub fn opportunity_per_gas(&self) -> T {
        self.base_opportunity / self.reference_intercept()
    }

    /// Spam count that fills the whole block.
    pub fn max_spam(&self) -> T {
        self.capacity / self.spam_gas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Spam is unprofitable even at the spam-free price.
    NoEntry,
    /// Spam enters and the price stays at the floor with spare capacity.
    SlackAtFloor,
    /// Spam pushes the clearing price above the floor and fills the block.
    Congested,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::NoEntry => "no_entry",
            Regime::SlackAtFloor => "slack_at_floor",
            Regime::Congested => "congested",
        }
    }
}

/// Zero-profit equilibrium of the random-ordering market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium<T> {
    pub regime: Regime,
    pub spam_count: T,
    pub clearing_price: T,
    pub user_gas: T,
    pub spam_gas: T,
    pub total_gas: T,
    /// Value of the opportunity at the equilibrium user gas.
    pub opportunity: T,
    /// Entry was still profitable with the block full of spam.
    pub spam_unbounded: bool,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn spam_share(&self) -> T {
        if self.total_gas > T::zero() {
            self.spam_gas / self.total_gas
        } else {
            T::zero()
        }
    }
}

/// Spam-free benchmark at the same capacity and floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Counterfactual<T> {
    pub price: T,
    pub user_gas: T,
}

/// Probability that one of `spam` randomly ordered transactions follows the
/// opportunity.
pub fn claim_probability<T: Scalar>(spam: T) -> Result<T> {
    if spam.is_nan() || spam < T::zero() {
        return Err(ModelError::domain("spam count", spam.as_f64(), "S >= 0"));
    }
    if spam.is_infinite() {
        return Ok(T::one());
    }
    Ok(spam / (spam + T::one()))
}

fn check_spam<T: Scalar>(params: &MarketParams<T>, spam: T) -> Result<()> {
    if spam.is_nan() || spam < T::zero() {
        return Err(ModelError::domain("spam count", spam.as_f64(), "S >= 0"));
    }
    let gas = spam * params.spam_gas;
    if gas > params.capacity * (T::one() + T::epsilon() * T::lit(16.0)) {
        return Err(ModelError::InfeasibleSpam {
            spam_gas: gas.as_f64(),
            capacity: params.capacity.as_f64(),
        });
    }
    Ok(())
}

/// Uniform clearing price once `spam` transactions have taken their space.
pub fn clearing_price_given_spam<T: Scalar>(params: &MarketParams<T>, spam: T) -> Result<T> {
    check_spam(params, spam)?;
    Ok(price_unchecked(params, spam))
}

fn price_unchecked<T: Scalar>(params: &MarketParams<T>, spam: T) -> T {
    let room = params.capacity - spam * params.spam_gas;
    params.price_floor.max(params.demand.inverse_clamped(room))
}

fn user_gas_at<T>(params: &MarketParams<T>, spam: T, price: T) -> T
where
    T: Scalar,
{
    let room = positive_part(params.capacity - spam * params.spam_gas);
    params.demand.value_unchecked(price).min(room)
}

/// Total expected profit of `spam` spam transactions.
pub fn spam_utility<T: Scalar>(params: &MarketParams<T>, spam: T) -> Result<T> {
    check_spam(params, spam)?;
    if spam == T::zero() {
        return Ok(T::zero());
    }
    let g = price_unchecked(params, spam);
    let r = params.opportunity_per_gas() * user_gas_at(params, spam, g);
    Ok(spam / (spam + T::one()) * r - spam * params.spam_gas * g)
}

/// Expected profit per spam transaction, `r / (S + 1) - s g(S)`.
///
/// Shares the sign of `spam_utility` for `S > 0` and is defined at `S = 0`,
/// where it decides whether entry starts.
pub fn entry_margin<T: Scalar>(params: &MarketParams<T>, spam: T) -> Result<T> {
    check_spam(params, spam)?;
    let g = price_unchecked(params, spam);
    let r = params.opportunity_per_gas() * user_gas_at(params, spam, g);
    Ok(r / (spam + T::one()) - params.spam_gas * g)
}

pub fn counterfactual<T: Scalar>(params: &MarketParams<T>) -> Counterfactual<T> {
    let demand = &params.demand;
    let price = params.price_floor.max(demand.inverse_clamped(params.capacity));
    let user_gas = params.capacity.min(demand.value_unchecked(params.price_floor));
    Counterfactual { price, user_gas }
}

/// Whether the first unit of spam is profitable in the spam-free world.
pub fn entry_occurs<T: Scalar>(params: &MarketParams<T>) -> bool {
    let cf = counterfactual(params);
    params.opportunity_per_gas() * cf.user_gas > params.spam_gas * cf.price
}

/// Smallest capacity at which the price stays at the floor with spam present.
pub fn b_plat<T: Scalar>(params: &MarketParams<T>) -> Result<T> {
    let g = params.price_floor;
    if !(g > T::zero()) {
        return Err(ModelError::UnboundedPlateau);
    }
    let users = params.demand.value_unchecked(g);
    let spam_gas = params.opportunity_per_gas() * users / g - params.spam_gas;
    Ok(users + positive_part(spam_gas))
}

fn assemble<T: Scalar>(params: &MarketParams<T>, regime: Regime, spam: T, price: T, user_gas: T) -> Equilibrium<T> {
    let spam_gas = spam * params.spam_gas;
    Equilibrium {
        regime,
        spam_count: spam,
        clearing_price: price,
        user_gas,
        spam_gas,
        total_gas: user_gas + spam_gas,
        opportunity: params.opportunity_per_gas() * user_gas,
        spam_unbounded: false,
    }
}

fn no_entry<T: Scalar>(params: &MarketParams<T>) -> Equilibrium<T> {
    let cf = counterfactual(params);
    assemble(params, Regime::NoEntry, T::zero(), cf.price, cf.user_gas)
}

/// Closed-form equilibrium, available for linear demand only.
pub fn solve_closed_form<T: Scalar>(params: &MarketParams<T>) -> Option<Equilibrium<T>> {
    let (a, b) = params.demand.linear_parts()?;
    if !entry_occurs(params) {
        return Some(no_entry(params));
    }
    let s = params.spam_gas;
    let k = params.opportunity_per_gas();
    let gmin = params.price_floor;
    let cf = counterfactual(params);

    let slack = cf.price <= gmin && matches!(b_plat(params), Ok(bp) if params.capacity >= bp);
    if slack {
        let users = params.demand.value_unchecked(gmin);
        let spam = k * users / (s * gmin) - T::one();
        return Some(assemble(params, Regime::SlackAtFloor, spam, gmin, users));
    }

    let two = T::lit(2.0);
    let delta = a - params.capacity;
    let bk = b * k;
    let disc = (s - delta + bk).powi(2) + T::lit(4.0) * a * bk;
    let spam = positive_part((disc.sqrt() - (s + delta + bk)) / (two * s));
    let users = positive_part(params.capacity - s * spam);
    let price = gmin.max((a - users) / b);
    Some(assemble(params, Regime::Congested, spam, price, users))
}

/// Equilibrium from the zero-profit condition by grid scan and bisection.
pub fn solve_bracketed<T: Scalar>(params: &MarketParams<T>, cfg: &SolverConfig<T>) -> Result<Equilibrium<T>> {
    params.validate()?;
    let start = entry_margin(params, T::zero())?;
    if !(start > T::zero()) {
        return Ok(no_entry(params));
    }
    let upper = params.max_spam();
    let mut margin = |x: T| entry_margin(params, x.min(upper));
    let (crossing, root) = scan_and_bisect(&mut margin, T::zero(), upper, Some(start), cfg)?;
    let (spam, unbounded) = match (crossing, root) {
        (_, Some(root)) => (root, false),
        (Crossing::PositiveAtEnd, None) => (upper, true),
        _ => {
            return Err(ModelError::NonConvergence {
                solver: "bracketed zero-profit solve",
                detail: "entry margin positive at zero but no crossing found".into(),
            })
        }
    };
    let price = price_unchecked(params, spam);
    let users = user_gas_at(params, spam, price);
    let floor = params.price_floor;
    let regime = if price > floor + T::agreement_tol(1e-9) * T::one().max(floor) {
        Regime::Congested
    } else {
        Regime::SlackAtFloor
    };
    let mut eq = assemble(params, regime, spam, price, users);
    eq.spam_unbounded = unbounded;
    Ok(eq)
}

/// Solves the equilibrium with the default solver configuration.
pub fn solve<T: Scalar>(params: &MarketParams<T>) -> Result<Equilibrium<T>> {
    solve_with(params, &SolverConfig::default())
}

/// Solves the equilibrium. Linear demand uses the closed form, cross-checked
/// against the bracketed root.
pub fn solve_with<T: Scalar>(params: &MarketParams<T>, cfg: &SolverConfig<T>) -> Result<Equilibrium<T>> {
    params.validate()?;
    let numeric = solve_bracketed(params, cfg)?;
    let Some(exact) = solve_closed_form(params) else {
        return Ok(numeric);
    };
    let tol = T::agreement_tol(1e-6);
    if !close(exact.spam_count, numeric.spam_count, tol) || !close(exact.clearing_price, numeric.clearing_price, tol) {
        return Err(ModelError::NonConvergence {
            solver: "zero-profit solve",
            detail: format!(
                "closed form (S={}, g={}) and bracketed root (S={}, g={}) disagree",
                exact.spam_count, exact.clearing_price, numeric.spam_count, numeric.clearing_price
            ),
        });
    }
    Ok(exact)
}
