//! User welfare, validator revenue and network externality, with and without
//! spam, at a fixed capacity and price floor.

use rayon::prelude::*;
use serde::Serialize;

use crate::demand::DemandCurve;
use crate::equilibrium::{counterfactual, solve_with, Counterfactual, Equilibrium, MarketParams};
use crate::error::{ModelError, Result};
use crate::numeric::SolverConfig;
use crate::scalar::Scalar;

/// Per-unit network costs of provisioned capacity and executed gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostParams<T> {
    pub capacity_cost: T,
    pub execution_cost: T,
}

impl<T: Scalar> CostParams<T> {
    pub fn new(capacity_cost: T, execution_cost: T) -> Result<Self> {
        if !(capacity_cost >= T::zero()) || !(execution_cost >= T::zero()) {
            return Err(ModelError::Argument(format!(
                "cost coefficients must be nonnegative, got ({capacity_cost}, {execution_cost})"
            )));
        }
        Ok(Self {
            capacity_cost,
            execution_cost,
        })
    }

    /// Execution-only costs, so externality is measured in gas.
    pub fn gas_units() -> Self {
        Self {
            capacity_cost: T::zero(),
            execution_cost: T::one(),
        }
    }
}

/// Metrics of the spam world, the spam-free world and their differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport<T> {
    pub user_welfare: T,
    pub revenue: T,
    pub externality: T,
    pub user_welfare0: T,
    pub revenue0: T,
    pub externality0: T,
    pub delta_welfare: T,
    pub delta_revenue: T,
    pub delta_externality: T,
}

impl<T: Scalar> MetricsReport<T> {
    pub(crate) fn from_levels(w: T, r: T, e: T, w0: T, r0: T, e0: T) -> Self {
        Self {
            user_welfare: w,
            revenue: r,
            externality: e,
            user_welfare0: w0,
            revenue0: r0,
            externality0: e0,
            delta_welfare: w - w0,
            delta_revenue: r - r0,
            delta_externality: e - e0,
        }
    }

    pub fn welfare_plus_revenue(&self) -> T {
        self.user_welfare + self.revenue
    }

    pub fn welfare_plus_revenue0(&self) -> T {
        self.user_welfare0 + self.revenue0
    }
}

fn check_welfare_inputs<T: Scalar>(demand: &DemandCurve<T>, qu: T, g: T) -> Result<()> {
    if qu.is_nan() || qu < T::zero() {
        return Err(ModelError::domain("user gas", qu.as_f64(), "q >= 0"));
    }
    if qu > T::zero() {
        let valuation = demand.inverse(qu)?;
        let slack = T::lit(1e-9) * T::one().max(valuation.abs());
        if g > valuation + slack {
            return Err(ModelError::InconsistentPrice {
                price: g.as_f64(),
                valuation: valuation.as_f64(),
            });
        }
    }
    Ok(())
}

/// Surplus of the first `qu` units of demand when each pays `g`:
/// `∫_0^qu (P(q) - g) dq`.
pub fn user_welfare<T: Scalar>(demand: &DemandCurve<T>, qu: T, g: T) -> Result<T> {
    check_welfare_inputs(demand, qu, g)?;
    if qu == T::zero() {
        return Ok(T::zero());
    }
    Ok(demand.inverse_integral(qu, T::lit(1e-10))? - g * qu)
}

/// Same quantity as [`user_welfare`], always by adaptive Simpson quadrature.
pub fn user_welfare_quadrature<T: Scalar>(demand: &DemandCurve<T>, qu: T, g: T, rel_tol: T) -> Result<T> {
    check_welfare_inputs(demand, qu, g)?;
    if qu == T::zero() {
        return Ok(T::zero());
    }
    Ok(demand.inverse_integral_quadrature(qu, rel_tol)? - g * qu)
}

pub fn validator_revenue<T: Scalar>(price: T, total_gas: T) -> T {
    price * total_gas
}

pub fn externality<T: Scalar>(costs: &CostParams<T>, capacity: T, total_gas: T) -> Result<T> {
    if total_gas > capacity * (T::one() + T::lit(1e-9)) {
        return Err(ModelError::Argument(format!(
            "total gas {total_gas} exceeds capacity {capacity}"
        )));
    }
    Ok(costs.capacity_cost * capacity + costs.execution_cost * total_gas)
}

/// Metrics of an already solved equilibrium and its counterfactual.
pub fn report_from<T: Scalar>(
    params: &MarketParams<T>,
    costs: &CostParams<T>,
    eq: &Equilibrium<T>,
    cf: &Counterfactual<T>,
) -> Result<MetricsReport<T>> {
    let demand = &params.demand;
    let w = user_welfare(demand, eq.user_gas, eq.clearing_price)?;
    let w0 = user_welfare(demand, cf.user_gas, cf.price)?;
    let r = validator_revenue(eq.clearing_price, eq.total_gas);
    let r0 = validator_revenue(cf.price, cf.user_gas);
    let e = externality(costs, params.capacity, eq.total_gas)?;
    let e0 = externality(costs, params.capacity, cf.user_gas)?;
    Ok(MetricsReport::from_levels(w, r, e, w0, r0, e0))
}

pub fn report<T: Scalar>(params: &MarketParams<T>, costs: &CostParams<T>) -> Result<MetricsReport<T>> {
    report_with(params, costs, &SolverConfig::default())
}

pub fn report_with<T: Scalar>(
    params: &MarketParams<T>,
    costs: &CostParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<MetricsReport<T>> {
    let eq = solve_with(params, cfg)?;
    report_from(params, costs, &eq, &counterfactual(params))
}

/// One capacity of a block-size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow<T> {
    pub capacity: T,
    pub equilibrium: Equilibrium<T>,
    pub counterfactual: Counterfactual<T>,
    pub metrics: MetricsReport<T>,
}

/// Equilibrium and metrics at each capacity in `grid`, in grid order.
pub fn sweep_bmax<T: Scalar>(
    template: &MarketParams<T>,
    costs: &CostParams<T>,
    grid: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Vec<SweepRow<T>>> {
    if grid.is_empty() {
        return Err(ModelError::Argument("capacity grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(ModelError::Argument("capacity grid must be sorted".into()));
    }
    grid.par_iter()
        .map(|&capacity| {
            let params = template.with_capacity(capacity)?;
            let equilibrium = solve_with(&params, cfg)?;
            let cf = counterfactual(&params);
            let metrics = report_from(&params, costs, &equilibrium, &cf)?;
            Ok(SweepRow {
                capacity,
                equilibrium,
                counterfactual: cf,
                metrics,
            })
        })
        .collect()
}
