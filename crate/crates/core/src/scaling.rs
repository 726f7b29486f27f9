//! Spam share of included gas as demand scales by `lambda`.
//!
//! Demand becomes `lambda * D(g)` and the opportunity grows linearly in
//! included user gas. Capacity follows one of the design rules at each scale.

use rayon::prelude::*;
use serde::Serialize;

use crate::design_rules::choose_bmax_mmus;
use crate::equilibrium::{b_plat, solve_with, MarketParams};
use crate::error::{ModelError, Result};
use crate::numeric::SolverConfig;
use crate::pfo::{solve_pfo, PfoParams};
use crate::scalar::Scalar;

/// Capacity rule applied at each scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ScalingRule<T> {
    Plateau,
    Mmus { eta: T },
    /// Priority-fee ordering at the random-ordering plateau capacity.
    Pfo { n: usize, v: T },
}

impl<T> ScalingRule<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ScalingRule::Plateau => "plateau",
            ScalingRule::Mmus { .. } => "mmus",
            ScalingRule::Pfo { .. } => "pfo",
        }
    }
}

/// Which demand intercept normalises the opportunity value after scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpportunityConvention {
    /// Keep the unscaled intercept, so the opportunity per unit of user gas is
    /// the same at every scale.
    #[default]
    Unscaled,
    /// Divide by the scaled intercept, so the opportunity per block is the
    /// same at every scale.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint<T> {
    pub lambda: T,
    pub rule: ScalingRule<T>,
    pub bmax_used: T,
    pub spam_count: T,
    pub user_gas: T,
    /// `s S / (s S + Q_u)`.
    pub rho_spam: T,
}

/// Market at scale `lambda` under the chosen normalisation.
pub fn scaled_market<T: Scalar>(
    template: &MarketParams<T>,
    lambda: T,
    convention: OpportunityConvention,
) -> Result<MarketParams<T>> {
    let demand = template.demand.scale(lambda)?;
    let opportunity_intercept = match convention {
        OpportunityConvention::Unscaled => Some(template.reference_intercept()),
        OpportunityConvention::Scaled => Some(template.reference_intercept() * lambda),
    };
    let p = MarketParams {
        demand,
        opportunity_intercept,
        ..template.clone()
    };
    p.validate()?;
    Ok(p)
}

fn share<T: Scalar>(spam_gas: T, user_gas: T) -> T {
    let total = spam_gas + user_gas;
    if total > T::zero() {
        spam_gas / total
    } else {
        T::zero()
    }
}

pub fn scaling_point<T: Scalar>(
    template: &MarketParams<T>,
    rule: ScalingRule<T>,
    lambda: T,
    convention: OpportunityConvention,
    cfg: &SolverConfig<T>,
) -> Result<ScalingPoint<T>> {
    let market = scaled_market(template, lambda, convention)?;
    let s = market.spam_gas;
    let (bmax_used, spam_count, user_gas) = match rule {
        ScalingRule::Plateau => {
            let bmax = b_plat(&market)?;
            let eq = solve_with(&market.with_capacity(bmax)?, cfg)?;
            (bmax, eq.spam_count, eq.user_gas)
        }
        ScalingRule::Mmus { eta } => {
            let bmax = choose_bmax_mmus(&market, eta, cfg)?.capacity;
            let eq = solve_with(&market.with_capacity(bmax)?, cfg)?;
            (bmax, eq.spam_count, eq.user_gas)
        }
        ScalingRule::Pfo { n, v } => {
            let bmax = b_plat(&market)?;
            let eq = solve_pfo(&market.with_capacity(bmax)?, &PfoParams::new(n, v)?, cfg)?;
            if !eq.converged {
                return Err(ModelError::NonConvergence {
                    solver: "block clearing price",
                    detail: format!("no fixed point at lambda = {lambda}"),
                });
            }
            (bmax, eq.total_spam, eq.total_user_gas)
        }
    };
    Ok(ScalingPoint {
        lambda,
        rule,
        bmax_used,
        spam_count,
        user_gas,
        rho_spam: share(spam_count * s, user_gas),
    })
}

/// One point per scale in `grid`, in grid order.
pub fn sweep_lambda<T: Scalar>(
    template: &MarketParams<T>,
    rule: ScalingRule<T>,
    grid: &[T],
    convention: OpportunityConvention,
    cfg: &SolverConfig<T>,
) -> Result<Vec<ScalingPoint<T>>> {
    if grid.is_empty() {
        return Err(ModelError::Argument("lambda grid is empty".into()));
    }
    grid.par_iter()
        .map(|&lambda| scaling_point(template, rule, lambda, convention, cfg))
        .collect()
}
