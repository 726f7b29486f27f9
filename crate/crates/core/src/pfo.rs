//! Approximate priority-fee ordering.
//!
//! The block is split into `n` sub-blocks of equal capacity executed top
//! first. A share `v` of users bids for priority and fills the top sub-blocks,
//! each clearing at the inverse priority demand of its cumulative gas. The
//! rest bid only for inclusion and pay the block clearing price `ḡ`. Inside a
//! sub-block the order is random, and an opportunity that no spam in its own
//! sub-block claims spills over to the next sub-block carrying spam.
//!
//! Spam is solved top-down at zero profit per sub-block given `ḡ`, and `ḡ` is
//! closed by the fixed point `ḡ = max{gmin, P(Σ(C - S_i s)₊)}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{counterfactual, MarketParams};
use crate::error::{ModelError, Result};
use crate::metrics::{externality, CostParams, MetricsReport};
use crate::numeric::{first_descending_crossing, bisect_descending, Crossing, SolverConfig};
use crate::scalar::{positive_part, Scalar};

/// Sub-block count and priority share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PfoParams<T> {
    pub n: usize,
    pub v: T,
}

impl<T: Scalar> PfoParams<T> {
    pub fn new(n: usize, v: T) -> Result<Self> {
        let p = Self { n, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(ModelError::Argument("sub-block count must be at least 1".into()));
        }
        if !(self.v >= T::zero() && self.v <= T::one()) {
            return Err(ModelError::domain("priority share", self.v.as_f64(), "0 <= v <= 1"));
        }
        Ok(())
    }

    /// Capacity of one sub-block.
    pub fn sub_capacity(&self, capacity: T) -> T {
        capacity / T::from_count(self.n)
    }
}

/// Contents and price of one sub-block. `index` is 1-based, top first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PfoSubBlock<T> {
    pub index: usize,
    pub spam_count: T,
    pub priority_user_gas: T,
    pub inclusion_user_gas: T,
    /// Capacity left after spam and priority users.
    pub residual: T,
    pub price: T,
}

impl<T: Scalar> PfoSubBlock<T> {
    pub fn user_gas(&self) -> T {
        self.priority_user_gas + self.inclusion_user_gas
    }

    pub fn spam_gas(&self, spam_gas: T) -> T {
        self.spam_count * spam_gas
    }
}

/// Allocation of users to sub-blocks for a given spam profile and `ḡ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fill<T> {
    pub sub_blocks: Vec<PfoSubBlock<T>>,
    /// First sub-block with spare capacity after priority users; `n + 1` if none.
    pub first_inclusion: usize,
    /// Post-spam user capacity `Σ(C - S_i s)₊`.
    pub post_spam_capacity: T,
    pub user_gas: T,
}

/// Fills sub-blocks with priority users top-down, then inclusion-only users
/// contiguously from the first sub-block with spare room.
pub fn fill_block<T: Scalar>(
    spam: &[T],
    bar_g: T,
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
) -> Result<Fill<T>> {
    pfo.validate()?;
    if spam.len() != pfo.n {
        return Err(ModelError::Argument(format!(
            "spam profile has {} entries for {} sub-blocks",
            spam.len(),
            pfo.n
        )));
    }
    if !(bar_g >= params.price_floor) {
        return Err(ModelError::domain("block clearing price", bar_g.as_f64(), "at least the price floor"));
    }
    let c = pfo.sub_capacity(params.capacity);
    let s = params.spam_gas;
    let upper = c / s;
    for &x in spam {
        if !(x >= T::zero() && x <= upper * (T::one() + T::lit(1e-12))) {
            return Err(ModelError::InfeasibleSpam {
                spam_gas: (x * s).as_f64(),
                capacity: c.as_f64(),
            });
        }
    }
    let v = pfo.v;
    let demand_at = params.demand.eval(bar_g)?;
    let priority_demand = v * demand_at;

    let mut priority = Vec::with_capacity(pfo.n);
    let mut residual = Vec::with_capacity(pfo.n);
    let mut gamma_t = T::zero();
    let mut cumulative = Vec::with_capacity(pfo.n);
    for &x in spam {
        let room = c - x * s;
        let qt = positive_part(room.min(priority_demand - gamma_t));
        gamma_t = gamma_t + qt;
        priority.push(qt);
        cumulative.push(gamma_t);
        residual.push(positive_part(room - qt));
    }
    let m = residual.iter().position(|&l| l > T::zero()).map_or(pfo.n + 1, |i| i + 1);
    let post_spam: T = spam.iter().fold(T::zero(), |acc, &x| acc + positive_part(c - x * s));
    let user_gas = demand_at.min(post_spam);
    let inclusion_total = user_gas - gamma_t;

    let mut taken = T::zero();
    let sub_blocks = (0..pfo.n)
        .map(|i| {
            let index = i + 1;
            let ql = if index < m || m == pfo.n + 1 {
                T::zero()
            } else {
                let q = positive_part(residual[i].min(inclusion_total - taken));
                taken = taken + residual[i];
                q
            };
            let price = if index < m && v > T::zero() {
                params.demand.inverse_clamped(cumulative[i] / v).max(bar_g)
            } else {
                bar_g
            };
            PfoSubBlock {
                index,
                spam_count: spam[i],
                priority_user_gas: priority[i],
                inclusion_user_gas: ql,
                residual: residual[i],
                price,
            }
        })
        .collect();
    Ok(Fill {
        sub_blocks,
        first_inclusion: m,
        post_spam_capacity: post_spam,
        user_gas,
    })
}

/// Constants of one top-down pass at a fixed `ḡ`.
struct PassContext<'a, T> {
    params: &'a MarketParams<T>,
    c: T,
    s: T,
    k: T,
    v: T,
    bar_g: T,
    priority_demand: T,
    inclusion_demand: T,
}

impl<'a, T: Scalar> PassContext<'a, T> {
    fn new(params: &'a MarketParams<T>, pfo: &PfoParams<T>, bar_g: T) -> Self {
        let d = params.demand.value_unchecked(bar_g);
        Self {
            params,
            c: pfo.sub_capacity(params.capacity),
            s: params.spam_gas,
            k: params.opportunity_per_gas(),
            v: pfo.v,
            bar_g,
            priority_demand: pfo.v * d,
            inclusion_demand: (T::one() - pfo.v) * d,
        }
    }
}

/// What earlier sub-blocks leave behind for the next one.
///
/// Inclusion-only gas in sub-block `i` equals
/// `min{L_i, (1 - v) D(ḡ) - Σ_{j=m}^{i-1} L_j}₊`, which depends on earlier
/// sub-blocks only, so one pass evaluates each sub-block in O(1).
#[derive(Debug, Clone, Copy)]
struct PassState<T> {
    gamma_t: T,
    inclusion_started: bool,
    residual_since_start: T,
    /// Opportunity mass still live when the next sub-block starts executing.
    spill: T,
}

#[derive(Debug, Clone, Copy)]
struct SubFill<T> {
    qt: T,
    ql: T,
    residual: T,
    price: T,
}

impl<T: Scalar> PassState<T> {
    fn top() -> Self {
        Self {
            gamma_t: T::zero(),
            inclusion_started: false,
            residual_since_start: T::zero(),
            spill: T::zero(),
        }
    }

    fn fill(&self, ctx: &PassContext<T>, spam: T) -> SubFill<T> {
        let room = positive_part(ctx.c - spam * ctx.s);
        let qt = positive_part(room.min(ctx.priority_demand - self.gamma_t));
        let residual = positive_part(room - qt);
        let started = self.inclusion_started || residual > T::zero();
        let ql = if started {
            positive_part(residual.min(ctx.inclusion_demand - self.residual_since_start))
        } else {
            T::zero()
        };
        let price = if !started && ctx.v > T::zero() {
            ctx.params.demand.inverse_clamped((self.gamma_t + qt) / ctx.v).max(ctx.bar_g)
        } else {
            ctx.bar_g
        };
        SubFill { qt, ql, residual, price }
    }

    fn utility(&self, ctx: &PassContext<T>, spam: T) -> T {
        let f = self.fill(ctx, spam);
        let q = f.qt + f.ql;
        ctx.k * (q * spam / (spam + T::one()) + self.spill) - spam * ctx.s * f.price
    }

    fn advance(&mut self, ctx: &PassContext<T>, spam: T) -> SubFill<T> {
        let f = self.fill(ctx, spam);
        self.gamma_t = self.gamma_t + f.qt;
        if self.inclusion_started || f.residual > T::zero() {
            self.inclusion_started = true;
            self.residual_since_start = self.residual_since_start + f.residual;
        }
        let q = f.qt + f.ql;
        self.spill = if spam > T::zero() {
            q / (spam + T::one())
        } else {
            self.spill + q
        };
        f
    }

    /// Zero-profit spam count of the next sub-block.
    fn solve_next(&self, ctx: &PassContext<T>, cfg: &SolverConfig<T>) -> Result<T> {
        let upper = ctx.c / ctx.s;
        let (mut f, at_zero): (Box<dyn FnMut(T) -> Result<T>>, T) = if self.spill > T::zero() {
            // spillover alone makes the first unit profitable
            (Box::new(|x| Ok(self.utility(ctx, x))), ctx.k * self.spill)
        } else {
            let f0 = self.fill(ctx, T::zero());
            let limit = ctx.k * (f0.qt + f0.ql) - ctx.s * f0.price;
            (Box::new(|x| Ok(self.utility(ctx, x) / x)), limit)
        };
        match first_descending_crossing(&mut f, T::zero(), upper, cfg.scan_points, Some(at_zero))? {
            Crossing::Bracket { lo, hi } => bisect_descending(&mut f, lo, hi, cfg.root_tol, cfg.max_bisection),
            Crossing::PositiveAtEnd => Ok(upper),
            Crossing::NonPositive => Ok(T::zero()),
        }
    }
}

/// Spillover-adjusted spam utility of sub-block `i` (1-based) holding `spam`,
/// with the earlier sub-blocks fixed at `earlier`.
pub fn subblock_utility<T: Scalar>(
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    bar_g: T,
    earlier: &[T],
    spam: T,
) -> Result<T> {
    pfo.validate()?;
    if earlier.len() >= pfo.n {
        return Err(ModelError::Argument(format!(
            "sub-block {} out of range 1..={}",
            earlier.len() + 1,
            pfo.n
        )));
    }
    let ctx = PassContext::new(params, pfo, bar_g);
    let upper = ctx.c / ctx.s;
    if !(spam >= T::zero() && spam <= upper * (T::one() + T::lit(1e-12))) {
        return Err(ModelError::InfeasibleSpam {
            spam_gas: (spam * ctx.s).as_f64(),
            capacity: ctx.c.as_f64(),
        });
    }
    let mut state = PassState::top();
    for &x in earlier {
        state.advance(&ctx, x);
    }
    Ok(state.utility(&ctx, spam))
}

/// Top-down zero-profit spam profile at a fixed `ḡ`.
pub fn spam_profile<T: Scalar>(
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    bar_g: T,
    cfg: &SolverConfig<T>,
) -> Result<Vec<T>> {
    let ctx = PassContext::new(params, pfo, bar_g);
    let mut state = PassState::top();
    let mut profile = Vec::with_capacity(pfo.n);
    for _ in 0..pfo.n {
        let x = state.solve_next(&ctx, cfg)?;
        state.advance(&ctx, x);
        profile.push(x);
    }
    Ok(profile)
}

/// Block clearing price implied by a spam profile.
fn implied_price<T: Scalar>(params: &MarketParams<T>, pfo: &PfoParams<T>, spam: &[T]) -> T {
    let c = pfo.sub_capacity(params.capacity);
    let post_spam = spam
        .iter()
        .fold(T::zero(), |acc, &x| acc + positive_part(c - x * params.spam_gas));
    params.price_floor.max(params.demand.inverse_clamped(post_spam))
}

/// Solved priority-fee-ordering market.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfoEquilibrium<T> {
    pub sub_blocks: Vec<PfoSubBlock<T>>,
    pub bar_g: T,
    pub total_spam: T,
    pub total_user_gas: T,
    pub converged: bool,
    pub outer_iterations: usize,
    /// `|ḡ - max{gmin, P(A)}|` at the reported `ḡ`.
    pub residual: T,
    /// The damped iteration stalled and the residual was bisected instead.
    pub used_fallback: bool,
    /// Other fixed points found by the fallback, above the reported one.
    pub alternative_prices: Vec<T>,
}

impl<T: Scalar> PfoEquilibrium<T> {
    pub fn spam_gas(&self, spam_gas: T) -> T {
        self.total_spam * spam_gas
    }

    pub fn total_gas(&self, spam_gas: T) -> T {
        self.total_user_gas + self.spam_gas(spam_gas)
    }

    pub fn spam_profile(&self) -> Vec<T> {
        self.sub_blocks.iter().map(|b| b.spam_count).collect()
    }
}

fn assemble<T: Scalar>(
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    bar_g: T,
    spam: Vec<T>,
    outer_iterations: usize,
    converged: bool,
    used_fallback: bool,
    alternative_prices: Vec<T>,
) -> Result<PfoEquilibrium<T>> {
    let residual = (bar_g - implied_price(params, pfo, &spam)).abs();
    let fill = fill_block(&spam, bar_g, params, pfo)?;
    let total_spam = spam.iter().fold(T::zero(), |a, &x| a + x);
    let total_user_gas = fill.sub_blocks.iter().fold(T::zero(), |a, b| a + b.user_gas());
    Ok(PfoEquilibrium {
        sub_blocks: fill.sub_blocks,
        bar_g,
        total_spam,
        total_user_gas,
        converged,
        outer_iterations,
        residual,
        used_fallback,
        alternative_prices,
    })
}

fn fixed_point_tol<T: Scalar>(cfg: &SolverConfig<T>, g: T) -> T {
    cfg.fixed_point_tol * T::one().max(g)
}

/// Solves the sub-block spam profile and the block clearing price jointly.
///
/// Damped iteration from the spam-free price; if it does not settle, the
/// residual `ḡ - ḡ'(ḡ)` is scanned over `[gmin, P(0)]` and every sign change
/// bisected. The lowest fixed point is reported, others are listed.
pub fn solve_pfo<T: Scalar>(
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<PfoEquilibrium<T>> {
    params.validate()?;
    pfo.validate()?;
    cfg.validate()?;
    if !(params.price_floor > T::zero()) {
        return Err(ModelError::domain("price floor", params.price_floor.as_f64(), "gmin > 0"));
    }
    let map = |g: T| -> Result<(Vec<T>, T)> {
        let profile = spam_profile(params, pfo, g, cfg)?;
        let next = implied_price(params, pfo, &profile);
        Ok((profile, next))
    };

    let mut g = counterfactual(params).price;
    for it in 1..=cfg.max_outer_iterations {
        let (profile, next) = map(g)?;
        if (next - g).abs() <= fixed_point_tol(cfg, g) {
            return assemble(params, pfo, g, profile, it, true, false, Vec::new());
        }
        g = g + cfg.damping * (next - g);
    }
    fallback(params, pfo, cfg, &map)
}

fn fallback<T, F>(params: &MarketParams<T>, pfo: &PfoParams<T>, cfg: &SolverConfig<T>, map: &F) -> Result<PfoEquilibrium<T>>
where
    T: Scalar,
    F: Fn(T) -> Result<(Vec<T>, T)>,
{
    let lo = params.price_floor;
    let top = params
        .demand
        .choke_price()
        .unwrap_or_else(|| params.demand.inverse_clamped(params.capacity * T::lit(1e-9)));
    let hi = top.max(lo);
    let residual = |g: T| -> Result<T> { Ok(g - map(g)?.1) };
    let points = 4 * cfg.scan_points;
    let mut candidates: Vec<T> = Vec::new();
    let mut evals = 0usize;
    let mut prev_g = lo;
    let mut prev_r = residual(lo)?;
    if prev_r == T::zero() {
        candidates.push(lo);
    }
    for k in 1..=points {
        let g = if k == points {
            hi
        } else {
            lo + (hi - lo) * T::from_count(k) / T::from_count(points)
        };
        let r = residual(g)?;
        evals += 1;
        if r == T::zero() {
            candidates.push(g);
        } else if prev_r != T::zero() && (prev_r < T::zero()) != (r < T::zero()) {
            // orient so the bisected function is positive on the left
            let sign = if prev_r > T::zero() { T::one() } else { -T::one() };
            let mut f = |x: T| -> Result<T> { Ok(sign * residual(x)?) };
            let root = bisect_descending(&mut f, prev_g, g, cfg.root_tol * T::one().max(g), cfg.max_bisection)?;
            candidates.push(root);
        }
        prev_g = g;
        prev_r = r;
    }
    if candidates.is_empty() {
        return Err(ModelError::NonConvergence {
            solver: "block clearing price",
            detail: "residual has no sign change on the price range".into(),
        });
    }
    let mut scored: Vec<(T, T)> = candidates
        .into_iter()
        .map(|g| residual(g).map(|r| (g, r.abs())))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let accepted: Vec<T> = scored
        .iter()
        .filter(|(g, r)| *r <= T::lit(1e-6) * T::one().max(*g))
        .map(|(g, _)| *g)
        .collect();
    let (primary, converged, alternatives) = match accepted.split_first() {
        Some((&first, rest)) => (first, true, rest.to_vec()),
        None => {
            let best = scored
                .iter()
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(g, _)| *g)
                .unwrap_or(lo);
            (best, false, Vec::new())
        }
    };
    let (profile, _) = map(primary)?;
    assemble(
        params,
        pfo,
        primary,
        profile,
        cfg.max_outer_iterations + evals,
        converged,
        true,
        alternatives,
    )
}

/// Welfare, revenue and externality of one filled block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PfoLevels<T> {
    pub user_welfare: T,
    pub revenue: T,
    pub externality: T,
}

/// Levels of a block filled at clearing price `bar_g`.
///
/// Priority users in sub-block `i` hold valuations `P(q / v)` over
/// `[Γ_{i-1}, Γ_i]` and pay `g_i`; inclusion-only users hold `P(q / (1 - v))`
/// over the admitted quantity and pay `ḡ`.
pub fn pfo_levels<T: Scalar>(
    sub_blocks: &[PfoSubBlock<T>],
    bar_g: T,
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    costs: &CostParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<PfoLevels<T>> {
    let demand = &params.demand;
    let v = pfo.v;
    let integral = |z: T| demand.inverse_integral(z, cfg.quadrature_tol);
    let mut welfare = T::zero();
    let mut revenue = T::zero();
    let mut total = T::zero();
    let mut gamma = T::zero();
    let mut inclusion = T::zero();
    let mut prev_integral = T::zero();
    for b in sub_blocks {
        if v > T::zero() && b.priority_user_gas > T::zero() {
            let next = gamma + b.priority_user_gas;
            let upper = integral((next / v).min(demand.intercept()))?;
            welfare = welfare + v * (upper - prev_integral) - b.price * b.priority_user_gas;
            prev_integral = upper;
            gamma = next;
        }
        inclusion = inclusion + b.inclusion_user_gas;
        let gas = b.user_gas() + b.spam_gas(params.spam_gas);
        revenue = revenue + b.price * gas;
        total = total + gas;
    }
    if v < T::one() && inclusion > T::zero() {
        let w = T::one() - v;
        welfare = welfare + w * integral((inclusion / w).min(demand.intercept()))? - bar_g * inclusion;
    }
    Ok(PfoLevels {
        user_welfare: welfare,
        revenue,
        externality: externality(costs, params.capacity, total)?,
    })
}

/// Spam-free block under the same ordering rule.
pub fn no_spam_fill<T: Scalar>(params: &MarketParams<T>, pfo: &PfoParams<T>) -> Result<(T, Fill<T>)> {
    let bar_g = counterfactual(params).price;
    let fill = fill_block(&vec![T::zero(); pfo.n], bar_g, params, pfo)?;
    Ok((bar_g, fill))
}

/// Spam-world and spam-free metrics of a solved market.
pub fn pfo_metrics<T: Scalar>(
    eq: &PfoEquilibrium<T>,
    params: &MarketParams<T>,
    pfo: &PfoParams<T>,
    costs: &CostParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<MetricsReport<T>> {
    let with = pfo_levels(&eq.sub_blocks, eq.bar_g, params, pfo, costs, cfg)?;
    let (g0, fill0) = no_spam_fill(params, pfo)?;
    let without = pfo_levels(&fill0.sub_blocks, g0, params, pfo, costs, cfg)?;
    Ok(MetricsReport::from_levels(
        with.user_welfare,
        with.revenue,
        with.externality,
        without.user_welfare,
        without.revenue,
        without.externality,
    ))
}

/// Cumulative spam-gas share against normalised position in the block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpamLocation<T> {
    /// `(position, share)` at the start of the block and after each sub-block;
    /// the curve is linear in between.
    pub points: Vec<(T, T)>,
    pub no_spam: bool,
}

pub fn spam_location_cdf<T: Scalar>(eq: &PfoEquilibrium<T>, spam_gas: T) -> SpamLocation<T> {
    let total_gas = eq.total_gas(spam_gas);
    let total_spam = eq.spam_gas(spam_gas);
    let mut points = Vec::with_capacity(eq.sub_blocks.len() + 1);
    points.push((T::zero(), T::zero()));
    let (mut gas, mut spam) = (T::zero(), T::zero());
    for b in &eq.sub_blocks {
        gas = gas + b.user_gas() + b.spam_gas(spam_gas);
        spam = spam + b.spam_gas(spam_gas);
        let x = if total_gas > T::zero() { (gas / total_gas).min(T::one()) } else { T::zero() };
        let y = if total_spam > T::zero() { (spam / total_spam).min(T::one()) } else { T::zero() };
        points.push((x, y));
    }
    SpamLocation {
        points,
        no_spam: !(total_spam > T::zero()),
    }
}

/// Expected opportunity value captured by the spam of each sub-block, given
/// its spam count and user gas; zero for sub-blocks without spam.
pub fn expected_capture_values<T: Scalar>(spam: &[T], user_gas: &[T], per_gas: T) -> Result<Vec<T>> {
    if spam.len() != user_gas.len() {
        return Err(ModelError::Argument("spam and user gas profiles differ in length".into()));
    }
    let mut spill = T::zero();
    Ok(spam
        .iter()
        .zip(user_gas)
        .map(|(&x, &q)| {
            if x > T::zero() {
                let value = per_gas * (q * x / (x + T::one()) + spill);
                spill = q / (x + T::one());
                value
            } else {
                spill = spill + q;
                T::zero()
            }
        })
        .collect())
}

/// One capacity of a PFO sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfoSweepRow<T> {
    pub capacity: T,
    pub equilibrium: PfoEquilibrium<T>,
    pub metrics: MetricsReport<T>,
}

pub fn sweep_bmax_pfo<T: Scalar>(
    template: &MarketParams<T>,
    pfo: &PfoParams<T>,
    costs: &CostParams<T>,
    grid: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Vec<PfoSweepRow<T>>> {
    if grid.is_empty() {
        return Err(ModelError::Argument("capacity grid is empty".into()));
    }
    grid.par_iter()
        .map(|&capacity| {
            let params = template.with_capacity(capacity)?;
            let equilibrium = solve_pfo(&params, pfo, cfg)?;
            let metrics = pfo_metrics(&equilibrium, &params, pfo, costs, cfg)?;
            Ok(PfoSweepRow {
                capacity,
                equilibrium,
                metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandCurve;
    use crate::equilibrium::{solve, spam_utility};

    fn fig2(bmax: f64) -> MarketParams<f64> {
        MarketParams::new(DemandCurve::linear(1200.0_f64, 6.0).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
    }

    fn cfg() -> SolverConfig<f64> {
        SolverConfig::default()
    }

    #[test]
    fn fill_without_spam() {
        let p = fig2(1000.0);
        let g = 200.0 / 6.0;
        let f = fill_block(&[0.0, 0.0], g, &p, &PfoParams::new(2, 1.0).unwrap()).unwrap();
        assert_eq!(f.first_inclusion, 3);
        assert!((f.sub_blocks[0].priority_user_gas - 500.0).abs() < 1e-9);
        assert!((f.sub_blocks[1].priority_user_gas - 500.0).abs() < 1e-9);
        assert!((f.sub_blocks[0].price - 700.0 / 6.0).abs() < 1e-9);
        assert!((f.sub_blocks[1].price - g).abs() < 1e-9);

        let f = fill_block(&[0.0, 0.0], g, &p, &PfoParams::new(2, 0.0).unwrap()).unwrap();
        assert_eq!(f.first_inclusion, 1);
        assert!((f.sub_blocks[0].inclusion_user_gas - 500.0).abs() < 1e-9);
        assert!((f.sub_blocks[1].inclusion_user_gas - 500.0).abs() < 1e-9);
        assert!(f.sub_blocks.iter().all(|b| b.price == g));
    }

    #[test]
    fn spam_full_sub_block() {
        let p = fig2(1000.0);
        let f = fill_block(&[25.0, 0.0], 40.0, &p, &PfoParams::new(2, 1.0).unwrap()).unwrap();
        assert_eq!(f.sub_blocks[0].priority_user_gas, 0.0);
        assert_eq!(f.sub_blocks[0].residual, 0.0);
        assert!(fill_block(&[26.0, 0.0], 40.0, &p, &PfoParams::new(2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn incremental_pass_matches_fill_block() {
        let p = fig2(1000.0);
        for v in [0.0, 0.3, 0.7, 1.0] {
            let pfo = PfoParams::new(5, v).unwrap();
            for g in [20.0, 35.0, 60.0] {
                let spam = [0.0, 3.5, 0.0, 10.0, 1.25];
                let full = fill_block(&spam, g, &p, &pfo).unwrap();
                let ctx = PassContext::new(&p, &pfo, g);
                let mut st = PassState::top();
                for (b, &x) in full.sub_blocks.iter().zip(&spam) {
                    let f = st.advance(&ctx, x);
                    assert!((f.qt - b.priority_user_gas).abs() < 1e-9);
                    assert!((f.ql - b.inclusion_user_gas).abs() < 1e-9, "v={v} g={g} i={}", b.index);
                    assert!((f.price - b.price).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_sub_block_utility_is_random_ordering_utility() {
        // at the spam-free fixed point price both models see the same block
        let p = fig2(1000.0);
        let pfo = PfoParams::new(1, 1.0).unwrap();
        for x in [0.5, 1.0, 3.0, 10.0, 40.0] {
            let g = p.price_floor.max(p.demand.inverse(1000.0 - 20.0 * x).unwrap());
            let u = subblock_utility(&p, &pfo, g, &[], x).unwrap();
            assert!((u - spam_utility(&p, x).unwrap()).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn spillover_utility_limit() {
        let p = fig2(1000.0);
        let pfo = PfoParams::new(2, 1.0).unwrap();
        let g = 200.0 / 6.0;
        let u = subblock_utility(&p, &pfo, g, &[0.0], 1e-12).unwrap();
        assert!((u - 2500.0).abs() < 1e-6);
        let top = subblock_utility(&p, &pfo, g, &[], 1e-12).unwrap();
        assert!(top.abs() < 1e-6);
        assert!(subblock_utility(&p, &pfo, g, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn one_sub_block_matches_random_ordering() {
        for bmax in [400.0, 1000.0, 1330.0, 1500.0] {
            for v in [0.0, 0.5, 1.0] {
                let p = fig2(bmax);
                let eq = solve_pfo(&p, &PfoParams::new(1, v).unwrap(), &cfg()).unwrap();
                let ro = solve(&p).unwrap();
                assert!(eq.converged);
                assert!((eq.total_spam - ro.spam_count).abs() < 1e-6, "{bmax} {v}: {} vs {}", eq.total_spam, ro.spam_count);
                assert!((eq.bar_g - ro.clearing_price).abs() < 1e-6);
            }
        }
        let eq = solve_pfo(&fig2(1000.0), &PfoParams::new(1, 1.0).unwrap(), &cfg()).unwrap();
        assert!((eq.total_spam - 3.951_10).abs() < 1e-5);
        assert!((eq.bar_g - 46.5037).abs() < 1e-4);
    }

    #[test]
    fn capture_values_of_two_sub_blocks() {
        let v = expected_capture_values(&[1.0, 1.0], &[500.0, 500.0], 5.0).unwrap();
        assert_eq!(v, vec![1250.0, 2500.0]);
        let v = expected_capture_values(&[0.0, 2.0], &[300.0, 600.0], 5.0).unwrap();
        assert_eq!(v, vec![0.0, 5.0 * (400.0 + 300.0)]);
    }

    #[test]
    fn location_curves() {
        let p = fig2(1000.0);
        let pfo = PfoParams::new(4, 0.0).unwrap();
        let uniform = assemble(&p, &pfo, 40.0, vec![2.0; 4], 1, true, false, vec![]).unwrap();
        let cdf = spam_location_cdf(&uniform, 20.0);
        for (x, y) in &cdf.points {
            assert!((x - y).abs() < 1e-12);
        }
        let last = assemble(&p, &pfo, 40.0, vec![0.0, 0.0, 0.0, 2.0], 1, true, false, vec![]).unwrap();
        let cdf = spam_location_cdf(&last, 20.0);
        assert!(cdf.points[..4].iter().all(|&(_, y)| y == 0.0));
        assert_eq!(cdf.points[4], (1.0, 1.0));
        let none = assemble(&p, &pfo, 40.0, vec![0.0; 4], 1, true, false, vec![]).unwrap();
        assert!(spam_location_cdf(&none, 20.0).no_spam);
    }

    #[test]
    fn one_sub_block_metrics_match_random_ordering() {
        let p = fig2(1000.0);
        let costs = CostParams::gas_units();
        let ro = crate::metrics::report(&p, &costs).unwrap();
        for v in [0.0, 0.4, 1.0] {
            let pfo = PfoParams::new(1, v).unwrap();
            let eq = solve_pfo(&p, &pfo, &cfg()).unwrap();
            let m = pfo_metrics(&eq, &p, &pfo, &costs, &cfg()).unwrap();
            assert!((m.user_welfare - ro.user_welfare).abs() < 1e-3, "{v}");
            assert!((m.revenue - ro.revenue).abs() < 1e-3);
            assert!((m.user_welfare0 - ro.user_welfare0).abs() < 1e-6);
            assert!((m.revenue0 - ro.revenue0).abs() < 1e-6);
        }
    }
}
