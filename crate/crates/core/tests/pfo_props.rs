use proptest::prelude::*;
use spamlab_core::equilibrium::{solve, MarketParams};
use spamlab_core::metrics::CostParams;
use spamlab_core::numeric::SolverConfig;
use spamlab_core::pfo::{
    fill_block, no_spam_fill, pfo_levels, pfo_metrics, solve_pfo, spam_location_cdf, subblock_utility,
    PfoEquilibrium, PfoParams,
};
use spamlab_core::DemandCurve;

fn fig2(bmax: f64) -> MarketParams<f64> {
    MarketParams::new(DemandCurve::linear(1200.0_f64, 6.0).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
}

fn cfg() -> SolverConfig<f64> {
    SolverConfig::default()
}

/// Capacity, price ladder, fixed point and per-sub-block zero profit.
fn check_invariants(eq: &PfoEquilibrium<f64>, p: &MarketParams<f64>, pfo: &PfoParams<f64>) {
    assert!(eq.converged);
    let c = pfo.sub_capacity(p.capacity);
    let s = p.spam_gas;
    for b in &eq.sub_blocks {
        assert!(b.spam_count * s + b.user_gas() <= c + 1e-9, "capacity at {}", b.index);
        assert!(b.price >= eq.bar_g - 1e-12);
    }
    let m = eq
        .sub_blocks
        .iter()
        .position(|b| b.residual > 0.0)
        .unwrap_or(pfo.n);
    for w in eq.sub_blocks[..m].windows(2) {
        assert!(w[0].price >= w[1].price - 1e-12, "ladder at {}", w[1].index);
    }
    for b in &eq.sub_blocks[m..] {
        assert_eq!(b.price, eq.bar_g);
    }

    let post_spam: f64 = eq.sub_blocks.iter().map(|b| (c - b.spam_count * s).max(0.0)).sum();
    let implied = p.price_floor.max(p.demand.inverse(post_spam.min(p.demand.intercept())).unwrap());
    assert!((eq.bar_g - implied).abs() <= 1e-6 * eq.bar_g.max(1.0));
    assert!(eq.residual <= 1e-6 * eq.bar_g.max(1.0));

    let scale = p.opportunity_per_gas() * eq.total_user_gas.max(1.0);
    let profile = eq.spam_profile();
    let upper = c / s;
    for i in 0..pfo.n {
        let x = profile[i];
        let u = subblock_utility(p, pfo, eq.bar_g, &profile[..i], x).unwrap();
        if x >= upper * (1.0 - 1e-12) {
            assert!(u >= -1e-6 * scale, "corner {}: {u}", i + 1);
        } else if x > 0.0 {
            assert!(u.abs() <= 1e-6 * scale, "sub-block {}: U = {u}", i + 1);
        } else {
            let probe = subblock_utility(p, pfo, eq.bar_g, &profile[..i], 1e-6 * upper).unwrap();
            assert!(probe <= 1e-6 * scale, "idle sub-block {} would attract entry", i + 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn one_sub_block_is_random_ordering(
        d0 in 300.0..3000.0_f64,
        beta in 1.0..20.0_f64,
        s in 2.0..60.0_f64,
        r0 in 500.0..20_000.0_f64,
        gmin in 1.0..60.0_f64,
        bmax in 100.0..4000.0_f64,
        v in 0.0..=1.0_f64,
    ) {
        let p = MarketParams::new(DemandCurve::linear(d0, beta).unwrap(), s, r0, gmin, bmax).unwrap();
        let ro = solve(&p).unwrap();
        prop_assume!(!ro.spam_unbounded);
        let eq = solve_pfo(&p, &PfoParams::new(1, v).unwrap(), &cfg()).unwrap();
        prop_assert!(eq.converged);
        prop_assert!((eq.total_spam - ro.spam_count).abs() <= 1e-6 * ro.spam_count.max(1.0),
            "pfo {} vs random {}", eq.total_spam, ro.spam_count);
        prop_assert!((eq.bar_g - ro.clearing_price).abs() <= 1e-6 * ro.clearing_price.max(1.0));
    }
}

#[test]
fn priority_share_moves_spam_around_the_benchmark() {
    let p = fig2(1000.0);
    let benchmark = solve(&p).unwrap().spam_count;
    let all_priority = solve_pfo(&p, &PfoParams::new(500, 1.0).unwrap(), &cfg()).unwrap();
    let no_priority = solve_pfo(&p, &PfoParams::new(500, 0.0).unwrap(), &cfg()).unwrap();
    assert!(all_priority.total_spam < benchmark);
    assert!(no_priority.total_spam >= benchmark);
}

#[test]
fn invariants_across_capacities_and_shares() {
    for n in [2, 7, 50] {
        for v in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for bmax in [300.0, 600.0, 1000.0, 1330.0, 1600.0] {
                let p = fig2(bmax);
                let pfo = PfoParams::new(n, v).unwrap();
                let eq = solve_pfo(&p, &pfo, &cfg()).unwrap();
                check_invariants(&eq, &p, &pfo);
            }
        }
    }
}

#[test]
fn invariants_at_fine_discretisation() {
    for v in [0.0, 0.5, 1.0] {
        let p = fig2(1000.0);
        let pfo = PfoParams::new(500, v).unwrap();
        let eq = solve_pfo(&p, &pfo, &cfg()).unwrap();
        check_invariants(&eq, &p, &pfo);
    }
}

#[test]
fn spam_sits_late_when_everyone_bids_for_priority() {
    let p = fig2(1000.0);
    let eq = solve_pfo(&p, &PfoParams::new(500, 1.0).unwrap(), &cfg()).unwrap();
    let cdf = spam_location_cdf(&eq, p.spam_gas);
    assert!(!cdf.no_spam);
    for &(x, y) in &cdf.points {
        assert!(y <= x + 1e-12, "({x}, {y}) above the diagonal");
    }
}

#[test]
fn priority_demand_raises_spam_free_revenue() {
    let costs = CostParams::gas_units();
    for bmax in [400.0, 800.0, 1000.0, 1400.0] {
        let p = fig2(bmax);
        let level = |v: f64| {
            let pfo = PfoParams::new(500, v).unwrap();
            let (g0, fill) = no_spam_fill(&p, &pfo).unwrap();
            pfo_levels(&fill.sub_blocks, g0, &p, &pfo, &costs, &cfg()).unwrap()
        };
        assert!(level(1.0).revenue >= level(0.0).revenue);
    }
}

#[test]
fn welfare_plus_revenue_varies_less_than_welfare() {
    let costs = CostParams::gas_units();
    let shares = [0.0, 0.25, 0.5, 0.75, 1.0];
    for bmax in [400.0, 700.0, 1000.0, 1300.0, 1600.0] {
        let p = fig2(bmax);
        let (mut w, mut wr) = (Vec::new(), Vec::new());
        for v in shares {
            let pfo = PfoParams::new(500, v).unwrap();
            let (g0, fill) = no_spam_fill(&p, &pfo).unwrap();
            let l = pfo_levels(&fill.sub_blocks, g0, &p, &pfo, &costs, &cfg()).unwrap();
            w.push(l.user_welfare);
            wr.push(l.user_welfare + l.revenue);
        }
        let range = |x: &[f64]| x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range(&wr) <= 0.5 * range(&w), "bmax {bmax}: {} vs {}", range(&wr), range(&w));
    }
}

#[test]
fn metrics_deltas_consistent_with_levels() {
    let p = fig2(1000.0);
    let pfo = PfoParams::new(20, 0.5).unwrap();
    let eq = solve_pfo(&p, &pfo, &cfg()).unwrap();
    let m = pfo_metrics(&eq, &p, &pfo, &CostParams::gas_units(), &cfg()).unwrap();
    assert!((m.delta_welfare - (m.user_welfare - m.user_welfare0)).abs() < 1e-9);
    let total: f64 = eq.sub_blocks.iter().map(|b| b.user_gas() + b.spam_count * 20.0).sum();
    assert!((m.externality - total).abs() < 1e-9);
}

#[test]
fn fill_rejects_bad_profiles() {
    let p = fig2(1000.0);
    let pfo = PfoParams::new(2, 0.5).unwrap();
    assert!(fill_block(&[0.0], 40.0, &p, &pfo).is_err());
    assert!(fill_block(&[0.0, -1.0], 40.0, &p, &pfo).is_err());
    assert!(fill_block(&[0.0, 0.0], 10.0, &p, &pfo).is_err());
    assert!(PfoParams::new(0, 0.5).is_err());
    assert!(PfoParams::new(2, 1.5).is_err());
}
