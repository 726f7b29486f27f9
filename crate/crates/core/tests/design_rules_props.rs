use proptest::prelude::*;
use spamlab_core::design_rules::{
    choose_bmax_mmus, choose_gmin_baseline, choose_gmin_refined, entry_capacity, marginal_user_share,
    marginal_user_share_fd, mu_user, UserShare,
};
use spamlab_core::equilibrium::{b_plat, solve, MarketParams};
use spamlab_core::numeric::SolverConfig;
use spamlab_core::DemandCurve;

fn fig2(bmax: f64) -> MarketParams<f64> {
    MarketParams::new(DemandCurve::linear(1200.0_f64, 6.0).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
}

fn exponential(bmax: f64) -> MarketParams<f64> {
    MarketParams::new(DemandCurve::exponential(1200.0_f64, 0.02).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
}

/// Implicit-function derivative of congested user gas in capacity.
///
/// With `Q = B - sS`, zero profit reads `kQ = P(Q)(B - Q + s)`, so
/// `dQ/dB = P / (k + P - P'(Q)(B - Q + s))`.
fn implicit_share(p: &MarketParams<f64>) -> f64 {
    let eq = solve(p).unwrap();
    let q = eq.user_gas;
    let price = p.demand.inverse(q).unwrap();
    let slope = 1.0 / p.demand.derivative(price, 1).unwrap();
    let k = p.opportunity_per_gas();
    price / (k + price - slope * (p.capacity - q + p.spam_gas))
}

fn congested_grid(template: &MarketParams<f64>, points: usize) -> Vec<f64> {
    let lo = entry_capacity(template).unwrap().unwrap();
    let hi = b_plat(template).unwrap();
    // keep finite-difference stencils (half-width 1e-3 B) clear of both kinks
    let (lo, hi) = (lo * (1.0 + 2e-3), hi * (1.0 - 2e-3));
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

#[test]
fn marginal_share_strictly_decreasing_when_congested() {
    let cfg = SolverConfig::default();
    for template in [fig2(1000.0), exponential(600.0)] {
        let shares: Vec<f64> = congested_grid(&template, 200)
            .into_iter()
            .map(|b| marginal_user_share(&template.with_capacity(b).unwrap(), &cfg).unwrap())
            .collect();
        for w in shares.windows(2) {
            assert!(w[1] < w[0], "{:?}: {} then {}", template.demand, w[0], w[1]);
        }
        assert!(shares.iter().all(|&m| m > 0.0 && m < 1.0));
    }
}

#[test]
fn marginal_share_matches_finite_difference_and_implicit_derivative() {
    let cfg = SolverConfig::default();
    for template in [fig2(1000.0), exponential(600.0)] {
        for b in congested_grid(&template, 40) {
            let p = template.with_capacity(b).unwrap();
            let m = marginal_user_share(&p, &cfg).unwrap();
            let fd = marginal_user_share_fd(&p, 1e-3, &cfg).unwrap();
            assert!((m - fd).abs() < 1e-4, "{b}: {m} vs fd {fd}");
            assert!((m - implicit_share(&p)).abs() < 1e-4, "{b}: {m} vs implicit");
        }
    }
}

#[test]
fn mmus_rule_hits_the_target_share() {
    let cfg = SolverConfig::default();
    let c = choose_bmax_mmus(&fig2(1000.0), 0.6, &cfg).unwrap();
    assert!((c.capacity - (1150.0 - 6000f64.sqrt())).abs() < 1e-3);
    assert!((c.share - 0.6).abs() < 1e-6);
    let c = choose_bmax_mmus(&exponential(600.0), 0.5, &cfg).unwrap();
    assert!(!c.non_monotone);
    assert!((c.share - 0.5).abs() < 1e-4);
}

#[test]
fn mmus_flags_curvature_failures() {
    let cfg = SolverConfig::default();
    // prices high enough to reach the region where the condition fails
    let d = DemandCurve::curvature_counterexample(1000.0_f64).unwrap();
    let p = MarketParams::new(d, 1.0, 2000.0, 1.0, 700.0).unwrap();
    let c = choose_bmax_mmus(&p, 0.5, &cfg).unwrap();
    assert!(c.non_monotone);
    assert!(c.capacity <= c.plateau);
}

#[test]
fn baseline_floor_equals_congested_price() {
    let g = choose_gmin_baseline(&fig2(1000.0), 1000.0).unwrap();
    assert!((g - solve(&fig2(1000.0)).unwrap().clearing_price).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn baseline_floor_makes_capacity_the_plateau(bmax in 150.0..1330.0_f64) {
        let g = choose_gmin_baseline(&fig2(1000.0), bmax).unwrap();
        let plateau = b_plat(&fig2(bmax).with_floor(g).unwrap()).unwrap();
        prop_assert!((plateau - bmax).abs() < 1e-6 * bmax);
    }

    #[test]
    fn refined_floor_never_below_baseline(bmax in 200.0..1600.0_f64, eta in 0.05..1.0_f64) {
        let r = choose_gmin_refined(&fig2(1000.0), bmax, eta).unwrap();
        prop_assert!(r.price >= r.baseline);
        prop_assert!(r.price <= r.baseline.max(r.entry_threshold) + 1e-12);
    }

    #[test]
    fn slack_user_share_in_unit_interval(g in 1.0..119.0_f64) {
        let p = fig2(1e6).with_floor(g).unwrap();
        match mu_user(&p).unwrap() {
            UserShare::Share(mu) => {
                prop_assert!(mu > 0.0 && mu < 1.0);
                prop_assert!((mu - 6.0 * g * g / (6.0 * g * g + 6000.0)).abs() < 1e-12);
            }
            UserShare::Undefined => prop_assert!(false, "slack floor must define the share"),
        }
    }
}
