use spamlab_core::equilibrium::MarketParams;
use spamlab_core::metrics::{report, sweep_bmax, user_welfare, user_welfare_quadrature, CostParams};
use spamlab_core::numeric::{step_grid, SolverConfig};
use spamlab_core::DemandCurve;

fn fig2(bmax: f64) -> MarketParams<f64> {
    MarketParams::new(DemandCurve::linear(1200.0_f64, 6.0).unwrap(), 20.0, 6000.0, 20.0, bmax).unwrap()
}

#[test]
fn welfare_loss_is_largest_where_demand_meets_the_floor() {
    let grid = step_grid(200.0, 1600.0, 1.0).unwrap();
    let rows = sweep_bmax(&fig2(1000.0), &CostParams::gas_units(), &grid, &SolverConfig::default()).unwrap();
    let worst = rows
        .iter()
        .min_by(|a, b| a.metrics.delta_welfare.partial_cmp(&b.metrics.delta_welfare).unwrap())
        .unwrap();
    assert!((worst.capacity - 1080.0).abs() <= 1.0, "argmin at {}", worst.capacity);
}

#[test]
fn spam_never_helps_users_and_never_hurts_revenue() {
    let grid = step_grid(200.0, 1600.0, 10.0).unwrap();
    let rows = sweep_bmax(&fig2(1000.0), &CostParams::new(0.5, 1.0).unwrap(), &grid, &SolverConfig::default()).unwrap();
    for r in rows {
        assert!(r.metrics.delta_welfare <= 1e-9, "{}", r.capacity);
        assert!(r.metrics.delta_revenue >= -1e-9, "{}", r.capacity);
        assert!(r.metrics.delta_externality >= -1e-9, "{}", r.capacity);
    }
}

#[test]
fn exponential_welfare_by_quadrature() {
    let d = DemandCurve::exponential(1200.0_f64, 0.02).unwrap();
    for (q, g) in [(300.0, 20.0), (700.0, 25.0), (1000.0, 5.0)] {
        let closed = user_welfare(&d, q, g).unwrap();
        let quad = user_welfare_quadrature(&d, q, g, 1e-10).unwrap();
        assert!((closed - quad).abs() <= 1e-6 * closed.abs(), "{closed} vs {quad}");
    }
}

#[test]
fn capacity_cost_shifts_externality_level_only() {
    let a = report(&fig2(1000.0), &CostParams::new(0.0, 1.0).unwrap()).unwrap();
    let b = report(&fig2(1000.0), &CostParams::new(2.0, 1.0).unwrap()).unwrap();
    assert!((b.externality - a.externality - 2000.0).abs() < 1e-9);
    assert!((b.delta_externality - a.delta_externality).abs() < 1e-9);
}
