//! JSON scenario files. Every section is optional and falls back to the
//! reference market (linear demand 1200 - 6g, s = 20, r0 = 6000, gmin = 20).

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use spamlab_core::{CostParams64, DemandCurve64, MarketParams64, ModelError, PfoParams64, SolverConfig64};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum DemandSpec {
    Linear { d0: f64, beta: f64 },
    /// `d0 * exp(-lambda * g)`.
    Exponential { d0: f64, lambda: f64 },
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec::Linear { d0: 1200.0, beta: 6.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSpec {
    pub demand: DemandSpec,
    pub spam_gas: f64,
    pub base_opportunity: f64,
    pub price_floor: f64,
    pub capacity: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            demand: DemandSpec::default(),
            spam_gas: 20.0,
            base_opportunity: 6000.0,
            price_floor: 20.0,
            capacity: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSpec {
    pub capacity_cost: f64,
    pub execution_cost: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            capacity_cost: 0.0,
            execution_cost: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfoSpec {
    pub n: usize,
    pub v: f64,
}

impl Default for PfoSpec {
    fn default() -> Self {
        Self { n: 500, v: 1.0 }
    }
}

/// Solver overrides; missing fields keep the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub root_tol: Option<f64>,
    pub scan_points: Option<usize>,
    pub max_bisection: Option<usize>,
    pub fixed_point_tol: Option<f64>,
    pub max_outer_iterations: Option<usize>,
    pub damping: Option<f64>,
    pub quadrature_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub market: MarketSpec,
    pub costs: CostSpec,
    pub pfo: PfoSpec,
    pub solver: SolverSpec,
}

/// Parsed scenario with every parameter checked.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub market: MarketParams64,
    pub costs: CostParams64,
    pub pfo: PfoSpec,
    pub solver: SolverConfig64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("bad config: {0}")]
    Parse(String),
    #[error("bad config: {0}")]
    Invalid(#[from] ModelError),
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(&self) -> Result<Loaded, ScenarioError> {
        Ok(self.build()?)
    }

    fn build(&self) -> spamlab_core::Result<Loaded> {
        let demand = match self.market.demand {
            DemandSpec::Linear { d0, beta } => DemandCurve64::linear(d0, beta)?,
            DemandSpec::Exponential { d0, lambda } => DemandCurve64::exponential(d0, lambda)?,
        };
        let m = &self.market;
        let market = MarketParams64::new(demand, m.spam_gas, m.base_opportunity, m.price_floor, m.capacity)?;
        let costs = CostParams64::new(self.costs.capacity_cost, self.costs.execution_cost)?;
        PfoParams64::new(self.pfo.n, self.pfo.v)?;

        let s = &self.solver;
        let mut solver = SolverConfig64::default();
        if let Some(x) = s.root_tol {
            solver.root_tol = x;
        }
        if let Some(x) = s.scan_points {
            solver.scan_points = x;
        }
        if let Some(x) = s.max_bisection {
            solver.max_bisection = x;
        }
        if let Some(x) = s.fixed_point_tol {
            solver.fixed_point_tol = x;
        }
        if let Some(x) = s.max_outer_iterations {
            solver.max_outer_iterations = x;
        }
        if let Some(x) = s.damping {
            solver.damping = x;
        }
        if let Some(x) = s.quadrature_tol {
            solver.quadrature_tol = x;
        }
        solver.validate()?;

        Ok(Loaded {
            market,
            costs,
            pfo: self.pfo.clone(),
            solver,
        })
    }
}
