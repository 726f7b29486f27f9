mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use spamlab_core::design_rules::{
    choose_bmax_mmus, choose_gmin_baseline, choose_gmin_refined, entry_threshold_price, marginal_user_share, mu_user,
};
use spamlab_core::equilibrium::{b_plat, solve_with};
use spamlab_core::mc_oracle::{validate, McConfig};
use spamlab_core::metrics::{report_with, sweep_bmax};
use spamlab_core::numeric::step_grid;
use spamlab_core::pfo::{pfo_metrics, solve_pfo, spam_location_cdf, sweep_bmax_pfo};
use spamlab_core::scaling::sweep_lambda;
use spamlab_core::{MetricsReport64, ModelError, OpportunityConvention, PfoEquilibrium64, PfoParams64, ScalingRule};

use output::{emit, render_json, Cell, Table};
use scenario::{Loaded, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "spamlab", version, about = "Spam and MEV equilibrium under random and priority-fee ordering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Io {
    /// Scenario JSON; the reference market is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct Grid {
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

impl Grid {
    /// Grid from the flags, or `None` when none were given.
    fn values(&self, default_step: f64) -> Result<Option<Vec<f64>>, Failure> {
        match (self.from, self.to, self.step) {
            (None, None, None) => Ok(None),
            (Some(from), Some(to), step) => Ok(Some(step_grid(from, to, step.unwrap_or(default_step))?)),
            _ => Err(Failure::Usage("--from and --to must be given together".into())),
        }
    }
}

#[derive(Args, Clone, Copy)]
struct PfoFlags {
    /// Number of sub-blocks (overrides the config).
    #[arg(long)]
    n: Option<usize>,
    /// Share of each sub-block reserved for priority ordering (overrides the config).
    #[arg(long)]
    v: Option<f64>,
}

impl PfoFlags {
    fn params(&self, loaded: &Loaded) -> Result<PfoParams64, Failure> {
        Ok(PfoParams64::new(self.n.unwrap_or(loaded.pfo.n), self.v.unwrap_or(loaded.pfo.v))?)
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum RuleArg {
    Plateau,
    Mmus,
    Pfo,
}

#[derive(Copy, Clone, ValueEnum)]
enum D0Arg {
    Scaled,
    Unscaled,
}

#[derive(Subcommand)]
enum Command {
    /// Random-ordering equilibrium at the configured capacity (JSON).
    Solve {
        #[command(flatten)]
        io: Io,
    },
    /// Welfare, revenue and externality with and without spam (JSON).
    Metrics {
        #[command(flatten)]
        io: Io,
    },
    /// Equilibrium and metrics over a capacity grid (CSV).
    SweepBmax {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 200.0)]
        from: f64,
        #[arg(long, default_value_t = 1600.0)]
        to: f64,
        #[arg(long, default_value_t = 10.0)]
        step: f64,
    },
    /// Minimum-marginal-user-share capacity, optionally over a price-floor grid (CSV).
    DesignBmax {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 0.6)]
        eta: f64,
        #[command(flatten)]
        grid: Grid,
    },
    /// Baseline and refined price floors at the configured capacity (JSON).
    DesignGmin {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 0.6)]
        eta: f64,
    },
    /// Priority-fee ordering: one solve (JSON) or a capacity sweep (CSV).
    Pfo {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        pfo: PfoFlags,
        #[command(flatten)]
        grid: Grid,
    },
    /// Cumulative spam share against position in the block (CSV).
    PfoCdf {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        pfo: PfoFlags,
    },
    /// Spam share of included gas as demand scales (CSV).
    Scale {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value = "plateau")]
        rule: RuleArg,
        #[arg(long, default_value_t = 0.6)]
        eta: f64,
        #[command(flatten)]
        pfo: PfoFlags,
        /// First scale of the grid.
        #[arg(long, default_value_t = 1.0)]
        from: f64,
        #[arg(long, default_value_t = 50.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// How the opportunity is normalised after scaling.
        #[arg(long, value_enum, default_value = "unscaled")]
        scaled_d0: D0Arg,
    },
    /// Monte Carlo checks of the closed forms; exits 0 iff every check passes.
    Validate {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(ScenarioError),
    Model(ModelError),
    Output(std::io::Error),
    /// Output was written but some solve did not converge or a check failed.
    Unsettled(String),
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Model(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Output(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Model(ModelError::NonConvergence { .. }) | Failure::Unsettled(_) => 1,
            _ => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Unsettled(m) => m.clone(),
            Failure::Config(e) => e.to_string(),
            Failure::Model(e) => e.to_string(),
            Failure::Output(e) => format!("cannot write output: {e}"),
        }
    }
}

fn load(io: &Io) -> Result<Loaded, Failure> {
    let scenario = match &io.config {
        Some(path) => Scenario::from_path(path)?,
        None => Scenario::default(),
    };
    Ok(scenario.load()?)
}

fn metrics_json(m: &MetricsReport64) -> Value {
    json!({
        "w_user": m.user_welfare,
        "revenue": m.revenue,
        "externality": m.externality,
        "w_user0": m.user_welfare0,
        "revenue0": m.revenue0,
        "externality0": m.externality0,
        "delta_w": m.delta_welfare,
        "delta_r": m.delta_revenue,
        "delta_e": m.delta_externality,
        "w_plus_r": m.welfare_plus_revenue(),
        "w_plus_r0": m.welfare_plus_revenue0(),
    })
}

const METRIC_COLUMNS: [&str; 11] = [
    "w_user",
    "revenue",
    "externality",
    "w_user0",
    "revenue0",
    "externality0",
    "delta_w",
    "delta_r",
    "delta_e",
    "w_plus_r",
    "w_plus_r0",
];

fn metric_cells(m: &MetricsReport64) -> Vec<Cell> {
    vec![
        m.user_welfare.into(),
        m.revenue.into(),
        m.externality.into(),
        m.user_welfare0.into(),
        m.revenue0.into(),
        m.externality0.into(),
        m.delta_welfare.into(),
        m.delta_revenue.into(),
        m.delta_externality.into(),
        m.welfare_plus_revenue().into(),
        m.welfare_plus_revenue0().into(),
    ]
}

fn cmd_solve(io: &Io) -> Result<(), Failure> {
    let l = load(io)?;
    let eq = solve_with(&l.market, &l.solver)?;
    let plateau = b_plat(&l.market).ok();
    let v = json!({
        "bmax": l.market.capacity,
        "regime": eq.regime.as_str(),
        "spam_count": eq.spam_count,
        "clearing_price": eq.clearing_price,
        "user_gas": eq.user_gas,
        "spam_gas": eq.spam_gas,
        "total_gas": eq.total_gas,
        "spam_share": eq.spam_share(),
        "opportunity": eq.opportunity,
        "b_plat": plateau,
    });
    Ok(emit(io.out.as_deref(), &render_json(v))?)
}

fn cmd_metrics(io: &Io) -> Result<(), Failure> {
    let l = load(io)?;
    let m = report_with(&l.market, &l.costs, &l.solver)?;
    let mut v = metrics_json(&m);
    v["bmax"] = json!(l.market.capacity);
    Ok(emit(io.out.as_deref(), &render_json(v))?)
}

fn cmd_sweep_bmax(io: &Io, from: f64, to: f64, step: f64) -> Result<(), Failure> {
    let l = load(io)?;
    let grid = step_grid(from, to, step)?;
    let rows = sweep_bmax(&l.market, &l.costs, &grid, &l.solver)?;
    let lead = [
        "bmax",
        "regime",
        "spam_count",
        "clearing_price",
        "user_gas",
        "spam_gas",
        "total_gas",
        "spam_share",
    ];
    let mut table = Table::new(lead.into_iter().chain(METRIC_COLUMNS).chain(["m_user"]));
    for r in &rows {
        let eq = &r.equilibrium;
        let m_user = marginal_user_share(&l.market.with_capacity(r.capacity)?, &l.solver)?;
        let mut row: Vec<Cell> = vec![
            r.capacity.into(),
            eq.regime.as_str().into(),
            eq.spam_count.into(),
            eq.clearing_price.into(),
            eq.user_gas.into(),
            eq.spam_gas.into(),
            eq.total_gas.into(),
            eq.spam_share().into(),
        ];
        row.extend(metric_cells(&r.metrics));
        row.push(m_user.into());
        table.push(row);
    }
    Ok(emit(io.out.as_deref(), &table.render())?)
}

fn cmd_design_bmax(io: &Io, eta: f64, grid: &Grid) -> Result<(), Failure> {
    let l = load(io)?;
    let floors = grid.values(1.0)?.unwrap_or_else(|| vec![l.market.price_floor]);
    let mut table = Table::new(["gmin", "eta", "b_plat", "bmax_star", "share", "non_monotone"]);
    for g in floors {
        let market = l.market.with_floor(g)?;
        let c = choose_bmax_mmus(&market, eta, &l.solver)?;
        table.push(vec![
            g.into(),
            eta.into(),
            c.plateau.into(),
            c.capacity.into(),
            c.share.into(),
            c.non_monotone.into(),
        ]);
    }
    Ok(emit(io.out.as_deref(), &table.render())?)
}

fn cmd_design_gmin(io: &Io, eta: f64) -> Result<(), Failure> {
    let l = load(io)?;
    let capacity = l.market.capacity;
    let baseline = choose_gmin_baseline(&l.market, capacity)?;
    let refined = choose_gmin_refined(&l.market, capacity, eta)?;
    let v = json!({
        "bmax": capacity,
        "eta": eta,
        "gmin_baseline": baseline,
        "gmin_refined": refined.price,
        "entry_threshold": entry_threshold_price(&l.market.with_capacity(capacity)?)?,
        "share_threshold": refined.share_threshold,
        "saturated": refined.saturated,
        "mu_user": mu_user(&l.market)?.value(),
    });
    Ok(emit(io.out.as_deref(), &render_json(v))?)
}

fn pfo_json(eq: &PfoEquilibrium64, m: &MetricsReport64, capacity: f64, pfo: &PfoParams64, s: f64) -> Value {
    let blocks: Vec<Value> = eq
        .sub_blocks
        .iter()
        .map(|b| {
            json!({
                "index": b.index,
                "spam_count": b.spam_count,
                "priority_user_gas": b.priority_user_gas,
                "inclusion_user_gas": b.inclusion_user_gas,
                "price": b.price,
            })
        })
        .collect();
    json!({
        "bmax": capacity,
        "n": pfo.n,
        "v": pfo.v,
        "clearing_price": eq.bar_g,
        "spam_count": eq.total_spam,
        "user_gas": eq.total_user_gas,
        "spam_gas": eq.spam_gas(s),
        "total_gas": eq.total_gas(s),
        "converged": eq.converged,
        "outer_iterations": eq.outer_iterations,
        "residual": eq.residual,
        "used_fallback": eq.used_fallback,
        "alternative_prices": eq.alternative_prices,
        "metrics": metrics_json(m),
        "sub_blocks": blocks,
    })
}

fn unconverged(what: &str) -> Failure {
    Failure::Unsettled(format!("{what}: block clearing price did not converge"))
}

fn cmd_pfo(io: &Io, flags: &PfoFlags, grid: &Grid) -> Result<(), Failure> {
    let l = load(io)?;
    let pfo = flags.params(&l)?;
    let s = l.market.spam_gas;
    let Some(capacities) = grid.values(10.0)? else {
        let eq = solve_pfo(&l.market, &pfo, &l.solver)?;
        let m = pfo_metrics(&eq, &l.market, &pfo, &l.costs, &l.solver)?;
        emit(io.out.as_deref(), &render_json(pfo_json(&eq, &m, l.market.capacity, &pfo, s)))?;
        return if eq.converged { Ok(()) } else { Err(unconverged("pfo")) };
    };
    let rows = sweep_bmax_pfo(&l.market, &pfo, &l.costs, &capacities, &l.solver)?;
    let lead = [
        "bmax",
        "n",
        "v",
        "spam_count",
        "clearing_price",
        "user_gas",
        "spam_gas",
        "total_gas",
        "spam_share",
        "converged",
        "outer_iterations",
        "residual",
        "used_fallback",
    ];
    let mut table = Table::new(lead.into_iter().chain(METRIC_COLUMNS));
    for r in &rows {
        let eq = &r.equilibrium;
        let total = eq.total_gas(s);
        let share = if total > 0.0 { eq.spam_gas(s) / total } else { 0.0 };
        let mut row: Vec<Cell> = vec![
            r.capacity.into(),
            pfo.n.into(),
            pfo.v.into(),
            eq.total_spam.into(),
            eq.bar_g.into(),
            eq.total_user_gas.into(),
            eq.spam_gas(s).into(),
            total.into(),
            share.into(),
            eq.converged.into(),
            eq.outer_iterations.into(),
            eq.residual.into(),
            eq.used_fallback.into(),
        ];
        row.extend(metric_cells(&r.metrics));
        table.push(row);
    }
    emit(io.out.as_deref(), &table.render())?;
    match rows.iter().find(|r| !r.equilibrium.converged) {
        Some(r) => Err(unconverged(&format!("bmax = {}", r.capacity))),
        None => Ok(()),
    }
}

fn cmd_pfo_cdf(io: &Io, flags: &PfoFlags) -> Result<(), Failure> {
    let l = load(io)?;
    let pfo = flags.params(&l)?;
    let eq = solve_pfo(&l.market, &pfo, &l.solver)?;
    let cdf = spam_location_cdf(&eq, l.market.spam_gas);
    let mut table = Table::new(["position", "cumulative_spam_share"]);
    for &(x, y) in &cdf.points {
        table.push(vec![x.into(), y.into()]);
    }
    emit(io.out.as_deref(), &table.render())?;
    if cdf.no_spam {
        eprintln!("spamlab: no spam in equilibrium, the share column is all zero");
    }
    if eq.converged {
        Ok(())
    } else {
        Err(unconverged("pfo-cdf"))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_scale(
    io: &Io,
    rule: RuleArg,
    eta: f64,
    flags: &PfoFlags,
    from: f64,
    lambda_max: f64,
    step: f64,
    d0: D0Arg,
) -> Result<(), Failure> {
    let l = load(io)?;
    let rule = match rule {
        RuleArg::Plateau => ScalingRule::Plateau,
        RuleArg::Mmus => ScalingRule::Mmus { eta },
        RuleArg::Pfo => {
            let p = flags.params(&l)?;
            ScalingRule::Pfo { n: p.n, v: p.v }
        }
    };
    let convention = match d0 {
        D0Arg::Scaled => OpportunityConvention::Scaled,
        D0Arg::Unscaled => OpportunityConvention::Unscaled,
    };
    let grid = step_grid(from, lambda_max, step)?;
    let points = sweep_lambda(&l.market, rule, &grid, convention, &l.solver)?;
    let mut table = Table::new(["lambda", "rule", "bmax_used", "spam_count", "user_gas", "rho_spam"]);
    for p in &points {
        table.push(vec![
            p.lambda.into(),
            p.rule.name().into(),
            p.bmax_used.into(),
            p.spam_count.into(),
            p.user_gas.into(),
            p.rho_spam.into(),
        ]);
    }
    Ok(emit(io.out.as_deref(), &table.render())?)
}

fn cmd_validate(io: &Io, trials: u64, seed: u64) -> Result<(), Failure> {
    let l = load(io)?;
    let cfg = McConfig::new(trials, seed)?;
    let report = validate(&l.market, &cfg)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: estimate {} expected {} se {}{}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            output::fmt_num(c.estimate),
            output::fmt_num(c.expected),
            output::fmt_num(c.standard_error),
            if c.reran { " (rerun)" } else { "" }
        );
    }
    let v = serde_json::to_value(&report).expect("report serialises");
    emit(io.out.as_deref(), &render_json(v))?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Unsettled("monte carlo validation failed".into()))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { io } => cmd_solve(&io),
        Command::Metrics { io } => cmd_metrics(&io),
        Command::SweepBmax { io, from, to, step } => cmd_sweep_bmax(&io, from, to, step),
        Command::DesignBmax { io, eta, grid } => cmd_design_bmax(&io, eta, &grid),
        Command::DesignGmin { io, eta } => cmd_design_gmin(&io, eta),
        Command::Pfo { io, pfo, grid } => cmd_pfo(&io, &pfo, &grid),
        Command::PfoCdf { io, pfo } => cmd_pfo_cdf(&io, &pfo),
        Command::Scale {
            io,
            rule,
            eta,
            pfo,
            from,
            lambda_max,
            step,
            scaled_d0,
        } => cmd_scale(&io, rule, eta, &pfo, from, lambda_max, step, scaled_d0),
        Command::Validate { io, trials, seed } => cmd_validate(&io, trials, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("spamlab: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
