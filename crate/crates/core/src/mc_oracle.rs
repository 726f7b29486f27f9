//! Monte Carlo and brute-force checks of the analytic results.
//!
//! Every trial draws from its own counter-based stream, so estimates do not
//! depend on how trials are split across threads. Estimates are built from
//! integer counts and are bit-identical for a fixed seed and trial count.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{solve, spam_utility, MarketParams};
use crate::error::{ModelError, Result};
use crate::pfo::expected_capture_values;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const TRIAL_MIX: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
}

impl McConfig {
    pub fn new(trials: u64, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(ModelError::Argument("trials must be at least 1".into()));
        }
        Ok(Self { trials, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
}

impl McEstimate {
    fn from_count(hits: u64, trials: u64, scale: f64) -> Self {
        let n = trials as f64;
        let p = hits as f64 / n;
        Self {
            mean: scale * p,
            standard_error: scale * (p * (1.0 - p) / n).sqrt(),
        }
    }

    /// Within `sigmas` standard errors of `expected`; exact match when the
    /// standard error is zero.
    pub fn agrees_with(&self, expected: f64, sigmas: f64) -> bool {
        let gap = (self.mean - expected).abs();
        if self.standard_error == 0.0 {
            gap <= 1e-12 * expected.abs().max(1.0)
        } else {
            gap <= sigmas * self.standard_error
        }
    }
}

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream of one trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialStream {
    key: u64,
    counter: u64,
}

impl TrialStream {
    pub fn new(seed: u64, trial: u64) -> Self {
        Self {
            key: finalize(seed ^ trial.wrapping_mul(TRIAL_MIX)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        finalize(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn count_hits<F>(cfg: &McConfig, hit: F) -> u64
where
    F: Fn(&mut TrialStream) -> bool + Sync,
{
    (0..cfg.trials)
        .into_par_iter()
        .filter(|&t| hit(&mut TrialStream::new(cfg.seed, t)))
        .count() as u64
}

/// Frequency with which one of `spam` randomly placed transactions follows
/// the opportunity.
pub fn simulate_claim_probability(spam: u64, cfg: &McConfig) -> McEstimate {
    if spam == 0 {
        return McEstimate {
            mean: 0.0,
            standard_error: 0.0,
        };
    }
    // the opportunity takes one of spam + 1 slots; only the last one escapes
    let hits = count_hits(cfg, |rng| rng.below(spam + 1) < spam);
    McEstimate::from_count(hits, cfg.trials, 1.0)
}

/// Integer spam count reached by letting entrants join one at a time while
/// the next entrant expects a nonnegative profit at post-entry prices.
pub fn best_response_entry(params: &MarketParams<f64>) -> Result<u64> {
    params.validate()?;
    // entry stops at a full block even if still profitable
    let limit = params.max_spam();
    let mut spam = 0u64;
    // each of the S + 1 entrants earns u(S + 1) / (S + 1); an entrant that
    // breaks even still enters
    let slack = 1e-9 * params.base_opportunity.max(1.0);
    while ((spam + 1) as f64) <= limit && spam_utility(params, (spam + 1) as f64)? > -slack {
        spam += 1;
    }
    Ok(spam)
}

/// Continuous equilibrium bracket `{floor(S*), ceil(S*)}`.
pub fn continuous_bracket(params: &MarketParams<f64>) -> Result<(u64, u64)> {
    let s = solve(params)?.spam_count;
    Ok((s.floor() as u64, s.ceil() as u64))
}

/// Per-sub-block capture frequencies and the opportunity value they imply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureEstimate {
    pub frequency: Vec<McEstimate>,
    /// Frequency times the opportunity value `per_gas * Σ Q_i`.
    pub value: Vec<McEstimate>,
    /// Share of trials in which no spam claimed the opportunity.
    pub escaped: McEstimate,
}

/// Places the opportunity among user gas, then in a random slot among its
/// sub-block's spam. It is claimed by later spam in the same sub-block, or
/// else by the first later sub-block carrying spam.
pub fn simulate_pfo_capture(spam: &[u64], user_gas: &[f64], per_gas: f64, cfg: &McConfig) -> Result<CaptureEstimate> {
    if spam.len() != user_gas.len() || spam.is_empty() {
        return Err(ModelError::Argument("spam and user gas profiles must be nonempty and equal length".into()));
    }
    if user_gas.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
        return Err(ModelError::Argument("user gas must be finite and nonnegative".into()));
    }
    let n = spam.len();
    let total: f64 = user_gas.iter().sum();
    if !(total > 0.0) {
        return Err(ModelError::Argument("no user gas to host the opportunity".into()));
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &q in user_gas {
        acc += q;
        cumulative.push(acc / total);
    }
    let capture = |rng: &mut TrialStream| -> Option<usize> {
        let u = rng.unit();
        let origin = cumulative.iter().position(|&c| u < c).unwrap_or(n - 1);
        let own = spam[origin];
        if rng.below(own + 1) < own {
            return Some(origin);
        }
        (origin + 1..n).find(|&j| spam[j] > 0)
    };
    let counts = (0..cfg.trials)
        .into_par_iter()
        .fold(
            || vec![0u64; n + 1],
            |mut c, t| {
                match capture(&mut TrialStream::new(cfg.seed, t)) {
                    Some(i) => c[i] += 1,
                    None => c[n] += 1,
                }
                c
            },
        )
        .reduce(
            || vec![0u64; n + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let value_scale = per_gas * total;
    Ok(CaptureEstimate {
        frequency: counts[..n].iter().map(|&c| McEstimate::from_count(c, cfg.trials, 1.0)).collect(),
        value: counts[..n]
            .iter()
            .map(|&c| McEstimate::from_count(c, cfg.trials, value_scale))
            .collect(),
        escaped: McEstimate::from_count(counts[n], cfg.trials, 1.0),
    })
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub estimate: f64,
    pub expected: f64,
    pub standard_error: f64,
    pub passed: bool,
    /// The first attempt missed and a rerun with doubled trials decided.
    pub reran: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub trials: u64,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub deterministic: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.deterministic && self.checks.iter().all(|c| c.passed)
    }
}

fn statistical_check<F>(name: String, expected: f64, cfg: &McConfig, estimate: F) -> Result<CheckResult>
where
    F: Fn(&McConfig) -> Result<McEstimate>,
{
    let first = estimate(cfg)?;
    let (est, reran) = if first.agrees_with(expected, 3.0) {
        (first, false)
    } else {
        let doubled = McConfig {
            trials: cfg.trials.saturating_mul(2),
            seed: cfg.seed,
        };
        (estimate(&doubled)?, true)
    };
    Ok(CheckResult {
        name,
        estimate: est.mean,
        expected,
        standard_error: est.standard_error,
        passed: est.agrees_with(expected, 3.0),
        reran,
    })
}

/// Claim probabilities, best-response bracketing and sub-block capture values
/// against their analytic counterparts on the default market.
pub fn validate(template: &MarketParams<f64>, cfg: &McConfig) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    for spam in [0u64, 1, 3, 12] {
        let expected = spam as f64 / (spam as f64 + 1.0);
        checks.push(statistical_check(format!("claim probability S={spam}"), expected, cfg, |c| {
            Ok(simulate_claim_probability(spam, c))
        })?);
    }

    for capacity in [400.0, 1000.0, 1500.0] {
        let params = template.with_capacity(capacity)?;
        let integer = best_response_entry(&params)?;
        let (lo, hi) = continuous_bracket(&params)?;
        checks.push(CheckResult {
            name: format!("best response bmax={capacity}"),
            estimate: integer as f64,
            expected: solve(&params)?.spam_count,
            standard_error: 0.0,
            passed: integer == lo || integer == hi,
            reran: false,
        });
    }

    let per_gas = template.opportunity_per_gas();
    let cases: [(&str, Vec<u64>, Vec<f64>); 4] = [
        ("n=1", vec![3], vec![1000.0]),
        ("n=2", vec![1, 1], vec![500.0, 500.0]),
        ("n=3", vec![0, 2, 1], vec![300.0, 400.0, 300.0]),
        ("n=3 no spam", vec![0, 0, 0], vec![300.0, 400.0, 300.0]),
    ];
    for (label, spam, gas) in cases {
        let spam_f: Vec<f64> = spam.iter().map(|&x| x as f64).collect();
        let analytic = expected_capture_values(&spam_f, &gas, per_gas)?;
        for (i, &expected) in analytic.iter().enumerate() {
            checks.push(statistical_check(
                format!("capture value {label} sub-block {}", i + 1),
                expected,
                cfg,
                |c| Ok(simulate_pfo_capture(&spam, &gas, per_gas, c)?.value[i]),
            )?);
        }
    }

    let a = simulate_claim_probability(3, cfg);
    let b = simulate_claim_probability(3, cfg);
    let c1 = simulate_pfo_capture(&[0, 2, 1], &[300.0, 400.0, 300.0], per_gas, cfg)?;
    let c2 = simulate_pfo_capture(&[0, 2, 1], &[300.0, 400.0, 300.0], per_gas, cfg)?;
    let deterministic = a.mean.to_bits() == b.mean.to_bits()
        && c1.value.iter().zip(&c2.value).all(|(x, y)| x.mean.to_bits() == y.mean.to_bits());

    Ok(ValidationReport {
        trials: cfg.trials,
        seed: cfg.seed,
        checks,
        deterministic,
    })
}
