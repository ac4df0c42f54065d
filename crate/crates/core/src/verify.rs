//! Verification suites shared by the command line and the acceptance tests.
//! Each suite runs many (n, seed) cases and collects the failing ones.

use serde::Serialize;

use crate::engine::{run_to_fixation, verify_abelian_with, verify_least_action, EngineError, Policy, RunConfig, ScriptStep};
use crate::observables::{identities_check, lazy_walk_stats, LazyWalkStats};
use crate::par::{self, Execution};
use crate::stacks::keyed_hash;

const TAG_ABELIAN: u64 = 0xAB31;
const TAG_LEAST: u64 = 0x1EA5;
const TAG_IDENT: u64 = 0x1DE7;
const TAG_WALK: u64 = 0x3A1C;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Abelian,
    LeastAction,
    Identities,
    WalkStats,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Abelian, Suite::LeastAction, Suite::Identities, Suite::WalkStats];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Abelian => "abelian",
            Suite::LeastAction => "least-action",
            Suite::Identities => "identities",
            Suite::WalkStats => "walk-stats",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub n_max: u64,
    /// Seeds per n (abelian), cases (least action, identities) or walk trials.
    pub seeds: u64,
    pub base_seed: u64,
    pub inject_fault: Option<u64>,
    pub exec: Execution,
}

impl SuiteOptions {
    pub fn new(n_max: u64, seeds: u64) -> Self {
        SuiteOptions {
            n_max,
            seeds,
            base_seed: 0,
            inject_fault: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseFailure {
    pub n: u64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: u64,
    pub failures: Vec<CaseFailure>,
    /// Walk-statistics suite only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walk: Option<LazyWalkStats>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn collect(suite: Suite, outcomes: Vec<Vec<CaseFailure>>) -> Self {
        SuiteReport {
            suite,
            cases: outcomes.len() as u64,
            failures: outcomes.into_iter().flatten().collect(),
            walk: None,
        }
    }
}

pub const ABELIAN_POLICIES: [Policy; 4] = [Policy::Leftmost, Policy::Rightmost, Policy::UniformRandom, Policy::SweepParallel];

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> SuiteReport {
    match suite {
        Suite::Abelian => abelian_suite(opts),
        Suite::LeastAction => least_action_suite(opts),
        Suite::Identities => identities_suite(opts),
        Suite::WalkStats => walk_stats_suite(opts, 10_000),
    }
}

fn config(opts: &SuiteOptions, n: u64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(n, seed);
    cfg.inject_fault = opts.inject_fault;
    cfg
}

fn engine_failure(n: u64, seed: u64, e: EngineError) -> Vec<CaseFailure> {
    vec![CaseFailure {
        n,
        seed,
        detail: format!("engine error: {e}"),
    }]
}

/// Every `n` in `1..=n_max` times `seeds` seeds, all four policies.
pub fn abelian_suite(opts: &SuiteOptions) -> SuiteReport {
    let cases: Vec<(u64, u64)> = (1..=opts.n_max)
        .flat_map(|n| (0..opts.seeds).map(move |r| (n, r)))
        .collect();
    let outcomes = par::map(&cases, opts.exec, |&(n, r)| {
        let seed = keyed_hash(opts.base_seed, &[TAG_ABELIAN, n, r]);
        let base = config(opts, n, seed).track_pairs(false);
        match verify_abelian_with(&base, &ABELIAN_POLICIES) {
            Ok(report) => report
                .mismatches
                .iter()
                .map(|m| CaseFailure {
                    n,
                    seed,
                    detail: format!(
                        "{} differs between {} and {}{}",
                        m.field,
                        m.reference,
                        m.policy,
                        m.site.map(|s| format!(" at {s}")).unwrap_or_default()
                    ),
                })
                .collect(),
            Err(e) => engine_failure(n, seed, e),
        }
    });
    SuiteReport::collect(Suite::Abelian, outcomes)
}

/// `seeds` cases. Each draws n, takes a uniformly random prefix of a
/// random-order run and compares it with a complete run under another policy.
pub fn least_action_suite(opts: &SuiteOptions) -> SuiteReport {
    let cases: Vec<u64> = (0..opts.seeds).collect();
    let outcomes = par::map(&cases, opts.exec, |&case| {
        let h = keyed_hash(opts.base_seed, &[TAG_LEAST, case]);
        let n = 1 + h % opts.n_max.max(1);
        let seed = keyed_hash(h, &[1]);
        let source = match run_to_fixation(&config(opts, n, seed).policy(Policy::UniformRandom).record_sequence(true).track_pairs(false)) {
            Ok(r) => r,
            Err(e) => return engine_failure(n, seed, e),
        };
        let sequence = source.sequence.unwrap_or_default();
        let cut = (keyed_hash(h, &[2]) % (sequence.len() as u64 + 1)) as usize;
        let mut prefix: Vec<ScriptStep> = sequence[..cut].iter().map(|&s| ScriptStep::Fire(s)).collect();
        // every fourth case also fires the origin greedily before the prefix
        if case % 4 == 3 {
            prefix.clear();
            prefix.push(ScriptStep::FireWhileLegal(crate::lattice::Site::ORIGIN));
        }
        let complete = ABELIAN_POLICIES[(case % 4) as usize].clone();
        match verify_least_action(n, seed, prefix, complete) {
            Ok(r) if r.passed() => vec![],
            Ok(r) => vec![CaseFailure {
                n,
                seed,
                detail: format!("prefix odometer exceeds complete odometer at {} sites", r.violations.len()),
            }],
            Err(e) => engine_failure(n, seed, e),
        }
    });
    SuiteReport::collect(Suite::LeastAction, outcomes)
}

/// `seeds` runs on the line with n spread over `1..=n_max`, cycling through
/// the policies, plus a planar run at `min(n, 100)` for every tenth case.
pub fn identities_suite(opts: &SuiteOptions) -> SuiteReport {
    let cases: Vec<u64> = (0..opts.seeds).collect();
    let outcomes = par::map(&cases, opts.exec, |&case| {
        let n = (opts.n_max * (case + 1)).div_ceil(opts.seeds).max(1);
        let seed = keyed_hash(opts.base_seed, &[TAG_IDENT, case]);
        let policy = ABELIAN_POLICIES[(case % 4) as usize].clone();
        let mut configs = vec![config(opts, n, seed).policy(policy.clone())];
        if case % 10 == 9 {
            configs.push(config(opts, n.min(100), seed).dim(2).policy(policy));
        }
        let mut failures = vec![];
        for cfg in configs {
            let run = match run_to_fixation(&cfg) {
                Ok(r) => r,
                Err(e) => return engine_failure(cfg.n, seed, e),
            };
            match identities_check(&run) {
                Ok(report) => failures.extend(report.violations.iter().map(|v| CaseFailure {
                    n: cfg.n,
                    seed,
                    detail: format!("d = {}: {v}", cfg.dim),
                })),
                Err(e) => failures.push(CaseFailure {
                    n: cfg.n,
                    seed,
                    detail: format!("d = {}: {e}", cfg.dim),
                }),
            }
        }
        failures
    });
    SuiteReport::collect(Suite::Identities, outcomes)
}

/// Lazy walk at horizon `t` with `opts.seeds` trials.
pub fn walk_stats_suite(opts: &SuiteOptions, t: u64) -> SuiteReport {
    let stats = lazy_walk_stats(t, opts.seeds, keyed_hash(opts.base_seed, &[TAG_WALK]));
    let mut failures = vec![];
    let scaled = stats.abs_mean / (t as f64).sqrt();
    let target = 1.0 / std::f64::consts::PI.sqrt();
    if (scaled - target).abs() > 0.01 {
        failures.push(CaseFailure {
            n: t,
            seed: opts.base_seed,
            detail: format!("E|R_t|/sqrt(t) = {scaled:.5}, expected {target:.5} +- 0.01"),
        });
    }
    if stats.zero_property_frequency < 0.5 {
        failures.push(CaseFailure {
            n: t,
            seed: opts.base_seed,
            detail: format!("zero-count property frequency {:.4} < 0.5", stats.zero_property_frequency),
        });
    }
    SuiteReport {
        suite: Suite::WalkStats,
        cases: stats.trials,
        failures,
        walk: Some(stats),
    }
}
