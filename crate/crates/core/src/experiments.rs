//! Seed sweeps over `n`, exponent fits, profile comparison against the
//! scaling limit, and exploratory fluctuation summaries.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run_to_fixation, BatchDraws, EngineError, EngineKind, Policy, RunConfig, RunRecord};
use crate::observables::{fixated_outside, height_and_base, rightmost_particle, support_radius};
use crate::par::{self, Execution};
use crate::scaling::{support_edge, ScalingProfile};
use crate::stacks::{keyed_hash, StackMode};
use crate::stats::{least_squares, std_dev, Quartiles};

const TAG_SWEEP: u64 = 0x5EE9;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("run n = {n}, seed = {seed} failed: {source}")]
    Engine {
        n: u64,
        seed: u64,
        #[source]
        source: EngineError,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("a fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit needs positive values, got ({0}, {1})")]
    NonPositive(f64, f64),
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub n_grid: Vec<u64>,
    pub seeds: u64,
    pub base_seed: u64,
    pub dim: usize,
    pub policy: Policy,
    pub engine: EngineKind,
    pub mode: StackMode,
    /// Record pair trajectories (exact engine on the line).
    pub track_pairs: bool,
    /// Keep full run records alongside the summaries.
    pub keep_records: bool,
    /// `F(r)` is evaluated at `r = n^{f_exponent}`.
    pub f_exponent: f64,
}

impl SweepPlan {
    pub fn new(n_grid: Vec<u64>, seeds: u64) -> Self {
        SweepPlan {
            n_grid,
            seeds,
            base_seed: 0,
            dim: 1,
            policy: Policy::SweepParallel,
            engine: EngineKind::Batched(BatchDraws::Binomial),
            mode: StackMode::Plain,
            track_pairs: false,
            keep_records: false,
            f_exponent: 1.0 / 3.0 + 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.n_grid.is_empty() {
            return Err(SweepError::InvalidPlan("empty n grid".into()));
        }
        if self.n_grid.windows(2).any(|p| p[0] >= p[1]) {
            return Err(SweepError::InvalidPlan("n grid must be strictly increasing".into()));
        }
        if self.seeds == 0 {
            return Err(SweepError::InvalidPlan("at least one seed per n".into()));
        }
        Ok(())
    }

    pub fn run_config(&self, n: u64, replicate: u64) -> RunConfig {
        RunConfig::new(n, run_seed(self.base_seed, n, replicate))
            .dim(self.dim)
            .policy(self.policy.clone())
            .engine(self.engine)
            .mode(self.mode)
            .track_pairs(self.track_pairs)
    }
}

/// Seed of replicate `replicate` at `n`; independent of the rest of the grid.
pub fn run_seed(base_seed: u64, n: u64, replicate: u64) -> u64 {
    keyed_hash(base_seed, &[TAG_SWEEP, n, replicate])
}

/// Scalar summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub n: u64,
    pub replicate: u64,
    pub seed: u64,
    pub tau: u64,
    pub visits: u64,
    pub height: u64,
    pub support_radius: f64,
    pub rightmost: Option<i64>,
    /// Rightmost site of the base on the line.
    pub base_right: Option<i64>,
    pub f_outside: u64,
    /// `u(0)`.
    pub u_center: u64,
    /// `u(⌊n^{1/3}⌋)` along the first axis.
    pub u_edge: u64,
}

impl RunSummary {
    pub fn of(run: &RunRecord, replicate: u64, f_exponent: f64) -> Self {
        let n = run.n;
        let hb = height_and_base(run);
        let edge = (n as f64).cbrt().floor() as i64;
        RunSummary {
            n,
            replicate,
            seed: run.seed,
            tau: run.tau,
            visits: run.visits,
            height: hb.height,
            support_radius: support_radius(run),
            rightmost: if run.dim == 1 { rightmost_particle(run) } else { None },
            base_right: if run.dim == 1 { hb.base.map(|(_, hi)| hi.x()) } else { None },
            f_outside: fixated_outside(run, (n as f64).powf(f_exponent)),
            u_center: run.odometer.at(0),
            u_edge: run.odometer.at(edge),
        }
    }

    pub fn statistic(&self, s: Statistic) -> f64 {
        match s {
            Statistic::Height => self.height as f64,
            Statistic::SupportRadius => self.support_radius,
            Statistic::Tau => self.tau as f64,
            Statistic::FOutside => self.f_outside as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Height,
    SupportRadius,
    Tau,
    FOutside,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: u64,
    pub runs: u64,
    pub height: Quartiles,
    pub support_radius: Quartiles,
    pub tau: Quartiles,
    pub f_outside: Quartiles,
    pub mean_tau: f64,
}

impl Aggregate {
    fn of(n: u64, rows: &[&RunSummary]) -> Self {
        let col = |s: Statistic| -> Vec<f64> { rows.iter().map(|r| r.statistic(s)).collect() };
        let tau = col(Statistic::Tau);
        Aggregate {
            n,
            runs: rows.len() as u64,
            height: Quartiles::of(&col(Statistic::Height)),
            support_radius: Quartiles::of(&col(Statistic::SupportRadius)),
            tau: Quartiles::of(&tau),
            f_outside: Quartiles::of(&col(Statistic::FOutside)),
            mean_tau: crate::stats::mean(&tau),
        }
    }

    pub fn median(&self, s: Statistic) -> f64 {
        self.quartiles(s).median
    }

    pub fn quartiles(&self, s: Statistic) -> Quartiles {
        match s {
            Statistic::Height => self.height,
            Statistic::SupportRadius => self.support_radius,
            Statistic::Tau => self.tau,
            Statistic::FOutside => self.f_outside,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub summaries: Vec<RunSummary>,
    pub aggregates: Vec<Aggregate>,
    /// Present when the plan asked to keep records; same order as `summaries`.
    pub records: Vec<RunRecord>,
}

impl SweepResult {
    pub fn aggregate(&self, n: u64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n == n)
    }

    pub fn records_at(&self, n: u64) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.n == n)
    }

    /// Log-log fit of the per-`n` medians of a statistic.
    pub fn fit(&self, s: Statistic) -> Result<ExponentFit, FitError> {
        let points: Vec<FitPoint> = self
            .aggregates
            .iter()
            .map(|a| {
                let q = a.quartiles(s);
                FitPoint {
                    n: a.n as f64,
                    median: q.median,
                    q1: q.q1,
                    q3: q.q3,
                }
            })
            .collect();
        fit_points(points)
    }
}

pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult, SweepError> {
    run_sweep_with(plan, Execution::Parallel)
}

pub fn run_sweep_with(plan: &SweepPlan, exec: Execution) -> Result<SweepResult, SweepError> {
    plan.validate()?;
    let jobs: Vec<(u64, u64)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| (0..plan.seeds).map(move |rep| (n, rep)))
        .collect();
    let outputs = par::try_map(&jobs, exec, |&(n, rep)| {
        let cfg = plan.run_config(n, rep);
        let run = run_to_fixation(&cfg).map_err(|source| SweepError::Engine { n, seed: cfg.seed, source })?;
        let summary = RunSummary::of(&run, rep, plan.f_exponent);
        Ok((summary, plan.keep_records.then_some(run)))
    })?;
    let (summaries, records): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    let mut by_n: BTreeMap<u64, Vec<&RunSummary>> = BTreeMap::new();
    for s in &summaries {
        by_n.entry(s.n).or_default().push(s);
    }
    let aggregates = by_n.iter().map(|(&n, rows)| Aggregate::of(n, rows)).collect();
    Ok(SweepResult {
        aggregates,
        records: records.into_iter().flatten().collect(),
        summaries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitPoint {
    pub n: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in log space.
    pub residual: f64,
    pub slope_stderr: f64,
    pub points: Vec<FitPoint>,
}

impl ExponentFit {
    /// `slope ± 2 · stderr`.
    pub fn interval(&self) -> (f64, f64) {
        (self.slope - 2.0 * self.slope_stderr, self.slope + 2.0 * self.slope_stderr)
    }
}

/// Least-squares slope of `ln(statistic)` against `ln(n)`.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<ExponentFit, FitError> {
    fit_points(
        pairs
            .iter()
            .map(|&(n, y)| FitPoint { n, median: y, q1: y, q3: y })
            .collect(),
    )
}

fn fit_points(points: Vec<FitPoint>) -> Result<ExponentFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    if let Some(p) = points.iter().find(|p| !(p.n > 0.0 && p.median > 0.0)) {
        return Err(FitError::NonPositive(p.n, p.median));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median.ln()).collect();
    let fit = least_squares(&xs, &ys);
    Ok(ExponentFit {
        slope: fit.slope,
        intercept: fit.intercept,
        residual: fit.residual,
        slope_stderr: fit.slope_stderr,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileComparison {
    pub n: u64,
    /// `sup_ξ |u(⌊n^{1/3}ξ⌋)/n^{4/3} − w(ξ)|`.
    pub sup_error: f64,
    /// Sup of the pointwise relative error over `{w ≥ 0.05 w(0)}`.
    pub restricted_rel_error: f64,
    pub threshold: f64,
}

/// Compare a line odometer with a scaling profile at the lattice points
/// `ξ = x n^{-1/3}`.
pub fn profile_compare(odometer: &dyn Fn(i64) -> f64, n: u64, profile: &ScalingProfile) -> ProfileComparison {
    let scale = (n as f64).cbrt();
    let height = (n as f64).powf(4.0 / 3.0);
    let threshold = 0.05 * profile.eval(0.0);
    let reach = ((profile.support_radius + 1.0) * scale).ceil() as i64 + 2;
    let mut sup_error = 0.0_f64;
    let mut rel = 0.0_f64;
    for x in -reach..=reach {
        let u = odometer(x) / height;
        let w = profile.eval(x as f64 / scale);
        sup_error = sup_error.max((u - w).abs());
        if w >= threshold {
            rel = rel.max((u - w).abs() / w);
        }
    }
    ProfileComparison {
        n,
        sup_error,
        restricted_rel_error: rel,
        threshold,
    }
}

pub fn profile_compare_run(run: &RunRecord, profile: &ScalingProfile) -> ProfileComparison {
    profile_compare(&|x| run.odometer.at(x) as f64, run.n, profile)
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceRow {
    pub n: u64,
    pub runs: usize,
    pub sd_center: f64,
    pub sd_edge: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
    pub center_fit: Option<ExponentFit>,
    pub edge_fit: Option<ExponentFit>,
    /// Heuristic bulk exponent the measured slopes are shown against.
    pub conjectured_slope: f64,
}

/// Seed-to-seed standard deviation of `u(0)` and `u(⌊n^{1/3}⌋)` per `n`,
/// with log-log slopes. Reported, never asserted.
pub fn variance_probe(summaries: &[RunSummary]) -> VarianceReport {
    let mut by_n: BTreeMap<u64, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        by_n.entry(s.n).or_default().push(s);
    }
    let rows: Vec<VarianceRow> = by_n
        .iter()
        .map(|(&n, rs)| {
            let c: Vec<f64> = rs.iter().map(|r| r.u_center as f64).collect();
            let e: Vec<f64> = rs.iter().map(|r| r.u_edge as f64).collect();
            VarianceRow {
                n,
                runs: rs.len(),
                sd_center: std_dev(&c),
                sd_edge: std_dev(&e),
            }
        })
        .collect();
    let fit = |f: fn(&VarianceRow) -> f64| {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, f(r))).collect();
        fit_exponent(&pairs).ok()
    };
    VarianceReport {
        center_fit: fit(|r| r.sd_center),
        edge_fit: fit(|r| r.sd_edge),
        rows,
        conjectured_slope: 7.0 / 6.0,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RightmostRow {
    pub n: u64,
    pub scaled: Quartiles,
    /// Runs whose rightmost particle lies beyond the closure of the base.
    pub outside_base_closure: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RightmostReport {
    pub rows: Vec<RightmostRow>,
    /// `(18π)^{1/3}`, a reference line only.
    pub reference: f64,
}

/// Distribution of `R_n / n^{1/3}` per `n` on the line.
pub fn rightmost_particle_stats(summaries: &[RunSummary]) -> RightmostReport {
    let mut by_n: BTreeMap<u64, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.rightmost.is_some()) {
        by_n.entry(s.n).or_default().push(s);
    }
    let rows = by_n
        .into_iter()
        .map(|(n, rs)| {
            let scale = (n as f64).cbrt();
            let scaled: Vec<f64> = rs.iter().map(|r| r.rightmost.unwrap() as f64 / scale).collect();
            let outside = rs
                .iter()
                .filter(|r| match (r.rightmost, r.base_right) {
                    (Some(rm), Some(b)) => rm > b + 1,
                    _ => false,
                })
                .count();
            RightmostRow {
                n,
                scaled: Quartiles::of(&scaled),
                outside_base_closure: outside,
            }
        })
        .collect();
    RightmostReport {
        rows,
        reference: support_edge(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::scaled_closed_form;

    #[test]
    fn plan_validation() {
        assert!(SweepPlan::new(vec![3, 2], 1).validate().is_err());
        assert!(SweepPlan::new(vec![2, 2], 1).validate().is_err());
        assert!(SweepPlan::new(vec![1], 0).validate().is_err());
        assert!(SweepPlan::new(vec![1, 5], 1).validate().is_ok());
    }

    #[test]
    fn seeds_do_not_depend_on_the_grid() {
        let a = SweepPlan::new(vec![10, 20], 2);
        let b = SweepPlan::new(vec![5, 10, 40], 2);
        assert_eq!(a.run_config(10, 1).seed, b.run_config(10, 1).seed);
        assert_ne!(a.run_config(10, 0).seed, a.run_config(10, 1).seed);
    }

    #[test]
    fn zero_particles() {
        let r = run_sweep(&SweepPlan::new(vec![0], 3)).unwrap();
        let a = &r.aggregates[0];
        assert_eq!(a.runs, 3);
        assert_eq!((a.height.median, a.tau.median, a.support_radius.median, a.mean_tau), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_pair_mean_tau() {
        let mut plan = SweepPlan::new(vec![1], 10_000);
        plan.engine = EngineKind::Exact;
        plan.policy = Policy::Leftmost;
        let r = run_sweep(&plan).unwrap();
        // τ is geometric with success probability 1/2: mean 2, sd sqrt(2)
        assert!((r.aggregates[0].mean_tau - 2.0).abs() < 0.06);
    }

    #[test]
    fn sweeps_are_reproducible_across_execution_modes() {
        let plan = SweepPlan::new(vec![10, 50, 200], 4);
        let a = run_sweep_with(&plan, Execution::Parallel).unwrap();
        let b = run_sweep_with(&plan, Execution::Sequential).unwrap();
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.aggregates, b.aggregates);
    }

    #[test]
    fn exact_power_law_fit() {
        let pairs: Vec<(f64, f64)> = [1e2, 1e3, 1e4, 1e5].iter().map(|&n: &f64| (n, 3.0 * n.powf(4.0 / 3.0))).collect();
        let f = fit_exponent(&pairs).unwrap();
        assert!((f.slope - 4.0 / 3.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert_eq!(fit_exponent(&pairs[..2]), Err(FitError::TooFewPoints(2)));
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn synthetic_closed_form_profile_has_no_error() {
        let n = 1000u64;
        let profile = ScalingProfile::closed_form(1e-3);
        let cmp = profile_compare(&|x| scaled_closed_form(n as f64, x as f64), n, &profile);
        assert!(cmp.sup_error < 1e-12 && cmp.restricted_rel_error < 1e-12);
        let zero = profile_compare(&|_| 0.0, n, &profile);
        assert!((zero.sup_error - profile.eval(0.0)).abs() < 1e-12);
        assert!((zero.restricted_rel_error - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_odometer_has_no_spread() {
        let rows: Vec<RunSummary> = (0..4)
            .map(|rep| RunSummary {
                n: 10,
                replicate: rep,
                seed: rep,
                tau: 5,
                visits: 5,
                height: 3,
                support_radius: 2.0,
                rightmost: Some(2),
                base_right: Some(1),
                f_outside: 0,
                u_center: 3,
                u_edge: 1,
            })
            .collect();
        let rep = variance_probe(&rows);
        assert_eq!((rep.rows[0].sd_center, rep.rows[0].sd_edge), (0.0, 0.0));
        assert!(rep.center_fit.is_none());
        assert_eq!(rep.conjectured_slope, 7.0 / 6.0);
    }

    #[test]
    fn single_pair_rightmost_particle() {
        let mut plan = SweepPlan::new(vec![1], 300);
        plan.engine = EngineKind::Exact;
        plan.keep_records = true;
        let r = run_sweep(&plan).unwrap();
        for (s, run) in r.summaries.iter().zip(&r.records) {
            // the last firing separates the pair at y; particles land at y ± 1
            let occupied: Vec<i64> = run.final_config.occupied().map(|(x, _, _)| x.x()).collect();
            let y = occupied[0] + 1;
            assert_eq!(s.rightmost, Some(y + 1));
            assert!(s.rightmost.unwrap() <= s.base_right.unwrap() + 1);
        }
        let rep = rightmost_particle_stats(&r.summaries);
        assert_eq!(rep.rows[0].outside_base_closure, 0);
    }
}
