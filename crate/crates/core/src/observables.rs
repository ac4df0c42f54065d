//! Pair counts, increment classes, Returns, imbalance profiles, fluxes and
//! the exact per-run identities used as correctness oracles.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{BatchDraws, Configuration, EngineKind, RunRecord};
use crate::lattice::{Site, SiteField, Window, MAX_DIM};
use crate::stacks::{KeyedRng, Species, StackAddress, StackMode, StackSource, Stacks, Step};

/// Stored points before the series switches to subsampling.
pub const SERIES_FULL_LIMIT: usize = 10_000_000;
/// Upper bound on stored points once subsampled.
pub const SERIES_SUBSAMPLED_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObservableError {
    #[error("ΔP = {dp} at x = {site} is outside the support of class {class:?} (l = {l}, r = {r})")]
    SupportViolation { site: i64, l: i64, r: i64, dp: i64, class: XiClass },
    #[error("stack reconstruction disagrees with the final configuration at x = {0}")]
    ReconstructionMismatch(i64),
    #[error("{0}")]
    Unavailable(&'static str),
}

/// Conditional law of the pair-count increment at a firing, keyed by the
/// imbalances of the two neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum XiClass {
    /// `l r < 0`
    Xi1,
    /// exactly one of `l, r` is zero
    Xi2,
    /// `l = r = 0`
    Xi3,
    /// `l r > 0`
    Xi4,
}

impl XiClass {
    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Conditional drift in quarter units.
    pub fn drift_quarters(self) -> i64 {
        match self {
            XiClass::Xi1 | XiClass::Xi4 => 0,
            XiClass::Xi2 => -1,
            XiClass::Xi3 => -2,
        }
    }

    /// `(P(-1), P(0), P(+1))`.
    pub fn law(self) -> [f64; 3] {
        match self {
            XiClass::Xi1 => [0.25, 0.5, 0.25],
            XiClass::Xi2 => [0.25, 0.75, 0.0],
            XiClass::Xi3 => [0.5, 0.5, 0.0],
            XiClass::Xi4 => [0.0, 1.0, 0.0],
        }
    }

    pub fn supports(self, dp: i64) -> bool {
        (-1..=1).contains(&dp) && self.law()[(dp + 1) as usize] > 0.0
    }
}

pub fn classify_increment(l: i64, r: i64) -> XiClass {
    match (l == 0, r == 0) {
        (true, true) => XiClass::Xi3,
        (true, false) | (false, true) => XiClass::Xi2,
        _ if l.signum() != r.signum() => XiClass::Xi1,
        _ => XiClass::Xi4,
    }
}

/// `P = Σ_x min(η₁, η₂)`.
pub fn pair_count(config: &Configuration) -> u64 {
    config
        .oil
        .values()
        .iter()
        .zip(config.water.values())
        .map(|(&o, &w)| o.min(w))
        .sum()
}

/// Counts indexed by integer site, growing on both sides as needed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LineCounts {
    offset: i64,
    counts: Vec<u64>,
}

impl LineCounts {
    pub fn add(&mut self, x: i64, k: u64) {
        if self.counts.is_empty() {
            self.offset = x;
        }
        if x < self.offset {
            let shift = (self.offset - x) as usize;
            self.counts.splice(0..0, std::iter::repeat_n(0, shift));
            self.offset = x;
        }
        let i = (x - self.offset) as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += k;
    }

    pub fn get(&self, x: i64) -> u64 {
        let i = x - self.offset;
        if i < 0 {
            return 0;
        }
        self.counts.get(i as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero(&self) -> BTreeMap<i64, u64> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.offset + i as i64, c))
            .collect()
    }
}

/// Pair-count history and per-firing classification of one d = 1 run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTrajectory {
    pub policy: String,
    pub n: u64,
    series: Vec<u64>,
    stride: u64,
    steps: u64,
    p_current: u64,
    /// Firings per class, `N₁..N₄`.
    pub counts: [u64; 4],
    pub returns_by_site: LineCounts,
    /// Increments of the per-site map; kept separately from the map itself.
    returns_tally: u64,
    /// `Σ_t Z_t`.
    pub sum_dp: i64,
    /// `Σ_t drift(class_t)` in quarter units.
    pub drift_quarters: i64,
}

impl PairTrajectory {
    pub fn new(n: u64, policy: &str) -> Self {
        PairTrajectory {
            policy: policy.to_string(),
            n,
            series: vec![n],
            stride: 1,
            steps: 0,
            p_current: n,
            counts: [0; 4],
            returns_by_site: LineCounts::default(),
            returns_tally: 0,
            sum_dp: 0,
            drift_quarters: 0,
        }
    }

    /// Book one firing at `x` whose neighbours had imbalances `l`, `r`
    /// beforehand and which changed the pair count by `dp`.
    pub fn record_firing(&mut self, x: i64, l: i64, r: i64, dp: i64) -> Result<XiClass, ObservableError> {
        let class = classify_increment(l, r);
        if !class.supports(dp) {
            return Err(ObservableError::SupportViolation { site: x, l, r, dp, class });
        }
        self.counts[class.ordinal()] += 1;
        self.drift_quarters += class.drift_quarters();
        if l == 0 {
            self.returns_by_site.add(x - 1, 1);
            self.returns_tally += 1;
        }
        if r == 0 {
            self.returns_by_site.add(x + 1, 1);
            self.returns_tally += 1;
        }
        self.sum_dp += dp;
        self.p_current = (self.p_current as i64 + dp) as u64;
        self.steps += 1;
        if self.steps.is_multiple_of(self.stride) {
            self.series.push(self.p_current);
            self.compact();
        }
        Ok(class)
    }

    fn compact(&mut self) {
        let limit = if self.stride == 1 {
            SERIES_FULL_LIMIT
        } else {
            SERIES_SUBSAMPLED_CAP
        };
        if self.series.len() <= limit {
            return;
        }
        let factor = if self.stride == 1 {
            (SERIES_FULL_LIMIT / SERIES_SUBSAMPLED_CAP * 2) as u64
        } else {
            2
        };
        self.series = self.series.iter().step_by(factor as usize).copied().collect();
        self.stride *= factor;
    }

    /// `P_t` at `t = 0, stride, 2·stride, …`.
    pub fn series(&self) -> &[u64] {
        &self.series
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    pub fn firings(&self) -> u64 {
        self.steps
    }

    pub fn p_initial(&self) -> u64 {
        self.series[0]
    }

    pub fn p_final(&self) -> u64 {
        self.p_current
    }

    pub fn count(&self, class: XiClass) -> u64 {
        self.counts[class.ordinal()]
    }

    pub fn returns_tally(&self) -> u64 {
        self.returns_tally
    }
}

/// `Σ_x Returns(x)` from the per-site map.
pub fn returns_total(trajectory: &PairTrajectory) -> u64 {
    trajectory.returns_by_site.total()
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub drift_quarters: i64,
    pub returns: u64,
    /// `Σ drift + Returns/4`, in quarter units; zero on every run.
    pub defect_quarters: i64,
    /// `Σ (Z_t − drift_t) = −n − Σ drift`; a martingale at the final time.
    pub martingale_residual: f64,
}

impl DriftReport {
    pub fn holds(&self) -> bool {
        self.defect_quarters == 0
    }
}

pub fn empirical_drift_check(trajectory: &PairTrajectory) -> DriftReport {
    let returns = returns_total(trajectory);
    DriftReport {
        drift_quarters: trajectory.drift_quarters,
        returns,
        defect_quarters: trajectory.drift_quarters + returns as i64,
        martingale_residual: trajectory.sum_dp as f64 - trajectory.drift_quarters as f64 / 4.0,
    }
}

/// Particle crossings and arrivals per site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FluxLedger {
    window: Window,
    entries: Vec<u64>,
    exits: Vec<u64>,
}

impl FluxLedger {
    pub fn new(window: Window, entries: Vec<u64>, exits: Vec<u64>) -> Self {
        assert_eq!(entries.len(), window.len());
        assert_eq!(exits.len(), window.len() * 2 * window.dim());
        FluxLedger { window, entries, exits }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Total particle arrivals at `site`.
    pub fn entries(&self, site: &Site) -> u64 {
        self.window.index(site).map(|i| self.entries[i]).unwrap_or(0)
    }

    /// Particles that left `site` by `step`.
    pub fn crossings(&self, site: &Site, step: Step) -> u64 {
        let dirs = 2 * self.window.dim();
        self.window
            .index(site)
            .map(|i| self.exits[i * dirs + step.code()])
            .unwrap_or(0)
    }

    /// `D_{x,x+1}`.
    pub fn d_right(&self, x: i64) -> u64 {
        self.crossings(&Site::line(x), Step::RIGHT)
    }

    /// `D_{x+1,x}`.
    pub fn d_left(&self, x: i64) -> u64 {
        self.crossings(&Site::line(x + 1), Step::LEFT)
    }

    pub fn total_crossings(&self) -> u64 {
        self.exits.iter().sum()
    }
}

/// Type of a site at fixation: sign of `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteType {
    Oil,
    Zero,
    Water,
}

/// Signed imbalance `g = η₁ − η₂`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypedProfile {
    pub g: SiteField<i64>,
}

impl TypedProfile {
    pub fn from_config(config: &Configuration) -> Self {
        let g = config
            .oil
            .values()
            .iter()
            .zip(config.water.values())
            .map(|(&o, &w)| o as i64 - w as i64)
            .collect();
        TypedProfile {
            g: SiteField::new(config.oil.window(), g),
        }
    }

    pub fn site_type(&self, site: &Site) -> SiteType {
        match self.g.get(site).signum() {
            1 => SiteType::Oil,
            -1 => SiteType::Water,
            _ => SiteType::Zero,
        }
    }

    pub fn sum(&self) -> i64 {
        self.g.values().iter().sum()
    }
}

/// `g_τ` read off the final configuration; on the line with plain stacks it
/// is cross-checked against the reconstruction from the stacks.
pub fn final_imbalance(run: &RunRecord) -> Result<TypedProfile, ObservableError> {
    let profile = TypedProfile::from_config(&run.final_config);
    let reconstructible = run.dim == 1
        && run.mode == StackMode::Plain
        && run.engine != EngineKind::Batched(BatchDraws::Binomial);
    if reconstructible {
        let stacks = StackSource::new(run.seed, 1);
        let rebuilt = reconstruct_imbalance(&run.odometer, &stacks);
        if let Some((lo, hi)) = span(&profile.g, &rebuilt) {
            for x in lo..=hi {
                if profile.g.at(x) != rebuilt.get(x) {
                    return Err(ObservableError::ReconstructionMismatch(x));
                }
            }
        }
    }
    Ok(profile)
}

fn span(g: &SiteField<i64>, rebuilt: &LineImbalance) -> Option<(i64, i64)> {
    let a = g.support_range(0);
    let b = rebuilt.range();
    match (a, b) {
        (None, None) => None,
        (Some(r), None) | (None, Some(r)) => Some(r),
        (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
    }
}

/// Signed imbalance on the line keyed by site.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LineImbalance(BTreeMap<i64, i64>);

impl LineImbalance {
    pub fn get(&self, x: i64) -> i64 {
        self.0.get(&x).copied().unwrap_or(0)
    }

    fn range(&self) -> Option<(i64, i64)> {
        let lo = self.0.iter().find(|(_, &v)| v != 0)?.0;
        let hi = self.0.iter().rev().find(|(_, &v)| v != 0)?.0;
        Some((*lo, *hi))
    }
}

/// `g_τ(x)` from the stack entries actually consumed: oil minus water that
/// entered from `x−1` and `x+1`. The origin's initial `n`/`n` cancels.
pub fn reconstruct_imbalance<S: Stacks + ?Sized>(odometer: &SiteField<u64>, stacks: &S) -> LineImbalance {
    let mut g = BTreeMap::new();
    for (site, u) in odometer.nonzero() {
        let x = site.x();
        for i in 1..=u {
            let oil = stacks.draw_move(StackAddress::new(site, i, Species::Oil));
            let water = stacks.draw_move(StackAddress::new(site, i, Species::Water));
            *g.entry(x + oil.sign()).or_insert(0) += 1;
            *g.entry(x + water.sign()).or_insert(0) -= 1;
        }
    }
    LineImbalance(g)
}

/// Particles fixating outside the ball of radius `r`: `Σ_{|x|>r} |g_τ(x)|`.
pub fn fixated_outside(run: &RunRecord, r: f64) -> u64 {
    run.final_config
        .occupied()
        .filter(|(s, _, _)| s.euclidean_norm() > r)
        .map(|(_, o, w)| o.abs_diff(w))
        .sum()
}

/// Largest distance from the origin of a site holding a particle at fixation.
pub fn support_radius(run: &RunRecord) -> f64 {
    run.final_config
        .occupied()
        .map(|(s, _, _)| s.euclidean_norm())
        .fold(0.0, f64::max)
}

/// Rightmost occupied site at fixation (d = 1).
pub fn rightmost_particle(run: &RunRecord) -> Option<i64> {
    run.final_config.occupied().map(|(s, _, _)| s.x()).max()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IdentityViolation {
    pub identity: &'static str,
    pub site: Site,
    pub lhs: i64,
    pub rhs: i64,
}

impl std::fmt::Display for IdentityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} fails at {}: {} != {}", self.identity, self.site, self.lhs, self.rhs)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IdentityReport {
    pub checked_sites: u64,
    pub violations: Vec<IdentityViolation>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, identity: &'static str, site: Site, lhs: i64, rhs: i64) {
        if lhs != rhs {
            self.violations.push(IdentityViolation { identity, site, lhs, rhs });
        }
    }

    fn merge(&mut self, other: IdentityReport) {
        self.checked_sites += other.checked_sites;
        self.violations.extend(other.violations);
    }
}

/// Sites the identities are checked on: the odometer/flux window plus one
/// layer, which catches particles sent past the last firing site.
fn check_window(run: &RunRecord) -> Window {
    let a = run.flux.window();
    let b = run.final_config.oil.window();
    Window::new(run.dim, a.half().max(b.half()) + 1)
}

/// Mass bookkeeping `2nδ₀ + entries − 2u = |g_τ|` at every site and, on the
/// line, its Laplacian form
/// `u(x−1) + u(x+1) − 2u(x) = |g_τ| − 2nδ₀ + (u(x−1) + u(x+1) − entries)`.
pub fn laplacian_identity_check(run: &RunRecord) -> IdentityReport {
    let mut report = IdentityReport::default();
    let n = run.n as i64;
    let window = check_window(run);
    for site in window.sites() {
        report.checked_sites += 1;
        let u = run.odometer.get(&site) as i64;
        let entries = run.flux.entries(&site) as i64;
        let g = run.final_config.imbalance(&site).abs();
        let source = if site == Site::ORIGIN { 2 * n } else { 0 };
        report.check("mass-bookkeeping", site, source + entries - 2 * u, g);
        if run.dim == 1 {
            let x = site.x();
            let side = run.odometer.at(x - 1) as i64 + run.odometer.at(x + 1) as i64;
            report.check("laplacian", site, side - 2 * u, g - source + (side - entries));
        }
    }
    report
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FluxReport {
    pub identities: IdentityReport,
    /// `(x, u(x), D_{x,x+1})` for `x ≥ 0`; equal only in expectation.
    pub odometer_vs_crossings: Vec<(i64, u64, u64)>,
}

impl FluxReport {
    pub fn passed(&self) -> bool {
        self.identities.passed()
    }
}

/// Net crossings of each edge equal the particles that stop beyond it:
/// `D_{x,x+1} − D_{x+1,x} = Σ_{y>x} |g_τ(y)|` for `x ≥ 0`, and the mirror
/// statement for `x ≤ 0`. Line only.
pub fn net_flux_check(run: &RunRecord) -> Result<FluxReport, ObservableError> {
    if run.dim != 1 {
        return Err(ObservableError::Unavailable("flux identity is checked on the line only"));
    }
    let mut report = FluxReport::default();
    let half = check_window(run).half();
    let abs_g = |x: i64| run.final_config.imbalance(&Site::line(x)).abs();
    let mut beyond = 0i64;
    for x in (0..=half).rev() {
        let net = run.flux.d_right(x) as i64 - run.flux.d_left(x) as i64;
        report.identities.check("flux-right", Site::line(x), net, beyond);
        report.identities.checked_sites += 1;
        beyond += abs_g(x);
    }
    let mut beyond = 0i64;
    for x in -half..=0 {
        let net = run.flux.crossings(&Site::line(x), Step::LEFT) as i64 - run.flux.d_right(x - 1) as i64;
        report.identities.check("flux-left", Site::line(x), net, beyond);
        report.identities.checked_sites += 1;
        beyond += abs_g(x);
    }
    report.odometer_vs_crossings = (0..=half)
        .map(|x| (x, run.odometer.at(x), run.flux.d_right(x)))
        .take_while(|&(_, u, d)| u > 0 || d > 0)
        .collect();
    Ok(report)
}

/// Every exact per-run identity at once: the trajectory identities (when a
/// trajectory was recorded), mass bookkeeping, Laplacian and flux forms,
/// and the stack reconstruction of `g_τ`.
pub fn identities_check(run: &RunRecord) -> Result<IdentityReport, ObservableError> {
    let mut report = IdentityReport::default();
    let origin = Site::ORIGIN;
    report.check("tau-equals-odometer-sum", origin, run.tau as i64, run.odometer.values().iter().sum::<u64>() as i64);
    report.check("crossings-equal-2tau", origin, run.flux.total_crossings() as i64, 2 * run.tau as i64);
    report.check("complete", origin, run.final_config.is_complete() as i64, 1);
    for species in Species::BOTH {
        report.check("conservation", origin, run.final_config.total(species) as i64, run.n as i64);
    }
    if let Some(t) = &run.trajectory {
        let n = run.n as i64;
        report.check("p-initial", origin, t.p_initial() as i64, n);
        report.check("p-final", origin, t.p_final() as i64, 0);
        report.check("sum-z", origin, t.sum_dp, -n);
        report.check("class-count", origin, t.counts.iter().sum::<u64>() as i64, run.tau as i64);
        let returns = returns_total(t) as i64;
        report.check("returns-tally", origin, returns, t.returns_tally() as i64);
        report.check("returns-classes", origin, returns, (t.count(XiClass::Xi2) + 2 * t.count(XiClass::Xi3)) as i64);
        report.check("drift-sum", origin, empirical_drift_check(t).defect_quarters, 0);
    }
    report.merge(laplacian_identity_check(run));
    if run.dim == 1 {
        report.merge(net_flux_check(run)?.identities);
        final_imbalance(run)?;
    }
    Ok(report)
}

/// Maximum odometer and the bounding box of `{u > 0}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HeightBase {
    pub height: u64,
    /// Coordinatewise `(lo, hi)`; `None` when nothing fired.
    pub base: Option<(Site, Site)>,
}

pub fn height_and_base(run: &RunRecord) -> HeightBase {
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    let mut height = 0;
    let mut any = false;
    for (site, u) in run.odometer.nonzero() {
        any = true;
        height = height.max(u);
        for a in 0..MAX_DIM {
            lo[a] = lo[a].min(site.coords()[a]);
            hi[a] = hi[a].max(site.coords()[a]);
        }
    }
    HeightBase {
        height,
        base: any.then(|| (Site::from_coords(&lo), Site::from_coords(&hi))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LazyWalkStats {
    pub t: u64,
    pub trials: u64,
    /// Mean of `M(t) = max_{i<t} |R_i|`.
    pub mean_max_abs: f64,
    /// Mean number of visits to 0 among `R_0..R_{⌊0.9t⌋-1}`.
    pub mean_zero_count: f64,
    /// `E|R_t|`.
    pub abs_mean: f64,
    /// Fraction of trials with more than `0.1 √t` zeros before `0.9 t`.
    pub zero_property_frequency: f64,
}

/// Monte Carlo statistics of the lazy walk (hold with probability 1/2,
/// otherwise ±1). Each step is the difference of two fair bits.
pub fn lazy_walk_stats(t: u64, trials: u64, seed: u64) -> LazyWalkStats {
    let zero_horizon = (0.9 * t as f64).floor() as u64;
    let zero_threshold = 0.1 * (t as f64).sqrt();
    let mut sum_max = 0u64;
    let mut sum_zeros = 0u64;
    let mut sum_abs = 0u64;
    let mut good = 0u64;
    for trial in 0..trials {
        let mut rng = KeyedRng::from_words(seed, &[trial]);
        let mut pos = 0i64;
        let mut max_abs = 0u64;
        let mut zeros = 0u64;
        let mut i = 0u64;
        while i < t {
            let a = rng.next_u64();
            let b = rng.next_u64();
            let chunk = (t - i).min(64);
            for j in 0..chunk {
                // R_i is the position before step i
                if i + j < zero_horizon && pos == 0 {
                    zeros += 1;
                }
                max_abs = max_abs.max(pos.unsigned_abs());
                pos += ((a >> j) & 1) as i64 - ((b >> j) & 1) as i64;
            }
            i += chunk;
        }
        sum_max += max_abs;
        sum_zeros += zeros;
        sum_abs += pos.unsigned_abs();
        if zeros as f64 > zero_threshold {
            good += 1;
        }
    }
    let m = trials.max(1) as f64;
    LazyWalkStats {
        t,
        trials,
        mean_max_abs: sum_max as f64 / m,
        mean_zero_count: sum_zeros as f64 / m,
        abs_mean: sum_abs as f64 / m,
        zero_property_frequency: good as f64 / m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_to_fixation, RunConfig};

    #[test]
    fn pair_count_examples() {
        assert_eq!(pair_count(&Configuration::initial(5, 1)), 5);
        assert_eq!(pair_count(&Configuration::from_line(&[(0, 3, 5), (2, 4, 0)])), 3);
        let r = run_to_fixation(&RunConfig::new(12, 3)).unwrap();
        assert_eq!(pair_count(&r.final_config), 0);
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify_increment(-3, 2), XiClass::Xi1);
        assert_eq!(classify_increment(0, 0), XiClass::Xi3);
        assert_eq!(classify_increment(2, 7), XiClass::Xi4);
        assert_eq!(classify_increment(-2, -7), XiClass::Xi4);
        assert_eq!(classify_increment(0, -1), XiClass::Xi2);
        assert_eq!(classify_increment(4, 0), XiClass::Xi2);
    }

    #[test]
    fn class_laws_are_distributions_with_stated_drift() {
        for c in [XiClass::Xi1, XiClass::Xi2, XiClass::Xi3, XiClass::Xi4] {
            let [m, z, p] = c.law();
            assert!((m + z + p - 1.0).abs() < 1e-15);
            assert_eq!((p - m) * 4.0, c.drift_quarters() as f64);
        }
    }

    #[test]
    fn support_violations() {
        let mut t = PairTrajectory::new(3, "leftmost");
        assert_eq!(t.record_firing(0, 2, 5, 0), Ok(XiClass::Xi4));
        assert!(t.record_firing(0, 2, 5, -1).is_err());
        assert!(matches!(
            t.record_firing(0, 0, 0, 1),
            Err(ObservableError::SupportViolation { class: XiClass::Xi3, .. })
        ));
        assert!(t.record_firing(0, 0, 1, 1).is_err());
        assert!(t.record_firing(0, -1, 1, 1).is_ok());
    }

    #[test]
    fn returns_go_to_zero_type_neighbours() {
        let mut t = PairTrajectory::new(2, "leftmost");
        t.record_firing(5, 0, 3, 0).unwrap();
        assert_eq!(t.returns_by_site.get(4), 1);
        assert_eq!(t.returns_by_site.get(6), 0);
        t.record_firing(5, 0, 0, -1).unwrap();
        assert_eq!(t.returns_by_site.nonzero(), BTreeMap::from([(4, 2), (6, 1)]));
        assert_eq!(returns_total(&t), 3);
    }

    #[test]
    fn no_returns_without_type_zero_neighbours() {
        let mut t = PairTrajectory::new(2, "leftmost");
        t.record_firing(0, 1, 1, 0).unwrap();
        t.record_firing(0, 1, -1, 0).unwrap();
        assert_eq!(returns_total(&t), 0);
        assert!(empirical_drift_check(&t).holds());
        assert_eq!(t.drift_quarters, 0);
    }

    #[test]
    fn single_pair_returns_twice_per_firing() {
        for seed in 0..100 {
            let r = run_to_fixation(&RunConfig::new(1, seed)).unwrap();
            let t = r.trajectory.as_ref().unwrap();
            assert_eq!(returns_total(t), 2 * r.tau);
            assert_eq!(t.count(XiClass::Xi3), r.tau);
        }
    }

    #[test]
    fn series_is_subsampled_past_the_limit() {
        let mut t = PairTrajectory::new(1, "leftmost");
        for _ in 0..(SERIES_FULL_LIMIT + 5) {
            t.record_firing(0, 1, 1, 0).unwrap();
        }
        assert!(t.series().len() <= SERIES_SUBSAMPLED_CAP);
        assert!(t.stride() > 1);
        assert_eq!(t.counts[3] as usize, SERIES_FULL_LIMIT + 5);
    }

    #[test]
    fn single_pair_profile() {
        for seed in 0..100 {
            let r = run_to_fixation(&RunConfig::new(1, seed)).unwrap();
            let p = final_imbalance(&r).unwrap();
            assert_eq!(p.sum(), 0);
            let nz: Vec<_> = p.g.nonzero().collect();
            assert_eq!(nz.len(), 2);
            assert_eq!(nz[0].1 * nz[1].1, -1);
            // the pair separated at the midpoint, which fired last
            let mid = nz[0].0.x() + 1;
            assert!(r.odometer.at(mid) > 0);
            let hb = height_and_base(&r);
            assert_eq!(hb.height, r.odometer.values().iter().copied().max().unwrap());
            let (lo, hi) = hb.base.unwrap();
            assert!(lo.x() <= mid && mid <= hi.x());
            let f0 = fixated_outside(&r, 0.0);
            assert_eq!(f0, 2 - (mid.abs() == 1) as u64);
        }
    }

    #[test]
    fn fixated_outside_basics() {
        let r = run_to_fixation(&RunConfig::new(40, 9)).unwrap();
        let radius = support_radius(&r);
        assert_eq!(fixated_outside(&r, radius), 0);
        assert!(fixated_outside(&r, 0.0) <= 80);
        let mut last = u64::MAX;
        for k in 0..=(radius as i64 + 1) {
            let f = fixated_outside(&r, k as f64);
            assert!(f <= last);
            last = f;
        }
    }

    #[test]
    fn empty_run_observables() {
        let r = run_to_fixation(&RunConfig::new(0, 1)).unwrap();
        assert_eq!(height_and_base(&r), HeightBase { height: 0, base: None });
        assert!(identities_check(&r).unwrap().passed());
    }

    #[test]
    fn exact_identities_hold_for_seeded_runs() {
        for (n, seed) in [(1, 1), (2, 2), (50, 3), (200, 4)] {
            let r = run_to_fixation(&RunConfig::new(n, seed)).unwrap();
            let rep = identities_check(&r).unwrap();
            assert!(rep.passed(), "n={n} seed={seed}: {:?}", rep.violations);
        }
    }

    #[test]
    fn identities_hold_for_other_policies_and_engines() {
        use crate::engine::Policy;
        for policy in [Policy::Rightmost, Policy::UniformRandom, Policy::SweepParallel] {
            let r = run_to_fixation(&RunConfig::new(60, 5).policy(policy)).unwrap();
            assert!(identities_check(&r).unwrap().passed());
        }
        for engine in [EngineKind::Batched(BatchDraws::Binomial), EngineKind::Batched(BatchDraws::StackSums)] {
            let r = run_to_fixation(&RunConfig::new(300, 5).engine(engine)).unwrap();
            assert!(identities_check(&r).unwrap().passed());
        }
        let r = run_to_fixation(&RunConfig::new(20, 5).dim(2)).unwrap();
        assert!(identities_check(&r).unwrap().passed());
    }

    #[test]
    fn fault_injection_breaks_reconstruction() {
        let mut cfg = RunConfig::new(30, 2);
        cfg.inject_fault = Some(1);
        let r = run_to_fixation(&cfg).unwrap();
        assert!(matches!(final_imbalance(&r), Err(ObservableError::ReconstructionMismatch(_))));
    }

    #[test]
    fn lazy_walk_small_cases() {
        let s = lazy_walk_stats(0, 10, 1);
        assert_eq!((s.mean_max_abs, s.abs_mean), (0.0, 0.0));
        let s = lazy_walk_stats(1, 4000, 1);
        // |R_1| is 1 with probability 1/2
        assert!((s.abs_mean - 0.5).abs() < 0.04);
        assert_eq!(s.mean_max_abs, 0.0);
    }
}
