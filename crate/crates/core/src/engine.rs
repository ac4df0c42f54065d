//! Firing engine: configuration state, legal firing sequences under
//! pluggable policies, fixation detection and exact replay.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Site, SiteField, Window, MAX_DIM};
use crate::observables::{FluxLedger, ObservableError, PairTrajectory};
use crate::stacks::{KeyedRng, Species, StackAddress, StackError, StackMode, StackSource, Stacks, Step, PRF_ID};

const INITIAL_HALF: i64 = 8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("illegal firing at {site}: oil {oil}, water {water}")]
    IllegalFiring { site: Site, oil: u64, water: u64 },
    #[error("batch of {requested} pairs at {site} exceeds the {available} available")]
    InsufficientPairs { site: Site, requested: u64, available: u64 },
    #[error("window of {requested} cells exceeds the cap of {cap}")]
    WindowCapExceeded { requested: usize, cap: usize },
    #[error("firing budget {budget} exhausted after {fired} firings (n = {n}, seed = {seed})")]
    BudgetExceeded { n: u64, seed: u64, fired: u64, budget: u64 },
    #[error("stack error: {0}")]
    Stack(#[from] StackError),
    #[error("observable check failed: {0}")]
    Observable(#[from] ObservableError),
    #[error("unsupported run: {0}")]
    Unsupported(String),
}

/// How a batched visit draws its moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchDraws {
    /// Exact partial sums of the same stack entries the exact engine reads.
    StackSums,
    /// Binomial counts keyed by (site, visit ordinal); equal in law only.
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "draws")]
pub enum EngineKind {
    Exact,
    Batched(BatchDraws),
}

impl EngineKind {
    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Exact => "exact",
            EngineKind::Batched(BatchDraws::Binomial) => "batched",
            EngineKind::Batched(BatchDraws::StackSums) => "batched-stacks",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptStep {
    Fire(Site),
    /// Fire the site repeatedly until it stops being legal.
    FireWhileLegal(Site),
}

/// Scripted (possibly adversarial) firing sequence, optionally completed by
/// another policy once the script runs out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub steps: Vec<ScriptStep>,
    pub then: Option<Box<Policy>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Policy {
    #[default]
    Leftmost,
    Rightmost,
    UniformRandom,
    /// Every site active at the start of a round fires once in that round.
    SweepParallel,
    Scripted(Script),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Leftmost => "leftmost",
            Policy::Rightmost => "rightmost",
            Policy::UniformRandom => "uniform-random",
            Policy::SweepParallel => "sweep-parallel",
            Policy::Scripted(_) => "adversarial-scripted",
        }
    }

    pub fn scripted(steps: Vec<ScriptStep>) -> Self {
        Policy::Scripted(Script { steps, then: None })
    }

    pub fn scripted_then(steps: Vec<ScriptStep>, then: Policy) -> Self {
        Policy::Scripted(Script {
            steps,
            then: Some(Box::new(then)),
        })
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "leftmost" => Policy::Leftmost,
            "rightmost" => Policy::Rightmost,
            "uniform-random" | "random" => Policy::UniformRandom,
            "sweep-parallel" | "sweep" => Policy::SweepParallel,
            _ => return None,
        })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Particle counts per site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    pub n: u64,
    pub oil: SiteField<u64>,
    pub water: SiteField<u64>,
}

impl Configuration {
    /// `n` oil and `n` water particles at the origin.
    pub fn initial(n: u64, dim: usize) -> Self {
        let window = Window::new(dim, 1);
        let mut oil = SiteField::zeros(window).values().to_vec();
        let origin = window.index(&Site::ORIGIN).unwrap();
        oil[origin] = n;
        Configuration {
            n,
            oil: SiteField::new(window, oil.clone()),
            water: SiteField::new(window, oil),
        }
    }

    /// Build a configuration on the line from `(x, oil, water)` triples.
    pub fn from_line(entries: &[(i64, u64, u64)]) -> Self {
        let half = entries.iter().map(|e| e.0.abs()).max().unwrap_or(0).max(1);
        let window = Window::new(1, half);
        let mut oil = vec![0; window.len()];
        let mut water = vec![0; window.len()];
        for &(x, o, w) in entries {
            let i = window.index(&Site::line(x)).unwrap();
            oil[i] += o;
            water[i] += w;
        }
        let n = oil.iter().sum();
        Configuration {
            n,
            oil: SiteField::new(window, oil),
            water: SiteField::new(window, water),
        }
    }

    pub fn dim(&self) -> usize {
        self.oil.window().dim()
    }

    pub fn is_legal(&self, site: &Site) -> bool {
        self.oil.get(site).min(self.water.get(site)) >= 1
    }

    /// `g(x) = η₁(x) − η₂(x)`.
    pub fn imbalance(&self, site: &Site) -> i64 {
        self.oil.get(site) as i64 - self.water.get(site) as i64
    }

    pub fn total(&self, species: Species) -> u64 {
        match species {
            Species::Oil => self.oil.values().iter().sum(),
            Species::Water => self.water.values().iter().sum(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.oil
            .values()
            .iter()
            .zip(self.water.values())
            .all(|(&o, &w)| o.min(w) == 0)
    }

    /// Sites holding at least one particle.
    pub fn occupied(&self) -> impl Iterator<Item = (Site, u64, u64)> + '_ {
        let window = self.oil.window();
        self.oil
            .values()
            .iter()
            .zip(self.water.values())
            .enumerate()
            .filter(|(_, (o, w))| **o + **w > 0)
            .map(move |(i, (&o, &w))| (window.site(i), o, w))
    }
}

/// Parameters of a single run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n: u64,
    pub dim: usize,
    pub seed: u64,
    pub policy: Policy,
    pub engine: EngineKind,
    pub mode: StackMode,
    /// Defaults to `100 · 16 n⁴`.
    pub firing_budget: Option<u64>,
    pub max_cells: usize,
    pub record_sequence: bool,
    /// Track the pair-count trajectory and ξ-classes (exact engine on the
    /// line only).
    pub track_pairs: bool,
    /// Test-only: flip the sign of this stack query.
    pub inject_fault: Option<u64>,
}

impl RunConfig {
    pub fn new(n: u64, seed: u64) -> Self {
        RunConfig {
            n,
            dim: 1,
            seed,
            policy: Policy::Leftmost,
            engine: EngineKind::Exact,
            mode: StackMode::Plain,
            firing_budget: None,
            max_cells: 1 << 24,
            record_sequence: false,
            track_pairs: true,
            inject_fault: None,
        }
    }

    pub fn dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn engine(mut self, engine: EngineKind) -> Self {
        self.engine = engine;
        self
    }

    pub fn mode(mut self, mode: StackMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn budget(mut self, budget: u64) -> Self {
        self.firing_budget = Some(budget);
        self
    }

    pub fn record_sequence(mut self, on: bool) -> Self {
        self.record_sequence = on;
        self
    }

    pub fn track_pairs(mut self, on: bool) -> Self {
        self.track_pairs = on;
        self
    }

    pub fn default_budget(n: u64) -> u64 {
        // 100 · 16 n⁴, saturating
        (n as u128).pow(4).saturating_mul(1600).min(u64::MAX as u128) as u64
    }

    pub fn stacks(&self) -> StackSource {
        let s = StackSource::with_mode(self.seed, self.dim, self.mode);
        match self.inject_fault {
            Some(q) => s.with_fault(q),
            None => s,
        }
    }
}

/// Everything recorded about one run to fixation.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub n: u64,
    pub dim: usize,
    pub seed: u64,
    pub policy: String,
    pub engine: EngineKind,
    pub mode: StackMode,
    pub prf: &'static str,
    /// Total number of pair firings.
    pub tau: u64,
    /// Scheduler visits; equals `tau` for the exact engine.
    pub visits: u64,
    pub odometer: SiteField<u64>,
    pub final_config: Configuration,
    pub flux: FluxLedger,
    pub trajectory: Option<PairTrajectory>,
    pub sequence: Option<Vec<Site>>,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn empty(cfg: &RunConfig) -> Self {
        let net = Network::new(cfg.n, cfg.dim);
        net.into_record(cfg, None, None, 0, 0.0)
    }

    pub fn height(&self) -> u64 {
        self.odometer.values().iter().copied().max().unwrap_or(0)
    }
}

/// Where the two particles of one firing went.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairMove {
    pub site: Site,
    pub oil: Step,
    pub water: Step,
}

/// Mutable engine state: configuration, odometer and flux counters over a
/// shared growable window.
#[derive(Clone, Debug)]
pub struct Network {
    n: u64,
    window: Window,
    oil: Vec<u64>,
    water: Vec<u64>,
    fired: Vec<u64>,
    entries: Vec<u64>,
    /// `2 · dim` exit counters per site, indexed by step code.
    exits: Vec<u64>,
    visits: Vec<u64>,
    max_cells: usize,
}

impl Network {
    pub fn new(n: u64, dim: usize) -> Self {
        let window = Window::new(dim, INITIAL_HALF);
        let len = window.len();
        let mut net = Network {
            n,
            window,
            oil: vec![0; len],
            water: vec![0; len],
            fired: vec![0; len],
            entries: vec![0; len],
            exits: vec![0; len * 2 * dim],
            visits: vec![0; len],
            max_cells: usize::MAX,
        };
        let origin = window.index(&Site::ORIGIN).unwrap();
        net.oil[origin] = n;
        net.water[origin] = n;
        net
    }

    pub fn with_cap(mut self, max_cells: usize) -> Self {
        self.max_cells = max_cells;
        self
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    fn dirs(&self) -> usize {
        2 * self.window.dim()
    }

    pub fn configuration(&self) -> Configuration {
        Configuration {
            n: self.n,
            oil: SiteField::new(self.window, self.oil.clone()),
            water: SiteField::new(self.window, self.water.clone()),
        }
    }

    pub fn odometer(&self) -> SiteField<u64> {
        SiteField::new(self.window, self.fired.clone())
    }

    pub fn odometer_at(&self, site: &Site) -> u64 {
        self.window.index(site).map(|i| self.fired[i]).unwrap_or(0)
    }

    pub fn is_legal(&self, site: &Site) -> bool {
        self.window
            .index(site)
            .map(|i| self.pairs_at(i) >= 1)
            .unwrap_or(false)
    }

    #[inline(always)]
    fn pairs_at(&self, idx: usize) -> u64 {
        self.oil[idx].min(self.water[idx])
    }

    #[inline(always)]
    fn imbalance_at(&self, idx: usize) -> i64 {
        self.oil[idx] as i64 - self.water[idx] as i64
    }

    /// Grow until `idx` is off the border. Returns the (possibly moved)
    /// index and whether the window changed.
    fn make_interior(&mut self, mut idx: usize) -> Result<(usize, Option<Window>), EngineError> {
        let mut old = None;
        while self.window.on_border(idx) {
            let from = self.window;
            let to = from.grown();
            if to.len() > self.max_cells {
                return Err(EngineError::WindowCapExceeded {
                    requested: to.len(),
                    cap: self.max_cells,
                });
            }
            let dirs = self.dirs();
            self.oil = from.remap(&to, &self.oil, 1);
            self.water = from.remap(&to, &self.water, 1);
            self.fired = from.remap(&to, &self.fired, 1);
            self.entries = from.remap(&to, &self.entries, 1);
            self.exits = from.remap(&to, &self.exits, dirs);
            self.visits = from.remap(&to, &self.visits, 1);
            idx = to.index(&from.site(idx)).unwrap();
            self.window = to;
            old.get_or_insert(from);
        }
        Ok((idx, old))
    }

    #[inline(always)]
    fn neighbour(&self, idx: usize, step: Step) -> usize {
        let stride = self.window.stride(step.axis());
        if step.is_positive() {
            idx + stride
        } else {
            idx - stride
        }
    }

    #[inline(always)]
    fn pair_steps<S: Stacks + ?Sized>(&self, idx: usize, stacks: &S) -> Result<(Step, Step), EngineError> {
        let site = self.window.site(idx);
        let index = self.fired[idx] + 1;
        if stacks.mode() == StackMode::Merged && site.x().rem_euclid(3) != 0 {
            let partner = if site.x().rem_euclid(3) == 2 { 2 } else { -2 };
            let partner_fired = self.odometer_at(&site.offset(0, partner));
            let merged_index = self.fired[idx] + partner_fired + 1;
            Ok((
                stacks.merged_draw(site.x(), merged_index, Species::Oil)?,
                stacks.merged_draw(site.x(), merged_index, Species::Water)?,
            ))
        } else {
            Ok((
                stacks.draw_move(StackAddress::new(site, index, Species::Oil)),
                stacks.draw_move(StackAddress::new(site, index, Species::Water)),
            ))
        }
    }

    #[inline(always)]
    fn send(&mut self, from: usize, step: Step, count: u64, species: Species) -> usize {
        let to = self.neighbour(from, step);
        match species {
            Species::Oil => self.oil[to] += count,
            Species::Water => self.water[to] += count,
        }
        self.entries[to] += count;
        let dirs = self.dirs();
        self.exits[from * dirs + step.code()] += count;
        to
    }

    /// Interior index of a legal site; the firing primitive at an index.
    fn fire_at<S: Stacks + ?Sized>(&mut self, idx: usize, stacks: &S) -> Result<(Step, Step), EngineError> {
        if self.pairs_at(idx) == 0 {
            return Err(EngineError::IllegalFiring {
                site: self.window.site(idx),
                oil: self.oil[idx],
                water: self.water[idx],
            });
        }
        let (oil_step, water_step) = self.pair_steps(idx, stacks)?;
        self.oil[idx] -= 1;
        self.water[idx] -= 1;
        self.fired[idx] += 1;
        self.send(idx, oil_step, 1, Species::Oil);
        self.send(idx, water_step, 1, Species::Water);
        Ok((oil_step, water_step))
    }

    /// Fire one oil-water pair from `site`.
    pub fn fire_pair<S: Stacks + ?Sized>(&mut self, site: Site, stacks: &S) -> Result<PairMove, EngineError> {
        let idx = self.window.index(&site).ok_or(EngineError::IllegalFiring { site, oil: 0, water: 0 })?;
        let (idx, _) = self.make_interior(idx)?;
        let (oil, water) = self.fire_at(idx, stacks)?;
        Ok(PairMove { site, oil, water })
    }

    fn batch_at<S: Stacks + ?Sized>(
        &mut self,
        idx: usize,
        k: u64,
        stacks: &S,
        draws: BatchDraws,
    ) -> Result<(), EngineError> {
        let available = self.pairs_at(idx);
        if k > available || k == 0 {
            return Err(EngineError::InsufficientPairs {
                site: self.window.site(idx),
                requested: k,
                available,
            });
        }
        let dirs = self.dirs();
        let mut counts = [[0u64; 2 * MAX_DIM]; 2];
        match draws {
            BatchDraws::StackSums => {
                if stacks.mode() == StackMode::Merged {
                    return Err(EngineError::Unsupported("batched firing with merged stacks".into()));
                }
                let site = self.window.site(idx);
                let first = self.fired[idx] + 1;
                for index in first..first + k {
                    for (s, species) in Species::BOTH.into_iter().enumerate() {
                        let step = stacks.draw_move(StackAddress::new(site, index, species));
                        counts[s][step.code()] += 1;
                    }
                }
            }
            BatchDraws::Binomial => {
                let site = self.window.site(idx);
                let visit = self.visits[idx] + 1;
                for (s, species) in Species::BOTH.into_iter().enumerate() {
                    let mut rng = KeyedRng::new(stacks.batch_key(site, visit, species));
                    multinomial_uniform(&mut rng, k, &mut counts[s][..dirs]);
                }
            }
        }
        self.visits[idx] += 1;
        self.oil[idx] -= k;
        self.water[idx] -= k;
        self.fired[idx] += k;
        for (s, species) in Species::BOTH.into_iter().enumerate() {
            for (code, &c) in counts[s][..dirs].iter().enumerate() {
                if c > 0 {
                    self.send(idx, Step::from_code(code), c, species);
                }
            }
        }
        Ok(())
    }

    /// Fire `k` pairs from `site` in one visit.
    pub fn fire_batch<S: Stacks + ?Sized>(
        &mut self,
        site: Site,
        k: u64,
        stacks: &S,
        draws: BatchDraws,
    ) -> Result<(), EngineError> {
        let idx = self.window.index(&site).ok_or(EngineError::InsufficientPairs {
            site,
            requested: k,
            available: 0,
        })?;
        let (idx, _) = self.make_interior(idx)?;
        self.batch_at(idx, k, stacks, draws)
    }

    fn flux(&self) -> FluxLedger {
        FluxLedger::new(self.window, self.entries.clone(), self.exits.clone())
    }

    fn into_record(
        self,
        cfg: &RunConfig,
        trajectory: Option<PairTrajectory>,
        sequence: Option<Vec<Site>>,
        visits: u64,
        wall_time: f64,
    ) -> RunRecord {
        let tau = self.fired.iter().sum();
        RunRecord {
            n: cfg.n,
            dim: cfg.dim,
            seed: cfg.seed,
            policy: cfg.policy.name().to_string(),
            engine: cfg.engine,
            mode: cfg.mode,
            prf: PRF_ID,
            tau,
            visits,
            flux: self.flux(),
            final_config: self.configuration(),
            odometer: self.odometer(),
            trajectory,
            sequence,
            wall_time,
        }
    }
}

/// Split `k` trials uniformly over `bins.len()` outcomes.
fn multinomial_uniform<R: Rng>(rng: &mut R, k: u64, bins: &mut [u64]) {
    let mut left = k;
    let m = bins.len();
    for (j, bin) in bins.iter_mut().enumerate() {
        if j + 1 == m {
            *bin = left;
            break;
        }
        let p = 1.0 / (m - j) as f64;
        let b = if left == 0 {
            0
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        *bin = b;
        left -= b;
    }
}

/// Active-site bookkeeping for each policy.
enum Schedule {
    Ordered { active: BTreeSet<usize>, rightmost: bool },
    Random { members: Vec<usize>, pos: HashMap<usize, usize>, rng: KeyedRng },
    Sweep { active: BTreeSet<usize>, round: Vec<usize>, cursor: usize },
    Scripted { steps: VecDeque<ScriptStep>, then: Option<Box<Schedule>> },
}

impl Schedule {
    fn new(policy: &Policy, policy_key: u64) -> Self {
        match policy {
            Policy::Leftmost => Schedule::Ordered {
                active: BTreeSet::new(),
                rightmost: false,
            },
            Policy::Rightmost => Schedule::Ordered {
                active: BTreeSet::new(),
                rightmost: true,
            },
            Policy::UniformRandom => Schedule::Random {
                members: Vec::new(),
                pos: HashMap::new(),
                rng: KeyedRng::new(policy_key),
            },
            Policy::SweepParallel => Schedule::Sweep {
                active: BTreeSet::new(),
                round: Vec::new(),
                cursor: 0,
            },
            Policy::Scripted(script) => Schedule::Scripted {
                steps: script.steps.iter().cloned().collect(),
                then: script.then.as_ref().map(|p| Box::new(Schedule::new(p, policy_key))),
            },
        }
    }

    fn set(&mut self, idx: usize, active: bool) {
        match self {
            Schedule::Ordered { active: set, .. } | Schedule::Sweep { active: set, .. } => {
                if active {
                    set.insert(idx);
                } else {
                    set.remove(&idx);
                }
            }
            Schedule::Random { members, pos, .. } => {
                if active {
                    if let std::collections::hash_map::Entry::Vacant(e) = pos.entry(idx) {
                        e.insert(members.len());
                        members.push(idx);
                    }
                } else if let Some(p) = pos.remove(&idx) {
                    members.swap_remove(p);
                    if p < members.len() {
                        pos.insert(members[p], p);
                    }
                }
            }
            Schedule::Scripted { then, .. } => {
                if let Some(t) = then {
                    t.set(idx, active);
                }
            }
        }
    }

    fn remap(&mut self, from: &Window, to: &Window) {
        let map = |i: usize| to.index(&from.site(i)).unwrap();
        match self {
            Schedule::Ordered { active, .. } => *active = active.iter().map(|&i| map(i)).collect(),
            Schedule::Sweep { active, round, .. } => {
                *active = active.iter().map(|&i| map(i)).collect();
                round.iter_mut().for_each(|i| *i = map(*i));
            }
            Schedule::Random { members, pos, .. } => {
                members.iter_mut().for_each(|i| *i = map(*i));
                *pos = members.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            }
            Schedule::Scripted { then, .. } => {
                if let Some(t) = then {
                    t.remap(from, to);
                }
            }
        }
    }

    fn next(&mut self, net: &Network) -> Result<Option<usize>, EngineError> {
        match self {
            Schedule::Ordered { active, rightmost } => Ok(if *rightmost {
                active.last().copied()
            } else {
                active.first().copied()
            }),
            Schedule::Random { members, rng, .. } => Ok(if members.is_empty() {
                None
            } else {
                Some(members[rng.random_range(0..members.len())])
            }),
            Schedule::Sweep { active, round, cursor } => {
                if *cursor >= round.len() {
                    round.clear();
                    round.extend(active.iter().copied());
                    *cursor = 0;
                }
                let next = round.get(*cursor).copied();
                *cursor += 1;
                Ok(next)
            }
            Schedule::Scripted { steps, then } => {
                while let Some(step) = steps.front() {
                    match step {
                        ScriptStep::Fire(site) => {
                            let site = *site;
                            steps.pop_front();
                            return match net.window.index(&site) {
                                Some(i) if net.pairs_at(i) > 0 => Ok(Some(i)),
                                _ => Err(EngineError::IllegalFiring {
                                    site,
                                    oil: net.configuration().oil.get(&site),
                                    water: net.configuration().water.get(&site),
                                }),
                            };
                        }
                        ScriptStep::FireWhileLegal(site) => match net.window.index(site) {
                            Some(i) if net.pairs_at(i) > 0 => return Ok(Some(i)),
                            _ => {
                                steps.pop_front();
                            }
                        },
                    }
                }
                match then {
                    Some(t) => t.next(net),
                    None => Ok(None),
                }
            }
        }
    }
}

/// Run from `n` pairs at the origin until fixation.
pub fn run_to_fixation(cfg: &RunConfig) -> Result<RunRecord, EngineError> {
    let stacks = cfg.stacks();
    run_with_stacks(cfg, &stacks)
}

/// As [`run_to_fixation`] with an explicit stack source.
pub fn run_with_stacks<S: Stacks + ?Sized>(cfg: &RunConfig, stacks: &S) -> Result<RunRecord, EngineError> {
    if stacks.dim() != cfg.dim {
        return Err(EngineError::Unsupported(format!(
            "stack dimension {} differs from run dimension {}",
            stacks.dim(),
            cfg.dim
        )));
    }
    if cfg.mode == StackMode::Merged && (cfg.dim != 1 || cfg.engine != EngineKind::Exact) {
        return Err(EngineError::Unsupported(
            "merged stacks need the exact engine in dimension 1".into(),
        ));
    }
    let start = Instant::now();
    let mut net = Network::new(cfg.n, cfg.dim).with_cap(cfg.max_cells);
    if cfg.n == 0 {
        return Ok(net.into_record(cfg, None, cfg.record_sequence.then(Vec::new), 0, 0.0));
    }
    let budget = cfg.firing_budget.unwrap_or_else(|| RunConfig::default_budget(cfg.n));
    let track = cfg.track_pairs && cfg.dim == 1 && cfg.engine == EngineKind::Exact;
    let mut trajectory = track.then(|| PairTrajectory::new(cfg.n, cfg.policy.name()));
    let mut sequence = cfg.record_sequence.then(Vec::new);

    let mut schedule = Schedule::new(&cfg.policy, stacks.policy_key());
    schedule.set(net.window.index(&Site::ORIGIN).unwrap(), true);

    let mut fired_total = 0u64;
    let mut visits = 0u64;
    while let Some(idx) = schedule.next(&net)? {
        let (idx, grown) = net.make_interior(idx)?;
        if let Some(from) = grown {
            schedule.remap(&from, &net.window);
        }
        let k = match cfg.engine {
            EngineKind::Exact => 1,
            EngineKind::Batched(_) => net.pairs_at(idx),
        };
        if fired_total.saturating_add(k) > budget {
            return Err(EngineError::BudgetExceeded {
                n: cfg.n,
                seed: cfg.seed,
                fired: fired_total,
                budget,
            });
        }
        visits += 1;
        fired_total += k;
        if let Some(seq) = sequence.as_mut() {
            seq.push(net.window.site(idx));
        }
        match cfg.engine {
            EngineKind::Exact => {
                let local = trajectory.as_ref().map(|_| {
                    let l = net.imbalance_at(idx - 1);
                    let r = net.imbalance_at(idx + 1);
                    (l, r, local_pairs(&net, idx))
                });
                let (oil_step, water_step) = net.fire_at(idx, stacks)?;
                if let (Some(traj), Some((l, r, before))) = (trajectory.as_mut(), local) {
                    let dp = local_pairs(&net, idx) as i64 - before as i64;
                    traj.record_firing(net.window.site(idx).x(), l, r, dp)?;
                }
                let oil_to = net.neighbour(idx, oil_step);
                let water_to = net.neighbour(idx, water_step);
                for i in [idx, oil_to, water_to] {
                    schedule.set(i, net.pairs_at(i) > 0);
                }
            }
            EngineKind::Batched(draws) => {
                net.batch_at(idx, k, stacks, draws)?;
                schedule.set(idx, false);
                for code in 0..net.dirs() {
                    let j = net.neighbour(idx, Step::from_code(code));
                    schedule.set(j, net.pairs_at(j) > 0);
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(net.into_record(cfg, trajectory, sequence, visits, elapsed))
}

#[inline(always)]
fn local_pairs(net: &Network, idx: usize) -> u64 {
    net.pairs_at(idx - 1) + net.pairs_at(idx) + net.pairs_at(idx + 1)
}

/// One disagreement between two policies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub policy: String,
    pub reference: String,
    pub field: &'static str,
    pub site: Option<Site>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AbelianReport {
    pub n: u64,
    pub seed: u64,
    pub tau: u64,
    pub mismatches: Vec<Mismatch>,
}

impl AbelianReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn first_difference(a: &SiteField<u64>, b: &SiteField<u64>) -> Option<Site> {
    let sites: BTreeSet<Site> = a.nonzero().chain(b.nonzero()).map(|(s, _)| s).collect();
    sites.into_iter().find(|s| a.get(s) != b.get(s))
}

/// Compare odometer and final configuration across `policies` (exact
/// engine) for one seed.
pub fn verify_abelian(n: u64, seed: u64, policies: &[Policy]) -> Result<AbelianReport, EngineError> {
    verify_abelian_with(&RunConfig::new(n, seed).track_pairs(false), policies)
}

/// As [`verify_abelian`] starting from an arbitrary base configuration
/// (dimension, stack mode, fault injection).
pub fn verify_abelian_with(base: &RunConfig, policies: &[Policy]) -> Result<AbelianReport, EngineError> {
    let mut report = AbelianReport {
        n: base.n,
        seed: base.seed,
        ..Default::default()
    };
    let mut reference: Option<RunRecord> = None;
    for policy in policies {
        let cfg = base.clone().policy(policy.clone()).engine(EngineKind::Exact);
        let run = run_to_fixation(&cfg)?;
        match &reference {
            None => {
                report.tau = run.tau;
                reference = Some(run);
            }
            Some(r) => {
                let mut push = |field, site| {
                    report.mismatches.push(Mismatch {
                        policy: policy.name().to_string(),
                        reference: r.policy.clone(),
                        field,
                        site,
                    })
                };
                if r.tau != run.tau {
                    push("tau", None);
                }
                if let Some(site) = first_difference(&r.odometer, &run.odometer) {
                    push("odometer", Some(site));
                }
                if let Some(site) = first_difference(&r.final_config.oil, &run.final_config.oil) {
                    push("oil", Some(site));
                }
                if let Some(site) = first_difference(&r.final_config.water, &run.final_config.water) {
                    push("water", Some(site));
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct LeastActionReport {
    pub prefix_length: u64,
    pub complete_tau: u64,
    /// Sites where the prefix odometer exceeds the complete one.
    pub violations: Vec<Site>,
}

impl LeastActionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Execute a legal prefix and a complete run from the same stacks and check
/// `u_prefix <= u_complete` pointwise. An illegal prefix is an error.
pub fn verify_least_action(
    n: u64,
    seed: u64,
    prefix: Vec<ScriptStep>,
    complete: Policy,
) -> Result<LeastActionReport, EngineError> {
    let base = RunConfig::new(n, seed).track_pairs(false);
    let partial = run_to_fixation(&base.clone().policy(Policy::scripted(prefix)))?;
    let full = run_to_fixation(&base.policy(complete))?;
    if !full.final_config.is_complete() {
        return Err(EngineError::Unsupported("complete policy did not fixate".into()));
    }
    let violations = partial
        .odometer
        .nonzero()
        .filter(|(s, u)| *u > full.odometer.get(s))
        .map(|(s, _)| s)
        .collect();
    Ok(LeastActionReport {
        prefix_length: partial.tau,
        complete_tau: full.tau,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacks::stub::{ConstantStacks, ScriptedStacks};

    fn exact(n: u64, seed: u64) -> RunRecord {
        run_to_fixation(&RunConfig::new(n, seed)).unwrap()
    }

    #[test]
    fn legality() {
        let c = Configuration::from_line(&[(0, 3, 1), (1, 5, 0)]);
        assert!(c.is_legal(&Site::line(0)));
        assert!(!c.is_legal(&Site::line(1)));
        assert!(!c.is_legal(&Site::line(40)));
        assert!(Configuration::initial(1, 1).is_legal(&Site::ORIGIN));
        assert!(Configuration::initial(4, 2).is_legal(&Site::ORIGIN));
        assert!(!Configuration::initial(0, 1).is_legal(&Site::ORIGIN));
    }

    #[test]
    fn separating_pair_fixates() {
        let stacks = ScriptedStacks::new(0)
            .set(0, 1, Species::Oil, Step::RIGHT)
            .set(0, 1, Species::Water, Step::LEFT);
        let mut net = Network::new(1, 1);
        net.fire_pair(Site::ORIGIN, &stacks).unwrap();
        let c = net.configuration();
        assert_eq!((c.oil.at(1), c.water.at(-1)), (1, 1));
        assert!(c.is_complete());
        assert_eq!(net.odometer_at(&Site::ORIGIN), 1);
    }

    #[test]
    fn travelling_pair_stays_active() {
        let stacks = ConstantStacks { dim: 1, step: Step::RIGHT };
        let mut net = Network::new(1, 1);
        net.fire_pair(Site::ORIGIN, &stacks).unwrap();
        assert!(net.is_legal(&Site::line(1)));
        assert!(!net.is_legal(&Site::ORIGIN));
    }

    #[test]
    fn firing_conserves_mass() {
        let stacks = StackSource::new(4, 1);
        let mut net = Network::new(9, 1);
        for _ in 0..9 {
            net.fire_pair(Site::ORIGIN, &stacks).unwrap();
        }
        let c = net.configuration();
        assert_eq!((c.total(Species::Oil), c.total(Species::Water)), (9, 9));
    }

    #[test]
    fn illegal_fire_is_rejected() {
        let stacks = StackSource::new(4, 1);
        let mut net = Network::new(1, 1);
        assert!(matches!(
            net.fire_pair(Site::line(3), &stacks),
            Err(EngineError::IllegalFiring { .. })
        ));
        assert!(matches!(
            net.fire_batch(Site::ORIGIN, 2, &stacks, BatchDraws::StackSums),
            Err(EngineError::InsufficientPairs { requested: 2, available: 1, .. })
        ));
    }

    #[test]
    fn batch_of_one_equals_single_firing() {
        let stacks = StackSource::new(21, 1);
        let mut a = Network::new(3, 1);
        let mut b = Network::new(3, 1);
        a.fire_pair(Site::ORIGIN, &stacks).unwrap();
        b.fire_batch(Site::ORIGIN, 1, &stacks, BatchDraws::StackSums).unwrap();
        assert_eq!(a.configuration(), b.configuration());
        assert_eq!(a.odometer(), b.odometer());
    }

    #[test]
    fn batch_with_all_right_stacks() {
        let stacks = ConstantStacks { dim: 1, step: Step::RIGHT };
        let mut net = Network::new(4, 1);
        net.fire_batch(Site::ORIGIN, 4, &stacks, BatchDraws::StackSums).unwrap();
        let c = net.configuration();
        assert_eq!((c.oil.at(1), c.water.at(1)), (4, 4));
        assert_eq!(net.odometer_at(&Site::ORIGIN), 4);
    }

    #[test]
    fn thousand_pair_batch_equals_sequential_firing() {
        let stacks = StackSource::new(77, 1);
        let mut seq = Network::new(1000, 1);
        for _ in 0..1000 {
            seq.fire_pair(Site::ORIGIN, &stacks).unwrap();
        }
        let mut batch = Network::new(1000, 1);
        batch.fire_batch(Site::ORIGIN, 1000, &stacks, BatchDraws::StackSums).unwrap();
        assert_eq!(seq.configuration(), batch.configuration());
    }

    #[test]
    fn empty_run() {
        let r = exact(0, 3);
        assert_eq!(r.tau, 0);
        assert_eq!(r.odometer.nonzero().count(), 0);
        assert!(r.final_config.is_complete());
    }

    #[test]
    fn single_pair_ends_two_apart() {
        for seed in 0..200 {
            let r = exact(1, seed);
            let occupied: Vec<_> = r.final_config.occupied().collect();
            assert_eq!(occupied.len(), 2, "seed {seed}");
            assert_eq!((occupied[1].0.x() - occupied[0].0.x()), 2);
            assert_eq!(r.tau, r.odometer.values().iter().sum::<u64>());
        }
    }

    #[test]
    fn final_state_is_complete_and_conserves_mass() {
        for (n, seed) in [(5, 1), (40, 2), (120, 3)] {
            for engine in [
                EngineKind::Exact,
                EngineKind::Batched(BatchDraws::Binomial),
                EngineKind::Batched(BatchDraws::StackSums),
            ] {
                let r = run_to_fixation(&RunConfig::new(n, seed).engine(engine)).unwrap();
                assert!(r.final_config.is_complete());
                assert_eq!(r.final_config.total(Species::Oil), n);
                assert_eq!(r.final_config.total(Species::Water), n);
                assert_eq!(r.tau, r.odometer.values().iter().sum::<u64>());
            }
        }
    }

    #[test]
    fn batched_stack_sums_match_exact_engine() {
        for seed in 0..20 {
            let e = exact(60, seed);
            for policy in [Policy::SweepParallel, Policy::Leftmost, Policy::UniformRandom] {
                let b = run_to_fixation(
                    &RunConfig::new(60, seed)
                        .engine(EngineKind::Batched(BatchDraws::StackSums))
                        .policy(policy),
                )
                .unwrap();
                assert_eq!(e.odometer.nonzero().collect::<Vec<_>>(), b.odometer.nonzero().collect::<Vec<_>>());
                assert_eq!(e.final_config.occupied().collect::<Vec<_>>(), b.final_config.occupied().collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn abelian_small_cases() {
        let policies = [
            Policy::Leftmost,
            Policy::Rightmost,
            Policy::UniformRandom,
            Policy::SweepParallel,
        ];
        assert!(verify_abelian(1, 9, &policies).unwrap().passed());
        assert!(verify_abelian(100, 1, &policies[..3]).unwrap().passed());
    }

    #[test]
    fn abelian_in_the_plane() {
        let base = RunConfig::new(30, 5).dim(2).track_pairs(false);
        let report = verify_abelian_with(&base, &[Policy::Leftmost, Policy::Rightmost, Policy::SweepParallel]).unwrap();
        assert!(report.passed(), "{:?}", report.mismatches);
    }

    #[test]
    fn fault_injection_breaks_abelian_check() {
        let policies = [Policy::Leftmost, Policy::Rightmost];
        let broken = (1..=20u64).any(|seed| {
            let mut base = RunConfig::new(20, seed).track_pairs(false);
            base.inject_fault = Some(3);
            !verify_abelian_with(&base, &policies).unwrap().passed()
        });
        assert!(broken);
    }

    #[test]
    fn least_action_with_empty_and_greedy_prefixes() {
        let r = verify_least_action(10, 4, vec![], Policy::Leftmost).unwrap();
        assert!(r.passed());
        assert_eq!(r.prefix_length, 0);
        let r = verify_least_action(25, 4, vec![ScriptStep::FireWhileLegal(Site::ORIGIN)], Policy::Rightmost).unwrap();
        assert!(r.passed());
        assert!(r.prefix_length >= 1);
    }

    #[test]
    fn least_action_with_half_a_leftmost_run() {
        let full = run_to_fixation(&RunConfig::new(30, 8).record_sequence(true)).unwrap();
        let seq = full.sequence.unwrap();
        let prefix = seq[..seq.len() / 2].iter().map(|&s| ScriptStep::Fire(s)).collect();
        let r = verify_least_action(30, 8, prefix, Policy::Rightmost).unwrap();
        assert!(r.passed());
        assert_eq!(r.prefix_length as usize, seq.len() / 2);
    }

    #[test]
    fn illegal_prefix_is_an_error() {
        let err = verify_least_action(3, 1, vec![ScriptStep::Fire(Site::line(5))], Policy::Leftmost);
        assert!(matches!(err, Err(EngineError::IllegalFiring { .. })));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let err = run_to_fixation(&RunConfig::new(50, 1).budget(10)).unwrap_err();
        assert!(matches!(err, EngineError::BudgetExceeded { fired: 10, budget: 10, .. }));
    }

    #[test]
    fn window_cap_is_enforced() {
        let mut cfg = RunConfig::new(200, 1);
        cfg.max_cells = 20;
        assert!(matches!(
            run_to_fixation(&cfg),
            Err(EngineError::WindowCapExceeded { .. })
        ));
    }

    #[test]
    fn merged_mode_runs_and_rejects_batching() {
        let r = run_to_fixation(&RunConfig::new(30, 2).mode(StackMode::Merged)).unwrap();
        assert!(r.final_config.is_complete());
        let err = run_to_fixation(
            &RunConfig::new(30, 2)
                .mode(StackMode::Merged)
                .engine(EngineKind::Batched(BatchDraws::Binomial)),
        );
        assert!(matches!(err, Err(EngineError::Unsupported(_))));
    }

    #[test]
    fn runs_are_reproducible() {
        for engine in [EngineKind::Exact, EngineKind::Batched(BatchDraws::Binomial)] {
            let cfg = RunConfig::new(80, 17).engine(engine).policy(Policy::UniformRandom);
            let a = run_to_fixation(&cfg).unwrap();
            let b = run_to_fixation(&cfg).unwrap();
            assert_eq!(a.odometer, b.odometer);
            assert_eq!(a.final_config, b.final_config);
        }
    }
}
