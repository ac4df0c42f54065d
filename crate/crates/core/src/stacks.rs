//! Keyed stack randomness.
//!
//! Every stack entry `X^x_k` / `Y^x_k` is computed on demand from a keyed
//! pseudo-random function of `(seed, site, index, species, axis)`. Nothing is
//! stored, so a [`StackSource`] is a pure value that can be shared between
//! threads and queried in any order.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Site, MAX_DIM};

/// Identifier of the keyed function below, recorded in every run record.
pub const PRF_ID: &str = "splitmix64-sponge/v1";

const TAG_SIGN: u64 = 0x51;
const TAG_AXIS: u64 = 0xA5;
const TAG_MERGED: u64 = 0x3E;
const TAG_BATCH: u64 = 0xB7;
const TAG_POLICY: u64 = 0x70;

const LANE: [u64; 8] = [
    0x9E37_79B9_7F4A_7C15,
    0xC2B2_AE3D_27D4_EB4F,
    0x1656_67B1_9E37_79F9,
    0xD6E8_FEB8_6659_FD93,
    0xFF51_AFD7_ED55_8CCD,
    0xC4CE_B9FE_1A85_EC53,
    0x8CB9_2BA7_2F3D_8DD7,
    0xA076_1D64_78BD_642F,
];

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed hash of a short word sequence. Each word is absorbed through a
/// bijective mixer with a lane-specific multiplier.
#[inline(always)]
pub fn keyed_hash(key: u64, words: &[u64]) -> u64 {
    let mut h = mix64(key ^ 0x6A09_E667_F3BC_C908);
    for (i, &w) in words.iter().enumerate() {
        h = mix64(h ^ w.wrapping_mul(LANE[i & 7]).wrapping_add(i as u64));
    }
    mix64(h ^ words.len() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Oil,
    Water,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::Oil, Species::Water];

    fn tag(self) -> u64 {
        match self {
            Species::Oil => 1,
            Species::Water => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackMode {
    #[default]
    Plain,
    /// Sites in `3Z ± 1` share a sign-flipped stack anchored at the
    /// neighbouring multiple of three.
    Merged,
}

/// A unit lattice step, encoded as `2 * axis + (sign > 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step(u8);

impl Step {
    pub const LEFT: Step = Step(0);
    pub const RIGHT: Step = Step(1);

    pub fn new(axis: usize, positive: bool) -> Self {
        debug_assert!(axis < MAX_DIM);
        Step((2 * axis + positive as usize) as u8)
    }

    pub fn from_code(code: usize) -> Self {
        debug_assert!(code < 2 * MAX_DIM);
        Step(code as u8)
    }

    pub fn code(self) -> usize {
        self.0 as usize
    }

    pub fn axis(self) -> usize {
        (self.0 >> 1) as usize
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn sign(self) -> i64 {
        if self.is_positive() {
            1
        } else {
            -1
        }
    }

    pub fn flipped(self) -> Self {
        Step(self.0 ^ 1)
    }

    pub fn apply(self, site: Site) -> Site {
        site.offset(self.axis(), self.sign())
    }
}

/// Address of one stack entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StackAddress {
    pub site: Site,
    /// Firing ordinal, starting at 1.
    pub index: u64,
    pub species: Species,
    /// Axis whose sign is drawn. Always 0 on the line.
    pub axis: usize,
}

impl StackAddress {
    pub fn new(site: Site, index: u64, species: Species) -> Self {
        StackAddress {
            site,
            index,
            species,
            axis: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StackError {
    #[error("site {0} lies in 3Z and uses its own plain stack")]
    PlainSite(i64),
    #[error("merged stacks require merged mode in dimension 1")]
    NotMerged,
}

/// Source of all move randomness consumed by the engine.
pub trait Stacks: Sync {
    fn dim(&self) -> usize;

    /// The move taken on the `addr.index`-th firing from `addr.site`.
    fn draw_move(&self, addr: StackAddress) -> Step;

    fn mode(&self) -> StackMode {
        StackMode::Plain
    }

    /// The move taken by a particle fired from `firing_site` (in `3Z ± 1`)
    /// on the `merged_index`-th firing from the pair sharing its stack.
    fn merged_draw(
        &self,
        firing_site: i64,
        merged_index: u64,
        species: Species,
    ) -> Result<Step, StackError> {
        let _ = (firing_site, merged_index, species);
        Err(StackError::NotMerged)
    }

    /// Key for the binomial sampler of a batched visit.
    fn batch_key(&self, site: Site, visit: u64, species: Species) -> u64;

    /// Key for policy-level randomness (uniform random scheduling).
    fn policy_key(&self) -> u64;
}

/// Test-only fault: flips the sign of the `flip_query`-th draw served by a
/// source, which breaks the pure-function contract on purpose.
#[derive(Debug)]
pub struct FaultInjector {
    flip_query: u64,
    queries: AtomicU64,
}

impl FaultInjector {
    pub fn new(flip_query: u64) -> Self {
        FaultInjector {
            flip_query,
            queries: AtomicU64::new(0),
        }
    }

    fn filter(&self, step: Step) -> Step {
        if self.queries.fetch_add(1, Ordering::Relaxed) == self.flip_query {
            step.flipped()
        } else {
            step
        }
    }
}

/// The production stack source: a keyed PRF of the seed and the address.
#[derive(Clone, Debug)]
pub struct StackSource {
    seed: u64,
    mode: StackMode,
    dim: usize,
    fault: Option<Arc<FaultInjector>>,
}

impl StackSource {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        StackSource {
            seed,
            mode: StackMode::Plain,
            dim,
            fault: None,
        }
    }

    pub fn merged(seed: u64) -> Self {
        StackSource {
            mode: StackMode::Merged,
            ..StackSource::new(seed, 1)
        }
    }

    pub fn with_mode(seed: u64, dim: usize, mode: StackMode) -> Self {
        StackSource {
            mode,
            ..StackSource::new(seed, dim)
        }
    }

    /// Attach a fresh fault injector. Each clone made afterwards shares it.
    pub fn with_fault(mut self, flip_query: u64) -> Self {
        self.fault = Some(Arc::new(FaultInjector::new(flip_query)));
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline(always)]
    fn sign_bit(&self, tag: u64, species: Species, site: &Site, index: u64, axis: usize) -> bool {
        let c = site.coords();
        let h = keyed_hash(
            self.seed,
            &[tag | (species.tag() << 8), c[0] as u64, c[1] as u64, c[2] as u64, index, axis as u64],
        );
        h >> 63 == 1
    }

    #[inline(always)]
    fn filtered(&self, step: Step) -> Step {
        match &self.fault {
            Some(f) => f.filter(step),
            None => step,
        }
    }

    /// Σ over the first `k` oil and `k` water draws at `site` of the number
    /// of right moves, minus `k`. Requires dimension 1.
    pub fn prefix_imbalance(&self, site: i64, k: u64) -> i64 {
        prefix_imbalance(self, site, k)
    }
}

impl Stacks for StackSource {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn draw_move(&self, addr: StackAddress) -> Step {
        let axis = if self.dim == 1 {
            0
        } else {
            let c = addr.site.coords();
            let h = keyed_hash(
                self.seed,
                &[TAG_AXIS | (addr.species.tag() << 8), c[0] as u64, c[1] as u64, c[2] as u64, addr.index],
            );
            // multiply-high maps the top 32 bits uniformly onto 0..dim
            (((h >> 32) * self.dim as u64) >> 32) as usize
        };
        let positive = self.sign_bit(TAG_SIGN, addr.species, &addr.site, addr.index, axis);
        self.filtered(Step::new(axis, positive))
    }

    fn mode(&self) -> StackMode {
        self.mode
    }

    fn merged_draw(
        &self,
        firing_site: i64,
        merged_index: u64,
        species: Species,
    ) -> Result<Step, StackError> {
        if self.mode != StackMode::Merged || self.dim != 1 {
            return Err(StackError::NotMerged);
        }
        let (anchor, flip) = match firing_site.rem_euclid(3) {
            0 => return Err(StackError::PlainSite(firing_site)),
            2 => (firing_site + 1, false),
            _ => (firing_site - 1, true),
        };
        let positive = self.sign_bit(TAG_MERGED, species, &Site::line(anchor), merged_index, 0);
        let bar = Step::new(0, positive);
        Ok(self.filtered(if flip { bar.flipped() } else { bar }))
    }

    fn batch_key(&self, site: Site, visit: u64, species: Species) -> u64 {
        let c = site.coords();
        keyed_hash(
            self.seed,
            &[TAG_BATCH | (species.tag() << 8), c[0] as u64, c[1] as u64, c[2] as u64, visit],
        )
    }

    fn policy_key(&self) -> u64 {
        keyed_hash(self.seed, &[TAG_POLICY])
    }
}

/// `Δ^x(k)`: right moves among the first `k` oil and `k` water draws at
/// `site`, minus `k`.
pub fn prefix_imbalance<S: Stacks + ?Sized>(stacks: &S, site: i64, k: u64) -> i64 {
    let site = Site::line(site);
    let mut right = 0i64;
    for index in 1..=k {
        for species in Species::BOTH {
            if stacks.draw_move(StackAddress::new(site, index, species)).is_positive() {
                right += 1;
            }
        }
    }
    right - k as i64
}

/// SplitMix64 stream used wherever a keyed sub-stream feeds a `rand`
/// distribution (binomial batches, random scheduling, Monte Carlo oracles).
#[derive(Clone, Debug)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn new(key: u64) -> Self {
        KeyedRng { state: key }
    }

    pub fn from_words(seed: u64, words: &[u64]) -> Self {
        KeyedRng::new(keyed_hash(seed, words))
    }
}

impl RngCore for KeyedRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Deterministic stand-ins for [`StackSource`] used by tests.
pub mod stub {
    use std::collections::HashMap;

    use super::*;

    /// Every draw returns the same step.
    #[derive(Clone, Debug)]
    pub struct ConstantStacks {
        pub dim: usize,
        pub step: Step,
    }

    impl Stacks for ConstantStacks {
        fn dim(&self) -> usize {
            self.dim
        }

        fn draw_move(&self, _addr: StackAddress) -> Step {
            self.step
        }

        fn batch_key(&self, site: Site, visit: u64, species: Species) -> u64 {
            let c = site.coords();
            keyed_hash(0, &[species.tag(), c[0] as u64, visit])
        }

        fn policy_key(&self) -> u64 {
            0
        }
    }

    /// Explicit stack entries on the line; unlisted entries fall back to a
    /// keyed source.
    #[derive(Clone, Debug)]
    pub struct ScriptedStacks {
        pub entries: HashMap<(i64, u64, Species), Step>,
        pub fallback: StackSource,
    }

    impl ScriptedStacks {
        pub fn new(seed: u64) -> Self {
            ScriptedStacks {
                entries: HashMap::new(),
                fallback: StackSource::new(seed, 1),
            }
        }

        pub fn set(mut self, site: i64, index: u64, species: Species, step: Step) -> Self {
            self.entries.insert((site, index, species), step);
            self
        }
    }

    impl Stacks for ScriptedStacks {
        fn dim(&self) -> usize {
            1
        }

        fn draw_move(&self, addr: StackAddress) -> Step {
            self.entries
                .get(&(addr.site.x(), addr.index, addr.species))
                .copied()
                .unwrap_or_else(|| self.fallback.draw_move(addr))
        }

        fn batch_key(&self, site: Site, visit: u64, species: Species) -> u64 {
            self.fallback.batch_key(site, visit, species)
        }

        fn policy_key(&self) -> u64 {
            self.fallback.policy_key()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oil(site: i64, index: u64) -> StackAddress {
        StackAddress::new(Site::line(site), index, Species::Oil)
    }

    #[test]
    fn draws_are_deterministic() {
        let s = StackSource::new(7, 1);
        assert_eq!(s.draw_move(oil(0, 1)), s.draw_move(oil(0, 1)));
        let t = StackSource::new(7, 1);
        assert_eq!(s.draw_move(oil(0, 1)), t.draw_move(oil(0, 1)));
    }

    #[test]
    fn seeds_disagree_about_half_the_time() {
        let agree = (0..20_000u64)
            .filter(|&seed| {
                StackSource::new(seed, 1).draw_move(oil(0, 1))
                    == StackSource::new(seed + 1_000_000, 1).draw_move(oil(0, 1))
            })
            .count();
        let frac = agree as f64 / 20_000.0;
        // 3 sigma of a fair coin over 2e4 trials is 0.0106
        assert!((frac - 0.5).abs() < 0.0106, "agreement {frac}");
    }

    #[test]
    fn mean_of_a_million_draws_is_centered() {
        let s = StackSource::new(11, 1);
        let sum: i64 = (1..=1_000_000u64).map(|k| s.draw_move(oil(3, k)).sign()).sum();
        let mean = sum as f64 / 1e6;
        assert!(mean.abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn query_order_does_not_matter() {
        let s = StackSource::new(99, 2);
        let addrs: Vec<_> = (0..200)
            .map(|i| StackAddress::new(Site::plane(i % 7 - 3, i / 7 - 10), (i as u64 % 5) + 1, Species::Water))
            .collect();
        let forward: Vec<_> = addrs.iter().map(|&a| s.draw_move(a)).collect();
        let backward: Vec<_> = addrs.iter().rev().map(|&a| s.draw_move(a)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn plane_directions_are_uniform_over_four() {
        let s = StackSource::new(5, 2);
        let mut counts = [0u64; 4];
        let trials = 400_000u64;
        for k in 1..=trials {
            let step = s.draw_move(StackAddress::new(Site::plane(1, -2), k, Species::Oil));
            counts[step.code()] += 1;
        }
        let expected = trials as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 3 dof, 0.1% critical value
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn species_and_neighbouring_sites_are_uncorrelated() {
        let s = StackSource::new(2024, 1);
        let n = 200_000u64;
        let mut cross_species = 0i64;
        let mut cross_site = 0i64;
        let mut cross_index = 0i64;
        for k in 1..=n {
            let a = s.draw_move(oil(0, k)).sign();
            cross_species += a * s.draw_move(StackAddress::new(Site::line(0), k, Species::Water)).sign();
            cross_site += a * s.draw_move(oil(1, k)).sign();
            cross_index += a * s.draw_move(oil(0, k + 1)).sign();
        }
        // correlations of independent signs have sd 1/sqrt(n); allow 4 sd
        let band = 4.0 / (n as f64).sqrt();
        for c in [cross_species, cross_site, cross_index] {
            assert!((c as f64 / n as f64).abs() < band, "correlation {c}");
        }
    }

    #[test]
    fn merged_draws_flip_sign_across_the_anchor() {
        let s = StackSource::merged(3);
        let left = s.merged_draw(2, 1, Species::Oil).unwrap();
        let right = s.merged_draw(4, 1, Species::Oil).unwrap();
        assert_eq!(left, right.flipped());
        let left = s.merged_draw(-4, 9, Species::Water).unwrap();
        let right = s.merged_draw(-2, 9, Species::Water).unwrap();
        assert_eq!(left, right.flipped());
        assert_eq!(s.merged_draw(3, 1, Species::Oil), Err(StackError::PlainSite(3)));
        assert_eq!(s.merged_draw(0, 1, Species::Oil), Err(StackError::PlainSite(0)));
        assert_eq!(
            StackSource::new(3, 1).merged_draw(2, 1, Species::Oil),
            Err(StackError::NotMerged)
        );
    }

    #[test]
    fn prefix_imbalance_edge_cases() {
        let s = StackSource::new(1, 1);
        assert_eq!(s.prefix_imbalance(0, 0), 0);
        for k in [1, 5, 100] {
            assert!(s.prefix_imbalance(4, k).unsigned_abs() <= k);
        }
        let all_right = stub::ConstantStacks {
            dim: 1,
            step: Step::RIGHT,
        };
        assert_eq!(prefix_imbalance(&all_right, 0, 17), 17);
    }

    #[test]
    fn prefix_imbalance_tail_matches_binomial_law() {
        // Δ(k) + k ~ Binomial(2k, 1/2); P(|Δ(10^4)| > 10^{4·0.51}) = 0.121484
        // from the exact binomial tail.
        let k = 10_000u64;
        let threshold = (k as f64).powf(0.51);
        let trials = 4_000u64;
        let exceed = (0..trials)
            .filter(|&t| (StackSource::new(t, 1).prefix_imbalance(0, k) as f64).abs() > threshold)
            .count();
        let p = exceed as f64 / trials as f64;
        let sd = (0.121484f64 * (1.0 - 0.121484) / trials as f64).sqrt();
        assert!((p - 0.121484).abs() < 4.0 * sd, "tail frequency {p}");

        let mean: f64 = (0..trials)
            .map(|t| StackSource::new(t + 50_000, 1).prefix_imbalance(2, 400) as f64)
            .sum::<f64>()
            / trials as f64;
        // Var Δ(400) = 200
        assert!(mean.abs() < 4.0 * (200.0 / trials as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn fault_injector_flips_exactly_one_query() {
        let clean = StackSource::new(8, 1);
        let faulty = StackSource::new(8, 1).with_fault(2);
        let draws: Vec<_> = (1..=5).map(|k| (clean.draw_move(oil(0, k)), faulty.draw_move(oil(0, k)))).collect();
        for (i, (a, b)) in draws.iter().enumerate() {
            if i == 2 {
                assert_eq!(*a, b.flipped());
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
