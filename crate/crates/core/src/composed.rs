//! The composed sampler: hash the support into `m^3` slots, compress each
//! bucket's small items into one representative, round the compressed image
//! with the tree sampler and lift the result back. Hash collisions and heavy
//! buckets fall back to the previous level of the ladder; level 0 is the
//! tree sampler over `[n]`.
//!
//! A [`LadderPlan`] is seed independent: it fixes per-level bucket counts
//! and stretch bounds. A [`ComposedSampler`] binds a plan to a master seed.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::{SeedContext, ROLE, ROLE_SIMPLEX, ROLE_TREE};
use crate::simplex::ClockSampler;
use crate::tree::{tree_stretch_bound, TreePlan};
use crate::vectors::{compensated_sum, SampleSet, SparseVector, BUDGET_TOLERANCE};

/// Lower bound on the bucket count.
pub const MIN_BUCKETS: u64 = 1 << 15;
/// Upper bound on the bucket count; keeps `m^3` inside 126 bits so node
/// codes of the image tree fit in `u128`.
pub const MAX_BUCKETS: u64 = 1 << 42;
/// Largest `m` for which the bucket-vs-bucket collision check enumerates
/// every bucket. Above it only buckets holding small mass are checked.
pub const FULL_COLLISION_CHECK_LIMIT: u64 = 1 << 16;
/// Extra ladder levels allowed beyond `log* n`.
pub const DEPTH_SLACK: usize = 8;

const SMALL_THRESHOLD: f64 = 0.1;
const THRESHOLD_SPREAD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Constant of the stretch recurrence `alpha_l = c_rec (log k + log alpha_{l-1})`.
    pub c_rec: f64,
    /// Fixed bucket count for every level instead of the analytic size.
    pub m_override: Option<u64>,
    /// Exact number of composed levels, bypassing the truncation rule.
    pub depth: Option<usize>,
    /// Restrict bucket collision checks to buckets with small mass.
    pub skip_empty_bucket_collisions: bool,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            c_rec: 2.0,
            m_override: None,
            depth: None,
            skip_empty_bucket_collisions: false,
        }
    }
}

/// Seed-independent parameters of one composed level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub level: usize,
    pub k: u64,
    /// Stretch bound of the fallback sampler (level `level - 1`).
    pub alpha_prev: f64,
    /// Stretch bound of this level from the recurrence.
    pub alpha: f64,
    pub m: u64,
    pub hash_range: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderPlan {
    pub n: u64,
    pub k: u64,
    /// Stretch bound `2 ceil(log2 n)` of the base tree sampler.
    pub alpha0: f64,
    pub levels: Vec<LevelParams>,
    pub config: LadderConfig,
}

impl LadderPlan {
    /// Number of composed levels; sampling starts at this level.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Stretch bounds `alpha_0, ..., alpha_depth`.
    pub fn alphas(&self) -> Vec<f64> {
        std::iter::once(self.alpha0)
            .chain(self.levels.iter().map(|l| l.alpha))
            .collect()
    }
}

/// `log^{(i)} n` iterated until it drops to 1; returns the count.
pub fn log_star(n: f64) -> usize {
    let mut v = n;
    let mut i = 0;
    while v > 1.0 {
        v = v.log2();
        i += 1;
    }
    i
}

/// `max(2^5 k^5 ceil(alpha)^5, 2^15)`, capped at [`MAX_BUCKETS`].
pub fn bucket_count(k: u64, alpha_prev: f64) -> u64 {
    let base = 2.0 * k as f64 * alpha_prev.ceil();
    let m = base.powi(5);
    if m >= MAX_BUCKETS as f64 {
        MAX_BUCKETS
    } else {
        (m as u64).max(MIN_BUCKETS)
    }
}

/// Builds the recursion ladder for `(n, k)`.
///
/// Levels are added while the recurrence strictly lowers `ceil(alpha)` (the
/// bucket count depends on nothing finer) and the depth stays within
/// `log* n + DEPTH_SLACK`; `config.depth` forces an exact depth instead.
pub fn build_ladder(n: u64, k: u64, config: &LadderConfig) -> Result<LadderPlan> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n = {n} must be at least 2")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in [1, n = {n}]")));
    }
    if !(config.c_rec > 0.0) {
        return Err(Error::InvalidArgument("c_rec must be positive".into()));
    }
    if config.m_override == Some(0) {
        return Err(Error::InvalidArgument("m override must be positive".into()));
    }
    if let Some(m) = config.m_override {
        if m > MAX_BUCKETS {
            return Err(Error::InvalidArgument(format!("m override {m} exceeds 2^42")));
        }
    }
    let cap = log_star(n as f64) + DEPTH_SLACK;
    if let Some(d) = config.depth {
        if d > cap {
            return Err(Error::InvalidArgument(format!(
                "depth {d} exceeds log*(n) + {DEPTH_SLACK} = {cap}"
            )));
        }
    }
    let alpha0 = tree_stretch_bound(n);
    let mut levels = Vec::new();
    let mut alpha_prev = alpha0;
    for level in 1..=cap {
        let alpha = config.c_rec * ((k as f64).log2() + alpha_prev.log2());
        match config.depth {
            Some(d) if level > d => break,
            None if alpha.ceil() >= alpha_prev.ceil() => break,
            _ => {}
        }
        let m = config.m_override.unwrap_or_else(|| bucket_count(k, alpha_prev));
        levels.push(LevelParams {
            level,
            k,
            alpha_prev,
            alpha,
            m,
            hash_range: (m as u128).pow(3),
        });
        alpha_prev = alpha;
    }
    Ok(LadderPlan {
        n,
        k,
        alpha0,
        levels,
        config: config.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    Collision,
    HeavyBucket,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Proceed,
    Fallback(FallbackReason),
}

/// Where an occupied hash value of the image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Large(u64),
    Bucket { bucket: u64, representative: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressResult {
    /// Compressed image over `[1, m^3]`, sorted by hash value.
    pub image: Vec<(u128, f64)>,
    /// `(bucket, representative)` for every bucket with small mass.
    pub representatives: Vec<(u64, u64)>,
    /// Sorted by hash value; one entry per image coordinate.
    pub inverse: Vec<(u128, Source)>,
}

/// Small and large support of `x` under one level's threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Classified {
    pub small: Vec<(u64, f64)>,
    pub large: Vec<(u64, f64)>,
}

/// Per-level outcome of a composed sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub set: SampleSet,
    /// Level whose rounding produced `set` (0 = base tree sampler).
    pub level_used: usize,
    pub fallbacks: Vec<(usize, FallbackReason)>,
}

enum BucketIndex {
    /// Every bucket's hash target was enumerated.
    Full { collision: bool, targets: HashSet<u128> },
    /// Only buckets carrying small mass are checked, per sample.
    Occupied,
}

struct LevelState {
    ctx: SeedContext,
    simplex: ClockSampler,
    tree: TreePlan,
    sigma: f64,
    tau: f64,
    buckets: OnceLock<BucketIndex>,
}

/// A ladder bound to a master seed.
pub struct ComposedSampler {
    plan: LadderPlan,
    root: SeedContext,
    base: TreePlan,
    levels: Vec<LevelState>,
}

impl ComposedSampler {
    pub fn new(plan: LadderPlan, root: SeedContext) -> Result<Self> {
        let base = TreePlan::new(root.child("level", 0), plan.n as u128)?;
        let levels = plan
            .levels
            .iter()
            .map(|p| {
                let ctx = root.child("level", p.level as u64);
                Ok(LevelState {
                    simplex: ClockSampler::new(ctx.child(ROLE, ROLE_SIMPLEX)),
                    tree: TreePlan::new(ctx.child(ROLE, ROLE_TREE), p.hash_range)?,
                    sigma: THRESHOLD_SPREAD * ctx.uniform01("sigma", 0),
                    tau: THRESHOLD_SPREAD * ctx.uniform01("tau", 0),
                    ctx,
                    buckets: OnceLock::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComposedSampler { plan, root, base, levels })
    }

    pub fn plan(&self) -> &LadderPlan {
        &self.plan
    }

    pub fn depth(&self) -> usize {
        self.plan.depth()
    }

    fn state(&self, level: usize) -> Result<(&LevelParams, &LevelState)> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "level {level} outside [1, {}]",
                self.levels.len()
            )));
        }
        Ok((&self.plan.levels[level - 1], &self.levels[level - 1]))
    }

    pub fn sigma(&self, level: usize) -> Result<f64> {
        self.state(level).map(|(_, s)| s.sigma)
    }

    pub fn tau(&self, level: usize) -> Result<f64> {
        self.state(level).map(|(_, s)| s.tau)
    }

    /// Bucket of coordinate `i` in `[1, m]`.
    pub fn bucket_of(&self, level: usize, i: u64) -> Result<u64> {
        let (p, s) = self.state(level)?;
        s.ctx.uniform_int("bucket_of", i as u128, p.m)
    }

    /// Hash target `C_i` in `[1, m^3]`.
    pub fn coordinate_target(&self, level: usize, i: u64) -> Result<u128> {
        let (p, s) = self.state(level)?;
        s.ctx.uniform_int_wide("Ci", i as u128, p.hash_range)
    }

    /// Hash target `R_b` in `[1, m^3]`.
    pub fn bucket_target(&self, level: usize, b: u64) -> Result<u128> {
        let (p, s) = self.state(level)?;
        s.ctx.uniform_int_wide("Rb", b as u128, p.hash_range)
    }

    fn bucket_index<'a>(&self, params: &LevelParams, state: &'a LevelState) -> &'a BucketIndex {
        state.buckets.get_or_init(|| {
            if self.plan.config.skip_empty_bucket_collisions || params.m > FULL_COLLISION_CHECK_LIMIT {
                return BucketIndex::Occupied;
            }
            let mut targets = HashSet::with_capacity(params.m as usize);
            let mut collision = false;
            for b in 1..=params.m {
                let r = state
                    .ctx
                    .uniform_int_wide("Rb", b as u128, params.hash_range)
                    .expect("hash range is positive");
                collision |= !targets.insert(r);
            }
            BucketIndex::Full { collision, targets }
        })
    }

    /// Splits the support by the threshold `1/10 + sigma`.
    pub fn classify(&self, level: usize, x: &SparseVector) -> Result<Classified> {
        let (_, s) = self.state(level)?;
        Ok(split(x, s.sigma))
    }

    /// Collision / heavy-bucket test of one level. Depends on `(seed, x)`
    /// only.
    pub fn detect_fallback(&self, level: usize, x: &SparseVector, c: &Classified) -> Result<Decision> {
        let (p, s) = self.state(level)?;
        let _ = x;
        let small = self.with_buckets(p, s, &c.small);
        Ok(self.decide(p, s, &small, &c.large).0)
    }

    /// Compresses small items bucket by bucket and maps every surviving
    /// coordinate into `[1, m^3]`.
    pub fn compress(&self, level: usize, x: &SparseVector, c: &Classified) -> Result<CompressResult> {
        let (p, s) = self.state(level)?;
        let small = self.with_buckets(p, s, &c.small);
        let (decision, large_targets) = self.decide(p, s, &small, &c.large);
        if decision != Decision::Proceed {
            return Err(Error::Precondition(format!(
                "compress called on a level that falls back ({decision:?})"
            )));
        }
        let _ = x;
        Ok(self.compress_inner(p, s, &small, &large_targets))
    }

    fn with_buckets(&self, p: &LevelParams, s: &LevelState, small: &[(u64, f64)]) -> Vec<(u64, u64, f64)> {
        let mut out: Vec<(u64, u64, f64)> = small
            .iter()
            .map(|&(i, v)| {
                let b = s.ctx.uniform_int("bucket_of", i as u128, p.m).expect("m is positive");
                (b, i, v)
            })
            .collect();
        out.sort_unstable_by_key(|&(b, i, _)| (b, i));
        out
    }

    /// `small` is sorted by `(bucket, index)`. Returns the decision and the
    /// large items' hash targets.
    fn decide(
        &self,
        p: &LevelParams,
        s: &LevelState,
        small: &[(u64, u64, f64)],
        large: &[(u64, f64)],
    ) -> (Decision, Vec<(u128, u64, f64)>) {
        let large_targets: Vec<(u128, u64, f64)> = large
            .iter()
            .map(|&(i, v)| {
                let c = s.ctx.uniform_int_wide("Ci", i as u128, p.hash_range).expect("range");
                (c, i, v)
            })
            .collect();
        let collision = match self.bucket_index(p, s) {
            BucketIndex::Full { collision, targets } => {
                *collision
                    || large_targets.iter().any(|t| targets.contains(&t.0))
                    || has_duplicates(large_targets.iter().map(|t| t.0).collect())
            }
            BucketIndex::Occupied => {
                let mut hashes: Vec<u128> = large_targets.iter().map(|t| t.0).collect();
                for group in small.chunk_by(|a, b| a.0 == b.0) {
                    hashes.push(self.r_target(p, s, group[0].0));
                }
                has_duplicates(hashes)
            }
        };
        if collision {
            return (Decision::Fallback(FallbackReason::Collision), large_targets);
        }
        let limit = 1.0 - s.tau;
        let heavy = small
            .chunk_by(|a, b| a.0 == b.0)
            .any(|group| compensated_sum(group.iter().map(|t| t.2)) > limit);
        if heavy {
            return (Decision::Fallback(FallbackReason::HeavyBucket), large_targets);
        }
        (Decision::Proceed, large_targets)
    }

    fn r_target(&self, p: &LevelParams, s: &LevelState, b: u64) -> u128 {
        s.ctx.uniform_int_wide("Rb", b as u128, p.hash_range).expect("range")
    }

    fn compress_inner(
        &self,
        p: &LevelParams,
        s: &LevelState,
        small: &[(u64, u64, f64)],
        large_targets: &[(u128, u64, f64)],
    ) -> CompressResult {
        let mut image = Vec::with_capacity(large_targets.len() + small.len());
        let mut inverse = Vec::with_capacity(image.capacity());
        let mut representatives = Vec::new();
        for group in small.chunk_by(|a, b| a.0 == b.0) {
            let b = group[0].0;
            // unnormalized: the clock sampler is scale invariant
            let rep = s
                .simplex
                .argmin(group.iter().map(|t| (t.1, t.2)))
                .expect("bucket has positive mass");
            let mass = compensated_sum(group.iter().map(|t| t.2));
            let h = self.r_target(p, s, b);
            representatives.push((b, rep));
            image.push((h, mass));
            inverse.push((h, Source::Bucket { bucket: b, representative: rep }));
        }
        for &(h, i, v) in large_targets {
            image.push((h, v));
            inverse.push((h, Source::Large(i)));
        }
        image.sort_unstable_by_key(|e| e.0);
        inverse.sort_unstable_by_key(|e| e.0);
        CompressResult { image, representatives, inverse }
    }

    fn check_input(&self, x: &SparseVector) -> Result<()> {
        if x.n() != self.plan.n {
            return Err(Error::DimensionMismatch { left: x.n(), right: self.plan.n });
        }
        let mass = x.l1_norm();
        if mass > self.plan.k as f64 + BUDGET_TOLERANCE {
            return Err(Error::BudgetExceeded { mass, budget: self.plan.k as f64 });
        }
        Ok(())
    }

    /// Samples from the top of the ladder.
    pub fn sample(&self, x: &SparseVector) -> Result<SampleSet> {
        self.sample_at(self.depth(), x)
    }

    pub fn sample_at(&self, level: usize, x: &SparseVector) -> Result<SampleSet> {
        self.sample_detailed(level, x).map(|o| o.set)
    }

    /// Samples starting at `level`, reporting which level produced the output.
    pub fn sample_detailed(&self, level: usize, x: &SparseVector) -> Result<SampleOutcome> {
        self.check_input(x)?;
        if level > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "level {level} exceeds ladder depth {}",
                self.depth()
            )));
        }
        if self.plan.k == 1 {
            let simplex = ClockSampler::new(self.root.child("level", level as u64).child(ROLE, ROLE_SIMPLEX));
            return Ok(SampleOutcome {
                set: simplex.sample_subunit(x)?,
                level_used: level,
                fallbacks: Vec::new(),
            });
        }
        let mut fallbacks = Vec::new();
        for l in (1..=level).rev() {
            let (p, s) = (&self.plan.levels[l - 1], &self.levels[l - 1]);
            let c = split(x, s.sigma);
            let small = self.with_buckets(p, s, &c.small);
            let (decision, large_targets) = self.decide(p, s, &small, &c.large);
            if let Decision::Fallback(reason) = decision {
                fallbacks.push((l, reason));
                continue;
            }
            let compressed = self.compress_inner(p, s, &small, &large_targets);
            let chosen = s.tree.sparse_round_unchecked(&compressed.image, |_| {});
            let set = lift(&compressed.inverse, &chosen);
            return Ok(SampleOutcome { set, level_used: l, fallbacks });
        }
        let leaves: Vec<(u128, f64)> = x.entries().iter().map(|&(i, v)| (i as u128, v)).collect();
        let chosen = self.base.sparse_round_unchecked(&leaves, |_| {});
        Ok(SampleOutcome {
            set: SampleSet::from_unsorted(chosen.into_iter().map(|c| c as u64).collect()),
            level_used: 0,
            fallbacks,
        })
    }
}

fn split(x: &SparseVector, sigma: f64) -> Classified {
    let threshold = SMALL_THRESHOLD + sigma;
    let (small, large) = x.entries().iter().partition(|&&(_, v)| v <= threshold);
    Classified { small, large }
}

fn has_duplicates(mut v: Vec<u128>) -> bool {
    v.sort_unstable();
    v.windows(2).any(|w| w[0] == w[1])
}

fn lift(inverse: &[(u128, Source)], chosen: &[u128]) -> SampleSet {
    let out = chosen
        .iter()
        .map(|h| {
            let p = inverse
                .binary_search_by_key(h, |e| e.0)
                .expect("tree output lies in the image support");
            match inverse[p].1 {
                Source::Large(i) => i,
                Source::Bucket { representative, .. } => representative,
            }
        })
        .collect();
    SampleSet::from_unsorted(out)
}

/// Samples `x` from level `level` of the ladder bound to `ctx`.
pub fn composed_sample(plan: &LadderPlan, ctx: &SeedContext, level: usize, x: &SparseVector) -> Result<SampleSet> {
    ComposedSampler::new(plan.clone(), ctx.clone())?.sample_at(level, x)
}

/// One block of a partition matroid: a vector supported inside `range`
/// (inclusive) with its own budget `x.k()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub range: (u64, u64),
    pub x: SparseVector,
}

/// Rounds each part independently with the composed sampler and returns the
/// union. Part 0 uses `ctx` itself, part `j > 0` uses `ctx / ("part", j)`.
pub fn partition_sample(ctx: &SeedContext, parts: &[Part], config: &LadderConfig) -> Result<SampleSet> {
    let mut ranges: Vec<(u64, u64, usize)> = parts.iter().enumerate().map(|(j, p)| (p.range.0, p.range.1, j)).collect();
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[1].0 <= w[0].1 {
            return Err(Error::OverlappingParts(format!(
                "parts {} and {} share indices {}..={}",
                w[0].2,
                w[1].2,
                w[1].0,
                w[0].1.min(w[1].1)
            )));
        }
    }
    let mut out = Vec::new();
    for (j, part) in parts.iter().enumerate() {
        let (lo, hi) = part.range;
        if lo > hi {
            return Err(Error::InvalidArgument(format!("part {j} has an empty range")));
        }
        if let Some(&(i, _)) = part.x.entries().iter().find(|&&(i, _)| i < lo || i > hi) {
            return Err(Error::OverlappingParts(format!("part {j} has index {i} outside {lo}..={hi}")));
        }
        let plan = build_ladder(part.x.n(), part.x.k(), config)?;
        let part_ctx = if j == 0 { ctx.clone() } else { ctx.child("part", j as u64) };
        out.extend(ComposedSampler::new(plan, part_ctx)?.sample(&part.x)?.iter());
    }
    Ok(SampleSet::from_unsorted(out))
}
