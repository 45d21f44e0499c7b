//! Monte Carlo estimators for cardinality, marginals and stretch, exact
//! multilinear extensions of coverage functions, and generators for test
//! inputs.
//!
//! Trial `t` of an experiment with master seed `E` runs under the seed
//! derived from `E / ("trial", t)`. Trials are aggregated with integer sums,
//! so results do not depend on how rayon splits the work.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composed::{build_ladder, ComposedSampler, LadderConfig, LadderPlan};
use crate::error::{Error, Result};
use crate::randomness::{MasterSeed, SeedContext, ROLE, ROLE_SIMPLEX};
use crate::simplex::ClockSampler;
use crate::tree::TreePlan;
use crate::vectors::{cardinality_ok, SampleSet, SparseVector};

/// Largest support `multilinear_exact` enumerates.
pub const MAX_ENUMERATED_SUPPORT: usize = 20;
/// Largest ground set of a [`CoverageFunction`].
pub const MAX_UNIVERSE: u32 = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Clock,
    Subunit,
    TreeDense,
    TreeSparse,
    /// Composed ladder; `level: None` samples from the top.
    Composed { config: LadderConfig, level: Option<usize> },
    /// Independent per-coordinate rounding. Matches marginals only.
    Independent,
}

impl SamplerKind {
    pub fn composed() -> Self {
        SamplerKind::Composed { config: LadderConfig::default(), level: None }
    }

    pub fn name(&self) -> String {
        match self {
            SamplerKind::Clock => "clock".into(),
            SamplerKind::Subunit => "subunit".into(),
            SamplerKind::TreeDense => "tree-dense".into(),
            SamplerKind::TreeSparse => "tree".into(),
            SamplerKind::Composed { level: None, .. } => "composed".into(),
            SamplerKind::Composed { level: Some(l), .. } => format!("composed@{l}"),
            SamplerKind::Independent => "independent".into(),
        }
    }
}

/// A sampler family fixed to one `(n, k)`; [`Sampler::bind`] attaches a seed.
#[derive(Clone, Debug)]
pub struct Sampler {
    kind: SamplerKind,
    n: u64,
    k: u64,
    plan: Option<LadderPlan>,
}

impl Sampler {
    pub fn new(kind: SamplerKind, n: u64, k: u64) -> Result<Self> {
        let plan = match &kind {
            SamplerKind::Composed { config, level } => {
                let plan = build_ladder(n, k, config)?;
                if let Some(l) = level {
                    if *l > plan.depth() {
                        return Err(Error::InvalidArgument(format!(
                            "level {l} exceeds ladder depth {}",
                            plan.depth()
                        )));
                    }
                }
                Some(plan)
            }
            _ => None,
        };
        Ok(Sampler { kind, n, k, plan })
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn plan(&self) -> Option<&LadderPlan> {
        self.plan.as_ref()
    }

    /// Whether outputs must satisfy the cardinality property.
    pub fn preserves_cardinality(&self) -> bool {
        !matches!(self.kind, SamplerKind::Independent)
    }

    pub fn bind(&self, seed: MasterSeed) -> Result<BoundSampler> {
        let root = SeedContext::new(seed);
        Ok(match &self.kind {
            SamplerKind::Clock => BoundSampler::Clock(ClockSampler::new(root.child(ROLE, ROLE_SIMPLEX))),
            SamplerKind::Subunit => BoundSampler::Subunit(ClockSampler::new(root.child(ROLE, ROLE_SIMPLEX))),
            // same context as level 0 of the composed ladder
            SamplerKind::TreeDense => BoundSampler::TreeDense(TreePlan::new(root.child("level", 0), self.n as u128)?),
            SamplerKind::TreeSparse => BoundSampler::TreeSparse(TreePlan::new(root.child("level", 0), self.n as u128)?),
            SamplerKind::Composed { level, .. } => {
                let plan = self.plan.clone().expect("composed sampler has a plan");
                let level = level.unwrap_or(plan.depth());
                BoundSampler::Composed(ComposedSampler::new(plan, root)?, level)
            }
            SamplerKind::Independent => BoundSampler::Independent(root.child("independent", 0)),
        })
    }

    /// `bind(seed)` followed by one sample.
    pub fn sample(&self, seed: MasterSeed, x: &SparseVector) -> Result<SampleSet> {
        self.bind(seed)?.sample(x)
    }

    fn check(&self, x: &SparseVector) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::DimensionMismatch { left: x.n(), right: self.n });
        }
        Ok(())
    }
}

pub enum BoundSampler {
    Clock(ClockSampler),
    Subunit(ClockSampler),
    TreeDense(TreePlan),
    TreeSparse(TreePlan),
    Composed(ComposedSampler, usize),
    Independent(SeedContext),
}

impl BoundSampler {
    pub fn sample(&self, x: &SparseVector) -> Result<SampleSet> {
        match self {
            BoundSampler::Clock(s) => s.sample(x),
            BoundSampler::Subunit(s) => s.sample_subunit(x),
            BoundSampler::TreeDense(p) => crate::tree::dense_tree_round(p, x),
            BoundSampler::TreeSparse(p) => crate::tree::sparse_tree_round(p, x),
            BoundSampler::Composed(s, level) => s.sample_at(*level, x),
            BoundSampler::Independent(ctx) => Ok(SampleSet::from_unsorted(
                x.entries()
                    .iter()
                    .filter(|&&(i, v)| ctx.uniform01("keep", i as u128) < v)
                    .map(|&(i, _)| i)
                    .collect(),
            )),
        }
    }
}

/// Seed of trial `t` under experiment seed `master`.
pub fn trial_seed(master: MasterSeed, t: u64) -> MasterSeed {
    SeedContext::new(master).derive_seed("trial", t as u128)
}

/// Runs `trials` trials in parallel; `body` folds one trial into an
/// accumulator and `merge` must be commutative.
fn run_trials<A, F, M>(master: MasterSeed, trials: u64, init: impl Fn() -> A + Sync + Send, body: F, merge: M) -> Result<A>
where
    A: Send,
    F: Fn(&mut A, MasterSeed) -> Result<()> + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    const CHUNK: u64 = 1024;
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                body(&mut acc, trial_seed(master, t))?;
            }
            Ok(acc)
        })
        .try_reduce(&init, |a, b| Ok(merge(a, b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardinalityReport {
    pub trials: u64,
    pub violations: u64,
}

/// Checks `|A(x)|` against `floor/ceil |x|_1` for every trial.
pub fn check_cardinality(sampler: &Sampler, x: &SparseVector, trials: u64, master: MasterSeed) -> Result<CardinalityReport> {
    sampler.check(x)?;
    let mass = x.l1_norm();
    let violations = run_trials(
        master,
        trials,
        || 0u64,
        |acc, seed| {
            let out = sampler.sample(seed, x)?;
            *acc += !cardinality_ok(out.len(), mass) as u64;
            Ok(())
        },
        |a, b| a + b,
    )?;
    Ok(CardinalityReport { trials, violations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMarginal {
    pub index: u64,
    pub target: f64,
    pub frequency: f64,
    /// `3 sqrt(x (1 - x) / N)`.
    pub band: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub trials: u64,
    pub coordinates: Vec<CoordinateMarginal>,
    /// Outputs of coordinates outside the support.
    pub off_support_hits: u64,
    pub cardinality_violations: u64,
    pub pass: bool,
}

impl MarginalReport {
    pub fn outside_band(&self) -> usize {
        self.coordinates.iter().filter(|c| !c.pass).count()
    }
}

pub fn estimate_marginals(sampler: &Sampler, x: &SparseVector, trials: u64, master: MasterSeed) -> Result<MarginalReport> {
    sampler.check(x)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let support: Vec<u64> = x.entries().iter().map(|e| e.0).collect();
    let mass = x.l1_norm();
    let check_size = sampler.preserves_cardinality();
    let nnz = support.len();
    // counts per coordinate, then off-support hits, then cardinality violations
    let counts = run_trials(
        master,
        trials,
        || vec![0u64; nnz + 2],
        |acc, seed| {
            let out = sampler.sample(seed, x)?;
            for i in out.iter() {
                match support.binary_search(&i) {
                    Ok(p) => acc[p] += 1,
                    Err(_) => acc[nnz] += 1,
                }
            }
            if check_size && !cardinality_ok(out.len(), mass) {
                acc[nnz + 1] += 1;
            }
            Ok(())
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
            a
        },
    )?;
    let coordinates: Vec<CoordinateMarginal> = x
        .entries()
        .iter()
        .zip(&counts)
        .map(|(&(index, target), &c)| {
            let frequency = c as f64 / trials as f64;
            let band = 3.0 * (target * (1.0 - target) / trials as f64).sqrt();
            CoordinateMarginal {
                index,
                target,
                frequency,
                band,
                pass: (frequency - target).abs() <= band + 1e-12,
            }
        })
        .collect();
    let pass = coordinates.iter().all(|c| c.pass) && counts[nnz] == 0 && counts[nnz + 1] == 0;
    Ok(MarginalReport {
        trials,
        coordinates,
        off_support_hits: counts[nnz],
        cardinality_violations: counts[nnz + 1],
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchEstimate {
    pub mean_symmetric_difference: f64,
    pub l1_distance: f64,
    pub ratio: f64,
    /// 95% half-width of `ratio`, from the sample variance.
    pub half_width: f64,
    pub trials: u64,
}

/// Mean `|A(x) xor A(y)|` under shared seeds, divided by `|x - y|_1`.
pub fn estimate_stretch(
    sampler: &Sampler,
    x: &SparseVector,
    y: &SparseVector,
    trials: u64,
    master: MasterSeed,
) -> Result<StretchEstimate> {
    sampler.check(x)?;
    sampler.check(y)?;
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let l1 = x.l1_distance(y)?;
    let (sum, sum_sq) = run_trials(
        master,
        trials,
        || (0u64, 0u64),
        |acc, seed| {
            let bound = sampler.bind(seed)?;
            let d = bound.sample(x)?.symmetric_difference_len(&bound.sample(y)?) as u64;
            acc.0 += d;
            acc.1 += d * d;
            Ok(())
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    let n = trials as f64;
    let mean = sum as f64 / n;
    if l1 == 0.0 {
        return Err(Error::IdenticalInputs { mean_symmetric_difference: mean });
    }
    let var = ((sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(StretchEstimate {
        mean_symmetric_difference: mean,
        l1_distance: l1,
        ratio: mean / l1,
        half_width: 1.96 * (var / n).sqrt() / l1,
        trials,
    })
}

/// Averages [`estimate_stretch`] over pairs; returns `(mean ratio,
/// mean half-width)`.
pub fn mean_stretch(
    sampler: &Sampler,
    pairs: &[(SparseVector, SparseVector)],
    trials: u64,
    master: MasterSeed,
) -> Result<(f64, f64)> {
    let mut ratio = 0.0;
    let mut band = 0.0;
    for (j, (x, y)) in pairs.iter().enumerate() {
        let e = estimate_stretch(sampler, x, y, trials, SeedContext::new(master).derive_seed("pair", j as u128))?;
        ratio += e.ratio;
        band += e.half_width;
    }
    let p = pairs.len().max(1) as f64;
    Ok((ratio / p, band / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: u64,
    pub algo: String,
    pub mean_ratio: f64,
    pub band: f64,
}

/// Tree vs composed stretch on path-adversarial pairs, one row per
/// `(n, algorithm)`.
pub fn stretch_scaling_experiment(
    k: u64,
    n_list: &[u64],
    pairs_per_n: usize,
    trials: u64,
    config: &LadderConfig,
    master: MasterSeed,
) -> Result<Vec<ScalingRow>> {
    let gen = SeedContext::new(master).child("pairs", 0);
    let mut rows = Vec::new();
    for &n in n_list {
        let pairs = (0..pairs_per_n)
            .map(|j| path_adversarial_pair(&gen.child("n", n), j as u64, n, k, 0.05))
            .collect::<Result<Vec<_>>>()?;
        for kind in [SamplerKind::TreeSparse, SamplerKind::Composed { config: config.clone(), level: None }] {
            let sampler = Sampler::new(kind, n, k)?;
            let (mean_ratio, band) = mean_stretch(&sampler, &pairs, trials, master)?;
            rows.push(ScalingRow { n, algo: sampler.kind().name(), mean_ratio, band });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("n,algo,mean_ratio,band\n");
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.6}", r.n, r.algo, r.mean_ratio, r.band).unwrap();
    }
    out
}

/// `f(S) = |union of sets[i] for i in S|` over a ground set of at most 24
/// elements. Items are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageFunction {
    universe: u32,
    sets: Vec<u32>,
}

impl CoverageFunction {
    pub fn new(universe: u32, sets: Vec<u32>) -> Result<Self> {
        if universe > MAX_UNIVERSE {
            return Err(Error::InvalidArgument(format!("universe {universe} exceeds {MAX_UNIVERSE}")));
        }
        let mask = (1u32 << universe) - 1;
        if let Some(p) = sets.iter().position(|&s| s & !mask != 0) {
            return Err(Error::InvalidArgument(format!("set of item {} leaves the universe", p + 1)));
        }
        Ok(CoverageFunction { universe, sets })
    }

    /// Item `i` covers `sizes[i-1]` private elements, so `f` is modular.
    pub fn modular(sizes: &[u32]) -> Result<Self> {
        let mut next = 0u32;
        let mut sets = Vec::with_capacity(sizes.len());
        for &s in sizes {
            if next + s > MAX_UNIVERSE {
                return Err(Error::InvalidArgument("modular weights exceed the universe".into()));
            }
            sets.push(((1u64 << (next + s)) - (1u64 << next)) as u32);
            next += s;
        }
        CoverageFunction::new(next, sets)
    }

    /// Each item covers each ground element independently with probability
    /// `density`.
    pub fn random(ctx: &SeedContext, items: usize, universe: u32, density: f64) -> Result<Self> {
        let sets = (0..items)
            .map(|i| {
                (0..universe)
                    .filter(|&e| ctx.uniform01("cover", ((i as u128) << 32) | e as u128) < density)
                    .fold(0u32, |acc, e| acc | (1 << e))
            })
            .collect();
        CoverageFunction::new(universe, sets)
    }

    pub fn items(&self) -> usize {
        self.sets.len()
    }

    pub fn universe(&self) -> u32 {
        self.universe
    }

    fn set_of(&self, i: u64) -> Result<u32> {
        i.checked_sub(1)
            .and_then(|p| self.sets.get(p as usize))
            .copied()
            .ok_or(Error::IndexOutOfRange { index: i, n: self.sets.len() as u64 })
    }

    pub fn eval(&self, s: &SampleSet) -> Result<u32> {
        let mut covered = 0u32;
        for i in s.iter() {
            covered |= self.set_of(i)?;
        }
        Ok(covered.count_ones())
    }
}

/// `F(x) = E[f(R)]` with `R` containing each `i` independently with
/// probability `x_i`, by enumerating subsets of the support.
pub fn multilinear_exact(f: &CoverageFunction, x: &SparseVector) -> Result<f64> {
    if x.nnz() > MAX_ENUMERATED_SUPPORT {
        return Err(Error::SupportTooLarge { size: x.nnz(), limit: MAX_ENUMERATED_SUPPORT });
    }
    let items = x
        .entries()
        .iter()
        .map(|&(i, v)| Ok((f.set_of(i)?, v)))
        .collect::<Result<Vec<_>>>()?;
    fn walk(items: &[(u32, f64)], covered: u32, weight: f64) -> f64 {
        match items.split_first() {
            None => weight * covered.count_ones() as f64,
            Some((&(set, p), rest)) => {
                let with = if p > 0.0 { walk(rest, covered | set, weight * p) } else { 0.0 };
                let without = if p < 1.0 { walk(rest, covered, weight * (1.0 - p)) } else { 0.0 };
                with + without
            }
        }
    }
    Ok(walk(&items, 0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub mean: f64,
    pub multilinear: f64,
    /// `3 * std / sqrt(N)`.
    pub margin: f64,
    pub trials: u64,
    pub pass: bool,
}

/// Tests `E[f(A(x))] >= F(x)` up to a 3-sigma margin.
pub fn dominance_check(
    sampler: &Sampler,
    f: &CoverageFunction,
    x: &SparseVector,
    trials: u64,
    master: MasterSeed,
) -> Result<DominanceReport> {
    sampler.check(x)?;
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let multilinear = multilinear_exact(f, x)?;
    let (sum, sum_sq) = run_trials(
        master,
        trials,
        || (0u64, 0u64),
        |acc, seed| {
            let v = f.eval(&sampler.sample(seed, x)?)? as u64;
            acc.0 += v;
            acc.1 += v * v;
            Ok(())
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    let n = trials as f64;
    let mean = sum as f64 / n;
    let var = ((sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0);
    let margin = 3.0 * (var / n).sqrt();
    Ok(DominanceReport {
        mean,
        multilinear,
        margin,
        trials,
        pass: mean >= multilinear - margin - 1e-12,
    })
}

/// `nnz` distinct indices of `[1, n]`, sorted.
pub fn random_support(ctx: &SeedContext, n: u64, nnz: usize) -> Result<Vec<u64>> {
    if nnz as u64 > n {
        return Err(Error::InvalidArgument(format!("cannot pick {nnz} of {n} indices")));
    }
    let mut picked = BTreeSet::new();
    let mut draw = 0u128;
    while picked.len() < nnz {
        picked.insert(ctx.uniform_int("support", draw, n)?);
        draw += 1;
    }
    Ok(picked.into_iter().collect())
}

/// Random point of the hypersimplex with `nnz` nonzeros. Values are uniform
/// on `(0, 1]`, scaled down to mass `k` if they exceed it.
pub fn random_vector(ctx: &SeedContext, n: u64, k: u64, nnz: usize) -> Result<SparseVector> {
    let support = random_support(ctx, n, nnz)?;
    let mut values: Vec<f64> = (0..nnz).map(|j| 1.0 - ctx.uniform01("value", j as u128)).collect();
    let mass: f64 = values.iter().sum();
    if mass > k as f64 {
        let scale = k as f64 / mass * (1.0 - 1e-12);
        values.iter_mut().for_each(|v| *v *= scale);
    }
    SparseVector::validate(support.into_iter().zip(values), n, k)
}

/// Random probability vector (mass exactly 1 up to rounding) on `nnz` indices.
pub fn random_distribution(ctx: &SeedContext, n: u64, nnz: usize) -> Result<SparseVector> {
    let support = random_support(ctx, n, nnz)?;
    let raw: Vec<f64> = (0..nnz).map(|j| 1.0 - ctx.uniform01("value", j as u128)).collect();
    let total: f64 = raw.iter().sum();
    SparseVector::validate(support.into_iter().zip(raw.iter().map(|v| v / total)), n, 1)
}

/// Pair in the probability simplex: `eps` mass moves between two support
/// coordinates, so `|x - y|_1 = 2 eps` (or less if the donor is light).
pub fn simplex_pair(ctx: &SeedContext, index: u64, n: u64, nnz: usize, eps: f64) -> Result<(SparseVector, SparseVector)> {
    let ctx = ctx.child("simplex_pair", index);
    let x = random_distribution(&ctx, n, nnz.max(2))?;
    let e = x.entries();
    let a = ctx.uniform_int("donor", 0, e.len() as u64)? as usize - 1;
    let b = (a + ctx.uniform_int("receiver", 0, e.len() as u64 - 1)? as usize) % e.len();
    let moved = eps.min(e[a].1).min(1.0 - e[b].1);
    let y = SparseVector::validate(
        e.iter().enumerate().map(|(p, &(i, v))| {
            let v = if p == a { v - moved } else if p == b { v + moved } else { v };
            (i, v.clamp(0.0, 1.0))
        }),
        n,
        1,
    )?;
    Ok((x, y))
}

/// Moves one coordinate of `x` by `eps`, up if that stays feasible and down
/// otherwise.
pub fn nudge(x: &SparseVector, index: u64, eps: f64) -> Result<SparseVector> {
    x.perturb(index, eps).or_else(|_| x.perturb(index, -eps.min(x.get(index))))
}

/// Random pair in `Delta_{n,k}` differing in one support coordinate.
pub fn budget_pair(ctx: &SeedContext, index: u64, n: u64, k: u64, nnz: usize, eps: f64) -> Result<(SparseVector, SparseVector)> {
    let ctx = ctx.child("budget_pair", index);
    let x = random_vector(&ctx, n, k, nnz)?;
    let p = ctx.uniform_int("target", 0, x.nnz() as u64)? as usize - 1;
    let y = nudge(&x, x.entries()[p].0, eps)?;
    Ok((x, y))
}

/// Pair whose support is a random leaf `i` plus one leaf in each sibling
/// subtree along the path from `i` to the root of the coordinate tree, so
/// that `i` meets another coordinate at every level. The two vectors differ
/// at `i` only.
///
/// Values are uniform on `[0.02, 0.22]` whatever `n` is, and only rescaled
/// when `log2 n + 1` of them would exceed the budget.
pub fn path_adversarial_pair(ctx: &SeedContext, index: u64, n: u64, k: u64, eps: f64) -> Result<(SparseVector, SparseVector)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2".into()));
    }
    let ctx = ctx.child("path_pair", index);
    let depth = 64 - (n - 1).leading_zeros();
    let leaf = ctx.uniform_int("leaf", 0, n)? - 1;
    let mut support = vec![leaf + 1];
    for h in 0..depth {
        let block = ((leaf >> h) ^ 1) << h;
        if block >= n {
            continue;
        }
        let width = (1u64 << h).min(n - block);
        support.push(block + ctx.uniform_int("sibling", h as u128, width)?);
    }
    let mut values: Vec<f64> = (0..support.len())
        .map(|j| 0.02 + 0.2 * ctx.uniform01("value", j as u128))
        .collect();
    let mass: f64 = values.iter().sum();
    let cap = k as f64 - eps;
    if mass > cap {
        values.iter_mut().for_each(|v| *v *= cap / mass);
    }
    let x = SparseVector::validate(support.into_iter().zip(values), n, k)?;
    let y = nudge(&x, leaf + 1, eps)?;
    Ok((x, y))
}
