//! Online paging by rounding a fractional cache.
//!
//! A deterministic fractional rule keeps `x_t` in the hypersimplex with the
//! requested page at 1; every step is rounded by one composed sampler bound
//! to a single seed, so consecutive caches stay correlated.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::composed::{build_ladder, ComposedSampler, LadderConfig};
use crate::error::{Error, Result};
use crate::eval::random_support;
use crate::randomness::{MasterSeed, SeedContext};
use crate::vectors::{parse_entry, parse_header, SampleSet, SparseVector, BUDGET_TOLERANCE, ZERO_THRESHOLD};

/// Bisection tolerance on the eviction rate.
pub const ETA_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagingTrace {
    pub n: u64,
    pub k: u64,
    pub requests: Vec<u64>,
}

impl PagingTrace {
    pub fn new(n: u64, k: u64, requests: Vec<u64>) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!("need 1 <= k < n, got n = {n}, k = {k}")));
        }
        if let Some(&p) = requests.iter().find(|&&p| p == 0 || p > n) {
            return Err(Error::IndexOutOfRange { index: p, n });
        }
        Ok(PagingTrace { n, k, requests })
    }

    /// Header `n=<n> k=<k>`, then one page per line.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let (n, k) = parse_header(header, line)?;
        let requests = lines
            .map(|(line, l)| {
                l.parse::<u64>().map_err(|_| Error::Parse { line, message: format!("bad page id {l:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        PagingTrace::new(n, k, requests)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("n={} k={}\n", self.n, self.k);
        for p in &self.requests {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    /// Round-robin over `k + 1` random pages, the classic worst case for
    /// any cache of size `k`.
    pub fn round_robin(ctx: &SeedContext, n: u64, k: u64, steps: usize) -> Result<Self> {
        let pages = random_support(&ctx.child("round_robin", 0), n, k as usize + 1)?;
        PagingTrace::new(n, k, (0..steps).map(|t| pages[t % pages.len()]).collect())
    }

    /// Uniform requests over a random working set of `working` pages.
    pub fn uniform(ctx: &SeedContext, n: u64, k: u64, working: usize, steps: usize) -> Result<Self> {
        let ctx = ctx.child("uniform", 0);
        let pages = random_support(&ctx, n, working)?;
        let requests = (0..steps)
            .map(|t| Ok(pages[ctx.uniform_int("request", t as u128, working as u64)? as usize - 1]))
            .collect::<Result<Vec<_>>>()?;
        PagingTrace::new(n, k, requests)
    }
}

/// Fractional cache `x` with `x_q` the cached fraction of page `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalCache {
    n: u64,
    k: u64,
    entries: Vec<(u64, f64)>,
}

impl FractionalCache {
    pub fn empty(n: u64, k: u64) -> Self {
        FractionalCache { n, k, entries: Vec::new() }
    }

    pub fn to_vector(&self) -> Result<SparseVector> {
        SparseVector::validate(self.entries.iter().copied(), self.n, self.k)
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }
}

/// Serves request `page`: sets its fraction to 1, then raises every other
/// page's eviction fraction `z_q = 1 - x_q` to `min(1, z_q + eta (z_q + 1/k))`
/// with `eta` found by bisection so the cache holds at most `k` pages.
pub fn fractional_cache_step(state: &FractionalCache, page: u64) -> Result<FractionalCache> {
    let (n, k) = (state.n, state.k);
    if page == 0 || page > n {
        return Err(Error::IndexOutOfRange { index: page, n });
    }
    let others: Vec<(u64, f64)> = state.entries.iter().copied().filter(|&(q, _)| q != page).collect();
    let kf = k as f64;
    let mass_at = |eta: f64| -> f64 {
        1.0 + others
            .iter()
            .map(|&(_, x)| {
                let z = 1.0 - x;
                1.0 - (z + eta * (z + 1.0 / kf)).min(1.0)
            })
            .sum::<f64>()
    };
    let eta = if mass_at(0.0) <= kf {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = others
            .iter()
            .map(|&(_, x)| x / (1.0 - x + 1.0 / kf))
            .fold(0.0, f64::max);
        while hi - lo > ETA_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if mass_at(mid) > kf {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut entries: Vec<(u64, f64)> = others
        .into_iter()
        .map(|(q, x)| {
            let z = 1.0 - x;
            (q, 1.0 - (z + eta * (z + 1.0 / kf)).min(1.0))
        })
        .filter(|&(_, x)| x >= ZERO_THRESHOLD)
        .collect();
    entries.push((page, 1.0));
    entries.sort_unstable_by_key(|e| e.0);
    Ok(FractionalCache { n, k, entries })
}

/// Fractional caches `x_1..x_T` of the built-in rule.
pub fn fractional_trajectory(trace: &PagingTrace) -> Result<Vec<SparseVector>> {
    let mut state = FractionalCache::empty(trace.n, trace.k);
    trace
        .requests
        .iter()
        .map(|&p| {
            state = fractional_cache_step(&state, p)?;
            state.to_vector()
        })
        .collect()
}

/// Blocks `t=<t>` (1-based, consecutive) each followed by `<page> <value>`
/// lines.
pub fn parse_fractional_trace(text: &str, n: u64, k: u64) -> Result<Vec<SparseVector>> {
    let mut blocks: Vec<Vec<(u64, f64)>> = Vec::new();
    for (no, l) in text.lines().enumerate() {
        let (line, l) = (no + 1, l.trim());
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if let Some(t) = l.strip_prefix("t=") {
            let t: usize = t.trim().parse().map_err(|_| Error::Parse { line, message: format!("bad step {t:?}") })?;
            if t != blocks.len() + 1 {
                return Err(Error::Parse { line, message: format!("expected step {}, got {t}", blocks.len() + 1) });
            }
            blocks.push(Vec::new());
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or(Error::Parse { line, message: "entry before the first `t=` line".into() })?;
        block.push(parse_entry(l, line)?);
    }
    blocks
        .into_iter()
        .enumerate()
        .map(|(t, b)| {
            SparseVector::validate(b, n, k).map_err(|e| Error::InfeasibleTrace { step: t + 1, reason: e.to_string() })
        })
        .collect()
}

pub fn fractional_trace_text(steps: &[SparseVector]) -> String {
    let mut out = String::new();
    for (t, x) in steps.iter().enumerate() {
        writeln!(out, "t={}", t + 1).unwrap();
        for &(i, v) in x.entries() {
            writeln!(out, "{i} {v:?}").unwrap();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagingReport {
    pub seed: String,
    pub steps: usize,
    /// Steps charged for movement: all except first requests of a page.
    pub charged_steps: usize,
    pub integral_movement: u64,
    pub fractional_movement: f64,
    /// `integral / fractional`; absent when the fractional movement is 0.
    pub overhead_ratio: Option<f64>,
    /// Steps whose rounded cache misses the request or exceeds `k` pages.
    pub violations: u64,
    pub max_cache_size: usize,
}

fn check_external(trace: &PagingTrace, steps: &[SparseVector]) -> Result<()> {
    if steps.len() != trace.requests.len() {
        return Err(Error::InfeasibleTrace {
            step: steps.len().min(trace.requests.len()) + 1,
            reason: format!("{} fractional steps for {} requests", steps.len(), trace.requests.len()),
        });
    }
    for (t, (x, &p)) in steps.iter().zip(&trace.requests).enumerate() {
        if x.n() != trace.n || x.k() != trace.k {
            return Err(Error::InfeasibleTrace { step: t + 1, reason: "dimension or budget differs from the trace".into() });
        }
        if x.get(p) < 1.0 {
            return Err(Error::InfeasibleTrace { step: t + 1, reason: format!("requested page {p} has x = {}", x.get(p)) });
        }
        let mass = x.l1_norm();
        if mass > trace.k as f64 + BUDGET_TOLERANCE {
            return Err(Error::InfeasibleTrace { step: t + 1, reason: format!("mass {mass} exceeds k") });
        }
    }
    Ok(())
}

/// Rounds every step of `fractional` (or the built-in rule's trajectory)
/// with one composed sampler bound to `seed`.
pub fn simulate_paging(
    trace: &PagingTrace,
    seed: MasterSeed,
    fractional: Option<&[SparseVector]>,
    config: &LadderConfig,
) -> Result<PagingReport> {
    let owned;
    let steps = match fractional {
        Some(s) => {
            check_external(trace, s)?;
            s
        }
        None => {
            owned = fractional_trajectory(trace)?;
            &owned[..]
        }
    };
    let sampler = ComposedSampler::new(build_ladder(trace.n, trace.k, config)?, SeedContext::new(seed))?;
    rounded_movement(trace, steps, &sampler, seed)
}

fn rounded_movement(
    trace: &PagingTrace,
    steps: &[SparseVector],
    sampler: &ComposedSampler,
    seed: MasterSeed,
) -> Result<PagingReport> {
    let mut seen = HashSet::new();
    let mut prev_x = SparseVector::validate([], trace.n, trace.k)?;
    let mut prev_set = SampleSet::empty();
    let mut report = PagingReport {
        seed: seed.to_hex(),
        steps: steps.len(),
        charged_steps: 0,
        integral_movement: 0,
        fractional_movement: 0.0,
        overhead_ratio: None,
        violations: 0,
        max_cache_size: 0,
    };
    for (x, &p) in steps.iter().zip(&trace.requests) {
        let set = sampler.sample(x)?;
        if !set.contains(p) || set.len() as u64 > trace.k {
            report.violations += 1;
        }
        report.max_cache_size = report.max_cache_size.max(set.len());
        if !seen.insert(p) {
            report.charged_steps += 1;
            report.integral_movement += set.symmetric_difference_len(&prev_set) as u64;
            report.fractional_movement += x.l1_distance(&prev_x)?;
        }
        prev_x = x.clone();
        prev_set = set;
    }
    if report.fractional_movement > 0.0 {
        report.overhead_ratio = Some(report.integral_movement as f64 / report.fractional_movement);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagingSummary {
    pub n: u64,
    pub k: u64,
    pub steps: usize,
    pub reports: Vec<PagingReport>,
    /// Mean of the per-seed overhead ratios that are defined.
    pub mean_overhead_ratio: Option<f64>,
    pub total_violations: u64,
}

/// [`simulate_paging`] over seeds `master / ("trial", s)` for `s < seeds`,
/// sharing one fractional trajectory.
pub fn simulate_paging_seeds(
    trace: &PagingTrace,
    seeds: u64,
    master: MasterSeed,
    fractional: Option<&[SparseVector]>,
    config: &LadderConfig,
) -> Result<PagingSummary> {
    let owned;
    let steps = match fractional {
        Some(s) => {
            check_external(trace, s)?;
            s
        }
        None => {
            owned = fractional_trajectory(trace)?;
            &owned[..]
        }
    };
    let plan = build_ladder(trace.n, trace.k, config)?;
    let reports = (0..seeds)
        .map(|s| {
            let seed = crate::eval::trial_seed(master, s);
            let sampler = ComposedSampler::new(plan.clone(), SeedContext::new(seed))?;
            rounded_movement(trace, steps, &sampler, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = reports.iter().filter_map(|r| r.overhead_ratio).collect();
    Ok(PagingSummary {
        n: trace.n,
        k: trace.k,
        steps: steps.len(),
        mean_overhead_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        total_violations: reports.iter().map(|r| r.violations).sum(),
        reports,
    })
}
