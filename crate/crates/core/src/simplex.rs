//! Samplers for the unit simplex: exponential clocks and the
//! dummy-coordinate wrapper for sub-distributions.

use crate::error::{Error, Result};
use crate::randomness::SeedContext;
use crate::vectors::{compensated_sum, SampleSet, SparseVector, BUDGET_TOLERANCE, ZERO_THRESHOLD};

/// Exponential-clocks sampler.
///
/// Each coordinate `i` owns a clock `R_i ~ Exp(1)` drawn from label
/// `("clock", i)`; a sample is `argmin_i R_i / x_i` over the support.
/// The output depends on `(seed, x)` only and is invariant under scaling
/// all values of `x` by a positive constant.
#[derive(Clone, Debug)]
pub struct ClockSampler {
    ctx: SeedContext,
}

impl ClockSampler {
    pub fn new(ctx: SeedContext) -> Self {
        ClockSampler { ctx }
    }

    pub fn context(&self) -> &SeedContext {
        &self.ctx
    }

    pub fn clock(&self, index: u64) -> f64 {
        self.ctx.exp1("clock", index as u128)
    }

    /// Winner among positive-valued `(index, value)` pairs, `None` if there
    /// are none. Ties go to the smallest index.
    pub fn argmin<I>(&self, entries: I) -> Option<u64>
    where
        I: IntoIterator<Item = (u64, f64)>,
    {
        let mut best: Option<(f64, u64)> = None;
        for (i, v) in entries {
            if v <= 0.0 {
                continue;
            }
            let t = self.clock(i) / v;
            best = match best {
                Some((bt, bi)) if bt < t || (bt == t && bi < i) => Some((bt, bi)),
                _ => Some((t, i)),
            };
        }
        best.map(|(_, i)| i)
    }

    /// Singleton `{argmin_i R_i / x_i}`.
    pub fn sample(&self, x: &SparseVector) -> Result<SampleSet> {
        self.argmin(x.entries().iter().copied())
            .map(SampleSet::singleton)
            .ok_or(Error::EmptySupport)
    }

    /// Sub-distribution sampling through a dummy coordinate `n + 1` carrying
    /// `1 - |x|_1`. Returns the empty set when the dummy wins.
    pub fn sample_subunit(&self, x: &SparseVector) -> Result<SampleSet> {
        let mass = x.l1_norm();
        if mass > 1.0 + BUDGET_TOLERANCE {
            return Err(Error::BudgetExceeded { mass, budget: 1.0 });
        }
        let dummy_index = x.n() + 1;
        let dummy = 1.0 - mass;
        let dummy = if dummy < ZERO_THRESHOLD { 0.0 } else { dummy };
        let winner = self.argmin(
            x.entries()
                .iter()
                .copied()
                .chain(std::iter::once((dummy_index, dummy))),
        );
        match winner {
            Some(i) if i == dummy_index => Ok(SampleSet::empty()),
            Some(i) => Ok(SampleSet::singleton(i)),
            // all-zero input: only the dummy has mass, handled above unless
            // x is empty and dummy = 1
            None => Ok(SampleSet::empty()),
        }
    }
}

/// `exp_clock_sample` as a free function.
pub fn exp_clock_sample(sampler: &ClockSampler, x: &SparseVector) -> Result<SampleSet> {
    sampler.sample(x)
}

/// `subunit_sample` as a free function.
pub fn subunit_sample(sampler: &ClockSampler, x: &SparseVector) -> Result<SampleSet> {
    sampler.sample_subunit(x)
}

/// Mass of the dummy coordinate that [`ClockSampler::sample_subunit`] adds.
pub fn dummy_mass(x: &SparseVector) -> f64 {
    (1.0 - compensated_sum(x.entries().iter().map(|&(_, v)| v))).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::MasterSeed;

    fn sampler(seed: u128) -> ClockSampler {
        ClockSampler::new(SeedContext::new(MasterSeed(seed)).child("role", 1))
    }

    #[test]
    fn single_competitor_always_wins() {
        let x = SparseVector::unit(3, 1, 1).unwrap();
        for s in 0..200 {
            assert_eq!(sampler(s).sample(&x).unwrap(), SampleSet::singleton(1));
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        let x = SparseVector::validate([], 3, 1).unwrap();
        assert_eq!(sampler(0).sample(&x), Err(Error::EmptySupport));
    }

    #[test]
    fn symmetric_pair_is_fair() {
        let x = SparseVector::from_dense(&[0.5, 0.5], 1).unwrap();
        let n = 100_000;
        let ones = (0..n)
            .filter(|&s| sampler(s).sample(&x).unwrap() == SampleSet::singleton(1))
            .count();
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.005, "{f}");
    }

    #[test]
    fn scale_invariance() {
        let seeds = SeedContext::new(MasterSeed(99));
        for t in 0..100u128 {
            let nnz = 1 + (seeds.uniform_int("nnz", t, 10).unwrap() as usize);
            let raw: Vec<(u64, f64)> = (0..nnz)
                .map(|j| (j as u64 * 3 + 1, 0.01 + 0.08 * seeds.uniform01("v", t * 100 + j as u128)))
                .collect();
            let x = SparseVector::validate(raw.clone(), 64, 1).unwrap();
            let s = sampler(t);
            let base = s.sample(&x).unwrap();
            for c in [0.1, 2.0, 7.0] {
                let scaled = s.argmin(raw.iter().map(|&(i, v)| (i, v * c))).unwrap();
                assert_eq!(SampleSet::singleton(scaled), base);
            }
        }
    }

    #[test]
    fn subunit_full_mass_never_empty() {
        let x = SparseVector::from_dense(&[0.25, 0.25, 0.5], 1).unwrap();
        for s in 0..2000 {
            assert_eq!(sampler(s).sample_subunit(&x).unwrap().len(), 1);
        }
        let x = SparseVector::from_dense(&[0.1; 10], 1).unwrap();
        for s in 0..2000 {
            assert_eq!(sampler(s).sample_subunit(&x).unwrap().len(), 1);
        }
    }

    #[test]
    fn subunit_empty_probability() {
        let x = SparseVector::from_dense(&[0.3], 1).unwrap();
        let n = 100_000;
        let empty = (0..n)
            .filter(|&s| sampler(s).sample_subunit(&x).unwrap().is_empty())
            .count();
        let f = empty as f64 / n as f64;
        assert!((f - 0.7).abs() <= 0.005, "{f}");
    }

    #[test]
    fn subunit_rejects_over_budget() {
        let x = SparseVector::from_dense(&[0.7, 0.7], 2).unwrap();
        assert!(matches!(
            sampler(0).sample_subunit(&x),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn dummy_clock_is_shared_across_supports() {
        // The dummy's clock comes from label n + 1 regardless of x.
        let s = sampler(5);
        let x = SparseVector::from_dense(&[0.2, 0.0, 0.1], 1).unwrap();
        let y = SparseVector::from_dense(&[0.0, 0.3, 0.1], 1).unwrap();
        assert_eq!(s.clock(4), sampler(5).clock(4));
        let _ = (s.sample_subunit(&x).unwrap(), s.sample_subunit(&y).unwrap());
        assert!((dummy_mass(&x) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let x = SparseVector::from_dense(&[0.2, 0.3, 0.1], 1).unwrap();
        for seed in 0..100 {
            assert_eq!(
                sampler(seed).sample_subunit(&x).unwrap(),
                sampler(seed).sample_subunit(&x.clone()).unwrap()
            );
        }
    }
}
