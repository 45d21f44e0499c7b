//! Sparse points of the hypersimplex and the rounded sets they map to.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the l1 budget check.
pub const BUDGET_TOLERANCE: f64 = 1e-9;
/// Input values below this are treated as zeros and dropped.
pub const ZERO_THRESHOLD: f64 = 1e-12;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// A point of `{x in [0,1]^n : |x|_1 <= k}` stored as sorted `(index, value)`
/// pairs with 1-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    n: u64,
    k: u64,
    entries: Vec<(u64, f64)>,
}

impl SparseVector {
    /// Validates raw entries and returns the normalized vector.
    ///
    /// Entries are sorted, explicit zeros (and values below
    /// [`ZERO_THRESHOLD`]) are dropped, duplicate indices are rejected.
    pub fn validate(raw: impl IntoIterator<Item = (u64, f64)>, n: u64, k: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("dimension n must be positive".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("budget k must be positive".into()));
        }
        let mut entries = Vec::new();
        for (index, value) in raw {
            if index == 0 || index > n {
                return Err(Error::IndexOutOfRange { index, n });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ValueOutOfRange { index, value });
            }
            entries.push((index, value));
        }
        entries.sort_by_key(|&(i, _)| i);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateIndex(w[0].0));
        }
        entries.retain(|&(_, v)| v >= ZERO_THRESHOLD);
        let mass = compensated_sum(entries.iter().map(|&(_, v)| v));
        if mass > k as f64 + BUDGET_TOLERANCE {
            return Err(Error::BudgetExceeded {
                mass,
                budget: k as f64,
            });
        }
        Ok(SparseVector { n, k, entries })
    }

    /// Builds a vector from dense values `x_1..x_n`.
    pub fn from_dense(values: &[f64], k: u64) -> Result<Self> {
        Self::validate(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u64 + 1, v)),
            values.len() as u64,
            k,
        )
    }

    /// The standard basis vector `e_i` in dimension `n`.
    pub fn unit(n: u64, k: u64, i: u64) -> Result<Self> {
        Self::validate([(i, 1.0)], n, k)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn get(&self, index: u64) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn l1_norm(&self) -> f64 {
        compensated_sum(self.entries.iter().map(|&(_, v)| v))
    }

    /// Same entries, different budget.
    pub fn with_budget(&self, k: u64) -> Result<Self> {
        Self::validate(self.entries.iter().copied(), self.n, k)
    }

    /// Exact merge over the union of supports.
    pub fn l1_distance(&self, other: &SparseVector) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                left: self.n,
                right: other.n,
            });
        }
        let (a, b) = (&self.entries, &other.entries);
        let (mut p, mut q) = (0, 0);
        let mut terms = Vec::with_capacity(a.len() + b.len());
        while p < a.len() || q < b.len() {
            match (a.get(p), b.get(q)) {
                (Some(&(i, u)), Some(&(j, v))) if i == j => {
                    terms.push((u - v).abs());
                    p += 1;
                    q += 1;
                }
                (Some(&(i, u)), Some(&(j, _))) if i < j => {
                    terms.push(u);
                    p += 1;
                }
                (Some(&(_, u)), None) => {
                    terms.push(u);
                    p += 1;
                }
                (_, Some(&(_, v))) => {
                    terms.push(v);
                    q += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        Ok(compensated_sum(terms))
    }

    /// Returns `x + eps * e_i`.
    pub fn perturb(&self, index: u64, eps: f64) -> Result<Self> {
        if index == 0 || index > self.n {
            return Err(Error::IndexOutOfRange { index, n: self.n });
        }
        let current = self.get(index);
        let updated = current + eps;
        if !(0.0..=1.0).contains(&updated) {
            return Err(Error::Precondition(format!(
                "x_{index} + eps = {updated} leaves [0, 1]"
            )));
        }
        let mass = self.l1_norm() + eps;
        if mass > self.k as f64 + BUDGET_TOLERANCE {
            return Err(Error::Precondition(format!(
                "|x|_1 + eps = {mass} exceeds k = {}",
                self.k
            )));
        }
        let entries = self
            .entries
            .iter()
            .copied()
            .filter(|&(i, _)| i != index)
            .chain(std::iter::once((index, updated)));
        Self::validate(entries, self.n, self.k)
    }

    /// Text format: header `n=<n> k=<k>`, then one `<index> <value>` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={} k={}\n", self.n, self.k);
        for &(i, v) in &self.entries {
            writeln!(out, "{i} {v:?}").unwrap();
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let (n, k) = parse_header(header, line)?;
        let mut raw = Vec::new();
        for (line, l) in lines {
            raw.push(parse_entry(l, line)?);
        }
        Self::validate(raw, n, k)
    }

    /// Little-endian: `u64 n, u64 k, u64 nnz`, then `nnz` pairs of
    /// `u64 index, f64 value`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 16 * self.entries.len());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for &(i, v) in &self.entries {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 8]> {
            bytes
                .get(at..at + 8)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("truncated binary vector at byte {at}"),
                })
        };
        let n = u64::from_le_bytes(word(0)?);
        let k = u64::from_le_bytes(word(8)?);
        let nnz = u64::from_le_bytes(word(16)?) as usize;
        if bytes.len() != 24 + 16 * nnz {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {} bytes, got {}", 24 + 16 * nnz, bytes.len()),
            });
        }
        let raw = (0..nnz)
            .map(|e| {
                let at = 24 + 16 * e;
                Ok((
                    u64::from_le_bytes(word(at)?),
                    f64::from_le_bytes(word(at + 8)?),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::validate(raw, n, k)
    }
}

pub(crate) fn parse_header(header: &str, line: usize) -> Result<(u64, u64)> {
    let mut n = None;
    let mut k = None;
    for tok in header.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected key=value, got {tok:?}"),
        })?;
        let val: u64 = val.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad integer {val:?}"),
        })?;
        match key {
            "n" => n = Some(val),
            "k" => k = Some(val),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown header key {key:?}"),
                })
            }
        }
    }
    match (n, k) {
        (Some(n), Some(k)) => Ok((n, k)),
        _ => Err(Error::Parse {
            line,
            message: "header must be `n=<n> k=<k>`".into(),
        }),
    }
}

pub(crate) fn parse_entry(l: &str, line: usize) -> Result<(u64, f64)> {
    let mut it = l.split_whitespace();
    let (Some(i), Some(v), None) = (it.next(), it.next(), it.next()) else {
        return Err(Error::Parse {
            line,
            message: format!("expected `<index> <value>`, got {l:?}"),
        });
    };
    let i = i.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad index {i:?}"),
    })?;
    let v = v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value {v:?}"),
    })?;
    Ok((i, v))
}

/// A rounded output: sorted, duplicate-free coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSet(Vec<u64>);

impl SampleSet {
    pub fn empty() -> Self {
        SampleSet(Vec::new())
    }

    pub fn singleton(i: u64) -> Self {
        SampleSet(vec![i])
    }

    pub fn from_unsorted(mut v: Vec<u64>) -> Self {
        v.sort_unstable();
        v.dedup();
        SampleSet(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: u64) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().copied()
    }

    /// `|self (+) other|` by merge.
    pub fn symmetric_difference_len(&self, other: &SampleSet) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut p, mut q, mut common) = (0, 0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        a.len() + b.len() - 2 * common
    }
}

/// Whether `size` is `floor(mass)` or `ceil(mass)`, with the budget
/// tolerance absorbing float error on integral masses.
pub fn cardinality_ok(size: usize, mass: f64) -> bool {
    let nearest = mass.round();
    if (mass - nearest).abs() <= BUDGET_TOLERANCE {
        return size as f64 == nearest;
    }
    size as f64 == mass.floor() || size as f64 == mass.ceil()
}
