//! Coordinate-tree (pivotal) rounding for the hypersimplex.
//!
//! Coordinates are the leaves of a complete binary tree with `n_pad` leaves
//! (`n_pad` the smallest power of two `>= n`). Every internal node pairs the
//! surviving coordinates of its two subtrees and [`resolve`]s them, fixing
//! one to 0 or 1 while conserving mass; the last survivor is rounded at the
//! root. Node thresholds are keyed by node code, so the dense postorder and
//! the input-sparsity traversal consume identical randomness.
//!
//! Nodes use the bit-reversed heap encoding: heap index `h` on level `L`
//! (root on level 1) becomes `2^L + reverse_L(h)`, which turns common
//! ancestors into common low-order bits.

use crate::error::{Error, Result};
use crate::randomness::SeedContext;
use crate::vectors::{SampleSet, SparseVector, BUDGET_TOLERANCE};

/// Deepest level whose codes fit in 128 bits.
pub const MAX_LEVEL: u32 = 127;
/// Largest tree (in leaves, log2) the sampler supports.
pub const MAX_DEPTH: u32 = MAX_LEVEL - 1;
/// Dense traversal refuses trees above this many leaves (log2).
pub const MAX_DENSE_DEPTH: u32 = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    code: u128,
    level: u32,
}

impl NodeId {
    /// Builds a node from a raw `(code, level)` pair, checking the marker bit.
    pub fn from_raw(code: u128, level: u32) -> Result<Self> {
        if level == 0 || level > MAX_LEVEL {
            return Err(Error::LevelOverflow(level));
        }
        if code >> level != 1 {
            return Err(Error::InvalidArgument(format!(
                "code {code:#b} is not a level-{level} node code"
            )));
        }
        Ok(NodeId { code, level })
    }

    pub fn root() -> Self {
        NodeId { code: 0b11, level: 1 }
    }

    pub fn code(self) -> u128 {
        self.code
    }

    pub fn level(self) -> u32 {
        self.level
    }

    pub fn is_root(self) -> bool {
        self.level == 1
    }

    /// Inverse of [`encode`].
    pub fn heap_index(self) -> u128 {
        let rev = self.code & low_mask(self.level);
        reverse_bits(rev, self.level)
    }

    pub fn parent(self) -> Result<NodeId> {
        if self.is_root() {
            return Err(Error::RootHasNoParent);
        }
        let l = self.level;
        let top = 1u128 << l;
        let half = 1u128 << (l - 1);
        let code = self.code - top + if self.code & half == 0 { half } else { 0 };
        Ok(NodeId { code, level: l - 1 })
    }

    /// `(left, right)` children.
    pub fn children(self) -> Result<(NodeId, NodeId)> {
        let l = self.level;
        if l >= MAX_LEVEL {
            return Err(Error::LevelOverflow(l + 1));
        }
        let top = 1u128 << l;
        let next = 1u128 << (l + 1);
        let right = self.code + next;
        let left = self.code - top + next;
        Ok((
            NodeId { code: left, level: l + 1 },
            NodeId { code: right, level: l + 1 },
        ))
    }

    /// The ancestor of `self` on `level` (itself if the levels match).
    pub fn ancestor_at(self, level: u32) -> NodeId {
        debug_assert!(level >= 1 && level <= self.level);
        NodeId {
            code: (self.code & low_mask(level)) | (1u128 << level),
            level,
        }
    }

    pub fn is_ancestor_of(self, other: NodeId) -> bool {
        self.level <= other.level && other.ancestor_at(self.level) == self
    }
}

fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

fn reverse_bits(value: u128, bits: u32) -> u128 {
    if bits == 0 {
        0
    } else {
        value.reverse_bits() >> (128 - bits)
    }
}

/// Encodes heap index `h` (root = 1) on level `level = floor(log2 h) + 1`.
pub fn encode(heap_index: u128, level: u32) -> Result<NodeId> {
    if level == 0 || level > MAX_LEVEL {
        return Err(Error::LevelOverflow(level));
    }
    if heap_index == 0 || 128 - heap_index.leading_zeros() != level {
        return Err(Error::InvalidArgument(format!(
            "heap index {heap_index} is not on level {level}"
        )));
    }
    Ok(NodeId {
        code: (1u128 << level) | reverse_bits(heap_index, level),
        level,
    })
}

/// Lowest common ancestor with XOR / lowest-set-bit isolation.
///
/// For two nodes on the same level the first differing low-order bit `c`
/// marks the split, and `(x & (c - 1)) + c` is the ancestor code. Nodes on
/// different levels are first lifted to the shallower level, since the
/// marker bit of the shallower code would otherwise be compared against an
/// ordinary path bit of the deeper one.
pub fn lca(u: NodeId, v: NodeId) -> NodeId {
    let level = u.level.min(v.level);
    let x = u.ancestor_at(level).code;
    let y = v.ancestor_at(level).code;
    let z = x ^ y;
    if z == 0 {
        return NodeId { code: x, level };
    }
    let c = z & z.wrapping_neg();
    NodeId {
        code: (x & (c - 1)) + c,
        level: c.trailing_zeros(),
    }
}

/// Outcome of one pairwise rounding step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub survivor: u128,
    pub survivor_mass: f64,
    pub fixed: u128,
    pub fixed_bit: bool,
}

/// Checked pairwise rounding of `(i, alpha)` and `(j, beta)` under threshold
/// `theta`.
pub fn resolve(i: u128, alpha: f64, j: u128, beta: f64, theta: f64) -> Result<Resolution> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta = {theta} outside [0, 1)")));
    }
    Ok(resolve_unchecked(i, alpha, j, beta, theta))
}

/// Comparisons are strict (`theta < threshold`) with `theta in [0, 1)`, so a
/// zero-mass side never survives against a positive one and a unit-mass
/// side is always fixed to 1.
#[inline]
pub(crate) fn resolve_unchecked(i: u128, alpha: f64, j: u128, beta: f64, theta: f64) -> Resolution {
    let s = alpha + beta;
    if s <= 1.0 {
        if s > 0.0 && !(theta < alpha / s) {
            Resolution { survivor: j, survivor_mass: s, fixed: i, fixed_bit: false }
        } else {
            Resolution { survivor: i, survivor_mass: s, fixed: j, fixed_bit: false }
        }
    } else {
        let denom = 2.0 - s;
        let keep_i_one = denom <= 0.0 || theta < (1.0 - beta) / denom;
        let rest = s - 1.0;
        if keep_i_one {
            Resolution { survivor: j, survivor_mass: rest, fixed: i, fixed_bit: true }
        } else {
            Resolution { survivor: i, survivor_mass: rest, fixed: j, fixed_bit: true }
        }
    }
}

/// Traversal events, used by tests and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TreeEvent {
    Resolve { node: NodeId, resolution: Resolution },
    Root { coordinate: u128, mass: f64, rounded_up: bool },
}

/// A coordinate tree over `[1, dim]` with its shared thresholds.
#[derive(Clone, Debug)]
pub struct TreePlan {
    dim: u128,
    depth: u32,
    ctx: SeedContext,
}

impl TreePlan {
    pub fn new(ctx: SeedContext, dim: u128) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("tree dimension must be positive".into()));
        }
        let depth = if dim == 1 { 0 } else { 128 - (dim - 1).leading_zeros() };
        if depth > MAX_DEPTH {
            return Err(Error::LevelOverflow(depth + 1));
        }
        Ok(TreePlan { dim, depth, ctx })
    }

    pub fn dim(&self) -> u128 {
        self.dim
    }

    /// `log2(n_pad)`.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn padded_leaves(&self) -> u128 {
        1u128 << self.depth
    }

    pub fn leaf_level(&self) -> u32 {
        self.depth + 1
    }

    pub fn context(&self) -> &SeedContext {
        &self.ctx
    }

    /// Leaf node of 1-based coordinate `c`.
    pub fn leaf(&self, c: u128) -> NodeId {
        debug_assert!(c >= 1 && c <= self.dim);
        let level = self.leaf_level();
        let heap = (1u128 << self.depth) + (c - 1);
        NodeId {
            code: (1u128 << level) | reverse_bits(heap, level),
            level,
        }
    }

    #[inline]
    fn theta(&self, node: NodeId) -> f64 {
        self.ctx.uniform01("theta", node.code)
    }

    #[inline]
    fn theta_root(&self) -> f64 {
        self.ctx.uniform01("theta_root", 0)
    }

    fn check(&self, entries: &[(u128, f64)]) -> Result<()> {
        let mut prev = 0u128;
        for &(c, v) in entries {
            if c <= prev || c > self.dim {
                return Err(Error::InvalidArgument(format!(
                    "leaf {c} out of order or outside [1, {}]",
                    self.dim
                )));
            }
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!("leaf {c} value {v} outside (0, 1]")));
            }
            prev = c;
        }
        Ok(())
    }

    /// Postorder evaluation over every internal node of the padded tree.
    pub fn dense_round(&self, entries: &[(u128, f64)]) -> Result<Vec<u128>> {
        self.dense_round_traced(entries, |_| {})
    }

    pub fn dense_round_traced<F: FnMut(TreeEvent)>(
        &self,
        entries: &[(u128, f64)],
        mut visit: F,
    ) -> Result<Vec<u128>> {
        self.check(entries)?;
        if self.depth > MAX_DENSE_DEPTH {
            return Err(Error::InvalidArgument(format!(
                "dense traversal over 2^{} leaves is not supported",
                self.depth
            )));
        }
        let width = 1usize << self.depth;
        // padding leaves get coordinates beyond dim; they carry no mass
        let mut layer: Vec<(u128, f64)> = (0..width).map(|p| (p as u128 + 1, 0.0)).collect();
        for &(c, v) in entries {
            layer[(c - 1) as usize].1 = v;
        }
        let mut out = Vec::new();
        for level in (1..=self.depth).rev() {
            let first_heap = 1u128 << (level - 1);
            let next: Vec<(u128, f64)> = layer
                .chunks_exact(2)
                .enumerate()
                .map(|(p, pair)| {
                    let node = NodeId {
                        code: (1u128 << level) | reverse_bits(first_heap + p as u128, level),
                        level,
                    };
                    let ((i, a), (j, b)) = (pair[0], pair[1]);
                    let r = resolve_unchecked(i, a, j, b, self.theta(node));
                    if r.fixed_bit {
                        out.push(r.fixed);
                    }
                    visit(TreeEvent::Resolve { node, resolution: r });
                    (r.survivor, r.survivor_mass)
                })
                .collect();
            layer = next;
        }
        let (c, gamma) = layer[0];
        self.round_root(c, gamma, &mut out, &mut visit);
        out.sort_unstable();
        Ok(out)
    }

    fn round_root<F: FnMut(TreeEvent)>(&self, c: u128, gamma: f64, out: &mut Vec<u128>, visit: &mut F) {
        let up = self.theta_root() < gamma;
        if up {
            out.push(c);
        }
        visit(TreeEvent::Root { coordinate: c, mass: gamma, rounded_up: up });
    }

    /// Input-sparsity traversal: only lowest common ancestors of consecutive
    /// support leaves are resolved, in postorder, using an ancestor-chain
    /// stack. Bit-identical to [`TreePlan::dense_round`].
    pub fn sparse_round(&self, entries: &[(u128, f64)]) -> Result<Vec<u128>> {
        self.check(entries)?;
        Ok(self.sparse_round_unchecked(entries, |_| {}))
    }

    pub fn sparse_round_traced<F: FnMut(TreeEvent)>(
        &self,
        entries: &[(u128, f64)],
        visit: F,
    ) -> Result<Vec<u128>> {
        self.check(entries)?;
        Ok(self.sparse_round_unchecked(entries, visit))
    }

    /// Expects sorted, distinct leaves with values in `(0, 1]`.
    pub(crate) fn sparse_round_unchecked<F: FnMut(TreeEvent)>(
        &self,
        entries: &[(u128, f64)],
        mut visit: F,
    ) -> Vec<u128> {
        let mut out = Vec::new();
        let Some(&(first, first_mass)) = entries.first() else {
            return out;
        };
        // stack entries: (node, survivor of its left part)
        let mut stack: Vec<(NodeId, (u128, f64))> = Vec::new();
        let mut carry = (first, first_mass);
        let mut resolve_at = |node: NodeId, left: (u128, f64), right: (u128, f64), out: &mut Vec<u128>| {
            let r = resolve_unchecked(left.0, left.1, right.0, right.1, self.theta(node));
            if r.fixed_bit {
                out.push(r.fixed);
            }
            visit(TreeEvent::Resolve { node, resolution: r });
            (r.survivor, r.survivor_mass)
        };
        let mut prev_leaf = self.leaf(first);
        for &(c, v) in &entries[1..] {
            let leaf = self.leaf(c);
            let w = lca(prev_leaf, leaf);
            while let Some(&(top, left)) = stack.last() {
                if lca(top, w) == top {
                    break;
                }
                stack.pop();
                carry = resolve_at(top, left, carry, &mut out);
            }
            if stack.last().is_none_or(|&(top, _)| top != w) {
                stack.push((w, carry));
            }
            carry = (c, v);
            prev_leaf = leaf;
        }
        while let Some((top, left)) = stack.pop() {
            carry = resolve_at(top, left, carry, &mut out);
        }
        let up = self.theta_root() < carry.1;
        if up {
            out.push(carry.0);
        }
        visit(TreeEvent::Root { coordinate: carry.0, mass: carry.1, rounded_up: up });
        out.sort_unstable();
        out
    }
}

fn vector_leaves(x: &SparseVector) -> Vec<(u128, f64)> {
    x.entries().iter().map(|&(i, v)| (i as u128, v)).collect()
}

fn check_budget(x: &SparseVector) -> Result<()> {
    let mass = x.l1_norm();
    if mass > x.k() as f64 + BUDGET_TOLERANCE {
        return Err(Error::BudgetExceeded { mass, budget: x.k() as f64 });
    }
    Ok(())
}

fn to_sample_set(coords: Vec<u128>) -> SampleSet {
    SampleSet::from_unsorted(coords.into_iter().map(|c| c as u64).collect())
}

/// Dense postorder rounding of a vector over `[n]`.
pub fn dense_tree_round(plan: &TreePlan, x: &SparseVector) -> Result<SampleSet> {
    check_budget(x)?;
    plan.dense_round(&vector_leaves(x)).map(to_sample_set)
}

/// Input-sparsity rounding of a vector over `[n]`.
pub fn sparse_tree_round(plan: &TreePlan, x: &SparseVector) -> Result<SampleSet> {
    check_budget(x)?;
    plan.sparse_round(&vector_leaves(x)).map(to_sample_set)
}

/// Stretch bound `2 * ceil(log2 n)` of the tree sampler.
pub fn tree_stretch_bound(n: u64) -> f64 {
    let depth = if n <= 1 { 0 } else { 64 - (n - 1).leading_zeros() };
    2.0 * depth as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::MasterSeed;
    use proptest::prelude::*;

    fn naive_lca(u: NodeId, v: NodeId) -> NodeId {
        let (mut a, mut b) = (u.heap_index(), v.heap_index());
        while a != b {
            if a > b {
                a >>= 1;
            } else {
                b >>= 1;
            }
        }
        let level = 128 - a.leading_zeros();
        encode(a, level).unwrap()
    }

    #[test]
    fn encode_matches_figure_labels() {
        let expect = [(1, 0b0011, 1), (2, 0b0101, 2), (3, 0b0111, 2), (4, 0b1001, 3), (5, 0b1101, 3), (6, 0b1011, 3), (7, 0b1111, 3)];
        for (h, code, level) in expect {
            let v = encode(h, level).unwrap();
            assert_eq!((v.code(), v.level()), (code, level), "heap {h}");
            assert_eq!(v.heap_index(), h);
        }
        assert!(encode(5, 2).is_err());
        assert!(encode(1, 128).is_err());
    }

    #[test]
    fn parent_children_roundtrip() {
        for h in 1u128..(1 << 11) {
            let level = 128 - h.leading_zeros();
            let v = encode(h, level).unwrap();
            let (l, r) = v.children().unwrap();
            assert_eq!(l.heap_index(), 2 * h);
            assert_eq!(r.heap_index(), 2 * h + 1);
            assert_eq!(l.parent().unwrap(), v);
            assert_eq!(r.parent().unwrap(), v);
            if h > 1 {
                let p = v.parent().unwrap();
                assert_eq!(p.heap_index(), h / 2);
                assert_eq!(p.level(), level - 1);
                let (a, b) = p.children().unwrap();
                assert!(a == v || b == v);
            }
        }
        assert_eq!(NodeId::root().parent(), Err(Error::RootHasNoParent));
        let deep = encode(1u128 << 126, 127).unwrap();
        assert!(matches!(deep.children(), Err(Error::LevelOverflow(_))));
    }

    #[test]
    fn lca_figure_instance() {
        let x = NodeId::from_raw(0b1110101, 6).unwrap();
        let y = NodeId::from_raw(0b1011101, 6).unwrap();
        let w = lca(x, y);
        assert_eq!((w.code(), w.level()), (0b1101, 3));
        assert_eq!(lca(x, x), x);
    }

    #[test]
    fn lca_of_siblings_is_parent() {
        let v = encode(13, 4).unwrap();
        let (l, r) = v.children().unwrap();
        assert_eq!(lca(l, r), v);
    }

    #[test]
    fn lca_exhaustive_against_walk_up() {
        // every node pair of the 2^7-leaf tree (255 nodes)
        let nodes: Vec<NodeId> = (1u128..256)
            .map(|h| encode(h, 128 - h.leading_zeros()).unwrap())
            .collect();
        for &u in &nodes {
            for &v in &nodes {
                assert_eq!(lca(u, v), naive_lca(u, v), "{u:?} {v:?}");
            }
        }
    }

    #[test]
    fn ancestor_with_set_marker_position() {
        // descendant whose bit at the ancestor's marker position is 1
        let x = encode(5, 3).unwrap();
        let (_, right) = x.children().unwrap();
        assert_eq!(lca(x, right), x);
        assert!(x.is_ancestor_of(right));
        assert!(!right.is_ancestor_of(x));
    }

    #[test]
    fn resolve_examples() {
        let r = resolve(1, 0.3, 2, 0.4, 0.2).unwrap();
        assert_eq!((r.survivor, r.fixed, r.fixed_bit), (1, 2, false));
        assert!((r.survivor_mass - 0.7).abs() < 1e-15);

        let r = resolve(1, 0.6, 2, 0.9, 0.5).unwrap();
        assert_eq!((r.survivor, r.fixed, r.fixed_bit), (1, 2, true));
        assert!((r.survivor_mass - 0.5).abs() < 1e-15);
        let r = resolve(1, 0.6, 2, 0.9, 0.1).unwrap();
        assert_eq!((r.survivor, r.fixed, r.fixed_bit), (2, 1, true));

        for theta in [0.0, 0.3, 0.999_999] {
            let r = resolve(1, 0.4, 2, 0.0, theta).unwrap();
            assert_eq!((r.survivor, r.survivor_mass, r.fixed, r.fixed_bit), (1, 0.4, 2, false));
            let r = resolve(1, 0.0, 2, 0.4, theta).unwrap();
            assert_eq!((r.survivor, r.survivor_mass, r.fixed, r.fixed_bit), (2, 0.4, 1, false));
            let r = resolve(1, 1.0, 2, 0.5, theta).unwrap();
            assert_eq!((r.fixed, r.fixed_bit), (1, true));
            let r = resolve(1, 0.5, 2, 1.0, theta).unwrap();
            assert_eq!((r.fixed, r.fixed_bit), (2, true));
            let r = resolve(1, 1.0, 2, 1.0, theta).unwrap();
            assert_eq!((r.survivor_mass, r.fixed_bit), (1.0, true));
        }
        let r = resolve(1, 0.0, 2, 0.0, 0.5).unwrap();
        assert_eq!((r.survivor, r.survivor_mass, r.fixed, r.fixed_bit), (1, 0.0, 2, false));

        assert!(resolve(1, 1.2, 2, 0.0, 0.5).is_err());
        assert!(resolve(1, 0.2, 2, -0.1, 0.5).is_err());
        assert!(resolve(1, 0.2, 2, 0.1, 1.0).is_err());
    }

    #[test]
    fn resolve_preserves_expectation() {
        // integrate over theta on a fine grid: E[final value of i] = alpha
        for &(a, b) in &[(0.3, 0.4), (0.6, 0.9), (0.2, 0.8), (0.95, 0.5), (0.1, 0.05)] {
            let steps = 100_000;
            let mut ei = 0.0;
            for t in 0..steps {
                let theta = (t as f64 + 0.5) / steps as f64;
                let r = resolve_unchecked(1, a, 2, b, theta);
                let vi = if r.fixed == 1 { r.fixed_bit as u8 as f64 } else { r.survivor_mass };
                ei += vi;
            }
            ei /= steps as f64;
            assert!((ei - a).abs() < 1e-4, "{a} {b}: {ei}");
        }
    }

    proptest! {
        #[test]
        fn resolve_conserves_mass(a in 0.0f64..=1.0, b in 0.0f64..=1.0, theta in 0.0f64..1.0) {
            let r = resolve(7, a, 9, b, theta).unwrap();
            let total = r.survivor_mass + r.fixed_bit as u8 as f64;
            prop_assert!((total - (a + b)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.survivor_mass));
            prop_assert!(r.survivor != r.fixed);
        }

        #[test]
        fn lca_matches_walk_up_on_deep_trees(h1 in 1u128..(1u128 << 100), h2 in 1u128..(1u128 << 100)) {
            let u = encode(h1, 128 - h1.leading_zeros()).unwrap();
            let v = encode(h2, 128 - h2.leading_zeros()).unwrap();
            prop_assert_eq!(lca(u, v), naive_lca(u, v));
        }
    }

    fn plan(seed: u128, n: u128) -> TreePlan {
        TreePlan::new(SeedContext::new(MasterSeed(seed)), n).unwrap()
    }

    #[test]
    fn unit_vector_always_selected() {
        let x = SparseVector::unit(4, 1, 2).unwrap();
        for s in 0..300 {
            let p = plan(s, 4);
            assert_eq!(dense_tree_round(&p, &x).unwrap(), SampleSet::singleton(2));
            assert_eq!(sparse_tree_round(&p, &x).unwrap(), SampleSet::singleton(2));
        }
    }

    #[test]
    fn integral_mass_gives_exact_cardinality() {
        let x = SparseVector::from_dense(&[0.5; 4], 2).unwrap();
        for s in 0..500 {
            assert_eq!(dense_tree_round(&plan(s, 4), &x).unwrap().len(), 2);
        }
    }

    #[test]
    fn two_point_marginal() {
        let x = SparseVector::from_dense(&[0.3, 0.7], 1).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|&s| sparse_tree_round(&plan(s, 2), &x).unwrap().contains(1))
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.3).abs() <= 0.005, "{f}");
    }

    #[test]
    fn single_leaf_and_trivial_tree() {
        let p = plan(3, 1);
        assert_eq!(p.depth(), 0);
        let x = SparseVector::from_dense(&[1.0], 1).unwrap();
        assert_eq!(dense_tree_round(&p, &x).unwrap(), SampleSet::singleton(1));
        assert_eq!(sparse_tree_round(&p, &x).unwrap(), SampleSet::singleton(1));
        assert!(sparse_tree_round(&p, &SparseVector::validate([], 1, 1).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn nnz_one_rounds_at_root_only() {
        let x = SparseVector::validate([(37, 0.6)], 64, 1).unwrap();
        for s in 0..100 {
            let p = plan(s, 64);
            let mut events = Vec::new();
            let sparse = p.sparse_round_traced(&[(37, 0.6)], |e| events.push(e)).unwrap();
            assert_eq!(events.len(), 1);
            assert!(matches!(events[0], TreeEvent::Root { coordinate: 37, .. }));
            assert_eq!(to_sample_set(sparse), dense_tree_round(&p, &x).unwrap());
        }
    }

    #[test]
    fn figure_pop_order() {
        // leaves l1..l8 of a 16-leaf tree at positions 0,1,5,6,7,8,9,10
        let positions = [0u128, 1, 5, 6, 7, 8, 9, 10];
        let entries: Vec<(u128, f64)> = positions.iter().map(|&p| (p + 1, 0.1)).collect();
        let p = plan(0, 16);
        // the figure's numbering of internal nodes by heap index
        let figure: [(u128, u32); 7] = [(8, 1), (2, 2), (5, 3), (11, 4), (1, 5), (12, 6), (6, 7)];
        let mut popped = Vec::new();
        p.sparse_round_traced(&entries, |e| {
            if let TreeEvent::Resolve { node, .. } = e {
                let h = node.heap_index();
                popped.push(figure.iter().find(|f| f.0 == h).expect("unexpected node").1);
            }
        })
        .unwrap();
        assert_eq!(popped, vec![1, 4, 3, 2, 6, 7, 5]);
    }

    fn random_entries(ctx: &SeedContext, t: u128, n: u128) -> Vec<(u128, f64)> {
        let nnz = ctx.uniform_int_wide("nnz", t, n).unwrap();
        let mut e: Vec<(u128, f64)> = (0..nnz)
            .map(|j| {
                (
                    ctx.uniform_int_wide("pos", t << 32 | j, n).unwrap(),
                    1e-3 + (1.0 - 1e-3) * ctx.uniform01("val", t << 32 | j),
                )
            })
            .collect();
        e.sort_by_key(|p| p.0);
        e.dedup_by_key(|p| p.0);
        e
    }

    #[test]
    fn sparse_equals_dense_on_random_inputs() {
        let gen = SeedContext::new(MasterSeed(2024));
        for t in 0..200u128 {
            let e = random_entries(&gen, t, 64);
            let p = plan(t, 64);
            let mut resolves = 0;
            let sparse = p
                .sparse_round_traced(&e, |ev| resolves += matches!(ev, TreeEvent::Resolve { .. }) as usize)
                .unwrap();
            assert_eq!(sparse, p.dense_round(&e).unwrap());
            assert_eq!(resolves, e.len().saturating_sub(1));
            let mass: f64 = e.iter().map(|p| p.1).sum();
            assert!(crate::vectors::cardinality_ok(sparse.len(), mass));
        }
    }

    #[test]
    fn locality_of_single_coordinate_change() {
        // a coordinate fixed at a node off the perturbed leaf's root path
        // gets the same value for both inputs
        let gen = SeedContext::new(MasterSeed(77));
        for t in 0..200u128 {
            let e = random_entries(&gen, t, 128);
            let idx = (gen.uniform_int("which", t, e.len() as u64).unwrap() - 1) as usize;
            let mut f = e.clone();
            f[idx].1 = (f[idx].1 * 0.5).max(1e-3);
            let p = plan(t + 1000, 128);
            let mut fixed_at = std::collections::HashMap::new();
            let xs = p
                .dense_round_traced(&e, |ev| {
                    if let TreeEvent::Resolve { node, resolution } = ev {
                        fixed_at.insert(resolution.fixed, node);
                    }
                })
                .unwrap();
            let ys = p.dense_round(&f).unwrap();
            let leaf = p.leaf(e[idx].0);
            for &(c, _) in &e {
                if let Some(&node) = fixed_at.get(&c) {
                    if !node.is_ancestor_of(leaf) {
                        assert_eq!(xs.contains(&c), ys.contains(&c), "coordinate {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn huge_virtual_tree_is_supported() {
        let p = plan(1, 1u128 << 120);
        assert_eq!(p.depth(), 120);
        let e = [(5u128, 0.5), (1u128 << 100, 0.7), ((1u128 << 120) - 3, 0.8)];
        let out = p.sparse_round(&e).unwrap();
        assert!(crate::vectors::cardinality_ok(out.len(), 2.0));
        assert!(p.dense_round(&e).is_err());
        assert!(TreePlan::new(SeedContext::new(MasterSeed(0)), u128::MAX).is_err());
    }

    #[test]
    fn stretch_bound_formula() {
        assert_eq!(tree_stretch_bound(1 << 16), 32.0);
        assert_eq!(tree_stretch_bound(1024), 20.0);
        assert_eq!(tree_stretch_bound(1000), 20.0);
        assert_eq!(tree_stretch_bound(1), 0.0);
    }
}
