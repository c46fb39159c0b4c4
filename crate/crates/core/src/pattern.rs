//! Binary node patterns, per-node block layouts, and the gain masks they induce.
//!
//! A [`NodePattern`] is an n-tuple of bits, node 1 first. The same type is used
//! for attack patterns (0 = attacked), protection patterns (1 = protected) and
//! the resulting sparsity pattern (0 = communication disabled). Pattern index
//! `m` is the pattern's binary value with node 1 as the most significant bit,
//! so for n = 3 the enumeration order is `000, 001, ..., 111`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default cap on the node count for full pattern enumeration.
pub const DEFAULT_MAX_NODES: usize = 16;

/// Largest node count representable by a [`NodePattern`].
pub const HARD_MAX_NODES: usize = 63;

/// Binary status of every node in the network.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePattern {
    len: u8,
    value: u64,
}

impl NodePattern {
    /// Builds the pattern whose enumeration index is `index`.
    pub fn from_index(len: usize, index: usize) -> Result<Self> {
        if len == 0 || len > HARD_MAX_NODES {
            return Err(Error::Capacity {
                what: "node count",
                got: len,
                limit: HARD_MAX_NODES,
            });
        }
        let value = index as u64;
        if len < 64 && value >> len != 0 {
            return Err(Error::Dimension(format!(
                "pattern index {index} does not fit in {len} nodes"
            )));
        }
        Ok(NodePattern {
            len: len as u8,
            value,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let len = bits.len();
        if len == 0 || len > HARD_MAX_NODES {
            return Err(Error::Capacity {
                what: "node count",
                got: len,
                limit: HARD_MAX_NODES,
            });
        }
        let value = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
        Ok(NodePattern {
            len: len as u8,
            value,
        })
    }

    pub fn all_ones(len: usize) -> Result<Self> {
        Self::from_index(len, ((1u64 << len) - 1) as usize)
    }

    pub fn all_zeros(len: usize) -> Result<Self> {
        Self::from_index(len, 0)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Position in the enumeration order.
    pub fn index(&self) -> usize {
        self.value as usize
    }

    /// Status bit of node `k` (0-based; node 1 is `k = 0`).
    pub fn bit(&self, k: usize) -> bool {
        assert!(k < self.len(), "node {k} out of range for {} nodes", self.len);
        (self.value >> (self.len() - 1 - k)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |k| self.bit(k))
    }

    pub fn count_ones(&self) -> usize {
        self.value.count_ones() as usize
    }

    pub fn count_zeros(&self) -> usize {
        self.len() - self.count_ones()
    }

    pub fn is_all_ones(&self) -> bool {
        self.count_zeros() == 0
    }

    /// Elementwise `self <= other`.
    pub fn is_subset_of(&self, other: &NodePattern) -> bool {
        self.len == other.len && self.value & !other.value == 0
    }

    /// Patterns obtained by clearing exactly one set bit.
    pub fn children(&self) -> impl Iterator<Item = NodePattern> + '_ {
        (0..self.len()).filter(|&k| self.bit(k)).map(move |k| NodePattern {
            len: self.len,
            value: self.value & !(1u64 << (self.len() - 1 - k)),
        })
    }
}

impl fmt::Display for NodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for NodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodePattern({self})")
    }
}

impl FromStr for NodePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!(
                    "pattern {s:?} contains {other:?}; only '0' and '1' are allowed"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        NodePattern::from_bits(&bits)
    }
}

impl Serialize for NodePattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodePattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All `2^n` patterns in index order, with the default node cap.
pub fn enumerate_patterns(n: usize) -> Result<Vec<NodePattern>> {
    enumerate_patterns_capped(n, DEFAULT_MAX_NODES)
}

pub fn enumerate_patterns_capped(n: usize, max_nodes: usize) -> Result<Vec<NodePattern>> {
    let limit = max_nodes.min(HARD_MAX_NODES);
    if n > limit {
        return Err(Error::Capacity {
            what: "node count",
            got: n,
            limit,
        });
    }
    if n == 0 {
        return Err(Error::Dimension("node count must be at least 1".into()));
    }
    (0..1usize << n)
        .map(|m| NodePattern::from_index(n, m))
        .collect()
}

/// Bitwise OR of an attack and a protection pattern: node k ends up disabled
/// only when it is attacked and left unprotected.
pub fn combine(attack: &NodePattern, protect: &NodePattern) -> Result<NodePattern> {
    if attack.len != protect.len {
        return Err(Error::Dimension(format!(
            "cannot combine patterns of length {} and {}",
            attack.len, protect.len
        )));
    }
    Ok(NodePattern {
        len: attack.len,
        value: attack.value | protect.value,
    })
}

/// Number of attacked nodes (zeros) in an attack pattern.
pub fn count_attacked(attack: &NodePattern) -> usize {
    attack.count_zeros()
}

/// Number of protected nodes (ones) in a protection pattern.
pub fn count_protected(protect: &NodePattern) -> usize {
    protect.count_ones()
}

/// Per-node sizes of the state and input blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    state_sizes: Vec<usize>,
    input_sizes: Vec<usize>,
}

impl BlockLayout {
    pub fn new(state_sizes: Vec<usize>, input_sizes: Vec<usize>) -> Result<Self> {
        if state_sizes.is_empty() {
            return Err(Error::Dimension("layout needs at least one node".into()));
        }
        if state_sizes.len() != input_sizes.len() {
            return Err(Error::Dimension(format!(
                "layout has {} state blocks but {} input blocks",
                state_sizes.len(),
                input_sizes.len()
            )));
        }
        if let Some(i) = state_sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation(
                "state_sizes",
                format!("node {} has no states", i + 1),
            ));
        }
        Ok(BlockLayout {
            state_sizes,
            input_sizes,
        })
    }

    /// One state and one input per node.
    pub fn uniform(n: usize, states_per_node: usize, inputs_per_node: usize) -> Result<Self> {
        Self::new(vec![states_per_node; n], vec![inputs_per_node; n])
    }

    pub fn node_count(&self) -> usize {
        self.state_sizes.len()
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.state_sizes
    }

    pub fn input_sizes(&self) -> &[usize] {
        &self.input_sizes
    }

    pub fn state_dim(&self) -> usize {
        self.state_sizes.iter().sum()
    }

    pub fn input_dim(&self) -> usize {
        self.input_sizes.iter().sum()
    }

    fn ranges(sizes: &[usize]) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }

    pub fn state_ranges(&self) -> Vec<std::ops::Range<usize>> {
        Self::ranges(&self.state_sizes)
    }

    pub fn input_ranges(&self) -> Vec<std::ops::Range<usize>> {
        Self::ranges(&self.input_sizes)
    }

    /// Node owning each state index.
    pub fn state_owner(&self) -> Vec<usize> {
        owners(&self.state_sizes)
    }

    /// Node owning each input index.
    pub fn input_owner(&self) -> Vec<usize> {
        owners(&self.input_sizes)
    }
}

fn owners(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(node, &s)| std::iter::repeat_n(node, s))
        .collect()
}

/// Which entries of the r×m feedback gain are free (true) or forced to zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GainMask {
    entries: DMatrix<bool>,
    self_links_disabled: bool,
}

impl GainMask {
    pub fn full(layout: &BlockLayout) -> Self {
        GainMask {
            entries: DMatrix::from_element(layout.input_dim(), layout.state_dim(), true),
            self_links_disabled: true,
        }
    }

    /// Wraps an arbitrary entry mask. Used for hand-built structural constraints.
    pub fn from_entries(entries: DMatrix<bool>, self_links_disabled: bool) -> Self {
        GainMask {
            entries,
            self_links_disabled,
        }
    }

    pub fn entries(&self) -> &DMatrix<bool> {
        &self.entries
    }

    pub fn self_links_disabled(&self) -> bool {
        self.self_links_disabled
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        self.entries[(row, col)]
    }

    pub fn free_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    pub fn is_full(&self) -> bool {
        self.entries.iter().all(|&e| e)
    }

    pub fn is_empty_mask(&self) -> bool {
        self.entries.iter().all(|&e| !e)
    }

    /// Entrywise `self <= other`.
    pub fn is_subset_of(&self, other: &GainMask) -> bool {
        self.shape() == other.shape()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|(&a, &b)| !a || b)
    }

    /// Zeroes the masked-out entries of `k` in place.
    pub fn project_in_place(&self, k: &mut DMatrix<f64>) {
        debug_assert_eq!(k.shape(), self.shape());
        for (v, &free) in k.iter_mut().zip(self.entries.iter()) {
            if !free {
                *v = 0.0;
            }
        }
    }

    pub fn project(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = k.clone();
        self.project_in_place(&mut out);
        out
    }

    /// True when every block of `layout` is uniformly free or uniformly zero.
    pub fn is_block_structured(&self, layout: &BlockLayout) -> bool {
        if self.shape() != (layout.input_dim(), layout.state_dim()) {
            return false;
        }
        let rows = layout.input_ranges();
        let cols = layout.state_ranges();
        rows.iter().all(|rr| {
            cols.iter().all(|cr| {
                let mut vals = rr
                    .clone()
                    .flat_map(|i| cr.clone().map(move |j| (i, j)))
                    .map(|(i, j)| self.entries[(i, j)]);
                match vals.next() {
                    None => true,
                    Some(first) => vals.all(|v| v == first),
                }
            })
        })
    }

    /// Recovers the node pattern that generated this mask. Returns `None` when
    /// the mask is not generated by any pattern, or when some node's bit does
    /// not affect the mask (e.g. a node without inputs whose neighbours are
    /// all disabled).
    pub fn node_pattern(&self, layout: &BlockLayout) -> Option<NodePattern> {
        if !self.is_block_structured(layout) {
            return None;
        }
        let row_owner = layout.input_owner();
        let col_owner = layout.state_owner();
        let n = layout.node_count();
        let mut bits = vec![false; n];
        for ((r, c), &free) in self
            .entries
            .iter()
            .enumerate()
            .map(|(k, v)| ((k % self.entries.nrows(), k / self.entries.nrows()), v))
        {
            let (i, j) = (row_owner[r], col_owner[c]);
            if free && (i != j || self.self_links_disabled) {
                bits[i] = true;
                bits[j] = true;
            }
        }
        let pattern = NodePattern::from_bits(&bits).ok()?;
        if pattern_to_mask(&pattern, layout, self.self_links_disabled).ok()? != *self {
            return None;
        }
        let identifiable = (0..n).all(|k| {
            let flipped = NodePattern {
                len: pattern.len,
                value: pattern.value ^ (1u64 << (n - 1 - k)),
            };
            pattern_to_mask(&flipped, layout, self.self_links_disabled)
                .map(|m| m != *self)
                .unwrap_or(false)
        });
        identifiable.then_some(pattern)
    }
}

/// Structural constraint on K induced by a resulting pattern `s`.
///
/// With self links disabled (hardware attack), block (i, j) is zero iff
/// `s_i = 0` or `s_j = 0`. With self links intact only off-diagonal blocks
/// are removed.
pub fn pattern_to_mask(
    pattern: &NodePattern,
    layout: &BlockLayout,
    self_links_disabled: bool,
) -> Result<GainMask> {
    let n = layout.node_count();
    if pattern.len() != n {
        return Err(Error::Dimension(format!(
            "pattern has {} nodes but layout has {n}",
            pattern.len()
        )));
    }
    let row_owner = layout.input_owner();
    let col_owner = layout.state_owner();
    let entries = DMatrix::from_fn(layout.input_dim(), layout.state_dim(), |r, c| {
        let (i, j) = (row_owner[r], col_owner[c]);
        let cut = !pattern.bit(i) || !pattern.bit(j);
        if self_links_disabled {
            !cut
        } else {
            i == j || !cut
        }
    });
    Ok(GainMask {
        entries,
        self_links_disabled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> NodePattern {
        s.parse().unwrap()
    }

    #[test]
    fn enumerates_three_nodes_in_listing_order() {
        let pats: Vec<String> = enumerate_patterns(3)
            .unwrap()
            .iter()
            .map(|p| p.to_string())
            .collect();
        assert_eq!(
            pats,
            ["000", "001", "010", "011", "100", "101", "110", "111"]
        );
    }

    #[test]
    fn enumerates_single_node() {
        let pats = enumerate_patterns(1).unwrap();
        assert_eq!(pats, vec![p("0"), p("1")]);
    }

    #[test]
    fn enumerates_four_nodes_distinct_and_sorted() {
        let pats = enumerate_patterns(4).unwrap();
        assert_eq!(pats.len(), 16);
        let set: std::collections::BTreeSet<String> =
            pats.iter().map(|p| p.to_string()).collect();
        assert_eq!(set.len(), 16);
        // Every 4-character binary string appears exactly once.
        let brute: std::collections::BTreeSet<String> =
            (0..16).map(|m| format!("{m:04b}")).collect();
        assert_eq!(set, brute);
        assert!(pats.windows(2).all(|w| w[0].index() < w[1].index()));
        for (m, pat) in pats.iter().enumerate() {
            assert_eq!(pat.index(), m);
        }
    }

    #[test]
    fn enumeration_is_capped() {
        match enumerate_patterns(17) {
            Err(Error::Capacity { limit, got, .. }) => {
                assert_eq!(limit, 16);
                assert_eq!(got, 17);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
        assert_eq!(enumerate_patterns_capped(17, 20).unwrap().len(), 1 << 17);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(&p("010"), &p("100")).unwrap(), p("110"));
        assert_eq!(combine(&p("111"), &p("010")).unwrap(), p("111"));
        assert_eq!(combine(&p("000"), &p("000")).unwrap(), p("000"));
        assert!(matches!(
            combine(&p("01"), &p("010")),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn counts() {
        assert_eq!(count_attacked(&p("010")), 2);
        assert_eq!(count_attacked(&p("111")), 0);
        assert_eq!(count_attacked(&p("000")), 3);
        assert_eq!(count_protected(&p("100")), 1);
        assert_eq!(count_protected(&p("111")), 3);
        assert_eq!(count_protected(&p("000")), 0);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("012".parse::<NodePattern>().is_err());
        assert!("".parse::<NodePattern>().is_err());
        let json = serde_json::to_string(&p("0110")).unwrap();
        assert_eq!(json, "\"0110\"");
        assert_eq!(serde_json::from_str::<NodePattern>(&json).unwrap(), p("0110"));
    }

    fn block_free(mask: &GainMask, layout: &BlockLayout, i: usize, j: usize) -> bool {
        let r = layout.input_ranges()[i].start;
        let c = layout.state_ranges()[j].start;
        mask.is_free(r, c)
    }

    #[test]
    fn hardware_attack_removes_row_and_column_of_node_three() {
        let layout = BlockLayout::new(vec![2, 1, 3], vec![1, 2, 1]).unwrap();
        let mask = pattern_to_mask(&p("110"), &layout, true).unwrap();
        assert!(mask.is_block_structured(&layout));
        for i in 0..3 {
            for j in 0..3 {
                let expect = i != 2 && j != 2;
                assert_eq!(block_free(&mask, &layout, i, j), expect, "block ({i},{j})");
            }
        }
    }

    #[test]
    fn intact_pattern_gives_full_mask() {
        let layout = BlockLayout::uniform(3, 2, 1).unwrap();
        for flag in [true, false] {
            let mask = pattern_to_mask(&p("111"), &layout, flag).unwrap();
            assert!(mask.is_full());
        }
        let zero = pattern_to_mask(&p("000"), &layout, true).unwrap();
        assert!(zero.is_empty_mask());
    }

    #[test]
    fn self_links_intact_keeps_diagonal_block() {
        let layout = BlockLayout::uniform(3, 2, 1).unwrap();
        let mask = pattern_to_mask(&p("110"), &layout, false).unwrap();
        let expected_zero = [(0, 2), (2, 0), (1, 2), (2, 1)];
        for i in 0..3 {
            for j in 0..3 {
                let free = block_free(&mask, &layout, i, j);
                assert_eq!(free, !expected_zero.contains(&(i, j)), "block ({i},{j})");
            }
        }
    }

    #[test]
    fn mask_dimension_mismatch() {
        let layout = BlockLayout::uniform(2, 1, 1).unwrap();
        assert!(matches!(
            pattern_to_mask(&p("110"), &layout, true),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_input_nodes_have_empty_rows() {
        let layout = BlockLayout::new(vec![1, 2], vec![0, 1]).unwrap();
        let mask = pattern_to_mask(&p("11"), &layout, true).unwrap();
        assert_eq!(mask.shape(), (1, 3));
    }

    fn arb_pattern(n: usize) -> impl Strategy<Value = NodePattern> {
        (0..1usize << n).prop_map(move |m| NodePattern::from_index(n, m).unwrap())
    }

    proptest! {
        #[test]
        fn combine_laws((a, b, c) in (1usize..7).prop_flat_map(|n| (arb_pattern(n), arb_pattern(n), arb_pattern(n)))) {
            let n = a.len();
            let ones = NodePattern::all_ones(n).unwrap();
            let zeros = NodePattern::all_zeros(n).unwrap();
            prop_assert_eq!(combine(&a, &b).unwrap(), combine(&b, &a).unwrap());
            prop_assert_eq!(
                combine(&combine(&a, &b).unwrap(), &c).unwrap(),
                combine(&a, &combine(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(combine(&a, &a).unwrap(), a);
            prop_assert_eq!(combine(&a, &ones).unwrap(), ones);
            prop_assert_eq!(combine(&a, &zeros).unwrap(), a);
            prop_assert_eq!(count_attacked(&a) + a.count_ones(), n);
        }

        #[test]
        fn masks_are_monotone_and_round_trip(
            (s, t, sizes, inputs, flag) in (1usize..5).prop_flat_map(|n| (
                arb_pattern(n),
                arb_pattern(n),
                proptest::collection::vec(1usize..3, n),
                proptest::collection::vec(1usize..3, n),
                any::<bool>(),
            ))
        ) {
            let layout = BlockLayout::new(sizes, inputs).unwrap();
            let ms = pattern_to_mask(&s, &layout, flag).unwrap();
            let mt = pattern_to_mask(&t, &layout, flag).unwrap();
            prop_assert!(ms.is_block_structured(&layout));
            if s.is_subset_of(&t) {
                prop_assert!(ms.is_subset_of(&mt));
            }
            let lo = NodePattern::from_index(s.len(), s.index() & t.index()).unwrap();
            prop_assert!(pattern_to_mask(&lo, &layout, flag).unwrap().is_subset_of(&ms));
            match ms.node_pattern(&layout) {
                Some(back) => prop_assert_eq!(back, s),
                // Only the self-links-intact variant loses information.
                None => prop_assert!(!flag),
            }
        }
    }
}
