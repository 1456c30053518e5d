//! Combinatorics of the binary state space `{0,1}^n`.
//!
//! A state is stored as an integer index whose bit `i - 1` is the coordinate
//! `x_i` (little-endian). Every module of the crate uses this encoding, and
//! [`State`]'s `Display` prints coordinates in the order `x_1 x_2 … x_n`.
//!
//! Faces (cubical subsets) are described by a mask of fixed coordinates and
//! the values on those coordinates. Partitions are lists of disjoint blocks,
//! optionally partial (not covering the whole cube), with a face descriptor
//! per block when every block is cubical.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension for which dense objects over `{0,1}^n` are built.
pub const MAX_DIM: usize = 20;

/// Largest dimension accepted by [`enumerate_cubical_partitions`].
pub const MAX_ENUMERATION_DIM: usize = 6;

pub(crate) fn check_dim(n: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::DimensionOutOfRange {
            n,
            min: 1,
            max: MAX_DIM,
        })
    }
}

#[inline]
pub(crate) fn dim_mask(n: usize) -> usize {
    (1usize << n) - 1
}

/// A vertex of the `n`-cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    n: usize,
    index: usize,
}

impl State {
    pub fn new(n: usize, index: usize) -> Result<Self> {
        check_dim(n)?;
        if index >> n != 0 {
            return Err(Error::OutOfRange(format!(
                "state index {index} does not fit in {n} bits"
            )));
        }
        Ok(Self { n, index })
    }

    pub(crate) fn new_unchecked(n: usize, index: usize) -> Self {
        Self { n, index }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Coordinate `x_{i+1}` (zero-based `i`).
    pub fn bit(&self, i: usize) -> u8 {
        ((self.index >> i) & 1) as u8
    }

    /// Number of coordinates equal to one.
    pub fn weight(&self) -> u32 {
        self.index.count_ones()
    }

    /// The state with every coordinate flipped.
    pub fn complement(&self) -> Self {
        Self {
            n: self.n,
            index: !self.index & dim_mask(self.n),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            write!(f, "{}", self.bit(i))?;
        }
        Ok(())
    }
}

/// A face of the `n`-cube: `{v : v & fixed_mask == fixed_values}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FaceRepr")]
pub struct Face {
    n: usize,
    fixed_mask: usize,
    fixed_values: usize,
}

#[derive(Deserialize)]
struct FaceRepr {
    n: usize,
    fixed_mask: usize,
    fixed_values: usize,
}

impl TryFrom<FaceRepr> for Face {
    type Error = Error;

    fn try_from(r: FaceRepr) -> Result<Self> {
        Face::new(r.n, r.fixed_mask, r.fixed_values)
    }
}

impl Face {
    pub fn new(n: usize, fixed_mask: usize, fixed_values: usize) -> Result<Self> {
        check_dim(n)?;
        let all = dim_mask(n);
        if fixed_mask & !all != 0 {
            return Err(Error::InvalidFace(format!(
                "fixed mask {fixed_mask:#b} has bits beyond n = {n}"
            )));
        }
        if fixed_values & !fixed_mask != 0 {
            return Err(Error::InvalidFace(format!(
                "fixed values {fixed_values:#b} set outside the fixed mask {fixed_mask:#b}"
            )));
        }
        Ok(Self {
            n,
            fixed_mask,
            fixed_values,
        })
    }

    /// The whole cube.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, 0, 0)
    }

    /// The 0-dimensional face `{x}`.
    pub fn vertex(n: usize, x: usize) -> Result<Self> {
        Self::new(n, dim_mask(n), x)
    }

    /// The face through `anchor` whose free coordinates are `free_mask`.
    pub fn through(n: usize, anchor: usize, free_mask: usize) -> Result<Self> {
        let fixed = dim_mask(n) & !free_mask;
        Self::new(n, fixed, anchor & fixed)
    }

    /// The smallest face containing every state, if that face has no other
    /// members (i.e. the set is itself cubical).
    pub fn from_states(n: usize, states: &[usize]) -> Option<Self> {
        let first = *states.first()?;
        let all = dim_mask(n);
        let mut varying = 0usize;
        for &s in states {
            if s & !all != 0 {
                return None;
            }
            varying |= s ^ first;
        }
        let face = Self::through(n, first, varying).ok()?;
        let mut distinct = states.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        (distinct.len() == face.len()).then_some(face)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fixed_mask(&self) -> usize {
        self.fixed_mask
    }

    pub fn fixed_values(&self) -> usize {
        self.fixed_values
    }

    pub fn free_mask(&self) -> usize {
        dim_mask(self.n) & !self.fixed_mask
    }

    /// Zero-based indices of the free coordinates, ascending.
    pub fn free_coords(&self) -> Vec<usize> {
        let free = self.free_mask();
        (0..self.n).filter(|&i| free >> i & 1 == 1).collect()
    }

    /// Dimension of the face (number of free coordinates).
    pub fn dim(&self) -> usize {
        self.free_mask().count_ones() as usize
    }

    /// Cardinality `2^dim`.
    pub fn len(&self) -> usize {
        1 << self.dim()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, v: usize) -> bool {
        v & self.fixed_mask == self.fixed_values
    }

    /// Two faces are disjoint iff they disagree on a coordinate fixed in both.
    pub fn is_disjoint(&self, other: &Face) -> bool {
        (self.fixed_mask & other.fixed_mask) & (self.fixed_values ^ other.fixed_values) != 0
    }

    /// Member indices in ascending order.
    pub fn member_indices(&self) -> Vec<usize> {
        let free = self.free_mask();
        let mut out = Vec::with_capacity(self.len());
        // Enumerate submasks of `free` in increasing numeric order.
        let mut sub = 0usize;
        loop {
            out.push(self.fixed_values | sub);
            if sub == free {
                break;
            }
            sub = (sub.wrapping_sub(free)) & free;
        }
        out
    }

    /// Number of fixed coordinates on which `v` differs from the face.
    pub fn distance(&self, v: usize) -> u32 {
        ((v & self.fixed_mask) ^ self.fixed_values).count_ones()
    }
}

/// Members of a face as states, ascending by index.
pub fn face_members(f: &Face) -> Vec<State> {
    f.member_indices()
        .into_iter()
        .map(|i| State::new_unchecked(f.n, i))
        .collect()
}

/// Disjoint blocks of states of `{0,1}^n`.
///
/// A partition may be partial (its blocks cover only a subset of the cube);
/// [`Partition::is_covering`] tells the two apart. Blocks are kept sorted by
/// their smallest member, and each block's states are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
    faces: Option<Vec<Face>>,
    covering: bool,
    block_of: Vec<Option<usize>>,
}

impl Partition {
    /// Builds a (possibly partial) partition from pairwise disjoint faces.
    pub fn from_faces(n: usize, faces: Vec<Face>) -> Result<Self> {
        check_dim(n)?;
        if faces.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        for f in &faces {
            if f.n != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: f.n,
                });
            }
        }
        for (i, a) in faces.iter().enumerate() {
            for (j, b) in faces.iter().enumerate().skip(i + 1) {
                if !a.is_disjoint(b) {
                    return Err(Error::InvalidPartition(format!(
                        "faces {i} and {j} overlap"
                    )));
                }
            }
        }
        let mut faces = faces;
        faces.sort_by_key(|f| f.fixed_values);
        let blocks = faces.iter().map(Face::member_indices).collect();
        Ok(Self::assemble(n, blocks, Some(faces)))
    }

    /// Builds a (possibly partial) partition from explicit state lists.
    /// Cubical blocks are detected automatically.
    pub fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        check_dim(n)?;
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        let size = 1usize << n;
        let mut seen = vec![false; size];
        let mut sorted = Vec::with_capacity(blocks.len());
        for (i, mut b) in blocks.into_iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidPartition(format!("block {i} is empty")));
            }
            b.sort_unstable();
            for &s in &b {
                if s >= size {
                    return Err(Error::InvalidPartition(format!(
                        "state {s} out of range for n = {n}"
                    )));
                }
                if seen[s] {
                    return Err(Error::InvalidPartition(format!(
                        "state {s} appears in more than one block"
                    )));
                }
                seen[s] = true;
            }
            sorted.push(b);
        }
        sorted.sort_by_key(|b| b[0]);
        let faces: Option<Vec<Face>> = sorted.iter().map(|b| Face::from_states(n, b)).collect();
        Ok(Self::assemble(n, sorted, faces))
    }

    fn assemble(n: usize, blocks: Vec<Vec<usize>>, faces: Option<Vec<Face>>) -> Self {
        let mut block_of = vec![None; 1 << n];
        let mut covered = 0usize;
        for (i, b) in blocks.iter().enumerate() {
            for &s in b {
                block_of[s] = Some(i);
            }
            covered += b.len();
        }
        Self {
            n,
            covering: covered == 1 << n,
            blocks,
            faces,
            block_of,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Face descriptors, present iff every block is cubical.
    pub fn faces(&self) -> Option<&[Face]> {
        self.faces.as_deref()
    }

    pub fn is_cubical(&self) -> bool {
        self.faces.is_some()
    }

    /// Whether the blocks cover the whole cube.
    pub fn is_covering(&self) -> bool {
        self.covering
    }

    /// Index of the block containing state `v`, if any.
    pub fn block_of(&self, v: usize) -> Option<usize> {
        self.block_of.get(v).copied().flatten()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }
}

/// Serialized form: a list of faces when cubical, explicit state lists otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartitionRepr {
    Faces { n: usize, faces: Vec<Face> },
    Blocks { n: usize, blocks: Vec<Vec<usize>> },
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match &self.faces {
            Some(faces) => PartitionRepr::Faces {
                n: self.n,
                faces: faces.clone(),
            },
            None => PartitionRepr::Blocks {
                n: self.n,
                blocks: self.blocks.clone(),
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PartitionRepr::deserialize(d)?;
        let p = match repr {
            PartitionRepr::Faces { n, faces } => Partition::from_faces(n, faces),
            PartitionRepr::Blocks { n, blocks } => Partition::from_blocks(n, blocks),
        };
        p.map_err(serde::de::Error::custom)
    }
}

/// Partition into `blocks` faces with sizes `2^(k-1)` and `2^k`,
/// `k = n - floor(log2(blocks))`, the shape that attains the hidden-unit
/// error bound. The top coordinates are fixed first; the leading faces are
/// then halved along their highest free coordinate.
pub fn balanced_cubical_partition(n: usize, blocks: usize) -> Result<Partition> {
    check_dim(n)?;
    let max = 1usize << (n - 1);
    if blocks == 0 || blocks > max {
        return Err(Error::BlockCountOutOfRange { blocks, max });
    }
    let fl = blocks.ilog2() as usize;
    let k = n - fl;
    let small = 2 * blocks - (1 << (fl + 1));
    let top_mask = dim_mask(n) & !dim_mask(k);
    let mut faces = Vec::with_capacity(blocks);
    for t in 0..(1usize << fl) {
        let values = t << k;
        if t < small / 2 {
            let split = 1usize << (k - 1);
            faces.push(Face::new(n, top_mask | split, values)?);
            faces.push(Face::new(n, top_mask | split, values | split)?);
        } else {
            faces.push(Face::new(n, top_mask, values)?);
        }
    }
    Partition::from_faces(n, faces)
}

/// Hamming-weight classes `{v : |v| = w}`, `w = 0..=n`.
pub fn exchangeable_partition(n: usize) -> Result<Partition> {
    check_dim(n)?;
    let mut blocks = vec![Vec::new(); n + 1];
    for v in 0..(1usize << n) {
        blocks[v.count_ones() as usize].push(v);
    }
    Partition::from_blocks(n, blocks)
}

/// Lazily enumerates every partition of `{0,1}^n` into at most `max_blocks`
/// faces, each exactly once. Blocks come out sorted by smallest member and
/// the stream order is the canonical order used for tie-breaking.
pub fn enumerate_cubical_partitions(n: usize, max_blocks: usize) -> Result<CubicalPartitions> {
    if !(1..=MAX_ENUMERATION_DIM).contains(&n) {
        return Err(Error::DimensionOutOfRange {
            n,
            min: 1,
            max: MAX_ENUMERATION_DIM,
        });
    }
    Ok(CubicalPartitions::new(n, max_blocks))
}

/// Depth-first stream behind [`enumerate_cubical_partitions`].
///
/// Each level picks the block containing the smallest uncovered state `s`.
/// Such a block has `s` as its smallest member, so its free coordinates are
/// a subset of the zero bits of `s`.
#[derive(Debug)]
pub struct CubicalPartitions {
    n: usize,
    max_blocks: usize,
    full: u64,
    stack: Vec<Frame>,
    path: Vec<Face>,
    started: bool,
}

#[derive(Debug)]
struct Frame {
    covered: u64,
    anchor: usize,
    zeros: usize,
    next: Option<usize>,
}

impl Frame {
    fn new(n: usize, covered: u64) -> Self {
        let anchor = covered.trailing_ones() as usize;
        let zeros = dim_mask(n) & !anchor;
        Self {
            covered,
            anchor,
            zeros,
            next: Some(zeros),
        }
    }

    fn advance(&mut self) -> Option<usize> {
        let cur = self.next?;
        self.next = (cur != 0).then(|| (cur - 1) & self.zeros);
        Some(cur)
    }
}

impl CubicalPartitions {
    fn new(n: usize, max_blocks: usize) -> Self {
        let size = 1u32 << n;
        let full = if size == 64 {
            u64::MAX
        } else {
            (1u64 << size) - 1
        };
        Self {
            n,
            max_blocks,
            full,
            stack: Vec::new(),
            path: Vec::new(),
            started: false,
        }
    }
}

impl Iterator for CubicalPartitions {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if !self.started {
            self.started = true;
            if self.max_blocks == 0 {
                return None;
            }
            self.stack.push(Frame::new(self.n, 0));
        }
        loop {
            let depth = self.stack.len();
            if depth == 0 {
                return None;
            }
            self.path.truncate(depth - 1);
            let frame = &mut self.stack[depth - 1];
            let Some(free) = frame.advance() else {
                self.stack.pop();
                continue;
            };
            let face = Face::through(self.n, frame.anchor, free).expect("face within range");
            let members = face
                .member_indices()
                .into_iter()
                .fold(0u64, |acc, v| acc | 1u64 << v);
            if members & frame.covered != 0 {
                continue;
            }
            let covered = frame.covered | members;
            self.path.push(face);
            if covered == self.full {
                let p = Partition::from_faces(self.n, self.path.clone())
                    .expect("enumerated faces are disjoint");
                return Some(p);
            }
            if self.path.len() < self.max_blocks {
                self.stack.push(Frame::new(self.n, covered));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(bits: &str) -> usize {
        // x_1 first
        bits.chars()
            .enumerate()
            .map(|(i, c)| if c == '1' { 1 << i } else { 0 })
            .sum()
    }

    #[test]
    fn full_face_lists_all_states() {
        let f = Face::full(2).unwrap();
        let m: Vec<String> = face_members(&f).iter().map(|s| s.to_string()).collect();
        assert_eq!(m, ["00", "10", "01", "11"]);
        assert_eq!(f.member_indices(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn edge_with_second_coordinate_fixed() {
        // the face {(11), (01)}
        let f = Face::new(2, 0b10, 0b10).unwrap();
        let members = f.member_indices();
        assert_eq!(members, vec![idx("01"), idx("11")]);
    }

    #[test]
    fn face_members_match_membership_filter() {
        // x_1 = 1, x_2 = 0 in n = 3
        let f = Face::new(3, 0b011, 0b001).unwrap();
        let brute: Vec<usize> = (0..8).filter(|&v| v & 0b011 == 0b001).collect();
        assert_eq!(f.member_indices(), brute);
        assert_eq!(brute, vec![1, 5]);
    }

    #[test]
    fn face_rejects_values_outside_mask() {
        assert!(Face::new(3, 0b001, 0b010).is_err());
        assert!(Face::new(2, 0b100, 0).is_err());
    }

    #[test]
    fn face_lengths_exhaustive() {
        for n in 1..=6 {
            let all = dim_mask(n);
            for mask in 0..=all {
                let mut vals = 0usize;
                loop {
                    let f = Face::new(n, mask, vals).unwrap();
                    let members = f.member_indices();
                    assert_eq!(members.len(), 1 << (n - mask.count_ones() as usize));
                    assert!(members.iter().all(|&v| f.contains(v)));
                    if vals == mask {
                        break;
                    }
                    vals = vals.wrapping_sub(mask) & mask;
                }
            }
        }
    }

    #[test]
    fn from_states_detects_cubes() {
        assert!(Face::from_states(3, &[0, 1, 2, 3]).is_some());
        assert!(Face::from_states(3, &[0, 3]).is_none());
        assert_eq!(
            Face::from_states(3, &[5]),
            Some(Face::vertex(3, 5).unwrap())
        );
    }

    #[test]
    fn balanced_partition_examples() {
        let p = balanced_cubical_partition(3, 2).unwrap();
        assert_eq!(p.block_sizes(), vec![4, 4]);
        let p = balanced_cubical_partition(4, 3).unwrap();
        let mut sizes = p.block_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 4, 8]);
        let p = balanced_cubical_partition(2, 1).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1, 2, 3]]);
        assert!(balanced_cubical_partition(3, 5).is_err());
        assert!(balanced_cubical_partition(3, 0).is_err());
    }

    #[test]
    fn balanced_partition_sizes_all() {
        for n in 1..=10 {
            for blocks in 1..=(1usize << (n - 1)) {
                let p = balanced_cubical_partition(n, blocks).unwrap();
                assert!(p.is_covering() && p.is_cubical());
                assert_eq!(p.len(), blocks);
                let k = n - blocks.ilog2() as usize;
                assert_eq!(p.block_sizes().iter().sum::<usize>(), 1 << n);
                for s in p.block_sizes() {
                    assert!(s == 1 << k || s == 1 << (k - 1));
                }
            }
        }
    }

    #[test]
    fn exchangeable_blocks() {
        let p = exchangeable_partition(2).unwrap();
        assert_eq!(p.blocks(), &[vec![0], vec![1, 2], vec![3]]);
        assert!(!p.is_cubical());
        let p = exchangeable_partition(3).unwrap();
        let mut sizes = p.block_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 3, 3]);
        let p = exchangeable_partition(1).unwrap();
        assert!(p.is_cubical());
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn enumeration_small_counts() {
        assert_eq!(enumerate_cubical_partitions(1, 2).unwrap().count(), 2);
        assert_eq!(enumerate_cubical_partitions(2, 2).unwrap().count(), 3);
        let all: Vec<_> = enumerate_cubical_partitions(2, 4).unwrap().collect();
        assert!(all.iter().any(|p| p.len() == 4));
        assert_eq!(all.len(), 8);
        assert!(enumerate_cubical_partitions(7, 2).is_err());
    }

    #[test]
    fn partial_partitions() {
        let p = Partition::from_faces(
            3,
            vec![Face::vertex(3, 0).unwrap(), Face::vertex(3, 7).unwrap()],
        )
        .unwrap();
        assert!(!p.is_covering());
        assert_eq!(p.block_of(7), Some(1));
        assert_eq!(p.block_of(3), None);
        assert!(Partition::from_blocks(2, vec![vec![0, 1], vec![1]]).is_err());
        assert!(Partition::from_blocks(2, vec![vec![]]).is_err());
    }

    #[test]
    fn partition_json_forms() {
        let p = balanced_cubical_partition(3, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("fixed_mask"));
        let back: Partition = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let q: Partition = serde_json::from_str(r#"{"n":2,"blocks":[[0],[1,2],[3]]}"#).unwrap();
        assert!(!q.is_cubical());
        let bad = serde_json::from_str::<Face>(r#"{"n":2,"fixed_mask":1,"fixed_values":2}"#);
        assert!(bad.is_err());
    }
}
