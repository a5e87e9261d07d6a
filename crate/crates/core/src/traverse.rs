//! Walking one refinement forest, or two of them in lockstep.
//!
//! Two meshes over the same macro mesh differ only in how deep each binary
//! tree goes. Visiting both trees simultaneously therefore finds, for every
//! region of the domain, the pair (leaf of one mesh, leaf of the other) that
//! covers it, together with the bisection path connecting the coarser of the
//! two to the finer. That path is all downstream code needs to relate basis
//! functions on the two elements.

use crate::error::{Error, Result};
use crate::mesh::{ElementInfo, Mesh};

/// One bisection step: left or right child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// A bisection path, at most 64 steps, first step in bit 0 (set = right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RefinementSequence {
    bits: u64,
    len: u8,
}

impl RefinementSequence {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The sequence extended by one step; errors once 64 steps are exceeded.
    pub fn appended(&self, side: Side) -> crate::Result<Self> {
        if self.len >= 64 {
            return Err(Error::SequenceOverflow);
        }
        let bit = match side {
            Side::Left => 0u64,
            Side::Right => 1u64,
        };
        Ok(RefinementSequence { bits: self.bits | (bit << self.len), len: self.len + 1 })
    }

    pub fn step(&self, i: usize) -> Side {
        debug_assert!(i < self.len as usize);
        if (self.bits >> i) & 1 == 0 {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Side> + '_ {
        (0..self.len as usize).map(move |i| self.step(i))
    }

    /// Drops `prefix` from the front; `None` if it is not actually a prefix.
    pub fn strip_prefix(&self, prefix: &RefinementSequence) -> Option<Self> {
        if prefix.len > self.len {
            return None;
        }
        let mask = if prefix.len == 64 { u64::MAX } else { (1u64 << prefix.len) - 1 };
        if self.bits & mask != prefix.bits {
            return None;
        }
        Some(RefinementSequence {
            bits: if prefix.len == 64 { 0 } else { self.bits >> prefix.len },
            len: self.len - prefix.len,
        })
    }

    /// Splits off the first step.
    pub fn split_first(&self) -> Option<(Side, RefinementSequence)> {
        if self.len == 0 {
            return None;
        }
        Some((self.step(0), RefinementSequence { bits: self.bits >> 1, len: self.len - 1 }))
    }

    pub fn from_steps(steps: &[Side]) -> crate::Result<Self> {
        let mut s = Self::empty();
        for &st in steps {
            s = s.appended(st)?;
        }
        Ok(s)
    }

    /// Raw (bits, len) pair, used as a memoization key.
    pub fn key(&self) -> (u64, u8) {
        (self.bits, self.len)
    }
}

impl std::fmt::Display for RefinementSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for s in self.iter() {
            f.write_str(if s == Side::Left { "L" } else { "R" })?;
        }
        Ok(())
    }
}

/// Which of the two traversed meshes holds the smaller element of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinerSide {
    /// Both leaves cover the same region.
    Equal,
    /// The first mesh's leaf is the finer one.
    A,
    /// The second mesh's leaf is the finer one.
    B,
}

/// A matched pair from a dual traversal: `small` lives inside `large`, and
/// `sequence` is the bisection path from `large` down to `small` (empty when
/// the two coincide).
#[derive(Debug, Clone)]
pub struct ElementPair {
    pub large: ElementInfo,
    pub small: ElementInfo,
    pub finer: FinerSide,
    pub sequence: RefinementSequence,
}

/// Visits both meshes at once. For every covered region the visitor sees
/// exactly one pair; pairs arrive in canonical leaf order of the finer mesh.
pub fn dual_traverse<F: FnMut(&ElementPair)>(a: &Mesh, b: &Mesh, mut f: F) -> Result<()> {
    if !a.shares_macro_with(b) {
        return Err(Error::MacroMismatch);
    }
    for macro_idx in 0..a.macro_mesh().elements.len() as u32 {
        let ra = a.root_info(macro_idx);
        let rb = b.root_info(macro_idx);
        pair_walk(a, b, &ra, &rb, &mut f)?;
    }
    Ok(())
}

fn pair_walk<F: FnMut(&ElementPair)>(
    a: &Mesh,
    b: &Mesh,
    ia: &ElementInfo,
    ib: &ElementInfo,
    f: &mut F,
) -> Result<()> {
    let ca = a.node_children(ia.id);
    let cb = b.node_children(ib.id);
    match (ca, cb) {
        (None, None) => {
            f(&ElementPair {
                large: ia.clone(),
                small: ib.clone(),
                finer: FinerSide::Equal,
                sequence: RefinementSequence::empty(),
            });
            Ok(())
        }
        (Some(_), None) => descend(a, ia, ib, FinerSide::A, f),
        (None, Some(_)) => descend(b, ib, ia, FinerSide::B, f),
        (Some(_), Some(_)) => {
            let (la, ra_) = children_of(a, ia);
            let (lb, rb_) = children_of(b, ib);
            pair_walk(a, b, &la, &lb, f)?;
            pair_walk(a, b, &ra_, &rb_, f)
        }
    }
}

/// Emits one pair per leaf strictly below `top` in `fine`.
fn descend<F: FnMut(&ElementPair)>(
    fine: &Mesh,
    top: &ElementInfo,
    fixed: &ElementInfo,
    finer: FinerSide,
    f: &mut F,
) -> Result<()> {
    match fine.node_children(top.id) {
        None => {
            let sequence = top
                .sequence
                .strip_prefix(&fixed.sequence)
                .expect("fixed element is an ancestor of the finer leaf");
            f(&ElementPair { large: fixed.clone(), small: top.clone(), finer, sequence });
            Ok(())
        }
        Some(_) => {
            let (l, r) = children_of(fine, top);
            descend(fine, &l, fixed, finer, f)?;
            descend(fine, &r, fixed, finer, f)
        }
    }
}

fn children_of(mesh: &Mesh, info: &ElementInfo) -> (ElementInfo, ElementInfo) {
    let (l, r) = mesh.node_children(info.id).expect("caller checked for children");
    let mid = mesh
        .midpoint(info.vertices[0], info.vertices[1])
        .expect("midpoint of refined edge is registered");
    let li = Mesh::child_info(mesh.dim(), info, Side::Left, mid, l);
    let ri = Mesh::child_info(mesh.dim(), info, Side::Right, mid, r);
    (li, ri)
}
