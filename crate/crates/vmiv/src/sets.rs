//! Subsets of instrument labels, antichains of such subsets, and the
//! compliance groups they induce.
//!
//! A unit's selection behaviour under vector monotonicity is an isotone
//! boolean function of the instrument vector, represented here by the
//! antichain of minimal instrument combinations that switch the unit into
//! treatment. The empty antichain is the never-taker; the antichain `{{}}`
//! (whose only member is the empty set) is the always-taker.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A subset of instrument labels `1..=J`, stored as a bitmask (bit `j-1`
/// set means instrument `j` is in the set). Supports up to 16 instruments.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrumentSet(u16);

impl InstrumentSet {
    pub const MAX_INSTRUMENTS: usize = 16;
    pub const EMPTY: InstrumentSet = InstrumentSet(0);

    pub fn from_mask(mask: u16) -> Self {
        InstrumentSet(mask)
    }

    /// Build from 1-based instrument indices.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut mask = 0u16;
        for &j in indices {
            if j == 0 || j > Self::MAX_INSTRUMENTS {
                return Err(Error::InstrumentIndexOutOfRange(j, Self::MAX_INSTRUMENTS));
            }
            mask |= 1 << (j - 1);
        }
        Ok(InstrumentSet(mask))
    }

    /// The full set `{1..J}`.
    pub fn full(j: usize) -> Self {
        debug_assert!(j <= Self::MAX_INSTRUMENTS);
        InstrumentSet(((1u32 << j) - 1) as u16)
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Membership of 1-based index `j`.
    pub fn contains(self, j: usize) -> bool {
        j >= 1 && j <= Self::MAX_INSTRUMENTS && self.0 & (1 << (j - 1)) != 0
    }

    pub fn is_subset_of(self, other: InstrumentSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: InstrumentSet) -> InstrumentSet {
        InstrumentSet(self.0 | other.0)
    }

    pub fn intersection(self, other: InstrumentSet) -> InstrumentSet {
        InstrumentSet(self.0 & other.0)
    }

    pub fn difference(self, other: InstrumentSet) -> InstrumentSet {
        InstrumentSet(self.0 & !other.0)
    }

    pub fn insert(self, j: usize) -> InstrumentSet {
        debug_assert!(j >= 1 && j <= Self::MAX_INSTRUMENTS);
        InstrumentSet(self.0 | 1 << (j - 1))
    }

    /// True when no bit above position `j` is set.
    pub fn fits(self, j: usize) -> bool {
        usize::from(16 - self.0.leading_zeros() as u16) <= j
    }

    /// Ascending 1-based indices of the members.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (1..=Self::MAX_INSTRUMENTS).filter(move |j| mask & (1 << (j - 1)) != 0)
    }
}

/// Canonical order: by cardinality, then by bitmask value.
impl Ord for InstrumentSet {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.len(), self.0).cmp(&(other.len(), other.0))
    }
}

impl PartialOrd for InstrumentSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for InstrumentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.indices().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for InstrumentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// An antichain of instrument subsets in canonical order: no member contains
/// another, and the sequence is sorted by (cardinality, bitmask) so equality
/// is structural.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpernerFamily {
    sets: Vec<InstrumentSet>,
}

impl SpernerFamily {
    /// Sorts into canonical order and rejects duplicate or nested members.
    pub fn new(mut sets: Vec<InstrumentSet>) -> Result<Self> {
        sets.sort();
        for a in 0..sets.len() {
            for b in 0..sets.len() {
                if a != b && sets[a].is_subset_of(sets[b]) {
                    return Err(Error::NotAntichain(sets[a].to_string(), sets[b].to_string()));
                }
            }
        }
        Ok(SpernerFamily { sets })
    }

    /// Internal constructor for members already known to form a sorted antichain.
    pub(crate) fn from_sorted_unchecked(sets: Vec<InstrumentSet>) -> Self {
        SpernerFamily { sets }
    }

    pub fn sets(&self) -> &[InstrumentSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Selection function: 1 iff some member is contained in the set of
    /// switched-on instruments `z`.
    pub fn selects(&self, z: InstrumentSet) -> bool {
        self.sets.iter().any(|s| s.is_subset_of(z))
    }
}

impl fmt::Display for SpernerFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, s) in self.sets.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for SpernerFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A compliance group: the full map from instrument assignments to treatment
/// status shared by all units in the group.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComplianceGroup {
    /// Units that never take treatment.
    NeverTaker,
    /// Units that take treatment exactly when some member of the family is
    /// fully switched on. The family `{{}}` is the always-taker.
    Responder(SpernerFamily),
}

impl ComplianceGroup {
    pub fn always_taker() -> Self {
        ComplianceGroup::Responder(SpernerFamily::from_sorted_unchecked(vec![InstrumentSet::EMPTY]))
    }

    pub fn is_never_taker(&self) -> bool {
        matches!(self, ComplianceGroup::NeverTaker)
    }

    pub fn is_always_taker(&self) -> bool {
        match self {
            ComplianceGroup::Responder(f) => f.sets() == [InstrumentSet::EMPTY],
            ComplianceGroup::NeverTaker => false,
        }
    }

    /// Generalized complier: varies treatment across instrument assignments.
    pub fn is_generalized_complier(&self) -> bool {
        !self.is_never_taker() && !self.is_always_taker()
    }

    pub fn family(&self) -> Option<&SpernerFamily> {
        match self {
            ComplianceGroup::Responder(f) => Some(f),
            ComplianceGroup::NeverTaker => None,
        }
    }

    /// Treatment status under assignment `z` (the set of instruments at one).
    pub fn selection_value(&self, z: InstrumentSet) -> u8 {
        match self {
            ComplianceGroup::NeverTaker => 0,
            ComplianceGroup::Responder(f) => u8::from(f.selects(z)),
        }
    }
}

impl fmt::Display for ComplianceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComplianceGroup::NeverTaker => write!(f, "{{}}"),
            ComplianceGroup::Responder(fam) => fmt::Display::fmt(fam, f),
        }
    }
}

impl fmt::Debug for ComplianceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
