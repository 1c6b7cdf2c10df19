//! Enumeration of compliance groups and the linear structure among their
//! selection functions.
//!
//! The number of compliance groups on `J` binary instruments is the Dedekind
//! number `Ded_J` (isotone boolean functions). Selection functions of the
//! `Ded_J - 2` generalized compliers are linear combinations of the `2^J - 1`
//! simple product functions; the integer matrix of coefficients is built and
//! verified here, together with the consistency condition it imposes on
//! complier weight tables and the constructive decomposition of admissible
//! weights into nested instrument transitions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sets::{ComplianceGroup, InstrumentSet, SpernerFamily};

/// Dedekind numbers indexed by the number of instruments (entry 0 is the
/// degenerate two-constant case).
pub const DEDEKIND: [u64; 7] = [2, 3, 6, 20, 168, 7581, 7_828_354];

/// Largest `J` for which groups are materialized in memory.
pub const MAX_ENUMERATE: usize = 5;
/// Largest `J` supported by the streaming count.
pub const MAX_COUNT: usize = 6;

/// Nonempty subsets of `{1..J}` in canonical (cardinality, bitmask) order.
pub fn canonical_subsets(j: usize) -> Vec<InstrumentSet> {
    let mut subsets: Vec<InstrumentSet> =
        (1..(1u32 << j)).map(|m| InstrumentSet::from_mask(m as u16)).collect();
    subsets.sort();
    subsets
}

/// All assignments `z` in bitmask order `0..2^J`.
pub fn assignments(j: usize) -> impl Iterator<Item = InstrumentSet> {
    (0..(1u32 << j)).map(|m| InstrumentSet::from_mask(m as u16))
}

struct AntichainDfs {
    /// Subsets of `{1..J}` (including the empty set) in canonical order.
    order: Vec<InstrumentSet>,
    /// `comparable[i]` has bit `k` set when `order[i]` and `order[k]` are
    /// comparable (one contains the other).
    comparable: Vec<u64>,
}

impl AntichainDfs {
    fn new(j: usize) -> Self {
        let mut order: Vec<InstrumentSet> =
            (0..(1u32 << j)).map(|m| InstrumentSet::from_mask(m as u16)).collect();
        order.sort();
        let n = order.len();
        let mut comparable = vec![0u64; n];
        for a in 0..n {
            for b in 0..n {
                if order[a].is_subset_of(order[b]) || order[b].is_subset_of(order[a]) {
                    comparable[a] |= 1 << b;
                }
            }
        }
        AntichainDfs { order, comparable }
    }

    fn count(&self) -> u64 {
        let all = if self.order.len() == 64 { u64::MAX } else { (1u64 << self.order.len()) - 1 };
        self.count_from(all)
    }

    fn count_from(&self, allowed: u64) -> u64 {
        let mut total = 1;
        let mut rest = allowed;
        while rest != 0 {
            let pos = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            // Members are added in ascending canonical position, so restrict
            // continuations to strictly higher positions.
            let above = if pos + 1 >= 64 { 0 } else { u64::MAX << (pos + 1) };
            total += self.count_from(allowed & !self.comparable[pos] & above);
        }
        total
    }

    fn enumerate(&self) -> Vec<Vec<InstrumentSet>> {
        let all = (1u64 << self.order.len()) - 1;
        let mut out = Vec::new();
        let mut current = Vec::new();
        self.enumerate_from(all, &mut current, &mut out);
        out
    }

    fn enumerate_from(
        &self,
        allowed: u64,
        current: &mut Vec<InstrumentSet>,
        out: &mut Vec<Vec<InstrumentSet>>,
    ) {
        out.push(current.clone());
        let mut rest = allowed;
        while rest != 0 {
            let pos = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let above = if pos + 1 >= 64 { 0 } else { u64::MAX << (pos + 1) };
            current.push(self.order[pos]);
            self.enumerate_from(allowed & !self.comparable[pos] & above, current, out);
            current.pop();
        }
    }
}

fn check_j(j: usize, max: usize) -> Result<()> {
    if j < 1 || j > max {
        return Err(Error::InstrumentCountOutOfRange(j, 1, max));
    }
    Ok(())
}

/// All compliance groups on `J` binary instruments, in a deterministic
/// canonical order (lexicographic over the canonical subset order). The
/// count equals the Dedekind number `Ded_J`.
pub fn enumerate_compliance_groups(j: usize) -> Result<Vec<ComplianceGroup>> {
    check_j(j, MAX_ENUMERATE)?;
    let dfs = AntichainDfs::new(j);
    let groups = dfs
        .enumerate()
        .into_iter()
        .map(|sets| {
            if sets.is_empty() {
                ComplianceGroup::NeverTaker
            } else {
                ComplianceGroup::Responder(SpernerFamily::from_sorted_unchecked(sets))
            }
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(groups.len() as u64, DEDEKIND[j]);
    Ok(groups)
}

/// Streaming count of compliance groups, without materializing them.
pub fn count_compliance_groups(j: usize) -> Result<u64> {
    check_j(j, MAX_COUNT)?;
    Ok(AntichainDfs::new(j).count())
}

/// Integer matrix expressing every generalized complier's selection function
/// as a signed combination of simple product functions. Rows are indexed by
/// the complier families in canonical order, columns by the nonempty subsets
/// in canonical order; dimensions `(Ded_J - 2) x (2^J - 1)`.
#[derive(Clone, Debug)]
pub struct MjMatrix {
    j: usize,
    rows: Vec<SpernerFamily>,
    cols: Vec<InstrumentSet>,
    entries: Vec<i64>,
}

impl MjMatrix {
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[SpernerFamily] {
        &self.rows
    }

    pub fn cols(&self) -> &[InstrumentSet] {
        &self.cols
    }

    pub fn entry(&self, row: usize, col: usize) -> i64 {
        self.entries[row * self.cols.len() + col]
    }

    pub fn row(&self, row: usize) -> &[i64] {
        let k = self.cols.len();
        &self.entries[row * k..(row + 1) * k]
    }

    /// Row index of a complier family, if present.
    pub fn row_of(&self, family: &SpernerFamily) -> Option<usize> {
        self.rows.binary_search(family).ok()
    }
}

/// Coefficient of the simple group `g(S')` in the expansion of `g(F)`:
/// the signed count of nonempty subfamilies of `F` whose union is `S'`.
fn expansion_row(family: &SpernerFamily, cols: &[InstrumentSet]) -> Vec<i64> {
    let sets = family.sets();
    let mut row = vec![0i64; cols.len()];
    let col_of = |s: InstrumentSet| cols.binary_search(&s).expect("union of family members");
    for pick in 1u32..(1 << sets.len()) {
        let mut union = InstrumentSet::EMPTY;
        for (i, s) in sets.iter().enumerate() {
            if pick & (1 << i) != 0 {
                union = union.union(*s);
            }
        }
        let sign = if pick.count_ones() % 2 == 1 { 1 } else { -1 };
        row[col_of(union)] += sign;
    }
    row
}

/// Build the linear-dependency matrix for `J` instruments.
pub fn build_mj(j: usize) -> Result<MjMatrix> {
    check_j(j, MAX_ENUMERATE)?;
    let cols = canonical_subsets(j);
    let rows: Vec<SpernerFamily> = enumerate_compliance_groups(j)?
        .into_iter()
        .filter(|g| g.is_generalized_complier())
        .map(|g| g.family().expect("complier has a family").clone())
        .collect();
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for family in &rows {
        entries.extend(expansion_row(family, &cols));
    }
    Ok(MjMatrix { j, rows, cols, entries })
}

/// Exhaustively check the expansion identity `D_{g(F)}(z) = sum_S M[F,S] D_{g(S)}(z)`
/// over every complier family and every assignment.
pub fn verify_mj(j: usize) -> Result<bool> {
    check_j(j, 4)?;
    let mj = build_mj(j)?;
    for (r, family) in mj.rows().iter().enumerate() {
        for z in assignments(j) {
            let lhs = i64::from(family.selects(z));
            let rhs: i64 = mj
                .cols()
                .iter()
                .zip(mj.row(r))
                .map(|(s, &coef)| coef * i64::from(s.is_subset_of(z)))
                .sum();
            if lhs != rhs {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A binary weight table `c(g, z)` over all compliance groups and all
/// assignments, groups in canonical enumeration order.
#[derive(Clone, Debug)]
pub struct WeightTable {
    j: usize,
    groups: Vec<ComplianceGroup>,
    /// Row-major `[group][z]` with `z` in bitmask order.
    values: Vec<u8>,
}

impl WeightTable {
    pub fn from_fn<F>(j: usize, f: F) -> Result<Self>
    where
        F: Fn(&ComplianceGroup, InstrumentSet) -> bool,
    {
        check_j(j, MAX_ENUMERATE)?;
        let groups = enumerate_compliance_groups(j)?;
        let cells = 1usize << j;
        let mut values = Vec::with_capacity(groups.len() * cells);
        for g in &groups {
            for z in assignments(j) {
                values.push(u8::from(f(g, z)));
            }
        }
        Ok(WeightTable { j, groups, values })
    }

    /// Build from raw values laid out `[group][z]`, groups in canonical order.
    pub fn from_values(j: usize, values: Vec<u8>) -> Result<Self> {
        check_j(j, MAX_ENUMERATE)?;
        let groups = enumerate_compliance_groups(j)?;
        let expected = groups.len() << j;
        if values.len() != expected {
            return Err(Error::IncompleteTable { got: values.len(), expected });
        }
        if let Some(&bad) = values.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryWeight(i64::from(bad)));
        }
        Ok(WeightTable { j, groups, values })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn groups(&self) -> &[ComplianceGroup] {
        &self.groups
    }

    pub fn value(&self, group_idx: usize, z: InstrumentSet) -> u8 {
        self.values[(group_idx << self.j) + z.mask() as usize]
    }

    /// Value at the simple group whose family is `{S}`.
    fn simple_value(&self, s: InstrumentSet, z: InstrumentSet) -> u8 {
        let family = SpernerFamily::from_sorted_unchecked(vec![s]);
        let group = ComplianceGroup::Responder(family);
        let idx = self.groups.binary_search(&group).expect("simple group enumerated");
        self.value(idx, z)
    }
}

/// One failed consistency condition reported by [`check_property_m`].
#[derive(Clone, Debug)]
pub struct PropertyMViolation {
    pub group: ComplianceGroup,
    pub z: InstrumentSet,
    pub expected: i64,
    pub actual: i64,
}

/// Outcome of the weight consistency check: zero weight on always- and
/// never-takers, and every complier row equal to its signed combination of
/// simple rows.
#[derive(Clone, Debug)]
pub struct PropertyMReport {
    pub holds: bool,
    pub violations: Vec<PropertyMViolation>,
}

/// Check whether `c(g, z)` is an admissible complier weight function.
pub fn check_property_m(table: &WeightTable) -> Result<PropertyMReport> {
    let j = table.j();
    let mj = build_mj(j)?;
    let mut violations = Vec::new();
    for (gi, group) in table.groups().iter().enumerate() {
        if group.is_generalized_complier() {
            continue;
        }
        for z in assignments(j) {
            let actual = i64::from(table.value(gi, z));
            if actual != 0 {
                violations.push(PropertyMViolation { group: group.clone(), z, expected: 0, actual });
            }
        }
    }
    for (gi, group) in table.groups().iter().enumerate() {
        let Some(family) = group.family().filter(|_| group.is_generalized_complier()) else {
            continue;
        };
        let row = mj.row_of(family).expect("complier family present in matrix");
        for z in assignments(j) {
            let expected: i64 = mj
                .cols()
                .iter()
                .zip(mj.row(row))
                .map(|(s, &coef)| coef * i64::from(table.simple_value(*s, z)))
                .sum();
            let actual = i64::from(table.value(gi, z));
            if expected != actual {
                violations.push(PropertyMViolation { group: group.clone(), z, expected, actual });
            }
        }
    }
    Ok(PropertyMReport { holds: violations.is_empty(), violations })
}

/// One nested instrument transition `lower -> upper` in the decomposition of
/// an admissible weight function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainStep {
    pub upper: InstrumentSet,
    pub lower: InstrumentSet,
}

/// Decompose an admissible weight function at a fixed assignment `z` into a
/// telescoping sum of selection-function differences along a nested sequence
/// of assignments: `c(g, z) = sum_k { D_g(upper_k) - D_g(lower_k) }` with
/// `upper_1 >= lower_1 >= upper_2 >= ...` component-wise.
///
/// Errors when the weights fail the consistency condition at `z`.
pub fn sperner_chain_decomposition(table: &WeightTable, z: InstrumentSet) -> Result<Vec<ChainStep>> {
    let j = table.j();
    if !z.fits(j) {
        return Err(Error::InstrumentIndexOutOfRange(z.mask() as usize, j));
    }

    // Weights must vanish on the two constant groups at this assignment.
    for (gi, group) in table.groups().iter().enumerate() {
        if !group.is_generalized_complier() && table.value(gi, z) != 0 {
            return Err(Error::PropertyMViolated {
                z: z.to_string(),
                detail: format!("nonzero weight on {group}"),
            });
        }
    }

    let subsets = canonical_subsets(j);
    let on = |s: InstrumentSet| table.simple_value(s, z) == 1;

    // Alternating unions: start from the union of all unit-weight subsets,
    // then repeatedly take the union of strict subsets on the other side.
    // Each term must land back on its own side (the unit-weight family and
    // its complement are union-closed under admissible weights).
    let mut chain: Vec<InstrumentSet> = Vec::new();
    let mut current =
        subsets.iter().copied().filter(|&s| on(s)).fold(InstrumentSet::EMPTY, |a, s| a.union(s));
    let mut expect_on = true;
    while !current.is_empty() {
        if on(current) != expect_on {
            return Err(Error::PropertyMViolated {
                z: z.to_string(),
                detail: format!("unit-weight subsets are not union-closed at {current}"),
            });
        }
        chain.push(current);
        current = subsets
            .iter()
            .copied()
            .filter(|&s| s.is_subset_of(current) && s != current && on(s) != expect_on)
            .fold(InstrumentSet::EMPTY, |a, s| a.union(s));
        expect_on = !expect_on;
    }

    let mut steps = Vec::new();
    let mut iter = chain.into_iter();
    while let Some(upper) = iter.next() {
        let lower = iter.next().unwrap_or(InstrumentSet::EMPTY);
        steps.push(ChainStep { upper, lower });
    }

    // The telescoped differences must reproduce the table at z for every group.
    for (gi, group) in table.groups().iter().enumerate() {
        let total: i64 = steps
            .iter()
            .map(|s| {
                i64::from(group.selection_value(s.upper)) - i64::from(group.selection_value(s.lower))
            })
            .sum();
        if total != i64::from(table.value(gi, z)) {
            return Err(Error::PropertyMViolated {
                z: z.to_string(),
                detail: format!(
                    "decomposition reproduces {total} instead of {} for {group}",
                    table.value(gi, z)
                ),
            });
        }
    }
    Ok(steps)
}

/// Orthogonal projection of `v` onto the row space of `b`, and whether `v`
/// already lies in that row space (within 1e-9 on the max component).
pub fn rowspace_projection_check(
    b: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, bool)> {
    if b.ncols() != v.len() {
        return Err(Error::InvalidData(format!(
            "vector length {} does not match matrix width {}",
            v.len(),
            b.ncols()
        )));
    }
    let svals = b.clone().svd(false, false).singular_values;
    let max_sv = svals.max();
    let rank = svals.iter().filter(|&&s| s > 1e-12 * max_sv.max(1e-300)).count();
    if rank < b.nrows() {
        return Err(Error::RankDeficient { rank, rows: b.nrows() });
    }
    let gram = b * b.transpose();
    let chol = gram.cholesky().ok_or(Error::RankDeficient { rank, rows: b.nrows() })?;
    let coeffs = chol.solve(&(b * v));
    let projection = b.transpose() * coeffs;
    let in_rowspace = (&projection - v).amax() <= 1e-9;
    Ok((projection, in_rowspace))
}
