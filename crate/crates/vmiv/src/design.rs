//! Instrument encoding and design diagnostics: discretization of ordered
//! instruments into threshold indicators, the product-regressor basis, the
//! indicator-expansion matrix, support and rank reporting, and the
//! propensity-score monotonicity test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::combinatorics::canonical_subsets;
use crate::error::{Error, Result};
use crate::linalg::{column_covariance, ols_robust};
use crate::sets::InstrumentSet;

/// Observed sample: outcome, binary treatment, binary instrument matrix and
/// optional controls. Instruments are oriented so that "1" encourages
/// treatment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub z: DMatrix<f64>,
    pub x: Option<DMatrix<f64>>,
}

fn binary_violations(m: &DMatrix<f64>, col: usize) -> Vec<usize> {
    (0..m.nrows()).filter(|&i| m[(i, col)] != 0.0 && m[(i, col)] != 1.0).take(8).collect()
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        d: DVector<f64>,
        z: DMatrix<f64>,
        x: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("empty sample".into()));
        }
        if d.len() != n || z.nrows() != n {
            return Err(Error::InvalidData("row counts of y, d, z differ".into()));
        }
        if let Some(x) = &x {
            if x.nrows() != n {
                return Err(Error::InvalidData("row counts of y and x differ".into()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("non-finite control value".into()));
            }
        }
        if z.ncols() == 0 || z.ncols() > InstrumentSet::MAX_INSTRUMENTS {
            return Err(Error::InstrumentCountOutOfRange(z.ncols(), 1, InstrumentSet::MAX_INSTRUMENTS));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite outcome value".into()));
        }
        let bad_d: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0 && d[i] != 1.0).take(8).collect();
        if !bad_d.is_empty() {
            return Err(Error::InvalidData(format!("treatment not in {{0,1}} at rows {bad_d:?}")));
        }
        for c in 0..z.ncols() {
            let bad = binary_violations(&z, c);
            if !bad.is_empty() {
                return Err(Error::InvalidData(format!(
                    "instrument column {} not in {{0,1}} at rows {bad:?}",
                    c + 1
                )));
            }
        }
        Ok(Dataset { y, d, z, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn j(&self) -> usize {
        self.z.ncols()
    }

    /// Instrument assignment of row `i` as a set of switched-on indices.
    pub fn z_mask(&self, i: usize) -> InstrumentSet {
        let mut mask = 0u16;
        for j in 0..self.j() {
            if self.z[(i, j)] == 1.0 {
                mask |= 1 << j;
            }
        }
        InstrumentSet::from_mask(mask)
    }
}

/// Provenance of a binary instrument produced by thresholding an ordered
/// source column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub source: String,
    pub threshold: f64,
    pub ascending: bool,
}

/// Threshold-code an ordered instrument into one indicator per cut. With
/// `ascending`, column `m` is `1(value >= cuts[m])`; otherwise `1(value < cuts[m])`
/// so that "1" remains the encouraging direction for a decreasing source.
pub fn discretize_instrument(
    values: &[f64],
    cuts: &[f64],
    ascending: bool,
    source: &str,
) -> Result<(DMatrix<f64>, Vec<SourceInfo>)> {
    if cuts.is_empty() {
        return Err(Error::InvalidData(format!("no cuts given for source {source}")));
    }
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidData(format!("cuts for source {source} must be strictly ascending")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite value in source {source}")));
    }
    let m = DMatrix::from_fn(values.len(), cuts.len(), |i, c| {
        let hit = values[i] >= cuts[c];
        if hit == ascending {
            1.0
        } else {
            0.0
        }
    });
    let info = cuts
        .iter()
        .map(|&t| SourceInfo { source: source.to_string(), threshold: t, ascending })
        .collect();
    Ok((m, info))
}

/// The subset family indexing the product regressors, with provenance of any
/// discretized instruments.
#[derive(Clone, Debug)]
pub struct InstrumentDesign {
    pub j: usize,
    pub family: Vec<InstrumentSet>,
    /// One entry per binary instrument; `None` for natively binary columns.
    pub sources: Vec<Option<SourceInfo>>,
}

impl InstrumentDesign {
    /// Full design: all nonempty subsets of `{1..J}`.
    pub fn full(j: usize) -> Result<Self> {
        if j == 0 || j > InstrumentSet::MAX_INSTRUMENTS {
            return Err(Error::InstrumentCountOutOfRange(j, 1, InstrumentSet::MAX_INSTRUMENTS));
        }
        Ok(InstrumentDesign { j, family: canonical_subsets(j), sources: vec![None; j] })
    }

    /// Design with the default family implied by the source map.
    pub fn with_sources(j: usize, sources: Vec<Option<SourceInfo>>) -> Result<Self> {
        if sources.len() != j {
            return Err(Error::InvalidConfig(format!(
                "source map has {} entries for {} instruments",
                sources.len(),
                j
            )));
        }
        if j == 0 || j > InstrumentSet::MAX_INSTRUMENTS {
            return Err(Error::InstrumentCountOutOfRange(j, 1, InstrumentSet::MAX_INSTRUMENTS));
        }
        let family = default_family(j, &sources);
        Ok(InstrumentDesign { j, family, sources })
    }
}

/// The default subset family: every nonempty subset containing at most one
/// threshold indicator per source. With no sources this is all nonempty
/// subsets.
pub fn default_family(j: usize, sources: &[Option<SourceInfo>]) -> Vec<InstrumentSet> {
    let mut source_masks: Vec<u16> = Vec::new();
    {
        let mut seen: Vec<&str> = Vec::new();
        for (idx, s) in sources.iter().enumerate() {
            if let Some(info) = s {
                match seen.iter().position(|name| *name == info.source) {
                    Some(p) => source_masks[p] |= 1 << idx,
                    None => {
                        seen.push(&info.source);
                        source_masks.push(1 << idx);
                    }
                }
            }
        }
    }
    canonical_subsets(j)
        .into_iter()
        .filter(|s| source_masks.iter().all(|&m| (s.mask() & m).count_ones() <= 1))
        .collect()
}

/// Product regressors: column for `S` is the row-wise product of the
/// instruments in `S`.
pub fn build_gamma(z: &DMatrix<f64>, family: &[InstrumentSet]) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), family.len(), |i, c| {
        family[c].indices().map(|j| z[(i, j - 1)]).product()
    })
}

/// Integer matrix expanding each cell indicator `1(Z=z)` in the product
/// basis: rows indexed by all subsets `S` (including the empty set, first),
/// columns by assignments `z` in bitmask order. Satisfies
/// `(1, Gamma(z)') A = e_z'` for every assignment.
#[derive(Clone, Debug)]
pub struct AMatrix {
    pub j: usize,
    /// Empty set first, then nonempty subsets in canonical order.
    pub rows: Vec<InstrumentSet>,
    entries: Vec<i64>,
}

impl AMatrix {
    pub fn entry(&self, row: usize, z: InstrumentSet) -> i64 {
        self.entries[(row << self.j) + z.mask() as usize]
    }

    /// Column of expansion coefficients for the cell `z`, in row order.
    pub fn column(&self, z: InstrumentSet) -> Vec<i64> {
        (0..self.rows.len()).map(|r| self.entry(r, z)).collect()
    }
}

/// Build the indicator-expansion matrix for `J <= 5` instruments.
pub fn build_a(j: usize) -> Result<AMatrix> {
    if j == 0 || j > 5 {
        return Err(Error::InstrumentCountOutOfRange(j, 1, 5));
    }
    let mut rows = vec![InstrumentSet::EMPTY];
    rows.extend(canonical_subsets(j));
    let cells = 1usize << j;
    let mut entries = vec![0i64; rows.len() * cells];
    for (r, s) in rows.iter().enumerate() {
        for zm in 0..cells as u16 {
            let z1 = zm;
            let z0 = !zm & InstrumentSet::full(j).mask();
            // Sum of (-1)^|f| over f subset of z0 with (z1 union f) = S.
            if z1 & !s.mask() != 0 {
                continue;
            }
            let need = s.mask() & !z1;
            if need & !z0 != 0 {
                continue;
            }
            entries[(r << j) + zm as usize] = if need.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    Ok(AMatrix { j, rows, entries })
}

/// Support and rank diagnostics for a design on a sample.
#[derive(Clone, Debug, Serialize)]
pub struct SupportReport {
    pub j: usize,
    pub n: usize,
    /// One count per assignment, in bitmask order.
    pub cell_counts: Vec<usize>,
    pub occupied_cells: usize,
    pub full_support: bool,
    pub gamma_rank: usize,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
    pub full_rank: bool,
    /// Reduced family suggested when the full design is rank deficient and a
    /// source map is available.
    pub recommended_family: Option<Vec<Vec<usize>>>,
}

/// Cell counts and the rank of the sample covariance of the product
/// regressors. Reports rather than gates: estimation decides separately.
pub fn support_report(data: &Dataset, design: &InstrumentDesign) -> SupportReport {
    let j = design.j;
    let cells = 1usize << j;
    let mut cell_counts = vec![0usize; cells];
    for i in 0..data.n() {
        cell_counts[data.z_mask(i).mask() as usize] += 1;
    }
    let occupied_cells = cell_counts.iter().filter(|&&c| c > 0).count();
    let gamma = build_gamma(&data.z, &design.family);
    let cov = column_covariance(&gamma);
    let svals = cov.svd(false, false).singular_values;
    let max_sv = svals.max();
    let min_sv = svals.min();
    let rank = svals.iter().filter(|&&s| s > 1e-8 * max_sv.max(1e-300)).count();
    let full_rank = rank == design.family.len();
    let has_sources = design.sources.iter().any(Option::is_some);
    let reduced = default_family(j, &design.sources);
    let recommended_family = if !full_rank && has_sources && reduced != design.family {
        Some(reduced.iter().map(|s| s.indices().collect()).collect())
    } else {
        None
    };
    SupportReport {
        j,
        n: data.n(),
        cell_counts,
        occupied_cells,
        full_support: occupied_cells == cells,
        gamma_rank: rank,
        min_singular_value: min_sv,
        max_singular_value: max_sv,
        full_rank,
        recommended_family,
    }
}

/// Fitted propensity per occupied cell, from a regression saturated in the
/// instrument cells and additive-linear in the controls, evaluated at the
/// sample mean of the controls.
#[derive(Clone, Debug, Serialize)]
pub struct PropensityCell {
    pub cell: Vec<usize>,
    pub count: usize,
    pub propensity: f64,
}

/// One per-instrument monotonicity record: the propensity difference from
/// switching instrument `instrument` on, holding the others at `context`.
#[derive(Clone, Debug, Serialize)]
pub struct VmTestRecord {
    pub instrument: usize,
    /// Switched-on members among the other instruments (1-based indices).
    pub context: Vec<usize>,
    pub n_on: usize,
    pub n_off: usize,
    pub delta: Option<f64>,
    pub std_error: Option<f64>,
    pub t_stat: Option<f64>,
}

struct PropensityFit {
    cells: Vec<u16>,
    betas: DVector<f64>,
    vcov: DMatrix<f64>,
    at_mean_shift: f64,
    counts: Vec<usize>,
}

fn fit_saturated_propensity(data: &Dataset) -> Result<PropensityFit> {
    let n = data.n();
    let j = data.j();
    let mut mask_counts = vec![0usize; 1 << j];
    let masks: Vec<u16> = (0..n)
        .map(|i| {
            let m = data.z_mask(i).mask();
            mask_counts[m as usize] += 1;
            m
        })
        .collect();
    let cells: Vec<u16> =
        (0..(1u32 << j) as u16).filter(|&m| mask_counts[m as usize] > 0).collect();
    let pos_of = |m: u16| cells.binary_search(&m).expect("occupied cell");
    let k_x = data.x.as_ref().map_or(0, |x| x.ncols());
    let mut w = DMatrix::zeros(n, cells.len() + k_x);
    for i in 0..n {
        w[(i, pos_of(masks[i]))] = 1.0;
    }
    if let Some(x) = &data.x {
        for c in 0..k_x {
            for i in 0..n {
                w[(i, cells.len() + c)] = x[(i, c)];
            }
        }
    }
    let (betas, vcov) = ols_robust(&w, &data.d)?;
    let at_mean_shift = if let Some(x) = &data.x {
        let xbar = x.row_mean();
        (0..k_x).map(|c| xbar[c] * betas[cells.len() + c]).sum()
    } else {
        0.0
    };
    let counts = cells.iter().map(|&m| mask_counts[m as usize]).collect();
    Ok(PropensityFit { cells, betas, vcov, at_mean_shift, counts })
}

/// Propensity levels per occupied cell at the control mean.
pub fn fitted_propensity(data: &Dataset) -> Result<Vec<PropensityCell>> {
    let fit = fit_saturated_propensity(data)?;
    Ok(fit
        .cells
        .iter()
        .enumerate()
        .map(|(p, &m)| PropensityCell {
            cell: InstrumentSet::from_mask(m).indices().collect(),
            count: fit.counts[p],
            propensity: fit.betas[p] + fit.at_mean_shift,
        })
        .collect())
}

/// Per-instrument, per-context propensity differences with robust standard
/// errors. One record per `(instrument, context)` pair with at least one of
/// the two cells realized; the difference is reported only when both are.
pub fn vm_propensity_test(data: &Dataset) -> Result<Vec<VmTestRecord>> {
    let j = data.j();
    let fit = fit_saturated_propensity(data)?;
    let pos_of = |m: u16| fit.cells.binary_search(&m).ok();
    let mut records = Vec::new();
    for instrument in 1..=j {
        let bit = 1u16 << (instrument - 1);
        for ctx in 0..(1u32 << (j - 1)) as u16 {
            // Spread the j-1 context bits around the tested instrument.
            let low = ctx & (bit - 1);
            let high = (ctx & !(bit - 1)) << 1;
            let off_mask = low | high;
            let on_mask = off_mask | bit;
            let on = pos_of(on_mask);
            let off = pos_of(off_mask);
            if on.is_none() && off.is_none() {
                continue;
            }
            let n_on = on.map_or(0, |p| fit.counts[p]);
            let n_off = off.map_or(0, |p| fit.counts[p]);
            let (delta, std_error, t_stat) = match (on, off) {
                (Some(a), Some(b)) => {
                    let d = fit.betas[a] - fit.betas[b];
                    let var = fit.vcov[(a, a)] + fit.vcov[(b, b)] - 2.0 * fit.vcov[(a, b)];
                    let se = var.max(0.0).sqrt();
                    let t = if se > 0.0 { d / se } else { f64::INFINITY * d.signum() };
                    (Some(d), Some(se), Some(t))
                }
                _ => (None, None, None),
            };
            records.push(VmTestRecord {
                instrument,
                context: InstrumentSet::from_mask(off_mask).indices().collect(),
                n_on,
                n_off,
                delta,
                std_error,
                t_stat,
            });
        }
    }
    Ok(records)
}

/// Flip instrument columns whose marginal propensity difference is negative.
/// Returns the flipped column indices (1-based).
pub fn auto_orient_instruments(data: &mut Dataset) -> Vec<usize> {
    let n = data.n();
    let mut flipped = Vec::new();
    for j in 0..data.j() {
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            if data.z[(i, j)] == 1.0 {
                s1 += data.d[i];
                n1 += 1;
            } else {
                s0 += data.d[i];
                n0 += 1;
            }
        }
        if n1 > 0 && n0 > 0 && s1 / (n1 as f64) - s0 / (n0 as f64) < 0.0 {
            for i in 0..n {
                data.z[(i, j)] = 1.0 - data.z[(i, j)];
            }
            flipped.push(j + 1);
        }
    }
    flipped
}

/// Propensity levels of the four cells with two instruments, `p[z1][z2]`.
#[derive(Clone, Copy, Debug)]
pub struct PropensityTable2 {
    pub p00: f64,
    pub p10: f64,
    pub p01: f64,
    pub p11: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Point-identified and interval-identified compliance-group shares with two
/// binary instruments.
#[derive(Clone, Debug, Serialize)]
pub struct TwoInstrumentBounds {
    pub p_always: f64,
    pub p_never: f64,
    pub eager: Interval,
    pub reluctant: Interval,
    pub z1_compliers: Interval,
    pub z2_compliers: Interval,
}

/// Group-share identification from the propensity table: the always- and
/// never-taker shares are points, the four complier shares are intervals cut
/// out by the identified linear combinations and nonnegativity.
pub fn two_instrument_group_bounds(p: &PropensityTable2) -> Result<TwoInstrumentBounds> {
    for v in [p.p00, p.p10, p.p01, p.p11] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidData(format!("propensity {v} outside [0,1]")));
        }
    }
    let d10 = p.p10 - p.p00; // z1 + eager
    let d01 = p.p01 - p.p00; // z2 + eager
    let e10 = p.p11 - p.p01; // z1 + reluctant
    let e01 = p.p11 - p.p10; // z2 + reluctant
    let tol = 1e-9;
    if d10 < -tol || d01 < -tol || e10 < -tol || e01 < -tol {
        return Err(Error::InvalidData(
            "propensity table is not component-wise monotone".into(),
        ));
    }
    let (d10, d01, e10, _e01) = (d10.max(0.0), d01.max(0.0), e10.max(0.0), e01.max(0.0));
    let t_lo = (d10 - e10).max(0.0);
    let t_hi = d10.min(d01);
    Ok(TwoInstrumentBounds {
        p_always: p.p00,
        p_never: 1.0 - p.p11,
        eager: Interval { lo: t_lo, hi: t_hi },
        z1_compliers: Interval { lo: d10 - t_hi, hi: d10 - t_lo },
        z2_compliers: Interval { lo: d01 - t_hi, hi: d01 - t_lo },
        reluctant: Interval { lo: t_lo - (d10 - e10), hi: t_hi - (d10 - e10) },
    })
}
