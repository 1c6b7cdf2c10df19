//! Complier weight functions for the built-in estimands and the target
//! vectors they induce on the simple compliance groups.
//!
//! Each built-in estimand is defined by a weight function `c(g, z)` over
//! compliance groups and instrument assignments. The estimator only needs
//! the vector `lambda_S = E[c(g(S), Z)]` over the subset family, estimated
//! by the sample mean of `c(g(S), Z_i)`.

use nalgebra::{DMatrix, DVector};

use crate::combinatorics::WeightTable;
use crate::design::Dataset;
use crate::error::{Error, Result};
use crate::sets::{ComplianceGroup, InstrumentSet};

use super::EstimandKind;

/// Weight `c(g, z)` of a compliance group at an assignment, for a built-in
/// estimand. Selection-function arithmetic keeps the value in `{0, 1}`.
pub fn group_weight(kind: &EstimandKind, group: &ComplianceGroup, z: InstrumentSet) -> Result<f64> {
    let sel = |at: InstrumentSet| f64::from(group.selection_value(at));
    Ok(match kind {
        EstimandKind::Acl => f64::from(group.is_generalized_complier()),
        EstimandKind::Slate(js) => sel(z.union(*js)) - sel(z.difference(*js)),
        EstimandKind::Slatt(js) => sel(z) * (sel(z.union(*js)) - sel(z.difference(*js))),
        EstimandKind::Slatu(js) => (1.0 - sel(z)) * (sel(z.union(*js)) - sel(z.difference(*js))),
        EstimandKind::Pte { instrument, context } => {
            sel(context.insert(*instrument)) - sel(*context)
        }
        EstimandKind::CustomLambda(_) => {
            return Err(Error::InvalidEstimand(
                "custom weight vectors have no group weight function".into(),
            ))
        }
    })
}

/// `c(g(S), z)` at the simple group whose family is `{S}`.
pub fn simple_weight(kind: &EstimandKind, s: InstrumentSet, z: InstrumentSet) -> Result<f64> {
    let group = ComplianceGroup::Responder(crate::sets::SpernerFamily::new(vec![s])?);
    group_weight(kind, &group, z)
}

/// The full weight table of a built-in estimand over all compliance groups,
/// for consistency checks and exact oracles (`J <= 5`).
pub fn weight_table_for(kind: &EstimandKind, j: usize) -> Result<WeightTable> {
    kind.validate(j)?;
    if matches!(kind, EstimandKind::CustomLambda(_)) {
        return Err(Error::InvalidEstimand("custom weight vectors have no weight table".into()));
    }
    WeightTable::from_fn(j, |g, z| {
        group_weight(kind, g, z).expect("built-in estimand") != 0.0
    })
}

/// Per-observation simple-group weights `c(g(S_l), Z_i)`, one column per
/// family member. `None` for custom weight vectors (treated as nonrandom).
pub fn weight_observations(
    kind: &EstimandKind,
    data: &Dataset,
    family: &[InstrumentSet],
) -> Result<Option<DMatrix<f64>>> {
    if matches!(kind, EstimandKind::CustomLambda(_)) {
        return Ok(None);
    }
    let n = data.n();
    let masks: Vec<InstrumentSet> = (0..n).map(|i| data.z_mask(i)).collect();
    let mut m = DMatrix::zeros(n, family.len());
    for (l, s) in family.iter().enumerate() {
        for i in 0..n {
            m[(i, l)] = simple_weight(kind, *s, masks[i])?;
        }
    }
    Ok(Some(m))
}

/// Target vector over the family: sample means of the simple-group weights,
/// or the custom vector itself.
pub fn lambda_for(
    kind: &EstimandKind,
    data: &Dataset,
    family: &[InstrumentSet],
) -> Result<DVector<f64>> {
    kind.validate(data.j())?;
    if let EstimandKind::CustomLambda(v) = kind {
        if v.len() != family.len() {
            return Err(Error::InvalidEstimand(format!(
                "custom weight vector has {} entries for a family of {}",
                v.len(),
                family.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidEstimand("non-finite custom weight".into()));
        }
        return Ok(DVector::from_vec(v.clone()));
    }
    let obs = weight_observations(kind, data, family)?.expect("built-in estimand");
    let means = obs.row_mean();
    Ok(DVector::from_fn(family.len(), |l, _| means[l]))
}
