//! Semiparametric control handling: project outcome, treatment, and the
//! product regressors onto the orthogonal complement of the span of an
//! intercept and the control columns. The downstream ratio on residualized
//! data reproduces the partialled-out estimator exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residualized data after removing the span of `(1, X)`.
#[derive(Clone, Debug)]
pub struct Residualized {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// Control columns dropped as collinear (0-based indices into `x`).
    pub dropped: Vec<usize>,
}

/// With no controls this is the identity. Collinear control columns are
/// dropped rather than fatal.
pub fn partial_out_controls(
    y: &DVector<f64>,
    d: &DVector<f64>,
    gamma: &DMatrix<f64>,
    x: Option<&DMatrix<f64>>,
) -> Result<Residualized> {
    let n = y.len();
    let Some(x) = x.filter(|x| x.ncols() > 0) else {
        return Ok(Residualized { y: y.clone(), d: d.clone(), gamma: gamma.clone(), dropped: vec![] });
    };
    if x.nrows() != n {
        return Err(Error::InvalidData("control rows do not match outcome rows".into()));
    }

    // Orthonormal basis of span(1, X), dropping collinear columns.
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())];
    let mut dropped = Vec::new();
    for c in 0..x.ncols() {
        let mut v: DVector<f64> = x.column(c).into();
        let orig = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= proj * b;
            }
        }
        if v.norm() <= 1e-10 * orig.max(1.0) {
            dropped.push(c);
        } else {
            let norm = v.norm();
            basis.push(v / norm);
        }
    }

    let residualize = |v: &DVector<f64>| -> DVector<f64> {
        let mut r = v.clone();
        for b in &basis {
            let proj = b.dot(&r);
            r -= proj * b;
        }
        r
    };
    let ry = residualize(y);
    let rd = residualize(d);
    let mut rg = gamma.clone();
    for c in 0..gamma.ncols() {
        let col: DVector<f64> = gamma.column(c).into();
        rg.set_column(c, &residualize(&col));
    }
    Ok(Residualized { y: ry, d: rd, gamma: rg, dropped })
}
