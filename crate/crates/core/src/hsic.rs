//! Dependence measures: the linear independence metric and the biased HSIC
//! estimator, either from kernel matrices or from explicit feature maps.

use serde::{Deserialize, Serialize};

use crate::kernels::FeatureMatrix;
use crate::linalg::{at_b, center_columns, double_center, frobenius_sq};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    ExactKernel,
    FeatureMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicReading {
    pub value: f64,
    pub estimator: Estimator,
    pub n: usize,
}

fn same_n(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SampleCountMismatch { left: a, right: b })
    }
}

/// Squared Frobenius norm of the empirical cross-covariance `(1/n)(HY)ᵀ(HX)`.
pub fn lim(x: &Matrix, y: &Matrix) -> Result<f64> {
    same_n(x.nrows(), y.nrows())?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let c = at_b(&center_columns(y), &center_columns(x)) / n as f64;
    Ok(frobenius_sq(&c))
}

/// Biased HSIC `(1/n²)·tr(K H L H)` from kernel matrices.
pub fn hsic_exact(k: &Matrix, l: &Matrix) -> Result<HsicReading> {
    if !k.is_square() || !l.is_square() {
        return Err(Error::ShapeMismatch("kernel matrices must be square".into()));
    }
    same_n(k.nrows(), l.nrows())?;
    let n = k.nrows();
    let kc = double_center(k);
    let lc = double_center(l);
    let sum: f64 = kc.iter().zip(lc.iter()).map(|(a, b)| a * b).sum();
    Ok(HsicReading {
        value: sum / (n * n).max(1) as f64,
        estimator: Estimator::ExactKernel,
        n,
    })
}

/// Biased HSIC as `‖(1/n)(HΦy)ᵀ(HΦx)‖²_F`; never forms an n×n matrix.
pub fn hsic_feature(phi_x: &FeatureMatrix, phi_y: &FeatureMatrix) -> Result<HsicReading> {
    same_n(phi_x.nrows(), phi_y.nrows())?;
    let n = phi_x.nrows();
    let cx = phi_x.centered();
    // One centered side suffices: (HΦy)ᵀ(HΦx) = (HΦy)ᵀΦx.
    let c = at_b(&phi_y.centered().data, &cx.data) / n.max(1) as f64;
    Ok(HsicReading {
        value: frobenius_sq(&c),
        estimator: Estimator::FeatureMap,
        n,
    })
}
