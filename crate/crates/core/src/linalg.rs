//! Dense linear-algebra helpers. Singular value decompositions go through faer;
//! nalgebra's own SVD loses accuracy on rank-deficient Laplacians.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result, Vector};

/// Relative singular-value cutoff used by [`pseudoinverse`].
pub const PINV_RTOL: f64 = 1e-10;

/// Moore–Penrose pseudoinverse. Singular values below `PINV_RTOL * sigma_max`
/// are treated as zero.
pub fn pseudoinverse(m: &Matrix) -> Result<Matrix> {
    pseudoinverse_truncated(m, usize::MAX)
}

/// Pseudoinverse keeping at most `max_rank` of the leading singular values
/// (and never one below the relative cutoff). This is the pseudoinverse of the
/// best rank-`max_rank` approximation of `m`.
pub fn pseudoinverse_truncated(m: &Matrix, max_rank: usize) -> Result<Matrix> {
    Ok(TruncatedSvd::new(m, max_rank)?.pseudoinverse())
}

/// Thin SVD restricted to the retained singular triplets.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Left singular vectors, one column per retained value.
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// Right singular vectors, one column per retained value.
    pub v: Matrix,
}

impl TruncatedSvd {
    pub fn new(m: &Matrix, max_rank: usize) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("matrix has non-finite entries"));
        }
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Ok(Self { u: Matrix::zeros(rows, 0), sigma: Vec::new(), v: Matrix::zeros(cols, 0) });
        }
        let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
        let svd = fm.thin_svd().map_err(|e| Error::Numeric(format!("SVD failed: {e:?}")))?;
        let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
        let k = fs.nrows();
        let values: Vec<f64> = (0..k).map(|i| fs[i]).collect();
        let u = Matrix::from_fn(rows, k, |i, j| fu[(i, j)]);
        let v = Matrix::from_fn(cols, k, |i, j| fv[(i, j)]);

        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let sigma_max = order.first().map_or(0.0, |&i| values[i]);
        let cutoff = PINV_RTOL * sigma_max;
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&i| values[i] > cutoff && values[i] > 0.0)
            .take(max_rank)
            .collect();

        let mut uk = Matrix::zeros(rows, keep.len());
        let mut vk = Matrix::zeros(cols, keep.len());
        let mut sigma = Vec::with_capacity(keep.len());
        for (j, &i) in keep.iter().enumerate() {
            uk.set_column(j, &u.column(i));
            vk.set_column(j, &v.column(i));
            sigma.push(values[i]);
        }
        Ok(Self { u: uk, sigma, v: vk })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `V diag(1/sigma) U^T`.
    pub fn pseudoinverse(&self) -> Matrix {
        let mut vs = self.v.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            vs.column_mut(j).scale_mut(1.0 / s);
        }
        vs * self.u.transpose()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Minimum-norm least-squares solution of `a x = b`; also returns the numerical
/// rank of `a`.
pub fn lstsq(a: &Matrix, b: &Vector) -> Result<(Vector, usize)> {
    let svd = TruncatedSvd::new(a, usize::MAX)?;
    let x = svd.pseudoinverse() * b;
    Ok((x, svd.rank()))
}

pub(crate) fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}
