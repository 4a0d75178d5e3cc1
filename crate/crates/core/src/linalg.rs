//! Randomized truncated SVD of a sparse matrix.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::SparseMatrix;
use crate::nmf::{wt_x, x_ht};

const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 3;

pub(crate) struct TruncatedSvd {
    /// rows × k
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    /// k × cols
    pub vt: Array2<f64>,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

fn to_nd(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

/// Orthonormal basis for the columns of a tall matrix.
fn orth(a: &Array2<f64>) -> Array2<f64> {
    to_nd(&to_na(a).qr().q())
}

/// Top-`k` singular triplets, descending. Exact when `k + 10` reaches the
/// smaller dimension.
pub(crate) fn randomized_svd(x: &SparseMatrix, k: usize, seed: u64) -> TruncatedSvd {
    let l = (k + OVERSAMPLE).min(x.rows().min(x.cols()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_simple_fn((l, x.cols()), || rng.gen_range(-1.0..1.0));
    let mut q = orth(&x_ht(x, &omega));
    for _ in 0..POWER_ITERS {
        let z = orth(&wt_x(x, &q).t().to_owned());
        q = orth(&x_ht(x, &z.t().to_owned()));
    }
    let b = wt_x(x, &q);
    let mut svd = to_na(&b).svd(true, true);
    svd.sort_by_singular_values();
    let ub = to_nd(svd.u.as_ref().expect("u requested"));
    let vt = to_nd(svd.v_t.as_ref().expect("v_t requested"));
    let u = q.dot(&ub);
    let k = k.min(svd.singular_values.len());
    TruncatedSvd {
        u: u.slice(ndarray::s![.., ..k]).to_owned(),
        s: svd.singular_values.iter().take(k).copied().collect(),
        vt: vt.slice(ndarray::s![..k, ..]).to_owned(),
    }
}
