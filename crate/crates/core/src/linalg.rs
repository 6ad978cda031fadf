//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative symmetry tolerance: `1e-12` for `f64`, loosened for narrower types.
pub fn symmetry_tol<T: Real>() -> T {
    let floor = T::of(1e-12);
    let eps_based = T::default_epsilon() * T::of(100.0);
    if eps_based > floor {
        eps_based
    } else {
        floor
    }
}

/// Max-norm asymmetry relative to the max-norm of the matrix itself.
pub fn relative_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let mut asym = T::zero();
    let mut scale = T::zero();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let a = m[(i, j)].abs();
            if a > scale {
                scale = a;
            }
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > asym {
                asym = d;
            }
        }
    }
    if scale > T::zero() {
        asym / scale
    } else {
        T::zero()
    }
}

/// `(M + Mᵀ)/2`, scrubbing round-off from operations that are symmetric in
/// exact arithmetic.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::of(0.5);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)]) * half)
}

/// Symmetric eigendecomposition, with a finiteness guard so callers get an
/// `Error::NonFinite` instead of garbage eigenvectors.
pub fn sym_eigen<T: Real>(m: &DMatrix<T>) -> Result<(Vec<T>, DMatrix<T>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(
            "symmetric eigendecomposition input".into(),
        ));
    }
    let eig = symmetrize(m).symmetric_eigen();
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// Applies a spectral function `f` to a symmetric matrix through its
/// eigendecomposition. Eigenvalues are clamped below at `1e-14 * λ_max`
/// before `f` when `clamp` is set, which keeps square roots and logarithms
/// of nearly singular SPD matrices finite.
pub fn sym_matrix_fn<T: Real>(
    m: &DMatrix<T>,
    clamp: bool,
    f: impl Fn(T) -> T,
) -> Result<DMatrix<T>> {
    let (mut vals, vecs) = sym_eigen(m)?;
    if clamp {
        let max = vals
            .iter()
            .fold(T::zero(), |a, &b| if b > a { b } else { a });
        let floor = T::of(1e-14) * max;
        for v in vals.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }
    }
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let fv = f(v);
        for i in 0..n {
            scaled[(i, j)] *= fv;
        }
    }
    Ok(symmetrize(&(scaled * vecs.transpose())))
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_inner<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x * *y;
    }
    acc
}

/// Squared Frobenius norm.
pub fn frob_norm_sq<T: Real>(a: &DMatrix<T>) -> T {
    frob_inner(a, a)
}

/// `tr(AB)` for matching square matrices, without forming the product.
pub fn trace_of_product<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Column-stacked vectorization.
pub fn vec_of<T: Real>(m: &DMatrix<T>) -> nalgebra::DVector<T> {
    nalgebra::DVector::from_iterator(m.nrows() * m.ncols(), m.iter().copied())
}
