//! Kronecker/tensor index algebra: multilinear-to-linear index maps,
//! symmetric folding and unfolding, mode products, and the partial-trace
//! operator `T⁽ᵏ⁾` that every gradient in this crate is built on.
//!
//! Conventions, fixed once for the whole crate:
//! - Factor lists are stored mode-1-first and represent the Kronecker
//!   product with the first factor outermost: `Σ = Σ₁ ⊗ Σ₂ ⊗ … ⊗ Σ_D`.
//! - Public index maps are 1-based; internal storage is 0-based row-major
//!   (mode 1 slowest). The linear index of `(i⁽¹⁾,…,i⁽ᴰ⁾)` is
//!   `Σ_k (i⁽ᵏ⁾−1)·∏_{j>k} d_j + i⁽ᴰ⁾`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::scalar::Real;

/// Ordered mode dimensions `(d₁,…,d_D)` with the derived products used by
/// every index computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorDims {
    dims: Vec<usize>,
    total: usize,
    comp_products: Vec<usize>,
}

impl FactorDims {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidConfig("need at least one mode".into()));
        }
        if let Some((mode, &d)) = dims.iter().enumerate().find(|(_, &d)| d == 0) {
            return Err(Error::IndexOutOfBounds {
                mode: mode + 1,
                index: 0,
                extent: d,
            });
        }
        let total: usize = dims.iter().product();
        let comp_products = dims.iter().map(|&d| total / d).collect();
        Ok(Self {
            dims: dims.to_vec(),
            total,
            comp_products,
        })
    }

    /// Number of modes `D`.
    pub fn n_modes(&self) -> usize {
        self.dims.len()
    }

    /// Mode extents `d₁,…,d_D`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Extent of the (1-based) mode `k`.
    pub fn dim(&self, k: usize) -> usize {
        self.dims[k - 1]
    }

    /// `∏ d_i`, the order of the represented Kronecker matrix.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Complementary product `d_{-k} = ∏_{j≠k} d_j` for the (1-based) mode `k`.
    pub fn comp_product(&self, k: usize) -> usize {
        self.comp_products[k - 1]
    }
}

/// A pair of multi-indices addressing one row/column entry of a folded
/// symmetric matrix. Both components are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexPair {
    pub row: Vec<usize>,
    pub col: Vec<usize>,
}

impl MultiIndexPair {
    pub fn new(row: Vec<usize>, col: Vec<usize>, dims: &FactorDims) -> Result<Self> {
        check_bounds(&row, dims)?;
        check_bounds(&col, dims)?;
        Ok(Self { row, col })
    }
}

fn check_bounds(multi: &[usize], dims: &FactorDims) -> Result<()> {
    if multi.len() != dims.n_modes() {
        return Err(Error::ShapeMismatch(format!(
            "multi-index has {} components, dims has {} modes",
            multi.len(),
            dims.n_modes()
        )));
    }
    for (mode0, (&i, &d)) in multi.iter().zip(dims.dims()).enumerate() {
        if i == 0 || i > d {
            return Err(Error::IndexOutOfBounds {
                mode: mode0 + 1,
                index: i,
                extent: d,
            });
        }
    }
    Ok(())
}

/// Maps a 1-based multi-index to a 1-based linear index:
/// `p = Σ_{k<D} (i⁽ᵏ⁾−1)·∏_{j>k} d_j + i⁽ᴰ⁾`. Bijective over the index box.
pub fn linear_index(multi: &[usize], dims: &FactorDims) -> Result<usize> {
    check_bounds(multi, dims)?;
    let mut p = 0usize;
    for (&i, &d) in multi.iter().zip(dims.dims()) {
        p = p * d + (i - 1);
    }
    Ok(p + 1)
}

/// Inverse of [`linear_index`]: 1-based linear index to 1-based multi-index.
pub fn multi_index(p: usize, dims: &FactorDims) -> Result<Vec<usize>> {
    if p == 0 || p > dims.total() {
        return Err(Error::IndexOutOfBounds {
            mode: 0,
            index: p,
            extent: dims.total(),
        });
    }
    let mut rem = p - 1;
    let mut out = vec![0usize; dims.n_modes()];
    for k in (0..dims.n_modes()).rev() {
        let d = dims.dims()[k];
        out[k] = rem % d + 1;
        rem /= d;
    }
    Ok(out)
}

/// Entry of `⊗_k A⁽ᵏ⁾` at a (row, column) multi-index pair, without forming
/// the product: `∏_k A⁽ᵏ⁾[i₁⁽ᵏ⁾, i₂⁽ᵏ⁾]`.
pub fn kron_entry<T: Real>(
    factors: &[DMatrix<T>],
    row_multi: &[usize],
    col_multi: &[usize],
) -> Result<T> {
    if factors.len() != row_multi.len() || factors.len() != col_multi.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} factors but multi-indices of lengths {}/{}",
            factors.len(),
            row_multi.len(),
            col_multi.len()
        )));
    }
    let mut prod = T::one();
    for (mode0, f) in factors.iter().enumerate() {
        let (r, c) = (row_multi[mode0], col_multi[mode0]);
        if r == 0 || r > f.nrows() {
            return Err(Error::IndexOutOfBounds {
                mode: mode0 + 1,
                index: r,
                extent: f.nrows(),
            });
        }
        if c == 0 || c > f.ncols() {
            return Err(Error::IndexOutOfBounds {
                mode: mode0 + 1,
                index: c,
                extent: f.ncols(),
            });
        }
        prod *= f[(r - 1, c - 1)];
    }
    Ok(prod)
}

/// Dense Kronecker product of a factor list, first factor outermost.
///
/// Only intended for small orders: oracles, desk-scale baselines, and the
/// dense truth option of the experiment harness.
pub fn kronecker_product<T: Real>(factors: &[DMatrix<T>]) -> DMatrix<T> {
    let mut acc = DMatrix::from_element(1, 1, T::one());
    for f in factors {
        acc = acc.kronecker(f);
    }
    acc
}

/// Dense row-major tensor. The workhorse behind mode products and the
/// reshaping steps of the multiway samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_data(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "tensor of shape {:?} needs {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major reinterpretation under a new shape with the same length.
    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} values into {:?}",
                self.data.len(),
                dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Mode-`k` product (1-based mode): replaces the mode-`k` fiber space by
    /// `M ·` fiber, i.e. `out[..,r,..] = Σ_s M[r,s]·in[..,s,..]`. Equivalent
    /// to unfold → multiply → refold along that mode.
    pub fn mode_product(&self, m: &DMatrix<T>, mode: usize) -> Result<Tensor<T>> {
        if mode == 0 || mode > self.dims.len() {
            return Err(Error::IndexOutOfBounds {
                mode,
                index: mode,
                extent: self.dims.len(),
            });
        }
        let axis = mode - 1;
        let d = self.dims[axis];
        if m.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "mode {} has extent {} but matrix has {} columns",
                mode,
                d,
                m.ncols()
            )));
        }
        let stride: usize = self.dims[axis + 1..].iter().product();
        let lead: usize = self.dims[..axis].iter().product();
        let new_d = m.nrows();

        let mut out_dims = self.dims.clone();
        out_dims[axis] = new_d;
        let mut out = Tensor::zeros(&out_dims);

        let src = &self.data;
        let dst = &mut out.data;
        for hi in 0..lead {
            let src_block = hi * d * stride;
            let dst_block = hi * new_d * stride;
            for r in 0..new_d {
                let dst_row = dst_block + r * stride;
                for s in 0..d {
                    let w = m[(r, s)];
                    if w == T::zero() {
                        continue;
                    }
                    let src_row = src_block + s * stride;
                    for lo in 0..stride {
                        dst[dst_row + lo] += w * src[src_row + lo];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A symmetric matrix of order `∏d_i` folded into a 2D-way array pairing row
/// and column multi-indices. Folding and unfolding are pure index
/// arithmetic; round trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedSymmetricTensor<T> {
    dims: FactorDims,
    values: Tensor<T>,
}

impl<T: Real> FoldedSymmetricTensor<T> {
    pub fn dims(&self) -> &FactorDims {
        &self.dims
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    /// Entry at a row/column multi-index pair (1-based components).
    pub fn get(&self, at: &MultiIndexPair) -> Result<T> {
        let p = linear_index(&at.row, &self.dims)?;
        let q = linear_index(&at.col, &self.dims)?;
        Ok(self.values.data()[(p - 1) * self.dims.total() + (q - 1)])
    }
}

/// Folds a square matrix of order `∏d_i` into the 2D-way array with
/// `values[i₁⁽¹⁾,…,i₂⁽ᴰ⁾] = A[p,q]`, `p,q` from [`linear_index`].
pub fn symmetric_fold<T: Real>(
    a: &DMatrix<T>,
    dims: &FactorDims,
) -> Result<FoldedSymmetricTensor<T>> {
    let t = dims.total();
    if a.nrows() != t || a.ncols() != t {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{}, dims require order {}",
            a.nrows(),
            a.ncols(),
            t
        )));
    }
    let mut shape = Vec::with_capacity(2 * dims.n_modes());
    shape.extend_from_slice(dims.dims());
    shape.extend_from_slice(dims.dims());
    let mut data = Vec::with_capacity(t * t);
    for p in 0..t {
        for q in 0..t {
            data.push(a[(p, q)]);
        }
    }
    Ok(FoldedSymmetricTensor {
        dims: dims.clone(),
        values: Tensor::from_data(&shape, data)?,
    })
}

/// Inverse of [`symmetric_fold`].
pub fn symmetric_unfold<T: Real>(t: &FoldedSymmetricTensor<T>) -> DMatrix<T> {
    let n = t.dims.total();
    DMatrix::from_fn(n, n, |p, q| t.values.data()[p * n + q])
}

/// Gram matrix `S = Σ_n yₙyₙᵀ` of vectorized observations together with the
/// mode structure, plus the optional precomputed Γ-workspaces for the
/// triangular contraction path.
#[derive(Debug, Clone)]
pub struct SufficientStats<T> {
    dims: FactorDims,
    matrix: DMatrix<T>,
    gamma: Option<Vec<DMatrix<T>>>,
}

impl<T: Real> SufficientStats<T> {
    pub fn new(dims: FactorDims, matrix: DMatrix<T>) -> Result<Self> {
        let t = dims.total();
        if matrix.nrows() != t || matrix.ncols() != t {
            return Err(Error::ShapeMismatch(format!(
                "stats matrix is {}x{}, dims require order {}",
                matrix.nrows(),
                matrix.ncols(),
                t
            )));
        }
        Ok(Self {
            dims,
            matrix,
            gamma: None,
        })
    }

    pub fn dims(&self) -> &FactorDims {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Precomputes the per-mode swap-accumulated matrices `S_Γ[q]`. After
    /// this call, [`Self::partial_trace`] uses the triangular contraction
    /// path, which visits only ordered off-mode index pairs.
    ///
    /// `S_Γ[q][(i,·),(j,·)] = Σ_{J ⊆ E, q∉J} S[swap_J((i,·),(j,·))]` where
    /// `E` is the set of modes whose row and column digits differ and
    /// `swap_J` exchanges those digits for the modes in `J`. Grouping the
    /// full sum over index pairs by these swap orbits is what makes the
    /// restriction to ordered pairs exact.
    pub fn precompute_gamma(&mut self) {
        if self.gamma.is_some() {
            return;
        }
        let d = self.dims.n_modes();
        let t = self.dims.total();
        let digits: Vec<Vec<usize>> = (0..t)
            .map(|p| {
                let mut rem = p;
                let mut out = vec![0usize; d];
                for k in (0..d).rev() {
                    out[k] = rem % self.dims.dims()[k];
                    rem /= self.dims.dims()[k];
                }
                out
            })
            .collect();
        let strides: Vec<usize> = (0..d)
            .map(|k| self.dims.dims()[k + 1..].iter().product())
            .collect();

        let mut gamma = Vec::with_capacity(d);
        for q in 0..d {
            let mut g = DMatrix::zeros(t, t);
            for pr in 0..t {
                for pc in 0..t {
                    let diff: Vec<usize> = (0..d)
                        .filter(|&k| k != q && digits[pr][k] != digits[pc][k])
                        .collect();
                    let mut acc = T::zero();
                    for mask in 0..(1usize << diff.len()) {
                        let mut r = pr;
                        let mut c = pc;
                        for (bit, &k) in diff.iter().enumerate() {
                            if mask & (1 << bit) != 0 {
                                let delta = (digits[pr][k] as isize - digits[pc][k] as isize)
                                    * strides[k] as isize;
                                r = (r as isize - delta) as usize;
                                c = (c as isize + delta) as usize;
                            }
                        }
                        acc += self.matrix[(r, c)];
                    }
                    g[(pr, pc)] = acc;
                }
            }
            gamma.push(g);
        }
        self.gamma = Some(gamma);
    }

    pub fn has_gamma_workspace(&self) -> bool {
        self.gamma.is_some()
    }

    /// The partial-trace operator `T⁽ᵏ⁾` (1-based mode `k`): the symmetric
    /// `d_k×d_k` matrix with `tr(Σ_k⁻¹ T⁽ᵏ⁾) = tr([⊗_i Σ_i]⁻¹ S)` for every
    /// SPD `Σ_k`, given the inverses of the other factors.
    ///
    /// `inv_factors` holds all `D` per-mode matrices; entry `k` is ignored.
    /// Without a Γ-workspace this contracts the folded `S` with each
    /// `Σ_j⁻¹` (`j≠k`) over paired row/column modes; with one it runs the
    /// triangular accumulation over `S_Γ[k]` instead. Both paths end with an
    /// explicit symmetrization.
    pub fn partial_trace(&self, inv_factors: &[DMatrix<T>], k: usize) -> Result<DMatrix<T>> {
        self.check_factors(inv_factors, k)?;
        let c = match &self.gamma {
            Some(gamma) => contract_off_modes(
                &gamma[k - 1],
                &self.dims,
                inv_factors,
                k,
                PairRange::Ordered,
            ),
            None => contract_off_modes(&self.matrix, &self.dims, inv_factors, k, PairRange::Full),
        };
        let t = symmetrize(&c);
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("partial trace for mode {k}")));
        }
        Ok(t)
    }

    /// `tr([⊗_i Σ_i]⁻¹ S)`, evaluated as `tr(Σ₁⁻¹ T⁽¹⁾)`.
    pub fn kron_trace(&self, inv_factors: &[DMatrix<T>]) -> Result<T> {
        let t1 = self.partial_trace(inv_factors, 1)?;
        Ok(crate::linalg::trace_of_product(&inv_factors[0], &t1))
    }

    fn check_factors(&self, inv_factors: &[DMatrix<T>], k: usize) -> Result<()> {
        if k == 0 || k > self.dims.n_modes() {
            return Err(Error::IndexOutOfBounds {
                mode: k,
                index: k,
                extent: self.dims.n_modes(),
            });
        }
        if inv_factors.len() != self.dims.n_modes() {
            return Err(Error::ShapeMismatch(format!(
                "{} inverse factors for {} modes",
                inv_factors.len(),
                self.dims.n_modes()
            )));
        }
        for (mode0, f) in inv_factors.iter().enumerate() {
            if mode0 + 1 == k {
                continue;
            }
            let d = self.dims.dims()[mode0];
            if f.nrows() != d || f.ncols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "inverse factor for mode {} is {}x{}, expected {}x{}",
                    mode0 + 1,
                    f.nrows(),
                    f.ncols(),
                    d,
                    d
                )));
            }
        }
        Ok(())
    }
}

/// Distance from a symmetric matrix to the nearest mode-1 Kronecker
/// separation `A₁ ⊗ B`: the Van Loan–Pitsianis rearrangement of `m` over the
/// split `{1} | {2..D}` has the separable part as its best rank-one
/// approximation, so the residual is `√(Σ_{k≥2} σ_k²)` of that
/// rearrangement. Zero (up to round-off) exactly when the matrix separates;
/// used to flag separable versus non-separable covariance draws.
pub fn nearest_kronecker_residual<T: Real>(m: &DMatrix<T>, dims: &FactorDims) -> Result<T> {
    let t = dims.total();
    if m.nrows() != t || m.ncols() != t {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{}, dims require order {}",
            m.nrows(),
            m.ncols(),
            t
        )));
    }
    let d1 = dims.dim(1);
    let rest = t / d1;
    let mut r = DMatrix::<T>::zeros(d1 * d1, rest * rest);
    for p in 0..t {
        let (i1, pr) = (p / rest, p % rest);
        for q in 0..t {
            let (j1, qr) = (q / rest, q % rest);
            r[(i1 * d1 + j1, pr * rest + qr)] = m[(p, q)];
        }
    }
    let sv = r.svd(false, false).singular_values;
    let mut tail = T::zero();
    for (k, s) in sv.iter().enumerate() {
        if k > 0 {
            tail += *s * *s;
        }
    }
    Ok(tail.max(T::zero()).sqrt())
}

#[derive(Clone, Copy, PartialEq)]
enum PairRange {
    /// All `(a,b)` index pairs of the contracted mode.
    Full,
    /// Ordered pairs `a ≤ b` only, valid over a Γ-accumulated matrix.
    Ordered,
}

/// Contracts every off-mode `j ≠ k` of the folded view of `s` against
/// `inv_factors[j]`, pairing the row-side and column-side index of the same
/// mode. Off-modes are eliminated in decreasing extent order so the
/// intermediate (which is again a folded symmetric matrix over the remaining
/// modes) shrinks as fast as possible; `s` itself is only read, never
/// copied.
fn contract_off_modes<T: Real>(
    s: &DMatrix<T>,
    dims: &FactorDims,
    inv_factors: &[DMatrix<T>],
    k: usize,
    range: PairRange,
) -> DMatrix<T> {
    let mut order: Vec<usize> = (0..dims.n_modes()).filter(|&j| j + 1 != k).collect();
    order.sort_by_key(|&j| (usize::MAX - dims.dims()[j], j));

    let mut cur_dims = dims.dims().to_vec();
    let mut cur_modes: Vec<usize> = (0..dims.n_modes()).collect();
    if order.is_empty() {
        return s.clone_owned();
    }
    // the first contraction reads the large stats matrix in place; only the
    // (much smaller) intermediates are owned
    let mut cur: Option<DMatrix<T>> = None;
    for &j in &order {
        let pos = cur_modes
            .iter()
            .position(|&m| m == j)
            .expect("mode present");
        let source = cur.as_ref().unwrap_or(s);
        cur = Some(contract_mode_pair(
            source,
            &cur_dims,
            pos,
            &inv_factors[j],
            range,
        ));
        cur_dims.remove(pos);
        cur_modes.remove(pos);
    }
    cur.expect("at least one off-mode contracted")
}

/// One paired contraction: `out[(R),(C)] = Σ_{a,b} s[(R,a),(C,b)]·M[a,b]`
/// where `a`/`b` run over the row-side/column-side digit of the mode at
/// `axis` and `R`,`C` are the remaining digits.
fn contract_mode_pair<T: Real>(
    s: &DMatrix<T>,
    dims: &[usize],
    axis: usize,
    m: &DMatrix<T>,
    range: PairRange,
) -> DMatrix<T> {
    let d = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let lead: usize = dims[..axis].iter().product();
    let total = lead * d * stride;
    let red = total / d;
    debug_assert_eq!(s.nrows(), total);

    let mut out = DMatrix::<T>::zeros(red, red);
    let src = s.as_slice();
    let dst = out.as_mut_slice();
    // nalgebra stores column-major, so the inner loops walk one source
    // column and one destination column contiguously.
    for hi_c in 0..lead {
        for b in 0..d {
            let col_base = (hi_c * d + b) * stride;
            for lo_c in 0..stride {
                let q = col_base + lo_c;
                let cc = hi_c * stride + lo_c;
                let s_col = &src[q * total..(q + 1) * total];
                let o_col = &mut dst[cc * red..(cc + 1) * red];
                let a_max = match range {
                    PairRange::Full => d,
                    PairRange::Ordered => b + 1,
                };
                for hi_r in 0..lead {
                    let rr0 = hi_r * stride;
                    let p0 = hi_r * d * stride;
                    for a in 0..a_max {
                        let w = m[(a, b)];
                        if w == T::zero() {
                            continue;
                        }
                        let p_row = p0 + a * stride;
                        let src_run = &s_col[p_row..p_row + stride];
                        let dst_run = &mut o_col[rr0..rr0 + stride];
                        for (dst, src) in dst_run.iter_mut().zip(src_run) {
                            *dst += *src * w;
                        }
                    }
                }
            }
        }
    }
    out
}
