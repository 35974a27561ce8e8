//! Minimal dense row-major matrix used by the model and optimizer.
//!
//! This is deliberately not a general linear-algebra library: the layer graph
//! is fixed, so only the handful of kernels it needs exist here. All shapes
//! are checked on every operation (panicking — a shape mismatch inside the
//! fixed layer graph is a programming error, not an input error; the public
//! model entry points validate dimensions up front and return typed errors).
//!
//! Convention: a linear layer stores its weight as `[out × in]`, and batched
//! activations as `[nodes × features]`, so the forward product is
//! "rows of X dot rows of W" — both operands are traversed contiguously.

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Wrap an existing row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat buffer length != rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · Wᵀ + b` where `self` is `[n × in]`, `w` is `[out × in]`,
    /// `b` is `[out]`. The batched forward pass of a linear layer.
    pub fn affine(&self, w: &Matrix<S>, b: &[S]) -> Matrix<S> {
        assert_eq!(
            self.cols, w.cols,
            "affine: input width {} != weight fan-in {}",
            self.cols, w.cols
        );
        assert_eq!(w.rows, b.len(), "affine: weight fan-out {} != bias length {}", w.rows, b.len());
        let mut out = Matrix::zeros(self.rows, w.rows);
        for r in 0..self.rows {
            let x = self.row(r);
            let y = out.row_mut(r);
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = dot(x, w.row(o)) + b[o];
            }
        }
        out
    }

    /// Plain product `self · m`, `[n × k] · [k × m]`. Used for gradient
    /// propagation `dX = dY · W` (with `W` stored `[out × in]`, `dY`
    /// `[n × out]`).
    pub fn matmul(&self, m: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, m.rows, "matmul: inner dims {} vs {}", self.cols, m.rows);
        let mut out = Matrix::zeros(self.rows, m.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let y = out.row_mut(r);
            for (k, &ak) in a.iter().enumerate() {
                if ak != S::zero() {
                    axpy(ak, m.row(k), y);
                }
            }
        }
        out
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat_cols(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(a.rows, b.rows, "concat_cols: row counts {} vs {}", a.rows, b.rows);
        let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            let row = out.row_mut(r);
            row[..a.cols].copy_from_slice(a.row(r));
            row[a.cols..].copy_from_slice(b.row(r));
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix<S>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(S) -> S) {
        for v in self.data.iter_mut() {
            *v = f(*v);
        }
    }

    /// Largest absolute element-wise difference, widened to f64 (test helper).
    pub fn max_abs_diff(&self, other: &Matrix<S>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs().to_real())
            .fold(0.0, f64::max)
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x * *y;
    }
    acc
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// Accumulate the weight gradient of a linear layer:
/// `dw[o][k] += Σ_r dy[r][o] · x[r][k]` with `dy [n × out]`, `x [n × in]`,
/// `dw [out × in]`.
pub fn accumulate_outer<S: Scalar>(dw: &mut Matrix<S>, dy: &Matrix<S>, x: &Matrix<S>) {
    assert_eq!(dy.rows(), x.rows(), "accumulate_outer: row counts differ");
    assert_eq!(dw.shape(), (dy.cols(), x.cols()), "accumulate_outer: dw shape");
    for r in 0..dy.rows() {
        let xr = x.row(r);
        for o in 0..dy.cols() {
            let g = dy.get(r, o);
            if g != S::zero() {
                axpy(g, xr, dw.row_mut(o));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_computation() {
        // x = [[1,2],[3,4]], w = [[1,0],[0,1],[1,1]], b = [10,20,30]
        let x = Matrix::from_flat(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = Matrix::from_flat(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = x.affine(&w, &[10.0, 20.0, 30.0]);
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 13.0, 24.0, 37.0]);
    }

    #[test]
    fn matmul_matches_affine_transpose_relation() {
        // dX = dY · W must agree with an explicit triple loop.
        let dy = Matrix::from_flat(2, 3, vec![1.0, -1.0, 2.0, 0.5, 0.0, -2.0]);
        let w = Matrix::from_flat(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let dx = dy.matmul(&w);
        let mut want = Matrix::zeros(2, 2);
        for r in 0..2 {
            for k in 0..2 {
                let mut acc = 0.0;
                for o in 0..3 {
                    acc += dy.get(r, o) * w.get(o, k);
                }
                want.set(r, k, acc);
            }
        }
        assert_eq!(dx, want);
    }

    #[test]
    fn concat_cols_lays_out_rows() {
        let a = Matrix::from_flat(2, 1, vec![1.0, 2.0]);
        let b = Matrix::from_flat(2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let c = Matrix::concat_cols(&a, &b);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn accumulate_outer_matches_explicit_sum() {
        let dy = Matrix::from_flat(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let x = Matrix::from_flat(2, 3, vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]);
        let mut dw = Matrix::zeros(2, 3);
        accumulate_outer(&mut dw, &dy, &x);
        let mut want = Matrix::zeros(2, 3);
        for o in 0..2 {
            for k in 0..3 {
                let mut acc = 0.0;
                for r in 0..2 {
                    acc += dy.get(r, o) * x.get(r, k);
                }
                want.set(o, k, acc);
            }
        }
        assert_eq!(dw, want);
    }

    #[test]
    #[should_panic(expected = "affine: input width")]
    fn affine_rejects_mismatched_shapes() {
        let x = Matrix::<f64>::zeros(2, 3);
        let w = Matrix::<f64>::zeros(4, 2);
        let _ = x.affine(&w, &[0.0; 4]);
    }
}
