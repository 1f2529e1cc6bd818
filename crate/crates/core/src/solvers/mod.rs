//! Generic iterative kernels shared by every reconstruction stage.

mod bregman;
mod cg;
mod graph_ls;

pub use bregman::{l1_ls_bregman, split_bregman, BregmanOutput, BregmanParams};
pub use cg::{cg_solve, CgParams, CgResult};
pub use graph_ls::{graph_ls_solve, GraphLs, GraphLsSolution};

/// A linear map between flat vectors with an exact adjoint.
pub trait LinearMap: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint(y, x)
    }
}

/// Dense row-major matrix, mostly for tests and small oracles.
#[derive(Debug, Clone)]
pub struct DenseMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseMap { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseMap::new(n, n, data)
    }
}

impl LinearMap for DenseMap {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for (r, &yr) in y.iter().enumerate() {
            for (xc, a) in x.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                *xc += a * yr;
            }
        }
    }
}

/// `A^T A + shift I`, applied without forming the product.
pub struct NormalMap<'a, A: LinearMap + ?Sized> {
    pub op: &'a A,
    pub shift: f64,
}

impl<A: LinearMap + ?Sized> LinearMap for NormalMap<'_, A> {
    fn rows(&self) -> usize {
        self.op.cols()
    }
    fn cols(&self) -> usize {
        self.op.cols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; self.op.rows()];
        self.op.apply(x, &mut tmp);
        self.op.apply_adjoint(&tmp, y);
        if self.shift != 0.0 {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += self.shift * xi;
            }
        }
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        self.apply(y, x)
    }
}

/// Symmetric map defined by a closure.
pub struct FnMap<F: Fn(&[f64], &mut [f64]) + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearMap for FnMap<F> {
    fn rows(&self) -> usize {
        self.n
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        (self.f)(y, x)
    }
}

/// Sequential dot product; the fixed summation order keeps results
/// independent of the thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Count of entries with magnitude above `1e-12`.
pub fn norm0(a: &[f64]) -> usize {
    a.iter().filter(|v| v.abs() > 1e-12).count()
}

/// Componentwise `sign(x) max(|x| - t, 0)`.
pub fn soft_threshold(x: &[f64], t: f64) -> Vec<f64> {
    assert!(t >= 0.0, "threshold must be nonnegative");
    x.iter().map(|&v| shrink(v, t)).collect()
}

#[inline]
pub(crate) fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
