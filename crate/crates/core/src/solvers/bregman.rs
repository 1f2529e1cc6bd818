use serde::{Deserialize, Serialize};

use super::{cg_solve, norm2, shrink, CgParams, FnMap, LinearMap, NormalMap};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BregmanParams {
    /// Outer Bregman rounds `J`.
    pub outer_iters: usize,
    /// Caps for every inner u-solve.
    pub cg: CgParams,
}

impl Default for BregmanParams {
    fn default() -> Self {
        BregmanParams {
            outer_iters: 10,
            cg: CgParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BregmanOutput {
    /// The shrunk variable `v_J`, returned as the solution.
    pub v: Vec<f64>,
    /// The last quadratic iterate `u_J`.
    pub u: Vec<f64>,
    /// `|v_j - u_j| / max(1, |u_j|)` after every round.
    pub gaps: Vec<f64>,
}

/// Split Bregman for `u^T H u - 2 rhs^T u + s |u|_1` with `H` symmetric PSD.
///
/// Starts from `u0` with a zero Bregman variable, then per round: shrink
/// `u - b` by `s / (2 mu)`, solve `(H + mu I) u = rhs + mu (v + b)` by CG
/// warm-started at the previous `u`, and update `b += v - u`.
pub fn split_bregman<H: LinearMap + ?Sized>(
    hessian: &H,
    rhs: &[f64],
    s: f64,
    mu: f64,
    u0: &[f64],
    params: &BregmanParams,
) -> Result<BregmanOutput> {
    assert!(s >= 0.0 && mu > 0.0, "need s >= 0 and mu > 0");
    let n = rhs.len();
    let shifted = FnMap {
        n,
        f: |x: &[f64], y: &mut [f64]| {
            hessian.apply(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += mu * xi;
            }
        },
    };
    let t = s / (2.0 * mu);
    let mut u = u0.to_vec();
    let mut b = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut gaps = Vec::with_capacity(params.outer_iters);
    let mut target = vec![0.0; n];
    for _ in 0..params.outer_iters {
        for ((vi, ui), bi) in v.iter_mut().zip(&u).zip(&b) {
            *vi = shrink(ui - bi, t);
        }
        for ((ti, ri), (vi, bi)) in target.iter_mut().zip(rhs).zip(v.iter().zip(&b)) {
            *ti = ri + mu * (vi + bi);
        }
        u = cg_solve(&shifted, &target, Some(&u), &params.cg)?.x;
        let mut diff = 0.0;
        for ((bi, vi), ui) in b.iter_mut().zip(&v).zip(&u) {
            *bi += vi - ui;
            diff += (vi - ui) * (vi - ui);
        }
        gaps.push(diff.sqrt() / norm2(&u).max(1.0));
    }
    if params.outer_iters == 0 {
        v = u.clone();
    }
    Ok(BregmanOutput { v, u, gaps })
}

/// L1-regularized least squares `|A u - tau|^2 + s_imp |u|_1`.
///
/// `start` is the unregularized least-squares iterate; when absent it is
/// computed by CG on the normal equations from `A^T tau` with `params.cg`.
/// With `s_imp = 0` the result is that least-squares solve refined by the
/// Bregman rounds.
pub fn l1_ls_bregman<A: LinearMap + ?Sized>(
    a: &A,
    tau: &[f64],
    s_imp: f64,
    mu_s: f64,
    params: &BregmanParams,
    start: Option<&[f64]>,
) -> Result<BregmanOutput> {
    let normal = NormalMap { op: a, shift: 0.0 };
    let mut aty = vec![0.0; a.cols()];
    a.apply_adjoint(tau, &mut aty);
    let u0 = match start {
        Some(u0) => u0.to_vec(),
        None => cg_solve(&normal, &aty, Some(&aty), &params.cg)?.x,
    };
    split_bregman(&normal, &aty, s_imp, mu_s, &u0, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{soft_threshold, DenseMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_operator_reaches_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = 1.3;
        let params = BregmanParams {
            outer_iters: 50,
            cg: CgParams {
                max_iter: 20,
                rel_tol: 1e-12,
            },
        };
        let out = l1_ls_bregman(&DenseMap::identity(64), &tau, s, 1.0, &params, None).unwrap();
        let oracle = soft_threshold(&tau, s / 2.0);
        for (v, o) in out.v.iter().zip(&oracle) {
            assert!((v - o).abs() <= 1e-6, "{v} vs {o}");
        }
        assert!(*out.gaps.last().unwrap() < 1e-3);
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let a = DenseMap::new(3, 2, vec![1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let tau = [1.0, 2.0, 3.0];
        let params = BregmanParams {
            outer_iters: 5,
            cg: CgParams {
                max_iter: 10,
                rel_tol: 1e-14,
            },
        };
        let out = l1_ls_bregman(&a, &tau, 0.0, 1.0, &params, None).unwrap();
        // normal equations [[2,1],[1,5]] u = [4,7]
        let (u0, u1) = (13.0 / 9.0, 10.0 / 9.0);
        assert!((out.v[0] - u0).abs() < 1e-10 && (out.v[1] - u1).abs() < 1e-10);
    }

    #[test]
    fn large_penalty_gives_zero_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, n) = (40, 60);
        let data: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = DenseMap::new(m, n, data);
        let tau: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut aty = vec![0.0; n];
        a.apply_adjoint(&tau, &mut aty);
        let s = 2.0 * aty.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) * 1.05;
        let params = BregmanParams {
            outer_iters: 300,
            cg: CgParams {
                max_iter: 60,
                rel_tol: 1e-12,
            },
        };
        let out = l1_ls_bregman(&a, &tau, s, 10.0, &params, None).unwrap();
        assert!(norm2(&out.v) <= 1e-6, "|v| = {}", norm2(&out.v));
    }
}
