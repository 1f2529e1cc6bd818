use serde::{Deserialize, Serialize};

use super::{dot, norm2, LinearMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgParams {
    pub max_iter: usize,
    /// Stop once `|b - M x| / |b|` drops to this level.
    pub rel_tol: f64,
}

impl Default for CgParams {
    fn default() -> Self {
        CgParams {
            max_iter: 20,
            rel_tol: 0.005,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    /// Relative residual before the first step and after every iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive semidefinite map.
pub fn cg_solve<M: LinearMap + ?Sized>(
    map: &M,
    b: &[f64],
    x0: Option<&[f64]>,
    params: &CgParams,
) -> Result<CgResult> {
    let n = map.cols();
    if map.rows() != n || b.len() != n {
        return Err(Error::mismatch(
            format!("square map of size {}", b.len()),
            format!("{}x{}", map.rows(), n),
        ));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; n],
            residuals: vec![0.0],
            iterations: 0,
            converged: true,
        });
    }
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::mismatch(n, x0.len()));
            }
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ap = vec![0.0; n];
    map.apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut residuals = vec![rr.sqrt() / b_norm];
    let mut best = (residuals[0], x.clone());

    if residuals[0] <= params.rel_tol {
        return Ok(CgResult {
            x,
            residuals,
            iterations: 0,
            converged: true,
        });
    }

    for it in 1..=params.max_iter {
        map.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > f64::MIN_POSITIVE * dot(&p, &p).max(1.0)) {
            return Err(Error::Breakdown {
                iteration: it,
                best: best.1,
            });
        }
        let alpha = rr / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / b_norm;
        residuals.push(rel);
        if rel <= params.rel_tol || rr_new == 0.0 {
            return Ok(CgResult {
                x,
                residuals,
                iterations: it,
                converged: true,
            });
        }
        if rel < best.0 {
            best.0 = rel;
            best.1.copy_from_slice(&x);
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgResult {
        x,
        residuals,
        iterations: params.max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::DenseMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_step() {
        let b = vec![1.0, -2.0, 0.5, 4.0];
        let res = cg_solve(&DenseMap::identity(4), &b, None, &CgParams::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        for (x, bb) in res.x.iter().zip(&b) {
            assert!((x - bb).abs() < 1e-15);
        }
    }

    #[test]
    fn random_spd_converges() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // M = G^T G + I
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    s += g[k * n + i] * g[k * n + j];
                }
                m[i * n + j] = s;
            }
        }
        let map = DenseMap::new(n, n, m.clone());
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = CgParams {
            max_iter: 400,
            rel_tol: 1e-10,
        };
        let res = cg_solve(&map, &b, None, &params).unwrap();
        assert!(res.converged, "residuals {:?}", res.residuals.last());
        // true residual, not the recurrence
        let mut mx = vec![0.0; n];
        map.apply(&res.x, &mut mx);
        let r: Vec<f64> = b.iter().zip(&mx).map(|(a, c)| a - c).collect();
        assert!(norm2(&r) / norm2(&b) <= 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let res = cg_solve(&DenseMap::identity(3), &[0.0; 3], Some(&[1.0, 2.0, 3.0]), &CgParams::default())
            .unwrap();
        assert_eq!(res.x, vec![0.0; 3]);
    }

    #[test]
    fn singular_direction_breaks_down() {
        // M = diag(1, 0) and b has a component in the null space.
        let map = DenseMap::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let err = cg_solve(
            &map,
            &[0.0, 1.0],
            None,
            &CgParams {
                max_iter: 5,
                rel_tol: 1e-12,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Breakdown { iteration: 1, .. }));
    }
}
