//! The volume update: L1-regularized least squares with the signal-patch,
//! block-triplet and surface priors folded into one quadratic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{block_coverage, blocks_aggregate, blocks_extract, BlockMatches};
use crate::solvers::{split_bregman, BregmanParams, FnMap, LinearMap};

/// Prior targets of the volume update.
pub struct VolumePriors<'a> {
    /// `P*(D S)`, signal-shaped.
    pub pds: &'a [f64],
    /// The surface embedded as a volume.
    pub g: &'a [f64],
    /// Block groups and their targets `D_s C_i D_n^T`.
    pub blocks: Option<(&'a BlockMatches, &'a [DMatrix<f64>])>,
}

/// Weights relative to the data term `|tau - A u|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeWeights {
    pub r_ut: f64,
    pub r_u: f64,
    pub r_g: f64,
    /// L1 weight `s_u`.
    pub s_u: f64,
    /// Bregman penalty `mu_s`.
    pub mu_s: f64,
}

/// The four quadratic terms evaluated at one volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeTerms {
    pub data: f64,
    pub signal: f64,
    pub block: f64,
    pub surface: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn volume_terms<A: LinearMap + ?Sized>(
    a: &A,
    tau: &[f64],
    u: &[f64],
    priors: &VolumePriors,
) -> VolumeTerms {
    let mut au = vec![0.0; a.rows()];
    a.apply(u, &mut au);
    let block = priors.blocks.map_or(0.0, |(m, targets)| {
        blocks_extract(u, m)
            .iter()
            .zip(targets)
            .map(|(b, t)| (b - t).norm_squared())
            .sum()
    });
    VolumeTerms {
        data: sq_dist(tau, &au),
        signal: sq_dist(&au, priors.pds),
        block,
        surface: sq_dist(u, priors.g),
    }
}

/// Per-prior weight `r = multiplier * data / prior`, capped at
/// `cap * multiplier`; a degenerate ratio falls back to the multiplier.
pub fn balance_weight(multiplier: f64, data: f64, prior: f64, cap: f64) -> f64 {
    let r = multiplier * data / prior;
    if r.is_finite() && r > 0.0 {
        r.min(cap * multiplier)
    } else {
        multiplier
    }
}

/// Minimizes `|tau - A u|^2 + s_u |u|_1 + r_ut |A u - P*(DS)|^2
/// + r_u sum |B u_i - T_i|^2 + r_g |u - g|^2` by split Bregman from `u0`.
pub fn update_u<A: LinearMap + ?Sized>(
    a: &A,
    tau: &[f64],
    priors: &VolumePriors,
    w: &VolumeWeights,
    u0: &[f64],
    params: &BregmanParams,
) -> Result<Vec<f64>> {
    let n = a.cols();
    if tau.len() != a.rows() || priors.pds.len() != a.rows() {
        return Err(Error::mismatch(a.rows(), tau.len().min(priors.pds.len())));
    }
    if priors.g.len() != n || u0.len() != n {
        return Err(Error::mismatch(n, priors.g.len().min(u0.len())));
    }
    for (name, v) in [("r_ut", w.r_ut), ("r_u", w.r_u), ("r_g", w.r_g), ("s_u", w.s_u)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("volume weight {name} must be >= 0, got {v}")));
        }
    }
    if !(w.mu_s.is_finite() && w.mu_s > 0.0) {
        return Err(Error::Config(format!("mu_s must be positive, got {}", w.mu_s)));
    }
    let coverage = match priors.blocks {
        Some((m, _)) if w.r_u > 0.0 => block_coverage(m),
        _ => vec![0.0; n],
    };
    let hessian = FnMap {
        n,
        f: |x: &[f64], y: &mut [f64]| {
            let mut ax = vec![0.0; a.rows()];
            a.apply(x, &mut ax);
            a.apply_adjoint(&ax, y);
            for ((yi, xi), ci) in y.iter_mut().zip(x).zip(&coverage) {
                *yi = (1.0 + w.r_ut) * *yi + (w.r_u * ci + w.r_g) * xi;
            }
        },
    };
    let target: Vec<f64> = tau.iter().zip(priors.pds).map(|(t, p)| t + w.r_ut * p).collect();
    let mut rhs = vec![0.0; n];
    a.apply_adjoint(&target, &mut rhs);
    let mut agg = vec![0.0; n];
    if let Some((m, targets)) = priors.blocks {
        blocks_aggregate(targets, m, &mut agg);
    }
    for ((ri, ai), gi) in rhs.iter_mut().zip(&agg).zip(priors.g) {
        *ri += w.r_u * ai + w.r_g * gi;
    }
    Ok(split_bregman(&hessian, &rhs, w.s_u, w.mu_s, u0, params)?.v)
}

/// Normalized objective of [`update_u`].
pub fn volume_objective<A: LinearMap + ?Sized>(
    a: &A,
    tau: &[f64],
    u: &[f64],
    priors: &VolumePriors,
    w: &VolumeWeights,
) -> f64 {
    let t = volume_terms(a, tau, u, priors);
    let l1: f64 = u.iter().map(|v| v.abs()).sum();
    t.data + w.s_u * l1 + w.r_ut * t.signal + w.r_u * t.block + w.r_g * t.surface
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{CgParams, DenseMap};
    use nalgebra::DVector;

    fn small() -> (DenseMap, Vec<f64>) {
        let a = DenseMap::new(
            4,
            3,
            vec![1.0, 0.5, 0.0, 0.2, 1.5, 0.3, 0.0, 0.4, 2.0, 0.7, 0.0, 0.1],
        );
        (a, vec![1.0, -0.5, 2.0, 0.3])
    }

    fn params(j: usize) -> BregmanParams {
        BregmanParams {
            outer_iters: j,
            cg: CgParams {
                max_iter: 50,
                rel_tol: 1e-14,
            },
        }
    }

    #[test]
    fn zero_weights_reduce_to_least_squares() {
        let (a, tau) = small();
        let zeros = vec![0.0; 4];
        let g = vec![0.0; 3];
        let priors = VolumePriors {
            pds: &zeros,
            g: &g,
            blocks: None,
        };
        let w = VolumeWeights {
            r_ut: 0.0,
            r_u: 0.0,
            r_g: 0.0,
            s_u: 0.0,
            mu_s: 1.0,
        };
        let u = update_u(&a, &tau, &priors, &w, &[0.0; 3], &params(30)).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(4, 3, &a.data);
        let ls = (m.transpose() * &m)
            .lu()
            .solve(&(m.transpose() * DVector::from_vec(tau.clone())))
            .unwrap();
        for (x, y) in u.iter().zip(ls.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn dominant_surface_weight_returns_g() {
        let (a, tau) = small();
        let zeros = vec![0.0; 4];
        let g = vec![0.3, -0.1, 0.8];
        let priors = VolumePriors {
            pds: &zeros,
            g: &g,
            blocks: None,
        };
        let w = VolumeWeights {
            r_ut: 0.5,
            r_u: 0.0,
            r_g: 1e12,
            s_u: 1e-3,
            mu_s: 1e6,
        };
        let u = update_u(&a, &tau, &priors, &w, &g, &params(10)).unwrap();
        for (x, y) in u.iter().zip(&g) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn update_lowers_the_objective() {
        let (a, tau) = small();
        let pds = vec![0.8, -0.2, 1.5, 0.0];
        let g = vec![0.0, 0.0, 1.0];
        let priors = VolumePriors {
            pds: &pds,
            g: &g,
            blocks: None,
        };
        let w = VolumeWeights {
            r_ut: 0.7,
            r_u: 0.0,
            r_g: 0.4,
            s_u: 0.2,
            mu_s: 0.5,
        };
        let u0 = vec![0.2, 0.2, 0.2];
        let before = volume_objective(&a, &tau, &u0, &priors, &w);
        let u = update_u(&a, &tau, &priors, &w, &u0, &params(40)).unwrap();
        assert!(volume_objective(&a, &tau, &u, &priors, &w) < before);
    }

    #[test]
    fn balance_rule() {
        assert_eq!(balance_weight(1.0, 4.0, 2.0, 1e6), 2.0);
        assert_eq!(balance_weight(2.0, 4.0, 0.0, 1e6), 2.0);
        assert_eq!(balance_weight(1.0, 0.0, 3.0, 1e6), 1.0);
        assert_eq!(balance_weight(1.0, 1.0, 1e-12, 1e3), 1e3);
    }
}
