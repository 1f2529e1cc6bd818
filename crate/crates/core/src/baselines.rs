//! Regularization-free baselines and surface metrics.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::driver::init_tau;
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::grid::AlbedoVolume;
use crate::signal::{PhotonHistogram, TransientSignal};
use crate::solvers::{dot, norm2, LinearMap};
use crate::surface::SurfaceG;
use crate::surfaciation::surfaciate;

/// `A^T (d / N)`.
pub fn back_projection(hist: &PhotonHistogram, op: &ForwardOperator) -> Result<AlbedoVolume> {
    op.adjoint(&init_tau(hist)?)
}

/// Normalized 1D Gaussian taps on `[-ceil(3 sigma), ceil(3 sigma)]`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn blur_axis(v: &Array3<f64>, taps: &[f64], axis: usize) -> Array3<f64> {
    let dims = v.dim();
    let n = [dims.0, dims.1, dims.2][axis] as i64;
    let r = (taps.len() / 2) as i64;
    Array3::from_shape_fn(dims, |(i, j, k)| {
        let pos = [i, j, k];
        let mut acc = 0.0;
        for (t, w) in taps.iter().enumerate() {
            let mut src = pos;
            src[axis] = clamp_index(pos[axis] as i64 + t as i64 - r, n as usize);
            acc += w * v[(src[0], src[1], src[2])];
        }
        acc
    })
}

/// Negated 6-neighbor Laplacian of the Gaussian-blurred volume, before
/// clamping. Boundaries replicate the edge voxel.
pub fn log_filter(vol: &AlbedoVolume, sigma: f64) -> Result<AlbedoVolume> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("LoG sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_taps(sigma);
    let mut g = vol.values.clone();
    for axis in 0..3 {
        g = blur_axis(&g, &taps, axis);
    }
    let (ni, nj, nk) = g.dim();
    let values = Array3::from_shape_fn((ni, nj, nk), |(i, j, k)| {
        let c = g[(i, j, k)];
        let (i, j, k) = (i as i64, j as i64, k as i64);
        let at = |a: i64, b: i64, c: i64| g[(clamp_index(a, ni), clamp_index(b, nj), clamp_index(c, nk))];
        let sum = at(i - 1, j, k)
            + at(i + 1, j, k)
            + at(i, j - 1, k)
            + at(i, j + 1, k)
            + at(i, j, k - 1)
            + at(i, j, k + 1);
        6.0 * c - sum
    });
    Ok(AlbedoVolume {
        grid: vol.grid.clone(),
        values,
    })
}

/// Laplacian-of-Gaussian filtered back-projection, negatives clamped to 0.
pub fn log_bp(hist: &PhotonHistogram, op: &ForwardOperator, sigma: f64) -> Result<AlbedoVolume> {
    let mut out = log_filter(&back_projection(hist, op)?, sigma)?;
    out.values.mapv_inplace(|v| v.max(0.0));
    Ok(out)
}

/// Relative curves of a least-squares CG run, one entry per iterate
/// starting with the initial one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsCurves {
    /// `|A^T tau - A^T A u| / |A^T tau|`.
    pub normal_residual: Vec<f64>,
    /// `|A u - tau| / |tau|`.
    pub misfit: Vec<f64>,
}

impl LsCurves {
    /// `(iteration, ln normal residual, ln misfit)` rows.
    pub fn ln_rows(&self) -> Vec<(usize, f64, f64)> {
        self.normal_residual
            .iter()
            .zip(&self.misfit)
            .enumerate()
            .map(|(i, (r, m))| (i, r.ln(), m.ln()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LsReconstruction {
    pub volume: AlbedoVolume,
    pub curves: LsCurves,
}

/// CG on `A^T A u = A^T tau` from `u = A^T tau`, in the CGLS form that
/// tracks the data residual alongside the normal-equation residual.
pub fn ls_cg<A: LinearMap + ?Sized>(a: &A, tau: &[f64], u0: &[f64], iters: usize) -> (Vec<f64>, LsCurves) {
    let mut u = u0.to_vec();
    let mut au = vec![0.0; a.rows()];
    a.apply(&u, &mut au);
    let mut r: Vec<f64> = tau.iter().zip(&au).map(|(t, v)| t - v).collect();
    let mut aty = vec![0.0; a.cols()];
    a.apply_adjoint(tau, &mut aty);
    let (aty_norm, tau_norm) = (norm2(&aty), norm2(tau));
    let rel = |x: f64, d: f64| if d > 0.0 { x / d } else { 0.0 };
    let mut s = vec![0.0; a.cols()];
    a.apply_adjoint(&r, &mut s);
    let mut gamma = dot(&s, &s);
    let mut curves = LsCurves {
        normal_residual: vec![rel(gamma.sqrt(), aty_norm)],
        misfit: vec![rel(norm2(&r), tau_norm)],
    };
    let mut p = s.clone();
    let mut q = vec![0.0; a.rows()];
    for _ in 0..iters {
        if gamma == 0.0 {
            break;
        }
        a.apply(&p, &mut q);
        let qq = dot(&q, &q);
        if !(qq.is_finite() && qq > 0.0) {
            break;
        }
        let alpha = gamma / qq;
        for (ui, pi) in u.iter_mut().zip(&p) {
            *ui += alpha * pi;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        a.apply_adjoint(&r, &mut s);
        let gamma_new = dot(&s, &s);
        curves.normal_residual.push(rel(gamma_new.sqrt(), aty_norm));
        curves.misfit.push(rel(norm2(&r), tau_norm));
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
    }
    (u, curves)
}

/// Regularization-free least squares started from back-projection.
pub fn ls_cg_reconstruct(
    hist: &PhotonHistogram,
    op: &ForwardOperator,
    iters: usize,
) -> Result<LsReconstruction> {
    if iters == 0 {
        return Err(Error::Config("least-squares CG needs at least one iteration".into()));
    }
    let tau = init_tau(hist)?;
    let bp = op.adjoint(&tau)?;
    let (u, curves) = ls_cg(op, tau.as_slice(), bp.as_slice(), iters);
    Ok(LsReconstruction {
        volume: AlbedoVolume::from_vec(&op.grid, u)?,
        curves,
    })
}

/// Zeroes entries below `fraction * max`, then surfaciates.
pub fn thresholded_surface(vol: &AlbedoVolume, fraction: f64) -> Result<SurfaceG> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("threshold fraction must lie in [0, 1], got {fraction}")));
    }
    let cut = fraction * vol.max().max(0.0);
    let mut kept = vol.clone();
    kept.values.mapv_inplace(|v| if v >= cut { v } else { 0.0 });
    surfaciate(&kept)
}

/// Foreground overlap and depth agreement between two surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub iou: f64,
    /// Over pixels that are foreground in both; absent when there are none.
    pub depth_rmse_voxels: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    /// The truth has no foreground; every ratio is reported as 0.
    pub empty_truth: bool,
}

pub fn metrics(recon: &SurfaceG, truth: &SurfaceG) -> Result<SurfaceMetrics> {
    // depths compare as indices, so only the lateral shape must agree
    if recon.grid.dims[..2] != truth.grid.dims[..2] {
        return Err(Error::mismatch(
            format!("{:?}", &truth.grid.dims[..2]),
            format!("{:?}", &recon.grid.dims[..2]),
        ));
    }
    let (mut both, mut r_only, mut t_only, mut sq) = (0usize, 0usize, 0usize, 0.0);
    for (r, t) in recon.pixels.iter().zip(truth.pixels.iter()) {
        match (r, t) {
            (Some(r), Some(t)) => {
                both += 1;
                let d = r.depth as f64 - t.depth as f64;
                sq += d * d;
            }
            (Some(_), None) => r_only += 1,
            (None, Some(_)) => t_only += 1,
            (None, None) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let empty_truth = both + t_only == 0;
    if empty_truth {
        return Ok(SurfaceMetrics {
            iou: 0.0,
            depth_rmse_voxels: None,
            precision: 0.0,
            recall: 0.0,
            empty_truth,
        });
    }
    Ok(SurfaceMetrics {
        iou: ratio(both, both + r_only + t_only),
        depth_rmse_voxels: (both > 0).then(|| (sq / both as f64).sqrt()),
        precision: ratio(both, both + r_only),
        recall: ratio(both, both + t_only),
        empty_truth,
    })
}

/// `|A u - tau| / |tau|`.
pub fn rel_misfit(u: &AlbedoVolume, tau: &TransientSignal, op: &ForwardOperator) -> Result<f64> {
    let tn = norm2(tau.as_slice());
    if tn == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let au = op.forward(u)?;
    let diff: Vec<f64> = au.as_slice().iter().zip(tau.as_slice()).map(|(a, t)| a - t).collect();
    Ok(norm2(&diff) / tn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;
    use crate::signal::MeasurementGeometry;
    use crate::solvers::DenseMap;
    use crate::surface::SurfacePixel;
    use ndarray::Array2;

    fn setup() -> (VoxelGrid, ForwardOperator) {
        let grid = VoxelGrid::from_extent([8, 8, 6], [-0.5, -0.5, 0.4], [1.0, 1.0, 0.3]).unwrap();
        let geo = MeasurementGeometry::confocal_raster(3, 3, 0.4, [0.0, 0.0], 32e-12, 192).unwrap();
        let op = ForwardOperator::new(&grid, &geo).unwrap();
        (grid, op)
    }

    fn hist_from(tau: &TransientSignal, pulses: u64) -> PhotonHistogram {
        let counts = tau.values.mapv(|t| (t * pulses as f64).round() as u32);
        PhotonHistogram {
            geometry: tau.geometry.clone(),
            counts,
            pulses,
            rng_id: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn zero_histogram_back_projects_to_zero() {
        let (_, op) = setup();
        let h = hist_from(&TransientSignal::zeros(&op.geometry), 100);
        assert!(back_projection(&h, &op).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(log_bp(&h, &op, 1.0).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn back_projection_peaks_on_the_voxel_shell() {
        let (grid, op) = setup();
        let mut u = AlbedoVolume::zeros(&grid);
        u.values[(4, 3, 2)] = 1.0;
        let tau = op.forward(&u).unwrap();
        let scale = 1e4 / tau.values.fold(0.0f64, |m, v| m.max(*v));
        let scaled = TransientSignal::from_vec(&op.geometry, tau.as_slice().iter().map(|t| t * scale / 1e6).collect()).unwrap();
        let bp = back_projection(&hist_from(&scaled, 1_000_000), &op).unwrap();
        let (imax, _) = bp
            .as_slice()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        let k = imax % 6;
        let j = (imax / 6) % 8;
        let i = imax / 48;
        // the maximizer shares every pair's time bin with the true voxel
        for pair in &op.geometry.pairs {
            let path = |x: [f64; 3]| {
                let d = |a: [f64; 3]| ((a[0] - x[0]).powi(2) + (a[1] - x[1]).powi(2) + (a[2] - x[2]).powi(2)).sqrt();
                d(pair.illum) + d(pair.detect)
            };
            assert_eq!(
                op.geometry.bin_of(path(grid.center(i, j, k))),
                op.geometry.bin_of(path(grid.center(4, 3, 2)))
            );
        }
    }

    #[test]
    fn log_of_constant_is_zero() {
        let (grid, _) = setup();
        let mut v = AlbedoVolume::zeros(&grid);
        v.values.fill(3.5);
        let out = log_filter(&v, 1.0).unwrap();
        assert!(out.as_slice().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn log_impulse_matches_dense_convolution() {
        let grid = VoxelGrid::from_extent([15, 15, 15], [0.0, 0.0, 0.4], [1.0, 1.0, 1.0]).unwrap();
        let mut v = AlbedoVolume::zeros(&grid);
        v.values[(7, 7, 7)] = 2.0;
        let sigma = 1.0;
        let out = log_filter(&v, sigma).unwrap();
        // dense 3D Gaussian kernel, then the stencil, evaluated independently
        let g = |x: i64, y: i64, z: i64| -> f64 {
            let r = 3i64;
            if x.abs() > r || y.abs() > r || z.abs() > r {
                return 0.0;
            }
            let norm: f64 = (-r..=r).map(|t| (-(t * t) as f64 / 2.0).exp()).sum();
            2.0 * (-((x * x + y * y + z * z) as f64) / 2.0).exp() / norm.powi(3)
        };
        for i in 2..13i64 {
            for j in 2..13i64 {
                for k in 2..13i64 {
                    let (x, y, z) = (i - 7, j - 7, k - 7);
                    let expect = 6.0 * g(x, y, z)
                        - g(x - 1, y, z)
                        - g(x + 1, y, z)
                        - g(x, y - 1, z)
                        - g(x, y + 1, z)
                        - g(x, y, z - 1)
                        - g(x, y, z + 1);
                    let got = out.values[(i as usize, j as usize, k as usize)];
                    assert!((got - expect).abs() < 1e-14, "({i},{j},{k}) {got} vs {expect}");
                }
            }
        }
        assert!(out.values[(7, 7, 7)] > 0.0);
        assert!(out.values[(7, 7, 10)] < 0.0);
    }

    #[test]
    fn log_filter_is_linear_in_scale() {
        let (grid, _) = setup();
        let data: Vec<f64> = (0..grid.num_voxels()).map(|i| ((i * 37) % 11) as f64 - 4.0).collect();
        let v = AlbedoVolume::from_vec(&grid, data.clone()).unwrap();
        let v3 = AlbedoVolume::from_vec(&grid, data.iter().map(|x| 3.0 * x).collect()).unwrap();
        let (a, b) = (log_filter(&v, 1.0).unwrap(), log_filter(&v3, 1.0).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((3.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn cgls_exact_on_invertible_instance() {
        let a = DenseMap::new(3, 3, vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x = [1.0, -2.0, 0.5];
        let mut tau = vec![0.0; 3];
        a.apply(&x, &mut tau);
        let (u, curves) = ls_cg(&a, &tau, &x, 1);
        assert_eq!(u, x.to_vec());
        assert!(curves.normal_residual[0] < 1e-15 && curves.misfit[0] < 1e-15);
        let (u, curves) = ls_cg(&a, &tau, &[0.0; 3], 3);
        for (ui, xi) in u.iter().zip(&x) {
            assert!((ui - xi).abs() < 1e-10);
        }
        assert!(curves.misfit.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    fn surface(grid: &VoxelGrid, f: impl Fn(usize, usize) -> Option<usize>) -> SurfaceG {
        let mut s = SurfaceG::empty(grid);
        for ((i, j), px) in s.pixels.indexed_iter_mut() {
            *px = f(i, j).map(|d| SurfacePixel { depth: d, albedo: 1.0 });
        }
        s
    }

    #[test]
    fn metric_examples() {
        let (grid, _) = setup();
        let truth = surface(&grid, |i, _| (i < 4).then_some(4));
        let m = metrics(&truth, &truth).unwrap();
        assert_eq!((m.iou, m.depth_rmse_voxels, m.precision, m.recall), (1.0, Some(0.0), 1.0, 1.0));
        let off = surface(&grid, |i, _| (i < 4).then_some(5));
        assert_eq!(metrics(&off, &truth).unwrap().depth_rmse_voxels, Some(1.0));
        let disjoint = surface(&grid, |i, _| (i >= 4).then_some(4));
        let m = metrics(&disjoint, &truth).unwrap();
        assert_eq!((m.iou, m.depth_rmse_voxels), (0.0, None));
        let empty = SurfaceG::empty(&grid);
        let m = metrics(&truth, &empty).unwrap();
        assert!(m.empty_truth && m.iou == 0.0);
        let half = surface(&grid, |i, j| (i < 4 && j < 4).then_some(4));
        let m = metrics(&half, &truth).unwrap();
        assert_eq!((m.iou, m.precision, m.recall), (0.5, 1.0, 0.5));
    }

    #[test]
    fn rel_misfit_examples() {
        let (grid, op) = setup();
        let u = AlbedoVolume::from_vec(&grid, (0..grid.num_voxels()).map(|i| (i % 5) as f64).collect()).unwrap();
        let tau = op.forward(&u).unwrap();
        assert_eq!(rel_misfit(&u, &tau, &op).unwrap(), 0.0);
        assert_eq!(rel_misfit(&AlbedoVolume::zeros(&grid), &tau, &op).unwrap(), 1.0);
        let z = TransientSignal {
            geometry: op.geometry.clone(),
            values: Array2::zeros(tau.values.dim()),
        };
        assert!(matches!(rel_misfit(&u, &z, &op), Err(Error::ZeroSignal)));
    }
}
