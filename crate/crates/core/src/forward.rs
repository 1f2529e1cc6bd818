//! Matrix-free transient forward operator and its adjoint.
//!
//! Each voxel center contributes `u * dV / (|x_i - x|^2 |x_d - x|^2)` to the
//! single time bin nearest to its optical path `|x_i - x| + |x_d - x|`.
//! Applying the operator row by row (per pair) and the adjoint column by
//! column (per voxel) keeps both exact transposes of the same sparse pattern.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{AlbedoVolume, Vec3, VoxelGrid};
use crate::scene::SceneShape;
use crate::signal::{MeasurementGeometry, MeasurementPair, TransientSignal};
use crate::solvers::LinearMap;

#[derive(Debug, Clone)]
pub struct ForwardOperator {
    pub grid: VoxelGrid,
    pub geometry: MeasurementGeometry,
    /// Multiply each contribution by `cos(theta_i) * cos(theta_d)`, the angles
    /// between the two rays and the wall normal.
    pub cosine_factor: bool,
}

#[inline]
fn dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Bin and weight of a point scatterer with weight `w` at `x` for one pair.
#[inline]
fn contribution(
    geometry: &MeasurementGeometry,
    pair: &MeasurementPair,
    x: &Vec3,
    w: f64,
    cosine: bool,
) -> Option<(usize, f64)> {
    let ri = dist(&pair.illum, x);
    let rd = dist(&pair.detect, x);
    if ri == 0.0 || rd == 0.0 {
        return None;
    }
    let q = geometry.bin_of(ri + rd)?;
    let mut weight = w / (ri * ri * rd * rd);
    if cosine {
        weight *= ((x[2] - pair.illum[2]) / ri).max(0.0) * ((x[2] - pair.detect[2]) / rd).max(0.0);
    }
    Some((q, weight))
}

impl ForwardOperator {
    pub fn new(grid: &VoxelGrid, geometry: &MeasurementGeometry) -> Result<Self> {
        grid.validate()?;
        geometry.validate()?;
        Ok(ForwardOperator {
            grid: grid.clone(),
            geometry: geometry.clone(),
            cosine_factor: false,
        })
    }

    pub fn with_cosine(mut self, on: bool) -> Self {
        self.cosine_factor = on;
        self
    }

    pub fn signal_len(&self) -> usize {
        self.geometry.num_pairs() * self.geometry.num_bins
    }

    fn centers(&self) -> Vec<Vec3> {
        let [ni, nj, nk] = self.grid.dims;
        let mut out = Vec::with_capacity(ni * nj * nk);
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    out.push(self.grid.center(i, j, k));
                }
            }
        }
        out
    }

    /// `tau = A u` on flat buffers.
    pub fn apply_flat(&self, u: &[f64], tau: &mut [f64]) {
        assert_eq!(u.len(), self.grid.num_voxels());
        assert_eq!(tau.len(), self.signal_len());
        let q_len = self.geometry.num_bins;
        let dv = self.grid.voxel_volume();
        let centers = self.centers();
        tau.par_chunks_mut(q_len)
            .zip(self.geometry.pairs.par_iter())
            .for_each(|(row, pair)| {
                row.fill(0.0);
                for (x, &val) in centers.iter().zip(u) {
                    if val == 0.0 {
                        continue;
                    }
                    if let Some((q, w)) =
                        contribution(&self.geometry, pair, x, dv, self.cosine_factor)
                    {
                        row[q] += w * val;
                    }
                }
            });
    }

    /// `u = A^T tau` on flat buffers.
    pub fn adjoint_flat(&self, tau: &[f64], u: &mut [f64]) {
        assert_eq!(u.len(), self.grid.num_voxels());
        assert_eq!(tau.len(), self.signal_len());
        let q_len = self.geometry.num_bins;
        let dv = self.grid.voxel_volume();
        let centers = self.centers();
        u.par_iter_mut().zip(centers.par_iter()).for_each(|(out, x)| {
            let mut acc = 0.0;
            for (p, pair) in self.geometry.pairs.iter().enumerate() {
                if let Some((q, w)) = contribution(&self.geometry, pair, x, dv, self.cosine_factor)
                {
                    acc += w * tau[p * q_len + q];
                }
            }
            *out = acc;
        });
    }

    pub fn forward(&self, u: &AlbedoVolume) -> Result<TransientSignal> {
        if u.grid != self.grid {
            return Err(Error::mismatch(
                format!("grid {:?}", self.grid.dims),
                format!("grid {:?}", u.grid.dims),
            ));
        }
        let mut tau = TransientSignal::zeros(&self.geometry);
        self.apply_flat(u.as_slice(), tau.as_mut_slice());
        Ok(tau)
    }

    pub fn adjoint(&self, tau: &TransientSignal) -> Result<AlbedoVolume> {
        if tau.geometry != self.geometry {
            return Err(Error::mismatch("operator geometry", "signal geometry"));
        }
        let mut u = AlbedoVolume::zeros(&self.grid);
        self.adjoint_flat(tau.as_slice(), u.as_mut_slice());
        Ok(u)
    }
}

impl LinearMap for ForwardOperator {
    fn rows(&self) -> usize {
        self.signal_len()
    }

    fn cols(&self) -> usize {
        self.grid.num_voxels()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_flat(x, y);
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        self.adjoint_flat(y, x);
    }
}

pub fn forward(u: &AlbedoVolume, op: &ForwardOperator) -> Result<TransientSignal> {
    op.forward(u)
}

pub fn adjoint(tau: &TransientSignal, op: &ForwardOperator) -> Result<AlbedoVolume> {
    op.adjoint(tau)
}

/// Transient of an analytic scene rendered on a finer lateral lattice.
///
/// Every pixel is split into `supersample^2` sub-pixels, each sampled at its
/// exact (unquantized) surface depth and binned by its exact path length.
/// Each sample carries `dV / supersample^2`, so a fronto-parallel patch lying
/// on a depth plane renders like its voxelized surface under [`ForwardOperator`].
pub fn render_scene_transient(
    scene: &SceneShape,
    grid: &VoxelGrid,
    geometry: &MeasurementGeometry,
    supersample: usize,
    cosine_factor: bool,
) -> Result<TransientSignal> {
    scene.validate(grid)?;
    geometry.validate()?;
    let ss = supersample.max(1);
    let w = grid.voxel_volume() / (ss * ss) as f64;
    let mut samples = Vec::new();
    for i in 0..grid.dims[0] {
        for j in 0..grid.dims[1] {
            for a in 0..ss {
                for b in 0..ss {
                    let x = grid.origin[0] + (i as f64 + (a as f64 + 0.5) / ss as f64) * grid.voxel_size[0];
                    let y = grid.origin[1] + (j as f64 + (b as f64 + 0.5) / ss as f64) * grid.voxel_size[1];
                    if let Some((z, albedo)) = scene.sample(grid, x, y) {
                        samples.push(([x, y, z], albedo));
                    }
                }
            }
        }
    }
    let q_len = geometry.num_bins;
    let mut tau = TransientSignal::zeros(geometry);
    tau.as_mut_slice()
        .par_chunks_mut(q_len)
        .zip(geometry.pairs.par_iter())
        .for_each(|(row, pair)| {
            for (x, albedo) in &samples {
                if let Some((q, wt)) = contribution(geometry, pair, x, w, cosine_factor) {
                    row[q] += wt * albedo;
                }
            }
        });
    Ok(tau)
}
