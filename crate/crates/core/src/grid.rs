//! Voxel grids and albedo volumes.
//!
//! Axis convention: `x` horizontal, `y` vertical, `z` depth away from the
//! relay wall. Volumes are stored i-major with the depth index contiguous.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub voxel_size: Vec3,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, voxel_size: Vec3) -> Result<Self> {
        let grid = VoxelGrid {
            dims,
            origin,
            voxel_size,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid covering the box `[lo, lo + extent]` with the given number of voxels per axis.
    pub fn from_extent(dims: [usize; 3], lo: Vec3, extent: Vec3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("grid dims must be >= 1, got {dims:?}")));
        }
        let voxel_size = [
            extent[0] / dims[0] as f64,
            extent[1] / dims[1] as f64,
            extent[2] / dims[2] as f64,
        ];
        Self::new(dims, lo, voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Geometry(format!(
                "grid dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.voxel_size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Geometry(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size.iter().product()
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + (i as f64 + 0.5) * self.voxel_size[0],
            self.origin[1] + (j as f64 + 0.5) * self.voxel_size[1],
            self.origin[2] + (k as f64 + 0.5) * self.voxel_size[2],
        ]
    }

    /// Upper corner of the physical extent.
    pub fn upper(&self) -> Vec3 {
        [
            self.origin[0] + self.dims[0] as f64 * self.voxel_size[0],
            self.origin[1] + self.dims[1] as f64 * self.voxel_size[1],
            self.origin[2] + self.dims[2] as f64 * self.voxel_size[2],
        ]
    }

    /// Flat index of `(i, j, k)` in the i-major, k-contiguous layout.
    #[inline]
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Continuous depth-plane coordinate of `z`: voxel `k` has its center at `k`.
    pub fn depth_coordinate(&self, z: f64) -> f64 {
        (z - self.origin[2]) / self.voxel_size[2] - 0.5
    }

    /// Nearest depth-plane index to `z`. Half-way ties go to the plane nearer the wall.
    pub fn nearest_depth_index(&self, z: f64) -> Option<usize> {
        let kc = self.depth_coordinate(z);
        let k = round_half_down(kc);
        if k < 0.0 || k >= self.dims[2] as f64 {
            None
        } else {
            Some(k as usize)
        }
    }
}

/// Rounds to the nearest integer, sending exact halves down.
pub(crate) fn round_half_down(x: f64) -> f64 {
    let r = x.round();
    if (r - x - 0.5).abs() == 0.0 {
        r - 1.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoVolume {
    pub grid: VoxelGrid,
    pub values: Array3<f64>,
}

impl AlbedoVolume {
    pub fn zeros(grid: &VoxelGrid) -> Self {
        let [i, j, k] = grid.dims;
        AlbedoVolume {
            grid: grid.clone(),
            values: Array3::zeros((i, j, k)),
        }
    }

    pub fn from_vec(grid: &VoxelGrid, data: Vec<f64>) -> Result<Self> {
        let [i, j, k] = grid.dims;
        if data.len() != i * j * k {
            return Err(Error::mismatch(i * j * k, data.len()));
        }
        let values = Array3::from_shape_vec((i, j, k), data)
            .map_err(|e| Error::Validation(e.to_string()))?;
        Ok(AlbedoVolume {
            grid: grid.clone(),
            values,
        })
    }

    /// Contiguous view of the values in flat index order.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("volumes are kept in standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.values
            .as_slice_mut()
            .expect("volumes are kept in standard layout")
    }

    pub fn into_vec(self) -> Vec<f64> {
        let (v, _) = self.values.into_raw_vec_and_offset();
        v
    }

    pub fn max(&self) -> f64 {
        self.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}
