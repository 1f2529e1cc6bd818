//! Surfaces: volumes with at most one positive albedo per pixel column, and
//! their indicator/depth/albedo matrix representation.
//!
//! A background pixel is stored as `None`; its depth and albedo are absent
//! rather than NaN, so the linkage `e = 0 <=> d absent <=> alpha absent` holds
//! by construction.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{AlbedoVolume, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePixel {
    /// Depth-plane index in `0..K`.
    pub depth: usize,
    /// Strictly positive albedo.
    pub albedo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceG {
    pub grid: VoxelGrid,
    pub pixels: Array2<Option<SurfacePixel>>,
}

impl SurfaceG {
    pub fn empty(grid: &VoxelGrid) -> Self {
        SurfaceG {
            grid: grid.clone(),
            pixels: Array2::from_elem((grid.dims[0], grid.dims[1]), None),
        }
    }

    /// Builds a surface from the three matrices, checking their linkage.
    pub fn from_parts(
        grid: &VoxelGrid,
        indicator: &Array2<u8>,
        depth: &Array2<Option<usize>>,
        albedo: &Array2<Option<f64>>,
    ) -> Result<Self> {
        let shape = (grid.dims[0], grid.dims[1]);
        for (name, dim) in [
            ("indicator", indicator.dim()),
            ("depth", depth.dim()),
            ("albedo", albedo.dim()),
        ] {
            if dim != shape {
                return Err(Error::mismatch(
                    format!("{name} {shape:?}"),
                    format!("{dim:?}"),
                ));
            }
        }
        let mut surface = SurfaceG::empty(grid);
        for ((i, j), &e) in indicator.indexed_iter() {
            let px = match (e, depth[(i, j)], albedo[(i, j)]) {
                (0, None, None) => None,
                (1, Some(d), Some(a)) => {
                    if d >= grid.dims[2] {
                        return Err(Error::Validation(format!(
                            "pixel ({i}, {j}): depth index {d} outside 0..{}",
                            grid.dims[2]
                        )));
                    }
                    if !(a.is_finite() && a > 0.0) {
                        return Err(Error::Validation(format!(
                            "pixel ({i}, {j}): foreground albedo must be positive, got {a}"
                        )));
                    }
                    Some(SurfacePixel {
                        depth: d,
                        albedo: a,
                    })
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "pixel ({i}, {j}): indicator, depth and albedo disagree on foreground membership"
                    )))
                }
            };
            surface.pixels[(i, j)] = px;
        }
        Ok(surface)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = (self.grid.dims[0], self.grid.dims[1]);
        if self.pixels.dim() != shape {
            return Err(Error::mismatch(format!("{shape:?}"), format!("{:?}", self.pixels.dim())));
        }
        for ((i, j), px) in self.pixels.indexed_iter() {
            if let Some(p) = px {
                if p.depth >= self.grid.dims[2] || !(p.albedo.is_finite() && p.albedo > 0.0) {
                    return Err(Error::Validation(format!(
                        "pixel ({i}, {j}) violates surface invariants: {p:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn indicator(&self) -> Array2<u8> {
        self.pixels.mapv(|p| u8::from(p.is_some()))
    }

    pub fn depth(&self) -> Array2<Option<usize>> {
        self.pixels.mapv(|p| p.map(|p| p.depth))
    }

    pub fn albedo(&self) -> Array2<Option<f64>> {
        self.pixels.mapv(|p| p.map(|p| p.albedo))
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Embeds the surface into the voxel grid.
    pub fn to_volume(&self) -> AlbedoVolume {
        let mut vol = AlbedoVolume::zeros(&self.grid);
        for ((i, j), px) in self.pixels.indexed_iter() {
            if let Some(p) = px {
                vol.values[(i, j, p.depth)] = p.albedo;
            }
        }
        vol
    }

    /// Swaps the two lateral axes.
    pub fn transposed(&self) -> SurfaceG {
        let g = &self.grid;
        let grid = VoxelGrid {
            dims: [g.dims[1], g.dims[0], g.dims[2]],
            origin: [g.origin[1], g.origin[0], g.origin[2]],
            voxel_size: [g.voxel_size[1], g.voxel_size[0], g.voxel_size[2]],
        };
        SurfaceG {
            grid,
            pixels: self.pixels.t().to_owned(),
        }
    }
}

pub fn surface_to_volume(g: &SurfaceG) -> AlbedoVolume {
    g.to_volume()
}

/// Inverse of [`surface_to_volume`] on its image.
///
/// Fails with [`Error::Membership`] on the first column holding two or more
/// nonzero entries or any negative entry.
pub fn volume_to_surface(u: &AlbedoVolume) -> Result<SurfaceG> {
    let mut surface = SurfaceG::empty(&u.grid);
    for ((i, j), px) in surface.pixels.indexed_iter_mut() {
        let column = u.values.slice(ndarray::s![i, j, ..]);
        let mut found = None;
        let mut count = 0;
        let mut negative = false;
        for (k, &v) in column.iter().enumerate() {
            if v != 0.0 {
                count += 1;
                negative |= v < 0.0;
                found = Some((k, v));
            }
        }
        if count > 1 || negative {
            return Err(Error::Membership {
                pixel: (i, j),
                count,
                negative,
            });
        }
        *px = found.map(|(depth, albedo)| SurfacePixel { depth, albedo });
    }
    Ok(surface)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid8() -> VoxelGrid {
        VoxelGrid::new([8, 8, 8], [0.0; 3], [0.1; 3]).unwrap()
    }

    #[test]
    fn empty_surface_embeds_to_zero() {
        let g = SurfaceG::empty(&grid8());
        assert!(g.to_volume().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_embedding() {
        let mut g = SurfaceG::empty(&grid8());
        g.pixels[(2, 3)] = Some(SurfacePixel {
            depth: 5,
            albedo: 1.5,
        });
        let vol = g.to_volume();
        let nonzero: Vec<_> = vol
            .values
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, (2, 3, 5));
        assert_eq!(*nonzero[0].1, 1.5);
    }

    #[test]
    fn zero_volume_is_empty_surface() {
        let s = volume_to_surface(&AlbedoVolume::zeros(&grid8())).unwrap();
        assert_eq!(s.foreground_count(), 0);
    }

    #[test]
    fn two_entries_in_column_rejected() {
        let mut vol = AlbedoVolume::zeros(&grid8());
        vol.values[(1, 1, 2)] = 1.0;
        vol.values[(1, 1, 6)] = 0.5;
        match volume_to_surface(&vol) {
            Err(Error::Membership { pixel, count, .. }) => {
                assert_eq!(pixel, (1, 1));
                assert_eq!(count, 2);
            }
            other => panic!("expected membership error, got {other:?}"),
        }
    }

    #[test]
    fn negative_entry_rejected() {
        let mut vol = AlbedoVolume::zeros(&grid8());
        vol.values[(0, 4, 2)] = -1.0;
        assert!(matches!(
            volume_to_surface(&vol),
            Err(Error::Membership { negative: true, .. })
        ));
    }

    #[test]
    fn from_parts_checks_linkage() {
        let grid = grid8();
        let mut e = Array2::<u8>::zeros((8, 8));
        let mut d = Array2::from_elem((8, 8), None);
        let a = Array2::from_elem((8, 8), None);
        e[(0, 0)] = 1;
        d[(0, 0)] = Some(3);
        assert!(matches!(
            SurfaceG::from_parts(&grid, &e, &d, &a),
            Err(Error::Validation(_))
        ));
    }
}
