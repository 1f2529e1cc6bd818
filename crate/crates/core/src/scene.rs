//! Synthetic scenes: analytic height fields and their voxelized surfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::surface::{SurfaceG, SurfacePixel};

const EXTENT_SLACK: f64 = 1e-9;

/// Scene description as it appears in scene JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneShape {
    /// Square pyramid, apex toward the wall, centered on the grid's lateral center.
    Pyramid {
        base: f64,
        height: f64,
        standoff: f64,
        #[serde(default = "unit_albedo")]
        albedo: f64,
    },
    /// Fronto-parallel rectangle `x in [x0, x1)`, `y in [y0, y1)` at depth `depth`.
    Plane {
        x: [f64; 2],
        y: [f64; 2],
        depth: f64,
        #[serde(default = "unit_albedo")]
        albedo: f64,
    },
}

fn unit_albedo() -> f64 {
    1.0
}

impl SceneShape {
    /// Continuous depth (meters) and albedo of the surface above `(x, y)`.
    pub fn sample(&self, grid: &VoxelGrid, x: f64, y: f64) -> Option<(f64, f64)> {
        match *self {
            SceneShape::Pyramid {
                base,
                height,
                standoff,
                albedo,
            } => {
                let (cx, cy) = lateral_center(grid);
                let half = base / 2.0;
                let r = (x - cx).abs().max((y - cy).abs());
                if half <= 0.0 || r > half {
                    return None;
                }
                Some((standoff + height * r / half, albedo))
            }
            SceneShape::Plane {
                x: [x0, x1],
                y: [y0, y1],
                depth,
                albedo,
            } => (x >= x0 && x < x1 && y >= y0 && y < y1).then_some((depth, albedo)),
        }
    }

    pub fn validate(&self, grid: &VoxelGrid) -> Result<()> {
        let lo = grid.origin;
        let hi = grid.upper();
        let inside_z = |z: f64| z >= lo[2] - EXTENT_SLACK && z <= hi[2] + EXTENT_SLACK;
        match *self {
            SceneShape::Pyramid {
                base,
                height,
                standoff,
                albedo,
            } => {
                if !(base >= 0.0 && height >= 0.0 && albedo > 0.0) {
                    return Err(Error::Geometry(
                        "pyramid needs base >= 0, height >= 0 and positive albedo".into(),
                    ));
                }
                let (cx, cy) = lateral_center(grid);
                let half = base / 2.0;
                if cx - half < lo[0] - EXTENT_SLACK
                    || cx + half > hi[0] + EXTENT_SLACK
                    || cy - half < lo[1] - EXTENT_SLACK
                    || cy + half > hi[1] + EXTENT_SLACK
                {
                    return Err(Error::Geometry(format!(
                        "pyramid base {base} m exceeds the grid's lateral extent"
                    )));
                }
                if !inside_z(standoff) || !inside_z(standoff + height) {
                    return Err(Error::Geometry(format!(
                        "pyramid depth range [{standoff}, {}] m leaves the grid's depth range [{}, {}] m",
                        standoff + height,
                        lo[2],
                        hi[2]
                    )));
                }
            }
            SceneShape::Plane {
                x,
                y,
                depth,
                albedo,
            } => {
                if albedo.is_nan() || albedo <= 0.0 || x[1] < x[0] || y[1] < y[0] {
                    return Err(Error::Geometry(
                        "plane needs ordered extents and positive albedo".into(),
                    ));
                }
                if x[0] < lo[0] - EXTENT_SLACK
                    || x[1] > hi[0] + EXTENT_SLACK
                    || y[0] < lo[1] - EXTENT_SLACK
                    || y[1] > hi[1] + EXTENT_SLACK
                {
                    return Err(Error::Geometry("plane extent exceeds the grid".into()));
                }
                if !inside_z(depth) {
                    return Err(Error::Geometry(format!(
                        "plane depth {depth} m outside the grid's depth range"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Voxelizes the shape: each pixel center is sampled and its depth snapped
    /// to the nearest depth plane.
    pub fn to_surface(&self, grid: &VoxelGrid) -> Result<SurfaceG> {
        grid.validate()?;
        self.validate(grid)?;
        let mut surface = SurfaceG::empty(grid);
        for ((i, j), px) in surface.pixels.indexed_iter_mut() {
            let c = grid.center(i, j, 0);
            if let Some((z, albedo)) = self.sample(grid, c[0], c[1]) {
                let depth = grid
                    .nearest_depth_index(z)
                    .or_else(|| clamp_to_grid(grid, z))
                    .ok_or_else(|| Error::Geometry(format!("depth {z} m outside grid")))?;
                *px = Some(SurfacePixel { depth, albedo });
            }
        }
        Ok(surface)
    }
}

// Depths within the validation slack of the outer faces snap to the end planes.
fn clamp_to_grid(grid: &VoxelGrid, z: f64) -> Option<usize> {
    let lo = grid.origin[2];
    let hi = grid.upper()[2];
    if z >= lo - EXTENT_SLACK && z <= lo {
        Some(0)
    } else if z <= hi + EXTENT_SLACK && z >= hi {
        Some(grid.dims[2] - 1)
    } else {
        None
    }
}

fn lateral_center(grid: &VoxelGrid) -> (f64, f64) {
    let hi = grid.upper();
    (
        (grid.origin[0] + hi[0]) / 2.0,
        (grid.origin[1] + hi[1]) / 2.0,
    )
}

/// Square pyramid of the given base length and height whose apex sits
/// `standoff` meters from the wall, centered on the grid, albedo 1.
pub fn make_pyramid_scene(
    grid: &VoxelGrid,
    base: f64,
    height: f64,
    standoff: f64,
) -> Result<SurfaceG> {
    SceneShape::Pyramid {
        base,
        height,
        standoff,
        albedo: 1.0,
    }
    .to_surface(grid)
}

/// Constant-depth rectangle with uniform albedo. `extent` is
/// `[[x0, x1], [y0, y1]]` in meters, half-open.
pub fn make_plane_scene(
    grid: &VoxelGrid,
    extent: [[f64; 2]; 2],
    depth: f64,
    albedo: f64,
) -> Result<SurfaceG> {
    SceneShape::Plane {
        x: extent[0],
        y: extent[1],
        depth,
        albedo,
    }
    .to_surface(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2 x 2 x 0.4 m^3 domain, depth planes at 0.4125 + 0.025 k.
    fn fixture_grid() -> VoxelGrid {
        VoxelGrid::from_extent([32, 32, 16], [-1.0, -1.0, 0.4], [2.0, 2.0, 0.4]).unwrap()
    }

    #[test]
    fn pyramid_apex_and_base_depths() {
        let grid = fixture_grid();
        let s = make_pyramid_scene(&grid, 1.0, 0.2, 0.5).unwrap();
        assert_eq!(s.foreground_count(), 16 * 16);
        let apex = s.pixels[(16, 16)].unwrap();
        let z_apex = grid.center(0, 0, apex.depth)[2];
        assert!((z_apex - 0.5).abs() <= 0.5 * grid.voxel_size[2] + 1e-12);
        assert_eq!(apex.albedo, 1.0);
        let edge = s.pixels[(8, 16)].unwrap();
        let z_edge = grid.center(0, 0, edge.depth)[2];
        assert!((z_edge - 0.7).abs() <= grid.voxel_size[2] + 1e-12);
        assert!(s.pixels[(0, 0)].is_none());
        assert!(s.pixels[(7, 16)].is_none());
    }

    #[test]
    fn flat_pyramid_is_plate() {
        let grid = fixture_grid();
        let s = make_pyramid_scene(&grid, 1.0, 0.0, 0.5).unwrap();
        let depths: Vec<usize> = s.pixels.iter().flatten().map(|p| p.depth).collect();
        assert_eq!(depths.len(), 256);
        assert!(depths.iter().all(|&d| d == depths[0]));
    }

    #[test]
    fn pyramid_outside_grid_rejected() {
        let grid = fixture_grid();
        assert!(make_pyramid_scene(&grid, 3.0, 0.2, 0.5).is_err());
        assert!(make_pyramid_scene(&grid, 1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn full_plane_at_index_four() {
        let grid = VoxelGrid::new([8, 8, 8], [0.0, 0.0, 0.0], [0.1; 3]).unwrap();
        let s = make_plane_scene(&grid, [[0.0, 0.8], [0.0, 0.8]], 0.45, 1.0).unwrap();
        assert!(s.indicator().iter().all(|&e| e == 1));
        assert!(s.depth().iter().all(|&d| d == Some(4)));
    }

    #[test]
    fn zero_area_plane_is_empty() {
        let grid = VoxelGrid::new([8, 8, 8], [0.0; 3], [0.1; 3]).unwrap();
        let s = make_plane_scene(&grid, [[0.3, 0.3], [0.0, 0.8]], 0.45, 1.0).unwrap();
        assert_eq!(s.foreground_count(), 0);
    }

    #[test]
    fn plane_depth_snaps_to_nearest_plane() {
        let grid = VoxelGrid::new([4, 4, 8], [0.0; 3], [0.1; 3]).unwrap();
        // centers at 0.05 + 0.1 k; 0.37 is 3.2 planes in -> k = 3
        let s = make_plane_scene(&grid, [[0.0, 0.4], [0.0, 0.4]], 0.37, 2.0).unwrap();
        assert!(s.depth().iter().all(|&d| d == Some(3)));
        // 0.385 -> 3.35 -> 3; 0.41 -> 3.6 -> 4
        let s = make_plane_scene(&grid, [[0.0, 0.4], [0.0, 0.4]], 0.41, 2.0).unwrap();
        assert!(s.depth().iter().all(|&d| d == Some(4)));
    }

    #[test]
    fn plane_out_of_extent() {
        let grid = VoxelGrid::new([4, 4, 8], [0.0; 3], [0.1; 3]).unwrap();
        assert!(make_plane_scene(&grid, [[0.0, 0.4], [0.0, 0.4]], 0.9, 1.0).is_err());
        assert!(make_plane_scene(&grid, [[0.0, 0.5], [0.0, 0.4]], 0.3, 1.0).is_err());
    }
}
