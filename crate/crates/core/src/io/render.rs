//! Three-view projections written as 16-bit binary PGM.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::grid::AlbedoVolume;
use crate::surface::SurfaceG;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Along depth: rows `j`, columns `i`.
    Front,
    /// Along `y`: rows `k`, columns `i`.
    Top,
    /// Along `x`: rows `j`, columns `k`.
    Side,
}

impl std::str::FromStr for View {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "front" => Ok(View::Front),
            "top" => Ok(View::Top),
            "side" => Ok(View::Side),
            _ => Err(format!("unknown view {s:?}; expected front, top or side")),
        }
    }
}

/// Maximum-intensity projection of a volume.
pub fn project_volume(v: &AlbedoVolume, view: View) -> Array2<f64> {
    let (ni, nj, nk) = v.values.dim();
    let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    match view {
        View::Front => Array2::from_shape_fn((nj, ni), |(j, i)| {
            max_of(&mut (0..nk).map(|k| v.values[(i, j, k)]))
        }),
        View::Top => Array2::from_shape_fn((nk, ni), |(k, i)| {
            max_of(&mut (0..nj).map(|j| v.values[(i, j, k)]))
        }),
        View::Side => Array2::from_shape_fn((nj, nk), |(j, k)| {
            max_of(&mut (0..ni).map(|i| v.values[(i, j, k)]))
        }),
    }
}

/// Front view of a surface as a depth map (nearer is brighter, background
/// 0); the other views project its embedded volume.
pub fn project_surface(s: &SurfaceG, view: View) -> Array2<f64> {
    match view {
        View::Front => {
            let k = s.grid.dims[2] as f64;
            let (ni, nj) = s.pixels.dim();
            Array2::from_shape_fn((nj, ni), |(j, i)| {
                s.pixels[(i, j)].map_or(0.0, |p| k - p.depth as f64)
            })
        }
        _ => project_volume(&s.to_volume(), view),
    }
}

/// Albedo map of a surface, rows `j`, columns `i`.
pub fn surface_albedo_map(s: &SurfaceG) -> Array2<f64> {
    let (ni, nj) = s.pixels.dim();
    Array2::from_shape_fn((nj, ni), |(j, i)| s.pixels[(i, j)].map_or(0.0, |p| p.albedo))
}

/// Scales `[0, max]` linearly onto `[0, 65535]`; negatives map to 0.
pub fn to_pgm16(img: &Array2<f64>) -> Vec<u8> {
    let (h, w) = img.dim();
    let max = img.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in img.iter() {
        let level = if max > 0.0 && v.is_finite() {
            (v.max(0.0) / max * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;

    #[test]
    fn projections_and_pgm_layout() {
        let grid = VoxelGrid::from_extent([3, 2, 4], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let mut v = AlbedoVolume::zeros(&grid);
        v.values[(2, 1, 3)] = 2.0;
        v.values[(0, 0, 1)] = 1.0;
        let f = project_volume(&v, View::Front);
        assert_eq!(f.dim(), (2, 3));
        assert_eq!((f[(1, 2)], f[(0, 0)]), (2.0, 1.0));
        assert_eq!(project_volume(&v, View::Top).dim(), (4, 3));
        assert_eq!(project_volume(&v, View::Side)[(1, 3)], 2.0);
        let bytes = to_pgm16(&f);
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 12);
        // row 1, column 2 holds the maximum
        assert_eq!(&px[10..12], &[0xff, 0xff]);
        assert_eq!(&px[0..2], &32768u16.to_be_bytes());
    }
}
