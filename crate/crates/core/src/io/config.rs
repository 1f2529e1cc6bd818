//! JSON documents for scenes, measurement geometries and reconstruction
//! runs. Unknown fields are rejected.

use serde::{Deserialize, Serialize};

use crate::driver::SscrConfig;
use crate::error::{Error, Result};
use crate::grid::{Vec3, VoxelGrid};
use crate::photon::NoiseModel;
use crate::scene::SceneShape;
use crate::signal::{MeasurementGeometry, MeasurementPair};

/// Grid by voxel size or by total extent; exactly one must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Vec3>,
}

impl GridSpec {
    pub fn build(&self) -> Result<VoxelGrid> {
        match (self.voxel_size, self.extent) {
            (Some(vs), None) => VoxelGrid::new(self.dims, self.origin, vs),
            (None, Some(ext)) => VoxelGrid::from_extent(self.dims, self.origin, ext),
            _ => Err(Error::Config(
                "grid: give exactly one of `voxel_size` and `extent`".into(),
            )),
        }
    }
}

fn default_supersample() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub grid: GridSpec,
    pub object: SceneShape,
    /// Sub-pixel samples per axis when rendering the transient.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    #[serde(default)]
    pub cosine_factor: bool,
    #[serde(default)]
    pub noise: NoiseModel,
    /// When set, `noise.eta` is replaced so the brightest bin expects this
    /// many events.
    #[serde(default)]
    pub peak_count: Option<f64>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.object.validate(&grid)?;
        if self.supersample == 0 {
            return Err(Error::Config("supersample must be >= 1".into()));
        }
        if let Some(p) = self.peak_count {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config(format!("peak_count must be positive, got {p}")));
            }
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    ConfocalRaster {
        nx: usize,
        ny: usize,
        spacing: f64,
        #[serde(default)]
        center: [f64; 2],
        bin_width: f64,
        num_bins: usize,
        #[serde(default)]
        time_origin: f64,
    },
    Pairs {
        pairs: Vec<MeasurementPair>,
        bin_width: f64,
        num_bins: usize,
        #[serde(default)]
        time_origin: f64,
    },
}

impl GeometryConfig {
    pub fn build(&self) -> Result<MeasurementGeometry> {
        let (mut g, t0) = match self {
            GeometryConfig::ConfocalRaster {
                nx,
                ny,
                spacing,
                center,
                bin_width,
                num_bins,
                time_origin,
            } => (
                MeasurementGeometry::confocal_raster(*nx, *ny, *spacing, *center, *bin_width, *num_bins)?,
                *time_origin,
            ),
            GeometryConfig::Pairs {
                pairs,
                bin_width,
                num_bins,
                time_origin,
            } => (
                MeasurementGeometry::new(pairs.clone(), *bin_width, *num_bins)?,
                *time_origin,
            ),
        };
        g.time_origin = t0;
        g.validate()?;
        Ok(g)
    }
}

fn default_sigma() -> f64 {
    1.0
}

fn default_ls_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub sscr: SscrConfig,
    /// Gaussian width of LoG-BP, in voxels.
    #[serde(default = "default_sigma")]
    pub log_sigma: f64,
    #[serde(default = "default_ls_iters")]
    pub ls_iters: usize,
    /// For the voxel baselines: zero entries below this fraction of the
    /// maximum before surfaciation.
    #[serde(default)]
    pub surface_threshold: Option<f64>,
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        self.sscr.validate()?;
        if !(self.log_sigma.is_finite() && self.log_sigma > 0.0) {
            return Err(Error::Config(format!("log_sigma must be positive, got {}", self.log_sigma)));
        }
        if self.ls_iters == 0 {
            return Err(Error::Config("ls_iters must be >= 1".into()));
        }
        if let Some(t) = self.surface_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("surface_threshold must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSON document.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_and_geometry_parse() {
        let scene: SceneConfig = parse_json(
            r#"{"grid": {"dims": [32, 32, 16], "origin": [-1, -1, 0.4], "extent": [2, 2, 0.4]},
                "object": {"kind": "pyramid", "base": 1.0, "height": 0.2, "standoff": 0.5},
                "peak_count": 50}"#,
        )
        .unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.supersample, 3);
        let geo: GeometryConfig = parse_json(
            r#"{"kind": "confocal_raster", "nx": 3, "ny": 3, "spacing": 0.5,
                "bin_width": 32e-12, "num_bins": 512}"#,
        )
        .unwrap();
        assert_eq!(geo.build().unwrap().num_pairs(), 9);
    }

    #[test]
    fn unknown_fields_and_bad_grids_fail() {
        assert!(parse_json::<GeometryConfig>(r#"{"kind": "confocal_raster", "nx": 3}"#).is_err());
        let g = GridSpec {
            dims: [2, 2, 2],
            origin: [0.0; 3],
            voxel_size: Some([1.0; 3]),
            extent: Some([2.0; 3]),
        };
        assert!(matches!(g.build(), Err(Error::Config(_))));
        let r = parse_json::<ReconstructConfig>(
            r#"{"grid": {"dims": [4, 4, 4], "origin": [0, 0, 0], "voxel_size": [1, 1, 1]}, "methd": 1}"#,
        );
        assert!(r.is_err());
    }
}
