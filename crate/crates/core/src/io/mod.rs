//! Binary volume, histogram and surface files, JSON configs and manifests,
//! CSV traces and PGM renders.

mod config;
mod formats;
mod render;

pub use config::{parse_json, GeometryConfig, GridSpec, ReconstructConfig, SceneConfig};
pub use formats::{
    read_histogram, read_surface, read_volume, write_histogram, write_surface, write_volume,
    HISTOGRAM_MAGIC, SURFACE_MAGIC, VOLUME_MAGIC,
};
pub use render::{project_surface, project_volume, surface_albedo_map, to_pgm16, View};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::LsCurves;
use crate::driver::{ParamRecord, TraceRow};
use crate::error::{Error, Result};
use crate::forward::render_scene_transient;
use crate::grid::VoxelGrid;
use crate::photon::{sample_histogram, NoiseModel};
use crate::signal::{MeasurementGeometry, PhotonHistogram, TransientSignal};
use crate::surface::SurfaceG;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to reproduce one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub method: String,
    pub rng_id: String,
    pub seed: u64,
    pub pulses: u64,
    pub grid: VoxelGrid,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// A simulated measurement with its ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: SurfaceG,
    pub tau: TransientSignal,
    pub hist: PhotonHistogram,
    /// The noise model after `peak_count` scaling.
    pub noise: NoiseModel,
}

/// Renders the scene, scales `eta` by `peak_count` if requested and samples
/// `pulses` per pair.
pub fn simulate(
    scene: &SceneConfig,
    geometry: &MeasurementGeometry,
    pulses: u64,
    seed: u64,
) -> Result<Simulation> {
    scene.validate()?;
    let grid = scene.grid.build()?;
    let truth = scene.object.to_surface(&grid)?;
    let tau = render_scene_transient(
        &scene.object,
        &grid,
        geometry,
        scene.supersample,
        scene.cosine_factor,
    )?;
    let mut noise = scene.noise;
    if let Some(peak) = scene.peak_count {
        let max = tau.as_slice().iter().copied().fold(0.0, f64::max);
        if max <= 0.0 || pulses == 0 {
            return Err(Error::Config(
                "peak_count needs a nonzero transient and pulses > 0".into(),
            ));
        }
        noise.eta = peak / (pulses as f64 * max);
    }
    let hist = sample_histogram(&tau, pulses, &noise, seed)?;
    Ok(Simulation {
        truth,
        tau,
        hist,
        noise,
    })
}

/// One row per outer iteration.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(
        "iteration,total,nll,signal_patch,volume_patch,signal_sparsity,data,l1,surface,block,\
         surface_prior,objective_before_u,misfit,data_misfit,foreground,u_l1,u_nonzeros\n",
    );
    for r in rows {
        let t = &r.terms;
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{}",
            r.iteration,
            t.total,
            t.nll,
            t.signal_patch,
            t.volume_patch,
            t.signal_sparsity,
            t.data,
            t.l1,
            t.surface,
            t.block,
            t.surface_prior,
            r.objective_before_u,
            r.misfit,
            r.data_misfit,
            r.foreground,
            r.u_l1,
            r.u_nonzeros
        );
    }
    s
}

/// Log-scale convergence curves of the least-squares baseline.
pub fn ls_curves_csv(c: &LsCurves) -> String {
    let mut s = String::from("iteration,ln_normal_residual,ln_misfit\n");
    for (i, r, m) in c.ln_rows() {
        let _ = writeln!(s, "{i},{r:e},{m:e}");
    }
    s
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Reads and parses a JSON file.
pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    parse_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneShape;

    fn scene(peak: Option<f64>) -> SceneConfig {
        SceneConfig {
            grid: GridSpec {
                dims: [8, 8, 8],
                origin: [-0.5, -0.5, 0.4],
                voxel_size: None,
                extent: Some([1.0, 1.0, 0.4]),
            },
            object: SceneShape::Plane {
                x: [-0.25, 0.25],
                y: [-0.25, 0.25],
                depth: 0.6,
                albedo: 1.0,
            },
            supersample: 1,
            cosine_factor: false,
            noise: NoiseModel::default(),
            peak_count: peak,
        }
    }

    #[test]
    fn simulation_is_seeded_and_scaled() {
        let geo = MeasurementGeometry::confocal_raster(2, 2, 0.3, [0.0, 0.0], 32e-12, 256).unwrap();
        let a = simulate(&scene(Some(20.0)), &geo, 1000, 3).unwrap();
        let b = simulate(&scene(Some(20.0)), &geo, 1000, 3).unwrap();
        assert_eq!(a.hist.counts, b.hist.counts);
        let max = a.tau.as_slice().iter().copied().fold(0.0, f64::max);
        assert!((a.noise.eta * max * 1000.0 - 20.0).abs() < 1e-9);
        assert!(a.hist.total_counts() > 0);
    }

    #[test]
    fn csv_headers_match_row_width() {
        let c = LsCurves {
            normal_residual: vec![1.0, 0.5],
            misfit: vec![1.0, 0.9],
        };
        let s = ls_curves_csv(&c);
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0e0,0e0"));
        let header = trace_csv(&[]);
        assert_eq!(header.trim_end().split(',').count(), 17);
    }
}
