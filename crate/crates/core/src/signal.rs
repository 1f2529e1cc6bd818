//! Measurement geometry, transient signals and photon event histograms.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Vec3;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    pub illum: Vec3,
    pub detect: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementGeometry {
    pub pairs: Vec<MeasurementPair>,
    /// Seconds.
    pub bin_width: f64,
    pub num_bins: usize,
    /// Seconds of flight corresponding to the center of bin 0.
    #[serde(default)]
    pub time_origin: f64,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

impl MeasurementGeometry {
    pub fn new(pairs: Vec<MeasurementPair>, bin_width: f64, num_bins: usize) -> Result<Self> {
        let g = MeasurementGeometry {
            pairs,
            bin_width,
            num_bins,
            time_origin: 0.0,
            c: SPEED_OF_LIGHT,
        };
        g.validate()?;
        Ok(g)
    }

    /// `nx * ny` confocal points on the wall plane `z = 0`, centered at
    /// `(cx, cy)`, spanning `spacing * (n - 1)` along each axis. Pair index is
    /// `ix * ny + iy`.
    pub fn confocal_raster(
        nx: usize,
        ny: usize,
        spacing: f64,
        center: [f64; 2],
        bin_width: f64,
        num_bins: usize,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                let x = center[0] + (ix as f64 - (nx as f64 - 1.0) / 2.0) * spacing;
                let y = center[1] + (iy as f64 - (ny as f64 - 1.0) / 2.0) * spacing;
                let p = [x, y, 0.0];
                pairs.push(MeasurementPair {
                    illum: p,
                    detect: p,
                });
            }
        }
        Self::new(pairs, bin_width, num_bins)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Geometry("at least one measurement pair is required".into()));
        }
        if self.num_bins == 0 {
            return Err(Error::Geometry("num_bins must be >= 1".into()));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(Error::Geometry(format!(
                "bin_width must be positive, got {}",
                self.bin_width
            )));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Geometry(format!("speed of light must be positive, got {}", self.c)));
        }
        if !self.time_origin.is_finite() {
            return Err(Error::Geometry("time_origin must be finite".into()));
        }
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if self.pairs.iter().any(|p| !finite(&p.illum) || !finite(&p.detect)) {
            return Err(Error::Geometry("measurement points must be finite".into()));
        }
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_confocal(&self) -> bool {
        self.pairs.iter().all(|p| p.illum == p.detect)
    }

    /// Time bin of an optical path length, or `None` when out of range.
    pub fn bin_of(&self, path_length: f64) -> Option<usize> {
        let q = ((path_length / self.c - self.time_origin) / self.bin_width).round();
        if q >= 0.0 && q < self.num_bins as f64 {
            Some(q as usize)
        } else {
            None
        }
    }

    /// Arrangement of the pairs as an `nx x ny` raster for signal patches.
    ///
    /// The detection points are read as a raster when they take exactly `nx`
    /// distinct x values and `ny` distinct y values with `nx * ny = P`, listed
    /// x-major. Anything else is treated as a `P x 1` line.
    pub fn scan_shape(&self) -> (usize, usize) {
        let p = self.pairs.len();
        let mut xs: Vec<f64> = self.pairs.iter().map(|m| m.detect[0]).collect();
        let mut ys: Vec<f64> = self.pairs.iter().map(|m| m.detect[1]).collect();
        let distinct = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        let (nx, ny) = (distinct(&mut xs), distinct(&mut ys));
        if nx * ny != p {
            return (p, 1);
        }
        let ordered = self.pairs.iter().enumerate().all(|(idx, m)| {
            let (ix, iy) = (idx / ny, idx % ny);
            m.detect[0] == xs[ix] && m.detect[1] == ys[iy]
        });
        if ordered {
            (nx, ny)
        } else {
            (p, 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientSignal {
    pub geometry: MeasurementGeometry,
    /// `P x Q`.
    pub values: Array2<f64>,
}

impl TransientSignal {
    pub fn zeros(geometry: &MeasurementGeometry) -> Self {
        TransientSignal {
            geometry: geometry.clone(),
            values: Array2::zeros((geometry.num_pairs(), geometry.num_bins)),
        }
    }

    pub fn from_vec(geometry: &MeasurementGeometry, data: Vec<f64>) -> Result<Self> {
        let shape = (geometry.num_pairs(), geometry.num_bins);
        if data.len() != shape.0 * shape.1 {
            return Err(Error::mismatch(shape.0 * shape.1, data.len()));
        }
        Ok(TransientSignal {
            geometry: geometry.clone(),
            values: Array2::from_shape_vec(shape, data)
                .map_err(|e| Error::Validation(e.to_string()))?,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("signals are kept in standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.values
            .as_slice_mut()
            .expect("signals are kept in standard layout")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonHistogram {
    pub geometry: MeasurementGeometry,
    /// `P x Q` event counts.
    pub counts: Array2<u32>,
    /// Pulses per measurement pair.
    pub pulses: u64,
    pub rng_id: String,
    pub seed: u64,
}

impl PhotonHistogram {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.pulses == 0 {
            return Err(Error::Validation("pulse count N must be positive".into()));
        }
        let shape = (self.geometry.num_pairs(), self.geometry.num_bins);
        if self.counts.dim() != shape {
            return Err(Error::mismatch(format!("{shape:?}"), format!("{:?}", self.counts.dim())));
        }
        if let Some(((p, q), c)) = self
            .counts
            .indexed_iter()
            .find(|(_, &c)| u64::from(c) > self.pulses)
        {
            return Err(Error::Validation(format!(
                "count {c} at (p={p}, q={q}) exceeds pulse count {}",
                self.pulses
            )));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_of_confocal_half_metre() {
        let g = MeasurementGeometry::confocal_raster(1, 1, 0.0, [0.0, 0.0], 32e-12, 512).unwrap();
        // 1.0 / (c * 32e-12) = 104.24
        assert_eq!(g.bin_of(1.0), Some(104));
        assert_eq!(g.bin_of(0.0), Some(0));
        let beyond = 512.0 * 32e-12 * SPEED_OF_LIGHT;
        assert_eq!(g.bin_of(beyond), None);
    }

    #[test]
    fn raster_shape_detected() {
        let g = MeasurementGeometry::confocal_raster(3, 2, 0.5, [0.0, 0.0], 32e-12, 16).unwrap();
        assert_eq!(g.scan_shape(), (3, 2));
        assert!(g.is_confocal());
        let mut shuffled = g.clone();
        shuffled.pairs.swap(0, 5);
        assert_eq!(shuffled.scan_shape(), (6, 1));
    }

    #[test]
    fn geometry_validation() {
        assert!(MeasurementGeometry::new(vec![], 1e-12, 4).is_err());
        let p = MeasurementPair {
            illum: [0.0; 3],
            detect: [0.0; 3],
        };
        assert!(MeasurementGeometry::new(vec![p], 0.0, 4).is_err());
        assert!(MeasurementGeometry::new(vec![p], 1e-12, 0).is_err());
    }
}
