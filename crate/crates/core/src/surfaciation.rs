//! Projection of an albedo volume onto the surface set: a depth solve, an
//! albedo solve and an indicator solve, each a graph least-squares problem
//! over the pixel lattice.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{round_half_down, AlbedoVolume};
use crate::solvers::{graph_ls_solve, GraphLs};
use crate::surface::{SurfaceG, SurfacePixel};

/// Relative residual for the three lattice solves.
pub const LATTICE_TOL: f64 = 1e-12;

/// Strictly positive entries of every pixel column.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelColumnSummary {
    pub shape: (usize, usize),
    /// `(depth index, albedo)` pairs, pixel-major `i * J + j`.
    pub entries: Vec<Vec<(usize, f64)>>,
}

impl PixelColumnSummary {
    pub fn from_volume(u: &AlbedoVolume) -> Self {
        let [ni, nj, nk] = u.grid.dims;
        let v = u.as_slice();
        let entries = (0..ni * nj)
            .map(|p| {
                (0..nk)
                    .filter_map(|k| {
                        let a = v[p * nk + k];
                        (a > 0.0).then_some((k, a))
                    })
                    .collect()
            })
            .collect();
        PixelColumnSummary {
            shape: (ni, nj),
            entries,
        }
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.shape.1 + j].len()
    }

    pub fn is_foreground(&self, p: usize) -> bool {
        !self.entries[p].is_empty()
    }
}

/// Unit weights between 8-neighbors of the pixel lattice, one directed edge
/// per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaciationWeights {
    pub shape: (usize, usize),
    pub edges: Vec<(usize, usize, f64)>,
}

impl SurfaciationWeights {
    pub fn eight_neighbor(ni: usize, nj: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..ni {
            for j in 0..nj {
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) != (0, 0) && a >= 0 && b >= 0 && a < ni as i64 && b < nj as i64 {
                            edges.push((i * nj + j, a as usize * nj + b as usize, 1.0));
                        }
                    }
                }
            }
        }
        SurfaciationWeights {
            shape: (ni, nj),
            edges,
        }
    }
}

fn solve_lattice(
    weights: &SurfaciationWeights,
    data_weight: Vec<f64>,
    data: Vec<f64>,
) -> Result<Array2<f64>> {
    let n = data.len();
    let problem = GraphLs {
        data_weight,
        data,
        edges: weights.edges.clone(),
    };
    let sol = graph_ls_solve(&problem, LATTICE_TOL, 20 * n + 200)?;
    Ok(Array2::from_shape_vec(weights.shape, sol.u).expect("lattice shape"))
}

fn check_shapes(summary: &PixelColumnSummary, weights: &SurfaciationWeights) -> Result<()> {
    if summary.shape != weights.shape {
        return Err(Error::mismatch(
            format!("{:?}", summary.shape),
            format!("{:?}", weights.shape),
        ));
    }
    Ok(())
}

/// Step 1: data weight 2 and data value `sum r_n k_n` with `r_n` the
/// normalized squared albedos; background pixels carry no data.
pub fn depth_data(summary: &PixelColumnSummary) -> (Vec<f64>, Vec<f64>) {
    summary
        .entries
        .iter()
        .map(|col| {
            if col.is_empty() {
                return (0.0, 0.0);
            }
            let total: f64 = col.iter().map(|(_, a)| a * a).sum();
            let v: f64 = col.iter().map(|(k, a)| a * a / total * *k as f64).sum();
            (2.0, v)
        })
        .unzip()
}

pub fn solve_depth(summary: &PixelColumnSummary, weights: &SurfaciationWeights) -> Result<Array2<f64>> {
    check_shapes(summary, weights)?;
    let (w, d) = depth_data(summary);
    solve_lattice(weights, w, d)
}

/// Interpolated albedo `sum r'_n u_n / sum r'_n` with
/// `r'_n = min((d - k_n)^-2, 2)`.
pub fn interpolated_albedo(col: &[(usize, f64)], depth: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(k, a) in col {
        let dist = depth - k as f64;
        let r = if dist == 0.0 { 2.0 } else { (1.0 / (dist * dist)).min(2.0) };
        num += r * a;
        den += r;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Step 2: data weight 1 on foreground pixels.
pub fn albedo_data(summary: &PixelColumnSummary, depth: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = depth.as_slice().expect("standard layout");
    summary
        .entries
        .iter()
        .zip(d)
        .map(|(col, &dp)| {
            if col.is_empty() {
                (0.0, 0.0)
            } else {
                (1.0, interpolated_albedo(col, dp))
            }
        })
        .unzip()
}

pub fn solve_albedo(
    summary: &PixelColumnSummary,
    depth: &Array2<f64>,
    weights: &SurfaciationWeights,
) -> Result<Array2<f64>> {
    check_shapes(summary, weights)?;
    let (w, d) = albedo_data(summary, depth);
    solve_lattice(weights, w, d)
}

/// Step 3 data: `gamma = alpha / (2 alpha_max)` on foreground, reset to 0.75
/// on background and weak pixels; target is the interpolated albedo over its
/// maximum on foreground and 0 on background.
pub fn indicator_data(
    summary: &PixelColumnSummary,
    depth: &Array2<f64>,
    albedo: &Array2<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let d = depth.as_slice().expect("standard layout");
    let a = albedo.as_slice().expect("standard layout");
    let interp: Vec<f64> = summary
        .entries
        .iter()
        .zip(d)
        .map(|(col, &dp)| interpolated_albedo(col, dp))
        .collect();
    let inter_max = interp.iter().copied().fold(0.0, f64::max);
    let alpha_max = (0..a.len())
        .filter(|&p| summary.is_foreground(p))
        .map(|p| a[p])
        .fold(0.0, f64::max);
    (0..a.len())
        .map(|p| {
            if !summary.is_foreground(p) {
                return (0.75, 0.0);
            }
            let target = if inter_max > 0.0 { interp[p] / inter_max } else { 0.0 };
            let mut gamma = if alpha_max > 0.0 { a[p] / (2.0 * alpha_max) } else { 0.0 };
            if interp[p] < 0.1 * inter_max || !(gamma > 0.0 && gamma.is_finite()) {
                gamma = 0.75;
            }
            (gamma, target)
        })
        .unzip()
}

pub fn solve_indicator(
    summary: &PixelColumnSummary,
    depth: &Array2<f64>,
    albedo: &Array2<f64>,
    weights: &SurfaciationWeights,
) -> Result<Array2<f64>> {
    check_shapes(summary, weights)?;
    let (w, d) = indicator_data(summary, depth, albedo);
    solve_lattice(weights, w, d)
}

/// Intermediate fields of one surfaciation, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaciationFields {
    pub depth: Array2<f64>,
    pub albedo: Array2<f64>,
    pub indicator: Array2<f64>,
}

/// Depth, then albedo, then indicator; `None` when the volume has no
/// positive entry at all.
pub fn surfaciation_fields(u: &AlbedoVolume) -> Result<Option<SurfaciationFields>> {
    let summary = PixelColumnSummary::from_volume(u);
    let (ni, nj) = summary.shape;
    let weights = SurfaciationWeights::eight_neighbor(ni, nj);
    let depth = match solve_depth(&summary, &weights) {
        Ok(d) => d,
        Err(Error::SingularSystem { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let albedo = solve_albedo(&summary, &depth, &weights)?;
    let indicator = solve_indicator(&summary, &depth, &albedo, &weights)?;
    Ok(Some(SurfaciationFields {
        depth,
        albedo,
        indicator,
    }))
}

/// The surfaciation map: thresholds the indicator at 0.5, snaps depth to
/// the nearest index (ties toward the wall) and drops pixels whose solved
/// albedo is not positive.
pub fn surfaciate(u: &AlbedoVolume) -> Result<SurfaceG> {
    let mut g = SurfaceG::empty(&u.grid);
    let Some(f) = surfaciation_fields(u)? else {
        return Ok(g);
    };
    let kmax = u.grid.dims[2] - 1;
    for ((i, j), px) in g.pixels.indexed_iter_mut() {
        let (e, d, a) = (f.indicator[(i, j)], f.depth[(i, j)], f.albedo[(i, j)]);
        if e >= 0.5 && a > 0.0 && a.is_finite() && d.is_finite() {
            let k = round_half_down(d).clamp(0.0, kmax as f64) as usize;
            *px = Some(SurfacePixel { depth: k, albedo: a });
        }
    }
    Ok(g)
}
